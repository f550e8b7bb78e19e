import init, { solve_reference, subdifferential, check_corrupted } from "./pkg/nsmp_web.js";

const COLORS = ["#1565c0", "#c62828", "#2e7d32", "#6a1b9a", "#ef6c00"];
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function fail(err) {
  $("error").textContent = String(err);
}

function plot(canvasId, legendId, xs, series) {
  const c = $(canvasId);
  const g = c.getContext("2d");
  const pad = 36;
  g.clearRect(0, 0, c.width, c.height);
  const all = series.flatMap((s) => s.ys).filter(Number.isFinite);
  let lo = Math.min(...all), hi = Math.max(...all);
  if (hi - lo < 1e-12) { lo -= 1; hi += 1; }
  const x0 = xs[0], x1 = xs[xs.length - 1];
  const px = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (c.width - 2 * pad);
  const py = (y) => c.height - pad / 2 - ((y - lo) / (hi - lo)) * (c.height - pad);
  g.strokeStyle = "#999";
  g.beginPath();
  g.moveTo(pad, py(0)); g.lineTo(c.width - pad, py(0));
  g.stroke();
  g.fillStyle = "#555";
  g.font = "11px monospace";
  g.fillText(hi.toPrecision(3), 2, py(hi) + 10);
  g.fillText(lo.toPrecision(3), 2, py(lo));
  series.forEach((s, k) => {
    g.strokeStyle = g.fillStyle = COLORS[k % COLORS.length];
    if (s.bars) {
      s.ys.forEach((y, i) => { if (y !== 0) g.fillRect(px(xs[i]) - 2, py(y), 4, py(0) - py(y)); });
      return;
    }
    g.setLineDash(s.dashed ? [5, 4] : []);
    g.beginPath();
    s.ys.forEach((y, i) => (i ? g.lineTo(px(xs[i]), py(y)) : g.moveTo(px(xs[i]), py(y))));
    g.stroke();
  });
  g.setLineDash([]);
  if (legendId) {
    $(legendId).innerHTML = series
      .map((s, k) => `<span style="color:${COLORS[k % COLORS.length]}">&#9632; ${s.label}</span>`)
      .join("");
  }
}

function conditionTable(tableId, conditions) {
  $(tableId).innerHTML =
    "<tr><th>condition</th><th>verdict</th><th>max residual</th><th></th><th>tolerance</th></tr>" +
    conditions
      .map((c) => `<tr><td>${c.name}</td><td class="${c.verdict}">${c.verdict}</td>` +
        `<td>${(c.max_residual ?? Infinity).toExponential(3)}</td><td>${c.comparison}</td><td>${c.tolerance.toExponential(1)}</td></tr>`)
      .join("");
}

function solve() {
  const r = JSON.parse(solve_reference($("solve-ref").value, num("solve-n"), num("solve-pmax")));
  const last = r.path[r.path.length - 1];
  $("solve-summary").textContent =
    `${r.problem}: cost ${r.objective.toFixed(6)} (analytic ${r.optimal_cost.toFixed(6)}), ` +
    `penalty ${last.penalty}, max h+ ${last.max_violation.toExponential(2)}, ` +
    `endpoint atom ${r.endpoint_atom.toFixed(4)} for lambda0 ${r.lambda0.toFixed(4)}, verdict ${r.verdict}` +
    (r.truncated ? ` (stopped: ${r.truncated})` : "");
  plot("solve-traj", "solve-traj-legend", r.grid, [
    { label: "state", ys: r.state },
    { label: "analytic state", ys: r.analytic_state, dashed: true },
    { label: "control", ys: r.control.concat([r.control[r.control.length - 1]]) },
  ]);
  plot("solve-mult", "solve-mult-legend", r.grid, [
    { label: "costate p", ys: r.costate },
    { label: "q (left limits)", ys: r.q },
    { label: "measure weights", ys: r.weights, bars: true },
  ]);
  conditionTable("solve-table", r.conditions);
}

function sample() {
  const r = JSON.parse(subdifferential($("sd-fn").value, num("sd-x"), num("sd-r"), num("sd-k"), num("sd-seed"), num("sd-target")));
  $("sd-summary").textContent =
    `${r.generators.length} generators, hull [${r.hull[0].toFixed(6)}, ${r.hull[1].toFixed(6)}], ` +
    `distance from ${r.target} = ${r.distance.toExponential(3)}`;
  const c = $("sd-plot");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const lo = Math.min(-1.5, r.hull[0], r.target), hi = Math.max(1.5, r.hull[1], r.target);
  const px = (v) => 20 + ((v - lo) / (hi - lo)) * (c.width - 40);
  g.fillStyle = "rgba(21,101,192,0.15)";
  g.fillRect(px(r.hull[0]), 30, Math.max(2, px(r.hull[1]) - px(r.hull[0])), 50);
  g.strokeStyle = "#1565c0";
  r.generators.forEach((v) => { g.beginPath(); g.moveTo(px(v), 35); g.lineTo(px(v), 75); g.stroke(); });
  g.fillStyle = "#c62828";
  g.beginPath(); g.arc(px(r.target), 55, 5, 0, 2 * Math.PI); g.fill();
  g.fillStyle = "#555";
  g.font = "11px monospace";
  for (let t = Math.ceil(lo); t <= hi; t++) g.fillText(String(t), px(t) - 3, 100);
}

function check() {
  const r = JSON.parse(check_corrupted($("ck-ref").value, num("ck-n"), $("ck-kind").value));
  $("ck-summary").textContent =
    `${r.problem} with corruption "${r.corruption}": verdict ${r.verdict}` +
    (r.failed.length ? `, failed: ${r.failed.join(", ")}` : "");
  const adjoint = r.residuals.find((c) => c.name === "adjoint").residuals;
  plot("ck-plot", "ck-legend", r.grid, [
    { label: "costate p", ys: r.costate },
    { label: "adjoint residual per step", ys: adjoint.concat([adjoint[adjoint.length - 1] ?? 0]) },
  ]);
  conditionTable("ck-table", r.conditions);
}

const guard = (f) => () => { $("error").textContent = ""; try { f(); } catch (e) { fail(e); } };

init().then(() => {
  $("solve-go").onclick = guard(solve);
  $("sd-go").onclick = guard(sample);
  $("ck-go").onclick = guard(check);
  guard(solve)();
  guard(sample)();
  guard(check)();
}, fail);
