//! Sampling audits of the standing hypotheses along a process.
//!
//! Every audit visits a spread of nodes, samples the tube
//! `{(x, u) : |x − x̄(t)| ≤ ε, u ∈ S(t, x)}` deterministically from the seed
//! and reports estimated constants with the worst witness found.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::sampler::{project_control, ControlRegion, REACH};
use super::{AuditRecord, Verdict, Witness};
use crate::error::{Error, Result};
use crate::nonsmooth::{ball_sample, derive_seed};
use crate::problem::{norm, sub, OCProblem, Process};

pub const CONVEXITY: &str = "C";
pub const H1: &str = "H1";
pub const H2: &str = "H2";
pub const L_EPS: &str = "L_eps";
pub const BS_EPS: &str = "BS_eps";
pub const CS_EPS: &str = "CS_eps";

const ACTIVE: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct AuditOptions {
    pub seed: u64,
    /// Random draws per node (controls, tube states, pairs).
    pub samples: usize,
    /// Number of nodes visited, spread evenly over the steps.
    pub nodes: usize,
    /// Largest acceptable gap between a midpoint velocity and the velocity set.
    pub convexity_tol: f64,
    /// Estimated Lipschitz and semicontinuity constants above this fail.
    pub constant_cap: f64,
    /// Controls per node in the dense velocity-set grid.
    pub grid_points: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            seed: 0,
            samples: 16,
            nodes: 12,
            convexity_tol: 1e-3,
            constant_cap: 1e6,
            grid_points: 2000,
        }
    }
}

impl AuditOptions {
    pub fn with_seed(seed: u64) -> Self {
        AuditOptions {
            seed,
            ..AuditOptions::default()
        }
    }
}

/// All six audits, in the order [C], [H1], [H2], [L*ε], [BS*ε], [CS*ε].
pub fn audit_hypotheses(problem: &OCProblem, process: &Process, opts: &AuditOptions) -> Result<Vec<AuditRecord>> {
    process.check_shape(problem)?;
    let nodes = audit_nodes(process.n_steps(), opts.nodes);
    let ctx = Ctx {
        problem,
        process,
        opts,
        nodes: &nodes,
    };
    Ok(vec![
        ctx.convexity()?,
        ctx.state_lipschitz()?,
        ctx.semicontinuity()?,
        ctx.lipschitz()?,
        ctx.bounded_slope()?,
        ctx.compactness()?,
    ])
}

fn audit_nodes(n_steps: usize, count: usize) -> Vec<usize> {
    if count >= n_steps || n_steps <= 1 {
        return (0..n_steps).collect();
    }
    let count = count.max(2);
    let mut out: Vec<usize> = (0..count)
        .map(|i| ((i * (n_steps - 1)) as f64 / (count - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

/// Running maximum with its witness.
#[derive(Debug, Clone)]
struct Worst {
    value: f64,
    witness: Option<Witness>,
}

impl Worst {
    fn new() -> Self {
        Worst {
            value: 0.0,
            witness: None,
        }
    }

    fn offer(&mut self, value: f64, t: f64, x: &[f64], u: &[f64]) {
        let better = self.witness.is_none() || value > self.value || (value.is_nan() && !self.value.is_nan());
        if better {
            self.value = value;
            self.witness = Some(Witness {
                t,
                x: x.to_vec(),
                u: u.to_vec(),
            });
        }
    }

    fn merge(mut self, other: Worst) -> Self {
        if let Some(w) = other.witness {
            self.offer(other.value, w.t, &w.x, &w.u);
        }
        self
    }
}

fn record(name: &str, constants: BTreeMap<String, f64>, witness: Option<Witness>, ok: bool, notes: Vec<String>) -> AuditRecord {
    AuditRecord {
        name: name.into(),
        constants,
        witness,
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        notes,
    }
}

struct Ctx<'a> {
    problem: &'a OCProblem,
    process: &'a Process,
    opts: &'a AuditOptions,
    nodes: &'a [usize],
}

/// Per-node outcome: a result, or a starvation note.
type NodeOutcome<T> = std::result::Result<T, String>;

impl Ctx<'_> {
    fn at(&self, m: usize) -> (f64, &[f64], &[f64]) {
        (self.process.grid[m], &self.process.states[m], &self.process.controls[m])
    }

    fn seed(&self, stream: u64, m: usize) -> u64 {
        derive_seed(self.opts.seed, stream, m as u64)
    }

    fn region(&self, t: f64, x: &[f64], u: &[f64]) -> Result<NodeOutcome<ControlRegion>> {
        match ControlRegion::new(self.problem, t, x, u) {
            Ok(r) => Ok(Ok(r)),
            Err(Error::SamplerStarved { t }) => Ok(Err(format!("sampler starved at t = {t}"))),
            Err(e) => Err(e),
        }
    }

    /// Center, feasible corners and random draws of `S(t, x)`.
    fn controls(&self, region: &ControlRegion, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![region.center.clone()];
        out.extend(region.vertices(self.problem)?);
        out.extend(region.draw(self.problem, count, seed)?);
        Ok(out)
    }

    /// `x̄ + ε·b` for `count` draws `b` of the unit ball.
    fn tube_states(&self, x: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = self.problem.tube_radius;
        (0..count)
            .map(|_| {
                let b = ball_sample(&mut rng, x.len());
                x.iter().zip(&b).map(|(xi, bi)| xi + eps * bi).collect()
            })
            .collect()
    }

    fn per_node<T, F>(&self, f: F) -> Result<Vec<NodeOutcome<T>>>
    where
        T: Send,
        F: Fn(usize) -> Result<NodeOutcome<T>> + Sync,
    {
        self.nodes.par_iter().map(|&m| f(m)).collect()
    }

    /// [C]: midpoints of sampled velocity pairs against a dense grid of the
    /// velocity set, refined by compass search.
    fn convexity(&self) -> Result<AuditRecord> {
        let problem = self.problem;
        let outcomes = self.per_node(|m| {
            let (t, x, u) = self.at(m);
            let region = match self.region(t, x, u)? {
                Ok(r) => r,
                Err(note) => return Ok(Err(note)),
            };
            let draws = region.draw(problem, 2 * self.opts.samples, self.seed(20, m))?;
            let mut anchors = vec![region.center.clone()];
            anchors.extend(region.vertices(problem)?);
            anchors.extend(draws.iter().take(4).cloned());
            let mut pairs: Vec<(&[f64], &[f64])> = Vec::new();
            for i in 0..anchors.len() {
                for j in i + 1..anchors.len() {
                    pairs.push((anchors[i].as_slice(), anchors[j].as_slice()));
                }
            }
            for c in draws.chunks_exact(2) {
                pairs.push((c[0].as_slice(), c[1].as_slice()));
            }
            let velocities = VelocityGrid::new(problem, &region, self.opts.grid_points)?;
            let mut worst = Worst::new();
            for (u1, u2) in pairs {
                let f1 = problem.dynamics_at(t, x, u1)?;
                let f2 = problem.dynamics_at(t, x, u2)?;
                let target: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| 0.5 * (a + b)).collect();
                let gap = velocities.gap(problem, &region, &target)?;
                worst.offer(gap, t, x, &[u1, u2].concat());
            }
            Ok(Ok(worst))
        })?;
        let (worst, notes) = fold_worst(outcomes);
        let mut constants = BTreeMap::new();
        constants.insert("max_gap".into(), worst.value);
        let ok = worst.value <= self.opts.convexity_tol && notes.is_empty();
        Ok(record(CONVEXITY, constants, worst.witness, ok, notes))
    }

    /// [H1]: difference quotients of `h` over the tube and the change of
    /// `t ↦ h(t, x̄)` across half steps.
    fn state_lipschitz(&self) -> Result<AuditRecord> {
        let problem = self.problem;
        let outcomes = self.per_node(|m| {
            let (t, x, _) = self.at(m);
            let states = self.tube_states(x, 2 * self.opts.samples.max(1), self.seed(21, m));
            let mut worst = Worst::new();
            for pair in states.chunks_exact(2) {
                let d = norm(&sub(&pair[0], &pair[1]));
                if d > 0.0 {
                    let dh = (problem.state_constraint_at(t, &pair[0])? - problem.state_constraint_at(t, &pair[1])?).abs();
                    worst.offer(dh / d, t, &pair[0], &[]);
                }
            }
            Ok(Ok(worst))
        })?;
        let (worst, notes) = fold_worst(outcomes);
        let mut jump: f64 = 0.0;
        for m in 0..self.process.n_steps() {
            let (t, x, _) = self.at(m);
            let mid = 0.5 * (t + self.process.grid[m + 1]);
            jump = jump.max((problem.state_constraint_at(mid, x)? - problem.state_constraint_at(t, x)?).abs());
        }
        let mut constants = BTreeMap::new();
        constants.insert("k_h".into(), worst.value);
        constants.insert("time_jump".into(), jump);
        let ok = worst.value.is_finite() && worst.value <= self.opts.constant_cap;
        Ok(record(H1, constants, worst.witness, ok, notes))
    }

    /// [H2]: how far sampled controls must move to stay feasible when the
    /// state is perturbed, per unit of perturbation.
    fn semicontinuity(&self) -> Result<AuditRecord> {
        let problem = self.problem;
        let outcomes = self.per_node(|m| {
            let (t, x, u) = self.at(m);
            let region = match self.region(t, x, u)? {
                Ok(r) => r,
                Err(note) => return Ok(Err(note)),
            };
            let controls = self.controls(&region, self.opts.samples.min(4), self.seed(22, m))?;
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed(23, m));
            let mut shifts = Vec::new();
            for _ in 0..2 {
                let b = ball_sample(&mut rng, x.len());
                let nb = norm(&b);
                if nb == 0.0 {
                    continue;
                }
                for scale in [1.0, 0.1, 0.01] {
                    let s = scale * problem.tube_radius / nb;
                    shifts.push(b.iter().map(|v| v * s).collect::<Vec<f64>>());
                }
            }
            let mut worst = Worst::new();
            for v in &controls {
                for d in &shifts {
                    let xp: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + b).collect();
                    let gap = match project_control(problem, t, &xp, v) {
                        Ok(w) => norm(&sub(v, &w)),
                        Err(Error::ProjectionFailed { .. }) => f64::INFINITY,
                        Err(e) => return Err(e),
                    };
                    worst.offer(gap / norm(d), t, &xp, v);
                }
            }
            Ok(Ok(worst))
        })?;
        let (worst, notes) = fold_worst(outcomes);
        let mut constants = BTreeMap::new();
        constants.insert("modulus".into(), worst.value);
        let ok = worst.value.is_finite() && worst.value <= self.opts.constant_cap && notes.is_empty();
        Ok(record(H2, constants, worst.witness, ok, notes))
    }

    /// [L*ε]: difference quotients of `f` (and `L`) in `x` and in `u`, and
    /// the largest speed at the reference state.
    fn lipschitz(&self) -> Result<AuditRecord> {
        let problem = self.problem;
        let has_l = problem.running_cost.is_some();
        let outcomes = self.per_node(|m| {
            let (t, x, u) = self.at(m);
            let region = match self.region(t, x, u)? {
                Ok(r) => r,
                Err(note) => return Ok(Err(note)),
            };
            let controls = self.controls(&region, self.opts.samples, self.seed(24, m))?;
            let states = self.tube_states(x, 2 * self.opts.samples.max(1), self.seed(25, m));
            let mut w = [Worst::new(), Worst::new(), Worst::new(), Worst::new(), Worst::new()];
            let cost = |xs: &[f64], us: &[f64]| problem.running_cost_at(t, xs, us);
            for (i, pair) in states.chunks_exact(2).enumerate() {
                let dx = norm(&sub(&pair[0], &pair[1]));
                if dx == 0.0 {
                    continue;
                }
                let v = &controls[i % controls.len()];
                let df = norm(&sub(&problem.dynamics_at(t, &pair[0], v)?, &problem.dynamics_at(t, &pair[1], v)?));
                w[0].offer(df / dx, t, &pair[0], v);
                if has_l {
                    w[2].offer((cost(&pair[0], v)? - cost(&pair[1], v)?).abs() / dx, t, &pair[0], v);
                }
            }
            for (i, a) in controls.iter().enumerate() {
                let fa = problem.dynamics_at(t, x, a)?;
                w[4].offer(norm(&fa), t, x, a);
                for b in &controls[i + 1..] {
                    let du = norm(&sub(a, b));
                    if du == 0.0 {
                        continue;
                    }
                    let df = norm(&sub(&fa, &problem.dynamics_at(t, x, b)?));
                    w[1].offer(df / du, t, x, a);
                    if has_l {
                        w[3].offer((cost(x, a)? - cost(x, b)?).abs() / du, t, x, a);
                    }
                }
            }
            Ok(Ok(w))
        })?;
        let mut notes = Vec::new();
        let mut acc = [Worst::new(), Worst::new(), Worst::new(), Worst::new(), Worst::new()];
        for o in outcomes {
            match o {
                Ok(w) => {
                    for (a, b) in acc.iter_mut().zip(w) {
                        *a = a.clone().merge(b);
                    }
                }
                Err(n) => notes.push(n),
            }
        }
        let keys = ["k_x_f", "k_u_f", "k_x_L", "k_u_L", "bound_f"];
        let mut constants = BTreeMap::new();
        for (i, key) in keys.iter().enumerate() {
            if has_l || (i != 2 && i != 3) {
                constants.insert(key.to_string(), acc[i].value);
            }
        }
        let ok = constants.values().all(|v| v.is_finite() && *v <= self.opts.constant_cap) && notes.is_empty();
        let witness = acc[..2]
            .iter()
            .max_by(|a, b| a.value.total_cmp(&b.value))
            .and_then(|w| w.witness.clone());
        Ok(record(L_EPS, constants, witness, ok, notes))
    }

    /// [BS*ε]: ratio `|α|/|β|` over nonnegative combinations `(α, β)` of the
    /// active constraint gradients at sampled boundary points of `S(t, x)`.
    fn bounded_slope(&self) -> Result<AuditRecord> {
        let problem = self.problem;
        let n = problem.state_dim;
        let outcomes = self.per_node(|m| {
            let (t, x, u) = self.at(m);
            let mut states = vec![x.to_vec()];
            states.extend(self.tube_states(x, (self.opts.samples / 4).max(1), self.seed(26, m)));
            let mut worst = Worst::new();
            let mut degenerate: Option<Witness> = None;
            for (s, xs) in states.iter().enumerate() {
                let region = match self.region(t, xs, u)? {
                    Ok(r) => r,
                    Err(note) => return Ok(Err(note)),
                };
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed(27, m), 0, s as u64));
                for b in boundary_points(problem, &region, &mut rng)? {
                    let g = problem.mixed_values(t, xs, &b)?;
                    let grads = problem.mixed_gradients(t, xs, &b)?;
                    let active: Vec<&Vec<f64>> = g.iter().zip(&grads).filter(|(v, _)| **v >= -ACTIVE).map(|(_, d)| d).collect();
                    for w in combinations(active.len()) {
                        let mut comb = vec![0.0; grads.first().map_or(0, Vec::len)];
                        for (wj, d) in w.iter().zip(&active) {
                            for (c, v) in comb.iter_mut().zip(d.iter()) {
                                *c += wj * v;
                            }
                        }
                        let (alpha, beta) = (norm(&comb[..n]), norm(&comb[n..]));
                        if beta <= 1e-10 {
                            if alpha > 1e-8 && degenerate.is_none() {
                                degenerate = Some(Witness {
                                    t,
                                    x: xs.clone(),
                                    u: b.clone(),
                                });
                            }
                            continue;
                        }
                        worst.offer(alpha / beta, t, xs, &b);
                    }
                }
            }
            Ok(Ok((worst, degenerate)))
        })?;
        let mut notes = Vec::new();
        let mut worst = Worst::new();
        let mut degenerate = None;
        for o in outcomes {
            match o {
                Ok((w, d)) => {
                    worst = worst.merge(w);
                    degenerate = degenerate.or(d);
                }
                Err(n) => notes.push(n),
            }
        }
        if worst.witness.is_none() && degenerate.is_none() {
            notes.push("no boundary point of S found in the sampled tube".into());
        }
        let mut constants = BTreeMap::new();
        constants.insert("k_S_estimate".into(), worst.value);
        let ok = degenerate.is_none()
            && worst.value <= self.opts.constant_cap
            && notes.iter().all(|n| !n.starts_with("sampler"));
        let witness = if degenerate.is_some() {
            notes.push("normal with vanishing control component".into());
            degenerate
        } else {
            worst.witness
        };
        Ok(record(BS_EPS, constants, witness, ok, notes))
    }

    /// [CS*ε]: largest `|(x, u)|` over the sampled tube; fails when some
    /// control slice is unbounded within the search reach.
    fn compactness(&self) -> Result<AuditRecord> {
        let outcomes = self.per_node(|m| {
            let (t, x, u) = self.at(m);
            let mut states = vec![x.to_vec()];
            states.extend(self.tube_states(x, (self.opts.samples / 4).max(1), self.seed(28, m)));
            let mut worst = Worst::new();
            let mut escaped = None;
            for (s, xs) in states.iter().enumerate() {
                let region = match self.region(t, xs, u)? {
                    Ok(r) => r,
                    Err(note) => return Ok(Err(note)),
                };
                if region.escaped && escaped.is_none() {
                    escaped = Some(format!("control slice unbounded within {REACH:e} at t = {t}"));
                }
                for v in self.controls(&region, self.opts.samples, derive_seed(self.seed(29, m), 0, s as u64))? {
                    worst.offer(norm(&[xs.as_slice(), &v].concat()), t, xs, &v);
                }
            }
            Ok(Ok((worst, escaped)))
        })?;
        let mut notes = Vec::new();
        let mut worst = Worst::new();
        for o in outcomes {
            match o {
                Ok((w, e)) => {
                    worst = worst.merge(w);
                    notes.extend(e);
                }
                Err(n) => notes.push(n),
            }
        }
        let mut constants = BTreeMap::new();
        constants.insert("c_estimate".into(), worst.value);
        let ok = notes.is_empty();
        Ok(record(CS_EPS, constants, worst.witness, ok, notes))
    }
}

fn fold_worst(outcomes: Vec<NodeOutcome<Worst>>) -> (Worst, Vec<String>) {
    let mut notes = Vec::new();
    let mut worst = Worst::new();
    for o in outcomes {
        match o {
            Ok(w) => worst = worst.merge(w),
            Err(n) => notes.push(n),
        }
    }
    (worst, notes)
}

/// Ends of the axis box (when bounded) and edge points along random rays
/// from the center.
fn boundary_points(problem: &OCProblem, region: &ControlRegion, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let k = region.center.len();
    let mut out = Vec::new();
    for c in 0..k {
        for end in [region.lower[c], region.upper[c]] {
            if (end - region.center[c]).abs() < REACH {
                let mut b = region.center.clone();
                b[c] = end;
                out.push(b);
            }
        }
    }
    for _ in 0..2 * k {
        let d = ball_sample(rng, k);
        let nd = norm(&d);
        if nd == 0.0 {
            continue;
        }
        let dir: Vec<f64> = d.iter().map(|v| v / nd).collect();
        if let Some(b) = region.edge_along(problem, &dir)? {
            out.push(b);
        }
    }
    Ok(out)
}

/// Nonnegative weight vectors over `count` active gradients: each alone,
/// then blends of every pair.
fn combinations(count: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..count {
        let mut w = vec![0.0; count];
        w[i] = 1.0;
        out.push(w);
    }
    for i in 0..count {
        for j in i + 1..count {
            for a in [0.25, 0.5, 0.75] {
                let mut w = vec![0.0; count];
                w[i] = a;
                w[j] = 1.0 - a;
                out.push(w);
            }
        }
    }
    if count > 2 {
        out.push(vec![1.0 / count as f64; count]);
    }
    out
}

/// Velocities of the feasible points of a regular grid over the sampling box.
struct VelocityGrid {
    points: Vec<(Vec<f64>, Vec<f64>)>,
    cell: Vec<f64>,
}

impl VelocityGrid {
    fn new(problem: &OCProblem, region: &ControlRegion, budget: usize) -> Result<Self> {
        let k = region.center.len();
        let (lo, hi) = region.sampling_box();
        let per_dim = ((budget as f64).powf(1.0 / k.max(1) as f64).floor() as usize).max(2);
        let cell: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (b - a) / (per_dim - 1) as f64).collect();
        let mut points = Vec::new();
        let mut idx = vec![0usize; k];
        loop {
            let u: Vec<f64> = (0..k).map(|c| lo[c] + idx[c] as f64 * cell[c]).collect();
            if region.is_feasible(problem, &u)? {
                let f = problem.dynamics_at(region.t, &region.x, &u)?;
                points.push((u, f));
            }
            let mut c = 0;
            while c < k {
                idx[c] += 1;
                if idx[c] < per_dim {
                    break;
                }
                idx[c] = 0;
                c += 1;
            }
            if c == k {
                break;
            }
        }
        for v in std::iter::once(region.center.clone()).chain(region.vertices(problem)?) {
            let f = problem.dynamics_at(region.t, &region.x, &v)?;
            points.push((v, f));
        }
        Ok(VelocityGrid { points, cell })
    }

    /// Distance from `target` to the velocity set: best grid point, then
    /// compass search over feasible controls.
    fn gap(&self, problem: &OCProblem, region: &ControlRegion, target: &[f64]) -> Result<f64> {
        let (mut u, mut best) = self
            .points
            .iter()
            .map(|(u, f)| (u, norm(&sub(f, target))))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(u, d)| (u.clone(), d))
            .expect("the center is always present");
        let mut step: Vec<f64> = self.cell.clone();
        for _ in 0..400 {
            if best == 0.0 || step.iter().all(|s| *s <= 1e-12 * (1.0 + norm(&u))) {
                break;
            }
            let mut improved = false;
            for c in 0..u.len() {
                for sign in [-1.0, 1.0] {
                    let mut trial = u.clone();
                    trial[c] += sign * step[c];
                    if !region.is_feasible(problem, &trial)? {
                        continue;
                    }
                    let d = norm(&sub(&problem.dynamics_at(region.t, &region.x, &trial)?, target));
                    if d < best {
                        best = d;
                        u = trial;
                        improved = true;
                    }
                }
            }
            if !improved {
                for s in &mut step {
                    *s *= 0.5;
                }
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{load_reference_problem, EndpointDescriptor, EndpointSet, Form, ReferenceId};

    fn audits(id: ReferenceId, n: usize) -> Vec<AuditRecord> {
        let (p, sol) = load_reference_problem(id);
        audit_hypotheses(&p, &sol.process(n), &AuditOptions::default()).unwrap()
    }

    fn find<'a>(r: &'a [AuditRecord], name: &str) -> &'a AuditRecord {
        r.iter().find(|a| a.name == name).unwrap()
    }

    /// `ẋ = (u, u²)`, `|u| ≤ 1`: the velocity set is a parabola arc.
    pub(crate) fn parabola() -> (OCProblem, Process) {
        let mut matrix = vec![vec![0.0; 4]; 4];
        matrix[3][3] = 1.0;
        let (mut p, _) = load_reference_problem(ReferenceId::A);
        p.name = "parabola".into();
        p.state_dim = 2;
        p.dynamics = vec![
            Form::linear(0.0, vec![0.0, 0.0, 0.0, 1.0]).into(),
            Form::Quadratic {
                constant: 0.0,
                linear: vec![0.0; 4],
                matrix,
            }
            .into(),
        ];
        p.endpoint_cost = Form::linear(0.0, vec![0.0, 0.0, 0.0, 1.0]).into();
        p.mixed_constraints = vec![
            Form::linear(-1.0, vec![0.0, 0.0, 0.0, 1.0]).into(),
            Form::linear(-1.0, vec![0.0, 0.0, 0.0, -1.0]).into(),
        ];
        p.endpoint_set = EndpointSet {
            initial: EndpointDescriptor::Point { point: vec![0.0, 0.0] },
            terminal: EndpointDescriptor::Free,
        };
        let n = 4;
        let grid = crate::problem::uniform_grid(p.horizon, n);
        let process = Process {
            states: vec![vec![0.0, 0.0]; n + 1],
            controls: vec![vec![0.0]; n],
            grid,
        };
        (p, process)
    }

    #[test]
    fn ref_a_audits() {
        let r = audits(ReferenceId::A, 50);
        assert_eq!(r.len(), 6);
        assert!(find(&r, CONVEXITY).constant("max_gap").unwrap() <= 1e-6);
        assert_eq!(find(&r, BS_EPS).constant("k_S_estimate").unwrap(), 0.0);
        let c = find(&r, CS_EPS).constant("c_estimate").unwrap();
        assert!(c <= 1.0 + 0.1 + 1.0 + 1e-12, "{c}");
        assert!(r.iter().all(|a| a.verdict == Verdict::Pass), "{r:?}");
    }

    #[test]
    fn ref_c_bounded_slope() {
        let r = audits(ReferenceId::C, 200);
        let ks = find(&r, BS_EPS).constant("k_S_estimate").unwrap();
        assert!((ks - 1.0).abs() <= 1e-9, "{ks}");
        let h2 = find(&r, H2).constant("modulus").unwrap();
        assert!(h2.is_finite() && h2 <= 1.0 + 1e-6, "{h2}");
        assert!(r.iter().all(|a| a.verdict == Verdict::Pass), "{r:?}");
    }

    #[test]
    fn ref_b_audits_pass() {
        let r = audits(ReferenceId::B, 200);
        assert!(r.iter().all(|a| a.verdict == Verdict::Pass), "{r:?}");
    }

    #[test]
    fn parabola_is_not_convex() {
        let (p, x) = parabola();
        let r = audit_hypotheses(&p, &x, &AuditOptions::default()).unwrap();
        let c = find(&r, CONVEXITY);
        assert_eq!(c.verdict, Verdict::Fail);
        // midpoint (0, 1) of (±1, 1) is √3/2 from the arc
        let gap = c.constant("max_gap").unwrap();
        assert!((gap - 0.75f64.sqrt()).abs() < 1e-6, "{gap}");
    }

    #[test]
    fn vanishing_control_normal_fails_bounded_slope() {
        // u³ ≤ x: at x = 0 the edge u = 0 has normal (−1, 0)
        let (mut p, sol) = load_reference_problem(ReferenceId::A);
        p.mixed_constraints.push(crate::problem::Evaluator::custom("cubic", |v| v[2].powi(3) - v[1]));
        let mut process = sol.process(10);
        for x in &mut process.states {
            x[0] = 0.0;
        }
        let r = audit_hypotheses(&p, &process, &AuditOptions::default()).unwrap();
        let bs = find(&r, BS_EPS);
        assert_eq!(bs.verdict, Verdict::Fail, "{bs:?}");
    }

    #[test]
    fn nodes_are_spread() {
        assert_eq!(audit_nodes(5, 12), vec![0, 1, 2, 3, 4]);
        assert_eq!(audit_nodes(100, 3), vec![0, 50, 99]);
    }
}
