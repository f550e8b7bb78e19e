//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string; the plain `*_json` functions carry the
//! logic so they can be exercised natively.

use nsmp_core::checker::{check_conditions, CheckOptions};
use nsmp_core::multipliers::{assemble_pack, ExtractOptions, MultiplierPack};
use nsmp_core::nonsmooth::{hull_distance, subdiff_estimate, GradientBundle, Subtrahend};
use nsmp_core::problem::{load_reference_problem, OCProblem, Process, ReferenceId};
use nsmp_core::solver::{penalty_continuation, SolveOptions};
use nsmp_core::Error;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_STEPS: usize = 400;

fn reference(id: &str) -> Result<ReferenceId, String> {
    id.parse().map_err(|e: Error| e.to_string())
}

fn conditions(report: &nsmp_core::checker::CheckReport) -> Value {
    Value::Array(
        report
            .conditions
            .iter()
            .map(|c| {
                json!({
                    "name": c.name,
                    "verdict": c.verdict.label(),
                    "max_residual": c.max_residual,
                    "tolerance": c.tolerance,
                    "comparison": c.comparison,
                })
            })
            .collect(),
    )
}

fn first(v: &[Vec<f64>]) -> Vec<f64> {
    v.iter().map(|x| x.first().copied().unwrap_or(0.0)).collect()
}

/// Penalty continuation on a reference problem, the extracted multipliers,
/// the checker verdicts and the analytic solution for comparison.
pub fn solve_reference_json(id: &str, n_steps: usize, penalty_max: f64) -> Result<String, String> {
    if !(2..=MAX_STEPS).contains(&n_steps) {
        return Err(format!("grid must have 2..={MAX_STEPS} steps"));
    }
    let (problem, sol) = load_reference_problem(reference(id)?);
    let opts = SolveOptions::default().with_penalty_max(penalty_max);
    let trace = penalty_continuation(&problem, n_steps, &opts, None).map_err(|e| e.to_string())?;
    let last = trace.last().ok_or("empty penalty schedule")?;
    let pack = assemble_pack(&problem, &last.solution, &ExtractOptions::default()).map_err(|e| e.to_string())?;
    let report = check_conditions(&problem, &last.solution.process, &pack, &CheckOptions::default())
        .map_err(|e| e.to_string())?;
    let process = &last.solution.process;
    let grid = &process.grid;
    let path: Vec<Value> = trace
        .records
        .iter()
        .map(|r| json!({"penalty": r.penalty, "objective": r.objective, "max_violation": r.max_violation}))
        .collect();
    Ok(json!({
        "problem": problem.name,
        "grid": grid,
        "state": first(&process.states),
        "control": first(&process.controls),
        "costate": first(&pack.p),
        "q": first(&pack.q),
        "weights": pack.measure.weights,
        "endpoint_atom": pack.measure.endpoint_atom,
        "lambda0": pack.lambda0,
        "objective": last.objective,
        "optimal_cost": sol.optimal_cost,
        "analytic_state": grid.iter().map(|t| (sol.state)(*t)).collect::<Vec<_>>(),
        "analytic_control": grid.iter().map(|t| (sol.control)(*t)).collect::<Vec<_>>(),
        "path": path,
        "truncated": trace.truncated,
        "conditions": conditions(&report),
        "verdict": report.verdict.label(),
    })
    .to_string())
}

fn sample_function(name: &str) -> Result<fn(f64) -> f64, String> {
    Ok(match name {
        "abs" => f64::abs,
        "relu" => |x: f64| x.max(0.0),
        "square" => |x: f64| x * x,
        "min" => |x: f64| x.min(-x / 2.0),
        _ => return Err(format!("unknown function `{name}` (abs, relu, square, min)")),
    })
}

/// Gradient-sampling bundle of a scalar test function at `x`, its interval
/// hull, and the distance from `target` to that hull.
pub fn subdifferential_json(function: &str, x: f64, radius: f64, samples: usize, seed: u64, target: f64) -> Result<String, String> {
    let f = sample_function(function)?;
    if !(radius > 0.0) || samples == 0 || samples > 4096 {
        return Err("need radius > 0 and 1..=4096 samples".into());
    }
    let bundle = subdiff_estimate(|v| Ok(f(v[0])), &[x], radius, samples, seed).map_err(|e| e.to_string())?;
    let (lo, hi) = bundle.coordinate_range(0);
    let zero = GradientBundle::from_generators(vec![0.0], vec![vec![0.0]]);
    let d = hull_distance(&[target], &bundle, Subtrahend::Hull(&zero), 1.0);
    Ok(json!({
        "generators": first(&bundle.generators),
        "hull": [lo, hi],
        "target": target,
        "distance": d.distance,
    })
    .to_string())
}

fn corrupt(problem: &OCProblem, process: &Process, pack: &mut MultiplierPack, corruption: &str) -> Result<(), String> {
    match corruption {
        "none" => {}
        "zero" => *pack = pack.scaled(0.0),
        "flip" => {
            for v in pack.p.iter_mut().chain(pack.q.iter_mut()) {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            pack.q_final.iter_mut().for_each(|x| *x = -*x);
        }
        "offboundary" => {
            // mass where the state constraint is slackest
            let mut slackest = (0, f64::INFINITY);
            for (m, (t, x)) in process.grid.iter().zip(&process.states).enumerate() {
                let h = problem.state_constraint_at(*t, x).map_err(|e| e.to_string())?;
                if h < slackest.1 {
                    slackest = (m, h);
                }
            }
            pack.measure.weights[slackest.0] += 0.2;
        }
        "scale" => *pack = pack.scaled(2.0),
        _ => return Err(format!("unknown corruption `{corruption}` (none, zero, flip, offboundary, scale)")),
    }
    Ok(())
}

/// Checks the analytic multipliers of a reference problem after applying
/// one corruption to them.
pub fn check_corrupted_json(id: &str, n_steps: usize, corruption: &str) -> Result<String, String> {
    if !(2..=MAX_STEPS).contains(&n_steps) {
        return Err(format!("grid must have 2..={MAX_STEPS} steps"));
    }
    let (problem, sol) = load_reference_problem(reference(id)?);
    let process = sol.process(n_steps);
    let mut pack = sol.pack(n_steps).normalized();
    corrupt(&problem, &process, &mut pack, corruption)?;
    let report = check_conditions(&problem, &process, &pack, &CheckOptions::default()).map_err(|e| e.to_string())?;
    let residuals: Vec<Value> = report
        .conditions
        .iter()
        .map(|c| json!({"name": c.name, "residuals": c.residuals}))
        .collect();
    Ok(json!({
        "problem": problem.name,
        "corruption": corruption,
        "grid": process.grid,
        "costate": first(&pack.p),
        "conditions": conditions(&report),
        "residuals": residuals,
        "failed": report.failed_conditions(),
        "verdict": report.verdict.label(),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn solve_reference(id: &str, n_steps: usize, penalty_max: f64) -> Result<String, JsValue> {
    solve_reference_json(id, n_steps, penalty_max).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn subdifferential(function: &str, x: f64, radius: f64, samples: usize, seed: u32, target: f64) -> Result<String, JsValue> {
    subdifferential_json(function, x, radius, samples, u64::from(seed), target).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn check_corrupted(id: &str, n_steps: usize, corruption: &str) -> Result<String, JsValue> {
    check_corrupted_json(id, n_steps, corruption).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: String) -> Value {
        serde_json::from_str(&s).unwrap()
    }

    #[test]
    fn solve_reports_the_endpoint_atom() {
        let v = parse(solve_reference_json("REF-B", 40, 16384.0).unwrap());
        assert_eq!(v["verdict"], "pass");
        let atom = v["endpoint_atom"].as_f64().unwrap();
        let lambda0 = v["lambda0"].as_f64().unwrap();
        assert!((atom - lambda0).abs() < 0.05 * lambda0);
        assert_eq!(v["state"].as_array().unwrap().len(), 41);
    }

    #[test]
    fn abs_hull_spans_the_interval() {
        let v = parse(subdifferential_json("abs", 0.0, 1e-3, 64, 0, 0.5).unwrap());
        assert!(v["hull"][0].as_f64().unwrap() < -0.95 && v["hull"][1].as_f64().unwrap() > 0.95);
        assert!(v["distance"].as_f64().unwrap() < 1e-10);
        let far = parse(subdifferential_json("square", 1.0, 1e-3, 16, 0, 0.0).unwrap());
        assert!((far["distance"].as_f64().unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn corruptions_fail_their_condition() {
        let v = parse(check_corrupted_json("REF-A", 50, "zero").unwrap());
        assert_eq!(v["failed"], json!(["nontriviality"]));
        // REF-B has γ ≠ 0, so extra mass there also moves q
        for id in ["REF-A", "REF-C"] {
            let v = parse(check_corrupted_json(id, 50, "offboundary").unwrap());
            assert_eq!(v["failed"], json!(["measure_support"]), "{id}");
        }
        let v = parse(check_corrupted_json("REF-A", 50, "none").unwrap());
        assert_eq!(v["verdict"], "pass");
        assert!(check_corrupted_json("REF-A", 50, "bogus").is_err());
    }
}
