use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{EndpointDescriptor, OCProblem, Process};

const MAX_STEPS: usize = 8;
const MAX_VALUES: usize = 7;
const MAX_SEQUENCES: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub cost: f64,
    pub process: Process,
    pub enumerated: u64,
    pub feasible: u64,
}

/// Exhaustive search over piecewise-constant controls taking values in the
/// product of `control_values` (one list per control coordinate).
///
/// Sequences are simulated by explicit Euler from the fixed initial point;
/// those violating a mixed constraint at some step, the state constraint at
/// some node, or the final endpoint set (all up to `tol`) are discarded. Ties
/// go to the lexicographically smallest sequence.
pub fn brute_force_oracle(
    problem: &OCProblem,
    n_steps: usize,
    control_values: &[Vec<f64>],
    tol: f64,
) -> Result<OracleResult> {
    if n_steps == 0 || n_steps > MAX_STEPS {
        return Err(Error::Unsupported(format!("oracle needs 1..={MAX_STEPS} steps, got {n_steps}")));
    }
    if control_values.len() != problem.control_dim
        || control_values.iter().any(|v| v.is_empty() || v.len() > MAX_VALUES)
    {
        return Err(Error::Unsupported(format!(
            "oracle needs 1..={MAX_VALUES} values for each of the {} control coordinates",
            problem.control_dim
        )));
    }
    let EndpointDescriptor::Point { point: x0 } = &problem.endpoint_set.initial else {
        return Err(Error::Unsupported("oracle requires a fixed initial point".into()));
    };

    let mut choices: Vec<Vec<f64>> = vec![Vec::new()];
    for values in control_values {
        choices = choices
            .iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(*v);
                    c
                })
            })
            .collect();
    }
    let base = choices.len() as u128;
    let total = base.pow(n_steps as u32);
    if total > MAX_SEQUENCES {
        return Err(Error::EnumerationTooLarge(total));
    }
    let grid = crate::problem::uniform_grid(problem.horizon, n_steps);

    let simulate = |index: u64| -> Result<Option<(f64, Process)>> {
        let mut digits = vec![0usize; n_steps];
        let mut rest = index;
        for m in (0..n_steps).rev() {
            digits[m] = (rest % base as u64) as usize;
            rest /= base as u64;
        }
        let mut states = Vec::with_capacity(n_steps + 1);
        states.push(x0.clone());
        if problem.state_constraint_at(grid[0], x0)? > tol {
            return Ok(None);
        }
        let mut running = 0.0;
        for m in 0..n_steps {
            let u = &choices[digits[m]];
            let x = &states[m];
            if problem.mixed_values(grid[m], x, u)?.iter().any(|g| *g > tol) {
                return Ok(None);
            }
            let dt = grid[m + 1] - grid[m];
            let f = problem.dynamics_at(grid[m], x, u)?;
            let next: Vec<f64> = x.iter().zip(&f).map(|(xi, fi)| xi + dt * fi).collect();
            if problem.state_constraint_at(grid[m + 1], &next)? > tol {
                return Ok(None);
            }
            if problem.running_cost.is_some() {
                running += 0.5
                    * dt
                    * (problem.running_cost_at(grid[m], x, u)? + problem.running_cost_at(grid[m + 1], &next, u)?);
            }
            states.push(next);
        }
        if !problem.endpoint_set.terminal.contains(&states[n_steps], tol) {
            return Ok(None);
        }
        let cost = problem.endpoint_cost_at(&states[0], &states[n_steps])? + running;
        let controls = digits.iter().map(|d| choices[*d].clone()).collect();
        Ok(Some((
            cost,
            Process {
                grid: grid.clone(),
                states,
                controls,
            },
        )))
    };

    let (best, feasible) = (0..total as u64)
        .into_par_iter()
        .map(|idx| Ok(simulate(idx)?.map(|(cost, _)| (cost, idx))))
        .try_fold(
            || (None::<(f64, u64)>, 0u64),
            |(best, count), item: Result<Option<(f64, u64)>>| {
                let item = item?;
                Ok::<_, Error>((better(best, item), count + u64::from(item.is_some())))
            },
        )
        .try_reduce(|| (None, 0), |a, b| Ok((better(a.0, b.0), a.1 + b.1)))?;

    let Some((cost, idx)) = best else {
        return Err(Error::NoFeasibleSequence {
            enumerated: total as u64,
        });
    };
    let (_, process) = simulate(idx)?.expect("argmin sequence is feasible");
    Ok(OracleResult {
        cost,
        process,
        enumerated: total as u64,
        feasible,
    })
}

fn better(a: Option<(f64, u64)>, b: Option<(f64, u64)>) -> Option<(f64, u64)> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => {
            if b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).is_lt() {
                Some(b)
            } else {
                Some(a)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{load_reference_problem, ReferenceId};

    fn grid5() -> Vec<Vec<f64>> {
        vec![vec![-1.0, -0.5, 0.0, 0.5, 1.0]]
    }

    #[test]
    fn ref_a() {
        let (p, _) = load_reference_problem(ReferenceId::A);
        let r = brute_force_oracle(&p, 6, &grid5(), 1e-9).unwrap();
        assert_eq!(r.enumerated, 15625);
        assert!((r.cost + 1.0).abs() < 1e-12);
        assert!(r.process.controls.iter().all(|u| u[0] == -1.0));
    }

    #[test]
    fn ref_b() {
        let (p, _) = load_reference_problem(ReferenceId::B);
        let r = brute_force_oracle(&p, 8, &grid5(), 1e-9).unwrap();
        assert!(r.cost <= 0.01 && r.cost >= -1e-12, "{}", r.cost);
    }

    #[test]
    fn ref_c() {
        let (p, _) = load_reference_problem(ReferenceId::C);
        let values = vec![(0..=5).map(|i| i as f64 * 0.2).collect()];
        let r = brute_force_oracle(&p, 6, &values, 1e-9).unwrap();
        assert!((r.cost + 0.6321).abs() <= 0.08, "{}", r.cost);
    }

    #[test]
    fn rejects_large_or_infeasible() {
        let (p, _) = load_reference_problem(ReferenceId::A);
        let seven = vec![(0..7).map(|i| i as f64).collect::<Vec<_>>()];
        assert!(matches!(
            brute_force_oracle(&p, 9, &seven, 1e-9),
            Err(Error::Unsupported(_))
        ));
        // every value violates u ≤ 1
        let r = brute_force_oracle(&p, 3, &[vec![2.0, 3.0]], 1e-9);
        assert!(matches!(r, Err(Error::NoFeasibleSequence { enumerated: 8 })));
    }
}
