//! Augmented-Lagrangian solver for the penalized transcriptions, the penalty
//! continuation `i → ∞`, and an exhaustive oracle on coarse grids.

mod continuation;
mod lbfgs;
mod lifted;
mod oracle;

pub use continuation::{penalty_continuation, ContinuationRecord, ContinuationTrace};
pub use oracle::{brute_force_oracle, OracleResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::Process;
use crate::transcription::{penalized_objective, DiscreteNLP};
use lifted::{Lifted, Rows};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    Zero,
    /// Start from a supplied candidate process (falls back to zero without one).
    Analytic,
    WarmStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub inner_max_iter: usize,
    pub outer_max_iter: usize,
    pub stationarity_tol: f64,
    pub feasibility_tol: f64,
    pub penalty_schedule: Vec<f64>,
    pub seed: u64,
    pub init: InitPolicy,
    /// Re-solve each penalized problem anchored at its own solution and
    /// record the control drift (Ekeland diagnostic).
    pub ekeland_diagnostic: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            inner_max_iter: 20_000,
            outer_max_iter: 60,
            stationarity_tol: 1e-8,
            feasibility_tol: 1e-9,
            penalty_schedule: (0..=14).map(|e| f64::powi(2.0, e)).collect(),
            seed: 0,
            init: InitPolicy::WarmStart,
            ekeland_diagnostic: false,
        }
    }
}

impl SolveOptions {
    pub fn with_penalty_max(mut self, max: f64) -> Self {
        self.penalty_schedule.retain(|i| *i <= max);
        if self.penalty_schedule.is_empty() {
            self.penalty_schedule.push(max);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.inner_max_iter == 0 || self.outer_max_iter == 0 {
            return Err(Error::InvalidProblem(vec!["iteration caps must be at least 1".into()]));
        }
        if !(self.stationarity_tol > 0.0 && self.feasibility_tol > 0.0) {
            return Err(Error::InvalidProblem(vec!["tolerances must be positive".into()]));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub stationarity: f64,
    pub feasibility: f64,
    pub rho: f64,
    pub converged: bool,
}

/// Raw augmented-Lagrangian state, reused for warm starts.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub lifted: Vec<f64>,
    pub equality: Vec<f64>,
    pub inequality: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct PenalizedSolution {
    pub penalty: f64,
    pub grid: Vec<f64>,
    /// Decision vector over `(x_0, …, x_N, u_0, …, u_{N−1})`.
    pub z: Vec<f64>,
    pub process: Process,
    /// Multipliers of the Euler defects, one vector per step.
    pub defect_multipliers: Vec<Vec<f64>>,
    /// Multipliers of every mixed constraint at every step (bounds included).
    pub mixed_multipliers: Vec<Vec<f64>>,
    /// Multipliers of `h(t_m, x_m) ≤ s_m`, one per node.
    pub state_multipliers: Vec<f64>,
    /// Penalized objective at `z` (with `h⁺`, not slacks).
    pub objective: f64,
    pub record: ConvergenceRecord,
    pub state: AugmentedState,
}

/// Solves one penalized transcription from `init` (over `(x, u)`).
pub fn solve_penalized(nlp: &DiscreteNLP, init: &[f64], opts: &SolveOptions) -> Result<PenalizedSolution> {
    solve_from(nlp, init, None, opts)
}

pub(crate) fn solve_from(
    nlp: &DiscreteNLP,
    init: &[f64],
    warm: Option<&AugmentedState>,
    opts: &SolveOptions,
) -> Result<PenalizedSolution> {
    opts.validate()?;
    if init.len() != nlp.layout.len() {
        return Err(Error::Dimension(format!(
            "initial guess has {} entries, layout expects {}",
            init.len(),
            nlp.layout.len()
        )));
    }
    let lifted = Lifted::new(nlp);
    let mut v = lifted.lift(init)?;
    let (mut eq, mut ineq) = (Rows::default(), Rows::default());
    lifted.constraints(&v, &mut eq, &mut ineq)?;
    let (mut lam, mut nu, mut rho) = match warm {
        Some(w) if w.equality.len() == eq.len() && w.inequality.len() == ineq.len() => {
            (w.equality.clone(), w.inequality.clone(), w.rho.min(1e3))
        }
        _ => (vec![0.0; eq.len()], vec![0.0; ineq.len()], 10.0),
    };

    let mut record = ConvergenceRecord::default();
    let mut prev_violation = f64::INFINITY;
    let mut inner_tol = 1e-3f64.max(opts.stationarity_tol);
    let mut gradient = vec![0.0; lifted.len];
    let mut stationarity = f64::INFINITY;
    let mut feasibility = f64::INFINITY;
    for outer in 0..opts.outer_max_iter {
        record.outer_iterations = outer + 1;
        let result = lbfgs::minimize_bounded(
            |z| {
                let mut g = Vec::new();
                let val = lifted.augmented(z, &lam, &nu, rho, &mut eq, &mut ineq, &mut g)?;
                Ok((val, g))
            },
            &v,
            &lifted.lower,
            &lifted.upper,
            inner_tol,
            opts.inner_max_iter,
        )?;
        record.inner_iterations += result.iterations;
        v = result.z;
        gradient = result.gradient;
        stationarity = result.stationarity;

        lifted.constraints(&v, &mut eq, &mut ineq)?;
        let mut violation: f64 = 0.0;
        for (l, c) in lam.iter_mut().zip(&eq.values) {
            *l += rho * c;
            violation = violation.max(c.abs());
        }
        for (n, g) in nu.iter_mut().zip(&ineq.values) {
            *n = (*n + rho * g).max(0.0);
            violation = violation.max(g.max(0.0)).max((-g).min(*n));
        }
        feasibility = violation;
        if violation <= opts.feasibility_tol && stationarity <= opts.stationarity_tol {
            record.converged = true;
            break;
        }
        if violation > opts.feasibility_tol && violation > 0.25 * prev_violation {
            rho = (rho * 10.0).min(1e8);
        }
        prev_violation = violation;
        inner_tol = (inner_tol * 0.1).max(opts.stationarity_tol);
    }
    record.stationarity = stationarity;
    record.feasibility = feasibility;
    record.rho = rho;

    let solution = assemble(&lifted, &v, &lam, &nu, &gradient, rho, record)?;
    if solution.record.converged {
        Ok(solution)
    } else {
        Err(Error::NotConverged {
            reason: format!(
                "after {} outer iterations: stationarity {:.3e}, feasibility {:.3e}",
                solution.record.outer_iterations, stationarity, feasibility
            ),
            best: Box::new(solution),
        })
    }
}

fn assemble(
    lifted: &Lifted<'_>,
    v: &[f64],
    lam: &[f64],
    nu: &[f64],
    gradient: &[f64],
    rho: f64,
    record: ConvergenceRecord,
) -> Result<PenalizedSolution> {
    let nlp = lifted.nlp;
    let l = lifted.layout;
    let (n, k, steps) = (l.state_dim, l.control_dim, l.n_steps);
    let n_mixed = nlp.problem.mixed_constraints.len();
    let z = v[..l.len()].to_vec();

    let defect_multipliers = (0..steps).map(|m| lam[m * n..(m + 1) * n].to_vec()).collect();
    let mut mixed_multipliers = vec![vec![0.0; n_mixed]; steps];
    for m in 0..steps {
        for (r, &j) in lifted.general.iter().enumerate() {
            mixed_multipliers[m][j] = nu[m * lifted.general.len() + r];
        }
    }
    // bound multipliers from the reduced gradient: G + ν a = 0 on the active bound
    for m in 0..steps {
        let u = l.control(&z, m);
        let x = l.state(&z, m);
        let g = nlp.problem.mixed_values(nlp.grid[m], x, u)?;
        let mut used = vec![false; 2 * k];
        for cb in &lifted.bounds {
            let side = cb.coord * 2 + usize::from(cb.a > 0.0);
            let gj = g[cb.constraint];
            if used[side] || gj.abs() > 1e-9 * (1.0 + u[cb.coord].abs()) {
                continue;
            }
            let reduced = gradient[l.u(m) + cb.coord];
            mixed_multipliers[m][cb.constraint] = (-reduced / cb.a).max(0.0);
            used[side] = true;
        }
    }
    let epi0 = lifted.general_rows();
    let state_multipliers = nu[epi0..epi0 + steps + 1].to_vec();

    Ok(PenalizedSolution {
        penalty: nlp.penalty,
        grid: nlp.grid.clone(),
        process: nlp.process(&z),
        objective: penalized_objective(nlp, &z)?,
        z,
        defect_multipliers,
        mixed_multipliers,
        state_multipliers,
        record,
        state: AugmentedState {
            lifted: v.to_vec(),
            equality: lam.to_vec(),
            inequality: nu.to_vec(),
            rho,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{load_reference_problem, ReferenceId};
    use crate::transcription::discretize;

    fn solve(id: ReferenceId, n: usize, penalty: f64) -> PenalizedSolution {
        let (p, _) = load_reference_problem(id);
        let nlp = discretize(&p, n).unwrap().with_penalty(penalty);
        solve_penalized(&nlp, &vec![0.0; nlp.layout.len()], &SolveOptions::default()).unwrap()
    }

    #[test]
    fn ref_a_bang_control() {
        let s = solve(ReferenceId::A, 50, 1.0);
        assert!((s.objective + 1.0).abs() <= 1e-6, "{}", s.objective);
        assert!(s.process.controls.iter().all(|u| (u[0] + 1.0).abs() <= 1e-4));
        // q ≡ −1: defect multipliers are the costate
        assert!(s.defect_multipliers.iter().all(|q| (q[0] + 1.0).abs() <= 1e-6));
    }

    #[test]
    fn ref_c_boundary_arc() {
        let s = solve(ReferenceId::C, 200, 1.0);
        let exact = -(1.0 - (-1.0f64).exp());
        assert!((s.objective - exact).abs() <= 5e-3, "{}", s.objective);
    }

    #[test]
    fn ref_b_large_penalty() {
        let (p, _) = load_reference_problem(ReferenceId::B);
        let nlp = discretize(&p, 200).unwrap().with_penalty(f64::powi(2.0, 14));
        let s = solve_penalized(&nlp, &vec![0.0; nlp.layout.len()], &SolveOptions::default()).unwrap();
        assert!(nlp.max_state_violation(&s.z).unwrap() <= 1e-3);
        assert!(s.objective.abs() <= 5e-3, "{}", s.objective);
    }

    #[test]
    fn multipliers_sign_and_complementarity() {
        for (id, n) in [(ReferenceId::A, 50), (ReferenceId::C, 100)] {
            let (p, _) = load_reference_problem(id);
            let s = solve(id, n, 1.0);
            for (m, nu) in s.mixed_multipliers.iter().enumerate() {
                let g = p.mixed_values(s.grid[m], &s.process.states[m], &s.process.controls[m]).unwrap();
                for (nj, gj) in nu.iter().zip(&g) {
                    assert!(*nj >= -1e-10);
                    assert!(nj * gj.abs() <= 1e-6, "{id} m={m} ν={nj} g={gj}");
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = solve(ReferenceId::C, 60, 1.0);
        let b = solve(ReferenceId::C, 60, 1.0);
        assert_eq!(a.z, b.z);
        assert_eq!(a.state, b.state);
    }
}
