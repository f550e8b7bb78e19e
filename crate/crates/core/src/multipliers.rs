//! Maximum-principle multipliers recovered from a converged penalized solve.
//!
//! The defect multipliers of the transcription are the node values of the
//! bounded-variation function `q`; the multiplier `η_m` of the epigraph row
//! `h(t_m, x_m) ≤ s_m` is the penalty mass `i α_m c_m` at node `m`, and
//!
//! ```text
//! q_m  = p_m + Σ_{j<m} γ_j w_j                 (m ≤ N)
//! q(b) = p_N + Σ_{j≤N} γ_j w_j + γ_N · atom
//! ```
//!
//! Mass sitting on the last node is reported as the endpoint atom.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonsmooth::{derive_seed, hull_distance, ConeBundle, Sampling, Subtrahend};
use crate::problem::{norm, OCProblem, Process};
use crate::solver::PenalizedSolution;

/// Nonnegative measure on the grid nodes plus an atom at `t = b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    pub weights: Vec<f64>,
    pub endpoint_atom: f64,
}

impl GridMeasure {
    pub fn zero(n_nodes: usize) -> Self {
        GridMeasure {
            weights: vec![0.0; n_nodes],
            endpoint_atom: 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum::<f64>() + self.endpoint_atom
    }

    /// Nodes carrying mass above `tol`; the last node is included when the
    /// endpoint atom exceeds `tol`.
    pub fn support(&self, tol: f64) -> Vec<usize> {
        let last = self.weights.len().saturating_sub(1);
        let mut nodes: Vec<usize> = (0..self.weights.len()).filter(|&m| self.weights[m] > tol).collect();
        if self.endpoint_atom > tol && nodes.last() != Some(&last) {
            nodes.push(last);
        }
        nodes
    }

    pub fn is_nonnegative(&self) -> bool {
        self.weights.iter().all(|w| *w >= 0.0) && self.endpoint_atom >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierPack {
    pub lambda0: f64,
    pub grid: Vec<f64>,
    /// Costate at the nodes.
    pub p: Vec<Vec<f64>>,
    pub measure: GridMeasure,
    /// Selection from `∂̄ₓh` at the nodes; empty when the measure vanishes.
    pub gamma: Vec<Vec<f64>>,
    /// Left limits `q(t_m⁻)`, `m = 0..N`.
    pub q: Vec<Vec<f64>>,
    pub q_final: Vec<f64>,
}

impl MultiplierPack {
    /// `|p(a)| + μ([a, b]) + λ₀`.
    pub fn normalization(&self) -> f64 {
        norm(&self.p[0]) + self.measure.total() + self.lambda0
    }

    /// Multiplies `(λ₀, p, μ)` and therefore `q` by `c`; `γ` is unchanged.
    pub fn scaled(&self, c: f64) -> Self {
        let scale = |v: &Vec<Vec<f64>>| -> Vec<Vec<f64>> { v.iter().map(|x| x.iter().map(|y| c * y).collect()).collect() };
        MultiplierPack {
            lambda0: c * self.lambda0,
            grid: self.grid.clone(),
            p: scale(&self.p),
            measure: GridMeasure {
                weights: self.measure.weights.iter().map(|w| c * w).collect(),
                endpoint_atom: c * self.measure.endpoint_atom,
            },
            gamma: self.gamma.clone(),
            q: scale(&self.q),
            q_final: self.q_final.iter().map(|y| c * y).collect(),
        }
    }

    /// Scaled so that `|p(a)| + μ([a, b]) + λ₀ = 1` (unchanged if all vanish).
    pub fn normalized(&self) -> Self {
        let z = self.normalization();
        if z > 0.0 {
            self.scaled(1.0 / z)
        } else {
            self.clone()
        }
    }

    /// Recomputes `q` from `(p, γ, μ)`.
    pub fn with_reconstructed_q(mut self) -> Self {
        let (q, q_final) = reconstruct_q(&self.p, &self.gamma, &self.measure);
        self.q = q;
        self.q_final = q_final;
        self
    }

    pub fn check_shape(&self, n_steps: usize, state_dim: usize) -> Result<()> {
        let nodes = n_steps + 1;
        let ok = self.grid.len() == nodes
            && self.p.len() == nodes
            && self.p.iter().all(|v| v.len() == state_dim)
            && self.measure.weights.len() == nodes
            && (self.gamma.is_empty() || (self.gamma.len() == nodes && self.gamma.iter().all(|v| v.len() == state_dim)));
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "multiplier pack does not match a {nodes}-node grid with state dimension {state_dim}"
            )))
        }
    }
}

fn gamma_at(gamma: &[Vec<f64>], m: usize, dim: usize) -> Vec<f64> {
    gamma.get(m).cloned().unwrap_or_else(|| vec![0.0; dim])
}

/// `q_m = p_m + Σ_{j<m} γ_j w_j` and `q(b) = p_N + Σ_{j≤N} γ_j w_j + γ_N·atom`.
pub fn reconstruct_q(p: &[Vec<f64>], gamma: &[Vec<f64>], measure: &GridMeasure) -> (Vec<Vec<f64>>, Vec<f64>) {
    let dim = p.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; dim];
    let mut q = Vec::with_capacity(p.len());
    for (m, pm) in p.iter().enumerate() {
        q.push(pm.iter().zip(&acc).map(|(a, b)| a + b).collect());
        let g = gamma_at(gamma, m, dim);
        let w = measure.weights.get(m).copied().unwrap_or(0.0);
        for (a, gi) in acc.iter_mut().zip(&g) {
            *a += gi * w;
        }
    }
    let last = p.len().saturating_sub(1);
    let g_last = gamma_at(gamma, last, dim);
    let q_final = (0..dim)
        .map(|i| p[last][i] + acc[i] + g_last[i] * measure.endpoint_atom)
        .collect();
    (q, q_final)
}

/// Inverse of [`reconstruct_q`] on the node values: `p_m = q_m − Σ_{j<m} γ_j w_j`.
pub fn costate_from_q(q: &[Vec<f64>], gamma: &[Vec<f64>], measure: &GridMeasure) -> Vec<Vec<f64>> {
    let dim = q.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; dim];
    let mut p = Vec::with_capacity(q.len());
    for (m, qm) in q.iter().enumerate() {
        p.push(qm.iter().zip(&acc).map(|(a, b)| a - b).collect());
        let g = gamma_at(gamma, m, dim);
        let w = measure.weights.get(m).copied().unwrap_or(0.0);
        for (a, gi) in acc.iter_mut().zip(&g) {
            *a += gi * w;
        }
    }
    p
}

/// Node values `q_m` of the discrete adjoint (for `λ₀ = 1`): `q_m` is the
/// multiplier of the defect of step `m − 1`; `q_0` closes the recursion at
/// the first node.
pub fn discrete_adjoint(problem: &OCProblem, solution: &PenalizedSolution) -> Result<Vec<Vec<f64>>> {
    let lam = &solution.defect_multipliers;
    if lam.is_empty() {
        return Err(Error::Dimension("solution carries no defect multipliers".into()));
    }
    let pr = &solution.process;
    let n = problem.state_dim;
    let (t0, x0, u0) = (pr.grid[0], &pr.states[0], &pr.controls[0]);
    let dt = pr.grid[1] - pr.grid[0];
    let (jx, _) = problem.dynamics_jacobian(t0, x0, u0)?;
    let dg = problem.mixed_gradients(t0, x0, u0)?;
    let dh = problem.state_constraint_gradient(t0, x0)?;
    let dl = problem.running_cost_gradient(t0, x0, u0)?;
    let q1 = &lam[0];
    let mut q0 = q1.clone();
    for i in 0..n {
        for r in 0..n {
            q0[i] += dt * jx[r][i] * q1[r];
        }
        for (j, g) in dg.iter().enumerate() {
            q0[i] -= solution.mixed_multipliers[0][j] * g[i];
        }
        q0[i] -= solution.state_multipliers[0] * dh[i];
        q0[i] -= 0.5 * dt * dl[i];
    }
    let mut q = Vec::with_capacity(lam.len() + 1);
    q.push(q0);
    q.extend(lam.iter().cloned());
    Ok(q)
}

/// Costate nodes `p_m = λ₀ (q_m − Σ_{j<m} η_j ∇ₓh(t_j, x_j))`.
pub fn extract_costate(problem: &OCProblem, solution: &PenalizedSolution, lambda0: f64) -> Result<Vec<Vec<f64>>> {
    let q = discrete_adjoint(problem, solution)?;
    let implied = implied_gamma(problem, &solution.process)?;
    let mut measure = GridMeasure::zero(q.len());
    measure.weights.copy_from_slice(&solution.state_multipliers);
    let p = costate_from_q(&q, &implied, &measure);
    Ok(p.into_iter().map(|v| v.into_iter().map(|x| lambda0 * x).collect()).collect())
}

fn implied_gamma(problem: &OCProblem, process: &Process) -> Result<Vec<Vec<f64>>> {
    process
        .grid
        .iter()
        .zip(&process.states)
        .map(|(t, x)| problem.state_constraint_gradient(*t, x))
        .collect()
}

/// Measure from the penalty multipliers, with the activity weights `α_m`.
///
/// `α_m = η_m / (i c_m)` clamped to `[0, 1]`, forced to 1 where
/// `h > activity_tol` and to 0 where `h < −activity_tol`; `w_m = λ₀ i α_m c_m`.
/// The last node's mass becomes the endpoint atom.
pub fn extract_measure(
    problem: &OCProblem,
    solution: &PenalizedSolution,
    lambda0: f64,
    activity_tol: f64,
) -> Result<(GridMeasure, Vec<f64>)> {
    let pr = &solution.process;
    let n_steps = pr.n_steps();
    let i = solution.penalty;
    let dt = pr.grid[1] - pr.grid[0];
    let mut alpha = Vec::with_capacity(n_steps + 1);
    let mut weights = Vec::with_capacity(n_steps + 1);
    for m in 0..=n_steps {
        let c = if m == 0 || m == n_steps { 0.5 * dt } else { dt };
        let h = problem.state_constraint_at(pr.grid[m], &pr.states[m])?;
        let eta = solution.state_multipliers[m];
        let a = if h > activity_tol {
            1.0
        } else if h < -activity_tol || i <= 0.0 {
            0.0
        } else {
            (eta / (i * c)).clamp(0.0, 1.0)
        };
        alpha.push(a);
        weights.push(lambda0 * i * a * c);
    }
    let atom = weights[n_steps];
    weights[n_steps] = 0.0;
    let measure = GridMeasure {
        weights,
        endpoint_atom: atom,
    };
    if !measure.is_nonnegative() {
        return Err(Error::Unsupported("negative measure weight".into()));
    }
    Ok((measure, alpha))
}

/// Selection `γ_m ∈ hull(∂ₓh(t_m, x_m) bundle)` closest to `target_m`
/// (the gradient the discrete adjoint used). Empty when the support is empty.
pub fn extract_gamma(
    problem: &OCProblem,
    process: &Process,
    measure: &GridMeasure,
    targets: &[Vec<f64>],
    support_tol: f64,
    sampling: &Sampling,
) -> Result<Vec<Vec<f64>>> {
    if measure.support(support_tol).is_empty() {
        return Ok(Vec::new());
    }
    let n = problem.state_dim;
    let mut gamma = Vec::with_capacity(process.grid.len());
    for (m, (t, x)) in process.grid.iter().zip(&process.states).enumerate() {
        let s = sampling.with_seed(derive_seed(sampling.seed, 5, m as u64));
        let bundle = s.estimate(|y| problem.state_constraint_at(*t, y), x)?;
        let target = &targets[m];
        let fit = hull_distance(target, &bundle, Subtrahend::Cone(&ConeBundle::zero(vec![0.0; n])), 1.0);
        let mut g = vec![0.0; n];
        for (w, gen) in fit.a_weights.iter().zip(&bundle.generators) {
            for (gi, v) in g.iter_mut().zip(gen) {
                *gi += w * v;
            }
        }
        gamma.push(g);
    }
    Ok(gamma)
}

/// Extraction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub activity_tol: f64,
    pub support_tol: f64,
    pub sampling: Sampling,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            activity_tol: 1e-6,
            support_tol: 1e-8,
            sampling: Sampling::default(),
        }
    }
}

/// Full normalized pack from a converged solve.
pub fn assemble_pack(problem: &OCProblem, solution: &PenalizedSolution, opts: &ExtractOptions) -> Result<MultiplierPack> {
    let q_solver = discrete_adjoint(problem, solution)?;
    let implied = implied_gamma(problem, &solution.process)?;
    let (measure, _) = extract_measure(problem, solution, 1.0, opts.activity_tol)?;
    // p from the solver's own γ w = η ∇h
    let p = costate_from_q(&q_solver, &implied, &measure);
    let gamma = extract_gamma(problem, &solution.process, &measure, &implied, opts.support_tol, &opts.sampling)?;
    let (q, q_final) = reconstruct_q(&p, &gamma, &measure);
    Ok(MultiplierPack {
        lambda0: 1.0,
        grid: solution.grid.clone(),
        p,
        measure,
        gamma,
        q,
        q_final,
    }
    .normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{load_reference_problem, ReferenceId};
    use crate::solver::{penalty_continuation, solve_penalized, SolveOptions};
    use crate::transcription::discretize;
    use proptest::prelude::*;

    #[test]
    fn reconstruct_examples() {
        let p = vec![vec![1.0], vec![2.0], vec![3.0]];
        let (q, qb) = reconstruct_q(&p, &[], &GridMeasure::zero(3));
        assert_eq!(q, p);
        assert_eq!(qb, vec![3.0]);

        let (_, sol) = load_reference_problem(ReferenceId::B);
        let pack = sol.pack(200);
        assert!(pack.q.iter().all(|v| v[0] == 0.0));
        assert_eq!(pack.q_final, vec![-1.0]);

        // mass 0.5 at node 1 with γ = 2: q jumps after t_1
        let measure = GridMeasure {
            weights: vec![0.0, 0.5, 0.0],
            endpoint_atom: 0.0,
        };
        let (q, qb) = reconstruct_q(&vec![vec![0.0]; 3], &vec![vec![2.0]; 3], &measure);
        assert_eq!(q, vec![vec![0.0], vec![0.0], vec![1.0]]);
        assert_eq!(qb, vec![1.0]);
    }

    fn pack_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>, GridMeasure)> {
        (2usize..12).prop_flat_map(|nodes| {
            (
                prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 2), nodes),
                prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 2), nodes),
                prop::collection::vec(0.0..1.0f64, nodes),
                prop_oneof![Just(0.0), 0.0..1.0f64],
            )
                .prop_map(|(p, g, w, atom)| (p, g, GridMeasure { weights: w, endpoint_atom: atom }))
        })
    }

    proptest! {
        #[test]
        fn reconstruction_inverts((p, gamma, measure) in pack_strategy()) {
            let (q, _) = reconstruct_q(&p, &gamma, &measure);
            let back = costate_from_q(&q, &gamma, &measure);
            for (a, b) in back.iter().flatten().zip(p.iter().flatten()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn final_jump_iff_atom((p, gamma, mut measure) in pack_strategy()) {
            let last = p.len() - 1;
            measure.weights[last] = 0.0;
            let (q, qb) = reconstruct_q(&p, &gamma, &measure);
            let jump: f64 = qb.iter().zip(&q[last]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let expected = gamma[last].iter().fold(0.0f64, |a, g| a.max((g * measure.endpoint_atom).abs()));
            prop_assert!((jump - expected).abs() <= 1e-12);
            prop_assert_eq!(jump > 0.0, measure.endpoint_atom > 0.0 && gamma[last].iter().any(|g| *g != 0.0));
        }

        #[test]
        fn scaling_is_linear((p, gamma, measure) in pack_strategy(), c in 0.1..10.0f64) {
            let (q, qb) = reconstruct_q(&p, &gamma, &measure);
            let pack = MultiplierPack { lambda0: 1.0, grid: vec![0.0; p.len()], p, measure, gamma, q, q_final: qb };
            let scaled = pack.scaled(c).with_reconstructed_q();
            for (a, b) in scaled.q.iter().flatten().zip(pack.q.iter().flatten()) {
                prop_assert!((a - c * b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }

    fn solve(id: ReferenceId, n: usize) -> (OCProblem, PenalizedSolution) {
        let (p, _) = load_reference_problem(id);
        let nlp = discretize(&p, n).unwrap().with_penalty(1.0);
        let s = solve_penalized(&nlp, &vec![0.0; nlp.layout.len()], &SolveOptions::default()).unwrap();
        (p, s)
    }

    #[test]
    fn ref_a_extraction() {
        let (p, s) = solve(ReferenceId::A, 50);
        let pack = assemble_pack(&p, &s, &ExtractOptions::default()).unwrap();
        assert!((pack.normalization() - 1.0).abs() < 1e-12);
        assert!(pack.p.iter().all(|v| (v[0] + pack.lambda0).abs() <= 1e-4));
        assert_eq!(pack.measure.total(), 0.0);
        assert!(pack.gamma.is_empty());
    }

    #[test]
    fn ref_c_costate() {
        let (p, s) = solve(ReferenceId::C, 200);
        let costate = extract_costate(&p, &s, 1.0).unwrap();
        for (t, v) in s.grid.iter().zip(&costate) {
            assert!((v[0] - (t - 1.0).exp()).abs() <= 1e-2, "t={t} p={}", v[0]);
        }
        let (m, _) = extract_measure(&p, &s, 1.0, 1e-6).unwrap();
        assert_eq!(m.total(), 0.0);
    }

    #[test]
    fn ref_b_measure() {
        let (p, _) = load_reference_problem(ReferenceId::B);
        let trace = penalty_continuation(&p, 200, &SolveOptions::default(), None).unwrap();
        let s = &trace.last().unwrap().solution;
        let costate = extract_costate(&p, s, 1.0).unwrap();
        assert!(costate.iter().all(|v| v[0].abs() <= 1e-3));
        let (m, _) = extract_measure(&p, s, 1.0, 1e-6).unwrap();
        assert!((m.endpoint_atom - 1.0).abs() <= 0.05, "{}", m.endpoint_atom);
        let pack = assemble_pack(&p, s, &ExtractOptions::default()).unwrap();
        let last = pack.gamma.len() - 1;
        assert!((pack.gamma[last][0] + 1.0).abs() <= 1e-6);
    }

    #[test]
    fn smooth_gamma_selection() {
        // h = x² − 1 at x = 1: γ = 2
        let (mut p, _) = load_reference_problem(ReferenceId::B);
        p.state_constraint = crate::problem::Form::Quadratic {
            constant: -1.0,
            linear: vec![0.0, 0.0],
            matrix: vec![vec![0.0, 0.0], vec![0.0, 1.0]],
        }
        .into();
        let process = Process {
            grid: vec![0.0, 1.0, 2.0],
            states: vec![vec![1.0]; 3],
            controls: vec![vec![0.0]; 2],
        };
        let measure = GridMeasure {
            weights: vec![0.0, 1.0, 0.0],
            endpoint_atom: 0.0,
        };
        let g = extract_gamma(&p, &process, &measure, &vec![vec![2.0]; 3], 1e-8, &Sampling::default()).unwrap();
        assert!(g.iter().all(|v| (v[0] - 2.0).abs() <= 1e-4));
        let empty = extract_gamma(&p, &process, &GridMeasure::zero(3), &vec![vec![2.0]; 3], 1e-8, &Sampling::default());
        assert!(empty.unwrap().is_empty());
    }
}
