//! Explicit-Euler transcription of the penalized problem
//!
//! ```text
//! minimize  l(x_0, x_N) + Σ running + i · Σ_m c_m h⁺(t_m, x_m) + w · Σ_m Δt |u_m − anchor_m|₁
//! s.t.      x_{m+1} − x_m − Δt f(t_m, x_m, u_m) = 0
//!           g_j(t_m, x_m, u_m) ≤ 0,  x_0 ∈ E_a,  x_N ∈ E_b
//! ```
//!
//! `c_m` are trapezoidal weights; the running cost uses a per-step trapezoid
//! with the step's control.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{uniform_grid, OCProblem, Process};

/// Ekeland anchor: reference controls and the weight of the L¹ distance to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub controls: Vec<Vec<f64>>,
    pub weight: f64,
}

/// Index layout of the decision vector `(x_0, …, x_N, u_0, …, u_{N−1})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub state_dim: usize,
    pub control_dim: usize,
    pub n_steps: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        (self.n_steps + 1) * self.state_dim + self.n_steps * self.control_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, m: usize) -> usize {
        m * self.state_dim
    }

    pub fn u(&self, m: usize) -> usize {
        (self.n_steps + 1) * self.state_dim + m * self.control_dim
    }

    pub fn state<'z>(&self, z: &'z [f64], m: usize) -> &'z [f64] {
        &z[self.x(m)..self.x(m) + self.state_dim]
    }

    pub fn control<'z>(&self, z: &'z [f64], m: usize) -> &'z [f64] {
        &z[self.u(m)..self.u(m) + self.control_dim]
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteNLP {
    pub problem: OCProblem,
    pub grid: Vec<f64>,
    pub layout: Layout,
    /// Penalty index `i`.
    pub penalty: f64,
    pub anchor: Option<Anchor>,
}

/// Uniform grid with `n_steps` Euler steps.
pub fn discretize(problem: &OCProblem, n_steps: usize) -> Result<DiscreteNLP> {
    if n_steps < 2 {
        return Err(Error::Dimension(format!("need at least 2 steps, got {n_steps}")));
    }
    Ok(DiscreteNLP {
        problem: problem.clone(),
        grid: uniform_grid(problem.horizon, n_steps),
        layout: Layout {
            state_dim: problem.state_dim,
            control_dim: problem.control_dim,
            n_steps,
        },
        penalty: 0.0,
        anchor: None,
    })
}

impl DiscreteNLP {
    pub fn with_penalty(mut self, penalty: f64) -> Self {
        self.penalty = penalty;
        self
    }

    pub fn with_anchor(mut self, anchor: Option<Anchor>) -> Self {
        self.anchor = anchor;
        self
    }

    pub fn n_steps(&self) -> usize {
        self.layout.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    /// Trapezoidal weights `c_m` on the nodes.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let n = self.n_steps();
        let dt = self.dt();
        (0..=n).map(|m| if m == 0 || m == n { 0.5 * dt } else { dt }).collect()
    }

    /// Euler defects `x_{m+1} − x_m − Δt f(t_m, x_m, u_m)`, step-major.
    pub fn defects(&self, z: &[f64]) -> Result<Vec<f64>> {
        let l = self.layout;
        let mut out = Vec::with_capacity(l.n_steps * l.state_dim);
        for m in 0..l.n_steps {
            let dt = self.grid[m + 1] - self.grid[m];
            let f = self.problem.dynamics_at(self.grid[m], l.state(z, m), l.control(z, m))?;
            for i in 0..l.state_dim {
                out.push(l.state(z, m + 1)[i] - l.state(z, m)[i] - dt * f[i]);
            }
        }
        Ok(out)
    }

    pub fn endpoint_cost(&self, z: &[f64]) -> Result<f64> {
        let l = self.layout;
        self.problem.endpoint_cost_at(l.state(z, 0), l.state(z, l.n_steps))
    }

    pub fn running_cost(&self, z: &[f64]) -> Result<f64> {
        if self.problem.running_cost.is_none() {
            return Ok(0.0);
        }
        let l = self.layout;
        let mut acc = 0.0;
        for m in 0..l.n_steps {
            let dt = self.grid[m + 1] - self.grid[m];
            let u = l.control(z, m);
            acc += 0.5
                * dt
                * (self.problem.running_cost_at(self.grid[m], l.state(z, m), u)?
                    + self.problem.running_cost_at(self.grid[m + 1], l.state(z, m + 1), u)?);
        }
        Ok(acc)
    }

    /// `Σ_m c_m h⁺(t_m, x_m)`.
    pub fn state_violation_integral(&self, z: &[f64]) -> Result<f64> {
        let c = self.quadrature_weights();
        let mut acc = 0.0;
        for (m, cm) in c.iter().enumerate() {
            acc += cm * self.problem.state_constraint_at(self.grid[m], self.layout.state(z, m))?.max(0.0);
        }
        Ok(acc)
    }

    /// `max_m h⁺(t_m, x_m)`.
    pub fn max_state_violation(&self, z: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for m in 0..=self.n_steps() {
            worst = worst.max(self.problem.state_constraint_at(self.grid[m], self.layout.state(z, m))?);
        }
        Ok(worst)
    }

    pub fn anchor_term(&self, z: &[f64]) -> f64 {
        match &self.anchor {
            None => 0.0,
            Some(a) => {
                let mut acc = 0.0;
                for m in 0..self.n_steps() {
                    let dt = self.grid[m + 1] - self.grid[m];
                    let u = self.layout.control(z, m);
                    acc += dt * u.iter().zip(&a.controls[m]).map(|(x, y)| (x - y).abs()).sum::<f64>();
                }
                a.weight * acc
            }
        }
    }

    /// Decision vector from a process on the same grid.
    pub fn pack_process(&self, process: &Process) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.layout.len());
        for x in &process.states {
            z.extend_from_slice(x);
        }
        for u in &process.controls {
            z.extend_from_slice(u);
        }
        z
    }

    pub fn process(&self, z: &[f64]) -> Process {
        let l = self.layout;
        Process {
            grid: self.grid.clone(),
            states: (0..=l.n_steps).map(|m| l.state(z, m).to_vec()).collect(),
            controls: (0..l.n_steps).map(|m| l.control(z, m).to_vec()).collect(),
        }
    }
}

/// Penalized objective of `nlp` at the decision vector `z`.
pub fn penalized_objective(nlp: &DiscreteNLP, z: &[f64]) -> Result<f64> {
    if z.len() != nlp.layout.len() {
        return Err(Error::Dimension(format!(
            "decision vector has {} entries, layout expects {}",
            z.len(),
            nlp.layout.len()
        )));
    }
    let mut value = nlp.endpoint_cost(z)? + nlp.running_cost(z)?;
    if nlp.penalty != 0.0 {
        value += nlp.penalty * nlp.state_violation_integral(z)?;
    }
    Ok(value + nlp.anchor_term(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{load_reference_problem, ReferenceId};

    #[test]
    fn grid_arithmetic() {
        let (a, _) = load_reference_problem(ReferenceId::A);
        let nlp = discretize(&a, 4).unwrap();
        assert_eq!(nlp.dt(), 0.25);
        assert_eq!(nlp.grid.len(), 5);
        assert_eq!(nlp.layout.len(), 5 + 4);
        assert!(discretize(&a, 1).is_err());
    }

    #[test]
    fn analytic_defects() {
        let (b, sb) = load_reference_problem(ReferenceId::B);
        let nlp = discretize(&b, 200).unwrap();
        let d = nlp.defects(&nlp.pack_process(&sb.process(200))).unwrap();
        assert!(d.iter().all(|v| v.abs() <= 1e-12));

        let (c, sc) = load_reference_problem(ReferenceId::C);
        let nlp = discretize(&c, 200).unwrap();
        let d = nlp.defects(&nlp.pack_process(&sc.process(200))).unwrap();
        let worst = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(worst <= 2.5e-3 && worst > 0.0, "{worst}");
    }

    #[test]
    fn objective_examples() {
        let (a, sa) = load_reference_problem(ReferenceId::A);
        let z = {
            let nlp = discretize(&a, 50).unwrap();
            nlp.pack_process(&sa.process(50))
        };
        for i in [0.0, 1.0, 1e4] {
            let nlp = discretize(&a, 50).unwrap().with_penalty(i);
            assert!((penalized_objective(&nlp, &z).unwrap() + 1.0).abs() < 1e-12);
        }

        // x = 1 − t on [0, 2] violates x ≥ 0 on (1, 2]: ∫ h⁺ = 1/2
        let (b, _) = load_reference_problem(ReferenceId::B);
        let nlp = discretize(&b, 200).unwrap().with_penalty(1.0);
        let proc_ = Process {
            grid: nlp.grid.clone(),
            states: nlp.grid.iter().map(|t| vec![1.0 - t]).collect(),
            controls: vec![vec![-1.0]; 200],
        };
        let v = penalized_objective(&nlp, &nlp.pack_process(&proc_)).unwrap();
        assert!((v + 0.5).abs() < 1e-12, "{v}");

        // anchor: u ≡ 0 against anchor ≡ 1 on [0, 1] adds the weight
        let nlp = discretize(&a, 10).unwrap().with_anchor(Some(Anchor {
            controls: vec![vec![1.0]; 10],
            weight: 0.3,
        }));
        let z = vec![0.0; nlp.layout.len()];
        assert!((nlp.anchor_term(&z) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_is_second_order() {
        // smooth positive integrand h = x along x̄ = 1 − e^{−t}
        let (mut c, sc) = load_reference_problem(ReferenceId::C);
        c.state_constraint = crate::problem::Form::linear(0.0, vec![0.0, 1.0]).into();
        let exact = 1.0 - (1.0 - (-1.0f64).exp());
        let err = |n: usize| {
            let nlp = discretize(&c, n).unwrap();
            (nlp.state_violation_integral(&nlp.pack_process(&sc.process(n))).unwrap() - exact).abs()
        };
        let order = (err(50) / err(100)).log2();
        assert!(order >= 1.9, "{order}");
    }

    proptest::proptest! {
        #[test]
        fn penalty_is_monotone(
            states in proptest::collection::vec(-2.0f64..2.0, 11),
            controls in proptest::collection::vec(-1.0f64..1.0, 10),
            i in 0.0f64..100.0,
            j in 0.0f64..100.0,
        ) {
            let (b, _) = load_reference_problem(ReferenceId::B);
            let nlp = discretize(&b, 10).unwrap();
            let proc_ = Process {
                grid: nlp.grid.clone(),
                states: states.iter().map(|x| vec![*x]).collect(),
                controls: controls.iter().map(|u| vec![*u]).collect(),
            };
            let z = nlp.pack_process(&proc_);
            let (lo, hi) = (i.min(j), i.max(j));
            let a = penalized_objective(&nlp.clone().with_penalty(lo), &z).unwrap();
            let c = penalized_objective(&nlp.with_penalty(hi), &z).unwrap();
            proptest::prop_assert!(a <= c + 1e-12 * (1.0 + c.abs()));
        }
    }
}
