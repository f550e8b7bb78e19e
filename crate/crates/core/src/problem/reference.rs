//! Reference problems with closed-form optimal processes and multipliers.
//!
//! * `REF-A`: `ẋ = u`, `|u| ≤ 1`, `x(0) = 0`, minimize `x(1)`; `h ≡ −1`.
//!   Optimal `ū ≡ −1`, `x̄ = −t`, `p ≡ q ≡ −1`, `μ = 0`.
//! * `REF-B`: `ẋ = u`, `|u| ≤ 1`, `x(0) = 1`, minimize `x(2)` subject to `x ≥ 0`.
//!   Optimal `x̄ = max(1 − t, 0)`, `p ≡ 0`, `γ ≡ −1`, `μ = δ_{t=2}`.
//! * `REF-C`: `ẋ = u`, `0 ≤ u ≤ 1 − x`, `x(0) = 0`, minimize `−x(1)`; `h ≡ −1`.
//!   Optimal `x̄ = 1 − e^{−t}`, `ū = e^{−t}`, `p ≡ q = e^{t−1}`, `μ = 0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{uniform_grid, EndpointDescriptor, EndpointSet, Evaluator, Form, OCProblem, Process};
use crate::error::Error;
use crate::multipliers::{reconstruct_q, GridMeasure, MultiplierPack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReferenceId {
    #[serde(rename = "REF-A")]
    A,
    #[serde(rename = "REF-B")]
    B,
    #[serde(rename = "REF-C")]
    C,
}

impl ReferenceId {
    pub const ALL: [ReferenceId; 3] = [ReferenceId::A, ReferenceId::B, ReferenceId::C];

    pub fn label(self) -> &'static str {
        match self {
            ReferenceId::A => "REF-A",
            ReferenceId::B => "REF-B",
            ReferenceId::C => "REF-C",
        }
    }
}

impl fmt::Display for ReferenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ReferenceId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_uppercase().as_str() {
            "REF-A" | "A" => Ok(ReferenceId::A),
            "REF-B" | "B" => Ok(ReferenceId::B),
            "REF-C" | "C" => Ok(ReferenceId::C),
            _ => Err(Error::UnknownReference(s.to_string())),
        }
    }
}

/// Closed-form optimal process and multipliers (λ₀ = 1, unnormalized).
#[derive(Debug, Clone, Copy)]
pub struct ReferenceSolution {
    pub id: ReferenceId,
    pub optimal_cost: f64,
    pub state: fn(f64) -> f64,
    pub control: fn(f64) -> f64,
    pub costate: fn(f64) -> f64,
    pub gamma: f64,
    pub endpoint_atom: f64,
    horizon: (f64, f64),
}

impl ReferenceSolution {
    /// Analytic states at the nodes; controls are the analytic control at
    /// the left node of each step.
    pub fn process(&self, n_steps: usize) -> Process {
        let grid = uniform_grid(self.horizon, n_steps);
        let states = grid.iter().map(|&t| vec![(self.state)(t)]).collect();
        let controls = grid[..n_steps].iter().map(|&t| vec![(self.control)(t)]).collect();
        Process { grid, states, controls }
    }

    pub fn pack(&self, n_steps: usize) -> MultiplierPack {
        let grid = uniform_grid(self.horizon, n_steps);
        let p: Vec<Vec<f64>> = grid.iter().map(|&t| vec![(self.costate)(t)]).collect();
        let gamma = vec![vec![self.gamma]; n_steps + 1];
        let measure = GridMeasure {
            weights: vec![0.0; n_steps + 1],
            endpoint_atom: self.endpoint_atom,
        };
        let (q, q_final) = reconstruct_q(&p, &gamma, &measure);
        MultiplierPack {
            lambda0: 1.0,
            grid,
            p,
            measure,
            gamma,
            q,
            q_final,
        }
    }
}

fn lin(constant: f64, coeffs: &[f64]) -> Evaluator {
    Form::linear(constant, coeffs.to_vec()).into()
}

fn box_control(lo: f64, hi: f64) -> Vec<Evaluator> {
    // u - hi ≤ 0, lo - u ≤ 0 over (t, x, u)
    vec![lin(-hi, &[0.0, 0.0, 1.0]), lin(lo, &[0.0, 0.0, -1.0])]
}

/// Reference problem and its analytic solution.
pub fn load_reference_problem(id: ReferenceId) -> (OCProblem, ReferenceSolution) {
    let velocity_is_control = vec![lin(0.0, &[0.0, 0.0, 1.0])];
    match id {
        ReferenceId::A => (
            OCProblem {
                name: id.label().into(),
                horizon: (0.0, 1.0),
                state_dim: 1,
                control_dim: 1,
                dynamics: velocity_is_control,
                endpoint_cost: lin(0.0, &[0.0, 1.0]),
                running_cost: None,
                state_constraint: Form::constant(-1.0).into(),
                mixed_constraints: box_control(-1.0, 1.0),
                endpoint_set: EndpointSet {
                    initial: EndpointDescriptor::Point { point: vec![0.0] },
                    terminal: EndpointDescriptor::Free,
                },
                tube_radius: 0.1,
            },
            ReferenceSolution {
                id,
                optimal_cost: -1.0,
                state: |t| -t,
                control: |_| -1.0,
                costate: |_| -1.0,
                gamma: 0.0,
                endpoint_atom: 0.0,
                horizon: (0.0, 1.0),
            },
        ),
        ReferenceId::B => (
            OCProblem {
                name: id.label().into(),
                horizon: (0.0, 2.0),
                state_dim: 1,
                control_dim: 1,
                dynamics: velocity_is_control,
                endpoint_cost: lin(0.0, &[0.0, 1.0]),
                running_cost: None,
                state_constraint: lin(0.0, &[0.0, -1.0]),
                mixed_constraints: box_control(-1.0, 1.0),
                endpoint_set: EndpointSet {
                    initial: EndpointDescriptor::Point { point: vec![1.0] },
                    terminal: EndpointDescriptor::Free,
                },
                tube_radius: 0.1,
            },
            ReferenceSolution {
                id,
                optimal_cost: 0.0,
                state: |t| (1.0 - t).max(0.0),
                // left-closed steps: the boundary arc starts at t = 1
                control: |t| if t < 1.0 { -1.0 } else { 0.0 },
                costate: |_| 0.0,
                gamma: -1.0,
                endpoint_atom: 1.0,
                horizon: (0.0, 2.0),
            },
        ),
        ReferenceId::C => (
            OCProblem {
                name: id.label().into(),
                horizon: (0.0, 1.0),
                state_dim: 1,
                control_dim: 1,
                dynamics: velocity_is_control,
                endpoint_cost: lin(0.0, &[0.0, -1.0]),
                running_cost: None,
                state_constraint: Form::constant(-1.0).into(),
                mixed_constraints: vec![lin(-1.0, &[0.0, 1.0, 1.0]), lin(0.0, &[0.0, 0.0, -1.0])],
                endpoint_set: EndpointSet {
                    initial: EndpointDescriptor::Point { point: vec![0.0] },
                    terminal: EndpointDescriptor::Free,
                },
                tube_radius: 0.1,
            },
            ReferenceSolution {
                id,
                optimal_cost: -(1.0 - (-1.0f64).exp()),
                state: |t| 1.0 - (-t).exp(),
                control: |t| (-t).exp(),
                costate: |t| (t - 1.0).exp(),
                gamma: 0.0,
                endpoint_atom: 0.0,
                horizon: (0.0, 1.0),
            },
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::mixed_residual;

    #[test]
    fn analytic_processes_are_admissible() {
        for id in ReferenceId::ALL {
            let (p, sol) = load_reference_problem(id);
            let proc_ = sol.process(200);
            for m in 0..=200 {
                let t = proc_.grid[m];
                assert!(p.state_constraint_at(t, &proc_.states[m]).unwrap() <= 1e-12);
                if m < 200 {
                    let (_, g) = mixed_residual(&p, t, &proc_.states[m], &proc_.controls[m]).unwrap();
                    assert!(g <= 1e-12, "{id} node {m}: {g}");
                }
            }
            assert!(p.endpoint_set.initial.contains(&proc_.states[0], 1e-12));
        }
    }

    #[test]
    fn analytic_values() {
        let (_, a) = load_reference_problem(ReferenceId::A);
        assert_eq!((a.control)(0.3), -1.0);
        let (_, b) = load_reference_problem(ReferenceId::B);
        assert_eq!((b.state)(1.5), 0.0);
        let (_, c) = load_reference_problem(ReferenceId::C);
        assert!(((c.state)(1.0) - 0.632_120_558_828_557_7).abs() < 1e-12);
    }

    #[test]
    fn ref_b_pack_has_endpoint_jump() {
        let (_, b) = load_reference_problem(ReferenceId::B);
        let pack = b.pack(200);
        assert!(pack.q[..200].iter().all(|q| q[0] == 0.0));
        assert_eq!(pack.q_final, vec![-1.0]);
    }

    #[test]
    fn parse_ids() {
        assert_eq!("ref-b".parse::<ReferenceId>().unwrap(), ReferenceId::B);
        assert!("REF-D".parse::<ReferenceId>().is_err());
    }
}
