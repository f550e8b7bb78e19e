//! Problem data for state- and mixed-constrained optimal control.
//!
//! ```text
//! minimize   l(x(a), x(b)) [+ ∫ L(t, x, u) dt]
//! subject to ẋ = f(t, x, u),  h(t, x) ≤ 0,  g_j(t, x, u) ≤ 0,  x(a) ∈ E_a,  x(b) ∈ E_b
//! ```
//!
//! The mixed-constraint set is `S(t) = {(x, u) : g_j(t, x, u) ≤ 0 for all j}`.

mod form;
pub mod reference;

pub use form::{CustomFn, Evaluator, Form};
pub use reference::{load_reference_problem, ReferenceId, ReferenceSolution};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed endpoint set for one end of the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EndpointDescriptor {
    Point { point: Vec<f64> },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// `{offset + Σ c_j basis[j]}`; `basis` holds column vectors.
    Affine { offset: Vec<f64>, basis: Vec<Vec<f64>> },
    Free,
}

impl EndpointDescriptor {
    /// Euclidean distance from `x` to the set.
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            EndpointDescriptor::Point { point } => norm(&sub(x, point)),
            EndpointDescriptor::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(xi, (lo, hi))| {
                    let d = if xi < lo { lo - xi } else if xi > hi { xi - hi } else { 0.0 };
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            EndpointDescriptor::Affine { offset, basis } => {
                let d = sub(x, offset);
                let comp = orthogonal_complement(basis, x.len());
                comp.iter().map(|c| dot(c, &d).powi(2)).sum::<f64>().sqrt()
            }
            EndpointDescriptor::Free => 0.0,
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.distance(x) <= tol
    }

    /// Componentwise bounds implied by the descriptor (point and box only).
    pub fn bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            EndpointDescriptor::Point { point } => Some((point.clone(), point.clone())),
            EndpointDescriptor::Box { lower, upper } => Some((lower.clone(), upper.clone())),
            _ => None,
        }
    }

    fn defects(&self, n: usize, label: &str) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            EndpointDescriptor::Point { point } => {
                if point.len() != n {
                    out.push(format!("{label} point has dimension {} (expected {n})", point.len()));
                }
            }
            EndpointDescriptor::Box { lower, upper } => {
                if lower.len() != n || upper.len() != n {
                    out.push(format!("{label} box bounds have wrong dimension (expected {n})"));
                } else if lower.iter().zip(upper).any(|(l, u)| l > u) {
                    out.push(format!("{label} box bounds not ordered"));
                }
            }
            EndpointDescriptor::Affine { offset, basis } => {
                if offset.len() != n || basis.iter().any(|b| b.len() != n) {
                    out.push(format!("{label} affine data has wrong dimension (expected {n})"));
                } else if gram_schmidt(basis).len() != basis.len() {
                    out.push(format!("{label} affine basis is not of full column rank"));
                }
            }
            EndpointDescriptor::Free => {}
        }
        out
    }
}

/// Endpoint set `E = E_a × E_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSet {
    pub initial: EndpointDescriptor,
    #[serde(rename = "final")]
    pub terminal: EndpointDescriptor,
}

#[derive(Debug, Clone)]
pub struct OCProblem {
    pub name: String,
    pub horizon: (f64, f64),
    pub state_dim: usize,
    pub control_dim: usize,
    /// One evaluator per state component, over `(t, x, u)`.
    pub dynamics: Vec<Evaluator>,
    /// Over `(x_a, x_b)`.
    pub endpoint_cost: Evaluator,
    /// Over `(t, x, u)`; absent for the pure endpoint-cost problem.
    pub running_cost: Option<Evaluator>,
    /// Over `(t, x)`.
    pub state_constraint: Evaluator,
    /// Each over `(t, x, u)`.
    pub mixed_constraints: Vec<Evaluator>,
    pub endpoint_set: EndpointSet,
    pub tube_radius: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub defects: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.defects.is_empty()
    }
}

pub const UNBOUNDED_CONTROL_DEFECT: &str = "control set unbounded on tube ([CS*ε] unverifiable)";
const UNBOUNDED_PROBE: f64 = 1e6;

pub(crate) fn txu(t: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(1 + x.len() + u.len());
    v.push(t);
    v.extend_from_slice(x);
    v.extend_from_slice(u);
    v
}

fn checked(what: &str, value: f64, point: &[f64]) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Evaluation {
            what: what.to_string(),
            point: point.to_vec(),
        })
    }
}

fn checked_vec(what: &str, g: Vec<f64>, point: &[f64]) -> Result<Vec<f64>> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(g)
    } else {
        Err(Error::Evaluation {
            what: format!("{what} gradient"),
            point: point.to_vec(),
        })
    }
}

impl OCProblem {
    pub fn step(&self, n_steps: usize) -> f64 {
        (self.horizon.1 - self.horizon.0) / n_steps as f64
    }

    pub fn dynamics_at(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let v = txu(t, x, u);
        self.dynamics
            .iter()
            .map(|f| checked("dynamics", f.value(&v), &v))
            .collect()
    }

    /// Jacobians `(∂f/∂x, ∂f/∂u)` as row-major `n × n` and `n × k`.
    pub fn dynamics_jacobian(&self, t: f64, x: &[f64], u: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let v = txu(t, x, u);
        let n = self.state_dim;
        let mut jx = Vec::with_capacity(n);
        let mut ju = Vec::with_capacity(n);
        for f in &self.dynamics {
            let g = checked_vec("dynamics", f.gradient(&v), &v)?;
            jx.push(g[1..1 + n].to_vec());
            ju.push(g[1 + n..].to_vec());
        }
        Ok((jx, ju))
    }

    pub fn endpoint_cost_at(&self, xa: &[f64], xb: &[f64]) -> Result<f64> {
        let v = [xa, xb].concat();
        checked("endpoint cost", self.endpoint_cost.value(&v), &v)
    }

    /// Gradient over the stacked `(x_a, x_b)`.
    pub fn endpoint_cost_gradient(&self, xa: &[f64], xb: &[f64]) -> Result<Vec<f64>> {
        let v = [xa, xb].concat();
        checked_vec("endpoint cost", self.endpoint_cost.gradient(&v), &v)
    }

    pub fn running_cost_at(&self, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
        match &self.running_cost {
            None => Ok(0.0),
            Some(l) => {
                let v = txu(t, x, u);
                checked("running cost", l.value(&v), &v)
            }
        }
    }

    /// Gradient of the running cost in `(x, u)`.
    pub fn running_cost_gradient(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        match &self.running_cost {
            None => Ok(vec![0.0; x.len() + u.len()]),
            Some(l) => {
                let v = txu(t, x, u);
                let g = checked_vec("running cost", l.gradient(&v), &v)?;
                Ok(g[1..].to_vec())
            }
        }
    }

    pub fn state_constraint_at(&self, t: f64, x: &[f64]) -> Result<f64> {
        let v = txu(t, x, &[]);
        checked("state constraint", self.state_constraint.value(&v), &v)
    }

    pub fn state_constraint_gradient(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let v = txu(t, x, &[]);
        let g = checked_vec("state constraint", self.state_constraint.gradient(&v), &v)?;
        Ok(g[1..].to_vec())
    }

    pub fn mixed_values(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let v = txu(t, x, u);
        self.mixed_constraints
            .iter()
            .map(|g| checked("mixed constraint", g.value(&v), &v))
            .collect()
    }

    /// Gradients of every `g_j` in `(x, u)`.
    pub fn mixed_gradients(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<Vec<f64>>> {
        let v = txu(t, x, u);
        self.mixed_constraints
            .iter()
            .map(|g| Ok(checked_vec("mixed constraint", g.gradient(&v), &v)?[1..].to_vec()))
            .collect()
    }

    /// Reads a problem document: either an inline problem or `{"reference": "REF-B"}`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: ProblemDocument = serde_json::from_str(text)?;
        doc.into_problem()
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = ProblemFile::try_from(self)?;
        Ok(serde_json::to_string_pretty(&file)?)
    }
}

/// Structural checks; defects are data, never failures.
pub fn validate_problem(problem: &OCProblem) -> ValidationReport {
    let mut defects = Vec::new();
    let (a, b) = problem.horizon;
    let (n, k) = (problem.state_dim, problem.control_dim);
    if !(a < b) {
        defects.push("horizon not increasing".to_string());
    }
    if n == 0 {
        defects.push("state dimension must be positive".to_string());
    }
    if k == 0 {
        defects.push("control dimension must be positive".to_string());
    }
    if !(problem.tube_radius > 0.0) {
        defects.push("tube radius must be positive".to_string());
    }
    if problem.dynamics.len() != n {
        defects.push(format!(
            "dynamics has {} components (expected {n})",
            problem.dynamics.len()
        ));
    }
    let txu_len = 1 + n + k;
    let mut check = |label: String, e: &Evaluator, expected: usize| {
        if let Some(f) = e.form() {
            if !form_fits(f, expected) {
                defects.push(format!("{label} does not accept {expected} arguments"));
            }
        }
    };
    for (i, f) in problem.dynamics.iter().enumerate() {
        check(format!("dynamics[{i}]"), f, txu_len);
    }
    for (j, g) in problem.mixed_constraints.iter().enumerate() {
        check(format!("mixed_constraints[{j}]"), g, txu_len);
    }
    if let Some(l) = &problem.running_cost {
        check("running_cost".into(), l, txu_len);
    }
    check("state_constraint".into(), &problem.state_constraint, 1 + n);
    check("endpoint_cost".into(), &problem.endpoint_cost, 2 * n);
    defects.extend(problem.endpoint_set.initial.defects(n, "initial endpoint"));
    defects.extend(problem.endpoint_set.terminal.defects(n, "final endpoint"));

    if problem.mixed_constraints.is_empty() || (defects.is_empty() && control_set_escapes(problem)) {
        defects.push(UNBOUNDED_CONTROL_DEFECT.to_string());
    }
    ValidationReport { defects }
}

fn form_fits(f: &Form, expected: usize) -> bool {
    match f {
        Form::Constant { .. } => true,
        Form::Linear { coeffs, .. } => coeffs.len() == expected,
        Form::Quadratic { .. } => f.arity() == Some(expected),
        Form::Bilinear { .. } => f.arity().is_none_or(|a| a <= expected),
        Form::Max { terms } => terms.iter().all(|t| form_fits(t, expected)),
    }
}

/// Probes `u = ±R e_c` at the initial time; feasibility there means the
/// control set is not bounded by the mixed constraints.
fn control_set_escapes(problem: &OCProblem) -> bool {
    let t = problem.horizon.0;
    let x = match &problem.endpoint_set.initial {
        EndpointDescriptor::Point { point } => point.clone(),
        _ => vec![0.0; problem.state_dim],
    };
    for c in 0..problem.control_dim {
        for sign in [-1.0, 1.0] {
            let mut u = vec![0.0; problem.control_dim];
            u[c] = sign * UNBOUNDED_PROBE;
            if let Ok(g) = problem.mixed_values(t, &x, &u) {
                if g.iter().all(|v| *v <= 0.0) {
                    return true;
                }
            }
        }
    }
    false
}

/// All `g_j(t, x, u)` and their maximum; `(x, u) ∈ S(t)` iff the maximum is `≤ 0`.
pub fn mixed_residual(problem: &OCProblem, t: f64, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, f64)> {
    let g = problem.mixed_values(t, x, u)?;
    let max = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((g, max))
}

/// A state trajectory on a grid with piecewise-constant controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Process {
    pub grid: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

impl Process {
    pub fn n_steps(&self) -> usize {
        self.controls.len()
    }

    pub fn check_shape(&self, problem: &OCProblem) -> Result<()> {
        let n_steps = self.controls.len();
        if n_steps == 0 || self.grid.len() != n_steps + 1 || self.states.len() != n_steps + 1 {
            return Err(Error::Dimension(format!(
                "process has {} grid points, {} states, {} controls",
                self.grid.len(),
                self.states.len(),
                n_steps
            )));
        }
        if self.states.iter().any(|x| x.len() != problem.state_dim)
            || self.controls.iter().any(|u| u.len() != problem.control_dim)
        {
            return Err(Error::Dimension("process vector sizes do not match the problem".into()));
        }
        Ok(())
    }

    /// Largest explicit-Euler defect `|x_{m+1} − x_m − Δt f(t_m, x_m, u_m)|∞`.
    pub fn max_dynamics_defect(&self, problem: &OCProblem) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for m in 0..self.n_steps() {
            let dt = self.grid[m + 1] - self.grid[m];
            let f = problem.dynamics_at(self.grid[m], &self.states[m], &self.controls[m])?;
            for i in 0..problem.state_dim {
                let d = self.states[m + 1][i] - self.states[m][i] - dt * f[i];
                worst = worst.max(d.abs());
            }
        }
        Ok(worst)
    }

    /// L¹ distance between two piecewise-constant controls on the same grid.
    pub fn control_l1_distance(&self, other: &Process) -> f64 {
        (0..self.n_steps())
            .map(|m| {
                let dt = self.grid[m + 1] - self.grid[m];
                dt * norm(&sub(&self.controls[m], &other.controls[m]))
            })
            .sum()
    }
}

pub fn uniform_grid(horizon: (f64, f64), n_steps: usize) -> Vec<f64> {
    let dt = (horizon.1 - horizon.0) / n_steps as f64;
    (0..=n_steps)
        .map(|m| if m == n_steps { horizon.1 } else { horizon.0 + m as f64 * dt })
        .collect()
}

// ---- problem documents ----

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProblemFile {
    #[serde(default)]
    name: String,
    horizon: (f64, f64),
    state_dim: usize,
    control_dim: usize,
    dynamics: Vec<Form>,
    endpoint_cost: Form,
    #[serde(default)]
    running_cost: Option<Form>,
    state_constraint: Form,
    #[serde(default)]
    mixed_constraints: Vec<Form>,
    endpoint_set: EndpointSet,
    tube_radius: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ProblemDocument {
    Reference { reference: String },
    Inline(ProblemFile),
}

impl ProblemDocument {
    fn into_problem(self) -> Result<OCProblem> {
        match self {
            ProblemDocument::Reference { reference } => {
                let id: ReferenceId = reference.parse()?;
                Ok(load_reference_problem(id).0)
            }
            ProblemDocument::Inline(f) => Ok(OCProblem {
                name: f.name,
                horizon: f.horizon,
                state_dim: f.state_dim,
                control_dim: f.control_dim,
                dynamics: f.dynamics.into_iter().map(Evaluator::Form).collect(),
                endpoint_cost: Evaluator::Form(f.endpoint_cost),
                running_cost: f.running_cost.map(Evaluator::Form),
                state_constraint: Evaluator::Form(f.state_constraint),
                mixed_constraints: f.mixed_constraints.into_iter().map(Evaluator::Form).collect(),
                endpoint_set: f.endpoint_set,
                tube_radius: f.tube_radius,
            }),
        }
    }
}

impl TryFrom<&OCProblem> for ProblemFile {
    type Error = Error;

    fn try_from(p: &OCProblem) -> Result<Self> {
        let form = |e: &Evaluator| {
            e.form()
                .cloned()
                .ok_or_else(|| Error::Unsupported(format!("closure evaluator {e:?} cannot be serialized")))
        };
        Ok(ProblemFile {
            name: p.name.clone(),
            horizon: p.horizon,
            state_dim: p.state_dim,
            control_dim: p.control_dim,
            dynamics: p.dynamics.iter().map(form).collect::<Result<_>>()?,
            endpoint_cost: form(&p.endpoint_cost)?,
            running_cost: p.running_cost.as_ref().map(form).transpose()?,
            state_constraint: form(&p.state_constraint)?,
            mixed_constraints: p.mixed_constraints.iter().map(form).collect::<Result<_>>()?,
            endpoint_set: p.endpoint_set.clone(),
            tube_radius: p.tube_radius,
        })
    }
}

// ---- small vector helpers shared across the crate ----

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Orthonormal basis of the span of `vectors` (modified Gram–Schmidt).
pub(crate) fn gram_schmidt(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for q in &out {
            let c = dot(q, &w);
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi -= c * qi;
            }
        }
        let nw = norm(&w);
        if nw > 1e-10 * norm(v).max(1.0) {
            out.push(w.into_iter().map(|x| x / nw).collect());
        }
    }
    out
}

/// Orthonormal basis of the orthogonal complement of `span(basis)` in ℝⁿ.
pub(crate) fn orthogonal_complement(basis: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut all = gram_schmidt(basis);
    let k = all.len();
    let units: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })
        .collect();
    all.extend(units);
    gram_schmidt(&all).split_off(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ref_a() -> OCProblem {
        load_reference_problem(ReferenceId::A).0
    }

    #[test]
    fn reference_problems_are_well_formed() {
        for id in ReferenceId::ALL {
            let (p, _) = load_reference_problem(id);
            assert!(validate_problem(&p).is_ok(), "{id:?}: {:?}", validate_problem(&p));
        }
    }

    #[test]
    fn reversed_horizon_is_a_defect() {
        let mut p = ref_a();
        p.horizon = (1.0, 0.0);
        let report = validate_problem(&p);
        assert!(report.defects.iter().any(|d| d == "horizon not increasing"));
    }

    #[test]
    fn missing_mixed_constraints_is_a_defect() {
        let mut p = ref_a();
        p.mixed_constraints.clear();
        let report = validate_problem(&p);
        assert_eq!(report.defects, vec![UNBOUNDED_CONTROL_DEFECT.to_string()]);
    }

    #[test]
    fn one_sided_control_bound_is_a_defect() {
        let mut p = ref_a();
        p.mixed_constraints.truncate(1);
        assert!(validate_problem(&p).defects.iter().any(|d| d == UNBOUNDED_CONTROL_DEFECT));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut p = ref_a();
        p.dynamics = vec![Form::linear(0.0, vec![0.0, 1.0]).into()];
        assert!(!validate_problem(&p).is_ok());
    }

    #[test]
    fn mixed_residual_examples() {
        let p = ref_a();
        let (g, max) = mixed_residual(&p, 0.5, &[0.0], &[0.0]).unwrap();
        assert_eq!(g, vec![-1.0, -1.0]);
        assert_eq!(max, -1.0);
        let (g, max) = mixed_residual(&p, 0.5, &[0.0], &[1.0]).unwrap();
        assert_eq!(g, vec![0.0, -2.0]);
        assert_eq!(max, 0.0);
        let c = load_reference_problem(ReferenceId::C).0;
        let (g, max) = mixed_residual(&c, 0.0, &[0.0], &[1.0]).unwrap();
        assert_eq!(g, vec![0.0, -1.0]);
        assert_eq!(max, 0.0);
    }

    #[test]
    fn evaluation_failure_propagates() {
        let mut p = ref_a();
        p.mixed_constraints.push(Evaluator::custom("log", |v| v[2].ln()));
        let err = mixed_residual(&p, 0.0, &[0.0], &[-1.0]).unwrap_err();
        assert!(matches!(err, Error::Evaluation { .. }));
    }

    #[test]
    fn problem_json_round_trip() {
        let p = load_reference_problem(ReferenceId::C).0;
        let text = p.to_json_string().unwrap();
        let back = OCProblem::from_json_str(&text).unwrap();
        assert_eq!(back.to_json_string().unwrap(), text);
        let by_ref = OCProblem::from_json_str(r#"{"reference": "REF-C"}"#).unwrap();
        assert_eq!(by_ref.to_json_string().unwrap(), text);
        assert!(OCProblem::from_json_str(r#"{"reference": "REF-Z"}"#).is_err());
    }

    #[test]
    fn endpoint_descriptors() {
        let aff = EndpointDescriptor::Affine {
            offset: vec![1.0, 0.0],
            basis: vec![vec![1.0, 1.0]],
        };
        assert!(aff.contains(&[2.0, 1.0], 1e-12));
        assert!((aff.distance(&[1.0, 1.0]) - 0.5f64.sqrt()).abs() < 1e-12);
        let bx = EndpointDescriptor::Box {
            lower: vec![0.0],
            upper: vec![2.0],
        };
        assert_eq!(bx.distance(&[3.0]), 1.0);
        let bad = EndpointDescriptor::Box {
            lower: vec![1.0],
            upper: vec![0.0],
        };
        assert!(!bad.defects(1, "x").is_empty());
    }
}
