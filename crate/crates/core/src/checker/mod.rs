//! Residual-valued verification of the maximum-principle conditions for a
//! (process, multiplier pack) pair, plus sampling audits of the standing
//! hypotheses.
//!
//! Full mode checks, with `q` rebuilt from `(p, γ, μ)`:
//!
//! | name              | condition                                                  |
//! |-------------------|------------------------------------------------------------|
//! | `nontriviality`   | `μ([a,b]) + ‖p‖∞ + λ₀ > 0`                                 |
//! | `adjoint`         | `(−ṗ, 0) ∈ ∂⟨q, f⟩ − λ₀∂L − N_S` (or the `K|q|∂d_S` form)  |
//! | `weierstrass`     | `⟨q, f(u)⟩ − λ₀L(u) ≤ ⟨q, f(ū)⟩ − λ₀L(ū)` on `S(t, x̄)`      |
//! | `transversality`  | `(p(a), −q(b)) ∈ N_E + λ₀∂l`                               |
//! | `measure_selection` | `γ ∈ ∂̄ₓh` on the support of `μ`                          |
//! | `measure_support` | `h(t, x̄) = 0` on the support of `μ`                        |
//!
//! On step `m` the Hamiltonian uses `q_{m+1} = q(t_{m+1}⁻)`, the value of `q`
//! on `(t_m, t_{m+1}]`, which is what the explicit-Euler adjoint pairs with
//! the forward difference of `p`. The limiting subdifferential `∂̄ₓh` is
//! sampled in `x` at grid times only.

mod audit;
mod sampler;

pub use audit::{audit_hypotheses, AuditOptions, BS_EPS, CONVEXITY, CS_EPS, H1, H2, L_EPS};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::multipliers::{reconstruct_q, GridMeasure, MultiplierPack};
use crate::nonsmooth::{
    derive_seed, distance_subdiff, endpoint_normal_cone, hull_distance, normal_cone_s, ConeBundle, GradientBundle,
    Sampling, Subtrahend,
};
use crate::problem::{dot, norm, OCProblem, Process};
use sampler::ControlRegion;

pub const NONTRIVIALITY: &str = "nontriviality";
pub const ADJOINT: &str = "adjoint";
pub const WEIERSTRASS: &str = "weierstrass";
pub const TRANSVERSALITY: &str = "transversality";
pub const SELECTION: &str = "measure_selection";
pub const SUPPORT: &str = "measure_support";

const STREAM_HAMILTONIAN: u64 = 10;
const STREAM_DISTANCE: u64 = 11;
const STREAM_WEIERSTRASS: u64 = 12;
const STREAM_STATE: u64 = 13;
const STREAM_ENDPOINT: u64 = 14;
const K_CEILING: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// The condition is not implied under the audited hypotheses.
    NotAsserted,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::NotAsserted => "not_asserted",
        }
    }

    fn at_most(value: f64, tol: f64) -> Self {
        if value <= tol {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Full,
    /// No state constraint along the process: `μ = 0` and `q = p`.
    Mixed,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Mixed => "mixed",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "mixed" => Ok(Mode::Mixed),
            _ => Err(Error::Unsupported(format!("unknown mode `{s}` (full | mixed)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// How the constant of the sharp adjoint form is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KChoice {
    /// `(1 + k̂_S)(k̂_x + k̂_u)` from the [BS*ε] and [L*ε] audits.
    FromAudits,
    Fixed(f64),
    /// Smallest `K` for which the inclusion holds at tolerance.
    Fitted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdjointForm {
    /// Subtract the Clarke normal cone of `S(t)`.
    NormalCone,
    /// Subtract `K|q|·∂d_S`.
    Sharp(KChoice),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Lower bound for the nontriviality sum.
    pub nontriviality: f64,
    pub adjoint: f64,
    pub weierstrass: f64,
    pub transversality: f64,
    pub selection: f64,
    pub support: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            nontriviality: 1e-8,
            adjoint: 2e-2,
            weierstrass: 1e-3,
            transversality: 1e-3,
            selection: 1e-3,
            support: 1e-3,
        }
    }
}

impl Tolerances {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            NONTRIVIALITY => self.nontriviality,
            ADJOINT => self.adjoint,
            WEIERSTRASS => self.weierstrass,
            TRANSVERSALITY => self.transversality,
            SELECTION => self.selection,
            SUPPORT => self.support,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOptions {
    pub mode: Mode,
    pub tolerances: Tolerances,
    pub adjoint_form: AdjointForm,
    /// Random controls per node for the Weierstrass comparison.
    pub samples: usize,
    pub seed: u64,
    /// `|g_j| ≤ activity_tol` counts as active; also the endpoint membership tolerance.
    pub activity_tol: f64,
    /// Nodes with mass above this belong to the support of `μ`.
    pub support_tol: f64,
    pub sampling: Sampling,
    /// Run the hypothesis audits as part of the report.
    pub audit: Option<AuditOptions>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            mode: Mode::Full,
            tolerances: Tolerances::default(),
            adjoint_form: AdjointForm::NormalCone,
            samples: 64,
            seed: 0,
            activity_tol: 1e-6,
            support_tol: 1e-8,
            sampling: Sampling::default(),
            audit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRecord {
    pub name: String,
    /// Nodewise residuals (a single entry for scalar conditions).
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub tolerance: f64,
    /// `"<="` for residuals, `">"` for the nontriviality lower bound.
    pub comparison: &'static str,
    pub verdict: Verdict,
    pub parameters: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl ConditionRecord {
    fn upper(name: &str, residuals: Vec<f64>, tolerance: f64) -> Self {
        let max_residual = residuals.iter().copied().fold(0.0, nan_max);
        ConditionRecord {
            name: name.into(),
            residuals,
            max_residual,
            tolerance,
            comparison: "<=",
            verdict: Verdict::at_most(max_residual, tolerance),
            parameters: BTreeMap::new(),
            notes: Vec::new(),
        }
    }
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub name: String,
    pub constants: BTreeMap<String, f64>,
    pub witness: Option<Witness>,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

impl AuditRecord {
    pub fn constant(&self, key: &str) -> Option<f64> {
        self.constants.get(key).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub problem: String,
    pub mode: Mode,
    pub seed: u64,
    pub n_steps: usize,
    pub conditions: Vec<ConditionRecord>,
    pub audits: Vec<AuditRecord>,
    pub verdict: Verdict,
}

impl CheckReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionRecord> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn audit(&self, name: &str) -> Option<&AuditRecord> {
        self.audits.iter().find(|a| a.name == name)
    }

    pub fn failed_conditions(&self) -> Vec<&str> {
        self.conditions
            .iter()
            .filter(|c| c.verdict == Verdict::Fail)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn failed_audits(&self) -> Vec<&str> {
        self.audits
            .iter()
            .filter(|a| a.verdict == Verdict::Fail)
            .map(|a| a.name.as_str())
            .collect()
    }

    fn finish(mut self) -> Self {
        let ok = self.failed_conditions().is_empty() && self.failed_audits().is_empty();
        self.verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        self
    }
}

/// Multipliers as the checks consume them: `q` rebuilt from `(p, γ, μ)`.
struct Effective<'a> {
    lambda0: f64,
    p: &'a [Vec<f64>],
    q: Vec<Vec<f64>>,
    q_final: Vec<f64>,
    measure: &'a GridMeasure,
    gamma: &'a [Vec<f64>],
}

impl<'a> Effective<'a> {
    fn full(pack: &'a MultiplierPack) -> Self {
        let (q, q_final) = reconstruct_q(&pack.p, &pack.gamma, &pack.measure);
        Effective {
            lambda0: pack.lambda0,
            p: &pack.p,
            q,
            q_final,
            measure: &pack.measure,
            gamma: &pack.gamma,
        }
    }
}

fn validate_inputs(problem: &OCProblem, process: &Process, pack: &MultiplierPack) -> Result<()> {
    process.check_shape(problem)?;
    pack.check_shape(process.n_steps(), problem.state_dim)?;
    let off = pack
        .grid
        .iter()
        .zip(&process.grid)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if off > 1e-9 {
        return Err(Error::Dimension(format!("pack and process grids differ by {off:.3e}")));
    }
    Ok(())
}

/// Runs every applicable condition (and the audits, if requested).
pub fn check_conditions(
    problem: &OCProblem,
    process: &Process,
    pack: &MultiplierPack,
    opts: &CheckOptions,
) -> Result<CheckReport> {
    validate_inputs(problem, process, pack)?;
    let audits = match &opts.audit {
        Some(a) => audit_hypotheses(problem, process, a)?,
        None => Vec::new(),
    };
    let tol = &opts.tolerances;
    let mut conditions = Vec::new();
    let zero = GridMeasure::zero(process.grid.len());
    let mixed_pack;
    let eff = match opts.mode {
        Mode::Full => {
            conditions.push(check_nontriviality(pack, tol.nontriviality));
            Effective::full(pack)
        }
        Mode::Mixed => {
            ensure_inactive(problem, process, opts.activity_tol)?;
            mixed_pack = pack.p.clone();
            conditions.push(mixed_nontriviality(pack, tol.nontriviality));
            Effective {
                lambda0: pack.lambda0,
                p: &pack.p,
                q: mixed_pack.clone(),
                q_final: mixed_pack.last().cloned().unwrap_or_default(),
                measure: &zero,
                gamma: &[],
            }
        }
    };
    conditions.push(adjoint_record(problem, process, &eff, opts, &audits)?);
    let mut weierstrass = weierstrass_record(problem, process, &eff, opts)?;
    if audits.iter().any(|a| a.name == H2 && a.verdict == Verdict::Fail) {
        weierstrass.verdict = Verdict::NotAsserted;
        weierstrass
            .notes
            .push("lower semicontinuity audit failed: the Weierstrass condition is not implied".into());
    }
    conditions.push(weierstrass);
    conditions.push(transversality_record(problem, process, &eff, opts)?);
    if opts.mode == Mode::Full {
        let (selection, support) = measure_records(problem, process, &eff, opts)?;
        conditions.push(selection);
        conditions.push(support);
    }
    Ok(CheckReport {
        problem: problem.name.clone(),
        mode: opts.mode,
        seed: opts.seed,
        n_steps: process.n_steps(),
        conditions,
        audits,
        verdict: Verdict::Pass,
    }
    .finish())
}

/// The conditions for problems whose state constraint is inactive along the
/// process; refuses otherwise.
pub fn check_mixed_mp(
    problem: &OCProblem,
    process: &Process,
    pack: &MultiplierPack,
    opts: &CheckOptions,
) -> Result<CheckReport> {
    check_conditions(problem, process, pack, &CheckOptions { mode: Mode::Mixed, ..opts.clone() })
}

fn ensure_inactive(problem: &OCProblem, process: &Process, activity_tol: f64) -> Result<()> {
    for (t, x) in process.grid.iter().zip(&process.states) {
        if problem.state_constraint_at(*t, x)? >= -activity_tol {
            return Err(Error::StateConstraintActive { t: *t });
        }
    }
    Ok(())
}

/// `μ([a,b]) + max_m |p_m| + λ₀`, required to exceed `tol`.
pub fn check_nontriviality(pack: &MultiplierPack, tol: f64) -> ConditionRecord {
    let sup_p = pack.p.iter().map(|v| norm(v)).fold(0.0, f64::max);
    let value = pack.measure.total() + sup_p + pack.lambda0;
    lower_bound_record(vec![value], tol)
}

/// `min_t (|p(t)| + λ₀)`, required to exceed `tol`.
fn mixed_nontriviality(pack: &MultiplierPack, tol: f64) -> ConditionRecord {
    let values: Vec<f64> = pack.p.iter().map(|v| norm(v) + pack.lambda0).collect();
    let mut rec = lower_bound_record(values, tol);
    rec.max_residual = rec.residuals.iter().copied().fold(f64::INFINITY, f64::min);
    rec.verdict = if rec.max_residual > tol { Verdict::Pass } else { Verdict::Fail };
    rec
}

fn lower_bound_record(values: Vec<f64>, tol: f64) -> ConditionRecord {
    let value = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ConditionRecord {
        name: NONTRIVIALITY.into(),
        residuals: values,
        max_residual: value,
        tolerance: tol,
        comparison: ">",
        verdict: if value > tol { Verdict::Pass } else { Verdict::Fail },
        parameters: BTreeMap::new(),
        notes: Vec::new(),
    }
}

/// Residuals of the adjoint inclusion at every step.
pub fn check_adjoint(
    problem: &OCProblem,
    process: &Process,
    pack: &MultiplierPack,
    opts: &CheckOptions,
) -> Result<ConditionRecord> {
    validate_inputs(problem, process, pack)?;
    let audits = match opts.adjoint_form {
        AdjointForm::Sharp(KChoice::FromAudits) => {
            let a = opts.audit.clone().unwrap_or_else(|| AuditOptions::with_seed(opts.seed));
            audit_hypotheses(problem, process, &a)?
        }
        _ => Vec::new(),
    };
    adjoint_record(problem, process, &Effective::full(pack), opts, &audits)
}

struct AdjointNode {
    point: Vec<f64>,
    hamiltonian: GradientBundle,
    cone: ConeBundle,
    distance: Option<GradientBundle>,
    q_norm: f64,
}

fn hamiltonian_bundle(
    problem: &OCProblem,
    t: f64,
    x: &[f64],
    u: &[f64],
    q: &[f64],
    lambda0: f64,
    sampling: &Sampling,
) -> Result<GradientBundle> {
    let n = problem.state_dim;
    sampling.estimate(
        |v| {
            let (xs, us) = v.split_at(n);
            let f = problem.dynamics_at(t, xs, us)?;
            Ok(dot(q, &f) - lambda0 * problem.running_cost_at(t, xs, us)?)
        },
        &[x, u].concat(),
    )
}

fn adjoint_record(
    problem: &OCProblem,
    process: &Process,
    eff: &Effective<'_>,
    opts: &CheckOptions,
    audits: &[AuditRecord],
) -> Result<ConditionRecord> {
    let n = problem.state_dim;
    let k = problem.control_dim;
    let sharp = matches!(opts.adjoint_form, AdjointForm::Sharp(_));
    let nodes: Vec<std::result::Result<AdjointNode, String>> = (0..process.n_steps())
        .into_par_iter()
        .map(|m| -> Result<std::result::Result<AdjointNode, String>> {
            let t = process.grid[m];
            let dt = process.grid[m + 1] - t;
            let (x, u) = (&process.states[m], &process.controls[m]);
            let q = &eff.q[m + 1];
            let mut point: Vec<f64> = (0..n).map(|i| -(eff.p[m + 1][i] - eff.p[m][i]) / dt).collect();
            point.extend(std::iter::repeat_n(0.0, k));
            let sampling = opts.sampling.with_seed(derive_seed(opts.seed, STREAM_HAMILTONIAN, m as u64));
            let hamiltonian = hamiltonian_bundle(problem, t, x, u, q, eff.lambda0, &sampling)?;
            let cone = match normal_cone_s(problem, t, x, u, opts.activity_tol) {
                Ok(c) => c,
                Err(e @ (Error::NotInSet { .. } | Error::DegenerateNormal { .. })) => {
                    return Ok(Err(format!("t = {t}: {e}")));
                }
                Err(e) => return Err(e),
            };
            let distance = if sharp {
                let s = opts.sampling.with_seed(derive_seed(opts.seed, STREAM_DISTANCE, m as u64));
                match distance_subdiff(problem, t, x, u, &s) {
                    Ok(b) => Some(b),
                    Err(e @ Error::ProjectionFailed { .. }) => return Ok(Err(format!("t = {t}: {e}"))),
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            Ok(Ok(AdjointNode {
                point,
                hamiltonian,
                cone,
                distance,
                q_norm: norm(q),
            }))
        })
        .collect::<Result<_>>()?;

    let residuals_at = |kconst: Option<f64>| -> Vec<f64> {
        nodes
            .par_iter()
            .map(|node| match node {
                Err(_) => f64::INFINITY,
                Ok(node) => match (kconst, &node.distance) {
                    (Some(kc), Some(d)) => {
                        hull_distance(&node.point, &node.hamiltonian, Subtrahend::Hull(d), kc * node.q_norm).distance
                    }
                    _ => hull_distance(&node.point, &node.hamiltonian, Subtrahend::Cone(&node.cone), 1.0).distance,
                },
            })
            .collect()
    };

    let tol = opts.tolerances.adjoint;
    let mut parameters = BTreeMap::new();
    let mut notes: Vec<String> = nodes.iter().filter_map(|n| n.as_ref().err().cloned()).collect();
    let residuals = match opts.adjoint_form {
        AdjointForm::NormalCone => residuals_at(None),
        AdjointForm::Sharp(choice) => {
            let kconst = match choice {
                KChoice::Fixed(v) => v,
                KChoice::FromAudits => default_k(audits).ok_or_else(|| {
                    Error::Unsupported("sharp adjoint form needs the [BS*ε] and [L*ε] audits".into())
                })?,
                KChoice::Fitted => fit_k(|kc| max_of(&residuals_at(Some(kc))), tol),
            };
            parameters.insert("K".into(), kconst);
            if kconst.is_finite() {
                residuals_at(Some(kconst))
            } else {
                notes.push(format!("no K up to {K_CEILING:e} satisfies the inclusion"));
                residuals_at(Some(K_CEILING))
            }
        }
    };
    let mut rec = ConditionRecord::upper(ADJOINT, residuals, tol);
    rec.parameters = parameters;
    rec.notes = notes;
    Ok(rec)
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, nan_max)
}

/// `(1 + k̂_S)(k̂_x + k̂_u)` over dynamics and running cost.
fn default_k(audits: &[AuditRecord]) -> Option<f64> {
    let ks = audits.iter().find(|a| a.name == BS_EPS)?.constant("k_S_estimate")?;
    let lip = audits.iter().find(|a| a.name == L_EPS)?;
    let sum: f64 = ["k_x_f", "k_u_f", "k_x_L", "k_u_L"]
        .iter()
        .filter_map(|key| lip.constant(key))
        .sum();
    Some((1.0 + ks) * sum)
}

/// Smallest `K ∈ [0, K_CEILING]` with `residual(K) ≤ tol`, by doubling and
/// bisection; `∞` if none.
fn fit_k<F: Fn(f64) -> f64>(residual: F, tol: f64) -> f64 {
    if residual(0.0) <= tol {
        return 0.0;
    }
    let mut hi = 1.0;
    while residual(hi) > tol {
        hi *= 2.0;
        if hi > K_CEILING {
            return f64::INFINITY;
        }
    }
    let mut lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
    for _ in 0..60 {
        if hi - lo <= 1e-10 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if residual(mid) <= tol {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Largest gain of the Hamiltonian over sampled feasible controls at each step.
pub fn check_weierstrass(
    problem: &OCProblem,
    process: &Process,
    pack: &MultiplierPack,
    opts: &CheckOptions,
) -> Result<ConditionRecord> {
    validate_inputs(problem, process, pack)?;
    weierstrass_record(problem, process, &Effective::full(pack), opts)
}

fn weierstrass_record(
    problem: &OCProblem,
    process: &Process,
    eff: &Effective<'_>,
    opts: &CheckOptions,
) -> Result<ConditionRecord> {
    let per_node: Vec<(f64, Option<String>)> = (0..process.n_steps())
        .into_par_iter()
        .map(|m| -> Result<(f64, Option<String>)> {
            let t = process.grid[m];
            let (x, ubar) = (&process.states[m], &process.controls[m]);
            let q = &eff.q[m + 1];
            let ham = |u: &[f64]| -> Result<f64> {
                Ok(dot(q, &problem.dynamics_at(t, x, u)?) - eff.lambda0 * problem.running_cost_at(t, x, u)?)
            };
            let region = match ControlRegion::new(problem, t, x, ubar) {
                Ok(r) => r,
                Err(Error::SamplerStarved { .. }) => return Ok((0.0, Some(format!("sampler starved at t = {t}")))),
                Err(e) => return Err(e),
            };
            let reference = ham(ubar)?;
            let draws = region.draw(problem, opts.samples, derive_seed(opts.seed, STREAM_WEIERSTRASS, m as u64))?;
            let note = (opts.samples > 0 && draws.is_empty()).then(|| format!("no feasible random control at t = {t}"));
            let mut worst: f64 = 0.0;
            for u in region.vertices(problem)?.iter().chain(&draws) {
                worst = nan_max(worst, ham(u)? - reference);
            }
            Ok((worst, note))
        })
        .collect::<Result<_>>()?;
    let mut rec = ConditionRecord::upper(
        WEIERSTRASS,
        per_node.iter().map(|(v, _)| *v).collect(),
        opts.tolerances.weierstrass,
    );
    rec.notes = per_node.into_iter().filter_map(|(_, n)| n).collect();
    Ok(rec)
}

/// Endpoint inclusion, full form and the terminal-only form.
pub fn check_transversality(
    problem: &OCProblem,
    process: &Process,
    pack: &MultiplierPack,
    opts: &CheckOptions,
) -> Result<ConditionRecord> {
    validate_inputs(problem, process, pack)?;
    transversality_record(problem, process, &Effective::full(pack), opts)
}

fn transversality_record(
    problem: &OCProblem,
    process: &Process,
    eff: &Effective<'_>,
    opts: &CheckOptions,
) -> Result<ConditionRecord> {
    let n = problem.state_dim;
    let xa = &process.states[0];
    let xb = process.states.last().expect("nonempty process");
    let tol = opts.tolerances.transversality;
    let cones = endpoint_normal_cone(&problem.endpoint_set.initial, xa, opts.activity_tol).and_then(|ca| {
        Ok((ca, endpoint_normal_cone(&problem.endpoint_set.terminal, xb, opts.activity_tol)?))
    });
    let (cone_a, cone_b) = match cones {
        Ok(c) => c,
        Err(e @ Error::NotInSet { .. }) => {
            let mut rec = ConditionRecord::upper(TRANSVERSALITY, vec![f64::INFINITY, f64::INFINITY], tol);
            rec.notes.push(e.to_string());
            return Ok(rec);
        }
        Err(e) => return Err(e),
    };
    let sampling = opts.sampling.with_seed(derive_seed(opts.seed, STREAM_ENDPOINT, 0));
    let cost = sampling
        .estimate(|v| problem.endpoint_cost_at(&v[..n], &v[n..]), &[xa.as_slice(), xb].concat())?
        .scaled(eff.lambda0);

    let mut joint = ConeBundle::zero([xa.as_slice(), xb].concat());
    for r in &cone_a.rays {
        joint.push_ray(&[r.as_slice(), &vec![0.0; n]].concat());
    }
    for r in &cone_b.rays {
        joint.push_ray(&[vec![0.0; n].as_slice(), r].concat());
    }
    let minus_qb: Vec<f64> = eff.q_final.iter().map(|v| -v).collect();
    let point = [eff.p[0].as_slice(), &minus_qb].concat();
    let full = hull_distance(&point, &cost, Subtrahend::Cone(&joint.negated()), 1.0).distance;

    let terminal_cost = GradientBundle::from_generators(
        xb.clone(),
        cost.generators.iter().map(|g| g[n..].to_vec()).collect(),
    );
    let terminal = hull_distance(&minus_qb, &terminal_cost, Subtrahend::Cone(&cone_b.negated()), 1.0).distance;
    Ok(ConditionRecord::upper(TRANSVERSALITY, vec![full, terminal], tol))
}

/// Selection and support residuals of the measure, over all nodes (zero off
/// the support).
pub fn check_measure_conditions(
    problem: &OCProblem,
    process: &Process,
    pack: &MultiplierPack,
    opts: &CheckOptions,
) -> Result<(ConditionRecord, ConditionRecord)> {
    validate_inputs(problem, process, pack)?;
    measure_records(problem, process, &Effective::full(pack), opts)
}

fn measure_records(
    problem: &OCProblem,
    process: &Process,
    eff: &Effective<'_>,
    opts: &CheckOptions,
) -> Result<(ConditionRecord, ConditionRecord)> {
    let nodes = process.grid.len();
    let support = eff.measure.support(opts.support_tol);
    let mut selection = vec![0.0; nodes];
    let mut on_boundary = vec![0.0; nodes];
    let mut notes = Vec::new();
    if !support.is_empty() && eff.gamma.is_empty() {
        notes.push("measure has mass but the pack carries no selection".to_string());
    }
    let computed: Vec<(usize, f64, f64)> = support
        .par_iter()
        .map(|&m| -> Result<(usize, f64, f64)> {
            let t = process.grid[m];
            let x = &process.states[m];
            let h = problem.state_constraint_at(t, x)?;
            let sel = match eff.gamma.get(m) {
                None => f64::INFINITY,
                Some(g) => {
                    let s = opts.sampling.with_seed(derive_seed(opts.seed, STREAM_STATE, m as u64));
                    let bundle = s.estimate(|y| problem.state_constraint_at(t, y), x)?;
                    hull_distance(g, &bundle, Subtrahend::Cone(&ConeBundle::zero(x.clone())), 1.0).distance
                }
            };
            Ok((m, sel, h.abs()))
        })
        .collect::<Result<_>>()?;
    for (m, sel, h) in computed {
        selection[m] = sel;
        on_boundary[m] = h;
    }
    // negative mass is reported as a support violation of the same size
    for (m, w) in eff.measure.weights.iter().enumerate() {
        if *w < 0.0 {
            on_boundary[m] = on_boundary[m].max(-w);
        }
    }
    if eff.measure.endpoint_atom < 0.0 {
        on_boundary[nodes - 1] = on_boundary[nodes - 1].max(-eff.measure.endpoint_atom);
    }
    let mut sel_rec = ConditionRecord::upper(SELECTION, selection, opts.tolerances.selection);
    sel_rec.notes = notes;
    sel_rec.notes.push("limiting gradients of h are sampled in x at grid times".into());
    let sup_rec = ConditionRecord::upper(SUPPORT, on_boundary, opts.tolerances.support);
    Ok((sel_rec, sup_rec))
}

/// Axis extents `(lower, upper)` of the control slice at `(t, x)`, walked
/// out from the projection of the origin.
pub fn control_extent(problem: &OCProblem, t: f64, x: &[f64]) -> Result<Vec<(f64, f64)>> {
    let region = ControlRegion::new(problem, t, x, &vec![0.0; problem.control_dim])?;
    Ok(region.lower.into_iter().zip(region.upper).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{load_reference_problem, ReferenceId};

    fn analytic(id: ReferenceId, n: usize) -> (OCProblem, Process, MultiplierPack) {
        let (p, sol) = load_reference_problem(id);
        (p, sol.process(n), sol.pack(n).normalized())
    }

    fn run(id: ReferenceId, n: usize) -> CheckReport {
        let (p, x, pack) = analytic(id, n);
        check_conditions(&p, &x, &pack, &CheckOptions::default()).unwrap()
    }

    #[test]
    fn ref_a_passes_everything() {
        let r = run(ReferenceId::A, 50);
        assert_eq!(r.verdict, Verdict::Pass, "{:?}", r.failed_conditions());
        assert!((r.condition(NONTRIVIALITY).unwrap().max_residual - 1.0).abs() < 1e-12);
        assert!(r.condition(ADJOINT).unwrap().max_residual <= 1e-3);
        assert!(r.condition(WEIERSTRASS).unwrap().max_residual <= 1e-6);
        assert!(r.condition(TRANSVERSALITY).unwrap().max_residual <= 1e-6);
        assert_eq!(r.conditions.len(), 6);
    }

    #[test]
    fn ref_b_passes_everything() {
        let r = run(ReferenceId::B, 200);
        assert_eq!(r.verdict, Verdict::Pass, "{:?}", r.failed_conditions());
        assert!(r.condition(WEIERSTRASS).unwrap().max_residual <= 1e-6);
        assert!(r.condition(TRANSVERSALITY).unwrap().max_residual <= 1e-6);
        assert!(r.condition(SELECTION).unwrap().max_residual <= 1e-6);
        assert!(r.condition(SUPPORT).unwrap().max_residual <= 1e-6);
    }

    #[test]
    fn ref_c_adjoint_is_discretization_limited() {
        let r = run(ReferenceId::C, 200);
        assert_eq!(r.verdict, Verdict::Pass, "{:?}", r.failed_conditions());
        let adj = r.condition(ADJOINT).unwrap().max_residual;
        assert!(adj <= 2e-2 && adj > 0.0, "{adj}");
        assert!(r.condition(TRANSVERSALITY).unwrap().max_residual <= 1e-6);
    }

    #[test]
    fn zero_pack_fails_only_nontriviality() {
        let (p, x, mut pack) = analytic(ReferenceId::A, 20);
        pack = pack.scaled(0.0);
        let r = check_conditions(&p, &x, &pack, &CheckOptions::default()).unwrap();
        assert_eq!(r.failed_conditions(), vec![NONTRIVIALITY]);
        assert_eq!(r.condition(NONTRIVIALITY).unwrap().max_residual, 0.0);
    }

    #[test]
    fn flipped_costate_fails_adjoint() {
        let (p, sol) = load_reference_problem(ReferenceId::A);
        let (x, mut pack) = (sol.process(50), sol.pack(50));
        for v in &mut pack.p {
            v[0] = -v[0];
        }
        let r = check_conditions(&p, &x, &pack, &CheckOptions::default()).unwrap();
        assert!(r.condition(ADJOINT).unwrap().max_residual >= 0.5);
        assert!(r.failed_conditions().contains(&ADJOINT));
    }

    #[test]
    fn spurious_mass_fails_only_support() {
        let (p, x, mut pack) = analytic(ReferenceId::C, 200);
        pack.measure.weights[100] = 0.2;
        let r = check_conditions(&p, &x, &pack, &CheckOptions::default()).unwrap();
        assert_eq!(r.failed_conditions(), vec![SUPPORT]);
        assert!((r.condition(SUPPORT).unwrap().max_residual - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_measure_is_vacuous() {
        let r = run(ReferenceId::A, 10);
        assert_eq!(r.condition(SELECTION).unwrap().max_residual, 0.0);
        assert_eq!(r.condition(SUPPORT).unwrap().max_residual, 0.0);
    }

    #[test]
    fn scaling_scales_residuals() {
        let (p, x, pack) = analytic(ReferenceId::C, 50);
        let opts = CheckOptions::default();
        let one = check_conditions(&p, &x, &pack, &opts).unwrap();
        let two = check_conditions(&p, &x, &pack.scaled(2.0), &opts).unwrap();
        for name in [ADJOINT, WEIERSTRASS, TRANSVERSALITY] {
            let (a, b) = (one.condition(name).unwrap(), two.condition(name).unwrap());
            for (r1, r2) in a.residuals.iter().zip(&b.residuals) {
                assert!((r2 - 2.0 * r1).abs() <= 1e-9 * (1.0 + r1.abs()), "{name}: {r1} {r2}");
            }
        }
        let (a, b) = (one.condition(NONTRIVIALITY).unwrap(), two.condition(NONTRIVIALITY).unwrap());
        assert!((b.max_residual - 2.0 * a.max_residual).abs() < 1e-12);
    }

    #[test]
    fn mixed_mode_agrees_and_refuses() {
        let (p, x, pack) = analytic(ReferenceId::A, 50);
        let opts = CheckOptions::default();
        let full = check_conditions(&p, &x, &pack, &opts).unwrap();
        let mixed = check_mixed_mp(&p, &x, &pack, &opts).unwrap();
        assert_eq!(mixed.verdict, full.verdict);
        for name in [ADJOINT, WEIERSTRASS, TRANSVERSALITY] {
            let (a, b) = (full.condition(name).unwrap(), mixed.condition(name).unwrap());
            for (r1, r2) in a.residuals.iter().zip(&b.residuals) {
                assert!((r1 - r2).abs() <= 1e-12);
            }
        }

        let (p, x, pack) = analytic(ReferenceId::C, 200);
        assert_eq!(check_mixed_mp(&p, &x, &pack, &opts).unwrap().verdict, Verdict::Pass);

        let (p, x, pack) = analytic(ReferenceId::B, 200);
        assert!(matches!(
            check_mixed_mp(&p, &x, &pack, &opts),
            Err(Error::StateConstraintActive { .. })
        ));
    }

    #[test]
    fn weierstrass_sampling_is_monotone() {
        // a pack whose Hamiltonian prefers interior controls: violations vary by sample
        let (p, x, mut pack) = analytic(ReferenceId::C, 20);
        for v in &mut pack.p {
            v[0] = -v[0];
        }
        let mut last = 0.0;
        for samples in [1, 4, 16, 64] {
            let opts = CheckOptions {
                samples,
                seed: 3,
                ..CheckOptions::default()
            };
            let v = check_weierstrass(&p, &x, &pack, &opts).unwrap().max_residual;
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn sharp_form_with_fitted_k() {
        let (p, x, pack) = analytic(ReferenceId::A, 20);
        let opts = CheckOptions {
            adjoint_form: AdjointForm::Sharp(KChoice::Fitted),
            tolerances: Tolerances {
                adjoint: 1e-3,
                ..Tolerances::default()
            },
            ..CheckOptions::default()
        };
        let rec = check_adjoint(&p, &x, &pack, &opts).unwrap();
        let k = rec.parameters["K"];
        // |q| = 1/2 after normalization and the needed multiple of the unit normal is 1/2
        assert!(k > 0.9 && k < 1.1, "{k}");
        assert_eq!(rec.verdict, Verdict::Pass);

        let opts = CheckOptions {
            adjoint_form: AdjointForm::Sharp(KChoice::Fixed(0.0)),
            ..opts
        };
        assert_eq!(check_adjoint(&p, &x, &pack, &opts).unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn sharp_form_from_audits() {
        let (p, x, pack) = analytic(ReferenceId::C, 50);
        let opts = CheckOptions {
            adjoint_form: AdjointForm::Sharp(KChoice::FromAudits),
            ..CheckOptions::default()
        };
        let rec = check_adjoint(&p, &x, &pack, &opts).unwrap();
        assert!((rec.parameters["K"] - 2.0).abs() < 1e-6, "{:?}", rec.parameters);
        assert_eq!(rec.verdict, Verdict::Pass);
    }

    #[test]
    fn fit_k_bisects() {
        let k = fit_k(|k| (3.0 - k).max(0.0), 1e-9);
        assert!((k - 3.0).abs() < 1e-8);
        assert_eq!(fit_k(|_| 1.0, 0.5), f64::INFINITY);
    }
}
