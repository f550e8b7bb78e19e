use super::{solve_from, AugmentedState, InitPolicy, PenalizedSolution, SolveOptions};
use crate::error::{Error, Result};
use crate::problem::{validate_problem, OCProblem, Process};
use crate::transcription::{discretize, penalized_objective, Anchor};

/// Tolerance on `|u_i − ū|_{L¹} ≤ √ε̂_i` in the Ekeland check.
const EKELAND_SLACK: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ContinuationRecord {
    pub penalty: f64,
    pub objective: f64,
    pub max_violation: f64,
    /// `J_i(candidate) − J_i(solution)` when a candidate is supplied.
    pub ekeland_gap: Option<f64>,
    /// L¹ control distance from the candidate (anchored re-solve when the
    /// Ekeland diagnostic is on, the plain solution otherwise).
    pub control_distance: Option<f64>,
    pub within_ekeland_bound: Option<bool>,
    pub solution: PenalizedSolution,
}

#[derive(Debug, Clone, Default)]
pub struct ContinuationTrace {
    pub records: Vec<ContinuationRecord>,
    /// Reason the schedule stopped before its end because a solve failed.
    pub truncated: Option<String>,
}

impl ContinuationTrace {
    pub fn last(&self) -> Option<&ContinuationRecord> {
        self.records.last()
    }

    /// Largest decrease `J_i − J_{i+1}` along the trace (≤ 0 for a monotone path).
    pub fn worst_decrease(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| w[0].objective - w[1].objective)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Runs the penalty schedule with warm starts, stopping once `max h⁺` is within
/// the feasibility tolerance.
pub fn penalty_continuation(
    problem: &OCProblem,
    n_steps: usize,
    opts: &SolveOptions,
    candidate: Option<&Process>,
) -> Result<ContinuationTrace> {
    let report = validate_problem(problem);
    if !report.is_ok() {
        return Err(Error::InvalidProblem(report.defects));
    }
    opts.validate()?;
    let base = discretize(problem, n_steps)?;
    let candidate_z = match candidate {
        Some(c) => {
            c.check_shape(problem)?;
            if c.n_steps() != n_steps {
                return Err(Error::Dimension(format!(
                    "candidate has {} steps, grid has {n_steps}",
                    c.n_steps()
                )));
            }
            Some(base.pack_process(c))
        }
        None => None,
    };
    let zero = vec![0.0; base.layout.len()];
    let initial = |policy: InitPolicy| match (policy, &candidate_z) {
        (InitPolicy::Analytic, Some(z)) => z.clone(),
        _ => zero.clone(),
    };

    let mut trace = ContinuationTrace::default();
    let mut warm: Option<(Vec<f64>, AugmentedState)> = None;
    for &penalty in &opts.penalty_schedule {
        let nlp = base.clone().with_penalty(penalty);
        let (start, state) = match (&warm, opts.init) {
            (Some((z, s)), InitPolicy::WarmStart) => (z.clone(), Some(s)),
            _ => (initial(opts.init), None),
        };
        let solution = match solve_from(&nlp, &start, state, opts) {
            Ok(s) => s,
            Err(Error::NotConverged { reason, best }) => {
                trace.truncated = Some(format!("penalty {penalty}: {reason}"));
                trace.records.push(record(&nlp, *best, None, None, None)?);
                break;
            }
            Err(e) => return Err(e),
        };

        let mut gap = None;
        let mut distance = None;
        let mut within = None;
        if let (Some(cz), Some(cand)) = (&candidate_z, candidate) {
            let eps = penalized_objective(&nlp, cz)? - solution.objective;
            gap = Some(eps);
            let d = if opts.ekeland_diagnostic && eps > 0.0 {
                // minimizer of J_i + √ε̂ |u − ū|₁ lies within √ε̂ of ū
                let anchored = nlp.clone().with_anchor(Some(Anchor {
                    controls: cand.controls.clone(),
                    weight: eps.sqrt(),
                }));
                let s = match solve_from(&anchored, cz, None, opts) {
                    Ok(s) => s,
                    Err(Error::NotConverged { best, .. }) => *best,
                    Err(e) => return Err(e),
                };
                s.process.control_l1_distance(cand)
            } else {
                solution.process.control_l1_distance(cand)
            };
            distance = Some(d);
            within = Some(d <= eps.max(0.0).sqrt() + EKELAND_SLACK);
        }
        warm = Some((solution.z.clone(), solution.state.clone()));
        let rec = record(&nlp, solution, gap, distance, within)?;
        let done = rec.max_violation <= opts.feasibility_tol;
        trace.records.push(rec);
        if done {
            break;
        }
    }
    Ok(trace)
}

fn record(
    nlp: &crate::transcription::DiscreteNLP,
    solution: PenalizedSolution,
    ekeland_gap: Option<f64>,
    control_distance: Option<f64>,
    within_ekeland_bound: Option<bool>,
) -> Result<ContinuationRecord> {
    Ok(ContinuationRecord {
        penalty: nlp.penalty,
        objective: solution.objective,
        max_violation: nlp.max_state_violation(&solution.z)?.max(0.0),
        ekeland_gap,
        control_distance,
        within_ekeland_bound,
        solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{load_reference_problem, ReferenceId};

    #[test]
    fn ref_a_path_is_flat() {
        let (p, _) = load_reference_problem(ReferenceId::A);
        let trace = penalty_continuation(&p, 50, &SolveOptions::default(), None).unwrap();
        assert!(trace.truncated.is_none());
        for r in &trace.records {
            assert_eq!(r.max_violation, 0.0);
            assert!((r.objective + 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn ref_b_path() {
        let (p, sol) = load_reference_problem(ReferenceId::B);
        let cand = sol.process(200);
        let trace = penalty_continuation(&p, 200, &SolveOptions::default(), Some(&cand)).unwrap();
        assert!(trace.truncated.is_none(), "{:?}", trace.truncated);
        assert!(trace.worst_decrease() <= 1e-6, "{}", trace.worst_decrease());
        let last = trace.last().unwrap();
        assert!(last.max_violation <= 1e-3);
        assert!(last.objective.abs() <= 5e-3);
        for r in &trace.records {
            assert!(r.ekeland_gap.unwrap() >= -1e-6, "{:?}", r.ekeland_gap);
        }
        assert!(last.ekeland_gap.unwrap().abs() <= 1e-6);
        let first = &trace.records[0];
        assert!(first.max_violation > last.max_violation);
    }

    #[test]
    fn ekeland_anchor_bound_holds() {
        let (p, sol) = load_reference_problem(ReferenceId::B);
        let cand = sol.process(40);
        let opts = SolveOptions {
            ekeland_diagnostic: true,
            penalty_schedule: vec![1.0, 4.0],
            ..SolveOptions::default()
        };
        let trace = penalty_continuation(&p, 40, &opts, Some(&cand)).unwrap();
        for r in &trace.records {
            assert_eq!(r.within_ekeland_bound, Some(true), "{:?} {:?}", r.ekeland_gap, r.control_distance);
        }
    }
}
