//! The `nsmp` command line: solve, check, audit, oracle and the full pipeline.
//!
//! Exit codes: 0 success, 1 I/O or internal failure, 2 invalid input,
//! 3 solver not converged, 4 some condition failed, 5 some hypothesis audit
//! failed (4 wins over 5).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checker::{
    audit_hypotheses, check_conditions, AdjointForm, AuditOptions, CheckOptions, CheckReport, KChoice, Mode,
    Tolerances,
};
use crate::error::{Error, Result};
use crate::nonsmooth::Sampling;
use crate::multipliers::{assemble_pack, ExtractOptions, MultiplierPack};
use crate::problem::{load_reference_problem, validate_problem, OCProblem, Process, ReferenceId, ReferenceSolution};
use crate::report::{
    audits_json, emit_report, format_float, multipliers_csv, read_json, residuals_csv, solution_csv, write_json,
    write_text, Json,
};
use crate::solver::{brute_force_oracle, penalty_continuation, ContinuationTrace, SolveOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_CONDITIONS: i32 = 4;
pub const EXIT_AUDIT: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "nsmp", version, about = "Penalized transcription and maximum-principle checks for state-constrained optimal control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the penalty continuation and extract multipliers.
    Solve(SolveArgs),
    /// Check the necessary conditions for a process and multiplier pack.
    Check(CheckArgs),
    /// Audit the standing hypotheses along a process.
    Audit(AuditArgs),
    /// Brute-force the best piecewise-constant control on a coarse grid.
    Oracle(OracleArgs),
    /// Solve, extract, check and audit in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
struct ProblemArgs {
    /// Problem JSON (inline problem or {"reference": "REF-B"}).
    #[arg(long, conflicts_with = "reference", required_unless_present = "reference")]
    problem: Option<PathBuf>,
    /// Built-in reference problem: REF-A, REF-B or REF-C.
    #[arg(long = "ref")]
    reference: Option<String>,
    /// Seed for every sampling stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Number of grid steps.
    #[arg(long, default_value_t = 50)]
    grid: usize,
    /// Largest penalty in the 2^k schedule.
    #[arg(long)]
    penalty_max: Option<f64>,
}

#[derive(Debug, Args)]
struct CheckFlags {
    #[arg(long)]
    tol_nontriviality: Option<f64>,
    #[arg(long)]
    tol_adjoint: Option<f64>,
    #[arg(long)]
    tol_weierstrass: Option<f64>,
    #[arg(long)]
    tol_transversality: Option<f64>,
    #[arg(long)]
    tol_selection: Option<f64>,
    #[arg(long)]
    tol_support: Option<f64>,
    /// Random controls per node in the Weierstrass comparison.
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// full, or mixed for problems whose state constraint stays inactive.
    #[arg(long, default_value = "full")]
    mode: String,
    /// Use the sharp adjoint form with K = a number, `fit`, or `audit`.
    #[arg(long)]
    sharp: Option<String>,
}

#[derive(Debug, Args)]
struct AuditFlags {
    /// Random draws per audited node.
    #[arg(long, default_value_t = 16)]
    audit_samples: usize,
    /// Number of audited nodes.
    #[arg(long, default_value_t = 12)]
    audit_nodes: usize,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Process JSON; defaults to the analytic process of a reference problem.
    #[arg(long)]
    process: Option<PathBuf>,
    /// Multiplier pack JSON; defaults to the analytic pack of a reference problem.
    #[arg(long)]
    pack: Option<PathBuf>,
    /// Grid for the analytic defaults.
    #[arg(long, default_value_t = 50)]
    grid: usize,
    #[command(flatten)]
    check: CheckFlags,
    /// Also run the hypothesis audits.
    #[arg(long)]
    audit: bool,
    #[command(flatten)]
    audit_flags: AuditFlags,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    process: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    grid: usize,
    #[command(flatten)]
    audit_flags: AuditFlags,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Number of steps (at most 8).
    #[arg(long, default_value_t = 6)]
    grid: usize,
    /// Comma-separated control values, once per control coordinate.
    #[arg(long = "values")]
    values: Vec<String>,
    /// Constraint tolerance for admissibility.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    check: CheckFlags,
    #[command(flatten)]
    audit_flags: AuditFlags,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            error_code(&e)
        }
    }
}

fn error_code(e: &Error) -> i32 {
    match e {
        Error::InvalidProblem(_)
        | Error::UnknownReference(_)
        | Error::Dimension(_)
        | Error::Json(_)
        | Error::NotInSet { .. }
        | Error::StateConstraintActive { .. }
        | Error::Unsupported(_)
        | Error::EnumerationTooLarge(_)
        | Error::NoFeasibleSequence { .. } => EXIT_INVALID,
        Error::NotConverged { .. } => EXIT_NOT_CONVERGED,
        _ => EXIT_FAILURE,
    }
}

/// Exit code implied by a report: conditions first, then audits.
pub fn exit_code(report: &CheckReport) -> i32 {
    if !report.failed_conditions().is_empty() {
        EXIT_CONDITIONS
    } else if !report.failed_audits().is_empty() {
        EXIT_AUDIT
    } else {
        EXIT_OK
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Solve(a) => solve(a),
        Command::Check(a) => check(a),
        Command::Audit(a) => audit(a),
        Command::Oracle(a) => oracle(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

struct Loaded {
    problem: OCProblem,
    reference: Option<ReferenceSolution>,
}

fn load(args: &ProblemArgs) -> Result<Loaded> {
    let loaded = match (&args.problem, &args.reference) {
        (_, Some(id)) => {
            let id: ReferenceId = id.parse()?;
            let (problem, sol) = load_reference_problem(id);
            Loaded {
                problem,
                reference: Some(sol),
            }
        }
        (Some(path), None) => Loaded {
            problem: OCProblem::from_json_str(&std::fs::read_to_string(path)?)?,
            reference: None,
        },
        (None, None) => return Err(Error::Unsupported("give --problem or --ref".into())),
    };
    let report = validate_problem(&loaded.problem);
    if !report.is_ok() {
        return Err(Error::InvalidProblem(report.defects));
    }
    Ok(loaded)
}

fn solve_options(args: &SolverArgs, seed: u64) -> SolveOptions {
    let opts = SolveOptions {
        seed,
        ..SolveOptions::default()
    };
    match args.penalty_max {
        Some(max) => opts.with_penalty_max(max),
        None => opts,
    }
}

fn check_options(flags: &CheckFlags, seed: u64, audit: Option<AuditOptions>) -> Result<CheckOptions> {
    let d = Tolerances::default();
    let tolerances = Tolerances {
        nontriviality: flags.tol_nontriviality.unwrap_or(d.nontriviality),
        adjoint: flags.tol_adjoint.unwrap_or(d.adjoint),
        weierstrass: flags.tol_weierstrass.unwrap_or(d.weierstrass),
        transversality: flags.tol_transversality.unwrap_or(d.transversality),
        selection: flags.tol_selection.unwrap_or(d.selection),
        support: flags.tol_support.unwrap_or(d.support),
    };
    let adjoint_form = match flags.sharp.as_deref() {
        None => AdjointForm::NormalCone,
        Some("fit") => AdjointForm::Sharp(KChoice::Fitted),
        Some("audit") => AdjointForm::Sharp(KChoice::FromAudits),
        Some(v) => AdjointForm::Sharp(KChoice::Fixed(
            v.parse()
                .map_err(|_| Error::Unsupported(format!("--sharp expects a number, `fit` or `audit`, got `{v}`")))?,
        )),
    };
    let mode: Mode = flags.mode.parse()?;
    // the sharp form from audits needs the audit constants in the same run
    let audit = match (audit, adjoint_form) {
        (None, AdjointForm::Sharp(KChoice::FromAudits)) => Some(AuditOptions::with_seed(seed)),
        (a, _) => a,
    };
    Ok(CheckOptions {
        mode,
        tolerances,
        adjoint_form,
        samples: flags.samples,
        seed,
        audit,
        ..CheckOptions::default()
    })
}

fn audit_options(flags: &AuditFlags, seed: u64) -> AuditOptions {
    AuditOptions {
        seed,
        samples: flags.audit_samples,
        nodes: flags.audit_nodes,
        ..AuditOptions::default()
    }
}

fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn continuation_csv(trace: &ContinuationTrace, seed: u64) -> String {
    let mut out = format!("# seed = {seed}\npenalty,objective,max_violation,outer_iterations,converged\n");
    for r in &trace.records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            format_float(r.penalty),
            format_float(r.objective),
            format_float(r.max_violation),
            r.solution.record.outer_iterations,
            r.solution.record.converged
        ));
    }
    out
}

/// Continuation plus extraction; artifacts are written even when the last
/// solve did not converge.
fn solve_and_extract(loaded: &Loaded, solver: &SolverArgs, args: &ProblemArgs) -> Result<(Process, MultiplierPack, Option<String>)> {
    let opts = solve_options(solver, args.seed);
    let trace = penalty_continuation(&loaded.problem, solver.grid, &opts, None)?;
    let last = trace
        .last()
        .ok_or_else(|| Error::Unsupported("empty penalty schedule".into()))?;
    let extract = ExtractOptions {
        sampling: Sampling {
            seed: args.seed,
            ..Sampling::default()
        },
        ..ExtractOptions::default()
    };
    let pack = assemble_pack(&loaded.problem, &last.solution, &extract)?;
    let process = last.solution.process.clone();
    let dir = &args.out;
    write_json(&out_path(dir, "process.json"), &process)?;
    write_json(&out_path(dir, "pack.json"), &pack)?;
    write_text(&out_path(dir, "solution.csv"), &solution_csv(&process, args.seed))?;
    write_text(&out_path(dir, "multipliers.csv"), &multipliers_csv(&pack, args.seed))?;
    write_text(&out_path(dir, "continuation.csv"), &continuation_csv(&trace, args.seed))?;
    println!(
        "{}: N = {}, penalty = {}, objective = {}, max h+ = {}",
        loaded.problem.name,
        solver.grid,
        format_float(last.penalty),
        format_float(last.objective),
        format_float(last.max_violation)
    );
    if let Some(reason) = &trace.truncated {
        eprintln!("solver did not converge: {reason}");
    }
    Ok((process, pack, trace.truncated.clone()))
}

fn solve(a: SolveArgs) -> Result<i32> {
    let loaded = load(&a.problem)?;
    let (_, _, truncated) = solve_and_extract(&loaded, &a.solver, &a.problem)?;
    Ok(if truncated.is_some() { EXIT_NOT_CONVERGED } else { EXIT_OK })
}

fn analytic_or_file<T: serde::de::DeserializeOwned>(
    path: &Option<PathBuf>,
    what: &str,
    fallback: Option<T>,
) -> Result<T> {
    match (path, fallback) {
        (Some(p), _) => read_json(p),
        (None, Some(v)) => Ok(v),
        (None, None) => Err(Error::Unsupported(format!("--{what} is required for non-reference problems"))),
    }
}

fn summarize(report: &CheckReport) {
    for c in &report.conditions {
        println!(
            "{:<18} {:<13} {} {} {}",
            c.name,
            c.verdict.label(),
            format_float(c.max_residual),
            c.comparison,
            format_float(c.tolerance)
        );
    }
    for a in &report.audits {
        let constants: Vec<String> = a.constants.iter().map(|(k, v)| format!("{k} = {}", format_float(*v))).collect();
        println!("[{}] {:<6} {}", a.name, a.verdict.label(), constants.join(", "));
    }
    println!("overall: {}", report.verdict.label());
}

fn write_report(report: &CheckReport, dir: &Path) -> Result<()> {
    emit_report(report, &out_path(dir, "report.json"))?;
    write_text(&out_path(dir, "residuals.csv"), &residuals_csv(report))?;
    if !report.audits.is_empty() {
        write_text(
            &out_path(dir, "audit.json"),
            &audits_json(&report.problem, report.seed, &report.audits).render(),
        )?;
    }
    Ok(())
}

fn check(a: CheckArgs) -> Result<i32> {
    let loaded = load(&a.problem)?;
    let pack: MultiplierPack =
        analytic_or_file(&a.pack, "pack", loaded.reference.map(|r| r.pack(a.grid).normalized()))?;
    let n_steps = pack.grid.len().saturating_sub(1);
    let process: Process = analytic_or_file(&a.process, "process", loaded.reference.map(|r| r.process(n_steps)))?;
    let audit = a.audit.then(|| audit_options(&a.audit_flags, a.problem.seed));
    let opts = check_options(&a.check, a.problem.seed, audit)?;
    let report = check_conditions(&loaded.problem, &process, &pack, &opts)?;
    write_report(&report, &a.problem.out)?;
    summarize(&report);
    Ok(exit_code(&report))
}

fn audit(a: AuditArgs) -> Result<i32> {
    let loaded = load(&a.problem)?;
    let process: Process = analytic_or_file(&a.process, "process", loaded.reference.map(|r| r.process(a.grid)))?;
    let audits = audit_hypotheses(&loaded.problem, &process, &audit_options(&a.audit_flags, a.problem.seed))?;
    let doc = audits_json(&loaded.problem.name, a.problem.seed, &audits);
    write_text(&out_path(&a.problem.out, "audit.json"), &doc.render())?;
    let mut failed = false;
    for rec in &audits {
        let constants: Vec<String> = rec.constants.iter().map(|(k, v)| format!("{k} = {}", format_float(*v))).collect();
        println!("[{}] {:<6} {}", rec.name, rec.verdict.label(), constants.join(", "));
        failed |= rec.verdict == crate::checker::Verdict::Fail;
    }
    Ok(if failed { EXIT_AUDIT } else { EXIT_OK })
}

fn parse_values(raw: &[String]) -> Result<Vec<Vec<f64>>> {
    raw.iter()
        .map(|s| {
            s.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Unsupported(format!("bad control value `{v}`")))
                })
                .collect()
        })
        .collect()
}

/// Five evenly spaced values per coordinate across the control slice at
/// the initial point.
fn default_values(problem: &OCProblem) -> Result<Vec<Vec<f64>>> {
    let crate::problem::EndpointDescriptor::Point { point } = &problem.endpoint_set.initial else {
        return Err(Error::Unsupported("oracle requires a fixed initial point".into()));
    };
    let region = crate::checker::control_extent(problem, problem.horizon.0, point)?;
    Ok(region
        .into_iter()
        .map(|(lo, hi)| (0..5).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect())
        .collect())
}

fn oracle(a: OracleArgs) -> Result<i32> {
    let loaded = load(&a.problem)?;
    let values = if a.values.is_empty() {
        default_values(&loaded.problem)?
    } else {
        parse_values(&a.values)?
    };
    let result = brute_force_oracle(&loaded.problem, a.grid, &values, a.tol)?;
    let doc = Json::object([
        ("problem", Json::Str(loaded.problem.name.clone())),
        ("seed", Json::Int(a.problem.seed as i64)),
        ("n_steps", Json::Int(a.grid as i64)),
        ("cost", Json::Float(result.cost)),
        ("enumerated", Json::Int(result.enumerated as i64)),
        ("feasible", Json::Int(result.feasible as i64)),
        (
            "controls",
            Json::Array(
                result
                    .process
                    .controls
                    .iter()
                    .map(|u| Json::Array(u.iter().map(|v| Json::Float(*v)).collect()))
                    .collect(),
            ),
        ),
    ]);
    write_text(&out_path(&a.problem.out, "oracle.json"), &doc.render())?;
    write_text(&out_path(&a.problem.out, "oracle_solution.csv"), &solution_csv(&result.process, a.problem.seed))?;
    println!(
        "{}: oracle cost {} over {} sequences ({} admissible)",
        loaded.problem.name,
        format_float(result.cost),
        result.enumerated,
        result.feasible
    );
    Ok(EXIT_OK)
}

fn pipeline(a: PipelineArgs) -> Result<i32> {
    let loaded = load(&a.problem)?;
    let (process, pack, truncated) = solve_and_extract(&loaded, &a.solver, &a.problem)?;
    if truncated.is_some() {
        return Ok(EXIT_NOT_CONVERGED);
    }
    let opts = check_options(&a.check, a.problem.seed, Some(audit_options(&a.audit_flags, a.problem.seed)))?;
    let report = check_conditions(&loaded.problem, &process, &pack, &opts)?;
    write_report(&report, &a.problem.out)?;
    summarize(&report);
    Ok(exit_code(&report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_errors_are_invalid_input() {
        assert_eq!(run(["nsmp", "solve"]), EXIT_INVALID);
        assert_eq!(run(["nsmp", "frobnicate"]), EXIT_INVALID);
        assert_eq!(run(["nsmp", "--help"]), EXIT_OK);
    }

    #[test]
    fn values_parse() {
        assert_eq!(parse_values(&["-1, 0,1".into()]).unwrap(), vec![vec![-1.0, 0.0, 1.0]]);
        assert!(parse_values(&["x".into()]).is_err());
    }

    #[test]
    fn default_oracle_values_span_the_control_box() {
        let (c, _) = load_reference_problem(ReferenceId::C);
        let v = default_values(&c).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v[0][0]).abs() < 1e-12 && (v[0][4] - 1.0).abs() < 1e-9);
    }
}
