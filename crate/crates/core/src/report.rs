//! Deterministic serialization of reports and trajectories.
//!
//! Report JSON has sorted keys and every float written as `%.12e`
//! (`1.000000000000e+00`); non-finite values become the strings `"inf"`,
//! `"-inf"` and `"nan"`. CSV files start with a `# seed = …` line. Packs and
//! processes, which are read back, use exact shortest-round-trip JSON instead.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::checker::{AuditRecord, CheckReport, ConditionRecord, Witness};
use crate::error::Result;
use crate::multipliers::MultiplierPack;
use crate::problem::Process;

/// Minimal JSON tree with a fixed float format.
#[derive(Debug, Clone, PartialEq)]
pub enum Json {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Array(Vec<Json>),
    Object(BTreeMap<String, Json>),
}

impl Json {
    pub fn object<I, K>(entries: I) -> Json
    where
        I: IntoIterator<Item = (K, Json)>,
        K: Into<String>,
    {
        Json::Object(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    fn floats(values: &[f64]) -> Json {
        Json::Array(values.iter().map(|v| Json::Float(*v)).collect())
    }

    fn strings(values: &[String]) -> Json {
        Json::Array(values.iter().map(|v| Json::Str(v.clone())).collect())
    }

    fn write(&self, out: &mut String, indent: usize) {
        let pad = |out: &mut String, n: usize| out.extend(std::iter::repeat_n(' ', 2 * n));
        match self {
            Json::Null => out.push_str("null"),
            Json::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Json::Int(i) => {
                let _ = write!(out, "{i}");
            }
            Json::Float(v) => {
                if v.is_finite() {
                    out.push_str(&format_float(*v));
                } else {
                    write_string(out, &format_float(*v));
                }
            }
            Json::Str(s) => write_string(out, s),
            Json::Array(items) if items.is_empty() => out.push_str("[]"),
            Json::Array(items) => {
                // numeric arrays stay on one line
                let flat = items.iter().all(|i| matches!(i, Json::Float(_) | Json::Int(_)));
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                        if flat {
                            out.push(' ');
                        }
                    }
                    if !flat {
                        out.push('\n');
                        pad(out, indent + 1);
                    }
                    item.write(out, indent + 1);
                }
                if !flat {
                    out.push('\n');
                    pad(out, indent);
                }
                out.push(']');
            }
            Json::Object(map) if map.is_empty() => out.push_str("{}"),
            Json::Object(map) => {
                out.push('{');
                for (i, (k, v)) in map.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push('\n');
                    pad(out, indent + 1);
                    write_string(out, k);
                    out.push_str(": ");
                    v.write(out, indent + 1);
                }
                out.push('\n');
                pad(out, indent);
                out.push('}');
            }
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, 0);
        out.push('\n');
        out
    }
}

fn write_string(out: &mut String, s: &str) {
    // serde_json handles the escaping rules
    out.push_str(&serde_json::to_string(s).expect("strings always serialize"));
}

/// C-style `%.12e`: mantissa with 12 decimals, signed exponent of at least two digits.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{v:.12e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

fn witness_json(w: &Option<Witness>) -> Json {
    match w {
        None => Json::Null,
        Some(w) => Json::object([
            ("t", Json::Float(w.t)),
            ("x", Json::floats(&w.x)),
            ("u", Json::floats(&w.u)),
        ]),
    }
}

fn constants_json(map: &BTreeMap<String, f64>) -> Json {
    Json::object(map.iter().map(|(k, v)| (k.clone(), Json::Float(*v))))
}

fn condition_json(c: &ConditionRecord) -> Json {
    Json::object([
        ("name", Json::Str(c.name.clone())),
        ("residuals", Json::floats(&c.residuals)),
        ("max_residual", Json::Float(c.max_residual)),
        ("tolerance", Json::Float(c.tolerance)),
        ("comparison", Json::Str(c.comparison.into())),
        ("verdict", Json::Str(c.verdict.label().into())),
        ("parameters", constants_json(&c.parameters)),
        ("notes", Json::strings(&c.notes)),
    ])
}

fn audit_json(a: &AuditRecord) -> Json {
    Json::object([
        ("name", Json::Str(a.name.clone())),
        ("constants", constants_json(&a.constants)),
        ("witness", witness_json(&a.witness)),
        ("verdict", Json::Str(a.verdict.label().into())),
        ("notes", Json::strings(&a.notes)),
    ])
}

fn names(v: Vec<&str>) -> Json {
    Json::Array(v.into_iter().map(|s| Json::Str(s.into())).collect())
}

pub fn report_json(report: &CheckReport) -> Json {
    Json::object([
        ("problem", Json::Str(report.problem.clone())),
        ("mode", Json::Str(report.mode.label().into())),
        ("seed", Json::Int(report.seed as i64)),
        ("n_steps", Json::Int(report.n_steps as i64)),
        ("conditions", Json::Array(report.conditions.iter().map(condition_json).collect())),
        ("audits", Json::Array(report.audits.iter().map(audit_json).collect())),
        ("failed_conditions", names(report.failed_conditions())),
        ("failed_audits", names(report.failed_audits())),
        ("verdict", Json::Str(report.verdict.label().into())),
    ])
}

/// Audit records alone, for runs without condition checks.
pub fn audits_json(problem: &str, seed: u64, audits: &[AuditRecord]) -> Json {
    let failed: Vec<&str> = audits
        .iter()
        .filter(|a| a.verdict == crate::checker::Verdict::Fail)
        .map(|a| a.name.as_str())
        .collect();
    let verdict = if failed.is_empty() { "pass" } else { "fail" };
    Json::object([
        ("problem", Json::Str(problem.into())),
        ("seed", Json::Int(seed as i64)),
        ("audits", Json::Array(audits.iter().map(audit_json).collect())),
        ("failed_audits", names(failed)),
        ("verdict", Json::Str(verdict.into())),
    ])
}

pub fn emit_report(report: &CheckReport, path: &Path) -> Result<()> {
    write_text(path, &report_json(report).render())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

fn csv_row(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// `t, x…, u…` per node; the last node has no control.
pub fn solution_csv(process: &Process, seed: u64) -> String {
    let n = process.states.first().map_or(0, Vec::len);
    let k = process.controls.first().map_or(0, Vec::len);
    let mut out = format!("# seed = {seed}\n");
    let mut header = vec!["t".to_string()];
    header.extend(indexed("x", n));
    header.extend(indexed("u", k));
    csv_row(&mut out, &header);
    for (m, t) in process.grid.iter().enumerate() {
        let mut row = vec![format_float(*t)];
        row.extend(process.states[m].iter().map(|v| format_float(*v)));
        match process.controls.get(m) {
            Some(u) => row.extend(u.iter().map(|v| format_float(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), k)),
        }
        csv_row(&mut out, &row);
    }
    out
}

/// `t, p…, q…, w, atom, γ…` per node; `q` is the left limit and the atom
/// appears on the last row only.
pub fn multipliers_csv(pack: &MultiplierPack, seed: u64) -> String {
    let n = pack.p.first().map_or(0, Vec::len);
    let last = pack.grid.len().saturating_sub(1);
    let mut out = format!("# seed = {seed}\n# lambda0 = {}\n", format_float(pack.lambda0));
    let mut header = vec!["t".to_string()];
    header.extend(indexed("p", n));
    header.extend(indexed("q", n));
    header.push("w".into());
    header.push("atom".into());
    header.extend(indexed("gamma", n));
    csv_row(&mut out, &header);
    for (m, t) in pack.grid.iter().enumerate() {
        let mut row = vec![format_float(*t)];
        row.extend(pack.p[m].iter().map(|v| format_float(*v)));
        row.extend(pack.q[m].iter().map(|v| format_float(*v)));
        row.push(format_float(pack.measure.weights[m]));
        row.push(format_float(if m == last { pack.measure.endpoint_atom } else { 0.0 }));
        match pack.gamma.get(m) {
            Some(g) => row.extend(g.iter().map(|v| format_float(*v))),
            None => row.extend(std::iter::repeat_n(format_float(0.0), n)),
        }
        csv_row(&mut out, &row);
    }
    out
}

/// One row per (condition, node) residual.
pub fn residuals_csv(report: &CheckReport) -> String {
    let mut out = format!("# seed = {}\ncondition,index,residual\n", report.seed);
    for c in &report.conditions {
        for (i, r) in c.residuals.iter().enumerate() {
            csv_row(&mut out, &[c.name.clone(), i.to_string(), format_float(*r)]);
        }
    }
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::{check_conditions, AuditOptions, CheckOptions};
    use crate::problem::{load_reference_problem, ReferenceId};

    #[test]
    fn float_format_matches_printf() {
        assert_eq!(format_float(1.0), "1.000000000000e+00");
        assert_eq!(format_float(-0.00123), "-1.230000000000e-03");
        assert_eq!(format_float(6.02e123), "6.020000000000e+123");
        assert_eq!(format_float(0.0), "0.000000000000e+00");
        assert_eq!(format_float(f64::INFINITY), "inf");
        assert_eq!(format_float(f64::NAN), "nan");
    }

    #[test]
    fn rendering_is_sorted_and_valid_json() {
        let j = Json::object([
            ("b", Json::Float(f64::NEG_INFINITY)),
            ("a", Json::Array(vec![])),
            ("c", Json::floats(&[0.5, 2.0])),
        ]);
        let text = j.render();
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["b"], "-inf");
        assert!(text.find("\"a\"").unwrap() < text.find("\"b\"").unwrap());
        assert!(text.contains("[5.000000000000e-01, 2.000000000000e+00]"));
    }

    #[test]
    fn report_is_deterministic_and_keeps_empty_audits() {
        let (p, sol) = load_reference_problem(ReferenceId::A);
        let (x, pack) = (sol.process(20), sol.pack(20).normalized());
        let opts = CheckOptions::default();
        let a = report_json(&check_conditions(&p, &x, &pack, &opts).unwrap()).render();
        let b = report_json(&check_conditions(&p, &x, &pack, &opts).unwrap()).render();
        assert_eq!(a, b);
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["audits"], serde_json::json!([]));
        assert_eq!(v["seed"], 0);
    }

    #[test]
    fn ref_c_report_carries_slope_constant() {
        let (p, sol) = load_reference_problem(ReferenceId::C);
        let (x, pack) = (sol.process(50), sol.pack(50).normalized());
        let opts = CheckOptions {
            audit: Some(AuditOptions::default()),
            ..CheckOptions::default()
        };
        let text = report_json(&check_conditions(&p, &x, &pack, &opts).unwrap()).render();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let bs = v["audits"].as_array().unwrap().iter().find(|a| a["name"] == "BS_eps").unwrap();
        let ks = bs["constants"]["k_S_estimate"].as_f64().unwrap();
        assert!((ks - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn csv_headers() {
        let (_, sol) = load_reference_problem(ReferenceId::B);
        let text = multipliers_csv(&sol.pack(4), 9);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# seed = 9"));
        lines.next();
        assert_eq!(lines.next(), Some("t,p0,q0,w,atom,gamma0"));
        assert!(text.lines().last().unwrap().contains(",1.000000000000e+00,"));
        let s = solution_csv(&sol.process(4), 0);
        assert!(s.lines().last().unwrap().ends_with(','));
    }
}
