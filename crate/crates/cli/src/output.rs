//! Formatting, files and error reporting.

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use absgrad::gradients::fmt_num;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug)]
pub enum CliError {
    Lib(absgrad::Error),
    Usage(String),
    /// A verification suite ran but did not pass; carries the report.
    Failed(String),
}

impl From<absgrad::Error> for CliError {
    fn from(e: absgrad::Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_numerical() => 2,
            CliError::Failed(_) => 2,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Lib(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Failed(_) => "verification_failed",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Lib(e) => e.to_string(),
            CliError::Usage(m) => m.clone(),
            CliError::Failed(_) => "identity suite exceeded its tolerances".into(),
        }
    }
}

/// Prints the JSON error to stderr (and a failed report to stdout).
pub fn fail(e: &CliError) -> ExitCode {
    if let CliError::Failed(report) = e {
        print!("{report}");
    }
    let body =
        serde_json::json!({"error": e.kind(), "message": e.message(), "exit_code": e.code()});
    eprintln!("{body}");
    ExitCode::from(e.code())
}

pub fn num(v: f64) -> String {
    fmt_num(v)
}

pub fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(",")
}

/// Replaces negative zeros so output does not depend on operation order.
fn clean(v: Value) -> Value {
    match v {
        Value::Number(n) if n.as_f64() == Some(0.0) && n.is_f64() => Value::from(0.0),
        Value::Array(a) => Value::Array(a.into_iter().map(clean).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, clean(v))).collect()),
        other => other,
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let v = clean(serde_json::to_value(value).expect("outputs serialize"));
    serde_json::to_string_pretty(&v).expect("values serialize") + "\n"
}

pub fn csv_strings(header: &[String], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Lib(e.into());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Lib(absgrad::Error::Io(e.into_error())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn csv(header: &[&str], rows: &[Vec<f64>]) -> Result<String, CliError> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| r.iter().map(|&v| num(v)).collect())
        .collect();
    csv_strings(&header, &rows)
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

pub fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
