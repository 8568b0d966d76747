use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;
const REPORT_FORMAT: &str = "tsinv-report";
const SIGNIFICANT_DIGITS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Eval,
    Ablation,
    Disentanglement,
    KSelection,
    Probe,
    Gradients,
    Training,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    kind: ReportKind,
    body: T,
}

/// `x` rounded to 6 significant digits; non-finite values pass through.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().expect("formatted float parses")
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            if let Some(r) = serde_json::Number::from_f64(round_sig(x)) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Pretty JSON of a versioned report with every float rounded to 6 significant digits.
pub fn report_bytes<T: Serialize>(kind: ReportKind, body: &T) -> Result<Vec<u8>> {
    let env = Envelope { format: REPORT_FORMAT.into(), version: REPORT_VERSION, kind, body };
    let mut value = serde_json::to_value(&env).map_err(|e| Error::data(format!("report encoding: {e}")))?;
    round_floats(&mut value);
    let mut bytes = serde_json::to_vec_pretty(&value).map_err(|e| Error::data(format!("report encoding: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_report<T: Serialize>(path: &Path, kind: ReportKind, body: &T) -> Result<()> {
    let bytes = report_bytes(kind, body)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_checked(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { path: path.into(), line: e.line(), msg: e.to_string() })?;
    if value.get("format").and_then(Value::as_str) != Some(REPORT_FORMAT) {
        return Err(Error::Parse { path: path.into(), line: 1, msg: "not a report file".into() });
    }
    let version = value.get("version").and_then(Value::as_u64);
    if version != Some(u64::from(REPORT_VERSION)) {
        return Err(Error::Version {
            path: path.into(),
            expected: REPORT_VERSION.to_string(),
            found: version.map_or_else(|| "none".into(), |v| v.to_string()),
        });
    }
    Ok(value)
}

/// Kind of the report stored at `path`.
pub fn report_kind(path: &Path) -> Result<ReportKind> {
    let value = read_checked(path)?;
    let kind = value.get("kind").cloned().unwrap_or(Value::Null);
    serde_json::from_value(kind).map_err(|e| Error::Parse { path: path.into(), line: 1, msg: format!("report kind: {e}") })
}

/// Reads a report written by [`write_report`], checking format, version and kind.
pub fn read_report<T: DeserializeOwned>(path: &Path, kind: ReportKind) -> Result<T> {
    let value = read_checked(path)?;
    let env: Envelope<T> =
        serde_json::from_value(value).map_err(|e| Error::Parse { path: path.into(), line: 1, msg: e.to_string() })?;
    if env.kind != kind {
        return Err(Error::data(format!("expected a {kind:?} report, found {:?}", env.kind)));
    }
    Ok(env.body)
}
