//! JSON reports and CSV tables.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;
use crate::stats::Estimate;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    pub name: String,
    pub estimate: f64,
    pub stderr: f64,
    pub n_effective: f64,
}

impl Observable {
    pub fn new(name: impl Into<String>, e: Estimate) -> Self {
        Self { name: name.into(), estimate: e.estimate, stderr: e.stderr, n_effective: e.n_effective }
    }

    /// A deterministic quantity: zero standard error, one effective sample.
    pub fn exact(name: impl Into<String>, value: f64) -> Self {
        Self { name: name.into(), estimate: value, stderr: 0.0, n_effective: 1.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub ess: Option<f64>,
    pub residuals: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    /// Wall-clock time; only filled on request since it breaks byte stability.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool_version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub params: BTreeMap<String, Value>,
    pub observables: Vec<Observable>,
    pub diagnostics: Diagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
}

impl Report {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            seed,
            params: BTreeMap::new(),
            observables: Vec::new(),
            diagnostics: Diagnostics::default(),
            data: None,
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.params.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }

    pub fn push(&mut self, name: impl Into<String>, e: Estimate) -> &mut Self {
        self.observables.push(Observable::new(name, e));
        self
    }

    pub fn push_exact(&mut self, name: impl Into<String>, value: f64) -> &mut Self {
        self.observables.push(Observable::exact(name, value));
        self
    }

    pub fn residual(&mut self, name: &str, value: f64) -> &mut Self {
        self.diagnostics.residuals.insert(name.to_string(), value);
        self
    }

    pub fn observable(&self, name: &str) -> Option<&Observable> {
        self.observables.iter().find(|o| o.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Writes a header row followed by `rows`, all cells formatted with `Display`.
pub fn write_csv<W: Write>(out: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> crate::error::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io.into(),
        other => crate::error::Error::Config(format!("csv: {other:?}")),
    }
}
