//! JSON run records and atomic file output.

use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use super::table::Standardization;
use super::CliError;
use crate::effects::SensitivityBand;
use crate::estimator::{FitResult, RestartOutcome};
use crate::model::FullParams;

/// Writes every `f64` in scientific notation with 17 significant digits.
struct FullPrecision;

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Serializes `value` as compact JSON with full float precision.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision);
    value
        .serialize(&mut ser)
        .map_err(|e| CliError::Io(format!("cannot serialize record: {e}")))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| CliError::Io(e.to_string()))
}

/// Writes `contents` to a temporary file next to `path` and renames it.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    write_atomic_with(path, |f| f.write_all(contents).map_err(CliError::from))
}

pub fn write_atomic_with<F>(path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut std::fs::File) -> Result<(), CliError>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    fill(tmp.as_file_mut())?;
    tmp.as_file_mut().flush()?;
    tmp.persist(path)
        .map_err(|e| CliError::Io(format!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedInterval {
    pub name: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub replicates: usize,
    pub replicates_used: usize,
    pub replicates_failed: usize,
    pub ci_level: f64,
    pub intervals: Vec<NamedInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub converged: bool,
    pub log_likelihood: f64,
    pub gradient_norm: f64,
    pub n_restarts_agreeing: usize,
    pub boundary_suspect: bool,
    pub restarts: Vec<RestartOutcome>,
    /// Parameters by name; covariate weights use the input column names.
    pub parameters: Vec<NamedValue>,
    pub params: FullParams,
}

impl FitSummary {
    pub fn new(res: &FitResult, parameters: Vec<NamedValue>) -> Self {
        Self {
            converged: res.converged,
            log_likelihood: res.log_likelihood_at_opt,
            gradient_norm: res.gradient_norm,
            n_restarts_agreeing: res.n_restarts_agreeing,
            boundary_suspect: res.boundary_suspect,
            restarts: res.restarts.clone(),
            parameters,
            params: res.params.clone(),
        }
    }
}

/// Everything needed to audit and replay one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name; re-running them reproduces the record.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub covariates: Vec<String>,
    pub standardization: Option<Standardization>,
    pub fit: Option<FitSummary>,
    pub estimands: Vec<NamedValue>,
    pub bootstrap: Option<BootstrapSummary>,
    pub sweep: Option<SensitivityBand>,
    pub mutual_information: Option<f64>,
    pub warnings: Vec<String>,
}

impl RunRecord {
    pub fn new<C: Serialize>(command: &str, argv: &[String], config: &C, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: argv.to_vec(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            seed,
            covariates: Vec::new(),
            standardization: None,
            fit: None,
            estimands: Vec::new(),
            bootstrap: None,
            sweep: None,
            mutual_information: None,
            warnings: Vec::new(),
        }
    }
}
