//! Result envelope and its CSV and JSON renderings.
//!
//! CSV carries no timestamps, so identical configurations give identical bytes.

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Format};
use crate::error::CliResult;
use crate::run::Record;

pub const TOOL: &str = "noniid-qlearn";

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Timestamps {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

#[derive(Debug, Serialize)]
pub struct ResultEnvelope<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub config: &'a ExperimentConfig,
    pub config_hash: String,
    pub timestamps: Timestamps,
    /// Every logarithm in the reported bounds is natural.
    pub log_base: &'static str,
    pub metrics: Map<String, Value>,
    pub bounds: Map<String, Value>,
    pub flags: Map<String, Value>,
    pub pass: bool,
}

/// SHA-256 of `config <len>\0<canonical json>`, hex encoded.
pub fn config_hash(cfg: &ExperimentConfig) -> CliResult<String> {
    let body = serde_json::to_string(cfg)?;
    let mut h = Sha256::new();
    h.update(format!("config {}\0", body.len()).as_bytes());
    h.update(body.as_bytes());
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn map<T: Into<Value> + Copy>(items: &[(&'static str, T)]) -> Map<String, Value> {
    items.iter().map(|&(k, v)| (k.to_string(), v.into())).collect()
}

impl<'a> ResultEnvelope<'a> {
    pub fn new(cfg: &'a ExperimentConfig, rec: &Record, timestamps: Timestamps) -> CliResult<Self> {
        Ok(Self {
            tool: TOOL,
            version: env!("CARGO_PKG_VERSION"),
            subcommand: cfg.subcommand.name(),
            config: cfg,
            config_hash: config_hash(cfg)?,
            timestamps,
            log_base: "natural",
            metrics: rec.metrics.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            bounds: map(&rec.bounds),
            flags: map(&rec.flags),
            pass: rec.pass(),
        })
    }

    fn csv_cell(v: &Value) -> String {
        match v {
            Value::String(s) => s.clone(),
            Value::Null => "NaN".into(),
            other => other.to_string(),
        }
    }

    /// Header row, then one data row.
    pub fn write_csv<W: Write>(&self, out: W) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(out);
        let cols = || self.metrics.iter().chain(&self.bounds).chain(&self.flags);
        let header = ["subcommand", "config_hash"].into_iter().chain(cols().map(|(k, _)| k.as_str())).chain(["pass"]);
        w.write_record(header)?;
        let row = [self.subcommand.to_string(), self.config_hash.clone()]
            .into_iter()
            .chain(cols().map(|(_, v)| Self::csv_cell(v)))
            .chain([self.pass.to_string()]);
        w.write_record(row)?;
        w.flush()?;
        Ok(())
    }

    pub fn write<W: Write>(&self, format: Format, mut out: W) -> CliResult<()> {
        match format {
            Format::Csv => self.write_csv(out),
            Format::Json => {
                serde_json::to_writer_pretty(&mut out, self)?;
                out.write_all(b"\n")?;
                Ok(())
            }
        }
    }
}
