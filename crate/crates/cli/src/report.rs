//! Run records and their CSV / JSON-lines encodings.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use interlace::analytics::EstimatorReport;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CSV_HEADER: &str = "experiment,metric,value,ci_lo,ci_hi,trials,seed,wall_ms";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    JsonLines,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" | "json-lines" => Ok(Format::JsonLines),
            _ => Err(format!("unknown format '{s}' (csv or jsonl)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub trials: u64,
}

impl Metric {
    pub fn point(name: impl Into<String>, value: f64, trials: u64) -> Self {
        Metric { name: name.into(), value, ci_lo: None, ci_hi: None, trials }
    }

    pub fn interval(name: impl Into<String>, value: f64, ci: (f64, f64), trials: u64) -> Self {
        Metric { name: name.into(), value, ci_lo: Some(ci.0), ci_hi: Some(ci.1), trials }
    }
}

/// Everything a run reports. Identical for identical (config, seed) at any worker count
/// as long as `wall_ms` is left at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub seed_rule: String,
    pub generator: String,
    pub version: String,
    pub wall_ms: u64,
    pub metrics: Vec<Metric>,
}

impl RunRecord {
    pub fn new(experiment: &str, config_text: &str, seed: u64) -> Self {
        RunRecord {
            experiment: experiment.to_string(),
            config_hash: config_hash(config_text),
            seed,
            seed_rule: interlace::trials::SEED_RULE.to_string(),
            generator: interlace::trials::GENERATOR.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_ms: 0,
            metrics: Vec::new(),
        }
    }

    pub fn push(&mut self, m: Metric) {
        self.metrics.push(m);
    }

    /// Adds the estimate under `name`, plus `name.expected` and `name.z` when known.
    pub fn push_estimate(&mut self, name: &str, r: &EstimatorReport) {
        self.push(Metric::interval(name, r.estimate, (r.ci_lo, r.ci_hi), r.trials));
        if let Some(e) = r.expected {
            self.push(Metric::point(format!("{name}.expected"), e, r.trials));
        }
        if let Some(z) = r.z_score {
            self.push(Metric::point(format!("{name}.z"), z, r.trials));
        }
    }

    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

/// SHA-256 of the canonical config text, lowercase hex.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) { format!("\"{}\"", s.replace('"', "\"\"")) } else { s.to_string() }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Shortest round-trip form, with exponents for very large or small magnitudes.
fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_csv<W: Write>(rec: &RunRecord, mut w: W) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for m in &rec.metrics {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            csv_field(&rec.experiment),
            csv_field(&m.name),
            num(m.value),
            opt(m.ci_lo),
            opt(m.ci_hi),
            m.trials,
            rec.seed,
            rec.wall_ms
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Line<'a> {
    experiment: &'a str,
    metric: &'a str,
    value: f64,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    trials: u64,
    seed: u64,
    wall_ms: u64,
    config_hash: &'a str,
    seed_rule: &'a str,
    generator: &'a str,
    version: &'a str,
}

/// One JSON object per metric.
pub fn write_jsonl<W: Write>(rec: &RunRecord, mut w: W) -> io::Result<()> {
    for m in &rec.metrics {
        let line = Line {
            experiment: &rec.experiment,
            metric: &m.name,
            value: m.value,
            ci_lo: m.ci_lo,
            ci_hi: m.ci_hi,
            trials: m.trials,
            seed: rec.seed,
            wall_ms: rec.wall_ms,
            config_hash: &rec.config_hash,
            seed_rule: &rec.seed_rule,
            generator: &rec.generator,
            version: &rec.version,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn render(rec: &RunRecord, format: Format) -> Vec<u8> {
    let mut buf = Vec::new();
    match format {
        Format::Csv => write_csv(rec, &mut buf),
        Format::JsonLines => write_jsonl(rec, &mut buf),
    }
    .expect("writing to memory");
    buf
}

pub fn emit_report(rec: &RunRecord, format: Format, path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&render(rec, format))?;
    w.flush()
}
