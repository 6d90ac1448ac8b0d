//! Result envelopes and their JSONL / CSV forms.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{Benchmark, Format, RunConfig};
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub benchmark: Benchmark,
    pub seed: u64,
    pub index: usize,
    pub group: String,
    pub record: Value,
}

/// One aggregate row: labels such as task or difficulty, then metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub labels: Vec<(String, Value)>,
    pub metrics: Map<String, Value>,
}

impl AggregateRow {
    pub fn new(labels: Vec<(&str, Value)>, metrics: impl Serialize) -> Self {
        let metrics = match serde_json::to_value(metrics).expect("metrics serialize") {
            Value::Object(m) => m,
            other => Map::from_iter([("value".to_string(), other)]),
        };
        Self { labels: labels.into_iter().map(|(k, v)| (k.to_string(), v)).collect(), metrics }
    }

    pub fn to_json(&self) -> Value {
        let mut m = self.metrics.clone();
        for (k, v) in &self.labels {
            m.insert(k.clone(), v.clone());
        }
        Value::Object(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultEnvelope {
    pub config: RunConfig,
    pub config_hash: String,
    pub version: String,
    pub records: Vec<ResultRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub run_wallclock: f64,
}

impl ResultEnvelope {
    pub fn new(config: RunConfig, mut records: Vec<ResultRecord>, aggregates: Vec<AggregateRow>, run_wallclock: f64) -> Self {
        records.sort_by_key(|r| (r.benchmark, r.seed, r.index));
        Self { config_hash: config.hash(), config, version: VERSION.to_string(), records, aggregates, run_wallclock }
    }

    fn trailer(&self) -> Value {
        json!({
            "aggregate": self.aggregates.iter().map(AggregateRow::to_json).collect::<Vec<_>>(),
            "config": self.config,
            "config_hash": self.config_hash,
            "version": self.version,
            "run_wallclock": self.run_wallclock,
        })
    }

    /// One line per record, then one aggregate line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out += &serde_json::to_string(r).expect("record serializes");
            out.push('\n');
        }
        out += &self.trailer().to_string();
        out.push('\n');
        out
    }

    /// Aggregate table headed by the resolved config. Timing columns are left out.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# config={}\n# config_hash={}\n", serde_json::to_string(&self.config).expect("config serializes"), self.config_hash);
        let Some(first) = self.aggregates.first() else {
            return out;
        };
        let labels: Vec<&String> = first.labels.iter().map(|(k, _)| k).collect();
        let metrics: Vec<&String> = first.metrics.keys().filter(|k| !is_wallclock(k)).collect();
        let header: Vec<&str> = labels.iter().chain(&metrics).map(|s| s.as_str()).collect();
        out += &header.join(",");
        out.push('\n');
        for row in &self.aggregates {
            let mut cells: Vec<String> = row.labels.iter().map(|(_, v)| cell(v)).collect();
            cells.extend(metrics.iter().map(|k| row.metrics.get(*k).map(cell).unwrap_or_default()));
            out += &cells.join(",");
            out.push('\n');
        }
        out
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Jsonl => self.to_jsonl(),
            Format::Csv => self.to_csv(),
        }
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Keys holding wall-clock measurements.
pub fn is_wallclock(key: &str) -> bool {
    key.ends_with("_wallclock") || key.contains("latency_s")
}

pub fn strip_wallclock(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.retain(|k, _| !is_wallclock(k));
            m.values_mut().for_each(strip_wallclock);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_wallclock),
        _ => {}
    }
}

/// JSONL text with every wall-clock field removed.
pub fn strip_wallclock_jsonl(text: &str) -> String {
    text.lines()
        .map(|line| match serde_json::from_str::<Value>(line) {
            Ok(mut v) => {
                strip_wallclock(&mut v);
                v.to_string()
            }
            Err(_) => line.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn persist_results(envelope: &ResultEnvelope, path: &Path, format: Format) -> Result<(), CliError> {
    fs::write(path, envelope.render(format)).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
