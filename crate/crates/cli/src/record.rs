//! Result files: CSV tables whose rows carry the configuration hash and seed,
//! and one JSON summary per run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use erw_core::estimators::SpeedEstimate;
use erw_core::rng::SeedSpec;
use erw_core::stats::Estimate;
use serde::Serialize;

use crate::config::ExperimentConfig;

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A CSV table. Every row starts with `config_hash,seed,stream`.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        let mut header = vec!["config_hash".to_string(), "seed".into(), "stream".into()];
        header.extend(columns.iter().map(|c| c.to_string()));
        Self {
            name: name.to_string(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, cfg: &ExperimentConfig, values: Vec<String>) {
        assert_eq!(values.len() + 3, self.header.len(), "row width of table {}", self.name);
        let mut row = vec![cfg.hash(), cfg.seed.to_string(), cfg.stream.to_string()];
        row.extend(values);
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

/// Columns of [`estimate_row`].
pub const ESTIMATE_COLUMNS: &[&str] = &[
    "method",
    "d",
    "m",
    "beta_or_t",
    "estimate",
    "stderr",
    "ess",
    "replicates",
    "window",
    "truncation_rate",
];

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

pub fn estimate_row(e: &SpeedEstimate) -> Vec<String> {
    vec![
        e.method.tag().to_string(),
        e.d.to_string(),
        e.m.to_string(),
        opt(e.parameter),
        e.value.to_string(),
        e.stderr.to_string(),
        opt(e.ess),
        e.replicates.to_string(),
        opt(e.window.map(|w| w.future)),
        e.truncation_rate.to_string(),
    ]
}

/// A named scalar with its standard error, for summaries.
#[derive(Debug, Clone, Serialize)]
pub struct Quantity {
    pub name: String,
    pub estimate: f64,
    pub stderr: f64,
}

impl Quantity {
    pub fn new(name: &str, e: Estimate) -> Self {
        Self {
            name: name.to_string(),
            estimate: e.value,
            stderr: e.stderr,
        }
    }
}

/// JSON summary written next to the tables of a run.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRecord {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub experiment: String,
    pub config_hash: String,
    pub seed: SeedSpec,
    pub config: String,
    pub wall_clock_seconds: f64,
    pub estimates: Vec<SpeedEstimate>,
    pub quantities: Vec<Quantity>,
    pub tables: Vec<PathBuf>,
}

impl ResultRecord {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            command: command.to_string(),
            experiment: cfg.experiment.clone(),
            config_hash: cfg.hash(),
            seed: cfg.seed_spec(),
            config: cfg.emit(),
            wall_clock_seconds: 0.0,
            estimates: Vec::new(),
            quantities: Vec::new(),
            tables: Vec::new(),
        }
    }
}

/// Writes the tables as `<out>/<experiment>_<table>.csv` and the summary as
/// `<out>/<experiment>_<command>.json`. Returns the summary path.
pub fn write_run(
    out: &Path,
    cfg: &ExperimentConfig,
    mut record: ResultRecord,
    tables: &[Table],
    elapsed: Duration,
) -> std::io::Result<PathBuf> {
    fs::create_dir_all(out)?;
    for t in tables {
        let path = out.join(format!("{}_{}.csv", cfg.experiment, t.name));
        fs::write(&path, t.to_csv())?;
        record.tables.push(path);
    }
    record.wall_clock_seconds = elapsed.as_secs_f64();
    let path = out.join(format!("{}_{}.json", cfg.experiment, record.command));
    let json = serde_json::to_string_pretty(&record).map_err(std::io::Error::other)?;
    fs::write(&path, json + "\n")?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_prefixed_with_provenance() {
        let cfg = ExperimentConfig::default();
        let mut t = Table::new("demo", &["x", "y"]);
        t.push(&cfg, vec!["1".into(), "a,b".into()]);
        let text = t.to_csv();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("config_hash,seed,stream,x,y"));
        assert_eq!(lines.next().unwrap(), format!("{},1,0,1,\"a,b\"", cfg.hash()));
    }
}
