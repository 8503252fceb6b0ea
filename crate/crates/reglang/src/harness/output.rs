//! CSV emission and JSON run manifests.

use super::{ExperimentConfig, HarnessError};
use serde::Serialize;
use std::path::{Path, PathBuf};

/// A rectangular result table with a fixed header. Rows are plain CSV
/// fragments; writing is deterministic so reruns reproduce files byte-exactly.
#[derive(Debug, Clone, Serialize)]
pub struct Table {
    pub name: String,
    pub header: String,
    pub rows: Vec<String>,
}

impl Table {
    pub fn new(name: &str, header: &str) -> Self {
        Self {
            name: name.to_string(),
            header: header.to_string(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: String) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.header.len() + self.rows.len() * 64);
        out.push_str(&self.header);
        out.push('\n');
        for row in &self.rows {
            out.push_str(row);
            out.push('\n');
        }
        out
    }

    /// Rows as JSON objects keyed by the header columns.
    pub fn to_json(&self) -> serde_json::Value {
        let cols: Vec<&str> = self.header.split(',').collect();
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut obj = serde_json::Map::new();
                for (k, v) in cols.iter().zip(row.split(',')) {
                    let value = v
                        .parse::<f64>()
                        .map(|f| {
                            serde_json::Number::from_f64(f)
                                .map(serde_json::Value::Number)
                                .unwrap_or_else(|| serde_json::Value::String(v.to_string()))
                        })
                        .unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
                    obj.insert((*k).to_string(), value);
                }
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::Value::Array(rows)
    }
}

/// JSON manifest accompanying each emitted table set.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_hash: String,
    pub base_seed: u64,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
    pub cell_seeds: Vec<CellSeedRecord>,
    pub total_wall_secs: f64,
}

#[derive(Debug, Serialize)]
pub struct CellSeedRecord {
    pub key: String,
    pub seed: u64,
    pub epochs: usize,
    pub wall_secs: f64,
}

/// Serializes the resolved config as a JSON object of its canonical pairs.
pub fn config_json(config: &ExperimentConfig) -> serde_json::Value {
    let mut obj = serde_json::Map::new();
    for line in config.canonical_text().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            obj.insert(k.to_string(), serde_json::Value::String(v.to_string()));
        }
    }
    serde_json::Value::Object(obj)
}

/// File format for tabular outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Writes every table (as CSV or JSON) plus the manifest into `dir`.
pub fn write_outputs(
    dir: &Path,
    experiment: &str,
    config: &ExperimentConfig,
    tables: &[Table],
    cell_seeds: Vec<CellSeedRecord>,
    total_wall_secs: f64,
    format: OutputFormat,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut outputs = Vec::new();
    for table in tables {
        let (file_name, payload) = match format {
            OutputFormat::Csv => (format!("{}.csv", table.name), table.to_csv()),
            OutputFormat::Json => (
                format!("{}.json", table.name),
                serde_json::to_string_pretty(&table.to_json()).expect("json") + "\n",
            ),
        };
        let path = dir.join(&file_name);
        std::fs::write(&path, payload)?;
        outputs.push(file_name);
        written.push(path);
    }
    let manifest = Manifest {
        experiment: experiment.to_string(),
        config_hash: config.hash(),
        base_seed: config.base_seed,
        config: config_json(config),
        outputs,
        cell_seeds,
        total_wall_secs,
    };
    let manifest_path = dir.join(format!("{experiment}_manifest.json"));
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest json") + "\n",
    )?;
    written.push(manifest_path);
    Ok(written)
}
