//! Run artifacts: atomic file writes and the JSON documents emitted by the
//! experiment runner.
//!
//! `results.json` is fully determined by (config, seeds): it carries no
//! timestamps or absolute paths, so re-running the same manifest reproduces
//! it byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::trainer::{PartitionRecord, RunResult, TaskReport};
use crate::Result;

pub const RESULTS_SCHEMA_VERSION: u32 = 1;

/// Write-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// One seed's run as serialized into `results.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRunDoc {
    pub seed: u64,
    /// Lower-triangular accuracy matrix: row `j` holds accuracies on tasks
    /// `1..=j+1` after training task `j+1`.
    pub accuracy_matrix: Vec<Vec<f64>>,
    pub faa: f64,
    pub caa: f64,
    pub forgetting: f64,
    pub plasticity: f64,
    pub task_reports: Vec<TaskReport>,
    pub partitions: Vec<PartitionRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateDoc {
    pub faa_mean: f64,
    pub faa_std: f64,
    pub caa_mean: f64,
    pub caa_std: f64,
    pub forgetting_mean: f64,
    pub forgetting_std: f64,
    pub plasticity_mean: f64,
    pub plasticity_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsDoc {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRunDoc>,
    pub aggregate: AggregateDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub schema_version: u32,
    pub per_seed: Vec<SeedMetricsDoc>,
    pub aggregate: AggregateDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedMetricsDoc {
    pub seed: u64,
    pub faa: f64,
    pub caa: f64,
    pub forgetting: f64,
    pub plasticity: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate_runs(runs: &[RunResult]) -> AggregateDoc {
    let col = |f: fn(&RunResult) -> f64| runs.iter().map(f).collect::<Vec<_>>();
    let (faa_mean, faa_std) = mean_std(&col(|r| r.metrics.faa));
    let (caa_mean, caa_std) = mean_std(&col(|r| r.metrics.caa));
    let (forgetting_mean, forgetting_std) = mean_std(&col(|r| r.metrics.forgetting));
    let (plasticity_mean, plasticity_std) = mean_std(&col(|r| r.metrics.plasticity));
    AggregateDoc {
        faa_mean,
        faa_std,
        caa_mean,
        caa_std,
        forgetting_mean,
        forgetting_std,
        plasticity_mean,
        plasticity_std,
    }
}

/// Plot-ready aggregate CSV across seeds (mean and standard deviation).
pub fn aggregate_csv(runs: &[RunResult]) -> String {
    let mut out = String::from("metric,mean,std\n");
    let rows = [
        ("faa", runs.iter().map(|r| r.metrics.faa).collect::<Vec<_>>()),
        ("caa", runs.iter().map(|r| r.metrics.caa).collect()),
        ("forgetting", runs.iter().map(|r| r.metrics.forgetting).collect()),
        ("plasticity", runs.iter().map(|r| r.metrics.plasticity).collect()),
    ];
    for (name, vals) in rows {
        let (m, s) = mean_std(&vals);
        out.push_str(&format!("{name},{m},{s}\n"));
    }
    out
}
