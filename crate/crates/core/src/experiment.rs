//! Multi-seed experiment orchestration and artifact layout.
//!
//! One experiment is (config, seed list); every seed builds its own stream
//! and net, runs the full task sequence, and contributes one run to the
//! aggregate. Artifacts land under a single directory:
//!
//! ```text
//! out/
//!   results.json            # everything, byte-reproducible
//!   metrics.json
//!   aggregate.csv
//!   seed_<s>/
//!     accuracy_matrix.csv
//!     partitions.json
//!     gradmem/              # per-layer averaged gradients + manifest
//!     adapters/             # per-task per-layer A/B matrices + manifest
//! ```

use std::path::Path;

use crate::config::ExperimentConfig;
use crate::network::{pretrain_backbone, ToyNet};
use crate::report::{
    aggregate_csv, aggregate_runs, write_atomic, write_json_atomic, MetricsDoc, ResultsDoc,
    SeedMetricsDoc, SeedRunDoc, RESULTS_SCHEMA_VERSION,
};
use crate::rng;
use crate::tasks::gen_gaussian_stream;
use crate::trainer::{run_stream, RunResult, Trainer};
use crate::Result;

pub struct SeedOutcome {
    pub result: RunResult,
    pub trainer: Trainer,
}

pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub outcomes: Vec<SeedOutcome>,
}

impl ExperimentResult {
    pub fn runs(&self) -> Vec<RunResult> {
        self.outcomes.iter().map(|o| o.result.clone()).collect()
    }

    pub fn results_doc(&self) -> ResultsDoc {
        let runs = self.runs();
        ResultsDoc {
            schema_version: RESULTS_SCHEMA_VERSION,
            config: self.config.clone(),
            runs: runs
                .iter()
                .map(|r| SeedRunDoc {
                    seed: r.seed,
                    accuracy_matrix: r.accuracy.columns().to_vec(),
                    faa: r.metrics.faa,
                    caa: r.metrics.caa,
                    forgetting: r.metrics.forgetting,
                    plasticity: r.metrics.plasticity,
                    task_reports: r.reports.clone(),
                    partitions: r.partitions.clone(),
                })
                .collect(),
            aggregate: aggregate_runs(&runs),
        }
    }

    pub fn metrics_doc(&self) -> MetricsDoc {
        let runs = self.runs();
        MetricsDoc {
            schema_version: RESULTS_SCHEMA_VERSION,
            per_seed: runs
                .iter()
                .map(|r| SeedMetricsDoc {
                    seed: r.seed,
                    faa: r.metrics.faa,
                    caa: r.metrics.caa,
                    forgetting: r.metrics.forgetting,
                    plasticity: r.metrics.plasticity,
                })
                .collect(),
            aggregate: aggregate_runs(&runs),
        }
    }
}

/// Build (and optionally pretrain) the frozen backbone for one seed.
pub fn build_net(cfg: &ExperimentConfig, input_dim: usize, seed: u64) -> Result<ToyNet> {
    let mut net = ToyNet::new(
        input_dim,
        &cfg.network.hidden_widths,
        cfg.network.activation,
        rng::mix_seed(seed, &[0x0E7]),
    );
    if cfg.network.pretrain {
        let generic = gen_gaussian_stream(
            1,
            cfg.network.pretrain_classes,
            input_dim,
            cfg.network.pretrain_separation,
            100,
            10,
            rng::mix_seed(seed, &[0x93E]),
        )?;
        let task = &generic.tasks[0];
        pretrain_backbone(
            &mut net,
            &task.train.x,
            &task.train.y,
            cfg.network.pretrain_epochs,
            cfg.network.pretrain_lr,
            64,
            rng::mix_seed(seed, &[0x93F]),
        )?;
    }
    Ok(net)
}

/// Run the full task sequence for one seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let stream = cfg.stream.build(seed)?;
    let net = build_net(cfg, stream.input_dim, seed)?;
    let (result, trainer) = run_stream(net, &stream, &cfg.train, seed)?;
    Ok(SeedOutcome { result, trainer })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let mut outcomes = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        outcomes.push(run_seed(cfg, seed)?);
    }
    Ok(ExperimentResult { config: cfg.clone(), outcomes })
}

/// Write the full artifact tree for one experiment.
pub fn write_artifacts(out_dir: &Path, exp: &ExperimentResult) -> Result<()> {
    write_json_atomic(&out_dir.join("results.json"), &exp.results_doc())?;
    write_json_atomic(&out_dir.join("metrics.json"), &exp.metrics_doc())?;
    let runs = exp.runs();
    write_atomic(&out_dir.join("aggregate.csv"), aggregate_csv(&runs).as_bytes())?;
    for outcome in &exp.outcomes {
        let seed_dir = out_dir.join(format!("seed_{}", outcome.result.seed));
        write_atomic(
            &seed_dir.join("accuracy_matrix.csv"),
            outcome.result.accuracy.to_csv().as_bytes(),
        )?;
        write_json_atomic(&seed_dir.join("partitions.json"), &outcome.result.partitions)?;
        outcome.trainer.mem().save_dir(&seed_dir.join("gradmem"))?;
        let net = outcome.trainer.net();
        let stacks: Vec<_> = (0..net.num_layers()).map(|l| net.stack(l)).collect();
        crate::lora::save_adapters(&seed_dir.join("adapters"), &stacks)?;
    }
    Ok(())
}
