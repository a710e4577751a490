//! Operator surface: run experiments, sweep the stability/plasticity ratio,
//! and execute the theory probes.
//!
//! Exit codes: 0 success, 1 runtime failure (including failed theory
//! checks), 2 bad configuration or usage.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use splitlora::config::ExperimentConfig;
use splitlora::experiment::{run_seed, write_artifacts, ExperimentResult};
use splitlora::metrics::{relative_curves, RunMetrics};
use splitlora::report::{aggregate_runs, write_atomic, write_json_atomic, AggregateDoc};
use splitlora::theory::{run_all_checks, TheoryCheckConfig};

#[derive(Parser)]
#[command(name = "splitlora", version, about = "Continual-learning lab runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory; defaults to $SPLITLORA_OUT_DIR, then ./runs
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Replace the config's seed list with this single seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the resolved plan and touch nothing
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config across its seeds
    Run {
        config: PathBuf,
    },
    /// Run the same experiment once per ratio value and aggregate
    SweepAlpha {
        config: PathBuf,
        /// Comma-separated ratio values, e.g. --alphas 1,5,10,20,30
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
    },
    /// Run the numerical verification suite and write its report
    Theory {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Multiplies every tolerance; 0 demands exact arithmetic
        #[arg(long, default_value_t = 1.0)]
        tolerance_scale: f64,
    },
}

enum CliError {
    /// Bad config or arguments: exit 2.
    Usage(String),
    /// Failure while running or writing: exit 1.
    Runtime(String),
}

impl CliError {
    fn report(self) -> ExitCode {
        match self {
            CliError::Usage(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
            CliError::Runtime(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(1)
            }
        }
    }
}

const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Everything needed to reproduce a run; re-running a manifest's config and
/// seeds yields a byte-identical results.json.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    schema_version: u32,
    command: String,
    config: ExperimentConfig,
    seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alphas: Option<Vec<f64>>,
    /// sha256 over the resolved config JSON.
    content_hash: String,
    outputs: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| std::env::var_os("SPLITLORA_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let result = match &cli.command {
        Command::Run { config } => cmd_run(config, &out_dir, cli.seed, cli.dry_run),
        Command::SweepAlpha { config, alphas } => {
            cmd_sweep_alpha(config, alphas, &out_dir, cli.seed, cli.dry_run)
        }
        Command::Theory { trials, tolerance_scale } => {
            cmd_theory(*trials, *tolerance_scale, cli.seed, &out_dir, cli.dry_run)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::from_path(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed_override {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn content_hash(cfg: &ExperimentConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(cfg.to_pretty_json().as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn run_all_seeds(cfg: &ExperimentConfig) -> Result<ExperimentResult, CliError> {
    use rayon::prelude::*;
    let outcomes: Result<Vec<_>, _> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed))
        .collect();
    let outcomes = outcomes.map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(ExperimentResult { config: cfg.clone(), outcomes })
}

fn cmd_run(
    config_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    dry_run: bool,
) -> Result<(), CliError> {
    let cfg = load_config(config_path, seed)?;
    if dry_run {
        print!("{}", cfg.to_pretty_json());
        println!("out_dir: {}", out_dir.display());
        return Ok(());
    }
    let exp = run_all_seeds(&cfg)?;
    write_artifacts(out_dir, &exp).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut outputs = vec![
        "results.json".to_string(),
        "metrics.json".to_string(),
        "aggregate.csv".to_string(),
    ];
    for seed in &cfg.seeds {
        outputs.push(format!("seed_{seed}/"));
    }
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        command: "run".into(),
        seeds: cfg.seeds.clone(),
        alphas: None,
        content_hash: content_hash(&cfg),
        config: cfg,
        outputs,
    };
    write_json_atomic(&out_dir.join("manifest.json"), &manifest)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let agg = aggregate_runs(&exp.runs());
    println!(
        "done: {} seed(s); FAA {:.4} +- {:.4}, forgetting {:.4} -> {}",
        exp.outcomes.len(),
        agg.faa_mean,
        agg.faa_std,
        agg.forgetting_mean,
        out_dir.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepAlphaEntry {
    alpha: f64,
    aggregate: AggregateDoc,
    relative_forgetting: f64,
    relative_plasticity: f64,
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    schema_version: u32,
    baseline_alpha: f64,
    entries: Vec<SweepAlphaEntry>,
}

fn cmd_sweep_alpha(
    config_path: &Path,
    alphas: &[f64],
    out_dir: &Path,
    seed: Option<u64>,
    dry_run: bool,
) -> Result<(), CliError> {
    if alphas.is_empty() {
        return Err(CliError::Usage("at least one alpha is required".into()));
    }
    let mut seen = alphas.to_vec();
    seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Usage("duplicate alpha values".into()));
    }
    if alphas.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
        return Err(CliError::Usage("alphas must be positive and finite".into()));
    }
    let cfg = load_config(config_path, seed)?;
    if dry_run {
        print!("{}", cfg.to_pretty_json());
        println!("alphas: {alphas:?}");
        println!("out_dir: {}", out_dir.display());
        return Ok(());
    }

    use rayon::prelude::*;
    let experiments: Result<Vec<_>, CliError> = alphas
        .par_iter()
        .map(|&alpha| {
            let mut sub = cfg.clone();
            sub.train.alpha = alpha;
            run_all_seeds(&sub).map(|exp| (alpha, exp))
        })
        .collect();
    let experiments = experiments?;

    let mut per_alpha_metrics: Vec<(f64, RunMetrics)> = Vec::new();
    let mut aggregates: Vec<(f64, AggregateDoc)> = Vec::new();
    for (alpha, exp) in &experiments {
        let sub_dir = out_dir.join(format!("alpha_{alpha}"));
        write_artifacts(&sub_dir, exp).map_err(|e| CliError::Runtime(e.to_string()))?;
        let agg = aggregate_runs(&exp.runs());
        per_alpha_metrics.push((
            *alpha,
            RunMetrics {
                faa: agg.faa_mean,
                caa: agg.caa_mean,
                forgetting: agg.forgetting_mean,
                plasticity: agg.plasticity_mean,
            },
        ));
        aggregates.push((*alpha, agg));
    }
    // baseline for relative curves: alpha = 1 when swept, else the smallest
    let baseline_alpha = if alphas.contains(&1.0) {
        1.0
    } else {
        alphas.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let relatives = relative_curves(&per_alpha_metrics, baseline_alpha)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut entries = Vec::new();
    let mut csv = String::from(
        "alpha,faa_mean,faa_std,caa_mean,caa_std,forgetting_mean,forgetting_std,\
         plasticity_mean,plasticity_std,relative_forgetting,relative_plasticity\n",
    );
    for ((alpha, agg), rel) in aggregates.into_iter().zip(&relatives) {
        csv.push_str(&format!(
            "{alpha},{},{},{},{},{},{},{},{},{},{}\n",
            agg.faa_mean,
            agg.faa_std,
            agg.caa_mean,
            agg.caa_std,
            agg.forgetting_mean,
            agg.forgetting_std,
            agg.plasticity_mean,
            agg.plasticity_std,
            rel.relative_forgetting,
            rel.relative_plasticity
        ));
        entries.push(SweepAlphaEntry {
            alpha,
            aggregate: agg,
            relative_forgetting: rel.relative_forgetting,
            relative_plasticity: rel.relative_plasticity,
        });
    }
    let summary =
        SweepSummary { schema_version: MANIFEST_SCHEMA_VERSION, baseline_alpha, entries };
    write_json_atomic(&out_dir.join("sweep_summary.json"), &summary)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(&out_dir.join("relative_curves.csv"), csv.as_bytes())
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut outputs = vec!["sweep_summary.json".to_string(), "relative_curves.csv".to_string()];
    for alpha in alphas {
        outputs.push(format!("alpha_{alpha}/"));
    }
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        command: "sweep-alpha".into(),
        seeds: cfg.seeds.clone(),
        alphas: Some(alphas.to_vec()),
        content_hash: content_hash(&cfg),
        config: cfg,
        outputs,
    };
    write_json_atomic(&out_dir.join("manifest.json"), &manifest)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("sweep done: {} alphas -> {}", alphas.len(), out_dir.display());
    Ok(())
}

fn cmd_theory(
    trials: usize,
    tolerance_scale: f64,
    seed: Option<u64>,
    out_dir: &Path,
    dry_run: bool,
) -> Result<(), CliError> {
    if trials == 0 {
        return Err(CliError::Usage("trials must be positive".into()));
    }
    if !(tolerance_scale >= 0.0) {
        return Err(CliError::Usage("tolerance-scale must be nonnegative".into()));
    }
    let cfg = TheoryCheckConfig {
        trials,
        seed: seed.unwrap_or(7),
        tolerance_scale,
    };
    if dry_run {
        println!(
            "theory: trials={} seed={} tolerance_scale={}",
            cfg.trials, cfg.seed, cfg.tolerance_scale
        );
        println!("out_dir: {}", out_dir.display());
        return Ok(());
    }
    let report = run_all_checks(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_json_atomic(&out_dir.join("theory_report.json"), &report)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "loss-increase bound: {} ({} trials, {} violations, min margin {:.3e})",
        pass_str(report.prop1_pass),
        report.prop1.trials,
        report.prop1.violations,
        report.prop1.min_margin
    );
    println!(
        "expected-loss split: {} (max rel err stability {:.3e}, plasticity {:.3e})",
        pass_str(report.theorem_pass),
        report.theorem.max_stability_rel_err,
        report.theorem.max_plasticity_rel_err
    );
    println!(
        "gradient preservation: {} (quad slope {:.4}, drift(0) = {}, net slope {:.4})",
        pass_str(report.lemma_pass),
        report.lemma.quad_slope,
        report.lemma.zero_eta_drift,
        report.lemma.net_slope
    );
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Runtime("theory checks failed".into()))
    }
}

fn pass_str(b: bool) -> &'static str {
    if b {
        "PASS"
    } else {
        "FAIL"
    }
}
