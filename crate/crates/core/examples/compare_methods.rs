//! Compare training methods and ratio settings on the default stream.
//!
//! Usage: compare_methods [--rotated DEG] [--pretrain] [separation ...]
//!
//! For each separation value this runs split / threshold / plain-lora /
//! head-only across the configured seeds, prints mean FAA, forgetting and
//! plasticity, then sweeps the ratio parameter for the split method.

use splitlora::config::ExperimentConfig;
use splitlora::experiment::run_experiment;
use splitlora::metrics::spearman;
use splitlora::report::mean_std;
use splitlora::tasks::StreamSpec;
use splitlora::trainer::Method;

fn main() {
    let mut separations = Vec::new();
    let mut rotated: Option<f64> = None;
    let mut pretrain = false;
    let mut pt_classes = 8usize;
    let mut pt_epochs = 5usize;
    let mut pt_sep = 3.0f64;
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        match a.as_str() {
            "--rotated" => {
                rotated = Some(args.next().and_then(|v| v.parse().ok()).unwrap_or(30.0));
            }
            "--pretrain" => pretrain = true,
            "--pt-classes" => pt_classes = args.next().and_then(|v| v.parse().ok()).unwrap_or(8),
            "--pt-epochs" => pt_epochs = args.next().and_then(|v| v.parse().ok()).unwrap_or(5),
            "--pt-sep" => pt_sep = args.next().and_then(|v| v.parse().ok()).unwrap_or(3.0),
            other => {
                if let Ok(v) = other.parse() {
                    separations.push(v);
                }
            }
        }
    }
    if separations.is_empty() {
        separations.push(3.0);
    }

    for sep in separations {
        let mut cfg = ExperimentConfig::default();
        cfg.network.pretrain = pretrain;
        cfg.network.pretrain_classes = pt_classes;
        cfg.network.pretrain_epochs = pt_epochs;
        cfg.network.pretrain_separation = pt_sep;
        cfg.stream = match rotated {
            Some(deg) => StreamSpec::Rotated {
                tasks: 5,
                classes_per_task: 4,
                input_dim: 32,
                separation: sep,
                train_per_class: 200,
                test_per_class: 200,
                angle_step_deg: deg,
                fresh_labels: true,
            },
            None => StreamSpec::Gaussian {
                tasks: 5,
                classes_per_task: 4,
                input_dim: 32,
                separation: sep,
                train_per_class: 200,
                test_per_class: 200,
            },
        };
        println!(
            "=== separation {sep} rotated {rotated:?} pretrain {pretrain} (classes {pt_classes}, epochs {pt_epochs}, sep {pt_sep}) ==="
        );

        // joint upper bound: all classes as a single task
        if rotated.is_none() {
            let mut joint = cfg.clone();
            if let StreamSpec::Gaussian { tasks, classes_per_task, .. } = &mut joint.stream {
                *classes_per_task *= *tasks;
                *tasks = 1;
            }
            joint.seeds = vec![1, 2, 3];
            let joint_res = run_experiment(&joint).expect("joint run");
            let (jm, js) =
                mean_std(&joint_res.runs().iter().map(|r| r.metrics.faa).collect::<Vec<_>>());
            println!("joint-all-classes acc: {:.4} +- {:.4}", jm, js);
        }

        for method in [Method::Split, Method::Threshold, Method::PlainLora, Method::HeadOnly] {
            let mut sub = cfg.clone();
            sub.train.method = method;
            let t0 = std::time::Instant::now();
            let exp = run_experiment(&sub).expect("run");
            let runs = exp.runs();
            let (faa_m, faa_s) = mean_std(&runs.iter().map(|r| r.metrics.faa).collect::<Vec<_>>());
            let (fg_m, _) = mean_std(&runs.iter().map(|r| r.metrics.forgetting).collect::<Vec<_>>());
            let (pl_m, _) = mean_std(&runs.iter().map(|r| r.metrics.plasticity).collect::<Vec<_>>());
            let ks: Vec<String> = runs[0]
                .reports
                .iter()
                .map(|r| {
                    r.per_layer_k
                        .iter()
                        .map(|k| k.map_or("-".into(), |v| v.to_string()))
                        .collect::<Vec<_>>()
                        .join("/")
                })
                .collect();
            println!(
                "{method:?}: FAA {faa_m:.4} +- {faa_s:.4}  forgetting {fg_m:.4}  plasticity {pl_m:.4}  ({:.1}s)  k per task: {}",
                t0.elapsed().as_secs_f64(),
                ks.join(" | ")
            );
        }

        // one diagnostic run: realized alpha-hat per task and spectrum shape
        let mut diag = cfg.clone();
        diag.seeds = vec![1];
        diag.train.record_alpha_trace = true;
        let exp = run_experiment(&diag).expect("diag run");
        let run = &exp.runs()[0];
        for report in &run.reports {
            if let Some(trace) = &report.alpha_trace {
                let defined: Vec<f64> = trace.iter().filter_map(|p| p.alpha_hat).collect();
                let mean_alpha = defined.iter().sum::<f64>() / defined.len().max(1) as f64;
                let pos_num = trace.iter().filter(|p| p.numerator > 0.0).count();
                let neg_den = trace.iter().filter(|p| p.denominator < 0.0).count();
                println!(
                    "task {}: alpha_hat mean {:.3} (defined {}/{}), num>0 {}, den<0 {}",
                    report.task,
                    mean_alpha,
                    defined.len(),
                    trace.len(),
                    pos_num,
                    neg_den
                );
            }
        }
        for p in run.partitions.iter().filter(|p| p.layer == 1) {
            let total: f64 = p.sigma.iter().sum();
            let top: Vec<String> =
                p.sigma.iter().take(5).map(|s| format!("{:.3}", s / total)).collect();
            println!(
                "t {} layer {}: top sigma fractions {} (d {}, k_split {:?}, k_thr {:?})",
                p.t,
                p.layer,
                top.join(","),
                p.sigma.len(),
                p.k_split,
                p.k_threshold
            );
        }

        let alphas = [1.0, 5.0, 10.0, 20.0, 30.0, 80.0];
        let mut faas = Vec::new();
        let mut fgs = Vec::new();
        let mut pls = Vec::new();
        for &alpha in &alphas {
            let mut sub = cfg.clone();
            sub.train.alpha = alpha;
            let exp = run_experiment(&sub).expect("run");
            let runs = exp.runs();
            let (faa_m, _) = mean_std(&runs.iter().map(|r| r.metrics.faa).collect::<Vec<_>>());
            let (fg_m, _) = mean_std(&runs.iter().map(|r| r.metrics.forgetting).collect::<Vec<_>>());
            let (pl_m, _) = mean_std(&runs.iter().map(|r| r.metrics.plasticity).collect::<Vec<_>>());
            println!("alpha {alpha:>5}: FAA {faa_m:.4}  forgetting {fg_m:.4}  plasticity {pl_m:.4}");
            faas.push(faa_m);
            fgs.push(fg_m);
            pls.push(pl_m);
        }
        let sub = [0usize, 1, 3, 5]; // alphas 1, 5, 20, 80
        let a_sub: Vec<f64> = sub.iter().map(|&i| alphas[i]).collect();
        let fg_sub: Vec<f64> = sub.iter().map(|&i| fgs[i]).collect();
        let pl_sub: Vec<f64> = sub.iter().map(|&i| pls[i]).collect();
        println!(
            "spearman(alpha, forgetting) = {:.3}, spearman(alpha, plasticity) = {:.3}",
            spearman(&a_sub, &fg_sub),
            spearman(&a_sub, &pl_sub)
        );
        let spread_set = &faas[0..5]; // alphas 1..30
        let spread = spread_set.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            - spread_set.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        println!("FAA spread over alpha 1..30: {spread:.4}");
    }
}
