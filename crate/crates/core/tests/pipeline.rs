//! Cross-module behavior of full training runs.

use splitlora::config::ExperimentConfig;
use splitlora::experiment::{run_experiment, run_seed};
use splitlora::linalg::Matrix;
use splitlora::lora::{init_a_random, LoraAdapter};
use splitlora::network::{Activation, ToyNet};
use splitlora::rng;
use splitlora::tasks::{gen_gaussian_stream, gen_rotated_stream, StreamSpec};
use splitlora::trainer::{run_stream, Method, TrainConfig};

#[test]
fn single_easy_task_reaches_near_perfect_accuracy() {
    // huge separation, one task: the sanity oracle for the whole pipeline
    let stream = gen_gaussian_stream(1, 4, 16, 12.0, 100, 100, 3).unwrap();
    let net = ToyNet::new(16, &[32, 32], Activation::Tanh, 1);
    let cfg = TrainConfig { epochs: 10, batch_size: 32, ..TrainConfig::default() };
    let (result, _) = run_stream(net, &stream, &cfg, 5).unwrap();
    assert!(result.metrics.faa >= 0.98, "FAA {}", result.metrics.faa);
    // with one task, the three summary metrics coincide
    assert_eq!(result.metrics.faa, result.metrics.caa);
    assert_eq!(result.metrics.faa, result.accuracy.get(0, 0));
    assert_eq!(result.metrics.forgetting, 0.0);
}

#[test]
fn zero_initialized_adapter_leaves_the_loss_unchanged() {
    let mut net = ToyNet::new(6, &[12, 12], Activation::Tanh, 7);
    net.grow_head(3);
    let mut r = rng::derive(2, &[0xF0]);
    *net.head_w_mut().unwrap() =
        Matrix::new(3, 12, rng::normal_vec(&mut r, 36)).unwrap().scale(0.5);
    let x = Matrix::new(6, 20, rng::normal_vec(&mut r, 120)).unwrap();
    let y: Vec<usize> = (0..20).map(|i| i % 3).collect();
    let before = net.loss(&x, &y).unwrap();
    for l in 0..net.num_layers() {
        let (d_out, d_in) = net.layer_shape(l);
        net.push_adapter(l, LoraAdapter::new(init_a_random(d_out, 5, l as u64), d_in, None))
            .unwrap();
    }
    let after = net.loss(&x, &y).unwrap();
    assert!((before - after).abs() <= 1e-12, "{before} vs {after}");
}

#[test]
fn per_layer_k_varies_across_layers_on_the_default_stream() {
    let mut cfg = ExperimentConfig::default();
    cfg.seeds = vec![1];
    let outcome = run_seed(&cfg, 1).unwrap();
    // the solver runs per layer; on a nontrivial stream the chosen sizes
    // must not be forced to a single constant across layers
    let mut saw_variation = false;
    for report in &outcome.result.reports {
        let ks: Vec<usize> = report.per_layer_k.iter().flatten().copied().collect();
        if ks.len() >= 2 && ks.iter().any(|&k| k != ks[0]) {
            saw_variation = true;
        }
    }
    assert!(saw_variation, "per-layer k was constant everywhere: {:?}",
        outcome.result.reports.iter().map(|r| r.per_layer_k.clone()).collect::<Vec<_>>());
}

#[test]
fn unprojected_adapters_forget_more_on_the_default_stream() {
    // the calibrated benchmark is where tasks genuinely compete for the
    // pretrained backbone's feature directions: over the committed seeds,
    // random-subspace adapters must lose strictly more old-task accuracy
    // than projected ones
    let cfg = ExperimentConfig::default();
    let mut forgetting = Vec::new();
    for method in [Method::Split, Method::PlainLora] {
        let mut sub = cfg.clone();
        sub.train.method = method;
        let runs = run_experiment(&sub).unwrap().runs();
        forgetting.push(
            runs.iter().map(|r| r.metrics.forgetting).sum::<f64>() / runs.len() as f64,
        );
    }
    assert!(
        forgetting[1] > forgetting[0],
        "plain forgetting {} vs split {}",
        forgetting[1],
        forgetting[0]
    );
}

#[test]
fn gen_rotated_stream_validates_inputs() {
    assert!(gen_rotated_stream(2, 2, 1, 1.0, 5, 5, 0.3, true, 1).is_err());
    assert!(gen_rotated_stream(0, 2, 4, 1.0, 5, 5, 0.3, true, 1).is_err());
}

#[test]
fn sweep_style_reconfiguration_is_clean() {
    // the same experiment at two ratio values shares everything except k
    let mut cfg = ExperimentConfig::default();
    cfg.stream = StreamSpec::Gaussian {
        tasks: 3,
        classes_per_task: 2,
        input_dim: 8,
        separation: 5.0,
        train_per_class: 40,
        test_per_class: 40,
    };
    cfg.network.hidden_widths = vec![16, 16];
    cfg.network.pretrain = false;
    cfg.train.epochs = 4;
    cfg.seeds = vec![1];
    let low = run_experiment(&cfg).unwrap();
    cfg.train.alpha = 80.0;
    let high = run_experiment(&cfg).unwrap();
    let k_of = |exp: &splitlora::experiment::ExperimentResult| -> Vec<usize> {
        exp.runs()[0]
            .reports
            .iter()
            .flat_map(|r| r.per_layer_k.iter().flatten().copied().collect::<Vec<_>>())
            .collect()
    };
    let (k_low, k_high) = (k_of(&low), k_of(&high));
    assert!(
        k_low.iter().zip(&k_high).all(|(a, b)| a <= b),
        "larger alpha never shrinks the subspace: {k_low:?} vs {k_high:?}"
    );
}
