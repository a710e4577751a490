//! Grid search over separation and pretraining recipes, printing the
//! quantities the default benchmark must satisfy. Calibration tooling.

use rayon::prelude::*;
use splitlora::config::ExperimentConfig;
use splitlora::experiment::run_experiment;
use splitlora::metrics::spearman;
use splitlora::report::mean_std;
use splitlora::tasks::StreamSpec;
use splitlora::trainer::Method;

#[derive(Clone, Copy, Debug)]
struct Cell {
    sep: f64,
    pretrain: bool,
    pt_epochs: usize,
    pt_classes: usize,
    pt_lr: f64,
}

fn cfg_for(cell: &Cell) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.stream = StreamSpec::Gaussian {
        tasks: 5,
        classes_per_task: 4,
        input_dim: 32,
        separation: cell.sep,
        train_per_class: 200,
        test_per_class: 200,
    };
    cfg.network.pretrain = cell.pretrain;
    cfg.network.pretrain_epochs = cell.pt_epochs;
    cfg.network.pretrain_classes = cell.pt_classes;
    cfg.network.pretrain_separation = cell.sep;
    cfg.network.pretrain_lr = cell.pt_lr;
    if let Ok(bs) = std::env::var("BATCH") {
        cfg.train.batch_size = bs.parse().unwrap();
    }
    cfg
}

fn faa_of(cfg: &ExperimentConfig) -> (f64, f64, f64) {
    let runs = run_experiment(cfg).expect("run").runs();
    let (faa, _) = mean_std(&runs.iter().map(|r| r.metrics.faa).collect::<Vec<_>>());
    let (fg, _) = mean_std(&runs.iter().map(|r| r.metrics.forgetting).collect::<Vec<_>>());
    let (pl, _) = mean_std(&runs.iter().map(|r| r.metrics.plasticity).collect::<Vec<_>>());
    (faa, fg, pl)
}

fn main() {
    // cells come from args as sep:classes:epochs:lr (classes 0 = no pretrain)
    let mut cells = Vec::new();
    for arg in std::env::args().skip(1) {
        let parts: Vec<&str> = arg.split(':').collect();
        if parts.len() != 4 {
            eprintln!("skipping malformed cell {arg:?}");
            continue;
        }
        let sep: f64 = parts[0].parse().unwrap();
        let pt_classes: usize = parts[1].parse().unwrap();
        let pt_epochs: usize = parts[2].parse().unwrap();
        let pt_lr: f64 = parts[3].parse().unwrap();
        cells.push(Cell { sep, pretrain: pt_classes > 0, pt_epochs, pt_classes, pt_lr });
    }
    if cells.is_empty() {
        cells.push(Cell { sep: 5.5, pretrain: true, pt_epochs: 2, pt_classes: 24, pt_lr: 3e-3 });
    }

    let rows: Vec<String> = cells
        .par_iter()
        .map(|cell| {
            let base = cfg_for(cell);

            let mut joint = base.clone();
            if let StreamSpec::Gaussian { tasks, classes_per_task, .. } = &mut joint.stream {
                *classes_per_task *= *tasks;
                *tasks = 1;
            }
            joint.seeds = vec![1, 2, 3];
            let (joint_faa, _, _) = faa_of(&joint);

            let mut split = base.clone();
            split.train.method = Method::Split;
            let (faa_split, fg_split, _) = faa_of(&split);
            let mut thr = base.clone();
            thr.train.method = Method::Threshold;
            let (faa_thr, _, _) = faa_of(&thr);
            let mut plain = base.clone();
            plain.train.method = Method::PlainLora;
            let (faa_plain, fg_plain, _) = faa_of(&plain);

            let alphas = [1.0, 5.0, 20.0, 80.0];
            let mut fgs = Vec::new();
            let mut pls = Vec::new();
            for &alpha in &alphas {
                let mut sub = base.clone();
                sub.train.alpha = alpha;
                let (_, fg, pl) = faa_of(&sub);
                fgs.push(fg);
                pls.push(pl);
            }
            let alpha_v: Vec<f64> = alphas.to_vec();
            let sp_fg = spearman(&alpha_v, &fgs);
            let sp_pl = spearman(&alpha_v, &pls);

            format!(
                "sep {:>4} pt {}x{}@{:<6} | joint {:.3} | split {:.4} thr {:.4} plain {:.4} | s-t {:+.4} s-p {:+.4} | fgS {:.4}/{:.4} | sp(fg) {:+.2} sp(pl) {:+.2}",
                cell.sep,
                if cell.pretrain { cell.pt_classes } else { 0 },
                cell.pt_epochs,
                cell.pt_lr,
                joint_faa,
                faa_split,
                faa_thr,
                faa_plain,
                faa_split - faa_thr,
                faa_split - faa_plain,
                fg_split,
                fg_plain,
                sp_fg,
                sp_pl
            )
        })
        .collect();
    for row in rows {
        println!("{row}");
    }
}
