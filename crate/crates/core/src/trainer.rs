//! Sequential task training.
//!
//! For each task after the first, the trainer decomposes every layer's
//! gradient memory, solves for the minor-subspace size, initializes the
//! adapter's frozen `A` inside that subspace, and trains only `B` and the
//! head. After training it re-feeds the task's data to refresh the gradient
//! memory. Baselines reuse the same loop: a fixed-threshold subspace rule,
//! unconstrained adapters, and head-only training.

use serde::{Deserialize, Serialize};

use crate::adamw::{AdamW, MomentState};
use crate::error::Error;
use crate::gradmem::{compute_task_gradient, GradientMemory, WindowedModel};
use crate::linalg::{frobenius_inner, svd};
use crate::lora::{init_a_projected, init_a_random, LoraAdapter};
use crate::metrics::{AccuracyMatrix, RunMetrics};
use crate::network::{gather_columns, ToyNet};
use crate::rng;
use crate::subspace::{minor_basis, solve_k_split, solve_k_threshold, MinorSubspace, SolverConfig, Spectrum};
use crate::tasks::{Task, TaskStream};
use crate::theory::{alpha_point, AlphaPoint};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Optimality-driven minor-subspace size per layer per task.
    Split,
    /// Fixed threshold on the trailing squared-singular-mass fraction.
    Threshold,
    /// Fresh random `A` each task, no projection.
    PlainLora,
    /// No adapters at all; only the classifier head trains.
    HeadOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_b: f64,
    pub lr_head: f64,
    pub weight_decay_b: f64,
    pub alpha: f64,
    pub tau: f64,
    pub rank: usize,
    /// Record the per-step ratio diagnostic between the update and the
    /// current/old gradients.
    pub record_alpha_trace: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Split,
            epochs: 10,
            batch_size: 64,
            lr_b: 1e-3,
            lr_head: 1e-2,
            weight_decay_b: 0.0,
            alpha: 20.0,
            tau: 0.02,
            rank: 10,
            record_alpha_trace: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be positive".into()));
        }
        if !(self.lr_b > 0.0) || !(self.lr_head > 0.0) {
            return Err(Error::InvalidInput("learning rates must be positive".into()));
        }
        if self.weight_decay_b < 0.0 {
            return Err(Error::InvalidInput("weight decay must be nonnegative".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidInput(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidInput(format!("tau must be in (0,1), got {}", self.tau)));
        }
        if self.rank == 0 {
            return Err(Error::InvalidInput("rank must be positive".into()));
        }
        Ok(())
    }
}

/// Spectrum partition diagnostics, one record per layer per task (t >= 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRecord {
    pub layer: usize,
    pub t: usize,
    pub sigma: Vec<f64>,
    pub k_split: Option<usize>,
    pub k_threshold: Option<usize>,
    /// Epsilon at the `k` actually used by the active method, when one was.
    pub epsilon_at_k: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: usize,
    /// Minor-subspace size per layer; `None` when the layer trained
    /// unconstrained (first task, plain adapters, degenerate memory).
    pub per_layer_k: Vec<Option<usize>>,
    /// Layers whose gradient memory was all zero at this task.
    pub degenerate_layers: Vec<usize>,
    pub epoch_losses: Vec<f64>,
    /// Max over steps of `||(I - U U^T) A B||_F / max(1, ||A B||_F)`;
    /// `None` when no layer had a projected adapter.
    pub confinement_max_ratio: Option<f64>,
    pub alpha_trace: Option<Vec<AlphaPoint>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub accuracy: AccuracyMatrix,
    pub metrics: RunMetrics,
    pub reports: Vec<TaskReport>,
    pub partitions: Vec<PartitionRecord>,
}

/// Owns the model and gradient memory across a sequential run.
pub struct Trainer {
    net: ToyNet,
    mem: GradientMemory,
    cfg: TrainConfig,
    seed: u64,
    completed: usize,
    partitions: Vec<PartitionRecord>,
}

impl Trainer {
    pub fn new(net: ToyNet, cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let shapes: Vec<(usize, usize)> = (0..net.num_layers()).map(|l| net.layer_shape(l)).collect();
        Ok(Self {
            net,
            mem: GradientMemory::new(&shapes),
            cfg,
            seed,
            completed: 0,
            partitions: Vec::new(),
        })
    }

    pub fn net(&self) -> &ToyNet {
        &self.net
    }

    pub fn mem(&self) -> &GradientMemory {
        &self.mem
    }

    pub fn partitions(&self) -> &[PartitionRecord] {
        &self.partitions
    }

    /// Train one task; `t` is 1-based and must follow the previous task.
    pub fn train_task(&mut self, task: &Task, t: usize) -> Result<TaskReport> {
        if t != self.completed + 1 {
            return Err(Error::Protocol(format!(
                "task {t} presented after {} completed tasks",
                self.completed
            )));
        }
        if task.train.is_empty() || task.test.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.grow_head_for(task)?;

        let layers = self.net.num_layers();
        let mut per_layer_k: Vec<Option<usize>> = vec![None; layers];
        let mut degenerate_layers = Vec::new();
        let mut bases: Vec<Option<MinorSubspace>> = (0..layers).map(|_| None).collect();

        if self.cfg.method != Method::HeadOnly {
            for layer in 0..layers {
                let (d_out, d_in) = self.net.layer_shape(layer);
                let a_seed = rng::mix_seed(self.seed, &[0xADA0, t as u64, layer as u64]);
                let projected = matches!(self.cfg.method, Method::Split | Method::Threshold) && t > 1;
                let adapter = if projected {
                    let decomp = svd(self.mem.g_old(layer))?;
                    let spectrum = Spectrum::from_svd(&decomp);
                    if spectrum.is_degenerate() {
                        // nothing learned yet in this layer: no directions to
                        // protect, fall back to an unconstrained adapter
                        degenerate_layers.push(layer);
                        self.partitions.push(PartitionRecord {
                            layer,
                            t,
                            sigma: spectrum.sigma().to_vec(),
                            k_split: None,
                            k_threshold: None,
                            epsilon_at_k: None,
                        });
                        LoraAdapter::new(init_a_random(d_out, self.cfg.rank, a_seed), d_in, None)
                    } else {
                        let solver = SolverConfig {
                            alpha: self.cfg.alpha,
                            tau: self.cfg.tau,
                            task_index: t,
                        };
                        let k_split = solve_k_split(&spectrum, &solver)?;
                        // a layer must retain at least a 1-dim update space
                        let k_threshold = solve_k_threshold(&spectrum, self.cfg.tau)?.max(1);
                        let k_used = match self.cfg.method {
                            Method::Split => k_split,
                            Method::Threshold => k_threshold,
                            _ => unreachable!(),
                        };
                        let eps_at_k = crate::subspace::epsilon(&spectrum, k_used)?;
                        self.partitions.push(PartitionRecord {
                            layer,
                            t,
                            sigma: spectrum.sigma().to_vec(),
                            k_split: Some(k_split),
                            k_threshold: Some(k_threshold),
                            epsilon_at_k: Some(eps_at_k),
                        });
                        per_layer_k[layer] = Some(k_used);
                        let sub = minor_basis(&decomp, k_used)?;
                        let a = init_a_projected(&sub, self.cfg.rank, a_seed);
                        bases[layer] = Some(sub);
                        LoraAdapter::new(a, d_in, Some(k_used))
                    }
                } else {
                    LoraAdapter::new(init_a_random(d_out, self.cfg.rank, a_seed), d_in, None)
                };
                self.net.push_adapter(layer, adapter)?;
            }
        }

        let window = task_window(task)?;
        let (epoch_losses, confinement_max_ratio, alpha_trace) =
            self.fit(task, t, &bases, window.clone())?;

        // refresh the gradient memory from the just-trained task, under the
        // same task-local loss it was trained on
        let scoped = WindowedModel { net: &self.net, window };
        let g_new = compute_task_gradient(&scoped, &task.train.x, &task.train.y)?;
        for (layer, g) in g_new.iter().enumerate() {
            self.mem.update_old(layer, g)?;
        }
        self.completed = t;

        Ok(TaskReport {
            task: t,
            per_layer_k,
            degenerate_layers,
            epoch_losses,
            confinement_max_ratio,
            alpha_trace,
        })
    }

    fn grow_head_for(&mut self, task: &Task) -> Result<()> {
        let start = self.net.classes();
        // a revisit task reuses classes the head already has
        if !task.class_ids.is_empty() && task.class_ids.iter().all(|&c| c < start) {
            return Ok(());
        }
        for (i, &c) in task.class_ids.iter().enumerate() {
            if c != start + i {
                return Err(Error::InvalidLabels(format!(
                    "task classes must extend the head contiguously; expected {}, got {c}",
                    start + i
                )));
            }
        }
        self.net.grow_head(task.class_ids.len());
        Ok(())
    }

    fn fit(
        &mut self,
        task: &Task,
        t: usize,
        bases: &[Option<MinorSubspace>],
        window: std::ops::Range<usize>,
    ) -> Result<(Vec<f64>, Option<f64>, Option<Vec<AlphaPoint>>)> {
        let layers = self.net.num_layers();
        let train_b = self.cfg.method != Method::HeadOnly;
        let opt_b = AdamW::new(self.cfg.lr_b, self.cfg.weight_decay_b);
        let opt_head = AdamW::new(self.cfg.lr_head, 0.0);
        let mut b_states: Vec<Option<MomentState>> = (0..layers)
            .map(|l| {
                self.net
                    .current_adapter(l)
                    .filter(|_| train_b)
                    .map(|ad| MomentState::new(ad.b().data().len()))
            })
            .collect();
        let head_len = self.net.head_w().map(|w| w.data().len()).unwrap_or(0);
        let mut head_state = MomentState::new(head_len);
        let mut head_b_state = MomentState::new(self.net.head_b().len());

        let n = task.train.len();
        let mut epoch_losses = Vec::with_capacity(self.cfg.epochs);
        let mut max_confinement: Option<f64> = None;
        let mut trace: Option<Vec<AlphaPoint>> =
            if self.cfg.record_alpha_trace { Some(Vec::new()) } else { None };

        for epoch in 0..self.cfg.epochs {
            let mut order_rng = rng::derive(self.seed, &[0x7A51, t as u64, epoch as u64]);
            let order = rng::shuffled_indices(&mut order_rng, n);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(self.cfg.batch_size) {
                let (bx, by) = gather_columns(&task.train.x, &task.train.y, chunk);
                let cache = self.net.forward(&bx)?;
                let (loss, grads) = self.net.backward_in_window(&cache, &by, window.clone())?;
                epoch_loss += loss * chunk.len() as f64 / n as f64;

                let prev_b: Option<Vec<_>> = trace.as_ref().map(|_| {
                    (0..layers)
                        .map(|l| self.net.current_adapter(l).map(|ad| ad.b().clone()))
                        .collect()
                });

                if train_b {
                    for l in 0..layers {
                        if let (Some(state), Some(g)) = (&mut b_states[l], &grads.b_current[l]) {
                            let b = self.net.current_b_mut(l).expect("adapter exists");
                            opt_b.step(state, b.data_mut(), g.data());
                        }
                    }
                }
                if let Some(w) = self.net.head_w_mut() {
                    opt_head.step(&mut head_state, w.data_mut(), grads.head_w.data());
                }
                opt_head.step(&mut head_b_state, self.net.head_b_mut(), &grads.head_b);

                // realized update must stay inside the chosen subspace
                for (l, basis) in bases.iter().enumerate() {
                    if let Some(sub) = basis {
                        let delta = self.net.current_adapter(l).expect("adapter exists").delta();
                        let resid = sub.complement_residual(&delta)?.frobenius_norm();
                        let ratio = resid / delta.frobenius_norm().max(1.0);
                        max_confinement =
                            Some(max_confinement.map_or(ratio, |m: f64| m.max(ratio)));
                    }
                }

                if let (Some(points), Some(prev)) = (&mut trace, prev_b) {
                    let mut dw_dot_gt = 0.0;
                    let mut dw_dot_gold = 0.0;
                    let mut dw_sq = 0.0;
                    let mut gold_sq = 0.0;
                    for l in 0..layers {
                        if let (Some(ad), Some(b0)) = (self.net.current_adapter(l), &prev[l]) {
                            let db = ad.b().sub(b0)?;
                            let dw = ad.a().matmul(&db)?;
                            dw_dot_gt += frobenius_inner(&dw, &grads.weights[l])?;
                            dw_dot_gold += frobenius_inner(&dw, self.mem.g_old(l))?;
                            dw_sq += dw.frobenius_norm().powi(2);
                            gold_sq += self.mem.g_old(l).frobenius_norm().powi(2);
                        }
                    }
                    points.push(alpha_point(dw_dot_gt, dw_dot_gold, (dw_sq * gold_sq).sqrt()));
                }
            }
            epoch_losses.push(epoch_loss);
        }
        Ok((epoch_losses, max_confinement, trace))
    }

    /// Evaluate the current model on one task's test split, predicting over
    /// the union of all classes seen so far.
    pub fn evaluate(&self, task: &Task) -> Result<f64> {
        self.net.accuracy(&task.test.x, &task.test.y)
    }
}

/// The contiguous class window a task trains under.
fn task_window(task: &Task) -> Result<std::ops::Range<usize>> {
    let lo = *task.class_ids.first().ok_or(Error::EmptyDataset)?;
    let hi = *task.class_ids.last().expect("nonempty") + 1;
    if task.class_ids.len() != hi - lo {
        return Err(Error::InvalidLabels("task class ids must be contiguous".into()));
    }
    Ok(lo..hi)
}

/// Train every task in order, evaluating all seen tasks after each one.
/// Returns the run summary along with the trainer for checkpointing.
pub fn run_stream(
    net: ToyNet,
    stream: &TaskStream,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(RunResult, Trainer)> {
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    let mut trainer = Trainer::new(net, *cfg, seed)?;
    let mut accuracy = AccuracyMatrix::new();
    let mut reports = Vec::with_capacity(stream.len());
    for (i, task) in stream.tasks.iter().enumerate() {
        let t = i + 1;
        reports.push(trainer.train_task(task, t)?);
        let mut col = Vec::with_capacity(t);
        for seen in &stream.tasks[..t] {
            col.push(trainer.evaluate(seen)?);
        }
        accuracy.push_column(col)?;
    }
    let metrics = RunMetrics::from_matrix(&accuracy);
    let partitions = trainer.partitions().to_vec();
    Ok((RunResult { seed, accuracy, metrics, reports, partitions }, trainer))
}
