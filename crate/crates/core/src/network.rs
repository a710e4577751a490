//! Toy feed-forward classifier with a frozen backbone, per-layer adapter
//! stacks, and a class-incrementally growing linear head.
//!
//! Forward and backward are written out by hand so every layer's gradient
//! with respect to its merged effective weight is available: that gradient
//! feeds the gradient memory, and `A^T (dL/dW)` is the current adapter's
//! `B` gradient. Inputs are column batches (`d_in x n`); the loss is
//! softmax cross-entropy over all classes seen so far, averaged over the
//! batch.

use serde::{Deserialize, Serialize};

use crate::adamw::{AdamW, MomentState};
use crate::error::Error;
use crate::linalg::Matrix;
use crate::lora::{AdapterStack, LoraAdapter};
use crate::rng;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    /// Pass-through; keeps small nets exactly linear for oracle tests.
    Identity,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative given pre-activation `z`.
    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Labeled column batch: `x` is `d_in x n`, `y` has one label per column.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Matrix,
    pub y: Vec<usize>,
}

impl Batch {
    pub fn new(x: Matrix, y: Vec<usize>) -> Result<Self> {
        if x.cols() != y.len() {
            return Err(Error::Shape(format!(
                "batch has {} columns but {} labels",
                x.cols(),
                y.len()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone)]
struct DenseLayer {
    w0: Matrix,
    bias: Vec<f64>,
    stack: AdapterStack,
}

#[derive(Debug, Clone, Default)]
struct Head {
    /// `classes x width`; `None` until the first task grows it.
    w: Option<Matrix>,
    b: Vec<f64>,
}

impl Head {
    fn classes(&self) -> usize {
        self.b.len()
    }

    fn grow(&mut self, width: usize, new_classes: usize) {
        if new_classes == 0 {
            return;
        }
        let old = self.classes();
        let mut w = Matrix::zeros(old + new_classes, width);
        if let Some(prev) = &self.w {
            for r in 0..old {
                for c in 0..width {
                    w.set(r, c, prev.get(r, c));
                }
            }
        }
        self.w = Some(w);
        self.b.extend(std::iter::repeat(0.0).take(new_classes));
    }
}

/// Frozen-backbone classifier; only the current task's adapter `B` matrices
/// and the head change during training.
#[derive(Debug, Clone)]
pub struct ToyNet {
    layers: Vec<DenseLayer>,
    activation: Activation,
    head: Head,
    input_dim: usize,
}

/// Activations recorded by `forward` for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[0]` is the batch; `inputs[l + 1]` is layer `l`'s output.
    inputs: Vec<Matrix>,
    preacts: Vec<Matrix>,
    pub logits: Matrix,
}

/// Per-parameter gradients of the mean batch loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// dL/d(effective weight) per layer.
    pub weights: Vec<Matrix>,
    /// dL/dB of the current adapter per layer, where one exists.
    pub b_current: Vec<Option<Matrix>>,
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
}

impl ToyNet {
    /// Frozen random backbone: weights `N(0, 1/fan_in)`, zero biases, empty
    /// adapter stacks, no head rows yet.
    pub fn new(input_dim: usize, hidden_widths: &[usize], activation: Activation, seed: u64) -> Self {
        let mut layers = Vec::with_capacity(hidden_widths.len());
        let mut fan_in = input_dim;
        for (l, &width) in hidden_widths.iter().enumerate() {
            let mut r = rng::derive(seed, &[0xBACB, l as u64]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let data: Vec<f64> =
                rng::normal_vec(&mut r, width * fan_in).into_iter().map(|x| x * scale).collect();
            let w0 = Matrix::new(width, fan_in, data).expect("finite normal draws");
            layers.push(DenseLayer { w0, bias: vec![0.0; width], stack: AdapterStack::new() });
            fan_in = width;
        }
        Self { layers, activation, head: Head::default(), input_dim }
    }

    /// Build from explicit weights; used by gradient probes that need to
    /// evaluate the loss at perturbed parameters.
    pub fn from_parts(
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
        input_dim: usize,
    ) -> Result<Self> {
        if weights.len() != biases.len() {
            return Err(Error::Shape("weights/biases length mismatch".into()));
        }
        let mut fan_in = input_dim;
        for (w, b) in weights.iter().zip(&biases) {
            if w.cols() != fan_in || w.rows() != b.len() {
                return Err(Error::Shape(format!(
                    "layer expects {}x{} compatible shapes, got {}x{} with bias {}",
                    w.rows(),
                    fan_in,
                    w.rows(),
                    w.cols(),
                    b.len()
                )));
            }
            fan_in = w.rows();
        }
        let layers = weights
            .into_iter()
            .zip(biases)
            .map(|(w0, bias)| DenseLayer { w0, bias, stack: AdapterStack::new() })
            .collect();
        Ok(Self { layers, activation, head: Head::default(), input_dim })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// (d_out, d_in) of a layer's weight.
    pub fn layer_shape(&self, layer: usize) -> (usize, usize) {
        let w = &self.layers[layer].w0;
        (w.rows(), w.cols())
    }

    pub fn feature_width(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.w0.rows())
    }

    pub fn backbone_weight(&self, layer: usize) -> &Matrix {
        &self.layers[layer].w0
    }

    pub fn stack(&self, layer: usize) -> &AdapterStack {
        &self.layers[layer].stack
    }

    pub fn push_adapter(&mut self, layer: usize, adapter: LoraAdapter) -> Result<()> {
        let (d_out, d_in) = self.layer_shape(layer);
        if adapter.a().rows() != d_out || adapter.b().cols() != d_in {
            return Err(Error::Shape(format!(
                "adapter {}x{}..{}x{} does not fit layer {}x{}",
                adapter.a().rows(),
                adapter.a().cols(),
                adapter.b().rows(),
                adapter.b().cols(),
                d_out,
                d_in
            )));
        }
        self.layers[layer].stack.push(adapter);
        Ok(())
    }

    pub fn current_adapter(&self, layer: usize) -> Option<&LoraAdapter> {
        self.layers[layer].stack.current()
    }

    pub fn current_b_mut(&mut self, layer: usize) -> Option<&mut Matrix> {
        self.layers[layer].stack.current_mut().map(|ad| ad.b_mut())
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    /// Append zero-initialized head rows for new classes, so their logits
    /// start at zero.
    pub fn grow_head(&mut self, new_classes: usize) {
        let width = self.feature_width();
        self.head.grow(width, new_classes);
    }

    pub fn head_w(&self) -> Option<&Matrix> {
        self.head.w.as_ref()
    }

    pub fn head_w_mut(&mut self) -> Option<&mut Matrix> {
        self.head.w.as_mut()
    }

    pub fn head_b(&self) -> &[f64] {
        &self.head.b
    }

    pub fn head_b_mut(&mut self) -> &mut Vec<f64> {
        &mut self.head.b
    }

    /// Merged effective weight of a layer, `w0 + sum_i A_i B_i`.
    pub fn effective_weight(&self, layer: usize) -> Matrix {
        let l = &self.layers[layer];
        l.stack.merge(&l.w0).expect("stack shapes are push-checked")
    }

    /// FNV-style fingerprint of everything frozen during training: backbone
    /// weights and biases. Used by determinism and no-drift checks.
    pub fn backbone_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bits: u64| {
            h ^= bits;
            h = h.wrapping_mul(0x1000_0000_01b3);
        };
        for l in &self.layers {
            for &x in l.w0.data() {
                eat(x.to_bits());
            }
            for &x in &l.bias {
                eat(x.to_bits());
            }
        }
        h
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.rows() != self.input_dim {
            return Err(Error::Shape(format!(
                "input has {} rows, net expects {}",
                x.rows(),
                self.input_dim
            )));
        }
        let head_w = self
            .head
            .w
            .as_ref()
            .ok_or_else(|| Error::Protocol("forward before any classes were added".into()))?;
        let n = x.cols();
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut preacts = Vec::with_capacity(self.layers.len());
        inputs.push(x.clone());
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = layer.w0.matmul(&h)?;
            if let Some(delta) = layer.stack.forward_delta(&h)? {
                z = z.add(&delta)?;
            }
            for r in 0..z.rows() {
                for c in 0..n {
                    z.set(r, c, z.get(r, c) + layer.bias[r]);
                }
            }
            let mut a = z.clone();
            for v in a.data_mut() {
                *v = self.activation.apply(*v);
            }
            preacts.push(z);
            inputs.push(a.clone());
            h = a;
        }
        let mut logits = head_w.matmul(&h)?;
        for r in 0..logits.rows() {
            for c in 0..n {
                logits.set(r, c, logits.get(r, c) + self.head.b[r]);
            }
        }
        Ok(ForwardCache { inputs, preacts, logits })
    }

    /// Mean softmax cross-entropy over all classes of a cached forward pass.
    pub fn loss_from_cache(&self, cache: &ForwardCache, labels: &[usize]) -> Result<f64> {
        self.loss_in_window(cache, labels, 0..cache.logits.rows())
    }

    /// Cross-entropy with the softmax restricted to a contiguous class
    /// window; labels must fall inside it. Classes outside the window
    /// contribute nothing, so their head rows receive no gradient.
    pub fn loss_in_window(
        &self,
        cache: &ForwardCache,
        labels: &[usize],
        window: std::ops::Range<usize>,
    ) -> Result<f64> {
        check_window(&cache.logits, labels, &window)?;
        let p = log_softmax_window(&cache.logits, &window);
        let n = labels.len() as f64;
        let mut loss = 0.0;
        for (c, &y) in labels.iter().enumerate() {
            loss -= p.get(y - window.start, c);
        }
        Ok(loss / n)
    }

    pub fn loss(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let cache = self.forward(x)?;
        self.loss_from_cache(&cache, labels)
    }

    /// Backward pass over all classes; see `backward_in_window`.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<(f64, Gradients)> {
        self.backward_in_window(cache, labels, 0..cache.logits.rows())
    }

    /// Backward pass of the windowed loss: mean loss plus gradients for
    /// every layer's effective weight, the current adapters' `B`, and the
    /// head. Head rows outside the window get exactly zero gradient.
    pub fn backward_in_window(
        &self,
        cache: &ForwardCache,
        labels: &[usize],
        window: std::ops::Range<usize>,
    ) -> Result<(f64, Gradients)> {
        check_window(&cache.logits, labels, &window)?;
        let n = labels.len() as f64;
        let logp = log_softmax_window(&cache.logits, &window);
        let mut loss = 0.0;
        let mut dlogits = Matrix::zeros(cache.logits.rows(), cache.logits.cols());
        for (c, &y) in labels.iter().enumerate() {
            loss -= logp.get(y - window.start, c);
            for r in window.clone() {
                let p = logp.get(r - window.start, c).exp();
                let target = if r == y { 1.0 } else { 0.0 };
                dlogits.set(r, c, (p - target) / n);
            }
        }
        let grads = self.backward_from_dlogits(cache, &dlogits)?;
        Ok((loss / n, grads))
    }

    /// Chain gradients back from an arbitrary `dL/dlogits`; shared by the
    /// loss backward and the curvature probes.
    pub fn backward_from_dlogits(&self, cache: &ForwardCache, dlogits: &Matrix) -> Result<Gradients> {
        let head_w =
            self.head.w.as_ref().ok_or_else(|| Error::Protocol("no head".into()))?;
        let features = &cache.inputs[self.layers.len()];
        let head_w_grad = dlogits.matmul(&features.transpose())?;
        let head_b_grad: Vec<f64> =
            (0..dlogits.rows()).map(|r| (0..dlogits.cols()).map(|c| dlogits.get(r, c)).sum()).collect();

        let mut dh = head_w.transpose().matmul(dlogits)?;
        let mut weights = vec![Matrix::zeros(1, 1); self.layers.len()];
        let mut b_current = vec![None; self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let z = &cache.preacts[l];
            let mut dz = dh;
            for (v, zv) in dz.data_mut().iter_mut().zip(z.data()) {
                *v *= self.activation.derivative(*zv);
            }
            let x_t = cache.inputs[l].transpose();
            weights[l] = dz.matmul(&x_t)?;
            if let Some(ad) = layer.stack.current() {
                let at_dz = ad.a().transpose().matmul(&dz)?;
                b_current[l] = Some(at_dz.matmul(&x_t)?);
            }
            // dL/dx = W_eff^T dz, assembled without merging the stack
            let mut dx = layer.w0.transpose().matmul(&dz)?;
            for i in 0..layer.stack.len() {
                let ad = layer.stack.get(i).expect("index in range");
                let at_dz = ad.a().transpose().matmul(&dz)?;
                let bt = ad.b().transpose().matmul(&at_dz)?;
                dx = dx.add(&bt)?;
            }
            dh = dx;
        }
        Ok(Gradients { weights, b_current, head_w: head_w_grad, head_b: head_b_grad })
    }

    /// Fraction of columns whose argmax logit matches the label. Ties go to
    /// the lowest class index, deterministically.
    pub fn accuracy(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let cache = self.forward(x)?;
        check_labels(&cache.logits, labels)?;
        let mut correct = 0usize;
        for (c, &y) in labels.iter().enumerate() {
            let mut best = 0usize;
            let mut best_v = cache.logits.get(0, c);
            for r in 1..cache.logits.rows() {
                let v = cache.logits.get(r, c);
                if v > best_v {
                    best_v = v;
                    best = r;
                }
            }
            if best == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / labels.len().max(1) as f64)
    }

    /// Copy of this net with `h * dir` added to one backbone weight; the
    /// adapter stacks and head are shared state for directional probes.
    pub fn with_nudged_weight(&self, layer: usize, dir: &Matrix, h: f64) -> Result<ToyNet> {
        let mut net = self.clone();
        if !net.layers[layer].w0.same_shape(dir) {
            return Err(Error::Shape("nudge direction shape mismatch".into()));
        }
        net.layers[layer].w0.add_scaled(dir, h)?;
        Ok(net)
    }

    /// Largest eigenvalue of the Gauss-Newton curvature of the mean loss
    /// with respect to one layer's effective weight, by power iteration.
    /// Jacobian-vector products use a forward difference of the logits.
    pub fn estimate_smoothness(
        &self,
        layer: usize,
        x: &Matrix,
        labels: &[usize],
        iters: usize,
        seed: u64,
    ) -> Result<f64> {
        let cache = self.forward(x)?;
        check_labels(&cache.logits, labels)?;
        let n = labels.len() as f64;
        let probs = {
            let mut p = log_softmax_window(&cache.logits, &(0..cache.logits.rows()));
            for v in p.data_mut() {
                *v = v.exp();
            }
            p
        };
        let (d_out, d_in) = self.layer_shape(layer);
        let mut r = rng::derive(seed, &[0x60AD, layer as u64]);
        let mut v = Matrix::new(d_out, d_in, rng::normal_vec(&mut r, d_out * d_in))?;
        let norm = v.frobenius_norm();
        v = v.scale(1.0 / norm);
        let fd_h = 1e-6;
        let mut lambda = 0.0;
        for _ in 0..iters {
            let bumped = self.with_nudged_weight(layer, &v, fd_h)?;
            let jv = bumped.forward(x)?.logits.sub(&cache.logits)?.scale(1.0 / fd_h);
            // apply per-column softmax Hessian: diag(p) - p p^T, then 1/n
            let mut w = Matrix::zeros(jv.rows(), jv.cols());
            for c in 0..jv.cols() {
                let mut dot = 0.0;
                for r2 in 0..jv.rows() {
                    dot += probs.get(r2, c) * jv.get(r2, c);
                }
                for r2 in 0..jv.rows() {
                    let p = probs.get(r2, c);
                    w.set(r2, c, (p * jv.get(r2, c) - p * dot) / n);
                }
            }
            let pullback = self.backward_from_dlogits(&cache, &w)?;
            let gv = &pullback.weights[layer];
            lambda = gv.frobenius_norm();
            if lambda == 0.0 {
                return Ok(0.0);
            }
            v = gv.scale(1.0 / lambda);
        }
        Ok(lambda)
    }
}

fn check_labels(logits: &Matrix, labels: &[usize]) -> Result<()> {
    check_window(logits, labels, &(0..logits.rows()))
}

fn check_window(
    logits: &Matrix,
    labels: &[usize],
    window: &std::ops::Range<usize>,
) -> Result<()> {
    if logits.cols() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit columns vs {} labels",
            logits.cols(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if window.start >= window.end || window.end > logits.rows() {
        return Err(Error::InvalidLabels(format!(
            "class window {}..{} outside {} classes",
            window.start,
            window.end,
            logits.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y < window.start || y >= window.end) {
        return Err(Error::InvalidLabels(format!(
            "label {bad} outside class window {}..{}",
            window.start, window.end
        )));
    }
    Ok(())
}

/// Column-wise log-softmax over a row window, with max subtraction; the
/// output has `window.len()` rows.
fn log_softmax_window(logits: &Matrix, window: &std::ops::Range<usize>) -> Matrix {
    let mut out = Matrix::zeros(window.end - window.start, logits.cols());
    for c in 0..logits.cols() {
        let mut mx = f64::NEG_INFINITY;
        for r in window.clone() {
            mx = mx.max(logits.get(r, c));
        }
        let mut sum = 0.0;
        for r in window.clone() {
            sum += (logits.get(r, c) - mx).exp();
        }
        let lse = mx + sum.ln();
        for r in window.clone() {
            out.set(r - window.start, c, logits.get(r, c) - lse);
        }
    }
    out
}

/// Pretrain the frozen backbone on a generic held-out task, then clear the
/// temporary head. Stands in for "start from a pretrained model".
pub fn pretrain_backbone(
    net: &mut ToyNet,
    x: &Matrix,
    labels: &[usize],
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !net.head.b.is_empty() || net.layers.iter().any(|l| !l.stack.is_empty()) {
        return Err(Error::Protocol("pretrain must happen before any task".into()));
    }
    let classes = labels.iter().max().unwrap() + 1;
    net.grow_head(classes);
    let opt = AdamW::new(lr, 0.0);
    let mut w_states: Vec<MomentState> =
        net.layers.iter().map(|l| MomentState::new(l.w0.data().len())).collect();
    let mut head_state = MomentState::new(net.head.w.as_ref().unwrap().data().len());
    let mut head_b_state = MomentState::new(classes);
    let n = labels.len();
    for epoch in 0..epochs {
        let mut r = rng::derive(seed, &[0x93E7, epoch as u64]);
        let order = rng::shuffled_indices(&mut r, n);
        for chunk in order.chunks(batch_size.max(1)) {
            let (bx, by) = gather_columns(x, labels, chunk);
            let cache = net.forward(&bx)?;
            let (_, grads) = net.backward(&cache, &by)?;
            for (l, g) in grads.weights.iter().enumerate() {
                opt.step(&mut w_states[l], net.layers[l].w0.data_mut(), g.data());
            }
            opt.step(&mut head_state, net.head.w.as_mut().unwrap().data_mut(), grads.head_w.data());
            opt.step(&mut head_b_state, &mut net.head.b, &grads.head_b);
        }
    }
    net.head = Head::default();
    Ok(())
}

/// Select columns of `x` (and labels) by index, in the given order.
pub fn gather_columns(x: &Matrix, labels: &[usize], idx: &[usize]) -> (Matrix, Vec<usize>) {
    let mut out = Matrix::zeros(x.rows(), idx.len());
    let mut y = Vec::with_capacity(idx.len());
    for (dst, &src) in idx.iter().enumerate() {
        for r in 0..x.rows() {
            out.set(r, dst, x.get(r, src));
        }
        y.push(labels[src]);
    }
    (out, y)
}
