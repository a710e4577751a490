//! Per-layer running average of completed tasks' gradients.
//!
//! After a task finishes training, its data is fed back through the frozen
//! model once and the mean gradient of the loss with respect to each
//! layer's merged effective weight is folded into the memory:
//! `g_old <- (n * g_old + g_new) / (n + 1)` where `n` counts tasks already
//! averaged. Before any task completes the memory is all zeros.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::linalg::Matrix;
use crate::Result;

/// Anything that can report mean-batch gradients of its loss with respect
/// to per-layer effective weights.
pub trait DifferentiableModel {
    fn layer_count(&self) -> usize;
    fn layer_shape(&self, layer: usize) -> (usize, usize);
    /// Mean-over-batch loss gradients, one matrix per layer.
    fn weight_gradients(&self, x: &Matrix, labels: &[usize]) -> Result<Vec<Matrix>>;
}

impl DifferentiableModel for crate::network::ToyNet {
    fn layer_count(&self) -> usize {
        self.num_layers()
    }

    fn layer_shape(&self, layer: usize) -> (usize, usize) {
        self.layer_shape(layer)
    }

    fn weight_gradients(&self, x: &Matrix, labels: &[usize]) -> Result<Vec<Matrix>> {
        let cache = self.forward(x)?;
        let (_, grads) = self.backward(&cache, labels)?;
        Ok(grads.weights)
    }
}

/// A network viewed through one task's loss: gradients of the cross-entropy
/// restricted to that task's class window.
pub struct WindowedModel<'a> {
    pub net: &'a crate::network::ToyNet,
    pub window: std::ops::Range<usize>,
}

impl DifferentiableModel for WindowedModel<'_> {
    fn layer_count(&self) -> usize {
        self.net.num_layers()
    }

    fn layer_shape(&self, layer: usize) -> (usize, usize) {
        self.net.layer_shape(layer)
    }

    fn weight_gradients(&self, x: &Matrix, labels: &[usize]) -> Result<Vec<Matrix>> {
        let cache = self.net.forward(x)?;
        let (_, grads) = self.net.backward_in_window(&cache, labels, self.window.clone())?;
        Ok(grads.weights)
    }
}

#[derive(Debug, Clone)]
struct LayerMemory {
    g_old: Matrix,
    tasks_seen: usize,
}

/// One gradient-average slot per layer.
#[derive(Debug, Clone)]
pub struct GradientMemory {
    layers: Vec<LayerMemory>,
}

impl GradientMemory {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        let layers = shapes
            .iter()
            .map(|&(r, c)| LayerMemory { g_old: Matrix::zeros(r, c), tasks_seen: 0 })
            .collect();
        Self { layers }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn g_old(&self, layer: usize) -> &Matrix {
        &self.layers[layer].g_old
    }

    pub fn tasks_seen(&self, layer: usize) -> usize {
        self.layers[layer].tasks_seen
    }

    /// Fold one completed task's mean gradient into the running average.
    pub fn update_old(&mut self, layer: usize, g_new: &Matrix) -> Result<()> {
        let slot = self
            .layers
            .get_mut(layer)
            .ok_or_else(|| Error::Protocol(format!("unknown layer {layer}")))?;
        if !slot.g_old.same_shape(g_new) {
            return Err(Error::Shape(format!(
                "gradient {}x{} does not match layer {}x{}",
                g_new.rows(),
                g_new.cols(),
                slot.g_old.rows(),
                slot.g_old.cols()
            )));
        }
        let n = slot.tasks_seen as f64;
        let mut next = slot.g_old.scale(n);
        next.add_scaled(g_new, 1.0)?;
        slot.g_old = next.scale(1.0 / (n + 1.0));
        slot.tasks_seen += 1;
        Ok(())
    }

    /// Checkpoint as one CSV per layer plus a manifest.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        let mut manifest = GradMemManifest { schema_version: 1, layers: Vec::new() };
        for (i, slot) in self.layers.iter().enumerate() {
            let file = format!("layer{i}.csv");
            slot.g_old.write_csv(&dir.join(&file))?;
            manifest.layers.push(GradMemLayerEntry {
                layer: i,
                rows: slot.g_old.rows(),
                cols: slot.g_old.cols(),
                tasks_seen: slot.tasks_seen,
                file,
            });
        }
        crate::report::write_json_atomic(&dir.join("manifest.json"), &manifest)
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: GradMemManifest = serde_json::from_str(&text)?;
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for (i, entry) in manifest.layers.iter().enumerate() {
            if entry.layer != i {
                return Err(Error::Protocol("gradient memory manifest out of order".into()));
            }
            let g_old = Matrix::read_csv(&dir.join(&entry.file))?;
            if g_old.rows() != entry.rows || g_old.cols() != entry.cols {
                return Err(Error::Shape("checkpointed matrix shape mismatch".into()));
            }
            layers.push(LayerMemory { g_old, tasks_seen: entry.tasks_seen });
        }
        Ok(Self { layers })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GradMemLayerEntry {
    layer: usize,
    rows: usize,
    cols: usize,
    tasks_seen: usize,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct GradMemManifest {
    schema_version: u32,
    layers: Vec<GradMemLayerEntry>,
}

/// Mean gradient of the model's loss over an entire dataset, one matrix per
/// layer. Evaluated in chunks with a deterministic accumulation order; the
/// model is not mutated.
pub fn compute_task_gradient<M: DifferentiableModel>(
    model: &M,
    x: &Matrix,
    labels: &[usize],
) -> Result<Vec<Matrix>> {
    if labels.is_empty() || x.cols() == 0 {
        return Err(Error::EmptyDataset);
    }
    if x.cols() != labels.len() {
        return Err(Error::Shape(format!("{} columns vs {} labels", x.cols(), labels.len())));
    }
    const CHUNK: usize = 256;
    let n = labels.len();
    let mut acc: Vec<Matrix> = (0..model.layer_count())
        .map(|l| {
            let (r, c) = model.layer_shape(l);
            Matrix::zeros(r, c)
        })
        .collect();
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(CHUNK) {
        let (bx, by) = crate::network::gather_columns(x, labels, chunk);
        let grads = model.weight_gradients(&bx, &by)?;
        // chunk gradients are means; re-weight so the total is a mean over n
        let w = chunk.len() as f64 / n as f64;
        for (a, g) in acc.iter_mut().zip(&grads) {
            a.add_scaled(g, w)?;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, ToyNet};
    use crate::rng;

    /// Single linear layer with squared loss against one-hot targets:
    /// `L = mean_i 0.5 ||W x_i - e_{y_i}||^2`, gradient `(W x - e_y) x^T`.
    struct LeastSquares {
        w: Matrix,
    }

    impl DifferentiableModel for LeastSquares {
        fn layer_count(&self) -> usize {
            1
        }

        fn layer_shape(&self, _layer: usize) -> (usize, usize) {
            (self.w.rows(), self.w.cols())
        }

        fn weight_gradients(&self, x: &Matrix, labels: &[usize]) -> Result<Vec<Matrix>> {
            let mut resid = self.w.matmul(x)?;
            for (c, &y) in labels.iter().enumerate() {
                resid.set(y, c, resid.get(y, c) - 1.0);
            }
            Ok(vec![resid.matmul(&x.transpose())?.scale(1.0 / labels.len() as f64)])
        }
    }

    fn ls_loss(w: &Matrix, x: &Matrix, labels: &[usize]) -> f64 {
        let mut resid = w.matmul(x).unwrap();
        for (c, &y) in labels.iter().enumerate() {
            resid.set(y, c, resid.get(y, c) - 1.0);
        }
        0.5 * resid.data().iter().map(|v| v * v).sum::<f64>() / labels.len() as f64
    }

    #[test]
    fn update_old_reduces_to_first_gradient_at_t2() {
        let mut mem = GradientMemory::new(&[(1, 1)]);
        let g1 = Matrix::new(1, 1, vec![2.0]).unwrap();
        mem.update_old(0, &g1).unwrap();
        assert_eq!(mem.g_old(0), &g1);
        assert_eq!(mem.tasks_seen(0), 1);
    }

    #[test]
    fn update_old_is_a_running_mean() {
        let mut mem = GradientMemory::new(&[(1, 1)]);
        mem.update_old(0, &Matrix::new(1, 1, vec![2.0]).unwrap()).unwrap();
        mem.update_old(0, &Matrix::new(1, 1, vec![4.0]).unwrap()).unwrap();
        assert_eq!(mem.g_old(0).get(0, 0), 3.0);

        // arbitrary sequence matches the arithmetic mean
        let mut mem = GradientMemory::new(&[(2, 3)]);
        let mut r = rng::derive(3, &[0x99]);
        let gs: Vec<Matrix> =
            (0..7).map(|_| Matrix::new(2, 3, rng::normal_vec(&mut r, 6)).unwrap()).collect();
        for g in &gs {
            mem.update_old(0, g).unwrap();
        }
        let mut mean = Matrix::zeros(2, 3);
        for g in &gs {
            mean.add_scaled(g, 1.0 / 7.0).unwrap();
        }
        assert!(mem.g_old(0).sub(&mean).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn zero_gradients_leave_memory_zero() {
        let mut mem = GradientMemory::new(&[(2, 2)]);
        for _ in 0..3 {
            mem.update_old(0, &Matrix::zeros(2, 2)).unwrap();
        }
        assert_eq!(mem.g_old(0), &Matrix::zeros(2, 2));
        assert_eq!(mem.tasks_seen(0), 3);
    }

    #[test]
    fn update_old_rejects_shape_mismatch() {
        let mut mem = GradientMemory::new(&[(2, 2)]);
        assert!(matches!(mem.update_old(0, &Matrix::zeros(3, 2)), Err(Error::Shape(_))));
        assert!(mem.update_old(1, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn task_gradient_matches_least_squares_analytic_form() {
        let w = Matrix::from_rows(&[vec![0.5, -0.2], vec![0.1, 0.3]]).unwrap();
        let model = LeastSquares { w: w.clone() };
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let g = compute_task_gradient(&model, &x, &[1]).unwrap();
        // (Wx - e_1) x^T by hand: Wx = [0.1, 0.7], resid = [0.1, -0.3]
        let expect =
            Matrix::from_rows(&[vec![0.1, 0.2], vec![-0.3, -0.6]]).unwrap();
        assert!(g[0].sub(&expect).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn task_gradient_matches_finite_differences() {
        let mut r = rng::derive(21, &[0x44]);
        let w = Matrix::new(3, 4, rng::normal_vec(&mut r, 12)).unwrap();
        let x = Matrix::new(4, 9, rng::normal_vec(&mut r, 36)).unwrap();
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let g = compute_task_gradient(&LeastSquares { w: w.clone() }, &x, &labels).unwrap();
        let step = 1e-5;
        for r0 in 0..3 {
            for c0 in 0..4 {
                let mut wp = w.clone();
                wp.set(r0, c0, w.get(r0, c0) + step);
                let mut wm = w.clone();
                wm.set(r0, c0, w.get(r0, c0) - step);
                let fd = (ls_loss(&wp, &x, &labels) - ls_loss(&wm, &x, &labels)) / (2.0 * step);
                let an = g[0].get(r0, c0);
                assert!((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6) <= 1e-6);
            }
        }
    }

    #[test]
    fn duplicating_examples_preserves_the_average() {
        let mut net = ToyNet::new(3, &[4], Activation::Tanh, 2);
        net.grow_head(2);
        let mut r = rng::derive(9, &[0x77]);
        let x = Matrix::new(3, 5, rng::normal_vec(&mut r, 15)).unwrap();
        let y: Vec<usize> = (0..5).map(|i| i % 2).collect();
        let g1 = compute_task_gradient(&net, &x, &y).unwrap();
        let idx: Vec<usize> = (0..5).chain(0..5).collect();
        let (xx, yy) = crate::network::gather_columns(&x, &y, &idx);
        let g2 = compute_task_gradient(&net, &xx, &yy).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!(a.sub(b).unwrap().max_abs() <= 1e-13);
        }
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        // choose W so that W x = e_y exactly for the single example
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        // W = e_0 x^T / ||x||^2
        let w = Matrix::from_rows(&[vec![0.2, 0.4], vec![0.0, 0.0]]).unwrap();
        let g = compute_task_gradient(&LeastSquares { w }, &x, &[0]).unwrap();
        assert!(g[0].max_abs() <= 1e-10);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let net = {
            let mut n = ToyNet::new(3, &[4], Activation::Tanh, 2);
            n.grow_head(2);
            n
        };
        let x = Matrix::zeros(3, 1);
        assert!(matches!(compute_task_gradient(&net, &x, &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut mem = GradientMemory::new(&[(2, 3), (1, 2)]);
        let mut r = rng::derive(5, &[0x21]);
        mem.update_old(0, &Matrix::new(2, 3, rng::normal_vec(&mut r, 6)).unwrap()).unwrap();
        mem.update_old(1, &Matrix::new(1, 2, rng::normal_vec(&mut r, 2)).unwrap()).unwrap();
        mem.save_dir(dir.path()).unwrap();
        let back = GradientMemory::load_dir(dir.path()).unwrap();
        assert_eq!(back.layer_count(), 2);
        for l in 0..2 {
            assert_eq!(back.tasks_seen(l), mem.tasks_seen(l));
            assert_eq!(back.g_old(l), mem.g_old(l));
        }
    }
}
