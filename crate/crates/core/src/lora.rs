//! Per-layer, per-task low-rank adapters.
//!
//! An adapter factors a weight update as `delta W = A * B` with `A` frozen
//! after initialization and only `B` trained. When `A`'s columns lie in a
//! minor subspace of the old-task gradient, every update the adapter can
//! express stays inside that subspace, whatever `B` does. `B` starts at
//! zero so a new task begins exactly at the previous merged weights.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::linalg::Matrix;
use crate::rng;
use crate::subspace::MinorSubspace;
use crate::Result;

/// Frozen down-projection `a` (d1 x r) and trainable `b` (r x d2).
#[derive(Debug, Clone)]
pub struct LoraAdapter {
    a: Matrix,
    b: Matrix,
    rank: usize,
    /// Subspace size the projection was built from, when applicable.
    k_used: Option<usize>,
}

impl LoraAdapter {
    /// New adapter with `b` zeroed, so the initial delta is exactly zero.
    pub fn new(a: Matrix, d2: usize, k_used: Option<usize>) -> Self {
        let rank = a.cols();
        let b = Matrix::zeros(rank, d2);
        Self { a, b, rank, k_used }
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn b_mut(&mut self) -> &mut Matrix {
        &mut self.b
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn k_used(&self) -> Option<usize> {
        self.k_used
    }

    /// The realized weight update `a * b`.
    pub fn delta(&self) -> Matrix {
        self.a.matmul(&self.b).expect("adapter shapes are construction-checked")
    }
}

/// `A = U_k * R` with `R` iid normal scaled by `1/sqrt(k)`, so columns of
/// `A` lie in the span of the minor basis and have roughly unit norm
/// independent of `k`.
pub fn init_a_projected(sub: &MinorSubspace, r: usize, seed: u64) -> Matrix {
    let k = sub.k();
    let mut rng = rng::derive(seed, &[0x10AD, k as u64, r as u64]);
    let scale = 1.0 / (k as f64).sqrt();
    let data: Vec<f64> = rng::normal_vec(&mut rng, k * r).into_iter().map(|x| x * scale).collect();
    let r_mat = Matrix::new(k, r, data).expect("finite normal draws");
    sub.basis().matmul(&r_mat).expect("basis is d x k")
}

/// Unconstrained initialization: iid normal entries scaled by `1/sqrt(d1)`.
/// Used for the first task and for the unprojected baseline.
pub fn init_a_random(d1: usize, r: usize, seed: u64) -> Matrix {
    let mut rng = rng::derive(seed, &[0x10AE, d1 as u64, r as u64]);
    let scale = 1.0 / (d1 as f64).sqrt();
    let data: Vec<f64> = rng::normal_vec(&mut rng, d1 * r).into_iter().map(|x| x * scale).collect();
    Matrix::new(d1, r, data).expect("finite normal draws")
}

/// Ordered adapters for one layer, one per task that trained it.
#[derive(Debug, Clone, Default)]
pub struct AdapterStack {
    adapters: Vec<LoraAdapter>,
}

impl AdapterStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, adapter: LoraAdapter) {
        self.adapters.push(adapter);
    }

    pub fn len(&self) -> usize {
        self.adapters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adapters.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&LoraAdapter> {
        self.adapters.get(i)
    }

    pub fn current(&self) -> Option<&LoraAdapter> {
        self.adapters.last()
    }

    pub fn current_mut(&mut self) -> Option<&mut LoraAdapter> {
        self.adapters.last_mut()
    }

    /// `sum_i A_i (B_i x)` without materializing the merged weight.
    pub fn forward_delta(&self, x: &Matrix) -> Result<Option<Matrix>> {
        let mut acc: Option<Matrix> = None;
        for ad in &self.adapters {
            let bx = ad.b.matmul(x)?;
            let abx = ad.a.matmul(&bx)?;
            acc = Some(match acc {
                None => abx,
                Some(prev) => prev.add(&abx)?,
            });
        }
        Ok(acc)
    }

    /// Sum of all realized deltas `sum_i A_i B_i`.
    pub fn delta_sum(&self, d1: usize, d2: usize) -> Result<Matrix> {
        let mut acc = Matrix::zeros(d1, d2);
        for ad in &self.adapters {
            acc = acc.add(&ad.delta())?;
        }
        Ok(acc)
    }

    /// Merged effective weight `w0 + sum_i A_i B_i`.
    pub fn merge(&self, w0: &Matrix) -> Result<Matrix> {
        let mut acc = w0.clone();
        for ad in &self.adapters {
            acc = acc.add(&ad.delta())?;
        }
        Ok(acc)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AdapterManifestEntry {
    layer: usize,
    task: usize,
    rank: usize,
    k_used: Option<usize>,
    a_file: String,
    b_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdapterManifest {
    schema_version: u32,
    adapters: Vec<AdapterManifestEntry>,
}

/// Checkpoint every adapter of every layer under `dir`: one CSV per matrix
/// plus a manifest recording (layer, task, rank, k used).
pub fn save_adapters(dir: &Path, stacks: &[&AdapterStack]) -> Result<()> {
    let mut manifest = AdapterManifest { schema_version: 1, adapters: Vec::new() };
    for (layer, stack) in stacks.iter().enumerate() {
        for task in 0..stack.len() {
            let ad = stack.get(task).expect("index in range");
            let a_file = format!("task{}_layer{}_a.csv", task + 1, layer);
            let b_file = format!("task{}_layer{}_b.csv", task + 1, layer);
            ad.a.write_csv(&dir.join(&a_file))?;
            ad.b.write_csv(&dir.join(&b_file))?;
            manifest.adapters.push(AdapterManifestEntry {
                layer,
                task: task + 1,
                rank: ad.rank,
                k_used: ad.k_used,
                a_file,
                b_file,
            });
        }
    }
    crate::report::write_json_atomic(&dir.join("manifest.json"), &manifest)
}

/// Load adapter stacks written by `save_adapters`; returns one stack per
/// layer index up to the largest layer present.
pub fn load_adapters(dir: &Path) -> Result<Vec<AdapterStack>> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: AdapterManifest = serde_json::from_str(&text)?;
    let layers = manifest.adapters.iter().map(|e| e.layer + 1).max().unwrap_or(0);
    let mut stacks: Vec<Vec<Option<LoraAdapter>>> = vec![Vec::new(); layers];
    for e in &manifest.adapters {
        let a = Matrix::read_csv(&dir.join(&e.a_file))?;
        let b = Matrix::read_csv(&dir.join(&e.b_file))?;
        let mut ad = LoraAdapter::new(a, b.cols(), e.k_used);
        ad.b = b;
        let slot = &mut stacks[e.layer];
        if slot.len() < e.task {
            slot.resize(e.task, None);
        }
        slot[e.task - 1] = Some(ad);
    }
    let mut out = Vec::with_capacity(layers);
    for (layer, slot) in stacks.into_iter().enumerate() {
        let mut stack = AdapterStack::new();
        for (i, ad) in slot.into_iter().enumerate() {
            let ad = ad.ok_or_else(|| {
                Error::Protocol(format!("adapter checkpoint missing task {} layer {layer}", i + 1))
            })?;
            stack.push(ad);
        }
        out.push(stack);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd;
    use crate::subspace::{minor_basis, Spectrum};

    fn random_subspace(d: usize, k: usize, seed: u64) -> MinorSubspace {
        let mut r = rng::derive(seed, &[0xFACE]);
        let m = Matrix::new(d, d, rng::normal_vec(&mut r, d * d)).unwrap();
        minor_basis(&svd(&m).unwrap(), k).unwrap()
    }

    #[test]
    fn projected_a_is_padded_r_for_axis_aligned_basis() {
        // basis = first two standard basis vectors of R^4
        let basis =
            Matrix::new(4, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let sub = MinorSubspace::new(basis, Spectrum::new(vec![0.0; 4]).unwrap()).unwrap();
        let a = init_a_projected(&sub, 3, 5);
        // rows beyond the basis span are exactly zero; the top block is R
        for r in 2..4 {
            for c in 0..3 {
                assert_eq!(a.get(r, c), 0.0);
            }
        }
        assert!(a.columns(0, 3).frobenius_norm() > 0.0);
    }

    #[test]
    fn projected_a_is_confined_to_the_subspace() {
        let sub = random_subspace(8, 3, 77);
        let a = init_a_projected(&sub, 10, 9);
        let resid = sub.complement_residual(&a).unwrap().frobenius_norm();
        assert!(resid <= 1e-10 * a.frobenius_norm());
    }

    #[test]
    fn projected_a_rank_bounded_by_k() {
        let sub = random_subspace(12, 3, 13);
        let a = init_a_projected(&sub, 10, 21);
        let s = svd(&a).unwrap();
        let numerical_rank = s.sigma.iter().filter(|&&x| x > 1e-10).count();
        assert!(numerical_rank <= 3, "rank {numerical_rank}");
    }

    #[test]
    fn random_a_is_deterministic_and_scaled() {
        let a1 = init_a_random(40, 30, 3);
        let a2 = init_a_random(40, 30, 3);
        assert_eq!(a1, a2);
        assert_ne!(a1, init_a_random(40, 30, 4));

        let n = (40 * 30) as f64;
        let mean = a1.data().iter().sum::<f64>() / n;
        // entries are N(0, 1/40); five standard errors of the mean
        let se = (1.0 / 40.0f64).sqrt() / n.sqrt();
        assert!(mean.abs() < 5.0 * se, "mean {mean} vs se {se}");
        let var = a1.data().iter().map(|x| x * x).sum::<f64>() / n;
        assert!((var - 1.0 / 40.0).abs() < 0.2 / 40.0, "var {var}");
    }

    #[test]
    fn forward_delta_cases() {
        let mut stack = AdapterStack::new();
        let x = Matrix::from_rows(&[vec![1.0, 0.5], vec![-1.0, 2.0]]).unwrap();
        assert!(stack.forward_delta(&x).unwrap().is_none());

        // zero B contributes nothing
        stack.push(LoraAdapter::new(init_a_random(2, 2, 1), 2, None));
        let d = stack.forward_delta(&x).unwrap().unwrap();
        assert_eq!(d, Matrix::zeros(2, 2));

        // identity A with r = d reduces to B x
        let mut ad = LoraAdapter::new(Matrix::identity(2), 2, None);
        *ad.b_mut() = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let mut stack = AdapterStack::new();
        stack.push(ad.clone());
        let d = stack.forward_delta(&x).unwrap().unwrap();
        assert_eq!(d, ad.b().matmul(&x).unwrap());

        // two adapters sum linearly
        let mut ad2 = LoraAdapter::new(init_a_random(2, 2, 8), 2, None);
        *ad2.b_mut() = Matrix::from_rows(&[vec![0.1, -0.2], vec![0.3, 0.4]]).unwrap();
        let mut both = AdapterStack::new();
        both.push(ad.clone());
        both.push(ad2.clone());
        let sum = both.forward_delta(&x).unwrap().unwrap();
        let single2 = {
            let mut s = AdapterStack::new();
            s.push(ad2);
            s.forward_delta(&x).unwrap().unwrap()
        };
        let single1 = {
            let mut s = AdapterStack::new();
            s.push(ad);
            s.forward_delta(&x).unwrap().unwrap()
        };
        let direct = single1.add(&single2).unwrap();
        assert!(sum.sub(&direct).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn merge_matches_adapter_forward() {
        let mut r = rng::derive(6, &[0x31]);
        let w0 = Matrix::new(4, 3, rng::normal_vec(&mut r, 12)).unwrap();
        let x = Matrix::new(3, 5, rng::normal_vec(&mut r, 15)).unwrap();
        let mut stack = AdapterStack::new();
        for s in 0..2 {
            let mut ad = LoraAdapter::new(init_a_random(4, 2, s), 3, None);
            *ad.b_mut() = Matrix::new(2, 3, rng::normal_vec(&mut r, 6)).unwrap();
            stack.push(ad);
        }
        let merged = stack.merge(&w0).unwrap().matmul(&x).unwrap();
        let split = w0.matmul(&x).unwrap().add(&stack.forward_delta(&x).unwrap().unwrap()).unwrap();
        assert!(merged.sub(&split).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn adapter_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s0 = AdapterStack::new();
        let mut ad = LoraAdapter::new(init_a_random(4, 2, 1), 3, Some(2));
        *ad.b_mut() = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        s0.push(ad);
        let s1 = AdapterStack::new();
        save_adapters(dir.path(), &[&s0, &s1]).unwrap();
        let loaded = load_adapters(dir.path()).unwrap();
        assert_eq!(loaded.len(), 1); // empty trailing stack is not recorded
        assert_eq!(loaded[0].len(), 1);
        let got = loaded[0].get(0).unwrap();
        assert_eq!(got.a(), s0.get(0).unwrap().a());
        assert_eq!(got.b(), s0.get(0).unwrap().b());
        assert_eq!(got.k_used(), Some(2));
    }
}
