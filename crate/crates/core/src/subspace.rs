//! Partitioning a gradient space into major and minor subspaces.
//!
//! Given the singular spectrum of the old-task average gradient, `epsilon`
//! measures the fraction of singular mass in the trailing `k` directions.
//! `solve_k_split` picks the subspace size minimizing
//! `(t-1)·ε(k) − α·k/d`; `solve_k_threshold` is the fixed-threshold
//! baseline over squared singular values. `MinorSubspace` carries the
//! trailing left singular vectors and projects updates onto their span.

use crate::error::Error;
use crate::linalg::{Matrix, SvdResult};
use crate::Result;

/// Nonincreasing, nonnegative singular values. The length is the number of
/// directions `d`, including zero-padding for null directions when built
/// from a full-basis SVD.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    sigma: Vec<f64>,
}

impl Spectrum {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if sigma.is_empty() {
            return Err(Error::InvalidInput("empty spectrum".into()));
        }
        for w in sigma.windows(2) {
            if w[1] > w[0] {
                return Err(Error::InvalidInput("spectrum not nonincreasing".into()));
            }
        }
        if sigma.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput("spectrum has negative or non-finite entries".into()));
        }
        Ok(Self { sigma })
    }

    /// Spectrum aligned with the full left basis of `s`: singular values
    /// padded with zeros up to the number of left singular vectors.
    pub fn from_svd(s: &SvdResult) -> Self {
        let mut sigma = s.sigma.clone();
        sigma.resize(s.u.cols(), 0.0);
        Self { sigma }
    }

    pub fn d(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn total(&self) -> f64 {
        self.sigma.iter().sum()
    }

    pub fn is_degenerate(&self) -> bool {
        self.sigma.iter().all(|&s| s == 0.0)
    }
}

/// Knobs for the subspace-size solvers.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Ratio of plasticity gain to stability cost in the objective.
    pub alpha: f64,
    /// Threshold on the minor squared-singular-mass fraction (baseline).
    pub tau: f64,
    /// Current task index, 1-based; the solvers require `t >= 2`.
    pub task_index: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { alpha: 20.0, tau: 0.02, task_index: 2 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidInput(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidInput(format!("tau must be in (0,1), got {}", self.tau)));
        }
        if self.task_index < 2 {
            return Err(Error::InvalidInput(format!(
                "solver needs task_index >= 2, got {}",
                self.task_index
            )));
        }
        Ok(())
    }
}

/// Fraction of singular mass in the trailing `k` directions:
/// `(sum of the last k sigma) / (sum of all sigma)`.
pub fn epsilon(spectrum: &Spectrum, k: usize) -> Result<f64> {
    let d = spectrum.d();
    if k > d {
        return Err(Error::InvalidK { k, d });
    }
    let total = spectrum.total();
    if total == 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    let tail: f64 = spectrum.sigma[d - k..].iter().sum();
    Ok(tail / total)
}

/// Objective value `(t-1)·ε(k) − α·k/d` for a given `k`.
pub fn split_objective(spectrum: &Spectrum, cfg: &SolverConfig, k: usize) -> Result<f64> {
    let d = spectrum.d();
    let t = cfg.task_index as f64;
    Ok((t - 1.0) * epsilon(spectrum, k)? - cfg.alpha * k as f64 / d as f64)
}

/// Minor-subspace size minimizing the split objective over `k in 1..=d`.
/// Ties go to the smaller `k` (retain more stability when the objective
/// cannot tell the difference).
pub fn solve_k_split(spectrum: &Spectrum, cfg: &SolverConfig) -> Result<usize> {
    cfg.validate()?;
    let d = spectrum.d();
    let total = spectrum.total();
    if total == 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    let t = cfg.task_index as f64;
    let mut best_k = 1;
    let mut best_j = f64::INFINITY;
    let mut tail = 0.0;
    for k in 1..=d {
        tail += spectrum.sigma[d - k];
        let j = (t - 1.0) * (tail / total) - cfg.alpha * k as f64 / d as f64;
        if j < best_j {
            best_j = j;
            best_k = k;
        }
    }
    Ok(best_k)
}

/// Threshold baseline: the largest `k` whose trailing squared-singular-mass
/// fraction stays strictly below `tau`. Returns 0 when even `k = 1`
/// violates the threshold; callers decide how to clamp.
pub fn solve_k_threshold(spectrum: &Spectrum, tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidInput(format!("tau must be in (0,1), got {tau}")));
    }
    let d = spectrum.d();
    let total_sq: f64 = spectrum.sigma.iter().map(|s| s * s).sum();
    if total_sq == 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    let mut best = 0;
    let mut tail_sq = 0.0;
    for k in 1..=d {
        let s = spectrum.sigma[d - k];
        tail_sq += s * s;
        if tail_sq / total_sq < tau {
            best = k;
        }
    }
    Ok(best)
}

/// Orthonormal basis of the trailing `k` left singular directions, with the
/// spectrum it was cut from.
#[derive(Debug, Clone)]
pub struct MinorSubspace {
    basis: Matrix,
    k: usize,
    spectrum: Spectrum,
}

impl MinorSubspace {
    /// Build from an explicit basis; checks column orthonormality to 1e-9.
    pub fn new(basis: Matrix, spectrum: Spectrum) -> Result<Self> {
        let k = basis.cols();
        if k == 0 || k > basis.rows() {
            return Err(Error::InvalidK { k, d: basis.rows() });
        }
        let gram = basis.transpose().matmul(&basis)?;
        let err = gram.sub(&Matrix::identity(k))?.max_abs();
        if err > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "basis columns not orthonormal (max deviation {err:.3e})"
            )));
        }
        Ok(Self { basis, k, spectrum })
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    /// Dimension of the ambient space (rows of the basis).
    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    /// Orthogonal projection of `delta_w` onto the span of the basis:
    /// `U_k (U_k^T delta_w)`.
    pub fn project(&self, delta_w: &Matrix) -> Result<Matrix> {
        if delta_w.rows() != self.basis.rows() {
            return Err(Error::Shape(format!(
                "project expects {} rows, got {}",
                self.basis.rows(),
                delta_w.rows()
            )));
        }
        let coeffs = self.basis.transpose().matmul(delta_w)?;
        self.basis.matmul(&coeffs)
    }

    /// Residual `delta_w − project(delta_w)`; zero when the update is
    /// confined to the subspace.
    pub fn complement_residual(&self, delta_w: &Matrix) -> Result<Matrix> {
        delta_w.sub(&self.project(delta_w)?)
    }
}

/// Trailing-`k` minor subspace of a decomposition's full left basis.
pub fn minor_basis(svd_result: &SvdResult, k: usize) -> Result<MinorSubspace> {
    let d = svd_result.u.cols();
    if k == 0 || k > d {
        return Err(Error::InvalidK { k, d });
    }
    let basis = svd_result.u.columns(d - k, d);
    MinorSubspace::new(basis, Spectrum::from_svd(svd_result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd;
    use crate::rng;
    use approx::assert_abs_diff_eq;

    fn spec(v: &[f64]) -> Spectrum {
        Spectrum::new(v.to_vec()).unwrap()
    }

    #[test]
    fn epsilon_cases() {
        let s = spec(&[3.0, 2.0, 1.0]);
        assert_eq!(epsilon(&s, 0).unwrap(), 0.0);
        assert_eq!(epsilon(&s, 3).unwrap(), 1.0);
        assert_abs_diff_eq!(epsilon(&s, 1).unwrap(), 1.0 / 6.0, epsilon = 1e-15);
        assert!(matches!(epsilon(&s, 4), Err(Error::InvalidK { .. })));
        let z = spec(&[0.0, 0.0]);
        assert!(matches!(epsilon(&z, 1), Err(Error::DegenerateSpectrum)));
    }

    #[test]
    fn solve_k_split_worked_examples() {
        let cfg = |alpha, t| SolverConfig { alpha, tau: 0.02, task_index: t };

        let s = spec(&[10.0, 5.0, 1.0, 0.5]);
        assert_eq!(solve_k_split(&s, &cfg(0.8, 2)).unwrap(), 2);
        // spot-check the objective values behind that argmin
        let j: Vec<f64> =
            (1..=4).map(|k| split_objective(&s, &cfg(0.8, 2), k).unwrap()).collect();
        assert_abs_diff_eq!(j[0], -0.169697, epsilon = 1e-5);
        assert_abs_diff_eq!(j[1], -0.309091, epsilon = 1e-5);
        assert_abs_diff_eq!(j[2], -0.206061, epsilon = 1e-5);
        assert_abs_diff_eq!(j[3], 0.2, epsilon = 1e-12);

        let flat = spec(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(solve_k_split(&flat, &cfg(4.0, 2)).unwrap(), 4);

        // zero tail keeps epsilon flat; the alpha term pushes k to 2, and
        // the jump at k = 3 keeps it there
        let low_rank = spec(&[1.0, 0.0, 0.0]);
        assert_eq!(solve_k_split(&low_rank, &cfg(1e-9, 2)).unwrap(), 2);
    }

    #[test]
    fn solve_k_split_tie_breaks_to_smaller_k() {
        // alpha term absent ties are impossible, so craft exact ties with
        // zero singular values and an alpha small enough to not matter:
        // J(k) identical for k=1,2 requires epsilon and k/d terms equal,
        // which cannot happen with alpha > 0; instead check the argmin scan
        // picks the first minimum among equal objective values.
        let s = spec(&[1.0, 1.0]);
        let cfg = SolverConfig { alpha: 1.0, tau: 0.02, task_index: 2 };
        // J(1) = 0.5 - 0.5 = 0, J(2) = 1 - 1 = 0: exact tie, choose k = 1
        assert_eq!(solve_k_split(&s, &cfg).unwrap(), 1);
    }

    #[test]
    fn solve_k_split_rejects_bad_config() {
        let s = spec(&[1.0]);
        let c = SolverConfig { alpha: 0.0, tau: 0.02, task_index: 2 };
        assert!(solve_k_split(&s, &c).is_err());
        let c = SolverConfig { alpha: 1.0, tau: 0.02, task_index: 1 };
        assert!(solve_k_split(&s, &c).is_err());
        let z = spec(&[0.0]);
        let c = SolverConfig::default();
        assert!(matches!(solve_k_split(&z, &c), Err(Error::DegenerateSpectrum)));
    }

    #[test]
    fn solve_k_threshold_cases() {
        let s = spec(&[3.0, 2.0, 1.0]);
        assert_eq!(solve_k_threshold(&s, 0.1).unwrap(), 1);
        let low_rank = spec(&[1.0, 0.0, 0.0]);
        assert_eq!(solve_k_threshold(&low_rank, 0.5).unwrap(), 2);
        // near-1 threshold: the full-space ratio is exactly 1, never < tau
        assert_eq!(solve_k_threshold(&s, 1.0 - 1e-12).unwrap(), 2);
        // k = 1 already violating yields 0
        let concentrated = spec(&[1.0, 1.0]);
        assert_eq!(solve_k_threshold(&concentrated, 0.1).unwrap(), 0);
        let z = spec(&[0.0, 0.0]);
        assert!(matches!(solve_k_threshold(&z, 0.5), Err(Error::DegenerateSpectrum)));
    }

    #[test]
    fn minor_basis_spans_and_orthonormal() {
        let s = svd(&Matrix::identity(3)).unwrap();
        let sub = minor_basis(&s, 3).unwrap();
        assert_eq!(sub.dim(), 3);
        // spans R^3: projecting anything is the identity
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let p = sub.project(&x).unwrap();
        assert!(p.sub(&x).unwrap().max_abs() <= 1e-12);

        let s = svd(&Matrix::from_diag(&[3.0, 2.0, 1.0])).unwrap();
        let sub = minor_basis(&s, 1).unwrap();
        // smallest singular direction of diag(3,2,1) is e3 (sign fixed)
        assert_abs_diff_eq!(sub.basis().get(2, 0), 1.0, epsilon = 1e-12);
        assert!(sub.basis().get(0, 0).abs() <= 1e-12);

        let mut r = rng::derive(12, &[0x5AB]);
        let m = Matrix::new(6, 6, rng::normal_vec(&mut r, 36)).unwrap();
        let sub = minor_basis(&svd(&m).unwrap(), 2).unwrap();
        let gram = sub.basis().transpose().matmul(sub.basis()).unwrap();
        assert!(gram.sub(&Matrix::identity(2)).unwrap().max_abs() <= 1e-9);
    }

    #[test]
    fn minor_basis_rejects_out_of_range_k() {
        let s = svd(&Matrix::identity(3)).unwrap();
        assert!(matches!(minor_basis(&s, 0), Err(Error::InvalidK { .. })));
        assert!(matches!(minor_basis(&s, 4), Err(Error::InvalidK { .. })));
    }

    #[test]
    fn project_axis_aligned() {
        // basis = e1 in R^2
        let basis = Matrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        let sub = MinorSubspace::new(basis, spec(&[1.0, 0.0])).unwrap();
        let dw = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let p = sub.project(&dw).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn project_idempotent_and_contractive() {
        let mut r = rng::derive(4, &[0xB0]);
        let m = Matrix::new(8, 8, rng::normal_vec(&mut r, 64)).unwrap();
        let sub = minor_basis(&svd(&m).unwrap(), 3).unwrap();
        let x = Matrix::new(8, 5, rng::normal_vec(&mut r, 40)).unwrap();
        let p1 = sub.project(&x).unwrap();
        let p2 = sub.project(&p1).unwrap();
        assert!(p2.sub(&p1).unwrap().max_abs() <= 1e-12);
        assert!(p1.frobenius_norm() <= x.frobenius_norm() + 1e-12);
        // complement annihilation
        let resid = sub.complement_residual(&p1).unwrap();
        assert!(resid.max_abs() <= 1e-10);
    }

    #[test]
    fn spectrum_validation() {
        assert!(Spectrum::new(vec![]).is_err());
        assert!(Spectrum::new(vec![1.0, 2.0]).is_err());
        assert!(Spectrum::new(vec![1.0, -0.5]).is_err());
        assert!(Spectrum::new(vec![2.0, 1.0]).is_ok());
    }

    #[test]
    fn spectrum_from_svd_pads_to_full_basis() {
        let m = Matrix::new(5, 2, vec![1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let s = svd(&m).unwrap();
        let sp = Spectrum::from_svd(&s);
        assert_eq!(sp.d(), 5);
        assert_eq!(&sp.sigma()[2..], &[0.0, 0.0, 0.0]);
    }
}
