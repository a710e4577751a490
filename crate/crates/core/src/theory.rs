//! Numerical verification of the loss-increase bound, the expected
//! stability/plasticity split, and gradient preservation under orthogonal
//! updates, on controlled instances where every constant is exactly known.
//!
//! Conventions inside the probes: task memories are taken as update
//! (descent) directions, i.e. negative gradients, and the current task's
//! direction is evaluated at the post-update point. Under that reading the
//! bound is a theorem for convex quadratics and must hold with zero
//! violations; the probes construct exactly those instances.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::linalg::{frobenius_inner, svd, Matrix};
use crate::network::ToyNet;
use crate::rng;
use crate::subspace::{epsilon, Spectrum};
use crate::Result;

/// Convex quadratic with an elementwise diagonal Hessian:
/// `L(W) = 0.5 * sum_ij h_ij (W - C)_ij^2`. The exact smoothness constant
/// is the largest `h` entry.
#[derive(Debug, Clone)]
pub struct QuadraticTask {
    h: Matrix,
    c: Matrix,
}

impl QuadraticTask {
    pub fn random(rows: usize, cols: usize, l_max: f64, seed: u64) -> Self {
        let mut r = rng::derive(seed, &[0x9AAD]);
        let h_data: Vec<f64> =
            rng::normal_vec(&mut r, rows * cols).into_iter().map(|x| x.abs() * l_max / 2.0).collect();
        let c_data = rng::normal_vec(&mut r, rows * cols);
        Self {
            h: Matrix::new(rows, cols, h_data).expect("finite"),
            c: Matrix::new(rows, cols, c_data).expect("finite"),
        }
    }

    pub fn loss(&self, w: &Matrix) -> f64 {
        let mut total = 0.0;
        for ((&h, &wv), &cv) in self.h.data().iter().zip(w.data()).zip(self.c.data()) {
            let d = wv - cv;
            total += 0.5 * h * d * d;
        }
        total
    }

    pub fn grad(&self, w: &Matrix) -> Matrix {
        let data: Vec<f64> = self
            .h
            .data()
            .iter()
            .zip(w.data())
            .zip(self.c.data())
            .map(|((&h, &wv), &cv)| h * (wv - cv))
            .collect();
        Matrix::new(w.rows(), w.cols(), data).expect("finite")
    }

    /// Exact largest eigenvalue of the (diagonal) Hessian.
    pub fn smoothness(&self) -> f64 {
        self.h.max_abs()
    }

    /// Hessian-vector product, exact.
    pub fn hess_vec(&self, v: &Matrix) -> Matrix {
        let data: Vec<f64> =
            self.h.data().iter().zip(v.data()).map(|(&h, &x)| h * x).collect();
        Matrix::new(v.rows(), v.cols(), data).expect("finite")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prop1Report {
    pub trials: usize,
    pub violations: usize,
    pub min_margin: f64,
    pub slack: f64,
}

/// Check the total-loss upper bound on random convex-quadratic task sets.
/// Memory directions are negative gradients at the pre-update point; the
/// current task's direction is the negative gradient at the post-update
/// point, which is what makes the `(t-1) L / 2` curvature term sufficient.
pub fn check_prop1(trials: usize, slack: f64, seed: u64) -> Prop1Report {
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    for trial in 0..trials {
        let mut r = rng::derive(seed, &[0x9201, trial as u64]);
        let d1 = 2 + (rng::normal(&mut r).abs() * 2.0) as usize % 7;
        let d2 = 2 + (rng::normal(&mut r).abs() * 2.0) as usize % 7;
        let t = 2 + trial % 5;
        let tasks: Vec<QuadraticTask> = (0..t)
            .map(|i| QuadraticTask::random(d1, d2, 2.0, rng::mix_seed(seed, &[trial as u64, i as u64])))
            .collect();
        let l_exact = tasks.iter().map(QuadraticTask::smoothness).fold(0.0, f64::max);
        let w_prev = Matrix::new(d1, d2, rng::normal_vec(&mut r, d1 * d2)).expect("finite");
        // include the zero update as the degenerate case
        let scale = match trial % 4 {
            0 => 0.0,
            1 => 0.01,
            2 => 1.0,
            _ => 10.0,
        };
        let delta = Matrix::new(d1, d2, rng::normal_vec(&mut r, d1 * d2))
            .expect("finite")
            .scale(scale);
        let w_next = w_prev.add(&delta).expect("same shape");

        let mut lhs = 0.0;
        for task in &tasks {
            lhs += task.loss(&w_next) - task.loss(&w_prev);
        }
        let mut g_old = Matrix::zeros(d1, d2);
        for task in &tasks[..t - 1] {
            g_old.add_scaled(&task.grad(&w_prev), -1.0 / (t as f64 - 1.0)).expect("shape");
        }
        let g_t = tasks[t - 1].grad(&w_next).scale(-1.0);
        let rhs = -(t as f64 - 1.0) * frobenius_inner(&delta, &g_old).expect("shape")
            - frobenius_inner(&delta, &g_t).expect("shape")
            + (t as f64 - 1.0) * l_exact / 2.0 * delta.frobenius_norm().powi(2);
        let margin = rhs - lhs;
        min_margin = min_margin.min(margin);
        if margin < -slack {
            violations += 1;
        }
    }
    Prop1Report { trials, violations, min_margin, slack }
}

/// Measured versus closed-form stability and plasticity losses for one
/// equal-projection instance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExpectedLossCheck {
    pub d: usize,
    pub k: usize,
    pub measured_stability: f64,
    pub formula_stability: f64,
    pub measured_plasticity: f64,
    pub formula_plasticity: f64,
}

impl ExpectedLossCheck {
    pub fn stability_rel_err(&self) -> f64 {
        rel_err(self.measured_stability, self.formula_stability)
    }

    pub fn plasticity_rel_err(&self) -> f64 {
        rel_err(self.measured_plasticity, self.formula_plasticity)
    }
}

fn rel_err(measured: f64, formula: f64) -> f64 {
    (measured - formula).abs() / formula.abs().max(1.0)
}

/// Build the equal-projection construction in a shared singular frame and
/// compare the projected losses against their closed forms:
/// stability `-(t-1) eps(k) <dW, G_old>` and plasticity `-(k/d) <dW, G_t>`.
///
/// `G_old = U diag(sigma) V^T`, `G_t = gamma U V^T`, `dW = c U V^T`, and the
/// minor basis is the trailing `k` columns of `U`, so every direction
/// carries the same projection coefficient, which is exactly the regime the
/// closed forms describe.
pub fn expected_losses(
    spectrum: &Spectrum,
    t: usize,
    k: usize,
    c: f64,
    gamma: f64,
    seed: u64,
) -> Result<ExpectedLossCheck> {
    if spectrum.is_degenerate() {
        return Err(Error::DegenerateSpectrum);
    }
    if t < 2 {
        return Err(Error::InvalidInput("expected_losses needs t >= 2".into()));
    }
    let d = spectrum.d();
    if k > d {
        return Err(Error::InvalidK { k, d });
    }
    let mut r = rng::derive(seed, &[0x7E42]);
    let u = random_orthogonal(d, &mut r);
    let v = random_orthogonal(d, &mut r);
    let vt = v.transpose();
    let g_old = u.matmul(&Matrix::from_diag(spectrum.sigma()))?.matmul(&vt)?;
    let uvt = u.matmul(&vt)?;
    let g_t = uvt.scale(gamma);
    let delta_w = uvt.scale(c);

    let projected = if k == 0 {
        Matrix::zeros(d, d)
    } else {
        let basis = u.columns(d - k, d);
        basis.matmul(&basis.transpose().matmul(&delta_w)?)?
    };
    let tm1 = t as f64 - 1.0;
    let measured_stability = -tm1 * frobenius_inner(&projected, &g_old)?;
    let measured_plasticity = -frobenius_inner(&projected, &g_t)?;
    let eps = if k == 0 { 0.0 } else { epsilon(spectrum, k)? };
    let formula_stability = -tm1 * eps * frobenius_inner(&delta_w, &g_old)?;
    let formula_plasticity = -(k as f64 / d as f64) * frobenius_inner(&delta_w, &g_t)?;
    Ok(ExpectedLossCheck {
        d,
        k,
        measured_stability,
        formula_stability,
        measured_plasticity,
        formula_plasticity,
    })
}

fn random_orthogonal(d: usize, r: &mut rand_chacha::ChaCha8Rng) -> Matrix {
    let m = Matrix::new(d, d, rng::normal_vec(r, d * d)).expect("finite");
    svd(&m).expect("finite input").u
}

/// Drift of a task's gradient after stepping along a direction orthogonal
/// to it, per step size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftCurve {
    pub etas: Vec<f64>,
    pub drifts: Vec<f64>,
    /// Cosine between the step direction and the gradient it must avoid.
    pub orthogonality: f64,
}

impl DriftCurve {
    /// Log-log slope over the positive-drift points, by least squares.
    pub fn loglog_slope(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .etas
            .iter()
            .zip(&self.drifts)
            .filter(|(&e, &d)| e > 0.0 && d > 0.0)
            .map(|(&e, &d)| (e.ln(), d.ln()))
            .collect();
        if pts.len() < 2 {
            return f64::NAN;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, y) in pts {
            num += (x - mx) * (y - my);
            den += (x - mx) * (x - mx);
        }
        num / den
    }
}

/// Orthogonalize `dir` against `against` (one Gram-Schmidt step).
fn orthogonalize(dir: &Matrix, against: &Matrix) -> Result<Matrix> {
    let g_sq = frobenius_inner(against, against)?;
    if g_sq == 0.0 {
        return Ok(dir.clone());
    }
    let coef = frobenius_inner(dir, against)? / g_sq;
    let mut out = dir.clone();
    out.add_scaled(against, -coef)?;
    Ok(out)
}

/// Drift curve on a quadratic, where the drift is exactly
/// `eta * ||H g~||_F` and first-order in the step size.
pub fn quad_drift_curve(
    task: &QuadraticTask,
    w: &Matrix,
    etas: &[f64],
    seed: u64,
) -> Result<DriftCurve> {
    let g = task.grad(w);
    let mut r = rng::derive(seed, &[0x1E44]);
    let dir = Matrix::new(w.rows(), w.cols(), rng::normal_vec(&mut r, w.rows() * w.cols()))?;
    let g_tilde = orthogonalize(&dir, &g)?;
    let ortho = if g.frobenius_norm() == 0.0 {
        0.0
    } else {
        frobenius_inner(&g_tilde, &g)?.abs()
            / (g_tilde.frobenius_norm() * g.frobenius_norm()).max(f64::MIN_POSITIVE)
    };
    let mut drifts = Vec::with_capacity(etas.len());
    for &eta in etas {
        let mut w2 = w.clone();
        w2.add_scaled(&g_tilde, -eta)?;
        let drift = task.grad(&w2).sub(&g)?.frobenius_norm();
        drifts.push(drift);
    }
    Ok(DriftCurve { etas: etas.to_vec(), drifts, orthogonality: ortho })
}

/// Exact drift prediction for the quadratic case.
pub fn quad_drift_exact(task: &QuadraticTask, w: &Matrix, eta: f64, seed: u64) -> Result<f64> {
    let g = task.grad(w);
    let mut r = rng::derive(seed, &[0x1E44]);
    let dir = Matrix::new(w.rows(), w.cols(), rng::normal_vec(&mut r, w.rows() * w.cols()))?;
    let g_tilde = orthogonalize(&dir, &g)?;
    Ok(eta * task.hess_vec(&g_tilde).frobenius_norm())
}

/// Drift curve on a live network: step all backbone weights along a joint
/// direction orthogonal to the full loss gradient and measure how far the
/// gradient moves.
pub fn net_drift_curve(
    net: &ToyNet,
    x: &Matrix,
    labels: &[usize],
    etas: &[f64],
    seed: u64,
) -> Result<DriftCurve> {
    let cache = net.forward(x)?;
    let (_, grads) = net.backward(&cache, labels)?;
    let mut r = rng::derive(seed, &[0x1E45]);
    let mut dirs: Vec<Matrix> = (0..net.num_layers())
        .map(|l| {
            let (d_out, d_in) = net.layer_shape(l);
            Matrix::new(d_out, d_in, rng::normal_vec(&mut r, d_out * d_in)).expect("finite")
        })
        .collect();
    // joint Gram-Schmidt across layers
    let mut dot = 0.0;
    let mut g_sq = 0.0;
    for (dir, g) in dirs.iter().zip(&grads.weights) {
        dot += frobenius_inner(dir, g)?;
        g_sq += frobenius_inner(g, g)?;
    }
    if g_sq > 0.0 {
        for (dir, g) in dirs.iter_mut().zip(&grads.weights) {
            dir.add_scaled(g, -dot / g_sq)?;
        }
    }
    let dir_norm: f64 =
        dirs.iter().map(|d| d.frobenius_norm().powi(2)).sum::<f64>().sqrt();
    let mut resid = 0.0;
    for (dir, g) in dirs.iter().zip(&grads.weights) {
        resid += frobenius_inner(dir, g)?;
    }
    let ortho = if g_sq == 0.0 {
        0.0
    } else {
        resid.abs() / (dir_norm * g_sq.sqrt()).max(f64::MIN_POSITIVE)
    };

    let mut drifts = Vec::with_capacity(etas.len());
    for &eta in etas {
        let mut moved = net.clone();
        for (l, dir) in dirs.iter().enumerate() {
            moved = moved.with_nudged_weight(l, dir, -eta)?;
        }
        let (_, g2) = moved.backward(&moved.forward(x)?, labels)?;
        let mut sq = 0.0;
        for (a, b) in g2.weights.iter().zip(&grads.weights) {
            sq += a.sub(b)?.frobenius_norm().powi(2);
        }
        drifts.push(sq.sqrt());
    }
    Ok(DriftCurve { etas: etas.to_vec(), drifts, orthogonality: ortho })
}

/// One step of the ratio diagnostic `alpha_hat = -<dW, G_t> / <dW, G_old>`.
/// `scale` normalizes the undefined-denominator cutoff; pass
/// `||dW||_F * ||G_old||_F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    /// `-<dW, G_t>`; positive when the step descends the current task.
    pub numerator: f64,
    /// `<dW, G_old>`; its sign tells whether the step helps or hurts old
    /// tasks to first order.
    pub denominator: f64,
    pub alpha_hat: Option<f64>,
}

pub fn alpha_point(dw_dot_gt: f64, dw_dot_gold: f64, scale: f64) -> AlphaPoint {
    let numerator = -dw_dot_gt;
    let denominator = dw_dot_gold;
    let cutoff = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let alpha_hat =
        if denominator.abs() <= cutoff { None } else { Some(numerator / denominator) };
    AlphaPoint { numerator, denominator, alpha_hat }
}

/// Ratio diagnostic over an explicit trace of per-step updates and current
/// gradients against a fixed memory.
pub fn alpha_estimate(steps: &[(Matrix, Matrix)], g_old: &Matrix) -> Result<Vec<AlphaPoint>> {
    let gold_norm = g_old.frobenius_norm();
    steps
        .iter()
        .map(|(dw, g_t)| {
            let num = frobenius_inner(dw, g_t)?;
            let den = frobenius_inner(dw, g_old)?;
            Ok(alpha_point(num, den, dw.frobenius_norm() * gold_norm))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemmaReport {
    pub quad_slope: f64,
    pub quad_max_rel_err: f64,
    pub zero_eta_drift: f64,
    pub halving_ratio: f64,
    pub net_slope: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremReport {
    pub cases: Vec<ExpectedLossCheck>,
    pub max_stability_rel_err: f64,
    pub max_plasticity_rel_err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryReport {
    pub prop1: Prop1Report,
    pub theorem: TheoremReport,
    pub lemma: LemmaReport,
    pub prop1_pass: bool,
    pub theorem_pass: bool,
    pub lemma_pass: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct TheoryCheckConfig {
    pub trials: usize,
    pub seed: u64,
    /// Multiplies every tolerance; zero demands exact arithmetic and fails.
    pub tolerance_scale: f64,
}

impl Default for TheoryCheckConfig {
    fn default() -> Self {
        Self { trials: 1000, seed: 7, tolerance_scale: 1.0 }
    }
}

pub fn run_all_checks(cfg: &TheoryCheckConfig) -> Result<TheoryReport> {
    let prop1 = check_prop1(cfg.trials, 1e-9 * cfg.tolerance_scale, cfg.seed);
    let prop1_pass = prop1.violations == 0;

    let mut cases = Vec::new();
    for (i, &d) in [4usize, 6, 12].iter().enumerate() {
        let mut r = rng::derive(cfg.seed, &[0x7E40, d as u64]);
        let mut sigma = rng::normal_vec(&mut r, d).into_iter().map(f64::abs).collect::<Vec<_>>();
        sigma.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let spectrum = Spectrum::new(sigma)?;
        for k in 0..=d {
            cases.push(expected_losses(
                &spectrum,
                3 + i,
                k,
                1.3,
                0.7,
                rng::mix_seed(cfg.seed, &[d as u64, k as u64]),
            )?);
        }
    }
    let max_stability_rel_err =
        cases.iter().map(ExpectedLossCheck::stability_rel_err).fold(0.0, f64::max);
    let max_plasticity_rel_err =
        cases.iter().map(ExpectedLossCheck::plasticity_rel_err).fold(0.0, f64::max);
    let theorem_tol = 1e-8 * cfg.tolerance_scale;
    let theorem_pass =
        max_stability_rel_err <= theorem_tol && max_plasticity_rel_err <= theorem_tol;
    let theorem = TheoremReport { cases, max_stability_rel_err, max_plasticity_rel_err };

    let task = QuadraticTask::random(8, 6, 3.0, cfg.seed);
    let mut r = rng::derive(cfg.seed, &[0x1EAA]);
    let w = Matrix::new(8, 6, rng::normal_vec(&mut r, 48))?;
    let etas = [0.0, 1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4];
    let curve = quad_drift_curve(&task, &w, &etas, cfg.seed)?;
    let quad_slope = curve.loglog_slope();
    let mut quad_max_rel_err = 0.0f64;
    for (&eta, &measured) in curve.etas.iter().zip(&curve.drifts) {
        let exact = quad_drift_exact(&task, &w, eta, cfg.seed)?;
        if exact > 0.0 {
            quad_max_rel_err = quad_max_rel_err.max((measured - exact).abs() / exact);
        }
    }
    let zero_eta_drift = curve.drifts[0];
    let d1 = curve.drifts[1];
    let half = quad_drift_curve(&task, &w, &[etas[1] / 2.0], cfg.seed)?.drifts[0];
    let halving_ratio = d1 / half;

    let mut net = ToyNet::new(6, &[8, 6], crate::network::Activation::Tanh, cfg.seed);
    net.grow_head(3);
    let mut r = rng::derive(cfg.seed, &[0x1EAB]);
    let head = Matrix::new(3, 6, rng::normal_vec(&mut r, 18))?.scale(0.6);
    *net.head_w_mut().expect("head grown") = head;
    let x = Matrix::new(6, 16, rng::normal_vec(&mut r, 96))?;
    let y: Vec<usize> = (0..16).map(|i| i % 3).collect();
    let net_etas = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4];
    let net_curve = net_drift_curve(&net, &x, &y, &net_etas, cfg.seed)?;
    let net_slope = net_curve.loglog_slope();

    let slope_band = 0.1 * cfg.tolerance_scale;
    let lemma_pass = zero_eta_drift == 0.0
        && (quad_slope - 1.0).abs() <= slope_band
        && (halving_ratio - 2.0).abs() <= 0.2 * cfg.tolerance_scale;
    let lemma =
        LemmaReport { quad_slope, quad_max_rel_err, zero_eta_drift, halving_ratio, net_slope };

    Ok(TheoryReport {
        prop1,
        theorem,
        lemma,
        prop1_pass,
        theorem_pass,
        lemma_pass,
        passed: prop1_pass && theorem_pass && lemma_pass,
    })
}
