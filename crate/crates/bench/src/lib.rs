//! Shared fixtures for the criterion benchmarks.

use splitlora::linalg::Matrix;
use splitlora::network::{Activation, ToyNet};
use splitlora::rng;
use splitlora::subspace::Spectrum;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::derive(seed, &[0xBE7C]);
    Matrix::new(rows, cols, rng::normal_vec(&mut r, rows * cols)).expect("finite draws")
}

/// Exponentially decaying spectrum of length `d`.
pub fn decaying_spectrum(d: usize) -> Spectrum {
    let sigma: Vec<f64> = (0..d).map(|i| (-(i as f64) / 25.0).exp()).collect();
    Spectrum::new(sigma).expect("sorted nonnegative")
}

/// Small classifier with a trained-looking head, ready for backward passes.
pub fn bench_net(seed: u64) -> (ToyNet, Matrix, Vec<usize>) {
    let mut net = ToyNet::new(32, &[64, 64, 64], Activation::Tanh, seed);
    net.grow_head(4);
    let mut r = rng::derive(seed, &[0xBE7D]);
    *net.head_w_mut().expect("head grown") =
        Matrix::new(4, 64, rng::normal_vec(&mut r, 256)).expect("finite").scale(0.3);
    let x = Matrix::new(32, 64, rng::normal_vec(&mut r, 32 * 64)).expect("finite");
    let y: Vec<usize> = (0..64).map(|i| i % 4).collect();
    (net, x, y)
}
