//! Shared helpers for the benchmark targets.

use num_complex::Complex64;
use orthoris_core::solvers::ChannelTriple;
use orthoris_core::CMat;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) / std::f64::consts::SQRT_2
    })
}

pub fn gaussian_triple(
    rng: &mut ChaCha8Rng,
    m: usize,
    k: usize,
    n: usize,
    eta: f64,
) -> ChannelTriple {
    ChannelTriple::new(
        gaussian_matrix(rng, m, k) * Complex64::new(eta.sqrt(), 0.0),
        gaussian_matrix(rng, m, n),
        gaussian_matrix(rng, n, k),
    )
    .expect("consistent dimensions")
}
