//! Random instance generators shared by tests, the verification suite and the CLI.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::cube::{CubeFunction, CubeMeasure};

/// Table with i.i.d. N(0, scale²) entries.
pub fn random_function<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> CubeFunction {
    CubeFunction::from_fn(n, |_| scale * rng.sample::<f64, _>(StandardNormal)).expect("valid dimension")
}

/// Measure whose log-density has i.i.d. N(0, scale²) entries.
pub fn random_measure<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> CubeMeasure {
    CubeMeasure::from_function(&random_function(n, scale, rng))
}

/// Random table rescaled to Lip(f) = 1.
pub fn random_lipschitz_function<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CubeFunction {
    let f = random_function(n, 1.0, rng);
    let l = f.lip();
    if l > 0.0 {
        f.scaled(1.0 / l)
    } else {
        f
    }
}

pub fn random_vector<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Uniform draws on [-1, 1].
pub fn uniform_signs<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
}
