//! Gaussian-width estimates of gradient sets and analytic complexity bounds.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::{CubeFunction, CubeMeasure};
use crate::graphs::SimpleGraph;
use crate::ising::validate_coupling;
use crate::rng::{rng_for, stream};
use crate::{Error, Result};

/// Finite set of vectors in R^dim, always containing the zero vector.
#[derive(Clone, Debug)]
pub struct GradientSet {
    dim: usize,
    rows: Vec<f64>,
}

fn key(row: &[f64]) -> Vec<u64> {
    // -0.0 and 0.0 hash alike
    row.iter().map(|v| (v + 0.0).to_bits()).collect()
}

impl GradientSet {
    /// Deduplicates rows and injects the zero vector.
    pub fn from_rows(dim: usize, data: &[f64]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("gradient set needs a positive dimension".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch { expected: dim, got: data.len() % dim });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("gradient vectors must be finite".into()));
        }
        let mut seen = HashSet::new();
        let mut rows = Vec::new();
        let zero = vec![0.0; dim];
        for row in std::iter::once(zero.as_slice()).chain(data.chunks_exact(dim)) {
            if seen.insert(key(row)) {
                rows.extend_from_slice(row);
            }
        }
        Ok(Self { dim, rows })
    }

    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let dim = vectors.first().map(|v| v.len()).ok_or_else(|| {
            Error::InvalidParameter("explicit gradient list is empty; its dimension is unknown".into())
        })?;
        if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
        }
        Self::from_rows(dim, &vectors.concat())
    }

    /// Materializes an oracle vertex ↦ gradient over `count` vertices.
    pub fn from_oracle(dim: usize, count: usize, oracle: impl Fn(usize) -> Vec<f64>) -> Result<Self> {
        let mut data = Vec::with_capacity(dim * count);
        for v in 0..count {
            let g = oracle(v);
            if g.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: g.len() });
            }
            data.extend(g);
        }
        Self::from_rows(dim, &data)
    }

    /// {∇f(y)} ∪ {0}.
    pub fn from_cube_function(f: &CubeFunction) -> Self {
        Self::from_rows(f.n(), &f.gradient_table()).expect("finite gradients")
    }

    /// {g_ν(y)} ∪ {0}.
    pub fn from_g_map(nu: &CubeMeasure) -> Self {
        Self::from_rows(nu.n(), &nu.g_table()).expect("finite g map")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of distinct vectors, including zero.
    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks_exact(self.dim)
    }

    pub fn union(&self, other: &GradientSet) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let mut data = self.rows.clone();
        data.extend_from_slice(&other.rows);
        Self::from_rows(self.dim, &data)
    }

    /// sup over the set of ⟨x, γ⟩; never negative.
    pub fn sup(&self, gamma: &[f64]) -> f64 {
        self.vectors()
            .map(|r| r.iter().zip(gamma).map(|(a, b)| a * b).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn sup_subsample<R: Rng>(&self, gamma: &[f64], k: usize, rng: &mut R) -> f64 {
        let m = self.len();
        (0..k)
            .map(|_| {
                let r = &self.rows[rng.random_range(0..m) * self.dim..][..self.dim];
                r.iter().zip(gamma).map(|(a, b)| a * b).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GwEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
    /// Set when the sup was taken over a vertex subsample (biased low).
    #[serde(default)]
    pub lower_estimate: bool,
}

impl GwEstimate {
    /// mean + k·std_error.
    pub fn upper(&self, k: f64) -> f64 {
        self.mean + k * self.std_error
    }
}

/// Standard Gaussian vector number `index` of the width stream for `seed`.
pub fn gaussian_draw(dim: usize, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, stream::GAUSSIAN_WIDTH, index);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Per-draw sups; draws are shared between sets of equal dimension and seed.
pub fn gw_sups(set: &GradientSet, samples: usize, seed: u64) -> Vec<f64> {
    (0..samples as u64)
        .into_par_iter()
        .map(|s| set.sup(&gaussian_draw(set.dim, seed, s)))
        .collect()
}

pub fn estimate_from_samples(values: &[f64]) -> GwEstimate {
    let k = values.len();
    let mean = values.iter().sum::<f64>() / k as f64;
    let var = if k > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64
    } else {
        0.0
    };
    GwEstimate { mean, std_error: (var / k as f64).sqrt(), samples: k, lower_estimate: false }
}

/// Mean and standard error of paired differences a − b.
pub fn paired_difference(a: &[f64], b: &[f64]) -> GwEstimate {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    estimate_from_samples(&d)
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < 2 {
        return Err(Error::InvalidParameter("at least two Gaussian samples are required".into()));
    }
    Ok(())
}

pub fn gw_monte_carlo(set: &GradientSet, samples: usize, seed: u64) -> Result<GwEstimate> {
    check_samples(samples)?;
    Ok(estimate_from_samples(&gw_sups(set, samples, seed)))
}

/// Sup over `k` random members per draw; reported as a lower estimate.
pub fn gw_monte_carlo_subsampled(set: &GradientSet, samples: usize, seed: u64, k: usize) -> Result<GwEstimate> {
    check_samples(samples)?;
    if k == 0 {
        return Err(Error::InvalidParameter("subsample size must be positive".into()));
    }
    let sups: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let gamma = gaussian_draw(set.dim, seed, s);
            let mut rng = rng_for(seed, stream::GAUSSIAN_WIDTH ^ 0xff, s);
            set.sup_subsample(&gamma, k, &mut rng)
        })
        .collect();
    let mut e = estimate_from_samples(&sups);
    e.lower_estimate = true;
    Ok(e)
}

/// Monte-Carlo gradient complexity over the exhaustively enumerated gradient set.
pub fn complexity_of(f: &CubeFunction, samples: usize, seed: u64) -> Result<GwEstimate> {
    gw_monte_carlo(&GradientSet::from_cube_function(f), samples, seed)
}

/// |E(H)|·N^{3/2}.
pub fn subgraph_complexity_bound(h: &SimpleGraph, n_vertices: usize) -> Result<f64> {
    if n_vertices < h.vertex_count() {
        return Err(Error::InvalidParameter(format!(
            "N = {n_vertices} is smaller than the pattern's {} vertices",
            h.vertex_count()
        )));
    }
    Ok(h.edge_count() as f64 * (n_vertices as f64).powf(1.5))
}

pub(crate) fn row_sum_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// √(n(Tr A² + max bᵢ²)).
pub fn ising_complexity_bound(a: &DMatrix<f64>, b: &[f64]) -> Result<f64> {
    validate_coupling(a, b)?;
    let n = b.len() as f64;
    let tr: f64 = a.iter().map(|v| v * v).sum();
    let bmax = b.iter().fold(0.0f64, |m, v| m.max(v * v));
    Ok((n * (tr + bmax)).sqrt())
}

/// U(A) + max |bᵢ|.
pub fn ising_lip_bound(a: &DMatrix<f64>, b: &[f64]) -> Result<f64> {
    validate_coupling(a, b)?;
    Ok(row_sum_norm(a) + b.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::ising::IsingModel;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_set_has_zero_width() {
        let k = GradientSet::from_vectors(&[vec![0.0, 0.0]]).unwrap();
        assert_eq!(k.len(), 1);
        let e = gw_monte_carlo(&k, 100, 1).unwrap();
        assert_eq!((e.mean, e.std_error), (0.0, 0.0));
    }

    #[test]
    fn symmetric_segment_gives_half_normal_mean() {
        let k = GradientSet::from_vectors(&[vec![1.0], vec![-1.0]]).unwrap();
        let e = gw_monte_carlo(&k, 40_000, 3).unwrap();
        assert!((e.mean - (2.0 / PI).sqrt()).abs() < 3.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn constant_and_linear_complexity() {
        let c = CubeFunction::constant(5, 2.0).unwrap();
        let e = complexity_of(&c, 50, 1).unwrap();
        assert_eq!(e.mean, 0.0);
        let theta = [0.6, -0.8, 0.0];
        let f = CubeFunction::linear(&theta).unwrap();
        let e = complexity_of(&f, 40_000, 2).unwrap();
        // E max(⟨θ,Γ⟩, 0) = |θ| / √(2π)
        let want = 1.0 / (2.0 * PI).sqrt();
        assert!((e.mean - want).abs() < 3.0 * e.std_error, "{e:?} vs {want}");
    }

    #[test]
    fn analytic_bound_examples() {
        assert_abs_diff_eq!(subgraph_complexity_bound(&SimpleGraph::complete(3), 100).unwrap(), 3000.0, epsilon = 1e-9);
        assert_abs_diff_eq!(subgraph_complexity_bound(&SimpleGraph::edge(), 4).unwrap(), 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(subgraph_complexity_bound(&SimpleGraph::complete(4), 9).unwrap(), 162.0, epsilon = 1e-9);
        assert!(subgraph_complexity_bound(&SimpleGraph::complete(4), 3).is_err());

        let z = DMatrix::zeros(3, 3);
        assert_eq!(ising_complexity_bound(&z, &[0.0; 3]).unwrap(), 0.0);
        assert_eq!(ising_lip_bound(&z, &[0.0; 3]).unwrap(), 0.0);
        let cw = IsingModel::curie_weiss(10, 1.0, 0.0);
        assert_abs_diff_eq!(ising_complexity_bound(cw.a(), cw.b()).unwrap(), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ising_lip_bound(cw.a(), cw.b()).unwrap(), 0.9, epsilon = 1e-12);
        let z4 = DMatrix::zeros(4, 4);
        assert_abs_diff_eq!(ising_complexity_bound(&z4, &[2.0, 0.0, 0.0, 0.0]).unwrap(), 4.0, epsilon = 1e-12);
        let mut d = DMatrix::zeros(2, 2);
        d[(1, 1)] = 0.5;
        assert!(ising_complexity_bound(&d, &[0.0; 2]).is_err());
    }

    #[test]
    fn lip_bound_matches_row_sums() {
        let mut rng = rng_for(4, stream::TEST, 30);
        let m = IsingModel::random(4, 1.0, 1.0, &mut rng);
        let want = (0..4)
            .map(|i| (0..4).map(|j| m.a()[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
            + m.b().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert_abs_diff_eq!(ising_lip_bound(m.a(), m.b()).unwrap(), want, epsilon = 1e-14);
        let f = m.to_cube_function().unwrap();
        assert!(f.lip() <= want + 1e-12);
    }

    #[test]
    fn subsample_is_labelled_and_not_above_exhaustive() {
        let mut rng = rng_for(5, stream::TEST, 30);
        let f = instances::random_function(8, 1.0, &mut rng);
        let set = GradientSet::from_cube_function(&f);
        let full = gw_monte_carlo(&set, 200, 9).unwrap();
        let sub = gw_monte_carlo_subsampled(&set, 200, 9, 16).unwrap();
        assert!(sub.lower_estimate && !full.lower_estimate);
        assert!(sub.mean <= full.mean + 1e-12);
    }

    #[test]
    fn ising_complexity_below_bound() {
        let mut rng = rng_for(6, stream::TEST, 30);
        for k in 0..5 {
            let m = IsingModel::random(6 + k, 1.0, 0.5, &mut rng);
            let e = complexity_of(&m.to_cube_function().unwrap(), 300, k as u64).unwrap();
            assert!(e.mean <= ising_complexity_bound(m.a(), m.b()).unwrap() + 3.0 * e.std_error);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = rng_for(7, stream::TEST, 30);
        let f = instances::random_function(5, 1.0, &mut rng);
        assert_eq!(complexity_of(&f, 64, 11).unwrap(), complexity_of(&f, 64, 11).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prop_monotone_under_inclusion(seed in any::<u64>(), dim in 1usize..6, extra in 1usize..5) {
            let mut rng = rng_for(seed, stream::TEST, 31);
            let base: Vec<Vec<f64>> = (0..4).map(|_| instances::random_vector(dim, 1.0, &mut rng)).collect();
            let more: Vec<Vec<f64>> = (0..extra).map(|_| instances::random_vector(dim, 1.0, &mut rng)).collect();
            let a = GradientSet::from_vectors(&base).unwrap();
            let b = a.union(&GradientSet::from_vectors(&more).unwrap()).unwrap();
            let sa = gw_sups(&a, 20, seed);
            let sb = gw_sups(&b, 20, seed);
            for (x, y) in sa.iter().zip(&sb) {
                prop_assert!(y >= x);
                prop_assert!(*x >= 0.0);
            }
        }
    }
}
