//! Identity-covariance Gaussian mixtures on R^d (d ≤ 3): the reverse
//! log-Sobolev check, the tilt statement in one effective dimension, and the
//! Föllmer drift for mixture targets.
//!
//! The density of a mixture against γ only varies in the span of its centers,
//! so every integral is taken over that span with the orthogonal part
//! integrated out exactly.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::complexity::{estimate_from_samples, gaussian_draw, GwEstimate};
use crate::rng::{rng_for, stream};
use crate::{Error, Result};

pub const MAX_GAUSSIAN_DIM: usize = 3;
const WEIGHT_TOL: f64 = 1e-9;
const QUAD_TOL: f64 = 1e-6;
const SPAN_TOL: f64 = 1e-9;
const GRID_POINTS: usize = 64;
const GRID_ROUNDS: usize = 3;
const W2_NODES: usize = 2001;
pub const DEFAULT_NODES: usize = 161;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    centers: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawMixture {
    weights: Vec<f64>,
    centers: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Softmax weights of `a` written into `p`; returns log Σ e^{a_k}.
fn softmax(a: &[f64], p: &mut [f64]) -> f64 {
    let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (pk, &ak) in p.iter_mut().zip(a) {
        *pk = (ak - m).exp();
        s += *pk;
    }
    for pk in p.iter_mut() {
        *pk /= s;
    }
    m + s.ln()
}

impl GaussianMixture {
    /// Weights must be positive and sum to 1 within 1e-9; they are renormalized.
    pub fn new(weights: Vec<f64>, centers: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != centers.len() {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} centers",
                weights.len(),
                centers.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidParameter("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidParameter(format!("mixture weights sum to {total}, not 1")));
        }
        let d = centers[0].len();
        if d == 0 {
            return Err(Error::InvalidParameter("centers need a positive dimension".into()));
        }
        if d > MAX_GAUSSIAN_DIM {
            return Err(Error::DimensionTooLarge { n: d, max: MAX_GAUSSIAN_DIM });
        }
        if let Some(c) = centers.iter().find(|c| c.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: c.len() });
        }
        if centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("centers must be finite".into()));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Self { weights, centers })
    }

    pub fn single(theta: Vec<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![theta])
    }

    /// Equal-weight mixture of N(θ, I) and N(−θ, I).
    pub fn symmetric(theta: Vec<f64>) -> Result<Self> {
        let neg = theta.iter().map(|v| -v).collect();
        Self::new(vec![0.5, 0.5], vec![theta, neg])
    }

    /// Random mixture with `k` components, centers uniform in [−scale, scale]^d.
    pub fn random(d: usize, k: usize, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let centers = (0..k).map(|_| (0..d).map(|_| rng.random_range(-scale..=scale)).collect()).collect();
        Self::new(raw.iter().map(|w| w / s).collect(), centers)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawMixture = serde_json::from_str(text)?;
        Self::new(raw.weights, raw.centers)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mixture serializes")
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// f = log dν/dγ at x and ∇f = Σ p_k θ_k.
    pub fn f_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (f, p) = self.softmax_at(x, 1.0);
        let mut g = vec![0.0; self.dim()];
        for (pk, c) in p.iter().zip(&self.centers) {
            for (gi, ci) in g.iter_mut().zip(c) {
                *gi += pk * ci;
            }
        }
        (f, g)
    }

    /// Δf, the trace of the softmax covariance of the centers.
    pub fn laplacian(&self, x: &[f64]) -> f64 {
        let (_, p) = self.softmax_at(x, 1.0);
        let (_, g) = self.f_grad(x);
        let second: f64 = p.iter().zip(&self.centers).map(|(pk, c)| pk * norm2(c)).sum();
        (second - norm2(&g)).max(0.0)
    }

    fn softmax_at(&self, x: &[f64], t: f64) -> (f64, Vec<f64>) {
        let a: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.centers)
            .map(|(w, c)| w.ln() + dot(c, x) - 0.5 * t * norm2(c))
            .collect();
        let mut p = vec![0.0; a.len()];
        let lse = softmax(&a, &mut p);
        (lse, p)
    }

    /// ν_x ∝ e^{⟨x,y⟩} dν: centers θ_k + x, weights ∝ w_k e^{⟨θ_k,x⟩}.
    pub fn tilt(&self, x: &[f64]) -> Result<Self> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let a: Vec<f64> = self.weights.iter().zip(&self.centers).map(|(w, c)| w.ln() + dot(c, x)).collect();
        let mut q = vec![0.0; a.len()];
        softmax(&a, &mut q);
        let centers = self.centers.iter().map(|c| c.iter().zip(x).map(|(a, b)| a + b).collect()).collect();
        Self::new(q, centers)
    }

    /// Föllmer drift v(t,x) = ∇ log P_{1−t}[e^f](x), a softmax average of the
    /// centers with exponents log w_k + ⟨θ_k,x⟩ − t|θ_k|²/2.
    pub fn drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let (_, p) = self.softmax_at(x, t);
        let mut g = vec![0.0; self.dim()];
        for (pk, c) in p.iter().zip(&self.centers) {
            for (gi, ci) in g.iter_mut().zip(c) {
                *gi += pk * ci;
            }
        }
        g
    }

    /// Largest center norm.
    pub fn radius(&self) -> f64 {
        self.centers.iter().map(|c| norm2(c).sqrt()).fold(0.0, f64::max)
    }

    pub(crate) fn reduce(&self) -> Reduced {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let scale = self.radius().max(1.0);
        for c in &self.centers {
            let mut r = c.clone();
            for b in &basis {
                let a = dot(&r, b);
                for (ri, bi) in r.iter_mut().zip(b) {
                    *ri -= a * bi;
                }
            }
            let nr = norm2(&r).sqrt();
            if nr > SPAN_TOL * scale {
                basis.push(r.iter().map(|v| v / nr).collect());
            }
        }
        let coords = self.centers.iter().map(|c| basis.iter().map(|b| dot(c, b)).collect()).collect();
        Reduced { log_w: self.weights.iter().map(|w| w.ln()).collect(), coords, basis }
    }
}

/// The mixture written in an orthonormal basis of span{θ_k}.
#[derive(Clone, Debug)]
pub(crate) struct Reduced {
    log_w: Vec<f64>,
    coords: Vec<Vec<f64>>,
    basis: Vec<Vec<f64>>,
}

impl Reduced {
    pub(crate) fn rank(&self) -> usize {
        self.basis.len()
    }

    /// Writes softmax weights for exponents log w + ⟨c,z⟩ − t|c|²/2 into `p`.
    fn weights_at(&self, t: f64, z: &[f64], a: &mut [f64], p: &mut [f64]) -> f64 {
        for (k, c) in self.coords.iter().enumerate() {
            a[k] = self.log_w[k] + dot(c, z) - 0.5 * t * norm2(c);
        }
        softmax(a, p)
    }

    fn mean_into(&self, p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (pk, c) in p.iter().zip(&self.coords) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += pk * ci;
            }
        }
    }

    fn laplacian(&self, z: &[f64], a: &mut [f64], p: &mut [f64], g: &mut [f64]) -> f64 {
        self.weights_at(1.0, z, a, p);
        self.mean_into(p, g);
        let second: f64 = p.iter().zip(&self.coords).map(|(pk, c)| pk * norm2(c)).sum();
        second - norm2(g)
    }
}

/// Truncated trapezoid rule for E φ(Z), Z ~ N(0,1): `m` equispaced nodes on
/// [−10, 10] weighted by h·φ(z). Converges geometrically for integrands
/// analytic in a strip, which softmax terms are, with the strip width set by
/// the center spread.
#[derive(Clone, Debug)]
struct GridRule {
    z: Vec<f64>,
    w: Vec<f64>,
}

const GRID_HALF_WIDTH: f64 = 10.0;

impl GridRule {
    fn new(m: usize) -> Self {
        let m = m.max(3);
        let h = 2.0 * GRID_HALF_WIDTH / (m - 1) as f64;
        let c = h / (2.0 * std::f64::consts::PI).sqrt();
        let z: Vec<f64> = (0..m).map(|j| -GRID_HALF_WIDTH + h * j as f64).collect();
        let w = z.iter().map(|x| c * (-0.5 * x * x).exp()).collect();
        Self { z, w }
    }

    /// E φ(mean + scale·Z) for Z ~ N(0, I_r) on the tensor grid.
    fn expect(&self, mean: &[f64], scale: f64, mut phi: impl FnMut(&[f64]) -> f64) -> f64 {
        let r = mean.len();
        let m = self.z.len();
        let mut idx = vec![0usize; r];
        let mut y = mean.to_vec();
        let mut total = 0.0;
        loop {
            let mut w = 1.0;
            for j in 0..r {
                y[j] = mean[j] + scale * self.z[idx[j]];
                w *= self.w[idx[j]];
            }
            total += w * phi(&y);
            let mut j = 0;
            loop {
                if j == r {
                    return total;
                }
                idx[j] += 1;
                if idx[j] < m {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
    }
}

/// (I(ν), KL(ν‖γ)) on a tensor grid with `nodes` per axis, component by component.
pub fn fisher_and_kl(nu: &GaussianMixture, nodes: usize) -> (f64, f64) {
    let red = nu.reduce();
    let rule = GridRule::new(nodes);
    let k = nu.len();
    let r = red.rank();
    let (mut a, mut p, mut g) = (vec![0.0; k], vec![0.0; k], vec![0.0; r]);
    let (mut fisher, mut kl) = (0.0, 0.0);
    for (wk, c) in nu.weights.iter().zip(&red.coords) {
        let kk = rule.expect(c, 1.0, |z| red.weights_at(1.0, z, &mut a, &mut p));
        let fi = rule.expect(c, 1.0, |z| {
            red.weights_at(1.0, z, &mut a, &mut p);
            red.mean_into(&p, &mut g);
            norm2(&g)
        });
        fisher += wk * fi;
        kl += wk * kk;
    }
    (fisher, kl.max(0.0))
}

/// Gaussian width of conv{θ_k}. Exact when the centers are collinear
/// (std_error 0, samples 0), Monte Carlo over the vertices otherwise.
pub fn mixture_gw(nu: &GaussianMixture, samples: usize, seed: u64) -> Result<GwEstimate> {
    let red = nu.reduce();
    match red.rank() {
        0 => Ok(GwEstimate { mean: 0.0, std_error: 0.0, samples: 0, lower_estimate: false }),
        1 => {
            let xs: Vec<f64> = red.coords.iter().map(|c| c[0]).collect();
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let mean = (hi - lo) / (2.0 * std::f64::consts::PI).sqrt();
            Ok(GwEstimate { mean, std_error: 0.0, samples: 0, lower_estimate: false })
        }
        _ => {
            if samples < 2 {
                return Err(Error::InvalidParameter("at least two Gaussian samples are required".into()));
            }
            let d = nu.dim();
            let sups: Vec<f64> = (0..samples as u64)
                .into_par_iter()
                .map(|s| {
                    let g = gaussian_draw(d, seed, s);
                    nu.centers.iter().map(|c| dot(c, &g)).fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            Ok(estimate_from_samples(&sups))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplacianInfimum {
    pub value: f64,
    /// Minimizer in the reduced coordinates.
    pub point: Vec<f64>,
}

/// inf Δf over the box of radius max|θ_k| + 6 in the span, by a 64^r grid
/// refined three times around the running minimizer.
pub fn laplacian_infimum(nu: &GaussianMixture) -> LaplacianInfimum {
    let red = nu.reduce();
    let r = red.rank();
    if r == 0 {
        return LaplacianInfimum { value: 0.0, point: vec![] };
    }
    let k = nu.len();
    let (mut a, mut p, mut g) = (vec![0.0; k], vec![0.0; k], vec![0.0; r]);
    let mut center = vec![0.0; r];
    let mut half = nu.radius() + 6.0;
    let mut best = (f64::INFINITY, center.clone());
    let box_half = half;
    for _ in 0..=GRID_ROUNDS {
        let step = 2.0 * half / (GRID_POINTS - 1) as f64;
        let mut idx = vec![0usize; r];
        let mut z = vec![0.0; r];
        'grid: loop {
            for j in 0..r {
                z[j] = (center[j] - half + step * idx[j] as f64).clamp(-box_half, box_half);
            }
            let val = red.laplacian(&z, &mut a, &mut p, &mut g);
            if val < best.0 {
                best = (val, z.clone());
            }
            let mut j = 0;
            loop {
                if j == r {
                    break 'grid;
                }
                idx[j] += 1;
                if idx[j] < GRID_POINTS {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
        center = best.1.clone();
        half = 2.0 * step;
    }
    LaplacianInfimum { value: best.0, point: best.1 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsiReport {
    pub fisher: f64,
    pub kl: f64,
    pub gw: f64,
    pub gw_std_error: f64,
    pub inf_laplacian: f64,
    pub m_term: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// Slack granted to the comparison: 3σ of the width estimate plus 1e-9.
    pub tolerance: f64,
    pub satisfied: bool,
    pub converged: bool,
    pub span_dim: usize,
    pub nodes: usize,
}

fn lsi_rhs(gw: f64, fisher: f64, m: f64) -> f64 {
    2.0 * gw.max(0.0).powf(2.0 / 3.0) * fisher.max(0.0).cbrt() + m
}

/// I − 2KL against 2D^{2/3}I^{1/3} + max(−inf Δf, 0). Quadrature runs at
/// `nodes` and `2·nodes − 1` per axis (half the spacing); `converged` is false
/// when they differ by more than 1e-6.
pub fn reverse_lsi_check(nu: &GaussianMixture, nodes: usize, gw_samples: usize, seed: u64) -> Result<LsiReport> {
    if nodes == 0 {
        return Err(Error::InvalidParameter("quadrature needs at least one node".into()));
    }
    let (i1, k1) = fisher_and_kl(nu, nodes);
    let (fisher, kl) = fisher_and_kl(nu, 2 * nodes - 1);
    let converged = (i1 - fisher).abs() <= QUAD_TOL && (k1 - kl).abs() <= QUAD_TOL;
    let gw = mixture_gw(nu, gw_samples, seed)?;
    let inf = laplacian_infimum(nu);
    let m_term = (-inf.value).max(0.0);
    let lhs = fisher - 2.0 * kl;
    let rhs = lsi_rhs(gw.mean, fisher, m_term);
    let tolerance = lsi_rhs(gw.upper(3.0), fisher, m_term) - rhs + 1e-9;
    Ok(LsiReport {
        fisher,
        kl,
        gw: gw.mean,
        gw_std_error: gw.std_error,
        inf_laplacian: inf.value,
        m_term,
        lhs,
        rhs,
        tolerance,
        satisfied: lhs <= rhs + tolerance,
        converged,
        span_dim: nu.reduce().rank(),
        nodes: 2 * nodes - 1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltReport {
    pub r: f64,
    /// Effective dimension entering the √n/r factor.
    pub dimension: usize,
    pub x0: Vec<f64>,
    pub tr_grad_v: f64,
    pub v: Vec<f64>,
    /// Centroid of ν_{x0}.
    pub u: Vec<f64>,
    pub w2_squared: f64,
    pub gw: f64,
    pub inf_laplacian: f64,
    pub rhs: f64,
    pub slack: f64,
    pub satisfied: bool,
    pub converged: bool,
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Quantile of Σ q_k N(m_k, 1) at level Φ(z), solved in whichever tail keeps
/// the level away from 1.
fn mixture_quantile(q: &[f64], m: &[f64], z: f64) -> f64 {
    let lo_m = m.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi_m = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (z + lo_m, z + hi_m);
    if hi - lo < 1e-300 {
        return lo;
    }
    let upper = z > 0.0;
    let target = if upper { normal_cdf(-z) } else { normal_cdf(z) };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let below = if upper {
            // survival decreasing in y
            let s: f64 = q.iter().zip(m).map(|(qk, mk)| qk * normal_cdf(mk - mid)).sum();
            s > target
        } else {
            let c: f64 = q.iter().zip(m).map(|(qk, mk)| qk * normal_cdf(mid - mk)).sum();
            c < target
        };
        if below {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// W₂² between Σ q_k N(m_k, 1) and N(u, 1) on the line, through the quantile
/// coupling y = F⁻¹(Φ(z)) against u + z.
fn w2_squared_1d(q: &[f64], m: &[f64], u: f64, nodes: usize) -> f64 {
    let rule = GridRule::new(nodes);
    rule.expect(&[0.0], 1.0, |z| {
        let y = mixture_quantile(q, m, z[0]);
        (y - u - z[0]).powi(2)
    })
}

/// Scans x₀ = s·e over s ∈ [−r, r] on `grid` points, where e spans the line
/// of the centers, picks the minimizer of Tr ∇v (central differences), and
/// reports W₂(ν_{x₀}, γ_u)² against 2(√n/r)D − inf Δf with n = 1.
pub fn gaussian_tilt_search(nu: &GaussianMixture, r: f64, grid: usize) -> Result<TiltReport> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::InvalidParameter("tilt radius must be positive".into()));
    }
    if grid < 2 {
        return Err(Error::InvalidParameter("tilt scan needs at least two grid points".into()));
    }
    let red = nu.reduce();
    if red.rank() > 1 {
        return Err(Error::Unsupported("tilt search needs centers on one line through the origin".into()));
    }
    let d = nu.dim();
    let e: Vec<f64> = match red.basis.first() {
        Some(b) => b.clone(),
        None => {
            let mut e = vec![0.0; d];
            e[0] = 1.0;
            e
        }
    };
    let c: Vec<f64> = nu.centers.iter().map(|th| dot(th, &e)).collect();
    let log_w: Vec<f64> = nu.weights.iter().map(|w| w.ln()).collect();
    let tilt_weights = |s: f64| {
        let a: Vec<f64> = log_w.iter().zip(&c).map(|(lw, ck)| lw + ck * s).collect();
        let mut q = vec![0.0; a.len()];
        softmax(&a, &mut q);
        q
    };
    let v_at = |s: f64| -> f64 { tilt_weights(s).iter().zip(&c).map(|(qk, ck)| qk * ck).sum() };
    let h = 1e-4;
    let mut best = (f64::INFINITY, 0.0);
    for j in 0..grid {
        let s = -r + 2.0 * r * j as f64 / (grid - 1) as f64;
        let tr = (v_at(s + h) - v_at(s - h)) / (2.0 * h);
        if tr < best.0 {
            best = (tr, s);
        }
    }
    let (tr_grad_v, s0) = best;
    let q = tilt_weights(s0);
    let means: Vec<f64> = c.iter().map(|ck| ck + s0).collect();
    let v0 = v_at(s0);
    let u = s0 + v0;
    let w_a = w2_squared_1d(&q, &means, u, W2_NODES);
    let w_b = w2_squared_1d(&q, &means, u, 2 * W2_NODES - 1);
    let gw = mixture_gw(nu, 2, 0)?.mean;
    let inf = laplacian_infimum(nu).value;
    let rhs = 2.0 / r * gw - inf;
    let w2_squared = w_b.max(0.0);
    Ok(TiltReport {
        r,
        dimension: 1,
        x0: e.iter().map(|ei| s0 * ei).collect(),
        tr_grad_v,
        v: e.iter().map(|ei| v0 * ei).collect(),
        u: e.iter().map(|ei| u * ei).collect(),
        w2_squared,
        gw,
        inf_laplacian: inf,
        rhs,
        slack: rhs - w2_squared,
        satisfied: w2_squared <= rhs + 1e-9,
        converged: (w_a - w_b).abs() <= QUAD_TOL,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FollmerConfig {
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    pub check_times: Vec<f64>,
    /// Quadrature nodes per axis for the conditional covariance.
    pub nodes: usize,
    pub gw_samples: usize,
}

impl Default for FollmerConfig {
    fn default() -> Self {
        Self { dt: 1e-3, paths: 10_000, seed: 0, check_times: vec![0.25, 0.5, 0.75], nodes: 81, gw_samples: 20_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHRow {
    pub t: f64,
    pub mean: f64,
    pub std_error: f64,
    pub bound: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftMeanRow {
    pub t: f64,
    pub max_abs_dev: f64,
    pub max_z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsRow {
    /// Reduced-coordinate axis.
    pub axis: usize,
    pub statistic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FollmerStats {
    pub paths: usize,
    pub steps: usize,
    pub energy: f64,
    pub energy_std_error: f64,
    pub two_kl: f64,
    pub representation_z: f64,
    pub representation_ok: bool,
    pub gw: f64,
    pub m_term: f64,
    pub trace_h: Vec<TraceHRow>,
    pub drift_mean: Vec<DriftMeanRow>,
    pub martingale_ok: bool,
    pub ks: Vec<KsRow>,
    /// 5% critical value 1.358/√paths of the one-sample KS test.
    pub ks_critical: f64,
}

struct PathOut {
    energy: f64,
    trace_h: Vec<f64>,
    v_checks: Vec<Vec<f64>>,
    end: Vec<f64>,
}

/// E_{ν_{t,z}}|∇f|² − |v(t,z)|², with ν_{t,z} = Σ p_k N(z + (1−t)c_k, (1−t)I).
fn conditional_trace(red: &Reduced, rule: &GridRule, t: f64, z: &[f64]) -> f64 {
    let k = red.coords.len();
    let r = red.rank();
    let s = 1.0 - t;
    let (mut a, mut p, mut g) = (vec![0.0; k], vec![0.0; k], vec![0.0; r]);
    let mut pt = vec![0.0; k];
    red.weights_at(t, z, &mut a, &mut pt);
    let mut v = vec![0.0; r];
    red.mean_into(&pt, &mut v);
    let mut second = 0.0;
    for (pk, c) in pt.iter().zip(&red.coords) {
        let mean: Vec<f64> = z.iter().zip(c).map(|(zi, ci)| zi + s * ci).collect();
        second += pk
            * rule.expect(&mean, s.sqrt(), |y| {
                red.weights_at(1.0, y, &mut a, &mut p);
                red.mean_into(&p, &mut g);
                norm2(&g)
            });
    }
    (second - norm2(&v)).max(0.0)
}

fn simulate_one(red: &Reduced, cfg: &FollmerConfig, rule: &GridRule, checks: &[usize], steps: usize, index: u64) -> PathOut {
    let r = red.rank();
    let k = red.coords.len();
    let dt = 1.0 / steps as f64;
    let sq = dt.sqrt();
    let mut rng = rng_for(cfg.seed, stream::FOLLMER, index);
    let (mut a, mut p) = (vec![0.0; k], vec![0.0; k]);
    let mut z = vec![0.0; r];
    let mut v = vec![0.0; r];
    red.weights_at(0.0, &z, &mut a, &mut p);
    red.mean_into(&p, &mut v);
    let mut energy = 0.0;
    let mut trace_h = Vec::with_capacity(checks.len());
    let mut v_checks = Vec::with_capacity(checks.len() + 1);
    let mut next = 0;
    for j in 0..steps {
        while next < checks.len() && checks[next] == j {
            let t = j as f64 * dt;
            trace_h.push(conditional_trace(red, rule, t, &z));
            v_checks.push(v.clone());
            next += 1;
        }
        let prev = norm2(&v);
        for (zi, vi) in z.iter_mut().zip(&v) {
            let b: f64 = rng.sample(StandardNormal);
            *zi += vi * dt + sq * b;
        }
        let t = (j + 1) as f64 * dt;
        red.weights_at(t, &z, &mut a, &mut p);
        red.mean_into(&p, &mut v);
        energy += 0.5 * dt * (prev + norm2(&v));
    }
    v_checks.push(v);
    PathOut { energy, trace_h, v_checks, end: z }
}

/// Euler scheme for dX = dB + v(t,X)dt on [0,1] in the span of the centers.
pub fn gaussian_follmer_simulate(nu: &GaussianMixture, cfg: &FollmerConfig) -> Result<FollmerStats> {
    if !(cfg.dt > 0.0 && cfg.dt <= 0.1) {
        return Err(Error::InvalidParameter("dt must lie in (0, 0.1]".into()));
    }
    if cfg.paths < 2 {
        return Err(Error::InvalidParameter("at least two paths are required".into()));
    }
    if cfg.check_times.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::InvalidParameter("check times must lie in (0, 1)".into()));
    }
    let red = nu.reduce();
    let r = red.rank();
    let steps = (1.0 / cfg.dt).round().max(1.0) as usize;
    let mut order: Vec<(usize, f64)> =
        cfg.check_times.iter().map(|t| ((t * steps as f64).round() as usize, *t)).collect();
    order.sort_by(|a, b| a.0.cmp(&b.0));
    let checks: Vec<usize> = order.iter().map(|o| o.0).collect();
    let rule = GridRule::new(cfg.nodes.max(1));
    let outs: Vec<PathOut> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| simulate_one(&red, cfg, &rule, &checks, steps, i))
        .collect();
    let n = cfg.paths as f64;

    let energies: Vec<f64> = outs.iter().map(|o| o.energy).collect();
    let e = estimate_from_samples(&energies);
    let (_, kl) = fisher_and_kl(nu, DEFAULT_NODES);
    let two_kl = 2.0 * kl;
    let representation_z = if e.std_error > 0.0 { (e.mean - two_kl) / e.std_error } else { 0.0 };
    let representation_ok = (e.mean - two_kl).abs() <= 3.0 * e.std_error + 1e-9;

    let gw = mixture_gw(nu, cfg.gw_samples.max(2), cfg.seed)?;
    let m_term = (-laplacian_infimum(nu).value).max(0.0);
    let trace_h = order
        .iter()
        .enumerate()
        .map(|(c, (j, _))| {
            let vals: Vec<f64> = outs.iter().map(|o| o.trace_h[c]).collect();
            let est = estimate_from_samples(&vals);
            let t = *j as f64 / steps as f64;
            let bound = gw.upper(3.0) / t.sqrt() + m_term;
            TraceHRow { t, mean: est.mean, std_error: est.std_error, bound, ok: est.mean <= bound + 3.0 * est.std_error }
        })
        .collect();

    let mut v0 = vec![0.0; r];
    let (mut a, mut p) = (vec![0.0; nu.len()], vec![0.0; nu.len()]);
    red.weights_at(0.0, &vec![0.0; r], &mut a, &mut p);
    red.mean_into(&p, &mut v0);
    let mut times: Vec<f64> = order.iter().map(|(j, _)| *j as f64 / steps as f64).collect();
    times.push(1.0);
    let drift_mean: Vec<DriftMeanRow> = times
        .iter()
        .enumerate()
        .map(|(c, &t)| {
            let mut row = DriftMeanRow { t, max_abs_dev: 0.0, max_z: 0.0 };
            for i in 0..r {
                let vals: Vec<f64> = outs.iter().map(|o| o.v_checks[c][i] - v0[i]).collect();
                let est = estimate_from_samples(&vals);
                row.max_abs_dev = row.max_abs_dev.max(est.mean.abs());
                if est.std_error > 0.0 {
                    row.max_z = row.max_z.max(est.mean.abs() / est.std_error);
                }
            }
            row
        })
        .collect();
    let martingale_ok = drift_mean.iter().all(|row| row.max_z <= 3.0 || row.max_abs_dev <= 1e-12);

    let ks = (0..r)
        .map(|axis| {
            let mut xs: Vec<f64> = outs.iter().map(|o| o.end[axis]).collect();
            xs.sort_by(|a, b| a.total_cmp(b));
            let mut stat: f64 = 0.0;
            for (i, x) in xs.iter().enumerate() {
                let f: f64 = nu.weights.iter().zip(&red.coords).map(|(w, c)| w * normal_cdf(x - c[axis])).sum();
                stat = stat.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
            }
            KsRow { axis, statistic: stat }
        })
        .collect();

    Ok(FollmerStats {
        paths: cfg.paths,
        steps,
        energy: e.mean,
        energy_std_error: e.std_error,
        two_kl,
        representation_z,
        representation_ok,
        gw: gw.mean,
        m_term,
        trace_h,
        drift_mean,
        martingale_ok,
        ks,
        ks_critical: 1.358 / n.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_component_f_and_grad() {
        let nu = GaussianMixture::single(vec![0.7, -1.2]).unwrap();
        let (f, g) = nu.f_grad(&[0.3, 0.4]);
        assert_abs_diff_eq!(f, 0.7 * 0.3 - 1.2 * 0.4 - 0.5 * (0.49 + 1.44), epsilon = 1e-14);
        assert_abs_diff_eq!(g[0], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], -1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(nu.laplacian(&[5.0, -3.0]), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn symmetric_gradient_vanishes_at_origin() {
        let nu = GaussianMixture::symmetric(vec![1.5]).unwrap();
        assert_abs_diff_eq!(nu.f_grad(&[0.0]).1[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nu = GaussianMixture::random(2, 3, 2.0, &mut rng).unwrap();
        let h = 1e-5;
        for _ in 0..20 {
            let x = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let (_, g) = nu.f_grad(&x);
            let mut lap = 0.0;
            for i in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let (fp, gp) = nu.f_grad(&xp);
                let (fm, gm) = nu.f_grad(&xm);
                assert!(((fp - fm) / (2.0 * h) - g[i]).abs() < 1e-6);
                lap += (gp[i] - gm[i]) / (2.0 * h);
            }
            assert!((lap - nu.laplacian(&x)).abs() < 1e-6);
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let nu = GaussianMixture::from_json(r#"{"weights":[0.25,0.75],"centers":[[1,0],[0,2]]}"#).unwrap();
        assert_eq!(GaussianMixture::from_json(&nu.to_json()).unwrap(), nu);
        assert!(GaussianMixture::from_json(r#"{"weights":[0.5,0.6],"centers":[[1],[2]]}"#).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0; 4]]).is_err());
        assert!(GaussianMixture::new(vec![0.5, 0.5], vec![vec![0.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn single_component_equality_case() {
        let nu = GaussianMixture::single(vec![1.0, 2.0, -0.5]).unwrap();
        let rep = reverse_lsi_check(&nu, 41, 100, 1).unwrap();
        let s = 1.0 + 4.0 + 0.25;
        assert_abs_diff_eq!(rep.fisher, s, epsilon = 1e-10);
        assert_abs_diff_eq!(rep.kl, s / 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(rep.lhs, 0.0, epsilon = 1e-10);
        assert_eq!(rep.gw, 0.0);
        assert_eq!(rep.m_term, 0.0);
        assert_abs_diff_eq!(rep.rhs, 0.0, epsilon = 1e-12);
        assert!(rep.satisfied && rep.converged);
        assert_eq!(rep.span_dim, 1);
    }

    /// Direct 1D oracle: trapezoid over a wide window of the mixture density.
    fn trapezoid_fisher_kl(nu: &GaussianMixture) -> (f64, f64) {
        let n = 200_000;
        let (lo, hi) = (-20.0, 20.0);
        let h = (hi - lo) / n as f64;
        let (mut fi, mut kl) = (0.0, 0.0);
        for i in 0..=n {
            let x = lo + h * i as f64;
            let dens: f64 = nu
                .weights()
                .iter()
                .zip(nu.centers())
                .map(|(w, c)| w * (-(x - c[0]).powi(2) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt())
                .sum();
            let (f, g) = nu.f_grad(&[x]);
            let wt = if i == 0 || i == n { 0.5 } else { 1.0 };
            fi += wt * h * dens * g[0] * g[0];
            kl += wt * h * dens * f;
        }
        (fi, kl)
    }

    #[test]
    fn quadrature_matches_direct_integration() {
        let nu = GaussianMixture::new(vec![0.3, 0.7], vec![vec![-1.0], vec![2.0]]).unwrap();
        let (i, k) = fisher_and_kl(&nu, DEFAULT_NODES);
        let (io, ko) = trapezoid_fisher_kl(&nu);
        assert_abs_diff_eq!(i, io, epsilon = 1e-8);
        assert_abs_diff_eq!(k, ko, epsilon = 1e-8);
        // adaptive quadrature of the same integrals (scipy quad, epsabs 1e-13)
        assert_abs_diff_eq!(i, 2.702440965270401, epsilon = 1e-9);
        assert_abs_diff_eq!(k, 1.0891007001108641, epsilon = 1e-9);
    }

    #[test]
    fn symmetric_mixture_satisfies_reverse_lsi() {
        let nu = GaussianMixture::symmetric(vec![1.0]).unwrap();
        let rep = reverse_lsi_check(&nu, DEFAULT_NODES, 100, 1).unwrap();
        assert!(rep.converged && rep.satisfied);
        assert!(rep.fisher >= 2.0 * rep.kl - 1e-9);
        assert_abs_diff_eq!(rep.gw, 2.0 / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn random_mixtures_satisfy_reverse_lsi() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..20 {
            let d = 1 + i % 2;
            let k = 2 + i % 3;
            let nu = GaussianMixture::random(d, k, 2.5, &mut rng).unwrap();
            let rep = reverse_lsi_check(&nu, DEFAULT_NODES, 4000, i as u64).unwrap();
            assert!(rep.converged, "{rep:?}");
            assert!(rep.satisfied, "{rep:?}");
            assert!(rep.fisher >= 2.0 * rep.kl - 1e-9);
        }
    }

    #[test]
    fn gw_exact_in_one_dimension_matches_monte_carlo() {
        let nu = GaussianMixture::new(vec![0.2, 0.3, 0.5], vec![vec![1.0, 1.0], vec![-0.5, -0.5], vec![2.0, 2.0]]).unwrap();
        let exact = mixture_gw(&nu, 2, 0).unwrap();
        let spread = 2.5 * 2f64.sqrt();
        assert_abs_diff_eq!(exact.mean, spread / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-12);
        let d = nu.dim();
        let sups: Vec<f64> = (0..40_000u64)
            .map(|s| {
                let g = gaussian_draw(d, 5, s);
                nu.centers().iter().map(|c| dot(c, &g)).fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let mc = estimate_from_samples(&sups);
        assert!((mc.mean - exact.mean).abs() < 4.0 * mc.std_error);
    }

    #[test]
    fn laplacian_infimum_is_nonnegative_and_small() {
        let nu = GaussianMixture::new(vec![0.4, 0.6], vec![vec![1.0, 0.0], vec![0.0, 1.5]]).unwrap();
        let inf = laplacian_infimum(&nu);
        assert!(inf.value >= 0.0);
        assert!(inf.value < 1e-3);
    }

    #[test]
    fn gradient_stays_in_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let nu = GaussianMixture::random(3, 4, 2.0, &mut rng).unwrap();
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-8.0..8.0)).collect();
            let (_, g) = nu.f_grad(&x);
            let u: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let support = nu.centers().iter().map(|c| dot(c, &u)).fold(f64::NEG_INFINITY, f64::max);
            assert!(dot(&g, &u) <= support + 1e-9);
        }
    }

    #[test]
    fn tilt_of_single_component_is_gaussian() {
        let nu = GaussianMixture::single(vec![0.0, 1.3]).unwrap();
        let rep = gaussian_tilt_search(&nu, 1.0, 11).unwrap();
        assert_abs_diff_eq!(rep.w2_squared, 0.0, epsilon = 1e-10);
        assert_eq!(rep.gw, 0.0);
        assert!(rep.satisfied);
        assert!(rep.rhs >= -1e-12);
    }

    #[test]
    fn tilt_search_symmetric_mixture() {
        let nu = GaussianMixture::symmetric(vec![1.0]).unwrap();
        let rep = gaussian_tilt_search(&nu, 1.0, 41).unwrap();
        assert!(rep.converged);
        assert!(rep.satisfied, "{rep:?}");
        // Tr ∇v is the tilted softmax variance, 1/cosh²(s) here, smallest at |s| = r
        assert_abs_diff_eq!(rep.x0[0].abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.tr_grad_v, 1.0 / 1f64.cosh().powi(2), epsilon = 1e-7);
        let tilted = nu.tilt(&rep.x0).unwrap();
        let centroid: f64 = tilted.weights().iter().zip(tilted.centers()).map(|(w, c)| w * c[0]).sum();
        assert_abs_diff_eq!(centroid, rep.u[0], epsilon = 1e-12);
    }

    #[test]
    fn tilt_rejects_spread_centers() {
        let nu = GaussianMixture::new(vec![0.5, 0.5], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(gaussian_tilt_search(&nu, 1.0, 5), Err(Error::Unsupported(_))));
    }

    #[test]
    fn w2_of_shifted_gaussian() {
        // N(1,1) against N(0,1): the quantile coupling is a shift
        assert_abs_diff_eq!(w2_squared_1d(&[1.0], &[1.0], 0.0, 201), 1.0, epsilon = 1e-12);
        // two-point mixture against N(0,1); a midpoint rule in the level s
        // and scipy's adaptive quad (1.6465019275956) serve as oracles
        let (q, m) = ([0.5, 0.5], [-2.0, 2.0]);
        let n = 200_000;
        let mut direct = 0.0;
        for i in 0..n {
            let s = (i as f64 + 0.5) / n as f64;
            let z = statrs::distribution::ContinuousCDF::inverse_cdf(&statrs::distribution::Normal::standard(), s);
            direct += (mixture_quantile(&q, &m, z) - z).powi(2) / n as f64;
        }
        assert_abs_diff_eq!(w2_squared_1d(&q, &m, 0.0, W2_NODES), direct, epsilon = 1e-4);
        assert_abs_diff_eq!(w2_squared_1d(&q, &m, 0.0, W2_NODES), 1.6465019275956, epsilon = 1e-9);
    }

    #[test]
    fn follmer_single_component_representation_exact() {
        let nu = GaussianMixture::single(vec![1.5]).unwrap();
        let cfg = FollmerConfig { dt: 0.01, paths: 200, seed: 4, ..Default::default() };
        let st = gaussian_follmer_simulate(&nu, &cfg).unwrap();
        assert_abs_diff_eq!(st.energy, 2.25, epsilon = 1e-12);
        assert_abs_diff_eq!(st.two_kl, 2.25, epsilon = 1e-12);
        assert!(st.representation_ok);
        assert!(st.trace_h.iter().all(|row| row.mean.abs() < 1e-12));
    }

    #[test]
    fn follmer_symmetric_mixture_statistics() {
        let nu = GaussianMixture::symmetric(vec![2.0]).unwrap();
        let cfg = FollmerConfig { dt: 2e-3, paths: 4000, seed: 7, ..Default::default() };
        let st = gaussian_follmer_simulate(&nu, &cfg).unwrap();
        assert!(st.representation_ok, "{st:?}");
        assert!(st.trace_h.iter().all(|row| row.ok), "{st:?}");
        assert!(st.martingale_ok, "{st:?}");
        assert!(st.ks[0].statistic < 2.0 * st.ks_critical, "{st:?}");
    }
}
