//! Discrete stochastic localization: the stopped SDE dX = σ^{1/2}dB + σ v(X) dt
//! on the solid cube, exact conditional moments along its paths, and the
//! tilt-mixture decomposition obtained by stopping it.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexity::{gw_monte_carlo, GradientSet};
use crate::cube::{
    eta, extend, extend_grad, log_sum_exp, num_vertices, spin, CubeMeasure, FoldWork, Vertex,
};
use crate::rng::{rng_for, stream};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Run until every coordinate is absorbed at ±1 (or the horizon).
    Absorption,
    /// Stop at T_ε.
    TEps,
    /// Stop at τ = (first check with Tr(σ^{1/2}H_t) ≤ 16αGW/ε) ∧ T_ε; needs `gw`.
    Tau,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SdeConfig {
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    pub eps: f64,
    pub alpha: f64,
    /// Conditional moments are evaluated every `check_every` steps.
    pub check_every: usize,
    pub stop: StopRule,
    /// Gaussian width of {g_ν(y)} used in the τ threshold.
    pub gw: Option<f64>,
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_max: 50.0,
            seed: 0,
            eps: 1.0 / 32.0,
            alpha: 2.0,
            check_every: 10,
            stop: StopRule::Absorption,
            gw: None,
        }
    }
}

impl SdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::InvalidParameter(format!("dt = {} must lie in (0, 0.1]", self.dt)));
        }
        if !(self.eps > 0.0 && self.eps < 1.0 / 16.0) {
            return Err(Error::InvalidParameter(format!("eps = {} must lie in (0, 1/16)", self.eps)));
        }
        if !(self.alpha > 1.0) {
            return Err(Error::InvalidParameter("alpha must exceed 1".into()));
        }
        if !(self.t_max > 0.0) || self.check_every == 0 {
            return Err(Error::InvalidParameter("need t_max > 0 and check_every >= 1".into()));
        }
        if self.stop == StopRule::Tau && !self.gw.is_some_and(|g| g.is_finite() && g >= 0.0) {
            return Err(Error::InvalidParameter("the tau stop rule needs a Gaussian width".into()));
        }
        Ok(())
    }

    /// 16αGW/ε when a width is available.
    pub fn threshold(&self) -> Option<f64> {
        self.gw.map(|g| 16.0 * self.alpha * g / self.eps)
    }
}

/// Diagonal of σ(x, t): 1 inside (−1/2, 1/2) before time 1, inside (−1, 1) after.
pub fn sigma_diag(x: &[f64], t: f64) -> Vec<bool> {
    let b = bound(t);
    x.iter().map(|v| v.abs() < b).collect()
}

#[inline]
fn bound(t: f64) -> f64 {
    if t < 1.0 {
        0.5
    } else {
        1.0
    }
}

fn eta_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v.atanh().powi(2)).sum::<f64>().sqrt()
}

/// Law of X_∞ given X_t = x: y ↦ w(x,y)e^{f(y)}/h(x).
pub fn conditional_law(nu: &CubeMeasure, x: &[f64]) -> Result<CubeMeasure> {
    check_x(nu, x)?;
    let lw = log_weights(x);
    let ld: Vec<f64> = lw.iter().zip(nu.log_density()).map(|(a, b)| a + b).collect();
    if ld.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::ZeroMass);
    }
    CubeMeasure::from_log_density(nu.n(), ld)
}

fn check_x(nu: &CubeMeasure, x: &[f64]) -> Result<()> {
    if x.len() != nu.n() {
        return Err(Error::DimensionMismatch { expected: nu.n(), got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
        return Err(Error::InvalidParameter("point must lie in [-1,1]^n".into()));
    }
    Ok(())
}

/// log w(x, y) for all y, built one coordinate at a time.
fn log_weights(x: &[f64]) -> Vec<f64> {
    let mut lw = vec![0.0; num_vertices(x.len())];
    for (i, &xi) in x.iter().enumerate() {
        let (lm, lp) = (((1.0 - xi) / 2.0).ln(), ((1.0 + xi) / 2.0).ln());
        let len = 1 << i;
        for j in 0..len {
            let base = lw[j];
            lw[j] = base + lm;
            lw[j + len] = base + lp;
        }
    }
    lw
}

/// Exact conditional quantities at a point of the solid cube.
#[derive(Clone, Debug)]
pub struct ConditionalMoments {
    pub law: Vec<f64>,
    /// g_t = Σ p(y) g(y).
    pub g: Vec<f64>,
    /// q(x)/h(x) from the harmonic extensions.
    pub g_harmonic: Vec<f64>,
    /// v_t = Σ p(y) v(y).
    pub v: Vec<f64>,
    /// H_t = Cov(g_∞ | x).
    pub h: DMatrix<f64>,
    /// A_t = E[(g_∞ − g_t)(v_∞ − v_t)ᵀ | x].
    pub a: DMatrix<f64>,
    /// Γ_t = ∇q(x)/h(x) − g_t v_tᵀ, with entry (j, i) = ∂_i q_j / h − g_j v_i.
    pub gamma: DMatrix<f64>,
}

impl ConditionalMoments {
    /// Tr(σ^{1/2} M) for a 0/1 diagonal σ.
    pub fn masked_trace(m: &DMatrix<f64>, sigma: &[bool]) -> f64 {
        sigma.iter().enumerate().filter(|(_, s)| **s).map(|(i, _)| m[(i, i)]).sum()
    }
}

/// Per-measure tables reused at every visited state.
pub struct Localizer<'a> {
    nu: &'a CubeMeasure,
    g: Vec<f64>,
    v: Vec<f64>,
}

impl<'a> Localizer<'a> {
    pub fn new(nu: &'a CubeMeasure) -> Self {
        let n = nu.n();
        let ld = nu.log_density();
        let mut v = vec![0.0; n * ld.len()];
        for (y, row) in v.chunks_exact_mut(n).enumerate() {
            if ld[y] == f64::NEG_INFINITY {
                continue;
            }
            for (i, r) in row.iter_mut().enumerate() {
                let bit = 1 << i;
                *r = 0.5 * ((ld[y | bit] - ld[y]).exp() - (ld[y & !bit] - ld[y]).exp());
            }
        }
        Self { nu, g: nu.g_table(), v }
    }

    pub fn measure(&self) -> &CubeMeasure {
        self.nu
    }

    /// v_ν at a vertex.
    pub fn vertex_v(&self, y: Vertex) -> &[f64] {
        let n = self.nu.n();
        &self.v[y * n..(y + 1) * n]
    }

    pub fn moments(&self, x: &[f64]) -> Result<ConditionalMoments> {
        check_x(self.nu, x)?;
        let n = self.nu.n();
        let size = num_vertices(n);
        let ld = self.nu.log_density();
        let lw = log_weights(x);
        let lp: Vec<f64> = lw.iter().zip(ld).map(|(a, b)| a + b).collect();
        let lz = log_sum_exp(&lp);
        if lz == f64::NEG_INFINITY {
            return Err(Error::ZeroMass);
        }
        let law: Vec<f64> = lp.iter().map(|v| (v - lz).exp()).collect();
        let mut g = vec![0.0; n];
        let mut v = vec![0.0; n];
        for (y, &p) in law.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for i in 0..n {
                g[i] += p * self.g[y * n + i];
                v[i] += p * self.v[y * n + i];
            }
        }
        let mut h = DMatrix::zeros(n, n);
        let mut a = DMatrix::zeros(n, n);
        let mut dg = vec![0.0; n];
        let mut dv = vec![0.0; n];
        for (y, &p) in law.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for i in 0..n {
                dg[i] = self.g[y * n + i] - g[i];
                dv[i] = self.v[y * n + i] - v[i];
            }
            for i in 0..n {
                let pi = p * dg[i];
                for j in 0..n {
                    h[(i, j)] += pi * dg[j];
                    a[(i, j)] += pi * dv[j];
                }
            }
        }

        // ∂_i w(x, y) = (y_i / 2) Π_{k≠i} (1 + x_k y_k)/2, evaluated in log form
        let factor = |k: usize, y: Vertex| -> f64 {
            let s = spin(y, k);
            ((1.0 + x[k] * s) / 2.0).ln()
        };
        let mut gamma = DMatrix::zeros(n, n);
        for y in 0..size {
            if ld[y] == f64::NEG_INFINITY {
                continue;
            }
            let mut fsum = ld[y];
            let mut zeros = 0;
            let mut zidx = 0;
            for k in 0..n {
                let l = factor(k, y);
                if l == f64::NEG_INFINITY {
                    zeros += 1;
                    zidx = k;
                } else {
                    fsum += l;
                }
            }
            for i in 0..n {
                let lwi = match zeros {
                    0 => fsum - factor(i, y),
                    1 if zidx == i => fsum,
                    _ => continue,
                };
                let c = 0.5 * spin(y, i) * (lwi - lz).exp();
                for j in 0..n {
                    gamma[(j, i)] += self.g[y * n + j] * c;
                }
            }
        }
        for j in 0..n {
            for i in 0..n {
                gamma[(j, i)] -= g[j] * v[i];
            }
        }

        let dens = self.nu.shifted_density();
        let hx = extend(dens, x);
        let mut g_harmonic = vec![0.0; n];
        if hx > 0.0 {
            let mut q = vec![0.0; size];
            for (i, gh) in g_harmonic.iter_mut().enumerate() {
                for y in 0..size {
                    q[y] = self.g[y * n + i] * dens[y];
                }
                *gh = extend(&q, x) / hx;
            }
        }
        Ok(ConditionalMoments { law, g, g_harmonic, v, h, a, gamma })
    }

    /// Largest ⟨u, g(y)⟩ over vertices in the support of ν.
    fn support_value(&self, u: &[f64]) -> f64 {
        let n = self.nu.n();
        let ld = self.nu.log_density();
        (0..ld.len())
            .map(|y| (0..n).map(|i| u[i] * self.g[y * n + i]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn g_process(nu: &CubeMeasure, x: &[f64]) -> Result<Vec<f64>> {
    Ok(Localizer::new(nu).moments(x)?.g)
}

pub fn h_t_matrix(nu: &CubeMeasure, x: &[f64]) -> Result<DMatrix<f64>> {
    Ok(Localizer::new(nu).moments(x)?.h)
}

pub fn a_matrix(nu: &CubeMeasure, x: &[f64]) -> Result<DMatrix<f64>> {
    Ok(Localizer::new(nu).moments(x)?.a)
}

pub fn gamma_matrix(nu: &CubeMeasure, x: &[f64]) -> Result<DMatrix<f64>> {
    Ok(Localizer::new(nu).moments(x)?.gamma)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Tr(σ^{1/2}H_t) fell below the threshold.
    Threshold,
    /// ‖η(X_t)‖₂ reached ε√n.
    NormExit,
    /// Too many coordinates paused before time 1.
    Frozen,
    UnitTime,
    Absorbed,
    Horizon,
}

/// State of the stopped SDE, with the density table restricted to the face of
/// absorbed coordinates.
struct Walker<'a> {
    nu: &'a CubeMeasure,
    x: Vec<f64>,
    prev: Vec<f64>,
    t: f64,
    steps: u64,
    free: Vec<usize>,
    table: Vec<f64>,
    xs: Vec<f64>,
    grad: Vec<f64>,
    ws: FoldWork,
    newly_absorbed: Vec<usize>,
}

impl<'a> Walker<'a> {
    fn new(nu: &'a CubeMeasure) -> Self {
        let n = nu.n();
        Self {
            nu,
            x: vec![0.0; n],
            prev: vec![0.0; n],
            t: 0.0,
            steps: 0,
            free: (0..n).collect(),
            table: nu.shifted_density().to_vec(),
            xs: vec![0.0; n],
            grad: vec![0.0; n],
            ws: FoldWork::default(),
            newly_absorbed: Vec::new(),
        }
    }

    fn drift(&mut self) -> Result<()> {
        let m = self.free.len();
        for (k, &i) in self.free.iter().enumerate() {
            self.xs[k] = self.x[i];
        }
        let h = extend_grad(&self.table, &self.xs[..m], &mut self.grad[..m], &mut self.ws);
        if h > 1e-250 && h.is_finite() {
            self.grad[..m].iter_mut().for_each(|g| *g /= h);
            return Ok(());
        }
        if self.nu.h(&self.x) == 0.0 {
            return Err(Error::ZeroMass);
        }
        let v = self.nu.v(&self.x);
        for (k, &i) in self.free.iter().enumerate() {
            self.grad[k] = v[i];
        }
        Ok(())
    }

    fn step(&mut self, h: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        self.drift()?;
        self.prev.copy_from_slice(&self.x);
        let b = bound(self.t);
        let sq = h.sqrt();
        self.newly_absorbed.clear();
        for (k, &i) in self.free.iter().enumerate() {
            let xi = self.x[i];
            if xi.abs() >= b {
                continue;
            }
            let z: f64 = rng.sample(StandardNormal);
            let mut xn = xi + sq * z + self.grad[k] * h;
            if xn.abs() >= b {
                xn = b.copysign(xn);
                if b == 1.0 {
                    self.newly_absorbed.push(k);
                }
            }
            self.x[i] = xn;
        }
        self.t += h;
        if (self.t - 1.0).abs() < 1e-12 {
            self.t = 1.0;
        }
        self.steps += 1;
        for idx in (0..self.newly_absorbed.len()).rev() {
            let k = self.newly_absorbed[idx];
            self.restrict(k)?;
        }
        Ok(())
    }

    /// Condition the working table on the coordinate at free position `k`.
    fn restrict(&mut self, k: usize) -> Result<()> {
        let i = self.free[k];
        let bit = usize::from(self.x[i] > 0.0);
        let half = self.table.len() / 2;
        let low = (1usize << k) - 1;
        let mut next: Vec<f64> =
            (0..half).map(|j| self.table[((j >> k) << (k + 1)) | (bit << k) | (j & low)]).collect();
        let max = next.iter().cloned().fold(0.0, f64::max);
        if max <= 0.0 {
            return Err(Error::ZeroMass);
        }
        next.iter_mut().for_each(|v| *v /= max);
        self.table = next;
        self.free.remove(k);
        Ok(())
    }

    fn next_dt(&self, dt: f64, t_max: f64) -> f64 {
        let mut h = dt;
        if self.t < 1.0 {
            h = h.min(1.0 - self.t);
        }
        h.min(t_max - self.t)
    }

    fn vertex(&self) -> Vertex {
        self.x.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, _)| 1 << i).sum()
    }

    fn frozen(&self) -> usize {
        let b = bound(self.t);
        self.x.iter().filter(|v| v.abs() >= b).count()
    }

    /// Point on the last step where ‖η‖ = r, approached from inside.
    fn exit_point(&self, r: f64) -> Vec<f64> {
        let seg = |l: f64| -> Vec<f64> { self.prev.iter().zip(&self.x).map(|(a, b)| a + l * (b - a)).collect() };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if eta_norm(&seg(mid)) < r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        seg(lo)
    }
}

fn sample_law(law: &[f64], u: f64) -> Vertex {
    let mut acc = 0.0;
    for (y, p) in law.iter().enumerate() {
        acc += p;
        if u < acc {
            return y;
        }
    }
    law.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Endpoint {
    pub vertex: Vertex,
    /// The horizon was reached and the endpoint was drawn from the conditional law.
    pub completed: bool,
    pub steps: u64,
}

/// X_∞ of one path.
pub fn simulate_endpoint(nu: &CubeMeasure, cfg: &SdeConfig, index: u64) -> Result<Endpoint> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, stream::SDE_PATH, index);
    let mut w = Walker::new(nu);
    while !w.free.is_empty() && w.t < cfg.t_max {
        let h = w.next_dt(cfg.dt, cfg.t_max);
        w.step(h, &mut rng)?;
    }
    if w.free.is_empty() {
        return Ok(Endpoint { vertex: w.vertex(), completed: false, steps: w.steps });
    }
    let law = conditional_law(nu, &w.x)?.probabilities();
    let u: f64 = rng.random();
    Ok(Endpoint { vertex: sample_law(&law, u), completed: true, steps: w.steps })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EndpointStats {
    pub paths: usize,
    pub law: Vec<f64>,
    pub tv: f64,
    pub completed: usize,
    pub mean_steps: f64,
}

/// Empirical law of X_∞ over independent paths and its TV distance to ν.
pub fn endpoint_law(nu: &CubeMeasure, cfg: &SdeConfig, paths: usize) -> Result<EndpointStats> {
    cfg.validate()?;
    if paths == 0 {
        return Err(Error::InvalidParameter("need at least one path".into()));
    }
    let ends: Vec<Result<Endpoint>> =
        (0..paths as u64).into_par_iter().map(|k| simulate_endpoint(nu, cfg, k)).collect();
    let mut law = vec![0.0; num_vertices(nu.n())];
    let (mut completed, mut steps) = (0, 0u64);
    for e in ends {
        let e = e?;
        law[e.vertex] += 1.0 / paths as f64;
        completed += usize::from(e.completed);
        steps += e.steps;
    }
    let tv = crate::transport::tv_probabilities(&law, &nu.probabilities());
    Ok(EndpointStats { paths, law, tv, completed, mean_steps: steps as f64 / paths as f64 })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub sigma: Vec<bool>,
    pub v: Vec<f64>,
    pub g: Vec<f64>,
    /// Tr(σ^{1/2}H_t).
    pub trace_h: f64,
    /// Tr(σ^{1/2}A_t).
    pub trace_a: f64,
    /// Tr(σ^{1/2}Γ_t).
    pub trace_gamma: f64,
    /// max_i |Γ_ii − A_ii|.
    pub diag_gap: f64,
    /// max_i |q_i/h − g_t,i|.
    pub g_gap: f64,
    /// max over directions of ⟨u, g_t⟩ − sup_y ⟨u, g(y)⟩.
    pub hull_excess: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StopInfo {
    pub reason: StopReason,
    pub time: f64,
    pub x: Vec<f64>,
    /// Tr(σ^{1/2}H) at the stopped state.
    pub trace_h: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SdePath {
    pub records: Vec<PathRecord>,
    pub stop: StopInfo,
    pub endpoint: Option<Vertex>,
    pub steps: u64,
}

const HULL_DIRECTIONS: usize = 20;

fn record(loc: &Localizer, x: &[f64], t: f64, rng: &mut ChaCha8Rng) -> Result<PathRecord> {
    let n = x.len();
    let m = loc.moments(x)?;
    let sigma = sigma_diag(x, t);
    let trace_h = ConditionalMoments::masked_trace(&m.h, &sigma);
    let trace_a = ConditionalMoments::masked_trace(&m.a, &sigma);
    let trace_gamma = ConditionalMoments::masked_trace(&m.gamma, &sigma);
    let diag_gap = (0..n).map(|i| (m.gamma[(i, i)] - m.a[(i, i)]).abs()).fold(0.0, f64::max);
    let g_gap = m.g.iter().zip(&m.g_harmonic).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut hull_excess = f64::NEG_INFINITY;
    for _ in 0..HULL_DIRECTIONS {
        let u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let inner: f64 = u.iter().zip(&m.g).map(|(a, b)| a * b).sum();
        hull_excess = hull_excess.max(inner - loc.support_value(&u));
    }
    Ok(PathRecord { t, x: x.to_vec(), sigma, v: m.v, g: m.g, trace_h, trace_a, trace_gamma, diag_gap, g_gap, hull_excess })
}

/// One path with exact conditional moments recorded at t = 0, every
/// `check_every` steps, and at the stopping state.
pub fn simulate_path(nu: &CubeMeasure, cfg: &SdeConfig, index: u64) -> Result<SdePath> {
    run_path(&Localizer::new(nu), cfg, index, true)
}

fn run_path(loc: &Localizer, cfg: &SdeConfig, index: u64, keep: bool) -> Result<SdePath> {
    cfg.validate()?;
    let nu = loc.measure();
    let n = nu.n();
    let mut rng = rng_for(cfg.seed, stream::SDE_PATH, index);
    let mut aux = rng_for(cfg.seed, stream::VERIFY, index);
    let mut w = Walker::new(nu);
    let mut records = Vec::new();
    let threshold = cfg.threshold();
    let stopping = cfg.stop != StopRule::Absorption;
    let radius = cfg.eps * (n as f64).sqrt();
    let frozen_limit = 2.0 * (-1.0 / (32.0 * cfg.eps * cfg.eps)).exp() * n as f64;

    let first = record(loc, &w.x, 0.0, &mut aux)?;
    if cfg.stop == StopRule::Tau && threshold.is_some_and(|th| first.trace_h <= th) {
        let stop = StopInfo { reason: StopReason::Threshold, time: 0.0, x: w.x.clone(), trace_h: first.trace_h };
        records.push(first);
        return Ok(SdePath { records, stop, endpoint: None, steps: 0 });
    }
    records.push(first);

    let stop = loop {
        if w.free.is_empty() {
            break StopInfo { reason: StopReason::Absorbed, time: w.t, x: w.x.clone(), trace_h: 0.0 };
        }
        if w.t >= cfg.t_max {
            let rec = record(loc, &w.x, w.t, &mut aux)?;
            let th = rec.trace_h;
            break StopInfo { reason: StopReason::Horizon, time: w.t, x: w.x.clone(), trace_h: th };
        }
        let h = w.next_dt(cfg.dt, cfg.t_max);
        w.step(h, &mut rng)?;
        if stopping {
            let reason = if eta_norm(&w.x) >= radius {
                w.x = w.exit_point(radius);
                Some(StopReason::NormExit)
            } else if w.frozen() as f64 >= frozen_limit {
                Some(StopReason::Frozen)
            } else if w.t >= 1.0 {
                Some(StopReason::UnitTime)
            } else {
                None
            };
            if let Some(reason) = reason {
                // the stopped state is recorded with the clock before this step's end
                let rec = record(loc, &w.x, w.t.min(1.0 - 1e-15), &mut aux)?;
                let info = StopInfo { reason, time: w.t, x: w.x.clone(), trace_h: rec.trace_h };
                records.push(rec);
                break info;
            }
        }
        if w.steps % cfg.check_every as u64 == 0 {
            let rec = record(loc, &w.x, w.t, &mut aux)?;
            if cfg.stop == StopRule::Tau && threshold.is_some_and(|th| rec.trace_h <= th) {
                let info = StopInfo { reason: StopReason::Threshold, time: w.t, x: w.x.clone(), trace_h: rec.trace_h };
                records.push(rec);
                break info;
            }
            if keep {
                records.push(rec);
            }
        }
    };
    let endpoint = (stop.reason == StopReason::Absorbed).then(|| w.vertex());
    Ok(SdePath { records, stop, endpoint, steps: w.steps })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TiltAtom {
    pub theta: Vec<f64>,
    pub weight: f64,
    pub reason: StopReason,
    pub time: f64,
    /// Tr(σ^{1/2}H_τ) at the stopping state.
    pub trace_h: f64,
    /// Tr H(tilt_θ ν).
    pub trace_h_tilt: f64,
    pub below_threshold: Option<bool>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MixtureDiagnostics {
    /// Fraction of atoms with Tr(σ^{1/2}H_τ) at or below the threshold.
    pub fraction_below_threshold: Option<f64>,
    /// Fraction of atoms stopped by the trace rule rather than by T_ε.
    pub fraction_threshold_stop: f64,
    pub max_theta_l2: f64,
    pub max_theta_inf: f64,
    pub mean_stop_time: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TiltMixture {
    pub n: usize,
    pub eps: f64,
    pub alpha: f64,
    pub threshold: Option<f64>,
    pub atoms: Vec<TiltAtom>,
    pub diagnostics: MixtureDiagnostics,
}

impl TiltMixture {
    /// Σ weight · tilt_θ ν, as a probability vector.
    pub fn reconstruction(&self, nu: &CubeMeasure) -> Result<Vec<f64>> {
        let parts: Vec<Result<Vec<f64>>> = self
            .atoms
            .par_iter()
            .map(|a| Ok(nu.tilt(&a.theta)?.probabilities().into_iter().map(|p| p * a.weight).collect()))
            .collect();
        let mut out = vec![0.0; num_vertices(nu.n())];
        for p in parts {
            for (o, v) in out.iter_mut().zip(p?) {
                *o += v;
            }
        }
        Ok(out)
    }

    pub fn reconstruction_tv(&self, nu: &CubeMeasure) -> Result<f64> {
        Ok(crate::transport::tv_probabilities(&self.reconstruction(nu)?, &nu.probabilities()))
    }

    /// |KL(ν‖μ) − Σ weight · KL(tilt_θ ν ‖ μ)|.
    pub fn entropy_gap(&self, nu: &CubeMeasure) -> Result<f64> {
        let parts: Vec<Result<f64>> =
            self.atoms.par_iter().map(|a| Ok(a.weight * nu.tilt(&a.theta)?.kl_to_uniform())).collect();
        let mut avg = 0.0;
        for p in parts {
            avg += p?;
        }
        Ok((nu.kl_to_uniform() - avg).abs())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mixture serializes")
    }
}

/// GW({g_ν(y)}) Monte-Carlo estimate plus three standard errors.
pub fn conservative_gw(nu: &CubeMeasure, samples: usize, seed: u64) -> Result<f64> {
    let set = GradientSet::from_g_map(nu);
    Ok(gw_monte_carlo(&set, samples, seed)?.upper(3.0))
}

/// Tilt mixture from `num_atoms` independent paths stopped by `cfg.stop`
/// (T_ε or τ), each atom θ = η(X_stop) with equal weight.
pub fn decompose(nu: &CubeMeasure, cfg: &SdeConfig, num_atoms: usize) -> Result<TiltMixture> {
    cfg.validate()?;
    if cfg.stop == StopRule::Absorption {
        return Err(Error::InvalidParameter("decompose needs the T_eps or tau stop rule".into()));
    }
    if num_atoms == 0 {
        return Err(Error::InvalidParameter("need at least one atom".into()));
    }
    let loc = Localizer::new(nu);
    let threshold = cfg.threshold();
    let weight = 1.0 / num_atoms as f64;
    let atoms: Vec<Result<TiltAtom>> = (0..num_atoms as u64)
        .into_par_iter()
        .map(|k| {
            let path = run_path(&loc, cfg, k, false)?;
            let theta = eta(&path.stop.x)?;
            let trace_h_tilt = nu.tilt(&theta)?.h_matrix().trace();
            Ok(TiltAtom {
                theta,
                weight,
                reason: path.stop.reason,
                time: path.stop.time,
                trace_h: path.stop.trace_h,
                trace_h_tilt,
                below_threshold: threshold.map(|th| path.stop.trace_h <= th),
            })
        })
        .collect();
    let atoms: Vec<TiltAtom> = atoms.into_iter().collect::<Result<_>>()?;
    let count = atoms.len() as f64;
    let diagnostics = MixtureDiagnostics {
        fraction_below_threshold: threshold
            .map(|_| atoms.iter().filter(|a| a.below_threshold == Some(true)).count() as f64 / count),
        fraction_threshold_stop: atoms.iter().filter(|a| a.reason == StopReason::Threshold).count() as f64 / count,
        max_theta_l2: atoms.iter().map(|a| a.theta.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max),
        max_theta_inf: atoms.iter().flat_map(|a| a.theta.iter().map(|v| v.abs())).fold(0.0, f64::max),
        mean_stop_time: atoms.iter().map(|a| a.time).sum::<f64>() / count,
    };
    Ok(TiltMixture { n: nu.n(), eps: cfg.eps, alpha: cfg.alpha, threshold, atoms, diagnostics })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub alpha: f64,
    pub t: f64,
    pub threshold: f64,
    /// Fraction of paths with min_{s ≤ t} Tr(σ^{1/2}Γ_s) above the threshold.
    pub fraction: f64,
    /// Standard error of a Bernoulli(1/α) frequency over the same paths.
    pub std_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MartingaleRow {
    pub t: f64,
    /// max_i |mean over paths of g_t,i − g_0,i|.
    pub max_abs_dev: f64,
    /// The same deviation in units of its standard error.
    pub max_z: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathDiagnostics {
    pub paths: usize,
    pub checked_states: usize,
    /// States where Tr(σ^{1/2}H) > 4 Tr(σ^{1/2}A) + 1e-9.
    pub ht_at_violations: usize,
    pub max_ht_at_excess: f64,
    /// States where g_t left the hull by more than 1e-12 along a random direction.
    pub hull_violations: usize,
    pub max_diag_gap: f64,
    pub max_g_gap: f64,
    pub min_trace_gamma: f64,
    pub divergence: Vec<DivergenceRow>,
    pub martingale: Vec<MartingaleRow>,
}

/// Runs `paths` paths to time `t_end` (no stopping) and checks the pathwise
/// inequalities at every recorded state.
pub fn check_paths(
    nu: &CubeMeasure,
    cfg: &SdeConfig,
    paths: usize,
    t_end: f64,
    gw: f64,
    alphas: &[f64],
    times: &[f64],
) -> Result<PathDiagnostics> {
    let mut c = cfg.clone();
    c.stop = StopRule::Absorption;
    c.t_max = t_end;
    c.validate()?;
    let loc = Localizer::new(nu);
    let runs: Vec<Result<SdePath>> = (0..paths as u64).into_par_iter().map(|k| run_path(&loc, &c, k, true)).collect();
    let runs: Vec<SdePath> = runs.into_iter().collect::<Result<_>>()?;

    let mut d = PathDiagnostics {
        paths,
        checked_states: 0,
        ht_at_violations: 0,
        max_ht_at_excess: f64::NEG_INFINITY,
        hull_violations: 0,
        max_diag_gap: 0.0,
        max_g_gap: 0.0,
        min_trace_gamma: f64::INFINITY,
        divergence: Vec::new(),
        martingale: Vec::new(),
    };
    for r in runs.iter().flat_map(|p| p.records.iter()) {
        d.checked_states += 1;
        let excess = r.trace_h - 4.0 * r.trace_a;
        d.max_ht_at_excess = d.max_ht_at_excess.max(excess);
        d.ht_at_violations += usize::from(excess > 1e-9);
        d.hull_violations += usize::from(r.hull_excess > 1e-12);
        d.max_diag_gap = d.max_diag_gap.max(r.diag_gap);
        d.max_g_gap = d.max_g_gap.max(r.g_gap);
        d.min_trace_gamma = d.min_trace_gamma.min(r.trace_gamma);
    }

    let running_min = |p: &SdePath, t: f64| -> f64 {
        p.records.iter().filter(|r| r.t <= t + 1e-9).map(|r| r.trace_gamma).fold(f64::INFINITY, f64::min)
    };
    let count = paths as f64;
    for &alpha in alphas {
        for &t in times {
            let threshold = alpha * gw / t.sqrt();
            let above = runs.iter().filter(|p| running_min(p, t) > threshold).count() as f64;
            let q = 1.0 / alpha;
            d.divergence.push(DivergenceRow {
                alpha,
                t,
                threshold,
                fraction: above / count,
                std_error: (q * (1.0 - q) / count).sqrt(),
            });
        }
    }

    let g0 = runs.first().map(|p| p.records[0].g.clone()).unwrap_or_default();
    for &t in times {
        let at: Vec<&PathRecord> = runs
            .iter()
            .filter_map(|p| p.records.iter().rev().find(|r| r.t <= t + 1e-9))
            .collect();
        let k = at.len() as f64;
        let (mut max_dev, mut max_z) = (0.0f64, 0.0f64);
        for i in 0..nu.n() {
            let vals: Vec<f64> = at.iter().map(|r| r.g[i]).collect();
            let mean = vals.iter().sum::<f64>() / k;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
            let dev = (mean - g0[i]).abs();
            max_dev = max_dev.max(dev);
            let se = (var / k).sqrt();
            max_z = max_z.max(if se > 0.0 { dev / se } else if dev > 1e-12 { f64::INFINITY } else { 0.0 });
        }
        d.martingale.push(MartingaleRow { t, max_abs_dev: max_dev, max_z });
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::ising::IsingModel;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_point(n: usize, r: f64, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-r..r)).collect()
    }

    #[test]
    fn conditional_law_examples() {
        let mut rng = rng_for(1, stream::TEST, 80);
        let nu = instances::random_measure(5, 1.0, &mut rng);
        let at0 = conditional_law(&nu, &[0.0; 5]).unwrap();
        for y in 0..32 {
            assert_abs_diff_eq!(at0.prob(y), nu.prob(y), epsilon = 1e-14);
        }
        let corner = conditional_law(&nu, &[1.0, -1.0, 1.0, 1.0, -1.0]).unwrap();
        assert_abs_diff_eq!(corner.prob(0b01101), 1.0, epsilon = 1e-15);
        for _ in 0..5 {
            let x = random_point(5, 0.95, &mut rng);
            let a = conditional_law(&nu, &x).unwrap();
            let b = nu.tilt(&eta(&x).unwrap()).unwrap();
            for y in 0..32 {
                assert_abs_diff_eq!(a.prob(y), b.prob(y), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn moments_at_origin_and_for_tilts() {
        let mut rng = rng_for(2, stream::TEST, 80);
        let nu = instances::random_measure(5, 1.0, &mut rng);
        let m = Localizer::new(&nu).moments(&[0.0; 5]).unwrap();
        let h0 = nu.h_matrix();
        assert!((m.h.clone() - h0).abs().max() < 1e-13);
        for (a, b) in m.g.iter().zip(nu.g_mean()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
        let tilt = CubeMeasure::uniform(5).unwrap().tilt(&[0.3, -1.0, 0.2, 0.7, 0.0]).unwrap();
        let loc = Localizer::new(&tilt);
        for _ in 0..5 {
            let x = random_point(5, 0.9, &mut rng);
            assert!(loc.moments(&x).unwrap().h.abs().max() < 1e-14);
        }
    }

    #[test]
    fn moments_match_direct_summation() {
        let mut rng = rng_for(3, stream::TEST, 80);
        let nu = instances::random_measure(5, 1.0, &mut rng);
        let loc = Localizer::new(&nu);
        let x = random_point(5, 0.8, &mut rng);
        let m = loc.moments(&x).unwrap();
        // oracle: plain products of w(x, y)
        let w = |y: usize| (0..5).map(|i| (1.0 + x[i] * spin(y, i)) / 2.0).product::<f64>();
        let z: f64 = (0..32).map(|y| w(y) * nu.prob(y)).sum();
        let p: Vec<f64> = (0..32).map(|y| w(y) * nu.prob(y) / z).collect();
        let g: Vec<Vec<f64>> = (0..32).map(|y| nu.g(y)).collect();
        let v: Vec<Vec<f64>> = (0..32).map(|y| nu.v(&crate::cube::spins(y, 5))).collect();
        let gt: Vec<f64> = (0..5).map(|i| (0..32).map(|y| p[y] * g[y][i]).sum()).collect();
        let vt: Vec<f64> = (0..5).map(|i| (0..32).map(|y| p[y] * v[y][i]).sum()).collect();
        for i in 0..5 {
            assert_abs_diff_eq!(m.g[i], gt[i], epsilon = 1e-12);
            assert_abs_diff_eq!(m.g_harmonic[i], gt[i], epsilon = 1e-12);
            assert_abs_diff_eq!(m.v[i], vt[i], epsilon = 1e-12);
            for j in 0..5 {
                let h: f64 = (0..32).map(|y| p[y] * (g[y][i] - gt[i]) * (g[y][j] - gt[j])).sum();
                let a: f64 = (0..32).map(|y| p[y] * (g[y][i] - gt[i]) * (v[y][j] - vt[j])).sum();
                assert_abs_diff_eq!(m.h[(i, j)], h, epsilon = 1e-12);
                assert_abs_diff_eq!(m.a[(i, j)], a, epsilon = 1e-12);
            }
        }
        // v_t agrees with the extension formula ∇h/h
        for (a, b) in m.v.iter().zip(nu.v(&x)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        // Γ by central differences of q/h·h
        let dens = nu.shifted_density();
        let hx = extend(dens, &x);
        for j in 0..5 {
            let q: Vec<f64> = (0..32).map(|y| g[y][j] * dens[y]).collect();
            for i in 0..5 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += 1e-6;
                xm[i] -= 1e-6;
                let dq = (extend(&q, &xp) - extend(&q, &xm)) / 2e-6;
                assert_abs_diff_eq!(m.gamma[(j, i)], dq / hx - gt[j] * vt[i], epsilon = 1e-7);
            }
            assert_abs_diff_eq!(m.gamma[(j, j)], m.a[(j, j)], epsilon = 1e-12);
        }
    }

    #[test]
    fn gamma_diagonal_on_faces() {
        let mut rng = rng_for(4, stream::TEST, 80);
        let nu = instances::random_measure(4, 1.0, &mut rng);
        let m = Localizer::new(&nu).moments(&[1.0, 0.3, -1.0, -0.2]).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(m.gamma[(i, i)], m.a[(i, i)], epsilon = 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = SdeConfig::default();
        assert!(c.validate().is_ok());
        c.dt = 0.2;
        assert!(c.validate().is_err());
        c.dt = 1e-3;
        c.eps = 0.07;
        assert!(c.validate().is_err());
        c.eps = 0.03;
        c.stop = StopRule::Tau;
        assert!(c.validate().is_err());
        c.gw = Some(1.0);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn path_invariants() {
        let nu = IsingModel::curie_weiss(5, 0.6, 0.1).to_cube_function().unwrap();
        let nu = CubeMeasure::from_function(&nu);
        let cfg = SdeConfig { dt: 1e-2, check_every: 2, t_max: 3.0, seed: 5, ..Default::default() };
        let path = simulate_path(&nu, &cfg, 0).unwrap();
        let mut prev_t = -1.0;
        for r in &path.records {
            assert!(r.t > prev_t);
            prev_t = r.t;
            let b = if r.t < 1.0 { 0.5 } else { 1.0 };
            assert!(r.x.iter().all(|v| v.abs() <= b));
            assert!(r.trace_h <= 4.0 * r.trace_a + 1e-9);
            assert!(r.hull_excess <= 1e-12);
            assert!(r.diag_gap < 1e-10 && r.g_gap < 1e-10);
            assert!(r.v.iter().zip(&r.x).all(|(v, x)| v * x <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn tilt_endpoint_law() {
        let nu = CubeMeasure::uniform(3).unwrap().tilt(&[0.8, -0.4, 0.0]).unwrap();
        let cfg = SdeConfig { dt: 2e-3, seed: 9, ..Default::default() };
        let s = endpoint_law(&nu, &cfg, 20_000).unwrap();
        assert!(s.tv < 0.03, "tv = {}", s.tv);
        assert_eq!(s.completed, 0);
    }

    #[test]
    fn walker_restriction_matches_full_drift() {
        let mut rng = rng_for(6, stream::TEST, 80);
        let nu = instances::random_measure(4, 1.0, &mut rng);
        let mut w = Walker::new(&nu);
        w.x = vec![0.2, 1.0, -0.4, 0.0];
        w.restrict(1).unwrap();
        w.drift().unwrap();
        let full = nu.v(&w.x);
        for (k, &i) in w.free.iter().enumerate() {
            assert_abs_diff_eq!(w.grad[k], full[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn decomposition_of_a_tilt_is_trivial() {
        let nu = CubeMeasure::uniform(6).unwrap().tilt(&[0.5, -0.3, 0.1, 0.0, 0.9, -1.2]).unwrap();
        let cfg = SdeConfig { stop: StopRule::Tau, gw: Some(1e-14), ..Default::default() };
        let mix = decompose(&nu, &cfg, 50).unwrap();
        assert!(mix.atoms.iter().all(|a| a.reason == StopReason::Threshold && a.time == 0.0));
        assert_eq!(mix.diagnostics.fraction_below_threshold, Some(1.0));
        assert!(mix.reconstruction_tv(&nu).unwrap() < 1e-12);
    }

    #[test]
    fn t_eps_atoms_respect_support() {
        let mut rng = rng_for(7, stream::TEST, 80);
        let nu = instances::random_measure(6, 0.8, &mut rng);
        let cfg = SdeConfig { stop: StopRule::TEps, eps: 0.05, seed: 3, ..Default::default() };
        let mix = decompose(&nu, &cfg, 500).unwrap();
        let r = 0.05 * 6f64.sqrt();
        assert!(mix.diagnostics.max_theta_l2 <= r + 1e-9);
        assert!(mix.diagnostics.max_theta_inf <= 1.0);
        let w: f64 = mix.atoms.iter().map(|a| a.weight).sum();
        assert_abs_diff_eq!(w, 1.0, epsilon = 1e-9);
        assert!(mix.entropy_gap(&nu).unwrap() <= 2.0 * 0.05 * 6.0);
        assert!(mix.reconstruction_tv(&nu).unwrap() < 3.0 / (500f64).sqrt());
    }
}
