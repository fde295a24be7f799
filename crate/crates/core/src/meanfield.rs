//! The naive mean-field variational problem over product measures, and the
//! rate function φ_p(t) = inf { KL(ξ ‖ μ_p) : ξ product, ∫ f dξ ≥ t n }.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::{binary_kl, extend, extend_grad, log_sum_exp, num_vertices, spin, CubeFunction, FoldWork};
use crate::graphs::SubgraphModel;
use crate::ising::IsingModel;
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

/// Mirror coordinates are clamped here, keeping tanh(θ) strictly inside (-1, 1).
const THETA_MAX: f64 = 18.0;

/// The function f of a variational problem.
#[derive(Clone, Debug)]
pub enum Objective {
    Table(CubeFunction),
    Ising(IsingModel),
    Subgraph(SubgraphModel),
}

impl Objective {
    pub fn n(&self) -> usize {
        match self {
            Objective::Table(f) => f.n(),
            Objective::Ising(m) => m.n(),
            Objective::Subgraph(m) => m.n(),
        }
    }

    /// ∫ f dξ for the product measure with mean m.
    pub fn expect(&self, m: &[f64]) -> f64 {
        match self {
            Objective::Table(f) => extend(f.values(), m),
            Objective::Ising(model) => model.expect_product(m),
            Objective::Subgraph(model) => model.expect_product(m),
        }
    }

    fn value_grad(&self, m: &[f64], grad: &mut [f64], ws: &mut FoldWork) -> f64 {
        match self {
            Objective::Table(f) => extend_grad(f.values(), m, grad, ws),
            Objective::Ising(model) => {
                grad.copy_from_slice(&model.gradient(m));
                model.expect_product(m)
            }
            Objective::Subgraph(model) => {
                grad.copy_from_slice(&model.grad_product(m));
                model.expect_product(m)
            }
        }
    }

    /// Dense table when the dimension allows one.
    pub fn table(&self) -> Option<CubeFunction> {
        match self {
            Objective::Table(f) => Some(f.clone()),
            Objective::Ising(m) if m.n() <= 20 => m.to_cube_function().ok(),
            Objective::Subgraph(m) if m.n() <= 20 => m.to_cube_function().ok(),
            _ => None,
        }
    }

    pub fn max_value(&self) -> Option<f64> {
        match self {
            Objective::Subgraph(m) => m.max_value(),
            _ => self.table().map(|f| f.max()),
        }
    }

    /// Lip(f) exactly for tables, otherwise an analytic upper bound.
    pub fn lip(&self) -> f64 {
        match self {
            Objective::Table(f) => f.lip(),
            Objective::Ising(m) => m.lip_bound(),
            Objective::Subgraph(m) => m.weighted_edge_sum(),
        }
    }

    /// Spin vectors of the maximizing vertices, when they can be listed.
    fn maximizers(&self, max: f64) -> Option<Vec<Vec<f64>>> {
        if let Objective::Subgraph(m) = self {
            let positive = m.terms().all(|(h, b)| b > 0.0 && h.edge_count() > 0);
            if positive {
                return Some(vec![vec![1.0; m.n()]]);
            }
        }
        let f = self.table()?;
        let tol = 1e-12 * max.abs().max(1.0);
        Some(
            (0..num_vertices(f.n()))
                .filter(|&y| f.value(y) >= max - tol)
                .map(|y| (0..f.n()).map(|i| spin(y, i)).collect())
                .collect(),
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeanFieldOptions {
    /// Initial damping of the mirror fixed-point step.
    pub step: f64,
    pub max_iter: usize,
    pub restarts: usize,
    /// Stopping tolerance on the mirror-coordinate residual.
    pub tol: f64,
    pub seed: u64,
}

impl Default for MeanFieldOptions {
    fn default() -> Self {
        Self { step: 1.0, max_iter: 5000, restarts: 16, tol: 1e-10, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct MeanFieldProblem {
    pub objective: Objective,
    pub p: f64,
    pub options: MeanFieldOptions,
}

impl MeanFieldProblem {
    pub fn new(objective: Objective, p: f64, options: MeanFieldOptions) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("bias p={p} must lie in (0,1)")));
        }
        if options.restarts == 0 && options.max_iter == 0 {
            return Err(Error::InvalidParameter("solver needs iterations".into()));
        }
        Ok(Self { objective, p, options })
    }

    pub fn n(&self) -> usize {
        self.objective.n()
    }

    /// Exact log ∫ e^f dμ_p when a dense table is available.
    pub fn log_partition(&self) -> Option<f64> {
        let f = self.objective.table()?;
        Some(log_partition_mup(&f, self.p))
    }
}

/// log ∫ e^f dμ_p by log-sum-exp over all vertices.
pub fn log_partition_mup(f: &CubeFunction, p: f64) -> f64 {
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let terms: Vec<f64> = (0..num_vertices(f.n()))
        .map(|y| {
            let ones = y.count_ones() as f64;
            f.value(y) + ones * lp + (f.n() as f64 - ones) * lq
        })
        .collect();
    log_sum_exp(&terms)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    pub mean: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub restarts_used: usize,
    /// Exact log ∫ e^f dμ_p when computable.
    pub log_partition: Option<f64>,
}

pub fn expect_under_product(f: &CubeFunction, m: &[f64]) -> Result<f64> {
    if m.len() != f.n() {
        return Err(Error::DimensionMismatch { expected: f.n(), got: m.len() });
    }
    if m.iter().any(|v| !(v.abs() <= 1.0)) {
        return Err(Error::InvalidParameter("means must lie in [-1,1]".into()));
    }
    Ok(extend(f.values(), m))
}

/// KL(ξ_m ‖ μ_p) summed over coordinates.
pub fn kl_product_to_mup(m: &[f64], p: f64) -> f64 {
    let m0 = 2.0 * p - 1.0;
    m.iter().map(|&mi| binary_kl(mi, m0)).sum::<f64>().max(0.0)
}

pub fn lz_reference(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter("alpha must be positive".into()));
    }
    Ok(alpha.powf(2.0 / 3.0).min(2.0 * alpha / 3.0))
}

struct Run {
    mean: Vec<f64>,
    objective: f64,
    expectation: f64,
    iterations: usize,
    converged: bool,
}

/// Mirror ascent on G(m) = s·F(m) − KL(m ‖ μ_p) from mirror point `theta`.
fn ascend(obj: &Objective, s: f64, p: f64, mut theta: Vec<f64>, opts: &MeanFieldOptions) -> Run {
    let n = theta.len();
    let theta_p = (2.0 * p - 1.0).atanh();
    let mut ws = FoldWork::default();
    let mut m: Vec<f64> = theta.iter().map(|t| t.tanh()).collect();
    let mut grad = vec![0.0; n];
    let mut f = obj.value_grad(&m, &mut grad, &mut ws);
    let mut g = s * f - kl_product_to_mup(&m, p);
    let mut step = opts.step;
    let mut cand_theta = vec![0.0; n];
    let mut cand_m = vec![0.0; n];
    let mut cand_grad = vec![0.0; n];
    let mut converged = false;
    let mut it = 0;
    while it < opts.max_iter {
        it += 1;
        let mut resid = 0.0f64;
        for i in 0..n {
            let target = (s * grad[i] + theta_p).clamp(-THETA_MAX, THETA_MAX);
            resid = resid.max((target - theta[i]).abs());
        }
        if resid <= opts.tol {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                let target = (s * grad[i] + theta_p).clamp(-THETA_MAX, THETA_MAX);
                cand_theta[i] = theta[i] + step * (target - theta[i]);
                cand_m[i] = cand_theta[i].tanh();
            }
            let cf = obj.value_grad(&cand_m, &mut cand_grad, &mut ws);
            let cg = s * cf - kl_product_to_mup(&cand_m, p);
            if cg >= g - 1e-14 * g.abs().max(1.0) {
                std::mem::swap(&mut theta, &mut cand_theta);
                std::mem::swap(&mut m, &mut cand_m);
                std::mem::swap(&mut grad, &mut cand_grad);
                let stalled = (cg - g).abs() <= 1e-15 * g.abs().max(1.0);
                f = cf;
                g = cg;
                step = (step * 1.5).min(1.0);
                accepted = true;
                if stalled && resid <= 1e3 * opts.tol {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted || converged {
            converged = converged || resid <= 1e3 * opts.tol;
            break;
        }
    }
    Run { mean: m, objective: g, expectation: f, iterations: it, converged }
}

/// Quasi-random start in mirror coordinates.
fn sobol_start(n: usize, index: usize, seed: u64) -> Vec<f64> {
    let base = derive_seed(seed, stream::RESTART, 0);
    (0..n)
        .map(|d| {
            let block = (d / 256) as u64;
            let s = (derive_seed(base, block, 0) & 0xffff_ffff) as u32;
            let u = sobol_burley::sample(index as u32, (d % 256) as u32, s) as f64;
            (0.96 * (2.0 * u - 1.0)).atanh()
        })
        .collect()
}

fn multi_start(obj: &Objective, s: f64, p: f64, opts: &MeanFieldOptions, warm: &[Vec<f64>]) -> (Run, usize) {
    let n = obj.n();
    let theta_p = (2.0 * p - 1.0).atanh();
    let mut starts: Vec<Vec<f64>> = vec![vec![theta_p; n]];
    for w in warm {
        starts.push(w.iter().map(|m| m.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh().clamp(-THETA_MAX, THETA_MAX)).collect());
    }
    for r in 0..opts.restarts {
        starts.push(sobol_start(n, r, opts.seed));
    }
    let used = starts.len();
    let runs: Vec<Run> = starts.into_par_iter().map(|th| ascend(obj, s, p, th, opts)).collect();
    let mut best: Option<Run> = None;
    for r in runs {
        if best.as_ref().map_or(true, |b| r.objective > b.objective) {
            best = Some(r);
        }
    }
    (best.expect("at least one start"), used)
}

/// Best product objective sup_m ∫ f dξ_m − KL(ξ_m ‖ μ_p) over multi-start mirror ascent.
pub fn solve_gibbs(prob: &MeanFieldProblem) -> Result<SolveResult> {
    let (run, used) = multi_start(&prob.objective, 1.0, prob.p, &prob.options, &[]);
    if !run.objective.is_finite() {
        return Err(Error::Solver("objective is not finite".into()));
    }
    Ok(SolveResult {
        mean: run.mean,
        objective: run.objective,
        converged: run.converged,
        iterations: run.iterations,
        restarts_used: used,
        log_partition: prob.log_partition(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhiResult {
    pub t: f64,
    /// Best feasible KL found (an upper bound on the infimum); +inf when infeasible.
    pub phi: f64,
    pub feasible: bool,
    pub lambda: f64,
    /// ∫ f dξ at the returned product, when one exists.
    pub constraint_value: Option<f64>,
    pub mean: Option<Vec<f64>>,
    /// The Lagrangian sweep activated the constraint within tolerance.
    pub converged: bool,
    /// t equals max f / n; the value is the point-mass limit.
    pub boundary: bool,
    pub lagrangian_solves: usize,
}

/// φ_p(t) by a Lagrangian sweep over λ ≥ 0.
pub fn rate_function_phi(prob: &MeanFieldProblem, t: f64) -> Result<PhiResult> {
    phi_with_warm(prob, t, &[])
}

fn phi_with_warm(prob: &MeanFieldProblem, t: f64, warm: &[Vec<f64>]) -> Result<PhiResult> {
    if !t.is_finite() {
        return Err(Error::InvalidParameter("t must be finite".into()));
    }
    let obj = &prob.objective;
    let n = obj.n();
    let p = prob.p;
    let target = t * n as f64;
    let mp = vec![2.0 * p - 1.0; n];
    let e0 = obj.expect(&mp);
    let mut out = PhiResult {
        t,
        phi: 0.0,
        feasible: true,
        lambda: 0.0,
        constraint_value: Some(e0),
        mean: Some(mp.clone()),
        converged: true,
        boundary: false,
        lagrangian_solves: 0,
    };
    if e0 >= target {
        return Ok(out);
    }
    let tol_c = 1e-6 * n as f64 * obj.lip().max(1e-12);
    if let Some(fmax) = obj.max_value() {
        if target > fmax + tol_c {
            out.phi = f64::INFINITY;
            out.feasible = false;
            out.constraint_value = None;
            out.mean = None;
            return Ok(out);
        }
        if target >= fmax - tol_c {
            if let Some(verts) = obj.maximizers(fmax) {
                let (best, kl) = verts
                    .into_iter()
                    .map(|s| {
                        let kl = kl_product_to_mup(&s, p);
                        (s, kl)
                    })
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("a maximizer exists");
                out.phi = kl;
                out.constraint_value = Some(fmax);
                out.mean = Some(best);
                out.boundary = true;
                return Ok(out);
            }
        }
    }

    let opts = &prob.options;
    let mut warm: Vec<Vec<f64>> = warm.to_vec();
    let mut best: Option<(f64, f64, f64, Vec<f64>)> = None; // (kl, lambda, expectation, mean)
    let mut solves = 0;
    let record = |lam: f64, run: &Run, best: &mut Option<(f64, f64, f64, Vec<f64>)>| {
        if run.expectation >= target {
            let kl = kl_product_to_mup(&run.mean, p);
            if best.as_ref().map_or(true, |b| kl < b.0) {
                *best = Some((kl, lam, run.expectation, run.mean.clone()));
            }
        }
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    loop {
        let (run, _) = multi_start(obj, hi, p, opts, &warm);
        solves += 1;
        record(hi, &run, &mut best);
        warm = vec![run.mean.clone()];
        if run.expectation >= target {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > 1e9 {
            break;
        }
    }
    if best.is_none() {
        out.phi = f64::INFINITY;
        out.feasible = false;
        out.converged = false;
        out.constraint_value = None;
        out.mean = None;
        out.lambda = hi;
        out.lagrangian_solves = solves;
        return Ok(out);
    }
    let mut activated = best.as_ref().is_some_and(|b| b.2 - target <= tol_c);
    let mut iter = 0;
    while !activated && iter < 80 && hi - lo > 1e-13 * hi {
        iter += 1;
        let mid = 0.5 * (lo + hi);
        let (run, _) = multi_start(obj, mid, p, opts, &warm);
        solves += 1;
        record(mid, &run, &mut best);
        if run.expectation >= target {
            hi = mid;
            warm = vec![run.mean.clone()];
            activated = run.expectation - target <= tol_c;
        } else {
            lo = mid;
        }
    }
    let (mut kl, lam, mut ex, mut mean) = best.expect("feasible point recorded");
    if ex > target && e0 < target {
        // KL is convex in the mean, so pulling the point back toward μ_p until
        // the constraint is tight can only lower it
        let at = |s: f64| -> Vec<f64> { mp.iter().zip(&mean).map(|(a, b)| a + s * (b - a)).collect() };
        let (mut lo_s, mut hi_s) = (0.0f64, 1.0f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo_s + hi_s);
            if obj.expect(&at(mid)) >= target {
                hi_s = mid;
            } else {
                lo_s = mid;
            }
        }
        let m = at(hi_s);
        let (e, k) = (obj.expect(&m), kl_product_to_mup(&m, p));
        if e >= target && k <= kl {
            (kl, ex, mean) = (k, e, m);
        }
    }
    out.phi = kl;
    out.lambda = lam;
    out.constraint_value = Some(ex);
    out.mean = Some(mean);
    out.converged = activated;
    out.lagrangian_solves = solves;
    Ok(out)
}

/// φ_p over a grid of t values, warm-starting each point from the previous one.
pub fn phi_sweep(prob: &MeanFieldProblem, ts: &[f64]) -> Result<Vec<PhiResult>> {
    let mut out = Vec::with_capacity(ts.len());
    let mut warm: Vec<Vec<f64>> = Vec::new();
    for &t in ts {
        let r = phi_with_warm(prob, t, &warm)?;
        if let Some(m) = &r.mean {
            warm = vec![m.clone()];
        }
        out.push(r);
    }
    Ok(out)
}

/// Upper bound on φ_p(t) for the triangle function T(G)/N from the restricted
/// ansatz "clique of size s with edge probability q_in, every other pair q_out".
pub fn clique_ansatz_phi(n_vertices: usize, p: f64, t: f64, grid: usize) -> f64 {
    let nn = n_vertices as f64;
    let pairs = nn * (nn - 1.0) / 2.0;
    let target = t * pairs;
    let c2 = |k: f64| k * (k - 1.0) / 2.0;
    let c3 = |k: f64| k * (k - 1.0) * (k - 2.0) / 6.0;
    let bkl = |q: f64| binary_kl(2.0 * q - 1.0, 2.0 * p - 1.0);
    let expect = |s: f64, qi: f64, qo: f64| {
        let r = nn - s;
        (c3(s) * qi.powi(3) + c2(s) * r * qi * qo * qo + s * c2(r) * qo.powi(3) + c3(r) * qo.powi(3)) / nn
    };
    let mut best = f64::INFINITY;
    for s in 0..=n_vertices {
        let s = s as f64;
        for k in 0..=grid {
            let qi = p + (1.0 - p) * k as f64 / grid as f64;
            if expect(s, qi, 1.0) < target {
                continue;
            }
            // smallest q_out ≥ p meeting the constraint
            let qo = if expect(s, qi, p) >= target {
                p
            } else {
                let (mut a, mut b) = (p, 1.0);
                for _ in 0..100 {
                    let mid = 0.5 * (a + b);
                    if expect(s, qi, mid) >= target {
                        b = mid;
                    } else {
                        a = mid;
                    }
                }
                b
            };
            let kl = c2(s) * bkl(qi) + (pairs - c2(s)) * bkl(qo);
            best = best.min(kl);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::rng::rng_for;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn opts(restarts: usize) -> MeanFieldOptions {
        MeanFieldOptions { restarts, ..Default::default() }
    }

    /// Golden-section maximization on [a, b].
    fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        for _ in 0..200 {
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - r * (b - a);
            d = a + r * (b - a);
        }
        let x = 0.5 * (a + b);
        (x, f(x))
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_product_to_mup(&[0.4, 0.4], 0.7), 0.0);
        assert_abs_diff_eq!(kl_product_to_mup(&[1.0; 3], 0.5), 3.0 * 2f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(kl_product_to_mup(&[0.5], 0.5), 0.130812, epsilon = 1e-6);
    }

    #[test]
    fn expect_examples() {
        let mut rng = rng_for(1, stream::TEST, 50);
        let f = instances::random_function(4, 1.0, &mut rng);
        assert_eq!(expect_under_product(&f, &[1.0, -1.0, 1.0, 1.0]).unwrap(), f.value(0b1101));
        assert_abs_diff_eq!(expect_under_product(&f, &[0.0; 4]).unwrap(), f.mean(), epsilon = 1e-14);
        assert!(expect_under_product(&f, &[0.0; 3]).is_err());
    }

    #[test]
    fn zero_function_solves_to_mup() {
        let prob = MeanFieldProblem::new(Objective::Table(CubeFunction::zeros(4).unwrap()), 0.3, opts(4)).unwrap();
        let r = solve_gibbs(&prob).unwrap();
        assert!(r.converged);
        assert_abs_diff_eq!(r.objective, 0.0, epsilon = 1e-12);
        for m in r.mean {
            assert_abs_diff_eq!(m, -0.4, epsilon = 1e-9);
        }
    }

    #[test]
    fn linear_function_closed_form() {
        let theta = [0.4, -1.1, 0.0, 2.2, 0.7];
        let f = CubeFunction::linear(&theta).unwrap();
        let prob = MeanFieldProblem::new(Objective::Table(f), 0.5, opts(4)).unwrap();
        let r = solve_gibbs(&prob).unwrap();
        let want: f64 = theta.iter().map(|t: &f64| t.cosh().ln()).sum();
        assert_abs_diff_eq!(r.objective, want, epsilon = 1e-9);
        for (m, t) in r.mean.iter().zip(theta) {
            assert_abs_diff_eq!(*m, t.tanh(), epsilon = 1e-7);
        }
        assert_abs_diff_eq!(r.log_partition.unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn curie_weiss_matches_scalar_oracle() {
        let n = 12;
        for (beta, h) in [(0.5, 0.0), (0.8, 0.1), (0.3, -0.2)] {
            let model = IsingModel::curie_weiss(n, beta, h);
            let prob = MeanFieldProblem::new(Objective::Ising(model), 0.5, opts(8)).unwrap();
            let r = solve_gibbs(&prob).unwrap();
            let nf = n as f64;
            let scalar = |m: f64| beta * (nf - 1.0) * m * m / 2.0 + h * nf * m - nf * binary_kl(m, 0.0);
            let (_, want) = golden_max(scalar, -0.999999, 0.999999);
            assert_abs_diff_eq!(r.objective, want, epsilon = 1e-6);
            assert!(r.objective <= r.log_partition.unwrap() + 1e-9);
        }
    }

    #[test]
    fn gibbs_domination_on_random_tables() {
        let mut rng = rng_for(2, stream::TEST, 50);
        for n in [3usize, 6, 9] {
            let f = instances::random_function(n, 1.0, &mut rng);
            let prob = MeanFieldProblem::new(Objective::Table(f), rng.random_range(0.2..0.8), opts(4)).unwrap();
            let r = solve_gibbs(&prob).unwrap();
            assert!(r.objective <= r.log_partition.unwrap() + 1e-10);
        }
    }

    #[test]
    fn phi_examples() {
        let n = 6;
        let f = CubeFunction::from_spins_fn(n, |s| s.iter().sum()).unwrap();
        let prob = MeanFieldProblem::new(Objective::Table(f), 0.5, opts(2)).unwrap();
        let r = rate_function_phi(&prob, -0.1).unwrap();
        assert_eq!(r.phi, 0.0);
        let r = rate_function_phi(&prob, 0.5).unwrap();
        assert!(r.feasible);
        assert_abs_diff_eq!(r.phi, n as f64 * binary_kl(0.5, 0.0), epsilon = 1e-5);
        let r = rate_function_phi(&prob, 1.5).unwrap();
        assert!(!r.feasible && r.phi.is_infinite());
        let r = rate_function_phi(&prob, 1.0).unwrap();
        assert!(r.boundary);
        assert_abs_diff_eq!(r.phi, n as f64 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn phi_is_monotone_in_t() {
        let mut rng = rng_for(3, stream::TEST, 50);
        let f = instances::random_lipschitz_function(6, &mut rng);
        let prob = MeanFieldProblem::new(Objective::Table(f.clone()), 0.4, opts(3)).unwrap();
        let lo = f.min() / 6.0;
        let hi = f.max() / 6.0;
        let ts: Vec<f64> = (0..8).map(|k| lo + (hi - lo) * k as f64 / 8.0).collect();
        let rs = phi_sweep(&prob, &ts).unwrap();
        for w in rs.windows(2) {
            assert!(w[1].phi >= w[0].phi - 1e-6, "{} then {}", w[0].phi, w[1].phi);
        }
    }

    #[test]
    fn triangle_phi_not_above_clique_ansatz() {
        let model = SubgraphModel::triangle(5).unwrap();
        let p = 0.5;
        let mean = model.expect_constant(p) / 10.0;
        let t = mean * 1.15;
        let prob = MeanFieldProblem::new(Objective::Subgraph(model), p, opts(6)).unwrap();
        let r = rate_function_phi(&prob, t).unwrap();
        let ansatz = clique_ansatz_phi(5, p, t, 400);
        assert!(r.phi <= ansatz * 1.02 + 1e-9, "solver {} ansatz {}", r.phi, ansatz);
    }

    #[test]
    fn lz_examples() {
        assert_abs_diff_eq!(lz_reference(1.0).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lz_reference(8.0).unwrap(), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lz_reference(1e-3).unwrap(), 2e-3 / 3.0, epsilon = 1e-15);
        assert!(lz_reference(0.0).is_err());
    }
}
