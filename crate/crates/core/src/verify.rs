//! Invariant suite. Every check reports its worst deviation over a batch of
//! randomized instances together with the tolerance it is held to.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::complexity::{complexity_of, gw_monte_carlo, ising_complexity_bound, GradientSet};
use crate::cube::{spin, spins, CubeFunction, CubeMeasure, SequentialSampler, Vertex};
use crate::gaussian::{reverse_lsi_check, GaussianMixture, DEFAULT_NODES};
use crate::graphs::{hom_density, Adjacency, SimpleGraph, SubgraphModel};
use crate::instances::{random_function, random_measure, random_vector, uniform_signs};
use crate::ising::IsingModel;
use crate::ld::{exact_tail, ld_lower, ld_upper, phi_relaxed_lower};
use crate::localization::{a_matrix, check_paths, conditional_law, h_t_matrix, sigma_diag, SdeConfig};
use crate::meanfield::{rate_function_phi, solve_gibbs, MeanFieldOptions, MeanFieldProblem, Objective};
use crate::rng::{rng_for, stream};
use crate::transport::{step1_bound, w1_exact};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    CubeCore,
    Complexity,
    Meanfield,
    Transport,
    LdBounds,
    LocalizationSim,
    GaussianLsi,
    Graphs,
}

impl Module {
    pub const ALL: [Module; 8] = [
        Module::CubeCore,
        Module::Complexity,
        Module::Meanfield,
        Module::Transport,
        Module::LdBounds,
        Module::LocalizationSim,
        Module::GaussianLsi,
        Module::Graphs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Module::CubeCore => "cube_core",
            Module::Complexity => "complexity",
            Module::Meanfield => "meanfield",
            Module::Transport => "transport",
            Module::LdBounds => "ld_bounds",
            Module::LocalizationSim => "localization_sim",
            Module::GaussianLsi => "gaussian_lsi",
            Module::Graphs => "graphs",
        }
    }
}

impl fmt::Display for Module {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Module {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Module::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown module '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub module: String,
    pub name: String,
    /// Worst deviation or excess observed.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub instances: usize,
}

impl Check {
    fn new(module: Module, name: &str, value: f64, tolerance: f64, instances: usize) -> Self {
        Self {
            module: module.name().into(),
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
            instances,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Σ_y ν(y) F(y) over a table of rows.
fn average_rows(nu: &CubeMeasure, rows: impl Fn(Vertex) -> Vec<f64>) -> Vec<f64> {
    let mut acc = vec![0.0; nu.n()];
    for (y, p) in nu.probabilities().into_iter().enumerate() {
        for (a, r) in acc.iter_mut().zip(rows(y)) {
            *a += p * r;
        }
    }
    acc
}

/// Diagonal of Cov_{ν̃}(g_ν) by direct summation.
fn g_variance_diag(nu: &CubeMeasure, tilde: &CubeMeasure) -> Vec<f64> {
    let mean = average_rows(tilde, |y| nu.g(y));
    let second = average_rows(tilde, |y| nu.g(y).into_iter().map(|v| v * v).collect());
    second.iter().zip(&mean).map(|(s, m)| s - m * m).collect()
}

/// Identity suite for cube_core on `trials` random measures with n ∈ [2, max_n].
pub fn cube_identities(seed: u64, trials: usize, max_n: usize) -> Vec<Check> {
    let m = Module::CubeCore;
    let mut gcom: f64 = 0.0;
    let mut tanh: f64 = 0.0;
    let mut partial: f64 = 0.0;
    let mut eta_id: f64 = 0.0;
    let mut half: f64 = 0.0;
    let mut xv: f64 = f64::NEG_INFINITY;
    let mut sandwich: f64 = f64::NEG_INFINITY;
    let mut chain: f64 = f64::NEG_INFINITY;
    let mut sampler: f64 = 0.0;
    let mut flat: f64 = 0.0;
    for k in 0..trials {
        let mut rng = rng_for(seed, stream::VERIFY, k as u64);
        let n = rng.random_range(2..=max_n.max(2));
        let nu = random_measure(n, 1.0, &mut rng);

        let direct = average_rows(&nu, |y| nu.g(y));
        gcom = gcom.max(max_abs_diff(&direct, &nu.center_of_mass()));

        let f = nu.log_density_function().expect("positive density");
        for y in 0..1usize << n {
            let t: Vec<f64> = f.discrete_gradient(y).iter().map(|d| d.tanh()).collect();
            tanh = tanh.max(max_abs_diff(&nu.g(y), &t));
        }

        // ∂ᵢ of the harmonic extension of gᵢe^f at a vertex against e^f gᵢ vᵢ
        let d = nu.shifted_density();
        for y in 0..1usize << n {
            let s = spins(y, n);
            let v = nu.v(&s);
            let g = nu.g(y);
            for i in 0..n {
                let (up, dn) = (y | (1 << i), y & !(1 << i));
                let lhs = 0.5 * (nu.g(up)[i] * d[up] - nu.g(dn)[i] * d[dn]);
                partial = partial.max((lhs - d[y] * g[i] * v[i]).abs());
            }
        }

        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-0.95..0.95)).collect();
        let theta: Vec<f64> = x.iter().map(|v: &f64| v.atanh()).collect();
        let cl = conditional_law(&nu, &x).expect("interior point");
        let tl = nu.tilt(&theta).expect("finite tilt");
        eta_id = eta_id.max(max_abs_diff(&cl.probabilities(), &tl.probabilities()));

        for _ in 0..50 {
            let xh: Vec<f64> = (0..n).map(|_| 0.25 * rng.random_range(-2i32..=2) as f64).collect();
            half = half.max(nu.v(&xh).iter().map(|v| v.abs()).fold(0.0, f64::max) - 2.0);
            let xc: Vec<f64> = (0..n)
                .map(|_| if rng.random_bool(0.2) { spin(rng.random_range(0..2), 0) } else { rng.random_range(-1.0..1.0) })
                .collect();
            for (xi, vi) in xc.iter().zip(nu.v(&xc)) {
                xv = xv.max(xi * vi - 1.0);
            }
        }

        let tilde = random_measure(n, 1.0, &mut rng);
        let th = random_vector(n, 0.7, &mut rng);
        let c = (4.0 * th.iter().map(|v| v.abs()).fold(0.0, f64::max)).exp();
        let a = g_variance_diag(&nu, &tilde);
        let b = g_variance_diag(&nu.tilt(&th).expect("finite tilt"), &tilde);
        for (ai, bi) in a.iter().zip(&b) {
            sandwich = sandwich.max(ai - c * bi).max(bi / c - ai);
        }

        let pf = nu.product_fit().to_measure().expect("product measure");
        chain = chain.max(pf.kl_to_uniform() - nu.kl_to_uniform());

        sampler = sampler.max(max_abs_diff(&SequentialSampler::new(&nu).law(), &nu.probabilities()));

        let mu = CubeMeasure::uniform(n).expect("valid dimension");
        let tilted = mu.tilt(&random_vector(n, 1.5, &mut rng)).expect("finite tilt");
        flat = flat.max(tilted.h_matrix().iter().map(|v| v.abs()).fold(0.0, f64::max));
    }
    vec![
        Check::new(m, "gcom: average of g equals center of mass", gcom, 1e-10, trials),
        Check::new(m, "tanh: g equals tanh of the discrete gradient", tanh, 1e-12, trials),
        Check::new(m, "partial: derivative of the extension of g e^f", partial, 1e-10, trials),
        Check::new(m, "eta: conditional law equals tilt by eta(x)", eta_id, 1e-12, trials),
        Check::new(m, "vtcoord: |v_i| <= 2 on the half cube (excess)", half, 1e-9, trials),
        Check::new(m, "vtcoord: x_i v_i <= 1 (excess)", xv, 1e-9, trials),
        Check::new(m, "HtHt: diagonal sandwich under tilts (excess)", sandwich, 1e-9, trials),
        Check::new(m, "chain: product fit has no larger KL (excess)", chain, 1e-9, trials),
        Check::new(m, "sampler law equals the measure", sampler, 1e-12, trials),
        Check::new(m, "tilts of uniform have H = 0", flat, 1e-12, trials),
    ]
}

fn complexity_checks(seed: u64) -> Result<Vec<Check>> {
    let m = Module::Complexity;
    let mut rng = rng_for(seed, stream::VERIFY, 100);
    // GW({θ, 0}) = |θ|/√(2π)
    let theta = random_vector(6, 1.0, &mut rng);
    let set = GradientSet::from_vectors(std::slice::from_ref(&theta))?;
    let est = gw_monte_carlo(&set, 20_000, seed)?;
    let exact = theta.iter().map(|v| v * v).sum::<f64>().sqrt() / (2.0 * std::f64::consts::PI).sqrt();
    let z = (est.mean - exact).abs() / est.std_error;

    let ising = IsingModel::random(8, 0.3, 0.2, &mut rng);
    let gw = complexity_of(&ising.to_cube_function()?, 4000, seed)?;
    let bound = ising_complexity_bound(ising.a(), ising.b())?;
    Ok(vec![
        Check::new(m, "linear gradient set width (z-score)", z, 4.0, 1),
        Check::new(m, "Ising width below analytic bound (excess)", gw.mean - 3.0 * gw.std_error - bound, 0.0, 1),
    ])
}

fn meanfield_checks(seed: u64) -> Result<Vec<Check>> {
    let m = Module::Meanfield;
    let opts = MeanFieldOptions { seed, restarts: 8, ..Default::default() };
    let mut upper: f64 = f64::NEG_INFINITY;
    for k in 0..3 {
        let mut rng = rng_for(seed, stream::VERIFY, 200 + k);
        let f = random_function(8, 0.5, &mut rng);
        let prob = MeanFieldProblem::new(Objective::Table(f), 0.5, opts.clone())?;
        let r = solve_gibbs(&prob)?;
        upper = upper.max(r.objective - r.log_partition.expect("dense table"));
    }
    let mut rng = rng_for(seed, stream::VERIFY, 210);
    let lin = CubeFunction::linear(&random_vector(6, 0.8, &mut rng))?;
    let prob = MeanFieldProblem::new(Objective::Table(lin), 0.3, opts)?;
    let r = solve_gibbs(&prob)?;
    let gap = (r.objective - r.log_partition.expect("dense table")).abs();
    Ok(vec![
        Check::new(m, "objective below exact log Z (excess)", upper, 1e-9, 3),
        Check::new(m, "product case is exact", gap, 1e-8, 1),
    ])
}

fn transport_checks(seed: u64) -> Result<Vec<Check>> {
    let m = Module::Transport;
    let mut self_gap: f64 = 0.0;
    let mut step1: f64 = f64::NEG_INFINITY;
    let mut product: f64 = 0.0;
    for k in 0..5 {
        let mut rng = rng_for(seed, stream::VERIFY, 300 + k);
        let nu = random_measure(5, 1.0, &mut rng);
        self_gap = self_gap.max(w1_exact(&nu, &nu)?.0.abs());
        let fit = nu.product_fit().to_measure()?;
        step1 = step1.max(w1_exact(&nu, &fit)?.0 - step1_bound(&nu));
        let t = CubeMeasure::uniform(5)?.tilt(&random_vector(5, 1.0, &mut rng))?;
        product = product.max(w1_exact(&t, &t.product_fit().to_measure()?)?.0.abs());
    }
    Ok(vec![
        Check::new(m, "W1 of a measure to itself", self_gap, 1e-9, 5),
        Check::new(m, "W1 to product fit within sqrt(n Tr H) (excess)", step1, 1e-9, 5),
        Check::new(m, "tilts of uniform are products", product, 1e-9, 5),
    ])
}

fn ld_checks(seed: u64) -> Result<Vec<Check>> {
    let m = Module::LdBounds;
    let mut relax: f64 = f64::NEG_INFINITY;
    let mut lower: f64 = f64::NEG_INFINITY;
    let mut upper: f64 = f64::NEG_INFINITY;
    let mut cases = 0;
    for k in 0..3 {
        let mut rng = rng_for(seed, stream::VERIFY, 400 + k);
        let f = random_function(8, 1.0, &mut rng);
        let n = f.n() as f64;
        let lip = f.lip();
        let prob = MeanFieldProblem::new(Objective::Table(f.clone()), 0.5, MeanFieldOptions { seed, ..Default::default() })?;
        for q in [0.3, 0.6, 0.9] {
            let t = (f.mean() + q * (f.max() - f.mean())) / n;
            let solved = rate_function_phi(&prob, t)?;
            let r = phi_relaxed_lower(&f, 0.5, t)?;
            if solved.feasible {
                relax = relax.max(r - solved.phi);
            }
            let delta = 0.05 * (f.max() - f.mean()) / n;
            let (lo, ok) = ld_lower(solved.phi, lip, f.n(), delta)?;
            if ok && solved.feasible {
                lower = lower.max(lo - exact_tail(&f, 0.5, t - delta)?);
            }
            let phi_lo = phi_relaxed_lower(&f, 0.5, t - delta)?;
            if let Ok(up) = ld_upper(phi_lo, lip, 0.0, f.n(), 0.5, delta) {
                if !up.vacuous {
                    upper = upper.max(exact_tail(&f, 0.5, t)? - up.value);
                }
            }
            cases += 1;
        }
    }
    Ok(vec![
        Check::new(m, "relaxed phi below solver phi (excess)", relax, 1e-9, cases),
        Check::new(m, "lower bound below exact tail (excess)", lower.max(0.0), 1e-9, cases),
        Check::new(m, "exact tail below non-vacuous upper bound (excess)", upper.max(0.0), 1e-9, cases),
    ])
}

fn localization_checks(seed: u64) -> Result<Vec<Check>> {
    let m = Module::LocalizationSim;
    let mut htat: f64 = f64::NEG_INFINITY;
    let mut origin: f64 = 0.0;
    for k in 0..5 {
        let mut rng = rng_for(seed, stream::VERIFY, 500 + k);
        let nu = random_measure(5, 1.0, &mut rng);
        let zero = vec![0.0; 5];
        origin = origin.max(max_abs_diff(h_t_matrix(&nu, &zero)?.as_slice(), nu.h_matrix().as_slice()));
        for _ in 0..10 {
            let x: Vec<f64> = uniform_signs(5, &mut rng).iter().map(|u| 0.49 * u).collect();
            let s = sigma_diag(&x, 0.5);
            let (h, a) = (h_t_matrix(&nu, &x)?, a_matrix(&nu, &x)?);
            let tr = |mat: &DMatrix<f64>| (0..5).filter(|&i| s[i]).map(|i| mat[(i, i)]).sum::<f64>();
            htat = htat.max(tr(&h) - 4.0 * tr(&a));
        }
    }
    let mut rng = rng_for(seed, stream::VERIFY, 510);
    let nu = random_measure(4, 1.0, &mut rng);
    let cfg = SdeConfig { seed, dt: 2e-3, ..Default::default() };
    let d = check_paths(&nu, &cfg, 20, 0.5, 1.0, &[2.0], &[0.5])?;
    Ok(vec![
        Check::new(m, "H_0 equals H(nu)", origin, 1e-12, 5),
        Check::new(m, "Tr(sigma H_t) <= 4 Tr(sigma A_t) (excess)", htat, 1e-9, 50),
        Check::new(m, "hull confinement violations along paths", d.hull_violations as f64, 0.0, d.checked_states),
        Check::new(m, "H_t vs A_t violations along paths", d.ht_at_violations as f64, 0.0, d.checked_states),
    ])
}

fn gaussian_checks(seed: u64) -> Result<Vec<Check>> {
    let m = Module::GaussianLsi;
    let single = reverse_lsi_check(&GaussianMixture::single(vec![1.0, -0.5])?, 41, 100, seed)?;
    let mut floor: f64 = f64::NEG_INFINITY;
    let mut violations = 0usize;
    let mut hull: f64 = f64::NEG_INFINITY;
    for k in 0..5 {
        let mut rng = rng_for(seed, stream::VERIFY, 600 + k);
        let nu = GaussianMixture::random(1 + (k as usize) % 2, 3, 2.0, &mut rng)?;
        let rep = reverse_lsi_check(&nu, DEFAULT_NODES, 4000, seed)?;
        floor = floor.max(2.0 * rep.kl - rep.fisher);
        violations += usize::from(!rep.satisfied);
        for _ in 0..50 {
            let x = random_vector(nu.dim(), 4.0, &mut rng);
            let u = random_vector(nu.dim(), 1.0, &mut rng);
            let g = nu.f_grad(&x).1;
            let dot = |a: &[f64]| a.iter().zip(&u).map(|(p, q)| p * q).sum::<f64>();
            let support = nu.centers().iter().map(|c| dot(c)).fold(f64::NEG_INFINITY, f64::max);
            hull = hull.max(dot(&g) - support);
        }
    }
    Ok(vec![
        Check::new(m, "single Gaussian: I - 2KL", single.lhs.abs(), 1e-10, 1),
        Check::new(m, "log-Sobolev floor I >= 2KL (excess)", floor, 1e-9, 5),
        Check::new(m, "reverse LSI violations", violations as f64, 0.0, 5),
        Check::new(m, "gradient in hull of centers (excess)", hull, 1e-9, 250),
    ])
}

fn graphs_checks(seed: u64) -> Result<Vec<Check>> {
    let m = Module::Graphs;
    let mut rng = rng_for(seed, stream::VERIFY, 700);
    let nv = 4;
    let tri = SubgraphModel::triangle(nv)?;
    let f = tri.to_cube_function()?;
    let mixed = SubgraphModel::new(nv, vec![(SimpleGraph::path(2), 0.7), (SimpleGraph::triangle(), -0.4)])?;
    let fm = mixed.to_cube_function()?;
    let mut tri_gap: f64 = 0.0;
    let mut sub_gap: f64 = 0.0;
    for y in 0..1usize << 6 {
        tri_gap = tri_gap.max(max_abs_diff(&tri.subgraph_grad(y), &f.discrete_gradient(y)));
        sub_gap = sub_gap.max(max_abs_diff(&mixed.subgraph_grad(y), &fm.discrete_gradient(y)));
    }
    let mut edge: f64 = 0.0;
    for _ in 0..10 {
        let y: Vertex = rng.random_range(0..1usize << 6);
        let g = Adjacency::from_vertex(nv, y);
        let direct = 2.0 * g.edge_count() as f64 / (nv * nv) as f64;
        edge = edge.max((hom_density(&SimpleGraph::edge(), &g)? - direct).abs());
    }
    Ok(vec![
        Check::new(m, "triangle model gradient equals discrete gradient", tri_gap, 1e-12, 64),
        Check::new(m, "mixed model gradient equals discrete gradient", sub_gap, 1e-12, 64),
        Check::new(m, "edge homomorphism density is 2|E|/N^2", edge, 1e-15, 10),
    ])
}

pub fn verify_module(module: Module, seed: u64) -> Result<Vec<Check>> {
    match module {
        Module::CubeCore => Ok(cube_identities(seed, 20, 6)),
        Module::Complexity => complexity_checks(seed),
        Module::Meanfield => meanfield_checks(seed),
        Module::Transport => transport_checks(seed),
        Module::LdBounds => ld_checks(seed),
        Module::LocalizationSim => localization_checks(seed),
        Module::GaussianLsi => gaussian_checks(seed),
        Module::Graphs => graphs_checks(seed),
    }
}

pub fn verify(modules: &[Module], seed: u64) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    for &m in modules {
        checks.extend(verify_module(m, seed)?);
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { seed, checks, passed })
}

pub fn verify_all(seed: u64) -> Result<VerifyReport> {
    verify(&Module::ALL, seed)
}
