//! Subgraph-count functions on graphs with N vertices, encoded as points of the
//! cube of dimension C(N,2). Coordinate +1 means the edge is present; pairs
//! (i, j) with i < j are indexed lexicographically.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::complexity::estimate_from_samples;
use crate::cube::{check_dim, num_vertices, spin, CubeFunction, CubeMeasure, ProductMeasure, SequentialSampler, Vertex};
use crate::instances::uniform_signs;
use crate::localization::{decompose, SdeConfig, StopRule, TiltMixture};
use crate::rng::{rng_for, stream};
use crate::{Error, Result};

/// Largest number of vertex maps enumerated by the exhaustive counters.
pub const MAP_CAP: f64 = 1e8;

/// The cube discrete gradient of T(G)/N equals this factor times the
/// indicator-scale gradient returned by [`triangle_grad`].
pub const INDICATOR_TO_CUBE: f64 = 0.5;

/// Simple undirected graph on vertices 0..k.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimpleGraph {
    k: usize,
    edges: Vec<(usize, usize)>,
}

impl SimpleGraph {
    pub fn new(k: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut norm = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidParameter(format!("loop at vertex {a}")));
            }
            if a >= k || b >= k {
                return Err(Error::InvalidParameter(format!("edge ({a},{b}) outside {k} vertices")));
            }
            let e = (a.min(b), a.max(b));
            if norm.contains(&e) {
                return Err(Error::InvalidParameter(format!("repeated edge ({},{})", e.0, e.1)));
            }
            norm.push(e);
        }
        Ok(Self { k, edges: norm })
    }

    pub fn edge() -> Self {
        Self { k: 2, edges: vec![(0, 1)] }
    }

    pub fn complete(k: usize) -> Self {
        let edges = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();
        Self { k, edges }
    }

    pub fn triangle() -> Self {
        Self::complete(3)
    }

    /// Path with `len` edges.
    pub fn path(len: usize) -> Self {
        Self { k: len + 1, edges: (0..len).map(|a| (a, a + 1)).collect() }
    }

    /// Parses "u v" lines with 1-based labels; blank lines and `#` comments are skipped.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let edges = parse_edge_list(text)?;
        let k = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
        Self::new(k, edges)
    }

    /// Builds from 1-based edge pairs as found in model files.
    pub fn from_one_based(pairs: &[[usize; 2]]) -> Result<Self> {
        let mut edges = Vec::with_capacity(pairs.len());
        for &[a, b] in pairs {
            if a == 0 || b == 0 {
                return Err(Error::InvalidParameter("vertex labels are 1-based".into()));
            }
            edges.push((a - 1, b - 1));
        }
        let k = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
        Self::new(k, edges)
    }

    pub fn vertex_count(&self) -> usize {
        self.k
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn to_one_based(&self) -> Vec<[usize; 2]> {
        self.edges.iter().map(|&(a, b)| [a + 1, b + 1]).collect()
    }
}

fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(Error::InvalidParameter(format!("line {}: expected two labels", ln + 1)));
        }
        let parse = |s: &str| -> Result<usize> {
            let v: usize = s
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("line {}: bad label {s:?}", ln + 1)))?;
            if v == 0 {
                return Err(Error::InvalidParameter(format!("line {}: labels are 1-based", ln + 1)));
            }
            Ok(v - 1)
        };
        out.push((parse(parts[0])?, parse(parts[1])?));
    }
    Ok(out)
}

pub fn pair_count(n_vertices: usize) -> usize {
    n_vertices * n_vertices.saturating_sub(1) / 2
}

/// Index of the pair {i, j}, i ≠ j, in lexicographic upper-triangle order.
#[inline]
pub fn pair_index(n_vertices: usize, i: usize, j: usize) -> usize {
    let (a, b) = (i.min(j), i.max(j));
    a * (2 * n_vertices - a - 1) / 2 + (b - a - 1)
}

pub fn pairs(n_vertices: usize) -> Vec<(usize, usize)> {
    (0..n_vertices).flat_map(|a| (a + 1..n_vertices).map(move |b| (a, b))).collect()
}

/// Dense symmetric 0/1 adjacency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self { n, bits: vec![false; n * n] }
    }

    pub fn complete(n: usize) -> Self {
        let mut a = Self::empty(n);
        for (i, j) in pairs(n) {
            a.set(i, j, true);
        }
        a
    }

    /// Graph encoded by a cube vertex (bit of pair index set ⇔ edge present).
    pub fn from_vertex(n: usize, y: Vertex) -> Self {
        let mut a = Self::empty(n);
        for (k, (i, j)) in pairs(n).into_iter().enumerate() {
            if (y >> k) & 1 == 1 {
                a.set(i, j, true);
            }
        }
        a
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = Self::empty(n);
        for &(i, j) in edges {
            if i == j || i >= n || j >= n {
                return Err(Error::InvalidParameter(format!("invalid edge ({i},{j}) for {n} vertices")));
            }
            a.set(i, j, true);
        }
        Ok(a)
    }

    /// Reads an edge list with 1-based labels on `n` vertices.
    pub fn from_edge_list(n: usize, text: &str) -> Result<Self> {
        Self::from_edges(n, &parse_edge_list(text)?)
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        self.bits[i * self.n + j] = on;
        self.bits[j * self.n + i] = on;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn to_vertex(&self) -> Result<Vertex> {
        let m = pair_count(self.n);
        if m > usize::BITS as usize - 1 {
            return Err(Error::CapExceeded(format!("{m} pairs do not fit a vertex index")));
        }
        Ok(pairs(self.n)
            .into_iter()
            .enumerate()
            .filter(|(_, (i, j))| self.get(*i, *j))
            .fold(0, |acc, (k, _)| acc | (1 << k)))
    }

    pub fn edge_count(&self) -> usize {
        pairs(self.n).into_iter().filter(|&(i, j)| self.get(i, j)).count()
    }
}

fn map_count(n_vertices: usize, k: usize) -> Result<f64> {
    let c = (n_vertices as f64).powi(k as i32);
    if c > MAP_CAP {
        return Err(Error::CapExceeded(format!(
            "{n_vertices}^{k} vertex maps exceed the enumeration cap {MAP_CAP:e}; use a smaller N"
        )));
    }
    Ok(c)
}

/// Calls `visit` with every map [k] → [n] (odometer order).
fn for_each_map(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    let mut q = vec![0usize; k];
    if n == 0 && k > 0 {
        return;
    }
    loop {
        visit(&q);
        let mut pos = 0;
        loop {
            if pos == k {
                return;
            }
            q[pos] += 1;
            if q[pos] < n {
                break;
            }
            q[pos] = 0;
            pos += 1;
        }
    }
}

/// t(H, G) = Hom(H, G) / N^k by exhaustive enumeration of vertex maps.
pub fn hom_density(h: &SimpleGraph, g: &Adjacency) -> Result<f64> {
    let total = map_count(g.n(), h.vertex_count())?;
    let mut hom = 0u64;
    for_each_map(g.n(), h.vertex_count(), |q| {
        if h.edges().iter().all(|&(a, b)| g.get(q[a], q[b])) {
            hom += 1;
        }
    });
    Ok(hom as f64 / total)
}

pub fn triangle_count(g: &Adjacency) -> usize {
    let n = g.n();
    let mut t = 0;
    for i in 0..n {
        for j in i + 1..n {
            if !g.get(i, j) {
                continue;
            }
            for k in j + 1..n {
                if g.get(i, k) && g.get(j, k) {
                    t += 1;
                }
            }
        }
    }
    t
}

/// T(G)/N for the graph encoded by `y`.
pub fn triangle_f(n_vertices: usize, y: Vertex) -> f64 {
    triangle_count(&Adjacency::from_vertex(n_vertices, y)) as f64 / n_vertices as f64
}

/// Upper-triangle entries of A²/N (common-neighbour counts over N), the
/// gradient of T/N with respect to 0/1 edge indicators.
pub fn triangle_grad(n_vertices: usize, y: Vertex) -> Vec<f64> {
    let g = Adjacency::from_vertex(n_vertices, y);
    let n = n_vertices;
    pairs(n)
        .into_iter()
        .map(|(i, j)| (0..n).filter(|&k| g.get(i, k) && g.get(k, j)).count() as f64 / n as f64)
        .collect()
}

/// A pattern term β·t(H, ·) with its edge-placement classes: every vertex map
/// without loops, grouped by the set of graph pairs it covers.
#[derive(Clone, Debug)]
struct Term {
    graph: SimpleGraph,
    beta: f64,
    /// (sorted distinct pair indices, number of maps) in deterministic order
    classes: Vec<(Vec<u32>, f64)>,
    /// N^{-k}
    norm: f64,
}

impl Term {
    fn new(graph: SimpleGraph, beta: f64, n_vertices: usize) -> Result<Self> {
        let total = map_count(n_vertices, graph.vertex_count())?;
        let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
        let mut buf = Vec::with_capacity(graph.edge_count());
        for_each_map(n_vertices, graph.vertex_count(), |q| {
            buf.clear();
            for &(a, b) in graph.edges() {
                if q[a] == q[b] {
                    return;
                }
                buf.push(pair_index(n_vertices, q[a], q[b]) as u32);
            }
            buf.sort_unstable();
            buf.dedup();
            *counts.entry(buf.clone()).or_insert(0) += 1;
        });
        let mut classes: Vec<(Vec<u32>, f64)> = counts.into_iter().map(|(k, c)| (k, c as f64)).collect();
        classes.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self { graph, beta, classes, norm: 1.0 / total })
    }
}

/// JSON model description with 1-based edge labels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubgraphModelSpec {
    #[serde(rename = "N")]
    pub n_vertices: usize,
    pub terms: Vec<TermSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermSpec {
    pub edges: Vec<[usize; 2]>,
    pub beta: f64,
}

/// f(y) = N² Σ βᵢ t(Hᵢ, G_y) on the cube of dimension C(N, 2).
#[derive(Clone, Debug)]
pub struct SubgraphModel {
    n_vertices: usize,
    terms: Vec<Term>,
}

impl SubgraphModel {
    pub fn new(n_vertices: usize, terms: Vec<(SimpleGraph, f64)>) -> Result<Self> {
        if n_vertices < 2 {
            return Err(Error::InvalidParameter("graphs need at least two vertices".into()));
        }
        let terms = terms
            .into_iter()
            .map(|(g, beta)| {
                if !beta.is_finite() {
                    return Err(Error::InvalidParameter("coefficients must be finite".into()));
                }
                Term::new(g, beta, n_vertices)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n_vertices, terms })
    }

    pub fn from_spec(spec: &SubgraphModelSpec) -> Result<Self> {
        let terms = spec
            .terms
            .iter()
            .map(|t| Ok((SimpleGraph::from_one_based(&t.edges)?, t.beta)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec.n_vertices, terms)
    }

    pub fn to_spec(&self) -> SubgraphModelSpec {
        SubgraphModelSpec {
            n_vertices: self.n_vertices,
            terms: self.terms.iter().map(|t| TermSpec { edges: t.graph.to_one_based(), beta: t.beta }).collect(),
        }
    }

    /// Triangle model normalized as T(G)/N, i.e. β = 1/6 on K₃.
    pub fn triangle(n_vertices: usize) -> Result<Self> {
        Self::new(n_vertices, vec![(SimpleGraph::triangle(), 1.0 / 6.0)])
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    /// Cube dimension C(N, 2).
    pub fn n(&self) -> usize {
        pair_count(self.n_vertices)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&SimpleGraph, f64)> {
        self.terms.iter().map(|t| (&t.graph, t.beta))
    }

    /// Σ |βᵢ|·|E(Hᵢ)|.
    pub fn weighted_edge_sum(&self) -> f64 {
        self.terms.iter().map(|t| t.beta.abs() * t.graph.edge_count() as f64).sum()
    }

    fn scale(&self, t: &Term) -> f64 {
        (self.n_vertices * self.n_vertices) as f64 * t.beta * t.norm
    }

    /// ∫ f dξ for independent edges with P(edge e) = pₑ.
    pub fn expect_probabilities(&self, p: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let s: f64 = t.classes.iter().map(|(c, k)| k * c.iter().map(|&e| p[e as usize]).product::<f64>()).sum();
                self.scale(t) * s
            })
            .sum()
    }

    /// ∫ f dξ for the product measure with mean vector m.
    pub fn expect_product(&self, m: &[f64]) -> f64 {
        let p: Vec<f64> = m.iter().map(|v| 0.5 * (1.0 + v)).collect();
        self.expect_probabilities(&p)
    }

    /// Gradient of [`Self::expect_product`] with respect to the means.
    pub fn grad_product(&self, m: &[f64]) -> Vec<f64> {
        let p: Vec<f64> = m.iter().map(|v| 0.5 * (1.0 + v)).collect();
        let mut grad = vec![0.0; m.len()];
        for t in &self.terms {
            let s = 0.5 * self.scale(t);
            for (c, k) in &t.classes {
                for (pos, &e) in c.iter().enumerate() {
                    let others: f64 = c
                        .iter()
                        .enumerate()
                        .filter(|&(q, _)| q != pos)
                        .map(|(_, &x)| p[x as usize])
                        .product();
                    grad[e as usize] += s * k * others;
                }
            }
        }
        grad
    }

    pub fn value(&self, y: Vertex) -> f64 {
        let p: Vec<f64> = (0..self.n()).map(|i| if (y >> i) & 1 == 1 { 1.0 } else { 0.0 }).collect();
        self.expect_probabilities(&p)
    }

    /// Exact discrete gradient at the graph encoded by `y`.
    pub fn subgraph_grad(&self, y: Vertex) -> Vec<f64> {
        let s: Vec<f64> = (0..self.n()).map(|i| spin(y, i)).collect();
        self.grad_product(&s)
    }

    pub fn to_cube_function(&self) -> Result<CubeFunction> {
        let n = self.n();
        check_dim(n)?;
        CubeFunction::new(n, (0..num_vertices(n)).map(|y| self.value(y)).collect())
    }

    /// max_y f(y) when it can be determined without search.
    pub fn max_value(&self) -> Option<f64> {
        let full = vec![1.0; self.n()];
        if self.terms.iter().all(|t| t.beta >= 0.0) {
            return Some(self.expect_product(&full));
        }
        if self.terms.iter().all(|t| t.beta <= 0.0) {
            return Some(self.expect_product(&vec![-1.0; self.n()]));
        }
        if self.n() <= 20 {
            return self.to_cube_function().ok().map(|f| f.max());
        }
        None
    }

    /// Monte-Carlo-free check value: ∫ f dμ_p at constant edge probability.
    pub fn expect_constant(&self, p: f64) -> f64 {
        self.expect_probabilities(&vec![p; self.n()])
    }
}

pub const MAX_ERGM_VERTICES: usize = 6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyBudget {
    /// Ent(G) for the exponential random graph itself.
    pub graph_entropy: f64,
    /// Ent(G′) for the mixture law G(N, ρ).
    pub mixture_law_entropy: f64,
    /// Σ weight · I(p⃗(θ)).
    pub mean_edge_entropy: f64,
    pub mean_edge_entropy_std_error: f64,
    /// ε·C(N,2).
    pub allowance: f64,
    /// Three standard errors of the atom average.
    pub tolerance: f64,
    /// allowance + tolerance − (Ent(G′) − Σ weight · I).
    pub slack: f64,
    /// Same slack with Ent(G) in place of Ent(G′).
    pub graph_slack: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HammingReport {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
    /// 20·C(N,2)^{11/12}·ε^{−1/3}·(Σ|β||E(H)|)^{1/3}.
    pub bound: f64,
    pub within_bound: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErgmDecomposition {
    pub n_vertices: usize,
    pub n: usize,
    pub eps: f64,
    /// ε handed to the localization stop rule.
    pub decomposition_eps: f64,
    pub mixture: TiltMixture,
    /// p⃗(θ) per atom: edge probabilities of the product fit of tilt_θ ν.
    pub edge_probabilities: Vec<Vec<f64>>,
    pub reconstruction_tv: f64,
    pub entropy: EntropyBudget,
    pub hamming: HammingReport,
}

/// 20·C(N,2)^{11/12}·ε^{−1/3}·(Σ|β||E(H)|)^{1/3}.
pub fn ergm_hamming_bound(model: &SubgraphModel, eps: f64) -> f64 {
    20.0 * (model.n() as f64).powf(11.0 / 12.0) * eps.powf(-1.0 / 3.0) * model.weighted_edge_sum().cbrt()
}

fn edge_entropy(p: &[f64]) -> f64 {
    p.iter()
        .map(|&q| {
            let h = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
            h(q) + h(1.0 - q)
        })
        .sum()
}

/// ε-mixture decomposition of the exponential random graph of `model`.
///
/// Atoms come from `paths` localization paths stopped at T_ε with ε/2 (capped
/// below 1/16), each mapped to the product fit of its tilt. One coupled draw
/// per atom pairs G ~ tilt_θ ν with G′ ~ G(N, p⃗(θ)).
pub fn ergm_decompose(model: &SubgraphModel, eps: f64, paths: usize, seed: u64) -> Result<ErgmDecomposition> {
    if model.n_vertices() > MAX_ERGM_VERTICES {
        return Err(Error::CapExceeded(format!(
            "ERGM decomposition builds a dense table; N = {} exceeds {MAX_ERGM_VERTICES}",
            model.n_vertices()
        )));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must lie in (0, 1/2)")));
    }
    if paths < 2 {
        return Err(Error::InvalidParameter("at least two paths are required".into()));
    }
    let n = model.n();
    let f = model.to_cube_function()?;
    let nu = CubeMeasure::from_log_density(n, f.values().to_vec())?;
    let decomposition_eps = (0.5 * eps).min(0.0624);
    let cfg = SdeConfig { seed, eps: decomposition_eps, stop: StopRule::TEps, ..Default::default() };
    let mixture = decompose(&nu, &cfg, paths)?;

    let per_atom: Vec<Result<(Vec<f64>, f64, f64)>> = mixture
        .atoms
        .par_iter()
        .enumerate()
        .map(|(k, a)| {
            let tilted = nu.tilt(&a.theta)?;
            let sampler = SequentialSampler::new(&tilted);
            let p: Vec<f64> = sampler.gbar().iter().map(|m| 0.5 * (1.0 + m)).collect();
            let mut rng = rng_for(seed, stream::ERGM, k as u64);
            let (y, y2) = sampler.sample_coupled(&uniform_signs(n, &mut rng));
            let ent = edge_entropy(&p);
            Ok((p, ent, (y ^ y2).count_ones() as f64))
        })
        .collect();
    let per_atom: Vec<(Vec<f64>, f64, f64)> = per_atom.into_iter().collect::<Result<_>>()?;

    let mut law = vec![0.0; num_vertices(n)];
    for ((p, _, _), a) in per_atom.iter().zip(&mixture.atoms) {
        let pm = ProductMeasure::new(p.iter().map(|q| 2.0 * q - 1.0).collect())?;
        for (y, l) in law.iter_mut().enumerate() {
            *l += a.weight * pm.log_prob(y).exp();
        }
    }
    let mixture_law_entropy: f64 = law.iter().filter(|&&q| q > 0.0).map(|q| -q * q.ln()).sum();
    let graph_entropy = n as f64 * std::f64::consts::LN_2 - nu.kl_to_uniform();

    let ents: Vec<f64> = per_atom.iter().map(|t| t.1).collect();
    let e = estimate_from_samples(&ents);
    let mean_edge_entropy: f64 = per_atom.iter().zip(&mixture.atoms).map(|(t, a)| a.weight * t.1).sum();
    let allowance = eps * n as f64;
    let tolerance = 3.0 * e.std_error;
    let slack = allowance + tolerance - (mixture_law_entropy - mean_edge_entropy);
    let graph_slack = allowance + tolerance - (graph_entropy - mean_edge_entropy);

    let d: Vec<f64> = per_atom.iter().map(|t| t.2).collect();
    let dh = estimate_from_samples(&d);
    let bound = ergm_hamming_bound(model, eps);
    let reconstruction_tv = mixture.reconstruction_tv(&nu)?;
    Ok(ErgmDecomposition {
        n_vertices: model.n_vertices(),
        n,
        eps,
        decomposition_eps,
        edge_probabilities: per_atom.into_iter().map(|t| t.0).collect(),
        mixture,
        reconstruction_tv,
        entropy: EntropyBudget {
            graph_entropy,
            mixture_law_entropy,
            mean_edge_entropy,
            mean_edge_entropy_std_error: e.std_error,
            allowance,
            tolerance,
            slack,
            graph_slack,
            holds: slack >= 0.0 && graph_slack >= 0.0,
        },
        hamming: HammingReport {
            mean: dh.mean,
            std_error: dh.std_error,
            samples: dh.samples,
            bound,
            within_bound: dh.mean <= bound,
        },
    })
}
