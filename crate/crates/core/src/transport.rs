//! Wasserstein-1 distance on the cube with Hamming cost, total variation, and
//! the coupling bound for the distance to the product fit.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexity::{estimate_from_samples, GwEstimate};
use crate::cube::{hamming, num_vertices, CubeMeasure, SequentialSampler, Vertex};
use crate::instances::uniform_signs;
use crate::rng::{rng_for, stream};
use crate::{Error, Result};

/// Largest dimension accepted by [`w1_exact`].
pub const MAX_W1_DIM: usize = 10;
/// Atoms lighter than this are dropped before solving.
pub const PRUNE_MASS: f64 = 1e-15;

const EPS: f64 = 1e-15;
const INF_CAP: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub src: Vertex,
    pub dst: Vertex,
    pub mass: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransportPlan {
    pub n: usize,
    pub flows: Vec<Flow>,
    /// Σ mass·Hamming(src, dst).
    pub cost: f64,
    /// Value of the 1-Lipschitz dual potential certifying optimality.
    pub dual_value: f64,
    /// Mass removed by pruning, summed over both measures.
    pub pruned_mass: f64,
}

impl TransportPlan {
    /// Row and column marginals of the plan.
    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let mut a = vec![0.0; num_vertices(self.n)];
        let mut b = vec![0.0; num_vertices(self.n)];
        for f in &self.flows {
            a[f.src] += f.mass;
            b[f.dst] += f.mass;
        }
        (a, b)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("src,dst,mass,hamming\n");
        for f in &self.flows {
            s.push_str(&format!("{},{},{:e},{}\n", f.src, f.dst, f.mass, hamming(f.src, f.dst)));
        }
        s
    }
}

fn pruned_probabilities(nu: &CubeMeasure) -> (Vec<f64>, f64) {
    let mut p = nu.probabilities();
    let mut removed = 0.0;
    for v in p.iter_mut() {
        if *v < PRUNE_MASS {
            removed += *v;
            *v = 0.0;
        }
    }
    let s: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v /= s;
    }
    (p, removed)
}

/// Max-flow on the admissible subgraph of one primal-dual phase.
struct Dinic {
    head: Vec<usize>,
    next: Vec<usize>,
    to: Vec<usize>,
    cap: Vec<f64>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

const NIL: usize = usize::MAX;

impl Dinic {
    fn new(nodes: usize) -> Self {
        Self {
            head: vec![NIL; nodes],
            next: Vec::new(),
            to: Vec::new(),
            cap: Vec::new(),
            level: vec![0; nodes],
            iter: vec![0; nodes],
        }
    }

    fn add(&mut self, u: usize, v: usize, c: f64) -> usize {
        let id = self.to.len();
        self.to.push(v);
        self.cap.push(c);
        self.next.push(self.head[u]);
        self.head[u] = id;
        self.to.push(u);
        self.cap.push(0.0);
        self.next.push(self.head[v]);
        self.head[v] = id + 1;
        id
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            let mut e = self.head[u];
            while e != NIL {
                let v = self.to[e];
                if self.cap[e] > EPS && self.level[v] < 0 {
                    self.level[v] = self.level[u] + 1;
                    q.push_back(v);
                }
                e = self.next[e];
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, u: usize, t: usize, f: f64) -> f64 {
        if u == t {
            return f;
        }
        while self.iter[u] != NIL {
            let e = self.iter[u];
            let v = self.to[e];
            if self.cap[e] > EPS && self.level[v] == self.level[u] + 1 {
                let d = self.dfs(v, t, f.min(self.cap[e]));
                if d > 0.0 {
                    self.cap[e] -= d;
                    self.cap[e ^ 1] += d;
                    return d;
                }
            }
            self.iter[u] = self.next[e];
        }
        0.0
    }

    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        while self.bfs(s, t) {
            self.iter.copy_from_slice(&self.head);
            loop {
                let f = self.dfs(s, t, f64::INFINITY);
                if f <= EPS {
                    break;
                }
                total += f;
            }
        }
        total
    }

    fn flow_on(&self, id: usize) -> f64 {
        self.cap[id ^ 1]
    }
}

/// Net flow along cube edges; `flow[y*n + i]` for y with bit i clear is the
/// flow from y to y | (1 << i) (negative for the reverse direction).
struct EdgeFlow {
    n: usize,
    flow: Vec<f64>,
}

impl EdgeFlow {
    #[inline]
    fn slot(&self, u: usize, i: usize) -> (usize, f64) {
        let lo = u & !(1 << i);
        (lo * self.n + i, if u == lo { 1.0 } else { -1.0 })
    }

    /// Net flow from u to u ^ (1 << i).
    #[inline]
    fn get(&self, u: usize, i: usize) -> f64 {
        let (k, s) = self.slot(u, i);
        s * self.flow[k]
    }

    #[inline]
    fn add(&mut self, u: usize, i: usize, amount: f64) {
        let (k, s) = self.slot(u, i);
        self.flow[k] += s * amount;
    }
}

/// Exact W₁ between two cube measures under Hamming cost.
///
/// Min-cost flow on the cube graph (unit edge costs, Hamming distance is the
/// graph metric) by a primal-dual method: shortest-path potentials followed by
/// a blocking flow on zero-reduced-cost arcs. The final potentials are a
/// 1-Lipschitz dual solution whose value matches the primal cost.
pub fn w1_exact(a: &CubeMeasure, b: &CubeMeasure) -> Result<(f64, TransportPlan)> {
    let n = a.n();
    if b.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.n() });
    }
    if n > MAX_W1_DIM {
        return Err(Error::CapExceeded(format!(
            "exact W1 supports n <= {MAX_W1_DIM}; use w1_upper_coupling for n = {n}"
        )));
    }
    let size = num_vertices(n);
    let (pa, ra) = pruned_probabilities(a);
    let (pb, rb) = pruned_probabilities(b);
    let mut excess: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x - y).collect();
    let mut ef = EdgeFlow { n, flow: vec![0.0; size * n] };
    let mut pi = vec![0i64; size];
    let total: f64 = excess.iter().filter(|&&e| e > 0.0).sum();
    let done_tol = 1e-13;

    let mut phases = 0;
    loop {
        let remaining: f64 = excess.iter().filter(|&&e| e > EPS).sum();
        if remaining <= done_tol * total.max(1.0) {
            break;
        }
        phases += 1;
        if phases > 4 * n + 8 {
            return Err(Error::Solver(format!("transport did not finish after {phases} phases")));
        }
        // shortest reduced distances from all excess nodes
        let mut dist = vec![i64::MAX; size];
        let mut heap = BinaryHeap::new();
        for u in 0..size {
            if excess[u] > EPS {
                dist[u] = 0;
                heap.push(Reverse((0i64, u)));
            }
        }
        let mut reach = i64::MAX;
        while let Some(Reverse((d, u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            if excess[u] < -EPS {
                reach = reach.min(d);
            }
            if d >= reach {
                continue;
            }
            for i in 0..n {
                let v = u ^ (1 << i);
                let mut best = 1 + pi[u] - pi[v];
                if ef.get(v, i) > EPS {
                    best = best.min(-1 + pi[u] - pi[v]);
                }
                let nd = d + best;
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Reverse((nd, v)));
                }
            }
        }
        if reach == i64::MAX {
            return Err(Error::Solver("no augmenting path between excess and deficit".into()));
        }
        for u in 0..size {
            pi[u] += dist[u].min(reach);
        }

        // blocking flow on admissible arcs
        let (src, snk) = (size, size + 1);
        let mut dn = Dinic::new(size + 2);
        let mut arcs: Vec<(usize, usize, usize)> = Vec::new();
        for u in 0..size {
            for i in 0..n {
                let v = u ^ (1 << i);
                let fwd = 1 + pi[u] - pi[v];
                if fwd == 0 {
                    arcs.push((dn.add(u, v, INF_CAP), u, i));
                }
                let back = ef.get(v, i);
                if back > EPS && -1 + pi[u] - pi[v] == 0 {
                    arcs.push((dn.add(u, v, back), u, i));
                }
            }
        }
        let mut supply_arcs = Vec::new();
        for u in 0..size {
            if excess[u] > EPS {
                supply_arcs.push((dn.add(src, u, excess[u]), u, 1.0));
            } else if excess[u] < -EPS {
                supply_arcs.push((dn.add(u, snk, -excess[u]), u, -1.0));
            }
        }
        let pushed = dn.max_flow(src, snk);
        if pushed <= EPS {
            return Err(Error::Solver("phase made no progress".into()));
        }
        for &(id, u, i) in &arcs {
            let f = dn.flow_on(id);
            if f > 0.0 {
                ef.add(u, i, f);
            }
        }
        for &(id, u, sign) in &supply_arcs {
            excess[u] -= sign * dn.flow_on(id);
        }
    }

    // certificate: potentials are 1-Lipschitz; dual value equals primal cost
    let mut primal = 0.0;
    for u in 0..size {
        for i in 0..n {
            let v = u ^ (1 << i);
            if (pi[u] - pi[v]).abs() > 1 {
                return Err(Error::Solver("dual potentials are not 1-Lipschitz".into()));
            }
            if u & (1 << i) == 0 {
                primal += ef.get(u, i).abs();
            }
        }
    }
    let dual: f64 = (0..size).map(|y| pi[y] as f64 * (pb[y] - pa[y])).sum();
    if (primal - dual).abs() > 1e-9 {
        return Err(Error::Solver(format!("duality gap {} exceeds tolerance", primal - dual)));
    }

    let flows = decompose_flow(n, &mut ef, &pa, &pb, &pi);
    let cost: f64 = flows.iter().map(|f| f.mass * hamming(f.src, f.dst) as f64).sum();
    let plan = TransportPlan { n, flows, cost, dual_value: dual, pruned_mass: ra + rb };
    Ok((cost, plan))
}

/// Splits edge flows into source-to-sink paths; potentials strictly increase
/// along flow, so every walk terminates.
fn decompose_flow(n: usize, ef: &mut EdgeFlow, pa: &[f64], pb: &[f64], pi: &[i64]) -> Vec<Flow> {
    let size = pa.len();
    let mut supply: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| (x - y).max(0.0)).collect();
    let mut demand: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| (y - x).max(0.0)).collect();
    let mut pairs: HashMap<(usize, usize), f64> = HashMap::new();
    for y in 0..size {
        let stay = pa[y].min(pb[y]);
        if stay > 0.0 {
            pairs.insert((y, y), stay);
        }
    }
    let mut path = Vec::with_capacity(n + 1);
    for s in 0..size {
        let mut guard = 0;
        while supply[s] > EPS && guard < 4 * size {
            guard += 1;
            path.clear();
            let mut u = s;
            let mut amount = supply[s];
            while demand[u] <= EPS || u == s {
                let step = (0..n)
                    .filter(|&i| ef.get(u, i) > EPS && pi[u ^ (1 << i)] > pi[u])
                    .max_by(|&i, &j| ef.get(u, i).total_cmp(&ef.get(u, j)));
                match step {
                    Some(i) => {
                        amount = amount.min(ef.get(u, i));
                        path.push((u, i));
                        u ^= 1 << i;
                    }
                    None => break,
                }
            }
            if path.is_empty() || demand[u] <= EPS {
                supply[s] = 0.0;
                break;
            }
            amount = amount.min(demand[u]);
            for &(w, i) in &path {
                ef.add(w, i, -amount);
            }
            supply[s] -= amount;
            demand[u] -= amount;
            *pairs.entry((s, u)).or_insert(0.0) += amount;
        }
    }
    let mut flows: Vec<Flow> =
        pairs.into_iter().filter(|(_, m)| *m > 0.0).map(|((src, dst), mass)| Flow { src, dst, mass }).collect();
    flows.sort_by(|x, y| (x.src, x.dst).cmp(&(y.src, y.dst)));
    flows
}

/// Monte-Carlo mean of Hamming(Z, Y) under the threshold coupling of ν with
/// the product measure of mean ∫ g dν; an upper estimate of W₁(ν, product_fit(ν)).
pub fn w1_upper_coupling(nu: &CubeMeasure, samples: usize, seed: u64) -> Result<GwEstimate> {
    if samples < 2 {
        return Err(Error::InvalidParameter("at least two samples are required".into()));
    }
    let sampler = SequentialSampler::new(nu);
    let n = nu.n();
    let d: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng_for(seed, stream::COUPLING, s);
            let u = uniform_signs(n, &mut rng);
            let (z, y) = sampler.sample_coupled(&u);
            hamming(z, y) as f64
        })
        .collect();
    Ok(estimate_from_samples(&d))
}

/// √(n · Tr H(ν)).
pub fn step1_bound(nu: &CubeMeasure) -> f64 {
    (nu.n() as f64 * nu.h_matrix().trace().max(0.0)).sqrt()
}

pub fn tv_distance(a: &CubeMeasure, b: &CubeMeasure) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch { expected: a.n(), got: b.n() });
    }
    Ok(tv_probabilities(&a.probabilities(), &b.probabilities()))
}

/// ½ Σ |p − q| for probability vectors.
pub fn tv_probabilities(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Empirical law from vertex counts.
pub fn empirical_law(n: usize, draws: &[Vertex]) -> Vec<f64> {
    let mut c = vec![0.0; num_vertices(n)];
    for &d in draws {
        c[d] += 1.0;
    }
    let k = draws.len() as f64;
    c.iter_mut().for_each(|v| *v /= k);
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::ProductMeasure;
    use crate::instances;
    use approx::assert_abs_diff_eq;

    fn check_marginals(plan: &TransportPlan, a: &CubeMeasure, b: &CubeMeasure) {
        let (ma, mb) = plan.marginals();
        for y in 0..num_vertices(plan.n) {
            assert!((ma[y] - a.prob(y)).abs() < 1e-10, "row {y}");
            assert!((mb[y] - b.prob(y)).abs() < 1e-10, "column {y}");
        }
        assert!(plan.flows.iter().all(|f| f.mass >= 0.0));
    }

    #[test]
    fn identical_and_antipodal() {
        let mut rng = rng_for(1, stream::TEST, 60);
        let nu = instances::random_measure(5, 1.0, &mut rng);
        let (w, plan) = w1_exact(&nu, &nu).unwrap();
        assert_abs_diff_eq!(w, 0.0, epsilon = 1e-12);
        check_marginals(&plan, &nu, &nu);
        let a = CubeMeasure::point_mass(6, 0).unwrap();
        let b = CubeMeasure::point_mass(6, 63).unwrap();
        let (w, plan) = w1_exact(&a, &b).unwrap();
        assert_abs_diff_eq!(w, 6.0, epsilon = 1e-12);
        assert_eq!(plan.flows, vec![Flow { src: 0, dst: 63, mass: 1.0 }]);
    }

    #[test]
    fn rejects_large_dimension() {
        let a = CubeMeasure::uniform(11).unwrap();
        assert!(matches!(w1_exact(&a, &a), Err(Error::CapExceeded(_))));
    }

    #[test]
    fn plans_are_feasible_and_certified() {
        let mut rng = rng_for(2, stream::TEST, 60);
        for n in [1usize, 3, 6, 8] {
            let a = instances::random_measure(n, 1.5, &mut rng);
            let b = instances::random_measure(n, 1.5, &mut rng);
            let (w, plan) = w1_exact(&a, &b).unwrap();
            check_marginals(&plan, &a, &b);
            assert_abs_diff_eq!(w, plan.dual_value, epsilon = 1e-9);
            assert!(w >= 0.0 && w <= n as f64);
            assert!(plan.to_csv().starts_with("src,dst,mass,hamming\n"));
        }
    }

    #[test]
    fn one_dimensional_closed_form() {
        // on {-1,1}, W1 = |P(+1) - P(+1)'|
        let a = ProductMeasure::new(vec![0.4]).unwrap().to_measure().unwrap();
        let b = ProductMeasure::new(vec![-0.2]).unwrap().to_measure().unwrap();
        assert_abs_diff_eq!(w1_exact(&a, &b).unwrap().0, 0.3, epsilon = 1e-14);
    }

    #[test]
    fn products_and_tilts_couple_exactly() {
        let prod = ProductMeasure::new(vec![0.3, -0.7, 0.1, 0.9]).unwrap().to_measure().unwrap();
        assert_eq!(w1_upper_coupling(&prod, 2000, 1).unwrap().mean, 0.0);
        let tilt = CubeMeasure::uniform(5).unwrap().tilt(&[1.0, -0.3, 0.2, 0.0, 2.0]).unwrap();
        assert_eq!(w1_upper_coupling(&tilt, 2000, 2).unwrap().mean, 0.0);
        assert!(step1_bound(&tilt) < 1e-6);
        assert_eq!(step1_bound(&CubeMeasure::point_mass(4, 3).unwrap()), 0.0);
    }

    #[test]
    fn coupling_dominates_exact_distance() {
        let mut rng = rng_for(3, stream::TEST, 60);
        let nu = instances::random_measure(8, 1.0, &mut rng);
        let fit = nu.product_fit().to_measure().unwrap();
        let (w, _) = w1_exact(&nu, &fit).unwrap();
        let c = w1_upper_coupling(&nu, 20_000, 4).unwrap();
        assert!(c.mean >= w - 3.0 * c.std_error, "{} vs {}", c.mean, w);
    }

    #[test]
    fn tv_examples() {
        let a = CubeMeasure::point_mass(3, 1).unwrap();
        let b = CubeMeasure::point_mass(3, 6).unwrap();
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        assert_abs_diff_eq!(tv_distance(&a, &b).unwrap(), 1.0, epsilon = 1e-15);
        let mut rng = rng_for(4, stream::TEST, 60);
        let x = instances::random_measure(4, 1.0, &mut rng);
        let y = instances::random_measure(4, 1.0, &mut rng);
        let direct: f64 = (0..16).map(|v| (x.prob(v) - y.prob(v)).abs()).sum::<f64>() / 2.0;
        assert_abs_diff_eq!(tv_distance(&x, &y).unwrap(), direct, epsilon = 1e-15);
    }
}
