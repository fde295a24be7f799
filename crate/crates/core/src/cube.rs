//! Functions and measures on the discrete cube {-1,1}^n stored as dense tables.

use std::f64::consts::LN_2;
use std::ops::Deref;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest dimension for which dense tables are built.
pub const MAX_DIM: usize = 20;

/// A vertex of the cube in little-endian bit encoding.
pub type Vertex = usize;

pub fn check_dim(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if n > MAX_DIM {
        return Err(Error::DimensionTooLarge { n, max: MAX_DIM });
    }
    Ok(())
}

#[inline]
pub fn num_vertices(n: usize) -> usize {
    1usize << n
}

/// Coordinate `i` of vertex `y` as ±1.
#[inline]
pub fn spin(y: Vertex, i: usize) -> f64 {
    if (y >> i) & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

pub fn spins(y: Vertex, n: usize) -> Vec<f64> {
    (0..n).map(|i| spin(y, i)).collect()
}

/// Inverse of [`spins`]: positive coordinates become set bits.
pub fn vertex_from_spins(s: &[f64]) -> Vertex {
    s.iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .fold(0, |acc, (i, _)| acc | (1 << i))
}

#[inline]
pub fn hamming(a: Vertex, b: Vertex) -> u32 {
    (a ^ b).count_ones()
}

/// log(exp(a) + exp(b)) with -inf handled.
#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-sum-exp of a slice. Returns -inf for an empty slice or all -inf entries.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = values.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

#[inline]
fn fold_weights(x: f64) -> (f64, f64) {
    (0.5 * (1.0 - x), 0.5 * (1.0 + x))
}

/// Harmonic extension of a table at `x`, folding coordinate 0 first.
pub(crate) fn extend(table: &[f64], x: &[f64]) -> f64 {
    let n = x.len();
    debug_assert_eq!(table.len(), 1 << n);
    if n == 0 {
        return table[0];
    }
    let (a, b) = fold_weights(x[0]);
    let mut buf: Vec<f64> = table.chunks_exact(2).map(|c| a * c[0] + b * c[1]).collect();
    for &xi in &x[1..] {
        let (a, b) = fold_weights(xi);
        let half = buf.len() / 2;
        for j in 0..half {
            buf[j] = a * buf[2 * j] + b * buf[2 * j + 1];
        }
        buf.truncate(half);
    }
    buf[0]
}

/// Scratch buffers for [`extend_grad`].
#[derive(Default, Clone, Debug)]
pub(crate) struct FoldWork {
    levels: Vec<f64>,
    adj_a: Vec<f64>,
    adj_b: Vec<f64>,
}

/// Harmonic extension and its gradient at `x` (reverse-mode pass through the
/// coordinate folds). `grad` must have length `x.len()`.
pub(crate) fn extend_grad(table: &[f64], x: &[f64], grad: &mut [f64], ws: &mut FoldWork) -> f64 {
    let n = x.len();
    let size = table.len();
    debug_assert_eq!(size, 1 << n);
    if n == 0 {
        return table[0];
    }
    ws.levels.resize(size, 0.0);
    let mut offs = [0usize; MAX_DIM + 2];
    {
        let (a, b) = fold_weights(x[0]);
        let lv = &mut ws.levels[..size / 2];
        for (j, c) in table.chunks_exact(2).enumerate() {
            lv[j] = a * c[0] + b * c[1];
        }
    }
    offs[1] = 0;
    for k in 1..n {
        let len_k = size >> k;
        offs[k + 1] = offs[k] + len_k;
        let (a, b) = fold_weights(x[k]);
        let (src, dst) = ws.levels.split_at_mut(offs[k + 1]);
        let src = &src[offs[k]..offs[k] + len_k];
        for j in 0..len_k / 2 {
            dst[j] = a * src[2 * j] + b * src[2 * j + 1];
        }
    }
    let value = ws.levels[offs[n]];

    ws.adj_a.resize(size / 2, 0.0);
    ws.adj_b.resize(size / 2, 0.0);
    ws.adj_a[0] = 1.0;
    let mut cur_is_a = true;
    for k in (0..n).rev() {
        let m = size >> (k + 1);
        let lk: &[f64] = if k == 0 {
            table
        } else {
            &ws.levels[offs[k]..offs[k] + 2 * m]
        };
        let (cur, next) = if cur_is_a {
            (&ws.adj_a, &mut ws.adj_b)
        } else {
            (&ws.adj_b, &mut ws.adj_a)
        };
        let (a, b) = fold_weights(x[k]);
        let mut g = 0.0;
        if k > 0 {
            for j in 0..m {
                let ad = cur[j];
                g += ad * (lk[2 * j + 1] - lk[2 * j]);
                next[2 * j] = ad * a;
                next[2 * j + 1] = ad * b;
            }
        } else {
            for j in 0..m {
                g += cur[j] * (lk[2 * j + 1] - lk[2 * j]);
            }
        }
        grad[k] = 0.5 * g;
        cur_is_a = !cur_is_a;
    }
    value
}

/// Log of the harmonic extension of `exp(log_table)`, computed in log-space.
pub(crate) fn log_extend(log_table: &[f64], x: &[f64]) -> f64 {
    let n = x.len();
    if n == 0 {
        return log_table[0];
    }
    let lw = |xi: f64| {
        let (a, b) = fold_weights(xi);
        (a.ln(), b.ln())
    };
    let (la, lb) = lw(x[0]);
    let mut buf: Vec<f64> = log_table
        .chunks_exact(2)
        .map(|c| log_add_exp(la + c[0], lb + c[1]))
        .collect();
    for &xi in &x[1..] {
        let (la, lb) = lw(xi);
        let half = buf.len() / 2;
        for j in 0..half {
            buf[j] = log_add_exp(la + buf[2 * j], lb + buf[2 * j + 1]);
        }
        buf.truncate(half);
    }
    // ln(0) = -inf combined with -inf entries may produce NaN; treat as zero mass.
    if buf[0].is_nan() {
        f64::NEG_INFINITY
    } else {
        buf[0]
    }
}

fn check_point(x: &[f64], n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
        return Err(Error::InvalidParameter("point must lie in [-1,1]^n".into()));
    }
    Ok(())
}

/// A point of the solid cube [-1,1]^n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InteriorPoint(Vec<f64>);

impl InteriorPoint {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        check_point(&x, x.len())?;
        Ok(Self(x))
    }

    pub fn origin(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn vertex(n: usize, y: Vertex) -> Self {
        Self(spins(y, n))
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for InteriorPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Dense real function on {-1,1}^n.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeFunction {
    n: usize,
    values: Vec<f64>,
}

impl CubeFunction {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        check_dim(n)?;
        if values.len() != num_vertices(n) {
            return Err(Error::InvalidTable(format!(
                "expected {} entries, got {}",
                num_vertices(n),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTable(format!("non-finite entry at vertex {pos}")));
        }
        Ok(Self { n, values })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(Vertex) -> f64) -> Result<Self> {
        check_dim(n)?;
        Self::new(n, (0..num_vertices(n)).map(&mut f).collect())
    }

    /// Builds a table from a function of the ±1 coordinate vector.
    pub fn from_spins_fn(n: usize, mut f: impl FnMut(&[f64]) -> f64) -> Result<Self> {
        check_dim(n)?;
        let mut s = vec![0.0; n];
        Self::from_fn(n, |y| {
            for (i, si) in s.iter_mut().enumerate() {
                *si = spin(y, i);
            }
            f(&s)
        })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::constant(n, 0.0)
    }

    pub fn constant(n: usize, c: f64) -> Result<Self> {
        check_dim(n)?;
        Self::new(n, vec![c; num_vertices(n)])
    }

    /// y ↦ ⟨θ, y⟩.
    pub fn linear(theta: &[f64]) -> Result<Self> {
        Self::from_spins_fn(theta.len(), |s| s.iter().zip(theta).map(|(a, b)| a * b).sum())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn value(&self, y: Vertex) -> f64 {
        self.values[y]
    }

    /// ∂ᵢf(y) = (f(y with yᵢ=+1) − f(y with yᵢ=−1)) / 2.
    #[inline]
    pub fn partial(&self, i: usize, y: Vertex) -> f64 {
        let bit = 1 << i;
        0.5 * (self.values[y | bit] - self.values[y & !bit])
    }

    pub fn discrete_gradient(&self, y: Vertex) -> Vec<f64> {
        (0..self.n).map(|i| self.partial(i, y)).collect()
    }

    /// Gradients at every vertex, row-major (2^n rows of length n).
    pub fn gradient_table(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * self.values.len()];
        for (y, row) in out.chunks_exact_mut(n).enumerate() {
            for (i, r) in row.iter_mut().enumerate() {
                *r = self.partial(i, y);
            }
        }
        out
    }

    pub fn lip(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.n {
            let bit = 1 << i;
            for y in 0..self.values.len() {
                if y & bit == 0 {
                    best = best.max(0.5 * (self.values[y | bit] - self.values[y]).abs());
                }
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Mean under the uniform measure.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn harmonic_extension(&self, x: &InteriorPoint) -> f64 {
        assert_eq!(x.n(), self.n, "point dimension mismatch");
        extend(&self.values, x)
    }

    /// Harmonic extension at an unchecked slice; callers guarantee x ∈ [-1,1]^n.
    pub fn extend_at(&self, x: &[f64]) -> f64 {
        extend(&self.values, x)
    }

    /// Value and gradient of the harmonic extension.
    pub fn extend_with_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.n];
        let mut ws = FoldWork::default();
        let v = extend_grad(&self.values, x, &mut grad, &mut ws);
        (v, grad)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { n: self.n, values: self.values.iter().map(|v| c * v).collect() }
    }

    pub fn to_table(&self) -> CubeTable {
        CubeTable {
            n: self.n,
            values: self.values.iter().map(|&v| Some(v)).collect(),
            kind: TableKind::Function,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_table()).expect("table serialization")
    }

    pub fn from_table(t: CubeTable) -> Result<Self> {
        let values = t
            .values
            .into_iter()
            .map(|v| v.ok_or_else(|| Error::InvalidTable("null entry in function table".into())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(t.n, values)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_table(serde_json::from_str(s)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    Function,
    LogDensity,
}

/// On-disk form of a cube table. `null` entries encode a log-density of -inf.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CubeTable {
    pub n: usize,
    pub values: Vec<Option<f64>>,
    pub kind: TableKind,
}

#[inline]
fn g_coord(fp: f64, fm: f64) -> f64 {
    match (fp.is_finite(), fm.is_finite()) {
        (true, true) => (0.5 * (fp - fm)).tanh(),
        (true, false) => 1.0,
        (false, true) => -1.0,
        (false, false) => 0.0,
    }
}

/// Probability measure on the cube, stored as a log-density relative to the
/// uniform measure. Entries may be -inf (zero-mass vertices).
#[derive(Clone, Debug)]
pub struct CubeMeasure {
    n: usize,
    log_density: Vec<f64>,
    log_z: f64,
    max_log: f64,
    density: Vec<f64>,
}

impl CubeMeasure {
    pub fn from_log_density(n: usize, log_density: Vec<f64>) -> Result<Self> {
        check_dim(n)?;
        if log_density.len() != num_vertices(n) {
            return Err(Error::InvalidTable(format!(
                "expected {} entries, got {}",
                num_vertices(n),
                log_density.len()
            )));
        }
        if log_density.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidTable("log-density must be finite or -inf".into()));
        }
        let max_log = log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max_log == f64::NEG_INFINITY {
            return Err(Error::InvalidTable("measure has no mass".into()));
        }
        let density: Vec<f64> = log_density.iter().map(|&v| (v - max_log).exp()).collect();
        let s: f64 = density.iter().sum();
        let log_z = max_log + s.ln() - n as f64 * LN_2;
        Ok(Self { n, log_density, log_z, max_log, density })
    }

    pub fn from_function(f: &CubeFunction) -> Self {
        Self::from_log_density(f.n(), f.values().to_vec()).expect("finite table")
    }

    /// Measure proportional to nonnegative vertex weights.
    pub fn from_weights(n: usize, weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidTable("weights must be finite and nonnegative".into()));
        }
        Self::from_log_density(n, weights.iter().map(|w| w.ln()).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        check_dim(n)?;
        Self::from_log_density(n, vec![0.0; num_vertices(n)])
    }

    pub fn point_mass(n: usize, y: Vertex) -> Result<Self> {
        check_dim(n)?;
        let mut v = vec![f64::NEG_INFINITY; num_vertices(n)];
        v[y] = 0.0;
        Self::from_log_density(n, v)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Unnormalized log-density as supplied.
    pub fn log_density(&self) -> &[f64] {
        &self.log_density
    }

    /// log of 2^{-n} Σ_y e^{f(y)}.
    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    /// log dν/dμ at y.
    #[inline]
    pub fn normalized_log_density(&self, y: Vertex) -> f64 {
        self.log_density[y] - self.log_z
    }

    /// Normalized log-density as a function table; `None` if some vertex has zero mass.
    pub fn log_density_function(&self) -> Option<CubeFunction> {
        let v: Vec<f64> = (0..self.log_density.len()).map(|y| self.normalized_log_density(y)).collect();
        CubeFunction::new(self.n, v).ok()
    }

    #[inline]
    pub fn prob(&self, y: Vertex) -> f64 {
        (self.log_density[y] - self.log_z - self.n as f64 * LN_2).exp()
    }

    #[inline]
    pub fn log_prob(&self, y: Vertex) -> f64 {
        self.log_density[y] - self.log_z - self.n as f64 * LN_2
    }

    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.log_density.len()).map(|y| self.prob(y)).collect()
    }

    /// e^{f - max f}; values in [0,1] with at least one equal to 1.
    pub fn shifted_density(&self) -> &[f64] {
        &self.density
    }

    pub fn max_log_density(&self) -> f64 {
        self.max_log
    }

    pub fn is_positive(&self) -> bool {
        self.log_density.iter().all(|v| v.is_finite())
    }

    pub fn support_size(&self) -> usize {
        self.log_density.iter().filter(|v| v.is_finite()).count()
    }

    pub fn tilt(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: theta.len() });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("tilt vector must be finite".into()));
        }
        let v = self
            .log_density
            .iter()
            .enumerate()
            .map(|(y, &f)| {
                if f == f64::NEG_INFINITY {
                    f
                } else {
                    f + theta.iter().enumerate().map(|(i, t)| t * spin(y, i)).sum::<f64>()
                }
            })
            .collect();
        Self::from_log_density(self.n, v)
    }

    /// KL(self ‖ other); +inf when self is not absolutely continuous w.r.t. other.
    pub fn kl(&self, other: &CubeMeasure) -> Result<f64> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: other.n });
        }
        let mut acc = 0.0;
        for y in 0..self.log_density.len() {
            if self.log_density[y] == f64::NEG_INFINITY {
                continue;
            }
            if other.log_density[y] == f64::NEG_INFINITY {
                return Ok(f64::INFINITY);
            }
            let lp = self.log_prob(y);
            acc += lp.exp() * (lp - other.log_prob(y));
        }
        Ok(acc.max(0.0))
    }

    /// KL(self ‖ μ) = Σ ν log(dν/dμ).
    pub fn kl_to_uniform(&self) -> f64 {
        let mut acc = 0.0;
        for y in 0..self.log_density.len() {
            if self.log_density[y] == f64::NEG_INFINITY {
                continue;
            }
            acc += self.prob(y) * self.normalized_log_density(y);
        }
        acc.max(0.0)
    }

    /// g_ν(y): coordinate i is (e^{f(y+)} − e^{f(y−)}) / (e^{f(y+)} + e^{f(y−)}).
    pub fn g(&self, y: Vertex) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let bit = 1 << i;
                g_coord(self.log_density[y | bit], self.log_density[y & !bit])
            })
            .collect()
    }

    /// g_ν at every vertex, row-major.
    pub fn g_table(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * self.log_density.len()];
        for (y, row) in out.chunks_exact_mut(n).enumerate() {
            for (i, r) in row.iter_mut().enumerate() {
                let bit = 1 << i;
                *r = g_coord(self.log_density[y | bit], self.log_density[y & !bit]);
            }
        }
        out
    }

    /// Harmonic extension of the density e^{f_ν} at x (equal to 1 at the origin).
    pub fn h(&self, x: &[f64]) -> f64 {
        let shifted = extend(&self.density, x);
        if shifted > 1e-250 {
            shifted * (self.max_log - self.log_z).exp()
        } else {
            (log_extend(&self.log_density, x) - self.log_z).exp()
        }
    }

    /// v_ν(x) = ∇h(x)/h(x); zero vector where h vanishes.
    pub fn v(&self, x: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.n];
        let mut ws = FoldWork::default();
        self.v_into(x, &mut grad, &mut ws);
        grad
    }

    pub(crate) fn v_into(&self, x: &[f64], out: &mut [f64], ws: &mut FoldWork) {
        let h = extend_grad(&self.density, x, out, ws);
        if h > 1e-250 {
            for o in out.iter_mut() {
                *o /= h;
            }
            return;
        }
        self.v_log_space(x, out);
    }

    fn v_log_space(&self, x: &[f64], out: &mut [f64]) {
        let l = log_extend(&self.log_density, x);
        if l == f64::NEG_INFINITY {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let mut xs = x.to_vec();
        for i in 0..self.n {
            let keep = xs[i];
            xs[i] = 1.0;
            let lp = log_extend(&self.log_density, &xs);
            xs[i] = -1.0;
            let lm = log_extend(&self.log_density, &xs);
            xs[i] = keep;
            out[i] = 0.5 * ((lp - l).exp() - (lm - l).exp());
        }
    }

    /// Σ_y ν(y) y.
    pub fn center_of_mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n];
        for y in 0..self.log_density.len() {
            let p = self.prob(y);
            if p == 0.0 {
                continue;
            }
            for (i, mi) in m.iter_mut().enumerate() {
                *mi += p * spin(y, i);
            }
        }
        m
    }

    /// Σ_y ν(y) g_ν(y).
    pub fn g_mean(&self) -> Vec<f64> {
        let n = self.n;
        let g = self.g_table();
        let mut m = vec![0.0; n];
        for (y, row) in g.chunks_exact(n).enumerate() {
            let p = self.prob(y);
            if p == 0.0 {
                continue;
            }
            for (mi, gi) in m.iter_mut().zip(row) {
                *mi += p * gi;
            }
        }
        m
    }

    /// Covariance of g_ν(X) under X ~ ν.
    pub fn h_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let g = self.g_table();
        let gbar = self.g_mean();
        let mut acc = vec![0.0; n * n];
        let mut d = vec![0.0; n];
        for (y, row) in g.chunks_exact(n).enumerate() {
            let p = self.prob(y);
            if p == 0.0 {
                continue;
            }
            for i in 0..n {
                d[i] = row[i] - gbar[i];
            }
            for i in 0..n {
                let pi = p * d[i];
                for j in i..n {
                    acc[i * n + j] += pi * d[j];
                }
            }
        }
        DMatrix::from_fn(n, n, |i, j| if i <= j { acc[i * n + j] } else { acc[j * n + i] })
    }

    pub fn product_fit(&self) -> ProductMeasure {
        ProductMeasure { mean: self.center_of_mass().into_iter().map(|m| m.clamp(-1.0, 1.0)).collect() }
    }

    pub fn to_table(&self) -> CubeTable {
        CubeTable {
            n: self.n,
            values: self.log_density.iter().map(|&v| v.is_finite().then_some(v)).collect(),
            kind: TableKind::LogDensity,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_table()).expect("table serialization")
    }

    /// Accepts both `log_density` and `function` tables (the latter read as a log-density).
    pub fn from_table(t: CubeTable) -> Result<Self> {
        if t.kind == TableKind::Function && t.values.iter().any(|v| v.is_none()) {
            return Err(Error::InvalidTable("null entry in function table".into()));
        }
        let v = t.values.into_iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect();
        Self::from_log_density(t.n, v)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_table(serde_json::from_str(s)?)
    }
}

/// Product measure on the cube with independent coordinates of the given means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductMeasure {
    mean: Vec<f64>,
}

/// Binary KL of a ±1 variable with mean m against one with mean m0; 0·log 0 = 0.
pub fn binary_kl(m: f64, m0: f64) -> f64 {
    let term = |a: f64, b: f64| if a <= 0.0 { 0.0 } else { a * (a / b).ln() };
    term(0.5 * (1.0 + m), 0.5 * (1.0 + m0)) + term(0.5 * (1.0 - m), 0.5 * (1.0 - m0))
}

/// Entropy in nats of a ±1 variable with mean m.
pub fn binary_entropy(m: f64) -> f64 {
    let term = |a: f64| if a <= 0.0 { 0.0 } else { -a * a.ln() };
    term(0.5 * (1.0 + m)) + term(0.5 * (1.0 - m))
}

impl ProductMeasure {
    pub fn new(mean: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        check_point(&mean, mean.len())?;
        Ok(Self { mean })
    }

    pub fn uniform(n: usize) -> Self {
        Self { mean: vec![0.0; n] }
    }

    /// The measure μ_p: each coordinate is +1 with probability p.
    pub fn with_bias(n: usize, p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("bias p={p} must lie in (0,1)")));
        }
        Ok(Self { mean: vec![2.0 * p - 1.0; n] })
    }

    pub fn n(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Probabilities that each coordinate equals +1.
    pub fn up_probabilities(&self) -> Vec<f64> {
        self.mean.iter().map(|m| 0.5 * (1.0 + m)).collect()
    }

    pub fn log_prob(&self, y: Vertex) -> f64 {
        self.mean
            .iter()
            .enumerate()
            .map(|(i, m)| (0.5 * (1.0 + m * spin(y, i))).ln())
            .sum()
    }

    pub fn to_measure(&self) -> Result<CubeMeasure> {
        let n = self.n();
        check_dim(n)?;
        CubeMeasure::from_log_density(n, (0..num_vertices(n)).map(|y| self.log_prob(y)).collect())
    }

    /// Threshold sampling from shared uniforms on [-1,1].
    pub fn sample_with(&self, u: &[f64]) -> Vertex {
        threshold_vertex(&self.mean, u)
    }

    pub fn kl_to_uniform(&self) -> f64 {
        self.mean.iter().map(|&m| binary_kl(m, 0.0)).sum()
    }

    pub fn entropy(&self) -> f64 {
        self.mean.iter().map(|&m| binary_entropy(m)).sum()
    }
}

#[inline]
fn threshold_bit(u: f64, lambda: f64) -> bool {
    lambda > -1.0 && u <= lambda
}

fn threshold_vertex(thresholds: &[f64], u: &[f64]) -> Vertex {
    thresholds
        .iter()
        .zip(u)
        .enumerate()
        .filter(|(_, (&l, &ui))| threshold_bit(ui, l))
        .fold(0, |acc, (i, _)| acc | (1 << i))
}

/// Sequential threshold sampler. Level i of the tree holds, for every prefix
/// of the first i coordinates, the mass of all vertices extending it.
#[derive(Clone, Debug)]
pub struct SequentialSampler {
    n: usize,
    tree: Vec<f64>,
    gbar: Vec<f64>,
}

impl SequentialSampler {
    pub fn new(nu: &CubeMeasure) -> Self {
        let n = nu.n();
        let size = num_vertices(n);
        let mut tree = vec![0.0; 2 * size - 1];
        tree[size - 1..].copy_from_slice(nu.shifted_density());
        for i in (0..n).rev() {
            let lo = (1 << i) - 1;
            let hi = (1 << (i + 1)) - 1;
            for p in 0..(1 << i) {
                tree[lo + p] = tree[hi + p] + tree[hi + (p | (1 << i))];
            }
        }
        Self { n, tree, gbar: nu.g_mean() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn level(&self, i: usize) -> &[f64] {
        &self.tree[(1 << i) - 1..(1 << (i + 1)) - 1]
    }

    /// Conditional mean of coordinate i given the first i coordinates of `prefix`.
    pub fn threshold(&self, i: usize, prefix: Vertex) -> f64 {
        let p = prefix & ((1 << i) - 1);
        let s = self.level(i)[p];
        if s <= 0.0 {
            return 0.0;
        }
        let next = self.level(i + 1);
        ((next[p | (1 << i)] - next[p]) / s).clamp(-1.0, 1.0)
    }

    pub fn sample(&self, u: &[f64]) -> Vertex {
        let mut y = 0;
        for (i, &ui) in u.iter().enumerate().take(self.n) {
            if threshold_bit(ui, self.threshold(i, y)) {
                y |= 1 << i;
            }
        }
        y
    }

    /// (Z, Y): Z from the sequential rule, Y from the constant thresholds ḡ.
    pub fn sample_coupled(&self, u: &[f64]) -> (Vertex, Vertex) {
        (self.sample(u), threshold_vertex(&self.gbar, u))
    }

    pub fn gbar(&self) -> &[f64] {
        &self.gbar
    }

    /// Exact law of [`Self::sample`] under uniform u, from the product of
    /// conditional threshold probabilities.
    pub fn law(&self) -> Vec<f64> {
        (0..num_vertices(self.n))
            .map(|y| {
                (0..self.n)
                    .map(|i| {
                        let l = self.threshold(i, y);
                        let pp = if l <= -1.0 { 0.0 } else { 0.5 * (1.0 + l) };
                        if (y >> i) & 1 == 1 {
                            pp
                        } else {
                            1.0 - pp
                        }
                    })
                    .product()
            })
            .collect()
    }
}

pub fn discrete_gradient(f: &CubeFunction, y: Vertex) -> Vec<f64> {
    f.discrete_gradient(y)
}

pub fn lip(f: &CubeFunction) -> f64 {
    f.lip()
}

pub fn harmonic_extension(f: &CubeFunction, x: &InteriorPoint) -> f64 {
    f.harmonic_extension(x)
}

pub fn tilt(nu: &CubeMeasure, theta: &[f64]) -> Result<CubeMeasure> {
    nu.tilt(theta)
}

pub fn kl(nu1: &CubeMeasure, nu2: &CubeMeasure) -> Result<f64> {
    nu1.kl(nu2)
}

pub fn g_map(nu: &CubeMeasure, y: Vertex) -> Vec<f64> {
    nu.g(y)
}

pub fn v_map(nu: &CubeMeasure, x: &InteriorPoint) -> Vec<f64> {
    nu.v(x)
}

pub fn h_matrix(nu: &CubeMeasure) -> DMatrix<f64> {
    nu.h_matrix()
}

pub fn center_of_mass(nu: &CubeMeasure) -> Vec<f64> {
    nu.center_of_mass()
}

pub fn product_fit(nu: &CubeMeasure) -> ProductMeasure {
    nu.product_fit()
}

pub fn sequential_sample(nu: &CubeMeasure, u: &[f64]) -> Vertex {
    SequentialSampler::new(nu).sample(u)
}

pub fn coupled_sample(nu: &CubeMeasure, u: &[f64]) -> (Vertex, Vertex) {
    SequentialSampler::new(nu).sample_coupled(u)
}

/// ηᵢ(x) = arctanh(xᵢ); defined on the open cube only.
pub fn eta(x: &[f64]) -> Result<Vec<f64>> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            if !v.is_finite() || v.abs() >= 1.0 {
                Err(Error::BoundaryPoint { coord: i })
            } else {
                Ok(v.atanh())
            }
        })
        .collect()
}

/// Sum of the diagonal entries of `a`, sorted decreasingly, from position ⌈k⌉ (1-based) on.
pub fn trace_tail(a: &DMatrix<f64>, k: f64) -> f64 {
    assert!(a.is_square(), "trace_tail needs a square matrix");
    let n = a.nrows();
    let mut d: Vec<f64> = a.diagonal().iter().copied().collect();
    d.sort_by(|x, y| y.total_cmp(x));
    let start = k.ceil().max(1.0);
    if start > n as f64 {
        return 0.0;
    }
    d[start as usize - 1..].iter().sum()
}
