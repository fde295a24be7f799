//! Ising models f(σ) = ½⟨σ, Aσ⟩ + ⟨b, σ⟩ with A symmetric and zero on the diagonal,
//! so that the discrete gradient is ∇f(σ) = Aσ + b.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cube::{check_dim, num_vertices, CubeFunction};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct IsingModel {
    a: DMatrix<f64>,
    b: Vec<f64>,
}

/// JSON form: {"A": [[...], ...], "b": [...]}.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IsingSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<f64>,
}

pub(crate) fn validate_coupling(a: &DMatrix<f64>, b: &[f64]) -> Result<()> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(Error::InvalidParameter("coupling matrix must be square".into()));
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("coupling entries must be finite".into()));
    }
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        if a[(i, i)] != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "coupling matrix must have zero diagonal (entry {i} is {})",
                a[(i, i)]
            )));
        }
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidParameter(format!("coupling matrix not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

impl IsingModel {
    pub fn new(a: DMatrix<f64>, b: Vec<f64>) -> Result<Self> {
        if a.nrows() == 0 {
            return Err(Error::InvalidParameter("empty coupling matrix".into()));
        }
        validate_coupling(&a, &b)?;
        Ok(Self { a, b })
    }

    /// A = (β/n)(J − I), b = h·1.
    pub fn curie_weiss(n: usize, beta: f64, field: f64) -> Self {
        let c = beta / n as f64;
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { c });
        Self { a, b: vec![field; n] }
    }

    /// Gaussian couplings of size scale/√n and fields of size `field_scale`.
    pub fn random<R: Rng + ?Sized>(n: usize, scale: f64, field_scale: f64, rng: &mut R) -> Self {
        let s = scale / (n as f64).sqrt();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let v = s * rng.sample::<f64, _>(StandardNormal);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let b = (0..n).map(|_| field_scale * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { a, b }
    }

    pub fn from_spec(spec: IsingSpec) -> Result<Self> {
        let n = spec.a.len();
        if spec.a.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidParameter("coupling matrix rows must have equal length".into()));
        }
        let a = DMatrix::from_fn(n, n, |i, j| spec.a[i][j]);
        let b = if spec.b.is_empty() { vec![0.0; n] } else { spec.b };
        Self::new(a, b)
    }

    pub fn to_spec(&self) -> IsingSpec {
        let n = self.n();
        IsingSpec { a: (0..n).map(|i| (0..n).map(|j| self.a[(i, j)]).collect()).collect(), b: self.b.clone() }
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn energy(&self, s: &[f64]) -> f64 {
        let n = self.n();
        let mut acc = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.a[(i, j)] * s[j];
            }
            acc += s[i] * (0.5 * row + self.b[i]);
        }
        acc
    }

    /// Aσ + b; also the gradient of the product expectation at mean σ.
    pub fn gradient(&self, s: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|i| (0..n).map(|j| self.a[(i, j)] * s[j]).sum::<f64>() + self.b[i]).collect()
    }

    /// ∫ f dξ for the product measure ξ with mean m (exact, as diag(A) = 0).
    pub fn expect_product(&self, m: &[f64]) -> f64 {
        self.energy(m)
    }

    /// Dense table, filled in Gray-code order with O(n) updates per vertex.
    pub fn to_cube_function(&self) -> Result<CubeFunction> {
        let n = self.n();
        check_dim(n)?;
        let mut s = vec![-1.0; n];
        let mut field: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| self.a[(i, j)]).sum::<f64>()).collect();
        let mut e = self.energy(&s);
        let mut values = vec![0.0; num_vertices(n)];
        values[0] = e;
        let mut y = 0usize;
        for k in 1..num_vertices(n) {
            let i = k.trailing_zeros() as usize;
            e -= 2.0 * s[i] * (field[i] + self.b[i]);
            s[i] = -s[i];
            for j in 0..n {
                field[j] += 2.0 * s[i] * self.a[(j, i)];
            }
            y ^= 1 << i;
            values[y] = e;
        }
        CubeFunction::new(n, values)
    }

    /// U(A) + max |bᵢ| with U the maximal row ℓ¹ norm.
    pub fn lip_bound(&self) -> f64 {
        crate::complexity::row_sum_norm(&self.a) + self.b.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}
