//! Nonlinear large-deviation bounds for f(Y), Y ~ μ_p, and exact tail oracles.

use serde::{Deserialize, Serialize};

use crate::cube::{log_sum_exp, num_vertices, CubeFunction};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdBoundReport {
    pub n: usize,
    pub t: f64,
    pub delta: f64,
    pub p: f64,
    /// φ_p(t − δ) as supplied.
    pub phi_lower_arg: f64,
    /// φ_p(t) as supplied.
    pub phi_at_t: f64,
    pub lip: f64,
    pub complexity: f64,
    #[serde(rename = "L")]
    pub l: f64,
    /// Bound on log P(f ≥ tn); 0 when vacuous.
    pub upper_bound: f64,
    /// Bound on log P(f ≥ (t − δ)n).
    pub lower_bound: f64,
    pub vacuous_upper: bool,
    pub hypothesis_ok_lower: bool,
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Hypothesis(format!("p = {p} must lie in (0,1)")));
    }
    Ok(())
}

fn check_inputs(values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !v.is_finite() || *v < 0.0 {
            return Err(Error::InvalidParameter(format!("{name} = {v} must be finite and nonnegative")));
        }
    }
    Ok(())
}

/// L = (1/δ)(2Lip + |log(p(1−p))|)^{2/3} (2D + Lip²/δ)^{1/3}.
pub fn l_constant(lip: f64, complexity: f64, p: f64, delta: f64) -> f64 {
    let a = 2.0 * lip + (p * (1.0 - p)).ln().abs();
    let b = 2.0 * complexity + lip * lip / delta;
    a.powf(2.0 / 3.0) * b.cbrt() / delta
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperBound {
    pub value: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub vacuous: bool,
}

/// Upper bound on log P(f(Y) ≥ tn) given φ = φ_p(t − δ).
///
/// Requires 0 < δ < φ/n. When 64·L·n^{-1/3} ≥ 1 the bound carries no
/// information and is reported as 0 with `vacuous` set.
pub fn ld_upper(phi: f64, lip: f64, complexity: f64, n: usize, p: f64, delta: f64) -> Result<UpperBound> {
    check_p(p)?;
    check_inputs(&[("Lip", lip), ("complexity", complexity)])?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Hypothesis(format!("0 < delta fails: delta = {delta}")));
    }
    if !(delta < phi / n as f64) {
        return Err(Error::Hypothesis(format!(
            "delta < phi/n fails: delta = {delta}, phi/n = {}",
            phi / n as f64
        )));
    }
    let l = l_constant(lip, complexity, p, delta);
    let factor = 1.0 - 64.0 * l * (n as f64).powf(-1.0 / 3.0);
    if factor <= 0.0 {
        return Ok(UpperBound { value: 0.0, l, vacuous: true });
    }
    Ok(UpperBound { value: -phi * factor, l, vacuous: false })
}

/// Lower bound −φ_p(t)(1 + 2Lip²/(nδ²)) − 2 on log P(f(Y) ≥ (t − δ)n), with
/// the flag recording whether Lip²/(nδ²) ≤ 1/2.
pub fn ld_lower(phi_at_t: f64, lip: f64, n: usize, delta: f64) -> Result<(f64, bool)> {
    check_inputs(&[("Lip", lip)])?;
    if n == 0 || !(delta > 0.0) {
        return Err(Error::InvalidParameter("need n > 0 and delta > 0".into()));
    }
    let r = lip * lip / (n as f64 * delta * delta);
    let value = if phi_at_t == 0.0 { -2.0 } else { -phi_at_t * (1.0 + 2.0 * r) - 2.0 };
    Ok((value, r <= 0.5))
}

/// Both sides of the theorem; errors if the upper-bound hypothesis fails.
#[allow(clippy::too_many_arguments)]
pub fn ld_report(
    phi_lower_arg: f64,
    phi_at_t: f64,
    lip: f64,
    complexity: f64,
    n: usize,
    p: f64,
    t: f64,
    delta: f64,
) -> Result<LdBoundReport> {
    let up = ld_upper(phi_lower_arg, lip, complexity, n, p, delta)?;
    let (lower, ok) = ld_lower(phi_at_t, lip, n, delta)?;
    Ok(LdBoundReport {
        n,
        t,
        delta,
        p,
        phi_lower_arg,
        phi_at_t,
        lip,
        complexity,
        l: up.l,
        upper_bound: up.value,
        lower_bound: lower,
        vacuous_upper: up.vacuous,
        hypothesis_ok_lower: ok,
    })
}

fn log_mup_weights(n: usize, p: f64) -> Vec<f64> {
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    (0..num_vertices(n))
        .map(|y| {
            let k = y.count_ones() as f64;
            k * lp + (n as f64 - k) * lq
        })
        .collect()
}

/// Relative slack used when comparing f(y) with tn.
const EVENT_SLACK: f64 = 1e-12;

fn in_event(fy: f64, level: f64) -> bool {
    fy >= level - EVENT_SLACK * level.abs().max(1.0)
}

/// Exact log P(f(Y) ≥ tn) for Y ~ μ_p; −∞ when the event is empty.
pub fn exact_tail(f: &CubeFunction, p: f64, t: f64) -> Result<f64> {
    check_p(p)?;
    let n = f.n();
    let level = t * n as f64;
    let w = log_mup_weights(n, p);
    let terms: Vec<f64> = (0..num_vertices(n)).filter(|&y| in_event(f.value(y), level)).map(|y| w[y]).collect();
    if terms.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_sum_exp(&terms).min(0.0))
}

/// inf KL(ν ‖ μ_p) over all measures ν with ∫ f dν ≥ tn.
///
/// The product-measure rate function is at least this value, so it is a
/// certified lower bound on φ_p(t). The optimum is the exponential tilt
/// e^{λf}μ_p with the constraint active; λ is found by bisection and the
/// returned value is evaluated at the lower end of the final bracket.
pub fn phi_relaxed_lower(f: &CubeFunction, p: f64, t: f64) -> Result<f64> {
    check_p(p)?;
    let n = f.n();
    let level = t * n as f64;
    let w = log_mup_weights(n, p);
    let size = num_vertices(n);
    let fmax = f.max();
    let mean0: f64 = (0..size).map(|y| w[y].exp() * f.value(y)).sum();
    if level <= mean0 {
        return Ok(0.0);
    }
    if !in_event(fmax, level) {
        return Ok(f64::INFINITY);
    }
    if level >= fmax {
        // only the maximizers qualify
        let top: Vec<f64> = (0..size).filter(|&y| in_event(f.value(y), fmax)).map(|y| w[y]).collect();
        return Ok(-log_sum_exp(&top));
    }
    // (log E e^{λf}, E_λ f)
    let moments = |lam: f64| -> (f64, f64) {
        let terms: Vec<f64> = (0..size).map(|y| w[y] + lam * (f.value(y) - fmax)).collect();
        let lz = log_sum_exp(&terms);
        let mean: f64 = (0..size).map(|y| (terms[y] - lz).exp() * f.value(y)).sum();
        (lz + lam * fmax, mean)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while moments(hi).1 < level {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if moments(mid).1 < level {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    // KL(ν_λ‖μ_p) = λ E_λ f − log E e^{λf} is increasing in λ, so the lower
    // end of the bracket gives a value below the optimum.
    let (lz, mean) = moments(lo);
    Ok((lo * mean - lz).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::meanfield::{rate_function_phi, MeanFieldOptions, MeanFieldProblem, Objective};
    use crate::rng::{rng_for, stream};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn degenerate_constants() {
        let u = ld_upper(3.0, 0.0, 0.0, 16, 0.5, 0.1).unwrap();
        // second factor vanishes
        assert_eq!(u.l, 0.0);
        assert!(!u.vacuous);
        assert_eq!(u.value, -3.0);
    }

    #[test]
    fn triangle_constant() {
        let n = 10.0f64;
        let d = 5.0 * n.powf(0.75);
        let u = ld_upper(2.0, 1.0, d, 10, 0.5, 0.1).unwrap();
        let expect = 10.0 * (2.0 + 4f64.ln()).powf(2.0 / 3.0) * (2.0 * 5.0 * 10f64.powf(0.75) + 10.0).cbrt();
        assert_abs_diff_eq!(u.l, expect, epsilon = 1e-12 * expect);
        assert!(u.vacuous);
        assert_eq!(u.value, 0.0);
    }

    #[test]
    fn hypothesis_violations_are_named() {
        let e = ld_upper(0.5, 1.0, 1.0, 10, 0.5, 0.1).unwrap_err();
        assert!(e.to_string().contains("delta < phi/n"));
        assert!(ld_upper(5.0, 1.0, 1.0, 10, 0.5, 0.0).unwrap_err().to_string().contains("0 < delta"));
        assert!(matches!(ld_upper(5.0, 1.0, 1.0, 10, 1.0, 0.1), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn lower_examples() {
        assert_eq!(ld_lower(3.0, 0.0, 10, 0.2).unwrap(), (-5.0, true));
        assert_eq!(ld_lower(0.0, 7.0, 10, 0.2).unwrap().0, -2.0);
        let (v, ok) = ld_lower(3.0, 1.0, 16, 0.5).unwrap();
        assert_abs_diff_eq!(v, -6.5, epsilon = 1e-15);
        assert!(ok);
        let (v, ok) = ld_lower(1.0, 2.0, 4, 0.5).unwrap();
        assert_abs_diff_eq!(v, -1.0 * (1.0 + 2.0 * 4.0) - 2.0, epsilon = 1e-15);
        assert!(!ok);
    }

    #[test]
    fn tail_examples() {
        let f = CubeFunction::from_spins_fn(6, |s| s.iter().sum()).unwrap();
        assert_eq!(exact_tail(&f, 0.5, -2.0).unwrap(), 0.0);
        assert_abs_diff_eq!(exact_tail(&f, 0.5, 1.0).unwrap(), -6.0 * 2f64.ln(), epsilon = 1e-13);
        assert_eq!(exact_tail(&f, 0.5, 1.01).unwrap(), f64::NEG_INFINITY);
        // all ones under bias p
        assert_abs_diff_eq!(exact_tail(&f, 0.3, 1.0).unwrap(), 6.0 * 0.3f64.ln(), epsilon = 1e-13);
    }

    #[test]
    fn tail_matches_enumeration() {
        let mut rng = rng_for(1, stream::TEST, 70);
        let f = instances::random_function(8, 1.0, &mut rng);
        let p: f64 = 0.35;
        for t in [-0.2, 0.0, 0.1, 0.25] {
            let mut s = 0.0;
            for y in 0..256usize {
                if f.value(y) >= t * 8.0 {
                    let k = y.count_ones() as i32;
                    s += p.powi(k) * (1.0 - p).powi(8 - k);
                }
            }
            let e = exact_tail(&f, p, t).unwrap();
            if s == 0.0 {
                assert_eq!(e, f64::NEG_INFINITY);
            } else {
                assert_abs_diff_eq!(e.exp(), s, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn relaxation_for_linear_function_is_exact() {
        // for f = Σ y_i the optimal measure is a product, so both agree
        let n = 6;
        let f = CubeFunction::from_spins_fn(n, |s| s.iter().sum()).unwrap();
        let p = 0.4;
        let t = 0.3;
        let relaxed = phi_relaxed_lower(&f, p, t).unwrap();
        let m0 = 2.0 * p - 1.0;
        let expect = n as f64 * crate::cube::binary_kl(t, m0);
        assert_abs_diff_eq!(relaxed, expect, epsilon = 1e-9);
        assert_eq!(phi_relaxed_lower(&f, p, -0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(phi_relaxed_lower(&f, p, 1.0).unwrap(), -(n as f64) * p.ln(), epsilon = 1e-12);
        assert_eq!(phi_relaxed_lower(&f, p, 1.5).unwrap(), f64::INFINITY);
    }

    #[test]
    fn relaxation_lies_below_product_rate() {
        let mut rng = rng_for(2, stream::TEST, 70);
        for _ in 0..5 {
            let f = instances::random_lipschitz_function(7, &mut rng);
            let prob = MeanFieldProblem::new(Objective::Table(f.clone()), 0.5, MeanFieldOptions::default()).unwrap();
            let t = 0.5 * (f.mean() + f.max()) / 7.0;
            let phi = rate_function_phi(&prob, t).unwrap();
            let lo = phi_relaxed_lower(&f, 0.5, t).unwrap();
            assert!(lo <= phi.phi + 1e-9, "{lo} > {}", phi.phi);
        }
    }

    proptest! {
        #[test]
        fn l_is_monotone(lip in 0.01f64..5.0, d in 0.0f64..50.0, delta in 0.01f64..2.0, p in 0.05f64..0.95) {
            let l = l_constant(lip, d, p, delta);
            prop_assert!(l >= 0.0);
            prop_assert!(l_constant(lip, d, p, delta * 1.1) <= l);
            prop_assert!(l_constant(lip, d + 1.0, p, delta) >= l);
            prop_assert!(l_constant(lip * 1.1, d, p, delta) >= l);
        }

        #[test]
        fn vacuous_flag_follows_formula(phi in 1.0f64..50.0, lip in 0.0f64..2.0, d in 0.0f64..10.0, n in 1usize..200) {
            let delta = 0.5 * phi / n as f64;
            let u = ld_upper(phi, lip, d, n, 0.5, delta).unwrap();
            let factor = 1.0 - 64.0 * u.l * (n as f64).powf(-1.0 / 3.0);
            prop_assert_eq!(u.vacuous, factor <= 0.0);
            if !u.vacuous {
                prop_assert!((u.value + phi * factor).abs() < 1e-12 * phi);
            }
        }
    }
}
