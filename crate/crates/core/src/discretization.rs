//! Zero-order-hold discretization of diagonal systems and the three rules for
//! choosing the sampling interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{phi, softplus, ComplexDiag, C64};

/// Discrete-time diagonal pair `(exp(delta A), A^-1 (exp(delta A) - I) B)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePair {
    pub a_bar: ComplexDiag,
    pub b_bar: Vec<C64>,
}

/// ZOH discretization of one input column.
///
/// `b_bar[m] = delta * phi(delta * a[m]) * b[m]`, which equals
/// `a[m]^-1 (e^{delta a[m]} - 1) b[m]` but stays defined as `delta * a -> 0`.
pub fn zoh(a: &ComplexDiag, b: &[C64], delta: f64) -> Result<DiscretePair> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("sampling interval must be >= 0, got {delta}")));
    }
    if b.len() != a.len() {
        return Err(Error::shape(format!("input column of length {}", a.len()), b.len()));
    }
    if delta > 0.0 {
        a.check_stable()?;
    }
    let mut a_bar = Vec::with_capacity(a.len());
    let mut b_bar = Vec::with_capacity(a.len());
    for (&am, &bm) in a.entries().iter().zip(b) {
        let (ab, g) = zoh_scalar(am, delta);
        a_bar.push(ab);
        b_bar.push(g * bm);
    }
    Ok(DiscretePair {
        a_bar: ComplexDiag(a_bar),
        b_bar,
    })
}

/// `(exp(delta a), (exp(delta a) - 1) / a)` for one diagonal entry.
#[inline]
pub(crate) fn zoh_scalar(a: C64, delta: f64) -> (C64, C64) {
    let z = a * delta;
    if z.norm_sqr() <= crate::numerics::PHI_SERIES_RADIUS * crate::numerics::PHI_SERIES_RADIUS {
        return (z.exp(), phi(z) * delta);
    }
    if z.im == 0.0 {
        let em1 = z.re.exp_m1();
        return (C64::new(em1 + 1.0, 0.0), C64::new(em1 / a.re, 0.0));
    }
    let em1 = crate::numerics::expm1(z);
    (em1 + 1.0, em1 / a)
}

/// S4D's reparameterized interval `exp(b)`.
pub fn s4d_delta(b_param: f64) -> f64 {
    b_param.exp()
}

/// S6 interval `softplus(<w, u_k> + b)`.
pub fn s6_delta(w: &[f64], u_k: &[f64], b_channel: f64) -> Result<f64> {
    if w.len() != u_k.len() {
        return Err(Error::shape(format!("input of width {}", w.len()), u_k.len()));
    }
    softplus(dot(w, u_k) + b_channel)
}

/// Per-block B2S6 interval; identical to [`s6_delta`] on the block's slice.
pub fn b2s6_delta(jw: &[f64], ju_k: &[f64], jb_channel: f64) -> Result<f64> {
    s6_delta(jw, ju_k, jb_channel)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian, RngSpec};
    use proptest::prelude::*;

    fn diag(v: &[(f64, f64)]) -> ComplexDiag {
        ComplexDiag(v.iter().map(|&(r, i)| C64::new(r, i)).collect())
    }

    #[test]
    fn zoh_half_decay() {
        let p = zoh(&diag(&[(-1.0, 0.0)]), &[C64::new(1.0, 0.0)], std::f64::consts::LN_2).unwrap();
        assert!((p.a_bar.0[0] - 0.5).norm() < 1e-15);
        assert!((p.b_bar[0] - 0.5).norm() < 1e-15);
    }

    #[test]
    fn zoh_zero_delta_is_identity() {
        let a = diag(&[(-1.0, 2.0), (-0.3, 0.0)]);
        let p = zoh(&a, &[C64::new(1.0, -1.0), C64::new(2.0, 0.0)], 0.0).unwrap();
        assert!(p.a_bar.0.iter().all(|&x| x == C64::new(1.0, 0.0)));
        assert!(p.b_bar.iter().all(|&x| x == C64::new(0.0, 0.0)));
    }

    #[test]
    fn zoh_rejects_negative_delta_and_bad_shapes() {
        let a = diag(&[(-1.0, 0.0)]);
        assert!(matches!(zoh(&a, &[C64::new(1.0, 0.0)], -0.1), Err(Error::Domain(_))));
        assert!(matches!(zoh(&a, &[], 0.1), Err(Error::Shape(_))));
        assert!(zoh(&diag(&[(0.5, 0.0)]), &[C64::new(1.0, 0.0)], 0.1).is_err());
    }

    /// Direct formula `a^-1 (e^{delta a} - 1) b` summed as a 40-term series in
    /// compensated arithmetic; for |delta a| ~ 0.03 the terms fall below 1e-60.
    fn oracle_b_bar(a: C64, b: C64, delta: f64) -> C64 {
        let z = a * delta;
        let mut term = C64::new(delta, 0.0);
        let mut sum = C64::new(0.0, 0.0);
        let mut comp = C64::new(0.0, 0.0);
        for k in 1..40 {
            let y = term - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            term = term * z / (k as f64 + 1.0);
        }
        sum * b
    }

    #[test]
    fn zoh_matches_series_oracle() {
        let a = C64::new(-0.5, 3.0);
        let b = C64::new(1.0, -1.0);
        let p = zoh(&ComplexDiag(vec![a]), &[b], 0.01).unwrap();
        let want = oracle_b_bar(a, b, 0.01);
        assert!((p.b_bar[0] - want).norm() <= 1e-15 * want.norm());
        let direct = ((a * 0.01).exp() - 1.0) / a * b;
        assert!((p.b_bar[0] - direct).norm() <= 1e-12 * want.norm());
    }

    #[test]
    fn s4d_delta_values() {
        assert_eq!(s4d_delta(0.0), 1.0);
        assert!((s4d_delta(-6.907755279) - 0.001).abs() < 1e-12);
        assert!((s4d_delta(0.05f64.ln()) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn s6_delta_values() {
        let ln2 = std::f64::consts::LN_2;
        assert_eq!(s6_delta(&[0.0, 0.0], &[4.0, -2.0], 0.0).unwrap(), ln2);
        assert_eq!(s6_delta(&[1.0, 0.0], &[3.0, 5.0], -3.0).unwrap(), ln2);
        // scalar evaluation: log(1 + e^0.5)
        let want = (1.0 + 0.5f64.exp()).ln();
        let got = s6_delta(&[0.2, -0.1], &[1.0, 2.0], 0.5).unwrap();
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.974_076_984).abs() < 1e-9);
        assert!(matches!(s6_delta(&[1.0], &[1.0, 2.0], 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn b2s6_delta_reduces_to_s6() {
        let w = gaussian(RngSpec::new(3), 0.0, 1.0, 6).unwrap();
        let u = gaussian(RngSpec::new(4), 0.0, 1.0, 6).unwrap();
        assert_eq!(b2s6_delta(&w, &u, 0.3).unwrap(), s6_delta(&w, &u, 0.3).unwrap());
        assert_eq!(b2s6_delta(&[0.0; 3], &u[..3], 0.3).unwrap(), softplus(0.3).unwrap());
        // slicing oracle: block 2 of width 3
        let direct = softplus(w[3] * u[3] + w[4] * u[4] + w[5] * u[5] - 1.0).unwrap();
        assert_eq!(b2s6_delta(&w[3..], &u[3..], -1.0).unwrap(), direct);
    }

    proptest! {
        #[test]
        fn small_delta_is_first_order(re in -10.0f64..-0.01, im in -7.0f64..7.0,
                                      br in -1.0f64..1.0, bi in -1.0f64..1.0,
                                      delta in 1e-7f64..1e-3) {
            let a = C64::new(re, im);
            prop_assume!(a.norm() <= 10.0);
            let b = C64::new(br, bi);
            let p = zoh(&ComplexDiag(vec![a]), &[b], delta).unwrap();
            // |b_bar - delta b| <= |a| |b| delta^2 (1/2 + small)
            prop_assert!((p.b_bar[0] - b * delta).norm() <= a.norm() * b.norm().max(1e-12) * delta * delta);
        }

        #[test]
        fn a_bar_semigroup(re in -5.0f64..-0.01, im in -5.0f64..5.0, s in 1e-3f64..0.5, m in 1u32..=10) {
            let a = ComplexDiag(vec![C64::new(re, im)]);
            let one = [C64::new(1.0, 0.0)];
            let step = zoh(&a, &one, s).unwrap().a_bar.0[0];
            let whole = zoh(&a, &one, m as f64 * s).unwrap().a_bar.0[0];
            prop_assert!((step.powu(m) - whole).norm() <= 1e-10);
        }

        #[test]
        fn selectors_are_positive(x in -30.0f64..30.0, y in -30.0f64..30.0, b in -20.0f64..20.0) {
            prop_assert!(s4d_delta(b) > 0.0);
            let d = s6_delta(&[x], &[y / 10.0], b).unwrap();
            prop_assert!(d > 0.0 && d.is_finite());
        }
    }
}
