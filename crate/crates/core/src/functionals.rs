//! Closed-form rate functionals and the bounds table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::density::{require_entropy_accuracy, IsotropicDensity};
use crate::error::{invalid, Result};
use crate::velocity::Dim;

/// Default accuracy demanded of entropy quadratures.
pub const ENTROPY_TOLERANCE: f64 = 1e-5;

/// A nonnegative value that may be `+∞`. Infinite values carry the sentinel
/// `f64::MAX` so that they serialize as ordinary numbers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateValue {
    pub value: f64,
    pub infinite: bool,
}

impl RateValue {
    pub const INFINITY: RateValue = RateValue {
        value: f64::MAX,
        infinite: true,
    };

    pub fn finite(value: f64) -> Self {
        RateValue { value, infinite: false }
    }

    pub fn as_f64(self) -> f64 {
        if self.infinite {
            f64::INFINITY
        } else {
            self.value
        }
    }
}

impl std::fmt::Display for RateValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.infinite {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.value)
        }
    }
}

/// Typical collision rate `q̄_e = (c_d/2) E|V − V_*|` for independent `V, V_* ~ M_e`.
pub fn qbar(e: f64, d: Dim) -> f64 {
    debug_assert!(e > 0.0);
    // V − V_* is centered Gaussian with per-component variance 4e/d.
    let s = (4.0 * e / d.as_f64()).sqrt();
    0.5 * d.collision_constant() * s * d.mean_gaussian_norm()
}

/// Second-order rate `j_e(q) = d log(q̄_e/q)` on `(0, q̄_e]`, `+∞` elsewhere.
pub fn j_e(q: f64, e: f64, d: Dim) -> RateValue {
    let qb = qbar(e, d);
    if !(q > 0.0) || q > qb {
        return RateValue::INFINITY;
    }
    RateValue::finite((d.as_f64() * (qb / q).ln()).max(0.0))
}

/// `ε(q) = e (q/q̄_e)²`, the energy of the Maxwellian realizing `j_e(q)`.
pub fn epsilon_of_q(q: f64, e: f64, d: Dim) -> Result<f64> {
    let qb = qbar(e, d);
    if !(0.0..=qb).contains(&q) {
        return invalid(format!("q = {q} outside [0, q̄_e = {qb}]"));
    }
    Ok(e * (q / qb).powi(2))
}

/// `H_e(π|M_e) = ∫ f log f dv + (d/2)(log(4πe/d) + 1)`.
pub fn entropy_h(pi: &IsotropicDensity, e: f64) -> Result<f64> {
    entropy_h_with_tolerance(pi, e, ENTROPY_TOLERANCE)
}

pub fn entropy_h_with_tolerance(pi: &IsotropicDensity, e: f64, tol: f64) -> Result<f64> {
    let flogf = require_entropy_accuracy(&pi.entropy_integral(), tol)?;
    Ok(flogf + entropy_constant(e, pi.dim()))
}

pub fn entropy_constant(e: f64, d: Dim) -> f64 {
    let dd = d.as_f64();
    0.5 * dd * ((4.0 * std::f64::consts::PI * e / dd).ln() + 1.0)
}

/// `i_e^-(q)`: zero up to `q̂_e`, then `q log(q/q̂_e) − q + q̂_e`.
pub fn i_minus(q: f64, qhat: f64) -> f64 {
    if q <= qhat {
        0.0
    } else {
        (q * (q / qhat).ln() - q + qhat).max(0.0)
    }
}

/// Poisson-type upper bound `q log(q/q̄_e) − q + q̄_e`.
pub fn poisson_bound(q: f64, e: f64, d: Dim) -> f64 {
    poisson_cost(q, qbar(e, d))
}

/// `q log(q/a) − q + a`, the relative entropy of Poisson rates.
pub fn poisson_cost(q: f64, a: f64) -> f64 {
    if q <= 0.0 {
        return a;
    }
    (q * (q / a).ln() - q + a).max(0.0)
}

/// Per-unit-time cost of the static strategy at collision rate `q`:
/// `q log(q/R4) − q + R2`.
pub fn static_cost(q: f64, r2: f64, r4: f64) -> f64 {
    if q <= 0.0 {
        return r2;
    }
    q * (q / r4).ln() - q + r2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateBoundsRow {
    pub q: f64,
    pub i_minus: f64,
    pub i_plus: f64,
    pub i_plus_stderr: f64,
    pub poisson: f64,
    pub j_e: RateValue,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateBoundsTable {
    pub e: f64,
    pub d: Dim,
    pub qbar: f64,
    pub qhat: f64,
    pub qhat_stderr: f64,
    pub seed: u64,
    pub rows: Vec<RateBoundsRow>,
}

impl RateBoundsTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("q,i_minus,i_plus,poisson,j_e\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.q, r.i_minus, r.i_plus, r.poisson, r.j_e);
        }
        s
    }

    /// Rows with `q ≥ q̄_e` that break `i_minus ≤ i_plus ≤ poisson` by more than
    /// `k` standard errors of `i_plus`.
    pub fn ordering_violations(&self, k: f64) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.q >= self.qbar)
            .filter(|(_, r)| {
                let slack = k * r.i_plus_stderr + 1e-9;
                r.i_minus > r.i_plus + slack || r.i_plus > r.poisson + slack
            })
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qbar_values() {
        let q3 = qbar(1.0, Dim::Three);
        assert!((q3 - 2.0 * (2.0 * std::f64::consts::PI / 3.0).sqrt()).abs() < 1e-12);
        assert!((qbar(4.0, Dim::Three) - 2.0 * q3).abs() < 1e-12);
        assert!((qbar(1.0, Dim::Two) - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn second_order_rate() {
        let d = Dim::Three;
        let qb = qbar(1.0, d);
        assert_eq!(j_e(qb, 1.0, d).value, 0.0);
        assert!((j_e(qb / 2.0, 1.0, d).value - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert!(j_e(1.01 * qb, 1.0, d).infinite);
        assert!(j_e(0.0, 1.0, d).infinite);
        assert_eq!(j_e(2.0 * qb, 1.0, d).to_string(), "inf");
    }

    #[test]
    fn epsilon_examples() {
        let d = Dim::Three;
        let qb = qbar(2.0, d);
        assert!((epsilon_of_q(qb, 2.0, d).unwrap() - 2.0).abs() < 1e-12);
        assert!((epsilon_of_q(qb / 2.0, 2.0, d).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(epsilon_of_q(0.0, 2.0, d).unwrap(), 0.0);
        assert!(epsilon_of_q(1.1 * qb, 2.0, d).is_err());
    }

    #[test]
    fn entropy_of_maxwellians() {
        for &d in &[Dim::Two, Dim::Three] {
            let e = 1.0;
            let m = IsotropicDensity::maxwellian(e, d).unwrap();
            assert!(entropy_h(&m, e).unwrap().abs() < 1e-6);
            let half = IsotropicDensity::maxwellian(e / 2.0, d).unwrap();
            let want = 0.5 * d.as_f64() * 2f64.ln();
            assert!((entropy_h(&half, e).unwrap() - want).abs() < 1e-5);
        }
    }

    #[test]
    fn first_order_bounds() {
        let qh = 3.0;
        assert_eq!(i_minus(2.9, qh), 0.0);
        assert_eq!(i_minus(qh, qh), 0.0);
        assert!((i_minus(2.0 * qh, qh) - qh * (2.0 * 2f64.ln() - 1.0)).abs() < 1e-12);
        let d = Dim::Three;
        let qb = qbar(1.0, d);
        assert_eq!(poisson_bound(qb, 1.0, d), 0.0);
        assert!((poisson_bound(2.0 * qb, 1.0, d) - qb * (2.0 * 2f64.ln() - 1.0)).abs() < 1e-12);
        assert!((static_cost(qb, qb, qb)).abs() < 1e-12);
    }

    #[test]
    fn poisson_bound_is_convex() {
        let d = Dim::Three;
        for k in 1..50 {
            let (a, b) = (0.2 * k as f64, 0.2 * k as f64 + 1.3);
            let mid = poisson_bound(0.5 * (a + b), 1.0, d);
            assert!(mid <= 0.5 * (poisson_bound(a, 1.0, d) + poisson_bound(b, 1.0, d)) + 1e-12);
        }
    }
}
