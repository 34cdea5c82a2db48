//! Radially symmetric velocity densities on a uniform speed grid.
//!
//! Nodes sit at `r_k = k h`, `k = 0..=K`. Between nodes the density is
//! interpolated log-linearly (linearly when an endpoint vanishes) and it is
//! zero beyond `r_K`. Integrals `∫ g(|v|) f(v) dv = |S^{d-1}| ∫ g f r^{d-1} dr`
//! use four-point Gauss-Legendre on every cell of the interpolant.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::velocity::{Dim, Maxwellian};

/// Densities below this value are clamped before taking logarithms.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Tolerance on the unit mass of a density in `𝒫_e`.
pub const MASS_TOLERANCE: f64 = 1e-6;

const GL_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// Default number of grid cells.
pub const DEFAULT_CELLS: usize = 2400;

/// Speed beyond which a Maxwellian of energy `e` is below `e^{-60}` of its peak.
pub fn maxwellian_cutoff(e: f64, d: Dim) -> f64 {
    (240.0 * e / d.as_f64()).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsotropicDensity {
    d: Dim,
    h: f64,
    values: Vec<f64>,
    #[serde(skip)]
    logs: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyIntegral {
    /// `∫ f log f dv`.
    pub value: f64,
    /// Richardson estimate of the grid error from the every-other-node interpolant.
    pub error: f64,
    /// Number of nodes whose value was raised to [`DENSITY_FLOOR`].
    pub clamped: usize,
}

impl IsotropicDensity {
    pub fn from_values(d: Dim, h: f64, values: Vec<f64>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return invalid(format!("grid spacing must be positive, got {h}"));
        }
        if values.len() < 3 {
            return invalid("a radial density needs at least three nodes");
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return invalid("density values must be finite and nonnegative");
        }
        let logs = log_nodes(&values);
        Ok(IsotropicDensity { d, h, values, logs })
    }

    /// Tabulates `f` at `cells + 1` nodes spanning `[0, r_max]`.
    pub fn from_fn(d: Dim, r_max: f64, cells: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if cells < 2 {
            return invalid("a radial grid needs at least two cells");
        }
        let h = r_max / cells as f64;
        let values = (0..=cells).map(|k| f(k as f64 * h)).collect();
        Self::from_values(d, h, values)
    }

    /// `M_e` on the default grid, normalized for the interpolant.
    pub fn maxwellian(e: f64, d: Dim) -> Result<Self> {
        Self::maxwellian_on(e, d, maxwellian_cutoff(e, d), DEFAULT_CELLS)
    }

    pub fn maxwellian_on(e: f64, d: Dim, r_max: f64, cells: usize) -> Result<Self> {
        let m = Maxwellian::new(e, d)?;
        Ok(Self::from_fn(d, r_max, cells, |r| m.density_at_speed(r))?.normalized())
    }

    /// Restores logarithms after deserialization.
    pub fn rebuild(mut self) -> Self {
        self.logs = log_nodes(&self.values);
        self
    }

    #[inline]
    pub fn dim(&self) -> Dim {
        self.d
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cells(&self) -> usize {
        self.values.len() - 1
    }

    pub fn r_max(&self) -> f64 {
        self.h * self.cells() as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().enumerate().map(|(k, &f)| (k as f64 * self.h, f))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `log f(r)` of the interpolant, clamped below at `log DENSITY_FLOOR`.
    #[inline]
    pub fn log_value(&self, r: f64) -> f64 {
        let x = r / self.h;
        let k = x as usize;
        if k >= self.values.len() - 1 {
            if k == self.values.len() - 1 && x == k as f64 {
                return self.logs[k];
            }
            return DENSITY_FLOOR.ln();
        }
        let t = square_weight(x, k as f64);
        let (a, b) = (self.values[k], self.values[k + 1]);
        if a > DENSITY_FLOOR && b > DENSITY_FLOOR {
            self.logs[k] + t * (self.logs[k + 1] - self.logs[k])
        } else {
            (a + t * (b - a)).max(DENSITY_FLOOR).ln()
        }
    }

    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        let x = r / self.h;
        let k = x as usize;
        if k >= self.values.len() - 1 {
            if k == self.values.len() - 1 && x == k as f64 {
                return self.values[k];
            }
            return 0.0;
        }
        let t = square_weight(x, k as f64);
        let (a, b) = (self.values[k], self.values[k + 1]);
        if a > DENSITY_FLOOR && b > DENSITY_FLOOR {
            (self.logs[k] + t * (self.logs[k + 1] - self.logs[k])).exp()
        } else {
            a + t * (b - a)
        }
    }

    /// `∫ g(|v|) f(v) dv` for the interpolant.
    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.integrate_cells(1, |r, f, _| g(r) * f)
    }

    fn integrate_cells(&self, stride: usize, integrand: impl Fn(f64, f64, f64) -> f64) -> f64 {
        let area = self.d.sphere_area();
        let p = self.d.get() as i32 - 1;
        let hs = self.h * stride as f64;
        let cells = self.cells() / stride;
        let mut total = 0.0;
        for c in 0..cells {
            let (ia, ib) = (c * stride, (c + 1) * stride);
            let (a, b) = (self.values[ia], self.values[ib]);
            let (la, lb) = (self.logs[ia], self.logs[ib]);
            let r0 = ia as f64 * self.h;
            let mut cell = 0.0;
            for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
                let r = r0 + 0.5 * (x + 1.0) * hs;
                let t = square_weight(r / hs, c as f64);
                let (f, lf) = if a > DENSITY_FLOOR && b > DENSITY_FLOOR {
                    let lf = la + t * (lb - la);
                    (lf.exp(), lf)
                } else {
                    let f = a + t * (b - a);
                    (f, f.max(DENSITY_FLOOR).ln())
                };
                cell += w * integrand(r, f, lf) * r.powi(p);
            }
            total += 0.5 * hs * cell;
        }
        area * total
    }

    pub fn mass(&self) -> f64 {
        self.integrate(|_| 1.0)
    }

    /// `∫ |v|²/2 f dv`.
    pub fn energy(&self) -> f64 {
        self.integrate(|r| 0.5 * r * r)
    }

    pub fn normalized(mut self) -> Self {
        let m = self.mass();
        if m > 0.0 {
            let lm = m.ln();
            self.values.iter_mut().for_each(|v| *v /= m);
            self.logs.iter_mut().for_each(|l| *l -= lm);
        }
        self
    }

    /// `∫ f log f dv` with a grid-error estimate.
    pub fn entropy_integral(&self) -> EntropyIntegral {
        let fine = self.integrate_cells(1, |_, f, lf| if f > 0.0 { f * lf } else { 0.0 });
        let error = if self.cells() >= 4 && self.cells() % 2 == 0 {
            let coarse = self.integrate_cells(2, |_, f, lf| if f > 0.0 { f * lf } else { 0.0 });
            (fine - coarse).abs() / 3.0
        } else {
            f64::INFINITY
        };
        EntropyIntegral {
            value: fine,
            error,
            clamped: self.values.iter().filter(|&&v| v < DENSITY_FLOOR).count(),
        }
    }

    /// Membership in `𝒫_e`: unit mass and energy at most `e`.
    pub fn check(&self, e: f64) -> Result<()> {
        let m = self.mass();
        if (m - 1.0).abs() > MASS_TOLERANCE {
            return invalid(format!("density mass {m} differs from 1"));
        }
        let en = self.energy();
        if en > e + MASS_TOLERANCE {
            return invalid(format!("density energy {en} exceeds {e}"));
        }
        Ok(())
    }

    /// Total variation `∫ |f − g| dv` between two densities on the same grid family.
    pub fn l1_distance(&self, other: &IsotropicDensity) -> f64 {
        let r_max = self.r_max().max(other.r_max());
        let h = self.h.min(other.h);
        let cells = (r_max / h).ceil() as usize;
        let area = self.d.sphere_area();
        let p = self.d.get() as i32 - 1;
        let mut total = 0.0;
        for c in 0..cells {
            for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
                let r = (c as f64 + 0.5 * (x + 1.0)) * h;
                total += w * (self.value(r) - other.value(r)).abs() * r.powi(p);
            }
        }
        area * 0.5 * h * total
    }
}

/// Position of `x` in `[k, k + 1]` measured in `x²`. Interpolating in `r²`
/// reproduces Maxwellians exactly.
#[inline]
fn square_weight(x: f64, k: f64) -> f64 {
    (x * x - k * k) / (2.0 * k + 1.0)
}

fn log_nodes(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| v.max(DENSITY_FLOOR).ln()).collect()
}

/// Error unless the grid-error estimate of an entropy integral is within `tol`.
pub fn require_entropy_accuracy(ent: &EntropyIntegral, tol: f64) -> Result<f64> {
    if ent.error > tol {
        return Err(Error::Accuracy {
            what: "entropy quadrature".into(),
            achieved: ent.error,
            requested: tol,
        });
    }
    Ok(ent.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxwellian_moments() {
        for &d in &[Dim::Two, Dim::Three] {
            for &e in &[0.3, 1.0, 2.5] {
                let f = IsotropicDensity::maxwellian(e, d).unwrap();
                assert!((f.mass() - 1.0).abs() < 1e-12);
                assert!((f.energy() - e).abs() < 1e-5 * e, "{d:?} {e}: {}", f.energy());
                f.check(e + 1e-5).unwrap();
            }
        }
    }

    #[test]
    fn interpolation_hits_nodes_and_vanishes_outside() {
        let f = IsotropicDensity::from_values(Dim::Three, 0.5, vec![1.0, 0.5, 0.25, 0.0]).unwrap();
        assert_eq!(f.value(0.5), 0.5);
        // Weights are linear in r²: 5/12 of the way in the second cell, 0.45 in the third.
        assert!((f.value(0.75) - 0.5f64.powf(17.0 / 12.0)).abs() < 1e-15);
        assert!((f.value(1.25) - 0.1375).abs() < 1e-15);
        assert_eq!(f.value(2.0), 0.0);
        assert_eq!(f.value(7.0), 0.0);
        assert_eq!(f.log_value(7.0), DENSITY_FLOOR.ln());
    }

    #[test]
    fn maxwellian_interpolant_is_exact_between_nodes() {
        let d = Dim::Three;
        let f = IsotropicDensity::maxwellian_on(1.0, d, 8.0, 40).unwrap();
        let m = Maxwellian::new(1.0, d).unwrap();
        let shift = f.log_value(0.0) - m.log_density_at_speed(0.0);
        for k in 0..200 {
            let r = 0.0371 * k as f64;
            assert!((f.log_value(r) - m.log_density_at_speed(r) - shift).abs() < 1e-12, "{r}");
        }
    }

    #[test]
    fn rejects_bad_values() {
        assert!(IsotropicDensity::from_values(Dim::Three, 0.1, vec![1.0, -1.0, 0.0]).is_err());
        assert!(IsotropicDensity::from_values(Dim::Three, 0.0, vec![1.0, 1.0, 0.0]).is_err());
        assert!(IsotropicDensity::from_values(Dim::Three, 0.1, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn gaussian_entropy() {
        for &d in &[Dim::Two, Dim::Three] {
            let e = 0.7;
            let f = IsotropicDensity::maxwellian(e, d).unwrap();
            let ent = f.entropy_integral();
            let dd = d.as_f64();
            let exact = -0.5 * dd * ((4.0 * std::f64::consts::PI * e / dd).ln() + 1.0);
            assert!((ent.value - exact).abs() < 1e-6, "{} vs {exact}", ent.value);
            assert!(ent.error < 1e-5, "{}", ent.error);
        }
    }

    #[test]
    fn l1_of_identical_is_zero() {
        let f = IsotropicDensity::maxwellian(1.0, Dim::Three).unwrap();
        let g = IsotropicDensity::maxwellian(0.5, Dim::Three).unwrap();
        assert_eq!(f.l1_distance(&f), 0.0);
        let d = f.l1_distance(&g);
        assert!(d > 0.1 && d < 2.0);
    }
}
