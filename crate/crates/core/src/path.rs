//! Discretized density-flux paths and their functionals: the dynamical cost,
//! the entropy chain rule, the balance equation and time reversal.
//!
//! A path is a sequence of time slices. Each slice holds a density and a flux
//! per unit time. A sampled flux stores weights `w_i` on a shared collision
//! point set so that `Q(F) = Σ_i w_i F(x_i)`. The intensity of the flux with
//! respect to `½ B dv dv_* dω` at a point is recovered from its weight, which
//! makes the Radon-Nikodym factor against `Q^f = ½ f f_* B` available without
//! storing it.

use std::sync::Arc;

use serde::Serialize;

use crate::density::IsotropicDensity;
use crate::error::{invalid, Error, Result};
use crate::functionals::{entropy_h, static_cost};
use crate::quadrature::{collision_rates, log_f4, CollisionPoints, EstimatorOptions};
use crate::velocity::Dim;

#[derive(Clone, Debug)]
pub struct FluxSamples {
    pub points: Arc<CollisionPoints>,
    /// Velocity scale applied to the unit-energy points.
    pub scale: f64,
    /// Pre- and post-collisional pairs exchanged.
    pub swapped: bool,
    pub weights: Arc<Vec<f64>>,
}

/// Which flux to build from a density.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FluxKind {
    /// `Q^f = ½ f f_* B`.
    Boltzmann,
    /// `Q² = ½ [f f_* − f' f_*']_+ B`.
    PositivePart,
}

impl FluxSamples {
    pub fn from_density(f: &IsotropicDensity, points: Arc<CollisionPoints>, scale: f64, kind: FluxKind) -> Result<Self> {
        if f.dim() != points.dim() {
            return invalid("density and point set have different dimensions");
        }
        let n = points.len() as f64;
        let d = points.dim();
        let ls = scale.ln();
        let weights = points
            .points()
            .iter()
            .map(|p| {
                let lb = p.log_base(d, ls);
                let l = log_f4(f, p, scale);
                let a = (l[0] + l[1] + lb).exp();
                match kind {
                    FluxKind::Boltzmann => a / n,
                    FluxKind::PositivePart => (a - (l[2] + l[3] + lb).exp()).max(0.0) / n,
                }
            })
            .collect();
        Ok(FluxSamples {
            points,
            scale,
            swapped: false,
            weights: Arc::new(weights),
        })
    }

    /// `Q(1)`.
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        FluxSamples {
            points: self.points.clone(),
            scale: self.scale,
            swapped: self.swapped,
            weights: Arc::new(self.weights.iter().map(|w| w * factor).collect()),
        }
    }

    fn reversed(&self) -> Self {
        FluxSamples {
            swapped: !self.swapped,
            ..self.clone()
        }
    }

    /// Speeds `(pre, pre_*, post, post_*)` of point `i` in the flux orientation.
    #[inline]
    fn speeds(&self, i: usize) -> [f64; 4] {
        let r = self.points.points()[i].r;
        let s = self.scale;
        if self.swapped {
            [s * r[2], s * r[3], s * r[0], s * r[1]]
        } else {
            [s * r[0], s * r[1], s * r[2], s * r[3]]
        }
    }

    /// `Σ_i w_i F(pre, pre_*, post, post_*)`.
    pub fn integrate(&self, f: impl Fn([f64; 4]) -> f64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, w)| w * f(self.speeds(i)))
            .sum()
    }

    /// `log` of the intensity w.r.t. `½ B dv dv_* dω` at point `i`.
    #[inline]
    fn log_intensity(&self, i: usize, log_base: f64) -> f64 {
        (self.weights[i] * self.points.len() as f64).ln() - log_base
    }
}

#[derive(Clone, Debug)]
pub enum Flux {
    /// `e^γ ½ √(f f_* f' f_*') B`.
    GammaTilted { gamma: f64 },
    Samples(FluxSamples),
}

#[derive(Clone, Debug)]
pub struct PathSlice {
    pub t0: f64,
    pub t1: f64,
    pub density: Arc<IsotropicDensity>,
    pub flux: Flux,
}

impl PathSlice {
    pub fn dt(&self) -> f64 {
        self.t1 - self.t0
    }
}

#[derive(Clone, Debug)]
pub struct PathDiscretization {
    pub e: f64,
    pub initial: Arc<IsotropicDensity>,
    pub terminal: Arc<IsotropicDensity>,
    pub slices: Vec<PathSlice>,
    /// Points for the collision integrals of gamma-tilted slices.
    pub quadrature: Arc<CollisionPoints>,
}

impl PathDiscretization {
    pub fn new(
        e: f64,
        initial: Arc<IsotropicDensity>,
        terminal: Arc<IsotropicDensity>,
        slices: Vec<PathSlice>,
        quadrature: Arc<CollisionPoints>,
    ) -> Result<Self> {
        let path = PathDiscretization {
            e,
            initial,
            terminal,
            slices,
            quadrature,
        };
        path.validate()?;
        Ok(path)
    }

    /// Constant density `f` on `[0, T]` over `steps` slices with the given flux.
    pub fn stationary(f: Arc<IsotropicDensity>, e: f64, t: f64, steps: usize, flux: Flux, quadrature: Arc<CollisionPoints>) -> Result<Self> {
        if steps == 0 {
            return invalid("a path needs at least one slice");
        }
        let dt = t / steps as f64;
        let slices = (0..steps)
            .map(|k| PathSlice {
                t0: k as f64 * dt,
                t1: if k + 1 == steps { t } else { (k + 1) as f64 * dt },
                density: f.clone(),
                flux: flux.clone(),
            })
            .collect();
        Self::new(e, f.clone(), f, slices, quadrature)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slices.is_empty() {
            return invalid("a path needs at least one slice");
        }
        let mut t = 0.0;
        for (k, s) in self.slices.iter().enumerate() {
            if (s.t0 - t).abs() > 1e-9 * (1.0 + t.abs()) || !(s.t1 > s.t0) {
                return invalid(format!("slice {k} does not continue the time grid"));
            }
            if let Flux::Samples(fs) = &s.flux {
                if fs.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return invalid(format!("slice {k} has a negative or non-finite weight"));
                }
                if fs.weights.len() != fs.points.len() {
                    return invalid(format!("slice {k} has mismatched weights"));
                }
            }
            t = s.t1;
        }
        Ok(())
    }

    pub fn dim(&self) -> Dim {
        self.initial.dim()
    }

    pub fn horizon(&self) -> f64 {
        self.slices.last().map(|s| s.t1).unwrap_or(0.0)
    }

    pub fn times(&self) -> Vec<f64> {
        std::iter::once(0.0).chain(self.slices.iter().map(|s| s.t1)).collect()
    }

    /// `∫ Q_t(1) dt`.
    pub fn total_flux_mass(&self) -> Result<f64> {
        self.slices
            .iter()
            .map(|s| Ok(s.dt() * self.slice_mass(s)?))
            .sum()
    }

    pub fn slice_mass(&self, s: &PathSlice) -> Result<f64> {
        match &s.flux {
            Flux::Samples(fs) => Ok(fs.mass()),
            Flux::GammaTilted { gamma } => {
                let r = collision_rates(&s.density, &self.quadrature, EstimatorOptions::default())?;
                Ok(gamma.exp() * r.r4.value)
            }
        }
    }

    /// Concatenation in time; `other` starts where `self` ends.
    pub fn concat(&self, other: &PathDiscretization) -> Result<Self> {
        let shift = self.horizon();
        let mut slices = self.slices.clone();
        slices.extend(other.slices.iter().map(|s| PathSlice {
            t0: s.t0 + shift,
            t1: s.t1 + shift,
            ..s.clone()
        }));
        Self::new(self.e, self.initial.clone(), other.terminal.clone(), slices, self.quadrature.clone())
    }
}

/// Runs densities backwards in time and exchanges incoming and outgoing pairs
/// of every sampled flux, keeping weights.
pub fn time_reverse(path: &PathDiscretization) -> PathDiscretization {
    let t = path.horizon();
    let slices = path
        .slices
        .iter()
        .rev()
        .map(|s| PathSlice {
            t0: t - s.t1,
            t1: t - s.t0,
            density: s.density.clone(),
            flux: match &s.flux {
                Flux::Samples(fs) => Flux::Samples(fs.reversed()),
                g @ Flux::GammaTilted { .. } => g.clone(),
            },
        })
        .collect::<Vec<_>>();
    let mut slices = slices;
    if let Some(first) = slices.first_mut() {
        first.t0 = 0.0;
    }
    PathDiscretization {
        e: path.e,
        initial: path.terminal.clone(),
        terminal: path.initial.clone(),
        slices,
        quadrature: path.quadrature.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SliceCost {
    pub per_unit_time: f64,
    pub mass: f64,
}

fn slice_cost(path: &PathDiscretization, s: &PathSlice) -> Result<SliceCost> {
    let f = &*s.density;
    match &s.flux {
        Flux::GammaTilted { gamma } => {
            let r = collision_rates(f, &path.quadrature, EstimatorOptions::default())?;
            let q = gamma.exp() * r.r4.value;
            Ok(SliceCost {
                per_unit_time: static_cost(q, r.r2.value, r.r4.value),
                mass: q,
            })
        }
        Flux::Samples(fs) => {
            let d = fs.points.dim();
            let ls = fs.scale.ln();
            let n = fs.points.len() as f64;
            let mut relent = 0.0;
            let mut mass = 0.0;
            let mut r2 = 0.0;
            for (i, p) in fs.points.points().iter().enumerate() {
                let lb = p.log_base(d, ls);
                let l = log_f4(f, p, fs.scale);
                r2 += (l[0] + l[1] + lb).exp() / n;
                let w = fs.weights[i];
                if w > 0.0 {
                    let pre = if fs.swapped { l[2] + l[3] } else { l[0] + l[1] };
                    let log_rho = fs.log_intensity(i, lb) - pre;
                    relent += w * log_rho;
                    mass += w;
                }
            }
            Ok(SliceCost {
                per_unit_time: relent - mass + r2,
                mass,
            })
        }
    }
}

/// `J(π, Q) = ∫ dt ∫ dQ^π [ρ log ρ − ρ + 1]` with `ρ = dQ/dQ^π`.
pub fn path_cost_j(path: &PathDiscretization) -> Result<f64> {
    path.slices.iter().map(|s| Ok(s.dt() * slice_cost(path, s)?.per_unit_time)).sum()
}

pub fn slice_costs(path: &PathDiscretization) -> Result<Vec<SliceCost>> {
    path.slices.iter().map(|s| slice_cost(path, s)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChainRule {
    /// `H_e(π_T|M_e) − H_e(π_0|M_e)`.
    pub h_term: f64,
    /// `∫ dt Q_t(log(f' f_*'/(f f_*)))`.
    pub q_term: f64,
    pub residual: f64,
}

impl ChainRule {
    /// `|residual| / max(|h_term|, |q_term|, floor)`.
    pub fn relative(&self, floor: f64) -> f64 {
        self.residual.abs() / self.h_term.abs().max(self.q_term.abs()).max(floor)
    }
}

fn entropy_flux(s: &PathSlice) -> f64 {
    match &s.flux {
        // Symmetric flux against an antisymmetric integrand.
        Flux::GammaTilted { .. } => 0.0,
        Flux::Samples(fs) => {
            let f = &*s.density;
            fs.integrate(|r| f.log_value(r[2]) + f.log_value(r[3]) - f.log_value(r[0]) - f.log_value(r[1]))
        }
    }
}

pub fn chain_rule_residual(path: &PathDiscretization) -> Result<ChainRule> {
    let h0 = entropy_h(&path.initial, path.e)?;
    let h1 = entropy_h(&path.terminal, path.e)?;
    let q_term: f64 = path.slices.iter().map(|s| s.dt() * entropy_flux(s)).sum();
    let h_term = h1 - h0;
    Ok(ChainRule {
        h_term,
        q_term,
        residual: h_term - q_term,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Reversibility {
    /// `H_e(π_0|M_e) + J(path)`.
    pub forward: f64,
    /// `H_e(π_T|M_e) + J(reversed path)`.
    pub backward: f64,
    pub residual: f64,
}

impl Reversibility {
    pub fn relative(&self, floor: f64) -> f64 {
        self.residual.abs() / self.forward.abs().max(self.backward.abs()).max(floor)
    }
}

pub fn reversibility_residual(path: &PathDiscretization) -> Result<Reversibility> {
    let forward = entropy_h(&path.initial, path.e)? + path_cost_j(path)?;
    let backward = entropy_h(&path.terminal, path.e)? + path_cost_j(&time_reverse(path))?;
    Ok(Reversibility {
        forward,
        backward,
        residual: forward - backward,
    })
}

/// Radial Gaussian bump `exp(−(|v| − center)²/(2 width²))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RadialBump {
    pub center: f64,
    pub width: f64,
}

impl RadialBump {
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        (-(r - self.center).powi(2) / (2.0 * self.width * self.width)).exp()
    }

    /// `sup |φ|`.
    pub fn sup(&self) -> f64 {
        1.0
    }
}

/// `count` bumps spread over the bulk of `M_e`.
pub fn default_bumps(e: f64, d: Dim, count: usize) -> Vec<RadialBump> {
    let sigma = (2.0 * e / d.as_f64()).sqrt();
    let top = 3.5 * sigma;
    (0..count)
        .map(|k| RadialBump {
            center: top * (k as f64 + 0.5) / count as f64,
            width: 0.5 * top / count as f64 + 0.15 * sigma,
        })
        .collect()
}

/// Balance equation residual `π_T(φ) − π_0(φ) − ∫ Q_t(∇̄φ) dt` for one test function.
pub fn balance_defect(path: &PathDiscretization, phi: &RadialBump) -> Result<f64> {
    let mut flux_term = 0.0;
    for s in &path.slices {
        let q = match &s.flux {
            Flux::GammaTilted { .. } => 0.0,
            Flux::Samples(fs) => fs.integrate(|r| phi.eval(r[2]) + phi.eval(r[3]) - phi.eval(r[0]) - phi.eval(r[1])),
        };
        flux_term += s.dt() * q;
    }
    let change = path.terminal.integrate(|r| phi.eval(r)) - path.initial.integrate(|r| phi.eval(r));
    Ok(change - flux_term)
}

/// Largest balance defect over the test functions, relative to their sup-norms.
pub fn balance_residual(path: &PathDiscretization, test_functions: &[RadialBump]) -> Result<f64> {
    if test_functions.is_empty() {
        return Err(Error::InvalidArgument("no test functions given".into()));
    }
    let mut worst: f64 = 0.0;
    for phi in test_functions {
        worst = worst.max(balance_defect(path, phi)?.abs() / phi.sup());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{poisson_cost, qbar};
    use crate::quadrature::Proposal;

    fn setup() -> (Arc<IsotropicDensity>, Arc<CollisionPoints>) {
        let f = Arc::new(IsotropicDensity::maxwellian(1.0, Dim::Three).unwrap());
        let pts = Arc::new(CollisionPoints::sample(Dim::Three, 40_000, Proposal::default(), 21).unwrap());
        (f, pts)
    }

    #[test]
    fn static_maxwellian_costs() {
        let (f, pts) = setup();
        let path = PathDiscretization::stationary(f.clone(), 1.0, 2.0, 4, Flux::GammaTilted { gamma: 0.0 }, pts.clone()).unwrap();
        assert!(path_cost_j(&path).unwrap().abs() < 1e-6);
        let gamma = 0.4f64;
        let tilted = PathDiscretization::stationary(f.clone(), 1.0, 2.0, 4, Flux::GammaTilted { gamma }, pts.clone()).unwrap();
        let q = gamma.exp() * qbar(1.0, Dim::Three);
        let want = 2.0 * poisson_cost(q, qbar(1.0, Dim::Three));
        assert!((path_cost_j(&tilted).unwrap() - want).abs() < 1e-3 * want);
    }

    #[test]
    fn boltzmann_flux_has_zero_cost_and_balance() {
        let (f, pts) = setup();
        let flux = FluxSamples::from_density(&f, pts.clone(), 1.0, FluxKind::Boltzmann).unwrap();
        let path = PathDiscretization::stationary(f.clone(), 1.0, 1.0, 3, Flux::Samples(flux), pts).unwrap();
        assert!(path_cost_j(&path).unwrap().abs() < 1e-12);
        let bal = balance_residual(&path, &default_bumps(1.0, Dim::Three, 8)).unwrap();
        assert!(bal < 0.02, "{bal}");
        let cr = chain_rule_residual(&path).unwrap();
        assert!(cr.residual.abs() < 0.01, "{cr:?}");
    }

    #[test]
    fn double_reversal_is_identity() {
        let (f, pts) = setup();
        let flux = FluxSamples::from_density(&f, pts.clone(), 1.0, FluxKind::PositivePart).unwrap();
        let path = PathDiscretization::stationary(f, 1.0, 1.5, 3, Flux::Samples(flux), pts).unwrap();
        let twice = time_reverse(&time_reverse(&path));
        assert_eq!(path.times(), twice.times());
        for (a, b) in path.slices.iter().zip(&twice.slices) {
            match (&a.flux, &b.flux) {
                (Flux::Samples(x), Flux::Samples(y)) => {
                    assert_eq!(x.swapped, y.swapped);
                    assert_eq!(x.weights, y.weights);
                }
                _ => panic!("flux kind changed"),
            }
        }
    }

    #[test]
    fn rejects_broken_grids() {
        let (f, pts) = setup();
        let slice = PathSlice {
            t0: 0.5,
            t1: 1.0,
            density: f.clone(),
            flux: Flux::GammaTilted { gamma: 0.0 },
        };
        assert!(PathDiscretization::new(1.0, f.clone(), f, vec![slice], pts).is_err());
    }
}
