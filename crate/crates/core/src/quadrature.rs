//! Monte Carlo quadrature of collision integrals `½ ∭ F(v, v_*, ω) B dω dv dv_*`
//! for isotropic densities.
//!
//! Points `(v, v_*, ω)` are drawn with density `p(v) p(v_*) B / (c_d |v − v_*|)`
//! where `p` is a unit-energy Maxwellian with a small wide component mixed in.
//! A point set is drawn once and rescaled by `√e_p` to the energy of the
//! density being integrated, so repeated evaluations share random numbers.
//! Only the four speeds of a point enter isotropic integrands, so those are
//! all that is stored.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::IsotropicDensity;
use crate::error::{invalid, Error, Result};
use crate::functionals::qbar;
use crate::seed::{rng_for, tag};
use crate::velocity::{collide_unchecked, scatter_direction_counted, Dim, Maxwellian};

pub(crate) const CHUNK: usize = 4096;

/// Default sample size for reported collision integrals.
pub const DEFAULT_POINTS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    /// Weight of the wide component.
    pub defensive_weight: f64,
    /// Energy of the wide component, in units of the proposal energy.
    pub defensive_energy: f64,
    /// Weight of an optional third, much wider component.
    #[serde(default)]
    pub tail_weight: f64,
    #[serde(default = "unit_energy")]
    pub tail_energy: f64,
}

fn unit_energy() -> f64 {
    1.0
}

impl Default for Proposal {
    fn default() -> Self {
        Proposal {
            defensive_weight: 0.1,
            defensive_energy: 4.0,
            tail_weight: 0.0,
            tail_energy: 1.0,
        }
    }
}

impl Proposal {
    pub fn maxwellian() -> Self {
        Proposal {
            defensive_weight: 0.0,
            defensive_energy: 1.0,
            ..Proposal::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = (self.defensive_weight, self.tail_weight);
        if !(a >= 0.0 && b >= 0.0 && a + b < 1.0) {
            return invalid("proposal weights must be nonnegative and sum to less than one");
        }
        if !(self.defensive_energy > 0.0 && self.tail_energy > 0.0) {
            return invalid("proposal component energies must be positive");
        }
        Ok(())
    }

    fn components(&self, d: Dim) -> Result<[(f64, Maxwellian); 3]> {
        let core = 1.0 - self.defensive_weight - self.tail_weight;
        Ok([
            (core, Maxwellian::new(1.0, d)?),
            (self.defensive_weight, Maxwellian::new(self.defensive_energy, d)?),
            (self.tail_weight, Maxwellian::new(self.tail_energy, d)?),
        ])
    }
}

fn mixture_log_density(r: f64, comps: &[(f64, Maxwellian); 3]) -> f64 {
    let logs = comps.map(|(w, m)| if w > 0.0 { w.ln() + m.log_density_at_speed(r) } else { f64::NEG_INFINITY });
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionPoint {
    /// `(|v|, |v_*|, |v'|, |v_*'|)` at unit proposal energy.
    pub r: [f64; 4],
    /// `|v − v_*|`.
    pub rel: f64,
    /// `log p(v) + log p(v_*)`.
    pub log_pp: f64,
    /// Control variate `½ c_d |v − v_*| M_1(v) M_1(v_*) / (p(v) p(v_*))`.
    pub cv: f64,
}

impl CollisionPoint {
    /// `log(½ c_d |v − v_*| / (p p_*))` after scaling velocities by `λ = √e_p`.
    #[inline]
    pub fn log_base(&self, d: Dim, log_scale: f64) -> f64 {
        (0.5 * d.collision_constant() * self.rel).ln() + (1.0 + 2.0 * d.as_f64()) * log_scale - self.log_pp
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollisionPoints {
    d: Dim,
    proposal: Proposal,
    seed: u64,
    points: Vec<CollisionPoint>,
}

impl CollisionPoints {
    pub fn sample(d: Dim, n: usize, proposal: Proposal, seed: u64) -> Result<Self> {
        if n < 2 {
            return invalid("a collision point set needs at least two points");
        }
        proposal.validate()?;
        let comps = proposal.components(d)?;
        let chunks = n.div_ceil(CHUNK);
        let points: Vec<CollisionPoint> = (0..chunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut rng = rng_for(seed, &[tag::QUADRATURE, c as u64]);
                let len = CHUNK.min(n - c * CHUNK);
                (0..len)
                    .map(|_| draw_point(d, &comps, &mut rng))
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(CollisionPoints {
            d,
            proposal,
            seed,
            points,
        })
    }

    pub fn dim(&self) -> Dim {
        self.d
    }

    pub fn proposal(&self) -> Proposal {
        self.proposal
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[CollisionPoint] {
        &self.points
    }
}

fn draw_point<R: Rng + ?Sized>(d: Dim, comps: &[(f64, Maxwellian); 3], rng: &mut R) -> CollisionPoint {
    let draw = |rng: &mut R| {
        let u = rng.random::<f64>();
        let m = if u < comps[1].0 {
            &comps[1].1
        } else if u < comps[1].0 + comps[2].0 {
            &comps[2].1
        } else {
            &comps[0].1
        };
        m.sample(rng)
    };
    loop {
        let v = draw(rng);
        let w = draw(rng);
        let rel_v = v - w;
        let rel = rel_v.norm();
        if !(rel > 0.0) {
            continue;
        }
        let (omega, _) = scatter_direction_counted(rel_v * (1.0 / rel), d, rng);
        let (vp, wp) = collide_unchecked(v, w, omega);
        let (a, b) = (v.norm(), w.norm());
        let log_pp = mixture_log_density(a, comps) + mixture_log_density(b, comps);
        let core = &comps[0].1;
        let log_gg = core.log_density_at_speed(a) + core.log_density_at_speed(b);
        return CollisionPoint {
            r: [a, b, vp.norm(), wp.norm()],
            rel,
            log_pp,
            cv: 0.5 * d.collision_constant() * rel * (log_gg - log_pp).exp(),
        };
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// `|self − target| ≤ k σ`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr
    }

    pub fn relative_error(&self) -> f64 {
        if self.value == 0.0 {
            if self.stderr == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.stderr / self.value.abs()
        }
    }

    /// Error unless the relative standard error is at most `tol`.
    pub fn require(self, what: &str, tol: f64) -> Result<Self> {
        let achieved = self.relative_error();
        if achieved > tol {
            return Err(Error::Accuracy {
                what: what.to_string(),
                achieved,
                requested: tol,
            });
        }
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Regress on the Maxwellian control variate with known mean `q̄(e_p)`.
    pub control_variate: bool,
    /// Proposal energy; `None` matches the energy of the density.
    pub proposal_energy: Option<f64>,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            control_variate: true,
            proposal_energy: None,
        }
    }
}

impl EstimatorOptions {
    pub fn plain() -> Self {
        EstimatorOptions {
            control_variate: false,
            proposal_energy: None,
        }
    }
}

/// `R2`, `R4` and the mass of `Q² = ½[f f_* − f' f_*']_+ B` on one point set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionRates {
    pub r2: Estimate,
    pub r4: Estimate,
    pub q2: Estimate,
    pub proposal_energy: f64,
}

#[derive(Clone, Copy, Default)]
struct Sums {
    n: f64,
    c: f64,
    cc: f64,
    d2: f64,
    d2d2: f64,
    d2c: f64,
    d4: f64,
    d4d4: f64,
    d4c: f64,
    q: f64,
    qq: f64,
}

impl Sums {
    fn merge(mut self, o: Sums) -> Sums {
        self.n += o.n;
        self.c += o.c;
        self.cc += o.cc;
        self.d2 += o.d2;
        self.d2d2 += o.d2d2;
        self.d2c += o.d2c;
        self.d4 += o.d4;
        self.d4d4 += o.d4d4;
        self.d4c += o.d4c;
        self.q += o.q;
        self.qq += o.qq;
        self
    }
}

/// `log f` at the four speeds of a point scaled by `λ`.
#[inline]
pub(crate) fn log_f4(f: &IsotropicDensity, p: &CollisionPoint, scale: f64) -> [f64; 4] {
    [
        f.log_value(scale * p.r[0]),
        f.log_value(scale * p.r[1]),
        f.log_value(scale * p.r[2]),
        f.log_value(scale * p.r[3]),
    ]
}

pub(crate) fn resolve_proposal_energy(f: &IsotropicDensity, opts: &EstimatorOptions) -> Result<f64> {
    let e_p = opts.proposal_energy.unwrap_or_else(|| f.energy());
    if !(e_p > 0.0 && e_p.is_finite()) {
        return invalid(format!("proposal energy must be positive, got {e_p}"));
    }
    Ok(e_p)
}

pub fn collision_rates(f: &IsotropicDensity, pts: &CollisionPoints, opts: EstimatorOptions) -> Result<CollisionRates> {
    if f.dim() != pts.dim() {
        return invalid("density and point set have different dimensions");
    }
    let e_p = resolve_proposal_energy(f, &opts)?;
    let scale = e_p.sqrt();
    let log_scale = scale.ln();
    let d = pts.dim();
    let mu = qbar(e_p, d);

    let sums = pts
        .points()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut s = Sums::default();
            for p in chunk {
                let lb = p.log_base(d, log_scale);
                let l = log_f4(f, p, scale);
                let a = (l[0] + l[1] + lb).exp();
                let b = (l[2] + l[3] + lb).exp();
                let y2 = 0.5 * (a + b);
                let y4 = (0.5 * (l[0] + l[1] + l[2] + l[3]) + lb).exp();
                let yq = 0.5 * (a - b).abs();
                let c = p.cv * scale;
                let ct = c - mu;
                let (d2, d4) = (y2 - c, y4 - c);
                s.n += 1.0;
                s.c += ct;
                s.cc += ct * ct;
                s.d2 += d2;
                s.d2d2 += d2 * d2;
                s.d2c += d2 * ct;
                s.d4 += d4;
                s.d4d4 += d4 * d4;
                s.d4c += d4 * ct;
                s.q += yq;
                s.qq += yq * yq;
            }
            s
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Sums::default(), Sums::merge);

    let n = sums.n;
    let cbar = sums.c / n;
    let var_c = (sums.cc / n - cbar * cbar).max(0.0);
    let combine = |sd: f64, sdd: f64, sdc: f64| -> Estimate {
        let dbar = sd / n;
        let var_d = (sdd / n - dbar * dbar).max(0.0);
        let cov = sdc / n - dbar * cbar;
        if opts.control_variate && var_c > 0.0 {
            let b = cov / var_c;
            let res = (var_d - cov * cov / var_c).max(0.0);
            Estimate {
                value: mu + dbar - b * cbar,
                stderr: (res / (n - 1.0)).sqrt(),
            }
        } else {
            let var = (var_c + 2.0 * cov + var_d).max(0.0);
            Estimate {
                value: mu + cbar + dbar,
                stderr: (var / (n - 1.0)).sqrt(),
            }
        }
    };
    let qbar_mean = sums.q / n;
    Ok(CollisionRates {
        r2: combine(sums.d2, sums.d2d2, sums.d2c),
        r4: combine(sums.d4, sums.d4d4, sums.d4c),
        q2: Estimate {
            value: qbar_mean,
            stderr: ((sums.qq / n - qbar_mean * qbar_mean).max(0.0) / (n - 1.0)).sqrt(),
        },
        proposal_energy: e_p,
    })
}

/// `R2(π) = ½ ∭ f f_* B`.
pub fn r2(f: &IsotropicDensity, pts: &CollisionPoints) -> Result<Estimate> {
    Ok(collision_rates(f, pts, EstimatorOptions::default())?.r2)
}

/// `R4(π) = ½ ∭ √(f f_* f' f_*') B`.
pub fn r4(f: &IsotropicDensity, pts: &CollisionPoints) -> Result<Estimate> {
    Ok(collision_rates(f, pts, EstimatorOptions::default())?.r4)
}

/// `Q²(1) = ½ ∭ [f f_* − f' f_*']_+ B`.
pub fn q2_mass(f: &IsotropicDensity, pts: &CollisionPoints) -> Result<Estimate> {
    Ok(collision_rates(f, pts, EstimatorOptions::default())?.q2)
}

/// Monte Carlo oracle for `q̄_e`: `(c_d/2)` times the batch mean of `|V − V_*|`.
pub fn qbar_monte_carlo(e: f64, d: Dim, n: usize, seed: u64) -> Result<Estimate> {
    let m = Maxwellian::new(e, d)?;
    let chunks = n.div_ceil(CHUNK);
    let (s, ss, cnt) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, &[tag::QUADRATURE, u64::MAX, c as u64]);
            let len = CHUNK.min(n - c * CHUNK);
            let (mut s, mut ss) = (0.0, 0.0);
            for _ in 0..len {
                let x = (m.sample(&mut rng) - m.sample(&mut rng)).norm();
                s += x;
                ss += x * x;
            }
            (s, ss, len as f64)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let mean = s / cnt;
    let var = (ss / cnt - mean * mean).max(0.0);
    let k = 0.5 * d.collision_constant();
    Ok(Estimate {
        value: k * mean,
        stderr: k * (var / (cnt - 1.0)).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxwellian_rates_equal_qbar() {
        for &d in &[Dim::Two, Dim::Three] {
            let pts = CollisionPoints::sample(d, 100_000, Proposal::default(), 11).unwrap();
            let m = IsotropicDensity::maxwellian(1.0, d).unwrap();
            let plain = collision_rates(&m, &pts, EstimatorOptions::plain()).unwrap();
            let qb = qbar(1.0, d);
            assert!(plain.r2.within(qb, 4.0), "{d:?} {:?} {qb}", plain.r2);
            assert!(plain.r4.within(qb, 4.0), "{d:?} {:?} {qb}", plain.r4);
            assert!(plain.q2.value < 5e-3 * qb);
            let cv = collision_rates(&m, &pts, EstimatorOptions::default()).unwrap();
            assert!((cv.r4.value - qb).abs() < 1e-4 * qb);
        }
    }

    #[test]
    fn point_sets_are_reproducible() {
        let a = CollisionPoints::sample(Dim::Three, 9000, Proposal::default(), 3).unwrap();
        let b = CollisionPoints::sample(Dim::Three, 9000, Proposal::default(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 9000);
    }

    #[test]
    fn ordering_for_a_bimodal_density() {
        let d = Dim::Three;
        let pts = CollisionPoints::sample(d, 50_000, Proposal::default(), 5).unwrap();
        let a = Maxwellian::new(0.3, d).unwrap();
        let b = Maxwellian::new(2.0, d).unwrap();
        let f = IsotropicDensity::from_fn(d, 12.0, 2400, |r| {
            0.6 * a.density_at_speed(r) + 0.4 * b.density_at_speed(r)
        })
        .unwrap()
        .normalized();
        let rates = collision_rates(&f, &pts, EstimatorOptions::plain()).unwrap();
        assert!(rates.r4.value <= rates.r2.value);
        assert!(rates.q2.value > 10.0 * rates.q2.stderr);
        assert!(rates.q2.value <= 2.0 * rates.r2.value);
    }

    #[test]
    fn accuracy_requirement() {
        let e = Estimate { value: 1.0, stderr: 0.1 };
        assert!(e.require("x", 0.2).is_ok());
        assert!(matches!(e.require("x", 0.01), Err(Error::Accuracy { .. })));
    }
}
