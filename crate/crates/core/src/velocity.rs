//! Velocity-space primitives: hard-sphere collision geometry, the collision
//! kernel, Maxwellians and sampling on the microcanonical shell.
//!
//! Velocities are stored as three components for both supported dimensions;
//! in `d = 2` the third component is identically zero and every direction
//! drawn by this module lies in the plane, so collisions keep it zero.
//!
//! Sphere integrals use the unnormalized surface measure throughout, so
//! `∫_{S^{d-1}} dω = 2π` for `d = 2` and `4π` for `d = 3`.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Tolerance on `|ω| = 1` accepted by the checked entry points.
pub const UNIT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub enum Dim {
    Two,
    Three,
}

impl Dim {
    pub fn new(d: usize) -> Result<Self> {
        match d {
            2 => Ok(Dim::Two),
            3 => Ok(Dim::Three),
            other => Err(Error::UnsupportedDimension(other)),
        }
    }

    #[inline]
    pub fn get(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }

    #[inline]
    pub fn as_f64(self) -> f64 {
        self.get() as f64
    }

    /// `|S^{d-1}|`.
    #[inline]
    pub fn sphere_area(self) -> f64 {
        match self {
            Dim::Two => 2.0 * PI,
            Dim::Three => 4.0 * PI,
        }
    }

    /// `c_d = ½ ∫ |u·ω| dω` for any unit `u`, so that `∫ B(v - w, ω) dω = c_d |v - w|`.
    #[inline]
    pub fn collision_constant(self) -> f64 {
        match self {
            Dim::Two => 2.0,
            Dim::Three => PI,
        }
    }

    /// `E|X|` for `X ~ N(0, I_d)`.
    #[inline]
    pub fn mean_gaussian_norm(self) -> f64 {
        match self {
            Dim::Two => (PI / 2.0).sqrt(),
            Dim::Three => 2.0 * (2.0 / PI).sqrt(),
        }
    }
}

impl TryFrom<usize> for Dim {
    type Error = Error;
    fn try_from(d: usize) -> Result<Self> {
        Dim::new(d)
    }
}

impl From<Dim> for usize {
    fn from(d: Dim) -> usize {
        d.get()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Velocity(pub [f64; 3]);

impl Velocity {
    pub const ZERO: Velocity = Velocity([0.0; 3]);

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Velocity([x, y, z])
    }

    pub fn planar(x: f64, y: f64) -> Self {
        Velocity([x, y, 0.0])
    }

    #[inline]
    pub fn dot(self, other: Velocity) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    #[inline]
    pub fn norm_sqr(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    /// `ζ₀(v) = |v|²/2`.
    #[inline]
    pub fn energy(self) -> f64 {
        0.5 * self.norm_sqr()
    }
}

impl Add for Velocity {
    type Output = Velocity;
    #[inline]
    fn add(self, o: Velocity) -> Velocity {
        Velocity([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Velocity {
    type Output = Velocity;
    #[inline]
    fn sub(self, o: Velocity) -> Velocity {
        Velocity([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Mul<f64> for Velocity {
    type Output = Velocity;
    #[inline]
    fn mul(self, a: f64) -> Velocity {
        Velocity([self.0[0] * a, self.0[1] * a, self.0[2] * a])
    }
}

impl Neg for Velocity {
    type Output = Velocity;
    #[inline]
    fn neg(self) -> Velocity {
        self * -1.0
    }
}

impl AddAssign for Velocity {
    #[inline]
    fn add_assign(&mut self, o: Velocity) {
        *self = *self + o;
    }
}

impl SubAssign for Velocity {
    #[inline]
    fn sub_assign(&mut self, o: Velocity) {
        *self = *self - o;
    }
}

/// The collision invariants `(ζ₀, ζ) = (|v|²/2, v)`, summed over any set of velocities.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConservedQuantities {
    pub energy: f64,
    pub momentum: Velocity,
}

impl ConservedQuantities {
    pub fn of(v: Velocity) -> Self {
        ConservedQuantities {
            energy: v.energy(),
            momentum: v,
        }
    }

    pub fn total<'a>(vs: impl IntoIterator<Item = &'a Velocity>) -> Self {
        vs.into_iter().fold(Self::default(), |acc, &v| ConservedQuantities {
            energy: acc.energy + v.energy(),
            momentum: acc.momentum + v,
        })
    }
}

fn check_unit(omega: Velocity) -> Result<()> {
    if !omega.is_finite() || (omega.norm() - 1.0).abs() > UNIT_TOLERANCE {
        return invalid(format!("scattering direction is not a unit vector: |ω| = {}", omega.norm()));
    }
    Ok(())
}

/// Post-collisional velocities `(v + (ω·(w−v))ω, w − (ω·(w−v))ω)`.
pub fn collide(v: Velocity, w: Velocity, omega: Velocity) -> Result<(Velocity, Velocity)> {
    check_unit(omega)?;
    Ok(collide_unchecked(v, w, omega))
}

#[inline]
pub(crate) fn collide_unchecked(v: Velocity, w: Velocity, omega: Velocity) -> (Velocity, Velocity) {
    let c = omega.dot(w - v);
    let dv = omega * c;
    (v + dv, w - dv)
}

/// Hard-sphere kernel `B(v − w, ω) = |(v − w)·ω| / 2`.
pub fn kernel_b(v: Velocity, w: Velocity, omega: Velocity) -> Result<f64> {
    check_unit(omega)?;
    Ok(0.5 * (v - w).dot(omega).abs())
}

/// `∫ B(v − w, ω) dω = c_d |v − w|`.
#[inline]
pub fn pair_rate(v: Velocity, w: Velocity, d: Dim) -> f64 {
    d.collision_constant() * (v - w).norm()
}

/// Uniform direction on `S^{d-1}`.
#[inline]
pub fn sample_unit_vector<R: Rng + ?Sized>(d: Dim, rng: &mut R) -> Velocity {
    match d {
        Dim::Two => {
            let theta = 2.0 * PI * rng.random::<f64>();
            Velocity::planar(theta.cos(), theta.sin())
        }
        Dim::Three => {
            let z = 2.0 * rng.random::<f64>() - 1.0;
            let phi = 2.0 * PI * rng.random::<f64>();
            let rho = (1.0 - z * z).max(0.0).sqrt();
            Velocity::new(rho * phi.cos(), rho * phi.sin(), z)
        }
    }
}

/// Direction `ω` with density proportional to `|(v − w)·ω|` on the sphere.
pub fn sample_scatter_direction<R: Rng + ?Sized>(
    v: Velocity,
    w: Velocity,
    d: Dim,
    rng: &mut R,
) -> Result<Velocity> {
    let rel = v - w;
    let norm = rel.norm();
    if !(norm > 0.0) {
        return invalid("scattering direction undefined for equal velocities");
    }
    Ok(scatter_direction_counted(rel * (1.0 / norm), d, rng).0)
}

/// Rejection sampler against the uniform direction with acceptance `|û·ω|`.
/// Returns the direction and the number of proposals used.
#[inline]
pub fn scatter_direction_counted<R: Rng + ?Sized>(
    unit_rel: Velocity,
    d: Dim,
    rng: &mut R,
) -> (Velocity, u32) {
    let mut trials = 0;
    loop {
        trials += 1;
        let omega = sample_unit_vector(d, rng);
        if rng.random::<f64>() < unit_rel.dot(omega).abs() {
            return (omega, trials);
        }
    }
}

/// Centered Maxwellian `M_e` with energy per particle `e`:
/// `g(v) = (d/(4πe))^{d/2} exp(−d|v|²/(4e))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Maxwellian {
    pub e: f64,
    pub d: Dim,
}

impl Maxwellian {
    pub fn new(e: f64, d: Dim) -> Result<Self> {
        if !(e > 0.0 && e.is_finite()) {
            return invalid(format!("Maxwellian energy must be positive, got {e}"));
        }
        Ok(Maxwellian { e, d })
    }

    /// Per-component variance `2e/d`.
    #[inline]
    pub fn variance(&self) -> f64 {
        2.0 * self.e / self.d.as_f64()
    }

    #[inline]
    pub fn log_density_at_speed(&self, r: f64) -> f64 {
        let d = self.d.as_f64();
        0.5 * d * (d / (4.0 * PI * self.e)).ln() - d * r * r / (4.0 * self.e)
    }

    #[inline]
    pub fn density_at_speed(&self, r: f64) -> f64 {
        self.log_density_at_speed(r).exp()
    }

    pub fn density(&self, v: Velocity) -> f64 {
        self.density_at_speed(v.norm())
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Velocity {
        let s = self.variance().sqrt();
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        match self.d {
            Dim::Two => Velocity::planar(s * x, s * y),
            Dim::Three => {
                let z: f64 = rng.sample(StandardNormal);
                Velocity::new(s * x, s * y, s * z)
            }
        }
    }
}

pub fn sample_maxwellian<R: Rng + ?Sized>(e: f64, d: Dim, n: usize, rng: &mut R) -> Result<Vec<Velocity>> {
    let m = Maxwellian::new(e, d)?;
    Ok((0..n).map(|_| m.sample(rng)).collect())
}

/// A point of the microcanonical shell `Σ^N_e`: `N` velocities with energy
/// per particle `e` and vanishing total momentum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub velocities: Vec<Velocity>,
    pub e: f64,
    pub d: Dim,
}

/// Relative energy tolerance and absolute mean-velocity tolerance of a fresh state.
pub const SHELL_TOLERANCE: f64 = 1e-10;

impl ParticleState {
    /// Wraps velocities that are already on the shell; checks the invariants.
    pub fn new(velocities: Vec<Velocity>, e: f64, d: Dim) -> Result<Self> {
        let state = ParticleState { velocities, e, d };
        state.check_shell(SHELL_TOLERANCE)?;
        Ok(state)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.velocities.len()
    }

    pub fn totals(&self) -> ConservedQuantities {
        ConservedQuantities::total(&self.velocities)
    }

    pub fn energy_per_particle(&self) -> f64 {
        self.totals().energy / self.n() as f64
    }

    /// Largest deviation from the shell: relative energy error and mean velocity.
    pub fn shell_deviation(&self) -> (f64, f64) {
        let t = self.totals();
        let n = self.n() as f64;
        let de = (t.energy / n - self.e).abs() / self.e;
        let dp = t.momentum.0.iter().map(|c| (c / n).abs()).fold(0.0, f64::max);
        (de, dp)
    }

    pub fn check_shell(&self, tol: f64) -> Result<()> {
        if self.n() < 2 {
            return invalid("a particle state needs at least two particles");
        }
        if self.velocities.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite velocity component");
        }
        let (de, dp) = self.shell_deviation();
        let scale = (2.0 * self.e).sqrt();
        if de > tol || dp > tol * scale.max(1.0) {
            return invalid(format!(
                "state is off the shell: relative energy error {de:.3e}, mean velocity {dp:.3e}"
            ));
        }
        Ok(())
    }

    pub fn speeds(&self) -> impl Iterator<Item = f64> + '_ {
        self.velocities.iter().map(|v| v.norm())
    }
}

/// Shifts to zero mean and rescales so that `(1/N) Σ |v_i|²/2 = e`.
/// Returns `None` when the centered configuration carries no energy.
pub(crate) fn center_and_rescale(velocities: &mut [Velocity], e: f64) -> Option<()> {
    let n = velocities.len() as f64;
    let mean = velocities.iter().fold(Velocity::ZERO, |a, &v| a + v) * (1.0 / n);
    velocities.iter_mut().for_each(|v| *v -= mean);
    let energy: f64 = velocities.iter().map(|v| v.energy()).sum();
    if !(energy > 0.0) {
        return None;
    }
    let scale = (n * e / energy).sqrt();
    velocities.iter_mut().for_each(|v| *v = *v * scale);
    Some(())
}

/// Uniform sample on `Σ^N_e` by centering and rescaling a Maxwellian sample.
pub fn sample_microcanonical<R: Rng + ?Sized>(e: f64, d: Dim, n: usize, rng: &mut R) -> Result<ParticleState> {
    if n < 2 {
        return invalid(format!("microcanonical sampling needs N >= 2, got {n}"));
    }
    let m = Maxwellian::new(e, d)?;
    loop {
        let mut vs: Vec<Velocity> = (0..n).map(|_| m.sample(rng)).collect();
        if center_and_rescale(&mut vs, e).is_some() {
            return ParticleState::new(vs, e, d);
        }
    }
}
