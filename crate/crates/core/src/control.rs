//! Relaxation of the homogeneous Boltzmann equation by direct simulation and
//! the controllability paths built from it.
//!
//! `relax` runs the Kac walk with many particles from data matching the
//! initial density and turns snapshots into smooth radial densities `f_τ`.
//! A one-sided path follows `f_τ` with the Boltzmann flux `Q¹ = Q^{f_τ}` up
//! to a switch time `τ_*` and with the positive part `Q²` afterwards, then
//! maps `τ ∈ [0, ∞)` onto `t ∈ [0, T)` by `τ = 1/(T − t) − 1/T`.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma_lr;

use crate::density::IsotropicDensity;
use crate::error::{invalid, Error, Result};
use crate::path::{time_reverse, Flux, FluxKind, FluxSamples, PathDiscretization, PathSlice};
use crate::quadrature::{collision_rates, CollisionPoints, Estimate, EstimatorOptions, Proposal};
use crate::seed::{derive_seed, rng_for, tag};
use crate::sim::{speed_histogram, KacWalk};
use crate::velocity::{center_and_rescale, sample_unit_vector, Dim, Maxwellian, ParticleState, Velocity};

/// Grid nodes per kernel width in [`radial_kde`].
const GRID_PER_WIDTH: f64 = 32.0;
const MAX_GRID_SPACING: f64 = 0.002;

/// Goodness of fit required before the `Q²` tail is extrapolated.
pub const MIN_TAIL_R2: f64 = 0.5;

/// Relative energy deficit below which the initial density counts as having energy `e`.
const ENERGY_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxConfig {
    pub n_dsmc: usize,
    pub tau_max: f64,
    /// Path cells on `[0, τ_max]`; snapshots are taken at `4 × cells + 1` times.
    pub cells: usize,
    /// Ratio of consecutive snapshot spacings.
    pub stretch: f64,
    /// Extra equally spaced times for the distance trace.
    pub trace_points: usize,
    pub bins: usize,
    /// Kernel width is `factor · √(2e/d) · N^{-1/5}`.
    pub bandwidth_factor: f64,
    pub seed: u64,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        RelaxConfig {
            n_dsmc: 100_000,
            tau_max: 1.5,
            cells: 32,
            stretch: 1.03,
            trace_points: 40,
            bins: 20,
            bandwidth_factor: 1.0,
            seed: 0,
        }
    }
}

impl RelaxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_dsmc < 100 {
            return invalid(format!("N_dsmc must be at least 100, got {}", self.n_dsmc));
        }
        if !(self.tau_max > 0.0 && self.tau_max.is_finite()) {
            return invalid("tau_max must be positive and finite");
        }
        if self.cells < 2 || self.bins < 2 {
            return invalid("need at least two cells and two histogram bins");
        }
        if !(self.stretch >= 1.0 && self.stretch.is_finite()) || !(self.bandwidth_factor > 0.0) {
            return invalid("stretch must be >= 1 and the bandwidth factor positive");
        }
        Ok(())
    }

    pub fn bandwidth(&self, e: f64, d: Dim) -> f64 {
        self.bandwidth_factor * (2.0 * e / d.as_f64()).sqrt() * (self.n_dsmc as f64).powf(-0.2)
    }

    /// Snapshot times: `4 · cells + 1` points, geometric spacing from `τ = 0`.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let m = 4 * self.cells;
        let r = self.stretch;
        (0..=m)
            .map(|i| {
                if r == 1.0 {
                    self.tau_max * i as f64 / m as f64
                } else {
                    self.tau_max * (r.powi(i as i32) - 1.0) / (r.powi(m as i32) - 1.0)
                }
            })
            .collect()
    }
}

/// Least-squares fit of `log D(τ) ≈ log C − γ τ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub c: f64,
    pub gamma: f64,
    pub r_squared: f64,
    /// `γ > 0`; otherwise relaxation was not observed at this scale.
    pub relaxed: bool,
}

pub fn fit_exponential(times: &[f64], values: &[f64]) -> Result<ExpFit> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 3 {
        return invalid("an exponential fit needs three positive values");
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if stt <= 0.0 {
        return invalid("an exponential fit needs distinct times");
    }
    let slope = sty / stt;
    let intercept = my - slope * mt;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 0.0 };
    Ok(ExpFit {
        c: intercept.exp(),
        gamma: -slope,
        r_squared,
        relaxed: slope < 0.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationTrace {
    pub times: Vec<f64>,
    /// Total variation between the speed histogram and its `M_e` value, in `[0, 2]`.
    pub distances: Vec<f64>,
    /// `(1/N) Σ |v_i|²/2` of the particles.
    pub particle_energy: Vec<f64>,
    /// Level that exact `M_e` samples stay below over the whole trace, up to a 3σ-sized tail.
    pub noise_floor: f64,
    /// Fit over `τ ≥ τ_max/2`.
    pub fit: ExpFit,
}

#[derive(Clone, Debug)]
pub struct Relaxation {
    pub e: f64,
    pub trace: RelaxationTrace,
    /// Snapshot times of [`RelaxConfig::snapshot_times`].
    pub times: Vec<f64>,
    pub densities: Vec<Arc<IsotropicDensity>>,
    /// Particles were lifted to energy `e` at `τ = 0`.
    pub lifted: bool,
    pub bandwidth: f64,
    pub config: RelaxConfig,
}

impl Relaxation {
    pub fn density_energies(&self) -> Vec<f64> {
        self.densities.iter().map(|f| f.energy()).collect()
    }
}

/// Speed draws from an isotropic density by inversion of its radial distribution.
fn sample_speeds<R: Rng + ?Sized>(pi: &IsotropicDensity, n: usize, rng: &mut R) -> Vec<f64> {
    let h = pi.h();
    let cells = pi.cells();
    let area = pi.dim().sphere_area();
    let p = pi.dim().get() as i32 - 1;
    let mut cum = Vec::with_capacity(cells + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    for c in 0..cells {
        // Simpson on the cell is ample for inversion.
        let g = |r: f64| pi.value(r) * r.powi(p);
        let (a, b) = (c as f64 * h, (c + 1) as f64 * h);
        acc += area * h / 6.0 * (g(a) + 4.0 * g(0.5 * (a + b)) + g(b));
        cum.push(acc);
    }
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let k = cum.partition_point(|&x| x <= u).clamp(1, cells) - 1;
            let span = cum[k + 1] - cum[k];
            let t = if span > 0.0 { (u - cum[k]) / span } else { 0.5 };
            (k as f64 + t) * h
        })
        .collect()
}

/// Particle data matching `pi` on the shell of energy `e`.
///
/// When `pi` carries less energy than `e`, the first `⌈√N⌉` particles receive
/// the excess: they are centered, rescaled and shifted so that the whole
/// configuration has zero momentum and energy exactly `e`. The lifted particles
/// carry vanishing mass as `N` grows. Returns the state and whether a lift happened.
pub fn lift_particles<R: Rng + ?Sized>(pi: &IsotropicDensity, e: f64, n: usize, rng: &mut R) -> Result<(ParticleState, bool)> {
    if n < 4 {
        return invalid("lifting needs at least four particles");
    }
    let d = pi.dim();
    let e_pi = pi.energy();
    if e_pi > e * (1.0 + ENERGY_SLACK) + crate::density::MASS_TOLERANCE {
        return invalid(format!("initial energy {e_pi} exceeds {e}"));
    }
    let speeds = sample_speeds(pi, n, rng);
    let mut v: Vec<Velocity> = speeds.iter().map(|&r| sample_unit_vector(d, rng) * r).collect();
    let lift = e_pi < e * (1.0 - ENERGY_SLACK);
    if !lift {
        center_and_rescale(&mut v, e).ok_or_else(|| Error::InvalidArgument("degenerate particle data".into()))?;
        return Ok((ParticleState::new(v, e, d)?, false));
    }
    let k = (n as f64).sqrt().ceil() as usize;
    let (head, bulk) = v.split_at_mut(k);
    let p = bulk.iter().fold(Velocity::ZERO, |a, &x| a + x);
    let e_bulk: f64 = bulk.iter().map(|x| x.energy()).sum();
    let mean = head.iter().fold(Velocity::ZERO, |a, &x| a + x) * (1.0 / k as f64);
    head.iter_mut().for_each(|x| *x -= mean);
    let e_head: f64 = head.iter().map(|x| x.energy()).sum();
    let target = n as f64 * e - e_bulk - 0.5 * p.norm_sqr() / k as f64;
    if !(target > 0.0 && e_head > 0.0) {
        return invalid("the excess energy cannot be placed on the lifted particles");
    }
    let a = (target / e_head).sqrt();
    let shift = p * (-1.0 / k as f64);
    head.iter_mut().for_each(|x| *x = *x * a + shift);
    // Remove rounding drift.
    center_and_rescale(&mut v, e).ok_or_else(|| Error::InvalidArgument("degenerate particle data".into()))?;
    Ok((ParticleState::new(v, e, d)?, true))
}

/// `e^{-x} I_0(x)` for `x ≥ 0`, polynomial approximations with relative error below `2e-7`.
fn bessel_i0e(x: f64) -> f64 {
    if x < 3.75 {
        let t = (x / 3.75).powi(2);
        let i0 = 1.0
            + t * (3.515_622_9
                + t * (3.089_942_4 + t * (1.206_749_2 + t * (0.265_973_2 + t * (0.036_076_8 + t * 0.004_581_3)))));
        i0 * (-x).exp()
    } else {
        let t = 3.75 / x;
        let p = 0.398_942_28
            + t * (0.013_285_92
                + t * (0.002_253_19
                    + t * (-0.001_575_65
                        + t * (0.009_162_81
                            + t * (-0.020_577_06 + t * (0.026_355_37 + t * (-0.016_476_33 + t * 0.003_923_77)))))));
        p / x.sqrt()
    }
}

/// Sphere-averaged Gaussian kernel of width `h` centred at speed `rho`, evaluated at speed `r`.
#[inline]
fn radial_kernel(r: f64, rho: f64, h: f64, d: Dim) -> f64 {
    let h2 = h * h;
    let gauss = (-(r - rho).powi(2) / (2.0 * h2)).exp();
    let sphere = match d {
        Dim::Three => {
            let y = 2.0 * r * rho / h2;
            if y > 1e-12 {
                -(-y).exp_m1() / y
            } else {
                1.0
            }
        }
        Dim::Two => bessel_i0e(r * rho / h2),
    };
    (2.0 * std::f64::consts::PI * h2).powf(-0.5 * d.as_f64()) * gauss * sphere
}

/// Kernel sums on the grid `r_j = j dg`: each bin `(position, count, width)` is
/// spread over `±8` widths.
fn scatter(bins: &[(f64, f64, f64)], d: Dim, dg: f64, cells: usize, n: usize) -> Vec<f64> {
    bins.par_chunks(256)
        .map(|chunk| {
            let mut out = vec![0.0; cells + 1];
            for &(rho, c, h) in chunk {
                let lo = ((rho - 8.0 * h) / dg).floor().max(0.0) as usize;
                let hi = (((rho + 8.0 * h) / dg).ceil() as usize).min(cells);
                for (j, o) in out.iter_mut().enumerate().take(hi + 1).skip(lo) {
                    *o += c * radial_kernel(j as f64 * dg, rho, h, d);
                }
            }
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(vec![0.0; cells + 1], |mut acc, part| {
            acc.iter_mut().zip(part).for_each(|(a, b)| *a += b);
            acc
        })
        .into_iter()
        .map(|x| x / n as f64)
        .collect()
}

/// Radial kernel density estimate with an isotropic Gaussian kernel of width `h`.
///
/// Speeds are shrunk by `√(1 − d h²/(2E))` first, so the estimate has the same
/// second moment `E` as the data; for Maxwellian data the estimate is unbiased.
pub fn radial_kde(velocities: &[Velocity], d: Dim, h: f64) -> Result<IsotropicDensity> {
    let n = velocities.len();
    if n == 0 || !(h > 0.0) {
        return invalid("kernel density estimation needs data and a positive width");
    }
    let energy = velocities.iter().map(|v| v.energy()).sum::<f64>() / n as f64;
    let shrink2 = 1.0 - d.as_f64() * h * h / (2.0 * energy);
    if shrink2 < 0.25 {
        return invalid(format!("kernel width {h} is too wide for energy {energy}"));
    }
    let shrink = shrink2.sqrt();
    let delta = h / 8.0;
    let top = velocities.iter().map(|v| v.norm()).fold(0.0, f64::max) * shrink;
    let nbins = (top / delta).floor() as usize + 1;
    let mut counts = vec![0u32; nbins];
    for v in velocities {
        counts[((v.norm() * shrink / delta) as usize).min(nbins - 1)] += 1;
    }
    let bins: Vec<(f64, f64, f64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(b, &c)| ((b as f64 + 0.5) * delta, c as f64, h))
        .collect();
    let dg = (h / GRID_PER_WIDTH).min(MAX_GRID_SPACING);
    let cells = ((top + 8.0 * h) / dg).ceil() as usize;
    let cells = cells + cells % 2;
    Ok(IsotropicDensity::from_values(d, dg, scatter(&bins, d, dg, cells, n))?.normalized())
}

/// `P(|V| ≤ r)` for `V ~ M_e`.
fn maxwellian_speed_cdf(r: f64, e: f64, d: Dim) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let var = 2.0 * e / d.as_f64();
    gamma_lr(0.5 * d.as_f64(), 0.5 * r * r / var)
}

struct Histogram {
    v_cut: f64,
    probs: Vec<f64>,
}

impl Histogram {
    fn new(e: f64, d: Dim, bins: usize) -> Self {
        let v_cut = 4.0 * (2.0 * e / d.as_f64()).sqrt();
        let edges: Vec<f64> = (0..=bins).map(|b| v_cut * b as f64 / bins as f64).collect();
        let mut probs: Vec<f64> = edges
            .windows(2)
            .map(|w| maxwellian_speed_cdf(w[1], e, d) - maxwellian_speed_cdf(w[0], e, d))
            .collect();
        // Overflow goes into the last bin, as in `speed_histogram`.
        *probs.last_mut().unwrap() += 1.0 - maxwellian_speed_cdf(v_cut, e, d);
        Histogram { v_cut, probs }
    }

    fn distance(&self, v: &[Velocity]) -> f64 {
        let counts = speed_histogram(v, self.probs.len(), self.v_cut);
        let n = v.len() as f64;
        counts.iter().zip(&self.probs).map(|(&c, p)| (c as f64 / n - p).abs()).sum()
    }

    /// Mean plus `z` standard deviations of the distance for exact `M_e` samples. `z` keeps
    /// the one-sided 3σ tail probability for the whole trace of `points` snapshots.
    fn noise_floor(&self, n: usize, points: usize) -> f64 {
        let tail = 1.0 - Normal::standard().cdf(3.0);
        let z = Normal::standard().inverse_cdf(1.0 - tail / points.max(1) as f64);
        let n = n as f64;
        let mut mean = 0.0;
        let mut var = 0.0;
        for &p in &self.probs {
            let s2 = p * (1.0 - p) / n;
            mean += (2.0 * s2 / std::f64::consts::PI).sqrt();
            var += s2 * (1.0 - 2.0 / std::f64::consts::PI);
        }
        mean + z * var.sqrt()
    }
}

/// Kac walk with `N_dsmc` particles from data matching `pi0`, recorded at the
/// snapshot times of `cfg` as kernel density estimates.
pub fn relax(pi0: &IsotropicDensity, e: f64, cfg: &RelaxConfig) -> Result<Relaxation> {
    cfg.validate()?;
    let d = pi0.dim();
    let mut init = rng_for(cfg.seed, &[tag::INITIAL_STATE]);
    let (state, lifted) = lift_particles(pi0, e, cfg.n_dsmc, &mut init)?;
    let n = state.n() as u64;
    let mut walk = KacWalk::new(state, 0.0, rng_for(cfg.seed, &[tag::RELAX])).with_refresh(n);

    let times = cfg.snapshot_times();
    let mut events: Vec<(f64, bool)> = times.iter().map(|&t| (t, true)).collect();
    events.extend((1..=cfg.trace_points).map(|i| (cfg.tau_max * i as f64 / cfg.trace_points as f64, false)));
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    events.dedup_by(|b, a| (a.0 - b.0).abs() < 1e-12 * cfg.tau_max);

    let hist = Histogram::new(e, d, cfg.bins);
    let bandwidth = cfg.bandwidth(e, d);
    let mut trace_t = Vec::new();
    let mut dist = Vec::new();
    let mut pe = Vec::new();
    let mut densities = Vec::with_capacity(times.len());
    for &(t, density) in &events {
        walk.advance(t, &mut |_| {});
        let v = walk.velocities();
        trace_t.push(t);
        dist.push(hist.distance(v));
        pe.push(v.iter().map(|x| x.energy()).sum::<f64>() / v.len() as f64);
        if density {
            densities.push(Arc::new(radial_kde(v, d, bandwidth)?));
        }
    }

    let (tail_t, tail_d): (Vec<f64>, Vec<f64>) = trace_t
        .iter()
        .zip(&dist)
        .filter(|(t, _)| **t >= 0.5 * cfg.tau_max)
        .map(|(t, x)| (*t, *x))
        .unzip();
    let fit = fit_exponential(&tail_t, &tail_d)?;
    let noise_floor = hist.noise_floor(cfg.n_dsmc, trace_t.len());
    Ok(Relaxation {
        e,
        trace: RelaxationTrace {
            times: trace_t,
            distances: dist,
            particle_energy: pe,
            noise_floor,
            fit,
        },
        times,
        densities,
        lifted,
        bandwidth,
        config: cfg.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxMassRow {
    pub tau: f64,
    /// `Q¹_τ(1) = R2(f_τ)`.
    pub q1: Estimate,
    /// `Q²_τ(1)`.
    pub q2: Estimate,
}

pub fn flux_masses(times: &[f64], densities: &[Arc<IsotropicDensity>], points: &CollisionPoints, e: f64) -> Result<Vec<FluxMassRow>> {
    if times.len() != densities.len() {
        return invalid("one time per density is required");
    }
    let opts = EstimatorOptions {
        control_variate: true,
        proposal_energy: Some(e),
    };
    times
        .iter()
        .zip(densities)
        .map(|(&tau, f)| {
            let r = collision_rates(f, points, opts)?;
            Ok(FluxMassRow { tau, q1: r.r2, q2: r.q2 })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    pub relax: RelaxConfig,
    /// Collision points shared by all flux evaluations.
    pub points: usize,
    pub proposal: Proposal,
    /// Exact-`M_e` kernel estimates used to measure the `Q²` noise floor.
    pub null_samples: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            relax: RelaxConfig {
                n_dsmc: 1_000_000,
                tau_max: 2.5,
                ..RelaxConfig::default()
            },
            points: 200_000,
            proposal: Proposal {
                defensive_weight: 0.1,
                defensive_energy: 36.0,
                tail_weight: 0.05,
                tail_energy: 500.0,
            },
            null_samples: 3,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        self.relax.validate()?;
        if self.points < 1000 {
            return invalid("at least 1000 collision points are required");
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.relax.seed = seed;
        self
    }
}

/// `Q²(1)` of kernel estimates built from exact microcanonical `M_e` samples.
fn q2_noise_floor(e: f64, d: Dim, cfg: &ControlConfig, bandwidth: f64, points: &Arc<CollisionPoints>) -> Result<(f64, f64)> {
    if cfg.null_samples == 0 {
        return Ok((0.0, 0.0));
    }
    let m = Maxwellian::new(e, d)?;
    let vals = (0..cfg.null_samples as u64)
        .map(|k| {
            let mut rng = rng_for(cfg.relax.seed, &[tag::RELAX, u64::MAX, k]);
            let mut v: Vec<Velocity> = (0..cfg.relax.n_dsmc).map(|_| m.sample(&mut rng)).collect();
            center_and_rescale(&mut v, e).ok_or_else(|| Error::InvalidArgument("degenerate sample".into()))?;
            let f = radial_kde(&v, d, bandwidth)?;
            Ok(FluxSamples::from_density(&f, points.clone(), e.sqrt(), FluxKind::PositivePart)?.mass())
        })
        .collect::<Result<Vec<f64>>>()?;
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let sd = if vals.len() > 1 {
        (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok((mean, sd))
}

/// One path cell in `τ`, before reparametrization.
#[derive(Clone, Debug)]
struct Cell {
    tau0: f64,
    tau1: f64,
    density: Arc<IsotropicDensity>,
    q1: FluxSamples,
    q2: FluxSamples,
}

/// Relaxation data and flux masses from which one-sided paths for any `κ ≥ κ_*` are assembled.
#[derive(Clone, Debug)]
pub struct ControlPlan {
    pub e: f64,
    pub relaxation: Arc<Relaxation>,
    pub initial: Arc<IsotropicDensity>,
    pub terminal: Arc<IsotropicDensity>,
    pub points: Arc<CollisionPoints>,
    cells: Vec<Cell>,
    /// Extrapolated `∫_{τ_max}^∞ Q²_τ(1) dτ`.
    pub kappa_tail: f64,
    pub kappa_star: f64,
    /// Monte Carlo standard error of `κ_*`.
    pub kappa_star_stderr: f64,
    /// Mean and spread of `Q²(1)` for kernel estimates of exact `M_e` samples.
    pub q2_floor: (f64, f64),
    /// Snapshot stride: 1 for the fine grid, 2 for every other snapshot.
    pub stride: usize,
}

impl ControlPlan {
    pub fn new(pi: &IsotropicDensity, e: f64, cfg: &ControlConfig) -> Result<Self> {
        cfg.validate()?;
        let relaxation = Arc::new(relax(pi, e, &cfg.relax)?);
        let points = Arc::new(CollisionPoints::sample(
            pi.dim(),
            cfg.points,
            cfg.proposal,
            derive_seed(cfg.relax.seed, &[tag::QUADRATURE]),
        )?);
        let floor = q2_noise_floor(e, pi.dim(), cfg, relaxation.bandwidth, &points)?;
        Self::from_relaxation(relaxation, points, floor, 1)
    }

    /// Same relaxation run on a grid with half as many cells.
    pub fn coarsened(&self) -> Result<Self> {
        Self::from_relaxation(self.relaxation.clone(), self.points.clone(), self.q2_floor, 2 * self.stride)
    }

    fn from_relaxation(relaxation: Arc<Relaxation>, points: Arc<CollisionPoints>, q2_floor: (f64, f64), stride: usize) -> Result<Self> {
        let e = relaxation.e;
        let d = points.dim();
        let times = &relaxation.times;
        let step = 2 * stride;
        if (times.len() - 1) % step != 0 {
            return invalid("the snapshot grid does not divide into cells");
        }
        let scale = e.sqrt();
        let cells = (0..(times.len() - 1) / step)
            .into_par_iter()
            .map(|c| {
                let mid = c * step + stride;
                let f = relaxation.densities[mid].clone();
                Ok(Cell {
                    tau0: times[c * step],
                    tau1: times[(c + 1) * step],
                    q1: FluxSamples::from_density(&f, points.clone(), scale, FluxKind::Boltzmann)?,
                    q2: FluxSamples::from_density(&f, points.clone(), scale, FluxKind::PositivePart)?,
                    density: f,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let last = relaxation.densities.last().expect("snapshots exist").clone();
        let q2_last = FluxSamples::from_density(&last, points.clone(), scale, FluxKind::PositivePart)?.mass();
        let fit = relaxation.trace.fit;
        let kappa_tail = if fit.relaxed && fit.r_squared >= MIN_TAIL_R2 {
            (q2_last - q2_floor.0).max(0.0) / fit.gamma
        } else {
            0.0
        };
        let mut kappa_star = kappa_tail;
        let mut var = 0.0;
        for c in &cells {
            let dt = c.tau1 - c.tau0;
            kappa_star += dt * c.q2.mass();
            var += (dt * weight_stderr(&c.q2)).powi(2);
        }
        Ok(ControlPlan {
            e,
            initial: relaxation.densities[0].clone(),
            terminal: Arc::new(IsotropicDensity::maxwellian(e, d)?),
            relaxation,
            points,
            cells,
            kappa_tail,
            kappa_star,
            kappa_star_stderr: var.sqrt(),
            q2_floor,
            stride,
        })
    }

    /// `κ_*` uncertainty including the kernel-estimate floor of `Q²` accumulated up to `τ_max`.
    pub fn kappa_star_uncertainty(&self) -> f64 {
        let floor = self.q2_floor.0 * self.relaxation.config.tau_max;
        (self.kappa_star_stderr.powi(2) + floor * floor).sqrt()
    }

    pub fn flux_masses(&self) -> Vec<(f64, f64, f64)> {
        self.cells
            .iter()
            .map(|c| (0.5 * (c.tau0 + c.tau1), c.q1.mass(), c.q2.mass()))
            .collect()
    }

    /// Smallest `(Q¹ − Q²)(1)` along the trace, the rate at which mass accrues before `τ_*`.
    pub fn q1_floor(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| c.q1.mass() - c.q2.mass())
            .fold(f64::INFINITY, f64::min)
    }

    /// `F(τ) = ∫₀^τ Q¹ + ∫_τ^∞ Q²`, nondecreasing with `F(0) = κ_*`.
    fn cumulative(&self, tau: f64) -> f64 {
        let mut total = self.kappa_tail;
        for c in &self.cells {
            let (a, b) = (c.tau0, c.tau1);
            let split = tau.clamp(a, b);
            total += (split - a) * c.q1.mass() + (b - split) * c.q2.mass();
        }
        let tau_max = self.cells.last().map(|c| c.tau1).unwrap_or(0.0);
        if tau > tau_max {
            total += (tau - tau_max) * self.last_q1_mass();
        }
        total
    }

    fn last_q1_mass(&self) -> f64 {
        self.cells.last().map(|c| c.q1.mass()).unwrap_or(0.0)
    }

    /// Switch time `τ_*` with `F(τ_*) = κ`, by bisection.
    pub fn switch_time(&self, kappa: f64) -> Result<f64> {
        if kappa < self.kappa_star {
            return Err(Error::InfeasibleKappa {
                kappa,
                kappa_star: self.kappa_star,
            });
        }
        let mut hi = self.cells.last().map(|c| c.tau1).unwrap_or(1.0).max(1.0);
        while self.cumulative(hi) < kappa {
            hi *= 2.0;
            if hi > 1e12 {
                return invalid("switch time diverges");
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cumulative(mid) < kappa {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 * hi.max(1.0) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// One-sided path `π → M_e` on `[0, T]` with total flux mass `κ`.
    pub fn assemble(&self, t: f64, kappa: f64) -> Result<ControlPath> {
        if !(t > 0.0 && t.is_finite()) {
            return invalid("horizon T must be positive and finite");
        }
        let tau_star = self.switch_time(kappa)?;
        // τ-cells with their flux kind.
        let mut pieces: Vec<(f64, f64, Arc<IsotropicDensity>, FluxSamples, FluxPhase)> = Vec::new();
        for c in &self.cells {
            if tau_star > c.tau0 {
                pieces.push((c.tau0, tau_star.min(c.tau1), c.density.clone(), c.q1.clone(), FluxPhase::Q1));
            }
            if tau_star < c.tau1 {
                pieces.push((tau_star.max(c.tau0), c.tau1, c.density.clone(), c.q2.clone(), FluxPhase::Q2));
            }
        }
        let last = self.cells.last().expect("cells exist");
        let mut tau_end = last.tau1;
        if tau_star > tau_end {
            let width = last.tau1 - last.tau0;
            let steps = ((tau_star - tau_end) / width).ceil().max(1.0) as usize;
            let dt = (tau_star - tau_end) / steps as f64;
            for k in 0..steps {
                let a = tau_end + k as f64 * dt;
                let b = if k + 1 == steps { tau_star } else { a + dt };
                pieces.push((a, b, last.density.clone(), last.q1.clone(), FluxPhase::Q1));
            }
            tau_end = tau_star;
        }
        pieces.retain(|p| p.1 > p.0);

        let t_of = |tau: f64| t - 1.0 / (tau + 1.0 / t);
        let mut slices = Vec::with_capacity(pieces.len() + 1);
        let mut phases = Vec::with_capacity(pieces.len() + 1);
        for (a, b, f, flux, phase) in pieces {
            phases.push(phase);
            let (t0, t1) = (t_of(a), t_of(b));
            slices.push(PathSlice {
                t0,
                t1,
                density: f,
                flux: Flux::Samples(flux.scaled((b - a) / (t1 - t0))),
            });
        }
        let t_tail = t_of(tau_end);
        let tail_mass = self.kappa_tail;
        let tail_flux = if tail_mass > 0.0 {
            let m = last.q2.mass();
            last.q2.scaled(tail_mass / (m * (t - t_tail)))
        } else {
            last.q2.scaled(0.0)
        };
        slices.push(PathSlice {
            t0: t_tail,
            t1: t,
            density: last.density.clone(),
            flux: Flux::Samples(tail_flux),
        });
        phases.push(FluxPhase::Q2);
        if let Some(s) = slices.first_mut() {
            s.t0 = 0.0;
        }
        let path = PathDiscretization::new(self.e, self.initial.clone(), self.terminal.clone(), slices, self.points.clone())?;
        Ok(ControlPath {
            path,
            kappa,
            kappa_star: self.kappa_star,
            tau_star,
            t,
            phases,
        })
    }
}

fn weight_stderr(fs: &FluxSamples) -> f64 {
    let n = fs.weights.len() as f64;
    let mean = fs.mass() / n;
    let var = fs.weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (n * var).sqrt()
}

/// Which flux a slice of a control path carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FluxPhase {
    Q1,
    Q2,
}

#[derive(Clone, Debug)]
pub struct ControlPath {
    pub path: PathDiscretization,
    pub kappa: f64,
    pub kappa_star: f64,
    pub tau_star: f64,
    pub t: f64,
    /// One entry per slice.
    pub phases: Vec<FluxPhase>,
}

pub fn build_one_sided_path(pi: &IsotropicDensity, e: f64, t: f64, kappa: f64, cfg: &ControlConfig) -> Result<ControlPath> {
    ControlPlan::new(pi, e, cfg)?.assemble(t, kappa)
}

#[derive(Clone, Debug)]
pub struct TwoSidedPath {
    pub path: PathDiscretization,
    pub kappa: f64,
    /// `(κ_*(π₁), κ_*(π₂))`.
    pub kappa_star: (f64, f64),
    /// Flux mass of each leg.
    pub leg_kappa: (f64, f64),
    pub tau_star: (f64, f64),
    pub t: f64,
    pub phases: Vec<FluxPhase>,
}

/// Joins `π₁ → M_e` on `[0, T/2]` with the reversal of `π₂ → M_e`. Each leg
/// gets its own `κ_*` plus half of the surplus `κ − κ_*(π₁) − κ_*(π₂)`.
pub fn assemble_two_sided(first: &ControlPlan, second: &ControlPlan, t: f64, kappa: f64) -> Result<TwoSidedPath> {
    let needed = first.kappa_star + second.kappa_star;
    if kappa < needed {
        return Err(Error::InfeasibleKappa {
            kappa,
            kappa_star: needed,
        });
    }
    let surplus = 0.5 * (kappa - needed);
    let (k1, k2) = (first.kappa_star + surplus, second.kappa_star + surplus);
    let a = first.assemble(0.5 * t, k1)?;
    let b = second.assemble(0.5 * t, k2)?;
    let path = a.path.concat(&time_reverse(&b.path))?;
    let phases = a.phases.iter().chain(b.phases.iter().rev()).copied().collect();
    Ok(TwoSidedPath {
        path,
        kappa,
        kappa_star: (first.kappa_star, second.kappa_star),
        leg_kappa: (k1, k2),
        tau_star: (a.tau_star, b.tau_star),
        t,
        phases,
    })
}

pub fn build_two_sided_path(
    pi1: &IsotropicDensity,
    pi2: &IsotropicDensity,
    e: f64,
    t: f64,
    kappa: f64,
    cfg: &ControlConfig,
) -> Result<TwoSidedPath> {
    let (p1, p2) = plan_pair(pi1, pi2, e, cfg)?;
    assemble_two_sided(&p1, &p2, t, kappa)
}

/// Plans for both legs of a two-sided path; the second relaxes on its own stream.
pub fn plan_pair(pi1: &IsotropicDensity, pi2: &IsotropicDensity, e: f64, cfg: &ControlConfig) -> Result<(ControlPlan, ControlPlan)> {
    let cfg2 = cfg.clone().with_seed(second_leg_seed(cfg.relax.seed));
    let (p1, p2) = rayon::join(|| ControlPlan::new(pi1, e, cfg), || ControlPlan::new(pi2, e, &cfg2));
    Ok((p1?, p2?))
}

pub fn second_leg_seed(seed: u64) -> u64 {
    derive_seed(seed, &[tag::RELAX, 2])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RelaxConfig {
        RelaxConfig {
            n_dsmc: 5_000,
            tau_max: 1.0,
            cells: 4,
            trace_points: 10,
            seed: 3,
            ..RelaxConfig::default()
        }
    }

    #[test]
    fn exponential_fit_recovers_rate() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.0 * (-1.5 * t).exp()).collect();
        let fit = fit_exponential(&t, &y).unwrap();
        assert!((fit.gamma - 1.5).abs() < 1e-12 && (fit.c - 2.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12 && fit.relaxed);
    }

    #[test]
    fn lift_reaches_the_shell() {
        let pi = IsotropicDensity::maxwellian(0.5, Dim::Three).unwrap();
        let mut rng = rng_for(1, &[0]);
        let (state, lifted) = lift_particles(&pi, 1.0, 10_000, &mut rng).unwrap();
        assert!(lifted);
        state.check_shell(1e-10).unwrap();
        let bulk: f64 = state.velocities[100..].iter().map(|v| v.energy()).sum::<f64>() / 9900.0;
        assert!((bulk - 0.5).abs() < 0.03, "{bulk}");
    }

    #[test]
    fn kde_preserves_energy_and_mass() {
        for d in [Dim::Two, Dim::Three] {
            let mut rng = rng_for(2, &[d.get() as u64]);
            let s = crate::velocity::sample_microcanonical(1.0, d, 20_000, &mut rng).unwrap();
            let f = radial_kde(&s.velocities, d, 0.15).unwrap();
            assert!((f.mass() - 1.0).abs() < 1e-9);
            assert!((f.energy() - 1.0).abs() < 2e-3, "{d:?}: {}", f.energy());
            let m = IsotropicDensity::maxwellian(1.0, d).unwrap();
            assert!(f.l1_distance(&m) < 0.05);
        }
    }

    #[test]
    fn i0e_matches_series() {
        for &x in &[0.0f64, 0.5, 2.0, 3.7, 3.8, 10.0, 50.0] {
            let mut term: f64 = 1.0;
            let mut sum = 1.0;
            for k in 1..400 {
                term *= (x / 2.0).powi(2) / (k * k) as f64;
                sum += term;
            }
            let want = sum * (-x).exp();
            assert!((bessel_i0e(x) - want).abs() < 1e-6 * want, "{x}");
        }
    }

    #[test]
    fn speed_cdf_limits() {
        assert_eq!(maxwellian_speed_cdf(0.0, 1.0, Dim::Three), 0.0);
        assert!((maxwellian_speed_cdf(50.0, 1.0, Dim::Two) - 1.0).abs() < 1e-15);
        let r = 1.3;
        assert!((maxwellian_speed_cdf(r, 1.0, Dim::Two) - (1.0 - (-r * r / 2.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn relax_keeps_energy_and_snapshots() {
        let pi = IsotropicDensity::maxwellian(0.5, Dim::Three).unwrap();
        let r = relax(&pi, 1.0, &small()).unwrap();
        assert!(r.lifted);
        assert_eq!(r.densities.len(), 17);
        assert!(r.trace.particle_energy.iter().all(|x| (x - 1.0).abs() < 1e-9));
        assert!(r.trace.distances.iter().all(|x| (0.0..=2.0).contains(x)));
    }

    #[test]
    fn infeasible_kappa_reports_threshold() {
        let pi = IsotropicDensity::maxwellian(0.5, Dim::Three).unwrap();
        let cfg = ControlConfig {
            relax: small(),
            points: 5000,
            null_samples: 1,
            ..ControlConfig::default()
        };
        let plan = ControlPlan::new(&pi, 1.0, &cfg).unwrap();
        match plan.assemble(1.0, 0.5 * plan.kappa_star) {
            Err(Error::InfeasibleKappa { kappa_star, .. }) => assert_eq!(kappa_star, plan.kappa_star),
            other => panic!("expected infeasible kappa, got {other:?}"),
        }
        let path = plan.assemble(1.0, plan.kappa_star + 1.0).unwrap();
        let mass = path.path.total_flux_mass().unwrap();
        assert!((mass - path.kappa).abs() < 1e-6 * path.kappa, "{mass} vs {}", path.kappa);
        assert!((path.path.horizon() - 1.0).abs() < 1e-12);
        assert_eq!(path.phases.len(), path.path.slices.len());
        assert_eq!(path.phases.first(), Some(&FluxPhase::Q1));
        assert_eq!(path.phases.last(), Some(&FluxPhase::Q2));
    }
}
