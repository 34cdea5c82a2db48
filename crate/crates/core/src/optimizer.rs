//! Static variational problems over a parametric family of isotropic densities:
//! `q̂_e = sup R4(π)` and `i_e^+(q) = inf [q log(q/R4(π)) − q + R2(π)]`.
//!
//! The family is a mixture of radially shifted Maxwellians
//! `f_k(v) ∝ exp(−d(|v| − μ_k)²/(4 e_k))`; with all shifts zero it is the plain
//! Maxwellian mixture `Σ w_k M_{e_k}`. Every evaluated point is projected into
//! `𝒫_e` by rescaling velocities when its energy exceeds `e`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::density::{IsotropicDensity, DEFAULT_CELLS};
use crate::error::{invalid, Result};
use crate::functionals::{i_minus, j_e, poisson_bound, qbar, static_cost, RateBoundsRow, RateBoundsTable};
use crate::quadrature::{collision_rates, CollisionPoints, CollisionRates, Estimate, EstimatorOptions, Proposal};
use crate::seed::{derive_seed, tag};
use crate::velocity::Dim;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityFamily {
    pub components: usize,
    /// Allow nonzero radial shifts `μ_k`.
    pub shifted: bool,
}

impl Default for DensityFamily {
    fn default() -> Self {
        DensityFamily {
            components: 3,
            shifted: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub energies: Vec<f64>,
    pub shifts: Vec<f64>,
}

impl MixtureParams {
    pub fn maxwellian(e: f64) -> Self {
        MixtureParams {
            weights: vec![1.0],
            energies: vec![e],
            shifts: vec![0.0],
        }
    }

    fn scaled(&self, lambda: f64) -> Self {
        MixtureParams {
            weights: self.weights.clone(),
            energies: self.energies.iter().map(|e| e * lambda * lambda).collect(),
            shifts: self.shifts.iter().map(|m| m * lambda).collect(),
        }
    }

    /// Tabulated, normalized density of the mixture.
    pub fn density(&self, d: Dim) -> Result<IsotropicDensity> {
        let dd = d.as_f64();
        let r_max = self
            .energies
            .iter()
            .zip(&self.shifts)
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|((&e, &m), _)| m + (240.0 * e / dd).sqrt())
            .fold(0.0, f64::max);
        if !(r_max > 0.0 && r_max.is_finite()) {
            return invalid("mixture has no component with positive weight");
        }
        let cells = DEFAULT_CELLS;
        let h = r_max / cells as f64;
        let mut total = vec![0.0; cells + 1];
        for ((&w, &e), &mu) in self.weights.iter().zip(&self.energies).zip(&self.shifts) {
            if w <= 0.0 {
                continue;
            }
            let a = dd / (4.0 * e);
            let comp = IsotropicDensity::from_fn(d, r_max, cells, |r| (-a * (r - mu).powi(2)).exp())?;
            let z = comp.mass();
            for (t, &c) in total.iter_mut().zip(comp.values()) {
                *t += w * c / z;
            }
        }
        Ok(IsotropicDensity::from_values(d, h, total)?.normalized())
    }
}

impl DensityFamily {
    pub fn maxwellian_only(components: usize) -> Self {
        DensityFamily {
            components,
            shifted: false,
        }
    }

    /// Number of free coordinates.
    pub fn dimension(&self) -> usize {
        let m = self.components;
        (m - 1) + m + if self.shifted { m } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return invalid("a density family needs at least one component");
        }
        Ok(())
    }

    /// Unconstrained coordinates to parameters (before projection).
    pub fn decode(&self, x: &[f64], e: f64) -> MixtureParams {
        let m = self.components;
        let mut logits: Vec<f64> = x[..m - 1].to_vec();
        logits.push(0.0);
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = ex.iter().sum();
        let energies = x[m - 1..2 * m - 1].iter().map(|l| e * l.clamp(-30.0, 30.0).exp()).collect();
        let shifts = if self.shifted {
            x[2 * m - 1..3 * m - 1].iter().map(|s| s.abs() * e.sqrt()).collect()
        } else {
            vec![0.0; m]
        };
        MixtureParams {
            weights: ex.iter().map(|v| v / z).collect(),
            energies,
            shifts,
        }
    }

    pub fn encode(&self, p: &MixtureParams, e: f64) -> Vec<f64> {
        let m = self.components;
        let last = p.weights[m - 1].max(1e-300).ln();
        let mut x: Vec<f64> = p.weights[..m - 1].iter().map(|w| w.max(1e-300).ln() - last).collect();
        x.extend(p.energies.iter().map(|v| (v / e).ln()));
        if self.shifted {
            x.extend(p.shifts.iter().map(|s| s / e.sqrt()));
        }
        x
    }

    /// Decodes and projects into `𝒫_e`.
    pub fn realize(&self, x: &[f64], e: f64, d: Dim) -> Result<(MixtureParams, IsotropicDensity)> {
        let mut p = self.decode(x, e);
        let mut f = p.density(d)?;
        for _ in 0..8 {
            let en = f.energy();
            if en <= e {
                return Ok((p, f));
            }
            p = p.scaled((e / en).sqrt() * (1.0 - 1e-12));
            f = p.density(d)?;
        }
        invalid("energy projection did not converge")
    }

    /// Starting point: `M_e` in every component, slightly spread.
    pub fn start(&self, e: f64) -> Vec<f64> {
        let m = self.components;
        let p = MixtureParams {
            weights: vec![1.0 / m as f64; m],
            energies: vec![e; m],
            shifts: vec![0.0; m],
        };
        self.encode(&p, e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub budget: usize,
    pub restarts: usize,
    pub surrogate_points: usize,
    pub final_points: usize,
    pub family: DensityFamily,
    pub proposal: Proposal,
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            budget: 400,
            restarts: 3,
            surrogate_points: 200_000,
            final_points: 1_000_000,
            family: DensityFamily::default(),
            proposal: Proposal::default(),
            seed: 0,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if self.budget < 100 {
            return invalid(format!("optimizer budget must be at least 100 evaluations, got {}", self.budget));
        }
        if self.restarts == 0 || self.surrogate_points < 1000 || self.final_points < 1000 {
            return invalid("restarts and sample sizes must be positive (at least 1000 points)");
        }
        Ok(())
    }

    fn points(&self, d: Dim, n: usize, stream: u64) -> Result<CollisionPoints> {
        CollisionPoints::sample(d, n, self.proposal, derive_seed(self.seed, &[stream]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub value: f64,
    pub stderr: f64,
    pub params: MixtureParams,
    pub r2: Estimate,
    pub r4: Estimate,
    /// Objective on the optimization sample at the returned parameters.
    pub surrogate_value: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub seed: u64,
}

/// Shared point sets for repeated optimizations in one run.
#[derive(Clone)]
pub struct OptContext {
    pub d: Dim,
    pub e: f64,
    pub cfg: OptConfig,
    surrogate: Arc<CollisionPoints>,
    fresh: Arc<CollisionPoints>,
}

impl OptContext {
    pub fn new(e: f64, d: Dim, cfg: OptConfig) -> Result<Self> {
        cfg.validate()?;
        if !(e > 0.0 && e.is_finite()) {
            return invalid(format!("energy must be positive, got {e}"));
        }
        let surrogate = Arc::new(cfg.points(d, cfg.surrogate_points, tag::OPTIMIZER)?);
        let fresh = Arc::new(cfg.points(d, cfg.final_points, tag::REESTIMATE)?);
        Ok(OptContext {
            d,
            e,
            cfg,
            surrogate,
            fresh,
        })
    }

    fn rates(&self, f: &IsotropicDensity, pts: &CollisionPoints) -> Result<CollisionRates> {
        collision_rates(f, pts, EstimatorOptions::default())
    }

    fn search<F>(&self, objective: F, starts: &[Vec<f64>]) -> Result<(Vec<f64>, f64, usize, bool)>
    where
        F: Fn(&CollisionRates) -> f64 + Sync,
    {
        let fam = self.cfg.family;
        let eval = |x: &[f64]| -> f64 {
            match self
                .cfg
                .family
                .realize(x, self.e, self.d)
                .and_then(|(_, f)| self.rates(&f, &self.surrogate))
            {
                Ok(r) => objective(&r),
                Err(_) => f64::INFINITY,
            }
        };
        let n = fam.dimension();
        let mut best_x = starts[0].clone();
        let mut best_f = eval(&best_x);
        let mut evals = 1;
        for s in &starts[1..] {
            let v = eval(s);
            evals += 1;
            if v < best_f {
                best_f = v;
                best_x = s.clone();
            }
        }
        let mut converged = false;
        let per_restart = (self.cfg.budget.saturating_sub(evals)) / self.cfg.restarts;
        let mut step = 0.5;
        for _ in 0..self.cfg.restarts {
            let res = nelder_mead(&eval, &best_x, &vec![step; n], per_restart.max(n + 2), 1e-9);
            evals += res.evaluations;
            if res.value <= best_f {
                best_f = res.value;
                best_x = res.x;
            }
            converged = res.converged;
            step *= 0.5;
        }
        Ok((best_x, best_f, evals, converged))
    }

    fn finish(&self, x: Vec<f64>, surrogate: f64, evals: usize, converged: bool, value: impl Fn(&CollisionRates) -> Estimate) -> Result<OptResult> {
        let (params, f) = self.cfg.family.realize(&x, self.e, self.d)?;
        let rates = self.rates(&f, &self.fresh)?;
        let est = value(&rates);
        Ok(OptResult {
            value: est.value,
            stderr: est.stderr,
            params,
            r2: rates.r2,
            r4: rates.r4,
            surrogate_value: surrogate,
            evaluations: evals,
            converged,
            seed: self.cfg.seed,
        })
    }

    /// `q̂_e` over the family, re-estimated on a fresh sample.
    pub fn maximize_r4(&self) -> Result<OptResult> {
        let starts = self.starting_points();
        let (x, fx, evals, conv) = self.search(|r| -r.r4.value, &starts)?;
        self.finish(x, -fx, evals, conv, |r| r.r4)
    }

    /// `i_e^+(q)` over the family, re-estimated on a fresh sample.
    pub fn minimize_i_plus(&self, q: f64) -> Result<OptResult> {
        if !(q > 0.0 && q.is_finite()) {
            return invalid(format!("q must be positive, got {q}"));
        }
        let starts = self.starting_points();
        let (x, fx, evals, conv) = self.search(|r| static_cost(q, r.r2.value, r.r4.value), &starts)?;
        self.finish(x, fx, evals, conv, |r| Estimate {
            value: static_cost(q, r.r2.value, r.r4.value),
            stderr: ((q / r.r4.value * r.r4.stderr).powi(2) + r.r2.stderr.powi(2)).sqrt(),
        })
    }

    fn starting_points(&self) -> Vec<Vec<f64>> {
        let fam = self.cfg.family;
        let mut starts = vec![fam.start(self.e)];
        if fam.shifted {
            // A narrowed shell, the typical shape of R4 maximizers.
            let m = fam.components;
            let p = MixtureParams {
                weights: vec![1.0 / m as f64; m],
                energies: vec![0.8 * self.e; m],
                shifts: vec![0.3 * self.e.sqrt(); m],
            };
            starts.push(fam.encode(&p, self.e));
        }
        starts
    }

    pub fn surrogate_points(&self) -> &CollisionPoints {
        &self.surrogate
    }

    pub fn fresh_points(&self) -> &CollisionPoints {
        &self.fresh
    }
}

pub fn maximize_r4(e: f64, d: Dim, cfg: OptConfig) -> Result<OptResult> {
    OptContext::new(e, d, cfg)?.maximize_r4()
}

pub fn minimize_i_plus(q: f64, e: f64, d: Dim, cfg: OptConfig) -> Result<OptResult> {
    OptContext::new(e, d, cfg)?.minimize_i_plus(q)
}

/// `n` evenly spaced rates from `q̄_e` to `top·q̄_e`.
pub fn q_grid(e: f64, d: Dim, n: usize, top: f64) -> Vec<f64> {
    let qb = qbar(e, d);
    match n {
        0 => vec![],
        1 => vec![qb],
        _ => (0..n).map(|k| qb * (1.0 + (top - 1.0) * k as f64 / (n - 1) as f64)).collect(),
    }
}

/// Both static bounds, the Poisson bound and `j_e` on `q_grid`, with `q̂_e`
/// from one `maximize_r4` run sharing the same point sets.
pub fn rate_bounds_table(e: f64, d: Dim, q_grid: &[f64], cfg: OptConfig) -> Result<RateBoundsTable> {
    let ctx = OptContext::new(e, d, cfg)?;
    let hat = ctx.maximize_r4()?;
    let rows = q_grid
        .iter()
        .map(|&q| {
            let opt = ctx.minimize_i_plus(q)?;
            Ok(RateBoundsRow {
                q,
                i_minus: i_minus(q, hat.value),
                i_plus: opt.value,
                i_plus_stderr: opt.stderr,
                poisson: poisson_bound(q, e, d),
                j_e: j_e(q, e, d),
                converged: opt.converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateBoundsTable {
        e,
        d,
        qbar: qbar(e, d),
        qhat: hat.value,
        qhat_stderr: hat.stderr,
        seed: ctx.cfg.seed,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder-Mead minimization from `x0` with initial steps `step`. Stops when the
/// spread of simplex values falls below `ftol` or after `budget` evaluations.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], step: &[f64], budget: usize, ftol: f64) -> NelderMeadResult {
    let n = x0.len();
    let mut evals = 0;
    let call = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), call(x0, &mut evals)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step[i];
        let v = call(&x, &mut evals);
        simplex.push((x, v));
    }
    let mut converged = false;
    while evals < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (lo, hi) = (simplex[0].1, simplex[n].1);
        if (hi - lo).abs() <= ftol * (lo.abs() + ftol) {
            converged = true;
            break;
        }
        let mut c = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (ci, xi) in c.iter_mut().zip(x) {
                *ci += xi / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> { c.iter().zip(&simplex[n].0).map(|(ci, wi)| ci + t * (wi - ci)).collect() };
        let xr = along(-1.0);
        let fr = call(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = call(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let x = along(-0.5);
            let v = call(&x, &mut evals);
            (x, v)
        } else {
            let x = along(0.5);
            let v = call(&x, &mut evals);
            (x, v)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for (x, v) in simplex.iter_mut().skip(1) {
            for (xi, bi) in x.iter_mut().zip(&best) {
                *xi = bi + 0.5 * (*xi - bi);
            }
            *v = call(x, &mut evals);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        value,
        evaluations: evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(&f, &[-1.2, 1.0], &[0.5, 0.5], 2000, 1e-14);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3, "{:?}", r.x);
    }

    #[test]
    fn encode_decode_roundtrip() {
        let fam = DensityFamily::default();
        let p = MixtureParams {
            weights: vec![0.2, 0.5, 0.3],
            energies: vec![0.5, 1.0, 1.5],
            shifts: vec![0.0, 0.3, 0.7],
        };
        let q = fam.decode(&fam.encode(&p, 2.0), 2.0);
        for (a, b) in p.weights.iter().zip(&q.weights) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in p.energies.iter().zip(&q.energies) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in p.shifts.iter().zip(&q.shifts) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_enforces_energy() {
        let fam = DensityFamily::default();
        let p = MixtureParams {
            weights: vec![0.3, 0.3, 0.4],
            energies: vec![3.0, 1.0, 2.0],
            shifts: vec![0.0, 1.0, 2.0],
        };
        let (_, f) = fam.realize(&fam.encode(&p, 1.0), 1.0, Dim::Three).unwrap();
        f.check(1.0).unwrap();
        assert!(f.energy() > 0.999);
    }

    #[test]
    fn plain_maxwellian_mixture_density() {
        let p = MixtureParams::maxwellian(1.0);
        let f = p.density(Dim::Three).unwrap();
        let m = IsotropicDensity::maxwellian(1.0, Dim::Three).unwrap();
        assert!(f.l1_distance(&m) < 1e-9);
    }

    #[test]
    fn budget_validation() {
        let cfg = OptConfig {
            budget: 50,
            ..OptConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
