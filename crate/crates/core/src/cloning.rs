//! Population Monte Carlo for `ψ_{N,T}(s) = (NT)^{-1} log E[exp(s N T q_{N,T})]`.
//!
//! Clones run the Kac walk with every rate multiplied by `e^s`. Over a window
//! a clone picks up the weight `exp((e^s − 1) ∫ Λ dt)`, with `Λ` the exact
//! untilted total rate, which is the likelihood ratio turning tilted path
//! expectations into `E[e^{s K}]` for the collision count `K`. Clones are
//! resampled systematically after every window.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::functionals::RateValue;
use crate::seed::{rng_for, tag};
use crate::sim::KacWalk;
use crate::velocity::{sample_microcanonical, Dim};

/// Effective sample size below which a row is flagged.
pub const MIN_ESS: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloningConfig {
    pub n: usize,
    pub t: f64,
    pub clones: usize,
    pub e: f64,
    pub d: Dim,
    pub window: f64,
    /// Independent repetitions used for the standard error.
    pub replicas: usize,
    pub seed: u64,
}

impl Default for CloningConfig {
    fn default() -> Self {
        CloningConfig {
            n: 50,
            t: 10.0,
            clones: 200,
            e: 1.0,
            d: Dim::Three,
            window: 0.5,
            replicas: 8,
            seed: 0,
        }
    }
}

impl CloningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return invalid(format!("N must be at least 2, got {}", self.n));
        }
        if self.clones < 50 {
            return invalid(format!("at least 50 clones are required, got {}", self.clones));
        }
        if self.replicas < 2 {
            return invalid("at least two replicas are needed for an error estimate");
        }
        if !(self.t > 0.0 && self.window > 0.0 && self.e > 0.0) || !(self.t.is_finite() && self.window.is_finite()) {
            return invalid("T, window and e must be positive and finite");
        }
        Ok(())
    }

    fn windows(&self) -> Vec<f64> {
        let k = (self.t / self.window).ceil().max(1.0) as usize;
        (1..=k).map(|i| (i as f64 * self.window).min(self.t)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScgfRow {
    pub s: f64,
    pub psi: f64,
    pub stderr: f64,
    pub n: usize,
    pub t: f64,
    pub m: usize,
    pub seed: u64,
    /// Smallest effective sample size over all windows and replicas.
    pub min_ess: f64,
    pub collapsed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScgfEstimate {
    pub rows: Vec<ScgfRow>,
}

impl ScgfEstimate {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("s,psi,stderr,N,T,M,seed\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{},{},{}\n", r.s, r.psi, r.stderr, r.n, r.t, r.m, r.seed));
        }
        s
    }

    pub fn row(&self, s: f64) -> Option<&ScgfRow> {
        self.rows.iter().find(|r| r.s == s)
    }
}

/// One replica: returns `(ψ̂, smallest ESS)`.
fn run_replica(s: f64, s_index: u64, replica: u64, cfg: &CloningConfig) -> Result<(f64, f64)> {
    let m = cfg.clones;
    let growth = s.exp_m1();
    let mut walkers: Vec<KacWalk> = (0..m)
        .map(|c| {
            let mut init = rng_for(cfg.seed, &[tag::INITIAL_STATE, s_index, replica, c as u64]);
            let state = sample_microcanonical(cfg.e, cfg.d, cfg.n, &mut init)?;
            let rng = rng_for(cfg.seed, &[tag::CLONE, s_index, replica, 0, c as u64]);
            Ok(KacWalk::new(state, s, rng).track_total_rate())
        })
        .collect::<Result<_>>()?;
    let mut log_norm = 0.0;
    let mut min_ess = f64::INFINITY;
    for (w_idx, &t_end) in cfg.windows().iter().enumerate() {
        let logw: Vec<f64> = walkers
            .iter_mut()
            .map(|w| {
                w.advance(t_end, &mut |_| {});
                growth * w.take_rate_integral()
            })
            .collect();
        let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
        let sum: f64 = w.iter().sum();
        let sum_sq: f64 = w.iter().map(|x| x * x).sum();
        log_norm += top + (sum / m as f64).ln();
        min_ess = min_ess.min(sum * sum / sum_sq);

        let mut rs = rng_for(cfg.seed, &[tag::RESAMPLE, s_index, replica, w_idx as u64]);
        let parents = systematic_resample(&w, m, rs.random::<f64>());
        let old = walkers.clone();
        for (c, (walker, &p)) in walkers.iter_mut().zip(&parents).enumerate() {
            if p != c {
                *walker = old[p].clone();
            }
            walker.set_rng(rng_for(cfg.seed, &[tag::CLONE, s_index, replica, w_idx as u64 + 1, c as u64]));
        }
    }
    Ok((log_norm / (cfg.n as f64 * cfg.t), min_ess))
}

/// Parent indices for `m` offspring with a single uniform offset `u ∈ [0, 1)`.
pub fn systematic_resample(weights: &[f64], m: usize, u: f64) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(m);
    let mut cum = weights[0] / total;
    let mut i = 0;
    for k in 0..m {
        let x = (k as f64 + u) / m as f64;
        while x > cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i] / total;
        }
        out.push(i);
    }
    out
}

pub fn estimate_scgf(s_grid: &[f64], cfg: &CloningConfig) -> Result<ScgfEstimate> {
    cfg.validate()?;
    if s_grid.iter().any(|s| !s.is_finite()) {
        return invalid("tilt values must be finite");
    }
    let mut rows = Vec::with_capacity(s_grid.len());
    for (si, &s) in s_grid.iter().enumerate() {
        if s == 0.0 {
            rows.push(ScgfRow {
                s,
                psi: 0.0,
                stderr: 0.0,
                n: cfg.n,
                t: cfg.t,
                m: cfg.clones,
                seed: cfg.seed,
                min_ess: cfg.clones as f64,
                collapsed: false,
            });
            continue;
        }
        let reps: Vec<(f64, f64)> = (0..cfg.replicas as u64)
            .into_par_iter()
            .map(|r| run_replica(s, si as u64, r, cfg))
            .collect::<Result<_>>()?;
        let k = reps.len() as f64;
        let mean = reps.iter().map(|r| r.0).sum::<f64>() / k;
        let var = reps.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let min_ess = reps.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        rows.push(ScgfRow {
            s,
            psi: mean,
            stderr: (var / k).sqrt(),
            n: cfg.n,
            t: cfg.t,
            m: cfg.clones,
            seed: cfg.seed,
            min_ess,
            collapsed: min_ess < MIN_ESS,
        });
    }
    Ok(ScgfEstimate { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegendreRow {
    pub q: f64,
    pub i_hat: RateValue,
    pub s_star: f64,
}

/// `î(q) = max_s (s q − ψ̂(s))` over the tabulated tilts, at each `q` of `q_grid`.
pub fn legendre_rate(scgf: &ScgfEstimate, q_grid: &[f64]) -> Result<Vec<LegendreRow>> {
    if scgf.rows.len() < 3 {
        return invalid("the Legendre transform needs at least three tilt values");
    }
    Ok(q_grid
        .iter()
        .map(|&q| {
            let (s_star, val) = scgf
                .rows
                .iter()
                .map(|r| (r.s, r.s * q - r.psi))
                .fold((f64::NAN, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            LegendreRow {
                q,
                i_hat: if val.is_finite() {
                    RateValue::finite(val)
                } else {
                    RateValue::INFINITY
                },
                s_star,
            }
        })
        .collect())
}

/// Finite differences `ψ'(s)` between consecutive tilts, the natural `q` grid of the dual.
pub fn dual_grid(scgf: &ScgfEstimate) -> Vec<f64> {
    scgf.rows
        .windows(2)
        .map(|w| (w[1].psi - w[0].psi) / (w[1].s - w[0].s))
        .collect()
}

pub fn legendre_csv(rows: &[LegendreRow]) -> String {
    let mut s = String::from("q,i_hat,s_star\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.q, r.i_hat, r.s_star));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(psi: impl Fn(f64) -> f64, grid: &[f64]) -> ScgfEstimate {
        ScgfEstimate {
            rows: grid
                .iter()
                .map(|&s| ScgfRow {
                    s,
                    psi: psi(s),
                    stderr: 0.0,
                    n: 1,
                    t: 1.0,
                    m: 50,
                    seed: 0,
                    min_ess: 50.0,
                    collapsed: false,
                })
                .collect(),
        }
    }

    #[test]
    fn poisson_pair_is_recovered() {
        let qb = 2.0;
        let grid: Vec<f64> = (0..=400).map(|k| -1.0 + 0.005 * k as f64).collect();
        let est = synthetic(|s| qb * s.exp_m1(), &grid);
        for &q in &[1.0, 2.0, 3.0, 4.0] {
            let row = &legendre_rate(&est, &[q]).unwrap()[0];
            let exact = q * (q / qb).ln() - q + qb;
            assert!((row.i_hat.value - exact).abs() < 1e-4, "{q}: {} vs {exact}", row.i_hat.value);
            assert!((row.s_star - (q / qb).ln()).abs() < 0.006);
        }
    }

    #[test]
    fn zero_scgf_dual_on_finite_grid() {
        let est = synthetic(|_| 0.0, &[-1.0, 0.0, 1.0]);
        let rows = legendre_rate(&est, &[0.5, 2.0]).unwrap();
        assert_eq!(rows[0].i_hat.value, 0.5);
        assert_eq!(rows[1].i_hat.value, 2.0);
        assert!(legendre_rate(&synthetic(|_| 0.0, &[0.0, 1.0]), &[1.0]).is_err());
    }

    #[test]
    fn systematic_resampling_counts() {
        let parents = systematic_resample(&[1.0, 0.0, 3.0], 4, 0.5);
        assert_eq!(parents, vec![0, 2, 2, 2]);
        let uniform = systematic_resample(&[1.0; 5], 5, 0.3);
        assert_eq!(uniform, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn zero_tilt_is_exact() {
        let cfg = CloningConfig {
            t: 1.0,
            ..CloningConfig::default()
        };
        let est = estimate_scgf(&[0.0], &cfg).unwrap();
        assert_eq!(est.rows[0].psi, 0.0);
        assert_eq!(est.rows[0].stderr, 0.0);
    }

    #[test]
    fn config_checks() {
        let cfg = CloningConfig {
            clones: 10,
            ..CloningConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
