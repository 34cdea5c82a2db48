//! Quick consistency checks at small sizes. Exit code 3 when any fails.

use std::fmt::Write;

use kacwalk::density::IsotropicDensity;
use kacwalk::functionals::{entropy_h, j_e, qbar};
use kacwalk::quadrature::{collision_rates, qbar_monte_carlo, CollisionPoints, EstimatorOptions, Proposal};
use kacwalk::seed::{derive_seed, rng_for, tag};
use kacwalk::sim::{simulate, SimConfig};
use kacwalk::velocity::{collide, sample_microcanonical, sample_unit_vector, Maxwellian};
use kacwalk::Dim;

use super::{stamp, Command, Report};
use crate::config::ExperimentConfig;
use crate::error::CliResult;

struct Check {
    name: &'static str,
    value: f64,
    target: f64,
    tolerance: f64,
}

impl Check {
    fn pass(&self) -> bool {
        (self.value - self.target).abs() <= self.tolerance
    }
}

fn collide_drift(seed: u64, d: Dim) -> kacwalk::Result<f64> {
    let mut rng = rng_for(seed, &[tag::DYNAMICS, d.get() as u64]);
    let m = Maxwellian::new(1.0, d)?;
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let (v, w) = (m.sample(&mut rng), m.sample(&mut rng));
        let (a, b) = collide(v, w, sample_unit_vector(d, &mut rng))?;
        let e0 = v.norm_sqr() + w.norm_sqr();
        let de = (a.norm_sqr() + b.norm_sqr() - e0).abs() / e0;
        let dp = (a + b - v - w).norm() / (v + w).norm().max(1.0);
        worst = worst.max(de).max(dp);
    }
    Ok(worst)
}

fn checks(cfg: &ExperimentConfig) -> kacwalk::Result<Vec<Check>> {
    let seed = cfg.seed;
    let mut out = Vec::new();
    for d in [Dim::Two, Dim::Three] {
        out.push(Check {
            name: "collide conservation",
            value: collide_drift(seed, d)?,
            target: 0.0,
            tolerance: 1e-12,
        });
    }

    let d = Dim::Three;
    let init = sample_microcanonical(1.0, d, 200, &mut rng_for(seed, &[tag::INITIAL_STATE]))?;
    let (fin, _, _) = simulate(init, &SimConfig::new(200, d, 1.0, 2.0, derive_seed(seed, &[tag::DYNAMICS])))?;
    let (de, dp) = fin.shell_deviation();
    out.push(Check {
        name: "shell after simulate",
        value: de.max(dp),
        target: 0.0,
        tolerance: 1e-8,
    });

    let qb = qbar(1.0, d);
    let mc = qbar_monte_carlo(1.0, d, 1_000_000, derive_seed(seed, &[tag::QUADRATURE]))?;
    out.push(Check {
        name: "qbar Monte Carlo",
        value: mc.value,
        target: qb,
        tolerance: 3.0 * mc.stderr,
    });

    let pts = CollisionPoints::sample(d, 100_000, Proposal::default(), derive_seed(seed, &[tag::QUADRATURE, 1]))?;
    let m = IsotropicDensity::maxwellian(1.0, d)?;
    let rates = collision_rates(&m, &pts, EstimatorOptions::default())?;
    for (name, est) in [("R2(M_e)", rates.r2), ("R4(M_e)", rates.r4)] {
        out.push(Check {
            name,
            value: est.value,
            target: qb,
            tolerance: 3.0 * est.stderr + 1e-12,
        });
    }
    out.push(Check {
        name: "Q2 mass at M_e",
        value: rates.q2.value,
        target: 0.0,
        tolerance: 3.0 * rates.q2.stderr + 1e-12,
    });

    for frac in [0.3, 0.6, 0.9] {
        let q = frac * qb;
        let eps = kacwalk::functionals::epsilon_of_q(q, 1.0, d)?;
        let h = entropy_h(&IsotropicDensity::maxwellian(eps, d)?, 1.0)?;
        out.push(Check {
            name: "j_e against entropy",
            value: j_e(q, 1.0, d).value,
            target: h,
            tolerance: 1e-4,
        });
    }
    Ok(out)
}

pub fn cmd_selftest(cfg: &ExperimentConfig) -> CliResult<Report> {
    let list = checks(cfg)?;
    let mut body = String::from("check,value,target,tolerance,pass\n");
    let mut summary = Vec::new();
    let mut failures = Vec::new();
    for c in &list {
        let ok = c.pass();
        let _ = writeln!(body, "{},{},{},{},{}", c.name, c.value, c.target, c.tolerance, ok);
        let line = format!(
            "{} {}: {:.6e} vs {:.6e} (tol {:.1e})",
            if ok { "ok  " } else { "FAIL" },
            c.name,
            c.value,
            c.target,
            c.tolerance
        );
        if !ok {
            failures.push(line.clone());
        }
        summary.push(line);
    }
    Ok(Report {
        artifacts: vec![stamp(Command::Selftest, cfg).csv("selftest.csv", &body)],
        summary,
        failures,
    })
}
