use std::fmt::Write;

use kacwalk::functionals::qbar;
use kacwalk::seed::{derive_seed, rng_for, tag};
use kacwalk::sim::{simulate, SimConfig};
use kacwalk::velocity::sample_microcanonical;
use rayon::prelude::*;

use super::{stamp, Command, Report};
use crate::config::{ExperimentConfig, SimBlock};
use crate::error::CliResult;

/// `q_{N,T}` of one replica started from the uniform law on the shell.
pub fn lln_replica(sim: &SimBlock, master: u64, replica: u64) -> kacwalk::Result<f64> {
    let seed = derive_seed(master, &[tag::REPLICA, replica]);
    let init = sample_microcanonical(sim.e, sim.d, sim.n, &mut rng_for(seed, &[tag::INITIAL_STATE]))?;
    let (_, rec, _) = simulate(init, &SimConfig::new(sim.n, sim.d, sim.e, sim.t, seed))?;
    Ok(rec.collision_count())
}

/// Columns: replica, its `q_{N,T}`, running mean and standard error over replicas `0..=replica`, and `q̄_e`.
pub fn cmd_lln(cfg: &ExperimentConfig) -> CliResult<Report> {
    let sim = &cfg.sim;
    let qs = (0..sim.replicas as u64)
        .into_par_iter()
        .map(|r| lln_replica(sim, cfg.seed, r))
        .collect::<kacwalk::Result<Vec<f64>>>()?;
    let qb = qbar(sim.e, sim.d);
    let mut body = String::from("replica,q,mean,stderr,qbar\n");
    let (mut sum, mut sum2) = (0.0, 0.0);
    for (i, &q) in qs.iter().enumerate() {
        sum += q;
        sum2 += q * q;
        let k = (i + 1) as f64;
        let mean = sum / k;
        let stderr = if i == 0 {
            0.0
        } else {
            ((sum2 - k * mean * mean).max(0.0) / (k - 1.0) / k).sqrt()
        };
        let _ = writeln!(body, "{i},{q},{mean},{stderr},{qb}");
    }
    let mean = sum / qs.len() as f64;
    Ok(Report {
        artifacts: vec![stamp(Command::Lln, cfg).csv("lln.csv", &body)],
        summary: vec![format!(
            "lln: N={} T={} replicas={} mean q={mean:.6} qbar={qb:.6} (rel. dev. {:.2e})",
            sim.n,
            sim.t,
            sim.replicas,
            (mean - qb).abs() / qb
        )],
        failures: vec![],
    })
}
