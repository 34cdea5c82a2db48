use kacwalk::functionals::qbar;
use kacwalk::optimizer::{maximize_r4, q_grid, rate_bounds_table, OptResult};
use serde::Serialize;

use super::{stamp, Command, Report};
use crate::config::ExperimentConfig;
use crate::error::CliResult;

pub fn cmd_bounds(cfg: &ExperimentConfig) -> CliResult<Report> {
    let o = &cfg.optimize;
    let grid = q_grid(o.e, o.d, cfg.bounds.points, cfg.bounds.top);
    let table = rate_bounds_table(o.e, o.d, &grid, cfg.opt_config())?;
    let st = stamp(Command::Bounds, cfg);

    let mut failures = Vec::new();
    for i in table.ordering_violations(3.0) {
        let r = &table.rows[i];
        failures.push(format!(
            "ordering broken at q={}: i_minus={} i_plus={} ± {} poisson={}",
            r.q, r.i_minus, r.i_plus, r.i_plus_stderr, r.poisson
        ));
    }
    if let Some(r) = table.rows.iter().find(|r| r.q == table.qbar) {
        if r.i_plus > 3.0 * r.i_plus_stderr + 1e-9 {
            failures.push(format!("i_plus(qbar) = {} is not 0 within 3σ ({})", r.i_plus, r.i_plus_stderr));
        }
    }
    let unconverged = table.rows.iter().filter(|r| !r.converged).count();
    Ok(Report {
        artifacts: vec![st.csv("bounds.csv", &table.to_csv()), st.json("bounds.json", &table)?],
        summary: vec![format!(
            "bounds: qbar={:.6} qhat={:.6} ± {:.1e}, {} rows, {} without simplex convergence",
            table.qbar,
            table.qhat,
            table.qhat_stderr,
            table.rows.len(),
            unconverged
        )],
        failures,
    })
}

#[derive(Serialize)]
struct OptimizeOut<'a> {
    e: f64,
    d: usize,
    qbar: f64,
    /// `(q̂ − q̄)/σ`.
    gap_sigma: f64,
    result: &'a OptResult,
}

pub fn cmd_optimize(cfg: &ExperimentConfig) -> CliResult<Report> {
    let o = &cfg.optimize;
    let res = maximize_r4(o.e, o.d, cfg.opt_config())?;
    let qb = qbar(o.e, o.d);
    let gap_sigma = (res.value - qb) / res.stderr.max(f64::MIN_POSITIVE);
    let out = OptimizeOut {
        e: o.e,
        d: o.d.get(),
        qbar: qb,
        gap_sigma,
        result: &res,
    };
    Ok(Report {
        artifacts: vec![stamp(Command::Optimize, cfg).json("optimize.json", &out)?],
        summary: vec![format!(
            "optimize: qhat={:.6} ± {:.1e} vs qbar={qb:.6} ({gap_sigma:.1}σ), {} evaluations",
            res.value, res.stderr, res.evaluations
        )],
        failures: vec![],
    })
}
