use kacwalk::cloning::{dual_grid, estimate_scgf, legendre_csv, legendre_rate, ScgfEstimate};

use super::{stamp, Command, Report};
use crate::config::ExperimentConfig;
use crate::error::CliResult;

/// `ψ̂(s)` for every configured `(s, T)`; the Legendre dual is taken at the largest `T`.
pub fn cmd_scgf(cfg: &ExperimentConfig) -> CliResult<Report> {
    let c = &cfg.scgf;
    let mut s_grid = c.s.clone();
    s_grid.sort_by(f64::total_cmp);
    s_grid.dedup();

    let mut all = ScgfEstimate::default();
    let mut last = ScgfEstimate::default();
    let mut t_max = f64::NEG_INFINITY;
    for &t in &c.t {
        let est = estimate_scgf(&s_grid, &cfg.cloning_config(t))?;
        all.rows.extend(est.rows.iter().cloned());
        if t > t_max {
            t_max = t;
            last = est;
        }
    }
    let st = stamp(Command::Scgf, cfg);
    let mut artifacts = vec![st.csv("scgf.csv", &all.to_csv())];
    let mut summary = vec![format!("scgf: {} rows over T = {:?}", all.rows.len(), c.t)];
    if last.rows.len() >= 3 {
        let rate = legendre_rate(&last, &dual_grid(&last))?;
        artifacts.push(st.csv("rate.csv", &legendre_csv(&rate)));
    } else {
        summary.push("scgf: fewer than three tilts, rate.csv skipped".into());
    }
    let collapsed: Vec<String> = all
        .rows
        .iter()
        .filter(|r| r.collapsed)
        .map(|r| format!("s={} T={} (min ESS {:.1})", r.s, r.t, r.min_ess))
        .collect();
    let failures = if collapsed.is_empty() {
        vec![]
    } else {
        vec![format!("clone weights collapsed at {}", collapsed.join(", "))]
    };
    Ok(Report {
        artifacts,
        summary,
        failures,
    })
}
