use std::fmt::Write;

use kacwalk::control::{assemble_two_sided, plan_pair, relax, ControlPlan, ExpFit, FluxPhase};
use kacwalk::density::IsotropicDensity;
use kacwalk::path::{
    balance_residual, chain_rule_residual, default_bumps, path_cost_j, reversibility_residual, time_reverse, ChainRule,
    PathDiscretization, Reversibility,
};
use serde::Serialize;

use super::{stamp, Command, Report};
use crate::config::ExperimentConfig;
use crate::error::CliResult;

/// Residuals are measured against `max(|dominant term|, RESIDUAL_FLOOR)`.
pub const RESIDUAL_FLOOR: f64 = 0.1;

const DENSITY_EXPORT_POINTS: usize = 100;

fn radial_samples(f: &IsotropicDensity, points: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
    let top = f.r_max();
    (0..points).map(move |k| {
        let r = top * k as f64 / (points - 1) as f64;
        (r, f.value(r))
    })
}

#[derive(Serialize)]
struct RelaxOut<'a> {
    e: f64,
    d: usize,
    from: f64,
    lifted: bool,
    n_dsmc: usize,
    bandwidth: f64,
    noise_floor: f64,
    fit: &'a ExpFit,
    relax_seed: u64,
}

pub fn cmd_relax(cfg: &ExperimentConfig) -> CliResult<Report> {
    let r = &cfg.relax;
    let rc = cfg.relax_config();
    let pi0 = IsotropicDensity::maxwellian(r.from, r.d)?;
    let rel = relax(&pi0, r.e, &rc)?;
    let tr = &rel.trace;

    let mut trace = String::from("tau,distance,particle_energy\n");
    for ((t, x), pe) in tr.times.iter().zip(&tr.distances).zip(&tr.particle_energy) {
        let _ = writeln!(trace, "{t},{x},{pe}");
    }
    let mut dens = String::from("tau,r,f\n");
    for (t, f) in rel.times.iter().zip(&rel.densities) {
        for (x, y) in radial_samples(f, DENSITY_EXPORT_POINTS) {
            let _ = writeln!(dens, "{t},{x},{y}");
        }
    }
    let st = stamp(Command::Relax, cfg);
    let out = RelaxOut {
        e: r.e,
        d: r.d.get(),
        from: r.from,
        lifted: rel.lifted,
        n_dsmc: rc.n_dsmc,
        bandwidth: rel.bandwidth,
        noise_floor: tr.noise_floor,
        fit: &tr.fit,
        relax_seed: rc.seed,
    };
    let mut failures = Vec::new();
    if rel.lifted && !tr.fit.relaxed {
        failures.push(format!("no relaxation observed: fitted gamma = {}", tr.fit.gamma));
    }
    Ok(Report {
        artifacts: vec![
            st.csv("relax.csv", &trace),
            st.csv("densities.csv", &dens),
            st.json("relax.json", &out)?,
        ],
        summary: vec![format!(
            "relax: gamma={:.4} C={:.4} R²={:.4} noise floor {:.4}",
            tr.fit.gamma, tr.fit.c, tr.fit.r_squared, tr.noise_floor
        )],
        failures,
    })
}

/// A control path with the per-leg data of its construction.
struct Built {
    path: PathDiscretization,
    phases: Vec<FluxPhase>,
    kappa: f64,
    kappa_star: Vec<f64>,
    kappa_star_uncertainty: Vec<f64>,
    leg_kappa: Vec<f64>,
    tau_star: Vec<f64>,
    relax_seeds: Vec<u64>,
    quadrature_seed: u64,
    requested_initial: IsotropicDensity,
    requested_terminal: IsotropicDensity,
}

fn default_kappa(factor: f64, needed: f64) -> f64 {
    if needed > 0.0 {
        factor * needed
    } else {
        1.0
    }
}

fn build(cfg: &ExperimentConfig) -> CliResult<Built> {
    let k = &cfg.control;
    let cc = cfg.control_config();
    let pi1 = IsotropicDensity::maxwellian(k.from, k.d)?;
    match k.to {
        None => {
            let plan = ControlPlan::new(&pi1, k.e, &cc)?;
            let kappa = k.kappa.unwrap_or_else(|| default_kappa(k.kappa_factor, plan.kappa_star));
            let cp = plan.assemble(k.t, kappa)?;
            Ok(Built {
                path: cp.path,
                phases: cp.phases,
                kappa,
                kappa_star: vec![plan.kappa_star],
                kappa_star_uncertainty: vec![plan.kappa_star_uncertainty()],
                leg_kappa: vec![kappa],
                tau_star: vec![cp.tau_star],
                relax_seeds: vec![plan.relaxation.config.seed],
                quadrature_seed: plan.points.seed(),
                requested_initial: pi1,
                requested_terminal: IsotropicDensity::maxwellian(k.e, k.d)?,
            })
        }
        Some(to) => {
            let pi2 = IsotropicDensity::maxwellian(to, k.d)?;
            let (p1, p2) = plan_pair(&pi1, &pi2, k.e, &cc)?;
            let kappa = k
                .kappa
                .unwrap_or_else(|| default_kappa(k.kappa_factor, p1.kappa_star + p2.kappa_star));
            let tp = assemble_two_sided(&p1, &p2, k.t, kappa)?;
            Ok(Built {
                path: tp.path,
                phases: tp.phases,
                kappa,
                kappa_star: vec![tp.kappa_star.0, tp.kappa_star.1],
                kappa_star_uncertainty: vec![p1.kappa_star_uncertainty(), p2.kappa_star_uncertainty()],
                leg_kappa: vec![tp.leg_kappa.0, tp.leg_kappa.1],
                tau_star: vec![tp.tau_star.0, tp.tau_star.1],
                relax_seeds: vec![p1.relaxation.config.seed, p2.relaxation.config.seed],
                quadrature_seed: p1.points.seed(),
                requested_initial: pi1,
                requested_terminal: pi2,
            })
        }
    }
}

#[derive(Serialize)]
struct Residual<T> {
    #[serde(flatten)]
    parts: T,
    relative: f64,
}

#[derive(Serialize)]
struct ControlManifest {
    e: f64,
    d: usize,
    t: f64,
    from: f64,
    to: Option<f64>,
    kappa: f64,
    kappa_star: Vec<f64>,
    kappa_star_uncertainty: Vec<f64>,
    leg_kappa: Vec<f64>,
    tau_star: Vec<f64>,
    total_flux_mass: f64,
    cost: f64,
    cost_reversed: f64,
    chain_rule: Residual<ChainRule>,
    reversibility: Residual<Reversibility>,
    balance_residual: f64,
    /// L1 distance of the path endpoints from the requested boundary data.
    initial_l1: f64,
    terminal_l1: f64,
    slices: usize,
    relax_seeds: Vec<u64>,
    quadrature_seed: u64,
}

pub fn cmd_control(cfg: &ExperimentConfig) -> CliResult<Report> {
    let k = &cfg.control;
    let b = build(cfg)?;
    let path = &b.path;

    let mass = path.total_flux_mass()?;
    let cost = path_cost_j(path)?;
    let cost_reversed = path_cost_j(&time_reverse(path))?;
    let chain = chain_rule_residual(path)?;
    let rev = reversibility_residual(path)?;
    let balance = balance_residual(path, &default_bumps(k.e, k.d, k.bumps))?;
    let manifest = ControlManifest {
        e: k.e,
        d: k.d.get(),
        t: k.t,
        from: k.from,
        to: k.to,
        kappa: b.kappa,
        kappa_star: b.kappa_star.clone(),
        kappa_star_uncertainty: b.kappa_star_uncertainty.clone(),
        leg_kappa: b.leg_kappa.clone(),
        tau_star: b.tau_star.clone(),
        total_flux_mass: mass,
        cost,
        cost_reversed,
        chain_rule: Residual {
            parts: chain,
            relative: chain.relative(RESIDUAL_FLOOR),
        },
        reversibility: Residual {
            parts: rev,
            relative: rev.relative(RESIDUAL_FLOOR),
        },
        balance_residual: balance,
        initial_l1: path.initial.l1_distance(&b.requested_initial),
        terminal_l1: path.terminal.l1_distance(&b.requested_terminal),
        slices: path.slices.len(),
        relax_seeds: b.relax_seeds.clone(),
        quadrature_seed: b.quadrature_seed,
    };

    let st = stamp(Command::Control, cfg);
    let mut artifacts = Vec::with_capacity(path.slices.len() + 2);
    let mut index = String::from("slice,t0,t1,phase,q1_mass,q2_mass,file\n");
    for (i, (s, phase)) in path.slices.iter().zip(&b.phases).enumerate() {
        let m = s.dt() * path.slice_mass(s)?;
        let (q1, q2) = match phase {
            FluxPhase::Q1 => (m, 0.0),
            FluxPhase::Q2 => (0.0, m),
        };
        let tag = match phase {
            FluxPhase::Q1 => "q1",
            FluxPhase::Q2 => "q2",
        };
        let file = format!("slices/slice_{i:04}.csv");
        let _ = writeln!(index, "{i},{},{},{tag},{q1},{q2},{file}", s.t0, s.t1);
        let mut body = format!("# t0={} t1={} phase={tag} q1_mass={q1} q2_mass={q2}\nr,f\n", s.t0, s.t1);
        for (r, f) in radial_samples(&s.density, k.export_points) {
            let _ = writeln!(body, "{r},{f}");
        }
        artifacts.push(st.csv(format!("control/{file}"), &body));
    }
    artifacts.push(st.csv("control/slices.csv", &index));
    artifacts.push(st.json("control/manifest.json", &manifest)?);

    let mut failures = Vec::new();
    let mut check = |name: &str, value: f64, budget: f64| {
        if !(value <= budget) {
            failures.push(format!("{name} = {value:.4e} exceeds {budget:.4e}"));
        }
    };
    check("relative flux-mass error", (mass - b.kappa).abs() / b.kappa, 0.01);
    check("relative chain-rule residual", manifest.chain_rule.relative, k.tolerance);
    check("relative reversibility residual", manifest.reversibility.relative, k.tolerance);
    check("balance residual", balance, k.tolerance);
    if !cost.is_finite() {
        failures.push(format!("path cost is not finite: {cost}"));
    }

    Ok(Report {
        artifacts,
        summary: vec![format!(
            "control: kappa={:.4} kappa*={:?} tau*={:?} J={cost:.4} chain {:.2}% reversibility {:.2}% balance {:.2}%",
            b.kappa,
            b.kappa_star,
            b.tau_star,
            100.0 * manifest.chain_rule.relative,
            100.0 * manifest.reversibility.relative,
            100.0 * balance
        )],
        failures,
    })
}
