//! JSON experiment configuration. Every block has defaults, so `{}` is a valid file.

use std::path::{Path, PathBuf};

use kacwalk::cloning::CloningConfig;
use kacwalk::control::{ControlConfig, RelaxConfig};
use kacwalk::optimizer::{DensityFamily, OptConfig};
use kacwalk::quadrature::Proposal;
use kacwalk::seed::{derive_seed, tag};
use kacwalk::Dim;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; `None` lets rayon decide. Never changes output bytes.
    pub threads: Option<usize>,
    pub sim: SimBlock,
    pub bounds: BoundsBlock,
    pub optimize: OptimizeBlock,
    pub scgf: ScgfBlock,
    pub relax: RelaxBlock,
    pub control: ControlBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("out"),
            threads: None,
            sim: SimBlock::default(),
            bounds: BoundsBlock::default(),
            optimize: OptimizeBlock::default(),
            scgf: ScgfBlock::default(),
            relax: RelaxBlock::default(),
            control: ControlBlock::default(),
        }
    }
}

/// Law-of-large-numbers runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimBlock {
    pub n: usize,
    pub d: Dim,
    pub e: f64,
    pub t: f64,
    pub replicas: usize,
}

impl Default for SimBlock {
    fn default() -> Self {
        SimBlock {
            n: 10_000,
            d: Dim::Three,
            e: 1.0,
            t: 10.0,
            replicas: 16,
        }
    }
}

/// q-grid of the bounds table. Energy, dimension and solver settings come from `optimize`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsBlock {
    pub points: usize,
    /// Upper end of the grid in units of `q̄_e`.
    pub top: f64,
}

impl Default for BoundsBlock {
    fn default() -> Self {
        BoundsBlock { points: 8, top: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeBlock {
    pub e: f64,
    pub d: Dim,
    pub budget: usize,
    pub restarts: usize,
    pub surrogate_points: usize,
    pub final_points: usize,
    pub components: usize,
    pub shifted: bool,
}

impl Default for OptimizeBlock {
    fn default() -> Self {
        let o = OptConfig::default();
        OptimizeBlock {
            e: 1.0,
            d: Dim::Three,
            budget: o.budget,
            restarts: o.restarts,
            surrogate_points: o.surrogate_points,
            final_points: o.final_points,
            components: o.family.components,
            shifted: o.family.shifted,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScgfBlock {
    pub n: usize,
    pub d: Dim,
    pub e: f64,
    pub clones: usize,
    pub window: f64,
    pub replicas: usize,
    pub t: Vec<f64>,
    pub s: Vec<f64>,
}

impl Default for ScgfBlock {
    fn default() -> Self {
        ScgfBlock {
            n: 50,
            d: Dim::Three,
            e: 1.0,
            clones: 200,
            window: 0.5,
            replicas: 8,
            t: vec![5.0, 10.0, 20.0],
            s: vec![-0.5, -0.25, 0.0, 0.25, 0.5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxBlock {
    pub e: f64,
    pub d: Dim,
    /// Energy of the Maxwellian initial datum; lifted to `e` when smaller.
    pub from: f64,
    pub n_dsmc: usize,
    pub tau_max: f64,
    pub bins: usize,
    pub trace_points: usize,
    pub bandwidth_factor: f64,
}

impl Default for RelaxBlock {
    fn default() -> Self {
        let r = RelaxConfig::default();
        RelaxBlock {
            e: 1.0,
            d: Dim::Three,
            from: 0.5,
            n_dsmc: r.n_dsmc,
            tau_max: r.tau_max,
            bins: r.bins,
            trace_points: r.trace_points,
            bandwidth_factor: r.bandwidth_factor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlBlock {
    pub e: f64,
    pub d: Dim,
    /// Energy of the initial Maxwellian.
    pub from: f64,
    /// Energy of the terminal Maxwellian; absent means a one-sided path to `M_e`.
    pub to: Option<f64>,
    pub t: f64,
    /// Requested flux mass; absent means `kappa_factor` times the admissible minimum.
    pub kappa: Option<f64>,
    pub kappa_factor: f64,
    pub n_dsmc: usize,
    pub points: usize,
    pub tau_max: f64,
    pub bumps: usize,
    /// Radial points per exported slice.
    pub export_points: usize,
    /// Relative budget for the chain-rule, reversibility and balance residuals.
    pub tolerance: f64,
}

impl Default for ControlBlock {
    fn default() -> Self {
        let c = ControlConfig::default();
        ControlBlock {
            e: 1.0,
            d: Dim::Three,
            from: 0.5,
            to: None,
            t: 2.0,
            kappa: None,
            kappa_factor: 1.2,
            n_dsmc: c.relax.n_dsmc,
            points: c.points,
            tau_max: c.relax.tau_max,
            bumps: 8,
            export_points: 200,
            tolerance: 0.05,
        }
    }
}

fn positive(what: &str, x: f64) -> CliResult<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} must be positive and finite, got {x}")))
    }
}

fn at_least(what: &str, x: usize, min: usize) -> CliResult<()> {
    if x >= min {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} must be at least {min}, got {x}")))
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        let s = &self.sim;
        at_least("sim.n", s.n, 2)?;
        at_least("sim.replicas", s.replicas, 1)?;
        positive("sim.e", s.e)?;
        positive("sim.t", s.t)?;

        at_least("bounds.points", self.bounds.points, 1)?;
        if !(self.bounds.top >= 1.0 && self.bounds.top.is_finite()) {
            return Err(CliError::Config(format!("bounds.top must be at least 1, got {}", self.bounds.top)));
        }

        positive("optimize.e", self.optimize.e)?;
        self.opt_config().validate()?;

        let c = &self.scgf;
        positive("scgf.e", c.e)?;
        positive("scgf.window", c.window)?;
        if c.t.is_empty() || c.s.is_empty() {
            return Err(CliError::Config("scgf.t and scgf.s must be non-empty".into()));
        }
        for &t in &c.t {
            positive("scgf.t", t)?;
        }
        if c.s.iter().any(|s| !s.is_finite()) {
            return Err(CliError::Config("scgf.s must be finite".into()));
        }
        self.cloning_config(c.t[0]).validate()?;

        let r = &self.relax;
        positive("relax.e", r.e)?;
        positive("relax.from", r.from)?;
        if r.from > r.e {
            return Err(CliError::Config(format!("relax.from = {} exceeds relax.e = {}", r.from, r.e)));
        }
        self.relax_config().validate()?;

        let k = &self.control;
        positive("control.e", k.e)?;
        positive("control.from", k.from)?;
        positive("control.t", k.t)?;
        positive("control.kappa_factor", k.kappa_factor)?;
        positive("control.tolerance", k.tolerance)?;
        for (name, x) in [("control.from", Some(k.from)), ("control.to", k.to)] {
            if let Some(x) = x {
                positive(name, x)?;
                if x > k.e {
                    return Err(CliError::Config(format!("{name} = {x} exceeds control.e = {}", k.e)));
                }
            }
        }
        if let Some(kappa) = k.kappa {
            positive("control.kappa", kappa)?;
        }
        at_least("control.bumps", k.bumps, 1)?;
        at_least("control.export_points", k.export_points, 2)?;
        self.control_config().validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring `out` and `threads`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.threads = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn opt_config(&self) -> OptConfig {
        let o = &self.optimize;
        OptConfig {
            budget: o.budget,
            restarts: o.restarts,
            surrogate_points: o.surrogate_points,
            final_points: o.final_points,
            family: DensityFamily {
                components: o.components,
                shifted: o.shifted,
            },
            proposal: Proposal::default(),
            seed: derive_seed(self.seed, &[tag::OPTIMIZER]),
        }
    }

    pub fn cloning_config(&self, t: f64) -> CloningConfig {
        let c = &self.scgf;
        CloningConfig {
            n: c.n,
            t,
            clones: c.clones,
            e: c.e,
            d: c.d,
            window: c.window,
            replicas: c.replicas,
            seed: derive_seed(self.seed, &[tag::CLONE]),
        }
    }

    pub fn relax_config(&self) -> RelaxConfig {
        let r = &self.relax;
        RelaxConfig {
            n_dsmc: r.n_dsmc,
            tau_max: r.tau_max,
            bins: r.bins,
            trace_points: r.trace_points,
            bandwidth_factor: r.bandwidth_factor,
            seed: derive_seed(self.seed, &[tag::RELAX]),
            ..RelaxConfig::default()
        }
    }

    pub fn control_config(&self) -> ControlConfig {
        let k = &self.control;
        let base = ControlConfig::default();
        ControlConfig {
            relax: RelaxConfig {
                n_dsmc: k.n_dsmc,
                tau_max: k.tau_max,
                seed: derive_seed(self.seed, &[tag::RELAX, 1]),
                ..base.relax
            },
            points: k.points,
            ..base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(ExperimentConfig::parse("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_fields_and_bad_dimension_are_rejected() {
        assert!(matches!(ExperimentConfig::parse(r#"{"sim": {"m": 3}}"#), Err(CliError::Config(_))));
        assert!(matches!(ExperimentConfig::parse(r#"{"sim": {"d": 4}}"#), Err(CliError::Config(_))));
        let e = ExperimentConfig::parse(r#"{"sim": {"e": -1.0}}"#).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn hash_ignores_threads_and_out() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.threads = Some(8);
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
