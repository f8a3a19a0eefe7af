//! Run configuration: a fully serialisable description of an experiment
//! (model, driver, grid, budgets, priors, seeds) plus the named presets
//! for the shipped studies.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{DriverKind, TimeGrid};
use crate::error::{Error, Result};
use crate::mcmc::PmmhConfig;
use crate::model::{ParamField, ParamSet, Prior, PriorSpec};

/// Shape of the synthetic two-level contact-rate scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelConfig {
    pub beta_high: f64,
    pub beta_low: f64,
    /// Day at which the contact rate drops.
    pub t_drop: f64,
}

/// Everything needed to reproduce a run: (config, seed, code version) maps
/// to identical outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Experiment identifier, echoed into every report.
    pub experiment: String,
    /// Driver assumed by inference.
    pub driver: DriverKind,
    /// Driver used when simulating the truth, when it differs from the
    /// inference driver (e.g. a sigmoid truth fitted with BM).
    pub truth_driver: Option<DriverKind>,
    /// Two-level simulation scenario, when the truth is the piecewise path
    /// rather than a driver draw.
    pub two_level: Option<TwoLevelConfig>,
    pub n_weeks: usize,
    /// Euler step in days; exactly one of `delta` / `substeps` is given.
    pub delta: Option<f64>,
    /// Substeps m per weekly interval (delta = 7 / (m + 1)).
    pub substeps: Option<usize>,
    pub n_particles: usize,
    pub n_iter: usize,
    /// Burn-in; defaults to n_iter / 5 when absent.
    pub burnin: Option<usize>,
    /// Keep every path_thin-th smoothing draw (0 disables path storage).
    pub path_thin: usize,
    pub seed: u64,
    /// True (simulation) parameters; also the chain starting point.
    pub truth: ParamSet,
    pub priors: PriorSpec,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        self.priors.validate()?;
        if self.priors.kind != self.truth.kind() {
            return Err(Error::Config(
                "prior specification and parameter set disagree on the model kind".into(),
            ));
        }
        if self.n_weeks == 0 {
            return Err(Error::Config("n_weeks must be >= 1".into()));
        }
        if self.n_iter == 0 || self.n_particles == 0 {
            return Err(Error::Config("n_iter and n_particles must be >= 1".into()));
        }
        self.resolve_substeps()?;
        Ok(())
    }

    /// Substeps per weekly interval from whichever of delta/substeps is set.
    pub fn resolve_substeps(&self) -> Result<usize> {
        match (self.delta, self.substeps) {
            (Some(d), None) => {
                if !(d > 0.0) {
                    return Err(Error::Config("delta must be > 0".into()));
                }
                Ok(TimeGrid::substeps_for_delta(7.0, d))
            }
            (None, Some(m)) => Ok(m),
            (None, None) => Err(Error::Config("set either delta or substeps".into())),
            (Some(_), Some(_)) => {
                Err(Error::Config("set only one of delta and substeps".into()))
            }
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::weekly(self.n_weeks, self.resolve_substeps()?))
    }

    pub fn pmmh(&self) -> Result<PmmhConfig> {
        let mut cfg = PmmhConfig::new(self.n_iter, self.seed);
        if let Some(b) = self.burnin {
            if b >= self.n_iter {
                return Err(Error::Config("burnin must be below n_iter".into()));
            }
            cfg.burnin = b;
        }
        cfg.path_thin = self.path_thin;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}

/// Names of the shipped presets.
pub const PRESET_NAMES: [&str; 10] = [
    "exp1a", "exp1a-paper", "exp1b", "exp2a", "exp2a-paper", "exp2b", "twolevel",
    "twolevel-desk", "age2", "gibbs-demo",
];

fn base_seir(sigma: f64, tau: f64) -> ParamSet {
    let mut p = ParamSet::seir_template();
    p.sigma = sigma;
    p.obs_sd = tau;
    p
}

/// Build a named preset configuration. `-paper` variants carry the
/// full-scale budgets (3000 particles / 100k iterations); the defaults are
/// desk scale (500 / 20k) so complete runs finish in minutes.
pub fn preset(name: &str) -> Result<RunConfig> {
    let desk = (500usize, 20_000usize);
    let paper = (3000usize, 100_000usize);
    let cfg = match name {
        "exp1a" | "exp1a-paper" | "exp1b" => {
            let tau = if name == "exp1b" { 0.05 } else { 0.1 };
            let (n_particles, n_iter) = if name.ends_with("paper") { paper } else { desk };
            let truth = base_seir(0.07, tau);
            RunConfig {
                experiment: name.into(),
                driver: DriverKind::Bm,
                truth_driver: None,
                two_level: None,
                n_weeks: 50,
                delta: Some(0.25),
                substeps: None,
                n_particles,
                n_iter,
                burnin: None,
                path_thin: 10,
                seed: 1,
                priors: PriorSpec::informative_seir(truth.reporting, truth.population),
                truth,
            }
        }
        "exp2a" | "exp2a-paper" | "exp2b" => {
            let tau = if name == "exp2b" { 0.05 } else { 0.1 };
            let (n_particles, n_iter) = if name.ends_with("paper") { paper } else { desk };
            let truth = base_seir(0.07, tau);
            RunConfig {
                experiment: name.into(),
                driver: DriverKind::Bm,
                truth_driver: Some(DriverKind::Sigmoid {
                    beta_high: 1.35,
                    beta_low: 0.55,
                    t_mid: 175.0,
                    slope: 15.0,
                }),
                two_level: None,
                n_weeks: 50,
                delta: Some(0.25),
                substeps: None,
                n_particles,
                n_iter,
                burnin: None,
                path_thin: 10,
                seed: 2,
                priors: PriorSpec::informative_seir(truth.reporting, truth.population),
                truth,
            }
        }
        "twolevel" | "twolevel-desk" => {
            let mut truth = base_seir(0.07, 0.1);
            truth.beta0 = 1.4;
            // one recorded case per 10 infections
            truth.reporting = 0.1;
            let (n_particles, n_iter) =
                if name == "twolevel-desk" { (300, 6000) } else { desk };
            RunConfig {
                experiment: "twolevel".into(),
                driver: DriverKind::Bm,
                truth_driver: None,
                // the drop leaves the post-drop decline gentle enough that
                // heavy under-reporting can reattribute it to depletion
                two_level: Some(TwoLevelConfig {
                    beta_high: 1.4,
                    beta_low: 1.05,
                    t_drop: 70.0,
                }),
                n_weeks: 20,
                delta: Some(0.5),
                substeps: None,
                n_particles,
                n_iter,
                burnin: None,
                path_thin: 10,
                seed: 5,
                priors: PriorSpec::informative_seir(truth.reporting, truth.population),
                truth,
            }
        }
        "age2" => {
            let mut truth = base_seir(0.07, 0.1);
            truth.beta0 = 1.6;
            truth.group2 = Some(crate::model::GroupExt {
                sigma: 0.07,
                beta0: 1.0,
                init_fracs: [1.5e-5, 1.0e-5, 0.2],
                cross_rate: 0.4,
                population: 2.0e5,
            });
            let priors = two_group_priors(&truth);
            RunConfig {
                experiment: "age2".into(),
                driver: DriverKind::Bm,
                truth_driver: None,
                two_level: None,
                n_weeks: 30,
                delta: Some(0.5),
                substeps: None,
                n_particles: 500,
                n_iter: 20_000,
                burnin: None,
                path_thin: 10,
                seed: 7,
                truth,
                priors,
            }
        }
        "gibbs-demo" => {
            let truth = base_seir(0.07, 0.1);
            let mut priors = PriorSpec::all_point_mass(&truth);
            priors.set(ParamField::Sigma, Prior::VaguePositive { sd: 1.0e3 });
            RunConfig {
                experiment: "gibbs-demo".into(),
                driver: DriverKind::Bm,
                truth_driver: None,
                two_level: None,
                n_weeks: 20,
                delta: Some(0.1),
                substeps: None,
                n_particles: 200,
                n_iter: 5000,
                burnin: None,
                path_thin: 0,
                seed: 9,
                truth,
                priors,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}'; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Priors for the two-group model: informative periods, vague positive
/// scales, moment-matched Dirichlet blocks, fixed reporting/populations.
fn two_group_priors(truth: &ParamSet) -> PriorSpec {
    let single = PriorSpec::informative_seir(truth.reporting, truth.population);
    let mut priors = Vec::new();
    for &f in ParamField::canonical_order(crate::model::ModelKind::Seir2Group) {
        let prior = match f {
            ParamField::LatentRate
            | ParamField::RecoveryRate
            | ParamField::Sigma
            | ParamField::ObsSd
            | ParamField::Beta0
            | ParamField::InitFracs
            | ParamField::Reporting
            | ParamField::Population => single.get(f).unwrap().clone(),
            ParamField::SigmaA | ParamField::Beta0A | ParamField::CrossRate => {
                Prior::VaguePositive { sd: 1.0e3 }
            }
            ParamField::InitFracsA => {
                Prior::DirichletMoment { mean_r: 0.2, var_r: 0.15 * 0.15 }
            }
            ParamField::PopulationA => Prior::PointMass {
                value: truth.group2.as_ref().unwrap().population,
            },
        };
        priors.push((f, prior));
    }
    PriorSpec { kind: crate::model::ModelKind::Seir2Group, priors }
}
