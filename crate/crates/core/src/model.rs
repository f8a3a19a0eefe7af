//! Compartmental model declarations: the static parameter set, priors and
//! the constrained <-> unconstrained parameter transforms.
//!
//! Two model topologies are built in: a single-population SEIR and a
//! two-age-group (children/adults) SEIR with constant cross-group contact
//! rate `b`. The time-varying effective contact rate itself lives in the
//! `dynamics` module; here we only hold its initial level and volatility.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{ln_gamma, normal_cdf, normal_logpdf};
use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist, StandardNormal};

/// Which compartmental topology a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Single-population SEIR.
    Seir,
    /// Two-age-group SEIR (children `c`, adults `a`), shared k and gamma,
    /// one diffusion driver per group, constant cross rate b.
    Seir2Group,
}

/// Extra parameters for the adult group of the two-age-group model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupExt {
    /// Driver volatility sigma_a (per sqrt-day).
    pub sigma: f64,
    /// Initial effective contact rate beta_aa(0) (per day).
    pub beta0: f64,
    /// Initial (E, I, R) fractions of the adult population.
    pub init_fracs: [f64; 3],
    /// Cross-group effective contact rate b = beta_ca = beta_ac (per day).
    pub cross_rate: f64,
    /// Adult population N_a (persons).
    pub population: f64,
}

/// The full static parameter vector theta.
///
/// For the single-group model `group2` is `None` and the plain fields refer
/// to the whole population; for the two-group model they refer to the
/// children group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    /// k: inverse mean latent period (per day).
    pub latent_rate: f64,
    /// gamma: inverse mean infectious period (per day).
    pub recovery_rate: f64,
    /// sigma: driver volatility (per sqrt-day); sigma_c in the age model.
    pub sigma: f64,
    /// tau: sd of log-observations (dimensionless).
    pub obs_sd: f64,
    /// beta_0: initial effective contact rate (per day); x_0 = log beta_0.
    pub beta0: f64,
    /// Initial (E, I, R) fractions; S(0) = 1 - E0 - I0 - R0.
    pub init_fracs: [f64; 3],
    /// Reporting factor c: model incidence times c is the data scale.
    pub reporting: f64,
    /// N: population size (persons).
    pub population: f64,
    /// Adult-group extension; present iff the model is two-group.
    pub group2: Option<GroupExt>,
}

impl ParamSet {
    pub fn kind(&self) -> ModelKind {
        if self.group2.is_some() {
            ModelKind::Seir2Group
        } else {
            ModelKind::Seir
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("latent_rate", self.latent_rate),
            ("recovery_rate", self.recovery_rate),
            ("obs_sd", self.obs_sd),
            ("beta0", self.beta0),
            ("reporting", self.reporting),
            ("population", self.population),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if self.sigma < 0.0 || !self.sigma.is_finite() {
            return Err(Error::invalid("sigma", format!("must be >= 0, got {}", self.sigma)));
        }
        check_fracs("init_fracs", &self.init_fracs)?;
        if let Some(g) = &self.group2 {
            if g.sigma < 0.0 || !g.sigma.is_finite() {
                return Err(Error::invalid("sigma_a", "must be >= 0"));
            }
            for (name, v) in [
                ("beta0_a", g.beta0),
                ("cross_rate", g.cross_rate),
                ("population_a", g.population),
            ] {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::invalid(name, format!("must be > 0, got {v}")));
                }
            }
            check_fracs("init_fracs_a", &g.init_fracs)?;
        }
        Ok(())
    }

    /// A single-group template with the H1N1-study posterior medians as
    /// defaults; callers override what they need.
    pub fn seir_template() -> ParamSet {
        ParamSet {
            latent_rate: 1.0 / 1.59,
            recovery_rate: 1.0 / 1.08,
            sigma: 0.07,
            obs_sd: 0.1,
            beta0: 1.35,
            init_fracs: [2.3e-5, 1.6e-5, 0.15],
            reporting: 1.0,
            population: 1.0e5,
            group2: None,
        }
    }
}

fn check_fracs(field: &'static str, f: &[f64; 3]) -> Result<()> {
    let sum: f64 = f.iter().sum();
    if f.iter().any(|x| *x < 0.0) || sum >= 1.0 || !sum.is_finite() {
        return Err(Error::invalid(
            field,
            format!("(E0,I0,R0) must be >= 0 with sum < 1, got {f:?}"),
        ));
    }
    Ok(())
}

/// The effective reproduction number R_t = beta * S / (N * gamma) for the
/// standard SEIR system.
pub fn effective_reproduction(beta: f64, susceptible: f64, gamma: f64, population: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::invalid("gamma", "must be > 0"));
    }
    if !(population > 0.0) {
        return Err(Error::invalid("population", "must be > 0"));
    }
    Ok(beta * susceptible / (population * gamma))
}

/// Prior descriptor for a single parameter (or the initial-fraction block).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    /// Normal truncated to positivity. With `on_inverse` the prior is placed
    /// on the reciprocal (e.g. a period prior for a rate parameter).
    Normal {
        mean: f64,
        sd: f64,
        #[serde(default)]
        on_inverse: bool,
    },
    /// Vague positive half-normal N_{>0}(0, sd^2); the paper's N_{>0}(0, 1e6).
    VaguePositive { sd: f64 },
    /// Dirichlet over (S,E,I,R)(0) with concentration chosen so that the R
    /// fraction has the given mean and variance and S, E, I share the rest
    /// of the mass equally. Applies to the init_fracs block only.
    DirichletMoment { mean_r: f64, var_r: f64 },
    /// Held fixed; excluded from the sampled vector.
    PointMass { value: f64 },
    /// Fixed initial-fraction block.
    PointMassFracs { value: [f64; 3] },
}

impl Prior {
    pub fn is_point_mass(&self) -> bool {
        matches!(self, Prior::PointMass { .. } | Prior::PointMassFracs { .. })
    }
}

/// Dirichlet concentration (alpha_S, alpha_E, alpha_I, alpha_R) matching the
/// moment constraints of `DirichletMoment`.
///
/// For a Dirichlet with total concentration a0, the R component has mean
/// alpha_R/a0 and variance mean(1-mean)/(a0+1); solving gives
/// a0 = mean_r(1-mean_r)/var_r - 1. The non-R mass splits equally.
pub fn dirichlet_concentration(mean_r: f64, var_r: f64) -> Result<[f64; 4]> {
    if !(mean_r > 0.0 && mean_r < 1.0) {
        return Err(Error::invalid("mean_r", "must lie in (0,1)"));
    }
    let bound = mean_r * (1.0 - mean_r);
    if !(var_r > 0.0 && var_r < bound) {
        return Err(Error::invalid(
            "var_r",
            format!("must lie in (0, {bound}) for mean_r={mean_r}"),
        ));
    }
    let a0 = bound / var_r - 1.0;
    let ar = mean_r * a0;
    let other = (1.0 - mean_r) / 3.0 * a0;
    Ok([other, other, other, ar])
}

/// The sampled parameter fields, in canonical vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamField {
    LatentRate,
    RecoveryRate,
    Sigma,
    ObsSd,
    Beta0,
    InitFracs,
    Reporting,
    Population,
    SigmaA,
    Beta0A,
    InitFracsA,
    CrossRate,
    PopulationA,
}

impl ParamField {
    pub fn canonical_order(kind: ModelKind) -> &'static [ParamField] {
        use ParamField::*;
        match kind {
            ModelKind::Seir => &[
                LatentRate,
                RecoveryRate,
                Sigma,
                ObsSd,
                Beta0,
                InitFracs,
                Reporting,
                Population,
            ],
            ModelKind::Seir2Group => &[
                LatentRate,
                RecoveryRate,
                Sigma,
                ObsSd,
                Beta0,
                InitFracs,
                Reporting,
                Population,
                SigmaA,
                Beta0A,
                InitFracsA,
                CrossRate,
                PopulationA,
            ],
        }
    }

    pub fn name(&self) -> &'static str {
        use ParamField::*;
        match self {
            LatentRate => "latent_rate",
            RecoveryRate => "recovery_rate",
            Sigma => "sigma",
            ObsSd => "obs_sd",
            Beta0 => "beta0",
            InitFracs => "init_fracs",
            Reporting => "reporting",
            Population => "population",
            SigmaA => "sigma_a",
            Beta0A => "beta0_a",
            InitFracsA => "init_fracs_a",
            CrossRate => "cross_rate",
            PopulationA => "population_a",
        }
    }

    fn is_fracs(&self) -> bool {
        matches!(self, ParamField::InitFracs | ParamField::InitFracsA)
    }
}

/// Complete prior specification: one descriptor per parameter field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kind: ModelKind,
    pub priors: Vec<(ParamField, Prior)>,
}

impl PriorSpec {
    /// The informative single-group prior of the H1N1 analysis: Normal
    /// priors on the latent and infectious periods from their 95% bands,
    /// moment-matched Dirichlet on the initial fractions, vague positive
    /// priors on sigma, tau and beta0. Reporting and population are fixed.
    pub fn informative_seir(reporting: f64, population: f64) -> PriorSpec {
        // sd from the symmetric 95% band: (upper - lower) / (2 * 1.96)
        let k_sd = (1.63 - 1.55) / (2.0 * 1.959_963_985);
        let g_sd = (1.23 - 0.93) / (2.0 * 1.959_963_985);
        PriorSpec {
            kind: ModelKind::Seir,
            priors: vec![
                (
                    ParamField::LatentRate,
                    Prior::Normal { mean: 1.59, sd: k_sd, on_inverse: true },
                ),
                (
                    ParamField::RecoveryRate,
                    Prior::Normal { mean: 1.08, sd: g_sd, on_inverse: true },
                ),
                (ParamField::Sigma, Prior::VaguePositive { sd: 1.0e3 }),
                (ParamField::ObsSd, Prior::VaguePositive { sd: 1.0e3 }),
                (ParamField::Beta0, Prior::VaguePositive { sd: 1.0e3 }),
                (
                    ParamField::InitFracs,
                    Prior::DirichletMoment { mean_r: 0.15, var_r: 0.15 * 0.15 },
                ),
                (ParamField::Reporting, Prior::PointMass { value: reporting }),
                (ParamField::Population, Prior::PointMass { value: population }),
            ],
        }
    }

    /// Fix every field at the values of `p` (degenerate spec; useful for
    /// known-parameter studies).
    pub fn all_point_mass(p: &ParamSet) -> PriorSpec {
        let mut priors = Vec::new();
        for &f in ParamField::canonical_order(p.kind()) {
            let prior = match f {
                ParamField::InitFracs => Prior::PointMassFracs { value: p.init_fracs },
                ParamField::InitFracsA => Prior::PointMassFracs {
                    value: p.group2.as_ref().unwrap().init_fracs,
                },
                _ => Prior::PointMass { value: get_scalar(p, f) },
            };
            priors.push((f, prior));
        }
        PriorSpec { kind: p.kind(), priors }
    }

    pub fn get(&self, field: ParamField) -> Result<&Prior> {
        self.priors
            .iter()
            .find(|(f, _)| *f == field)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Config(format!("no prior for field {}", field.name())))
    }

    pub fn set(&mut self, field: ParamField, prior: Prior) {
        if let Some(slot) = self.priors.iter_mut().find(|(f, _)| *f == field) {
            slot.1 = prior;
        } else {
            self.priors.push((field, prior));
        }
    }

    pub fn validate(&self) -> Result<()> {
        for &f in ParamField::canonical_order(self.kind) {
            let p = self.get(f)?;
            match (f.is_fracs(), p) {
                (true, Prior::PointMass { .. }) => {
                    return Err(Error::Config(format!(
                        "field {} needs a fraction-block prior",
                        f.name()
                    )))
                }
                (false, Prior::PointMassFracs { .. }) | (false, Prior::DirichletMoment { .. }) => {
                    return Err(Error::Config(format!(
                        "field {} cannot take a fraction-block prior",
                        f.name()
                    )))
                }
                _ => {}
            }
            if let Prior::DirichletMoment { mean_r, var_r } = p {
                dirichlet_concentration(*mean_r, *var_r)?;
            }
            if matches!(f, ParamField::Population | ParamField::PopulationA)
                && !p.is_point_mass()
            {
                return Err(Error::Config("population must be a point mass".into()));
            }
        }
        Ok(())
    }

    /// Number of unconstrained dimensions (3 per sampled fraction block).
    pub fn dim(&self) -> usize {
        ParamField::canonical_order(self.kind)
            .iter()
            .map(|f| match self.get(*f) {
                Ok(p) if p.is_point_mass() => 0,
                Ok(_) if f.is_fracs() => 3,
                Ok(_) => 1,
                Err(_) => 0,
            })
            .sum()
    }

    /// Names of the sampled coordinates, in vector order.
    pub fn coordinate_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for &f in ParamField::canonical_order(self.kind) {
            let p = self.get(f).unwrap();
            if p.is_point_mass() {
                continue;
            }
            if f.is_fracs() {
                let suffix = if f == ParamField::InitFracsA { "_a" } else { "" };
                for c in ["e0", "i0", "r0"] {
                    names.push(format!("{c}{suffix}"));
                }
            } else {
                names.push(f.name().to_string());
            }
        }
        names
    }

    /// Draw a ParamSet from the priors, keeping point-mass fields at their
    /// fixed values.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<ParamSet> {
        let base = self.point_mass_template()?;
        let mut p = base;
        for &f in ParamField::canonical_order(self.kind) {
            let prior = self.get(f)?.clone();
            match prior {
                Prior::PointMass { .. } | Prior::PointMassFracs { .. } => {}
                Prior::Normal { mean, sd, on_inverse } => {
                    let draw = sample_trunc_normal(mean, sd, rng);
                    set_scalar(&mut p, f, if on_inverse { 1.0 / draw } else { draw });
                }
                Prior::VaguePositive { sd } => {
                    let z: f64 = rng.sample(StandardNormal);
                    set_scalar(&mut p, f, (z * sd).abs().max(1e-300));
                }
                Prior::DirichletMoment { mean_r, var_r } => {
                    let alpha = dirichlet_concentration(mean_r, var_r)?;
                    let draws: Vec<f64> = alpha
                        .iter()
                        .map(|&a| GammaDist::new(a, 1.0).unwrap().sample(rng))
                        .collect();
                    let tot: f64 = draws.iter().sum();
                    let fr = [draws[1] / tot, draws[2] / tot, draws[3] / tot];
                    set_fracs(&mut p, f, fr);
                }
            }
        }
        Ok(p)
    }

    /// A ParamSet with every field at its point-mass value where fixed, and
    /// a neutral placeholder elsewhere (used as a shell before filling).
    fn point_mass_template(&self) -> Result<ParamSet> {
        let mut p = ParamSet {
            latent_rate: 1.0,
            recovery_rate: 1.0,
            sigma: 0.1,
            obs_sd: 0.1,
            beta0: 1.0,
            init_fracs: [0.01, 0.01, 0.01],
            reporting: 1.0,
            population: 1.0e5,
            group2: if self.kind == ModelKind::Seir2Group {
                Some(GroupExt {
                    sigma: 0.1,
                    beta0: 1.0,
                    init_fracs: [0.01, 0.01, 0.01],
                    cross_rate: 0.3,
                    population: 1.0e5,
                })
            } else {
                None
            },
        };
        for &f in ParamField::canonical_order(self.kind) {
            match self.get(f)? {
                Prior::PointMass { value } => set_scalar(&mut p, f, *value),
                Prior::PointMassFracs { value } => set_fracs(&mut p, f, *value),
                _ => {}
            }
        }
        Ok(p)
    }
}

fn sample_trunc_normal<R: Rng>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    // rejection; fine for the priors used here (mass well inside the
    // positive half-line)
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let x = mean + sd * z;
        if x > 0.0 {
            return x;
        }
    }
}

fn get_scalar(p: &ParamSet, f: ParamField) -> f64 {
    use ParamField::*;
    match f {
        LatentRate => p.latent_rate,
        RecoveryRate => p.recovery_rate,
        Sigma => p.sigma,
        ObsSd => p.obs_sd,
        Beta0 => p.beta0,
        Reporting => p.reporting,
        Population => p.population,
        SigmaA => p.group2.as_ref().unwrap().sigma,
        Beta0A => p.group2.as_ref().unwrap().beta0,
        CrossRate => p.group2.as_ref().unwrap().cross_rate,
        PopulationA => p.group2.as_ref().unwrap().population,
        InitFracs | InitFracsA => unreachable!("fraction block accessed as scalar"),
    }
}

fn set_scalar(p: &mut ParamSet, f: ParamField, v: f64) {
    use ParamField::*;
    match f {
        LatentRate => p.latent_rate = v,
        RecoveryRate => p.recovery_rate = v,
        Sigma => p.sigma = v,
        ObsSd => p.obs_sd = v,
        Beta0 => p.beta0 = v,
        Reporting => p.reporting = v,
        Population => p.population = v,
        SigmaA => p.group2.as_mut().unwrap().sigma = v,
        Beta0A => p.group2.as_mut().unwrap().beta0 = v,
        CrossRate => p.group2.as_mut().unwrap().cross_rate = v,
        PopulationA => p.group2.as_mut().unwrap().population = v,
        InitFracs | InitFracsA => unreachable!("fraction block set as scalar"),
    }
}

fn get_fracs(p: &ParamSet, f: ParamField) -> [f64; 3] {
    match f {
        ParamField::InitFracs => p.init_fracs,
        ParamField::InitFracsA => p.group2.as_ref().unwrap().init_fracs,
        _ => unreachable!(),
    }
}

fn set_fracs(p: &mut ParamSet, f: ParamField, v: [f64; 3]) {
    match f {
        ParamField::InitFracs => p.init_fracs = v,
        ParamField::InitFracsA => p.group2.as_mut().unwrap().init_fracs = v,
        _ => unreachable!(),
    }
}

/// Ordered real vector of the sampled parameters on the unconstrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedVector(pub Vec<f64>);

impl UnconstrainedVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Map a valid ParamSet to the unconstrained scale: log for positive
/// scalars, additive log-ratio against S0 for the fraction blocks;
/// point-mass fields are omitted.
pub fn to_unconstrained(p: &ParamSet, spec: &PriorSpec) -> Result<UnconstrainedVector> {
    p.validate()?;
    if p.kind() != spec.kind {
        return Err(Error::Config("model kind mismatch between ParamSet and PriorSpec".into()));
    }
    let mut v = Vec::with_capacity(spec.dim());
    for &f in ParamField::canonical_order(spec.kind) {
        let prior = spec.get(f)?;
        if prior.is_point_mass() {
            continue;
        }
        if f.is_fracs() {
            let fr = get_fracs(p, f);
            let s0 = 1.0 - fr.iter().sum::<f64>();
            if fr.iter().any(|x| *x <= 0.0) || s0 <= 0.0 {
                return Err(Error::invalid(
                    f.name(),
                    "additive log-ratio needs strictly interior fractions",
                ));
            }
            for x in fr {
                v.push((x / s0).ln());
            }
        } else {
            let x = get_scalar(p, f);
            if x <= 0.0 {
                return Err(Error::invalid(f.name(), "log transform needs a positive value"));
            }
            v.push(x.ln());
        }
    }
    Ok(UnconstrainedVector(v))
}

/// Inverse of `to_unconstrained`; point-mass fields come from the spec.
pub fn from_unconstrained(v: &UnconstrainedVector, spec: &PriorSpec) -> Result<ParamSet> {
    if v.dim() != spec.dim() {
        return Err(Error::invalid(
            "unconstrained_vector",
            format!("dimension {} != expected {}", v.dim(), spec.dim()),
        ));
    }
    let mut p = spec.point_mass_template()?;
    let mut idx = 0usize;
    for &f in ParamField::canonical_order(spec.kind) {
        let prior = spec.get(f)?;
        if prior.is_point_mass() {
            continue;
        }
        if f.is_fracs() {
            let (a, b, c) = (v.0[idx], v.0[idx + 1], v.0[idx + 2]);
            idx += 3;
            // inverse alr: f_j = e^{v_j} / (1 + sum), S0 = 1 / (1 + sum)
            let m = a.max(b).max(c).max(0.0);
            let ea = (a - m).exp();
            let eb = (b - m).exp();
            let ec = (c - m).exp();
            let denom = (-m).exp() + ea + eb + ec;
            set_fracs(&mut p, f, [ea / denom, eb / denom, ec / denom]);
        } else {
            set_scalar(&mut p, f, v.0[idx].exp());
            idx += 1;
        }
    }
    Ok(p)
}

/// Constrained value of each sampled coordinate (same order as
/// `PriorSpec::coordinate_names`): exp for scalars, fractions for the
/// initial-condition blocks.
pub fn constrained_coordinates(v: &UnconstrainedVector, spec: &PriorSpec) -> Result<Vec<f64>> {
    let p = from_unconstrained(v, spec)?;
    let mut out = Vec::with_capacity(spec.dim());
    for &f in ParamField::canonical_order(spec.kind) {
        if spec.get(f)?.is_point_mass() {
            continue;
        }
        if f.is_fracs() {
            out.extend_from_slice(&get_fracs(&p, f));
        } else {
            out.push(get_scalar(&p, f));
        }
    }
    Ok(out)
}

/// log pi(theta) on the unconstrained scale, including the log-Jacobian of
/// the transform, so the PMMH acceptance ratio needs no separate term.
pub fn log_prior(v: &UnconstrainedVector, spec: &PriorSpec) -> Result<f64> {
    if v.dim() != spec.dim() {
        return Err(Error::invalid(
            "unconstrained_vector",
            format!("dimension {} != expected {}", v.dim(), spec.dim()),
        ));
    }
    let mut lp = 0.0;
    let mut idx = 0usize;
    for &f in ParamField::canonical_order(spec.kind) {
        let prior = spec.get(f)?;
        match prior {
            Prior::PointMass { .. } | Prior::PointMassFracs { .. } => {}
            Prior::Normal { mean, sd, on_inverse } => {
                let u = v.0[idx];
                idx += 1;
                // theta = e^u; prior on theta or on 1/theta, truncated to >0
                let trunc = normal_cdf(mean / sd).ln();
                if *on_inverse {
                    // q = 1/theta = e^{-u}; |dq/du| = e^{-u}
                    lp += normal_logpdf((-u).exp(), *mean, *sd) - trunc - u;
                } else {
                    lp += normal_logpdf(u.exp(), *mean, *sd) - trunc + u;
                }
            }
            Prior::VaguePositive { sd } => {
                let u = v.0[idx];
                idx += 1;
                // half-normal: 2 phi(theta; 0, sd) on theta > 0
                lp += 2f64.ln() + normal_logpdf(u.exp(), 0.0, *sd) + u;
            }
            Prior::DirichletMoment { mean_r, var_r } => {
                let alpha = dirichlet_concentration(*mean_r, *var_r)?;
                let (a, b, c) = (v.0[idx], v.0[idx + 1], v.0[idx + 2]);
                idx += 3;
                let m = a.max(b).max(c).max(0.0);
                let ea = (a - m).exp();
                let eb = (b - m).exp();
                let ec = (c - m).exp();
                let denom = (-m).exp() + ea + eb + ec;
                let (e0, i0, r0) = (ea / denom, eb / denom, ec / denom);
                let s0 = 1.0 - e0 - i0 - r0;
                let a0: f64 = alpha.iter().sum();
                let ln_norm = ln_gamma(a0) - alpha.iter().map(|&x| ln_gamma(x)).sum::<f64>();
                let ln_dens = ln_norm
                    + (alpha[0] - 1.0) * s0.ln()
                    + (alpha[1] - 1.0) * e0.ln()
                    + (alpha[2] - 1.0) * i0.ln()
                    + (alpha[3] - 1.0) * r0.ln();
                // |det d(e,i,r)/d(v)| = e0*i0*r0*s0 for the alr inverse
                lp += ln_dens + e0.ln() + i0.ln() + r0.ln() + s0.ln();
            }
        }
    }
    Ok(lp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn spec() -> PriorSpec {
        PriorSpec::informative_seir(1.0, 1.0e5)
    }

    #[test]
    fn log_of_unity_in_k_slot() {
        let mut p = ParamSet::seir_template();
        p.latent_rate = 1.0;
        let v = to_unconstrained(&p, &spec()).unwrap();
        assert_eq!(v.0[0], 0.0);
    }

    #[test]
    fn alr_of_equal_tenths() {
        let mut p = ParamSet::seir_template();
        p.init_fracs = [0.1, 0.1, 0.1];
        let v = to_unconstrained(&p, &spec()).unwrap();
        let names = spec().coordinate_names();
        let e_idx = names.iter().position(|n| n == "e0").unwrap();
        let expect = (0.1f64 / 0.7).ln();
        for off in 0..3 {
            assert_relative_eq!(v.0[e_idx + off], expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn round_trip_identity_random_paramsets() {
        let sp = spec();
        let mut rng = stream(7, &[0]);
        for _ in 0..100 {
            let p = random_valid(&mut rng);
            let v = to_unconstrained(&p, &sp).unwrap();
            let q = from_unconstrained(&v, &sp).unwrap();
            assert_close(&p, &q, 1e-12);
        }
    }

    #[test]
    fn from_unconstrained_at_origin() {
        let sp = spec();
        let v = UnconstrainedVector(vec![0.0; sp.dim()]);
        let p = from_unconstrained(&v, &sp).unwrap();
        assert_relative_eq!(p.latent_rate, 1.0);
        assert_relative_eq!(p.sigma, 1.0);
        for f in p.init_fracs {
            assert_relative_eq!(f, 0.25, max_relative = 1e-12);
        }
    }

    #[test]
    fn k_slot_exponentiates() {
        let sp = spec();
        let mut v = UnconstrainedVector(vec![0.0; sp.dim()]);
        v.0[0] = 0.63f64.ln();
        let p = from_unconstrained(&v, &sp).unwrap();
        assert_relative_eq!(p.latent_rate, 0.63, max_relative = 1e-12);
        let period = 1.0 / p.latent_rate;
        assert!(period > 1.55 && period < 1.63);
    }

    #[test]
    fn log_prior_normal_slot_closed_form() {
        // one-parameter spec: only k sampled, prior Normal(1.59, k_sd) on k^-1
        let mut sp = PriorSpec::all_point_mass(&ParamSet::seir_template());
        let k_sd = (1.63 - 1.55) / (2.0 * 1.959_963_985);
        sp.set(
            ParamField::LatentRate,
            Prior::Normal { mean: 1.59, sd: k_sd, on_inverse: true },
        );
        let mut p = ParamSet::seir_template();
        p.latent_rate = 1.0 / 1.59;
        let v = to_unconstrained(&p, &sp).unwrap();
        assert_eq!(v.dim(), 1);
        let lp = log_prior(&v, &sp).unwrap();
        // density at the mean plus the Jacobian |d(1/k)/d(log k)| = 1/k
        let expected = -(k_sd * (2.0 * std::f64::consts::PI).sqrt()).ln()
            - normal_cdf(1.59 / k_sd).ln()
            + 1.59f64.ln();
        assert_relative_eq!(lp, expected, max_relative = 1e-6);
    }

    #[test]
    fn vague_prior_flat_near_origin() {
        let mut sp = PriorSpec::all_point_mass(&ParamSet::seir_template());
        sp.set(ParamField::Sigma, Prior::VaguePositive { sd: 1.0e3 });
        // flat over theta in [0.1, 10] apart from the Jacobian term; the
        // half-normal with sd 1e3 varies by 0.5*(10/1000)^2 = 5e-5 there
        let base = 2f64.ln() - (1.0e3 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        for theta in [0.1f64, 1.0, 10.0] {
            let v = UnconstrainedVector(vec![theta.ln()]);
            let lp = log_prior(&v, &sp).unwrap();
            assert_relative_eq!(lp - theta.ln(), base, epsilon = 1e-4);
        }
    }

    #[test]
    fn log_prior_shifts_with_prior_mean() {
        let grid: Vec<f64> = (1..200).map(|i| 0.5 + i as f64 * 0.01).collect();
        let argmax = |mean: f64| {
            let mut sp = PriorSpec::all_point_mass(&ParamSet::seir_template());
            sp.set(
                ParamField::RecoveryRate,
                Prior::Normal { mean, sd: 0.05, on_inverse: true },
            );
            let mut best = (f64::NEG_INFINITY, 0.0);
            for &period in &grid {
                let v = UnconstrainedVector(vec![(1.0 / period).ln()]);
                let lp = log_prior(&v, &sp).unwrap();
                if lp > best.0 {
                    best = (lp, period);
                }
            }
            best.1
        };
        let a = argmax(1.0);
        let b = argmax(1.1);
        assert!(b > a, "argmax should move with the prior mean: {a} vs {b}");
    }

    #[test]
    fn log_prior_finite_for_transform_range() {
        let sp = spec();
        let mut rng = stream(11, &[1]);
        for _ in 0..200 {
            let v = UnconstrainedVector((0..sp.dim()).map(|_| rng.gen_range(-6.0..4.0)).collect());
            let p = from_unconstrained(&v, &sp).unwrap();
            p.validate().unwrap();
            let lp = log_prior(&v, &sp).unwrap();
            assert!(lp.is_finite(), "log prior not finite at {v:?}");
        }
    }

    #[test]
    fn alr_jacobian_matches_finite_differences() {
        // |det d(e,i,r)/dv| should equal e*i*r*s
        let v0 = [0.3f64, -0.8, 0.1];
        let f = |v: &[f64; 3]| {
            let d: f64 = 1.0 + v.iter().map(|x| x.exp()).sum::<f64>();
            [v[0].exp() / d, v[1].exp() / d, v[2].exp() / d]
        };
        let h = 1e-6;
        let mut jac = [[0.0f64; 3]; 3];
        for j in 0..3 {
            let mut vp = v0;
            let mut vm = v0;
            vp[j] += h;
            vm[j] -= h;
            let fp = f(&vp);
            let fm = f(&vm);
            for i in 0..3 {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
            - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
            + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
        let fr = f(&v0);
        let s = 1.0 - fr.iter().sum::<f64>();
        let expect = fr[0] * fr[1] * fr[2] * s;
        assert_relative_eq!(det.abs(), expect, max_relative = 1e-5);
    }

    #[test]
    fn prior_quantiles_match_stated_band() {
        // 2.5%/97.5% quantiles of the latent-period prior within +-0.005 of
        // 1.55 and 1.63 over 1e5 draws
        let sp = spec();
        let mut rng = stream(3, &[2]);
        let mut periods = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            let p = sp.sample(&mut rng).unwrap();
            periods.push(1.0 / p.latent_rate);
        }
        let lo = crate::util::quantile(&periods, 0.025);
        let hi = crate::util::quantile(&periods, 0.975);
        assert!((lo - 1.55).abs() < 0.005, "lo = {lo}");
        assert!((hi - 1.63).abs() < 0.005, "hi = {hi}");
    }

    #[test]
    fn dirichlet_moments_match_target() {
        let sp = spec();
        let mut rng = stream(5, &[3]);
        let mut r = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            let p = sp.sample(&mut rng).unwrap();
            r.push(p.init_fracs[2]);
        }
        let m = crate::util::mean(&r);
        let v = crate::util::variance(&r);
        let n = r.len() as f64;
        // MC standard errors of the mean and variance estimators
        let se_mean = (v / n).sqrt();
        let mu4: f64 = r.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
        let se_var = ((mu4 - v * v) / n).sqrt();
        assert!((m - 0.15).abs() < 3.0 * se_mean, "mean {m}");
        assert!((v - 0.0225).abs() < 3.0 * se_var, "var {v}");
    }

    #[test]
    fn effective_reproduction_cases() {
        assert_relative_eq!(effective_reproduction(0.9, 1.0e5, 0.9, 1.0e5).unwrap(), 1.0);
        let r = effective_reproduction(1.35, 0.83e5, 1.0 / 1.08, 1.0e5).unwrap();
        assert_relative_eq!(r, 1.35 * 0.83 * 1.08, max_relative = 1e-12);
        assert_relative_eq!(effective_reproduction(1.35, 0.0, 0.9, 1.0e5).unwrap(), 0.0);
        assert!(effective_reproduction(1.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn invalid_paramset_identifies_field() {
        let mut p = ParamSet::seir_template();
        p.recovery_rate = -0.5;
        match to_unconstrained(&p, &spec()) {
            Err(Error::InvalidInput { field, .. }) => assert_eq!(field, "recovery_rate"),
            other => panic!("expected invalid-input error, got {other:?}"),
        }
    }

    fn random_valid<R: Rng>(rng: &mut R) -> ParamSet {
        let mut p = ParamSet::seir_template();
        p.latent_rate = rng.gen_range(0.2..2.0);
        p.recovery_rate = rng.gen_range(0.2..2.0);
        p.sigma = rng.gen_range(0.01..0.5);
        p.obs_sd = rng.gen_range(0.01..0.5);
        p.beta0 = rng.gen_range(0.3..3.0);
        let e = rng.gen_range(1e-6..0.2);
        let i = rng.gen_range(1e-6..0.2);
        let r = rng.gen_range(1e-6..0.4);
        p.init_fracs = [e, i, r];
        p
    }

    fn assert_close(a: &ParamSet, b: &ParamSet, tol: f64) {
        assert_relative_eq!(a.latent_rate, b.latent_rate, max_relative = tol);
        assert_relative_eq!(a.recovery_rate, b.recovery_rate, max_relative = tol);
        assert_relative_eq!(a.sigma, b.sigma, max_relative = tol);
        assert_relative_eq!(a.obs_sd, b.obs_sd, max_relative = tol);
        assert_relative_eq!(a.beta0, b.beta0, max_relative = tol);
        for j in 0..3 {
            assert_relative_eq!(a.init_fracs[j], b.init_fracs[j], max_relative = tol);
        }
    }
}
