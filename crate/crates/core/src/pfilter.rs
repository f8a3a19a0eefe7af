//! Bootstrap particle filter: unbiased likelihood estimation, filtering
//! means and genealogy-traced smoothing draws.
//!
//! The filter is generic over a state-space model so the same machinery
//! runs the diffusion-driven SEIR models and the linear-Gaussian surrogate
//! used for oracle checks.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    driver_advance, driver_init, seir_substep, DriverKind, DriverState, LatentPath, SeirState,
    StateTrajectory, TimeGrid,
};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ParamSet};
use crate::observation::{log_obs_density, ObservationSeries};
use crate::rng::stream;
use crate::util::logsumexp;
use rand::Rng;

/// A state-space model the bootstrap filter can run.
pub trait Ssm {
    type Particle: Clone;

    fn n_obs(&self) -> usize;

    fn init(&self, rng: &mut ChaCha8Rng) -> Self::Particle;

    /// Advance a particle from observation i to i+1 (0-based interval
    /// index). Returns false when propagation failed numerically; the
    /// particle then gets zero weight.
    fn propagate(&self, p: &mut Self::Particle, interval: usize, rng: &mut ChaCha8Rng) -> bool;

    /// log f(y_{interval+1} | particle state after propagate).
    fn log_weight(&self, p: &Self::Particle, interval: usize) -> f64;

    /// Model-defined summary coordinates used for filtering means.
    fn summary(&self, p: &Self::Particle) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleScheme {
    Systematic,
    Multinomial,
}

impl Default for ResampleScheme {
    fn default() -> Self {
        ResampleScheme::Systematic
    }
}

/// Draw `n` ancestor indices proportional to `weights`.
///
/// Systematic resampling guarantees the count of index j lies in
/// {floor(n W_j), ceil(n W_j)}; multinomial draws iid.
pub fn resample(
    weights: &[f64],
    n: usize,
    scheme: ResampleScheme,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| *w < 0.0) || !(total > 0.0) || !total.is_finite() {
        return Err(Error::invalid(
            "weights",
            "must be non-negative with a positive finite sum",
        ));
    }
    let mut out = Vec::with_capacity(n);
    match scheme {
        ResampleScheme::Systematic => {
            let u0: f64 = rng.gen::<f64>() / n as f64;
            let mut cum = weights[0] / total;
            let mut j = 0usize;
            for i in 0..n {
                let u = u0 + i as f64 / n as f64;
                while u > cum && j + 1 < weights.len() {
                    j += 1;
                    cum += weights[j] / total;
                }
                out.push(j);
            }
        }
        ResampleScheme::Multinomial => {
            for _ in 0..n {
                let u: f64 = rng.gen::<f64>() * total;
                let mut cum = 0.0;
                let mut j = weights.len() - 1;
                for (k, w) in weights.iter().enumerate() {
                    cum += w;
                    if u <= cum {
                        j = k;
                        break;
                    }
                }
                out.push(j);
            }
        }
    }
    Ok(out)
}

/// Output of one bootstrap-filter pass.
#[derive(Debug, Clone)]
pub struct FilterResult<P> {
    /// log L(theta); -inf iff `degenerate`.
    pub loglik: f64,
    pub degenerate: bool,
    /// Weighted mean of the model summary at each observation time.
    pub filter_means: Vec<Vec<f64>>,
    /// Particle states per observation step (post-propagation).
    pub history: Vec<Vec<P>>,
    /// Ancestor index of each particle at each step (resampling output).
    pub ancestry: Vec<Vec<usize>>,
    /// Normalised weights at each step (pre-resampling).
    pub weights: Vec<Vec<f64>>,
}

/// Run Algorithm-1 style bootstrap filtering: propagate, weight in
/// log-space with max-subtraction, resample every observation step.
///
/// `reference` pins particle 0 to a fixed trajectory (conditional SMC for
/// particle Gibbs); pass None for the plain filter.
pub fn particle_filter<M: Ssm>(
    model: &M,
    n_particles: usize,
    seed: u64,
    scheme: ResampleScheme,
    reference: Option<&[M::Particle]>,
) -> Result<FilterResult<M::Particle>> {
    if n_particles == 0 {
        return Err(Error::invalid("n_particles", "must be >= 1"));
    }
    if let Some(r) = reference {
        if r.len() != model.n_obs() {
            return Err(Error::invalid("reference", "length must match observation count"));
        }
    }
    let n_obs = model.n_obs();
    let mut particles: Vec<M::Particle> = (0..n_particles)
        .map(|j| model.init(&mut stream(seed, &[0x696e6974, j as u64])))
        .collect();
    let mut result = FilterResult {
        loglik: 0.0,
        degenerate: false,
        filter_means: Vec::with_capacity(n_obs),
        history: Vec::with_capacity(n_obs),
        ancestry: Vec::with_capacity(n_obs),
        weights: Vec::with_capacity(n_obs),
    };
    let mut logw = vec![0.0f64; n_particles];
    for i in 0..n_obs {
        for (j, p) in particles.iter_mut().enumerate() {
            if reference.is_some() && j == 0 {
                *p = reference.unwrap()[i].clone();
                logw[j] = model.log_weight(p, i);
                continue;
            }
            let mut rng = stream(seed, &[0x70726f70, i as u64, j as u64]);
            logw[j] = if model.propagate(p, i, &mut rng) {
                model.log_weight(p, i)
            } else {
                f64::NEG_INFINITY
            };
        }
        let lse = logsumexp(&logw);
        if !lse.is_finite() {
            result.loglik = f64::NEG_INFINITY;
            result.degenerate = true;
            return Ok(result);
        }
        result.loglik += lse - (n_particles as f64).ln();
        let weights: Vec<f64> = logw.iter().map(|lw| (lw - lse).exp()).collect();
        // renormalise so the stored weights sum to one exactly
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();

        let mut mean_summary: Vec<f64> = Vec::new();
        for (j, p) in particles.iter().enumerate() {
            let s = model.summary(p);
            if mean_summary.is_empty() {
                mean_summary = vec![0.0; s.len()];
            }
            for (acc, v) in mean_summary.iter_mut().zip(s) {
                *acc += weights[j] * v;
            }
        }
        result.filter_means.push(mean_summary);
        result.history.push(particles.clone());

        let mut rrng = stream(seed, &[0x72657361, i as u64]);
        let mut ancestors = resample(&weights, n_particles, scheme, &mut rrng)?;
        if reference.is_some() {
            // conditional SMC: the reference genealogy survives at slot 0
            ancestors[0] = 0;
        }
        particles = ancestors.iter().map(|&a| particles[a].clone()).collect();
        result.ancestry.push(ancestors);
        result.weights.push(weights);
    }
    Ok(result)
}

/// Select a terminal particle by weight and trace its ancestry back,
/// returning one particle state per observation step.
pub fn genealogy_draw<P: Clone>(result: &FilterResult<P>, seed: u64) -> Result<Vec<P>> {
    if result.degenerate {
        return Err(Error::Degenerate("cannot draw a path from a degenerate filter".into()));
    }
    let n_steps = result.history.len();
    let last_w = result.weights.last().ok_or_else(|| {
        Error::Degenerate("empty filter result".into())
    })?;
    let mut rng = stream(seed, &[0x67656e65]);
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut j = last_w.len() - 1;
    for (k, w) in last_w.iter().enumerate() {
        cum += w;
        if u <= cum {
            j = k;
            break;
        }
    }
    let mut out = vec![result.history[n_steps - 1][j].clone()];
    let mut idx = j;
    for i in (1..n_steps).rev() {
        idx = result.ancestry[i - 1][idx];
        out.push(result.history[i - 1][idx].clone());
    }
    out.reverse();
    Ok(out)
}

// ---------------------------------------------------------------------------
// SEIR state-space model
// ---------------------------------------------------------------------------

/// One particle of the diffusion-driven SEIR model: driver and compartment
/// state per group, plus the x values over the just-completed interval
/// (group-major) for path reconstruction.
#[derive(Debug, Clone)]
pub struct SeirParticle {
    pub drivers: Vec<DriverState>,
    pub states: Vec<SeirState>,
    pub xpath: Vec<f64>,
}

/// The diffusion-driven SEIR model as a state-space model over observation
/// intervals.
pub struct SeirSsm<'a> {
    pub params: &'a ParamSet,
    pub driver: DriverKind,
    pub grid: &'a TimeGrid,
    pub data: &'a ObservationSeries,
}

impl<'a> SeirSsm<'a> {
    pub fn new(
        params: &'a ParamSet,
        driver: DriverKind,
        grid: &'a TimeGrid,
        data: &'a ObservationSeries,
    ) -> Result<SeirSsm<'a>> {
        params.validate()?;
        data.validate()?;
        if data.n_obs() != grid.n_obs() {
            return Err(Error::invalid("data", "observation count must match the grid"));
        }
        let groups = if params.kind() == ModelKind::Seir2Group { 2 } else { 1 };
        if data.n_groups() != groups {
            return Err(Error::invalid("data", "group count must match the model"));
        }
        Ok(SeirSsm { params, driver, grid, data })
    }

    fn n_groups(&self) -> usize {
        if self.params.kind() == ModelKind::Seir2Group {
            2
        } else {
            1
        }
    }

    fn sigma(&self, g: usize) -> f64 {
        if g == 0 {
            self.params.sigma
        } else {
            self.params.group2.as_ref().unwrap().sigma
        }
    }

    fn x0(&self, g: usize) -> f64 {
        if g == 0 {
            self.params.beta0.ln()
        } else {
            self.params.group2.as_ref().unwrap().beta0.ln()
        }
    }

    fn populations(&self) -> Vec<f64> {
        match &self.params.group2 {
            Some(gr) => vec![self.params.population, gr.population],
            None => vec![self.params.population],
        }
    }

    /// Rebuild (LatentPath per group, StateTrajectory) from a genealogy
    /// draw of this model.
    pub fn assemble_path(&self, steps: &[SeirParticle]) -> (Vec<LatentPath>, StateTrajectory) {
        let ngroups = self.n_groups();
        let per = self.grid.substeps + 1;
        let mut paths: Vec<LatentPath> = (0..ngroups)
            .map(|g| LatentPath {
                grid: self.grid.clone(),
                x: vec![self.x0(g)],
                kind: self.driver,
            })
            .collect();
        let mut traj = StateTrajectory {
            grid: self.grid.clone(),
            states: Vec::with_capacity(self.grid.n_points()),
            incidence: Vec::with_capacity(self.grid.n_obs()),
        };
        // per-substep compartment states are not retained by the filter;
        // the trajectory stores the end-of-interval states only, repeated
        // at the observation points, plus the incidence per interval
        traj.states.push(crate::dynamics::initial_state(self.params));
        for step in steps {
            for g in 0..ngroups {
                for k in 0..per {
                    paths[g].x.push(step.xpath[g * per + k]);
                }
            }
            traj.incidence.push(step.states.iter().map(|s| s.z).collect());
        }
        (paths, traj)
    }
}

impl<'a> Ssm for SeirSsm<'a> {
    type Particle = SeirParticle;

    fn n_obs(&self) -> usize {
        self.grid.n_obs()
    }

    fn init(&self, _rng: &mut ChaCha8Rng) -> SeirParticle {
        let ngroups = self.n_groups();
        let x0 = |g: usize| {
            if let DriverKind::Sigmoid { beta_high, beta_low, t_mid, slope } = self.driver {
                let b = beta_low
                    + (beta_high - beta_low) / (1.0 + ((self.grid.t0 - t_mid) / slope).exp());
                b.ln()
            } else {
                self.x0(g)
            }
        };
        SeirParticle {
            drivers: (0..ngroups).map(|g| driver_init(self.driver, x0(g))).collect(),
            states: crate::dynamics::initial_state(self.params),
            xpath: Vec::new(),
        }
    }

    fn propagate(&self, p: &mut SeirParticle, interval: usize, rng: &mut ChaCha8Rng) -> bool {
        let ngroups = self.n_groups();
        let per = self.grid.substeps + 1;
        let delta = self.grid.delta(interval);
        let populations = self.populations();
        let cross = self.params.group2.as_ref().map_or(0.0, |g| g.cross_rate);
        for st in &mut p.states {
            st.z = 0.0;
        }
        p.xpath.clear();
        p.xpath.resize(ngroups * per, 0.0);
        let t_base = if interval == 0 {
            self.grid.t0
        } else {
            self.grid.obs_times[interval - 1]
        };
        let mut betas = vec![0.0f64; ngroups];
        for k in 0..per {
            let t = t_base + k as f64 * delta;
            for g in 0..ngroups {
                betas[g] = p.drivers[g].x.exp();
            }
            if seir_substep(
                &mut p.states,
                &betas,
                cross,
                &populations,
                self.params.latent_rate,
                self.params.recovery_rate,
                delta,
            )
            .is_err()
            {
                return false;
            }
            for g in 0..ngroups {
                p.drivers[g] = driver_advance(self.driver, p.drivers[g], t, delta, self.sigma(g), rng);
                p.xpath[g * per + k] = p.drivers[g].x;
            }
        }
        true
    }

    fn log_weight(&self, p: &SeirParticle, interval: usize) -> f64 {
        let mut lw = 0.0;
        for (g, st) in p.states.iter().enumerate() {
            lw += log_obs_density(
                self.data.values[interval][g],
                st.z,
                self.params.obs_sd,
                self.params.reporting,
            );
        }
        lw
    }

    fn summary(&self, p: &SeirParticle) -> Vec<f64> {
        // per group: beta at the observation time, S, E, I, R, incidence
        let per = self.grid.substeps + 1;
        let mut s = Vec::with_capacity(6 * p.states.len());
        for (g, st) in p.states.iter().enumerate() {
            let x_end = if p.xpath.is_empty() {
                self.x0(g)
            } else {
                p.xpath[g * per + per - 1]
            };
            s.extend_from_slice(&[x_end.exp(), st.s, st.e, st.i, st.r, st.z]);
        }
        s
    }
}

/// A smoothing draw summarised at the observation times: beta, susceptible
/// count and accumulated incidence per group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObsPathDraw {
    pub times: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub susceptible: Vec<Vec<f64>>,
    pub incidence: Vec<Vec<f64>>,
}

impl<'a> SeirSsm<'a> {
    /// Genealogy smoothing draw reduced to observation-time summaries.
    pub fn obs_path_draw(
        &self,
        result: &FilterResult<SeirParticle>,
        seed: u64,
    ) -> Result<ObsPathDraw> {
        let steps = genealogy_draw(result, seed)?;
        let per = self.grid.substeps + 1;
        let ngroups = self.n_groups();
        let mut draw = ObsPathDraw {
            times: self.grid.obs_times.clone(),
            beta: Vec::with_capacity(steps.len()),
            susceptible: Vec::with_capacity(steps.len()),
            incidence: Vec::with_capacity(steps.len()),
        };
        for step in &steps {
            let beta: Vec<f64> =
                (0..ngroups).map(|g| step.xpath[g * per + per - 1].exp()).collect();
            draw.beta.push(beta);
            draw.susceptible.push(step.states.iter().map(|s| s.s).collect());
            draw.incidence.push(step.states.iter().map(|s| s.z).collect());
        }
        Ok(draw)
    }
}

/// Filter summary for the SEIR model with named accessors.
pub struct SeirFilterResult {
    pub inner: FilterResult<SeirParticle>,
}

impl SeirFilterResult {
    pub fn loglik(&self) -> f64 {
        self.inner.loglik
    }
    pub fn degenerate(&self) -> bool {
        self.inner.degenerate
    }
    /// Filtering mean of beta for a group at each observation time.
    pub fn beta_filter_mean(&self, group: usize) -> Vec<f64> {
        self.inner.filter_means.iter().map(|m| m[6 * group]).collect()
    }
}

/// Bootstrap particle filter over the SEIR model (Algorithm-1 layout).
pub fn run_particle_filter(
    params: &ParamSet,
    driver: DriverKind,
    data: &ObservationSeries,
    n_particles: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<SeirFilterResult> {
    let ssm = SeirSsm::new(params, driver, grid, data)?;
    let inner = particle_filter(&ssm, n_particles, seed, ResampleScheme::Systematic, None)?;
    Ok(SeirFilterResult { inner })
}

/// Genealogy smoothing draw from a SEIR filter result.
pub fn draw_smoothing_path(
    ssm: &SeirSsm,
    result: &SeirFilterResult,
    seed: u64,
) -> Result<(Vec<LatentPath>, StateTrajectory)> {
    let steps = genealogy_draw(&result.inner, seed)?;
    Ok(ssm.assemble_path(&steps))
}
