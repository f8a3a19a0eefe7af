//! Reparametrised data-augmentation baselines: the Lamperti and
//! driving-noise path transforms, the Girsanov log-density of the
//! transformed path, and a particle Gibbs sampler for the volatility
//! whose poor mixing motivates the pseudo-marginal approach.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{
    driver_init, initial_state, seir_substep, simulate_driver, DriverKind, LatentPath, TimeGrid,
};
use crate::error::{Error, Result};
use crate::mcmc::{adapt_scale, ChainOutput, CovProvenance};
use crate::model::{ModelKind, ParamSet};
use crate::observation::{log_obs_density, ObservationSeries};
use crate::pfilter::{genealogy_draw, particle_filter, ResampleScheme, SeirParticle, SeirSsm};
use crate::rng::{child_seed, stream};
use crate::util::normal_logpdf;

/// Which path transformation a `ReparamPath` stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReparamKind {
    /// u_t = (eta(x_t) - eta(x_0)); unit-volatility path with u_0 = 0.
    Lamperti,
    /// w_t: per-step driving noise of the Euler skeleton.
    Chib,
}

/// A transformed latent path on the same grid as the original.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamPath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub kind: ReparamKind,
    pub driver: DriverKind,
    /// The x0 anchor needed to invert the transform.
    pub x0: f64,
}

/// Drift of the driver on the x scale. The transforms support the scalar
/// diffusions only (BM and OU).
fn drift(driver: DriverKind, x: f64) -> Result<f64> {
    match driver {
        DriverKind::Bm => Ok(0.0),
        DriverKind::Ou { rate, mean_log } => Ok(rate * (mean_log - x)),
        _ => Err(Error::Config(
            "path transforms support the BM and OU drivers only".into(),
        )),
    }
}

/// Euler substep length for the increment ending at grid point `idx`.
fn point_delta(grid: &TimeGrid, idx: usize) -> f64 {
    grid.delta((idx - 1) / (grid.substeps + 1))
}

fn check_sigma(p: &ParamSet) -> Result<f64> {
    if !(p.sigma > 0.0) {
        return Err(Error::invalid("sigma", "transform requires sigma > 0"));
    }
    Ok(p.sigma)
}

/// Lamperti transform x -> u = (x - x0) / sigma (constant volatility), so
/// u has unit volatility and u_0 = 0.
pub fn lamperti_transform(x: &LatentPath, p: &ParamSet) -> Result<ReparamPath> {
    let sigma = check_sigma(p)?;
    drift(x.kind, x.x[0])?;
    let x0 = x.x[0];
    Ok(ReparamPath {
        grid: x.grid.clone(),
        values: x.x.iter().map(|&v| (v - x0) / sigma).collect(),
        kind: ReparamKind::Lamperti,
        driver: x.kind,
        x0,
    })
}

/// Inverse Lamperti transform: x = x0 + sigma u.
pub fn lamperti_inverse(u: &ReparamPath, p: &ParamSet) -> Result<LatentPath> {
    let sigma = check_sigma(p)?;
    if u.kind != ReparamKind::Lamperti {
        return Err(Error::invalid("path", "expected a Lamperti-transformed path"));
    }
    Ok(LatentPath {
        grid: u.grid.clone(),
        x: u.values.iter().map(|&v| u.x0 + sigma * v).collect(),
        kind: u.driver,
    })
}

/// Driving-noise transform: w_k = [x_k - x_{k-1} - delta mu(x_{k-1})] / sigma
/// for k >= 1, with w_0 = 0. Under the Euler kernel at the true parameters
/// the w_k are iid N(0, delta) (variance delta, not 1 - the increments keep
/// the substep scaling).
pub fn chib_reparam(x: &LatentPath, p: &ParamSet) -> Result<ReparamPath> {
    let sigma = check_sigma(p)?;
    let mut values = Vec::with_capacity(x.x.len());
    values.push(0.0);
    for k in 1..x.x.len() {
        let delta = point_delta(&x.grid, k);
        let mu = drift(x.kind, x.x[k - 1])?;
        values.push((x.x[k] - x.x[k - 1] - delta * mu) / sigma);
    }
    Ok(ReparamPath {
        grid: x.grid.clone(),
        values,
        kind: ReparamKind::Chib,
        driver: x.kind,
        x0: x.x[0],
    })
}

/// Inverse driving-noise transform: forward Euler recursion from x0.
pub fn chib_inverse(w: &ReparamPath, p: &ParamSet) -> Result<LatentPath> {
    let sigma = check_sigma(p)?;
    if w.kind != ReparamKind::Chib {
        return Err(Error::invalid("path", "expected a driving-noise path"));
    }
    let mut x = Vec::with_capacity(w.values.len());
    x.push(w.x0);
    for k in 1..w.values.len() {
        let delta = point_delta(&w.grid, k);
        let prev = x[k - 1];
        let mu = drift(w.driver, prev)?;
        x.push(prev + delta * mu + sigma * w.values[k]);
    }
    Ok(LatentPath { grid: w.grid.clone(), x, kind: w.driver })
}

/// Discretised Girsanov log-density of a unit-volatility path with drift
/// `nu` against standard Brownian motion: Ito sum with left-endpoint drift
/// plus a Riemann sum for the quadratic term.
pub fn girsanov_with_drift<F: Fn(f64) -> f64>(u: &ReparamPath, nu: F) -> f64 {
    let mut ld = 0.0;
    for k in 1..u.values.len() {
        let delta = point_delta(&u.grid, k);
        let n = nu(u.values[k - 1]);
        ld += n * (u.values[k] - u.values[k - 1]) - 0.5 * n * n * delta;
    }
    ld
}

/// Girsanov log-density of a Lamperti-transformed driver path with respect
/// to standard Brownian motion. Identically zero for the (driftless) BM
/// driver.
pub fn girsanov_logdensity(u: &ReparamPath, p: &ParamSet) -> Result<f64> {
    let sigma = check_sigma(p)?;
    if u.kind != ReparamKind::Lamperti {
        return Err(Error::invalid("path", "Girsanov density needs a unit-volatility path"));
    }
    if u.driver == DriverKind::Bm {
        return Ok(0.0);
    }
    // nu(u) = mu_x(x0 + sigma u) / sigma for constant volatility
    drift(u.driver, u.x0)?;
    Ok(girsanov_with_drift(u, |v| {
        drift(u.driver, u.x0 + sigma * v).unwrap() / sigma
    }))
}

/// Log-density of the Euler skeleton of the driver path at the given
/// parameters: sum of N(x_k; x_{k-1} + delta mu, sigma^2 delta) terms.
pub fn euler_path_logdensity(x: &LatentPath, p: &ParamSet) -> Result<f64> {
    let sigma = check_sigma(p)?;
    let mut ld = 0.0;
    for k in 1..x.x.len() {
        let delta = point_delta(&x.grid, k);
        let mu = drift(x.kind, x.x[k - 1])?;
        ld += normal_logpdf(x.x[k], x.x[k - 1] + delta * mu, sigma * delta.sqrt());
    }
    Ok(ld)
}

/// How the volatility is updated given the retained path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaUpdateKind {
    /// Hold the Lamperti-transformed path u fixed and rebuild x from the
    /// proposed sigma, so the data likelihood enters the ratio.
    Reparam,
    /// Hold x itself fixed; the ratio is the Euler path density plus prior.
    /// Suffers the quadratic-variation degeneracy.
    Naive,
}

#[derive(Debug, Clone)]
pub struct GibbsConfig {
    pub n_iter: usize,
    pub burnin: usize,
    pub n_particles: usize,
    /// Initial random-walk sd on log sigma.
    pub eps0: f64,
    /// Adapt the proposal scale towards 0.234 acceptance.
    pub adapt: bool,
    pub update: SigmaUpdateKind,
    pub seed: u64,
}

impl GibbsConfig {
    pub fn new(n_iter: usize, seed: u64) -> GibbsConfig {
        GibbsConfig {
            n_iter,
            burnin: n_iter / 5,
            n_particles: 200,
            eps0: 0.1,
            adapt: true,
            update: SigmaUpdateKind::Reparam,
            seed,
        }
    }
}

/// Half-normal prior on sigma evaluated at v = ln sigma, Jacobian included
/// (the same vague prior the joint sampler places on sigma).
fn sigma_log_prior(v: f64) -> f64 {
    let sd = 1.0e3;
    2f64.ln() + normal_logpdf(v.exp(), 0.0, sd) + v
}

/// Deterministic data log-likelihood given the full latent path.
fn path_data_loglik(p: &ParamSet, path: &LatentPath, data: &ObservationSeries) -> Result<f64> {
    let traj = crate::dynamics::propagate_ode(p, std::slice::from_ref(path))?;
    Ok((0..data.n_obs())
        .map(|i| log_obs_density(data.values[i][0], traj.incidence[i][0], p.obs_sd, p.reporting))
        .sum())
}

/// Rebuild the per-interval particle sequence implied by a latent path, so
/// a deterministically rescaled path can serve as the conditional-SMC
/// reference.
fn steps_from_path(p: &ParamSet, grid: &TimeGrid, path: &LatentPath) -> Result<Vec<SeirParticle>> {
    let per = grid.substeps + 1;
    let mut states = initial_state(p);
    let pops = vec![p.population];
    let mut steps = Vec::with_capacity(grid.n_obs());
    for i in 0..grid.n_obs() {
        let delta = grid.delta(i);
        for st in &mut states {
            st.z = 0.0;
        }
        let mut xpath = vec![0.0; per];
        for k in 0..per {
            let beta = path.x[i * per + k].exp();
            seir_substep(&mut states, &[beta], 0.0, &pops, p.latent_rate, p.recovery_rate, delta)?;
            xpath[k] = path.x[i * per + k + 1];
        }
        let x_end = xpath[per - 1];
        steps.push(SeirParticle {
            drivers: vec![driver_init(path.kind, x_end)],
            states: states.clone(),
            xpath,
        });
    }
    Ok(steps)
}

/// Particle Gibbs on the reparametrised model: alternate a conditional-SMC
/// update of the latent path given sigma with a random-walk Metropolis
/// update of sigma given the transformed path. All parameters except sigma
/// are held fixed at `params`; BM driver only.
///
/// With an empty observation series the path is drawn once from the Euler
/// kernel at `params` (seeded by `cfg.seed`) and held fixed, so the sigma
/// update targets prior times path density alone.
pub fn run_particle_gibbs_reparam(
    params: &ParamSet,
    driver: DriverKind,
    grid: &TimeGrid,
    data: &ObservationSeries,
    cfg: &GibbsConfig,
) -> Result<ChainOutput> {
    if driver != DriverKind::Bm {
        return Err(Error::Config(
            "the particle Gibbs baseline supports the BM driver only".into(),
        ));
    }
    if params.kind() != ModelKind::Seir {
        return Err(Error::Config(
            "the particle Gibbs baseline supports the single-group model only".into(),
        ));
    }
    if cfg.n_iter == 0 {
        return Err(Error::invalid("n_iter", "must be >= 1"));
    }
    params.validate()?;
    check_sigma(params)?;
    let has_data = data.n_obs() > 0;
    let mut p = params.clone();

    // initial reference path: unconditional filter draw, or a prior path
    // in the no-data case
    let mut ref_steps: Vec<SeirParticle> = Vec::new();
    let mut path: LatentPath;
    if has_data {
        let ssm = SeirSsm::new(&p, driver, grid, data)?;
        let init_seed = child_seed(cfg.seed, &[0x63736d63, 0]);
        let r = particle_filter(&ssm, cfg.n_particles, init_seed, ResampleScheme::Systematic, None)?;
        if r.degenerate {
            return Err(Error::Degenerate(
                "initial particle filter degenerated; adjust the initial sigma".into(),
            ));
        }
        ref_steps = genealogy_draw(&r, child_seed(cfg.seed, &[0x67656e65, 0]))?;
        path = ssm.assemble_path(&ref_steps).0.swap_remove(0);
    } else {
        path = simulate_driver(driver, &p, grid, cfg.seed)?;
    }

    let mut out = ChainOutput {
        names: vec!["sigma".into()],
        draws: Vec::with_capacity(cfg.n_iter),
        logliks: Vec::with_capacity(cfg.n_iter),
        log_priors: Vec::with_capacity(cfg.n_iter),
        accepted: Vec::with_capacity(cfg.n_iter),
        acc_probs: Vec::with_capacity(cfg.n_iter),
        eps_trace: Vec::with_capacity(cfg.n_iter),
        paths: Vec::new(),
        burnin: cfg.burnin,
        cov_provenance: CovProvenance::Identity,
    };
    let mut log_eps = cfg.eps0.ln();
    let mut ll_c = if has_data { path_data_loglik(&p, &path, data)? } else { 0.0 };

    for i in 1..=cfg.n_iter {
        // (a) conditional-SMC refresh of the path given sigma
        if has_data {
            let ssm = SeirSsm::new(&p, driver, grid, data)?;
            let seed_i = child_seed(cfg.seed, &[0x63736d63, i as u64]);
            let r = particle_filter(
                &ssm,
                cfg.n_particles,
                seed_i,
                ResampleScheme::Systematic,
                Some(&ref_steps),
            )?;
            if r.degenerate {
                return Err(Error::Degenerate(format!(
                    "conditional filter degenerated at iteration {i}"
                )));
            }
            ref_steps = genealogy_draw(&r, child_seed(cfg.seed, &[0x67656e65, i as u64]))?;
            path = ssm.assemble_path(&ref_steps).0.swap_remove(0);
            ll_c = path_data_loglik(&p, &path, data)?;
        }

        // (b) random-walk Metropolis on v = ln sigma given the path
        let mut rng = stream(cfg.seed, &[0x73696776, i as u64]);
        let v_c = p.sigma.ln();
        let z: f64 = rng.sample(StandardNormal);
        let v_s = v_c + log_eps.exp() * z;
        let mut p_star = p.clone();
        p_star.sigma = v_s.exp();
        let (log_ratio, cand_path, cand_ll) = match cfg.update {
            SigmaUpdateKind::Reparam => {
                // hold u fixed, rebuild the candidate path x* = h(u, x0, sigma*)
                let u = lamperti_transform(&path, &p)?;
                let x_star = lamperti_inverse(&u, &p_star)?;
                let ll_s =
                    if has_data { path_data_loglik(&p_star, &x_star, data)? } else { 0.0 };
                let lr = ll_s - ll_c + sigma_log_prior(v_s) - sigma_log_prior(v_c);
                (lr, Some(x_star), ll_s)
            }
            SigmaUpdateKind::Naive => {
                let lr = euler_path_logdensity(&path, &p_star)?
                    - euler_path_logdensity(&path, &p)?
                    + sigma_log_prior(v_s)
                    - sigma_log_prior(v_c);
                (lr, None, ll_c)
            }
        };
        let acc_prob = log_ratio.exp().min(1.0);
        let accept = rng.gen::<f64>() < acc_prob;
        if accept {
            p = p_star;
            if let Some(x_star) = cand_path {
                ll_c = cand_ll;
                if has_data {
                    ref_steps = steps_from_path(&p, grid, &x_star)?;
                }
                path = x_star;
            }
        }
        if cfg.adapt {
            log_eps = adapt_scale(log_eps, acc_prob, i, 0.999, 0.234);
        }
        out.draws.push(vec![p.sigma.ln()]);
        out.logliks.push(ll_c);
        out.log_priors.push(sigma_log_prior(p.sigma.ln()));
        out.accepted.push(accept);
        out.acc_probs.push(acc_prob);
        out.eps_trace.push(log_eps.exp());
    }
    Ok(out)
}
