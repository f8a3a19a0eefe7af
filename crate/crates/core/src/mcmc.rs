//! Adaptive particle-marginal Metropolis-Hastings on the unconstrained
//! parameter scale, plus chain diagnostics (effective sample size, DIC),
//! iterated filtering and real-time contact-rate summaries.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DriverKind, TimeGrid};
use crate::error::{Error, Result};
use crate::model::{
    constrained_coordinates, from_unconstrained, log_prior, to_unconstrained, ParamSet, PriorSpec,
    UnconstrainedVector,
};
use crate::observation::ObservationSeries;
use crate::pfilter::{particle_filter, ObsPathDraw, ResampleScheme, SeirSsm};
use crate::rng::{child_seed, stream};
use crate::util::quantile;

/// Where a proposal covariance came from; recorded in run metadata so a
/// fallback is visible in the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovProvenance {
    Identity,
    EkMode,
    EkMcmc,
    RunningEstimate,
}

/// Seed covariance for the proposal, with provenance.
#[derive(Debug, Clone)]
pub struct ProposalCovariance {
    pub matrix: DMatrix<f64>,
    pub provenance: CovProvenance,
}

impl ProposalCovariance {
    pub fn identity(dim: usize) -> ProposalCovariance {
        ProposalCovariance {
            matrix: DMatrix::identity(dim, dim),
            provenance: CovProvenance::Identity,
        }
    }
}

/// Symmetrise and floor the eigenvalues at 1e-10 times the largest so the
/// matrix admits a Cholesky factor.
pub fn psd_repair(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let floor = if max_ev > 0.0 { 1e-10 * max_ev } else { 1e-10 };
    let vals: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(floor)).collect();
    let q = eig.eigenvectors;
    &q * DMatrix::from_diagonal(&DVector::from_vec(vals)) * q.transpose()
}

/// Bounds on the adapted log proposal scale.
const LOG_EPS_MIN: f64 = -13.8; // eps ~ 1e-6
const LOG_EPS_MAX: f64 = 6.9; // eps ~ 1e3

/// One step of the log-scale adaptation
/// eps_{i+1} = exp(log eps_i + alpha1^i (acc - target)), i counted from 1.
pub fn adapt_scale(log_eps: f64, acc_prob: f64, iter: usize, alpha1: f64, target: f64) -> f64 {
    log_eps + alpha1.powi(iter as i32) * (acc_prob - target)
}

/// Streaming mean and covariance of the chain history.
#[derive(Debug, Clone)]
pub struct RunningCov {
    pub n: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl RunningCov {
    pub fn new(dim: usize) -> RunningCov {
        RunningCov { n: 0, mean: DVector::zeros(dim), m2: DMatrix::zeros(dim, dim) }
    }

    pub fn push(&mut self, x: &[f64]) {
        let xv = DVector::from_row_slice(x);
        self.n += 1;
        let d = &xv - &self.mean;
        self.mean += &d / self.n as f64;
        let d2 = &xv - &self.mean;
        self.m2 += d * d2.transpose();
    }

    pub fn cov(&self) -> DMatrix<f64> {
        if self.n < 2 {
            return DMatrix::identity(self.mean.len(), self.mean.len());
        }
        &self.m2 / (self.n - 1) as f64
    }

    pub fn mean(&self) -> DVector<f64> {
        self.mean.clone()
    }
}

/// Draw theta* ~ N(theta, eps (2.38^2/d) Sigma).
pub fn propose<R: Rng>(
    v: &UnconstrainedVector,
    eps: f64,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> UnconstrainedVector {
    let d = v.dim();
    let scale = eps * 2.38 * 2.38 / d as f64;
    let scaled = cov * scale;
    let chol = scaled
        .clone()
        .cholesky()
        .or_else(|| psd_repair(&scaled).cholesky())
        .unwrap_or_else(|| {
            // repair can still fail on non-finite input; keep the chain
            // alive with whatever finite per-coordinate scales survive
            let diag = DVector::from_iterator(
                d,
                (0..d).map(|i| {
                    let v = scaled[(i, i)];
                    if v.is_finite() && v > 0.0 { v } else { scale }
                }),
            );
            DMatrix::from_diagonal(&diag)
                .cholesky()
                .expect("diagonal fallback is PD")
        });
    let z = DVector::from_iterator(
        d,
        (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)),
    );
    let step = chol.l() * z;
    UnconstrainedVector(v.0.iter().zip(step.iter()).map(|(a, b)| a + b).collect())
}

/// A (possibly stochastic) estimate of the marginal likelihood at theta,
/// optionally with a smoothing-path draw from the same run.
pub struct Estimate {
    pub loglik: f64,
    pub path: Option<ObsPathDraw>,
}

/// Marginal-likelihood estimator the sampler targets. Implementations:
/// the bootstrap particle filter (pseudo-marginal) and the EKF
/// approximation (deterministic).
pub trait Target {
    fn estimate(&self, v: &UnconstrainedVector, seed: u64) -> Result<Estimate>;
}

/// Particle-filter likelihood estimator over the SEIR model.
pub struct PfTarget<'a> {
    pub spec: &'a PriorSpec,
    pub driver: DriverKind,
    pub grid: &'a TimeGrid,
    pub data: &'a ObservationSeries,
    pub n_particles: usize,
    pub resample: ResampleScheme,
}

impl<'a> Target for PfTarget<'a> {
    fn estimate(&self, v: &UnconstrainedVector, seed: u64) -> Result<Estimate> {
        let p = from_unconstrained(v, self.spec)?;
        if p.validate().is_err() {
            return Ok(Estimate { loglik: f64::NEG_INFINITY, path: None });
        }
        let ssm = SeirSsm::new(&p, self.driver, self.grid, self.data)?;
        let r = particle_filter(&ssm, self.n_particles, seed, self.resample, None)?;
        if r.degenerate {
            return Ok(Estimate { loglik: f64::NEG_INFINITY, path: None });
        }
        let path = ssm.obs_path_draw(&r, child_seed(seed, &[0x70617468]))?;
        Ok(Estimate { loglik: r.loglik, path: Some(path) })
    }
}

/// Sampler configuration; defaults follow the adaptive random-walk scheme
/// with target acceptance 0.234.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PmmhConfig {
    pub n_iter: usize,
    pub burnin: usize,
    /// Store the current smoothing-path draw every this many iterations
    /// (0 disables path storage).
    pub path_thin: usize,
    pub eps0: f64,
    /// Decay of the scale-adaptation step size (alpha1^i).
    pub alpha1: f64,
    /// Mixture weight on the fixed seed covariance.
    pub alpha2: f64,
    pub target_acc: f64,
    pub adapt_scale: bool,
    pub adapt_cov: bool,
    pub seed: u64,
}

impl PmmhConfig {
    pub fn new(n_iter: usize, seed: u64) -> PmmhConfig {
        PmmhConfig {
            n_iter,
            burnin: n_iter / 5,
            path_thin: 10,
            eps0: 1.0,
            alpha1: 0.999,
            alpha2: 0.05,
            target_acc: 0.234,
            adapt_scale: true,
            adapt_cov: true,
            seed,
        }
    }
}

/// Full chain record.
pub struct ChainOutput {
    pub names: Vec<String>,
    /// Unconstrained draws, one row per iteration (including burn-in).
    pub draws: Vec<Vec<f64>>,
    pub logliks: Vec<f64>,
    pub log_priors: Vec<f64>,
    pub accepted: Vec<bool>,
    pub acc_probs: Vec<f64>,
    pub eps_trace: Vec<f64>,
    /// (iteration, path) pairs at the thinning stride.
    pub paths: Vec<(usize, ObsPathDraw)>,
    pub burnin: usize,
    pub cov_provenance: CovProvenance,
}

impl ChainOutput {
    pub fn acc_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|a| **a).count() as f64 / self.accepted.len() as f64
    }

    /// Post-burn-in acceptance rate.
    pub fn acc_rate_post(&self) -> f64 {
        let tail = &self.accepted[self.burnin.min(self.accepted.len())..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().filter(|a| **a).count() as f64 / tail.len() as f64
    }

    /// Post-burn-in draws of one coordinate on the constrained scale.
    pub fn coordinate_constrained(&self, spec: &PriorSpec, idx: usize) -> Result<Vec<f64>> {
        self.draws[self.burnin.min(self.draws.len())..]
            .iter()
            .map(|row| {
                constrained_coordinates(&UnconstrainedVector(row.clone()), spec).map(|c| c[idx])
            })
            .collect()
    }

    /// Post-burn-in draws of one coordinate on the unconstrained scale.
    pub fn coordinate_unconstrained(&self, idx: usize) -> Vec<f64> {
        self.draws[self.burnin.min(self.draws.len())..]
            .iter()
            .map(|row| row[idx])
            .collect()
    }

    /// Posterior mean on the unconstrained scale (post burn-in).
    pub fn posterior_mean_unconstrained(&self) -> UnconstrainedVector {
        let rows = &self.draws[self.burnin.min(self.draws.len())..];
        let d = rows.first().map_or(0, |r| r.len());
        let mut m = vec![0.0; d];
        for r in rows {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b / rows.len() as f64;
            }
        }
        UnconstrainedVector(m)
    }
}

/// Adaptive PMMH (random-walk Metropolis on the unconstrained scale with a
/// pseudo-marginal likelihood): mixture proposal
/// alpha2 N(theta, eps c_d Sigma0) + (1-alpha2) N(theta, eps c_d Sigma_i)
/// with c_d = 2.38^2/d, log-scale adaptation of eps towards acceptance
/// 0.234, and the running chain covariance as Sigma_i once 10 d iterations
/// have accumulated.
pub fn run_pmmh<T: Target>(
    target: &T,
    spec: &PriorSpec,
    init: &ParamSet,
    cov0: &ProposalCovariance,
    cfg: &PmmhConfig,
) -> Result<ChainOutput> {
    spec.validate()?;
    let d = spec.dim();
    if d == 0 {
        return Err(Error::Config("no free parameters to sample".into()));
    }
    if cov0.matrix.nrows() != d || cov0.matrix.ncols() != d {
        return Err(Error::Config(format!(
            "seed covariance is {}x{}, expected {d}x{d}",
            cov0.matrix.nrows(),
            cov0.matrix.ncols()
        )));
    }
    let mut v = to_unconstrained(init, spec)?;
    let mut lp = log_prior(&v, spec)?;
    let mut est = target.estimate(&v, child_seed(cfg.seed, &[0xe571, 0]))?;
    if !est.loglik.is_finite() {
        return Err(Error::Degenerate(
            "the likelihood estimate at the initial parameters is degenerate; \
             start the chain from parameters with positive likelihood (e.g. an \
             EKF mode) or increase the particle count"
                .into(),
        ));
    }
    let mut log_eps = cfg.eps0.ln();
    let mut running = RunningCov::new(d);
    running.push(v.as_slice());
    let mut rng = stream(cfg.seed, &[0x636861696e]); // "chain"
    let mut out = ChainOutput {
        names: spec.coordinate_names(),
        draws: Vec::with_capacity(cfg.n_iter),
        logliks: Vec::with_capacity(cfg.n_iter),
        log_priors: Vec::with_capacity(cfg.n_iter),
        accepted: Vec::with_capacity(cfg.n_iter),
        acc_probs: Vec::with_capacity(cfg.n_iter),
        eps_trace: Vec::with_capacity(cfg.n_iter),
        paths: Vec::new(),
        burnin: cfg.burnin,
        cov_provenance: cov0.provenance,
    };
    for i in 1..=cfg.n_iter {
        let use_running = cfg.adapt_cov && running.n >= 10 * d;
        let pick_seed = !use_running || rng.gen::<f64>() < cfg.alpha2;
        let cov = if pick_seed { cov0.matrix.clone() } else { running.cov() };
        let vstar = propose(&v, log_eps.exp(), &cov, &mut rng);
        let lpstar = log_prior(&vstar, spec)?;
        let eststar = target.estimate(&vstar, child_seed(cfg.seed, &[0xe571, i as u64]))?;
        let log_ratio = (eststar.loglik + lpstar) - (est.loglik + lp);
        // a zero-density proposal is always rejected, even from a
        // zero-density state (the raw ratio is NaN there and f64::min
        // would silently turn it into an acceptance)
        let acc_prob = if (eststar.loglik + lpstar) == f64::NEG_INFINITY {
            0.0
        } else {
            log_ratio.min(0.0).exp()
        };
        let accept = rng.gen::<f64>() < acc_prob;
        if accept {
            v = vstar;
            lp = lpstar;
            est = eststar;
        }
        if cfg.adapt_scale {
            // clamp: with a noisy likelihood estimate the target rate can
            // be unreachable and the raw recursion drives eps to zero
            log_eps = adapt_scale(log_eps, acc_prob, i, cfg.alpha1, cfg.target_acc)
                .clamp(LOG_EPS_MIN, LOG_EPS_MAX);
        }
        running.push(v.as_slice());
        out.draws.push(v.0.clone());
        out.logliks.push(est.loglik);
        out.log_priors.push(lp);
        out.accepted.push(accept);
        out.acc_probs.push(acc_prob);
        out.eps_trace.push(log_eps.exp());
        if cfg.path_thin > 0 && i % cfg.path_thin == 0 {
            if let Some(p) = &est.path {
                out.paths.push((i, p.clone()));
            }
        }
    }
    Ok(out)
}

/// Effective sample size by Geyer's initial positive sequence: sum paired
/// autocorrelations Gamma_m = rho_{2m} + rho_{2m+1} while positive. A
/// zero-variance input returns 0 (the chain carries no information).
pub fn ess(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mu = crate::util::mean(x);
    let autocov = |lag: usize| -> f64 {
        let mut s = 0.0;
        for t in 0..n - lag {
            s += (x[t] - mu) * (x[t + lag] - mu);
        }
        s / n as f64
    };
    let g0 = autocov(0);
    // rounding makes a constant chain's variance tiny but nonzero
    if !(g0 > f64::EPSILON * (1.0 + mu * mu)) {
        return 0.0;
    }
    let mut tau = -1.0;
    let mut m = 0usize;
    while 2 * m + 1 < n {
        let gamma = (autocov(2 * m) + autocov(2 * m + 1)) / g0;
        if gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        m += 1;
    }
    if !(tau > 0.0) {
        return n as f64;
    }
    n as f64 / tau
}

/// ESS per iteration, in [0, 1] for positively correlated chains.
pub fn efficiency(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    ess(x) / x.len() as f64
}

/// Deviance information criterion from posterior deviance draws and the
/// deviance at the posterior mean: p_D = mean(D) - D(theta_bar),
/// DIC = mean(D) + p_D.
pub fn dic(deviances: &[f64], deviance_at_mean: f64) -> Result<(f64, f64)> {
    if deviances.is_empty() {
        return Err(Error::invalid("deviances", "need at least one draw"));
    }
    let dbar = crate::util::mean(deviances);
    let p_d = dbar - deviance_at_mean;
    Ok((dbar + p_d, p_d))
}

/// Iterated-filtering configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MifConfig {
    pub n_particles: usize,
    pub n_passes: usize,
    /// Geometric cooling factor per pass.
    pub cooling: f64,
    /// Initial parameter-perturbation sd on the unconstrained scale.
    pub perturb_sd: f64,
    pub seed: u64,
}

impl MifConfig {
    pub fn new(seed: u64) -> MifConfig {
        MifConfig { n_particles: 200, n_passes: 20, cooling: 0.95, perturb_sd: 0.02, seed }
    }
}

/// Iterated filtering for a maximum-likelihood parameter estimate: the
/// free parameters ride along with the particles under a random walk whose
/// sd cools geometrically across passes; each pass ends with the
/// weighted-particle parameter mean.
///
/// Returns the estimate and the per-pass trace of the unconstrained mean.
pub fn mif_estimate(
    spec: &PriorSpec,
    driver: DriverKind,
    grid: &TimeGrid,
    data: &ObservationSeries,
    init: &ParamSet,
    cfg: &MifConfig,
) -> Result<(ParamSet, Vec<Vec<f64>>)> {
    use crate::pfilter::{resample, Ssm};
    spec.validate()?;
    let d = spec.dim();
    if d == 0 {
        return Err(Error::Config("no free parameters to estimate".into()));
    }
    let mut center = to_unconstrained(init, spec)?;
    let mut trace = Vec::with_capacity(cfg.n_passes);
    let n = cfg.n_particles;
    let n_obs = grid.n_obs();
    for pass in 0..cfg.n_passes {
        let sd = cfg.perturb_sd * cfg.cooling.powi(pass as i32);
        let step_sd = sd / (n_obs as f64).sqrt();
        let mut rng = stream(cfg.seed, &[0x6d6966, pass as u64]); // "mif"
        // parameter swarm around the current centre
        let mut vs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                center
                    .0
                    .iter()
                    .map(|&c| c + sd * rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect()
            })
            .collect();
        let mut params: Vec<ParamSet> = Vec::with_capacity(n);
        for v in &vs {
            params.push(from_unconstrained(&UnconstrainedVector(v.clone()), spec)?);
        }
        let mut states: Vec<crate::pfilter::SeirParticle> = params
            .iter()
            .map(|p| {
                let ssm = SeirSsm { params: p, driver, grid, data };
                ssm.init(&mut rng)
            })
            .collect();
        let mut logw = vec![0.0f64; n];
        for i in 0..n_obs {
            for j in 0..n {
                for (c, vj) in vs[j].iter_mut().enumerate() {
                    let _ = c;
                    *vj += step_sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
                params[j] = from_unconstrained(&UnconstrainedVector(vs[j].clone()), spec)?;
                let ssm = SeirSsm { params: &params[j], driver, grid, data };
                let mut prng = stream(cfg.seed, &[0x6d6970, pass as u64, i as u64, j as u64]);
                logw[j] = if ssm.propagate(&mut states[j], i, &mut prng) {
                    ssm.log_weight(&states[j], i)
                } else {
                    f64::NEG_INFINITY
                };
            }
            let lse = crate::util::logsumexp(&logw);
            if !lse.is_finite() {
                return Err(Error::Degenerate(format!(
                    "iterated filtering degenerated in pass {pass} at observation {}",
                    i + 1
                )));
            }
            let w: Vec<f64> = logw.iter().map(|lw| (lw - lse).exp()).collect();
            let anc = resample(&w, n, ResampleScheme::Systematic, &mut rng)?;
            states = anc.iter().map(|&a| states[a].clone()).collect();
            vs = anc.iter().map(|&a| vs[a].clone()).collect();
            params = anc.iter().map(|&a| params[a].clone()).collect();
        }
        let mut m = vec![0.0; d];
        for v in &vs {
            for (a, b) in m.iter_mut().zip(v) {
                *a += b / n as f64;
            }
        }
        center = UnconstrainedVector(m.clone());
        trace.push(m);
    }
    Ok((from_unconstrained(&center, spec)?, trace))
}

/// Posterior quantiles of log beta_{t_end} - log beta_{t_end - lag} (lag in
/// observation intervals) from stored smoothing-path draws: negative mass
/// indicates a declining contact rate in real time.
pub fn beta_difference_quantiles(
    paths: &[(usize, ObsPathDraw)],
    lag: usize,
    group: usize,
    probs: &[f64],
) -> Result<Vec<f64>> {
    if paths.is_empty() {
        return Err(Error::invalid("paths", "no stored smoothing paths"));
    }
    let mut diffs = Vec::with_capacity(paths.len());
    for (_, p) in paths {
        let n = p.beta.len();
        if lag >= n {
            return Err(Error::invalid("lag", "exceeds the number of observation times"));
        }
        diffs.push(p.beta[n - 1][group].ln() - p.beta[n - 1 - lag][group].ln());
    }
    Ok(probs.iter().map(|&q| quantile(&diffs, q)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParamField, Prior};
    use crate::util::{mean, variance};
    use approx::assert_relative_eq;

    #[test]
    fn adapt_scale_recursion_value() {
        // eps = 1, acc = 0.334, i = 1: log eps' = 0.999^1 * 0.1 = 0.0999
        let le = adapt_scale(0.0, 0.334, 1, 0.999, 0.234);
        assert_relative_eq!(le, 0.0999, max_relative = 1e-12);
        assert_relative_eq!(le.exp(), 0.0999f64.exp(), max_relative = 1e-12);
    }

    #[test]
    fn adapt_scale_fixed_point_at_target() {
        let mut le = 0.7f64;
        for i in 1..100 {
            let new = adapt_scale(le, 0.234, i, 0.999, 0.234);
            assert_eq!(new, le);
            le = new;
        }
    }

    #[test]
    fn adapt_scale_moves_towards_target() {
        // always-rejecting chain shrinks eps; always-accepting grows it
        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        for i in 1..50 {
            lo = adapt_scale(lo, 0.0, i, 0.999, 0.234);
            hi = adapt_scale(hi, 1.0, i, 0.999, 0.234);
        }
        assert!(lo < 0.0 && hi > 0.0);
    }

    #[test]
    fn running_cov_matches_direct() {
        let mut rng = stream(1, &[10]);
        let data: Vec<[f64; 2]> = (0..500)
            .map(|_| {
                let a: f64 = rng.sample(rand_distr::StandardNormal);
                let b: f64 = rng.sample(rand_distr::StandardNormal);
                [a, 0.5 * a + b]
            })
            .collect();
        let mut rc = RunningCov::new(2);
        for x in &data {
            rc.push(x);
        }
        let cov = rc.cov();
        // direct two-pass covariance
        let m0 = mean(&data.iter().map(|x| x[0]).collect::<Vec<_>>());
        let m1 = mean(&data.iter().map(|x| x[1]).collect::<Vec<_>>());
        let mut direct = [[0.0f64; 2]; 2];
        for x in &data {
            let d = [x[0] - m0, x[1] - m1];
            for i in 0..2 {
                for j in 0..2 {
                    direct[i][j] += d[i] * d[j] / (data.len() - 1) as f64;
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(cov[(i, j)], direct[i][j], max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn propose_matches_target_covariance() {
        // d = 2, eps = 1: empirical covariance of steps ~ (2.38^2/2) Sigma
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.8]);
        let v = UnconstrainedVector(vec![0.0, 0.0]);
        let mut rng = stream(2, &[11]);
        let n = 60_000;
        let mut acc = [[0.0f64; 2]; 2];
        for _ in 0..n {
            let p = propose(&v, 1.0, &sigma, &mut rng);
            for i in 0..2 {
                for j in 0..2 {
                    acc[i][j] += p.0[i] * p.0[j] / n as f64;
                }
            }
        }
        let c = 2.38 * 2.38 / 2.0;
        let mut frob_err = 0.0;
        let mut frob = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let target = c * sigma[(i, j)];
                frob_err += (acc[i][j] - target) * (acc[i][j] - target);
                frob += target * target;
            }
        }
        assert!(
            (frob_err / frob).sqrt() < 0.05,
            "relative Frobenius error {}",
            (frob_err / frob).sqrt()
        );
    }

    #[test]
    fn propose_1d_sd() {
        let sigma = DMatrix::from_element(1, 1, 1.0);
        let v = UnconstrainedVector(vec![0.0]);
        let mut rng = stream(3, &[12]);
        let xs: Vec<f64> = (0..40_000).map(|_| propose(&v, 1.0, &sigma, &mut rng).0[0]).collect();
        let sd = variance(&xs).sqrt();
        assert!((sd - 2.38).abs() < 0.05, "sd {sd}");
    }

    #[test]
    fn psd_repair_fixes_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]); // eigenvalues 3, -1
        let r = psd_repair(&m);
        assert!(r.clone().cholesky().is_some());
        // the positive eigenvector direction is preserved
        assert_relative_eq!(r[(0, 1)], r[(1, 0)], max_relative = 1e-12);
    }

    fn one_param_spec() -> (PriorSpec, ParamSet) {
        let mut sp = PriorSpec::all_point_mass(&ParamSet::seir_template());
        sp.set(ParamField::Sigma, Prior::VaguePositive { sd: 1.0e3 });
        (sp, ParamSet::seir_template())
    }

    struct GaussTarget {
        sd: f64,
    }

    impl Target for GaussTarget {
        fn estimate(&self, v: &UnconstrainedVector, _seed: u64) -> Result<Estimate> {
            let ll = -0.5 * v.0.iter().map(|x| x * x / (self.sd * self.sd)).sum::<f64>();
            Ok(Estimate { loglik: ll, path: None })
        }
    }

    #[test]
    fn pmmh_recovers_gaussian_posterior() {
        // likelihood N(u; 0, 0.25) times the (nearly flat) half-normal prior
        // with Jacobian e^u gives posterior u ~ N(0.25, 0.25)
        let (sp, init) = one_param_spec();
        let mut cfg = PmmhConfig::new(20_000, 5);
        cfg.burnin = 4000;
        cfg.path_thin = 0;
        let out = run_pmmh(
            &GaussTarget { sd: 0.5 },
            &sp,
            &init,
            &ProposalCovariance::identity(1),
            &cfg,
        )
        .unwrap();
        let us = out.coordinate_unconstrained(0);
        let m = mean(&us);
        let v = variance(&us);
        let n_eff = ess(&us).max(10.0);
        let se = (0.25 / n_eff).sqrt();
        assert!((m - 0.25).abs() < 4.0 * se + 0.02, "mean {m} (ess {n_eff})");
        assert!((v - 0.25).abs() < 0.05, "var {v}");
    }

    #[test]
    fn pmmh_acceptance_settles_near_target() {
        let (sp, init) = one_param_spec();
        let mut cfg = PmmhConfig::new(20_000, 6);
        cfg.burnin = 5000;
        cfg.path_thin = 0;
        let out = run_pmmh(
            &GaussTarget { sd: 0.5 },
            &sp,
            &init,
            &ProposalCovariance::identity(1),
            &cfg,
        )
        .unwrap();
        let rate = out.acc_rate_post();
        assert!((rate - 0.234).abs() < 0.05, "acceptance {rate}");
        // adapted eps stabilises (no runaway)
        let eps_end = *out.eps_trace.last().unwrap();
        assert!(eps_end > 1e-3 && eps_end < 1e3, "eps {eps_end}");
    }

    #[test]
    fn pmmh_is_reproducible() {
        let (sp, init) = one_param_spec();
        let mut cfg = PmmhConfig::new(500, 7);
        cfg.path_thin = 0;
        let c0 = ProposalCovariance::identity(1);
        let a = run_pmmh(&GaussTarget { sd: 0.5 }, &sp, &init, &c0, &cfg).unwrap();
        let b = run_pmmh(&GaussTarget { sd: 0.5 }, &sp, &init, &c0, &cfg).unwrap();
        assert_eq!(a.draws, b.draws);
        assert_eq!(a.eps_trace, b.eps_trace);
    }

    struct DegenerateTarget;

    impl Target for DegenerateTarget {
        fn estimate(&self, _v: &UnconstrainedVector, _seed: u64) -> Result<Estimate> {
            Ok(Estimate { loglik: f64::NEG_INFINITY, path: None })
        }
    }

    #[test]
    fn degenerate_start_aborts_with_guidance() {
        let (sp, init) = one_param_spec();
        let cfg = PmmhConfig::new(10, 1);
        match run_pmmh(&DegenerateTarget, &sp, &init, &ProposalCovariance::identity(1), &cfg) {
            Err(Error::Degenerate(msg)) => assert!(msg.contains("initial parameters")),
            other => panic!("expected degenerate error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn ess_iid_near_n() {
        let mut rng = stream(4, &[13]);
        let x: Vec<f64> =
            (0..20_000).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let e = ess(&x) / x.len() as f64;
        assert!((0.9..=1.1).contains(&e), "iid efficiency {e}");
    }

    #[test]
    fn ess_ar1_matches_oracle() {
        // AR(1) with coefficient rho has ESS/n = (1-rho)/(1+rho)
        for rho in [0.3f64, 0.6, 0.9] {
            let mut rng = stream(5, &[14, (rho * 10.0) as u64]);
            let n = 200_000;
            let mut x = Vec::with_capacity(n);
            let mut cur = 0.0f64;
            for _ in 0..n {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                cur = rho * cur + (1.0 - rho * rho).sqrt() * z;
                x.push(cur);
            }
            let eff = ess(&x) / n as f64;
            let oracle = (1.0 - rho) / (1.0 + rho);
            assert!(
                (eff - oracle).abs() < 0.1 * oracle,
                "rho {rho}: efficiency {eff} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn ess_zero_variance_is_zero() {
        let x = vec![3.7; 1000];
        assert_eq!(ess(&x), 0.0);
        assert_eq!(efficiency(&x), 0.0);
    }

    #[test]
    fn dic_conjugate_normal_oracle() {
        // y_i ~ N(theta, s^2), prior theta ~ N(0, t^2): posterior
        // N(mu_n, s_n^2) with p_D = n s_n^2 / s^2 exactly in expectation
        let (s, t) = (1.0f64, 10.0f64);
        let n_data = 25usize;
        let mut rng = stream(6, &[15]);
        let theta_true = 1.3;
        let y: Vec<f64> = (0..n_data)
            .map(|_| theta_true + s * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let prec = n_data as f64 / (s * s) + 1.0 / (t * t);
        let mu_n = (y.iter().sum::<f64>() / (s * s)) / prec;
        let var_n = 1.0 / prec;
        let dev = |th: f64| -2.0 * y.iter().map(|yi| crate::util::normal_logpdf(*yi, th, s)).sum::<f64>();
        let m = 200_000;
        let devs: Vec<f64> = (0..m)
            .map(|_| {
                let th = mu_n + var_n.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
                dev(th)
            })
            .collect();
        let (dic_val, p_d) = dic(&devs, dev(mu_n)).unwrap();
        let p_d_oracle = n_data as f64 * var_n / (s * s);
        assert!((p_d - p_d_oracle).abs() < 0.05, "p_D {p_d} vs {p_d_oracle}");
        assert_relative_eq!(dic_val, mean(&devs) + p_d, max_relative = 1e-12);
    }

    fn beta0_only_spec(truth: &ParamSet) -> PriorSpec {
        let mut sp = PriorSpec::all_point_mass(truth);
        sp.set(ParamField::Beta0, Prior::VaguePositive { sd: 1.0e3 });
        sp
    }

    #[test]
    fn mif_zero_perturbation_is_fixed_point() {
        let truth = ParamSet::seir_template();
        let grid = TimeGrid::weekly(8, 13);
        let path = crate::dynamics::simulate_driver(DriverKind::Bm, &truth, &grid, 21).unwrap();
        let traj = crate::dynamics::propagate_ode(&truth, &[path]).unwrap();
        let data = crate::observation::simulate_observations(&traj, 0.1, 1.0, 22).unwrap();
        let sp = beta0_only_spec(&truth);
        let mut cfg = MifConfig::new(9);
        cfg.n_particles = 50;
        cfg.n_passes = 3;
        cfg.perturb_sd = 0.0;
        let mut init = truth.clone();
        init.beta0 = 1.1;
        let (est, trace) = mif_estimate(&sp, DriverKind::Bm, &grid, &data, &init, &cfg).unwrap();
        assert_relative_eq!(est.beta0, 1.1, max_relative = 1e-12);
        for row in trace {
            assert_relative_eq!(row[0], 1.1f64.ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn mif_recovers_one_param_mle() {
        // deterministic driver (sigma = 0), tiny observation noise: the
        // likelihood peaks at the true beta0
        let mut truth = ParamSet::seir_template();
        truth.sigma = 0.0;
        truth.obs_sd = 0.05;
        let grid = TimeGrid::weekly(16, 13);
        let path = crate::dynamics::simulate_driver(DriverKind::Bm, &truth, &grid, 31).unwrap();
        let traj = crate::dynamics::propagate_ode(&truth, &[path]).unwrap();
        let data = crate::observation::simulate_observations(&traj, truth.obs_sd, 1.0, 32).unwrap();
        let sp = beta0_only_spec(&truth);
        let mut cfg = MifConfig::new(10);
        cfg.n_particles = 100;
        cfg.n_passes = 25;
        cfg.perturb_sd = 0.05;
        let mut init = truth.clone();
        init.beta0 = 1.6; // ~19% off
        let (est, _) = mif_estimate(&sp, DriverKind::Bm, &grid, &data, &init, &cfg).unwrap();
        assert!(
            (est.beta0 - truth.beta0).abs() / truth.beta0 < 0.05,
            "beta0 estimate {} vs truth {}",
            est.beta0,
            truth.beta0
        );
    }

    #[test]
    fn beta_difference_quantiles_hand_case() {
        let mk = |b_last: f64, b_prev: f64| ObsPathDraw {
            times: vec![7.0, 14.0],
            beta: vec![vec![b_prev], vec![b_last]],
            susceptible: vec![vec![1.0], vec![1.0]],
            incidence: vec![vec![1.0], vec![1.0]],
        };
        let paths: Vec<(usize, ObsPathDraw)> =
            (0..5).map(|i| (i, mk(1.0 + i as f64, 2.0))).collect();
        let q = beta_difference_quantiles(&paths, 1, 0, &[0.5]).unwrap();
        // diffs are ln((1..=5)/2); median is ln(3/2)
        assert_relative_eq!(q[0], (3.0f64 / 2.0).ln(), max_relative = 1e-12);
        assert!(beta_difference_quantiles(&paths, 5, 0, &[0.5]).is_err());
    }
}
