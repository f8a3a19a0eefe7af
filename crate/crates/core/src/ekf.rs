//! Extended Kalman filtering of the diffusion-driven SEIR model with
//! numerically linearised dynamics, and the two EKF-informed ways of
//! seeding the sampler's proposal covariance: the curvature at the EKF
//! posterior mode (EK-Mode) and the sample covariance of a cheap EKF-based
//! chain (EK-MCMC).

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{DriverKind, TimeGrid};
use crate::error::{Error, Result};
use crate::mcmc::{
    psd_repair, run_pmmh, ChainOutput, CovProvenance, Estimate, PmmhConfig, ProposalCovariance,
    Target,
};
use crate::model::{
    from_unconstrained, log_prior, to_unconstrained, ModelKind, ParamSet, PriorSpec,
    UnconstrainedVector,
};
use crate::observation::ObservationSeries;
use crate::util::{nelder_mead, normal_logpdf};

/// Relative step for the central-difference Jacobians.
const JAC_STEP: f64 = 1e-6;

/// A model the EKF can run: a chain of deterministic substep mean maps
/// with additive Gaussian noise, and one scalar observation per interval.
pub trait GaussStep {
    fn dim(&self) -> usize;
    fn n_obs(&self) -> usize;
    fn init_mean(&self) -> DVector<f64>;
    fn init_cov(&self) -> DMatrix<f64>;
    /// Number of substeps composing observation interval `i`.
    fn substeps(&self, i: usize) -> usize;
    /// Deterministic mean map of substep `k` in interval `i`.
    fn step_mean(&self, i: usize, k: usize, x: &DVector<f64>) -> DVector<f64>;
    /// Additive process-noise covariance of that substep.
    fn step_noise(&self, i: usize, k: usize) -> DMatrix<f64>;
    /// Observation mean h(x) for interval `i`; Err for invalid states.
    fn obs_mean(&self, i: usize, x: &DVector<f64>) -> Result<f64>;
    fn obs_value(&self, i: usize) -> f64;
    fn obs_var(&self) -> f64;
    /// Applied after each observation update (e.g. incidence reset).
    fn post_update(&self, _mean: &mut DVector<f64>, _cov: &mut DMatrix<f64>) {}
}

/// Belief state and marginal likelihood from an EKF pass.
pub struct EkfResult {
    pub loglik: f64,
    /// Posterior mean after each observation update (before any reset).
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

/// Symmetrise and clamp negative eigenvalues to zero. Unlike
/// `psd_repair` this leaves an exactly-zero covariance untouched, which
/// matters for noise-free models.
fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return sym;
    }
    let vals: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    let q = eig.eigenvectors;
    &q * DMatrix::from_diagonal(&DVector::from_vec(vals)) * q.transpose()
}

fn jacobian<M: GaussStep>(m: &M, i: usize, k: usize, x: &DVector<f64>) -> DMatrix<f64> {
    let d = m.dim();
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let h = JAC_STEP * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let fp = m.step_mean(i, k, &xp);
        let fm = m.step_mean(i, k, &xm);
        for r in 0..d {
            jac[(r, j)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac
}

fn obs_jacobian<M: GaussStep>(m: &M, i: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
    let d = m.dim();
    let mut grad = DVector::zeros(d);
    for j in 0..d {
        let h = JAC_STEP * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        grad[j] = (m.obs_mean(i, &xp)? - m.obs_mean(i, &xm)?) / (2.0 * h);
    }
    Ok(grad)
}

/// Run the extended Kalman filter: linearised prediction through every
/// substep, scalar observation update per interval, covariance kept
/// positive semi-definite by symmetrisation with eigenvalue flooring.
pub fn ekf_filter<M: GaussStep>(m: &M) -> Result<EkfResult> {
    let mut mean = m.init_mean();
    let mut cov = m.init_cov();
    let mut out = EkfResult {
        loglik: 0.0,
        means: Vec::with_capacity(m.n_obs()),
        covs: Vec::with_capacity(m.n_obs()),
    };
    for i in 0..m.n_obs() {
        for k in 0..m.substeps(i) {
            let a = jacobian(m, i, k, &mean);
            mean = m.step_mean(i, k, &mean);
            cov = &a * &cov * a.transpose() + m.step_noise(i, k);
            if mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "EKF mean diverged in interval {}",
                    i + 1
                )));
            }
        }
        let hx = m.obs_mean(i, &mean)?;
        let hgrad = obs_jacobian(m, i, &mean)?;
        let s = (hgrad.transpose() * &cov * &hgrad)[(0, 0)] + m.obs_var();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Numerical(format!(
                "non-positive innovation variance {s} in interval {}",
                i + 1
            )));
        }
        out.loglik += normal_logpdf(m.obs_value(i), hx, s.sqrt());
        // iterated update: relinearise the (strongly nonlinear, log-scale)
        // observation at the running estimate, gating each innovation at 5
        // sds so a far-off prediction cannot blow the mean up
        let pred = mean.clone();
        let mut hgrad = hgrad;
        let mut post = pred.clone();
        let mut gain = &cov * &hgrad / s;
        for it in 0..8 {
            if it > 0 {
                hgrad = obs_jacobian(m, i, &post)?;
                let s_it = (hgrad.transpose() * &cov * &hgrad)[(0, 0)] + m.obs_var();
                if !(s_it > 0.0) || !s_it.is_finite() {
                    break;
                }
                gain = &cov * &hgrad / s_it;
            }
            let h_post = m.obs_mean(i, &post)?;
            let lin = (hgrad.transpose() * (&pred - &post))[(0, 0)];
            let s_cur = (hgrad.transpose() * &cov * &hgrad)[(0, 0)] + m.obs_var();
            let v = (m.obs_value(i) - h_post - lin)
                .clamp(-5.0 * s_cur.sqrt(), 5.0 * s_cur.sqrt());
            post = &pred + &gain * v;
            if post.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "EKF update diverged in interval {}",
                    i + 1
                )));
            }
        }
        mean = post;
        cov -= &gain * (hgrad.transpose() * &cov);
        cov = project_psd(&cov);
        out.means.push(mean.clone());
        out.covs.push(cov.clone());
        m.post_update(&mut mean, &mut cov);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// SEIR model as a GaussStep
// ---------------------------------------------------------------------------

/// Augmented EKF state for the single-group SEIR model:
/// [S, E, I, R, z, x] with x = log beta, plus a trailing slope coordinate
/// for the integrated-Brownian driver.
pub struct SeirEkf<'a> {
    pub params: &'a ParamSet,
    pub driver: DriverKind,
    pub grid: &'a TimeGrid,
    pub data: &'a ObservationSeries,
}

impl<'a> SeirEkf<'a> {
    pub fn new(
        params: &'a ParamSet,
        driver: DriverKind,
        grid: &'a TimeGrid,
        data: &'a ObservationSeries,
    ) -> Result<SeirEkf<'a>> {
        params.validate()?;
        data.validate()?;
        if params.kind() == ModelKind::Seir2Group {
            return Err(Error::Config(
                "the EKF supports the single-group model only; use the particle \
                 filter for the two-age-group model"
                    .into(),
            ));
        }
        if matches!(driver, DriverKind::Sigmoid { .. }) {
            return Err(Error::Config(
                "the EKF needs a stochastic driver (bm, ibm or ou)".into(),
            ));
        }
        if data.n_obs() != grid.n_obs() {
            return Err(Error::invalid("data", "observation count must match the grid"));
        }
        Ok(SeirEkf { params, driver, grid, data })
    }

    fn has_slope(&self) -> bool {
        matches!(self.driver, DriverKind::Ibm { .. })
    }
}

impl<'a> GaussStep for SeirEkf<'a> {
    fn dim(&self) -> usize {
        if self.has_slope() {
            7
        } else {
            6
        }
    }

    fn n_obs(&self) -> usize {
        self.grid.n_obs()
    }

    fn init_mean(&self) -> DVector<f64> {
        let st = crate::dynamics::initial_state(self.params)[0];
        let mut v = vec![st.s, st.e, st.i, st.r, 0.0, self.params.beta0.ln()];
        if let DriverKind::Ibm { slope0 } = self.driver {
            v.push(slope0);
        }
        DVector::from_vec(v)
    }

    fn init_cov(&self) -> DMatrix<f64> {
        // the initial state is a deterministic function of theta
        DMatrix::zeros(self.dim(), self.dim())
    }

    fn substeps(&self, _i: usize) -> usize {
        self.grid.substeps + 1
    }

    fn step_mean(&self, i: usize, _k: usize, x: &DVector<f64>) -> DVector<f64> {
        let delta = self.grid.delta(i);
        let p = self.params;
        let (s, e, inf, r, z, lx) = (x[0], x[1], x[2], x[3], x[4], x[5]);
        let beta = lx.exp();
        let new_inf = delta * beta * inf / p.population * s;
        let new_sympt = delta * p.latent_rate * e;
        let new_rec = delta * p.recovery_rate * inf;
        let mut out = x.clone();
        out[0] = s - new_inf;
        out[1] = e + new_inf - new_sympt;
        out[2] = inf + new_sympt - new_rec;
        out[3] = r + new_rec;
        out[4] = z + new_sympt;
        match self.driver {
            DriverKind::Bm => {}
            DriverKind::Ou { rate, mean_log } => out[5] = lx + delta * rate * (mean_log - lx),
            DriverKind::Ibm { .. } => out[5] = lx + delta * x[6],
            DriverKind::Sigmoid { .. } => unreachable!("rejected in new()"),
        }
        out
    }

    fn step_noise(&self, i: usize, _k: usize) -> DMatrix<f64> {
        let delta = self.grid.delta(i);
        let mut q = DMatrix::zeros(self.dim(), self.dim());
        let var = delta * self.params.sigma * self.params.sigma;
        if self.has_slope() {
            q[(6, 6)] = var;
        } else {
            q[(5, 5)] = var;
        }
        q
    }

    fn obs_mean(&self, i: usize, x: &DVector<f64>) -> Result<f64> {
        let z = x[4];
        if !z.is_finite() {
            return Err(Error::Numerical(format!(
                "EKF incidence mean is not finite in interval {}",
                i + 1
            )));
        }
        // floor the incidence so the log-linearised observation stays
        // defined when the filter mean undershoots; the resulting huge
        // innovation penalises the fit instead of aborting it
        Ok((self.params.reporting * z.max(1e-9)).ln())
    }

    fn obs_value(&self, i: usize) -> f64 {
        self.data.values[i][0].ln()
    }

    fn obs_var(&self) -> f64 {
        self.params.obs_sd * self.params.obs_sd
    }

    fn post_update(&self, mean: &mut DVector<f64>, cov: &mut DMatrix<f64>) {
        // the linear update ignores positivity; floor the compartment
        // means so the incidence integral stays strictly positive even
        // when an epidemic burns out
        mean[0] = mean[0].max(0.0);
        mean[3] = mean[3].max(0.0);
        mean[1] = mean[1].max(1e-6);
        mean[2] = mean[2].max(1e-6);
        // the incidence accumulator restarts at each observation time
        mean[4] = 0.0;
        for j in 0..self.dim() {
            cov[(4, j)] = 0.0;
            cov[(j, 4)] = 0.0;
        }
    }
}

/// EKF approximation to the marginal log-likelihood of the SEIR model.
pub fn ekf_loglik(
    params: &ParamSet,
    driver: DriverKind,
    grid: &TimeGrid,
    data: &ObservationSeries,
) -> Result<EkfResult> {
    ekf_filter(&SeirEkf::new(params, driver, grid, data)?)
}

/// The EKF likelihood as a deterministic sampler target (EK-MCMC and EKF
/// inference runs). Numerical failures map to a rejected proposal rather
/// than aborting the chain.
pub struct EkfTarget<'a> {
    pub spec: &'a PriorSpec,
    pub driver: DriverKind,
    pub grid: &'a TimeGrid,
    pub data: &'a ObservationSeries,
}

impl<'a> Target for EkfTarget<'a> {
    fn estimate(&self, v: &UnconstrainedVector, _seed: u64) -> Result<Estimate> {
        let p = match from_unconstrained(v, self.spec) {
            Ok(p) => p,
            Err(_) => return Ok(Estimate { loglik: f64::NEG_INFINITY, path: None }),
        };
        if p.validate().is_err() {
            return Ok(Estimate { loglik: f64::NEG_INFINITY, path: None });
        }
        match ekf_loglik(&p, self.driver, self.grid, self.data) {
            Ok(r) => Ok(Estimate { loglik: r.loglik, path: None }),
            Err(_) => Ok(Estimate { loglik: f64::NEG_INFINITY, path: None }),
        }
    }
}

/// EKF posterior mode and its curvature.
pub struct EkMode {
    pub mode: UnconstrainedVector,
    pub params: ParamSet,
    pub log_post: f64,
    pub cov: ProposalCovariance,
}

/// Central-difference Hessian of `f` at `x`.
fn fd_hessian<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> DMatrix<f64> {
    let d = x.len();
    let mut hess = DMatrix::zeros(d, d);
    let f0 = f(x);
    let mut shifted = |steps: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(j, s) in steps {
            y[j] += s;
        }
        f(&y)
    };
    for i in 0..d {
        let fpp = shifted(&[(i, h)]);
        let fmm = shifted(&[(i, -h)]);
        hess[(i, i)] = (fpp - 2.0 * f0 + fmm) / (h * h);
        for j in 0..i {
            let fpq = shifted(&[(i, h), (j, h)]);
            let fpm = shifted(&[(i, h), (j, -h)]);
            let fmp = shifted(&[(i, -h), (j, h)]);
            let fmq = shifted(&[(i, -h), (j, -h)]);
            let v = (fpq - fpm - fmp + fmq) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// EK-Mode: maximise the EKF log-posterior by Nelder-Mead and invert the
/// finite-difference Hessian at the mode for a proposal covariance. Falls
/// back to the identity (with `Identity` provenance) when the curvature is
/// unusable.
pub fn ek_mode(
    spec: &PriorSpec,
    driver: DriverKind,
    grid: &TimeGrid,
    data: &ObservationSeries,
    init: &ParamSet,
) -> Result<EkMode> {
    spec.validate()?;
    let d = spec.dim();
    let target = EkfTarget { spec, driver, grid, data };
    let mut neg_post = |x: &[f64]| -> f64 {
        let v = UnconstrainedVector(x.to_vec());
        let ll = target.estimate(&v, 0).map(|e| e.loglik).unwrap_or(f64::NEG_INFINITY);
        let lp = log_prior(&v, spec).unwrap_or(f64::NEG_INFINITY);
        -(ll + lp)
    };
    let v0 = to_unconstrained(init, spec)?;
    if !neg_post(v0.as_slice()).is_finite() {
        return Err(Error::Degenerate(
            "the EKF posterior is degenerate at the starting parameters".into(),
        ));
    }
    let (xmin, fmin) = nelder_mead(&mut neg_post, v0.as_slice(), 0.1, 400 * d, 1e-10);
    // wide steps average over the small positivity-floor kinks in the EKF
    // surface but can step outside the feasible region; try a few scales
    // and keep the first usable curvature, else fall back to the identity
    let mut cov = ProposalCovariance {
        matrix: DMatrix::identity(d, d),
        provenance: CovProvenance::Identity,
    };
    for h in [0.05, 0.01, 1e-3] {
        let hess = fd_hessian(&mut neg_post, &xmin, h);
        if hess.iter().any(|v| !v.is_finite()) {
            continue;
        }
        if let Some(inv) = psd_repair(&hess).cholesky().map(|c| c.inverse()) {
            let usable = inv.iter().all(|v| v.is_finite())
                && (0..d).all(|j| inv[(j, j)] > 1e-8 && inv[(j, j)] < 1e4);
            if usable {
                cov = ProposalCovariance {
                    matrix: psd_repair(&inv),
                    provenance: CovProvenance::EkMode,
                };
                break;
            }
        }
    }
    let mode = UnconstrainedVector(xmin);
    let params = from_unconstrained(&mode, spec)?;
    Ok(EkMode { mode, params, log_post: -fmin, cov })
}

/// Sample covariance of the post-burn-in chain draws.
pub fn chain_covariance(out: &ChainOutput) -> Result<DMatrix<f64>> {
    let rows = &out.draws[out.burnin.min(out.draws.len())..];
    if rows.len() < 2 {
        return Err(Error::invalid("chain", "need at least two post-burn-in draws"));
    }
    let d = rows[0].len();
    let mut rc = crate::mcmc::RunningCov::new(d);
    for r in rows {
        rc.push(r);
    }
    Ok(rc.cov())
}

/// EK-MCMC: an adaptive random-walk chain on the EKF posterior; its sample
/// covariance seeds the exact sampler's proposal. Errors if the chain
/// never accepts a move.
pub fn ek_mcmc(
    spec: &PriorSpec,
    driver: DriverKind,
    grid: &TimeGrid,
    data: &ObservationSeries,
    init: &ParamSet,
    n_iter: usize,
    seed: u64,
) -> Result<(ProposalCovariance, ChainOutput)> {
    let target = EkfTarget { spec, driver, grid, data };
    let mut cfg = PmmhConfig::new(n_iter, seed);
    cfg.path_thin = 0;
    // tune the approximate chain with the mode curvature and start it at
    // the mode; an identity proposal mixes too poorly for its sample
    // covariance to be informative
    let mode = ek_mode(spec, driver, grid, data, init)?;
    let out = run_pmmh(&target, spec, &mode.params, &mode.cov, &cfg)?;
    if !out.accepted.iter().any(|a| *a) {
        return Err(Error::Numerical(
            "the EKF chain rejected every proposal; the posterior surface may be \
             degenerate at this starting point"
                .into(),
        ));
    }
    let cov = chain_covariance(&out)?;
    Ok((
        ProposalCovariance { matrix: psd_repair(&cov), provenance: CovProvenance::EkMcmc },
        out,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{propagate_ode, simulate_driver};
    use crate::model::{ParamField, Prior};
    use crate::observation::{log_obs_density, simulate_observations};
    use crate::pfilter::run_particle_filter;
    use crate::surrogate::{kalman_filter, LinearGaussianSsm};
    use crate::util::{mean, variance};
    use approx::assert_relative_eq;

    struct LinearEkf<'a>(&'a LinearGaussianSsm);

    impl<'a> GaussStep for LinearEkf<'a> {
        fn dim(&self) -> usize {
            1
        }
        fn n_obs(&self) -> usize {
            self.0.data.len()
        }
        fn init_mean(&self) -> DVector<f64> {
            DVector::from_element(1, self.0.init_mean)
        }
        fn init_cov(&self) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, self.0.init_sd * self.0.init_sd)
        }
        fn substeps(&self, _i: usize) -> usize {
            1
        }
        fn step_mean(&self, _i: usize, _k: usize, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_element(1, self.0.coef * x[0])
        }
        fn step_noise(&self, _i: usize, _k: usize) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, self.0.trans_sd * self.0.trans_sd)
        }
        fn obs_mean(&self, _i: usize, x: &DVector<f64>) -> Result<f64> {
            Ok(x[0])
        }
        fn obs_value(&self, i: usize) -> f64 {
            self.0.data[i]
        }
        fn obs_var(&self) -> f64 {
            self.0.obs_sd * self.0.obs_sd
        }
    }

    #[test]
    fn ekf_on_linear_model_is_exact_kalman() {
        let mut m = LinearGaussianSsm::new(0.85, 0.6, 0.3, vec![]);
        m.data = m.simulate(60, 4);
        let (kal_ll, kal_means, kal_vars) = kalman_filter(&m);
        let r = ekf_filter(&LinearEkf(&m)).unwrap();
        assert_relative_eq!(r.loglik, kal_ll, max_relative = 1e-8);
        for i in 0..m.data.len() {
            assert_relative_eq!(r.means[i][0], kal_means[i], max_relative = 1e-6);
            assert_relative_eq!(r.covs[i][(0, 0)], kal_vars[i], max_relative = 1e-6);
        }
    }

    fn seir_setup(sigma: f64, tau: f64, seed: u64) -> (ParamSet, TimeGrid, ObservationSeries) {
        let mut p = ParamSet::seir_template();
        p.sigma = sigma;
        p.obs_sd = tau;
        let grid = TimeGrid::weekly(20, 13);
        let path = simulate_driver(DriverKind::Bm, &p, &grid, seed).unwrap();
        let traj = propagate_ode(&p, &[path]).unwrap();
        let obs = simulate_observations(&traj, tau, 1.0, seed + 1).unwrap();
        (p, grid, obs)
    }

    #[test]
    fn zero_volatility_ekf_equals_deterministic_loglik() {
        // sigma = 0: no process noise, P stays 0 and the EKF log-likelihood
        // is an exact sum of per-week log-normal densities
        let (p, grid, obs) = seir_setup(0.0, 0.1, 50);
        let r = ekf_loglik(&p, DriverKind::Bm, &grid, &obs).unwrap();
        let path = simulate_driver(DriverKind::Bm, &p, &grid, 1).unwrap();
        let traj = propagate_ode(&p, &[path]).unwrap();
        let direct: f64 = (0..obs.n_obs())
            .map(|i| log_obs_density(obs.values[i][0], traj.incidence[i][0], p.obs_sd, 1.0))
            .sum();
        assert_relative_eq!(r.loglik, direct, max_relative = 1e-8);
    }

    #[test]
    fn ekf_close_to_particle_filter_loglik() {
        let (p, grid, obs) = seir_setup(0.07, 0.1, 60);
        let ek = ekf_loglik(&p, DriverKind::Bm, &grid, &obs).unwrap();
        let lls: Vec<f64> = (0..30)
            .map(|s| {
                run_particle_filter(&p, DriverKind::Bm, &obs, 1000, &grid, s)
                    .unwrap()
                    .loglik()
            })
            .collect();
        let pf = mean(&lls);
        let se = (variance(&lls) / lls.len() as f64).sqrt();
        // the EKF is biased but should track the exact likelihood to well
        // under one unit per observation on this easy regime
        assert!(
            (ek.loglik - pf).abs() < 0.25 * obs.n_obs() as f64 + 3.0 * se,
            "ekf {} vs pf {pf} (se {se})",
            ek.loglik
        );
    }

    #[test]
    fn ekf_ibm_driver_runs_and_is_finite() {
        let mut p = ParamSet::seir_template();
        p.sigma = 0.005;
        let grid = TimeGrid::weekly(15, 13);
        let kind = DriverKind::Ibm { slope0: 0.0 };
        let path = simulate_driver(kind, &p, &grid, 70).unwrap();
        let traj = propagate_ode(&p, &[path]).unwrap();
        let obs = simulate_observations(&traj, 0.1, 1.0, 71).unwrap();
        let r = ekf_loglik(&p, kind, &grid, &obs).unwrap();
        assert!(r.loglik.is_finite());
        assert_eq!(r.means[0].len(), 7);
    }

    #[test]
    fn two_group_and_sigmoid_are_rejected() {
        let (p, grid, obs) = seir_setup(0.07, 0.1, 80);
        let mut p2 = p.clone();
        p2.group2 = Some(crate::model::GroupExt {
            sigma: 0.07,
            beta0: 1.2,
            init_fracs: [1e-5, 1e-5, 0.1],
            cross_rate: 0.2,
            population: 1.0e5,
        });
        assert!(matches!(
            SeirEkf::new(&p2, DriverKind::Bm, &grid, &obs),
            Err(Error::Config(_))
        ));
        let sig = DriverKind::Sigmoid { beta_high: 1.5, beta_low: 0.5, t_mid: 50.0, slope: 10.0 };
        assert!(matches!(SeirEkf::new(&p, sig, &grid, &obs), Err(Error::Config(_))));
    }

    #[test]
    fn fd_hessian_quadratic_inverse_oracle() {
        // f = 0.5 x' A x: Hessian is A, inverse covariance A^-1 to 1e-6
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.5]);
        let f = |x: &[f64]| {
            let xv = DVector::from_row_slice(x);
            0.5 * (xv.transpose() * &a * &xv)[(0, 0)]
        };
        let hess = fd_hessian(f, &[0.3, -0.2], 1e-4);
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(hess[(i, j)], a[(i, j)], epsilon = 1e-6);
            }
        }
        let inv = psd_repair(&hess).cholesky().unwrap().inverse();
        let direct = a.clone().try_inverse().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(inv[(i, j)], direct[(i, j)], epsilon = 1e-6);
            }
        }
    }

    fn two_param_spec(truth: &ParamSet) -> PriorSpec {
        let mut sp = PriorSpec::all_point_mass(truth);
        sp.set(ParamField::Beta0, Prior::VaguePositive { sd: 1.0e3 });
        sp.set(ParamField::ObsSd, Prior::VaguePositive { sd: 1.0e3 });
        sp
    }

    #[test]
    fn ek_mode_improves_posterior_and_is_psd() {
        // a persistent-epidemic dataset; burnt-out tails make the EKF
        // surface jagged and are covered by the identity-fallback path
        let (p, grid, obs) = seir_setup(0.07, 0.1, 89);
        let sp = two_param_spec(&p);
        let mut init = p.clone();
        init.beta0 = 1.1;
        init.obs_sd = 0.3;
        let target = EkfTarget { spec: &sp, driver: DriverKind::Bm, grid: &grid, data: &obs };
        let v0 = to_unconstrained(&init, &sp).unwrap();
        let start_post = target.estimate(&v0, 0).unwrap().loglik + log_prior(&v0, &sp).unwrap();
        let mode = ek_mode(&sp, DriverKind::Bm, &grid, &obs, &init).unwrap();
        assert!(mode.log_post >= start_post, "{} < {start_post}", mode.log_post);
        assert_eq!(mode.cov.provenance, CovProvenance::EkMode);
        assert!(mode.cov.matrix.clone().cholesky().is_some());
        // mode should sit near the data-generating values on this scale
        assert!((mode.params.beta0 - p.beta0).abs() / p.beta0 < 0.25);
    }

    struct Gauss2Target;

    impl Target for Gauss2Target {
        fn estimate(&self, v: &UnconstrainedVector, _seed: u64) -> Result<Estimate> {
            // N(0, [[0.04, 0.018], [0.018, 0.09]]) minus the prior tilt
            // (log_prior adds +u per coordinate for the vague priors)
            let (a, b) = (v.0[0], v.0[1]);
            let det = 0.04 * 0.09 - 0.018 * 0.018;
            let q = (0.09 * a * a - 2.0 * 0.018 * a * b + 0.04 * b * b) / det;
            Ok(Estimate { loglik: -0.5 * q - a - b, path: None })
        }
    }

    #[test]
    fn chain_covariance_matches_gaussian_target() {
        // adaptive RWM on an exact 2-d Gaussian: the sample covariance of
        // the chain should match the target covariance within 10% in
        // Frobenius norm
        let truth = ParamSet::seir_template();
        let sp = two_param_spec(&truth);
        let mut cfg = PmmhConfig::new(60_000, 8);
        cfg.burnin = 10_000;
        cfg.path_thin = 0;
        let out =
            run_pmmh(&Gauss2Target, &sp, &truth, &ProposalCovariance::identity(2), &cfg).unwrap();
        let cov = chain_covariance(&out).unwrap();
        let target = DMatrix::from_row_slice(2, 2, &[0.04, 0.018, 0.018, 0.09]);
        let frob = |m: &DMatrix<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = frob(&(&cov - &target)) / frob(&target);
        assert!(rel < 0.1, "relative Frobenius error {rel}");
    }

    #[test]
    fn ek_mcmc_produces_usable_covariance() {
        let (p, grid, obs) = seir_setup(0.07, 0.1, 124);
        let sp = two_param_spec(&p);
        let (cov, out) = ek_mcmc(&sp, DriverKind::Bm, &grid, &obs, &p, 4000, 3).unwrap();
        assert_eq!(cov.provenance, CovProvenance::EkMcmc);
        assert!(out.acc_rate() > 0.05);
        assert!(cov.matrix.clone().cholesky().is_some());
        for j in 0..2 {
            assert!(cov.matrix[(j, j)] > 0.0 && cov.matrix[(j, j)].is_finite());
        }
    }

    struct StuckTarget {
        v0: Vec<f64>,
    }

    impl Target for StuckTarget {
        fn estimate(&self, v: &UnconstrainedVector, _seed: u64) -> Result<Estimate> {
            let same = v.0.iter().zip(&self.v0).all(|(a, b)| (a - b).abs() < 1e-300);
            Ok(Estimate {
                loglik: if same { 0.0 } else { f64::NEG_INFINITY },
                path: None,
            })
        }
    }

    #[test]
    fn all_rejections_is_an_error_path() {
        // mirror the ek_mcmc all-rejection check on a toy target
        let truth = ParamSet::seir_template();
        let mut sp = PriorSpec::all_point_mass(&truth);
        sp.set(ParamField::Sigma, Prior::VaguePositive { sd: 1.0e3 });
        let v0 = to_unconstrained(&truth, &sp).unwrap();
        let target = StuckTarget { v0: v0.0.clone() };
        let mut cfg = PmmhConfig::new(50, 2);
        cfg.path_thin = 0;
        let out = run_pmmh(&target, &sp, &truth, &ProposalCovariance::identity(1), &cfg).unwrap();
        assert!(!out.accepted.iter().any(|a| *a));
    }
}
