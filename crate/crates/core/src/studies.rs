//! Reusable experiment harnesses behind the benchmark, sensitivity and
//! realtime subcommands: Euler-step and particle-count tuning curves, the
//! EKF-vs-particle-filter tracking benchmark, the six-scheme adaptation
//! ESS table, prior-tilt sensitivity runs and the real-time reporting
//! sweep.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    propagate_ode, simulate_driver, DriverKind, LatentPath, TimeGrid,
};
use crate::ekf::{ek_mcmc, ek_mode, ekf_loglik};
use crate::error::{Error, Result};
use crate::mcmc::{
    beta_difference_quantiles, ess, run_pmmh, ChainOutput, PmmhConfig, ProposalCovariance,
};
use crate::model::{
    constrained_coordinates, ParamField, ParamSet, Prior, PriorSpec, UnconstrainedVector,
};
use crate::observation::{simulate_observations, ObservationSeries};
use crate::pfilter::{run_particle_filter, SeirSsm};
use crate::rng::child_seed;
use crate::util::{mean, quantile, variance};

// ---------------------------------------------------------------------------
// Euler-step convergence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EulerRow {
    pub delta: f64,
    pub substeps: usize,
    pub mean_loglik: f64,
    pub sd_loglik: f64,
}

/// Particle-filter log-likelihood at the fixed parameters across a grid of
/// Euler step sizes; the sequence should stabilise once delta is small
/// enough.
pub fn euler_convergence_study(
    p: &ParamSet,
    driver: DriverKind,
    data: &ObservationSeries,
    deltas: &[f64],
    n_particles: usize,
    n_reps: usize,
    seed: u64,
) -> Result<Vec<EulerRow>> {
    if deltas.is_empty() || n_reps == 0 {
        return Err(Error::invalid("deltas", "need at least one delta and one repetition"));
    }
    let interval = data
        .times
        .first()
        .copied()
        .ok_or_else(|| Error::invalid("data", "empty observation series"))?;
    let mut rows = Vec::with_capacity(deltas.len());
    for (di, &delta) in deltas.iter().enumerate() {
        let m = TimeGrid::substeps_for_delta(interval, delta);
        let grid = TimeGrid::new(0.0, data.times.clone(), m)?;
        let lls: Vec<f64> = (0..n_reps)
            .map(|r| {
                let s = child_seed(seed, &[0x65756c65, di as u64, r as u64]);
                run_particle_filter(p, driver, data, n_particles, &grid, s).map(|f| f.loglik())
            })
            .collect::<Result<_>>()?;
        rows.push(EulerRow {
            delta,
            substeps: m,
            mean_loglik: mean(&lls),
            sd_loglik: if n_reps > 1 { variance(&lls).sqrt() } else { 0.0 },
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Particle-count tuning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NpartsRow {
    pub n_particles: usize,
    pub acc_rate: f64,
    /// Standard deviation of the log-likelihood estimate across the
    /// finite replications; the quantity the particle count is tuned on.
    pub sd_loglik: f64,
}

/// PMMH acceptance rate as a function of the particle count: one chain
/// per count with a fixed, EKF-informed proposal (no adaptation), so the
/// acceptance rises with N to the plateau an exact-likelihood sampler
/// would achieve. Also records the log-likelihood estimator sd at the
/// starting parameters from `n_reps` pinned filter runs.
#[allow(clippy::too_many_arguments)]
pub fn nparts_study(
    spec: &PriorSpec,
    init: &ParamSet,
    driver: DriverKind,
    grid: &TimeGrid,
    data: &ObservationSeries,
    counts: &[usize],
    n_reps: usize,
    n_iter: usize,
    seed: u64,
) -> Result<Vec<NpartsRow>> {
    if counts.is_empty() || n_reps == 0 || n_iter == 0 {
        return Err(Error::invalid("counts", "need counts, repetitions and iterations"));
    }
    let (cov, _) = ek_mcmc(spec, driver, grid, data, init, 2000, child_seed(seed, &[0x6e70656b]))?;
    let mode = ek_mode(spec, driver, grid, data, init)?;
    let mut rows = Vec::with_capacity(counts.len());
    for (ci, &n) in counts.iter().enumerate() {
        let mut logliks = Vec::with_capacity(n_reps);
        for r in 0..n_reps {
            let s = child_seed(seed, &[0x6e706131, ci as u64, r as u64]);
            let l = run_particle_filter(init, driver, data, n, grid, s)?.loglik();
            if l.is_finite() {
                logliks.push(l);
            }
        }
        let sd = if logliks.len() >= 2 { variance(&logliks).sqrt() } else { f64::NAN };
        let mut cfg = PmmhConfig::new(n_iter, child_seed(seed, &[0x6e706368, ci as u64]));
        cfg.adapt_scale = false;
        cfg.adapt_cov = false;
        cfg.path_thin = 0;
        let target = crate::mcmc::PfTarget {
            spec,
            driver,
            grid,
            data,
            n_particles: n,
            resample: crate::pfilter::ResampleScheme::Systematic,
        };
        let out = run_pmmh(&target, spec, &mode.params, &cov, &cfg)?;
        rows.push(NpartsRow { n_particles: n, acc_rate: out.acc_rate_post(), sd_loglik: sd });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// EKF vs particle filter tracking benchmark
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub n_datasets: usize,
    /// Mean error of log beta estimates against the simulated truth.
    pub bias_pf: f64,
    pub bias_ekf: f64,
    /// Mean squared error of log beta estimates.
    pub mse_pf: f64,
    pub mse_ekf: f64,
    pub mse_smoother: f64,
}

/// Simulate BM-driven epidemics at the fixed parameters and compare the
/// beta-tracking error of the particle filter mean, a particle smoother
/// (averaged genealogy draws) and the EKF mean. Burnt-out epidemics (any
/// weekly count below `min_weekly`) are skipped so every method faces a
/// live signal, mirroring the tuned realistic curves of the source study.
pub fn ekf_pf_benchmark(
    p: &ParamSet,
    grid: &TimeGrid,
    n_datasets: usize,
    n_particles: usize,
    n_smooth_draws: usize,
    min_weekly: f64,
    seed: u64,
) -> Result<BenchmarkReport> {
    if n_datasets == 0 || n_smooth_draws == 0 {
        return Err(Error::invalid("n_datasets", "need at least one dataset and one draw"));
    }
    let n_obs = grid.n_obs();
    let mut err_pf = Vec::new();
    let mut err_ekf = Vec::new();
    let mut err_sm = Vec::new();
    let mut accepted = 0usize;
    let mut ds = 0u64;
    while accepted < n_datasets {
        if ds > 50 * n_datasets as u64 + 100 {
            return Err(Error::Numerical(
                "could not find enough persistent epidemics; lower min_weekly".into(),
            ));
        }
        let path_seed = child_seed(seed, &[0x62656e63, ds]);
        ds += 1;
        let path = simulate_driver(DriverKind::Bm, p, grid, path_seed)?;
        let traj = propagate_ode(p, std::slice::from_ref(&path))?;
        let obs = simulate_observations(&traj, p.obs_sd, p.reporting, child_seed(path_seed, &[1]))?;
        if obs.values.iter().any(|v| v[0] < min_weekly) {
            continue;
        }
        accepted += 1;
        let truth: Vec<f64> = (1..=n_obs).map(|i| path.x[grid.obs_point(i)]).collect();

        let fr = run_particle_filter(p, DriverKind::Bm, &obs, n_particles, grid, path_seed)?;
        if fr.degenerate() {
            return Err(Error::Degenerate("benchmark filter degenerated".into()));
        }
        let pf_beta = fr.beta_filter_mean(0);
        let ekf = ekf_loglik(p, DriverKind::Bm, grid, &obs)?;
        let ssm = SeirSsm::new(p, DriverKind::Bm, grid, &obs)?;
        let mut sm_beta = vec![0.0f64; n_obs];
        for dr in 0..n_smooth_draws {
            let d = ssm.obs_path_draw(&fr.inner, child_seed(path_seed, &[2, dr as u64]))?;
            for (acc, b) in sm_beta.iter_mut().zip(&d.beta) {
                *acc += b[0] / n_smooth_draws as f64;
            }
        }
        for i in 0..n_obs {
            err_pf.push(pf_beta[i].ln() - truth[i]);
            err_ekf.push(ekf.means[i][5] - truth[i]);
            err_sm.push(sm_beta[i].ln() - truth[i]);
        }
    }
    Ok(BenchmarkReport {
        n_datasets,
        bias_pf: mean(&err_pf),
        bias_ekf: mean(&err_ekf),
        mse_pf: mean(&err_pf.iter().map(|e| e * e).collect::<Vec<_>>()),
        mse_ekf: mean(&err_ekf.iter().map(|e| e * e).collect::<Vec<_>>()),
        mse_smoother: mean(&err_sm.iter().map(|e| e * e).collect::<Vec<_>>()),
    })
}

// ---------------------------------------------------------------------------
// Adaptation-scheme ESS table
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptEssRow {
    /// Covariance seed: "identity", "ek-mode" or "ek-mcmc".
    pub scheme: String,
    /// Whether the running chain covariance feeds the proposal.
    pub adapt_cov: bool,
    /// Minimum coordinate-wise ESS as a percentage of post-burn-in draws.
    pub min_ess_pct: f64,
    pub acc_rate: f64,
}

/// The six-cell adaptation study: proposal covariance seeded by the
/// identity, the EK-Mode curvature or an EK-MCMC sample covariance,
/// crossed with scale-only versus scale-plus-covariance adaptation.
pub fn adapt_ess_study(
    spec: &PriorSpec,
    driver: DriverKind,
    grid: &TimeGrid,
    data: &ObservationSeries,
    init: &ParamSet,
    n_particles: usize,
    n_iter: usize,
    ekf_chain_iters: usize,
    seed: u64,
) -> Result<Vec<AdaptEssRow>> {
    let d = spec.dim();
    let mode = ek_mode(spec, driver, grid, data, init)?;
    let (mcmc_cov, _) =
        ek_mcmc(spec, driver, grid, data, init, ekf_chain_iters, child_seed(seed, &[0x656b6d63]))?;
    let seeds: Vec<(&str, ProposalCovariance, &ParamSet)> = vec![
        ("identity", ProposalCovariance::identity(d), init),
        // both informed schemes also start the chain from the EKF mode
        ("ek-mode", mode.cov.clone(), &mode.params),
        ("ek-mcmc", mcmc_cov, &mode.params),
    ];
    let target = crate::mcmc::PfTarget {
        spec,
        driver,
        grid,
        data,
        n_particles,
        resample: crate::pfilter::ResampleScheme::Systematic,
    };
    let mut rows = Vec::with_capacity(6);
    for (name, cov, start) in &seeds {
        for adapt_cov in [false, true] {
            let mut cfg = PmmhConfig::new(n_iter, child_seed(seed, &[0x61646170]));
            cfg.adapt_cov = adapt_cov;
            cfg.path_thin = 0;
            let out = run_pmmh(&target, spec, start, cov, &cfg)?;
            rows.push(AdaptEssRow {
                scheme: (*name).into(),
                adapt_cov,
                min_ess_pct: min_ess_pct(&out),
                acc_rate: out.acc_rate_post(),
            });
        }
    }
    Ok(rows)
}

/// Minimum coordinate-wise ESS of the post-burn-in draws, as a percentage
/// of their count.
pub fn min_ess_pct(out: &ChainOutput) -> f64 {
    let rows = &out.draws[out.burnin.min(out.draws.len())..];
    if rows.is_empty() {
        return 0.0;
    }
    let d = rows[0].len();
    let mut min = f64::INFINITY;
    for j in 0..d {
        let xs: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        min = min.min(ess(&xs));
    }
    100.0 * min / rows.len() as f64
}

// ---------------------------------------------------------------------------
// Posterior summaries shared by the sensitivity and realtime studies
// ---------------------------------------------------------------------------

/// Pointwise quantiles of the stored post-burn-in smoothing-path betas:
/// one row per observation time, one column per probability.
pub fn beta_bands(out: &ChainOutput, group: usize, probs: &[f64]) -> Result<Vec<Vec<f64>>> {
    path_bands(out, probs, |p, t| p.beta[t][group])
}

/// As `beta_bands` for the per-interval incidence of the smoothing draws.
pub fn incidence_bands(out: &ChainOutput, group: usize, probs: &[f64]) -> Result<Vec<Vec<f64>>> {
    path_bands(out, probs, |p, t| p.incidence[t][group])
}

fn path_bands<F: Fn(&crate::pfilter::ObsPathDraw, usize) -> f64>(
    out: &ChainOutput,
    probs: &[f64],
    extract: F,
) -> Result<Vec<Vec<f64>>> {
    let kept: Vec<&crate::pfilter::ObsPathDraw> = out
        .paths
        .iter()
        .filter(|(it, _)| *it >= out.burnin)
        .map(|(_, p)| p)
        .collect();
    if kept.is_empty() {
        return Err(Error::invalid("paths", "no stored post-burn-in smoothing paths"));
    }
    let n_times = kept[0].beta.len();
    let mut bands = Vec::with_capacity(n_times);
    for t in 0..n_times {
        let xs: Vec<f64> = kept.iter().map(|p| extract(p, t)).collect();
        bands.push(probs.iter().map(|&q| quantile(&xs, q)).collect());
    }
    Ok(bands)
}

/// Per-coordinate quantiles of the post-burn-in draws on the constrained
/// scale: one row per coordinate, one column per probability.
pub fn posterior_quantiles(
    out: &ChainOutput,
    spec: &PriorSpec,
    probs: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let rows = &out.draws[out.burnin.min(out.draws.len())..];
    if rows.is_empty() {
        return Err(Error::invalid("chain", "no post-burn-in draws"));
    }
    let cons: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| constrained_coordinates(&UnconstrainedVector(r.clone()), spec))
        .collect::<Result<_>>()?;
    let d = cons[0].len();
    let mut out_rows = Vec::with_capacity(d);
    for j in 0..d {
        let xs: Vec<f64> = cons.iter().map(|r| r[j]).collect();
        out_rows.push(probs.iter().map(|&q| quantile(&xs, q)).collect());
    }
    Ok(out_rows)
}

// ---------------------------------------------------------------------------
// Prior-tilt sensitivity
// ---------------------------------------------------------------------------

/// Which informative prior mean a sensitivity run perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TiltTarget {
    /// Initial reproduction number (applied through the beta0 prior mean).
    R0,
    /// Mean latent period 1/k.
    LatentPeriod,
    /// Mean infectious period 1/gamma.
    InfectiousPeriod,
}

impl TiltTarget {
    pub fn name(self) -> &'static str {
        match self {
            TiltTarget::R0 => "r0",
            TiltTarget::LatentPeriod => "latent_period",
            TiltTarget::InfectiousPeriod => "infectious_period",
        }
    }
}

/// The informative prior used by the sensitivity study: the usual SEIR
/// priors plus a Normal prior on beta0 whose mean encodes the R(0) prior
/// through beta0 = R(0) gamma (initial susceptible fraction near one).
pub fn sensitivity_spec(reporting: f64, population: f64, r0_mean: f64) -> PriorSpec {
    let mut spec = PriorSpec::informative_seir(reporting, population);
    let gamma_mean = 1.0 / 1.08;
    let b0 = r0_mean * gamma_mean;
    spec.set(
        ParamField::Beta0,
        Prior::Normal { mean: b0, sd: 0.25 * b0, on_inverse: false },
    );
    spec
}

/// `sensitivity_spec` with one prior mean tilted by `pct` percent.
pub fn tilted_spec(
    reporting: f64,
    population: f64,
    r0_mean: f64,
    target: TiltTarget,
    pct: f64,
) -> PriorSpec {
    let f = 1.0 + pct / 100.0;
    let mut spec = match target {
        TiltTarget::R0 => sensitivity_spec(reporting, population, r0_mean * f),
        _ => sensitivity_spec(reporting, population, r0_mean),
    };
    let field = match target {
        TiltTarget::LatentPeriod => Some(ParamField::LatentRate),
        TiltTarget::InfectiousPeriod => Some(ParamField::RecoveryRate),
        TiltTarget::R0 => None,
    };
    if let Some(field) = field {
        if let Ok(Prior::Normal { mean, sd, on_inverse }) = spec.get(field).cloned() {
            spec.set(field, Prior::Normal { mean: mean * f, sd, on_inverse });
        }
    }
    spec
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub target: String,
    pub tilt_pct: f64,
    /// Posterior medians of every coordinate, constrained scale.
    pub medians: Vec<f64>,
    /// All untilted-coordinate medians inside the baseline 95% intervals.
    pub medians_in_95: bool,
    /// Same against the 50% intervals.
    pub medians_in_50: bool,
    /// Fraction of observation times at which the tilted beta median lies
    /// inside the baseline 50% band.
    pub beta_median_in_50_frac: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub names: Vec<String>,
    /// Baseline per-coordinate quantiles at 2.5/25/50/75/97.5%.
    pub baseline: Vec<Vec<f64>>,
    pub rows: Vec<SensitivityRow>,
}

const BAND_PROBS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

/// Rerun inference under tilted prior means and check the tilted
/// posteriors against the baseline intervals.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_study(
    reporting: f64,
    population: f64,
    r0_mean: f64,
    driver: DriverKind,
    grid: &TimeGrid,
    data: &ObservationSeries,
    init: &ParamSet,
    n_particles: usize,
    cfg: &PmmhConfig,
    tilts: &[f64],
) -> Result<SensitivityReport> {
    // the sweep is about the dynamical parameters; the initial compartment
    // fractions are held at the supplied values so their slow mixing does
    // not masquerade as prior sensitivity
    let pin = |mut s: PriorSpec| -> PriorSpec {
        s.set(ParamField::InitFracs, Prior::PointMassFracs { value: init.init_fracs });
        s
    };
    let base_spec = pin(sensitivity_spec(reporting, population, r0_mean));
    let run = |spec: &PriorSpec| -> Result<ChainOutput> {
        let target = crate::mcmc::PfTarget {
            spec,
            driver,
            grid,
            data,
            n_particles,
            resample: crate::pfilter::ResampleScheme::Systematic,
        };
        // each rerun gets its own EKF-informed start and covariance; an
        // identity proposal cannot traverse the 8 correlated coordinates
        // within the study budget, and the raw inverse-Hessian blows up
        // along near-flat directions, so use the EKF-chain sample
        // covariance as in the main pipeline
        let mode = crate::ekf::ek_mode(spec, driver, grid, data, init)?;
        let (cov, _) = ek_mcmc(spec, driver, grid, data, init, 2000, cfg.seed)?;
        // a strongly tilted prior can push the EKF mode into territory
        // where the particle filter degenerates, which would freeze the
        // chain at a pathless start; fall back to the caller's init there
        let pf_at_mode = run_particle_filter(
            &mode.params,
            driver,
            data,
            n_particles,
            grid,
            child_seed(cfg.seed, &[0x736e7370]),
        )
        .map(|r| r.loglik())
        .unwrap_or(f64::NEG_INFINITY);
        let start = if pf_at_mode.is_finite() { &mode.params } else { init };
        run_pmmh(&target, spec, start, &cov, cfg)
    };
    let base = run(&base_spec)?;
    let baseline = posterior_quantiles(&base, &base_spec, &BAND_PROBS)?;
    let base_bands = beta_bands(&base, 0, &BAND_PROBS)?;
    let names = base_spec.coordinate_names();

    let mut rows = Vec::new();
    for &target_kind in
        &[TiltTarget::R0, TiltTarget::LatentPeriod, TiltTarget::InfectiousPeriod]
    {
        for &pct in tilts {
            let spec = pin(tilted_spec(reporting, population, r0_mean, target_kind, pct));
            let out = run(&spec)?;
            let q = posterior_quantiles(&out, &spec, &BAND_PROBS)?;
            let medians: Vec<f64> = q.iter().map(|r| r[2]).collect();
            let tilted_names = spec.coordinate_names();
            // a coordinate counts as tilted if its prior differs from baseline
            let tilted_coord = |j: usize| match target_kind {
                TiltTarget::R0 => tilted_names[j] == "beta0",
                TiltTarget::LatentPeriod => tilted_names[j] == "latent_rate",
                TiltTarget::InfectiousPeriod => tilted_names[j] == "recovery_rate",
            };
            let mut in95 = true;
            let mut in50 = true;
            for (j, &m) in medians.iter().enumerate() {
                if tilted_coord(j) {
                    continue;
                }
                if m < baseline[j][0] || m > baseline[j][4] {
                    in95 = false;
                }
                if m < baseline[j][1] || m > baseline[j][3] {
                    in50 = false;
                }
            }
            let bands = beta_bands(&out, 0, &[0.5])?;
            let n_in = bands
                .iter()
                .zip(&base_bands)
                .filter(|(b, base)| b[0] >= base[1] && b[0] <= base[3])
                .count();
            rows.push(SensitivityRow {
                target: target_kind.name().into(),
                tilt_pct: pct,
                medians,
                medians_in_95: in95,
                medians_in_50: in50,
                beta_median_in_50_frac: n_in as f64 / bands.len() as f64,
            });
        }
    }
    Ok(SensitivityReport { names, baseline, rows })
}

// ---------------------------------------------------------------------------
// Real-time reporting-factor sweep
// ---------------------------------------------------------------------------

/// A two-level contact-rate path: beta_high until `t_drop`, beta_low
/// afterwards (a school-closure style drop), on the given grid.
pub fn two_level_path(
    grid: &TimeGrid,
    beta_high: f64,
    beta_low: f64,
    t_drop: f64,
) -> LatentPath {
    let x: Vec<f64> = (0..grid.n_points())
        .map(|k| {
            if grid.point_time(k) < t_drop {
                beta_high.ln()
            } else {
                beta_low.ln()
            }
        })
        .collect();
    LatentPath { grid: grid.clone(), x, kind: DriverKind::Bm }
}

/// Simulate the ground truth described by a run configuration: latent
/// path(s), compartment trajectory and observations. Honours the
/// `two_level` scenario and a `truth_driver` differing from the inference
/// driver.
pub fn simulate_truth(
    cfg: &crate::config::RunConfig,
) -> Result<(Vec<LatentPath>, crate::dynamics::StateTrajectory, ObservationSeries)> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let p = &cfg.truth;
    let paths: Vec<LatentPath> = if let Some(tl) = &cfg.two_level {
        vec![two_level_path(&grid, tl.beta_high, tl.beta_low, tl.t_drop)]
    } else {
        let driver = cfg.truth_driver.unwrap_or(cfg.driver);
        let mut paths =
            vec![simulate_driver(driver, p, &grid, child_seed(cfg.seed, &[0x74727574, 0]))?];
        if let Some(g2) = &p.group2 {
            paths.push(crate::dynamics::simulate_driver_with(
                driver,
                g2.sigma,
                g2.beta0.ln(),
                &grid,
                child_seed(cfg.seed, &[0x74727574, 1]),
            )?);
        }
        paths
    };
    let traj = propagate_ode(p, &paths)?;
    let obs =
        simulate_observations(&traj, p.obs_sd, p.reporting, child_seed(cfg.seed, &[0x6f6273]))?;
    Ok((paths, traj, obs))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealtimeRow {
    pub cutoff: f64,
    pub c: f64,
    /// Quantiles of log beta(t_end) - log beta(t_end - lag) at BAND_PROBS.
    pub quantiles: Vec<f64>,
}

/// For each cutoff, rerun inference from scratch on the truncated series
/// under each assumed reporting factor, and summarise the recent change in
/// the contact rate.
#[allow(clippy::too_many_arguments)]
pub fn realtime_study(
    spec_for_c: &dyn Fn(f64) -> PriorSpec,
    init_for_c: &dyn Fn(f64) -> ParamSet,
    driver: DriverKind,
    data: &ObservationSeries,
    substeps: usize,
    cutoffs: &[f64],
    c_values: &[f64],
    lag: usize,
    n_particles: usize,
    cfg: &PmmhConfig,
) -> Result<Vec<RealtimeRow>> {
    let t_end = *data
        .times
        .last()
        .ok_or_else(|| Error::invalid("data", "empty observation series"))?;
    let mut rows = Vec::new();
    for (ci, &cutoff) in cutoffs.iter().enumerate() {
        if cutoff > t_end + 1e-9 {
            return Err(Error::invalid("cutoff", format!("{cutoff} is beyond the data end {t_end}")));
        }
        let part = data.truncated(cutoff);
        let grid = TimeGrid::new(0.0, part.times.clone(), substeps)?;
        for (vi, &c) in c_values.iter().enumerate() {
            let spec = spec_for_c(c);
            let init = init_for_c(c);
            let target = crate::mcmc::PfTarget {
                spec: &spec,
                driver,
                grid: &grid,
                data: &part,
                n_particles,
                resample: crate::pfilter::ResampleScheme::Systematic,
            };
            let mut run_cfg = cfg.clone();
            run_cfg.seed = child_seed(cfg.seed, &[0x72656174, ci as u64, vi as u64]);
            let out = run_pmmh(
                &target,
                &spec,
                &init,
                &ProposalCovariance::identity(spec.dim()),
                &run_cfg,
            )?;
            let kept: Vec<(usize, crate::pfilter::ObsPathDraw)> = out
                .paths
                .iter()
                .filter(|(it, _)| *it >= out.burnin)
                .cloned()
                .collect();
            let quantiles = beta_difference_quantiles(&kept, lag, 0, &BAND_PROBS)?;
            rows.push(RealtimeRow { cutoff, c, quantiles });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn experiment1(
        n_weeks: usize,
        substeps: usize,
        sigma: f64,
        tau: f64,
        seed: u64,
    ) -> (ParamSet, TimeGrid, ObservationSeries) {
        let mut p = ParamSet::seir_template();
        p.sigma = sigma;
        p.obs_sd = tau;
        let grid = TimeGrid::weekly(n_weeks, substeps);
        let path = simulate_driver(DriverKind::Bm, &p, &grid, seed).unwrap();
        let traj = propagate_ode(&p, &[path]).unwrap();
        let obs = simulate_observations(&traj, tau, p.reporting, seed + 1).unwrap();
        (p, grid, obs)
    }

    #[test]
    fn euler_study_reports_each_delta() {
        let (p, _, obs) = experiment1(8, 13, 0.07, 0.1, 60);
        let deltas = [1.0, 0.5];
        let rows =
            euler_convergence_study(&p, DriverKind::Bm, &obs, &deltas, 200, 3, 9).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].substeps, 6);
        assert_eq!(rows[1].substeps, 13);
        for r in &rows {
            assert!(r.mean_loglik.is_finite() && r.sd_loglik >= 0.0);
        }
    }

    #[test]
    fn nparts_acceptance_grows_with_particles() {
        let (p, grid, obs) = experiment1(10, 13, 0.07, 0.1, 60);
        let spec = PriorSpec::informative_seir(p.reporting, p.population);
        let rows =
            nparts_study(&spec, &p, DriverKind::Bm, &grid, &obs, &[5, 400], 12, 300, 2)
                .unwrap();
        assert!(rows[1].acc_rate > rows[0].acc_rate, "{rows:?}");
        assert!(rows[1].sd_loglik < rows[0].sd_loglik, "{rows:?}");
    }

    #[test]
    fn benchmark_report_is_finite_and_ordered_sanely() {
        let mut p = ParamSet::seir_template();
        p.sigma = 0.07;
        p.obs_sd = 0.1;
        let grid = TimeGrid::weekly(12, 13);
        let rep = ekf_pf_benchmark(&p, &grid, 4, 300, 10, 2.0, 17).unwrap();
        assert_eq!(rep.n_datasets, 4);
        for v in [rep.bias_pf, rep.bias_ekf, rep.mse_pf, rep.mse_ekf, rep.mse_smoother] {
            assert!(v.is_finite());
        }
        assert!(rep.mse_pf > 0.0 && rep.mse_ekf > 0.0 && rep.mse_smoother > 0.0);
    }

    #[test]
    fn two_level_path_steps_down_once() {
        let grid = TimeGrid::weekly(6, 6);
        let path = two_level_path(&grid, 1.8, 0.9, 21.0);
        assert_relative_eq!(path.x[0], 1.8f64.ln());
        assert_relative_eq!(*path.x.last().unwrap(), 0.9f64.ln());
        let n_levels = {
            let mut xs = path.x.clone();
            xs.dedup();
            xs.len()
        };
        assert_eq!(n_levels, 2);
    }

    #[test]
    fn tilted_spec_moves_only_the_requested_mean() {
        let base = sensitivity_spec(1.0, 1.0e5, 1.5);
        let tilted = tilted_spec(1.0, 1.0e5, 1.5, TiltTarget::InfectiousPeriod, 20.0);
        let get_mean = |s: &PriorSpec, f: ParamField| match s.get(f).unwrap() {
            Prior::Normal { mean, .. } => *mean,
            _ => panic!("expected a normal prior"),
        };
        assert_relative_eq!(
            get_mean(&tilted, ParamField::RecoveryRate),
            1.08 * 1.2,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            get_mean(&tilted, ParamField::LatentRate),
            get_mean(&base, ParamField::LatentRate),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            get_mean(&tilted, ParamField::Beta0),
            get_mean(&base, ParamField::Beta0),
            epsilon = 1e-12
        );
        let r0_tilted = tilted_spec(1.0, 1.0e5, 1.5, TiltTarget::R0, -10.0);
        assert_relative_eq!(
            get_mean(&r0_tilted, ParamField::Beta0),
            get_mean(&base, ParamField::Beta0) * 0.9,
            epsilon = 1e-12
        );
    }

    #[test]
    fn realtime_rejects_cutoff_beyond_data() {
        let (p, _, obs) = experiment1(6, 6, 0.07, 0.1, 60);
        let spec_fn = |c: f64| {
            let mut s = PriorSpec::all_point_mass(&p);
            s.set(ParamField::Reporting, Prior::PointMass { value: c });
            s.set(ParamField::Sigma, Prior::VaguePositive { sd: 1.0e3 });
            s
        };
        let init_fn = |c: f64| {
            let mut q = p.clone();
            q.reporting = c;
            q
        };
        let cfg = PmmhConfig::new(50, 3);
        let err = realtime_study(
            &spec_fn,
            &init_fn,
            DriverKind::Bm,
            &obs,
            6,
            &[1000.0],
            &[1.0],
            2,
            50,
            &cfg,
        );
        assert!(err.is_err());
    }

    #[test]
    fn realtime_smoke_run_produces_quantiles() {
        let (p, _, obs) = experiment1(6, 6, 0.07, 0.1, 60);
        let spec_fn = |c: f64| {
            let mut s = PriorSpec::all_point_mass(&p);
            s.set(ParamField::Reporting, Prior::PointMass { value: c });
            s.set(ParamField::Sigma, Prior::VaguePositive { sd: 1.0e3 });
            s
        };
        let init_fn = |c: f64| {
            let mut q = p.clone();
            q.reporting = c;
            q
        };
        let mut cfg = PmmhConfig::new(300, 3);
        cfg.path_thin = 5;
        let rows = realtime_study(
            &spec_fn,
            &init_fn,
            DriverKind::Bm,
            &obs,
            6,
            &[obs.times[obs.times.len() - 1]],
            &[1.0],
            2,
            80,
            &cfg,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        let q = &rows[0].quantiles;
        assert_eq!(q.len(), 5);
        assert!(q.windows(2).all(|w| w[0] <= w[1]), "quantiles sorted: {q:?}");
    }

    #[test]
    fn adapt_ess_study_produces_six_cells() {
        let (p, grid, obs) = experiment1(8, 13, 0.07, 0.1, 60);
        let mut spec = PriorSpec::all_point_mass(&p);
        spec.set(ParamField::Sigma, Prior::VaguePositive { sd: 1.0e3 });
        spec.set(ParamField::ObsSd, Prior::VaguePositive { sd: 1.0e3 });
        let rows =
            adapt_ess_study(&spec, DriverKind::Bm, &grid, &obs, &p, 60, 250, 400, 5).unwrap();
        assert_eq!(rows.len(), 6);
        for r in &rows {
            assert!(r.min_ess_pct >= 0.0 && r.min_ess_pct.is_finite(), "{r:?}");
        }
        let schemes: Vec<&str> = rows.iter().map(|r| r.scheme.as_str()).collect();
        assert_eq!(
            schemes,
            ["identity", "identity", "ek-mode", "ek-mode", "ek-mcmc", "ek-mcmc"]
        );
    }

    #[test]
    fn sensitivity_zero_tilt_matches_baseline() {
        let (p, grid, obs) = experiment1(8, 13, 0.07, 0.1, 60);
        let mut cfg = PmmhConfig::new(250, 11);
        cfg.path_thin = 10;
        let rep = sensitivity_study(
            p.reporting,
            p.population,
            1.5,
            DriverKind::Bm,
            &grid,
            &obs,
            &p,
            60,
            &cfg,
            &[0.0],
        )
        .unwrap();
        assert_eq!(rep.rows.len(), 3);
        // a 0% tilt is the baseline run under the same seed
        for row in &rep.rows {
            assert!(row.medians_in_95 && row.medians_in_50, "{row:?}");
            for (j, m) in row.medians.iter().enumerate() {
                assert_relative_eq!(*m, rep.baseline[j][2], epsilon = 1e-12);
            }
            assert_relative_eq!(row.beta_median_in_50_frac, 1.0);
        }
    }
}
