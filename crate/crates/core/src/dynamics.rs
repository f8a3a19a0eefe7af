//! Latent diffusion drivers on a delta-grid and forward-Euler integration
//! of the coupled SEIR compartments with accumulated incidence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelKind, ParamSet};
use crate::rng::stream;
use rand::Rng;
use rand_distr::StandardNormal;

/// Observation times plus `m` Euler substeps per observation interval.
///
/// Grid points are t0, then for each interval i the points
/// t_i + k * delta_i (k = 1..=m+1) with delta_i = (t_{i+1} - t_i)/(m+1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub obs_times: Vec<f64>,
    pub substeps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, obs_times: Vec<f64>, substeps: usize) -> Result<TimeGrid> {
        let mut prev = t0;
        for &t in &obs_times {
            if !(t > prev) {
                return Err(Error::invalid(
                    "obs_times",
                    format!("must be strictly increasing from t0={t0}, got {t} after {prev}"),
                ));
            }
            prev = t;
        }
        if obs_times.is_empty() {
            return Err(Error::invalid("obs_times", "need at least one observation time"));
        }
        Ok(TimeGrid { t0, obs_times, substeps })
    }

    /// Weekly observations: t_i = 7 i days, i = 1..=n_weeks.
    pub fn weekly(n_weeks: usize, substeps: usize) -> TimeGrid {
        TimeGrid::new(0.0, (1..=n_weeks).map(|i| 7.0 * i as f64).collect(), substeps).unwrap()
    }

    /// Substep count giving a step closest to `delta` days for weekly data.
    pub fn substeps_for_delta(interval: f64, delta: f64) -> usize {
        ((interval / delta).round() as usize).saturating_sub(1)
    }

    pub fn n_obs(&self) -> usize {
        self.obs_times.len()
    }

    /// Total number of grid points including t0.
    pub fn n_points(&self) -> usize {
        1 + self.n_obs() * (self.substeps + 1)
    }

    pub fn t_end(&self) -> f64 {
        *self.obs_times.last().unwrap()
    }

    /// Step length inside observation interval i (0-based).
    pub fn delta(&self, interval: usize) -> f64 {
        let lo = if interval == 0 { self.t0 } else { self.obs_times[interval - 1] };
        (self.obs_times[interval] - lo) / (self.substeps + 1) as f64
    }

    /// Time of grid point `idx` (0 = t0).
    pub fn point_time(&self, idx: usize) -> f64 {
        if idx == 0 {
            return self.t0;
        }
        let per = self.substeps + 1;
        let interval = (idx - 1) / per;
        let k = (idx - 1) % per + 1;
        let lo = if interval == 0 { self.t0 } else { self.obs_times[interval - 1] };
        lo + k as f64 * self.delta(interval)
    }

    /// Grid index of observation i (1-based observation, as in y_1..y_n).
    pub fn obs_point(&self, i: usize) -> usize {
        i * (self.substeps + 1)
    }
}

/// Which latent driver generates x_t = log beta_t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriverKind {
    /// Brownian motion with volatility sigma (the paper's BM model).
    Bm,
    /// Integrated Brownian motion: x is the grid cumulative sum of a BM
    /// slope process with volatility sigma.
    Ibm { slope0: f64 },
    /// Ornstein-Uhlenbeck: dx = rate (mean_log - x) dt + sigma dB.
    Ou { rate: f64, mean_log: f64 },
    /// Deterministic decreasing sigmoid on the beta scale:
    /// beta_t = beta_low + (beta_high - beta_low) / (1 + exp((t - t_mid)/slope)).
    Sigmoid { beta_high: f64, beta_low: f64, t_mid: f64, slope: f64 },
}

/// Per-particle driver state, advanced one delta-substep at a time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverState {
    pub x: f64,
    /// Slope coordinate, used by the iBM driver only.
    pub slope: f64,
}

pub fn driver_init(kind: DriverKind, x0: f64) -> DriverState {
    match kind {
        DriverKind::Ibm { slope0 } => DriverState { x: x0, slope: slope0 },
        _ => DriverState { x: x0, slope: 0.0 },
    }
}

/// One Euler-Maruyama substep of the driver. `t` is the time at the start
/// of the substep.
pub fn driver_advance<R: Rng>(
    kind: DriverKind,
    st: DriverState,
    t: f64,
    delta: f64,
    sigma: f64,
    rng: &mut R,
) -> DriverState {
    let sqd = delta.sqrt();
    match kind {
        DriverKind::Bm => {
            let z: f64 = rng.sample(StandardNormal);
            DriverState { x: st.x + sigma * sqd * z, slope: 0.0 }
        }
        DriverKind::Ibm { .. } => {
            // x integrates the slope (left endpoint); the slope is a BM
            let z: f64 = rng.sample(StandardNormal);
            DriverState {
                x: st.x + delta * st.slope,
                slope: st.slope + sigma * sqd * z,
            }
        }
        DriverKind::Ou { rate, mean_log } => {
            let z: f64 = rng.sample(StandardNormal);
            DriverState {
                x: st.x + delta * rate * (mean_log - st.x) + sigma * sqd * z,
                slope: 0.0,
            }
        }
        DriverKind::Sigmoid { beta_high, beta_low, t_mid, slope } => {
            let tn = t + delta;
            let beta = beta_low + (beta_high - beta_low) / (1.0 + ((tn - t_mid) / slope).exp());
            DriverState { x: beta.ln(), slope: 0.0 }
        }
    }
}

/// Discretised latent path x_{0:n} on the grid; beta_t = exp(x_t).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPath {
    pub grid: TimeGrid,
    pub x: Vec<f64>,
    pub kind: DriverKind,
}

impl LatentPath {
    pub fn beta(&self, idx: usize) -> f64 {
        self.x[idx].exp()
    }
}

/// Draw a latent path from the Euler-Maruyama transition kernel (exactly;
/// the kernel itself is the model after discretisation). The sigmoid kind
/// is deterministic.
pub fn simulate_driver(
    kind: DriverKind,
    params: &ParamSet,
    grid: &TimeGrid,
    rng_seed: u64,
) -> Result<LatentPath> {
    simulate_driver_with(kind, params.sigma, params.beta0.ln(), grid, rng_seed)
}

/// As `simulate_driver` but with explicit volatility and x0 (used for the
/// adult group of the age model and for tests).
pub fn simulate_driver_with(
    kind: DriverKind,
    sigma: f64,
    x0: f64,
    grid: &TimeGrid,
    rng_seed: u64,
) -> Result<LatentPath> {
    if sigma < 0.0 {
        return Err(Error::invalid("sigma", "must be >= 0"));
    }
    let mut rng = stream(rng_seed, &[0x64726976]); // "driv"
    let mut x = Vec::with_capacity(grid.n_points());
    let mut st = driver_init(kind, x0);
    if let DriverKind::Sigmoid { beta_high, beta_low, t_mid, slope } = kind {
        let beta0 = beta_low + (beta_high - beta_low) / (1.0 + ((grid.t0 - t_mid) / slope).exp());
        st.x = beta0.ln();
    }
    x.push(st.x);
    let mut idx = 1usize;
    for i in 0..grid.n_obs() {
        let delta = grid.delta(i);
        for _ in 0..=grid.substeps {
            let t = grid.point_time(idx - 1);
            st = driver_advance(kind, st, t, delta, sigma, &mut rng);
            x.push(st.x);
            idx += 1;
        }
    }
    Ok(LatentPath { grid: grid.clone(), x, kind })
}

/// Sum of squared path increments over the grid.
pub fn quadratic_variation(path: &LatentPath) -> f64 {
    path.x.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum()
}

/// Compartment state of one group, plus the pending incidence accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SeirState {
    pub s: f64,
    pub e: f64,
    pub i: f64,
    pub r: f64,
    /// Accumulated incidence integral of k E_t since the last observation.
    pub z: f64,
}

impl SeirState {
    pub fn total(&self) -> f64 {
        self.s + self.e + self.i + self.r
    }
}

/// Initial compartment states (one per group) from the parameter set.
pub fn initial_state(p: &ParamSet) -> Vec<SeirState> {
    let mk = |fr: &[f64; 3], n: f64| {
        let s0 = 1.0 - fr[0] - fr[1] - fr[2];
        SeirState { s: s0 * n, e: fr[0] * n, i: fr[1] * n, r: fr[2] * n, z: 0.0 }
    };
    let mut v = vec![mk(&p.init_fracs, p.population)];
    if let Some(g) = &p.group2 {
        v.push(mk(&g.init_fracs, g.population));
    }
    v
}

/// Relative clamp tolerance for negative compartment excursions.
const NEG_TOL: f64 = 1e-9;

/// One forward-Euler substep of the SEIR system for all groups, with beta
/// held at its left-endpoint value. Returns an error when a compartment
/// goes below -1e-9 N (integration instability; smaller excursions are
/// clamped to zero).
pub fn seir_substep(
    states: &mut [SeirState],
    betas: &[f64],
    cross_rate: f64,
    populations: &[f64],
    k: f64,
    gamma: f64,
    delta: f64,
) -> Result<()> {
    let ngroups = states.len();
    let mut infection = [0.0f64; 2];
    for g in 0..ngroups {
        let mut force = betas[g] * states[g].i / populations[g];
        if ngroups == 2 {
            let other = 1 - g;
            force += cross_rate * states[other].i / populations[other];
        }
        infection[g] = force * states[g].s;
    }
    for g in 0..ngroups {
        let st = &mut states[g];
        let new_inf = delta * infection[g];
        let new_sympt = delta * k * st.e;
        let new_rec = delta * gamma * st.i;
        st.z += new_sympt;
        st.s -= new_inf;
        st.e += new_inf - new_sympt;
        st.i += new_sympt - new_rec;
        st.r += new_rec;
        let n = populations[g];
        for c in [&mut st.s, &mut st.e, &mut st.i, &mut st.r] {
            if *c < 0.0 {
                if *c >= -NEG_TOL * n {
                    *c = 0.0;
                } else {
                    return Err(Error::Numerical(format!(
                        "compartment excursion {c} below -1e-9 N at delta={delta}; use a smaller Euler step"
                    )));
                }
            }
        }
        if !st.s.is_finite() || !st.e.is_finite() || !st.i.is_finite() || !st.r.is_finite() {
            return Err(Error::Numerical("non-finite compartment state".into()));
        }
    }
    Ok(())
}

/// The ODE state skeleton with per-interval accumulated incidence.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub grid: TimeGrid,
    /// One inner vec per grid point; entries per group.
    pub states: Vec<Vec<SeirState>>,
    /// Accumulated incidence per observation interval, group-major inner.
    pub incidence: Vec<Vec<f64>>,
}

impl StateTrajectory {
    pub fn n_groups(&self) -> usize {
        self.states[0].len()
    }
}

/// Integrate the compartments forward over the whole grid given one latent
/// path per group. The incidence accumulator integrates k E_t by the same
/// Euler rule and resets at each observation time.
pub fn propagate_ode(p: &ParamSet, paths: &[LatentPath]) -> Result<StateTrajectory> {
    p.validate()?;
    let ngroups = if p.kind() == ModelKind::Seir2Group { 2 } else { 1 };
    if paths.len() != ngroups {
        return Err(Error::invalid(
            "paths",
            format!("expected {ngroups} latent paths, got {}", paths.len()),
        ));
    }
    let grid = &paths[0].grid;
    for pth in paths {
        if pth.x.len() != grid.n_points() || pth.grid != *grid {
            return Err(Error::invalid("paths", "latent paths must share the grid"));
        }
    }
    let populations: Vec<f64> = match &p.group2 {
        Some(g) => vec![p.population, g.population],
        None => vec![p.population],
    };
    let cross = p.group2.as_ref().map_or(0.0, |g| g.cross_rate);

    let mut states = initial_state(p);
    let mut out = StateTrajectory {
        grid: grid.clone(),
        states: Vec::with_capacity(grid.n_points()),
        incidence: Vec::with_capacity(grid.n_obs()),
    };
    out.states.push(states.clone());
    let mut idx = 1usize;
    for i in 0..grid.n_obs() {
        let delta = grid.delta(i);
        for _ in 0..=grid.substeps {
            let betas: Vec<f64> = paths.iter().map(|pth| pth.beta(idx - 1)).collect();
            seir_substep(
                &mut states,
                &betas,
                cross,
                &populations,
                p.latent_rate,
                p.recovery_rate,
                delta,
            )?;
            out.states.push(states.clone());
            idx += 1;
        }
        out.incidence.push(states.iter().map(|st| st.z).collect());
        for st in &mut states {
            st.z = 0.0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamSet;
    use crate::util::{mean, variance};
    use approx::assert_relative_eq;

    #[test]
    fn grid_points_and_deltas() {
        let g = TimeGrid::weekly(3, 6);
        assert_eq!(g.n_points(), 1 + 3 * 7);
        assert_relative_eq!(g.delta(0), 1.0);
        assert_relative_eq!(g.point_time(0), 0.0);
        assert_relative_eq!(g.point_time(7), 7.0);
        assert_eq!(g.obs_point(1), 7);
        assert_eq!(g.obs_point(3), 21);
        assert_relative_eq!(g.point_time(g.obs_point(3)), 21.0);
        assert_eq!(TimeGrid::substeps_for_delta(7.0, 0.1), 69);
    }

    #[test]
    fn grid_rejects_non_increasing_times() {
        assert!(TimeGrid::new(0.0, vec![7.0, 7.0], 1).is_err());
        assert!(TimeGrid::new(0.0, vec![], 1).is_err());
    }

    #[test]
    fn bm_zero_volatility_is_constant() {
        let mut p = ParamSet::seir_template();
        p.sigma = 0.0;
        let g = TimeGrid::weekly(10, 9);
        let path = simulate_driver(DriverKind::Bm, &p, &g, 1).unwrap();
        for &x in &path.x {
            assert_eq!(x, p.beta0.ln());
        }
    }

    #[test]
    fn bm_quadratic_variation_identity() {
        // mean over paths of sum (dx)^2 = sigma^2 T within 3 MC se
        let sigma = 0.07;
        let n_weeks = 50; // T = 350 days
        let g = TimeGrid::weekly(n_weeks, 69); // delta = 0.1
        let mut p = ParamSet::seir_template();
        p.sigma = sigma;
        let qvs: Vec<f64> = (0..2000)
            .map(|s| quadratic_variation(&simulate_driver(DriverKind::Bm, &p, &g, s).unwrap()))
            .collect();
        let m = mean(&qvs);
        let se = (variance(&qvs) / qvs.len() as f64).sqrt();
        let target = sigma * sigma * 350.0;
        assert!(
            (m - target).abs() < 3.0 * se,
            "qv mean {m} vs target {target} (se {se})"
        );
    }

    #[test]
    fn ibm_slope_is_bm_and_x_qv_vanishes() {
        let sigma = 0.07;
        let g = TimeGrid::weekly(50, 69);
        let kind = DriverKind::Ibm { slope0: 0.0 };
        let mut qv_x = Vec::new();
        let mut qv_x_half = Vec::new();
        let mut qv_slope = Vec::new();
        for s in 0..500 {
            let path = simulate_driver_with(kind, sigma, 0.0, &g, s).unwrap();
            qv_x.push(quadratic_variation(&path));
            // reconstruct the slope path from x differences: slope_t = dx/delta
            let slopes: Vec<f64> = path.x.windows(2).map(|w| (w[1] - w[0]) / 0.1).collect();
            let qv: f64 = slopes.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
            qv_slope.push(qv);
            let g2 = TimeGrid::weekly(50, 139); // delta = 0.05
            let path2 = simulate_driver_with(kind, sigma, 0.0, &g2, s).unwrap();
            qv_x_half.push(quadratic_variation(&path2));
        }
        let target = sigma * sigma * 350.0;
        let m_slope = mean(&qv_slope);
        let se = (variance(&qv_slope) / qv_slope.len() as f64).sqrt();
        assert!((m_slope - target).abs() < 3.0 * se, "slope qv {m_slope} vs {target}");
        // x itself is differentiable in the limit: its QV is O(delta), so
        // halving delta should halve it
        let ratio = mean(&qv_x) / mean(&qv_x_half);
        assert!((1.8..=2.2).contains(&ratio), "x qv should scale with delta, ratio {ratio}");
    }

    #[test]
    fn linear_path_qv_closed_form() {
        let g = TimeGrid::weekly(10, 9);
        let a = 0.3; // slope per day
        let x: Vec<f64> = (0..g.n_points()).map(|i| a * g.point_time(i)).collect();
        let path = LatentPath { grid: g, x, kind: DriverKind::Bm };
        // sum over steps of (a delta)^2 = a^2 T delta
        assert_relative_eq!(quadratic_variation(&path), a * a * 70.0 * 0.7, max_relative = 1e-10);
    }

    #[test]
    fn constant_path_qv_zero() {
        let g = TimeGrid::weekly(5, 3);
        let path = LatentPath { grid: g.clone(), x: vec![1.2; g.n_points()], kind: DriverKind::Bm };
        assert_eq!(quadratic_variation(&path), 0.0);
    }

    #[test]
    fn driver_reproducible_bit_identical() {
        let p = ParamSet::seir_template();
        let g = TimeGrid::weekly(20, 13);
        let a = simulate_driver(DriverKind::Bm, &p, &g, 99).unwrap();
        let b = simulate_driver(DriverKind::Bm, &p, &g, 99).unwrap();
        assert_eq!(a.x, b.x);
        let c = simulate_driver(DriverKind::Bm, &p, &g, 100).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn sigmoid_is_deterministic_and_decreasing() {
        let kind = DriverKind::Sigmoid { beta_high: 1.5, beta_low: 0.6, t_mid: 100.0, slope: 12.0 };
        let p = ParamSet::seir_template();
        let g = TimeGrid::weekly(40, 9);
        let a = simulate_driver(kind, &p, &g, 1).unwrap();
        let b = simulate_driver(kind, &p, &g, 2).unwrap();
        assert_eq!(a.x, b.x);
        for w in a.x.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert_relative_eq!(a.beta(0), 1.5, max_relative = 1e-3);
        assert_relative_eq!(a.beta(g.n_points() - 1), 0.6, max_relative = 0.05);
    }

    #[test]
    fn beta_zero_gives_exponential_decay() {
        // beta = 0, E0 = 0: I decays like e^{-gamma t}; error is O(delta)
        let mut p = ParamSet::seir_template();
        p.init_fracs = [0.0, 0.01, 0.0];
        p.beta0 = 1e-300; // log path exists; exp(x) = ~0
        let err_at = |substeps: usize| {
            let g = TimeGrid::weekly(4, substeps);
            let x = vec![f64::NEG_INFINITY.max(-690.0); g.n_points()];
            let path = LatentPath { grid: g.clone(), x, kind: DriverKind::Bm };
            let traj = propagate_ode(&p, &[path]).unwrap();
            let i0 = 0.01 * p.population;
            let mut max_err: f64 = 0.0;
            for (idx, st) in traj.states.iter().enumerate() {
                let t = g.point_time(idx);
                let exact = i0 * (-p.recovery_rate * t).exp();
                max_err = max_err.max((st[0].i - exact).abs() / i0);
            }
            max_err
        };
        let e1 = err_at(69); // delta = 0.1
        let e2 = err_at(139); // delta = 0.05
        assert!(e1 < 0.05, "coarse error too large: {e1}");
        let ratio = e1 / e2;
        assert!((1.7..=2.3).contains(&ratio), "Euler order ratio {ratio}");
    }

    #[test]
    fn conservation_and_monotonicity() {
        let p = ParamSet::seir_template();
        let g = TimeGrid::weekly(30, 13);
        for seed in 0..5 {
            let path = simulate_driver(DriverKind::Bm, &p, &g, seed).unwrap();
            let traj = propagate_ode(&p, &[path]).unwrap();
            let n = p.population;
            let mut prev_s = f64::INFINITY;
            let mut prev_r = -1.0;
            for st in &traj.states {
                assert!((st[0].total() - n).abs() <= 1e-9 * n);
                assert!(st[0].s <= prev_s + 1e-12 * n);
                assert!(st[0].r >= prev_r - 1e-12 * n);
                prev_s = st[0].s;
                prev_r = st[0].r;
            }
            for inc in &traj.incidence {
                assert!(inc[0] >= 0.0);
            }
        }
    }

    #[test]
    fn disease_free_equilibrium_is_frozen() {
        let mut p = ParamSet::seir_template();
        p.init_fracs = [0.0, 0.0, 0.1];
        let g = TimeGrid::weekly(10, 9);
        let path = simulate_driver(DriverKind::Bm, &p, &g, 3).unwrap();
        let traj = propagate_ode(&p, &[path]).unwrap();
        let first = traj.states[0][0];
        for st in &traj.states {
            assert_eq!(st[0].s, first.s);
            assert_eq!(st[0].e, 0.0);
            assert_eq!(st[0].i, 0.0);
        }
        for inc in &traj.incidence {
            assert_eq!(inc[0], 0.0);
        }
    }

    #[test]
    fn two_group_conservation() {
        let mut p = ParamSet::seir_template();
        p.group2 = Some(crate::model::GroupExt {
            sigma: 0.08,
            beta0: 1.2,
            init_fracs: [2e-5, 1e-5, 0.16],
            cross_rate: 0.3,
            population: 2.0e5,
        });
        let g = TimeGrid::weekly(20, 13);
        let pa = simulate_driver(DriverKind::Bm, &p, &g, 4).unwrap();
        let pb = simulate_driver_with(DriverKind::Bm, 0.08, 1.2f64.ln(), &g, 5).unwrap();
        let traj = propagate_ode(&p, &[pa, pb]).unwrap();
        for st in &traj.states {
            assert!((st[0].total() - p.population).abs() <= 1e-9 * p.population);
            let n2 = p.group2.as_ref().unwrap().population;
            assert!((st[1].total() - n2).abs() <= 1e-9 * n2);
        }
    }

    #[test]
    fn unstable_step_is_an_error() {
        let mut p = ParamSet::seir_template();
        p.init_fracs = [0.0, 0.3, 0.0];
        let g = TimeGrid::weekly(4, 0); // delta = 7 days, very coarse
        // beta = 40 per day: the infection flow empties S in one step
        let path = LatentPath {
            grid: g.clone(),
            x: vec![40.0f64.ln(); g.n_points()],
            kind: DriverKind::Bm,
        };
        match propagate_ode(&p, &[path]) {
            Err(Error::Numerical(msg)) => assert!(msg.contains("smaller Euler step")),
            other => panic!("expected instability error, got {other:?}"),
        }
    }
}
