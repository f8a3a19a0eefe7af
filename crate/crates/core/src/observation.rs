//! Log-normal measurement model linking accumulated incidence to weekly
//! case counts, plus data simulation.

use serde::{Deserialize, Serialize};

use crate::dynamics::StateTrajectory;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::util::normal_logpdf;
use rand::Rng;
use rand_distr::StandardNormal;

/// Noisy weekly case counts, optionally per age group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    /// Observation times in days.
    pub times: Vec<f64>,
    /// Cases per reporting unit; inner vec has one entry per group.
    pub values: Vec<Vec<f64>>,
    /// Whether the reporting factor c has already been applied to values.
    pub reporting_applied: bool,
}

impl ObservationSeries {
    pub fn n_obs(&self) -> usize {
        self.times.len()
    }

    pub fn n_groups(&self) -> usize {
        self.values.first().map_or(1, |v| v.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.values.len() {
            return Err(Error::invalid("observations", "times/values length mismatch"));
        }
        for v in &self.values {
            if v.iter().any(|y| !(*y > 0.0)) {
                return Err(Error::invalid(
                    "observations",
                    "case counts must be strictly positive (their log is taken)",
                ));
            }
        }
        Ok(())
    }

    /// Truncate to observations at or before `t_cut` (days).
    pub fn truncated(&self, t_cut: f64) -> ObservationSeries {
        let keep = self.times.iter().take_while(|t| **t <= t_cut + 1e-9).count();
        ObservationSeries {
            times: self.times[..keep].to_vec(),
            values: self.values[..keep].to_vec(),
            reporting_applied: self.reporting_applied,
        }
    }
}

/// Log-density of one observation: Normal(log(c z), tau^2) evaluated at
/// log y. Returns -inf for non-positive model incidence so degenerate
/// particles die naturally.
pub fn log_obs_density(y: f64, z: f64, tau: f64, c: f64) -> f64 {
    if !(z > 0.0) {
        return f64::NEG_INFINITY;
    }
    debug_assert!(y > 0.0 && tau > 0.0 && c > 0.0);
    normal_logpdf(y.ln(), (c * z).ln(), tau)
}

/// Simulate y_i = c z_i exp(tau eps_i) from a trajectory's per-interval
/// incidence. tau = 0 yields noiseless observations.
pub fn simulate_observations(
    traj: &StateTrajectory,
    tau: f64,
    c: f64,
    rng_seed: u64,
) -> Result<ObservationSeries> {
    if tau < 0.0 {
        return Err(Error::invalid("tau", "must be >= 0"));
    }
    if !(c > 0.0) {
        return Err(Error::invalid("reporting", "must be > 0"));
    }
    let mut rng = stream(rng_seed, &[0x6f627321]); // "obs!"
    let mut values = Vec::with_capacity(traj.incidence.len());
    for (i, inc) in traj.incidence.iter().enumerate() {
        let mut row = Vec::with_capacity(inc.len());
        for &z in inc {
            if !(z > 0.0) {
                return Err(Error::Degenerate(format!(
                    "zero incidence in week {}: log-normal noise cannot produce data from \
                     zero incidence; start the epidemic later or floor the incidence",
                    i + 1
                )));
            }
            let eps: f64 = rng.sample(StandardNormal);
            row.push(c * z * (tau * eps).exp());
        }
        values.push(row);
    }
    Ok(ObservationSeries {
        times: traj.grid.obs_times.clone(),
        values,
        reporting_applied: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{propagate_ode, simulate_driver, DriverKind, TimeGrid};
    use crate::model::ParamSet;
    use crate::util::{mean, variance, LN_SQRT_2PI};
    use approx::assert_relative_eq;

    #[test]
    fn density_at_mode() {
        let tau = 0.13;
        let z = 42.0;
        let c = 3.0;
        let lp = log_obs_density(c * z, z, tau, c);
        assert_relative_eq!(lp, -tau.ln() - LN_SQRT_2PI, max_relative = 1e-12);
    }

    #[test]
    fn density_one_sd_out() {
        let tau: f64 = 0.1;
        let z = 10.0;
        let c = 1.0;
        let y = c * z * tau.exp();
        let lp = log_obs_density(y, z, tau, c);
        assert_relative_eq!(lp, -tau.ln() - LN_SQRT_2PI - 0.5, max_relative = 1e-10);
    }

    #[test]
    fn zero_incidence_gives_zero_weight() {
        assert_eq!(log_obs_density(5.0, 0.0, 0.1, 1.0), f64::NEG_INFINITY);
        assert_eq!(log_obs_density(5.0, -1.0, 0.1, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn density_normalises_over_log_y() {
        // trapezoid quadrature of exp(log_obs_density) in d(log y)
        for (z, tau, c) in [(10.0f64, 0.1f64, 1.0f64), (250.0, 0.4, 10.0), (1.0, 0.05, 1.0)] {
            let mu: f64 = (c * z).ln();
            let lo = mu - 10.0 * tau;
            let hi = mu + 10.0 * tau;
            let n = 40_000;
            let h = (hi - lo) / n as f64;
            let mut total = 0.0;
            for i in 0..=n {
                let ly = lo + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                total += w * log_obs_density(ly.exp(), z, tau, c).exp();
            }
            total *= h;
            assert!((total - 1.0).abs() < 1e-6, "integral {total} for z={z} tau={tau}");
        }
    }

    #[test]
    fn density_maximised_at_c_z() {
        let (z, tau, c) = (33.0, 0.22, 2.0);
        let peak = log_obs_density(c * z, z, tau, c);
        for f in [0.5, 0.9, 1.1, 2.0] {
            assert!(log_obs_density(c * z * f, z, tau, c) < peak);
        }
    }

    fn test_traj() -> StateTrajectory {
        let p = ParamSet::seir_template();
        let g = TimeGrid::weekly(20, 13);
        let path = simulate_driver(DriverKind::Bm, &p, &g, 7).unwrap();
        propagate_ode(&p, &[path]).unwrap()
    }

    #[test]
    fn noiseless_simulation_matches_incidence() {
        let traj = test_traj();
        let obs = simulate_observations(&traj, 0.0, 2.5, 1).unwrap();
        for (i, inc) in traj.incidence.iter().enumerate() {
            assert_relative_eq!(obs.values[i][0], 2.5 * inc[0], max_relative = 1e-12);
        }
    }

    #[test]
    fn noise_sd_matches_tau() {
        let traj = test_traj();
        let tau = 0.17;
        let mut logratios = Vec::new();
        for seed in 0..500 {
            let obs = simulate_observations(&traj, tau, 1.0, seed).unwrap();
            for (i, inc) in traj.incidence.iter().enumerate() {
                logratios.push((obs.values[i][0] / inc[0]).ln());
            }
        }
        let sd = variance(&logratios).sqrt();
        let n = logratios.len() as f64;
        // se of an sd estimate is about sd / sqrt(2n)
        let se = sd / (2.0 * n).sqrt();
        assert!((sd - tau).abs() < 3.0 * se, "sd {sd} vs tau {tau}");
        assert!(mean(&logratios).abs() < 3.0 * tau / n.sqrt());
    }

    #[test]
    fn reporting_factor_scales_pointwise() {
        let traj = test_traj();
        let a = simulate_observations(&traj, 0.1, 1.0, 5).unwrap();
        let b = simulate_observations(&traj, 0.1, 10.0, 5).unwrap();
        for i in 0..a.n_obs() {
            assert_relative_eq!(b.values[i][0], 10.0 * a.values[i][0], max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_incidence_simulation_is_an_error() {
        let mut p = ParamSet::seir_template();
        p.init_fracs = [0.0, 0.0, 0.1]; // disease free: z = 0 every week
        let g = TimeGrid::weekly(5, 9);
        let path = simulate_driver(DriverKind::Bm, &p, &g, 1).unwrap();
        let traj = propagate_ode(&p, &[path]).unwrap();
        match simulate_observations(&traj, 0.1, 1.0, 1) {
            Err(Error::Degenerate(msg)) => assert!(msg.contains("zero incidence")),
            other => panic!("expected degenerate error, got {other:?}"),
        }
    }

    #[test]
    fn simulated_density_averages_to_negative_entropy() {
        // E[log f(log y)] = -(log(tau sqrt(2 pi)) + 1/2), the negative
        // entropy of a Normal with sd tau
        let traj = test_traj();
        let tau = 0.3;
        let mut lps = Vec::new();
        for seed in 0..2000 {
            let obs = simulate_observations(&traj, tau, 1.0, seed).unwrap();
            lps.push(log_obs_density(obs.values[0][0], traj.incidence[0][0], tau, 1.0));
        }
        let target = -(tau.ln() + LN_SQRT_2PI + 0.5);
        let se = (variance(&lps) / lps.len() as f64).sqrt();
        assert!((mean(&lps) - target).abs() < 3.0 * se);
    }

    #[test]
    fn truncation_keeps_prefix() {
        let traj = test_traj();
        let obs = simulate_observations(&traj, 0.1, 1.0, 2).unwrap();
        let cut = obs.truncated(7.0 * 8.0);
        assert_eq!(cut.n_obs(), 8);
        assert_eq!(cut.values[..], obs.values[..8]);
    }
}
