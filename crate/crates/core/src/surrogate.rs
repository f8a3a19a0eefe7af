//! Scalar linear-Gaussian state-space model used as an oracle surrogate:
//! its likelihood and smoothing distributions are available in closed form
//! (Kalman recursions), so Monte Carlo components can be checked against
//! exact answers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::pfilter::Ssm;
use crate::rng::stream;

/// x_i = a x_{i-1} + q xi_i, y_i = x_i + r eta_i, x_0 ~ N(m0, s0^2).
///
/// `substeps` splits each transition into exact sub-transitions whose
/// composition reproduces (a, q) exactly, so the likelihood is invariant
/// to the split — the analogue of an Euler grid refinement with no
/// discretisation bias.
#[derive(Debug, Clone)]
pub struct LinearGaussianSsm {
    pub coef: f64,
    pub trans_sd: f64,
    pub obs_sd: f64,
    pub init_mean: f64,
    pub init_sd: f64,
    pub substeps: usize,
    pub data: Vec<f64>,
}

impl LinearGaussianSsm {
    pub fn new(coef: f64, trans_sd: f64, obs_sd: f64, data: Vec<f64>) -> LinearGaussianSsm {
        LinearGaussianSsm {
            coef,
            trans_sd,
            obs_sd,
            init_mean: 0.0,
            init_sd: 1.0,
            substeps: 0,
            data,
        }
    }

    /// Per-substep (a, q) such that composing m+1 of them gives the whole
    /// transition exactly.
    pub fn sub_transition(&self) -> Result<(f64, f64)> {
        let m1 = (self.substeps + 1) as f64;
        if self.coef <= 0.0 {
            return Err(Error::invalid("coef", "substep splitting needs a > 0"));
        }
        let a_sub = self.coef.powf(1.0 / m1);
        // sum_{j=0}^{m} a_sub^{2j} q_sub^2 = q^2
        let series = if (a_sub - 1.0).abs() < 1e-12 {
            m1
        } else {
            (1.0 - a_sub.powf(2.0 * m1)) / (1.0 - a_sub * a_sub)
        };
        Ok((a_sub, (self.trans_sd * self.trans_sd / series).sqrt()))
    }

    /// Simulate a data set of length n.
    pub fn simulate(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, &[0x73757272]); // "surr"
        let z0: f64 = rng.sample(StandardNormal);
        let mut x = self.init_mean + self.init_sd * z0;
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let zx: f64 = rng.sample(StandardNormal);
            let zy: f64 = rng.sample(StandardNormal);
            x = self.coef * x + self.trans_sd * zx;
            y.push(x + self.obs_sd * zy);
        }
        y
    }
}

impl Ssm for LinearGaussianSsm {
    type Particle = f64;

    fn n_obs(&self) -> usize {
        self.data.len()
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.init_mean + self.init_sd * z
    }

    fn propagate(&self, p: &mut f64, _interval: usize, rng: &mut ChaCha8Rng) -> bool {
        let (a, q) = self.sub_transition().expect("valid sub-transition");
        for _ in 0..=self.substeps {
            let z: f64 = rng.sample(StandardNormal);
            *p = a * *p + q * z;
        }
        true
    }

    fn log_weight(&self, p: &f64, interval: usize) -> f64 {
        crate::util::normal_logpdf(self.data[interval], *p, self.obs_sd)
    }

    fn summary(&self, p: &f64) -> Vec<f64> {
        vec![*p]
    }
}

/// Exact Kalman filter for `LinearGaussianSsm`: marginal log-likelihood and
/// filtering means/variances.
pub fn kalman_filter(model: &LinearGaussianSsm) -> (f64, Vec<f64>, Vec<f64>) {
    let (a, q, r) = (model.coef, model.trans_sd, model.obs_sd);
    let mut mean = model.init_mean;
    let mut var = model.init_sd * model.init_sd;
    let mut loglik = 0.0;
    let mut means = Vec::with_capacity(model.data.len());
    let mut vars = Vec::with_capacity(model.data.len());
    for &y in &model.data {
        let pred_mean = a * mean;
        let pred_var = a * a * var + q * q;
        let s = pred_var + r * r;
        loglik += crate::util::normal_logpdf(y, pred_mean, s.sqrt());
        let gain = pred_var / s;
        mean = pred_mean + gain * (y - pred_mean);
        var = (1.0 - gain) * pred_var;
        means.push(mean);
        vars.push(var);
    }
    (loglik, means, vars)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pfilter::{particle_filter, ResampleScheme};
    use crate::util::{mean, variance};
    use approx::assert_relative_eq;

    fn model() -> LinearGaussianSsm {
        let mut m = LinearGaussianSsm::new(0.9, 0.5, 0.4, vec![]);
        m.data = m.simulate(40, 17);
        m
    }

    #[test]
    fn substep_split_composes_exactly() {
        let mut m = model();
        m.substeps = 6;
        let (a, q) = m.sub_transition().unwrap();
        let m1 = (m.substeps + 1) as i32;
        assert_relative_eq!(a.powi(m1), m.coef, max_relative = 1e-12);
        let total_var: f64 = (0..m1).map(|j| a.powi(2 * j) * q * q).sum();
        assert_relative_eq!(total_var, m.trans_sd * m.trans_sd, max_relative = 1e-12);
    }

    #[test]
    fn pf_loglik_unbiased_vs_kalman() {
        let m = model();
        let (exact, _, _) = kalman_filter(&m);
        let lls: Vec<f64> = (0..200)
            .map(|s| {
                particle_filter(&m, 400, s, ResampleScheme::Systematic, None)
                    .unwrap()
                    .loglik
            })
            .collect();
        let mu = mean(&lls);
        let se = (variance(&lls) / lls.len() as f64).sqrt();
        // E[log L_hat] <= log L with a small O(1/N) gap; check closeness
        assert!(
            (mu - exact).abs() < 3.0 * se + 0.05,
            "pf mean {mu} vs kalman {exact} (se {se})"
        );
    }

    #[test]
    fn pf_filtering_means_match_kalman() {
        let m = model();
        let (_, kmeans, _) = kalman_filter(&m);
        let mut acc = vec![0.0; m.data.len()];
        let reps = 50;
        for s in 0..reps {
            let r = particle_filter(&m, 1000, s, ResampleScheme::Systematic, None).unwrap();
            for (a, fm) in acc.iter_mut().zip(&r.filter_means) {
                *a += fm[0] / reps as f64;
            }
        }
        for (i, (a, k)) in acc.iter().zip(&kmeans).enumerate() {
            assert!((a - k).abs() < 0.05, "step {i}: pf {a} vs kalman {k}");
        }
    }

    #[test]
    fn pf_loglik_variance_shrinks_with_n() {
        let m = model();
        let var_at = |n: usize| {
            let lls: Vec<f64> = (0..80)
                .map(|s| {
                    particle_filter(&m, n, 1000 + s, ResampleScheme::Systematic, None)
                        .unwrap()
                        .loglik
                })
                .collect();
            variance(&lls)
        };
        let v_small = var_at(50);
        let v_big = var_at(800);
        assert!(
            v_big < v_small * 0.5,
            "variance should shrink: N=50 gives {v_small}, N=800 gives {v_big}"
        );
    }

    #[test]
    fn likelihood_invariant_to_substep_split() {
        let mut m = model();
        let (exact, _, _) = kalman_filter(&m);
        for sub in [0usize, 3, 9] {
            m.substeps = sub;
            let lls: Vec<f64> = (0..150)
                .map(|s| {
                    particle_filter(&m, 400, 7 * s + 1, ResampleScheme::Systematic, None)
                        .unwrap()
                        .loglik
                })
                .collect();
            let mu = mean(&lls);
            let se = (variance(&lls) / lls.len() as f64).sqrt();
            assert!(
                (mu - exact).abs() < 3.0 * se + 0.05,
                "substeps {sub}: {mu} vs {exact}"
            );
        }
    }

    #[test]
    fn multinomial_matches_systematic_in_mean() {
        let m = model();
        let (exact, _, _) = kalman_filter(&m);
        let lls: Vec<f64> = (0..200)
            .map(|s| {
                particle_filter(&m, 400, s, ResampleScheme::Multinomial, None)
                    .unwrap()
                    .loglik
            })
            .collect();
        let mu = mean(&lls);
        let se = (variance(&lls) / lls.len() as f64).sqrt();
        assert!((mu - exact).abs() < 3.0 * se + 0.1, "{mu} vs {exact}");
    }
}
