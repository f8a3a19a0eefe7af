//! Small numerical helpers shared across modules.

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Log-density of a Normal(mean, sd) at x.
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// Standard normal CDF via the Abramowitz & Stegun 7.1.26 erf approximation
/// (absolute error < 1.5e-7, plenty for truncation constants).
pub fn normal_cdf(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    0.5 * (1.0 + erf(z))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Lanczos approximation to ln Γ(x), x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// log(sum(exp(xs))) with max-subtraction.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Empirical quantile with linear interpolation, q in [0, 1].
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    assert!(!xs.is_empty());
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (v.len() as f64 - 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] * (1.0 - frac) + v[hi] * frac
}

/// Derivative-free Nelder-Mead minimisation. Returns (argmin, min).
///
/// The simplex starts at `x0` plus `init_step` along each axis and runs
/// until its function-value spread drops below `tol` or `max_iter`
/// iterations pass. Non-finite objective values are treated as +inf.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    init_step: f64,
    max_iter: usize,
    tol: f64,
) -> (Vec<f64>, f64) {
    let d = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += init_step;
        let fx = eval(&x);
        simplex.push((x, fx));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let spread = simplex[d].1 - simplex[0].1;
        if spread.abs() < tol {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let refl: Vec<f64> =
            (0..d).map(|j| centroid[j] + alpha * (centroid[j] - worst.0[j])).collect();
        let f_refl = eval(&refl);
        if f_refl < simplex[0].1 {
            let exp: Vec<f64> =
                (0..d).map(|j| centroid[j] + gamma * (refl[j] - centroid[j])).collect();
            let f_exp = eval(&exp);
            simplex[d] = if f_exp < f_refl { (exp, f_exp) } else { (refl, f_refl) };
        } else if f_refl < simplex[d - 1].1 {
            simplex[d] = (refl, f_refl);
        } else {
            let contr: Vec<f64> =
                (0..d).map(|j| centroid[j] + rho * (worst.0[j] - centroid[j])).collect();
            let f_contr = eval(&contr);
            if f_contr < worst.1 {
                simplex[d] = (contr, f_contr);
            } else {
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = (0..d)
                        .map(|j| best[j] + sigma * (entry.0[j] - best[j]))
                        .collect();
                    entry.1 = eval(&x);
                    entry.0 = x;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    simplex[0].clone().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn nelder_mead_quadratic() {
        let a = [1.0, -2.0, 0.5];
        let f = |x: &[f64]| {
            x.iter().zip(&a).map(|(xi, ai)| (xi - ai) * (xi - ai)).sum::<f64>()
        };
        let (xmin, fmin) = nelder_mead(f, &[0.0, 0.0, 0.0], 0.5, 2000, 1e-14);
        for (xi, ai) in xmin.iter().zip(&a) {
            assert_relative_eq!(xi, ai, epsilon = 1e-5);
        }
        assert!(fmin < 1e-9);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |x: &[f64]| {
            (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
        };
        let (xmin, _) = nelder_mead(f, &[-1.2, 1.0], 0.5, 5000, 1e-14);
        assert_relative_eq!(xmin[0], 1.0, epsilon = 1e-4);
        assert_relative_eq!(xmin[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        for n in 1..10u64 {
            let fact: f64 = (1..n).map(|k| k as f64).product();
            assert_relative_eq!(ln_gamma(n as f64), fact.ln(), epsilon = 1e-10);
        }
        // Γ(1/2) = √π
        assert_relative_eq!(
            ln_gamma(0.5),
            0.5 * std::f64::consts::PI.ln(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-7);
        assert_relative_eq!(normal_cdf(1.959_964), 0.975, epsilon = 1e-5);
        assert_relative_eq!(normal_cdf(-1.959_964), 0.025, epsilon = 1e-5);
    }

    #[test]
    fn logsumexp_stable() {
        let xs = [-1000.0, -1000.0];
        assert_relative_eq!(logsumexp(&xs), -1000.0 + 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn quantile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_relative_eq!(quantile(&xs, 0.5), 3.0);
        assert_relative_eq!(quantile(&xs, 0.0), 1.0);
        assert_relative_eq!(quantile(&xs, 1.0), 5.0);
        assert_relative_eq!(quantile(&xs, 0.25), 2.0);
    }
}
