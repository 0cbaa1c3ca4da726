//! Continuous Gaussian diffusion in the clean-sample (`x0`) parameterization.

use crate::error::{check_len, Error, Result};
use crate::schedule::Schedule;

/// Coefficients of the posterior `q(x_{t-1} | x_t, x0)`:
/// `mean = coef_t * x_t + coef_0 * x0`, standard deviation `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoefs {
    pub coef_t: f64,
    pub coef_0: f64,
    pub sigma: f64,
}

impl PosteriorCoefs {
    pub fn at(sched: &Schedule, t: usize) -> Result<Self> {
        sched.check_posterior_t(t)?;
        let a = sched.alpha(t);
        let ab = sched.alpha_bar(t);
        let ab_prev = sched.alpha_bar(t - 1);
        let denom = 1.0 - ab;
        if denom <= 0.0 {
            return Err(Error::Numeric(format!("1 - alpha_bar vanishes at t={t}")));
        }
        Ok(Self {
            coef_t: a.sqrt() * (1.0 - ab_prev) / denom,
            coef_0: ab_prev.sqrt() * (1.0 - a) / denom,
            sigma: ((1.0 - a) * (1.0 - ab_prev) / denom).max(0.0).sqrt(),
        })
    }
}

fn check_alpha(alpha: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("{what} must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// `sqrt(alpha) x_prev + sqrt(1 - alpha) noise`.
pub fn forward_step(x_prev: &[f64], alpha: f64, noise: &[f64]) -> Result<Vec<f64>> {
    check_len(x_prev.len(), noise.len())?;
    check_alpha(alpha, "alpha")?;
    let (a, b) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    Ok(x_prev.iter().zip(noise).map(|(x, e)| a * x + b * e).collect())
}

/// Draw `x_t` from `x0` in one shot.
pub fn sample_xt(x0: &[f64], alpha_bar: f64, noise: &[f64]) -> Result<Vec<f64>> {
    check_alpha(alpha_bar, "alpha_bar")?;
    forward_step(x0, alpha_bar, noise)
}

pub fn posterior_mean_sigma(
    x_t: &[f64],
    x0: &[f64],
    t: usize,
    sched: &Schedule,
) -> Result<(Vec<f64>, f64)> {
    check_len(x_t.len(), x0.len())?;
    let c = PosteriorCoefs::at(sched, t)?;
    let mean = x_t.iter().zip(x0).map(|(xt, x0)| c.coef_t * xt + c.coef_0 * x0).collect();
    Ok((mean, c.sigma))
}

/// One learned reverse step with the denoiser's estimate standing in for `x0`.
pub fn reverse_step(
    x_t: &[f64],
    x0_hat: &[f64],
    t: usize,
    sched: &Schedule,
    noise: &[f64],
) -> Result<Vec<f64>> {
    check_len(x_t.len(), noise.len())?;
    let (mean, sigma) = posterior_mean_sigma(x_t, x0_hat, t, sched)?;
    Ok(mean.iter().zip(noise).map(|(m, e)| m + sigma * e).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{cosine_schedule, Schedule, ScheduleKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
        -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
    }

    /// A three-step schedule with the hand-picked interior values
    /// alpha_2 = 0.9, alpha_bar_1 = 0.8, alpha_bar_2 = 0.72.
    fn hand_schedule() -> Schedule {
        Schedule::from_alpha_bar(vec![1.0, 0.8, 0.72, 0.0], ScheduleKind::Cosine).unwrap()
    }

    #[test]
    fn forward_step_examples() {
        assert_eq!(forward_step(&[0.3, -0.2], 1.0, &[5.0, 5.0]).unwrap(), vec![0.3, -0.2]);
        assert_eq!(forward_step(&[0.3, -0.2], 0.0, &[5.0, 4.0]).unwrap(), vec![5.0, 4.0]);
        let y = forward_step(&[1.0, 0.0], 0.64, &[1.0, 1.0]).unwrap();
        assert!((y[0] - 1.4).abs() < 1e-15 && (y[1] - 0.6).abs() < 1e-15);
        assert!(matches!(
            forward_step(&[1.0], 0.5, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sample_xt_endpoints() {
        assert_eq!(sample_xt(&[0.4], 1.0, &[2.0]).unwrap(), vec![0.4]);
        assert_eq!(sample_xt(&[0.4], 0.0, &[2.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn posterior_at_t1_collapses_to_x0() {
        let s = cosine_schedule(50).unwrap();
        let (mean, sigma) = posterior_mean_sigma(&[3.0, -1.0], &[0.25, 0.5], 1, &s).unwrap();
        assert_eq!(mean, vec![0.25, 0.5]);
        assert_eq!(sigma, 0.0);
        assert!(matches!(
            posterior_mean_sigma(&[0.0], &[0.0], 0, &s),
            Err(Error::TimestepOutOfRange { .. })
        ));
    }

    #[test]
    fn posterior_scalar_example_and_grid_bayes() {
        let s = hand_schedule();
        let (mean, sigma) = posterior_mean_sigma(&[0.5], &[1.0], 2, &s).unwrap();
        let expected = (0.9f64.sqrt() * 0.2 * 0.5 + 0.8f64.sqrt() * 0.1) / 0.28;
        assert!((mean[0] - expected).abs() < 1e-12);
        assert!((mean[0] - 0.658_253).abs() < 1e-6);

        // Brute-force Bayes: normalize q(x_t | x) q(x | x0) on a dense grid.
        let (lo, hi, n) = (-4.0, 5.0, 90_001);
        let h = (hi - lo) / (n - 1) as f64;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let x = lo + i as f64 * h;
            let w = (normal_log_pdf(0.5, 0.9f64.sqrt() * x, 0.1)
                + normal_log_pdf(x, 0.8f64.sqrt(), 0.2))
            .exp();
            z += w;
            m1 += w * x;
            m2 += w * x * x;
        }
        let grid_mean = m1 / z;
        let grid_sd = (m2 / z - grid_mean * grid_mean).sqrt();
        assert!((grid_mean - mean[0]).abs() < 1e-3);
        assert!((grid_sd - sigma).abs() < 1e-3);
    }

    #[test]
    fn posterior_is_proportional_to_kernel_product() {
        let s = cosine_schedule(40).unwrap();
        let (x0, xt) = (0.7, -0.3);
        for t in [2, 10, 25, 39] {
            let (mean, sigma) = posterior_mean_sigma(&[xt], &[x0], t, &s).unwrap();
            let (a, ab_prev) = (s.alpha(t), s.alpha_bar(t - 1));
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..=200 {
                let x = -3.0 + 0.03 * i as f64;
                let post = normal_log_pdf(x, mean[0], sigma * sigma);
                let prior = normal_log_pdf(xt, a.sqrt() * x, 1.0 - a)
                    + normal_log_pdf(x, ab_prev.sqrt() * x0, 1.0 - ab_prev);
                lo = lo.min(post - prior);
                hi = hi.max(post - prior);
            }
            assert!(hi - lo < 1e-8, "t={t} spread={}", hi - lo);
        }
    }

    #[test]
    fn posterior_variance_below_step_variance() {
        let s = cosine_schedule(100).unwrap();
        for t in 1..=100 {
            let c = PosteriorCoefs::at(&s, t).unwrap();
            assert!(c.sigma * c.sigma <= 1.0 - s.alpha(t) + 1e-15);
        }
    }

    #[test]
    fn reverse_step_examples() {
        let s = cosine_schedule(30).unwrap();
        assert_eq!(reverse_step(&[1.0], &[0.2], 1, &s, &[9.0]).unwrap(), vec![0.2]);
        let (mean, _) = posterior_mean_sigma(&[1.0], &[0.2], 7, &s).unwrap();
        assert_eq!(reverse_step(&[1.0], &[0.2], 7, &s, &[0.0]).unwrap(), mean);
    }

    #[test]
    fn oracle_chain_recovers_x0() {
        let s = cosine_schedule(100).unwrap();
        let x0 = [0.3, -0.45, 0.1, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut noise = || -> Vec<f64> { (0..4).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let mut x = noise();
        for t in (1..=100).rev() {
            x = reverse_step(&x, &x0, t, &s, &noise()).unwrap();
        }
        for (a, b) in x.iter().zip(x0) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn composed_steps_match_cumulative_moments() {
        let s = cosine_schedule(10).unwrap();
        let x0 = 0.8;
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = 6;
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            let mut x = vec![x0];
            for step in 1..=t {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = forward_step(&x, s.alpha(step), &[e]).unwrap();
            }
            m1 += x[0];
            m2 += x[0] * x[0];
        }
        let mean = m1 / n as f64;
        let var = m2 / n as f64 - mean * mean;
        let ab = s.alpha_bar(t);
        let exp_var = 1.0 - ab;
        assert!((mean - ab.sqrt() * x0).abs() < 3.0 * (exp_var / n as f64).sqrt());
        assert!((var - exp_var).abs() < 3.0 * exp_var * (2.0 / n as f64).sqrt());
    }
}
