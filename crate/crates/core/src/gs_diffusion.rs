//! Gaussian-Softmax diffusion of categorical labels.
//!
//! The discrete process is continuous diffusion on log-probabilities followed
//! by a softmax projection back onto the simplex. All schedule values passed
//! in here are expected to come from the augmented schedule.

use crate::error::{check_len, Error, Result};
use crate::gaussian::PosteriorCoefs;
use crate::schedule::Schedule;
use crate::simplex::{softmax, SimplexPoint};

/// Mix a probability vector with the uniform vector: `k y + (1 - k)/D`.
pub fn smooth_probs(y: &[f64], k: f64) -> Vec<f64> {
    let floor = (1.0 - k) / y.len() as f64;
    y.iter().map(|v| k * v + floor).collect()
}

/// Label-smoothed one-hot vector `k e_label + (1 - k)/D 1`.
pub fn smooth_onehot(label: usize, num_classes: usize, k: f64) -> Result<SimplexPoint> {
    if label >= num_classes {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {num_classes} classes"
        )));
    }
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::InvalidConfig(format!("smoothing k must lie in (0, 1), got {k}")));
    }
    let mut onehot = vec![0.0; num_classes];
    onehot[label] = 1.0;
    SimplexPoint::new(smooth_probs(&onehot, k))
}

fn scaled_logits(y: &SimplexPoint, scale: f64, noise: &[f64], noise_scale: f64) -> Result<Vec<f64>> {
    check_len(y.dim(), noise.len())?;
    Ok(y.ln()?
        .iter()
        .zip(noise)
        .map(|(l, e)| scale * l + noise_scale * e)
        .collect())
}

/// `softmax(sqrt(alpha) log y + sqrt(1 - alpha) noise)`.
pub fn forward_step_gs(y: &SimplexPoint, alpha: f64, noise: &[f64]) -> Result<SimplexPoint> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    softmax(&scaled_logits(y, alpha.sqrt(), noise, (1.0 - alpha).sqrt())?)
}

/// Draw `y_t` from the smoothed label `y0'` in one shot.
pub fn sample_yt(y0_smoothed: &SimplexPoint, alpha_bar: f64, noise: &[f64]) -> Result<SimplexPoint> {
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(Error::Domain(format!("alpha_bar must lie in [0, 1], got {alpha_bar}")));
    }
    softmax(&scaled_logits(y0_smoothed, alpha_bar.sqrt(), noise, (1.0 - alpha_bar).sqrt())?)
}

/// Posterior `q(y_{t-1} | y_t, y0)`: a Gaussian-Softmax distribution whose
/// mean logits interpolate `log y_t` and `log y0`. The mean is defined only
/// up to a shift along the all-ones direction.
pub fn posterior_mean_sigma_gs(
    y_t: &SimplexPoint,
    y0: &SimplexPoint,
    t: usize,
    sched: &Schedule,
) -> Result<(Vec<f64>, f64)> {
    check_len(y_t.dim(), y0.dim())?;
    let c = PosteriorCoefs::at(sched, t)?;
    let (lt, l0) = (y_t.ln()?, y0.ln()?);
    let mean = lt.iter().zip(&l0).map(|(a, b)| c.coef_t * a + c.coef_0 * b).collect();
    Ok((mean, c.sigma))
}

/// One learned reverse step; `y0_hat` must already be interior (smoothed).
pub fn reverse_step_gs(
    y_t: &SimplexPoint,
    y0_hat: &SimplexPoint,
    t: usize,
    sched: &Schedule,
    noise: &[f64],
) -> Result<SimplexPoint> {
    check_len(y_t.dim(), noise.len())?;
    let (mean, sigma) = posterior_mean_sigma_gs(y_t, y0_hat, t, sched)?;
    let logits: Vec<f64> = mean.iter().zip(noise).map(|(m, e)| m + sigma * e).collect();
    softmax(&logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::posterior_mean_sigma;
    use crate::schedule::{augment_schedule, cosine_schedule};
    use crate::simplex::{center, gs_log_density, gs_sample, GsParams};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn aug(steps: usize, d: usize) -> Schedule {
        augment_schedule(&cosine_schedule(steps).unwrap(), 0.99, d).unwrap()
    }

    #[test]
    fn smoothing_example() {
        let y = smooth_onehot(0, 5, 0.99).unwrap();
        let expected = [0.992, 0.002, 0.002, 0.002, 0.002];
        for (a, b) in y.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let near = smooth_onehot(2, 4, 1.0 - 1e-12).unwrap();
        assert!((near.values()[2] - 1.0).abs() < 1e-11);
        assert!(smooth_onehot(5, 5, 0.99).is_err());
    }

    #[test]
    fn forward_step_fixed_points() {
        let y = SimplexPoint::new(vec![0.6, 0.3, 0.1]).unwrap();
        let out = forward_step_gs(&y, 1.0, &[3.0, -2.0, 1.0]).unwrap();
        for (a, b) in out.values().iter().zip(y.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let u = SimplexPoint::uniform(4);
        let out = forward_step_gs(&u, 0.3, &[0.0; 4]).unwrap();
        for v in out.values() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_step_near_zero_alpha_is_uniform_label() {
        let y = smooth_onehot(1, 5, 0.99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 50_000;
        let mut hits = 0;
        for _ in 0..n {
            if forward_step_gs(&y, 1e-12, &normals(&mut rng, 5)).unwrap().argmax() == 1 {
                hits += 1;
            }
        }
        let se = (0.16f64 / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - 0.2).abs() < 3.0 * se);
    }

    #[test]
    fn sample_yt_endpoints() {
        let y0 = smooth_onehot(3, 5, 0.99).unwrap();
        let out = sample_yt(&y0, 1.0, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        for (a, b) in out.values().iter().zip(y0.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let e = [0.1, -0.4, 2.0, 0.0, 1.0];
        assert_eq!(sample_yt(&y0, 0.0, &e).unwrap(), softmax(&e).unwrap());
    }

    #[test]
    fn posterior_t1_returns_y0_logits() {
        let s = aug(20, 3);
        let y0 = SimplexPoint::new(vec![0.7, 0.2, 0.1]).unwrap();
        let yt = SimplexPoint::new(vec![0.1, 0.1, 0.8]).unwrap();
        let (mean, sigma) = posterior_mean_sigma_gs(&yt, &y0, 1, &s).unwrap();
        assert_eq!(sigma, 0.0);
        let back = softmax(&mean).unwrap();
        for (a, b) in back.values().iter().zip(y0.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let out = reverse_step_gs(&yt, &y0, 1, &s, &[5.0, -5.0, 1.0]).unwrap();
        assert_eq!(out.argmax(), 0);
    }

    #[test]
    fn posterior_of_equal_endpoints_is_shifted_log() {
        let s = aug(20, 3);
        let y = SimplexPoint::new(vec![0.5, 0.3, 0.2]).unwrap();
        let (mean, _) = posterior_mean_sigma_gs(&y, &y, 9, &s).unwrap();
        let c = center(&mean);
        let expected = crate::simplex::center_logits(&y).unwrap();
        // Equal endpoints collapse to log y scaled; softmax of the mean
        // sharpens or softens y but keeps the centered direction.
        let ratio = c[0] / expected[0];
        for (a, b) in c.iter().zip(&expected) {
            assert!((a - ratio * b).abs() < 1e-12);
        }
    }

    #[test]
    fn reverse_with_zero_noise_is_softmax_of_mean() {
        let s = aug(20, 3);
        let y0 = SimplexPoint::new(vec![0.7, 0.2, 0.1]).unwrap();
        let yt = SimplexPoint::new(vec![0.2, 0.5, 0.3]).unwrap();
        let (mean, _) = posterior_mean_sigma_gs(&yt, &y0, 7, &s).unwrap();
        assert_eq!(reverse_step_gs(&yt, &y0, 7, &s, &[0.0; 3]).unwrap(), softmax(&mean).unwrap());
    }

    #[test]
    fn posterior_matches_continuous_formula_on_logits() {
        let s = aug(50, 4);
        let y0 = SimplexPoint::new(vec![0.1, 0.6, 0.2, 0.1]).unwrap();
        let yt = SimplexPoint::new(vec![0.3, 0.3, 0.3, 0.1]).unwrap();
        for t in [1, 5, 30, 50] {
            let (gs_mean, gs_sigma) = posterior_mean_sigma_gs(&yt, &y0, t, &s).unwrap();
            let (c_mean, c_sigma) =
                posterior_mean_sigma(&yt.ln().unwrap(), &y0.ln().unwrap(), t, &s).unwrap();
            assert_eq!(gs_sigma, c_sigma);
            assert_eq!(gs_mean, c_mean);
        }
    }

    #[test]
    fn posterior_density_ratio_is_constant() {
        let s = aug(100, 3);
        let y0 = smooth_onehot(0, 3, 0.99).unwrap();
        let yt = SimplexPoint::new(vec![0.25, 0.45, 0.30]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for t in [10, 50, 90] {
            let (mean, sigma) = posterior_mean_sigma_gs(&yt, &y0, t, &s).unwrap();
            let post = GsParams::new(mean, sigma).unwrap();
            let (a, ab_prev) = (s.alpha(t), s.alpha_bar(t - 1));
            let l0: Vec<f64> = y0.ln().unwrap().iter().map(|v| ab_prev.sqrt() * v).collect();
            let prior = GsParams::new(l0, (1.0 - ab_prev).sqrt()).unwrap();
            let ratios: Vec<f64> = (0..1000)
                .map(|_| {
                    let w = gs_sample(&post, &normals(&mut rng, 3)).unwrap();
                    let lw: Vec<f64> = w.ln().unwrap().iter().map(|v| a.sqrt() * v).collect();
                    let step = GsParams::new(lw, (1.0 - a).sqrt()).unwrap();
                    gs_log_density(&w, &post).unwrap()
                        - gs_log_density(&yt, &step).unwrap()
                        - gs_log_density(&w, &prior).unwrap()
                })
                .collect();
            let mean_r = ratios.iter().sum::<f64>() / ratios.len() as f64;
            let sd = (ratios.iter().map(|r| (r - mean_r).powi(2)).sum::<f64>()
                / ratios.len() as f64)
                .sqrt();
            assert!(sd < 1e-6, "t={t} sd={sd}");
        }
    }

    #[test]
    fn oracle_chain_recovers_label() {
        let s = aug(100, 5);
        let y0 = smooth_onehot(2, 5, 0.99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut correct = 0;
        for _ in 0..1000 {
            let mut y = softmax(&normals(&mut rng, 5)).unwrap();
            for t in (1..=100).rev() {
                y = reverse_step_gs(&y, &y0, t, &s, &normals(&mut rng, 5)).unwrap();
            }
            if y.argmax() == 2 {
                correct += 1;
            }
        }
        assert!(correct >= 990, "{correct}");
    }

    proptest! {
        #[test]
        fn transitions_stay_on_the_simplex(
            label in 0usize..5,
            t in 1usize..=40,
            seed in any::<u64>(),
        ) {
            let s = aug(40, 5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y0 = smooth_onehot(label, 5, 0.99).unwrap();
            let yt = sample_yt(&y0, s.alpha_bar(t), &normals(&mut rng, 5)).unwrap();
            let prev = reverse_step_gs(&yt, &y0, t, &s, &normals(&mut rng, 5)).unwrap();
            let fwd = forward_step_gs(&yt, s.alpha(t), &normals(&mut rng, 5)).unwrap();
            for p in [&yt, &prev, &fwd] {
                prop_assert!((p.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(p.is_interior());
            }
        }

        #[test]
        fn reverse_step_ignores_logit_shifts(
            seed in any::<u64>(),
            c in -10.0f64..10.0,
            t in 2usize..=30,
        ) {
            let s = aug(30, 4);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let yt = softmax(&normals(&mut rng, 4)).unwrap();
            let y0 = softmax(&normals(&mut rng, 4)).unwrap();
            let e = normals(&mut rng, 4);
            let (mean, sigma) = posterior_mean_sigma_gs(&yt, &y0, t, &s).unwrap();
            let a: Vec<f64> = mean.iter().zip(&e).map(|(m, n)| m + sigma * n).collect();
            let b: Vec<f64> = a.iter().map(|v| v + c).collect();
            let (pa, pb) = (softmax(&a).unwrap(), softmax(&b).unwrap());
            for (x, y) in pa.values().iter().zip(pb.values()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
