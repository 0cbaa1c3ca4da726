//! Variance schedules.
//!
//! A [`Schedule`] stores the cumulative signal fractions `alpha_bar[0..=T]`
//! together with the per-step fractions `alpha[t] = alpha_bar[t] /
//! alpha_bar[t-1]`. The raw schedule is the cosine schedule; the discrete
//! (Gaussian-Softmax) path runs on an augmented copy whose argmax retention
//! approximately tracks `r_t + (1 - r_t) / D` for the raw values `r_t`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gs_diffusion::{sample_yt, smooth_onehot};

/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Lower clip on the per-step signal fraction of the cosine schedule.
pub const MIN_STEP_ALPHA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScheduleKind {
    Cosine,
    Augmented { smoothing_k: f64, num_classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    alpha_bar: Vec<f64>,
    alpha: Vec<f64>,
    kind: ScheduleKind,
}

impl Schedule {
    /// Build from explicit cumulative values. Endpoints are pinned to exactly
    /// 1 and 0; the last step's `alpha` comes from the clamped value
    /// because `alpha_bar[T] = 0` would otherwise make it 0.
    pub fn from_alpha_bar(mut alpha_bar: Vec<f64>, kind: ScheduleKind) -> Result<Self> {
        if alpha_bar.len() < 3 {
            return Err(Error::InvalidConfig(format!(
                "a schedule needs T >= 2, got T = {}",
                alpha_bar.len().saturating_sub(1)
            )));
        }
        let t_max = alpha_bar.len() - 1;
        for (t, w) in alpha_bar.windows(2).enumerate() {
            if !(w[1] <= w[0]) || !w[1].is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "alpha_bar increases between t={t} and t={}",
                    t + 1
                )));
            }
        }
        if (alpha_bar[0] - 1.0).abs() > 1e-12 || alpha_bar[t_max].abs() > 1e-12 {
            return Err(Error::InvalidConfig(
                "alpha_bar must start at 1 and end at 0".into(),
            ));
        }
        alpha_bar[0] = 1.0;
        alpha_bar[t_max] = 0.0;

        let mut alpha = vec![1.0; t_max + 1];
        for t in 1..=t_max {
            let prev = alpha_bar[t - 1];
            let ratio = if prev > 0.0 { alpha_bar[t] / prev } else { 0.0 };
            alpha[t] = if ratio > 0.0 { ratio.min(1.0) } else { MIN_STEP_ALPHA };
        }
        Ok(Self { alpha_bar, alpha, kind })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub(crate) fn check_posterior_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::TimestepOutOfRange { t, min: 1, max: self.steps() })
        } else {
            Ok(())
        }
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            Err(Error::TimestepOutOfRange { t, min: 0, max: self.steps() })
        } else {
            Ok(())
        }
    }
}

/// Cosine schedule `alpha_bar(t) = g(t) / g(0)` with
/// `g(t) = cos^2(((t/T + s) / (1 + s)) pi/2)`, per-step fractions clipped at
/// [`MIN_STEP_ALPHA`].
pub fn cosine_schedule(steps: usize) -> Result<Schedule> {
    if steps < 2 {
        return Err(Error::InvalidConfig(format!("cosine schedule needs T >= 2, got {steps}")));
    }
    let g = |t: usize| {
        let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
        (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
    };
    let g0 = g(0);
    let unclipped: Vec<f64> = (0..=steps).map(|t| g(t) / g0).collect();
    let mut alpha_bar = vec![1.0; steps + 1];
    for t in 1..=steps {
        let ratio = unclipped[t] / unclipped[t - 1];
        alpha_bar[t] = if ratio >= MIN_STEP_ALPHA {
            // Use the closed form while unclipped to avoid drift from the product.
            if alpha_bar[t - 1] == unclipped[t - 1] {
                unclipped[t]
            } else {
                alpha_bar[t - 1] * ratio
            }
        } else {
            alpha_bar[t - 1] * MIN_STEP_ALPHA
        };
    }
    alpha_bar[steps] = 0.0;
    Schedule::from_alpha_bar(alpha_bar, ScheduleKind::Cosine)
}

/// `log((1 - x) / ((D - 1) x + 1))`, the log-ratio between a non-label and
/// the label entry of `x e + (1 - x)/D 1`. Returns `-inf` at `x = 1`.
pub fn f_logit_ratio(x: f64, num_classes: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("logit ratio needs x in [0, 1], got {x}")));
    }
    if x == 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let d = num_classes as f64;
    Ok(((1.0 - x) / ((d - 1.0) * x + 1.0)).ln())
}

/// Map a desired retention level `r` to the cumulative value to use in the
/// discrete transition: `f(r)^2 / (f(r)^2 + f(k)^2)`.
pub fn augment_value(r: f64, k: f64, num_classes: usize) -> Result<f64> {
    let fk = f_logit_ratio(k, num_classes)?;
    let fr = f_logit_ratio(r, num_classes)?;
    if fr.is_infinite() {
        return Ok(1.0);
    }
    let (a, b) = (fr * fr, fk * fk);
    Ok(a / (a + b))
}

pub fn augment_schedule(raw: &Schedule, k: f64, num_classes: usize) -> Result<Schedule> {
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::InvalidConfig(format!("smoothing k must lie in (0, 1), got {k}")));
    }
    if num_classes < 2 {
        return Err(Error::InvalidConfig("augmentation needs D >= 2".into()));
    }
    let values = raw
        .alpha_bars()
        .iter()
        .map(|&r| augment_value(r, k, num_classes))
        .collect::<Result<Vec<_>>>()?;
    Schedule::from_alpha_bar(values, ScheduleKind::Augmented { smoothing_k: k, num_classes })
}

/// `r + (1 - r) / D`: the retention the augmentation aims for.
pub fn retention_target(raw_alpha_bar: f64, num_classes: usize) -> f64 {
    raw_alpha_bar + (1.0 - raw_alpha_bar) / num_classes as f64
}

/// Monte Carlo estimate of `P(argmax y_t = argmax y_0)` for every `t`,
/// drawing `y_t` through the discrete cumulative transition with `sched`'s
/// values. Each timestep uses its own ChaCha stream, so the result is
/// bit-for-bit reproducible regardless of thread count.
pub fn estimate_retention(
    sched: &Schedule,
    num_classes: usize,
    k: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if trials < 1000 {
        return Err(Error::InvalidConfig(format!("retention needs >= 1000 trials, got {trials}")));
    }
    let y0 = smooth_onehot(0, num_classes, k)?;
    (0..=sched.steps())
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let mut noise = vec![0.0; num_classes];
            let mut kept = 0usize;
            for _ in 0..trials {
                for e in noise.iter_mut() {
                    *e = StandardNormal.sample(&mut rng);
                }
                if sample_yt(&y0, sched.alpha_bar(t), &noise)?.argmax() == 0 {
                    kept += 1;
                }
            }
            Ok((t, kept as f64 / trials as f64))
        })
        .collect()
}

/// One row of the schedule-curve table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub t: usize,
    pub raw_alpha_bar: f64,
    pub augmented: f64,
    pub retention_raw: f64,
    pub retention_augmented: f64,
    pub target: f64,
}

pub fn schedule_curves(
    steps: usize,
    num_classes: usize,
    k: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<CurveRow>> {
    let raw = cosine_schedule(steps)?;
    let aug = augment_schedule(&raw, k, num_classes)?;
    let ret_raw = estimate_retention(&raw, num_classes, k, trials, seed)?;
    let ret_aug = estimate_retention(&aug, num_classes, k, trials, seed.wrapping_add(1))?;
    Ok((0..=steps)
        .map(|t| CurveRow {
            t,
            raw_alpha_bar: raw.alpha_bar(t),
            augmented: aug.alpha_bar(t),
            retention_raw: ret_raw[t].1,
            retention_augmented: ret_aug[t].1,
            target: retention_target(raw.alpha_bar(t), num_classes),
        })
        .collect())
}

pub const CURVE_CSV_HEADER: &str =
    "t,raw_alpha_bar,augmented,retention_raw,retention_augmented,target";

pub fn curves_to_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(CURVE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:.12},{:.12},{:.6},{:.6},{:.12}\n",
            r.t, r.raw_alpha_bar, r.augmented, r.retention_raw, r.retention_augmented, r.target
        ));
    }
    out
}
