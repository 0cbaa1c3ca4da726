//! Numbered property and oracle checks for the whole pipeline.
//!
//! Each check is self-contained and deterministic: it seeds its own ChaCha
//! streams, compares against an independent reference (quadrature, a
//! closed-form density, a second sampler, finite differences, ...) and
//! reports a [`CheckOutcome`]. The acceptance test target and the CLI's
//! `verify` command both run them through [`run_suite`].

use std::time::Instant;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::loss::loss;
use crate::denoiser::network::{DenoiserParams, NetworkConfig};
use crate::denoiser::train::{class_accuracy, train_with_callback, Optimizer, TrainConfig};
use crate::denoiser::{Denoiser, OracleDenoiser};
use crate::error::{Error, Result};
use crate::gaussian::{forward_step, sample_xt};
use crate::gs_diffusion::{forward_step_gs, posterior_mean_sigma_gs, sample_yt, smooth_onehot};
use crate::joint::{permute_rows, standard_normal_matrix, DiffusionConfig, JointProcess};
use crate::schedule::{augment_schedule, cosine_schedule, schedule_curves};
use crate::simplex::{center, gs_density, gs_log_density, gs_sample, GsParams, SimplexPoint};
use crate::sketch::arc::arc_geometry;
use crate::sketch::encoding::{decode_sketch, encode_sketch, param_slice, row_kind, NUM_CLASSES, PARAM_BLOCK};
use crate::sketch::io::{read_records, write_records};
use crate::sketch::normalize::{dedup, normalize_sketch};
use crate::sketch::primitive::{Primitive, SketchRecord};
use crate::sketch::synth::{duplicate_fixture, gen_synthetic};

/// Label smoothing used throughout the checks.
const K: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckOutcome {
    /// `[PASS] C3 name: detail (1.2s)`.
    pub fn line(&self) -> String {
        format!(
            "[{}] C{} {}: {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    /// Everything except the toy training run.
    #[default]
    Fast,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Suite::Fast),
            "all" => Ok(Suite::All),
            other => Err(Error::InvalidConfig(format!("unknown suite {other:?}, expected fast or all"))),
        }
    }
}

pub const ALL_CHECKS: [u8; 11] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

pub fn suite_checks(suite: Suite) -> Vec<u8> {
    match suite {
        Suite::Fast => ALL_CHECKS.iter().copied().filter(|id| *id != 9).collect(),
        Suite::All => ALL_CHECKS.to_vec(),
    }
}

/// Run one check by number. A check that errors out counts as failed.
pub fn run_check(id: u8) -> Result<CheckOutcome> {
    let started = Instant::now();
    let (name, res): (&str, Result<(bool, String)>) = match id {
        1 => ("density normalization", check_density_normalization()),
        2 => ("posterior density ratio", check_posterior_ratio()),
        3 => ("cumulative transition consistency", check_cumulative_consistency()),
        4 => ("retention curves", check_retention_curves()),
        5 => ("oracle reconstruction", check_oracle_reconstruction()),
        6 => ("permutation equivariance", check_equivariance()),
        7 => ("gradient check", check_gradients()),
        8 => ("loss semantics", check_loss_semantics()),
        9 => ("toy training", check_toy_training(&ToySpec::default()).map(|r| (r.passed(), r.summary()))),
        10 => ("preprocessing", check_preprocessing()),
        11 => ("arc geometry", check_arc_geometry()),
        other => return Err(Error::InvalidInput(format!("no check numbered {other}"))),
    };
    let (passed, detail) = res.unwrap_or_else(|e| (false, format!("error: {e}")));
    Ok(CheckOutcome { id, name: name.into(), passed, detail, seconds: started.elapsed().as_secs_f64() })
}

pub fn run_suite(suite: Suite) -> Vec<CheckOutcome> {
    suite_checks(suite).into_iter().map(|id| run_check(id).expect("suite ids are valid")).collect()
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn max_abs_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn encoded_corpus(records: &[SketchRecord]) -> Result<Vec<Array2<f64>>> {
    records.iter().map(|r| Ok(encode_sketch(r, K)?.into_array())).collect()
}

// ---------------------------------------------------------------- C1

/// Composite Simpson along the logit line `y = (sigmoid(s), 1 - sigmoid(s))`,
/// where `dy_1 = y_1 y_2 ds`.
fn simplex1_mass(p: &GsParams) -> Result<f64> {
    let (a, b, n) = (-60.0f64, 60.0f64, 20_000usize);
    let h = (b - a) / n as f64;
    let f = |s: f64| -> Result<f64> {
        let y1 = 1.0 / (1.0 + (-s).exp());
        if !(y1 > 0.0 && y1 < 1.0) {
            return Ok(0.0);
        }
        let y = SimplexPoint::new(vec![y1, 1.0 - y1])?;
        Ok(gs_density(&y, p)? * y1 * (1.0 - y1))
    };
    let mut acc = f(a)? + f(b)?;
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h)?;
    }
    Ok(acc * h / 3.0)
}

pub fn check_density_normalization() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for sigma in [0.5, 1.0, 2.0] {
        let mass = simplex1_mass(&GsParams::new(vec![0.7, -0.2], sigma)?)?;
        worst = worst.max((mass - 1.0).abs());
        parts.push(format!("sigma={sigma}: {mass:.8}"));
    }
    Ok((worst <= 1e-3, format!("{} (max |mass-1| {worst:.2e}, tol 1e-3)", parts.join(", "))))
}

// ---------------------------------------------------------------- C2

/// For samples `w` of the claimed posterior, `log q(w | y_t, y0)` minus
/// `log q(y_t | w) + log q(w | y0)` must not depend on `w`.
pub fn check_posterior_ratio() -> Result<(bool, String)> {
    let sched = augment_schedule(&cosine_schedule(100)?, K, 3)?;
    let y0 = smooth_onehot(0, 3, K)?;
    let yt = SimplexPoint::new(vec![0.25, 0.45, 0.30])?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for t in [10, 50, 90] {
        let (mean, sigma) = posterior_mean_sigma_gs(&yt, &y0, t, &sched)?;
        let post = GsParams::new(mean, sigma)?;
        let (a, ab_prev) = (sched.alpha(t), sched.alpha_bar(t - 1));
        let prior = GsParams::new(y0.ln()?.iter().map(|v| ab_prev.sqrt() * v).collect(), (1.0 - ab_prev).sqrt())?;
        let mut ratios = Vec::with_capacity(1000);
        for _ in 0..1000 {
            let w = gs_sample(&post, &normals(&mut rng, 3))?;
            let step = GsParams::new(w.ln()?.iter().map(|v| a.sqrt() * v).collect(), (1.0 - a).sqrt())?;
            ratios.push(gs_log_density(&w, &post)? - gs_log_density(&yt, &step)? - gs_log_density(&w, &prior)?);
        }
        let m = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let sd = (ratios.iter().map(|r| (r - m).powi(2)).sum::<f64>() / ratios.len() as f64).sqrt();
        worst = worst.max(sd);
        parts.push(format!("t={t} sd={sd:.2e}"));
    }
    Ok((worst < 1e-6, format!("{} (tol 1e-6)", parts.join(", "))))
}

// ---------------------------------------------------------------- C3

/// Running first and second moments of a vector-valued sample.
struct Moments {
    n: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    /// Products `x_i x_j` for `i <= j`, with their squares for the standard
    /// error.
    cross: Vec<f64>,
    cross_sq: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        let pairs = dim * (dim + 1) / 2;
        Self { n: 0, sum: vec![0.0; dim], sum_sq: vec![0.0; dim], cross: vec![0.0; pairs], cross_sq: vec![0.0; pairs] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let mut k = 0;
        for i in 0..x.len() {
            self.sum[i] += x[i];
            self.sum_sq[i] += x[i] * x[i];
            for j in i..x.len() {
                let p = x[i] * x[j];
                self.cross[k] += p;
                self.cross_sq[k] += p * p;
                k += 1;
            }
        }
    }

    /// `(estimate, variance of one draw)` for every tracked statistic: the
    /// means, then the second moments `E[x_i x_j]`.
    fn stats(&self) -> Vec<(f64, f64)> {
        let n = self.n as f64;
        let one = |s: f64, sq: f64| {
            let m = s / n;
            (m, (sq / n - m * m).max(0.0))
        };
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .chain(self.cross.iter().zip(&self.cross_sq))
            .map(|(s, sq)| one(*s, *sq))
            .collect()
    }
}

/// Largest two-sample z-score over all tracked statistics.
fn max_z(a: &Moments, b: &Moments) -> f64 {
    a.stats()
        .iter()
        .zip(b.stats())
        .map(|((ma, va), (mb, vb))| {
            let se = (va / a.n as f64 + vb / b.n as f64).sqrt();
            if se == 0.0 {
                if ma == &mb { 0.0 } else { f64::INFINITY }
            } else {
                (ma - mb).abs() / se
            }
        })
        .fold(0.0, f64::max)
}

/// Timesteps compared in C3. `t = T` is excluded because the schedule pins
/// `alpha_bar_T` to zero, which the product of per-step alphas does not reach.
pub const CONSISTENCY_TIMESTEPS: [usize; 2] = [5, 9];

pub fn check_cumulative_consistency() -> Result<(bool, String)> {
    const CHAINS: usize = 100_000;
    const STEPS: usize = 10;
    let last = *CONSISTENCY_TIMESTEPS.iter().max().unwrap_or(&1);

    let raw = cosine_schedule(STEPS)?;
    let x0 = [0.8, -0.35];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut composed: Vec<Moments> = CONSISTENCY_TIMESTEPS.iter().map(|_| Moments::new(2)).collect();
    let mut direct: Vec<Moments> = CONSISTENCY_TIMESTEPS.iter().map(|_| Moments::new(2)).collect();
    for _ in 0..CHAINS {
        let mut x = x0.to_vec();
        for t in 1..=last {
            x = forward_step(&x, raw.alpha(t), &normals(&mut rng, 2))?;
            if let Some(i) = CONSISTENCY_TIMESTEPS.iter().position(|c| *c == t) {
                composed[i].push(&x);
            }
        }
        for (i, t) in CONSISTENCY_TIMESTEPS.iter().enumerate() {
            direct[i].push(&sample_xt(&x0, raw.alpha_bar(*t), &normals(&mut rng, 2))?);
        }
    }
    let z_cont: Vec<f64> = composed.iter().zip(&direct).map(|(a, b)| max_z(a, b)).collect();

    let aug = augment_schedule(&raw, K, NUM_CLASSES)?;
    let y0 = smooth_onehot(1, NUM_CLASSES, K)?;
    let mut composed: Vec<Moments> = CONSISTENCY_TIMESTEPS.iter().map(|_| Moments::new(NUM_CLASSES)).collect();
    let mut direct: Vec<Moments> = CONSISTENCY_TIMESTEPS.iter().map(|_| Moments::new(NUM_CLASSES)).collect();
    for _ in 0..CHAINS {
        let mut y = y0.clone();
        for t in 1..=last {
            y = forward_step_gs(&y, aug.alpha(t), &normals(&mut rng, NUM_CLASSES))?;
            if let Some(i) = CONSISTENCY_TIMESTEPS.iter().position(|c| *c == t) {
                composed[i].push(&center(&y.ln()?));
            }
        }
        for (i, t) in CONSISTENCY_TIMESTEPS.iter().enumerate() {
            let yt = sample_yt(&y0, aug.alpha_bar(*t), &normals(&mut rng, NUM_CLASSES))?;
            direct[i].push(&center(&yt.ln()?));
        }
    }
    let z_disc: Vec<f64> = composed.iter().zip(&direct).map(|(a, b)| max_z(a, b)).collect();

    let worst = z_cont.iter().chain(&z_disc).copied().fold(0.0, f64::max);
    let fmt = |zs: &[f64]| {
        CONSISTENCY_TIMESTEPS.iter().zip(zs).map(|(t, z)| format!("t={t} z={z:.2}")).collect::<Vec<_>>().join(" ")
    };
    Ok((
        worst <= 3.0,
        format!("continuous [{}], discrete [{}] (max |z| over means and second moments, tol 3)", fmt(&z_cont), fmt(&z_disc)),
    ))
}

// ---------------------------------------------------------------- C4

pub fn check_retention_curves() -> Result<(bool, String)> {
    let rows = schedule_curves(100, NUM_CLASSES, K, 100_000, 4)?;
    let gap = |f: fn(&crate::schedule::CurveRow) -> f64| {
        rows.iter().map(|r| ((f(r) - r.target).abs(), r.t)).fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a })
    };
    let (raw_gap, raw_t) = gap(|r| r.retention_raw);
    let (aug_gap, aug_t) = gap(|r| r.retention_augmented);
    Ok((
        raw_gap > 0.2 && aug_gap <= 0.05,
        format!(
            "raw max gap {raw_gap:.4} at t={raw_t} (need > 0.2), augmented max gap {aug_gap:.4} at t={aug_t} (need <= 0.05)"
        ),
    ))
}

// ---------------------------------------------------------------- C5

fn same_sketch(a: &SketchRecord, b: &SketchRecord, tol: f64) -> bool {
    a.primitives.len() == b.primitives.len()
        && a.primitives.iter().zip(&b.primitives).all(|(p, q)| {
            p.kind == q.kind
                && p.construction == q.construction
                && p.params.iter().zip(&q.params).all(|(u, v)| (u - v).abs() <= tol)
        })
}

pub fn check_oracle_reconstruction() -> Result<(bool, String)> {
    let proc = JointProcess::new(DiffusionConfig::with_steps(100))?;
    let records = gen_synthetic(100, 55);
    let mut hits = 0;
    for (i, rec) in records.iter().enumerate() {
        let x0 = encode_sketch(rec, K)?.into_array();
        let got = proc.sample_sketch(&OracleDenoiser::new(x0.view()), 1000 + i as u64)?;
        hits += same_sketch(&got, &decode_sketch(x0.view(), ""), 1e-3) as usize;
    }
    Ok((hits >= 99, format!("{hits}/100 trials exact kinds and parameters within 1e-3 (need >= 99)")))
}

// ---------------------------------------------------------------- C6

pub fn check_equivariance() -> Result<(bool, String)> {
    let proc = JointProcess::new(DiffusionConfig::with_steps(100))?;
    let corpus = encoded_corpus(&gen_synthetic(20, 66))?;
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let (mut worst_net, mut worst_pipe): (f64, f64) = (0.0, 0.0);
    for case in 0..100u64 {
        let net = DenoiserParams::init(NetworkConfig { width: 16, depth: 2 }, case)?;
        let x0 = &corpus[case as usize % corpus.len()];
        let n = x0.nrows();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let t = rng.random_range(1..=proc.steps());

        let noise = standard_normal_matrix(n, &mut rng);
        let xt = proc.noise_sketch_with(x0.view(), t, noise.view())?;
        let xt_p = proc.noise_sketch_with(permute_rows(x0.view(), &perm).view(), t, permute_rows(noise.view(), &perm).view())?;
        worst_pipe = worst_pipe.max(max_abs_diff(xt_p.x.view(), permute_rows(xt.x.view(), &perm).view()));

        let out = net.forward(xt.x.view(), t)?;
        let out_p = net.forward(xt_p.x.view(), t)?;
        worst_net = worst_net.max(max_abs_diff(out_p.view(), permute_rows(out.view(), &perm).view()));

        let noises: Vec<Array2<f64>> = (0..=proc.steps()).map(|_| standard_normal_matrix(n, &mut rng)).collect();
        let start = proc.initial_state(noises[proc.steps()].view())?;
        let start_p = proc.initial_state(permute_rows(noises[proc.steps()].view(), &perm).view())?;
        let end = proc.run_reverse(&net, start, |t| noises[t - 1].clone())?;
        let end_p = proc.run_reverse(&net, start_p, |t| permute_rows(noises[t - 1].view(), &perm))?;
        worst_pipe = worst_pipe.max(max_abs_diff(end_p.view(), permute_rows(end.view(), &perm).view()));
    }
    Ok((
        worst_net <= 1e-9 && worst_pipe <= 1e-9,
        format!("100 cases: network max diff {worst_net:.2e}, noising and sampling max diff {worst_pipe:.2e} (tol 1e-9)"),
    ))
}

// ---------------------------------------------------------------- C7

/// Gradient norms below this are treated as zero: the error is then measured
/// against the floor instead. Key biases land here, since adding the same
/// vector to every key leaves each attention softmax unchanged.
pub const GRAD_NORM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradError {
    pub name: String,
    /// `error / max(norm, GRAD_NORM_FLOOR)`.
    pub relative: f64,
    /// `|analytic - numeric|` over the whole tensor.
    pub error: f64,
    /// `|numeric|` over the whole tensor.
    pub norm: f64,
}

/// Analytic against central-difference gradients of the training loss on a
/// three-row, width-8 network, one entry per parameter tensor.
pub fn gradient_errors(seed: u64) -> Result<Vec<GradError>> {
    let cfg = TrainConfig::for_steps(100);
    let proc = JointProcess::new(cfg.diffusion.clone())?;
    let rec = SketchRecord::new(
        "grad",
        vec![Primitive::line(-0.4, 0.1, 0.3, 0.2), Primitive::arc(0.0, -0.2, 0.3, -0.1, 0.4), Primitive::point(0.1, 0.4)],
    );
    let x0 = encode_sketch(&rec, K)?.into_array().slice(s![0..3, ..]).to_owned();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = 5;
    let xt = proc.noise_sketch(x0.view(), t, &mut rng)?;
    let params = DenoiserParams::init(NetworkConfig { width: 8, depth: 2 }, seed)?;
    let objective = |p: &DenoiserParams| -> Result<f64> {
        Ok(loss(p.forward(xt.x.view(), t)?.view(), x0.view(), t, &cfg)?.0.total)
    };
    let cache = params.forward_cached(xt.x.view(), t)?;
    let (_, dpred) = loss(cache.output().view(), x0.view(), t, &cfg)?;
    let grads = params.backward(&cache, dpred.view());

    let eps = 1e-5;
    let mut out = Vec::new();
    for (gi, (name, _, analytic)) in grads.tensors().into_iter().enumerate() {
        let (mut num, mut den) = (0.0, 0.0);
        for (j, a) in analytic.iter().enumerate() {
            let mut up = params.clone();
            up.tensors_mut()[gi].1[j] += eps;
            let mut dn = params.clone();
            dn.tensors_mut()[gi].1[j] -= eps;
            let fd = (objective(&up)? - objective(&dn)?) / (2.0 * eps);
            num += (a - fd).powi(2);
            den += fd * fd;
        }
        let (err, norm) = (num.sqrt(), den.sqrt());
        out.push(GradError { name, relative: err / norm.max(GRAD_NORM_FLOOR), error: err, norm });
    }
    Ok(out)
}

pub fn check_gradients() -> Result<(bool, String)> {
    let errs = gradient_errors(7)?;
    let worst = errs
        .iter()
        .max_by(|a, b| a.relative.total_cmp(&b.relative))
        .ok_or_else(|| Error::Numeric("network has no tensors".into()))?;
    let vanishing: Vec<&str> = errs.iter().filter(|e| e.norm < GRAD_NORM_FLOOR).map(|e| e.name.as_str()).collect();
    Ok((
        worst.relative < 1e-3,
        format!(
            "{} tensors, worst relative error {:.2e} in {} (tol 1e-3); vanishing gradients in [{}]",
            errs.len(),
            worst.relative,
            worst.name,
            vanishing.join(", ")
        ),
    ))
}

// ---------------------------------------------------------------- C8

pub fn check_loss_semantics() -> Result<(bool, String)> {
    let rec = SketchRecord::new(
        "loss",
        vec![
            Primitive::line(-0.5, 0.1, 0.5, 0.2),
            Primitive::circle(0.1, 0.1, 0.2).as_construction(),
            Primitive::arc(-0.2, -0.3, 0.2, -0.3, -0.25),
            Primitive::point(0.0, 0.3),
        ],
    );
    let x0 = encode_sketch(&rec, K)?.into_array();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pred = x0.clone();
    pred.slice_mut(s![.., PARAM_BLOCK]).mapv_inplace(|v| v + rng.random_range(-0.5..0.5));
    let cfg = TrainConfig::for_steps(2000);
    let (_, grad) = loss(pred.view(), x0.view(), 10, &cfg)?;
    let mut masked_nonzero = 0usize;
    let mut masked_total = 0usize;
    for (i, r0) in x0.rows().into_iter().enumerate() {
        let live = param_slice(row_kind(r0));
        for j in PARAM_BLOCK {
            if !live.as_ref().is_some_and(|r| r.contains(&j)) {
                masked_total += 1;
                masked_nonzero += (grad[[i, j]] != 0.0) as usize;
            }
        }
    }
    let (lo, g_lo) = loss(pred.view(), x0.view(), 150, &cfg)?;
    let (hi, g_hi) = loss(pred.view(), x0.view(), 151, &cfg)?;
    let factor = (lo.mse_weight * lo.mse) / (hi.mse_weight * hi.mse);
    // Every live parameter gradient must scale by the same exact factor.
    let grad_factors_exact = x0.rows().into_iter().enumerate().all(|(i, r0)| {
        param_slice(row_kind(r0)).is_none_or(|r| r.into_iter().all(|j| g_lo[[i, j]] == 16.0 * g_hi[[i, j]]))
    });
    Ok((
        masked_nonzero == 0 && factor == 16.0 && lo.mse == hi.mse && grad_factors_exact,
        format!(
            "{masked_nonzero}/{masked_total} masked gradient entries non-zero, squared-error factor t=150 vs t=151 is {factor} (need exactly 16), live gradients scale exactly: {grad_factors_exact}"
        ),
    ))
}

// ---------------------------------------------------------------- C9

/// Class accuracy on primitive rows, after noising to `t = 10`, that the toy
/// run must beat.
pub const MIN_ACCURACY_T10: f64 = 0.9;

/// Settings of the toy training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub corpus_size: usize,
    pub corpus_seed: u64,
    pub train: TrainConfig,
    /// Epochs at which the ELBO is evaluated; must include 1 and the last.
    pub elbo_epochs: Vec<usize>,
    /// Corpus sketches used for the ELBO, the same at every epoch.
    pub elbo_subset: usize,
    pub elbo_mc: usize,
    pub samples: usize,
    pub loss_drop: f64,
    pub max_tv: f64,
}

/// The optimizer and rate used for the toy run; see [`ToySpec::default`].
pub fn toy_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        optimizer: Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
        stratify_timesteps: true,
        epochs: 200,
        seed,
        ..TrainConfig::for_steps(100)
    }
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            corpus_size: 500,
            corpus_seed: 1,
            train: toy_train_config(1),
            elbo_epochs: vec![1, 50, 200],
            elbo_subset: 16,
            elbo_mc: 1,
            samples: 500,
            loss_drop: 0.5,
            max_tv: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyReport {
    pub first_loss: f64,
    pub last_loss: f64,
    pub loss_drop: f64,
    pub tv: f64,
    pub corpus_hist: [f64; NUM_CLASSES],
    pub sample_hist: [f64; NUM_CLASSES],
    /// `(epoch, mean bits per sketch)` on the fixed subset.
    pub elbo: Vec<(usize, f64)>,
    pub accuracy_t10: f64,
    pub diverged: Option<String>,
    pub required_drop: f64,
    pub max_tv: f64,
}

impl ToyReport {
    pub fn elbo_decreasing(&self) -> bool {
        self.elbo.len() >= 2 && self.elbo.windows(2).all(|w| w[1].1 < w[0].1)
    }

    pub fn passed(&self) -> bool {
        self.diverged.is_none()
            && self.loss_drop >= self.required_drop
            && self.tv <= self.max_tv
            && self.elbo_decreasing()
            && self.accuracy_t10 > MIN_ACCURACY_T10
    }

    pub fn summary(&self) -> String {
        let elbo: Vec<String> = self.elbo.iter().map(|(e, b)| format!("{e}:{b:.2}")).collect();
        format!(
            "loss {:.4} -> {:.4} (drop {:.1}%, need >= {:.0}%), class TV {:.4} (need <= {}), elbo bits/sketch [{}] {}, accuracy at t=10 {:.3} (need > {MIN_ACCURACY_T10}){}",
            self.first_loss,
            self.last_loss,
            100.0 * self.loss_drop,
            100.0 * self.required_drop,
            self.tv,
            self.max_tv,
            elbo.join(", "),
            if self.elbo_decreasing() { "decreasing" } else { "NOT decreasing" },
            self.accuracy_t10,
            self.diverged.as_ref().map(|d| format!(", diverged: {d}")).unwrap_or_default()
        )
    }
}

/// Fraction of rows of each class, padding included.
pub fn class_histogram<'a>(rows: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> [f64; NUM_CLASSES] {
    let mut h = [0.0; NUM_CLASSES];
    let mut total = 0.0;
    for m in rows {
        for r in m.rows() {
            h[row_kind(r).index()] += 1.0;
            total += 1.0;
        }
    }
    if total > 0.0 {
        h.iter_mut().for_each(|v| *v /= total);
    }
    h
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn mean_elbo<D: Denoiser + ?Sized>(proc: &JointProcess, den: &D, subset: &[Array2<f64>], mc: usize) -> Result<f64> {
    let mut acc = 0.0;
    for (i, x0) in subset.iter().enumerate() {
        acc += proc.elbo_bits(den, x0.view(), mc, 9000 + i as u64)?.bits_per_sketch;
    }
    Ok(acc / subset.len().max(1) as f64)
}

pub fn check_toy_training(spec: &ToySpec) -> Result<ToyReport> {
    let corpus = encoded_corpus(&gen_synthetic(spec.corpus_size, spec.corpus_seed))?;
    let proc = JointProcess::new(spec.train.diffusion.clone())?;
    let subset = &corpus[..spec.elbo_subset.min(corpus.len())];
    let mut elbo = Vec::new();
    let mut failure = None;
    let outcome = train_with_callback(&corpus, &spec.train, |epoch, params, _| {
        if failure.is_none() && spec.elbo_epochs.contains(&epoch) {
            match mean_elbo(&proc, params, subset, spec.elbo_mc) {
                Ok(b) => elbo.push((epoch, b)),
                Err(e) => failure = Some(e),
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let first = *outcome.history.first().ok_or_else(|| Error::InvalidConfig("no epochs were run".into()))?;
    let last = *outcome.history.last().unwrap_or(&first);

    let samples: Vec<Array2<f64>> =
        (0..spec.samples as u64).map(|seed| proc.sample_matrix(&outcome.params, 50_000 + seed)).collect::<Result<_>>()?;
    let corpus_hist = class_histogram(corpus.iter().map(|m| m.view()));
    let sample_hist = class_histogram(samples.iter().map(|m| m.view()));
    let acc = class_accuracy(&outcome.params, &proc, &corpus, 10, 77)?;
    Ok(ToyReport {
        first_loss: first,
        last_loss: last,
        loss_drop: 1.0 - last / first,
        tv: total_variation(&corpus_hist, &sample_hist),
        corpus_hist,
        sample_hist,
        elbo,
        accuracy_t10: acc.primitive_rows,
        diverged: outcome.diverged,
        required_drop: spec.loss_drop,
        max_tv: spec.max_tv,
    })
}

// ---------------------------------------------------------------- C10

/// Scale by `scale` and shift by `(dx, dy)`; lengths only scale.
fn transform(rec: &SketchRecord, scale: f64, dx: f64, dy: f64) -> SketchRecord {
    let mut out = rec.clone();
    for p in &mut out.primitives {
        let kind = p.kind;
        for (i, v) in p.params.iter_mut().enumerate() {
            *v = if kind.is_length_param(i) {
                *v * scale
            } else {
                *v * scale + if i % 2 == 0 { dx } else { dy }
            };
        }
    }
    out
}

fn max_param_diff(a: &SketchRecord, b: &SketchRecord) -> f64 {
    a.primitives
        .iter()
        .zip(&b.primitives)
        .flat_map(|(p, q)| p.params.iter().zip(&q.params).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

pub fn check_preprocessing() -> Result<(bool, String)> {
    let (kept, dropped) = dedup(duplicate_fixture(60, 40, 10));
    let unique_ok = kept.len() == 60 && dropped == 40;

    let records = gen_synthetic(1000, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut idem: f64 = 0.0;
    for rec in records.iter().take(200) {
        let moved = transform(rec, rng.random_range(0.1..20.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let once = normalize_sketch(&moved)?;
        let twice = normalize_sketch(&once)?;
        idem = idem.max(max_param_diff(&once, &twice));
    }

    let mut mismatched = 0usize;
    for rec in &records {
        let back = decode_sketch(encode_sketch(rec, K)?.view(), rec.id.clone());
        mismatched += (back.primitives != rec.primitives) as usize;
    }
    let mut bytes = Vec::new();
    write_records(&mut bytes, &records)?;
    let jsonl_ok = read_records(&bytes[..])? == records;

    Ok((
        unique_ok && idem <= 1e-12 && mismatched == 0 && jsonl_ok,
        format!(
            "fixture -> {} unique ({dropped} dropped, need 60), normalize idempotence max diff {idem:.1e} (tol 1e-12), encode/decode mismatches {mismatched}/1000, jsonl round trip {}",
            kept.len(),
            if jsonl_ok { "exact" } else { "MISMATCH" }
        ),
    ))
}

// ---------------------------------------------------------------- C11

fn reflect(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let s = ((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2;
    let foot = (a.0 + s * dx, a.1 + s * dy);
    (2.0 * foot.0 - p.0, 2.0 * foot.1 - p.1)
}

pub fn check_arc_geometry() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut wrongly_rejected = 0usize;
    let mut wrongly_accepted = 0usize;
    for _ in 0..1000 {
        let a: (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let b: (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let chord = (b.0 - a.0).hypot(b.1 - a.1);
        if chord < 1e-3 {
            continue;
        }
        let kappa = chord / 2.0 * rng.random_range(1.0..4.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let (pos, neg) = match (arc_geometry(a.0, a.1, b.0, b.1, kappa), arc_geometry(a.0, a.1, b.0, b.1, -kappa)) {
            (Ok(p), Ok(n)) => (p, n),
            _ => {
                wrongly_rejected += 1;
                continue;
            }
        };
        let c = reflect(pos.center, a, b);
        worst = worst.max((c.0 - neg.center.0).abs()).max((c.1 - neg.center.1).abs());
        worst = worst.max((pos.radius - neg.radius).abs());
        for s in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let p = reflect(pos.point_at(s), a, b);
            let q = neg.point_at(s);
            worst = worst.max((p.0 - q.0).abs()).max((p.1 - q.1).abs());
        }

        let short = chord / 2.0 * rng.random_range(0.01..0.999);
        for k in [short, -short] {
            if !matches!(arc_geometry(a.0, a.1, b.0, b.1, k), Err(Error::ImpossibleArc { .. })) {
                wrongly_accepted += 1;
            }
        }
    }
    Ok((
        worst <= 1e-9 && wrongly_rejected == 0 && wrongly_accepted == 0,
        format!(
            "reflection max diff {worst:.2e} (tol 1e-9), valid arcs rejected {wrongly_rejected}, impossible arcs accepted {wrongly_accepted}"
        ),
    ))
}
