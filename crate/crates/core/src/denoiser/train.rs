//! Minibatch gradient training of the network denoiser.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::joint::{DiffusionConfig, JointProcess};
use crate::simplex::argmax;
use crate::sketch::encoding::{row_kind, CLASS_BLOCK};
use crate::sketch::primitive::PrimitiveKind;

use super::loss::loss;
use super::network::{DenoiserParams, NetworkConfig};
use super::Denoiser;

/// Step count at which the squared-error boost threshold equals
/// [`REFERENCE_THRESHOLD`]; other step counts scale it proportionally.
pub const REFERENCE_STEPS: usize = 2000;
pub const REFERENCE_THRESHOLD: usize = 150;
pub const DEFAULT_LAMBDA: f64 = 16.0;

/// Boost threshold rescaled to a schedule of `steps` steps.
pub fn scaled_threshold(steps: usize) -> usize {
    ((REFERENCE_THRESHOLD * steps) as f64 / REFERENCE_STEPS as f64).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    /// Constant-rate stochastic gradient descent.
    #[default]
    Sgd,
    /// Adam with the usual moment estimates.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight on the squared-error term for `t <= mse_boost_threshold`.
    pub lambda: f64,
    pub mse_boost_threshold: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Spread each epoch's timesteps evenly over `1..=T` (one shared random
    /// offset, shuffled across samples) instead of drawing them independently.
    pub stratify_timesteps: bool,
    pub network: NetworkConfig,
    pub diffusion: DiffusionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let diffusion = DiffusionConfig::default();
        Self {
            lambda: DEFAULT_LAMBDA,
            mse_boost_threshold: scaled_threshold(diffusion.steps),
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 200,
            seed: 0,
            optimizer: Optimizer::Sgd,
            stratify_timesteps: false,
            network: NetworkConfig::default(),
            diffusion,
        }
    }
}

impl TrainConfig {
    /// Defaults for a schedule of `steps` steps, with the boost threshold
    /// scaled to match.
    pub fn for_steps(steps: usize) -> Self {
        Self {
            mse_boost_threshold: scaled_threshold(steps),
            diffusion: DiffusionConfig::with_steps(steps),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.diffusion.validate()?;
        self.network.validate()?;
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidConfig(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.mse_boost_threshold > self.diffusion.steps {
            return Err(Error::InvalidConfig(format!(
                "mse_boost_threshold {} exceeds the {} diffusion steps",
                self.mse_boost_threshold, self.diffusion.steps
            )));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidConfig("learning_rate and batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final parameters, or the last finite ones if training diverged.
    pub params: DenoiserParams,
    /// Mean training loss per completed epoch.
    pub history: Vec<f64>,
    pub diverged: Option<String>,
}

struct AdamState {
    m: DenoiserParams,
    v: DenoiserParams,
    step: i32,
}

fn apply_update(params: &mut DenoiserParams, grad: &DenoiserParams, cfg: &TrainConfig, adam: &mut Option<AdamState>) {
    match (cfg.optimizer, adam) {
        (Optimizer::Sgd, _) => params.add_scaled(grad, -cfg.learning_rate),
        (Optimizer::Adam { beta1, beta2, eps }, state) => {
            let st = state.get_or_insert_with(|| AdamState { m: grad.zeros_like(), v: grad.zeros_like(), step: 0 });
            st.step += 1;
            let c1 = 1.0 - beta1.powi(st.step);
            let c2 = 1.0 - beta2.powi(st.step);
            let g = grad.tensors();
            let m = st.m.tensors_mut();
            let v = st.v.tensors_mut();
            for ((((_, p), (_, m)), (_, v)), (_, _, g)) in params.tensors_mut().into_iter().zip(m).zip(v).zip(g) {
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    p[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// One sample's loss and gradient at a random timestep.
fn sample_grad(
    params: &DenoiserParams,
    proc: &JointProcess,
    x0: &Array2<f64>,
    cfg: &TrainConfig,
    t: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, DenoiserParams)> {
    let t = t.unwrap_or_else(|| rng.random_range(1..=proc.steps()));
    let xt = proc.noise_sketch(x0.view(), t, rng)?;
    let cache = params.forward_cached(xt.x.view(), t)?;
    let (lb, dpred) = loss(cache.output().view(), x0.view(), t, cfg)?;
    Ok((lb.total, params.backward(&cache, dpred.view())))
}

/// `n` timesteps covering `1..=steps` in equal strata, in random order.
fn stratified_timesteps(n: usize, steps: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let u: f64 = rng.random();
    let mut ts: Vec<usize> =
        (0..n).map(|i| 1 + (((i as f64 + u) / n as f64) * steps as f64).floor().min((steps - 1) as f64) as usize).collect();
    ts.shuffle(rng);
    ts
}

pub fn train(corpus: &[Array2<f64>], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_callback(corpus, cfg, |_, _, _| {})
}

/// Train from a fresh initialization. `on_epoch(epoch, params, mean_loss)`
/// runs after every completed epoch, counting from 1.
pub fn train_with_callback<F>(corpus: &[Array2<f64>], cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &DenoiserParams, f64),
{
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidInput("training corpus is empty".into()));
    }
    let proc = JointProcess::new(cfg.diffusion.clone())?;
    let mut params = DenoiserParams::init(cfg.network, cfg.seed)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut adam = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let timesteps = cfg.stratify_timesteps.then(|| stratified_timesteps(corpus.len(), proc.steps(), &mut order_rng));
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<(f64, DenoiserParams)>> = batch
                .par_iter()
                .enumerate()
                .map(|(pos, &idx)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(2 + (step << 20) + pos as u64);
                    let t = timesteps.as_ref().map(|ts| ts[b * cfg.batch_size + pos]);
                    sample_grad(&params, &proc, &corpus[idx], cfg, t, &mut rng)
                })
                .collect();
            step += 1;
            let mut grad = params.zeros_like();
            let mut batch_loss = 0.0;
            let mut failure = None;
            for r in results {
                match r {
                    Ok((l, g)) => {
                        batch_loss += l;
                        grad.add_scaled(&g, 1.0 / batch.len() as f64);
                    }
                    Err(e) => failure = Some(e.to_string()),
                }
            }
            if failure.is_none() && !batch_loss.is_finite() {
                failure = Some(format!("non-finite loss in epoch {epoch}"));
            }
            if let Some(msg) = failure {
                return Ok(TrainOutcome { params, history, diverged: Some(msg) });
            }
            let mut next = params.clone();
            apply_update(&mut next, &grad, cfg, &mut adam);
            if !next.is_finite() {
                return Ok(TrainOutcome {
                    params,
                    history,
                    diverged: Some(format!("non-finite parameters after update in epoch {epoch}")),
                });
            }
            params = next;
            epoch_loss += batch_loss;
        }
        let mean = epoch_loss / corpus.len() as f64;
        history.push(mean);
        on_epoch(epoch, &params, mean);
    }
    Ok(TrainOutcome { params, history, diverged: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    /// Over every row, padding included.
    pub all_rows: f64,
    /// Over rows holding a real primitive.
    pub primitive_rows: f64,
}

/// Fraction of rows whose predicted class argmax matches the truth after
/// noising each clean matrix to `t`.
pub fn class_accuracy<D: Denoiser + ?Sized>(
    den: &D,
    proc: &JointProcess,
    corpus: &[Array2<f64>],
    t: usize,
    seed: u64,
) -> Result<Accuracy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hit, mut rows, mut hit_p, mut rows_p) = (0usize, 0usize, 0usize, 0usize);
    for x0 in corpus {
        let xt = proc.noise_sketch(x0.view(), t, &mut rng)?;
        let pred = den.predict(xt.x.view(), t)?;
        for (r0, rp) in x0.rows().into_iter().zip(pred.rows()) {
            let truth = row_kind(r0);
            let ok = argmax(&rp.slice(ndarray::s![CLASS_BLOCK]).to_vec()) == truth.index();
            hit += ok as usize;
            rows += 1;
            if truth != PrimitiveKind::None {
                hit_p += ok as usize;
                rows_p += 1;
            }
        }
    }
    Ok(Accuracy {
        all_rows: hit as f64 / rows.max(1) as f64,
        primitive_rows: hit_p as f64 / rows_p.max(1) as f64,
    })
}
