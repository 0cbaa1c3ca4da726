//! Set-attention denoiser with hand-written backpropagation.
//!
//! ```text
//! H = X W_in + b_in + time(t)                 (time added to every row)
//! repeat depth times:
//!     H += Attn(LN1(H))                       (single head, content only)
//!     H += W2 silu(W1 LN2(H))
//! Y = LN_f(H) W_out + b_out, softmax on the flag and class blocks
//! ```
//!
//! Nothing is indexed by row position, so the map commutes with row
//! permutations.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sketch::encoding::{CLASS_BLOCK, FEATURE_DIM, FLAG_BLOCK};

use super::Denoiser;

const LN_EPS: f64 = 1e-5;
/// Init scale of projections that write into the residual stream or the
/// output, relative to `1/sqrt(fan_in)`.
const SMALL_INIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub width: usize,
    pub depth: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { width: 64, depth: 2 }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.width % 2 != 0 {
            return Err(Error::InvalidConfig(format!("width must be even and >= 2, got {}", self.width)));
        }
        if self.depth == 0 {
            return Err(Error::InvalidConfig("depth must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, scale: f64) -> Self {
        let dist = Normal::new(0.0, scale / (fan_in as f64).sqrt()).expect("positive std");
        Self {
            w: Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng)),
            b: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.raw_dim()) }
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulate parameter gradients into `g`; return the input gradient.
    fn backward(&self, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>, g: &mut Linear) -> Array2<f64> {
        g.w += &x.t().dot(&dy);
        g.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    fn new(width: usize) -> Self {
        Self { gain: Array1::ones(width), bias: Array1::zeros(width) }
    }

    fn zeros_like(&self) -> Self {
        Self { gain: Array1::zeros(self.gain.raw_dim()), bias: Array1::zeros(self.bias.raw_dim()) }
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, LnCache) {
        let h = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)) / h;
        let centered = &x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / h;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        let xhat = centered * &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &self.gain + &self.bias;
        (y, LnCache { xhat, inv_std })
    }

    fn backward(&self, c: &LnCache, dy: ArrayView2<'_, f64>, g: &mut LayerNorm) -> Array2<f64> {
        g.gain += &(&dy * &c.xhat).sum_axis(Axis(0));
        g.bias += &dy.sum_axis(Axis(0));
        let dxhat = &dy * &self.gain;
        let h = dy.ncols() as f64;
        let m1 = dxhat.sum_axis(Axis(1)) / h;
        let m2 = (&dxhat * &c.xhat).sum_axis(Axis(1)) / h;
        let inner = dxhat - &m1.insert_axis(Axis(1)) - &c.xhat * &m2.insert_axis(Axis(1));
        inner * &c.inv_std.view().insert_axis(Axis(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

struct BlockCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    p: Array2<f64>,
    attn: Array2<f64>,
    ln2: LnCache,
    b: Array2<f64>,
    f1: Array2<f64>,
    act: Array2<f64>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row /= z;
    }
}

/// Backward through a row-wise softmax with outputs `p`.
fn softmax_rows_backward(p: ArrayView2<'_, f64>, dp: ArrayView2<'_, f64>) -> Array2<f64> {
    let dot = (&dp * &p).sum_axis(Axis(1));
    (&dp - &dot.insert_axis(Axis(1))) * &p
}

impl Block {
    fn init(rng: &mut ChaCha8Rng, h: usize) -> Self {
        Self {
            ln1: LayerNorm::new(h),
            q: Linear::init(rng, h, h, 1.0),
            k: Linear::init(rng, h, h, 1.0),
            v: Linear::init(rng, h, h, 1.0),
            o: Linear::init(rng, h, h, SMALL_INIT),
            ln2: LayerNorm::new(h),
            ff1: Linear::init(rng, h, 2 * h, 1.0),
            ff2: Linear::init(rng, 2 * h, h, SMALL_INIT),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            ln1: self.ln1.zeros_like(),
            q: self.q.zeros_like(),
            k: self.k.zeros_like(),
            v: self.v.zeros_like(),
            o: self.o.zeros_like(),
            ln2: self.ln2.zeros_like(),
            ff1: self.ff1.zeros_like(),
            ff2: self.ff2.zeros_like(),
        }
    }

    /// Attention half of the block: returns the residual update and the
    /// intermediates `[a, q, k, v, p, attn]`.
    fn attend(&self, h: ArrayView2<'_, f64>) -> (Array2<f64>, LnCache, [Array2<f64>; 6]) {
        let (a, ln1) = self.ln1.forward(h);
        let q = self.q.forward(a.view());
        let k = self.k.forward(a.view());
        let v = self.v.forward(a.view());
        let scale = 1.0 / (q.ncols() as f64).sqrt();
        let mut p = q.dot(&k.t()) * scale;
        softmax_rows(&mut p);
        let attn = p.dot(&v);
        (self.o.forward(attn.view()), ln1, [a, q, k, v, p, attn])
    }

    fn forward(&self, h: &mut Array2<f64>) -> BlockCache {
        let (update, ln1, [a, q, k, v, p, attn]) = self.attend(h.view());
        *h += &update;
        let (b, ln2) = self.ln2.forward(h.view());
        let f1 = self.ff1.forward(b.view());
        let act = f1.mapv(silu);
        *h += &self.ff2.forward(act.view());
        BlockCache { ln1, a, q, k, v, p, attn, ln2, b, f1, act }
    }

    /// `dh` is the gradient w.r.t. the block output; returns the gradient
    /// w.r.t. the block input.
    fn backward(&self, c: &BlockCache, dh: Array2<f64>, g: &mut Block) -> Array2<f64> {
        // Feed-forward residual.
        let dact = self.ff2.backward(c.act.view(), dh.view(), &mut g.ff2);
        let df1 = dact * &c.f1.mapv(silu_grad);
        let db = self.ff1.backward(c.b.view(), df1.view(), &mut g.ff1);
        let dh = dh + self.ln2.backward(&c.ln2, db.view(), &mut g.ln2);

        // Attention residual.
        let dattn = self.o.backward(c.attn.view(), dh.view(), &mut g.o);
        let scale = 1.0 / (c.q.ncols() as f64).sqrt();
        let dp = dattn.dot(&c.v.t());
        let dv = c.p.t().dot(&dattn);
        let ds = softmax_rows_backward(c.p.view(), dp.view()) * scale;
        let dq = ds.dot(&c.k);
        let dk = ds.t().dot(&c.q);
        let da = self.q.backward(c.a.view(), dq.view(), &mut g.q)
            + self.k.backward(c.a.view(), dk.view(), &mut g.k)
            + self.v.backward(c.a.view(), dv.view(), &mut g.v);
        dh + self.ln1.backward(&c.ln1, da.view(), &mut g.ln1)
    }
}

/// Trainable denoiser weights. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: NetworkConfig,
    pub input: Linear,
    pub time: Linear,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
    pub output: Linear,
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    x: Array2<f64>,
    time_features: Array2<f64>,
    blocks: Vec<BlockCache>,
    ln_f: LnCache,
    z: Array2<f64>,
    out: Array2<f64>,
}

impl ForwardCache {
    /// The network output (softmax applied to the categorical blocks).
    pub fn output(&self) -> &Array2<f64> {
        &self.out
    }
}

/// Sinusoidal features of `t`, half sines and half cosines.
pub fn time_features(t: usize, width: usize) -> Array1<f64> {
    let half = width / 2;
    let mut e = Array1::zeros(width);
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        e[i] = arg.sin();
        e[i + half] = arg.cos();
    }
    e
}

impl DenoiserParams {
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.width;
        Ok(Self {
            config,
            input: Linear::init(&mut rng, FEATURE_DIM, h, 1.0),
            time: Linear::init(&mut rng, h, h, 1.0),
            blocks: (0..config.depth).map(|_| Block::init(&mut rng, h)).collect(),
            ln_f: LayerNorm::new(h),
            output: Linear::init(&mut rng, h, FEATURE_DIM, SMALL_INIT),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            input: self.input.zeros_like(),
            time: self.time.zeros_like(),
            blocks: self.blocks.iter().map(Block::zeros_like).collect(),
            ln_f: self.ln_f.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    /// Named parameter tensors in a fixed declaration order, with shapes.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        fn push<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: String, shape: &[usize], data: &'a [f64]) {
            out.push((name, shape.to_vec(), data));
        }
        let mut out = Vec::new();
        for (name, l) in self.named_linears() {
            push(&mut out, format!("{name}.w"), l.w.shape(), l.w.as_slice().expect("standard layout"));
            push(&mut out, format!("{name}.b"), l.b.shape(), l.b.as_slice().expect("standard layout"));
        }
        for (name, n) in self.named_norms() {
            push(&mut out, format!("{name}.gain"), n.gain.shape(), n.gain.as_slice().expect("standard layout"));
            push(&mut out, format!("{name}.bias"), n.bias.shape(), n.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        let (lins, norms) = self.named_parts_mut();
        for (name, l) in lins {
            out.push((format!("{name}.w"), l.w.as_slice_mut().expect("standard layout")));
            out.push((format!("{name}.b"), l.b.as_slice_mut().expect("standard layout")));
        }
        for (name, n) in norms {
            out.push((format!("{name}.gain"), n.gain.as_slice_mut().expect("standard layout")));
            out.push((format!("{name}.bias"), n.bias.as_slice_mut().expect("standard layout")));
        }
        out
    }

    fn named_linears(&self) -> Vec<(String, &Linear)> {
        let mut v = vec![("input".to_string(), &self.input), ("time".to_string(), &self.time)];
        for (i, b) in self.blocks.iter().enumerate() {
            for (n, l) in [("q", &b.q), ("k", &b.k), ("v", &b.v), ("o", &b.o), ("ff1", &b.ff1), ("ff2", &b.ff2)] {
                v.push((format!("block{i}.{n}"), l));
            }
        }
        v.push(("output".to_string(), &self.output));
        v
    }

    fn named_norms(&self) -> Vec<(String, &LayerNorm)> {
        let mut v = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            v.push((format!("block{i}.ln1"), &b.ln1));
            v.push((format!("block{i}.ln2"), &b.ln2));
        }
        v.push(("ln_f".to_string(), &self.ln_f));
        v
    }

    #[allow(clippy::type_complexity)]
    fn named_parts_mut(&mut self) -> (Vec<(String, &mut Linear)>, Vec<(String, &mut LayerNorm)>) {
        let mut lins = vec![("input".to_string(), &mut self.input), ("time".to_string(), &mut self.time)];
        let mut norms = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let Block { ln1, q, k, v, o, ln2, ff1, ff2 } = b;
            for (n, l) in [("q", q), ("k", k), ("v", v), ("o", o), ("ff1", ff1), ("ff2", ff2)] {
                lins.push((format!("block{i}.{n}"), l));
            }
            norms.push((format!("block{i}.ln1"), ln1));
            norms.push((format!("block{i}.ln2"), ln2));
        }
        lins.push(("output".to_string(), &mut self.output));
        norms.push(("ln_f".to_string(), &mut self.ln_f));
        (lins, norms)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &DenoiserParams, scale: f64) {
        let src = other.tensors();
        for ((_, dst), (_, _, s)) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += scale * v;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>, t: usize) -> Result<ForwardCache> {
        if x.ncols() != FEATURE_DIM {
            return Err(Error::DimensionMismatch { expected: FEATURE_DIM, actual: x.ncols() });
        }
        let tf = time_features(t, self.config.width).insert_axis(Axis(0));
        let temb = self.time.forward(tf.view());
        let mut h = self.input.forward(x) + &temb.row(0);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            blocks.push(b.forward(&mut h));
        }
        let (z, ln_f) = self.ln_f.forward(h.view());
        let mut out = self.output.forward(z.view());
        for block in [FLAG_BLOCK, CLASS_BLOCK] {
            let mut sub = out.slice(s![.., block.clone()]).to_owned();
            softmax_rows(&mut sub);
            out.slice_mut(s![.., block]).assign(&sub);
        }
        if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite network output at row {}, column {} (t = {t})",
                pos / FEATURE_DIM,
                pos % FEATURE_DIM
            )));
        }
        Ok(ForwardCache { x: x.to_owned(), time_features: tf, blocks, ln_f, z, out })
    }

    /// Gradients of a scalar loss given `dout = dL/d(output)`.
    pub fn backward(&self, c: &ForwardCache, dout: ArrayView2<'_, f64>) -> DenoiserParams {
        let mut g = self.zeros_like();
        let mut dy = dout.to_owned();
        for block in [FLAG_BLOCK, CLASS_BLOCK] {
            let p = c.out.slice(s![.., block.clone()]);
            let d = softmax_rows_backward(p, dout.slice(s![.., block.clone()]));
            dy.slice_mut(s![.., block]).assign(&d);
        }
        let dz = self.output.backward(c.z.view(), dy.view(), &mut g.output);
        let mut dh = self.ln_f.backward(&c.ln_f, dz.view(), &mut g.ln_f);
        for (i, b) in self.blocks.iter().enumerate().rev() {
            dh = b.backward(&c.blocks[i], dh, &mut g.blocks[i]);
        }
        let dtemb = dh.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.time.backward(c.time_features.view(), dtemb.view(), &mut g.time);
        self.input.backward(c.x.view(), dh.view(), &mut g.input);
        g
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>, t: usize) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x, t)?.out)
    }
}

impl Denoiser for DenoiserParams {
    fn predict(&self, xt: ArrayView2<'_, f64>, t: usize) -> Result<Array2<f64>> {
        self.forward(xt, t)
    }
}

/// Mean entropy of the class block over rows.
pub fn mean_class_entropy(out: ArrayView2<'_, f64>) -> f64 {
    let rows = out.nrows() as f64;
    out.rows()
        .into_iter()
        .map(|r: ArrayView1<'_, f64>| -r.slice(s![CLASS_BLOCK]).iter().map(|p| p * p.ln()).sum::<f64>())
        .sum::<f64>()
        / rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::{permute_rows, standard_normal_matrix};
    use crate::sketch::encoding::{MAX_PRIMITIVES, NUM_CLASSES};
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn tiny() -> DenoiserParams {
        DenoiserParams::init(NetworkConfig { width: 8, depth: 2 }, 3).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(DenoiserParams::init(NetworkConfig { width: 7, depth: 1 }, 0).is_err());
        assert!(DenoiserParams::init(NetworkConfig { width: 8, depth: 0 }, 0).is_err());
    }

    #[test]
    fn outputs_are_simplex_blocks() {
        let p = DenoiserParams::init(NetworkConfig::default(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = standard_normal_matrix(MAX_PRIMITIVES, &mut rng);
        let out = p.forward(x.view(), 37).unwrap();
        for row in out.rows() {
            for block in [FLAG_BLOCK, CLASS_BLOCK] {
                let b = row.slice(s![block]);
                assert!((b.sum() - 1.0).abs() < 1e-12 && b.iter().all(|v| *v > 0.0));
            }
        }
    }

    #[test]
    fn fresh_init_is_near_uniform() {
        let p = DenoiserParams::init(NetworkConfig::default(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in [1, 50, 100] {
            let x = standard_normal_matrix(MAX_PRIMITIVES, &mut rng);
            let out = p.forward(x.view(), t).unwrap();
            assert!(mean_class_entropy(out.view()) > 0.95 * (NUM_CLASSES as f64).ln());
        }
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let p = DenoiserParams::init(NetworkConfig::default(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = standard_normal_matrix(MAX_PRIMITIVES, &mut rng);
            let mut perm: Vec<usize> = (0..MAX_PRIMITIVES).collect();
            perm.shuffle(&mut rng);
            let t = rng.random_range(1..=100);
            let a = permute_rows(p.forward(x.view(), t).unwrap().view(), &perm);
            let b = p.forward(permute_rows(x.view(), &perm).view(), t).unwrap();
            assert!(a.iter().zip(b.iter()).all(|(u, v)| (u - v).abs() < 1e-9));
        }
    }

    #[test]
    fn each_block_is_permutation_equivariant() {
        let p = DenoiserParams::init(NetworkConfig { width: 16, depth: 2 }, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = Array2::from_shape_simple_fn((6, 16), || rng.random_range(-1.0..1.0));
        let perm = vec![3, 0, 5, 1, 4, 2];
        for b in &p.blocks {
            let (ln, _) = b.ln1.forward(h.view());
            let (lnp, _) = b.ln1.forward(permute_rows(h.view(), &perm).view());
            assert!((permute_rows(ln.view(), &perm) - lnp).iter().all(|v| v.abs() < 1e-12));
            let (u, ..) = b.attend(h.view());
            let (up, ..) = b.attend(permute_rows(h.view(), &perm).view());
            assert!((permute_rows(u.view(), &perm) - up).iter().all(|v| v.abs() < 1e-12));
            let mut full = h.clone();
            b.forward(&mut full);
            let mut fullp = permute_rows(h.view(), &perm);
            b.forward(&mut fullp);
            assert!((permute_rows(full.view(), &perm) - fullp).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn tensors_cover_all_parameters_in_order() {
        let p = tiny();
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _, _)| n).collect();
        assert_eq!(names.first().unwrap(), "input.w");
        assert!(names.contains(&"block1.ff2.b".to_string()));
        assert!(names.contains(&"ln_f.bias".to_string()));
        let h = 8;
        let per_block = 4 * (h * h + h) + (h * 2 * h + 2 * h) + (2 * h * h + h) + 4 * h;
        let expected = (FEATURE_DIM * h + h) + (h * h + h) + 2 * per_block + 2 * h + (h * FEATURE_DIM + FEATURE_DIM);
        assert_eq!(p.num_params(), expected);
        let mut q = p.clone();
        let mut_names: Vec<String> = q.tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(mut_names, names);
    }

    #[test]
    fn non_finite_input_is_reported() {
        let p = tiny();
        let mut x = Array2::<f64>::zeros((3, FEATURE_DIM));
        x[[1, 9]] = f64::NAN;
        assert!(matches!(p.forward(x.view(), 1), Err(Error::Numeric(_))));
    }
}
