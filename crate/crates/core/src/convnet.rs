//! Compact convolutional binary classifier with hand-written forward and
//! backward passes.
//!
//! Architecture: three 3×3 convolutions (stride 1, zero padding 1) with
//! ReLU, 2×2 max pooling after the first two, global average pooling, and a
//! single-logit linear head. The first layer is the one the group penalty
//! acts on; its weight slice `[:, c, :, :]` is the group of input channel c.
//!
//! Convolutions are computed as im2col followed by a matrix product. Batch
//! evaluation fans out over samples with rayon; gradients are reduced in
//! sample order so results do not depend on scheduling.

use std::collections::BTreeMap;
use std::fmt::{Debug, Display};
use std::io::{Read, Write};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView3, ArrayView4, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;
/// Max pooling follows each conv layer flagged here.
const POOL_AFTER: [bool; 3] = [true, true, false];

/// Floating-point element usable by the network (`f32` for training, `f64`
/// for verification).
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + ToPrimitive
    + Send
    + Sync
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub conv_channels: Vec<usize>,
    /// Indices into the full 48-band stack that feed this model, when it was
    /// built from a channel selection.
    pub selected: Option<Vec<usize>>,
}

impl ModelConfig {
    pub fn new(in_channels: usize, image_size: usize) -> Self {
        ModelConfig {
            in_channels,
            image_size,
            conv_channels: vec![32, 64, 128],
            selected: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be positive".into()));
        }
        if self.conv_channels.len() != 3 || self.conv_channels.contains(&0) {
            return Err(Error::Config("conv_channels must list three positive widths".into()));
        }
        if self.image_size < 4 {
            return Err(Error::Config("image_size must be at least 4".into()));
        }
        if let Some(sel) = &self.selected {
            if sel.len() != self.in_channels {
                return Err(Error::Config("selected channel list does not match in_channels".into()));
            }
        }
        Ok(())
    }

    /// Spatial size of the final feature maps.
    pub fn final_size(&self) -> usize {
        self.image_size / 4
    }

    pub fn feature_dim(&self) -> usize {
        self.conv_channels[2]
    }
}

/// Returns the configuration for retraining on `selected` input channels.
/// `selected` indexes the current model's inputs and must be strictly
/// increasing.
pub fn reduce_input_channels(cfg: &ModelConfig, selected: &[usize]) -> Result<ModelConfig> {
    if selected.is_empty() {
        return Err(Error::Selection {
            message: "cannot reduce to an empty channel set".into(),
            norms: vec![],
        });
    }
    if selected.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Selection {
            message: "selected channels must be strictly increasing".into(),
            norms: vec![],
        });
    }
    if let Some(&bad) = selected.iter().find(|&&c| c >= cfg.in_channels) {
        return Err(Error::Selection {
            message: format!("channel {bad} is out of range for {} inputs", cfg.in_channels),
            norms: vec![],
        });
    }
    let source: Vec<usize> = match &cfg.selected {
        Some(prev) => selected.iter().map(|&c| prev[c]).collect(),
        None => selected.to_vec(),
    };
    Ok(ModelConfig {
        in_channels: selected.len(),
        image_size: cfg.image_size,
        conv_channels: cfg.conv_channels.clone(),
        selected: Some(source),
    })
}

/// Weights `N×C×H×V` plus one bias per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams<T> {
    pub weights: Array4<T>,
    pub bias: Array1<T>,
}

impl<T: Real> ConvLayerParams<T> {
    fn zeros(filters: usize, channels: usize) -> Self {
        ConvLayerParams {
            weights: Array4::zeros((filters, channels, KERNEL, KERNEL)),
            bias: Array1::zeros(filters),
        }
    }

    fn filters(&self) -> usize {
        self.weights.len_of(Axis(0))
    }

    fn channels(&self) -> usize {
        self.weights.len_of(Axis(1))
    }

    /// Weights viewed as an `N × (C·9)` matrix.
    fn matrix(&self) -> ArrayView2<'_, T> {
        let n = self.filters();
        self.weights
            .view()
            .into_shape_with_order((n, self.channels() * TAPS))
            .expect("contiguous weights")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub config: ModelConfig,
    pub convs: Vec<ConvLayerParams<T>>,
    pub head_weights: Array1<T>,
    pub head_bias: T,
}

impl<T: Real> Params<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut convs = Vec::with_capacity(3);
        let mut channels = config.in_channels;
        for &filters in &config.conv_channels {
            convs.push(ConvLayerParams::zeros(filters, channels));
            channels = filters;
        }
        Params {
            config: config.clone(),
            convs,
            head_weights: Array1::zeros(config.feature_dim()),
            head_bias: T::zero(),
        }
    }

    pub fn conv1(&self) -> &ConvLayerParams<T> {
        &self.convs[0]
    }

    pub fn conv1_mut(&mut self) -> &mut ConvLayerParams<T> {
        &mut self.convs[0]
    }

    /// Every tensor in declaration order: conv weights and biases, then the
    /// head weights and bias.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(8);
        for c in &self.convs {
            out.push(c.weights.as_slice().expect("contiguous"));
            out.push(c.bias.as_slice().expect("contiguous"));
        }
        out.push(self.head_weights.as_slice().expect("contiguous"));
        out.push(std::slice::from_ref(&self.head_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(8);
        for c in &mut self.convs {
            out.push(c.weights.as_slice_mut().expect("contiguous"));
            out.push(c.bias.as_slice_mut().expect("contiguous"));
        }
        out.push(self.head_weights.as_slice_mut().expect("contiguous"));
        out.push(std::slice::from_mut(&mut self.head_bias));
        out
    }

    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(8);
        for c in &self.convs {
            out.push(c.weights.shape().to_vec());
            out.push(c.bias.shape().to_vec());
        }
        out.push(vec![self.head_weights.len()]);
        out.push(vec![1]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Params<T>) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        let conv = |c: &ConvLayerParams<T>| ConvLayerParams {
            weights: c.weights.mapv(|v| U::from_f64_lossy(v.to_f64().unwrap())),
            bias: c.bias.mapv(|v| U::from_f64_lossy(v.to_f64().unwrap())),
        };
        Params {
            config: self.config.clone(),
            convs: self.convs.iter().map(conv).collect(),
            head_weights: self.head_weights.mapv(|v| U::from_f64_lossy(v.to_f64().unwrap())),
            head_bias: U::from_f64_lossy(self.head_bias.to_f64().unwrap()),
        }
    }
}

/// He (fan-in) normal initialization with zero biases.
pub fn init_model<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<Params<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::<T>::zeros(cfg);
    for conv in &mut params.convs {
        let fan_in = conv.channels() * TAPS;
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        conv.weights.mapv_inplace(|_| T::from_f64_lossy(dist.sample(&mut rng)));
    }
    let fan_in = params.head_weights.len();
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    params.head_weights.mapv_inplace(|_| T::from_f64_lossy(dist.sample(&mut rng)));
    Ok(params)
}

/// Per-sample activations retained for backpropagation and Grad-CAM.
#[derive(Debug, Clone)]
pub struct Activations<T> {
    /// Post-ReLU conv outputs as `N × (H·W)` matrices, with their spatial size.
    pub conv_out: Vec<(Array2<T>, usize, usize)>,
    /// Pooled outputs and flat argmax positions for pooled layers.
    pub pooled: Vec<Option<(Array2<T>, Vec<usize>)>>,
    pub embedding: Array1<T>,
    pub logit: T,
}

impl<T: Real> Activations<T> {
    /// Final conv block activation `A` as `K × H' × W'`.
    pub fn final_maps(&self) -> ndarray::Array3<T> {
        let (a, h, w) = self.conv_out.last().expect("three layers");
        a.clone().into_shape_with_order((a.nrows(), *h, *w)).expect("contiguous")
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub inputs: ndarray::Array4<T>,
    pub samples: Vec<Activations<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn logits(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.logit).collect()
    }
}

fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Array2<T> {
    let hw = h * w;
    let mut col = Array2::<T>::zeros((c * TAPS, hw));
    let buf = col.as_slice_mut().expect("contiguous");
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut buf[(ch * TAPS + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Real>(col: &Array2<T>, c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); c * hw];
    let buf = col.as_slice().expect("contiguous");
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &buf[(ch * TAPS + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
    out
}

fn conv_forward<T: Real>(layer: &ConvLayerParams<T>, x: &[T], h: usize, w: usize) -> Array2<T> {
    let col = im2col(x, layer.channels(), h, w);
    let mut out = Array2::<T>::zeros((layer.filters(), h * w));
    general_mat_mul(T::one(), &layer.matrix(), &col, T::zero(), &mut out);
    for (mut row, &b) in out.outer_iter_mut().zip(layer.bias.iter()) {
        row.mapv_inplace(|v| {
            let z = v + b;
            if z > T::zero() {
                z
            } else {
                T::zero()
            }
        });
    }
    out
}

fn max_pool<T: Real>(x: &Array2<T>, h: usize, w: usize) -> (Array2<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let n = x.nrows();
    let mut out = Array2::<T>::zeros((n, oh * ow));
    let mut arg = vec![0usize; n * oh * ow];
    for (ch, (src, mut dst)) in x.outer_iter().zip(out.outer_iter_mut()).enumerate() {
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * y + dy) * w + 2 * xx + dx;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                dst[y * ow + xx] = src[best];
                arg[ch * oh * ow + y * ow + xx] = best;
            }
        }
    }
    (out, arg)
}

fn check_input<T: Real>(params: &Params<T>, x: &ArrayView3<T>) -> Result<()> {
    let (c, h, w) = x.dim();
    if c != params.config.in_channels {
        return Err(Error::Input(format!(
            "input has {c} channels, model expects {}",
            params.config.in_channels
        )));
    }
    if h < 4 || w < 4 {
        return Err(Error::Input(format!("input {h}x{w} is too small")));
    }
    Ok(())
}

/// Forward pass for one `C×H×W` sample.
pub fn forward_sample<T: Real>(params: &Params<T>, x: ArrayView3<T>) -> Result<Activations<T>> {
    check_input(params, &x)?;
    let (_, mut h, mut w) = x.dim();
    let x_std = x.as_standard_layout();
    let first = x_std.as_slice().expect("standard layout");
    let mut carry: Vec<T> = Vec::new();
    let mut conv_out = Vec::with_capacity(3);
    let mut pooled = Vec::with_capacity(3);
    for (k, layer) in params.convs.iter().enumerate() {
        let input: &[T] = if k == 0 { first } else { &carry };
        let out = conv_forward(layer, input, h, w);
        let (next, pool) = if POOL_AFTER[k] {
            let (p, arg) = max_pool(&out, h, w);
            (p.as_slice().expect("contiguous").to_vec(), Some((p, arg)))
        } else {
            (out.as_slice().expect("contiguous").to_vec(), None)
        };
        conv_out.push((out, h, w));
        if pool.is_some() {
            h /= 2;
            w /= 2;
        }
        pooled.push(pool);
        carry = next;
    }
    let final_maps = &conv_out.last().expect("three layers").0;
    let z = T::from_usize(final_maps.ncols()).expect("size");
    let embedding = final_maps.sum_axis(Axis(1)).mapv(|v| v / z);
    let logit = embedding.dot(&params.head_weights) + params.head_bias;
    Ok(Activations {
        conv_out,
        pooled,
        embedding,
        logit,
    })
}

/// Head output as a function of the final conv activation `A` (`K×H'×W'`).
pub fn logit_from_final_maps<T: Real>(params: &Params<T>, maps: ArrayView3<T>) -> T {
    let (k, h, w) = maps.dim();
    let z = T::from_usize(h * w).expect("size");
    (0..k)
        .map(|i| maps.index_axis(Axis(0), i).sum() / z * params.head_weights[i])
        .sum::<T>()
        + params.head_bias
}

/// `dy/dA` for the single-logit head: every position of map k receives
/// `head_weights[k] / (H'·W')`.
pub fn logit_grad_final_maps<T: Real>(params: &Params<T>, h: usize, w: usize) -> ndarray::Array3<T> {
    let z = T::from_usize(h * w).expect("size");
    let k = params.head_weights.len();
    ndarray::Array3::from_shape_fn((k, h, w), |(i, _, _)| params.head_weights[i] / z)
}

/// Accumulates into `grads` the gradient of `dlogit * logit` for one sample.
pub fn backward_sample<T: Real>(params: &Params<T>, x: ArrayView3<T>, act: &Activations<T>, dlogit: T, grads: &mut Params<T>) {
    grads.head_weights.scaled_add(dlogit, &act.embedding);
    grads.head_bias += dlogit;

    let (last, _, _) = act.conv_out.last().expect("three layers");
    let z = T::from_usize(last.ncols()).expect("size");
    // gradient w.r.t. the post-ReLU output of the current layer
    let mut d_out = Array2::from_shape_fn(last.raw_dim(), |(k, _)| dlogit * params.head_weights[k] / z);

    let x_std = x.as_standard_layout();
    for k in (0..params.convs.len()).rev() {
        let layer = &params.convs[k];
        let (out, h, w) = &act.conv_out[k];
        // ReLU mask
        ndarray::Zip::from(&mut d_out).and(out).for_each(|d, &o| {
            if o <= T::zero() {
                *d = T::zero();
            }
        });
        let input_owned;
        let input: &[T] = if k == 0 {
            x_std.as_slice().expect("standard layout")
        } else {
            input_owned = match &act.pooled[k - 1] {
                Some((p, _)) => p,
                None => &act.conv_out[k - 1].0,
            };
            input_owned.as_slice().expect("contiguous")
        };
        let col = im2col(input, layer.channels(), *h, *w);
        let g = &mut grads.convs[k];
        let n = g.filters();
        let cc = g.channels();
        {
            let mut gw = g
                .weights
                .view_mut()
                .into_shape_with_order((n, cc * TAPS))
                .expect("contiguous");
            general_mat_mul(T::one(), &d_out, &col.t(), T::one(), &mut gw);
        }
        g.bias += &d_out.sum_axis(Axis(1));
        if k == 0 {
            break;
        }
        let mut d_col = Array2::<T>::zeros((cc * TAPS, h * w));
        general_mat_mul(T::one(), &layer.matrix().t(), &d_out, T::zero(), &mut d_col);
        let d_in = col2im(&d_col, cc, *h, *w);
        // route through the pooling layer in front of this conv, if any
        let (prev_out, _, _) = &act.conv_out[k - 1];
        d_out = match &act.pooled[k - 1] {
            Some((_, arg)) => {
                let mut d = Array2::<T>::zeros(prev_out.raw_dim());
                let pooled_len = h * w;
                for (ch, mut row) in d.outer_iter_mut().enumerate() {
                    for p in 0..pooled_len {
                        row[arg[ch * pooled_len + p]] += d_in[ch * pooled_len + p];
                    }
                }
                d
            }
            None => Array2::from_shape_vec(prev_out.raw_dim(), d_in).expect("shape"),
        };
    }
}

/// Batch forward over `B×C×H×W`.
pub fn forward<T: Real>(params: &Params<T>, batch: ArrayView4<T>) -> Result<(Vec<T>, ForwardCache<T>)> {
    let views: Vec<ArrayView3<T>> = batch.outer_iter().collect();
    let samples = views
        .into_par_iter()
        .map(|x| forward_sample(params, x))
        .collect::<Result<Vec<_>>>()?;
    let cache = ForwardCache {
        inputs: batch.to_owned(),
        samples,
    };
    Ok((cache.logits(), cache))
}

fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) without overflow
    let zero = T::zero();
    x.max(zero) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn check_labels<T: Real>(logits: &[T], labels: &[T]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    if logits.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} logits but {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&y| y != T::zero() && y != T::one()) {
        return Err(Error::Input("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy on logits: `softplus(z) - y z`.
pub fn bce_loss<T: Real>(logits: &[T], labels: &[T]) -> Result<T> {
    check_labels(logits, labels)?;
    let total: T = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| softplus(z) - y * z)
        .sum();
    Ok(total / T::from_usize(logits.len()).expect("size"))
}

/// Gradient of the mean BCE of a cached batch with respect to every
/// parameter.
pub fn backward<T: Real>(params: &Params<T>, cache: &ForwardCache<T>, labels: &[T]) -> Result<Params<T>> {
    if cache.samples.len() != labels.len() || cache.inputs.len_of(Axis(0)) != labels.len() {
        return Err(Error::Internal("cache and label batch sizes differ".into()));
    }
    if cache.inputs.len_of(Axis(1)) != params.config.in_channels
        || cache.samples.first().map(|s| s.embedding.len()) != Some(params.head_weights.len())
    {
        return Err(Error::Internal("cache does not match the model".into()));
    }
    check_labels(&cache.logits(), labels)?;
    let b = T::from_usize(labels.len()).expect("size");
    let parts: Vec<Params<T>> = cache
        .samples
        .par_iter()
        .zip(cache.inputs.outer_iter().collect::<Vec<_>>().into_par_iter())
        .zip(labels.par_iter())
        .map(|((act, x), &y)| {
            let mut g = Params::zeros(&params.config);
            backward_sample(params, x, act, (sigmoid(act.logit) - y) / b, &mut g);
            g
        })
        .collect();
    Ok(reduce_in_order(&params.config, parts))
}

fn reduce_in_order<T: Real>(cfg: &ModelConfig, parts: Vec<Params<T>>) -> Params<T> {
    let mut total = Params::zeros(cfg);
    for p in &parts {
        total.add_assign(p);
    }
    total
}

/// Mean BCE and its gradient over the samples at `indices`, without
/// keeping a batch-wide cache.
pub fn loss_and_grad<T: Real>(
    params: &Params<T>,
    stacks: &[ndarray::Array3<T>],
    labels: &[T],
    indices: &[usize],
) -> Result<(T, Params<T>)> {
    if indices.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let b = T::from_usize(indices.len()).expect("size");
    let parts: Vec<(T, Params<T>)> = indices
        .par_iter()
        .map(|&i| {
            let x = stacks[i].view();
            let act = forward_sample(params, x)?;
            let y = labels[i];
            let mut g = Params::zeros(&params.config);
            backward_sample(params, x, &act, (sigmoid(act.logit) - y) / b, &mut g);
            Ok((softplus(act.logit) - y * act.logit, g))
        })
        .collect::<Result<_>>()?;
    let mut loss = T::zero();
    let mut total = Params::zeros(&params.config);
    for (l, g) in &parts {
        loss += *l;
        total.add_assign(g);
    }
    Ok((loss / b, total))
}

/// Logits for each stack, in input order.
pub fn predict<T: Real>(params: &Params<T>, stacks: &[&ndarray::Array3<T>]) -> Result<Vec<T>> {
    stacks
        .par_iter()
        .map(|x| forward_sample(params, x.view()).map(|a| a.logit))
        .collect()
}

const CKPT_MAGIC: &[u8] = b"CKPT1\n";

/// Writes a checkpoint: `CKPT1`, `key=value` config lines ended by a blank
/// line, a `u32` tensor count, then each tensor as `u32` rank, `u32` dims
/// and little-endian `f32` values.
pub fn write_checkpoint<T: Real, W: Write>(params: &Params<T>, meta: &BTreeMap<String, String>, mut w: W) -> Result<()> {
    let cfg = &params.config;
    let mut header = String::new();
    header.push_str(&format!("in_channels={}\n", cfg.in_channels));
    header.push_str(&format!("image_size={}\n", cfg.image_size));
    header.push_str(&format!(
        "conv_channels={}\n",
        cfg.conv_channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
    ));
    if let Some(sel) = &cfg.selected {
        header.push_str(&format!(
            "selected={}\n",
            sel.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
        ));
    }
    for (k, v) in meta {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::Config(format!("invalid checkpoint metadata key/value '{k}'")));
        }
        header.push_str(&format!("meta.{k}={v}\n"));
    }
    header.push('\n');
    w.write_all(CKPT_MAGIC)?;
    w.write_all(header.as_bytes())?;
    let shapes = params.tensor_shapes();
    w.write_all(&(shapes.len() as u32).to_le_bytes())?;
    for (shape, data) in shapes.iter().zip(params.tensors()) {
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(data.len() * 4);
        for v in data {
            buf.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn parse_list(s: &str) -> std::result::Result<Vec<usize>, std::num::ParseIntError> {
    s.split(',').filter(|t| !t.is_empty()).map(str::parse).collect()
}

pub fn read_checkpoint<R: Read>(mut r: R, origin: &Path) -> Result<(Params<f32>, BTreeMap<String, String>)> {
    let corrupt = |reason: String| Error::Corrupt {
        path: origin.to_path_buf(),
        reason,
    };
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if !bytes.starts_with(CKPT_MAGIC) {
        return Err(Error::UnsupportedFormat {
            path: origin.to_path_buf(),
            reason: "missing CKPT1 magic".into(),
        });
    }
    let rest = &bytes[CKPT_MAGIC.len()..];
    let end = rest
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| corrupt("unterminated config block".into()))?;
    let header = std::str::from_utf8(&rest[..end]).map_err(|_| corrupt("config block is not UTF-8".into()))?;
    let mut fields = BTreeMap::new();
    let mut meta = BTreeMap::new();
    for line in header.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| corrupt(format!("config line '{line}' lacks '='")))?;
        match k.strip_prefix("meta.") {
            Some(m) => meta.insert(m.to_string(), v.to_string()),
            None => fields.insert(k.to_string(), v.to_string()),
        };
    }
    let field = |k: &str| fields.get(k).ok_or_else(|| corrupt(format!("missing '{k}'")));
    let num = |k: &str| -> Result<usize> { field(k)?.parse().map_err(|_| corrupt(format!("bad '{k}'"))) };
    let config = ModelConfig {
        in_channels: num("in_channels")?,
        image_size: num("image_size")?,
        conv_channels: parse_list(field("conv_channels")?).map_err(|_| corrupt("bad conv_channels".into()))?,
        selected: match fields.get("selected") {
            Some(s) => Some(parse_list(s).map_err(|_| corrupt("bad selected".into()))?),
            None => None,
        },
    };
    config.validate().map_err(|e| corrupt(e.to_string()))?;
    let mut params = Params::<f32>::zeros(&config);
    let expected = params.tensor_shapes();
    let mut pos = end + 2;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = rest.get(pos..pos + n).ok_or_else(|| corrupt("truncated tensor data".into()))?;
        pos += n;
        Ok(s)
    };
    let read_u32 = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap()) as usize;
    let count = read_u32(take(4)?);
    if count != expected.len() {
        return Err(corrupt(format!("expected {} tensors, found {count}", expected.len())));
    }
    for (shape, dst) in expected.iter().zip(params.tensors_mut()) {
        let rank = read_u32(take(4)?);
        let dims: Vec<usize> = (0..rank).map(|_| take(4).map(read_u32)).collect::<Result<_>>()?;
        if &dims != shape {
            return Err(corrupt(format!("tensor shape {dims:?} does not match {shape:?}")));
        }
        let data = take(dst.len() * 4)?;
        for (v, b) in dst.iter_mut().zip(data.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().unwrap());
        }
    }
    if pos != rest.len() {
        return Err(corrupt("trailing bytes after tensors".into()));
    }
    Ok((params, meta))
}
