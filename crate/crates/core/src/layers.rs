//! Forward and backward passes for the standard layers: 2-D convolution
//! (valid padding, stride 1), max pooling, batch normalization, dense,
//! ReLU, inverted dropout, and softmax cross-entropy.
//!
//! Each op is a pure function over explicit weights; backward passes return
//! exact analytic gradients and are validated against central finite
//! differences in the test suites.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{glorot_uniform_init, Tensor};

/// Forward-pass mode: training (batch statistics, dropout active) or
/// inference (running statistics, dropout identity).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Weights of a valid-padding, stride-1 2-D convolution.
///
/// Kernel layout is (K, K, C_in, C_out) so the output-channel loop is the
/// innermost, contiguous one.
#[derive(Debug, Clone)]
pub struct Conv2dWeights {
    pub kernels: Tensor,
    pub bias: Tensor,
}

impl Conv2dWeights {
    pub fn init(k: usize, c_in: usize, c_out: usize, rng: &mut Rng) -> Result<Conv2dWeights> {
        let kernels =
            glorot_uniform_init(&[k, k, c_in, c_out], k * k * c_in, k * k * c_out, rng)?;
        let bias = Tensor::zeros(&[c_out])?;
        Ok(Conv2dWeights { kernels, bias })
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.kernels.shape()[2]
    }

    pub fn c_out(&self) -> usize {
        self.kernels.shape()[3]
    }

    /// K²·C_in·C_out + C_out, all trainable.
    pub fn param_count(&self) -> usize {
        self.kernels.len() + self.bias.len()
    }
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub dkernels: Tensor,
    pub dbias: Tensor,
}

fn conv_out_extent(input: usize, k: usize) -> Result<usize> {
    if input < k {
        return Err(Error::Shape(format!(
            "input extent {input} smaller than kernel {k}"
        )));
    }
    Ok(input - k + 1)
}

/// y[n,i,j,o] = sum_{u,v,c} w[u,v,c,o] * x[n,i+u,j+v,c] + bias[o].
pub fn conv2d_forward(x: &Tensor, w: &Conv2dWeights) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!("conv2d expects NHWC, got {:?}", x.shape())));
    }
    let (n, h, win, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let k = w.kernel_size();
    if c_in != w.c_in() {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input {c_in}, weights {}",
            w.c_in()
        )));
    }
    let ho = conv_out_extent(h, k)?;
    let wo = conv_out_extent(win, k)?;
    let c_out = w.c_out();

    let mut y = Tensor::zeros(&[n, ho, wo, c_out])?;
    let sample_in = h * win * c_in;
    let sample_out = ho * wo * c_out;
    let xd = x.data();
    let kd = w.kernels.data();
    let bd = w.bias.data();

    y.data_mut()
        .par_chunks_mut(sample_out)
        .enumerate()
        .for_each(|(b, out)| {
            let xs = &xd[b * sample_in..(b + 1) * sample_in];
            for i in 0..ho {
                for j in 0..wo {
                    let acc = &mut out[(i * wo + j) * c_out..(i * wo + j + 1) * c_out];
                    acc.copy_from_slice(bd);
                    for u in 0..k {
                        for v in 0..k {
                            let xrow = ((i + u) * win + (j + v)) * c_in;
                            let krow = (u * k + v) * c_in * c_out;
                            for c in 0..c_in {
                                let xv = xs[xrow + c];
                                let ks = &kd[krow + c * c_out..krow + (c + 1) * c_out];
                                for o in 0..c_out {
                                    acc[o] += xv * ks[o];
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(y)
}

/// Gradients of conv2d w.r.t. input, kernels and bias.
pub fn conv2d_backward(x: &Tensor, w: &Conv2dWeights, dy: &Tensor) -> Result<(Tensor, Conv2dGrads)> {
    let (n, h, win, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let k = w.kernel_size();
    let ho = conv_out_extent(h, k)?;
    let wo = conv_out_extent(win, k)?;
    let c_out = w.c_out();
    if dy.shape() != [n, ho, wo, c_out] {
        return Err(Error::Shape(format!(
            "conv2d backward: dy shape {:?}, expected {:?}",
            dy.shape(),
            [n, ho, wo, c_out]
        )));
    }

    let sample_in = h * win * c_in;
    let sample_out = ho * wo * c_out;
    let xd = x.data();
    let dyd = dy.data();
    let kd = w.kernels.data();
    let kw_len = w.kernels.len();

    let mut dx = x.zeros_like();
    dx.data_mut()
        .par_chunks_mut(sample_in)
        .enumerate()
        .for_each(|(b, dxs)| {
            let dys = &dyd[b * sample_out..(b + 1) * sample_out];
            for i in 0..ho {
                for j in 0..wo {
                    let drow = &dys[(i * wo + j) * c_out..(i * wo + j + 1) * c_out];
                    for u in 0..k {
                        for v in 0..k {
                            let xrow = ((i + u) * win + (j + v)) * c_in;
                            let krow = (u * k + v) * c_in * c_out;
                            for c in 0..c_in {
                                let ks = &kd[krow + c * c_out..krow + (c + 1) * c_out];
                                let mut acc = 0.0;
                                for o in 0..c_out {
                                    acc += drow[o] * ks[o];
                                }
                                dxs[xrow + c] += acc;
                            }
                        }
                    }
                }
            }
        });

    // Per-sample weight-gradient partials, summed in sample order so the
    // result does not depend on thread scheduling.
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|b| {
            let xs = &xd[b * sample_in..(b + 1) * sample_in];
            let dys = &dyd[b * sample_out..(b + 1) * sample_out];
            let mut dkern = vec![0.0; kw_len];
            let mut dbias = vec![0.0; c_out];
            for i in 0..ho {
                for j in 0..wo {
                    let drow = &dys[(i * wo + j) * c_out..(i * wo + j + 1) * c_out];
                    for o in 0..c_out {
                        dbias[o] += drow[o];
                    }
                    for u in 0..k {
                        for v in 0..k {
                            let xrow = ((i + u) * win + (j + v)) * c_in;
                            let krow = (u * k + v) * c_in * c_out;
                            for c in 0..c_in {
                                let xv = xs[xrow + c];
                                let kslice = &mut dkern[krow + c * c_out..krow + (c + 1) * c_out];
                                for o in 0..c_out {
                                    kslice[o] += xv * drow[o];
                                }
                            }
                        }
                    }
                }
            }
            (dkern, dbias)
        })
        .collect();

    let mut dkernels = w.kernels.zeros_like();
    let mut dbias = w.bias.zeros_like();
    for (pk, pb) in &partials {
        for (d, s) in dkernels.data_mut().iter_mut().zip(pk) {
            *d += s;
        }
        for (d, s) in dbias.data_mut().iter_mut().zip(pb) {
            *d += s;
        }
    }
    Ok((dx, Conv2dGrads { dkernels, dbias }))
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

/// Pooling window and stride (the model uses 2x2 / stride 2).
#[derive(Debug, Clone, Copy)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

impl Default for PoolSpec {
    fn default() -> Self {
        PoolSpec { window: 2, stride: 2 }
    }
}

/// Max-pool output plus the argmax index of each window (first occurrence in
/// row-major scan on ties), which the backward pass routes gradients to.
pub struct PoolForward {
    pub y: Tensor,
    pub argmax: Vec<usize>,
}

pub fn maxpool2d_forward(x: &Tensor, spec: PoolSpec) -> Result<PoolForward> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!("maxpool expects NHWC, got {:?}", x.shape())));
    }
    let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, s) = (spec.window, spec.stride);
    if f == 0 || s == 0 {
        return Err(Error::Config("pool window and stride must be positive".into()));
    }
    if h < f || w < f {
        return Err(Error::Shape(format!(
            "maxpool input {h}x{w} smaller than window {f}"
        )));
    }
    let ho = (h - f) / s + 1;
    let wo = (w - f) / s + 1;
    let mut y = Tensor::zeros(&[n, ho, wo, c])?;
    let mut argmax = vec![0usize; y.len()];
    for b in 0..n {
        for i in 0..ho {
            for j in 0..wo {
                for k in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for m in 0..f {
                        for nn in 0..f {
                            let idx = x.idx4(b, i * s + m, j * s + nn, k);
                            let v = x.data()[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    let oi = y.idx4(b, i, j, k);
                    y.data_mut()[oi] = best;
                    argmax[oi] = best_idx;
                }
            }
        }
    }
    Ok(PoolForward { y, argmax })
}

pub fn maxpool2d_backward(fwd: &PoolForward, x_shape: &[usize], dy: &Tensor) -> Result<Tensor> {
    if dy.shape() != fwd.y.shape() {
        return Err(Error::Shape(format!(
            "maxpool backward: dy shape {:?}, expected {:?}",
            dy.shape(),
            fwd.y.shape()
        )));
    }
    let mut dx = Tensor::zeros(x_shape)?;
    for (o, &src) in fwd.argmax.iter().enumerate() {
        dx.data_mut()[src] += dy.data()[o];
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Per-channel batch normalization state: gamma/beta are trainable,
/// running mean/var are updated by momentum in train mode.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub epsilon: f64,
}

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-3;

impl BatchNormState {
    pub fn new(channels: usize) -> Result<BatchNormState> {
        Ok(BatchNormState {
            gamma: Tensor::new(&[channels], 1.0)?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::new(&[channels], 1.0)?,
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// (trainable, non-trainable) = (2C, 2C).
    pub fn param_count(&self) -> (usize, usize) {
        (2 * self.channels(), 2 * self.channels())
    }
}

/// Train-mode cache: normalized activations and the batch inverse stddev.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub rows: usize,
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub dgamma: Tensor,
    pub dbeta: Tensor,
}

/// Normalize `data`, viewed as (rows, channels) row-major, in place into a new
/// buffer. Train mode uses biased batch statistics (and updates the running
/// ones); infer mode uses the running statistics.
pub fn bn_forward_flat(
    data: &[f64],
    rows: usize,
    state: &mut BatchNormState,
    mode: Mode,
) -> Result<(Vec<f64>, Option<BnCache>)> {
    let c = state.channels();
    if rows == 0 {
        return Err(Error::State("batchnorm on an empty batch".into()));
    }
    if data.len() != rows * c {
        return Err(Error::Shape(format!(
            "batchnorm: {} values do not form ({rows}, {c})",
            data.len()
        )));
    }
    let mut out = vec![0.0; data.len()];
    match mode {
        Mode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for r in 0..rows {
                for k in 0..c {
                    mean[k] += data[r * c + k];
                }
            }
            for m in mean.iter_mut() {
                *m /= rows as f64;
            }
            for r in 0..rows {
                for k in 0..c {
                    let d = data[r * c + k] - mean[k];
                    var[k] += d * d;
                }
            }
            for v in var.iter_mut() {
                *v /= rows as f64;
            }
            let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + state.epsilon).sqrt()).collect();
            let mut xhat = vec![0.0; data.len()];
            for r in 0..rows {
                for k in 0..c {
                    let xh = (data[r * c + k] - mean[k]) * inv_std[k];
                    xhat[r * c + k] = xh;
                    out[r * c + k] = state.gamma.data()[k] * xh + state.beta.data()[k];
                }
            }
            let m = state.momentum;
            for k in 0..c {
                state.running_mean.data_mut()[k] =
                    m * state.running_mean.data()[k] + (1.0 - m) * mean[k];
                state.running_var.data_mut()[k] =
                    m * state.running_var.data()[k] + (1.0 - m) * var[k];
            }
            Ok((out, Some(BnCache { xhat, inv_std, rows })))
        }
        Mode::Infer => {
            let inv_std: Vec<f64> = state
                .running_var
                .data()
                .iter()
                .map(|&v| 1.0 / (v + state.epsilon).sqrt())
                .collect();
            for r in 0..rows {
                for k in 0..c {
                    let xh = (data[r * c + k] - state.running_mean.data()[k]) * inv_std[k];
                    out[r * c + k] = state.gamma.data()[k] * xh + state.beta.data()[k];
                }
            }
            Ok((out, None))
        }
    }
}

/// Backward through train-mode batch normalization. Batch statistics are
/// functions of the input, so their gradient terms are included.
pub fn bn_backward_flat(
    dy: &[f64],
    state: &BatchNormState,
    cache: &BnCache,
) -> Result<(Vec<f64>, BnGrads)> {
    let c = state.channels();
    let rows = cache.rows;
    if dy.len() != rows * c {
        return Err(Error::Shape(format!(
            "batchnorm backward: {} values do not form ({rows}, {c})",
            dy.len()
        )));
    }
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for r in 0..rows {
        for k in 0..c {
            dgamma[k] += dy[r * c + k] * cache.xhat[r * c + k];
            dbeta[k] += dy[r * c + k];
        }
    }
    // dx = gamma * inv_std * (dy - mean(dy) - xhat * mean(dy*xhat))
    let mf = rows as f64;
    let mut dx = vec![0.0; dy.len()];
    for k in 0..c {
        let g = state.gamma.data()[k] * cache.inv_std[k];
        let mean_dy = dbeta[k] / mf;
        let mean_dyxhat = dgamma[k] / mf;
        for r in 0..rows {
            dx[r * c + k] =
                g * (dy[r * c + k] - mean_dy - cache.xhat[r * c + k] * mean_dyxhat);
        }
    }
    Ok((
        dx,
        BnGrads {
            dgamma: Tensor::from_vec(&[c], dgamma)?,
            dbeta: Tensor::from_vec(&[c], dbeta)?,
        },
    ))
}

/// Batch normalization over the channel axis of an NHWC tensor.
pub fn batchnorm2d_forward(
    x: &Tensor,
    state: &mut BatchNormState,
    mode: Mode,
) -> Result<(Tensor, Option<BnCache>)> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!("batchnorm expects NHWC, got {:?}", x.shape())));
    }
    if x.shape()[3] != state.channels() {
        return Err(Error::Shape(format!(
            "batchnorm channel mismatch: input {}, state {}",
            x.shape()[3],
            state.channels()
        )));
    }
    let rows = x.len() / state.channels();
    let (out, cache) = bn_forward_flat(x.data(), rows, state, mode)?;
    Ok((Tensor::from_vec(x.shape(), out)?, cache))
}

pub fn batchnorm2d_backward(
    dy: &Tensor,
    state: &BatchNormState,
    cache: &BnCache,
) -> Result<(Tensor, BnGrads)> {
    let (dx, grads) = bn_backward_flat(dy.data(), state, cache)?;
    Ok((Tensor::from_vec(dy.shape(), dx)?, grads))
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DenseWeights {
    pub weight: Tensor, // (fan_in, fan_out)
    pub bias: Tensor,   // (fan_out)
}

impl DenseWeights {
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<DenseWeights> {
        Ok(DenseWeights {
            weight: glorot_uniform_init(&[fan_in, fan_out], fan_in, fan_out, rng)?,
            bias: Tensor::zeros(&[fan_out])?,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub dweight: Tensor,
    pub dbias: Tensor,
}

/// y = x W + b for x of shape (N, fan_in).
pub fn dense_forward(x: &Tensor, w: &DenseWeights) -> Result<Tensor> {
    if x.rank() != 2 || x.shape()[1] != w.fan_in() {
        return Err(Error::Shape(format!(
            "dense expects (N, {}), got {:?}",
            w.fan_in(),
            x.shape()
        )));
    }
    let (n, fi, fo) = (x.shape()[0], w.fan_in(), w.fan_out());
    let mut y = Tensor::zeros(&[n, fo])?;
    let wd = w.weight.data();
    for r in 0..n {
        let out = &mut y.data_mut()[r * fo..(r + 1) * fo];
        out.copy_from_slice(w.bias.data());
        for i in 0..fi {
            let xv = x.data()[r * fi + i];
            let wrow = &wd[i * fo..(i + 1) * fo];
            for o in 0..fo {
                out[o] += xv * wrow[o];
            }
        }
    }
    Ok(y)
}

pub fn dense_backward(x: &Tensor, w: &DenseWeights, dy: &Tensor) -> Result<(Tensor, DenseGrads)> {
    let (n, fi, fo) = (x.shape()[0], w.fan_in(), w.fan_out());
    if dy.shape() != [n, fo] {
        return Err(Error::Shape(format!(
            "dense backward: dy shape {:?}, expected {:?}",
            dy.shape(),
            [n, fo]
        )));
    }
    let mut dx = Tensor::zeros(&[n, fi])?;
    let mut dweight = w.weight.zeros_like();
    let mut dbias = w.bias.zeros_like();
    let wd = w.weight.data();
    for r in 0..n {
        let drow = &dy.data()[r * fo..(r + 1) * fo];
        for o in 0..fo {
            dbias.data_mut()[o] += drow[o];
        }
        for i in 0..fi {
            let wrow = &wd[i * fo..(i + 1) * fo];
            let mut acc = 0.0;
            for o in 0..fo {
                acc += drow[o] * wrow[o];
            }
            dx.data_mut()[r * fi + i] = acc;
            let xv = x.data()[r * fi + i];
            let dwrow = &mut dweight.data_mut()[i * fo..(i + 1) * fo];
            for o in 0..fo {
                dwrow[o] += xv * drow[o];
            }
        }
    }
    Ok((dx, DenseGrads { dweight, dbias }))
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// dx = dy where x > 0, else 0 (subgradient 0 at the kink).
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if x.shape() != dy.shape() {
        return Err(Error::Shape(format!(
            "relu backward: dy shape {:?}, expected {:?}",
            dy.shape(),
            x.shape()
        )));
    }
    let mut dx = dy.clone();
    for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
        if xv <= 0.0 {
            *d = 0.0;
        }
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate); inference is the identity.
/// The returned mask (survivor scale or 0) drives the backward pass.
pub fn dropout_forward(
    x: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let scale = 1.0 / (1.0 - rate);
    let mut y = x.clone();
    let mut mask = vec![0.0; x.len()];
    for (i, v) in y.data_mut().iter_mut().enumerate() {
        if rng.next_f64() < rate {
            *v = 0.0;
        } else {
            *v *= scale;
            mask[i] = scale;
        }
    }
    Ok((y, Some(mask)))
}

pub fn dropout_backward(dy: &Tensor, mask: Option<&Vec<f64>>) -> Tensor {
    match mask {
        None => dy.clone(),
        Some(m) => {
            let mut dx = dy.clone();
            for (d, &s) in dx.data_mut().iter_mut().zip(m) {
                *d *= s;
            }
            dx
        }
    }
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy
// ---------------------------------------------------------------------------

pub struct SoftmaxXent {
    pub loss: f64,
    pub probs: Tensor,
    pub dlogits: Tensor,
}

/// Mean negative log-likelihood over a batch of one-hot labels, with the
/// usual max-subtraction stabilization. dlogits = (probs - labels) / N.
pub fn softmax_xent(logits: &Tensor, labels: &Tensor) -> Result<SoftmaxXent> {
    if logits.rank() != 2 || labels.shape() != logits.shape() {
        return Err(Error::Shape(format!(
            "softmax_xent: logits {:?} vs labels {:?}",
            logits.shape(),
            labels.shape()
        )));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    for r in 0..n {
        let row = &labels.data()[r * k..(r + 1) * k];
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != k {
            return Err(Error::Config(format!("labels row {r} is not one-hot")));
        }
    }
    logits.check_finite("softmax_xent logits")?;

    let mut probs = logits.zeros_like();
    let mut dlogits = logits.zeros_like();
    let mut loss = 0.0;
    for r in 0..n {
        let row = &logits.data()[r * k..(r + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for c in 0..k {
            let p = exps[c] / z;
            probs.data_mut()[r * k + c] = p;
            let lbl = labels.data()[r * k + c];
            dlogits.data_mut()[r * k + c] = (p - lbl) / n as f64;
            if lbl == 1.0 {
                // log(p) = (x - max) - log(z): stable even for extreme logits.
                loss -= (row[c] - max) - z.ln();
            }
        }
    }
    Ok(SoftmaxXent {
        loss: loss / n as f64,
        probs,
        dlogits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{grad_check, random_tensor, rel_err};

    #[test]
    fn conv_identity_1x1_kernel() {
        let x = random_tensor(&[1, 3, 3, 1], 1, 1.0);
        let w = Conv2dWeights {
            kernels: Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap(),
            bias: Tensor::zeros(&[1]).unwrap(),
        };
        let y = conv2d_forward(&x, &w).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_table_shape_and_params() {
        let mut rng = Rng::new(0);
        let w = Conv2dWeights::init(3, 3, 32, &mut rng).unwrap();
        assert_eq!(w.param_count(), 896);
        let x = Tensor::zeros(&[1, 48, 48, 3]).unwrap();
        let y = conv2d_forward(&x, &w).unwrap();
        assert_eq!(y.shape(), &[1, 46, 46, 32]);
    }

    #[test]
    fn conv_rejects_small_input() {
        let mut rng = Rng::new(0);
        let w = Conv2dWeights::init(3, 1, 1, &mut rng).unwrap();
        let x = Tensor::zeros(&[1, 2, 2, 1]).unwrap();
        assert!(conv2d_forward(&x, &w).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = Rng::new(21);
        let x = random_tensor(&[1, 5, 5, 2], 22, 1.0);
        let w = Conv2dWeights::init(3, 2, 2, &mut rng).unwrap();
        let proj = random_tensor(&[1, 3, 3, 2], 23, 1.0);

        // loss = sum(conv(x, w) * proj)
        let loss = |x: &Tensor, kern: &Tensor, bias: &Tensor| {
            let w = Conv2dWeights {
                kernels: kern.clone(),
                bias: bias.clone(),
            };
            let y = conv2d_forward(x, &w).unwrap();
            y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let y = conv2d_forward(&x, &w).unwrap();
        assert_eq!(y.shape(), proj.shape());
        let (dx, grads) = conv2d_backward(&x, &w, &proj).unwrap();

        let max_rel = grad_check(&x, &dx, |t| loss(t, &w.kernels, &w.bias))
            .max(grad_check(&w.kernels, &grads.dkernels, |t| loss(&x, t, &w.bias)))
            .max(grad_check(&w.bias, &grads.dbias, |t| loss(&x, &w.kernels, t)));
        assert!(max_rel < 1e-4, "max rel err {max_rel}");
    }

    #[test]
    fn maxpool_basic_and_backward() {
        let x = Tensor::from_vec(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let fwd = maxpool2d_forward(&x, PoolSpec::default()).unwrap();
        assert_eq!(fwd.y.data(), &[4.0]);
        let dy = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let dx = maxpool2d_backward(&fwd, x.shape(), &dy).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_table_extents() {
        let x = Tensor::zeros(&[1, 46, 46, 32]).unwrap();
        let y = maxpool2d_forward(&x, PoolSpec::default()).unwrap().y;
        assert_eq!(y.shape(), &[1, 23, 23, 32]);
        let x = Tensor::zeros(&[1, 21, 21, 64]).unwrap();
        let y = maxpool2d_forward(&x, PoolSpec::default()).unwrap().y;
        assert_eq!(y.shape(), &[1, 10, 10, 64]);
    }

    #[test]
    fn maxpool_constant_input_tie_rule() {
        let x = Tensor::new(&[1, 4, 4, 1], 2.5).unwrap();
        let fwd = maxpool2d_forward(&x, PoolSpec::default()).unwrap();
        assert!(fwd.y.data().iter().all(|&v| v == 2.5));
        let dy = Tensor::new(&[1, 2, 2, 1], 1.0).unwrap();
        let dx = maxpool2d_backward(&fwd, x.shape(), &dy).unwrap();
        // Exactly one unit of gradient per window, at its first element.
        assert_eq!(dx.sum(), 4.0);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(dx.at4(0, 2 * i, 2 * j, 0), 1.0);
            }
        }
    }

    #[test]
    fn maxpool_conserves_gradient_mass() {
        let x = random_tensor(&[2, 6, 6, 3], 31, 1.0);
        let fwd = maxpool2d_forward(&x, PoolSpec::default()).unwrap();
        let dy = random_tensor(&[2, 3, 3, 3], 32, 1.0);
        let dx = maxpool2d_backward(&fwd, x.shape(), &dy).unwrap();
        assert!((dx.sum() - dy.sum()).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_normalizes_in_train_mode() {
        let mut state = BatchNormState::new(2).unwrap();
        let x = random_tensor(&[2, 3, 3, 2], 41, 3.0);
        let (y, _) = batchnorm2d_forward(&x, &mut state, Mode::Train).unwrap();
        let rows = (y.len() / 2) as f64;
        for k in 0..2 {
            let mut mean = 0.0;
            for r in 0..y.len() / 2 {
                mean += y.data()[r * 2 + k];
            }
            mean /= rows;
            assert!(mean.abs() < 1e-9, "channel {k} mean {mean}");
            let mut var = 0.0;
            for r in 0..y.len() / 2 {
                let d = y.data()[r * 2 + k] - mean;
                var += d * d;
            }
            var /= rows;
            // Variance of xhat is var/(var+eps) with eps = 1e-3.
            assert!((var - 1.0).abs() < 1e-2, "channel {k} var {var}");
        }
    }

    #[test]
    fn batchnorm_param_counts() {
        let s = BatchNormState::new(64).unwrap();
        let (t, nt) = s.param_count();
        assert_eq!(t + nt, 256);
        let s = BatchNormState::new(128).unwrap();
        let (t, nt) = s.param_count();
        assert_eq!(t + nt, 512);
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        let x = random_tensor(&[2, 3, 3, 2], 51, 1.5);
        let state = BatchNormState::new(2).unwrap();
        let proj = random_tensor(&[2, 3, 3, 2], 52, 1.0);
        let loss = |x: &Tensor, gamma: &Tensor, beta: &Tensor| {
            let mut s = state.clone();
            s.gamma = gamma.clone();
            s.beta = beta.clone();
            let (y, _) = batchnorm2d_forward(x, &mut s, Mode::Train).unwrap();
            y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut s = state.clone();
        let (_, cache) = batchnorm2d_forward(&x, &mut s, Mode::Train).unwrap();
        let (dx, grads) = batchnorm2d_backward(&proj, &state, &cache.unwrap()).unwrap();

        let max_rel = grad_check(&x, &dx, |t| loss(t, &state.gamma, &state.beta))
            .max(grad_check(&state.gamma, &grads.dgamma, |t| loss(&x, t, &state.beta)))
            .max(grad_check(&state.beta, &grads.dbeta, |t| loss(&x, &state.gamma, t)));
        assert!(max_rel < 1e-4, "max rel err {max_rel}");
    }

    #[test]
    fn batchnorm_infer_uses_running_stats() {
        let mut state = BatchNormState::new(1).unwrap();
        state.running_mean.data_mut()[0] = 2.0;
        state.running_var.data_mut()[0] = 4.0;
        let x = Tensor::from_vec(&[1, 1, 2, 1], vec![2.0, 4.0]).unwrap();
        let (y, cache) = batchnorm2d_forward(&x, &mut state, Mode::Infer).unwrap();
        assert!(cache.is_none());
        assert!((y.data()[0] - 0.0).abs() < 1e-12);
        assert!((y.data()[1] - 2.0 / (4.0_f64 + 1e-3).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dense_identity_and_params() {
        let mut w = DenseWeights::init(3, 3, &mut Rng::new(0)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                w.weight.set2(i, j, if i == j { 1.0 } else { 0.0 });
            }
        }
        let x = random_tensor(&[2, 3], 61, 1.0);
        let y = dense_forward(&x, &w).unwrap();
        assert_eq!(y, x);

        let w = DenseWeights::init(2048, 128, &mut Rng::new(0)).unwrap();
        assert_eq!(w.param_count(), 262_272);
        let w = DenseWeights::init(128, 2, &mut Rng::new(0)).unwrap();
        assert_eq!(w.param_count(), 258);
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let x = random_tensor(&[3, 4], 71, 1.0);
        let w = DenseWeights::init(4, 2, &mut Rng::new(72)).unwrap();
        let proj = random_tensor(&[3, 2], 73, 1.0);
        let loss = |x: &Tensor, weight: &Tensor, bias: &Tensor| {
            let w = DenseWeights {
                weight: weight.clone(),
                bias: bias.clone(),
            };
            let y = dense_forward(x, &w).unwrap();
            y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (dx, grads) = dense_backward(&x, &w, &proj).unwrap();
        let max_rel = grad_check(&x, &dx, |t| loss(t, &w.weight, &w.bias))
            .max(grad_check(&w.weight, &grads.dweight, |t| loss(&x, t, &w.bias)))
            .max(grad_check(&w.bias, &grads.dbias, |t| loss(&x, &w.weight, t)));
        assert!(max_rel < 1e-4, "max rel err {max_rel}");
    }

    #[test]
    fn relu_values_and_subgradient() {
        let x = Tensor::from_vec(&[1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let dy = Tensor::new(&[1, 3], 1.0).unwrap();
        let dx = relu_backward(&x, &dy).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0]);

        let x = Tensor::from_vec(&[1, 3], vec![0.5, 1.0, 7.0]).unwrap();
        assert_eq!(relu_forward(&x), x);
    }

    #[test]
    fn dropout_identity_cases() {
        let x = random_tensor(&[2, 5], 81, 1.0);
        let mut rng = Rng::new(82);
        let (y, mask) = dropout_forward(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
        let (y, _) = dropout_forward(&x, 0.1, Mode::Infer, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(dropout_forward(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_mean_in_expectation() {
        let x = Tensor::new(&[100, 1000], 1.0).unwrap();
        let mut rng = Rng::new(83);
        let (y, _) = dropout_forward(&x, 0.1, Mode::Train, &mut rng).unwrap();
        let mean = y.sum() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn softmax_xent_symmetric_case() {
        let logits = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let labels = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let out = softmax_xent(&logits, &labels).unwrap();
        assert!((out.probs.data()[0] - 0.5).abs() < 1e-12);
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn softmax_xent_extreme_logits_stable() {
        let logits = Tensor::from_vec(&[1, 2], vec![1000.0, 0.0]).unwrap();
        let labels = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let out = softmax_xent(&logits, &labels).unwrap();
        assert!(out.loss.is_finite());
        assert!(out.loss < 1e-12);
        let row_sum: f64 = out.probs.data().iter().sum();
        assert!((row_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_xent_rejects_bad_labels() {
        let logits = Tensor::zeros(&[1, 2]).unwrap();
        let labels = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap();
        assert!(softmax_xent(&logits, &labels).is_err());
    }

    #[test]
    fn softmax_xent_gradient_matches_finite_differences() {
        let logits = random_tensor(&[3, 2], 91, 2.0);
        let labels =
            Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = softmax_xent(&logits, &labels).unwrap();
        let mut max_rel = 0.0_f64;
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut lp = logits.clone();
            lp.data_mut()[i] += h;
            let mut lm = logits.clone();
            lm.data_mut()[i] -= h;
            let num = (softmax_xent(&lp, &labels).unwrap().loss
                - softmax_xent(&lm, &labels).unwrap().loss)
                / (2.0 * h);
            max_rel = max_rel.max(rel_err(num, out.dlogits.data()[i]));
        }
        assert!(max_rel < 1e-6, "max rel err {max_rel}");
    }
}
