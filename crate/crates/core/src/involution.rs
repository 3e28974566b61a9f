//! Involution: a spatial operator whose K x K kernel is generated per pixel
//! from that pixel's own channel vector and then applied to the pixel's
//! neighborhood. Location-specific, channel-agnostic — the inverse trade of
//! convolution.
//!
//! Kernel generation is a pointwise bottleneck shared across all pixels:
//!
//!   reduce:  z0 = W0 x + b0        (C -> C_red, a 1x1 map)
//!   norm:    z1 = BN(z0)           (per-channel batch norm)
//!   nonlin:  z2 = relu(z1)
//!   expand:  k  = W1 z2 + b1       (C_red -> K^2 * G)
//!
//! Application then takes, at every output pixel, the inner product of the
//! generated kernel with the zero-padded K x K neighborhood; all channels of
//! a group share the same kernel. Stride is 1 and padding is "same", so the
//! output spatial shape equals the input's.

use crate::error::{Error, Result};
use crate::layers::{bn_backward_flat, bn_forward_flat, BatchNormState, BnCache, Mode};
use crate::rng::Rng;
use crate::tensor::{glorot_uniform_init, pad_spatial, Tensor};

/// Structural description of one involution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvolutionSpec {
    pub channels: usize,
    pub kernel_size: usize,
    pub groups: usize,
    pub reduction_ratio: usize,
}

impl InvolutionSpec {
    /// The model's configuration: C=3, K=3, G=1, r=2.
    pub fn paper() -> InvolutionSpec {
        InvolutionSpec {
            channels: 3,
            kernel_size: 3,
            groups: 1,
            reduction_ratio: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.groups == 0 || self.reduction_ratio == 0 {
            return Err(Error::Config("involution extents must be >= 1".into()));
        }
        if self.channels % self.groups != 0 {
            return Err(Error::Config(format!(
                "channels {} not divisible by groups {}",
                self.channels, self.groups
            )));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size {} must be odd",
                self.kernel_size
            )));
        }
        Ok(())
    }

    /// Bottleneck width: floor(C / r), clamped to at least 1.
    pub fn reduced_channels(&self) -> usize {
        (self.channels / self.reduction_ratio).max(1)
    }

    /// Kernel taps per group times groups: the width of the expand map.
    pub fn kernel_width(&self) -> usize {
        self.kernel_size * self.kernel_size * self.groups
    }

    pub fn padding(&self) -> usize {
        self.kernel_size / 2
    }
}

/// Parameter counts of one involution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
    pub non_trainable: usize,
}

/// Parameter accounting for the kernel-generation network:
/// reduce (C*C_red + C_red) + BN (4*C_red, half non-trainable) +
/// expand (C_red*K^2*G + K^2*G).
pub fn inv_param_count(spec: &InvolutionSpec) -> ParamCount {
    let c = spec.channels;
    let r = spec.reduced_channels();
    let q = spec.kernel_width();
    let trainable = c * r + r + 2 * r + r * q + q;
    let non_trainable = 2 * r;
    ParamCount {
        total: trainable + non_trainable,
        trainable,
        non_trainable,
    }
}

/// The meta weights: everything an involution layer learns.
#[derive(Debug, Clone)]
pub struct InvolutionWeights {
    pub w0: Tensor,    // (C_red, C)
    pub bias0: Tensor, // (C_red)
    pub bn: BatchNormState,
    pub w1: Tensor,    // (K^2*G, C_red)
    pub bias1: Tensor, // (K^2*G)
}

impl InvolutionWeights {
    pub fn init(spec: &InvolutionSpec, rng: &mut Rng) -> Result<InvolutionWeights> {
        spec.validate()?;
        let c = spec.channels;
        let r = spec.reduced_channels();
        let q = spec.kernel_width();
        Ok(InvolutionWeights {
            w0: glorot_uniform_init(&[r, c], c, r, rng)?,
            bias0: Tensor::zeros(&[r])?,
            bn: BatchNormState::new(r)?,
            w1: glorot_uniform_init(&[q, r], r, q, rng)?,
            bias1: Tensor::zeros(&[q])?,
        })
    }

    /// Number of scalars actually allocated (trainable, non-trainable).
    pub fn allocated_counts(&self) -> (usize, usize) {
        let trainable =
            self.w0.len() + self.bias0.len() + self.bn.gamma.len() + self.bn.beta.len()
                + self.w1.len()
                + self.bias1.len();
        let non_trainable = self.bn.running_mean.len() + self.bn.running_var.len();
        (trainable, non_trainable)
    }
}

/// All per-pixel generated kernels: tensor of shape (N, H, W, K^2*G), the
/// (K^2, G) pair packed row-major in the last axis.
#[derive(Debug, Clone)]
pub struct KernelField {
    pub tensor: Tensor,
    pub kernel_size: usize,
    pub groups: usize,
}

impl KernelField {
    /// Kernel value at pixel (n, i, j), tap t (row-major over the K x K
    /// window), group g.
    pub fn at(&self, n: usize, i: usize, j: usize, t: usize, g: usize) -> f64 {
        self.tensor
            .at4(n, i, j, t * self.groups + g)
    }
}

/// Train-mode intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct InvCache {
    bn_cache: BnCache,
    z1: Vec<f64>, // post-BN, pre-ReLU (M, C_red)
    z2: Vec<f64>, // post-ReLU (M, C_red)
}

/// Output of one involution forward pass.
pub struct InvForward {
    pub y: Tensor,
    pub kernels: KernelField,
    pub cache: Option<InvCache>,
}

/// Gradients of an involution layer.
#[derive(Debug, Clone)]
pub struct InvGrads {
    pub dx: Tensor,
    pub dw0: Tensor,
    pub dbias0: Tensor,
    pub dgamma: Tensor,
    pub dbeta: Tensor,
    pub dw1: Tensor,
    pub dbias1: Tensor,
}

/// Forward pass: generate the per-pixel kernel field, then apply it to the
/// zero-padded neighborhood of every pixel. Train mode caches what the
/// backward pass needs and updates BN running statistics.
pub fn inv_forward(
    x: &Tensor,
    w: &mut InvolutionWeights,
    spec: &InvolutionSpec,
    mode: Mode,
) -> Result<InvForward> {
    spec.validate()?;
    if x.rank() != 4 {
        return Err(Error::Shape(format!(
            "involution expects NHWC, got {:?}",
            x.shape()
        )));
    }
    let (n, h, win, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if c != spec.channels {
        return Err(Error::Shape(format!(
            "involution channel mismatch: input {c}, spec {}",
            spec.channels
        )));
    }
    let r = spec.reduced_channels();
    let q = spec.kernel_width();
    let k = spec.kernel_size;
    let pad = spec.padding();
    let m = n * h * win;

    // reduce: z0 = W0 x + b0, pointwise over all M pixels.
    let mut z0 = vec![0.0; m * r];
    let xd = x.data();
    for pix in 0..m {
        let xv = &xd[pix * c..(pix + 1) * c];
        for rr in 0..r {
            let wrow = &w.w0.data()[rr * c..(rr + 1) * c];
            let mut acc = w.bias0.data()[rr];
            for cc in 0..c {
                acc += wrow[cc] * xv[cc];
            }
            z0[pix * r + rr] = acc;
        }
    }

    // norm + nonlin.
    let (z1, bn_cache) = bn_forward_flat(&z0, m, &mut w.bn, mode)?;
    let mut z2 = z1.clone();
    for v in z2.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }

    // expand: kernels = W1 z2 + b1.
    let mut kvec = vec![0.0; m * q];
    for pix in 0..m {
        let zv = &z2[pix * r..(pix + 1) * r];
        let out = &mut kvec[pix * q..(pix + 1) * q];
        out.copy_from_slice(w.bias1.data());
        for rr in 0..r {
            let zr = zv[rr];
            let wcol = &w.w1.data()[..];
            for qq in 0..q {
                out[qq] += wcol[qq * r + rr] * zr;
            }
        }
    }
    let kernels = KernelField {
        tensor: Tensor::from_vec(&[n, h, win, q], kvec)?,
        kernel_size: k,
        groups: spec.groups,
    };

    // apply: y[n,i,j,c] = sum over the K x K window of kernel * padded input.
    let xp = pad_spatial(x, pad)?;
    let mut y = Tensor::zeros(&[n, h, win, c])?;
    let wp = win + 2 * pad;
    let g_of = |cc: usize| cc * spec.groups / spec.channels;
    let kd = kernels.tensor.data();
    let xpd = xp.data();
    let yd = y.data_mut();
    for b in 0..n {
        for i in 0..h {
            for j in 0..win {
                let pix = (b * h + i) * win + j;
                let kv = &kd[pix * q..(pix + 1) * q];
                let yrow = &mut yd[pix * c..(pix + 1) * c];
                for a in 0..k {
                    for bb in 0..k {
                        let t = a * k + bb;
                        let xrow = ((b * (h + 2 * pad) + i + a) * wp + j + bb) * c;
                        for cc in 0..c {
                            yrow[cc] += kv[t * spec.groups + g_of(cc)] * xpd[xrow + cc];
                        }
                    }
                }
            }
        }
    }
    y.check_finite("involution output")?;

    let cache = match mode {
        Mode::Train => Some(InvCache {
            bn_cache: bn_cache.expect("train mode yields a BN cache"),
            z1,
            z2,
        }),
        Mode::Infer => None,
    };
    Ok(InvForward { y, kernels, cache })
}

/// Backward pass. Gradients flow through both the application path (the
/// output is bilinear in kernels and input) and the generation path (chain
/// rule through W1, ReLU, BN, W0); dx accumulates both contributions.
pub fn inv_backward(
    x: &Tensor,
    w: &InvolutionWeights,
    spec: &InvolutionSpec,
    fwd: &InvForward,
    dy: &Tensor,
) -> Result<InvGrads> {
    let cache = fwd
        .cache
        .as_ref()
        .ok_or_else(|| Error::State("involution backward requires a train-mode forward cache".into()))?;
    if dy.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "involution backward: dy shape {:?}, expected {:?}",
            dy.shape(),
            x.shape()
        )));
    }
    let (n, h, win, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let r = spec.reduced_channels();
    let q = spec.kernel_width();
    let k = spec.kernel_size;
    let pad = spec.padding();
    let m = n * h * win;
    let wp = win + 2 * pad;
    let hp = h + 2 * pad;
    let g_of = |cc: usize| cc * spec.groups / spec.channels;

    // Application path: dkernels and the neighborhood half of dx.
    let xp = pad_spatial(x, pad)?;
    let xpd = xp.data();
    let kd = fwd.kernels.tensor.data();
    let dyd = dy.data();
    let mut dkvec = vec![0.0; m * q];
    let mut dxp = vec![0.0; xp.len()];
    for b in 0..n {
        for i in 0..h {
            for j in 0..win {
                let pix = (b * h + i) * win + j;
                let drow = &dyd[pix * c..(pix + 1) * c];
                let kv = &kd[pix * q..(pix + 1) * q];
                let dkv = &mut dkvec[pix * q..(pix + 1) * q];
                for a in 0..k {
                    for bb in 0..k {
                        let t = a * k + bb;
                        let xrow = ((b * hp + i + a) * wp + j + bb) * c;
                        for cc in 0..c {
                            let qi = t * spec.groups + g_of(cc);
                            dkv[qi] += drow[cc] * xpd[xrow + cc];
                            dxp[xrow + cc] += drow[cc] * kv[qi];
                        }
                    }
                }
            }
        }
    }
    // Crop padded input gradient back to the input region.
    let mut dx = x.zeros_like();
    {
        let dxd = dx.data_mut();
        for b in 0..n {
            for i in 0..h {
                let src = ((b * hp + i + pad) * wp + pad) * c;
                let dst = ((b * h + i) * win) * c;
                for o in 0..win * c {
                    dxd[dst + o] = dxp[src + o];
                }
            }
        }
    }

    // Generation path: back through expand, ReLU, BN, reduce.
    let mut dz2 = vec![0.0; m * r];
    let mut dw1 = w.w1.zeros_like();
    let mut dbias1 = w.bias1.zeros_like();
    for pix in 0..m {
        let dkv = &dkvec[pix * q..(pix + 1) * q];
        let zv = &cache.z2[pix * r..(pix + 1) * r];
        for qq in 0..q {
            let d = dkv[qq];
            dbias1.data_mut()[qq] += d;
            let wrow = &w.w1.data()[qq * r..(qq + 1) * r];
            let dwrow = &mut dw1.data_mut()[qq * r..(qq + 1) * r];
            for rr in 0..r {
                dz2[pix * r + rr] += d * wrow[rr];
                dwrow[rr] += d * zv[rr];
            }
        }
    }
    let mut dz1 = dz2;
    for (d, &z) in dz1.iter_mut().zip(&cache.z1) {
        if z <= 0.0 {
            *d = 0.0;
        }
    }
    let (dz0, bn_grads) = bn_backward_flat(&dz1, &w.bn, &cache.bn_cache)?;

    let mut dw0 = w.w0.zeros_like();
    let mut dbias0 = w.bias0.zeros_like();
    {
        let xd = x.data();
        let dxd = dx.data_mut();
        for pix in 0..m {
            let dzv = &dz0[pix * r..(pix + 1) * r];
            let xv = &xd[pix * c..(pix + 1) * c];
            for rr in 0..r {
                let d = dzv[rr];
                dbias0.data_mut()[rr] += d;
                let wrow = &w.w0.data()[rr * c..(rr + 1) * c];
                let dwrow = &mut dw0.data_mut()[rr * c..(rr + 1) * c];
                for cc in 0..c {
                    dxd[pix * c + cc] += d * wrow[cc];
                    dwrow[cc] += d * xv[cc];
                }
            }
        }
    }

    Ok(InvGrads {
        dx,
        dw0,
        dbias0,
        dgamma: bn_grads.dgamma,
        dbeta: bn_grads.dbeta,
        dw1,
        dbias1,
    })
}
