//! Model construction, layer-by-layer summaries, parameter and storage
//! accounting, and the `.ivcn` binary model file format.
//!
//! Three variant families share one tail: `hybrid(n)` stacks n involution
//! layers in front of three convolution blocks; `conv-only` is `hybrid(0)`;
//! `inv-only` keeps the three involution layers and flattens straight into
//! the dense head.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::involution::{
    inv_backward, inv_forward, inv_param_count, InvForward, InvGrads, InvolutionSpec,
    InvolutionWeights, KernelField,
};
use crate::layers::{
    batchnorm2d_backward, batchnorm2d_forward, conv2d_backward, conv2d_forward, dense_backward,
    dense_forward, dropout_backward, dropout_forward, maxpool2d_backward, maxpool2d_forward,
    relu_backward, relu_forward, BatchNormState, BnCache, BnGrads, Conv2dGrads, Conv2dWeights,
    DenseGrads, DenseWeights, Mode, PoolForward, PoolSpec,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const INPUT_SIZE: usize = 48;
pub const INPUT_CHANNELS: usize = 3;
pub const NUM_CLASSES: usize = 2;
pub const DROPOUT_RATE: f64 = 0.1;
pub const MAX_INV_LAYERS: usize = 6;

/// Which classifier to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    ConvOnly,
    InvOnly,
    Hybrid { inv_layers: usize },
}

impl ModelVariant {
    pub fn inv_layers(&self) -> usize {
        match self {
            ModelVariant::ConvOnly => 0,
            ModelVariant::InvOnly => 3,
            ModelVariant::Hybrid { inv_layers } => *inv_layers,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelVariant::ConvOnly => "conv-only".into(),
            ModelVariant::InvOnly => "inv-only".into(),
            ModelVariant::Hybrid { inv_layers } => format!("hybrid({inv_layers})"),
        }
    }
}

// ---------------------------------------------------------------------------
// Layers with training state
// ---------------------------------------------------------------------------

/// One layer of a built model: weights plus the forward cache and gradients
/// of the most recent train-mode pass.
#[allow(clippy::large_enum_variant)]
pub enum Layer {
    Involution {
        spec: InvolutionSpec,
        weights: InvolutionWeights,
        relu: bool,
        x_cache: Option<Tensor>,
        fwd: Option<InvForward>,
        grads: Option<InvGrads>,
    },
    Conv2d {
        weights: Conv2dWeights,
        relu: bool,
        x_cache: Option<Tensor>,
        pre_act: Option<Tensor>,
        grads: Option<Conv2dGrads>,
    },
    MaxPool {
        spec: PoolSpec,
        x_shape: Option<Vec<usize>>,
        fwd: Option<PoolForward>,
    },
    BatchNorm {
        state: BatchNormState,
        cache: Option<BnCache>,
        grads: Option<BnGrads>,
    },
    Flatten {
        in_shape: Option<Vec<usize>>,
    },
    Dense {
        weights: DenseWeights,
        relu: bool,
        x_cache: Option<Tensor>,
        pre_act: Option<Tensor>,
        grads: Option<DenseGrads>,
    },
    Dropout {
        rate: f64,
        mask: Option<Vec<f64>>,
    },
}

impl Layer {
    fn involution(spec: InvolutionSpec, rng: &mut Rng) -> Result<Layer> {
        Ok(Layer::Involution {
            weights: InvolutionWeights::init(&spec, rng)?,
            spec,
            relu: true,
            x_cache: None,
            fwd: None,
            grads: None,
        })
    }

    fn conv(k: usize, c_in: usize, c_out: usize, rng: &mut Rng) -> Result<Layer> {
        Ok(Layer::Conv2d {
            weights: Conv2dWeights::init(k, c_in, c_out, rng)?,
            relu: true,
            x_cache: None,
            pre_act: None,
            grads: None,
        })
    }

    fn maxpool() -> Layer {
        Layer::MaxPool {
            spec: PoolSpec::default(),
            x_shape: None,
            fwd: None,
        }
    }

    fn batchnorm(channels: usize) -> Result<Layer> {
        Ok(Layer::BatchNorm {
            state: BatchNormState::new(channels)?,
            cache: None,
            grads: None,
        })
    }

    fn flatten() -> Layer {
        Layer::Flatten { in_shape: None }
    }

    fn dense(fan_in: usize, fan_out: usize, relu: bool, rng: &mut Rng) -> Result<Layer> {
        Ok(Layer::Dense {
            weights: DenseWeights::init(fan_in, fan_out, rng)?,
            relu,
            x_cache: None,
            pre_act: None,
            grads: None,
        })
    }

    fn dropout(rate: f64) -> Layer {
        Layer::Dropout { rate, mask: None }
    }

    /// Display name matching the summary-table vocabulary.
    pub fn display_name(&self) -> &'static str {
        match self {
            Layer::Involution { .. } => "Involution Layer",
            Layer::Conv2d { .. } => "Convolution Layer",
            Layer::MaxPool { .. } => "2D Max Pooling",
            Layer::BatchNorm { .. } => "Batch Normalization",
            Layer::Flatten { .. } => "Flatten",
            Layer::Dense { .. } => "Dense",
            Layer::Dropout { .. } => "Dropout",
        }
    }

    /// Stable identifier used in model files.
    fn file_name(&self, index: usize) -> String {
        let kind = match self {
            Layer::Involution { .. } => "involution",
            Layer::Conv2d { .. } => "conv",
            Layer::MaxPool { .. } => "maxpool",
            Layer::BatchNorm { .. } => "batchnorm",
            Layer::Flatten { .. } => "flatten",
            Layer::Dense { .. } => "dense",
            Layer::Dropout { .. } => "dropout",
        };
        format!("{kind}_{index}")
    }

    /// (trainable, non-trainable) scalar counts.
    pub fn param_counts(&self) -> (usize, usize) {
        match self {
            Layer::Involution { spec, .. } => {
                let pc = inv_param_count(spec);
                (pc.trainable, pc.non_trainable)
            }
            Layer::Conv2d { weights, .. } => (weights.param_count(), 0),
            Layer::BatchNorm { state, .. } => state.param_count(),
            Layer::Dense { weights, .. } => (weights.param_count(), 0),
            _ => (0, 0),
        }
    }

    /// Output shape(s) for a given input shape (batch axis omitted). The
    /// second entry, when present, is the auxiliary kernel-field shape.
    pub fn output_shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        match self {
            Layer::Involution { spec, .. } => {
                if input.len() != 3 || input[2] != spec.channels {
                    return Err(Error::Shape(format!(
                        "involution expects (H, W, {}), got {:?}",
                        spec.channels, input
                    )));
                }
                let k2 = spec.kernel_size * spec.kernel_size;
                Ok(vec![
                    input.to_vec(),
                    vec![input[0], input[1], k2, 1, spec.groups],
                ])
            }
            Layer::Conv2d { weights, .. } => {
                let k = weights.kernel_size();
                if input.len() != 3 || input[2] != weights.c_in() || input[0] < k || input[1] < k {
                    return Err(Error::Shape(format!("conv2d cannot take input {:?}", input)));
                }
                Ok(vec![vec![
                    input[0] - k + 1,
                    input[1] - k + 1,
                    weights.c_out(),
                ]])
            }
            Layer::MaxPool { spec, .. } => {
                if input.len() != 3 || input[0] < spec.window || input[1] < spec.window {
                    return Err(Error::Shape(format!("maxpool cannot take input {:?}", input)));
                }
                Ok(vec![vec![
                    (input[0] - spec.window) / spec.stride + 1,
                    (input[1] - spec.window) / spec.stride + 1,
                    input[2],
                ]])
            }
            Layer::BatchNorm { state, .. } => {
                if input.len() != 3 || input[2] != state.channels() {
                    return Err(Error::Shape(format!(
                        "batchnorm expects {} channels, got {:?}",
                        state.channels(),
                        input
                    )));
                }
                Ok(vec![input.to_vec()])
            }
            Layer::Flatten { .. } => Ok(vec![vec![input.iter().product()]]),
            Layer::Dense { weights, .. } => {
                if input != [weights.fan_in()] {
                    return Err(Error::Shape(format!(
                        "dense expects ({},), got {:?}",
                        weights.fan_in(),
                        input
                    )));
                }
                Ok(vec![vec![weights.fan_out()]])
            }
            Layer::Dropout { .. } => Ok(vec![input.to_vec()]),
        }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode, rng: Option<&mut Rng>) -> Result<Tensor> {
        match self {
            Layer::Involution {
                spec,
                weights,
                relu,
                x_cache,
                fwd,
                ..
            } => {
                let out = inv_forward(x, weights, spec, mode)?;
                let y = if *relu { relu_forward(&out.y) } else { out.y.clone() };
                if mode == Mode::Train {
                    *x_cache = Some(x.clone());
                }
                *fwd = Some(out);
                Ok(y)
            }
            Layer::Conv2d {
                weights,
                relu,
                x_cache,
                pre_act,
                ..
            } => {
                let y = conv2d_forward(x, weights)?;
                let out = if *relu { relu_forward(&y) } else { y.clone() };
                if mode == Mode::Train {
                    *x_cache = Some(x.clone());
                    *pre_act = Some(y);
                }
                Ok(out)
            }
            Layer::MaxPool { spec, x_shape, fwd } => {
                let out = maxpool2d_forward(x, *spec)?;
                let y = out.y.clone();
                if mode == Mode::Train {
                    *x_shape = Some(x.shape().to_vec());
                    *fwd = Some(out);
                }
                Ok(y)
            }
            Layer::BatchNorm { state, cache, .. } => {
                let (y, c) = batchnorm2d_forward(x, state, mode)?;
                if mode == Mode::Train {
                    *cache = c;
                }
                Ok(y)
            }
            Layer::Flatten { in_shape } => {
                if x.rank() != 4 {
                    return Err(Error::Shape(format!(
                        "flatten expects NHWC, got {:?}",
                        x.shape()
                    )));
                }
                if mode == Mode::Train {
                    *in_shape = Some(x.shape().to_vec());
                }
                x.reshape(&[x.shape()[0], x.len() / x.shape()[0]])
            }
            Layer::Dense {
                weights,
                relu,
                x_cache,
                pre_act,
                ..
            } => {
                let y = dense_forward(x, weights)?;
                let out = if *relu { relu_forward(&y) } else { y.clone() };
                if mode == Mode::Train {
                    *x_cache = Some(x.clone());
                    *pre_act = Some(y);
                }
                Ok(out)
            }
            Layer::Dropout { rate, mask } => match mode {
                Mode::Train => {
                    let rng = rng
                        .ok_or_else(|| Error::State("dropout in train mode needs an rng".into()))?;
                    let (y, m) = dropout_forward(x, *rate, Mode::Train, rng)?;
                    *mask = m;
                    Ok(y)
                }
                Mode::Infer => {
                    let mut unused = Rng::new(0);
                    let (y, _) = dropout_forward(x, *rate, Mode::Infer, &mut unused)?;
                    Ok(y)
                }
            },
        }
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Involution {
                spec,
                weights,
                relu,
                x_cache,
                fwd,
                grads,
            } => {
                let x = x_cache
                    .as_ref()
                    .ok_or_else(|| Error::State("involution backward without forward".into()))?;
                let f = fwd
                    .as_ref()
                    .ok_or_else(|| Error::State("involution backward without forward".into()))?;
                let dpre = if *relu { relu_backward(&f.y, dy)? } else { dy.clone() };
                let g = inv_backward(x, weights, spec, f, &dpre)?;
                let dx = g.dx.clone();
                *grads = Some(g);
                Ok(dx)
            }
            Layer::Conv2d {
                weights,
                relu,
                x_cache,
                pre_act,
                grads,
            } => {
                let x = x_cache
                    .as_ref()
                    .ok_or_else(|| Error::State("conv backward without forward".into()))?;
                let dpre = if *relu {
                    let pre = pre_act
                        .as_ref()
                        .ok_or_else(|| Error::State("conv backward without forward".into()))?;
                    relu_backward(pre, dy)?
                } else {
                    dy.clone()
                };
                let (dx, g) = conv2d_backward(x, weights, &dpre)?;
                *grads = Some(g);
                Ok(dx)
            }
            Layer::MaxPool { x_shape, fwd, .. } => {
                let shape = x_shape
                    .as_ref()
                    .ok_or_else(|| Error::State("maxpool backward without forward".into()))?;
                let f = fwd
                    .as_ref()
                    .ok_or_else(|| Error::State("maxpool backward without forward".into()))?;
                maxpool2d_backward(f, shape, dy)
            }
            Layer::BatchNorm { state, cache, grads } => {
                let c = cache
                    .as_ref()
                    .ok_or_else(|| Error::State("batchnorm backward without train forward".into()))?;
                let (dx, g) = batchnorm2d_backward(dy, state, c)?;
                *grads = Some(g);
                Ok(dx)
            }
            Layer::Flatten { in_shape } => {
                let shape = in_shape
                    .as_ref()
                    .ok_or_else(|| Error::State("flatten backward without forward".into()))?;
                dy.reshape(shape)
            }
            Layer::Dense {
                weights,
                relu,
                x_cache,
                pre_act,
                grads,
            } => {
                let x = x_cache
                    .as_ref()
                    .ok_or_else(|| Error::State("dense backward without forward".into()))?;
                let dpre = if *relu {
                    let pre = pre_act
                        .as_ref()
                        .ok_or_else(|| Error::State("dense backward without forward".into()))?;
                    relu_backward(pre, dy)?
                } else {
                    dy.clone()
                };
                let (dx, g) = dense_backward(x, weights, &dpre)?;
                *grads = Some(g);
                Ok(dx)
            }
            Layer::Dropout { mask, .. } => Ok(dropout_backward(dy, mask.as_ref())),
        }
    }

    /// Trainable parameter tensors, in a stable order.
    pub fn trainable_params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Involution { weights, .. } => vec![
                &mut weights.w0,
                &mut weights.bias0,
                &mut weights.bn.gamma,
                &mut weights.bn.beta,
                &mut weights.w1,
                &mut weights.bias1,
            ],
            Layer::Conv2d { weights, .. } => vec![&mut weights.kernels, &mut weights.bias],
            Layer::BatchNorm { state, .. } => vec![&mut state.gamma, &mut state.beta],
            Layer::Dense { weights, .. } => vec![&mut weights.weight, &mut weights.bias],
            _ => vec![],
        }
    }

    pub fn trainable_params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Involution { weights, .. } => vec![
                &weights.w0,
                &weights.bias0,
                &weights.bn.gamma,
                &weights.bn.beta,
                &weights.w1,
                &weights.bias1,
            ],
            Layer::Conv2d { weights, .. } => vec![&weights.kernels, &weights.bias],
            Layer::BatchNorm { state, .. } => vec![&state.gamma, &state.beta],
            Layer::Dense { weights, .. } => vec![&weights.weight, &weights.bias],
            _ => vec![],
        }
    }

    /// Gradients matching [`Layer::trainable_params_mut`] order, moved out of
    /// the layer (cleared for the next step).
    pub fn take_grads(&mut self) -> Result<Vec<Tensor>> {
        match self {
            Layer::Involution { grads, .. } => {
                let g = grads
                    .take()
                    .ok_or_else(|| Error::State("no involution gradients stored".into()))?;
                Ok(vec![g.dw0, g.dbias0, g.dgamma, g.dbeta, g.dw1, g.dbias1])
            }
            Layer::Conv2d { grads, .. } => {
                let g = grads
                    .take()
                    .ok_or_else(|| Error::State("no conv gradients stored".into()))?;
                Ok(vec![g.dkernels, g.dbias])
            }
            Layer::BatchNorm { grads, .. } => {
                let g = grads
                    .take()
                    .ok_or_else(|| Error::State("no batchnorm gradients stored".into()))?;
                Ok(vec![g.dgamma, g.dbeta])
            }
            Layer::Dense { grads, .. } => {
                let g = grads
                    .take()
                    .ok_or_else(|| Error::State("no dense gradients stored".into()))?;
                Ok(vec![g.dweight, g.dbias])
            }
            _ => Ok(vec![]),
        }
    }

    /// All weight tensors for serialization, non-trainable included.
    fn file_tensors(&self) -> Vec<&Tensor> {
        match self {
            Layer::Involution { weights, .. } => vec![
                &weights.w0,
                &weights.bias0,
                &weights.bn.gamma,
                &weights.bn.beta,
                &weights.bn.running_mean,
                &weights.bn.running_var,
                &weights.w1,
                &weights.bias1,
            ],
            Layer::Conv2d { weights, .. } => vec![&weights.kernels, &weights.bias],
            Layer::BatchNorm { state, .. } => vec![
                &state.gamma,
                &state.beta,
                &state.running_mean,
                &state.running_var,
            ],
            Layer::Dense { weights, .. } => vec![&weights.weight, &weights.bias],
            _ => vec![],
        }
    }

    fn file_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Involution { weights, .. } => vec![
                &mut weights.w0,
                &mut weights.bias0,
                &mut weights.bn.gamma,
                &mut weights.bn.beta,
                &mut weights.bn.running_mean,
                &mut weights.bn.running_var,
                &mut weights.w1,
                &mut weights.bias1,
            ],
            Layer::Conv2d { weights, .. } => vec![&mut weights.kernels, &mut weights.bias],
            Layer::BatchNorm { state, .. } => vec![
                &mut state.gamma,
                &mut state.beta,
                &mut state.running_mean,
                &mut state.running_var,
            ],
            Layer::Dense { weights, .. } => vec![&mut weights.weight, &mut weights.bias],
            _ => vec![],
        }
    }
}

// ---------------------------------------------------------------------------
// Layer stack
// ---------------------------------------------------------------------------

/// An ordered stack of layers forming one model variant.
pub struct LayerStack {
    pub variant: ModelVariant,
    pub layers: Vec<Layer>,
}

/// Build a model variant with deterministic, seeded initialization.
pub fn build_model(variant: ModelVariant, rng: &mut Rng) -> Result<LayerStack> {
    let inv_spec = InvolutionSpec::paper();
    let mut layers = Vec::new();
    match variant {
        ModelVariant::ConvOnly | ModelVariant::Hybrid { .. } => {
            let n = variant.inv_layers();
            if n > MAX_INV_LAYERS {
                return Err(Error::Config(format!(
                    "hybrid supports at most {MAX_INV_LAYERS} involution layers, got {n}"
                )));
            }
            for _ in 0..n {
                layers.push(Layer::involution(inv_spec, rng)?);
            }
            layers.push(Layer::conv(3, INPUT_CHANNELS, 32, rng)?);
            layers.push(Layer::maxpool());
            layers.push(Layer::conv(3, 32, 64, rng)?);
            layers.push(Layer::batchnorm(64)?);
            layers.push(Layer::maxpool());
            layers.push(Layer::conv(3, 64, 128, rng)?);
            layers.push(Layer::batchnorm(128)?);
            layers.push(Layer::maxpool());
            layers.push(Layer::flatten());
            layers.push(Layer::dense(2048, 128, true, rng)?);
            layers.push(Layer::dropout(DROPOUT_RATE));
            layers.push(Layer::dense(128, NUM_CLASSES, false, rng)?);
        }
        ModelVariant::InvOnly => {
            for _ in 0..3 {
                layers.push(Layer::involution(inv_spec, rng)?);
            }
            layers.push(Layer::flatten());
            let flat = INPUT_SIZE * INPUT_SIZE * INPUT_CHANNELS;
            layers.push(Layer::dense(flat, 128, true, rng)?);
            layers.push(Layer::dropout(DROPOUT_RATE));
            layers.push(Layer::dense(128, NUM_CLASSES, false, rng)?);
        }
    }
    Ok(LayerStack { variant, layers })
}

impl LayerStack {
    /// Forward through the whole stack. Train mode needs an rng for dropout.
    pub fn forward(&mut self, x: &Tensor, mode: Mode, mut rng: Option<&mut Rng>) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur, mode, rng.as_deref_mut())?;
            cur.check_finite(layer.display_name())?;
        }
        Ok(cur)
    }

    /// Forward in inference mode, also returning each involution layer's
    /// kernel field keyed by its layer index.
    pub fn forward_with_kernels(
        &mut self,
        x: &Tensor,
    ) -> Result<(Tensor, Vec<(usize, KernelField)>)> {
        let mut cur = x.clone();
        let mut fields = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            cur = layer.forward(&cur, Mode::Infer, None)?;
            cur.check_finite(layer.display_name())?;
            if let Layer::Involution { fwd, .. } = layer {
                if let Some(f) = fwd.take() {
                    fields.push((i, f.kernels));
                }
            }
        }
        Ok((cur, fields))
    }

    /// Backward through the whole stack; each layer keeps its own gradients.
    pub fn backward(&mut self, dlogits: &Tensor) -> Result<()> {
        let mut cur = dlogits.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur)?;
        }
        Ok(())
    }

    /// (total, trainable, non-trainable) parameter counts.
    pub fn param_counts(&self) -> (usize, usize, usize) {
        let mut trainable = 0;
        let mut non_trainable = 0;
        for layer in &self.layers {
            let (t, nt) = layer.param_counts();
            trainable += t;
            non_trainable += nt;
        }
        (trainable + non_trainable, trainable, non_trainable)
    }
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

/// One row of the model summary: layer name, output shape(s) with the batch
/// axis left symbolic, and the layer's parameter count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub name: String,
    pub output_shapes: Vec<Vec<usize>>,
    pub params: usize,
}

impl SummaryRow {
    pub fn shape_string(&self) -> String {
        let one = |s: &[usize]| {
            let dims: Vec<String> = s.iter().map(|d| d.to_string()).collect();
            format!("(None, {})", dims.join(", "))
        };
        if self.output_shapes.len() == 1 {
            one(&self.output_shapes[0])
        } else {
            let parts: Vec<String> = self.output_shapes.iter().map(|s| one(s)).collect();
            format!("[{}]", parts.join(", "))
        }
    }
}

/// Full summary: rows in layer order plus parameter totals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub total: usize,
    pub trainable: usize,
    pub non_trainable: usize,
}

/// Layer-by-layer summary with exact totals, starting from the fixed
/// 48x48x3 input.
pub fn summarize(model: &LayerStack) -> Result<Summary> {
    let mut rows = Vec::with_capacity(model.layers.len() + 1);
    let mut shape = vec![INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS];
    rows.push(SummaryRow {
        name: "Input Layer".into(),
        output_shapes: vec![shape.clone()],
        params: 0,
    });
    for layer in &model.layers {
        let shapes = layer.output_shapes(&shape)?;
        let (t, nt) = layer.param_counts();
        rows.push(SummaryRow {
            name: layer.display_name().into(),
            output_shapes: shapes.clone(),
            params: t + nt,
        });
        shape = shapes[0].clone();
    }
    let (total, trainable, non_trainable) = model.param_counts();
    Ok(Summary {
        rows,
        total,
        trainable,
        non_trainable,
    })
}

/// On-disk size in MB assuming 4 bytes per parameter.
pub fn storage_size_mb(model: &LayerStack) -> f64 {
    let (total, _, _) = model.param_counts();
    total as f64 * 4.0 / (1024.0 * 1024.0)
}

fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn format_size(params: usize) -> String {
    let bytes = params as f64 * 4.0;
    if bytes >= 1024.0 * 1024.0 {
        format!("{:.2} MB", bytes / (1024.0 * 1024.0))
    } else {
        format!("{:.2} KB", bytes / 1024.0)
    }
}

impl Summary {
    /// Plain-text rendering in the familiar layer/shape/params table form.
    pub fn render(&self) -> String {
        let shape_width = self
            .rows
            .iter()
            .map(|r| r.shape_string().len())
            .max()
            .unwrap_or(12)
            .max("Output Shape".len());
        let mut out = String::new();
        out.push_str(&format!(
            "{:<22} {:<width$} {:>10}\n",
            "Layer (type)",
            "Output Shape",
            "Param #",
            width = shape_width
        ));
        out.push_str(&"=".repeat(22 + 1 + shape_width + 1 + 10));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{:<22} {:<width$} {:>10}\n",
                row.name,
                row.shape_string(),
                group_thousands(row.params),
                width = shape_width
            ));
        }
        out.push_str(&"=".repeat(22 + 1 + shape_width + 1 + 10));
        out.push('\n');
        out.push_str(&format!(
            "Total parameters: {} ({})\n",
            group_thousands(self.total),
            format_size(self.total)
        ));
        out.push_str(&format!(
            "Trainable parameters: {} ({})\n",
            group_thousands(self.trainable),
            format_size(self.trainable)
        ));
        out.push_str(&format!(
            "Non-trainable parameters: {} ({})\n",
            group_thousands(self.non_trainable),
            format_size(self.non_trainable)
        ));
        out
    }
}

// ---------------------------------------------------------------------------
// Model file format
// ---------------------------------------------------------------------------
//
//   magic   b"IVCN"
//   version u32 = 1
//   variant u8 (0 = conv-only, 1 = inv-only, 2 = hybrid)
//   inv_layers u8
//   layer count u16
//   per layer: name length u16, UTF-8 name, tensor count u16,
//              per tensor: rank u8, dims u32 * rank, f32 payload
//   all integers little-endian

const MAGIC: &[u8; 4] = b"IVCN";
const VERSION: u32 = 1;

fn variant_tag(v: ModelVariant) -> u8 {
    match v {
        ModelVariant::ConvOnly => 0,
        ModelVariant::InvOnly => 1,
        ModelVariant::Hybrid { .. } => 2,
    }
}

/// Serialize a model to its binary file format (weights downcast to f32).
pub fn save_model(model: &LayerStack, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(variant_tag(model.variant));
    buf.push(model.variant.inv_layers() as u8);
    buf.extend_from_slice(&(model.layers.len() as u16).to_le_bytes());
    for (i, layer) in model.layers.iter().enumerate() {
        let name = layer.file_name(i);
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let tensors = layer.file_tensors();
        buf.extend_from_slice(&(tensors.len() as u16).to_le_bytes());
        for t in tensors {
            buf.push(t.rank() as u8);
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

struct FileReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> FileReader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "unexpected end of file while reading {field} (offset {})",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &str) -> Result<u16> {
        let b = self.take(2, field)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self, field: &str) -> Result<f32> {
        let b = self.take(4, field)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Load a model file, rebuilding the architecture from its header and
/// checking every layer name and tensor shape against it.
pub fn load_model(path: &Path) -> Result<LayerStack> {
    let buf = fs::read(path)?;
    let mut r = FileReader { buf: &buf, pos: 0 };

    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not an IVCN model file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let tag = r.u8("variant tag")?;
    let inv_layers = r.u8("inv_layers")? as usize;
    let variant = match tag {
        0 => ModelVariant::ConvOnly,
        1 => ModelVariant::InvOnly,
        2 => ModelVariant::Hybrid { inv_layers },
        other => return Err(Error::Format(format!("unknown variant tag {other}"))),
    };

    // Weights are about to be overwritten; the init seed is irrelevant.
    let mut model = build_model(variant, &mut Rng::new(0))?;
    let layer_count = r.u16("layer count")? as usize;
    if layer_count != model.layers.len() {
        return Err(Error::Format(format!(
            "layer count {layer_count} does not match variant {} ({} layers)",
            variant.label(),
            model.layers.len()
        )));
    }

    for (i, layer) in model.layers.iter_mut().enumerate() {
        let name_len = r.u16("layer name length")? as usize;
        let name_bytes = r.take(name_len, "layer name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::Format(format!("layer {i} name is not UTF-8")))?;
        let expected = layer.file_name(i);
        if name != expected {
            return Err(Error::Format(format!(
                "layer {i} name mismatch: file has {name:?}, expected {expected:?}"
            )));
        }
        let tensor_count = r.u16("tensor count")? as usize;
        let mut tensors = layer.file_tensors_mut();
        if tensor_count != tensors.len() {
            return Err(Error::Format(format!(
                "layer {i} ({expected}): tensor count {tensor_count}, expected {}",
                tensors.len()
            )));
        }
        for (ti, t) in tensors.iter_mut().enumerate() {
            let field = format!("layer {i} ({expected}) tensor {ti}");
            let rank = r.u8(&field)? as usize;
            if rank != t.rank() {
                return Err(Error::Format(format!(
                    "{field}: rank {rank}, expected {}",
                    t.rank()
                )));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32(&field)? as usize);
            }
            if dims != t.shape() {
                return Err(Error::Format(format!(
                    "{field}: dims {:?}, expected {:?}",
                    dims,
                    t.shape()
                )));
            }
            for v in t.data_mut() {
                *v = r.f32(&field)? as f64;
            }
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after model payload",
            buf.len() - r.pos
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    fn hybrid(n: usize) -> LayerStack {
        build_model(ModelVariant::Hybrid { inv_layers: n }, &mut Rng::new(7)).unwrap()
    }

    #[test]
    fn hybrid3_matches_published_totals() {
        let s = summarize(&hybrid(3)).unwrap();
        assert_eq!(s.total, 356_624);
        assert_eq!(s.trainable, 356_234);
        assert_eq!(s.non_trainable, 390);
        assert_eq!(s.rows.len(), 16);
    }

    #[test]
    fn hybrid3_rows_in_order() {
        let s = summarize(&hybrid(3)).unwrap();
        let expected: Vec<(&str, Vec<usize>, usize)> = vec![
            ("Input Layer", vec![48, 48, 3], 0),
            ("Involution Layer", vec![48, 48, 3], 26),
            ("Involution Layer", vec![48, 48, 3], 26),
            ("Involution Layer", vec![48, 48, 3], 26),
            ("Convolution Layer", vec![46, 46, 32], 896),
            ("2D Max Pooling", vec![23, 23, 32], 0),
            ("Convolution Layer", vec![21, 21, 64], 18_496),
            ("Batch Normalization", vec![21, 21, 64], 256),
            ("2D Max Pooling", vec![10, 10, 64], 0),
            ("Convolution Layer", vec![8, 8, 128], 73_856),
            ("Batch Normalization", vec![8, 8, 128], 512),
            ("2D Max Pooling", vec![4, 4, 128], 0),
            ("Flatten", vec![2048], 0),
            ("Dense", vec![128], 262_272),
            ("Dropout", vec![128], 0),
            ("Dense", vec![2], 258),
        ];
        for (row, (name, shape, params)) in s.rows.iter().zip(&expected) {
            assert_eq!(&row.name, name);
            assert_eq!(&row.output_shapes[0], shape);
            assert_eq!(row.params, *params);
        }
        // Involution rows also report the kernel-field shape.
        assert_eq!(s.rows[1].output_shapes[1], vec![48, 48, 9, 1, 1]);
        assert_eq!(
            s.rows[1].shape_string(),
            "[(None, 48, 48, 3), (None, 48, 48, 9, 1, 1)]"
        );
    }

    #[test]
    fn inv_only_totals() {
        let m = build_model(ModelVariant::InvOnly, &mut Rng::new(1)).unwrap();
        let s = summarize(&m).unwrap();
        assert_eq!(s.total, 885_200);
        // Flatten carries the full 48*48*3 width.
        let flat_row = s.rows.iter().find(|r| r.name == "Flatten").unwrap();
        assert_eq!(flat_row.output_shapes[0], vec![6912]);
    }

    #[test]
    fn hybrid_family_param_formula() {
        for n in 0..=6 {
            let s = summarize(&hybrid(n)).unwrap();
            assert_eq!(s.total, 356_546 + 26 * n, "n = {n}");
        }
        assert!(build_model(ModelVariant::Hybrid { inv_layers: 7 }, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn conv_only_equals_hybrid0() {
        let a = summarize(&build_model(ModelVariant::ConvOnly, &mut Rng::new(3)).unwrap()).unwrap();
        let b = summarize(&hybrid(0)).unwrap();
        assert_eq!(a.rows, b.rows);
        let first_trainable = a.rows.iter().find(|r| r.params > 0).unwrap();
        assert_eq!(first_trainable.name, "Convolution Layer");
        assert_eq!(first_trainable.params, 896);
    }

    #[test]
    fn storage_sizes_round_to_published_values() {
        let mb = storage_size_mb(&hybrid(3));
        assert_eq!((mb * 100.0).round() / 100.0, 1.36);
        let inv = build_model(ModelVariant::InvOnly, &mut Rng::new(1)).unwrap();
        let mb = storage_size_mb(&inv);
        assert_eq!((mb * 100.0).round() / 100.0, 3.38);
    }

    #[test]
    fn summary_render_mentions_sizes() {
        let s = summarize(&hybrid(3)).unwrap();
        let text = s.render();
        assert!(text.contains("Total parameters: 356,624 (1.36 MB)"));
        assert!(text.contains("Trainable parameters: 356,234 (1.36 MB)"));
        assert!(text.contains("Non-trainable parameters: 390 (1.52 KB)"));
    }

    #[test]
    fn forward_shapes_for_all_variants() {
        let x = random_tensor(&[1, 48, 48, 3], 9, 0.5);
        for n in 0..=6 {
            let mut m = hybrid(n);
            let y = m.forward(&x, Mode::Infer, None).unwrap();
            assert_eq!(y.shape(), &[1, 2]);
            assert!(y.data().iter().all(|v| v.is_finite()));
        }
        let mut m = build_model(ModelVariant::InvOnly, &mut Rng::new(1)).unwrap();
        let y = m.forward(&x, Mode::Infer, None).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ivcn");
        let mut m = hybrid(3);
        save_model(&m, &path).unwrap();

        let mut loaded = load_model(&path).unwrap();
        assert_eq!(summarize(&m).unwrap(), summarize(&loaded).unwrap());

        // Outputs agree within the f32 cast.
        let x = random_tensor(&[1, 48, 48, 3], 11, 0.5);
        let a = m.forward(&x, Mode::Infer, None).unwrap();
        let b = loaded.forward(&x, Mode::Infer, None).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-4, "{u} vs {v}");
        }

        // Weights survive to f32 precision exactly.
        for (la, lb) in m.layers.iter().zip(&loaded.layers) {
            for (ta, tb) in la.file_tensors().iter().zip(lb.file_tensors()) {
                for (va, vb) in ta.data().iter().zip(tb.data()) {
                    assert_eq!(*va as f32, *vb as f32);
                }
            }
        }
    }

    #[test]
    fn model_file_payload_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ivcn");
        let m = hybrid(3);
        save_model(&m, &path).unwrap();
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        let payload = 356_624 * 4;
        assert!(len > payload, "file must carry a header");
        // Header overhead: descriptors only, well under a kilobyte.
        assert!(len - payload < 1024, "header too large: {}", len - payload);
    }

    #[test]
    fn truncated_and_corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ivcn");
        let m = hybrid(2);
        save_model(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let trunc = dir.path().join("trunc.ivcn");
        std::fs::write(&trunc, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_model(&trunc), Err(Error::Format(_))));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        let badp = dir.path().join("bad.ivcn");
        std::fs::write(&badp, &bad).unwrap();
        assert!(matches!(load_model(&badp), Err(Error::Format(_))));
    }
}
