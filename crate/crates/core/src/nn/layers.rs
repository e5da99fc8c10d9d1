//! The layer zoo: specs (serializable architecture) and their runtime state.
//!
//! Every layer implements an explicit backward rule; containers
//! (`ResidualBlock`, `ConcatSkip`) recurse into their sub-stacks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::{col2im, im2col, ConvGeometry};
use super::lanes;
use super::tensor::Tensor;
use crate::scalar::Scalar;

fn default_true() -> bool {
    true
}

/// Architecture description of one layer. Shapes exclude the batch axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        units: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        /// Convolutions feeding a batch norm carry no bias of their own.
        #[serde(default = "default_true")]
        bias: bool,
    },
    MaxPool {
        size: usize,
    },
    Relu,
    Sigmoid,
    #[serde(rename = "batchnorm-lite")]
    BatchNorm {
        channels: usize,
    },
    ResidualBlock {
        main: Vec<LayerSpec>,
        shortcut: Vec<LayerSpec>,
    },
    Upsample {
        factor: usize,
    },
    /// Output is the input concatenated (channel axis) with `inner(input)`.
    ConcatSkip {
        inner: Vec<LayerSpec>,
    },
    GlobalAvgPool,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::BatchNorm { .. } => "batchnorm-lite",
            LayerSpec::ResidualBlock { .. } => "residual-block",
            LayerSpec::Upsample { .. } => "upsample",
            LayerSpec::ConcatSkip { .. } => "concat-skip",
            LayerSpec::GlobalAvgPool => "global-avg-pool",
        }
    }

    /// 3x3 same-padding convolution.
    pub fn conv3x3(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        LayerSpec::Conv2d { in_channels, out_channels, kernel: 3, stride, padding: 1, bias: true }
    }

    /// Same-padding convolution without bias, for use ahead of a batch norm.
    pub fn conv_nobias(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding: kernel / 2, bias: false }
    }

    /// Per-sample output dims for per-sample input dims.
    pub fn out_dims(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match self {
            LayerSpec::Dense { inputs, units } => {
                let n: usize = input.iter().product();
                if n != *inputs {
                    return Err(format!("expects {inputs} input features, got {n} ({input:?})"));
                }
                Ok(vec![*units])
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding, .. } => {
                let [c, h, w] = image_dims(input)?;
                if c != *in_channels {
                    return Err(format!("expects {in_channels} channels, got {c}"));
                }
                if *stride == 0 || *kernel == 0 {
                    return Err("kernel and stride must be positive".into());
                }
                if h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                    return Err(format!("kernel {kernel} larger than padded input {h}x{w}"));
                }
                let g = ConvGeometry { channels: c, height: h, width: w, kernel: *kernel, stride: *stride, padding: *padding };
                Ok(vec![*out_channels, g.out_height(), g.out_width()])
            }
            LayerSpec::MaxPool { size } => {
                let [c, h, w] = image_dims(input)?;
                if *size == 0 || h < *size || w < *size {
                    return Err(format!("pool size {size} does not fit {h}x{w}"));
                }
                Ok(vec![c, h / size, w / size])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::BatchNorm { channels } => {
                if input.first() != Some(channels) {
                    return Err(format!("expects {channels} channels, got {input:?}"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::ResidualBlock { main, shortcut } => {
                let a = stack_out_dims(main, input).map_err(|(i, e)| format!("main path layer {i}: {e}"))?;
                let b = stack_out_dims(shortcut, input).map_err(|(i, e)| format!("shortcut layer {i}: {e}"))?;
                if a != b {
                    return Err(format!("main path yields {a:?} but shortcut yields {b:?}"));
                }
                Ok(a)
            }
            LayerSpec::Upsample { factor } => {
                let [c, h, w] = image_dims(input)?;
                if *factor == 0 {
                    return Err("upsample factor must be positive".into());
                }
                Ok(vec![c, h * factor, w * factor])
            }
            LayerSpec::ConcatSkip { inner } => {
                let [c, h, w] = image_dims(input)?;
                let o = stack_out_dims(inner, input).map_err(|(i, e)| format!("inner layer {i}: {e}"))?;
                let [c2, h2, w2] = image_dims(&o)?;
                if (h2, w2) != (h, w) {
                    return Err(format!("inner path yields {h2}x{w2}, skip is {h}x{w}"));
                }
                Ok(vec![c + c2, h, w])
            }
            LayerSpec::GlobalAvgPool => {
                let [c, _, _] = image_dims(input)?;
                Ok(vec![c])
            }
        }
    }
}

fn image_dims(d: &[usize]) -> Result<[usize; 3], String> {
    match d {
        [c, h, w] => Ok([*c, *h, *w]),
        _ => Err(format!("expects [channels, height, width], got {d:?}")),
    }
}

/// Propagates dims through a stack; on failure returns the failing index.
pub fn stack_out_dims(specs: &[LayerSpec], input: &[usize]) -> Result<Vec<usize>, (usize, String)> {
    let mut dims = input.to_vec();
    for (i, s) in specs.iter().enumerate() {
        dims = s.out_dims(&dims).map_err(|e| (i, format!("{}: {e}", s.name())))?;
    }
    Ok(dims)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Runtime layer: parameters plus whatever the backward pass needs.
#[derive(Clone, Debug)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Conv2d(Conv2d<T>),
    MaxPool(MaxPool),
    Relu(Relu<T>),
    Sigmoid(Sigmoid<T>),
    BatchNorm(BatchNorm<T>),
    Residual(Residual<T>),
    Upsample(Upsample),
    ConcatSkip(ConcatSkip<T>),
    GlobalAvgPool(GlobalAvgPool),
}

fn xavier<T: Scalar, R: Rng>(n: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| T::of(rng.random_range(-a..a))).collect()
}

impl<T: Scalar> Layer<T> {
    pub fn from_spec<R: Rng>(spec: &LayerSpec, rng: &mut R) -> Self {
        match spec {
            LayerSpec::Dense { inputs, units } => Layer::Dense(Dense {
                weight: Tensor::new(vec![*units, *inputs], xavier(units * inputs, *inputs, *units, rng)).unwrap(),
                bias: Tensor::zeros(vec![*units]),
                inputs: *inputs,
                units: *units,
                cache: None,
            }),
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding, bias } => {
                let k2 = kernel * kernel;
                Layer::Conv2d(Conv2d {
                    weight: Tensor::new(
                        vec![*out_channels, *in_channels, *kernel, *kernel],
                        xavier(out_channels * in_channels * k2, in_channels * k2, out_channels * k2, rng),
                    )
                    .unwrap(),
                    bias: Tensor::zeros(vec![*out_channels]),
                    in_channels: *in_channels,
                    out_channels: *out_channels,
                    kernel: *kernel,
                    stride: *stride,
                    padding: *padding,
                    has_bias: *bias,
                    cache: None,
                })
            }
            LayerSpec::MaxPool { size } => Layer::MaxPool(MaxPool { size: *size, cache: None, margin: f64::INFINITY }),
            LayerSpec::Relu => Layer::Relu(Relu { out: None, margin: f64::INFINITY }),
            LayerSpec::Sigmoid => Layer::Sigmoid(Sigmoid { out: None }),
            LayerSpec::BatchNorm { channels } => Layer::BatchNorm(BatchNorm::new(*channels)),
            LayerSpec::ResidualBlock { main, shortcut } => Layer::Residual(Residual {
                main: main.iter().map(|s| Layer::from_spec(s, rng)).collect(),
                shortcut: shortcut.iter().map(|s| Layer::from_spec(s, rng)).collect(),
            }),
            LayerSpec::Upsample { factor } => Layer::Upsample(Upsample { factor: *factor, in_dims: None }),
            LayerSpec::ConcatSkip { inner } => Layer::ConcatSkip(ConcatSkip {
                inner: inner.iter().map(|s| Layer::from_spec(s, rng)).collect(),
                skip_channels: 0,
            }),
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool(GlobalAvgPool { in_dims: None }),
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(l) => LayerSpec::Dense { inputs: l.inputs, units: l.units },
            Layer::Conv2d(l) => LayerSpec::Conv2d {
                in_channels: l.in_channels,
                out_channels: l.out_channels,
                kernel: l.kernel,
                stride: l.stride,
                padding: l.padding,
                bias: l.has_bias,
            },
            Layer::MaxPool(l) => LayerSpec::MaxPool { size: l.size },
            Layer::Relu(_) => LayerSpec::Relu,
            Layer::Sigmoid(_) => LayerSpec::Sigmoid,
            Layer::BatchNorm(l) => LayerSpec::BatchNorm { channels: l.gamma.len() },
            Layer::Residual(l) => LayerSpec::ResidualBlock {
                main: l.main.iter().map(Layer::spec).collect(),
                shortcut: l.shortcut.iter().map(Layer::spec).collect(),
            },
            Layer::Upsample(l) => LayerSpec::Upsample { factor: l.factor },
            Layer::ConcatSkip(l) => LayerSpec::ConcatSkip { inner: l.inner.iter().map(Layer::spec).collect() },
            Layer::GlobalAvgPool(_) => LayerSpec::GlobalAvgPool,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Conv2d(l) => l.forward(x),
            Layer::MaxPool(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
            Layer::Sigmoid(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Residual(l) => l.forward(x, mode),
            Layer::Upsample(l) => l.forward(x),
            Layer::ConcatSkip(l) => l.forward(x, mode),
            Layer::GlobalAvgPool(l) => l.forward(x),
        }
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(&mut self, g: &Tensor<T>, need_input_grad: bool) -> Option<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.backward(g, need_input_grad),
            Layer::Conv2d(l) => l.backward(g, need_input_grad),
            Layer::MaxPool(l) => Some(l.backward(g)),
            Layer::Relu(l) => Some(l.backward(g)),
            Layer::Sigmoid(l) => Some(l.backward(g)),
            Layer::BatchNorm(l) => Some(l.backward(g)),
            Layer::Residual(l) => l.backward(g, need_input_grad),
            Layer::Upsample(l) => Some(l.backward(g)),
            Layer::ConcatSkip(l) => l.backward(g, need_input_grad),
            Layer::GlobalAvgPool(l) => Some(l.backward(g)),
        }
    }

    pub(crate) fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        match self {
            Layer::Dense(l) => {
                out.push((format!("{prefix}dense.weight"), &mut l.weight));
                out.push((format!("{prefix}dense.bias"), &mut l.bias));
            }
            Layer::Conv2d(l) => {
                out.push((format!("{prefix}conv2d.weight"), &mut l.weight));
                if l.has_bias {
                    out.push((format!("{prefix}conv2d.bias"), &mut l.bias));
                }
            }
            Layer::BatchNorm(l) => {
                out.push((format!("{prefix}batchnorm.gamma"), &mut l.gamma));
                out.push((format!("{prefix}batchnorm.beta"), &mut l.beta));
            }
            Layer::Residual(l) => {
                for (i, s) in l.main.iter_mut().enumerate() {
                    s.collect_params(&format!("{prefix}main.{i}."), out);
                }
                for (i, s) in l.shortcut.iter_mut().enumerate() {
                    s.collect_params(&format!("{prefix}shortcut.{i}."), out);
                }
            }
            Layer::ConcatSkip(l) => {
                for (i, s) in l.inner.iter_mut().enumerate() {
                    s.collect_params(&format!("{prefix}inner.{i}."), out);
                }
            }
            _ => {}
        }
    }

    /// Distance of the last forward pass from the nearest non-differentiable
    /// point: smallest `|x|` seen by a ReLU and smallest gap between the
    /// winner and runner-up of a max-pool window.
    pub fn kink_margin(&self) -> f64 {
        match self {
            Layer::Relu(l) => l.margin,
            Layer::MaxPool(l) => l.margin,
            Layer::Residual(l) => l.main.iter().chain(&l.shortcut).map(Layer::kink_margin).fold(f64::INFINITY, f64::min),
            Layer::ConcatSkip(l) => l.inner.iter().map(Layer::kink_margin).fold(f64::INFINITY, f64::min),
            _ => f64::INFINITY,
        }
    }

    /// Non-trainable state persisted in checkpoints (batch-norm running stats).
    pub(crate) fn collect_buffers<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<T>>) {
        match self {
            Layer::BatchNorm(l) => {
                out.push(&mut l.running_mean);
                out.push(&mut l.running_var);
            }
            Layer::Residual(l) => {
                for s in l.main.iter_mut().chain(l.shortcut.iter_mut()) {
                    s.collect_buffers(out);
                }
            }
            Layer::ConcatSkip(l) => {
                for s in l.inner.iter_mut() {
                    s.collect_buffers(out);
                }
            }
            _ => {}
        }
    }
}

pub(crate) fn forward_stack<T: Scalar>(layers: &mut [Layer<T>], x: &Tensor<T>, mode: Mode) -> Tensor<T> {
    let mut cur: Option<Tensor<T>> = None;
    for l in layers.iter_mut() {
        let next = l.forward(cur.as_ref().unwrap_or(x), mode);
        cur = Some(next);
    }
    cur.unwrap_or_else(|| x.clone())
}

pub(crate) fn backward_stack<T: Scalar>(
    layers: &mut [Layer<T>],
    g: &Tensor<T>,
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    if layers.is_empty() {
        return need_input_grad.then(|| g.clone());
    }
    let mut cur = g.clone();
    for i in (0..layers.len()).rev() {
        // Only the first layer may skip its input gradient.
        cur = layers[i].backward(&cur, need_input_grad || i > 0)?;
    }
    Some(cur)
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    inputs: usize,
    units: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let b = x.batch();
        let mut out = vec![T::zero(); b * self.units];
        for row in out.chunks_mut(self.units) {
            row.copy_from_slice(self.bias.data());
        }
        T::gemm(b, self.inputs, self.units, T::one(), x.data(), false, self.weight.data(), true, T::one(), &mut out);
        self.cache = Some(x.clone());
        Tensor::new(vec![b, self.units], out).unwrap()
    }

    fn backward(&mut self, g: &Tensor<T>, need_input_grad: bool) -> Option<Tensor<T>> {
        let x = self.cache.as_ref().expect("dense backward before forward");
        let b = x.batch();
        let (_, wg) = self.weight.value_and_grad_mut();
        T::gemm(self.units, b, self.inputs, T::one(), g.data(), true, x.data(), false, T::one(), wg);
        let bg = self.bias.grad_mut();
        for row in g.data().chunks(self.units) {
            add_into(bg, row);
        }
        need_input_grad.then(|| {
            let mut dx = vec![T::zero(); b * self.inputs];
            T::gemm(b, self.units, self.inputs, T::one(), g.data(), false, self.weight.data(), false, T::zero(), &mut dx);
            Tensor::new(x.dims().to_vec(), dx).unwrap()
        })
    }
}

/// Target column count of one convolution GEMM.
const GEMM_COLUMNS: usize = 2048;

#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    has_bias: bool,
    cache: Option<(Vec<T>, Vec<usize>)>,
}

impl<T: Scalar> Conv2d<T> {
    fn geometry(&self, dims: &[usize]) -> ConvGeometry {
        ConvGeometry {
            channels: self.in_channels,
            height: dims[2],
            width: dims[3],
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        }
    }

    /// Samples per GEMM: enough to give each product about
    /// `GEMM_COLUMNS` columns, so small late-stage planes still amortize
    /// weight packing.
    fn group(batch: usize, plane: usize) -> usize {
        GEMM_COLUMNS.div_ceil(plane).clamp(1, batch.max(1))
    }

    /// Each group of `gs` samples is unfolded into `[C*k*k, gs*P]`; the
    /// product `W * cols` is `[Cout, gs*P]` and is permuted into the
    /// `[gs, Cout, P]` tensor layout (a no-op copy when `gs == 1`).
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let b = x.batch();
        let g = self.geometry(x.dims());
        let (ho, wo) = (g.out_height(), g.out_width());
        let plane = ho * wo;
        let (rows, cout) = (g.rows(), self.out_channels);
        let in_len = g.channels * g.height * g.width;
        let gs = Self::group(b, plane);
        let mut cols = vec![T::zero(); b * rows * plane];
        let mut out = vec![T::zero(); b * cout * plane];
        let mut m = if gs > 1 { vec![T::zero(); gs * cout * plane] } else { Vec::new() };
        for s0 in (0..b).step_by(gs) {
            let n = gs.min(b - s0);
            let ld = n * plane;
            let block = &mut cols[s0 * rows * plane..][..rows * ld];
            for j in 0..n {
                im2col(&x.data()[(s0 + j) * in_len..][..in_len], &g, &mut block[j * plane..], ld);
            }
            let dst: &mut [T] = if gs == 1 { &mut out[s0 * cout * plane..][..cout * plane] } else { &mut m[..cout * ld] };
            for (ch, row) in dst.chunks_mut(ld).enumerate() {
                row.fill(if self.has_bias { self.bias.data()[ch] } else { T::zero() });
            }
            T::gemm(cout, rows, ld, T::one(), self.weight.data(), false, block, false, T::one(), dst);
            if gs > 1 {
                for j in 0..n {
                    for ch in 0..cout {
                        out[((s0 + j) * cout + ch) * plane..][..plane].copy_from_slice(&m[ch * ld + j * plane..][..plane]);
                    }
                }
            }
        }
        self.cache = Some((cols, x.dims().to_vec()));
        Tensor::new(vec![b, cout, ho, wo], out).unwrap()
    }

    fn backward(&mut self, g: &Tensor<T>, need_input_grad: bool) -> Option<Tensor<T>> {
        let (cols, in_dims) = self.cache.as_ref().expect("conv backward before forward");
        let b = in_dims[0];
        let geo = self.geometry(in_dims);
        let plane = geo.out_height() * geo.out_width();
        let (rows, cout) = (geo.rows(), self.out_channels);
        let in_len = geo.channels * geo.height * geo.width;
        let gs = Self::group(b, plane);
        let gd = g.data();
        if self.has_bias {
            let bg = self.bias.grad_mut();
            for (k, row) in gd.chunks(plane).enumerate() {
                bg[k % cout] += row.iter().copied().sum::<T>();
            }
        }
        let mut dx = if need_input_grad { vec![T::zero(); b * in_len] } else { Vec::new() };
        let mut gm = vec![T::zero(); if gs > 1 { gs * cout * plane } else { 0 }];
        let mut dcols = if need_input_grad { vec![T::zero(); rows * gs * plane] } else { Vec::new() };
        for s0 in (0..b).step_by(gs) {
            let n = gs.min(b - s0);
            let ld = n * plane;
            let block = &cols[s0 * rows * plane..][..rows * ld];
            let gblock: &[T] = if gs == 1 {
                &gd[s0 * cout * plane..][..cout * plane]
            } else {
                for j in 0..n {
                    for ch in 0..cout {
                        gm[ch * ld + j * plane..][..plane].copy_from_slice(&gd[((s0 + j) * cout + ch) * plane..][..plane]);
                    }
                }
                &gm[..cout * ld]
            };
            {
                let (_, wg) = self.weight.value_and_grad_mut();
                T::gemm(cout, ld, rows, T::one(), gblock, false, block, true, T::one(), wg);
            }
            if need_input_grad {
                let dc = &mut dcols[..rows * ld];
                T::gemm(rows, cout, ld, T::one(), self.weight.data(), true, gblock, false, T::zero(), dc);
                for j in 0..n {
                    col2im(&dc[j * plane..], &geo, &mut dx[(s0 + j) * in_len..][..in_len], ld);
                }
            }
        }
        need_input_grad.then(|| Tensor::new(in_dims.clone(), dx).unwrap())
    }
}

#[derive(Clone, Debug)]
pub struct MaxPool {
    size: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
    margin: f64,
}

impl MaxPool {
    fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let d = x.dims();
        let (b, c, h, w) = (d[0], d[1], d[2], d[3]);
        let s = self.size;
        let (ho, wo) = (h / s, w / s);
        let mut out = Vec::with_capacity(b * c * ho * wo);
        let mut arg = Vec::with_capacity(b * c * ho * wo);
        let xd = x.data();
        let mut margin = f64::INFINITY;
        if s == 2 {
            let mut m = T::infinity();
            for bc in 0..b * c {
                let base = bc * h * w;
                for oy in 0..ho {
                    let r0 = base + 2 * oy * w;
                    let (top, bottom) = (&xd[r0..r0 + w], &xd[r0 + w..r0 + 2 * w]);
                    for ox in 0..wo {
                        let v = [top[2 * ox], top[2 * ox + 1], bottom[2 * ox], bottom[2 * ox + 1]];
                        let mut best = 0;
                        for i in 1..4 {
                            if v[i] > v[best] {
                                best = i;
                            }
                        }
                        let mut second = T::neg_infinity();
                        for (i, &u) in v.iter().enumerate() {
                            if i != best && u > second {
                                second = u;
                            }
                        }
                        if !(v[best] == T::zero() && second == T::zero()) && v[best] - second < m {
                            m = v[best] - second;
                        }
                        out.push(v[best]);
                        arg.push(r0 + (best / 2) * w + 2 * ox + best % 2);
                    }
                }
            }
            margin = m.as_f64();
        }
        for bc in 0..if s == 2 { 0 } else { b * c } {
            let base = bc * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * s * w + ox * s;
                    let mut second = T::neg_infinity();
                    for ky in 0..s {
                        for kx in 0..s {
                            let idx = base + (oy * s + ky) * w + ox * s + kx;
                            if xd[idx] > xd[best] {
                                second = xd[best];
                                best = idx;
                            } else if idx != best && xd[idx] > second {
                                second = xd[idx];
                            }
                        }
                    }
                    // A tie between exact zeros comes from clamped ReLU outputs; their
                    // stability is the ReLU layer's margin, not this one's.
                    if !(xd[best] == T::zero() && second == T::zero()) {
                        margin = margin.min((xd[best] - second).as_f64());
                    }
                    out.push(xd[best]);
                    arg.push(best);
                }
            }
        }
        self.cache = Some((arg, d.to_vec()));
        self.margin = margin;
        Tensor::new(vec![b, c, ho, wo], out).unwrap()
    }

    fn backward<T: Scalar>(&self, g: &Tensor<T>) -> Tensor<T> {
        let (arg, dims) = self.cache.as_ref().expect("maxpool backward before forward");
        let mut dx = Tensor::zeros(dims.clone());
        let d = dx.data_mut();
        for (&i, &v) in arg.iter().zip(g.data()) {
            d[i] += v;
        }
        dx
    }
}

#[derive(Clone, Debug)]
pub struct Relu<T> {
    out: Option<Tensor<T>>,
    margin: f64,
}

impl<T: Scalar> Relu<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        self.margin = lanes::min_abs(x.data()).as_f64();
        y.data_mut().iter_mut().for_each(|v| *v = if *v < T::zero() { T::zero() } else { *v });
        self.out = Some(y.clone());
        y
    }

    fn backward(&self, g: &Tensor<T>) -> Tensor<T> {
        let y = self.out.as_ref().expect("relu backward before forward");
        let mut dx = g.clone();
        for (d, &o) in dx.data_mut().iter_mut().zip(y.data()) {
            if o <= T::zero() {
                *d = T::zero();
            }
        }
        dx
    }
}

#[derive(Clone, Debug)]
pub struct Sigmoid<T> {
    out: Option<Tensor<T>>,
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Sigmoid<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        self.out = Some(y.clone());
        y
    }

    fn backward(&self, g: &Tensor<T>) -> Tensor<T> {
        let y = self.out.as_ref().expect("sigmoid backward before forward");
        let mut dx = g.clone();
        for (d, &o) in dx.data_mut().iter_mut().zip(y.data()) {
            *d *= o * (T::one() - o);
        }
        dx
    }
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;

/// Per-channel normalization with a learned affine; batch statistics in
/// training, frozen running statistics at inference.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    cache: Option<(Vec<T>, Vec<T>, Vec<usize>)>,
}

impl<T: Scalar> BatchNorm<T> {
    fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::filled(vec![channels], T::one()),
            beta: Tensor::zeros(vec![channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            cache: None,
        }
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let d = x.dims();
        let (b, c) = (d[0], d[1]);
        let s: usize = d[2..].iter().product();
        let n = T::of((b * s) as f64);
        let xd = x.data();
        let eps = T::of(BN_EPS);
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for (k, plane) in xd.chunks(s).enumerate() {
                    mean[k % c] += lanes::sum(plane);
                }
                mean.iter_mut().for_each(|m| *m /= n);
                for (k, plane) in xd.chunks(s).enumerate() {
                    var[k % c] += lanes::centered_squares(plane, mean[k % c]);
                }
                var.iter_mut().for_each(|v| *v /= n);
                let mom = T::of(BN_MOMENTUM);
                for ci in 0..c {
                    self.running_mean[ci] = mom * self.running_mean[ci] + (T::one() - mom) * mean[ci];
                    self.running_var[ci] = mom * self.running_var[ci] + (T::one() - mom) * var[ci];
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for (k, ((xp, hp), op)) in xd.chunks(s).zip(xhat.chunks_mut(s)).zip(out.chunks_mut(s)).enumerate() {
            let ci = k % c;
            let (g, be, m, iv) = (self.gamma.data()[ci], self.beta.data()[ci], mean[ci], inv[ci]);
            for ((&x, h), o) in xp.iter().zip(hp.iter_mut()).zip(op.iter_mut()) {
                *h = (x - m) * iv;
                *o = g * *h + be;
            }
        }
        self.cache = Some((xhat, inv, d.to_vec()));
        Tensor::new(d.to_vec(), out).unwrap()
    }

    fn backward(&mut self, g: &Tensor<T>) -> Tensor<T> {
        let (xhat, inv, dims) = self.cache.as_ref().expect("batchnorm backward before forward");
        let (b, c) = (dims[0], dims[1]);
        let s: usize = dims[2..].iter().product();
        let n = T::of((b * s) as f64);
        let gd = g.data();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for (k, (gp, hp)) in gd.chunks(s).zip(xhat.chunks(s)).enumerate() {
            sum_g[k % c] += lanes::sum(gp);
            sum_gx[k % c] += lanes::dot(gp, hp);
        }
        {
            let gg = self.gamma.grad_mut();
            add_into(gg, &sum_gx);
        }
        {
            let bg = self.beta.grad_mut();
            add_into(bg, &sum_g);
        }
        let mut dx = vec![T::zero(); gd.len()];
        for (k, ((dp, gp), hp)) in dx.chunks_mut(s).zip(gd.chunks(s)).zip(xhat.chunks(s)).enumerate() {
            let ci = k % c;
            let k0 = self.gamma.data()[ci] * inv[ci] / n;
            let (sg, sgx) = (sum_g[ci], sum_gx[ci]);
            for ((d, &g), &h) in dp.iter_mut().zip(gp).zip(hp) {
                *d = k0 * (n * g - sg - h * sgx);
            }
        }
        Tensor::new(dims.clone(), dx).unwrap()
    }
}

/// `main(x) + shortcut(x)`; an empty shortcut is the identity.
#[derive(Clone, Debug)]
pub struct Residual<T> {
    pub main: Vec<Layer<T>>,
    pub shortcut: Vec<Layer<T>>,
}

impl<T: Scalar> Residual<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let mut a = forward_stack(&mut self.main, x, mode);
        let b = forward_stack(&mut self.shortcut, x, mode);
        add_into(a.data_mut(), b.data());
        a
    }

    fn backward(&mut self, g: &Tensor<T>, need_input_grad: bool) -> Option<Tensor<T>> {
        let a = backward_stack(&mut self.main, g, need_input_grad);
        let b = backward_stack(&mut self.shortcut, g, need_input_grad);
        match (a, b) {
            (Some(mut a), Some(b)) => {
                add_into(a.data_mut(), b.data());
                Some(a)
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Upsample {
    factor: usize,
    in_dims: Option<Vec<usize>>,
}

impl Upsample {
    fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let d = x.dims();
        let (bc, h, w) = (d[0] * d[1], d[2], d[3]);
        let f = self.factor;
        let (ho, wo) = (h * f, w * f);
        let mut out = vec![T::zero(); bc * ho * wo];
        let xd = x.data();
        for p in 0..bc {
            for oy in 0..ho {
                let src = &xd[p * h * w + (oy / f) * w..][..w];
                let dst = &mut out[p * ho * wo + oy * wo..][..wo];
                for (ox, v) in dst.iter_mut().enumerate() {
                    *v = src[ox / f];
                }
            }
        }
        self.in_dims = Some(d.to_vec());
        Tensor::new(vec![d[0], d[1], ho, wo], out).unwrap()
    }

    fn backward<T: Scalar>(&self, g: &Tensor<T>) -> Tensor<T> {
        let d = self.in_dims.as_ref().expect("upsample backward before forward");
        let (bc, h, w) = (d[0] * d[1], d[2], d[3]);
        let f = self.factor;
        let (ho, wo) = (h * f, w * f);
        let mut dx = Tensor::zeros(d.clone());
        let out = dx.data_mut();
        let gd = g.data();
        for p in 0..bc {
            for oy in 0..ho {
                let src = &gd[p * ho * wo + oy * wo..][..wo];
                let dst = &mut out[p * h * w + (oy / f) * w..][..w];
                for (ox, &v) in src.iter().enumerate() {
                    dst[ox / f] += v;
                }
            }
        }
        dx
    }
}

#[derive(Clone, Debug)]
pub struct ConcatSkip<T> {
    pub inner: Vec<Layer<T>>,
    skip_channels: usize,
}

impl<T: Scalar> ConcatSkip<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let y = forward_stack(&mut self.inner, x, mode);
        let d = x.dims();
        let (b, c1, plane) = (d[0], d[1], d[2] * d[3]);
        let c2 = y.dims()[1];
        let mut out = Vec::with_capacity(b * (c1 + c2) * plane);
        for bi in 0..b {
            out.extend_from_slice(x.sample(bi));
            out.extend_from_slice(y.sample(bi));
        }
        self.skip_channels = c1;
        Tensor::new(vec![b, c1 + c2, d[2], d[3]], out).unwrap()
    }

    fn backward(&mut self, g: &Tensor<T>, need_input_grad: bool) -> Option<Tensor<T>> {
        let d = g.dims();
        let (b, c, plane) = (d[0], d[1], d[2] * d[3]);
        let c1 = self.skip_channels;
        let c2 = c - c1;
        let mut gx = Vec::with_capacity(b * c1 * plane);
        let mut gy = Vec::with_capacity(b * c2 * plane);
        for bi in 0..b {
            let s = g.sample(bi);
            gx.extend_from_slice(&s[..c1 * plane]);
            gy.extend_from_slice(&s[c1 * plane..]);
        }
        let gy = Tensor::new(vec![b, c2, d[2], d[3]], gy).unwrap();
        let inner = backward_stack(&mut self.inner, &gy, need_input_grad);
        if !need_input_grad {
            return None;
        }
        let mut gx = Tensor::new(vec![b, c1, d[2], d[3]], gx).unwrap();
        if let Some(i) = inner {
            add_into(gx.data_mut(), i.data());
        }
        Some(gx)
    }
}

#[derive(Clone, Debug)]
pub struct GlobalAvgPool {
    in_dims: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let d = x.dims();
        let plane = d[2] * d[3];
        let inv = T::one() / T::of(plane as f64);
        let out: Vec<T> = x.data().chunks(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        self.in_dims = Some(d.to_vec());
        Tensor::new(vec![d[0], d[1]], out).unwrap()
    }

    fn backward<T: Scalar>(&self, g: &Tensor<T>) -> Tensor<T> {
        let d = self.in_dims.as_ref().expect("pool backward before forward");
        let plane = d[2] * d[3];
        let inv = T::one() / T::of(plane as f64);
        let mut dx = Vec::with_capacity(g.len() * plane);
        for &v in g.data() {
            dx.extend(std::iter::repeat_n(v * inv, plane));
        }
        Tensor::new(d.clone(), dx).unwrap()
    }
}
