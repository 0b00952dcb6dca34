//! Minimal differentiable layer zoo.
//!
//! Fixed sequential layer chains only: convolution ("same" zero padding,
//! stride 1 or 2), 2x2 max pooling, 2x nearest-neighbor upsampling, dense,
//! flatten/reshape, relu and sigmoid, plus a crop layer the architecture
//! builder inserts to undo ceil-semantics on odd spatial dims. Forward and
//! backward passes are deterministic functions of (inputs, parameters);
//! reverse-mode gradients are exact.
//!
//! Reductions longer than a few thousand elements (dense dot products,
//! convolution weight gradients) accumulate in f64; everything else is f32.

pub mod optimizer;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// One layer of a sequential network.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// 2-d cross-correlation, "same" zero padding, odd kernel, stride 1 or 2.
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// 2x2 max pooling with ceil semantics (edge windows truncated).
    MaxPool2,
    /// 2x nearest-neighbor upsampling.
    Upsample2,
    /// Affine map on flattened inputs.
    Dense { width: usize },
    /// `[B, C, H, W]` -> `[B, C*H*W]`.
    Flatten,
    /// `[B, N]` -> `[B, C, H, W]` with `N = C*H*W`.
    Reshape {
        channels: usize,
        height: usize,
        width: usize,
    },
    Relu,
    Sigmoid,
    /// Top-left spatial crop; pairs with ceil-semantics pooling/upsampling on
    /// odd input sizes.
    Crop { height: usize, width: usize },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool2 => "maxpool",
            LayerSpec::Upsample2 => "upsample",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Crop { .. } => "crop",
        }
    }

    /// Output shape of this layer for the given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
            } => {
                if *out_channels == 0 {
                    return Err(Error::Shape("conv out-channels must be >= 1".into()));
                }
                if *kernel == 0 || *kernel % 2 == 0 {
                    return Err(Error::Shape(format!("conv kernel must be odd, got {kernel}")));
                }
                if !matches!(stride, 1 | 2) {
                    return Err(Error::Shape(format!("conv stride must be 1 or 2, got {stride}")));
                }
                let [b, _, h, w] = expect4(input)?;
                Ok(vec![b, *out_channels, div_ceil(h, *stride), div_ceil(w, *stride)])
            }
            LayerSpec::MaxPool2 => {
                let [b, c, h, w] = expect4(input)?;
                Ok(vec![b, c, div_ceil(h, 2), div_ceil(w, 2)])
            }
            LayerSpec::Upsample2 => {
                let [b, c, h, w] = expect4(input)?;
                Ok(vec![b, c, 2 * h, 2 * w])
            }
            LayerSpec::Dense { width } => {
                if *width == 0 {
                    return Err(Error::Shape("dense width must be >= 1".into()));
                }
                let [b, _] = expect2(input)?;
                Ok(vec![b, *width])
            }
            LayerSpec::Flatten => {
                let [b, c, h, w] = expect4(input)?;
                Ok(vec![b, c * h * w])
            }
            LayerSpec::Reshape {
                channels,
                height,
                width,
            } => {
                let [b, n] = expect2(input)?;
                if channels * height * width != n {
                    return Err(Error::Shape(format!(
                        "reshape to {channels}x{height}x{width} needs width {}, got {n}",
                        channels * height * width
                    )));
                }
                Ok(vec![b, *channels, *height, *width])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::Crop { height, width } => {
                let [b, c, h, w] = expect4(input)?;
                if *height > h || *width > w {
                    return Err(Error::Shape(format!(
                        "crop to {height}x{width} exceeds input {h}x{w}"
                    )));
                }
                Ok(vec![b, c, *height, *width])
            }
        }
    }
}

fn expect4(shape: &[usize]) -> Result<[usize; 4]> {
    match shape {
        [b, c, h, w] => Ok([*b, *c, *h, *w]),
        other => Err(Error::Shape(format!("expected a 4-d tensor, got {other:?}"))),
    }
}

fn expect2(shape: &[usize]) -> Result<[usize; 2]> {
    match shape {
        [b, n] => Ok([*b, *n]),
        other => Err(Error::Shape(format!("expected a 2-d tensor, got {other:?}"))),
    }
}

fn div_ceil(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Output shapes of every layer in a chain; total over valid chains.
pub fn infer_shapes(layers: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = Vec::with_capacity(layers.len());
    let mut cur = input.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        cur = layer
            .output_shape(&cur)
            .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", layer.name())))?;
        shapes.push(cur.clone());
    }
    Ok(shapes)
}

/// Weight and bias tensors of one parametric layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Per-layer parameters plus the RMSprop accumulators that mirror them.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    seed: u64,
    params: Vec<Option<LayerParams>>,
    acc: Vec<Option<LayerParams>>,
}

impl ParamStore {
    /// Initialize parameters for a layer chain: weights uniform in
    /// +-sqrt(6 / (fan_in + fan_out)), biases zero, drawn from a splitmix64
    /// stream so that equal (chain, seed) pairs are bit-identical.
    pub fn init(layers: &[LayerSpec], input: &[usize], seed: u64) -> Result<ParamStore> {
        let mut rng = SplitMix64::new(seed);
        let mut params = Vec::with_capacity(layers.len());
        let mut cur = input.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            let next = layer
                .output_shape(&cur)
                .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", layer.name())))?;
            let p = match layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    ..
                } => {
                    let in_channels = cur[1];
                    let fan_in = in_channels * kernel * kernel;
                    let fan_out = out_channels * kernel * kernel;
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                    let shape = [*out_channels, in_channels, *kernel, *kernel];
                    let weights = uniform_tensor(&mut rng, &shape, limit);
                    Some(LayerParams {
                        weights,
                        bias: Tensor::zeros(&[*out_channels]),
                    })
                }
                LayerSpec::Dense { width } => {
                    let n = cur[1];
                    let limit = (6.0 / (n + width) as f64).sqrt() as f32;
                    let weights = uniform_tensor(&mut rng, &[n, *width], limit);
                    Some(LayerParams {
                        weights,
                        bias: Tensor::zeros(&[*width]),
                    })
                }
                _ => None,
            };
            params.push(p);
            cur = next;
        }
        let acc = params
            .iter()
            .map(|p| {
                p.as_ref().map(|lp| LayerParams {
                    weights: Tensor::zeros(lp.weights.shape()),
                    bias: Tensor::zeros(lp.bias.shape()),
                })
            })
            .collect();
        Ok(ParamStore { seed, params, acc })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layer(&self, i: usize) -> Option<&LayerParams> {
        self.params.get(i).and_then(|p| p.as_ref())
    }

    pub fn layers(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub fn layers_mut(&mut self) -> &mut [Option<LayerParams>] {
        &mut self.params
    }

    pub(crate) fn acc_mut(&mut self) -> &mut [Option<LayerParams>] {
        &mut self.acc
    }

    pub fn accumulators(&self) -> &[Option<LayerParams>] {
        &self.acc
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weights.len() + p.bias.len())
            .sum()
    }

    /// Rebuild a store from raw parameter tensors (checkpoint loading).
    pub fn from_parts(seed: u64, params: Vec<Option<LayerParams>>) -> ParamStore {
        let acc = params
            .iter()
            .map(|p| {
                p.as_ref().map(|lp| LayerParams {
                    weights: Tensor::zeros(lp.weights.shape()),
                    bias: Tensor::zeros(lp.bias.shape()),
                })
            })
            .collect();
        ParamStore { seed, params, acc }
    }
}

fn uniform_tensor(rng: &mut SplitMix64, shape: &[usize], limit: f32) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.uniform(-limit, limit);
    }
    t
}

/// Gradients aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<Option<LayerParams>>,
}

// ---------------------------------------------------------------------------
// Individual layer operations
// ---------------------------------------------------------------------------

/// "Same" padding before the first element: ceil-output cross-correlation.
fn pad_before(input: usize, kernel: usize, stride: usize) -> usize {
    let out = div_ceil(input, stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    total / 2
}

/// Cross-correlation with "same" zero padding.
///
/// `input` is `[B, I, H, W]`, `weights` `[O, I, k, k]`, `bias` `[O]`; the
/// output is `[B, O, ceil(H/stride), ceil(W/stride)]`.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
) -> Result<Tensor> {
    let [bsz, ic, ih, iw] = expect4(input.shape())?;
    let [oc, wic, k, k2] = expect4(weights.shape())?;
    if wic != ic || k != k2 {
        return Err(Error::Shape(format!(
            "conv weights {:?} incompatible with input {:?}",
            weights.shape(),
            input.shape()
        )));
    }
    if bias.shape() != [oc] {
        return Err(Error::Shape(format!(
            "conv bias {:?} must be [{oc}]",
            bias.shape()
        )));
    }
    let oh = div_ceil(ih, stride);
    let ow = div_ceil(iw, stride);
    let py = pad_before(ih, k, stride) as isize;
    let px = pad_before(iw, k, stride) as isize;

    let mut out = Tensor::zeros(&[bsz, oc, oh, ow]);
    let wdat = weights.data();
    for b in 0..bsz {
        for o in 0..oc {
            let obase = out.idx4(b, o, 0, 0);
            out.data_mut()[obase..obase + oh * ow].fill(bias.data()[o]);
            for i in 0..ic {
                let ibase = input.idx4(b, i, 0, 0);
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wdat[((o * ic + i) * k + ky) * k + kx];
                        let dx = kx as isize - px;
                        // valid output columns: 0 <= ox*stride + dx < iw
                        let ox_lo = if dx < 0 {
                            div_ceil((-dx) as usize, stride)
                        } else {
                            0
                        };
                        let max_ix = iw as isize - dx;
                        if max_ix <= 0 {
                            continue;
                        }
                        let ox_hi = ow.min(div_ceil(max_ix as usize, stride));
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * stride) as isize + ky as isize - py;
                            if iy < 0 || iy >= ih as isize {
                                continue;
                            }
                            let irow = ibase + iy as usize * iw;
                            let orow = obase + oy * ow;
                            if stride == 1 {
                                let ioff = (irow as isize + ox_lo as isize + dx) as usize;
                                let (idat, odat) =
                                    (input.data(), &mut out.data_mut()[orow + ox_lo..orow + ox_hi]);
                                let irow = &idat[ioff..ioff + (ox_hi - ox_lo)];
                                for (ov, iv) in odat.iter_mut().zip(irow) {
                                    *ov += wv * iv;
                                }
                            } else {
                                let idat = input.data();
                                // split borrows: read input, write output
                                for ox in ox_lo..ox_hi {
                                    let ix = (ox * stride) as isize + dx;
                                    let v = idat[irow + ix as usize];
                                    out.data_mut()[orow + ox] += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    stride: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [bsz, ic, ih, iw] = expect4(input.shape())?;
    let [oc, _, k, _] = expect4(weights.shape())?;
    let [gb, go, oh, ow] = expect4(grad_out.shape())?;
    if gb != bsz || go != oc || oh != div_ceil(ih, stride) || ow != div_ceil(iw, stride) {
        return Err(Error::Shape(format!(
            "conv grad_out {:?} incompatible with input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let py = pad_before(ih, k, stride) as isize;
    let px = pad_before(iw, k, stride) as isize;

    let mut grad_in = Tensor::zeros(&[bsz, ic, ih, iw]);
    let mut grad_w_acc = vec![0.0f64; weights.len()];
    let mut grad_b_acc = vec![0.0f64; oc];
    let wdat = weights.data();
    let gdat = grad_out.data();
    let idat = input.data();

    for b in 0..bsz {
        for o in 0..oc {
            let gbase = grad_out.idx4(b, o, 0, 0);
            let mut bsum = 0.0f64;
            for v in &gdat[gbase..gbase + oh * ow] {
                bsum += *v as f64;
            }
            grad_b_acc[o] += bsum;
            for i in 0..ic {
                let ibase = b * ic * ih * iw + i * ih * iw;
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((o * ic + i) * k + ky) * k + kx;
                        let wv = wdat[widx];
                        let dx = kx as isize - px;
                        let ox_lo = if dx < 0 {
                            div_ceil((-dx) as usize, stride)
                        } else {
                            0
                        };
                        let max_ix = iw as isize - dx;
                        if max_ix <= 0 {
                            continue;
                        }
                        let ox_hi = ow.min(div_ceil(max_ix as usize, stride));
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let mut wsum = 0.0f64;
                        for oy in 0..oh {
                            let iy = (oy * stride) as isize + ky as isize - py;
                            if iy < 0 || iy >= ih as isize {
                                continue;
                            }
                            let irow = ibase + iy as usize * iw;
                            let grow = gbase + oy * ow;
                            if stride == 1 {
                                let ioff = (irow as isize + ox_lo as isize + dx) as usize;
                                let n = ox_hi - ox_lo;
                                let grad_row = &gdat[grow + ox_lo..grow + ox_lo + n];
                                // d/dinput: scatter upstream grad through the kernel
                                let gi = &mut grad_in.data_mut()[ioff..ioff + n];
                                for (giv, gv) in gi.iter_mut().zip(grad_row) {
                                    *giv += wv * gv;
                                }
                                // d/dweights: row dot of upstream grad and input
                                wsum += dot_f32(grad_row, &idat[ioff..ioff + n]) as f64;
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = ((ox * stride) as isize + dx) as usize;
                                    let gv = gdat[grow + ox];
                                    grad_in.data_mut()[irow + ix] += wv * gv;
                                    wsum += (gv * idat[irow + ix]) as f64;
                                }
                            }
                        }
                        grad_w_acc[widx] += wsum;
                    }
                }
            }
        }
    }
    let grad_w = Tensor::from_vec(
        weights.shape(),
        grad_w_acc.iter().map(|v| *v as f32).collect(),
    )?;
    let grad_b = Tensor::from_vec(&[oc], grad_b_acc.iter().map(|v| *v as f32).collect())?;
    Ok((grad_in, grad_w, grad_b))
}

/// f32 dot product with four lanes; fixed summation order.
fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// 2x2 max pooling; returns the pooled tensor and the flat argmax index of
/// every output cell (first-encountered maximum in row-major window order).
pub fn maxpool2_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [bsz, c, ih, iw] = expect4(input.shape())?;
    let oh = div_ceil(ih, 2);
    let ow = div_ceil(iw, 2);
    let mut out = Tensor::zeros(&[bsz, c, oh, ow]);
    let mut argmax = vec![0usize; out.len()];
    let idat = input.data();
    let mut oi = 0;
    for b in 0..bsz {
        for ch in 0..c {
            let ibase = input.idx4(b, ch, 0, 0);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for wy in 2 * oy..(2 * oy + 2).min(ih) {
                        for wx in 2 * ox..(2 * ox + 2).min(iw) {
                            let idx = ibase + wy * iw + wx;
                            if idat[idx] > best {
                                best = idat[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.data_mut()[oi] = best;
                    argmax[oi] = best_idx;
                    oi += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Backward of 2x2 max pooling: route each upstream gradient to its argmax.
pub fn maxpool2_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut grad_in = Tensor::zeros(input_shape);
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        grad_in.data_mut()[idx] += g;
    }
    grad_in
}

/// 2x nearest-neighbor upsampling.
pub fn upsample2_forward(input: &Tensor) -> Result<Tensor> {
    let [bsz, c, ih, iw] = expect4(input.shape())?;
    let (oh, ow) = (2 * ih, 2 * iw);
    let mut out = Tensor::zeros(&[bsz, c, oh, ow]);
    let idat = input.data();
    for plane in 0..bsz * c {
        let ibase = plane * ih * iw;
        let obase = plane * oh * ow;
        for oy in 0..oh {
            let irow = ibase + (oy / 2) * iw;
            let orow = obase + oy * ow;
            for ox in 0..ow {
                out.data_mut()[orow + ox] = idat[irow + ox / 2];
            }
        }
    }
    Ok(out)
}

/// Backward of upsampling: sum each replicated 2x2 block.
pub fn upsample2_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let [bsz, c, ih, iw] = expect4(input_shape)?;
    let (oh, ow) = (2 * ih, 2 * iw);
    let mut grad_in = Tensor::zeros(input_shape);
    let gdat = grad_out.data();
    for plane in 0..bsz * c {
        let ibase = plane * ih * iw;
        let obase = plane * oh * ow;
        for oy in 0..oh {
            let irow = ibase + (oy / 2) * iw;
            let grow = obase + oy * ow;
            for ox in 0..ow {
                grad_in.data_mut()[irow + ox / 2] += gdat[grow + ox];
            }
        }
    }
    Ok(grad_in)
}

/// Affine map `y = xW + b`; `input` is `[B, N]`, `weights` `[N, M]`.
/// Accumulates in f64 (N can reach several thousand).
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [bsz, n] = expect2(input.shape())?;
    let [wn, m] = expect2(weights.shape())?;
    if wn != n {
        return Err(Error::Shape(format!(
            "dense weights {:?} incompatible with input width {n}",
            weights.shape()
        )));
    }
    if bias.shape() != [m] {
        return Err(Error::Shape(format!(
            "dense bias {:?} must be [{m}]",
            bias.shape()
        )));
    }
    let mut out = Tensor::zeros(&[bsz, m]);
    let wdat = weights.data();
    let mut acc = vec![0.0f64; m];
    for b in 0..bsz {
        for (a, bv) in acc.iter_mut().zip(bias.data()) {
            *a = *bv as f64;
        }
        let xrow = &input.data()[b * n..(b + 1) * n];
        for (j, xv) in xrow.iter().enumerate() {
            let xv = *xv as f64;
            let wrow = &wdat[j * m..(j + 1) * m];
            for (a, wv) in acc.iter_mut().zip(wrow) {
                *a += xv * *wv as f64;
            }
        }
        for (o, a) in out.data_mut()[b * m..(b + 1) * m].iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    }
    Ok(out)
}

/// Gradients of [`dense_forward`] with respect to input, weights and bias.
pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [bsz, n] = expect2(input.shape())?;
    let [_, m] = expect2(weights.shape())?;
    if grad_out.shape() != [bsz, m] {
        return Err(Error::Shape(format!(
            "dense grad_out {:?} must be [{bsz}, {m}]",
            grad_out.shape()
        )));
    }
    let mut grad_in = Tensor::zeros(&[bsz, n]);
    let mut grad_w = Tensor::zeros(&[n, m]);
    let mut grad_b = Tensor::zeros(&[m]);
    let wdat = weights.data();
    let gdat = grad_out.data();
    for b in 0..bsz {
        let grow = &gdat[b * m..(b + 1) * m];
        let xrow = &input.data()[b * n..(b + 1) * n];
        // dX = dY W^T, one f64 row dot per input element
        for j in 0..n {
            let wrow = &wdat[j * m..(j + 1) * m];
            let mut acc = 0.0f64;
            for (g, w) in grow.iter().zip(wrow) {
                acc += *g as f64 * *w as f64;
            }
            grad_in.data_mut()[b * n + j] = acc as f32;
        }
        // dW += x^T dY, reduction over the batch only (small, f32)
        for j in 0..n {
            let xv = xrow[j];
            if xv == 0.0 {
                continue;
            }
            let wrow = &mut grad_w.data_mut()[j * m..(j + 1) * m];
            for (w, g) in wrow.iter_mut().zip(grow) {
                *w += xv * g;
            }
        }
        for (bgrad, g) in grad_b.data_mut().iter_mut().zip(grow) {
            *bgrad += g;
        }
    }
    Ok((grad_in, grad_w, grad_b))
}

/// Elementwise max(0, x).
pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut grad_in = grad_out.clone();
    for (g, x) in grad_in.data_mut().iter_mut().zip(input.data()) {
        if *x <= 0.0 {
            *g = 0.0;
        }
    }
    grad_in
}

/// Numerically stable logistic function.
pub fn sigmoid(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = if *v >= 0.0 {
            1.0 / (1.0 + (-*v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        };
    }
    out
}

/// Backward of sigmoid from its cached output: g * s * (1 - s).
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut grad_in = grad_out.clone();
    for (g, s) in grad_in.data_mut().iter_mut().zip(output.data()) {
        *g *= s * (1.0 - s);
    }
    grad_in
}

/// Top-left spatial crop to `height x width`.
pub fn crop_forward(input: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let [bsz, c, ih, iw] = expect4(input.shape())?;
    if height > ih || width > iw {
        return Err(Error::Shape(format!(
            "crop to {height}x{width} exceeds input {ih}x{iw}"
        )));
    }
    let mut out = Tensor::zeros(&[bsz, c, height, width]);
    for plane in 0..bsz * c {
        for y in 0..height {
            let src = plane * ih * iw + y * iw;
            let dst = plane * height * width + y * width;
            out.data_mut()[dst..dst + width].copy_from_slice(&input.data()[src..src + width]);
        }
    }
    Ok(out)
}

/// Backward of crop: zero-pad the gradient back to the input size.
pub fn crop_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let [bsz, c, ih, iw] = expect4(input_shape)?;
    let [_, _, oh, ow] = expect4(grad_out.shape())?;
    let mut grad_in = Tensor::zeros(input_shape);
    for plane in 0..bsz * c {
        for y in 0..oh {
            let src = plane * oh * ow + y * ow;
            let dst = plane * ih * iw + y * iw;
            grad_in.data_mut()[dst..dst + ow].copy_from_slice(&grad_out.data()[src..src + ow]);
        }
    }
    Ok(grad_in)
}

// ---------------------------------------------------------------------------
// Sequential chain driver
// ---------------------------------------------------------------------------

enum Aux {
    None,
    ArgMax(Vec<usize>),
    Output(Tensor),
}

/// What the backward pass needs from one layer's forward pass.
pub struct LayerCache {
    input_shape: Vec<usize>,
    input: Option<Tensor>,
    aux: Aux,
}

fn needs_input(layer: &LayerSpec) -> bool {
    matches!(
        layer,
        LayerSpec::Conv { .. } | LayerSpec::Dense { .. } | LayerSpec::Relu
    )
}

/// Forward pass keeping per-layer caches for [`backward`].
pub fn forward(
    layers: &[LayerSpec],
    store: &ParamStore,
    input: &Tensor,
) -> Result<(Tensor, Vec<LayerCache>)> {
    run_forward(layers, store, input, layers.len(), true).map(|(t, c)| (t, c.unwrap()))
}

/// Forward pass without caches (inference/scoring).
pub fn forward_inference(layers: &[LayerSpec], store: &ParamStore, input: &Tensor) -> Result<Tensor> {
    run_forward(layers, store, input, layers.len(), false).map(|(t, _)| t)
}

/// Forward pass through the first `count` layers only.
pub fn forward_prefix(
    layers: &[LayerSpec],
    store: &ParamStore,
    input: &Tensor,
    count: usize,
) -> Result<Tensor> {
    run_forward(layers, store, input, count, false).map(|(t, _)| t)
}

fn run_forward(
    layers: &[LayerSpec],
    store: &ParamStore,
    input: &Tensor,
    count: usize,
    keep_caches: bool,
) -> Result<(Tensor, Option<Vec<LayerCache>>)> {
    let mut caches = keep_caches.then(|| Vec::with_capacity(count));
    let mut cur = input.clone();
    for (i, layer) in layers.iter().take(count).enumerate() {
        let wrap = |e: Error| Error::Shape(format!("layer {i} ({}): {e}", layer.name()));
        let params = store.layer(i);
        let input_shape = cur.shape().to_vec();
        let mut aux = Aux::None;
        let keep_input = keep_caches && needs_input(layer);
        let next = match layer {
            LayerSpec::Conv { stride, .. } => {
                let p = params.ok_or_else(|| Error::Shape(format!("layer {i}: missing conv parameters")))?;
                conv2d_forward(&cur, &p.weights, &p.bias, *stride).map_err(wrap)?
            }
            LayerSpec::MaxPool2 => {
                let (out, argmax) = maxpool2_forward(&cur).map_err(wrap)?;
                if keep_caches {
                    aux = Aux::ArgMax(argmax);
                }
                out
            }
            LayerSpec::Upsample2 => upsample2_forward(&cur).map_err(wrap)?,
            LayerSpec::Dense { .. } => {
                let p = params.ok_or_else(|| Error::Shape(format!("layer {i}: missing dense parameters")))?;
                dense_forward(&cur, &p.weights, &p.bias).map_err(wrap)?
            }
            LayerSpec::Flatten => {
                let shape = layer.output_shape(cur.shape()).map_err(wrap)?;
                cur.reshaped(&shape).map_err(wrap)?
            }
            LayerSpec::Reshape { .. } => {
                let shape = layer.output_shape(cur.shape()).map_err(wrap)?;
                cur.reshaped(&shape).map_err(wrap)?
            }
            LayerSpec::Relu => relu(&cur),
            LayerSpec::Sigmoid => {
                let out = sigmoid(&cur);
                if keep_caches {
                    aux = Aux::Output(out.clone());
                }
                out
            }
            LayerSpec::Crop { height, width } => crop_forward(&cur, *height, *width).map_err(wrap)?,
        };
        if let Some(caches) = caches.as_mut() {
            caches.push(LayerCache {
                input_shape,
                input: keep_input.then(|| cur.clone()),
                aux,
            });
        }
        cur = next;
    }
    Ok((cur, caches))
}

/// Reverse-mode pass over a cached forward run. Returns parameter gradients
/// and the gradient with respect to the chain input.
pub fn backward(
    layers: &[LayerSpec],
    store: &ParamStore,
    caches: &[LayerCache],
    grad_output: &Tensor,
) -> Result<(Gradients, Tensor)> {
    if caches.len() != layers.len() {
        return Err(Error::Shape(format!(
            "backward: {} caches for {} layers",
            caches.len(),
            layers.len()
        )));
    }
    let mut grads: Vec<Option<LayerParams>> = vec![None; layers.len()];
    let mut grad = grad_output.clone();
    for (i, layer) in layers.iter().enumerate().rev() {
        let wrap = |e: Error| Error::Shape(format!("layer {i} ({}): {e}", layer.name()));
        let cache = &caches[i];
        grad = match layer {
            LayerSpec::Conv { stride, .. } => {
                let p = store
                    .layer(i)
                    .ok_or_else(|| Error::Shape(format!("layer {i}: missing conv parameters")))?;
                let input = cache.input.as_ref().expect("conv cache keeps its input");
                let (gi, gw, gb) = conv2d_backward(input, &p.weights, &grad, *stride).map_err(wrap)?;
                grads[i] = Some(LayerParams { weights: gw, bias: gb });
                gi
            }
            LayerSpec::MaxPool2 => {
                let Aux::ArgMax(argmax) = &cache.aux else {
                    return Err(Error::Shape(format!("layer {i}: missing maxpool cache")));
                };
                maxpool2_backward(&cache.input_shape, argmax, &grad)
            }
            LayerSpec::Upsample2 => upsample2_backward(&cache.input_shape, &grad).map_err(wrap)?,
            LayerSpec::Dense { .. } => {
                let p = store
                    .layer(i)
                    .ok_or_else(|| Error::Shape(format!("layer {i}: missing dense parameters")))?;
                let input = cache.input.as_ref().expect("dense cache keeps its input");
                let (gi, gw, gb) = dense_backward(input, &p.weights, &grad).map_err(wrap)?;
                grads[i] = Some(LayerParams { weights: gw, bias: gb });
                gi
            }
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => {
                grad.reshaped(&cache.input_shape).map_err(wrap)?
            }
            LayerSpec::Relu => {
                let input = cache.input.as_ref().expect("relu cache keeps its input");
                relu_backward(input, &grad)
            }
            LayerSpec::Sigmoid => {
                let Aux::Output(out) = &cache.aux else {
                    return Err(Error::Shape(format!("layer {i}: missing sigmoid cache")));
                };
                sigmoid_backward(out, &grad)
            }
            LayerSpec::Crop { .. } => crop_backward(&cache.input_shape, &grad).map_err(wrap)?,
        };
    }
    Ok((Gradients { layers: grads }, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(shape: [usize; 4], data: Vec<f32>) -> Tensor {
        Tensor::from_vec(&shape, data).unwrap()
    }

    #[test]
    fn conv_zero_input_gives_zero_output() {
        let input = Tensor::zeros(&[1, 1, 3, 3]);
        let weights = t4([1, 1, 3, 3], vec![0.3; 9]);
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &weights, &bias, 1).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_identity_kernel() {
        let input = t4([1, 1, 1, 1], vec![2.0]);
        let weights = t4([1, 1, 1, 1], vec![1.0]);
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &weights, &bias, 1).unwrap();
        assert_eq!(out.data(), &[2.0]);
    }

    #[test]
    fn conv_same_padding_shapes() {
        let input = Tensor::zeros(&[2, 3, 7, 9]);
        let weights = Tensor::zeros(&[5, 3, 3, 3]);
        let bias = Tensor::zeros(&[5]);
        let s1 = conv2d_forward(&input, &weights, &bias, 1).unwrap();
        assert_eq!(s1.shape(), &[2, 5, 7, 9]);
        let s2 = conv2d_forward(&input, &weights, &bias, 2).unwrap();
        assert_eq!(s2.shape(), &[2, 5, 4, 5]);
    }

    #[test]
    fn conv_known_3x3_values() {
        // 3x3 input, 3x3 kernel of ones, stride 1: center output sums all 9.
        let input = t4([1, 1, 3, 3], (1..=9).map(|v| v as f32).collect());
        let weights = t4([1, 1, 3, 3], vec![1.0; 9]);
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &weights, &bias, 1).unwrap();
        assert_eq!(out.at4(0, 0, 1, 1), 45.0);
        // corner (0,0) sees the bottom-right 2x2 of the kernel over rows 0-1
        assert_eq!(out.at4(0, 0, 0, 0), 1.0 + 2.0 + 4.0 + 5.0);
    }

    #[test]
    fn conv_shape_mismatch_is_contract_error() {
        let input = Tensor::zeros(&[1, 2, 4, 4]);
        let weights = Tensor::zeros(&[1, 3, 3, 3]);
        let bias = Tensor::zeros(&[1]);
        assert!(conv2d_forward(&input, &weights, &bias, 1).is_err());
    }

    #[test]
    fn maxpool_window_max_and_argmax() {
        let input = t4([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let (out, argmax) = maxpool2_forward(&input).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(argmax, vec![3]);
    }

    #[test]
    fn maxpool_constant_stays_constant() {
        let input = Tensor::filled(&[1, 2, 6, 6], 0.7);
        let (out, _) = maxpool2_forward(&input).unwrap();
        assert_eq!(out.shape(), &[1, 2, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn maxpool_ties_take_first_in_row_major_order() {
        let input = t4([1, 1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]);
        let (_, argmax) = maxpool2_forward(&input).unwrap();
        assert_eq!(argmax, vec![0]);
    }

    #[test]
    fn maxpool_backward_conserves_gradient_mass() {
        let mut rng = SplitMix64::new(99);
        let data: Vec<f32> = (0..36).map(|_| rng.next_f32()).collect();
        let input = t4([1, 1, 6, 6], data);
        let (out, argmax) = maxpool2_forward(&input).unwrap();
        let mut grad_out = Tensor::zeros(out.shape());
        for v in grad_out.data_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
        let grad_in = maxpool2_backward(input.shape(), &argmax, &grad_out);
        let up: f64 = grad_out.data().iter().map(|&v| v as f64).sum();
        let down: f64 = grad_in.data().iter().map(|&v| v as f64).sum();
        assert!((up - down).abs() < 1e-6);
    }

    #[test]
    fn maxpool_odd_edges_truncate() {
        let input = t4([1, 1, 3, 3], (1..=9).map(|v| v as f32).collect());
        let (out, _) = maxpool2_forward(&input).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert_eq!(out.data(), &[5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn upsample_replicates_nearest() {
        let input = t4([1, 1, 1, 2], vec![1.0, 2.0]);
        let out = upsample2_forward(&input).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 4]);
        assert_eq!(out.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn upsample_after_maxpool_preserves_even_shapes() {
        let input = Tensor::zeros(&[2, 3, 8, 12]);
        let (pooled, _) = maxpool2_forward(&input).unwrap();
        let up = upsample2_forward(&pooled).unwrap();
        assert_eq!(up.shape(), input.shape());
    }

    #[test]
    fn dense_identity() {
        let input = Tensor::from_vec(&[1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut weights = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            weights.data_mut()[i * 3 + i] = 1.0;
        }
        let bias = Tensor::zeros(&[3]);
        let out = dense_forward(&input, &weights, &bias).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn dense_known_affine() {
        let input = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let weights = Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap();
        let bias = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let out = dense_forward(&input, &weights, &bias).unwrap();
        assert_eq!(out.data(), &[3.5]);
    }

    #[test]
    fn dense_width_mismatch_errors() {
        let input = Tensor::zeros(&[1, 3]);
        let weights = Tensor::zeros(&[2, 4]);
        let bias = Tensor::zeros(&[4]);
        assert!(dense_forward(&input, &weights, &bias).is_err());
    }

    #[test]
    fn relu_and_sigmoid_points() {
        let input = Tensor::from_vec(&[1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let r = relu(&input);
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
        let s = sigmoid(&Tensor::from_vec(&[1, 1], vec![0.0]).unwrap());
        assert_eq!(s.data(), &[0.5]);
        // gradient of sigmoid at 0 is 0.25
        let g = sigmoid_backward(&s, &Tensor::filled(&[1, 1], 1.0));
        assert!((g.data()[0] - 0.25).abs() < 1e-7);
    }

    #[test]
    fn sigmoid_extreme_inputs_stay_finite() {
        let input = Tensor::from_vec(&[1, 2], vec![-1000.0, 1000.0]).unwrap();
        let s = sigmoid(&input);
        assert!(s.all_finite());
        assert_eq!(s.data()[0], 0.0);
        assert_eq!(s.data()[1], 1.0);
    }

    #[test]
    fn crop_round_trip_shapes() {
        let input = Tensor::from_vec(&[1, 1, 2, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        let out = crop_forward(&input, 1, 2).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0]);
        let back = crop_backward(input.shape(), &out).unwrap();
        assert_eq!(back.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn param_store_same_seed_bit_identical() {
        let layers = vec![
            LayerSpec::Conv { out_channels: 4, kernel: 3, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { width: 8 },
        ];
        let a = ParamStore::init(&layers, &[1, 2, 6, 6], 123).unwrap();
        let b = ParamStore::init(&layers, &[1, 2, 6, 6], 123).unwrap();
        assert_eq!(a, b);
        let c = ParamStore::init(&layers, &[1, 2, 6, 6], 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn accumulators_mirror_parameter_shapes() {
        let layers = vec![
            LayerSpec::Conv { out_channels: 3, kernel: 3, stride: 2 },
            LayerSpec::Sigmoid,
        ];
        let store = ParamStore::init(&layers, &[1, 2, 4, 4], 5).unwrap();
        for (p, a) in store.layers().iter().zip(store.accumulators()) {
            match (p, a) {
                (Some(p), Some(a)) => {
                    assert_eq!(p.weights.shape(), a.weights.shape());
                    assert_eq!(p.bias.shape(), a.bias.shape());
                }
                (None, None) => {}
                _ => panic!("accumulator slots must mirror parameter slots"),
            }
        }
    }

    #[test]
    fn infer_shapes_matches_actual_forward() {
        let layers = vec![
            LayerSpec::Conv { out_channels: 6, kernel: 3, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool2,
            LayerSpec::Flatten,
            LayerSpec::Dense { width: 10 },
            LayerSpec::Relu,
            LayerSpec::Dense { width: 6 * 3 * 4 },
            LayerSpec::Reshape { channels: 6, height: 3, width: 4 },
            LayerSpec::Upsample2,
            LayerSpec::Crop { height: 5, width: 7 },
            LayerSpec::Conv { out_channels: 2, kernel: 3, stride: 1 },
            LayerSpec::Sigmoid,
        ];
        let input_shape = [2usize, 2, 5, 7];
        let inferred = infer_shapes(&layers, &input_shape).unwrap();
        let store = ParamStore::init(&layers, &input_shape, 7).unwrap();
        let input = Tensor::zeros(&input_shape);
        for count in 1..=layers.len() {
            let out = forward_prefix(&layers, &store, &input, count).unwrap();
            assert_eq!(out.shape(), inferred[count - 1].as_slice(), "layer {count}");
        }
    }

    #[test]
    fn infer_shapes_rejects_type_errors() {
        // dense on an unflattened tensor
        let layers = vec![LayerSpec::Dense { width: 4 }];
        let err = infer_shapes(&layers, &[1, 2, 3, 3]).unwrap_err();
        assert!(err.to_string().contains("layer 0"));
        // reshape with mismatched element count
        let layers = vec![LayerSpec::Reshape { channels: 2, height: 2, width: 2 }];
        assert!(infer_shapes(&layers, &[1, 9]).is_err());
    }

    #[test]
    fn forward_backward_deterministic() {
        let layers = vec![
            LayerSpec::Conv { out_channels: 3, kernel: 3, stride: 2 },
            LayerSpec::Relu,
            LayerSpec::Upsample2,
            LayerSpec::Conv { out_channels: 2, kernel: 3, stride: 1 },
            LayerSpec::Sigmoid,
        ];
        let store = ParamStore::init(&layers, &[2, 2, 6, 6], 11).unwrap();
        let mut rng = SplitMix64::new(4);
        let input = Tensor::from_vec(&[2, 2, 6, 6], (0..144).map(|_| rng.next_f32()).collect()).unwrap();
        let (out1, caches1) = forward(&layers, &store, &input).unwrap();
        let (out2, caches2) = forward(&layers, &store, &input).unwrap();
        assert_eq!(out1, out2);
        assert!(out1.all_finite());
        let grad_out = Tensor::filled(out1.shape(), 0.5);
        let (g1, gi1) = backward(&layers, &store, &caches1, &grad_out).unwrap();
        let (g2, gi2) = backward(&layers, &store, &caches2, &grad_out).unwrap();
        assert_eq!(gi1, gi2);
        assert!(gi1.all_finite());
        for (a, b) in g1.layers.iter().zip(&g2.layers) {
            assert_eq!(a.is_some(), b.is_some());
            if let (Some(a), Some(b)) = (a, b) {
                assert_eq!(a.weights, b.weights);
                assert_eq!(a.bias, b.bias);
            }
        }
    }
}
