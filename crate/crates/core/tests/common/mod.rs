//! Shared finite-difference oracle for the gradient suites.
//!
//! The oracle never touches the backward pass it checks: it replays the
//! forward computation through its own f64 reference implementations of
//! every layer and loss, so finite differences are not drowned in f32
//! rounding noise. Inputs and parameters stay f32 (perturbations happen on
//! the representable f32 grid); only the replay arithmetic is widened.

#![allow(dead_code)]

use ocpad::losses::{LossConfig, LossKind};
use ocpad::nn::{LayerSpec, ParamStore};
use ocpad::rng::SplitMix64;
use ocpad::tensor::Tensor;

pub const FD_STEP: f32 = 1e-3;

/// rel. err < 1e-4 with absolute floor 1e-6.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff < (1e-4 * analytic.abs().max(numeric.abs())).max(1e-6)
}

pub fn assert_grad_close(analytic: f64, numeric: f64, what: &str) {
    assert!(
        grad_close(analytic, numeric),
        "{what}: analytic {analytic} vs finite-difference {numeric}"
    );
}

pub fn rand_tensor(rng: &mut SplitMix64, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let len: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

/// Central finite difference of `f` along coordinate `idx` of `x`, using the
/// actually representable f32 step.
pub fn central_diff(x: &Tensor, idx: usize, mut f: impl FnMut(&Tensor) -> f64) -> f64 {
    let mut plus = x.clone();
    plus.data_mut()[idx] += FD_STEP;
    let mut minus = x.clone();
    minus.data_mut()[idx] -= FD_STEP;
    let h = plus.data()[idx] as f64 - minus.data()[idx] as f64;
    (f(&plus) - f(&minus)) / h
}

/// Fixed random projection <r, y>; its gradient wrt y is exactly r.
pub fn project64(y: &[f64], r: &Tensor) -> f64 {
    y.iter().zip(r.data()).map(|(a, b)| a * *b as f64).sum()
}

pub fn widen(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|v| *v as f64).collect()
}

// ---------------------------------------------------------------------------
// f64 reference layer implementations
// ---------------------------------------------------------------------------

pub mod oracle {
    use super::*;

    fn pad_before(input: usize, kernel: usize, stride: usize) -> isize {
        let out = input.div_ceil(stride);
        (((out - 1) * stride + kernel).saturating_sub(input) / 2) as isize
    }

    pub fn conv2d(
        x: &[f64],
        xs: [usize; 4],
        w: &[f64],
        ws: [usize; 4],
        b: &[f64],
        stride: usize,
    ) -> (Vec<f64>, [usize; 4]) {
        let [bsz, ic, ih, iw] = xs;
        let [oc, _, k, _] = ws;
        let (oh, ow) = (ih.div_ceil(stride), iw.div_ceil(stride));
        let (py, px) = (pad_before(ih, k, stride), pad_before(iw, k, stride));
        let mut out = vec![0.0f64; bsz * oc * oh * ow];
        for bi in 0..bsz {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[o];
                        for i in 0..ic {
                            for ky in 0..k {
                                let iy = (oy * stride) as isize + ky as isize - py;
                                if iy < 0 || iy >= ih as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * stride) as isize + kx as isize - px;
                                    if ix < 0 || ix >= iw as isize {
                                        continue;
                                    }
                                    let xi = ((bi * ic + i) * ih + iy as usize) * iw + ix as usize;
                                    let wi = ((o * ic + i) * k + ky) * k + kx;
                                    acc += x[xi] * w[wi];
                                }
                            }
                        }
                        out[((bi * oc + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        (out, [bsz, oc, oh, ow])
    }

    pub fn dense(x: &[f64], xs: [usize; 2], w: &[f64], m: usize, b: &[f64]) -> (Vec<f64>, [usize; 2]) {
        let [bsz, n] = xs;
        let mut out = vec![0.0f64; bsz * m];
        for bi in 0..bsz {
            for j in 0..m {
                let mut acc = b[j];
                for q in 0..n {
                    acc += x[bi * n + q] * w[q * m + j];
                }
                out[bi * m + j] = acc;
            }
        }
        (out, [bsz, m])
    }

    /// Returns (pooled, argmax, out shape).
    pub fn maxpool2(x: &[f64], xs: [usize; 4]) -> (Vec<f64>, Vec<usize>, [usize; 4]) {
        let [bsz, c, ih, iw] = xs;
        let (oh, ow) = (ih.div_ceil(2), iw.div_ceil(2));
        let mut out = Vec::with_capacity(bsz * c * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..bsz * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for wy in 2 * oy..(2 * oy + 2).min(ih) {
                        for wx in 2 * ox..(2 * ox + 2).min(iw) {
                            let idx = plane * ih * iw + wy * iw + wx;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        (out, argmax, [bsz, c, oh, ow])
    }

    pub fn upsample2(x: &[f64], xs: [usize; 4]) -> (Vec<f64>, [usize; 4]) {
        let [bsz, c, ih, iw] = xs;
        let (oh, ow) = (2 * ih, 2 * iw);
        let mut out = vec![0.0f64; bsz * c * oh * ow];
        for plane in 0..bsz * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    out[plane * oh * ow + oy * ow + ox] =
                        x[plane * ih * iw + (oy / 2) * iw + ox / 2];
                }
            }
        }
        (out, [bsz, c, oh, ow])
    }

    pub fn crop(x: &[f64], xs: [usize; 4], h: usize, w: usize) -> (Vec<f64>, [usize; 4]) {
        let [bsz, c, ih, iw] = xs;
        let mut out = vec![0.0f64; bsz * c * h * w];
        for plane in 0..bsz * c {
            for y in 0..h {
                for xq in 0..w {
                    out[plane * h * w + y * w + xq] = x[plane * ih * iw + y * iw + xq];
                }
            }
        }
        (out, [bsz, c, h, w])
    }

    pub fn relu(x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v.max(0.0)).collect()
    }

    pub fn sigmoid(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|v| {
                if *v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    v.exp() / (1.0 + v.exp())
                }
            })
            .collect()
    }

    /// Reference loss on f64 buffers; `per` is the per-sample element count.
    pub fn loss(config: &LossConfig, x: &[f64], xp: &[f64], batch: usize) -> f64 {
        let per = x.len() / batch;
        let errs = |j: usize| -> Vec<f64> {
            (0..per)
                .map(|q| {
                    let d = x[j * per + q] - xp[j * per + q];
                    d * d
                })
                .collect()
        };
        match config.kind {
            LossKind::Mse => {
                (0..batch)
                    .map(|j| errs(j).iter().sum::<f64>() / per as f64)
                    .sum::<f64>()
                    / batch as f64
            }
            LossKind::IshiiWmse => {
                let mses: Vec<f64> = (0..batch)
                    .map(|j| errs(j).iter().sum::<f64>() / per as f64)
                    .collect();
                let mut sorted = mses.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let rank = ((config.alpha as f64) * batch as f64).ceil() as usize;
                let cutoff = sorted[rank.clamp(1, batch) - 1];
                mses.iter().filter(|m| **m <= cutoff).sum::<f64>() / batch as f64
            }
            LossKind::ProposedWmse => {
                (0..batch)
                    .map(|j| {
                        let errs = errs(j);
                        let mse = errs.iter().sum::<f64>() / per as f64;
                        let var =
                            errs.iter().map(|e| (e - mse) * (e - mse)).sum::<f64>() / per as f64;
                        let threshold = mse + config.c as f64 * var.sqrt();
                        errs.iter().filter(|e| **e <= threshold).sum::<f64>() / per as f64
                    })
                    .sum::<f64>()
                    / batch as f64
            }
        }
    }
}

/// Non-smooth decision points hit by a forward pass: relu input signs and
/// maxpool argmax choices. Finite differences are only trusted where the
/// plus and minus runs share this signature.
#[derive(PartialEq)]
pub struct KinkSignature {
    relu_signs: Vec<bool>,
    argmaxes: Vec<usize>,
}

/// Replay a chain through the f64 reference layers.
pub fn eval_chain(layers: &[LayerSpec], store: &ParamStore, x: &Tensor) -> (Vec<f64>, KinkSignature) {
    let mut cur = widen(x);
    let mut shape4 = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let mut shape2 = [0usize; 2];
    let mut flat = false;
    let mut sig = KinkSignature { relu_signs: Vec::new(), argmaxes: Vec::new() };
    for (i, layer) in layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv { stride, .. } => {
                let p = store.layer(i).unwrap();
                let ws = p.weights.shape();
                let (out, s) = oracle::conv2d(
                    &cur,
                    shape4,
                    &widen(&p.weights),
                    [ws[0], ws[1], ws[2], ws[3]],
                    &widen(&p.bias),
                    *stride,
                );
                cur = out;
                shape4 = s;
            }
            LayerSpec::MaxPool2 => {
                let (out, argmax, s) = oracle::maxpool2(&cur, shape4);
                sig.argmaxes.extend(argmax);
                cur = out;
                shape4 = s;
            }
            LayerSpec::Upsample2 => {
                let (out, s) = oracle::upsample2(&cur, shape4);
                cur = out;
                shape4 = s;
            }
            LayerSpec::Dense { width } => {
                let p = store.layer(i).unwrap();
                let (out, s) = oracle::dense(&cur, shape2, &widen(&p.weights), *width, &widen(&p.bias));
                cur = out;
                shape2 = s;
            }
            LayerSpec::Flatten => {
                shape2 = [shape4[0], shape4[1] * shape4[2] * shape4[3]];
                flat = true;
            }
            LayerSpec::Reshape { channels, height, width } => {
                shape4 = [shape2[0], *channels, *height, *width];
                flat = false;
            }
            LayerSpec::Relu => {
                sig.relu_signs.extend(cur.iter().map(|v| *v > 0.0));
                cur = oracle::relu(&cur);
            }
            LayerSpec::Sigmoid => {
                cur = oracle::sigmoid(&cur);
            }
            LayerSpec::Crop { height, width } => {
                let (out, s) = oracle::crop(&cur, shape4, *height, *width);
                cur = out;
                shape4 = s;
            }
        }
    }
    let _ = flat;
    (cur, sig)
}

/// Composite loss of a chain against a fixed target, via the f64 oracle.
pub fn chain_loss(
    layers: &[LayerSpec],
    store: &ParamStore,
    x: &Tensor,
    target: &Tensor,
    config: &LossConfig,
) -> (f64, KinkSignature) {
    let (out, sig) = eval_chain(layers, store, x);
    (oracle::loss(config, &widen(target), &out, target.shape()[0]), sig)
}

/// True when every pixel error keeps a margin of at least `margin` to its
/// mask threshold (wMSE) or every per-sample mse keeps that margin to the
/// quantile cutoff (Ishii). `xp64` lets callers pass an f64 reconstruction.
pub fn mask_margins_clear(x: &Tensor, xp64: &[f64], config: &LossConfig, margin: f64) -> bool {
    let batch = x.shape()[0];
    let per = x.len() / batch;
    let errs = |j: usize| -> Vec<f64> {
        (0..per)
            .map(|q| {
                let d = x.data()[j * per + q] as f64 - xp64[j * per + q];
                d * d
            })
            .collect()
    };
    match config.kind {
        LossKind::Mse => true,
        LossKind::ProposedWmse => {
            for j in 0..batch {
                let errs = errs(j);
                let mse = errs.iter().sum::<f64>() / per as f64;
                let var = errs.iter().map(|e| (e - mse) * (e - mse)).sum::<f64>() / per as f64;
                let threshold = mse + config.c as f64 * var.sqrt();
                if errs.iter().any(|e| (e - threshold).abs() < margin) {
                    return false;
                }
            }
            true
        }
        LossKind::IshiiWmse => {
            let mses: Vec<f64> = (0..batch)
                .map(|j| errs(j).iter().sum::<f64>() / per as f64)
                .collect();
            let mut sorted = mses.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let rank = ((config.alpha as f64) * batch as f64).ceil() as usize;
            let cutoff = sorted[rank.clamp(1, batch) - 1];
            mses.iter().all(|m| (m - cutoff).abs() > margin || *m == cutoff)
        }
    }
}

/// Clone a store with one parameter element shifted.
pub fn perturb_param(store: &ParamStore, layer: usize, weight: bool, idx: usize, delta: f32) -> ParamStore {
    let mut s = store.clone();
    let p = s.layers_mut()[layer].as_mut().unwrap();
    let t = if weight { &mut p.weights } else { &mut p.bias };
    t.data_mut()[idx] += delta;
    s
}
