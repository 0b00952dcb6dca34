//! Reconstruction-error losses and the matching per-sample anomaly score.
//!
//! Three batch losses over `(x, x')` pairs of shape `[B, ...]`:
//!
//! * `mse`: plain per-sample mean squared error, averaged over the batch.
//! * `ishii_wmse`: sample-level weighting. A sample is dropped from the sum
//!   (weight 0) when its per-sample mse exceeds the nearest-rank
//!   alpha-quantile of the batch mses; dropped samples still count in the
//!   1/B normalizer.
//! * `proposed_wmse`: pixel-level weighting. A pixel error is dropped when
//!   it exceeds `mse_j + C * std_j`, where `std_j` is the population
//!   standard deviation of that sample's pixel errors; the per-sample
//!   normalizer stays the full pixel count.
//!
//! Backward treats the binary weights as constants (they are
//! piecewise-constant in `x'`, zero derivative almost everywhere). All
//! reductions accumulate in f64.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    IshiiWmse,
    ProposedWmse,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::IshiiWmse => "ishii",
            LossKind::ProposedWmse => "wmse",
        }
    }

    pub fn parse(s: &str) -> Result<LossKind> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "ishii" => Ok(LossKind::IshiiWmse),
            "wmse" => Ok(LossKind::ProposedWmse),
            other => Err(Error::Contract(format!(
                "unknown loss kind '{other}' (expected mse, ishii or wmse)"
            ))),
        }
    }
}

/// Loss selection plus its constants. `c` is the threshold multiplier of the
/// pixel-weighted loss; `alpha` is the quantile level of the sample-weighted
/// loss. They share a symbol in the literature but mean different things, so
/// both are stored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub c: f32,
    pub alpha: f32,
}

impl LossConfig {
    pub fn mse() -> LossConfig {
        LossConfig { kind: LossKind::Mse, c: 0.0, alpha: 1.0 }
    }

    pub fn ishii(alpha: f32) -> LossConfig {
        LossConfig { kind: LossKind::IshiiWmse, c: 0.0, alpha }
    }

    pub fn proposed(c: f32) -> LossConfig {
        LossConfig { kind: LossKind::ProposedWmse, c, alpha: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LossKind::Mse => Ok(()),
            LossKind::IshiiWmse => {
                if self.alpha > 0.0 && self.alpha <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::Contract(format!(
                        "ishii alpha must be in (0, 1], got {}",
                        self.alpha
                    )))
                }
            }
            LossKind::ProposedWmse => {
                if self.c >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::Contract(format!("wmse C must be >= 0, got {}", self.c)))
                }
            }
        }
    }
}

fn check_shapes(x: &Tensor, xp: &Tensor) -> Result<(usize, usize)> {
    if x.shape() != xp.shape() {
        return Err(Error::Shape(format!(
            "loss inputs differ: {:?} vs {:?}",
            x.shape(),
            xp.shape()
        )));
    }
    if x.shape().len() < 2 {
        return Err(Error::Shape(format!(
            "loss inputs need a batch dimension, got {:?}",
            x.shape()
        )));
    }
    let batch = x.shape()[0];
    Ok((batch, x.len() / batch))
}

/// Per-sample mean of squared errors (f64 accumulation).
fn sample_mse(x: &[f32], xp: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (a, b) in x.iter().zip(xp) {
        let e = (*a - *b) as f64;
        acc += e * e;
    }
    acc / x.len() as f64
}

/// Population standard deviation of a sample's pixel errors around its mse.
fn sample_std(x: &[f32], xp: &[f32], mse: f64) -> f64 {
    let mut acc = 0.0f64;
    for (a, b) in x.iter().zip(xp) {
        let e = (*a - *b) as f64;
        let d = e * e - mse;
        acc += d * d;
    }
    (acc / x.len() as f64).sqrt()
}

fn per_sample<'a>(x: &'a Tensor, xp: &'a Tensor, j: usize, per: usize) -> (&'a [f32], &'a [f32]) {
    (&x.data()[j * per..(j + 1) * per], &xp.data()[j * per..(j + 1) * per])
}

/// Batch mean squared error.
pub fn mse_batch(x: &Tensor, xp: &Tensor) -> Result<f64> {
    let (batch, per) = check_shapes(x, xp)?;
    let mut total = 0.0f64;
    for j in 0..batch {
        let (xs, xps) = per_sample(x, xp, j, per);
        total += sample_mse(xs, xps);
    }
    Ok(total / batch as f64)
}

/// Nearest-rank quantile: the ceil(alpha * B)-th smallest value.
fn nearest_rank_quantile(values: &[f64], alpha: f32) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite mse values"));
    let rank = ((alpha as f64) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Sample-weighted MSE: samples above the alpha-quantile of batch mses are
/// dropped from the numerator but still divide into 1/B.
pub fn ishii_wmse_batch(x: &Tensor, xp: &Tensor, alpha: f32) -> Result<f64> {
    LossConfig::ishii(alpha).validate()?;
    let (batch, per) = check_shapes(x, xp)?;
    let mses: Vec<f64> = (0..batch)
        .map(|j| {
            let (xs, xps) = per_sample(x, xp, j, per);
            sample_mse(xs, xps)
        })
        .collect();
    let cutoff = nearest_rank_quantile(&mses, alpha);
    let total: f64 = mses.iter().filter(|m| **m <= cutoff).sum();
    Ok(total / batch as f64)
}

/// Pixel-weighted MSE: pixel errors above `mse_j + C * std_j` are dropped;
/// the denominator stays the full pixel count.
pub fn proposed_wmse_batch(x: &Tensor, xp: &Tensor, c: f32) -> Result<f64> {
    LossConfig::proposed(c).validate()?;
    let (batch, per) = check_shapes(x, xp)?;
    let mut total = 0.0f64;
    for j in 0..batch {
        let (xs, xps) = per_sample(x, xp, j, per);
        let mse = sample_mse(xs, xps);
        let std = sample_std(xs, xps, mse);
        let threshold = mse + c as f64 * std;
        let mut kept = 0.0f64;
        for (a, b) in xs.iter().zip(xps) {
            let e = (*a - *b) as f64;
            let e = e * e;
            if e <= threshold {
                kept += e;
            }
        }
        total += kept / per as f64;
    }
    Ok(total / batch as f64)
}

/// Dispatch on the configured loss.
pub fn loss_forward(x: &Tensor, xp: &Tensor, config: &LossConfig) -> Result<f64> {
    config.validate()?;
    match config.kind {
        LossKind::Mse => mse_batch(x, xp),
        LossKind::IshiiWmse => ishii_wmse_batch(x, xp, config.alpha),
        LossKind::ProposedWmse => proposed_wmse_batch(x, xp, config.c),
    }
}

/// Gradient of the configured loss with respect to the reconstruction `x'`.
///
/// For mse this is `2 (x' - x) / (B * per)`; the weighted variants multiply
/// elementwise by the forward-pass weights (stop-gradient through the mask).
pub fn loss_backward(x: &Tensor, xp: &Tensor, config: &LossConfig) -> Result<Tensor> {
    config.validate()?;
    let (batch, per) = check_shapes(x, xp)?;
    let norm = 2.0 / (batch as f64 * per as f64);
    let mut grad = Tensor::zeros(x.shape());

    match config.kind {
        LossKind::Mse => {
            for ((g, a), b) in grad.data_mut().iter_mut().zip(x.data()).zip(xp.data()) {
                *g = (norm * (*b - *a) as f64) as f32;
            }
        }
        LossKind::IshiiWmse => {
            let mses: Vec<f64> = (0..batch)
                .map(|j| {
                    let (xs, xps) = per_sample(x, xp, j, per);
                    sample_mse(xs, xps)
                })
                .collect();
            let cutoff = nearest_rank_quantile(&mses, config.alpha);
            for j in 0..batch {
                if mses[j] > cutoff {
                    continue; // dropped sample: exactly zero gradient
                }
                let (xs, xps) = per_sample(x, xp, j, per);
                let gs = &mut grad.data_mut()[j * per..(j + 1) * per];
                for ((g, a), b) in gs.iter_mut().zip(xs).zip(xps) {
                    *g = (norm * (*b - *a) as f64) as f32;
                }
            }
        }
        LossKind::ProposedWmse => {
            for j in 0..batch {
                let (xs, xps) = per_sample(x, xp, j, per);
                let mse = sample_mse(xs, xps);
                let std = sample_std(xs, xps, mse);
                let threshold = mse + config.c as f64 * std;
                let gs = &mut grad.data_mut()[j * per..(j + 1) * per];
                for ((g, a), b) in gs.iter_mut().zip(xs).zip(xps) {
                    let e = (*a - *b) as f64;
                    if e * e <= threshold {
                        *g = (norm * (*b - *a) as f64) as f32;
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Anomaly score of a single sample: the B=1 specialization of the
/// configured batch loss. Higher means more anomalous.
pub fn sample_score(x: &Tensor, xp: &Tensor, config: &LossConfig) -> Result<f64> {
    let (batch, _) = check_shapes(x, xp)?;
    if batch != 1 {
        return Err(Error::Shape(format!(
            "sample_score expects a single sample, got batch {batch}"
        )));
    }
    loss_forward(x, xp, config)
}
