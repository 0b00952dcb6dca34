//! nu one-class SVM with RBF kernel.
//!
//! Solves the dual
//!
//! ```text
//! min 1/2 sum_ij alpha_i alpha_j k(x_i, x_j)
//! s.t. sum alpha = 1,  0 <= alpha_i <= 1/(nu * n)
//! ```
//!
//! by deterministic pairwise coordinate optimization (maximally violating
//! pair, ties to the lowest index) down to a KKT gap of 1e-4. Features are
//! standardized internally; support vectors are stored in standardized
//! space. The anomaly score is `rho - sum alpha_i k(sv_i, x)`, so interior
//! training points score negative and faraway points approach `rho`.

use super::Standardizer;
use crate::error::{Error, Result};

pub const KKT_TOL: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct OcSvmModel {
    pub nu: f64,
    pub gamma: f64,
    scaler: Standardizer,
    /// Standardized support vectors with their dual coefficients.
    support: Vec<(Vec<f64>, f64)>,
    rho: f64,
}

impl OcSvmModel {
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn support_count(&self) -> usize {
        self.support.len()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.support.iter().map(|(_, a)| *a).collect()
    }
}

/// The scale heuristic: gamma = 1 / (dim * variance); features are
/// standardized to unit variance first, so this is 1 / dim.
pub fn default_gamma(dim: usize) -> f64 {
    1.0 / dim.max(1) as f64
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Fit on bona fide rows. `seed` is part of the signature for interface
/// parity with the other classifiers; the solver itself is deterministic.
pub fn ocsvm_fit(rows: &[&[f32]], nu: f64, gamma: f64, _seed: u64) -> Result<OcSvmModel> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Contract(format!("one-class SVM needs at least 2 rows, got {n}")));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::Contract(format!("nu must be in (0, 1], got {nu}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::Contract(format!("gamma must be > 0, got {gamma}")));
    }
    if n > 8192 {
        return Err(Error::Contract(format!(
            "one-class SVM keeps an n x n kernel matrix; {n} rows is too many (subsample first)"
        )));
    }
    let scaler = Standardizer::fit(rows)?;
    let z: Vec<Vec<f64>> = rows.iter().map(|r| scaler.apply(r)).collect::<Result<_>>()?;

    let kernel: Vec<f64> = {
        let mut k = vec![0.0f64; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rbf(&z[i], &z[j], gamma);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    };

    let upper = 1.0 / (nu * n as f64);
    // feasible start: fill the box from the front
    let mut alpha = vec![0.0f64; n];
    let full = (nu * n as f64).floor() as usize;
    for a in alpha.iter_mut().take(full.min(n)) {
        *a = upper;
    }
    let remainder = 1.0 - upper * full.min(n) as f64;
    if remainder > 0.0 && full < n {
        alpha[full] = remainder;
    }

    // gradient g = K alpha
    let mut grad = vec![0.0f64; n];
    for (i, a) in alpha.iter().enumerate() {
        if *a > 0.0 {
            for (g, krow) in grad.iter_mut().zip(kernel[i * n..(i + 1) * n].iter()) {
                *g += a * krow;
            }
        }
    }

    let box_eps = upper * 1e-12;
    let max_iter = 10_000 + 200 * n;
    let mut converged = false;
    for _ in 0..max_iter {
        // most violating pair: smallest gradient among increasable,
        // largest among decreasable
        let mut up = usize::MAX;
        let mut low = usize::MAX;
        for i in 0..n {
            if alpha[i] < upper - box_eps && (up == usize::MAX || grad[i] < grad[up]) {
                up = i;
            }
            if alpha[i] > box_eps && (low == usize::MAX || grad[i] > grad[low]) {
                low = i;
            }
        }
        if up == usize::MAX || low == usize::MAX {
            converged = true;
            break;
        }
        let gap = grad[low] - grad[up];
        if gap < KKT_TOL {
            converged = true;
            break;
        }
        let eta = kernel[up * n + up] + kernel[low * n + low] - 2.0 * kernel[up * n + low];
        let mut delta = if eta > 1e-12 { gap / eta } else { f64::INFINITY };
        delta = delta.min(upper - alpha[up]).min(alpha[low]);
        alpha[up] += delta;
        alpha[low] -= delta;
        for i in 0..n {
            grad[i] += delta * (kernel[i * n + up] - kernel[i * n + low]);
        }
    }
    if !converged {
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if alpha[i] < upper - box_eps && alpha[j] > box_eps {
                    worst = worst.max(grad[j] - grad[i]);
                }
            }
        }
        return Err(Error::Numeric(format!(
            "one-class SVM did not reach KKT tolerance {KKT_TOL} after {max_iter} iterations \
             (residual {worst:.3e})"
        )));
    }

    // rho from margin support vectors, midpoint fallback at the box bounds
    let free: Vec<usize> = (0..n)
        .filter(|&i| alpha[i] > box_eps && alpha[i] < upper - box_eps)
        .collect();
    let rho = if !free.is_empty() {
        free.iter().map(|&i| grad[i]).sum::<f64>() / free.len() as f64
    } else {
        let lo = (0..n)
            .filter(|&i| alpha[i] > box_eps)
            .map(|i| grad[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let hi = (0..n)
            .filter(|&i| alpha[i] < upper - box_eps)
            .map(|i| grad[i])
            .fold(f64::INFINITY, f64::min);
        if hi.is_finite() {
            (lo + hi) / 2.0
        } else {
            lo
        }
    };

    let support: Vec<(Vec<f64>, f64)> = (0..n)
        .filter(|&i| alpha[i] > 1e-12)
        .map(|i| (z[i].clone(), alpha[i]))
        .collect();
    Ok(OcSvmModel { nu, gamma, scaler, support, rho })
}

/// Anomaly score: rho - sum alpha_i k(sv_i, x). Higher = more anomalous.
pub fn ocsvm_score(model: &OcSvmModel, feature: &[f32]) -> Result<f64> {
    if feature.len() != model.scaler.dim() {
        return Err(Error::Shape(format!(
            "feature dimension {} does not match the model's {}",
            feature.len(),
            model.scaler.dim()
        )));
    }
    let z = model.scaler.apply(feature)?;
    let decision: f64 = model
        .support
        .iter()
        .map(|(sv, a)| a * rbf(sv, &z, model.gamma))
        .sum();
    Ok(model.rho - decision)
}
