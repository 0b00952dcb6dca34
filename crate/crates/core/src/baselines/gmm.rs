//! One-class Gaussian mixture model with diagonal covariances, fitted by EM.
//!
//! Fitting standardizes the features internally (EM on raw latents is badly
//! conditioned), then maps the mixture back to the original feature space;
//! the stored model scores raw features directly. The anomaly score is the
//! negative log-likelihood under the mixture, computed with log-sum-exp
//! stabilization.

use super::Standardizer;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub struct GmmOptions {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions { k: 4, max_iter: 200, tol: 1e-7, seed: 42 }
    }
}

/// Mixture parameters in the original feature space.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    /// `k x dim` means.
    means: Vec<Vec<f64>>,
    /// `k x dim` diagonal variances, each >= [`VARIANCE_FLOOR`].
    vars: Vec<Vec<f64>>,
    /// Per-iteration log-likelihood of the EM run (standardized space).
    ll_trace: Vec<f64>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.vars
    }

    pub fn ll_trace(&self) -> &[f64] {
        &self.ll_trace
    }
}

const LN_TAU: f64 = 1.837877066409345; // ln(2*pi)

fn log_gauss_diag(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0f64;
    for ((v, m), s2) in x.iter().zip(mean).zip(var) {
        let d = v - m;
        acc += -0.5 * (LN_TAU + s2.ln()) - 0.5 * d * d / s2;
    }
    acc
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ style seeded center choice on standardized rows.
fn init_means(rows: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SplitMix64::new(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(rows[rng.index(rows.len())].clone());
    while centers.len() < k {
        let d2: Vec<f64> = rows
            .iter()
            .map(|r| {
                centers
                    .iter()
                    .map(|c| squared_distance(r, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.next_f64() * total;
            let mut pick = rows.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.index(rows.len())
        };
        centers.push(rows[next].clone());
    }
    centers
}

/// Index of the point farthest from every current mean (deterministic).
fn farthest_point(rows: &[Vec<f64>], means: &[Vec<f64>]) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::NEG_INFINITY;
    for (i, r) in rows.iter().enumerate() {
        let d = means
            .iter()
            .map(|m| squared_distance(r, m))
            .fold(f64::INFINITY, f64::min);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Fit by expectation-maximization on bona fide feature rows.
pub fn gmm_fit(rows: &[&[f32]], opts: &GmmOptions) -> Result<GmmModel> {
    let n = rows.len();
    if opts.k == 0 {
        return Err(Error::Contract("GMM needs at least one component".into()));
    }
    if n < opts.k {
        return Err(Error::Contract(format!(
            "GMM with k={} needs at least that many rows, got {n}",
            opts.k
        )));
    }
    let scaler = Standardizer::fit(rows)?;
    let dim = scaler.dim();
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| scaler.apply(r))
        .collect::<Result<_>>()?;

    let k = opts.k;
    let mut weights = vec![1.0 / k as f64; k];
    let mut means = init_means(&z, k, opts.seed);
    let mut vars = vec![vec![1.0f64; dim]; k];
    let mut resp = vec![0.0f64; n * k];
    let mut ll_trace = Vec::new();

    for _iter in 0..opts.max_iter {
        // E-step with log-sum-exp
        let mut ll = 0.0f64;
        for (i, zi) in z.iter().enumerate() {
            let logp: Vec<f64> = (0..k)
                .map(|c| weights[c].ln() + log_gauss_diag(zi, &means[c], &vars[c]))
                .collect();
            let m = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logp.iter().map(|p| (p - m).exp()).sum::<f64>().ln();
            ll += lse;
            for c in 0..k {
                resp[i * k + c] = (logp[c] - lse).exp();
            }
        }
        let converged = ll_trace
            .last()
            .is_some_and(|prev: &f64| (ll - prev).abs() < opts.tol);
        ll_trace.push(ll);
        if converged {
            break;
        }

        // M-step
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum();
            if nk < 1e-10 {
                // empty component: reseed deterministically at the farthest point
                let far = farthest_point(&z, &means);
                means[c] = z[far].clone();
                vars[c] = vec![1.0; dim];
                weights[c] = 1.0 / n as f64;
                continue;
            }
            weights[c] = nk / n as f64;
            let mut mean = vec![0.0f64; dim];
            for (i, zi) in z.iter().enumerate() {
                let r = resp[i * k + c];
                for (m, v) in mean.iter_mut().zip(zi) {
                    *m += r * v;
                }
            }
            for m in &mut mean {
                *m /= nk;
            }
            let mut var = vec![0.0f64; dim];
            for (i, zi) in z.iter().enumerate() {
                let r = resp[i * k + c];
                for ((s, v), m) in var.iter_mut().zip(zi).zip(&mean) {
                    let d = v - m;
                    *s += r * d * d;
                }
            }
            for s in &mut var {
                *s = (*s / nk).max(VARIANCE_FLOOR);
            }
            means[c] = mean;
            vars[c] = var;
        }
        let wsum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= wsum;
        }
    }

    // map the mixture back to the original feature space
    let (fm, fs) = (scaler.mean(), scaler.std());
    let means_orig: Vec<Vec<f64>> = means
        .iter()
        .map(|mu| mu.iter().zip(fm.iter().zip(fs)).map(|(m, (fm, fs))| fm + fs * m).collect())
        .collect();
    let vars_orig: Vec<Vec<f64>> = vars
        .iter()
        .map(|va| {
            va.iter()
                .zip(fs)
                .map(|(v, s)| (v * s * s).max(VARIANCE_FLOOR))
                .collect()
        })
        .collect();
    let wsum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= wsum;
    }
    Ok(GmmModel {
        weights,
        means: means_orig,
        vars: vars_orig,
        ll_trace,
    })
}

/// Negative log-likelihood of a feature vector; higher = more anomalous.
pub fn gmm_score(model: &GmmModel, feature: &[f32]) -> Result<f64> {
    if feature.len() != model.dim() {
        return Err(Error::Shape(format!(
            "feature dimension {} does not match the model's {}",
            feature.len(),
            model.dim()
        )));
    }
    let x: Vec<f64> = feature.iter().map(|v| *v as f64).collect();
    let logp: Vec<f64> = (0..model.k())
        .map(|c| model.weights[c].ln() + log_gauss_diag(&x, &model.means[c], &model.vars[c]))
        .collect();
    let m = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(-(m + logp.iter().map(|p| (p - m).exp()).sum::<f64>().ln()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit_1d(values: &[f32], k: usize, seed: u64) -> GmmModel {
        let rows: Vec<Vec<f32>> = values.iter().map(|v| vec![*v]).collect();
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        gmm_fit(&refs, &GmmOptions { k, seed, ..Default::default() }).unwrap()
    }

    #[test]
    fn single_component_closed_form() {
        // K=1 on {0, 2}: mean 1, population variance 1
        let model = fit_1d(&[0.0, 2.0], 1, 7);
        assert!((model.means()[0][0] - 1.0).abs() < 1e-9);
        assert!((model.variances()[0][0] - 1.0).abs() < 1e-9);
        assert!((model.weights()[0] - 1.0).abs() < 1e-12);
        // K=1 converges immediately: two LL evaluations at most
        assert!(model.ll_trace().len() <= 3);
    }

    #[test]
    fn single_component_score_closed_form() {
        // unit variance, 1-D: nll = 0.5 (x - mu)^2 + 0.5 ln(2 pi)
        let model = fit_1d(&[0.0, 2.0], 1, 7);
        for x in [-1.0f32, 0.0, 0.7, 1.0, 2.5] {
            let got = gmm_score(&model, &[x]).unwrap();
            let expected = 0.5 * (x as f64 - 1.0).powi(2) + 0.5 * LN_TAU;
            assert!((got - expected).abs() < 1e-9, "x={x}: {got} vs {expected}");
        }
    }

    #[test]
    fn score_is_lowest_near_a_component_mean() {
        let model = fit_1d(&[0.0, 0.1, -0.1, 5.0, 5.1, 4.9], 2, 3);
        let near = gmm_score(&model, &[0.0]).unwrap();
        let far = gmm_score(&model, &[2.5]).unwrap();
        assert!(near < far);
    }

    #[test]
    fn weights_sum_to_one() {
        let model = fit_1d(&[0.0, 0.5, 1.0, 5.0, 5.5, 6.0, -2.0, 9.0], 3, 11);
        let sum: f64 = model.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(model.variances().iter().flatten().all(|v| *v >= VARIANCE_FLOOR));
    }

    #[test]
    fn renormalizing_weights_leaves_scores_unchanged() {
        let mut model = fit_1d(&[0.0, 1.0, 2.0, 8.0, 9.0], 2, 5);
        let before = gmm_score(&model, &[4.2]).unwrap();
        let sum: f64 = model.weights.iter().sum();
        for w in &mut model.weights {
            *w /= sum;
        }
        let after = gmm_score(&model, &[4.2]).unwrap();
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_trace_is_nondecreasing() {
        let mut rng = SplitMix64::new(17);
        for trial in 0..100 {
            let n = 20 + (trial % 30);
            let rows: Vec<Vec<f32>> = (0..n)
                .map(|_| vec![rng.normal_f32(0.0, 1.0), rng.normal_f32(2.0, 0.5)])
                .collect();
            let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
            let model = gmm_fit(
                &refs,
                &GmmOptions { k: 3, seed: trial as u64, max_iter: 60, ..Default::default() },
            )
            .unwrap();
            for w in model.ll_trace().windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-9,
                    "trial {trial}: LL dropped {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = fit_1d(&[0.0, 2.0], 1, 7);
        assert!(gmm_score(&model, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn needs_enough_rows() {
        let rows: Vec<Vec<f32>> = vec![vec![1.0]];
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        assert!(gmm_fit(&refs, &GmmOptions { k: 2, ..Default::default() }).is_err());
    }

    #[test]
    fn fit_is_deterministic() {
        let a = fit_1d(&[0.0, 1.0, 4.0, 5.0, 9.0], 2, 21);
        let b = fit_1d(&[0.0, 1.0, 4.0, 5.0, 9.0], 2, 21);
        assert_eq!(a, b);
    }

    use crate::rng::SplitMix64;
}
