//! Error rates, DET curves, D-EER, pAUC@20% and fixed-BPCER operating
//! points. Everything here is a rank statistic: strictly increasing score
//! transforms leave every metric unchanged.

use super::ScoreSet;
use crate::dataset::Label;
use crate::error::{Error, Result};

/// One operating point of a DET curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

/// Monotone sequence of operating points, stored by ascending APCER
/// (equivalently ascending threshold). Endpoints carry -inf/+inf sentinel
/// thresholds so that both the APCER=0 and the BPCER=0 point are present.
#[derive(Clone, Debug, PartialEq)]
pub struct DetCurve {
    points: Vec<DetPoint>,
}

impl DetCurve {
    pub fn points(&self) -> &[DetPoint] {
        &self.points
    }

    /// CSV export: `threshold,apcer,bpcer` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,apcer,bpcer\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.apcer, p.bpcer));
        }
        out
    }
}

/// Proportion of attack presentations misclassified as bona fide at
/// threshold `tau` (decision rule: attack iff score >= tau).
pub fn apcer(scores: &ScoreSet, tau: f64) -> Result<f64> {
    scores.require_both_classes()?;
    let attacks = scores.attack_scores();
    let missed = attacks.iter().filter(|s| **s < tau).count();
    Ok(missed as f64 / attacks.len() as f64)
}

/// Proportion of bona fide presentations misclassified as attacks at
/// threshold `tau`.
pub fn bpcer(scores: &ScoreSet, tau: f64) -> Result<f64> {
    scores.require_both_classes()?;
    let bona = scores.bonafide_scores();
    let flagged = bona.iter().filter(|s| **s >= tau).count();
    Ok(flagged as f64 / bona.len() as f64)
}

/// APCER per PAI species at threshold `tau`, sorted by species name.
pub fn apcer_by_species(scores: &ScoreSet, tau: f64) -> Result<Vec<(String, f64)>> {
    scores.require_both_classes()?;
    let mut per: std::collections::BTreeMap<&str, (usize, usize)> = Default::default();
    for r in scores.records() {
        if r.label == Label::Attack {
            let e = per.entry(r.species.as_str()).or_default();
            e.0 += 1;
            if r.score < tau {
                e.1 += 1;
            }
        }
    }
    Ok(per
        .into_iter()
        .map(|(name, (total, missed))| (name.to_string(), missed as f64 / total as f64))
        .collect())
}

/// The species with the highest APCER at `tau` (ties: first by name).
pub fn worst_species_apcer(scores: &ScoreSet, tau: f64) -> Result<(String, f64)> {
    let per = apcer_by_species(scores, tau)?;
    per.into_iter()
        .reduce(|best, cur| if cur.1 > best.1 { cur } else { best })
        .ok_or_else(|| Error::Contract("no attack species present".into()))
}

/// Sweep every distinct score plus -inf/+inf sentinels and emit the
/// deduplicated operating points.
pub fn det_curve(scores: &ScoreSet) -> Result<DetCurve> {
    scores.require_both_classes()?;
    let attacks = scores.attack_scores();
    let bona = scores.bonafide_scores();
    let mut thresholds: Vec<f64> = scores.records().iter().map(|r| r.score).collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    thresholds.dedup();
    let mut taus = Vec::with_capacity(thresholds.len() + 2);
    taus.push(f64::NEG_INFINITY);
    taus.extend(thresholds);
    taus.push(f64::INFINITY);

    let mut points: Vec<DetPoint> = Vec::with_capacity(taus.len());
    for tau in taus {
        let a = attacks.iter().filter(|s| **s < tau).count() as f64 / attacks.len() as f64;
        let b = bona.iter().filter(|s| **s >= tau).count() as f64 / bona.len() as f64;
        if let Some(last) = points.last() {
            if last.apcer == a && last.bpcer == b {
                continue;
            }
        }
        points.push(DetPoint { threshold: tau, apcer: a, bpcer: b });
    }
    debug_assert!(points.windows(2).all(|w| w[0].apcer <= w[1].apcer && w[0].bpcer >= w[1].bpcer));
    Ok(DetCurve { points })
}

/// Partial area under the DET curve: the trapezoidal integral of BPCER over
/// APCER in [0, 0.2], divided by 0.2. A curve that stops short of APCER 0.2
/// is extended by step continuation; BPCER values clamp to 1.
pub fn pauc20(curve: &DetCurve) -> f64 {
    const LIMIT: f64 = 0.2;
    let pts = curve.points();
    if pts.is_empty() {
        return 0.0;
    }
    let b = |p: &DetPoint| p.bpcer.min(1.0);
    let mut area = 0.0f64;
    let mut prev_a = 0.0f64;
    let mut prev_b = b(&pts[0]);
    for p in pts {
        let (a2, b2) = (p.apcer, b(p));
        if a2 <= prev_a {
            // vertical run: zero width, just move the height
            prev_b = b2;
            continue;
        }
        if prev_a >= LIMIT {
            break;
        }
        let hi = a2.min(LIMIT);
        // linear interpolation up to hi
        let t = (hi - prev_a) / (a2 - prev_a);
        let bh = prev_b + t * (b2 - prev_b);
        area += (hi - prev_a) * (prev_b + bh) / 2.0;
        prev_a = hi;
        prev_b = bh;
        if a2 >= LIMIT {
            break;
        }
        prev_b = b2;
    }
    if prev_a < LIMIT {
        // step continuation past the last point
        area += (LIMIT - prev_a) * prev_b;
    }
    area / LIMIT
}

/// Detection equal error rate: the point where APCER = BPCER, linearly
/// interpolated between the adjacent empirical operating points. Returns
/// `(eer, threshold)`.
pub fn d_eer(scores: &ScoreSet) -> Result<(f64, f64)> {
    let curve = det_curve(scores)?;
    let pts = curve.points();
    // diff goes from -1 at tau=-inf to +1 at tau=+inf
    for (i, p) in pts.iter().enumerate() {
        let diff = p.apcer - p.bpcer;
        if diff == 0.0 {
            return Ok((p.apcer, finite_tau(p.threshold, scores)));
        }
        if diff > 0.0 {
            let prev = &pts[i - 1];
            let (a1, b1, a2, b2) = (prev.apcer, prev.bpcer, p.apcer, p.bpcer);
            let denom = (a2 - a1) - (b2 - b1);
            let t = (b1 - a1) / denom;
            let eer = a1 + t * (a2 - a1);
            let tau = match (prev.threshold.is_finite(), p.threshold.is_finite()) {
                (true, true) => prev.threshold + t * (p.threshold - prev.threshold),
                (true, false) => prev.threshold,
                (false, true) => p.threshold,
                (false, false) => finite_tau(f64::NAN, scores),
            };
            return Ok((eer, tau));
        }
    }
    unreachable!("DET curves end at APCER 1, BPCER 0");
}

/// Fallback for sentinel thresholds: the median score.
fn finite_tau(tau: f64, scores: &ScoreSet) -> f64 {
    if tau.is_finite() {
        return tau;
    }
    let mut all: Vec<f64> = scores.records().iter().map(|r| r.score).collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all[all.len() / 2]
}

/// APCER at the smallest threshold whose BPCER is at most `target`.
pub fn apcer_at_bpcer(scores: &ScoreSet, target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Contract(format!(
            "target BPCER must be in [0, 1], got {target}"
        )));
    }
    let curve = det_curve(scores)?;
    for p in curve.points() {
        // points ascend in threshold; bpcer descends
        if p.bpcer <= target {
            return Ok(p.apcer);
        }
    }
    unreachable!("BPCER 0 is attainable at tau = +inf");
}
