//! Weighted score-level fusion of two score sources.
//!
//! Each source is min-max normalized to [0, 1] (clamped) with statistics
//! computed from a disjoint reference split, then combined as
//! `w * a + (1 - w) * b`. A degenerate source (min = max) contributes a
//! constant 0.5 and is flagged in the result.

use std::collections::HashMap;

use super::{ScoreRecord, ScoreSet};
use crate::error::{Error, Result};

/// Min-max normalization statistics for one score source.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub min: f64,
    pub max: f64,
}

impl NormStats {
    pub fn from_scores(scores: &ScoreSet) -> Result<NormStats> {
        if scores.is_empty() {
            return Err(Error::Contract("cannot derive normalization stats from an empty set".into()));
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for r in scores.records() {
            min = min.min(r.score);
            max = max.max(r.score);
        }
        Ok(NormStats { min, max })
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max > self.min)
    }

    /// Clamped min-max normalization; 0.5 for a degenerate source.
    pub fn normalize(&self, v: f64) -> f64 {
        if self.is_degenerate() {
            0.5
        } else {
            ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        }
    }
}

#[derive(Clone, Debug)]
pub struct FusionResult {
    pub scores: ScoreSet,
    pub degenerate_a: bool,
    pub degenerate_b: bool,
}

/// Fuse two score sets over identical sample ids.
pub fn fuse(
    a: &ScoreSet,
    b: &ScoreSet,
    w: f64,
    stats_a: &NormStats,
    stats_b: &NormStats,
) -> Result<FusionResult> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Contract(format!("fusion weight must be in [0, 1], got {w}")));
    }
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "fusion inputs differ in size: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let by_id: HashMap<&str, &ScoreRecord> = b
        .records()
        .iter()
        .map(|r| (r.sample_id.as_str(), r))
        .collect();
    let mut records = Vec::with_capacity(a.len());
    for ra in a.records() {
        let rb = by_id.get(ra.sample_id.as_str()).ok_or_else(|| {
            Error::Contract(format!("sample id '{}' missing from the second source", ra.sample_id))
        })?;
        if ra.label != rb.label || ra.species != rb.species {
            return Err(Error::Contract(format!(
                "sample id '{}' disagrees on label or species between sources",
                ra.sample_id
            )));
        }
        let fused = w * stats_a.normalize(ra.score) + (1.0 - w) * stats_b.normalize(rb.score);
        records.push(ScoreRecord {
            sample_id: ra.sample_id.clone(),
            label: ra.label,
            species: ra.species.clone(),
            score: fused,
        });
    }
    Ok(FusionResult {
        scores: ScoreSet::new(records)?,
        degenerate_a: stats_a.is_degenerate(),
        degenerate_b: stats_b.is_degenerate(),
    })
}
