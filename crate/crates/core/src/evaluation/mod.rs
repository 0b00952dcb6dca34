//! ISO 30107-3 style evaluation: APCER/BPCER, DET curves, D-EER, partial
//! AUC, fixed-BPCER operating points and weighted score-level fusion.
//!
//! Decision polarity is fixed crate-wide: a sample is classified as an
//! attack iff its score >= threshold. All classifiers emit
//! higher-is-more-anomalous scores to honor that.

mod fusion;
mod metrics;
pub mod report;
mod svg;

pub use fusion::{fuse, FusionResult, NormStats};
pub use metrics::{
    apcer, apcer_at_bpcer, apcer_by_species, bpcer, d_eer, det_curve, pauc20, worst_species_apcer,
    DetCurve, DetPoint,
};
pub use report::{summarize, Summary};
pub use svg::det_svg;

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::dataset::Label;
use crate::error::{Error, Result};

/// One scored presentation.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub label: Label,
    pub species: String,
    pub score: f64,
}

/// Per-sample (id, label, species, score) records; the interchange unit
/// between scoring and evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    records: Vec<ScoreRecord>,
}

impl ScoreSet {
    pub fn new(records: Vec<ScoreRecord>) -> Result<ScoreSet> {
        let mut ids: Vec<&str> = records.iter().map(|r| r.sample_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Contract("score sets need unique sample ids".into()));
        }
        if records.iter().any(|r| !r.score.is_finite()) {
            return Err(Error::Contract("scores must be finite".into()));
        }
        Ok(ScoreSet { records })
    }

    pub fn records(&self) -> &[ScoreRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn attack_scores(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.label == Label::Attack)
            .map(|r| r.score)
            .collect()
    }

    pub fn bonafide_scores(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.label == Label::BonaFide)
            .map(|r| r.score)
            .collect()
    }

    /// Error-rate computations need at least one record of each class.
    pub fn require_both_classes(&self) -> Result<()> {
        let attacks = self.records.iter().filter(|r| r.label == Label::Attack).count();
        let bona = self.records.len() - attacks;
        if attacks == 0 || bona == 0 {
            return Err(Error::Contract(format!(
                "error rates need both classes: {bona} bona fide, {attacks} attack records"
            )));
        }
        Ok(())
    }

    /// Write as `sample_id,label,species,score` CSV. Scores print in
    /// shortest-round-trip form, so a written file parses back bit-exactly.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(File::create(path)?);
        writeln!(out, "sample_id,label,species,score")?;
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.sample_id, r.label.as_str(), r.species, r.score)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<ScoreSet> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty score file".into()))??;
        if header.trim() != "sample_id,label,species,score" {
            return Err(Error::Format(format!(
                "unexpected score header '{header}' (expected 'sample_id,label,species,score')"
            )));
        }
        let mut records = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(4, ',');
            let (Some(id), Some(label), Some(species), Some(score)) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Format(format!(
                    "score line {} has fewer than 4 fields: '{line}'",
                    lineno + 2
                )));
            };
            let score: f64 = score.trim().parse().map_err(|_| {
                Error::Format(format!("score line {}: bad score '{score}'", lineno + 2))
            })?;
            records.push(ScoreRecord {
                sample_id: id.to_string(),
                label: Label::parse(label)?,
                species: species.to_string(),
                score,
            });
        }
        ScoreSet::new(records)
    }
}

#[cfg(test)]
pub(crate) fn set_from(bona: &[f64], attacks: &[f64]) -> ScoreSet {
    let mut records = Vec::new();
    for (i, s) in bona.iter().enumerate() {
        records.push(ScoreRecord {
            sample_id: format!("b{i}"),
            label: Label::BonaFide,
            species: "bonafide".into(),
            score: *s,
        });
    }
    for (i, s) in attacks.iter().enumerate() {
        records.push(ScoreRecord {
            sample_id: format!("a{i}"),
            label: Label::Attack,
            species: "species_x".into(),
            score: *s,
        });
    }
    ScoreSet::new(records).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_ids_rejected() {
        let records = vec![
            ScoreRecord {
                sample_id: "x".into(),
                label: Label::BonaFide,
                species: "bonafide".into(),
                score: 0.1,
            },
            ScoreRecord {
                sample_id: "x".into(),
                label: Label::Attack,
                species: "foo".into(),
                score: 0.9,
            },
        ];
        assert!(ScoreSet::new(records).is_err());
    }

    #[test]
    fn both_classes_required() {
        let set = set_from(&[0.1, 0.2], &[]);
        assert!(set.require_both_classes().is_err());
        let set = set_from(&[0.1], &[0.9]);
        assert!(set.require_both_classes().is_ok());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let set = set_from(&[0.1, 0.25000000000000017, 1.0 / 3.0], &[0.9, f64::MIN_POSITIVE]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        set.save_csv(&path).unwrap();
        let loaded = ScoreSet::load_csv(&path).unwrap();
        assert_eq!(set, loaded);
        for (a, b) in set.records().iter().zip(loaded.records()) {
            assert_eq!(a.score.to_bits(), b.score.to_bits());
        }
    }

    #[test]
    fn csv_rejects_malformed_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(matches!(ScoreSet::load_csv(&path), Err(Error::Format(_))));
        std::fs::write(&path, "sample_id,label,species,score\nx,bonafide,bonafide,notanumber\n")
            .unwrap();
        assert!(matches!(ScoreSet::load_csv(&path), Err(Error::Format(_))));
    }
}
