//! Benchmark one-class classifiers over fixed-width feature vectors:
//! a diagonal-covariance Gaussian mixture fitted by EM and a nu one-class
//! SVM with RBF kernel. Features come from autoencoder latents or from any
//! external file in the feature CSV format.

mod gmm;
mod ocsvm;

pub use gmm::{gmm_fit, gmm_score, GmmModel, GmmOptions, VARIANCE_FLOOR};
pub use ocsvm::{default_gamma, ocsvm_fit, ocsvm_score, OcSvmModel, KKT_TOL};

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::dataset::{Label, SampleSet};
use crate::error::{Error, Result};
use crate::evaluation::{ScoreRecord, ScoreSet};
use crate::models::AEModel;

/// Labeled fixed-width feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    ids: Vec<String>,
    labels: Vec<Label>,
    species: Vec<String>,
    /// Row-major `len x dim`.
    data: Vec<f32>,
}

impl FeatureSet {
    pub fn new(
        dim: usize,
        ids: Vec<String>,
        labels: Vec<Label>,
        species: Vec<String>,
        data: Vec<f32>,
    ) -> Result<FeatureSet> {
        let n = ids.len();
        if labels.len() != n || species.len() != n || data.len() != n * dim {
            return Err(Error::Shape(format!(
                "inconsistent feature set: {n} ids, {} labels, {} species, {} values for dim {dim}",
                labels.len(),
                species.len(),
                data.len()
            )));
        }
        if dim == 0 {
            return Err(Error::Contract("feature dimension must be >= 1".into()));
        }
        let mut sorted: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Contract("feature sets need unique sample ids".into()));
        }
        Ok(FeatureSet { dim, ids, labels, species, data })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    /// Rows with a given label.
    pub fn rows_with_label(&self, label: Label) -> Vec<&[f32]> {
        (0..self.len())
            .filter(|&i| self.labels[i] == label)
            .map(|i| self.row(i))
            .collect()
    }

    /// Wrap per-row anomaly scores into a [`ScoreSet`].
    pub fn score_set(&self, scores: &[f64]) -> Result<ScoreSet> {
        if scores.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} scores for {} feature rows",
                scores.len(),
                self.len()
            )));
        }
        let records = (0..self.len())
            .map(|i| ScoreRecord {
                sample_id: self.ids[i].clone(),
                label: self.labels[i],
                species: self.species[i].clone(),
                score: scores[i],
            })
            .collect();
        ScoreSet::new(records)
    }

    /// Write as `sample_id,label,species,f0..f{D-1}` CSV.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(File::create(path)?);
        let cols: Vec<String> = (0..self.dim).map(|i| format!("f{i}")).collect();
        writeln!(out, "sample_id,label,species,{}", cols.join(","))?;
        for i in 0..self.len() {
            write!(out, "{},{},{}", self.ids[i], self.labels[i].as_str(), self.species[i])?;
            for v in self.row(i) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<FeatureSet> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty feature file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() < 4 || cols[0] != "sample_id" || cols[1] != "label" || cols[2] != "species" {
            return Err(Error::Format(format!(
                "unexpected feature header '{header}' (expected 'sample_id,label,species,f0..')"
            )));
        }
        let dim = cols.len() - 3;
        for (i, c) in cols[3..].iter().enumerate() {
            if *c != format!("f{i}") {
                return Err(Error::Format(format!(
                    "feature column {} is named '{c}', expected 'f{i}'",
                    i + 3
                )));
            }
        }
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut species = Vec::new();
        let mut data = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 3 {
                return Err(Error::Format(format!(
                    "feature line {} has {} fields, expected {}",
                    lineno + 2,
                    fields.len(),
                    dim + 3
                )));
            }
            ids.push(fields[0].to_string());
            labels.push(Label::parse(fields[1])?);
            species.push(fields[2].to_string());
            for f in &fields[3..] {
                let v: f32 = f.trim().parse().map_err(|_| {
                    Error::Format(format!("feature line {}: bad value '{f}'", lineno + 2))
                })?;
                data.push(v);
            }
        }
        FeatureSet::new(dim, ids, labels, species, data)
    }
}

/// Latent features of every sample of a set under a trained model.
pub fn latent_features(model: &AEModel, set: &SampleSet) -> Result<FeatureSet> {
    let n = set.len();
    let dim = model.arch.latent_width();
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        let latent = model.latent(&set.image(i))?;
        debug_assert_eq!(latent.len(), dim);
        data.extend_from_slice(&latent);
    }
    FeatureSet::new(
        dim,
        set.meta().iter().map(|m| m.sample_id.clone()).collect(),
        set.meta().iter().map(|m| m.label).collect(),
        set.meta().iter().map(|m| m.species.clone()).collect(),
        data,
    )
}

/// Per-dimension zero-mean unit-variance transform computed from training
/// statistics. Both one-class classifiers standardize internally with this.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    /// Fit on rows; near-constant dimensions keep std 1 to avoid blow-ups.
    pub fn fit(rows: &[&[f32]]) -> Result<Standardizer> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Contract("cannot standardize zero rows".into()));
        }
        let dim = rows[0].len();
        let mut mean = vec![0.0f64; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += *v as f64;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0f64; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(*r).zip(&mean) {
                let d = *v as f64 - m;
                *s += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-9 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn apply(&self, row: &[f32]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "feature dimension {} does not match the fitted {}",
                row.len(),
                self.mean.len()
            )));
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (*v as f64 - m) / s)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_features() -> FeatureSet {
        let ids = vec!["a".into(), "b".into(), "c".into(), "d".into()];
        let labels = vec![Label::BonaFide, Label::BonaFide, Label::Attack, Label::Attack];
        let species = vec!["bonafide".into(), "bonafide".into(), "gel".into(), "gel".into()];
        let data = vec![0.0, 1.0, 0.5, 1.5, 10.0, -3.0, 11.0, -2.0];
        FeatureSet::new(2, ids, labels, species, data).unwrap()
    }

    #[test]
    fn feature_csv_round_trip() {
        let fs = toy_features();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        fs.save_csv(&path).unwrap();
        let loaded = FeatureSet::load_csv(&path).unwrap();
        assert_eq!(fs, loaded);
    }

    #[test]
    fn feature_csv_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        std::fs::write(&path, "sample_id,label,species,f0,f1\nx,bonafide,bonafide,0.5\n").unwrap();
        assert!(matches!(FeatureSet::load_csv(&path), Err(Error::Format(_))));
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let fs = toy_features();
        let rows: Vec<&[f32]> = (0..fs.len()).map(|i| fs.row(i)).collect();
        let sc = Standardizer::fit(&rows).unwrap();
        let mut mean = vec![0.0f64; 2];
        let mut var = vec![0.0f64; 2];
        let transformed: Vec<Vec<f64>> = rows.iter().map(|r| sc.apply(r).unwrap()).collect();
        for t in &transformed {
            for d in 0..2 {
                mean[d] += t[d];
            }
        }
        for m in &mut mean {
            *m /= transformed.len() as f64;
        }
        for t in &transformed {
            for d in 0..2 {
                var[d] += (t[d] - mean[d]).powi(2);
            }
        }
        for d in 0..2 {
            assert!(mean[d].abs() < 1e-12);
            assert!((var[d] / transformed.len() as f64 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn standardizer_rejects_dimension_mismatch() {
        let rows: Vec<&[f32]> = vec![&[1.0, 2.0]];
        let sc = Standardizer::fit(&rows).unwrap();
        assert!(sc.apply(&[1.0, 2.0, 3.0]).is_err());
    }
}
