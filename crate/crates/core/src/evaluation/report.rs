//! Evaluation summary: the numbers a PAD benchmark reports, rendered as a
//! deterministic key = value text block.

use super::{
    apcer_at_bpcer, apcer_by_species, d_eer, det_curve, pauc20, worst_species_apcer, ScoreSet,
};
use crate::dataset::Label;
use crate::error::Result;

/// Fixed-BPCER operating points reported by default: 0.2%, 1%, 5%.
pub const BPCER_TARGETS: [f64; 3] = [0.002, 0.01, 0.05];

#[derive(Clone, Debug)]
pub struct Summary {
    pub bonafide: usize,
    pub attacks: usize,
    pub d_eer: f64,
    pub d_eer_threshold: f64,
    /// pAUC@20% as a fraction in [0, 1].
    pub pauc20: f64,
    /// (target BPCER, APCER there) for each of [`BPCER_TARGETS`].
    pub apcer_at: Vec<(f64, f64)>,
    /// Per-species APCER at the D-EER threshold, sorted by name.
    pub species: Vec<(String, f64)>,
    pub worst_species: (String, f64),
}

pub fn summarize(scores: &ScoreSet) -> Result<Summary> {
    scores.require_both_classes()?;
    let (eer, tau) = d_eer(scores)?;
    let curve = det_curve(scores)?;
    let apcer_at = BPCER_TARGETS
        .iter()
        .map(|t| Ok((*t, apcer_at_bpcer(scores, *t)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Summary {
        bonafide: scores
            .records()
            .iter()
            .filter(|r| r.label == Label::BonaFide)
            .count(),
        attacks: scores
            .records()
            .iter()
            .filter(|r| r.label == Label::Attack)
            .count(),
        d_eer: eer,
        d_eer_threshold: tau,
        pauc20: pauc20(&curve),
        apcer_at,
        species: apcer_by_species(scores, tau)?,
        worst_species: worst_species_apcer(scores, tau)?,
    })
}

impl Summary {
    /// Deterministic key = value rendering; percentages with fixed width.
    pub fn render(&self, title: &str) -> String {
        let mut s = String::new();
        s.push_str(&format!("[{title}]\n"));
        s.push_str(&format!("bonafide = {}\n", self.bonafide));
        s.push_str(&format!("attacks = {}\n", self.attacks));
        s.push_str(&format!("d_eer = {:.4}%\n", 100.0 * self.d_eer));
        s.push_str(&format!("d_eer_threshold = {}\n", self.d_eer_threshold));
        s.push_str(&format!("pauc20 = {:.4}%\n", 100.0 * self.pauc20));
        for (target, apcer) in &self.apcer_at {
            s.push_str(&format!(
                "apcer_at_bpcer_{:.1}% = {:.4}%\n",
                100.0 * target,
                100.0 * apcer
            ));
        }
        for (name, apcer) in &self.species {
            s.push_str(&format!("apcer_species_{name} = {:.4}%\n", 100.0 * apcer));
        }
        s.push_str(&format!(
            "worst_species = {} ({:.4}%)\n",
            self.worst_species.0,
            100.0 * self.worst_species.1
        ));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::set_from;

    #[test]
    fn summary_of_separated_scores() {
        let set = set_from(&[0.1, 0.2, 0.3], &[0.7, 0.8, 0.9]);
        let s = summarize(&set).unwrap();
        assert_eq!(s.d_eer, 0.0);
        assert_eq!(s.pauc20, 0.0);
        assert_eq!(s.bonafide, 3);
        assert_eq!(s.attacks, 3);
        for (_, apcer) in &s.apcer_at {
            assert_eq!(*apcer, 0.0);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let set = set_from(&[0.1, 0.5, 0.3], &[0.4, 0.8, 0.9]);
        let a = summarize(&set).unwrap().render("test");
        let b = summarize(&set).unwrap().render("test");
        assert_eq!(a, b);
        assert!(a.contains("d_eer ="));
        assert!(a.contains("worst_species ="));
    }
}
