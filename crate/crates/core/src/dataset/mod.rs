//! Synthetic multi-channel fingertip samples, subject-disjoint splitting and
//! a binary sample container.
//!
//! Bona fide samples are sinusoidal ridge patterns with per-subject
//! frequency, orientation and phase; channel base intensity decreases with
//! the channel index (longer wavelengths reflect darker) and 3-channel
//! samples get a radial vignette around the illumination spot. Attack
//! species distort that rendering: per-channel reflectance multipliers,
//! ridge frequency/orientation jitter, extra noise, and either full coverage
//! or an overlay blended at some opacity.
//!
//! Generation is deterministic per seed; every sample draws from its own
//! splitmix64 stream, so samples can be produced in any order (or in
//! parallel) without changing a single byte.

pub mod container;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, mix, SplitMix64};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    BonaFide,
    Attack,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::BonaFide => "bonafide",
            Label::Attack => "attack",
        }
    }

    pub fn parse(s: &str) -> Result<Label> {
        match s {
            "bonafide" => Ok(Label::BonaFide),
            "attack" => Ok(Label::Attack),
            other => Err(Error::Format(format!("unknown label '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    pub sample_id: String,
    pub subject_id: u32,
    pub label: Label,
    pub species: String,
}

/// A labeled collection of multi-channel images, `[N, d, H, W]` in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    images: Tensor,
    meta: Vec<SampleMeta>,
}

impl SampleSet {
    pub fn new(images: Tensor, meta: Vec<SampleMeta>) -> Result<SampleSet> {
        let shape = images.shape();
        if shape.len() != 4 {
            return Err(Error::Shape(format!(
                "sample set images must be [N, d, H, W], got {shape:?}"
            )));
        }
        if shape[0] != meta.len() {
            return Err(Error::Shape(format!(
                "{} images but {} metadata records",
                shape[0],
                meta.len()
            )));
        }
        if !matches!(shape[1], 3 | 4) {
            return Err(Error::Contract(format!(
                "channel count must be 3 or 4, got {}",
                shape[1]
            )));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("image values must lie in [0, 1]".into()));
        }
        let mut ids: Vec<&str> = meta.iter().map(|m| m.sample_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Contract("sample ids must be unique".into()));
        }
        for m in &meta {
            if m.label == Label::BonaFide && m.species != "bonafide" {
                return Err(Error::Contract(format!(
                    "bona fide sample {} must carry species 'bonafide', got '{}'",
                    m.sample_id, m.species
                )));
            }
        }
        Ok(SampleSet { images, meta })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn meta(&self) -> &[SampleMeta] {
        &self.meta
    }

    /// `(d, H, W)` dims of one sample.
    pub fn sample_dims(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// Image `i` as a `[1, d, H, W]` tensor.
    pub fn image(&self, i: usize) -> Tensor {
        self.images.sample(i)
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.meta.iter().filter(|m| m.label == label).count()
    }

    /// Subset by metadata index list (keeps order).
    pub fn subset(&self, indices: &[usize]) -> Result<SampleSet> {
        if indices.is_empty() {
            return Err(Error::Contract("cannot build an empty sample subset".into()));
        }
        let samples: Vec<Tensor> = indices.iter().map(|&i| self.images.sample(i)).collect();
        let refs: Vec<&Tensor> = samples.iter().collect();
        let images = Tensor::stack(&refs)?;
        let meta = indices.iter().map(|&i| self.meta[i].clone()).collect();
        SampleSet::new(images, meta)
    }
}

/// How one attack species distorts the bona fide rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeciesSpec {
    pub name: String,
    /// Per-channel reflectance multipliers (first `d` entries used).
    pub reflectance: [f32; 4],
    /// Ridge frequency multiplier relative to the bona fide pattern.
    pub freq_mult: f32,
    /// Extra ridge orientation jitter in radians.
    pub orient_jitter: f32,
    /// Additive Gaussian noise sigma.
    pub noise: f32,
    pub coverage: Coverage,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coverage {
    Full,
    Overlay { opacity: f32 },
}

impl SpeciesSpec {
    pub fn validate(&self) -> Result<()> {
        if self.reflectance.iter().any(|r| *r <= 0.0) {
            return Err(Error::Contract(format!(
                "species '{}': reflectance multipliers must be > 0",
                self.name
            )));
        }
        if let Coverage::Overlay { opacity } = self.coverage {
            if !(opacity > 0.0 && opacity <= 1.0) {
                return Err(Error::Contract(format!(
                    "species '{}': overlay opacity must be in (0, 1], got {opacity}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// The four default species, one per PAI group.
pub fn default_species() -> Vec<SpeciesSpec> {
    vec![
        SpeciesSpec {
            name: "fakefinger".into(),
            reflectance: [0.52, 0.62, 0.55, 0.70],
            freq_mult: 1.9,
            orient_jitter: 0.5,
            noise: 0.03,
            coverage: Coverage::Full,
        },
        SpeciesSpec {
            name: "overlay_opaque".into(),
            reflectance: [0.64, 0.58, 0.72, 0.60],
            freq_mult: 1.5,
            orient_jitter: 0.35,
            noise: 0.025,
            coverage: Coverage::Overlay { opacity: 0.85 },
        },
        SpeciesSpec {
            name: "overlay_transparent".into(),
            reflectance: [0.78, 0.82, 0.75, 0.85],
            freq_mult: 1.25,
            orient_jitter: 0.2,
            noise: 0.02,
            coverage: Coverage::Overlay { opacity: 0.45 },
        },
        SpeciesSpec {
            name: "overlay_semi".into(),
            reflectance: [0.70, 0.66, 0.74, 0.72],
            freq_mult: 1.6,
            orient_jitter: 0.3,
            noise: 0.02,
            coverage: Coverage::Overlay { opacity: 0.65 },
        },
    ]
}

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub subjects: u32,
    pub bonafide: usize,
    /// (species, sample count) pairs.
    pub species: Vec<(SpeciesSpec, usize)>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl GenConfig {
    /// Desk-scale defaults: 32x96 keeps the sensor's 1:3 aspect ratio while
    /// running in seconds.
    pub fn default_desk(channels: usize) -> GenConfig {
        GenConfig {
            subjects: 50,
            bonafide: 1000,
            species: default_species().into_iter().map(|s| (s, 100)).collect(),
            channels,
            height: 32,
            width: 96,
        }
    }
}

const NOISE_SIGMA: f32 = 0.02;

/// Deterministic per-subject ridge parameters.
struct SubjectParams {
    freq: f32,
    orient: f32,
    phase: f32,
}

fn subject_params(dataset_seed: u64, subject: u32) -> SubjectParams {
    let mut rng = SplitMix64::new(mix(dataset_seed, 0x5343_0000 + subject as u64));
    // phase varies freely across subjects; frequency and orientation only
    // slightly, so unseen subjects stay on the bona fide manifold
    SubjectParams {
        freq: rng.uniform(0.97, 1.03),
        orient: rng.uniform(-0.08, 0.08),
        phase: rng.uniform(0.0, std::f32::consts::TAU),
    }
}

/// Render one sample into `out` (len d*H*W): ridge pattern, channel scaling,
/// a vignette for 3-channel data, additive noise, clamp to [0, 1].
fn render_sample(
    out: &mut [f32],
    rng: &mut SplitMix64,
    subject: &SubjectParams,
    species: Option<&SpeciesSpec>,
    channels: usize,
    height: usize,
    width: usize,
) {
    // per-sample jitter around the subject's ridge parameters
    let freq_jitter = rng.uniform(0.99, 1.01);
    let phase_jitter = rng.uniform(-0.3, 0.3);
    let (freq_mult, orient_extra, noise, refl, opacity) = match species {
        None => (1.0, 0.0, NOISE_SIGMA, [1.0f32; 4], 1.0),
        Some(s) => {
            let jitter = rng.uniform(-s.orient_jitter, s.orient_jitter);
            let op = match s.coverage {
                Coverage::Full => 1.0,
                Coverage::Overlay { opacity } => opacity,
            };
            (s.freq_mult, jitter, s.noise, s.reflectance, op)
        }
    };

    let base_freq = 8.0 * subject.freq * freq_jitter; // ridges per image height
    let bona_orient = subject.orient;
    let attack_orient = subject.orient + orient_extra;
    let cy = (height as f32 - 1.0) / 2.0;
    let cx = (width as f32 - 1.0) / 2.0;
    let r0 = 0.75 * cx.max(cy);

    for c in 0..channels {
        let base = 0.82 - 0.30 * c as f32 / (channels - 1).max(1) as f32;
        let refl_c = refl[c];
        for y in 0..height {
            for x in 0..width {
                let fy = y as f32 / height as f32;
                let fx = x as f32 / height as f32; // same spatial scale on both axes
                let ridge_at = |orient: f32, fmult: f32| -> f32 {
                    let u = fx * orient.cos() + fy * orient.sin();
                    0.5 + 0.5
                        * (std::f32::consts::TAU * base_freq * fmult * u
                            + subject.phase
                            + phase_jitter)
                            .sin()
                };
                let bona = base * (0.62 + 0.38 * ridge_at(bona_orient, 1.0));
                let mut v = if species.is_some() {
                    let attack = base * refl_c * (0.62 + 0.38 * ridge_at(attack_orient, freq_mult));
                    (1.0 - opacity) * bona + opacity * attack
                } else {
                    bona
                };
                if channels == 3 {
                    // illumination spot of the laser source
                    let dy = (y as f32 - cy) / r0;
                    let dx = (x as f32 - cx) / r0;
                    let vignette = (1.1 - 0.75 * (dy * dy + dx * dx)).clamp(0.2, 1.0);
                    v *= vignette;
                }
                v += rng.normal_f32(0.0, noise);
                out[(c * height + y) * width + x] = v.clamp(0.0, 1.0);
            }
        }
    }
}

/// Generate a deterministic synthetic sample set.
///
/// Bona fide samples cycle over `subjects` subject ids; each attack species
/// gets its own disjoint donor subject ids so that routing all attacks to
/// the test split keeps the partition subject-disjoint.
pub fn generate(config: &GenConfig, seed: u64) -> Result<SampleSet> {
    if config.subjects == 0 {
        return Err(Error::Contract("generator needs at least one subject".into()));
    }
    if !matches!(config.channels, 3 | 4) {
        return Err(Error::Contract(format!(
            "channel count must be 3 or 4, got {}",
            config.channels
        )));
    }
    if config.height < 4 || config.width < 4 {
        return Err(Error::Contract("image dims must be at least 4x4".into()));
    }
    for (spec, _) in &config.species {
        spec.validate()?;
    }
    let dataset_seed = derive_seed(seed, "dataset");
    let per = config.channels * config.height * config.width;
    let total = config.bonafide + config.species.iter().map(|(_, n)| n).sum::<usize>();
    if total == 0 {
        return Err(Error::Contract("generator invoked with zero samples".into()));
    }

    let mut data = vec![0.0f32; total * per];
    let mut meta = Vec::with_capacity(total);

    let mut index = 0usize;
    for k in 0..config.bonafide {
        let subject = (k % config.subjects as usize) as u32;
        let sp = subject_params(dataset_seed, subject);
        let mut rng = SplitMix64::new(mix(dataset_seed, index as u64));
        render_sample(
            &mut data[index * per..(index + 1) * per],
            &mut rng,
            &sp,
            None,
            config.channels,
            config.height,
            config.width,
        );
        meta.push(SampleMeta {
            sample_id: format!("bf_{k:05}"),
            subject_id: subject,
            label: Label::BonaFide,
            species: "bonafide".into(),
        });
        index += 1;
    }

    // attack donors: disjoint subject-id range after the bona fide subjects
    let donors_per_species = 5u32;
    for (s_idx, (spec, count)) in config.species.iter().enumerate() {
        for k in 0..*count {
            let subject = config.subjects
                + s_idx as u32 * donors_per_species
                + (k as u32 % donors_per_species);
            let sp = subject_params(dataset_seed, subject);
            let mut rng = SplitMix64::new(mix(dataset_seed, index as u64));
            render_sample(
                &mut data[index * per..(index + 1) * per],
                &mut rng,
                &sp,
                Some(spec),
                config.channels,
                config.height,
                config.width,
            );
            meta.push(SampleMeta {
                sample_id: format!("pa_{}_{k:05}", spec.name),
                subject_id: subject,
                label: Label::Attack,
                species: spec.name.clone(),
            });
            index += 1;
        }
    }

    let images = Tensor::from_vec(
        &[total, config.channels, config.height, config.width],
        data,
    )?;
    SampleSet::new(images, meta)
}

/// Subject-disjoint split.
///
/// Subjects owning bona fide samples are shuffled by seed and partitioned
/// floor(f_train * n) / floor(f_val * n) / remainder. Train and validation
/// keep only bona fide samples; every attack sample lands in the test split.
/// A subject owning both bona fide and attack samples cannot satisfy both
/// constraints at once and is rejected.
pub fn split_by_subject(
    set: &SampleSet,
    f_train: f64,
    f_val: f64,
    seed: u64,
) -> Result<(SampleSet, SampleSet, SampleSet)> {
    let f_test = 1.0 - f_train - f_val;
    if f_train <= 0.0 || f_val <= 0.0 || f_test <= 0.0 {
        return Err(Error::Contract(format!(
            "split fractions must be positive and sum to 1, got {f_train}/{f_val}/{f_test}"
        )));
    }

    let mut bona_subjects: Vec<u32> = Vec::new();
    let mut attack_subjects: Vec<u32> = Vec::new();
    for m in set.meta() {
        match m.label {
            Label::BonaFide => bona_subjects.push(m.subject_id),
            Label::Attack => attack_subjects.push(m.subject_id),
        }
    }
    bona_subjects.sort_unstable();
    bona_subjects.dedup();
    attack_subjects.sort_unstable();
    attack_subjects.dedup();
    if let Some(shared) = bona_subjects
        .iter()
        .find(|s| attack_subjects.binary_search(s).is_ok())
    {
        return Err(Error::Contract(format!(
            "subject {shared} owns both bona fide and attack samples; \
             a subject-disjoint split with all attacks in test is impossible"
        )));
    }
    let n = bona_subjects.len();
    if n < 3 {
        return Err(Error::Contract(format!(
            "need at least 3 bona fide subjects to split, got {n}"
        )));
    }

    let mut order = bona_subjects;
    let mut rng = SplitMix64::new(derive_seed(seed, "split"));
    rng.shuffle(&mut order);
    let n_train = (f_train * n as f64).floor() as usize;
    let n_val = (f_val * n as f64).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Contract(format!(
            "split of {n} subjects leaves an empty partition ({n_train}/{n_val}/{})",
            n.saturating_sub(n_train + n_val)
        )));
    }
    let train_subjects: std::collections::HashSet<u32> =
        order[..n_train].iter().copied().collect();
    let val_subjects: std::collections::HashSet<u32> =
        order[n_train..n_train + n_val].iter().copied().collect();

    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (i, m) in set.meta().iter().enumerate() {
        match m.label {
            Label::Attack => test_idx.push(i),
            Label::BonaFide => {
                if train_subjects.contains(&m.subject_id) {
                    train_idx.push(i);
                } else if val_subjects.contains(&m.subject_id) {
                    val_idx.push(i);
                } else {
                    test_idx.push(i);
                }
            }
        }
    }
    Ok((
        set.subset(&train_idx)?,
        set.subset(&val_idx)?,
        set.subset(&test_idx)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> GenConfig {
        GenConfig {
            subjects: 10,
            bonafide: 40,
            species: default_species().into_iter().map(|s| (s, 5)).collect(),
            channels: 4,
            height: 8,
            width: 24,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_config();
        let a = generate(&cfg, 7).unwrap();
        let b = generate(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = generate(&cfg, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn values_stay_in_unit_interval() {
        let set = generate(&small_config(), 3).unwrap();
        assert!(set.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn laser_variant_has_three_channels_and_vignette() {
        let mut cfg = small_config();
        cfg.channels = 3;
        let set = generate(&cfg, 3).unwrap();
        assert_eq!(set.sample_dims().0, 3);
        // center brighter than corner on average over bona fide samples
        let (d, h, w) = set.sample_dims();
        let mut center = 0.0f64;
        let mut corner = 0.0f64;
        let mut count = 0usize;
        for (i, m) in set.meta().iter().enumerate() {
            if m.label != Label::BonaFide {
                continue;
            }
            let img = set.image(i);
            for c in 0..d {
                center += img.at4(0, c, h / 2, w / 2) as f64;
                corner += img.at4(0, c, 0, 0) as f64;
                count += 1;
            }
        }
        assert!(center / count as f64 > corner / count as f64 + 0.05);
    }

    #[test]
    fn strong_species_shifts_channel_means_beyond_noise() {
        // reflectance x0.3 full-coverage species vs bona fide means
        let strong = SpeciesSpec {
            name: "strong".into(),
            reflectance: [0.3; 4],
            freq_mult: 1.0,
            orient_jitter: 0.0,
            noise: NOISE_SIGMA,
            coverage: Coverage::Full,
        };
        let cfg = GenConfig {
            subjects: 20,
            bonafide: 500,
            species: vec![(strong, 500)],
            channels: 4,
            height: 8,
            width: 24,
        };
        let set = generate(&cfg, 42).unwrap();
        let (d, h, w) = set.sample_dims();
        let per_channel = h * w;
        let mut bona = vec![0.0f64; d];
        let mut attack = vec![0.0f64; d];
        let (mut nb, mut na) = (0usize, 0usize);
        for (i, m) in set.meta().iter().enumerate() {
            let img = set.image(i);
            let sums: Vec<f64> = (0..d)
                .map(|c| {
                    img.data()[c * per_channel..(c + 1) * per_channel]
                        .iter()
                        .map(|v| *v as f64)
                        .sum::<f64>()
                        / per_channel as f64
                })
                .collect();
            match m.label {
                Label::BonaFide => {
                    for c in 0..d {
                        bona[c] += sums[c];
                    }
                    nb += 1;
                }
                Label::Attack => {
                    for c in 0..d {
                        attack[c] += sums[c];
                    }
                    na += 1;
                }
            }
        }
        for c in 0..d {
            let diff = (bona[c] / nb as f64 - attack[c] / na as f64).abs();
            assert!(
                diff > 3.0 * NOISE_SIGMA as f64,
                "channel {c}: mean shift {diff} not beyond 3 sigma"
            );
        }
    }

    #[test]
    fn split_counts_follow_rounding_rule() {
        let cfg = small_config();
        let set = generate(&cfg, 7).unwrap();
        let (train, val, test) = split_by_subject(&set, 0.3, 0.2, 7).unwrap();
        let subjects = |s: &SampleSet| {
            let mut v: Vec<u32> = s
                .meta()
                .iter()
                .filter(|m| m.label == Label::BonaFide)
                .map(|m| m.subject_id)
                .collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        // 10 subjects -> floor(3)/floor(2)/remainder 5
        assert_eq!(subjects(&train).len(), 3);
        assert_eq!(subjects(&val).len(), 2);
        assert_eq!(subjects(&test).len(), 5);
    }

    #[test]
    fn split_is_a_subject_disjoint_partition() {
        let set = generate(&small_config(), 11).unwrap();
        let (train, val, test) = split_by_subject(&set, 0.3, 0.2, 5).unwrap();
        assert_eq!(train.len() + val.len() + test.len(), set.len());
        // no attacks outside test
        assert_eq!(train.count_label(Label::Attack), 0);
        assert_eq!(val.count_label(Label::Attack), 0);
        assert_eq!(test.count_label(Label::Attack), 20);
        // ids partition the input
        let mut ids: Vec<&str> = train
            .meta()
            .iter()
            .chain(val.meta())
            .chain(test.meta())
            .map(|m| m.sample_id.as_str())
            .collect();
        ids.sort_unstable();
        let mut orig: Vec<&str> = set.meta().iter().map(|m| m.sample_id.as_str()).collect();
        orig.sort_unstable();
        assert_eq!(ids, orig);
        // pairwise subject-disjoint
        let subj = |s: &SampleSet| -> std::collections::HashSet<u32> {
            s.meta().iter().map(|m| m.subject_id).collect()
        };
        let (a, b, c) = (subj(&train), subj(&val), subj(&test));
        assert!(a.is_disjoint(&b));
        assert!(a.is_disjoint(&c));
        assert!(b.is_disjoint(&c));
    }

    #[test]
    fn split_is_deterministic() {
        let set = generate(&small_config(), 11).unwrap();
        let a = split_by_subject(&set, 0.3, 0.2, 9).unwrap();
        let b = split_by_subject(&set, 0.3, 0.2, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_rejects_bad_fractions_and_tiny_sets() {
        let set = generate(&small_config(), 11).unwrap();
        assert!(split_by_subject(&set, 0.5, 0.5, 1).is_err());
        let mut cfg = small_config();
        cfg.subjects = 2;
        cfg.bonafide = 4;
        cfg.species.clear();
        let tiny = generate(&cfg, 1).unwrap();
        assert!(split_by_subject(&tiny, 0.3, 0.2, 1).is_err());
    }

    #[test]
    fn split_rejects_mixed_ownership_subjects() {
        let cfg = small_config();
        let set = generate(&cfg, 7).unwrap();
        // forge an attack sample onto a bona fide subject
        let mut meta = set.meta().to_vec();
        let bona_subject = meta
            .iter()
            .find(|m| m.label == Label::BonaFide)
            .unwrap()
            .subject_id;
        let attack_pos = meta.iter().position(|m| m.label == Label::Attack).unwrap();
        meta[attack_pos].subject_id = bona_subject;
        let forged = SampleSet::new(set.images().clone(), meta).unwrap();
        let err = split_by_subject(&forged, 0.3, 0.2, 1).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn generator_rejects_degenerate_configs() {
        let mut cfg = small_config();
        cfg.subjects = 0;
        assert!(generate(&cfg, 1).is_err());
        let mut cfg = small_config();
        cfg.channels = 5;
        assert!(generate(&cfg, 1).is_err());
        let mut cfg = small_config();
        cfg.bonafide = 0;
        cfg.species.clear();
        assert!(generate(&cfg, 1).is_err());
    }
}
