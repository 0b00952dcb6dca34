//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ocpad::baselines::{
    default_gamma, gmm_fit, gmm_score, latent_features, ocsvm_fit, ocsvm_score, FeatureSet,
    GmmOptions,
};
use ocpad::dataset::{self, container, GenConfig, Label, SampleSet};
use ocpad::evaluation::{
    self, det_curve, det_svg, summarize, NormStats, ScoreRecord, ScoreSet,
};
use ocpad::losses::{LossConfig, LossKind};
use ocpad::models::{self, AEArchitecture, AEModel, ArchKind, TrainOptions};
use ocpad::nn::optimizer::RmsProp;
use ocpad::{Error, Result};

use crate::config::ExperimentConfig;

fn gen_config(cfg: &ExperimentConfig) -> GenConfig {
    GenConfig {
        subjects: cfg.subjects,
        bonafide: cfg.bonafide,
        species: dataset::default_species()
            .into_iter()
            .map(|s| (s, cfg.attacks_per_species))
            .collect(),
        channels: cfg.channels,
        height: cfg.height,
        width: cfg.width,
    }
}

pub fn gen(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<()> {
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.data_dir));
    fs::create_dir_all(&out)?;
    let set = dataset::generate(&gen_config(cfg), cfg.seed)?;
    let (train, val, test) = dataset::split_by_subject(&set, 0.3, 0.2, cfg.seed)?;
    container::save(&train, &out.join("train.ocpd"))?;
    container::save(&val, &out.join("val.ocpd"))?;
    container::save(&test, &out.join("test.ocpd"))?;

    let mut manifest = String::new();
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    manifest.push_str("# dataset manifest\n");
    manifest.push_str(&format!("generated_at = {now}  # informational only\n"));
    manifest.push_str(&format!("seed = {}\n", cfg.seed));
    manifest.push_str(&format!("channels = {}\n", cfg.channels));
    manifest.push_str(&format!("height = {}\n", cfg.height));
    manifest.push_str(&format!("width = {}\n", cfg.width));
    manifest.push_str(&format!("subjects = {}\n", cfg.subjects));
    manifest.push_str("split_fractions = 0.3/0.2/0.5\n");
    for (name, split) in [("train", &train), ("val", &val), ("test", &test)] {
        manifest.push_str(&format!(
            "{name}_bonafide = {}\n{name}_attacks = {}\n",
            split.count_label(Label::BonaFide),
            split.count_label(Label::Attack)
        ));
    }
    for (species, _) in &gen_config(cfg).species {
        let count = test
            .meta()
            .iter()
            .filter(|m| m.species == species.name)
            .count();
        manifest.push_str(&format!("test_species_{} = {count}\n", species.name));
    }
    fs::write(out.join("manifest.txt"), manifest)?;
    println!(
        "wrote {} train / {} val / {} test samples to {}",
        train.len(),
        val.len(),
        test.len(),
        out.display()
    );
    Ok(())
}

fn loss_from_config(cfg: &ExperimentConfig) -> Result<LossConfig> {
    let kind = LossKind::parse(&cfg.loss)?;
    let loss = LossConfig {
        kind,
        c: cfg.c,
        alpha: cfg.alpha,
    };
    loss.validate()?;
    Ok(loss)
}

pub fn train(cfg: &ExperimentConfig, data: Option<&Path>, out: &Path) -> Result<()> {
    let data = data
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.data_dir));
    let train_set = container::load(&data.join("train.ocpd"))?;
    let val_set = container::load(&data.join("val.ocpd"))?;
    let (d, h, w) = train_set.sample_dims();
    let arch = AEArchitecture {
        kind: ArchKind::parse(&cfg.arch)?,
        channels: d,
        height: h,
        width: w,
        filters: cfg.filters,
        latent: cfg.latent,
    };
    let loss = loss_from_config(cfg)?;
    let model = AEModel::new(arch, loss, cfg.seed)?;
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch,
        opt: RmsProp {
            lr: cfg.lr,
            rho: cfg.rho,
            eps: cfg.eps,
        },
        seed: cfg.seed,
    };
    let (model, report) = models::train(model, &train_set, &val_set, &opts)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    model.save(out)?;

    let mut csv = String::from("epoch,train_loss,val_loss\n");
    csv.push_str(&format!("0,,{}\n", report.initial_val_loss));
    for e in &report.epochs {
        csv.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
    }
    fs::write(out.with_extension("losses.csv"), csv)?;
    println!(
        "trained {} ({} epochs, best epoch {}, val loss {} -> {})",
        out.display(),
        report.epochs.len(),
        report.best_epoch,
        report.initial_val_loss,
        report.best_val_loss
    );
    Ok(())
}

fn score_set_of(model: &AEModel, set: &SampleSet, jobs: usize) -> Result<ScoreSet> {
    let scores = model.score_set(set, jobs)?;
    ScoreSet::new(
        set.meta()
            .iter()
            .zip(&scores)
            .map(|(m, s)| ScoreRecord {
                sample_id: m.sample_id.clone(),
                label: m.label,
                species: m.species.clone(),
                score: *s,
            })
            .collect(),
    )
}

pub fn score(model_path: &Path, data: &Path, out: &Path, jobs: usize) -> Result<()> {
    let model = AEModel::load(model_path)?;
    let set = container::load(data)?;
    let scores = score_set_of(&model, &set, jobs)?;
    scores.save_csv(out)?;
    println!("scored {} samples -> {}", set.len(), out.display());
    Ok(())
}

pub fn latent(model_path: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = AEModel::load(model_path)?;
    let set = container::load(data)?;
    let features = latent_features(&model, &set)?;
    features.save_csv(out)?;
    println!(
        "extracted {}-dimensional latents for {} samples -> {}",
        features.dim(),
        features.len(),
        out.display()
    );
    Ok(())
}

fn d_eer_of_scores(scores: &ScoreSet) -> Result<f64> {
    Ok(evaluation::d_eer(scores)?.0)
}

pub fn fit_oc(
    cfg: &ExperimentConfig,
    kind: &str,
    features: &Path,
    score: Option<&Path>,
    tune: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let train_feats = FeatureSet::load_csv(features)?;
    let bona_rows = train_feats.rows_with_label(Label::BonaFide);
    if bona_rows.is_empty() {
        return Err(Error::Contract(
            "training features contain no bona fide rows".into(),
        ));
    }
    let target = match score {
        Some(path) => FeatureSet::load_csv(path)?,
        None => train_feats.clone(),
    };
    let tune_feats = tune.map(FeatureSet::load_csv).transpose()?;

    let scores: Vec<f64> = match kind {
        "gmm" => {
            let mut k = cfg.gmm_k;
            if let Some(tf) = &tune_feats {
                let mut best = (f64::INFINITY, k);
                for cand in [1usize, 2, 4, 8] {
                    if cand > bona_rows.len() {
                        continue;
                    }
                    let m = gmm_fit(&bona_rows, &GmmOptions { k: cand, seed: cfg.seed, ..Default::default() })?;
                    let s: Vec<f64> = (0..tf.len())
                        .map(|i| gmm_score(&m, tf.row(i)))
                        .collect::<Result<_>>()?;
                    let eer = d_eer_of_scores(&tf.score_set(&s)?)?;
                    if eer < best.0 {
                        best = (eer, cand);
                    }
                }
                k = best.1;
                println!("tuned gmm: k = {k} (D-EER {:.4})", best.0);
            }
            let model = gmm_fit(&bona_rows, &GmmOptions { k, seed: cfg.seed, ..Default::default() })?;
            (0..target.len())
                .map(|i| gmm_score(&model, target.row(i)))
                .collect::<Result<_>>()?
        }
        "svm" => {
            let dim = train_feats.dim();
            let auto = |g: f64| if g > 0.0 { g } else { default_gamma(dim) };
            let mut nu = cfg.svm_nu;
            let mut gamma = auto(cfg.svm_gamma);
            if let Some(tf) = &tune_feats {
                let mut best = (f64::INFINITY, nu, gamma);
                for cand_nu in [0.05, 0.1, 0.2, 0.5] {
                    for scale in [0.5, 1.0, 2.0] {
                        let cand_gamma = scale * default_gamma(dim);
                        let m = ocsvm_fit(&bona_rows, cand_nu, cand_gamma, cfg.seed)?;
                        let s: Vec<f64> = (0..tf.len())
                            .map(|i| ocsvm_score(&m, tf.row(i)))
                            .collect::<Result<_>>()?;
                        let eer = d_eer_of_scores(&tf.score_set(&s)?)?;
                        if eer < best.0 {
                            best = (eer, cand_nu, cand_gamma);
                        }
                    }
                }
                nu = best.1;
                gamma = best.2;
                println!("tuned svm: nu = {nu}, gamma = {gamma} (D-EER {:.4})", best.0);
            }
            let model = ocsvm_fit(&bona_rows, nu, gamma, cfg.seed)?;
            (0..target.len())
                .map(|i| ocsvm_score(&model, target.row(i)))
                .collect::<Result<_>>()?
        }
        other => {
            return Err(Error::Contract(format!(
                "unknown one-class classifier '{other}' (expected gmm or svm)"
            )))
        }
    };
    let score_set = target.score_set(&scores)?;
    score_set.save_csv(out)?;
    println!("wrote {} scores -> {}", score_set.len(), out.display());
    Ok(())
}

pub fn eval(
    scores_path: &Path,
    fuse: Option<&Path>,
    w: Option<f64>,
    norm_ref_a: Option<&Path>,
    norm_ref_b: Option<&Path>,
    out: &Path,
    svg: bool,
) -> Result<()> {
    fs::create_dir_all(out)?;
    let scores = ScoreSet::load_csv(scores_path)?;
    let mut report = summarize(&scores)?.render("scores");
    let curve = det_curve(&scores)?;
    fs::write(out.join("det.csv"), curve.to_csv())?;
    if svg {
        fs::write(out.join("det.svg"), det_svg(&curve))?;
    }

    if let Some(fuse_path) = fuse {
        let other = ScoreSet::load_csv(fuse_path)?;
        let stats_a = match norm_ref_a {
            Some(p) => NormStats::from_scores(&ScoreSet::load_csv(p)?)?,
            None => NormStats::from_scores(&scores)?,
        };
        let stats_b = match norm_ref_b {
            Some(p) => NormStats::from_scores(&ScoreSet::load_csv(p)?)?,
            None => NormStats::from_scores(&other)?,
        };
        report.push_str("\n[fusion]\n");
        report.push_str(&format!(
            "norm_reference_a = {}\n",
            norm_ref_a.map_or("self".into(), |p| p.display().to_string())
        ));
        report.push_str(&format!(
            "norm_reference_b = {}\n",
            norm_ref_b.map_or("self".into(), |p| p.display().to_string())
        ));
        report.push_str(&format!("degenerate_a = {}\n", stats_a.is_degenerate()));
        report.push_str(&format!("degenerate_b = {}\n", stats_b.is_degenerate()));

        report.push_str("\n[fusion_sweep]\n");
        for step in 0..=10 {
            let weight = step as f64 / 10.0;
            let fused = evaluation::fuse(&scores, &other, weight, &stats_a, &stats_b)?;
            let summary = summarize(&fused.scores)?;
            report.push_str(&format!(
                "w_{weight:.1}_d_eer = {:.4}%\nw_{weight:.1}_pauc20 = {:.4}%\n",
                100.0 * summary.d_eer,
                100.0 * summary.pauc20
            ));
        }

        let chosen = w.unwrap_or(0.5);
        let fused = evaluation::fuse(&scores, &other, chosen, &stats_a, &stats_b)?;
        report.push('\n');
        report.push_str(&summarize(&fused.scores)?.render(&format!("fused_w_{chosen}")));
        let fused_curve = det_curve(&fused.scores)?;
        fs::write(out.join("det_fused.csv"), fused_curve.to_csv())?;
        if svg {
            fs::write(out.join("det_fused.svg"), det_svg(&fused_curve))?;
        }
    }

    fs::write(out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}
