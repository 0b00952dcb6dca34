//! Flat key = value experiment configuration.
//!
//! One `key = value` per line, `#` starts a comment, every field has a
//! default, flags override file values. A serialized config parses back to
//! the same value and a canonical file round-trips byte-identically.

use ocpad::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    // dataset
    pub data_dir: String,
    pub seed: u64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub subjects: u32,
    pub bonafide: usize,
    pub attacks_per_species: usize,
    // architecture
    pub arch: String,
    pub filters: usize,
    pub latent: usize,
    // loss
    pub loss: String,
    pub c: f32,
    pub alpha: f32,
    // optimizer
    pub lr: f32,
    pub rho: f32,
    pub eps: f32,
    pub batch: usize,
    pub epochs: usize,
    // baselines
    pub gmm_k: usize,
    pub svm_nu: f64,
    /// 0 means "auto" (1 / feature dimension on standardized features).
    pub svm_gamma: f64,
    // output
    pub out_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_dir: "data".into(),
            seed: 42,
            channels: 4,
            height: 32,
            width: 96,
            subjects: 50,
            bonafide: 1000,
            attacks_per_species: 100,
            arch: "dense".into(),
            filters: 12,
            latent: 64,
            loss: "wmse".into(),
            c: 1.8,
            alpha: 1.0,
            lr: 1e-3,
            rho: 0.9,
            eps: 1e-7,
            batch: 32,
            epochs: 30,
            gmm_k: 4,
            svm_nu: 0.1,
            svm_gamma: 0.0,
            out_dir: "out".into(),
        }
    }
}

macro_rules! config_fields {
    ($macro_cb:ident) => {
        $macro_cb! {
            data_dir, seed, channels, height, width, subjects, bonafide,
            attacks_per_species, arch, filters, latent, loss, c, alpha, lr,
            rho, eps, batch, epochs, gmm_k, svm_nu, svm_gamma, out_dir
        }
    };
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Contract(format!(
                    "config line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value).map_err(|e| {
                Error::Contract(format!("config line {}: {e}", lineno + 1))
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! assign {
            ($($field:ident),* $(,)?) => {
                match key {
                    $(stringify!($field) => {
                        self.$field = value.parse().map_err(|_| {
                            Error::Contract(format!(
                                "bad value '{value}' for '{key}'"
                            ))
                        })?;
                    })*
                    other => {
                        return Err(Error::Contract(format!("unknown config key '{other}'")))
                    }
                }
            };
        }
        config_fields!(assign);
        Ok(())
    }

    /// Canonical rendering; `parse(serialize(c)) == c` and serializing a
    /// canonical file reproduces it byte for byte.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        macro_rules! emit {
            ($($field:ident),* $(,)?) => {
                $(s.push_str(&format!("{} = {}\n", stringify!($field), self.$field));)*
            };
        }
        config_fields!(emit);
        s
    }
}
