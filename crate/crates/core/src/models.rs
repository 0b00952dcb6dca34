//! Autoencoder architectures, bona-fide-only training, latent extraction
//! and checkpoint serialization.
//!
//! Three baseline architectures share a single conv / max-pool encoder
//! stage and a sigmoid conv output:
//!
//! * `conv`:    Conv(filters, 3x3, stride 2) -> Upsample -> Conv(d, sigmoid)
//! * `pooling`: Conv(filters, 3x3) -> MaxPool -> Upsample -> Conv(d, sigmoid)
//! * `dense`:   Conv(filters, 3x3) -> MaxPool -> Flatten -> Dense(latent)
//!              -> Dense(filters * ceil(H/2) * ceil(W/2)) -> Reshape
//!              -> Upsample -> Conv(d, sigmoid)
//!
//! Odd spatial dims round up through pooling/upsampling; a crop back to the
//! input size is inserted before the output conv when that happens.
//! Training sees bona fide samples only (an attack label is an error), uses
//! RMSprop with seeded shuffling, and returns the parameters of the epoch
//! with the lowest validation loss.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::{Label, SampleSet};
use crate::error::{Error, Result};
use crate::losses::{loss_backward, loss_forward, sample_score, LossConfig, LossKind};
use crate::nn::optimizer::{rmsprop_step, RmsProp};
use crate::nn::{self, infer_shapes, LayerParams, LayerSpec, ParamStore};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchKind {
    ConvAe,
    PoolingAe,
    DenseAe,
}

impl ArchKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ArchKind::ConvAe => "conv",
            ArchKind::PoolingAe => "pooling",
            ArchKind::DenseAe => "dense",
        }
    }

    pub fn parse(s: &str) -> Result<ArchKind> {
        match s {
            "conv" => Ok(ArchKind::ConvAe),
            "pooling" => Ok(ArchKind::PoolingAe),
            "dense" => Ok(ArchKind::DenseAe),
            other => Err(Error::Contract(format!(
                "unknown architecture '{other}' (expected conv, pooling or dense)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AEArchitecture {
    pub kind: ArchKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    /// Bottleneck width; used by the dense architecture only.
    pub latent: usize,
}

impl AEArchitecture {
    pub fn new(kind: ArchKind, channels: usize, height: usize, width: usize) -> AEArchitecture {
        AEArchitecture {
            kind,
            channels,
            height,
            width,
            filters: 12,
            latent: 64,
        }
    }

    fn half(&self) -> (usize, usize) {
        (self.height.div_ceil(2), self.width.div_ceil(2))
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.channels, 3 | 4) {
            return Err(Error::Contract(format!(
                "input channels must be 3 or 4, got {}",
                self.channels
            )));
        }
        if self.height < 2 || self.width < 2 {
            return Err(Error::Contract("input dims must be at least 2x2".into()));
        }
        if self.filters == 0 {
            return Err(Error::Contract("filter count must be >= 1".into()));
        }
        let input_dim = self.channels * self.height * self.width;
        let (hh, hw) = self.half();
        match self.kind {
            ArchKind::DenseAe => {
                if self.latent >= input_dim {
                    return Err(Error::Contract(format!(
                        "dense bottleneck {} is not undercomplete (input dimension {input_dim})",
                        self.latent
                    )));
                }
            }
            ArchKind::ConvAe | ArchKind::PoolingAe => {
                // 12 filters on 3-channel input land exactly on the input
                // dimension, so equality is allowed here.
                if self.filters * hh * hw > input_dim {
                    return Err(Error::Contract(format!(
                        "encoder dimension {} exceeds input dimension {input_dim}",
                        self.filters * hh * hw
                    )));
                }
            }
        }
        Ok(())
    }

    /// The layer chain. Ends in a sigmoid conv producing `channels` planes.
    pub fn build(&self) -> Result<Vec<LayerSpec>> {
        self.validate()?;
        let (hh, hw) = self.half();
        let needs_crop = 2 * hh != self.height || 2 * hw != self.width;
        let mut layers = Vec::new();
        match self.kind {
            ArchKind::ConvAe => {
                layers.push(LayerSpec::Conv { out_channels: self.filters, kernel: 3, stride: 2 });
                layers.push(LayerSpec::Relu);
                layers.push(LayerSpec::Upsample2);
            }
            ArchKind::PoolingAe => {
                layers.push(LayerSpec::Conv { out_channels: self.filters, kernel: 3, stride: 1 });
                layers.push(LayerSpec::Relu);
                layers.push(LayerSpec::MaxPool2);
                layers.push(LayerSpec::Upsample2);
            }
            ArchKind::DenseAe => {
                layers.push(LayerSpec::Conv { out_channels: self.filters, kernel: 3, stride: 1 });
                layers.push(LayerSpec::Relu);
                layers.push(LayerSpec::MaxPool2);
                layers.push(LayerSpec::Flatten);
                layers.push(LayerSpec::Dense { width: self.latent });
                layers.push(LayerSpec::Relu);
                layers.push(LayerSpec::Dense { width: self.filters * hh * hw });
                layers.push(LayerSpec::Relu);
                layers.push(LayerSpec::Reshape { channels: self.filters, height: hh, width: hw });
                layers.push(LayerSpec::Upsample2);
            }
        }
        if needs_crop {
            layers.push(LayerSpec::Crop { height: self.height, width: self.width });
        }
        layers.push(LayerSpec::Conv { out_channels: self.channels, kernel: 3, stride: 1 });
        layers.push(LayerSpec::Sigmoid);
        // the chain must type-check end to end
        let shapes = infer_shapes(&layers, &[1, self.channels, self.height, self.width])?;
        debug_assert_eq!(
            shapes.last().unwrap(),
            &vec![1, self.channels, self.height, self.width]
        );
        Ok(layers)
    }

    /// Number of leading layers that form the encoder. For the dense
    /// architecture this ends right after the bottleneck activation; for the
    /// others it ends after the downsampling stage.
    pub fn encoder_end(&self) -> usize {
        match self.kind {
            ArchKind::ConvAe => 2,   // conv(s2) + relu
            ArchKind::PoolingAe => 3, // conv + relu + maxpool
            ArchKind::DenseAe => 6,  // conv + relu + maxpool + flatten + dense + relu
        }
    }

    /// Width of the latent vector [`AEModel::latent`] produces.
    pub fn latent_width(&self) -> usize {
        let (hh, hw) = self.half();
        match self.kind {
            ArchKind::DenseAe => self.latent,
            ArchKind::ConvAe | ArchKind::PoolingAe => self.filters * hh * hw,
        }
    }
}

/// Training provenance carried by a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs_run: usize,
    /// Epoch whose parameters were kept; 0 means the initialization.
    pub best_epoch: usize,
    pub initial_val_loss: f64,
    pub final_val_loss: f64,
}

impl TrainMeta {
    fn fresh(seed: u64) -> TrainMeta {
        TrainMeta {
            seed,
            epochs_run: 0,
            best_epoch: 0,
            initial_val_loss: f64::NAN,
            final_val_loss: f64::NAN,
        }
    }
}

/// A trainable / serializable autoencoder.
#[derive(Clone, Debug)]
pub struct AEModel {
    pub arch: AEArchitecture,
    pub loss: LossConfig,
    pub meta: TrainMeta,
    layers: Vec<LayerSpec>,
    params: ParamStore,
}

impl AEModel {
    pub fn new(arch: AEArchitecture, loss: LossConfig, seed: u64) -> Result<AEModel> {
        loss.validate()?;
        let layers = arch.build()?;
        let params = ParamStore::init(
            &layers,
            &[1, arch.channels, arch.height, arch.width],
            derive_seed(seed, "init"),
        )?;
        Ok(AEModel {
            arch,
            loss,
            meta: TrainMeta::fresh(seed),
            layers,
            params,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.arch.channels || s[2] != self.arch.height || s[3] != self.arch.width
        {
            return Err(Error::Shape(format!(
                "input {:?} does not match model input [B, {}, {}, {}]",
                s, self.arch.channels, self.arch.height, self.arch.width
            )));
        }
        if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("model inputs must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Reconstruction of `x` (any batch size). Output shape equals the input
    /// shape with every value in [0, 1] thanks to the final sigmoid.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        nn::forward_inference(&self.layers, &self.params, x)
    }

    /// Anomaly score of one `[1, d, H, W]` sample under the configured loss.
    pub fn score(&self, x: &Tensor) -> Result<f64> {
        let xp = self.reconstruct(x)?;
        sample_score(x, &xp, &self.loss)
    }

    /// Latent representation: for the dense architecture the bottleneck
    /// vector, otherwise the flattened encoder output.
    pub fn latent(&self, x: &Tensor) -> Result<Vec<f32>> {
        self.check_input(x)?;
        if x.shape()[0] != 1 {
            return Err(Error::Shape("latent() takes a single sample".into()));
        }
        let out = nn::forward_prefix(&self.layers, &self.params, x, self.arch.encoder_end())?;
        Ok(out.into_data())
    }

    /// Scores for every sample of a set, in set order. `jobs` caps worker
    /// threads; the result does not depend on it.
    pub fn score_set(&self, set: &SampleSet, jobs: usize) -> Result<Vec<f64>> {
        let n = set.len();
        let jobs = jobs.max(1).min(n);
        let mut scores = vec![0.0f64; n];
        if jobs == 1 {
            for (i, slot) in scores.iter_mut().enumerate() {
                *slot = self.score(&set.image(i))?;
            }
            return Ok(scores);
        }
        let chunk = n.div_ceil(jobs);
        let mut failure: Option<Error> = None;
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (w, slots) in scores.chunks_mut(chunk).enumerate() {
                let start = w * chunk;
                handles.push(scope.spawn(move || -> Result<()> {
                    for (off, slot) in slots.iter_mut().enumerate() {
                        *slot = self.score(&set.image(start + off))?;
                    }
                    Ok(())
                }));
            }
            for h in handles {
                if let Err(e) = h.join().expect("scoring thread panicked") {
                    failure.get_or_insert(e);
                }
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(scores),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(self, path)
    }

    pub fn load(path: &Path) -> Result<AEModel> {
        load_checkpoint(path)
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub opt: RmsProp,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 30,
            batch_size: 32,
            opt: RmsProp::default(),
            seed: 42,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

fn require_bona_fide_only(set: &SampleSet, name: &str) -> Result<()> {
    let attacks = set.count_label(Label::Attack);
    if attacks > 0 {
        return Err(Error::Contract(format!(
            "{name} split contains {attacks} attack sample(s); one-class training reads bona fide only"
        )));
    }
    Ok(())
}

/// Validation loss of the configured loss over the whole set, evaluated as a
/// single batch (reconstruction runs in sub-batches; per-sample independence
/// makes that bit-identical to one large forward pass).
fn full_set_loss(model: &AEModel, set: &SampleSet) -> Result<f64> {
    const CHUNK: usize = 64;
    let n = set.len();
    let images = set.images();
    let mut recon: Vec<Tensor> = Vec::with_capacity(n.div_ceil(CHUNK));
    let mut i = 0;
    while i < n {
        let hi = (i + CHUNK).min(n);
        let idx: Vec<usize> = (i..hi).collect();
        let chunk = gather(images, &idx);
        recon.push(model.reconstruct(&chunk)?);
        i = hi;
    }
    let refs: Vec<&Tensor> = recon.iter().collect();
    let xp = Tensor::stack(&refs)?;
    loss_forward(images, &xp, &model.loss)
}

fn gather(images: &Tensor, indices: &[usize]) -> Tensor {
    let per = images.len() / images.shape()[0];
    let mut shape = images.shape().to_vec();
    shape[0] = indices.len();
    let mut data = Vec::with_capacity(indices.len() * per);
    for &i in indices {
        data.extend_from_slice(&images.data()[i * per..(i + 1) * per]);
    }
    Tensor::from_vec(&shape, data).expect("gather preserves element counts")
}

/// Train on bona fide data with per-epoch seeded shuffling, batched RMSprop
/// updates and best-validation parameter selection.
pub fn train(
    mut model: AEModel,
    train_set: &SampleSet,
    val_set: &SampleSet,
    opts: &TrainOptions,
) -> Result<(AEModel, TrainReport)> {
    require_bona_fide_only(train_set, "training")?;
    require_bona_fide_only(val_set, "validation")?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Contract("training and validation sets must be non-empty".into()));
    }
    model.check_input(train_set.images())?;
    model.check_input(val_set.images())?;
    if opts.batch_size == 0 {
        return Err(Error::Contract("batch size must be >= 1".into()));
    }
    opts.opt.validate()?;

    let initial_val_loss = full_set_loss(&model, val_set)?;
    let mut best_params = model.params.clone();
    let mut best_val = initial_val_loss;
    let mut best_epoch = 0usize;
    let mut epochs = Vec::with_capacity(opts.epochs);

    let mut shuffle_rng = SplitMix64::new(derive_seed(opts.seed, "shuffle"));
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=opts.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut weighted = 0.0f64;
        for batch_idx in order.chunks(opts.batch_size) {
            let x = gather(train_set.images(), batch_idx);
            let (xp, caches) = nn::forward(&model.layers, &model.params, &x)?;
            let loss = loss_forward(&x, &xp, &model.loss)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}; aborting"
                )));
            }
            weighted += loss * batch_idx.len() as f64;
            let grad_xp = loss_backward(&x, &xp, &model.loss)?;
            let (grads, _) = nn::backward(&model.layers, &model.params, &caches, &grad_xp)?;
            rmsprop_step(&mut model.params, &grads, &opts.opt)?;
        }
        let train_loss = weighted / n as f64;
        let val_loss = full_set_loss(&model, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite validation loss at epoch {epoch}; aborting"
            )));
        }
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = model.params.clone();
        }
        epochs.push(EpochStats { epoch, train_loss, val_loss });
    }

    model.params = best_params;
    model.meta = TrainMeta {
        seed: opts.seed,
        epochs_run: opts.epochs,
        best_epoch,
        initial_val_loss,
        final_val_loss: best_val,
    };
    Ok((
        model,
        TrainReport {
            initial_val_loss,
            epochs,
            best_epoch,
            best_val_loss: best_val,
        },
    ))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OCAE";
pub const CHECKPOINT_VERSION: u16 = 1;

fn header_text(model: &AEModel) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v);
        s.push('\n');
    };
    kv("arch", model.arch.kind.as_str().into());
    kv("channels", model.arch.channels.to_string());
    kv("height", model.arch.height.to_string());
    kv("width", model.arch.width.to_string());
    kv("filters", model.arch.filters.to_string());
    kv("latent", model.arch.latent.to_string());
    kv("loss", model.loss.kind.as_str().into());
    kv("c", model.loss.c.to_string());
    kv("alpha", model.loss.alpha.to_string());
    kv("seed", model.meta.seed.to_string());
    kv("init_seed", model.params.seed().to_string());
    kv("epochs_run", model.meta.epochs_run.to_string());
    kv("best_epoch", model.meta.best_epoch.to_string());
    kv("initial_val_loss", model.meta.initial_val_loss.to_string());
    kv("final_val_loss", model.meta.final_val_loss.to_string());
    s
}

fn save_checkpoint(model: &AEModel, path: &Path) -> Result<()> {
    let header = header_text(model);
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(header.as_bytes())?;
    for p in model.params.layers().iter().flatten() {
        for v in p.weights.data() {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in p.bias.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn parse_header(text: &str) -> Result<std::collections::HashMap<String, String>> {
    let mut map = std::collections::HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Format(format!("malformed checkpoint header line '{line}'")));
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn header_get<'a>(
    map: &'a std::collections::HashMap<String, String>,
    key: &str,
) -> Result<&'a str> {
    map.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| Error::Format(format!("checkpoint header misses '{key}'")))
}

fn header_parse<T: std::str::FromStr>(
    map: &std::collections::HashMap<String, String>,
    key: &str,
) -> Result<T> {
    header_get(map, key)?
        .parse()
        .map_err(|_| Error::Format(format!("checkpoint header field '{key}' is malformed")))
}

fn load_checkpoint(path: &Path) -> Result<AEModel> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut fixed = [0u8; 10];
    reader
        .read_exact(&mut fixed)
        .map_err(|_| Error::Format("checkpoint truncated inside the header".into()))?;
    if &fixed[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?} (expected \"OCAE\")",
            &fixed[0..4]
        )));
    }
    let version = u16::from_le_bytes([fixed[4], fixed[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let header_len = u32::from_le_bytes(fixed[6..10].try_into().unwrap()) as usize;
    let mut header_bytes = vec![0u8; header_len];
    reader
        .read_exact(&mut header_bytes)
        .map_err(|_| Error::Format("checkpoint truncated inside the header".into()))?;
    let header = String::from_utf8(header_bytes)
        .map_err(|_| Error::Format("checkpoint header is not valid UTF-8".into()))?;
    let map = parse_header(&header)?;

    let arch = AEArchitecture {
        kind: ArchKind::parse(header_get(&map, "arch")?)?,
        channels: header_parse(&map, "channels")?,
        height: header_parse(&map, "height")?,
        width: header_parse(&map, "width")?,
        filters: header_parse(&map, "filters")?,
        latent: header_parse(&map, "latent")?,
    };
    let loss = LossConfig {
        kind: LossKind::parse(header_get(&map, "loss")?)?,
        c: header_parse(&map, "c")?,
        alpha: header_parse(&map, "alpha")?,
    };
    loss.validate()?;
    let meta = TrainMeta {
        seed: header_parse(&map, "seed")?,
        epochs_run: header_parse(&map, "epochs_run")?,
        best_epoch: header_parse(&map, "best_epoch")?,
        initial_val_loss: header_parse(&map, "initial_val_loss")?,
        final_val_loss: header_parse(&map, "final_val_loss")?,
    };
    let init_seed: u64 = header_parse(&map, "init_seed")?;

    let layers = arch.build()?;
    let shapes = infer_shapes(&layers, &[1, arch.channels, arch.height, arch.width])?;
    let mut params: Vec<Option<LayerParams>> = Vec::with_capacity(layers.len());
    let mut cur: Vec<usize> = vec![1, arch.channels, arch.height, arch.width];
    for (layer, out_shape) in layers.iter().zip(&shapes) {
        let p = match layer {
            LayerSpec::Conv { out_channels, kernel, .. } => {
                let w_shape = [*out_channels, cur[1], *kernel, *kernel];
                Some(LayerParams {
                    weights: read_tensor(&mut reader, &w_shape)?,
                    bias: read_tensor(&mut reader, &[*out_channels])?,
                })
            }
            LayerSpec::Dense { width } => Some(LayerParams {
                weights: read_tensor(&mut reader, &[cur[1], *width])?,
                bias: read_tensor(&mut reader, &[*width])?,
            }),
            _ => None,
        };
        params.push(p);
        cur = out_shape.clone();
    }
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(Error::Format("checkpoint has trailing bytes after the parameters".into()));
    }

    Ok(AEModel {
        arch,
        loss,
        meta,
        layers,
        params: ParamStore::from_parts(init_seed, params),
    })
}

fn read_tensor(reader: &mut impl Read, shape: &[usize]) -> Result<Tensor> {
    let len: usize = shape.iter().product();
    let mut raw = vec![0u8; len * 4];
    reader
        .read_exact(&mut raw)
        .map_err(|_| Error::Format("checkpoint truncated inside the parameters".into()))?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::from_vec(shape, data)
}
