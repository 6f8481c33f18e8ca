//! Training loop: weighted binary cross-entropy, Adam, per-epoch
//! checkpointing and fully seeded data loading/augmentation.
//!
//! Batches are processed as micro-batches whose gradients accumulate before
//! each optimizer step, keeping peak memory flat on small machines. Batch-norm
//! statistics are computed per micro-batch.

use ndarray::{Array1, ArrayD, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

use crate::augment::{augment_audio, augment_video, spec_augment, AugmentPolicy};
use crate::backbones::{save_checkpoint, Arch, CheckpointHeader, Modality, Model};
use crate::data::{derive_seed, read_video, read_wav, SampleRecord};
use crate::error::{Error, Result};
use crate::features;
use crate::nn::adam::Adam;
use crate::nn::{zero_grads, Scalar};

pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: String,
    pub modality: String,
    pub batch_size: usize,
    /// Samples per forward/backward pass; gradients accumulate up to
    /// `batch_size` before each optimizer step.
    pub microbatch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub w_neg: f64,
    pub w_pos: f64,
    pub seed: u64,
    /// Decision threshold used for the per-epoch dev WWS readout.
    pub threshold: f64,
    /// Stop once dev WWS (percent) drops to this value or below.
    pub early_stop_wws: Option<f64>,
    pub augment: AugmentPolicy,
    pub sa_freq_masks: usize,
    pub sa_max_f: usize,
    pub sa_time_masks: usize,
    pub sa_max_t: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: "hybrid-simam".into(),
            modality: "audio".into(),
            batch_size: 64,
            microbatch: 4,
            lr: 0.001,
            epochs: 50,
            w_neg: 5.0,
            w_pos: 1.0,
            seed: 0,
            threshold: 0.5,
            early_stop_wws: None,
            augment: AugmentPolicy::default(),
            sa_freq_masks: 2,
            sa_max_f: 10,
            sa_time_masks: 2,
            sa_max_t: 25,
        }
    }
}

/// Parses flat `key = value` text; `#` starts a comment.
pub fn parse_kv(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::parse(path, i + 1, format!("expected `key = value`, got `{line}`"))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

impl TrainConfig {
    pub fn from_kv(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (key, value) in pairs {
            let bad = |e: String| Error::validation(format!("config key `{key}`: {e}"));
            macro_rules! set {
                ($field:expr) => {
                    $field = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?
                };
            }
            macro_rules! set_int {
                ($field:expr) => {
                    $field = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
                };
            }
            match key.as_str() {
                "arch" => cfg.arch = value.clone(),
                "modality" => cfg.modality = value.clone(),
                "batch_size" => set_int!(cfg.batch_size),
                "microbatch" => set_int!(cfg.microbatch),
                "lr" => set!(cfg.lr),
                "epochs" => set_int!(cfg.epochs),
                "w_neg" => set!(cfg.w_neg),
                "w_pos" => set!(cfg.w_pos),
                "seed" => set_int!(cfg.seed),
                "threshold" => set!(cfg.threshold),
                "early_stop_wws" => {
                    cfg.early_stop_wws =
                        Some(value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?)
                }
                "sa_freq_masks" => set_int!(cfg.sa_freq_masks),
                "sa_max_f" => set_int!(cfg.sa_max_f),
                "sa_time_masks" => set_int!(cfg.sa_time_masks),
                "sa_max_t" => set_int!(cfg.sa_max_t),
                "aug_nr" => set!(cfg.augment.nr),
                "aug_ns" => set!(cfg.augment.ns),
                "aug_vp" => set!(cfg.augment.vp),
                "aug_sp" => set!(cfg.augment.sp),
                "aug_ts" => set!(cfg.augment.ts),
                "aug_sa" => set!(cfg.augment.sa),
                "aug_video_speed" => set!(cfg.augment.video_speed),
                "aug_video_rotate" => set!(cfg.augment.video_rotate),
                "aug_video_hflip" => set!(cfg.augment.video_hflip),
                "aug_video_crop" => set!(cfg.augment.video_crop),
                "aug_video_color_jitter" => set!(cfg.augment.video_color_jitter),
                "aug_video_gray" => set!(cfg.augment.video_gray),
                _ => return Err(Error::validation(format!("unknown config key `{key}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&parse_kv(&text, path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.microbatch == 0 {
            return Err(Error::validation("batch_size and microbatch must be >= 1"));
        }
        if self.lr <= 0.0 {
            return Err(Error::validation("lr must be positive"));
        }
        if self.w_neg <= 0.0 || self.w_pos <= 0.0 {
            return Err(Error::validation("loss weights must be positive"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::validation("threshold must be in [0, 1]"));
        }
        Arch::from_str(&self.arch)?;
        Modality::from_str(&self.modality)?;
        self.augment.validate()
    }

    pub fn arch_enum(&self) -> Arch {
        Arch::from_str(&self.arch).expect("validated")
    }

    pub fn modality_enum(&self) -> Modality {
        Modality::from_str(&self.modality).expect("validated")
    }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Mean of -[w_pos*y*ln p + w_neg*(1-y)*ln(1-p)] with p clamped to
/// [1e-7, 1-1e-7].
pub fn weighted_bce<F: Scalar>(probs: &[F], labels: &[u8], w_pos: f64, w_neg: f64) -> Result<F> {
    Ok(weighted_bce_with_grad(probs, labels, w_pos, w_neg)?.0)
}

/// Loss plus d(loss)/d(prob) per sample (already divided by the count).
pub fn weighted_bce_with_grad<F: Scalar>(
    probs: &[F],
    labels: &[u8],
    w_pos: f64,
    w_neg: f64,
) -> Result<(F, Vec<F>)> {
    if probs.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} probabilities vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let lo = F::from_f64(PROB_EPS);
    let hi = F::from_f64(1.0 - PROB_EPS);
    let wp = F::from_f64(w_pos);
    let wn = F::from_f64(w_neg);
    let inv_n = F::from_f64(1.0 / probs.len() as f64);
    let mut loss = F::zero();
    let mut grads = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.max(lo).min(hi);
        if y == 1 {
            loss = loss - wp * p.ln();
            grads.push(-wp / p * inv_n);
        } else {
            loss = loss - wn * (F::one() - p).ln();
            grads.push(wn / (F::one() - p) * inv_n);
        }
    }
    Ok((loss * inv_n, grads))
}

// ---------------------------------------------------------------------------
// Sample loading
// ---------------------------------------------------------------------------

/// Loads one sample and produces the per-sample model input tensor.
/// In training mode, augmentations fire according to the policy with all
/// randomness derived from (config seed, sample id, epoch).
pub fn prepare_input(
    root: &Path,
    rec: &SampleRecord,
    arch: Arch,
    modality: Modality,
    cfg: &TrainConfig,
    epoch: usize,
    train_mode: bool,
) -> Result<ArrayD<f32>> {
    let sample_seed = derive_seed(cfg.seed, &rec.id, epoch as u64);
    match modality {
        Modality::Audio => {
            let path = root.join(&rec.audio_path);
            let (mut wave, sr) = read_wav(&path)?;
            if train_mode {
                wave = augment_audio(
                    &wave,
                    rec.is_positive(),
                    sr,
                    &cfg.augment,
                    derive_seed(sample_seed, "audio", 0),
                )?;
            }
            let spec = features::compute_fbank(&wave, sr)?;
            let mut spec = features::normalize_time(&spec, features::TARGET_FRAMES)?;
            if train_mode {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(sample_seed, "sa", 0));
                if rng.gen_bool(cfg.augment.sa) {
                    spec = spec_augment(
                        &spec,
                        cfg.sa_freq_masks,
                        cfg.sa_max_f,
                        cfg.sa_time_masks,
                        cfg.sa_max_t,
                        rng.gen(),
                    )?;
                }
            }
            match arch {
                Arch::Res2d34 => {
                    // the normalized spectrogram as a one-channel image
                    let mut out =
                        ArrayD::<f32>::zeros(IxDyn(&[1, features::TARGET_FRAMES, features::MEL_BINS]));
                    for ((t, m), &v) in spec.data.indexed_iter() {
                        out[[0, t, m]] = v as f32;
                    }
                    Ok(out)
                }
                _ => Ok(features::tensorize_windows(&spec)?.to_model_input()),
            }
        }
        Modality::Video => {
            let path = root.join(&rec.video_path);
            let mut clip = read_video(&path)?;
            if train_mode {
                clip = augment_video(&clip, &cfg.augment, derive_seed(sample_seed, "video", 0))?;
            }
            Ok(features::sample_video_frames(&clip)?.to_model_input())
        }
    }
}

fn stack_inputs(inputs: &[ArrayD<f32>]) -> ArrayD<f32> {
    let mut shape = vec![inputs.len()];
    shape.extend_from_slice(inputs[0].shape());
    let mut out = ArrayD::<f32>::zeros(IxDyn(&shape));
    for (i, x) in inputs.iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(x);
    }
    out
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    /// Percent; absent when the dev split has only one class.
    pub dev_wws: Option<f64>,
    pub checkpoint: PathBuf,
}

/// Mean loss (and optionally WWS) of a model over a record list, eval mode.
pub fn evaluate_split(
    model: &mut Model<f32>,
    root: &Path,
    records: &[SampleRecord],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<(f64, bool)>)> {
    let mut scores = Vec::with_capacity(records.len());
    let mut loss_sum = 0.0;
    for chunk in records.chunks(cfg.microbatch) {
        let inputs: Vec<ArrayD<f32>> = chunk
            .iter()
            .map(|r| prepare_input(root, r, model.arch, model.modality, cfg, 0, false))
            .collect::<Result<_>>()?;
        let x = stack_inputs(&inputs);
        let probs = model.forward(&x, false)?;
        let labels: Vec<u8> = chunk.iter().map(|r| r.label).collect();
        let loss = weighted_bce(probs.as_slice().unwrap(), &labels, cfg.w_pos, cfg.w_neg)?;
        loss_sum += loss as f64 * chunk.len() as f64;
        for (p, r) in probs.iter().zip(chunk) {
            scores.push((*p as f64, r.is_positive()));
        }
    }
    Ok((loss_sum / records.len() as f64, scores))
}

/// Trains in place, writing one checkpoint per epoch under `out_dir` and
/// returning the per-epoch statistics. Stops early once `early_stop_wws` is
/// reached on the dev split.
pub fn train(
    model: &mut Model<f32>,
    root: &Path,
    train_recs: &[SampleRecord],
    dev_recs: &[SampleRecord],
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<Vec<EpochStats>> {
    if train_recs.is_empty() {
        return Err(Error::validation("training split is empty"));
    }
    if dev_recs.is_empty() {
        return Err(Error::validation("dev split is empty"));
    }
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut opt = Adam::new(cfg.lr);
    let mut stats = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_recs.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "order", epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        for batch_idx in order.chunks(cfg.batch_size) {
            zero_grads(model);
            let batch_n = batch_idx.len();
            for micro in batch_idx.chunks(cfg.microbatch) {
                let recs: Vec<&SampleRecord> = micro.iter().map(|&i| &train_recs[i]).collect();
                let inputs: Vec<ArrayD<f32>> = recs
                    .iter()
                    .map(|r| prepare_input(root, r, model.arch, model.modality, cfg, epoch, true))
                    .collect::<Result<_>>()?;
                let x = stack_inputs(&inputs);
                let probs = model.forward(&x, true)?;
                let labels: Vec<u8> = recs.iter().map(|r| r.label).collect();
                let (loss, grads) =
                    weighted_bce_with_grad(probs.as_slice().unwrap(), &labels, cfg.w_pos, cfg.w_neg)?;
                if !loss.is_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite training loss at epoch {epoch} (samples {:?})",
                        recs.iter().map(|r| &r.id).collect::<Vec<_>>()
                    )));
                }
                epoch_loss += loss as f64 * micro.len() as f64;
                // rescale so accumulated micro-batch gradients average over
                // the logical batch
                let scale = micro.len() as f32 / batch_n as f32;
                let gprobs = Array1::from_iter(grads.iter().map(|&g| g * scale));
                model.backward(&gprobs);
            }
            opt.step(model);
        }
        let train_loss = epoch_loss / train_recs.len() as f64;

        let (dev_loss, dev_scores) = evaluate_split(model, root, dev_recs, cfg)?;
        let dev_wws = crate::metrics::evaluate(&dev_scores, cfg.threshold)?.wws;

        let ckpt = out_dir.join(format!("epoch_{:03}.ckpt", epoch + 1));
        let header = CheckpointHeader {
            architecture: model.arch.as_str().into(),
            modality: model.modality.as_str().into(),
            use_simam: model.arch.use_simam(),
            seed: cfg.seed,
            epoch: (epoch + 1) as u32,
            dev_loss,
        };
        save_checkpoint(&ckpt, &header, model)?;
        eprintln!(
            "epoch {:3}: train_loss {:.4}  dev_loss {:.4}  dev_wws {}",
            epoch + 1,
            train_loss,
            dev_loss,
            dev_wws.map_or("n/a".into(), |w| format!("{w:.2}%")),
        );
        stats.push(EpochStats {
            epoch: epoch + 1,
            train_loss,
            dev_loss,
            dev_wws,
            checkpoint: ckpt,
        });
        if let (Some(target), Some(wws)) = (cfg.early_stop_wws, dev_wws) {
            if wws <= target {
                break;
            }
        }
    }
    Ok(stats)
}
