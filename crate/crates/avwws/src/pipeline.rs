//! Experiment plumbing behind the CLI subcommands: synth, train, eval, fuse
//! and report. Every command writes a `run.json` with the seed, config digest
//! and input digests so a run can be reproduced byte-for-byte.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::backbones::{
    load_checkpoint, write_checkpoint_raw, LevelEmbeddings, Modality, Model,
};
use crate::data::{derive_seed, generate_synthetic_dataset, load_manifest, SampleRecord, SynthConfig};
use crate::error::{Error, Result};
use crate::fusion::{
    average_checkpoints, cascaded_decision, concat_level_batches, score_fusion, HmaModel,
    DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_TH_HIGH, DEFAULT_TH_LOW,
};
use crate::metrics::{evaluate, read_score_csv, write_score_csv, EvalResult, ScoreRecord};
use crate::nn::adam::Adam;
use crate::nn::zero_grads;
use crate::training::{
    parse_kv, prepare_input, train, weighted_bce_with_grad, EpochStats, TrainConfig,
};

pub const DEVICE_ENV: &str = "AVWWS_DEVICE";
pub const CHECKPOINT_AVG_K: usize = 3;
pub const HMA_EPOCHS: usize = 30;
pub const HMA_LR: f64 = 0.0001;

/// The only supported device is the CPU; the env var exists so scripts can be
/// explicit about it.
pub fn check_device() -> Result<()> {
    match std::env::var(DEVICE_ENV) {
        Ok(v) if v != "cpu" => Err(Error::validation(format!(
            "{DEVICE_ENV}={v} is not supported (only `cpu`)"
        ))),
        _ => Ok(()),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Records what a command consumed and produced.
pub fn write_run_json(
    out_dir: &Path,
    command: &str,
    seed: u64,
    deterministic: bool,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<()> {
    let mut input_digests = serde_json::Map::new();
    for p in inputs {
        input_digests.insert(p.display().to_string(), json!(sha256_file(p)?));
    }
    let doc = json!({
        "command": command,
        "seed": seed,
        "deterministic": deterministic,
        "inputs": input_digests,
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    let path = out_dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap())
        .map_err(|e| Error::io(&path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Maps flat `key = value` pairs onto the generator config.
pub fn synth_config_from_kv(pairs: &[(String, String)]) -> Result<SynthConfig> {
    let mut cfg = SynthConfig::default();
    for (key, value) in pairs {
        let bad = |e: String| Error::validation(format!("config key `{key}`: {e}"));
        match key.as_str() {
            "n_train_pos" => cfg.n_train_pos = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "n_train_neg" => cfg.n_train_neg = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "n_dev_pos" => cfg.n_dev_pos = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "n_dev_neg" => cfg.n_dev_neg = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "n_eval_pos" => cfg.n_eval_pos = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "n_eval_neg" => cfg.n_eval_neg = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "sample_rate" => cfg.sample_rate = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "duration_min" => cfg.duration_range.0 = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "duration_max" => cfg.duration_range.1 = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "seed" => cfg.seed = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            _ => return Err(Error::validation(format!("unknown synth config key `{key}`"))),
        }
    }
    Ok(cfg)
}

pub fn cmd_synth(
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    deterministic: bool,
) -> Result<()> {
    check_device()?;
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            synth_config_from_kv(&parse_kv(&text, p)?)?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    ensure_dir(out)?;
    let manifests = generate_synthetic_dataset(&cfg, out)?;
    let inputs: Vec<&Path> = config.into_iter().collect();
    let outputs: Vec<&Path> = manifests.iter().map(|p| p.as_path()).collect();
    write_run_json(out, "synth", cfg.seed, deterministic, &inputs, &outputs)?;
    println!(
        "dataset written to {} ({} manifests)",
        out.display(),
        manifests.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn cmd_train(
    config: Option<&Path>,
    seed: Option<u64>,
    data: &Path,
    out: &Path,
    deterministic: bool,
) -> Result<()> {
    check_device()?;
    let mut cfg = match config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let train_manifest = data.join("train.jsonl");
    let dev_manifest = data.join("dev.jsonl");
    let train_recs = load_manifest(&train_manifest)?;
    let dev_recs = load_manifest(&dev_manifest)?;
    ensure_dir(out)?;

    let mut model = Model::<f32>::new(cfg.arch_enum(), cfg.modality_enum(), cfg.seed);
    let ckpt_dir = out.join("checkpoints");
    let stats = train(&mut model, data, &train_recs, &dev_recs, &cfg, &ckpt_dir)?;

    let log_path = out.join("training_log.jsonl");
    write_training_log(&log_path, &stats)?;

    // final model = mean of the best checkpoints by dev loss
    let ckpts: Vec<PathBuf> = stats.iter().map(|s| s.checkpoint.clone()).collect();
    let (header, tensors) = average_checkpoints(&ckpts, CHECKPOINT_AVG_K)?;
    let model_path = out.join("model.ckpt");
    write_checkpoint_raw(&model_path, &header, &tensors)?;

    let mut inputs: Vec<&Path> = vec![&train_manifest, &dev_manifest];
    inputs.extend(config);
    write_run_json(out, "train", cfg.seed, deterministic, &inputs, &[&model_path, &log_path])?;
    println!("final model written to {}", model_path.display());
    Ok(())
}

pub fn write_training_log(path: &Path, stats: &[EpochStats]) -> Result<()> {
    let mut text = String::new();
    for s in stats {
        text.push_str(&serde_json::to_string(s).unwrap());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct Scored {
    id: String,
    label: bool,
    prob: f64,
    levels: Option<LevelEmbeddings<f32>>,
}

/// Runs a frozen model over a record list (no augmentation).
fn score_split(
    model: &mut Model<f32>,
    root: &Path,
    records: &[SampleRecord],
    with_levels: bool,
    microbatch: usize,
) -> Result<Vec<Scored>> {
    let cfg = TrainConfig {
        arch: model.arch.as_str().into(),
        modality: model.modality.as_str().into(),
        ..TrainConfig::default()
    };
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(microbatch) {
        let inputs: Vec<_> = chunk
            .iter()
            .map(|r| prepare_input(root, r, model.arch, model.modality, &cfg, 0, false))
            .collect::<Result<_>>()?;
        let mut shape = vec![inputs.len()];
        shape.extend_from_slice(inputs[0].shape());
        let mut x = ndarray::ArrayD::<f32>::zeros(ndarray::IxDyn(&shape));
        for (i, inp) in inputs.iter().enumerate() {
            x.index_axis_mut(ndarray::Axis(0), i).assign(inp);
        }
        if with_levels {
            let (probs, levels) = model.forward_with_levels(&x)?;
            for ((rec, &p), lv) in chunk.iter().zip(probs.iter()).zip(levels) {
                out.push(Scored {
                    id: rec.id.clone(),
                    label: rec.is_positive(),
                    prob: p as f64,
                    levels: Some(lv),
                });
            }
        } else {
            let probs = model.forward(&x, false)?;
            for (rec, &p) in chunk.iter().zip(probs.iter()) {
                out.push(Scored {
                    id: rec.id.clone(),
                    label: rec.is_positive(),
                    prob: p as f64,
                    levels: None,
                });
            }
        }
    }
    Ok(out)
}

/// Writes `report.txt` (aligned table) and `report.jsonl` next to each other.
pub fn write_report(out_dir: &Path, rows: &[(String, EvalResult)]) -> Result<()> {
    let fmt_rate = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{v:.2}"));
    let mut txt = format!(
        "{:<24} {:>8} {:>8} {:>8} {:>10}\n",
        "system", "FRR%", "FAR%", "WWS%", "threshold"
    );
    let mut jsonl = String::new();
    for (name, r) in rows {
        txt.push_str(&format!(
            "{:<24} {:>8} {:>8} {:>8} {:>10.2}\n",
            name,
            fmt_rate(r.frr),
            fmt_rate(r.far),
            fmt_rate(r.wws),
            r.threshold
        ));
        let mut doc = serde_json::to_value(r).unwrap();
        doc["system"] = json!(name);
        jsonl.push_str(&serde_json::to_string(&doc).unwrap());
        jsonl.push('\n');
    }
    let txt_path = out_dir.join("report.txt");
    std::fs::write(&txt_path, &txt).map_err(|e| Error::io(&txt_path, e))?;
    let jsonl_path = out_dir.join("report.jsonl");
    std::fs::write(&jsonl_path, jsonl).map_err(|e| Error::io(&jsonl_path, e))?;
    print!("{txt}");
    Ok(())
}

pub fn cmd_eval(
    checkpoint: &Path,
    manifest: &Path,
    threshold: f64,
    out: &Path,
    seed: Option<u64>,
    deterministic: bool,
) -> Result<()> {
    check_device()?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::validation(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    let (header, mut model) = load_checkpoint::<f32>(checkpoint)?;
    let records = load_manifest(manifest)?;
    if records.is_empty() {
        return Err(Error::validation(format!(
            "{}: empty manifest",
            manifest.display()
        )));
    }
    let root = manifest.parent().unwrap_or(Path::new("."));
    ensure_dir(out)?;
    let scored = score_split(&mut model, root, &records, false, 4)?;

    let audio = model.modality == Modality::Audio;
    let rows: Vec<ScoreRecord> = scored
        .iter()
        .map(|s| ScoreRecord {
            id: s.id.clone(),
            label: s.label,
            p_a: audio.then_some(s.prob),
            p_v: (!audio).then_some(s.prob),
            p_av: None,
            decision: s.prob >= threshold,
        })
        .collect();
    let csv_path = out.join("scores.csv");
    write_score_csv(&csv_path, &rows)?;

    let pairs: Vec<(f64, bool)> = scored.iter().map(|s| (s.prob, s.label)).collect();
    let result = evaluate(&pairs, threshold)?;
    let name = format!("{}-{}", header.architecture, header.modality);
    write_report(out, &[(name, result)])?;
    write_run_json(
        out,
        "eval",
        seed.unwrap_or(header.seed),
        deterministic,
        &[checkpoint, manifest],
        &[&csv_path],
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// fuse
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuseStrategy {
    Score,
    Cascade,
    Hma,
}

impl FuseStrategy {
    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "score" => Ok(FuseStrategy::Score),
            "cascade" => Ok(FuseStrategy::Cascade),
            "hma" => Ok(FuseStrategy::Hma),
            _ => Err(Error::validation(format!(
                "unknown fusion strategy `{s}` (expected score, cascade or hma)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FuseStrategy::Score => "score",
            FuseStrategy::Cascade => "cascade",
            FuseStrategy::Hma => "hma",
        }
    }
}

/// Joins per-modality score CSVs by sample id.
fn join_scores(
    audio: &[ScoreRecord],
    video: &[ScoreRecord],
) -> Result<Vec<(String, bool, f64, f64)>> {
    let by_id: HashMap<&str, &ScoreRecord> = video.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut out = Vec::with_capacity(audio.len());
    for a in audio {
        let v = by_id.get(a.id.as_str()).ok_or_else(|| {
            Error::validation(format!("sample `{}` missing from the video scores", a.id))
        })?;
        if v.label != a.label {
            return Err(Error::validation(format!(
                "sample `{}` has conflicting labels across the two score files",
                a.id
            )));
        }
        let p_a = a.p_a.or(a.p_v).ok_or_else(|| {
            Error::validation(format!("sample `{}` has no audio probability", a.id))
        })?;
        let p_v = v.p_v.or(v.p_a).ok_or_else(|| {
            Error::validation(format!("sample `{}` has no video probability", a.id))
        })?;
        out.push((a.id.clone(), a.label, p_a, p_v));
    }
    Ok(out)
}

/// Score-level and cascaded fusion straight from two unimodal score CSVs.
pub fn cmd_fuse_scores(
    strategy: FuseStrategy,
    audio_csv: &Path,
    video_csv: &Path,
    threshold: f64,
    out: &Path,
    deterministic: bool,
) -> Result<()> {
    check_device()?;
    let joined = join_scores(&read_score_csv(audio_csv)?, &read_score_csv(video_csv)?)?;
    ensure_dir(out)?;
    let mut rows = Vec::with_capacity(joined.len());
    for (id, label, p_a, p_v) in &joined {
        let (p_av, decision) = match strategy {
            FuseStrategy::Score => {
                let p = score_fusion(*p_a, *p_v, DEFAULT_ALPHA, DEFAULT_BETA)?;
                (Some(p), p >= threshold)
            }
            FuseStrategy::Cascade => (
                None,
                cascaded_decision(*p_v, *p_a, DEFAULT_TH_LOW, DEFAULT_TH_HIGH)?,
            ),
            FuseStrategy::Hma => unreachable!("hma runs through cmd_fuse_hma"),
        };
        rows.push(ScoreRecord {
            id: id.clone(),
            label: *label,
            p_a: Some(*p_a),
            p_v: Some(*p_v),
            p_av,
            decision,
        });
    }
    let csv_path = out.join("scores.csv");
    write_score_csv(&csv_path, &rows)?;
    let result = fused_eval(&rows, strategy, threshold)?;
    write_report(out, &[(format!("fusion-{}", strategy.as_str()), result)])?;
    write_run_json(
        out,
        &format!("fuse-{}", strategy.as_str()),
        0,
        deterministic,
        &[audio_csv, video_csv],
        &[&csv_path],
    )?;
    Ok(())
}

fn fused_eval(rows: &[ScoreRecord], strategy: FuseStrategy, threshold: f64) -> Result<EvalResult> {
    // the cascade emits hard decisions, not probabilities
    let pairs: Vec<(f64, bool)> = match strategy {
        FuseStrategy::Cascade => rows
            .iter()
            .map(|r| (r.decision as u8 as f64, r.label))
            .collect(),
        _ => rows
            .iter()
            .map(|r| (r.p_av.expect("fused prob present"), r.label))
            .collect(),
    };
    let th = match strategy {
        FuseStrategy::Cascade => 0.5,
        _ => threshold,
    };
    evaluate(&pairs, th)
}

/// Trains the HMA head on frozen level embeddings.
pub fn train_hma_head(
    hma: &mut HmaModel<f32>,
    embeddings: &[(LevelEmbeddings<f32>, LevelEmbeddings<f32>, bool)],
    cfg: &TrainConfig,
    epochs: usize,
    lr: f64,
) -> Result<()> {
    if embeddings.is_empty() {
        return Err(Error::validation("no embeddings to train the fusion head on"));
    }
    let mut opt = Adam::new(lr);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..embeddings.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "hma-order", epoch as u64));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            zero_grads(hma);
            let pairs: Vec<(&LevelEmbeddings<f32>, &LevelEmbeddings<f32>)> = batch
                .iter()
                .map(|&i| (&embeddings[i].0, &embeddings[i].1))
                .collect();
            let labels: Vec<u8> = batch.iter().map(|&i| embeddings[i].2 as u8).collect();
            let levels = concat_level_batches(&pairs)?;
            let probs = hma.forward(&levels, true)?;
            let (loss, grads) =
                weighted_bce_with_grad(probs.as_slice().unwrap(), &labels, cfg.w_pos, cfg.w_neg)?;
            if !loss.is_finite() {
                return Err(Error::numeric("non-finite fusion loss"));
            }
            hma.backward(&Array1::from_vec(grads));
            opt.step(hma);
        }
    }
    Ok(())
}

/// HMA fusion end to end: extract embeddings with both frozen backbones,
/// train the head on the train split, score the target manifest.
pub fn cmd_fuse_hma(
    audio_ckpt: &Path,
    video_ckpt: &Path,
    data: &Path,
    threshold: f64,
    out: &Path,
    seed: Option<u64>,
    deterministic: bool,
) -> Result<()> {
    check_device()?;
    let (ah, mut audio_model) = load_checkpoint::<f32>(audio_ckpt)?;
    let (vh, mut video_model) = load_checkpoint::<f32>(video_ckpt)?;
    if audio_model.modality != Modality::Audio || video_model.modality != Modality::Video {
        return Err(Error::validation(format!(
            "expected an audio and a video checkpoint, got {} and {}",
            ah.modality, vh.modality
        )));
    }
    let train_recs = load_manifest(&data.join("train.jsonl"))?;
    let eval_recs = load_manifest(&data.join("eval.jsonl"))?;
    ensure_dir(out)?;

    let cfg = TrainConfig {
        seed: seed.unwrap_or(ah.seed),
        lr: HMA_LR,
        ..TrainConfig::default()
    };
    let extract = |audio_model: &mut Model<f32>,
                   video_model: &mut Model<f32>,
                   recs: &[SampleRecord]|
     -> Result<Vec<(LevelEmbeddings<f32>, LevelEmbeddings<f32>, bool, String, f64, f64)>> {
        let a = score_split(audio_model, data, recs, true, 4)?;
        let v = score_split(video_model, data, recs, true, 2)?;
        Ok(a.into_iter()
            .zip(v)
            .map(|(a, v)| {
                (
                    a.levels.unwrap(),
                    v.levels.unwrap(),
                    a.label,
                    a.id,
                    a.prob,
                    v.prob,
                )
            })
            .collect())
    };

    let train_emb = extract(&mut audio_model, &mut video_model, &train_recs)?;
    let mut hma = HmaModel::<f32>::for_widths(audio_model.widths(), cfg.seed);
    let head_data: Vec<_> = train_emb
        .iter()
        .map(|(a, v, y, ..)| (a.clone(), v.clone(), *y))
        .collect();
    train_hma_head(&mut hma, &head_data, &cfg, HMA_EPOCHS, HMA_LR)?;

    let eval_emb = extract(&mut audio_model, &mut video_model, &eval_recs)?;
    let mut rows = Vec::with_capacity(eval_emb.len());
    for (a_lv, v_lv, label, id, p_a, p_v) in &eval_emb {
        let levels = concat_level_batches(&[(a_lv, v_lv)])?;
        let p_av = hma.forward(&levels, false)?[0] as f64;
        rows.push(ScoreRecord {
            id: id.clone(),
            label: *label,
            p_a: Some(*p_a),
            p_v: Some(*p_v),
            p_av: Some(p_av),
            decision: p_av >= threshold,
        });
    }
    let csv_path = out.join("scores.csv");
    write_score_csv(&csv_path, &rows)?;
    let result = fused_eval(&rows, FuseStrategy::Hma, threshold)?;
    write_report(out, &[("fusion-hma".to_string(), result)])?;
    write_run_json(
        out,
        "fuse-hma",
        cfg.seed,
        deterministic,
        &[audio_ckpt, video_ckpt],
        &[&csv_path],
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Summarizes several score CSVs (one system each) into one comparison table,
/// using the stored decisions.
pub fn cmd_report(csvs: &[PathBuf], out: &Path) -> Result<()> {
    if csvs.is_empty() {
        return Err(Error::validation("no score files given"));
    }
    ensure_dir(out)?;
    let mut rows = Vec::with_capacity(csvs.len());
    for path in csvs {
        let records = read_score_csv(path)?;
        if records.is_empty() {
            return Err(Error::validation(format!(
                "{}: no scores to report",
                path.display()
            )));
        }
        let pairs: Vec<(f64, bool)> = records
            .iter()
            .map(|r| (r.decision as u8 as f64, r.label))
            .collect();
        let result = evaluate(&pairs, 0.5)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        rows.push((name, result));
    }
    write_report(out, &rows)?;
    let inputs: Vec<&Path> = csvs.iter().map(|p| p.as_path()).collect();
    write_run_json(out, "report", 0, true, &inputs, &[])?;
    Ok(())
}
