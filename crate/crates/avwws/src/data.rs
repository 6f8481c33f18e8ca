//! Dataset schema, manifest I/O and the synthetic audio-visual corpus.
//!
//! The synthetic "wake word" is a fixed two-burst chirp: 0.2 s sweeping
//! 1 kHz -> 2 kHz, a 0.1 s gap, then 0.2 s sweeping 2 kHz -> 1 kHz — a stand-in
//! for the two-part trigger phrase. Positive clips carry the burst pair at a
//! random offset plus a bright video patch whose vertical position follows the
//! chirp energy envelope, so audio and video are genuinely correlated.
//! Negative clips contain noise and unrelated tones outside the 1–2 kHz band,
//! with patch motion uncorrelated to anything acoustic.
//!
//! Everything is driven by per-sample seeds derived from the global seed, so
//! one seed means a bit-identical file tree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const CHIRP_SECS: f64 = 0.2;
pub const GAP_SECS: f64 = 0.1;
/// Total wake-pattern length: chirp + gap + chirp.
pub const WAKE_SECS: f64 = 2.0 * CHIRP_SECS + GAP_SECS;
/// Frequency band swept by the wake chirps, Hz.
pub const WAKE_BAND_HZ: (f64, f64) = (1000.0, 2000.0);
pub const VIDEO_FPS: f64 = 25.0;
pub const VIDEO_HEIGHT: usize = 112;
pub const VIDEO_WIDTH: usize = 112;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Recording distance tag carried through from the corpus schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldTag {
    Near,
    Mid,
    Far,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// Relative to the manifest's directory.
    pub audio_path: String,
    pub video_path: String,
    /// 1 = wake word present, 0 = absent.
    pub label: u8,
    pub split: Split,
    pub field: FieldTag,
}

impl SampleRecord {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// Loads a JSON-lines manifest. Order is preserved; blank lines are skipped;
/// duplicate ids are rejected.
pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if rec.label > 1 {
            return Err(Error::parse(
                path,
                i + 1,
                format!("label must be 0 or 1, got {}", rec.label),
            ));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::validation(format!(
                "{}: duplicate sample id `{}`",
                path.display(),
                rec.id
            )));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Stable per-sample seed: same (global seed, tag, index) always yields the
/// same stream regardless of generation or iteration order.
pub fn derive_seed(global_seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

// ---------------------------------------------------------------------------
// WAV I/O (16-bit PCM mono)
// ---------------------------------------------------------------------------

/// Writes samples in [-1, 1] as 16-bit PCM mono. Out-of-range values clip.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let data_len = (samples.len() * 2) as u32;
    let mut buf = Vec::with_capacity(44 + samples.len() * 2);
    buf.extend_from_slice(b"RIFF");
    buf.extend_from_slice(&(36 + data_len).to_le_bytes());
    buf.extend_from_slice(b"WAVE");
    buf.extend_from_slice(b"fmt ");
    buf.extend_from_slice(&16u32.to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes()); // PCM
    buf.extend_from_slice(&1u16.to_le_bytes()); // mono
    buf.extend_from_slice(&sample_rate.to_le_bytes());
    buf.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    buf.extend_from_slice(&2u16.to_le_bytes());
    buf.extend_from_slice(&16u16.to_le_bytes());
    buf.extend_from_slice(b"data");
    buf.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads 16-bit PCM mono WAV into samples scaled to [-1, 1].
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::parse(path, 0, msg.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut sample_rate = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = bytes
            .get(pos + 8..pos + 8 + size)
            .ok_or_else(|| bad("truncated chunk"))?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad("short fmt chunk"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format != 1 || channels != 1 || bits != 16 {
                    return Err(bad("expected 16-bit PCM mono"));
                }
                sample_rate = Some(u32::from_le_bytes(body[4..8].try_into().unwrap()));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos += 8 + size + (size & 1); // chunks are word-aligned
    }
    let sr = sample_rate.ok_or_else(|| bad("missing fmt chunk"))?;
    let data = data.ok_or_else(|| bad("missing data chunk"))?;
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32767.0)
        .collect();
    Ok((samples, sr))
}

// ---------------------------------------------------------------------------
// Raw video I/O (codec-free frame tensors)
// ---------------------------------------------------------------------------

const VIDEO_MAGIC: &[u8; 8] = b"AVWWSVID";

/// A decoded clip: `data` is frames x height x width x channels, u8.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoClip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn write_video(path: &Path, clip: &VideoClip) -> Result<()> {
    let expect = clip.frames * clip.height * clip.width * clip.channels;
    if clip.data.len() != expect {
        return Err(Error::validation(format!(
            "video buffer length {} does not match dims {}x{}x{}x{}",
            clip.data.len(),
            clip.frames,
            clip.height,
            clip.width,
            clip.channels
        )));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    w.write_all(VIDEO_MAGIC).map_err(io_err)?;
    for dim in [clip.frames, clip.height, clip.width, clip.channels] {
        w.write_all(&(dim as u32).to_le_bytes()).map_err(io_err)?;
    }
    w.write_all(&clip.data).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn read_video(path: &Path) -> Result<VideoClip> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    let io_err = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != VIDEO_MAGIC {
        return Err(Error::parse(path, 0, "not a raw video file".to_string()));
    }
    let mut dims = [0usize; 4];
    let mut u32buf = [0u8; 4];
    for d in &mut dims {
        r.read_exact(&mut u32buf).map_err(io_err)?;
        *d = u32::from_le_bytes(u32buf) as usize;
    }
    let mut data = vec![0u8; dims.iter().product()];
    r.read_exact(&mut data).map_err(io_err)?;
    Ok(VideoClip {
        frames: dims[0],
        height: dims[1],
        width: dims[2],
        channels: dims[3],
        data,
    })
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_train_pos: usize,
    pub n_train_neg: usize,
    pub n_dev_pos: usize,
    pub n_dev_neg: usize,
    pub n_eval_pos: usize,
    pub n_eval_neg: usize,
    pub sample_rate: u32,
    /// Clip duration bounds in seconds. Positives are drawn from the lower
    /// part of the range and negatives from the upper part (overlapping), so
    /// raw duration correlates with the label — the imbalance that negative
    /// sub-segmentation exists to remove.
    pub duration_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train_pos: 200,
            n_train_neg: 200,
            n_dev_pos: 60,
            n_dev_neg: 60,
            n_eval_pos: 40,
            n_eval_neg: 40,
            sample_rate: 16000,
            duration_range: (0.8, 1.6),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let total = self.n_train_pos
            + self.n_train_neg
            + self.n_dev_pos
            + self.n_dev_neg
            + self.n_eval_pos
            + self.n_eval_neg;
        if total == 0 {
            return Err(Error::validation("synthetic dataset has zero samples"));
        }
        if self.sample_rate == 0 {
            return Err(Error::validation("sample_rate must be positive"));
        }
        let (lo, hi) = self.duration_range;
        if !(lo <= hi) {
            return Err(Error::validation(format!(
                "duration_range min {lo} exceeds max {hi}"
            )));
        }
        if lo < WAKE_SECS + 0.1 {
            return Err(Error::validation(format!(
                "duration_range min {lo} too short to hold the {WAKE_SECS} s wake pattern"
            )));
        }
        Ok(())
    }
}

/// Synthesizes the wake pattern itself: chirp up, gap, chirp down, with a
/// half-sine amplitude envelope per burst.
pub fn wake_pattern(sample_rate: u32) -> Vec<f64> {
    let sr = sample_rate as f64;
    let n = (WAKE_SECS * sr).round() as usize;
    let mut out = vec![0.0; n];
    let (f_lo, f_hi) = WAKE_BAND_HZ;
    let burst = |start_sec: f64, f0: f64, f1: f64, out: &mut Vec<f64>| {
        let n_burst = (CHIRP_SECS * sr).round() as usize;
        let start = (start_sec * sr).round() as usize;
        for i in 0..n_burst {
            let t = i as f64 / sr;
            // linear chirp: phase = 2pi (f0 t + (f1-f0) t^2 / (2 dur))
            let phase =
                2.0 * std::f64::consts::PI * (f0 * t + (f1 - f0) * t * t / (2.0 * CHIRP_SECS));
            let env = (std::f64::consts::PI * t / CHIRP_SECS).sin();
            if start + i < out.len() {
                out[start + i] = 0.5 * env * phase.sin();
            }
        }
    };
    burst(0.0, f_lo, f_hi, &mut out);
    burst(CHIRP_SECS + GAP_SECS, f_hi, f_lo, &mut out);
    out
}

/// Energy envelope of the wake pattern at time `t` seconds from its start,
/// in [0, 1]; drives the positive-sample patch motion.
fn wake_envelope(t: f64) -> f64 {
    let in_burst = |start: f64| t >= start && t < start + CHIRP_SECS;
    if in_burst(0.0) {
        (std::f64::consts::PI * t / CHIRP_SECS).sin()
    } else if in_burst(CHIRP_SECS + GAP_SECS) {
        (std::f64::consts::PI * (t - CHIRP_SECS - GAP_SECS) / CHIRP_SECS).sin()
    } else {
        0.0
    }
}

fn gen_audio(
    rng: &mut ChaCha8Rng,
    positive: bool,
    duration: f64,
    sample_rate: u32,
) -> (Vec<f64>, f64) {
    let sr = sample_rate as f64;
    let n = (duration * sr).round() as usize;
    // low-level noise floor everywhere
    let mut wave: Vec<f64> = (0..n)
        .map(|_| 0.02 * crate::nn::init::standard_normal(rng))
        .collect();
    // unrelated tones strictly outside the wake band
    let n_tones = rng.gen_range(1..=2);
    for _ in 0..n_tones {
        let freq = if rng.gen_bool(0.5) {
            rng.gen_range(300.0..800.0)
        } else {
            rng.gen_range(2500.0..6000.0)
        };
        let amp = rng.gen_range(0.1..0.3);
        let t0 = rng.gen_range(0.0..duration * 0.5);
        let t1 = rng.gen_range(t0 + 0.2..duration.min(t0 + 1.0));
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let (i0, i1) = ((t0 * sr) as usize, ((t1 * sr) as usize).min(n));
        for i in i0..i1 {
            wave[i] += amp * (std::f64::consts::TAU * freq * i as f64 / sr + phase).sin();
        }
    }
    let mut wake_at = -1.0;
    if positive {
        let latest = duration - WAKE_SECS - 0.05;
        wake_at = rng.gen_range(0.05..latest.max(0.0501));
        let pattern = wake_pattern(sample_rate);
        let start = (wake_at * sr).round() as usize;
        for (i, &p) in pattern.iter().enumerate() {
            if start + i < n {
                wave[start + i] += p;
            }
        }
    }
    for s in &mut wave {
        *s = s.clamp(-1.0, 1.0);
    }
    (wave, wake_at)
}

fn gen_video(rng: &mut ChaCha8Rng, positive: bool, duration: f64, wake_at: f64) -> VideoClip {
    let frames = ((duration * VIDEO_FPS).round() as usize).max(1);
    let (h, w) = (VIDEO_HEIGHT, VIDEO_WIDTH);
    let mut data = vec![0u8; frames * h * w * 3];
    // static dim background texture, shared by all frames of the clip
    let background: Vec<u8> = (0..h * w * 3).map(|_| rng.gen_range(10..50)).collect();
    let patch = 16usize;
    let cx = rng.gen_range(20..(w - patch - 20));
    let cy_base = rng.gen_range(30..(h - patch - 30)) as f64;
    let amp = 14.0;
    // uncorrelated slow oscillation for negatives
    let neg_freq = rng.gen_range(0.2..1.5);
    let neg_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    for f in 0..frames {
        let t = f as f64 / VIDEO_FPS;
        let dy = if positive {
            amp * wake_envelope(t - wake_at)
        } else {
            amp * (std::f64::consts::TAU * neg_freq * t + neg_phase).sin()
        };
        let cy = (cy_base + dy).round().max(0.0) as usize;
        let frame = &mut data[f * h * w * 3..(f + 1) * h * w * 3];
        frame.copy_from_slice(&background);
        for y in cy..(cy + patch).min(h) {
            for x in cx..(cx + patch).min(w) {
                let px = (y * w + x) * 3;
                frame[px] = 230;
                frame[px + 1] = 220;
                frame[px + 2] = 200;
            }
        }
    }
    VideoClip {
        frames,
        height: h,
        width: w,
        channels: 3,
        data,
    }
}

/// Generates the full corpus under `out_dir`: `audio/`, `video/` and one
/// JSON-lines manifest per split. Returns the manifest paths
/// (train, dev, eval).
pub fn generate_synthetic_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<[PathBuf; 3]> {
    cfg.validate()?;
    let audio_dir = out_dir.join("audio");
    let video_dir = out_dir.join("video");
    std::fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    std::fs::create_dir_all(&video_dir).map_err(|e| Error::io(&video_dir, e))?;

    let fields = [FieldTag::Near, FieldTag::Mid, FieldTag::Far];
    let (dmin, dmax) = cfg.duration_range;
    let mut manifests = Vec::with_capacity(3);
    let splits = [
        (Split::Train, cfg.n_train_pos, cfg.n_train_neg),
        (Split::Dev, cfg.n_dev_pos, cfg.n_dev_neg),
        (Split::Eval, cfg.n_eval_pos, cfg.n_eval_neg),
    ];
    for (split, n_pos, n_neg) in splits {
        let mut records = Vec::with_capacity(n_pos + n_neg);
        for (positive, count) in [(true, n_pos), (false, n_neg)] {
            for i in 0..count {
                let kind = if positive { "pos" } else { "neg" };
                let id = format!("{split}-{kind}-{i:04}");
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &id, 0));
                // positives from the lower part of the range, negatives from
                // the upper part (overlapping middle)
                let duration = if positive {
                    rng.gen_range(dmin..dmin + 0.6 * (dmax - dmin) + 1e-9)
                } else {
                    rng.gen_range(dmin + 0.4 * (dmax - dmin)..dmax + 1e-9)
                };
                let (wave, wake_at) = gen_audio(&mut rng, positive, duration, cfg.sample_rate);
                let clip = gen_video(&mut rng, positive, duration, wake_at);
                let audio_rel = format!("audio/{id}.wav");
                let video_rel = format!("video/{id}.vid");
                write_wav(&out_dir.join(&audio_rel), &wave, cfg.sample_rate)?;
                write_video(&out_dir.join(&video_rel), &clip)?;
                records.push(SampleRecord {
                    id,
                    audio_path: audio_rel,
                    video_path: video_rel,
                    label: positive as u8,
                    split,
                    field: fields[i % 3],
                });
            }
        }
        let manifest = out_dir.join(format!("{split}.jsonl"));
        write_manifest(&manifest, &records)?;
        manifests.push(manifest);
    }
    Ok(manifests.try_into().unwrap())
}
