//! Seeded, pure data augmentations.
//!
//! Audio: noise + reverberation (NR), negative sub-segmentation (NS), volume
//! perturbation (VP), speed perturbation (SP), slight trimming (TS) and
//! spectrogram masking (SA). Video: speed, rotation, horizontal flip,
//! cropping, color jitter and gray scaling, with one parameter draw shared by
//! all frames of a clip so temporal coherence survives.
//!
//! Reverberation uses synthetic exponential-decay impulse responses
//! (RT60 ~ U[0.2, 0.8] s) and generated noise rather than recorded rooms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::data::VideoClip;
use crate::error::{Error, Result};
use crate::features::{Spectrogram, MEL_BINS};

/// Minimum negative length eligible for sub-segmentation, seconds.
pub const NS_MIN_SECS: f64 = 0.5;
pub const TRIM_KEEP_RATIO: f64 = 0.95;

/// Apply-probabilities per transform; 0 disables, 1 always applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    pub nr: f64,
    pub ns: f64,
    pub vp: f64,
    pub sp: f64,
    pub ts: f64,
    pub sa: f64,
    pub video_speed: f64,
    pub video_rotate: f64,
    pub video_hflip: f64,
    pub video_crop: f64,
    pub video_color_jitter: f64,
    pub video_gray: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            nr: 0.0,
            ns: 0.0,
            vp: 0.0,
            sp: 0.0,
            ts: 0.0,
            sa: 0.0,
            video_speed: 0.0,
            video_rotate: 0.0,
            video_hflip: 0.0,
            video_crop: 0.0,
            video_color_jitter: 0.0,
            video_gray: 0.0,
        }
    }
}

impl AugmentPolicy {
    /// Everything on — the full augmentation recipe.
    pub fn all(p: f64) -> Self {
        AugmentPolicy {
            nr: p,
            ns: p,
            vp: p,
            sp: p,
            ts: p,
            sa: p,
            video_speed: p,
            video_rotate: p,
            video_hflip: p,
            video_crop: p,
            video_color_jitter: p,
            video_gray: p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("nr", self.nr),
            ("ns", self.ns),
            ("vp", self.vp),
            ("sp", self.sp),
            ("ts", self.ts),
            ("sa", self.sa),
            ("video_speed", self.video_speed),
            ("video_rotate", self.video_rotate),
            ("video_hflip", self.video_hflip),
            ("video_crop", self.video_crop),
            ("video_color_jitter", self.video_color_jitter),
            ("video_gray", self.video_gray),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!(
                    "augment probability {name}={p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Audio transforms
// ---------------------------------------------------------------------------

/// Linear convolution via FFT, truncated to `a.len()`.
fn fft_convolve_truncated(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = (a.len() + b.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex<f64>> = a
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n)
        .collect();
    let mut fb: Vec<Complex<f64>> = b
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n)
        .collect();
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    ifft.process(&mut fa);
    fa[..a.len()].iter().map(|c| c.re / n as f64).collect()
}

fn power(wave: &[f64]) -> f64 {
    wave.iter().map(|&s| s * s).sum::<f64>() / wave.len().max(1) as f64
}

/// Reverberates with `rir`, then adds `noise` scaled to the requested SNR
/// (powers measured after convolution). Output length equals input length.
pub fn add_noise_reverb(
    wave: &[f64],
    noise: &[f64],
    rir: &[f64],
    snr_db: f64,
) -> Result<Vec<f64>> {
    if !(-15.0..=15.0).contains(&snr_db) {
        return Err(Error::validation(format!(
            "snr_db {snr_db} outside [-15, 15]"
        )));
    }
    if rir.is_empty() || power(rir) == 0.0 {
        return Err(Error::validation("impulse response has no energy"));
    }
    if wave.is_empty() {
        return Err(Error::validation("empty waveform"));
    }
    let reverbed = fft_convolve_truncated(wave, rir);
    let p_sig = power(&reverbed);
    if p_sig == 0.0 {
        return Err(Error::validation("signal has no energy; SNR undefined"));
    }
    if noise.is_empty() || power(noise) == 0.0 {
        return Err(Error::validation("noise has no energy; SNR undefined"));
    }
    // tile noise to length, then scale to hit the target SNR
    let tiled: Vec<f64> = (0..reverbed.len()).map(|i| noise[i % noise.len()]).collect();
    let scale = (p_sig / (power(&tiled) * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok(reverbed
        .iter()
        .zip(&tiled)
        .map(|(&s, &n)| s + scale * n)
        .collect())
}

/// Exponentially decaying noise burst: a dependency-free stand-in for a room
/// impulse response. RT60 drawn from U[0.2, 0.8] s.
pub fn synthetic_rir(rng: &mut ChaCha8Rng, sample_rate: u32) -> Vec<f64> {
    let rt60 = rng.gen_range(0.2..0.8);
    let n = (rt60 * sample_rate as f64) as usize;
    let mut h = Vec::with_capacity(n);
    h.push(1.0); // direct path
    for i in 1..n {
        let t = i as f64 / sample_rate as f64;
        // -60 dB at t = rt60: amplitude exp(-6.908 t / rt60)
        let env = (-6.908 * t / rt60).exp();
        h.push(0.3 * env * crate::nn::init::standard_normal(rng));
    }
    h
}

pub fn volume_perturb(wave: &[f64], gain: f64) -> Result<Vec<f64>> {
    if !(0.125..=2.0).contains(&gain) {
        return Err(Error::validation(format!(
            "gain {gain} outside [0.125, 2]"
        )));
    }
    Ok(wave.iter().map(|&s| (gain * s).clamp(-1.0, 1.0)).collect())
}

/// Rate-change speed perturbation (pitch shifts with speed). Output length is
/// exactly round(N / ratio).
pub fn speed_perturb(wave: &[f64], ratio: f64) -> Result<Vec<f64>> {
    if !(0.9..=1.1).contains(&ratio) {
        return Err(Error::validation(format!(
            "speed ratio {ratio} outside [0.9, 1.1]"
        )));
    }
    if wave.is_empty() {
        return Err(Error::validation("empty waveform"));
    }
    let n = wave.len();
    let m = (n as f64 / ratio).round() as usize;
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let pos = i as f64 * ratio;
        let lo = pos.floor() as usize;
        if lo + 1 >= n {
            out.push(wave[n - 1]);
        } else {
            let frac = pos - lo as f64;
            out.push(wave[lo] * (1.0 - frac) + wave[lo + 1] * frac);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrimSide {
    Begin,
    End,
}

/// Removes ~5% of the samples from the chosen side.
pub fn trim_slightly(wave: &[f64], side: TrimSide) -> Result<Vec<f64>> {
    if wave.is_empty() {
        return Err(Error::validation("empty waveform"));
    }
    let keep = ((TRIM_KEEP_RATIO * wave.len() as f64).floor() as usize).max(1);
    Ok(match side {
        TrimSide::End => wave[..keep].to_vec(),
        TrimSide::Begin => wave[wave.len() - keep..].to_vec(),
    })
}

/// Zeroes `n_freq_masks` random frequency bands of width U{0..max_f} and
/// `n_time_masks` random time bands of width U{0..max_t}.
pub fn spec_augment(
    spec: &Spectrogram,
    n_freq_masks: usize,
    max_f: usize,
    n_time_masks: usize,
    max_t: usize,
    seed: u64,
) -> Result<Spectrogram> {
    let frames = spec.frames();
    if max_f > MEL_BINS {
        return Err(Error::validation(format!(
            "max_f {max_f} exceeds {MEL_BINS} mel bins"
        )));
    }
    if max_t > frames {
        return Err(Error::validation(format!(
            "max_t {max_t} exceeds {frames} frames"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = spec.data.clone();
    for _ in 0..n_freq_masks {
        let f = rng.gen_range(0..=max_f);
        let f0 = rng.gen_range(0..=MEL_BINS - f);
        for t in 0..frames {
            for m in f0..f0 + f {
                data[[t, m]] = 0.0;
            }
        }
    }
    for _ in 0..n_time_masks {
        let t_len = rng.gen_range(0..=max_t);
        let t0 = rng.gen_range(0..=frames - t_len);
        for t in t0..t0 + t_len {
            for m in 0..MEL_BINS {
                data[[t, m]] = 0.0;
            }
        }
    }
    Ok(Spectrogram { data })
}

/// Crops a random contiguous piece of U[50%, 100%] of a *negative* sample so
/// clip duration stops being a label giveaway. Positives are rejected — a
/// crop could cut the wake word. Clips under 0.5 s pass through unchanged.
pub fn negative_subsegment(
    wave: &[f64],
    is_positive: bool,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<f64>> {
    if is_positive {
        return Err(Error::validation(
            "sub-segmentation applies to negative samples only",
        ));
    }
    let min_len = (NS_MIN_SECS * sample_rate as f64) as usize;
    if wave.len() < min_len {
        return Ok(wave.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = wave.len();
    let len = rng.gen_range(n / 2..=n);
    let start = rng.gen_range(0..=n - len);
    Ok(wave[start..start + len].to_vec())
}

/// Applies the enabled audio transforms (except SA, which acts on the
/// spectrogram) in a fixed order with parameters drawn from `seed`.
pub fn augment_audio(
    wave: &[f64],
    is_positive: bool,
    sample_rate: u32,
    policy: &AugmentPolicy,
    seed: u64,
) -> Result<Vec<f64>> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wave = wave.to_vec();
    if !is_positive && rng.gen_bool(policy.ns) {
        wave = negative_subsegment(&wave, false, sample_rate, rng.gen())?;
    }
    if rng.gen_bool(policy.sp) {
        wave = speed_perturb(&wave, rng.gen_range(0.9..=1.1))?;
    }
    if rng.gen_bool(policy.ts) {
        let side = if rng.gen_bool(0.5) {
            TrimSide::Begin
        } else {
            TrimSide::End
        };
        wave = trim_slightly(&wave, side)?;
    }
    if rng.gen_bool(policy.nr) {
        let rir = synthetic_rir(&mut rng, sample_rate);
        let noise: Vec<f64> = (0..wave.len().max(1))
            .map(|_| crate::nn::init::standard_normal(&mut rng))
            .collect();
        let snr = rng.gen_range(-15.0..=15.0);
        wave = add_noise_reverb(&wave, &noise, &rir, snr)?;
        // reverb + low SNR can exceed full scale
        for s in &mut wave {
            *s = s.clamp(-1.0, 1.0);
        }
    }
    if rng.gen_bool(policy.vp) {
        wave = volume_perturb(&wave, rng.gen_range(0.125..=2.0))?;
    }
    Ok(wave)
}

// ---------------------------------------------------------------------------
// Video transforms
// ---------------------------------------------------------------------------

fn map_frames(clip: &VideoClip, f: impl Fn(&[u8], &mut [u8])) -> VideoClip {
    let stride = clip.height * clip.width * clip.channels;
    let mut data = vec![0u8; clip.data.len()];
    for (src, dst) in clip.data.chunks_exact(stride).zip(data.chunks_exact_mut(stride)) {
        f(src, dst);
    }
    VideoClip {
        data,
        ..clip.clone()
    }
}

pub fn flip_horizontal(clip: &VideoClip) -> VideoClip {
    let (h, w, c) = (clip.height, clip.width, clip.channels);
    map_frames(clip, |src, dst| {
        for y in 0..h {
            for x in 0..w {
                let s = (y * w + x) * c;
                let d = (y * w + (w - 1 - x)) * c;
                dst[d..d + c].copy_from_slice(&src[s..s + c]);
            }
        }
    })
}

/// Rotates every frame around its center by `degrees`, nearest-neighbor
/// sampling, zeros outside the source.
pub fn rotate_frames(clip: &VideoClip, degrees: f64) -> VideoClip {
    let (h, w, c) = (clip.height, clip.width, clip.channels);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    map_frames(clip, |src, dst| {
        for y in 0..h {
            for x in 0..w {
                // inverse rotation of the output coordinate
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let sy = (cy + dy * cos - dx * sin).round();
                let sx = (cx + dy * sin + dx * cos).round();
                let d = (y * w + x) * c;
                if sy >= 0.0 && sy < h as f64 && sx >= 0.0 && sx < w as f64 {
                    let s = (sy as usize * w + sx as usize) * c;
                    dst[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
    })
}

/// Crops a box of side round(scale * size) at the given top-left corner and
/// resizes back to the original resolution (nearest neighbor).
pub fn crop_resize(clip: &VideoClip, scale: f64, top: usize, left: usize) -> Result<VideoClip> {
    if !(0.0..=1.0).contains(&scale) || scale == 0.0 {
        return Err(Error::validation(format!("crop scale {scale} outside (0, 1]")));
    }
    let (h, w, c) = (clip.height, clip.width, clip.channels);
    let bh = ((scale * h as f64).round() as usize).max(1);
    let bw = ((scale * w as f64).round() as usize).max(1);
    if top + bh > h || left + bw > w {
        return Err(Error::validation("crop box exceeds the frame"));
    }
    Ok(map_frames(clip, |src, dst| {
        for y in 0..h {
            let sy = top + if h == 1 { 0 } else { ((y * (bh - 1)) as f64 / (h - 1) as f64).round() as usize };
            for x in 0..w {
                let sx = left + if w == 1 { 0 } else { ((x * (bw - 1)) as f64 / (w - 1) as f64).round() as usize };
                let s = (sy * w + sx) * c;
                let d = (y * w + x) * c;
                dst[d..d + c].copy_from_slice(&src[s..s + c]);
            }
        }
    }))
}

/// brightness in [-1, 1] (fraction of full scale), contrast multiplier > 0.
pub fn color_jitter(clip: &VideoClip, brightness: f64, contrast: f64) -> VideoClip {
    map_frames(clip, |src, dst| {
        for (d, &s) in dst.iter_mut().zip(src) {
            let v = contrast * (s as f64 - 128.0) + 128.0 + brightness * 255.0;
            *d = v.round().clamp(0.0, 255.0) as u8;
        }
    })
}

pub fn gray_scale(clip: &VideoClip) -> VideoClip {
    let c = clip.channels;
    map_frames(clip, |src, dst| {
        for (s_px, d_px) in src.chunks_exact(c).zip(dst.chunks_exact_mut(c)) {
            let mean =
                (s_px.iter().map(|&v| v as u32).sum::<u32>() / c as u32) as u8;
            d_px.fill(mean);
        }
    })
}

/// Resamples the frame count by 1/ratio (same convention as audio speed).
pub fn video_speed(clip: &VideoClip, ratio: f64) -> Result<VideoClip> {
    if !(0.9..=1.1).contains(&ratio) {
        return Err(Error::validation(format!(
            "speed ratio {ratio} outside [0.9, 1.1]"
        )));
    }
    let f_in = clip.frames;
    let f_out = ((f_in as f64 / ratio).round() as usize).max(1);
    let stride = clip.height * clip.width * clip.channels;
    let mut data = Vec::with_capacity(f_out * stride);
    for i in 0..f_out {
        let src = ((i as f64 * ratio).round() as usize).min(f_in - 1);
        data.extend_from_slice(&clip.data[src * stride..(src + 1) * stride]);
    }
    Ok(VideoClip {
        frames: f_out,
        data,
        ..clip.clone()
    })
}

/// Applies the enabled video transforms. One parameter draw covers the whole
/// clip: every frame sees the same rotation, crop box, flip and jitter.
pub fn augment_video(clip: &VideoClip, policy: &AugmentPolicy, seed: u64) -> Result<VideoClip> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clip = clip.clone();
    if rng.gen_bool(policy.video_speed) {
        clip = video_speed(&clip, rng.gen_range(0.9..=1.1))?;
    }
    if rng.gen_bool(policy.video_rotate) {
        clip = rotate_frames(&clip, rng.gen_range(-10.0..=10.0));
    }
    if rng.gen_bool(policy.video_hflip) {
        clip = flip_horizontal(&clip);
    }
    if rng.gen_bool(policy.video_crop) {
        let scale = rng.gen_range(0.8..=1.0);
        let bh = ((scale * clip.height as f64).round() as usize).max(1);
        let bw = ((scale * clip.width as f64).round() as usize).max(1);
        let top = rng.gen_range(0..=clip.height - bh);
        let left = rng.gen_range(0..=clip.width - bw);
        clip = crop_resize(&clip, scale, top, left)?;
    }
    if rng.gen_bool(policy.video_color_jitter) {
        let b = rng.gen_range(-0.2..=0.2);
        let c = rng.gen_range(0.8..=1.2);
        clip = color_jitter(&clip, b, c);
    }
    if rng.gen_bool(policy.video_gray) {
        clip = gray_scale(&clip);
    }
    Ok(clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn noise_reverb_examples() {
        // unit-impulse rir at 0 dB: noise power equals signal power
        let wave: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.05).sin() * 0.5).collect();
        let noise: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.31).cos()).collect();
        let out = add_noise_reverb(&wave, &noise, &[1.0], 0.0).unwrap();
        let added: Vec<f64> = out.iter().zip(&wave).map(|(o, s)| o - s).collect();
        let rel = (power(&added) - power(&wave)).abs() / power(&wave);
        assert!(rel < 1e-6, "relative power mismatch {rel}");

        // hand convolution: rir [1, 0.5] on [1, 0, 0]
        let conv = fft_convolve_truncated(&[1.0, 0.0, 0.0], &[1.0, 0.5]);
        for (got, want) in conv.iter().zip([1.0, 0.5, 0.0]) {
            assert!((got - want).abs() < 1e-9);
        }

        // silence as noise -> SNR undefined
        assert!(matches!(
            add_noise_reverb(&wave, &[0.0; 100], &[1.0], 0.0),
            Err(Error::Validation(_))
        ));
        // rir without energy
        assert!(matches!(
            add_noise_reverb(&wave, &noise, &[0.0], 0.0),
            Err(Error::Validation(_))
        ));
        // SNR outside the allowed range
        assert!(add_noise_reverb(&wave, &noise, &[1.0], 20.0).is_err());
    }

    #[test]
    fn volume_perturb_examples() {
        let wave = vec![0.8];
        assert_eq!(volume_perturb(&wave, 1.0).unwrap(), wave);
        assert!((volume_perturb(&wave, 0.125).unwrap()[0] - 0.1).abs() < 1e-12);
        // full-scale sample at gain 2 clips
        assert_eq!(volume_perturb(&[1.0], 2.0).unwrap(), vec![1.0]);
        assert!(volume_perturb(&wave, 0.1).is_err());
        assert!(volume_perturb(&wave, 2.1).is_err());
    }

    #[test]
    fn speed_perturb_lengths() {
        let wave = vec![0.1; 16000];
        assert_eq!(speed_perturb(&wave, 1.0).unwrap().len(), 16000);
        assert_eq!(speed_perturb(&wave, 1.1).unwrap().len(), 14545);
        assert_eq!(speed_perturb(&wave, 0.9).unwrap().len(), 17778);
        assert!(speed_perturb(&wave, 0.89).is_err());
        // exact length formula across the whole ratio range
        for k in 0..100 {
            let ratio = 0.9 + 0.2 * k as f64 / 99.0;
            let out = speed_perturb(&wave, ratio).unwrap();
            assert_eq!(out.len(), (16000.0 / ratio).round() as usize, "ratio {ratio}");
        }
    }

    #[test]
    fn trim_examples() {
        let wave: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let end = trim_slightly(&wave, TrimSide::End).unwrap();
        assert_eq!(end.len(), 950);
        assert_eq!(end[0], 0.0);
        let begin = trim_slightly(&wave, TrimSide::Begin).unwrap();
        assert_eq!(begin.len(), 950);
        assert_eq!(begin[0], 50.0);
        // degenerate single sample survives
        assert_eq!(trim_slightly(&[0.5], TrimSide::End).unwrap(), vec![0.5]);
    }

    #[test]
    fn spec_augment_masks_and_bounds() {
        let data = Array2::from_shape_fn((100, MEL_BINS), |(t, m)| 1.0 + (t + m) as f64);
        let spec = Spectrogram { data };
        // zero masks -> identity
        assert_eq!(spec_augment(&spec, 0, 10, 0, 10, 1).unwrap(), spec);
        // deterministic under seed
        let a = spec_augment(&spec, 2, 10, 2, 20, 42).unwrap();
        let b = spec_augment(&spec, 2, 10, 2, 20, 42).unwrap();
        assert_eq!(a, b);
        // only masked cells change, and the zeroed fraction is bounded
        let zeroed = a.data.iter().filter(|&&v| v == 0.0).count();
        let total = 100 * MEL_BINS;
        let bound = 2.0 * 10.0 / MEL_BINS as f64 + 2.0 * 20.0 / 100.0;
        assert!(zeroed as f64 / total as f64 <= bound);
        for ((t, m), &v) in a.data.indexed_iter() {
            assert!(v == 0.0 || v == spec.data[[t, m]]);
        }
        // mask wider than the axis is rejected
        assert!(spec_augment(&spec, 1, 81, 0, 0, 1).is_err());
        assert!(spec_augment(&spec, 0, 0, 1, 101, 1).is_err());
    }

    #[test]
    fn negative_subsegment_behavior() {
        let sr = 16000;
        let wave: Vec<f64> = (0..2 * sr).map(|i| i as f64).collect();
        let out = negative_subsegment(&wave, false, sr as u32, 7).unwrap();
        assert!(out.len() >= sr && out.len() <= 2 * sr);
        // contiguous slice: consecutive differences of the ramp stay 1
        for pair in out.windows(2) {
            assert_eq!(pair[1] - pair[0], 1.0);
        }
        // positives are refused
        assert!(matches!(
            negative_subsegment(&wave, true, sr as u32, 7),
            Err(Error::Validation(_))
        ));
        // too-short input passes through
        let short = vec![0.3; 6400]; // 0.4 s
        assert_eq!(negative_subsegment(&short, false, sr as u32, 7).unwrap(), short);
    }

    fn test_clip() -> VideoClip {
        let (f, h, w, c) = (3, 8, 8, 3);
        VideoClip {
            frames: f,
            height: h,
            width: w,
            channels: c,
            data: (0..f * h * w * c).map(|i| (i * 7 % 256) as u8).collect(),
        }
    }

    #[test]
    fn video_identity_flip_and_gray() {
        let clip = test_clip();
        // all probabilities zero -> identity
        let out = augment_video(&clip, &AugmentPolicy::default(), 3).unwrap();
        assert_eq!(out, clip);
        // flipping twice restores the original
        assert_eq!(flip_horizontal(&flip_horizontal(&clip)), clip);
        // gray scaling equalizes the channels
        let gray = gray_scale(&clip);
        for px in gray.data.chunks_exact(3) {
            assert!(px[0] == px[1] && px[1] == px[2]);
        }
    }

    #[test]
    fn video_transforms_share_parameters_across_frames() {
        // rotation by 0 degrees is the identity; by 90/ -90 the mapping is
        // exact for a square frame, so apply-then-invert restores the frame
        let clip = test_clip();
        assert_eq!(rotate_frames(&clip, 0.0), clip);
        let once = rotate_frames(&clip, 90.0);
        let back = rotate_frames(&once, -90.0);
        assert_eq!(back, clip);
        // every frame of a transformed clip got the same transform: frame k of
        // transform(clip) equals transform(frame k alone)
        let rot = rotate_frames(&clip, 7.0);
        let stride = clip.height * clip.width * clip.channels;
        for f in 0..clip.frames {
            let single = VideoClip {
                frames: 1,
                data: clip.data[f * stride..(f + 1) * stride].to_vec(),
                ..clip.clone()
            };
            let rs = rotate_frames(&single, 7.0);
            assert_eq!(&rot.data[f * stride..(f + 1) * stride], &rs.data[..]);
        }
    }

    #[test]
    fn crop_full_scale_is_identity() {
        let clip = test_clip();
        assert_eq!(crop_resize(&clip, 1.0, 0, 0).unwrap(), clip);
        assert!(crop_resize(&clip, 0.5, 7, 0).is_err()); // box out of bounds
    }

    #[test]
    fn video_speed_lengths() {
        let clip = VideoClip {
            frames: 100,
            height: 2,
            width: 2,
            channels: 3,
            data: vec![0; 100 * 2 * 2 * 3],
        };
        assert_eq!(video_speed(&clip, 1.0).unwrap().frames, 100);
        assert_eq!(video_speed(&clip, 1.1).unwrap().frames, 91);
        assert_eq!(video_speed(&clip, 0.9).unwrap().frames, 111);
    }

    #[test]
    fn augment_audio_is_deterministic() {
        let wave: Vec<f64> = (0..16000).map(|i| (i as f64 * 0.01).sin() * 0.4).collect();
        let policy = AugmentPolicy::all(0.7);
        let a = augment_audio(&wave, false, 16000, &policy, 99).unwrap();
        let b = augment_audio(&wave, false, 16000, &policy, 99).unwrap();
        assert_eq!(a, b);
        let c = augment_audio(&wave, false, 16000, &policy, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bad_probability_is_rejected() {
        let mut policy = AugmentPolicy::default();
        policy.vp = 1.5;
        assert!(matches!(
            augment_audio(&[0.1; 1000], true, 16000, &policy, 1),
            Err(Error::Validation(_))
        ));
    }
}
