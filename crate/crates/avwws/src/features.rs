//! Front-end feature extraction: waveform -> log-mel spectrogram -> sliced
//! audio tensor, and raw clip -> sampled video tensor.
//!
//! Audio: 80 mel bins, 25 ms frames with 10 ms shift, Hann window, HTK mel
//! scale, natural-log energies floored at 1e-10. The spectrogram is
//! time-normalized to 256 frames and cut into 64 overlapping (80, 80) windows
//! with stride 4, giving the (64, 80, 80, 1) input tensor.
//!
//! Video: clips are resampled to 64 frames by the same nearest-index rule and
//! scaled to [0, 1], giving (64, 112, 112, 3).

use ndarray::{Array2, Array4, ArrayD, IxDyn};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::data::VideoClip;
use crate::error::{Error, Result};

pub const MEL_BINS: usize = 80;
pub const FRAME_LENGTH_SECS: f64 = 0.025;
pub const FRAME_SHIFT_SECS: f64 = 0.010;
pub const LOG_FLOOR: f64 = 1e-10;
/// Normalized spectrogram length T'.
pub const TARGET_FRAMES: usize = 256;
/// Windows per audio tensor and frames per video tensor.
pub const TENSOR_T: usize = 64;
pub const WINDOW_FRAMES: usize = 80;
pub const WINDOW_STRIDE: usize = 4;
/// 256 frames zero-padded so the last stride-4 window of 80 frames fits:
/// 63*4 + 80 = 332.
pub const PADDED_FRAMES: usize = (TENSOR_T - 1) * WINDOW_STRIDE + WINDOW_FRAMES;

/// Log-mel filterbank energies, (time_frames, 80).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array2<f64>,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }
}

/// Sliced spectrogram windows, (64, 80, 80, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct AudioTensor {
    pub data: Array4<f32>,
}

/// Sampled RGB frames in [0, 1], (64, 112, 112, 3).
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    pub data: Array4<f32>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the 80 triangular filters spanning 0..Nyquist.
pub fn mel_center_frequencies(sample_rate: u32) -> Vec<f64> {
    let mel_max = hz_to_mel(sample_rate as f64 / 2.0);
    (1..=MEL_BINS)
        .map(|i| mel_to_hz(mel_max * i as f64 / (MEL_BINS + 1) as f64))
        .collect()
}

/// Computes the log-mel filterbank spectrogram.
pub fn compute_fbank(waveform: &[f64], sample_rate: u32) -> Result<Spectrogram> {
    if sample_rate == 0 {
        return Err(Error::validation("sample_rate must be positive"));
    }
    let frame_len = (FRAME_LENGTH_SECS * sample_rate as f64).round() as usize;
    let frame_shift = (FRAME_SHIFT_SECS * sample_rate as f64).round() as usize;
    if waveform.len() < frame_len {
        return Err(Error::validation(format!(
            "waveform of {} samples is shorter than one {frame_len}-sample frame",
            waveform.len()
        )));
    }
    let n_frames = 1 + (waveform.len() - frame_len) / frame_shift;
    let n_fft = frame_len.next_power_of_two();
    let n_bins = n_fft / 2 + 1;

    let window: Vec<f64> = (0..frame_len)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / frame_len as f64).cos())
        .collect();

    // triangular filters on the FFT power bins, HTK mel spacing
    let mel_max = hz_to_mel(sample_rate as f64 / 2.0);
    let mel_points: Vec<f64> = (0..MEL_BINS + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (MEL_BINS + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut filters: Vec<Vec<(usize, f64)>> = Vec::with_capacity(MEL_BINS);
    for m in 0..MEL_BINS {
        let (lo, center, hi) = (mel_points[m], mel_points[m + 1], mel_points[m + 2]);
        let mut taps = Vec::new();
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > lo && f < center {
                (f - lo) / (center - lo)
            } else if f >= center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            if w > 0.0 {
                taps.push((k, w));
            }
        }
        filters.push(taps);
    }

    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut data = Array2::<f64>::zeros((n_frames, MEL_BINS));
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0f64; n_bins];
    for t in 0..n_frames {
        let start = t * frame_shift;
        for i in 0..n_fft {
            let v = if i < frame_len {
                waveform[start + i] * window[i]
            } else {
                0.0
            };
            buf[i] = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            power[k] = buf[k].norm_sqr();
        }
        for (m, taps) in filters.iter().enumerate() {
            let e: f64 = taps.iter().map(|&(k, w)| w * power[k]).sum();
            data[[t, m]] = e.max(LOG_FLOOR).ln();
        }
    }
    Ok(Spectrogram { data })
}

/// Nearest-index uniform resampling positions: round(i * (n_in - 1) / (n_out - 1)).
fn resample_indices(n_in: usize, n_out: usize) -> Vec<usize> {
    (0..n_out)
        .map(|i| {
            if n_out == 1 {
                0
            } else {
                ((i * (n_in - 1)) as f64 / (n_out - 1) as f64).round() as usize
            }
        })
        .collect()
}

/// Resamples the time axis to exactly `target_frames` by nearest-index
/// selection; every output frame is a copy of some input frame.
pub fn normalize_time(spec: &Spectrogram, target_frames: usize) -> Result<Spectrogram> {
    if spec.frames() == 0 {
        return Err(Error::validation("cannot time-normalize an empty spectrogram"));
    }
    if target_frames == 0 {
        return Err(Error::validation("target_frames must be positive"));
    }
    let idx = resample_indices(spec.frames(), target_frames);
    let mut data = Array2::<f64>::zeros((target_frames, MEL_BINS));
    for (i, &src) in idx.iter().enumerate() {
        data.row_mut(i).assign(&spec.data.row(src));
    }
    Ok(Spectrogram { data })
}

/// Slices the normalized spectrogram into 64 overlapping (80, 80) windows.
pub fn tensorize_windows(spec: &Spectrogram) -> Result<AudioTensor> {
    if spec.data.dim() != (TARGET_FRAMES, MEL_BINS) {
        return Err(Error::validation(format!(
            "expected a ({TARGET_FRAMES}, {MEL_BINS}) spectrogram, got {:?}",
            spec.data.dim()
        )));
    }
    let mut data = Array4::<f32>::zeros((TENSOR_T, WINDOW_FRAMES, MEL_BINS, 1));
    for w in 0..TENSOR_T {
        for r in 0..WINDOW_FRAMES {
            let frame = w * WINDOW_STRIDE + r;
            if frame < TARGET_FRAMES {
                for m in 0..MEL_BINS {
                    data[[w, r, m, 0]] = spec.data[[frame, m]] as f32;
                }
            }
            // frames in [256, 332) stay zero-padded
        }
    }
    Ok(AudioTensor { data })
}

/// Resamples a clip to 64 frames and scales pixel values to [0, 1].
pub fn sample_video_frames(clip: &VideoClip) -> Result<VideoTensor> {
    if clip.frames == 0 {
        return Err(Error::validation("cannot sample an empty clip"));
    }
    if clip.height != 112 || clip.width != 112 || clip.channels != 3 {
        return Err(Error::validation(format!(
            "expected 112x112x3 frames, got {}x{}x{}",
            clip.height, clip.width, clip.channels
        )));
    }
    let idx = resample_indices(clip.frames, TENSOR_T);
    let stride = clip.height * clip.width * clip.channels;
    let mut data = Array4::<f32>::zeros((TENSOR_T, 112, 112, 3));
    for (f, &src) in idx.iter().enumerate() {
        let frame = &clip.data[src * stride..(src + 1) * stride];
        let mut out = data.index_axis_mut(ndarray::Axis(0), f);
        let out = out.as_slice_mut().unwrap();
        for (dst, &px) in out.iter_mut().zip(frame) {
            *dst = px as f32 / 255.0;
        }
    }
    Ok(VideoTensor { data })
}

impl AudioTensor {
    /// Channels-first model layout: (1, 64, 80, 80).
    pub fn to_model_input(&self) -> ArrayD<f32> {
        let mut out = ArrayD::<f32>::zeros(IxDyn(&[1, TENSOR_T, WINDOW_FRAMES, MEL_BINS]));
        for t in 0..TENSOR_T {
            for h in 0..WINDOW_FRAMES {
                for w in 0..MEL_BINS {
                    out[[0, t, h, w]] = self.data[[t, h, w, 0]];
                }
            }
        }
        out
    }
}

impl VideoTensor {
    /// Channels-first model layout: (3, 64, 112, 112).
    pub fn to_model_input(&self) -> ArrayD<f32> {
        let mut out = ArrayD::<f32>::zeros(IxDyn(&[3, TENSOR_T, 112, 112]));
        for t in 0..TENSOR_T {
            for h in 0..112 {
                for w in 0..112 {
                    for c in 0..3 {
                        out[[c, t, h, w]] = self.data[[t, h, w, c]];
                    }
                }
            }
        }
        out
    }
}

/// Full audio front end: waveform -> (64, 80, 80, 1) tensor.
pub fn audio_tensor(waveform: &[f64], sample_rate: u32) -> Result<AudioTensor> {
    let spec = compute_fbank(waveform, sample_rate)?;
    let spec = normalize_time(&spec, TARGET_FRAMES)?;
    tensorize_windows(&spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, secs: f64, sr: u32) -> Vec<f64> {
        (0..(secs * sr as f64) as usize)
            .map(|i| 0.8 * (std::f64::consts::TAU * freq * i as f64 / sr as f64).sin())
            .collect()
    }

    #[test]
    fn one_second_at_16k_gives_98_frames() {
        let spec = compute_fbank(&vec![0.1; 16000], 16000).unwrap();
        assert_eq!(spec.data.dim(), (98, MEL_BINS));
    }

    #[test]
    fn zero_waveform_hits_the_log_floor() {
        let spec = compute_fbank(&vec![0.0; 16000], 16000).unwrap();
        let floor = LOG_FLOOR.ln();
        assert!(spec.data.iter().all(|&v| (v - floor).abs() < 1e-12));
    }

    #[test]
    fn pure_tone_peaks_in_the_nearest_mel_bin() {
        // Oracle: mel center frequencies computed from the scale definition,
        // independently of the filterbank construction.
        let sr = 16000;
        let spec = compute_fbank(&tone(1000.0, 1.0, sr), sr).unwrap();
        let mean: Vec<f64> = (0..MEL_BINS)
            .map(|m| spec.data.column(m).sum() / spec.frames() as f64)
            .collect();
        let argmax = mean
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let centers = mel_center_frequencies(sr);
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - 1000.0)
                    .abs()
                    .partial_cmp(&(b.1 - 1000.0).abs())
                    .unwrap()
            })
            .unwrap()
            .0;
        assert_eq!(argmax, nearest, "centers near peak: {:?}", &centers[argmax.saturating_sub(1)..=argmax + 1]);
    }

    #[test]
    fn too_short_waveform_is_rejected() {
        assert!(matches!(
            compute_fbank(&[0.0; 399], 16000),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn normalize_time_identity_and_broadcast() {
        let spec = compute_fbank(&tone(500.0, 2.6, 16000), 16000).unwrap();
        let norm = normalize_time(&spec, TARGET_FRAMES).unwrap();
        assert_eq!(norm.frames(), TARGET_FRAMES);
        // identity when the length already matches
        let again = normalize_time(&norm, TARGET_FRAMES).unwrap();
        assert_eq!(again, norm);
        // one frame -> 256 copies
        let single = Spectrogram {
            data: spec.data.slice(ndarray::s![0..1, ..]).to_owned(),
        };
        let rep = normalize_time(&single, TARGET_FRAMES).unwrap();
        for i in 0..TARGET_FRAMES {
            assert_eq!(rep.data.row(i), single.data.row(0));
        }
    }

    #[test]
    fn normalize_time_follows_the_rounding_rule() {
        // 512 input frames: output i = input round(i * 511 / 255)
        let data = Array2::from_shape_fn((512, MEL_BINS), |(t, _)| t as f64);
        let spec = Spectrogram { data };
        let norm = normalize_time(&spec, 256).unwrap();
        for i in 0..256 {
            let want = ((i * 511) as f64 / 255.0).round();
            assert_eq!(norm.data[[i, 0]], want, "frame {i}");
        }
    }

    #[test]
    fn window_slicing_shape_and_padding() {
        let data = Array2::from_shape_fn((TARGET_FRAMES, MEL_BINS), |(t, m)| {
            (t * MEL_BINS + m) as f64
        });
        let spec = Spectrogram { data: data.clone() };
        let tensor = tensorize_windows(&spec).unwrap();
        assert_eq!(tensor.data.dim(), (64, 80, 80, 1));
        // window 0 = frames 0..80
        for r in 0..80 {
            for m in 0..80 {
                assert_eq!(tensor.data[[0, r, m, 0]], data[[r, m]] as f32);
            }
        }
        // window 63 starts at frame 252: rows 4.. are zero padding
        for r in 4..80 {
            for m in 0..80 {
                assert_eq!(tensor.data[[63, r, m, 0]], 0.0);
            }
        }
        // rows 0..4 of each window concatenated reconstruct frames 0..256
        for w in 0..64 {
            for r in 0..4 {
                for m in 0..80 {
                    assert_eq!(tensor.data[[w, r, m, 0]], data[[w * 4 + r, m]] as f32);
                }
            }
        }
    }

    #[test]
    fn wrong_spectrogram_shape_is_rejected() {
        let spec = Spectrogram {
            data: Array2::zeros((100, MEL_BINS)),
        };
        assert!(matches!(
            tensorize_windows(&spec),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn video_sampling_rules() {
        let frame_px = 112 * 112 * 3;
        let make = |frames: usize| VideoClip {
            frames,
            height: 112,
            width: 112,
            channels: 3,
            data: (0..frames)
                .flat_map(|f| std::iter::repeat((f % 256) as u8).take(frame_px))
                .collect(),
        };
        // identity at 64 frames
        let t = sample_video_frames(&make(64)).unwrap();
        assert_eq!(t.data.dim(), (64, 112, 112, 3));
        for f in 0..64 {
            assert_eq!(t.data[[f, 0, 0, 0]], f as f32 / 255.0);
        }
        // one frame -> 64 copies
        let t = sample_video_frames(&make(1)).unwrap();
        assert!(t.data.iter().all(|&v| v == 0.0));
        // 128 frames: output i = input round(i * 127 / 63)
        let t = sample_video_frames(&make(128)).unwrap();
        for i in 0..64 {
            let want = ((i * 127) as f64 / 63.0).round();
            assert_eq!(t.data[[i, 0, 0, 0]], want as f32 / 255.0, "frame {i}");
        }
        // values stay inside [0, 1]
        assert!(t.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn empty_clip_is_rejected() {
        let clip = VideoClip {
            frames: 0,
            height: 112,
            width: 112,
            channels: 3,
            data: vec![],
        };
        assert!(matches!(
            sample_video_frames(&clip),
            Err(Error::Validation(_))
        ));
    }
}
