//! Audio-visual fusion: score-level combination, a two-stage cascade, and
//! hierarchical modality aggregation (HMA).
//!
//! HMA concatenates the audio and video embeddings tapped at each of the four
//! residual levels, projects every level to a shared 128-dim space, combines
//! the levels with a learned softmax attention, and classifies with a single
//! linear unit + sigmoid. The unimodal backbones stay frozen while the HMA
//! head trains.

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbones::{CheckpointHeader, LevelEmbeddings, RawCheckpoint};
use crate::error::{Error, Result};
use crate::nn::linear::Linear;
use crate::nn::{Network, Param, Scalar, Sigmoid};

pub const HMA_PROJ_DIM: usize = 128;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 0.5;
pub const DEFAULT_TH_LOW: f64 = 0.1;
pub const DEFAULT_TH_HIGH: f64 = 0.4;

/// Convex combination of the unimodal posteriors: alpha * p_a + beta * p_v.
pub fn score_fusion(p_a: f64, p_v: f64, alpha: f64, beta: f64) -> Result<f64> {
    for (name, v) in [("p_a", p_a), ("p_v", p_v), ("alpha", alpha), ("beta", beta)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::validation(format!("{name}={v} outside [0, 1]")));
        }
    }
    if (alpha + beta - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "fusion weights must sum to 1, got {alpha} + {beta}"
        )));
    }
    Ok(alpha * p_a + beta * p_v)
}

/// Two-stage decision: the video system first rejects anything below `th_l`;
/// survivors are decided by the audio posterior at `th_h`.
pub fn cascaded_decision(p_v: f64, p_a: f64, th_l: f64, th_h: f64) -> Result<bool> {
    for (name, v) in [("p_v", p_v), ("p_a", p_a), ("th_l", th_l), ("th_h", th_h)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::validation(format!("{name}={v} outside [0, 1]")));
        }
    }
    if th_l > th_h {
        return Err(Error::validation(format!(
            "th_l {th_l} exceeds th_h {th_h}"
        )));
    }
    if p_v < th_l {
        return Ok(false);
    }
    Ok(p_a >= th_h)
}

// ---------------------------------------------------------------------------
// HMA
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct HmaModel<F: Scalar> {
    /// Dim of the concatenated audio+video embedding per level.
    pub level_dims: [usize; 4],
    projs: Vec<Linear<F>>,
    /// Softmax logits over the four levels.
    attention: Param<F>,
    fc: Linear<F>,
    sig: Sigmoid<F>,
    cache: Option<Cache<F>>,
}

#[derive(Debug)]
struct Cache<F> {
    z: Vec<ArrayD<F>>, // per-level projections, each (N, 128)
    attn: [F; 4],
}

impl<F: Scalar> HmaModel<F> {
    pub fn new(level_dims: [usize; 4], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projs = level_dims
            .iter()
            .map(|&d| Linear::new(d, HMA_PROJ_DIM, &mut rng))
            .collect();
        let fc = Linear::new(HMA_PROJ_DIM, 1, &mut rng);
        HmaModel {
            level_dims,
            projs,
            attention: Param::new(ArrayD::zeros(IxDyn(&[4]))),
            fc,
            sig: Sigmoid::new(),
            cache: None,
        }
    }

    /// Head for backbones with the given stage widths (both modalities alike).
    pub fn for_widths(widths: [usize; 4], seed: u64) -> Self {
        Self::new(widths.map(|w| 2 * w), seed)
    }

    fn softmax_attention(&self) -> [F; 4] {
        let logits = self.attention.value.as_slice().unwrap();
        let max = logits.iter().copied().fold(F::from_f64(f64::NEG_INFINITY), F::max);
        let exps: Vec<F> = logits.iter().map(|&v| (v - max).exp()).collect();
        let sum: F = exps.iter().copied().sum();
        [exps[0] / sum, exps[1] / sum, exps[2] / sum, exps[3] / sum]
    }

    /// levels[l]: (N, level_dims[l]) concatenated audio+video embeddings.
    pub fn forward(&mut self, levels: &[Array2<F>], train: bool) -> Result<Array1<F>> {
        if levels.len() != 4 {
            return Err(Error::validation(format!(
                "expected 4 level embeddings, got {}",
                levels.len()
            )));
        }
        let n = levels[0].nrows();
        for (l, lv) in levels.iter().enumerate() {
            if lv.ncols() != self.level_dims[l] || lv.nrows() != n {
                return Err(Error::validation(format!(
                    "level {l}: expected ({n}, {}), got {:?}",
                    self.level_dims[l],
                    lv.dim()
                )));
            }
        }
        let attn = self.softmax_attention();
        let mut combined = ArrayD::<F>::zeros(IxDyn(&[n, HMA_PROJ_DIM]));
        let mut zs = Vec::with_capacity(4);
        for (l, lv) in levels.iter().enumerate() {
            let z = self.projs[l].forward(&lv.clone().into_dyn(), train);
            combined.scaled_add(attn[l], &z);
            zs.push(z);
        }
        let logits = self.fc.forward(&combined, train);
        let probs = self.sig.forward(logits, train);
        if train {
            self.cache = Some(Cache { z: zs, attn });
        }
        Ok(Array1::from_iter(probs.iter().copied()))
    }

    /// Backward from d(loss)/d(prob); accumulates parameter gradients and
    /// returns nothing (the level embeddings come from frozen backbones).
    pub fn backward(&mut self, gprobs: &Array1<F>) {
        let cache = self.cache.take().expect("hma backward without forward");
        let n = gprobs.len();
        let g = ArrayD::from_shape_vec(IxDyn(&[n, 1]), gprobs.to_vec()).unwrap();
        let g = self.sig.backward(g);
        let gcombined = self.fc.backward(&g);
        // attention logits: s_l = <gcombined, z_l>, g_theta = a .* (s - a.s)
        let s: Vec<F> = cache
            .z
            .iter()
            .map(|z| {
                gcombined
                    .iter()
                    .zip(z.iter())
                    .map(|(&a, &b)| a * b)
                    .sum::<F>()
            })
            .collect();
        let dot: F = (0..4).map(|l| cache.attn[l] * s[l]).sum();
        {
            let gth = self.attention.grad.as_slice_mut().unwrap();
            for l in 0..4 {
                gth[l] = gth[l] + cache.attn[l] * (s[l] - dot);
            }
        }
        for (l, proj) in self.projs.iter_mut().enumerate() {
            let gz = gcombined.mapv(|v| v * cache.attn[l]);
            let _ = proj.backward(&gz);
        }
    }
}

impl<F: Scalar> Network<F> for HmaModel<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        for (l, proj) in self.projs.iter_mut().enumerate() {
            proj.visit_params(&format!("hma.proj{l}"), f);
        }
        f("hma.level_attention", &mut self.attention);
        self.fc.visit_params("hma.fc", f);
    }
}

/// Stacks per-sample audio+video level embeddings into the four (N, 2w_l)
/// batch matrices the HMA head consumes.
pub fn concat_level_batches<F: Scalar>(
    pairs: &[(&LevelEmbeddings<F>, &LevelEmbeddings<F>)],
) -> Result<Vec<Array2<F>>> {
    if pairs.is_empty() {
        return Err(Error::validation("no embedding pairs to fuse"));
    }
    let mut out = Vec::with_capacity(4);
    for l in 0..4 {
        let dim_a = pairs[0].0.vectors[l].len();
        let dim_v = pairs[0].1.vectors[l].len();
        let mut m = Array2::<F>::zeros((pairs.len(), dim_a + dim_v));
        for (i, (a, v)) in pairs.iter().enumerate() {
            if a.vectors.len() != 4 || v.vectors.len() != 4 {
                return Err(Error::validation("expected 4 levels per modality"));
            }
            if a.vectors[l].len() != dim_a || v.vectors[l].len() != dim_v {
                return Err(Error::validation(format!(
                    "level {l}: inconsistent embedding dims across the batch"
                )));
            }
            for (j, &x) in a.vectors[l].iter().enumerate() {
                m[[i, j]] = x;
            }
            for (j, &x) in v.vectors[l].iter().enumerate() {
                m[[i, dim_a + j]] = x;
            }
        }
        out.push(m);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Checkpoint averaging
// ---------------------------------------------------------------------------

/// Parameter-wise mean of the `k` checkpoints with the lowest recorded dev
/// loss. With fewer than `k` checkpoints, all are used (with a warning).
pub fn average_checkpoints(paths: &[std::path::PathBuf], k: usize) -> Result<RawCheckpoint> {
    if paths.is_empty() || k == 0 {
        return Err(Error::validation("nothing to average"));
    }
    let mut loaded: Vec<RawCheckpoint> = paths
        .iter()
        .map(|p| crate::backbones::read_checkpoint_raw(p))
        .collect::<Result<_>>()?;
    let first = loaded[0].0.clone();
    for (h, _) in &loaded {
        if h.architecture != first.architecture
            || h.modality != first.modality
            || h.use_simam != first.use_simam
        {
            return Err(Error::validation(format!(
                "cannot average {}/{} with {}/{}",
                first.architecture, first.modality, h.architecture, h.modality
            )));
        }
    }
    if loaded.len() < k {
        eprintln!(
            "warning: only {} checkpoints available, averaging all of them",
            loaded.len()
        );
    }
    loaded.sort_by(|a, b| a.0.dev_loss.partial_cmp(&b.0.dev_loss).unwrap());
    let take = k.min(loaded.len());
    let selected = &loaded[..take];

    let template = &selected[0].1;
    let mut sums: Vec<Vec<f64>> = template.iter().map(|(_, _, d)| vec![0.0; d.len()]).collect();
    for (_, tensors) in selected {
        if tensors.len() != template.len() {
            return Err(Error::validation("checkpoint tensor sets differ"));
        }
        for (i, (name, shape, data)) in tensors.iter().enumerate() {
            let (tname, tshape, _) = &template[i];
            if name != tname || shape != tshape {
                return Err(Error::validation(format!(
                    "tensor mismatch while averaging: `{name}` vs `{tname}`"
                )));
            }
            for (acc, &v) in sums[i].iter_mut().zip(data) {
                *acc += v as f64;
            }
        }
    }
    let inv = 1.0 / take as f64;
    let tensors: Vec<(String, Vec<usize>, Vec<f32>)> = template
        .iter()
        .zip(&sums)
        .map(|((name, shape, _), sum)| {
            (
                name.clone(),
                shape.clone(),
                sum.iter().map(|&v| (v * inv) as f32).collect(),
            )
        })
        .collect();
    let mean_loss = selected.iter().map(|(h, _)| h.dev_loss).sum::<f64>() * inv;
    let header = CheckpointHeader {
        architecture: first.architecture,
        modality: first.modality,
        use_simam: first.use_simam,
        seed: first.seed,
        epoch: selected.iter().map(|(h, _)| h.epoch).max().unwrap_or(0),
        dev_loss: mean_loss,
    };
    Ok((header, tensors))
}
