//! Unimodal wake-word backbones.
//!
//! Four architectures, all ending in global average pooling, a single linear
//! unit and a sigmoid posterior:
//!
//! * `2d-resnet34` — the spectrogram as a one-channel image.
//! * `3d-resnet34` — 3D convolutions over (T, H, W) inputs.
//! * `hybrid` — 3D-ResNet18, spatial average pooling to (C, T), reshaped to a
//!   one-channel (1, T, C) latent image, then 2D-ResNet18.
//! * `hybrid-simam` — the hybrid with SimAM applied inside every residual
//!   block (after the second convolution, before the residual addition).
//!
//! Every model also exposes four level embeddings (the global average pool of
//! each residual stage, dims 64/128/256/512) consumed by HMA fusion.
//!
//! Internally the 2D networks run through the same residual trunk as the 3D
//! ones with a singleton time axis, so there is a single block implementation
//! to maintain.

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::conv::Conv3d;
use crate::nn::linear::Linear;
use crate::nn::norm::BatchNorm;
use crate::nn::pool::MaxPool3d;
use crate::nn::simam::SimAm;
use crate::nn::{GlobalAvgPool, Network, Param, Relu, Scalar, Sigmoid};

pub const CANONICAL_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub const DEFAULT_SIMAM_LAMBDA: f64 = 0.001;

/// Architecture identifier, as stored in checkpoints and configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Res2d34,
    Res3d34,
    Hybrid { simam: bool },
}

impl Arch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::Res2d34 => "2d-resnet34",
            Arch::Res3d34 => "3d-resnet34",
            Arch::Hybrid { simam: false } => "hybrid",
            Arch::Hybrid { simam: true } => "hybrid-simam",
        }
    }

    pub fn from_str(s: &str) -> Result<Arch> {
        match s {
            "2d-resnet34" => Ok(Arch::Res2d34),
            "3d-resnet34" => Ok(Arch::Res3d34),
            "hybrid" => Ok(Arch::Hybrid { simam: false }),
            "hybrid-simam" => Ok(Arch::Hybrid { simam: true }),
            _ => Err(Error::validation(format!("unknown architecture `{s}`"))),
        }
    }

    pub fn use_simam(&self) -> bool {
        matches!(self, Arch::Hybrid { simam: true })
    }
}

/// Input modality; fixes the expected tensor shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Audio,
    Video,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Video => "video",
        }
    }

    pub fn from_str(s: &str) -> Result<Modality> {
        match s {
            "audio" => Ok(Modality::Audio),
            "video" => Ok(Modality::Video),
            _ => Err(Error::validation(format!("unknown modality `{s}`"))),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Modality::Audio => 1,
            Modality::Video => 3,
        }
    }

    /// Expected per-sample input shape (C, T, H, W) for the 3D/hybrid nets.
    pub fn input_3d(&self) -> [usize; 4] {
        match self {
            Modality::Audio => [1, 64, 80, 80],
            Modality::Video => [3, 64, 112, 112],
        }
    }
}

// ---------------------------------------------------------------------------
// Residual trunk
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct TrunkSpec {
    in_ch: usize,
    widths: [usize; 4],
    blocks: [usize; 4],
    stem_kernel: [usize; 3],
    stem_stride: [usize; 3],
    stem_pad: [usize; 3],
    pool_kernel: [usize; 3],
    pool_stride: [usize; 3],
    pool_pad: [usize; 3],
    block_kernel: [usize; 3],
    block_pad: [usize; 3],
    stage_strides: [[usize; 3]; 4],
    simam_lambda: Option<f64>,
}

impl TrunkSpec {
    /// 3D trunk: 3x7x7 stem with stride (1,2,2), temporal stride 2 in
    /// stages 2-4 so T goes 64 -> 8.
    fn three_d(in_ch: usize, widths: [usize; 4], blocks: [usize; 4], simam: Option<f64>) -> Self {
        TrunkSpec {
            in_ch,
            widths,
            blocks,
            stem_kernel: [3, 7, 7],
            stem_stride: [1, 2, 2],
            stem_pad: [1, 3, 3],
            pool_kernel: [1, 3, 3],
            pool_stride: [1, 2, 2],
            pool_pad: [0, 1, 1],
            block_kernel: [3, 3, 3],
            block_pad: [1, 1, 1],
            stage_strides: [[1, 1, 1], [2, 2, 2], [2, 2, 2], [2, 2, 2]],
            simam_lambda: simam,
        }
    }

    /// 2D trunk expressed with a singleton time axis: 7x7 stride-2 stem.
    fn two_d(in_ch: usize, widths: [usize; 4], blocks: [usize; 4], simam: Option<f64>) -> Self {
        TrunkSpec {
            in_ch,
            widths,
            blocks,
            stem_kernel: [1, 7, 7],
            stem_stride: [1, 2, 2],
            stem_pad: [0, 3, 3],
            pool_kernel: [1, 3, 3],
            pool_stride: [1, 2, 2],
            pool_pad: [0, 1, 1],
            block_kernel: [1, 3, 3],
            block_pad: [0, 1, 1],
            stage_strides: [[1, 1, 1], [1, 2, 2], [1, 2, 2], [1, 2, 2]],
            simam_lambda: simam,
        }
    }
}

#[derive(Debug)]
struct BasicBlock<F: Scalar> {
    conv1: Conv3d<F>,
    bn1: BatchNorm<F>,
    relu1: Relu<F>,
    conv2: Conv3d<F>,
    bn2: BatchNorm<F>,
    simam: Option<SimAm<F>>,
    down: Option<(Conv3d<F>, BatchNorm<F>)>,
    relu2: Relu<F>,
}

impl<F: Scalar> BasicBlock<F> {
    fn new(
        c_in: usize,
        c_out: usize,
        kernel: [usize; 3],
        pad: [usize; 3],
        stride: [usize; 3],
        simam_lambda: Option<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let down = (stride != [1, 1, 1] || c_in != c_out).then(|| {
            (
                Conv3d::new(c_in, c_out, [1, 1, 1], stride, [0, 0, 0], rng),
                BatchNorm::new(c_out),
            )
        });
        BasicBlock {
            conv1: Conv3d::new(c_in, c_out, kernel, stride, pad, rng),
            bn1: BatchNorm::new(c_out),
            relu1: Relu::new(),
            conv2: Conv3d::new(c_out, c_out, kernel, [1, 1, 1], pad, rng),
            bn2: BatchNorm::new(c_out),
            simam: simam_lambda
                .map(|l| SimAm::new(l).expect("positive lambda checked at model build")),
            down,
            relu2: Relu::new(),
        }
    }

    fn forward(&mut self, x: &ArrayD<F>, train: bool) -> ArrayD<F> {
        let identity = match &mut self.down {
            Some((conv, bn)) => bn.forward(&conv.forward(x, train), train),
            None => x.clone(),
        };
        let h = self.conv1.forward(x, train);
        let h = self.bn1.forward(&h, train);
        let h = self.relu1.forward(h, train);
        let h = self.conv2.forward(&h, train);
        let mut h = self.bn2.forward(&h, train);
        if let Some(simam) = &mut self.simam {
            h = simam.forward(&h, train);
        }
        h += &identity;
        self.relu2.forward(h, train)
    }

    fn backward(&mut self, gy: ArrayD<F>) -> ArrayD<F> {
        let g = self.relu2.backward(gy);
        let mut gmain = g.clone();
        if let Some(simam) = &mut self.simam {
            gmain = simam.backward(&gmain);
        }
        let gmain = self.bn2.backward(&gmain);
        let gmain = self.conv2.backward(&gmain);
        let gmain = self.relu1.backward(gmain);
        let gmain = self.bn1.backward(&gmain);
        let mut gx = self.conv1.backward(&gmain);
        match &mut self.down {
            Some((conv, bn)) => {
                let gid = bn.backward(&g);
                gx += &conv.backward(&gid);
            }
            None => gx += &g,
        }
        gx
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.bn1.visit_params(&format!("{prefix}.bn1"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
        self.bn2.visit_params(&format!("{prefix}.bn2"), f);
        if let Some((conv, bn)) = &mut self.down {
            conv.visit_params(&format!("{prefix}.down.conv"), f);
            bn.visit_params(&format!("{prefix}.down.bn"), f);
        }
    }
}

#[derive(Debug)]
struct Trunk<F: Scalar> {
    stem_conv: Conv3d<F>,
    stem_bn: BatchNorm<F>,
    stem_relu: Relu<F>,
    stem_pool: MaxPool3d,
    stages: Vec<Vec<BasicBlock<F>>>,
}

impl<F: Scalar> Trunk<F> {
    fn new(spec: &TrunkSpec, rng: &mut ChaCha8Rng) -> Self {
        let stem_conv = Conv3d::new(
            spec.in_ch,
            spec.widths[0],
            spec.stem_kernel,
            spec.stem_stride,
            spec.stem_pad,
            rng,
        );
        let mut stages = Vec::with_capacity(4);
        let mut c_in = spec.widths[0];
        for s in 0..4 {
            let c_out = spec.widths[s];
            let mut blocks = Vec::with_capacity(spec.blocks[s]);
            for b in 0..spec.blocks[s] {
                let stride = if b == 0 { spec.stage_strides[s] } else { [1, 1, 1] };
                blocks.push(BasicBlock::new(
                    if b == 0 { c_in } else { c_out },
                    c_out,
                    spec.block_kernel,
                    spec.block_pad,
                    stride,
                    spec.simam_lambda,
                    rng,
                ));
            }
            stages.push(blocks);
            c_in = c_out;
        }
        Trunk {
            stem_conv,
            stem_bn: BatchNorm::new(spec.widths[0]),
            stem_relu: Relu::new(),
            stem_pool: MaxPool3d::new(spec.pool_kernel, spec.pool_stride, spec.pool_pad),
            stages,
        }
    }

    /// Runs the trunk; when `levels` is given, stores the global average pool
    /// of each stage output into it.
    fn forward(
        &mut self,
        x: &ArrayD<F>,
        train: bool,
        mut levels: Option<&mut Vec<Array2<F>>>,
    ) -> ArrayD<F> {
        let h = self.stem_conv.forward(x, train);
        let h = self.stem_bn.forward(&h, train);
        let h = self.stem_relu.forward(h, train);
        let mut h = self.stem_pool.forward(&h, train);
        for stage in &mut self.stages {
            for block in stage {
                h = block.forward(&h, train);
            }
            if let Some(levels) = levels.as_deref_mut() {
                levels.push(global_mean(&h));
            }
        }
        h
    }

    fn backward(&mut self, gy: ArrayD<F>) -> ArrayD<F> {
        let mut g = gy;
        for stage in self.stages.iter_mut().rev() {
            for block in stage.iter_mut().rev() {
                g = block.backward(g);
            }
        }
        let g = self.stem_pool.backward(&g);
        let g = self.stem_relu.backward(g);
        let g = self.stem_bn.backward(&g);
        self.stem_conv.backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.stem_conv.visit_params(&format!("{prefix}.stem.conv"), f);
        self.stem_bn.visit_params(&format!("{prefix}.stem.bn"), f);
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.visit_params(&format!("{prefix}.stage{}.block{b}", s + 1), f);
            }
        }
    }
}

/// (N, C, ...) -> (N, C) mean, without caching (level taps are read-only).
fn global_mean<F: Scalar>(x: &ArrayD<F>) -> Array2<F> {
    let sh = x.shape();
    let (n, c) = (sh[0], sh[1]);
    let m: usize = sh[2..].iter().product();
    let xs = x.as_slice().unwrap();
    let inv = F::from_f64(1.0 / m as f64);
    Array2::from_shape_fn((n, c), |(i, j)| {
        let base = (i * c + j) * m;
        xs[base..base + m].iter().copied().sum::<F>() * inv
    })
}

// ---------------------------------------------------------------------------
// Spatial pooling + latent-image reshape for the hybrid
// ---------------------------------------------------------------------------

/// Mean over (H, W): (N, C, T, H, W) -> (N, C, T).
#[derive(Debug, Default)]
struct SpatialAvgPool {
    in_shape: Option<Vec<usize>>,
}

impl SpatialAvgPool {
    fn forward<F: Scalar>(&mut self, x: &ArrayD<F>, train: bool) -> ArrayD<F> {
        let sh = x.shape().to_vec();
        let (n, c, t) = (sh[0], sh[1], sh[2]);
        let hw = sh[3] * sh[4];
        let xs = x.as_slice().unwrap();
        let inv = F::from_f64(1.0 / hw as f64);
        let mut y = ArrayD::<F>::zeros(IxDyn(&[n, c, t]));
        let ys = y.as_slice_mut().unwrap();
        for i in 0..n * c * t {
            ys[i] = xs[i * hw..(i + 1) * hw].iter().copied().sum::<F>() * inv;
        }
        if train {
            self.in_shape = Some(sh);
        }
        y
    }

    fn backward<F: Scalar>(&mut self, gy: &ArrayD<F>) -> ArrayD<F> {
        let sh = self.in_shape.take().expect("pool backward without forward");
        let hw = sh[3] * sh[4];
        let inv = F::from_f64(1.0 / hw as f64);
        let mut gx = ArrayD::<F>::zeros(IxDyn(&sh));
        let gxs = gx.as_slice_mut().unwrap();
        let gys = gy.as_slice().unwrap();
        for (i, &g) in gys.iter().enumerate() {
            let v = g * inv;
            for dst in &mut gxs[i * hw..(i + 1) * hw] {
                *dst = v;
            }
        }
        gx
    }
}

/// (N, C, T) -> (N, 1, 1, T, C): the pooled 3D features become a one-channel
/// latent image for the 2D trunk.
fn to_latent_image<F: Scalar>(x: &ArrayD<F>) -> ArrayD<F> {
    let sh = x.shape();
    let (n, c, t) = (sh[0], sh[1], sh[2]);
    let perm = x.view().permuted_axes(IxDyn(&[0, 2, 1]));
    let owned = perm.as_standard_layout().to_owned();
    owned.into_shape(IxDyn(&[n, 1, 1, t, c])).unwrap()
}

fn from_latent_image_grad<F: Scalar>(gy: &ArrayD<F>) -> ArrayD<F> {
    let sh = gy.shape();
    let (n, t, c) = (sh[0], sh[3], sh[4]);
    let g3 = gy.view().into_shape(IxDyn(&[n, t, c])).unwrap();
    let perm = g3.permuted_axes(IxDyn(&[0, 2, 1]));
    perm.as_standard_layout().to_owned()
}

// ---------------------------------------------------------------------------
// Full models
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum Body<F: Scalar> {
    /// 2D-ResNet34 over the (1, T', 80) spectrogram image.
    Plain2d(Trunk<F>),
    /// 3D-ResNet34 over (C, T, H, W).
    Plain3d(Trunk<F>),
    /// 3D-ResNet18 -> spatial pool -> (1, T, C) latent image -> 2D-ResNet18.
    Hybrid {
        trunk3d: Trunk<F>,
        spool: SpatialAvgPool,
        trunk2d: Trunk<F>,
    },
}

/// A unimodal wake-word model: backbone + pooled linear head + sigmoid.
#[derive(Debug)]
pub struct Model<F: Scalar> {
    pub arch: Arch,
    pub modality: Modality,
    pub seed: u64,
    widths: [usize; 4],
    /// When true (canonical constructors), inputs are validated against the
    /// published tensor shapes.
    strict_shapes: bool,
    body: Body<F>,
    head_pool: GlobalAvgPool,
    head_fc: Linear<F>,
    head_sig: Sigmoid<F>,
}

/// Per-sample output: posterior plus the four per-stage level embeddings.
#[derive(Debug, Clone)]
pub struct LevelEmbeddings<F> {
    /// One vector per residual stage, dims = stage widths.
    pub vectors: Vec<Vec<F>>,
}

impl<F: Scalar> Model<F> {
    /// Canonical model (widths 64/128/256/512), deterministic in `seed`.
    pub fn new(arch: Arch, modality: Modality, seed: u64) -> Self {
        if arch == Arch::Res2d34 && modality == Modality::Video {
            // 2D net is defined for the spectrogram image only.
            panic!("2d-resnet34 is an audio-only architecture");
        }
        Self::with_widths(arch, modality, CANONICAL_WIDTHS, seed, true)
    }

    /// Reduced-width variant for cheap tests. Not shape-strict.
    pub fn with_widths(
        arch: Arch,
        modality: Modality,
        widths: [usize; 4],
        seed: u64,
        strict_shapes: bool,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lambda = arch.use_simam().then_some(DEFAULT_SIMAM_LAMBDA);
        let body = match arch {
            Arch::Res2d34 => Body::Plain2d(Trunk::new(
                &TrunkSpec::two_d(1, widths, [3, 4, 6, 3], None),
                &mut rng,
            )),
            Arch::Res3d34 => Body::Plain3d(Trunk::new(
                &TrunkSpec::three_d(modality.channels(), widths, [3, 4, 6, 3], None),
                &mut rng,
            )),
            Arch::Hybrid { .. } => {
                let trunk3d = Trunk::new(
                    &TrunkSpec::three_d(modality.channels(), widths, [2, 2, 2, 2], lambda),
                    &mut rng,
                );
                let trunk2d = Trunk::new(
                    &TrunkSpec::two_d(1, widths, [2, 2, 2, 2], lambda),
                    &mut rng,
                );
                Body::Hybrid {
                    trunk3d,
                    spool: SpatialAvgPool::default(),
                    trunk2d,
                }
            }
        };
        let head_fc = Linear::new(widths[3], 1, &mut rng);
        Model {
            arch,
            modality,
            seed,
            widths,
            strict_shapes,
            body,
            head_pool: GlobalAvgPool::new(),
            head_fc,
            head_sig: Sigmoid::new(),
        }
    }

    /// Expected per-sample input shape.
    pub fn input_shape(&self) -> Vec<usize> {
        match self.arch {
            Arch::Res2d34 => vec![1, 256, 80],
            _ => self.modality.input_3d().to_vec(),
        }
    }

    pub fn widths(&self) -> [usize; 4] {
        self.widths
    }

    fn validate_input(&self, x: &ArrayD<F>) -> Result<()> {
        let expect_rank = match self.arch {
            Arch::Res2d34 => 4, // (N, 1, T', D)
            _ => 5,             // (N, C, T, H, W)
        };
        if x.ndim() != expect_rank {
            return Err(Error::validation(format!(
                "{}: expected rank-{expect_rank} batch input, got shape {:?}",
                self.arch.as_str(),
                x.shape()
            )));
        }
        if self.strict_shapes {
            let want = self.input_shape();
            if x.shape()[1..] != want[..] {
                return Err(Error::validation(format!(
                    "{}: expected per-sample shape {:?}, got {:?}",
                    self.arch.as_str(),
                    want,
                    &x.shape()[1..]
                )));
            }
        } else if x.shape()[1]
            != match self.arch {
                Arch::Res2d34 => 1,
                _ => self.modality.channels(),
            }
        {
            return Err(Error::validation(format!(
                "{}: channel mismatch for shape {:?}",
                self.arch.as_str(),
                x.shape()
            )));
        }
        if x.iter().any(|&v| !Scalar::to_f64(v).is_finite()) {
            return Err(Error::numeric("non-finite values in model input"));
        }
        Ok(())
    }

    fn run_body(
        &mut self,
        x: &ArrayD<F>,
        train: bool,
        levels: Option<&mut Vec<Array2<F>>>,
    ) -> ArrayD<F> {
        match &mut self.body {
            Body::Plain2d(trunk) => {
                let sh = x.shape().to_vec();
                let x5 = x
                    .view()
                    .into_shape(IxDyn(&[sh[0], 1, 1, sh[2], sh[3]]))
                    .unwrap()
                    .to_owned();
                trunk.forward(&x5, train, levels)
            }
            Body::Plain3d(trunk) => trunk.forward(x, train, levels),
            Body::Hybrid {
                trunk3d,
                spool,
                trunk2d,
            } => {
                let h = trunk3d.forward(x, train, None);
                let h = spool.forward(&h, train);
                let img = to_latent_image(&h);
                trunk2d.forward(&img, train, levels)
            }
        }
    }

    fn backward_body(&mut self, gy: ArrayD<F>) -> ArrayD<F> {
        match &mut self.body {
            Body::Plain2d(trunk) => trunk.backward(gy),
            Body::Plain3d(trunk) => trunk.backward(gy),
            Body::Hybrid {
                trunk3d,
                spool,
                trunk2d,
            } => {
                let g = trunk2d.backward(gy);
                let g = from_latent_image_grad(&g);
                let g = spool.backward(&g);
                trunk3d.backward(g)
            }
        }
    }

    /// Batch forward: x is (N, ...) -> posterior per sample.
    pub fn forward(&mut self, x: &ArrayD<F>, train: bool) -> Result<Array1<F>> {
        self.validate_input(x)?;
        let h = self.run_body(x, train, None);
        let pooled = self.head_pool.forward(&h, train);
        let logits = self.head_fc.forward(&pooled, train);
        let probs = self.head_sig.forward(logits, train);
        let n = x.shape()[0];
        let out = Array1::from_iter(probs.iter().copied());
        debug_assert_eq!(out.len(), n);
        if out.iter().any(|&v| !Scalar::to_f64(v).is_finite()) {
            return Err(Error::numeric("non-finite posterior"));
        }
        Ok(out)
    }

    /// Eval-mode forward that also returns the four level embeddings per
    /// sample.
    pub fn forward_with_levels(
        &mut self,
        x: &ArrayD<F>,
    ) -> Result<(Array1<F>, Vec<LevelEmbeddings<F>>)> {
        self.validate_input(x)?;
        let mut levels: Vec<Array2<F>> = Vec::with_capacity(4);
        let h = self.run_body(x, false, Some(&mut levels));
        let pooled = self.head_pool.forward(&h, false);
        let logits = self.head_fc.forward(&pooled, false);
        let probs = self.head_sig.forward(logits, false);
        let n = x.shape()[0];
        let per_sample = (0..n)
            .map(|i| LevelEmbeddings {
                vectors: levels.iter().map(|l| l.row(i).to_vec()).collect(),
            })
            .collect();
        Ok((Array1::from_iter(probs.iter().copied()), per_sample))
    }

    /// Backward from d(loss)/d(prob) per sample. Gradients accumulate into
    /// the parameters; call [`crate::nn::zero_grads`] between logical batches.
    /// Returns the gradient with respect to the batch input.
    pub fn backward(&mut self, gprobs: &Array1<F>) -> ArrayD<F> {
        let n = gprobs.len();
        let g = ArrayD::from_shape_vec(IxDyn(&[n, 1]), gprobs.to_vec()).unwrap();
        let g = self.head_sig.backward(g);
        let g = self.head_fc.backward(&g);
        let g = self.head_pool.backward(&g);
        let gx = self.backward_body(g);
        match self.arch {
            // undo the singleton-time reshape applied on the way in
            Arch::Res2d34 => {
                let sh = gx.shape().to_vec();
                gx.into_shape(IxDyn(&[sh[0], sh[1], sh[3], sh[4]])).unwrap()
            }
            _ => gx,
        }
    }
}

impl<F: Scalar> Network<F> for Model<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        match &mut self.body {
            Body::Plain2d(trunk) => trunk.visit_params("trunk2d", f),
            Body::Plain3d(trunk) => trunk.visit_params("trunk3d", f),
            Body::Hybrid {
                trunk3d, trunk2d, ..
            } => {
                trunk3d.visit_params("trunk3d", f);
                trunk2d.visit_params("trunk2d", f);
            }
        }
        self.head_fc.visit_params("head.fc", f);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"AVWWSCK1";

/// Checkpoint metadata stored ahead of the parameter tensors.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointHeader {
    pub architecture: String,
    pub modality: String,
    pub use_simam: bool,
    pub seed: u64,
    pub epoch: u32,
    pub dev_loss: f64,
}

pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    header: &CheckpointHeader,
    model: &mut Model<F>,
) -> Result<()> {
    let tensors = crate::nn::export_params(model);
    write_checkpoint_raw(path, header, &tensors)
}

pub fn write_checkpoint_raw(
    path: &Path,
    header: &CheckpointHeader,
    tensors: &[(String, Vec<usize>, Vec<f32>)],
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    w.write_all(CKPT_MAGIC).map_err(io_err)?;
    let hdr = serde_json::to_vec(header).expect("header serializes");
    w.write_all(&(hdr.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&hdr).map_err(io_err)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, shape, data) in tensors {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(nb).map_err(io_err)?;
        w.write_all(&(shape.len() as u32).to_le_bytes()).map_err(io_err)?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
        }
        let mut buf = Vec::with_capacity(data.len() * 4);
        for &v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub type RawCheckpoint = (CheckpointHeader, Vec<(String, Vec<usize>, Vec<f32>)>);

pub fn read_checkpoint_raw(path: &Path) -> Result<RawCheckpoint> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    let io_err = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::validation(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io_err)?;
    let hdr_len = u32::from_le_bytes(u32buf) as usize;
    let mut hdr = vec![0u8; hdr_len];
    r.read_exact(&mut hdr).map_err(io_err)?;
    let header: CheckpointHeader = serde_json::from_slice(&hdr)
        .map_err(|e| Error::validation(format!("bad checkpoint header: {e}")))?;
    r.read_exact(&mut u32buf).map_err(io_err)?;
    let n_tensors = u32::from_le_bytes(u32buf) as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        r.read_exact(&mut u32buf).map_err(io_err)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::validation("non-utf8 tensor name".to_string()))?;
        r.read_exact(&mut u32buf).map_err(io_err)?;
        let ndim = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(ndim);
        let mut u64buf = [0u8; 8];
        for _ in 0..ndim {
            r.read_exact(&mut u64buf).map_err(io_err)?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        let len: usize = shape.iter().product();
        let mut buf = vec![0u8; len * 4];
        r.read_exact(&mut buf).map_err(io_err)?;
        let data: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((name, shape, data));
    }
    Ok((header, tensors))
}

/// Rebuilds the model a checkpoint describes and loads its weights.
pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<(CheckpointHeader, Model<F>)> {
    let (header, tensors) = read_checkpoint_raw(path)?;
    let arch = Arch::from_str(&header.architecture)?;
    if arch.use_simam() != header.use_simam {
        return Err(Error::validation(
            "checkpoint header use_simam disagrees with architecture id".to_string(),
        ));
    }
    let modality = Modality::from_str(&header.modality)?;
    let mut model = Model::new(arch, modality, header.seed);
    crate::nn::import_params(&mut model, &tensors)?;
    Ok((header, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param_count;

    const TINY: [usize; 4] = [4, 8, 8, 16];

    fn random_input(shape: &[usize], seed: u64) -> ArrayD<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_simple_fn(IxDyn(shape), || {
            crate::nn::init::standard_normal(&mut rng) as f32
        })
    }

    #[test]
    fn tiny_models_emit_probabilities_and_levels() {
        for arch in [
            Arch::Res2d34,
            Arch::Res3d34,
            Arch::Hybrid { simam: false },
            Arch::Hybrid { simam: true },
        ] {
            let mut model = Model::<f32>::with_widths(arch, Modality::Audio, TINY, 7, false);
            let x = match arch {
                Arch::Res2d34 => random_input(&[2, 1, 64, 40], 1),
                _ => random_input(&[2, 1, 16, 40, 40], 1),
            };
            let (probs, levels) = model.forward_with_levels(&x).unwrap();
            assert_eq!(probs.len(), 2);
            assert!(probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
            assert_eq!(levels.len(), 2);
            for le in &levels {
                assert_eq!(le.vectors.len(), 4);
                for (v, w) in le.vectors.iter().zip(TINY) {
                    assert_eq!(v.len(), w);
                }
            }
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut model =
            Model::<f32>::with_widths(Arch::Hybrid { simam: true }, Modality::Audio, TINY, 3, false);
        let x = random_input(&[1, 1, 16, 40, 40], 2);
        let p1 = model.forward(&x, false).unwrap();
        let p2 = model.forward(&x, false).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn simam_does_not_change_parameter_count() {
        let mut plain =
            Model::<f32>::with_widths(Arch::Hybrid { simam: false }, Modality::Audio, TINY, 1, false);
        let mut simam =
            Model::<f32>::with_widths(Arch::Hybrid { simam: true }, Modality::Audio, TINY, 1, false);
        assert_eq!(param_count(&mut plain), param_count(&mut simam));
    }

    #[test]
    fn hybrid_has_fewer_parameters_than_3d_resnet34() {
        let mut hybrid =
            Model::<f32>::with_widths(Arch::Hybrid { simam: false }, Modality::Audio, TINY, 1, false);
        let mut res3d =
            Model::<f32>::with_widths(Arch::Res3d34, Modality::Audio, TINY, 1, false);
        assert!(param_count(&mut hybrid) < param_count(&mut res3d));
    }

    #[test]
    fn strict_models_reject_wrong_shapes() {
        let mut model = Model::<f32>::new(Arch::Hybrid { simam: false }, Modality::Audio, 1);
        let x = random_input(&[1, 1, 16, 40, 40], 2);
        assert!(matches!(
            model.forward(&x, false),
            Err(Error::Validation(_))
        ));
        let mut m2 = Model::<f32>::new(Arch::Res2d34, Modality::Audio, 1);
        let x = random_input(&[1, 1, 64, 40], 2);
        assert!(matches!(m2.forward(&x, false), Err(Error::Validation(_))));
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut model =
            Model::<f32>::with_widths(Arch::Res2d34, Modality::Audio, TINY, 11, false);
        let x = random_input(&[2, 1, 64, 40], 5);
        let p_before = model.forward(&x, false).unwrap();
        let header = CheckpointHeader {
            architecture: model.arch.as_str().into(),
            modality: "audio".into(),
            use_simam: false,
            seed: 11,
            epoch: 1,
            dev_loss: 0.5,
        };
        save_checkpoint(&path, &header, &mut model).unwrap();
        // reload into a differently seeded model of the same shape
        let (hdr, tensors) = read_checkpoint_raw(&path).unwrap();
        assert_eq!(hdr, header);
        let mut fresh = Model::<f32>::with_widths(Arch::Res2d34, Modality::Audio, TINY, 99, false);
        crate::nn::import_params(&mut fresh, &tensors).unwrap();
        let p_after = fresh.forward(&x, false).unwrap();
        assert_eq!(p_before, p_after);
    }

    #[test]
    fn full_model_input_gradient_matches_finite_differences() {
        // End-to-end check through both trunks, SimAM, pooling and the head.
        let widths = [2, 2, 2, 2];
        let x = {
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            ArrayD::from_shape_simple_fn(IxDyn(&[1, 1, 4, 8, 8]), || {
                crate::nn::init::standard_normal(&mut rng)
            })
        };
        let loss = |x: &ArrayD<f64>| -> f64 {
            let mut m = Model::<f64>::with_widths(
                Arch::Hybrid { simam: true },
                Modality::Audio,
                widths,
                42,
                false,
            );
            m.forward(x, true).unwrap().sum()
        };
        let mut model = Model::<f64>::with_widths(
            Arch::Hybrid { simam: true },
            Modality::Audio,
            widths,
            42,
            false,
        );
        let probs = model.forward(&x, true).unwrap();
        let gx = model.backward(&Array1::ones(probs.len()));
        crate::nn::gradcheck::check_input_grad(&x, loss, &gx, 1e-5, 2e-3);
    }

    #[test]
    fn training_step_reduces_loss_on_tiny_batch() {
        // One fixed batch, repeated Adam steps: weighted BCE should fall.
        let mut model =
            Model::<f32>::with_widths(Arch::Hybrid { simam: true }, Modality::Audio, TINY, 21, false);
        let x = random_input(&[4, 1, 16, 40, 40], 9);
        let labels = [1.0f32, 0.0, 1.0, 0.0];
        let mut opt = crate::nn::adam::Adam::new(0.001);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..12 {
            crate::nn::zero_grads(&mut model);
            let probs = model.forward(&x, true).unwrap();
            let mut loss = 0.0f32;
            let mut gprobs = Array1::<f32>::zeros(4);
            for i in 0..4 {
                let p = probs[i].clamp(1e-7, 1.0 - 1e-7);
                let y = labels[i];
                loss += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()) / 4.0;
                gprobs[i] = (-(y / p) + (1.0 - y) / (1.0 - p)) / 4.0;
            }
            model.backward(&gprobs);
            opt.step(&mut model);
            first.get_or_insert(loss);
            last = loss;
        }
        assert!(
            last < first.unwrap(),
            "loss did not decrease: {} -> {last}",
            first.unwrap()
        );
    }
}
