//! End-to-end acceptance checks. Each test prints one PASS/FAIL line; the
//! whole file shares a lock so timing-sensitive checks are never contended.

use std::sync::Mutex;
use std::time::Instant;

use ndarray::{Array1, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use avwws::backbones::{Arch, Modality, Model};
use avwws::data::{generate_synthetic_dataset, load_manifest, SynthConfig};
use avwws::fusion::{cascaded_decision, concat_level_batches, score_fusion, HmaModel};
use avwws::metrics::evaluate;
use avwws::nn::init::standard_normal;
use avwws::nn::simam::{closed_form_min_energy, energy, SimAm};
use avwws::nn::{param_count, zero_grads, Network};
use avwws::training::{
    evaluate_split, prepare_input, train, weighted_bce, weighted_bce_with_grad, TrainConfig,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn run(name: &str, body: impl FnOnce() -> Result<(), String>) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    match body() {
        Ok(()) => println!("acceptance {name}: PASS"),
        Err(msg) => {
            println!("acceptance {name}: FAIL — {msg}");
            panic!("{name}: {msg}");
        }
    }
}

// ---------------------------------------------------------------------------
// 1. closed-form minimal energy matches numeric minimization
// ---------------------------------------------------------------------------

/// Shrinking grid search over (w, b).
fn numeric_min_energy(t: f64, others: &[f64], lambda: f64) -> f64 {
    let (mut w_lo, mut w_hi) = (-5.0, 5.0);
    let (mut b_lo, mut b_hi) = (-5.0, 5.0);
    let (mut best_w, mut best_b, mut best) = (0.0, 0.0, f64::INFINITY);
    for _ in 0..8 {
        for i in 0..=20 {
            let w = w_lo + (w_hi - w_lo) * i as f64 / 20.0;
            for j in 0..=20 {
                let b = b_lo + (b_hi - b_lo) * j as f64 / 20.0;
                let e = energy(w, b, t, others, lambda);
                if e < best {
                    best = e;
                    best_w = w;
                    best_b = b;
                }
            }
        }
        let w_span = (w_hi - w_lo) / 10.0;
        let b_span = (b_hi - b_lo) / 10.0;
        w_lo = best_w - w_span;
        w_hi = best_w + w_span;
        b_lo = best_b - b_span;
        b_hi = best_b + b_span;
    }
    best
}

#[test]
fn criterion_01_attention_energy_closed_form_matches_numeric_minimum() {
    run("1 (closed-form channel energy)", || {
        let t0 = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let lambda = 0.001;
        for &m in &[4usize, 16, 64] {
            for _ in 0..100 {
                let vals: Vec<f64> = (0..m).map(|_| standard_normal(&mut rng)).collect();
                for t_idx in 0..m {
                    let others: Vec<f64> = vals
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != t_idx)
                        .map(|(_, &v)| v)
                        .collect();
                    let closed = closed_form_min_energy(vals[t_idx], &others, lambda);
                    let numeric = numeric_min_energy(vals[t_idx], &others, lambda);
                    let rel = (closed - numeric).abs() / closed.abs().max(1e-12);
                    if rel > 1e-3 {
                        return Err(format!(
                            "M={m} t={}: closed {closed} vs numeric {numeric} (rel {rel})",
                            vals[t_idx]
                        ));
                    }
                }
            }
        }
        let dt = t0.elapsed().as_secs_f64();
        if dt >= 60.0 {
            return Err(format!("took {dt:.1}s (budget 60s)"));
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 2-3. parameter counts
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_attention_adds_no_trainable_parameters() {
    run("2 (attention is parameter-free)", || {
        let with = param_count(&mut Model::<f32>::new(
            Arch::Hybrid { simam: true },
            Modality::Audio,
            0,
        ));
        let without = param_count(&mut Model::<f32>::new(
            Arch::Hybrid { simam: false },
            Modality::Audio,
            0,
        ));
        if with != without {
            return Err(format!("{with} vs {without} trainable parameters"));
        }
        Ok(())
    });
}

#[test]
fn criterion_03_hybrid_has_fewer_parameters_than_full_3d() {
    run("3 (hybrid parameter ordering)", || {
        let hybrid = param_count(&mut Model::<f32>::new(
            Arch::Hybrid { simam: false },
            Modality::Audio,
            0,
        ));
        let full3d = param_count(&mut Model::<f32>::new(Arch::Res3d34, Modality::Audio, 0));
        if hybrid >= full3d {
            return Err(format!("hybrid {hybrid} >= 3D {full3d}"));
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 4. shape contract
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_all_architectures_honor_the_shape_contract() {
    run("4 (shape contract)", || {
        let mut cases: Vec<(Arch, Modality)> = vec![
            (Arch::Res2d34, Modality::Audio),
            (Arch::Res3d34, Modality::Audio),
            (Arch::Hybrid { simam: false }, Modality::Audio),
            (Arch::Hybrid { simam: true }, Modality::Audio),
            (Arch::Hybrid { simam: true }, Modality::Video),
        ];
        for (arch, modality) in cases.drain(..) {
            let mut model = Model::<f32>::new(arch, modality, 3);
            let mut shape = vec![1usize];
            shape.extend(model.input_shape());
            let x = ArrayD::<f32>::from_elem(IxDyn(&shape), 0.05);
            let (probs, levels) = model
                .forward_with_levels(&x)
                .map_err(|e| format!("{}-{}: {e}", arch.as_str(), modality.as_str()))?;
            let p = probs[0];
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{}: prob {p} outside [0,1]", arch.as_str()));
            }
            let dims: Vec<usize> = levels[0].vectors.iter().map(|v| v.len()).collect();
            if dims != vec![64, 128, 256, 512] {
                return Err(format!("{}: level dims {dims:?}", arch.as_str()));
            }
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 5. gradient checks at 64-bit precision
// ---------------------------------------------------------------------------

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn criterion_05_gradients_match_finite_differences() {
    run("5 (gradient checks)", || {
        // loss gradient
        let probs = [0.3f64, 0.7, 0.9, 0.2];
        let labels = [1u8, 0, 1, 0];
        let (_, grads) = weighted_bce_with_grad(&probs, &labels, 1.0, 5.0).unwrap();
        for i in 0..probs.len() {
            let h = 1e-6;
            let mut hi = probs;
            hi[i] += h;
            let mut lo = probs;
            lo[i] -= h;
            let fd = (weighted_bce(&hi, &labels, 1.0, 5.0).unwrap()
                - weighted_bce(&lo, &labels, 1.0, 5.0).unwrap())
                / (2.0 * h);
            if rel_err(fd, grads[i]) > 1e-3 {
                return Err(format!("loss grad {i}: fd {fd} vs {}", grads[i]));
            }
        }

        // attention layer input gradient
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut layer = SimAm::<f64>::new(0.001).unwrap();
        let x = ArrayD::from_shape_simple_fn(IxDyn(&[2, 3, 2, 4, 4]), || standard_normal(&mut rng));
        let c = ArrayD::from_shape_simple_fn(x.raw_dim(), || standard_normal(&mut rng));
        let loss = |layer: &mut SimAm<f64>, x: &ArrayD<f64>| -> f64 {
            (layer.forward(x, false) * &c).sum()
        };
        let _ = layer.forward(&x, true);
        let gx = layer.backward(&c);
        for &flat in &[0usize, 17, 93, 191] {
            let h = 1e-6;
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[flat] += h;
            let mut xm = x.clone();
            xm.as_slice_mut().unwrap()[flat] -= h;
            let fd = (loss(&mut layer, &xp) - loss(&mut layer, &xm)) / (2.0 * h);
            let an = gx.as_slice().unwrap()[flat];
            if rel_err(fd, an) > 1e-3 {
                return Err(format!("attention grad [{flat}]: fd {fd} vs {an}"));
            }
        }

        // one convolution weight per residual stage of the hybrid model
        let mut model = Model::<f64>::with_widths(
            Arch::Hybrid { simam: true },
            Modality::Audio,
            [2, 2, 2, 2],
            9,
            false,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let x = ArrayD::from_shape_simple_fn(IxDyn(&[2, 1, 4, 8, 8]), || {
            standard_normal(&mut rng) * 0.5
        });
        let labels = [1u8, 0];
        let loss_of = |model: &mut Model<f64>, x: &ArrayD<f64>| -> f64 {
            let p = model.forward(x, true).unwrap();
            weighted_bce(p.as_slice().unwrap(), &labels, 1.0, 5.0).unwrap()
        };
        zero_grads(&mut model);
        let p = model.forward(&x, true).unwrap();
        let (_, gp) = weighted_bce_with_grad(p.as_slice().unwrap(), &labels, 1.0, 5.0).unwrap();
        let _ = model.backward(&Array1::from_vec(gp));
        let stages: Vec<String> = (1..=4)
            .flat_map(|s| {
                ["trunk3d", "trunk2d"]
                    .iter()
                    .map(move |t| format!("{t}.stage{s}.block0.conv1.weight"))
            })
            .collect();
        let mut pick = ChaCha8Rng::seed_from_u64(57);
        for name in &stages {
            let (len, elem) = {
                let mut info = None;
                model.visit_params(&mut |n, p| {
                    if n == name {
                        info = Some(p.value.len());
                    }
                });
                let len = info.ok_or_else(|| format!("parameter {name} not found"))?;
                (len, rand::Rng::gen_range(&mut pick, 0..len))
            };
            let _ = len;
            let analytic = {
                let mut g = None;
                model.visit_params(&mut |n, p| {
                    if n == name {
                        g = Some(p.grad.as_slice().unwrap()[elem]);
                    }
                });
                g.unwrap()
            };
            let h = 1e-5;
            let set = |delta: f64, model: &mut Model<f64>| {
                model.visit_params(&mut |n, p| {
                    if n == name {
                        p.value.as_slice_mut().unwrap()[elem] += delta;
                    }
                });
            };
            set(h, &mut model);
            let up = loss_of(&mut model, &x);
            set(-2.0 * h, &mut model);
            let down = loss_of(&mut model, &x);
            set(h, &mut model);
            let fd = (up - down) / (2.0 * h);
            // an inactive unit yields a true-zero gradient; the central
            // difference then only measures floating-point noise
            let both_zero = fd.abs().max(analytic.abs()) < 1e-6;
            if !both_zero && rel_err(fd, analytic) > 1e-3 {
                return Err(format!("{name}[{elem}]: fd {fd} vs analytic {analytic}"));
            }
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 6. metric identity on published numbers
// ---------------------------------------------------------------------------

/// (id, dev FRR, dev FAR, dev WWS, eval FRR, eval FAR, eval WWS), percentages.
const REPORTED_ROWS: [(&str, [f64; 6]); 20] = [
    ("D1", [12.5, 3.42, 15.92, 16.62, 4.75, 21.36]),
    ("D2", [10.42, 5.68, 16.09, 13.24, 6.77, 20.01]),
    ("D3", [9.78, 5.44, 15.21, 12.08, 8.12, 20.2]),
    ("D4", [8.33, 6.35, 14.68, 13.12, 7.42, 20.54]),
    ("D5", [7.53, 4.62, 12.15, 7.66, 8.59, 16.25]),
    ("D6", [8.65, 4.71, 13.37, 10.79, 6.35, 17.14]),
    ("D7", [5.45, 7.12, 12.57, 7.05, 10.15, 17.2]),
    ("D8", [5.45, 4.76, 10.21, 5.64, 6.05, 11.69]),
    ("D9", [6.09, 4.43, 10.51, 4.97, 7.33, 12.3]),
    ("A1", [5.45, 4.76, 10.21, 5.64, 6.05, 11.69]),
    ("A2", [5.77, 4.28, 10.05, 5.46, 5.88, 11.34]),
    ("A4", [5.93, 3.61, 9.54, 6.38, 4.65, 11.03]),
    ("V1", [8.81, 8.03, 16.85, 18.52, 9.03, 27.54]),
    ("V2", [9.78, 6.64, 16.41, 14.41, 9.62, 24.03]),
    ("V4", [6.89, 9.09, 15.98, 9.56, 13.37, 22.93]),
    ("V5", [9.13, 6.25, 15.39, 8.03, 11.1, 19.13]),
    ("VA1", [7.3, 6.8, 14.1, 10.1, 15.0, 25.1]),
    ("VA5", [1.92, 3.37, 5.29, 1.54, 4.82, 6.36]),
    ("VA6", [5.29, 2.3, 7.59, 7.29, 3.5, 10.79]),
    ("VA7", [3.04, 2.55, 5.59, 2.15, 3.44, 5.59]),
];

#[test]
fn criterion_06_score_additivity_reproduces_reported_rates() {
    run("6 (WWS = FRR + FAR on reported rows)", || {
        for (id, row) in &REPORTED_ROWS {
            for (tag, triple) in [("dev", &row[0..3]), ("eval", &row[3..6])] {
                let (frr, far, wws) = (triple[0], triple[1], triple[2]);
                // reconstruct a score set with exactly these error rates over
                // 10_000 wake and 10_000 non-wake trials
                let n = 10_000usize;
                let n_fr = (frr * 100.0).round() as usize;
                let n_fa = (far * 100.0).round() as usize;
                let mut scores = Vec::with_capacity(2 * n);
                scores.extend(std::iter::repeat((0.1, true)).take(n_fr));
                scores.extend(std::iter::repeat((0.9, true)).take(n - n_fr));
                scores.extend(std::iter::repeat((0.9, false)).take(n_fa));
                scores.extend(std::iter::repeat((0.1, false)).take(n - n_fa));
                let r = evaluate(&scores, 0.5).map_err(|e| e.to_string())?;
                let got_frr = r.frr.unwrap();
                let got_far = r.far.unwrap();
                let got_wws = r.wws.unwrap();
                if (got_frr - frr).abs() > 1e-9 || (got_far - far).abs() > 1e-9 {
                    return Err(format!(
                        "{id} {tag}: reconstructed rates {got_frr}/{got_far} vs {frr}/{far}"
                    ));
                }
                if (got_wws - (got_frr + got_far)).abs() > 1e-9 {
                    return Err(format!("{id} {tag}: WWS is not FRR + FAR"));
                }
                if (got_wws - wws).abs() > 0.01 + 1e-9 {
                    return Err(format!(
                        "{id} {tag}: computed WWS {got_wws} vs reported {wws}"
                    ));
                }
            }
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 7. fusion rules against brute force
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_fusion_rules_match_brute_force_grid() {
    run("7 (fusion oracles over the 101x101 grid)", || {
        for i in 0..=100u32 {
            for j in 0..=100u32 {
                let p_a = i as f64 / 100.0;
                let p_v = j as f64 / 100.0;
                let fused = score_fusion(p_a, p_v, 0.5, 0.5).unwrap();
                let expect = 0.5 * p_a + 0.5 * p_v;
                if fused != expect {
                    return Err(format!("score({p_a},{p_v}) = {fused}, expected {expect}"));
                }
                let dec = cascaded_decision(p_v, p_a, 0.1, 0.4).unwrap();
                let expect = if p_v < 0.1 { false } else { p_a >= 0.4 };
                if dec != expect {
                    return Err(format!("cascade({p_v},{p_a}) = {dec}, expected {expect}"));
                }
            }
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 8. desk-scale learnability + fusion direction of effect
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_audio_model_learns_and_fusion_does_not_hurt() {
    run("8 (learnability and fusion)", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let root = dir.path();
        let synth = SynthConfig::default();
        generate_synthetic_dataset(&synth, root).map_err(|e| e.to_string())?;
        let train_recs = load_manifest(&root.join("train.jsonl")).map_err(|e| e.to_string())?;
        let dev_recs = load_manifest(&root.join("dev.jsonl")).map_err(|e| e.to_string())?;
        if train_recs.len() != 400 || dev_recs.len() != 120 {
            return Err(format!(
                "unexpected default dataset size: {} train / {} dev",
                train_recs.len(),
                dev_recs.len()
            ));
        }

        // audio model, canonical widths
        let audio_cfg = TrainConfig {
            arch: "hybrid-simam".into(),
            modality: "audio".into(),
            batch_size: 4,
            microbatch: 4,
            lr: 0.001,
            epochs: 50,
            early_stop_wws: Some(20.0),
            seed: 0,
            ..TrainConfig::default()
        };
        let mut audio_model = Model::<f32>::new(Arch::Hybrid { simam: true }, Modality::Audio, 0);
        let t0 = Instant::now();
        let stats = train(
            &mut audio_model,
            root,
            &train_recs,
            &dev_recs,
            &audio_cfg,
            &root.join("ckpt-audio"),
        )
        .map_err(|e| e.to_string())?;
        let elapsed = t0.elapsed().as_secs_f64();
        let audio_wws = stats
            .last()
            .and_then(|s| s.dev_wws)
            .ok_or("no dev WWS computed")?;
        if stats.len() > 50 {
            return Err(format!("needed {} epochs", stats.len()));
        }
        if audio_wws > 20.0 {
            return Err(format!(
                "audio dev WWS {audio_wws:.2}% after {} epochs",
                stats.len()
            ));
        }
        if elapsed >= 1800.0 {
            return Err(format!("audio training took {elapsed:.0}s (budget 1800s)"));
        }
        eprintln!(
            "criterion 8: audio dev WWS {audio_wws:.2}% after {} epochs in {elapsed:.0}s",
            stats.len()
        );

        // small video model, same data
        let video_cfg = TrainConfig {
            arch: "hybrid-simam".into(),
            modality: "video".into(),
            batch_size: 4,
            microbatch: 4,
            lr: 0.001,
            epochs: 3,
            seed: 1,
            ..TrainConfig::default()
        };
        let video_widths = [8usize, 16, 32, 64];
        let mut video_model = Model::<f32>::with_widths(
            Arch::Hybrid { simam: true },
            Modality::Video,
            video_widths,
            1,
            true,
        );
        train(
            &mut video_model,
            root,
            &train_recs,
            &dev_recs,
            &video_cfg,
            &root.join("ckpt-video"),
        )
        .map_err(|e| e.to_string())?;
        let (_, video_scores) =
            evaluate_split(&mut video_model, root, &dev_recs, &video_cfg).map_err(|e| e.to_string())?;
        let video_wws = evaluate(&video_scores, 0.5)
            .map_err(|e| e.to_string())?
            .wws
            .ok_or("video dev WWS undefined")?;
        let better_unimodal = audio_wws.min(video_wws);
        eprintln!("criterion 8: video dev WWS {video_wws:.2}%");

        // fused system on frozen level embeddings
        let embed = |audio: &mut Model<f32>,
                     video: &mut Model<f32>,
                     recs: &[avwws::data::SampleRecord],
                     cfg: &TrainConfig|
         -> Result<Vec<_>, String> {
            let mut out = Vec::with_capacity(recs.len());
            for rec in recs {
                let xa = prepare_input(root, rec, audio.arch, audio.modality, cfg, 0, false)
                    .map_err(|e| e.to_string())?
                    .insert_axis(ndarray::Axis(0));
                let (pa, la) = audio.forward_with_levels(&xa).map_err(|e| e.to_string())?;
                let xv = prepare_input(root, rec, video.arch, video.modality, cfg, 0, false)
                    .map_err(|e| e.to_string())?
                    .insert_axis(ndarray::Axis(0));
                let (_pv, lv) = video.forward_with_levels(&xv).map_err(|e| e.to_string())?;
                let _ = pa;
                out.push((
                    la.into_iter().next().unwrap(),
                    lv.into_iter().next().unwrap(),
                    rec.is_positive(),
                ));
            }
            Ok(out)
        };
        let train_emb = embed(&mut audio_model, &mut video_model, &train_recs, &audio_cfg)?;
        let dev_emb = embed(&mut audio_model, &mut video_model, &dev_recs, &audio_cfg)?;

        let level_dims = [64 + 8, 128 + 16, 256 + 32, 512 + 64];
        let mut hma = HmaModel::<f32>::new(level_dims, 0);
        let head_cfg = TrainConfig {
            batch_size: 64,
            ..audio_cfg.clone()
        };
        avwws::pipeline::train_hma_head(&mut hma, &train_emb, &head_cfg, 200, 0.001)
            .map_err(|e| e.to_string())?;

        let mut fused_scores = Vec::with_capacity(dev_emb.len());
        for (la, lv, label) in &dev_emb {
            let levels = concat_level_batches(&[(la, lv)]).map_err(|e| e.to_string())?;
            let p = hma.forward(&levels, false).map_err(|e| e.to_string())?[0] as f64;
            fused_scores.push((p, *label));
        }
        let hma_wws = evaluate(&fused_scores, 0.5)
            .map_err(|e| e.to_string())?
            .wws
            .ok_or("fused dev WWS undefined")?;
        eprintln!("criterion 8: fused dev WWS {hma_wws:.2}% (better unimodal {better_unimodal:.2}%)");
        if hma_wws > better_unimodal {
            return Err(format!(
                "fused dev WWS {hma_wws:.2}% worse than better unimodal {better_unimodal:.2}%"
            ));
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 9. augmentation invariants
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_augmentation_invariants() {
    run("9 (augmentation invariants)", || {
        use avwws::augment::{
            augment_audio, augment_video, negative_subsegment, spec_augment, speed_perturb,
            AugmentPolicy,
        };
        use avwws::data::VideoClip;
        use avwws::features::{compute_fbank, Spectrogram, MEL_BINS};

        // speed change length formula, 100 ratios
        let wave: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.01).sin()).collect();
        for k in 0..100 {
            let ratio = 0.9 + 0.2 * k as f64 / 99.0;
            let out = speed_perturb(&wave, ratio).map_err(|e| e.to_string())?;
            let expect = (wave.len() as f64 / ratio).round() as usize;
            if out.len() != expect {
                return Err(format!("ratio {ratio}: len {} != {expect}", out.len()));
            }
        }

        // masked-fraction bound over 1000 draws
        let spec = Spectrogram {
            data: ndarray::Array2::from_elem((120, MEL_BINS), 1.0),
        };
        for seed in 0..1000u64 {
            let masked = spec_augment(&spec, 2, 10, 2, 25, seed).map_err(|e| e.to_string())?;
            let zero_rows = (0..120)
                .filter(|&t| (0..MEL_BINS).all(|m| masked.data[[t, m]] == 0.0))
                .count();
            let zero_cols = (0..MEL_BINS)
                .filter(|&m| (0..120).all(|t| masked.data[[t, m]] == 0.0))
                .count();
            if zero_rows > 2 * 25 || zero_cols > 2 * 10 {
                return Err(format!(
                    "seed {seed}: {zero_rows} masked frames / {zero_cols} masked bins"
                ));
            }
        }

        // sub-segmentation refuses positive samples
        if negative_subsegment(&wave, true, 16000, 0).is_ok() {
            return Err("sub-segmentation accepted a positive sample".into());
        }

        // determinism under fixed seeds
        let policy = AugmentPolicy::all(1.0);
        let a1 = augment_audio(&wave, false, 16000, &policy, 7).map_err(|e| e.to_string())?;
        let a2 = augment_audio(&wave, false, 16000, &policy, 7).map_err(|e| e.to_string())?;
        if a1 != a2 {
            return Err("audio augmentation not deterministic".into());
        }
        let clip = VideoClip {
            frames: 6,
            height: 112,
            width: 112,
            channels: 3,
            data: (0..6 * 112 * 112 * 3).map(|i| (i % 251) as u8).collect(),
        };
        let v1 = augment_video(&clip, &policy, 7).map_err(|e| e.to_string())?;
        let v2 = augment_video(&clip, &policy, 7).map_err(|e| e.to_string())?;
        if v1.data != v2.data {
            return Err("video augmentation not deterministic".into());
        }
        let s1 = spec_augment(&spec, 2, 10, 2, 25, 3).map_err(|e| e.to_string())?;
        let s2 = spec_augment(&spec, 2, 10, 2, 25, 3).map_err(|e| e.to_string())?;
        if s1.data != s2.data {
            return Err("spectrogram masking not deterministic".into());
        }
        // feature extraction itself is deterministic too
        let f1 = compute_fbank(&wave, 16000).map_err(|e| e.to_string())?;
        let f2 = compute_fbank(&wave, 16000).map_err(|e| e.to_string())?;
        if f1.data != f2.data {
            return Err("filterbank extraction not deterministic".into());
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 10. deterministic CLI runs produce identical score files
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_deterministic_runs_are_digest_identical() {
    run("10 (reproducibility)", || {
        use sha2::{Digest, Sha256};
        let bin = env!("CARGO_BIN_EXE_avwws");
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let root = dir.path();
        let cfg_path = root.join("synth.cfg");
        std::fs::write(
            &cfg_path,
            "n_train_pos = 1\nn_train_neg = 1\nn_dev_pos = 1\nn_dev_neg = 1\n\
             n_eval_pos = 2\nn_eval_neg = 2\nduration_min = 0.7\nduration_max = 1.0\nseed = 5\n",
        )
        .map_err(|e| e.to_string())?;
        let data = root.join("data");
        let status = std::process::Command::new(bin)
            .args(["synth", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&data)
            .arg("--deterministic")
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("synth exited with {status}"));
        }

        // an untrained (but reproducibly initialized) checkpoint is enough
        let mut model = Model::<f32>::new(Arch::Res2d34, Modality::Audio, 42);
        let header = avwws::backbones::CheckpointHeader {
            architecture: "2d-resnet34".into(),
            modality: "audio".into(),
            use_simam: false,
            seed: 42,
            epoch: 0,
            dev_loss: 0.0,
        };
        let ckpt = root.join("model.ckpt");
        avwws::backbones::save_checkpoint(&ckpt, &header, &mut model).map_err(|e| e.to_string())?;

        let mut digests = Vec::new();
        for name in ["run-a", "run-b"] {
            let out = root.join(name);
            let status = std::process::Command::new(bin)
                .args(["eval", "--checkpoint"])
                .arg(&ckpt)
                .arg("--manifest")
                .arg(data.join("eval.jsonl"))
                .args(["--threshold", "0.5", "--seed", "42", "--deterministic", "--out"])
                .arg(&out)
                .status()
                .map_err(|e| e.to_string())?;
            if !status.success() {
                return Err(format!("eval exited with {status}"));
            }
            let bytes = std::fs::read(out.join("scores.csv")).map_err(|e| e.to_string())?;
            digests.push(format!("{:x}", Sha256::digest(&bytes)));
        }
        if digests[0] != digests[1] {
            return Err(format!("digests differ: {} vs {}", digests[0], digests[1]));
        }
        Ok(())
    });
}
