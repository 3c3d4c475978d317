//! Acceptance criteria, one test each. Every test writes a single
//! `[PASS]`, `[FAIL]` or `[SKIP]` line straight to stdout (bypassing the
//! harness capture) so the summary is visible in a plain `cargo test` run.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use genrenet_cli::{
    cmd_augment, cmd_baselines, cmd_features, cmd_synth, cmd_train, ArchChoice, AugmentArgs, BaselinesArgs, CliError, FeaturesArgs,
    KindChoice, MonitorChoice, ReprChoice, SplitChoice, SynthArgs, TrainArgs,
};
use genrenet_core::audio::decode_wav;
use genrenet_core::dataset::{build_manifest, group_shuffle_split, leaked_songs, naive_split, ImageSet, Manifest, ManifestEntry, GENRES};
use genrenet_core::dsp::*;
use genrenet_core::metrics::{weighted_metrics, ConfusionMatrix};
use genrenet_core::models::{build_cnn_baseline, build_model, load_model, save_model, Architecture, ColumnFeatures, GenreDistribution};
use genrenet_core::pipeline::{classify_clip, WindowMode};
use genrenet_core::recommend::{recommend, title_for, Catalog, CatalogEntry, Similarity};
use genrenet_core::trainer::{evaluate, train, Monitor, TrainConfig};
use genrenet_nn::activation::{relu, relu_backward, sigmoid, sigmoid_backward, tanh, tanh_backward};
use genrenet_nn::conv::{conv2d, conv2d_backward};
use genrenet_nn::dropout::{dropout, dropout_backward};
use genrenet_nn::gradcheck::{gradient_check, project, projection};
use genrenet_nn::gru::{bigru_sequence, bigru_sequence_backward, gru_cell, gru_cell_backward};
use genrenet_nn::linear::{linear, linear_backward};
use genrenet_nn::loss::softmax_cross_entropy;
use genrenet_nn::norm::{batch_norm_backward, batch_norm_train};
use genrenet_nn::pool::{adaptive_maxpool1x1, global_avgpool, global_avgpool_backward, maxpool2d, maxpool2d_backward};
use genrenet_nn::{BasicBlock, Direction, GruWeights, Layer, Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn report(name: &str, started: Instant, outcome: Outcome) {
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => emit(&format!("[PASS] {name} ({secs:.1}s): {detail}")),
        Err(detail) => {
            emit(&format!("[FAIL] {name} ({secs:.1}s): {detail}"));
            panic!("{name}: {detail}");
        }
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_signal(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

/// Direct O(N^2) DFT of every centered Hann frame, as (re, im) pairs.
fn direct_stft(x: &[f32], p: &StftParams) -> Vec<Vec<(f64, f64)>> {
    let (win, fft) = (p.window_length, p.fft_length);
    let hann: Vec<f64> = (0..win).map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / win as f64).cos()).collect();
    let angle = |j: usize| std::f64::consts::TAU * j as f64 / fft as f64;
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..fft).map(|j| (angle(j).cos(), angle(j).sin())).unzip();
    (0..1 + x.len() / p.hop_length)
        .map(|t| {
            let frame: Vec<f64> =
                (0..win).map(|n| x[reflect((t * p.hop_length + n) as isize - (win / 2) as isize, x.len())] as f64 * hann[n]).collect();
            (0..=fft / 2)
                .map(|k| {
                    frame.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, v)| {
                        let j = (k * n) % fft;
                        (re + v * cos[j], im - v * sin[j])
                    })
                })
                .collect()
        })
        .collect()
}

#[test]
fn dsp_oracles() {
    let started = Instant::now();
    let outcome = (|| {
        let p = StftParams::default();
        let mut worst_stft = 0.0f64;
        for seed in 0..50 {
            let x = random_signal(4096, 1000 + seed);
            let spec = stft(&x, 22050, &p).map_err(|e| e.to_string())?;
            let want = direct_stft(&x, &p);
            ensure(spec.n_frames == want.len(), || format!("frame count {} vs {}", spec.n_frames, want.len()))?;
            let scale = want.iter().flatten().fold(0.0f64, |m, c| m.max(c.0.hypot(c.1)));
            for (t, frame) in want.iter().enumerate() {
                for (k, c) in frame.iter().enumerate() {
                    let g = spec.get(k, t);
                    worst_stft = worst_stft.max((g.re - c.0).hypot(g.im - c.1) / scale);
                }
            }
        }
        ensure(worst_stft < 1e-9, || format!("stft relative error {worst_stft:e}"))?;

        let mel700 = hz_to_mel(700.0).map_err(|e| e.to_string())?;
        let mel_err = (mel700 - 2595.0 * 2f64.log10()).abs();
        ensure(mel_err < 1e-9, || format!("hz_to_mel(700) off by {mel_err:e}"))?;

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (m, k, n) = (128, 1025, 130);
        let weights = Matrix::from_vec(m, k, (0..m * k).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let power = Matrix::from_vec(k, n, (0..k * n).map(|_| rng.random_range(0.0..10.0)).collect()).unwrap();
        let bank = FilterbankMatrix { weights: weights.clone(), band_edges: vec![0.0; m + 2] };
        let got = mel_spectrogram(&power, &bank).map_err(|e| e.to_string())?;
        let mut worst_mel = 0.0f64;
        for i in 0..m {
            for j in 0..n {
                let acc: f64 = (0..k).map(|l| weights.get(i, l) * power.get(l, j)).sum();
                worst_mel = worst_mel.max((got.get(i, j) - acc).abs() / acc.abs().max(1.0));
            }
        }
        ensure(worst_mel < 1e-10, || format!("mel product error {worst_mel:e}"))?;
        let secs = started.elapsed().as_secs_f64();
        ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
        Ok(format!("stft {worst_stft:.1e} (<1e-9), mel(700) {mel_err:.1e} (<1e-9), mel product {worst_mel:.1e} (<1e-10)"))
    })();
    report("DSP oracles", started, outcome);
}

#[test]
fn shape_pipeline() {
    let started = Instant::now();
    let outcome = (|| {
        let fx = FeatureExtractor::new(FeatureConfig::default(), 22050).map_err(|e| e.to_string())?;
        let x = random_signal(66150, 3);
        let spec = stft(&x, 22050, &fx.config.stft).map_err(|e| e.to_string())?;
        let mel = fx.log_mel(&x, 22050).map_err(|e| e.to_string())?;
        let a = fx.image(&x, 22050, SpectroKind::Mel).map_err(|e| e.to_string())?;
        let b = fx.image(&x, 22050, SpectroKind::Mel).map_err(|e| e.to_string())?;
        ensure((spec.n_bins, spec.n_frames) == (1025, 130), || format!("stft {}x{}", spec.n_bins, spec.n_frames))?;
        ensure((mel.rows, mel.cols) == (128, 130), || format!("mel {}x{}", mel.rows, mel.cols))?;
        ensure(a.pixels.len() == 224 * 224 * 3, || format!("image has {} values", a.pixels.len()))?;
        let bits = |i: &SpectroImage| i.pixels.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(bits(&a) == bits(&b), || "image differs between runs".into())?;
        let secs = started.elapsed().as_secs_f64();
        ensure(secs < 5.0, || format!("took {secs:.1}s"))?;
        Ok("66150 samples -> 1025x130 -> 128x130 -> 224x224x3, bit-identical".into())
    })();
    report("Shape pipeline", started, outcome);
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn distinct(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_fn(shape, |i| order[i] as f64 * 0.01)
}

fn gru_weights(seed: u64, input: usize, hidden: usize, bias: bool) -> GruWeights<f64> {
    GruWeights::new("g", input, hidden, bias, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// First input whose ReLU pre-activations (train-mode block) all clear `margin`.
fn kink_free_input(block: &BasicBlock<f64>, shape: &[usize], seed: u64, margin: f64) -> Tensor<f64> {
    let bn = |t: &Tensor<f64>, n: &genrenet_nn::BatchNorm<f64>| batch_norm_train(t, &n.gamma.value, &n.beta.value, n.eps).unwrap().output;
    let conv = |t: &Tensor<f64>, c: &genrenet_nn::Conv2d<f64>| {
        conv2d(t, &c.weight.value, c.bias.as_ref().map(|b| &b.value), c.stride, c.padding).unwrap()
    };
    let margin_of = |x: &Tensor<f64>| {
        let pre1 = bn(&conv(x, &block.conv1), &block.bn1);
        let shortcut = match &block.downsample {
            Some((c, n)) => bn(&conv(x, c), n),
            None => x.clone(),
        };
        let f = bn(&conv(&relu(&pre1), &block.conv2), &block.bn2);
        let pre2: Vec<f64> = f.data().iter().zip(shortcut.data()).map(|(a, b)| a + b).collect();
        pre1.data().iter().chain(&pre2).fold(f64::INFINITY, |m, v| m.min(v.abs()))
    };
    (seed..seed + 20000).map(|s| random(shape, s)).find(|x| margin_of(x) > margin).expect("no kink-free input")
}

fn gradient_errors() -> Vec<(&'static str, f64)> {
    const STEP: f64 = 1e-6;
    let mut errs = Vec::new();

    let x = random(&[2, 3, 6, 6], 1);
    let w = random(&[4, 3, 3, 3], 2);
    let b = random(&[4], 3);
    let proj = projection(&[2, 4, 3, 3], 4);
    let conv = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
        (project(&conv2d(x, w, Some(b), 2, 1).unwrap(), &proj), conv2d_backward(x, w, &proj, 2, 1).unwrap())
    };
    errs.push(("conv2d input", gradient_check(&x, STEP, |t| (conv(t, &w, &b).0, conv(t, &w, &b).1.input))));
    errs.push(("conv2d weight", gradient_check(&w, STEP, |t| (conv(&x, t, &b).0, conv(&x, t, &b).1.weight))));
    errs.push(("conv2d bias", gradient_check(&b, STEP, |t| (conv(&x, &w, t).0, conv(&x, &w, t).1.bias))));

    let x = distinct(&[2, 2, 7, 7], 5);
    let proj = projection(&[2, 2, 4, 4], 6);
    errs.push((
        "maxpool2d",
        gradient_check(&x, STEP, |x| {
            let (y, idx) = maxpool2d(x, 3, 2, 1).unwrap();
            (project(&y, &proj), maxpool2d_backward(x.shape(), &idx, &proj).unwrap())
        }),
    ));
    let proj = projection(&[2, 2, 1, 1], 7);
    errs.push((
        "adaptive maxpool",
        gradient_check(&x, STEP, |x| {
            let (y, idx) = adaptive_maxpool1x1(x).unwrap();
            (project(&y, &proj), maxpool2d_backward(x.shape(), &idx, &proj).unwrap())
        }),
    ));
    errs.push((
        "global avgpool",
        gradient_check(&x, STEP, |x| (project(&global_avgpool(x).unwrap(), &proj), global_avgpool_backward(x.shape(), &proj).unwrap())),
    ));

    let x = random(&[4, 7], 8);
    let w = random(&[7, 5], 9);
    let b = random(&[5], 10);
    let proj = projection(&[4, 5], 11);
    let lin = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
        (project(&linear(x, w, Some(b)).unwrap(), &proj), linear_backward(x, w, &proj).unwrap())
    };
    errs.push(("linear input", gradient_check(&x, STEP, |t| (lin(t, &w, &b).0, lin(t, &w, &b).1 .0))));
    errs.push(("linear weight", gradient_check(&w, STEP, |t| (lin(&x, t, &b).0, lin(&x, t, &b).1 .1))));
    errs.push(("linear bias", gradient_check(&b, STEP, |t| (lin(&x, &w, t).0, lin(&x, &w, t).1 .2))));

    let x = random(&[4, 3, 5, 5], 12);
    let gamma = random(&[3], 13).map(|v| v + 1.5);
    let beta = random(&[3], 14);
    let proj = projection(&[4, 3, 5, 5], 15);
    let bn = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
        let out = batch_norm_train(x, g, b, 1e-5).unwrap();
        (project(&out.output, &proj), batch_norm_backward(&out.cache, g, &proj).unwrap())
    };
    errs.push(("batchnorm input", gradient_check(&x, 1e-3, |t| (bn(t, &gamma, &beta).0, bn(t, &gamma, &beta).1 .0))));
    errs.push(("batchnorm gamma", gradient_check(&gamma, 1e-3, |t| (bn(&x, t, &beta).0, bn(&x, t, &beta).1 .1))));
    errs.push(("batchnorm beta", gradient_check(&beta, 1e-3, |t| (bn(&x, &gamma, t).0, bn(&x, &gamma, t).1 .2))));

    let x = random(&[3, 8], 16);
    let proj = projection(&[3, 8], 17);
    errs.push((
        "dropout eval",
        gradient_check(&x, STEP, |x| {
            let (y, mask) = dropout(x, 0.5, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            (project(&y, &proj), dropout_backward(mask.as_deref(), &proj).unwrap())
        }),
    ));

    let x = random(&[5, 6], 18).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let proj = projection(&[5, 6], 19);
    errs.push(("relu", gradient_check(&x, STEP, |x| (project(&relu(x), &proj), relu_backward(x, &proj).unwrap()))));
    errs.push(("sigmoid", gradient_check(&x, STEP, |x| (project(&sigmoid(x), &proj), sigmoid_backward(&sigmoid(x), &proj).unwrap()))));
    errs.push(("tanh", gradient_check(&x, STEP, |x| (project(&tanh(x), &proj), tanh_backward(&tanh(x), &proj).unwrap()))));

    let w = gru_weights(20, 3, 4, true);
    let x = random(&[2, 3], 21);
    let h = random(&[2, 4], 22);
    let proj = projection(&[2, 4], 23);
    let cell = |x: &Tensor<f64>, h: &Tensor<f64>, w: &GruWeights<f64>| {
        let (state, cache) = gru_cell(x, h, w, Direction::Forward).unwrap();
        (project(&state.hidden, &proj), gru_cell_backward(w, &cache, &proj).unwrap())
    };
    errs.push((
        "gru_cell input",
        gradient_check(&x, STEP, |t| {
            let (v, g) = cell(t, &h, &w);
            (v, g.0)
        }),
    ));
    errs.push((
        "gru_cell state",
        gradient_check(&h, STEP, |t| {
            let (v, g) = cell(&x, t, &w);
            (v, g.1)
        }),
    ));
    for (gate, name) in ["gru_cell w_z", "gru_cell w_r", "gru_cell w_h"].into_iter().enumerate() {
        let base = [&w.w_z, &w.w_r, &w.w_h][gate].value.clone();
        errs.push((
            name,
            gradient_check(&base, STEP, |m| {
                let mut w2 = w.clone();
                [&mut w2.w_z, &mut w2.w_r, &mut w2.w_h][gate].value = m.clone();
                let (v, g) = cell(&x, &h, &w2);
                (v, [g.2.w_z, g.2.w_r, g.2.w_h][gate].clone())
            }),
        ));
    }

    let fw = gru_weights(30, 3, 4, false);
    let bw = gru_weights(31, 3, 4, false);
    let x = random(&[5, 2, 3], 32);
    let (pf, pb) = (projection(&[5, 2, 4], 33), projection(&[5, 2, 4], 34));
    let seq = |x: &Tensor<f64>, fw: &GruWeights<f64>, bw: &GruWeights<f64>| {
        let (f, b, cache) = bigru_sequence(x, fw, bw).unwrap();
        (project(&f, &pf) + project(&b, &pb), bigru_sequence_backward(fw, bw, &cache, &pf, &pb).unwrap())
    };
    errs.push((
        "bigru_sequence input",
        gradient_check(&x, STEP, |t| {
            let (v, g) = seq(t, &fw, &bw);
            (v, g.0)
        }),
    ));
    errs.push((
        "bigru_sequence forward w_r",
        gradient_check(&fw.w_r.value, STEP, |m| {
            let mut f2 = fw.clone();
            f2.w_r.value = m.clone();
            let (v, g) = seq(&x, &f2, &bw);
            (v, g.1.w_r)
        }),
    ));
    errs.push((
        "bigru_sequence backward w_h",
        gradient_check(&bw.w_h.value, STEP, |m| {
            let mut b2 = bw.clone();
            b2.w_h.value = m.clone();
            let (v, g) = seq(&x, &fw, &b2);
            (v, g.2.w_h)
        }),
    ));

    // Batch statistics couple every coordinate, so inputs keep all ReLUs well clear of the kink.
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let down = BasicBlock::<f64>::new("d", 4, 6, 2, &mut rng);
    let x = kink_free_input(&down, &[2, 4, 8, 8], 44, 1e-3);
    let proj = projection(&[2, 6, 4, 4], 45);
    errs.push((
        "residual_block input",
        gradient_check(&x, 3e-5, |x| {
            let mut blk = down.clone();
            let y = blk.forward(x, Mode::Train).unwrap();
            (project(&y, &proj), blk.backward(&proj).unwrap())
        }),
    ));
    errs.push((
        "residual_block conv2",
        gradient_check(&down.conv2.weight.value, 3e-5, |w| {
            let mut blk = down.clone();
            blk.conv2.weight.value = w.clone();
            let y = blk.forward(&x, Mode::Train).unwrap();
            blk.backward(&proj).unwrap();
            (project(&y, &proj), Tensor::from_vec(w.shape(), blk.conv2.weight.value.grad().unwrap().to_vec()).unwrap())
        }),
    ));

    let logits = random(&[4, 10], 50).map(|v| v * 3.0);
    errs.push(("cross-entropy loss", gradient_check(&logits, STEP, |l| softmax_cross_entropy(l, &[3, 0, 9, 5]).unwrap())));
    errs
}

#[test]
fn gradient_suite() {
    let started = Instant::now();
    let errs = gradient_errors();
    let (worst_name, worst) = errs.iter().copied().fold(("", 0.0), |m, e| if e.1 > m.1 { e } else { m });
    let failing: Vec<String> = errs.iter().filter(|e| !(e.1 <= 1e-4)).map(|(n, e)| format!("{n} {e:.1e}")).collect();
    let secs = started.elapsed().as_secs_f64();
    let outcome = if !failing.is_empty() {
        Err(format!("above 1e-4: {}", failing.join(", ")))
    } else if secs > 120.0 {
        Err(format!("took {secs:.1}s"))
    } else {
        Ok(format!("{} checks, worst {worst_name} {worst:.1e} (<=1e-4)", errs.len()))
    };
    report("Gradient suite", started, outcome);
}

#[test]
fn gru_hand_cases() {
    let started = Instant::now();
    let outcome = (|| {
        let w = GruWeights::<f64>::zeros("g", 3, 4, false);
        let x = Tensor::from_fn(&[2, 3], |i| i as f64 - 2.0);
        let h = Tensor::from_fn(&[2, 4], |i| i as f64 * 0.37 - 1.1);
        let (state, _) = gru_cell(&x, &h, &w, Direction::Forward).map_err(|e| e.to_string())?;
        let halves = state.hidden.data().iter().zip(h.data()).all(|(n, p)| *n == 0.5 * p);
        ensure(halves, || "zero-weight cell is not exactly 0.5 * h_prev".into())?;

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fw = GruWeights::<f64>::new("f", 3, 4, false, &mut rng);
        let bw = GruWeights::<f64>::new("b", 3, 4, false, &mut rng);
        let (f, b, _) = bigru_sequence(&Tensor::zeros(&[7, 2, 3]), &fw, &bw).map_err(|e| e.to_string())?;
        ensure(f.data().iter().chain(b.data()).all(|&v| v == 0.0), || "zero sequence left zero".into())?;
        Ok("h_new == 0.5*h_prev exactly; zero input and state stay zero over 7 steps".into())
    })();
    report("GRU hand cases", started, outcome);
}

fn full_scale_manifest() -> Manifest {
    let mut entries = Vec::new();
    for (label, g) in GENRES.iter().enumerate() {
        for s in 0..100 {
            for w in 0..5 {
                entries.push(ManifestEntry {
                    image_path: format!("{g}/{g}.{s:05}.w{w}.png").into(),
                    label,
                    song_id: format!("{g}.{s:05}"),
                });
            }
        }
    }
    Manifest { entries }
}

#[test]
fn split_safety() {
    let started = Instant::now();
    let outcome = (|| {
        let m = full_scale_manifest();
        for seed in 0..100 {
            let plan = group_shuffle_split(&m, 0.8, seed).map_err(|e| e.to_string())?;
            let leaked = leaked_songs(&m, &plan).len();
            ensure(leaked == 0, || format!("seed {seed}: {leaked} leaked songs"))?;
        }
        let naive = naive_split(&m, 0.8, 42).map_err(|e| e.to_string())?;
        let leaked = leaked_songs(&m, &naive).len();
        ensure(leaked > 0, || "naive split leaked nothing".into())?;
        let secs = started.elapsed().as_secs_f64();
        ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
        Ok(format!("grouped: 0 leaks over 100 seeds; naive at seed 42 leaks {leaked} of 1000 songs"))
    })();
    report("Split safety", started, outcome);
}

#[test]
fn metrics_fixtures() {
    let started = Instant::now();
    let outcome = (|| {
        let cm = ConfusionMatrix::from_counts(vec![vec![2, 0], vec![1, 1]]).map_err(|e| e.to_string())?;
        let r = weighted_metrics(&cm).map_err(|e| e.to_string())?;
        let got = [r.accuracy, r.weighted_precision, r.weighted_recall, r.weighted_f1];
        let want = [0.75, 5.0 / 6.0, 0.75, 11.0 / 15.0];
        ensure(got.iter().zip(&want).all(|(g, w)| (g - w).abs() < 1e-6), || format!("fixture gave {got:?}"))?;

        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut checked = 0;
        while checked < 1000 {
            let n = rng.random_range(2..=10);
            let counts: Vec<Vec<u64>> =
                (0..n).map(|_| (0..n).map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(0..50) }).collect()).collect();
            let cm = ConfusionMatrix::from_counts(counts).unwrap();
            if cm.total() == 0 {
                continue;
            }
            let r = weighted_metrics(&cm).map_err(|e| e.to_string())?;
            ensure((r.accuracy - r.weighted_recall).abs() < 1e-12, || format!("accuracy {} vs recall {}", r.accuracy, r.weighted_recall))?;
            checked += 1;
        }
        Ok(format!(
            "fixture acc {:.4} P {:.4} R {:.4} F1 {:.4}; accuracy == weighted recall on 1000 matrices",
            got[0], got[1], got[2], got[3]
        ))
    })();
    report("Metrics fixtures", started, outcome);
}

/// Synthetic desk-scale corpus: 10 genres, 5 songs each, 5 windows per song,
/// rendered as mel images. Built once per test binary.
fn desk_corpus() -> &'static Path {
    static ROOT: OnceLock<PathBuf> = OnceLock::new();
    ROOT.get_or_init(|| {
        let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("desk");
        let _ = std::fs::remove_dir_all(&root);
        cmd_synth(&SynthArgs { out_dir: root.join("songs"), songs_per_genre: 5, seconds: 30.0, seed: 7 }).unwrap();
        cmd_augment(&AugmentArgs { data_dir: root.join("songs"), out_dir: root.join("windows"), seed: 42 }).unwrap();
        cmd_features(&FeaturesArgs {
            data_dir: root.join("windows"),
            out_dir: root.join("images"),
            repr: ReprChoice::Mel,
            threads: Some(1),
        })
        .unwrap();
        root
    })
}

#[test]
fn desk_scale_learning() {
    let started = Instant::now();
    let root = desk_corpus();
    let mut args = TrainArgs::new(root.join("images"), root.join("run"));
    args.arch = ArchChoice::Hybrid;
    args.repr = KindChoice::Mel;
    args.split = SplitChoice::Grouped;
    args.epochs = 20;
    args.patience = Some(20);
    args.batch_size = 8;
    args.lr = 1e-3;
    args.monitor = MonitorChoice::TestAccuracy;
    args.target_accuracy = Some(0.9);
    let outcome = match cmd_train(&args) {
        Err(e) => Err(e.to_string()),
        Ok(run) => {
            let acc = run.metrics.accuracy;
            let epochs = run.report.epochs.len();
            let secs = started.elapsed().as_secs_f64();
            if acc < 0.9 {
                Err(format!("grouped test accuracy {acc:.4} after {epochs} epochs"))
            } else if secs > 900.0 {
                Err(format!("accuracy {acc:.4} but took {secs:.0}s"))
            } else {
                Ok(format!(
                    "{} train / {} test images, grouped test accuracy {acc:.4} (>=0.90) at epoch {}, {} leaked songs",
                    run.train_images, run.test_images, run.report.best_epoch, run.leaked_songs
                ))
            }
        }
    };
    report("Desk-scale learning (hybrid, 20 epochs)", started, outcome);

    // Training-set metal windows classified through the inference path.
    let started = Instant::now();
    let outcome = (|| {
        let model = load_model(&root.join("run/model.ckpt")).map_err(|e| e.to_string())?;
        let split = std::fs::read_to_string(root.join("run/split.tsv")).map_err(|e| e.to_string())?;
        let manifest = std::fs::read_to_string(root.join("run/manifest.tsv")).map_err(|e| e.to_string())?;
        let plan = genrenet_core::dataset::SplitPlan::from_tsv(&split).map_err(|e| e.to_string())?;
        let manifest = Manifest::from_tsv(&manifest).map_err(|e| e.to_string())?;
        let metal = GENRES.iter().position(|g| *g == "metal").unwrap();
        let fx = FeatureExtractor::new(FeatureConfig::default(), 22050).map_err(|e| e.to_string())?;
        let clips: Vec<PathBuf> = plan
            .train
            .iter()
            .map(|&i| &manifest.entries[i])
            .filter(|e| e.label == metal)
            .take(10)
            .map(|e| {
                let stem = e.image_path.file_stem().unwrap().to_string_lossy();
                root.join("windows").join(GENRES[e.label]).join(format!("{stem}.wav"))
            })
            .collect();
        ensure(clips.len() == 10, || format!("only {} training metal windows", clips.len()))?;
        let mut hits = 0;
        for path in &clips {
            let clip = decode_wav(path).map_err(|e| e.to_string())?;
            let r = classify_clip(&clip, &model, &fx, SpectroKind::Mel, WindowMode::Center).map_err(|e| e.to_string())?;
            let again = classify_clip(&clip, &model, &fx, SpectroKind::Mel, WindowMode::Center).map_err(|e| e.to_string())?;
            ensure(r.distribution == again.distribution, || format!("{} not deterministic", path.display()))?;
            ensure((r.distribution.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6, || "probabilities do not sum to 1".into())?;
            hits += usize::from(r.distribution.argmax() == metal);
        }
        ensure(hits >= 9, || format!("{hits}/10 metal clips predicted as metal"))?;
        Ok(format!("{hits}/10 training-set metal clips predicted as metal (>=9), repeat calls identical"))
    })();
    report("Predict self-consistency", started, outcome);
}

#[test]
fn overfit_sanity() {
    let started = Instant::now();
    let root = desk_corpus();
    let outcome = (|| {
        let manifest = build_manifest(root.join("images/mel"), "png").map_err(|e| e.to_string())?;
        let plan = group_shuffle_split(&manifest, 0.8, 42).map_err(|e| e.to_string())?;
        let subset: Vec<usize> = plan.train.iter().copied().take(64).collect();
        let images = ImageSet::load(&manifest, &subset).map_err(|e| e.to_string())?;
        let mut model = build_model(Architecture::Hybrid, 10, ColumnFeatures::Rgb, 42).map_err(|e| e.to_string())?;
        let config = TrainConfig {
            max_epochs: 50,
            patience: 50,
            batch_size: 8,
            learning_rate: 1e-3,
            monitor: Monitor::TestAccuracy,
            target_accuracy: Some(0.99),
            ..TrainConfig::default()
        };
        let report = train(&mut model, &images, &images, &config).map_err(|e| e.to_string())?;
        let eval = evaluate(&model, &images, 8).map_err(|e| e.to_string())?;
        let acc = eval.metrics.accuracy;
        ensure(acc >= 0.99, || format!("train accuracy {acc:.4} after {} epochs", report.epochs.len()))?;
        Ok(format!("64-image train accuracy {acc:.4} (>=0.99) after {} epochs", report.epochs.len()))
    })();
    report("Overfit sanity (64 images)", started, outcome);
}

/// Lower end of the 95% Wilson interval for `k` successes in `n` trials.
fn wilson_lower(k: usize, n: usize) -> f64 {
    let (z, n, p) = (1.959964, n as f64, k as f64 / n as f64);
    let centre = p + z * z / (2.0 * n);
    let margin = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt();
    (centre - margin) / (1.0 + z * z / n)
}

#[test]
fn wilson_bound_reference_values() {
    // 50/100 -> [0.4038, 0.5962]; 0/10 lower bound is 0.
    assert!((wilson_lower(50, 100) - 0.4038).abs() < 1e-4);
    assert!(wilson_lower(0, 10).abs() < 1e-12);
}

fn gtzan_orderings(gtzan: &Path) -> Outcome {
    let work = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("gtzan");
    let _ = std::fs::remove_dir_all(&work);
    let songs = if gtzan.join("genres_original").is_dir() {
        gtzan.join("genres_original")
    } else if gtzan.join("genres").is_dir() {
        gtzan.join("genres")
    } else {
        gtzan.to_path_buf()
    };
    let e = |e: CliError| e.to_string();
    cmd_augment(&AugmentArgs { data_dir: songs, out_dir: work.join("windows"), seed: 42 }).map_err(e)?;
    let rows = cmd_baselines(&BaselinesArgs {
        data_dir: work.join("windows"),
        out_dir: work.join("baselines"),
        repr: vec!["raw".into(), "stft".into(), "mel".into()],
        k: vec![10, 15, 20],
        train_fraction: 0.8,
        seed: 42,
        check_ordering: false,
    })
    .map_err(e)?;
    let mut failures = Vec::new();
    for r in &rows {
        if !(r.mel > r.raw && r.stft > r.raw) {
            failures.push(format!("{}: raw {:?} stft {:?} mel {:?}", r.method, r.raw, r.stft, r.mel));
        }
    }
    cmd_features(&FeaturesArgs { data_dir: work.join("windows"), out_dir: work.join("images"), repr: ReprChoice::Mel, threads: None })
        .map_err(e)?;
    let epochs: usize = std::env::var("GTZAN_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(10);
    let mut notes = Vec::new();
    for arch in [ArchChoice::Cnn, ArchChoice::Bigru, ArchChoice::Resnet18, ArchChoice::Hybrid] {
        let mut accs = Vec::new();
        for split in [SplitChoice::Grouped, SplitChoice::Naive] {
            let mut args = TrainArgs::new(work.join("images"), work.join(format!("{arch:?}-{split:?}")));
            args.arch = arch;
            args.split = split;
            args.epochs = epochs;
            let run = cmd_train(&args).map_err(e)?;
            let n = run.test_images;
            let k = (run.metrics.accuracy * n as f64).round() as usize;
            if wilson_lower(k, n) <= 0.1 {
                failures.push(format!("{arch:?} {split:?} accuracy {:.4} not above chance", run.metrics.accuracy));
            }
            accs.push(run.metrics.accuracy);
        }
        if accs[1] < accs[0] {
            failures.push(format!("{arch:?}: naive {:.4} < grouped {:.4}", accs[1], accs[0]));
        }
        notes.push(format!("{arch:?} grouped {:.3} naive {:.3}", accs[0], accs[1]));
    }
    if failures.is_empty() {
        Ok(format!("baselines mel,stft > raw for {} methods; {}", rows.len(), notes.join("; ")))
    } else {
        Err(failures.join("; "))
    }
}

#[test]
fn gtzan_direction_orderings() {
    let started = Instant::now();
    match std::env::var_os("GTZAN_DIR") {
        None => emit("[SKIP] GTZAN orderings: set GTZAN_DIR to a local GTZAN copy to run"),
        Some(dir) => report("GTZAN orderings", started, gtzan_orderings(Path::new(&dir))),
    }
}

fn small_catalog(songs: usize, seed: u64) -> Catalog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries: Vec<CatalogEntry> = Vec::new();
    for i in 0..songs {
        let probs = if i % 5 == 4 {
            entries[rng.random_range(0..i)].distribution.probs.clone()
        } else {
            let raw: Vec<f64> = (0..10).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
            let total = raw.iter().sum::<f64>().max(1e-12);
            raw.into_iter().map(|v| v / total).collect()
        };
        let id = format!("{}.{:05}", GENRES[i % 10], i);
        entries.push(CatalogEntry { title: title_for(&id), song_id: id, distribution: GenreDistribution { probs } });
    }
    Catalog::new(entries).unwrap()
}

fn exhaustive_top(query: &[f64], catalog: &Catalog, k: usize) -> Vec<String> {
    let unit = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| if n == 0.0 { 0.0 } else { x / n }).collect::<Vec<f64>>()
    };
    let q = unit(query);
    let mut all: Vec<(f64, String)> =
        catalog.entries.iter().map(|e| (unit(&e.distribution.probs).iter().zip(&q).map(|(a, b)| a * b).sum(), e.song_id.clone())).collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, id)| id).collect()
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn http(addr: &str, request: &[u8]) -> std::io::Result<(u16, Vec<u8>)> {
    let mut stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(Duration::from_secs(60)))?;
    stream.write_all(request)?;
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw)?;
    let split = raw.windows(4).position(|w| w == b"\r\n\r\n").unwrap_or(raw.len());
    let head = String::from_utf8_lossy(&raw[..split]);
    let status = head.split_whitespace().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    Ok((status, raw[(split + 4).min(raw.len())..].to_vec()))
}

fn classify_over_http(dir: &Path) -> Result<(Vec<f64>, usize), String> {
    let ckpt = dir.join("model.ckpt");
    save_model(&build_cnn_baseline(10, 5), &ckpt, vec![("repr".into(), "mel".into())]).map_err(|e| e.to_string())?;
    let catalog = dir.join("catalog.json");
    small_catalog(30, 9).save(&catalog).map_err(|e| e.to_string())?;
    let song = genrenet_core::synth::synthesize_song(4, 0, &genrenet_core::synth::SynthConfig { seconds: 10.0, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let wav = genrenet_core::audio::encode_wav_bytes(&song).map_err(|e| e.to_string())?;

    let mut child = Command::new(env!("CARGO_BIN_EXE_genrenet"))
        .args(["serve", "--port", "0", "--checkpoint"])
        .arg(&ckpt)
        .arg("--catalog")
        .arg(&catalog)
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let stderr = child.stderr.take().unwrap();
    let _server = Server(child);
    let mut lines = BufReader::new(stderr).lines();
    let addr = loop {
        let line = lines.next().ok_or("server exited before listening")?.map_err(|e| e.to_string())?;
        if let Some(rest) = line.strip_prefix("listening on http://") {
            break rest.trim().to_string();
        }
    };
    std::thread::spawn(move || lines.for_each(drop));

    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        let (status, _) = http(&addr, b"GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").map_err(|e| e.to_string())?;
        if status == 200 {
            break;
        }
        ensure(Instant::now() < deadline, || format!("health still {status}"))?;
        std::thread::sleep(Duration::from_millis(100));
    }

    let boundary = "acceptance-boundary";
    let mut body =
        format!("--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"clip.wav\"\r\nContent-Type: audio/wav\r\n\r\n")
            .into_bytes();
    body.extend_from_slice(&wav);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    let mut request = format!(
        "POST /classify HTTP/1.1\r\nHost: x\r\nConnection: close\r\nContent-Type: multipart/form-data; boundary={boundary}\r\nContent-Length: {}\r\n\r\n",
        body.len()
    )
    .into_bytes();
    request.extend_from_slice(&body);
    let (status, reply) = http(&addr, &request).map_err(|e| e.to_string())?;
    ensure(status == 200, || format!("/classify returned {status}: {}", String::from_utf8_lossy(&reply)))?;
    let v: serde_json::Value = serde_json::from_slice(&reply).map_err(|e| e.to_string())?;
    let probs: Vec<f64> = serde_json::from_value(v["probs"].clone()).map_err(|e| e.to_string())?;
    let recs = v["recommendations"].as_array().map_or(0, |a| a.len());
    Ok((probs, recs))
}

#[test]
fn recommender() {
    let started = Instant::now();
    let outcome = (|| {
        let catalog = small_catalog(40, 3);
        for e in catalog.entries.iter().step_by(5) {
            let top = &recommend(&e.distribution, &catalog, 5, Similarity::Cosine).map_err(|e| e.to_string())?[0];
            let same: BTreeSet<&str> =
                catalog.entries.iter().filter(|o| o.distribution == e.distribution).map(|o| o.song_id.as_str()).collect();
            ensure(same.contains(top.song_id.as_str()), || format!("{} ranked {} first", e.song_id, top.song_id))?;
            ensure((top.similarity - 1.0).abs() < 1e-12, || format!("self similarity {}", top.similarity))?;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for round in 0..100 {
            let catalog = small_catalog(100, rng.random());
            let query = catalog.entries[rng.random_range(0..100)]
                .distribution
                .probs
                .iter()
                .map(|p| p + rng.random_range(0.0..0.05))
                .collect::<Vec<_>>();
            let got: Vec<String> = recommend(&GenreDistribution { probs: query.clone() }, &catalog, 5, Similarity::Cosine)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|r| r.song_id)
                .collect();
            ensure(got == exhaustive_top(&query, &catalog, 5), || format!("round {round}: ranking differs from exhaustive sort"))?;
        }

        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (probs, recs) = classify_over_http(dir.path())?;
        let sum: f64 = probs.iter().sum();
        ensure(probs.len() == 10 && (sum - 1.0).abs() < 1e-6, || format!("{} probs summing to {sum}", probs.len()))?;
        ensure(recs == 5, || format!("{recs} recommendations"))?;
        Ok(format!("self-query similarity 1.0; 100 catalogs match exhaustive sort; /classify probs sum {sum:.9}, {recs} recommendations"))
    })();
    report("Recommender", started, outcome);
}
