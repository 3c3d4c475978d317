//! Corpus-level steps: cut songs into windows, render spectrogram images,
//! and run the classical baselines.

use std::path::{Path, PathBuf};

use genrenet_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::audio::{
    center_window, decode_wav, even_windows, resample, sample_windows, write_wav, AudioClip, SAMPLE_RATE, WINDOWS_PER_SONG, WINDOW_SECONDS,
};
use crate::baselines::{
    featurize_raw, featurize_spectrogram, knn_predict, svm_fit, svm_predict, BaselineRow, FeatureSource, FeatureVector, Standardizer,
    SvmConfig, FEATURE_DIM,
};
use crate::dataset::{build_manifest, rgb_to_chw, Manifest, SplitPlan, GENRES, NUM_CLASSES};
use crate::dsp::{save_png, FeatureExtractor, SpectroImage, SpectroKind, IMAGE_SIZE};
use crate::error::{arg_err, io_err, CoreError, Result};
use crate::models::{predict_batch, GenreDistribution, ModelGraph};

/// 64-bit FNV-1a, used to give each song its own window seed.
fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed for the windows of one song; independent of corpus order.
pub fn song_seed(seed: u64, song_id: &str) -> u64 {
    seed.rotate_left(17) ^ fnv1a(song_id)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentSummary {
    pub songs: usize,
    pub windows: usize,
    pub per_genre: Vec<(String, usize)>,
    /// Files that could not be decoded or were too short, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

fn stem(path: &Path) -> String {
    path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

/// Cut every song under `in_dir/<genre>/` into five disjoint 3 s windows at
/// seeded random offsets, written as `out_dir/<genre>/<song>.w<i>.wav`.
pub fn augment(in_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>, seed: u64) -> Result<AugmentSummary> {
    let (in_dir, out_dir) = (in_dir.as_ref(), out_dir.as_ref());
    let songs = build_manifest(in_dir, "wav")?;
    if songs.is_empty() {
        return arg_err("augment", format!("no genre/*.wav files under {}", in_dir.display()));
    }
    let mut summary = AugmentSummary { songs: 0, windows: 0, per_genre: vec![], skipped: vec![] };
    let mut counts = [0usize; NUM_CLASSES];
    for entry in &songs.entries {
        let path = &entry.image_path;
        let windows = decode_wav(path)
            .and_then(|clip| resample(&clip, SAMPLE_RATE))
            .and_then(|clip| sample_windows(&clip, WINDOW_SECONDS, WINDOWS_PER_SONG, song_seed(seed, &entry.song_id)));
        let windows = match windows {
            Ok(w) => w,
            Err(
                e @ (CoreError::UnreadableAudio { .. }
                | CoreError::UnsupportedEncoding { .. }
                | CoreError::EmptyAudio(_)
                | CoreError::AudioTooShort { .. }),
            ) => {
                summary.skipped.push((path.clone(), e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        let dir = out_dir.join(GENRES[entry.label]);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (i, w) in windows.iter().enumerate() {
            write_wav(dir.join(format!("{}.w{i}.wav", stem(path))), &w.to_clip())?;
        }
        summary.songs += 1;
        summary.windows += windows.len();
        counts[entry.label] += windows.len();
    }
    summary.per_genre = GENRES.iter().zip(counts).map(|(g, c)| (g.to_string(), c)).collect();
    Ok(summary)
}

/// Render one PNG per window WAV under `in_dir` into `out_dir/<genre>/<stem>.png`.
/// Work is spread over `threads` scoped threads; output does not depend on it.
pub fn extract_features(
    in_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    kind: SpectroKind,
    extractor: &FeatureExtractor,
    threads: usize,
) -> Result<usize> {
    let windows = build_manifest(in_dir.as_ref(), "wav")?;
    if windows.is_empty() {
        return arg_err("extract_features", format!("no window files under {}", in_dir.as_ref().display()));
    }
    let out_dir = out_dir.as_ref();
    for g in GENRES {
        let dir = out_dir.join(g);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let threads = threads.clamp(1, windows.len());
    let render = |k: usize| -> Result<()> {
        for entry in windows.entries.iter().skip(k).step_by(threads) {
            let clip = resample(&decode_wav(&entry.image_path)?, extractor.sample_rate)?;
            let image = extractor.image(&clip.samples, clip.sample_rate, kind)?;
            let target = out_dir.join(GENRES[entry.label]).join(format!("{}.png", stem(&entry.image_path)));
            save_png(target, &image)?;
        }
        Ok(())
    };
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads).map(|k| s.spawn(move || render(k))).collect();
        handles.into_iter().try_for_each(|h| h.join().expect("feature worker panicked"))
    })?;
    Ok(windows.len())
}

/// Baseline feature vectors for every window in `manifest` (paths to WAVs).
pub fn baseline_features(manifest: &Manifest, source: FeatureSource, extractor: &FeatureExtractor) -> Result<Vec<FeatureVector>> {
    manifest
        .entries
        .iter()
        .map(|entry| {
            let clip = resample(&decode_wav(&entry.image_path)?, extractor.sample_rate)?;
            match source {
                FeatureSource::Raw => featurize_raw(&clip.samples, FEATURE_DIM, entry.label),
                FeatureSource::Stft => {
                    let m = extractor.features(&clip.samples, clip.sample_rate, SpectroKind::Stft)?;
                    featurize_spectrogram(&m, source, FEATURE_DIM, entry.label)
                }
                FeatureSource::Mel => {
                    let m = extractor.features(&clip.samples, clip.sample_rate, SpectroKind::Mel)?;
                    featurize_spectrogram(&m, source, FEATURE_DIM, entry.label)
                }
            }
        })
        .collect()
}

/// Test accuracy of KNN (one row per `k`) and the linear SVM on each feature
/// source. Standardization is fitted on the train side only.
pub fn baseline_table(
    features: &[(FeatureSource, Vec<FeatureVector>)],
    plan: &SplitPlan,
    ks: &[usize],
    svm: &SvmConfig,
) -> Result<Vec<BaselineRow>> {
    let mut rows: Vec<BaselineRow> = ks
        .iter()
        .map(|k| BaselineRow { method: format!("knn{k}"), raw: None, stft: None, mel: None })
        .chain(std::iter::once(BaselineRow { method: "svm".into(), raw: None, stft: None, mel: None }))
        .collect();
    for (source, vectors) in features {
        let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
            (idx.iter().map(|&i| vectors[i].values.clone()).collect(), idx.iter().map(|&i| vectors[i].label).collect())
        };
        let (train_raw, train_y) = pick(&plan.train);
        let (test_raw, test_y) = pick(&plan.test);
        let scaler = Standardizer::fit(&train_raw)?;
        let train_x: Vec<Vec<f64>> = train_raw.iter().map(|v| scaler.apply(v)).collect();
        let test_x: Vec<Vec<f64>> = test_raw.iter().map(|v| scaler.apply(v)).collect();
        let accuracy = |predict: &dyn Fn(&[f64]) -> Result<usize>| -> Result<f64> {
            let mut correct = 0;
            for (x, &y) in test_x.iter().zip(&test_y) {
                correct += (predict(x)? == y) as usize;
            }
            Ok(correct as f64 / test_y.len().max(1) as f64)
        };
        for (row, &k) in rows.iter_mut().zip(ks) {
            row.set(*source, accuracy(&|x| knn_predict(&train_x, &train_y, x, k))?);
        }
        let model = svm_fit(&train_x, &train_y, svm)?;
        rows.last_mut().unwrap().set(*source, accuracy(&|x| svm_predict(&model, x))?);
    }
    Ok(rows)
}

/// Which part of an uploaded clip is classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// The centered 3 s window.
    #[default]
    Center,
    /// Mean distribution over five evenly spaced 3 s windows.
    Average,
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub distribution: GenreDistribution,
    /// Image of the first analysed window (the center window in `Center` mode).
    pub image: SpectroImage,
}

fn image_tensor(images: &[SpectroImage]) -> Result<Tensor<f32>> {
    let per = 3 * IMAGE_SIZE * IMAGE_SIZE;
    let mut data = vec![0.0f32; images.len() * per];
    for (slot, image) in data.chunks_exact_mut(per).zip(images) {
        rgb_to_chw(&image.to_rgb8(), slot);
    }
    Ok(Tensor::from_vec(&[images.len(), 3, IMAGE_SIZE, IMAGE_SIZE], data)?)
}

/// Resample, window, render and predict. Images pass through 8-bit RGB, the
/// same quantization the training PNGs went through.
pub fn classify_clip(
    clip: &AudioClip,
    model: &ModelGraph,
    extractor: &FeatureExtractor,
    kind: SpectroKind,
    mode: WindowMode,
) -> Result<Classification> {
    let clip = resample(clip, extractor.sample_rate)?;
    let windows = match mode {
        WindowMode::Center => vec![center_window(&clip, WINDOW_SECONDS)?],
        WindowMode::Average => even_windows(&clip, WINDOW_SECONDS, WINDOWS_PER_SONG)?,
    };
    let images = windows
        .iter()
        .map(|w| Ok(SpectroImage::from_rgb8(&extractor.image(&w.samples, w.sample_rate, kind)?.to_rgb8(), kind)?))
        .collect::<Result<Vec<_>>>()?;
    let dists: Vec<GenreDistribution> = predict_batch(model, &image_tensor(&images)?)?.into_iter().map(|(d, _)| d).collect();
    Ok(Classification { distribution: GenreDistribution::mean(&dists)?, image: images.into_iter().next().unwrap() })
}
