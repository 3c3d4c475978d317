//! Nearest-neighbour and linear SVM baselines over fixed-length feature vectors.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dsp::Matrix;
use crate::error::{arg_err, CoreError, Result};

pub const FEATURE_DIM: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSource {
    Raw,
    Stft,
    Mel,
}

impl FeatureSource {
    pub const ALL: [FeatureSource; 3] = [FeatureSource::Raw, FeatureSource::Stft, FeatureSource::Mel];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSource::Raw => "raw",
            FeatureSource::Stft => "stft",
            FeatureSource::Mel => "mel",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source: FeatureSource,
    pub label: usize,
}

/// Keep every `len / target_dim`-th amplitude (index `floor(i * len / target_dim)`).
pub fn featurize_raw(samples: &[f32], target_dim: usize, label: usize) -> Result<FeatureVector> {
    if target_dim == 0 || samples.len() < target_dim {
        return arg_err("featurize_raw", format!("cannot decimate {} samples to {target_dim}", samples.len()));
    }
    let n = samples.len();
    let values = (0..target_dim).map(|i| samples[i * n / target_dim] as f64).collect();
    Ok(FeatureVector { values, source: FeatureSource::Raw, label })
}

/// Flatten a (log-scaled) spectrogram row-major and mean-pool it into `target_dim` contiguous blocks.
pub fn featurize_spectrogram(spec: &Matrix, source: FeatureSource, target_dim: usize, label: usize) -> Result<FeatureVector> {
    let n = spec.data.len();
    if target_dim == 0 || n < target_dim {
        return arg_err("featurize_spectrogram", format!("cannot pool {n} values to {target_dim}"));
    }
    let values = (0..target_dim)
        .map(|i| {
            let block = &spec.data[i * n / target_dim..(i + 1) * n / target_dim];
            block.iter().sum::<f64>() / block.len() as f64
        })
        .collect();
    Ok(FeatureVector { values, source, label })
}

/// Per-dimension standardization fitted on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Dimensions with zero variance keep unit scale.
    pub fn fit(train: &[Vec<f64>]) -> Result<Self> {
        let dim = train
            .first()
            .map(Vec::len)
            .ok_or_else(|| CoreError::InvalidArgument { op: "Standardizer::fit", detail: "no training vectors".into() })?;
        if train.iter().any(|v| v.len() != dim) {
            return arg_err("Standardizer::fit", "inconsistent feature lengths");
        }
        let n = train.len() as f64;
        let mut mean = vec![0.0; dim];
        for v in train {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; dim];
        for v in train {
            for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
                *s += (x - m) * (x - m) / n;
            }
        }
        let std = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }
}

fn check_train(op: &'static str, features: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    if features.is_empty() {
        return arg_err(op, "empty training set");
    }
    if features.len() != labels.len() {
        return Err(CoreError::Shape { op, detail: format!("{} vectors vs {} labels", features.len(), labels.len()) });
    }
    let dim = features[0].len();
    if features.iter().any(|v| v.len() != dim) {
        return arg_err(op, "inconsistent feature lengths");
    }
    Ok(dim)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Majority vote among the `k` nearest training vectors (Euclidean).
///
/// Equal distances are ordered by training index. Vote ties go to the class
/// with the smallest summed distance, then to the lowest class index.
pub fn knn_predict(train: &[Vec<f64>], labels: &[usize], query: &[f64], k: usize) -> Result<usize> {
    let dim = check_train("knn_predict", train, labels)?;
    if k == 0 || k > train.len() {
        return arg_err("knn_predict", format!("k = {k} with {} training vectors", train.len()));
    }
    if query.len() != dim {
        return Err(CoreError::Shape { op: "knn_predict", detail: format!("query length {} vs {dim}", query.len()) });
    }
    let mut dist: Vec<(f64, usize)> = train.iter().enumerate().map(|(i, v)| (euclidean(v, query), i)).collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let classes = labels.iter().max().unwrap() + 1;
    let mut votes = vec![0usize; classes];
    let mut sums = vec![0.0f64; classes];
    for &(d, i) in &dist[..k] {
        votes[labels[i]] += 1;
        sums[labels[i]] += d;
    }
    let best = (0..classes)
        .filter(|&c| votes[c] > 0)
        .min_by(|&a, &b| votes[b].cmp(&votes[a]).then(sums[a].total_cmp(&sums[b])).then(a.cmp(&b)))
        .unwrap();
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// L2 regularization strength.
    pub lambda: f64,
    pub iterations: usize,
    /// Initial step size; step `t` uses `step / sqrt(t)`.
    pub step: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { lambda: 1e-3, iterations: 300, step: 0.5 }
    }
}

/// One-vs-rest linear SVMs; `weights[c]` and `bias[c]` score class `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Per class, the objective of the averaged iterate after each step.
    pub objective: Vec<Vec<f64>>,
}

/// `lambda/2 |w|^2 + mean(max(0, 1 - y (w.x + b)))`, bias unregularized.
pub fn hinge_objective(w: &[f64], b: f64, features: &[Vec<f64>], targets: &[f64], lambda: f64) -> f64 {
    let reg = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = features.iter().zip(targets).map(|(x, y)| (1.0 - y * (dot(w, x) + b)).max(0.0)).sum::<f64>();
    reg + loss / features.len() as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full-batch subgradient descent on the hinge objective with iterate averaging.
fn fit_binary(features: &[Vec<f64>], targets: &[f64], config: &SvmConfig) -> (Vec<f64>, f64, Vec<f64>) {
    let dim = features[0].len();
    let n = features.len() as f64;
    let (mut w, mut b) = (vec![0.0; dim], 0.0);
    let (mut avg_w, mut avg_b) = (vec![0.0; dim], 0.0);
    let mut trajectory = Vec::with_capacity(config.iterations);
    let mut grad = vec![0.0; dim];
    for t in 1..=config.iterations {
        for (g, wi) in grad.iter_mut().zip(&w) {
            *g = config.lambda * wi;
        }
        let mut grad_b = 0.0;
        for (x, &y) in features.iter().zip(targets) {
            if y * (dot(&w, x) + b) < 1.0 {
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g -= y * xi / n;
                }
                grad_b -= y / n;
            }
        }
        let eta = config.step / (t as f64).sqrt();
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= eta * g;
        }
        b -= eta * grad_b;
        let blend = 1.0 / t as f64;
        for (a, wi) in avg_w.iter_mut().zip(&w) {
            *a += (wi - *a) * blend;
        }
        avg_b += (b - avg_b) * blend;
        trajectory.push(hinge_objective(&avg_w, avg_b, features, targets, config.lambda));
    }
    (avg_w, avg_b, trajectory)
}

pub fn svm_fit(features: &[Vec<f64>], labels: &[usize], config: &SvmConfig) -> Result<SvmModel> {
    check_train("svm_fit", features, labels)?;
    if config.iterations == 0 || !(config.lambda > 0.0) || !(config.step > 0.0) {
        return arg_err("svm_fit", "iterations, lambda and step must be positive");
    }
    let classes = labels.iter().max().unwrap() + 1;
    if labels.iter().all(|&l| l == labels[0]) {
        return arg_err("svm_fit", "training data contains a single class");
    }
    let mut model = SvmModel { weights: vec![], bias: vec![], objective: vec![] };
    for c in 0..classes {
        let targets: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
        let (w, b, trajectory) = fit_binary(features, &targets, config);
        model.weights.push(w);
        model.bias.push(b);
        model.objective.push(trajectory);
    }
    Ok(model)
}

/// Class with the largest margin, ties to the lowest index.
pub fn svm_predict(model: &SvmModel, query: &[f64]) -> Result<usize> {
    let dim = model.weights.first().map(Vec::len).unwrap_or(0);
    if query.len() != dim {
        return Err(CoreError::Shape { op: "svm_predict", detail: format!("query length {} vs {dim}", query.len()) });
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (c, (w, b)) in model.weights.iter().zip(&model.bias).enumerate() {
        let score = dot(w, query) + b;
        if score > best.1 {
            best = (c, score);
        }
    }
    Ok(best.0)
}

/// Accuracies of one baseline method per feature source; `None` where not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub method: String,
    pub raw: Option<f64>,
    pub stft: Option<f64>,
    pub mel: Option<f64>,
}

impl BaselineRow {
    pub fn get(&self, source: FeatureSource) -> Option<f64> {
        match source {
            FeatureSource::Raw => self.raw,
            FeatureSource::Stft => self.stft,
            FeatureSource::Mel => self.mel,
        }
    }

    pub fn set(&mut self, source: FeatureSource, value: f64) {
        let slot = match source {
            FeatureSource::Raw => &mut self.raw,
            FeatureSource::Stft => &mut self.stft,
            FeatureSource::Mel => &mut self.mel,
        };
        *slot = Some(value);
    }
}

/// `method,raw,stft,mel` table of accuracies.
pub fn baseline_csv(rows: &[BaselineRow]) -> String {
    let cell = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
    let mut out = String::from("method,raw,stft,mel\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.method, cell(r.raw), cell(r.stft), cell(r.mel));
    }
    out
}
