//! Mini-batch training with early stopping, evaluation, and curve export.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use genrenet_nn::loss::softmax_cross_entropy;
use genrenet_nn::{Adam, AdamConfig, Mode, Optimizer, Sgd, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::{batch_order, ImageSet};
use crate::error::{arg_err, io_err, CoreError, Result};
use crate::metrics::{confusion, weighted_metrics, ConfusionMatrix, MetricsReport};
use crate::models::{ModelGraph, WeightScope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    /// Plain SGD with momentum 0.9.
    Sgd,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            _ => arg_err("OptimizerKind::parse", format!("unknown optimizer {s:?}")),
        }
    }
}

/// The quantity early stopping watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    #[default]
    TestLoss,
    TestAccuracy,
}

impl Monitor {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "test_loss" | "loss" => Ok(Self::TestLoss),
            "test_accuracy" | "accuracy" => Ok(Self::TestAccuracy),
            _ => arg_err("Monitor::parse", format!("unknown monitor {s:?}")),
        }
    }

    fn better(self, candidate: f64, best: f64) -> bool {
        match self {
            Monitor::TestLoss => candidate < best,
            Monitor::TestAccuracy => candidate > best,
        }
    }

    fn value(self, record: &EpochRecord) -> f64 {
        match self {
            Monitor::TestLoss => record.test_loss,
            Monitor::TestAccuracy => record.test_acc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub monitor: Monitor,
    /// Stop as soon as test accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    /// Recompute train loss/accuracy with an eval-mode pass after each epoch
    /// instead of averaging the train-mode batches.
    pub eval_train: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            patience: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 42,
            optimizer: OptimizerKind::Adam,
            monitor: Monitor::TestLoss,
            target_accuracy: None,
            eval_train: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let op = "TrainConfig";
        if self.max_epochs == 0 || self.batch_size == 0 {
            return arg_err(op, "max_epochs and batch_size must be >= 1");
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return arg_err(op, format!("patience {} must be in 1..={}", self.patience, self.max_epochs));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return arg_err(op, "learning rate must be positive");
        }
        if let Some(t) = self.target_accuracy {
            if !(t > 0.0 && t <= 1.0) {
                return arg_err(op, "target accuracy must be in (0, 1]");
            }
        }
        Ok(())
    }

    fn optimizer(&self) -> Box<dyn Optimizer<f32>> {
        match self.optimizer {
            OptimizerKind::Adam => Box::new(Adam::<f32>::new(AdamConfig { lr: self.learning_rate, ..AdamConfig::default() })),
            OptimizerKind::Sgd => Box::new(Sgd::<f32>::new(self.learning_rate, 0.9)),
        }
    }
}

/// Patience counter over a stream of per-epoch metric values (epochs are 1-based).
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub monitor: Monitor,
    pub patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(monitor: Monitor, patience: usize) -> Self {
        Self { monitor, patience, best: None, stale: 0 }
    }

    /// Record one epoch. Only strict improvement resets the counter; a NaN
    /// metric never improves.
    pub fn observe(&mut self, epoch: usize, value: f64) -> Verdict {
        let improved = match self.best {
            None => !value.is_nan(),
            Some((_, best)) => self.monitor.better(value, best),
        };
        if improved {
            self.best = Some((epoch, value));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Verdict { improved, stop: self.stale >= self.patience }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
    TargetReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights the model holds after training.
    pub best_epoch: usize,
    pub best_metric: f64,
    pub monitor: Monitor,
    pub stopped_early: bool,
    pub stop_reason: StopReason,
    pub wall_time_seconds: f64,
}

impl TrainReport {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Result of a full eval-mode pass over one side of a split.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub predictions: Vec<usize>,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.metrics.accuracy
    }
}

/// Eval-mode pass in fixed order. Does not touch parameters.
pub fn evaluate(model: &ModelGraph, set: &ImageSet, batch_size: usize) -> Result<Evaluation> {
    if set.is_empty() {
        return arg_err("evaluate", "image set is empty");
    }
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(set.len());
    for positions in batch_order(set.len(), batch_size, None)? {
        let batch = set.batch(&positions);
        let logits = model.infer(&batch.images)?;
        if !logits.is_finite() {
            return Err(CoreError::NonFiniteLogits);
        }
        let (loss, _) = softmax_cross_entropy(&logits, &batch.labels)?;
        loss_sum += loss as f64 * positions.len() as f64;
        let classes = logits.shape()[1];
        predictions.extend(logits.data().chunks_exact(classes).map(argmax));
    }
    let confusion = confusion(&set.labels, &predictions, model.num_classes)?;
    let metrics = weighted_metrics(&confusion)?;
    Ok(Evaluation { loss: loss_sum / set.len() as f64, predictions, confusion, metrics })
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Train-mode pass over one epoch; returns mean loss and running accuracy.
fn train_epoch(
    model: &mut ModelGraph,
    set: &ImageSet,
    config: &TrainConfig,
    optimizer: &mut dyn Optimizer<f32>,
    epoch: usize,
) -> Result<(f64, f64)> {
    let order = batch_order(set.len(), config.batch_size, Some(config.seed.wrapping_add(epoch as u64)))?;
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for (b, positions) in order.iter().enumerate() {
        let batch = set.batch(positions);
        model.zero_grad();
        let logits = model.forward(&batch.images, Mode::Train)?;
        let (loss, grad) = softmax_cross_entropy(&logits, &batch.labels)?;
        if !loss.is_finite() || !logits.is_finite() {
            return Err(CoreError::NonFiniteLoss { epoch, batch: b + 1 });
        }
        model.backward(&grad)?;
        optimizer.step(&mut model.params_mut());
        loss_sum += loss as f64 * positions.len() as f64;
        let classes = logits.shape()[1];
        correct += logits.data().chunks_exact(classes).zip(&batch.labels).filter(|(row, &y)| argmax(row) == y).count();
    }
    Ok((loss_sum / set.len() as f64, correct as f64 / set.len() as f64))
}

pub fn train(model: &mut ModelGraph, train_set: &ImageSet, test_set: &ImageSet, config: &TrainConfig) -> Result<TrainReport> {
    train_with(model, train_set, test_set, config, |_| Ok(()))
}

/// Train until patience runs out, the target accuracy is met, or `max_epochs`.
/// `on_epoch` sees every record as it is produced. On return the model holds
/// the best epoch's weights.
pub fn train_with(
    model: &mut ModelGraph,
    train_set: &ImageSet,
    test_set: &ImageSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return arg_err("train", "train and test sets must be non-empty");
    }
    let start = Instant::now();
    let mut optimizer = config.optimizer();
    let mut stopper = EarlyStopping::new(config.monitor, config.patience);
    // (epoch, monitored value, weights) of the epoch the model will end on.
    let mut best: Option<(usize, f64, Vec<(String, Tensor<f32>)>)> = None;
    let mut epochs = Vec::new();
    let mut reason = StopReason::MaxEpochs;
    for epoch in 1..=config.max_epochs {
        let t0 = Instant::now();
        let (mut train_loss, mut train_acc) = train_epoch(model, train_set, config, optimizer.as_mut(), epoch)?;
        if config.eval_train {
            let e = evaluate(model, train_set, config.batch_size)?;
            (train_loss, train_acc) = (e.loss, e.accuracy());
        }
        let test = evaluate(model, test_set, config.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            train_acc,
            test_loss: test.loss,
            test_acc: test.accuracy(),
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&record)?;
        let value = config.monitor.value(&record);
        let verdict = stopper.observe(epoch, value);
        // Reaching the target ends training on that epoch's weights even when
        // the monitored metric did not improve.
        let reached = config.target_accuracy.is_some_and(|t| record.test_acc >= t);
        if verdict.improved || reached {
            best = Some((epoch, value, model.state()));
        }
        epochs.push(record);
        if reached {
            reason = StopReason::TargetReached;
            break;
        }
        if verdict.stop {
            reason = StopReason::Patience;
            break;
        }
    }
    let (best_epoch, best_metric) = match best {
        Some((epoch, value, state)) => {
            if epoch != epochs.len() {
                model.load_state(state, WeightScope::Full)?;
            }
            (epoch, value)
        }
        // Every epoch produced NaN: keep the final weights.
        None => (epochs.len(), f64::NAN),
    };
    Ok(TrainReport {
        epochs,
        best_epoch,
        best_metric,
        monitor: config.monitor,
        stopped_early: reason != StopReason::MaxEpochs,
        stop_reason: reason,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

pub const CURVES_HEADER: &str = "epoch,train_loss,train_acc,test_loss,test_acc";

/// Per-epoch curves as CSV. Values use the shortest round-trip representation.
pub fn curves_csv(report: &TrainReport) -> String {
    let mut out = format!("{CURVES_HEADER}\n");
    for r in &report.epochs {
        let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.train_loss, r.train_acc, r.test_loss, r.test_acc);
    }
    out
}

pub fn export_curves(report: &TrainReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, curves_csv(report)).map_err(io_err(path))
}

/// Parse a curves CSV back into (epoch, train_loss, train_acc, test_loss, test_acc) rows.
pub fn parse_curves(text: &str) -> Result<Vec<EpochRecord>> {
    let bad = |detail: String| CoreError::Format { what: "curves", detail };
    let mut lines = text.lines();
    if lines.next() != Some(CURVES_HEADER) {
        return Err(bad("missing header".into()));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields in {line:?}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|e| bad(format!("{:?}: {e}", f[0])))?,
                train_loss: num(f[1])?,
                train_acc: num(f[2])?,
                test_loss: num(f[3])?,
                test_acc: num(f[4])?,
                seconds: 0.0,
            })
        })
        .collect()
}

/// Appends one JSON object per epoch.
pub struct JsonlLog {
    file: std::fs::File,
    path: std::path::PathBuf,
}

impl JsonlLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = std::fs::File::create(&path).map_err(io_err(&path))?;
        Ok(Self { file, path })
    }

    pub fn append(&mut self, record: &EpochRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.file, "{line}").map_err(io_err(&self.path))
    }
}
