//! Subcommands of the `genrenet` binary. Each command resolves its flags into
//! a config, logs it as one JSON line on stderr, and returns a summary value
//! so the same code paths can be driven from tests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use genrenet_core::audio::decode_wav;
use genrenet_core::baselines::{BaselineRow, FeatureSource, SvmConfig};
use genrenet_core::dataset::{build_manifest, group_shuffle_split, leaked_songs, naive_split, ImageSet, Manifest, SplitPlan, GENRES};
use genrenet_core::dsp::{FeatureConfig, FeatureExtractor, SpectroKind};
use genrenet_core::metrics::{ConfusionMatrix, MetricsReport};
use genrenet_core::models::{build_model, load_model, save_model, Architecture, ColumnFeatures, GenreDistribution, ModelCard};
use genrenet_core::pipeline::{augment, baseline_features, baseline_table, classify_clip, extract_features, AugmentSummary, WindowMode};
use genrenet_core::recommend::{build_catalog, Catalog};
use genrenet_core::synth::{write_corpus, SynthConfig};
use genrenet_core::trainer::{evaluate, export_curves, train_with, JsonlLog, Monitor, OptimizerKind, TrainConfig, TrainReport};
use genrenet_core::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Usage(String),
    #[error("song leakage between train and test: {0}")]
    Leakage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("server: {0}")]
    Server(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Usage(_) => "usage",
            CliError::Leakage(_) => "leakage",
            CliError::Io { .. } => "io",
            CliError::Server(_) => "server",
            CliError::Check(_) => "check",
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// One JSON line on stderr with the resolved configuration of a run.
fn log_config(command: &str, config: &impl Serialize) {
    let value = serde_json::json!({ "command": command, "config": config });
    eprintln!("config {value}");
}

#[derive(Debug, Parser)]
#[command(name = "genrenet", version, about = "Music genre classification from log-mel spectrogram images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic ten-genre corpus of WAV songs.
    Synth(SynthArgs),
    /// Cut every song into five disjoint 3 s windows at seeded random offsets.
    Augment(AugmentArgs),
    /// Render spectrogram images for every window.
    Features(FeaturesArgs),
    /// Train and evaluate one architecture on one representation.
    Train(TrainArgs),
    /// KNN and linear SVM accuracies on raw, STFT and mel features.
    Baselines(BaselinesArgs),
    /// Classify one audio file.
    Predict(PredictArgs),
    /// Build the recommendation catalog from a trained model.
    Catalog(CatalogArgs),
    /// Run the HTTP classifier and recommender.
    Serve(ServeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub songs_per_genre: usize,
    #[arg(long, default_value_t = 30.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct AugmentArgs {
    /// Directory with one sub-directory of WAV files per genre.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReprChoice {
    Stft,
    Mel,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturesArgs {
    /// Window WAVs, as written by `augment`.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Images go to `<out-dir>/<repr>/<genre>/`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ReprChoice::All)]
    pub repr: ReprChoice,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchChoice {
    Cnn,
    Bigru,
    Resnet18,
    Hybrid,
}

impl ArchChoice {
    pub fn architecture(self) -> Architecture {
        match self {
            ArchChoice::Cnn => Architecture::Cnn,
            ArchChoice::Bigru => Architecture::BiGru,
            ArchChoice::Resnet18 => Architecture::ResNet18,
            ArchChoice::Hybrid => Architecture::Hybrid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KindChoice {
    Stft,
    Mel,
}

impl KindChoice {
    pub fn kind(self) -> SpectroKind {
        match self {
            KindChoice::Stft => SpectroKind::Stft,
            KindChoice::Mel => SpectroKind::Mel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    /// All windows of a song on the same side.
    Grouped,
    /// Windows assigned independently (leaks songs across the split).
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorChoice {
    TestLoss,
    TestAccuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerChoice {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnsChoice {
    Rgb,
    Gray,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Image root from `features` (either containing `<repr>/` or the genre directories themselves).
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ArchChoice::Hybrid)]
    pub arch: ArchChoice,
    #[arg(long, value_enum, default_value_t = KindChoice::Mel)]
    pub repr: KindChoice,
    #[arg(long, value_enum, default_value_t = SplitChoice::Grouped)]
    pub split: SplitChoice,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Epochs without improvement before stopping; defaults to min(10, epochs).
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum, default_value_t = MonitorChoice::TestLoss)]
    pub monitor: MonitorChoice,
    /// Stop once test accuracy reaches this value.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
    #[arg(long, value_enum, default_value_t = OptimizerChoice::Adam)]
    pub optimizer: OptimizerChoice,
    #[arg(long, value_enum, default_value_t = ColumnsChoice::Rgb)]
    pub columns: ColumnsChoice,
    /// Keep only this fraction of songs per genre (smoke runs).
    #[arg(long, default_value_t = 1.0)]
    pub subset: f64,
    /// Report train metrics from an eval-mode pass instead of running batch averages.
    #[arg(long)]
    pub eval_train: bool,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

impl TrainArgs {
    pub fn new(data_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        let cli = Cli::parse_from(["genrenet", "train", "--data-dir", "_", "--out-dir", "_"]);
        match cli.command {
            Command::Train(args) => Self { data_dir: data_dir.into(), out_dir: out_dir.into(), ..args },
            _ => unreachable!(),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct BaselinesArgs {
    /// Window WAVs, as written by `augment`.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Feature sources, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "raw,stft,mel")]
    pub repr: Vec<String>,
    /// Neighbour counts for KNN, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "10,15,20")]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Fail unless mel accuracy exceeds raw accuracy for every method.
    #[arg(long)]
    pub check_ordering: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub audio: PathBuf,
    /// Average five evenly spaced windows instead of using the center window.
    #[arg(long)]
    pub average: bool,
    /// Print one JSON object instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct CatalogArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image root (as for `train`); the model card's representation picks the sub-directory.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Catalog is written to `<out-dir>/catalog.json`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value_t = genrenet_service::DEFAULT_MAX_UPLOAD_BYTES)]
    pub max_upload_bytes: usize,
    /// Number of recommendations per request.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Serve static UI assets from this directory.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[arg(long)]
    pub average: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a).map(|n| println!("wrote {n} songs to {}", a.out_dir.display())),
        Command::Augment(a) => cmd_augment(&a).map(|s| print!("{}", augment_report(&s))),
        Command::Features(a) => cmd_features(&a).map(|counts| {
            for (repr, n) in counts {
                println!("{repr}: {n} images");
            }
        }),
        Command::Train(a) => cmd_train(&a).map(|o| print!("{}", o.summary())),
        Command::Baselines(a) => cmd_baselines(&a).map(|rows| print!("{}", baselines_csv(&rows))),
        Command::Predict(a) => cmd_predict(&a).map(|out| print!("{out}")),
        Command::Catalog(a) => {
            cmd_catalog(&a).map(|c| println!("catalog of {} songs written to {}", c.len(), a.out_dir.join("catalog.json").display()))
        }
        Command::Serve(a) => cmd_serve(&a),
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<usize> {
    log_config("synth", args);
    let config = SynthConfig { songs_per_genre: args.songs_per_genre, seconds: args.seconds, seed: args.seed, ..SynthConfig::default() };
    Ok(write_corpus(&args.out_dir, &config)?.len())
}

pub fn cmd_augment(args: &AugmentArgs) -> Result<AugmentSummary> {
    log_config("augment", args);
    Ok(augment(&args.data_dir, &args.out_dir, args.seed)?)
}

pub fn augment_report(s: &AugmentSummary) -> String {
    let mut out = format!("songs {} windows {}\n", s.songs, s.windows);
    for (genre, n) in &s.per_genre {
        let _ = writeln!(out, "  {genre:<10} {n}");
    }
    for (path, why) in &s.skipped {
        let _ = writeln!(out, "skipped {}: {why}", path.display());
    }
    out
}

pub fn cmd_features(args: &FeaturesArgs) -> Result<Vec<(String, usize)>> {
    log_config("features", args);
    let config = FeatureConfig::default();
    eprintln!("feature parameters {config:?}");
    let extractor = FeatureExtractor::new(config, genrenet_core::audio::SAMPLE_RATE)?;
    let threads = args.threads.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let kinds = match args.repr {
        ReprChoice::Stft => vec![SpectroKind::Stft],
        ReprChoice::Mel => vec![SpectroKind::Mel],
        ReprChoice::All => vec![SpectroKind::Stft, SpectroKind::Mel],
    };
    let mut counts = Vec::new();
    for kind in kinds {
        let n = extract_features(&args.data_dir, args.out_dir.join(kind.name()), kind, &extractor, threads)?;
        counts.push((kind.name().to_string(), n));
    }
    Ok(counts)
}

/// `<root>/<repr>` when it exists, otherwise `root` itself.
fn image_dir(root: &Path, kind: SpectroKind) -> PathBuf {
    let nested = root.join(kind.name());
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

fn check_subset(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--subset must be in (0, 1], got {fraction}")))
    }
}

/// Keep the first `ceil(fraction * n)` songs (by id) of every genre.
pub fn subset_songs(manifest: &Manifest, fraction: f64) -> Result<Manifest> {
    check_subset(fraction)?;
    let mut per_genre: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (song, idx) in manifest.groups() {
        per_genre.entry(manifest.entries[idx[0]].label).or_default().push(song);
    }
    let keep: std::collections::BTreeSet<&str> =
        per_genre.values().flat_map(|songs| songs.iter().take(((songs.len() as f64 * fraction).ceil() as usize).max(1)).copied()).collect();
    Ok(Manifest { entries: manifest.entries.iter().filter(|e| keep.contains(e.song_id.as_str())).cloned().collect() })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub leaked_songs: usize,
    pub train_images: usize,
    pub test_images: usize,
    pub out_dir: PathBuf,
    pub row: String,
}

impl TrainOutcome {
    pub fn summary(&self) -> String {
        format!(
            "train {} images, test {} images, leaked songs {}\nstopped after {} epochs ({:?}), best epoch {}\n{}{}",
            self.train_images,
            self.test_images,
            self.leaked_songs,
            self.report.epochs.len(),
            self.report.stop_reason,
            self.report.best_epoch,
            METRICS_HEADER.to_owned() + "\n",
            self.row
        )
    }
}

pub const METRICS_HEADER: &str = "model,representation,split,precision,recall,f1,accuracy";

pub fn metrics_row(arch: Architecture, kind: SpectroKind, split: SplitChoice, m: &MetricsReport) -> String {
    let split = match split {
        SplitChoice::Grouped => "grouped",
        SplitChoice::Naive => "naive",
    };
    format!(
        "{},{},{},{:.4},{:.4},{:.4},{:.4}\n",
        arch.name(),
        kind.name(),
        split,
        m.weighted_precision,
        m.weighted_recall,
        m.weighted_f1,
        m.accuracy
    )
}

pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let names: Vec<&str> = (0..cm.classes).map(|i| GENRES.get(i).copied().unwrap_or("?")).collect();
    let mut out = format!("true\\predicted,{}\n", names.join(","));
    for (i, row) in cm.counts.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "{},{}", names[i], cells.join(","));
    }
    out
}

fn split_plan(manifest: &Manifest, args: &TrainArgs) -> Result<SplitPlan> {
    Ok(match args.split {
        SplitChoice::Grouped => group_shuffle_split(manifest, args.train_fraction, args.seed)?,
        SplitChoice::Naive => naive_split(manifest, args.train_fraction, args.seed)?,
    })
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    log_config("train", args);
    let kind = args.repr.kind();
    let config = TrainConfig {
        max_epochs: args.epochs,
        patience: args.patience.unwrap_or(args.epochs.min(10)),
        batch_size: args.batch_size,
        learning_rate: args.lr,
        seed: args.seed,
        optimizer: match args.optimizer {
            OptimizerChoice::Adam => OptimizerKind::Adam,
            OptimizerChoice::Sgd => OptimizerKind::Sgd,
        },
        monitor: match args.monitor {
            MonitorChoice::TestLoss => Monitor::TestLoss,
            MonitorChoice::TestAccuracy => Monitor::TestAccuracy,
        },
        target_accuracy: args.target_accuracy,
        eval_train: args.eval_train,
    };
    config.validate()?;
    check_subset(args.subset)?;
    let columns = match args.columns {
        ColumnsChoice::Rgb => ColumnFeatures::Rgb,
        ColumnsChoice::Gray => ColumnFeatures::Gray,
    };

    let manifest = subset_songs(&build_manifest(image_dir(&args.data_dir, kind), "png")?, args.subset)?;
    if manifest.is_empty() {
        return Err(CliError::Usage(format!("no images under {}", args.data_dir.display())));
    }
    let plan = split_plan(&manifest, args)?;
    let leaked = leaked_songs(&manifest, &plan);
    if args.split == SplitChoice::Grouped && !leaked.is_empty() {
        let names: Vec<&str> = leaked.iter().take(5).copied().collect();
        return Err(CliError::Leakage(format!("{} songs, e.g. {}", leaked.len(), names.join(", "))));
    }
    eprintln!("split: {} train / {} test images, {} songs leaked", plan.train.len(), plan.test.len(), leaked.len());

    create_dir(&args.out_dir)?;
    write_file(
        &args.out_dir.join("config.json"),
        &serde_json::to_string_pretty(&serde_json::json!({ "args": args, "train": config })).unwrap(),
    )?;
    write_file(&args.out_dir.join("manifest.tsv"), &manifest.to_tsv())?;
    write_file(&args.out_dir.join("split.tsv"), &plan.to_tsv())?;

    let t0 = Instant::now();
    let train_set = ImageSet::load(&manifest, &plan.train)?;
    let test_set = ImageSet::load(&manifest, &plan.test)?;
    eprintln!("loaded images in {:.1}s", t0.elapsed().as_secs_f64());

    let mut model = build_model(args.arch.architecture(), GENRES.len(), columns, args.seed)?;
    eprintln!("model {} with {} parameters", model.architecture, model.parameter_count());
    let mut log = JsonlLog::create(args.out_dir.join("log.jsonl"))?;
    let report = train_with(&mut model, &train_set, &test_set, &config, |r| {
        eprintln!(
            "epoch {:>3} train_loss {:.4} train_acc {:.4} test_loss {:.4} test_acc {:.4} ({:.1}s)",
            r.epoch, r.train_loss, r.train_acc, r.test_loss, r.test_acc, r.seconds
        );
        log.append(r)
    })?;

    let eval = evaluate(&model, &test_set, args.batch_size)?;
    let row = metrics_row(model.architecture, kind, args.split, &eval.metrics);
    export_curves(&report, args.out_dir.join("curves.csv"))?;
    write_file(&args.out_dir.join("metrics.csv"), &format!("{METRICS_HEADER}\n{row}"))?;
    write_file(&args.out_dir.join("confusion.csv"), &confusion_csv(&eval.confusion))?;
    write_file(&args.out_dir.join("report.json"), &report.to_json())?;
    write_file(&args.out_dir.join("metrics.json"), &eval.metrics.to_json())?;
    let extra = vec![
        ("repr".to_string(), kind.name().to_string()),
        ("split".to_string(), format!("{:?}", args.split).to_lowercase()),
        ("train_config".to_string(), serde_json::to_string(&config).unwrap()),
    ];
    save_model(&model, &args.out_dir.join("model.ckpt"), extra)?;

    Ok(TrainOutcome {
        metrics: eval.metrics,
        confusion: eval.confusion,
        leaked_songs: leaked.len(),
        train_images: train_set.len(),
        test_images: test_set.len(),
        out_dir: args.out_dir.clone(),
        row,
        report,
    })
}

pub fn baselines_csv(rows: &[BaselineRow]) -> String {
    let cell = |v: Option<f64>| v.map(|a| format!("{a:.4}")).unwrap_or_default();
    let mut out = String::from("method,raw,stft,mel\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.method, cell(r.raw), cell(r.stft), cell(r.mel));
    }
    out
}

fn parse_source(name: &str) -> Result<FeatureSource> {
    FeatureSource::ALL
        .into_iter()
        .find(|s| s.name() == name.trim())
        .ok_or_else(|| CliError::Usage(format!("unknown feature source {name:?} (expected raw, stft or mel)")))
}

pub fn cmd_baselines(args: &BaselinesArgs) -> Result<Vec<BaselineRow>> {
    log_config("baselines", args);
    let sources = args.repr.iter().map(|s| parse_source(s)).collect::<Result<Vec<_>>>()?;
    if args.k.is_empty() || args.k.contains(&0) {
        return Err(CliError::Usage("--k needs positive neighbour counts".into()));
    }
    let svm = SvmConfig::default();
    eprintln!("svm {svm:?}");
    let windows = build_manifest(&args.data_dir, "wav")?;
    let plan = group_shuffle_split(&windows, args.train_fraction, args.seed)?;
    let extractor = FeatureExtractor::new(FeatureConfig::default(), genrenet_core::audio::SAMPLE_RATE)?;
    let features = sources.iter().map(|&s| Ok((s, baseline_features(&windows, s, &extractor)?))).collect::<Result<Vec<_>>>()?;
    let rows = baseline_table(&features, &plan, &args.k, &svm)?;
    create_dir(&args.out_dir)?;
    write_file(&args.out_dir.join("baselines.csv"), &baselines_csv(&rows))?;

    if sources.contains(&FeatureSource::Raw) && sources.contains(&FeatureSource::Mel) {
        let violations: Vec<&str> = rows.iter().filter(|r| r.mel <= r.raw).map(|r| r.method.as_str()).collect();
        if violations.is_empty() {
            eprintln!("ordering mel > raw holds for every method");
        } else {
            eprintln!("ordering mel > raw violated for {}", violations.join(", "));
            if args.check_ordering {
                return Err(CliError::Check(format!("mel accuracy not above raw for {}", violations.join(", "))));
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub file: String,
    pub mode: &'static str,
    pub probs: BTreeMap<&'static str, f64>,
    pub top_genre: &'static str,
    #[serde(skip)]
    pub distribution: GenreDistribution,
}

impl std::fmt::Display for Prediction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (g, p) in GENRES.iter().zip(&self.distribution.probs) {
            writeln!(f, "{g:<10} {p:.6}")?;
        }
        writeln!(f, "top genre: {}", self.top_genre)
    }
}

pub fn predict_file(args: &PredictArgs) -> Result<Prediction> {
    let card = ModelCard::load(&args.checkpoint)?;
    let kind = match card.extra.iter().find(|(k, _)| k == "repr") {
        Some((_, v)) => SpectroKind::parse(v)?,
        None => SpectroKind::Mel,
    };
    let model = load_model(&args.checkpoint)?;
    let extractor = FeatureExtractor::new(FeatureConfig::default(), genrenet_core::audio::SAMPLE_RATE)?;
    let clip = decode_wav(&args.audio)?;
    let mode = if args.average { WindowMode::Average } else { WindowMode::Center };
    let result = classify_clip(&clip, &model, &extractor, kind, mode)?;
    Ok(Prediction {
        file: args.audio.display().to_string(),
        mode: if args.average { "average" } else { "center" },
        probs: GENRES.iter().copied().zip(result.distribution.probs.iter().copied()).collect(),
        top_genre: result.distribution.top_genre(),
        distribution: result.distribution,
    })
}

pub fn cmd_predict(args: &PredictArgs) -> Result<String> {
    log_config("predict", args);
    let p = predict_file(args)?;
    Ok(if args.json { format!("{}\n", serde_json::to_string(&p).unwrap()) } else { p.to_string() })
}

pub fn cmd_catalog(args: &CatalogArgs) -> Result<Catalog> {
    log_config("catalog", args);
    let card = ModelCard::load(&args.checkpoint)?;
    let kind = match card.extra.iter().find(|(k, _)| k == "repr") {
        Some((_, v)) => SpectroKind::parse(v)?,
        None => SpectroKind::Mel,
    };
    let model = load_model(&args.checkpoint)?;
    let manifest = build_manifest(image_dir(&args.data_dir, kind), "png")?;
    let catalog = build_catalog(&manifest, &model, args.batch_size)?;
    create_dir(&args.out_dir)?;
    catalog.save(args.out_dir.join("catalog.json"))?;
    Ok(catalog)
}

pub fn cmd_serve(args: &ServeArgs) -> Result<()> {
    log_config("serve", args);
    let config = genrenet_service::ServiceConfig {
        max_upload_bytes: args.max_upload_bytes,
        window: if args.average { WindowMode::Average } else { WindowMode::Center },
        k: args.k,
        static_dir: args.static_dir.clone(),
        ..Default::default()
    };
    let state = genrenet_service::AppState::new(config);
    state.load_in_background(args.checkpoint.clone(), args.catalog.clone());
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| CliError::Server(e.to_string()))?;
    runtime.block_on(async {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| CliError::Server(format!("bind {addr}: {e}")))?;
        eprintln!("listening on http://{}", listener.local_addr().map(|a| a.to_string()).unwrap_or(addr));
        genrenet_service::serve(listener, state).await.map_err(|e| CliError::Server(e.to_string()))
    })
}
