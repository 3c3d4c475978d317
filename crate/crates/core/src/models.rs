//! The four classifiers (CNN, Bi-GRU, ResNet18, hybrid ResNet + Bi-GRU) and prediction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use genrenet_nn::checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
use genrenet_nn::{
    Activation, AdaptiveMaxPool1x1, BasicBlock, BatchNorm, BiGru, Conv2d, Dropout, Flatten, GlobalAvgPool, Layer, Linear, MaxPool2d, Mode,
    NnError, Parameter, Sequential, Tensor,
};

use crate::dataset::{GENRES, NUM_CLASSES};
use crate::dsp::IMAGE_SIZE;
use crate::error::{arg_err, io_err, CoreError, Result};

type NnResult<T> = genrenet_nn::Result<T>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    Cnn,
    BiGru,
    ResNet18,
    Hybrid,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [Architecture::Cnn, Architecture::BiGru, Architecture::ResNet18, Architecture::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Cnn => "cnn",
            Architecture::BiGru => "bigru",
            Architecture::ResNet18 => "resnet18",
            Architecture::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| CoreError::InvalidArgument { op: "Architecture", detail: format!("unknown architecture {s:?}") })
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How an image column becomes one recurrent time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ColumnFeatures {
    /// All channels, feature index `c * 224 + h` (672 values).
    #[default]
    Rgb,
    /// Channel mean (224 values).
    Gray,
}

impl ColumnFeatures {
    pub fn width(self) -> usize {
        match self {
            ColumnFeatures::Rgb => 3 * IMAGE_SIZE,
            ColumnFeatures::Gray => IMAGE_SIZE,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ColumnFeatures::Rgb => "rgb",
            ColumnFeatures::Gray => "gray",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(ColumnFeatures::Rgb),
            "gray" => Ok(ColumnFeatures::Gray),
            other => arg_err("ColumnFeatures", format!("unknown column mode {other:?} (rgb|gray)")),
        }
    }
}

pub const GRU_HIDDEN: usize = 256;
pub const DROPOUT_RATE: f64 = 0.5;

/// ResNet18 up to and including global average pooling; B×3×224×224 → B×512.
pub struct ResNetBackbone {
    pub stem: Sequential<f32>,
    pub blocks: Vec<BasicBlock<f32>>,
    pool: GlobalAvgPool,
    flatten: Flatten,
}

impl ResNetBackbone {
    pub fn new(prefix: &str, rng: &mut ChaCha8Rng) -> Self {
        let stem = Sequential::new(vec![
            Box::new(Conv2d::new(&format!("{prefix}.conv1"), 3, 64, 7, 2, 3, false, rng)),
            Box::new(BatchNorm::new(&format!("{prefix}.bn1"), 64)),
            Box::new(Activation::relu()),
            Box::new(MaxPool2d::new(3, 2, 1)),
        ]);
        let mut blocks = Vec::new();
        let mut in_ch = 64;
        for (stage, out_ch) in [64, 128, 256, 512].into_iter().enumerate() {
            for i in 0..2 {
                let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(&format!("{prefix}.layer{}.{i}", stage + 1), in_ch, out_ch, stride, rng));
                in_ch = out_ch;
            }
        }
        Self { stem, blocks, pool: GlobalAvgPool::new(), flatten: Flatten::new() }
    }

    /// Feature maps after the stem and after each stage (for shape inspection).
    pub fn stage_shapes(&self, input: &Tensor<f32>) -> NnResult<Vec<Vec<usize>>> {
        let mut x = self.stem.infer(input)?;
        let mut shapes = vec![x.shape().to_vec()];
        for pair in self.blocks.chunks(2) {
            for block in pair {
                x = block.infer(&x)?;
            }
            shapes.push(x.shape().to_vec());
        }
        Ok(shapes)
    }
}

impl Layer<f32> for ResNetBackbone {
    fn forward(&mut self, input: &Tensor<f32>, mode: Mode) -> NnResult<Tensor<f32>> {
        let mut x = self.stem.forward(input, mode)?;
        for block in &mut self.blocks {
            x = block.forward(&x, mode)?;
        }
        let x = self.pool.forward(&x, mode)?;
        self.flatten.forward(&x, mode)
    }

    fn backward(&mut self, grad: &Tensor<f32>) -> NnResult<Tensor<f32>> {
        let mut g = self.flatten.backward(grad)?;
        g = self.pool.backward(&g)?;
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        self.stem.backward(&g)
    }

    fn infer(&self, input: &Tensor<f32>) -> NnResult<Tensor<f32>> {
        let mut x = self.stem.infer(input)?;
        for block in &self.blocks {
            x = block.infer(&x)?;
        }
        self.flatten.infer(&self.pool.infer(&x)?)
    }

    fn params(&self) -> Vec<&Parameter<f32>> {
        let mut v = self.stem.params();
        v.extend(self.blocks.iter().flat_map(|b| b.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        let mut v = self.stem.params_mut();
        v.extend(self.blocks.iter_mut().flat_map(|b| b.params_mut()));
        v
    }
}

/// Turn B×3×H×W images into a W×B×F sequence, one step per pixel column.
pub fn columns_to_sequence(images: &Tensor<f32>, mode: ColumnFeatures) -> NnResult<Tensor<f32>> {
    let (b, c, h, w) = images.dims4("columns_to_sequence")?;
    let x = images.data();
    let f = match mode {
        ColumnFeatures::Rgb => c * h,
        ColumnFeatures::Gray => h,
    };
    let mut out = vec![0.0f32; w * b * f];
    for bi in 0..b {
        for ci in 0..c {
            for hi in 0..h {
                let row = &x[((bi * c + ci) * h + hi) * w..][..w];
                for (t, &v) in row.iter().enumerate() {
                    let slot = &mut out[(t * b + bi) * f..][..f];
                    match mode {
                        ColumnFeatures::Rgb => slot[ci * h + hi] = v,
                        ColumnFeatures::Gray => slot[hi] += v / c as f32,
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[w, b, f], out)
}

/// Adjoint of [`columns_to_sequence`].
fn sequence_to_columns(grad: &Tensor<f32>, shape: &[usize], mode: ColumnFeatures) -> NnResult<Tensor<f32>> {
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let f = grad.shape()[2];
    let g = grad.data();
    let mut out = vec![0.0f32; b * c * h * w];
    for bi in 0..b {
        for ci in 0..c {
            for hi in 0..h {
                let row = &mut out[((bi * c + ci) * h + hi) * w..][..w];
                for (t, v) in row.iter_mut().enumerate() {
                    let slot = &g[(t * b + bi) * f..][..f];
                    *v = match mode {
                        ColumnFeatures::Rgb => slot[ci * h + hi],
                        ColumnFeatures::Gray => slot[hi] / c as f32,
                    };
                }
            }
        }
    }
    Tensor::from_vec(shape, out)
}

/// Columns as time steps → Bi-GRU → [last forward state, first backward state] → linear 512→256.
pub struct GruPathway {
    pub columns: ColumnFeatures,
    pub gru: BiGru<f32>,
    pub fc: Linear<f32>,
    cache: Option<(Vec<usize>, usize)>,
}

impl GruPathway {
    pub fn new(columns: ColumnFeatures, rng: &mut ChaCha8Rng) -> Self {
        Self {
            columns,
            gru: BiGru::new("gru", columns.width(), GRU_HIDDEN, false, rng),
            fc: Linear::new("gru_head.fc", 2 * GRU_HIDDEN, GRU_HIDDEN, rng),
            cache: None,
        }
    }

    fn summarize(states_f: &Tensor<f32>, states_b: &Tensor<f32>) -> NnResult<Tensor<f32>> {
        let (t, b, h) = (states_f.shape()[0], states_f.shape()[1], states_f.shape()[2]);
        let last_f = &states_f.data()[(t - 1) * b * h..];
        let first_b = &states_b.data()[..b * h];
        let mut out = Vec::with_capacity(b * 2 * h);
        for bi in 0..b {
            out.extend_from_slice(&last_f[bi * h..(bi + 1) * h]);
            out.extend_from_slice(&first_b[bi * h..(bi + 1) * h]);
        }
        Tensor::from_vec(&[b, 2 * h], out)
    }
}

impl Layer<f32> for GruPathway {
    fn forward(&mut self, input: &Tensor<f32>, mode: Mode) -> NnResult<Tensor<f32>> {
        let seq = columns_to_sequence(input, self.columns)?;
        let (f, b) = self.gru.forward_seq(&seq)?;
        self.cache = Some((input.shape().to_vec(), seq.shape()[0]));
        let summary = Self::summarize(&f, &b)?;
        self.fc.forward(&summary, mode)
    }

    fn backward(&mut self, grad: &Tensor<f32>) -> NnResult<Tensor<f32>> {
        let (shape, steps) = self.cache.take().ok_or(NnError::NoForwardCache("gru pathway"))?;
        let d_summary = self.fc.backward(grad)?;
        let (b, h) = (shape[0], self.gru.hidden_size());
        let mut d_f = vec![0.0f32; steps * b * h];
        let mut d_b = vec![0.0f32; steps * b * h];
        for bi in 0..b {
            let row = &d_summary.data()[bi * 2 * h..(bi + 1) * 2 * h];
            d_f[((steps - 1) * b + bi) * h..][..h].copy_from_slice(&row[..h]);
            d_b[bi * h..(bi + 1) * h].copy_from_slice(&row[h..]);
        }
        let d_f = Tensor::from_vec(&[steps, b, h], d_f)?;
        let d_b = Tensor::from_vec(&[steps, b, h], d_b)?;
        let d_seq = self.gru.backward_seq(&d_f, &d_b)?;
        sequence_to_columns(&d_seq, &shape, self.columns)
    }

    fn infer(&self, input: &Tensor<f32>) -> NnResult<Tensor<f32>> {
        let seq = columns_to_sequence(input, self.columns)?;
        let (f, b) = self.gru.infer_seq(&seq)?;
        self.fc.infer(&Self::summarize(&f, &b)?)
    }

    fn params(&self) -> Vec<&Parameter<f32>> {
        let mut v = self.gru.params();
        v.extend(self.fc.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        let mut v = self.gru.params_mut();
        v.extend(self.fc.params_mut());
        v
    }
}

/// ResNet pathway of the hybrid: backbone → adaptive max pool → linear 512→256 → dropout → batch norm.
pub struct ResNetPathway {
    pub backbone: ResNetBackbone,
    pub head: Sequential<f32>,
    reshape: Option<usize>,
}

impl ResNetPathway {
    fn new(rng: &mut ChaCha8Rng, dropout_seed: u64) -> Result<Self> {
        let head = Sequential::new(vec![
            Box::new(AdaptiveMaxPool1x1::new()),
            Box::new(Flatten::new()),
            Box::new(Linear::new("resnet_head.fc", 512, 256, rng)),
            Box::new(Dropout::new(DROPOUT_RATE, dropout_seed)?),
            Box::new(BatchNorm::new("resnet_head.bn", 256)),
        ]);
        Ok(Self { backbone: ResNetBackbone::new("resnet", rng), head, reshape: None })
    }

    fn as_map(x: Tensor<f32>) -> NnResult<Tensor<f32>> {
        let (b, c) = (x.shape()[0], x.shape()[1]);
        x.reshape(&[b, c, 1, 1])
    }
}

impl Layer<f32> for ResNetPathway {
    fn forward(&mut self, input: &Tensor<f32>, mode: Mode) -> NnResult<Tensor<f32>> {
        let feats = self.backbone.forward(input, mode)?;
        self.reshape = Some(feats.shape()[1]);
        self.head.forward(&Self::as_map(feats)?, mode)
    }

    fn backward(&mut self, grad: &Tensor<f32>) -> NnResult<Tensor<f32>> {
        let channels = self.reshape.take().ok_or(NnError::NoForwardCache("resnet pathway"))?;
        let g = self.head.backward(grad)?;
        let b = g.shape()[0];
        self.backbone.backward(&g.reshape(&[b, channels])?)
    }

    fn infer(&self, input: &Tensor<f32>) -> NnResult<Tensor<f32>> {
        self.head.infer(&Self::as_map(self.backbone.infer(input)?)?)
    }

    fn params(&self) -> Vec<&Parameter<f32>> {
        let mut v = self.backbone.params();
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        let mut v = self.backbone.params_mut();
        v.extend(self.head.params_mut());
        v
    }
}

/// Two pathways over the same image, concatenated (256 + 256) → dropout → linear 512→classes.
pub struct HybridNet {
    pub resnet: ResNetPathway,
    pub gru: GruPathway,
    pub dropout: Dropout<f32>,
    pub fc: Linear<f32>,
    split: usize,
}

impl HybridNet {
    /// Inputs to the final linear layer: [ResNet features | GRU features].
    pub fn head_inputs(&self, input: &Tensor<f32>) -> NnResult<Tensor<f32>> {
        Tensor::concat_cols(&[&self.resnet.infer(input)?, &self.gru.infer(input)?])
    }
}

impl Layer<f32> for HybridNet {
    fn forward(&mut self, input: &Tensor<f32>, mode: Mode) -> NnResult<Tensor<f32>> {
        let a = self.resnet.forward(input, mode)?;
        let b = self.gru.forward(input, mode)?;
        self.split = a.shape()[1];
        let fused = Tensor::concat_cols(&[&a, &b])?;
        let x = self.dropout.forward(&fused, mode)?;
        self.fc.forward(&x, mode)
    }

    fn backward(&mut self, grad: &Tensor<f32>) -> NnResult<Tensor<f32>> {
        let g = self.fc.backward(grad)?;
        let g = self.dropout.backward(&g)?;
        let width = g.shape()[1];
        let parts = g.split_cols(&[self.split, width - self.split])?;
        let mut dx = self.resnet.backward(&parts[0])?;
        let dx_gru = self.gru.backward(&parts[1])?;
        for (a, b) in dx.data_mut().iter_mut().zip(dx_gru.data()) {
            *a += b;
        }
        Ok(dx)
    }

    fn infer(&self, input: &Tensor<f32>) -> NnResult<Tensor<f32>> {
        self.fc.infer(&self.head_inputs(input)?)
    }

    fn params(&self) -> Vec<&Parameter<f32>> {
        let mut v = self.resnet.params();
        v.extend(self.gru.params());
        v.extend(self.fc.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        let mut v = self.resnet.params_mut();
        v.extend(self.gru.params_mut());
        v.extend(self.fc.params_mut());
        v
    }
}

/// A classifier with named parameters and a fixed 3×224×224 input.
pub struct ModelGraph {
    pub architecture: Architecture,
    pub num_classes: usize,
    pub columns: ColumnFeatures,
    pub seed: u64,
    pub net: Box<dyn Layer<f32>>,
}

impl fmt::Debug for ModelGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelGraph")
            .field("architecture", &self.architecture)
            .field("num_classes", &self.num_classes)
            .field("columns", &self.columns)
            .field("parameters", &self.parameter_count())
            .finish()
    }
}

fn dropout_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt)
}

pub fn build_resnet18(num_classes: usize, seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let backbone = ResNetBackbone::new("resnet", &mut rng);
    let fc = Linear::new("resnet.fc", 512, num_classes, &mut rng);
    ModelGraph {
        architecture: Architecture::ResNet18,
        num_classes,
        columns: ColumnFeatures::default(),
        seed,
        net: Box::new(Sequential::new(vec![Box::new(backbone), Box::new(fc)])),
    }
}

pub fn build_hybrid(num_classes: usize, columns: ColumnFeatures, seed: u64) -> Result<ModelGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let resnet = ResNetPathway::new(&mut rng, dropout_seed(seed, 1))?;
    let gru = GruPathway::new(columns, &mut rng);
    let fc = Linear::new("head.fc", 2 * GRU_HIDDEN, num_classes, &mut rng);
    let net = HybridNet { resnet, gru, dropout: Dropout::new(DROPOUT_RATE, dropout_seed(seed, 2))?, fc, split: 0 };
    Ok(ModelGraph { architecture: Architecture::Hybrid, num_classes, columns, seed, net: Box::new(net) })
}

/// Three conv3×3 (32/64/128) + relu + maxpool2 stages, flatten, linear.
pub fn build_cnn_baseline(num_classes: usize, seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers: Vec<Box<dyn Layer<f32>>> = Vec::new();
    let mut in_ch = 3;
    for (i, out_ch) in [32, 64, 128].into_iter().enumerate() {
        layers.push(Box::new(Conv2d::new(&format!("cnn.conv{}", i + 1), in_ch, out_ch, 3, 1, 1, true, &mut rng)));
        layers.push(Box::new(Activation::relu()));
        layers.push(Box::new(MaxPool2d::new(2, 2, 0)));
        in_ch = out_ch;
    }
    let side = IMAGE_SIZE / 8;
    layers.push(Box::new(Flatten::new()));
    layers.push(Box::new(Linear::new("cnn.fc", 128 * side * side, num_classes, &mut rng)));
    ModelGraph {
        architecture: Architecture::Cnn,
        num_classes,
        columns: ColumnFeatures::default(),
        seed,
        net: Box::new(Sequential::new(layers)),
    }
}

/// The hybrid's GRU pathway followed by linear 256→classes.
pub fn build_bigru_classifier(num_classes: usize, columns: ColumnFeatures, seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pathway = GruPathway::new(columns, &mut rng);
    let fc = Linear::new("head.fc", GRU_HIDDEN, num_classes, &mut rng);
    ModelGraph {
        architecture: Architecture::BiGru,
        num_classes,
        columns,
        seed,
        net: Box::new(Sequential::new(vec![Box::new(pathway), Box::new(fc)])),
    }
}

pub fn build_model(architecture: Architecture, num_classes: usize, columns: ColumnFeatures, seed: u64) -> Result<ModelGraph> {
    Ok(match architecture {
        Architecture::Cnn => build_cnn_baseline(num_classes, seed),
        Architecture::BiGru => build_bigru_classifier(num_classes, columns, seed),
        Architecture::ResNet18 => build_resnet18(num_classes, seed),
        Architecture::Hybrid => build_hybrid(num_classes, columns, seed)?,
    })
}

impl ModelGraph {
    fn check_input(&self, input: &Tensor<f32>) -> Result<()> {
        let s = input.shape();
        if s.len() != 4 || s[0] == 0 || s[1..] != [3, IMAGE_SIZE, IMAGE_SIZE] {
            return Err(CoreError::Shape { op: "ModelGraph", detail: format!("expected Bx3x224x224, got {s:?}") });
        }
        Ok(())
    }

    pub fn forward(&mut self, input: &Tensor<f32>, mode: Mode) -> Result<Tensor<f32>> {
        self.check_input(input)?;
        Ok(self.net.forward(input, mode)?)
    }

    pub fn backward(&mut self, grad_logits: &Tensor<f32>) -> Result<()> {
        self.net.backward(grad_logits)?;
        Ok(())
    }

    /// Evaluation-mode logits; takes `&self`, so one model can serve many threads.
    pub fn infer(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_input(input)?;
        Ok(self.net.infer(input)?)
    }

    pub fn params(&self) -> Vec<&Parameter<f32>> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        self.net.params_mut()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.value.clear_grad();
        }
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<f32>> {
        self.params().into_iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter<f32>> {
        self.params_mut().into_iter().find(|p| p.name == name)
    }

    /// Every parameter and buffer by name.
    pub fn state(&self) -> Vec<(String, Tensor<f32>)> {
        self.params().into_iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    pub fn write_weights(&self, w: impl std::io::Write) -> Result<()> {
        let params = self.params();
        write_checkpoint(w, params.iter().map(|p| (p.name.as_str(), &p.value)))?;
        Ok(())
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let params = self.params();
        save_checkpoint(path.as_ref(), params.iter().map(|p| (p.name.as_str(), &p.value)))?;
        Ok(())
    }

    pub fn read_weights(&mut self, r: impl std::io::Read) -> Result<()> {
        let entries = read_checkpoint::<f32, _>(r)?;
        self.load_state(entries, WeightScope::Full)
    }

    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let entries = load_checkpoint::<f32>(path.as_ref())?;
        self.load_state(entries, WeightScope::Full)
    }

    /// Overwrite parameters from named tensors; all problems are reported together.
    pub fn load_state(&mut self, entries: Vec<(String, Tensor<f32>)>, scope: WeightScope) -> Result<()> {
        let mut by_name: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        let mut problems = Vec::new();
        for (name, t) in entries {
            if by_name.insert(name.clone(), t).is_some() {
                problems.push(format!("duplicate tensor {name}"));
            }
        }
        let wanted: BTreeSet<String> = self.params().iter().filter(|p| scope.covers(&p.name)).map(|p| p.name.clone()).collect();
        for p in self.params() {
            if !scope.covers(&p.name) {
                continue;
            }
            match by_name.get(&p.name) {
                None => problems.push(format!("missing tensor {}", p.name)),
                Some(t) if t.shape() != p.shape() => {
                    problems.push(format!("shape mismatch for {}: checkpoint {:?}, model {:?}", p.name, t.shape(), p.shape()))
                }
                Some(_) => {}
            }
        }
        if scope == WeightScope::Full {
            for name in by_name.keys().filter(|n| !wanted.contains(*n)) {
                problems.push(format!("unexpected tensor {name}"));
            }
        }
        if !problems.is_empty() {
            return Err(NnError::Mismatch(problems).into());
        }
        for p in self.params_mut() {
            if let Some(t) = by_name.remove(&p.name) {
                if scope.covers(&p.name) {
                    p.value = t;
                }
            }
        }
        Ok(())
    }
}

/// Which parameters a weight load must cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScope {
    /// Exactly the model's parameter set.
    Full,
    /// Only the ResNet backbone (`resnet.*` except the classifier `resnet.fc.*`); other tensors are ignored.
    Backbone,
}

impl WeightScope {
    fn covers(self, name: &str) -> bool {
        match self {
            WeightScope::Full => true,
            WeightScope::Backbone => name.starts_with("resnet.") && !name.starts_with("resnet.fc."),
        }
    }
}

/// Load externally produced ResNet18 weights (same archive format and names).
pub fn load_external_resnet_weights(model: &mut ModelGraph, checkpoint: impl AsRef<Path>, scope: WeightScope) -> Result<()> {
    if !matches!(model.architecture, Architecture::ResNet18 | Architecture::Hybrid) {
        return arg_err("load_external_resnet_weights", format!("{} has no ResNet backbone", model.architecture));
    }
    let entries = load_checkpoint::<f32>(checkpoint.as_ref())?;
    model.load_state(entries, scope)
}

/// Probabilities over the genres, in label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreDistribution {
    pub probs: Vec<f64>,
}

impl GenreDistribution {
    /// Numerically stable softmax in double precision.
    pub fn from_logits(logits: &[f32]) -> Result<Self> {
        if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFiniteLogits);
        }
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let exp: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        Ok(Self { probs: exp.into_iter().map(|e| e / total).collect() })
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn top_genre(&self) -> &'static str {
        GENRES.get(self.argmax()).copied().unwrap_or("unknown")
    }

    /// Elementwise mean of several distributions.
    pub fn mean(items: &[GenreDistribution]) -> Result<Self> {
        let n = items
            .first()
            .map(|d| d.probs.len())
            .ok_or_else(|| CoreError::InvalidArgument { op: "GenreDistribution::mean", detail: "no distributions".into() })?;
        if items.iter().any(|d| d.probs.len() != n) {
            return arg_err("GenreDistribution::mean", "distributions differ in length");
        }
        let mut probs = vec![0.0; n];
        for d in items {
            for (a, p) in probs.iter_mut().zip(&d.probs) {
                *a += p / items.len() as f64;
            }
        }
        Ok(Self { probs })
    }
}

/// Eval-mode prediction for every image in a batch.
pub fn predict_batch(model: &ModelGraph, images: &Tensor<f32>) -> Result<Vec<(GenreDistribution, usize)>> {
    let logits = model.infer(images)?;
    let classes = logits.shape()[1];
    logits
        .data()
        .chunks_exact(classes)
        .map(|row| {
            let d = GenreDistribution::from_logits(row)?;
            let top = d.argmax();
            Ok((d, top))
        })
        .collect()
}

/// Predict one 3×224×224 (or 1×3×224×224) image.
pub fn predict(model: &ModelGraph, image: &Tensor<f32>) -> Result<(GenreDistribution, usize)> {
    let batch = if image.rank() == 3 { image.clone().reshape(&[1, 3, IMAGE_SIZE, IMAGE_SIZE])? } else { image.clone() };
    if batch.shape()[0] != 1 {
        return arg_err("predict", "expected a single image");
    }
    Ok(predict_batch(model, &batch)?.remove(0))
}

/// Plain-text description stored next to a checkpoint as `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCard {
    pub architecture: Architecture,
    pub columns: ColumnFeatures,
    pub num_classes: usize,
    pub seed: u64,
    pub parameters: usize,
    /// Free-form extra lines (training config, representation, split).
    pub extra: Vec<(String, String)>,
}

impl ModelCard {
    pub fn for_model(model: &ModelGraph) -> Self {
        Self {
            architecture: model.architecture,
            columns: model.columns,
            num_classes: model.num_classes,
            seed: model.seed,
            parameters: model.parameter_count(),
            extra: Vec::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "architecture={}\ncolumns={}\nnum_classes={}\nseed={}\nparameters={}\n",
            self.architecture,
            self.columns.name(),
            self.num_classes,
            self.seed,
            self.parameters
        );
        for (k, v) in &self.extra {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |detail: String| CoreError::Format { what: "model card", detail };
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        let mut extra = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("no '=' in {line:?}")))?;
            match k {
                "architecture" | "columns" | "num_classes" | "seed" | "parameters" => {
                    fields.insert(k, v);
                }
                _ => extra.push((k.to_string(), v.to_string())),
            }
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("missing {k}")));
        let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };
        Ok(Self {
            architecture: Architecture::parse(get("architecture")?)?,
            columns: ColumnFeatures::parse(get("columns")?)?,
            num_classes: num("num_classes")? as usize,
            seed: num("seed")?,
            parameters: num("parameters")? as usize,
            extra,
        })
    }

    pub fn path_for(checkpoint: &Path) -> std::path::PathBuf {
        let mut s = checkpoint.as_os_str().to_owned();
        s.push(".card");
        s.into()
    }

    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        let path = Self::path_for(checkpoint);
        std::fs::write(&path, self.to_text()).map_err(io_err(path))
    }

    pub fn load(checkpoint: &Path) -> Result<Self> {
        let path = Self::path_for(checkpoint);
        Self::from_text(&std::fs::read_to_string(&path).map_err(io_err(path))?)
    }
}

/// Save weights plus sidecar and model card.
pub fn save_model(model: &ModelGraph, checkpoint: &Path, extra: Vec<(String, String)>) -> Result<()> {
    model.save_weights(checkpoint)?;
    let mut card = ModelCard::for_model(model);
    card.extra = extra;
    card.save(checkpoint)
}

/// Rebuild a model from its card and load its weights.
pub fn load_model(checkpoint: &Path) -> Result<ModelGraph> {
    let card = ModelCard::load(checkpoint)?;
    let mut model = build_model(card.architecture, card.num_classes, card.columns, card.seed)?;
    model.load_weights(checkpoint)?;
    Ok(model)
}

pub fn default_classes() -> usize {
    NUM_CLASSES
}
