//! STFT, mel filterbank, log compression and spectrogram rendering.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use genrenet_nn::{gemm, MatMut, MatRef};

use crate::colormap::VIRIDIS;
use crate::error::{arg_err, io_err, CoreError, Result};

/// Side length of rendered spectrogram images.
pub const IMAGE_SIZE: usize = 224;
pub const N_MELS: usize = 128;
pub const LOG_FLOOR: f64 = 1e-10;

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::Shape { op: "Matrix::from_vec", detail: format!("{} values for {rows}x{cols}", data.len()) });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    Hann,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub window_length: usize,
    pub hop_length: usize,
    pub fft_length: usize,
    pub window_kind: WindowKind,
    /// Reflect-pad by half a window on both sides so frame `t` is centered on sample `t * hop`.
    pub center_pad: bool,
}

impl Default for StftParams {
    fn default() -> Self {
        Self { window_length: 2048, hop_length: 512, fft_length: 2048, window_kind: WindowKind::Hann, center_pad: true }
    }
}

impl StftParams {
    /// Alternative reading of the table: 512 is the overlap, so hop = window - overlap.
    pub fn from_overlap(window_length: usize, overlap: usize, fft_length: usize) -> Result<Self> {
        if overlap >= window_length {
            return arg_err("StftParams::from_overlap", "overlap must be smaller than the window");
        }
        let params = Self { window_length, hop_length: window_length - overlap, fft_length, ..Self::default() };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop_length == 0 || self.hop_length > self.window_length || self.window_length > self.fft_length {
            return arg_err(
                "StftParams",
                format!("need 0 < hop ({}) <= window ({}) <= fft ({})", self.hop_length, self.window_length, self.fft_length),
            );
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_length / 2 + 1
    }

    pub fn n_frames(&self, n_samples: usize) -> Option<usize> {
        if self.center_pad {
            Some(1 + n_samples / self.hop_length)
        } else if n_samples >= self.window_length {
            Some(1 + (n_samples - self.window_length) / self.hop_length)
        } else {
            None
        }
    }

    pub fn window(&self) -> Vec<f64> {
        let n = self.window_length;
        match self.window_kind {
            WindowKind::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
            WindowKind::Rectangular => vec![1.0; n],
        }
    }
}

/// One-sided STFT, bins × frames, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub bins: Vec<Complex<f64>>,
    pub n_bins: usize,
    pub n_frames: usize,
    pub params: StftParams,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn get(&self, bin: usize, frame: usize) -> Complex<f64> {
        self.bins[bin * self.n_frames + frame]
    }
}

/// Mirror index `i` (possibly negative or past the end) into `0..n` without repeating the edge.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Frame `t` is the tapered slice of `window_length` samples (zero-padded to
/// `fft_length`) starting at `t * hop` in the padded signal.
pub fn stft(samples: &[f32], sample_rate: u32, params: &StftParams) -> Result<ComplexSpectrogram> {
    params.validate()?;
    if samples.is_empty() {
        return arg_err("stft", "empty signal");
    }
    let n_frames = params.n_frames(samples.len()).ok_or_else(|| CoreError::InvalidArgument {
        op: "stft",
        detail: format!("{} samples shorter than one {}-sample frame", samples.len(), params.window_length),
    })?;
    let pad = if params.center_pad { (params.window_length / 2) as isize } else { 0 };
    let taper = params.window();
    let n_bins = params.n_bins();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(params.fft_length);
    let mut buf = vec![Complex::new(0.0, 0.0); params.fft_length];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut bins = vec![Complex::new(0.0, 0.0); n_bins * n_frames];
    for t in 0..n_frames {
        let start = (t * params.hop_length) as isize - pad;
        buf.fill(Complex::new(0.0, 0.0));
        for (m, (slot, w)) in buf.iter_mut().zip(&taper).enumerate() {
            let idx = reflect(start + m as isize, samples.len());
            *slot = Complex::new(samples[idx] as f64 * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, v) in buf.iter().take(n_bins).enumerate() {
            bins[k * n_frames + t] = *v;
        }
    }
    Ok(ComplexSpectrogram { bins, n_bins, n_frames, params: *params, sample_rate })
}

/// Elementwise |x|².
pub fn power_spectrum(spec: &ComplexSpectrogram) -> Matrix {
    Matrix { rows: spec.n_bins, cols: spec.n_frames, data: spec.bins.iter().map(|c| c.norm_sqr()).collect() }
}

/// Elementwise |x|.
pub fn magnitude_spectrum(spec: &ComplexSpectrogram) -> Matrix {
    Matrix { rows: spec.n_bins, cols: spec.n_frames, data: spec.bins.iter().map(|c| c.norm()).collect() }
}

pub fn hz_to_mel(f: f64) -> Result<f64> {
    if !(f >= 0.0) || !f.is_finite() {
        return arg_err("hz_to_mel", format!("frequency {f} must be finite and non-negative"));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

pub fn mel_to_hz(m: f64) -> Result<f64> {
    if !(m >= 0.0) || !m.is_finite() {
        return arg_err("mel_to_hz", format!("mel value {m} must be finite and non-negative"));
    }
    Ok(700.0 * (10f64.powf(m / 2595.0) - 1.0))
}

/// Triangular filters, `n_mels` × (`fft_length`/2 + 1).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterbankMatrix {
    pub weights: Matrix,
    /// `n_mels + 2` frequencies in hertz, equally spaced in mel.
    pub band_edges: Vec<f64>,
}

/// Value of the triangle spanning `edges[0..3]` at frequency `f`.
pub fn triangle(edges: &[f64], f: f64) -> f64 {
    let (lo, mid, hi) = (edges[0], edges[1], edges[2]);
    let up = (f - lo) / (mid - lo);
    let down = (hi - f) / (hi - mid);
    up.min(down).max(0.0)
}

pub fn mel_filterbank(n_mels: usize, fft_length: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Result<FilterbankMatrix> {
    let nyquist = sample_rate as f64 / 2.0;
    if n_mels == 0 || fft_length < 2 || sample_rate == 0 {
        return arg_err("mel_filterbank", "n_mels, fft_length and sample_rate must be positive");
    }
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return arg_err("mel_filterbank", format!("need 0 <= f_min ({f_min}) < f_max ({f_max}) <= {nyquist}"));
    }
    let (m_lo, m_hi) = (hz_to_mel(f_min)?, hz_to_mel(f_max)?);
    let band_edges =
        (0..n_mels + 2).map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64)).collect::<Result<Vec<_>>>()?;
    let n_bins = fft_length / 2 + 1;
    let bin_hz = sample_rate as f64 / fft_length as f64;
    let mut weights = Matrix::zeros(n_mels, n_bins);
    for k in 0..n_mels {
        let edges = &band_edges[k..k + 3];
        for b in 0..n_bins {
            weights.data[k * n_bins + b] = triangle(edges, b as f64 * bin_hz);
        }
        if weights.row(k).iter().all(|&w| w <= 0.0) {
            return arg_err(
                "mel_filterbank",
                format!("filter {k} ({:.2}-{:.2} Hz) covers no FFT bin; too many mels for fft length {fft_length}", edges[0], edges[2]),
            );
        }
    }
    Ok(FilterbankMatrix { weights, band_edges })
}

/// `bank · power`, one column per frame.
pub fn mel_spectrogram(power: &Matrix, bank: &FilterbankMatrix) -> Result<Matrix> {
    let w = &bank.weights;
    if w.cols != power.rows {
        return Err(CoreError::Shape { op: "mel_spectrogram", detail: format!("bank has {} bins, power has {}", w.cols, power.rows) });
    }
    let mut out = Matrix::zeros(w.rows, power.cols);
    gemm(
        1.0,
        MatRef::new(&w.data, w.rows, w.cols),
        MatRef::new(&power.data, power.rows, power.cols),
        0.0,
        MatMut::new(&mut out.data, w.rows, power.cols),
    );
    // Products of non-negative values; clamp away any negative zero.
    for v in &mut out.data {
        *v = v.max(0.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogScale {
    /// `10 log10(max(x, floor))`
    #[default]
    Decibel,
    /// `ln(max(x, floor))`
    Natural,
}

pub fn log_compress(values: &Matrix, floor: f64, scale: LogScale) -> Result<Matrix> {
    if !(floor > 0.0) {
        return arg_err("log_compress", "floor must be positive");
    }
    let f = |v: f64| match scale {
        LogScale::Decibel => 10.0 * v.max(floor).log10(),
        LogScale::Natural => v.max(floor).ln(),
    };
    Ok(Matrix { rows: values.rows, cols: values.cols, data: values.data.iter().map(|&v| f(v)).collect() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SpectroKind {
    Stft,
    #[default]
    Mel,
}

impl SpectroKind {
    pub fn name(self) -> &'static str {
        match self {
            SpectroKind::Stft => "stft",
            SpectroKind::Mel => "mel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stft" => Ok(SpectroKind::Stft),
            "mel" => Ok(SpectroKind::Mel),
            other => arg_err("SpectroKind", format!("unknown representation {other:?} (stft|mel)")),
        }
    }
}

/// 224×224 RGB image, interleaved HWC, channels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectroImage {
    pub pixels: Vec<f32>,
    pub kind: SpectroKind,
}

impl SpectroImage {
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * IMAGE_SIZE + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn from_rgb8(rgb: &[u8], kind: SpectroKind) -> Result<Self> {
        if rgb.len() != IMAGE_SIZE * IMAGE_SIZE * 3 {
            return Err(CoreError::Shape { op: "SpectroImage::from_rgb8", detail: format!("{} bytes", rgb.len()) });
        }
        Ok(Self { pixels: rgb.iter().map(|&b| b as f32 / 255.0).collect(), kind })
    }
}

/// Map `v` in [0, 1] through the colormap, interpolating between table entries.
pub fn colormap(v: f64) -> [f64; 3] {
    let pos = v.clamp(0.0, 1.0) * 255.0;
    let i = (pos.floor() as usize).min(254);
    let frac = pos - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * frac)
}

/// Min-max normalize, colormap, flip so row 0 sits at the bottom, then bilinear
/// resize to 224×224 with half-pixel centers. A constant matrix maps to the
/// colormap midpoint.
pub fn render_image(values: &Matrix, kind: SpectroKind) -> Result<SpectroImage> {
    if values.rows == 0 || values.cols == 0 {
        return arg_err("render_image", "empty matrix");
    }
    if values.data.iter().any(|v| !v.is_finite()) {
        return arg_err("render_image", "non-finite values");
    }
    let (lo, hi) = values.min_max();
    let (h, w) = (values.rows, values.cols);
    // Colored source grid, top row = highest frequency.
    let mut grid = vec![[0.0f64; 3]; h * w];
    for r in 0..h {
        for c in 0..w {
            let v = values.get(r, c);
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            grid[(h - 1 - r) * w + c] = colormap(t);
        }
    }
    let ys = resize_axis(h, IMAGE_SIZE);
    let xs = resize_axis(w, IMAGE_SIZE);
    let mut pixels = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p = |y: usize, x: usize| grid[y * w + x];
            let (a, b, c, d) = (p(y0, x0), p(y0, x1), p(y1, x0), p(y1, x1));
            for ch in 0..3 {
                let top = a[ch] + (b[ch] - a[ch]) * fx;
                let bottom = c[ch] + (d[ch] - c[ch]) * fx;
                pixels.push((top + (bottom - top) * fy).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok(SpectroImage { pixels, kind })
}

/// Source indices and blend weight for each destination pixel (half-pixel centers, edge clamp).
fn resize_axis(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Feature extraction settings shared by the dataset builder, the CLI and the service.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub stft: StftParams,
    pub n_mels: usize,
    pub f_min: f64,
    /// `None` means Nyquist.
    pub f_max: Option<f64>,
    pub floor: f64,
    pub scale: LogScale,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { stft: StftParams::default(), n_mels: N_MELS, f_min: 0.0, f_max: None, floor: LOG_FLOOR, scale: LogScale::Decibel }
    }
}

/// Reusable feature extractor holding a prebuilt filterbank.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub config: FeatureConfig,
    pub sample_rate: u32,
    bank: FilterbankMatrix,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig, sample_rate: u32) -> Result<Self> {
        let f_max = config.f_max.unwrap_or(sample_rate as f64 / 2.0);
        let bank = mel_filterbank(config.n_mels, config.stft.fft_length, sample_rate, config.f_min, f_max)?;
        Ok(Self { config, sample_rate, bank })
    }

    pub fn filterbank(&self) -> &FilterbankMatrix {
        &self.bank
    }

    fn check_rate(&self, rate: u32) -> Result<()> {
        if rate != self.sample_rate {
            return arg_err("FeatureExtractor", format!("expected {} Hz audio, got {rate} Hz", self.sample_rate));
        }
        Ok(())
    }

    /// Log-mel spectrogram, n_mels × frames.
    pub fn log_mel(&self, samples: &[f32], rate: u32) -> Result<Matrix> {
        self.check_rate(rate)?;
        let spec = stft(samples, rate, &self.config.stft)?;
        let mel = mel_spectrogram(&power_spectrum(&spec), &self.bank)?;
        log_compress(&mel, self.config.floor, self.config.scale)
    }

    /// Log-power STFT spectrogram, bins × frames.
    pub fn log_stft(&self, samples: &[f32], rate: u32) -> Result<Matrix> {
        self.check_rate(rate)?;
        let spec = stft(samples, rate, &self.config.stft)?;
        log_compress(&power_spectrum(&spec), self.config.floor, self.config.scale)
    }

    pub fn features(&self, samples: &[f32], rate: u32, kind: SpectroKind) -> Result<Matrix> {
        match kind {
            SpectroKind::Mel => self.log_mel(samples, rate),
            SpectroKind::Stft => self.log_stft(samples, rate),
        }
    }

    pub fn image(&self, samples: &[f32], rate: u32, kind: SpectroKind) -> Result<SpectroImage> {
        render_image(&self.features(samples, rate, kind)?, kind)
    }
}

pub fn save_png(path: impl AsRef<Path>, image: &SpectroImage) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let bytes = encode_png(image)?;
    std::io::BufWriter::new(file).write_all(&bytes).map_err(io_err(path))
}

pub fn encode_png(image: &SpectroImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, IMAGE_SIZE as u32, IMAGE_SIZE as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let png_err = |e: png::EncodingError| CoreError::Format { what: "png output", detail: e.to_string() };
        let mut writer = encoder.write_header().map_err(png_err)?;
        writer.write_image_data(&image.to_rgb8()).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

/// Load an 8-bit RGB or RGBA PNG of size 224×224 as RGB bytes.
pub fn load_png_rgb(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let bad = |detail: String| CoreError::Format { what: "png image", detail: format!("{}: {detail}", path.display()) };
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    if info.width as usize != IMAGE_SIZE || info.height as usize != IMAGE_SIZE || info.bit_depth != png::BitDepth::Eight {
        return Err(bad(format!("expected 224x224 8-bit, got {}x{} {:?}", info.width, info.height, info.bit_depth)));
    }
    let data = &buf[..info.buffer_size()];
    match info.color_type {
        png::ColorType::Rgb => Ok(data.to_vec()),
        png::ColorType::Rgba => Ok(data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect()),
        other => Err(bad(format!("unsupported color type {other:?}"))),
    }
}

pub fn load_png(path: impl AsRef<Path>, kind: SpectroKind) -> Result<SpectroImage> {
    SpectroImage::from_rgb8(&load_png_rgb(path)?, kind)
}

const LMEL_MAGIC: &[u8; 4] = b"LMEL";

/// 16-byte header {"LMEL", n_mels, n_frames, reserved}, then f32 values row-major, little-endian.
pub fn write_lmel(mut w: impl Write, m: &Matrix) -> std::io::Result<()> {
    w.write_all(LMEL_MAGIC)?;
    w.write_all(&(m.rows as u32).to_le_bytes())?;
    w.write_all(&(m.cols as u32).to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for &v in &m.data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_lmel(mut r: impl Read) -> Result<Matrix> {
    let bad = |detail: String| CoreError::Format { what: "log-mel file", detail };
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|e| bad(e.to_string()))?;
    if &header[..4] != LMEL_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(4), word(8));
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| bad(e.to_string()))?;
    if bytes.len() != rows * cols * 4 {
        return Err(bad(format!("{} payload bytes for {rows}x{cols}", bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Matrix::from_vec(rows, cols, data)
}
