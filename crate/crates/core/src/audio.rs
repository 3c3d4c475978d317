//! WAV decoding, resampling and fixed-length window extraction.

use std::f64::consts::PI;
use std::io::{Read, Seek};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, CoreError, Result};

/// Sample rate of the GTZAN corpus and of every feature computed here.
pub const SAMPLE_RATE: u32 = 22050;
/// Length of one analysis window in seconds.
pub const WINDOW_SECONDS: f64 = 3.0;
/// Windows drawn per 30 s song.
pub const WINDOWS_PER_SONG: usize = 5;

/// Mono audio with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_id: String,
}

/// A contiguous excerpt of a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioWindow {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_id: String,
    /// Start index into the parent clip, in samples.
    pub offset: usize,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        let source_id = source_id.into();
        if sample_rate == 0 {
            return arg_err("AudioClip::new", "sample rate must be positive");
        }
        if samples.is_empty() {
            return Err(CoreError::EmptyAudio(source_id));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return arg_err("AudioClip::new", "samples must be finite");
        }
        let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        Ok(Self { samples, sample_rate, source_id })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

impl AudioWindow {
    /// The whole window viewed as a clip, e.g. for re-encoding.
    pub fn to_clip(&self) -> AudioClip {
        AudioClip { samples: self.samples.clone(), sample_rate: self.sample_rate, source_id: self.source_id.clone() }
    }
}

/// Decode a PCM WAV file (8/16/24/32-bit integer or 32-bit float, mono or stereo).
pub fn decode_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let reader = hound::WavReader::open(path).map_err(|e| classify_hound(&name, e))?;
    let source_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| name.clone());
    decode_reader(reader, &name, source_id)
}

/// Decode WAV bytes held in memory (used for uploads).
pub fn decode_wav_bytes(bytes: &[u8], source_id: &str) -> Result<AudioClip> {
    let reader = hound::WavReader::new(std::io::Cursor::new(bytes)).map_err(|e| classify_hound(source_id, e))?;
    decode_reader(reader, source_id, source_id.to_string())
}

fn classify_hound(name: &str, err: hound::Error) -> CoreError {
    match err {
        hound::Error::Unsupported => CoreError::UnsupportedEncoding { path: name.to_string(), detail: "encoding not supported".into() },
        hound::Error::TooWide => CoreError::UnsupportedEncoding { path: name.to_string(), detail: "sample width too large".into() },
        other => CoreError::UnreadableAudio { path: name.to_string(), detail: other.to_string() },
    }
}

fn decode_reader<R: Read + Seek>(mut reader: hound::WavReader<R>, name: &str, source_id: String) -> Result<AudioClip> {
    let spec = reader.spec();
    let unsupported = |detail: String| CoreError::UnsupportedEncoding { path: name.to_string(), detail };
    if spec.channels == 0 || spec.channels > 2 {
        return Err(unsupported(format!("{} channels", spec.channels)));
    }
    if spec.sample_rate == 0 {
        return Err(unsupported("sample rate 0".into()));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| classify_hound(name, e))?
        }
        (hound::SampleFormat::Float, 32) => {
            reader.samples::<f32>().collect::<std::result::Result<_, _>>().map_err(|e| classify_hound(name, e))?
        }
        (format, bits) => return Err(unsupported(format!("{bits}-bit {format:?}"))),
    };
    if interleaved.is_empty() {
        return Err(CoreError::EmptyAudio(name.to_string()));
    }
    if interleaved.iter().any(|s| !s.is_finite()) {
        return Err(unsupported("non-finite float samples".into()));
    }
    let channels = spec.channels as usize;
    let samples: Vec<f32> = interleaved
        .chunks_exact(channels)
        .map(|frame| (frame.iter().map(|&s| s as f64).sum::<f64>() / channels as f64) as f32)
        .map(|s| s.clamp(-1.0, 1.0))
        .collect();
    if samples.is_empty() {
        return Err(CoreError::EmptyAudio(name.to_string()));
    }
    Ok(AudioClip { samples, sample_rate: spec.sample_rate, source_id })
}

/// Write a 16-bit mono PCM WAV. Amplitudes are scaled by 32768 and clamped.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec { channels: 1, sample_rate: clip.sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(source) => CoreError::Io { path: path.to_path_buf(), source },
        other => CoreError::Format { what: "wav output", detail: other.to_string() },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &clip.samples {
        writer.write_sample(quantize16(s)).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

/// Encode a clip as 16-bit mono WAV bytes.
pub fn encode_wav_bytes(clip: &AudioClip) -> Result<Vec<u8>> {
    let spec = hound::WavSpec { channels: 1, sample_rate: clip.sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut cursor = std::io::Cursor::new(Vec::new());
    let wrap = |e: hound::Error| CoreError::Format { what: "wav output", detail: e.to_string() };
    let mut writer = hound::WavWriter::new(&mut cursor, spec).map_err(wrap)?;
    for &s in &clip.samples {
        writer.write_sample(quantize16(s)).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)?;
    Ok(cursor.into_inner())
}

fn quantize16(s: f32) -> i16 {
    (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

const HALF_TAPS: usize = 32;
const KAISER_BETA: f64 = 8.6;

/// Band-limited resampling with a 64-tap Kaiser-windowed sinc.
///
/// When downsampling the sinc cutoff follows the target Nyquist and the kernel
/// widens accordingly. Identity when the rates match.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return arg_err("resample", "target rate must be positive");
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let cutoff = ratio.min(1.0);
    let half_width = HALF_TAPS as f64 / cutoff;
    let n_out = (clip.samples.len() as f64 * ratio).round().max(1.0) as usize;
    let taper = kaiser_table();
    let src = &clip.samples;
    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out {
        let t = n as f64 / ratio;
        let lo = (t - half_width).ceil().max(0.0) as usize;
        let hi = ((t + half_width).floor() as usize).min(src.len() - 1);
        let (mut acc, mut wsum) = (0.0, 0.0);
        for (k, &x) in src.iter().enumerate().take(hi + 1).skip(lo) {
            let d = t - k as f64;
            let w = cutoff * sinc(cutoff * d) * lookup(&taper, (d / half_width).abs());
            acc += w * x as f64;
            wsum += w;
        }
        // Normalizing by the kernel sum gives exact unit DC gain, including near the edges.
        let y = if wsum.abs() > 1e-12 { acc / wsum } else { acc };
        out.push(y.clamp(-1.0, 1.0) as f32);
    }
    Ok(AudioClip { samples: out, sample_rate: target_rate, source_id: clip.source_id.clone() })
}

const TAPER_RESOLUTION: usize = 4096;

/// Kaiser window sampled on |u| in [0, 1].
fn kaiser_table() -> Vec<f64> {
    let norm = bessel_i0(KAISER_BETA);
    (0..=TAPER_RESOLUTION)
        .map(|i| {
            let u = i as f64 / TAPER_RESOLUTION as f64;
            bessel_i0(KAISER_BETA * (1.0 - u * u).max(0.0).sqrt()) / norm
        })
        .collect()
}

fn lookup(table: &[f64], u: f64) -> f64 {
    if u >= 1.0 {
        return 0.0;
    }
    let pos = u * TAPER_RESOLUTION as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    table[i] * (1.0 - frac) + table[i + 1] * frac
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut sum, mut term) = (1.0, 1.0);
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Number of samples in a window of `seconds` at `rate`.
pub fn window_len(seconds: f64, rate: u32) -> usize {
    (seconds * rate as f64).round() as usize
}

/// Draw `count` pairwise disjoint windows at seeded random offsets.
///
/// The slack left after placing all windows is cut at `count` uniform points;
/// window `i` starts at the `i`-th cut plus the lengths of the windows before it.
/// Windows come back sorted by offset.
pub fn sample_windows(clip: &AudioClip, window_seconds: f64, count: usize, rng_seed: u64) -> Result<Vec<AudioWindow>> {
    if !(window_seconds > 0.0) || count == 0 {
        return arg_err("sample_windows", "window length and count must be positive");
    }
    let len = window_len(window_seconds, clip.sample_rate);
    let needed = len * count;
    if len == 0 || clip.samples.len() < needed {
        return Err(CoreError::AudioTooShort { needed_seconds: window_seconds * count as f64, samples: clip.samples.len(), needed });
    }
    let slack = clip.samples.len() - needed;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut cuts: Vec<usize> = (0..count).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();
    Ok(cuts
        .into_iter()
        .enumerate()
        .map(|(i, cut)| {
            let offset = cut + i * len;
            AudioWindow {
                samples: clip.samples[offset..offset + len].to_vec(),
                sample_rate: clip.sample_rate,
                source_id: clip.source_id.clone(),
                offset,
            }
        })
        .collect())
}

/// The centered window of `window_seconds`.
pub fn center_window(clip: &AudioClip, window_seconds: f64) -> Result<AudioWindow> {
    let len = window_len(window_seconds, clip.sample_rate);
    if len == 0 || clip.samples.len() < len {
        return Err(CoreError::AudioTooShort { needed_seconds: window_seconds, samples: clip.samples.len(), needed: len });
    }
    let offset = (clip.samples.len() - len) / 2;
    Ok(AudioWindow {
        samples: clip.samples[offset..offset + len].to_vec(),
        sample_rate: clip.sample_rate,
        source_id: clip.source_id.clone(),
        offset,
    })
}

/// `count` evenly spaced, non-overlapping windows covering the clip (first at 0, last at the end).
pub fn even_windows(clip: &AudioClip, window_seconds: f64, count: usize) -> Result<Vec<AudioWindow>> {
    if count == 0 {
        return arg_err("even_windows", "count must be positive");
    }
    let len = window_len(window_seconds, clip.sample_rate);
    let needed = len * count;
    if len == 0 || clip.samples.len() < needed {
        return Err(CoreError::AudioTooShort { needed_seconds: window_seconds * count as f64, samples: clip.samples.len(), needed });
    }
    let slack = clip.samples.len() - needed;
    Ok((0..count)
        .map(|i| {
            let gap = if count == 1 { slack / 2 } else { slack * i / (count - 1) };
            let offset = gap + i * len;
            AudioWindow {
                samples: clip.samples[offset..offset + len].to_vec(),
                sample_rate: clip.sample_rate,
                source_id: clip.source_id.clone(),
                offset,
            }
        })
        .collect())
}
