//! Procedural stand-in corpus: ten synthetic "genres", each a distinct
//! combination of register, tempo, envelope, timbre and percussion.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_wav, AudioClip, SAMPLE_RATE};
use crate::dataset::{GENRES, NUM_CLASSES};
use crate::error::{arg_err, io_err, Result};

#[derive(Debug, Clone, Copy)]
struct Recipe {
    root_hz: f64,
    /// Note onsets per second.
    pulse_hz: f64,
    /// Amplitude e-folding time of each note.
    decay: f64,
    harmonics: usize,
    /// tanh drive; 1 is nearly clean.
    drive: f64,
    /// Level of the noise bursts struck between notes.
    noise: f64,
    /// Probability that a beat is silent.
    rest: f64,
    /// Notes land half a beat late.
    offbeat: bool,
    scale: &'static [i32],
}

const MAJOR: &[i32] = &[0, 2, 4, 5, 7, 9, 11, 12, 14, 16];
const PENTA: &[i32] = &[0, 2, 4, 7, 9, 12];
const BLUES: &[i32] = &[0, 3, 5, 6, 7, 10];
const CHROMATIC: &[i32] = &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];
const POWER: &[i32] = &[0, 7, 12];

#[rustfmt::skip]
const RECIPES: [Recipe; NUM_CLASSES] = [
    // blues
    Recipe { root_hz: 110.0, pulse_hz: 1.6, decay: 0.45, harmonics: 4, drive: 1.5, noise: 0.0, rest: 0.1, offbeat: false, scale: BLUES },
    // classical
    Recipe { root_hz: 262.0, pulse_hz: 0.8, decay: 1.4, harmonics: 2, drive: 1.0, noise: 0.0, rest: 0.0, offbeat: false, scale: MAJOR },
    // country
    Recipe { root_hz: 196.0, pulse_hz: 2.2, decay: 0.18, harmonics: 6, drive: 1.0, noise: 0.05, rest: 0.0, offbeat: false, scale: PENTA },
    // disco
    Recipe { root_hz: 330.0, pulse_hz: 2.0, decay: 0.12, harmonics: 3, drive: 1.0, noise: 0.5, rest: 0.0, offbeat: false, scale: MAJOR },
    // hiphop
    Recipe { root_hz: 55.0, pulse_hz: 1.5, decay: 0.35, harmonics: 2, drive: 2.0, noise: 0.35, rest: 0.25, offbeat: false, scale: POWER },
    // jazz
    Recipe { root_hz: 440.0, pulse_hz: 3.0, decay: 0.2, harmonics: 3, drive: 1.0, noise: 0.08, rest: 0.4, offbeat: false, scale: CHROMATIC },
    // metal
    Recipe { root_hz: 82.0, pulse_hz: 6.0, decay: 0.15, harmonics: 8, drive: 8.0, noise: 0.2, rest: 0.0, offbeat: false, scale: POWER },
    // pop
    Recipe { root_hz: 523.0, pulse_hz: 2.0, decay: 0.3, harmonics: 3, drive: 1.0, noise: 0.15, rest: 0.1, offbeat: false, scale: PENTA },
    // reggae
    Recipe { root_hz: 247.0, pulse_hz: 1.3, decay: 0.08, harmonics: 4, drive: 1.2, noise: 0.1, rest: 0.0, offbeat: true, scale: MAJOR },
    // rock
    Recipe { root_hz: 147.0, pulse_hz: 2.5, decay: 0.25, harmonics: 5, drive: 4.0, noise: 0.25, rest: 0.0, offbeat: false, scale: POWER },
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub songs_per_genre: usize,
    pub seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { songs_per_genre: 5, seconds: 30.0, sample_rate: SAMPLE_RATE, seed: 7 }
    }
}

fn song_rng(seed: u64, genre: usize, song: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((genre * 1_000_003 + song) as u64);
    rng
}

/// One song of `genre` (a label index). Each (seed, genre, song) triple gives
/// the same audio regardless of which other songs are generated.
pub fn synthesize_song(genre: usize, song: usize, config: &SynthConfig) -> Result<AudioClip> {
    if genre >= NUM_CLASSES {
        return arg_err("synthesize_song", format!("genre index {genre} out of range"));
    }
    if !(config.seconds > 0.0) || config.sample_rate == 0 {
        return arg_err("synthesize_song", "duration and sample rate must be positive");
    }
    let recipe = RECIPES[genre];
    let mut rng = song_rng(config.seed, genre, song);
    let sr = config.sample_rate as f64;
    let n = (config.seconds * sr).round() as usize;
    let mut out = vec![0.0f64; n];

    // Per-song variation: key, tempo and balance.
    let transpose = 2f64.powf(rng.random_range(-2.0..=2.0) / 12.0);
    let pulse = recipe.pulse_hz * rng.random_range(0.9..1.1);
    let noise_level = recipe.noise * rng.random_range(0.7..1.3);
    let beat = sr / pulse;
    let offset = if recipe.offbeat { 0.5 * beat } else { 0.0 };
    let note_len = ((recipe.decay * 7.0 * sr) as usize).max(1);
    let nyquist = sr / 2.0;

    // Half-beat grid: notes on even steps, noise bursts on odd ones.
    for k in 0.. {
        let start = (offset + k as f64 * beat / 2.0) as usize;
        if start >= n {
            break;
        }
        if k % 2 == 0 {
            if rng.random::<f64>() < recipe.rest {
                continue;
            }
            let step = recipe.scale[rng.random_range(0..recipe.scale.len())];
            let f = recipe.root_hz * transpose * 2f64.powf(step as f64 / 12.0);
            let amp = rng.random_range(0.6..1.0);
            let phase = rng.random_range(0.0..TAU);
            let end = (start + note_len).min(n);
            for (i, v) in out[start..end].iter_mut().enumerate() {
                let t = i as f64 / sr;
                let env = amp * (-t / recipe.decay).exp() * (t * 200.0).min(1.0);
                let mut s = 0.0;
                for h in (1..=recipe.harmonics).take_while(|&h| f * h as f64 <= nyquist) {
                    s += (TAU * f * h as f64 * t + phase * h as f64).sin() / h as f64;
                }
                *v += env * s;
            }
        } else if noise_level > 0.0 {
            let len = ((0.05 * sr) as usize).min(n - start);
            let mut prev = 0.0;
            for (i, v) in out[start..start + len].iter_mut().enumerate() {
                let white: f64 = rng.random_range(-1.0..1.0);
                // First difference tilts the burst toward high frequencies.
                *v += noise_level * (white - prev) * (-(i as f64) / (0.01 * sr)).exp();
                prev = white;
            }
        }
    }

    // Drive, a faint noise floor, then peak-normalize to 0.8.
    let gain = recipe.drive;
    for v in &mut out {
        *v = (gain * *v).tanh() / gain.tanh() + 0.003 * rng.random_range(-1.0..1.0);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let samples = out.iter().map(|v| (0.8 * v / peak) as f32).collect();
    AudioClip::new(samples, config.sample_rate, format!("{}.{song:05}", GENRES[genre]))
}

/// Write `<out>/<genre>/<genre>.<NNNNN>.wav` for every genre and song.
pub fn write_corpus(out_dir: impl AsRef<Path>, config: &SynthConfig) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    let mut paths = Vec::new();
    for (g, name) in GENRES.iter().enumerate() {
        let dir = out_dir.join(name);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for song in 0..config.songs_per_genre {
            let clip = synthesize_song(g, song, config)?;
            let path = dir.join(format!("{}.wav", clip.source_id));
            write_wav(&path, &clip)?;
            paths.push(path);
        }
    }
    Ok(paths)
}
