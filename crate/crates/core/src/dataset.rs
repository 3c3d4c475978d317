//! Labeled manifests, song-grouped splits and image batches.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use genrenet_nn::Tensor;

use crate::dsp::{load_png_rgb, IMAGE_SIZE};
use crate::error::{arg_err, io_err, CoreError, Result};

/// The ten genres, in label order.
pub const GENRES: [&str; 10] = ["blues", "classical", "country", "disco", "hiphop", "jazz", "metal", "pop", "reggae", "rock"];
pub const NUM_CLASSES: usize = GENRES.len();

pub fn genre_index(name: &str) -> Option<usize> {
    GENRES.iter().position(|g| *g == name)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    pub label: usize,
    /// `<genre>.<number>`, shared by every window cut from one song.
    pub song_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

/// Song id from a file name of the form `<genre>.<digits>[.anything]`.
pub fn song_id_from_name(file_name: &str) -> Result<String> {
    let mut parts = file_name.split('.');
    let (genre, number) = match (parts.next(), parts.next()) {
        (Some(g), Some(n)) => (g, n),
        _ => return Err(CoreError::BadFileName(file_name.to_string())),
    };
    if genre_index(genre).is_none() || number.is_empty() || !number.bytes().all(|b| b.is_ascii_digit()) {
        return Err(CoreError::BadFileName(file_name.to_string()));
    }
    Ok(format!("{genre}.{number}"))
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut items = std::fs::read_dir(path)
        .map_err(io_err(path))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(io_err(path))?;
    items.retain(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')));
    items.sort();
    Ok(items)
}

/// Scan `root/<genre>/<genre>.<number>.*.<extension>`.
///
/// Every subdirectory must be a known genre; loose files in `root` are ignored.
/// Entries are ordered by genre, then by path.
pub fn build_manifest(root: impl AsRef<Path>, extension: &str) -> Result<Manifest> {
    let root = root.as_ref();
    let mut by_genre: BTreeMap<usize, Vec<ManifestEntry>> = BTreeMap::new();
    for dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let label = genre_index(&name).ok_or(CoreError::UnknownGenre(name.clone()))?;
        for file in sorted_dir(&dir)? {
            if !file.is_file() || file.extension().is_none_or(|e| e != extension) {
                continue;
            }
            let file_name = file.file_name().unwrap().to_string_lossy().into_owned();
            let song_id = song_id_from_name(&file_name)?;
            if !song_id.starts_with(&format!("{name}.")) {
                return Err(CoreError::BadFileName(format!("{name}/{file_name}")));
            }
            by_genre.entry(label).or_default().push(ManifestEntry { image_path: file, label, song_id });
        }
    }
    Ok(Manifest { entries: by_genre.into_values().flatten().collect() })
}

impl Manifest {
    pub fn genres(&self) -> &'static [&'static str] {
        &GENRES
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn song_ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.song_id.as_str()).collect()
    }

    /// Entry indices per song, songs in lexicographic order.
    pub fn groups(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            groups.entry(&e.song_id).or_default().push(i);
        }
        groups
    }

    /// One `image_path\tgenre_index\tsong_id` line per entry.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", e.image_path.display(), e.label, e.song_id);
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |line: usize, detail: &str| CoreError::Format { what: "manifest", detail: format!("line {line}: {detail}") };
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(n + 1, "expected 3 tab-separated fields"));
            }
            let label: usize = fields[1].parse().map_err(|_| bad(n + 1, "bad genre index"))?;
            if label >= NUM_CLASSES || fields[2].is_empty() {
                return Err(bad(n + 1, "genre index out of range or empty song id"));
            }
            entries.push(ManifestEntry { image_path: PathBuf::from(fields[0]), label, song_id: fields[2].to_string() });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_tsv()).map_err(io_err(path.as_ref()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path.as_ref()).map_err(io_err(path.as_ref()))?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub grouped: bool,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Train,
    Test,
}

impl SplitPlan {
    pub fn side(&self, side: Side) -> &[usize] {
        match side {
            Side::Train => &self.train,
            Side::Test => &self.test,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("#seed\t{}\n#grouped\t{}\n#ratio\t{}\n", self.seed, self.grouped, self.ratio);
        for i in &self.train {
            let _ = writeln!(out, "train\t{i}");
        }
        for i in &self.test {
            let _ = writeln!(out, "test\t{i}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |detail: String| CoreError::Format { what: "split plan", detail };
        let mut plan = SplitPlan { train: vec![], test: vec![], seed: 0, grouped: false, ratio: 0.0 };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line.split_once('\t').ok_or_else(|| bad(format!("no tab in {line:?}")))?;
            let parse_err = |_| bad(format!("bad value in {line:?}"));
            match key {
                "#seed" => plan.seed = value.parse().map_err(|_| bad(format!("bad seed {value:?}")))?,
                "#grouped" => plan.grouped = value.parse().map_err(|_| bad(format!("bad flag {value:?}")))?,
                "#ratio" => plan.ratio = value.parse().map_err(|_| bad(format!("bad ratio {value:?}")))?,
                "train" => plan.train.push(value.parse().map_err(parse_err)?),
                "test" => plan.test.push(value.parse().map_err(parse_err)?),
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        Ok(plan)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_tsv()).map_err(io_err(path.as_ref()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path.as_ref()).map_err(io_err(path.as_ref()))?)
    }
}

fn check_ratio(op: &'static str, ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return arg_err(op, format!("ratio {ratio} must lie strictly between 0 and 1"));
    }
    Ok(())
}

fn ceil_share(ratio: f64, n: usize) -> usize {
    // Guard against products like 0.8 * 5 landing a hair above an integer.
    ((ratio * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Song-grouped, genre-stratified split.
///
/// Songs are shuffled within each genre. The train side receives
/// `ceil(ratio * songs)` songs in total (clamped so neither side is empty),
/// allotted to genres by their `floor(ratio * n_genre)` share plus largest
/// remainders, ties to the lower genre index.
pub fn group_shuffle_split(manifest: &Manifest, ratio: f64, seed: u64) -> Result<SplitPlan> {
    check_ratio("group_shuffle_split", ratio)?;
    let groups = manifest.groups();
    if groups.len() < 2 {
        return arg_err("group_shuffle_split", format!("need at least 2 songs, found {}", groups.len()));
    }
    let mut songs_by_genre: Vec<Vec<&str>> = vec![Vec::new(); NUM_CLASSES];
    for (song, idx) in &groups {
        songs_by_genre[manifest.entries[idx[0]].label].push(song);
    }
    let total = ceil_share(ratio, groups.len()).clamp(1, groups.len() - 1);
    let mut quota: Vec<usize> = songs_by_genre.iter().map(|s| (ratio * s.len() as f64 + 1e-9).floor() as usize).collect();
    let assigned: usize = quota.iter().sum();
    let mut by_remainder: Vec<usize> = (0..NUM_CLASSES).collect();
    let remainder = |g: usize| ratio * songs_by_genre[g].len() as f64 - quota[g] as f64;
    by_remainder.sort_by(|&a, &b| remainder(b).total_cmp(&remainder(a)).then(a.cmp(&b)));
    if total > assigned {
        let mut left = total - assigned;
        for &g in by_remainder.iter().cycle().take(NUM_CLASSES * groups.len()) {
            if left == 0 {
                break;
            }
            if quota[g] < songs_by_genre[g].len() {
                quota[g] += 1;
                left -= 1;
            }
        }
    } else {
        let mut extra = assigned - total;
        for &g in by_remainder.iter().rev().cycle().take(NUM_CLASSES * groups.len()) {
            if extra == 0 {
                break;
            }
            if quota[g] > 0 {
                quota[g] -= 1;
                extra -= 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (g, songs) in songs_by_genre.iter_mut().enumerate() {
        songs.shuffle(&mut rng);
        for (i, song) in songs.iter().enumerate() {
            let side = if i < quota[g] { &mut train } else { &mut test };
            side.extend_from_slice(&groups[song]);
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan { train, test, seed, grouped: true, ratio })
}

/// Entry-level shuffle split that ignores songs. Only for measuring leakage.
pub fn naive_split(manifest: &Manifest, ratio: f64, seed: u64) -> Result<SplitPlan> {
    check_ratio("naive_split", ratio)?;
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ceil_share(ratio, order.len()).min(order.len());
    let mut train = order[..cut].to_vec();
    let mut test = order[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan { train, test, seed, grouped: false, ratio })
}

/// Song ids present on both sides of a plan.
pub fn leaked_songs<'a>(manifest: &'a Manifest, plan: &SplitPlan) -> BTreeSet<&'a str> {
    let ids = |idx: &[usize]| idx.iter().map(|&i| manifest.entries[i].song_id.as_str()).collect::<BTreeSet<_>>();
    let train = ids(&plan.train);
    ids(&plan.test).intersection(&train).copied().collect()
}

/// Positions `0..n` grouped into batches, optionally shuffled by `seed`. The last batch may be short.
pub fn batch_order(n: usize, batch_size: usize, seed: Option<u64>) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return arg_err("batch_order", "batch size must be at least 1");
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

pub const IMAGE_BYTES: usize = IMAGE_SIZE * IMAGE_SIZE * 3;

/// Interleaved RGB bytes to a channel-first 3×224×224 slice in [0, 1].
pub fn rgb_to_chw(rgb: &[u8], out: &mut [f32]) {
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    for (p, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + p] = px[c] as f32 / 255.0;
        }
    }
}

/// One batch: images B×3×224×224 in [0, 1], labels, and the manifest indices they came from.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Images held in memory as RGB bytes (150 KB each).
#[derive(Debug, Clone, Default)]
pub struct ImageSet {
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<usize>,
    /// Manifest index of each image.
    pub indices: Vec<usize>,
}

impl ImageSet {
    pub fn load(manifest: &Manifest, indices: &[usize]) -> Result<Self> {
        let mut set = ImageSet::default();
        for &i in indices {
            let entry = manifest.entries.get(i).ok_or_else(|| CoreError::InvalidArgument {
                op: "ImageSet::load",
                detail: format!("index {i} outside manifest of {}", manifest.len()),
            })?;
            set.push(load_png_rgb(&entry.image_path)?, entry.label, i)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, rgb: Vec<u8>, label: usize, index: usize) -> Result<()> {
        if rgb.len() != IMAGE_BYTES || label >= NUM_CLASSES {
            return arg_err("ImageSet::push", "image must be 224x224 RGB with a label below 10");
        }
        self.images.push(rgb);
        self.labels.push(label);
        self.indices.push(index);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn subset(&self, positions: &[usize]) -> Self {
        Self {
            images: positions.iter().map(|&p| self.images[p].clone()).collect(),
            labels: positions.iter().map(|&p| self.labels[p]).collect(),
            indices: positions.iter().map(|&p| self.indices[p]).collect(),
        }
    }

    /// Assemble the images at `positions` into a batch.
    pub fn batch(&self, positions: &[usize]) -> Batch {
        let per = 3 * IMAGE_SIZE * IMAGE_SIZE;
        let mut data = vec![0.0f32; positions.len() * per];
        for (slot, &p) in data.chunks_exact_mut(per).zip(positions) {
            rgb_to_chw(&self.images[p], slot);
        }
        Batch {
            images: Tensor::from_vec(&[positions.len(), 3, IMAGE_SIZE, IMAGE_SIZE], data).expect("batch shape matches data"),
            labels: positions.iter().map(|&p| self.labels[p]).collect(),
            indices: positions.iter().map(|&p| self.indices[p]).collect(),
        }
    }

    pub fn batches(&self, batch_size: usize, seed: Option<u64>) -> Result<impl Iterator<Item = Batch> + '_> {
        Ok(batch_order(self.len(), batch_size, seed)?.into_iter().map(move |pos| self.batch(&pos)))
    }
}

/// Stream batches for one side of a split, reading PNGs lazily.
/// Every index appears exactly once; the final batch may be short.
pub fn batch_iter<'a>(
    manifest: &'a Manifest,
    indices: &'a [usize],
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<impl Iterator<Item = Result<Batch>> + 'a> {
    let order = batch_order(indices.len(), batch_size, shuffle_seed)?;
    Ok(order.into_iter().map(move |positions| {
        let chosen: Vec<usize> = positions.iter().map(|&p| indices[p]).collect();
        let set = ImageSet::load(manifest, &chosen)?;
        Ok(set.batch(&(0..set.len()).collect::<Vec<_>>()))
    }))
}
