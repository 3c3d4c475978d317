//! Song catalog of mean genre distributions and similarity ranking.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ImageSet, Manifest};
use crate::error::{arg_err, io_err, CoreError, Result};
use crate::models::{predict_batch, GenreDistribution, ModelGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub song_id: String,
    pub title: String,
    pub distribution: GenreDistribution,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Catalog {
    pub entries: Vec<CatalogEntry>,
}

/// Display title for a song id such as `metal.00012`: "Metal 12".
pub fn title_for(song_id: &str) -> String {
    let (genre, number) = song_id.split_once('.').unwrap_or((song_id, ""));
    let mut chars = genre.chars();
    let genre = chars.next().map(|c| c.to_uppercase().chain(chars).collect::<String>()).unwrap_or_default();
    match number.trim_start_matches('0') {
        "" if number.is_empty() => genre,
        "" => format!("{genre} 0"),
        n => format!("{genre} {n}"),
    }
}

impl Catalog {
    pub fn new(entries: Vec<CatalogEntry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.song_id.as_str()) {
                return arg_err("Catalog::new", format!("duplicate song id {}", e.song_id));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Catalog = serde_json::from_str(text).map_err(|e| CoreError::Format { what: "catalog", detail: e.to_string() })?;
        Self::new(c.entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()).map_err(io_err(path.as_ref()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path.as_ref()).map_err(io_err(path.as_ref()))?)
    }
}

/// One entry per song: the mean of the model's distributions over that song's
/// images. Entries are ordered by song id.
pub fn build_catalog(manifest: &Manifest, model: &ModelGraph, batch_size: usize) -> Result<Catalog> {
    if batch_size == 0 {
        return arg_err("build_catalog", "batch size must be >= 1");
    }
    let mut entries = Vec::new();
    for (song_id, indices) in manifest.groups() {
        let images = ImageSet::load(manifest, &indices)?;
        let mut dists = Vec::with_capacity(indices.len());
        for chunk in (0..images.len()).collect::<Vec<_>>().chunks(batch_size) {
            let batch = images.batch(chunk);
            dists.extend(predict_batch(model, &batch.images)?.into_iter().map(|(d, _)| d));
        }
        entries.push(CatalogEntry {
            song_id: song_id.to_string(),
            title: title_for(song_id),
            distribution: GenreDistribution::mean(&dists)?,
        });
    }
    Catalog::new(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    Cosine,
    /// Negative Euclidean distance, so larger is still closer.
    NegativeL2,
}

impl Similarity {
    pub fn score(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Similarity::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    0.0
                } else {
                    dot / (na * nb)
                }
            }
            Similarity::NegativeL2 => -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub song_id: String,
    pub title: String,
    pub similarity: f64,
}

/// The `k` catalog songs most similar to `query`, best first; equal scores are
/// ordered by song id.
pub fn recommend(query: &GenreDistribution, catalog: &Catalog, k: usize, similarity: Similarity) -> Result<Vec<Recommendation>> {
    if catalog.is_empty() {
        return Err(CoreError::EmptyCatalog);
    }
    if let Some(e) = catalog.entries.iter().find(|e| e.distribution.probs.len() != query.probs.len()) {
        return Err(CoreError::Shape {
            op: "recommend",
            detail: format!("{} has {} classes, query has {}", e.song_id, e.distribution.probs.len(), query.probs.len()),
        });
    }
    let mut scored: Vec<(f64, &CatalogEntry)> =
        catalog.entries.iter().map(|e| (similarity.score(&query.probs, &e.distribution.probs), e)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.song_id.cmp(&b.1.song_id)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(s, e)| Recommendation { song_id: e.song_id.clone(), title: e.title.clone(), similarity: s })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, probs: Vec<f64>) -> CatalogEntry {
        CatalogEntry { song_id: id.into(), title: title_for(id), distribution: GenreDistribution { probs } }
    }

    #[test]
    fn titles() {
        assert_eq!(title_for("metal.00012"), "Metal 12");
        assert_eq!(title_for("jazz.00000"), "Jazz 0");
        assert_eq!(title_for("odd"), "Odd");
    }

    #[test]
    fn disjoint_supports_score_zero() {
        assert_eq!(Similarity::Cosine.score(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(Similarity::Cosine.score(&[0.0, 0.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn ties_break_by_song_id() {
        let catalog = Catalog::new(vec![entry("b.1", vec![0.5, 0.5]), entry("a.1", vec![0.5, 0.5])]).unwrap();
        let r = recommend(&GenreDistribution { probs: vec![0.5, 0.5] }, &catalog, 5, Similarity::Cosine).unwrap();
        assert_eq!(r.iter().map(|r| r.song_id.as_str()).collect::<Vec<_>>(), ["a.1", "b.1"]);
    }

    #[test]
    fn empty_and_duplicate_catalogs_rejected() {
        let q = GenreDistribution { probs: vec![1.0] };
        assert!(matches!(recommend(&q, &Catalog::default(), 5, Similarity::Cosine), Err(CoreError::EmptyCatalog)));
        assert!(Catalog::new(vec![entry("a.1", vec![1.0]), entry("a.1", vec![1.0])]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = Catalog::new(vec![entry("pop.00001", vec![0.25, 0.75])]).unwrap();
        assert_eq!(Catalog::from_json(&c.to_json()).unwrap(), c);
    }
}
