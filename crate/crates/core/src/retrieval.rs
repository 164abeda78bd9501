//! Cosine ranking against a gallery and Recall@K.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::ser::{Serialize, SerializeMap, Serializer};

use crate::error::{Error, Result};
use crate::fusion::QueryModel;
use crate::kernels::{cosine, FeatureVector};
use crate::types::{GalleryEntry, QuerySample};

pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 50];

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RankedResult {
    pub query_id: String,
    /// Best first.
    pub ordered_gallery_ids: Vec<String>,
    pub scores: Vec<f64>,
}

impl RankedResult {
    pub fn position_of(&self, id: &str) -> Option<usize> {
        self.ordered_gallery_ids.iter().position(|g| g == id)
    }

    pub fn truncate(&mut self, top: usize) {
        self.ordered_gallery_ids.truncate(top);
        self.scores.truncate(top);
    }
}

/// Scores every entry by cosine similarity to `q` and sorts descending,
/// breaking ties by ascending gallery id.
pub fn rank<'a>(
    query_id: &str,
    q: &FeatureVector,
    gallery: impl IntoIterator<Item = &'a GalleryEntry>,
) -> Result<RankedResult> {
    if q.norm() == 0.0 {
        return Err(Error::ZeroVector("query"));
    }
    let mut scored = gallery
        .into_iter()
        .map(|e| Ok((cosine(q.as_slice(), e.embedding.as_slice())?, e.id.as_str())))
        .collect::<Result<Vec<(f64, &str)>>>()?;
    if scored.is_empty() {
        return Err(Error::EmptyGallery);
    }
    scored.sort_by(|a, b| match b.0.total_cmp(&a.0) {
        Ordering::Equal => a.1.cmp(b.1),
        other => other,
    });
    Ok(RankedResult {
        query_id: query_id.to_string(),
        ordered_gallery_ids: scored.iter().map(|(_, id)| id.to_string()).collect(),
        scores: scored.into_iter().map(|(s, _)| s).collect(),
    })
}

/// Recall at each requested cutoff plus their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub ks: Vec<usize>,
    pub recalls: Vec<f64>,
    pub mean: f64,
    pub queries: usize,
}

impl RecallReport {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recalls[i])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// `{"R@1": …, "R@5": …, "Avg": …, "queries": n}` with keys in cutoff order.
impl Serialize for RecallReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.ks.len() + 2))?;
        for (k, r) in self.ks.iter().zip(&self.recalls) {
            map.serialize_entry(&format!("R@{k}"), r)?;
        }
        map.serialize_entry("Avg", &self.mean)?;
        map.serialize_entry("queries", &self.queries)?;
        map.end()
    }
}

pub fn recall_at_k(
    results: &[RankedResult],
    truth: &HashMap<String, String>,
    ks: &[usize],
) -> Result<RecallReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidConfig("cutoffs must be positive and nonempty".into()));
    }
    if results.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = vec![0usize; ks.len()];
    for r in results {
        let target = truth
            .get(&r.query_id)
            .ok_or_else(|| Error::MissingTruth(r.query_id.clone()))?;
        if let Some(pos) = r.position_of(target) {
            for (h, k) in hits.iter_mut().zip(ks) {
                if pos < *k {
                    *h += 1;
                }
            }
        }
    }
    let n = results.len() as f64;
    let recalls: Vec<f64> = hits.iter().map(|h| *h as f64 / n).collect();
    let mean = recalls.iter().sum::<f64>() / recalls.len() as f64;
    Ok(RecallReport {
        ks: ks.to_vec(),
        recalls,
        mean,
        queries: results.len(),
    })
}

/// Encodes every query with `model` and ranks it against the full gallery.
/// Results come back in input order.
pub fn rank_queries(
    samples: &[&QuerySample],
    gallery: &[&GalleryEntry],
    model: &QueryModel,
) -> Result<Vec<RankedResult>> {
    samples
        .iter()
        .map(|s| rank(&s.id, &model.encode(s)?, gallery.iter().copied()))
        .collect()
}

pub fn evaluate(
    samples: &[&QuerySample],
    gallery: &[&GalleryEntry],
    model: &QueryModel,
    ks: &[usize],
) -> Result<RecallReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let results = rank_queries(samples, gallery, model)?;
    let truth = samples
        .iter()
        .map(|s| (s.id.clone(), s.target_id.clone()))
        .collect();
    recall_at_k(&results, &truth, ks)
}
