use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::types::{GalleryEntry, QuerySample, Split};

/// Query samples of every split plus the shared gallery, validated together.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub samples: Vec<QuerySample>,
    pub gallery: Vec<GalleryEntry>,
    /// Non-fatal observations, e.g. samples whose instance set is empty.
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn new(samples: Vec<QuerySample>, gallery: Vec<GalleryEntry>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let dim = first.dim();
        let mut seen = HashSet::new();
        for (i, e) in gallery.iter().enumerate() {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId {
                    line: i + 1,
                    id: e.id.clone(),
                });
            }
            crate::kernels::ensure_dim(dim, e.embedding.dim())?;
        }
        let mut ids = HashSet::new();
        let mut warnings = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            s.validate()?;
            crate::kernels::ensure_dim(dim, s.dim())?;
            if !ids.insert((s.split, s.id.as_str())) {
                return Err(Error::DuplicateId {
                    line: i + 1,
                    id: s.id.clone(),
                });
            }
            if !seen.contains(s.target_id.as_str()) {
                return Err(Error::UnresolvedTarget {
                    line: i + 1,
                    id: s.target_id.clone(),
                });
            }
            if s.instance_set.is_empty() {
                warnings.push(format!(
                    "sample `{}` has no instances; instance selection yields the zero vector",
                    s.id
                ));
            }
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(Self {
            dim,
            samples,
            gallery,
            warnings,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&QuerySample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// Targets of `split` plus every entry that is no sample's target
    /// (distractors), in file order.
    pub fn gallery_for(&self, split: Split) -> Vec<&GalleryEntry> {
        let mut own = HashSet::new();
        let mut any = HashSet::new();
        for s in &self.samples {
            any.insert(s.target_id.as_str());
            if s.split == split {
                own.insert(s.target_id.as_str());
            }
        }
        self.gallery
            .iter()
            .filter(|e| own.contains(e.id.as_str()) || !any.contains(e.id.as_str()))
            .collect()
    }

    pub fn gallery_map(&self) -> HashMap<&str, &GalleryEntry> {
        self.gallery.iter().map(|e| (e.id.as_str(), e)).collect()
    }

    /// Looks a query up by id, optionally within one split.
    pub fn find_query(&self, id: &str, split: Option<Split>) -> Result<&QuerySample> {
        let mut hits = self
            .samples
            .iter()
            .filter(|s| s.id == id && split.is_none_or(|sp| sp == s.split));
        let first = hits.next().ok_or_else(|| Error::UnknownQuery(id.to_string()))?;
        if hits.next().is_some() {
            return Err(Error::InvalidConfig(format!(
                "query id `{id}` exists in several splits; pass a split"
            )));
        }
        Ok(first)
    }
}
