//! Line-oriented JSON manifests.
//!
//! A data directory holds `manifest.jsonl` (one query per line) and
//! `gallery.jsonl` (one candidate per line). Tensor paths are relative to the
//! directory holding the manifest.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::io::tensor::{read_tensor, Tensor};
use crate::kernels::FeatureVector;
use crate::types::{GalleryEntry, InstanceSet, PatchSet, QuerySample, Split};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const GALLERY_FILE: &str = "gallery.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub split: Split,
    pub patches: String,
    pub cls: String,
    pub instances: Option<String>,
    pub text_mod: String,
    pub text_retained: String,
    pub text_deleted: String,
    pub text_target: String,
    pub target_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GalleryRecord {
    pub id: String,
    pub embedding: String,
}

/// Resolves `--data` to the manifest path: a directory means its
/// `manifest.jsonl`.
pub fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(MANIFEST_FILE)
    } else {
        data.to_path_buf()
    }
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|r| (i + 1, r))
                .map_err(|source| Error::Json {
                    path: path.to_path_buf(),
                    line: i + 1,
                    source,
                })
        })
        .collect()
}

struct Loader<'a> {
    base: &'a Path,
    dim: Option<usize>,
}

impl Loader<'_> {
    fn tensor(&self, line: usize, rel: &str) -> Result<Tensor> {
        let path = self.base.join(rel);
        if !path.is_file() {
            return Err(Error::DanglingPath { line, path });
        }
        read_tensor(&path)
    }

    fn check_dim(&mut self, line: usize, field: &'static str, found: usize) -> Result<()> {
        match self.dim {
            None => {
                self.dim = Some(found);
                Ok(())
            }
            Some(expected) if expected == found => Ok(()),
            Some(expected) => Err(Error::ManifestDim {
                line,
                field,
                expected,
                found,
            }),
        }
    }

    fn vector(&mut self, line: usize, field: &'static str, rel: &str) -> Result<FeatureVector> {
        let t = self.tensor(line, rel)?;
        let width = match t.dims.as_slice() {
            [d] => *d,
            [1, d] => *d,
            other => {
                return Err(Error::Malformed {
                    path: self.base.join(rel),
                    detail: format!("{field} must be a vector, found dims {other:?}"),
                })
            }
        };
        self.check_dim(line, field, width)?;
        FeatureVector::new(t.values)
    }

    fn rows(&mut self, line: usize, field: &'static str, rel: &str) -> Result<Vec<FeatureVector>> {
        let t = self.tensor(line, rel)?;
        let [n, d] = t.dims[..] else {
            return Err(Error::Malformed {
                path: self.base.join(rel),
                detail: format!("{field} must be rank 2, found dims {:?}", t.dims),
            });
        };
        if n == 0 {
            return Ok(Vec::new());
        }
        self.check_dim(line, field, d)?;
        t.rows().map(|r| FeatureVector::new(r.to_vec())).collect()
    }
}

/// Reads and validates a manifest and its companion gallery.
pub fn load_manifest(data: impl AsRef<Path>) -> Result<Dataset> {
    let manifest = manifest_path(data.as_ref());
    let base = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let gallery_path = base.join(GALLERY_FILE);
    let records: Vec<(usize, SampleRecord)> = read_lines(&manifest)?;
    let gallery_records: Vec<(usize, GalleryRecord)> = read_lines(&gallery_path)?;
    let mut loader = Loader {
        base: &base,
        dim: None,
    };

    let mut gallery = Vec::with_capacity(gallery_records.len());
    let mut gallery_ids = HashSet::new();
    for (line, rec) in gallery_records {
        if !gallery_ids.insert(rec.id.clone()) {
            return Err(Error::DuplicateId { line, id: rec.id });
        }
        let embedding = loader.vector(line, "embedding", &rec.embedding)?;
        gallery.push(GalleryEntry {
            id: rec.id,
            embedding,
        });
    }

    let mut samples = Vec::with_capacity(records.len());
    let mut seen: HashMap<Split, HashSet<String>> = HashMap::new();
    for (line, rec) in records {
        if !seen.entry(rec.split).or_default().insert(rec.id.clone()) {
            return Err(Error::DuplicateId { line, id: rec.id });
        }
        let cls = loader.vector(line, "cls", &rec.cls)?;
        let patches = loader.rows(line, "patches", &rec.patches)?;
        if patches.is_empty() {
            return Err(Error::Malformed {
                path: base.join(&rec.patches),
                detail: "patch tensor has no rows".into(),
            });
        }
        let instances = match &rec.instances {
            Some(rel) => loader.rows(line, "instances", rel)?,
            None => Vec::new(),
        };
        let mod_text = loader.vector(line, "text_mod", &rec.text_mod)?;
        let retained_text = loader.vector(line, "text_retained", &rec.text_retained)?;
        let deleted_text = loader.vector(line, "text_deleted", &rec.text_deleted)?;
        let target_text = loader.vector(line, "text_target", &rec.text_target)?;
        if !gallery_ids.contains(&rec.target_id) {
            return Err(Error::UnresolvedTarget {
                line,
                id: rec.target_id,
            });
        }
        let dim = cls.dim();
        samples.push(QuerySample {
            id: rec.id,
            split: rec.split,
            patch_set: PatchSet::new(cls, patches)?,
            instance_set: InstanceSet::new(dim, instances)?,
            mod_text,
            retained_text,
            deleted_text,
            target_text,
            target_id: rec.target_id,
        });
    }
    Dataset::new(samples, gallery)
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `manifest.jsonl` and `gallery.jsonl` into `dir`.
pub fn write_manifest(dir: &Path, samples: &[SampleRecord], gallery: &[GalleryRecord]) -> Result<()> {
    write_lines(&dir.join(MANIFEST_FILE), samples)?;
    write_lines(&dir.join(GALLERY_FILE), gallery)
}
