use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{ensure_dim, FeatureVector};

/// Patch tokens of a reference image plus its global CLS token.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    cls: FeatureVector,
    patches: Vec<FeatureVector>,
}

impl PatchSet {
    pub fn new(cls: FeatureVector, patches: Vec<FeatureVector>) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::EmptyInput("patch set"));
        }
        for p in &patches {
            ensure_dim(cls.dim(), p.dim())?;
        }
        Ok(Self { cls, patches })
    }

    pub fn cls(&self) -> &FeatureVector {
        &self.cls
    }

    pub fn patches(&self) -> &[FeatureVector] {
        &self.patches
    }

    pub fn dim(&self) -> usize {
        self.cls.dim()
    }
}

/// Segmented object features of a reference image. May be empty when the
/// segmenter found nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSet {
    dim: usize,
    instances: Vec<FeatureVector>,
}

impl InstanceSet {
    pub fn new(dim: usize, instances: Vec<FeatureVector>) -> Result<Self> {
        for v in &instances {
            ensure_dim(dim, v.dim())?;
        }
        Ok(Self { dim, instances })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            instances: Vec::new(),
        }
    }

    pub fn instances(&self) -> &[FeatureVector] {
        &self.instances
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

/// One composed query: reference-image features, the modification text and
/// its retained / deleted / target decomposition, all as embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySample {
    pub id: String,
    pub split: Split,
    pub patch_set: PatchSet,
    pub instance_set: InstanceSet,
    /// Modification text.
    pub mod_text: FeatureVector,
    /// Retained-content text.
    pub retained_text: FeatureVector,
    /// Deleted-content text.
    pub deleted_text: FeatureVector,
    /// Inferred target description.
    pub target_text: FeatureVector,
    pub target_id: String,
}

impl QuerySample {
    pub fn dim(&self) -> usize {
        self.patch_set.dim()
    }

    /// Checks that every embedded vector shares one dimension and the target
    /// id is nonempty.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        ensure_dim(d, self.instance_set.dim())?;
        for v in [&self.mod_text, &self.retained_text, &self.deleted_text, &self.target_text] {
            ensure_dim(d, v.dim())?;
        }
        if self.target_id.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "sample `{}` has an empty target id",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub id: String,
    pub embedding: FeatureVector,
}
