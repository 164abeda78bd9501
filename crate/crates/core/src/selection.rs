//! Intent-guided selection over reference-image features.
//!
//! Both levels score each visual element by its cosine similarity to the
//! retained-content and deleted-content text embeddings and re-weight the
//! element by the difference. The patch level adds the CLS token back and
//! halves; the instance level min-max normalizes each side first and takes a
//! plain weighted mean. Features are used as stored, so the selected outputs
//! keep the magnitude of the inputs.

use serde::Serialize;

use crate::error::Result;
use crate::kernels::{cosine, ensure_dim, minmax_normalize, FeatureVector, DEFAULT_MINMAX_EPS};
use crate::types::{InstanceSet, PatchSet};

/// Per-patch retain / delete cosines. The CLS token is not scored.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatchAttention {
    pub alpha_plus: Vec<f64>,
    pub alpha_minus: Vec<f64>,
}

impl PatchAttention {
    pub fn net(&self) -> impl Iterator<Item = f64> + '_ {
        self.alpha_plus
            .iter()
            .zip(&self.alpha_minus)
            .map(|(p, m)| p - m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceAttention {
    pub alpha_plus_raw: Vec<f64>,
    pub alpha_minus_raw: Vec<f64>,
    pub alpha_plus_norm: Vec<f64>,
    pub alpha_minus_norm: Vec<f64>,
    /// `alpha_plus_norm − alpha_minus_norm`, in `[-1, 1]`.
    pub net: Vec<f64>,
}

fn guidance_cosines(
    elements: &[FeatureVector],
    retained: &FeatureVector,
    deleted: &FeatureVector,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut plus = Vec::with_capacity(elements.len());
    let mut minus = Vec::with_capacity(elements.len());
    for v in elements {
        plus.push(cosine(v.as_slice(), retained.as_slice())?);
        minus.push(cosine(v.as_slice(), deleted.as_slice())?);
    }
    Ok((plus, minus))
}

pub fn patch_attention(
    patch_set: &PatchSet,
    retained: &FeatureVector,
    deleted: &FeatureVector,
) -> Result<PatchAttention> {
    ensure_dim(patch_set.dim(), retained.dim())?;
    ensure_dim(patch_set.dim(), deleted.dim())?;
    let (alpha_plus, alpha_minus) = guidance_cosines(patch_set.patches(), retained, deleted)?;
    Ok(PatchAttention {
        alpha_plus,
        alpha_minus,
    })
}

/// `((1/N) Σ (α⁺ᵢ − α⁻ᵢ) vᵢ + cls) / 2`.
pub fn select_patch_feature(
    patch_set: &PatchSet,
    retained: &FeatureVector,
    deleted: &FeatureVector,
) -> Result<FeatureVector> {
    let attention = patch_attention(patch_set, retained, deleted)?;
    Ok(weigh_patches(patch_set, &attention))
}

pub(crate) fn weigh_patches(patch_set: &PatchSet, attention: &PatchAttention) -> FeatureVector {
    let n = patch_set.patches().len() as f64;
    let mut acc = ndarray::Array1::<f64>::zeros(patch_set.dim());
    for (v, w) in patch_set.patches().iter().zip(attention.net()) {
        acc.scaled_add(w, &v.view());
    }
    let out = (acc / n + &patch_set.cls().view()) / 2.0;
    FeatureVector::from_array(out)
}

/// Instance weights. Fails with `EmptyInstanceSet` when `M = 0`.
pub fn instance_attention(
    instance_set: &InstanceSet,
    retained: &FeatureVector,
    deleted: &FeatureVector,
) -> Result<InstanceAttention> {
    instance_attention_with_eps(instance_set, retained, deleted, DEFAULT_MINMAX_EPS)
}

pub fn instance_attention_with_eps(
    instance_set: &InstanceSet,
    retained: &FeatureVector,
    deleted: &FeatureVector,
    eps: f64,
) -> Result<InstanceAttention> {
    if instance_set.is_empty() {
        return Err(crate::Error::EmptyInstanceSet);
    }
    ensure_dim(instance_set.dim(), retained.dim())?;
    ensure_dim(instance_set.dim(), deleted.dim())?;
    let (alpha_plus_raw, alpha_minus_raw) =
        guidance_cosines(instance_set.instances(), retained, deleted)?;
    let alpha_plus_norm = minmax_normalize(&alpha_plus_raw, eps)?;
    let alpha_minus_norm = minmax_normalize(&alpha_minus_raw, eps)?;
    let net = alpha_plus_norm
        .iter()
        .zip(&alpha_minus_norm)
        .map(|(p, m)| p - m)
        .collect();
    Ok(InstanceAttention {
        alpha_plus_raw,
        alpha_minus_raw,
        alpha_plus_norm,
        alpha_minus_norm,
        net,
    })
}

/// `(1/M) Σ netᵢ vᵢ`; the zero vector when the instance set is empty.
pub fn select_instance_feature(
    instance_set: &InstanceSet,
    retained: &FeatureVector,
    deleted: &FeatureVector,
) -> Result<FeatureVector> {
    if instance_set.is_empty() {
        ensure_dim(instance_set.dim(), retained.dim())?;
        ensure_dim(instance_set.dim(), deleted.dim())?;
        return Ok(FeatureVector::zeros(instance_set.dim()));
    }
    let attention = instance_attention(instance_set, retained, deleted)?;
    let m = instance_set.len() as f64;
    let mut acc = ndarray::Array1::<f64>::zeros(instance_set.dim());
    for (v, w) in instance_set.instances().iter().zip(&attention.net) {
        acc.scaled_add(*w, &v.view());
    }
    Ok(FeatureVector::from_array(acc / m))
}
