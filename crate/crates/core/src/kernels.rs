//! Embedding record type and the numeric kernels every stage is built from.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower bound on a min-max range before it is treated as degenerate.
pub const DEFAULT_MINMAX_EPS: f64 = 1e-12;

/// A D-dimensional embedding with finite `f64` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("feature vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Wraps an array produced by internal arithmetic. Finiteness is the
    /// caller's responsibility.
    pub(crate) fn from_array(values: Array1<f64>) -> Self {
        Self(values.into_raw_vec_and_offset().0)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.0[..])
    }

    pub fn to_array(&self) -> Array1<f64> {
        Array1::from(self.0.clone())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn ensure_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, found })
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity `u·v / (‖u‖‖v‖)`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    ensure_dim(u.len(), v.len())?;
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector("cosine"));
    }
    Ok(dot(u, v) / (nu * nv))
}

/// Gradient of `cosine(u, v)` with respect to `u`:
/// `v / (‖u‖‖v‖) − cos · u / ‖u‖²`.
pub(crate) fn cosine_grad_wrt_first(u: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>)> {
    let c = cosine(u, v)?;
    let nu = norm(u);
    let nv = norm(v);
    let inv = 1.0 / (nu * nv);
    let self_term = c / (nu * nu);
    let grad = u
        .iter()
        .zip(v)
        .map(|(a, b)| b * inv - self_term * a)
        .collect();
    Ok((c, grad))
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("softmax"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `log Σ exp(x_i)` via max subtraction.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("log_sum_exp"));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + values.iter().map(|z| (z - max).exp()).sum::<f64>().ln())
}

/// Rescales values to `[0, 1]`. A range narrower than `eps` maps every entry
/// to the neutral weight 0.5.
pub fn minmax_normalize(values: &[f64], eps: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyInput("minmax_normalize"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range < eps {
        return Ok(vec![0.5; values.len()]);
    }
    Ok(values.iter().map(|x| (x - min) / range).collect())
}

/// Coordinate-wise arithmetic mean.
pub fn mean_vectors<V: AsRef<[f64]>>(vs: &[V]) -> Result<FeatureVector> {
    let first = vs.first().ok_or(Error::EmptyInput("mean_vectors"))?;
    let dim = first.as_ref().len();
    let mut acc = vec![0.0; dim];
    for v in vs {
        let v = v.as_ref();
        ensure_dim(dim, v.len())?;
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    FeatureVector::new(acc)
}
