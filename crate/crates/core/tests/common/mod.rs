//! Naive reference implementations used as oracles. They work on plain
//! nested `Vec`s with explicit loops and share no code with the library's
//! numeric paths.

#![allow(dead_code)]

pub mod planted;
pub mod props;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Vector = Vec<f64>;
pub type Matrix = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(r: &mut ChaCha8Rng, d: usize) -> Vector {
    (0..d).map(|_| r.random_range(-1.0..1.0)).collect()
}

pub fn random_mat(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    (0..rows)
        .map(|_| (0..cols).map(|_| scale * r.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn naive_cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Patch-level selection written straight from its formula.
pub fn naive_patch_select(cls: &[f64], patches: &[Vector], rt: &[f64], dt: &[f64]) -> Vector {
    let d = cls.len();
    let n = patches.len() as f64;
    let mut out = vec![0.0; d];
    for p in patches {
        let w = naive_cos(p, rt) - naive_cos(p, dt);
        for k in 0..d {
            out[k] += w * p[k];
        }
    }
    for k in 0..d {
        out[k] = (out[k] / n + cls[k]) / 2.0;
    }
    out
}

fn naive_minmax(xs: &[f64]) -> Vector {
    let mut lo = xs[0];
    let mut hi = xs[0];
    for &x in xs {
        if x < lo {
            lo = x;
        }
        if x > hi {
            hi = x;
        }
    }
    if hi - lo < 1e-12 {
        return vec![0.5; xs.len()];
    }
    xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Instance-level selection written straight from its formula.
pub fn naive_instance_select(d: usize, inst: &[Vector], rt: &[f64], dt: &[f64]) -> Vector {
    if inst.is_empty() {
        return vec![0.0; d];
    }
    let plus: Vector = inst.iter().map(|v| naive_cos(v, rt)).collect();
    let minus: Vector = inst.iter().map(|v| naive_cos(v, dt)).collect();
    let plus = naive_minmax(&plus);
    let minus = naive_minmax(&minus);
    let mut out = vec![0.0; d];
    for (i, v) in inst.iter().enumerate() {
        for k in 0..d {
            out[k] += (plus[i] - minus[i]) * v[k];
        }
    }
    out.iter().map(|x| x / inst.len() as f64).collect()
}

fn matvec(m: &Matrix, x: &[f64]) -> Vector {
    m.iter()
        .map(|row| {
            let mut s = 0.0;
            for k in 0..x.len() {
                s += row[k] * x[k];
            }
            s
        })
        .collect()
}

/// A combiner's parameters in oracle form.
#[derive(Clone, Debug)]
pub struct NaiveCombiner {
    pub proj: Vec<Matrix>,
    pub trunk_w: Matrix,
    pub trunk_b: Vector,
    pub attn_w: Matrix,
    pub attn_b: Vector,
    pub res_w: Matrix,
    pub res_b: Vector,
}

impl NaiveCombiner {
    pub fn from_params(p: &mvsel_core::CombinerParams) -> Self {
        let m = |a: &ndarray::Array2<f64>| -> Matrix {
            a.rows().into_iter().map(|r| r.to_vec()).collect()
        };
        Self {
            proj: p.projections.iter().map(m).collect(),
            trunk_w: m(&p.trunk_weights),
            trunk_b: p.trunk_bias.to_vec(),
            attn_w: m(&p.attn_head_weights),
            attn_b: p.attn_head_bias.to_vec(),
            res_w: m(&p.res_head_weights),
            res_b: p.res_head_bias.to_vec(),
        }
    }

    /// Returns (output, betas).
    pub fn forward(&self, inputs: &[Vector]) -> (Vector, Vector) {
        let mut cat = Vec::new();
        for (w, x) in self.proj.iter().zip(inputs) {
            cat.extend(matvec(w, x));
        }
        let hidden: Vector = matvec(&self.trunk_w, &cat)
            .iter()
            .zip(&self.trunk_b)
            .map(|(z, b)| (z + b).max(0.0))
            .collect();
        let logits: Vector = matvec(&self.attn_w, &hidden)
            .iter()
            .zip(&self.attn_b)
            .map(|(z, b)| z + b)
            .collect();
        let mut mx = logits[0];
        for &l in &logits {
            if l > mx {
                mx = l;
            }
        }
        let e: Vector = logits.iter().map(|l| (l - mx).exp()).collect();
        let total: f64 = e.iter().sum();
        let betas: Vector = e.iter().map(|v| v / total).collect();
        let mut out: Vector = matvec(&self.res_w, &hidden)
            .iter()
            .zip(&self.res_b)
            .map(|(z, b)| z + b)
            .collect();
        for (b, x) in betas.iter().zip(inputs) {
            for k in 0..out.len() {
                out[k] += b * x[k];
            }
        }
        (out, betas)
    }
}

/// Batch classification loss written straight from its formula.
pub fn naive_batch_loss(queries: &[Vector], targets: &[Vector], tau: f64) -> f64 {
    let b = queries.len();
    let mut total = 0.0;
    for i in 0..b {
        let logits: Vector = (0..b).map(|j| naive_cos(&queries[i], &targets[j]) / tau).collect();
        let mut mx = logits[0];
        for &l in &logits {
            if l > mx {
                mx = l;
            }
        }
        let mut denom = 0.0;
        for &l in &logits {
            denom += (l - mx).exp();
        }
        total += -((logits[i] - mx) - denom.ln());
    }
    total / b as f64
}

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor on the denominator, so entries that are
/// exactly or almost zero are judged on absolute error instead.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)` over a whole gradient tensor; 0 when both are
/// identical (including both zero).
pub fn normwise_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let mut diff = 0.0;
    let mut a2 = 0.0;
    let mut n2 = 0.0;
    for i in 0..analytic.len() {
        diff += (analytic[i] - numeric[i]).powi(2);
        a2 += analytic[i] * analytic[i];
        n2 += numeric[i] * numeric[i];
    }
    if diff == 0.0 {
        return 0.0;
    }
    diff.sqrt() / a2.sqrt().max(n2.sqrt())
}

/// Central difference of `f` with respect to `x[i]`.
pub fn central_diff(x: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let up = f(x);
    x[i] = orig - FD_STEP;
    let dn = f(x);
    x[i] = orig;
    (up - dn) / (2.0 * FD_STEP)
}
