//! k-input Combiner block.
//!
//! ```text
//! v_cat  = [W_1 x_1 : … : W_k x_k]
//! hidden = relu(T v_cat + t)
//! beta   = softmax(A hidden + a)
//! out    = Σ_j beta_j x_j + (R hidden + r)
//! ```
//!
//! The attention head (`A`, `a`) and the residual head (`R`, `r`) share the
//! trunk (`T`, `t`). The weighted sum uses the raw inputs; the projections only
//! feed `v_cat`.

use ndarray::{s, Array1, Array2, ArrayView1, Zip};
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{ensure_dim, softmax, FeatureVector};

#[derive(Debug, Clone, PartialEq)]
pub struct CombinerParams {
    /// `k` matrices of shape `D × D`.
    pub projections: Vec<Array2<f64>>,
    /// `H × kD`.
    pub trunk_weights: Array2<f64>,
    pub trunk_bias: Array1<f64>,
    /// `k × H`.
    pub attn_head_weights: Array2<f64>,
    pub attn_head_bias: Array1<f64>,
    /// `D × H`.
    pub res_head_weights: Array2<f64>,
    pub res_head_bias: Array1<f64>,
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = glorot_bound(rows, cols);
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite glorot bound");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// `sqrt(6 / (fan_in + fan_out))` for a `rows × cols` weight matrix.
pub fn glorot_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

fn check_shape(k: usize, dim: usize, hidden: usize) -> Result<()> {
    if k < 1 || dim < 1 || hidden < 1 {
        return Err(Error::InvalidConfig(format!(
            "combiner needs k, D, H >= 1 (got k={k}, D={dim}, H={hidden})"
        )));
    }
    Ok(())
}

impl CombinerParams {
    /// Glorot-uniform weights from a ChaCha stream seeded with `seed`; zero
    /// biases.
    pub fn init(seed: u64, k: usize, dim: usize, hidden: usize) -> Result<Self> {
        Self::init_with_rng(&mut ChaCha8Rng::seed_from_u64(seed), k, dim, hidden)
    }

    pub fn init_with_rng(rng: &mut impl Rng, k: usize, dim: usize, hidden: usize) -> Result<Self> {
        check_shape(k, dim, hidden)?;
        let projections = (0..k).map(|_| glorot(rng, dim, dim)).collect();
        let trunk_weights = glorot(rng, hidden, k * dim);
        let attn_head_weights = glorot(rng, k, hidden);
        let res_head_weights = glorot(rng, dim, hidden);
        Ok(Self {
            projections,
            trunk_weights,
            trunk_bias: Array1::zeros(hidden),
            attn_head_weights,
            attn_head_bias: Array1::zeros(k),
            res_head_weights,
            res_head_bias: Array1::zeros(dim),
        })
    }

    /// All entries zero. Also serves as a gradient accumulator.
    pub fn zeros(k: usize, dim: usize, hidden: usize) -> Self {
        Self {
            projections: vec![Array2::zeros((dim, dim)); k],
            trunk_weights: Array2::zeros((hidden, k * dim)),
            trunk_bias: Array1::zeros(hidden),
            attn_head_weights: Array2::zeros((k, hidden)),
            attn_head_bias: Array1::zeros(k),
            res_head_weights: Array2::zeros((dim, hidden)),
            res_head_bias: Array1::zeros(dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arity(), self.dim(), self.hidden())
    }

    /// Keeps the projections and zeroes the trunk and both heads, so the
    /// block outputs the plain mean of its inputs.
    pub fn with_zero_mlp(mut self) -> Self {
        self.trunk_weights.fill(0.0);
        self.trunk_bias.fill(0.0);
        self.attn_head_weights.fill(0.0);
        self.attn_head_bias.fill(0.0);
        self.res_head_weights.fill(0.0);
        self.res_head_bias.fill(0.0);
        self
    }

    pub fn arity(&self) -> usize {
        self.projections.len()
    }

    pub fn dim(&self) -> usize {
        self.res_head_bias.len()
    }

    pub fn hidden(&self) -> usize {
        self.trunk_bias.len()
    }

    /// Checks that every tensor agrees with `(k, D, H)` and is finite.
    pub fn validate(&self) -> Result<()> {
        let (k, d, h) = (self.arity(), self.dim(), self.hidden());
        check_shape(k, d, h)?;
        let expect = |name: &str, got: &[usize], want: &[usize]| {
            if got == want {
                Ok(())
            } else {
                Err(Error::ShapeMismatch(format!(
                    "{name}: expected {want:?}, found {got:?}"
                )))
            }
        };
        for p in &self.projections {
            expect("projection", p.shape(), &[d, d])?;
        }
        expect("trunk_weights", self.trunk_weights.shape(), &[h, k * d])?;
        expect("attn_head_weights", self.attn_head_weights.shape(), &[k, h])?;
        expect("attn_head_bias", self.attn_head_bias.shape(), &[k])?;
        expect("res_head_weights", self.res_head_weights.shape(), &[d, h])?;
        if self.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("combiner parameters"));
        }
        Ok(())
    }

    /// Named tensors in a fixed order: projections first, then trunk and
    /// heads.
    pub fn named_tensors(&self) -> Vec<(String, &[usize], &[f64])> {
        let mut out: Vec<(String, &[usize], &[f64])> = self
            .projections
            .iter()
            .enumerate()
            .map(|(j, p)| (format!("proj{j}"), p.shape(), slice(p)))
            .collect();
        out.push(("trunk.weight".into(), self.trunk_weights.shape(), slice(&self.trunk_weights)));
        out.push(("trunk.bias".into(), self.trunk_bias.shape(), slice1(&self.trunk_bias)));
        out.push((
            "attn.weight".into(),
            self.attn_head_weights.shape(),
            slice(&self.attn_head_weights),
        ));
        out.push(("attn.bias".into(), self.attn_head_bias.shape(), slice1(&self.attn_head_bias)));
        out.push((
            "res.weight".into(),
            self.res_head_weights.shape(),
            slice(&self.res_head_weights),
        ));
        out.push(("res.bias".into(), self.res_head_bias.shape(), slice1(&self.res_head_bias)));
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.named_tensors().into_iter().map(|(_, _, s)| s).collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self
            .projections
            .iter_mut()
            .map(|p| p.as_slice_mut().expect("standard layout"))
            .collect();
        out.push(self.trunk_weights.as_slice_mut().expect("standard layout"));
        out.push(self.trunk_bias.as_slice_mut().expect("standard layout"));
        out.push(self.attn_head_weights.as_slice_mut().expect("standard layout"));
        out.push(self.attn_head_bias.as_slice_mut().expect("standard layout"));
        out.push(self.res_head_weights.as_slice_mut().expect("standard layout"));
        out.push(self.res_head_bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn forward(&self, inputs: &[&FeatureVector]) -> Result<CombinerOutput> {
        combiner_forward(self, inputs)
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct CombinerCache {
    pub inputs: Vec<Array1<f64>>,
    pub v_cat: Array1<f64>,
    pub pre_activation: Array1<f64>,
    pub hidden: Array1<f64>,
    pub logits: Array1<f64>,
    pub betas: Vec<f64>,
    pub residual: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct CombinerOutput {
    pub output: FeatureVector,
    pub betas: Vec<f64>,
    pub cache: CombinerCache,
}

pub fn combiner_forward(params: &CombinerParams, inputs: &[&FeatureVector]) -> Result<CombinerOutput> {
    let k = params.arity();
    let d = params.dim();
    if inputs.len() != k {
        return Err(Error::ArityMismatch {
            expected: k,
            found: inputs.len(),
        });
    }
    for x in inputs {
        ensure_dim(d, x.dim())?;
    }

    let mut v_cat = Array1::zeros(k * d);
    for (j, (w, x)) in params.projections.iter().zip(inputs).enumerate() {
        v_cat.slice_mut(s![j * d..(j + 1) * d]).assign(&w.dot(&x.view()));
    }
    let pre_activation = params.trunk_weights.dot(&v_cat) + &params.trunk_bias;
    let hidden = pre_activation.mapv(|z| z.max(0.0));
    let logits = params.attn_head_weights.dot(&hidden) + &params.attn_head_bias;
    let betas = softmax(logits.as_slice().expect("contiguous"))?;
    let residual = params.res_head_weights.dot(&hidden) + &params.res_head_bias;

    let mut out = residual.clone();
    for (b, x) in betas.iter().zip(inputs) {
        out.scaled_add(*b, &x.view());
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("combiner output"));
    }

    Ok(CombinerOutput {
        output: FeatureVector::from_array(out),
        betas: betas.clone(),
        cache: CombinerCache {
            inputs: inputs.iter().map(|x| x.to_array()).collect(),
            v_cat,
            pre_activation,
            hidden,
            logits,
            betas,
            residual,
        },
    })
}

/// `wᵀ v`, accumulated row by row so the matrix is read contiguously.
fn transposed_matvec(w: &Array2<f64>, v: ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(w.ncols());
    for (row, &vi) in w.rows().into_iter().zip(v.iter()) {
        if vi != 0.0 {
            out.scaled_add(vi, &row);
        }
    }
    out
}

/// `grad += a bᵀ`.
fn add_outer(grad: &mut Array2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (mut row, &ai) in grad.rows_mut().into_iter().zip(a.iter()) {
        if ai != 0.0 {
            row.scaled_add(ai, &b);
        }
    }
}

fn check_cache(params: &CombinerParams, cache: &CombinerCache, d_output: usize) -> Result<()> {
    let (k, d, h) = (params.arity(), params.dim(), params.hidden());
    let ok = cache.inputs.len() == k
        && cache.inputs.iter().all(|x| x.len() == d)
        && cache.v_cat.len() == k * d
        && cache.pre_activation.len() == h
        && cache.hidden.len() == h
        && cache.betas.len() == k
        && d_output == d;
    if ok {
        Ok(())
    } else {
        Err(Error::StaleCache(format!(
            "params have (k={k}, D={d}, H={h}); cache has k={}, v_cat={}, hidden={}; d_output has {}",
            cache.inputs.len(),
            cache.v_cat.len(),
            cache.hidden.len(),
            d_output
        )))
    }
}

/// Reverse pass. Adds parameter gradients into `grads` and returns the
/// gradient with respect to each input.
pub fn combiner_backward_into(
    params: &CombinerParams,
    cache: &CombinerCache,
    d_output: ArrayView1<f64>,
    grads: &mut CombinerParams,
) -> Result<Vec<Array1<f64>>> {
    check_cache(params, cache, d_output.len())?;
    let d = params.dim();

    // out = Σ β_j x_j + residual
    let mut d_inputs: Vec<Array1<f64>> = cache.betas.iter().map(|b| &d_output * *b).collect();
    let d_betas: Vec<f64> = cache.inputs.iter().map(|x| x.dot(&d_output)).collect();

    // residual = R h + r
    add_outer(&mut grads.res_head_weights, d_output, cache.hidden.view());
    grads.res_head_bias += &d_output;
    let mut d_hidden = transposed_matvec(&params.res_head_weights, d_output);

    // β = softmax(logits): dlogit_j = β_j (dβ_j − Σ_i β_i dβ_i)
    let mean: f64 = cache.betas.iter().zip(&d_betas).map(|(b, g)| b * g).sum();
    let d_logits: Array1<f64> = cache
        .betas
        .iter()
        .zip(&d_betas)
        .map(|(b, g)| b * (g - mean))
        .collect();
    add_outer(&mut grads.attn_head_weights, d_logits.view(), cache.hidden.view());
    grads.attn_head_bias += &d_logits;
    d_hidden += &transposed_matvec(&params.attn_head_weights, d_logits.view());

    // hidden = relu(pre); subgradient 0 at 0
    let mut d_pre = d_hidden;
    Zip::from(&mut d_pre)
        .and(&cache.pre_activation)
        .for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
    add_outer(&mut grads.trunk_weights, d_pre.view(), cache.v_cat.view());
    grads.trunk_bias += &d_pre;
    let d_v_cat = transposed_matvec(&params.trunk_weights, d_pre.view());

    for (j, (w, x)) in params.projections.iter().zip(&cache.inputs).enumerate() {
        let d_proj = d_v_cat.slice(s![j * d..(j + 1) * d]);
        add_outer(&mut grads.projections[j], d_proj, x.view());
        d_inputs[j] += &transposed_matvec(w, d_proj);
    }
    Ok(d_inputs)
}

/// Gradients of a scalar loss with respect to the parameters and inputs of
/// one combiner call.
#[derive(Debug, Clone)]
pub struct CombinerGrads {
    pub params: CombinerParams,
    pub inputs: Vec<Array1<f64>>,
}

pub fn combiner_backward(
    params: &CombinerParams,
    cache: &CombinerCache,
    d_output: &[f64],
) -> Result<CombinerGrads> {
    let mut grads = params.zeros_like();
    let inputs = combiner_backward_into(params, cache, ArrayView1::from(d_output), &mut grads)?;
    Ok(CombinerGrads {
        params: grads,
        inputs,
    })
}
