//! Finite-difference verification of the analytic backward pass.
//!
//! A random hierarchy scores a small random batch under the batch loss; every
//! parameter tensor of the three combiners and every query stream of the
//! first sample is compared against central differences. Agreement is
//! measured per tensor as `‖a − n‖ / max(‖a‖, ‖n‖)`: entrywise ratios are
//! dominated by the finite-difference error itself once an entry falls below
//! roughly `1e-4`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::combiner::CombinerParams;
use crate::error::{Error, Result};
use crate::kernels::FeatureVector;
use crate::loss::batch_loss;
use crate::whc::{whc_backward, whc_forward_streams, WhcParams};

const BATCH: usize = 4;
const VISUAL_STREAMS: usize = 2;
const TAU: f64 = 0.5;

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub dim: usize,
    pub hidden: usize,
    pub step: f64,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, or 0 when the two agree exactly.
pub fn normwise_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum();
    if diff == 0.0 {
        return 0.0;
    }
    let na: f64 = analytic.iter().map(|a| a * a).sum();
    let nn: f64 = numeric.iter().map(|n| n * n).sum();
    diff.sqrt() / na.max(nn).sqrt()
}

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_combiner(rng: &mut ChaCha8Rng, k: usize, dim: usize, hidden: usize) -> Result<CombinerParams> {
    let mut c = CombinerParams::init_with_rng(rng, k, dim, hidden)?;
    // nonzero biases so every term of the forward pass carries gradient
    for bias in [&mut c.trunk_bias, &mut c.attn_head_bias, &mut c.res_head_bias] {
        bias.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
    }
    Ok(c)
}

fn tensor_names(whc: &WhcParams) -> Vec<String> {
    whc.combiners()
        .iter()
        .flat_map(|(prefix, c)| {
            c.named_tensors()
                .into_iter()
                .map(move |(name, _, _)| format!("{prefix}.{name}"))
        })
        .collect()
}

pub fn gradcheck(seed: u64, dim: usize, hidden: usize, step: f64) -> Result<GradcheckReport> {
    if dim < 1 || hidden < 1 {
        return Err(Error::InvalidConfig("gradcheck needs dim >= 1 and hidden >= 1".into()));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidConfig(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let whc = WhcParams {
        mod_combiner: random_combiner(&mut rng, VISUAL_STREAMS + 1, dim, hidden)?,
        tgt_combiner: random_combiner(&mut rng, VISUAL_STREAMS + 1, dim, hidden)?,
        final_combiner: random_combiner(&mut rng, 2, dim, hidden)?,
    };
    // per sample: visual streams, modification text, target text
    let batch: Vec<Vec<Vec<f64>>> = (0..BATCH)
        .map(|_| (0..VISUAL_STREAMS + 2).map(|_| random_values(&mut rng, dim)).collect())
        .collect();
    let targets: Vec<Vec<f64>> = (0..BATCH).map(|_| random_values(&mut rng, dim)).collect();

    let forward = |w: &WhcParams, streams: &[Vec<f64>]| -> Result<_> {
        let fv: Vec<FeatureVector> = streams
            .iter()
            .map(|s| FeatureVector::new(s.clone()))
            .collect::<Result<_>>()?;
        let visual: Vec<&FeatureVector> = fv[..VISUAL_STREAMS].iter().collect();
        whc_forward_streams(w, &visual, &fv[VISUAL_STREAMS], &fv[VISUAL_STREAMS + 1])
    };
    let loss = |w: &WhcParams, batch: &[Vec<Vec<f64>>]| -> Result<f64> {
        let qs = batch
            .iter()
            .map(|s| Ok(forward(w, s)?.q))
            .collect::<Result<Vec<_>>>()?;
        Ok(batch_loss(&qs, &targets, TAU)?.loss)
    };

    // analytic
    let traces = batch
        .iter()
        .map(|s| forward(&whc, s))
        .collect::<Result<Vec<_>>>()?;
    let qs: Vec<&FeatureVector> = traces.iter().map(|t| &t.q).collect();
    let bl = batch_loss(&qs, &targets, TAU)?;
    let mut d_params = whc.zeros_like();
    let mut d_first = Vec::new();
    for (i, (trace, d_q)) in traces.iter().zip(&bl.d_queries).enumerate() {
        let g = whc_backward(&whc, trace, d_q)?;
        d_params.add_assign(&g.params);
        if i == 0 {
            d_first = g.visual.iter().map(|a| a.to_vec()).collect();
            d_first.push(g.mod_text.to_vec());
            d_first.push(g.target_text.to_vec());
        }
    }

    let mut tensors = Vec::new();
    let mut probe = whc.clone();
    for ((name, analytic), t) in tensor_names(&whc)
        .into_iter()
        .zip(d_params.slices())
        .zip(0..)
    {
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let orig = probe.slices_mut()[t][i];
            probe.slices_mut()[t][i] = orig + step;
            let up = loss(&probe, &batch)?;
            probe.slices_mut()[t][i] = orig - step;
            let down = loss(&probe, &batch)?;
            probe.slices_mut()[t][i] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
        tensors.push(TensorCheck {
            name,
            entries: analytic.len(),
            rel_err: normwise_rel_err(analytic, &numeric),
        });
    }

    let stream_names = (0..VISUAL_STREAMS)
        .map(|j| format!("input.visual{j}"))
        .chain(["input.mod_text".to_string(), "input.target_text".to_string()]);
    let mut perturbed = batch.clone();
    for ((name, analytic), j) in stream_names.zip(&d_first).zip(0..) {
        let mut numeric = Vec::with_capacity(dim);
        for i in 0..dim {
            let orig = batch[0][j][i];
            perturbed[0][j][i] = orig + step;
            let up = loss(&whc, &perturbed)?;
            perturbed[0][j][i] = orig - step;
            let down = loss(&whc, &perturbed)?;
            perturbed[0][j][i] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
        tensors.push(TensorCheck {
            name,
            entries: dim,
            rel_err: normwise_rel_err(analytic, &numeric),
        });
    }

    let max_rel_err = tensors.iter().map(|t| t.rel_err).fold(0.0, f64::max);
    Ok(GradcheckReport {
        seed,
        dim,
        hidden,
        step,
        tensors,
        max_rel_err,
    })
}
