//! Query fusion under the configurable ablation variants: the full
//! hierarchical combination, a single combiner over every enabled stream, or
//! a plain elementwise sum.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::combiner::{combiner_backward_into, CombinerOutput, CombinerParams};
use crate::error::{Error, Result};
use crate::kernels::{ensure_dim, FeatureVector};
use crate::selection::{select_instance_feature, select_patch_feature};
use crate::types::QuerySample;
use crate::whc::{whc_backward_into, whc_forward_streams, WhcParams, WhcTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Whc,
    Sum,
    SingleCombiner,
}

/// Which query streams exist and how they are fused.
///
/// Disabled streams are removed, shrinking combiner arity. When both visual
/// selections are off, the reference image's CLS token stands in as the only
/// visual stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationVariant {
    pub fusion: FusionKind,
    pub use_mod_text: bool,
    pub use_target_text: bool,
    pub use_pvrs: bool,
    pub use_ivrs: bool,
}

impl Default for AblationVariant {
    fn default() -> Self {
        Self::full()
    }
}

impl AblationVariant {
    pub const fn full() -> Self {
        Self {
            fusion: FusionKind::Whc,
            use_mod_text: true,
            use_target_text: true,
            use_pvrs: true,
            use_ivrs: true,
        }
    }

    /// The eight standard ablation configurations, numbered 1–8: full
    /// hierarchy, plain sum, then single-combiner variants that drop one text
    /// or visual selection at a time.
    pub fn ablation_row(row: usize) -> Option<Self> {
        let v = |fusion, use_mod_text, use_target_text, use_pvrs, use_ivrs| Self {
            fusion,
            use_mod_text,
            use_target_text,
            use_pvrs,
            use_ivrs,
        };
        use FusionKind::*;
        Some(match row {
            1 => v(Whc, true, true, true, true),
            2 => v(Sum, true, true, true, true),
            3 => v(SingleCombiner, false, true, true, true),
            4 => v(SingleCombiner, true, false, true, true),
            5 => v(SingleCombiner, true, false, true, false),
            6 => v(SingleCombiner, true, false, false, true),
            7 => v(SingleCombiner, true, false, false, false),
            8 => v(Sum, true, false, false, false),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !self.use_mod_text && !self.use_target_text {
            return Err(Error::InvalidConfig(
                "at least one of use_mod_text / use_target_text must be enabled".into(),
            ));
        }
        if self.fusion == FusionKind::Whc && !(self.use_mod_text && self.use_target_text) {
            return Err(Error::InvalidConfig(
                "whc fusion needs both the modification and the target text".into(),
            ));
        }
        Ok(())
    }

    pub fn visual_stream_count(&self) -> usize {
        match (self.use_pvrs, self.use_ivrs) {
            (false, false) => 1,
            (a, b) => a as usize + b as usize,
        }
    }

    pub fn text_stream_count(&self) -> usize {
        self.use_mod_text as usize + self.use_target_text as usize
    }
}

/// The per-query inputs to fusion, after visual selection. These depend only
/// on stored embeddings and are constant during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Streams {
    pub visual: Vec<FeatureVector>,
    pub mod_text: Option<FeatureVector>,
    pub target_text: Option<FeatureVector>,
}

impl Streams {
    pub fn from_sample(sample: &QuerySample, variant: &AblationVariant) -> Result<Self> {
        let mut visual = Vec::with_capacity(2);
        if variant.use_pvrs {
            visual.push(select_patch_feature(&sample.patch_set, &sample.retained_text, &sample.deleted_text)?);
        }
        if variant.use_ivrs {
            visual.push(select_instance_feature(
                &sample.instance_set,
                &sample.retained_text,
                &sample.deleted_text,
            )?);
        }
        if visual.is_empty() {
            visual.push(sample.patch_set.cls().clone());
        }
        Ok(Self {
            visual,
            mod_text: variant.use_mod_text.then(|| sample.mod_text.clone()),
            target_text: variant.use_target_text.then(|| sample.target_text.clone()),
        })
    }

    /// Visual streams followed by the enabled texts (modification first).
    pub fn all(&self) -> Vec<&FeatureVector> {
        self.visual
            .iter()
            .chain(self.mod_text.as_ref())
            .chain(self.target_text.as_ref())
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.visual[0].dim()
    }
}

/// Elementwise sum of all streams.
pub fn sum_fusion(streams: &[&FeatureVector]) -> Result<FeatureVector> {
    let first = streams.first().ok_or(Error::EmptyInput("sum_fusion"))?;
    let mut acc = Array1::<f64>::zeros(first.dim());
    for s in streams {
        ensure_dim(first.dim(), s.dim())?;
        acc += &s.view();
    }
    Ok(FeatureVector::from_array(acc))
}

/// Trainable state for one fusion variant. `Sum` has no parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionParams {
    Whc(WhcParams),
    Single(CombinerParams),
    Sum { dim: usize },
}

/// Initial values of the trainable fusion parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Glorot-uniform weights everywhere, zero biases.
    Glorot,
    /// Glorot projections and trunk, zero attention and residual heads: each
    /// combiner starts as the mean of its inputs while the heads still
    /// receive gradient.
    #[default]
    ZeroHeads,
    /// Trunk and heads all zero: every combiner is exactly the mean of its
    /// inputs and stays so except for the head biases.
    ZeroMlp,
}

/// A fusion variant together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryModel {
    pub variant: AblationVariant,
    pub params: FusionParams,
}

#[derive(Debug, Clone)]
pub enum FusionTrace {
    Whc(WhcTrace),
    Single(CombinerOutput),
    Sum,
}

impl FusionTrace {
    /// `(combiner name, β)` for every combiner evaluated.
    pub fn betas(&self) -> Vec<(&'static str, &[f64])> {
        match self {
            FusionTrace::Whc(t) => t.betas().to_vec(),
            FusionTrace::Single(o) => vec![("single", &o.betas[..])],
            FusionTrace::Sum => Vec::new(),
        }
    }
}

fn zero_heads(mut c: CombinerParams) -> CombinerParams {
    c.attn_head_weights.fill(0.0);
    c.res_head_weights.fill(0.0);
    c
}

impl QueryModel {
    pub fn init(
        variant: AblationVariant,
        seed: u64,
        dim: usize,
        hidden: usize,
        scheme: InitScheme,
    ) -> Result<Self> {
        variant.validate()?;
        let params = match variant.fusion {
            FusionKind::Sum => FusionParams::Sum { dim },
            FusionKind::Whc => {
                let whc = WhcParams::init(seed, variant.visual_stream_count(), dim, hidden)?;
                FusionParams::Whc(match scheme {
                    InitScheme::Glorot => whc,
                    InitScheme::ZeroMlp => whc.with_zero_mlp(),
                    InitScheme::ZeroHeads => WhcParams {
                        mod_combiner: zero_heads(whc.mod_combiner),
                        tgt_combiner: zero_heads(whc.tgt_combiner),
                        final_combiner: zero_heads(whc.final_combiner),
                    },
                })
            }
            FusionKind::SingleCombiner => {
                let k = variant.visual_stream_count() + variant.text_stream_count();
                let c = CombinerParams::init(seed, k, dim, hidden)?;
                FusionParams::Single(match scheme {
                    InitScheme::Glorot => c,
                    InitScheme::ZeroMlp => c.with_zero_mlp(),
                    InitScheme::ZeroHeads => zero_heads(c),
                })
            }
        };
        Ok(Self { variant, params })
    }

    pub fn dim(&self) -> usize {
        match &self.params {
            FusionParams::Whc(w) => w.dim(),
            FusionParams::Single(c) => c.dim(),
            FusionParams::Sum { dim } => *dim,
        }
    }

    /// Checks that parameter shapes agree with the variant's stream layout.
    pub fn validate(&self) -> Result<()> {
        self.variant.validate()?;
        let nv = self.variant.visual_stream_count();
        match (&self.params, self.variant.fusion) {
            (FusionParams::Whc(w), FusionKind::Whc) => {
                w.validate()?;
                if w.visual_streams() != nv {
                    return Err(Error::ShapeMismatch(format!(
                        "whc expects {nv} visual streams, parameters have {}",
                        w.visual_streams()
                    )));
                }
            }
            (FusionParams::Single(c), FusionKind::SingleCombiner) => {
                c.validate()?;
                let k = nv + self.variant.text_stream_count();
                if c.arity() != k {
                    return Err(Error::ShapeMismatch(format!(
                        "single combiner expects arity {k}, parameters have {}",
                        c.arity()
                    )));
                }
            }
            (FusionParams::Sum { .. }, FusionKind::Sum) => {}
            _ => {
                return Err(Error::ShapeMismatch(
                    "parameters do not match the fusion kind".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn streams(&self, sample: &QuerySample) -> Result<Streams> {
        let streams = Streams::from_sample(sample, &self.variant)?;
        ensure_dim(self.dim(), streams.dim())?;
        Ok(streams)
    }

    pub fn forward(&self, streams: &Streams) -> Result<(FeatureVector, FusionTrace)> {
        match &self.params {
            FusionParams::Whc(whc) => {
                let visual: Vec<&FeatureVector> = streams.visual.iter().collect();
                let (mod_text, target_text) = match (&streams.mod_text, &streams.target_text) {
                    (Some(m), Some(t)) => (m, t),
                    _ => {
                        return Err(Error::InvalidConfig(
                            "whc fusion needs both text streams".into(),
                        ))
                    }
                };
                let trace = whc_forward_streams(whc, &visual, mod_text, target_text)?;
                Ok((trace.q.clone(), FusionTrace::Whc(trace)))
            }
            FusionParams::Single(c) => {
                let out = c.forward(&streams.all())?;
                Ok((out.output.clone(), FusionTrace::Single(out)))
            }
            FusionParams::Sum { .. } => Ok((sum_fusion(&streams.all())?, FusionTrace::Sum)),
        }
    }

    pub fn encode(&self, sample: &QuerySample) -> Result<FeatureVector> {
        Ok(self.forward(&self.streams(sample)?)?.0)
    }

    /// Adds `∂L/∂params` into `grads` given `∂L/∂q`.
    pub fn backward_into(
        &self,
        trace: &FusionTrace,
        d_q: &[f64],
        grads: &mut FusionParams,
    ) -> Result<()> {
        match (&self.params, trace, grads) {
            (FusionParams::Whc(w), FusionTrace::Whc(t), FusionParams::Whc(g)) => {
                whc_backward_into(w, t, d_q, g)?;
            }
            (FusionParams::Single(c), FusionTrace::Single(o), FusionParams::Single(g)) => {
                combiner_backward_into(c, &o.cache, d_q.into(), g)?;
            }
            (FusionParams::Sum { .. }, FusionTrace::Sum, FusionParams::Sum { .. }) => {}
            _ => {
                return Err(Error::StaleCache(
                    "trace or gradient buffer does not match the model".into(),
                ))
            }
        }
        Ok(())
    }
}

impl FusionParams {
    pub fn zeros_like(&self) -> Self {
        match self {
            FusionParams::Whc(w) => FusionParams::Whc(w.zeros_like()),
            FusionParams::Single(c) => FusionParams::Single(c.zeros_like()),
            FusionParams::Sum { dim } => FusionParams::Sum { dim: *dim },
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        match self {
            FusionParams::Whc(w) => w.slices(),
            FusionParams::Single(c) => c.slices(),
            FusionParams::Sum { .. } => Vec::new(),
        }
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            FusionParams::Whc(w) => w.slices_mut(),
            FusionParams::Single(c) => c.slices_mut(),
            FusionParams::Sum { .. } => Vec::new(),
        }
    }

    pub fn combiners(&self) -> Vec<(&'static str, &CombinerParams)> {
        match self {
            FusionParams::Whc(w) => w.combiners().to_vec(),
            FusionParams::Single(c) => vec![("single", c)],
            FusionParams::Sum { .. } => Vec::new(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }
}
