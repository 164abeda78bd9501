//! Weighted hierarchical combination: a modification-text combiner and a
//! target-text combiner over the same visual streams, merged by a final
//! two-input combiner.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::combiner::{combiner_backward_into, CombinerOutput, CombinerParams};
use crate::error::{Error, Result};
use crate::kernels::FeatureVector;

#[derive(Debug, Clone, PartialEq)]
pub struct WhcParams {
    pub mod_combiner: CombinerParams,
    pub tgt_combiner: CombinerParams,
    pub final_combiner: CombinerParams,
}

impl WhcParams {
    /// Independent parameters for the three combiners, drawn in order
    /// (modification, target, final) from one seeded stream.
    /// `visual_streams` is the number of visual inputs shared by the first
    /// two combiners (2 for patch + instance selection).
    pub fn init(seed: u64, visual_streams: usize, dim: usize, hidden: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = visual_streams + 1;
        Ok(Self {
            mod_combiner: CombinerParams::init_with_rng(&mut rng, k, dim, hidden)?,
            tgt_combiner: CombinerParams::init_with_rng(&mut rng, k, dim, hidden)?,
            final_combiner: CombinerParams::init_with_rng(&mut rng, 2, dim, hidden)?,
        })
    }

    pub fn with_zero_mlp(self) -> Self {
        Self {
            mod_combiner: self.mod_combiner.with_zero_mlp(),
            tgt_combiner: self.tgt_combiner.with_zero_mlp(),
            final_combiner: self.final_combiner.with_zero_mlp(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            mod_combiner: self.mod_combiner.zeros_like(),
            tgt_combiner: self.tgt_combiner.zeros_like(),
            final_combiner: self.final_combiner.zeros_like(),
        }
    }

    pub fn dim(&self) -> usize {
        self.final_combiner.dim()
    }

    pub fn visual_streams(&self) -> usize {
        self.mod_combiner.arity() - 1
    }

    pub fn combiners(&self) -> [(&'static str, &CombinerParams); 3] {
        [
            ("mod", &self.mod_combiner),
            ("tgt", &self.tgt_combiner),
            ("final", &self.final_combiner),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (_, c) in self.combiners() {
            c.validate()?;
        }
        let d = self.dim();
        if self.mod_combiner.dim() != d || self.tgt_combiner.dim() != d {
            return Err(Error::ShapeMismatch("combiners disagree on D".into()));
        }
        if self.mod_combiner.arity() != self.tgt_combiner.arity() || self.mod_combiner.arity() < 2
        {
            return Err(Error::ShapeMismatch(
                "modification and target combiners need the same arity >= 2".into(),
            ));
        }
        if self.final_combiner.arity() != 2 {
            return Err(Error::ShapeMismatch("final combiner must take 2 inputs".into()));
        }
        Ok(())
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.mod_combiner.slices();
        out.extend(self.tgt_combiner.slices());
        out.extend(self.final_combiner.slices());
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.mod_combiner.slices_mut();
        out.extend(self.tgt_combiner.slices_mut());
        out.extend(self.final_combiner.slices_mut());
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.mod_combiner.add_assign(&other.mod_combiner);
        self.tgt_combiner.add_assign(&other.tgt_combiner);
        self.final_combiner.add_assign(&other.final_combiner);
    }
}

/// Everything produced by one hierarchical forward pass.
#[derive(Debug, Clone)]
pub struct WhcTrace {
    pub q: FeatureVector,
    pub modification: CombinerOutput,
    pub target: CombinerOutput,
    pub fused: CombinerOutput,
}

impl WhcTrace {
    pub fn betas(&self) -> [(&'static str, &[f64]); 3] {
        [
            ("mod", &self.modification.betas),
            ("tgt", &self.target.betas),
            ("final", &self.fused.betas),
        ]
    }
}

/// Modification query = `mod(visual…, mod_text)`, target query =
/// `tgt(visual…, target_text)`, fused query = `final(modification, target)`.
pub fn whc_forward_streams(
    whc: &WhcParams,
    visual: &[&FeatureVector],
    mod_text: &FeatureVector,
    target_text: &FeatureVector,
) -> Result<WhcTrace> {
    let mut mod_inputs = visual.to_vec();
    mod_inputs.push(mod_text);
    let modification = whc.mod_combiner.forward(&mod_inputs)?;
    let mut tgt_inputs = visual.to_vec();
    tgt_inputs.push(target_text);
    let target = whc.tgt_combiner.forward(&tgt_inputs)?;
    let fused = whc
        .final_combiner
        .forward(&[&modification.output, &target.output])?;
    Ok(WhcTrace {
        q: fused.output.clone(),
        modification,
        target,
        fused,
    })
}

/// Forward pass over the full four-stream query (patch selection, instance
/// selection, modification text, target text).
pub fn whc_forward(
    whc: &WhcParams,
    patch_feature: &FeatureVector,
    instance_feature: &FeatureVector,
    mod_text: &FeatureVector,
    target_text: &FeatureVector,
) -> Result<WhcTrace> {
    whc_forward_streams(whc, &[patch_feature, instance_feature], mod_text, target_text)
}

#[derive(Debug, Clone)]
pub struct WhcGrads {
    pub params: WhcParams,
    pub visual: Vec<Array1<f64>>,
    pub mod_text: Array1<f64>,
    pub target_text: Array1<f64>,
}

/// Reverse pass through final → (modification, target). Parameter gradients
/// are added into `grads`.
pub fn whc_backward_into(
    whc: &WhcParams,
    trace: &WhcTrace,
    d_q: &[f64],
    grads: &mut WhcParams,
) -> Result<(Vec<Array1<f64>>, Array1<f64>, Array1<f64>)> {
    let d_streams = combiner_backward_into(
        &whc.final_combiner,
        &trace.fused.cache,
        d_q.into(),
        &mut grads.final_combiner,
    )?;
    let mut d_mod = combiner_backward_into(
        &whc.mod_combiner,
        &trace.modification.cache,
        d_streams[0].view(),
        &mut grads.mod_combiner,
    )?;
    let mut d_tgt = combiner_backward_into(
        &whc.tgt_combiner,
        &trace.target.cache,
        d_streams[1].view(),
        &mut grads.tgt_combiner,
    )?;
    let d_mod_text = d_mod.pop().expect("text input");
    let d_target_text = d_tgt.pop().expect("text input");
    let d_visual = d_mod.into_iter().zip(d_tgt).map(|(a, b)| a + b).collect();
    Ok((d_visual, d_mod_text, d_target_text))
}

pub fn whc_backward(whc: &WhcParams, trace: &WhcTrace, d_q: &[f64]) -> Result<WhcGrads> {
    let mut params = whc.zeros_like();
    let (visual, mod_text, target_text) = whc_backward_into(whc, trace, d_q, &mut params)?;
    Ok(WhcGrads {
        params,
        visual,
        mod_text,
        target_text,
    })
}
