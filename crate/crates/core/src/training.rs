//! Training of the fusion parameters over frozen embeddings.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{AblationVariant, InitScheme, QueryModel, Streams};
use crate::kernels::FeatureVector;
use crate::loss::batch_loss;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::retrieval::RecallReport;
use crate::types::{GalleryEntry, QuerySample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Embedding dimension; taken from the data when absent.
    pub dim: Option<usize>,
    /// Combiner hidden width; `4 · dim` when absent.
    pub hidden: Option<usize>,
    pub variant: AblationVariant,
    pub init: InitScheme,
    /// Evaluate on the held-out split after every epoch.
    pub eval_each_epoch: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            batch_size: 16,
            epochs: 10,
            learning_rate: 1e-4,
            seed: 124,
            dim: None,
            hidden: None,
            variant: AblationVariant::full(),
            init: InitScheme::default(),
            eval_each_epoch: false,
        }
    }
}

impl RunConfig {
    /// Temperature and learning rate used for the CIRR benchmark.
    pub fn cirr_preset() -> Self {
        Self {
            tau: 0.01,
            learning_rate: 1e-6,
            ..Self::default()
        }
    }

    /// Temperature and fusion learning rate used for FashionIQ.
    pub fn fashion_iq_preset() -> Self {
        Self {
            tau: 0.1,
            learning_rate: 1e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::NonPositiveTau(self.tau));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.dim == Some(0) || self.hidden == Some(0) {
            return Err(Error::InvalidConfig("dim and hidden must be >= 1".into()));
        }
        self.variant.validate()
    }

    /// Resolves `dim` against the data and `hidden` to its default.
    pub fn resolved(&self, data_dim: usize) -> Result<Self> {
        if let Some(d) = self.dim {
            if d != data_dim {
                return Err(Error::InvalidConfig(format!(
                    "config dim {d} does not match data dimension {data_dim}"
                )));
            }
        }
        Ok(Self {
            dim: Some(data_dim),
            hidden: Some(self.hidden.unwrap_or(4 * data_dim)),
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recalls: Option<RecallReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub elapsed_secs: f64,
    pub config: RunConfig,
}

impl TrainLog {
    /// One JSON object per epoch. Wall-clock time is left out so that logs of
    /// identical runs compare equal byte for byte.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("epoch record serializes") + "\n")
            .collect()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

/// Deterministic visiting order of `n` samples for one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

struct Prepared<'a> {
    streams: Vec<Streams>,
    targets: Vec<&'a FeatureVector>,
}

fn prepare<'a>(
    model: &QueryModel,
    samples: &[&QuerySample],
    gallery: &HashMap<&str, &'a GalleryEntry>,
) -> Result<Prepared<'a>> {
    let mut streams = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for s in samples {
        let target = gallery
            .get(s.target_id.as_str())
            .ok_or_else(|| Error::MissingTarget(s.target_id.clone()))?;
        streams.push(model.streams(s)?);
        targets.push(&target.embedding);
    }
    Ok(Prepared { streams, targets })
}

/// Mean-loss of one epoch pass, with optional parameter updates.
fn run_epoch(
    model: &mut QueryModel,
    data: &Prepared,
    order: &[usize],
    config: &RunConfig,
    optimizer: Option<(&mut AdamState, &mut u64, &AdamConfig)>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut optimizer = optimizer;
    for batch in order.chunks(config.batch_size) {
        let mut queries = Vec::with_capacity(batch.len());
        let mut traces = Vec::with_capacity(batch.len());
        for &i in batch {
            let (q, trace) = model.forward(&data.streams[i])?;
            queries.push(q);
            traces.push(trace);
        }
        let targets: Vec<&FeatureVector> = batch.iter().map(|&i| data.targets[i]).collect();
        let loss = batch_loss(&queries, &targets, config.tau)?;
        total += loss.per_sample.iter().sum::<f64>();

        if let Some((state, step, adam)) = optimizer.as_mut() {
            if model.params.parameter_count() == 0 {
                continue;
            }
            let mut grads = model.params.zeros_like();
            for (trace, d_q) in traces.iter().zip(&loss.d_queries) {
                model.backward_into(trace, d_q, &mut grads)?;
            }
            **step += 1;
            let grad_slices = grads.slices();
            adam_step(&mut model.params.slices_mut(), &grad_slices, state, **step, adam)?;
        }
    }
    Ok(total / order.len() as f64)
}

/// Mean batch loss of `model` over `samples` using the batching of `epoch`,
/// without updating anything.
pub fn epoch_loss(
    model: &QueryModel,
    samples: &[&QuerySample],
    gallery: &[GalleryEntry],
    config: &RunConfig,
    epoch: usize,
) -> Result<f64> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let map = gallery.iter().map(|e| (e.id.as_str(), e)).collect();
    let data = prepare(model, samples, &map)?;
    let order = epoch_order(config.seed, epoch, samples.len());
    let mut frozen = model.clone();
    run_epoch(&mut frozen, &data, &order, config, None)
}

pub fn train(
    samples: &[&QuerySample],
    gallery: &[GalleryEntry],
    config: &RunConfig,
) -> Result<(QueryModel, TrainLog)> {
    train_with(samples, gallery, config, |_, _| Ok(None))
}

/// Trains the fusion parameters. `after_epoch` is called with the 1-based
/// epoch number and the current model; a returned report is stored in the
/// log.
pub fn train_with(
    samples: &[&QuerySample],
    gallery: &[GalleryEntry],
    config: &RunConfig,
    mut after_epoch: impl FnMut(usize, &QueryModel) -> Result<Option<RecallReport>>,
) -> Result<(QueryModel, TrainLog)> {
    let started = Instant::now();
    config.validate()?;
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let config = config.resolved(first.dim())?;
    let dim = first.dim();
    let hidden = config.hidden.expect("resolved");

    let mut model = QueryModel::init(config.variant, config.seed, dim, hidden, config.init)?;
    let map = gallery.iter().map(|e| (e.id.as_str(), e)).collect();
    let data = prepare(&model, samples, &map)?;

    let adam = AdamConfig::with_lr(config.learning_rate);
    let mut state = AdamState::for_shapes(model.params.slices());
    let mut step = 0u64;
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = epoch_order(config.seed, epoch, samples.len());
        let mean_loss = run_epoch(
            &mut model,
            &data,
            &order,
            &config,
            Some((&mut state, &mut step, &adam)),
        )?;
        log::info!("epoch {} mean loss {mean_loss:.6}", epoch + 1);
        let recalls = after_epoch(epoch + 1, &model)?;
        epochs.push(EpochRecord {
            epoch: epoch + 1,
            mean_loss,
            recalls,
        });
    }
    Ok((
        model,
        TrainLog {
            epochs,
            elapsed_secs: started.elapsed().as_secs_f64(),
            config,
        },
    ))
}
