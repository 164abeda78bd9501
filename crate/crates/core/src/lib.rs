//! Composed image retrieval over precomputed embeddings.
//!
//! Reference-image features are re-weighted by retained/deleted intent texts
//! at patch and instance level ([`selection`]), fused with the modification
//! and inferred-target texts by a hierarchy of learned combiners ([`whc`],
//! [`fusion`]), trained under an in-batch contrastive loss ([`loss`],
//! [`training`]) and ranked against a gallery by cosine similarity
//! ([`retrieval`]).

pub mod combiner;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod inspect;
pub mod io;
pub mod kernels;
pub mod loss;
pub mod optim;
pub mod retrieval;
pub mod selection;
pub mod synth;
pub mod training;
pub mod types;
pub mod whc;

pub use combiner::{combiner_backward, combiner_forward, CombinerCache, CombinerParams};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use fusion::{sum_fusion, AblationVariant, FusionKind, FusionParams, InitScheme, QueryModel, Streams};
pub use kernels::{cosine, mean_vectors, minmax_normalize, softmax, FeatureVector};
pub use loss::{batch_loss, BatchLoss};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use retrieval::{evaluate, rank, recall_at_k, RankedResult, RecallReport};
pub use selection::{
    instance_attention, patch_attention, select_instance_feature, select_patch_feature,
    InstanceAttention, PatchAttention,
};
pub use synth::{synth_dataset, Plant, SynthConfig};
pub use training::{train, train_with, RunConfig, TrainLog};
pub use types::{GalleryEntry, InstanceSet, PatchSet, QuerySample, Split};
pub use whc::{whc_backward, whc_forward, whc_forward_streams, WhcParams, WhcTrace};
