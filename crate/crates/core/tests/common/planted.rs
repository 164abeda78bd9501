//! End-to-end runs on generated planted fixtures.

use std::path::Path;

use mvsel_core::io::{encode_model_pack, load_manifest};
use mvsel_core::training::epoch_loss;
use mvsel_core::{
    evaluate, synth_dataset, train, AblationVariant, Dataset, FusionKind, InitScheme, Plant,
    QueryModel, RecallReport, RunConfig, Split, SynthConfig,
};

pub const KS: [usize; 4] = [1, 5, 10, 50];

pub fn synth_config(plant: Plant) -> SynthConfig {
    SynthConfig {
        plant,
        ..SynthConfig::default()
    }
}

pub fn generate(config: &SynthConfig, dir: &Path) -> Dataset {
    synth_dataset(config, dir).unwrap();
    load_manifest(dir).unwrap()
}

pub fn eval_split(data: &Dataset, model: &QueryModel) -> RecallReport {
    let queries = data.split(Split::Test);
    let gallery = data.gallery_for(Split::Test);
    evaluate(&queries, &gallery, model, &KS).unwrap()
}

/// Recall of the untrained, mean-only hierarchy.
pub fn zero_mlp_recall(data: &Dataset) -> RecallReport {
    let model = QueryModel::init(
        AblationVariant::full(),
        124,
        data.dim,
        4 * data.dim,
        InitScheme::ZeroMlp,
    )
    .unwrap();
    eval_split(data, &model)
}

pub struct Separation {
    pub final_loss: f64,
    pub baseline_loss: f64,
    pub report: RecallReport,
    pub epochs: usize,
}

/// Trains the full hierarchy and scores the untrained equal-weight sum on
/// the same batches of the final epoch.
pub fn separation(data: &Dataset, config: &RunConfig) -> Separation {
    let train_set = data.split(Split::Train);
    let (model, log) = train(&train_set, &data.gallery, config).unwrap();
    let sum_config = RunConfig {
        variant: AblationVariant {
            fusion: FusionKind::Sum,
            ..AblationVariant::full()
        },
        ..config.clone()
    };
    let sum = QueryModel::init(sum_config.variant, config.seed, data.dim, 1, InitScheme::default()).unwrap();
    let baseline_loss =
        epoch_loss(&sum, &train_set, &data.gallery, &sum_config, config.epochs - 1).unwrap();
    Separation {
        final_loss: log.final_loss().unwrap(),
        baseline_loss,
        report: eval_split(data, &model),
        epochs: log.epochs.len(),
    }
}

pub struct RunArtifacts {
    pub pack: Vec<u8>,
    pub report: String,
    pub log: String,
}

/// `synth → train → eval` into `dir`.
pub fn full_run(dir: &Path, synth: &SynthConfig, config: &RunConfig) -> RunArtifacts {
    let data = generate(synth, dir);
    let (model, log) = train(&data.split(Split::Train), &data.gallery, config).unwrap();
    RunArtifacts {
        pack: encode_model_pack(&model, &log.config).unwrap(),
        report: eval_split(&data, &model).to_json(),
        log: log.to_jsonl(),
    }
}

/// Trains one ablation row briefly; returns the config echo stored in its
/// model pack and the held-out report.
pub fn run_row(data: &Dataset, row: usize, epochs: usize) -> (String, RecallReport) {
    let config = RunConfig {
        variant: AblationVariant::ablation_row(row).unwrap(),
        epochs,
        ..RunConfig::default()
    };
    let (model, log) = train(&data.split(Split::Train), &data.gallery, &config).unwrap();
    let pack = encode_model_pack(&model, &log.config).unwrap();
    let (_, echo) = mvsel_core::io::decode_model_pack(&pack, Path::new("<memory>")).unwrap();
    (echo.to_json(), eval_split(data, &model))
}
