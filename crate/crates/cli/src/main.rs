use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvsel_core::inspect::write_attention_csv;
use mvsel_core::io::{load_manifest, load_model, save_model};
use mvsel_core::retrieval::DEFAULT_KS;
use mvsel_core::training::train_with;
use mvsel_core::{
    evaluate, gradcheck, rank, synth_dataset, Dataset, Plant, RunConfig, Split, SynthConfig,
};

/// Composed image retrieval with text-guided visual selection and learned
/// hierarchical fusion, over precomputed embeddings.
#[derive(Parser, Debug)]
#[command(name = "mvsel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted synthetic dataset.
    Synth(SynthArgs),
    /// Train the fusion parameters on the `train` split.
    Train(TrainArgs),
    /// Report Recall@K on one split.
    Eval(EvalArgs),
    /// Rank the gallery for one query.
    Retrieve(RetrieveArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Dump selection weights and combiner attention for one query as CSV.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 124)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 256)]
    train_n: usize,
    #[arg(long, default_value_t = 64)]
    eval_n: usize,
    #[arg(long, default_value_t = 64)]
    gallery_extra: usize,
    #[arg(long, default_value_t = 8)]
    patches: usize,
    #[arg(long, default_value_t = 4)]
    instances: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// `equal` or `skewed` target mixing weights.
    #[arg(long, default_value = "equal")]
    plant: Plant,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Data directory or manifest file.
    #[arg(long)]
    data: PathBuf,
    /// JSON file with run configuration keys; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_model: PathBuf,
    /// Per-epoch JSON lines log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Comma-separated cutoffs.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    k: Vec<usize>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    query_id: String,
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Disambiguates ids that occur in several splits.
    #[arg(long)]
    split: Option<Split>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 124)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    query_id: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    split: Option<Split>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] mvsel_core::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if !e.is_validation() => 2,
            CliError::Write { .. } => 2,
            _ => 1,
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn announce(what: &str, seed: u64, config_json: &str) {
    eprintln!("{what} seed: {seed}");
    eprintln!("{what} config: {config_json}");
}

fn read_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::Invalid(format!("cannot read config {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Invalid(format!("invalid config {}: {e}", path.display())))
}

fn held_out_split(data: &Dataset) -> Option<Split> {
    [Split::Test, Split::Val]
        .into_iter()
        .find(|s| !data.split(*s).is_empty())
}

fn synth(args: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        seed: args.seed,
        dim: args.dim,
        train_n: args.train_n,
        eval_n: args.eval_n,
        gallery_extra: args.gallery_extra,
        patches: args.patches,
        instances: args.instances,
        noise: args.noise,
        plant: args.plant,
    };
    announce(
        "synth",
        config.seed,
        &serde_json::to_string(&config).expect("config serializes"),
    );
    synth_dataset(&config, &args.out)?;
    eprintln!(
        "wrote {} train / {} test samples and {} gallery entries to {}",
        config.train_n,
        config.eval_n,
        config.train_n + config.eval_n + config.gallery_extra,
        args.out.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let config = read_run_config(args.config.as_deref())?;
    config.validate()?;
    let data = load_manifest(&args.data)?;
    let config = config.resolved(data.dim)?;
    announce("train", config.seed, &config.to_json());

    let train_set = data.split(Split::Train);
    let eval_split = if config.eval_each_epoch {
        Some(held_out_split(&data).ok_or_else(|| {
            CliError::Invalid("eval_each_epoch is set but the data has no test or val split".into())
        })?)
    } else {
        None
    };
    let (model, log) = train_with(&train_set, &data.gallery, &config, |epoch, model| {
        let Some(split) = eval_split else {
            return Ok(None);
        };
        let report = evaluate(&data.split(split), &data.gallery_for(split), model, &DEFAULT_KS)?;
        log::info!("epoch {epoch} {} {}", split, report.to_json());
        Ok(Some(report))
    })?;

    save_model(&args.out_model, &model, &log.config)?;
    if let Some(path) = &args.log {
        write_file(path, &log.to_jsonl())?;
    }
    println!(
        "{}",
        serde_json::json!({
            "epochs": log.epochs.len(),
            "final_loss": log.final_loss(),
            "model": args.out_model,
            "elapsed_secs": log.elapsed_secs,
        })
    );
    Ok(())
}

fn load_model_for(data: &Dataset, path: &Path) -> Result<mvsel_core::QueryModel> {
    let (model, echo) = load_model(path)?;
    announce("model", echo.seed, &echo.to_json());
    if model.dim() != data.dim {
        return Err(mvsel_core::Error::DimMismatch {
            expected: model.dim(),
            found: data.dim,
        }
        .into());
    }
    Ok(model)
}

fn eval(args: EvalArgs) -> Result<()> {
    let data = load_manifest(&args.data)?;
    let model = load_model_for(&data, &args.model)?;
    let queries = data.split(args.split);
    if queries.is_empty() {
        return Err(CliError::Invalid(format!("split `{}` has no samples", args.split)));
    }
    let report = evaluate(&queries, &data.gallery_for(args.split), &model, &args.k)?;
    let json = report.to_json();
    println!("{json}");
    if let Some(path) = &args.out {
        write_file(path, &format!("{json}\n"))?;
    }
    Ok(())
}

fn retrieve(args: RetrieveArgs) -> Result<()> {
    let data = load_manifest(&args.data)?;
    let model = load_model_for(&data, &args.model)?;
    let sample = data.find_query(&args.query_id, args.split)?;
    let gallery = data.gallery_for(sample.split);
    let mut ranked = rank(&sample.id, &model.encode(sample)?, gallery.iter().copied())?;
    ranked.truncate(args.top);
    let results: Vec<_> = ranked
        .ordered_gallery_ids
        .iter()
        .zip(&ranked.scores)
        .enumerate()
        .map(|(i, (id, score))| serde_json::json!({ "rank": i + 1, "id": id, "score": score }))
        .collect();
    println!(
        "{}",
        serde_json::json!({
            "query_id": sample.id,
            "split": sample.split,
            "target_id": sample.target_id,
            "results": results,
        })
    );
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> Result<()> {
    eprintln!("gradcheck seed: {}", args.seed);
    let report = gradcheck(args.seed, args.dim, args.hidden, args.eps)?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    if report.max_rel_err <= args.tol {
        eprintln!("gradcheck passed: max rel err {:.3e} <= {:e}", report.max_rel_err, args.tol);
        Ok(())
    } else {
        let worst = report.worst().map(|t| t.name.as_str()).unwrap_or("?");
        Err(CliError::Invalid(format!(
            "gradcheck failed: max rel err {:.3e} > {:e} (worst tensor {worst})",
            report.max_rel_err, args.tol
        )))
    }
}

fn inspect(args: InspectArgs) -> Result<()> {
    let data = load_manifest(&args.data)?;
    let model = load_model_for(&data, &args.model)?;
    let sample = data.find_query(&args.query_id, args.split)?;
    let write_err = |source| CliError::Write {
        path: args.out.clone(),
        source,
    };
    let file = File::create(&args.out).map_err(write_err)?;
    let mut out = BufWriter::new(file);
    write_attention_csv(&mut out, sample, &model)?;
    out.flush().map_err(write_err)?;
    eprintln!("wrote attention weights for `{}` to {}", sample.id, args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
