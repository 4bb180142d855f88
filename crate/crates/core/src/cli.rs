//! Command-line front end. Every subcommand maps its failure to
//! [`Error::exit_code`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::estimators::EstimatorTag;
use crate::glimpse::{generate_translated_scaled, glyph_digits, read_mnist_dir, Dataset, DigitPlacer};
use crate::model::checkpoint::Checkpoint;
use crate::oracle::{run_identity_suite, Fault};
use crate::training::{
    diagnose, evaluate, export_curves, model_shape, ExampleSource, ExperimentConfig, ExperimentData, Trainer,
};

#[derive(Debug, Parser)]
#[command(name = "wsram", version, about = "Wake-sleep recurrent attention models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a translated-and-scaled digit dataset container.
    GenData(GenDataArgs),
    /// Train a model to the configured update budget.
    Train(TrainArgs),
    /// Classification error of a checkpoint on the test split.
    Eval(EvalArgs),
    /// Gradient variance and ESS of every estimator on a fixed batch.
    Diagnose(DiagnoseArgs),
    /// Run the exact-enumeration identity suite on random toy worlds.
    OracleVerify(OracleArgs),
    /// Merge metrics files into one CSV.
    ExportCurves(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Dotted override applied after the file, e.g. `train.lr=3e-4`.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p, &self.overrides),
            None => ExperimentConfig::from_toml_str("", &self.overrides),
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Directory with the four MNIST IDX files.
    #[arg(long, required_unless_present = "glyphs", conflicts_with = "glyphs")]
    pub mnist_dir: Option<PathBuf>,
    /// Use the built-in procedural glyph digits instead of MNIST.
    #[arg(long)]
    pub glyphs: bool,
    /// Glyph renderings per class (with `--glyphs`).
    #[arg(long, default_value_t = 20)]
    pub glyphs_per_class: usize,
    /// Take source digits from the MNIST test files.
    #[arg(long)]
    pub test_split: bool,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub canvas: usize,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [1.0, 1.5])]
    pub scale_range: Vec<f64>,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Continue from a training checkpoint (its stored config is used;
    /// `--set` overrides still apply).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this update, as if interrupted.
    #[arg(long)]
    pub stop_at: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Checkpoint to evaluate; defaults to the run's own checkpoint. Without
    /// `-c`, a training checkpoint's stored config is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate on the training split instead.
    #[arg(long)]
    pub train_split: bool,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Checkpoint to diagnose; defaults to the run's own checkpoint. Without
    /// `-c`, a training checkpoint's stored config is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    /// Restrict to these estimators (default: all).
    #[arg(long = "estimator", value_name = "TAG")]
    pub estimators: Vec<EstimatorTag>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FaultArg {
    WakeQCvSign,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 50)]
    pub worlds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Deliberately break an estimator to check the suite catches it.
    #[arg(long)]
    pub inject_fault: Option<FaultArg>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output CSV; stdout when absent.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Diagnose(a) => diagnose_cmd(&a),
        Command::OracleVerify(a) => oracle_verify(&a),
        Command::ExportCurves(a) => export(&a),
    }
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let placer = DigitPlacer::new(a.canvas, (a.scale_range[0], a.scale_range[1]))?;
    let source = match &a.mnist_dir {
        Some(dir) => read_mnist_dir(dir, !a.test_split)?,
        None => glyph_digits(a.glyphs_per_class, a.seed),
    };
    let examples = generate_translated_scaled(&source, &placer, a.count, a.seed)?;
    let dataset = Dataset::new(a.canvas, a.canvas, 10, examples)?;
    dataset.write(&a.out)?;
    println!("wrote {} examples to {}", dataset.len(), a.out.display());
    println!("class histogram: {:?}", dataset.class_histogram());
    Ok(())
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?
        .install(f)
}

fn train(a: &TrainArgs) -> Result<()> {
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let config = match &resume {
        Some(ck) => {
            if a.config.config.is_some() {
                return Err(Error::config(
                    "--resume uses the checkpoint's config; pass only --set overrides",
                ));
            }
            let state = ck
                .trainer
                .as_ref()
                .ok_or_else(|| Error::config("checkpoint carries no trainer state"))?;
            ExperimentConfig::from_toml_str(&state.config, &a.config.overrides)?
        }
        None => a.config.load()?,
    };
    let data = ExperimentData::load(&config)?;
    let rows = match &data {
        ExperimentData::Images { train, .. } => {
            train_on(config.clone(), train, resume, &a.config.overrides, a.stop_at)?
        }
        ExperimentData::Toy { train, .. } => train_on(config.clone(), train, resume, &a.config.overrides, a.stop_at)?,
    };
    if let Some(last) = rows.last() {
        println!(
            "update {}: train error {:.4}, F-hat {:.4}, L_M-hat {:.4}, ESS {:.3}",
            last.update, last.train_error, last.f_hat, last.lm_hat, last.ess
        );
    }
    println!("metrics: {}", config.metrics_path().display());
    println!("checkpoint: {}", config.checkpoint_path().display());
    Ok(())
}

fn train_on<S: ExampleSource>(
    config: ExperimentConfig,
    source: &S,
    resume: Option<Checkpoint>,
    overrides: &[String],
    stop_at: Option<u64>,
) -> Result<Vec<crate::training::TrainingMetrics>> {
    let mut trainer = match resume {
        Some(ck) => Trainer::resume(ck, source, overrides)?,
        None => Trainer::new(config, source)?,
    };
    trainer.run(stop_at)
}

fn load_model<S: ExampleSource>(
    config: &ExperimentConfig,
    source: &S,
    path: &Path,
) -> Result<crate::model::AttentionModel> {
    let ck = Checkpoint::load(path)?;
    ck.check_shape(&model_shape(config, source))?;
    ck.model()
}

/// Without `-c`, a training checkpoint's stored config describes its data.
fn config_for(args: &ConfigArgs, checkpoint: Option<&Path>) -> Result<ExperimentConfig> {
    if let (None, Some(path)) = (&args.config, checkpoint) {
        if let Some(state) = Checkpoint::load(path)?.trainer {
            return ExperimentConfig::from_toml_str(&state.config, &args.overrides);
        }
    }
    args.load()
}

fn eval(a: &EvalArgs) -> Result<()> {
    let config = config_for(&a.config, a.checkpoint.as_deref())?;
    let path = a.checkpoint.clone().unwrap_or_else(|| config.checkpoint_path());
    let data = ExperimentData::load(&config)?;
    let e = &config.eval;
    let (error, n) = with_pool(config.threads, || match &data {
        ExperimentData::Images { train, test } => {
            let split = if a.train_split { train } else { test };
            let model = load_model(&config, split, &path)?;
            Ok((
                evaluate(&model, split, e.rollouts, config.seed, e.max_examples)?,
                split.len(),
            ))
        }
        ExperimentData::Toy { train, test } => {
            let split = if a.train_split { train } else { test };
            let model = load_model(&config, split, &path)?;
            Ok((
                evaluate(&model, split, e.rollouts, config.seed, e.max_examples)?,
                split.len(),
            ))
        }
    })?;
    let n = if e.max_examples == 0 { n } else { e.max_examples.min(n) };
    println!("error rate {error:.6} over {n} examples ({} rollouts each)", e.rollouts);
    Ok(())
}

fn diagnose_cmd(a: &DiagnoseArgs) -> Result<()> {
    let config = config_for(&a.config, a.checkpoint.as_deref())?;
    let path = a.checkpoint.clone().unwrap_or_else(|| config.checkpoint_path());
    let tags: Vec<EstimatorTag> = if a.estimators.is_empty() {
        EstimatorTag::ALL.to_vec()
    } else {
        a.estimators.clone()
    };
    let data = ExperimentData::load(&config)?;
    let report = with_pool(config.threads, || match &data {
        ExperimentData::Images { train, .. } => {
            let model = load_model(&config, train, &path)?;
            diagnose(&model, train, &config, &tags, a.resamples)
        }
        ExperimentData::Toy { train, .. } => {
            let model = load_model(&config, train, &path)?;
            diagnose(&model, train, &config, &tags, a.resamples)
        }
    })?;
    print!("{}", report.render_text());
    if let Some(p) = &a.json {
        fs::write(p, report.to_json())?;
    }
    Ok(())
}

fn oracle_verify(a: &OracleArgs) -> Result<()> {
    let fault = a.inject_fault.map(|f| match f {
        FaultArg::WakeQCvSign => Fault::WakeQControlVariateSign,
    });
    let report = run_identity_suite(a.worlds, a.seed, fault)?;
    print!("{}", report.render_text());
    if let Some(p) = &a.json {
        fs::write(p, report.to_json())?;
    }
    if report.all_passed() {
        return Ok(());
    }
    let failures: std::collections::BTreeSet<String> = report
        .results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} (world seed {})", r.identity, r.world_seed))
        .collect();
    let list: Vec<String> = failures.into_iter().collect();
    Err(Error::Verification(format!("identity failures: {}", list.join(", "))))
}

fn export(a: &ExportArgs) -> Result<()> {
    let inputs: Vec<&Path> = a.inputs.iter().map(PathBuf::as_path).collect();
    match &a.out {
        Some(p) => {
            let mut buf = Vec::new();
            export_curves(&inputs, &mut buf)?;
            fs::write(p, buf)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            export_curves(&inputs, &mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}
