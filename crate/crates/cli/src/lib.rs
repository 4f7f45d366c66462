//! Command line front end: `analyze`, `features`, `train`, `synth`, `eval`.

pub mod analyze;
pub mod config;
pub mod eval;
pub mod synth_cmd;
pub mod train;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use leishcount::classify::Kernel;
use leishcount::report::render_eval_table;
use leishcount::synth::SceneSpec;

use config::{read_structured, AnalysisArgs};

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    PartialFailure = 1,
    ConfigError = 2,
}

#[derive(Parser, Debug)]
#[command(name = "leishcount", version, about = "Quantify Leishmania infection in fluorescence microscopy images")]
pub struct Cli {
    /// Only log errors.
    #[arg(long, short = 'q', global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    /// Debug logging; `analyze` also appends the per-region CSV to each report.
    #[arg(long, short = 'v', global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Analyze images (RGB files or channel manifests) and write reports.
    Analyze(AnalyzeCmd),
    /// Dump per-region features of images as CSV.
    Features(FeaturesCmd),
    /// Train the learned nuclei counter.
    Train(TrainCmd),
    /// Render synthetic scenes with ground truth.
    Synth(SynthCmd),
    /// Compare algorithm counts with manual annotations.
    Eval(EvalCmd),
}

#[derive(Args, Debug)]
pub struct AnalyzeCmd {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Output directory (default: next to each image).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Write an annotated overlay PNG per image.
    #[arg(long)]
    pub overlay: bool,
    /// Write a JSON sidecar per image.
    #[arg(long)]
    pub json: bool,
    /// Write a label map PNG per channel.
    #[arg(long)]
    pub label_maps: bool,
    /// Leave the report timestamp out, for reproducible output.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Args, Debug)]
pub struct FeaturesCmd {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// CSV destination (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KernelKind {
    Linear,
    Poly,
    Rbf,
    Tanh,
}

#[derive(Args, Debug)]
pub struct TrainCmd {
    /// Model destination. The training summary goes next to it.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Labeled feature CSV (`label,f0..f27`); without it a synthetic corpus is rendered.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Save the corpus used for training.
    #[arg(long, value_name = "FILE")]
    pub export_corpus: Option<PathBuf>,
    /// Smallest cluster size in the synthetic corpus.
    #[arg(long, default_value_t = 2)]
    pub min_class: u32,
    /// Largest cluster size in the synthetic corpus.
    #[arg(long, default_value_t = 6)]
    pub max_class: u32,
    /// Synthetic clusters per size.
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    /// Seed of the synthetic corpus.
    #[arg(long, default_value_t = 1_000_000)]
    pub seed: u64,
    /// Pipeline configuration used to segment the synthetic clusters.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "rbf")]
    pub kernel: KernelKind,
    /// RBF width (default 1 / feature count).
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 3)]
    pub degree: u32,
    #[arg(long, default_value_t = 0.01)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0.0)]
    pub coef0: f64,
    #[arg(long, short = 'C', default_value_t = 1.0)]
    pub c: f64,
}

impl TrainCmd {
    fn kernel(&self, dim: usize) -> Kernel {
        match self.kernel {
            KernelKind::Linear => Kernel::Linear,
            KernelKind::Poly => Kernel::Polynomial { degree: self.degree },
            KernelKind::Rbf => Kernel::Rbf {
                gamma: self.gamma.unwrap_or(1.0 / dim.max(1) as f64),
            },
            KernelKind::Tanh => Kernel::Tanh {
                kappa: self.kappa,
                c: self.coef0,
            },
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthCmd {
    /// Scene description (JSON); omitted fields take their defaults.
    #[arg(long, value_name = "FILE", conflicts_with = "benchmark")]
    pub spec: Option<PathBuf>,
    /// Use the benchmark scene: 50 isolated macrophages, 30 infected, 4 free parasites.
    #[arg(long)]
    pub benchmark: bool,
    /// Overrides the seed of the scene file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of scenes, with consecutive seeds.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Destination directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// File name prefix of the written scenes.
    #[arg(long, default_value = "scene")]
    pub stem: String,
    /// Also write an RGB composite PNG.
    #[arg(long)]
    pub rgb: bool,
}

#[derive(Args, Debug)]
pub struct EvalCmd {
    /// Annotation files (JSON), one annotator each.
    #[arg(long, num_args = 1.., value_name = "FILE")]
    pub annotations: Vec<PathBuf>,
    /// Analysis sidecars holding the algorithm counts.
    #[arg(long, num_args = 1.., value_name = "FILE")]
    pub reports: Vec<PathBuf>,
    /// Per-image totals CSV: `image,annotator,macrophages,parasites,infected`.
    #[arg(long, value_name = "FILE")]
    pub totals: Vec<PathBuf>,
    /// Print JSON instead of the table.
    #[arg(long)]
    pub json: bool,
    /// Write the table or JSON here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Failures before any work starts map to [`Status::ConfigError`].
struct ConfigError(anyhow::Error);

fn config_err<T>(r: Result<T>) -> std::result::Result<T, ConfigError> {
    r.map_err(ConfigError)
}

fn batch_status(failed: usize) -> Status {
    if failed == 0 {
        Status::Success
    } else {
        Status::PartialFailure
    }
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_analyze(cmd: AnalyzeCmd, verbose: bool) -> std::result::Result<Status, ConfigError> {
    let mut cfg = config_err(cmd.analysis.resolve())?;
    if cmd.out.is_some() {
        cfg.out = cmd.out;
    }
    cfg.overlay |= cmd.overlay;
    cfg.json |= cmd.json;
    cfg.label_maps |= cmd.label_maps;
    if cmd.no_timestamp {
        cfg.timestamp = false;
    }
    let outcome = config_err(analyze::analyze_batch(&cmd.inputs, &cfg, verbose))?;
    log::info!("{} of {} images analyzed", outcome.processed, cmd.inputs.len());
    Ok(batch_status(outcome.failed))
}

fn run_features(cmd: FeaturesCmd) -> std::result::Result<Status, ConfigError> {
    let cfg = config_err(cmd.analysis.resolve())?;
    let (csv, outcome) = config_err(analyze::features_batch(&cmd.inputs, &cfg))?;
    if let Err(e) = write_or_print(&cmd.out, &csv) {
        log::error!("{e:#}");
        return Ok(Status::PartialFailure);
    }
    Ok(batch_status(outcome.failed))
}

fn run_train(cmd: TrainCmd) -> std::result::Result<Status, ConfigError> {
    let samples = match &cmd.corpus {
        Some(path) => config_err(train::read_corpus(path))?,
        None => {
            let config: leishcount::pipeline::AnalysisConfig = match &cmd.config {
                Some(p) => config_err(read_structured::<config::PipelineConfig>(p))?.analysis,
                None => Default::default(),
            };
            log::info!(
                "rendering {} clusters per class for classes {}..={}",
                cmd.per_class,
                cmd.min_class,
                cmd.max_class
            );
            match train::synthetic_corpus(cmd.min_class, cmd.max_class, cmd.per_class, cmd.seed, &config) {
                Ok(s) => s,
                Err(e) => {
                    log::error!("{e:#}");
                    return Ok(Status::PartialFailure);
                }
            }
        }
    };
    if let Some(path) = &cmd.export_corpus {
        if let Err(e) = train::write_corpus(path, &samples) {
            log::error!("{e:#}");
            return Ok(Status::PartialFailure);
        }
    }
    let dim = samples.first().map_or(0, |s| s.0.len());
    let (model, report) = match train::train(&samples, cmd.kernel(dim), cmd.c) {
        Ok(r) => r,
        Err(e) => {
            log::error!("{e:#}");
            return Ok(Status::PartialFailure);
        }
    };
    let summary_path = cmd.out.with_extension("summary.json");
    let written = std::fs::write(&cmd.out, model.to_json())
        .with_context(|| format!("cannot write {}", cmd.out.display()))
        .and_then(|_| {
            std::fs::write(&summary_path, serde_json::to_string_pretty(&report)?)
                .with_context(|| format!("cannot write {}", summary_path.display()))
        });
    if let Err(e) = written {
        log::error!("{e:#}");
        return Ok(Status::PartialFailure);
    }
    for (class, n) in &report.summary.class_counts {
        println!("class {class}: {n} samples");
    }
    println!("training accuracy: {:.4}", report.summary.training_accuracy);
    match &report.holdout {
        Some(h) => println!("holdout accuracy (66% sequential split, {} test samples): {:.4}", h.test, h.accuracy),
        None => println!("holdout accuracy: unavailable"),
    }
    Ok(Status::Success)
}

fn run_synth(cmd: SynthCmd) -> std::result::Result<Status, ConfigError> {
    let mut spec = match (&cmd.spec, cmd.benchmark) {
        (Some(path), _) => config_err(read_structured::<SceneSpec>(path))?,
        (None, true) => SceneSpec::benchmark(0),
        (None, false) => return Err(ConfigError(anyhow::anyhow!("either --spec or --benchmark is required"))),
    };
    if let Some(seed) = cmd.seed {
        spec.seed = seed;
    }
    config_err(spec.validate().map_err(Into::into))?;
    match synth_cmd::write_scenes(&spec, cmd.count, &cmd.out, &cmd.stem, cmd.rgb) {
        Ok(files) => {
            for f in files {
                println!("{}", f.manifest.display());
            }
            Ok(Status::Success)
        }
        Err(e) => {
            log::error!("{e:#}");
            Ok(Status::PartialFailure)
        }
    }
}

fn run_eval(cmd: EvalCmd) -> std::result::Result<Status, ConfigError> {
    if cmd.annotations.is_empty() && cmd.totals.is_empty() {
        return Err(ConfigError(anyhow::anyhow!("give --annotations or --totals")));
    }
    let mut rows = Vec::new();
    for path in &cmd.totals {
        rows.extend(config_err(eval::read_totals_csv(path))?);
    }
    for path in &cmd.annotations {
        rows.extend(config_err(eval::read_annotations(path))?);
    }
    for path in &cmd.reports {
        rows.push(config_err(eval::read_sidecar(path))?);
    }
    let (evals, skipped) = eval::evaluate_rows(&rows);
    for s in &skipped {
        log::warn!("skipped {s}");
    }
    let text = if cmd.json {
        serde_json::to_string_pretty(&evals).expect("evaluations serialize") + "\n"
    } else {
        render_eval_table(&evals)
    };
    if let Err(e) = write_or_print(&cmd.out, &text) {
        log::error!("{e:#}");
        return Ok(Status::PartialFailure);
    }
    Ok(Status::Success)
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else if cli.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("LEISHCOUNT_LOG")
        .format_timestamp(None)
        .format_target(false)
        .try_init();
}

/// Run a parsed command line and return its exit status.
pub fn run(cli: Cli) -> Status {
    init_logging(&cli);
    let verbose = cli.verbose;
    let result = match cli.command {
        Command::Analyze(cmd) => run_analyze(cmd, verbose),
        Command::Features(cmd) => run_features(cmd),
        Command::Train(cmd) => run_train(cmd),
        Command::Synth(cmd) => run_synth(cmd),
        Command::Eval(cmd) => run_eval(cmd),
    };
    match result {
        Ok(status) => status,
        Err(ConfigError(e)) => {
            log::error!("{e:#}");
            Status::ConfigError
        }
    }
}
