#![allow(clippy::result_large_err)]

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rvos_core::pipeline::{PropagatorSpec, SegmenterSpec};
use rvos_core::runner::{
    cmd_end_to_end, cmd_evaluate, cmd_fuse, cmd_report, cmd_sample, cmd_simulate, ExpertConfig, RunConfig, RunError,
};
use rvos_core::sampler::SamplingStrategy;
use rvos_core::synthetic;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Referring video object segmentation: sampling, propagation, mask voting and J&F evaluation.
#[derive(Parser, Debug)]
#[command(name = "rvos", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the key-frame indices for a video length as a JSON list.
    Sample {
        #[arg(long)]
        frames: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the segmenter + propagator pipeline and write a prediction tree.
    Simulate(ConfigArgs),
    /// Majority-vote several prediction trees into one.
    Fuse(ConfigArgs),
    /// Score one prediction tree against ground truth.
    Evaluate(ConfigArgs),
    /// Tabulate summary.json files from earlier evaluations.
    Report(ReportArgs),
    /// Simulate every expert, fuse, evaluate all runs and write a report.
    Run(ConfigArgs),
    /// Write a small synthetic dataset (metadata + ground-truth tree).
    Synth(SynthArgs),
}

/// Every field of the JSON config, each overriding the file when given.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// JSON config file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// meta_expressions.json of the split.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Ground-truth tree root.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Prediction tree root; repeat for several.
    #[arg(long = "predictions", visible_alias = "in")]
    predictions: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    keyframes: Option<usize>,
    /// uniform | first_k
    #[arg(long)]
    strategy: Option<SamplingStrategy>,
    /// gt | gt-noise:RATE[:seed=N] | precomputed:DIR
    #[arg(long)]
    segmenter: Option<SegmenterSpec>,
    /// nearest-key[:window=N] | decay-noise:BASE:GROWTH[:max=R][:window=N][:seed=N]
    #[arg(long)]
    propagator: Option<PropagatorSpec>,
    /// NAME[,segmenter=..][,propagator=..][,keyframes=N][,strategy=S][,seed=N]; repeat per expert.
    #[arg(long = "experts", visible_alias = "expert")]
    experts: Vec<ExpertConfig>,
    /// Boundary tolerance as a fraction of the image diagonal.
    #[arg(long = "tolerance_ratio", visible_alias = "tolerance-ratio")]
    tolerance_ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
}

impl ConfigArgs {
    fn resolve(self) -> Result<RunConfig, RunError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if self.meta.is_some() {
            c.meta = self.meta;
        }
        if self.gt.is_some() {
            c.gt = self.gt;
        }
        if !self.predictions.is_empty() {
            c.predictions = self.predictions;
        }
        if self.out.is_some() {
            c.out = self.out;
        }
        if let Some(k) = self.keyframes {
            c.keyframes = k;
        }
        if let Some(s) = self.strategy {
            c.strategy = s;
        }
        if let Some(s) = self.segmenter {
            c.segmenter = s;
        }
        if let Some(p) = self.propagator {
            c.propagator = p;
        }
        if !self.experts.is_empty() {
            c.experts = self.experts;
        }
        if let Some(t) = self.tolerance_ratio {
            c.tolerance_ratio = t;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if self.workers.is_some() {
            c.workers = self.workers;
        }
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// summary.json from an evaluation; repeat per row.
    #[arg(long = "summary", required = true)]
    summaries: Vec<PathBuf>,
    /// Row label; one per --summary, defaults to the summary's parent directory name.
    #[arg(long = "label")]
    labels: Vec<String>,
    /// Also write the table as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum SynthKind {
    /// Two short videos with moving boxes.
    Fixture,
    /// One video whose object appears only in its final third.
    LateObject,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: SynthKind,
    /// Frame count for late-object.
    #[arg(long, default_value_t = 60)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
}

fn default_label(path: &std::path::Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn execute(command: Command) -> Result<(), RunError> {
    match command {
        Command::Sample { frames, config } => {
            let config = config.resolve()?;
            let indices = cmd_sample(&config, frames)?;
            println!("{}", serde_json::to_string(&indices).expect("indices serialize"));
        }
        Command::Simulate(args) => {
            let config = args.resolve()?;
            let predictions = cmd_simulate(&config)?;
            println!(
                "wrote {} sequences to {}",
                predictions.len(),
                config.out.as_deref().unwrap_or_else(|| "".as_ref()).display()
            );
        }
        Command::Fuse(args) => {
            let config = args.resolve()?;
            let fused = cmd_fuse(&config)?;
            println!(
                "fused {} prediction trees over {} sequences",
                config.predictions.len(),
                fused.sequences.len()
            );
        }
        Command::Evaluate(args) => {
            let config = args.resolve()?;
            let report = cmd_evaluate(&config)?;
            println!("{}", report.summary.to_json());
        }
        Command::Report(args) => {
            let labels = if args.labels.is_empty() {
                args.summaries.iter().map(|p| default_label(p)).collect()
            } else {
                args.labels
            };
            let table = cmd_report(&args.summaries, &labels)?;
            print!("{}", table.to_text());
            if let Some(path) = args.csv {
                fs::write(&path, table.to_csv()).map_err(|source| RunError::Io { path, source })?;
            }
        }
        Command::Run(args) => {
            let config = args.resolve()?;
            let outcome = cmd_end_to_end(&config)?;
            print!("{}", outcome.table.to_text());
        }
        Command::Synth(args) => {
            let shape = synthetic::DEFAULT_SHAPE;
            let (index, gt) = match args.kind {
                SynthKind::Fixture => {
                    let index = synthetic::fixture_index();
                    let gt = synthetic::render_ground_truth(&index, shape);
                    (index, gt)
                }
                SynthKind::LateObject => {
                    if args.frames < 3 {
                        return Err(RunError::Config("late-object needs at least 3 frames".into()));
                    }
                    (
                        synthetic::late_object_index(args.frames),
                        synthetic::late_object_ground_truth(shape, args.frames),
                    )
                }
            };
            let paths = synthetic::write_dataset(&args.out, &index, &gt)?;
            println!("meta: {}", paths.metadata.display());
            println!("gt:   {}", paths.ground_truth.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            })
        }
    }
}
