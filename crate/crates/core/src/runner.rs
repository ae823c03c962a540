//! Workflow commands shared by the CLI: simulate, fuse, evaluate, report and
//! the end-to-end run.
//!
//! Seeds: a run's expert `name` uses `derive_seed(seed, ["expert", name])`
//! unless it sets its own; the single-expert `simulate` command uses `seed`
//! directly. Within an expert, each (video, expression) unit derives its own
//! stream from the expert seed and the two ids (see [`crate::seed`]).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{load_index, load_mask_tree, write_mask_tree, DatasetError, MaskSource, SequenceMap};
use crate::fusion::{fuse_sets, FusionError, PredictionSet};
use crate::mask::MaskError;
use crate::metrics::{evaluate_sequences, AggregateReport, MetricsError, Summary, DEFAULT_TOLERANCE};
use crate::pipeline::{simulate, PipelineConfig, PipelineError, PropagatorSpec, SegmenterSpec, SpecError};
use crate::report::{build_report, ReportError, ReportTable};
use crate::sampler::{SamplingPlan, SamplingStrategy};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{what} does not exist: {}", path.display())]
    MissingPath { what: &'static str, path: PathBuf },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: &'static str, source: Box<RunError> },
}

/// Malformed or inconsistent input data counts as validation; failing to
/// read or write an existing path does not.
fn dataset_is_validation(e: &DatasetError) -> bool {
    !matches!(
        e,
        DatasetError::Io { .. }
            | DatasetError::Mask {
                source: MaskError::Io { .. },
                ..
            }
    )
}

impl RunError {
    /// Bad input or configuration, as opposed to a failure while doing the work.
    pub fn is_validation(&self) -> bool {
        match self {
            RunError::Config(_)
            | RunError::MissingPath { .. }
            | RunError::Spec(_)
            | RunError::Report(_)
            | RunError::Json { .. } => true,
            RunError::Dataset(e) => dataset_is_validation(e),
            RunError::Metrics(MetricsError::Dataset(e)) => dataset_is_validation(e),
            RunError::Metrics(MetricsError::Tolerance(_)) => true,
            RunError::Fusion(e) => matches!(e, FusionError::KeyMismatch { .. } | FusionError::FrameMismatch { .. }),
            RunError::Pipeline(PipelineError::MissingGroundTruth { .. }) => true,
            RunError::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ RunError::Stage { .. } => e,
            e => RunError::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One expert in an end-to-end run. Unset fields fall back to the run's top-level settings.
///
/// Text form: `name[,segmenter=SPEC][,propagator=SPEC][,keyframes=N][,strategy=S][,seed=N]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmenter: Option<SegmenterSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propagator: Option<PropagatorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<SamplingStrategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ExpertConfig {
    pub fn named(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            segmenter: None,
            propagator: None,
            keyframes: None,
            strategy: None,
            seed: None,
        }
    }
}

impl FromStr for ExpertConfig {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(',');
        let name = parts.next().unwrap_or_default().trim();
        let mut expert = ExpertConfig::named(name);
        for part in parts {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| RunError::Config(format!("expert `{name}`: expected key=value, got `{part}`")))?;
            let bad = |what: &str| RunError::Config(format!("expert `{name}`: invalid {what} `{v}`"));
            match k.trim() {
                "segmenter" => expert.segmenter = Some(v.parse()?),
                "propagator" => expert.propagator = Some(v.parse()?),
                "keyframes" => expert.keyframes = Some(v.parse().map_err(|_| bad("keyframes"))?),
                "strategy" => expert.strategy = Some(v.parse().map_err(|_| bad("strategy"))?),
                "seed" => expert.seed = Some(v.parse().map_err(|_| bad("seed"))?),
                other => return Err(RunError::Config(format!("expert `{name}`: unknown field `{other}`"))),
            }
        }
        Ok(expert)
    }
}

impl fmt::Display for ExpertConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if let Some(s) = &self.segmenter {
            write!(f, ",segmenter={s}")?;
        }
        if let Some(p) = &self.propagator {
            write!(f, ",propagator={p}")?;
        }
        if let Some(k) = self.keyframes {
            write!(f, ",keyframes={k}")?;
        }
        if let Some(s) = self.strategy {
            write!(f, ",strategy={s}")?;
        }
        if let Some(s) = self.seed {
            write!(f, ",seed={s}")?;
        }
        Ok(())
    }
}

/// Settings shared by every command. Loaded from a JSON file; each field can
/// be overridden by the CLI flag of the same name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub meta: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub predictions: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub keyframes: usize,
    pub strategy: SamplingStrategy,
    pub segmenter: SegmenterSpec,
    pub propagator: PropagatorSpec,
    pub experts: Vec<ExpertConfig>,
    pub tolerance_ratio: f64,
    pub seed: u64,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            meta: None,
            gt: None,
            predictions: Vec::new(),
            out: None,
            keyframes: 5,
            strategy: SamplingStrategy::Uniform,
            segmenter: SegmenterSpec::GroundTruth,
            propagator: PropagatorSpec::default(),
            experts: Vec::new(),
            tolerance_ratio: DEFAULT_TOLERANCE,
            seed: 0,
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(RunError::MissingPath {
                what: "config file",
                path: path.to_path_buf(),
            });
        }
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| RunError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn require_meta(&self) -> Result<&Path, RunError> {
        let meta = self
            .meta
            .as_deref()
            .ok_or_else(|| RunError::Config("`meta` is required".into()))?;
        if !meta.is_file() {
            return Err(RunError::MissingPath {
                what: "metadata file",
                path: meta.to_path_buf(),
            });
        }
        Ok(meta)
    }

    fn require_gt(&self) -> Result<&Path, RunError> {
        let gt = self
            .gt
            .as_deref()
            .ok_or_else(|| RunError::Config("`gt` is required".into()))?;
        if !gt.is_dir() {
            return Err(RunError::MissingPath {
                what: "ground-truth root",
                path: gt.to_path_buf(),
            });
        }
        Ok(gt)
    }

    fn require_out(&self) -> Result<&Path, RunError> {
        self.out
            .as_deref()
            .ok_or_else(|| RunError::Config("`out` is required".into()))
    }

    fn require_predictions(&self) -> Result<&[PathBuf], RunError> {
        if self.predictions.is_empty() {
            return Err(RunError::Config("at least one prediction root is required".into()));
        }
        for p in &self.predictions {
            if !p.is_dir() {
                return Err(RunError::MissingPath {
                    what: "prediction root",
                    path: p.clone(),
                });
            }
        }
        Ok(&self.predictions)
    }

    fn check_numbers(&self) -> Result<(), RunError> {
        if self.keyframes == 0 {
            return Err(RunError::Config("`keyframes` must be at least 1".into()));
        }
        if self.tolerance_ratio.is_nan() || self.tolerance_ratio <= 0.0 {
            return Err(RunError::Config("`tolerance_ratio` must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(RunError::Config("`workers` must be at least 1".into()));
        }
        Ok(())
    }

    /// Top-level settings as a single pipeline.
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            n_keyframes: self.keyframes,
            strategy: self.strategy,
            segmenter: self.segmenter.clone(),
            propagator: self.propagator.clone(),
            seed: self.seed,
        }
    }

    /// Resolved `(name, pipeline)` per expert; one expert named `expert`
    /// built from the top-level settings when the list is empty.
    pub fn expert_pipelines(&self) -> Result<Vec<(String, PipelineConfig)>, RunError> {
        let experts = if self.experts.is_empty() {
            vec![ExpertConfig::named("expert")]
        } else {
            self.experts.clone()
        };
        let mut seen = std::collections::BTreeSet::new();
        experts
            .into_iter()
            .map(|e| {
                let valid_name = !e.name.is_empty()
                    && e.name != "fused"
                    && e.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
                    && !e.name.starts_with('.');
                if !valid_name {
                    return Err(RunError::Config(format!(
                        "expert name `{}` must be nonempty [A-Za-z0-9._-] and not `fused`",
                        e.name
                    )));
                }
                if !seen.insert(e.name.clone()) {
                    return Err(RunError::Config(format!("duplicate expert name `{}`", e.name)));
                }
                let keyframes = e.keyframes.unwrap_or(self.keyframes);
                if keyframes == 0 {
                    return Err(RunError::Config(format!(
                        "expert `{}`: keyframes must be at least 1",
                        e.name
                    )));
                }
                let config = PipelineConfig {
                    n_keyframes: keyframes,
                    strategy: e.strategy.unwrap_or(self.strategy),
                    segmenter: e.segmenter.clone().unwrap_or_else(|| self.segmenter.clone()),
                    propagator: e.propagator.clone().unwrap_or_else(|| self.propagator.clone()),
                    seed: e.seed.unwrap_or_else(|| derive_seed(self.seed, &["expert", &e.name])),
                };
                Ok((e.name, config))
            })
            .collect()
    }
}

/// Runs `f` on a pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, RunError> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| RunError::Config(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
}

fn write_manifest(dir: &Path, command: &str, config: &RunConfig) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&Manifest {
        command,
        seed: config.seed,
        config,
    })
    .expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

fn needs_gt(p: &PipelineConfig) -> bool {
    p.segmenter.needs_ground_truth() || p.propagator.needs_ground_truth()
}

fn check_precomputed_roots(p: &PipelineConfig) -> Result<(), RunError> {
    if let SegmenterSpec::Precomputed { root } = &p.segmenter {
        if !root.is_dir() {
            return Err(RunError::MissingPath {
                what: "precomputed prediction root",
                path: root.clone(),
            });
        }
    }
    Ok(())
}

/// Key-frame indices for `config.keyframes` of `n_frames` under `config.strategy`.
pub fn cmd_sample(config: &RunConfig, n_frames: usize) -> Result<Vec<usize>, RunError> {
    let plan =
        SamplingPlan::new(config.strategy, n_frames, config.keyframes).map_err(|e| RunError::Config(e.to_string()))?;
    Ok(plan.indices)
}

/// Runs the top-level pipeline over the dataset and writes a prediction tree to `out`.
pub fn cmd_simulate(config: &RunConfig) -> Result<SequenceMap, RunError> {
    config.check_numbers()?;
    let pipeline = config.pipeline();
    let meta = config.require_meta()?;
    let gt_root = if needs_gt(&pipeline) {
        Some(config.require_gt()?)
    } else {
        None
    };
    check_precomputed_roots(&pipeline)?;
    let out = config.require_out()?;

    with_workers(config.workers, || {
        let index = load_index(meta)?;
        let gt = gt_root
            .map(|root| load_mask_tree(root, &index, MaskSource::GroundTruth))
            .transpose()?;
        let predictions = simulate(&index, gt.as_ref(), &pipeline)?;
        write_mask_tree(out, &predictions)?;
        write_manifest(out, "simulate", config)?;
        Ok(predictions)
    })?
}

/// Majority-votes every prediction root and writes the fused tree to `out`.
pub fn cmd_fuse(config: &RunConfig) -> Result<PredictionSet, RunError> {
    config.check_numbers()?;
    let meta = config.require_meta()?;
    let roots = config.require_predictions()?;
    let out = config.require_out()?;

    with_workers(config.workers, || {
        let index = load_index(meta)?;
        let sets = roots
            .iter()
            .map(|root| {
                Ok(PredictionSet {
                    model_name: root.display().to_string(),
                    sequences: load_mask_tree(root, &index, MaskSource::Prediction)?,
                })
            })
            .collect::<Result<Vec<_>, RunError>>()?;
        let fused = fuse_sets(&sets)?;
        write_mask_tree(out, &fused.sequences)?;
        write_manifest(out, "fuse", config)?;
        Ok(fused)
    })?
}

/// Scores the single prediction root against `gt`; writes
/// `per_expression.csv` and `summary.json` to `out` when set.
pub fn cmd_evaluate(config: &RunConfig) -> Result<AggregateReport, RunError> {
    config.check_numbers()?;
    let meta = config.require_meta()?;
    let gt_root = config.require_gt()?;
    let roots = config.require_predictions()?;
    if roots.len() != 1 {
        return Err(RunError::Config(format!(
            "evaluate takes exactly one prediction root, got {}",
            roots.len()
        )));
    }
    with_workers(config.workers, || {
        let index = load_index(meta)?;
        let gt = load_mask_tree(gt_root, &index, MaskSource::GroundTruth)?;
        let pred = load_mask_tree(&roots[0], &index, MaskSource::Prediction)?;
        let report = evaluate_sequences(&pred, &gt, &index, config.tolerance_ratio)?;
        if let Some(out) = &config.out {
            report.write(out).map_err(io_err(out))?;
            write_manifest(out, "evaluate", config)?;
        }
        Ok(report)
    })?
}

/// Reads `summary.json` files and tabulates them.
pub fn cmd_report(summary_paths: &[PathBuf], labels: &[String]) -> Result<ReportTable, RunError> {
    let summaries = summary_paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|source| {
                if source.kind() == std::io::ErrorKind::NotFound {
                    RunError::MissingPath {
                        what: "summary file",
                        path: p.clone(),
                    }
                } else {
                    RunError::Io {
                        path: p.clone(),
                        source,
                    }
                }
            })?;
            Summary::from_json(&text).map_err(|source| RunError::Json {
                path: p.clone(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(build_report(&summaries, labels)?)
}

/// Results of [`cmd_end_to_end`].
#[derive(Clone, Debug)]
pub struct EndToEndOutcome {
    /// One report per expert in configuration order, then `fused`.
    pub reports: Vec<(String, AggregateReport)>,
    pub table: ReportTable,
}

impl EndToEndOutcome {
    pub fn report(&self, name: &str) -> Option<&AggregateReport> {
        self.reports.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }
}

/// Simulates every expert, fuses them, evaluates all of them and tabulates.
///
/// Layout under `out`: `experts/<name>/` and `fused/` prediction trees,
/// `eval/<name>/{per_expression.csv,summary.json}`, `report.txt`,
/// `report.csv` and `manifest.json`.
pub fn cmd_end_to_end(config: &RunConfig) -> Result<EndToEndOutcome, RunError> {
    // pre-flight: nothing is written until every check passes
    config.check_numbers()?;
    let meta = config.require_meta()?;
    let gt_root = config.require_gt()?;
    let out = config.require_out()?;
    let experts = config.expert_pipelines()?;
    for (_, p) in &experts {
        check_precomputed_roots(p)?;
    }

    with_workers(config.workers, || {
        let index = load_index(meta).map_err(|e| RunError::from(e).in_stage("load"))?;
        let gt =
            load_mask_tree(gt_root, &index, MaskSource::GroundTruth).map_err(|e| RunError::from(e).in_stage("load"))?;

        let mut sets = Vec::with_capacity(experts.len());
        for (name, pipeline) in &experts {
            let sequences =
                simulate(&index, Some(&gt), pipeline).map_err(|e| RunError::from(e).in_stage("simulate"))?;
            write_mask_tree(out.join("experts").join(name), &sequences)
                .map_err(|e| RunError::from(e).in_stage("simulate"))?;
            sets.push(PredictionSet {
                model_name: name.clone(),
                sequences,
            });
        }

        let fused = fuse_sets(&sets).map_err(|e| RunError::from(e).in_stage("fuse"))?;
        write_mask_tree(out.join("fused"), &fused.sequences).map_err(|e| RunError::from(e).in_stage("fuse"))?;

        let evaluated = sets
            .iter()
            .map(|s| (s.model_name.clone(), &s.sequences))
            .chain(std::iter::once(("fused".to_string(), &fused.sequences)));
        let mut reports = Vec::new();
        for (name, sequences) in evaluated {
            let report = evaluate_sequences(sequences, &gt, &index, config.tolerance_ratio)
                .map_err(|e| RunError::from(e).in_stage("evaluate"))?;
            let dir = out.join("eval").join(&name);
            report
                .write(&dir)
                .map_err(|e| RunError::Io { path: dir, source: e }.in_stage("evaluate"))?;
            reports.push((name, report));
        }

        let labels: Vec<String> = reports.iter().map(|(n, _)| n.clone()).collect();
        let summaries: Vec<Summary> = reports.iter().map(|(_, r)| r.summary).collect();
        let table = build_report(&summaries, &labels).map_err(|e| RunError::from(e).in_stage("report"))?;
        for (file, text) in [("report.txt", table.to_text()), ("report.csv", table.to_csv())] {
            let path = out.join(file);
            fs::write(&path, text).map_err(|e| RunError::Io { path, source: e }.in_stage("report"))?;
        }
        write_manifest(out, "run", config).map_err(|e| e.in_stage("report"))?;
        Ok(EndToEndOutcome { reports, table })
    })?
}
