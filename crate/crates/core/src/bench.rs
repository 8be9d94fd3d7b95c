//! Dataset ingestion, per-case pipeline orchestration, benchmark reports and
//! the refinement simulator entry point.
//!
//! Datasets are JSONL, one case per line:
//!
//! ```text
//! {"id":"n1","prompt":"two apples","task":"numerical","gt_counts":{"apple":2}}
//! {"id":"s1","prompt":"a dog left of a cat","task":"spatial",
//!  "gt_relations":[{"subject":"dog","relation":"left-of","object":"cat"}]}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    BackendError, GenerationRequest, RecordingBackend, RemoteBackend, RemoteConfig, ReplayBackend, ReplayStore,
    TextBackend,
};
use crate::decoder::{
    build_planning_prompt, decode_layout, decode_unconstrained, validate_layout_against_constraints,
    DecodeConfig, DecodeError, DecodeReport, PrefixPlan, Violation,
};
use crate::layout::{BoundingBox, Layout, Relation};
use crate::metrics::{
    aggregate, aggregate_spatial, canonical_counts, counting_metrics, layout_counts,
    render_markdown, spatial_accuracy, write_csv, CaseRow, CountingStats, CountingSummary, Counts,
    GroundTruthRelation, MetricsError, RelationOutcome, SpatialMode, SpatialSummary,
};
use crate::par;
use crate::prompts::{ExemplarCount, PromptError, PromptLibrary};
use crate::reasoning::{
    build_reasoning_prompt, parse_constraints, ConstraintSet, ReasoningError, ReasoningRequest,
    Task,
};
use crate::refinement::{
    category_target, layout_hash, partition_samples, render_target_with, run_denoise_to,
    run_refinement, score_objects, ConsistencyScore, DenoiserSpec, FidelityMask, GridDims,
    LatentGrid, LatentTrajectory, RefineError, SamplePartition, ToyScorer,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("line {line}: duplicate case id `{id}`")]
    DuplicateId { id: String, line: usize },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), BenchError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub name: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    Counts(Counts),
    Relations(Vec<GroundTruthRelation>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchCase {
    pub id: String,
    pub prompt: String,
    pub task: Task,
    pub ground_truth: GroundTruth,
    pub gt_boxes: Option<Vec<GtBox>>,
}

#[derive(Deserialize)]
struct RawRelation {
    subject: String,
    relation: Relation,
    object: String,
}

#[derive(Deserialize)]
struct RawCase {
    id: String,
    prompt: String,
    task: Task,
    #[serde(default)]
    gt_counts: Option<BTreeMap<String, u32>>,
    #[serde(default)]
    gt_relations: Option<Vec<RawRelation>>,
    #[serde(default)]
    gt_boxes: Option<Vec<GtBox>>,
}

fn case_from_raw(raw: RawCase, line: usize) -> Result<BenchCase, BenchError> {
    let violation = |message: String| BenchError::SchemaViolation { line, message };
    if raw.id.trim().is_empty() {
        return Err(violation("empty id".into()));
    }
    if raw.prompt.trim().is_empty() {
        return Err(violation("empty prompt".into()));
    }
    let ground_truth = match (raw.task, raw.gt_counts, raw.gt_relations) {
        (_, Some(_), Some(_)) => {
            return Err(violation("gt_counts and gt_relations are mutually exclusive".into()))
        }
        (Task::Numerical, Some(counts), None) => {
            let counts = canonical_counts(counts.iter().map(|(k, v)| (k.as_str(), *v)));
            if counts.is_empty() {
                return Err(violation("gt_counts has no positive count".into()));
            }
            GroundTruth::Counts(counts)
        }
        (Task::Spatial, None, Some(rels)) => {
            if rels.is_empty() {
                return Err(violation("gt_relations is empty".into()));
            }
            GroundTruth::Relations(
                rels.into_iter()
                    .map(|r| GroundTruthRelation::new(&r.subject, r.relation, &r.object))
                    .collect(),
            )
        }
        (Task::Numerical, None, _) => return Err(violation("numerical case needs gt_counts".into())),
        (Task::Spatial, _, None) => return Err(violation("spatial case needs gt_relations".into())),
    };
    Ok(BenchCase {
        id: raw.id,
        prompt: raw.prompt,
        task: raw.task,
        ground_truth,
        gt_boxes: raw.gt_boxes,
    })
}

/// Parses JSONL text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_dataset(text: &str) -> Result<Vec<BenchCase>, BenchError> {
    let mut seen = HashSet::new();
    let mut cases = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawCase = serde_json::from_str(line).map_err(|e| BenchError::SchemaViolation {
            line: line_no,
            message: e.to_string(),
        })?;
        let case = case_from_raw(raw, line_no)?;
        if !seen.insert(case.id.clone()) {
            return Err(BenchError::DuplicateId {
                id: case.id,
                line: line_no,
            });
        }
        cases.push(case);
    }
    Ok(cases)
}

pub fn load_dataset(path: &Path) -> Result<Vec<BenchCase>, BenchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let cases = parse_dataset(&text)?;
    if cases.is_empty() {
        log::warn!("dataset {} is empty", path.display());
    }
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Replay { dir: PathBuf },
    Remote(RemoteConfig),
    /// Calls the remote backend and records every response into `dir`.
    Record { dir: PathBuf, remote: RemoteConfig },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Replay {
            dir: PathBuf::from("fixtures"),
        }
    }
}

impl BackendConfig {
    pub fn build(&self) -> Box<dyn TextBackend> {
        match self {
            BackendConfig::Replay { dir } => Box::new(ReplayBackend::open(dir.clone())),
            BackendConfig::Remote(cfg) => Box::new(RemoteBackend::new(cfg.clone())),
            BackendConfig::Record { dir, remote } => Box::new(RecordingBackend::new(
                RemoteBackend::new(remote.clone()),
                Arc::new(ReplayStore::open(dir.clone())),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub backend: BackendConfig,
    pub exemplar_count: ExemplarCount,
    pub include_negation: bool,
    /// `false` runs the unconstrained baseline decode.
    pub constrained: bool,
    pub decode: DecodeConfig,
    pub reasoning_max_tokens: u32,
    pub threshold: f64,
    pub seed: u64,
    pub parallelism: usize,
    pub output_dir: PathBuf,
    pub spatial_mode: SpatialMode,
    pub denoiser: DenoiserSpec,
    pub scorer_tolerance: f64,
    pub prompts_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendConfig::default(),
            exemplar_count: ExemplarCount::default(),
            include_negation: true,
            constrained: true,
            decode: DecodeConfig::default(),
            reasoning_max_tokens: 96,
            threshold: 0.25,
            seed: 0,
            parallelism: 1,
            output_dir: PathBuf::from("out"),
            spatial_mode: SpatialMode::PerRelation,
            denoiser: DenoiserSpec::default(),
            scorer_tolerance: 0.05,
            prompts_dir: None,
        }
    }
}

impl RunConfig {
    /// Reads a TOML or JSON config, chosen by file extension.
    /// Relative fixture and prompt directories resolve against the config
    /// file's own directory.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut config: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                serde_json::from_str(&text).map_err(|e| BenchError::Config(e.to_string()))?
            }
            _ => toml::from_str(&text).map_err(|e| BenchError::Config(e.to_string()))?,
        };
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut config.backend {
            BackendConfig::Replay { dir } | BackendConfig::Record { dir, .. } => rebase(dir),
            BackendConfig::Remote(_) => {}
        }
        if let Some(dir) = &mut config.prompts_dir {
            rebase(dir);
        }
        Ok(config)
    }

    pub fn prompt_library(&self) -> Result<PromptLibrary, BenchError> {
        match &self.prompts_dir {
            Some(dir) => Ok(PromptLibrary::load(dir)?),
            None => Ok(PromptLibrary::builtin()),
        }
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub stage: String,
    pub kind: String,
    pub message: String,
}

impl CaseFailure {
    fn reasoning(e: &ReasoningError) -> Self {
        let kind = match e {
            ReasoningError::ParseFailure(_) => "ParseFailure",
            ReasoningError::Empty => "EmptyConstraints",
            ReasoningError::Prompt(_) => "Prompt",
        };
        Self {
            stage: "reasoning".into(),
            kind: kind.into(),
            message: e.to_string(),
        }
    }

    fn decode(e: &DecodeError) -> Self {
        let kind = match e {
            DecodeError::ExhaustedRetries { .. } => "ExhaustedRetries",
            DecodeError::Backend(BackendError::FixtureMissing { .. }) => "FixtureMissing",
            DecodeError::Backend(BackendError::Unavailable(_)) => "BackendUnavailable",
            DecodeError::Backend(_) => "BackendError",
            DecodeError::ParseFailure(_) => "ParseFailure",
            DecodeError::NonEmptyRequired => "NonEmptyRequired",
            DecodeError::Prompt(_) => "Prompt",
        };
        Self {
            stage: "decode".into(),
            kind: kind.into(),
            message: e.to_string(),
        }
    }
}

/// Everything stage one produced for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub reasoning_prompt: String,
    pub reasoning_completion: Option<String>,
    pub constraints: Option<ConstraintSet>,
    pub planning_prompt: Option<String>,
    pub decode: Option<DecodeReport>,
    pub constraint_violations: Vec<Violation>,
    pub failure: Option<CaseFailure>,
}

/// The stage-one request sent for a rendered reasoning prompt.
pub fn reasoning_request(prompt: &str, config: &RunConfig) -> GenerationRequest {
    GenerationRequest::new(prompt)
        .expect("reasoning prompt is non-empty")
        .with_stop(vec!["\n".into()])
        .with_temperature(config.decode.temperature)
        .with_max_tokens(config.reasoning_max_tokens)
}

/// Reason → plan → decode → validate for one prompt. Failures are captured
/// in the output rather than returned.
pub fn run_prompt(
    prompt: &str,
    task: Task,
    config: &RunConfig,
    backend: &dyn TextBackend,
    lib: &PromptLibrary,
) -> PipelineOutput {
    let request = ReasoningRequest {
        meta_prompt: prompt.to_string(),
        task,
        exemplar_count: config.exemplar_count,
        include_negation: false,
    };
    let mut out = PipelineOutput {
        reasoning_prompt: String::new(),
        reasoning_completion: None,
        constraints: None,
        planning_prompt: None,
        decode: None,
        constraint_violations: Vec::new(),
        failure: None,
    };
    out.reasoning_prompt = match build_reasoning_prompt(lib, &request) {
        Ok(p) => p,
        Err(e) => {
            out.failure = Some(CaseFailure::reasoning(&e));
            return out;
        }
    };
    let req = reasoning_request(&out.reasoning_prompt, config);
    let completion = match backend.complete(&req) {
        Ok(r) => r.completion,
        Err(e) => {
            out.failure = Some(CaseFailure::decode(&DecodeError::Backend(e)));
            out.failure.as_mut().expect("just set").stage = "reasoning".into();
            return out;
        }
    };
    out.reasoning_completion = Some(completion.clone());
    let constraints = match parse_constraints(task, &completion) {
        Ok(c) => c,
        Err(e) => {
            out.failure = Some(CaseFailure::reasoning(&e));
            return out;
        }
    };
    out.constraints = Some(constraints.clone());

    let decoded = PrefixPlan::from_constraints(&constraints).and_then(|plan| {
        let planning = build_planning_prompt(
            lib,
            prompt,
            &plan,
            config.exemplar_count,
            config.include_negation,
        )?;
        out.planning_prompt = Some(planning.clone());
        if config.constrained {
            decode_layout(backend, prompt, &planning, &plan, &config.decode)
        } else {
            decode_unconstrained(backend, prompt, &planning, &config.decode, plan.len() * 2 + 4)
        }
    });
    match decoded {
        Ok(report) => {
            out.constraint_violations =
                validate_layout_against_constraints(&report.layout, &constraints);
            out.decode = Some(report);
        }
        Err(e) => out.failure = Some(CaseFailure::decode(&e)),
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub task: Task,
    pub output: PipelineOutput,
    pub counting: Option<CountingStats>,
    pub relations: Vec<RelationOutcome>,
}

impl CaseRecord {
    pub fn failed(&self) -> bool {
        self.output.failure.is_some()
    }

    pub fn layout(&self) -> Option<&Layout> {
        self.output.decode.as_ref().map(|d| &d.layout)
    }

    pub fn row(&self) -> CaseRow {
        let c = self.counting.unwrap_or(CountingStats {
            matched: 0,
            pred_total: 0,
            gt_total: 0,
            exact: false,
        });
        CaseRow {
            case_id: self.case_id.clone(),
            task: self.task,
            matched: c.matched,
            pred_total: c.pred_total,
            gt_total: c.gt_total,
            exact: c.exact,
            spatial_correct: self.relations.iter().filter(|r| r.correct).count(),
            spatial_total: self.relations.len(),
        }
    }
}

/// Runs one case end to end and scores it. Never fails: stage errors are
/// recorded and the case scores as zero-matched / all-incorrect.
pub fn run_case(
    case: &BenchCase,
    config: &RunConfig,
    backend: &dyn TextBackend,
    lib: &PromptLibrary,
) -> CaseRecord {
    let output = run_prompt(&case.prompt, case.task, config, backend, lib);
    let empty = Layout::new(case.prompt.clone(), config.decode.coordinate_range);
    let layout = output.decode.as_ref().map_or(&empty, |d| &d.layout);
    let (counting, relations) = match &case.ground_truth {
        GroundTruth::Counts(gt) => (Some(counting_metrics(&layout_counts(layout), gt)), Vec::new()),
        GroundTruth::Relations(rels) => (None, spatial_accuracy(layout, rels)),
    };
    CaseRecord {
        case_id: case.id.clone(),
        task: case.task,
        output,
        counting,
        relations,
    }
}

/// Writes the per-case artifact directory `<out>/<id>/`.
pub fn write_case_artifacts(record: &CaseRecord, out_dir: &Path) -> Result<(), BenchError> {
    let dir = out_dir.join(&record.case_id);
    let o = &record.output;
    write_file(&dir.join("reasoning_prompt.txt"), &o.reasoning_prompt)?;
    if let Some(c) = &o.reasoning_completion {
        write_file(&dir.join("reasoning_completion.txt"), c)?;
    }
    if let Some(c) = &o.constraints {
        write_file(&dir.join("constraints.json"), to_json(c))?;
    }
    if let Some(p) = &o.planning_prompt {
        write_file(&dir.join("planning_prompt.txt"), p)?;
    }
    if let Some(d) = &o.decode {
        write_file(&dir.join("layout.json"), d.layout.to_json() + "\n")?;
        write_file(&dir.join("decode_report.json"), to_json(d))?;
    }
    write_file(&dir.join("record.json"), to_json(record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: RunConfig,
    pub numerical: Option<CountingSummary>,
    pub spatial: Option<SpatialSummary>,
    pub cases: usize,
    pub failed_cases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutcome {
    pub records: Vec<CaseRecord>,
    pub report: BenchReport,
}

impl BenchOutcome {
    pub fn rows(&self) -> Vec<CaseRow> {
        self.records.iter().map(CaseRecord::row).collect()
    }

    pub fn csv(&self) -> String {
        let mut buf = Vec::new();
        write_csv(&self.rows(), &mut buf).expect("in-memory csv");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn markdown(&self) -> String {
        render_markdown(self.report.numerical.as_ref(), self.report.spatial.as_ref())
    }
}

/// Aggregates records (in any order) into a report.
pub fn summarize(records: &[CaseRecord], config: &RunConfig) -> BenchReport {
    let stats: Vec<CountingStats> = records.iter().filter_map(|r| r.counting).collect();
    let spatial: Vec<(usize, usize)> = records
        .iter()
        .filter(|r| r.task == Task::Spatial)
        .map(|r| (r.relations.iter().filter(|o| o.correct).count(), r.relations.len()))
        .collect();
    let mut failed_cases: Vec<String> = records
        .iter()
        .filter(|r| r.failed())
        .map(|r| r.case_id.clone())
        .collect();
    failed_cases.sort();
    BenchReport {
        config: config.clone(),
        numerical: aggregate(&stats).ok(),
        spatial: aggregate_spatial(&spatial, config.spatial_mode).ok(),
        cases: records.len(),
        failed_cases,
    }
}

/// Runs every case with up to `config.parallelism` workers. Results are in
/// dataset order regardless of width.
pub fn run_bench(
    dataset: &[BenchCase],
    config: &RunConfig,
    backend: &dyn TextBackend,
    lib: &PromptLibrary,
) -> BenchOutcome {
    let records = par::map_ordered(dataset, config.parallelism.max(1), |case| {
        run_case(case, config, backend, lib)
    });
    let report = summarize(&records, config);
    BenchOutcome { records, report }
}

/// Writes `results.csv`, `summary.md`, `report.json` and per-case
/// directories under `out_dir`.
pub fn write_bench_outputs(outcome: &BenchOutcome, out_dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_file(&out_dir.join("results.csv"), outcome.csv())?;
    write_file(&out_dir.join("summary.md"), outcome.markdown())?;
    write_file(&out_dir.join("report.json"), to_json(&outcome.report))?;
    let cases = out_dir.join("cases");
    for r in &outcome.records {
        write_case_artifacts(r, &cases)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateOptions {
    pub denoiser: DenoiserSpec,
    pub threshold: f64,
    pub seed: u64,
    pub tolerance: f64,
    /// Object indices whose round-one target is forced to 0.
    pub sabotage: Vec<usize>,
}

impl From<&RunConfig> for SimulateOptions {
    fn from(c: &RunConfig) -> Self {
        Self {
            denoiser: c.denoiser.clone(),
            threshold: c.threshold,
            seed: c.seed,
            tolerance: c.scorer_tolerance,
            sabotage: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub round1: LatentTrajectory,
    pub scores: Vec<ConsistencyScore>,
    pub partition: SamplePartition,
    pub mask: FidelityMask,
    pub final_grid: LatentGrid,
    pub round2: Option<LatentTrajectory>,
}

impl Simulation {
    pub fn round2_skipped(&self) -> bool {
        self.round2.is_none()
    }
}

/// Round one (optionally sabotaged), scoring, partition and round two on the
/// toy denoiser.
pub fn simulate(layout: &Layout, opts: &SimulateOptions) -> Result<Simulation, BenchError> {
    let spec = &opts.denoiser;
    spec.validate()?;
    let sabotaged: BTreeSet<usize> = opts.sabotage.iter().copied().collect();
    let target = render_target_with(layout, spec.dims, |i, name| {
        if sabotaged.contains(&i) {
            0.0
        } else {
            category_target(name)
        }
    });
    let round1 = run_denoise_to(spec, &target, layout, opts.seed)?;
    let scorer = ToyScorer {
        tolerance: opts.tolerance,
    };
    let scores = score_objects(round1.final_grid(), layout, &scorer)?;
    let partition = partition_samples(&scores, opts.threshold)?;
    let outcome = run_refinement(spec, &round1, &partition, layout, opts.seed)?;
    Ok(Simulation {
        round1,
        scores,
        partition,
        mask: outcome.mask,
        final_grid: outcome.final_grid,
        round2: outcome.round2,
    })
}

/// On-disk trajectory: a header plus one flat row-major grid per timestep,
/// ordered from `t = steps` down to `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDump {
    pub steps: usize,
    pub dims: GridDims,
    pub seed: u64,
    pub layout_hash: String,
    pub grids: Vec<Vec<f64>>,
}

impl From<&LatentTrajectory> for TrajectoryDump {
    fn from(t: &LatentTrajectory) -> Self {
        Self {
            steps: t.steps,
            dims: t.initial().dims(),
            seed: t.seed,
            layout_hash: t.layout_hash.clone(),
            grids: t.grids.iter().map(|g| g.values().to_vec()).collect(),
        }
    }
}

impl TrajectoryDump {
    pub fn into_trajectory(self) -> Result<LatentTrajectory, RefineError> {
        let grids = self
            .grids
            .into_iter()
            .map(|v| LatentGrid::from_values(self.dims, v))
            .collect::<Result<Vec<_>, _>>()?;
        if grids.len() != self.steps + 1 {
            return Err(RefineError::InvalidSpec(format!(
                "{} grids for {} steps",
                grids.len(),
                self.steps
            )));
        }
        Ok(LatentTrajectory {
            seed: self.seed,
            steps: self.steps,
            layout_hash: self.layout_hash,
            grids,
        })
    }
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    layout_hash: String,
    seed: u64,
    threshold: f64,
    easy: &'a BTreeSet<usize>,
    hard: &'a BTreeSet<usize>,
    sabotage: &'a [usize],
    round2_skipped: bool,
}

/// Writes trajectory, scores, partition, mask and final grid dumps.
pub fn write_simulation(
    sim: &Simulation,
    layout: &Layout,
    opts: &SimulateOptions,
    out_dir: &Path,
) -> Result<(), BenchError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_file(
        &out_dir.join("round1_trajectory.json"),
        to_json(&TrajectoryDump::from(&sim.round1)),
    )?;
    let round2_path = out_dir.join("round2_trajectory.json");
    match &sim.round2 {
        Some(r2) => write_file(&round2_path, to_json(&TrajectoryDump::from(r2)))?,
        None if round2_path.exists() => fs::remove_file(&round2_path).map_err(io_err(&round2_path))?,
        None => {}
    }
    write_file(&out_dir.join("scores.json"), to_json(&sim.scores))?;
    write_file(&out_dir.join("partition.json"), to_json(&sim.partition))?;
    write_file(&out_dir.join("mask.json"), to_json(&sim.mask))?;
    write_file(&out_dir.join("final_grid.json"), to_json(&sim.final_grid))?;
    write_file(
        &out_dir.join("summary.json"),
        to_json(&SimulationSummary {
            layout_hash: layout_hash(layout),
            seed: opts.seed,
            threshold: opts.threshold,
            easy: &sim.partition.easy,
            hard: &sim.partition.hard,
            sabotage: &opts.sabotage,
            round2_skipped: sim.round2_skipped(),
        }),
    )
}
