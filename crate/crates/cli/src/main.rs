use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use layoutkit::backend::{RemoteConfig, TextBackend};
use layoutkit::bench::{
    load_dataset, reasoning_request, run_bench, run_prompt, simulate, write_bench_outputs, write_simulation,
    BackendConfig, RunConfig, SimulateOptions,
};
use layoutkit::decoder::{
    build_planning_prompt, decode_layout, decode_unconstrained, validate_layout_against_constraints,
    PrefixPlan,
};
use layoutkit::metrics::{canonical_counts, counting_metrics, layout_counts, spatial_accuracy, GroundTruthRelation};
use layoutkit::reasoning::{parse_constraints, Task};
use layoutkit::synthetic::SyntheticPlanner;
use layoutkit::{Layout, Relation};

#[derive(Parser)]
#[command(name = "layoutkit", version, about = "Constraint reasoning, forced-prefix layout planning and benchmark tooling")]
struct Cli {
    /// Run config (TOML, or JSON by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Backend override: `replay:<dir>`, `record:<dir>`, `remote:<url>` or `synthetic`.
    #[arg(long, global = true)]
    backend: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract numerical or spatial constraints from a caption.
    Reason {
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value = "numerical")]
        task: Task,
    },
    /// Decode a layout for given constraints, e.g. "2 apple, 1 cup" or "dog, left; cat, right;".
    Plan {
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        constraints: String,
        #[arg(long, default_value = "numerical")]
        task: Task,
    },
    /// Reason, plan and validate one caption.
    Pipeline {
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value = "numerical")]
        task: Task,
    },
    /// Score a layout JSON against ground truth.
    EvalLayout {
        #[arg(long)]
        layout: PathBuf,
        /// Ground-truth counts as JSON, e.g. '{"apple":2}'.
        #[arg(long, conflicts_with = "relation")]
        counts: Option<String>,
        /// Ground-truth relation `subject,relation,object`; repeatable.
        #[arg(long)]
        relation: Vec<String>,
    },
    /// Run the two-round toy denoiser on a layout and dump every stage.
    Simulate {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        threshold: Option<f64>,
        /// Object index whose first-round target is zeroed; repeatable.
        #[arg(long)]
        sabotage: Vec<usize>,
    },
    /// Run a JSONL dataset and write results.csv, summary.md and report.json.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        parallelism: Option<usize>,
    },
}

enum Status {
    Ok,
    CaseFailures,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CaseFailures) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn make_backend(cli: &Cli, config: &mut RunConfig) -> Result<Box<dyn TextBackend>> {
    let Some(spec) = cli.backend.as_deref() else {
        return Ok(config.backend.build());
    };
    let remote = match &config.backend {
        BackendConfig::Remote(r) | BackendConfig::Record { remote: r, .. } => r.clone(),
        BackendConfig::Replay { .. } => RemoteConfig::default(),
    };
    config.backend = match spec.split_once(':') {
        _ if spec == "synthetic" => return Ok(Box::new(SyntheticPlanner::new())),
        Some(("replay", dir)) => BackendConfig::Replay { dir: dir.into() },
        Some(("record", dir)) => BackendConfig::Record {
            dir: dir.into(),
            remote,
        },
        Some(("remote", url)) => BackendConfig::Remote(RemoteConfig {
            endpoint: url.to_string(),
            ..remote
        }),
        _ => bail!("unknown backend `{spec}`; use replay:<dir>, record:<dir>, remote:<url> or synthetic"),
    };
    Ok(config.backend.build())
}

fn write_out(dir: Option<&Path>, name: &str, contents: &str) -> Result<()> {
    if let Some(dir) = dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn read_layout(path: &Path) -> Result<Layout> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Layout::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run(cli: Cli) -> Result<Status> {
    let mut config = load_config(&cli)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Reason { prompt, task } => {
            let backend = make_backend(&cli, &mut config)?;
            let lib = config.prompt_library()?;
            let result = run_reason(prompt, *task, &config, backend.as_ref(), &lib)?;
            println!("{result}");
            write_out(out, "constraints.json", &(result + "\n"))?;
            Ok(Status::Ok)
        }
        Command::Plan {
            prompt,
            constraints,
            task,
        } => {
            let backend = make_backend(&cli, &mut config)?;
            let lib = config.prompt_library()?;
            let set = parse_constraints(*task, constraints)?;
            let plan = PrefixPlan::from_constraints(&set)?;
            let planning = build_planning_prompt(&lib, prompt, &plan, config.exemplar_count, config.include_negation)?;
            let report = if config.constrained {
                decode_layout(backend.as_ref(), prompt, &planning, &plan, &config.decode)?
            } else {
                decode_unconstrained(backend.as_ref(), prompt, &planning, &config.decode, plan.len() * 2 + 4)?
            };
            let violations = validate_layout_against_constraints(&report.layout, &set);
            println!("{}", report.layout.to_json());
            for v in &violations {
                eprintln!("violation: {v}");
            }
            write_out(out, "planning_prompt.txt", &planning)?;
            write_out(out, "layout.json", &(report.layout.to_json() + "\n"))?;
            write_out(out, "decode_report.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
            Ok(Status::Ok)
        }
        Command::Pipeline { prompt, task } => {
            let backend = make_backend(&cli, &mut config)?;
            let lib = config.prompt_library()?;
            let output = run_prompt(prompt, *task, &config, backend.as_ref(), &lib);
            let json = serde_json::to_string_pretty(&output)?;
            write_out(out, "pipeline.json", &(json.clone() + "\n"))?;
            if let Some(d) = &output.decode {
                println!("{}", d.layout.to_json());
                write_out(out, "layout.json", &(d.layout.to_json() + "\n"))?;
            }
            for v in &output.constraint_violations {
                eprintln!("violation: {v}");
            }
            match &output.failure {
                Some(f) => {
                    eprintln!("{} failed ({}): {}", f.stage, f.kind, f.message);
                    Ok(Status::CaseFailures)
                }
                None => Ok(Status::Ok),
            }
        }
        Command::EvalLayout {
            layout,
            counts,
            relation,
        } => {
            let layout = read_layout(layout)?;
            let json = match counts {
                Some(text) => {
                    let gt: std::collections::BTreeMap<String, u32> =
                        serde_json::from_str(text).context("parsing --counts")?;
                    let gt = canonical_counts(gt.iter().map(|(k, v)| (k.as_str(), *v)));
                    let s = counting_metrics(&layout_counts(&layout), &gt);
                    serde_json::json!({
                        "matched": s.matched,
                        "pred_total": s.pred_total,
                        "gt_total": s.gt_total,
                        "precision": s.precision(),
                        "recall": s.recall(),
                        "f1": s.f1(),
                        "exact": s.exact,
                    })
                }
                None if relation.is_empty() => bail!("give --counts or at least one --relation"),
                None => {
                    let rels = relation
                        .iter()
                        .map(|r| parse_relation_arg(r))
                        .collect::<Result<Vec<_>>>()?;
                    let outcomes = spatial_accuracy(&layout, &rels);
                    let correct = outcomes.iter().filter(|o| o.correct).count();
                    serde_json::json!({
                        "correct": correct,
                        "total": outcomes.len(),
                        "relations": outcomes,
                    })
                }
            };
            let text = serde_json::to_string_pretty(&json)?;
            println!("{text}");
            write_out(out, "eval.json", &(text + "\n"))?;
            Ok(Status::Ok)
        }
        Command::Simulate {
            layout,
            threshold,
            sabotage,
        } => {
            let layout = read_layout(layout)?;
            let mut opts = SimulateOptions::from(&config);
            if let Some(t) = threshold {
                opts.threshold = *t;
            }
            opts.sabotage = sabotage.clone();
            if let Some(&bad) = opts.sabotage.iter().find(|&&i| i >= layout.len()) {
                bail!("--sabotage {bad} is out of range for {} objects", layout.len());
            }
            let sim = simulate(&layout, &opts)?;
            let dir = out.map(Path::to_path_buf).unwrap_or_else(|| config.output_dir.clone());
            write_simulation(&sim, &layout, &opts, &dir)?;
            println!(
                "easy {:?} hard {:?}; round two {}; dumps in {}",
                sim.partition.easy,
                sim.partition.hard,
                if sim.round2_skipped() { "skipped" } else { "ran" },
                dir.display()
            );
            Ok(Status::Ok)
        }
        Command::Bench {
            dataset,
            parallelism,
        } => {
            if let Some(p) = parallelism {
                config.parallelism = *p;
            }
            let backend = make_backend(&cli, &mut config)?;
            let lib = config.prompt_library()?;
            let cases = load_dataset(dataset)?;
            let outcome = run_bench(&cases, &config, backend.as_ref(), &lib);
            write_bench_outputs(&outcome, &config.output_dir)?;
            print!("{}", outcome.markdown());
            if outcome.report.failed_cases.is_empty() {
                Ok(Status::Ok)
            } else {
                eprintln!(
                    "{} case(s) failed: {}",
                    outcome.report.failed_cases.len(),
                    outcome.report.failed_cases.join(", ")
                );
                Ok(Status::CaseFailures)
            }
        }
    }
}

fn run_reason(
    prompt: &str,
    task: Task,
    config: &RunConfig,
    backend: &dyn TextBackend,
    lib: &layoutkit::prompts::PromptLibrary,
) -> Result<String> {
    use layoutkit::reasoning::{build_reasoning_prompt, ReasoningRequest};
    let mut req = ReasoningRequest::new(prompt, task);
    req.exemplar_count = config.exemplar_count;
    let text = build_reasoning_prompt(lib, &req)?;
    let completion = backend.complete(&reasoning_request(&text, config))?.completion;
    let set = parse_constraints(task, &completion)?;
    Ok(serde_json::to_string_pretty(&set)?)
}

fn parse_relation_arg(arg: &str) -> Result<GroundTruthRelation> {
    let parts: Vec<&str> = arg.split(',').map(str::trim).collect();
    let [subject, relation, object] = parts[..] else {
        bail!("relation `{arg}` must be `subject,relation,object`");
    };
    let relation: Relation = relation.parse()?;
    Ok(GroundTruthRelation::new(subject, relation, object))
}
