use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use lookahead_intent::backend::{BackendConfig, BackendKind};
use lookahead_intent::conflict::{ConflictMode, FinalRule, DEFAULT_THRESHOLD};
use lookahead_intent::corpus::{read_splits, SplitSizes};
use lookahead_intent::harness::config::{
    ConflictsConfig, CorpusConfig, CorpusFormat, EvalConfig, SyntheticConfig, WeakConfig,
};
use lookahead_intent::harness::{self, PipelineConfig, RunDir};
use lookahead_intent::lookahead::parse_scenarios;
use lookahead_intent::records::{derive_seed, write_json, write_jsonl};
use lookahead_intent::regime::{RegimeName, RegimeSpec};
use lookahead_intent::tasks::{MixtureSpec, TaskKind, DEFAULT_REPETITION_THRESHOLD};

#[derive(Parser)]
#[command(name = "lookahead", version, about = "Intent prediction with look-ahead utterance generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a corpus, extract intent windows and write the splits.
    Prep(PrepArgs),
    /// Write text-to-text task examples for a splits directory.
    BuildTasks(BuildTasksArgs),
    /// Add weakly labelled windows by classifier agreement.
    Weaklabel(WeaklabelArgs),
    /// Train one regime into a run directory.
    Train(TrainArgs),
    /// Evaluate the trained regimes of a run on the test split.
    Eval(EvalArgs),
    /// Resolve conflicting intents counterfactually.
    Conflicts(ConflictArgs),
    /// Render the tables of a run.
    Report(ReportArgs),
    /// Run the whole pipeline from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct PrepArgs {
    /// multiwoz, sgd, canonical or synthetic
    #[arg(long)]
    format: String,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Split sizes as U,S,DEV,TEST
    #[arg(long)]
    sizes: SplitSizes,
    #[arg(long, env = "LOOKAHEAD_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    max_window: Option<usize>,
    /// Synthetic corpus size as INTENTS,WINDOWS
    #[arg(long, default_value = "115,2063")]
    synthetic: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildTasksArgs {
    #[arg(long)]
    splits: PathBuf,
    #[arg(long, default_value = "intent,gen3,reorder")]
    tasks: String,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    ratio: f64,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_REPETITION_THRESHOLD)]
    repetition_threshold: f64,
    #[arg(long, env = "LOOKAHEAD_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WeaklabelArgs {
    #[arg(long)]
    splits: PathBuf,
    /// Two classifier specs, e.g. `linear:seed=1,nb`
    #[arg(long, default_value = "linear;nb", value_delimiter = ';')]
    backends: Vec<String>,
    #[arg(long, default_value_t = 1)]
    utterances: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    regime: RegimeName,
    #[arg(long)]
    splits: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    ratio: f64,
    /// Pipeline config supplying `[train.backend]`, `backend` and `[tasks]`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long, env = "LOOKAHEAD_ORACLE_SCRIPT")]
    script: Option<PathBuf>,
    #[arg(long, env = "LOOKAHEAD_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    splits: Option<PathBuf>,
    #[arg(long, default_value = "u1,u2,u3,gen3,gen5x,rnd3")]
    scenarios: String,
    #[arg(long, env = "LOOKAHEAD_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    samples: usize,
    /// Copy `reports/results.jsonl` here as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConflictArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    splits: Option<PathBuf>,
    #[arg(long, default_value = "conflict-oracle")]
    mode: String,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    classifier: Option<RegimeName>,
    /// Average candidate scores over all counterfactual conversations.
    #[arg(long)]
    ensemble: bool,
    #[arg(long, env = "LOOKAHEAD_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
}

fn parse_backend_kind(s: &str) -> Result<BackendKind> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .with_context(|| format!("unknown backend `{s}` (expected oracle, tiny or full)"))
}

fn parse_format(s: &str) -> Result<CorpusFormat> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .with_context(|| format!("unknown corpus format `{s}`"))
}

fn parse_tasks(list: &str) -> Result<Vec<TaskKind>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<TaskKind>().map_err(anyhow::Error::from))
        .collect()
}

fn splits_dir(run: &RunDir, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| run.splits())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prep(a) => {
            let (intents, windows) = a
                .synthetic
                .split_once(',')
                .context("--synthetic expects INTENTS,WINDOWS")?;
            let corpus = CorpusConfig {
                format: parse_format(&a.format)?,
                path: a.input,
                name: a.name,
                split_sizes: a.sizes,
                synthetic: SyntheticConfig {
                    intents: intents.trim().parse()?,
                    windows: windows.trim().parse()?,
                },
                max_window: a.max_window,
            };
            let report = harness::prep_corpus(&corpus, a.seed, &a.out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::BuildTasks(a) => {
            let tasks = parse_tasks(&a.tasks)?;
            let examples = harness::build_task_file(
                &a.splits,
                &tasks,
                a.k,
                a.ratio,
                a.budget,
                a.repetition_threshold,
                a.seed,
                &a.out,
            )?;
            println!("wrote {} examples to {}", examples.len(), a.out.display());
        }
        Command::Weaklabel(a) => {
            let weak = WeakConfig {
                enabled: true,
                backends: a.backends,
                utterances: a.utterances,
            };
            let report = harness::weaklabel_splits(&a.splits, &weak)?;
            println!(
                "agreed on {} of {} unlabelled windows",
                report.agreed, report.total_unlabeled
            );
        }
        Command::Train(a) => {
            let cfg = a.config.as_deref().map(PipelineConfig::load).transpose()?;
            let backend_config = cfg.as_ref().map(|c| c.train.backend.clone()).unwrap_or_else(BackendConfig::default);
            let kind = match (&a.backend, &cfg) {
                (Some(b), _) => parse_backend_kind(b)?,
                (None, Some(c)) => c.backend,
                (None, None) => BackendKind::Tiny,
            };
            let script = a.script.or_else(|| cfg.as_ref().and_then(|c| c.oracle_script.clone()));
            let (tasks, repetition, budget) = match &cfg {
                Some(c) => (c.tasks.resolved(c.corpus.format), c.tasks.repetition_threshold, c.tasks.budget),
                None => (vec![TaskKind::Gen3, TaskKind::Reorder], DEFAULT_REPETITION_THRESHOLD, None),
            };
            let (splits, _) = read_splits(&a.splits)?;
            let aux = harness::auxiliary_examples(&a.splits, &tasks, repetition)?;
            let mut mixture = MixtureSpec::new(a.ratio, tasks);
            mixture.budget = budget;
            let seed = derive_seed(a.seed, "regime");
            let spec = RegimeSpec::new(a.regime, mixture, backend_config, seed);
            let run = RunDir::new(&a.out);
            let manifest = harness::train_regime(&run, &spec, &splits, &aux, kind, script.as_deref())?;
            for stage in &manifest.stages {
                println!("{} stage `{}`: {} examples", a.regime, stage.name, stage.examples);
            }
        }
        Command::Eval(a) => {
            let run = RunDir::new(&a.run);
            let (splits, _) = read_splits(&splits_dir(&run, a.splits))?;
            let eval = EvalConfig {
                scenarios: parse_scenarios(&a.scenarios)?,
                num_samples: a.samples,
                ..EvalConfig::default()
            };
            let records = harness::eval_stage(&run, &splits, &eval, &BackendConfig::default().sampling, a.seed)?;
            for r in &records {
                let generator = r.generator.map(|g| format!(" [{}]", g.column())).unwrap_or_default();
                println!(
                    "{} {}{}: {}/{} = {:.4}",
                    r.classifier,
                    r.result.scenario.label(),
                    generator,
                    r.result.t,
                    r.result.d,
                    r.result.accuracy
                );
            }
            if let Some(out) = a.out {
                write_jsonl(&out, &records)?;
            }
        }
        Command::Conflicts(a) => {
            let run = RunDir::new(&a.run);
            let (splits, _) = read_splits(&splits_dir(&run, a.splits))?;
            let mode: ConflictMode = a.mode.parse()?;
            let conflicts = ConflictsConfig {
                enabled: true,
                classifier: a.classifier,
                generator: None,
                modes: vec![mode],
                threshold: a.threshold,
                rule: if a.ensemble { FinalRule::EnsembleAverage } else { FinalRule::MaxOwnScore },
            };
            let reports = harness::conflicts_stage(
                &run,
                &splits,
                &conflicts,
                &EvalConfig::default(),
                &BackendConfig::default().sampling,
                a.seed,
            )?;
            print!("{}", harness::report::render_conflict_table(&reports));
            if let Some(out) = a.out {
                write_json(&out, &reports)?;
            }
        }
        Command::Report(a) => {
            let cfg = PipelineConfig::load(&a.config)?;
            let run = RunDir::new(&cfg.run_dir);
            let (splits, _) = read_splits(&run.splits())?;
            print!("{}", harness::report_stage(&run, &cfg, &splits.name)?);
        }
        Command::Run(a) => {
            let cfg = PipelineConfig::load(&a.config)?;
            let run = harness::run_pipeline(&cfg)?;
            let summary = std::fs::read_to_string(run.reports().join("summary.txt"))
                .with_context(|| format!("reading the summary of {}", run.root().display()))?;
            print!("{summary}");
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
