use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ConflictsConfig, CorpusConfig, CorpusFormat, EvalConfig, GeneratorRef, PipelineConfig, WeakConfig};
use super::report::{render_conflict_table, render_lookahead_table, render_main_table, render_regime_table, EvalRecord};
use super::{HarnessError, RunDir, RunManifest};
use crate::backend::{load_backend, new_backend, save_backend, BackendKind, SamplingConfig, Seq2Seq};
use crate::conflict::{run_conflicts, ConflictReport, Resolver, ResponseIndex, WindowScores};
use crate::corpus::{
    extract_intent_windows, ingest, make_splits, read_splits, synth_edu, truncate_windows, write_splits, CorpusSplits,
    Dialogue, Format, SplitCounts, SplitSizes, SplitsMeta, SynthSpec,
};
use crate::lookahead::{apply_baseline, Lookahead, ScenarioKind, ScenarioSpec};
use crate::records::{derive_seed, read_jsonl, write_json, write_jsonl, RecordError};
use crate::regime::{label_space, manifest_for, plan_regime, run_regime, RegimeManifest, RegimeName, RegimeSpec};
use crate::tasks::{
    build_escalation_examples, build_intent_examples, build_mixture, build_repetition_examples, prompt, MixtureSpec,
    TaskExample, TaskKind,
};
use crate::weak::{parse_backend_spec, weak_label, WeakLabelReport, WeakOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Prep,
    Weaklabel,
    BuildTasks,
    Train,
    Eval,
    Conflicts,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Prep,
        Stage::Weaklabel,
        Stage::BuildTasks,
        Stage::Train,
        Stage::Eval,
        Stage::Conflicts,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prep => "prep",
            Stage::Weaklabel => "weaklabel",
            Stage::BuildTasks => "build-tasks",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Conflicts => "conflicts",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepReport {
    pub name: String,
    pub dialogues: usize,
    pub pool_windows: usize,
    pub label_count: usize,
    pub pool_intents: BTreeMap<String, usize>,
    pub requested: SplitSizes,
    pub counts: SplitCounts,
    pub fingerprint: String,
}

fn format_name(f: CorpusFormat) -> &'static str {
    match f {
        CorpusFormat::Multiwoz => "multiwoz",
        CorpusFormat::Sgd => "sgd",
        CorpusFormat::Canonical => "canonical",
        CorpusFormat::Synthetic => "edu",
    }
}

fn load_dialogues(corpus: &CorpusConfig, seed: u64) -> Result<Vec<Dialogue>, HarnessError> {
    let format = match corpus.format {
        CorpusFormat::Synthetic => {
            let spec = SynthSpec::new(corpus.synthetic.intents, corpus.synthetic.windows, derive_seed(seed, "synth"));
            return Ok(synth_edu(&spec));
        }
        CorpusFormat::Multiwoz => Format::Multiwoz,
        CorpusFormat::Sgd => Format::Sgd,
        CorpusFormat::Canonical => Format::Canonical,
    };
    let path = corpus
        .path
        .as_deref()
        .ok_or_else(|| HarnessError::Config("corpus.path is not set".into()))?;
    Ok(ingest(path, format)?)
}

/// Ingests (or synthesises) the corpus, extracts windows and writes the
/// splits to `out`.
pub fn prep_corpus(corpus: &CorpusConfig, seed: u64, out: &Path) -> Result<PrepReport, HarnessError> {
    let dialogues = load_dialogues(corpus, seed)?;
    let mut windows = extract_intent_windows(&dialogues);
    if let Some(max) = corpus.max_window {
        truncate_windows(&mut windows, max);
    }
    let name = corpus.name.clone().unwrap_or_else(|| format_name(corpus.format).to_string());
    let splits = make_splits(&name, &windows, corpus.split_sizes, derive_seed(seed, "splits"))?;
    let meta = SplitsMeta::new(&splits, seed, &windows);
    write_splits(out, &splits, &meta, Some(&dialogues))?;
    let report = PrepReport {
        name,
        dialogues: dialogues.len(),
        pool_windows: windows.len(),
        label_count: meta.pool_intents.len(),
        pool_intents: meta.pool_intents.clone(),
        requested: corpus.split_sizes,
        counts: meta.counts,
        fingerprint: meta.fingerprint,
    };
    write_json(&out.join("prep.json"), &report)?;
    Ok(report)
}

/// Adds weak labels to the splits in `dir`, replacing any earlier weak split.
pub fn weaklabel_splits(dir: &Path, weak: &WeakConfig) -> Result<WeakLabelReport, HarnessError> {
    let (mut splits, mut meta) = read_splits(dir)?;
    let mut backends = weak
        .backends
        .iter()
        .map(|s| parse_backend_spec(s))
        .collect::<Result<Vec<_>, _>>()?;
    let outcome = weak_label(
        &splits.unsupervised,
        &splits.supervised,
        &splits.dev,
        &mut backends,
        WeakOptions {
            utterances: weak.utterances,
        },
    )?;
    splits.weak = outcome.windows;
    meta.counts = splits.counts();
    meta.fingerprint = splits.fingerprint();
    write_splits(dir, &splits, &meta, None)?;
    write_json(&dir.join("weak.report.json"), &outcome.report)?;
    Ok(outcome.report)
}

fn read_dialogues(dir: &Path) -> Result<Vec<Dialogue>, HarnessError> {
    let path = dir.join("dialogues.jsonl");
    if path.exists() {
        Ok(read_jsonl(&path)?)
    } else {
        Ok(Vec::new())
    }
}

/// Escalation and repetition examples over the unsupervised dialogues.
/// Escalation and repetition examples built from the stored dialogues.
pub fn auxiliary_examples(dir: &Path, tasks: &[TaskKind], repetition_threshold: f64) -> Result<Vec<TaskExample>, HarnessError> {
    if !tasks.iter().any(|t| matches!(t, TaskKind::Escalation | TaskKind::Repetition)) {
        return Ok(Vec::new());
    }
    let dialogues = read_dialogues(dir)?;
    let mut out = Vec::new();
    if tasks.contains(&TaskKind::Escalation) {
        out.extend(build_escalation_examples(&dialogues)?);
    }
    if tasks.contains(&TaskKind::Repetition) {
        out.extend(build_repetition_examples(&dialogues, repetition_threshold)?);
    }
    Ok(out)
}

/// Writes one example file: intent examples (when `intent` is listed) plus
/// the mixture of the other tasks. Returns the examples written.
#[allow(clippy::too_many_arguments)]
pub fn build_task_file(
    splits_dir: &Path,
    tasks: &[TaskKind],
    k: usize,
    ratio: f64,
    budget: Option<usize>,
    repetition_threshold: f64,
    seed: u64,
    out: &Path,
) -> Result<Vec<TaskExample>, HarnessError> {
    let (splits, _) = read_splits(splits_dir)?;
    let mut examples = Vec::new();
    if tasks.contains(&TaskKind::Intent) {
        let pool: Vec<_> = splits.supervised.iter().chain(&splits.weak).cloned().collect();
        examples.extend(build_intent_examples(&pool, k).0);
    }
    let others: Vec<TaskKind> = tasks.iter().copied().filter(|t| *t != TaskKind::Intent).collect();
    if !others.is_empty() {
        let aux = auxiliary_examples(splits_dir, &others, repetition_threshold)?;
        let mut spec = MixtureSpec::new(ratio, others);
        spec.budget = budget;
        examples.extend(build_mixture(&spec, &splits.unsupervised, &aux, derive_seed(seed, "mixture"))?.examples);
    }
    write_jsonl(out, &examples)?;
    Ok(examples)
}

fn regime_spec(cfg: &PipelineConfig, regime: RegimeName) -> RegimeSpec {
    let mut mixture = MixtureSpec::new(cfg.tasks.reorder_ratio, cfg.tasks.resolved(cfg.corpus.format));
    mixture.budget = cfg.tasks.budget;
    RegimeSpec::new(regime, mixture, cfg.train.backend.clone(), derive_seed(cfg.seed, "regime"))
}

/// Trains one regime and stores its checkpoint and manifest in `run`.
pub fn train_regime(
    run: &RunDir,
    spec: &RegimeSpec,
    splits: &CorpusSplits,
    auxiliary: &[TaskExample],
    kind: BackendKind,
    script: Option<&Path>,
) -> Result<RegimeManifest, HarnessError> {
    let mut backend = new_backend(kind, &spec.config, script)?;
    let (manifest, _) = run_regime(spec, splits, auxiliary, backend.as_mut())?;
    let dir = run.checkpoint(spec.name);
    fs::create_dir_all(&dir).map_err(|e| RecordError::io(&dir, e))?;
    save_backend(backend.as_ref(), kind, &dir)?;
    write_json(&dir.join("regime.json"), &manifest)?;
    Ok(manifest)
}

fn trained_regimes(run: &RunDir) -> Vec<RegimeName> {
    RegimeName::ALL_REGIMES
        .into_iter()
        .filter(|r| run.checkpoint(*r).join("backend.json").exists())
        .collect()
}

fn generator_available(g: GeneratorRef, trained: &[RegimeName]) -> bool {
    match g {
        GeneratorRef::SelfModel => true,
        GeneratorRef::Regime(r) => trained.contains(&r),
    }
}

/// Configured look-ahead generators that exist in this run, or `self`.
fn generator_list(eval: &EvalConfig, trained: &[RegimeName]) -> Vec<GeneratorRef> {
    let list: Vec<GeneratorRef> = eval
        .generators
        .iter()
        .copied()
        .filter(|g| generator_available(*g, trained))
        .collect();
    if list.is_empty() {
        vec![GeneratorRef::SelfModel]
    } else {
        list
    }
}

fn main_generator(eval: &EvalConfig, trained: &[RegimeName]) -> GeneratorRef {
    eval.main_generator
        .filter(|g| generator_available(*g, trained))
        .unwrap_or_else(|| *generator_list(eval, trained).last().expect("non-empty"))
}

struct Models {
    loaded: BTreeMap<RegimeName, Box<dyn Seq2Seq>>,
}

impl Models {
    fn load(run: &RunDir, regimes: &[RegimeName]) -> Result<Self, HarnessError> {
        let mut loaded = BTreeMap::new();
        for &r in regimes {
            let dir = run.checkpoint(r);
            if !dir.join("backend.json").exists() {
                return Err(HarnessError::MissingRegime(r));
            }
            loaded.insert(r, load_backend(&dir)?);
        }
        Ok(Models { loaded })
    }

    fn get(&self, r: RegimeName) -> Result<&dyn Seq2Seq, HarnessError> {
        self.loaded.get(&r).map(|b| b.as_ref()).ok_or(HarnessError::MissingRegime(r))
    }
}

fn prediction_file(run: &RunDir, classifier: RegimeName, scenario: ScenarioKind, generator: Option<GeneratorRef>) -> std::path::PathBuf {
    let name = match generator {
        Some(g) => format!("{}.{}.jsonl", scenario.key(), g.column()),
        None => format!("{}.jsonl", scenario.key()),
    };
    run.predictions().join(classifier.as_str()).join(name)
}

/// Evaluates every trained regime on the test split. Writes per-window
/// predictions and `reports/results.jsonl`.
pub fn eval_stage(
    run: &RunDir,
    splits: &CorpusSplits,
    eval: &EvalConfig,
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<Vec<EvalRecord>, HarnessError> {
    let trained = trained_regimes(run);
    if trained.is_empty() {
        return Err(HarnessError::Config("no trained regimes in the run directory".into()));
    }
    let labels = label_space(splits)?;
    let models = Models::load(run, &trained)?;
    let gens = generator_list(eval, &trained);
    let main = main_generator(eval, &trained);
    let eval_seed = derive_seed(seed, "eval");
    let spec = |kind: ScenarioKind| ScenarioSpec {
        kind,
        num_samples: if kind == ScenarioKind::Gen5x { eval.num_samples } else { 1 },
        seed: eval_seed,
        corpus_sampler: eval.corpus_sampler,
    };
    let pool: Vec<String> = splits
        .unsupervised
        .iter()
        .filter(|w| w.len() >= 3)
        .map(|w| w.utterances[2].text.clone())
        .collect();

    let mut records = Vec::new();
    for &classifier in &trained {
        let clf = models.get(classifier)?;
        let scenarios: Vec<ScenarioKind> = eval
            .scenarios
            .iter()
            .copied()
            .filter(|s| classifier != RegimeName::Suc || *s == ScenarioKind::U1)
            .collect();
        let mut jobs: Vec<(ScenarioKind, Option<GeneratorRef>)> = Vec::new();
        for &s in &scenarios {
            match s {
                ScenarioKind::U1 | ScenarioKind::U2 | ScenarioKind::U3 => jobs.push((s, None)),
                ScenarioKind::Gen3 | ScenarioKind::Gen5x => {
                    let mut list = gens.clone();
                    if !list.contains(&main) {
                        list.push(main);
                    }
                    jobs.extend(list.into_iter().map(|g| (s, Some(g))));
                }
                ScenarioKind::Rnd3 => jobs.push((s, Some(main))),
            }
        }
        for (scenario, generator) in jobs {
            let gen_model = match generator {
                Some(g) => Some(models.get(g.resolve(classifier))?),
                None => None,
            };
            let engine = Lookahead::new(clf, gen_model, &labels, sampling.clone())
                .with_free_decoding(eval.free_decoding)
                .with_sampler_pool(pool.clone());
            let mut evaluation = engine.evaluate(&splits.test, &[spec(scenario)])?;
            let preds = evaluation.predictions.remove(&scenario).unwrap_or_default();
            write_jsonl(&prediction_file(run, classifier, scenario, generator), &preds)?;
            records.push(EvalRecord {
                classifier,
                generator,
                result: evaluation.results.remove(0),
            });
        }
    }
    if let Some(base) = eval.baseline {
        let baseline: Vec<_> = records
            .iter()
            .filter(|r| r.classifier == base && r.generator.is_none())
            .map(|r| r.result.clone())
            .collect();
        if !baseline.is_empty() {
            let mut results: Vec<_> = records.iter().map(|r| r.result.clone()).collect();
            apply_baseline(&mut results, &baseline);
            for (r, updated) in records.iter_mut().zip(results) {
                r.result = updated;
            }
        }
    }
    write_jsonl(&run.reports().join("results.jsonl"), &records)?;
    Ok(records)
}

/// Runs conflict resolution for every configured mode.
pub fn conflicts_stage(
    run: &RunDir,
    splits: &CorpusSplits,
    conflicts: &ConflictsConfig,
    eval: &EvalConfig,
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<Vec<ConflictReport>, HarnessError> {
    let trained = trained_regimes(run);
    let classifier = match conflicts.classifier {
        Some(c) => c,
        None if trained.contains(&RegimeName::AllSdc) => RegimeName::AllSdc,
        None => *trained
            .last()
            .ok_or_else(|| HarnessError::Config("no trained regimes in the run directory".into()))?,
    };
    let generator = conflicts
        .generator
        .unwrap_or_else(|| main_generator(eval, &trained))
        .resolve(classifier);
    let models = Models::load(run, &[classifier, generator])?;
    let labels = label_space(splits)?;
    let clf = models.get(classifier)?;
    let priors = splits
        .test
        .iter()
        .map(|w| {
            Ok(WindowScores {
                window_id: w.id(),
                gold: w.intent.clone(),
                scores: clf.score_labels(&prompt(TaskKind::Intent, &w.utterances[..1]), &labels)?,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    write_jsonl(&run.predictions().join("conflicts").join("priors.jsonl"), &priors)?;
    let resolver = Resolver {
        generator: models.get(generator)?,
        classifier: clf,
        labels: &labels,
        responses: ResponseIndex::new(splits.labelled_reference()),
        sampling: sampling.clone(),
        rule: conflicts.rule,
        seed: derive_seed(seed, "conflicts"),
    };
    let mut reports = Vec::new();
    for &mode in &conflicts.modes {
        let (report, cases) = run_conflicts(&resolver, &splits.test, &priors, mode, conflicts.threshold)?;
        write_jsonl(
            &run.predictions().join("conflicts").join(format!("{}.jsonl", mode.as_str())),
            &cases,
        )?;
        reports.push(report);
    }
    write_jsonl(&run.reports().join("conflicts.jsonl"), &reports)?;
    Ok(reports)
}

/// Renders every table from the structured records in `reports/`.
pub fn report_stage(run: &RunDir, cfg: &PipelineConfig, title: &str) -> Result<String, HarnessError> {
    let records: Vec<EvalRecord> = read_jsonl(&run.reports().join("results.jsonl"))?;
    let trained = trained_regimes(run);
    let gens = generator_list(&cfg.eval, &trained);
    let main = main_generator(&cfg.eval, &trained);
    let relative = cfg.report.relative;
    let non_suc: Vec<RegimeName> = trained.iter().copied().filter(|r| *r != RegimeName::Suc).collect();
    let tables = [
        ("main_table.txt", render_main_table(title, &records, &cfg.report.main_rows, main, relative)),
        ("regimes_table.txt", render_regime_table(title, &records, &non_suc, relative)),
        ("lookahead_table.txt", render_lookahead_table(title, &records, &non_suc, &gens, main, relative)),
    ];
    let mut summary = String::new();
    for (name, body) in &tables {
        write_text(&run.reports().join(name), body)?;
        summary.push_str(body);
        summary.push('\n');
    }
    let conflicts_path = run.reports().join("conflicts.jsonl");
    if conflicts_path.exists() {
        let reports: Vec<ConflictReport> = read_jsonl(&conflicts_path)?;
        let body = render_conflict_table(&reports);
        write_text(&run.reports().join("conflicts_table.txt"), &body)?;
        summary.push_str(&body);
    }
    write_text(&run.reports().join("summary.txt"), &summary)?;
    Ok(summary)
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| RecordError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| RecordError::io(path, e))?;
    Ok(())
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    stage: Stage,
    error: &'a str,
}

/// Runs every stage not already completed under the current config hash.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunDir, HarnessError> {
    cfg.validate()?;
    let run = RunDir::new(&cfg.run_dir);
    fs::create_dir_all(run.root()).map_err(|e| RecordError::io(run.root(), e))?;
    let hash = cfg.hash();
    let mut manifest = match run.load_manifest()? {
        Some(m) if m.config_hash == hash => m,
        _ => RunManifest::new(&hash, cfg.seed),
    };
    for purpose in ["synth", "splits", "mixture", "regime", "eval", "conflicts"] {
        manifest.seeds.insert(purpose.to_string(), derive_seed(cfg.seed, purpose));
    }
    run.save_manifest(&manifest)?;

    for stage in Stage::ALL {
        let skip = match stage {
            Stage::Weaklabel => !cfg.weak.enabled,
            Stage::Conflicts => !cfg.conflicts.enabled,
            _ => false,
        };
        if skip || run.is_done(stage.name(), &hash) {
            continue;
        }
        if let Err(e) = run_stage(stage, cfg, &run, &mut manifest, &hash) {
            let message = e.to_string();
            write_json(
                &run.reports().join("error.json"),
                &ErrorRecord {
                    stage,
                    error: &message,
                },
            )?;
            return Err(HarnessError::Stage {
                stage,
                source: Box::new(e),
            });
        }
        run.mark_done(stage.name(), &hash)?;
    }
    Ok(run)
}

fn run_stage(
    stage: Stage,
    cfg: &PipelineConfig,
    run: &RunDir,
    manifest: &mut RunManifest,
    hash: &str,
) -> Result<(), HarnessError> {
    let splits_dir = run.splits();
    match stage {
        Stage::Prep => {
            let report = prep_corpus(&cfg.corpus, cfg.seed, &splits_dir)?;
            write_json(&run.reports().join("prep.json"), &report)?;
            manifest.dataset_fingerprint = Some(report.fingerprint);
            run.save_manifest(manifest)?;
        }
        Stage::Weaklabel => {
            let report = weaklabel_splits(&splits_dir, &cfg.weak)?;
            write_json(&run.reports().join("weak.json"), &report)?;
        }
        Stage::BuildTasks => {
            let (splits, meta) = read_splits(&splits_dir)?;
            let tasks = cfg.tasks.resolved(cfg.corpus.format);
            let aux = auxiliary_examples(&splits_dir, &tasks, cfg.tasks.repetition_threshold)?;
            write_jsonl(&run.examples().join("auxiliary.jsonl"), &aux)?;
            for &regime in &cfg.train.regimes {
                let spec = regime_spec(cfg, regime);
                let plan = plan_regime(&spec, &splits, &aux)?;
                for (i, stage) in plan.iter().enumerate() {
                    let dir = run.examples().join(regime.as_str());
                    write_jsonl(&dir.join(format!("stage-{}-{}.jsonl", i + 1, stage.name)), &stage.train)?;
                    write_jsonl(&dir.join(format!("stage-{}-{}.dev.jsonl", i + 1, stage.name)), &stage.dev)?;
                }
                manifest.regimes.insert(regime, manifest_for(&spec, &plan));
            }
            manifest.dataset_fingerprint = Some(meta.fingerprint);
            run.save_manifest(manifest)?;
        }
        Stage::Train => {
            let (splits, _) = read_splits(&splits_dir)?;
            let aux: Vec<TaskExample> = read_jsonl(&run.examples().join("auxiliary.jsonl"))?;
            for &regime in &cfg.train.regimes {
                let marker = format!("train-{}", regime.as_str());
                if run.is_done(&marker, hash) {
                    continue;
                }
                let spec = regime_spec(cfg, regime);
                let trained = train_regime(run, &spec, &splits, &aux, cfg.backend, cfg.oracle_script.as_deref())?;
                if let Some(planned) = manifest.regimes.get(&regime) {
                    for (p, t) in planned.stages.iter().zip(&trained.stages) {
                        if p.fingerprint != t.fingerprint {
                            return Err(HarnessError::Replay {
                                regime,
                                stage: t.name.clone(),
                            });
                        }
                    }
                }
                manifest.regimes.insert(regime, trained);
                manifest.backends.insert(regime, cfg.backend);
                run.save_manifest(manifest)?;
                run.mark_done(&marker, hash)?;
            }
        }
        Stage::Eval => {
            let (splits, _) = read_splits(&splits_dir)?;
            eval_stage(run, &splits, &cfg.eval, &cfg.train.backend.sampling, cfg.seed)?;
        }
        Stage::Conflicts => {
            let (splits, _) = read_splits(&splits_dir)?;
            conflicts_stage(run, &splits, &cfg.conflicts, &cfg.eval, &cfg.train.backend.sampling, cfg.seed)?;
        }
        Stage::Report => {
            let (splits, _) = read_splits(&splits_dir)?;
            report_stage(run, cfg, &splits.name)?;
        }
    }
    Ok(())
}
