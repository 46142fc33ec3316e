//! Training regimes: which example sources feed each fine-tuning stage.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, BackendError, Selection, Seq2Seq, TrainingLog};
use crate::corpus::{CorpusSplits, IntentWindow, Split};
use crate::lookahead::{Lookahead, LookaheadError, ScenarioKind, ScenarioSpec};
use crate::records::{derive_seed, fingerprint};
use crate::tasks::{build_3ug_examples, build_intent_examples, build_mixture, LabelSpace, MixtureSpec, TaskError, TaskExample, TaskKind};

#[derive(Debug, thiserror::Error)]
pub enum RegimeError {
    #[error("stage `{stage}` needs the {split} split, which is empty")]
    MissingSplit { stage: String, split: Split },
    #[error("stage `{stage}`: {source}")]
    Tasks { stage: String, source: TaskError },
    #[error("stage `{stage}`: {source}")]
    Backend { stage: String, source: BackendError },
    #[error("unknown regime `{0}` (expected suc, sdc, part-sdc, all or all-sdc)")]
    UnknownRegime(String),
    #[error("sweep evaluation: {0}")]
    Eval(#[from] LookaheadError),
    #[error("sweep needs a regime with an unsupervised stage")]
    NoUnsupervisedStage,
    #[error("invalid label set: {0}")]
    Labels(TaskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegimeName {
    #[serde(rename = "SUC")]
    Suc,
    #[serde(rename = "SDC")]
    Sdc,
    #[serde(rename = "PART-SDC")]
    PartSdc,
    #[serde(rename = "ALL")]
    All,
    #[serde(rename = "ALL-SDC")]
    AllSdc,
}

impl RegimeName {
    pub const ALL_REGIMES: [RegimeName; 5] = [
        RegimeName::Suc,
        RegimeName::Sdc,
        RegimeName::PartSdc,
        RegimeName::All,
        RegimeName::AllSdc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegimeName::Suc => "SUC",
            RegimeName::Sdc => "SDC",
            RegimeName::PartSdc => "PART-SDC",
            RegimeName::All => "ALL",
            RegimeName::AllSdc => "ALL-SDC",
        }
    }
}

impl fmt::Display for RegimeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegimeName {
    type Err = RegimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "suc" => Ok(RegimeName::Suc),
            "sdc" => Ok(RegimeName::Sdc),
            "part-sdc" | "part" => Ok(RegimeName::PartSdc),
            "all" => Ok(RegimeName::All),
            "all-sdc" => Ok(RegimeName::AllSdc),
            _ => Err(RegimeError::UnknownRegime(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageSource {
    /// Intent examples from the supervised split plus any weak labels.
    SupervisedIntent,
    /// Reorder/3UG mixture over the unsupervised split plus auxiliary tasks.
    Unsupervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub sources: Vec<StageSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub name: RegimeName,
    pub stages: Vec<StageSpec>,
    pub mixture: MixtureSpec,
    pub config: BackendConfig,
    /// Context length of intent examples.
    pub intent_k: usize,
    /// Root seed fanned out to stage and mixture seeds.
    pub seed: u64,
}

impl RegimeSpec {
    pub fn new(name: RegimeName, mixture: MixtureSpec, config: BackendConfig, seed: u64) -> Self {
        use StageSource::*;
        let stage = |name: &str, sources: &[StageSource]| StageSpec {
            name: name.to_string(),
            sources: sources.to_vec(),
        };
        let stages = match name {
            RegimeName::Suc | RegimeName::Sdc => vec![stage("supervised", &[SupervisedIntent])],
            RegimeName::PartSdc => vec![stage("unsupervised", &[Unsupervised]), stage("supervised", &[SupervisedIntent])],
            RegimeName::All => vec![stage("all", &[Unsupervised, SupervisedIntent])],
            RegimeName::AllSdc => vec![stage("all", &[Unsupervised, SupervisedIntent]), stage("supervised", &[SupervisedIntent])],
        };
        RegimeSpec {
            name,
            stages,
            mixture,
            config,
            intent_k: if name == RegimeName::Suc { 1 } else { 3 },
            seed,
        }
    }

    pub fn has_unsupervised_stage(&self) -> bool {
        self.stages.iter().any(|s| s.sources.contains(&StageSource::Unsupervised))
    }
}

/// A fully materialised stage, ready for `fine_tune`.
#[derive(Debug, Clone)]
pub struct PlannedStage {
    pub name: String,
    pub train: Vec<TaskExample>,
    pub dev: Vec<TaskExample>,
    pub selection: Selection,
    pub config: BackendConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub sources: Vec<StageSource>,
    pub examples: usize,
    pub task_counts: BTreeMap<TaskKind, usize>,
    pub split_counts: BTreeMap<Split, usize>,
    pub dev_examples: usize,
    pub fingerprint: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<TrainingLog>,
}

impl StageRecord {
    fn from_plan(stage: &PlannedStage, spec: &StageSpec) -> Self {
        let mut task_counts = BTreeMap::new();
        let mut split_counts = BTreeMap::new();
        for e in &stage.train {
            *task_counts.entry(e.task).or_insert(0) += 1;
            *split_counts.entry(e.origin.split).or_insert(0) += 1;
        }
        StageRecord {
            name: stage.name.clone(),
            sources: spec.sources.clone(),
            examples: stage.train.len(),
            task_counts,
            split_counts,
            dev_examples: stage.dev.len(),
            fingerprint: fingerprint(stage.train.iter().map(TaskExample::fingerprint_line)),
            seed: stage.config.seed,
            log: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeManifest {
    pub regime: RegimeName,
    pub seed: u64,
    pub intent_k: usize,
    pub reorder_ratio: f64,
    pub stages: Vec<StageRecord>,
}

pub fn label_space(splits: &CorpusSplits) -> Result<LabelSpace, RegimeError> {
    LabelSpace::new(splits.intents.iter().cloned()).map_err(RegimeError::Labels)
}

fn supervised_pool(splits: &CorpusSplits) -> Vec<IntentWindow> {
    splits.supervised.iter().chain(&splits.weak).cloned().collect()
}

/// Builds the example sets of every stage without training anything.
/// `auxiliary` holds escalation/repetition examples for the mixture.
pub fn plan_regime(
    spec: &RegimeSpec,
    splits: &CorpusSplits,
    auxiliary: &[TaskExample],
) -> Result<Vec<PlannedStage>, RegimeError> {
    let labels = label_space(splits)?;
    let mixture_seed = derive_seed(spec.seed, "mixture");
    let mut planned = Vec::with_capacity(spec.stages.len());
    for (i, stage) in spec.stages.iter().enumerate() {
        let mut train = Vec::new();
        let mut dev = Vec::new();
        let mut intent_stage = false;
        for source in &stage.sources {
            match source {
                StageSource::Unsupervised => {
                    if splits.unsupervised.is_empty() {
                        return Err(RegimeError::MissingSplit {
                            stage: stage.name.clone(),
                            split: Split::Unsupervised,
                        });
                    }
                    let mixture = build_mixture(&spec.mixture, &splits.unsupervised, auxiliary, mixture_seed)
                        .map_err(|source| RegimeError::Tasks {
                            stage: stage.name.clone(),
                            source,
                        })?;
                    train.extend(mixture.examples);
                    dev.extend(build_3ug_examples(&splits.dev));
                }
                StageSource::SupervisedIntent => {
                    let pool = supervised_pool(splits);
                    let (examples, _) = build_intent_examples(&pool, spec.intent_k);
                    if examples.is_empty() {
                        return Err(RegimeError::MissingSplit {
                            stage: stage.name.clone(),
                            split: Split::Supervised,
                        });
                    }
                    train.extend(examples);
                    dev.extend(build_intent_examples(&splits.dev, spec.intent_k).0);
                    intent_stage = true;
                }
            }
        }
        let selection = if intent_stage {
            Selection::IntentAccuracy(labels.clone())
        } else {
            Selection::DevLoss
        };
        let config = BackendConfig {
            seed: derive_seed(spec.seed, &format!("stage/{i}")),
            ..spec.config.clone()
        };
        planned.push(PlannedStage {
            name: stage.name.clone(),
            train,
            dev,
            selection,
            config,
        });
    }
    Ok(planned)
}

/// Runs each stage in order on `backend` and returns the manifest.
pub fn run_regime(
    spec: &RegimeSpec,
    splits: &CorpusSplits,
    auxiliary: &[TaskExample],
    backend: &mut dyn Seq2Seq,
) -> Result<(RegimeManifest, Vec<PlannedStage>), RegimeError> {
    let planned = plan_regime(spec, splits, auxiliary)?;
    let mut manifest = manifest_for(spec, &planned);
    for (stage, record) in planned.iter().zip(manifest.stages.iter_mut()) {
        let log = backend
            .fine_tune(&stage.train, &stage.dev, &stage.selection, &stage.config)
            .map_err(|source| RegimeError::Backend {
                stage: stage.name.clone(),
                source,
            })?;
        record.log = Some(log);
    }
    Ok((manifest, planned))
}

pub fn manifest_for(spec: &RegimeSpec, planned: &[PlannedStage]) -> RegimeManifest {
    RegimeManifest {
        regime: spec.name,
        seed: spec.seed,
        intent_k: spec.intent_k,
        reorder_ratio: spec.mixture.reorder_ratio,
        stages: planned
            .iter()
            .zip(&spec.stages)
            .map(|(p, s)| StageRecord::from_plan(p, s))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub ratio: f64,
    pub t: usize,
    pub d: usize,
    pub accuracy: f64,
}

/// One run per ratio with shared seeds, scored by 3-u accuracy on dev.
/// `factory` supplies a fresh backend for each ratio.
pub fn sweep_ratio<F>(
    base: &RegimeSpec,
    ratios: &[f64],
    splits: &CorpusSplits,
    auxiliary: &[TaskExample],
    mut factory: F,
) -> Result<Vec<SweepPoint>, RegimeError>
where
    F: FnMut(f64) -> Result<Box<dyn Seq2Seq>, BackendError>,
{
    if !base.has_unsupervised_stage() {
        return Err(RegimeError::NoUnsupervisedStage);
    }
    let labels = label_space(splits)?;
    let mut points = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let mut spec = base.clone();
        spec.mixture.reorder_ratio = ratio;
        let mut backend = factory(ratio).map_err(|source| RegimeError::Backend {
            stage: format!("sweep r={ratio}"),
            source,
        })?;
        run_regime(&spec, splits, auxiliary, backend.as_mut())?;
        let engine = Lookahead::new(backend.as_ref(), None, &labels, base.config.sampling.clone());
        let eval = engine.evaluate(&splits.dev, &[ScenarioSpec::new(ScenarioKind::U3, base.seed)])?;
        let r = &eval.results[0];
        points.push(SweepPoint {
            ratio,
            t: r.t,
            d: r.d,
            accuracy: r.accuracy,
        });
    }
    Ok(points)
}

/// Ratio with the highest accuracy; ties go to the earlier point.
pub fn best_ratio(points: &[SweepPoint]) -> Option<f64> {
    points
        .iter()
        .fold(None::<&SweepPoint>, |best, p| match best {
            Some(b) if b.accuracy >= p.accuracy => Some(b),
            _ => Some(p),
        })
        .map(|p| p.ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::corpus::{extract_intent_windows, make_splits, synth_edu, SplitSizes, SynthSpec};
    use crate::tasks::PAPER_RATIOS;

    fn splits() -> CorpusSplits {
        let windows = extract_intent_windows(&synth_edu(&SynthSpec::new(6, 400, 4)));
        make_splits("edu", &windows, SplitSizes::new(200, 100, 50, 50), 11).unwrap()
    }

    fn spec(name: RegimeName) -> RegimeSpec {
        RegimeSpec::new(
            name,
            MixtureSpec::new(0.1, [TaskKind::Gen3, TaskKind::Reorder]),
            BackendConfig::default(),
            5,
        )
    }

    #[test]
    fn suc_is_one_stage_of_single_utterance_intents() {
        let s = splits();
        let plan = plan_regime(&spec(RegimeName::Suc), &s, &[]).unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan[0].train.len(), 100);
        assert!(plan[0].train.iter().all(|e| e.task == TaskKind::Intent && !e.input.contains("[bot]")));
    }

    #[test]
    fn stage_layouts() {
        let s = splits();
        let all_sdc = plan_regime(&spec(RegimeName::AllSdc), &s, &[]).unwrap();
        assert_eq!(all_sdc.len(), 2);
        assert!(all_sdc[1].train.iter().all(|e| e.task == TaskKind::Intent));

        let part = plan_regime(&spec(RegimeName::PartSdc), &s, &[]).unwrap();
        assert!(part[0]
            .train
            .iter()
            .all(|e| e.task != TaskKind::Intent && e.origin.split != Split::Supervised));
        assert!(matches!(part[0].selection, Selection::DevLoss));
        assert!(matches!(part[1].selection, Selection::IntentAccuracy(_)));

        let all = plan_regime(&spec(RegimeName::All), &s, &[]).unwrap();
        let m_all = manifest_for(&spec(RegimeName::All), &all);
        let m_all_sdc = manifest_for(&spec(RegimeName::AllSdc), &all_sdc);
        assert_eq!(m_all.stages[0].fingerprint, m_all_sdc.stages[0].fingerprint);
    }

    #[test]
    fn missing_split_names_the_stage() {
        let mut s = splits();
        s.unsupervised.clear();
        match plan_regime(&spec(RegimeName::PartSdc), &s, &[]) {
            Err(RegimeError::MissingSplit { stage, split }) => {
                assert_eq!(stage, "unsupervised");
                assert_eq!(split, Split::Unsupervised);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn replanning_is_identical() {
        let s = splits();
        let a = manifest_for(&spec(RegimeName::AllSdc), &plan_regime(&spec(RegimeName::AllSdc), &s, &[]).unwrap());
        let b = manifest_for(&spec(RegimeName::AllSdc), &plan_regime(&spec(RegimeName::AllSdc), &s, &[]).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn run_records_logs_and_calls() {
        let s = splits();
        let mut b = ScriptedBackend::new(vec![]).unwrap();
        let (m, plan) = run_regime(&spec(RegimeName::AllSdc), &s, &[], &mut b).unwrap();
        assert_eq!(b.fine_tune_calls(), plan.iter().map(|p| p.train.len()).collect::<Vec<_>>());
        assert!(m.stages.iter().all(|st| st.log.is_some()));
    }

    #[test]
    fn sweep_runs_once_per_ratio() {
        let s = splits();
        let points = sweep_ratio(&spec(RegimeName::All), &PAPER_RATIOS, &s, &[], |_| {
            Ok(Box::new(ScriptedBackend::new(vec![])?))
        })
        .unwrap();
        assert_eq!(points.len(), 5);
        assert!(matches!(
            sweep_ratio(&spec(RegimeName::Sdc), &[0.1], &s, &[], |_| Ok(Box::new(ScriptedBackend::new(vec![])?))),
            Err(RegimeError::NoUnsupervisedStage)
        ));
    }

    #[test]
    fn regime_names_parse() {
        for r in RegimeName::ALL_REGIMES {
            assert_eq!(r.as_str().parse::<RegimeName>().unwrap(), r);
        }
        assert!("bogus".parse::<RegimeName>().is_err());
    }
}
