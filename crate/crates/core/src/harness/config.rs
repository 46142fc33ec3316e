use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, BackendKind};
use crate::conflict::{ConflictMode, FinalRule, DEFAULT_THRESHOLD};
use crate::corpus::SplitSizes;
use crate::lookahead::ScenarioKind;
use crate::records::hash_bytes;
use crate::regime::RegimeName;
use crate::tasks::{TaskKind, DEFAULT_REPETITION_THRESHOLD};

use super::HarnessError;

/// Environment variables that override config values.
pub const ENV_SEED: &str = "LOOKAHEAD_SEED";
pub const ENV_RUN_DIR: &str = "LOOKAHEAD_RUN_DIR";
pub const ENV_CORPUS_PATH: &str = "LOOKAHEAD_CORPUS_PATH";
pub const ENV_SCRIPT: &str = "LOOKAHEAD_ORACLE_SCRIPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub run_dir: PathBuf,
    #[serde(default = "default_backend")]
    pub backend: BackendKind,
    /// Line-delimited oracle script, used when `backend = "oracle"`.
    #[serde(default)]
    pub oracle_script: Option<PathBuf>,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub tasks: TasksConfig,
    #[serde(default)]
    pub weak: WeakConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub conflicts: ConflictsConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

fn default_backend() -> BackendKind {
    BackendKind::Tiny
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Multiwoz,
    Sgd,
    Canonical,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub format: CorpusFormat,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub name: Option<String>,
    pub split_sizes: SplitSizes,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    /// Cap on window length (rounded to an odd count of at least 3).
    #[serde(default)]
    pub max_window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub intents: usize,
    pub windows: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            intents: 115,
            windows: 2063,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TasksConfig {
    /// Tasks of the unsupervised mixture; defaults depend on the corpus.
    pub tasks: Option<Vec<TaskKind>>,
    pub reorder_ratio: f64,
    pub budget: Option<usize>,
    pub repetition_threshold: f64,
}

impl Default for TasksConfig {
    fn default() -> Self {
        TasksConfig {
            tasks: None,
            reorder_ratio: 0.1,
            budget: None,
            repetition_threshold: DEFAULT_REPETITION_THRESHOLD,
        }
    }
}

impl TasksConfig {
    pub fn resolved(&self, format: CorpusFormat) -> Vec<TaskKind> {
        self.tasks.clone().unwrap_or_else(|| match format {
            CorpusFormat::Synthetic => vec![TaskKind::Gen3, TaskKind::Reorder, TaskKind::Escalation, TaskKind::Repetition],
            _ => vec![TaskKind::Gen3, TaskKind::Reorder],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakConfig {
    pub enabled: bool,
    pub backends: Vec<String>,
    pub utterances: usize,
}

impl Default for WeakConfig {
    fn default() -> Self {
        WeakConfig {
            enabled: false,
            backends: vec!["linear".into(), "nb".into()],
            utterances: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub regimes: Vec<RegimeName>,
    pub backend: BackendConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regimes: RegimeName::ALL_REGIMES.to_vec(),
            backend: BackendConfig::default(),
        }
    }
}

/// A generator: another trained regime, or the classifier itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GeneratorRef {
    SelfModel,
    Regime(RegimeName),
}

impl GeneratorRef {
    pub fn resolve(self, classifier: RegimeName) -> RegimeName {
        match self {
            GeneratorRef::SelfModel => classifier,
            GeneratorRef::Regime(r) => r,
        }
    }

    /// Short column name, e.g. `PART` for PART-SDC.
    pub fn column(self) -> &'static str {
        match self {
            GeneratorRef::SelfModel => "self",
            GeneratorRef::Regime(RegimeName::PartSdc) => "PART",
            GeneratorRef::Regime(r) => r.as_str(),
        }
    }
}

impl TryFrom<String> for GeneratorRef {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if s.eq_ignore_ascii_case("self") {
            Ok(GeneratorRef::SelfModel)
        } else {
            s.parse().map(GeneratorRef::Regime).map_err(|e| e.to_string())
        }
    }
}

impl From<GeneratorRef> for String {
    fn from(g: GeneratorRef) -> String {
        match g {
            GeneratorRef::SelfModel => "self".into(),
            GeneratorRef::Regime(r) => r.as_str().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub scenarios: Vec<ScenarioKind>,
    /// Generators compared in the look-ahead table.
    pub generators: Vec<GeneratorRef>,
    /// Generator behind the main table's 3-5xg column and 3-rnd.
    pub main_generator: Option<GeneratorRef>,
    pub num_samples: usize,
    pub corpus_sampler: bool,
    pub free_decoding: bool,
    /// Regime whose 1-u accuracy anchors relative deltas.
    pub baseline: Option<RegimeName>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            scenarios: ScenarioKind::ALL.to_vec(),
            generators: vec![GeneratorRef::Regime(RegimeName::PartSdc), GeneratorRef::Regime(RegimeName::All)],
            main_generator: None,
            num_samples: 5,
            corpus_sampler: false,
            free_decoding: false,
            baseline: Some(RegimeName::Suc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConflictsConfig {
    pub enabled: bool,
    pub classifier: Option<RegimeName>,
    pub generator: Option<GeneratorRef>,
    pub modes: Vec<ConflictMode>,
    pub threshold: f64,
    pub rule: FinalRule,
}

impl Default for ConflictsConfig {
    fn default() -> Self {
        ConflictsConfig {
            enabled: true,
            classifier: None,
            generator: None,
            modes: ConflictMode::ALL.to_vec(),
            threshold: DEFAULT_THRESHOLD,
            rule: FinalRule::MaxOwnScore,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Render deltas against the baseline instead of absolute accuracy.
    pub relative: bool,
    pub main_rows: Vec<RegimeName>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            relative: false,
            main_rows: vec![RegimeName::Suc, RegimeName::Sdc, RegimeName::AllSdc],
        }
    }
}

impl PipelineConfig {
    /// Parses TOML and applies environment overrides. Unknown keys are errors.
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let mut config: PipelineConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.apply_env(|k| std::env::var(k).ok())?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        // Relative paths are taken from the config file's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [Some(&mut config.run_dir), config.corpus.path.as_mut(), config.oracle_script.as_mut()]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), HarnessError> {
        if let Some(seed) = get(ENV_SEED) {
            self.seed = seed
                .trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("{ENV_SEED}={seed} is not an integer")))?;
        }
        if let Some(dir) = get(ENV_RUN_DIR) {
            self.run_dir = dir.into();
        }
        if let Some(path) = get(ENV_CORPUS_PATH) {
            self.corpus.path = Some(path.into());
        }
        if let Some(path) = get(ENV_SCRIPT) {
            self.oracle_script = Some(path.into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.train
            .backend
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.corpus.format != CorpusFormat::Synthetic && self.corpus.path.is_none() {
            return bad(format!("corpus.path is required for {:?} corpora", self.corpus.format));
        }
        if !(0.0..=1.0).contains(&self.tasks.reorder_ratio) {
            return bad("tasks.reorder_ratio must lie in [0, 1]".into());
        }
        if !(self.tasks.repetition_threshold > 0.0 && self.tasks.repetition_threshold <= 1.0) {
            return bad("tasks.repetition_threshold must lie in (0, 1]".into());
        }
        if self.train.regimes.is_empty() {
            return bad("train.regimes is empty".into());
        }
        if self.eval.num_samples == 0 {
            return bad("eval.num_samples must be positive".into());
        }
        if self.weak.enabled && self.weak.backends.len() != 2 {
            return bad("weak.backends needs exactly two entries".into());
        }
        if !(self.conflicts.threshold > 0.0 && self.conflicts.threshold < 1.0) {
            return bad("conflicts.threshold must lie in (0, 1)".into());
        }
        Ok(())
    }

    /// Hash of the effective configuration.
    pub fn hash(&self) -> String {
        hash_bytes(serde_json::to_string(self).expect("config serialises").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        run_dir = "runs/x"
        backend = "oracle"
        [corpus]
        format = "synthetic"
        split_sizes = { unsupervised = 10, supervised = 5, dev = 2, test = 2 }
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c: PipelineConfig = toml::from_str(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.train.backend.epochs, 50);
        assert_eq!(c.conflicts.threshold, 0.3);
        assert_eq!(c.tasks.resolved(c.corpus.format).len(), 4);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = format!("{MINIMAL}\n[eval]\nscenarioz = []\n");
        assert!(matches!(PipelineConfig::from_toml(&text), Err(HarnessError::Config(_))));
    }

    #[test]
    fn env_overrides_seed() {
        let mut c: PipelineConfig = toml::from_str(MINIMAL).unwrap();
        c.apply_env(|k| (k == ENV_SEED).then(|| "42".to_string())).unwrap();
        assert_eq!(c.seed, 42);
        assert!(c.apply_env(|k| (k == ENV_SEED).then(|| "x".to_string())).is_err());
    }

    #[test]
    fn generator_refs_parse() {
        let g: GeneratorRef = "PART-SDC".to_string().try_into().unwrap();
        assert_eq!(g.column(), "PART");
        let s: GeneratorRef = "self".to_string().try_into().unwrap();
        assert_eq!(s.resolve(RegimeName::Sdc), RegimeName::Sdc);
    }
}
