//! Text-to-text model abstraction: fine-tuning, conditional generation and
//! generative classification by forced-decoding label scores.
//!
//! Two implementations ship with the crate: [`ScriptedBackend`], a
//! deterministic oracle driven by `(pattern, response, score)` records, and
//! [`TinyBackend`], a small trainable encoder-decoder for desk-scale runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::records::{read_json, write_json, RecordError};
use crate::tasks::{LabelSpace, TaskExample};

mod early_stop;
mod oracle;
mod tiny;

pub use early_stop::EarlyStopper;
pub use oracle::{ScriptRecord, ScriptedBackend};
pub use tiny::{TinyBackend, TinyModelConfig};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("fine-tuning needs at least one example")]
    EmptyDataset,
    #[error("non-finite training loss at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("backend `{0}` has not been trained")]
    Untrained(String),
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("bad oracle script: {0}")]
    Script(String),
    #[error(transparent)]
    Record(#[from] RecordError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_k: Option<usize>,
    pub top_p: f64,
    pub num_samples: usize,
    pub max_new_tokens: usize,
    /// Make sample 0 the greedy decode.
    pub greedy_first: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 1.0,
            top_k: None,
            top_p: 0.9,
            num_samples: 5,
            max_new_tokens: 32,
            greedy_first: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub max_sequence_length: usize,
    pub epochs: usize,
    pub early_stopping_patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Try free decoding before falling back to label scoring in `classify`.
    pub free_decoding: bool,
    pub sampling: SamplingConfig,
    pub model: TinyModelConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            max_sequence_length: 256,
            epochs: 50,
            early_stopping_patience: 7,
            batch_size: 32,
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.997,
            epsilon: 1e-9,
            seed: 0,
            free_decoding: false,
            sampling: SamplingConfig::default(),
            model: TinyModelConfig::default(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let positive = [
            ("max_sequence_length", self.max_sequence_length),
            ("epochs", self.epochs),
            ("early_stopping_patience", self.early_stopping_patience),
            ("batch_size", self.batch_size),
            ("sampling.num_samples", self.sampling.num_samples),
            ("sampling.max_new_tokens", self.sampling.max_new_tokens),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(BackendError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(BackendError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(BackendError::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.sampling.top_p > 0.0 && self.sampling.top_p <= 1.0) {
            return Err(BackendError::Config("sampling.top_p must lie in (0, 1]".into()));
        }
        if self.sampling.temperature < 0.0 {
            return Err(BackendError::Config("sampling.temperature must be >= 0".into()));
        }
        self.model.validate()
    }
}

/// How the best epoch is chosen during fine-tuning.
#[derive(Debug, Clone)]
pub enum Selection {
    /// Intent accuracy on the intent examples of the dev set.
    IntentAccuracy(LabelSpace),
    /// Mean token loss on the dev set (training loss when the dev set is empty).
    DevLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub texts: Vec<String>,
    /// Length-normalised log-likelihood of each text.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    /// Position of the label in its [`LabelSpace`].
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    pub index: usize,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
    /// Full label distribution, descending.
    pub scores: Vec<LabelScore>,
}

/// Whether read-only calls may run concurrently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    Concurrent,
    Serialized,
}

pub trait Seq2Seq: Send + Sync {
    fn name(&self) -> &str;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }

    fn fine_tune(
        &mut self,
        train: &[TaskExample],
        dev: &[TaskExample],
        selection: &Selection,
        config: &BackendConfig,
    ) -> Result<TrainingLog, BackendError>;

    /// Length-normalised log-likelihood of `target` given `prompt`.
    fn sequence_score(&self, prompt: &str, target: &str) -> Result<f64, BackendError>;

    /// `n` continuations of `prompt`. Sample 0 is the greedy decode; samples
    /// `1..n` are drawn with `sampling`. Deterministic for a fixed seed.
    fn generate(
        &self,
        prompt: &str,
        n: usize,
        sampling: &SamplingConfig,
        seed: u64,
    ) -> Result<GenerationResult, BackendError>;

    /// Normalised scores of every label of `labels`, descending, ties by
    /// lower label index.
    fn score_labels(&self, prompt: &str, labels: &LabelSpace) -> Result<Vec<LabelScore>, BackendError> {
        let raw = (0..labels.len())
            .map(|i| self.sequence_score(prompt, labels.target(i)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(normalize_label_scores(&raw, labels))
    }

    /// Greedy free decode, used by `classify` when free decoding is enabled.
    fn free_decode(&self, prompt: &str) -> Result<String, BackendError> {
        let sampling = SamplingConfig {
            num_samples: 1,
            ..SamplingConfig::default()
        };
        Ok(self.generate(prompt, 1, &sampling, 0)?.texts.remove(0))
    }

    fn save(&self, dir: &Path) -> Result<(), BackendError>;
}

/// Softmax of raw log-likelihoods, sorted descending with index tie-break.
pub fn normalize_label_scores(raw: &[f64], labels: &LabelSpace) -> Vec<LabelScore> {
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = raw.iter().map(|r| (r - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    let mut scores: Vec<LabelScore> = exp
        .iter()
        .enumerate()
        .map(|(i, e)| LabelScore {
            label: labels.label(i).to_string(),
            index: i,
            score: e / sum,
        })
        .collect();
    sort_scores(&mut scores);
    scores
}

pub fn sort_scores(scores: &mut [LabelScore]) {
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
}

/// Argmax of the label scores; with `free_decoding`, a free-decoded text that
/// matches a verbalised label wins instead.
pub fn classify(
    backend: &dyn Seq2Seq,
    prompt: &str,
    labels: &LabelSpace,
    free_decoding: bool,
) -> Result<Classification, BackendError> {
    let scores = backend.score_labels(prompt, labels)?;
    let raw_text = if free_decoding {
        Some(backend.free_decode(prompt)?)
    } else {
        None
    };
    let chosen = raw_text
        .as_deref()
        .and_then(|t| labels.decode(t))
        .and_then(|l| scores.iter().find(|s| s.label == l))
        .unwrap_or(&scores[0])
        .clone();
    Ok(Classification {
        label: chosen.label,
        index: chosen.index,
        score: chosen.score,
        raw_text,
        scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Oracle,
    Tiny,
    /// The trainable model at its larger preset.
    Full,
}

#[derive(Serialize, Deserialize)]
struct CheckpointKind {
    kind: BackendKind,
}

/// Creates an untrained backend of the configured kind.
pub fn new_backend(
    kind: BackendKind,
    config: &BackendConfig,
    script: Option<&Path>,
) -> Result<Box<dyn Seq2Seq>, BackendError> {
    config.validate()?;
    Ok(match kind {
        BackendKind::Oracle => match script {
            Some(path) => Box::new(ScriptedBackend::from_file(path)?),
            None => Box::new(ScriptedBackend::new(Vec::new())?),
        },
        BackendKind::Tiny => Box::new(TinyBackend::new(config.model.clone(), config.seed)),
        BackendKind::Full => Box::new(TinyBackend::new(TinyModelConfig::full(), config.seed)),
    })
}

pub fn save_backend(backend: &dyn Seq2Seq, kind: BackendKind, dir: &Path) -> Result<(), BackendError> {
    write_json(&dir.join("backend.json"), &CheckpointKind { kind })?;
    backend.save(dir)
}

pub fn load_backend(dir: &Path) -> Result<Box<dyn Seq2Seq>, BackendError> {
    let CheckpointKind { kind } = read_json(&dir.join("backend.json"))?;
    Ok(match kind {
        BackendKind::Oracle => Box::new(ScriptedBackend::load(dir)?),
        BackendKind::Tiny | BackendKind::Full => Box::new(TinyBackend::load(dir)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_hyper_parameters() {
        let c = BackendConfig::default();
        assert_eq!(c.max_sequence_length, 256);
        assert_eq!(c.epochs, 50);
        assert_eq!(c.early_stopping_patience, 7);
        assert_eq!(c.batch_size, 32);
        assert_eq!((c.beta1, c.beta2, c.epsilon), (0.9, 0.997, 1e-9));
        c.validate().unwrap();
    }

    #[test]
    fn zero_counts_are_invalid() {
        let c = BackendConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(BackendError::Config(_))));
    }

    #[test]
    fn normalized_scores_sum_to_one_and_sort() {
        let labels = LabelSpace::new(["a", "b", "c"]).unwrap();
        let s = normalize_label_scores(&[-1.0, -0.5, -1.0], &labels);
        assert_eq!(s[0].label, "b");
        assert_eq!((s[1].index, s[2].index), (0, 2));
        let total: f64 = s.iter().map(|x| x.score).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
