use std::path::Path;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BackendConfig, BackendError, GenerationResult, SamplingConfig, Selection, Seq2Seq, TrainingLog};
use crate::records::{read_jsonl, write_jsonl};
use crate::tasks::{TaskExample, SEPARATOR};

/// Log-likelihood assigned to any `(prompt, target)` pair no record covers.
pub const DEFAULT_SCORE: f64 = -10.0;

/// One line of an oracle script: prompts matching `pattern` (a regex searched
/// anywhere in the prompt) produce `response` with log-likelihood `score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRecord {
    pub pattern: String,
    pub response: String,
    pub score: f64,
}

impl ScriptRecord {
    pub fn new(pattern: impl Into<String>, response: impl Into<String>, score: f64) -> Self {
        ScriptRecord {
            pattern: pattern.into(),
            response: response.into(),
            score,
        }
    }

    /// Record matching exactly one prompt.
    pub fn exact(prompt: &str, response: impl Into<String>, score: f64) -> Self {
        Self::new(format!("^{}$", regex::escape(prompt)), response, score)
    }
}

/// Deterministic backend driven by a script. Training is a recorded no-op.
#[derive(Debug)]
pub struct ScriptedBackend {
    records: Vec<ScriptRecord>,
    compiled: Vec<Regex>,
    fine_tune_calls: Mutex<Vec<usize>>,
}

impl ScriptedBackend {
    pub fn new(records: Vec<ScriptRecord>) -> Result<Self, BackendError> {
        let compiled = records
            .iter()
            .map(|r| {
                if !r.score.is_finite() {
                    return Err(BackendError::Script(format!("non-finite score for `{}`", r.pattern)));
                }
                Regex::new(&r.pattern).map_err(|e| BackendError::Script(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        Ok(ScriptedBackend {
            records,
            compiled,
            fine_tune_calls: Mutex::new(Vec::new()),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        Self::new(read_jsonl(path)?)
    }

    pub fn load(dir: &Path) -> Result<Self, BackendError> {
        Self::from_file(&dir.join("script.jsonl"))
    }

    pub fn records(&self) -> &[ScriptRecord] {
        &self.records
    }

    /// Example counts of every `fine_tune` call so far.
    pub fn fine_tune_calls(&self) -> Vec<usize> {
        self.fine_tune_calls.lock().expect("oracle call log poisoned").clone()
    }

    fn matching<'a>(&'a self, prompt: &'a str) -> impl Iterator<Item = &'a ScriptRecord> + 'a {
        self.records
            .iter()
            .zip(&self.compiled)
            .filter(move |(_, re)| re.is_match(prompt))
            .map(|(r, _)| r)
    }
}

/// Fallback continuation: the first utterance of the prompt, or "hello".
fn echo_first_utterance(prompt: &str) -> String {
    let body = match prompt.split_once(':') {
        Some((head, rest)) if !head.contains(' ') => rest,
        _ => prompt,
    };
    let first = body.split(SEPARATOR).next().unwrap_or("");
    let first = first
        .trim()
        .trim_start_matches("[user]")
        .trim_start_matches("[bot]")
        .trim();
    if first.is_empty() {
        "hello".to_string()
    } else {
        first.to_string()
    }
}

impl Seq2Seq for ScriptedBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn fine_tune(
        &mut self,
        train: &[TaskExample],
        _dev: &[TaskExample],
        _selection: &Selection,
        _config: &BackendConfig,
    ) -> Result<TrainingLog, BackendError> {
        if train.is_empty() {
            return Err(BackendError::EmptyDataset);
        }
        self.fine_tune_calls
            .lock()
            .expect("oracle call log poisoned")
            .push(train.len());
        Ok(TrainingLog {
            epochs: vec![super::EpochRecord {
                epoch: 1,
                train_loss: 0.0,
                dev_loss: None,
                dev_accuracy: None,
            }],
            best_epoch: 1,
            stopped_early: false,
        })
    }

    fn sequence_score(&self, prompt: &str, target: &str) -> Result<f64, BackendError> {
        Ok(self
            .matching(prompt)
            .find(|r| r.response == target)
            .map_or(DEFAULT_SCORE, |r| r.score))
    }

    fn generate(
        &self,
        prompt: &str,
        n: usize,
        _sampling: &SamplingConfig,
        _seed: u64,
    ) -> Result<GenerationResult, BackendError> {
        let matches: Vec<&ScriptRecord> = self.matching(prompt).collect();
        let (texts, scores) = if matches.is_empty() {
            (vec![echo_first_utterance(prompt); n], vec![DEFAULT_SCORE; n])
        } else {
            (0..n)
                .map(|i| {
                    let r = matches[i % matches.len()];
                    (r.response.clone(), r.score)
                })
                .unzip()
        };
        Ok(GenerationResult { texts, scores })
    }

    fn save(&self, dir: &Path) -> Result<(), BackendError> {
        write_jsonl(&dir.join("script.jsonl"), &self.records)?;
        Ok(())
    }
}
