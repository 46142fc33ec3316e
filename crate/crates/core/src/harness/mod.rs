//! Run persistence, reports and the end-to-end pipeline.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::BackendError;
use crate::conflict::ConflictError;
use crate::corpus::CorpusError;
use crate::lookahead::LookaheadError;
use crate::records::{read_json, write_json, RecordError};
use crate::regime::{RegimeError, RegimeManifest, RegimeName};
use crate::tasks::TaskError;
use crate::weak::WeakError;

pub mod config;
mod pipeline;
pub mod report;

pub use config::{GeneratorRef, PipelineConfig};
pub use pipeline::{
    auxiliary_examples, build_task_file, conflicts_stage, eval_stage, prep_corpus, report_stage, run_pipeline, train_regime, weaklabel_splits,
    PrepReport, Stage,
};
pub use report::EvalRecord;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tasks(#[from] TaskError),
    #[error(transparent)]
    Weak(#[from] WeakError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Regime(#[from] RegimeError),
    #[error(transparent)]
    Lookahead(#[from] LookaheadError),
    #[error(transparent)]
    Conflict(#[from] ConflictError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("regime {0} has not been trained in this run")]
    MissingRegime(RegimeName),
    #[error("replaying {regime} stage `{stage}` produced different examples than the manifest records")]
    Replay { regime: RegimeName, stage: String },
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<HarnessError>,
    },
}

/// Layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn splits(&self) -> PathBuf {
        self.root.join("splits")
    }

    pub fn examples(&self) -> PathBuf {
        self.root.join("examples")
    }

    pub fn checkpoint(&self, regime: RegimeName) -> PathBuf {
        self.root.join("checkpoints").join(regime.as_str())
    }

    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    fn marker(&self, name: &str) -> PathBuf {
        self.root.join("stages").join(format!("{name}.done"))
    }

    /// True when `name` finished under the configuration hash `hash`.
    pub fn is_done(&self, name: &str, hash: &str) -> bool {
        fs::read_to_string(self.marker(name)).is_ok_and(|h| h.trim() == hash)
    }

    pub fn mark_done(&self, name: &str, hash: &str) -> Result<(), HarnessError> {
        let path = self.marker(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| RecordError::io(parent, e))?;
        }
        fs::write(&path, hash).map_err(|e| RecordError::io(&path, e))?;
        Ok(())
    }

    pub fn load_manifest(&self) -> Result<Option<RunManifest>, HarnessError> {
        let path = self.manifest_path();
        if path.exists() {
            Ok(Some(read_json(&path)?))
        } else {
            Ok(None)
        }
    }

    pub fn save_manifest(&self, manifest: &RunManifest) -> Result<(), HarnessError> {
        Ok(write_json(&self.manifest_path(), manifest)?)
    }

    /// The manifest on disk, or a fresh one.
    pub fn manifest_or_new(&self, config_hash: &str, seed: u64) -> Result<RunManifest, HarnessError> {
        Ok(match self.load_manifest()? {
            Some(m) => m,
            None => RunManifest::new(config_hash, seed),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    /// Seeds derived from `seed`, by purpose.
    pub seeds: BTreeMap<String, u64>,
    pub created_at: String,
    #[serde(default)]
    pub dataset_fingerprint: Option<String>,
    #[serde(default)]
    pub regimes: BTreeMap<RegimeName, RegimeManifest>,
    #[serde(default)]
    pub backends: BTreeMap<RegimeName, crate::backend::BackendKind>,
}

impl RunManifest {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        RunManifest {
            run_id: config_hash.chars().take(12).collect(),
            config_hash: config_hash.to_string(),
            seed,
            seeds: BTreeMap::new(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            dataset_fingerprint: None,
            regimes: BTreeMap::new(),
            backends: BTreeMap::new(),
        }
    }
}
