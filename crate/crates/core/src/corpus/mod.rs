//! Canonical dialogue model, ingestion, window extraction and data splits.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::records::RecordError;
use crate::text::normalize_ws;

mod ingest;
mod splits;
mod synth;
mod windows;

pub use ingest::{ingest, serialize_canonical, Format};
pub use splits::{
    make_splits, read_splits, write_splits, CorpusSplits, SplitCounts, SplitSizes, SplitsMeta,
};
pub use synth::{synth_edu, SynthSpec};
pub use windows::{extract_intent_windows, truncate_windows};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("{path}: record {record}: {message}")]
    Malformed {
        path: PathBuf,
        record: String,
        message: String,
    },
    #[error("unknown dataset format `{0}` (expected multiwoz, sgd or canonical)")]
    UnknownFormat(String),
    #[error("{split} split: requested {requested} windows, only {available} available")]
    Sizing {
        split: Split,
        requested: usize,
        available: usize,
    },
    #[error("duplicate dialogue id `{0}`")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Bot,
}

impl Speaker {
    pub fn tag(self) -> &'static str {
        match self {
            Speaker::User => "[user]",
            Speaker::Bot => "[bot]",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slots: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
}

impl Turn {
    pub fn new(index: usize, speaker: Speaker, text: impl Into<String>) -> Self {
        Turn {
            index,
            speaker,
            text: text.into(),
            slots: None,
            intent: None,
        }
    }

    pub fn user(index: usize, text: impl Into<String>, intent: Option<&str>) -> Self {
        Turn {
            intent: intent.map(str::to_string),
            ..Turn::new(index, Speaker::User, text)
        }
    }

    pub fn bot(index: usize, text: impl Into<String>) -> Self {
        Turn::new(index, Speaker::Bot, text)
    }

    pub fn with_slots<I: IntoIterator<Item = S>, S: Into<String>>(mut self, slots: I) -> Self {
        self.slots = Some(slots.into_iter().map(Into::into).collect());
        self
    }

    pub fn slot_names(&self) -> impl Iterator<Item = &String> {
        self.slots.iter().flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Multiwoz,
    Sgd,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub domain: String,
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escalated: Option<bool>,
    pub source: Source,
}

impl Dialogue {
    /// Normalises whitespace, drops empty turns, merges consecutive
    /// same-speaker turns with a single space and renumbers the turns.
    ///
    /// A merged user turn keeps the first non-null intent of its parts and the
    /// union of their slots. Bot turns never carry an intent.
    pub fn canonicalize(mut self) -> Self {
        let mut merged: Vec<Turn> = Vec::with_capacity(self.turns.len());
        for mut turn in self.turns.drain(..) {
            turn.text = normalize_ws(&turn.text);
            if turn.text.is_empty() {
                continue;
            }
            if turn.speaker == Speaker::Bot {
                turn.intent = None;
            }
            match merged.last_mut() {
                Some(prev) if prev.speaker == turn.speaker => {
                    prev.text.push(' ');
                    prev.text.push_str(&turn.text);
                    if prev.intent.is_none() {
                        prev.intent = turn.intent;
                    }
                    if let Some(slots) = turn.slots {
                        prev.slots.get_or_insert_with(BTreeSet::new).extend(slots);
                    }
                }
                _ => merged.push(turn),
            }
        }
        for (i, t) in merged.iter_mut().enumerate() {
            t.index = i;
        }
        self.turns = merged;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Unsupervised,
    Supervised,
    Weak,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 5] = [
        Split::Unsupervised,
        Split::Supervised,
        Split::Weak,
        Split::Dev,
        Split::Test,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Unsupervised => "unsupervised",
            Split::Supervised => "supervised",
            Split::Weak => "weak",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A user-initiated, speaker-alternating slice of one dialogue whose user
/// turns share a single intent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentWindow {
    pub dialogue_id: String,
    /// Position of the segment within its dialogue.
    pub segment: usize,
    pub intent: Option<String>,
    pub utterances: Vec<Turn>,
    pub split: Split,
}

impl IntentWindow {
    pub fn id(&self) -> String {
        format!("{}#{}", self.dialogue_id, self.segment)
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn first_user_text(&self) -> &str {
        &self.utterances[0].text
    }
}
