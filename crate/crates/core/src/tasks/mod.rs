//! Text-in/text-out task examples for every task of the multi-task regime.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Source, Split, Turn};
use crate::text::normalize_for_match;

mod builders;
mod mixture;

pub use builders::{
    apply_reorder_target, build_3ug_examples, build_escalation_examples, build_intent_examples,
    build_reorder_examples, build_repetition_examples, parse_reorder_input, reorder_permutation,
    DEFAULT_REPETITION_THRESHOLD,
};
pub use mixture::{build_mixture, reorder_count, Mixture, MixtureSpec, PAPER_RATIOS};

/// Separator between serialised utterances.
pub const SEPARATOR: &str = " | ";

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("{task} examples are not applicable to {corpus:?} dialogues")]
    NotApplicable { task: TaskKind, corpus: Source },
    #[error("labels `{0}` and `{1}` verbalize to the same target")]
    VerbalizerCollision(String, String),
    #[error("{what}: requested {requested}, only {available} available")]
    Sizing {
        what: String,
        requested: usize,
        available: usize,
    },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Intent,
    Gen3,
    Reorder,
    Escalation,
    Repetition,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Intent,
        TaskKind::Gen3,
        TaskKind::Reorder,
        TaskKind::Escalation,
        TaskKind::Repetition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Intent => "intent",
            TaskKind::Gen3 => "gen3",
            TaskKind::Reorder => "reorder",
            TaskKind::Escalation => "escalation",
            TaskKind::Repetition => "repetition",
        }
    }

    /// The literal prefix every input of this task starts with.
    pub fn prefix(self) -> &'static str {
        match self {
            TaskKind::Intent => "intent:",
            TaskKind::Gen3 => "gen3:",
            TaskKind::Reorder => "reorder:",
            TaskKind::Escalation => "escalation:",
            TaskKind::Repetition => "repetition:",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| TaskError::Invalid(format!("unknown task `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Origin {
    pub dialogue_id: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskExample {
    pub task: TaskKind,
    pub input: String,
    pub target: String,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl TaskExample {
    /// Stable one-line identity used in fingerprints.
    pub fn fingerprint_line(&self) -> String {
        format!("{}\t{}\t{}", self.task, self.input, self.target)
    }
}

/// `[user] a | [bot] b | [user] c`
pub fn serialize_utterances(turns: &[Turn]) -> String {
    turns
        .iter()
        .map(|t| format!("{} {}", t.speaker.tag(), t.text))
        .collect::<Vec<_>>()
        .join(SEPARATOR)
}

/// Task prefix followed by the serialised utterances; just the prefix when
/// there is no context.
pub fn prompt(task: TaskKind, turns: &[Turn]) -> String {
    if turns.is_empty() {
        task.prefix().to_string()
    } else {
        format!("{} {}", task.prefix(), serialize_utterances(turns))
    }
}

/// `book_hotel` → `book hotel`
pub fn verbalize(label: &str) -> String {
    normalize_for_match(&label.replace('_', " "))
}

/// Ordered intent labels with an invertible label ↔ target-text mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSpace {
    labels: Vec<String>,
    targets: Vec<String>,
    #[serde(skip)]
    by_target: HashMap<String, usize>,
}

impl LabelSpace {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(labels: I) -> Result<Self, TaskError> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let targets: Vec<String> = labels.iter().map(|l| verbalize(l)).collect();
        let mut by_target: HashMap<String, usize> = HashMap::with_capacity(labels.len());
        for (i, t) in targets.iter().enumerate() {
            if let Some(&j) = by_target.get(t) {
                return Err(TaskError::VerbalizerCollision(
                    labels[j].to_string(),
                    labels[i].to_string(),
                ));
            }
            by_target.insert(t.clone(), i);
        }
        Ok(LabelSpace {
            labels,
            targets,
            by_target,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn target(&self, index: usize) -> &str {
        &self.targets[index]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn encode(&self, label: &str) -> Option<&str> {
        self.index_of(label).map(|i| self.targets[i].as_str())
    }

    /// Label whose verbalisation matches `text` after normalisation.
    pub fn decode(&self, text: &str) -> Option<&str> {
        self.by_target
            .get(&normalize_for_match(text))
            .map(|&i| self.labels[i].as_str())
    }
}

impl TryFrom<Vec<String>> for LabelSpace {
    type Error = TaskError;

    fn try_from(labels: Vec<String>) -> Result<Self, Self::Error> {
        LabelSpace::new(labels)
    }
}

impl From<LabelSpace> for Vec<String> {
    fn from(space: LabelSpace) -> Self {
        space.labels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn verbalizer_lowercases_and_spaces() {
        assert_eq!(verbalize("book_hotel"), "book hotel");
        assert_eq!(verbalize("FindRestaurants"), "findrestaurants");
    }

    #[test]
    fn colliding_labels_are_rejected() {
        assert!(matches!(
            LabelSpace::new(["book_hotel", "Book hotel"]),
            Err(TaskError::VerbalizerCollision(_, _))
        ));
    }

    #[test]
    fn prompt_without_context_is_prefix_only() {
        assert_eq!(prompt(TaskKind::Gen3, &[]), "gen3:");
    }

    #[test]
    fn label_space_serde_roundtrip() {
        let s = LabelSpace::new(["a_b", "c"]).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"["a_b","c"]"#);
        let back: LabelSpace = serde_json::from_str(&json).unwrap();
        assert_eq!(back.decode("A B"), Some("a_b"));
    }

    proptest! {
        #[test]
        fn verbalizer_is_invertible(labels in prop::collection::btree_set("[a-z]{1,6}(_[a-z]{1,6}){0,2}", 1..20)) {
            let space = LabelSpace::new(labels.iter().cloned()).unwrap();
            for l in &labels {
                let t = space.encode(l).unwrap();
                prop_assert_eq!(space.decode(t), Some(l.as_str()));
            }
        }
    }
}
