use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::{prompt, verbalize, Origin, TaskError, TaskExample, TaskKind, SEPARATOR};
use crate::corpus::{Dialogue, IntentWindow, Source, Speaker, Turn};
use crate::records::derive_seed;
use crate::text::similarity;

pub const DEFAULT_REPETITION_THRESHOLD: f64 = 0.85;

const HANDOFF_MARKERS: [&str; 5] = [
    "human agent",
    "live agent",
    "transfer you",
    "representative",
    "connect you to an agent",
];

fn example(task: TaskKind, input: String, target: String, dialogue_id: &str, w: Option<&IntentWindow>) -> TaskExample {
    let mut meta = std::collections::BTreeMap::new();
    if let Some(w) = w {
        meta.insert("window".to_string(), w.id());
    }
    TaskExample {
        task,
        input,
        target,
        origin: Origin {
            dialogue_id: dialogue_id.to_string(),
            split: w.map(|w| w.split).unwrap_or(crate::corpus::Split::Unsupervised),
        },
        meta,
    }
}

/// Intent examples over the first `k` utterances of each labelled window.
/// Returns the examples and the number of skipped windows (unlabelled or
/// shorter than `k`).
pub fn build_intent_examples(windows: &[IntentWindow], k: usize) -> (Vec<TaskExample>, usize) {
    let mut skipped = 0;
    let mut out = Vec::with_capacity(windows.len());
    for w in windows {
        match &w.intent {
            Some(intent) if k >= 1 && k <= w.len() => out.push(example(
                TaskKind::Intent,
                prompt(TaskKind::Intent, &w.utterances[..k]),
                verbalize(intent),
                &w.dialogue_id,
                Some(w),
            )),
            _ => skipped += 1,
        }
    }
    (out, skipped)
}

/// Third-utterance generation: first user utterance and bot response in,
/// the following user utterance out. Labels are never read.
pub fn build_3ug_examples(windows: &[IntentWindow]) -> Vec<TaskExample> {
    windows
        .iter()
        .filter(|w| w.len() >= 3)
        .map(|w| {
            example(
                TaskKind::Gen3,
                prompt(TaskKind::Gen3, &w.utterances[..2]),
                w.utterances[2].text.clone(),
                &w.dialogue_id,
                Some(w),
            )
        })
        .collect()
}

/// A uniformly random non-identity permutation of `0..n` (identity for n < 2).
/// `perm[k]` is the original position shown at shuffled position `k`.
pub fn reorder_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    if n < 2 {
        return perm;
    }
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            return perm;
        }
    }
}

/// Shuffled utterances tagged `(1)`, `(2)`, …; the target lists the markers in
/// original order. Each window's permutation is seeded from `seed` and the
/// window id, so it does not depend on which other windows are built.
pub fn build_reorder_examples(windows: &[IntentWindow], seed: u64) -> Vec<TaskExample> {
    windows
        .iter()
        .filter(|w| w.len() >= 3)
        .map(|w| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &w.id()));
            let perm = reorder_permutation(w.len(), &mut rng);
            let shown: Vec<String> = perm
                .iter()
                .enumerate()
                .map(|(k, &orig)| {
                    let t = &w.utterances[orig];
                    format!("({}) {} {}", k + 1, t.speaker.tag(), t.text)
                })
                .collect();
            let mut marker_of = vec![0; perm.len()];
            for (k, &orig) in perm.iter().enumerate() {
                marker_of[orig] = k + 1;
            }
            let target = marker_of
                .iter()
                .map(|m| format!("({m})"))
                .collect::<Vec<_>>()
                .join(" ");
            example(
                TaskKind::Reorder,
                format!("{} {}", TaskKind::Reorder.prefix(), shown.join(SEPARATOR)),
                target,
                &w.dialogue_id,
                Some(w),
            )
        })
        .collect()
}

/// Splits a reorder input back into its shown segments (marker stripped).
pub fn parse_reorder_input(input: &str) -> Vec<String> {
    static MARKER: OnceLock<Regex> = OnceLock::new();
    let re = MARKER.get_or_init(|| Regex::new(r"(?:^| \| )\((\d+)\) ").unwrap());
    let body = input
        .strip_prefix(TaskKind::Reorder.prefix())
        .unwrap_or(input)
        .trim_start();
    let starts: Vec<(usize, usize)> = re.find_iter(body).map(|m| (m.start(), m.end())).collect();
    starts
        .iter()
        .enumerate()
        .map(|(i, &(_, end))| {
            let stop = starts.get(i + 1).map(|&(s, _)| s).unwrap_or(body.len());
            body[end..stop].to_string()
        })
        .collect()
}

/// Applies a `(2) (3) (1)` style target to the shown segments, yielding the
/// segments in original order. `None` if the target is not a permutation.
pub fn apply_reorder_target(shown: &[String], target: &str) -> Option<Vec<String>> {
    let markers: Vec<usize> = target
        .split_whitespace()
        .map(|m| m.trim_start_matches('(').trim_end_matches(')').parse::<usize>().ok())
        .collect::<Option<_>>()?;
    if markers.len() != shown.len() {
        return None;
    }
    let mut seen = vec![false; shown.len()];
    let mut out = Vec::with_capacity(shown.len());
    for m in markers {
        if m == 0 || m > shown.len() || seen[m - 1] {
            return None;
        }
        seen[m - 1] = true;
        out.push(shown[m - 1].clone());
    }
    Some(out)
}

fn has_handoff(turns: &[Turn]) -> bool {
    turns.iter().filter(|t| t.speaker == Speaker::Bot).any(|t| {
        let text = t.text.to_lowercase();
        HANDOFF_MARKERS.iter().any(|m| text.contains(m))
    })
}

/// Escalation labels from the dialogue flag, or from a hand-off marker in a
/// bot turn when the flag is absent. Public MultiWOZ/SGD dialogues have no
/// escalation phenomenon and are rejected.
pub fn build_escalation_examples(dialogues: &[Dialogue]) -> Result<Vec<TaskExample>, TaskError> {
    if let Some(d) = dialogues.iter().find(|d| d.source != Source::Synthetic) {
        return Err(TaskError::NotApplicable {
            task: TaskKind::Escalation,
            corpus: d.source,
        });
    }
    Ok(dialogues
        .iter()
        .filter(|d| !d.turns.is_empty())
        .map(|d| {
            let escalated = d.escalated.unwrap_or_else(|| has_handoff(&d.turns));
            example(
                TaskKind::Escalation,
                prompt(TaskKind::Escalation, &d.turns),
                escalated.to_string(),
                &d.id,
                None,
            )
        })
        .collect())
}

/// `true` iff two turns of the same speaker have similarity ≥ `threshold`.
pub fn build_repetition_examples(
    dialogues: &[Dialogue],
    threshold: f64,
) -> Result<Vec<TaskExample>, TaskError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(TaskError::Invalid(format!(
            "repetition threshold {threshold} outside [0, 1]"
        )));
    }
    Ok(dialogues
        .iter()
        .filter(|d| !d.turns.is_empty())
        .map(|d| {
            let repeated = d.turns.iter().enumerate().any(|(i, a)| {
                d.turns[i + 1..]
                    .iter()
                    .any(|b| a.speaker == b.speaker && similarity(&a.text, &b.text) >= threshold)
            });
            example(
                TaskKind::Repetition,
                prompt(TaskKind::Repetition, &d.turns),
                repeated.to_string(),
                &d.id,
                None,
            )
        })
        .collect())
}
