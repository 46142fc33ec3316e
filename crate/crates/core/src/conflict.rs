//! Counterfactual resolution of conflicting intents.
//!
//! A conflict is a prediction with two plausible intents. For each candidate
//! we borrow a logged bot response of that intent, let the 3UG generator
//! answer it as the user, and classify the resulting three-utterance
//! conversation. The candidate whose own conversation supports it most wins.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{LabelScore, SamplingConfig, Seq2Seq};
use crate::corpus::{IntentWindow, Speaker, Turn};
use crate::records::derive_seed;
use crate::tasks::{prompt, LabelSpace, TaskKind};

pub const DEFAULT_THRESHOLD: f64 = 0.3;

#[derive(Debug, thiserror::Error)]
pub enum ConflictError {
    #[error("threshold {0} must lie strictly between 0 and 1")]
    Threshold(f64),
    #[error("mode {mode} needs the gold intent of window {window}")]
    MissingGold { mode: ConflictMode, window: String },
    #[error("error reduction is undefined with zero mistakes before resolution")]
    UndefinedMetric,
    #[error("window {0} needs at least two scored labels")]
    TooFewLabels(String),
    #[error("window {0} has no logged bot response")]
    NoGoldResponse(String),
    #[error("the response corpus has no bot turns")]
    EmptyCorpus,
    #[error("no prior scores for window {0}")]
    MissingPrior(String),
    #[error("unknown conflict mode `{0}`")]
    UnknownMode(String),
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictMode {
    Threshold,
    MistakeOracle,
    ConflictOracle,
}

impl ConflictMode {
    pub const ALL: [ConflictMode; 3] = [ConflictMode::Threshold, ConflictMode::MistakeOracle, ConflictMode::ConflictOracle];

    pub fn as_str(self) -> &'static str {
        match self {
            ConflictMode::Threshold => "threshold",
            ConflictMode::MistakeOracle => "mistake-oracle",
            ConflictMode::ConflictOracle => "conflict-oracle",
        }
    }
}

impl fmt::Display for ConflictMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConflictMode {
    type Err = ConflictError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        ConflictMode::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| ConflictError::UnknownMode(s.to_string()))
    }
}

/// How the final intent is chosen from the counterfactual conversations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalRule {
    /// The candidate whose own conversation gives it the highest score.
    #[default]
    MaxOwnScore,
    /// The candidate with the highest score averaged over all conversations.
    EnsembleAverage,
}

/// Prior label distribution (descending) of one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScores {
    pub window_id: String,
    #[serde(default)]
    pub gold: Option<String>,
    pub scores: Vec<LabelScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub intent: String,
    pub index: usize,
    pub prior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictSelection {
    pub window_id: String,
    /// Exactly two, by descending prior.
    pub candidates: Vec<Candidate>,
}

fn top_two(w: &WindowScores) -> Result<Vec<Candidate>, ConflictError> {
    if w.scores.len() < 2 {
        return Err(ConflictError::TooFewLabels(w.window_id.clone()));
    }
    Ok(w.scores[..2]
        .iter()
        .map(|s| Candidate {
            intent: s.label.clone(),
            index: s.index,
            prior: s.score,
        })
        .collect())
}

/// Windows (with their top-two candidates) that count as conflicts under `mode`.
pub fn select_conflicts(
    predictions: &[WindowScores],
    mode: ConflictMode,
    threshold: f64,
) -> Result<Vec<ConflictSelection>, ConflictError> {
    if mode == ConflictMode::Threshold && !(threshold > 0.0 && threshold < 1.0) {
        return Err(ConflictError::Threshold(threshold));
    }
    let mut out = Vec::new();
    for w in predictions {
        let candidates = top_two(w)?;
        let gold = || {
            w.gold.as_deref().ok_or_else(|| ConflictError::MissingGold {
                mode,
                window: w.window_id.clone(),
            })
        };
        let conflict = match mode {
            ConflictMode::Threshold => w.scores.iter().filter(|s| s.score > threshold).count() >= 2,
            ConflictMode::MistakeOracle => candidates[0].intent != gold()?,
            ConflictMode::ConflictOracle => {
                let g = gold()?;
                candidates[0].intent != g && candidates[1].intent == g
            }
        };
        if conflict {
            out.push(ConflictSelection {
                window_id: w.window_id.clone(),
                candidates,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MimicResponse {
    pub turn: Turn,
    /// True when the intent had no logged response and a global fallback was used.
    pub fallback: bool,
}

/// Logged bot responses grouped by the intent of their window.
#[derive(Debug, Clone)]
pub struct ResponseIndex {
    by_intent: HashMap<String, Vec<Turn>>,
    most_frequent: Option<Turn>,
}

impl ResponseIndex {
    pub fn new<'a>(corpus: impl IntoIterator<Item = &'a IntentWindow>) -> Self {
        let mut by_intent: HashMap<String, Vec<Turn>> = HashMap::new();
        let mut freq: BTreeMap<&str, (usize, &Turn)> = BTreeMap::new();
        let corpus: Vec<&IntentWindow> = corpus.into_iter().collect();
        for w in &corpus {
            for t in w.utterances.iter().filter(|t| t.speaker == Speaker::Bot) {
                if let Some(intent) = &w.intent {
                    by_intent.entry(intent.clone()).or_default().push(t.clone());
                }
                freq.entry(t.text.as_str()).or_insert((0, t)).0 += 1;
            }
        }
        // Highest count; BTreeMap order makes ties lexicographic.
        let most_frequent = freq
            .values()
            .fold(None::<(usize, &Turn)>, |best, &(n, t)| match best {
                Some((bn, _)) if bn >= n => best,
                _ => Some((n, t)),
            })
            .map(|(_, t)| t.clone());
        ResponseIndex {
            by_intent,
            most_frequent,
        }
    }

    /// The response of `intent` sharing the most slot names with `gold`;
    /// ties go to the shortest text, then the lexicographically smallest.
    pub fn mimic(&self, intent: &str, gold: &Turn) -> Result<MimicResponse, ConflictError> {
        let gold_slots: Vec<&String> = gold.slot_names().collect();
        let overlap = |t: &Turn| t.slot_names().filter(|s| gold_slots.contains(s)).count();
        match self.by_intent.get(intent) {
            Some(responses) if !responses.is_empty() => {
                let best = responses
                    .iter()
                    .min_by(|a, b| {
                        overlap(b)
                            .cmp(&overlap(a))
                            .then(a.text.len().cmp(&b.text.len()))
                            .then(a.text.cmp(&b.text))
                    })
                    .expect("non-empty");
                Ok(MimicResponse {
                    turn: best.clone(),
                    fallback: false,
                })
            }
            _ => self
                .most_frequent
                .clone()
                .map(|turn| MimicResponse { turn, fallback: true })
                .ok_or(ConflictError::EmptyCorpus),
        }
    }
}

pub fn mimic_bot_response(intent: &str, corpus: &[IntentWindow], gold: &Turn) -> Result<MimicResponse, ConflictError> {
    ResponseIndex::new(corpus).mimic(intent, gold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub intent: String,
    pub index: usize,
    pub prior: f64,
    pub response: String,
    pub response_fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub third: Option<String>,
    /// Top two posterior scores of this candidate's conversation.
    pub top: Vec<LabelScore>,
    /// Posterior score of this candidate's own intent.
    pub own_score: f64,
    /// Posterior score of every candidate in this conversation, by candidate.
    pub candidate_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictCase {
    pub window_id: String,
    pub first_utterance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    pub mode: ConflictMode,
    pub candidates: Vec<CandidateOutcome>,
    pub final_intent: String,
    pub generation_failed: bool,
}

impl ConflictCase {
    pub fn prior_top(&self) -> &str {
        &self.candidates[0].intent
    }
}

/// Generator, classifier and response corpus for counterfactual resolution.
pub struct Resolver<'a> {
    pub generator: &'a dyn Seq2Seq,
    pub classifier: &'a dyn Seq2Seq,
    pub labels: &'a LabelSpace,
    pub responses: ResponseIndex,
    pub sampling: SamplingConfig,
    pub rule: FinalRule,
    pub seed: u64,
}

impl Resolver<'_> {
    pub fn resolve(
        &self,
        window: &IntentWindow,
        selection: &ConflictSelection,
        mode: ConflictMode,
    ) -> Result<ConflictCase, ConflictError> {
        let first = window.utterances[0].clone();
        let gold_response = window
            .utterances
            .get(1)
            .filter(|t| t.speaker == Speaker::Bot)
            .ok_or_else(|| ConflictError::NoGoldResponse(window.id()))?;
        let mut outcomes = Vec::with_capacity(selection.candidates.len());
        let mut failed = false;
        for cand in &selection.candidates {
            let mimic = self.responses.mimic(&cand.intent, gold_response)?;
            let mut response = mimic.turn.clone();
            response.index = 1;
            let seed = derive_seed(self.seed, &format!("{}/{}", window.id(), cand.intent));
            let gen_prompt = prompt(TaskKind::Gen3, &[first.clone(), response.clone()]);
            let third = match self.generator.generate(&gen_prompt, 1, &self.sampling, seed) {
                Ok(g) => g.texts.into_iter().next().filter(|t| !t.trim().is_empty()),
                Err(_) => None,
            };
            let (top, candidate_scores) = match &third {
                Some(text) => {
                    let turns = [first.clone(), response.clone(), Turn::user(2, text.clone(), None)];
                    let scores = self.classifier.score_labels(&prompt(TaskKind::Intent, &turns), self.labels)?;
                    let per_cand = selection
                        .candidates
                        .iter()
                        .map(|c| scores.iter().find(|s| s.index == c.index).map_or(0.0, |s| s.score))
                        .collect::<Vec<_>>();
                    (scores.into_iter().take(2).collect(), per_cand)
                }
                None => {
                    failed = true;
                    (Vec::new(), vec![0.0; selection.candidates.len()])
                }
            };
            outcomes.push(CandidateOutcome {
                intent: cand.intent.clone(),
                index: cand.index,
                prior: cand.prior,
                response: response.text,
                response_fallback: mimic.fallback,
                third,
                top,
                own_score: candidate_scores[outcomes.len()],
                candidate_scores,
            });
        }
        let final_intent = if failed {
            selection.candidates[0].intent.clone()
        } else {
            let strength = |i: usize| match self.rule {
                FinalRule::MaxOwnScore => outcomes[i].own_score,
                FinalRule::EnsembleAverage => {
                    outcomes.iter().map(|o| o.candidate_scores[i]).sum::<f64>() / outcomes.len() as f64
                }
            };
            // Strictly greater, so equal strength keeps the higher prior.
            let mut best = 0;
            for i in 1..outcomes.len() {
                if strength(i) > strength(best) {
                    best = i;
                }
            }
            outcomes[best].intent.clone()
        };
        Ok(ConflictCase {
            window_id: window.id(),
            first_utterance: first.text,
            gold: window.intent.clone(),
            mode,
            candidates: outcomes,
            final_intent,
            generation_failed: failed,
        })
    }
}

/// `1 − after/before`; negative values mean resolution made things worse.
pub fn error_reduction(before: usize, after: usize) -> Result<f64, ConflictError> {
    if before == 0 {
        return Err(ConflictError::UndefinedMetric);
    }
    Ok(1.0 - after as f64 / before as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub mode: ConflictMode,
    pub threshold: f64,
    pub rule: FinalRule,
    pub windows: usize,
    pub conflicts_found: usize,
    /// Mistakes among the selected conflict cases, before and after.
    pub mistakes_before: usize,
    pub mistakes_after: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_reduction: Option<f64>,
    pub fixed: usize,
    pub broken: usize,
    pub generation_failures: usize,
    pub mimic_fallbacks: usize,
    /// Mistakes over every window, before and after.
    pub total_mistakes_before: usize,
    pub total_mistakes_after: usize,
}

/// Selects conflicts among `windows` using their `priors`, resolves each and
/// reports the error reduction. Every window needs a gold intent.
pub fn run_conflicts(
    resolver: &Resolver<'_>,
    windows: &[IntentWindow],
    priors: &[WindowScores],
    mode: ConflictMode,
    threshold: f64,
) -> Result<(ConflictReport, Vec<ConflictCase>), ConflictError> {
    let by_id: HashMap<String, &IntentWindow> = windows.iter().map(|w| (w.id(), w)).collect();
    for p in priors {
        if p.gold.is_none() {
            return Err(ConflictError::MissingGold {
                mode,
                window: p.window_id.clone(),
            });
        }
    }
    let selections = select_conflicts(priors, mode, threshold)?;
    let mut cases = Vec::with_capacity(selections.len());
    for sel in &selections {
        let window = by_id
            .get(&sel.window_id)
            .ok_or_else(|| ConflictError::MissingPrior(sel.window_id.clone()))?;
        cases.push(resolver.resolve(window, sel, mode)?);
    }
    let wrong = |label: &str, gold: &Option<String>| gold.as_deref() != Some(label);
    let mistakes_before = cases.iter().filter(|c| wrong(c.prior_top(), &c.gold)).count();
    let mistakes_after = cases.iter().filter(|c| wrong(&c.final_intent, &c.gold)).count();
    let fixed = cases
        .iter()
        .filter(|c| wrong(c.prior_top(), &c.gold) && !wrong(&c.final_intent, &c.gold))
        .count();
    let broken = cases
        .iter()
        .filter(|c| !wrong(c.prior_top(), &c.gold) && wrong(&c.final_intent, &c.gold))
        .count();
    let total_before = priors
        .iter()
        .filter(|p| p.scores.first().is_none_or(|s| wrong(&s.label, &p.gold)))
        .count();
    let report = ConflictReport {
        mode,
        threshold,
        rule: resolver.rule,
        windows: priors.len(),
        conflicts_found: cases.len(),
        mistakes_before,
        mistakes_after,
        error_reduction: error_reduction(mistakes_before, mistakes_after).ok(),
        fixed,
        broken,
        generation_failures: cases.iter().filter(|c| c.generation_failed).count(),
        mimic_fallbacks: cases
            .iter()
            .filter(|c| c.candidates.iter().any(|o| o.response_fallback))
            .count(),
        total_mistakes_before: total_before,
        total_mistakes_after: total_before + broken - fixed,
    };
    Ok((report, cases))
}
