//! Evaluation scenarios: truncated context (1-u, 2-u, 3-u) and look-ahead
//! with generated third utterances (3-gen, 3-5xg, 3-rnd).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{classify, BackendError, LabelScore, SamplingConfig, Seq2Seq};
use crate::corpus::{IntentWindow, Turn};
use crate::records::derive_seed;
use crate::tasks::{prompt, LabelSpace, TaskKind};

#[derive(Debug, thiserror::Error)]
pub enum LookaheadError {
    #[error("scenario {0} needs a generator backend")]
    MissingGenerator(ScenarioKind),
    #[error("window {window} has {len} utterances; scenario {scenario} needs {needed}")]
    ShortWindow {
        window: String,
        len: usize,
        scenario: ScenarioKind,
        needed: usize,
    },
    #[error("window {0} has no gold intent")]
    MissingGold(String),
    #[error("gold intent `{intent}` of window {window} is not in the label space")]
    UnknownGold { window: String, intent: String },
    #[error("nothing to evaluate")]
    Empty,
    #[error("majority vote over no votes")]
    NoVotes,
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("the corpus sampler for 3-rnd has no utterances")]
    EmptySampler,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    U1,
    U2,
    U3,
    Gen3,
    Gen5x,
    Rnd3,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::U1,
        ScenarioKind::U2,
        ScenarioKind::U3,
        ScenarioKind::Gen3,
        ScenarioKind::Gen5x,
        ScenarioKind::Rnd3,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ScenarioKind::U1 => "u1",
            ScenarioKind::U2 => "u2",
            ScenarioKind::U3 => "u3",
            ScenarioKind::Gen3 => "gen3",
            ScenarioKind::Gen5x => "gen5x",
            ScenarioKind::Rnd3 => "rnd3",
        }
    }

    /// Column heading used in reports.
    pub fn label(self) -> &'static str {
        match self {
            ScenarioKind::U1 => "1-u",
            ScenarioKind::U2 => "2-u",
            ScenarioKind::U3 => "3-u",
            ScenarioKind::Gen3 => "3-gen",
            ScenarioKind::Gen5x => "3-5xg",
            ScenarioKind::Rnd3 => "3-rnd",
        }
    }

    pub fn needs_generator(self) -> bool {
        matches!(self, ScenarioKind::Gen3 | ScenarioKind::Gen5x | ScenarioKind::Rnd3)
    }

    fn min_len(self) -> usize {
        match self {
            ScenarioKind::U1 => 1,
            ScenarioKind::U2 | ScenarioKind::Gen3 | ScenarioKind::Gen5x | ScenarioKind::Rnd3 => 2,
            ScenarioKind::U3 => 3,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ScenarioKind {
    type Err = LookaheadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.key() == s || k.label() == s)
            .ok_or(LookaheadError::UnknownScenario(s))
    }
}

/// Parses a comma-separated scenario list such as `u1,u2,gen5x`.
pub fn parse_scenarios(list: &str) -> Result<Vec<ScenarioKind>, LookaheadError> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub num_samples: usize,
    pub seed: u64,
    /// For 3-rnd: draw a logged user utterance instead of generating one.
    #[serde(default)]
    pub corpus_sampler: bool,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        ScenarioSpec {
            kind,
            num_samples: if kind == ScenarioKind::Gen5x { 5 } else { 1 },
            seed,
            corpus_sampler: false,
        }
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.num_samples = n.max(1);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub label: String,
    pub index: usize,
    pub score: f64,
}

impl Vote {
    fn from_top(scores: &[LabelScore]) -> Self {
        Vote {
            label: scores[0].label.clone(),
            index: scores[0].index,
            score: scores[0].score,
        }
    }
}

/// Plurality vote. Ties go to the larger summed score, then to the lowest
/// label index. Returns the position in `votes` of the first winning vote.
pub fn majority_vote(votes: &[Vote]) -> Result<usize, LookaheadError> {
    let mut tally: BTreeMap<usize, (usize, f64, usize)> = BTreeMap::new();
    for (pos, v) in votes.iter().enumerate() {
        let e = tally.entry(v.index).or_insert((0, 0.0, pos));
        e.0 += 1;
        e.1 += v.score;
    }
    // BTreeMap iterates by ascending index, so keeping the first maximum
    // implements the final tie-break.
    let mut best: Option<(usize, f64, usize)> = None;
    for &(count, sum, pos) in tally.values() {
        best = match best {
            Some((bc, bs, bp)) if (count, sum).partial_cmp(&(bc, bs)) != Some(std::cmp::Ordering::Greater) => {
                Some((bc, bs, bp))
            }
            _ => Some((count, sum, pos)),
        };
    }
    best.map(|(_, _, pos)| pos).ok_or(LookaheadError::NoVotes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub window_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    pub label: String,
    pub index: usize,
    pub score: f64,
    /// Top label scores of the (first) classified conversation.
    pub scores: Vec<LabelScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes: Option<Vec<Vote>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_thirds: Option<Vec<String>>,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.gold.as_deref() == Some(self.label.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: ScenarioKind,
    pub t: usize,
    pub d: usize,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// `[t, d]` of the baseline the delta refers to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<[usize; 2]>,
}

impl ScenarioResult {
    pub fn new(scenario: ScenarioKind, t: usize, d: usize) -> Self {
        ScenarioResult {
            scenario,
            t,
            d,
            accuracy: accuracy(t, d),
            delta: None,
            baseline: None,
        }
    }
}

pub fn accuracy(t: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        t as f64 / d as f64
    }
}

/// Sets each result's delta to its accuracy minus the baseline's 1-u
/// accuracy (the baseline's own scenario when it has no 1-u entry).
pub fn apply_baseline(results: &mut [ScenarioResult], baseline: &[ScenarioResult]) {
    let reference = baseline.iter().find(|b| b.scenario == ScenarioKind::U1);
    for r in results {
        let base = reference.or_else(|| baseline.iter().find(|b| b.scenario == r.scenario));
        r.delta = base.map(|b| r.accuracy - b.accuracy);
        r.baseline = base.map(|b| [b.t, b.d]);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub results: Vec<ScenarioResult>,
    pub predictions: BTreeMap<ScenarioKind, Vec<Prediction>>,
}

/// Classifier, optional generator and label space for scenario evaluation.
pub struct Lookahead<'a> {
    classifier: &'a dyn Seq2Seq,
    generator: Option<&'a dyn Seq2Seq>,
    labels: &'a LabelSpace,
    sampling: SamplingConfig,
    free_decoding: bool,
    sampler_pool: Vec<String>,
}

impl<'a> Lookahead<'a> {
    pub fn new(
        classifier: &'a dyn Seq2Seq,
        generator: Option<&'a dyn Seq2Seq>,
        labels: &'a LabelSpace,
        sampling: SamplingConfig,
    ) -> Self {
        Lookahead {
            classifier,
            generator,
            labels,
            sampling,
            free_decoding: false,
            sampler_pool: Vec::new(),
        }
    }

    pub fn with_free_decoding(mut self, on: bool) -> Self {
        self.free_decoding = on;
        self
    }

    /// Utterances the 3-rnd corpus sampler draws from.
    pub fn with_sampler_pool(mut self, pool: Vec<String>) -> Self {
        self.sampler_pool = pool;
        self
    }

    fn classify_turns(&self, turns: &[Turn]) -> Result<crate::backend::Classification, LookaheadError> {
        Ok(classify(
            self.classifier,
            &prompt(TaskKind::Intent, turns),
            self.labels,
            self.free_decoding,
        )?)
    }

    fn generator(&self, kind: ScenarioKind) -> Result<&'a dyn Seq2Seq, LookaheadError> {
        self.generator.ok_or(LookaheadError::MissingGenerator(kind))
    }

    pub fn predict(&self, window: &IntentWindow, spec: &ScenarioSpec) -> Result<Prediction, LookaheadError> {
        let kind = spec.kind;
        if window.len() < kind.min_len() {
            return Err(LookaheadError::ShortWindow {
                window: window.id(),
                len: window.len(),
                scenario: kind,
                needed: kind.min_len(),
            });
        }
        let seed = derive_seed(spec.seed, &window.id());
        let u = &window.utterances;
        let prediction = |c: crate::backend::Classification| Prediction {
            window_id: window.id(),
            gold: window.intent.clone(),
            label: c.label,
            index: c.index,
            score: c.score,
            scores: c.scores,
            votes: None,
            generated_thirds: None,
        };
        match kind {
            ScenarioKind::U1 | ScenarioKind::U2 | ScenarioKind::U3 => {
                let k = kind.min_len();
                Ok(prediction(self.classify_turns(&u[..k])?))
            }
            ScenarioKind::Gen3 | ScenarioKind::Gen5x => {
                let n = if kind == ScenarioKind::Gen3 { 1 } else { spec.num_samples.max(1) };
                let thirds = self
                    .generator(kind)?
                    .generate(&prompt(TaskKind::Gen3, &u[..2]), n, &self.sampling, seed)?
                    .texts;
                let mut classified = Vec::with_capacity(n);
                for third in &thirds {
                    let turns = [u[0].clone(), u[1].clone(), Turn::user(2, third.clone(), None)];
                    classified.push(self.classify_turns(&turns)?);
                }
                let votes: Vec<Vote> = classified.iter().map(|c| Vote::from_top(&c.scores)).collect();
                let winner = majority_vote(&votes)?;
                let (count, sum) = votes
                    .iter()
                    .filter(|v| v.index == votes[winner].index)
                    .fold((0usize, 0.0), |(c, s), v| (c + 1, s + v.score));
                let mut p = prediction(classified.swap_remove(winner));
                p.score = sum / count as f64;
                p.votes = (kind == ScenarioKind::Gen5x).then_some(votes);
                p.generated_thirds = Some(thirds);
                Ok(p)
            }
            ScenarioKind::Rnd3 => {
                let third = if spec.corpus_sampler {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    self.sampler_pool
                        .choose(&mut rng)
                        .cloned()
                        .ok_or(LookaheadError::EmptySampler)?
                } else {
                    let sampling = SamplingConfig {
                        greedy_first: false,
                        ..self.sampling.clone()
                    };
                    self.generator(kind)?
                        .generate(&prompt(TaskKind::Gen3, &[]), 1, &sampling, seed)?
                        .texts
                        .remove(0)
                };
                let turns = [u[0].clone(), u[1].clone(), Turn::user(2, third.clone(), None)];
                let mut p = prediction(self.classify_turns(&turns)?);
                p.generated_thirds = Some(vec![third]);
                Ok(p)
            }
        }
    }

    /// Accuracy `t/d` per scenario plus every per-window prediction.
    pub fn evaluate(&self, windows: &[IntentWindow], specs: &[ScenarioSpec]) -> Result<Evaluation, LookaheadError> {
        if windows.is_empty() || specs.is_empty() {
            return Err(LookaheadError::Empty);
        }
        for w in windows {
            let gold = w.intent.as_ref().ok_or_else(|| LookaheadError::MissingGold(w.id()))?;
            if self.labels.index_of(gold).is_none() {
                return Err(LookaheadError::UnknownGold {
                    window: w.id(),
                    intent: gold.clone(),
                });
            }
        }
        let mut results = Vec::with_capacity(specs.len());
        let mut predictions = BTreeMap::new();
        for spec in specs {
            let preds = windows
                .iter()
                .map(|w| self.predict(w, spec))
                .collect::<Result<Vec<_>, _>>()?;
            let t = preds.iter().filter(|p| p.correct()).count();
            results.push(ScenarioResult::new(spec.kind, t, preds.len()));
            predictions.insert(spec.kind, preds);
        }
        Ok(Evaluation { results, predictions })
    }
}
