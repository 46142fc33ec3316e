//! Weak labelling of unlabelled windows by agreement of two independently
//! trained classifiers.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{IntentWindow, Split};
use crate::tasks::serialize_utterances;
use crate::text::{hash_feature, tokenize};

#[derive(Debug, thiserror::Error)]
pub enum WeakError {
    #[error("weak labelling needs exactly 2 classifier backends, got {0}")]
    BackendCount(usize),
    #[error("backend `{0}` was used before fit")]
    Unfitted(String),
    #[error("cannot fit `{0}` on an empty training set")]
    EmptyTraining(String),
    #[error("bad backend spec `{spec}`: {message}")]
    Spec { spec: String, message: String },
}

/// A single-label text classifier.
pub trait ClassifierBackend: Send {
    fn name(&self) -> &str;
    fn fit(&mut self, examples: &[(String, String)]) -> Result<(), WeakError>;
    /// Predicted label (one of the training labels) with a score in `[0, 1]`.
    fn predict(&self, text: &str) -> Result<(String, f64), WeakError>;
}

const BUCKETS: usize = 1 << 15;

fn features(text: &str, buckets: usize) -> Vec<usize> {
    let toks = tokenize(text);
    let mut out: Vec<usize> = toks.iter().map(|t| hash_feature(&["u", t], buckets)).collect();
    out.extend(toks.windows(2).map(|w| hash_feature(&["b", &w[0], &w[1]], buckets)));
    out
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Multinomial logistic regression over hashed unigram and bigram features.
/// Different seeds give different initialisations and example orders.
pub struct LinearClassifier {
    name: String,
    seed: u64,
    epochs: usize,
    learning_rate: f64,
    labels: Vec<String>,
    weights: Vec<f64>,
}

impl LinearClassifier {
    pub fn new(seed: u64) -> Self {
        LinearClassifier {
            name: format!("linear:seed={seed}"),
            seed,
            epochs: 12,
            learning_rate: 0.5,
            labels: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    fn logits(&self, feats: &[usize]) -> Vec<f64> {
        let k = self.labels.len();
        let mut out = vec![0.0; k];
        for &f in feats {
            let row = &self.weights[f * k..(f + 1) * k];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w;
            }
        }
        out
    }
}

impl ClassifierBackend for LinearClassifier {
    fn name(&self) -> &str {
        &self.name
    }

    fn fit(&mut self, examples: &[(String, String)]) -> Result<(), WeakError> {
        if examples.is_empty() {
            return Err(WeakError::EmptyTraining(self.name.clone()));
        }
        let mut labels: Vec<String> = examples.iter().map(|(_, l)| l.clone()).collect();
        labels.sort();
        labels.dedup();
        let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let k = labels.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let data: Vec<(Vec<usize>, usize)> = examples
            .iter()
            .map(|(t, l)| (features(t, BUCKETS), index[l.as_str()]))
            .collect();
        self.labels = labels;
        self.weights = (0..BUCKETS * k).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let mut order: Vec<usize> = (0..data.len()).collect();
        for epoch in 0..self.epochs {
            order.shuffle(&mut rng);
            let lr = self.learning_rate / (1.0 + epoch as f64);
            for &i in &order {
                let (feats, gold) = &data[i];
                if feats.is_empty() {
                    continue;
                }
                let mut p = self.logits(feats);
                softmax_in_place(&mut p);
                p[*gold] -= 1.0;
                let scale = lr / feats.len() as f64;
                for &f in feats {
                    let row = &mut self.weights[f * k..(f + 1) * k];
                    for (w, g) in row.iter_mut().zip(&p) {
                        *w -= scale * g;
                    }
                }
            }
        }
        Ok(())
    }

    fn predict(&self, text: &str) -> Result<(String, f64), WeakError> {
        if self.labels.is_empty() {
            return Err(WeakError::Unfitted(self.name.clone()));
        }
        let mut p = self.logits(&features(text, BUCKETS));
        softmax_in_place(&mut p);
        let (best, score) = p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
        Ok((self.labels[best].clone(), score))
    }
}

/// Multinomial naive Bayes with add-one smoothing over unigram/bigram tokens.
pub struct NaiveBayes {
    name: String,
    labels: Vec<String>,
    priors: Vec<f64>,
    counts: Vec<HashMap<usize, f64>>,
    totals: Vec<f64>,
}

impl NaiveBayes {
    pub fn new() -> Self {
        NaiveBayes {
            name: "nb".into(),
            labels: Vec::new(),
            priors: Vec::new(),
            counts: Vec::new(),
            totals: Vec::new(),
        }
    }
}

impl Default for NaiveBayes {
    fn default() -> Self {
        Self::new()
    }
}

impl ClassifierBackend for NaiveBayes {
    fn name(&self) -> &str {
        &self.name
    }

    fn fit(&mut self, examples: &[(String, String)]) -> Result<(), WeakError> {
        if examples.is_empty() {
            return Err(WeakError::EmptyTraining(self.name.clone()));
        }
        let mut labels: Vec<String> = examples.iter().map(|(_, l)| l.clone()).collect();
        labels.sort();
        labels.dedup();
        let k = labels.len();
        let mut counts = vec![HashMap::new(); k];
        let mut totals = vec![0.0; k];
        let mut docs = vec![0.0; k];
        for (text, label) in examples {
            let c = labels.binary_search(label).expect("label collected above");
            docs[c] += 1.0;
            for f in features(text, BUCKETS) {
                *counts[c].entry(f).or_insert(0.0) += 1.0;
                totals[c] += 1.0;
            }
        }
        let n: f64 = docs.iter().sum();
        self.priors = docs.iter().map(|d| (d / n).ln()).collect();
        self.labels = labels;
        self.counts = counts;
        self.totals = totals;
        Ok(())
    }

    fn predict(&self, text: &str) -> Result<(String, f64), WeakError> {
        if self.labels.is_empty() {
            return Err(WeakError::Unfitted(self.name.clone()));
        }
        let feats = features(text, BUCKETS);
        let mut scores: Vec<f64> = (0..self.labels.len())
            .map(|c| {
                let denom = self.totals[c] + BUCKETS as f64;
                self.priors[c]
                    + feats
                        .iter()
                        .map(|f| ((self.counts[c].get(f).copied().unwrap_or(0.0) + 1.0) / denom).ln())
                        .sum::<f64>()
            })
            .collect();
        softmax_in_place(&mut scores);
        let (best, score) = scores
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
        Ok((self.labels[best].clone(), score))
    }
}

/// Parses `linear[:seed=N][,epochs=E]` or `nb`.
pub fn parse_backend_spec(spec: &str) -> Result<Box<dyn ClassifierBackend>, WeakError> {
    let err = |message: String| WeakError::Spec {
        spec: spec.to_string(),
        message,
    };
    let (kind, args) = spec.split_once(':').unwrap_or((spec, ""));
    let mut params = HashMap::new();
    for kv in args.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| err(format!("expected key=value, got `{kv}`")))?;
        let v: u64 = v.parse().map_err(|e| err(format!("`{k}`: {e}")))?;
        params.insert(k.trim().to_string(), v);
    }
    match kind.trim() {
        "linear" => {
            let mut c = LinearClassifier::new(params.remove("seed").unwrap_or(0));
            if let Some(e) = params.remove("epochs") {
                c = c.with_epochs(e as usize);
            }
            if let Some(k) = params.keys().next() {
                return Err(err(format!("unknown parameter `{k}`")));
            }
            Ok(Box::new(c))
        }
        "nb" if params.is_empty() => Ok(Box::new(NaiveBayes::new())),
        other => Err(err(format!("unknown backend `{other}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddedLabel {
    pub window_id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLabelReport {
    pub total_unlabeled: usize,
    pub agreed: usize,
    pub added: Vec<AddedLabel>,
    /// Dev accuracy per backend, in backend order.
    pub dev_accuracy: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct WeakLabelOutcome {
    pub report: WeakLabelReport,
    /// Labelled copies of the agreed windows, in the weak split.
    pub windows: Vec<IntentWindow>,
}

/// Options for [`weak_label`]. `utterances` is how many leading utterances
/// the classifiers see (1 = first user utterance only).
#[derive(Debug, Clone, Copy)]
pub struct WeakOptions {
    pub utterances: usize,
}

impl Default for WeakOptions {
    fn default() -> Self {
        WeakOptions { utterances: 1 }
    }
}

fn classifier_text(w: &IntentWindow, k: usize) -> String {
    serialize_utterances(&w.utterances[..k.min(w.len()).max(1)])
}

/// Trains both backends on the supervised windows and labels every
/// unlabelled window on which they agree.
pub fn weak_label(
    unlabeled: &[IntentWindow],
    supervised: &[IntentWindow],
    dev: &[IntentWindow],
    backends: &mut [Box<dyn ClassifierBackend>],
    options: WeakOptions,
) -> Result<WeakLabelOutcome, WeakError> {
    if backends.len() != 2 {
        return Err(WeakError::BackendCount(backends.len()));
    }
    let train: Vec<(String, String)> = supervised
        .iter()
        .filter_map(|w| Some((classifier_text(w, options.utterances), w.intent.clone()?)))
        .collect();
    for b in backends.iter_mut() {
        b.fit(&train)?;
    }
    let mut dev_accuracy = Vec::with_capacity(2);
    for b in backends.iter() {
        let labelled: Vec<&IntentWindow> = dev.iter().filter(|w| w.intent.is_some()).collect();
        let correct = labelled
            .iter()
            .map(|w| b.predict(&classifier_text(w, options.utterances)).map(|(l, _)| Some(l) == w.intent))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter(|c| *c)
            .count();
        let acc = if labelled.is_empty() { 0.0 } else { correct as f64 / labelled.len() as f64 };
        dev_accuracy.push((b.name().to_string(), acc));
    }
    let mut added = Vec::new();
    let mut windows = Vec::new();
    for w in unlabeled {
        let text = classifier_text(w, options.utterances);
        let (a, _) = backends[0].predict(&text)?;
        let (b, _) = backends[1].predict(&text)?;
        if a == b {
            added.push(AddedLabel {
                window_id: w.id(),
                label: a.clone(),
            });
            let mut labelled = w.clone();
            labelled.intent = Some(a);
            labelled.split = Split::Weak;
            for t in labelled.utterances.iter_mut().filter(|t| t.speaker == crate::corpus::Speaker::User) {
                t.intent = labelled.intent.clone();
            }
            windows.push(labelled);
        }
    }
    Ok(WeakLabelOutcome {
        report: WeakLabelReport {
            total_unlabeled: unlabeled.len(),
            agreed: added.len(),
            added,
            dev_accuracy,
        },
        windows,
    })
}
