//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Criteria needing the public MultiWOZ and
//! SGD releases read `MULTIWOZ_DIR` / `SGD_DIR` and fail as BLOCKED without them.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lookahead_intent::backend::{
    new_backend, BackendConfig, BackendKind, LabelScore, SamplingConfig, ScriptRecord, ScriptedBackend,
};
use lookahead_intent::conflict::{run_conflicts, ConflictMode, FinalRule, Resolver, ResponseIndex, WindowScores};
use lookahead_intent::corpus::{
    extract_intent_windows, synth_edu, truncate_windows, IntentWindow, Split,
    SplitSizes, SynthSpec, Turn,
};
use lookahead_intent::harness::config::{CorpusConfig, CorpusFormat, SyntheticConfig};
use lookahead_intent::harness::report::{format_accuracy, format_delta, format_reduction};
use lookahead_intent::harness::{prep_corpus, run_pipeline, EvalRecord, GeneratorRef};
use lookahead_intent::lookahead::{accuracy, majority_vote, Lookahead, ScenarioKind, ScenarioResult, ScenarioSpec, Vote};
use lookahead_intent::records::{derive_seed, read_jsonl};
use lookahead_intent::regime::{label_space, run_regime, RegimeName, RegimeSpec};
use lookahead_intent::tasks::{
    apply_reorder_target, build_mixture, build_reorder_examples, parse_reorder_input, prompt, reorder_count, verbalize,
    LabelSpace, MixtureSpec, TaskKind, PAPER_RATIOS, SEPARATOR,
};

const ROOT_SEED: u64 = 20240611;

enum Outcome {
    Pass(String),
    Fail(String),
    Blocked(String),
}

type Check = fn() -> Outcome;

fn pass_if(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

// 1. window extraction vs a brute-force maximal-segment scanner.
fn window_oracle() -> Outcome {
    let start = Instant::now();
    let dialogues = common::random_dialogues(500, 12, 4, derive_seed(ROOT_SEED, "acceptance/windows"));
    let mut mismatches = 0;
    let mut windows = 0;
    for d in &dialogues {
        let got: Vec<(usize, usize, Option<String>)> = extract_intent_windows(std::slice::from_ref(d))
            .iter()
            .map(|w| {
                let content_ok = w.utterances == d.turns[w.utterances[0].index..=w.utterances.last().unwrap().index];
                let first = if content_ok { w.utterances[0].index } else { usize::MAX };
                (first, w.utterances.last().unwrap().index, w.intent.clone())
            })
            .collect();
        let want = common::brute_force_windows(d);
        windows += want.len();
        if got != want {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    pass_if(
        mismatches == 0 && secs < 10.0,
        format!("{mismatches} mismatching dialogues of 500 ({windows} windows), {secs:.2} s (limit 10 s)"),
    )
}

/// Plurality, then larger summed score, then lowest label index. Scores are
/// integers here so that sums are exact.
fn vote_oracle(votes: &[(usize, i64)]) -> usize {
    let mut tally: BTreeMap<usize, (usize, i64)> = BTreeMap::new();
    for &(label, score) in votes {
        let e = tally.entry(label).or_default();
        e.0 += 1;
        e.1 += score;
    }
    let best = tally.values().copied().max().unwrap();
    *tally.iter().find(|(_, v)| **v == best).unwrap().0
}

fn to_votes(votes: &[(usize, i64)], unit: f64) -> Vec<Vote> {
    votes
        .iter()
        .map(|&(label, score)| Vote {
            label: format!("l{label}"),
            index: label,
            score: score as f64 * unit,
        })
        .collect()
}

// 2. majority vote, exhaustive over 5 votes on 3 labels plus randomized ties.
fn vote_equivalence() -> Outcome {
    let mut mismatches = 0;
    for code in 0..243usize {
        let votes: Vec<(usize, i64)> = (0..5).map(|k| ((code / 3usize.pow(k)) % 3, 1)).collect();
        let got = majority_vote(&to_votes(&votes, 1.0)).map(|p| votes[p].0);
        if got.ok() != Some(vote_oracle(&votes)) {
            mismatches += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ROOT_SEED, "acceptance/votes"));
    let (mut count_ties, mut sum_ties) = (0, 0);
    for _ in 0..1000 {
        let labels = rng.gen_range(2..=5);
        let (a, b) = {
            let mut pick: Vec<usize> = (0..labels).collect();
            pick.shuffle(&mut rng);
            (pick[0], pick[1])
        };
        let k: usize = rng.gen_range(1..=3);
        let mut votes: Vec<(usize, i64)> = Vec::new();
        let scores: Vec<i64> = (0..k).map(|_| rng.gen_range(1..=4)).collect();
        let mirror = rng.gen_bool(0.5);
        for &s in &scores {
            votes.push((a, s));
        }
        for &s in &scores {
            votes.push((b, if mirror { s } else { rng.gen_range(1..=4) }));
        }
        for _ in 0..rng.gen_range(0..=k.saturating_sub(1)) {
            let other = rng.gen_range(0..labels);
            if other != a && other != b {
                votes.push((other, rng.gen_range(1..=4)));
            }
        }
        votes.shuffle(&mut rng);
        count_ties += 1;
        let sum = |l: usize| votes.iter().filter(|v| v.0 == l).map(|v| v.1).sum::<i64>();
        if sum(a) == sum(b) {
            sum_ties += 1;
        }
        // Quarter steps are exact in binary, so float sums tie exactly too.
        let got = majority_vote(&to_votes(&votes, 0.25)).map(|p| votes[p].0);
        if got.ok() != Some(vote_oracle(&votes)) {
            mismatches += 1;
        }
    }
    pass_if(
        mismatches == 0,
        format!("{mismatches} mismatches over 243 exhaustive + 1000 tie cases ({count_ties} count ties, {sum_ties} also tied on score)"),
    )
}

/// Tenths of a percent by long division, rounded half toward +infinity.
fn tenths_oracle(num: i128, den: i128) -> String {
    let (q, r) = ((1000 * num.abs()) / den, (1000 * num.abs()) % den);
    let v = if num >= 0 {
        q + i128::from(2 * r >= den)
    } else {
        -(q + i128::from(2 * r > den))
    };
    let body = format!("{}.{}", v.abs() / 10, v.abs() % 10);
    if v < 0 {
        format!("-{body}")
    } else {
        body
    }
}

// 3. accuracy exactness and report rounding.
fn metric_exactness() -> Outcome {
    let mut problems = Vec::new();
    for (t, d) in [(230, 233), (0, 7), (7, 7), (1, 3), (2, 3), (3405, 4995), (99, 200), (1, 1)] {
        let want = t as f64 / d as f64;
        let r = ScenarioResult::new(ScenarioKind::U3, t, d);
        if accuracy(t, d) != want || r.accuracy != want {
            problems.push(format!("accuracy({t},{d})"));
        }
    }
    if format_accuracy(230, 233) != "98.7" {
        problems.push(format!("(230, 233) rendered {}", format_accuracy(230, 233)));
    }
    for d in [1usize, 3, 8, 16, 50, 200, 233, 4995] {
        for t in 0..=d {
            if format_accuracy(t, d) != tenths_oracle(t as i128, d as i128) {
                problems.push(format!("format_accuracy({t},{d})"));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ROOT_SEED, "acceptance/deltas"));
    for _ in 0..2000 {
        let (d, bd) = (rng.gen_range(1..300usize), rng.gen_range(1..300usize));
        let (t, bt) = (rng.gen_range(0..=d), rng.gen_range(0..=bd));
        let oracle = tenths_oracle((t * bd) as i128 - (bt * d) as i128, (d * bd) as i128);
        let want = if oracle.starts_with('-') || oracle == "0.0" { oracle } else { format!("+{oracle}") };
        if format_delta(t, d, bt, bd) != want {
            problems.push(format!("format_delta({t},{d},{bt},{bd})"));
        }
    }
    for (b, a, want) in [(100, 69, "31%"), (100, 92, "8%"), (200, 197, "2%"), (8, 7, "13%"), (3, 0, "100%")] {
        if format_reduction(b, a) != want {
            problems.push(format!("format_reduction({b},{a})"));
        }
    }
    // Published cells at the published test sizes; some cells at d = 233 have
    // no numerator that rounds to them and are only listed.
    let cells: [(usize, &[&str]); 2] = [
        (233, &["90.5", "93.1", "95.5", "96.6", "94.4", "97.2", "98.7", "98.3"]),
        (4995, &["68.2", "68.5", "73.2", "73.6", "74.0", "71.1", "74.2", "74.6", "75.8"]),
    ];
    let mut reproduced = 0;
    let mut unreachable = Vec::new();
    for (d, values) in cells {
        for v in values {
            if (0..=d).any(|t| format_accuracy(t, d) == *v) {
                reproduced += 1;
            } else {
                unreachable.push(format!("{v}@{d}"));
            }
        }
    }
    pass_if(
        problems.is_empty(),
        format!(
            "(230, 233) -> \"{}\"; {} problems; {reproduced} table cells reproducible, not reachable by any t/d: {}",
            format_accuracy(230, 233),
            problems.len(),
            unreachable.join(" ")
        ),
    )
}

// 4. reorder count is floor(r * B).
fn mixture_ratios() -> Outcome {
    let pool = extract_intent_windows(&synth_edu(&SynthSpec::new(6, 1200, derive_seed(ROOT_SEED, "acceptance/mix"))));
    let tenths = [0i64, 1, 3, 5, 10];
    let mut problems = Vec::new();
    for budget in [7usize, 100, 1000] {
        for (&ratio, &r10) in PAPER_RATIOS.iter().zip(&tenths) {
            let want = (r10 as usize * budget) / 10;
            let spec = MixtureSpec::new(ratio, [TaskKind::Gen3, TaskKind::Reorder]).with_budget(budget);
            let built = build_mixture(&spec, &pool, &[], derive_seed(ROOT_SEED, "acceptance/mix/build"));
            let counts = built.as_ref().map(|m| {
                let n = |k: TaskKind| m.examples.iter().filter(|e| e.task == k).count();
                (n(TaskKind::Reorder), n(TaskKind::Gen3))
            });
            if reorder_count(ratio, budget) != want || counts.as_ref().ok() != Some(&(want, budget - want)) {
                problems.push(format!("B={budget} r={ratio}"));
            }
        }
    }
    pass_if(
        problems.is_empty(),
        format!("15 (B, r) pairs checked, mismatches: [{}]", problems.join(", ")),
    )
}

// 5. reorder round-trip on windows of at most five utterances.
fn reorder_round_trip() -> Outcome {
    let mut windows: Vec<IntentWindow> = Vec::new();
    let mut seed = derive_seed(ROOT_SEED, "acceptance/reorder");
    while windows.len() < 1000 {
        let mut batch = extract_intent_windows(&common::random_dialogues(400, 12, 2, seed));
        truncate_windows(&mut batch, 5);
        for (k, mut w) in batch.into_iter().enumerate() {
            w.dialogue_id = format!("{}-{seed}-{k}", w.dialogue_id);
            windows.push(w);
        }
        seed = seed.wrapping_add(1);
    }
    windows.truncate(1000);
    let lengths: BTreeMap<usize, usize> = windows.iter().fold(BTreeMap::new(), |mut m, w| {
        *m.entry(w.len()).or_default() += 1;
        m
    });
    let examples = build_reorder_examples(&windows, derive_seed(ROOT_SEED, "acceptance/reorder/perm"));
    let mut ok = 0;
    for (w, ex) in windows.iter().zip(&examples) {
        let original: Vec<String> = w.utterances.iter().map(|t| format!("{} {}", t.speaker.tag(), t.text)).collect();
        // Independent decoding: split on the separator and index by marker.
        let body = ex.input.strip_prefix("reorder: ").unwrap_or("");
        let mut by_marker = BTreeMap::new();
        for seg in body.split(SEPARATOR) {
            if let Some((marker, rest)) = seg.split_once(' ') {
                by_marker.insert(marker.to_string(), rest.to_string());
            }
        }
        let oracle: Vec<String> = ex
            .target
            .split_whitespace()
            .filter_map(|m| by_marker.get(m).cloned())
            .collect();
        let library = apply_reorder_target(&parse_reorder_input(&ex.input), &ex.target);
        let identity = (1..=w.len()).map(|k| format!("({k})")).collect::<Vec<_>>().join(" ");
        if oracle == original && library.as_ref() == Some(&original) && ex.target != identity {
            ok += 1;
        }
    }
    let n = windows.len();
    pass_if(
        ok == n && examples.len() == n,
        format!("{ok}/{n} reconstructed (lengths {lengths:?}), 0 identity permutations required"),
    )
}

fn scenario_run(dir: &Path) -> Result<Vec<EvalRecord>, String> {
    let mut cfg = common::scenario_pipeline(dir, &dir.join("run"), 200, ROOT_SEED);
    cfg.conflicts.enabled = false;
    let run = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    read_jsonl(&run.reports().join("results.jsonl")).map_err(|e| e.to_string())
}

// 6. scenario ordering under a context-sensitive scripted backend.
fn scenario_ordering() -> Outcome {
    let start = Instant::now();
    let (a, b) = match (tempfile::tempdir(), tempfile::tempdir()) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Outcome::Fail("cannot create temp dirs".into()),
    };
    let (first, second) = match (scenario_run(a.path()), scenario_run(b.path())) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return Outcome::Fail(e),
    };
    let acc = |kind: ScenarioKind| {
        first
            .iter()
            .find(|r| {
                r.classifier == RegimeName::Sdc
                    && r.result.scenario == kind
                    && (!kind.needs_generator() || r.generator == Some(GeneratorRef::SelfModel))
            })
            .map(|r| r.result.accuracy)
            .unwrap_or(f64::NAN)
    };
    let [u1, u2, u3, gen3, gen5, rnd] =
        [ScenarioKind::U1, ScenarioKind::U2, ScenarioKind::U3, ScenarioKind::Gen3, ScenarioKind::Gen5x, ScenarioKind::Rnd3]
            .map(acc);
    let ordered = u1 < u2 && u2 < u3 && gen5 >= gen3 && gen3 > rnd;
    let deterministic = serde_json::to_string(&first).ok() == serde_json::to_string(&second).ok();
    let secs = start.elapsed().as_secs_f64();
    pass_if(
        ordered && deterministic && secs < 60.0,
        format!(
            "1-u {u1:.3} < 2-u {u2:.3} < 3-u {u3:.3}; 3-5xg {gen5:.3} >= 3-gen {gen3:.3} > 3-rnd {rnd:.3}; identical reruns: {deterministic}; {secs:.1} s (limit 60 s)"
        ),
    )
}

const CONFLICT_LABELS: [&str; 8] = [
    "book_taxi", "cancel_order", "check_weather", "find_hotel", "order_food", "pay_bill", "play_music", "track_parcel",
];

/// Outcome class of conflict fixture case `i`.
#[derive(Clone, Copy, PartialEq)]
enum Case {
    /// Correct prior, rank-2 above the threshold when `close`.
    Correct { close: bool },
    /// Wrong prior, gold at rank 2.
    GoldSecond { close: bool },
    /// Wrong prior, gold below rank 2.
    GoldLower,
}

fn conflict_case(i: usize) -> Case {
    match i % 20 {
        0 => Case::Correct { close: true },
        1..=11 => Case::Correct { close: false },
        12 | 13 => Case::GoldSecond { close: true },
        14 | 15 => Case::GoldSecond { close: false },
        _ => Case::GoldLower,
    }
}

struct ConflictFixture {
    windows: Vec<IntentWindow>,
    priors: Vec<WindowScores>,
    corpus: Vec<IntentWindow>,
    script: Vec<ScriptRecord>,
}

fn bot_response(intent: &str) -> String {
    format!("let me help with {}.", verbalize(intent))
}

/// 200 cases. The counterfactual conversation of the gold candidate is
/// recognised when `reliable(i)`; otherwise the wrong candidate's is.
fn conflict_fixture(reliable: impl Fn(usize) -> bool) -> ConflictFixture {
    let labels = LabelSpace::new(CONFLICT_LABELS).unwrap();
    let n = CONFLICT_LABELS.len();
    let corpus: Vec<IntentWindow> = CONFLICT_LABELS
        .iter()
        .map(|l| IntentWindow {
            dialogue_id: format!("ref-{l}"),
            segment: 0,
            intent: Some(l.to_string()),
            utterances: vec![
                Turn::user(0, format!("about {}", verbalize(l)), Some(l)),
                Turn::bot(1, bot_response(l)),
                Turn::user(2, "yes", Some(l)),
            ],
            split: Split::Supervised,
        })
        .collect();
    let (mut windows, mut priors, mut script) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..200 {
        let g = i % n;
        let gold = CONFLICT_LABELS[g];
        let first = Turn::user(0, format!("case {i} opening"), Some(gold));
        windows.push(IntentWindow {
            dialogue_id: format!("c{i:03}"),
            segment: 0,
            intent: Some(gold.to_string()),
            utterances: vec![first.clone(), Turn::bot(1, format!("reply {i}")), Turn::user(2, format!("case {i} follow-up"), Some(gold))],
            split: Split::Test,
        });
        let (order, top2): (Vec<usize>, [f64; 2]) = match conflict_case(i) {
            Case::Correct { close } => (vec![g, (g + 1) % n, (g + 2) % n], if close { [0.45, 0.40] } else { [0.80, 0.10] }),
            Case::GoldSecond { close } => (vec![(g + 1) % n, g, (g + 2) % n], if close { [0.50, 0.35] } else { [0.70, 0.20] }),
            Case::GoldLower => (vec![(g + 1) % n, (g + 2) % n, g], [0.60, 0.20]),
        };
        let rest = (1.0 - top2[0] - top2[1]) / (n - 2) as f64;
        let mut ranked = order.clone();
        ranked.extend((0..n).filter(|k| !order.contains(k)));
        let scores: Vec<LabelScore> = ranked
            .iter()
            .enumerate()
            .map(|(rank, &k)| LabelScore {
                label: labels.label(k).to_string(),
                index: k,
                score: if rank < 2 { top2[rank] } else { rest },
            })
            .collect();
        priors.push(WindowScores {
            window_id: windows[i].id(),
            gold: Some(gold.to_string()),
            scores,
        });
        // Counterfactual thirds and their classifications for the two candidates.
        for &cand in &order[..2] {
            let c = CONFLICT_LABELS[cand];
            let response = Turn::bot(1, bot_response(c));
            let third = format!("case {i} as {}", verbalize(c));
            script.push(ScriptRecord::exact(&prompt(TaskKind::Gen3, &[first.clone(), response.clone()]), third.clone(), -0.3));
            let conv = prompt(TaskKind::Intent, &[first.clone(), response, Turn::user(2, third, None)]);
            let own_wins = (cand == g) == reliable(i);
            let other = if own_wins { cand } else { order[..2].iter().copied().find(|&k| k != cand).unwrap() };
            script.push(ScriptRecord::exact(&conv, verbalize(CONFLICT_LABELS[other]), -0.1));
        }
    }
    ConflictFixture {
        windows,
        priors,
        corpus,
        script,
    }
}

fn conflict_reports(fx: &ConflictFixture) -> Result<BTreeMap<&'static str, (f64, usize, usize)>, String> {
    let labels = LabelSpace::new(CONFLICT_LABELS).unwrap();
    let backend = ScriptedBackend::new(fx.script.clone()).map_err(|e| e.to_string())?;
    let resolver = Resolver {
        generator: &backend,
        classifier: &backend,
        labels: &labels,
        responses: ResponseIndex::new(&fx.corpus),
        sampling: SamplingConfig::default(),
        rule: FinalRule::MaxOwnScore,
        seed: derive_seed(ROOT_SEED, "acceptance/conflicts"),
    };
    let mut out = BTreeMap::new();
    for mode in ConflictMode::ALL {
        let (report, _) =
            run_conflicts(&resolver, &fx.windows, &fx.priors, mode, 0.3).map_err(|e| e.to_string())?;
        out.insert(
            mode.as_str(),
            (report.error_reduction.unwrap_or(f64::NAN), report.mistakes_before, report.mistakes_after),
        );
    }
    Ok(out)
}

// 7. conflict resolution: perfect classifier, then the mode ordering.
fn conflict_fidelity() -> Outcome {
    let perfect = match conflict_reports(&conflict_fixture(|_| true)) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e),
    };
    // Gold's counterfactual is recognised in blocks 0, 1, 5 and 6 of 20 cases.
    let partial = match conflict_reports(&conflict_fixture(|i| (i / 20) % 5 < 2)) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e),
    };
    let er = |m: &BTreeMap<&str, (f64, usize, usize)>, k: &str| m[k].0;
    let perfect_er = er(&perfect, "conflict-oracle");
    let (c, m, t) = (er(&partial, "conflict-oracle"), er(&partial, "mistake-oracle"), er(&partial, "threshold"));
    pass_if(
        perfect_er == 1.0 && c > m && m > t,
        format!(
            "(a) perfect conflict-oracle error reduction {perfect_er}; (b) conflict-oracle {} > mistake-oracle {} > threshold {}",
            format_reduction(partial["conflict-oracle"].1, partial["conflict-oracle"].2),
            format_reduction(partial["mistake-oracle"].1, partial["mistake-oracle"].2),
            format_reduction(partial["threshold"].1, partial["threshold"].2),
        ),
    )
}

fn env_dir(var: &str) -> Option<PathBuf> {
    std::env::var_os(var).map(PathBuf::from).filter(|p| p.exists())
}

fn public_corpus(format: CorpusFormat, path: PathBuf, sizes: SplitSizes, out: &Path) -> Result<lookahead_intent::harness::PrepReport, String> {
    let corpus = CorpusConfig {
        format,
        path: Some(path),
        name: None,
        split_sizes: sizes,
        synthetic: SyntheticConfig::default(),
        max_window: Some(3),
    };
    prep_corpus(&corpus, ROOT_SEED, out).map_err(|e| e.to_string())
}

// 8. tiny backend on the MultiWOZ supervised split, SDC regime.
fn training_smoke() -> Outcome {
    let Some(dir) = env_dir("MULTIWOZ_DIR") else {
        return Outcome::Blocked("MULTIWOZ_DIR is not set; the MultiWOZ 2.2 release is required".into());
    };
    let start = Instant::now();
    let tmp = tempfile::tempdir().expect("temp dir");
    let sizes = SplitSizes::new(2538, 1012, 211, 233);
    if let Err(e) = public_corpus(CorpusFormat::Multiwoz, dir, sizes, tmp.path()) {
        return Outcome::Fail(e);
    }
    let (splits, _) = match lookahead_intent::corpus::read_splits(tmp.path()) {
        Ok(s) => s,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let config = BackendConfig {
        seed: derive_seed(ROOT_SEED, "acceptance/tiny"),
        ..BackendConfig::default()
    };
    let mixture = MixtureSpec::new(0.1, [TaskKind::Gen3, TaskKind::Reorder]);
    let spec = RegimeSpec::new(RegimeName::Sdc, mixture, config.clone(), config.seed);
    let mut backend = match new_backend(BackendKind::Tiny, &config, None) {
        Ok(b) => b,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let manifest = match run_regime(&spec, &splits, &[], backend.as_mut()) {
        Ok((m, _)) => m,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let Some(log) = manifest.stages.last().and_then(|s| s.log.clone()) else {
        return Outcome::Fail("no training log".into());
    };
    let losses: Vec<f64> = log.epochs.iter().take(3).map(|e| e.train_loss).collect();
    let decreasing = losses.len() == 3 && losses[0] > losses[1] && losses[1] > losses[2];
    let labels = match label_space(&splits) {
        Ok(l) => l,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let engine = Lookahead::new(backend.as_ref(), None, &labels, config.sampling.clone());
    let spec = |kind| ScenarioSpec {
        kind,
        num_samples: 1,
        seed: ROOT_SEED,
        corpus_sampler: false,
    };
    let eval = match engine.evaluate(&splits.dev, &[spec(ScenarioKind::U1), spec(ScenarioKind::U3)]) {
        Ok(e) => e,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let (a1, a3) = (eval.results[0].accuracy, eval.results[1].accuracy);
    let secs = start.elapsed().as_secs_f64();
    pass_if(
        decreasing && a3 >= a1 && secs <= 4.0 * 3600.0,
        format!("first losses {losses:?}; dev 3-u {a3:.3} vs 1-u {a1:.3}; {secs:.0} s (limit 4 h CPU)"),
    )
}

// 9. dataset shapes of the public corpora.
fn dataset_shapes() -> Outcome {
    let (Some(mw), Some(sgd)) = (env_dir("MULTIWOZ_DIR"), env_dir("SGD_DIR")) else {
        return Outcome::Blocked("MULTIWOZ_DIR and SGD_DIR must point at the public MultiWOZ 2.2 and SGD releases".into());
    };
    let tmp = tempfile::tempdir().expect("temp dir");
    let runs = [
        (CorpusFormat::Multiwoz, mw, SplitSizes::new(2538, 1012, 211, 233), 11usize, 3994usize),
        (CorpusFormat::Sgd, sgd, SplitSizes::new(23128, 1000, 4933, 4995), 86, 34056),
    ];
    let mut ok = true;
    let mut details = Vec::new();
    for (k, (format, path, sizes, intents, pool)) in runs.into_iter().enumerate() {
        match public_corpus(format, path, sizes, &tmp.path().join(k.to_string())) {
            Ok(report) => {
                ok &= report.label_count == intents;
                details.push(format!(
                    "{:?}: {} intents (want {intents}), pool {} windows (soft target {pool})",
                    format, report.label_count, report.pool_windows
                ));
            }
            Err(e) => {
                ok = false;
                details.push(format!("{format:?}: {e}"));
            }
        }
    }
    pass_if(ok, details.join("; "))
}

// 10. re-running stages from the manifest reproduces every record.
fn determinism() -> Outcome {
    let tmp = match tempfile::tempdir() {
        Ok(t) => t,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let records = |root: &Path| -> Vec<(PathBuf, Vec<u8>)> {
        ["predictions", "reports"]
            .iter()
            .flat_map(|d| {
                common::snapshot(&root.join(d))
                    .into_iter()
                    .map(move |(p, b)| (Path::new(d).join(p), b))
            })
            .collect()
    };
    let cfg_a = common::scenario_pipeline(tmp.path(), &tmp.path().join("a"), 120, ROOT_SEED);
    let cfg_b = common::scenario_pipeline(tmp.path(), &tmp.path().join("b"), 120, ROOT_SEED);
    if let Err(e) = run_pipeline(&cfg_a) {
        return Outcome::Fail(e.to_string());
    }
    let first = records(&cfg_a.run_dir);
    // Replay every stage in the same run directory, keeping only the manifest.
    for d in ["stages", "splits", "predictions", "reports", "checkpoints", "examples"] {
        let _ = std::fs::remove_dir_all(cfg_a.run_dir.join(d));
    }
    if let Err(e) = run_pipeline(&cfg_a) {
        return Outcome::Fail(e.to_string());
    }
    let replay = records(&cfg_a.run_dir);
    if let Err(e) = run_pipeline(&cfg_b) {
        return Outcome::Fail(e.to_string());
    }
    let fresh = records(&cfg_b.run_dir);
    let same_dir = first == replay;
    let other_dir = first == fresh;
    pass_if(
        same_dir && other_dir && !first.is_empty(),
        format!(
            "{} record files; replay in place identical: {same_dir}; fresh run dir identical: {other_dir}",
            first.len()
        ),
    )
}

fn main() {
    let checks: [(u8, &str, Check); 10] = [
        (1, "window extraction matches brute force", window_oracle),
        (2, "majority vote matches exhaustive oracle", vote_equivalence),
        (3, "accuracy and report rounding are exact", metric_exactness),
        (4, "reorder count is floor(r*B)", mixture_ratios),
        (5, "reorder targets reconstruct the original order", reorder_round_trip),
        (6, "scripted scenario ordering", scenario_ordering),
        (7, "conflict resolution fidelity", conflict_fidelity),
        (8, "tiny backend training smoke on MultiWOZ", training_smoke),
        (9, "MultiWOZ and SGD dataset shapes", dataset_shapes),
        (10, "stage replay is byte-identical", determinism),
    ];
    let mut failed = 0;
    for (id, name, check) in checks {
        let (tag, detail) = match check() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Blocked(d) => ("FAIL", format!("BLOCKED: {d}")),
        };
        if tag != "PASS" {
            failed += 1;
        }
        println!("{tag} [{id:>2}] {name}: {detail}");
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
