//! Fixtures shared by the integration and acceptance tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lookahead_intent::backend::ScriptRecord;
use lookahead_intent::corpus::{serialize_canonical, Dialogue, Source, Speaker, Turn};
use lookahead_intent::harness::PipelineConfig;
use lookahead_intent::records::write_jsonl;
use lookahead_intent::tasks::{prompt, verbalize, TaskKind};

/// Random canonical dialogues of at most `max_turns` raw turns over at most
/// `max_intents` intents. Some user turns are unannotated.
pub fn random_dialogues(n: usize, max_turns: usize, max_intents: usize, seed: u64) -> Vec<Dialogue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(0..=max_turns);
            let intents = rng.gen_range(1..=max_intents);
            let mut current = 0;
            let turns = (0..len)
                .map(|k| {
                    let speaker = if rng.gen_bool(0.7) == (k % 2 == 0) { Speaker::User } else { Speaker::Bot };
                    let text = format!("w{} t{k}", rng.gen_range(0..50));
                    match speaker {
                        Speaker::Bot => Turn::bot(k, text),
                        Speaker::User => {
                            if rng.gen_bool(0.4) {
                                current = rng.gen_range(0..intents);
                            }
                            let intent = (!rng.gen_bool(0.1)).then(|| format!("i{current}"));
                            Turn::user(k, text, intent.as_deref())
                        }
                    }
                })
                .collect();
            Dialogue {
                id: format!("r{i:04}"),
                domain: "random".into(),
                turns,
                escalated: None,
                source: Source::Synthetic,
            }
            .canonicalize()
        })
        .collect()
}

/// Every maximal slice that starts and ends on a user turn, alternates
/// speakers, has one intent on all user turns and spans at least three
/// utterances. Returned as `(first index, last index, intent)`, by start.
pub fn brute_force_windows(d: &Dialogue) -> Vec<(usize, usize, Option<String>)> {
    let t = &d.turns;
    let qualifies = |s: usize, e: usize| {
        e >= s + 2
            && t[s].speaker == Speaker::User
            && t[e].speaker == Speaker::User
            && (s..e).all(|k| t[k].speaker != t[k + 1].speaker)
            && (s..=e)
                .filter(|&k| t[k].speaker == Speaker::User)
                .all(|k| t[k].intent == t[s].intent)
    };
    let mut found = Vec::new();
    for s in 0..t.len() {
        for e in s..t.len() {
            if qualifies(s, e) {
                found.push((s, e));
            }
        }
    }
    let maximal: Vec<(usize, usize)> = found
        .iter()
        .copied()
        .filter(|&(s, e)| !found.iter().any(|&(s2, e2)| (s2, e2) != (s, e) && s2 <= s && e <= e2))
        .collect();
    maximal.into_iter().map(|(s, e)| (s, e, t[s].intent.clone())).collect()
}

pub const SCENARIO_LABELS: [&str; 5] = ["book_taxi", "check_weather", "find_hotel", "order_food", "play_music"];

/// Behaviour class of fixture window `i`, 0..10. Lower classes are easier.
pub fn level(i: usize) -> usize {
    i % 10
}

fn fixture_window(i: usize) -> (String, [String; 3]) {
    let gold = SCENARIO_LABELS[(i / 10) % SCENARIO_LABELS.len()].to_string();
    (
        gold,
        [
            format!("hello, request number {i}"),
            format!("what can i do for you on request {i}?"),
            format!("thanks, please finish request {i}"),
        ],
    )
}

fn wrong_label(gold: &str) -> &'static str {
    let g = SCENARIO_LABELS.iter().position(|l| *l == gold).expect("fixture label");
    SCENARIO_LABELS[(g + 1) % SCENARIO_LABELS.len()]
}

pub const RANDOM_THIRD: &str = "okay, thanks.";

/// Scripted corpus whose classification reliability grows with context:
///
/// * 1-u correct for levels < 3, 2-u for < 5, 3-u for < 8;
/// * the generator returns the logged third utterance for levels < 5 and 8..,
///   a distractor at level 7, and distractor-then-logged (three samples) at
///   levels 5 and 6, so voting over five samples recovers those;
/// * the context-free third turn is classified correctly for levels < 2.
///
/// Every window is scripted, so accuracy ordering holds on any subset that
/// contains each level.
pub fn scenario_fixture(n: usize) -> (Vec<Dialogue>, Vec<ScriptRecord>) {
    let mut dialogues = Vec::with_capacity(n);
    let mut script = vec![ScriptRecord::exact(&prompt(TaskKind::Gen3, &[]), RANDOM_THIRD, -0.5)];
    for i in 0..n {
        let (gold, [u1, b1, u3]) = fixture_window(i);
        let lv = level(i);
        let turns = vec![
            Turn::user(0, u1.clone(), Some(&gold)),
            Turn::bot(1, b1.clone()),
            Turn::user(2, u3.clone(), Some(&gold)),
        ];
        let answer = |correct: bool| if correct { verbalize(&gold) } else { verbalize(wrong_label(&gold)) };
        let with_third = |third: &str| [turns[0].clone(), turns[1].clone(), Turn::user(2, third, None)];
        let distractor = format!("never mind request {i}");

        script.push(ScriptRecord::exact(&prompt(TaskKind::Intent, &turns[..1]), answer(lv < 3), -0.1));
        script.push(ScriptRecord::exact(&prompt(TaskKind::Intent, &turns[..2]), answer(lv < 5), -0.1));
        script.push(ScriptRecord::exact(&prompt(TaskKind::Intent, &turns), answer(lv < 8), -0.1));
        script.push(ScriptRecord::exact(&prompt(TaskKind::Intent, &with_third(&distractor)), answer(false), -0.1));
        script.push(ScriptRecord::exact(&prompt(TaskKind::Intent, &with_third(RANDOM_THIRD)), answer(lv < 2), -0.1));

        let gen_prompt = prompt(TaskKind::Gen3, &turns[..2]);
        let thirds: Vec<&str> = match lv {
            5 | 6 => vec![&distractor, &u3, &u3],
            7 => vec![&distractor],
            _ => vec![&u3],
        };
        script.extend(thirds.into_iter().map(|t| ScriptRecord::exact(&gen_prompt, t, -0.2)));

        dialogues.push(Dialogue {
            id: format!("s{i:04}"),
            domain: "scripted".into(),
            turns,
            escalated: None,
            source: Source::Synthetic,
        });
    }
    (dialogues, script)
}

/// Writes the scripted fixture under `dir` and returns a pipeline config for
/// it running the SDC regime with the oracle backend.
pub fn scenario_pipeline(dir: &Path, run_dir: &Path, n: usize, seed: u64) -> PipelineConfig {
    let (dialogues, script) = scenario_fixture(n);
    let corpus = dir.join("corpus.jsonl");
    let script_path = dir.join("script.jsonl");
    serialize_canonical(&corpus, &dialogues).unwrap();
    write_jsonl(&script_path, &script).unwrap();
    let test = n / 2;
    let rest = n - test;
    let toml = format!(
        r#"
seed = {seed}
run_dir = {run:?}
backend = "oracle"
oracle_script = {script:?}

[corpus]
format = "canonical"
path = {corpus:?}
split_sizes = {{ unsupervised = {u}, supervised = {s}, dev = {d}, test = {test} }}

[train]
regimes = ["SDC"]

[eval]
generators = ["self"]
baseline = "SDC"
"#,
        run = path_str(run_dir),
        script = path_str(&script_path),
        corpus = path_str(&corpus),
        u = rest / 5,
        s = rest * 3 / 5,
        d = rest - rest / 5 - rest * 3 / 5,
    );
    PipelineConfig::from_toml(&toml).unwrap()
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Relative paths and contents of every file under `root`, sorted.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
