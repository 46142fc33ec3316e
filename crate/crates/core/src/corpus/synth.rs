//! Synthetic education-domain corpus used as a stand-in for private
//! customer-care logs.
//!
//! Each dialogue holds exactly one user-bot-user window. The first user
//! utterance names the object of the request but is often vague about the
//! action; the bot either understands, asks, or misunderstands; the second user
//! utterance confirms or corrects. Intent labels are `action_object` pairs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dialogue, Source, Turn};

const ACTIONS: [&str; 12] = [
    "reset", "enroll", "cancel", "pay", "check", "update", "download", "submit", "request",
    "transfer", "schedule", "renew",
];

const OBJECTS: [&str; 12] = [
    "password", "course", "exam", "tuition", "grade", "profile", "certificate", "assignment",
    "transcript", "scholarship", "card", "account",
];

const GREETINGS: [&str; 5] = ["", "hi, ", "hello, ", "hey there, ", "good morning, "];

const VAGUE: [&str; 5] = [
    "i have a question about my {o}",
    "something is wrong with my {o}",
    "{o} issue",
    "i need help with the {o} please",
    "can you help me with my {o}?",
];

const CLEAR: [&str; 4] = [
    "i want to {a} my {o}",
    "how do i {a} my {o}?",
    "can you help me {a} the {o}?",
    "i need to {a} my {o}",
];

pub const HANDOFF: &str = "let me transfer you to a human agent.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub intents: usize,
    pub windows: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(intents: usize, windows: usize, seed: u64) -> Self {
        SynthSpec {
            intents,
            windows,
            seed,
        }
    }
}

/// `(action, object, label)` triples for the first `n` intents.
fn intent_names(n: usize) -> Vec<(String, String, String)> {
    let mut out = Vec::with_capacity(n);
    let mut round = 0;
    while out.len() < n {
        for o in OBJECTS {
            for a in ACTIONS {
                if out.len() == n {
                    return out;
                }
                let object = if round == 0 { o.to_string() } else { format!("{o}{round}") };
                out.push((a.to_string(), object.clone(), format!("{a}_{object}")));
            }
        }
        round += 1;
    }
    out
}

/// Generates `spec.windows` dialogues over `spec.intents` intents. Exactly
/// `windows / 2` dialogues are escalated and end with a hand-off bot turn.
pub fn synth_edu(spec: &SynthSpec) -> Vec<Dialogue> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let names = intent_names(spec.intents.max(1));
    let mut escalated: Vec<bool> = (0..spec.windows).map(|i| i < spec.windows / 2).collect();
    escalated.shuffle(&mut rng);

    let mut out = Vec::with_capacity(spec.windows);
    for (i, esc) in escalated.into_iter().enumerate() {
        // Round-robin first so every intent appears when windows >= intents.
        let k = if i < names.len() { i } else { rng.gen_range(0..names.len()) };
        let (action, object, label) = &names[k];
        let fill = |t: &str, a: &str| t.replace("{a}", a).replace("{o}", object);
        let greet = GREETINGS[rng.gen_range(0..GREETINGS.len())];
        let vague = rng.gen_bool(0.6);
        let first = if vague {
            format!("{greet}{}", fill(VAGUE[rng.gen_range(0..VAGUE.len())], action))
        } else {
            format!("{greet}{}", fill(CLEAR[rng.gen_range(0..CLEAR.len())], action))
        };
        let num: u32 = rng.gen_range(1000..99999);
        let roll: f64 = rng.gen();
        let (bot, bot_slots, third) = if roll < 0.45 {
            let bot = format!("sure, i can help you {action} your {object}. can you share the {object} id?");
            let third = if rng.gen_bool(0.5) {
                format!("yes, the id is {num}")
            } else {
                format!("great, i need to {action} it today")
            };
            (bot, vec![format!("{object}_id"), format!("{action}_date")], third)
        } else if roll < 0.75 {
            let bot = format!("i see you have a question about your {object}. what would you like to do?");
            let third = if rng.gen_bool(0.5) {
                format!("i want to {action} it")
            } else {
                format!("{action} please, the id is {num}")
            };
            (bot, vec![format!("{object}_id")], third)
        } else {
            let wrong = loop {
                let w = ACTIONS[rng.gen_range(0..ACTIONS.len())];
                if w != action {
                    break w;
                }
            };
            let bot = format!("sure, let me help you {wrong} your {object}.");
            let third = if rng.gen_bool(0.5) {
                format!("no, i actually want to {action} it")
            } else {
                format!("that is not what i asked, i need to {action} my {object}")
            };
            (bot, vec![format!("{object}_id"), format!("{wrong}_date")], third)
        };
        let mut turns = vec![
            Turn::user(0, first, Some(label)).with_slots([format!("{object}_id")]),
            Turn::bot(1, bot).with_slots(bot_slots),
            Turn::user(2, third, Some(label)).with_slots([format!("{object}_id")]),
        ];
        if esc {
            turns.push(Turn::bot(3, HANDOFF).with_slots(Vec::<String>::new()));
        }
        out.push(
            Dialogue {
                id: format!("edu-{i:05}"),
                domain: "education".into(),
                turns,
                escalated: Some(esc),
                source: Source::Synthetic,
            }
            .canonicalize(),
        );
    }
    out
}
