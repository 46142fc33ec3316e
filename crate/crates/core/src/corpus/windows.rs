use super::{Dialogue, IntentWindow, Speaker, Split};

/// Minimum number of utterances (user, bot, user) in a window.
pub const MIN_WINDOW: usize = 3;

/// Extracts every maximal same-intent window of at least three utterances.
///
/// A segment starts at a user turn and runs until the first user turn whose
/// intent differs from the previous user turn's intent; the bot turn between
/// them stays with the earlier segment and is then trimmed so that every window
/// ends on a user turn. Unannotated user turns form segments with intent `None`.
/// Windows are emitted in the unsupervised split; [`super::make_splits`]
/// assigns the final split.
pub fn extract_intent_windows(dialogues: &[Dialogue]) -> Vec<IntentWindow> {
    let mut out = Vec::new();
    for dialogue in dialogues {
        let turns = &dialogue.turns;
        let Some(mut start) = turns.iter().position(|t| t.speaker == Speaker::User) else {
            continue;
        };
        let mut segment = 0;
        while start < turns.len() {
            let intent = turns[start].intent.clone();
            let mut last_user = start;
            let mut i = start + 1;
            while i < turns.len() {
                let turn = &turns[i];
                if turn.speaker == Speaker::User {
                    if turn.intent != intent {
                        break;
                    }
                    last_user = i;
                } else if i > 0 && turns[i - 1].speaker == Speaker::Bot {
                    // Canonical dialogues alternate; anything else ends the run.
                    break;
                }
                i += 1;
            }
            let utterances = turns[start..=last_user].to_vec();
            if utterances.len() >= MIN_WINDOW {
                out.push(IntentWindow {
                    dialogue_id: dialogue.id.clone(),
                    segment,
                    intent,
                    utterances,
                    split: Split::Unsupervised,
                });
                segment += 1;
            }
            match turns[i.min(turns.len())..]
                .iter()
                .position(|t| t.speaker == Speaker::User)
            {
                Some(offset) if i < turns.len() => start = i + offset,
                _ => break,
            }
        }
    }
    out
}

/// Truncates windows to their first `max_len` utterances. `max_len` is rounded
/// down to an odd number so windows still end on a user turn.
pub fn truncate_windows(windows: &mut [IntentWindow], max_len: usize) {
    let max_len = if max_len.is_multiple_of(2) { max_len.saturating_sub(1) } else { max_len };
    let max_len = max_len.max(MIN_WINDOW);
    for w in windows {
        w.utterances.truncate(max_len);
    }
}
