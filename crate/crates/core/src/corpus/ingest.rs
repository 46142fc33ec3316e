//! Readers for the MultiWOZ, SGD and canonical dialogue formats.
//!
//! * `canonical`: one [`Dialogue`] JSON record per line.
//! * `sgd`: a Schema-Guided Dialogue release (a directory of
//!   `dialogues_*.json` files, or a single such file). User-turn intents come
//!   from the frames' `state.active_intent`.
//! * `multiwoz`: either a MultiWOZ 2.2 release, which uses the SGD file layout
//!   with 11 `active_intent` labels, or a MultiWOZ 2.1 `data.json` whose user
//!   turns are labelled with the domain of their first non-general dialogue act.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use serde_json::Value;

use super::{CorpusError, Dialogue, Source, Speaker, Turn};
use crate::records::{read_jsonl, write_jsonl, RecordError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Multiwoz,
    Sgd,
    Canonical,
}

impl FromStr for Format {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "multiwoz" => Ok(Format::Multiwoz),
            "sgd" => Ok(Format::Sgd),
            "canonical" => Ok(Format::Canonical),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// Reads and canonicalises every dialogue under `path`.
pub fn ingest(path: &Path, format: Format) -> Result<Vec<Dialogue>, CorpusError> {
    let dialogues = match format {
        Format::Canonical => read_jsonl::<Dialogue>(path)?,
        Format::Sgd => read_schema_tree(path, Source::Sgd)?,
        Format::Multiwoz => {
            if path.is_dir() {
                read_schema_tree(path, Source::Multiwoz)?
            } else {
                let value = read_value(path)?;
                match value {
                    Value::Array(_) => parse_schema_file(path, value, Source::Multiwoz, None)?,
                    Value::Object(_) => parse_multiwoz21(path, value)?,
                    _ => {
                        return Err(malformed(path, "<root>", "expected a JSON array or object"))
                    }
                }
            }
        }
    };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(dialogues.len());
    for d in dialogues {
        if !seen.insert(d.id.clone()) {
            return Err(CorpusError::DuplicateId(d.id));
        }
        out.push(d.canonicalize());
    }
    Ok(out)
}

pub fn serialize_canonical(path: &Path, dialogues: &[Dialogue]) -> Result<(), CorpusError> {
    Ok(write_jsonl(path, dialogues)?)
}

fn malformed(path: &Path, record: &str, message: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        path: path.to_path_buf(),
        record: record.to_string(),
        message: message.into(),
    }
}

fn read_value(path: &Path) -> Result<Value, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| RecordError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        CorpusError::Record(RecordError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    })
}

fn dialogue_files(root: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|e| RecordError::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| RecordError::io(&dir, e))?;
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("dialogues_") && n.ends_with(".json"))
            {
                files.push(p);
            }
        }
    }
    files.sort();
    Ok(files)
}

fn read_schema_tree(path: &Path, source: Source) -> Result<Vec<Dialogue>, CorpusError> {
    if !path.is_dir() {
        let value = read_value(path)?;
        return parse_schema_file(path, value, source, None);
    }
    let mut out = Vec::new();
    for file in dialogue_files(path)? {
        // Release sub-directories (train/dev/test) reuse dialogue ids, so the
        // directory name becomes an id prefix.
        let prefix = file
            .parent()
            .filter(|p| *p != path)
            .and_then(|p| p.file_name())
            .and_then(|n| n.to_str())
            .map(str::to_string);
        let value = read_value(&file)?;
        out.extend(parse_schema_file(&file, value, source, prefix.as_deref())?);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct SchemaDialogue {
    dialogue_id: String,
    #[serde(default)]
    services: Vec<String>,
    turns: Vec<SchemaTurn>,
}

#[derive(Deserialize)]
struct SchemaTurn {
    speaker: String,
    utterance: String,
    #[serde(default)]
    frames: Vec<SchemaFrame>,
}

#[derive(Deserialize)]
struct SchemaFrame {
    service: String,
    #[serde(default)]
    slots: Vec<SchemaSlot>,
    #[serde(default)]
    actions: Vec<SchemaAction>,
    #[serde(default)]
    state: Option<SchemaState>,
}

#[derive(Deserialize)]
struct SchemaSlot {
    slot: String,
}

#[derive(Deserialize)]
struct SchemaAction {
    #[serde(default)]
    slot: String,
}

#[derive(Deserialize)]
struct SchemaState {
    #[serde(default)]
    active_intent: String,
}

fn parse_schema_file(
    path: &Path,
    value: Value,
    source: Source,
    prefix: Option<&str>,
) -> Result<Vec<Dialogue>, CorpusError> {
    let Value::Array(items) = value else {
        return Err(malformed(path, "<root>", "expected a JSON array of dialogues"));
    };
    let mut out = Vec::with_capacity(items.len());
    for (n, item) in items.into_iter().enumerate() {
        let raw: SchemaDialogue = serde_json::from_value(item)
            .map_err(|e| malformed(path, &format!("#{n}"), e.to_string()))?;
        let id = match prefix {
            Some(p) => format!("{p}/{}", raw.dialogue_id),
            None => raw.dialogue_id.clone(),
        };
        let mut turns = Vec::with_capacity(raw.turns.len());
        let mut prev_intents: HashMap<String, String> = HashMap::new();
        let mut prev_choice: Option<String> = None;
        for (i, t) in raw.turns.iter().enumerate() {
            let speaker = match t.speaker.to_ascii_uppercase().as_str() {
                "USER" => Speaker::User,
                "SYSTEM" | "BOT" => Speaker::Bot,
                other => {
                    return Err(malformed(
                        path,
                        &raw.dialogue_id,
                        format!("turn {i}: unknown speaker `{other}`"),
                    ))
                }
            };
            let slots: BTreeSet<String> = t
                .frames
                .iter()
                .flat_map(|f| {
                    f.slots
                        .iter()
                        .map(|s| s.slot.clone())
                        .chain(f.actions.iter().map(|a| a.slot.clone()))
                })
                .filter(|s| !s.is_empty())
                .collect();
            let mut turn = Turn::new(i, speaker, t.utterance.clone());
            turn.slots = Some(slots);
            if speaker == Speaker::User {
                turn.intent = choose_active_intent(&t.frames, &prev_intents, prev_choice.as_deref());
                for f in &t.frames {
                    if let Some(state) = &f.state {
                        prev_intents.insert(f.service.clone(), state.active_intent.clone());
                    }
                }
                prev_choice = turn.intent.clone().or(prev_choice);
            }
            turns.push(turn);
        }
        out.push(Dialogue {
            id,
            domain: raw.services.join(","),
            turns,
            escalated: None,
            source,
        });
    }
    Ok(out)
}

/// Picks one active intent among a user turn's frames: a newly activated
/// intent wins, then the previous turn's intent if still active, then the
/// first active frame.
fn choose_active_intent(
    frames: &[SchemaFrame],
    prev_intents: &HashMap<String, String>,
    prev_choice: Option<&str>,
) -> Option<String> {
    let active: Vec<(&str, &str)> = frames
        .iter()
        .filter_map(|f| {
            let intent = f.state.as_ref()?.active_intent.as_str();
            (!intent.is_empty() && intent != "NONE").then_some((f.service.as_str(), intent))
        })
        .collect();
    if active.len() <= 1 {
        return active.first().map(|(_, i)| i.to_string());
    }
    if let Some((_, i)) = active
        .iter()
        .find(|(svc, i)| prev_intents.get(*svc).map(String::as_str) != Some(*i))
    {
        return Some(i.to_string());
    }
    if let Some(prev) = prev_choice {
        if active.iter().any(|(_, i)| *i == prev) {
            return Some(prev.to_string());
        }
    }
    Some(active[0].1.to_string())
}

fn parse_multiwoz21(path: &Path, value: Value) -> Result<Vec<Dialogue>, CorpusError> {
    let Value::Object(map) = value else {
        unreachable!("caller matched an object")
    };
    let mut ids: Vec<&String> = map.keys().collect();
    ids.sort();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let record = &map[id];
        let log = record
            .get("log")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed(path, id, "missing `log` array"))?;
        let mut turns = Vec::with_capacity(log.len());
        let mut domains = BTreeSet::new();
        for (i, entry) in log.iter().enumerate() {
            let text = entry
                .get("text")
                .and_then(Value::as_str)
                .ok_or_else(|| malformed(path, id, format!("turn {i}: missing `text`")))?;
            let speaker = if i % 2 == 0 { Speaker::User } else { Speaker::Bot };
            let mut slots = BTreeSet::new();
            let mut intent = None;
            if let Some(Value::Object(acts)) = entry.get("dialog_act") {
                let mut act_names: Vec<&String> = acts.keys().collect();
                act_names.sort();
                for act in act_names {
                    let domain = act.split('-').next().unwrap_or("").to_lowercase();
                    if domain != "general" && !domain.is_empty() {
                        domains.insert(domain.clone());
                        if intent.is_none() {
                            intent = Some(domain.clone());
                        }
                    }
                    if let Some(Value::Array(pairs)) = acts.get(act) {
                        for pair in pairs {
                            if let Some(slot) = pair.get(0).and_then(Value::as_str) {
                                if slot != "none" {
                                    slots.insert(format!("{domain}-{}", slot.to_lowercase()));
                                }
                            }
                        }
                    }
                }
            }
            let mut turn = Turn::new(i, speaker, text);
            turn.slots = Some(slots);
            if speaker == Speaker::User {
                turn.intent = intent;
            }
            turns.push(turn);
        }
        out.push(Dialogue {
            id: id.clone(),
            domain: domains.into_iter().collect::<Vec<_>>().join(","),
            turns,
            escalated: None,
            source: Source::Multiwoz,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SGD_FIXTURE: &str = r#"[
      {"dialogue_id": "1_00000", "services": ["Restaurants_1"], "turns": [
        {"speaker": "USER", "utterance": "I want to eat", "frames": [
          {"service": "Restaurants_1", "slots": [], "actions": [{"act": "INFORM_INTENT", "slot": "intent", "values": ["FindRestaurants"]}],
           "state": {"active_intent": "FindRestaurants", "requested_slots": [], "slot_values": {}}}]},
        {"speaker": "SYSTEM", "utterance": "Which city?", "frames": [
          {"service": "Restaurants_1", "slots": [], "actions": [{"act": "REQUEST", "slot": "city", "values": []}]}]},
        {"speaker": "USER", "utterance": "San Jose", "frames": [
          {"service": "Restaurants_1", "slots": [{"slot": "city", "start": 0, "exclusive_end": 8}], "actions": [{"act": "INFORM", "slot": "city", "values": ["San Jose"]}],
           "state": {"active_intent": "FindRestaurants", "requested_slots": [], "slot_values": {}}}]}
      ]}
    ]"#;

    #[test]
    fn sgd_intents_and_slots() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("train");
        std::fs::create_dir_all(&train).unwrap();
        std::fs::write(train.join("dialogues_001.json"), SGD_FIXTURE).unwrap();
        std::fs::write(train.join("schema.json"), "[]").unwrap();
        let ds = ingest(dir.path(), Format::Sgd).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds[0].id, "train/1_00000");
        assert_eq!(ds[0].turns[0].intent.as_deref(), Some("FindRestaurants"));
        assert!(ds[0].turns[1].intent.is_none());
        assert!(ds[0].turns[1].slot_names().any(|s| s == "city"));
    }

    #[test]
    fn multiwoz21_uses_act_domains() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.json");
        std::fs::write(
            &path,
            r#"{"MUL0001.json": {"goal": {}, "log": [
                {"text": "I need a hotel in the north", "dialog_act": {"Hotel-Inform": [["Area", "north"]]}},
                {"text": "What price range?", "dialog_act": {"Hotel-Request": [["Price", "?"]]}},
                {"text": "cheap please", "dialog_act": {"Hotel-Inform": [["Price", "cheap"]]}}
            ]}}"#,
        )
        .unwrap();
        let ds = ingest(&path, Format::Multiwoz).unwrap();
        assert_eq!(ds[0].turns[0].intent.as_deref(), Some("hotel"));
        assert!(ds[0].turns[1].slot_names().any(|s| s == "hotel-price"));
    }

    #[test]
    fn unknown_format_is_usage_error() {
        assert!(matches!("woz".parse::<Format>(), Err(CorpusError::UnknownFormat(_))));
    }

    #[test]
    fn empty_canonical_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(ingest(&path, Format::Canonical).unwrap().is_empty());
    }

    #[test]
    fn malformed_record_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"id\": \"x\"}\n").unwrap();
        let err = ingest(&path, Format::Canonical).unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");
    }

    #[test]
    fn multi_frame_prefers_newly_activated_intent() {
        let frames: Vec<SchemaFrame> = serde_json::from_str::<Vec<Value>>(
            r#"[{"service": "hotel", "state": {"active_intent": "find_hotel"}},
                {"service": "taxi", "state": {"active_intent": "find_taxi"}}]"#,
        )
        .unwrap()
        .into_iter()
        .map(|v| serde_json::from_value(v).unwrap())
        .collect();
        let prev: HashMap<String, String> = [("hotel".to_string(), "find_hotel".to_string())].into();
        assert_eq!(
            choose_active_intent(&frames, &prev, Some("find_hotel")).as_deref(),
            Some("find_taxi")
        );
    }
}
