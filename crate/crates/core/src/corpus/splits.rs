use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Dialogue, IntentWindow, Split};
use crate::records::{fingerprint, read_json, read_jsonl, write_json, write_jsonl};

/// Requested window counts. CLI order is `U,S,DEV,TEST`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub unsupervised: usize,
    pub supervised: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn new(unsupervised: usize, supervised: usize, dev: usize, test: usize) -> Self {
        SplitSizes {
            unsupervised,
            supervised,
            dev,
            test,
        }
    }

    pub fn total(&self) -> usize {
        self.unsupervised + self.supervised + self.dev + self.test
    }
}

impl std::str::FromStr for SplitSizes {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<Result<_, _>>()?;
        match parts.as_slice() {
            [u, s, d, t] => Ok(SplitSizes::new(*u, *s, *d, *t)),
            _ => Err(format!("expected U,S,DEV,TEST, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub unsupervised: usize,
    pub supervised: usize,
    pub weak: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplits {
    pub name: String,
    pub intents: Vec<String>,
    pub unsupervised: Vec<IntentWindow>,
    pub supervised: Vec<IntentWindow>,
    pub weak: Vec<IntentWindow>,
    pub dev: Vec<IntentWindow>,
    pub test: Vec<IntentWindow>,
}

impl CorpusSplits {
    pub fn get(&self, split: Split) -> &[IntentWindow] {
        match split {
            Split::Unsupervised => &self.unsupervised,
            Split::Supervised => &self.supervised,
            Split::Weak => &self.weak,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<IntentWindow> {
        match split {
            Split::Unsupervised => &mut self.unsupervised,
            Split::Supervised => &mut self.supervised,
            Split::Weak => &mut self.weak,
            Split::Dev => &mut self.dev,
            Split::Test => &mut self.test,
        }
    }

    pub fn counts(&self) -> SplitCounts {
        SplitCounts {
            unsupervised: self.unsupervised.len(),
            supervised: self.supervised.len(),
            weak: self.weak.len(),
            dev: self.dev.len(),
            test: self.test.len(),
        }
    }

    /// Windows of the splits that carry gold (or weak) labels, excluding test.
    pub fn labelled_reference(&self) -> impl Iterator<Item = &IntentWindow> {
        self.supervised.iter().chain(&self.weak).chain(&self.dev)
    }

    /// Hash of the sorted dialogue ids across all splits.
    pub fn fingerprint(&self) -> String {
        let ids: BTreeSet<&str> = Split::ALL
            .iter()
            .flat_map(|s| self.get(*s).iter().map(|w| w.dialogue_id.as_str()))
            .collect();
        fingerprint(ids)
    }
}

/// Metadata record written next to the split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitsMeta {
    pub name: String,
    pub seed: u64,
    pub counts: SplitCounts,
    pub intents: Vec<String>,
    pub fingerprint: String,
    /// Windows extracted before splitting.
    pub pool_windows: usize,
    /// Labelled windows per intent in the extracted pool.
    pub pool_intents: BTreeMap<String, usize>,
}

/// Assigns windows to splits with exact sizes, disjoint by dialogue id.
///
/// Dialogues are sorted by id and shuffled under `seed`. Test, dev and
/// supervised are filled in that order from labelled windows, taking whole
/// dialogues that still fit and falling back to a partial dialogue only when
/// nothing else fits; the supervised split first takes one dialogue per intent
/// where possible. The unsupervised split takes the remaining dialogues with
/// labels erased. Windows of a dialogue that are not taken are discarded, never
/// reassigned.
pub fn make_splits(
    name: &str,
    windows: &[IntentWindow],
    sizes: SplitSizes,
    seed: u64,
) -> Result<CorpusSplits, CorpusError> {
    let mut groups: BTreeMap<&str, Vec<&IntentWindow>> = BTreeMap::new();
    for w in windows {
        groups.entry(w.dialogue_id.as_str()).or_default().push(w);
    }
    let mut groups: Vec<Vec<&IntentWindow>> = groups.into_values().collect();
    for g in &mut groups {
        g.sort_by_key(|w| w.segment);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);

    let intents: BTreeSet<String> = windows.iter().filter_map(|w| w.intent.clone()).collect();
    let mut out = CorpusSplits {
        name: name.to_string(),
        intents: intents.iter().cloned().collect(),
        ..Default::default()
    };
    let mut used = vec![false; groups.len()];

    for (split, size) in [
        (Split::Test, sizes.test),
        (Split::Dev, sizes.dev),
        (Split::Supervised, sizes.supervised),
    ] {
        let labelled = |g: &Vec<&IntentWindow>| g.iter().filter(|w| w.intent.is_some()).count();
        let available: usize = groups
            .iter()
            .zip(&used)
            .filter(|(_, u)| !**u)
            .map(|(g, _)| labelled(g))
            .sum();
        if available < size {
            return Err(CorpusError::Sizing {
                split,
                requested: size,
                available,
            });
        }
        let mut taken: Vec<IntentWindow> = Vec::with_capacity(size);
        let take_group = |gi: usize, taken: &mut Vec<IntentWindow>, used: &mut Vec<bool>| {
            used[gi] = true;
            for w in groups[gi].iter().filter(|w| w.intent.is_some()) {
                if taken.len() == size {
                    break;
                }
                let mut w = (*w).clone();
                w.split = split;
                taken.push(w);
            }
        };
        if split == Split::Supervised {
            for intent in &intents {
                if taken.len() == size {
                    break;
                }
                if taken.iter().any(|w| w.intent.as_ref() == Some(intent)) {
                    continue;
                }
                let remaining = size - taken.len();
                if let Some(gi) = (0..groups.len()).find(|&gi| {
                    !used[gi]
                        && labelled(&groups[gi]) <= remaining
                        && groups[gi].iter().any(|w| w.intent.as_ref() == Some(intent))
                }) {
                    take_group(gi, &mut taken, &mut used);
                }
            }
        }
        // Whole dialogues that fit first, then partial ones.
        for allow_partial in [false, true] {
            for gi in 0..groups.len() {
                if taken.len() == size {
                    break;
                }
                let n = labelled(&groups[gi]);
                if used[gi] || n == 0 || (!allow_partial && n > size - taken.len()) {
                    continue;
                }
                take_group(gi, &mut taken, &mut used);
            }
        }
        *out.get_mut(split) = taken;
    }

    let available: usize = groups
        .iter()
        .zip(&used)
        .filter(|(_, u)| !**u)
        .map(|(g, _)| g.len())
        .sum();
    if available < sizes.unsupervised {
        return Err(CorpusError::Sizing {
            split: Split::Unsupervised,
            requested: sizes.unsupervised,
            available,
        });
    }
    for (gi, group) in groups.iter().enumerate() {
        if used[gi] {
            continue;
        }
        for w in group {
            if out.unsupervised.len() == sizes.unsupervised {
                break;
            }
            let mut w = (*w).clone();
            w.intent = None;
            w.split = Split::Unsupervised;
            out.unsupervised.push(w);
        }
    }
    Ok(out)
}

const SPLIT_FILES: [Split; 5] = Split::ALL;

/// Writes `<split>.jsonl` for every split, `splits.meta`, and, when given,
/// `dialogues.jsonl` with the full dialogues behind the unsupervised split.
pub fn write_splits(
    dir: &Path,
    splits: &CorpusSplits,
    meta: &SplitsMeta,
    dialogues: Option<&[Dialogue]>,
) -> Result<(), CorpusError> {
    for split in SPLIT_FILES {
        write_jsonl(&dir.join(format!("{}.jsonl", split.as_str())), splits.get(split))?;
    }
    write_json(&dir.join("splits.meta"), meta)?;
    if let Some(dialogues) = dialogues {
        let ids: HashSet<&str> = splits.unsupervised.iter().map(|w| w.dialogue_id.as_str()).collect();
        let kept: Vec<&Dialogue> = dialogues.iter().filter(|d| ids.contains(d.id.as_str())).collect();
        write_jsonl(&dir.join("dialogues.jsonl"), &kept)?;
    }
    Ok(())
}

pub fn read_splits(dir: &Path) -> Result<(CorpusSplits, SplitsMeta), CorpusError> {
    let meta: SplitsMeta = read_json(&dir.join("splits.meta"))?;
    let mut splits = CorpusSplits {
        name: meta.name.clone(),
        intents: meta.intents.clone(),
        ..Default::default()
    };
    for split in SPLIT_FILES {
        let path = dir.join(format!("{}.jsonl", split.as_str()));
        if path.exists() {
            *splits.get_mut(split) = read_jsonl(&path)?;
        }
    }
    Ok((splits, meta))
}

impl SplitsMeta {
    pub fn new(splits: &CorpusSplits, seed: u64, pool: &[IntentWindow]) -> Self {
        let mut pool_intents = BTreeMap::new();
        for w in pool {
            if let Some(i) = &w.intent {
                *pool_intents.entry(i.clone()).or_insert(0) += 1;
            }
        }
        SplitsMeta {
            name: splits.name.clone(),
            seed,
            counts: splits.counts(),
            intents: splits.intents.clone(),
            fingerprint: splits.fingerprint(),
            pool_windows: pool.len(),
            pool_intents,
        }
    }
}
