//! Text normalisation helpers shared across the pipeline.

use std::sync::OnceLock;

use regex::Regex;

/// Collapses runs of whitespace to one space and trims the ends.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased, whitespace-normalised form used for label matching.
pub fn normalize_for_match(text: &str) -> String {
    normalize_ws(&text.to_lowercase())
}

/// Word / punctuation tokens of lowercased text.
pub fn tokenize(text: &str) -> Vec<String> {
    static TOKEN: OnceLock<Regex> = OnceLock::new();
    let re = TOKEN.get_or_init(|| Regex::new(r"\[[a-z]+\]|\(\d+\)|[\w']+|[^\w\s]").unwrap());
    re.find_iter(&text.to_lowercase())
        .map(|m| m.as_str().to_string())
        .collect()
}

/// Joins tokens back into text, attaching closing punctuation to the previous word.
pub fn detokenize(tokens: &[String]) -> String {
    let mut out = String::new();
    for tok in tokens {
        let attach = matches!(tok.as_str(), "." | "," | "!" | "?" | ";" | ":" | "%" | ")");
        if !out.is_empty() && !attach {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// `1 - levenshtein / max_len` on lowercased text; two empty strings are identical.
pub fn similarity(a: &str, b: &str) -> f64 {
    let a = a.to_lowercase();
    let b = b.to_lowercase();
    let max_len = a.chars().count().max(b.chars().count());
    if max_len == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(&a, &b) as f64 / max_len as f64
}

/// Stable FNV-1a hash of `parts` (separated by a unit-separator byte), reduced
/// modulo `buckets`.
pub fn hash_feature(parts: &[&str], buckets: usize) -> usize {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in parts {
        for b in p.bytes().chain(std::iter::once(0x1f)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    (h % buckets as u64) as usize
}
