//! Greedy longest-match wordpiece vocabulary shared by the three encoders.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::FacetKind;
use crate::text::index_tokens;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
/// First facet bos id; facet `i` uses `BOS_BASE + i` / `EOS_BASE + i`.
pub const BOS_BASE: usize = 4;
pub const EOS_BASE: usize = 9;
pub const RESERVED: usize = 14;

const MAX_WORD_CHARS: usize = 100;

/// Names of the reserved slots in id order.
pub fn reserved_tokens() -> Vec<String> {
    let mut out = vec![
        "[PAD]".to_string(),
        "[UNK]".into(),
        "[CLS]".into(),
        "[SEP]".into(),
    ];
    for i in 0..FacetKind::ALL.len() {
        out.push(format!("[unused_{i}]"));
    }
    for i in 0..FacetKind::ALL.len() {
        out.push(format!("[unused_{}]", 100 + i));
    }
    out
}

pub fn is_reserved(id: usize) -> bool {
    id < RESERVED
}

/// Token table with reserved ids first. Used both for wordpiece encoder
/// vocabularies and for word-level decoder vocabularies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    /// Reserved slots followed by `extra` in order, skipping duplicates.
    pub fn with_reserved(extra: impl IntoIterator<Item = String>) -> Self {
        let mut tokens = reserved_tokens();
        let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        for t in extra {
            if seen.insert(t.clone()) {
                tokens.push(t);
            }
        }
        Self::from_tokens(tokens)
    }

    /// Rebuild the lookup table after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Learn a wordpiece vocabulary: reserved slots, then every character as
    /// a word-initial and a `##` continuation piece, then whole words seen at
    /// least `min_count` times (most frequent first) until `max_size`.
    pub fn train_wordpiece<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        min_count: usize,
        max_size: usize,
    ) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in index_tokens(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut chars: Vec<char> = counts.keys().flat_map(|w| w.chars()).collect();
        chars.sort_unstable();
        chars.dedup();
        let mut extra: Vec<String> = Vec::new();
        for c in &chars {
            extra.push(c.to_string());
            extra.push(format!("##{c}"));
        }
        let mut words: Vec<(&String, &usize)> =
            counts.iter().filter(|(_, c)| **c >= min_count).collect();
        words.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let budget = max_size.saturating_sub(RESERVED + extra.len());
        extra.extend(words.into_iter().take(budget).map(|(w, _)| w.clone()));
        Self::with_reserved(extra)
    }

    /// Greedy longest-match pieces for one lowercase word. A word with an
    /// unmatched span becomes a single `[UNK]`.
    pub fn word_pieces(&self, word: &str) -> Vec<usize> {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            return vec![UNK];
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let sub: String = chars[start..end].iter().collect();
                let key = if start > 0 { format!("##{sub}") } else { sub };
                if let Some(id) = self.id(&key) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => pieces.push(id),
                None => return vec![UNK],
            }
            start = end;
        }
        pieces
    }

    /// Word-level id, or `[UNK]`.
    pub fn word_id(&self, word: &str) -> usize {
        self.id(word).unwrap_or(UNK)
    }
}

/// Merge `##` continuation pieces back onto their word. Returns the words
/// and, for each, the index of its first piece.
pub fn merge_pieces(pieces: &[String]) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for (i, p) in pieces.iter().enumerate() {
        match p.strip_prefix("##") {
            Some(rest) if !out.is_empty() => out.last_mut().expect("nonempty").0.push_str(rest),
            _ => out.push((p.clone(), i)),
        }
    }
    out
}
