//! Token/id bijection with fixed reserved ids.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Frequency threshold below which tokens map to `<unk>` when building a
/// vocabulary from raw text.
pub const MIN_FREQ: usize = 5;

/// Token <-> id bijection. Ids 0..3 are pad, unk, begin, end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_entries(entries: Vec<String>) -> Vocabulary {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(entries);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Rebuild the lookup index (after deserialization).
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    /// Build from sentences, mapping tokens with frequency below
    /// [`MIN_FREQ`] to `<unk>`. Ties break by frequency descending, then
    /// lexicographically, so two builds over the same corpus are identical.
    pub fn from_sentences<'a>(sentences: impl Iterator<Item = &'a [String]>) -> Vocabulary {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for sent in sentences {
            for tok in sent {
                *freq.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|(t, c)| *c >= MIN_FREQ && !RESERVED.contains(t))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Vocabulary::from_entries(entries.into_iter().map(|(t, _)| t.to_string()).collect())
    }

    /// Build from an explicit ordered token list (synthetic tasks).
    pub fn from_tokens(tokens: &[String]) -> Vocabulary {
        Vocabulary::from_entries(tokens.to_vec())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    pub fn id(&self, token: &str) -> usize {
        *self.index.get(token).unwrap_or(&UNK_ID)
    }

    /// Id of a token that must exist (corpus generation internals).
    pub fn strict_id(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("token {token:?} not in vocabulary")))
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(raw: &[&str]) -> Vec<Vec<String>> {
        raw.iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::from_tokens(&["a".into(), "b".into()]);
        assert_eq!(v.id("<pad>"), PAD_ID);
        assert_eq!(v.id("<unk>"), UNK_ID);
        assert_eq!(v.id("<s>"), BOS_ID);
        assert_eq!(v.id("</s>"), EOS_ID);
        assert_eq!(v.id("a"), 4);
    }

    #[test]
    fn low_frequency_tokens_map_to_unk() {
        let corpus = sents(&["a a a a a b", "a b b b b rare"]);
        let v = Vocabulary::from_sentences(corpus.iter().map(|s| s.as_slice()));
        assert_eq!(v.len(), 6); // 4 reserved + a + b
        assert_eq!(v.id("rare"), UNK_ID);
        assert_ne!(v.id("a"), UNK_ID);
    }

    #[test]
    fn deterministic_tie_breaking() {
        let corpus = sents(&["z y x w", "z y x w", "z y x w", "z y x w", "z y x w"]);
        let v1 = Vocabulary::from_sentences(corpus.iter().map(|s| s.as_slice()));
        let v2 = Vocabulary::from_sentences(corpus.iter().map(|s| s.as_slice()));
        assert_eq!(v1, v2);
        // equal frequency: lexicographic order
        assert_eq!(v1.token(4), "w");
        assert_eq!(v1.token(7), "z");
    }

    #[test]
    fn round_trip_is_identity() {
        let v = Vocabulary::from_tokens(&["a".into(), "b".into(), "c".into()]);
        let toks: Vec<String> = vec!["c".into(), "a".into(), "b".into()];
        assert_eq!(v.decode(&v.encode(&toks)), toks);
    }
}
