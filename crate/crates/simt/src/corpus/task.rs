//! Synthetic transduction tasks with analytically known latency demands.
//!
//! - copy: target equals source; lagging 1 suffices.
//! - shift(j): target position t holds source token t+j while it exists,
//!   then a fixed sentinel; the minimal lagging that solves the task is j+1.
//! - reverse: target is the source reversed; only a full read suffices.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParallelCorpus, Split, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Copy,
    Shift(usize),
    Reverse,
}

impl TaskKind {
    pub fn parse(name: &str, shift_offset: usize) -> Result<TaskKind> {
        match name {
            "copy" => Ok(TaskKind::Copy),
            "shift" => Ok(TaskKind::Shift(shift_offset)),
            "reverse" => Ok(TaskKind::Reverse),
            other => Err(Error::Usage(format!(
                "unknown task {other:?} (expected copy, shift, or reverse)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Total vocabulary size including the 4 reserved ids.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train_count: usize,
    pub valid_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

/// Generated corpus triple plus the task vocabulary.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
    pub vocab: Vocabulary,
}

impl TaskSpec {
    fn validate(&self) -> Result<()> {
        if self.vocab_size < 6 {
            return Err(Error::Usage(format!(
                "vocab_size must be at least 6 (4 reserved + 2 content), got {}",
                self.vocab_size
            )));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Usage(format!(
                "bad length range {}..{}",
                self.min_len, self.max_len
            )));
        }
        if let TaskKind::Shift(j) = self.kind {
            if j == 0 {
                return Err(Error::Usage("shift offset must be positive".into()));
            }
            if j >= self.min_len {
                return Err(Error::Usage(format!(
                    "shift offset {j} must be smaller than the minimum length {}",
                    self.min_len
                )));
            }
        }
        Ok(())
    }

    /// Content tokens: `t0..t{n-1}`. The last one is the sentinel used by
    /// shift tails and is excluded from random draws.
    fn content_tokens(&self) -> Vec<String> {
        (0..self.vocab_size - 4).map(|i| format!("t{i}")).collect()
    }
}

fn target_for(kind: TaskKind, source: &[String], sentinel: &str) -> Vec<String> {
    match kind {
        TaskKind::Copy => source.to_vec(),
        TaskKind::Reverse => source.iter().rev().cloned().collect(),
        TaskKind::Shift(j) => {
            let m = source.len();
            let mut out: Vec<String> = source[j..].to_vec();
            out.extend(std::iter::repeat(sentinel.to_string()).take(m - out.len()));
            out
        }
    }
}

/// Deterministically generate disjoint train/valid/test splits.
pub fn generate(spec: &TaskSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let content = spec.content_tokens();
    let vocab = Vocabulary::from_tokens(&content);
    let sentinel = content.last().unwrap().clone();
    let draw_pool = &content[..content.len() - 1];

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut draw_split = |count: usize, split: Split| -> ParallelCorpus {
        let mut pairs = Vec::with_capacity(count);
        while pairs.len() < count {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let source: Vec<String> = (0..len)
                .map(|_| draw_pool[rng.gen_range(0..draw_pool.len())].clone())
                .collect();
            if !seen.insert(source.clone()) {
                continue; // keep splits (and samples) disjoint
            }
            let target = target_for(spec.kind, &source, &sentinel);
            pairs.push((source, target));
        }
        ParallelCorpus::new(pairs, split)
    };

    let train = draw_split(spec.train_count, Split::Train);
    let valid = draw_split(spec.valid_count, Split::Valid);
    let test = draw_split(spec.test_count, Split::Test);
    Ok(SyntheticData { train, valid, test, vocab })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: TaskKind) -> TaskSpec {
        TaskSpec {
            kind,
            vocab_size: 16,
            min_len: 5,
            max_len: 8,
            train_count: 20,
            valid_count: 5,
            test_count: 5,
            seed: 7,
        }
    }

    #[test]
    fn same_seed_same_corpora() {
        let a = generate(&spec(TaskKind::Copy)).unwrap();
        let b = generate(&spec(TaskKind::Copy)).unwrap();
        assert_eq!(a.train.pairs, b.train.pairs);
        assert_eq!(a.test.pairs, b.test.pairs);
    }

    #[test]
    fn shift_puts_sentinel_in_tail() {
        let src: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        let tgt = target_for(TaskKind::Shift(2), &src, "rep");
        assert_eq!(tgt, vec!["c", "d", "e", "rep", "rep"]);
    }

    #[test]
    fn reverse_reverses() {
        let src: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            target_for(TaskKind::Reverse, &src, "rep"),
            vec!["c", "b", "a"]
        );
    }

    #[test]
    fn shift_offset_must_fit_min_len() {
        let mut s = spec(TaskKind::Shift(5));
        s.min_len = 5;
        assert!(matches!(generate(&s), Err(Error::Usage(_))));
    }

    #[test]
    fn splits_are_disjoint() {
        let data = generate(&spec(TaskKind::Shift(2))).unwrap();
        let train: HashSet<_> = data.train.pairs.iter().map(|(s, _)| s.clone()).collect();
        for (s, _) in data.valid.pairs.iter().chain(data.test.pairs.iter()) {
            assert!(!train.contains(s));
        }
    }

    #[test]
    fn targets_keep_source_length_for_shift() {
        let data = generate(&spec(TaskKind::Shift(2))).unwrap();
        for (s, t) in &data.train.pairs {
            assert_eq!(s.len(), t.len());
        }
    }
}
