//! Vocabulary, corpora, batching, and synthetic transduction tasks.

mod batch;
mod task;
mod text;
mod vocab;

pub use batch::{batch_corpus, Batch, BatchPlan};
pub use task::{generate, SyntheticData, TaskKind, TaskSpec};
pub use text::{load_tsv, save_tsv, tokenize};
pub use vocab::{Vocabulary, BOS_ID, EOS_ID, PAD_ID, UNK_ID};

/// Which split a corpus belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Aligned source/target sentence pairs, token-level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<(Vec<String>, Vec<String>)>,
    pub split: Split,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<(Vec<String>, Vec<String>)>, split: Split) -> Self {
        ParallelCorpus { pairs, split }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}
