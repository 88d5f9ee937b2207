//! Length-bucketed, padded batches with per-epoch shuffling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParallelCorpus, Vocabulary, BOS_ID, EOS_ID, PAD_ID};
use crate::error::{Error, Result};

/// One padded training batch, numericalized.
///
/// Source rows are `content tokens, </s>, pads`; target input rows are
/// `<s>, y1..ym, pads` and target output rows `y1..ym, </s>, pads`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub src_width: usize,
    pub tgt_width: usize,
    pub src_ids: Vec<usize>,
    /// Content length of each source row (excluding `</s>`).
    pub src_lens: Vec<usize>,
    pub tgt_in: Vec<usize>,
    pub tgt_out: Vec<usize>,
    pub tgt_mask: Vec<bool>,
    /// Largest source content length in the batch; the multi-path sampler
    /// draws laggings from `1..=max_src_len`.
    pub max_src_len: usize,
}

/// The batches of one corpus plus a deterministic epoch shuffler.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    batches: Vec<Batch>,
    /// Pairs dropped because a single sentence exceeded the token budget.
    pub skipped: usize,
    seed: u64,
}

impl BatchPlan {
    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    /// Batch visit order for one epoch; same (seed, epoch) -> same order.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.batches.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        order
    }
}

fn pad_row(ids: &[usize], width: usize) -> Vec<usize> {
    let mut row = ids.to_vec();
    row.resize(width, PAD_ID);
    row
}

fn build_batch(
    pairs: &[(Vec<usize>, Vec<usize>)],
) -> Batch {
    let size = pairs.len();
    let max_src = pairs.iter().map(|(s, _)| s.len()).max().unwrap();
    let max_tgt = pairs.iter().map(|(_, t)| t.len()).max().unwrap();
    let src_width = max_src + 1; // room for </s>
    let tgt_width = max_tgt + 1; // room for <s> shift / trailing </s>
    let mut src_ids = Vec::with_capacity(size * src_width);
    let mut src_lens = Vec::with_capacity(size);
    let mut tgt_in = Vec::with_capacity(size * tgt_width);
    let mut tgt_out = Vec::with_capacity(size * tgt_width);
    let mut tgt_mask = Vec::with_capacity(size * tgt_width);
    for (s, t) in pairs {
        let mut src = s.clone();
        src.push(EOS_ID);
        src_ids.extend(pad_row(&src, src_width));
        src_lens.push(s.len());

        let mut tin = vec![BOS_ID];
        tin.extend_from_slice(t);
        tgt_in.extend(pad_row(&tin, tgt_width));

        let mut tout = t.clone();
        tout.push(EOS_ID);
        let active = tout.len();
        tgt_out.extend(pad_row(&tout, tgt_width));
        for i in 0..tgt_width {
            tgt_mask.push(i < active);
        }
    }
    Batch {
        size,
        src_width,
        tgt_width,
        src_ids,
        src_lens,
        tgt_in,
        tgt_out,
        tgt_mask,
        max_src_len: max_src,
    }
}

/// Numericalize and bucket a corpus into padded batches of at most
/// `max_tokens` cells (rows x padded width, source or target side, whichever
/// is wider). Pairs too long to fit alone are skipped and counted.
pub fn batch_corpus(
    corpus: &ParallelCorpus,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    max_tokens: usize,
    seed: u64,
) -> Result<BatchPlan> {
    if corpus.is_empty() {
        return Err(Error::Usage("cannot batch an empty corpus".into()));
    }
    let mut encoded: Vec<(Vec<usize>, Vec<usize>)> = corpus
        .pairs
        .iter()
        .map(|(s, t)| (src_vocab.encode(s), tgt_vocab.encode(t)))
        .collect();
    // Length bucketing: stable sort keeps same-length groups in corpus order.
    encoded.sort_by_key(|(s, t)| (s.len(), t.len()));

    let mut batches = Vec::new();
    let mut skipped = 0usize;
    let mut current: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut cur_s = 0usize;
    let mut cur_t = 0usize;
    for (s, t) in encoded {
        let alone = (s.len() + 1).max(t.len() + 1);
        if alone > max_tokens {
            skipped += 1;
            log::warn!(
                "skipping pair of widths ({}, {}): exceeds max_tokens {max_tokens}",
                s.len(),
                t.len()
            );
            continue;
        }
        let new_s = cur_s.max(s.len() + 1);
        let new_t = cur_t.max(t.len() + 1);
        let cells = (current.len() + 1) * new_s.max(new_t);
        if !current.is_empty() && cells > max_tokens {
            batches.push(build_batch(&current));
            current.clear();
            cur_s = 0;
            cur_t = 0;
        }
        cur_s = cur_s.max(s.len() + 1);
        cur_t = cur_t.max(t.len() + 1);
        current.push((s, t));
    }
    if !current.is_empty() {
        batches.push(build_batch(&current));
    }
    Ok(BatchPlan { batches, skipped, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;

    fn toy_corpus(n: usize, len: usize) -> (ParallelCorpus, Vocabulary) {
        let vocab = Vocabulary::from_tokens(&["a".into(), "b".into(), "c".into()]);
        let pairs = (0..n)
            .map(|i| {
                let tok = ["a", "b", "c"][i % 3].to_string();
                (vec![tok.clone(); len], vec![tok; len])
            })
            .collect();
        (ParallelCorpus::new(pairs, Split::Train), vocab)
    }

    #[test]
    fn same_length_batches_fill_up() {
        let (c, v) = toy_corpus(10, 3);
        // width 4 (3 + eos), budget 16 -> 4 rows per batch
        let plan = batch_corpus(&c, &v, &v, 16, 0).unwrap();
        let sizes: Vec<usize> = plan.batches().iter().map(|b| b.size).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn epoch_order_is_deterministic() {
        let (c, v) = toy_corpus(30, 3);
        let plan = batch_corpus(&c, &v, &v, 16, 42).unwrap();
        assert_eq!(plan.epoch_order(3), plan.epoch_order(3));
        assert_ne!(plan.epoch_order(0), plan.epoch_order(1)); // overwhelmingly likely
    }

    #[test]
    fn batches_partition_the_corpus() {
        let (c, v) = toy_corpus(17, 2);
        let plan = batch_corpus(&c, &v, &v, 12, 0).unwrap();
        let total: usize = plan.batches().iter().map(|b| b.size).sum();
        assert_eq!(total, 17);
        assert_eq!(plan.skipped, 0);
    }

    #[test]
    fn oversized_pair_is_skipped_and_counted() {
        let (mut c, v) = toy_corpus(3, 2);
        c.pairs.push((vec!["a".into(); 50], vec!["a".into(); 50]));
        let plan = batch_corpus(&c, &v, &v, 12, 0).unwrap();
        assert_eq!(plan.skipped, 1);
        let total: usize = plan.batches().iter().map(|b| b.size).sum();
        assert_eq!(total, 3);
    }

    #[test]
    fn rows_are_padded_and_masked() {
        let vocab = Vocabulary::from_tokens(&["a".into(), "b".into()]);
        let c = ParallelCorpus::new(
            vec![
                (vec!["a".into()], vec!["b".into()]),
                (vec!["a".into(), "b".into()], vec!["b".into(), "a".into()]),
            ],
            Split::Train,
        );
        let plan = batch_corpus(&c, &vocab, &vocab, 100, 0).unwrap();
        let b = &plan.batches()[0];
        assert_eq!(b.size, 2);
        assert_eq!(b.src_width, 3);
        // first row: a </s> pad
        assert_eq!(&b.src_ids[0..3], &[4, EOS_ID, PAD_ID]);
        assert_eq!(b.src_lens, vec![1, 2]);
        // first row target mask: y1, </s> active, pad inactive
        assert_eq!(&b.tgt_mask[0..3], &[true, true, false]);
        assert_eq!(&b.tgt_in[0..3], &[BOS_ID, 5, PAD_ID]);
        assert_eq!(&b.tgt_out[0..3], &[5, EOS_ID, PAD_ID]);
    }
}
