//! Corpus BLEU and token accuracy over id sequences.

use std::collections::HashMap;

use crate::error::{Error, Result};

const MAX_ORDER: usize = 4;

/// Corpus-level BLEU: geometric mean of modified 1..4-gram precisions with a
/// brevity penalty. `smooth` adds one to numerator and denominator of orders
/// above 1 (useful on tiny corpora where zero 4-gram counts are routine).
pub fn bleu(hypotheses: &[Vec<usize>], references: &[Vec<usize>], smooth: bool) -> Result<f64> {
    if hypotheses.is_empty() || hypotheses.len() != references.len() {
        return Err(Error::Usage(format!(
            "bleu needs equal non-empty corpora, got {} hypotheses and {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut correct = [0u64; MAX_ORDER];
    let mut total = [0u64; MAX_ORDER];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, reference) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            if hyp.len() + 1 <= n {
                continue;
            }
            let mut ref_counts: HashMap<&[usize], u64> = HashMap::new();
            if reference.len() + 1 > n {
                for gram in reference.windows(n) {
                    *ref_counts.entry(gram).or_insert(0) += 1;
                }
            }
            let mut hyp_counts: HashMap<&[usize], u64> = HashMap::new();
            for gram in hyp.windows(n) {
                *hyp_counts.entry(gram).or_insert(0) += 1;
            }
            total[n - 1] += (hyp.len() + 1 - n) as u64;
            for (gram, count) in hyp_counts {
                correct[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
        }
    }

    let mut log_sum = 0.0;
    for n in 1..=MAX_ORDER {
        let (mut num, mut den) = (correct[n - 1], total[n - 1]);
        if smooth && n > 1 {
            num += 1;
            den += 1;
        }
        if num == 0 || den == 0 {
            return Ok(0.0);
        }
        log_sum += (num as f64 / den as f64).ln();
    }
    let bp = if hyp_len >= ref_len || hyp_len == 0 {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / MAX_ORDER as f64).exp())
}

/// Position-aligned token accuracy: matches over max(|hyp|, |ref|), summed
/// corpus-wide. Length mismatches count against the score.
pub fn token_accuracy(hypotheses: &[Vec<usize>], references: &[Vec<usize>]) -> Result<f64> {
    if hypotheses.is_empty() || hypotheses.len() != references.len() {
        return Err(Error::Usage("token accuracy needs aligned non-empty corpora".into()));
    }
    let mut matches = 0usize;
    let mut total = 0usize;
    for (hyp, reference) in hypotheses.iter().zip(references) {
        matches += hyp
            .iter()
            .zip(reference)
            .filter(|(h, r)| h == r)
            .count();
        total += hyp.len().max(reference.len());
    }
    if total == 0 {
        return Err(Error::Usage("token accuracy over empty sentences".into()));
    }
    Ok(matches as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(sent: &str) -> Vec<usize> {
        sent.split_whitespace()
            .map(|t| t.bytes().fold(0usize, |a, b| a * 31 + b as usize))
            .collect()
    }

    fn toy() -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let hyps = vec![
            ids("the cat sat on the mat"),
            ids("a quick brown fox jumps"),
            ids("hello world again today ok"),
        ];
        let refs = vec![
            ids("the cat sat on the mat"),
            ids("the quick brown fox jumped high"),
            ids("hello world again now ok"),
        ];
        (hyps, refs)
    }

    #[test]
    fn identical_corpus_scores_100() {
        let (_, refs) = toy();
        let b = bleu(&refs, &refs, false).unwrap();
        assert!((b - 100.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_corpus_scores_0() {
        let hyps = vec![ids("x y z w")];
        let refs = vec![ids("a b c d")];
        assert_eq!(bleu(&hyps, &refs, false).unwrap(), 0.0);
    }

    #[test]
    fn empty_corpus_is_usage_error() {
        assert!(matches!(bleu(&[], &[], false), Err(Error::Usage(_))));
    }

    /// Independent oracle: a second scorer written over different structures
    /// (per-order vectors of joined string n-grams, sorted-and-merged counts).
    fn bleu_oracle(hyps: &[Vec<usize>], refs: &[Vec<usize>], smooth: bool) -> f64 {
        fn grams(s: &[usize], n: usize) -> Vec<String> {
            if s.len() < n {
                return vec![];
            }
            (0..=s.len() - n)
                .map(|i| {
                    s[i..i + n]
                        .iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join("-")
                })
                .collect()
        }
        fn clipped(hyp: &[String], reference: &[String]) -> usize {
            let mut r = reference.to_vec();
            r.sort();
            let mut h = hyp.to_vec();
            h.sort();
            let mut count = 0;
            let mut ri = 0;
            for g in h {
                while ri < r.len() && r[ri] < g {
                    ri += 1;
                }
                if ri < r.len() && r[ri] == g {
                    count += 1;
                    ri += 1;
                }
            }
            count
        }
        let mut ps = Vec::new();
        for n in 1..=4 {
            let mut num = 0usize;
            let mut den = 0usize;
            for (h, r) in hyps.iter().zip(refs) {
                let hg = grams(h, n);
                num += clipped(&hg, &grams(r, n));
                den += hg.len();
            }
            let (num, den) = if smooth && n > 1 { (num + 1, den + 1) } else { (num, den) };
            if num == 0 || den == 0 {
                return 0.0;
            }
            ps.push(num as f64 / den as f64);
        }
        let c: usize = hyps.iter().map(Vec::len).sum();
        let r: usize = refs.iter().map(Vec::len).sum();
        let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
        100.0 * bp * (ps.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp()
    }

    #[test]
    fn matches_independent_scorer_on_toy_corpus() {
        let (hyps, refs) = toy();
        for smooth in [false, true] {
            let a = bleu(&hyps, &refs, smooth).unwrap();
            let b = bleu_oracle(&hyps, &refs, smooth);
            assert!((a - b).abs() <= 0.01, "{a} vs {b} (smooth={smooth})");
        }
        // frozen values for this corpus, computed by hand from the formula
        assert!((bleu(&hyps, &refs, false).unwrap() - 57.9336).abs() < 0.01);
        assert!((bleu(&hyps, &refs, true).unwrap() - 61.5814).abs() < 0.01);
    }

    #[test]
    fn brevity_penalty_engages_on_short_hypotheses() {
        let hyps = vec![ids("a b")];
        let refs = vec![ids("a b c d")];
        let full = bleu(&vec![ids("a b c d")], &refs, true).unwrap();
        let short = bleu(&hyps, &refs, true).unwrap();
        assert!(short < full);
    }

    #[test]
    fn accuracy_counts_aligned_matches() {
        let hyps = vec![vec![1, 2, 3], vec![4, 5]];
        let refs = vec![vec![1, 9, 3], vec![4, 5, 6]];
        // matches: 2 + 2 = 4; total: 3 + 3 = 6
        let acc = token_accuracy(&hyps, &refs).unwrap();
        assert!((acc - 4.0 / 6.0).abs() < 1e-12);
    }
}
