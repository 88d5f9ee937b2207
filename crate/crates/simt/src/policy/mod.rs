//! READ/WRITE decision engines: the fixed wait-k policy, the multi-path
//! training sampler, and the uncertainty-threshold adaptive policy.

mod trace;

pub use trace::{wait_k_schedule, Action, ActionTrace, DelaySchedule};

use rand::Rng;

use crate::corpus::EOS_ID;
use crate::error::{Error, Result};

/// What a policy needs from a model: streaming source ingestion and greedy
/// next-token queries at a chosen lagging.
pub trait StreamDecoder {
    /// Consume one source content token.
    fn read_token(&mut self, token: usize) -> Result<()>;
    /// Consume the end-of-source marker.
    fn read_end(&mut self) -> Result<()>;
    /// Source content tokens consumed so far.
    fn source_len(&self) -> usize;
    /// True once the end marker has been consumed.
    fn exhausted(&self) -> bool;
    /// Target tokens committed so far.
    fn target_len(&self) -> usize;
    /// Greedy next-token (id, probability) at lagging `lag`.
    fn query(&mut self, lag: usize) -> Result<(usize, f64)>;
    /// Commit the token returned by the last query.
    fn commit(&mut self, token: usize) -> Result<()>;
}

/// Adaptive policy parameters: lagging bounds and threshold endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub rho_min: f64,
    pub rho_max: f64,
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min < 1 || self.k_min > self.k_max {
            return Err(Error::Usage(format!(
                "need 1 <= k_min <= k_max, got ({}, {})",
                self.k_min, self.k_max
            )));
        }
        if !self.rho_min.is_finite() || !self.rho_max.is_finite() {
            return Err(Error::Usage("thresholds must be finite".into()));
        }
        Ok(())
    }
}

/// Threshold schedule: rho_k = rho_{k_min} - d*(k - 1) with
/// d = (rho_{k_min} - rho_{k_max}) / (k_max - k_min), anchored at k = 1
/// exactly as printed; constant when k_min == k_max.
pub fn threshold(k: usize, cfg: &PolicyConfig) -> Result<f64> {
    if k < cfg.k_min || k > cfg.k_max {
        return Err(Error::Usage(format!(
            "threshold queried at k = {k} outside [{}, {}]",
            cfg.k_min, cfg.k_max
        )));
    }
    if cfg.k_min == cfg.k_max {
        return Ok(cfg.rho_min);
    }
    let d = (cfg.rho_min - cfg.rho_max) / (cfg.k_max - cfg.k_min) as f64;
    Ok(cfg.rho_min - d * (k - 1) as f64)
}

/// Multi-path training sampler: k uniform over [1 ..= max_src_len].
pub fn sample_train_k(rng: &mut impl Rng, max_src_len: usize) -> usize {
    debug_assert!(max_src_len >= 1);
    rng.gen_range(1..=max_src_len)
}

/// Output-length guard: generation aborts (with the trace marked truncated)
/// once the hypothesis reaches 2|x| + 10 tokens.
pub fn default_max_output(src_len: usize) -> usize {
    2 * src_len + 10
}

fn read_next(
    decoder: &mut impl StreamDecoder,
    source: &mut std::slice::Iter<'_, usize>,
    trace: &mut ActionTrace,
) -> Result<()> {
    match source.next() {
        Some(&tok) => {
            decoder.read_token(tok)?;
            trace.actions.push(Action::Read);
        }
        None => {
            decoder.read_end()?;
            trace.read_end_marker = true;
        }
    }
    Ok(())
}

/// Greedy fixed wait-k decoding: read until g_k(t) source tokens are
/// available before emitting target token t; adapter selection follows the
/// policy's k throughout.
pub fn fixed_waitk_decode(
    decoder: &mut impl StreamDecoder,
    source: &[usize],
    k: usize,
    max_output: Option<usize>,
) -> Result<(Vec<usize>, ActionTrace)> {
    if k == 0 {
        return Err(Error::Usage("wait-k requires k >= 1".into()));
    }
    if source.is_empty() {
        return Err(Error::Usage("empty source stream".into()));
    }
    let mut stream = source.iter();
    let mut trace = ActionTrace::default();
    let mut tokens = Vec::new();
    loop {
        let t = decoder.target_len() + 1;
        while !decoder.exhausted() && decoder.source_len() < t + k - 1 {
            read_next(decoder, &mut stream, &mut trace)?;
        }
        let (tok, _p) = decoder.query(k)?;
        if tok == EOS_ID {
            break;
        }
        decoder.commit(tok)?;
        tokens.push(tok);
        trace.actions.push(Action::Write);
        let cap = max_output.unwrap_or_else(|| default_max_output(decoder.source_len()));
        if tokens.len() >= cap {
            trace.truncated = true;
            break;
        }
    }
    Ok((tokens, trace))
}

/// Uncertainty-threshold adaptive decoding.
///
/// The first source token is pre-read, so the lagging k = |x| - |y| starts at
/// 1. While the source lasts: read when k < k_min; otherwise query the model
/// at the current lagging and read when k < k_max and the top probability
/// falls below rho_k, else write. Once the end marker has been consumed the
/// rest of the hypothesis is generated at lagging k_max.
pub fn adaptive_decode(
    decoder: &mut impl StreamDecoder,
    source: &[usize],
    cfg: &PolicyConfig,
    max_output: Option<usize>,
) -> Result<(Vec<usize>, ActionTrace)> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::Usage("empty source stream".into()));
    }
    let mut stream = source.iter();
    let mut trace = ActionTrace::default();
    let mut tokens = Vec::new();

    read_next(decoder, &mut stream, &mut trace)?;

    let mut finished = false;
    while !decoder.exhausted() && !finished {
        let k = decoder.source_len() - decoder.target_len();
        if k < cfg.k_min {
            read_next(decoder, &mut stream, &mut trace)?;
            continue;
        }
        let lag = k.min(cfg.k_max);
        let (tok, p_top) = decoder.query(lag)?;
        if k < cfg.k_max && p_top < threshold(k, cfg)? {
            read_next(decoder, &mut stream, &mut trace)?;
            continue;
        }
        if tok == EOS_ID {
            finished = true;
            break;
        }
        decoder.commit(tok)?;
        tokens.push(tok);
        trace.actions.push(Action::Write);
        let cap = max_output.unwrap_or_else(|| default_max_output(decoder.source_len()));
        if tokens.len() >= cap {
            trace.truncated = true;
            finished = true;
        }
    }

    // source consumed: generate the rest at lagging k_max
    while !finished {
        let (tok, _p) = decoder.query(cfg.k_max)?;
        if tok == EOS_ID {
            break;
        }
        decoder.commit(tok)?;
        tokens.push(tok);
        trace.actions.push(Action::Write);
        let cap = max_output.unwrap_or_else(|| default_max_output(decoder.source_len()));
        if tokens.len() >= cap {
            trace.truncated = true;
            break;
        }
    }
    Ok((tokens, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn threshold_examples() {
        let cfg = PolicyConfig { k_min: 1, k_max: 9, rho_min: 1.0, rho_max: 0.0 };
        assert!((threshold(5, &cfg).unwrap() - 0.5).abs() < 1e-12);

        let flat = PolicyConfig { k_min: 2, k_max: 2, rho_min: 0.6, rho_max: 0.6 };
        assert_eq!(threshold(2, &flat).unwrap(), 0.6);

        let cfg = PolicyConfig { k_min: 1, k_max: 9, rho_min: 1.0, rho_max: 0.8 };
        assert!((threshold(9, &cfg).unwrap() - 0.8).abs() < 1e-12);
        assert!((threshold(1, &cfg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_rejects_out_of_range() {
        let cfg = PolicyConfig { k_min: 2, k_max: 4, rho_min: 1.0, rho_max: 0.0 };
        assert!(threshold(1, &cfg).is_err());
        assert!(threshold(5, &cfg).is_err());
    }

    #[test]
    fn sampler_is_uniform_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 80_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            counts[sample_train_k(&mut rng, 8) - 1] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.125).abs() < 0.01, "frequency {freq} off uniform");
        }
    }

    #[test]
    fn sampler_degenerate_length_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_train_k(&mut rng, 1), 1);
        }
    }

    #[test]
    fn sampler_deterministic_per_seed() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_train_k(&mut rng, 12)).collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
    }
}
