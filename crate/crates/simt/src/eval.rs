//! Corpus-level decoding drivers: run a policy over a test set and collect
//! quality, latency, and instrumentation in one pass.

use std::time::Instant;

use crate::error::Result;
use crate::metrics::{
    average_lagging, average_proportion, consecutive_wait, differentiable_average_lagging, bleu,
    token_accuracy,
};
use crate::model::{mean_adapter_norms, IncrementalDecoder, RecomputeDecoder, SimtModel};
use crate::policy::{adaptive_decode, fixed_waitk_decode, ActionTrace, PolicyConfig};

/// A policy setting under evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySetting {
    Fixed(usize),
    Adaptive(PolicyConfig),
}

impl PolicySetting {
    pub fn kind(&self) -> &'static str {
        match self {
            PolicySetting::Fixed(_) => "fixed",
            PolicySetting::Adaptive(_) => "adaptive",
        }
    }

    pub fn describe(&self) -> String {
        match self {
            PolicySetting::Fixed(k) => format!("k={k}"),
            PolicySetting::Adaptive(cfg) => {
                format!("rho=({:.1},{:.1})", cfg.rho_min, cfg.rho_max)
            }
        }
    }
}

/// Everything one (policy, test split) evaluation produces.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub setting: PolicySetting,
    pub hyps: Vec<Vec<usize>>,
    pub traces: Vec<ActionTrace>,
    pub bleu: f64,
    pub accuracy: f64,
    pub al: f64,
    pub cw: f64,
    pub ap: f64,
    pub dal: f64,
    /// Sentences excluded from the AL mean (source never fully read).
    pub al_skipped: usize,
    /// Sentences excluded from all latency means (empty hypothesis).
    pub latency_skipped: usize,
    /// Mean adapter norms per adapter-carrying layer, when recorded.
    pub norms: Option<Vec<f64>>,
    pub seconds: f64,
}

/// Decode every pair with the given policy and aggregate metrics.
/// Corpus latency values are unweighted means of sentence values.
pub fn evaluate(
    model: &SimtModel,
    pairs: &[(Vec<usize>, Vec<usize>)],
    setting: PolicySetting,
    record_norms: bool,
    smooth_bleu: bool,
) -> Result<EvalOutcome> {
    let started = Instant::now();
    let mut hyps = Vec::with_capacity(pairs.len());
    let mut traces = Vec::with_capacity(pairs.len());
    let mut norm_rows: Vec<Vec<f64>> = Vec::new();
    for (src, _) in pairs {
        let (tokens, trace, norms) = decode_one(model, src, &setting, record_norms)?;
        hyps.push(tokens);
        traces.push(trace);
        if let Some(n) = norms {
            norm_rows.push(n);
        }
    }
    let seconds = started.elapsed().as_secs_f64();

    let refs: Vec<Vec<usize>> = pairs.iter().map(|(_, r)| r.clone()).collect();
    let bleu_score = bleu(&hyps, &refs, smooth_bleu)?;
    let accuracy = token_accuracy(&hyps, &refs)?;

    let mut al_sum = 0.0;
    let mut al_count = 0usize;
    let mut al_skipped = 0usize;
    let mut latency_skipped = 0usize;
    let (mut cw_sum, mut ap_sum, mut dal_sum) = (0.0, 0.0, 0.0);
    let mut latency_count = 0usize;
    for ((src, _), trace) in pairs.iter().zip(&traces) {
        if trace.writes() == 0 {
            latency_skipped += 1;
            continue;
        }
        let schedule = trace.delay_schedule(src.len())?;
        match average_lagging(&schedule) {
            Ok(al) => {
                al_sum += al;
                al_count += 1;
            }
            Err(_) => al_skipped += 1,
        }
        cw_sum += consecutive_wait(&schedule)?;
        ap_sum += average_proportion(&schedule)?;
        dal_sum += differentiable_average_lagging(&schedule)?;
        latency_count += 1;
    }
    let norms = if record_norms && !norm_rows.is_empty() {
        Some(mean_adapter_norms(&norm_rows)?)
    } else {
        None
    };
    Ok(EvalOutcome {
        setting,
        hyps,
        traces,
        bleu: bleu_score,
        accuracy,
        al: if al_count > 0 { al_sum / al_count as f64 } else { f64::NAN },
        cw: if latency_count > 0 { cw_sum / latency_count as f64 } else { f64::NAN },
        ap: if latency_count > 0 { ap_sum / latency_count as f64 } else { f64::NAN },
        dal: if latency_count > 0 { dal_sum / latency_count as f64 } else { f64::NAN },
        al_skipped,
        latency_skipped,
        norms,
        seconds,
    })
}

fn decode_one(
    model: &SimtModel,
    src: &[usize],
    setting: &PolicySetting,
    record_norms: bool,
) -> Result<(Vec<usize>, ActionTrace, Option<Vec<f64>>)> {
    match setting {
        PolicySetting::Fixed(k) => {
            let mut session = IncrementalDecoder::new(model);
            if record_norms {
                session = session.with_norm_recording();
            }
            let (tokens, trace) = fixed_waitk_decode(&mut session, src, *k, None)?;
            Ok((tokens, trace, session.sentence_norms()))
        }
        PolicySetting::Adaptive(cfg) => {
            let mut session = RecomputeDecoder::new(model);
            if record_norms {
                session = session.with_norm_recording();
            }
            let (tokens, trace) = adaptive_decode(&mut session, src, cfg, None)?;
            Ok((tokens, trace, session.sentence_norms()))
        }
    }
}

/// The published 9-point adaptive threshold grid.
pub fn default_threshold_grid() -> Vec<(f64, f64)> {
    vec![
        (0.2, 0.0),
        (0.4, 0.0),
        (0.6, 0.0),
        (0.8, 0.0),
        (1.0, 0.0),
        (1.0, 0.2),
        (1.0, 0.4),
        (1.0, 0.6),
        (1.0, 0.8),
    ]
}
