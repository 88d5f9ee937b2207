//! Quality and latency metrics.

mod bleu;
mod latency;

pub use bleu::{bleu, token_accuracy};
pub use latency::{
    average_lagging, average_proportion, consecutive_wait, differentiable_average_lagging,
    latency_report, latency_report_from_trace_line, LatencyReport,
};
