//! READ/WRITE action traces and the delay schedules derived from them.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Read,
    Write,
}

/// Ordered READ/WRITE record of one decoded sentence.
///
/// Only content events are recorded: the READ that consumes the end-of-source
/// marker sets `read_end_marker` instead of appending an `R`, and the final
/// end-of-sequence emission terminates decoding without appending a `W`.
/// READ count therefore equals source tokens consumed and WRITE count equals
/// emitted tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActionTrace {
    pub actions: Vec<Action>,
    pub read_end_marker: bool,
    /// Set when the output-length guard stopped generation.
    pub truncated: bool,
}

impl ActionTrace {
    pub fn reads(&self) -> usize {
        self.actions.iter().filter(|a| **a == Action::Read).count()
    }

    pub fn writes(&self) -> usize {
        self.actions.iter().filter(|a| **a == Action::Write).count()
    }

    /// Serialize as one line of 'R' and 'W' characters, e.g. "RRRWRWRWWW".
    pub fn to_line(&self) -> String {
        self.actions
            .iter()
            .map(|a| match a {
                Action::Read => 'R',
                Action::Write => 'W',
            })
            .collect()
    }

    pub fn from_line(line: &str) -> Result<ActionTrace> {
        let mut actions = Vec::with_capacity(line.len());
        for (i, c) in line.trim().chars().enumerate() {
            match c {
                'R' => actions.push(Action::Read),
                'W' => actions.push(Action::Write),
                other => {
                    return Err(Error::InvalidInput(format!(
                        "trace char {other:?} at position {i} (expected R or W)"
                    )))
                }
            }
        }
        Ok(ActionTrace { actions, ..Default::default() })
    }

    /// Derive g(t) against a known source length. `src_len` may exceed the
    /// number of reads when decoding stopped early.
    pub fn delay_schedule(&self, src_len: usize) -> Result<DelaySchedule> {
        if self.reads() > src_len {
            return Err(Error::InvalidInput(format!(
                "trace reads {} source tokens but |x| = {src_len}",
                self.reads()
            )));
        }
        let mut read = 0usize;
        let mut g = Vec::with_capacity(self.writes());
        for a in &self.actions {
            match a {
                Action::Read => read += 1,
                Action::Write => g.push(read),
            }
        }
        DelaySchedule::new(src_len, g)
    }
}

/// The function g(t): source tokens read when emitting target token t.
/// The single object every latency metric consumes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelaySchedule {
    src_len: usize,
    g: Vec<usize>,
}

impl DelaySchedule {
    pub fn new(src_len: usize, g: Vec<usize>) -> Result<DelaySchedule> {
        if src_len == 0 {
            return Err(Error::InvalidInput("empty source in delay schedule".into()));
        }
        let mut prev = 0usize;
        for (i, &gi) in g.iter().enumerate() {
            if gi < 1 || gi < prev || gi > src_len {
                return Err(Error::InvalidInput(format!(
                    "g({}) = {gi} violates monotonicity or bounds (prev {prev}, |x| {src_len})",
                    i + 1
                )));
            }
            prev = gi;
        }
        Ok(DelaySchedule { src_len, g })
    }

    /// The schedule of a pure wait-k policy over |x| source and |y| target
    /// tokens: g(t) = min(|x|, t + k - 1).
    pub fn wait_k(k: usize, src_len: usize, tgt_len: usize) -> Result<DelaySchedule> {
        if k == 0 {
            return Err(Error::InvalidInput("wait-k requires k >= 1".into()));
        }
        let g = (1..=tgt_len).map(|t| wait_k_schedule(k, src_len, t)).collect();
        DelaySchedule::new(src_len, g)
    }

    pub fn src_len(&self) -> usize {
        self.src_len
    }

    pub fn tgt_len(&self) -> usize {
        self.g.len()
    }

    pub fn g(&self) -> &[usize] {
        &self.g
    }

    /// First step at which the full source has been read, if any.
    pub fn full_read_step(&self) -> Option<usize> {
        self.g.iter().position(|&gi| gi == self.src_len).map(|i| i + 1)
    }
}

/// The wait-k reading schedule g_k(t) = min(|x|, t + k - 1).
pub fn wait_k_schedule(k: usize, src_len: usize, t: usize) -> usize {
    debug_assert!(k >= 1 && t >= 1 && src_len >= 1);
    src_len.min(t + k - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_formula_cases() {
        assert_eq!(wait_k_schedule(3, 5, 1), 3);
        assert_eq!(wait_k_schedule(1, 5, 7), 5);
        for t in 1..10 {
            assert_eq!(wait_k_schedule(9, 4, t), 4);
        }
    }

    #[test]
    fn trace_line_round_trip() {
        let trace = ActionTrace::from_line("RRRWRWRWWW").unwrap();
        assert_eq!(trace.reads(), 5);
        assert_eq!(trace.writes(), 5);
        assert_eq!(trace.to_line(), "RRRWRWRWWW");
    }

    #[test]
    fn bad_trace_char_is_rejected() {
        assert!(ActionTrace::from_line("RRX").is_err());
    }

    #[test]
    fn derived_schedule_matches_reads() {
        let trace = ActionTrace::from_line("RRRWRWWR").unwrap();
        let s = trace.delay_schedule(5).unwrap();
        assert_eq!(s.g(), &[3, 4, 4]);
        assert_eq!(s.src_len(), 5);
    }

    #[test]
    fn schedule_rejects_decreasing_g() {
        assert!(DelaySchedule::new(5, vec![3, 2]).is_err());
        assert!(DelaySchedule::new(5, vec![3, 6]).is_err());
        assert!(DelaySchedule::new(5, vec![0]).is_err());
    }

    #[test]
    fn wait_k_schedule_object() {
        let s = DelaySchedule::wait_k(3, 6, 6).unwrap();
        assert_eq!(s.g(), &[3, 4, 5, 6, 6, 6]);
        assert_eq!(s.full_read_step(), Some(4));
    }
}
