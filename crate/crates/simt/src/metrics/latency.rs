//! Exact latency metrics over delay schedules: AL, CW, AP, DAL.
//!
//! Each formula is implemented exactly as printed in its source; in
//! particular AL's deduction term divides by |y|/|x| while DAL's divides by
//! |x|/|y|. The asymmetry is intentional and preserved, not "corrected".

use crate::error::{Error, Result};
use crate::policy::{ActionTrace, DelaySchedule};

/// Average Lagging: mean lag behind the ideal zero-wait policy over the steps
/// until the source is fully read,
/// AL = (1/tau) * sum_{t<=tau} [ g(t) - (t-1)/(|y|/|x|) ],
/// tau = min { t | g(t) = |x| }.
pub fn average_lagging(s: &DelaySchedule) -> Result<f64> {
    let tau = s
        .full_read_step()
        .ok_or(Error::IncompleteSchedule { src_len: s.src_len() })?;
    let rate = s.tgt_len() as f64 / s.src_len() as f64;
    let sum: f64 = s.g()[..tau]
        .iter()
        .enumerate()
        .map(|(i, &g)| g as f64 - i as f64 / rate)
        .sum();
    Ok(sum / tau as f64)
}

/// Consecutive Wait: average number of source tokens read between
/// consecutive emissions, with g(0) = 0.
pub fn consecutive_wait(s: &DelaySchedule) -> Result<f64> {
    if s.tgt_len() == 0 {
        return Err(Error::EmptyTrace);
    }
    let mut prev = 0usize;
    let mut total = 0usize;
    let mut positive = 0usize;
    for &g in s.g() {
        let diff = g - prev;
        total += diff;
        if diff > 0 {
            positive += 1;
        }
        prev = g;
    }
    if positive == 0 {
        // g(1) >= 1 guarantees a positive first increment for valid schedules
        return Err(Error::EmptyTrace);
    }
    Ok(total as f64 / positive as f64)
}

/// Average Proportion: AP = (1/(|x||y|)) * sum_i g(i).
pub fn average_proportion(s: &DelaySchedule) -> Result<f64> {
    if s.tgt_len() == 0 {
        return Err(Error::EmptyTrace);
    }
    let sum: usize = s.g().iter().sum();
    Ok(sum as f64 / (s.src_len() * s.tgt_len()) as f64)
}

/// Differentiable Average Lagging:
/// g'(1) = g(1); g'(i) = max(g(i), g'(i-1) + |x|/|y|);
/// DAL = (1/|y|) * sum_i [ g'(i) - (i-1)/(|x|/|y|) ].
pub fn differentiable_average_lagging(s: &DelaySchedule) -> Result<f64> {
    if s.tgt_len() == 0 {
        return Err(Error::EmptyTrace);
    }
    let ratio = s.src_len() as f64 / s.tgt_len() as f64;
    let mut gp = 0.0;
    let mut sum = 0.0;
    for (i, &g) in s.g().iter().enumerate() {
        gp = if i == 0 { g as f64 } else { (g as f64).max(gp + ratio) };
        sum += gp - i as f64 / ratio;
    }
    Ok(sum / s.tgt_len() as f64)
}

/// All four latency metrics of one schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyReport {
    pub al: f64,
    pub cw: f64,
    pub ap: f64,
    pub dal: f64,
}

pub fn latency_report(s: &DelaySchedule) -> Result<LatencyReport> {
    Ok(LatencyReport {
        al: average_lagging(s)?,
        cw: consecutive_wait(s)?,
        ap: average_proportion(s)?,
        dal: differentiable_average_lagging(s)?,
    })
}

/// The same four metrics computed directly from a serialized action trace,
/// scanning R/W characters with running sums — an independent code path from
/// the [`DelaySchedule`] route. `|x|` is taken to be the number of reads, so
/// this applies to completed decodes.
pub fn latency_report_from_trace_line(line: &str) -> Result<LatencyReport> {
    let trace = ActionTrace::from_line(line)?;
    let src_len = trace.reads();
    let tgt_len = trace.writes();
    if src_len == 0 || tgt_len == 0 {
        return Err(Error::EmptyTrace);
    }

    // single scan accumulating everything the four metrics need
    let mut read = 0usize;
    let mut write = 0usize;
    let mut al_sum = 0.0;
    let mut tau: Option<usize> = None;
    let mut cw_positive = 0usize;
    let mut prev_g = 0usize;
    let mut ap_sum = 0usize;
    let mut gp = 0.0;
    let mut dal_sum = 0.0;
    let ratio = src_len as f64 / tgt_len as f64;
    for c in line.trim().chars() {
        match c {
            'R' => read += 1,
            'W' => {
                write += 1;
                let t = write;
                if tau.is_none() {
                    al_sum += read as f64 - (t - 1) as f64 * src_len as f64 / tgt_len as f64;
                    if read == src_len {
                        tau = Some(t);
                    }
                }
                if read > prev_g {
                    cw_positive += 1;
                }
                ap_sum += read;
                gp = if t == 1 { read as f64 } else { (read as f64).max(gp + ratio) };
                dal_sum += gp - (t - 1) as f64 / ratio;
                prev_g = read;
            }
            _ => unreachable!("validated by ActionTrace::from_line"),
        }
    }
    let tau = tau.ok_or(Error::IncompleteSchedule { src_len })?;
    Ok(LatencyReport {
        al: al_sum / tau as f64,
        cw: read as f64 / cw_positive as f64,
        ap: ap_sum as f64 / (src_len * tgt_len) as f64,
        dal: dal_sum / tgt_len as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-9, "{a} != {b}");
    }

    #[test]
    fn wait3_hand_case() {
        let s = DelaySchedule::wait_k(3, 6, 6).unwrap();
        close(average_lagging(&s).unwrap(), 3.0);
        close(consecutive_wait(&s).unwrap(), 1.5);
        close(average_proportion(&s).unwrap(), 30.0 / 36.0);
        close(differentiable_average_lagging(&s).unwrap(), 3.0);
    }

    #[test]
    fn wait1_hand_case() {
        let s = DelaySchedule::wait_k(1, 4, 4).unwrap();
        close(average_lagging(&s).unwrap(), 1.0);
        close(consecutive_wait(&s).unwrap(), 1.0);
        close(average_proportion(&s).unwrap(), 0.625);
        close(differentiable_average_lagging(&s).unwrap(), 1.0);
    }

    #[test]
    fn full_sentence_hand_case() {
        let s = DelaySchedule::new(5, vec![5, 5, 5, 5, 5]).unwrap();
        close(average_lagging(&s).unwrap(), 5.0);
        close(consecutive_wait(&s).unwrap(), 5.0);
        close(average_proportion(&s).unwrap(), 1.0);
        close(differentiable_average_lagging(&s).unwrap(), 5.0);
    }

    #[test]
    fn incomplete_schedule_is_an_error() {
        let s = DelaySchedule::new(5, vec![2, 3, 4]).unwrap();
        assert!(matches!(
            average_lagging(&s),
            Err(Error::IncompleteSchedule { src_len: 5 })
        ));
    }

    #[test]
    fn trace_route_equals_schedule_route() {
        for (line, src_len) in [
            ("RRRWRWRWWW", 5),
            ("RWRWRWRW", 4),
            ("RRRRRWWWWW", 5),
            ("RRWWRWRRWW", 5),
        ] {
            let from_trace = latency_report_from_trace_line(line).unwrap();
            let trace = ActionTrace::from_line(line).unwrap();
            let s = trace.delay_schedule(src_len).unwrap();
            let from_schedule = latency_report(&s).unwrap();
            close(from_trace.al, from_schedule.al);
            close(from_trace.cw, from_schedule.cw);
            close(from_trace.ap, from_schedule.ap);
            close(from_trace.dal, from_schedule.dal);
        }
    }

    #[test]
    fn al_equals_min_k_srclen_for_pure_waitk() {
        // brute-force property, both routes
        for src_len in 2..=12usize {
            for k in 1..=10usize {
                let s = DelaySchedule::wait_k(k, src_len, src_len).unwrap();
                let al = average_lagging(&s).unwrap();
                close(al, k.min(src_len) as f64);
                let dal = differentiable_average_lagging(&s).unwrap();
                close(dal, k.min(src_len) as f64);
            }
        }
    }
}
