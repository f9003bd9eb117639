//! Latency statistics and the analytic time-to-first-audio model.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Per-component latency summary. P50 is the nearest-rank median,
/// `ceil(0.5 * n)`-th smallest sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub component: String,
    pub samples_ms: Vec<f64>,
    pub warmup_samples_ms: Vec<f64>,
    pub p50_ms: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub iterations: usize,
    pub warmup_excluded: usize,
}

/// Nearest-rank percentile over unsorted samples, `q` in `(0, 1]`.
pub fn nearest_rank(samples: &[f64], q: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

impl LatencyReport {
    /// Build a report from measured samples; `warmup_samples_ms` are kept for
    /// reference but do not enter the statistics.
    pub fn from_samples(
        component: impl Into<String>,
        samples_ms: Vec<f64>,
        warmup_samples_ms: Vec<f64>,
    ) -> Result<Self, StatsError> {
        if samples_ms.is_empty() {
            return Err(StatsError::InvalidArgument(
                "at least one measured sample is required".into(),
            ));
        }
        if samples_ms.iter().chain(&warmup_samples_ms).any(|s| !s.is_finite()) {
            return Err(StatsError::InvalidArgument("non-finite sample".into()));
        }
        let n = samples_ms.len();
        let p50_ms = nearest_rank(&samples_ms, 0.5).unwrap();
        let mean_ms = samples_ms.iter().sum::<f64>() / n as f64;
        let min_ms = samples_ms.iter().copied().fold(f64::INFINITY, f64::min);
        let max_ms = samples_ms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            component: component.into(),
            iterations: n,
            warmup_excluded: warmup_samples_ms.len(),
            samples_ms,
            warmup_samples_ms,
            p50_ms,
            // rounding noise in the sum can push a constant series' mean a ulp outside
            mean_ms: mean_ms.clamp(min_ms, max_ms),
            min_ms,
            max_ms,
        })
    }

    /// Recompute the statistics from the stored samples.
    pub fn recomputed(&self) -> Result<Self, StatsError> {
        Self::from_samples(
            self.component.clone(),
            self.samples_ms.clone(),
            self.warmup_samples_ms.clone(),
        )
    }
}

pub const TABLE_HEADER: [&str; 7] = ["Component", "P50", "Mean", "Min", "Max", "N", "Warmup"];

/// Aligned text table in the shape `Component | P50 | Mean | Min | Max | N | Warmup`,
/// values in milliseconds with one decimal.
pub fn render_table(reports: &[LatencyReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.component.len())
        .chain(std::iter::once(TABLE_HEADER[0].len()))
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", TABLE_HEADER[0]);
    for h in &TABLE_HEADER[1..] {
        let _ = write!(out, " {h:>9}");
    }
    out.push('\n');
    let _ = writeln!(out, "{}", "-".repeat(width + 10 * (TABLE_HEADER.len() - 1)));
    for r in reports {
        let _ = writeln!(
            out,
            "{:<width$} {:>9.1} {:>9.1} {:>9.1} {:>9.1} {:>9} {:>9}",
            r.component, r.p50_ms, r.mean_ms, r.min_ms, r.max_ms, r.iterations, r.warmup_excluded
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TtfaMode {
    /// Every stage finishes before the next starts.
    TurnBased,
    /// LLM and TTS overlap through the sentence buffer.
    Streaming,
}

/// Component latencies feeding [`LatencyModel::estimate_ttfa`]. Turn-based
/// mode uses the three full-stage terms, streaming mode replaces the LLM and
/// TTS terms with time-to-first-sentence and TTS time-to-first-byte.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub t_stt_ms: Option<f64>,
    pub t_llm_ms: Option<f64>,
    pub t_tts_ms: Option<f64>,
    pub t_llm_first_sentence_ms: Option<f64>,
    pub t_tts_ttfb_ms: Option<f64>,
}

impl LatencyModel {
    pub fn turn_based(stt: f64, llm: f64, tts: f64) -> Self {
        Self {
            t_stt_ms: Some(stt),
            t_llm_ms: Some(llm),
            t_tts_ms: Some(tts),
            ..Self::default()
        }
    }

    pub fn streaming(stt: f64, llm_first_sentence: f64, tts_ttfb: f64) -> Self {
        Self {
            t_stt_ms: Some(stt),
            t_llm_first_sentence_ms: Some(llm_first_sentence),
            t_tts_ttfb_ms: Some(tts_ttfb),
            ..Self::default()
        }
    }

    pub fn estimate_ttfa(&self, mode: TtfaMode) -> Result<f64, StatsError> {
        let terms: [(&str, Option<f64>); 3] = match mode {
            TtfaMode::TurnBased => [
                ("t_stt_ms", self.t_stt_ms),
                ("t_llm_ms", self.t_llm_ms),
                ("t_tts_ms", self.t_tts_ms),
            ],
            TtfaMode::Streaming => [
                ("t_stt_ms", self.t_stt_ms),
                ("t_llm_first_sentence_ms", self.t_llm_first_sentence_ms),
                ("t_tts_ttfb_ms", self.t_tts_ttfb_ms),
            ],
        };
        let mut total = 0.0;
        for (name, value) in terms {
            let v = value.ok_or_else(|| StatsError::InvalidArgument(format!("{name} is required for {mode:?}")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(StatsError::InvalidArgument(format!(
                    "{name} must be a non-negative number, got {v}"
                )));
            }
            total += v;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn turn_based_estimate() {
        let m = LatencyModel::turn_based(400.0, 800.0, 400.0);
        assert_eq!(m.estimate_ttfa(TtfaMode::TurnBased).unwrap(), 1600.0);
    }

    #[test]
    fn streaming_estimate() {
        let m = LatencyModel::streaming(400.0, 300.0, 200.0);
        assert_eq!(m.estimate_ttfa(TtfaMode::Streaming).unwrap(), 900.0);
        // the streaming model does not carry the turn-based terms
        assert!(m.estimate_ttfa(TtfaMode::TurnBased).is_err());
    }

    #[test]
    fn zero_and_negative() {
        let m = LatencyModel::turn_based(0.0, 0.0, 0.0);
        assert_eq!(m.estimate_ttfa(TtfaMode::TurnBased).unwrap(), 0.0);
        let m = LatencyModel::streaming(400.0, -1.0, 200.0);
        assert!(matches!(
            m.estimate_ttfa(TtfaMode::Streaming),
            Err(StatsError::InvalidArgument(_))
        ));
    }

    #[test]
    fn single_sample_report() {
        let r = LatencyReport::from_samples("x", vec![42.0], vec![]).unwrap();
        assert_eq!((r.min_ms, r.p50_ms, r.max_ms, r.mean_ms), (42.0, 42.0, 42.0, 42.0));
    }

    #[test]
    fn nearest_rank_even_and_odd() {
        assert_eq!(nearest_rank(&[5.0, 1.0, 3.0], 0.5), Some(3.0));
        // ceil(0.5 * 4) = 2nd smallest
        assert_eq!(nearest_rank(&[4.0, 1.0, 3.0, 2.0], 0.5), Some(2.0));
        assert_eq!(nearest_rank(&[], 0.5), None);
    }

    #[test]
    fn warmup_kept_out_of_stats() {
        let r = LatencyReport::from_samples("llm_ttft", vec![300.0, 310.0], vec![4300.0]).unwrap();
        assert_eq!(r.max_ms, 310.0);
        assert_eq!(r.warmup_excluded, 1);
    }

    #[test]
    fn empty_report_rejected() {
        assert!(LatencyReport::from_samples("x", vec![], vec![1.0]).is_err());
    }

    #[test]
    fn table_has_one_row_per_report() {
        let a = LatencyReport::from_samples("stt", vec![337.0], vec![]).unwrap();
        let b = LatencyReport::from_samples("tts_ttfb", vec![219.0, 220.0], vec![]).unwrap();
        let t = render_table(&[a, b]);
        assert_eq!(t.lines().count(), 4);
        assert!(t.lines().nth(2).unwrap().starts_with("stt "));
    }

    proptest! {
        #[test]
        fn report_invariants(samples in proptest::collection::vec(0.0f64..10_000.0, 1..200)) {
            let r = LatencyReport::from_samples("c", samples, vec![]).unwrap();
            prop_assert!(r.min_ms <= r.p50_ms && r.p50_ms <= r.max_ms);
            prop_assert!(r.min_ms <= r.mean_ms && r.mean_ms <= r.max_ms);
            prop_assert_eq!(r.recomputed().unwrap(), r.clone());
            if r.samples_ms.len() % 2 == 1 {
                let mut s = r.samples_ms.clone();
                s.sort_by(f64::total_cmp);
                prop_assert_eq!(r.p50_ms, s[s.len() / 2]);
            }
        }

        #[test]
        fn estimate_is_monotone(
            a in 0.0f64..5000.0, b in 0.0f64..5000.0, c in 0.0f64..5000.0,
            bump in 0.0f64..1000.0, which in 0usize..3,
        ) {
            let mut v = [a, b, c];
            for mode in [TtfaMode::TurnBased, TtfaMode::Streaming] {
                let make = |v: [f64; 3]| match mode {
                    TtfaMode::TurnBased => LatencyModel::turn_based(v[0], v[1], v[2]),
                    TtfaMode::Streaming => LatencyModel::streaming(v[0], v[1], v[2]),
                };
                let base = make(v).estimate_ttfa(mode).unwrap();
                v[which] += bump;
                let bumped = make(v).estimate_ttfa(mode).unwrap();
                v[which] -= bump;
                prop_assert!(bumped >= base);
            }
        }
    }
}
