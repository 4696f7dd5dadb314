//! Run metrics: retention cost, time-averaged mean/max height and the
//! nonce-computation count.

use serde::Serialize;
use thiserror::Error;

use crate::chain::{BlockGroup, BlockId, SimTime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("height series is empty")]
    EmptySeries,
    #[error("averaging window [{0}, {1}] is empty")]
    EmptyWindow(SimTime, SimTime),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RetentionEntry {
    pub block: BlockId,
    pub weight: f64,
    pub expiration: SimTime,
    pub deletion: SimTime,
}

/// One entry per deleted group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RetentionLedger {
    entries: Vec<RetentionEntry>,
    weighted: f64,
    unweighted: f64,
}

impl RetentionLedger {
    pub fn record(&mut self, group: &BlockGroup) {
        debug_assert!(group.deletion >= group.expiration);
        let held = group.deletion - group.expiration;
        self.weighted += group.weight * held;
        self.unweighted += held;
        self.entries.push(RetentionEntry {
            block: group.base(),
            weight: group.weight,
            expiration: group.expiration,
            deletion: group.deletion,
        });
    }

    pub fn entries(&self) -> &[RetentionEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Σ (d − e) over deleted blocks.
    pub fn unweighted(&self) -> f64 {
        self.unweighted
    }
}

/// Σ weight · (d − e) over the ledger.
pub fn retention_cost(ledger: &RetentionLedger) -> f64 {
    ledger.weighted
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HeightSample {
    pub time: SimTime,
    pub mean: f64,
    pub max: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeightSeries {
    samples: Vec<HeightSample>,
}

impl HeightSeries {
    pub fn push(&mut self, time: SimTime, mean: f64, max: u64) {
        debug_assert!(self.samples.last().is_none_or(|s| s.time <= time));
        self.samples.push(HeightSample { time, mean, max });
    }

    pub fn samples(&self) -> &[HeightSample] {
        &self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl FromIterator<HeightSample> for HeightSeries {
    fn from_iter<I: IntoIterator<Item = HeightSample>>(iter: I) -> Self {
        HeightSeries {
            samples: iter.into_iter().collect(),
        }
    }
}

/// Time averages of the piecewise-constant mean and max height over
/// `[start, end]`. Between samples the latest sample's value holds; before
/// the first sample the first value is used.
pub fn time_averages(
    series: &HeightSeries,
    start: SimTime,
    end: SimTime,
) -> Result<(f64, f64), MetricsError> {
    let samples = series.samples();
    if samples.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    if !(end > start) {
        return Err(MetricsError::EmptyWindow(start, end));
    }
    let mut mean_area = 0.0;
    let mut max_area = 0.0;
    for (i, sample) in samples.iter().enumerate() {
        let from = if i == 0 {
            start
        } else {
            sample.time.max(start)
        };
        let until = samples.get(i + 1).map_or(end, |n| n.time).min(end);
        if until > from {
            mean_area += sample.mean * (until - from);
            max_area += sample.max as f64 * (until - from);
        }
    }
    let width = end - start;
    Ok((mean_area / width, max_area / width))
}

/// Nonce computations implied by the units mined per logical block, plus genesis.
pub fn nonce_count<I: IntoIterator<Item = u64>>(units_per_block: I) -> u64 {
    1 + units_per_block.into_iter().sum::<u64>()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub variant: String,
    pub threshold: u64,
    pub mu: u32,
    pub lambda: f64,
    pub delta_unweighted: f64,
    pub delta_weighted: f64,
    pub h_bar: f64,
    pub m_bar: f64,
    pub epsilon: u64,
    pub pow_trials: u64,
    pub blocks: u64,
    pub events: u64,
    pub verifications: u64,
    pub seed: u64,
    /// SHA-256 over the processed event log, hex encoded.
    pub event_digest: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(e: f64, d: f64, w: f64) -> BlockGroup {
        BlockGroup {
            base_index: 1,
            units: vec![BlockId::new(1, 0)],
            head: BlockId::new(1, 0),
            expiration: e,
            deletion: d,
            weight: w,
            aog_prev: None,
        }
    }

    #[test]
    fn retention_without_extension_is_zero() {
        let mut l = RetentionLedger::default();
        l.record(&group(5.0, 5.0, 1.0));
        l.record(&group(9.0, 9.0, 1.5));
        assert_eq!(retention_cost(&l), 0.0);
    }

    #[test]
    fn retained_block_contributes_interval() {
        let mut l = RetentionLedger::default();
        l.record(&group(20.0, 40.0, 1.0));
        l.record(&group(40.0, 40.0, 1.0));
        assert_eq!(retention_cost(&l), 20.0);
        assert_eq!(l.unweighted(), 20.0);
    }

    #[test]
    fn weighted_vs_unweighted() {
        let mut l = RetentionLedger::default();
        l.record(&group(0.0, 10.0, 1.99));
        assert_eq!(l.unweighted(), 10.0);
        assert!((retention_cost(&l) - 19.9).abs() < 1e-12);
    }

    #[test]
    fn constant_series_average() {
        let s: HeightSeries = [HeightSample {
            time: 0.0,
            mean: 3.5,
            max: 7,
        }]
        .into_iter()
        .collect();
        assert_eq!(time_averages(&s, 0.0, 10.0), Ok((3.5, 7.0)));
    }

    #[test]
    fn two_equal_segments() {
        let s: HeightSeries = [
            HeightSample {
                time: 0.0,
                mean: 2.0,
                max: 2,
            },
            HeightSample {
                time: 5.0,
                mean: 4.0,
                max: 4,
            },
        ]
        .into_iter()
        .collect();
        assert_eq!(time_averages(&s, 0.0, 10.0), Ok((3.0, 3.0)));
    }

    #[test]
    fn coincident_samples_take_the_last() {
        let s: HeightSeries = [
            HeightSample {
                time: 0.0,
                mean: 1.0,
                max: 1,
            },
            HeightSample {
                time: 0.0,
                mean: 5.0,
                max: 5,
            },
            HeightSample {
                time: 1.0,
                mean: 0.0,
                max: 0,
            },
        ]
        .into_iter()
        .collect();
        assert_eq!(time_averages(&s, 0.0, 2.0), Ok((2.5, 2.5)));
    }

    #[test]
    fn errors_on_empty_inputs() {
        assert_eq!(
            time_averages(&HeightSeries::default(), 0.0, 1.0),
            Err(MetricsError::EmptySeries)
        );
        let s: HeightSeries = [HeightSample {
            time: 0.0,
            mean: 1.0,
            max: 1,
        }]
        .into_iter()
        .collect();
        assert_eq!(
            time_averages(&s, 1.0, 1.0),
            Err(MetricsError::EmptyWindow(1.0, 1.0))
        );
    }

    #[test]
    fn nonce_counts_for_micro_trace() {
        assert_eq!(nonce_count([50, 50]), 101);
        assert_eq!(nonce_count([60, 1]), 62);
        assert_eq!(nonce_count([100, 1]), 102);
    }
}
