//! Discrete-event driver: replays a lifetime trace through the chain,
//! collects metrics and runs parameter sweeps.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chain::{BlockId, ChainError, ChainState, SimTime};
use crate::crypto::{verify_chain, FailureKind};
use crate::metrics::{
    retention_cost, time_averages, HeightSeries, MetricsError, RetentionLedger, RunResult,
};
use crate::params::{ParamsError, SimParams};
use crate::variants::{VariantKind, VariantSpec};
use crate::workload::{LifetimeTrace, TraceRecord, WorkloadError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid trace: {0}")]
    Trace(#[from] WorkloadError),
    #[error("invalid parameters: {0}")]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("chain verification failed at t={time} (event {event}): {}", describe(.failures))]
    Verification {
        time: SimTime,
        event: u64,
        failures: Vec<(BlockId, FailureKind)>,
    },
    #[error("empty parameter grid")]
    EmptyGrid,
}

fn describe(failures: &[(BlockId, FailureKind)]) -> String {
    failures
        .iter()
        .map(|(id, kind)| format!("{id} {kind}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Event {
    /// Process expirations and deletions due at this time.
    Maintenance(SimTime),
    Arrival(TraceRecord),
}

impl Event {
    pub fn time(&self) -> SimTime {
        match self {
            Event::Maintenance(t) => *t,
            Event::Arrival(r) => r.arrival,
        }
    }
}

/// Merges trace arrivals with the chain's pending expirations/deletions.
/// At equal times maintenance pops first; arrivals keep trace order.
pub struct EventQueue<'a> {
    arrivals: &'a [TraceRecord],
    next: usize,
}

impl<'a> EventQueue<'a> {
    pub fn new(arrivals: &'a [TraceRecord]) -> Self {
        EventQueue { arrivals, next: 0 }
    }

    pub fn arrivals_pending(&self) -> usize {
        self.arrivals.len() - self.next
    }

    pub fn pop(&mut self, chain: &ChainState) -> Option<Event> {
        let due = chain.next_due();
        match (self.arrivals.get(self.next), due) {
            (Some(r), Some(t)) if t <= r.arrival => Some(Event::Maintenance(t)),
            (Some(r), _) => {
                self.next += 1;
                Some(Event::Arrival(*r))
            }
            (None, Some(t)) => Some(Event::Maintenance(t)),
            (None, None) => None,
        }
    }
}

/// Everything a run produced, beyond the summary row.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub result: RunResult,
    pub ledger: RetentionLedger,
    pub series: HeightSeries,
    /// Units mined per logical block, in arrival order.
    pub units_per_block: Vec<u64>,
}

type Observer<'o> = Box<dyn FnMut(&ChainState, &Event) + 'o>;

pub struct Runner<'o> {
    params: SimParams,
    corrupt_group: Option<u64>,
    observer: Option<Observer<'o>>,
}

impl<'o> Runner<'o> {
    pub fn new(params: SimParams) -> Self {
        Runner {
            params,
            corrupt_group: None,
            observer: None,
        }
    }

    /// Fault injection: corrupt the base unit of this logical block right after insertion.
    pub fn corrupt_after_insert(mut self, group: u64) -> Self {
        self.corrupt_group = Some(group);
        self
    }

    /// Called after every processed event.
    pub fn observe(mut self, f: impl FnMut(&ChainState, &Event) + 'o) -> Self {
        self.observer = Some(Box::new(f));
        self
    }

    pub fn run(mut self, trace: &LifetimeTrace) -> Result<RunOutput, SimError> {
        trace.validate()?;
        self.params.validate()?;
        let params = self.params.clone();
        let mut chain = ChainState::new(params.clone())?;
        let mut queue = EventQueue::new(&trace.records);
        let mut ledger = RetentionLedger::default();
        let mut series = HeightSeries::default();
        let mut digest = Sha256::new();
        let mut units_per_block = Vec::with_capacity(trace.len());
        let mut events = 0u64;
        let mut verifications = 0u64;
        let mut first_insert: Option<SimTime> = None;
        let mut last_delete: SimTime = f64::NEG_INFINITY;

        let check = |chain: &ChainState, events: u64, verifications: &mut u64| {
            *verifications += 1;
            let report = verify_chain(chain);
            if report.is_valid() {
                Ok(())
            } else {
                Err(SimError::Verification {
                    time: chain.clock(),
                    event: events,
                    failures: report.failures,
                })
            }
        };

        while let Some(event) = queue.pop(&chain) {
            match event {
                Event::Maintenance(t) => {
                    digest.update(b"M");
                    digest.update(t.to_le_bytes());
                    for group in chain.expire_and_delete(t) {
                        digest.update(group.base_index.to_le_bytes());
                        digest.update(group.deletion.to_le_bytes());
                        ledger.record(&group);
                        last_delete = last_delete.max(group.deletion);
                    }
                }
                Event::Arrival(r) => {
                    let report = chain.insert_block(r.arrival, r.lifetime)?;
                    digest.update(b"A");
                    digest.update(r.arrival.to_le_bytes());
                    digest.update(report.group.to_le_bytes());
                    digest.update((report.units.len() as u64).to_le_bytes());
                    digest.update(report.eog_parent.index.to_le_bytes());
                    digest.update(report.aog_prev.map_or(u64::MAX, |p| p.index).to_le_bytes());
                    units_per_block.push(report.units.len() as u64);
                    first_insert.get_or_insert(r.arrival);
                    if self.corrupt_group == Some(report.group) {
                        chain.corrupt_unit(report.units[0], 0);
                    }
                }
            }
            events += 1;
            let (mean, max) = chain.height_stats();
            series.push(event.time(), mean, max);
            if let Some(f) = self.observer.as_mut() {
                f(&chain, &event);
            }
            let last_arrival = matches!(event, Event::Arrival(_)) && queue.arrivals_pending() == 0;
            if (params.verify_every > 0 && events.is_multiple_of(params.verify_every)) || last_arrival {
                check(&chain, events, &mut verifications)?;
            }
        }
        check(&chain, events, &mut verifications)?;

        let (h_bar, m_bar) = match first_insert {
            Some(start) => time_averages(&series, start, last_delete)?,
            None => (0.0, 0.0),
        };
        debug_assert_eq!(
            chain.pow_solves(),
            crate::metrics::nonce_count(units_per_block.iter().copied())
        );
        let result = RunResult {
            variant: params.variant.kind.to_string(),
            threshold: params.threshold,
            mu: params.variant.mu,
            lambda: params.variant.lwb_weight,
            delta_unweighted: ledger.unweighted(),
            delta_weighted: retention_cost(&ledger),
            h_bar,
            m_bar,
            epsilon: chain.pow_solves(),
            pow_trials: chain.pow_trials(),
            blocks: units_per_block.len() as u64,
            events,
            verifications,
            seed: params.seed,
            event_digest: hex::encode(digest.finalize()),
        };
        Ok(RunOutput {
            result,
            ledger,
            series,
            units_per_block,
        })
    }
}

pub fn run(trace: &LifetimeTrace, params: &SimParams) -> Result<RunResult, SimError> {
    Runner::new(params.clone()).run(trace).map(|o| o.result)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub result: RunResult,
    pub delta_rel_mu1: Option<f64>,
    pub delta_rel_k10: Option<f64>,
    pub eps_rel_mu1: Option<f64>,
}

pub const RESULTS_HEADER: [&str; 14] = [
    "variant",
    "K",
    "mu",
    "lambda",
    "delta_unweighted",
    "delta_weighted",
    "delta_rel_mu1",
    "delta_rel_K10",
    "h_bar",
    "m_bar",
    "epsilon",
    "eps_rel_mu1",
    "events",
    "seed",
];

impl SweepRow {
    pub fn csv_fields(&self) -> [String; 14] {
        let r = &self.result;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            r.variant.clone(),
            r.threshold.to_string(),
            r.mu.to_string(),
            r.lambda.to_string(),
            r.delta_unweighted.to_string(),
            r.delta_weighted.to_string(),
            opt(self.delta_rel_mu1),
            opt(self.delta_rel_k10),
            r.h_bar.to_string(),
            r.m_bar.to_string(),
            r.epsilon.to_string(),
            opt(self.eps_rel_mu1),
            r.events.to_string(),
            r.seed.to_string(),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

impl SweepTable {
    /// Builds the table and fills the normalized columns from reference rows
    /// of the same variant: μ = 1 at the same K, and K = 10 at the same μ.
    pub fn from_results(results: Vec<RunResult>) -> Self {
        let find = |variant: &str, k: u64, mu: u32| {
            results
                .iter()
                .find(|r| r.variant == variant && r.threshold == k && r.mu == mu)
        };
        let rows = results
            .iter()
            .map(|r| {
                let mu1 = find(&r.variant, r.threshold, 1);
                let k10 = find(&r.variant, 10, r.mu);
                SweepRow {
                    result: r.clone(),
                    delta_rel_mu1: mu1.and_then(|b| ratio(r.delta_weighted, b.delta_weighted)),
                    delta_rel_k10: k10.and_then(|b| ratio(r.delta_weighted, b.delta_weighted)),
                    eps_rel_mu1: mu1.and_then(|b| ratio(r.epsilon as f64, b.epsilon as f64)),
                }
            })
            .collect();
        SweepTable { rows }
    }

    pub fn row(&self, variant: VariantKind, k: u64, mu: u32) -> Option<&SweepRow> {
        self.rows.iter().find(|r| {
            r.result.variant == variant.as_str() && r.result.threshold == k && r.result.mu == mu
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(RESULTS_HEADER)?;
        for row in &self.rows {
            w.write_record(row.csv_fields())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Writes two-column `x y` data files, one per metric and series:
    /// `{variant}_K{K}_{metric}.dat` over μ, and `{variant}_mu{μ}_{metric}.dat` over K.
    pub fn write_plot_data(&self, dir: &Path) -> std::io::Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        type Metric = (&'static str, fn(&SweepRow) -> Option<f64>);
        let metrics: [Metric; 7] = [
            ("delta_weighted", |r| Some(r.result.delta_weighted)),
            ("delta_rel_mu1", |r| r.delta_rel_mu1),
            ("delta_rel_K10", |r| r.delta_rel_k10),
            ("h_bar", |r| Some(r.result.h_bar)),
            ("m_bar", |r| Some(r.result.m_bar)),
            ("epsilon", |r| Some(r.result.epsilon as f64)),
            ("eps_rel_mu1", |r| r.eps_rel_mu1),
        ];
        let mut series: Vec<(String, Vec<(f64, &SweepRow)>)> = Vec::new();
        let mut push = |name: String, x: f64, row| match series.iter_mut().find(|(n, _)| *n == name)
        {
            Some((_, pts)) => pts.push((x, row)),
            None => series.push((name, vec![(x, row)])),
        };
        for row in &self.rows {
            let r = &row.result;
            push(
                format!("{}_K{}", r.variant, r.threshold),
                f64::from(r.mu),
                row,
            );
            push(format!("{}_mu{}", r.variant, r.mu), r.threshold as f64, row);
        }
        let mut written = Vec::new();
        for (name, points) in series.iter().filter(|(_, p)| p.len() > 1) {
            for (metric, get) in &metrics {
                let file = format!("{name}_{metric}.dat");
                let mut body = String::new();
                for (x, row) in points {
                    if let Some(y) = get(row) {
                        body.push_str(&format!("{x} {y}\n"));
                    }
                }
                fs::write(dir.join(&file), body)?;
                written.push(file);
            }
        }
        Ok(written)
    }
}

/// Cartesian product of runs on one trace: variants × K × μ, in that order.
/// The plain variant only takes μ = 1. Runs execute in parallel; row order
/// is deterministic.
pub fn sweep(
    trace: &LifetimeTrace,
    thresholds: &[u64],
    mus: &[u32],
    variants: &[VariantKind],
    base: &SimParams,
) -> Result<SweepTable, SimError> {
    if thresholds.is_empty() || mus.is_empty() || variants.is_empty() {
        return Err(SimError::EmptyGrid);
    }
    let mut grid = Vec::new();
    for &kind in variants {
        for &k in thresholds {
            for &mu in mus {
                if kind == VariantKind::Plain && mu != 1 {
                    continue;
                }
                let mut p = base.clone();
                p.variant = VariantSpec {
                    kind,
                    mu,
                    ..base.variant
                };
                p.threshold = k;
                grid.push(p);
            }
        }
    }
    if grid.is_empty() {
        return Err(SimError::EmptyGrid);
    }
    let results = grid
        .par_iter()
        .map(|p| run(trace, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepTable::from_results(results))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(rows: &[(f64, f64)]) -> LifetimeTrace {
        LifetimeTrace::from_records(
            rows.iter()
                .enumerate()
                .map(|(i, &(a, l))| TraceRecord {
                    index: i as u64,
                    arrival: a,
                    lifetime: l,
                })
                .collect(),
        )
    }

    fn params(kind: VariantKind, mu: u32, k: u64) -> SimParams {
        SimParams::new(VariantSpec::new(kind, mu), k).with_difficulty(0)
    }

    #[test]
    fn empty_trace_run() {
        let r = run(&LifetimeTrace::default(), &SimParams::default()).unwrap();
        assert_eq!(r.delta_weighted, 0.0);
        assert_eq!(r.epsilon, 1);
        assert_eq!((r.h_bar, r.m_bar), (0.0, 0.0));
    }

    #[test]
    fn micro_trace_nonce_counts() {
        let t = trace(&[(0.0, 100.0), (1.0, 50.0)]);
        for (mu, eps) in [(50, 101), (60, 62), (100, 102)] {
            let r = run(&t, &params(VariantKind::SVariant, mu, 50)).unwrap();
            assert_eq!(r.epsilon, eps, "mu={mu}");
        }
    }

    #[test]
    fn queue_orders_maintenance_before_arrival() {
        let t = trace(&[(0.0, 5.0), (5.0, 1.0)]);
        let mut kinds = Vec::new();
        Runner::new(params(VariantKind::Plain, 1, 10))
            .observe(|_, e| kinds.push(*e))
            .run(&t)
            .unwrap();
        assert_eq!(
            kinds,
            vec![
                Event::Arrival(t.records[0]),
                Event::Maintenance(5.0),
                Event::Arrival(t.records[1]),
                Event::Maintenance(6.0),
            ]
        );
    }

    #[test]
    fn drain_deletes_everything() {
        let t = trace(&[(0.0, 10.0), (1.0, 30.0), (2.0, 5.0), (3.0, 40.0)]);
        let out = Runner::new(params(VariantKind::Plain, 1, 100))
            .run(&t)
            .unwrap();
        assert_eq!(out.ledger.len(), 4);
        assert!(out
            .ledger
            .entries()
            .iter()
            .all(|e| e.deletion >= e.expiration));
    }

    #[test]
    fn corrupted_unit_aborts_run() {
        let t = trace(&[(0.0, 10.0), (1.0, 30.0), (2.0, 5.0)]);
        let p = params(VariantKind::Plain, 1, 100).with_verify_every(1);
        let err = Runner::new(p).corrupt_after_insert(2).run(&t).unwrap_err();
        match err {
            SimError::Verification { failures, .. } => {
                assert_eq!(
                    failures,
                    vec![(BlockId::new(2, 0), FailureKind::HashMismatch)]
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_point_sweep_matches_run() {
        let t = trace(&[(0.0, 10.0), (1.0, 30.0), (2.0, 5.0), (3.0, 40.0)]);
        let base = params(VariantKind::SVariant, 3, 2);
        let table = sweep(&t, &[2], &[3], &[VariantKind::SVariant], &base).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].result, run(&t, &base).unwrap());
    }

    #[test]
    fn empty_grid_rejected() {
        let t = trace(&[(0.0, 1.0)]);
        assert!(matches!(
            sweep(&t, &[], &[1], &[VariantKind::Plain], &SimParams::default()),
            Err(SimError::EmptyGrid)
        ));
    }
}
