//! Lifetime traces: bimodal Gaussian mixture sampling and the trace CSV format.
//!
//! Trace CSV: header `index,arrival_time,lifetime`, one record per line,
//! decimals printed with six fractional digits, LF line endings.
//! Generated values are quantized to 1e-6 so a saved trace loads back
//! bit-for-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRACE_HEADER: [&str; 3] = ["index", "arrival_time", "lifetime"];

const QUANTUM: f64 = 1e6;

fn quantize(x: f64) -> f64 {
    (x * QUANTUM).round() / QUANTUM
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid mixture: {0}")]
    InvalidSpec(String),
    #[error("invalid arrival model: {0}")]
    InvalidArrival(String),
    #[error("trace must contain at least one record")]
    EmptyRequest,
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: arrival {arrival} does not follow {previous}")]
    NonMonotoneArrival {
        line: u64,
        arrival: f64,
        previous: f64,
    },
    #[error("line {line}: lifetime {lifetime} is not positive")]
    NonPositiveLifetime { line: u64, lifetime: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: f64,
    pub stddev: f64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
    pub min_lifetime: f64,
}

impl Default for MixtureSpec {
    /// Equal-weight mixture of N(300, 110²) and N(1200, 110²).
    fn default() -> Self {
        MixtureSpec {
            components: vec![
                MixtureComponent {
                    mean: 300.0,
                    stddev: 110.0,
                    probability: 0.5,
                },
                MixtureComponent {
                    mean: 1200.0,
                    stddev: 110.0,
                    probability: 0.5,
                },
            ],
            min_lifetime: 1.0,
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.components.is_empty() {
            return Err(WorkloadError::InvalidSpec("no components".into()));
        }
        for c in &self.components {
            if !(c.stddev > 0.0 && c.stddev.is_finite()) {
                return Err(WorkloadError::InvalidSpec(format!(
                    "stddev {} must be positive",
                    c.stddev
                )));
            }
            if !(c.probability >= 0.0) || !c.mean.is_finite() {
                return Err(WorkloadError::InvalidSpec(format!("bad component {c:?}")));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.probability).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(WorkloadError::InvalidSpec(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        if !(self.min_lifetime > 0.0 && self.min_lifetime.is_finite()) {
            return Err(WorkloadError::InvalidSpec(format!(
                "min_lifetime {} must be positive",
                self.min_lifetime
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ArrivalModel {
    FixedInterval(f64),
    Poisson(f64),
}

impl Default for ArrivalModel {
    fn default() -> Self {
        ArrivalModel::FixedInterval(1.0)
    }
}

impl ArrivalModel {
    fn validate(&self) -> Result<(), WorkloadError> {
        match *self {
            ArrivalModel::FixedInterval(d) if d >= 1.0 / QUANTUM && d.is_finite() => Ok(()),
            ArrivalModel::Poisson(r) if r > 0.0 && r.is_finite() => Ok(()),
            other => Err(WorkloadError::InvalidArrival(format!("{other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub index: u64,
    pub arrival: f64,
    pub lifetime: f64,
}

/// Generator inputs, kept alongside a sampled trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceOrigin {
    pub mixture: MixtureSpec,
    pub arrival: ArrivalModel,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LifetimeTrace {
    pub records: Vec<TraceRecord>,
    pub origin: Option<TraceOrigin>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifetimeStats {
    pub count: usize,
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
}

impl LifetimeTrace {
    pub fn from_records(records: Vec<TraceRecord>) -> Self {
        LifetimeTrace {
            records,
            origin: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.origin.as_ref().map(|o| o.seed)
    }

    /// Checks arrival ordering and lifetimes.
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let mut previous: Option<f64> = None;
        for (i, r) in self.records.iter().enumerate() {
            let line = i as u64 + 2;
            if !r.arrival.is_finite() {
                return Err(WorkloadError::Malformed {
                    line,
                    reason: format!("arrival {} is not finite", r.arrival),
                });
            }
            if let Some(p) = previous.filter(|&p| r.arrival <= p) {
                return Err(WorkloadError::NonMonotoneArrival {
                    line,
                    arrival: r.arrival,
                    previous: p,
                });
            }
            if !(r.lifetime > 0.0 && r.lifetime.is_finite()) {
                return Err(WorkloadError::NonPositiveLifetime {
                    line,
                    lifetime: r.lifetime,
                });
            }
            previous = Some(r.arrival);
        }
        Ok(())
    }

    /// Sample mean and (n − 1) standard deviation of the lifetimes.
    pub fn lifetime_stats(&self) -> Option<LifetimeStats> {
        let n = self.records.len();
        if n == 0 {
            return None;
        }
        let mean = self.records.iter().map(|r| r.lifetime).sum::<f64>() / n as f64;
        let var = if n > 1 {
            self.records
                .iter()
                .map(|r| (r.lifetime - mean).powi(2))
                .sum::<f64>()
                / (n - 1) as f64
        } else {
            0.0
        };
        let (min, max) = self
            .records
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.lifetime), hi.max(r.lifetime))
            });
        Some(LifetimeStats {
            count: n,
            mean,
            stddev: var.sqrt(),
            min,
            max,
        })
    }
}

pub fn sample_trace(
    spec: &MixtureSpec,
    n: usize,
    arrival: ArrivalModel,
    seed: u64,
) -> Result<LifetimeTrace, WorkloadError> {
    spec.validate()?;
    arrival.validate()?;
    if n == 0 {
        return Err(WorkloadError::EmptyRequest);
    }
    let normals: Vec<Normal<f64>> = spec
        .components
        .iter()
        .map(|c| Normal::new(c.mean, c.stddev).expect("validated stddev"))
        .collect();
    let gaps = match arrival {
        ArrivalModel::Poisson(rate) => Some(Exp::new(rate).expect("validated rate")),
        ArrivalModel::FixedInterval(_) => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut clock = 0.0f64;
    for i in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = normals.len() - 1;
        for (j, c) in spec.components.iter().enumerate() {
            acc += c.probability;
            if u < acc {
                pick = j;
                break;
            }
        }
        let lifetime = quantize(normals[pick].sample(&mut rng).max(spec.min_lifetime));
        let arrival_time = match (arrival, &gaps) {
            (ArrivalModel::FixedInterval(d), _) => quantize(i as f64 * d),
            (_, Some(exp)) => {
                if i > 0 {
                    clock = quantize(clock + exp.sample(&mut rng).max(1.0 / QUANTUM));
                }
                clock
            }
            (ArrivalModel::Poisson(_), None) => unreachable!(),
        };
        records.push(TraceRecord {
            index: i as u64,
            arrival: arrival_time,
            lifetime: lifetime.max(spec.min_lifetime),
        });
    }
    Ok(LifetimeTrace {
        records,
        origin: Some(TraceOrigin {
            mixture: spec.clone(),
            arrival,
            seed,
        }),
    })
}

pub fn save_trace<W: Write>(trace: &LifetimeTrace, writer: W) -> Result<(), WorkloadError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for r in &trace.records {
        w.write_record([
            r.index.to_string(),
            format!("{:.6}", r.arrival),
            format!("{:.6}", r.lifetime),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_trace<R: Read>(reader: R) -> Result<LifetimeTrace, WorkloadError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(TRACE_HEADER) {
        return Err(WorkloadError::Malformed {
            line: 1,
            reason: format!("expected header {}", TRACE_HEADER.join(",")),
        });
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| WorkloadError::Malformed {
            line,
            reason: e.to_string(),
        })?;
        if row.len() != 3 {
            return Err(WorkloadError::Malformed {
                line,
                reason: format!("expected 3 fields, found {}", row.len()),
            });
        }
        let field = |k: usize| {
            row[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| WorkloadError::Malformed {
                    line,
                    reason: format!("{}: {e}", TRACE_HEADER[k]),
                })
        };
        let index = row[0]
            .trim()
            .parse::<u64>()
            .map_err(|e| WorkloadError::Malformed {
                line,
                reason: format!("index: {e}"),
            })?;
        records.push(TraceRecord {
            index,
            arrival: field(1)?,
            lifetime: field(2)?,
        });
    }
    let trace = LifetimeTrace::from_records(records);
    trace.validate()?;
    Ok(trace)
}

pub fn save_trace_file(trace: &LifetimeTrace, path: &Path) -> Result<(), WorkloadError> {
    save_trace(trace, BufWriter::new(File::create(path)?))
}

pub fn load_trace_file(path: &Path) -> Result<LifetimeTrace, WorkloadError> {
    load_trace(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn to_string(t: &LifetimeTrace) -> String {
        let mut buf = Vec::new();
        save_trace(t, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn single_record_is_reproducible() {
        let spec = MixtureSpec::default();
        let a = sample_trace(&spec, 1, ArrivalModel::FixedInterval(1.0), 9).unwrap();
        let b = sample_trace(&spec, 1, ArrivalModel::FixedInterval(1.0), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records[0].arrival, 0.0);
        assert!(a.records[0].lifetime >= 1.0);
    }

    #[test]
    fn default_mixture_moments() {
        let t = sample_trace(&MixtureSpec::default(), 10_000, ArrivalModel::default(), 42).unwrap();
        let s = t.lifetime_stats().unwrap();
        assert!((s.mean - 750.0).abs() <= 15.0, "mean {}", s.mean);
        assert!((s.stddev - 463.0).abs() <= 15.0, "stddev {}", s.stddev);
        let below = t.records.iter().filter(|r| r.lifetime < 750.0).count() as f64 / 1e4;
        assert!(
            (0.47..=0.53).contains(&below),
            "fraction below 750: {below}"
        );
    }

    #[test]
    fn clamps_to_min_lifetime() {
        let spec = MixtureSpec {
            components: vec![MixtureComponent {
                mean: 0.0,
                stddev: 1.0,
                probability: 1.0,
            }],
            min_lifetime: 0.5,
        };
        let t = sample_trace(&spec, 500, ArrivalModel::default(), 1).unwrap();
        assert!(t.records.iter().all(|r| r.lifetime >= 0.5));
        assert!(t.records.iter().any(|r| r.lifetime == 0.5));
    }

    #[test]
    fn poisson_arrivals_increase() {
        let t = sample_trace(&MixtureSpec::default(), 2000, ArrivalModel::Poisson(2.0), 3).unwrap();
        t.validate().unwrap();
        let span = t.records.last().unwrap().arrival;
        assert!(
            (span / 1999.0 - 0.5).abs() < 0.05,
            "mean gap {}",
            span / 1999.0
        );
    }

    #[test]
    fn invalid_inputs() {
        let spec = MixtureSpec::default();
        assert!(matches!(
            sample_trace(&spec, 0, ArrivalModel::default(), 1),
            Err(WorkloadError::EmptyRequest)
        ));
        assert!(matches!(
            sample_trace(&spec, 1, ArrivalModel::FixedInterval(0.0), 1),
            Err(WorkloadError::InvalidArrival(_))
        ));
        let mut bad = spec.clone();
        bad.components[0].probability = 0.7;
        assert!(matches!(bad.validate(), Err(WorkloadError::InvalidSpec(_))));
        bad.components[0].probability = 0.5;
        bad.components[1].stddev = 0.0;
        assert!(matches!(bad.validate(), Err(WorkloadError::InvalidSpec(_))));
    }

    #[test]
    fn empty_trace_is_header_only() {
        let s = to_string(&LifetimeTrace::default());
        assert_eq!(s, "index,arrival_time,lifetime\n");
        assert!(load_trace(s.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn handwritten_fixture_loads() {
        let text =
            "index,arrival_time,lifetime\n0,0.000000,20.000000\n1,1.5,38.5\n2,2.250000,7.125\n";
        let t = load_trace(text.as_bytes()).unwrap();
        assert_eq!(
            t.records,
            vec![
                TraceRecord {
                    index: 0,
                    arrival: 0.0,
                    lifetime: 20.0
                },
                TraceRecord {
                    index: 1,
                    arrival: 1.5,
                    lifetime: 38.5
                },
                TraceRecord {
                    index: 2,
                    arrival: 2.25,
                    lifetime: 7.125
                },
            ]
        );
    }

    #[test]
    fn load_rejects_bad_rows() {
        let cases = [
            ("index,arrival_time,lifetime\n0,x,1\n", "Malformed"),
            ("index,arrival_time,lifetime\n0,1,1\n1,1,1\n", "NonMonotone"),
            ("index,arrival_time,lifetime\n0,1,0\n", "NonPositive"),
            ("index,arrival_time,lifetime\n0,1,-3\n", "NonPositive"),
            ("idx,t,l\n0,1,1\n", "Malformed"),
            ("index,arrival_time,lifetime\n0,1\n", "Malformed"),
        ];
        for (text, kind) in cases {
            let err = load_trace(text.as_bytes()).unwrap_err();
            assert!(
                format!("{err:?}").starts_with(kind),
                "{text:?} gave {err:?}"
            );
        }
    }

    #[test]
    fn random_trace_resaves_identically() {
        let t = sample_trace(
            &MixtureSpec::default(),
            1000,
            ArrivalModel::Poisson(0.7),
            11,
        )
        .unwrap();
        let first = to_string(&t);
        let back = load_trace(first.as_bytes()).unwrap();
        assert_eq!(back.records, t.records);
        assert_eq!(to_string(&back), first);
    }

    proptest! {
        #[test]
        fn generation_is_deterministic_and_round_trips(seed in any::<u64>(), n in 1usize..200, poisson in any::<bool>()) {
            let arrival = if poisson { ArrivalModel::Poisson(1.3) } else { ArrivalModel::FixedInterval(0.25) };
            let a = sample_trace(&MixtureSpec::default(), n, arrival, seed).unwrap();
            let b = sample_trace(&MixtureSpec::default(), n, arrival, seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.records.iter().all(|r| r.lifetime >= 1.0));
            let text = to_string(&a);
            let back = load_trace(text.as_bytes()).unwrap();
            prop_assert_eq!(back.records, a.records);
        }
    }
}
