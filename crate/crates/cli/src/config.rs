//! Declarative run configuration: a TOML document merged with CLI flags.
//!
//! Scalars in the file may also be lists (`K = [50, 500]`), which turns a
//! `run` or `sweep` into a grid. Relative `trace` paths in a file resolve
//! against the file's directory; relative output paths resolve against the
//! output directory.

use std::fs;
use std::path::{Path, PathBuf};

use litichain::workload::MixtureComponent;
use litichain::{ArrivalModel, MixtureSpec, SimParams, VariantKind, VariantSpec};
use serde::Deserialize;
use thiserror::Error;

use crate::SimArgs;

pub const OUT_DIR_ENV: &str = "LITICHAIN_OUT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{field}: {reason}")]
    Field { field: &'static str, reason: String },
}

fn field(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(xs) => xs,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Option<OneOrMany<String>>,
    #[serde(rename = "K")]
    pub k: Option<OneOrMany<i64>>,
    pub mu: Option<OneOrMany<i64>>,
    pub lambda: Option<f64>,
    pub difficulty: Option<i64>,
    pub n: Option<i64>,
    pub seed: Option<u64>,
    pub arrival: Option<String>,
    pub interval: Option<f64>,
    pub rate: Option<f64>,
    pub mixture: Option<MixtureSpec>,
    pub trace: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub plot_dir: Option<PathBuf>,
    pub verify_every: Option<i64>,
    pub cascading_retention: Option<bool>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })?;
        let dir = path.parent().unwrap_or(Path::new(""));
        if let Some(trace) = config.trace.as_mut() {
            if trace.is_relative() {
                *trace = dir.join(&*trace);
            }
        }
        Ok(config)
    }

    /// Overlays command-line flags; flags win.
    fn merge(mut self, args: &SimArgs) -> Self {
        if !args.variant.is_empty() {
            self.variant = Some(OneOrMany::Many(args.variant.clone()));
        }
        if !args.k.is_empty() {
            self.k = Some(OneOrMany::Many(args.k.clone()));
        }
        if !args.mu.is_empty() {
            self.mu = Some(OneOrMany::Many(args.mu.clone()));
        }
        macro_rules! take {
            ($($f:ident),*) => {$(
                if args.$f.is_some() {
                    self.$f = args.$f.clone();
                }
            )*};
        }
        take!(
            lambda,
            difficulty,
            n,
            seed,
            arrival,
            interval,
            rate,
            trace,
            out,
            plot_dir,
            verify_every
        );
        if args.cascading_retention {
            self.cascading_retention = Some(true);
        }
        self
    }
}

/// Where the trace comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceSource {
    File(PathBuf),
    Generate {
        mixture: MixtureSpec,
        n: usize,
        arrival: ArrivalModel,
        seed: u64,
    },
}

/// A fully validated configuration.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub variants: Vec<VariantKind>,
    pub thresholds: Vec<u64>,
    pub mus: Vec<u32>,
    pub base: SimParams,
    pub trace: TraceSource,
    pub out: Option<PathBuf>,
    pub plot_dir: Option<PathBuf>,
}

impl Resolved {
    /// The (variant, K, μ) points in sweep order; plain only takes μ = 1.
    pub fn points(&self) -> Vec<SimParams> {
        let mut out = Vec::new();
        for &kind in &self.variants {
            for &k in &self.thresholds {
                for &mu in &self.mus {
                    if kind == VariantKind::Plain && mu != 1 {
                        continue;
                    }
                    let mut p = self.base.clone();
                    p.variant = VariantSpec {
                        kind,
                        mu,
                        ..self.base.variant
                    };
                    p.threshold = k;
                    out.push(p);
                }
            }
        }
        out
    }
}

fn non_negative(name: &'static str, v: i64) -> Result<u64, ConfigError> {
    u64::try_from(v).map_err(|_| field(name, format!("must be >= 0, got {v}")))
}

fn positive_f64(name: &'static str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(field(name, format!("must be a positive number, got {v}")))
    }
}

/// Resolves an output path: absolute paths as given, relative ones under
/// the output directory when one is set.
pub fn output_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_owned(),
    }
}

/// Parses `MEAN:STDDEV:PROB,...` into mixture components.
fn parse_components(text: &str) -> Result<Vec<MixtureComponent>, ConfigError> {
    text.split(',')
        .map(|part| {
            let nums: Vec<f64> = part
                .split(':')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| field("mixture", format!("{part:?}: {e}")))?;
            match nums[..] {
                [mean, stddev, probability] => Ok(MixtureComponent {
                    mean,
                    stddev,
                    probability,
                }),
                _ => Err(field(
                    "mixture",
                    format!("{part:?}: expected MEAN:STDDEV:PROB"),
                )),
            }
        })
        .collect()
}

pub fn resolve(args: &SimArgs) -> Result<Resolved, ConfigError> {
    let file = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut c = file.merge(args);
    if let Some(text) = &args.mixture {
        let mut spec = c.mixture.take().unwrap_or_default();
        spec.components = parse_components(text)?;
        c.mixture = Some(spec);
    }
    if let Some(min) = args.min_lifetime {
        c.mixture
            .get_or_insert_with(MixtureSpec::default)
            .min_lifetime = min;
    }

    let variants = c
        .variant
        .map_or_else(|| vec!["plain".to_string()], OneOrMany::into_vec)
        .iter()
        .map(|v| {
            v.parse::<VariantKind>()
                .map_err(|e| field("variant", e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let thresholds =
        c.k.map_or_else(|| vec![50], OneOrMany::into_vec)
            .into_iter()
            .map(|k| non_negative("K", k))
            .collect::<Result<Vec<_>, _>>()?;
    let mus =
        c.mu.map_or_else(|| vec![1], OneOrMany::into_vec)
            .into_iter()
            .map(|m| match u32::try_from(m) {
                Ok(m) if m >= 1 => Ok(m),
                _ => Err(field("mu", format!("must be an integer >= 1, got {m}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
    if variants.is_empty() || thresholds.is_empty() || mus.is_empty() {
        return Err(field("grid", "variant, K and mu lists must be non-empty"));
    }
    if variants.iter().all(|&v| v == VariantKind::Plain) && !mus.contains(&1) {
        return Err(field("mu", "the plain variant only supports mu = 1"));
    }

    let lambda = c.lambda.unwrap_or(litichain::variants::DEFAULT_LWB_WEIGHT);
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(field("lambda", format!("must be in (0, 1], got {lambda}")));
    }
    let difficulty = non_negative(
        "difficulty",
        c.difficulty
            .unwrap_or(i64::from(litichain::params::DEFAULT_DIFFICULTY)),
    )?;
    if difficulty > 32 {
        return Err(field(
            "difficulty",
            format!("at most 32 bits, got {difficulty}"),
        ));
    }
    let verify_every = non_negative(
        "verify_every",
        c.verify_every
            .unwrap_or(litichain::params::DEFAULT_VERIFY_EVERY as i64),
    )?;
    let seed = c.seed.unwrap_or(42);

    let trace = match c.trace {
        Some(path) => TraceSource::File(path),
        None => {
            let n = c.n.unwrap_or(10_000);
            if n <= 0 {
                return Err(field("n", format!("must be positive, got {n}")));
            }
            let arrival = match c.arrival.as_deref().unwrap_or("fixed") {
                "fixed" => ArrivalModel::FixedInterval(positive_f64(
                    "interval",
                    c.interval.unwrap_or(1.0),
                )?),
                "poisson" => ArrivalModel::Poisson(positive_f64("rate", c.rate.unwrap_or(1.0))?),
                other => {
                    return Err(field(
                        "arrival",
                        format!("expected fixed or poisson, got {other:?}"),
                    ))
                }
            };
            let mixture = c.mixture.unwrap_or_default();
            mixture
                .validate()
                .map_err(|e| field("mixture", e.to_string()))?;
            TraceSource::Generate {
                mixture,
                n: n as usize,
                arrival,
                seed,
            }
        }
    };

    let base = SimParams::new(VariantSpec::plain().with_lwb_weight(lambda), thresholds[0])
        .with_difficulty(difficulty as u32)
        .with_verify_every(verify_every)
        .with_cascading_retention(c.cascading_retention.unwrap_or(false))
        .with_seed(seed);

    Ok(Resolved {
        variants,
        thresholds,
        mus,
        base,
        trace,
        out: c.out.map(|p| output_path(&p)),
        plot_dir: c.plot_dir.map(|p| output_path(&p)),
    })
}
