//! Parameter-grid runner: up to two swept parameters, a list of observables
//! per grid point, rows emitted in grid order whatever the worker count.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, BunchingOptions, Propagator, PropagatorOptions};
use crate::error::{Error, Result};
use crate::hamiltonian::ExchangeSector;
use crate::model::{ModelConfig, ModelParams};
use crate::spectral::{self, Sector, Vectors};
use crate::topology::{self, WindingOptions};

pub const DEFAULT_MAX_JOBS: usize = 10_000;

/// Parameter names accepted on an axis (short and long forms).
pub const SWEEPABLE: [&str; 12] = [
    "J",
    "U",
    "V",
    "theta",
    "h",
    "gamma",
    "hopping",
    "interaction",
    "amplitude",
    "phase",
    "non_hermiticity",
    "loss_rate",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    /// A numeric model parameter: `J`, `U`, `V`, `theta`, `h` or `gamma`.
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    /// Number of grid points from `min` to `max` inclusive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Explicit values instead of `min`/`max`/`steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

impl Axis {
    pub fn range(name: &str, min: f64, max: f64, steps: usize) -> Self {
        Self { name: name.into(), min: Some(min), max: Some(max), steps: Some(steps), values: None }
    }

    pub fn list(name: &str, values: Vec<f64>) -> Self {
        Self { name: name.into(), min: None, max: None, steps: None, values: Some(values) }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        match (&self.values, self.min, self.max, self.steps) {
            (Some(v), None, None, None) if !v.is_empty() => Ok(v.clone()),
            (None, Some(lo), Some(hi), Some(steps)) if steps >= 1 => Ok(if steps == 1 {
                vec![lo]
            } else {
                (0..steps).map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64).collect()
            }),
            _ => Err(Error::Config(format!(
                "axis {:?} needs either a non-empty `values` list or `min`, `max` and `steps >= 1`",
                self.name
            ))),
        }
    }
}

/// A base energy written as a real number or a `[re, im]` pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Energy {
    Real(f64),
    Complex([f64; 2]),
}

impl Energy {
    pub fn value(self) -> Complex64 {
        match self {
            Energy::Real(re) => Complex64::new(re, 0.0),
            Energy::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

/// Site numbers in observables are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Observable {
    Epsilon,
    IprExtrema,
    Spectrum,
    Winding {
        base_energies: Vec<Energy>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        samples: Option<usize>,
    },
    Bunching {
        n1: usize,
        n2: usize,
        times: Vec<f64>,
    },
    Tau0 {
        n1: usize,
        distances: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_max: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dt: Option<f64>,
    },
}

impl Observable {
    pub fn name(&self) -> &'static str {
        match self {
            Observable::Epsilon => "epsilon",
            Observable::IprExtrema => "ipr_extrema",
            Observable::Spectrum => "spectrum",
            Observable::Winding { .. } => "winding",
            Observable::Bunching { .. } => "bunching",
            Observable::Tau0 { .. } => "tau0",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

fn default_max_jobs() -> usize {
    DEFAULT_MAX_JOBS
}

fn default_sector() -> Sector {
    Sector::Two
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Spectral observables use this Hilbert space.
    #[serde(default = "default_sector")]
    pub sector: Sector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_max_jobs")]
    pub max_jobs: usize,
    /// Record the wall-clock time in the output (breaks byte-identical reruns).
    #[serde(default)]
    pub timestamp: bool,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub axes: Vec<Axis>,
    pub observables: Vec<Observable>,
    #[serde(default)]
    pub output: OutputSpec,
}

impl SweepConfig {
    pub fn new(model: ModelConfig, axes: Vec<Axis>, observables: Vec<Observable>) -> Self {
        Self {
            sector: Sector::Two,
            workers: None,
            max_jobs: DEFAULT_MAX_JOBS,
            timestamp: false,
            model,
            axes,
            observables,
            output: OutputSpec::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads TOML, or JSON when the file extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Grid points in row-major order (first axis outermost).
    pub fn grid(&self) -> Result<Vec<Vec<f64>>> {
        let mut points = vec![Vec::new()];
        for axis in &self.axes {
            let values = axis.values()?;
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        Ok(points)
    }

    fn validate(&self) -> Result<Vec<Vec<f64>>> {
        if self.observables.is_empty() {
            return Err(Error::Config("at least one observable is required".into()));
        }
        if self.axes.len() > 2 {
            return Err(Error::Config(format!("at most two axes can be swept, got {}", self.axes.len())));
        }
        for (i, axis) in self.axes.iter().enumerate() {
            if self.axes[..i].iter().any(|a| a.name == axis.name) {
                return Err(Error::Config(format!("axis {:?} appears twice", axis.name)));
            }
            axis.values()?;
            if !SWEEPABLE.contains(&axis.name.as_str()) {
                return Err(Error::Config(format!("cannot sweep {:?}; expected one of {SWEEPABLE:?}", axis.name)));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let grid = self.grid()?;
        let jobs = grid.len() * self.observables.len();
        if jobs > self.max_jobs {
            return Err(Error::Config(format!("{jobs} jobs exceed the cap of {}", self.max_jobs)));
        }
        Ok(grid)
    }
}

/// One value of one observable at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub observable: String,
    pub key: String,
    pub re: Option<f64>,
    pub im: Option<f64>,
    /// `ok`, `not_reached`, or `error: <message>`.
    pub status: String,
}

impl Record {
    fn value(observable: &str, key: impl Into<String>, re: f64, im: f64) -> Self {
        Self { observable: observable.into(), key: key.into(), re: Some(re), im: Some(im), status: "ok".into() }
    }

    fn failure(observable: &str, key: impl Into<String>, err: &Error) -> Self {
        Self { observable: observable.into(), key: key.into(), re: None, im: None, status: format!("error: {err}") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub point: usize,
    pub coords: Vec<f64>,
    pub records: Vec<Record>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    pub config: SweepConfig,
    pub axes: Vec<String>,
    pub points: Vec<PointResult>,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.points.iter().flat_map(|p| &p.records).filter(|r| r.status.starts_with("error")).count()
    }
}

fn complex_key(e: Complex64) -> String {
    format!("{}{:+}i", e.re, e.im)
}

fn evaluate_point(config: &SweepConfig, base: &ModelParams, coords: &[f64]) -> Vec<Record> {
    let params = config.axes.iter().zip(coords).try_fold(base.clone(), |p, (axis, &v)| p.with_named(&axis.name, v));
    let params = match params {
        Ok(p) => p,
        Err(e) => return config.observables.iter().map(|o| Record::failure(o.name(), "", &e)).collect(),
    };

    let wants_ipr = config.observables.iter().any(|o| matches!(o, Observable::IprExtrema));
    let wants_spectrum = config
        .observables
        .iter()
        .any(|o| matches!(o, Observable::Epsilon | Observable::IprExtrema | Observable::Spectrum));
    let spectrum = wants_spectrum.then(|| {
        let vectors = if wants_ipr { Vectors::Diagnostics } else { Vectors::None };
        spectral::spectrum(&params, config.sector, vectors)
    });
    let wants_pairs =
        config.observables.iter().any(|o| matches!(o, Observable::Bunching { .. } | Observable::Tau0 { .. }));
    let propagator =
        wants_pairs.then(|| Propagator::new(&params, &[ExchangeSector::Symmetric], &PropagatorOptions::default()));

    let mut records = Vec::new();
    for obs in &config.observables {
        let name = obs.name();
        match obs {
            Observable::Epsilon | Observable::IprExtrema | Observable::Spectrum => {
                match spectrum.as_ref().expect("computed above") {
                    Err(e) => records.push(Record::failure(name, "", e)),
                    Ok(s) => match obs {
                        Observable::Epsilon => records.push(Record::value(name, "epsilon", s.epsilon, 0.0)),
                        Observable::IprExtrema => {
                            for (key, v) in [("ipr_max", s.ipr_max()), ("ipr_min", s.ipr_min())] {
                                match v {
                                    Some(v) => records.push(Record::value(name, key, v, 0.0)),
                                    None => records.push(Record::failure(name, key, &Error::MissingEigenvectors)),
                                }
                            }
                        }
                        _ => records.extend(
                            s.eigenvalues
                                .iter()
                                .enumerate()
                                .map(|(k, e)| Record::value(name, k.to_string(), e.re, e.im)),
                        ),
                    },
                }
            }
            Observable::Winding { base_energies, samples } => {
                let mut opts = WindingOptions::default();
                if let Some(n) = samples {
                    opts = opts.with_samples(*n);
                }
                let energies: Vec<Complex64> = base_energies.iter().map(|e| e.value()).collect();
                match topology::winding_numbers(&params, &energies, config.sector, &opts) {
                    Err(e) => records.push(Record::failure(name, "", &e)),
                    Ok(results) => {
                        for (e, r) in energies.iter().zip(results) {
                            records.push(match r {
                                Ok(w) => Record::value(name, complex_key(*e), w.winding as f64, 0.0),
                                Err(err) => Record::failure(name, complex_key(*e), &err),
                            });
                        }
                    }
                }
            }
            Observable::Bunching { n1, n2, times } => {
                let run = || -> Result<Vec<(f64, f64)>> {
                    let prop = propagator.as_ref().expect("built above").as_ref().map_err(clone_error)?;
                    let state = dynamics::prepare_pair_state(&params, one_based(*n1)?, one_based(*n2)?)?;
                    dynamics::bunching_curve(prop, &state, times)
                };
                match run() {
                    Ok(curve) => {
                        records.extend(curve.into_iter().map(|(t, p)| Record::value(name, t.to_string(), p, 0.0)))
                    }
                    Err(e) => records.push(Record::failure(name, "", &e)),
                }
            }
            Observable::Tau0 { n1, distances, target, t_max, dt } => {
                let defaults = BunchingOptions::default();
                let opts = BunchingOptions {
                    target: target.unwrap_or(defaults.target),
                    t_max: t_max.unwrap_or(defaults.t_max),
                    dt: dt.unwrap_or(defaults.dt),
                    resolution: defaults.resolution,
                };
                for d in distances {
                    let key = format!("d={d}");
                    let run = || -> Result<dynamics::BunchingTime> {
                        let prop = propagator.as_ref().expect("built above").as_ref().map_err(clone_error)?;
                        let a = one_based(*n1)?;
                        let state = dynamics::prepare_pair_state(&params, a, a + d)?;
                        dynamics::bunching_time_with(prop, &state, &opts)
                    };
                    records.push(match run() {
                        Ok(dynamics::BunchingTime::Reached { tau }) => Record::value(name, key, tau, 0.0),
                        Ok(dynamics::BunchingTime::NotReached { .. }) => {
                            Record { observable: name.into(), key, re: None, im: None, status: "not_reached".into() }
                        }
                        Err(e) => Record::failure(name, key, &e),
                    });
                }
            }
        }
    }
    records
}

fn clone_error(e: &Error) -> Error {
    Error::Precondition(e.to_string())
}

fn one_based(n: usize) -> Result<usize> {
    n.checked_sub(1).ok_or_else(|| Error::InvalidParameter("site numbers are 1-based".into()))
}

/// Evaluates every grid point; failures are recorded per row.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    let base = config.model.to_params()?;
    let grid = config.validate()?;
    let workers = config.workers.unwrap_or(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let points: Vec<PointResult> = pool.install(|| {
        grid.par_iter()
            .enumerate()
            .map(|(i, coords)| PointResult {
                point: i,
                coords: coords.clone(),
                records: evaluate_point(config, &base, coords),
            })
            .collect()
    });
    let timestamp = config.timestamp.then(|| {
        let secs = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        format!("unix:{secs}")
    });
    // the worker count does not change results, so it is left out of the echo
    let mut echoed = config.clone();
    echoed.workers = None;
    Ok(SweepResult {
        version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp,
        config: echoed,
        axes: config.axes.iter().map(|a| a.name.clone()).collect(),
        points,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Tidy CSV, one row per record, preceded by `#` lines echoing the config.
pub fn write_csv<W: Write>(result: &SweepResult, mut out: W) -> Result<()> {
    writeln!(out, "# nhqc {}", result.version)?;
    if let Some(ts) = &result.timestamp {
        writeln!(out, "# timestamp {ts}")?;
    }
    for line in result.config.to_toml_string()?.lines() {
        writeln!(out, "# {line}")?;
    }
    let mut header = vec!["point".to_string()];
    header.extend(result.axes.iter().cloned());
    header.extend(["observable", "key", "re", "im", "status"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in &result.points {
        let coords: Vec<String> = p.coords.iter().map(|c| c.to_string()).collect();
        for r in &p.records {
            let mut row = vec![p.point.to_string()];
            row.extend(coords.iter().cloned());
            row.extend([csv_field(&r.observable), csv_field(&r.key), opt(r.re), opt(r.im), csv_field(&r.status)]);
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}

pub fn write_json<W: Write>(result: &SweepResult, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, result)?;
    writeln!(out)?;
    Ok(())
}

pub fn write_result<W: Write>(result: &SweepResult, format: OutputFormat, out: W) -> Result<()> {
    match format {
        OutputFormat::Csv => write_csv(result, out),
        OutputFormat::Json => write_json(result, out),
    }
}
