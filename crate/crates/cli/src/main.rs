use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nhqc_core::doublon::{self, AsymptoticsOptions};
use nhqc_core::dynamics::{self, BunchingOptions, BunchingTime, Propagator, PropagatorMethod, PropagatorOptions};
use nhqc_core::hamiltonian::{self, ExchangeSector};
use nhqc_core::spectral::{self, Localization, Vectors, LOCALIZATION_FACTOR};
use nhqc_core::sweep::{self, OutputFormat, SweepConfig};
use nhqc_core::topology::{self, WindingOptions};
use nhqc_core::{oracle, Complex64, Error, ModelConfig, ModelParams, Rational, Sector};
use serde_json::json;

/// Two interacting particles in a non-Hermitian quasiperiodic ring.
///
/// Exit status: 0 on success, 1 on usage or input errors, 2 on numerical failures.
#[derive(Parser, Debug)]
#[command(name = "nhqc", version, propagate_version = true)]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    /// Write results to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for scans and sweeps.
    #[arg(long, global = true, env = "NHQC_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SectorArg {
    Single,
    Two,
}

impl From<SectorArg> for Sector {
    fn from(s: SectorArg) -> Self {
        match s {
            SectorArg::Single => Sector::Single,
            SectorArg::Two => Sector::Two,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Spectral,
    Direct,
}

impl MethodArg {
    fn options(self) -> PropagatorOptions {
        match self {
            MethodArg::Spectral => PropagatorOptions::default(),
            MethodArg::Direct => PropagatorOptions::direct(),
        }
    }
}

/// Model parameters. Precedence: built-in defaults < `--config` file < flags.
#[derive(Args, Debug, Clone, Default)]
struct ModelArgs {
    /// Hopping amplitude J [default: 1]
    #[arg(long = "J")]
    hopping: Option<f64>,
    /// On-site interaction U [default: 0]
    #[arg(long = "U")]
    interaction: Option<f64>,
    /// Potential amplitude V [default: 0.15]
    #[arg(long = "V")]
    amplitude: Option<f64>,
    /// Rational frequency p/q; the ring has q sites [default: 34/55]
    #[arg(long, conflicts_with = "fib")]
    alpha: Option<Rational>,
    /// Use the n-th Fibonacci approximant F(n-1)/F(n) as frequency
    #[arg(long)]
    fib: Option<u32>,
    /// Real phase of the potential [default: 0]
    #[arg(long)]
    theta: Option<f64>,
    /// Imaginary phase (non-Hermiticity) [default: 0]
    #[arg(long)]
    h: Option<f64>,
    /// Uniform loss rate [default: 0]
    #[arg(long)]
    gamma: Option<f64>,
}

impl ModelArgs {
    fn overrides(&self) -> ModelConfig {
        ModelConfig {
            hopping: self.hopping,
            interaction: self.interaction,
            amplitude: self.amplitude,
            frequency: self.alpha,
            fibonacci: self.fib,
            phase: self.theta,
            non_hermiticity: self.h,
            loss_rate: self.gamma,
            sites: None,
        }
    }

    fn params(&self, config: Option<&Path>) -> Result<ModelParams, Error> {
        let base = match config {
            Some(path) => ModelConfig::from_toml_str(&fs::read_to_string(path)?)?,
            None => ModelConfig::default(),
        };
        base.merged(&self.overrides()).to_params()
    }
}

#[derive(Args, Debug)]
struct Common {
    #[command(flatten)]
    model: ModelArgs,
    /// TOML file with model parameters (J, U, V, alpha or fibonacci, theta, h, gamma)
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn params(&self) -> Result<ModelParams, Error> {
        self.model.params(self.config.as_deref())
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Eigenvalues (and optionally IPRs) of the one- or two-particle Hamiltonian
    #[command(allow_negative_numbers = true)]
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SectorArg::Two)]
        sector: SectorArg,
        /// Also compute eigenvectors, IPRs and localization classes
        #[arg(long)]
        vectors: bool,
        /// IPR threshold is this factor over L
        #[arg(long, default_value_t = LOCALIZATION_FACTOR)]
        threshold_factor: f64,
        /// Dump the Hamiltonian as `row col re im` triplets to this file
        #[arg(long)]
        triplets: Option<PathBuf>,
    },
    /// epsilon = max |Im E| and IPR extrema over a range of h
    #[command(allow_negative_numbers = true)]
    Scan {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SectorArg::Two)]
        sector: SectorArg,
        #[arg(long, default_value_t = 0.0)]
        h_min: f64,
        #[arg(long, default_value_t = 3.5)]
        h_max: f64,
        /// Number of grid points including both ends
        #[arg(long, default_value_t = 36)]
        h_steps: usize,
        /// Skip eigenvectors (epsilon only)
        #[arg(long)]
        no_ipr: bool,
        /// Also locate the real-to-complex transition inside [h_min, h_max] by bisection
        #[arg(long)]
        transition: bool,
    },
    /// Point-gap winding number around one or more base energies
    #[command(allow_negative_numbers = true)]
    Winding {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SectorArg::Two)]
        sector: SectorArg,
        /// Base energy `re` or `re,im`; repeatable
        #[arg(long, required = true, allow_hyphen_values = true, value_parser = parse_energy)]
        eb: Vec<Complex64>,
        /// Initial number of theta samples
        #[arg(long, default_value_t = 256)]
        samples: usize,
        /// Report the local slope estimate at this theta instead of the full loop
        #[arg(long)]
        slope_at: Option<f64>,
        /// Write the determinant phase trace (first base energy) to this CSV file
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Strong-coupling doublon thresholds and effective model checks
    #[command(allow_negative_numbers = true)]
    Doublon {
        #[command(flatten)]
        common: Common,
        /// Compare the effective model against the full two-particle model
        #[arg(long)]
        validate: bool,
        /// Initial doublon site (1-based) for the dynamical comparison [default: L/2 + 1]
        #[arg(long)]
        site: Option<usize>,
    },
    /// Renormalized time evolution of two particles started at n1, n2
    #[command(allow_negative_numbers = true)]
    Evolve {
        #[command(flatten)]
        common: Common,
        /// First particle site (1-based)
        #[arg(long, default_value_t = 26)]
        n1: usize,
        /// Second particle site (1-based)
        #[arg(long, default_value_t = 27)]
        n2: usize,
        #[arg(long, default_value_t = 50.0)]
        t_max: f64,
        #[arg(long, default_value_t = 0.5)]
        dt: f64,
        #[arg(long, value_enum, default_value_t = MethodArg::Spectral)]
        method: MethodArg,
        /// Write |psi_{n,m}|^2 snapshots at these times (csv or json by extension)
        #[arg(long, requires = "snapshot_times")]
        snapshots: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        snapshot_times: Vec<f64>,
    },
    /// Time at which the bunching probability first reaches the target
    #[command(allow_negative_numbers = true)]
    Bunching {
        #[command(flatten)]
        common: Common,
        /// First particle site (1-based)
        #[arg(long, default_value_t = 26)]
        n1: usize,
        /// Particle separations, comma separated
        #[arg(long, value_delimiter = ',', default_value = "1")]
        d: Vec<usize>,
        #[arg(long, default_value_t = 0.8)]
        target: f64,
        #[arg(long, default_value_t = 200.0)]
        t_max: f64,
        #[arg(long, default_value_t = 0.5)]
        dt: f64,
        #[arg(long, value_enum, default_value_t = MethodArg::Spectral)]
        method: MethodArg,
    },
    /// Run the brute-force cross-checks; one JSON report per line
    Verify,
    /// Run a parameter sweep described by a TOML or JSON file
    #[command(allow_negative_numbers = true)]
    Sweep {
        /// Sweep configuration file
        #[arg(long)]
        config: PathBuf,
        /// Model flags override the configuration's [model] table
        #[command(flatten)]
        model: ModelArgs,
        /// Record the wall-clock time in the output
        #[arg(long)]
        timestamp: bool,
    },
}

fn parse_energy(s: &str) -> Result<Complex64, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |x: &str| x.parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    match parts.as_slice() {
        [re] => Ok(Complex64::new(num(re)?, 0.0)),
        [re, im] => Ok(Complex64::new(num(re)?, num(im)?)),
        _ => Err("expected `re` or `re,im`".into()),
    }
}

fn site(n: usize, params: &ModelParams) -> Result<usize, Error> {
    if n == 0 || n > params.sites() {
        return Err(Error::InvalidParameter(format!("site {n} outside 1..={}", params.sites())));
    }
    Ok(n - 1)
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn fmt_complex(e: Complex64) -> String {
    format!("{} {}", e.re, e.im)
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    nhqc_core::use_sequential_linalg();
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::InvalidParameter("workers must be at least 1".into()));
        }
        // a second initialization (e.g. in tests) is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let mut out = open_out(cli.out.as_deref())?;
    let format = cli.format;

    match cli.command {
        Command::Spectrum { common, sector, vectors, threshold_factor, triplets } => {
            let params = common.params()?;
            let sector = Sector::from(sector);
            if let Some(path) = triplets {
                let matrix = match sector {
                    Sector::Single => hamiltonian::build_h1(&params).matrix,
                    Sector::Two => hamiltonian::build_h2(&params)?.matrix,
                };
                let mut f = BufWriter::new(File::create(path)?);
                hamiltonian::write_triplets(&matrix, &mut f)?;
                f.flush()?;
            }
            let mode = if vectors { Vectors::Diagnostics } else { Vectors::None };
            let s = spectral::spectrum(&params, sector, mode)?;
            let classes = if vectors { spectral::classify_states(&s, &params, threshold_factor)? } else { Vec::new() };
            match format {
                Format::Csv => spectral::write_spectrum_csv(&s, &mut out)?,
                Format::Json => {
                    let eig: Vec<[f64; 2]> = s.eigenvalues.iter().map(|e| [e.re, e.im]).collect();
                    let v = json!({
                        "sites": params.sites(),
                        "epsilon": s.epsilon,
                        "real": s.is_real(),
                        "eigenvalues": eig,
                        "ipr": s.ipr,
                        "classes": classes.iter().map(|c| c.kind).collect::<Vec<_>>(),
                        "eigenvector_condition": s.eigenvector_condition,
                    });
                    writeln!(out, "{v}")?;
                }
                Format::Text => {
                    writeln!(out, "# {} eigenvalues, epsilon = {:e}", s.len(), s.epsilon)?;
                    if vectors {
                        let localized = classes.iter().filter(|c| c.kind == Localization::Localized).count();
                        writeln!(
                            out,
                            "# ipr_max = {}, ipr_min = {}, localized {localized}/{}",
                            s.ipr_max().unwrap_or(f64::NAN),
                            s.ipr_min().unwrap_or(f64::NAN),
                            s.len()
                        )?;
                        if let Some(c) = s.eigenvector_condition {
                            writeln!(out, "# eigenvector condition estimate {c:e}")?;
                        }
                    }
                    for (k, e) in s.eigenvalues.iter().enumerate() {
                        match s.ipr.get(k) {
                            Some(p) => writeln!(out, "{} {p}", fmt_complex(*e))?,
                            None => writeln!(out, "{}", fmt_complex(*e))?,
                        }
                    }
                }
            }
        }

        Command::Scan { common, sector, h_min, h_max, h_steps, no_ipr, transition } => {
            let params = common.params()?;
            let sector = Sector::from(sector);
            let grid = sweep::Axis::range("h", h_min, h_max, h_steps).values()?;
            let rows = spectral::epsilon_scan(&params, sector, &grid, !no_ipr)?;
            let edge = if transition {
                Some(spectral::spectral_transition(&params, sector, h_min, h_max, 1e-3)?)
            } else {
                None
            };
            match format {
                Format::Json => {
                    writeln!(out, "{}", json!({ "rows": rows, "transition": edge }))?;
                }
                _ => {
                    if let Some(h) = edge {
                        writeln!(out, "# transition h = {h}")?;
                    }
                    spectral::write_scan_csv(&rows, &mut out)?;
                }
            }
        }

        Command::Winding { common, sector, eb, samples, slope_at, trace } => {
            let params = common.params()?;
            let sector = Sector::from(sector);
            let opts = WindingOptions::default().with_samples(samples);
            if let Some(path) = trace {
                let points = topology::phase_trace(&params, eb[0], sector, samples)?;
                let mut f = BufWriter::new(File::create(path)?);
                topology::write_phase_trace_csv(&points, &mut f)?;
                f.flush()?;
            }
            let results = match slope_at {
                Some(theta) => eb
                    .iter()
                    .map(|&e| topology::winding_slope(&params, e, sector, theta, &opts))
                    .collect::<Result<Vec<_>, _>>()?,
                None => topology::winding_numbers(&params, &eb, sector, &opts)?
                    .into_iter()
                    .collect::<Result<Vec<_>, _>>()?,
            };
            match format {
                Format::Json => {
                    for r in &results {
                        writeln!(out, "{}", serde_json::to_string(r)?)?;
                    }
                }
                Format::Csv => {
                    writeln!(out, "eb_re,eb_im,winding,raw,method,samples,min_gap")?;
                    for r in &results {
                        let method = serde_json::to_value(r.method)?;
                        writeln!(
                            out,
                            "{},{},{},{},{},{},{}",
                            r.base_energy.re,
                            r.base_energy.im,
                            r.winding,
                            r.raw_winding,
                            method.as_str().unwrap_or_default(),
                            r.theta_samples,
                            r.min_gap
                        )?;
                    }
                }
                Format::Text => {
                    for r in &results {
                        if slope_at.is_some() {
                            writeln!(out, "{}", r.raw_winding)?;
                        } else {
                            writeln!(out, "{}", r.winding)?;
                        }
                    }
                }
            }
        }

        Command::Doublon { common, validate, site: start } => {
            let params = common.params()?;
            let th = doublon::thresholds(&params)?;
            let je = doublon::effective_hopping(&params)?;
            let report = if validate {
                let initial_site = start.map(|n| site(n, &params)).transpose()?;
                Some(doublon::validate_asymptotics(
                    &params,
                    &AsymptoticsOptions { initial_site, ..Default::default() },
                )?)
            } else {
                None
            };
            match (format, &report) {
                (Format::Json, Some(r)) => writeln!(out, "{}", serde_json::to_string(r)?)?,
                (Format::Json, None) => {
                    writeln!(out, "{}", json!({ "J_e": je, "h_c": th.h_c, "h_c_prime": th.h_c_prime, "U_c": th.u_c }))?
                }
                (Format::Csv, _) => {
                    writeln!(out, "quantity,value")?;
                    writeln!(out, "J_e,{je}\nh_c,{}\nh_c_prime,{}\nU_c,{}", th.h_c, th.h_c_prime, th.u_c)?;
                    if let Some(r) = &report {
                        writeln!(
                            out,
                            "spectral_mismatch,{}\ndynamical_mismatch,{}",
                            r.spectral_mismatch, r.dynamical_mismatch
                        )?;
                    }
                }
                (Format::Text, _) => {
                    writeln!(out, "J_e={je}\nh_c={}\nh_c_prime={}\nU_c={}", th.h_c, th.h_c_prime, th.u_c)?;
                    if let Some(r) = &report {
                        writeln!(
                            out,
                            "spectral_mismatch={}\ndynamical_mismatch={}",
                            r.spectral_mismatch, r.dynamical_mismatch
                        )?;
                    }
                }
            }
            if let Some(r) = &report {
                for w in &r.warnings {
                    eprintln!("warning: {w}");
                }
            }
        }

        Command::Evolve { common, n1, n2, t_max, dt, method, snapshots, snapshot_times } => {
            let params = common.params()?;
            let state = dynamics::prepare_pair_state(&params, site(n1, &params)?, site(n2, &params)?)?;
            let propagator = Propagator::for_state(&params, &state, &method.options())?;
            if let Some(reason) = propagator.fallback_reason() {
                eprintln!("warning: spectral propagation unavailable, integrating directly ({reason})");
            }
            let times = BunchingOptions { t_max, dt, ..Default::default() }.sample_times();
            let traj = propagator.evolve(&state, &times)?;
            if let Some(path) = snapshots {
                let mut snap_times = snapshot_times.clone();
                snap_times.sort_by(f64::total_cmp);
                let snaps = propagator.evolve(&state, &snap_times)?;
                let mut f = BufWriter::new(File::create(&path)?);
                if path.extension().is_some_and(|e| e == "json") {
                    dynamics::write_snapshots_json(&snaps.states, &mut f)?;
                } else {
                    dynamics::write_snapshots_csv(&snaps.states, &mut f)?;
                }
                f.flush()?;
            }
            let method = match traj.method {
                PropagatorMethod::Spectral => "spectral",
                PropagatorMethod::DirectIntegrator => "direct",
            };
            match format {
                Format::Json => {
                    let rows: Vec<_> = traj
                        .states
                        .iter()
                        .zip(&traj.log_norms)
                        .map(|(s, ln)| json!({ "t": s.time(), "p_bun": dynamics::bunching_probability(s), "log_norm": ln }))
                        .collect();
                    writeln!(out, "{}", json!({ "method": method, "fallback": traj.fallback, "series": rows }))?;
                }
                _ => {
                    writeln!(out, "t,p_bun,log_norm")?;
                    for (s, ln) in traj.states.iter().zip(&traj.log_norms) {
                        writeln!(out, "{},{},{ln}", s.time(), dynamics::bunching_probability(s))?;
                    }
                }
            }
        }

        Command::Bunching { common, n1, d, target, t_max, dt, method } => {
            let params = common.params()?;
            let first = site(n1, &params)?;
            let opts = BunchingOptions { target, t_max, dt, ..Default::default() };
            let propagator = Propagator::new(&params, &[ExchangeSector::Symmetric], &method.options())?;
            if let Some(reason) = propagator.fallback_reason() {
                eprintln!("warning: spectral propagation unavailable, integrating directly ({reason})");
            }
            let mut rows = Vec::new();
            for &dist in &d {
                let second = site(n1 + dist, &params)?;
                let state = dynamics::prepare_pair_state(&params, first, second)?;
                rows.push((dist, dynamics::bunching_time_with(&propagator, &state, &opts)?));
            }
            match format {
                Format::Json => {
                    for (dist, t) in &rows {
                        writeln!(out, "{}", json!({ "d": dist, "tau0": t.tau(), "result": t }))?;
                    }
                }
                Format::Csv => {
                    writeln!(out, "d,tau0,status")?;
                    for (dist, t) in &rows {
                        match t {
                            BunchingTime::Reached { tau } => writeln!(out, "{dist},{tau},reached")?,
                            BunchingTime::NotReached { .. } => writeln!(out, "{dist},,not_reached")?,
                        }
                    }
                }
                Format::Text => {
                    for (dist, t) in &rows {
                        match t {
                            BunchingTime::Reached { tau } => writeln!(out, "d={dist} tau0={tau}")?,
                            BunchingTime::NotReached { t_max } => writeln!(out, "d={dist} not reached by t={t_max}")?,
                        }
                    }
                }
            }
        }

        Command::Verify => {
            let reports = oracle::cross_checks()?;
            for r in &reports {
                writeln!(out, "{}", serde_json::to_string(r)?)?;
            }
            out.flush()?;
            if reports.iter().any(|r| !r.pass) {
                eprintln!("error: oracle checks failed");
                return Ok(ExitCode::from(2));
            }
        }

        Command::Sweep { config, model, timestamp } => {
            let mut cfg = SweepConfig::load(&config)?;
            cfg.model = cfg.model.merged(&model.overrides());
            cfg.timestamp |= timestamp;
            if cli.workers.is_some() {
                cfg.workers = cli.workers;
            }
            let out_format = match format {
                Format::Json => OutputFormat::Json,
                Format::Csv => OutputFormat::Csv,
                Format::Text => cfg.output.format,
            };
            if cli.out.is_none() {
                if let Some(path) = &cfg.output.path {
                    out = open_out(Some(path))?;
                }
            }
            let result = sweep::run_sweep(&cfg)?;
            sweep::write_result(&result, out_format, &mut out)?;
            let failures = result.failures();
            if failures > 0 {
                eprintln!("warning: {failures} sweep records failed; see the status column");
            }
        }
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
