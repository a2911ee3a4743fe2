//! Command-line front end: system files, subcommands and fixtures.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use structhinf::hinf::{hinf_norm, Frequency, HinfOptions};
use structhinf::ratio::{competitive_ratio, BaselineOptions};
use structhinf::saddle::{
    inner_max, solve_saddle, verify_saddle, HinfObjective, SaddleOptions, SaddleStatus,
    StepSchedule, VerifyOptions,
};
use structhinf::sysmodel::{closed_loop, validate_system, ValidateOptions};
use structhinf::Error;

pub mod selftest;
pub mod sysfile;

use sysfile::{gain_file, Loaded};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    /// 1 for input and validation problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Parse { .. } | CliError::Usage(_) => 1,
            CliError::Core(e) => match e {
                Error::Basis(_)
                | Error::Dimension { .. }
                | Error::Structure { .. }
                | Error::OutOfBox { .. }
                | Error::Model(_) => 1,
                _ => 2,
            },
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<structhinf::basis::BasisError> for CliError {
    fn from(e: structhinf::basis::BasisError) -> Self {
        CliError::Core(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "structhinf", version, about = "Structured parameter-dependent H-infinity design")]
pub struct Cli {
    /// System description (JSON).
    #[arg(long, global = true)]
    pub system: Option<PathBuf>,
    /// Write the main result here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Relative tolerance of the H-infinity norm computation.
    #[arg(long, global = true, default_value_t = 1e-7)]
    pub tol_hinf: f64,
    #[command(flatten)]
    pub saddle: SaddleFlags,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SaddleFlags {
    /// Inner stopping tolerance on consecutive J values.
    #[arg(long, global = true)]
    pub eps_inner: Option<f64>,
    /// Outer stopping tolerance on consecutive J values.
    #[arg(long, global = true)]
    pub eps_outer: Option<f64>,
    /// Step schedule, `c/k:<c>`.
    #[arg(long, global = true)]
    pub step: Option<String>,
    #[arg(long, global = true)]
    pub max_outer: Option<usize>,
    #[arg(long, global = true)]
    pub max_inner: Option<usize>,
    #[arg(long, global = true, default_value_t = 1e-2)]
    pub verify_radius: f64,
    /// Perturbation samples for the saddle check after `design` (0 skips it).
    #[arg(long, global = true, default_value_t = 0)]
    pub verify_samples: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and check a system; report advisory warnings.
    Validate {
        /// Sample points per parameter for the advisory checks.
        #[arg(long, default_value_t = 5)]
        grid: usize,
    },
    /// Closed-loop H-infinity norm at one parameter value.
    Norm {
        /// Strategy file; defaults to the system's `gamma0`.
        #[arg(long, conflicts_with = "zero_gain")]
        gamma: Option<PathBuf>,
        #[arg(long)]
        zero_gain: bool,
        /// Comma-separated parameter values; defaults to `alpha0`.
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<String>,
        /// Maximize over the parameters first (inner ascent from alpha).
        #[arg(long)]
        worst: bool,
    },
    /// Run the saddle-point search from the system's initial data.
    Design,
    /// Norm on a uniform parameter grid, as CSV.
    Sweep {
        #[arg(long, conflicts_with = "zero_gain")]
        gamma: Option<PathBuf>,
        #[arg(long)]
        zero_gain: bool,
        #[arg(long, default_value_t = 41)]
        grid: usize,
    },
    /// Competitive ratio against a per-point baseline, as CSV.
    Ratio {
        #[arg(long)]
        gamma: Option<PathBuf>,
        /// System used for the baseline controller; defaults to `--system`.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 11)]
        grid: usize,
        #[arg(long, default_value_t = 8)]
        restarts: usize,
        #[arg(long, default_value_t = 300)]
        iterations: usize,
    },
    /// Run the built-in numerical cross-checks.
    Selftest,
}

/// Everything a command produced: the main document and side messages.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

impl Cli {
    fn hinf(&self) -> HinfOptions {
        HinfOptions {
            rel_tol: self.tol_hinf,
            ..HinfOptions::default()
        }
    }

    fn load(&self) -> Result<Loaded, CliError> {
        let path = self
            .system
            .as_deref()
            .ok_or_else(|| CliError::Usage("--system is required".into()))?;
        sysfile::load(path)
    }

    fn saddle_options(&self, loaded: &Loaded) -> Result<SaddleOptions, CliError> {
        let mut o = loaded.saddle_defaults()?;
        let f = &self.saddle;
        if let Some(v) = f.eps_inner {
            o.eps_inner = v;
        }
        if let Some(v) = f.eps_outer {
            o.eps_outer = v;
        }
        if let Some(v) = &f.step {
            o.schedule = v.parse::<StepSchedule>().map_err(CliError::Usage)?;
        }
        if let Some(v) = f.max_outer {
            o.max_outer = v;
        }
        if let Some(v) = f.max_inner {
            o.max_inner = v;
        }
        Ok(o)
    }
}

/// Parses arguments and runs; never exits the process.
pub fn run_args<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            Outcome {
                stdout: if code == 0 { e.to_string() } else { String::new() },
                stderr: if code == 0 { String::new() } else { e.to_string() },
                code,
            }
        }
    }
}

pub fn run(cli: &Cli) -> Outcome {
    let mut out = Outcome::default();
    let result = match &cli.command {
        Command::Validate { grid } => cmd_validate(cli, *grid, &mut out),
        Command::Norm {
            gamma,
            zero_gain,
            alpha,
            worst,
        } => cmd_norm(cli, gamma.as_deref(), *zero_gain, alpha.as_deref(), *worst, &mut out),
        Command::Design => cmd_design(cli, &mut out),
        Command::Sweep { gamma, zero_gain, grid } => cmd_sweep(cli, gamma.as_deref(), *zero_gain, *grid, &mut out),
        Command::Ratio {
            gamma,
            baseline,
            grid,
            restarts,
            iterations,
        } => cmd_ratio(cli, gamma.as_deref(), baseline.as_deref(), *grid, *restarts, *iterations, &mut out),
        Command::Selftest => cmd_selftest(cli, &mut out),
    };
    match result {
        Ok(doc) => {
            if let Some(path) = &cli.output {
                if let Err(e) = std::fs::write(path, &doc) {
                    out.stderr.push_str(&format!("error: cannot write {}: {e}\n", path.display()));
                    out.code = 1;
                    return out;
                }
            } else {
                out.stdout.push_str(&doc);
            }
        }
        Err(e) => {
            out.stderr.push_str(&format!("error: {e}\n"));
            out.code = e.exit_code();
        }
    }
    out
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// JSON has no infinity; unstable values are written as the string "inf".
fn num(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn csv_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn parse_alpha(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Usage(format!("bad parameter value {t:?}: {e}")))
        })
        .collect()
}

fn pick_strategy(
    loaded: &Loaded,
    gamma: Option<&Path>,
    zero_gain: bool,
) -> Result<structhinf::sysmodel::GainExpansion, CliError> {
    if zero_gain {
        Ok(loaded.zero_strategy())
    } else if let Some(p) = gamma {
        loaded.load_gain(p)
    } else {
        Ok(loaded.initial_strategy())
    }
}

fn cmd_validate(cli: &Cli, grid: usize, out: &mut Outcome) -> Result<String, CliError> {
    let loaded = cli.load()?;
    let report = validate_system(&loaded.sys, &ValidateOptions { grid_n: grid })?;
    for w in &report.warnings {
        out.stderr.push_str(&format!("warning: {w}\n"));
    }
    Ok(to_json(&report))
}

fn cmd_norm(
    cli: &Cli,
    gamma: Option<&Path>,
    zero_gain: bool,
    alpha: Option<&str>,
    worst: bool,
    out: &mut Outcome,
) -> Result<String, CliError> {
    let loaded = cli.load()?;
    let g = pick_strategy(&loaded, gamma, zero_gain)?;
    let mut a = match alpha {
        Some(s) => parse_alpha(s)?,
        None => loaded.initial_alpha(),
    };
    loaded.sys.bounds().check(&a)?;
    let hinf = cli.hinf();
    let mut inner_info = serde_json::Value::Null;
    if worst {
        let obj = HinfObjective::new(&loaded.sys, hinf);
        let o = cli.saddle_options(&loaded)?;
        let r = inner_max(&obj, &g, &a, o.schedule, o.eps_inner, o.max_inner)?;
        inner_info = json!({ "start": a, "iterations": r.iterations, "unstable": r.unstable });
        a = r.alpha;
    }
    let hr = hinf_norm(&closed_loop(&loaded.sys, &g, &a)?, &hinf)?;
    if !hr.stable {
        out.stderr.push_str("warning: closed loop is unstable at this parameter value; J = inf\n");
    }
    out.stderr.push_str(&format!("J = {}\n", csv_num(hr.gamma)));
    let peaks: Vec<_> = hr
        .peaks
        .iter()
        .map(|p| {
            json!({
                "omega": match p.omega { Frequency::Finite(w) => json!(w), Frequency::Infinite => json!("INF") },
                "sigma": p.sigma,
                "multiplicity": p.multiplicity,
            })
        })
        .collect();
    Ok(to_json(&json!({
        "alpha": a,
        "J": num(hr.gamma),
        "stable": hr.stable,
        "peaks": peaks,
        "worst": inner_info,
    })))
}

fn cmd_design(cli: &Cli, out: &mut Outcome) -> Result<String, CliError> {
    let loaded = cli.load()?;
    let opts = cli.saddle_options(&loaded)?;
    let gamma0 = loaded.initial_strategy();
    let alpha0 = loaded.initial_alpha();
    let mut obj = HinfObjective::new(&loaded.sys, cli.hinf());
    let gate_error = obj.gate(&gamma0, &alpha0)?;
    let res = solve_saddle(&obj, &gamma0, &alpha0, &opts)?;
    if let Some(d) = &res.diagnostic {
        out.stderr.push_str(&format!("warning: {d}\n"));
    }
    let verify = if cli.saddle.verify_samples > 0 && res.status == SaddleStatus::Converged {
        let v = verify_saddle(
            &obj,
            &res.gamma_star,
            &res.alpha_star,
            &VerifyOptions {
                radius: cli.saddle.verify_radius,
                samples: cli.saddle.verify_samples,
                slack: 1e-3,
                seed: cli.seed,
            },
        )?;
        serde_json::to_value(v).expect("serializable")
    } else {
        serde_json::Value::Null
    };
    out.stderr.push_str(&format!(
        "status {:?} after {} outer iterations; worst-case J = {} at alpha = {:?}\n",
        res.status,
        res.outer_iterations,
        csv_num(res.j_star),
        res.alpha_star
    ));
    let doc = json!({
        "system": loaded.file.name,
        "status": res.status,
        "diagnostic": res.diagnostic,
        "param_route": obj.route,
        "gate_error": gate_error,
        "options": opts,
        "outer_iterations": res.outer_iterations,
        "alpha_star": res.alpha_star,
        "j_star": num(res.j_star),
        "gamma_star": gain_file(&res.gamma_star),
        "verify": verify,
        "trace": res.trace,
    });
    if res.status == SaddleStatus::InstabilityAbort {
        out.code = 2;
    }
    Ok(to_json(&doc))
}

fn cmd_sweep(
    cli: &Cli,
    gamma: Option<&Path>,
    zero_gain: bool,
    grid: usize,
    _out: &mut Outcome,
) -> Result<String, CliError> {
    use rayon::prelude::*;
    let loaded = cli.load()?;
    let g = pick_strategy(&loaded, gamma, zero_gain)?;
    let hinf = cli.hinf();
    let pts = if grid == 1 {
        vec![loaded.initial_alpha()]
    } else {
        loaded.sys.bounds().grid(grid)
    };
    let js = pts
        .par_iter()
        .map(|a| Ok(hinf_norm(&closed_loop(&loaded.sys, &g, a)?, &hinf)?.gamma))
        .collect::<Result<Vec<f64>, Error>>()?;
    let mut s = String::new();
    s.push_str(&loaded.sys.bounds().names.join(","));
    s.push_str(",J\n");
    for (a, j) in pts.iter().zip(&js) {
        for x in a {
            s.push_str(&csv_num(*x));
            s.push(',');
        }
        s.push_str(&csv_num(*j));
        s.push('\n');
    }
    Ok(s)
}

#[allow(clippy::too_many_arguments)]
fn cmd_ratio(
    cli: &Cli,
    gamma: Option<&Path>,
    baseline: Option<&Path>,
    grid: usize,
    restarts: usize,
    iterations: usize,
    out: &mut Outcome,
) -> Result<String, CliError> {
    let loaded = cli.load()?;
    let g = pick_strategy(&loaded, gamma, false)?;
    let full = match baseline {
        Some(p) => sysfile::load(p)?,
        None => loaded.clone(),
    };
    let opts = BaselineOptions {
        restarts,
        iterations,
        seed: cli.seed,
        ..BaselineOptions::default()
    };
    let report = competitive_ratio(
        &loaded.sys,
        &g,
        &full.sys,
        full.gamma0.as_ref(),
        grid,
        &cli.hinf(),
        &opts,
    )?;
    let mut s = String::new();
    s.push_str(&loaded.sys.bounds().names.join(","));
    s.push_str(",J,J_baseline,ratio\n");
    for r in &report.records {
        for x in &r.alpha {
            s.push_str(&csv_num(*x));
            s.push(',');
        }
        s.push_str(&format!("{},{},{}\n", csv_num(r.j_strategy), csv_num(r.j_baseline), csv_num(r.ratio)));
        if let Some(f) = &r.flag {
            out.stderr.push_str(&format!("warning: alpha = {:?}: {f}\n", r.alpha));
        }
    }
    out.stderr.push_str(&format!("r = {} at alpha = {:?}\n", csv_num(report.r), report.argmax));
    Ok(s)
}

fn cmd_selftest(cli: &Cli, out: &mut Outcome) -> Result<String, CliError> {
    let results = selftest::run_all(cli.seed)?;
    let mut s = String::new();
    let mut all = true;
    for r in &results {
        all &= r.passed;
        s.push_str(&format!(
            "{} {}: {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        ));
    }
    if !all {
        out.code = 2;
    }
    Ok(s)
}

/// Process entry point used by the binary.
pub fn main_with_env() -> i32 {
    if let Ok(v) = std::env::var("STRUCTHINF_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring STRUCTHINF_THREADS={v:?}"),
        }
    }
    let out = run_args(std::env::args_os());
    print!("{}", out.stdout);
    let _ = std::io::stdout().flush();
    eprint!("{}", out.stderr);
    out.code
}
