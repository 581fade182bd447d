//! Command-line front end: `run`, `certify`, `compare` and `lemma1`.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 integration
//! divergence, 4 failed certificate.

pub mod config;
pub mod io;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::adapt::GainFunction;
use crate::plant::BuiltinModel;
use crate::simloop::{self, Lemma1Spec, Scenario, SignalSpec, SimError, Trace, SETTLING_TOL};
use crate::uclf::{self, SamplerSpec};

use self::config::{Loaded, TraceFormat};
use self::io::{RunSummary, TraceIoError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_UNCERTIFIED: i32 = 4;

/// Caps the worker count of `compare`.
pub const THREADS_ENV: &str = "UCLF_ADAPT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "uclf-adapt", version, about = "Adaptive control with per-parameter dynamic gains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Exponential,
    Rational,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario and write its trace and summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `[output] path`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trace format; overrides `[output] format`.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
    /// Check the decrease condition of the configured uclf on a grid.
    Certify {
        #[arg(long)]
        config: PathBuf,
        /// Grid points per state axis.
        #[arg(long, default_value_t = 9)]
        samples: usize,
        /// Grid points per parameter axis.
        #[arg(long, default_value_t = 5)]
        theta_samples: usize,
        /// States are sampled on `[-w, w]^n`.
        #[arg(long, default_value_t = 3.0)]
        half_width: f64,
    },
    /// Run configs that differ only in `[adapt]` and tabulate their metrics.
    Compare {
        #[arg(long, num_args = 2.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive the leaky gain dynamics with a synthetic signal.
    Lemma1 {
        #[arg(long, value_enum, default_value = "exponential")]
        gain: FamilyArg,
        #[arg(long, default_value_t = 1.0)]
        gamma_bar: f64,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        /// zero | pulse:A:D | decay:A:R | sine:A:F
        #[arg(long)]
        signal: String,
        #[arg(long, default_value_t = 20.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

pub fn execute(cli: Cli) -> i32 {
    match cli.command {
        Command::Run { config, out, format } => cmd_run(&config, out.as_deref(), format),
        Command::Certify {
            config,
            samples,
            theta_samples,
            half_width,
        } => cmd_certify(
            &config,
            SamplerSpec {
                half_width,
                x_points: samples,
                theta_points: theta_samples,
            },
        ),
        Command::Compare { configs, out } => cmd_compare(&configs, &out),
        Command::Lemma1 {
            gain,
            gamma_bar,
            tau,
            lambda,
            k,
            signal,
            horizon,
            step,
            out,
        } => {
            let gain = match gain {
                FamilyArg::Exponential => GainFunction::exponential(gamma_bar, tau),
                FamilyArg::Rational => GainFunction::rational(gamma_bar),
            };
            cmd_lemma1(gain, lambda, k, &signal, horizon, step, &out)
        }
    }
}

fn load_or_report(path: &Path) -> Result<Loaded, i32> {
    config::load(path).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_INVALID
    })
}

fn io_failure(what: &Path, e: impl std::fmt::Display) -> i32 {
    eprintln!("error: {}: {e}", what.display());
    EXIT_IO
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn write_file<F>(path: &Path, body: F) -> Result<(), i32>
where
    F: FnOnce(BufWriter<File>) -> Result<(), TraceIoError>,
{
    let f = File::create(path).map_err(|e| io_failure(path, e))?;
    body(BufWriter::new(f)).map_err(|e| io_failure(path, e))
}

/// Outcome of one simulation, including diverged runs.
struct RunOutcome {
    trace: Trace,
    summary: RunSummary,
}

fn simulate(s: &Scenario) -> Result<RunOutcome, SimError> {
    let (trace, diverged_at) = match simloop::run_scenario(s) {
        Ok((trace, _)) => (trace, None),
        Err(SimError::Diverged { t, partial }) => (*partial, Some(t)),
        Err(e) => return Err(e),
    };
    let audit = simloop::audit_gain_rates(&trace, s);
    let summary = RunSummary {
        scenario: s.name.clone(),
        law: trace.law.clone(),
        diverged_at,
        metrics: simloop::compute_metrics(&trace, SETTLING_TOL),
        monotonicity: simloop::lyapunov_monitor(&trace),
        gain_rate_audit_passed: audit.passed_for(s.adapt.law),
        gain_rate_audit: audit,
    };
    Ok(RunOutcome { trace, summary })
}

fn write_outcome(o: &RunOutcome, dir: &Path, stem: &str, format: TraceFormat) -> Result<(), i32> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    match format {
        TraceFormat::Csv => write_file(&dir.join(format!("{stem}.trace.csv")), |w| io::write_trace_csv(&o.trace, w))?,
        TraceFormat::Json => {
            write_file(&dir.join(format!("{stem}.trace.json")), |w| io::write_trace_json(&o.trace, w))?
        }
    }
    write_file(&dir.join(format!("{stem}.summary.json")), |w| io::write_summary_json(&o.summary, w))
}

pub fn cmd_run(config: &Path, out: Option<&Path>, format: Option<FormatArg>) -> i32 {
    let loaded = match load_or_report(config) {
        Ok(l) => l,
        Err(code) => return code,
    };
    let format = match format {
        Some(FormatArg::Csv) => TraceFormat::Csv,
        Some(FormatArg::Json) => TraceFormat::Json,
        None => loaded.format,
    };
    let dir = out
        .map(Path::to_path_buf)
        .or(loaded.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let s = &loaded.scenario;
    let outcome = match simulate(s) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_DIVERGED;
        }
    };
    if let Err(code) = write_outcome(&outcome, &dir, &file_stem(&s.name), format) {
        return code;
    }
    let m = &outcome.summary.metrics;
    if let Some(t) = outcome.summary.diverged_at {
        eprintln!(
            "error: {}: integration diverged at t = {t}; partial trace of {} samples written to {}",
            s.name,
            outcome.trace.len(),
            dir.display()
        );
        return EXIT_DIVERGED;
    }
    println!(
        "{}: final |x| = {:.3e}, max |x| = {:.3e}, settling time = {}, Vc monotone = {}",
        s.name,
        m.final_norm,
        m.max_norm,
        m.settling_time.map_or("none".to_string(), |t| format!("{t:.2}")),
        outcome.summary.monotonicity.passed
    );
    EXIT_OK
}

pub fn cmd_certify(config: &Path, sampler: SamplerSpec) -> i32 {
    let loaded = match load_or_report(config) {
        Ok(l) => l,
        Err(code) => return code,
    };
    if sampler.x_points < 2 || sampler.theta_points < 2 || !(sampler.half_width > 0.0) {
        eprintln!("error: need at least 2 grid points per axis and a positive half width");
        return EXIT_INVALID;
    }
    let s = &loaded.scenario;
    let model = BuiltinModel::new(s.model);
    let report = uclf::build_family(s.uclf, s.constants, s.model, &s.theta_box)
        .and_then(|fam| uclf::verify_uclf(fam.as_ref(), &model, &s.theta_box, &sampler));
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let (wx, wt) = &report.worst_margin_at;
    println!("uclf {} on {}: {} samples", s.uclf, s.model, report.samples);
    println!("min margin = {:.6e} at x = {wx:?}, theta = {wt:?}", report.min_margin);
    println!("min dissipation away from equilibrium = {:.6e}", report.min_dissipation);
    if report.passed {
        println!("certificate: pass");
        return EXIT_OK;
    }
    println!("certificate: FAIL ({} violating samples)", report.violations);
    for w in &report.witnesses {
        println!(
            "witness {:?}: x = {:?}, theta = {:?}, margin = {:.6e}, V = {:.6e}, Q = {:.6e}",
            w.kind, w.x, w.theta, w.margin, w.v, w.q
        );
    }
    EXIT_UNCERTIFIED
}

/// First scenario field, other than the name and `[adapt]`, where `a` and
/// `b` differ.
pub fn scenario_mismatch(a: &Scenario, b: &Scenario) -> Option<&'static str> {
    let checks = [
        ("model", a.model == b.model),
        ("uclf", a.uclf == b.uclf && a.constants == b.constants),
        ("integrator", a.integrator == b.integrator && a.output_step == b.output_step),
        ("x0", a.x0 == b.x0),
        ("initial estimates", a.theta_hat0 == b.theta_hat0 && a.phi_hat0 == b.phi_hat0),
        ("true parameters", a.truth == b.truth),
        ("parameter boxes", a.theta_box == b.theta_box && a.phi_box == b.phi_box),
        (
            "divergence settings",
            a.divergence_bound == b.divergence_bound && a.exact_filter_init == b.exact_filter_init,
        ),
    ];
    checks.iter().find(|(_, same)| !same).map(|(what, _)| *what)
}

fn worker_pool() -> Result<rayon::ThreadPool, String> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| e.to_string())
}

pub fn cmd_compare(configs: &[PathBuf], out: &Path) -> i32 {
    let mut loaded = Vec::with_capacity(configs.len());
    for c in configs {
        match load_or_report(c) {
            Ok(l) => loaded.push(l),
            Err(code) => return code,
        }
    }
    let first = &loaded[0].scenario;
    for (path, l) in configs.iter().zip(&loaded).skip(1) {
        if let Some(what) = scenario_mismatch(first, &l.scenario) {
            eprintln!(
                "error: {}: {what} differs from {}; compared configs may differ only in [adapt]",
                path.display(),
                configs[0].display()
            );
            return EXIT_INVALID;
        }
    }
    let pool = match worker_pool() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    if let Err(e) = fs::create_dir_all(out) {
        return io_failure(out, e);
    }
    let results: Vec<Result<RunSummary, i32>> = pool.install(|| {
        loaded
            .par_iter()
            .enumerate()
            .map(|(k, l)| {
                let o = simulate(&l.scenario).map_err(|e| {
                    eprintln!("error: {}: {e}", configs[k].display());
                    EXIT_DIVERGED
                })?;
                let stem = format!("{k:02}-{}", file_stem(&l.scenario.name));
                write_outcome(&o, out, &stem, TraceFormat::Csv)?;
                Ok(o.summary)
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(summary) => rows.push(io::compare_row(&summary, SETTLING_TOL)),
            Err(code) => return code,
        }
    }
    let p = first.theta_box.dim();
    let table = out.join("compare.csv");
    if let Err(code) = write_file(&table, |w| io::write_compare_csv(p, &rows, w)) {
        return code;
    }
    for r in &rows {
        println!("{}", r[..6].join("  "));
    }
    EXIT_OK
}

pub fn cmd_lemma1(gain: GainFunction, lambda: f64, k: f64, signal: &str, horizon: f64, step: f64, out: &Path) -> i32 {
    let signal = match SignalSpec::parse(signal) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let spec = Lemma1Spec {
        gain,
        lambda,
        k,
        signal,
        horizon,
        step,
    };
    let (traj, report) = match simloop::lemma1_harness(&spec) {
        Ok(r) => r,
        Err(e @ (SimError::Invalid { .. } | SimError::Adapt(_))) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
        Err(SimError::Numeric(crate::numkit::NumError::InvalidSpec { key, message })) => {
            eprintln!("error: invalid {key}: {message}");
            return EXIT_INVALID;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_DIVERGED;
        }
    };
    if let Err(e) = fs::create_dir_all(out) {
        return io_failure(out, e);
    }
    let csv_path = out.join("lemma1.rho.csv");
    let written = write_file(&csv_path, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "rho", "gamma", "w"])?;
        for (t, rho) in traj.iter() {
            let gamma = gain.eval(rho[0]).map_or(f64::NAN, |(g, _)| g);
            wr.write_record([t, rho[0], gamma, signal.eval(t)].map(io::format_float))?;
        }
        wr.flush()?;
        Ok(())
    })
    .and_then(|()| {
        write_file(&out.join("lemma1.report.json"), |mut w| {
            serde_json::to_writer_pretty(&mut w, &report)?;
            std::io::Write::write_all(&mut w, b"\n")?;
            Ok(())
        })
    });
    if let Err(code) = written {
        return code;
    }
    println!("sup |rho| = {:.6e}, |rho(T)| = {:.6e}, bounded = {}", report.sup_abs_rho, report.final_abs_rho, report.bounded);
    if let (Some(rest), Some(plateau)) = (report.rest_point, report.plateau) {
        println!("pulse plateau = {plateau:.6e}, rest point = {rest:.6e}");
    }
    if report.recovery_expected {
        println!("signal vanishes: rho(T) should approach 0");
    } else {
        println!("signal persists: boundedness only");
    }
    if report.bounded {
        EXIT_OK
    } else {
        EXIT_DIVERGED
    }
}
