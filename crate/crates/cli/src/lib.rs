//! `sofr` command line: simulation studies, the Tecator analysis, and single
//! tests on CSV data.
//!
//! Exit codes: 0 on success, 2 on usage errors, 1 on runtime errors.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use sofr_core::bench::{power_curve, run_study, write_study, StudyKind, StudySpec};
use sofr_core::ggf::GgfBasis;
use sofr_core::tecator::{analyze_tecator, parse_tecator, tecator_csv, BONFERRONI_ALPHA};
use sofr_core::testing::{run_test, TestConfig};
use sofr_core::{FunctionalDataset, Hypothesis, Method, RngStream};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sofr", version, about = "Nullity and linearity tests for scalar-on-function regression")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a size or power study described by a key=value spec file.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nullity and linearity tests of fat, water and protein on the spectra.
    Tecator {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Wild-bootstrap rounds for GGF.
        #[arg(long, default_value_t = 500)]
        bootstrap: usize,
        /// Null simulation runs for MHR.
        #[arg(long, default_value_t = 2000)]
        n_null: usize,
    },
    /// One test on a CSV file with header `y,t1,...,tJ`.
    Test {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long, value_parser = parse_hypothesis)]
        hypothesis: Hypothesis,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        bootstrap: usize,
        #[arg(long, default_value_t = 2000)]
        n_null: usize,
        /// GGF basis dimension.
        #[arg(long)]
        p: Option<usize>,
        /// Use principal components instead of B-splines for GGF.
        #[arg(long)]
        ggf_fpc: bool,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: sofr_core::Error| e.to_string())
}

fn parse_hypothesis(s: &str) -> Result<Hypothesis, String> {
    s.parse().map_err(|e: sofr_core::Error| e.to_string())
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<sofr_core::Error> for Failure {
    fn from(e: sofr_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Caps the global worker pool from `SOFR_THREADS`.
fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("SOFR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("SOFR_THREADS must be a positive integer, got `{v}`")))?;
    // A pool may already exist when `run` is called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    eprint!("{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    let result = configure_threads().and_then(|_| dispatch(cli.command));
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate { spec, out } => simulate(&spec, &out),
        Command::Tecator { data, out, seed, bootstrap, n_null } => tecator(&data, &out, seed, bootstrap, n_null),
        Command::Test { data, method, hypothesis, seed, bootstrap, n_null, p, ggf_fpc } => {
            if !method.supports(hypothesis) {
                return Err(Failure::Usage(format!("{method} does not test {hypothesis}")));
            }
            let mut cfg = TestConfig::default();
            cfg.ggf.bootstrap = bootstrap;
            cfg.mhr.n_null = n_null;
            if let Some(p) = p {
                cfg.ggf.p = p;
            }
            if ggf_fpc {
                cfg.ggf.basis = GgfBasis::Fpc;
            }
            let ds = FunctionalDataset::read_csv(&data)?;
            let r = run_test(&ds, method, hypothesis, &cfg, RngStream::new(seed, 0))?;
            println!("{}", serde_json::to_string_pretty(&r).map_err(|e| Failure::Runtime(e.to_string()))?);
            Ok(())
        }
    }
}

fn simulate(spec_path: &Path, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(spec_path)?;
    let spec = StudySpec::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", spec_path.display())))?;
    let start = Instant::now();
    let rows = match spec.kind {
        StudyKind::Size => run_study(&spec)?,
        StudyKind::Power => power_curve(&spec)?,
    };
    let stem = spec_path.file_stem().and_then(|s| s.to_str()).unwrap_or("study");
    write_study(out, stem, &spec, &rows, start.elapsed().as_secs_f64())?;
    for r in &rows {
        println!(
            "{} {} {} n={} alpha={} delta={}: rate {:.3} (se {:.3}), R={}, failures={}{}",
            r.setting,
            r.design,
            r.method,
            r.n,
            r.alpha,
            r.delta,
            r.rate,
            r.se,
            r.replicates,
            r.failures,
            if r.unreliable { " [unreliable]" } else { "" }
        );
    }
    println!("wrote {}", out.join(format!("{stem}.csv")).display());
    Ok(())
}

fn tecator(data: &Path, out: &Path, seed: u64, bootstrap: usize, n_null: usize) -> Result<(), Failure> {
    let ds = parse_tecator(data)?;
    let mut cfg = TestConfig::default();
    cfg.ggf.bootstrap = bootstrap;
    cfg.mhr.n_null = n_null;
    let cells = analyze_tecator(&ds, seed, &cfg)?;
    std::fs::create_dir_all(out)?;
    let path = out.join("tecator.csv");
    std::fs::write(&path, tecator_csv(&cells))?;
    println!("response  hypothesis  method  p-value  (* p < {BONFERRONI_ALPHA:.4})");
    for c in &cells {
        match (c.p_value, &c.error) {
            (Some(p), _) => println!(
                "{:<9} {:<11} {:<7} {:.4}{}",
                c.response,
                c.hypothesis.as_str(),
                c.method.as_str(),
                p,
                if c.significant == Some(true) { "*" } else { "" }
            ),
            (None, e) => println!(
                "{:<9} {:<11} {:<7} failed: {}",
                c.response,
                c.hypothesis.as_str(),
                c.method.as_str(),
                e.as_deref().unwrap_or("unknown")
            ),
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}
