//! Command-line front end. `run` returns the process exit code.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::{
    malliavin_diagnostics, run_convergence, simulate_ensemble, write_diagnostics_csv,
    write_ensemble_csv, write_report, ExperimentConfig,
};
use crate::model::hypotheses;
use crate::steps::check_step_lemma;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "jumpsde", version, about = "Decreasing-step Euler schemes for jump SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment file (TOML, or JSON when it starts with `{`).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One ensemble of terminal states to ensemble.csv and seeds.csv.
    Simulate(Common),
    /// Convergence study: report.json, rows.csv, reference.csv, seeds.csv.
    Converge(Common),
    /// Model hypothesis checks to hypotheses.json.
    CheckHypotheses(Common),
    /// Per-path Malliavin diagnostics to malliavin.csv.
    MalliavinDiag(Common),
    /// Step-size lemma audit to steps_audit.json.
    StepsAudit(Common),
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if c.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    std::fs::create_dir_all(&c.out)?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Simulate(c) => {
            let cfg = load(c)?;
            let ens = simulate_ensemble(&cfg, c.threads)?;
            let mut w = create(&c.out, "ensemble.csv")?;
            write_ensemble_csv(&ens, &mut w)?;
            w.flush()?;
            let mut w = create(&c.out, "seeds.csv")?;
            ens.write_seeds_csv(&mut w)?;
            w.flush()?;
        }
        Command::Converge(c) => {
            let cfg = load(c)?;
            let run = run_convergence(&cfg, c.threads)?;
            write_report(&c.out, &run)?;
            for w in &run.report.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::CheckHypotheses(c) => {
            let cfg = load(c)?;
            let model = cfg.model.build()?;
            let report = hypotheses::report(&model, Some(&cfg.steps))?;
            write_json(&c.out, "hypotheses.json", &report)?;
            println!("{}", report.hyp24a.classification);
        }
        Command::MalliavinDiag(c) => {
            let cfg = load(c)?;
            let rows = malliavin_diagnostics(&cfg, c.threads)?;
            let mut w = create(&c.out, "malliavin.csv")?;
            write_diagnostics_csv(&rows, &mut w)?;
            w.flush()?;
        }
        Command::StepsAudit(c) => {
            let cfg = load(c)?;
            let a = &cfg.audit;
            let report = check_step_lemma(&cfg.steps, a.rho, a.alpha, a.n_max)?;
            write_json(&c.out, "steps_audit.json", &report)?;
        }
    }
    Ok(())
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_NUMERICAL
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
