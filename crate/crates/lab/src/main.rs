//! `lab`: batch runner for neumann-lab experiments.
//!
//! Exit status: 0 on success, 2 on a precondition or configuration error,
//! 3 on a numerical failure or a flagged run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use neumann_lab::config::RunConfig;
use neumann_lab::error::LabError;
use neumann_lab::exec::Exec;
use neumann_lab::experiment::{emit_report, output_dir, run_experiment, OUTPUT_ROOT_ENV};
use neumann_lab::suite::{determinism, record, run_suite, SuiteOptions};

#[derive(Parser)]
#[command(name = "lab", version, about = "Reflected SDE, BSDE and ergodic control experiments")]
struct Cli {
    /// Root for relative output directories.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV, default_value = "lab-output")]
    root: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecArg {
    Parallel,
    Sequential,
}

impl From<ExecArg> for Exec {
    fn from(e: ExecArg) -> Self {
        match e {
            ExecArg::Parallel => Exec::Parallel,
            ExecArg::Sequential => Exec::Sequential,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment from a TOML config.
    Run {
        config: PathBuf,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        exec: Option<ExecArg>,
    },
    /// Collate the runs under a directory.
    Report { dir: PathBuf },
    /// Run the acceptance suite, then rerun it to check determinism.
    Bench {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = SuiteOptions::default().seed)]
        seed: u64,
        #[arg(long, value_enum, default_value = "parallel")]
        exec: ExecArg,
        /// Executor for the determinism rerun.
        #[arg(long, value_enum, default_value = "sequential")]
        rerun_exec: ExecArg,
        /// Skip the rerun (criterion 10 is not evaluated).
        #[arg(long)]
        no_rerun: bool,
    },
}

fn fail(e: &LabError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn run(root: &Path, config: &Path, out: Option<PathBuf>, seed: Option<u64>, exec: Option<ExecArg>) -> ExitCode {
    let mut cfg = match RunConfig::load(config) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = exec {
        cfg.exec = e.into();
    }
    let dir = out.unwrap_or_else(|| output_dir(&cfg, root));
    match run_experiment(&cfg, &dir) {
        Ok(m) => {
            println!("{}: {:?} -> {}", cfg.name, m.status, dir.display());
            for f in &m.flags {
                println!("  flag: {f}");
            }
            ExitCode::from(m.exit_code() as u8)
        }
        Err(e) => fail(&e),
    }
}

fn bench(root: &Path, out: Option<PathBuf>, seed: u64, exec: ExecArg, rerun_exec: ExecArg, no_rerun: bool) -> ExitCode {
    let dir = out.unwrap_or_else(|| root.join("bench"));
    let first = dir.join("run");
    let mut results = match run_suite(&first, &SuiteOptions { seed, exec: exec.into() }) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    if !no_rerun {
        let second = dir.join("rerun");
        let det = run_suite(&second, &SuiteOptions { seed, exec: rerun_exec.into() })
            .and_then(|_| determinism(&first, &second))
            .and_then(|d| record(&first, &d).map(|_| d));
        match det {
            Ok(d) => results.push(d),
            Err(e) => return fail(&e),
        }
    }
    for r in &results {
        println!("criterion {:>2} {:<22} {}  {}", r.id, r.name, if r.pass { "PASS" } else { "FAIL" }, r.detail);
    }
    println!("results in {}", first.display());
    if results.iter().all(|r| r.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { config, out, seed, exec } => run(&cli.root, &config, out, seed, exec),
        Cmd::Report { dir } => match emit_report(&dir) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Cmd::Bench { out, seed, exec, rerun_exec, no_rerun } => bench(&cli.root, out, seed, exec, rerun_exec, no_rerun),
    }
}
