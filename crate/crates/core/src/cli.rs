//! Command-line front end.
//!
//! ```text
//! beenoc run --config <path> [--seed N] [--out <dir>] [--trace] [--workload <file>]
//! beenoc verify --config <path>
//! beenoc oracle-check --config <path>
//! ```
//!
//! Exit status: 0 success, 2 configuration error, 3 runtime invariant
//! violation, 4 I/O error.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::oracle;

/// Scenarios run by `oracle-check`.
pub const ORACLE_SCENARIOS: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "beenoc", version, about = "Bee-inspired QoS routing simulator for mesh NoCs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation and write flows.csv, summary.csv and config.txt.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write trace.tsv, one line per event.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        workload: Option<PathBuf>,
    },
    /// Validate a configuration without running it.
    Verify {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check protocol circuits against exhaustive path enumeration.
    OracleCheck {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(path: &PathBuf) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    RunConfig::parse(&text)
}

pub fn execute(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Run {
            config,
            seed,
            out,
            trace,
            workload,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(w) = workload {
                cfg.workload = Some(w);
            }
            cfg.trace |= trace;
            let flows = crate::workload(&cfg)?;
            let (sim, report) = crate::run(&cfg, &flows)?;
            report.write(&out)?;
            if cfg.trace {
                let mut text = String::from("cycle\tevent\tnode\tflow\tpacket\tport\thop_counter\n");
                for rec in sim.trace() {
                    text.push_str(&rec.to_string());
                    text.push('\n');
                }
                fs::write(out.join("trace.tsv"), text)?;
            }
            for line in &report.header {
                writeln!(stdout, "{line}")?;
            }
            let s = &report.summary;
            writeln!(
                stdout,
                "offered {} established {} failed {} success_ratio {:.6} -> {}",
                s.offered,
                s.established,
                s.failed,
                s.success_ratio,
                out.display()
            )?;
        }
        Command::Verify { config } => {
            let cfg = load_config(&config)?;
            if let Some(path) = &cfg.workload {
                let text = fs::read_to_string(path)?;
                crate::traffic::parse_workload(&text, cfg.mesh_width, cfg.mesh_height)?;
            }
            for line in cfg.effective_lines() {
                writeln!(stdout, "{line}")?;
            }
            writeln!(stdout, "config ok")?;
        }
        Command::OracleCheck { config } => {
            let cfg = load_config(&config)?;
            let s = oracle::soundness_suite(&cfg, ORACLE_SCENARIOS)?;
            writeln!(
                stdout,
                "oracle-check: {} scenarios ({} established, {} failed) sound; {} idle scenarios minimal",
                s.scenarios, s.established, s.failed, s.idle_checked
            )?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout();
    match execute(cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &Error) -> i32 {
    eprintln!("error[{}]: {e}", e.category());
    e.exit_code()
}
