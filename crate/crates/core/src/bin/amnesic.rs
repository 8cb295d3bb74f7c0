use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use amnesic::cost::ConfigError;
use amnesic::harness::{
    prepare, prepare_program, read_results, run_prepared, sweep, write_checkpoint_dump, write_reports,
    write_results, write_trace, ExperimentConfig, HarnessError, Prepared, ResultsFile, SweepAxis,
};
use amnesic::text::{parse_program, serialize_annotated};

#[derive(Parser)]
#[command(name = "amnesic", version, about = "Checkpointing simulator with recomputation-based recovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every selected configuration once.
    Run {
        #[command(flatten)]
        common: Common,
        /// Write the calibration run's dynamic trace here.
        #[arg(long)]
        trace_dump: Option<PathBuf>,
        /// Write per-interval checkpoint contents here.
        #[arg(long)]
        checkpoint_dump: Option<PathBuf>,
    },
    /// Run one experiment per value of a parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// threshold, errors, checkpoints, cores or fraction.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Extract slices and print coverage statistics.
    Extract {
        #[command(flatten)]
        common: Common,
        /// Also write the annotated program text here.
        #[arg(long)]
        annotated: Option<PathBuf>,
    },
    /// Regenerate report files from a results.json.
    Report {
        results: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use this program instead of the generated workload.
    #[arg(long)]
    program: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Check every restored word against shadow snapshots.
    #[arg(long)]
    debug_oracle: bool,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.debug_oracle |= self.debug_oracle;
        Ok(cfg)
    }

    fn prepare(&self, cfg: &ExperimentConfig) -> Result<Prepared, HarnessError> {
        match &self.program {
            None => prepare(cfg),
            Some(p) => prepare_program(load_program(p)?, cfg),
        }
    }
}

fn load_program(path: &Path) -> Result<amnesic::program::Program, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_program(&text).map_err(|e| {
        ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        }
        .into()
    })
}

fn execute(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Run {
            common,
            trace_dump,
            checkpoint_dump,
        } => {
            let mut cfg = common.config()?;
            cfg.record_lines |= checkpoint_dump.is_some();
            let prep = common.prepare(&cfg)?;
            if let Some(path) = &trace_dump {
                write_trace(path, &prep.trace)?;
            }
            let exp = run_prepared(&prep, &cfg)?;
            if let Some(path) = &checkpoint_dump {
                write_checkpoint_dump(path, &exp)?;
            }
            for r in &exp.results {
                println!("{:<12} {}  n_chk {}  recoveries {}", r.config.name(), r.ledger.total(), r.ledger.n_chk, r.recoveries.len());
            }
            write_results(&common.out, &ResultsFile::single(exp))?;
            println!("wrote {}", common.out.display());
        }
        Command::Sweep { common, axis, values } => {
            if common.program.is_some() {
                return Err(ConfigError::Invalid("sweeps run generated workloads only".into()).into());
            }
            let cfg = common.config()?;
            let points = sweep(&cfg, axis, &values)?;
            write_results(&common.out, &ResultsFile { points })?;
            println!("wrote {}", common.out.display());
        }
        Command::Extract { common, annotated } => {
            let cfg = common.config()?;
            let prep = common.prepare(&cfg)?;
            let s = &prep.stats;
            println!("stores        {}", s.stores_seen);
            println!("sliced        {} ({:.2}%)", s.stores_sliced, s.sliced_fraction() * 100.0);
            println!("too long      {}", s.stores_rejected_length);
            println!("unavailable   {}", s.stores_rejected_unavailable);
            for (len, n) in &s.length_histogram {
                println!("  length {len:>2}  {n}");
            }
            if let Some(path) = annotated {
                std::fs::write(&path, serialize_annotated(&prep.program, &prep.slices)).map_err(|source| {
                    HarnessError::Io {
                        path: path.display().to_string(),
                        source,
                    }
                })?;
            }
        }
        Command::Report { results, out } => {
            let r = read_results(&results)?;
            if r.points.is_empty() {
                return Err(ConfigError::Invalid("results file holds no experiments".into()).into());
            }
            write_reports(&out, &r)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command).context("amnesic failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<HarnessError>().map_or(1, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
