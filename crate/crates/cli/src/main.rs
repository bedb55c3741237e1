use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod convergence;
mod pipeline;
mod plot;
mod sweep;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(version, about = "Hahn-echo decoherence of NV centers in P1 baths")]
struct Args {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one configured ensemble.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `ensemble.master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the concentration × thickness grid of the `sweep` section.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip cells whose records are already complete.
        #[arg(long)]
        resume: bool,
    },
    /// Vary one parameter as given in the `convergence` section.
    Convergence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write plot data from run or sweep directories.
    Plot {
        records: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    /// Bad input; nothing was written.
    Config(String),
    Runtime(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(format!("{e:#}"))
    }
}

impl From<pcce::Error> for Failure {
    fn from(e: pcce::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut c = config::load(path)
        .map_err(|e| Failure::Config(format!("invalid config {}: {e}", path.display())))?;
    if let Some(s) = seed {
        c.ensemble.master_seed = s;
    }
    Ok(c)
}

fn out_dir(out: Option<PathBuf>, config: &RunConfig, prefix: &str) -> PathBuf {
    out.or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| {
            PathBuf::from(format!("{prefix}-{}", &pipeline::config_hash(config)[..12]))
        })
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, seed, out } => {
            let c = load(&config, seed)?;
            let dir = out_dir(out, &c, "run");
            let o = pipeline::execute(&c)?;
            pipeline::write_run(&dir, &o)?;
            match (&o.record.fit.fit, &o.record.fit.error) {
                (Some(f), _) => println!("p = {:.4} ± {:.4}, T2 = {:.4} us", f.p, f.p_error, f.t2),
                (None, Some(e)) => eprintln!("warning: no fit: {e}"),
                _ => {}
            }
            println!("wrote {}", dir.display());
        }
        Command::Sweep {
            config,
            seed,
            out,
            resume,
        } => {
            let c = load(&config, seed)?;
            if c.sweep.is_none() {
                return Err(Failure::Config(
                    "invalid config: sweep: section is required".into(),
                ));
            }
            let dir = out_dir(out, &c, "sweep");
            let report = sweep::run_sweep(&c, &dir, resume)?;
            print!("{}", fs_read(&dir.join("report.txt")));
            let failed: Vec<String> = report
                .cells
                .iter()
                .filter_map(|c| {
                    c.error
                        .as_ref()
                        .map(|e| format!("L={} rho={}: {e}", c.layer_thickness, c.rho_ppm))
                })
                .collect();
            if !failed.is_empty() {
                return Err(Failure::Runtime(failed.join("\n")));
            }
        }
        Command::Convergence { config, seed, out } => {
            let c = load(&config, seed)?;
            if c.convergence.is_none() {
                return Err(Failure::Config(
                    "invalid config: convergence: section is required".into(),
                ));
            }
            let dir = out_dir(out, &c, "convergence");
            convergence::run_convergence(&c, &dir)?;
            print!("{}", fs_read(&dir.join("convergence.txt")));
        }
        Command::Plot { records, out } => {
            if records.is_empty() {
                return Err(Failure::Config("no run records given".into()));
            }
            let recs =
                plot::collect_records(&records).map_err(|e| Failure::Config(format!("{e:#}")))?;
            if recs.is_empty() {
                return Err(Failure::Config("no run records found".into()));
            }
            let s = plot::write_plots(&recs, &out)?;
            if s.skipped > 0 {
                eprintln!(
                    "warning: {} points with Mx >= 1 or Mx <= 0 left out of loglog.dat",
                    s.skipped
                );
            }
            println!(
                "wrote plot data for {} records to {}",
                s.records,
                out.display()
            );
        }
        Command::Validate { config } => {
            load(&config, None)?;
            println!("{}: ok", config.display());
        }
    }
    Ok(())
}

fn fs_read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_default()
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool");
    }
    match dispatch(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
