use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hotsketch_cli::{presets, resume, run_path, run_text, CliError, RunOptions, RunStatus};

#[derive(Parser)]
#[command(name = "hotsketch", version, about = "Run hotsketch experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Continue an interrupted run from its checkpoint.
    Resume {
        checkpoint: PathBuf,
        /// Refuse to resume unless this config matches the checkpoint's.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Micro-benchmarks.
    Bench {
        #[command(subcommand)]
        what: Bench,
    },
    /// Retention bound evaluation.
    Theory {
        #[command(subcommand)]
        what: Theory,
    },
    /// Print a built-in config, or list them.
    Preset {
        name: Option<String>,
        /// Run the preset instead of printing it.
        #[arg(long)]
        run: bool,
        #[command(flatten)]
        opts: Opts,
    },
}

#[derive(Subcommand)]
enum Bench {
    /// Insert/query throughput per (buckets, slots per bucket).
    Throughput {
        #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
        c: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "4096")]
        w: Vec<usize>,
        #[arg(long, default_value_t = 2_000_000)]
        events: u64,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value = "results/throughput")]
        output_dir: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
}

#[derive(Subcommand)]
enum Theory {
    /// Closed-form and Zipf retention bounds over a grid.
    Grid {
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9")]
        gamma: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1.05,1.1,1.2,1.5,2.0")]
        z: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000,10000")]
        w: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
        c: Vec<usize>,
        /// Monte-Carlo trials per closed-form point.
        #[arg(long, default_value_t = 0)]
        trials: usize,
        #[arg(long, default_value = "results/theory_grid")]
        output_dir: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
}

#[derive(Args, Clone)]
struct Opts {
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    stop_after: Option<u64>,
}

impl From<Opts> for RunOptions {
    fn from(o: Opts) -> Self {
        RunOptions { threads: o.threads, checkpoint: o.checkpoint, checkpoint_every: o.checkpoint_every, stop_after: o.stop_after }
    }
}

fn list<T: std::fmt::Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

fn toml_path(p: &std::path::Path) -> String {
    format!("{:?}", p.display().to_string())
}

fn dispatch(cli: Cli) -> Result<Option<RunStatus>, CliError> {
    Ok(Some(match cli.command {
        Command::Run { config, opts } => run_path(&config, &opts.into())?,
        Command::Resume { checkpoint, config, opts } => resume(&checkpoint, config.as_deref(), &opts.into())?,
        Command::Bench { what: Bench::Throughput { c, w, events, repeats, output_dir, opts } } => {
            let text = format!(
                "experiment = \"throughput\"\noutput_dir = {}\nseeds = [0]\n\n[workload]\nfeatures = 1000000\nevents = {events}\n\n[eval]\nbuckets = [{}]\nslot_choices = [{}]\nbench_repeats = {repeats}\n",
                toml_path(&output_dir),
                list(&w),
                list(&c)
            );
            run_text(&text, &opts.into())?
        }
        Command::Theory { what: Theory::Grid { gamma, z, w, c, trials, output_dir, opts } } => {
            let float_list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
            let text = format!(
                "experiment = \"theory_grid\"\noutput_dir = {}\nseeds = [0]\n\n[eval]\ngamma = [{}]\nz = [{}]\nbuckets = [{}]\nslot_choices = [{}]\ntrials = {trials}\n",
                toml_path(&output_dir),
                float_list(&gamma),
                float_list(&z),
                list(&w),
                list(&c)
            );
            run_text(&text, &opts.into())?
        }
        Command::Preset { name: None, .. } => {
            for name in presets::NAMES {
                println!("{name}");
            }
            return Ok(None);
        }
        Command::Preset { name: Some(name), run, opts } => {
            let text = presets::preset(&name).ok_or_else(|| {
                CliError::Experiment(format!("unknown preset {name:?}; known: {}", presets::NAMES.join(", ")))
            })?;
            if !run {
                print!("{text}");
                return Ok(None);
            }
            run_text(text, &opts.into())?
        }
    }))
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(RunStatus::Completed(report))) => {
            println!("wrote {} rows to {}", report.rows, report.csv.display());
            println!("summary: {}", report.summary.display());
            ExitCode::SUCCESS
        }
        Ok(Some(RunStatus::Interrupted { checkpoint, units })) => {
            println!("stopped after {units} units; resume with `hotsketch resume {}`", checkpoint.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
