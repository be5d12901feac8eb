use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rnnlab::harness::checks::{self, CheckOutcome};
use rnnlab::harness::{
    load_config, load_rows, rerun_study, resume, run_study, svg_plot, welch_table, write_csv, write_summary,
    RunOptions, StudyConfig,
};

#[derive(Parser)]
#[command(name = "rnnlab", version, about = "Capacity and trainability studies of recurrent networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Raw bytes for the char-LM task.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Concurrent trials; overrides the config and RNNLAB_WORKERS.
    #[arg(long)]
    workers: Option<usize>,
    /// Suppress per-trial progress on stderr.
    #[arg(long)]
    quiet: bool,
}

impl RunArgs {
    fn options(&self) -> Result<RunOptions> {
        let corpus = match &self.corpus {
            Some(p) => Some(Arc::from(
                fs::read(p).with_context(|| format!("reading corpus {}", p.display()))?,
            )),
            None => None,
        };
        Ok(RunOptions {
            corpus,
            workers: self.workers,
            verbose: !self.quiet,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run (or continue) the study described by a JSON config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Continue the study whose results log lives in a directory.
    Resume {
        dir: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Summarize a study; optionally export CSV and an SVG plot.
    Report {
        dir: PathBuf,
        /// Write CSV (default `<dir>/results.csv`).
        #[arg(long, num_args = 0..=1)]
        csv: Option<Option<PathBuf>>,
        /// Write an SVG plot (default `<dir>/results.svg`).
        #[arg(long, num_args = 0..=1)]
        svg: Option<Option<PathBuf>>,
    },
    /// Rerun each group's best configuration with fresh seeds.
    Rerun {
        dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compare analytic and finite-difference gradients for every cell.
    Gradcheck {
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 8)]
        n_h: usize,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Information, task and statistics oracles.
    OracleTest {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// GP tuner against random search on a synthetic bowl.
    TuneSanity {
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, default_value_t = 40)]
        trials: usize,
    },
}

fn report_checks(outcomes: &[CheckOutcome]) -> ExitCode {
    for o in outcomes {
        println!("{o}");
    }
    if outcomes.iter().all(|o| o.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn or_default(path: Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    path.unwrap_or_else(|| dir.join(name))
}

fn report(dir: &Path, csv: Option<Option<PathBuf>>, svg: Option<Option<PathBuf>>) -> Result<()> {
    let (header, rows) = load_rows(dir)?;
    println!("study {} ({} rows, config {})", header.study, rows.len(), &header.config_hash[..12]);
    write_summary(&rows, io::stdout().lock())?;
    if let Some(p) = csv {
        let p = or_default(p, dir, "results.csv");
        write_csv(&rows, fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?)?;
        println!("wrote {}", p.display());
    }
    if let Some(p) = svg {
        let p = or_default(p, dir, "results.svg");
        fs::write(&p, svg_plot(&rows, &header.study)).with_context(|| format!("writing {}", p.display()))?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn rerun(dir: &Path, runs: usize, options: &RunOptions) -> Result<()> {
    let (_, rows) = load_rows(dir)?;
    let config = load_config(dir)?;
    let reports = rerun_study(&config, &rows, runs, options)?;
    let mut out = io::stdout().lock();
    writeln!(out, "{:<20} {:>6} {:>12} {:>12} {:>12} {:>10} {:>8} {:>11}", "group", "trial", "min", "mean", "max", "sd", "sd/mean", "infeasible")?;
    for r in &reports {
        match &r.stats {
            Some(s) => writeln!(
                out,
                "{:<20} {:>6} {:>12.6} {:>12.6} {:>12.6} {:>10.2e} {:>8.4} {:>10.1}%",
                r.group, r.trial, s.min, s.mean, s.max, s.sd, s.sd_over_mean, s.infeasible_pct
            )?,
            None => writeln!(out, "{:<20} {:>6} all {} reruns infeasible", r.group, r.trial, r.infeasible)?,
        }
    }
    let table = welch_table(&reports);
    if !table.is_empty() {
        writeln!(out, "\nWelch's t-test")?;
        for w in table {
            writeln!(out, "{} vs {}: t={:.4} df={:.2} p={:.4}", w.a, w.b, w.t, w.df, w.p)?;
        }
    }
    Ok(())
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, run } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let config: StudyConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
            let path = run_study(&config, &run.options()?)?;
            println!("{}", path.display());
        }
        Command::Resume { dir, run } => {
            let path = resume(&dir, &run.options()?)?;
            println!("{}", path.display());
        }
        Command::Report { dir, csv, svg } => report(&dir, csv, svg)?,
        Command::Rerun { dir, runs, run } => rerun(&dir, runs, &run.options()?)?,
        Command::Gradcheck { depth, n_h, steps, seed } => {
            return Ok(report_checks(&[checks::gradcheck_all(depth, n_h, steps, seed)]))
        }
        Command::OracleTest { samples, seed } => {
            return Ok(report_checks(&[
                checks::mi_oracle(16),
                checks::task_oracles(samples, seed),
                checks::statistics_fixtures(),
            ]))
        }
        Command::TuneSanity { seeds, trials } => return Ok(report_checks(&[checks::tuner_sanity(seeds, trials)])),
    }
    Ok(ExitCode::SUCCESS)
}
