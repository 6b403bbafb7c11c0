use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pestlaser::events::{read_ndjson, write_ndjson};
use pestlaser::harness::{
    emit_chart, emit_csv, parse_config, print_default_config, run_trial_logged, score_events, summarize, sweep_distance, sweep_speed,
    write_csv, HarnessError, SimConfig, SweepAxis, TrialResult,
};

/// Laser pest-control simulator: single trials, range and platform-speed sweeps.
#[derive(Debug, Parser)]
#[command(name = "pestlaser", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one trial and print its result row.
    Run {
        #[command(flatten)]
        common: Common,
        /// Write the full event log as newline-delimited JSON.
        #[arg(long)]
        event_log: Option<PathBuf>,
    },
    /// Efficiency against camera-to-crop distance.
    SweepDistance(SweepArgs),
    /// Efficiency and kill rate against platform speed.
    SweepSpeed(SweepArgs),
    /// Print the default configuration file.
    PrintDefaultConfig,
    /// Recompute trial counts from a saved event log.
    Score {
        #[arg(long)]
        event_log: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Trials per sweep point.
    #[arg(long)]
    trials: Option<u32>,
    /// SVG chart destination.
    #[arg(long)]
    chart: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn load_config(common: &Common) -> Result<SimConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
            parse_config(&text)?
        }
        None => SimConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.trial.seed = seed;
    }
    Ok(cfg)
}

fn write_results(results: &[TrialResult], out: Option<&Path>) -> Result<(), HarnessError> {
    match out {
        Some(path) => emit_csv(results, path),
        None => write_csv(results, io::stdout().lock()).map_err(|source| HarnessError::Io { path: "<stdout>".into(), source }),
    }
}

fn sweep(args: &SweepArgs, axis: SweepAxis) -> Result<(), HarnessError> {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.trials {
        cfg.sweep.distance_trials = n;
        cfg.sweep.speed_trials = n;
    }
    let results = match axis {
        SweepAxis::Distance => sweep_distance(&cfg, args.jobs)?,
        SweepAxis::Speed => sweep_speed(&cfg, args.jobs)?,
    };
    write_results(&results, args.common.out.as_deref())?;
    let summaries = summarize(&results)?;
    let mut err = io::stderr().lock();
    let _ = writeln!(err, "{:>10} {:>4} {:>10} {:>8} {:>12}", "point", "n", "efficiency", "sd", "killed/s");
    for s in &summaries {
        let _ = writeln!(
            err,
            "{:>10} {:>4} {:>10.4} {:>8.4} {:>12.3}",
            s.point, s.efficiency.n, s.efficiency.mean, s.efficiency.sd, s.neutralized_per_s.mean
        );
    }
    if let Some(chart) = &args.chart {
        emit_chart(&summaries, axis, chart)?;
    }
    Ok(())
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { common, event_log } => {
            let cfg = load_config(&common)?;
            let (result, events) = run_trial_logged(&cfg, cfg.trial.seed)?;
            if let Some(path) = event_log {
                let io_err = |source| HarnessError::Io { path: path.display().to_string(), source };
                let file = File::create(&path).map_err(io_err)?;
                write_ndjson(&events, io::BufWriter::new(file)).map_err(io_err)?;
            }
            write_results(&[result], common.out.as_deref())
        }
        Command::SweepDistance(args) => sweep(&args, SweepAxis::Distance),
        Command::SweepSpeed(args) => sweep(&args, SweepAxis::Speed),
        Command::PrintDefaultConfig => {
            print!("{}", print_default_config());
            Ok(())
        }
        Command::Score { event_log } => {
            let file = File::open(&event_log).map_err(|source| HarnessError::Io { path: event_log.display().to_string(), source })?;
            let events = read_ndjson(BufReader::new(file)).map_err(|(line, msg)| HarnessError::BadLog(format!("line {line}: {msg}")))?;
            let s = score_events(&events)?;
            println!("seed               {}", s.seed);
            println!("pests              {}", s.n_pests);
            println!("recognized         {}", s.n_detections_true);
            println!("false detections   {}", s.n_detections_false);
            println!("total recognition  {}", s.n_detections_true + s.n_detections_false);
            println!("neutralized        {}", s.n_neutralized);
            println!("efficiency         {}", s.efficiency());
            println!("neutralized per s  {}", s.neutralized_per_s());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
