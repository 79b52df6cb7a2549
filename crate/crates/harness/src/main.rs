use std::path::PathBuf;
use std::process::ExitCode;

use airfl_core::config::SystemConfig;
use airfl_core::fltrain::AggregationMode;
use airfl_harness::run::{execute, load_config, replay, write_run, Experiment, Outcome, MANIFEST_FILE};
use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "airfl", version, about = "Over-the-air FL verification experiments")]
struct Cli {
    /// TOML system configuration; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the system and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sample or trial count of the experiment.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output directory; defaults to `out/<command>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Moments of the effective coefficient over a (rho, gamma) grid.
    VerifyXi,
    /// Joint density of the estimation-error statistics.
    VerifyPdf,
    /// Frozen-gradient aggregation error against its exact value.
    VerifyDivergence,
    /// Optimal truncation threshold under each rule.
    OptimizeThreshold,
    /// Final accuracy and divergence across truncation thresholds.
    SweepThreshold {
        /// Fixed thresholds, comma separated (at least 8).
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        /// Seeds per point (at least 3).
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// One training run.
    Train {
        /// Aggregation; overrides the config.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Re-run a recorded experiment and compare output hashes.
    Replay { manifest: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ideal,
    Aircomp,
}

fn report(outcome: &Outcome) {
    for n in &outcome.notes {
        println!("{n}");
    }
    for c in &outcome.checks {
        println!("{c}");
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let Format::Csv = cli.format;
    let mut cfg = match &cli.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => SystemConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }

    let exp = match cli.command {
        Command::Replay { manifest } => {
            let manifest = if manifest.is_dir() { manifest.join(MANIFEST_FILE) } else { manifest };
            let out = cli.out.unwrap_or_else(|| PathBuf::from("out/replay"));
            let r = replay(&manifest, &out)?;
            report(&r.outcome);
            if r.mismatches.is_empty() {
                println!("replay of {} matches ({} files)", r.manifest.experiment.name(), r.manifest.outputs.len());
                return Ok(true);
            }
            bail!("outputs differ from manifest: {}", r.mismatches.join(", "));
        }
        Command::VerifyXi => Experiment::verify_xi(),
        Command::VerifyPdf => Experiment::verify_pdf(),
        Command::VerifyDivergence => Experiment::verify_divergence(cfg.trials),
        Command::OptimizeThreshold => Experiment::OptimizeThreshold,
        Command::SweepThreshold { gammas, repetitions } => {
            let Experiment::SweepThreshold { gammas: g0, repetitions: r0 } = Experiment::sweep_threshold() else {
                unreachable!()
            };
            Experiment::SweepThreshold {
                gammas: gammas.unwrap_or(g0),
                repetitions: repetitions.unwrap_or(r0),
            }
        }
        Command::Train { mode } => {
            match mode {
                Some(Mode::Ideal) => cfg.train.aggregation = AggregationMode::Ideal,
                Some(Mode::Aircomp) => cfg.train.aggregation = AggregationMode::AirComp,
                None => {}
            }
            Experiment::Train
        }
    };
    let exp = match cli.trials {
        Some(n) => exp.with_count(n),
        None => exp,
    };
    let verify = exp.name().starts_with("verify-");
    let outcome = execute(&cfg, &exp)?;
    let dir = cli.out.unwrap_or_else(|| PathBuf::from("out").join(exp.name()));
    write_run(&dir, &cfg, &exp, &outcome)?;
    report(&outcome);
    println!("wrote {}", dir.display());
    Ok(!verify || outcome.all_passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
