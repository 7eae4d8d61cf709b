use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ec3::harness::{self, ExperimentConfig, Overrides, RunReport};
use ec3::scores::ScoreKind;

#[derive(Parser)]
#[command(name = "ec3", version, about = "Conformal prediction sets, adapter training, temperature sweeps and bound checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repeated calibration/test splits with the configured score.
    Evaluate(Common),
    /// Train conformal-correction adapters and evaluate the corrected sets.
    Train(Common),
    /// Temperature sweep with its Pareto front.
    Sweep(Common),
    /// Numerical checks of the efficiency/entropy bounds.
    VerifyBounds(Common),
    /// Write the configured synthetic benchmark as CSV files.
    SynthGen(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_score)]
    score: Option<ScoreKind>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 4 when a bound check fails.
    #[arg(long)]
    strict: bool,
}

fn parse_score(s: &str) -> Result<ScoreKind, String> {
    s.parse().map_err(|e: ec3::Error| e.to_string())
}

fn summarize(r: &RunReport) {
    if let Some(a) = &r.aggregate {
        println!("coverage {}  efficiency {}  entropy {}", a.coverage, a.efficiency, a.mean_entropy);
    }
    if let Some(a) = &r.baseline_aggregate {
        println!("uncorrected: coverage {}  efficiency {}", a.coverage, a.efficiency);
    }
    if !r.sweep.is_empty() {
        println!("{} sweep points, {} on the Pareto front", r.sweep.len(), r.pareto.len());
    }
    if let Some(s) = &r.selection {
        println!("selected T={:.4}: entropy {:.4} efficiency {:.4}", s.temperature, s.mean_entropy, s.efficiency);
    }
    for b in &r.bounds {
        let verdict = if b.passed { "ok" } else { "VIOLATED" };
        println!("{:<28} K={:<4} holds {}/{} (need {:.4})  {verdict}", b.check, b.k, b.holds, b.trials, b.required_rate);
    }
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (run, c): (fn(&ExperimentConfig) -> ec3::Result<RunReport>, &Common) = match &cli.command {
        Command::Evaluate(c) => (harness::cmd_evaluate, c),
        Command::Train(c) => (harness::cmd_train, c),
        Command::Sweep(c) => (harness::cmd_sweep, c),
        Command::VerifyBounds(c) => (harness::cmd_verify_bounds, c),
        Command::SynthGen(c) => (harness::cmd_synth_gen, c),
    };
    let ov = Overrides { alpha: c.alpha, beta: c.beta, gamma: c.gamma, seed: c.seed, score: c.score, out: c.out.clone() };
    let result = ExperimentConfig::load(&c.config, &ov).and_then(|cfg| {
        let report = run(&cfg)?;
        report.write(&cfg.out)?;
        Ok((cfg, report))
    });
    match result {
        Ok((cfg, report)) => {
            summarize(&report);
            println!("report written to {}", cfg.out.display());
            if c.strict && !report.bounds_passed() {
                return ExitCode::from(harness::EXIT_BOUND_VIOLATION as u8);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
