use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use satenq::envs::EnvSpec;
use satenq::harness::{self, suite, CellStatus, ExperimentConfig, RunRecord};
use satenq::pipeline::{run, Algorithm, RunConfig};
use satenq::theory::{verify_theory, TheoryConfig};
use satenq::{Error, Result};

#[derive(Parser)]
#[command(name = "satenq", version, about = "Satisficing ensemble Q-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    Gridworld,
    Cartpole,
    Acrobot,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgArg {
    SatEnq,
    Dqn,
    DoubleDqn,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate a single run.
    Train {
        /// TOML file with run settings; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        env: Option<EnvArg>,
        #[arg(long, value_enum)]
        algorithm: Option<AlgArg>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the metrics record here as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every arm of an experiment file over its seeds.
    Suite {
        config: PathBuf,
        /// Used when the file has no output_dir.
        #[arg(long, default_value = "runs/suite")]
        output_dir: PathBuf,
    },
    /// Check the variance, decomposition and contraction results numerically.
    VerifyTheory {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON summary here.
        #[arg(long, default_value = "theory_report.json")]
        out: PathBuf,
    },
    /// Run a preconfigured experiment.
    Reproduce {
        #[arg(long)]
        target: String,
        #[arg(long, default_value = "runs")]
        output_root: PathBuf,
        /// Use seeds 0..N instead of the preset's ten.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Aggregate the records in a suite directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Write per-arm learning-curve CSVs for a suite directory.
    PlotData {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Train {
            config,
            env,
            algorithm,
            seed,
            out,
        } => train(config, env, algorithm, seed, out),
        Command::Suite { config, output_dir } => {
            let cfg = ExperimentConfig::from_file(&config, &output_dir)?;
            run_and_report(&cfg)
        }
        Command::VerifyTheory { seed, out } => verify(seed, &out),
        Command::Reproduce {
            target,
            output_root,
            seeds,
            threads,
        } => {
            let mut cfg = harness::preset(&target, &output_root)?;
            if let Some(n) = seeds {
                cfg.seeds = (0..n).collect();
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            cfg.validate()?;
            run_and_report(&cfg)
        }
        Command::Report { dir } => {
            let records = harness::load_records(&dir)?;
            let saved = dir.join(suite::EXPERIMENT_FILE);
            let (order, reference) = if saved.exists() {
                let cfg = ExperimentConfig::from_file(&saved, &dir)?;
                (cfg.arms.iter().map(|a| a.name.clone()).collect(), cfg.reference)
            } else {
                (Vec::new(), None)
            };
            let report = harness::aggregate(&records, &order, reference.as_deref())?;
            write_report(&report, &dir)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::PlotData { dir } => {
            let records = harness::load_records(&dir)?;
            for p in harness::write_plot_data(&records, &dir.join("plot_data"))? {
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn train(
    config: Option<PathBuf>,
    env: Option<EnvArg>,
    algorithm: Option<AlgArg>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let mut cfg: RunConfig = match &config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?
        }
        None => RunConfig::default(),
    };
    if let Some(e) = env {
        cfg.env = match e {
            EnvArg::Gridworld => EnvSpec::gridworld(0.2),
            EnvArg::Cartpole => EnvSpec::cartpole(),
            EnvArg::Acrobot => EnvSpec::acrobot(),
        };
    }
    if let Some(a) = algorithm {
        cfg.algorithm = match a {
            AlgArg::SatEnq => Algorithm::SatEnq,
            AlgArg::Dqn => Algorithm::Dqn,
            AlgArg::DoubleDqn => Algorithm::DoubleDqn,
        };
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let outcome = run(&cfg)?;
    let m = &outcome.metrics;
    println!(
        "{} on {} seed {}: return {:.3} ± {:.3}, success {:.2}, failed {}, {} env steps, {:.1}s",
        m.algorithm,
        m.env,
        m.seed,
        m.eval_return_mean,
        m.eval_return_std,
        m.eval_success_rate,
        m.failed,
        m.env_steps,
        m.wall_time_s
    );
    if let Some(err) = &m.error {
        println!("run error: {err}");
    }
    if let Some(path) = out {
        let record = RunRecord {
            schema_version: suite::RECORD_SCHEMA_VERSION,
            arm: cfg.label(),
            config_hash: suite::config_hash(&cfg)?,
            config: cfg,
            metrics: outcome.metrics,
        };
        std::fs::write(&path, serde_json::to_string_pretty(&record)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_and_report(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let result = harness::run_suite(cfg, |r, status| {
        let tag = match status {
            CellStatus::Ran => "ran",
            CellStatus::Reused => "reused",
        };
        eprintln!(
            "[{tag}] {} seed {}: {:.3}{}",
            r.arm,
            r.metrics.seed,
            r.metrics.eval_return_mean,
            if r.metrics.failed { " (failed)" } else { "" }
        );
    })?;
    eprintln!("{} runs executed, {} reused", result.executed, result.reused);
    write_report(&result.report, &cfg.output_dir)?;
    harness::write_plot_data(&result.records, &cfg.output_dir.join("plot_data"))?;
    Ok(ExitCode::SUCCESS)
}

fn write_report(report: &harness::AggregateReport, dir: &Path) -> Result<()> {
    print!("{}", report.render());
    harness::write_csv(&report.csv_rows(), &dir.join("report.csv"))?;
    let json = dir.join("report.json");
    std::fs::write(&json, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&json, e))
}

fn verify(seed: u64, out: &Path) -> Result<ExitCode> {
    let cfg = TheoryConfig {
        seed,
        ..TheoryConfig::default()
    };
    let report = verify_theory(&cfg)?;
    for c in &report.checks {
        println!(
            "[{}] {}: {:.3e} (tolerance {:.1e}) {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance,
            c.detail
        );
    }
    println!(
        "note: fixed point exceeds B + m in {}/{} entries; only the clipped bootstrap is bounded by B + m, Q also carries the reward",
        report.naive_bound_exceedances, report.naive_bound_entries
    );
    std::fs::write(out, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(out, e))?;
    Ok(if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
