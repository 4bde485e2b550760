use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedfv::fedcore::{Algorithm, OrderMode};
use fedfv::harness::{
    run_experiment, run_order_ablation, run_theory_suite, ConfigOverrides, ExperimentConfig,
    ExperimentSummary, THEORY_FILE,
};
use fedfv::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_THEORY: u8 = 3;

#[derive(Parser)]
#[command(name = "fedfv", version, about = "Federated fair averaging simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run FedAvg or FedFV over one or more seeds.
    Run(RunArgs),
    /// Compare projecting orders (loss_ascending, random, reverse) with alpha = tau = 0.
    AblateOrder(RunArgs),
    /// Sweep the theorem checks and write a report.
    Theory(TheoryArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed to run; repeat for several. Replaces the config's seed list.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    sample_frac: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    order_mode: Option<OrderMode>,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Premise-holding ensembles, two-objective problems and monitor runs each.
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl RunArgs {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            seeds: self.seeds.clone(),
            algorithm: self.algorithm,
            alpha: self.alpha,
            tau: self.tau,
            rounds: self.rounds,
            sample_frac: self.sample_frac,
            dropout: self.dropout,
            output_dir: self.out.clone(),
            order_mode: self.order_mode,
        }
    }

    fn config(&self, ablation: bool) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if ablation {
            cfg.fedfv.alpha = 0.0;
            cfg.fedfv.tau = 0;
        }
        self.overrides().apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_summary(s: &ExperimentSummary) {
    println!("{} ({} seeds, final round)", s.label, s.seeds.len());
    for stat in &s.stats {
        println!("  {:<9} {:.4} ± {:.4}", stat.statistic, stat.mean, stat.std);
    }
}

fn fail(code: u8, err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code)
}

fn runtime_code(err: &Error) -> u8 {
    if err.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Run(args) => {
            let cfg = match args.config(false) {
                Ok(cfg) => cfg,
                Err(e) => return fail(EXIT_CONFIG, &e),
            };
            match run_experiment(&cfg) {
                Ok(summary) => {
                    print_summary(&summary);
                    println!("results in {}", cfg.run.output_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(runtime_code(&e), &e),
            }
        }
        Command::AblateOrder(args) => {
            let cfg = match args.config(true) {
                Ok(cfg) => cfg,
                Err(e) => return fail(EXIT_CONFIG, &e),
            };
            match run_order_ablation(&cfg) {
                Ok(result) => {
                    println!("order_mode      mean final std  worst5");
                    for row in result.rows() {
                        println!(
                            "{:<15} {:.4} ± {:.4}  {:.4}",
                            row.order_mode,
                            row.mean_final_std,
                            row.std_final_std,
                            row.mean_final_worst5
                        );
                    }
                    println!("results in {}", cfg.run.output_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(runtime_code(&e), &e),
            }
        }
        Command::Theory(args) => match run_theory_suite(args.seed, args.count, &args.out) {
            Ok(report) => {
                let s = &report.summary;
                for (name, c) in [
                    ("theorem 1", s.theorem1),
                    ("theorem 2", s.theorem2),
                    ("theorem 3", s.theorem3),
                    ("theorem 4", s.theorem4),
                ] {
                    println!("{name}: {} pass, {} skip, {} fail", c.pass, c.skip, c.fail);
                }
                println!("report in {}", args.out.join(THEORY_FILE).display());
                if report.failures() > 0 {
                    ExitCode::from(EXIT_THEORY)
                } else {
                    ExitCode::SUCCESS
                }
            }
            Err(e) => fail(runtime_code(&e), &e),
        },
    }
}
