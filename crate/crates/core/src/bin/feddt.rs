use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use feddt::autodiff::OpKind;
use feddt::cost::CostInputs;
use feddt::harness;
use feddt::{gradcheck, Error};

#[derive(Parser)]
#[command(
    name = "feddt",
    version,
    about = "Federated dynamic-transformer simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured experiment.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run two configs over several seeds and compare them.
    Compare {
        config_a: PathBuf,
        config_b: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print closed-form communication totals.
    Cost(CostArgs),
    /// Finite-difference check of every backward rule and a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt the backward rule of this op (suite self-test).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct CostArgs {
    #[arg(long = "T")]
    rounds: u64,
    #[arg(long = "c")]
    parts: u64,
    #[arg(long = "N")]
    layers: u64,
    #[arg(long = "W1")]
    w1: u64,
    #[arg(long = "W2")]
    w2: u64,
    #[arg(long)]
    json: bool,
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run { config, out } => {
            let s = harness::cmd_run(&config, &out)?;
            println!(
                "{} rounds, final depth {}, final eval loss {:.6}, {} bytes; wrote {}",
                s.rounds,
                s.final_layers,
                s.final_eval_loss,
                s.total_bytes,
                out.display()
            );
        }
        Command::Compare {
            config_a,
            config_b,
            seeds,
            out,
        } => {
            let c = harness::cmd_compare(&config_a, &config_b, &seeds, &out)?;
            println!(
                "median final eval loss: a {:.6}, b {:.6}; block bytes b/a = {} ({:.4}); wrote {}",
                c.a.median_final_eval_loss,
                c.b.median_final_eval_loss,
                c.block_byte_ratio,
                c.block_byte_ratio_value,
                out.join(harness::COMPARISON_FILE).display()
            );
        }
        Command::Cost(a) => {
            let inputs = CostInputs::new(a.rounds, a.parts, a.layers, a.w1, a.w2)?;
            println!("{}", harness::cmd_cost(&inputs, a.json)?.trim_end());
        }
        Command::Gradcheck {
            seed,
            inject_fault,
            json,
        } => {
            let fault = inject_fault
                .map(|name| {
                    OpKind::from_name(&name)
                        .ok_or_else(|| Error::Config(format!("unknown op `{name}`")))
                })
                .transpose()?;
            let report = gradcheck::run(seed, fault)?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("serializable")
                );
            } else {
                println!("{}", report.summary());
            }
            if !report.passed {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
