use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zakai_bench::scenarios::BUILTIN;
use zakai_bench::{run_scenario, Scenario};

#[derive(Parser)]
#[command(
    name = "zakai-bench",
    version,
    about = "Run filtering scenarios and check them"
)]
struct Cli {
    /// List the built-in scenarios and exit.
    #[arg(long)]
    list_scenarios: bool,
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run(RunArgs),
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    /// JSON config file or the name of a built-in scenario.
    #[arg(long)]
    config: Option<String>,
    /// Override a config value, e.g. `--set grid.n=401`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, env = "ZAKAI_BENCH_OUTDIR", default_value = "out")]
    outdir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.list_scenarios {
        for (name, about) in BUILTIN {
            println!("{name:<10} {about}");
        }
        return ExitCode::SUCCESS;
    }
    let args = match cli.command {
        Some(Command::Run(a)) => a,
        None => cli.run,
    };
    let Some(config) = args.config else {
        eprintln!("error: --config is required (or use --list-scenarios)");
        return ExitCode::from(2);
    };
    let scenario = match Scenario::load(&config, &args.overrides) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let started = std::time::Instant::now();
    match run_scenario(&scenario, &args.outdir) {
        Ok(outcome) => {
            log::info!(
                "{} finished in {:.1} s: {}",
                outcome.id,
                started.elapsed().as_secs_f64(),
                outcome.dir.display()
            );
            for c in &outcome.summary.checks {
                println!(
                    "{:<40} {:>14} {}",
                    c.name,
                    c.value.map_or("n/a".into(), |v| format!("{v:.6e}")),
                    if c.passed { "pass" } else { "FAIL" }
                );
            }
            for e in &outcome.summary.errors {
                println!("error: {e}");
            }
            if outcome.summary.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
