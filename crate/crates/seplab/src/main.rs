use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use seplab::commands::{cmd_evaluate, cmd_paramcheck, cmd_report, cmd_simulate, cmd_sweep, cmd_train, Context, SweepScope};
use seplab::config::load_config;
use seplab::core::report::Metric;
use seplab::Result;

/// Speech separation experiments: SIMO-only, mixed SIMO-SISO and iterative
/// SISO-only assemblies of a dual-path RNN backbone.
#[derive(Parser)]
#[command(name = "seplab", version)]
struct Cli {
    /// Directory every relative path (config included) is resolved against.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.max_epochs=30`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for simulation, batches and evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Tables {
    Table1,
    Table2,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset and its manifest.
    Simulate,
    /// Train the configured model, keeping the best validation checkpoint.
    Train,
    /// Score a checkpoint on the evaluation split.
    Evaluate {
        /// Defaults to the configured model's run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Report SI-SDR improvement instead of absolute SI-SDR.
        #[arg(long)]
        improvement: bool,
    },
    /// Parameter counts and pairwise differences across all splits.
    Paramcheck,
    /// Train and evaluate every split, then render the tables.
    Sweep {
        #[arg(long, value_enum, default_value = "both")]
        tables: Tables,
    },
    /// Render tables from stored evaluation records.
    Report,
}

fn run(cli: Cli) -> Result<()> {
    let config_path = cli.config.as_ref().map(|p| cli.workdir.join(p));
    let mut config = load_config(config_path.as_deref(), &cli.overrides)?;
    if let Command::Evaluate { improvement: true, .. } = cli.command {
        config.eval.metric = Metric::Improvement;
    }
    let ctx = Context::new(cli.workdir, config);
    match cli.command {
        Command::Simulate => println!("manifest: {}", cmd_simulate(&ctx)?.display()),
        Command::Train => {
            let a = cmd_train(&ctx)?;
            println!("checkpoint: {}\nlog: {}\nbest epoch: {}{}", a.checkpoint.display(), a.log.display(), a.best_epoch, if a.reused { " (existing run)" } else { "" });
        }
        Command::Evaluate { checkpoint, .. } => {
            let a = cmd_evaluate(&ctx, checkpoint.as_deref())?;
            println!("{}\nrecords: {} ({} utterances)", a.table_plain, a.dir.display(), a.records.len());
        }
        Command::Paramcheck => {
            let p = cmd_paramcheck(&ctx)?;
            print!("{}", p.render());
            println!("parity (< 5%): {}", if p.passes(0.05) { "ok" } else { "VIOLATED" });
        }
        Command::Sweep { tables } => {
            let scope = match tables {
                Tables::Table1 => SweepScope::Table1,
                Tables::Table2 => SweepScope::Table2,
                Tables::Both => SweepScope::Both,
            };
            print!("{}", cmd_sweep(&ctx, scope)?.text);
        }
        Command::Report => print!("{}", cmd_report(&ctx)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = ["warn", "info", "debug", "trace"][usize::from(cli.verbose).min(3)];
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: worker pool: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
