//! Thin CLI over the pipeline: `kgpar <subcommand> --config <path>`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kgpar::pipeline::{
    build_hg_cmd, build_kg_cmd, eval_cmd, gen_synth, inspect_cmd, load_run_config, sweep_cmd,
    train_cmd, PipelineError, SweepAxis,
};

#[derive(Parser)]
#[command(name = "kgpar", about = "Knowledge-graph-guided hypergraph attribute recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration JSON.
    #[arg(long, global = true, default_value = "run.json")]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset into <out>/dataset/.
    GenSynth,
    /// Build the knowledge graph JSON from the training split.
    BuildKg,
    /// Dump local/global hypergraphs for inspection.
    BuildHg,
    /// Train and write checkpoint plus training log.
    Train,
    /// Evaluate the checkpoint on the held-out split.
    Eval,
    /// Print a human-readable summary of dataset, graph, and hypergraphs.
    Inspect,
    /// Run an ablation sweep (one train+eval per axis value).
    Sweep {
        /// Axis override: variant | k | tau | regional.
        #[arg(long)]
        axis: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = load_run_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    let checked = kgpar::checked_mode();

    match cli.command {
        Command::GenSynth => {
            let path = gen_synth(&config)?;
            println!("wrote {}", path.display());
        }
        Command::BuildKg => {
            let path = build_kg_cmd(&config)?;
            println!("wrote {}", path.display());
        }
        Command::BuildHg => {
            for path in build_hg_cmd(&config)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Train => {
            let path = train_cmd(&config, checked)?;
            println!("wrote {}", path.display());
        }
        Command::Eval => {
            let path = eval_cmd(&config, checked)?;
            println!("wrote {}", path.display());
        }
        Command::Inspect => {
            print!("{}", inspect_cmd(&config)?);
        }
        Command::Sweep { axis } => {
            if let Some(axis) = axis {
                config.sweep_axis = Some(axis.parse::<SweepAxis>()?);
            }
            let path = sweep_cmd(&config, checked)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
