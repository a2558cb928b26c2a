//! Command-line surface: world generation, training, evaluation, attention
//! tracing and the gradient-check harness.
//!
//! Exit codes: 0 success, 1 runtime/validation failure, 2 usage error.
//! Every file-producing command writes a run manifest before doing work,
//! and removes partial outputs when it fails.

mod commands;
pub mod gradsuite;

pub use commands::{
    cmd_eval, cmd_gen_world, cmd_gradcheck, cmd_trace, cmd_train, EvalArgs, GenWorldArgs,
    GradcheckArgs, TraceArgs, TrainArgs,
};

use clap::{Parser, Subcommand};
use serde::Serialize;

/// Worker-thread cap from SYNTAXNAV_THREADS (default 1).
pub fn worker_threads() -> usize {
    std::env::var("SYNTAXNAV_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Reproducibility record written before a command does any work.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub build: String,
    pub seed: u64,
    pub threads: usize,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub format_versions: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            format: "syntaxnav-manifest/1".to_string(),
            command: command.to_string(),
            build: format!("{}-{}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            seed,
            threads: worker_threads(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            format_versions: serde_json::json!({
                "world": crate::world::WORLD_FORMAT_NAME,
                "episodes": crate::world::EPISODE_FORMAT_NAME,
                "checkpoint": "SNAVCKP1/1",
                "report": "syntaxnav-report/1",
                "trace": "syntaxnav-trace/1",
                "log": "syntaxnav-trainlog/1",
            }),
        }
    }

    pub fn write(&self, path: &std::path::Path) -> Result<(), std::io::Error> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, serde_json::to_string_pretty(self).expect("manifest json"))
    }
}

#[derive(Parser)]
#[command(
    name = "syntaxnav",
    version,
    about = "Syntax-aware instruction-following navigation on synthetic viewpoint graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a world artifact (layouts + episode triples).
    GenWorld(GenWorldArgs),
    /// Train an agent on a generated world.
    Train(TrainArgs),
    /// Evaluate a checkpoint with greedy rollouts.
    Eval(EvalArgs),
    /// Export per-step attention traces for one episode.
    Trace(TraceArgs),
    /// Finite-difference gradient verification of every submodule.
    Gradcheck(GradcheckArgs),
}

/// Parses argv and dispatches. Returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap reports usage problems with exit code 2 and help/version
            // with 0.
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::GenWorld(args) => cmd_gen_world(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Trace(args) => cmd_trace(&args),
        Command::Gradcheck(args) => cmd_gradcheck(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
