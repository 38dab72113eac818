//! `rnnpool` — analyze, cost, run, train, and quantize pooling-operator nets.

use clap::{Parser, Subcommand};
use rnnpool_cli::*;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rnnpool", version, about = "Memory analysis and execution of pooling-operator CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Peak activation memory under a chosen accounting convention.
    Analyze {
        /// Model JSON file or preset:NAME.
        model: String,
        #[arg(long, default_value = "layerbylayer", value_parser = ["lower", "rowwise", "layerbylayer"])]
        convention: String,
        #[arg(long, default_value = "f32", value_parser = ["f32", "i8"], env = "RNNPOOL_DTYPE")]
        dtype: String,
        #[arg(long)]
        json: bool,
    },
    /// Multiply-add and parameter counts.
    Madds {
        model: String,
        #[arg(long)]
        json: bool,
    },
    /// Execute a net on a raw float32 input and report the arena log.
    Run {
        model: String,
        /// Raw little-endian float32 map with a 12-byte u32 (H, W, C) header.
        input: PathBuf,
        #[arg(long, default_value = "naive", value_parser = ["naive", "stream"])]
        schedule: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Finite-difference check of the pooling-operator backward pass.
    Gradcheck {
        #[arg(long, default_value_t = 2)]
        h1: usize,
        #[arg(long, default_value_t = 2)]
        h2: usize,
        #[arg(long, default_value_t = 3)]
        patch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Train the single-operator probe on a synthetic task.
    Probe {
        #[arg(value_parser = ["lines-multiclass", "lines-multilabel", "shapes-multilabel"])]
        task: String,
        #[arg(long, default_value_t = 32)]
        h1: usize,
        #[arg(long, default_value_t = 32)]
        h2: usize,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 900)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Quantize a net's weights to int8 and write them to a file.
    Quantize {
        model: String,
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Exhaustive minimum-peak search over a small scheduling DAG.
    Enumerate {
        dag: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// List the built-in architecture presets.
    Presets {
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Analyze { model, convention, dtype, json } => cmd_analyze(model, convention, dtype, *json),
        Cmd::Madds { model, json } => cmd_madds(model, *json),
        Cmd::Run { model, input, schedule, seed, json } => cmd_run(model, input, schedule, *seed, *json),
        Cmd::Gradcheck { h1, h2, patch, seed, json } => cmd_gradcheck(*h1, *h2, *patch, *seed, *json),
        Cmd::Probe { task, h1, h2, epochs, count, size, seed, json } => {
            cmd_probe(task, *h1, *h2, *epochs, *count, *size, *seed, *json)
        }
        Cmd::Quantize { model, out, seed, json } => cmd_quantize(model, out, *seed, *json),
        Cmd::Enumerate { dag, json } => cmd_enumerate(dag, *json),
        Cmd::Presets { json } => cmd_presets(*json),
    };
    match result {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
