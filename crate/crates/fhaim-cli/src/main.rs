use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use fhaim_cli::datagen;
use fhaim_cli::pipeline::{run_pipeline, EmitKind, RunRequest, TransportKind};
use fhaim_core::he::BackendKind;
use fhaim_core::protocols::NormVariant;

#[derive(Parser)]
#[command(name = "fhaim", about = "Private synthetic tabular data over encrypted marginals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full workflow on a dataset and emit artifacts.
    Run(RunArgs),
    /// Generate the surrogate evaluation datasets.
    GenData(GenArgs),
}

fn parse_epsilon(s: &str) -> Result<f64, String> {
    if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
        return Ok(f64::INFINITY);
    }
    let v: f64 = s.parse().map_err(|_| format!("invalid epsilon '{s}'"))?;
    if v <= 0.0 {
        return Err("epsilon must be positive or 'inf'".into());
    }
    Ok(v)
}

#[derive(Args)]
struct RunArgs {
    /// CSV table with a header row
    #[arg(long)]
    dataset: PathBuf,
    /// domain JSON file
    #[arg(long)]
    domain: PathBuf,
    /// privacy budget; 'inf' disables noise
    #[arg(long, value_parser = parse_epsilon)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-9)]
    delta: f64,
    #[arg(long, value_enum, default_value = "l2sq")]
    norm: NormArg,
    #[arg(long, value_enum, default_value = "exact")]
    backend: BackendArg,
    /// override the T = 16d round cap
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "inproc")]
    transport: TransportKind,
    #[arg(long, value_enum, default_value = "all")]
    emit: EmitKind,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum NormArg {
    L2sq,
    L1poly,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum BackendArg {
    Exact,
    Noisy,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "data")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::GenData(args) => gen_data(args),
    };
    if let Err(e) = result {
        // machine-readable error record on stderr
        eprintln!("{}", json!({ "error": e.to_string() }));
        std::process::exit(2);
    }
}

fn run(args: RunArgs) -> Result<(), Box<dyn std::error::Error>> {
    let req = RunRequest {
        dataset: args.dataset,
        domain: args.domain,
        epsilon: args.epsilon,
        delta: args.delta,
        norm: match args.norm {
            NormArg::L2sq => NormVariant::L2sq,
            NormArg::L1poly => NormVariant::L1poly,
        },
        backend: match args.backend {
            BackendArg::Exact => BackendKind::Exact,
            BackendArg::Noisy => BackendKind::Noisy,
        },
        rounds: args.rounds,
        seed: args.seed,
        out_dir: args.out_dir,
        transport: args.transport,
        emit: args.emit,
    };
    let out = run_pipeline(&req)?;
    println!("{}", out.report.to_json());
    Ok(())
}

fn gen_data(args: GenArgs) -> Result<(), Box<dyn std::error::Error>> {
    for s in datagen::all(args.seed) {
        let (csv, domain) = datagen::write_files(&s, &args.out_dir)?;
        println!("{}: {} + {}", s.name, csv.display(), domain.display());
    }
    Ok(())
}
