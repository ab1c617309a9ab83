mod commands;
mod error;
mod spec;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::Report;
use crate::error::{CliError, CliResult};
use crate::spec::Loaded;

/// Batch experiments on finite-memory learning mechanisms.
#[derive(Parser)]
#[command(name = "memlearn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a signal model for full support and identifiability.
    Validate(Common),
    /// Evaluate a mechanism: utility, loss, occupancy and diagnostics.
    Eval(Common),
    /// Loss over a range of branch lengths, slip probabilities or memory sizes.
    Sweep(Common),
    /// Per-state probability that two agents act differently.
    Disagree(Common),
    /// Tables from the closed-form benchmarks.
    ClosedForms(Common),
    /// Enumerate or anneal for a low-loss mechanism.
    Search(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    let path = dir.join(name);
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut file = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    file.write_all(contents.as_bytes())
        .and_then(|_| file.sync_all())
        .map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn emit(stem: &str, args: &Common, report: &Report) -> CliResult<PathBuf> {
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let main = match args.format {
        Format::Json => {
            let mut text =
                serde_json::to_string_pretty(&report.json).expect("JSON values always serialize");
            text.push('\n');
            write_atomic(&args.out, &format!("{stem}.json"), &text)?
        }
        Format::Csv => write_atomic(&args.out, &format!("{stem}.csv"), &report.csv)?,
    };
    for (name, contents) in &report.extra {
        write_atomic(&args.out, name, contents)?;
    }
    Ok(main)
}

fn run(cli: Cli) -> CliResult<()> {
    let (name, stem, args) = match &cli.command {
        Command::Validate(a) => ("validate", "validate", a),
        Command::Eval(a) => ("eval", "eval", a),
        Command::Sweep(a) => ("sweep", "sweep", a),
        Command::Disagree(a) => ("disagree", "disagree", a),
        Command::ClosedForms(a) => ("closed_forms", "closed_forms", a),
        Command::Search(a) => ("search", "search", a),
    };
    let spec = Loaded::open(&args.spec)?;
    spec.check_command(name)?;
    let report = match &cli.command {
        Command::Validate(_) => commands::validate_cmd(&spec)?,
        Command::Eval(a) => commands::eval_cmd(&spec, a.seed)?,
        Command::Sweep(_) => commands::sweep_cmd(&spec)?,
        Command::Disagree(_) => commands::disagree_cmd(&spec)?,
        Command::ClosedForms(_) => commands::closed_forms_cmd(&spec)?,
        Command::Search(a) => commands::search_cmd(&spec, a.seed)?,
    };
    let path = emit(stem, args, &report)?;
    println!("{} -> {}", report.summary, path.display());
    match report.failure {
        Some(msg) => Err(CliError::Failed(msg)),
        None => Ok(()),
    }
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
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
