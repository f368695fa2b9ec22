use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use tfsparse::experiments::{emit_plot_data, list_presets, run, ExperimentConfig, Report, Timings};
use tfsparse::Error;

/// Run sparse-domination experiments from JSON configs.
#[derive(Parser, Debug)]
#[command(name = "tfsparse", version)]
struct Cli {
    /// Print the commands and presets a config can reference, then exit.
    #[arg(long)]
    list_presets: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the samples per unit length.
        #[arg(long)]
        resolution: Option<usize>,
        /// Write report.json, timings.json and CSV tables here instead of printing the report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Enable exponential-cost exact modes.
        #[arg(long)]
        exact_oracles: bool,
    },
}

/// Print to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout(), "{text}");
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidArgument(_) => "invalid_argument",
        Error::Precondition(_) => "precondition",
        Error::Packing { .. } => "packing",
        Error::NotSparse { .. } => "not_sparse",
        Error::Undefined(_) => "undefined",
        Error::Infeasible(_) => "infeasible",
        Error::Falsified(_) => "falsified",
        Error::TooLarge { .. } => "too_large",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

/// Print a failure record to stdout, and into `out` when given.
fn fail(e: &Error, stage: &str, out: Option<&Path>) -> ExitCode {
    let record = json!({
        "status": "error",
        "stage": stage,
        "kind": error_kind(e),
        "message": e.to_string(),
    });
    let text = serde_json::to_string_pretty(&record).expect("json");
    emit(&text);
    if let Some(dir) = out {
        let _ = fs::create_dir_all(dir).and_then(|_| fs::write(dir.join("failure.json"), &text));
    }
    eprintln!("tfsparse: {e}");
    let code = if matches!(e, Error::Config(_)) { EXIT_CONFIG } else { EXIT_FAIL };
    ExitCode::from(code)
}

fn load(path: &Path) -> Result<ExperimentConfig, Error> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text)
}

fn write_outputs(dir: &Path, report: &Report, timings: &Timings) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), report.to_json())?;
    fs::write(dir.join("timings.json"), serde_json::to_string_pretty(timings)?)?;
    for name in report.tables.keys() {
        fs::write(dir.join(format!("{name}.csv")), emit_plot_data(report, name)?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list_presets {
        emit(&serde_json::to_string_pretty(&list_presets()).expect("json"));
        return ExitCode::SUCCESS;
    }
    let Some(Command::Run { config, seed, resolution, out, exact_oracles }) = cli.command else {
        eprintln!("tfsparse: nothing to do; try `tfsparse run <config.json>` or `--list-presets`");
        return ExitCode::from(EXIT_CONFIG);
    };

    let mut cfg = match load(&config) {
        Ok(c) => c,
        Err(e) => return fail(&e, "config", out.as_deref()),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = resolution {
        cfg.resolution = r;
    }
    cfg.exact_oracles |= exact_oracles;
    let out = out.or_else(|| cfg.out.clone());
    if let Err(e) = cfg.validate() {
        return fail(&e, "config", out.as_deref());
    }

    let (report, timings) = match run(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(&e, "run", out.as_deref()),
    };
    match &out {
        Some(dir) => {
            if let Err(e) = write_outputs(dir, &report, &timings) {
                return fail(&e, "output", Some(dir));
            }
        }
        None => emit(&report.to_json()),
    }
    eprintln!(
        "{}: {} cases, {} failed, {:.2}s, digest {}",
        report.command,
        report.summary.cases,
        report.summary.failures,
        timings.total_seconds,
        &report.digest[..16]
    );
    if report.pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    }
}
