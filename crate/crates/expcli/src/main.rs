//! Experiment driver: each subcommand writes one CSV (and optionally an SVG
//! plot) into the output directory.
//!
//! Exit status is 0 on success, 2 for configuration errors and 3 when a run
//! fails numerically or a verification check does not hold. Output from
//! completed runs is written in every case; failures are listed in
//! `<stem>.failures.txt` next to the CSV.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{read_config, Command, Format, Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "expcli",
    version,
    about = "Local decoupling transformation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Overrides,
    /// File of `key = value` lines; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

const CONFIG_ERROR: u8 = 2;
const NUMERICAL_FAILURE: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(CONFIG_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let file = match cli.config.as_deref().map(read_config).transpose() {
        Ok(file) => file.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    let cfg = match RunConfig::resolve(cli.command, cli.flags.over(file)) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    if let Err(e) = std::fs::create_dir_all(&cfg.out) {
        eprintln!("error: cannot create {}: {e}", cfg.out.display());
        return ExitCode::from(CONFIG_ERROR);
    }

    let report = match commands::run(&cfg) {
        Ok(report) => report,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(NUMERICAL_FAILURE);
        }
    };
    let csv_name = format!("{}.csv", report.stem);
    let mut written = vec![output::write_file(
        &cfg.out,
        &csv_name,
        &report.table.to_csv(),
    )];
    if cfg.format == Format::CsvSvg {
        let svg_name = format!("{}.svg", report.stem);
        written.push(output::write_file(
            &cfg.out,
            &svg_name,
            &report.plot.to_svg(),
        ));
    }
    let problems: Vec<&String> = report.failures.iter().chain(&report.violations).collect();
    let marker = cfg.out.join(format!("{}.failures.txt", report.stem));
    if problems.is_empty() {
        if marker.exists() {
            written.push(std::fs::remove_file(&marker));
        }
    } else {
        let text: String = problems.iter().map(|p| format!("{p}\n")).collect();
        written.push(std::fs::write(&marker, text));
    }
    if let Some(Err(e)) = written.into_iter().find(Result::is_err) {
        eprintln!("error: writing output in {}: {e}", cfg.out.display());
        return ExitCode::from(NUMERICAL_FAILURE);
    }

    for p in &problems {
        eprintln!("failure: {p}");
    }
    eprintln!(
        "wrote {} rows to {}",
        report.table.rows.len(),
        cfg.out.join(&csv_name).display()
    );
    if problems.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(NUMERICAL_FAILURE)
    }
}
