mod args;
mod commands;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::Parser;
use mfld_core::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

use args::Cli;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Compute(Error),
    Io(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            // bad inputs, not failed computations
            Error::InvalidParameter(_)
            | Error::InvalidTable(_)
            | Error::Json(_)
            | Error::DimensionTooLarge { .. }
            | Error::DimensionMismatch { .. } => CliError::Usage(e.to_string()),
            e => CliError::Compute(e),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Compute(e) => write!(f, "error: {e}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Compute(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'static str,
    params: &'a args::Command,
    argv: Vec<String>,
    seed: Option<u64>,
    version: &'static str,
    wall_time_s: f64,
    output_sha256: String,
    side_files: Vec<SideFile>,
    failed_check: bool,
}

#[derive(Serialize)]
struct SideFile {
    path: PathBuf,
    sha256: String,
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &PathBuf, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    let start = Instant::now();
    let out = commands::dispatch(&cli.command)?;
    let wall = start.elapsed().as_secs_f64();

    match &cli.out {
        Some(p) => write_file(p, &out.body)?,
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(out.body.as_bytes()).map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    let mut side_files = Vec::new();
    for (p, body) in &out.side_files {
        write_file(p, body)?;
        side_files.push(SideFile { path: p.clone(), sha256: digest(body.as_bytes()) });
    }
    let manifest = RunManifest {
        subcommand: cli.command.name(),
        params: &cli.command,
        argv: std::env::args().collect(),
        seed: cli.command.seed(),
        version: env!("CARGO_PKG_VERSION"),
        wall_time_s: wall,
        output_sha256: digest(out.body.as_bytes()),
        side_files,
        failed_check: out.failed,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let target = cli.manifest.clone().or_else(|| {
        cli.out.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    });
    match target {
        Some(p) => write_file(&p, &(text + "\n"))?,
        None => eprintln!("{text}"),
    }
    Ok(!out.failed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
