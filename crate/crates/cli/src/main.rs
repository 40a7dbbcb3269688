//! `cpfs`: command-line front end.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime error (budget
//! overflow, I/O), 3 a failed check in `verify`.

mod commands;
mod settings;

use std::io::Write;
use std::process::ExitCode;

use settings::{command, specs, Settings};

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Runtime(String),
    Core(cpfs_core::Error),
}

impl From<cpfs_core::Error> for CliError {
    fn from(e: cpfs_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Core(e) if e.is_runtime() => 2,
            CliError::Core(_) => 1,
        }
    }
}

fn header(s: &Settings, notes: &[String]) -> String {
    let mut h = format!(
        "# cpfs {}\n# command: {}\n# seed: {}\n# config: {}\n",
        env!("CARGO_PKG_VERSION"),
        s.command,
        s.raw("seed").unwrap_or("0"),
        s.echo()
    );
    for n in notes {
        h.push_str(&format!("# {n}\n"));
    }
    h
}

fn dispatch() -> Result<bool, CliError> {
    let m = match command().try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return Ok(true);
        }
        Err(e) => {
            let _ = e.print();
            return Err(CliError::Invalid("bad command line".into()));
        }
    };
    let (name, sub) = m.subcommand().expect("a subcommand is required");
    let spec = specs().into_iter().find(|s| s.name == name).expect("every subcommand has a spec");
    let settings = Settings::resolve(&spec, sub, std::env::var("CPFS_SEED").ok())?;
    let out = commands::run(&settings)?;
    let mut bytes = header(&settings, &out.notes).into_bytes();
    bytes.extend_from_slice(&out.body);
    let written = match settings.raw("out") {
        Some(path) => std::fs::write(path, &bytes),
        None => std::io::stdout().lock().write_all(&bytes),
    };
    written.map_err(|e| CliError::Runtime(format!("cannot write output: {e}")))?;
    Ok(!out.failed)
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("cpfs: some checks failed");
            ExitCode::from(3)
        }
        Err(e) => {
            if !matches!(&e, CliError::Invalid(m) if m == "bad command line") {
                eprintln!("cpfs: {e}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
