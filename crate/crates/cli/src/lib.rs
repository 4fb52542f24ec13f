//! The `qpmc` command-line tool: configuration, dispatch and run records.
//!
//! Exit codes: 0 success, 1 I/O or internal failure, 2 configuration error,
//! 3 degenerate geometry, 4 spectral gap collapse, 5 solver divergence,
//! 6 failed verification gate.

pub mod commands;
pub mod config;
pub mod record;

use std::io::Write;

use qpmc_core::QpmcError;

pub use config::{parse_config, CommandKind, RunConfig};
pub use record::RunRecord;

pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GEOMETRY: i32 = 3;
pub const EXIT_GAP_COLLAPSE: i32 = 4;
pub const EXIT_DIVERGENCE: i32 = 5;
pub const EXIT_VERIFICATION: i32 = 6;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(clap::Error),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] QpmcError),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(e) if !e.use_stderr() => 0,
            CliError::Usage(_) | CliError::Config(_) => EXIT_CONFIG,
            CliError::Verification(_) => EXIT_VERIFICATION,
            CliError::Io(_) => EXIT_IO,
            CliError::Core(e) => match e {
                QpmcError::InvalidParameter { .. }
                | QpmcError::UnknownMetric(_)
                | QpmcError::InvalidInput(_)
                | QpmcError::OutOfBox(_)
                | QpmcError::Json(_) => EXIT_CONFIG,
                QpmcError::DegenerateMetric { .. } | QpmcError::FrameDegeneracy { .. } => EXIT_GEOMETRY,
                QpmcError::GapCollapse { .. } => EXIT_GAP_COLLAPSE,
                QpmcError::Divergence { .. }
                | QpmcError::MaxIterations { .. }
                | QpmcError::SweepAborted { .. } => EXIT_DIVERGENCE,
                QpmcError::NotQpmc { .. } => EXIT_VERIFICATION,
                QpmcError::EigenFailure(_) | QpmcError::Io(_) => EXIT_IO,
            },
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("QPMC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("QPMC_THREADS must be a positive integer, got `{v}`")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs the tool on an argument vector and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cfg = match init_threads().and_then(|_| parse_config(args)) {
        Ok(c) => c,
        Err(CliError::Usage(e)) => {
            let _ = e.print();
            return CliError::Usage(e).exit_code();
        }
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let record = commands::execute(&cfg);
    if let Err(e) = record::emit(&record, cfg.out.as_deref()) {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    if let Some(msg) = &record.status.error {
        eprintln!("error: {msg}");
    }
    let _ = std::io::stderr().flush();
    record.status.exit_code
}
