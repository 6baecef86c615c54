//! Batch front end for worst-case ensemble control experiments: JSON
//! configuration in, CSV/JSON (and optional SVG) artifacts out.
//!
//! Exit codes: 0 success, 1 runtime or numerical failure, 2 configuration
//! error.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::RunConfig;
pub use error::{CliError, CliResult};

/// Environment variable that caps the worker thread count.
pub const THREADS_ENV: &str = "MINIMAX_THREADS";

/// Applies [`THREADS_ENV`] to the global thread pool, if set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "{THREADS_ENV} must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}
