//! Run-directory conventions: resolved-config echo, completion markers,
//! idempotent reruns.

use crate::config::ExperimentConfig;
use cocon::{CoconError, Result};
use std::path::{Path, PathBuf};

/// Resolve the run directory: absolute paths win, otherwise relative to
/// `COCON_RUN_DIR` (or the working directory when unset).
pub fn resolve_run_dir(run: &Path) -> PathBuf {
    if run.is_absolute() {
        return run.to_path_buf();
    }
    match std::env::var_os("COCON_RUN_DIR") {
        Some(root) => PathBuf::from(root).join(run),
        None => run.to_path_buf(),
    }
}

/// Prepare the run directory and echo the resolved config into it. Errors if
/// a different config is already resident (use a fresh directory instead).
pub fn init_run_dir(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let echo = dir.join("config.toml");
    let text = config.to_toml();
    if echo.exists() {
        let existing = std::fs::read_to_string(&echo)?;
        if existing != text {
            return Err(CoconError::Config(format!(
                "run dir {dir:?} holds a different config; use --force or a new directory"
            )));
        }
    } else {
        std::fs::write(&echo, text)?;
    }
    Ok(())
}

fn marker_path(dir: &Path, tag: &str) -> PathBuf {
    dir.join(".done").join(tag)
}

/// True when `tag` already completed in this run dir (and `--force` is off).
pub fn already_done(dir: &Path, tag: &str, force: bool) -> bool {
    !force && marker_path(dir, tag).exists()
}

pub fn mark_done(dir: &Path, tag: &str) -> Result<()> {
    let path = marker_path(dir, tag);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, "ok\n")?;
    Ok(())
}

pub fn clear_marker(dir: &Path, tag: &str) {
    let _ = std::fs::remove_file(marker_path(dir, tag));
}
