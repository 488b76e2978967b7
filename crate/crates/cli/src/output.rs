//! Outputs appear whole or not at all: everything is written under a
//! temporary name next to the target and renamed into place.

use std::path::Path;

use crate::CliError;

fn parent_of(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = parent_of(path);
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let tmp = tempfile::Builder::new()
        .prefix(".audible-")
        .tempfile_in(dir)
        .map_err(|e| CliError::io(dir, e))?;
    std::fs::write(tmp.path(), bytes).map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Fills a fresh directory through `fill`, then moves it to `target`.
/// An existing `target` must be an empty directory.
pub fn write_dir(target: &Path, fill: impl FnOnce(&Path) -> Result<(), CliError>) -> Result<(), CliError> {
    if target.exists() {
        let empty = std::fs::read_dir(target)
            .map_err(|e| CliError::io(target, e))?
            .next()
            .is_none();
        if !empty {
            return Err(CliError::Data(format!("{} exists and is not empty", target.display())));
        }
    }
    let dir = parent_of(target);
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let tmp = tempfile::Builder::new()
        .prefix(".audible-")
        .tempdir_in(dir)
        .map_err(|e| CliError::io(dir, e))?;
    fill(tmp.path())?;
    if target.exists() {
        std::fs::remove_dir(target).map_err(|e| CliError::io(target, e))?;
    }
    std::fs::rename(tmp.path(), target).map_err(|e| CliError::io(target, e))?;
    Ok(())
}
