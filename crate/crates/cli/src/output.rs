use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use clap::ValueEnum;
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| sing_core::Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| sing_core::Error::io(path, e))?;
    Ok(BufWriter::new(file))
}

pub fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| sing_core::Error::io(path, e))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(sing_core::Error::from)?;
    w.write_all(b"\n").map_err(|e| sing_core::Error::io(path, e))?;
    finish(w, path)
}

/// Every input path must exist before any compute starts.
pub fn require_dirs(paths: &[&Path]) -> Result<(), CliError> {
    for p in paths {
        if !p.is_dir() {
            return Err(CliError::Usage(format!("not a directory: {}", p.display())));
        }
    }
    Ok(())
}
