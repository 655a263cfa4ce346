//! Image IO, file formats and the `dpatn` command line on top of
//! [`dpatn_core`].

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod gmm_file;
pub mod io;
pub mod lock;
pub mod manifest;
pub mod model_file;
pub mod report;

use std::fs;
use std::path::Path;

pub use error::{Error, Result};

/// Writes `text` to `path`, creating parent directories.
pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
