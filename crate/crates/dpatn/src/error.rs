use std::path::{Path, PathBuf};

/// Everything a command can fail with. Only [`Error::CheckFailed`] maps to
/// exit code 1; the rest are usage or I/O problems and map to 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: unsupported image format", path.display())]
    UnsupportedFormat { path: PathBuf },
    #[error("{}: truncated or corrupt file: {detail}", path.display())]
    Corrupt { path: PathBuf, detail: String },
    #[error("{}: {detail}", path.display())]
    Parse { path: PathBuf, detail: String },
    #[error("output directory {} is in use by another run (remove {} if stale)", dir.display(), lock.display())]
    Locked { dir: PathBuf, lock: PathBuf },
    #[error(transparent)]
    Core(#[from] dpatn_core::Error),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::CheckFailed(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, detail: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }
}
