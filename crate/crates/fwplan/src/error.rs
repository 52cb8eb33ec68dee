use std::io;
use std::path::PathBuf;

/// Problem with the contents of a text file.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("unsupported format version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
}

impl FormatError {
    pub(crate) fn line(line: usize, message: impl Into<String>) -> Self {
        FormatError::Line { line, message: message.into() }
    }

    pub(crate) fn field(field: impl Into<String>, message: impl ToString) -> Self {
        FormatError::Field { field: field.into(), message: message.to_string() }
    }
}

/// A format error or I/O failure tied to a file path.
#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<String, FileError> {
    std::fs::read_to_string(path).map_err(|source| FileError::Io { path: path.to_owned(), source })
}

pub(crate) fn in_file<T>(path: &std::path::Path, r: Result<T, FormatError>) -> Result<T, FileError> {
    r.map_err(|source| FileError::Format { path: path.to_owned(), source })
}
