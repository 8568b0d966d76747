use std::path::PathBuf;

/// Errors surfaced by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("variant error: {0}")]
    Variant(String),

    #[error("parse error in {path} at line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("version mismatch in {path}: expected {expected}, found {found}")]
    Version { path: PathBuf, expected: String, found: String },

    #[error("training diverged at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code used by the command-line front end:
    /// 1 for usage/config problems, 2 for data problems, 3 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Variant(_) => 1,
            Error::Training { .. } => 3,
            Error::Fold { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(Error::config("x").exit_code(), 1);
        assert_eq!(Error::Variant("x".into()).exit_code(), 1);
        assert_eq!(Error::data("x").exit_code(), 2);
        assert_eq!(Error::dim("x").exit_code(), 2);
        assert_eq!(Error::Training { epoch: 3, msg: "nan".into() }.exit_code(), 3);
        let wrapped = Error::Fold { fold: 1, source: Box::new(Error::Training { epoch: 0, msg: "inf".into() }) };
        assert_eq!(wrapped.exit_code(), 3);
        assert!(wrapped.to_string().starts_with("fold 1: training diverged at epoch 0"));
    }
}
