use std::path::{Path, PathBuf};

use kandos_core::KanError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] KanError),
    #[error("{0}")]
    Usage(String),
    /// An `--assert-*` gate was not met.
    #[error("{0}")]
    Assertion(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Usage(_) => "E_CONFIG",
            CliError::Assertion(_) => "E_ASSERT",
            CliError::Io { .. } => "E_IO",
        }
    }

    /// 2 for environment and I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_environmental() => 2,
            CliError::Io { .. } => 2,
            _ => 1,
        }
    }

    /// `error[CODE]: message` on one line.
    pub fn report_line(&self) -> String {
        let text = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {}", self.code(), text)
    }
}
