use thiserror::Error;

use crate::archive::ArchiveError;
use crate::autodiff::AutodiffError;
use crate::env::EnvError;
use crate::regulator::RegulatorError;
use crate::replay::ReplayError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Regulator(#[from] RegulatorError),
    #[error("numerical abort in {stage}: {detail}")]
    Numerical { stage: &'static str, detail: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by non-finite training signals.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical { .. } | Error::Autodiff(AutodiffError::NonFiniteGradient { .. })
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
