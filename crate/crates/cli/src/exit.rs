//! Exit codes: 1 other, 2 invalid input, 3 estimation failure, 4 serve setup.

use pmcausal_core::Error as CoreError;

pub const OTHER: u8 = 1;
pub const INPUT: u8 = 2;
pub const ESTIMATION: u8 = 3;
pub const SERVE: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }

    pub fn msg(code: u8, message: impl std::fmt::Display) -> Self {
        Failure::new(code, anyhow::anyhow!("{message}"))
    }
}

/// Input problems are the caller's to fix; everything else the engine
/// raises is an estimation failure.
pub fn core_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Schema(_) | CoreError::Validation { .. } | CoreError::Load(_) | CoreError::Io(_) => INPUT,
        _ => ESTIMATION,
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure::new(core_code(&e), e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(OTHER, e)
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;
