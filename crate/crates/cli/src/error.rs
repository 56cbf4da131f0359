use dcsm::DcsmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    /// 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<DcsmError> for CliError {
    fn from(e: DcsmError) -> Self {
        let msg = e.to_string();
        match e {
            DcsmError::Config(_) => CliError::Usage(msg),
            DcsmError::NonFinite { .. } | DcsmError::NoBracket { .. } => CliError::Numeric(msg),
            _ => CliError::Data(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taxonomy() {
        assert_eq!(CliError::from(DcsmError::Config("x".into())).exit_code(), 1);
        assert_eq!(CliError::from(DcsmError::NoEvents).exit_code(), 2);
        assert_eq!(
            CliError::from(DcsmError::NonFinite { epoch: 4 }).exit_code(),
            3
        );
        assert!(CliError::from(DcsmError::NonFinite { epoch: 4 })
            .to_string()
            .contains("epoch 4"));
    }
}
