use rams_core::robustness::RobustnessError;
use rams_core::tree::TreeError;
use rams_core::{DispatchError, ModelError, ScenarioError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid input.
    #[error("{0}")]
    Invalid(String),
    /// The input is well formed but no successful execution exists, or a
    /// size cap was hit.
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Infeasible(_) => 3,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::CapExceeded { .. } | ScenarioError::Continuous(_) => CliError::Infeasible(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<DispatchError> for CliError {
    fn from(e: DispatchError) -> Self {
        match e {
            DispatchError::Scenario(s) => s.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<RobustnessError> for CliError {
    fn from(e: RobustnessError) -> Self {
        match e {
            RobustnessError::Dispatch(d) => d.into(),
            RobustnessError::Scenario(s) => s.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<TreeError> for CliError {
    fn from(e: TreeError) -> Self {
        match e {
            TreeError::CapExceeded { .. } | TreeError::DepthExceeded { .. } => CliError::Infeasible(e.to_string()),
            TreeError::Dispatch(d) => d.into(),
            TreeError::Scenario(s) => s.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}
