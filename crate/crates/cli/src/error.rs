use llcsnap_core::shutter::ShutterError;
use llcsnap_core::workload::WorkloadError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("corrupt data: {0}")]
    Corrupt(String),
    #[error("invariant failure: {0}")]
    Invariant(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Failed(_) => 1,
            Self::Config(_) => 2,
            Self::Corrupt(_) => 3,
            Self::Invariant(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::Failed(format!("{}: {e}", path.display()))
    }
}

impl From<WorkloadError> for CliError {
    fn from(e: WorkloadError) -> Self {
        match e {
            WorkloadError::Capacity { .. } | WorkloadError::Config(_) | WorkloadError::Program(_) => {
                Self::Config(e.to_string())
            }
            other => Self::Failed(other.to_string()),
        }
    }
}

impl From<ShutterError> for CliError {
    fn from(e: ShutterError) -> Self {
        match e {
            ShutterError::Corrupt { .. } | ShutterError::Format { .. } | ShutterError::Layout { .. } => {
                Self::Corrupt(e.to_string())
            }
            ShutterError::Capacity { .. } => Self::Config(e.to_string()),
            other => Self::Failed(other.to_string()),
        }
    }
}
