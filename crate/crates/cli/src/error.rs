use sbdnet_core::lattice::LatticeError;
use sbdnet_core::sim::SimError;

/// Errors mapped onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid configuration or arguments.
    #[error("configuration error: {0}")]
    Schema(String),
    /// A solver, integrator or quadrature routine failed.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<sbdnet_core::Error> for CliError {
    fn from(e: sbdnet_core::Error) -> Self {
        use sbdnet_core::Error as E;
        match e {
            E::Config(_) | E::Domain(_) => CliError::Schema(e.to_string()),
            E::NumericalFailure { .. } | E::NoConvergence { .. } | E::DegenerateInput(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Invalid(inner) => inner.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<LatticeError> for CliError {
    fn from(e: LatticeError) -> Self {
        match e {
            LatticeError::Invalid(inner) => inner.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.into())
    }
}
