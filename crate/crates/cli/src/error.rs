use thiserror::Error;

/// Failures surfaced by the command-line front end, each with an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("fit did not converge: {0}")]
    NonConvergence(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::NonConvergence(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<spin_echo::Error> for CliError {
    fn from(e: spin_echo::Error) -> Self {
        use spin_echo::Error as E;
        match e {
            E::InvalidParameter { .. } => CliError::Config(e.to_string()),
            E::Fit(_) => CliError::NonConvergence(e.to_string()),
            E::DegenerateGeometry(_) | E::Infeasible(_) | E::Sequencing(_) | E::UndefinedEstimate(_) => {
                CliError::Infeasible(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
