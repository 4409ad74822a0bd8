use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong in this crate.
///
/// [`Error::is_domain`] separates malformed input from well-formed input the
/// model rejects (instability, non-unique equilibria, size limits).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("unknown resource `{0}`")]
    UnknownResource(String),

    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("subset enumeration over {size} resources exceeds the cap of {cap}")]
    EnumerationCap { size: usize, cap: usize },

    #[error("stability condition violated on {} cut(s): {}", violated.len(), fmt_sets(violated))]
    Unstable { violated: Vec<Vec<String>> },

    #[error(
        "equilibrium is not unique: users {{{}}} exactly exhaust resources {{{}}}",
        users.join(","),
        resources.join(",")
    )]
    NonUnique {
        users: Vec<String>,
        resources: Vec<String>,
    },

    #[error("cannot construct allocation: {0}")]
    Construction(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("internal consistency failure: {0}")]
    Internal(String),
}

impl Error {
    /// True for errors caused by the model rejecting well-formed input.
    pub fn is_domain(&self) -> bool {
        matches!(
            self,
            Error::EnumerationCap { .. }
                | Error::Unstable { .. }
                | Error::NonUnique { .. }
                | Error::Construction(_)
                | Error::Convergence { .. }
                | Error::Numeric(_)
        )
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::UnknownResource(_) => "unknown_resource",
            Error::UnknownUser(_) => "unknown_user",
            Error::EnumerationCap { .. } => "enumeration_cap",
            Error::Unstable { .. } => "unstable",
            Error::NonUnique { .. } => "non_unique",
            Error::Construction(_) => "construction",
            Error::Convergence { .. } => "convergence",
            Error::Numeric(_) => "numeric",
            Error::Internal(_) => "internal",
        }
    }
}

fn fmt_sets(sets: &[Vec<String>]) -> String {
    sets.iter()
        .map(|s| format!("{{{}}}", s.join(",")))
        .collect::<Vec<_>>()
        .join(" ")
}
