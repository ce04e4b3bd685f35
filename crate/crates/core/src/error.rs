use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Graph or probability vector rejected during chain construction.
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("graph is disconnected: node {node} is unreachable from node 0")]
    Disconnected { node: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error("insufficient delay history at t = {t}")]
    History { t: f64 },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("fit failed: {0}")]
    Fit(String),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension { what, expected, got }
    }

    /// Validation errors are caused by inputs; everything else is a numeric failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::NonFinite { .. } | Error::Fit(_))
    }
}
