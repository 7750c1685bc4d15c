use thiserror::Error;

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("population eigenvalue #{index} is {value}, expected a finite positive number")]
    NonPositiveEigenvalue { index: usize, value: f64 },

    #[error("spectrum is supercritical: edge margin 1 - sigma_1 * xi = {margin:.3e} is below threshold {threshold:.3e}")]
    Supercritical { margin: f64, threshold: f64 },

    #[error("{what} did not converge: {detail}")]
    Convergence { what: &'static str, detail: String },

    #[error("top eigenvalue gap mu2 - mu3 = {gap:.3e} is degenerate")]
    DegenerateGap { gap: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {detail}")]
    Format { path: String, detail: String },
}

impl EdgeError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        EdgeError::InvalidInput(msg.into())
    }

    pub fn convergence(what: &'static str, detail: impl Into<String>) -> Self {
        EdgeError::Convergence {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        EdgeError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: &std::path::Path, detail: impl Into<String>) -> Self {
        EdgeError::Format {
            path: path.display().to_string(),
            detail: detail.into(),
        }
    }

    /// True for rejections of a well-formed request whose input falls outside
    /// the regime the methods cover.
    pub fn is_domain_rejection(&self) -> bool {
        matches!(
            self,
            EdgeError::NonPositiveEigenvalue { .. }
                | EdgeError::Supercritical { .. }
                | EdgeError::DegenerateGap { .. }
                | EdgeError::InvalidInput(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, EdgeError>;
