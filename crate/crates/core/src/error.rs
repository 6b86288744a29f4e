use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Evaluation point lies on or inside the oscillating sphere.
    #[error("point ({:.6}, {:.6}, {:.6}) m is {distance:.6} m from the source center, inside sphere of radius {radius:.6} m", point[0], point[1], point[2])]
    InsideSource {
        point: [f64; 3],
        distance: f64,
        radius: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("did not converge after {iterations} iterations (best cost {cost:.3e})")]
    NonConvergence {
        iterations: usize,
        cost: f64,
        best: Vec<f64>,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
