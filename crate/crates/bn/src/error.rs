//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, BnError>;

#[derive(Debug, Error)]
pub enum BnError {
    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite {quantity} at node {node} (x = {x:.6e})")]
    NonFinite {
        quantity: &'static str,
        node: usize,
        x: f64,
    },

    #[error("conservative remap refused: {0}")]
    RemapDegenerate(String),

    #[error("equilibrium fit failed: {0}")]
    FitFailure(String),

    #[error("blow-up fit refused: {0}")]
    FitRefused(String),

    #[error("oracle restricted to grids with at most {max} nodes (got {got})")]
    OracleGridTooLarge { max: usize, got: usize },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("malformed {kind} file: {detail}")]
    Format { kind: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
