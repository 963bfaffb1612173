use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration (parameters, grid sizes, quadrature degree, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// LU factorisation hit an exactly zero pivot.
    #[error("singular matrix: zero pivot at index {pivot}")]
    Singular { pivot: usize },

    /// A matrix required to be positive definite is not.
    #[error("matrix is not positive definite: eigenvalue {eigenvalue:e} at index {index}")]
    NotPositiveDefinite { index: usize, eigenvalue: f64 },

    /// An iterative method failed to converge or produced non-finite output.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Rotation count could not be reconciled with its inputs.
    #[error("inconsistent rotation count: {0}")]
    Inconsistent(String),

    /// Failure while evaluating the transform at a quadrature node.
    #[error("transform failed at quadrature node {node}: {source}")]
    AtNode {
        node: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn at_node(node: usize, err: Error) -> Self {
        Error::AtNode {
            node,
            source: Box::new(err),
        }
    }
}
