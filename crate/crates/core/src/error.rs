use thiserror::Error;

/// Errors raised by the geometric, statistical and numerical routines.
///
/// Numeric payloads are stored as `f64` so the error type does not depend on
/// the scalar parameter.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("projection onto the manifold is undefined or non-unique at this point")]
    DegeneratePoint,
    #[error("constraint jacobian is rank deficient (singular point of the manifold)")]
    RankDeficient,
    #[error("endpoints are not joined by a unique minimizing geodesic")]
    NonUniqueGeodesic,
    #[error("neighborhood holds {found} active points, at least 2 are required")]
    EmptyNeighborhood { found: usize },
    #[error("leading eigenvalue {lambda1} is not separated from the second {lambda2}")]
    SpectralGapTooSmall { lambda1: f64, lambda2: f64 },
    #[error("mass matrix is singular (delta = 0)")]
    SingularMass,
    #[error("newton iteration failed after {iterations} steps, residual {residual:e}")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("right-hand side failed at t = {t}: {source}")]
    RhsFailure {
        t: f64,
        #[source]
        source: Box<FlowError>,
    },
    #[error("initial guess does not satisfy the boundary conditions")]
    BoundaryMismatch,
    #[error("value {value} outside admissible range {range}")]
    OutOfRange { value: f64, range: &'static str },
    #[error("start and end points coincide")]
    IdenticalEndpoints,
    #[error("iteration did not converge after {iterations} steps")]
    NoConvergence { iterations: usize },
    #[error("concatenated curve length {length} exceeds the unit budget")]
    LengthBudgetExceeded { length: f64 },
    #[error("path never crosses the hyperplane orthogonal to the principal axis")]
    NoCrossing,
    #[error("lattice with {nodes} nodes exceeds the exhaustive-search limit")]
    GridTooLarge { nodes: usize },
    #[error("leading eigenvalue is zero")]
    ZeroLeadingEigenvalue,
    #[error("curve has a zero-length segment at index {index}")]
    ZeroSegment { index: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("outer iteration {iteration}, node {node}: {source}")]
    AtIteration {
        iteration: usize,
        node: usize,
        #[source]
        source: Box<FlowError>,
    },
}

pub type Result<T, E = FlowError> = std::result::Result<T, E>;

impl FlowError {
    /// Tags an error with the outer iteration and mesh node where it happened.
    pub fn at(self, iteration: usize, node: usize) -> Self {
        FlowError::AtIteration {
            iteration,
            node,
            source: Box::new(self),
        }
    }

    /// Strips iteration / rhs context and returns the underlying error.
    pub fn root(&self) -> &FlowError {
        match self {
            FlowError::AtIteration { source, .. } | FlowError::RhsFailure { source, .. } => {
                source.root()
            }
            other => other,
        }
    }
}
