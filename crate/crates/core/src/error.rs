use alloc::string::String;

/// Errors raised by the kernels, filters and harness.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value passed to {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch in {0}")]
    Dimension(&'static str),
    #[error("rank-1 downdate makes the factor indefinite at pivot {pivot}")]
    IndefiniteDowndate { pivot: usize },
    #[error("triangular matrix is singular at pivot {pivot}")]
    SingularTriangular { pivot: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("negative sigma-point weight {0}; eta_alpha must be at least the state dimension")]
    NegativeWeight(f64),
    #[error("square-root update failed numerically")]
    FilterNumericalFailure,
    #[error("infeasible region: {0}")]
    InfeasibleRegion(Infeasibility),
    #[error("projection requested on a region without discs")]
    EmptyRegion,
    #[error("no usable (non-diverged) trial at epoch {epoch}")]
    AllDiverged { epoch: usize },
}

/// Why a disc intersection was declared empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Infeasibility {
    /// Two discs whose centers are further apart than the sum of their radii.
    DisjointPair {
        first: usize,
        second: usize,
        gap: f64,
    },
    /// The solver found no point satisfying every constraint.
    Solver,
}

impl core::fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Infeasibility::DisjointPair { first, second, gap } => {
                write!(
                    f,
                    "discs {first} and {second} are disjoint (gap {gap:.3e} m)"
                )
            }
            Infeasibility::Solver => f.write_str("no point satisfies every disc constraint"),
        }
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
