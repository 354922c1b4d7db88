use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inconsistent discretization: {0}")]
    InconsistentDiscretization(String),

    #[error("degenerate edge {edge}: length {length:e} m")]
    DegenerateEdge { edge: usize, length: f64 },

    #[error("node {node} coincides with the head center")]
    NodeAtHeadCenter { node: usize },

    #[error("ill-conditioned mobility operator (condition estimate {condition:e}) for {nodes} flagellar nodes")]
    IllConditionedMobility { condition: f64, nodes: usize },

    #[error("Newton solve did not converge after {iterations} iterations (residual history {residuals:?})")]
    NewtonDiverged {
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("singular Newton system at iteration {iteration}")]
    SingularNewtonSystem { iteration: usize },

    #[error("line fit degenerate: trajectory is perpendicular to the x-axis")]
    DegenerateOrientation,

    #[error("ambiguous sign for the direction of motion")]
    AmbiguousDirection,

    #[error("degenerate body frame: x1 - x2 is parallel to the direction of motion")]
    DegenerateFrame,

    #[error("degenerate plane: direction of motion is parallel to p2 - x0")]
    DegeneratePlane,

    #[error("no turn: before- and after-turn lines are parallel")]
    NoTurn,

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("{path}: {message}")]
    File { path: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the command-line front end: 1 for bad input,
    /// 2 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateEdge { .. }
            | Error::NodeAtHeadCenter { .. }
            | Error::IllConditionedMobility { .. }
            | Error::NewtonDiverged { .. }
            | Error::SingularNewtonSystem { .. }
            | Error::Training(_) => 2,
            _ => 1,
        }
    }

    /// True for the geometric degeneracies a controller may defer past.
    pub fn is_geometric(&self) -> bool {
        matches!(
            self,
            Error::DegenerateOrientation
                | Error::AmbiguousDirection
                | Error::DegenerateFrame
                | Error::DegeneratePlane
                | Error::NoTurn
        )
    }
}
