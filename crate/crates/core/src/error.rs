use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A drift block or the diffusion matrix produced a non-finite value.
    #[error("model evaluation failed in {component} at t={t}: {message}")]
    ModelEvaluation {
        component: String,
        t: f64,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("simulation failed at step {step} (t={t}): {message}")]
    Simulation { step: usize, t: f64, message: String },

    #[error("non-finite importance weights at sample indices {indices:?}")]
    NonFiniteWeights { indices: Vec<usize> },

    #[error("degenerate estimator: {0}")]
    DegenerateEstimator(String),

    /// A CFL-type bound of the explicit grid scheme is violated.
    #[error("stability violation ({constraint}): {value:.4} > {limit}")]
    Stability {
        constraint: String,
        value: f64,
        limit: f64,
    },

    #[error("ellipticity violation: min eigenvalue {min_eigenvalue:e} below floor {floor:e} at t={t}")]
    Ellipticity {
        min_eigenvalue: f64,
        floor: f64,
        t: f64,
    },

    #[error("solver failure at time slice {slice}, node {node}: {message}")]
    Solver {
        slice: usize,
        node: usize,
        message: String,
    },

    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config {
        line: Option<usize>,
        message: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("cached field does not match request: {0}")]
    CacheInvalid(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn in_stage(self, stage: impl Into<String>) -> Error {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit status used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config { .. }
            | Error::UnknownPreset(_)
            | Error::CacheInvalid(_)
            | Error::Parse { .. }
            | Error::Stability { .. } => 2,
            _ => 3,
        }
    }
}
