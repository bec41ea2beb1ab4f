use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate fleet: {0}")]
    DegenerateFleet(String),

    #[error("admissible set of company {company} is empty")]
    EmptyPolytope { company: usize },

    #[error("quadratic program is infeasible")]
    InfeasibleProgram,

    #[error("target allocation violates the matching condition: {0}")]
    InfeasibleTarget(String),

    #[error("vehicle {vehicle} cannot be steered to station {station}: zero surge gain")]
    ZeroSurgeGain { vehicle: usize, station: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("malformed input {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            got,
        }
    }

    /// Wraps the error with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage tags peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// True when the failure is caused by the scenario itself (no admissible
    /// allocation or matching exists) rather than by the numerics.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self.root(),
            Error::DegenerateFleet(_)
                | Error::EmptyPolytope { .. }
                | Error::InfeasibleTarget(_)
                | Error::ZeroSurgeGain { .. }
        )
    }

    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::Numerical(_) | Error::InfeasibleProgram | Error::Internal(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::dim(what, expected, v.len()));
    }
    Ok(())
}
