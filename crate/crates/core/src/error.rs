use std::path::PathBuf;

use thiserror::Error;

use crate::scenario::ScenarioIssue;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid problem data: {0}")]
    InvalidData(String),

    #[error("interaction matrix is singular or ill-conditioned at cell {cell} (condition estimate {condition:e})")]
    SingularMatrix { cell: usize, condition: f64 },

    #[error("structural condition violated: species {species} of extinction state {pattern} is {value:e} at cell {cell}")]
    StructuralViolation {
        pattern: String,
        species: usize,
        cell: usize,
        value: f64,
    },

    #[error("negative density {value:e} for species {species} at cell {cell}")]
    NegativeDensity {
        species: usize,
        cell: usize,
        value: f64,
    },

    #[error("entropy forms disagree: quadratic {quadratic:e}, fitness {fitness:e}, mixed {mixed:e}")]
    InconsistentEntropy {
        quadratic: f64,
        fitness: f64,
        mixed: f64,
    },

    #[error("species count {n} exceeds the extinction-pattern enumeration cap {cap}")]
    TooManySpecies { n: usize, cap: usize },

    #[error("fixed time step {dt:e} exceeds the positivity bound {dt_max:e}")]
    StepTooLarge { dt: f64, dt_max: f64 },

    #[error("non-finite value produced for species {species} at cell {cell}")]
    NonFinite { species: usize, cell: usize },

    #[error("solver failed at t = {time}: {source}")]
    Solver {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("trajectory needs at least {needed} snapshots, has {found}")]
    TooFewSnapshots { needed: usize, found: usize },

    #[error("entropy reached its floor at t = {time} inside the fit window")]
    EntropyFloor { time: f64 },

    #[error("ODE integration failed at t = {time}: {reason}")]
    Ode { time: f64, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("scenario has {} problem(s):\n{}", .0.len(), render_issues(.0))]
    Scenario(Vec<ScenarioIssue>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn render_issues(issues: &[ScenarioIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
