use thiserror::Error;
use vortex_core::disk::DiskError;
use vortex_core::field::FieldError;
use vortex_core::grid::GridError;
use vortex_core::linearized::LinearError;
use vortex_core::newton::NewtonError;
use vortex_core::preglue::PreglueError;
use vortex_core::taubes::TaubesError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("solver failed: {0}")]
    Divergence(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DiskError> for CliError {
    fn from(e: DiskError) -> Self {
        match e {
            DiskError::Grid(g) => g.into(),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<TaubesError> for CliError {
    fn from(e: TaubesError) -> Self {
        match e {
            TaubesError::NewtonDiverged(_) | TaubesError::Linear(_) => CliError::Divergence(e.to_string()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::Io(io) => io.into(),
            FieldError::SolverDiverged(_) => CliError::Divergence(e.to_string()),
            FieldError::Grid(g) => g.into(),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<LinearError> for CliError {
    fn from(e: LinearError) -> Self {
        CliError::Divergence(e.to_string())
    }
}

impl From<PreglueError> for CliError {
    fn from(e: PreglueError) -> Self {
        match e {
            PreglueError::Taubes(t) => t.into(),
            PreglueError::Disk(d) => d.into(),
            PreglueError::Field(f) => f.into(),
            PreglueError::Grid(g) => g.into(),
            PreglueError::Newton(n) => (*n).into(),
            PreglueError::Linear(_) => CliError::Divergence(e.to_string()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<NewtonError> for CliError {
    fn from(e: NewtonError) -> Self {
        match e {
            NewtonError::Preglue(p) => p.into(),
            NewtonError::Taubes(t) => t.into(),
            NewtonError::Field(f) => f.into(),
            NewtonError::BadTolerance(_) => CliError::Validation(e.to_string()),
            e => CliError::Divergence(e.to_string()),
        }
    }
}
