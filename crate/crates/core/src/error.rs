use std::path::PathBuf;

use nalgebra::DVector;
use thiserror::Error;

use crate::sparse_coding::SparseCode;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("linear solve failed: {0}")]
    SolveFailure(String),

    #[error("Cholesky factorization of the task Hessian failed")]
    CholeskyFailure,

    #[error("Newton iterations did not converge after {iterations} steps (gradient norm {grad_norm:e})")]
    NoConvergence {
        iterations: usize,
        grad_norm: f64,
        last: DVector<f64>,
    },

    #[error("coordinate descent hit the iteration cap (KKT residual {residual:e})")]
    MaxIterReached { residual: f64, code: Box<SparseCode> },

    #[error("alternating optimization did not converge after {alternations} alternations")]
    AlternationLimit { alternations: usize },

    #[error("graph is disconnected")]
    DisconnectedGraph,

    #[error("malformed edge ({0}, {1})")]
    MalformedEdge(usize, usize),

    #[error("too few agents: {0}")]
    TooFewAgents(usize),

    #[error("empty input")]
    EmptyInput,

    #[error("labels contain a single class; AUC undefined")]
    DegenerateLabels,

    #[error("no STL pairing for trial {trial}, task {task_id}")]
    MissingPair { trial: usize, task_id: String },

    #[error("task has {0} instances; at least 2 are needed to split")]
    TooFewInstances(usize),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{file}:{line}: expected {expected} columns, found {actual}")]
    InconsistentWidth {
        file: PathBuf,
        line: usize,
        expected: usize,
        actual: usize,
    },

    #[error("{file}:{line}: label {label} is not -1 or +1")]
    UnknownLabel { file: PathBuf, line: usize, label: f64 },

    #[error("bad synthetic spec: {0}")]
    BadSpec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("configs are not paired: {0}")]
    UnpairedConfigs(String),

    #[error("agent {agent}: {source}")]
    Agent {
        agent: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("time step {t}: {source}")]
    TimeStep {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Broad classes used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn in_agent(self, agent: usize) -> Self {
        Error::Agent {
            agent,
            source: Box::new(self),
        }
    }

    pub fn at_step(self, t: usize) -> Self {
        Error::TimeStep {
            t,
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::InvalidParameter(_)
            | Error::UnpairedConfigs(_)
            | Error::TooFewAgents(_)
            | Error::MalformedEdge(..)
            | Error::DisconnectedGraph
            | Error::BadSpec(_) => ErrorClass::Config,
            Error::Parse { .. }
            | Error::InconsistentWidth { .. }
            | Error::UnknownLabel { .. }
            | Error::EmptyInput
            | Error::TooFewInstances(_)
            | Error::DegenerateLabels
            | Error::MissingPair { .. }
            | Error::Io(_) => ErrorClass::Data,
            Error::Agent { source, .. } | Error::TimeStep { source, .. } => source.class(),
            _ => ErrorClass::Numerical,
        }
    }

    /// 2 for configuration errors, 3 for data errors, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }
}
