use std::path::PathBuf;

use thiserror::Error;

/// Invalid or unreadable configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub fn invalid(message: impl Into<String>) -> Self {
        ConfigError::Invalid(message.into())
    }
}

/// Failure of a single flow step.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HydroError {
    #[error("CFL violation: Courant number {courant:.3} exceeds 1 (suggested dt <= {suggested_dt:.4e} s)")]
    Cfl { courant: f64, suggested_dt: f64 },
    #[error("pressure solver did not converge in {iterations} iterations (relative residual {residual:.3e}, divergence {divergence:.3e})")]
    PressureSolver {
        iterations: usize,
        residual: f64,
        divergence: f64,
    },
    #[error("dry cell: surface height {eta:.4e} m at plan cell ({i}, {j})")]
    DryCell { i: usize, j: usize, eta: f64 },
    #[error("non-finite velocity at cell {cell}")]
    NonFinite { cell: usize },
}

/// Failure of a single species transport step.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BioError {
    #[error("species CFL violation: Courant number {courant:.3} exceeds 1 (suggested dt <= {suggested_dt:.4e} s)")]
    Cfl { courant: f64, suggested_dt: f64 },
    #[error("negativity defect: clipped mass fraction {fraction:.3e} of species {species} exceeds {tolerance:.1e}")]
    Negativity {
        species: &'static str,
        fraction: f64,
        tolerance: f64,
    },
    #[error("non-finite value of species {species} at cell {cell}")]
    NonFinite { species: &'static str, cell: usize },
    #[error("species {species} exceeds the ceiling {ceiling:.3e} at cell {cell}")]
    Ceiling {
        species: &'static str,
        cell: usize,
        ceiling: f64,
    },
}

/// Failure of the well-mixed reactor integrator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReactorError {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("number of steps must be at least 1")]
    NoSteps,
    #[error("non-finite reactor state at t = {time}: {state:?}")]
    NonFinite { time: f64, state: [f64; 8] },
}

/// Failure of a coupled simulation, annotated with the step index.
#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("flow step {step} failed: {source}")]
    Flow {
        step: usize,
        #[source]
        source: HydroError,
    },
    #[error("species step {step} failed: {source}")]
    Species {
        step: usize,
        #[source]
        source: BioError,
    },
    #[error("observer failed at step {step}: {source}")]
    Observer {
        step: usize,
        #[source]
        source: std::io::Error,
    },
}

/// Failure of the simplex optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("invalid optimizer options: {0}")]
    Options(String),
    #[error("objective is infinite or NaN at every simplex vertex")]
    AllInfinite,
}
