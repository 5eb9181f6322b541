use thiserror::Error;

/// Errors shared across the kernel, geometry and transport modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("point is not interior to the domain")]
    NotInterior,

    #[error("zero velocity has no trajectory")]
    ZeroVelocity,

    #[error("collision kernel is singular at coincident velocities")]
    CoincidentVelocities,

    #[error("degenerate parallax configuration: apex coincides with an endpoint")]
    DegenerateParallax,

    #[error("field interpolation failed: {0}")]
    Interpolation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
