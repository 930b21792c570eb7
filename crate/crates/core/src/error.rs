use thiserror::Error;

use crate::diagnostics::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// One of the initial-data conditions fails at `radius`.
    #[error("trapped surface at start: {condition} fails at r = {radius} (margin {margin})")]
    TrappedSurfaceAtStart {
        condition: &'static str,
        radius: f64,
        margin: f64,
    },

    #[error("fineness {epsilon} too coarse for the support box: {reason}")]
    FinenessTooCoarse { epsilon: f64, reason: String },

    #[error("negative density {value} sampled at (r, w, L) = ({r}, {w}, {l})")]
    NegativeDensity { r: f64, w: f64, l: f64, value: f64 },

    #[error("particle {index} at radius {radius} is within one kernel width ({delta}) of the centre")]
    ParticleTooCentral { index: usize, radius: f64, delta: f64 },

    /// `1 - 2m/r` dropped below the hard guard.
    #[error("trapped surface at r = {radius} (m = {mass}, particle {particle:?})")]
    TrappedSurface {
        radius: f64,
        mass: f64,
        particle: Option<usize>,
    },

    #[error("particle {index} reached non-admissible radius {radius}")]
    NonPositiveRadius { index: usize, radius: f64 },

    #[error("time step too large: weight bracket {bracket} for particle {index} (tau_max {tau_max})")]
    StepTooLarge {
        index: usize,
        bracket: f64,
        tau_max: f64,
    },

    #[error("monitor abort: {0}")]
    MonitorAbort(Violation),

    #[error("decomposition mismatch: {0}")]
    DecompositionMismatch(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("run with amplitude {amplitude} met neither the dispersal nor the collapse criterion")]
    Unclassified { amplitude: f64 },

    /// An end of an amplitude bracket was not classified as required.
    #[error("amplitude {amplitude} should {expected} but does not")]
    BracketNotVerified { amplitude: f64, expected: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
