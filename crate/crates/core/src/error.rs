//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("mass ratio {0} outside [0, 0.5)")]
    InvalidMassRatio(f64),
    #[error("invalid input: {0}")]
    Domain(String),
    #[error("state inside collision guard at t = {t}: r = {r:.3e}")]
    CollisionGuard { t: f64, r: f64 },
    #[error("step size underflow at t = {t}: h = {h:.3e} below h_min with error above tolerance")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step limit exceeded at t = {0}")]
    StepLimit(f64),
    #[error("singular configuration: distance {r:.3e} to {body} below guard")]
    Singularity { body: &'static str, r: f64 },
    #[error("point is off the section: theta_dot^2 = {0:.6e} <= 0")]
    OffSection(f64),
    #[error("no return to the section within t_max = {0}")]
    NoReturn(f64),
    #[error("trajectory escaped: r = {r:.6e} exceeded {limit:.6e}")]
    Escaped { r: f64, limit: f64 },
    #[error("differential correction did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("continuation target C = {target} outside family range (reached {reached})")]
    TargetOutsideFamily { target: f64, reached: f64 },
    #[error("invalid bracket: both endpoints classify as {0}")]
    InvalidBracket(&'static str),
    #[error("scan grids do not match: {0}")]
    GridMismatch(String),
    #[error("no qualifying crossing found: {0}")]
    NoQualifyingCrossing(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
