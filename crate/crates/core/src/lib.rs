//! Numerical toolkit for the planar circular restricted three-body problem:
//! trajectory classification about the secondary, weak stability boundary
//! extraction, Poincaré return maps, and invariant manifolds of Lyapunov
//! orbits.

pub mod dynamics;
pub mod error;
pub mod integrate;
pub mod manifolds;
pub mod section;
pub mod sweep;
pub mod wsb;

pub use error::{Error, Result};
