//! Event specifications and records for event-detecting propagation.

use serde::{Deserialize, Serialize};

use crate::dynamics::P1State;

/// Which ray crossings to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RayDirection {
    /// Only crossings with `theta_dot > 0`.
    PosigradeOnly,
    /// Crossings in either direction.
    Any,
}

/// What to watch for along a propagation. All geometry is P2-centered
/// except where noted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    /// Crossing of the half-line at polar angle `theta0` from P2.
    Ray { theta0: f64, direction: RayDirection },
    /// Crossing of the `Y2 = 0` axis with `Y1 < -1` (to the left of P1).
    NegativeXAxis,
    /// Unwrapped P1-centered angle has changed by `2 pi * turns` in either sign.
    WindingP1 { turns: f64 },
    /// Unwrapped P2-centered angle has changed by `2 pi * turns` in either sign.
    WindingP2 { turns: f64 },
    /// Distance from P2 exceeds `radius`.
    Escape { radius: f64 },
    /// Distance from P2 drops below `radius`.
    Approach { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub kind: EventKind,
    /// Terminal events stop the propagation at the refined event time.
    pub terminal: bool,
}

impl EventSpec {
    pub fn ray(theta0: f64, direction: RayDirection) -> Self {
        Self { kind: EventKind::Ray { theta0, direction }, terminal: false }
    }

    pub fn terminal(mut self) -> Self {
        self.terminal = true;
        self
    }
}

/// Extra quantities recorded at a ray crossing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayCrossingInfo {
    pub r: f64,
    pub r_dot: f64,
    pub theta_dot: f64,
    pub e2: f64,
    pub posigrade: bool,
    /// `|theta_dot|` below the tangency tolerance: the crossing is not
    /// usable as a transversal section return.
    pub tangential: bool,
}

/// One detected event, refined to the configured time tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub spec_index: usize,
    pub t: f64,
    pub state: P1State,
    /// Unwrapped P1-centered angle at the event.
    pub phi1: f64,
    /// Unwrapped P2-centered angle at the event.
    pub phi2: f64,
    pub ray: Option<RayCrossingInfo>,
}
