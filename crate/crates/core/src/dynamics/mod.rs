//! Equations of motion, conserved quantities, equilibria and coordinate
//! charts for the planar circular restricted three-body problem.
//!
//! Units are normalized: the primary separation is 1, the rotation rate is 1
//! and the gravitational constant is 1. Two rotating charts are used
//! throughout: a `P1`-centered chart `(y1, y2)` with `P1` at the origin and
//! `P2` fixed at `(1, 0)`, and a `P2`-centered chart `(Y1, Y2)` obtained by
//! the shift `Y1 = y1 - 1`, which places `P1` at `(-1, 0)`.

pub mod hill;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default collision guard radius around either primary.
pub const R_MIN_DEFAULT: f64 = 1e-6;

/// Mass of the secondary, `mu`, with the primary carrying `1 - mu`.
///
/// `mu = 0` is accepted as the degenerate Kepler limit (the secondary's
/// gravity vanishes); the toolkit's working regime is small positive `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassRatio(f64);

impl MassRatio {
    pub fn new(mu: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&mu) || !mu.is_finite() {
            return Err(Error::InvalidMassRatio(mu));
        }
        Ok(Self(mu))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// State in the P1-centered rotating frame: position `(y1, y2)`, velocity `(v1, v2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct P1State {
    pub y1: f64,
    pub y2: f64,
    pub v1: f64,
    pub v2: f64,
}

/// State in the P2-centered rotating frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotState {
    pub y1: f64,
    pub y2: f64,
    pub v1: f64,
    pub v2: f64,
}

impl P1State {
    pub fn new(y1: f64, y2: f64, v1: f64, v2: f64) -> Self {
        Self { y1, y2, v1, v2 }
    }

    #[inline]
    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    #[inline]
    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.y1, self.y2, self.v1, self.v2)
    }

    /// Distance to P1 (the origin of this chart).
    #[inline]
    pub fn r1(&self) -> f64 {
        (self.y1 * self.y1 + self.y2 * self.y2).sqrt()
    }

    /// Distance to P2 at `(1, 0)`.
    #[inline]
    pub fn r2(&self) -> f64 {
        let dx = self.y1 - 1.0;
        (dx * dx + self.y2 * self.y2).sqrt()
    }
}

impl RotState {
    pub fn new(y1: f64, y2: f64, v1: f64, v2: f64) -> Self {
        Self { y1, y2, v1, v2 }
    }

    /// Distance to P2 (the origin of this chart).
    #[inline]
    pub fn r(&self) -> f64 {
        (self.y1 * self.y1 + self.y2 * self.y2).sqrt()
    }
}

/// Shift the P1-centered chart to the P2-centered one (`Y1 = y1 - 1`).
#[inline]
pub fn to_p2_frame(s: &P1State) -> RotState {
    RotState::new(s.y1 - 1.0, s.y2, s.v1, s.v2)
}

/// Shift the P2-centered chart back to the P1-centered one.
#[inline]
pub fn to_p1_frame(s: &RotState) -> P1State {
    P1State::new(s.y1 + 1.0, s.y2, s.v1, s.v2)
}

/// Polar coordinates about P2: `(r, theta, r_dot, theta_dot)`.
///
/// Undefined at `r = 0`.
pub fn to_polar(s: &RotState) -> (f64, f64, f64, f64) {
    let r = s.r();
    let theta = s.y2.atan2(s.y1);
    let r_dot = (s.y1 * s.v1 + s.y2 * s.v2) / r;
    let theta_dot = (s.y1 * s.v2 - s.y2 * s.v1) / (r * r);
    (r, theta, r_dot, theta_dot)
}

/// The reflection `(Y1, Y2, V1, V2) -> (Y1, -Y2, -V1, V2)`.
///
/// Conjugates the flow with time reversal: if `psi(t)` solves the equations
/// of motion then so does `mirror(psi(-t))`.
#[inline]
pub fn mirror(s: &RotState) -> RotState {
    RotState::new(s.y1, -s.y2, -s.v1, s.v2)
}

/// Effective potential of the rotating frame, P1-centered chart.
///
/// Includes the constant `mu (1 - mu) / 2` term, which fixes the convention
/// `C4 = C5 = 3` for the Jacobi constant at the triangular points.
pub fn omega_potential(y1: f64, y2: f64, mu: MassRatio) -> f64 {
    let mu = mu.value();
    let r1 = (y1 * y1 + y2 * y2).sqrt();
    let d2 = y1 - 1.0;
    let r2 = (d2 * d2 + y2 * y2).sqrt();
    let cx = y1 - mu;
    let mut v = 0.5 * (cx * cx + y2 * y2) + (1.0 - mu) / r1 + 0.5 * mu * (1.0 - mu);
    if mu > 0.0 {
        v += mu / r2;
    }
    v
}

fn omega_gradient(y1: f64, y2: f64, mu: MassRatio) -> (f64, f64) {
    let mu = mu.value();
    let r1sq = y1 * y1 + y2 * y2;
    let r1 = r1sq.sqrt();
    let r1c = r1sq * r1;
    let d2 = y1 - 1.0;
    let r2sq = d2 * d2 + y2 * y2;
    let r2 = r2sq.sqrt();
    let r2c = r2sq * r2;
    let mut gx = (y1 - mu) - (1.0 - mu) * y1 / r1c;
    let mut gy = y2 - (1.0 - mu) * y2 / r1c;
    if mu > 0.0 {
        gx -= mu * d2 / r2c;
        gy -= mu * y2 / r2c;
    }
    (gx, gy)
}

/// Right-hand side of the equations of motion in the P1-centered chart:
/// returns `(v1, v2, a1, a2)` with `a1 = 2 v2 + Omega_y1`, `a2 = -2 v1 + Omega_y2`.
pub fn eom_rhs(s: &P1State, mu: MassRatio) -> Result<Vector4<f64>> {
    let r1 = s.r1();
    let r2 = s.r2();
    if r1 < R_MIN_DEFAULT {
        return Err(Error::Singularity { body: "P1", r: r1 });
    }
    if mu.value() > 0.0 && r2 < R_MIN_DEFAULT {
        return Err(Error::Singularity { body: "P2", r: r2 });
    }
    Ok(eom_rhs_raw(&s.to_vector(), mu))
}

/// Unguarded right-hand side on raw 4-vectors, used inside the integrator
/// (which enforces the collision guard through events).
#[inline]
pub fn eom_rhs_raw(y: &Vector4<f64>, mu: MassRatio) -> Vector4<f64> {
    let (gx, gy) = omega_gradient(y[0], y[1], mu);
    Vector4::new(y[2], y[3], 2.0 * y[3] + gx, -2.0 * y[2] + gy)
}

/// Jacobian of `eom_rhs` with respect to the state.
///
/// The upper-left 2x2 block is zero, the upper-right is the identity; the
/// lower blocks carry the Hessian of `Omega` and the Coriolis terms.
pub fn eom_jacobian(s: &P1State, mu: MassRatio) -> Matrix4<f64> {
    let m = mu.value();
    let (y1, y2) = (s.y1, s.y2);
    let r1sq = y1 * y1 + y2 * y2;
    let r1 = r1sq.sqrt();
    let r1c = r1sq * r1;
    let r1q = r1c * r1sq;
    let d2 = y1 - 1.0;
    let r2sq = d2 * d2 + y2 * y2;
    let r2 = r2sq.sqrt();
    let r2c = r2sq * r2;
    let r2q = r2c * r2sq;

    let mut oxx = 1.0 - (1.0 - m) * (1.0 / r1c - 3.0 * y1 * y1 / r1q);
    let mut oxy = (1.0 - m) * 3.0 * y1 * y2 / r1q;
    let mut oyy = 1.0 - (1.0 - m) * (1.0 / r1c - 3.0 * y2 * y2 / r1q);
    if m > 0.0 {
        oxx -= m * (1.0 / r2c - 3.0 * d2 * d2 / r2q);
        oxy += m * 3.0 * d2 * y2 / r2q;
        oyy -= m * (1.0 / r2c - 3.0 * y2 * y2 / r2q);
    }

    Matrix4::new(
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0, //
        oxx, oxy, 0.0, 2.0, //
        oxy, oyy, -2.0, 0.0,
    )
}

/// Derivative of the state-transition matrix: `A(state) * stm`.
pub fn variational_rhs(s: &P1State, stm: &Matrix4<f64>, mu: MassRatio) -> Result<Matrix4<f64>> {
    let r1 = s.r1();
    let r2 = s.r2();
    if r1 < R_MIN_DEFAULT {
        return Err(Error::Singularity { body: "P1", r: r1 });
    }
    if mu.value() > 0.0 && r2 < R_MIN_DEFAULT {
        return Err(Error::Singularity { body: "P2", r: r2 });
    }
    Ok(eom_jacobian(s, mu) * stm)
}

/// Jacobi constant `C = 2 Omega - |v|^2` in the P1-centered chart.
pub fn jacobi_constant(s: &P1State, mu: MassRatio) -> f64 {
    2.0 * omega_potential(s.y1, s.y2, mu) - (s.v1 * s.v1 + s.v2 * s.v2)
}

/// Jacobi constant evaluated directly in the P2-centered chart.
///
/// Equals [`jacobi_constant`] of the shifted state exactly (up to floating
/// arithmetic). The distance to P1 is `sqrt((Y1+1)^2 + Y2^2)`, consistent
/// with P1 sitting at `Y1 = -1`.
pub fn jacobi_constant_p2(s: &RotState, mu: MassRatio) -> f64 {
    jacobi_positional_p2(s.y1, s.y2, mu) - (s.v1 * s.v1 + s.v2 * s.v2)
}

/// Velocity-independent part of the P2-centered Jacobi function.
pub fn jacobi_positional_p2(y1: f64, y2: f64, mu: MassRatio) -> f64 {
    let m = mu.value();
    let dp1 = y1 + 1.0;
    let r1 = (dp1 * dp1 + y2 * y2).sqrt();
    let r = (y1 * y1 + y2 * y2).sqrt();
    let cx = y1 + 1.0 - m;
    let mut f = 2.0 * (1.0 - m) / r1 + cx * cx + y2 * y2 + m * (1.0 - m);
    if m > 0.0 {
        f += 2.0 * m / r;
    }
    f
}

/// Two-body (Kepler) energy of the particle relative to P2, rotating chart:
/// `E2 = |V|^2 / 2 - mu / |Y| - L + |Y|^2 / 2` with `L = V1 Y2 - V2 Y1`.
pub fn kepler_energy(s: &RotState, mu: MassRatio) -> Result<f64> {
    let r = s.r();
    if r <= 0.0 {
        return Err(Error::Singularity { body: "P2", r });
    }
    let vsq = s.v1 * s.v1 + s.v2 * s.v2;
    let l = s.v1 * s.y2 - s.v2 * s.y1;
    Ok(0.5 * vsq - mu.value() / r - l + 0.5 * r * r)
}

/// The angular term `L = V1 Y2 - V2 Y1` of the Kepler energy.
pub fn kepler_l(s: &RotState) -> f64 {
    s.v1 * s.y2 - s.v2 * s.y1
}

/// Positions (P1-centered) and Jacobi constants of the five equilibria.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSet {
    /// `[L1, L2, L3, L4, L5]` positions in the P1-centered chart.
    pub positions: [(f64, f64); 5],
    /// `[C1, C2, C3, C4, C5]`.
    pub jacobi: [f64; 5],
}

impl EquilibriumSet {
    /// Distance from P2 to L1.
    pub fn p2_l1_distance(&self) -> f64 {
        (self.positions[0].0 - 1.0).abs()
    }

    /// Distance from P2 to L2.
    pub fn p2_l2_distance(&self) -> f64 {
        (self.positions[1].0 - 1.0).abs()
    }
}

const COLLINEAR_EPS: f64 = 1e-9;
const COLLINEAR_TOL: f64 = 1e-14;

/// Locate the five Lagrange points and their Jacobi constants.
///
/// The collinear points are found by bisection of `Omega_y1(y1, 0)` in the
/// three brackets `(-1+eps, -eps)`, `(eps, 1-eps)` and `(1+eps, 3)`; the
/// triangular points are the exact equilateral configuration.
pub fn lagrange_points(mu: MassRatio) -> Result<EquilibriumSet> {
    if mu.value() <= 0.0 {
        return Err(Error::InvalidMassRatio(mu.value()));
    }
    let g = |y1: f64| omega_gradient(y1, 0.0, mu).0;

    let l1 = bisect_collinear(g, COLLINEAR_EPS, 1.0 - COLLINEAR_EPS)?;
    let l2 = bisect_collinear(g, 1.0 + COLLINEAR_EPS, 3.0)?;
    let l3 = bisect_collinear(g, -1.0 + COLLINEAR_EPS, -COLLINEAR_EPS)?;
    let l4 = (0.5, 0.5 * 3.0_f64.sqrt());
    let l5 = (0.5, -0.5 * 3.0_f64.sqrt());

    let positions = [(l1, 0.0), (l2, 0.0), (l3, 0.0), l4, l5];
    let mut jacobi = [0.0; 5];
    for (i, &(x, y)) in positions.iter().enumerate() {
        jacobi[i] = jacobi_constant(&P1State::new(x, y, 0.0, 0.0), mu);
    }
    Ok(EquilibriumSet { positions, jacobi })
}

fn bisect_collinear(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    let mut glo = g(lo);
    let ghi = g(hi);
    if glo == 0.0 {
        return Ok(lo);
    }
    if ghi == 0.0 {
        return Ok(hi);
    }
    if glo.signum() == ghi.signum() {
        return Err(Error::Domain(format!(
            "collinear bracket [{lo}, {hi}] has no sign change"
        )));
    }
    while hi - lo > COLLINEAR_TOL {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm.signum() == glo.signum() {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
