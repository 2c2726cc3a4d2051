//! The W-algorithm: periapsis initial conditions along a ray from P2 and
//! their n-cycle stability classification.
//!
//! An initial condition at distance `r` along the ray `L(theta)` is the
//! periapsis of an osculating ellipse of eccentricity `e` (so `r_dot = 0`
//! and the Kepler energy is negative). Forward propagation then classifies
//! the point `n`-stable when the trajectory returns to the ray `n` times
//! posigrade and transversally, each full winding about P2 with `E2 < 0`,
//! without ever completing a cycle about P1.

use std::f64::consts::TAU;
use std::io::Write;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    jacobi_constant_p2, kepler_energy, kepler_l, to_p1_frame, MassRatio, RotState,
};
use crate::error::{Error, Result};
use crate::integrate::{
    propagate_observed, EventKind, EventSpec, IntegratorConfig, RayDirection, Termination,
    Trajectory,
};

/// Accepted winding slack when matching "advanced by exactly 2 pi".
const WINDING_SLACK: f64 = 1e-3;

/// A point of the periapsis set: distance `r` along the ray at angle
/// `theta`, osculating eccentricity `e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriapsisIC {
    pub r: f64,
    pub theta: f64,
    pub e: f64,
    pub mu: MassRatio,
}

impl PeriapsisIC {
    pub fn new(r: f64, theta: f64, e: f64, mu: MassRatio) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!("periapsis distance r = {r} must be positive")));
        }
        if !(0.0..1.0).contains(&e) {
            return Err(Error::Domain(format!("eccentricity e = {e} outside [0, 1)")));
        }
        Ok(Self { r, theta, e, mu })
    }

    /// Rotating-frame speed from the periapsis condition,
    /// `v = sqrt(mu (1 + e) / r) - r`.
    pub fn speed(&self) -> f64 {
        (self.mu.value() * (1.0 + self.e) / self.r).sqrt() - self.r
    }

    /// The initial Kepler energy, `mu (e - 1) / (2 r)`.
    pub fn initial_e2(&self) -> f64 {
        self.mu.value() * (self.e - 1.0) / (2.0 * self.r)
    }

    /// Full P2-centered state: position along the ray, velocity
    /// perpendicular to it (posigrade in the inertial sense).
    pub fn state(&self) -> RotState {
        let v = self.speed();
        let (s, c) = self.theta.sin_cos();
        RotState::new(self.r * c, self.r * s, -v * s, v * c)
    }

    pub fn jacobi(&self) -> f64 {
        jacobi_constant_p2(&self.state(), self.mu)
    }
}

/// Failure modes of unstable cycling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnstableKind {
    /// (i): a full cycle about P1 before the n-th return.
    P1Cycle,
    /// (ii): `E2 >= 0` at a counted return.
    E2NonNegative,
    /// (iii): non-transversal intersection at a counted return.
    Tangential,
    /// (iv): no return to the ray within the time horizon.
    NonReturn,
    /// Trajectory entered the collision guard around a primary.
    CollisionGuard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Stable { n: u32 },
    Unstable { kind: UnstableKind, failing_cycle: u32 },
}

impl Verdict {
    pub fn is_stable(&self) -> bool {
        matches!(self, Verdict::Stable { .. })
    }
}

/// How a ray intersection was treated by the cycle counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossingClass {
    /// Posigrade, transversal, full winding since the previous counted crossing.
    Counted,
    /// Retrograde intersection; logged, never counted.
    Retrograde,
    /// Posigrade but without a full winding since the previous counted crossing.
    SubWinding,
    /// Tangential graze without a full winding; logged only.
    Graze,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingRecord {
    pub t: f64,
    pub r: f64,
    pub r_dot: f64,
    pub theta_dot: f64,
    pub e2: f64,
    /// Winding count about P2 at this crossing, measured from `t0`.
    pub phi2_turns: f64,
    pub class: CrossingClass,
}

/// Result of classifying one periapsis initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityOutcome {
    pub verdict: Verdict,
    /// Counted crossings, in time order (exactly `n` of them when stable).
    pub crossings: Vec<CrossingRecord>,
    /// Retrograde / sub-winding / graze intersections, logged for reference.
    pub extra_crossings: Vec<CrossingRecord>,
    /// Jacobi constant of the initial condition.
    pub jacobi: f64,
}

impl StabilityOutcome {
    pub fn is_stable(&self) -> bool {
        self.verdict.is_stable()
    }

    pub fn unstable_kind(&self) -> Option<UnstableKind> {
        match self.verdict {
            Verdict::Unstable { kind, .. } => Some(kind),
            _ => None,
        }
    }
}

struct ClassifyState {
    n_target: u32,
    count: u32,
    /// Unwrapped angle advance at the last counted crossing, relative to start.
    phi2_ref: f64,
    event_tol: f64,
    crossings: Vec<CrossingRecord>,
    extra: Vec<CrossingRecord>,
    /// Initial wrapped ray angle (the IC sits on the ray).
    phi2_start: f64,
    /// Failure awaiting its simultaneity window before committing; a P1
    /// winding inside the window overrides it (priority (i) > (ii) > (iii)).
    pending: Option<(UnstableKind, u32, f64)>,
    decided: Option<Verdict>,
}

impl ClassifyState {
    fn commit_pending(&mut self) {
        if let Some((kind, cycle, _)) = self.pending.take() {
            self.decided = Some(Verdict::Unstable { kind, failing_cycle: cycle });
        }
    }
}

/// Classify one periapsis initial condition for `n` cycles.
///
/// Pure function of its inputs: identical arguments give identical outcomes.
pub fn classify(ic: &PeriapsisIC, n: u32, cfg: &IntegratorConfig) -> Result<StabilityOutcome> {
    classify_with_trajectory(ic, n, cfg).map(|(o, _)| o)
}

/// As [`classify`], returning the propagated trajectory as well (stored
/// according to `cfg.store`).
pub fn classify_with_trajectory(
    ic: &PeriapsisIC,
    n: u32,
    cfg: &IntegratorConfig,
) -> Result<(StabilityOutcome, Trajectory)> {
    if n < 1 {
        return Err(Error::Domain("cycle target n must be >= 1".into()));
    }
    let s0 = ic.state();
    let start = to_p1_frame(&s0);
    let specs = [
        EventSpec::ray(ic.theta, RayDirection::Any),
        EventSpec { kind: EventKind::WindingP1 { turns: 1.0 }, terminal: false },
    ];

    let mut st = ClassifyState {
        n_target: n,
        count: 0,
        phi2_ref: 0.0,
        event_tol: cfg.event_tol,
        crossings: Vec::new(),
        extra: Vec::new(),
        phi2_start: s0.y2.atan2(s0.y1),
        pending: None,
        decided: None,
    };

    let (traj, _) = propagate_observed(&start, (0.0, cfg.t_max), ic.mu, cfg, &specs, |rec| {
        // close a pending failure whose simultaneity window has passed
        if let Some((_, _, t_f)) = st.pending {
            if rec.t > t_f + st.event_tol {
                st.commit_pending();
                return ControlFlow::Break(());
            }
        }
        match rec.spec_index {
            1 => {
                // full cycle about P1: highest-priority failure
                st.pending = None;
                st.decided = Some(Verdict::Unstable {
                    kind: UnstableKind::P1Cycle,
                    failing_cycle: st.count + 1,
                });
                ControlFlow::Break(())
            }
            _ => {
                let info = rec.ray.expect("ray record carries crossing info");
                let dphi = rec.phi2 - st.phi2_start - st.phi2_ref;
                let full_winding = dphi >= TAU - WINDING_SLACK;
                let record = CrossingRecord {
                    t: rec.t,
                    r: info.r,
                    r_dot: info.r_dot,
                    theta_dot: info.theta_dot,
                    e2: info.e2,
                    phi2_turns: (rec.phi2 - st.phi2_start) / TAU,
                    class: CrossingClass::Counted,
                };
                if !full_winding {
                    let class = if info.tangential {
                        CrossingClass::Graze
                    } else if info.posigrade {
                        CrossingClass::SubWinding
                    } else {
                        CrossingClass::Retrograde
                    };
                    st.extra.push(CrossingRecord { class, ..record });
                    return ControlFlow::Continue(());
                }
                if !info.posigrade && !info.tangential {
                    st.extra.push(CrossingRecord { class: CrossingClass::Retrograde, ..record });
                    return ControlFlow::Continue(());
                }
                // a full-winding return: the (count+1)-th cycle completes here
                let cycle = st.count + 1;
                if info.e2 >= 0.0 {
                    st.pending = Some((UnstableKind::E2NonNegative, cycle, rec.t));
                    return ControlFlow::Continue(());
                }
                if info.tangential {
                    st.pending = Some((UnstableKind::Tangential, cycle, rec.t));
                    return ControlFlow::Continue(());
                }
                st.count = cycle;
                st.phi2_ref = rec.phi2 - st.phi2_start;
                st.crossings.push(record);
                if st.count >= st.n_target {
                    st.decided = Some(Verdict::Stable { n: st.n_target });
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            }
        }
    })?;

    // propagation over: settle any pending failure, then defaults
    if st.decided.is_none() {
        st.commit_pending();
    }
    let verdict = st.decided.unwrap_or(match traj.termination {
        Termination::Collision { .. } => Verdict::Unstable {
            kind: UnstableKind::CollisionGuard,
            failing_cycle: st.count + 1,
        },
        _ => Verdict::Unstable { kind: UnstableKind::NonReturn, failing_cycle: st.count + 1 },
    });
    // collisions that raced a pending failure keep the earlier verdict
    let outcome = StabilityOutcome {
        verdict,
        crossings: st.crossings,
        extra_crossings: st.extra,
        jacobi: ic.jacobi(),
    };
    if let Verdict::Stable { n } = outcome.verdict {
        debug_assert_eq!(outcome.crossings.len(), n as usize);
        debug_assert!(outcome.crossings.iter().all(|c| c.e2 < 0.0));
        debug_assert!(traj.p1_turns().abs() < 1.0);
    }
    Ok((outcome, traj))
}

/// CSV row for one classified initial condition:
/// `r,theta,e,mu,C,verdict,kind,failing_cycle,n`.
pub fn write_outcome_row<W: Write>(
    mut w: W,
    ic: &PeriapsisIC,
    n: u32,
    out: &StabilityOutcome,
) -> std::io::Result<()> {
    let (verdict, kind, cycle) = match out.verdict {
        Verdict::Stable { .. } => ("stable", "-", 0),
        Verdict::Unstable { kind, failing_cycle } => ("unstable", kind_label(kind), failing_cycle),
    };
    writeln!(
        w,
        "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{}",
        ic.r,
        ic.theta,
        ic.e,
        ic.mu.value(),
        out.jacobi,
        verdict,
        kind,
        cycle,
        n
    )
}

pub fn outcome_csv_header() -> &'static str {
    "r,theta,e,mu,C,verdict,kind,failing_cycle,n"
}

pub fn kind_label(kind: UnstableKind) -> &'static str {
    match kind {
        UnstableKind::P1Cycle => "p1-cycle",
        UnstableKind::E2NonNegative => "e2-nonnegative",
        UnstableKind::Tangential => "tangential",
        UnstableKind::NonReturn => "non-return",
        UnstableKind::CollisionGuard => "collision-guard",
    }
}

/// Diagnostic for kind-(i) trajectories: Kepler energy at the first
/// crossing of the negative `Y1` axis left of P1 (`Y1 < -1`, so `r > 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct P1CrossingDiagnostic {
    pub t: f64,
    pub e2: f64,
    /// `L = V1 Y2 - V2 Y1` at the crossing (expected near zero).
    pub l_value: f64,
    pub y1: f64,
    /// Whether `E2 > 0` held at the crossing.
    pub pass: bool,
}

/// Inspect a stored trajectory for its first negative-`Y1`-axis crossing
/// beyond P1 and report `E2` there.
///
/// Requires a trajectory propagated with `StoreMode::Dense`.
pub fn e2_at_p1_crossing_check(traj: &Trajectory) -> Result<P1CrossingDiagnostic> {
    let segs = traj.dense_segments();
    if segs.is_empty() {
        return Err(Error::NoQualifyingCrossing("trajectory carries no dense output"));
    }
    for seg in segs {
        let a = seg.eval(seg.t0);
        let b = seg.eval(seg.t_end());
        // y2 sign change on the P1-frame left half plane (y1 < 0 <=> Y1 < -1)
        if a[1] == 0.0 || a[1] * b[1] > 0.0 || (a[0] >= 0.0 && b[0] >= 0.0) {
            continue;
        }
        let mut ta = seg.t0;
        let mut tb = seg.t_end();
        let sa = a[1] > 0.0;
        for _ in 0..120 {
            if (tb - ta).abs() < 1e-13 {
                break;
            }
            let tm = 0.5 * (ta + tb);
            if (seg.eval(tm)[1] > 0.0) == sa {
                ta = tm;
            } else {
                tb = tm;
            }
        }
        let tc = 0.5 * (ta + tb);
        let yc = seg.eval(tc);
        if yc[0] >= 0.0 {
            continue;
        }
        let s = crate::dynamics::to_p2_frame(&crate::dynamics::P1State::from_vector(&yc));
        let e2 = kepler_energy(&s, traj.mu)?;
        return Ok(P1CrossingDiagnostic {
            t: tc,
            e2,
            l_value: kepler_l(&s),
            y1: s.y1,
            pass: e2 > 0.0,
        });
    }
    Err(Error::NoQualifyingCrossing("no negative-Y1-axis crossing with Y1 < -1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::StoreMode;
    use approx::assert_relative_eq;

    fn cfg_minimal() -> IntegratorConfig {
        IntegratorConfig::default().with_store(StoreMode::Minimal)
    }

    #[test]
    fn periapsis_energy_identity() {
        let mu = MassRatio::new(0.00095).unwrap();
        let ic = PeriapsisIC::new(0.01, 1.0, 0.3, mu).unwrap();
        let e2 = kepler_energy(&ic.state(), mu).unwrap();
        assert!((e2 - ic.initial_e2()).abs() < 1e-13, "E2 {e2} vs {}", ic.initial_e2());
    }

    #[test]
    fn periapsis_has_zero_radial_velocity() {
        let mu = MassRatio::new(0.01215).unwrap();
        let ic = PeriapsisIC::new(0.07, 2.3, 0.5, mu).unwrap();
        let s = ic.state();
        let r_dot = (s.y1 * s.v1 + s.y2 * s.v2) / s.r();
        assert!(r_dot.abs() < 1e-16);
    }

    #[test]
    fn periapsis_speed_reference_value() {
        let mu = MassRatio::new(0.01215).unwrap();
        let ic = PeriapsisIC::new(0.05, 0.0, 0.0, mu).unwrap();
        // independent arithmetic
        let expected = (0.01215_f64 / 0.05).sqrt() - 0.05;
        assert_relative_eq!(ic.speed(), expected, epsilon = 1e-15);
        assert!((ic.speed() - 0.44295).abs() < 1e-5);
    }

    #[test]
    fn deep_h2_point_is_stable() {
        let mu = MassRatio::new(0.01215).unwrap();
        let ic = PeriapsisIC::new(0.005, 0.0, 0.0, mu).unwrap();
        let out = classify(&ic, 4, &cfg_minimal()).unwrap();
        assert!(out.is_stable(), "verdict {:?}", out.verdict);
        assert_eq!(out.crossings.len(), 4);
        for c in &out.crossings {
            assert!(c.e2 < 0.0);
            assert!(c.theta_dot > 0.0);
        }
        // jacobi far above C1 here
        assert!(out.jacobi > 3.21);
    }

    #[test]
    fn far_side_point_cycles_p1() {
        let mu = MassRatio::new(0.00095).unwrap();
        let ic = PeriapsisIC::new(1.2, 0.0, 0.0, mu).unwrap();
        let out = classify(&ic, 1, &cfg_minimal()).unwrap();
        assert_eq!(out.unstable_kind(), Some(UnstableKind::P1Cycle), "verdict {:?}", out.verdict);
    }

    #[test]
    fn monotone_failure_prefix() {
        let mu = MassRatio::new(0.01215).unwrap();
        let ic = PeriapsisIC::new(0.02, 0.3, 0.2, mu).unwrap();
        let cfg = cfg_minimal();
        let o4 = classify(&ic, 4, &cfg).unwrap();
        if o4.is_stable() {
            for m in 1..4 {
                let om = classify(&ic, m, &cfg).unwrap();
                assert_eq!(om.verdict, Verdict::Stable { n: m });
                // crossing times agree with the prefix of the longer run
                for (a, b) in om.crossings.iter().zip(&o4.crossings) {
                    assert_relative_eq!(a.t, b.t, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn determinism_byte_identical() {
        let mu = MassRatio::new(0.01215).unwrap();
        let ic = PeriapsisIC::new(0.03, 1.1, 0.4, mu).unwrap();
        let a = classify(&ic, 3, &cfg_minimal()).unwrap();
        let b = classify(&ic, 3, &cfg_minimal()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forced_tangential_flag() {
        // with an absurd tangency tolerance every crossing is non-transversal
        let mu = MassRatio::new(0.01215).unwrap();
        let ic = PeriapsisIC::new(0.005, 0.0, 0.0, mu).unwrap();
        let cfg = IntegratorConfig { tangent_tol: 1e3, ..cfg_minimal() };
        let out = classify(&ic, 2, &cfg).unwrap();
        assert_eq!(out.unstable_kind(), Some(UnstableKind::Tangential));
        if let Verdict::Unstable { failing_cycle, .. } = out.verdict {
            assert_eq!(failing_cycle, 1);
        }
    }

    #[test]
    fn tiny_horizon_gives_non_return() {
        let mu = MassRatio::new(0.01215).unwrap();
        let ic = PeriapsisIC::new(0.01, 0.0, 0.0, mu).unwrap();
        let cfg = IntegratorConfig { t_max: 1e-3, ..cfg_minimal() };
        let out = classify(&ic, 1, &cfg).unwrap();
        assert_eq!(out.unstable_kind(), Some(UnstableKind::NonReturn));
    }

    #[test]
    fn lower_half_plane_ray_counts_windings() {
        // theta in the lower half plane exercises the wrapped-angle bookkeeping
        let mu = MassRatio::new(0.01215).unwrap();
        for theta in [std::f64::consts::PI, 4.0, 3.0 * std::f64::consts::FRAC_PI_2, 5.9] {
            let ic = PeriapsisIC::new(0.005, theta, 0.0, mu).unwrap();
            let out = classify(&ic, 3, &cfg_minimal()).unwrap();
            assert!(out.is_stable(), "theta={theta}: {:?}", out.verdict);
            assert_eq!(out.crossings.len(), 3);
            for (k, c) in out.crossings.iter().enumerate() {
                assert!((c.phi2_turns - (k + 1) as f64).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mu = MassRatio::new(0.01).unwrap();
        assert!(PeriapsisIC::new(0.0, 0.0, 0.0, mu).is_err());
        assert!(PeriapsisIC::new(0.1, 0.0, 1.0, mu).is_err());
        let ic = PeriapsisIC::new(0.1, 0.0, 0.5, mu).unwrap();
        assert!(classify(&ic, 0, &cfg_minimal()).is_err());
    }

    #[test]
    fn no_p1_cycle_above_c1() {
        // C(ic) > C1 confines the trajectory to H2: kind (i) impossible
        let mu = MassRatio::new(0.01215).unwrap();
        let eq = crate::dynamics::lagrange_points(mu).unwrap();
        let c1 = eq.jacobi[0];
        for (r, th, e) in [
            (0.004, 0.0, 0.0),
            (0.008, 1.0, 0.3),
            (0.012, 2.0, 0.6),
            (0.02, 3.0, 0.1),
            (0.03, 4.5, 0.5),
        ] {
            let ic = PeriapsisIC::new(r, th, e, mu).unwrap();
            if ic.jacobi() <= c1 {
                continue;
            }
            let out = classify(&ic, 2, &cfg_minimal()).unwrap();
            assert_ne!(out.unstable_kind(), Some(UnstableKind::P1Cycle), "ic {ic:?}");
        }
    }

    #[test]
    fn e2_diagnostic_requires_qualifying_crossing() {
        let mu = MassRatio::new(0.01215).unwrap();
        let ic = PeriapsisIC::new(0.005, 0.0, 0.0, mu).unwrap();
        let cfg = IntegratorConfig::default(); // dense
        let (out, traj) = classify_with_trajectory(&ic, 2, &cfg).unwrap();
        assert!(out.is_stable());
        // a confined trajectory never crosses left of P1
        assert!(e2_at_p1_crossing_check(&traj).is_err());
    }
}
