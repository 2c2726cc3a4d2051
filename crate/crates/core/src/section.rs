//! Poincaré surface of section at fixed Jacobi constant: the half-plane
//! `theta = theta0` with coordinates `(r, r_dot)` and `theta_dot > 0`,
//! the first-return map on it, and bounded/unbounded iterate classification.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    jacobi_constant_p2, jacobi_positional_p2, kepler_energy, lagrange_points, to_p1_frame,
    to_p2_frame, to_polar, MassRatio, RotState,
};
use crate::error::{Error, Result};
use crate::integrate::{
    propagate_events, EventKind, EventSpec, IntegratorConfig, RayDirection, StoreMode, Termination,
};
use crate::wsb::PeriapsisIC;

/// Escape radius for section work, as a multiple of the P2–L2 distance.
pub const ESCAPE_FACTOR: f64 = 1.5;

/// A point of the section `theta = theta0` on the energy level `C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionPoint {
    pub r: f64,
    pub r_dot: f64,
    pub theta0: f64,
    pub c: f64,
    pub mu: MassRatio,
}

/// Solve the P2-centered Jacobi relation for the angular rate on the
/// section and return the positive root.
///
/// In polar variables the Jacobi function is
/// `C = f(r, theta) - r_dot^2 - r^2 theta_dot^2` with `f` the positional
/// part, so `theta_dot^2 = (f - C - r_dot^2) / r^2`.
pub fn theta_dot_on_section(r: f64, r_dot: f64, theta0: f64, c: f64, mu: MassRatio) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("section radius r = {r} must be positive")));
    }
    let f = jacobi_positional_p2(r * theta0.cos(), r * theta0.sin(), mu);
    let td_sq = (f - c - r_dot * r_dot) / (r * r);
    if td_sq <= 0.0 {
        return Err(Error::OffSection(td_sq));
    }
    Ok(td_sq.sqrt())
}

impl SectionPoint {
    /// Validates membership in the section (a real, positive angular rate).
    pub fn new(r: f64, r_dot: f64, theta0: f64, c: f64, mu: MassRatio) -> Result<Self> {
        theta_dot_on_section(r, r_dot, theta0, c, mu)?;
        Ok(Self { r, r_dot, theta0, c, mu })
    }

    /// Full P2-centered state with the reconstructed angular rate.
    pub fn lift(&self) -> Result<RotState> {
        lift(self)
    }

    pub fn kepler_energy(&self) -> Result<f64> {
        kepler_energy(&self.lift()?, self.mu)
    }
}

/// Reconstruct the full rotating-frame state of a section point.
pub fn lift(p: &SectionPoint) -> Result<RotState> {
    if p.r < crate::dynamics::R_MIN_DEFAULT {
        return Err(Error::CollisionGuard { t: 0.0, r: p.r });
    }
    let theta_dot = theta_dot_on_section(p.r, p.r_dot, p.theta0, p.c, p.mu)?;
    let (s, c) = p.theta0.sin_cos();
    Ok(RotState::new(
        p.r * c,
        p.r * s,
        p.r_dot * c - p.r * theta_dot * s,
        p.r_dot * s + p.r * theta_dot * c,
    ))
}

/// First-return map to the section: propagate the lifted state to the next
/// posigrade crossing of the ray.
///
/// Retrograde ray intersections are skipped. The returned point carries the
/// measured Jacobi constant (preserved to integration drift) and the flight
/// time to the crossing.
pub fn poincare_map(p: &SectionPoint, cfg: &IntegratorConfig) -> Result<(SectionPoint, f64)> {
    let state = lift(p)?;
    let eq = lagrange_points(p.mu)?;
    let esc = ESCAPE_FACTOR * eq.p2_l2_distance();
    let cfg_run = cfg.with_store(StoreMode::Minimal);
    let specs = [
        EventSpec::ray(p.theta0, RayDirection::PosigradeOnly).terminal(),
        EventSpec { kind: EventKind::Escape { radius: esc }, terminal: true },
    ];
    let (traj, recs) = propagate_events(&to_p1_frame(&state), p.mu, &cfg_run, &specs)?;
    match traj.termination {
        Termination::TerminalEvent { spec_index: 0, t } => {
            let rec = recs.iter().rfind(|r| r.spec_index == 0).expect("ray record");
            let s2 = to_p2_frame(&rec.state);
            let (r, _, r_dot, _) = to_polar(&s2);
            let c = jacobi_constant_p2(&s2, p.mu);
            Ok((SectionPoint { r, r_dot, theta0: p.theta0, c, mu: p.mu }, t))
        }
        Termination::TerminalEvent { .. } => {
            let rec = recs.iter().rfind(|r| r.spec_index == 1).expect("escape record");
            Err(Error::Escaped { r: to_p2_frame(&rec.state).r(), limit: esc })
        }
        Termination::Collision { t, r } => Err(Error::CollisionGuard { t, r }),
        _ => Err(Error::NoReturn(cfg_run.t_max)),
    }
}

/// Why an iterate orbit stopped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IterateTermination {
    /// Reached `k_max` with every iterate radius below the escape bound.
    Bounded,
    /// A returned iterate exceeded the bound `rho` (P2–L2 distance).
    EscapedIterate { k: usize },
    /// The trajectory left the P2 region mid-flight and never returned.
    LeftRegion { k: usize },
    /// No return to the section within the time horizon.
    NoReturn { k: usize },
    /// Collision guard hit mid-flight.
    Collision { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub k: usize,
    pub r: f64,
    pub r_dot: f64,
    /// Flight time from the previous iterate (0 for `k = 0`).
    pub t_flight: f64,
    pub e2: f64,
    pub c: f64,
}

/// The orbit of a section point under the return map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateOrbit {
    pub theta0: f64,
    pub mu: MassRatio,
    pub iterates: Vec<Iterate>,
    pub termination: IterateTermination,
    /// The escape bound used (the P2–L2 distance).
    pub rho: f64,
}

impl IterateOrbit {
    pub fn bounded(&self) -> bool {
        matches!(self.termination, IterateTermination::Bounded)
    }

    pub fn all_e2_negative(&self) -> bool {
        self.iterates.iter().all(|i| i.e2 < 0.0)
    }

    /// CSV export: `k,r,rdot,t_flight,E2,C`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,r,rdot,t_flight,E2,C")?;
        for it in &self.iterates {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                it.k, it.r, it.r_dot, it.t_flight, it.e2, it.c
            )?;
        }
        Ok(())
    }
}

/// Iterate the return map up to `k_max` times, classifying the orbit as
/// bounded or unbounded with the P2–L2 distance as the radial bound.
pub fn iterate(p: &SectionPoint, k_max: usize, cfg: &IntegratorConfig) -> Result<IterateOrbit> {
    let eq = lagrange_points(p.mu)?;
    let rho = eq.p2_l2_distance();
    let mut current = *p;
    let mut orbit = IterateOrbit {
        theta0: p.theta0,
        mu: p.mu,
        iterates: vec![Iterate {
            k: 0,
            r: p.r,
            r_dot: p.r_dot,
            t_flight: 0.0,
            e2: kepler_energy(&lift(p)?, p.mu)?,
            c: p.c,
        }],
        termination: IterateTermination::Bounded,
        rho,
    };
    if p.r.abs() > rho {
        orbit.termination = IterateTermination::EscapedIterate { k: 0 };
        return Ok(orbit);
    }
    for k in 1..=k_max {
        match poincare_map(&current, cfg) {
            Ok((next, t)) => {
                orbit.iterates.push(Iterate {
                    k,
                    r: next.r,
                    r_dot: next.r_dot,
                    t_flight: t,
                    e2: kepler_energy(&lift(&next)?, next.mu)?,
                    c: next.c,
                });
                if next.r.abs() > rho {
                    orbit.termination = IterateTermination::EscapedIterate { k };
                    return Ok(orbit);
                }
                current = next;
            }
            Err(Error::Escaped { .. }) => {
                orbit.termination = IterateTermination::LeftRegion { k };
                return Ok(orbit);
            }
            Err(Error::NoReturn(_)) => {
                orbit.termination = IterateTermination::NoReturn { k };
                return Ok(orbit);
            }
            Err(Error::CollisionGuard { .. }) => {
                orbit.termination = IterateTermination::Collision { k };
                return Ok(orbit);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(orbit)
}

/// Iterate a periapsis initial condition (a stable-set point) on its own
/// section, logging `E2` per iterate.
pub fn sstar_orbit(ic: &PeriapsisIC, k_max: usize, cfg: &IntegratorConfig) -> Result<IterateOrbit> {
    let p = SectionPoint::new(ic.r, 0.0, ic.theta, ic.jacobi(), ic.mu)?;
    iterate(&p, k_max, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::propagate;
    use approx::assert_relative_eq;

    fn mu_em() -> MassRatio {
        MassRatio::new(0.01215).unwrap()
    }

    fn fast_cfg() -> IntegratorConfig {
        IntegratorConfig {
            t_max: 40.0 * std::f64::consts::TAU,
            store: StoreMode::Minimal,
            ..Default::default()
        }
    }

    #[test]
    fn theta_dot_round_trip_from_integrated_states() {
        let mu = mu_em();
        let ic = PeriapsisIC::new(0.02, 0.4, 0.3, mu).unwrap();
        let cfg = IntegratorConfig::default();
        let traj = propagate(&to_p1_frame(&ic.state()), (0.0, 2.0), mu, &cfg).unwrap();
        let mut checked = 0;
        for node in traj.nodes.iter().step_by(3) {
            let s = to_p2_frame(&node.state);
            let (r, th, r_dot, theta_dot) = to_polar(&s);
            if theta_dot <= 0.0 {
                continue;
            }
            let c = jacobi_constant_p2(&s, mu);
            let rec = theta_dot_on_section(r, r_dot, th, c, mu).unwrap();
            assert!(
                (rec - theta_dot).abs() < 1e-10 * theta_dot.abs().max(1.0),
                "reconstructed {rec} vs actual {theta_dot}"
            );
            checked += 1;
        }
        assert!(checked > 20, "too few samples checked: {checked}");
    }

    #[test]
    fn large_rdot_is_off_section() {
        let mu = mu_em();
        let err = theta_dot_on_section(0.05, 10.0, 0.0, 3.2, mu).unwrap_err();
        assert!(matches!(err, Error::OffSection(_)));
    }

    #[test]
    fn periapsis_theta_dot_closed_form() {
        // on-section rate of a periapsis point equals v / r in the rotating frame
        let mu = mu_em();
        let ic = PeriapsisIC::new(0.03, 1.2, 0.25, mu).unwrap();
        let td = theta_dot_on_section(ic.r, 0.0, ic.theta, ic.jacobi(), mu).unwrap();
        assert_relative_eq!(td, ic.speed() / ic.r, epsilon = 1e-11, max_relative = 1e-11);
    }

    #[test]
    fn lift_round_trip() {
        let mu = mu_em();
        let p = SectionPoint::new(0.04, 0.01, 0.7, 3.25, mu).unwrap();
        let s = lift(&p).unwrap();
        let (r, th, r_dot, _) = to_polar(&s);
        assert_relative_eq!(r, p.r, epsilon = 1e-12);
        assert_relative_eq!(th, p.theta0, epsilon = 1e-12);
        assert_relative_eq!(r_dot, p.r_dot, epsilon = 1e-12);
        assert_relative_eq!(jacobi_constant_p2(&s, mu), p.c, epsilon = 1e-12);
    }

    #[test]
    fn lift_of_periapsis_matches_state() {
        let mu = mu_em();
        let ic = PeriapsisIC::new(0.025, 2.2, 0.4, mu).unwrap();
        let p = SectionPoint::new(ic.r, 0.0, ic.theta, ic.jacobi(), mu).unwrap();
        let a = lift(&p).unwrap();
        let b = ic.state();
        assert_relative_eq!(a.y1, b.y1, epsilon = 1e-12);
        assert_relative_eq!(a.y2, b.y2, epsilon = 1e-12);
        assert_relative_eq!(a.v1, b.v1, epsilon = 1e-12, max_relative = 1e-10);
        assert_relative_eq!(a.v2, b.v2, epsilon = 1e-12, max_relative = 1e-10);
    }

    #[test]
    fn lift_inside_guard_rejected() {
        let mu = mu_em();
        let p = SectionPoint { r: 1e-8, r_dot: 0.0, theta0: 0.0, c: 3.2, mu };
        assert!(matches!(lift(&p), Err(Error::CollisionGuard { .. })));
    }

    #[test]
    fn map_preserves_jacobi() {
        let mu = mu_em();
        let ic = PeriapsisIC::new(0.02, 0.0, 0.1, mu).unwrap();
        let p = SectionPoint::new(ic.r, 0.0, ic.theta, ic.jacobi(), mu).unwrap();
        let (q, t) = poincare_map(&p, &fast_cfg()).unwrap();
        assert!(t > 0.0);
        assert!((q.c - p.c).abs() < 1e-9, "drift {}", (q.c - p.c).abs());
        // near-circular orbit returns near the same radius
        assert!((q.r - p.r).abs() < 0.1 * p.r, "returned r {} vs {}", q.r, p.r);
    }

    #[test]
    fn deep_orbit_bounded_for_many_iterates() {
        let mu = mu_em();
        let ic = PeriapsisIC::new(0.008, 0.0, 0.0, mu).unwrap();
        assert!(ic.jacobi() > 3.21, "not deep enough");
        let orbit = sstar_orbit(&ic, 50, &fast_cfg()).unwrap();
        assert!(orbit.bounded(), "termination {:?}", orbit.termination);
        assert_eq!(orbit.iterates.len(), 51);
        assert!(orbit.all_e2_negative());
        // iterates wander off the r_dot = 0 axis
        assert!(orbit.iterates.iter().any(|i| i.r_dot.abs() > 1e-6));
    }

    #[test]
    fn zero_iterations_trivial_orbit() {
        let mu = mu_em();
        let ic = PeriapsisIC::new(0.01, 1.0, 0.3, mu).unwrap();
        let orbit = sstar_orbit(&ic, 0, &fast_cfg()).unwrap();
        assert_eq!(orbit.iterates.len(), 1);
        assert!(orbit.bounded());
        assert_relative_eq!(orbit.iterates[0].e2, ic.initial_e2(), epsilon = 1e-12);
    }

    #[test]
    fn unstable_point_escapes_or_no_return() {
        // a kind-(i) unstable initial condition in the low-C regime
        let mu = MassRatio::new(0.00095).unwrap();
        let ic = PeriapsisIC::new(0.06, 0.0, 0.0, mu).unwrap();
        let out = crate::wsb::classify(&ic, 1, &fast_cfg()).unwrap();
        assert!(!out.is_stable(), "expected unstable seed, got {:?}", out.verdict);
        let orbit = sstar_orbit(&ic, 30, &fast_cfg()).unwrap();
        assert!(
            matches!(
                orbit.termination,
                IterateTermination::EscapedIterate { .. }
                    | IterateTermination::LeftRegion { .. }
                    | IterateTermination::NoReturn { .. }
            ),
            "termination {:?}",
            orbit.termination
        );
    }

    #[test]
    fn iterate_csv_shape() {
        let mu = mu_em();
        let ic = PeriapsisIC::new(0.01, 0.0, 0.0, mu).unwrap();
        let orbit = sstar_orbit(&ic, 3, &fast_cfg()).unwrap();
        let mut buf = Vec::new();
        orbit.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,r,rdot,t_flight,E2,C"));
        assert_eq!(text.lines().count(), 1 + orbit.iterates.len());
    }
}
