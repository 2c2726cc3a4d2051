//! Adaptive event-detecting propagation of the restricted three-body
//! equations with dense output and continuous winding-angle accounting
//! about both primaries.

pub mod dopri;
pub mod events;

use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::ops::ControlFlow;

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

pub use dopri::{dopri5_step, DenseSegment, StepController, StepResult};
pub use events::{EventKind, EventRecord, EventSpec, RayCrossingInfo, RayDirection};

use crate::dynamics::{
    eom_rhs_raw, jacobi_constant, kepler_energy, to_p2_frame, MassRatio, P1State,
};
use crate::error::{Error, Result};

/// What a propagation keeps in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoreMode {
    /// Nodes and per-step dense coefficients (needed for `sample`).
    Dense,
    /// Nodes only.
    Nodes,
    /// End state and angle totals only.
    Minimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Default propagation horizon in rotating-frame time units
    /// (`2 pi` = one primary revolution).
    pub t_max: f64,
    /// Collision guard radius about either primary.
    pub r_min: f64,
    /// Event-time refinement tolerance.
    pub event_tol: f64,
    /// `|theta_dot|` below this at a ray crossing flags non-transversality.
    pub tangent_tol: f64,
    pub store: StoreMode,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-12,
            h_init: 1e-4,
            h_min: 1e-15,
            h_max: 0.5,
            t_max: 200.0 * TAU,
            r_min: 1e-6,
            event_tol: 1e-12,
            tangent_tol: 1e-8,
            store: StoreMode::Dense,
            max_steps: 50_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn with_store(mut self, store: StoreMode) -> Self {
        self.store = store;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.h_min > 0.0
            && self.h_min <= self.h_init
            && self.h_init <= self.h_max
            && self.rel_tol > 0.0
            && self.abs_tol > 0.0
            && self.t_max > 0.0
            && self.event_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain("integrator config violates 0 < h_min <= h_init <= h_max, positive tolerances".into()))
        }
    }
}

/// Why a propagation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Termination {
    /// Reached the end of the requested time span.
    Completed,
    /// A terminal event fired.
    TerminalEvent { spec_index: usize, t: f64 },
    /// Hit the collision guard around a primary.
    Collision { t: f64, r: f64 },
    /// The observer requested a stop.
    ObserverStop { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryNode {
    pub t: f64,
    pub state: P1State,
    pub phi1: f64,
    pub phi2: f64,
}

/// A propagated trajectory with unwrapped polar angles `phi1` (about P1)
/// and `phi2` (about P2).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub mu: MassRatio,
    pub t0: f64,
    pub t_end: f64,
    pub start: P1State,
    pub end: P1State,
    pub phi1_start: f64,
    pub phi2_start: f64,
    pub phi1_end: f64,
    pub phi2_end: f64,
    pub nodes: Vec<TrajectoryNode>,
    pub termination: Termination,
    pub steps: usize,
    dense: Vec<DenseSegment<4>>,
}

impl Trajectory {
    /// Net turns about P1 over the whole propagation.
    pub fn p1_turns(&self) -> f64 {
        (self.phi1_end - self.phi1_start) / TAU
    }

    /// Net turns about P2.
    pub fn p2_turns(&self) -> f64 {
        (self.phi2_end - self.phi2_start) / TAU
    }

    pub fn collided(&self) -> bool {
        matches!(self.termination, Termination::Collision { .. })
    }

    /// Dense-output state at `t`; requires `StoreMode::Dense`.
    pub fn sample(&self, t: f64) -> Option<P1State> {
        let seg = self.dense.iter().find(|s| s.contains(t))?;
        Some(P1State::from_vector(&seg.eval(t)))
    }

    pub fn dense_segments(&self) -> &[DenseSegment<4>] {
        &self.dense
    }

    /// Max relative Jacobi drift across stored nodes (end state only under
    /// `StoreMode::Minimal`).
    pub fn jacobi_drift(&self) -> f64 {
        let c0 = jacobi_constant(&self.start, self.mu);
        let mut worst: f64 = (jacobi_constant(&self.end, self.mu) - c0).abs();
        for n in &self.nodes {
            worst = worst.max((jacobi_constant(&n.state, self.mu) - c0).abs());
        }
        worst / c0.abs()
    }

    /// CSV export: `t,y1,y2,v1,v2,C,E2,phi1,phi2`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,y1,y2,v1,v2,C,E2,phi1,phi2")?;
        for n in &self.nodes {
            let c = jacobi_constant(&n.state, self.mu);
            let e2 = kepler_energy(&to_p2_frame(&n.state), self.mu).unwrap_or(f64::NAN);
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                n.t, n.state.y1, n.state.y2, n.state.v1, n.state.v2, c, e2, n.phi1, n.phi2
            )?;
        }
        Ok(())
    }
}

#[inline]
fn wrap_angle(a: f64) -> f64 {
    let mut x = a % TAU;
    if x > PI {
        x -= TAU;
    } else if x <= -PI {
        x += TAU;
    }
    x
}

#[inline]
fn theta_p1(y: &Vector4<f64>) -> f64 {
    y[1].atan2(y[0])
}

#[inline]
fn theta_p2(y: &Vector4<f64>) -> f64 {
    y[1].atan2(y[0] - 1.0)
}

#[inline]
fn r_p1(y: &Vector4<f64>) -> f64 {
    (y[0] * y[0] + y[1] * y[1]).sqrt()
}

#[inline]
fn r_p2(y: &Vector4<f64>) -> f64 {
    let dx = y[0] - 1.0;
    (dx * dx + y[1] * y[1]).sqrt()
}

#[inline]
fn theta_dot_p2(y: &Vector4<f64>) -> f64 {
    let dx = y[0] - 1.0;
    (dx * y[3] - y[1] * y[2]) / (dx * dx + y[1] * y[1])
}

#[inline]
fn theta_dot_p1(y: &Vector4<f64>) -> f64 {
    (y[0] * y[3] - y[1] * y[2]) / (y[0] * y[0] + y[1] * y[1])
}

/// Propagate over an explicit time span (either direction). Stops early
/// only at the collision guard.
pub fn propagate(
    state: &P1State,
    t_span: (f64, f64),
    mu: MassRatio,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let (traj, _) = propagate_observed(state, t_span, mu, cfg, &[], |_| ControlFlow::Continue(()))?;
    Ok(traj)
}

/// Propagate forward from `t = 0` to `cfg.t_max` with event detection.
/// Terminal events stop the run; all refined events are returned in order.
pub fn propagate_events(
    state: &P1State,
    mu: MassRatio,
    cfg: &IntegratorConfig,
    events: &[EventSpec],
) -> Result<(Trajectory, Vec<EventRecord>)> {
    propagate_observed(state, (0.0, cfg.t_max), mu, cfg, events, |_| ControlFlow::Continue(()))
}

struct Sample {
    t: f64,
    y: Vector4<f64>,
    phi1: f64,
    phi2: f64,
}

/// Core propagation loop: adaptive stepping, per-step angle accounting on
/// dense output, event detection and refinement, observer control.
///
/// The observer sees every refined non-collision event record (including
/// ones from non-terminal specs) and may stop the run.
pub fn propagate_observed(
    state: &P1State,
    t_span: (f64, f64),
    mu: MassRatio,
    cfg: &IntegratorConfig,
    specs: &[EventSpec],
    mut observer: impl FnMut(&EventRecord) -> ControlFlow<()>,
) -> Result<(Trajectory, Vec<EventRecord>)> {
    cfg.validate()?;
    let (t0, t1) = t_span;
    if !t0.is_finite() || !t1.is_finite() || t0 == t1 {
        return Err(Error::Domain(format!("invalid time span ({t0}, {t1})")));
    }
    let dir = (t1 - t0).signum();
    let rhs = |_t: f64, y: &Vector4<f64>| eom_rhs_raw(y, mu);

    let mut t = t0;
    let mut y = state.to_vector();
    let mut phi1 = theta_p1(&y);
    let mut phi2 = theta_p2(&y);
    let phi1_start = phi1;
    let phi2_start = phi2;

    let mut traj = Trajectory {
        mu,
        t0,
        t_end: t0,
        start: *state,
        end: *state,
        phi1_start,
        phi2_start,
        phi1_end: phi1,
        phi2_end: phi2,
        nodes: Vec::new(),
        termination: Termination::Completed,
        steps: 0,
        dense: Vec::new(),
    };
    if traj.start.r1() < cfg.r_min || traj.start.r2() < cfg.r_min {
        return Err(Error::CollisionGuard { t: t0, r: traj.start.r1().min(traj.start.r2()) });
    }
    if !matches!(cfg.store, StoreMode::Minimal) {
        traj.nodes.push(TrajectoryNode { t, state: *state, phi1, phi2 });
    }

    let mut records: Vec<EventRecord> = Vec::new();
    let mut winding_fired = vec![false; specs.len()];
    let mut controller = StepController::new();
    let mut k1 = rhs(t, &y);
    let mut h = cfg.h_init.min(cfg.h_max) * dir;
    let mut samples: Vec<Sample> = Vec::with_capacity(16);

    'outer: loop {
        if traj.steps >= cfg.max_steps {
            return Err(Error::StepLimit(t));
        }
        // clip the final step
        let remaining = t1 - t;
        let mut last = false;
        if remaining.abs() <= h.abs() {
            h = remaining;
            last = true;
        }

        let res = dopri5_step(&rhs, t, &y, &k1, h, cfg.rel_tol, cfg.abs_tol);
        traj.steps += 1;
        if !res.err.is_finite() || res.err > 1.0 {
            let h_new = if res.err.is_finite() {
                controller.reject(res.err, h)
            } else {
                0.5 * h
            };
            if h_new.abs() < cfg.h_min {
                return Err(Error::StepUnderflow { t, h: h_new.abs() });
            }
            h = h_new;
            last = false;
            let _ = last;
            continue;
        }

        // accepted: build angle samples over the step
        let t_next = t + h;
        build_samples(&res.dense, t, t_next, &y, phi1, phi2, &mut samples);

        // detect events over consecutive samples, in time order
        let mut stop: Option<Termination> = None;
        let mut stop_t = t_next;
        'samples: for w in 1..samples.len() {
            let (a, b) = (&samples[w - 1], &samples[w]);
            // built-in collision guard
            let ga = r_p1(&a.y).min(r_p2(&a.y)) - cfg.r_min;
            let gb = r_p1(&b.y).min(r_p2(&b.y)) - cfg.r_min;
            let mut window: Vec<(f64, usize)> = Vec::new(); // (t, spec or collision marker)
            const COLLISION: usize = usize::MAX;
            if ga > 0.0 && gb <= 0.0 {
                let tc = refine_zero(
                    |tt| r_p1(&res.dense.eval(tt)).min(r_p2(&res.dense.eval(tt))) - cfg.r_min,
                    a.t,
                    b.t,
                    ga,
                    cfg.event_tol,
                );
                window.push((tc, COLLISION));
            }
            for (si, spec) in specs.iter().enumerate() {
                if let Some(tc) =
                    detect_event(spec, si, a, b, &res.dense, cfg, &winding_fired, phi1_start, phi2_start)
                {
                    window.push((tc, si));
                }
            }
            if window.is_empty() {
                continue;
            }
            window.sort_by(|p, q| {
                (dir * p.0)
                    .partial_cmp(&(dir * q.0))
                    .unwrap()
                    .then(p.1.cmp(&q.1))
            });
            for (tc, si) in window {
                if si == COLLISION {
                    let r = {
                        let yc = res.dense.eval(tc);
                        r_p1(&yc).min(r_p2(&yc))
                    };
                    stop = Some(Termination::Collision { t: tc, r });
                    stop_t = tc;
                    break 'samples;
                }
                let yc = res.dense.eval(tc);
                let phi1_c = a.phi1 + wrap_angle(theta_p1(&yc) - theta_p1(&a.y));
                let phi2_c = a.phi2 + wrap_angle(theta_p2(&yc) - theta_p2(&a.y));
                let ray = match specs[si].kind {
                    EventKind::Ray { direction, .. } => {
                        let info = ray_info(&yc, mu, cfg);
                        if direction == RayDirection::PosigradeOnly && !info.posigrade {
                            continue;
                        }
                        Some(info)
                    }
                    EventKind::NegativeXAxis => None,
                    EventKind::WindingP1 { .. } | EventKind::WindingP2 { .. } => {
                        winding_fired[si] = true;
                        None
                    }
                    EventKind::Escape { .. } | EventKind::Approach { .. } => None,
                };
                let rec = EventRecord {
                    spec_index: si,
                    t: tc,
                    state: P1State::from_vector(&yc),
                    phi1: phi1_c,
                    phi2: phi2_c,
                    ray,
                };
                records.push(rec);
                if specs[si].terminal {
                    stop = Some(Termination::TerminalEvent { spec_index: si, t: tc });
                    stop_t = tc;
                    break 'samples;
                }
                if observer(&rec).is_break() {
                    stop = Some(Termination::ObserverStop { t: tc });
                    stop_t = tc;
                    break 'samples;
                }
            }
        }

        if let Some(term) = stop {
            let yc = res.dense.eval(stop_t);
            // angle totals up to the stop time
            let mut p1 = phi1;
            let mut p2 = phi2;
            for w in 1..samples.len() {
                let (a, b) = (&samples[w - 1], &samples[w]);
                if (b.t - stop_t) * dir <= 0.0 {
                    p1 = b.phi1;
                    p2 = b.phi2;
                } else {
                    p1 = a.phi1 + wrap_angle(theta_p1(&yc) - theta_p1(&a.y));
                    p2 = a.phi2 + wrap_angle(theta_p2(&yc) - theta_p2(&a.y));
                    break;
                }
            }
            traj.t_end = stop_t;
            traj.end = P1State::from_vector(&yc);
            traj.phi1_end = p1;
            traj.phi2_end = p2;
            traj.termination = term;
            if !matches!(cfg.store, StoreMode::Minimal) {
                traj.nodes.push(TrajectoryNode { t: stop_t, state: traj.end, phi1: p1, phi2: p2 });
            }
            if matches!(cfg.store, StoreMode::Dense) {
                traj.dense.push(res.dense);
            }
            break 'outer;
        }

        // commit the step
        t = t_next;
        y = res.y_new;
        k1 = res.k_last;
        let tail = samples.last().unwrap();
        phi1 = tail.phi1;
        phi2 = tail.phi2;
        if !matches!(cfg.store, StoreMode::Minimal) {
            traj.nodes.push(TrajectoryNode { t, state: P1State::from_vector(&y), phi1, phi2 });
        }
        if matches!(cfg.store, StoreMode::Dense) {
            traj.dense.push(res.dense);
        }
        if last {
            traj.t_end = t;
            traj.end = P1State::from_vector(&y);
            traj.phi1_end = phi1;
            traj.phi2_end = phi2;
            traj.termination = Termination::Completed;
            break 'outer;
        }
        let h_new = controller.accept(res.err, h);
        h = h_new.abs().clamp(cfg.h_min, cfg.h_max) * dir;
    }

    Ok((traj, records))
}

/// Subdivide one accepted step finely enough that consecutive samples sweep
/// less than ~0.3 rad about either primary, and accumulate unwrapped angles.
fn build_samples(
    dense: &DenseSegment<4>,
    t_a: f64,
    t_b: f64,
    y_a: &Vector4<f64>,
    phi1_a: f64,
    phi2_a: f64,
    out: &mut Vec<Sample>,
) {
    const TARGET: f64 = 0.3;
    let h = t_b - t_a;
    let mut rate: f64 = 0.0;
    for k in 0..=4 {
        let yt = if k == 0 { *y_a } else { dense.eval(t_a + h * k as f64 / 4.0) };
        rate = rate.max(theta_dot_p1(&yt).abs()).max(theta_dot_p2(&yt).abs());
    }
    let n_sub = ((h.abs() * rate * 2.0 / TARGET).ceil() as usize).clamp(1, 4096);

    out.clear();
    out.push(Sample { t: t_a, y: *y_a, phi1: phi1_a, phi2: phi2_a });
    for k in 1..=n_sub {
        let tk = t_a + h * k as f64 / n_sub as f64;
        let yk = dense.eval(tk);
        let prev = out.last().unwrap();
        let d1 = wrap_angle(theta_p1(&yk) - theta_p1(&prev.y));
        let d2 = wrap_angle(theta_p2(&yk) - theta_p2(&prev.y));
        debug_assert!(d1.abs() < 1.5 && d2.abs() < 1.5, "angle sampling too coarse");
        let s = Sample { t: tk, y: yk, phi1: prev.phi1 + d1, phi2: prev.phi2 + d2 };
        out.push(s);
    }
}

/// Detect whether `spec` fires between samples `a` and `b`; returns the
/// refined event time.
#[allow(clippy::too_many_arguments)]
fn detect_event(
    spec: &EventSpec,
    si: usize,
    a: &Sample,
    b: &Sample,
    dense: &DenseSegment<4>,
    cfg: &IntegratorConfig,
    winding_fired: &[bool],
    phi1_start: f64,
    phi2_start: f64,
) -> Option<f64> {
    match spec.kind {
        EventKind::Ray { theta0, .. } => {
            let da = wrap_angle(theta_p2(&a.y) - theta0);
            let db = wrap_angle(theta_p2(&b.y) - theta0);
            // hemisphere guard keeps the anti-ray out
            if da.abs() >= PI / 2.0 || db.abs() >= PI / 2.0 {
                return None;
            }
            if da == 0.0 || da * db >= 0.0 {
                return None;
            }
            Some(refine_zero(
                |t| wrap_angle(theta_p2(&dense.eval(t)) - theta0),
                a.t,
                b.t,
                da,
                cfg.event_tol,
            ))
        }
        EventKind::NegativeXAxis => {
            if a.y[1] == 0.0 || a.y[1] * b.y[1] >= 0.0 {
                return None;
            }
            // left of P1 in the P2-centered chart means y1 < 0 here
            if a.y[0] >= 0.0 && b.y[0] >= 0.0 {
                return None;
            }
            let tc = refine_zero(|t| dense.eval(t)[1], a.t, b.t, a.y[1], cfg.event_tol);
            (dense.eval(tc)[0] < 0.0).then_some(tc)
        }
        EventKind::WindingP1 { turns } => {
            if winding_fired[si] {
                return None;
            }
            let tau = TAU * turns;
            let qa = (a.phi1 - phi1_start).abs() - tau;
            let qb = (b.phi1 - phi1_start).abs() - tau;
            if qa >= 0.0 || qb < 0.0 {
                return None;
            }
            let ta1 = theta_p1(&a.y);
            Some(refine_zero(
                |t| (a.phi1 + wrap_angle(theta_p1(&dense.eval(t)) - ta1) - phi1_start).abs() - tau,
                a.t,
                b.t,
                qa,
                cfg.event_tol,
            ))
        }
        EventKind::WindingP2 { turns } => {
            if winding_fired[si] {
                return None;
            }
            let tau = TAU * turns;
            let qa = (a.phi2 - phi2_start).abs() - tau;
            let qb = (b.phi2 - phi2_start).abs() - tau;
            if qa >= 0.0 || qb < 0.0 {
                return None;
            }
            let ta2 = theta_p2(&a.y);
            Some(refine_zero(
                |t| (a.phi2 + wrap_angle(theta_p2(&dense.eval(t)) - ta2) - phi2_start).abs() - tau,
                a.t,
                b.t,
                qa,
                cfg.event_tol,
            ))
        }
        EventKind::Escape { radius } => {
            let ga = r_p2(&a.y) - radius;
            let gb = r_p2(&b.y) - radius;
            if ga >= 0.0 || gb < 0.0 {
                return None;
            }
            Some(refine_zero(
                |t| r_p2(&dense.eval(t)) - radius,
                a.t,
                b.t,
                ga,
                cfg.event_tol,
            ))
        }
        EventKind::Approach { radius } => {
            let ga = r_p2(&a.y) - radius;
            let gb = r_p2(&b.y) - radius;
            if ga <= 0.0 || gb > 0.0 {
                return None;
            }
            Some(refine_zero(
                |t| r_p2(&dense.eval(t)) - radius,
                a.t,
                b.t,
                ga,
                cfg.event_tol,
            ))
        }
    }
}

/// Polar quantities captured at a refined ray crossing.
fn ray_info(y: &Vector4<f64>, mu: MassRatio, cfg: &IntegratorConfig) -> RayCrossingInfo {
    let s = to_p2_frame(&P1State::from_vector(y));
    let (r, _, r_dot, theta_dot) = crate::dynamics::to_polar(&s);
    let e2 = kepler_energy(&s, mu).unwrap_or(f64::NAN);
    RayCrossingInfo {
        r,
        r_dot,
        theta_dot,
        e2,
        posigrade: theta_dot > 0.0,
        tangential: theta_dot.abs() < cfg.tangent_tol,
    }
}

/// Bisection refinement of a bracketed sign change of `g` to `|dt| < tol`.
fn refine_zero(g: impl Fn(f64) -> f64, mut ta: f64, mut tb: f64, ga: f64, tol: f64) -> f64 {
    let sa = ga > 0.0;
    let mut guard = 0;
    while (tb - ta).abs() > tol && guard < 200 {
        let tm = 0.5 * (ta + tb);
        let gm = g(tm);
        if (gm > 0.0) == sa {
            ta = tm;
        } else {
            tb = tm;
        }
        guard += 1;
    }
    0.5 * (ta + tb)
}
