//! Lyapunov orbits about the collinear points by differential correction,
//! their monodromy analysis, stable/unstable manifold globalization,
//! section cuts, and the cross-check of refined stability boundaries
//! against stable-manifold intersections with the periapsis axis.

use std::io::Write;
use std::ops::ControlFlow;

use nalgebra::{Matrix4, SVector, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    eom_jacobian, eom_rhs_raw, jacobi_constant, lagrange_points, to_p2_frame, MassRatio, P1State,
};
use crate::error::{Error, Result};
use crate::integrate::{
    dopri::propagate_fixed, dopri5_step, propagate, propagate_observed, EventKind, EventSpec,
    IntegratorConfig, RayDirection, StepController, StoreMode, Trajectory,
};
use crate::sweep::{refine_scan_boundaries, radial_scan, BoundaryRecord, ScanParams};
use crate::section::theta_dot_on_section;

const MAX_NEWTON: usize = 25;
const CORRECTOR_TOL: f64 = 1e-11;

/// Which collinear neck an orbit belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Neck {
    L1,
    L2,
}

/// A corrected planar Lyapunov orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovOrbit {
    pub mu: MassRatio,
    pub neck: Neck,
    /// Perpendicular axis crossing: `y2 = 0`, `v1 = 0`.
    pub initial: P1State,
    pub period: f64,
    pub c: f64,
    pub monodromy: Matrix4<f64>,
    /// `|flow(initial, period) - initial|`.
    pub periodicity_residual: f64,
}

/// 20-dimensional state + state-transition-matrix system.
fn variational_system(mu: MassRatio) -> impl Fn(f64, &SVector<f64, 20>) -> SVector<f64, 20> {
    move |_t, y| {
        let s = P1State::new(y[0], y[1], y[2], y[3]);
        let ds = eom_rhs_raw(&Vector4::new(y[0], y[1], y[2], y[3]), mu);
        let a = eom_jacobian(&s, mu);
        let mut out = SVector::<f64, 20>::zeros();
        for i in 0..4 {
            out[i] = ds[i];
        }
        // STM stored column-major in y[4..20]
        for col in 0..4 {
            for row in 0..4 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a[(row, k)] * y[4 + col * 4 + k];
                }
                out[4 + col * 4 + row] = acc;
            }
        }
        out
    }
}

fn pack_variational(state: &P1State, stm: &Matrix4<f64>) -> SVector<f64, 20> {
    let mut y = SVector::<f64, 20>::zeros();
    y[0] = state.y1;
    y[1] = state.y2;
    y[2] = state.v1;
    y[3] = state.v2;
    for col in 0..4 {
        for row in 0..4 {
            y[4 + col * 4 + row] = stm[(row, col)];
        }
    }
    y
}

fn unpack_variational(y: &SVector<f64, 20>) -> (P1State, Matrix4<f64>) {
    let state = P1State::new(y[0], y[1], y[2], y[3]);
    let mut stm = Matrix4::zeros();
    for col in 0..4 {
        for row in 0..4 {
            stm[(row, col)] = y[4 + col * 4 + row];
        }
    }
    (state, stm)
}

/// Propagate state + STM to the first `y2 = 0` crossing after departure.
fn variational_to_axis_crossing(
    state: &P1State,
    mu: MassRatio,
    cfg: &IntegratorConfig,
) -> Result<(f64, P1State, Matrix4<f64>)> {
    let f = variational_system(mu);
    let mut y = pack_variational(state, &Matrix4::identity());
    let mut t = 0.0;
    let mut k1 = f(t, &y);
    let mut h = cfg.h_init;
    let mut controller = StepController::new();
    let mut steps = 0;
    loop {
        steps += 1;
        if steps > 5_000_000 {
            return Err(Error::StepLimit(t));
        }
        let res = dopri5_step(&f, t, &y, &k1, h, cfg.rel_tol, cfg.abs_tol);
        if !res.err.is_finite() || res.err > 1.0 {
            let h_new = if res.err.is_finite() { controller.reject(res.err, h) } else { 0.5 * h };
            if h_new.abs() < cfg.h_min {
                return Err(Error::StepUnderflow { t, h: h_new.abs() });
            }
            h = h_new;
            continue;
        }
        let y2_a = y[1];
        let y2_b = res.y_new[1];
        if y2_a != 0.0 && y2_a * y2_b < 0.0 {
            // refine the crossing on dense output
            let mut ta = t;
            let mut tb = t + h;
            let sa = y2_a > 0.0;
            for _ in 0..200 {
                if (tb - ta).abs() < cfg.event_tol {
                    break;
                }
                let tm = 0.5 * (ta + tb);
                if (res.dense.eval(tm)[1] > 0.0) == sa {
                    ta = tm;
                } else {
                    tb = tm;
                }
            }
            let tc = 0.5 * (ta + tb);
            let (s, stm) = unpack_variational(&res.dense.eval(tc));
            return Ok((tc, s, stm));
        }
        t += h;
        y = res.y_new;
        k1 = res.k_last;
        if t > cfg.t_max {
            return Err(Error::NoReturn(cfg.t_max));
        }
        h = controller.accept(res.err, h).clamp(cfg.h_min, cfg.h_max);
    }
}

/// Frequency and amplitude ratio of the linearized center mode at a
/// collinear point located at `lx` (P1-centered chart).
fn center_mode(lx: f64, mu: MassRatio) -> (f64, f64) {
    let m = mu.value();
    let d1 = lx.abs();
    let d2 = (lx - 1.0).abs();
    let cbar = (1.0 - m) / (d1 * d1 * d1) + m / (d2 * d2 * d2);
    let nu_sq = 0.5 * ((2.0 - cbar) + (9.0 * cbar * cbar - 8.0 * cbar).sqrt());
    let nu = nu_sq.sqrt();
    let kappa = (nu_sq + 1.0 + 2.0 * cbar) / (2.0 * nu);
    (nu, kappa)
}

/// Linearized initial guess for a Lyapunov orbit of x-amplitude `ax`.
pub fn lyapunov_seed(mu: MassRatio, neck: Neck, ax: f64) -> Result<(f64, f64)> {
    let eq = lagrange_points(mu)?;
    let lx = match neck {
        Neck::L1 => eq.positions[0].0,
        Neck::L2 => eq.positions[1].0,
    };
    let (nu, kappa) = center_mode(lx, mu);
    Ok((lx - ax, kappa * ax * nu))
}

/// Single-shooting differential correction on the half-period symmetry:
/// fix the axis position, adjust the perpendicular speed until the next
/// axis crossing is again perpendicular.
pub fn lyapunov_correct(
    mu: MassRatio,
    axis_guess: (f64, f64),
    neck: Neck,
    cfg: &IntegratorConfig,
) -> Result<LyapunovOrbit> {
    let (x0, mut vy0) = axis_guess;
    let mut converged = false;
    let mut half_t = 0.0;
    for _ in 0..MAX_NEWTON {
        let state = P1State::new(x0, 0.0, 0.0, vy0);
        let (tau, s_tau, stm) = variational_to_axis_crossing(&state, mu, cfg)?;
        if s_tau.v1.abs() < CORRECTOR_TOL {
            converged = true;
            half_t = tau;
            break;
        }
        // d v1(tau)/d vy0 with the crossing-time correction
        let acc = eom_rhs_raw(&s_tau.to_vector(), mu);
        let dv1 = stm[(2, 3)] - acc[2] * stm[(1, 3)] / s_tau.v2;
        if dv1 == 0.0 || !dv1.is_finite() {
            return Err(Error::NoConvergence(MAX_NEWTON));
        }
        // damped update: near-singular sensitivities otherwise throw the
        // iteration onto unrelated periodic orbits
        let cap = (0.3 * (vy0.abs() + 1e-4)).max(1e-3);
        vy0 -= (s_tau.v1 / dv1).clamp(-cap, cap);
        half_t = tau;
    }
    if !converged {
        return Err(Error::NoConvergence(MAX_NEWTON));
    }
    let initial = P1State::new(x0, 0.0, 0.0, vy0);
    let period = 2.0 * half_t;
    // full-period STM for the monodromy matrix
    let f = variational_system(mu);
    let y_end = propagate_fixed(
        &f,
        &pack_variational(&initial, &Matrix4::identity()),
        (0.0, period),
        cfg.rel_tol,
        cfg.abs_tol,
        cfg.h_init,
        cfg.h_min,
        cfg.h_max,
    )?;
    let (s_end, monodromy) = unpack_variational(&y_end);
    let residual = (s_end.to_vector() - initial.to_vector()).norm();
    Ok(LyapunovOrbit {
        mu,
        neck,
        initial,
        period,
        c: jacobi_constant(&initial, mu),
        monodromy,
        periodicity_residual: residual,
    })
}

/// Eigen-structure of the monodromy matrix relevant to manifold work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonodromySpectrum {
    /// The real eigenvalue with `|lambda| > 1`.
    pub lambda: f64,
    pub unstable_dir: Vector4<f64>,
    pub stable_dir: Vector4<f64>,
}

impl LyapunovOrbit {
    /// Complex eigenvalues of the monodromy matrix.
    pub fn eigenvalues(&self) -> Vec<nalgebra::Complex<f64>> {
        self.monodromy.complex_eigenvalues().iter().copied().collect()
    }

    /// Extract the hyperbolic pair and its directions.
    pub fn spectrum(&self) -> Result<MonodromySpectrum> {
        let eigs = self.eigenvalues();
        let mut lambda: Option<f64> = None;
        for ev in &eigs {
            if ev.im.abs() < 1e-6 && ev.re > 1.0 + 1e-6 && lambda.map_or(true, |l| ev.re > l) {
                lambda = Some(ev.re);
            }
        }
        let lambda = lambda.ok_or(Error::Domain("monodromy has no real unstable eigenvalue".into()))?;
        let unstable_dir = null_direction(&(self.monodromy - Matrix4::identity() * lambda))?;
        let stable_dir =
            null_direction(&(self.monodromy - Matrix4::identity() * (1.0 / lambda)))?;
        Ok(MonodromySpectrum { lambda, unstable_dir, stable_dir })
    }

    /// CSV row: `neck,c,period,y1,y2,v1,v2,lambda`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "neck,c,period,y1,y2,v1,v2,lambda")?;
        let lambda = self.spectrum().map(|s| s.lambda).unwrap_or(f64::NAN);
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            match self.neck {
                Neck::L1 => "L1",
                Neck::L2 => "L2",
            },
            self.c,
            self.period,
            self.initial.y1,
            self.initial.y2,
            self.initial.v1,
            self.initial.v2,
            lambda
        )
    }
}

/// Unit vector spanning the (numerically) one-dimensional null space.
fn null_direction(m: &Matrix4<f64>) -> Result<Vector4<f64>> {
    let svd = m.svd(true, true);
    let v_t = svd.v_t.ok_or(Error::Domain("SVD failed".into()))?;
    // right singular vector of the smallest singular value
    let mut idx = 0;
    for i in 1..4 {
        if svd.singular_values[i] < svd.singular_values[idx] {
            idx = i;
        }
    }
    let v = v_t.row(idx).transpose();
    Ok(v.normalize())
}

/// Piecewise-linear predictor for the perpendicular speed along the family.
struct FamilyTable {
    entries: Vec<(f64, f64, f64)>, // (ax, vy0, period)
}

impl FamilyTable {
    fn predict(&self, ax: f64) -> f64 {
        match self.entries.len() {
            0 => unreachable!("table seeded before prediction"),
            1 => self.entries[0].1,
            _ => {
                // bracketing pair, or the last two for extrapolation
                let mut lo = 0;
                for (i, e) in self.entries.iter().enumerate() {
                    if e.0 <= ax {
                        lo = i;
                    }
                }
                let hi = (lo + 1).min(self.entries.len() - 1);
                let lo = if hi == lo { lo - 1 } else { lo };
                let (ax_a, vy_a, _) = self.entries[lo];
                let (ax_b, vy_b, _) = self.entries[hi];
                vy_a + (vy_b - vy_a) * (ax - ax_a) / (ax_b - ax_a)
            }
        }
    }

    fn last_period(&self) -> f64 {
        self.entries.last().unwrap().2
    }

    fn insert(&mut self, ax: f64, vy0: f64, period: f64) {
        let pos = self.entries.partition_point(|e| e.0 < ax);
        self.entries.insert(pos, (ax, vy0, period));
    }
}

/// Amplitude continuation with warm starts to reach a target Jacobi
/// constant, refined to `|C - target| < 1e-9`.
///
/// Corrections that jump off the family (detected by a period
/// discontinuity) shrink the amplitude step.
pub fn lyapunov_family(
    mu: MassRatio,
    c_target: f64,
    neck: Neck,
    cfg: &IntegratorConfig,
) -> Result<LyapunovOrbit> {
    let eq = lagrange_points(mu)?;
    let c_eq = match neck {
        Neck::L1 => eq.jacobi[0],
        Neck::L2 => eq.jacobi[1],
    };
    if c_target >= c_eq {
        return Err(Error::TargetOutsideFamily { target: c_target, reached: c_eq });
    }
    let ax_cap = 0.95
        * match neck {
            Neck::L1 => eq.p2_l1_distance(),
            Neck::L2 => eq.p2_l2_distance(),
        };
    let lx = match neck {
        Neck::L1 => eq.positions[0].0,
        Neck::L2 => eq.positions[1].0,
    };

    let mut table = FamilyTable { entries: Vec::new() };
    let ax0 = 1e-4;
    let (x0, vy_lin) = lyapunov_seed(mu, neck, ax0)?;
    let mut orbit = lyapunov_correct(mu, (x0, vy_lin), neck, cfg)?;
    table.insert(ax0, orbit.initial.v2, orbit.period);
    if (orbit.c - c_target).abs() < 1e-9 {
        return Ok(orbit);
    }
    if orbit.c <= c_target {
        // target sits between the equilibrium value and the smallest orbit
        return refine_on_family(mu, neck, lx, cfg, &mut table, 1e-6, ax0, c_target);
    }

    // march outward, warm-starting each correction from the table
    let mut ax = ax0;
    let mut step = ax0;
    let mut stalls = 0;
    loop {
        let ax_next = (ax + step).min(ax_cap);
        match correct_member(mu, neck, lx, cfg, &table, ax_next, orbit.c) {
            Ok(next) => {
                table.insert(ax_next, next.initial.v2, next.period);
                let crossed = next.c <= c_target;
                let prev_ax = ax;
                ax = ax_next;
                stalls = 0;
                step = (step * 1.5).min(0.02 * ax_cap.max(0.05));
                if crossed {
                    return refine_on_family(mu, neck, lx, cfg, &mut table, prev_ax, ax_next, c_target);
                }
                if ax >= ax_cap {
                    return Err(Error::TargetOutsideFamily { target: c_target, reached: next.c });
                }
                orbit = next;
            }
            Err(_) => {
                step *= 0.5;
                stalls += 1;
                if stalls > 40 || step < 1e-9 {
                    return Err(Error::TargetOutsideFamily { target: c_target, reached: orbit.c });
                }
            }
        }
    }
}

/// Correct one family member from the table's warm start, rejecting
/// convergence onto a different periodic family (discontinuous period,
/// perpendicular speed, or Jacobi constant).
fn correct_member(
    mu: MassRatio,
    neck: Neck,
    lx: f64,
    cfg: &IntegratorConfig,
    table: &FamilyTable,
    ax: f64,
    c_prev: f64,
) -> Result<LyapunovOrbit> {
    let vy_guess = table.predict(ax);
    let orbit = lyapunov_correct(mu, (lx - ax, vy_guess), neck, cfg)?;
    let t_prev = table.last_period();
    if (orbit.period / t_prev - 1.0).abs() > 0.3 {
        return Err(Error::NoConvergence(MAX_NEWTON));
    }
    if (orbit.initial.v2 - vy_guess).abs() > 0.5 * (vy_guess.abs() + 1e-4) {
        return Err(Error::NoConvergence(MAX_NEWTON));
    }
    if (orbit.c - c_prev).abs() > 0.02 {
        return Err(Error::NoConvergence(MAX_NEWTON));
    }
    Ok(orbit)
}

/// Bisection on the amplitude inside a bracket known to straddle the
/// target `C`, with warm starts from the family table.
fn refine_on_family(
    mu: MassRatio,
    neck: Neck,
    lx: f64,
    cfg: &IntegratorConfig,
    table: &mut FamilyTable,
    mut ax_lo: f64,
    mut ax_hi: f64,
    c_target: f64,
) -> Result<LyapunovOrbit> {
    let mut best: Option<LyapunovOrbit> = None;
    for _ in 0..200 {
        let ax_mid = 0.5 * (ax_lo + ax_hi);
        let orbit = correct_member(mu, neck, lx, cfg, table, ax_mid, c_target)?;
        table.insert(ax_mid, orbit.initial.v2, orbit.period);
        let g = orbit.c - c_target;
        if g.abs() < 1e-9 {
            return Ok(orbit);
        }
        if g > 0.0 {
            ax_lo = ax_mid;
        } else {
            ax_hi = ax_mid;
        }
        if best.as_ref().map_or(true, |b| (b.c - c_target).abs() > g.abs()) {
            best = Some(orbit);
        }
        if ax_hi - ax_lo < 1e-15 {
            break;
        }
    }
    best.filter(|b| (b.c - c_target).abs() < 1e-9).ok_or(Error::NoConvergence(200))
}

/// The four manifold branches of a Lyapunov orbit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifoldBranch {
    /// Stable manifold, branch entering the P2 region (integrated backward).
    StableInterior,
    /// Stable manifold, branch leaving toward P1 or the outer region.
    StableExterior,
    /// Unstable manifold branch entering the P2 region (integrated forward).
    UnstableInterior,
    /// Unstable manifold branch leaving the P2 region.
    UnstableExterior,
}

impl ManifoldBranch {
    pub fn is_stable(self) -> bool {
        matches!(self, ManifoldBranch::StableInterior | ManifoldBranch::StableExterior)
    }

    pub fn is_interior(self) -> bool {
        matches!(self, ManifoldBranch::StableInterior | ManifoldBranch::UnstableInterior)
    }

    pub fn label(self) -> &'static str {
        match self {
            ManifoldBranch::StableInterior => "stable-interior",
            ManifoldBranch::StableExterior => "stable-exterior",
            ManifoldBranch::UnstableInterior => "unstable-interior",
            ManifoldBranch::UnstableExterior => "unstable-exterior",
        }
    }
}

/// One globalized manifold trajectory, tagged by seed phase.
#[derive(Debug, Clone)]
pub struct ManifoldTrajectory {
    /// Phase along the orbit in `[0, 1)`.
    pub seed_phase: f64,
    /// Displaced initial state.
    pub seed: P1State,
    /// Signed integration horizon (negative for stable branches).
    pub t_span: f64,
    pub trajectory: Trajectory,
}

/// Globalize one manifold branch: displace `n_seeds` points around the
/// orbit by `epsilon` along the transported hyperbolic eigenvector and
/// integrate (backward for stable branches, forward for unstable ones)
/// over `t_horizon`.
pub fn globalize(
    orbit: &LyapunovOrbit,
    branch: ManifoldBranch,
    epsilon: f64,
    n_seeds: usize,
    t_horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<ManifoldTrajectory>> {
    if n_seeds == 0 || epsilon <= 0.0 || t_horizon <= 0.0 {
        return Err(Error::Domain("globalize needs n_seeds >= 1, epsilon > 0, t_horizon > 0".into()));
    }
    let spec = orbit.spectrum()?;
    let v0 = if branch.is_stable() { spec.stable_dir } else { spec.unstable_dir };
    let mu = orbit.mu;
    let f = variational_system(mu);

    // transport states and eigenvector around the orbit
    let mut seeds_plus = Vec::with_capacity(n_seeds);
    let mut seeds_minus = Vec::with_capacity(n_seeds);
    let mut y = pack_variational(&orbit.initial, &Matrix4::identity());
    for j in 0..n_seeds {
        let t_a = orbit.period * j as f64 / n_seeds as f64;
        let t_b = orbit.period * (j + 1) as f64 / n_seeds as f64;
        let (state_j, stm_j) = unpack_variational(&y);
        let v_j = (stm_j * v0).normalize();
        let phase = j as f64 / n_seeds as f64;
        let base = state_j.to_vector();
        seeds_plus.push((phase, P1State::from_vector(&(base + v_j * epsilon))));
        seeds_minus.push((phase, P1State::from_vector(&(base - v_j * epsilon))));
        if j + 1 < n_seeds {
            y = propagate_fixed(
                &f,
                &y,
                (t_a, t_b),
                cfg.rel_tol,
                cfg.abs_tol,
                cfg.h_init,
                cfg.h_min,
                cfg.h_max,
            )?;
        }
    }

    // decide which displacement sign heads into the P2 region
    let eq = lagrange_points(mu)?;
    let d_neck = match orbit.neck {
        Neck::L1 => eq.p2_l1_distance(),
        Neck::L2 => eq.p2_l2_distance(),
    };
    let t_dir = if branch.is_stable() { -1.0 } else { 1.0 };
    let probe = |seed: &P1State| -> Result<f64> {
        // minimum P2 distance over a short horizon tells the side
        let cfg_probe = IntegratorConfig { store: StoreMode::Nodes, ..*cfg };
        let horizon = (6.0 * orbit.period).min(t_horizon);
        let traj = propagate(seed, (0.0, t_dir * horizon), mu, &cfg_probe)?;
        Ok(traj
            .nodes
            .iter()
            .map(|n| to_p2_frame(&n.state).r())
            .fold(f64::INFINITY, f64::min))
    };
    let plus_min = probe(&seeds_plus[0].1)?;
    let minus_min = probe(&seeds_minus[0].1)?;
    let plus_is_interior = plus_min < minus_min;
    let chosen = match (branch.is_interior(), plus_is_interior) {
        (true, true) | (false, false) => seeds_plus,
        _ => seeds_minus,
    };
    let _ = d_neck;

    let trajs: Vec<ManifoldTrajectory> = chosen
        .par_iter()
        .map(|(phase, seed)| {
            let traj = propagate(seed, (0.0, t_dir * t_horizon), mu, cfg)?;
            Ok(ManifoldTrajectory {
                seed_phase: *phase,
                seed: *seed,
                t_span: t_dir * t_horizon,
                trajectory: traj,
            })
        })
        .collect::<Result<_>>()?;
    Ok(trajs)
}

/// One point of a manifold cut on the section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutPoint {
    pub seed_phase: f64,
    pub r: f64,
    pub r_dot: f64,
    pub c: f64,
    pub e2: f64,
    pub t: f64,
}

/// The k-th intersection of a globalized branch with the section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldCut {
    pub branch: ManifoldBranch,
    /// 1-based crossing index along the globalized trajectories.
    pub k: usize,
    /// Points ordered by seed phase.
    pub points: Vec<CutPoint>,
}

/// Regroup posigrade ray crossings of globalized trajectories by crossing
/// index `k = 1..=k_max`. Each seed is re-propagated with ray events (the
/// stored trajectories stay light).
///
/// With `entry_radius` set, crossings are counted only once the trajectory
/// has come within that distance of P2 — the "first crossing after
/// entering the P2 region" convention for interior branches.
pub fn section_cuts(
    trajs: &[ManifoldTrajectory],
    branch: ManifoldBranch,
    theta0: f64,
    k_max: usize,
    mu: MassRatio,
    cfg: &IntegratorConfig,
    entry_radius: Option<f64>,
) -> Result<Vec<ManifoldCut>> {
    if k_max == 0 {
        return Ok(Vec::new());
    }
    let cfg_run = cfg.with_store(StoreMode::Minimal);
    let mut specs = vec![EventSpec::ray(theta0, RayDirection::PosigradeOnly)];
    if let Some(radius) = entry_radius {
        specs.push(EventSpec { kind: EventKind::Approach { radius }, terminal: false });
    }
    let per_seed: Vec<Vec<CutPoint>> = trajs
        .par_iter()
        .map(|mt| {
            let mut hits = Vec::new();
            let mut count = 0usize;
            let mut entered = entry_radius.is_none();
            let (_, _) = propagate_observed(
                &mt.seed,
                (0.0, mt.t_span),
                mu,
                &cfg_run,
                &specs,
                |rec| {
                    if rec.spec_index == 1 {
                        entered = true;
                        return ControlFlow::Continue(());
                    }
                    if !entered {
                        return ControlFlow::Continue(());
                    }
                    let info = rec.ray.expect("ray record");
                    count += 1;
                    hits.push(CutPoint {
                        seed_phase: mt.seed_phase,
                        r: info.r,
                        r_dot: info.r_dot,
                        c: crate::dynamics::jacobi_constant(&rec.state, mu),
                        e2: info.e2,
                        t: rec.t,
                    });
                    if count >= k_max {
                        ControlFlow::Break(())
                    } else {
                        ControlFlow::Continue(())
                    }
                },
            )?;
            Ok(hits)
        })
        .collect::<Result<_>>()?;

    let mut cuts = Vec::new();
    for k in 1..=k_max {
        let mut points: Vec<CutPoint> = per_seed
            .iter()
            .filter_map(|hits| hits.get(k - 1).copied())
            .collect();
        points.sort_by(|a, b| a.seed_phase.partial_cmp(&b.seed_phase).unwrap());
        cuts.push(ManifoldCut { branch, k, points });
    }
    Ok(cuts)
}

/// CSV export of cuts: `branch,k,seed_phase,r,rdot`.
pub fn write_cuts_csv<W: Write>(cuts: &[ManifoldCut], mut w: W) -> std::io::Result<()> {
    writeln!(w, "branch,k,seed_phase,r,rdot")?;
    for cut in cuts {
        for p in &cut.points {
            writeln!(
                w,
                "{},{},{:.16e},{:.16e},{:.16e}",
                cut.branch.label(),
                cut.k,
                p.seed_phase,
                p.r,
                p.r_dot
            )?;
        }
    }
    Ok(())
}

/// Largest gap between consecutive cut points (cyclically, ordered by seed
/// phase) relative to the median gap; near 1 for a well-sampled closed loop.
pub fn cut_gap_ratio(cut: &ManifoldCut) -> Option<f64> {
    let pts = &cut.points;
    if pts.len() < 3 {
        return None;
    }
    let gaps: Vec<f64> = (0..pts.len())
        .map(|i| {
            let a = &pts[i];
            let b = &pts[(i + 1) % pts.len()];
            ((a.r - b.r).powi(2) + (a.r_dot - b.r_dot).powi(2)).sqrt()
        })
        .collect();
    let max = gaps.iter().cloned().fold(0.0, f64::max);
    let mut sorted = gaps;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    (median > 0.0).then(|| max / median)
}

/// Where a cut's loop crosses the `r_dot = 0` axis with negative Kepler
/// energy (the periapsis slice).
///
/// Consecutive points (by seed phase, cyclic) are interpolated linearly;
/// pairs separated by much more than the median spacing are treated as
/// gaps in the loop and skipped.
pub fn cut_axis_crossings(cut: &ManifoldCut, theta0: f64, mu: MassRatio) -> Vec<f64> {
    let pts = &cut.points;
    let mut out = Vec::new();
    if pts.len() < 2 {
        return out;
    }
    let gaps: Vec<f64> = (0..pts.len())
        .map(|i| {
            let a = &pts[i];
            let b = &pts[(i + 1) % pts.len()];
            ((a.r - b.r).powi(2) + (a.r_dot - b.r_dot).powi(2)).sqrt()
        })
        .collect();
    let mut sorted = gaps.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    let gap_cap = if median > 0.0 { 10.0 * median } else { f64::INFINITY };

    for i in 0..pts.len() {
        let a = &pts[i];
        let b = &pts[(i + 1) % pts.len()];
        if gaps[i] > gap_cap {
            continue;
        }
        if a.r_dot == 0.0 {
            if a.e2 < 0.0 {
                out.push(a.r);
            }
            continue;
        }
        if a.r_dot * b.r_dot < 0.0 {
            let w = a.r_dot / (a.r_dot - b.r_dot);
            let r = a.r + w * (b.r - a.r);
            let c = a.c + w * (b.c - a.c);
            if let Some(e2) = periapsis_slice_energy(r, theta0, c, mu) {
                if e2 < 0.0 {
                    out.push(r);
                }
            }
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Kepler energy of the on-section point at `(r, r_dot = 0)`, if it exists.
fn periapsis_slice_energy(r: f64, theta0: f64, c: f64, mu: MassRatio) -> Option<f64> {
    let td = theta_dot_on_section(r, 0.0, theta0, c, mu).ok()?;
    let (s, cth) = theta0.sin_cos();
    let state = crate::dynamics::RotState::new(r * cth, r * s, -r * td * s, r * td * cth);
    crate::dynamics::kepler_energy(&state, mu).ok()
}

/// Outcome of comparing one refined boundary point against manifold cuts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WnComparisonStatus {
    /// Distances to the nearest axis crossing of the `(n-1)`-st cut
    /// (primary, crossing index `n`) and the next cut (alternate).
    Compared { dist_primary: f64, dist_alternate: f64, nearest_r: f64 },
    /// `C >= C1`: no Lyapunov orbits exist on this energy level.
    NoManifoldsAtThisC,
    /// The cuts never reached the periapsis axis.
    NoAxisCrossing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WnComparisonEntry {
    pub boundary: BoundaryRecord,
    pub status: WnComparisonStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WnComparisonReport {
    pub theta0: f64,
    pub e: f64,
    pub n: u32,
    pub entries: Vec<WnComparisonEntry>,
}

/// Tuning for the manifold side of the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldParams {
    pub epsilon: f64,
    pub n_seeds: usize,
    pub t_horizon: f64,
    /// Cut counting starts once the trajectory has come within
    /// `entry_fraction * d(P2, L_neck)` of P2.
    pub entry_fraction: f64,
}

impl Default for ManifoldParams {
    fn default() -> Self {
        Self { epsilon: 1e-6, n_seeds: 100, t_horizon: 60.0, entry_fraction: 0.8 }
    }
}

/// Compare refined boundary points of one ray against the stable-manifold
/// cuts on the same section at each boundary point's Jacobi constant.
pub fn wn_vs_manifold(
    theta0: f64,
    e: f64,
    n: u32,
    mu: MassRatio,
    scan: &ScanParams,
    mparams: &ManifoldParams,
    cfg: &IntegratorConfig,
) -> Result<WnComparisonReport> {
    if n == 0 {
        return Err(Error::Domain("cycle index n must be >= 1".into()));
    }
    let scan_run = radial_scan(theta0, e, n, scan, mu, cfg)?;
    let bounds = refine_scan_boundaries(&scan_run, scan, cfg)?;
    let entries = compare_boundaries(&bounds.records, theta0, n, mu, mparams, cfg)?;
    Ok(WnComparisonReport { theta0, e, n, entries })
}

/// Comparison core, reusable with precomputed boundary points.
pub fn compare_boundaries(
    records: &[BoundaryRecord],
    theta0: f64,
    n: u32,
    mu: MassRatio,
    mparams: &ManifoldParams,
    cfg: &IntegratorConfig,
) -> Result<Vec<WnComparisonEntry>> {
    let eq = lagrange_points(mu)?;
    let (c1, c2) = (eq.jacobi[0], eq.jacobi[1]);
    let mut entries = Vec::new();
    for rec in records {
        if rec.c >= c1 {
            entries.push(WnComparisonEntry {
                boundary: *rec,
                status: WnComparisonStatus::NoManifoldsAtThisC,
            });
            continue;
        }
        let mut necks = vec![Neck::L1];
        if rec.c < c2 {
            necks.push(Neck::L2);
        }
        let mut crossings_primary = Vec::new();
        let mut crossings_alt = Vec::new();
        for neck in necks {
            let orbit = match lyapunov_family(mu, rec.c, neck, cfg) {
                Ok(o) => o,
                Err(_) => continue,
            };
            let d_neck = match neck {
                Neck::L1 => eq.p2_l1_distance(),
                Neck::L2 => eq.p2_l2_distance(),
            };
            let trajs = globalize(
                &orbit,
                ManifoldBranch::StableInterior,
                mparams.epsilon,
                mparams.n_seeds,
                mparams.t_horizon,
                &cfg.with_store(StoreMode::Minimal),
            )?;
            let cuts = section_cuts(
                &trajs,
                ManifoldBranch::StableInterior,
                theta0,
                n as usize + 1,
                mu,
                cfg,
                Some(mparams.entry_fraction * d_neck),
            )?;
            for cut in &cuts {
                let xs = cut_axis_crossings(cut, theta0, mu);
                if cut.k == n as usize {
                    crossings_primary.extend(xs);
                } else if cut.k == n as usize + 1 {
                    crossings_alt.extend(xs);
                }
            }
        }
        let nearest = |xs: &[f64]| -> Option<(f64, f64)> {
            xs.iter()
                .map(|&x| ((x - rec.r_star).abs(), x))
                .min_by(|p, q| p.0.partial_cmp(&q.0).unwrap())
        };
        let status = match (nearest(&crossings_primary), nearest(&crossings_alt)) {
            (Some((d1, x1)), Some((d2, _))) => WnComparisonStatus::Compared {
                dist_primary: d1,
                dist_alternate: d2,
                nearest_r: x1,
            },
            (Some((d1, x1)), None) => WnComparisonStatus::Compared {
                dist_primary: d1,
                dist_alternate: f64::INFINITY,
                nearest_r: x1,
            },
            (None, Some((d2, x2))) => WnComparisonStatus::Compared {
                dist_primary: f64::INFINITY,
                dist_alternate: d2,
                nearest_r: x2,
            },
            (None, None) => WnComparisonStatus::NoAxisCrossing,
        };
        entries.push(WnComparisonEntry { boundary: *rec, status });
    }
    Ok(entries)
}

/// Which primary a cycle-count requirement refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Primary {
    P1,
    P2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisAReport {
    pub required_turns: f64,
    pub checked: usize,
    pub violators: usize,
    /// `(seed phase, |turns| achieved)` per trajectory.
    pub per_seed: Vec<(f64, f64)>,
}

impl HypothesisAReport {
    pub fn violator_fraction(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.violators as f64 / self.checked as f64
        }
    }
}

/// Count winding turns of globalized trajectories about a primary and
/// report which fall short of the required count.
pub fn hypothesis_a_check(
    trajs: &[ManifoldTrajectory],
    required_turns: f64,
    about: Primary,
) -> HypothesisAReport {
    let mut per_seed = Vec::with_capacity(trajs.len());
    let mut violators = 0;
    for mt in trajs {
        let turns = match about {
            Primary::P1 => mt.trajectory.p1_turns().abs(),
            Primary::P2 => mt.trajectory.p2_turns().abs(),
        };
        if turns < required_turns {
            violators += 1;
        }
        per_seed.push((mt.seed_phase, turns));
    }
    HypothesisAReport { required_turns, checked: trajs.len(), violators, per_seed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mu_sj() -> MassRatio {
        MassRatio::new(0.00095).unwrap()
    }

    fn cfg() -> IntegratorConfig {
        IntegratorConfig::default()
    }

    #[test]
    fn corrector_produces_periodic_orbit() {
        let mu = mu_sj();
        let (x0, vy0) = lyapunov_seed(mu, Neck::L1, 0.003).unwrap();
        let orbit = lyapunov_correct(mu, (x0, vy0), Neck::L1, &cfg()).unwrap();
        assert!(orbit.periodicity_residual < 1e-9, "residual {}", orbit.periodicity_residual);
        assert!(orbit.initial.v1.abs() < 1e-15);
        assert_eq!(orbit.initial.y2, 0.0);
        // symplectic structure
        assert!((orbit.monodromy.determinant() - 1.0).abs() < 1e-8);
        let spec = orbit.spectrum().unwrap();
        assert!(spec.lambda > 1.0 + 1e-6);
        // eigenvalues pair up as {lambda, 1/lambda, ~1, ~1}
        let eigs = orbit.eigenvalues();
        let mut unit = 0;
        let mut recip = false;
        for ev in &eigs {
            let m = (ev.re * ev.re + ev.im * ev.im).sqrt();
            if (m - 1.0).abs() < 1e-5 {
                unit += 1;
            }
            if ev.im.abs() < 1e-6 && (ev.re * spec.lambda - 1.0).abs() < 1e-5 {
                recip = true;
            }
        }
        assert!(unit >= 2, "unit pair missing: {eigs:?}");
        assert!(recip, "reciprocal eigenvalue missing: {eigs:?}");
    }

    #[test]
    fn family_limits_to_equilibrium_value() {
        let mu = mu_sj();
        let eq = lagrange_points(mu).unwrap();
        let (x0, vy0) = lyapunov_seed(mu, Neck::L1, 1e-4).unwrap();
        let orbit = lyapunov_correct(mu, (x0, vy0), Neck::L1, &cfg()).unwrap();
        assert!((orbit.c - eq.jacobi[0]).abs() < 1e-4, "C {} vs C1 {}", orbit.c, eq.jacobi[0]);
    }

    #[test]
    fn family_jacobi_monotone_in_amplitude() {
        // family-scan oracle: march the amplitude with warm starts and watch C fall
        let mu = mu_sj();
        let eq = lagrange_points(mu).unwrap();
        let lx = eq.positions[0].0;
        let mut prev_c = f64::INFINITY;
        let mut hist: Vec<(f64, f64)> = Vec::new();
        let mut ax = 5e-4;
        while ax < 8e-3 {
            let (x0, vy_lin) = lyapunov_seed(mu, Neck::L1, ax).unwrap();
            assert_relative_eq!(x0, lx - ax, epsilon = 1e-12);
            let guess = match hist.len() {
                0 => vy_lin,
                1 => hist[0].1,
                _ => {
                    let (a0, v0) = hist[hist.len() - 2];
                    let (a1, v1) = hist[hist.len() - 1];
                    v1 + (v1 - v0) * (ax - a1) / (a1 - a0)
                }
            };
            let orbit = lyapunov_correct(mu, (x0, guess), Neck::L1, &cfg()).unwrap();
            assert!(orbit.c < prev_c, "C not decreasing at ax={ax}");
            prev_c = orbit.c;
            hist.push((ax, orbit.initial.v2));
            ax *= 1.25;
        }
    }

    #[test]
    fn family_reaches_paper_targets() {
        // the Oterma-regime level for the Sun-Jupiter mass ratio
        let mu = mu_sj();
        for neck in [Neck::L1, Neck::L2] {
            let orbit = lyapunov_family(mu, 3.037, neck, &cfg()).unwrap();
            assert!((orbit.c - 3.037).abs() < 1e-9);
            assert!(orbit.periodicity_residual < 1e-9);
        }
        // both necks reach C = 3.15 at the Earth-Moon-like ratio
        let mu = MassRatio::new(0.01215).unwrap();
        for neck in [Neck::L1, Neck::L2] {
            let orbit = lyapunov_family(mu, 3.15, neck, &cfg()).unwrap();
            assert!((orbit.c - 3.15).abs() < 1e-9);
        }
    }

    #[test]
    fn family_rejects_target_above_equilibrium() {
        let mu = mu_sj();
        let eq = lagrange_points(mu).unwrap();
        let err = lyapunov_family(mu, eq.jacobi[0] + 0.01, Neck::L1, &cfg()).unwrap_err();
        assert!(matches!(err, Error::TargetOutsideFamily { .. }));
    }

    #[test]
    fn unstable_branch_departs_at_monodromy_rate() {
        let mu = mu_sj();
        let orbit = lyapunov_family(mu, 3.037, Neck::L1, &cfg()).unwrap();
        let spec = orbit.spectrum().unwrap();
        let expected_rate = spec.lambda.ln() / orbit.period;

        // reference orbit and a displaced neighbor, sampled on a common grid
        let eps = 1e-8;
        let seed = P1State::from_vector(
            &(orbit.initial.to_vector() + spec.unstable_dir * eps),
        );
        let horizon = 1.2 * orbit.period;
        let c = IntegratorConfig::default();
        let ref_traj = propagate(&orbit.initial, (0.0, horizon), mu, &c).unwrap();
        let per_traj = propagate(&seed, (0.0, horizon), mu, &c).unwrap();
        let mut ts = Vec::new();
        let mut ds = Vec::new();
        for i in 1..=24 {
            let t = horizon * i as f64 / 24.0 * 0.98;
            let a = ref_traj.sample(t).unwrap().to_vector();
            let b = per_traj.sample(t).unwrap().to_vector();
            ts.push(t);
            ds.push(((b - a).norm()).ln());
        }
        // least-squares slope
        let n = ts.len() as f64;
        let tm = ts.iter().sum::<f64>() / n;
        let dm = ds.iter().sum::<f64>() / n;
        let slope = ts
            .iter()
            .zip(&ds)
            .map(|(t, d)| (t - tm) * (d - dm))
            .sum::<f64>()
            / ts.iter().map(|t| (t - tm) * (t - tm)).sum::<f64>();
        assert!(
            (slope - expected_rate).abs() / expected_rate < 0.2,
            "departure rate {slope} vs ln(lambda)/T = {expected_rate}"
        );
    }

    #[test]
    fn stable_interior_branch_enters_p2_region() {
        let mu = mu_sj();
        let orbit = lyapunov_family(mu, 3.037, Neck::L1, &cfg()).unwrap();
        let trajs = globalize(
            &orbit,
            ManifoldBranch::StableInterior,
            1e-6,
            24,
            50.0,
            &cfg().with_store(StoreMode::Minimal),
        )
        .unwrap();
        assert_eq!(trajs.len(), 24);
        // Hypothesis A, condition (i): the interior stable branch winds about P2
        let report = hypothesis_a_check(&trajs, 1.0, Primary::P2);
        assert!(
            report.violator_fraction() < 0.5,
            "only {} of {} seeds completed a P2 cycle",
            report.checked - report.violators,
            report.checked
        );
    }

    #[test]
    fn unstable_exterior_branch_of_l2_cycles_p1() {
        // Hypothesis A, condition (iv): outer-branch trajectories circle P1
        let mu = mu_sj();
        let orbit = lyapunov_family(mu, 3.037, Neck::L2, &cfg()).unwrap();
        let trajs = globalize(
            &orbit,
            ManifoldBranch::UnstableExterior,
            1e-6,
            24,
            60.0,
            &cfg().with_store(StoreMode::Minimal),
        )
        .unwrap();
        let report = hypothesis_a_check(&trajs, 1.0, Primary::P1);
        assert!(
            report.violator_fraction() < 0.5,
            "violators {}/{}",
            report.violators,
            report.checked
        );
    }

    #[test]
    fn first_cut_is_closed_loop() {
        // a ray away from the neck sees the tube transversally
        let mu = mu_sj();
        let orbit = lyapunov_family(mu, 3.037, Neck::L1, &cfg()).unwrap();
        let trajs = globalize(
            &orbit,
            ManifoldBranch::StableInterior,
            1e-6,
            48,
            60.0,
            &cfg().with_store(StoreMode::Minimal),
        )
        .unwrap();
        let eq = lagrange_points(mu).unwrap();
        let cuts = section_cuts(
            &trajs,
            ManifoldBranch::StableInterior,
            std::f64::consts::FRAC_PI_2,
            2,
            mu,
            &cfg(),
            Some(0.8 * eq.p2_l1_distance()),
        )
        .unwrap();
        assert_eq!(cuts.len(), 2);
        let first = &cuts[0];
        assert!(first.points.len() >= 40, "only {} seeds crossed", first.points.len());
        // closed loop: no gap dwarfs the median spacing
        let ratio = cut_gap_ratio(first).unwrap();
        assert!(ratio < 5.0, "gap ratio {ratio}");
        // all points share the orbit's Jacobi constant
        for p in &first.points {
            assert!((p.c - orbit.c).abs() < 1e-9);
        }
        // successive cuts are disjoint point sets
        let second = &cuts[1];
        if !second.points.is_empty() {
            let d_min = first
                .points
                .iter()
                .flat_map(|a| {
                    second
                        .points
                        .iter()
                        .map(move |b| ((a.r - b.r).powi(2) + (a.r_dot - b.r_dot).powi(2)).sqrt())
                })
                .fold(f64::INFINITY, f64::min);
            assert!(d_min > 1e-6, "cuts k=1 and k=2 touch");
        }
    }

    #[test]
    fn halving_epsilon_leaves_cut_loop_in_place() {
        // the cut as a SET is an invariant of the manifold; shrinking the seed
        // displacement slides the sampling along the loop but must not move
        // the loop itself beyond the linearization error
        let mu = mu_sj();
        let orbit = lyapunov_family(mu, 3.037, Neck::L1, &cfg()).unwrap();
        let eq = lagrange_points(mu).unwrap();
        let gate = Some(0.8 * eq.p2_l1_distance());
        let cut_at = |eps: f64| {
            let trajs = globalize(
                &orbit,
                ManifoldBranch::StableInterior,
                eps,
                64,
                60.0,
                &cfg().with_store(StoreMode::Minimal),
            )
            .unwrap();
            section_cuts(
                &trajs,
                ManifoldBranch::StableInterior,
                std::f64::consts::FRAC_PI_2,
                1,
                mu,
                &cfg(),
                gate,
            )
            .unwrap()
            .remove(0)
        };
        let a = cut_at(1e-6);
        let b = cut_at(5e-7);
        // geometric invariants of the loop shift by O(epsilon), not more
        let min_r = |c: &ManifoldCut| c.points.iter().map(|p| p.r).fold(f64::INFINITY, f64::min);
        let max_r =
            |c: &ManifoldCut| c.points.iter().map(|p| p.r).fold(f64::NEG_INFINITY, f64::max);
        assert!((min_r(&a) - min_r(&b)).abs() < 1e-5, "inner edge moved {}", (min_r(&a) - min_r(&b)).abs());
        assert!((max_r(&a) - max_r(&b)).abs() < 1e-4, "outer edge moved {}", (max_r(&a) - max_r(&b)).abs());
    }

    #[test]
    fn zero_cut_request_is_empty() {
        let mu = mu_sj();
        let orbit = lyapunov_family(mu, 3.037, Neck::L1, &cfg()).unwrap();
        let trajs = globalize(
            &orbit,
            ManifoldBranch::StableInterior,
            1e-6,
            4,
            20.0,
            &cfg().with_store(StoreMode::Minimal),
        )
        .unwrap();
        let cuts =
            section_cuts(&trajs, ManifoldBranch::StableInterior, 0.0, 0, mu, &cfg(), None).unwrap();
        assert!(cuts.is_empty());
    }

    #[test]
    fn comparison_rejects_n_zero_and_flags_high_c() {
        let mu = MassRatio::new(0.01215).unwrap();
        let scan = crate::sweep::ScanParams { r_lo: 1e-3, r_hi: 0.02, k: 10, refine_tol: 1e-8 };
        let err = wn_vs_manifold(0.0, 0.0, 0, mu, &scan, &ManifoldParams::default(), &cfg());
        assert!(err.is_err());

        // a synthetic boundary point with C above C1 has no orbits to compare
        let eq = lagrange_points(mu).unwrap();
        let rec = BoundaryRecord {
            theta: 0.0,
            e: 0.0,
            n: 1,
            r_star: 0.01,
            side: crate::sweep::Side::Upper,
            c: eq.jacobi[0] + 0.1,
            bracket_width: 1e-10,
            kind: crate::wsb::UnstableKind::NonReturn,
        };
        let entries =
            compare_boundaries(&[rec], 0.0, 1, mu, &ManifoldParams::default(), &cfg()).unwrap();
        assert_eq!(entries.len(), 1);
        assert!(matches!(entries[0].status, WnComparisonStatus::NoManifoldsAtThisC));
    }

    #[test]
    fn mirror_symmetry_maps_stable_to_unstable_cuts() {
        // cuts of the mirrored unstable branch coincide with mirrored stable cuts:
        // (r, rdot) at ray theta0 maps to (r, -rdot) at ray -theta0
        let mu = mu_sj();
        let orbit = lyapunov_family(mu, 3.037, Neck::L1, &cfg()).unwrap();
        let eq = lagrange_points(mu).unwrap();
        let gate = Some(0.8 * eq.p2_l1_distance());
        let theta0 = 2.0;
        let cfg_min = cfg().with_store(StoreMode::Minimal);
        let stable = globalize(&orbit, ManifoldBranch::StableInterior, 1e-6, 60, 60.0, &cfg_min).unwrap();
        let unstable =
            globalize(&orbit, ManifoldBranch::UnstableInterior, 1e-6, 60, 60.0, &cfg_min).unwrap();
        let cut_s = section_cuts(&stable, ManifoldBranch::StableInterior, theta0, 1, mu, &cfg(), gate)
            .unwrap()
            .remove(0);
        let cut_u = section_cuts(
            &unstable,
            ManifoldBranch::UnstableInterior,
            -theta0,
            1,
            mu,
            &cfg(),
            gate,
        )
        .unwrap()
        .remove(0);
        assert!(cut_s.points.len() >= 50 && cut_u.points.len() >= 50);
        // one-sided Hausdorff distance between the mirrored sets
        let mut worst: f64 = 0.0;
        for p in &cut_s.points {
            let best = cut_u
                .points
                .iter()
                .map(|q| ((p.r - q.r).powi(2) + (p.r_dot + q.r_dot).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(best);
        }
        assert!(worst < 5e-3, "mirrored cut mismatch {worst}");
    }
}
