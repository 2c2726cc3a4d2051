//! Radial scans along rays from P2, extraction of stable intervals,
//! bisection refinement of stability boundaries, grid sweeps over
//! `(theta, e, n)`, and finite-n approximations of the infinite-cycle sets.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::MassRatio;
use crate::error::{Error, Result};
use crate::integrate::{IntegratorConfig, StoreMode};
use crate::wsb::{classify, kind_label, PeriapsisIC, StabilityOutcome, UnstableKind};

/// Default bisection tolerance on boundary radii.
pub const REFINE_TOL_DEFAULT: f64 = 1e-10;

/// Scan geometry and refinement parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    pub r_lo: f64,
    pub r_hi: f64,
    pub k: usize,
    pub refine_tol: f64,
}

impl ScanParams {
    /// Default range `[1e-3, 0.9 * d(P2, L1)]` with 2000 points.
    pub fn default_for(mu: MassRatio) -> Result<Self> {
        let eq = crate::dynamics::lagrange_points(mu)?;
        Ok(Self {
            r_lo: 1e-3,
            r_hi: 0.9 * eq.p2_l1_distance(),
            k: 2000,
            refine_tol: REFINE_TOL_DEFAULT,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || !(self.r_lo > 0.0) || self.r_hi <= self.r_lo || !(self.refine_tol > 0.0) {
            return Err(Error::Domain(format!(
                "scan params invalid: r in [{}, {}], k = {}, refine_tol = {}",
                self.r_lo, self.r_hi, self.k, self.refine_tol
            )));
        }
        Ok(())
    }
}

/// One classified grid point of a radial scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub r: f64,
    /// `None` when classification failed hard (error recorded on the scan).
    pub outcome: Option<StabilityOutcome>,
}

impl ScanPoint {
    pub fn is_stable(&self) -> bool {
        self.outcome.as_ref().is_some_and(|o| o.is_stable())
    }
}

/// Classified radii along one ray for one `(theta, e, n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialScan {
    pub theta: f64,
    pub e: f64,
    pub n: u32,
    pub mu: MassRatio,
    pub points: Vec<ScanPoint>,
    /// Hard per-point failures as `(grid index, message)`.
    pub errors: Vec<(usize, String)>,
}

/// One maximal run of stable grid radii.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
    /// Single-point runs cannot resolve an interval at grid resolution.
    pub below_resolution: bool,
}

/// The stable set along one ray as disjoint open intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    pub theta: f64,
    pub e: f64,
    pub n: u32,
    pub mu: MassRatio,
    pub intervals: Vec<Interval>,
}

impl IntervalSet {
    /// Total stable measure (sum of interval lengths).
    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|i| i.b - i.a).sum()
    }

    pub fn contains(&self, r: f64) -> bool {
        self.intervals.iter().any(|i| i.a <= r && r <= i.b)
    }
}

/// Which side of a stable interval a boundary point closes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Lower,
    Upper,
}

/// A refined stability-transition radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRecord {
    pub theta: f64,
    pub e: f64,
    pub n: u32,
    pub r_star: f64,
    pub side: Side,
    /// Jacobi constant of the periapsis condition at `r_star`.
    pub c: f64,
    /// Final bracket width achieved by bisection.
    pub bracket_width: f64,
    /// Failure mode on the unstable side of the final bracket.
    pub kind: UnstableKind,
}

/// All refined boundary points of one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySet {
    pub theta: f64,
    pub e: f64,
    pub n: u32,
    pub mu: MassRatio,
    pub records: Vec<BoundaryRecord>,
}

/// Everything needed to reproduce a sweep bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub mu: f64,
    pub theta_grid: Vec<f64>,
    pub e_grid: Vec<f64>,
    pub n_list: Vec<u32>,
    pub scan: ScanParams,
    pub integrator: IntegratorConfig,
    pub tool_version: String,
    /// Excluded from reproducibility comparisons.
    pub created: Option<String>,
}

impl SweepManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Classify `k` radii along the ray; embarrassingly parallel over radii.
pub fn radial_scan(
    theta: f64,
    e: f64,
    n: u32,
    params: &ScanParams,
    mu: MassRatio,
    cfg: &IntegratorConfig,
) -> Result<RadialScan> {
    params.validate()?;
    let cfg = cfg.with_store(StoreMode::Minimal);
    let radii: Vec<f64> = (0..params.k)
        .map(|i| params.r_lo + (params.r_hi - params.r_lo) * i as f64 / (params.k - 1) as f64)
        .collect();
    let results: Vec<(f64, std::result::Result<StabilityOutcome, Error>)> = radii
        .par_iter()
        .map(|&r| {
            let out = PeriapsisIC::new(r, theta, e, mu).and_then(|ic| classify(&ic, n, &cfg));
            (r, out)
        })
        .collect();

    let mut points = Vec::with_capacity(params.k);
    let mut errors = Vec::new();
    for (i, (r, res)) in results.into_iter().enumerate() {
        match res {
            Ok(outcome) => points.push(ScanPoint { r, outcome: Some(outcome) }),
            Err(err) => {
                errors.push((i, err.to_string()));
                points.push(ScanPoint { r, outcome: None });
            }
        }
    }
    Ok(RadialScan { theta, e, n, mu, points, errors })
}

/// Maximal runs of stable grid points become candidate intervals.
pub fn extract_intervals(scan: &RadialScan) -> IntervalSet {
    let mut intervals = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, p) in scan.points.iter().enumerate() {
        if p.is_stable() {
            run_start.get_or_insert(i);
        } else if let Some(s) = run_start.take() {
            intervals.push(Interval {
                a: scan.points[s].r,
                b: scan.points[i - 1].r,
                below_resolution: i - s == 1,
            });
        }
    }
    if let Some(s) = run_start {
        let last = scan.points.len() - 1;
        intervals.push(Interval {
            a: scan.points[s].r,
            b: scan.points[last].r,
            below_resolution: last == s,
        });
    }
    IntervalSet { theta: scan.theta, e: scan.e, n: scan.n, mu: scan.mu, intervals }
}

/// Bisection refinement of a stable/unstable bracket down to `refine_tol`.
pub fn refine_boundary(
    lo: f64,
    hi: f64,
    theta: f64,
    e: f64,
    n: u32,
    mu: MassRatio,
    params: &ScanParams,
    cfg: &IntegratorConfig,
) -> Result<BoundaryRecord> {
    let cfg = cfg.with_store(StoreMode::Minimal);
    let classify_r = |r: f64| -> Result<StabilityOutcome> {
        let ic = PeriapsisIC::new(r, theta, e, mu)?;
        classify(&ic, n, &cfg)
    };
    let out_lo = classify_r(lo)?;
    let out_hi = classify_r(hi)?;
    match (out_lo.is_stable(), out_hi.is_stable()) {
        (true, true) => return Err(Error::InvalidBracket("stable")),
        (false, false) => return Err(Error::InvalidBracket("unstable")),
        _ => {}
    }
    let stable_below = out_lo.is_stable();
    let mut a = lo;
    let mut b = hi;
    let mut unstable_kind = if stable_below {
        out_hi.unstable_kind().unwrap()
    } else {
        out_lo.unstable_kind().unwrap()
    };
    while b - a > params.refine_tol {
        let mid = 0.5 * (a + b);
        let out = classify_r(mid)?;
        if out.is_stable() == stable_below {
            a = mid;
        } else {
            b = mid;
        }
        if let Some(k) = out.unstable_kind() {
            unstable_kind = k;
        }
    }
    let r_star = 0.5 * (a + b);
    let ic = PeriapsisIC::new(r_star, theta, e, mu)?;
    Ok(BoundaryRecord {
        theta,
        e,
        n,
        r_star,
        side: if stable_below { Side::Upper } else { Side::Lower },
        c: ic.jacobi(),
        bracket_width: b - a,
        kind: unstable_kind,
    })
}

/// Refine every stability transition visible in a scan.
pub fn refine_scan_boundaries(
    scan: &RadialScan,
    params: &ScanParams,
    cfg: &IntegratorConfig,
) -> Result<BoundarySet> {
    let mut brackets = Vec::new();
    for w in 1..scan.points.len() {
        let (p, q) = (&scan.points[w - 1], &scan.points[w]);
        if p.outcome.is_none() || q.outcome.is_none() {
            continue;
        }
        if p.is_stable() != q.is_stable() {
            brackets.push((p.r, q.r));
        }
    }
    let records: Vec<BoundaryRecord> = brackets
        .par_iter()
        .map(|&(lo, hi)| refine_boundary(lo, hi, scan.theta, scan.e, scan.n, scan.mu, params, cfg))
        .collect::<Result<_>>()?;
    Ok(BoundarySet { theta: scan.theta, e: scan.e, n: scan.n, mu: scan.mu, records })
}

/// In-memory products of a full sweep.
#[derive(Debug, Clone)]
pub struct SweepProducts {
    pub scans: Vec<RadialScan>,
    pub intervals: Vec<IntervalSet>,
    pub boundaries: Vec<BoundarySet>,
    pub manifest: SweepManifest,
}

/// Run scans, interval extraction and boundary refinement over the full
/// `(theta, e, n)` grid. Results are ordered by `(theta, e, n)` index,
/// independent of thread count.
pub fn sweep(
    theta_grid: &[f64],
    e_grid: &[f64],
    n_list: &[u32],
    params: &ScanParams,
    mu: MassRatio,
    cfg: &IntegratorConfig,
) -> Result<SweepProducts> {
    if theta_grid.is_empty() || e_grid.is_empty() {
        return Err(Error::Domain("theta and e grids must be nonempty".into()));
    }
    params.validate()?;
    let manifest = SweepManifest {
        mu: mu.value(),
        theta_grid: theta_grid.to_vec(),
        e_grid: e_grid.to_vec(),
        n_list: n_list.to_vec(),
        scan: *params,
        integrator: *cfg,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        created: None,
    };
    let mut products = SweepProducts {
        scans: Vec::new(),
        intervals: Vec::new(),
        boundaries: Vec::new(),
        manifest,
    };
    for &theta in theta_grid {
        for &e in e_grid {
            for &n in n_list {
                let scan = radial_scan(theta, e, n, params, mu, cfg)?;
                products.intervals.push(extract_intervals(&scan));
                products.boundaries.push(refine_scan_boundaries(&scan, params, cfg)?);
                products.scans.push(scan);
            }
        }
    }
    Ok(products)
}

/// Report of a nesting check between two scans of the same ray.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub m: u32,
    pub n: u32,
    /// Radii stable at `m` but unstable at `n < m` (must be empty).
    pub violations: Vec<f64>,
}

/// Check `S_m subset S_n` for `m > n` pointwise on a shared grid.
pub fn monotonicity_check(scan_m: &RadialScan, scan_n: &RadialScan) -> Result<MonotonicityReport> {
    if scan_m.n < scan_n.n {
        return Err(Error::Domain("expected m >= n".into()));
    }
    if scan_m.points.len() != scan_n.points.len()
        || scan_m.theta != scan_n.theta
        || scan_m.e != scan_n.e
        || scan_m.mu != scan_n.mu
    {
        return Err(Error::GridMismatch(format!(
            "scan_m ({}, {}, k={}) vs scan_n ({}, {}, k={})",
            scan_m.theta,
            scan_m.e,
            scan_m.points.len(),
            scan_n.theta,
            scan_n.e,
            scan_n.points.len()
        )));
    }
    let mut violations = Vec::new();
    for (p, q) in scan_m.points.iter().zip(&scan_n.points) {
        if p.r != q.r {
            return Err(Error::GridMismatch(format!("radii differ: {} vs {}", p.r, q.r)));
        }
        if p.is_stable() && q.outcome.is_some() && !q.is_stable() {
            violations.push(p.r);
        }
    }
    Ok(MonotonicityReport { m: scan_m.n, n: scan_n.n, violations })
}

/// Finite-n approximation of the infinite-cycle stable set and boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSets {
    /// Intersection of the stable interval sets for `n = 1..=n_max`.
    pub s_hat: IntervalSet,
    /// Boundary points of the `n_max` level persisting across all lower `n`.
    pub w_prime: Vec<PersistentBoundary>,
    pub n_max: u32,
    /// Always true: these are finite-n stand-ins, not the limit objects.
    pub approximation: bool,
    pub persist_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistentBoundary {
    pub record: BoundaryRecord,
    /// Adjacent unstable kind seen at each level `n = 1..=n_max`, in order.
    pub kind_history: Vec<UnstableKind>,
}

/// Exact interval intersection of two sorted disjoint interval lists.
fn intersect_intervals(a: &[Interval], b: &[Interval]) -> Vec<Interval> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].a.max(b[j].a);
        let hi = a[i].b.min(b[j].b);
        if lo < hi {
            out.push(Interval {
                a: lo,
                b: hi,
                below_resolution: a[i].below_resolution || b[j].below_resolution,
            });
        }
        if a[i].b < b[j].b {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Build limit-set approximations from per-n products of one ray.
///
/// `per_n` must hold `(IntervalSet, BoundarySet)` for `n = 1..=n_max` in
/// ascending order, all on the same `(theta, e, mu)`.
pub fn limit_sets(per_n: &[(IntervalSet, BoundarySet)], persist_tol: f64) -> Result<LimitSets> {
    if per_n.is_empty() {
        return Err(Error::Domain("limit_sets needs at least n = 1".into()));
    }
    let (first, _) = &per_n[0];
    for (iv, bs) in per_n {
        if iv.theta != first.theta || iv.e != first.e || bs.theta != first.theta {
            return Err(Error::GridMismatch("limit_sets inputs span different rays".into()));
        }
    }
    let mut acc = per_n[0].0.intervals.clone();
    for (iv, _) in &per_n[1..] {
        acc = intersect_intervals(&acc, &iv.intervals);
    }
    let n_max = per_n.last().unwrap().0.n;

    let mut w_prime = Vec::new();
    let top = &per_n.last().unwrap().1;
    for rec in &top.records {
        let mut history = Vec::with_capacity(per_n.len());
        let mut persists = true;
        for (_, bs) in per_n {
            match bs
                .records
                .iter()
                .min_by(|x, y| {
                    (x.r_star - rec.r_star)
                        .abs()
                        .partial_cmp(&(y.r_star - rec.r_star).abs())
                        .unwrap()
                })
                .filter(|x| (x.r_star - rec.r_star).abs() <= persist_tol)
            {
                Some(m) => history.push(m.kind),
                None => {
                    persists = false;
                    break;
                }
            }
        }
        if persists {
            w_prime.push(PersistentBoundary { record: *rec, kind_history: history });
        }
    }

    Ok(LimitSets {
        s_hat: IntervalSet {
            theta: first.theta,
            e: first.e,
            n: n_max,
            mu: first.mu,
            intervals: acc,
        },
        w_prime,
        n_max,
        approximation: true,
        persist_tol,
    })
}

/// Three-way label of a periapsis-plane point at finite `n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MstarLabel {
    /// Stable for `n_max` cycles: finite-n stand-in for the interior.
    Interior,
    /// Unstable but adjacent (at grid resolution) to a stable point on its ray.
    Boundary,
    /// Unstable, away from any stability transition.
    Complement,
}

/// Partition points of the `(Y1, Y2)` periapsis plane (with common `e`)
/// into interior / boundary / complement at finite `n_max`.
///
/// Points are grouped by their ray angle; within each ray the labels are
/// exhaustive and mutually exclusive by construction.
pub fn mstar_partition(
    points: &[(f64, f64)],
    e: f64,
    n_max: u32,
    mu: MassRatio,
    cfg: &IntegratorConfig,
) -> Result<Vec<MstarLabel>> {
    let cfg = cfg.with_store(StoreMode::Minimal);
    let stable: Vec<bool> = points
        .par_iter()
        .map(|&(y1, y2)| {
            let r = (y1 * y1 + y2 * y2).sqrt();
            let theta = y2.atan2(y1);
            PeriapsisIC::new(r, theta, e, mu)
                .and_then(|ic| classify(&ic, n_max, &cfg))
                .map(|o| o.is_stable())
        })
        .collect::<Result<_>>()?;

    // group indices by quantized ray angle, sort by radius within a ray
    use std::collections::BTreeMap;
    let mut rays: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &(y1, y2)) in points.iter().enumerate() {
        let theta = y2.atan2(y1);
        rays.entry((theta * 1e9).round() as i64).or_default().push(i);
    }
    let mut labels = vec![MstarLabel::Complement; points.len()];
    for idxs in rays.values() {
        let mut order = idxs.clone();
        order.sort_by(|&a, &b| {
            let ra = points[a].0.hypot(points[a].1);
            let rb = points[b].0.hypot(points[b].1);
            ra.partial_cmp(&rb).unwrap()
        });
        for (pos, &i) in order.iter().enumerate() {
            if stable[i] {
                labels[i] = MstarLabel::Interior;
            } else {
                let near_stable = (pos > 0 && stable[order[pos - 1]])
                    || (pos + 1 < order.len() && stable[order[pos + 1]]);
                labels[i] = if near_stable { MstarLabel::Boundary } else { MstarLabel::Complement };
            }
        }
    }
    Ok(labels)
}

pub fn scan_csv_header() -> &'static str {
    crate::wsb::outcome_csv_header()
}

/// CSV export of a scan: one outcome row per grid point.
pub fn write_scan_csv<W: Write>(scan: &RadialScan, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", scan_csv_header())?;
    for p in &scan.points {
        if let Some(out) = &p.outcome {
            let ic = PeriapsisIC { r: p.r, theta: scan.theta, e: scan.e, mu: scan.mu };
            crate::wsb::write_outcome_row(&mut w, &ic, scan.n, out)?;
        }
    }
    Ok(())
}

/// CSV export of interval sets: `theta,e,n,a,b`.
pub fn write_intervals_csv<W: Write>(sets: &[IntervalSet], mut w: W) -> std::io::Result<()> {
    writeln!(w, "theta,e,n,a,b")?;
    for s in sets {
        for iv in &s.intervals {
            writeln!(w, "{:.16e},{:.16e},{},{:.16e},{:.16e}", s.theta, s.e, s.n, iv.a, iv.b)?;
        }
    }
    Ok(())
}

/// CSV export of boundary sets: `theta,e,n,r_star,side,C,kind`.
pub fn write_boundaries_csv<W: Write>(sets: &[BoundarySet], mut w: W) -> std::io::Result<()> {
    writeln!(w, "theta,e,n,r_star,side,C,kind")?;
    for s in sets {
        for b in &s.records {
            writeln!(
                w,
                "{:.16e},{:.16e},{},{:.16e},{},{:.16e},{}",
                s.theta,
                s.e,
                s.n,
                b.r_star,
                match b.side {
                    Side::Lower => "lower",
                    Side::Upper => "upper",
                },
                b.c,
                kind_label(b.kind)
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wsb::Verdict;

    fn mu_sj() -> MassRatio {
        MassRatio::new(0.00095).unwrap()
    }

    fn quick_params(k: usize) -> ScanParams {
        // straddles the first stability transition at this mass ratio
        ScanParams { r_lo: 1e-3, r_hi: 0.05, k, refine_tol: 1e-8 }
    }

    fn fast_cfg() -> IntegratorConfig {
        // loose-but-honest settings keep unit tests quick; acceptance uses defaults
        IntegratorConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-10,
            t_max: 40.0 * std::f64::consts::TAU,
            store: StoreMode::Minimal,
            ..Default::default()
        }
    }

    #[test]
    fn innermost_region_is_stable() {
        let scan = radial_scan(0.0, 0.0, 1, &quick_params(40), mu_sj(), &fast_cfg()).unwrap();
        assert!(scan.errors.is_empty());
        assert!(scan.points[0].is_stable(), "innermost point unstable");
        let iv = extract_intervals(&scan);
        assert!(!iv.intervals.is_empty());
        assert!(iv.intervals[0].a <= scan.points[0].r + 1e-15);
    }

    #[test]
    fn degenerate_two_point_scan() {
        let params = ScanParams { r_lo: 2e-3, r_hi: 4e-3, k: 2, refine_tol: 1e-8 };
        let scan = radial_scan(0.0, 0.0, 1, &params, mu_sj(), &fast_cfg()).unwrap();
        let iv = extract_intervals(&scan);
        assert!(iv.intervals.len() <= 1);
    }

    #[test]
    fn interval_extraction_patterns() {
        // synthetic scan: alternating stable/unstable verdicts
        let mk = |stable: bool, r: f64| ScanPoint {
            r,
            outcome: Some(StabilityOutcome {
                verdict: if stable {
                    Verdict::Stable { n: 1 }
                } else {
                    Verdict::Unstable { kind: UnstableKind::NonReturn, failing_cycle: 1 }
                },
                crossings: vec![],
                extra_crossings: vec![],
                jacobi: 3.0,
            }),
        };
        let scan = RadialScan {
            theta: 0.0,
            e: 0.0,
            n: 1,
            mu: mu_sj(),
            points: vec![mk(true, 0.01), mk(false, 0.02), mk(true, 0.03), mk(false, 0.04)],
            errors: vec![],
        };
        let iv = extract_intervals(&scan);
        assert_eq!(iv.intervals.len(), 2);
        assert!(iv.intervals.iter().all(|i| i.below_resolution));

        let all_stable = RadialScan {
            points: vec![mk(true, 0.01), mk(true, 0.02), mk(true, 0.03)],
            ..scan.clone()
        };
        let iv = extract_intervals(&all_stable);
        assert_eq!(iv.intervals.len(), 1);
        assert!(!iv.intervals[0].below_resolution);
        assert_eq!((iv.intervals[0].a, iv.intervals[0].b), (0.01, 0.03));
    }

    #[test]
    fn refine_boundary_postconditions() {
        let mu = mu_sj();
        let params = quick_params(60);
        let cfg = fast_cfg();
        let scan = radial_scan(0.0, 0.0, 1, &params, mu, &cfg).unwrap();
        let bs = refine_scan_boundaries(&scan, &params, &cfg).unwrap();
        assert!(!bs.records.is_empty(), "no boundary found in range");
        for rec in &bs.records {
            assert!(rec.bracket_width <= params.refine_tol);
            // re-classification at r* +/- 2 tol gives opposite verdicts
            let lo = PeriapsisIC::new(rec.r_star - 2.0 * params.refine_tol, 0.0, 0.0, mu).unwrap();
            let hi = PeriapsisIC::new(rec.r_star + 2.0 * params.refine_tol, 0.0, 0.0, mu).unwrap();
            let s_lo = classify(&lo, 1, &cfg).unwrap().is_stable();
            let s_hi = classify(&hi, 1, &cfg).unwrap().is_stable();
            assert_ne!(s_lo, s_hi, "no verdict change across r* = {}", rec.r_star);
            match rec.side {
                Side::Upper => assert!(s_lo && !s_hi),
                Side::Lower => assert!(!s_lo && s_hi),
            }
        }
    }

    #[test]
    fn refine_rejects_invalid_bracket() {
        let mu = mu_sj();
        let params = quick_params(10);
        let cfg = fast_cfg();
        // both deep inside the stable core
        let err = refine_boundary(1.5e-3, 2e-3, 0.0, 0.0, 1, mu, &params, &cfg).unwrap_err();
        assert!(matches!(err, Error::InvalidBracket("stable")));
    }

    #[test]
    fn bisection_iteration_count() {
        // width / tol = 2^q means exactly q classify calls after the endpoints
        let width: f64 = 0.016;
        let tol = 1e-8;
        let expected = (width / tol).log2().ceil() as usize;
        // bisection halves until below tol
        let mut w = width;
        let mut iters = 0;
        while w > tol {
            w *= 0.5;
            iters += 1;
        }
        assert_eq!(iters, expected);
    }

    #[test]
    fn monotone_nesting_pointwise() {
        let mu = mu_sj();
        let params = quick_params(50);
        let cfg = fast_cfg();
        let s1 = radial_scan(0.0, 0.0, 1, &params, mu, &cfg).unwrap();
        let s3 = radial_scan(0.0, 0.0, 3, &params, mu, &cfg).unwrap();
        let rep = monotonicity_check(&s3, &s1).unwrap();
        assert!(rep.violations.is_empty(), "violations at {:?}", rep.violations);
        // m = n is trivially empty
        let rep = monotonicity_check(&s1, &s1).unwrap();
        assert!(rep.violations.is_empty());
    }

    #[test]
    fn monotonicity_negative_control() {
        // deliberately corrupted input must be flagged
        let mu = mu_sj();
        let params = quick_params(30);
        let cfg = fast_cfg();
        let s1 = radial_scan(0.0, 0.0, 1, &params, mu, &cfg).unwrap();
        let mut s3 = radial_scan(0.0, 0.0, 3, &params, mu, &cfg).unwrap();
        // find a point unstable at n=1 (hence at n=3) and force it "stable" at m=3
        let fake = StabilityOutcome {
            verdict: Verdict::Stable { n: 3 },
            crossings: vec![],
            extra_crossings: vec![],
            jacobi: 3.0,
        };
        let mut corrupted = false;
        for (i, p) in s1.points.iter().enumerate() {
            if !p.is_stable() {
                s3.points[i].outcome = Some(fake.clone());
                corrupted = true;
                break;
            }
        }
        assert!(corrupted, "scan had no unstable point to corrupt");
        let rep = monotonicity_check(&s3, &s1).unwrap();
        assert_eq!(rep.violations.len(), 1);
    }

    #[test]
    fn grid_mismatch_detected() {
        let mu = mu_sj();
        let cfg = fast_cfg();
        let a = radial_scan(0.0, 0.0, 1, &quick_params(20), mu, &cfg).unwrap();
        let b = radial_scan(0.0, 0.0, 1, &quick_params(25), mu, &cfg).unwrap();
        assert!(matches!(monotonicity_check(&a, &b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn interval_intersection_arithmetic() {
        let iv = |a: f64, b: f64| Interval { a, b, below_resolution: false };
        let a = vec![iv(0.0, 2.0), iv(3.0, 5.0)];
        let b = vec![iv(1.0, 4.0)];
        let out = intersect_intervals(&a, &b);
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].a, out[0].b), (1.0, 2.0));
        assert_eq!((out[1].a, out[1].b), (3.0, 4.0));
    }

    #[test]
    fn limit_sets_reduce_to_level_one() {
        let mu = mu_sj();
        let params = quick_params(40);
        let cfg = fast_cfg();
        let scan = radial_scan(0.0, 0.0, 1, &params, mu, &cfg).unwrap();
        let iv = extract_intervals(&scan);
        let bs = refine_scan_boundaries(&scan, &params, &cfg).unwrap();
        let ls = limit_sets(&[(iv.clone(), bs.clone())], 10.0 * params.refine_tol).unwrap();
        assert_eq!(ls.n_max, 1);
        assert!(ls.approximation);
        assert_eq!(ls.s_hat.intervals.len(), iv.intervals.len());
        assert_eq!(ls.w_prime.len(), bs.records.len());
    }

    #[test]
    fn limit_sets_nested_non_increasing() {
        let mu = mu_sj();
        let params = quick_params(40);
        let cfg = fast_cfg();
        let mut per_n = Vec::new();
        for n in 1..=3 {
            let scan = radial_scan(0.0, 0.0, n, &params, mu, &cfg).unwrap();
            let iv = extract_intervals(&scan);
            let bs = refine_scan_boundaries(&scan, &params, &cfg).unwrap();
            per_n.push((iv, bs));
        }
        let l2 = limit_sets(&per_n[..2], 10.0 * params.refine_tol).unwrap();
        let l3 = limit_sets(&per_n, 10.0 * params.refine_tol).unwrap();
        assert!(l3.s_hat.measure() <= l2.s_hat.measure() + 1e-15);
        // every interval of the deeper approximation is inside the shallower
        for iv in &l3.s_hat.intervals {
            assert!(
                l2.s_hat.intervals.iter().any(|o| o.a <= iv.a + 1e-15 && iv.b <= o.b + 1e-15),
                "interval ({}, {}) not nested",
                iv.a,
                iv.b
            );
        }
    }

    #[test]
    fn mstar_labels_exhaustive_and_adjacent() {
        let mu = mu_sj();
        let cfg = fast_cfg();
        // one ray of points through the stability transition
        let mut pts = Vec::new();
        for i in 0..30 {
            let r = 1e-3 + (0.055 - 1e-3) * i as f64 / 29.0;
            pts.push((r, 0.0));
        }
        let labels = mstar_partition(&pts, 0.0, 2, mu, &cfg).unwrap();
        assert_eq!(labels.len(), pts.len());
        assert!(labels.contains(&MstarLabel::Interior), "near-P2 disk should be interior");
        for (i, l) in labels.iter().enumerate() {
            if *l == MstarLabel::Boundary {
                let prev = i.checked_sub(1).map(|j| labels[j]);
                let next = labels.get(i + 1).copied();
                assert!(
                    prev == Some(MstarLabel::Interior) || next == Some(MstarLabel::Interior),
                    "boundary label not adjacent to interior"
                );
            }
        }
    }

    #[test]
    fn empty_n_list_manifest_only() {
        let mu = mu_sj();
        let params = quick_params(10);
        let cfg = fast_cfg();
        let prods = sweep(&[0.0], &[0.0], &[], &params, mu, &cfg).unwrap();
        assert!(prods.scans.is_empty());
        assert_eq!(prods.manifest.n_list.len(), 0);
    }

    #[test]
    fn scan_csv_round_shape() {
        let mu = mu_sj();
        let params = quick_params(8);
        let cfg = fast_cfg();
        let scan = radial_scan(0.5, 0.2, 1, &params, mu, &cfg).unwrap();
        let mut buf = Vec::new();
        write_scan_csv(&scan, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + scan.points.len());
        assert!(text.starts_with("r,theta,e,mu,C,verdict,kind"));
    }
}
