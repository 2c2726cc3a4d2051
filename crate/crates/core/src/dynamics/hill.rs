//! Hill-region geometry: forbidden-region tests, connected-component
//! labeling of the allowed region, and zero-velocity contour extraction.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dynamics::{omega_potential, MassRatio};
use crate::error::{Error, Result};

/// Grid used for flood fill and contour extraction, P1-centered chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for HillGrid {
    fn default() -> Self {
        // resolves the O(mu^(1/3)) necks down to mu ~ 1e-5
        Self {
            x_min: -2.0,
            x_max: 3.0,
            y_min: -2.5,
            y_max: 2.5,
            nx: 2048,
            ny: 2048,
        }
    }
}

impl HillGrid {
    pub fn with_resolution(nx: usize, ny: usize) -> Self {
        Self { nx, ny, ..Self::default() }
    }

    #[inline]
    fn x(&self, i: usize) -> f64 {
        self.x_min + (self.x_max - self.x_min) * i as f64 / (self.nx - 1) as f64
    }

    #[inline]
    fn y(&self, j: usize) -> f64 {
        self.y_min + (self.y_max - self.y_min) * j as f64 / (self.ny - 1) as f64
    }

    fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if x < self.x_min || x > self.x_max || y < self.y_min || y > self.y_max {
            return None;
        }
        let i = ((x - self.x_min) / (self.x_max - self.x_min) * (self.nx - 1) as f64).round();
        let j = ((y - self.y_min) / (self.y_max - self.y_min) * (self.ny - 1) as f64).round();
        Some((i as usize, j as usize))
    }
}

/// Where a position sits relative to the Hill regions at a given `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionLabel {
    /// Component of the allowed region containing P1.
    H1,
    /// Component containing P2.
    H2,
    /// Outer component.
    Outer,
    /// `2 Omega < C`: motion impossible.
    Forbidden,
    /// Within one grid cell of the zero-velocity curve; the label is not
    /// trustworthy at this resolution.
    BoundaryUncertain,
}

/// Precomputed connected-component labeling of the allowed region
/// `2 Omega >= C` for one `(C, mu)` pair.
pub struct HillRegions {
    grid: HillGrid,
    c: f64,
    mu: MassRatio,
    /// 0 = forbidden, 1 = H1, 2 = H2, 3 = outer, 255 = allowed but unreached
    labels: Vec<u8>,
}

impl HillRegions {
    /// Flood-fill the allowed region from seeds at P1, P2 and a far-field
    /// corner. Merged components keep per-cell labels from whichever seed
    /// reaches them first (multi-source BFS), so "nearest primary" wins.
    pub fn compute(c: f64, mu: MassRatio, grid: HillGrid) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let mut labels = vec![0u8; nx * ny];
        let idx = |i: usize, j: usize| j * nx + i;

        for j in 0..ny {
            let y = grid.y(j);
            for i in 0..nx {
                let x = grid.x(i);
                if 2.0 * omega_potential(x, y, mu) >= c {
                    labels[idx(i, j)] = 255;
                }
            }
        }

        let mut queue = VecDeque::new();
        let seeds = [
            (grid.cell_of(0.0, 0.0), 1u8),
            (grid.cell_of(1.0, 0.0), 2u8),
            (grid.cell_of(grid.x_max, grid.y_max), 3u8),
        ];
        for (cell, lab) in seeds {
            if let Some((i, j)) = cell {
                if labels[idx(i, j)] == 255 {
                    labels[idx(i, j)] = lab;
                    queue.push_back((i, j));
                }
            }
        }
        while let Some((i, j)) = queue.pop_front() {
            let lab = labels[idx(i, j)];
            let push = |ii: usize, jj: usize, labels: &mut Vec<u8>, queue: &mut VecDeque<_>| {
                if labels[idx(ii, jj)] == 255 {
                    labels[idx(ii, jj)] = lab;
                    queue.push_back((ii, jj));
                }
            };
            if i > 0 {
                push(i - 1, j, &mut labels, &mut queue);
            }
            if i + 1 < nx {
                push(i + 1, j, &mut labels, &mut queue);
            }
            if j > 0 {
                push(i, j - 1, &mut labels, &mut queue);
            }
            if j + 1 < ny {
                push(i, j + 1, &mut labels, &mut queue);
            }
        }

        Self { grid, c, mu, labels }
    }

    pub fn jacobi(&self) -> f64 {
        self.c
    }

    /// Classify one position (P1-centered chart).
    pub fn classify(&self, x: f64, y: f64) -> Result<RegionLabel> {
        let (i, j) = self
            .grid
            .cell_of(x, y)
            .ok_or_else(|| Error::Domain(format!("point ({x}, {y}) outside the Hill grid")))?;
        let idx = |i: usize, j: usize| j * self.grid.nx + i;
        let here_forbidden = 2.0 * omega_potential(x, y, self.mu) < self.c;

        // uncertain if the 3x3 neighborhood mixes allowed and forbidden cells
        let mut saw_allowed = false;
        let mut saw_forbidden = false;
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                let ii = i as i64 + di;
                let jj = j as i64 + dj;
                if ii < 0 || jj < 0 || ii >= self.grid.nx as i64 || jj >= self.grid.ny as i64 {
                    continue;
                }
                if self.labels[idx(ii as usize, jj as usize)] == 0 {
                    saw_forbidden = true;
                } else {
                    saw_allowed = true;
                }
            }
        }
        if saw_allowed && saw_forbidden {
            return Ok(RegionLabel::BoundaryUncertain);
        }
        if here_forbidden {
            return Ok(RegionLabel::Forbidden);
        }
        Ok(match self.labels[idx(i, j)] {
            1 => RegionLabel::H1,
            2 => RegionLabel::H2,
            3 => RegionLabel::Outer,
            0 => RegionLabel::Forbidden,
            _ => RegionLabel::Outer, // unreached pocket: treat as outer
        })
    }

    /// Fraction of grid cells that are forbidden.
    pub fn forbidden_fraction(&self) -> f64 {
        let n = self.labels.iter().filter(|&&l| l == 0).count();
        n as f64 / self.labels.len() as f64
    }
}

/// One-shot classification of a single point; builds the flood fill
/// internally. Prefer [`HillRegions::compute`] + `classify` for many queries.
pub fn hill_classify(x: f64, y: f64, c: f64, mu: MassRatio, grid: HillGrid) -> Result<RegionLabel> {
    HillRegions::compute(c, mu, grid).classify(x, y)
}

/// A connected polyline of the zero-velocity contour, P1-centered chart.
pub type Polyline = Vec<(f64, f64)>;

/// Extract the contour `2 Omega = C` by marching squares on the given grid.
///
/// Returns an empty set for `C <= 3` (the zero-velocity set is empty below
/// the triangular-point level).
pub fn zero_velocity_curve(c: f64, mu: MassRatio, grid: HillGrid) -> Vec<Polyline> {
    if c <= 3.0 {
        return Vec::new();
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let mut f = vec![0.0f64; nx * ny];
    for j in 0..ny {
        let y = grid.y(j);
        for i in 0..nx {
            f[j * nx + i] = 2.0 * omega_potential(grid.x(i), y, mu) - c;
        }
    }

    // segment endpoints keyed by (cell edge) for polyline assembly
    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    let interp = |fa: f64, fb: f64| -> f64 {
        // linear zero crossing between the two corner values
        let d = fb - fa;
        if d.abs() < f64::MIN_POSITIVE {
            0.5
        } else {
            (-fa / d).clamp(0.0, 1.0)
        }
    };

    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let f00 = f[j * nx + i];
            let f10 = f[j * nx + i + 1];
            let f01 = f[(j + 1) * nx + i];
            let f11 = f[(j + 1) * nx + i + 1];
            let mut case = 0u8;
            if f00 < 0.0 {
                case |= 1;
            }
            if f10 < 0.0 {
                case |= 2;
            }
            if f11 < 0.0 {
                case |= 4;
            }
            if f01 < 0.0 {
                case |= 8;
            }
            if case == 0 || case == 15 {
                continue;
            }
            // edges: 0 bottom, 1 right, 2 top, 3 left
            let e = |edge: u8| -> EdgeKey {
                let t = match edge {
                    0 => interp(f00, f10),
                    1 => interp(f10, f11),
                    2 => interp(f01, f11),
                    _ => interp(f00, f01),
                };
                EdgeKey { i, j, edge, t_mil: (t * 1e6) as u32 }
            };
            let pairs: &[(u8, u8)] = match case {
                1 => &[(3, 0)],
                2 => &[(0, 1)],
                3 => &[(3, 1)],
                4 => &[(1, 2)],
                5 => &[(3, 2), (0, 1)], // ambiguous saddle: consistent arbitrary split
                6 => &[(0, 2)],
                7 => &[(3, 2)],
                8 => &[(2, 3)],
                9 => &[(0, 2)],
                10 => &[(0, 3), (1, 2)],
                11 => &[(1, 2)],
                12 => &[(3, 1)],
                13 => &[(0, 1)],
                14 => &[(3, 0)],
                _ => &[],
            };
            for &(a, b) in pairs {
                segments.push((e(a), e(b)));
            }
        }
    }

    assemble_polylines(&segments, &grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct EdgeKey {
    i: usize,
    j: usize,
    edge: u8,
    t_mil: u32,
}

impl EdgeKey {
    /// Canonical identity of the grid edge (shared between adjacent cells).
    fn canonical(&self) -> (usize, usize, u8) {
        match self.edge {
            0 => (self.i, self.j, 0),     // horizontal edge at row j
            2 => (self.i, self.j + 1, 0), // top edge == bottom edge of row j+1
            3 => (self.i, self.j, 1),     // vertical edge at column i
            _ => (self.i + 1, self.j, 1), // right edge == left edge of column i+1
        }
    }

    fn position(&self, grid: &HillGrid) -> (f64, f64) {
        let t = self.t_mil as f64 / 1e6;
        let (x0, y0) = (grid.x(self.i), grid.y(self.j));
        let dx = grid.x(self.i + 1) - x0;
        let dy = grid.y(self.j + 1) - y0;
        match self.edge {
            0 => (x0 + t * dx, y0),
            1 => (x0 + dx, y0 + t * dy),
            2 => (x0 + t * dx, y0 + dy),
            _ => (x0, y0 + t * dy),
        }
    }
}

fn assemble_polylines(segments: &[(EdgeKey, EdgeKey)], grid: &HillGrid) -> Vec<Polyline> {
    use std::collections::HashMap;
    let mut adj: HashMap<(usize, usize, u8), Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        adj.entry(a.canonical()).or_default().push(k);
        adj.entry(b.canonical()).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();

    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (a, b) = segments[start];
        let mut line: VecDeque<EdgeKey> = VecDeque::from([a, b]);
        // extend forward then backward
        for dir in 0..2 {
            loop {
                let tail = if dir == 0 { *line.back().unwrap() } else { *line.front().unwrap() };
                let Some(cands) = adj.get(&tail.canonical()) else { break };
                let mut advanced = false;
                for &k in cands {
                    if used[k] {
                        continue;
                    }
                    let (p, q) = segments[k];
                    let next = if p.canonical() == tail.canonical() { q } else { p };
                    used[k] = true;
                    if dir == 0 {
                        line.push_back(next);
                    } else {
                        line.push_front(next);
                    }
                    advanced = true;
                    break;
                }
                if !advanced {
                    break;
                }
            }
        }
        polylines.push(line.iter().map(|e| e.position(grid)).collect());
    }
    polylines
}
