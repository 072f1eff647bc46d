//! Regionalization of world space into cubic cells, PCA-based direction
//! selection, the per-cell test-location lattice, and the linear-time
//! principled down-sampling filter.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Direction, Point3, PointCloud};

/// Cell side length must be an integer multiple of the test interval; the
/// shared lattice across adjacent cells depends on it.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GridConfig {
    /// Cell side length `a`, meters.
    pub cell_side_a: f64,
    /// Interval `r` between test locations, meters.
    pub test_interval_r: f64,
    /// Minimum retained training points to attempt reconstruction.
    pub min_points: usize,
    /// A cell counts as planar when the smallest covariance eigenvalue is at
    /// most this ratio of the middle one.
    pub planarity_ratio: f64,
    /// A direction is omitted only when the planar normal's component along
    /// it is below this threshold.
    pub normal_threshold: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            cell_side_a: 1.5,
            test_interval_r: 0.25,
            min_points: 5,
            planarity_ratio: 0.1,
            normal_threshold: 0.15,
        }
    }
}

impl GridConfig {
    // The negated comparisons deliberately reject NaN along with the
    // out-of-range values.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_side_a > 0.0) || !(self.test_interval_r > 0.0) {
            return Err(Error::Config(
                "cell_side_a and test_interval_r must be positive".into(),
            ));
        }
        let ratio = self.cell_side_a / self.test_interval_r;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "cell_side_a ({}) must be an integer multiple of test_interval_r ({})",
                self.cell_side_a, self.test_interval_r
            )));
        }
        if self.min_points == 0 {
            return Err(Error::Config("min_points must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of lattice steps per cell edge, `a / r`.
    pub fn lattice_dim(&self) -> usize {
        (self.cell_side_a / self.test_interval_r).round() as usize
    }

    /// Test locations per layer, `(a / r)^2`.
    pub fn samples_per_layer(&self) -> usize {
        let n = self.lattice_dim();
        n * n
    }
}

/// Integer cell coordinates, `floor(world coordinate / a)` per axis.
/// Half-open intervals `[k*a, (k+1)*a)` so boundary points go to the
/// higher-index cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    pub ix: i64,
    pub iy: i64,
    pub iz: i64,
}

impl CellIndex {
    pub fn of_point(p: &Point3, cell_side: f64) -> CellIndex {
        CellIndex {
            ix: (p.x / cell_side).floor() as i64,
            iy: (p.y / cell_side).floor() as i64,
            iz: (p.z / cell_side).floor() as i64,
        }
    }

    /// World coordinates of the cell's minimum corner.
    pub fn min_corner(&self, cell_side: f64) -> Vector3<f64> {
        Vector3::new(
            self.ix as f64 * cell_side,
            self.iy as f64 * cell_side,
            self.iz as f64 * cell_side,
        )
    }

    /// Neighbor offset by `step` cells along direction `d`.
    pub fn neighbor(&self, d: Direction, step: i64) -> CellIndex {
        let mut c = *self;
        match d {
            Direction::X => c.ix += step,
            Direction::Y => c.iy += step,
            Direction::Z => c.iz += step,
        }
        c
    }

    pub fn contains(&self, p: &Point3, cell_side: f64) -> bool {
        *self == CellIndex::of_point(p, cell_side)
    }
}

/// Raw points of one cell plus the directions PCA kept for reconstruction.
#[derive(Clone, Debug, Default)]
pub struct CellBucket {
    pub raw_points: PointCloud,
    pub active_directions: Vec<Direction>,
}

/// Planar test locations of one cell for one direction: `(a/r)^2` points at
/// offsets `(i + 1/2) * r` from the cell's minimum corner in the two axes
/// orthogonal to the direction.
///
/// Cells adjacent along the direction axis share the same minimum corner in
/// the planar axes, so their lattices coincide exactly. That identity is what
/// lets the matcher pair samples across those cells without any search.
#[derive(Clone, Copy, Debug)]
pub struct TestLattice {
    origin: Vector2<f64>,
    interval: f64,
    dim: usize,
}

impl TestLattice {
    pub fn new(cell: CellIndex, direction: Direction, cfg: &GridConfig) -> TestLattice {
        let corner = cell.min_corner(cfg.cell_side_a);
        let (u, v) = direction.planar_axes();
        TestLattice {
            origin: Vector2::new(corner[u], corner[v]),
            interval: cfg.test_interval_r,
            dim: cfg.lattice_dim(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.dim * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    /// Planar coordinates of test location `(i, j)`.
    pub fn location(&self, i: usize, j: usize) -> Vector2<f64> {
        Vector2::new(
            self.origin.x + (i as f64 + 0.5) * self.interval,
            self.origin.y + (j as f64 + 0.5) * self.interval,
        )
    }

    pub fn locations(&self) -> Vec<Vector2<f64>> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.push(self.location(i, j));
            }
        }
        out
    }

    /// Sub-grid that contains the planar coordinates `l`. Points sit inside
    /// the cell, but coordinates exactly on the upper bound are clamped back.
    pub fn sub_grid(&self, l: &Vector2<f64>) -> (usize, usize) {
        let clamp = |x: f64| -> usize {
            let k = ((x) / self.interval).floor() as i64;
            k.clamp(0, self.dim as i64 - 1) as usize
        };
        (clamp(l.x - self.origin.x), clamp(l.y - self.origin.y))
    }

    /// Planar coordinates of `p` in this lattice's (u, v) axes.
    pub fn project(&self, p: &Point3, direction: Direction) -> Vector2<f64> {
        let (u, v) = direction.planar_axes();
        Vector2::new(p[u], p[v])
    }
}

/// Bin a world-frame cloud into cubic cells. Non-finite points are dropped.
pub fn regionalize(cloud: &PointCloud, cfg: &GridConfig) -> HashMap<CellIndex, CellBucket> {
    let mut cells: HashMap<CellIndex, CellBucket> = HashMap::new();
    for p in cloud {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            continue;
        }
        let idx = CellIndex::of_point(p, cfg.cell_side_a);
        cells.entry(idx).or_default().raw_points.push(*p);
    }
    cells
}

/// Decide which coordinate directions a cell's surface constrains.
///
/// Starts from all three; a direction is dropped only when the point set is
/// planar (smallest eigenvalue <= planarity_ratio * middle eigenvalue) and
/// the plane normal has almost no component along that axis, i.e. the surface
/// is perpendicular to the corresponding coordinate plane and provides no
/// constraint there.
pub fn select_directions(points: &[Point3], cfg: &GridConfig) -> Vec<Direction> {
    let all = Direction::ALL.to_vec();
    if points.len() < 3 {
        return all;
    }
    let n = points.len() as f64;
    let mut mean = Vector3::zeros();
    for p in points {
        mean += p.coords;
    }
    mean /= n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    cov /= n;

    let eig = cov.symmetric_eigen();
    // Sort eigenpairs ascending by eigenvalue.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (e0, e1) = (eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]].max(0.0));
    let e2 = eig.eigenvalues[order[2]].max(0.0);

    // Coincident or collinear points give no usable plane; keep everything.
    if e2 < 1e-18 || e1 <= 1e-12 * e2 {
        return all;
    }
    let planar = e0 <= cfg.planarity_ratio * e1;
    if !planar {
        return all;
    }
    let normal = eig.eigenvectors.column(order[0]).into_owned();
    let kept: Vec<Direction> = Direction::ALL
        .into_iter()
        .filter(|d| normal.dot(&d.unit()).abs() >= cfg.normal_threshold)
        .collect();
    if kept.is_empty() {
        // A unit normal always has a component >= 1/sqrt(3) somewhere; this
        // only triggers for oversized thresholds. Keep the best-constrained axis.
        let best = Direction::ALL
            .into_iter()
            .max_by(|a, b| {
                normal
                    .dot(&a.unit())
                    .abs()
                    .total_cmp(&normal.dot(&b.unit()).abs())
            })
            .unwrap();
        return vec![best];
    }
    kept
}

/// Single-pass 2D voxel filter over a cell: per lattice sub-grid, keep the
/// point whose planar training location is closest to that sub-grid's test
/// location. Output is ordered by sub-grid index, so it is deterministic.
pub fn principled_downsample(
    points: &[Point3],
    direction: Direction,
    lattice: &TestLattice,
) -> PointCloud {
    let mut best: Vec<Option<(f64, Point3)>> = vec![None; lattice.len()];
    for p in points {
        let l = lattice.project(p, direction);
        let (i, j) = lattice.sub_grid(&l);
        let center = lattice.location(i, j);
        let d2 = (l - center).norm_squared();
        let slot = &mut best[i * lattice.dim() + j];
        match slot {
            Some((cur, _)) if *cur <= d2 => {}
            _ => *slot = Some((d2, *p)),
        }
    }
    best.into_iter().flatten().map(|(_, p)| p).collect()
}
