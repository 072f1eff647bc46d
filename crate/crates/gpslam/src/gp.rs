//! Per-cell, per-direction Gaussian-process regression. Each active direction
//! of a cell yields a layer of predictions (mean + variance) at the lattice
//! test locations; the direction coordinate is the observation and the two
//! orthogonal coordinates form the training location.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Direction, Point3};
use crate::grid::{principled_downsample, CellBucket, CellIndex, GridConfig, TestLattice};

/// Exponential kernel `exp(-kappa * |l1 - l2|)` with unit prior variance,
/// plus observation noise `sigma2` on the diagonal.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Inverse length-scale, 1/m.
    pub kappa: f64,
    /// Observation noise variance, m^2.
    pub sigma2: f64,
    /// Diagonal stabilizer added to the training system, m^2.
    pub jitter: f64,
    /// Add `sigma2` to the predictive variance (predicting a noisy draw
    /// rather than the latent surface). Keeps fusion weights bounded away
    /// from zero.
    pub variance_includes_noise: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            kappa: 2.0, // two lattice steps at the default r = 0.25 m
            sigma2: 0.03 * 0.03,
            jitter: 1e-8,
            variance_includes_noise: true,
        }
    }
}

impl KernelConfig {
    // The negated comparisons deliberately reject NaN along with the
    // out-of-range values.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) || !(self.sigma2 > 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::Config(
                "kernel requires kappa > 0, sigma2 > 0, jitter >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Prior variance at a test location, before conditioning on any data.
    pub fn prior_variance(&self) -> f64 {
        if self.variance_includes_noise {
            1.0 + self.sigma2
        } else {
            1.0
        }
    }
}

pub fn kernel(l1: &Vector2<f64>, l2: &Vector2<f64>, cfg: &KernelConfig) -> f64 {
    (-cfg.kappa * (l1 - l2).norm()).exp()
}

/// One GP prediction at a fixed lattice test location.
#[derive(Clone, Copy, Debug)]
pub struct Sample {
    pub direction: Direction,
    pub lattice_id: (usize, usize),
    /// Planar coordinates in the two axes orthogonal to `direction`, meters.
    pub location: Vector2<f64>,
    /// Predicted coordinate along `direction`, meters (world frame).
    pub mean: f64,
    pub variance: f64,
}

impl Sample {
    /// Full 3D position: planar location plus predicted coordinate.
    pub fn position(&self) -> Point3 {
        let (u, v) = self.direction.planar_axes();
        let mut p = Point3::origin();
        p[u] = self.location.x;
        p[v] = self.location.y;
        p[self.direction.axis()] = self.mean;
        p
    }
}

/// All predictions of one cell for one direction, dense over the lattice
/// (index `i * dim + j`).
#[derive(Clone, Debug)]
pub struct Layer {
    pub direction: Direction,
    pub samples: Vec<Sample>,
    /// Training points actually used after down-sampling (instrumentation:
    /// bounded by the lattice size).
    pub training_count: usize,
}

impl Layer {
    pub fn sample(&self, lattice_id: (usize, usize)) -> Option<&Sample> {
        let dim = (self.samples.len() as f64).sqrt().round() as usize;
        let (i, j) = lattice_id;
        if i >= dim || j >= dim {
            return None;
        }
        self.samples.get(i * dim + j)
    }
}

/// GP prediction at `test_locations` conditioned on the training set:
/// mean `k_*^T (sigma2 I + K)^-1 f`, variance
/// `k(l*, l*) - k_*^T (sigma2 I + K)^-1 k_*` (plus `sigma2` when the config
/// says predictions include observation noise). Solved by Cholesky
/// factorization of the jittered training system.
pub fn gp_predict(
    train_locations: &[Vector2<f64>],
    train_values: &[f64],
    test_locations: &[Vector2<f64>],
    cfg: &KernelConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    assert_eq!(train_locations.len(), train_values.len());
    let n = train_locations.len();
    if n == 0 {
        return Err(Error::Reconstruction("no training points".into()));
    }

    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let k = kernel(&train_locations[i], &train_locations[j], cfg);
            a[(i, j)] = k;
            a[(j, i)] = k;
        }
        a[(i, i)] += cfg.sigma2 + cfg.jitter;
    }
    let chol = a.cholesky().ok_or_else(|| {
        Error::Reconstruction(format!("training system not positive definite (n = {n})"))
    })?;

    let alpha = chol.solve(&DVector::from_column_slice(train_values));

    let mut means = Vec::with_capacity(test_locations.len());
    let mut variances = Vec::with_capacity(test_locations.len());
    let mut kstar = DVector::zeros(n);
    for t in test_locations {
        for i in 0..n {
            kstar[i] = kernel(&train_locations[i], t, cfg);
        }
        means.push(kstar.dot(&alpha));
        let v = chol.solve(&kstar);
        let mut var = 1.0 - kstar.dot(&v);
        if cfg.variance_includes_noise {
            var += cfg.sigma2;
        }
        variances.push(var.max(1e-12));
    }
    Ok((means, variances))
}

/// Reconstruct one cell: for every active direction, down-sample the raw
/// points onto the lattice and regress the direction coordinate over the
/// planar training locations. Directions with fewer than `min_points`
/// retained points (or a failed factorization) produce no layer.
///
/// Observations are centered on their mean before the solve and the mean is
/// added back to the predictions; the zero-mean prior then models the
/// residual surface instead of the absolute world coordinate.
pub fn reconstruct_cell(
    bucket: &CellBucket,
    cell: CellIndex,
    grid: &GridConfig,
    kernel_cfg: &KernelConfig,
) -> Vec<Layer> {
    let mut layers = Vec::new();
    for &dir in &bucket.active_directions {
        let lattice = TestLattice::new(cell, dir, grid);
        let train = principled_downsample(&bucket.raw_points, dir, &lattice);
        if train.len() < grid.min_points {
            continue;
        }
        let locs: Vec<Vector2<f64>> = train.iter().map(|p| lattice.project(p, dir)).collect();
        let vals: Vec<f64> = train.iter().map(|p| dir.coord(p)).collect();
        let offset = vals.iter().sum::<f64>() / vals.len() as f64;
        let centered: Vec<f64> = vals.iter().map(|v| v - offset).collect();

        let test_locs = lattice.locations();
        let (means, variances) = match gp_predict(&locs, &centered, &test_locs, kernel_cfg) {
            Ok(out) => out,
            Err(_) => continue, // layer skipped, raw points stay with the cell
        };

        let dim = lattice.dim();
        let mut samples = Vec::with_capacity(test_locs.len());
        for (idx, loc) in test_locs.iter().enumerate() {
            samples.push(Sample {
                direction: dir,
                lattice_id: (idx / dim, idx % dim),
                location: *loc,
                mean: means[idx] + offset,
                variance: variances[idx],
            });
        }
        layers.push(Layer {
            direction: dir,
            samples,
            training_count: train.len(),
        });
    }
    layers
}
