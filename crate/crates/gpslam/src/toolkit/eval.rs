//! Evaluation metrics: mean map entropy, closest-point RMSE, and trajectory
//! error against ground truth.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, PoseSE3};

/// Neighborhoods need at least this many points (including the query) for a
/// well-defined 3x3 covariance.
const MME_MIN_NEIGHBORS: usize = 5;

/// Mean map entropy: per point with enough neighbors inside `radius`, the
/// Gaussian differential entropy `h = 1/2 ln det(2 pi e Sigma)` of the
/// neighborhood sample covariance, averaged over qualifying points. Sharper
/// clouds score lower.
pub fn mean_map_entropy(cloud: &PointCloud, radius: f64) -> Result<f64> {
    if cloud.is_empty() || radius <= 0.0 {
        return Err(Error::EntropyUndefined);
    }
    let grid = SpatialHash::build(cloud, radius);
    let r2 = radius * radius;
    let mut sum = 0.0;
    let mut count = 0usize;
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;

    for p in cloud.iter() {
        let mut neighbors: Vec<&Point3> = Vec::new();
        grid.for_each_nearby(p, |q| {
            if (p - q).norm_squared() <= r2 {
                neighbors.push(q);
            }
        });
        if neighbors.len() < MME_MIN_NEIGHBORS {
            continue;
        }
        let n = neighbors.len() as f64;
        let mut mean = Vector3::zeros();
        for q in &neighbors {
            mean += q.coords;
        }
        mean /= n;
        let mut cov = Matrix3::zeros();
        for q in &neighbors {
            let d = q.coords - mean;
            cov += d * d.transpose();
        }
        cov /= n;
        let det = cov.determinant();
        if det <= 0.0 {
            continue; // fully degenerate neighborhood
        }
        sum += 0.5 * (two_pi_e.powi(3) * det).ln();
        count += 1;
    }
    if count == 0 {
        return Err(Error::EntropyUndefined);
    }
    Ok(sum / count as f64)
}

struct SpatialHash<'a> {
    cells: HashMap<(i64, i64, i64), Vec<&'a Point3>>,
    cell_size: f64,
}

impl<'a> SpatialHash<'a> {
    fn build(cloud: &'a PointCloud, cell_size: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<&Point3>> = HashMap::new();
        for p in cloud {
            cells.entry(Self::key(p, cell_size)).or_default().push(p);
        }
        SpatialHash { cells, cell_size }
    }

    fn key(p: &Point3, s: f64) -> (i64, i64, i64) {
        (
            (p.x / s).floor() as i64,
            (p.y / s).floor() as i64,
            (p.z / s).floor() as i64,
        )
    }

    fn for_each_nearby<F: FnMut(&'a Point3)>(&self, p: &Point3, mut f: F) {
        let (kx, ky, kz) = Self::key(p, self.cell_size);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(v) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) {
                        for q in v {
                            f(q);
                        }
                    }
                }
            }
        }
    }
}

/// Keep one centroid per cubic leaf. Deterministic: output ordered by leaf
/// index.
pub fn voxel_downsample(cloud: &PointCloud, leaf: f64) -> PointCloud {
    let mut acc: HashMap<(i64, i64, i64), (Vector3<f64>, usize)> = HashMap::new();
    for p in cloud {
        let key = (
            (p.x / leaf).floor() as i64,
            (p.y / leaf).floor() as i64,
            (p.z / leaf).floor() as i64,
        );
        let e = acc.entry(key).or_insert((Vector3::zeros(), 0));
        e.0 += p.coords;
        e.1 += 1;
    }
    let mut keys: Vec<_> = acc.keys().copied().collect();
    keys.sort();
    keys.into_iter()
        .map(|k| {
            let (sum, n) = acc[&k];
            Point3::from(sum / n as f64)
        })
        .collect()
}

/// Root mean square of source-to-nearest-target distances. Brute force by
/// intent: this is an oracle metric, O(n * m).
pub fn closest_point_rmse(source: &PointCloud, target: &PointCloud) -> f64 {
    assert!(!source.is_empty() && !target.is_empty());
    let mut sum = 0.0;
    for s in source {
        let mut best = f64::INFINITY;
        for t in target {
            let d2 = (s - t).norm_squared();
            if d2 < best {
                best = d2;
            }
        }
        sum += best;
    }
    (sum / source.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug)]
pub struct TrajReport {
    /// Mean 3D translation error after rigid alignment, meters.
    pub avg_translation_error: f64,
    /// Mean error in the x-y plane, meters.
    pub avg_xy_error: f64,
    /// Elevation difference at the final associated pose, meters.
    pub final_elevation_error: f64,
    pub associated: usize,
}

/// Associate poses by nearest timestamp (within `time_tol` seconds), rigidly
/// align the estimated positions to ground truth by closed-form least
/// squares, and report translation errors.
pub fn trajectory_error(
    estimated: &[(f64, PoseSE3)],
    ground_truth: &[(f64, PoseSE3)],
    time_tol: f64,
) -> Result<TrajReport> {
    let mut pairs: Vec<(Vector3<f64>, Vector3<f64>)> = Vec::new();
    for (ts, est) in estimated {
        let nearest = ground_truth
            .iter()
            .min_by(|a, b| (a.0 - ts).abs().total_cmp(&(b.0 - ts).abs()));
        if let Some((gts, gt)) = nearest {
            if (gts - ts).abs() <= time_tol {
                pairs.push((est.translation, gt.translation));
            }
        }
    }
    if pairs.len() < 3 {
        return Err(Error::TooFewPoses(pairs.len()));
    }

    let n = pairs.len() as f64;
    let ce = pairs.iter().map(|(e, _)| e).sum::<Vector3<f64>>() / n;
    let cg = pairs.iter().map(|(_, g)| g).sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (e, g) in &pairs {
        h += (e - ce) * (g - cg).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rot = v_t.transpose() * d * u.transpose();
    let t = cg - rot * ce;

    let mut sum3 = 0.0;
    let mut sum_xy = 0.0;
    let mut final_dz = 0.0;
    for (e, g) in &pairs {
        let aligned = rot * e + t;
        let err = aligned - g;
        sum3 += err.norm();
        sum_xy += (err.x * err.x + err.y * err.y).sqrt();
        final_dz = err.z.abs();
    }
    Ok(TrajReport {
        avg_translation_error: sum3 / n,
        avg_xy_error: sum_xy / n,
        final_elevation_error: final_dz,
        associated: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn plane_with_jitter(jitter: f64, n: usize, seed: u64) -> PointCloud {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(0.0..4.0),
                    rng.random_range(0.0..4.0),
                    jitter * rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn larger_jitter_scores_strictly_larger_entropy() {
        let sharp = mean_map_entropy(&plane_with_jitter(0.005, 2000, 1), 0.5).unwrap();
        let blurry = mean_map_entropy(&plane_with_jitter(0.05, 2000, 1), 0.5).unwrap();
        assert!(blurry > sharp, "blurry {blurry} <= sharp {sharp}");
    }

    #[test]
    fn isotropic_unit_gaussian_entropy_matches_closed_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let cloud: PointCloud = (0..20_000)
            .map(|_| {
                Point3::new(
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                )
            })
            .collect();
        // Radius large enough to cover essentially the whole blob.
        let mme = mean_map_entropy(&cloud, 10.0).unwrap();
        let expect = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).powi(3).ln();
        assert!((mme - expect).abs() < 0.1, "mme {mme} vs {expect}");
    }

    #[test]
    fn duplicated_cloud_has_identical_entropy() {
        let cloud = plane_with_jitter(0.02, 800, 3);
        let mut doubled = cloud.clone();
        doubled.extend_from_slice(&cloud);
        let a = mean_map_entropy(&cloud, 0.5).unwrap();
        let b = mean_map_entropy(&doubled, 0.5).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn entropy_invariant_under_rigid_transform() {
        let cloud = plane_with_jitter(0.02, 1500, 4);
        let pose = PoseSE3::new(
            UnitQuaternion::from_euler_angles(0.4, -0.2, 1.1),
            Vector3::new(10.0, -3.0, 7.0),
        );
        let moved: PointCloud = cloud.iter().map(|p| pose.transform(p)).collect();
        let a = mean_map_entropy(&cloud, 0.5).unwrap();
        let b = mean_map_entropy(&moved, 0.5).unwrap();
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn entropy_undefined_for_isolated_points() {
        let cloud = vec![Point3::origin(), Point3::new(10.0, 0.0, 0.0)];
        assert!(matches!(
            mean_map_entropy(&cloud, 0.5),
            Err(Error::EntropyUndefined)
        ));
    }

    fn square_path(n: usize) -> Vec<(f64, PoseSE3)> {
        (0..n)
            .map(|k| {
                let s = k as f64 / n as f64 * 4.0;
                let (x, y) = match s as usize {
                    0 => (s, 0.0),
                    1 => (1.0, s - 1.0),
                    2 => (3.0 - s, 1.0),
                    _ => (0.0, 4.0 - s),
                };
                (k as f64 * 0.1, PoseSE3::from_translation(Vector3::new(x, y, 1.5)))
            })
            .collect()
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let traj = square_path(40);
        let rep = trajectory_error(&traj, &traj, 0.05).unwrap();
        assert!(rep.avg_translation_error < 1e-12);
        assert!(rep.avg_xy_error < 1e-12);
        assert!(rep.final_elevation_error < 1e-12);
        assert_eq!(rep.associated, 40);
    }

    #[test]
    fn rigid_displacement_is_removed_by_alignment() {
        let truth = square_path(40);
        let offset = PoseSE3::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.7),
            Vector3::new(5.0, -2.0, 3.0),
        );
        let est: Vec<(f64, PoseSE3)> = truth
            .iter()
            .map(|(t, p)| (*t, offset.compose(p)))
            .collect();
        let rep = trajectory_error(&est, &truth, 0.05).unwrap();
        assert!(rep.avg_translation_error < 1e-9, "{rep:?}");
    }

    #[test]
    fn final_z_perturbation_shows_up_as_elevation_error() {
        let truth = square_path(40);
        let mut est = truth.clone();
        let last = est.last_mut().unwrap();
        last.1.translation.z += 0.1;
        let rep = trajectory_error(&est, &truth, 0.05).unwrap();
        assert!(
            (rep.final_elevation_error - 0.1).abs() < 0.01,
            "leakage too large: {rep:?}"
        );
    }

    #[test]
    fn too_few_poses_is_an_error() {
        let traj = square_path(2);
        assert!(matches!(
            trajectory_error(&traj, &traj, 0.05),
            Err(Error::TooFewPoses(2))
        ));
    }

    #[test]
    fn rmse_of_identical_clouds_is_zero() {
        let cloud = plane_with_jitter(0.01, 100, 5);
        assert!(closest_point_rmse(&cloud, &cloud) < 1e-12);
    }
}
