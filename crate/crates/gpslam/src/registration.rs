//! Scan-to-map registration: correspondence matching over the shared sample
//! lattice and variance-weighted alignment, iterated with re-reconstruction
//! until the pose update is small.

use std::time::{Duration, Instant};

use nalgebra::{Matrix6, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Direction, Point3, PointCloud, PoseSE3};
use crate::mapstore::GPMap;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Samples with variance above this take no part in matching, m^2.
    /// The kernel's prior variance is 1 m^2, so this is also the fraction of
    /// prior uncertainty a sample must have resolved to qualify.
    pub sigma2_thr: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    /// Outer-loop convergence threshold on the pose update, meters.
    pub pose_epsilon_trans: f64,
    /// Outer-loop convergence threshold on the pose update, radians.
    pub pose_epsilon_rot: f64,
    /// Huber threshold on residuals, meters; <= 0 disables robust weighting.
    pub huber_delta: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            sigma2_thr: 0.5,
            max_outer_iters: 5,
            max_inner_iters: 20,
            pose_epsilon_trans: 1e-3,
            pose_epsilon_rot: 1e-3,
            // Robust weighting is on by default: mismatched pairs at surface
            // intersections otherwise destabilize the 6-DoF solve.
            huber_delta: 0.3,
        }
    }
}

/// A matched sample pair: same direction, identical planar test location.
#[derive(Clone, Copy, Debug)]
pub struct Correspondence {
    pub direction: Direction,
    pub p_mean: f64,
    pub q_mean: f64,
    pub p_var: f64,
    pub q_var: f64,
    pub p_point: Point3,
    pub q_point: Point3,
}

impl Correspondence {
    pub fn weight(&self) -> f64 {
        1.0 / (self.p_var + self.q_var)
    }
}

/// Pair every qualified current sample with at most one reference sample.
///
/// Candidates live in the same cell or the two cells adjacent along the
/// layer's direction axis (the only neighbors whose planar lattices
/// coincide), share direction and lattice location, and have both variances
/// below the threshold. Among candidates the one closest in 3D is kept.
pub fn match_samples(
    current: &GPMap,
    reference: &GPMap,
    cfg: &MatchConfig,
) -> Result<Vec<Correspondence>> {
    let mut out = Vec::new();
    let mut indices: Vec<_> = current.cells.keys().copied().collect();
    indices.sort();
    for idx in indices {
        let cell = &current.cells[&idx];
        let mut layers: Vec<_> = cell.layers.iter().collect();
        layers.sort_by_key(|l| l.direction);
        for layer in layers {
            for s in &layer.samples {
                if s.variance > cfg.sigma2_thr {
                    continue;
                }
                let p_point = s.position();
                let mut best: Option<(f64, Correspondence)> = None;
                for step in [0i64, -1, 1] {
                    let nidx = idx.neighbor(layer.direction, step);
                    let Some(ref_layer) = reference.query_samples(nidx, layer.direction) else {
                        continue;
                    };
                    let Some(q) = ref_layer.sample(s.lattice_id) else {
                        continue;
                    };
                    if q.variance > cfg.sigma2_thr {
                        continue;
                    }
                    let q_point = q.position();
                    let dist = (p_point - q_point).norm();
                    if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                        best = Some((
                            dist,
                            Correspondence {
                                direction: layer.direction,
                                p_mean: s.mean,
                                q_mean: q.mean,
                                p_var: s.variance,
                                q_var: q.variance,
                                p_point,
                                q_point,
                            },
                        ));
                    }
                }
                if let Some((_, c)) = best {
                    out.push(c);
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    Ok(out)
}

/// Signed distance along the correspondence direction after transforming the
/// current sample's position.
pub fn residual(pose: &PoseSE3, c: &Correspondence) -> f64 {
    c.direction.coord(&pose.transform(&c.p_point)) - c.q_mean
}

/// Jacobian of the residual with respect to a left-multiplied increment
/// `(omega, t)`: the transformed point moves by `omega x x + t`, so the
/// row is `[-(e_d x x), e_d]`.
pub fn jacobian(pose: &PoseSE3, c: &Correspondence) -> Vector6<f64> {
    let x = pose.transform(&c.p_point).coords;
    let e = c.direction.unit();
    let jr = -e.cross(&x);
    Vector6::new(jr.x, jr.y, jr.z, e.x, e.y, e.z)
}

fn huber_factor(r: f64, delta: f64) -> f64 {
    if delta > 0.0 && r.abs() > delta {
        delta / r.abs()
    } else {
        1.0
    }
}

fn weighted_cost(pose: &PoseSE3, corr: &[Correspondence], delta: f64) -> f64 {
    corr.iter()
        .map(|c| {
            let r = residual(pose, c);
            let rho = if delta > 0.0 && r.abs() > delta {
                delta * (2.0 * r.abs() - delta)
            } else {
                r * r
            };
            c.weight() * rho
        })
        .sum()
}

const AXIS_NAMES: [&str; 6] = ["rot_x", "rot_y", "rot_z", "trans_x", "trans_y", "trans_z"];

fn null_space_directions(h: &Matrix6<f64>) -> Option<Vec<String>> {
    let eig = h.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let tol = (1e-9 * max_eig).max(1e-12);
    let mut names = Vec::new();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda >= tol {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        for i in 0..6 {
            if v[i].abs() > 0.4 && !names.contains(&AXIS_NAMES[i].to_string()) {
                names.push(AXIS_NAMES[i].to_string());
            }
        }
        if names.is_empty() {
            // Mixed null direction with no dominant axis; report them all.
            for i in 0..6 {
                if v[i].abs() > 0.1 {
                    names.push(AXIS_NAMES[i].to_string());
                }
            }
        }
    }
    if names.is_empty() {
        None
    } else {
        names.sort();
        Some(names)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AlignResult {
    pub pose: PoseSE3,
    pub converged: bool,
    pub iterations: usize,
    pub cost: f64,
}

/// Minimize the variance-weighted sum of squared per-direction residuals
/// over SE(3) with damped Gauss-Newton steps on a local `(omega, t)`
/// parameterization. The objective never increases across accepted steps.
pub fn align(
    correspondences: &[Correspondence],
    initial: PoseSE3,
    cfg: &MatchConfig,
) -> Result<AlignResult> {
    if correspondences.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    let mut pose = initial;
    let mut cost = weighted_cost(&pose, correspondences, cfg.huber_delta);
    let mut lambda = 1e-6;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..cfg.max_inner_iters {
        iterations = it + 1;
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for c in correspondences {
            let r = residual(&pose, c);
            let w = c.weight() * huber_factor(r, cfg.huber_delta);
            let j = jacobian(&pose, c);
            h.syger(w, &j, &j, 1.0);
            g += j * (w * r);
        }
        h.fill_upper_triangle_with_lower_triangle();

        if it == 0 {
            if let Some(directions) = null_space_directions(&h) {
                return Err(Error::DegenerateGeometry { directions });
            }
        }

        let mut accepted = false;
        for _ in 0..10 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-g));
            let delta = PoseSE3::new(
                UnitQuaternion::from_scaled_axis(Vector3::new(step[0], step[1], step[2])),
                Vector3::new(step[3], step[4], step[5]),
            );
            let candidate = delta.compose(&pose);
            let c_new = weighted_cost(&candidate, correspondences, cfg.huber_delta);
            if c_new <= cost {
                pose = candidate;
                cost = c_new;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                let dt = Vector3::new(step[3], step[4], step[5]).norm();
                let dr = Vector3::new(step[0], step[1], step[2]).norm();
                if dt < cfg.pose_epsilon_trans && dr < cfg.pose_epsilon_rot {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction left at this damping; treat as converged.
            converged = true;
        }
        if converged {
            break;
        }
    }

    Ok(AlignResult {
        pose,
        converged,
        iterations,
        cost,
    })
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RegisterTiming {
    pub preprocess: Duration,
    pub matching: Duration,
    pub align: Duration,
}

#[derive(Clone, Debug)]
pub struct Registration {
    pub pose: PoseSE3,
    /// Reconstruction of the scan at the pose of the last outer iteration,
    /// reusable for map fusion.
    pub frame: GPMap,
    pub outer_iterations: usize,
    pub converged: bool,
    pub timing: RegisterTiming,
    pub correspondences: usize,
}

/// Outer loop of scan-to-map registration: transform the scan with the
/// current pose, reconstruct, match against the map, align, update the pose;
/// repeat until the update is below the epsilon or the iteration cap.
pub fn register_scan(
    scan: &PointCloud,
    map: &GPMap,
    initial_guess: PoseSE3,
    cfg: &MatchConfig,
) -> Result<Registration> {
    if scan.is_empty() || map.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    let mut pose = initial_guess;
    let mut timing = RegisterTiming::default();
    let mut frame = None;
    let mut converged = false;
    let mut outer_iterations = 0;
    let mut correspondences = 0;

    for outer in 0..cfg.max_outer_iters {
        outer_iterations = outer + 1;

        let t0 = Instant::now();
        let world: PointCloud = scan.iter().map(|p| pose.transform(p)).collect();
        let f = GPMap::from_cloud(&world, map.grid, map.kernel);
        timing.preprocess += t0.elapsed();

        let t1 = Instant::now();
        let corr = match_samples(&f, map, cfg)?;
        correspondences = corr.len();
        timing.matching += t1.elapsed();

        let t2 = Instant::now();
        let delta = align(&corr, PoseSE3::identity(), cfg)?;
        timing.align += t2.elapsed();

        pose = delta.pose.compose(&pose);
        frame = Some(f);

        if delta.pose.translation_norm() < cfg.pose_epsilon_trans
            && delta.pose.rotation_angle() < cfg.pose_epsilon_rot
        {
            converged = true;
            break;
        }
    }

    Ok(Registration {
        pose,
        frame: frame.expect("max_outer_iters >= 1"),
        outer_iterations,
        converged,
        timing,
        correspondences,
    })
}
