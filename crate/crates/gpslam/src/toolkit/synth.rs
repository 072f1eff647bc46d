//! Synthetic lidar scenes: geometric primitives, a sensor path, and a
//! deterministic ray caster with Gaussian range noise. Stands in for real
//! sensor datasets so end-to-end runs have exact ground truth.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, PoseSE3};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Primitive {
    /// Finite rectangle: `extent` spans the two in-plane axes derived from
    /// the normal.
    Plane {
        center: [f64; 3],
        normal: [f64; 3],
        extent: [f64; 2],
    },
    /// Axis-aligned box rotated by `yaw_deg` about z. Rays hit it from
    /// outside and from inside (room interiors).
    Box {
        center: [f64; 3],
        size: [f64; 3],
        #[serde(default)]
        yaw_deg: f64,
    },
    /// Upright cylinder (axis along z), lateral surface and caps.
    Cylinder {
        center: [f64; 3],
        radius: f64,
        height: f64,
    },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PathPose {
    pub t: f64,
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
}

impl PathPose {
    pub fn pose(&self) -> PoseSE3 {
        PoseSE3::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw_deg.to_radians()),
            Vector3::new(self.position[0], self.position[1], self.position[2]),
        )
    }
}

fn default_channels() -> usize {
    16
}
fn default_azimuth_steps() -> usize {
    1800 // 0.2 degree step
}
fn default_elevation_min() -> f64 {
    -15.0
}
fn default_elevation_max() -> f64 {
    15.0
}
fn default_max_range() -> f64 {
    100.0
}

/// Scene description: primitives, sensor path and sweep pattern. Sparse
/// multi-channel sweep by default: 16 elevation channels over +/-15 degrees,
/// 0.2 degree azimuth step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_azimuth_steps")]
    pub azimuth_steps: usize,
    #[serde(default = "default_elevation_min")]
    pub elevation_min_deg: f64,
    #[serde(default = "default_elevation_max")]
    pub elevation_max_deg: f64,
    #[serde(default = "default_max_range")]
    pub max_range: f64,
    #[serde(rename = "primitive", default)]
    pub primitives: Vec<Primitive>,
    #[serde(rename = "pose", default)]
    pub path: Vec<PathPose>,
}

impl SceneSpec {
    pub fn from_toml_str(text: &str) -> Result<SceneSpec> {
        let spec: SceneSpec =
            toml::from_str(text).map_err(|e| Error::Config(format!("scene spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scene spec serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<SceneSpec> {
        SceneSpec::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if self.channels == 0 || self.azimuth_steps == 0 {
            return Err(Error::Config("sweep pattern must have rays".into()));
        }
        for w in self.path.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::Config(
                    "path timestamps must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn rays_per_scan(&self) -> usize {
        self.channels * self.azimuth_steps
    }

    /// Sensor-frame ray directions of one sweep, fixed order: channel-major,
    /// azimuth-minor.
    fn ray_directions(&self) -> Vec<Vector3<f64>> {
        let mut dirs = Vec::with_capacity(self.rays_per_scan());
        for ch in 0..self.channels {
            let frac = if self.channels == 1 {
                0.5
            } else {
                ch as f64 / (self.channels - 1) as f64
            };
            let elev = (self.elevation_min_deg
                + frac * (self.elevation_max_deg - self.elevation_min_deg))
                .to_radians();
            for k in 0..self.azimuth_steps {
                let az = 2.0 * std::f64::consts::PI * k as f64 / self.azimuth_steps as f64;
                dirs.push(Vector3::new(
                    elev.cos() * az.cos(),
                    elev.cos() * az.sin(),
                    elev.sin(),
                ));
            }
        }
        dirs
    }

    /// Cast one sweep from path pose `pose_index`. First-hit ranges get
    /// Gaussian noise of `noise_sigma`; rays that miss everything produce no
    /// point. Deterministic for a fixed seed and pose index.
    pub fn synth_scan(&self, pose_index: usize) -> Result<PointCloud> {
        let path_pose = self
            .path
            .get(pose_index)
            .ok_or_else(|| Error::Config(format!("pose index {pose_index} out of range")))?;
        let pose = path_pose.pose();
        let origin = Point3::from(pose.translation);

        let mut rng =
            ChaCha8Rng::seed_from_u64(self.seed ^ (pose_index as u64).wrapping_mul(0x9E37_79B9));
        let normal = Normal::new(0.0, 1.0).unwrap();

        let mut cloud = Vec::new();
        for dir_sensor in self.ray_directions() {
            let dir_world = pose.rotation * dir_sensor;
            let mut best = f64::INFINITY;
            for prim in &self.primitives {
                if let Some(t) = prim.raycast(&origin, &dir_world) {
                    if t < best {
                        best = t;
                    }
                }
            }
            if !best.is_finite() || best > self.max_range {
                continue;
            }
            let range = if self.noise_sigma > 0.0 {
                best + self.noise_sigma * normal.sample(&mut rng)
            } else {
                best
            };
            cloud.push(Point3::from(dir_sensor * range));
        }
        Ok(cloud)
    }
}

const RAY_EPS: f64 = 1e-9;

impl Primitive {
    /// Smallest positive ray parameter hitting this primitive, if any.
    pub fn raycast(&self, origin: &Point3, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Primitive::Plane {
                center,
                normal,
                extent,
            } => {
                let c = Vector3::from(*center);
                let n = Unit::new_normalize(Vector3::from(*normal));
                let denom = dir.dot(&n);
                if denom.abs() < RAY_EPS {
                    return None;
                }
                let t = (c - origin.coords).dot(&n) / denom;
                if t <= RAY_EPS {
                    return None;
                }
                let hit = origin.coords + dir * t - c;
                let (u, v) = plane_basis(&n);
                if hit.dot(&u).abs() <= extent[0] / 2.0 && hit.dot(&v).abs() <= extent[1] / 2.0 {
                    Some(t)
                } else {
                    None
                }
            }
            Primitive::Box {
                center,
                size,
                yaw_deg,
            } => {
                // Slab test in the box's local frame. From inside the box the
                // entry parameter is negative and the exit face is the hit.
                let rot = UnitQuaternion::from_axis_angle(
                    &Vector3::z_axis(),
                    -yaw_deg.to_radians(),
                );
                let o = rot * (origin.coords - Vector3::from(*center));
                let d = rot * dir;
                let half = Vector3::from(*size) / 2.0;
                let mut t_enter = f64::NEG_INFINITY;
                let mut t_exit = f64::INFINITY;
                for a in 0..3 {
                    if d[a].abs() < RAY_EPS {
                        if o[a].abs() > half[a] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-half[a] - o[a]) / d[a];
                    let t2 = (half[a] - o[a]) / d[a];
                    t_enter = t_enter.max(t1.min(t2));
                    t_exit = t_exit.min(t1.max(t2));
                }
                if t_enter > t_exit || t_exit <= RAY_EPS {
                    return None;
                }
                if t_enter > RAY_EPS {
                    Some(t_enter)
                } else {
                    Some(t_exit)
                }
            }
            Primitive::Cylinder {
                center,
                radius,
                height,
            } => {
                let c = Vector3::from(*center);
                let o = origin.coords - c;
                let half_h = height / 2.0;
                let mut best: Option<f64> = None;
                let mut consider = |t: f64| {
                    if t > RAY_EPS && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                // Lateral surface: quadratic in the xy components.
                let a = dir.x * dir.x + dir.y * dir.y;
                if a > RAY_EPS {
                    let b = 2.0 * (o.x * dir.x + o.y * dir.y);
                    let cq = o.x * o.x + o.y * o.y - radius * radius;
                    let disc = b * b - 4.0 * a * cq;
                    if disc >= 0.0 {
                        let s = disc.sqrt();
                        for t in [(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)] {
                            let z = o.z + t * dir.z;
                            if z.abs() <= half_h {
                                consider(t);
                            }
                        }
                    }
                }
                // Caps.
                if dir.z.abs() > RAY_EPS {
                    for cap_z in [-half_h, half_h] {
                        let t = (cap_z - o.z) / dir.z;
                        let x = o.x + t * dir.x;
                        let y = o.y + t * dir.y;
                        if x * x + y * y <= radius * radius {
                            consider(t);
                        }
                    }
                }
                best
            }
        }
    }
}

fn plane_basis(n: &Unit<Vector3<f64>>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    (u, v)
}

/// Box-room scene used by tests and examples: the sensor flies inside a box
/// interior along the given path.
pub fn box_room_scene(
    size: [f64; 3],
    path: Vec<PathPose>,
    noise_sigma: f64,
    seed: u64,
) -> SceneSpec {
    SceneSpec {
        seed,
        noise_sigma,
        channels: default_channels(),
        azimuth_steps: default_azimuth_steps(),
        elevation_min_deg: default_elevation_min(),
        elevation_max_deg: default_elevation_max(),
        max_range: default_max_range(),
        primitives: vec![Primitive::Box {
            center: [0.0, 0.0, size[2] / 2.0],
            size,
            yaw_deg: 0.0,
        }],
        path,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn downward_scene(noise: f64) -> SceneSpec {
        SceneSpec {
            seed: 7,
            noise_sigma: noise,
            channels: 4,
            azimuth_steps: 90,
            elevation_min_deg: -80.0,
            elevation_max_deg: -40.0,
            max_range: 50.0,
            primitives: vec![Primitive::Plane {
                center: [0.0, 0.0, 0.0],
                normal: [0.0, 0.0, 1.0],
                extent: [100.0, 100.0],
            }],
            path: vec![PathPose {
                t: 0.0,
                position: [0.0, 0.0, 2.0],
                yaw_deg: 0.0,
            }],
        }
    }

    #[test]
    fn downward_rays_hit_the_ground_plane() {
        let noise = 0.02;
        let scene = downward_scene(noise);
        let scan = scene.synth_scan(0).unwrap();
        assert!(!scan.is_empty());
        let pose = scene.path[0].pose();
        for p in &scan {
            let w = pose.transform(p);
            // Range noise along a slanted ray inflates the z error by at
            // most 1/sin(40 deg) < 1.6.
            assert!(w.z.abs() < 3.0 * noise * 1.6, "z = {}", w.z);
        }
    }

    #[test]
    fn zero_noise_hits_lie_exactly_on_primitives() {
        let scene = downward_scene(0.0);
        let pose = scene.path[0].pose();
        for p in &scene.synth_scan(0).unwrap() {
            assert!(pose.transform(p).z.abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_gives_identical_clouds() {
        let scene = downward_scene(0.05);
        assert_eq!(scene.synth_scan(0).unwrap(), scene.synth_scan(0).unwrap());
    }

    #[test]
    fn pose_with_no_geometry_yields_empty_scan() {
        let mut scene = downward_scene(0.0);
        scene.primitives.clear();
        assert!(scene.synth_scan(0).unwrap().is_empty());
    }

    #[test]
    fn box_interior_hits_exit_faces() {
        let scene = box_room_scene(
            [8.0, 6.0, 3.0],
            vec![PathPose {
                t: 0.0,
                position: [0.0, 0.0, 1.5],
                yaw_deg: 0.0,
            }],
            0.0,
            1,
        );
        let scan = scene.synth_scan(0).unwrap();
        assert_eq!(scan.len(), scene.rays_per_scan());
        let pose = scene.path[0].pose();
        for p in &scan {
            let w = pose.transform(p);
            let on_x = (w.x.abs() - 4.0).abs() < 1e-9;
            let on_y = (w.y.abs() - 3.0).abs() < 1e-9;
            let on_z = (w.z).abs() < 1e-9 || (w.z - 3.0).abs() < 1e-9;
            assert!(on_x || on_y || on_z, "{w:?} not on a wall");
        }
    }

    #[test]
    fn cylinder_lateral_hits_at_radius() {
        let cyl = Primitive::Cylinder {
            center: [5.0, 0.0, 1.0],
            radius: 0.5,
            height: 2.0,
        };
        let t = cyl
            .raycast(&Point3::new(0.0, 0.0, 1.0), &Vector3::x())
            .unwrap();
        assert!((t - 4.5).abs() < 1e-12);
        assert!(cyl
            .raycast(&Point3::new(0.0, 2.0, 1.0), &Vector3::x())
            .is_none());
    }

    #[test]
    fn scene_spec_toml_round_trip() {
        let scene = box_room_scene(
            [8.0, 6.0, 3.0],
            vec![
                PathPose {
                    t: 0.0,
                    position: [0.0, 0.0, 1.5],
                    yaw_deg: 0.0,
                },
                PathPose {
                    t: 0.1,
                    position: [0.1, 0.0, 1.5],
                    yaw_deg: 1.0,
                },
            ],
            0.02,
            9,
        );
        let text = scene.to_toml_string();
        let parsed = SceneSpec::from_toml_str(&text).unwrap();
        assert_eq!(parsed.path.len(), 2);
        assert_eq!(parsed.seed, 9);
        assert_eq!(
            parsed.synth_scan(0).unwrap(),
            scene.synth_scan(0).unwrap()
        );
    }

    #[test]
    fn non_increasing_path_timestamps_rejected() {
        let mut scene = downward_scene(0.0);
        scene.path.push(PathPose {
            t: 0.0,
            position: [1.0, 0.0, 2.0],
            yaw_deg: 0.0,
        });
        assert!(scene.validate().is_err());
    }
}
