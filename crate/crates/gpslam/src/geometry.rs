//! Core geometric types: points, rigid transforms, coordinate directions.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

pub type Point3 = nalgebra::Point3<f64>;
pub type PointCloud = Vec<Point3>;

/// One of the three coordinate axes. A layer's direction is the axis whose
/// coordinate the GP predicts; the other two axes span the training plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    X,
    Y,
    Z,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::X, Direction::Y, Direction::Z];

    pub fn axis(self) -> usize {
        match self {
            Direction::X => 0,
            Direction::Y => 1,
            Direction::Z => 2,
        }
    }

    pub fn unit(self) -> Vector3<f64> {
        let mut v = Vector3::zeros();
        v[self.axis()] = 1.0;
        v
    }

    /// The two axes orthogonal to this direction, in ascending index order.
    /// This ordering fixes the (u, v) convention for planar locations.
    pub fn planar_axes(self) -> (usize, usize) {
        match self {
            Direction::X => (1, 2),
            Direction::Y => (0, 2),
            Direction::Z => (0, 1),
        }
    }

    /// Component of `p` along this axis.
    pub fn coord(self, p: &Point3) -> f64 {
        p[self.axis()]
    }

    pub fn letter(self) -> char {
        match self {
            Direction::X => 'X',
            Direction::Y => 'Y',
            Direction::Z => 'Z',
        }
    }
}

/// Rigid transform mapping sensor-frame points into the world frame.
///
/// Rotation is stored as a unit quaternion and renormalized after every
/// composition so orthonormality does not drift.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSE3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl PoseSE3 {
    pub fn identity() -> Self {
        PoseSE3 {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(mut rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        rotation.renormalize_fast();
        PoseSE3 {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        PoseSE3::new(UnitQuaternion::identity(), t)
    }

    pub fn from_yaw(yaw: f64) -> Self {
        PoseSE3::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            Vector3::zeros(),
        )
    }

    pub fn transform(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> PoseSE3 {
        let inv_rot = self.rotation.inverse();
        PoseSE3::new(inv_rot, -(inv_rot * self.translation))
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Rotation angle in radians, in [0, pi].
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    pub fn translation_norm(&self) -> f64 {
        self.translation.norm()
    }

    pub fn yaw(&self) -> f64 {
        self.rotation.euler_angles().2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn random_pose(seed: u64) -> PoseSE3 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let rot = if axis.norm() < 1e-9 {
            UnitQuaternion::identity()
        } else {
            UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
        };
        let t = Vector3::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        );
        PoseSE3::new(rot, t)
    }

    #[test]
    fn coord_is_basis_projection() {
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(Direction::X.coord(&p), 1.0);
        assert_eq!(Direction::Z.coord(&p), 3.0);
        let id = PoseSE3::identity();
        for d in Direction::ALL {
            assert_eq!(d.coord(&id.transform(&p)), d.coord(&p));
        }
    }

    #[test]
    fn transform_identity_and_translation() {
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(PoseSE3::identity().transform(&p), p);
        let t = PoseSE3::from_translation(Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(t.transform(&Point3::origin()), Point3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn transform_quarter_turn_about_z() {
        let pose = PoseSE3::from_yaw(FRAC_PI_2);
        let q = pose.transform(&Point3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(q, Point3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn compose_identity_and_inverse() {
        let b = random_pose(7);
        let id = PoseSE3::identity();
        let c = id.compose(&b);
        assert_relative_eq!(c.translation, b.translation, epsilon = 1e-12);
        assert!(c.rotation.angle_to(&b.rotation) < 1e-12);
        let inv_id = id.inverse();
        assert!(inv_id.rotation_angle() < 1e-15);
        assert!(inv_id.translation_norm() < 1e-15);
    }

    #[test]
    fn compose_with_inverse_is_identity_over_random_poses() {
        for seed in 0..1000u64 {
            let t = random_pose(seed);
            let e = t.compose(&t.inverse());
            assert!(e.translation_norm() < 1e-9, "seed {seed}");
            assert!(e.rotation_angle() < 1e-9, "seed {seed}");
        }
    }

    #[test]
    fn transform_preserves_pairwise_distances() {
        let t = random_pose(42);
        let a = Point3::new(0.3, -1.2, 2.0);
        let b = Point3::new(-4.0, 0.5, 1.1);
        let d0 = (a - b).norm();
        let d1 = (t.transform(&a) - t.transform(&b)).norm();
        assert_relative_eq!(d0, d1, epsilon = 1e-9);
    }

    #[test]
    fn orthonormality_survives_many_compositions() {
        let step = random_pose(3);
        let mut acc = PoseSE3::identity();
        for _ in 0..10_000 {
            acc = acc.compose(&step);
        }
        let r = acc.rotation_matrix();
        let err = (r.transpose() * r - Matrix3::identity()).norm();
        assert!(err < 1e-9, "orthonormality drift {err}");
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn transform_distributes_over_compose(sa in 0u64..500, sb in 500u64..1000) {
            let a = random_pose(sa);
            let b = random_pose(sb);
            let p = Point3::new(1.0, -2.0, 0.5);
            let lhs = a.compose(&b).transform(&p);
            let rhs = a.transform(&b.transform(&p));
            prop_assert!((lhs - rhs).norm() < 1e-9);
        }
    }
}
