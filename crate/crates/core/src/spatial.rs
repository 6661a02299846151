//! Spatial (6-D) vector algebra.
//!
//! Conventions used everywhere in this crate:
//! - motion vectors are stored angular-first `[ω, v]`, force vectors torque-first `[n, f]`;
//! - a [`FramePlacement`] maps coordinates of its local frame into its parent (world) frame,
//!   `p_world = R p_local + t`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix6, Unit, UnitQuaternion, Vector3, Vector6};

/// Spatial velocity or acceleration, expressed at the origin of some frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpatialMotion {
    pub angular: Vector3<f64>,
    pub linear: Vector3<f64>,
}

/// Spatial force (wrench), expressed at the origin of some frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpatialForce {
    pub torque: Vector3<f64>,
    pub force: Vector3<f64>,
}

impl SpatialMotion {
    pub fn new(angular: Vector3<f64>, linear: Vector3<f64>) -> Self {
        Self { angular, linear }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self { angular: v.fixed_rows::<3>(0).into_owned(), linear: v.fixed_rows::<3>(3).into_owned() }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut out = Vector6::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.angular);
        out.fixed_rows_mut::<3>(3).copy_from(&self.linear);
        out
    }

    /// Motion cross product `self ×m other`.
    pub fn cross_motion(&self, other: &SpatialMotion) -> SpatialMotion {
        SpatialMotion {
            angular: self.angular.cross(&other.angular),
            linear: self.angular.cross(&other.linear) + self.linear.cross(&other.angular),
        }
    }

    /// Force cross product `self ×* f`.
    pub fn cross_force(&self, f: &SpatialForce) -> SpatialForce {
        SpatialForce { torque: self.angular.cross(&f.torque) + self.linear.cross(&f.force), force: self.angular.cross(&f.force) }
    }

    /// Velocity of the material point at `p`, given this motion at the frame origin.
    pub fn point_velocity(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.linear + self.angular.cross(p)
    }
}

impl SpatialForce {
    pub fn new(torque: Vector3<f64>, force: Vector3<f64>) -> Self {
        Self { torque, force }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self { torque: v.fixed_rows::<3>(0).into_owned(), force: v.fixed_rows::<3>(3).into_owned() }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut out = Vector6::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.torque);
        out.fixed_rows_mut::<3>(3).copy_from(&self.force);
        out
    }

    /// Power delivered by this wrench along `v` (W).
    pub fn dot(&self, v: &SpatialMotion) -> f64 {
        self.torque.dot(&v.angular) + self.force.dot(&v.linear)
    }
}

macro_rules! impl_linear_ops {
    ($t:ident, $a:ident, $b:ident) => {
        impl Add for $t {
            type Output = $t;
            fn add(self, rhs: $t) -> $t {
                $t { $a: self.$a + rhs.$a, $b: self.$b + rhs.$b }
            }
        }
        impl AddAssign for $t {
            fn add_assign(&mut self, rhs: $t) {
                self.$a += rhs.$a;
                self.$b += rhs.$b;
            }
        }
        impl Sub for $t {
            type Output = $t;
            fn sub(self, rhs: $t) -> $t {
                $t { $a: self.$a - rhs.$a, $b: self.$b - rhs.$b }
            }
        }
        impl Neg for $t {
            type Output = $t;
            fn neg(self) -> $t {
                $t { $a: -self.$a, $b: -self.$b }
            }
        }
        impl Mul<f64> for $t {
            type Output = $t;
            fn mul(self, s: f64) -> $t {
                $t { $a: self.$a * s, $b: self.$b * s }
            }
        }
    };
}

impl_linear_ops!(SpatialMotion, angular, linear);
impl_linear_ops!(SpatialForce, torque, force);

/// Rigid placement of a frame relative to its parent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePlacement {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for FramePlacement {
    fn default() -> Self {
        Self::identity()
    }
}

impl FramePlacement {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self { rotation, translation: Vector3::zeros() }
    }

    /// Builds a placement from a quaternion given as `[w, x, y, z]`; the quaternion is normalized.
    pub fn from_quaternion(wxyz: [f64; 4], translation: Vector3<f64>) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]));
        Self { rotation: q.to_rotation_matrix().into_inner(), translation }
    }

    /// Orthonormal with determinant +1 to `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).amax() <= tol
            && (r.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|x| x.is_finite())
    }

    /// `self ∘ other`: maps `other`'s local frame through `other` and then through `self`.
    pub fn compose(&self, other: &FramePlacement) -> FramePlacement {
        FramePlacement { rotation: self.rotation * other.rotation, translation: self.rotation * other.translation + self.translation }
    }

    pub fn inverse(&self) -> FramePlacement {
        let rt = self.rotation.transpose();
        FramePlacement { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn act_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inv_act_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn act_motion(&self, v: &SpatialMotion) -> SpatialMotion {
        let w = self.rotation * v.angular;
        SpatialMotion { angular: w, linear: self.rotation * v.linear + self.translation.cross(&w) }
    }

    pub fn inv_act_motion(&self, v: &SpatialMotion) -> SpatialMotion {
        let rt = self.rotation.transpose();
        SpatialMotion { angular: rt * v.angular, linear: rt * (v.linear - self.translation.cross(&v.angular)) }
    }

    pub fn act_force(&self, f: &SpatialForce) -> SpatialForce {
        let force = self.rotation * f.force;
        SpatialForce { torque: self.rotation * f.torque + self.translation.cross(&force), force }
    }

    pub fn inv_act_force(&self, f: &SpatialForce) -> SpatialForce {
        let rt = self.rotation.transpose();
        SpatialForce { torque: rt * (f.torque - self.translation.cross(&f.force)), force: rt * f.force }
    }

    /// 6×6 matrix of [`FramePlacement::act_motion`].
    pub fn motion_matrix(&self) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&self.translation) * self.rotation));
        m
    }
}

/// Expresses a motion given in the local frame of `x` in its parent frame.
pub fn transform_motion(x: &FramePlacement, v: &SpatialMotion) -> SpatialMotion {
    x.act_motion(v)
}

/// Dual of [`transform_motion`] for wrenches; preserves power.
pub fn transform_force_dual(x: &FramePlacement, f: &SpatialForce) -> SpatialForce {
    x.act_force(f)
}

/// Mass properties of a rigid body, expressed in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidBodyInertia {
    pub mass: f64,
    /// Centre of mass in the body frame (m).
    pub com: Vector3<f64>,
    /// Rotational inertia about the centre of mass (kg·m²).
    pub rotational_inertia: Matrix3<f64>,
}

impl RigidBodyInertia {
    pub fn new(mass: f64, com: Vector3<f64>, rotational_inertia: Matrix3<f64>) -> Self {
        Self { mass, com, rotational_inertia }
    }

    pub fn zero() -> Self {
        Self { mass: 0.0, com: Vector3::zeros(), rotational_inertia: Matrix3::zeros() }
    }

    pub fn point_mass(mass: f64, com: Vector3<f64>) -> Self {
        Self { mass, com, rotational_inertia: Matrix3::zeros() }
    }

    /// Solid sphere of the given radius centred at `com`.
    pub fn sphere(mass: f64, radius: f64, com: Vector3<f64>) -> Self {
        let i = 0.4 * mass * radius * radius;
        Self { mass, com, rotational_inertia: Matrix3::from_diagonal_element(i) }
    }

    /// Solid box with full side lengths `size`, centred at `com`.
    pub fn cuboid(mass: f64, size: Vector3<f64>, com: Vector3<f64>) -> Self {
        let (x2, y2, z2) = (size.x * size.x, size.y * size.y, size.z * size.z);
        let d = Vector3::new(y2 + z2, x2 + z2, x2 + y2) * (mass / 12.0);
        Self { mass, com, rotational_inertia: Matrix3::from_diagonal(&d) }
    }

    /// Mass non-negative and rotational inertia symmetric PSD (to `tol`).
    pub fn is_valid(&self, tol: f64) -> bool {
        if !(self.mass >= 0.0) {
            return false;
        }
        let i = &self.rotational_inertia;
        if (i - i.transpose()).amax() > tol {
            return false;
        }
        i.symmetric_eigenvalues().iter().all(|&e| e >= -tol)
    }

    /// Spatial inertia matrix about the body-frame origin.
    pub fn to_matrix(&self) -> Matrix6<f64> {
        spatial_inertia_matrix(self.mass, &self.com, &self.rotational_inertia)
    }

    /// The same inertia expressed in the parent frame of `x`.
    pub fn transformed(&self, x: &FramePlacement) -> RigidBodyInertia {
        RigidBodyInertia {
            mass: self.mass,
            com: x.act_point(&self.com),
            rotational_inertia: x.rotation * self.rotational_inertia * x.rotation.transpose(),
        }
    }

    /// Spatial momentum-rate `I·a` at the body-frame origin.
    pub fn apply(&self, a: &SpatialMotion) -> SpatialForce {
        let m = self.mass;
        let c = &self.com;
        let force = (a.linear + a.angular.cross(c)) * m;
        let torque = self.rotational_inertia * a.angular + c.cross(&force);
        SpatialForce { torque, force }
    }
}

/// Applies `I` to `a`; linear in `a`.
pub fn inertia_apply(inertia: &RigidBodyInertia, a: &SpatialMotion) -> SpatialForce {
    inertia.apply(a)
}

pub(crate) fn spatial_inertia_matrix(mass: f64, com: &Vector3<f64>, ic: &Matrix3<f64>) -> Matrix6<f64> {
    let c = skew(com);
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(ic + c * c.transpose() * mass));
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(c * mass));
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(c.transpose() * mass));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * mass));
    m
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix about a (not necessarily unit) axis.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let n = axis.norm();
    if n == 0.0 {
        return Matrix3::identity();
    }
    nalgebra::Rotation3::from_axis_angle(&Unit::new_unchecked(axis / n), angle).into_inner()
}

/// SO(3) exponential of a rotation vector.
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    nalgebra::Rotation3::from_scaled_axis(*w).into_inner()
}

/// SO(3) logarithm; returns the rotation vector.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-5 {
        // sin θ / θ ≈ 1 − θ²/6
        return vee * 0.5 * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta < 1e-6 {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
        return rot.scaled_axis();
    }
    vee * (theta / (2.0 * theta.sin()))
}

/// Inverse of the right Jacobian of SO(3): `d log(R exp(δ)) / dδ` at δ = 0.
pub fn right_jacobian_inv_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    if theta < 1e-5 {
        return Matrix3::identity() + k * 0.5 + k * k / 12.0;
    }
    let coef = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + k * 0.5 + k * k * coef
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn placement(rv: [f64; 3], t: [f64; 3]) -> FramePlacement {
        FramePlacement::new(exp_so3(&Vector3::from(rv)), Vector3::from(t))
    }

    #[test]
    fn identity_leaves_motion_unchanged() {
        let v = SpatialMotion::new(Vector3::new(1.0, -2.0, 0.5), Vector3::new(0.3, 0.2, -0.1));
        assert_eq!(transform_motion(&FramePlacement::identity(), &v), v);
    }

    #[test]
    fn pure_translation_shifts_linear_part() {
        let x = FramePlacement::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let v = SpatialMotion::new(Vector3::new(0.0, 0.0, 1.0), Vector3::zeros());
        let out = transform_motion(&x, &v);
        // rotation about z through (1,0,0): the world origin moves with t × ω
        assert_relative_eq!(out.linear, Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(out.angular, v.angular, epsilon = 1e-15);
    }

    #[test]
    fn inverse_round_trip() {
        let x = placement([0.3, -0.2, 0.9], [0.1, 2.0, -0.7]);
        let v = SpatialMotion::new(Vector3::new(0.4, 0.5, -0.6), Vector3::new(1.0, -1.0, 2.0));
        let back = x.inverse().act_motion(&x.act_motion(&v));
        assert_relative_eq!(back.to_vector(), v.to_vector(), epsilon = 1e-12);
        let back = x.inv_act_motion(&x.act_motion(&v));
        assert_relative_eq!(back.to_vector(), v.to_vector(), epsilon = 1e-12);
        let c = x.compose(&x.inverse());
        assert!((c.rotation - Matrix3::identity()).amax() < 1e-10);
        assert!(c.translation.amax() < 1e-10);
    }

    #[test]
    fn point_mass_newton() {
        let i = RigidBodyInertia::point_mass(2.0, Vector3::zeros());
        let f = inertia_apply(&i, &SpatialMotion::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0)));
        assert_relative_eq!(f.force, Vector3::new(0.0, 0.0, 2.0));
        assert_relative_eq!(f.torque, Vector3::zeros());
        let z = inertia_apply(&i, &SpatialMotion::zero());
        assert_eq!(z, SpatialForce::zero());
    }

    #[test]
    fn sphere_angular_acceleration() {
        let i = RigidBodyInertia::sphere(1.0, 1.0, Vector3::zeros());
        let alpha = Vector3::new(0.2, -1.0, 3.0);
        let f = inertia_apply(&i, &SpatialMotion::new(alpha, Vector3::zeros()));
        assert_relative_eq!(f.torque, i.rotational_inertia * alpha, epsilon = 1e-15);
        assert_relative_eq!(f.force, Vector3::zeros());
    }

    #[test]
    fn apply_matches_matrix_form() {
        let i =
            RigidBodyInertia::new(1.7, Vector3::new(0.1, -0.3, 0.2), Matrix3::new(0.3, 0.01, 0.02, 0.01, 0.2, -0.03, 0.02, -0.03, 0.25));
        let a = SpatialMotion::new(Vector3::new(0.5, -0.1, 0.3), Vector3::new(-1.0, 2.0, 0.4));
        let direct = i.apply(&a).to_vector();
        let via_matrix = i.to_matrix() * a.to_vector();
        assert_relative_eq!(direct, via_matrix, epsilon = 1e-13);
    }

    #[test]
    fn log_exp_round_trip() {
        for w in [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1e-8, -2e-8, 0.0), Vector3::new(0.4, -1.2, 0.8), Vector3::new(0.0, 3.0, 0.0)] {
            assert_relative_eq!(log_so3(&exp_so3(&w)), w, epsilon = 1e-10);
        }
    }

    #[test]
    fn right_jacobian_inverse_matches_finite_differences() {
        let w = Vector3::new(0.3, -0.7, 0.5);
        let r = exp_so3(&w);
        let jinv = right_jacobian_inv_so3(&w);
        let h = 1e-6;
        for k in 0..3 {
            let mut d = Vector3::zeros();
            d[k] = h;
            let plus = log_so3(&(r * exp_so3(&d)));
            let minus = log_so3(&(r * exp_so3(&-d)));
            let col = (plus - minus) / (2.0 * h);
            assert_relative_eq!(col, jinv.column(k).into_owned(), epsilon = 1e-8);
        }
    }

    fn arb_vec3(scale: f64) -> impl Strategy<Value = Vector3<f64>> {
        prop::array::uniform3(-scale..scale).prop_map(Vector3::from)
    }

    fn arb_placement() -> impl Strategy<Value = FramePlacement> {
        (arb_vec3(3.0), arb_vec3(2.0)).prop_map(|(w, t)| FramePlacement::new(exp_so3(&w), t))
    }

    fn arb_motion() -> impl Strategy<Value = SpatialMotion> {
        (arb_vec3(5.0), arb_vec3(5.0)).prop_map(|(a, l)| SpatialMotion::new(a, l))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn composition_acts_sequentially(x in arb_placement(), y in arb_placement(), v in arb_motion()) {
            let lhs = transform_motion(&x.compose(&y), &v).to_vector();
            let rhs = transform_motion(&x, &transform_motion(&y, &v)).to_vector();
            prop_assert!((lhs - rhs).amax() <= 1e-10);
        }

        #[test]
        fn power_is_frame_invariant(x in arb_placement(), v in arb_motion(), t in arb_vec3(5.0), f in arb_vec3(5.0)) {
            let w = SpatialForce::new(t, f);
            let p0 = w.dot(&v);
            let p1 = transform_force_dual(&x, &w).dot(&transform_motion(&x, &v));
            prop_assert!((p0 - p1).abs() <= 1e-10 * (1.0 + p0.abs()));
        }

        #[test]
        fn placements_stay_valid(x in arb_placement(), y in arb_placement()) {
            prop_assert!(x.compose(&y).is_valid(1e-10));
            prop_assert!(x.inverse().is_valid(1e-10));
        }

        #[test]
        fn motion_transform_is_linear(x in arb_placement(), a in arb_motion(), b in arb_motion(), s in -3.0..3.0f64) {
            let lhs = transform_motion(&x, &(a + b * s)).to_vector();
            let rhs = (transform_motion(&x, &a) + transform_motion(&x, &b) * s).to_vector();
            prop_assert!((lhs - rhs).amax() <= 1e-10);
        }

        #[test]
        fn inertia_apply_is_linear(a in arb_motion(), b in arb_motion(), al in -2.0..2.0f64, be in -2.0..2.0f64, c in arb_vec3(0.5)) {
            let i = RigidBodyInertia::new(1.3, c, Matrix3::new(0.2, 0.01, 0.0, 0.01, 0.3, 0.02, 0.0, 0.02, 0.1));
            let lhs = inertia_apply(&i, &(a * al + b * be)).to_vector();
            let rhs = (inertia_apply(&i, &a) * al + inertia_apply(&i, &b) * be).to_vector();
            prop_assert!((lhs - rhs).amax() <= 1e-12 * (1.0 + lhs.amax()));
        }
    }
}
