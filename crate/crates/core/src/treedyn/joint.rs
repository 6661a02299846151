use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::spatial::{axis_angle, exp_so3, log_so3, FramePlacement, SpatialMotion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Fixed,
    Revolute,
    Prismatic,
    Spherical,
    Universal,
    FloatingBase,
}

impl JointKind {
    pub fn nq(self) -> usize {
        match self {
            JointKind::Fixed => 0,
            JointKind::Revolute | JointKind::Prismatic => 1,
            JointKind::Universal => 2,
            JointKind::Spherical => 4,
            JointKind::FloatingBase => 7,
        }
    }

    pub fn nv(self) -> usize {
        match self {
            JointKind::Fixed => 0,
            JointKind::Revolute | JointKind::Prismatic => 1,
            JointKind::Universal => 2,
            JointKind::Spherical => 3,
            JointKind::FloatingBase => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn unbounded() -> Self {
        Self { lower: f64::NEG_INFINITY, upper: f64::INFINITY }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    /// Distance outside the interval, 0 when inside.
    pub fn violation(&self, x: f64) -> f64 {
        if x < self.lower {
            self.lower - x
        } else if x > self.upper {
            x - self.upper
        } else {
            0.0
        }
    }
}

/// Joint connecting a body to its parent in a kinematic tree.
///
/// Configuration layouts: floating base `[x, y, z, qw, qx, qy, qz]` with velocity
/// `[ω, v]` in the child frame; spherical `[qw, qx, qy, qz]` with child-frame `ω`;
/// universal rotates about `axis` and then about `axis2`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    pub axis2: Vector3<f64>,
    pub parent_frame: FramePlacement,
    /// One interval per position coordinate of revolute/prismatic/universal joints.
    pub position_limits: Vec<Interval>,
    pub velocity_limit: f64,
    pub effort_limit: f64,
}

impl JointModel {
    pub fn new(kind: JointKind, axis: Vector3<f64>, parent_frame: FramePlacement) -> Self {
        let n = match kind {
            JointKind::Revolute | JointKind::Prismatic | JointKind::Universal => kind.nq(),
            _ => 0,
        };
        Self {
            kind,
            axis: normalize_or(axis, Vector3::z()),
            axis2: Vector3::y(),
            parent_frame,
            position_limits: vec![Interval::unbounded(); n],
            velocity_limit: f64::INFINITY,
            effort_limit: f64::INFINITY,
        }
    }

    pub fn fixed(parent_frame: FramePlacement) -> Self {
        Self::new(JointKind::Fixed, Vector3::z(), parent_frame)
    }

    pub fn revolute(axis: Vector3<f64>, parent_frame: FramePlacement) -> Self {
        Self::new(JointKind::Revolute, axis, parent_frame)
    }

    pub fn prismatic(axis: Vector3<f64>, parent_frame: FramePlacement) -> Self {
        Self::new(JointKind::Prismatic, axis, parent_frame)
    }

    pub fn spherical(parent_frame: FramePlacement) -> Self {
        Self::new(JointKind::Spherical, Vector3::z(), parent_frame)
    }

    pub fn universal(axis: Vector3<f64>, axis2: Vector3<f64>, parent_frame: FramePlacement) -> Self {
        let mut j = Self::new(JointKind::Universal, axis, parent_frame);
        j.axis2 = normalize_or(axis2, Vector3::y());
        j
    }

    pub fn floating(parent_frame: FramePlacement) -> Self {
        Self::new(JointKind::FloatingBase, Vector3::z(), parent_frame)
    }

    pub fn with_limits(mut self, limits: Vec<Interval>, velocity: f64, effort: f64) -> Self {
        self.position_limits = limits;
        self.velocity_limit = velocity;
        self.effort_limit = effort;
        self
    }

    pub fn nq(&self) -> usize {
        self.kind.nq()
    }

    pub fn nv(&self) -> usize {
        self.kind.nv()
    }

    /// Placement of the child frame relative to the joint frame.
    pub fn transform(&self, q: &[f64]) -> FramePlacement {
        match self.kind {
            JointKind::Fixed => FramePlacement::identity(),
            JointKind::Revolute => FramePlacement::from_rotation(axis_angle(&self.axis, q[0])),
            JointKind::Prismatic => FramePlacement::from_translation(self.axis * q[0]),
            JointKind::Universal => FramePlacement::from_rotation(axis_angle(&self.axis, q[0]) * axis_angle(&self.axis2, q[1])),
            JointKind::Spherical => FramePlacement::from_rotation(quat_to_matrix(&[q[0], q[1], q[2], q[3]])),
            JointKind::FloatingBase => FramePlacement::new(quat_to_matrix(&[q[3], q[4], q[5], q[6]]), Vector3::new(q[0], q[1], q[2])),
        }
    }

    /// Motion subspace columns expressed in the child frame.
    pub fn local_subspace(&self, q: &[f64], out: &mut [SpatialMotion]) {
        let z = Vector3::zeros();
        match self.kind {
            JointKind::Fixed => {}
            JointKind::Revolute => out[0] = SpatialMotion::new(self.axis, z),
            JointKind::Prismatic => out[0] = SpatialMotion::new(z, self.axis),
            JointKind::Universal => {
                let r2 = axis_angle(&self.axis2, q[1]);
                out[0] = SpatialMotion::new(r2.transpose() * self.axis, z);
                out[1] = SpatialMotion::new(self.axis2, z);
            }
            JointKind::Spherical => {
                for (k, col) in out.iter_mut().take(3).enumerate() {
                    *col = SpatialMotion::new(Vector3::ith(k, 1.0), z);
                }
            }
            JointKind::FloatingBase => {
                for (k, col) in out.iter_mut().take(3).enumerate() {
                    *col = SpatialMotion::new(Vector3::ith(k, 1.0), z);
                }
                for (k, col) in out.iter_mut().skip(3).take(3).enumerate() {
                    *col = SpatialMotion::new(z, Vector3::ith(k, 1.0));
                }
            }
        }
    }

    pub fn neutral(&self, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = 0.0;
        }
        match self.kind {
            JointKind::Spherical => out[0] = 1.0,
            JointKind::FloatingBase => out[3] = 1.0,
            _ => {}
        }
    }

    /// `q ⊕ dv`: retraction along a velocity-space increment.
    pub fn integrate(&self, q: &[f64], dv: &[f64], out: &mut [f64]) {
        match self.kind {
            JointKind::Fixed => {}
            JointKind::Revolute | JointKind::Prismatic | JointKind::Universal => {
                for k in 0..self.nq() {
                    out[k] = q[k] + dv[k];
                }
            }
            JointKind::Spherical => {
                let r = quat_to_unit(&[q[0], q[1], q[2], q[3]]);
                let d = UnitQuaternion::from_scaled_axis(Vector3::new(dv[0], dv[1], dv[2]));
                write_quat(&(r * d), &mut out[0..4]);
            }
            JointKind::FloatingBase => {
                let r = quat_to_unit(&[q[3], q[4], q[5], q[6]]);
                let p = Vector3::new(q[0], q[1], q[2]) + r * Vector3::new(dv[3], dv[4], dv[5]);
                let d = UnitQuaternion::from_scaled_axis(Vector3::new(dv[0], dv[1], dv[2]));
                out[0] = p.x;
                out[1] = p.y;
                out[2] = p.z;
                write_quat(&(r * d), &mut out[3..7]);
            }
        }
    }

    /// `q1 ⊖ q0`: the increment `dv` with `q0 ⊕ dv = q1`.
    pub fn difference(&self, q0: &[f64], q1: &[f64], out: &mut [f64]) {
        match self.kind {
            JointKind::Fixed => {}
            JointKind::Revolute | JointKind::Prismatic | JointKind::Universal => {
                for k in 0..self.nq() {
                    out[k] = q1[k] - q0[k];
                }
            }
            JointKind::Spherical => {
                let r0 = quat_to_matrix(&[q0[0], q0[1], q0[2], q0[3]]);
                let r1 = quat_to_matrix(&[q1[0], q1[1], q1[2], q1[3]]);
                let w = log_so3(&(r0.transpose() * r1));
                out[..3].copy_from_slice(w.as_slice());
            }
            JointKind::FloatingBase => {
                let r0 = quat_to_matrix(&[q0[3], q0[4], q0[5], q0[6]]);
                let r1 = quat_to_matrix(&[q1[3], q1[4], q1[5], q1[6]]);
                let w = log_so3(&(r0.transpose() * r1));
                let dp = Vector3::new(q1[0] - q0[0], q1[1] - q0[1], q1[2] - q0[2]);
                let v = r0.transpose() * dp;
                out[..3].copy_from_slice(w.as_slice());
                out[3..6].copy_from_slice(v.as_slice());
            }
        }
    }

    /// Slice offset of the unit quaternion inside this joint's configuration, if any.
    pub fn quaternion_offset(&self) -> Option<usize> {
        match self.kind {
            JointKind::Spherical => Some(0),
            JointKind::FloatingBase => Some(3),
            _ => None,
        }
    }
}

fn normalize_or(v: Vector3<f64>, fallback: Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        fallback
    }
}

pub(crate) fn quat_to_unit(wxyz: &[f64; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]))
}

pub(crate) fn quat_to_matrix(wxyz: &[f64; 4]) -> nalgebra::Matrix3<f64> {
    quat_to_unit(wxyz).to_rotation_matrix().into_inner()
}

pub(crate) fn write_quat(q: &UnitQuaternion<f64>, out: &mut [f64]) {
    out[0] = q.w;
    out[1] = q.i;
    out[2] = q.j;
    out[3] = q.k;
}

/// Rotation matrix to `[w, x, y, z]`.
pub fn matrix_to_quat(r: &nalgebra::Matrix3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(*r));
    [q.w, q.i, q.j, q.k]
}

/// Exponential of a rotation vector as `[w, x, y, z]`.
pub fn quat_from_rotation_vector(w: &Vector3<f64>) -> [f64; 4] {
    matrix_to_quat(&exp_so3(w))
}
