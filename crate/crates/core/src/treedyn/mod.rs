//! Kinematics and dynamics of rigid-body trees.
//!
//! All recursions run in the world frame: body velocities, accelerations, motion
//! subspaces and wrenches are expressed at the world origin. Frame Jacobians are
//! reported "world aligned": angular rows give the frame's angular velocity, linear
//! rows the velocity of the frame origin, both in world coordinates.

mod algorithms;
mod joint;

use nalgebra::{DVector, Vector3};

use crate::error::{check_dim, Error, Result};
use crate::spatial::{FramePlacement, RigidBodyInertia};

pub use algorithms::Kinematics;
pub use joint::{matrix_to_quat, quat_from_rotation_vector, Interval, JointKind, JointModel};

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub name: String,
    pub joint_name: String,
    pub inertia: RigidBodyInertia,
    pub parent: Option<usize>,
    pub joint: JointModel,
    pub q_offset: usize,
    pub v_offset: usize,
}

/// Operational frame rigidly attached to a body.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub name: String,
    pub body: usize,
    pub placement: FramePlacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameId(pub usize);

/// Positions, velocities and accelerations of a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeState {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub a: DVector<f64>,
}

impl TreeState {
    pub fn new(q: DVector<f64>, v: DVector<f64>, a: DVector<f64>) -> Self {
        Self { q, v, a }
    }

    pub fn at_rest(q: DVector<f64>, nv: usize) -> Self {
        Self { q, v: DVector::zeros(nv), a: DVector::zeros(nv) }
    }
}

/// A topologically sorted kinematic tree (`parent(i) < i`).
#[derive(Debug, Clone, PartialEq)]
pub struct RigidBodyTree {
    bodies: Vec<Body>,
    frames: Vec<Frame>,
    pub gravity: Vector3<f64>,
    nq: usize,
    nv: usize,
}

impl Default for RigidBodyTree {
    fn default() -> Self {
        Self::new()
    }
}

impl RigidBodyTree {
    pub fn new() -> Self {
        Self { bodies: Vec::new(), frames: Vec::new(), gravity: Vector3::new(0.0, 0.0, -9.81), nq: 0, nv: 0 }
    }

    /// Appends a body; also registers a frame named after the body at its origin.
    pub fn add_body(
        &mut self,
        name: impl Into<String>,
        parent: Option<usize>,
        joint_name: impl Into<String>,
        joint: JointModel,
        inertia: RigidBodyInertia,
    ) -> Result<usize> {
        let name = name.into();
        if let Some(p) = parent {
            if p >= self.bodies.len() {
                return Err(Error::InvalidArgument(format!("parent index {p} of body `{name}` does not precede it")));
            }
        }
        if (joint.kind == JointKind::Revolute || joint.kind == JointKind::Prismatic) && (joint.axis.norm() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("axis of `{name}` is not unit")));
        }
        for lim in &joint.position_limits {
            if lim.lower > lim.upper {
                return Err(Error::InvalidArgument(format!("limits of `{name}` are reversed")));
            }
        }
        if self.bodies.iter().any(|b| b.name == name) {
            return Err(Error::InvalidArgument(format!("duplicate body `{name}`")));
        }
        let idx = self.bodies.len();
        let (nq, nv) = (joint.nq(), joint.nv());
        self.bodies.push(Body {
            name: name.clone(),
            joint_name: joint_name.into(),
            inertia,
            parent,
            joint,
            q_offset: self.nq,
            v_offset: self.nv,
        });
        self.nq += nq;
        self.nv += nv;
        self.frames.push(Frame { name, body: idx, placement: FramePlacement::identity() });
        Ok(idx)
    }

    pub fn add_frame(&mut self, name: impl Into<String>, body: usize, placement: FramePlacement) -> Result<FrameId> {
        let name = name.into();
        if body >= self.bodies.len() {
            return Err(Error::InvalidArgument(format!("frame `{name}` on unknown body")));
        }
        if self.frames.iter().any(|f| f.name == name) {
            return Err(Error::InvalidArgument(format!("duplicate frame `{name}`")));
        }
        self.frames.push(Frame { name, body, placement });
        Ok(FrameId(self.frames.len() - 1))
    }

    pub fn bodies(&self) -> &[Body] {
        &self.bodies
    }

    pub fn body_mut(&mut self, i: usize) -> &mut Body {
        &mut self.bodies[i]
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn nq(&self) -> usize {
        self.nq
    }

    pub fn nv(&self) -> usize {
        self.nv
    }

    pub fn body_index(&self, name: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.name == name)
    }

    /// Body index whose joint carries the given name.
    pub fn joint_body(&self, joint_name: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.joint_name == joint_name)
    }

    pub fn frame_id(&self, name: &str) -> Result<FrameId> {
        self.frames.iter().position(|f| f.name == name).map(FrameId).ok_or_else(|| Error::UnknownFrame(name.to_string()))
    }

    pub fn frame(&self, id: FrameId) -> Result<&Frame> {
        self.frames.get(id.0).ok_or_else(|| Error::UnknownFrame(format!("#{}", id.0)))
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.inertia.mass).sum()
    }

    pub fn has_floating_base(&self) -> bool {
        self.bodies.first().is_some_and(|b| b.joint.kind == JointKind::FloatingBase)
    }

    /// Whether body `ancestor` lies on the path from the root to `body` (inclusive).
    pub fn is_ancestor(&self, ancestor: usize, body: usize) -> bool {
        let mut cur = Some(body);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.bodies[c].parent;
        }
        false
    }

    pub fn neutral_configuration(&self) -> DVector<f64> {
        let mut q = DVector::zeros(self.nq);
        for b in &self.bodies {
            let n = b.joint.nq();
            b.joint.neutral(&mut q.as_mut_slice()[b.q_offset..b.q_offset + n]);
        }
        q
    }

    pub fn check_configuration(&self, q: &DVector<f64>) -> Result<()> {
        check_dim("configuration", self.nq, q.len())
    }

    pub fn check_velocity(&self, v: &DVector<f64>, what: &str) -> Result<()> {
        check_dim(what, self.nv, v.len())
    }

    /// `q ⊕ dv`.
    pub fn integrate(&self, q: &DVector<f64>, dv: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_configuration(q)?;
        self.check_velocity(dv, "velocity increment")?;
        let mut out = q.clone();
        for b in &self.bodies {
            let (nq, nv) = (b.joint.nq(), b.joint.nv());
            b.joint.integrate(
                &q.as_slice()[b.q_offset..b.q_offset + nq],
                &dv.as_slice()[b.v_offset..b.v_offset + nv],
                &mut out.as_mut_slice()[b.q_offset..b.q_offset + nq],
            );
        }
        Ok(out)
    }

    /// `q1 ⊖ q0`.
    pub fn difference(&self, q0: &DVector<f64>, q1: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_configuration(q0)?;
        self.check_configuration(q1)?;
        let mut out = DVector::zeros(self.nv);
        for b in &self.bodies {
            let (nq, nv) = (b.joint.nq(), b.joint.nv());
            b.joint.difference(
                &q0.as_slice()[b.q_offset..b.q_offset + nq],
                &q1.as_slice()[b.q_offset..b.q_offset + nq],
                &mut out.as_mut_slice()[b.v_offset..b.v_offset + nv],
            );
        }
        Ok(out)
    }

    /// Maximum deviation of quaternion blocks from unit norm.
    pub fn quaternion_norm_error(&self, q: &DVector<f64>) -> f64 {
        let mut err: f64 = 0.0;
        for b in &self.bodies {
            if let Some(off) = b.joint.quaternion_offset() {
                let s = b.q_offset + off;
                let n = q.rows(s, 4).norm();
                err = err.max((n - 1.0).abs());
            }
        }
        err
    }
}

#[cfg(test)]
pub(crate) mod test_models {
    use super::*;
    use crate::spatial::exp_so3;
    use nalgebra::Matrix3;
    use rand::Rng;

    /// Point mass `m` at distance `l` below a revolute joint about y.
    pub fn pendulum(m: f64, l: f64) -> RigidBodyTree {
        let mut t = RigidBodyTree::new();
        t.add_body(
            "bob",
            None,
            "hinge",
            JointModel::revolute(Vector3::y(), FramePlacement::identity()),
            RigidBodyInertia::point_mass(m, Vector3::new(0.0, 0.0, -l)),
        )
        .unwrap();
        t.add_frame("tip", 0, FramePlacement::from_translation(Vector3::new(0.0, 0.0, -l))).unwrap();
        t
    }

    /// Planar 2-link arm in the x–y plane rotating about z, unit links.
    pub fn planar_arm(l1: f64, l2: f64) -> RigidBodyTree {
        let mut t = RigidBodyTree::new();
        let i1 = RigidBodyInertia::new(1.0, Vector3::new(l1 / 2.0, 0.0, 0.0), Matrix3::from_diagonal_element(0.01));
        let i2 = RigidBodyInertia::new(1.0, Vector3::new(l2 / 2.0, 0.0, 0.0), Matrix3::from_diagonal_element(0.01));
        t.add_body("link1", None, "j1", JointModel::revolute(Vector3::z(), FramePlacement::identity()), i1).unwrap();
        t.add_body(
            "link2",
            Some(0),
            "j2",
            JointModel::revolute(Vector3::z(), FramePlacement::from_translation(Vector3::new(l1, 0.0, 0.0))),
            i2,
        )
        .unwrap();
        t.add_frame("end", 1, FramePlacement::from_translation(Vector3::new(l2, 0.0, 0.0))).unwrap();
        t
    }

    /// A branched tree exercising every joint kind.
    pub fn mixed_tree() -> RigidBodyTree {
        let mut t = RigidBodyTree::new();
        let inert = |m: f64, c: [f64; 3]| {
            RigidBodyInertia::new(m, Vector3::from(c), Matrix3::new(0.05, 0.002, 0.001, 0.002, 0.04, -0.003, 0.001, -0.003, 0.03))
        };
        let fb = t.add_body("base", None, "root", JointModel::floating(FramePlacement::identity()), inert(3.0, [0.02, 0.0, 0.01])).unwrap();
        let a = t
            .add_body(
                "arm",
                Some(fb),
                "r1",
                JointModel::revolute(
                    Vector3::new(0.0, 0.6, 0.8),
                    FramePlacement::new(exp_so3(&Vector3::new(0.1, 0.2, 0.0)), Vector3::new(0.1, 0.2, 0.0)),
                ),
                inert(1.0, [0.0, 0.0, -0.2]),
            )
            .unwrap();
        let u = t
            .add_body(
                "wrist",
                Some(a),
                "u1",
                JointModel::universal(Vector3::x(), Vector3::y(), FramePlacement::from_translation(Vector3::new(0.0, 0.0, -0.4))),
                inert(0.5, [0.05, 0.0, -0.1]),
            )
            .unwrap();
        t.add_body(
            "slider",
            Some(fb),
            "p1",
            JointModel::prismatic(Vector3::new(1.0, 0.0, 0.0), FramePlacement::from_translation(Vector3::new(-0.1, -0.2, 0.0))),
            inert(0.8, [0.0, 0.1, 0.0]),
        )
        .unwrap();
        t.add_body(
            "ball",
            Some(u),
            "s1",
            JointModel::spherical(FramePlacement::from_translation(Vector3::new(0.0, 0.1, -0.2))),
            inert(0.4, [0.1, 0.0, 0.05]),
        )
        .unwrap();
        t.add_frame("tool", 4, FramePlacement::new(exp_so3(&Vector3::new(0.0, 0.3, 0.1)), Vector3::new(0.05, 0.02, -0.1))).unwrap();
        t
    }

    pub fn random_configuration(t: &RigidBodyTree, rng: &mut impl Rng) -> DVector<f64> {
        let q0 = t.neutral_configuration();
        let dv = DVector::from_fn(t.nv(), |_, _| rng.gen_range(-1.0..1.0));
        t.integrate(&q0, &dv).unwrap()
    }

    pub fn random_vector(n: usize, scale: f64, rng: &mut impl Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
    }
}
