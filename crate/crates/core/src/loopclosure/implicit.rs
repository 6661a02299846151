use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{check_dim, Error, Result};
use crate::treedyn::{JointKind, Kinematics, RigidBodyTree};

/// A point of a local body, in that body's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyPoint {
    pub body: usize,
    pub point: Vector3<f64>,
}

impl BodyPoint {
    pub fn new(body: usize, point: Vector3<f64>) -> Self {
        Self { body, point }
    }

    pub(crate) fn world(&self, kin: &Kinematics) -> Vector3<f64> {
        kin.placements[self.body].act_point(&self.point)
    }
}

/// Cut joint closing a loop: coincidence of two body points, projected on fixed directions.
///
/// Spherical and revolute cuts both use three translational rows; planar loops use two.
#[derive(Debug, Clone, PartialEq)]
pub struct CutJoint {
    pub name: String,
    pub parent: BodyPoint,
    pub child: BodyPoint,
    /// Unit directions in the local base frame, one constraint row each.
    pub directions: Vec<Vector3<f64>>,
}

impl CutJoint {
    pub fn point(name: impl Into<String>, parent: BodyPoint, child: BodyPoint) -> Self {
        Self { name: name.into(), parent, child, directions: vec![Vector3::x(), Vector3::y(), Vector3::z()] }
    }

    pub fn planar(name: impl Into<String>, parent: BodyPoint, child: BodyPoint, normal: Vector3<f64>) -> Self {
        let n = normal.normalize();
        let seed = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e1 = (seed - n * n.dot(&seed)).normalize();
        let e2 = n.cross(&e1);
        Self { name: name.into(), parent, child, directions: vec![e1, e2] }
    }

    pub fn rows(&self) -> usize {
        self.directions.len()
    }
}

/// Implicit loop-closure constraint `φ(q) = 0` on a fixed-base local tree.
///
/// The local tree may contain revolute, prismatic, universal and fixed joints only, so
/// position and velocity coordinates coincide.
#[derive(Debug, Clone)]
pub struct ImplicitConstraint {
    tree: RigidBodyTree,
    cuts: Vec<CutJoint>,
    rows: usize,
}

impl ImplicitConstraint {
    pub fn new(tree: RigidBodyTree, cuts: Vec<CutJoint>) -> Result<Self> {
        for b in tree.bodies() {
            if matches!(b.joint.kind, JointKind::Spherical | JointKind::FloatingBase) {
                return Err(Error::InvalidArgument(format!(
                    "joint `{}` of a submechanism tree must have equal position and velocity dimensions",
                    b.joint_name
                )));
            }
        }
        let nb = tree.bodies().len();
        for c in &cuts {
            if c.parent.body >= nb || c.child.body >= nb {
                return Err(Error::InvalidArgument(format!("cut `{}` refers to a missing body", c.name)));
            }
            if c.directions.iter().any(|d| (d.norm() - 1.0).abs() > 1e-9) {
                return Err(Error::InvalidArgument(format!("cut `{}` has a non-unit direction", c.name)));
            }
        }
        let rows = cuts.iter().map(CutJoint::rows).sum();
        Ok(Self { tree, cuts, rows })
    }

    pub fn tree(&self) -> &RigidBodyTree {
        &self.tree
    }

    pub fn cuts(&self) -> &[CutJoint] {
        &self.cuts
    }

    /// Number of constraint rows `n_c`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of local coordinates.
    pub fn dim(&self) -> usize {
        self.tree.nv()
    }

    pub fn kinematics(&self, q: &DVector<f64>, qd: Option<&DVector<f64>>) -> Result<Kinematics> {
        self.tree.kinematics(q, qd)
    }

    pub fn residual(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.residual_with(&self.kinematics(q, None)?))
    }

    pub fn jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.jacobian_with(&self.kinematics(q, None)?))
    }

    /// `k = −K̇ q̇`.
    pub fn drift(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("closure velocity", self.dim(), qd.len())?;
        Ok(self.drift_with(&self.kinematics(q, Some(qd))?))
    }

    pub(crate) fn residual_with(&self, kin: &Kinematics) -> DVector<f64> {
        let mut phi = DVector::zeros(self.rows);
        let mut r = 0;
        for c in &self.cuts {
            let e = c.parent.world(kin) - c.child.world(kin);
            for d in &c.directions {
                phi[r] = d.dot(&e);
                r += 1;
            }
        }
        phi
    }

    pub(crate) fn jacobian_with(&self, kin: &Kinematics) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(self.rows, self.dim());
        let mut r = 0;
        for c in &self.cuts {
            let jp = kin.point_jacobian(&self.tree, c.parent.body, &c.parent.world(kin));
            let jc = kin.point_jacobian(&self.tree, c.child.body, &c.child.world(kin));
            let j = jp - jc;
            for d in &c.directions {
                k.row_mut(r).copy_from(&(d.transpose() * &j));
                r += 1;
            }
        }
        k
    }

    pub(crate) fn drift_with(&self, kin: &Kinematics) -> DVector<f64> {
        let mut k = DVector::zeros(self.rows);
        let mut r = 0;
        for c in &self.cuts {
            let a = kin.point_drift(c.parent.body, &c.parent.world(kin)) - kin.point_drift(c.child.body, &c.child.world(kin));
            for d in &c.directions {
                k[r] = -d.dot(&a);
                r += 1;
            }
        }
        k
    }
}
