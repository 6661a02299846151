use nalgebra::{DMatrix, DVector, Matrix3xX, Matrix6, Vector3, Vector6};

use super::{FrameId, RigidBodyTree};
use crate::error::{check_dim, Error, Result};
use crate::spatial::{FramePlacement, SpatialForce, SpatialMotion};

/// Result of one forward kinematic sweep, everything in world coordinates.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub placements: Vec<FramePlacement>,
    /// Motion subspace columns, indexed by velocity coordinate.
    pub subspace: Vec<SpatialMotion>,
    /// Body spatial velocities (zero when no velocity was given).
    pub velocities: Vec<SpatialMotion>,
    /// Body spatial accelerations for zero joint acceleration and no gravity.
    pub bias: Vec<SpatialMotion>,
}

impl Kinematics {
    pub fn frame_placement(&self, tree: &RigidBodyTree, frame: FrameId) -> Result<FramePlacement> {
        let f = tree.frame(frame)?;
        Ok(self.placements[f.body].compose(&f.placement))
    }

    /// 3×nv Jacobian of the velocity of a point rigidly attached to `body`, given in world coordinates.
    pub fn point_jacobian(&self, tree: &RigidBodyTree, body: usize, p: &Vector3<f64>) -> Matrix3xX<f64> {
        let mut j = Matrix3xX::zeros(tree.nv());
        let mut cur = Some(body);
        while let Some(b) = cur {
            let bd = &tree.bodies[b];
            for k in bd.v_offset..bd.v_offset + bd.joint.nv() {
                let s = &self.subspace[k];
                j.set_column(k, &s.point_velocity(p));
            }
            cur = bd.parent;
        }
        j
    }

    /// Classical acceleration of a material point of `body` at `p` for zero joint acceleration.
    pub fn point_drift(&self, body: usize, p: &Vector3<f64>) -> Vector3<f64> {
        let a = &self.bias[body];
        let v = &self.velocities[body];
        a.point_velocity(p) + v.angular.cross(&v.point_velocity(p))
    }

    pub fn point_velocity(&self, body: usize, p: &Vector3<f64>) -> Vector3<f64> {
        self.velocities[body].point_velocity(p)
    }

    /// 6×nv world-aligned frame Jacobian.
    pub fn frame_jacobian(&self, tree: &RigidBodyTree, frame: FrameId) -> Result<DMatrix<f64>> {
        let f = tree.frame(frame)?;
        let p = self.placements[f.body].act_point(&f.placement.translation);
        let mut j = DMatrix::zeros(6, tree.nv());
        let mut cur = Some(f.body);
        while let Some(b) = cur {
            let bd = &tree.bodies[b];
            for k in bd.v_offset..bd.v_offset + bd.joint.nv() {
                let s = &self.subspace[k];
                let lin = s.point_velocity(&p);
                for r in 0..3 {
                    j[(r, k)] = s.angular[r];
                    j[(r + 3, k)] = lin[r];
                }
            }
            cur = bd.parent;
        }
        Ok(j)
    }

    /// Frame angular velocity and origin velocity (world aligned).
    pub fn frame_velocity(&self, tree: &RigidBodyTree, frame: FrameId) -> Result<SpatialMotion> {
        let f = tree.frame(frame)?;
        let p = self.placements[f.body].act_point(&f.placement.translation);
        let v = &self.velocities[f.body];
        Ok(SpatialMotion::new(v.angular, v.point_velocity(&p)))
    }

    /// `J̇·v` of the world-aligned frame Jacobian.
    pub fn frame_drift(&self, tree: &RigidBodyTree, frame: FrameId) -> Result<SpatialMotion> {
        let f = tree.frame(frame)?;
        let p = self.placements[f.body].act_point(&f.placement.translation);
        Ok(SpatialMotion::new(self.bias[f.body].angular, self.point_drift(f.body, &p)))
    }
}

impl RigidBodyTree {
    /// Forward kinematic sweep; velocity-dependent terms are filled when `v` is given.
    pub fn kinematics(&self, q: &DVector<f64>, v: Option<&DVector<f64>>) -> Result<Kinematics> {
        self.check_configuration(q)?;
        if let Some(v) = v {
            self.check_velocity(v, "velocity")?;
        }
        let nb = self.bodies.len();
        let mut placements = Vec::with_capacity(nb);
        let mut subspace = vec![SpatialMotion::zero(); self.nv];
        let mut velocities = vec![SpatialMotion::zero(); nb];
        let mut bias = vec![SpatialMotion::zero(); nb];
        let mut local = [SpatialMotion::zero(); 6];
        for (i, b) in self.bodies.iter().enumerate() {
            let (nq, nv) = (b.joint.nq(), b.joint.nv());
            let qj = &q.as_slice()[b.q_offset..b.q_offset + nq];
            let joint_frame = match b.parent {
                Some(p) => placements[p],
                None => FramePlacement::identity(),
            };
            let joint_frame: FramePlacement = joint_frame.compose(&b.joint.parent_frame);
            let x = joint_frame.compose(&b.joint.transform(qj));
            b.joint.local_subspace(qj, &mut local);
            for k in 0..nv {
                subspace[b.v_offset + k] = x.act_motion(&local[k]);
            }
            if let Some(v) = v {
                let vp = b.parent.map(|p| velocities[p]).unwrap_or_default();
                let ap = b.parent.map(|p| bias[p]).unwrap_or_default();
                let mut vj = SpatialMotion::zero();
                for k in 0..nv {
                    vj += subspace[b.v_offset + k] * v[b.v_offset + k];
                }
                let vi = vp + vj;
                let c = match b.joint.kind {
                    super::JointKind::Universal => {
                        // first axis is carried by the intermediate frame, second by the child
                        let s0 = subspace[b.v_offset] * v[b.v_offset];
                        let s1 = subspace[b.v_offset + 1] * v[b.v_offset + 1];
                        vp.cross_motion(&s0) + vi.cross_motion(&s1)
                    }
                    _ => vi.cross_motion(&vj),
                };
                velocities[i] = vi;
                bias[i] = ap + c;
            }
            placements.push(x);
        }
        Ok(Kinematics { placements, subspace, velocities, bias })
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<Vec<FramePlacement>> {
        Ok(self.kinematics(q, None)?.placements)
    }

    pub fn frame_placement(&self, q: &DVector<f64>, frame: FrameId) -> Result<FramePlacement> {
        self.kinematics(q, None)?.frame_placement(self, frame)
    }

    /// Inverse dynamics `M(q)·a + b(q, v) − Σ Jᵀ f_ext`.
    ///
    /// External wrenches are given per body, in world coordinates at the world origin.
    pub fn rnea(&self, q: &DVector<f64>, v: &DVector<f64>, a: &DVector<f64>, external: Option<&[SpatialForce]>) -> Result<DVector<f64>> {
        self.check_velocity(a, "acceleration")?;
        if let Some(f) = external {
            check_dim("external forces", self.bodies.len(), f.len())?;
        }
        let kin = self.kinematics(q, Some(v))?;
        Ok(self.rnea_with(&kin, a, external, true))
    }

    pub(crate) fn rnea_with(
        &self,
        kin: &Kinematics,
        a: &DVector<f64>,
        external: Option<&[SpatialForce]>,
        with_gravity: bool,
    ) -> DVector<f64> {
        let nb = self.bodies.len();
        let root_acc = if with_gravity { SpatialMotion::new(Vector3::zeros(), -self.gravity) } else { SpatialMotion::zero() };
        let mut acc = vec![SpatialMotion::zero(); nb];
        let mut forces = vec![SpatialForce::zero(); nb];
        for (i, b) in self.bodies.iter().enumerate() {
            let mut sa = SpatialMotion::zero();
            for k in b.v_offset..b.v_offset + b.joint.nv() {
                sa += kin.subspace[k] * a[k];
            }
            // joint bias terms accumulate along the path, so add the parent's joint-acceleration part
            let ap = match b.parent {
                Some(p) => acc[p] - kin.bias[p],
                None => root_acc,
            };
            acc[i] = ap + kin.bias[i] + sa;
            let inertia = b.inertia.transformed(&kin.placements[i]);
            let vi = &kin.velocities[i];
            let mut f = inertia.apply(&acc[i]) + vi.cross_force(&inertia.apply(vi));
            if let Some(ext) = external {
                f = f - ext[i];
            }
            forces[i] = f;
        }
        let mut tau = DVector::zeros(self.nv);
        for i in (0..nb).rev() {
            let b = &self.bodies[i];
            for k in b.v_offset..b.v_offset + b.joint.nv() {
                tau[k] = forces[i].dot(&kin.subspace[k]);
            }
            if let Some(p) = b.parent {
                let fi = forces[i];
                forces[p] += fi;
            }
        }
        tau
    }

    /// Gravity and velocity-product forces `b(q, v)`.
    pub fn bias_forces(&self, q: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let kin = self.kinematics(q, Some(v))?;
        Ok(self.rnea_with(&kin, &DVector::zeros(self.nv), None, true))
    }

    /// Joint-space inertia matrix by the composite-rigid-body algorithm.
    pub fn crba(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let kin = self.kinematics(q, None)?;
        Ok(self.crba_with(&kin))
    }

    pub(crate) fn crba_with(&self, kin: &Kinematics) -> DMatrix<f64> {
        let nb = self.bodies.len();
        let mut composite: Vec<Matrix6<f64>> =
            self.bodies.iter().enumerate().map(|(i, b)| b.inertia.transformed(&kin.placements[i]).to_matrix()).collect();
        let cols: Vec<Vector6<f64>> = kin.subspace.iter().map(|s| s.to_vector()).collect();
        let mut m = DMatrix::zeros(self.nv, self.nv);
        for i in (0..nb).rev() {
            let b = &self.bodies[i];
            for c in b.v_offset..b.v_offset + b.joint.nv() {
                // F = Ic·S is a force; S_dᵀ F pairs motion with force
                let f = composite[i] * cols[c];
                let mut cur = Some(i);
                while let Some(j) = cur {
                    let bj = &self.bodies[j];
                    for d in bj.v_offset..bj.v_offset + bj.joint.nv() {
                        let val = cols[d].dot(&f);
                        m[(d, c)] = val;
                        m[(c, d)] = val;
                    }
                    cur = bj.parent;
                }
            }
            if let Some(p) = b.parent {
                let ci = composite[i];
                composite[p] += ci;
            }
        }
        m
    }

    pub fn frame_jacobian(&self, q: &DVector<f64>, frame: FrameId) -> Result<DMatrix<f64>> {
        self.frame(frame)?;
        self.kinematics(q, None)?.frame_jacobian(self, frame)
    }

    pub fn frame_drift(&self, q: &DVector<f64>, v: &DVector<f64>, frame: FrameId) -> Result<SpatialMotion> {
        self.frame(frame)?;
        self.kinematics(q, Some(v))?.frame_drift(self, frame)
    }

    pub fn com_position(&self, q: &DVector<f64>) -> Result<Vector3<f64>> {
        let kin = self.kinematics(q, None)?;
        self.com_with(&kin)
    }

    pub(crate) fn com_with(&self, kin: &Kinematics) -> Result<Vector3<f64>> {
        let total = self.total_mass();
        if total <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let mut c = Vector3::zeros();
        for (i, b) in self.bodies.iter().enumerate() {
            c += kin.placements[i].act_point(&b.inertia.com) * b.inertia.mass;
        }
        Ok(c / total)
    }

    pub fn com_jacobian(&self, q: &DVector<f64>) -> Result<Matrix3xX<f64>> {
        let kin = self.kinematics(q, None)?;
        self.com_jacobian_with(&kin)
    }

    pub(crate) fn com_jacobian_with(&self, kin: &Kinematics) -> Result<Matrix3xX<f64>> {
        let total = self.total_mass();
        if total <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let mut j = Matrix3xX::zeros(self.nv);
        for (i, b) in self.bodies.iter().enumerate() {
            if b.inertia.mass == 0.0 {
                continue;
            }
            let c = kin.placements[i].act_point(&b.inertia.com);
            j += kin.point_jacobian(self, i, &c) * (b.inertia.mass / total);
        }
        Ok(j)
    }

    /// Total kinetic plus potential energy.
    pub fn mechanical_energy(&self, q: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        let kin = self.kinematics(q, Some(v))?;
        let mut e = 0.0;
        for (i, b) in self.bodies.iter().enumerate() {
            let inertia = b.inertia.transformed(&kin.placements[i]);
            let vi = &kin.velocities[i];
            e += 0.5 * inertia.apply(vi).dot(vi);
            e -= b.inertia.mass * self.gravity.dot(&inertia.com);
        }
        Ok(e)
    }
}
