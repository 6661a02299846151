//! Closed-form resolution steps for canonical leg and crank layouts.

use std::f64::consts::PI;

use nalgebra::{DVector, Vector3};

use super::implicit::{BodyPoint, ImplicitConstraint};
use crate::error::{Error, Result};
use crate::spatial::FramePlacement;
use crate::treedyn::{JointKind, Kinematics, RigidBodyTree};

/// One closed-form step; steps run in order and may use coordinates set by earlier steps.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticalStep {
    /// Points the leg hanging from universal joint body `u_body` (axes x then y, leg along
    /// the child z axis) at `target`, optionally setting the extension coordinate so the
    /// leg tip at `rest_length + s` reaches it.
    LegAim { u_body: usize, target: BodyPoint, length_coord: Option<usize>, rest_length: f64 },
    /// Rotates revolute body `joint_body` until `moving` lies at distance
    /// `base_distance + q[plus_coord]` from `fixed`. `branch` is ±1.
    CrankDistance { joint_body: usize, moving: BodyPoint, fixed: BodyPoint, base_distance: f64, plus_coord: Option<usize>, branch: f64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalyticalPlan {
    pub steps: Vec<AnalyticalStep>,
}

impl AnalyticalPlan {
    pub fn new(steps: Vec<AnalyticalStep>) -> Self {
        Self { steps }
    }

    pub fn validate(&self, tree: &RigidBodyTree) -> Result<()> {
        let nb = tree.bodies().len();
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        for (i, s) in self.steps.iter().enumerate() {
            match s {
                AnalyticalStep::LegAim { u_body, target, length_coord, .. } => {
                    if *u_body >= nb || target.body >= nb {
                        return bad(format!("step {i} refers to a missing body"));
                    }
                    let j = &tree.bodies()[*u_body].joint;
                    if j.kind != JointKind::Universal || (j.axis - Vector3::x()).norm() > 1e-12 || (j.axis2 - Vector3::y()).norm() > 1e-12 {
                        return bad(format!("step {i}: leg aim needs a universal joint with axes x, y"));
                    }
                    if length_coord.is_some_and(|c| c >= tree.nv()) {
                        return bad(format!("step {i}: length coordinate out of range"));
                    }
                }
                AnalyticalStep::CrankDistance { joint_body, moving, fixed, plus_coord, branch, .. } => {
                    if *joint_body >= nb || moving.body >= nb || fixed.body >= nb {
                        return bad(format!("step {i} refers to a missing body"));
                    }
                    if tree.bodies()[*joint_body].joint.kind != JointKind::Revolute {
                        return bad(format!("step {i}: crank joint must be revolute"));
                    }
                    if !tree.is_ancestor(*joint_body, moving.body) || tree.is_ancestor(*joint_body, fixed.body) {
                        return bad(format!("step {i}: crank must move `moving` and not `fixed`"));
                    }
                    if plus_coord.is_some_and(|c| c >= tree.nv()) {
                        return bad(format!("step {i}: distance coordinate out of range"));
                    }
                    if branch.abs() != 1.0 {
                        return bad(format!("step {i}: branch must be +1 or -1"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs all steps on `q`; on geometric infeasibility returns the excess of the
    /// law-of-cosines argument over one.
    pub(crate) fn execute(&self, c: &ImplicitConstraint, q: &mut DVector<f64>) -> std::result::Result<(), f64> {
        for s in &self.steps {
            let kin = c.kinematics(q, None).map_err(|_| f64::INFINITY)?;
            step(c.tree(), &kin, s, q, None)?;
        }
        Ok(())
    }

    /// Picks every crank branch so that the plan reproduces `reference`.
    pub fn calibrate(&mut self, c: &ImplicitConstraint, reference: &DVector<f64>) -> Result<()> {
        self.validate(c.tree())?;
        let mut q = reference.clone();
        for s in self.steps.iter_mut() {
            let kin = c.kinematics(&q, None)?;
            let mut chosen = 1.0;
            if let AnalyticalStep::CrankDistance { .. } = s {
                let mut best = f64::INFINITY;
                for b in [1.0, -1.0] {
                    let mut trial = q.clone();
                    if step(c.tree(), &kin, s, &mut trial, Some(b)).is_ok() {
                        let d = (&trial - &q).amax();
                        if d < best {
                            best = d;
                            chosen = b;
                        }
                    }
                }
                if let AnalyticalStep::CrankDistance { branch, .. } = s {
                    *branch = chosen;
                }
            }
            step(c.tree(), &kin, s, &mut q, None)
                .map_err(|e| Error::InvalidArgument(format!("reference posture is not reachable ({e:.3e})")))?;
        }
        Ok(())
    }
}

fn joint_frame(tree: &RigidBodyTree, kin: &Kinematics, body: usize) -> FramePlacement {
    let b = &tree.bodies()[body];
    let parent = b.parent.map_or_else(FramePlacement::identity, |p| kin.placements[p]);
    parent.compose(&b.joint.parent_frame)
}

fn wrap(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

fn step(
    tree: &RigidBodyTree,
    kin: &Kinematics,
    s: &AnalyticalStep,
    q: &mut DVector<f64>,
    branch_override: Option<f64>,
) -> std::result::Result<(), f64> {
    match s {
        AnalyticalStep::LegAim { u_body, target, length_coord, rest_length } => {
            let f = joint_frame(tree, kin, *u_body);
            let v = f.inv_act_point(&target.world(kin));
            let dist = v.norm();
            if dist < 1e-12 {
                return Err(f64::INFINITY);
            }
            let d = v / dist;
            let o = tree.bodies()[*u_body].v_offset;
            q[o] = (-d.y).atan2(d.z);
            q[o + 1] = d.x.clamp(-1.0, 1.0).asin();
            if let Some(lc) = length_coord {
                q[*lc] = dist - rest_length;
            }
            Ok(())
        }
        AnalyticalStep::CrankDistance { joint_body, moving, fixed, base_distance, plus_coord, branch } => {
            let x = &kin.placements[*joint_body];
            let a = x.rotation * tree.bodies()[*joint_body].joint.axis;
            let o = x.translation;
            let r = moving.world(kin) - o;
            let b = fixed.world(kin) - o;
            let (r_par, b_par) = (a * a.dot(&r), a * a.dot(&b));
            let (r_perp, b_perp) = (r - r_par, b - b_par);
            let ca = r_perp.dot(&b_perp);
            let cb = a.cross(&r_perp).dot(&b_perp);
            let amp = ca.hypot(cb);
            let len = base_distance + plus_coord.map_or(0.0, |c| q[c]);
            if amp < 1e-12 {
                return Err(f64::INFINITY);
            }
            let cosarg = ((r_par - b_par).norm_squared() + r_perp.norm_squared() + b_perp.norm_squared() - len * len) / (2.0 * amp);
            if cosarg.abs() > 1.0 + 1e-12 {
                return Err(cosarg.abs() - 1.0);
            }
            let psi = cb.atan2(ca);
            let br = branch_override.unwrap_or(*branch);
            let delta = wrap(psi + br * cosarg.clamp(-1.0, 1.0).acos());
            q[tree.bodies()[*joint_body].v_offset] += delta;
            Ok(())
        }
    }
}
