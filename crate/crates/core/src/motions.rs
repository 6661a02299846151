//! Sit, stand and static-walk motions as phase-sequenced shooting problems on the
//! floating-base tree abstraction, plus post-hoc validation of solved motions.
//!
//! Every node gets a reference posture from a whole-body posture solve (stance feet
//! fixed, CoM and swing foot on their references, remaining freedom pulled toward the
//! upright posture). Those postures seed the solver together with quasi-static torques.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};

use crate::actuation::{ActuatorTrajectory, Knot, LimitKind, Trajectory};
use crate::boxfddp::{solve, SolveResult, SolverSettings};
use crate::constrained::{ContactKind, ContactSet, ContactSpec};
use crate::error::{Error, Result};
use crate::modelio::{BuiltModel, CoordinateInfo, RecipeDocument, RecipeWeights, ValidationReport};
use crate::ocp::{ActionModel, CostKind, CostModel, CostTerm, Dynamics, ShootingProblem, StateSpace};
use crate::spatial::{log_so3, FramePlacement};
use crate::treedyn::{FrameId, JointKind, RigidBodyTree};

/// Baumgarte gains of stance contacts, critically damped.
const CONTACT_GAINS: (f64, f64) = (100.0, 20.0);
const IK_MAX_ITERS: usize = 100;
const IK_TOL: f64 = 1e-10;
/// Fraction of each ROM kept free at both ends of reference postures, so the optimised
/// motion can deviate from its references without leaving the ROM.
pub const ROM_HEADROOM: f64 = 0.1;
/// Weight of upright-posture attraction per coordinate family in the posture solve.
const SPINE_WEIGHT: f64 = 10.0;
const KNEE_WEIGHT: f64 = 0.05;
const LIMB_WEIGHT: f64 = 1.0;
const BASE_WEIGHT: f64 = 1e-6;
/// Extra clearance, beyond the recipe margin, between the walking CoM target and the
/// inner edge of the stance foot.
const COM_INSET_CLEARANCE: f64 = 0.015;

#[derive(Debug, Clone, PartialEq)]
pub struct FootFrame {
    pub name: String,
    pub frame: FrameId,
    pub half_extents: Vector2<f64>,
}

/// The tree abstraction prepared for motion generation.
#[derive(Debug, Clone)]
pub struct MotionModel {
    pub tree: Arc<RigidBodyTree>,
    /// Left foot first.
    pub feet: [FootFrame; 2],
    pub independent: Vec<CoordinateInfo>,
    /// Upright posture, `y = 0`, soles flat on the ground and centred on the origin.
    pub standing: DVector<f64>,
    /// Torque bounds of the independent joints.
    pub effort: DVector<f64>,
    weights: DVector<f64>,
}

impl MotionModel {
    pub fn new(model: &BuiltModel) -> Result<Self> {
        let tree = model.abstraction.clone().ok_or_else(|| Error::InvalidArgument("motion generation needs a tree abstraction".into()))?;
        let m = model.m();
        if !tree.has_floating_base() || tree.nv() != m + 6 {
            return Err(Error::InvalidArgument("the tree abstraction must be a floating base plus the independent joints".into()));
        }
        if model.feet.len() != 2 {
            return Err(Error::InvalidArgument(format!("motion generation needs two feet, the model declares {}", model.feet.len())));
        }
        let mut feet = Vec::new();
        for f in &model.feet {
            feet.push(FootFrame { name: f.frame.clone(), frame: tree.frame_id(&f.frame)?, half_extents: f.half_extents });
        }
        let mut q = tree.neutral_configuration();
        let soles: Vec<Vector3<f64>> =
            feet.iter().map(|f| tree.frame_placement(&q, f.frame).map(|x| x.translation)).collect::<Result<_>>()?;
        let centre = (soles[0] + soles[1]) * 0.5;
        for k in 0..3 {
            q[k] -= centre[k];
        }
        if soles[0].y < soles[1].y {
            feet.swap(0, 1);
        }
        let mut effort = DVector::zeros(m);
        let mut weights = DVector::from_element(m + 6, BASE_WEIGHT);
        let mut i = 0;
        for b in tree.bodies() {
            if b.joint.kind == JointKind::FloatingBase {
                continue;
            }
            for _ in 0..b.joint.nv() {
                effort[i] = if b.joint.effort_limit.is_finite() { b.joint.effort_limit } else { 1e9 };
                weights[6 + i] = match b.joint_name.split('_').next() {
                    Some("spine") => SPINE_WEIGHT,
                    Some("knee") => KNEE_WEIGHT,
                    _ => LIMB_WEIGHT,
                };
                i += 1;
            }
        }
        let [left, right]: [FootFrame; 2] = feet.try_into().expect("two feet");
        Ok(Self { tree: Arc::new(tree), feet: [left, right], independent: model.independent.clone(), standing: q, effort, weights })
    }

    pub fn m(&self) -> usize {
        self.independent.len()
    }

    /// Full configuration from base pose and independent coordinates.
    pub fn configuration(&self, base_q: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut q = DVector::zeros(7 + y.len());
        q.rows_mut(0, 7).copy_from(base_q);
        q.rows_mut(7, y.len()).copy_from(y);
        q
    }

    pub fn independent_of(&self, q: &DVector<f64>) -> DVector<f64> {
        q.rows(7, self.m()).into_owned()
    }

    pub fn com(&self, q: &DVector<f64>) -> Result<Vector3<f64>> {
        self.tree.com_position(q)
    }

    pub fn sole(&self, q: &DVector<f64>, foot: usize) -> Result<FramePlacement> {
        self.tree.frame_placement(q, self.feet[foot].frame)
    }

    /// Upright posture with the given independent coordinates, re-seated so the left sole
    /// keeps the standing sole placement.
    fn seated(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let mut q = self.standing.clone();
        q.rows_mut(7, self.m()).copy_from(y);
        let dz = self.sole(&q, 0)?.translation.z - self.sole(&self.standing, 0)?.translation.z;
        q[2] -= dz;
        Ok(q)
    }

    /// Reachable CoM height band with flat feet: knees at their ROM ends, all other
    /// coordinates upright.
    pub fn com_height_band(&self) -> Result<(f64, f64)> {
        let mut low = DVector::zeros(self.m());
        let mut high = DVector::zeros(self.m());
        for (i, c) in self.independent.iter().enumerate() {
            if c.joint.starts_with("knee") {
                low[i] = c.limits.upper;
                high[i] = c.limits.lower;
            }
        }
        let a = self.com(&self.seated(&low)?)?.z;
        let b = self.com(&self.seated(&high)?)?.z;
        Ok((a.min(b), a.max(b)))
    }

    /// Posture meeting the task exactly while staying as close to upright as possible.
    /// Coordinates that leave their ROM, shrunk by [`ROM_HEADROOM`] on each side, are pinned
    /// to the shrunk bound and the solve continues. When the targets cannot be met inside
    /// the ROM the solve is repeated without it; validation then reports the excursion.
    pub fn solve_posture(&self, guess: &DVector<f64>, task: &PostureTask) -> Result<DVector<f64>> {
        self.posture_within(guess, task, true).or_else(|e| {
            log::debug!("posture solve within ROM failed ({e}); retrying without ROM");
            self.posture_within(guess, task, false)
        })
    }

    fn posture_within(&self, guess: &DVector<f64>, task: &PostureTask, respect_rom: bool) -> Result<DVector<f64>> {
        let t = &*self.tree;
        let nv = t.nv();
        let rows = 6 * task.feet.len() + task.com_axes;
        let mut pinned: Vec<(usize, f64)> = Vec::new();
        let mut q = guess.clone();
        for _ in 0..IK_MAX_ITERS {
            let kin = t.kinematics(&q, None)?;
            let nr = rows + pinned.len();
            let mut e = DVector::zeros(nr);
            let mut j = DMatrix::zeros(nr, nv);
            for (i, (frame, target)) in task.feet.iter().enumerate() {
                let x = kin.frame_placement(t, *frame)?;
                e.rows_mut(6 * i, 3).copy_from(&log_so3(&(x.rotation * target.rotation.transpose())));
                e.rows_mut(6 * i + 3, 3).copy_from(&(x.translation - target.translation));
                j.rows_mut(6 * i, 6).copy_from(&kin.frame_jacobian(t, *frame)?);
            }
            let c = t.com_with(&kin)?;
            let jc = t.com_jacobian_with(&kin)?;
            for a in 0..task.com_axes {
                let r = 6 * task.feet.len() + a;
                e[r] = c[a] - task.com[a];
                j.row_mut(r).copy_from(&jc.row(a));
            }
            for (k, &(i, bound)) in pinned.iter().enumerate() {
                e[rows + k] = q[7 + i] - bound;
                j[(rows + k, 6 + i)] = 1.0;
            }
            let mut d = t.difference(&q, &self.standing)?;
            d.rows_mut(0, 6).fill(0.0);
            let n = nv + nr;
            let mut kkt = DMatrix::zeros(n, n);
            let mut rhs = DVector::zeros(n);
            for i in 0..nv {
                kkt[(i, i)] = self.weights[i];
                rhs[i] = self.weights[i] * d[i];
            }
            kkt.view_mut((nv, 0), (nr, nv)).copy_from(&j);
            kkt.view_mut((0, nv), (nv, nr)).copy_from(&j.transpose());
            rhs.rows_mut(nv, nr).copy_from(&-&e);
            let sol = kkt.lu().solve(&rhs).ok_or_else(|| Error::InfeasibleRecipe("posture targets conflict with the joint ROM".into()))?;
            let dq = sol.rows(0, nv).into_owned();
            let step = dq.amax();
            if e.amax() <= IK_TOL && step <= 1e-8 {
                let outside: Vec<(usize, f64)> = self
                    .independent
                    .iter()
                    .enumerate()
                    .filter_map(|(i, c)| {
                        let pad = ROM_HEADROOM * (c.limits.upper - c.limits.lower);
                        let (lo, hi) = (c.limits.lower + pad, c.limits.upper - pad);
                        let outside = q[7 + i] < lo - 1e-9 || q[7 + i] > hi + 1e-9;
                        (outside && !pinned.iter().any(|p| p.0 == i)).then(|| (i, q[7 + i].clamp(lo, hi)))
                    })
                    .collect();
                if outside.is_empty() || !respect_rom {
                    return Ok(q);
                }
                pinned.extend(outside);
                continue;
            }
            q = t.integrate(&q, &(dq * (0.3 / step.max(0.3))))?;
        }
        Err(Error::InfeasibleRecipe("posture targets are out of reach".into()))
    }

    /// Joint torques and contact wrenches holding `q` at rest. The base rows fix the
    /// minimum-norm contact wrenches, the joint rows then give the torques.
    pub fn quasi_static_torque(&self, q: &DVector<f64>, contacts: &ContactSet) -> Result<(DVector<f64>, DVector<f64>)> {
        let t = &*self.tree;
        let nv = t.nv();
        let b = t.bias_forces(q, &DVector::zeros(nv))?;
        let kin = t.kinematics(q, None)?;
        let jct = contacts.jacobian(t, &kin)?.transpose();
        let base = jct.rows(0, 6).into_owned();
        let lambda = base.clone().svd(true, true).solve(&b.rows(0, 6), 1e-12).map_err(|e| Error::NumericalFailure(e.to_string()))?;
        let residual = (&base * &lambda - b.rows(0, 6)).amax();
        if residual > 1e-8 * (1.0 + b.amax()) {
            return Err(Error::InfeasibleContact { residual });
        }
        let tau = b.rows(6, nv - 6) - jct.rows(6, nv - 6) * &lambda;
        Ok((tau, lambda))
    }

    fn contacts(&self, stance: &[usize], placements: &[FramePlacement; 2]) -> Result<ContactSet> {
        ContactSet::new(
            stance
                .iter()
                .map(|&f| {
                    ContactSpec::new(self.feet[f].frame, ContactKind::FlatFoot6d).with_baumgarte(
                        CONTACT_GAINS.0,
                        CONTACT_GAINS.1,
                        placements[f],
                    )
                })
                .collect(),
        )
    }
}

/// Equality targets of a posture solve; the CoM task uses its first `com_axes` components.
#[derive(Debug, Clone)]
pub struct PostureTask {
    pub feet: Vec<(FrameId, FramePlacement)>,
    pub com: Vector3<f64>,
    pub com_axes: usize,
}

#[derive(Debug, Clone)]
pub struct MotionPhase {
    pub name: String,
    pub duration: f64,
    /// Indices into [`MotionModel::feet`] of the feet on the ground.
    pub stance: Vec<usize>,
    pub contacts: ContactSet,
    /// CoM reference at the end of the phase.
    pub com_ref: Option<Vector3<f64>>,
    /// Landing placement of the swing foot.
    pub swing_foot_ref: Option<(FrameId, FramePlacement)>,
    /// Independent coordinates at the end of the phase.
    pub posture_ref: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct MotionRecipe {
    pub phases: Vec<MotionPhase>,
    pub dt: f64,
    pub weights: RecipeWeights,
}

impl MotionRecipe {
    pub fn node_counts(&self) -> Vec<usize> {
        self.phases.iter().map(|p| (p.duration / self.dt).round().max(1.0) as usize).collect()
    }
}

/// A recipe turned into a shooting problem with its initial guess.
#[derive(Debug, Clone)]
pub struct MotionPlan {
    pub recipe: MotionRecipe,
    pub problem: ShootingProblem,
    pub xs_guess: Vec<DVector<f64>>,
    pub us_guess: Vec<DVector<f64>>,
    /// Phase index of every running node.
    pub node_phase: Vec<usize>,
    /// Stance feet at every knot (running nodes plus the terminal one).
    pub support: Vec<Vec<usize>>,
}

impl MotionPlan {
    pub fn validation_limits(&self, params: &RecipeDocument) -> ValidationLimits {
        ValidationLimits { margin: params.margin, vmax: params.vmax, support: self.support.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sit,
    Stand,
}

/// Per-node targets gathered while planning.
struct NodeRef {
    q: DVector<f64>,
    com: Vector3<f64>,
    stance: Vec<usize>,
    placements: [FramePlacement; 2],
    swing: Option<(usize, FramePlacement)>,
    phase: usize,
}

fn blend(s: f64) -> f64 {
    0.5 * (1.0 - (PI * s).cos())
}

/// Single-phase sit or stand: the CoM moves vertically by `delta_z` with both feet down.
///
/// `start` overrides the initial configuration; by default sitting starts upright and
/// standing starts from the posture whose CoM is `delta_z` below upright.
pub fn build_sit_stand(
    model: &MotionModel,
    direction: Direction,
    params: &RecipeDocument,
    start: Option<&DVector<f64>>,
) -> Result<MotionPlan> {
    let (low, high) = model.com_height_band()?;
    let feet_at = |q: &DVector<f64>| -> Result<[FramePlacement; 2]> { Ok([model.sole(q, 0)?, model.sole(q, 1)?]) };
    let check = |z: f64| {
        if z < low - 1e-9 || z > high + 1e-9 {
            return Err(Error::InfeasibleRecipe(format!("CoM height {z:.4} m is outside the reachable band [{low:.4}, {high:.4}] m")));
        }
        Ok(())
    };
    let upright = model.standing.clone();
    let feet = feet_at(&upright)?;
    let task = |com: Vector3<f64>, feet: &[FramePlacement; 2]| PostureTask {
        feet: (0..2).map(|f| (model.feet[f].frame, feet[f])).collect(),
        com,
        com_axes: 3,
    };
    let q0 = match (start, direction) {
        (Some(q), _) => q.clone(),
        (None, Direction::Sit) => upright.clone(),
        (None, Direction::Stand) => {
            let mut c = model.com(&upright)?;
            c.z -= params.delta_z;
            check(c.z)?;
            model.solve_posture(&upright, &task(c, &feet))?
        }
    };
    let feet = feet_at(&q0)?;
    let c0 = model.com(&q0)?;
    let mut c1 = c0;
    c1.z += if direction == Direction::Sit { -params.delta_z } else { params.delta_z };
    check(c1.z)?;
    let n = (params.duration / params.dt).round().max(1.0) as usize;
    let mut refs = Vec::with_capacity(n + 1);
    let mut q = q0.clone();
    for k in 0..=n {
        let com = c0 + (c1 - c0) * blend(k as f64 / n as f64);
        if k > 0 {
            q = model.solve_posture(&q, &task(com, &feet))?;
        }
        refs.push(NodeRef { q: q.clone(), com, stance: vec![0, 1], placements: feet, swing: None, phase: 0 });
    }
    let name = if direction == Direction::Sit { "sit" } else { "stand" };
    let phase = MotionPhase {
        name: name.into(),
        duration: n as f64 * params.dt,
        stance: vec![0, 1],
        contacts: model.contacts(&[0, 1], &feet)?,
        com_ref: Some(c1),
        swing_foot_ref: None,
        posture_ref: model.independent_of(&refs[n].q),
    };
    let recipe = MotionRecipe { phases: vec![phase], dt: params.dt, weights: params.weights };
    assemble(model, recipe, q0, refs)
}

/// Static walk: per step a double-support CoM shift over the next stance foot, then a
/// single-support swing that moves the other foot `stride_length` forward.
pub fn build_static_walk(model: &MotionModel, params: &RecipeDocument) -> Result<MotionPlan> {
    if params.steps < 2 || !params.steps.is_multiple_of(2) {
        return Err(Error::InvalidArgument("walking needs an even step count of at least 2".into()));
    }
    let leg = model.com(&model.standing)?.z;
    if params.stride_length >= leg {
        return Err(Error::InfeasibleRecipe(format!("stride {} m exceeds the leg reach of {leg:.3} m", params.stride_length)));
    }
    let q0 = model.standing.clone();
    let mut placements = [model.sole(&q0, 0)?, model.sole(&q0, 1)?];
    let mid_y = 0.5 * (placements[0].translation.y + placements[1].translation.y);
    let lift = if params.stride_length > 0.0 { params.clearance } else { 0.0 };
    let dt = params.dt;
    let mut refs: Vec<NodeRef> = Vec::new();
    let mut phases = Vec::new();
    let mut q = q0.clone();
    let mut com = model.com(&q0)?;
    refs.push(NodeRef { q: q.clone(), com, stance: vec![0, 1], placements, swing: None, phase: 0 });

    let solve = |q: &DVector<f64>,
                 stance: &[usize],
                 placements: &[FramePlacement; 2],
                 swing: &Option<(usize, FramePlacement)>,
                 com: Vector3<f64>| {
        let mut feet: Vec<(FrameId, FramePlacement)> = stance.iter().map(|&f| (model.feet[f].frame, placements[f])).collect();
        if let Some((f, x)) = swing {
            feet.push((model.feet[*f].frame, *x));
        }
        model.solve_posture(q, &PostureTask { feet, com, com_axes: 2 })
    };
    for step in 0..params.steps {
        // right foot swings first, so the CoM goes over the left foot first
        let (stance, swing) = if step % 2 == 0 { (0, 1) } else { (1, 0) };
        let foot = &placements[stance].translation;
        let inset = (model.feet[stance].half_extents.y - params.margin - COM_INSET_CLEARANCE).max(0.0);
        let target = Vector3::new(foot.x, foot.y - (foot.y - mid_y).signum() * inset, 0.0);

        let pi = phases.len();
        let n = (params.support_duration / dt).round().max(1.0) as usize;
        let from = com;
        for k in 1..=n {
            let s = blend(k as f64 / n as f64);
            let c = Vector3::new(from.x + (target.x - from.x) * s, from.y + (target.y - from.y) * s, 0.0);
            q = solve(&q, &[0, 1], &placements, &None, c)?;
            com = model.com(&q)?;
            refs.push(NodeRef { q: q.clone(), com, stance: vec![0, 1], placements, swing: None, phase: pi });
        }
        phases.push(MotionPhase {
            name: format!("support_{}", model.feet[stance].name),
            duration: n as f64 * dt,
            stance: vec![0, 1],
            contacts: model.contacts(&[0, 1], &placements)?,
            com_ref: Some(com),
            swing_foot_ref: None,
            posture_ref: model.independent_of(&q),
        });

        let pi = phases.len();
        let n = (params.swing_duration / dt).round().max(1.0) as usize;
        let lift_off = placements[swing];
        let mut landing = lift_off;
        landing.translation.x += params.stride_length;
        let held = com;
        for k in 1..=n {
            let s = k as f64 / n as f64;
            let mut x = lift_off;
            x.translation.x += params.stride_length * blend(s);
            x.translation.z += lift * (PI * s).sin().powi(2);
            let sw = Some((swing, x));
            q = solve(&q, &[stance], &placements, &sw, held)?;
            com = model.com(&q)?;
            refs.push(NodeRef { q: q.clone(), com, stance: vec![stance], placements, swing: sw, phase: pi });
        }
        placements[swing] = landing;
        phases.push(MotionPhase {
            name: format!("swing_{}", model.feet[swing].name),
            duration: n as f64 * dt,
            stance: vec![stance],
            contacts: model.contacts(&[stance], &placements)?,
            com_ref: Some(com),
            swing_foot_ref: Some((model.feet[swing].frame, landing)),
            posture_ref: model.independent_of(&q),
        });
    }
    let recipe = MotionRecipe { phases, dt, weights: params.weights };
    assemble(model, recipe, q0, refs)
}

/// Running node `k` drives the state from `refs[k]` to `refs[k + 1]` and carries the
/// contacts and swing target of `refs[k + 1]`.
fn assemble(model: &MotionModel, recipe: MotionRecipe, q0: DVector<f64>, refs: Vec<NodeRef>) -> Result<MotionPlan> {
    let t = &model.tree;
    let space = StateSpace::Multibody(t.clone());
    let nv = t.nv();
    let m = model.m();
    let w = recipe.weights;
    let actuated: Vec<usize> = (6..nv).collect();
    let state = |q: &DVector<f64>, v: &DVector<f64>| StateSpace::join(q, v);
    let zero_v = DVector::zeros(nv);
    let mut running = Vec::with_capacity(refs.len() - 1);
    let mut xs = Vec::with_capacity(refs.len());
    let mut us = Vec::with_capacity(refs.len() - 1);
    let mut node_phase = Vec::with_capacity(refs.len() - 1);
    let mut support = Vec::with_capacity(refs.len());
    xs.push(state(&q0, &zero_v));
    support.push(refs[0].stance.clone());
    for k in 0..refs.len() - 1 {
        let r = &refs[k + 1];
        let contacts = model.contacts(&r.stance, &r.placements)?;
        // hold the reference of this node's start so the guess is a quasi-static rollout
        let (tau, _) = model.quasi_static_torque(&refs[k].q, &contacts)?;
        let mut terms = vec![
            CostTerm::new("com", CostKind::ComTarget { reference: r.com }, w.com),
            CostTerm::new("torque", CostKind::TorqueTracking { reference: tau.clone() }, w.torque),
            CostTerm::new("posture", CostKind::PostureReg { reference: state(&r.q, &zero_v) }, w.posture),
        ];
        if let Some((f, x)) = &r.swing {
            terms.push(CostTerm::new("foot", CostKind::FrameTracking { frame: model.feet[*f].frame, reference: *x }, w.foot));
        }
        let dynamics = Dynamics::Multibody { contacts, actuated: actuated.clone() };
        running.push(ActionModel::new(
            space.clone(),
            dynamics,
            CostModel::new(terms, false)?,
            recipe.dt,
            -&model.effort,
            model.effort.clone(),
        )?);
        let v = t.difference(&refs[k].q, &r.q)? / recipe.dt;
        xs.push(state(&r.q, &v));
        us.push(tau);
        node_phase.push(r.phase);
        support.push(r.stance.clone());
    }
    let last = refs.last().expect("at least one node");
    let mut terms = vec![
        CostTerm::new("com", CostKind::ComTarget { reference: last.com }, w.com),
        CostTerm::new("posture", CostKind::PostureReg { reference: state(&last.q, &zero_v) }, w.posture),
    ];
    if let Some((_, x)) = recipe.phases.last().and_then(|p| p.swing_foot_ref.as_ref()) {
        let f = recipe.phases.last().and_then(|p| p.swing_foot_ref.as_ref()).map(|(f, _)| *f).expect("swing phase");
        terms.push(CostTerm::new("foot", CostKind::FrameTracking { frame: f, reference: *x }, w.foot));
    }
    // the final node comes to rest
    if let Some(v) = xs.last_mut() {
        v.rows_mut(t.nq(), nv).fill(0.0);
    }
    let terminal = ActionModel::terminal(space, CostModel::new(terms, true)?)?;
    debug_assert_eq!(us.first().map(|u| u.len()), Some(m));
    let problem = ShootingProblem::new(state(&q0, &zero_v), running, terminal)?;
    Ok(MotionPlan { recipe, problem, xs_guess: xs, us_guess: us, node_phase, support })
}

/// Default solver settings with the recipe's overrides applied.
pub fn solver_settings(params: &RecipeDocument) -> SolverSettings {
    let mut s = SolverSettings::default();
    if let Some(v) = params.solver.max_iters {
        s.max_iters = v;
    }
    if let Some(v) = params.solver.convergence_tol {
        s.convergence_tol = v;
    }
    if let Some(v) = params.solver.gap_tolerance {
        s.gap_tolerance = v;
    }
    s
}

/// Solves the plan starting from its reference guess.
pub fn solve_plan(plan: &MotionPlan, settings: &SolverSettings) -> Result<SolveResult> {
    solve(&plan.problem, settings, Some((plan.xs_guess.clone(), plan.us_guess.clone())))
}

/// Solved states and controls as an independent-joint trajectory. Contact wrenches are
/// stacked left then right, zero for a foot in the air; the last knot repeats the last
/// control.
pub fn solution_trajectory(model: &MotionModel, plan: &MotionPlan, sol: &SolveResult) -> Result<Trajectory> {
    let nq = model.tree.nq();
    let nv = model.tree.nv();
    let m = model.m();
    let n = plan.problem.horizon();
    let mut knots = Vec::with_capacity(n + 1);
    let mut last_forces = DVector::zeros(12);
    for k in 0..=n {
        let x = &sol.xs[k];
        let u = &sol.us[k.min(n - 1)];
        if k < n {
            let node = &plan.problem.running[k];
            let acc = node.acceleration(x, u)?;
            let mut f = DVector::zeros(12);
            for (i, &foot) in plan.support[k + 1].iter().enumerate() {
                f.rows_mut(6 * foot, 6).copy_from(&acc.lambdas.rows(6 * i, 6));
            }
            last_forces = f;
        }
        knots.push(Knot {
            t: k as f64 * plan.recipe.dt,
            y: x.rows(7, m).into_owned(),
            ydot: x.rows(nq + 6, m).into_owned(),
            tau_y: u.clone(),
            contact_forces: last_forces.clone(),
            base_q: x.rows(0, 7).into_owned(),
            base_v: x.rows(nq, 6).into_owned(),
        });
        debug_assert_eq!(x.len(), nq + nv);
    }
    Trajectory::new(plan.recipe.dt, knots)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationLimits {
    /// Required distance of the CoM ground projection inside the stance foot.
    pub margin: f64,
    pub vmax: f64,
    /// Stance feet per knot; knots with exactly one stance foot get the support check.
    pub support: Vec<Vec<usize>>,
}

/// ROM, actuator limits, single-support balance, CoM speed and stance-foot drift.
pub fn validate_trajectory(
    model: &MotionModel,
    traj: &Trajectory,
    actuators: Option<&ActuatorTrajectory>,
    limits: &ValidationLimits,
) -> ValidationReport {
    let mut r = ValidationReport::new();
    if let Err(e) = traj.validate() {
        r.violation("trajectory", e.to_string(), f64::NAN);
        return r.finish();
    }
    if traj.m() != model.m() {
        r.violation("trajectory", format!("trajectory has {} independent coordinates, the model {}", traj.m(), model.m()), traj.m() as f64);
        return r.finish();
    }
    for (i, c) in model.independent.iter().enumerate() {
        let worst =
            traj.knots.iter().enumerate().map(|(k, kn)| (k, kn.y[i], c.limits.violation(kn.y[i]))).max_by(|a, b| a.2.total_cmp(&b.2));
        if let Some((k, y, v)) = worst {
            if v > 0.0 {
                r.violation(format!("joint/{}", c.name), format!("outside ROM [{}, {}] at knot {k}", c.limits.lower, c.limits.upper), y);
            }
        }
    }
    if let Some(a) = actuators {
        let mut worst: std::collections::BTreeMap<(String, &'static str), (usize, f64, f64)> = Default::default();
        for f in &a.flags {
            let kind = match f.kind {
                LimitKind::Position => "position",
                LimitKind::Velocity => "velocity",
                LimitKind::Effort => "effort",
            };
            let e = worst.entry((f.actuator.clone(), kind)).or_insert((f.knot, f.value, f.excess));
            if f.excess > e.2 {
                *e = (f.knot, f.value, f.excess);
            }
        }
        for ((name, kind), (k, value, excess)) in worst {
            r.violation(format!("actuator/{name}"), format!("{kind} exceeds its limit by {excess:.4} at knot {k}"), value);
        }
        for (i, name) in a.names.iter().enumerate() {
            let peak = a.knots.iter().map(|k| k.effort[i].abs()).fold(0.0, f64::max);
            r.info(format!("actuator/{name}"), "peak effort", peak);
        }
    }
    let has_base = traj.knots.iter().all(|k| k.base_q.len() == 7);
    if !has_base {
        return r.finish();
    }
    let states: Vec<DVector<f64>> = traj.knots.iter().map(|k| model.configuration(&k.base_q, &k.y)).collect();
    let coms: Vec<Option<Vector3<f64>>> = states.iter().map(|q| model.com(q).ok()).collect();
    let mut min_margin = f64::INFINITY;
    for (k, q) in states.iter().enumerate() {
        let Some(stance) = limits.support.get(k) else { continue };
        if stance.len() != 1 {
            continue;
        }
        let (Some(c), Ok(x)) = (coms[k], model.sole(q, stance[0])) else { continue };
        let local = x.rotation.transpose() * (c - x.translation);
        let h = model.feet[stance[0]].half_extents;
        let margin = (h.x - local.x.abs()).min(h.y - local.y.abs());
        min_margin = min_margin.min(margin);
        if margin < limits.margin {
            r.violation(
                format!("knot/{k:05}"),
                format!("CoM is {margin:.4} m inside the `{}` support rectangle", model.feet[stance[0]].name),
                margin,
            );
        }
    }
    if min_margin.is_finite() {
        r.info("support", "smallest single-support CoM margin", min_margin);
    }
    let speed = coms.windows(2).filter_map(|w| Some((w[1]? - w[0]?).norm() / traj.dt)).fold(0.0, f64::max);
    r.info("com", "peak CoM speed", speed);
    if speed > limits.vmax {
        r.violation("com", format!("CoM speed exceeds {} m/s", limits.vmax), speed);
    }
    // stance feet should not move: largest drift from where each stance interval began
    for f in 0..2 {
        let mut anchor: Option<Vector3<f64>> = None;
        let mut drift: f64 = 0.0;
        for (k, q) in states.iter().enumerate() {
            let on = limits.support.get(k).is_none_or(|s| s.contains(&f));
            match (on, model.sole(q, f)) {
                (true, Ok(x)) => {
                    let a = *anchor.get_or_insert(x.translation);
                    drift = drift.max((x.translation - a).norm());
                }
                _ => anchor = None,
            }
        }
        r.info(format!("contact/{}", model.feet[f].name), "largest stance-foot drift", drift);
    }
    r.finish()
}
