use std::collections::HashMap;

use nalgebra::{DVector, Matrix3, Rotation3, Vector2, Vector3};

use super::{
    BodyDoc, FrameDoc, JointDoc, JointKindDoc, ModelDocument, ModelError, Origin, PointDoc, ResolverDoc, Severity, StepDoc,
    SubmechanismDoc, SubmechanismType, ValidationReport, WORLD,
};
use crate::error::{Error, Result};
use crate::loopclosure::{
    ActuationMap, AnalyticalPlan, AnalyticalStep, BodyPoint, CutJoint, ExplicitClosureMap, ImplicitConstraint, ResolverKind,
    SubmechanismResolver,
};
use crate::spatial::{FramePlacement, RigidBodyInertia};
use crate::treedyn::{Interval, JointKind, JointModel, RigidBodyTree};

/// One scalar coordinate of a joint with its limits.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateInfo {
    /// Joint name, suffixed with `[k]` for multi-coordinate joints.
    pub name: String,
    pub joint: String,
    pub limits: Interval,
    pub velocity_limit: f64,
    pub effort_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Foot {
    pub frame: String,
    pub half_extents: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSummary {
    pub name: String,
    pub kind: SubmechanismType,
    pub resolver: &'static str,
    pub tree_coordinates: usize,
    pub independent: usize,
    pub actuated: usize,
    pub constraints: usize,
    pub idle: usize,
}

/// Everything constructed from a model document.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub name: String,
    /// Full spanning tree (cut joints removed), fixed base.
    pub tree: RigidBodyTree,
    pub closure: ExplicitClosureMap,
    pub actuation: ActuationMap,
    /// Reduced serial model over the independent coordinates, if declared.
    pub abstraction: Option<RigidBodyTree>,
    /// Independent coordinates in `y` order.
    pub independent: Vec<CoordinateInfo>,
    /// Actuated coordinates in selection order.
    pub actuators: Vec<CoordinateInfo>,
    pub feet: Vec<Foot>,
    pub blocks: Vec<BlockSummary>,
}

impl BuiltModel {
    pub fn n(&self) -> usize {
        self.closure.n()
    }

    pub fn m(&self) -> usize {
        self.closure.m()
    }

    pub fn p(&self) -> usize {
        self.actuation.p()
    }

    pub fn n_c(&self) -> usize {
        self.closure.n_c()
    }

    /// Tree used for motion generation: the abstraction when present.
    pub fn motion_tree(&self) -> &RigidBodyTree {
        self.abstraction.as_ref().unwrap_or(&self.tree)
    }

    pub fn foot(&self, frame: &str) -> Option<&Foot> {
        self.feet.iter().find(|f| f.frame == frame)
    }

    /// Numerical self-checks at the reference posture plus bookkeeping lines.
    pub fn check(&self) -> ValidationReport {
        let mut r = ValidationReport::new();
        r.info("model", format!("n={} m={} p={} n_c={}", self.n(), self.m(), self.p(), self.n_c()), self.n() as f64);
        for b in &self.blocks {
            r.info(
                format!("submechanism/{}", b.name),
                format!(
                    "{} {} n={} m={} p={} n_c={} idle={}",
                    b.kind.tag(),
                    b.resolver,
                    b.tree_coordinates,
                    b.independent,
                    b.actuated,
                    b.constraints,
                    b.idle
                ),
                b.constraints as f64,
            );
        }
        let mass = self.tree.total_mass();
        if !(mass > 0.0) {
            r.violation("model/mass", "total mass must be positive", mass);
        }
        if let Some(a) = &self.abstraction {
            let diff = (a.total_mass() - mass).abs();
            if diff > 1e-9 * mass.max(1.0) {
                r.push(Severity::Warning, "abstraction/mass", "abstraction mass differs from the full model", diff);
            }
        }
        let q = self.closure.reference();
        let ydot = DVector::from_element(self.m(), 1.0);
        match self.closure.check_identities(&q, &ydot) {
            Ok(checks) => {
                for c in checks {
                    let loc = format!("submechanism/{}", c.submechanism);
                    if c.residual > 1e-8 {
                        r.violation(loc.clone(), "reference posture violates closure", c.residual);
                    }
                    if c.kg > 1e-6 {
                        r.violation(loc.clone(), "K·G identity fails at the reference", c.kg);
                    }
                    if c.kg_drift > 1e-6 {
                        r.violation(loc, "K·g = k identity fails at the reference", c.kg_drift);
                    }
                }
            }
            Err(e) => r.violation("closure", e.to_string(), f64::NAN),
        }
        if self.p() == self.m() {
            let forced = self.closure.g_matrix_at(&q).and_then(|g| self.actuation.forces(&g, &DVector::from_element(self.m(), 1.0)));
            if let Err(e) = forced {
                r.violation("actuation", e.to_string(), f64::NAN);
            }
        }
        r.finish()
    }
}

pub(crate) fn placement(o: &Origin) -> FramePlacement {
    let rot = Rotation3::from_euler_angles(o.rpy[0], o.rpy[1], o.rpy[2]);
    FramePlacement::new(rot.into_inner(), Vector3::from(o.xyz))
}

fn inertia(b: &BodyDoc) -> RigidBodyInertia {
    let [ixx, iyy, izz, ixy, ixz, iyz] = b.inertia;
    let i = Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz);
    RigidBodyInertia::new(b.mass, Vector3::from(b.com), i)
}

fn joint_model(j: &JointDoc) -> JointModel {
    let frame = placement(&j.origin);
    let axis = Vector3::from(j.axis).normalize();
    let model = match j.kind {
        JointKindDoc::Fixed => JointModel::fixed(frame),
        JointKindDoc::Revolute => JointModel::revolute(axis, frame),
        JointKindDoc::Prismatic => JointModel::prismatic(axis, frame),
        JointKindDoc::Universal => JointModel::universal(axis, Vector3::from(j.axis2.unwrap_or([0.0, 1.0, 0.0])), frame),
        JointKindDoc::Spherical => JointModel::spherical(frame),
        JointKindDoc::Floating => JointModel::floating(frame),
    };
    let limits =
        if j.limits.is_empty() { model.position_limits.clone() } else { j.limits.iter().map(|l| Interval::new(l[0], l[1])).collect() };
    model.with_limits(limits, j.velocity_limit.unwrap_or(f64::INFINITY), j.effort_limit.unwrap_or(f64::INFINITY))
}

fn coordinate_infos(j: &JointDoc, model: &JointModel) -> Vec<CoordinateInfo> {
    let n = j.kind.coordinates();
    (0..n)
        .map(|k| CoordinateInfo {
            name: if n == 1 { j.name.clone() } else { format!("{}[{k}]", j.name) },
            joint: j.name.clone(),
            limits: model.position_limits.get(k).copied().unwrap_or_else(Interval::unbounded),
            velocity_limit: model.velocity_limit,
            effort_limit: model.effort_limit,
        })
        .collect()
}

fn model_err(e: ModelError) -> Error {
    Error::Model(e)
}

/// Builds a tree from bodies and (non-cut) joints; bodies without a parent joint are
/// welded to the world. Children follow joint order once their parent is placed.
fn build_tree(
    gravity: [f64; 3],
    bodies: &[BodyDoc],
    joints: &[JointDoc],
    frames: &[FrameDoc],
) -> Result<(RigidBodyTree, HashMap<String, usize>)> {
    let mut t = RigidBodyTree::new();
    t.gravity = Vector3::from(gravity);
    let tree_joints: Vec<&JointDoc> = joints.iter().filter(|j| j.cut.is_none()).collect();
    let has_parent: HashMap<&str, &JointDoc> = tree_joints.iter().map(|j| (j.child.as_str(), *j)).collect();
    let body_doc: HashMap<&str, &BodyDoc> = bodies.iter().map(|b| (b.name.as_str(), b)).collect();
    let mut index: HashMap<String, usize> = HashMap::new();
    for b in bodies.iter().filter(|b| !has_parent.contains_key(b.name.as_str())) {
        let i = t.add_body(b.name.clone(), None, format!("{}_weld", b.name), JointModel::fixed(FramePlacement::identity()), inertia(b))?;
        index.insert(b.name.clone(), i);
    }
    let mut placed = vec![false; tree_joints.len()];
    loop {
        let mut progress = false;
        for (k, j) in tree_joints.iter().enumerate() {
            if placed[k] {
                continue;
            }
            let parent = if j.parent == WORLD {
                None
            } else if let Some(&p) = index.get(&j.parent) {
                Some(p)
            } else {
                continue;
            };
            let i = t.add_body(j.child.clone(), parent, j.name.clone(), joint_model(j), inertia(body_doc[j.child.as_str()]))?;
            index.insert(j.child.clone(), i);
            placed[k] = true;
            progress = true;
        }
        if !progress {
            break;
        }
    }
    if let Some(k) = placed.iter().position(|p| !p) {
        return Err(model_err(ModelError::NonTree(format!("joint `{}` is not reachable from the base", tree_joints[k].name))));
    }
    for f in frames {
        t.add_frame(f.name.clone(), index[&f.body], placement(&f.origin))?;
    }
    Ok((t, index))
}

struct LocalBlock {
    tree: RigidBodyTree,
    /// Global body index → local body index.
    local: HashMap<usize, usize>,
    /// Local body index of the anchor standing in for the base body.
    anchor: Option<usize>,
}

fn local_block(
    path: &str,
    s: &SubmechanismDoc,
    doc: &ModelDocument,
    global: &RigidBodyTree,
    index: &HashMap<String, usize>,
    needs_anchor: bool,
) -> Result<LocalBlock> {
    let jdoc: HashMap<&str, &JointDoc> = doc.joints.iter().map(|j| (j.name.as_str(), j)).collect();
    let mut members: Vec<usize> = s.joints.iter().map(|n| index[&jdoc[n.as_str()].child]).collect();
    members.sort_unstable();
    let mut base: Option<Option<usize>> = None;
    for &b in &members {
        let parent = global.bodies()[b].parent;
        if parent.is_some_and(|p| members.contains(&p)) {
            continue;
        }
        match base {
            None => base = Some(parent),
            Some(prev) if prev == parent => {}
            Some(_) => return Err(model_err(ModelError::schema(path, "member joints hang from more than one base body"))),
        }
    }
    let mut tree = RigidBodyTree::new();
    let mut local = HashMap::new();
    let mut anchor = None;
    if needs_anchor {
        let a =
            tree.add_body("base_anchor", None, "base_anchor", JointModel::fixed(FramePlacement::identity()), RigidBodyInertia::zero())?;
        anchor = Some(a);
    }
    for &b in &members {
        let body = &global.bodies()[b];
        let parent = match body.parent {
            Some(p) if members.contains(&p) => Some(local[&p]),
            _ => anchor,
        };
        let i = tree.add_body(body.name.clone(), parent, body.joint_name.clone(), body.joint.clone(), body.inertia)?;
        local.insert(b, i);
    }
    let base_index = base.flatten();
    if let (Some(a), Some(b)) = (anchor, base_index) {
        local.insert(b, a);
    }
    Ok(LocalBlock { tree, local, anchor })
}

fn local_point(path: &str, block: &LocalBlock, index: &HashMap<String, usize>, p: &PointDoc) -> Result<BodyPoint> {
    let g = index.get(&p.body).ok_or_else(|| model_err(ModelError::schema(path, format!("unknown body `{}`", p.body))))?;
    let l =
        block.local.get(g).ok_or_else(|| model_err(ModelError::schema(path, format!("body `{}` is outside the submechanism", p.body))))?;
    Ok(BodyPoint::new(*l, Vector3::from(p.point)))
}

fn build_resolver(
    si: usize,
    s: &SubmechanismDoc,
    doc: &ModelDocument,
    global: &RigidBodyTree,
    index: &HashMap<String, usize>,
    y_of_q: &HashMap<usize, usize>,
) -> Result<(SubmechanismResolver, BlockSummary)> {
    let path = format!("$.submechanisms[{si}]");
    let jdoc: HashMap<&str, &JointDoc> = doc.joints.iter().map(|j| (j.name.as_str(), j)).collect();
    let schema = |msg: String| model_err(ModelError::schema(path.clone(), msg));

    // Cut endpoints on the base body need an anchor body in the local tree.
    let members: Vec<usize> = s.joints.iter().map(|n| index[&jdoc[n.as_str()].child]).collect();
    let needs_anchor = s.cuts.iter().any(|c| {
        let j = jdoc[c.as_str()];
        [&j.parent, &j.child].iter().any(|b| *b == WORLD || !members.contains(&index[b.as_str()]))
    });
    let block = local_block(&path, s, doc, global, index, needs_anchor)?;

    let mut cuts = Vec::new();
    for c in &s.cuts {
        let j = jdoc[c.as_str()];
        let cd = j.cut.as_ref().expect("validated cut");
        let parent = local_point(&path, &block, index, &PointDoc { body: j.parent.clone(), point: j.origin.xyz })?;
        let child = local_point(&path, &block, index, &PointDoc { body: j.child.clone(), point: cd.child_point })?;
        cuts.push(match cd.normal {
            Some(n) => CutJoint::planar(j.name.clone(), parent, child, Vector3::from(n)),
            None => CutJoint::point(j.name.clone(), parent, child),
        });
    }

    let lt = &block.tree;
    let mut tree_joints = Vec::new();
    let mut local_independent = Vec::new();
    let mut independent_joints = Vec::new();
    let mut reference = DVector::zeros(lt.nq());
    for b in lt.bodies() {
        if block.anchor.is_some_and(|a| lt.body_index(&b.name) == Some(a)) {
            continue;
        }
        let gb = &global.bodies()[index[&b.name]];
        let jd = jdoc[gb.joint_name.as_str()];
        for k in 0..b.joint.nq() {
            tree_joints.push(gb.q_offset + k);
            if jd.independent {
                local_independent.push(b.q_offset + k);
                independent_joints.push(y_of_q[&(gb.q_offset + k)]);
            }
        }
        if let Some(vals) = s.reference.get(&jd.name) {
            for (k, v) in vals.iter().enumerate() {
                reference[b.q_offset + k] = *v;
            }
        }
    }
    let implicit = ImplicitConstraint::new(lt.clone(), cuts).map_err(|e| schema(e.to_string()))?;

    let u_body = |name: &str, want: JointKind| -> Result<usize> {
        let j = jdoc.get(name).ok_or_else(|| schema(format!("unknown joint `{name}` in resolver step")))?;
        let g = index[&j.child];
        let l = *block.local.get(&g).ok_or_else(|| schema(format!("joint `{name}` is outside the submechanism")))?;
        if lt.bodies()[l].joint.kind != want {
            return Err(schema(format!("joint `{name}` has the wrong kind for its resolver step")));
        }
        Ok(l)
    };
    let coord = |name: &Option<String>| -> Result<Option<usize>> {
        match name {
            None => Ok(None),
            Some(n) => {
                let j = jdoc.get(n.as_str()).ok_or_else(|| schema(format!("unknown joint `{n}` in resolver step")))?;
                let l = *block.local.get(&index[&j.child]).ok_or_else(|| schema(format!("joint `{n}` is outside the submechanism")))?;
                Ok(Some(lt.bodies()[l].q_offset))
            }
        }
    };
    let kind = match &s.resolver {
        ResolverDoc::Numerical => ResolverKind::Numerical,
        ResolverDoc::Analytical { steps } => {
            let mut out = Vec::with_capacity(steps.len());
            for st in steps {
                out.push(match st {
                    StepDoc::LegAim { universal, target, length_joint, rest_length } => AnalyticalStep::LegAim {
                        u_body: u_body(universal, JointKind::Universal)?,
                        target: local_point(&path, &block, index, target)?,
                        length_coord: coord(length_joint)?,
                        rest_length: *rest_length,
                    },
                    StepDoc::CrankDistance { revolute, moving, fixed, base_distance, plus_joint } => AnalyticalStep::CrankDistance {
                        joint_body: u_body(revolute, JointKind::Revolute)?,
                        moving: local_point(&path, &block, index, moving)?,
                        fixed: local_point(&path, &block, index, fixed)?,
                        base_distance: *base_distance,
                        plus_coord: coord(plus_joint)?,
                        branch: 1.0,
                    },
                });
            }
            let mut plan = AnalyticalPlan::new(out);
            plan.calibrate(&implicit, &reference).map_err(|e| schema(e.to_string()))?;
            ResolverKind::Analytical(plan)
        }
    };
    let resolver_tag = match kind {
        ResolverKind::Analytical(_) => "analytical",
        ResolverKind::Numerical => "numerical",
    };
    let actuated = s.joints.iter().filter(|n| jdoc[n.as_str()].actuated).map(|n| jdoc[n.as_str()].kind.coordinates()).sum();
    let r = SubmechanismResolver::new(s.name.clone(), kind, implicit, tree_joints, local_independent, independent_joints, reference)
        .map_err(|e| schema(e.to_string()))?;
    let summary = BlockSummary {
        name: s.name.clone(),
        kind: s.kind,
        resolver: resolver_tag,
        tree_coordinates: r.tree_joints().len(),
        independent: r.independent_joints().len(),
        actuated,
        constraints: r.constraint_rows(),
        idle: r.idle().len(),
    };
    Ok((r, summary))
}

/// Constructs trees, closure and actuation maps from a validated document.
pub fn build_model(doc: &ModelDocument) -> Result<BuiltModel> {
    super::validate_document(doc)?;
    let (tree, index) = build_tree(doc.gravity, &doc.bodies, &doc.joints, &doc.frames)?;
    let jdoc: HashMap<&str, &JointDoc> = doc.joints.iter().map(|j| (j.name.as_str(), j)).collect();

    let mut independent = Vec::new();
    let mut actuators = Vec::new();
    let mut selection = Vec::new();
    let mut y_of_q = HashMap::new();
    let mut y_joint_dims = Vec::new();
    for b in tree.bodies() {
        let Some(j) = jdoc.get(b.joint_name.as_str()) else { continue };
        if j.independent {
            for k in 0..b.joint.nq() {
                y_of_q.insert(b.q_offset + k, independent.len() + k);
            }
            independent.extend(coordinate_infos(j, &b.joint));
            y_joint_dims.push((j.name.clone(), b.joint.nq()));
        }
        if j.actuated {
            selection.extend((0..b.joint.nq()).map(|k| b.q_offset + k));
            actuators.extend(coordinate_infos(j, &b.joint));
        }
    }

    let mut resolvers = Vec::new();
    let mut blocks = Vec::new();
    let mut owned = vec![false; tree.nq()];
    for (si, s) in doc.submechanisms.iter().enumerate() {
        let (r, summary) = build_resolver(si, s, doc, &tree, &index, &y_of_q)?;
        for &i in r.tree_joints() {
            owned[i] = true;
        }
        resolvers.push(r);
        blocks.push(summary);
    }
    let mut identity: Vec<(usize, usize)> = y_of_q.iter().filter(|(q, _)| !owned[**q]).map(|(q, y)| (*q, *y)).collect();
    identity.sort_unstable();
    let closure = ExplicitClosureMap::new(resolvers, identity, tree.nq(), independent.len())?;
    let actuation = ActuationMap::new(selection, tree.nq())?;

    let abstraction = match &doc.abstraction {
        None => None,
        Some(a) => {
            let (t, _) = build_tree(doc.gravity, &a.bodies, &a.joints, &a.frames)?;
            let ajoint: HashMap<&str, &JointDoc> = a.joints.iter().map(|j| (j.name.as_str(), j)).collect();
            let mut dims = Vec::new();
            for (bi, b) in t.bodies().iter().enumerate() {
                match b.joint.kind {
                    JointKind::Fixed => {}
                    JointKind::FloatingBase => {
                        if bi != 0 || b.parent.is_some() {
                            return Err(model_err(ModelError::schema(
                                "$.abstraction.joints",
                                "a floating joint must attach the first body to the world",
                            )));
                        }
                    }
                    _ => {
                        if !ajoint.contains_key(b.joint_name.as_str()) {
                            continue;
                        }
                        dims.push((b.joint_name.clone(), b.joint.nq()));
                    }
                }
            }
            if dims != y_joint_dims {
                return Err(model_err(ModelError::schema(
                    "$.abstraction.joints",
                    "abstraction joints must match the independent joints by name, order and dimension",
                )));
            }
            Some(t)
        }
    };
    let motion_tree = abstraction.as_ref().unwrap_or(&tree);
    let mut feet = Vec::new();
    for f in &doc.feet {
        motion_tree.frame_id(&f.frame)?;
        feet.push(Foot { frame: f.frame.clone(), half_extents: Vector2::from(f.half_extents) });
    }
    Ok(BuiltModel { name: doc.name.clone(), tree, closure, actuation, abstraction, independent, actuators, feet, blocks })
}
