//! Model documents: parsing, validation and construction of mechanisms.
//!
//! A document describes the full spanning tree (bodies and joints), the cut joints
//! that close its loops, the submechanism blocks that resolve them, foot contact
//! rectangles and, optionally, the reduced serial model used for motion generation.
//! Units are SI and angles radians throughout.

mod build;
mod recipe;
mod report;
mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use build::{build_model, BlockSummary, BuiltModel, CoordinateInfo, Foot};
pub use recipe::{parse_recipe, MotionKind, RecipeDocument, RecipeWeights, SolverOverrides};
pub use report::{Severity, ValidationEntry, ValidationReport};
pub use synthetic::{build_synthetic_recupera, synthetic_recupera_document, SYNTHETIC_MODEL_NAME};

pub const SCHEMA_VERSION: &str = "1.0";

/// Reserved parent name for joints attached to the inertial frame.
pub const WORLD: &str = "world";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },

    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("joint graph is not a tree: {0}")]
    NonTree(String),

    #[error("duplicate name `{name}` in {section}")]
    DuplicateName { section: String, name: String },
}

impl ModelError {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Schema { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub schema_version: String,
    pub name: String,
    pub gravity: [f64; 3],
    pub bodies: Vec<BodyDoc>,
    pub joints: Vec<JointDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<FrameDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub submechanisms: Vec<SubmechanismDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feet: Vec<FootDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstraction: Option<AbstractionDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyDoc {
    pub name: String,
    pub mass: f64,
    pub com: [f64; 3],
    /// `[ixx, iyy, izz, ixy, ixz, iyz]` about the centre of mass.
    pub inertia: [f64; 6],
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Origin {
    #[serde(default)]
    pub xyz: [f64; 3],
    /// Roll, pitch, yaw applied as `Rz(yaw)·Ry(pitch)·Rx(roll)`.
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl Origin {
    pub fn is_identity(&self) -> bool {
        self.xyz == [0.0; 3] && self.rpy == [0.0; 3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKindDoc {
    Fixed,
    Revolute,
    Prismatic,
    Universal,
    Spherical,
    Floating,
}

impl JointKindDoc {
    pub fn coordinates(self) -> usize {
        match self {
            JointKindDoc::Fixed => 0,
            JointKindDoc::Revolute | JointKindDoc::Prismatic => 1,
            JointKindDoc::Universal => 2,
            JointKindDoc::Spherical => 3,
            JointKindDoc::Floating => 6,
        }
    }
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn is_default_axis(a: &[f64; 3]) -> bool {
    *a == default_axis()
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDoc {
    pub name: String,
    pub kind: JointKindDoc,
    /// Parent body name, or `world`.
    pub parent: String,
    pub child: String,
    #[serde(default, skip_serializing_if = "Origin::is_identity")]
    pub origin: Origin,
    #[serde(default = "default_axis", skip_serializing_if = "is_default_axis")]
    pub axis: [f64; 3],
    /// Second axis of a universal joint (default y).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis2: Option<[f64; 3]>,
    /// One `[lower, upper]` pair per coordinate.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub limits: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_limit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effort_limit: Option<f64>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub actuated: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub independent: bool,
    /// Marks a cut joint: removed from the spanning tree and closed as a constraint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cut: Option<CutDoc>,
}

impl JointDoc {
    pub fn new(name: impl Into<String>, kind: JointKindDoc, parent: impl Into<String>, child: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind,
            parent: parent.into(),
            child: child.into(),
            origin: Origin::default(),
            axis: default_axis(),
            axis2: None,
            limits: Vec::new(),
            velocity_limit: None,
            effort_limit: None,
            actuated: false,
            independent: false,
            cut: None,
        }
    }
}

/// Cut joint data: the joint origin is the point on the parent, `child_point` the
/// matching point on the child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutDoc {
    pub child_point: [f64; 3],
    /// 3 for full point coincidence, 2 for a planar loop with `normal`.
    pub rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameDoc {
    pub name: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Origin::is_identity")]
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmechanismType {
    #[serde(rename = "stewart_6ups")]
    Stewart6Ups,
    KneeSlidercrank,
    #[serde(rename = "hip_ankle_3r2us")]
    HipAnkle3R2Us,
    Custom,
}

impl SubmechanismType {
    pub fn tag(self) -> &'static str {
        match self {
            SubmechanismType::Stewart6Ups => "stewart_6ups",
            SubmechanismType::KneeSlidercrank => "knee_slidercrank",
            SubmechanismType::HipAnkle3R2Us => "hip_ankle_3r2us",
            SubmechanismType::Custom => "custom",
        }
    }

    /// Constraint rows a block of this type must impose.
    pub fn expected_rows(self) -> Option<usize> {
        match self {
            SubmechanismType::Stewart6Ups | SubmechanismType::HipAnkle3R2Us => Some(18),
            SubmechanismType::KneeSlidercrank => Some(6),
            SubmechanismType::Custom => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmechanismDoc {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: SubmechanismType,
    /// Spanning-tree joints owned by the block.
    pub joints: Vec<String>,
    /// Cut joints closed by the block.
    pub cuts: Vec<String>,
    pub resolver: ResolverDoc,
    /// Reference posture per member joint; omitted joints sit at zero.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reference: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResolverDoc {
    Numerical,
    Analytical { steps: Vec<StepDoc> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointDoc {
    pub body: String,
    pub point: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepDoc {
    LegAim {
        universal: String,
        target: PointDoc,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        length_joint: Option<String>,
        rest_length: f64,
    },
    CrankDistance {
        revolute: String,
        moving: PointDoc,
        fixed: PointDoc,
        base_distance: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        plus_joint: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FootDoc {
    pub frame: String,
    /// Half lengths of the sole rectangle along the frame's x and y axes.
    pub half_extents: [f64; 2],
}

/// Reduced serial model whose joint coordinates are the independent coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractionDoc {
    pub bodies: Vec<BodyDoc>,
    pub joints: Vec<JointDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<FrameDoc>,
}

pub(crate) fn path_error(e: serde_path_to_error::Error<serde_json::Error>) -> ModelError {
    let path = e.path().to_string();
    let inner = e.into_inner();
    if inner.is_syntax() || inner.is_eof() {
        ModelError::Syntax { line: inner.line(), column: inner.column(), message: inner.to_string() }
    } else {
        ModelError::schema(if path.is_empty() || path == "." { "$".to_string() } else { format!("$.{path}") }, inner.to_string())
    }
}

/// Strict parse followed by structural validation.
pub fn parse_model(text: &str) -> Result<ModelDocument, ModelError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ModelDocument = serde_path_to_error::deserialize(de).map_err(path_error)?;
    validate_document(&doc)?;
    Ok(doc)
}

/// Pretty JSON; parsing the output yields an identical document.
pub fn to_json(doc: &ModelDocument) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("model documents always serialize");
    s.push('\n');
    s
}

fn check_unique<'a>(section: &str, names: impl Iterator<Item = &'a str>) -> Result<(), ModelError> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(ModelError::DuplicateName { section: section.to_string(), name: n.to_string() });
        }
    }
    Ok(())
}

fn finite(path: &str, v: &[f64]) -> Result<(), ModelError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::schema(path, "non-finite number"));
    }
    Ok(())
}

fn check_bodies(prefix: &str, bodies: &[BodyDoc]) -> Result<(), ModelError> {
    check_unique(&format!("{prefix}bodies"), bodies.iter().map(|b| b.name.as_str()))?;
    for (i, b) in bodies.iter().enumerate() {
        let path = format!("$.{prefix}bodies[{i}]");
        if b.name == WORLD || b.name.is_empty() {
            return Err(ModelError::schema(path, format!("`{}` is not a valid body name", b.name)));
        }
        finite(&path, &b.com)?;
        finite(&path, &b.inertia)?;
        if !(b.mass >= 0.0) || !b.mass.is_finite() {
            return Err(ModelError::schema(format!("{path}.mass"), "mass must be non-negative"));
        }
        if b.inertia[..3].iter().any(|&d| d < 0.0) {
            return Err(ModelError::schema(format!("{path}.inertia"), "principal moments must be non-negative"));
        }
    }
    Ok(())
}

/// Checks joint fields and that non-cut joints form a forest rooted at the world.
fn check_joints(prefix: &str, bodies: &[BodyDoc], joints: &[JointDoc]) -> Result<(), ModelError> {
    check_unique(&format!("{prefix}joints"), joints.iter().map(|j| j.name.as_str()))?;
    let body_set: HashSet<&str> = bodies.iter().map(|b| b.name.as_str()).collect();
    for (i, j) in joints.iter().enumerate() {
        let path = format!("$.{prefix}joints[{i}]");
        if j.parent != WORLD && !body_set.contains(j.parent.as_str()) {
            return Err(ModelError::schema(format!("{path}.parent"), format!("unknown body `{}`", j.parent)));
        }
        if !body_set.contains(j.child.as_str()) {
            return Err(ModelError::schema(format!("{path}.child"), format!("unknown body `{}`", j.child)));
        }
        if j.parent == j.child {
            return Err(ModelError::schema(path, "joint connects a body to itself"));
        }
        finite(&path, &j.origin.xyz)?;
        finite(&path, &j.origin.rpy)?;
        finite(&path, &j.axis)?;
        let norm = j.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
        if matches!(j.kind, JointKindDoc::Revolute | JointKindDoc::Prismatic | JointKindDoc::Universal) && norm < 1e-9 {
            return Err(ModelError::schema(format!("{path}.axis"), "axis has zero length"));
        }
        if let Some(a2) = j.axis2 {
            if j.kind != JointKindDoc::Universal {
                return Err(ModelError::schema(format!("{path}.axis2"), "only universal joints take a second axis"));
            }
            finite(&path, &a2)?;
        }
        if !j.limits.is_empty() {
            if j.limits.len() != j.kind.coordinates() || matches!(j.kind, JointKindDoc::Spherical | JointKindDoc::Floating) {
                return Err(ModelError::schema(
                    format!("{path}.limits"),
                    "one [lower, upper] pair per coordinate of a revolute, prismatic or universal joint",
                ));
            }
            for (k, l) in j.limits.iter().enumerate() {
                if !(l[0] <= l[1]) || !l[0].is_finite() || !l[1].is_finite() {
                    return Err(ModelError::schema(format!("{path}.limits[{k}]"), "bounds must be finite and ordered"));
                }
            }
        }
        for (field, v) in [("velocity_limit", j.velocity_limit), ("effort_limit", j.effort_limit)] {
            if v.is_some_and(|v| !(v > 0.0) || !v.is_finite()) {
                return Err(ModelError::schema(format!("{path}.{field}"), "must be positive"));
            }
        }
        if let Some(c) = &j.cut {
            finite(&path, &c.child_point)?;
            match (c.rows, c.normal) {
                (3, None) => {}
                (2, Some(n)) if n.iter().map(|a| a * a).sum::<f64>() > 1e-18 => {}
                _ => return Err(ModelError::schema(format!("{path}.cut"), "rows must be 3, or 2 with a nonzero normal")),
            }
            if j.actuated || j.independent {
                return Err(ModelError::schema(path, "a cut joint cannot be actuated or independent"));
            }
        }
        if j.kind == JointKindDoc::Fixed && (j.actuated || j.independent) {
            return Err(ModelError::schema(path, "a fixed joint has no coordinates to actuate"));
        }
    }
    check_tree(bodies, joints)
}

fn check_tree(bodies: &[BodyDoc], joints: &[JointDoc]) -> Result<(), ModelError> {
    let mut parent_joint: HashMap<&str, &JointDoc> = HashMap::new();
    for j in joints.iter().filter(|j| j.cut.is_none()) {
        if let Some(prev) = parent_joint.get(j.child.as_str()) {
            // Two tree joints into one body: report the loop they close.
            let chain = |start: &str| {
                let mut out = vec![start.to_string()];
                let mut cur = start.to_string();
                let mut guard = 0;
                while let Some(pj) = parent_joint.get(cur.as_str()) {
                    cur = pj.parent.clone();
                    out.push(cur.clone());
                    guard += 1;
                    if guard > joints.len() {
                        break;
                    }
                }
                out
            };
            let a = chain(&prev.parent);
            let b = chain(&j.parent);
            let common = a.iter().find(|n| b.contains(n)).cloned().unwrap_or_else(|| WORLD.to_string());
            // common ancestor, down to the later joint, across it, back up the earlier one
            let mut down: Vec<String> = b.iter().take_while(|n| **n != common).cloned().collect();
            down.reverse();
            let mut cycle = vec![common.clone()];
            cycle.extend(down);
            cycle.push(j.child.clone());
            cycle.extend(a.iter().take_while(|n| **n != common).cloned());
            cycle.push(common);
            return Err(ModelError::NonTree(format!(
                "cycle {} closed by joints `{}` and `{}`; mark one of them as a cut joint",
                cycle.join(" -> "),
                prev.name,
                j.name
            )));
        }
        parent_joint.insert(j.child.as_str(), j);
    }
    // Every body must reach the world or a root body; a parent chain that revisits a
    // body is a loop detached from the base.
    for b in bodies {
        let mut cur = b.name.as_str();
        let mut path = vec![cur.to_string()];
        while let Some(pj) = parent_joint.get(cur) {
            cur = pj.parent.as_str();
            if cur == WORLD {
                break;
            }
            if path.iter().any(|p| p == cur) {
                path.push(cur.to_string());
                return Err(ModelError::NonTree(format!("cycle {} is not attached to the base", path.join(" -> "))));
            }
            path.push(cur.to_string());
        }
    }
    Ok(())
}

fn check_frames(prefix: &str, bodies: &[BodyDoc], frames: &[FrameDoc]) -> Result<(), ModelError> {
    let body_set: HashSet<&str> = bodies.iter().map(|b| b.name.as_str()).collect();
    // frames share the namespace of bodies, which carry implicit frames
    check_unique(&format!("{prefix}frames"), bodies.iter().map(|b| b.name.as_str()).chain(frames.iter().map(|f| f.name.as_str())))?;
    for (i, f) in frames.iter().enumerate() {
        if !body_set.contains(f.body.as_str()) {
            return Err(ModelError::schema(format!("$.{prefix}frames[{i}].body"), format!("unknown body `{}`", f.body)));
        }
        finite(&format!("$.{prefix}frames[{i}]"), &f.origin.xyz)?;
        finite(&format!("$.{prefix}frames[{i}]"), &f.origin.rpy)?;
    }
    Ok(())
}

/// Structural checks that need no numerics: names, references, tree shape, flags.
pub fn validate_document(doc: &ModelDocument) -> Result<(), ModelError> {
    if doc.schema_version != SCHEMA_VERSION {
        return Err(ModelError::schema(
            "$.schema_version",
            format!("unsupported version `{}` (expected {SCHEMA_VERSION})", doc.schema_version),
        ));
    }
    finite("$.gravity", &doc.gravity)?;
    check_bodies("", &doc.bodies)?;
    check_joints("", &doc.bodies, &doc.joints)?;
    check_frames("", &doc.bodies, &doc.frames)?;
    for (i, j) in doc.joints.iter().enumerate() {
        if matches!(j.kind, JointKindDoc::Spherical | JointKindDoc::Floating) && j.cut.is_none() {
            return Err(ModelError::schema(
                format!("$.joints[{i}].kind"),
                "spanning-tree joints of the full model must be fixed, revolute, prismatic or universal",
            ));
        }
    }

    check_unique("submechanisms", doc.submechanisms.iter().map(|s| s.name.as_str()))?;
    let joint_index: HashMap<&str, usize> = doc.joints.iter().enumerate().map(|(i, j)| (j.name.as_str(), i)).collect();
    let mut owner: HashMap<&str, &str> = HashMap::new();
    for (si, s) in doc.submechanisms.iter().enumerate() {
        let path = format!("$.submechanisms[{si}]");
        for (k, name) in s.joints.iter().chain(&s.cuts).enumerate() {
            let Some(&ji) = joint_index.get(name.as_str()) else {
                return Err(ModelError::schema(path.to_string(), format!("unknown joint `{name}`")));
            };
            let is_cut = doc.joints[ji].cut.is_some();
            if (k < s.joints.len()) == is_cut {
                return Err(ModelError::schema(
                    path,
                    format!(
                        "`{name}` is listed as a {} joint but declared {}",
                        if is_cut { "tree" } else { "cut" },
                        if is_cut { "cut" } else { "tree" }
                    ),
                ));
            }
            if let Some(prev) = owner.insert(name.as_str(), s.name.as_str()) {
                return Err(ModelError::schema(path, format!("joint `{name}` already belongs to `{prev}`")));
            }
        }
        if s.cuts.is_empty() {
            return Err(ModelError::schema(path, "a submechanism must close at least one loop"));
        }
        let rows: usize = s.cuts.iter().map(|c| doc.joints[joint_index[c.as_str()]].cut.as_ref().map_or(0, |c| c.rows)).sum();
        if let Some(expected) = s.kind.expected_rows() {
            if rows != expected {
                return Err(ModelError::schema(path, format!("a {} block imposes {expected} constraints, found {rows}", s.kind.tag())));
            }
        }
        for (jn, vals) in &s.reference {
            match joint_index.get(jn.as_str()) {
                Some(&ji) if s.joints.contains(jn) && doc.joints[ji].kind.coordinates() == vals.len() => finite(&path, vals)?,
                _ => return Err(ModelError::schema(format!("{path}.reference.{jn}"), "not a member joint or wrong length")),
            }
        }
    }
    for (i, j) in doc.joints.iter().enumerate() {
        if j.cut.is_some() && !owner.contains_key(j.name.as_str()) {
            return Err(ModelError::schema(format!("$.joints[{i}]"), format!("cut joint `{}` belongs to no submechanism", j.name)));
        }
        if j.cut.is_none() && j.kind != JointKindDoc::Fixed && !j.independent && !owner.contains_key(j.name.as_str()) {
            return Err(ModelError::schema(format!("$.joints[{i}]"), format!("passive joint `{}` belongs to no submechanism", j.name)));
        }
    }

    if let Some(a) = &doc.abstraction {
        check_bodies("abstraction.", &a.bodies)?;
        check_joints("abstraction.", &a.bodies, &a.joints)?;
        check_frames("abstraction.", &a.bodies, &a.frames)?;
        for (i, j) in a.joints.iter().enumerate() {
            if j.cut.is_some() {
                return Err(ModelError::schema(format!("$.abstraction.joints[{i}]"), "the abstraction is a tree and has no cut joints"));
            }
        }
    }
    let (fbodies, fframes) = match &doc.abstraction {
        Some(a) => (&a.bodies, &a.frames),
        None => (&doc.bodies, &doc.frames),
    };
    check_unique("feet", doc.feet.iter().map(|f| f.frame.as_str()))?;
    for (i, f) in doc.feet.iter().enumerate() {
        if !fframes.iter().any(|fr| fr.name == f.frame) && !fbodies.iter().any(|b| b.name == f.frame) {
            return Err(ModelError::schema(format!("$.feet[{i}].frame"), format!("unknown frame `{}`", f.frame)));
        }
        if !(f.half_extents[0] > 0.0 && f.half_extents[1] > 0.0) {
            return Err(ModelError::schema(format!("$.feet[{i}].half_extents"), "half extents must be positive"));
        }
    }
    Ok(())
}
