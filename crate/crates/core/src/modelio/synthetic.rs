//! Synthetic stand-in for the Recupera-Reha exoskeleton.
//!
//! Topology and limits follow the published system: a 6-UPS spine, two slider-crank
//! knees and four 3R2US hip/ankle blocks, 148 spanning-tree coordinates, 20
//! independent and 20 actuated coordinates, 102 loop-closure constraints, 34.68 kg.
//! Link lengths, anchor points and mass distribution are invented: this is NOT the
//! geometry of the real robot.
//!
//! Per-block breakdown (tree coordinates / independent / constraints / idle):
//! spine 24/6/18/0, each knee 8/1/6/1, each hip and ankle 27/3/18/6.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};

use super::{
    AbstractionDoc, BodyDoc, CutDoc, FootDoc, FrameDoc, JointDoc, JointKindDoc, ModelDocument, Origin, PointDoc, ResolverDoc, StepDoc,
    SubmechanismDoc, SubmechanismType, SCHEMA_VERSION, WORLD,
};
use crate::error::Result;

pub const SYNTHETIC_MODEL_NAME: &str = "recupera_synthetic";

const TOTAL_MASS: f64 = 34.68;
const HIP_Y: f64 = 0.08;
const THIGH: f64 = 0.4;
const SHANK: f64 = 0.4;
const SOLE: f64 = 0.08;
const FOOT_FORWARD: f64 = 0.03;
const FOOT_HALF: [f64; 2] = [0.12, 0.07];
const SPINE_BASE_Z: f64 = 0.1;
/// Spine actuators sit at mid stroke in the reference posture.
const SPINE_MID_STROKE: f64 = 0.055;

// Table III: independent joints.
const SPINE_ROM: [[f64; 2]; 6] = [[-0.143, 0.122], [-0.153, 0.153], [-0.056, 0.057], [-0.576, 0.585], [-0.576, 0.576], [-1.518, 1.518]];
const KNEE_ROM: [f64; 2] = [-0.064, 0.09];
const HIP_ANKLE_ROM: [[f64; 2]; 3] = [[-0.349, 0.646], [-0.262, 0.611], [-0.349, 0.646]];

// Table II: actuators (position range, velocity, effort).
const SPINE_ACT: ([f64; 2], f64, f64) = ([0.0, 0.11], 0.34, 570.0);
const KNEE_ACT: ([f64; 2], f64, f64) = ([-0.064, 0.09], 0.34, 662.0);
const HIP_ACT: ([f64; 2], f64, f64) = ([-0.436, 0.436], 2.39, 176.0);
const ANKLE_ACT: ([f64; 2], f64, f64) = ([-0.436, 0.436], 7.17, 28.0);

/// Geometry of one 3R2US block: six crank–rod legs around the output centre.
struct RusGeometry {
    /// Radius of the output attachment ring.
    ring: f64,
    /// Height of the ring relative to the output centre.
    height: f64,
    rod: f64,
    crank: f64,
    link_mass: [f64; 3],
}

const HIP_RUS: RusGeometry = RusGeometry { ring: 0.05, height: -0.03, rod: 0.14, crank: 0.14, link_mass: [0.06, 0.02, 0.05] };
const ANKLE_RUS: RusGeometry = RusGeometry { ring: 0.08, height: 0.03, rod: 0.14, crank: 0.14, link_mass: [0.03, 0.01, 0.03] };

fn v3(v: Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn box_body(name: &str, mass: f64, com: [f64; 3], size: [f64; 3]) -> BodyDoc {
    let [x, y, z] = size.map(|s| s * s);
    let k = mass / 12.0;
    BodyDoc { name: name.into(), mass, com, inertia: [k * (y + z), k * (x + z), k * (x + y), 0.0, 0.0, 0.0] }
}

fn link(name: &str, mass: f64) -> BodyDoc {
    box_body(name, mass, [0.0; 3], [0.02, 0.02, 0.02])
}

fn massless(name: &str) -> BodyDoc {
    BodyDoc { name: name.into(), mass: 0.0, com: [0.0; 3], inertia: [0.0; 6] }
}

fn at(xyz: Vector3<f64>) -> Origin {
    Origin { xyz: v3(xyz), rpy: [0.0; 3] }
}

/// Origin whose z axis points along `dir`.
fn aimed(xyz: Vector3<f64>, dir: Vector3<f64>) -> Origin {
    let r = Rotation3::rotation_between(&Vector3::z(), &dir).unwrap_or_else(|| Rotation3::from_axis_angle(&Vector3::x_axis(), PI));
    let (roll, pitch, yaw) = r.euler_angles();
    Origin { xyz: v3(xyz), rpy: [roll, pitch, yaw] }
}

fn joint(name: &str, kind: JointKindDoc, parent: &str, child: &str, origin: Origin, axis: Vector3<f64>) -> JointDoc {
    let mut j = JointDoc::new(name, kind, parent, child);
    j.origin = origin;
    j.axis = v3(axis);
    j
}

fn independent(mut j: JointDoc, rom: [f64; 2]) -> JointDoc {
    j.independent = true;
    j.limits = vec![rom];
    j
}

fn actuated(mut j: JointDoc, act: ([f64; 2], f64, f64)) -> JointDoc {
    j.actuated = true;
    j.limits = vec![act.0];
    j.velocity_limit = Some(act.1);
    j.effort_limit = Some(act.2);
    j
}

fn cut(name: &str, parent: &str, at_parent: Vector3<f64>, child: &str, at_child: Vector3<f64>) -> JointDoc {
    let mut j = joint(name, JointKindDoc::Spherical, parent, child, at(at_parent), Vector3::z());
    j.cut = Some(CutDoc { child_point: v3(at_child), rows: 3, normal: None });
    j
}

fn point(body: &str, p: Vector3<f64>) -> PointDoc {
    PointDoc { body: body.into(), point: v3(p) }
}

/// Side-dependent axis signs: roll and yaw mirror, pitch flexes forward on both sides.
struct Side {
    tag: &'static str,
    y: f64,
}

const SIDES: [Side; 2] = [Side { tag: "l", y: 1.0 }, Side { tag: "r", y: -1.0 }];

fn euler_axes(side: &Side) -> [Vector3<f64>; 3] {
    [Vector3::x() * side.y, -Vector3::y(), Vector3::z() * side.y]
}

#[derive(Default)]
struct Part {
    bodies: Vec<BodyDoc>,
    joints: Vec<JointDoc>,
}

impl Part {
    fn push(&mut self, body: BodyDoc, joint: JointDoc) {
        self.bodies.push(body);
        self.joints.push(joint);
    }
}

/// Six-coordinate serial chain from pelvis to torso: x, y, z translations then roll, pitch, yaw.
fn spine_chain(p: &mut Part, torso: BodyDoc, effort: Option<[f64; 2]>) {
    let names = ["spine_x", "spine_y", "spine_z", "spine_roll", "spine_pitch", "spine_yaw"];
    let axes = [Vector3::x(), Vector3::y(), Vector3::z(), Vector3::x(), Vector3::y(), Vector3::z()];
    let mut parent = "pelvis".to_string();
    for k in 0..6 {
        let child = if k == 5 { torso.name.clone() } else { format!("{}_link", names[k]) };
        let kind = if k < 3 { JointKindDoc::Prismatic } else { JointKindDoc::Revolute };
        let origin = if k == 0 { at(Vector3::new(0.0, 0.0, SPINE_BASE_Z)) } else { Origin::default() };
        let mut j = independent(joint(names[k], kind, &parent, &child, origin, axes[k]), SPINE_ROM[k]);
        if let Some(e) = effort {
            j.effort_limit = Some(if k < 3 { e[0] } else { e[1] });
        }
        let body = if k == 5 { torso.clone() } else { massless(&child) };
        p.push(body, j);
        parent = child;
    }
}

/// Roll–pitch–yaw chain; returns the joint names.
fn euler_chain(
    p: &mut Part,
    prefix: &str,
    side: &Side,
    parent: &str,
    center: Vector3<f64>,
    out: BodyDoc,
    effort: Option<f64>,
) -> [String; 3] {
    let axes = euler_axes(side);
    let names = ["roll", "pitch", "yaw"].map(|n| format!("{prefix}_{n}_{}", side.tag));
    let mut par = parent.to_string();
    for k in 0..3 {
        let child = if k == 2 { out.name.clone() } else { format!("{}_link", names[k]) };
        let origin = if k == 0 { at(center) } else { Origin::default() };
        let mut j = independent(joint(&names[k], JointKindDoc::Revolute, &par, &child, origin, axes[k]), HIP_ANKLE_ROM[k]);
        j.effort_limit = effort;
        p.push(if k == 2 { out.clone() } else { massless(&child) }, j);
        par = child;
    }
    names
}

fn leg_bodies(side: &Side) -> [BodyDoc; 3] {
    let s = side.tag;
    [
        box_body(&format!("thigh_{s}"), 4.2, [0.0, 0.0, -THIGH / 2.0], [0.1, 0.1, THIGH]),
        box_body(&format!("shank_{s}"), 3.6, [0.0, 0.0, -SHANK / 2.0], [0.09, 0.09, SHANK]),
        box_body(&format!("foot_{s}"), 1.5, [FOOT_FORWARD, 0.0, -0.05], [0.24, 0.14, 0.06]),
    ]
}

fn trunk_bodies(pelvis_mass: f64) -> (BodyDoc, BodyDoc) {
    // the pelvis takes the remainder of the total mass; drop summation noise
    let pelvis_mass = (pelvis_mass * 1e9).round() / 1e9;
    (box_body("pelvis", pelvis_mass, [0.0, 0.0, 0.05], [0.2, 0.3, 0.15]), box_body("torso", 6.0, [0.0, 0.0, 0.2], [0.2, 0.3, 0.4]))
}

fn spine_block(p: &mut Part, torso: BodyDoc) -> SubmechanismDoc {
    let first = p.joints.len();
    spine_chain(p, torso, None);
    let mut steps = Vec::new();
    let mut cuts = Vec::new();
    let mut reference = std::collections::BTreeMap::new();
    for k in 0..3 {
        for s in [-1.0, 1.0] {
            let i = cuts.len();
            let beta = (120.0 * k as f64 + 15.0 * s).to_radians();
            let alpha = (120.0 * k as f64 + 45.0 * s).to_radians();
            let base = Vector3::new(0.09 * beta.cos(), 0.09 * beta.sin(), 0.04);
            let top = Vector3::new(0.07 * alpha.cos(), 0.07 * alpha.sin(), 0.2);
            let v = Vector3::new(0.0, 0.0, SPINE_BASE_Z) + top - base;
            let rest = v.norm() - SPINE_MID_STROKE;
            let (u, cyl, pj, rod) =
                (format!("spine_leg{i}_u"), format!("spine_leg{i}_cyl"), format!("spine_leg{i}_p"), format!("spine_leg{i}_rod"));
            p.push(link(&cyl, 0.12), joint(&u, JointKindDoc::Universal, "pelvis", &cyl, aimed(base, v), Vector3::x()));
            p.push(link(&rod, 0.08), actuated(joint(&pj, JointKindDoc::Prismatic, &cyl, &rod, Origin::default(), Vector3::z()), SPINE_ACT));
            let c = format!("spine_leg{i}_s");
            p.joints.push(cut(&c, "torso", top, &rod, Vector3::new(0.0, 0.0, rest)));
            cuts.push(c);
            reference.insert(pj.clone(), vec![SPINE_MID_STROKE]);
            steps.push(StepDoc::LegAim { universal: u, target: point("torso", top), length_joint: Some(pj), rest_length: rest });
        }
    }
    let joints = p.joints[first..].iter().filter(|j| j.cut.is_none()).map(|j| j.name.clone()).collect();
    SubmechanismDoc {
        name: "spine".into(),
        kind: SubmechanismType::Stewart6Ups,
        joints,
        cuts,
        resolver: ResolverDoc::Analytical { steps },
        reference,
    }
}

/// 3R2US block: output roll–pitch–yaw chain plus six crank–universal–spin legs, of
/// which the even-numbered cranks carry the motors.
#[allow(clippy::too_many_arguments)]
fn rus_block(
    p: &mut Part,
    name: &str,
    side: &Side,
    base: &str,
    center: Vector3<f64>,
    out: BodyDoc,
    g: &RusGeometry,
    act: ([f64; 2], f64, f64),
) -> SubmechanismDoc {
    let first = p.joints.len();
    let out_name = out.name.clone();
    euler_chain(p, name, side, base, center, out, None);
    let mut cuts = Vec::new();
    for i in 0..6 {
        let phi = (60.0 * i as f64 + 30.0).to_radians();
        let n = Vector3::new(phi.cos(), phi.sin(), 0.0);
        let t = Vector3::new(-phi.sin(), phi.cos(), 0.0);
        let sigma = if i % 2 == 0 { 1.0 } else { -1.0 };
        let attach = n * g.ring + Vector3::z() * g.height;
        let d = (t * (0.5 * sigma) + Vector3::z()).normalize();
        let tip = attach + d * g.rod;
        let pivot = tip - n * g.crank;
        let axis = n.cross(&d).normalize();
        let pre = format!("{name}_{}_leg{i}", side.tag);
        let (crank, crank_link, u, u_link, spin, rod) = (
            format!("{pre}_crank"),
            format!("{pre}_crank_link"),
            format!("{pre}_u"),
            format!("{pre}_u_link"),
            format!("{pre}_spin"),
            format!("{pre}_rod"),
        );
        let mut cj = joint(&crank, JointKindDoc::Revolute, base, &crank_link, at(center + pivot), axis);
        if i % 2 == 0 {
            cj = actuated(cj, act);
        }
        p.push(link(&crank_link, g.link_mass[0]), cj);
        p.push(
            link(&u_link, g.link_mass[1]),
            joint(&u, JointKindDoc::Universal, &crank_link, &u_link, aimed(n * g.crank, -d), Vector3::x()),
        );
        p.push(link(&rod, g.link_mass[2]), joint(&spin, JointKindDoc::Revolute, &u_link, &rod, Origin::default(), Vector3::z()));
        let c = format!("{pre}_s");
        p.joints.push(cut(&c, &out_name, attach, &rod, Vector3::new(0.0, 0.0, g.rod)));
        cuts.push(c);
    }
    let joints = p.joints[first..].iter().filter(|j| j.cut.is_none()).map(|j| j.name.clone()).collect();
    SubmechanismDoc {
        name: format!("{name}_{}", side.tag),
        kind: SubmechanismType::HipAnkle3R2Us,
        joints,
        cuts,
        resolver: ResolverDoc::Numerical,
        reference: Default::default(),
    }
}

/// Slider-crank knee: the actuator stroke drives the shank hinge; a passive strut with
/// a free spin about its own axis closes the second loop.
fn knee_block(p: &mut Part, side: &Side, shank: BodyDoc) -> SubmechanismDoc {
    let s = side.tag;
    let first = p.joints.len();
    let (thigh, shank_name) = (format!("thigh_{s}"), shank.name.clone());
    let knee = Vector3::new(0.0, 0.0, -THIGH);
    p.push(shank, joint(&format!("knee_{s}_hinge"), JointKindDoc::Revolute, &thigh, &shank_name, at(knee), Vector3::y()));

    // actuator: pivot 0.3 m above the hinge, lever 0.13 m on the shank, rest length
    // placed so the stroke [-0.064, 0.09] stays clear of both toggle positions
    let (psi, dist, lever): (f64, f64, f64) = (10f64.to_radians(), 0.3, 0.13);
    let rest = dist - 0.013;
    let beta = ((dist * dist + lever * lever - rest * rest) / (2.0 * dist * lever)).acos();
    let pivot = knee + Vector3::new(psi.sin(), 0.0, psi.cos()) * dist;
    let lever_pt = Vector3::new((psi + beta).sin(), 0.0, (psi + beta).cos()) * lever;
    let (act_u, cyl, act_rod) = (format!("knee_{s}_act_u"), format!("knee_{s}_act_cyl"), format!("knee_{s}_act_rod"));
    p.push(link(&cyl, 0.25), joint(&act_u, JointKindDoc::Universal, &thigh, &cyl, aimed(pivot, knee + lever_pt - pivot), Vector3::x()));
    let stroke =
        independent(joint(&format!("knee_{s}"), JointKindDoc::Prismatic, &cyl, &act_rod, Origin::default(), Vector3::z()), KNEE_ROM);
    p.push(link(&act_rod, 0.15), actuated(stroke, KNEE_ACT));
    p.joints.push(cut(&format!("knee_{s}_act_pin"), &shank_name, lever_pt, &act_rod, Vector3::new(0.0, 0.0, rest)));

    let strut_base = Vector3::new(-0.05, 0.0, -0.2);
    let strut_pt = Vector3::new(-0.04, 0.0, -0.12);
    let strut_v = knee + strut_pt - strut_base;
    let strut_rest = strut_v.norm();
    let (su, su_link, spin, spin_link, sp, srod) = (
        format!("knee_{s}_strut_u"),
        format!("knee_{s}_strut_u_link"),
        format!("knee_{s}_strut_spin"),
        format!("knee_{s}_strut_spin_link"),
        format!("knee_{s}_strut_p"),
        format!("knee_{s}_strut_rod"),
    );
    p.push(link(&su_link, 0.05), joint(&su, JointKindDoc::Universal, &thigh, &su_link, aimed(strut_base, strut_v), Vector3::x()));
    p.push(link(&spin_link, 0.02), joint(&spin, JointKindDoc::Revolute, &su_link, &spin_link, Origin::default(), Vector3::z()));
    p.push(link(&srod, 0.08), joint(&sp, JointKindDoc::Prismatic, &spin_link, &srod, Origin::default(), Vector3::z()));
    p.joints.push(cut(&format!("knee_{s}_strut_pin"), &shank_name, strut_pt, &srod, Vector3::new(0.0, 0.0, strut_rest)));

    let steps = vec![
        StepDoc::CrankDistance {
            revolute: format!("knee_{s}_hinge"),
            moving: point(&shank_name, lever_pt),
            fixed: point(&cyl, Vector3::zeros()),
            base_distance: rest,
            plus_joint: Some(format!("knee_{s}")),
        },
        StepDoc::LegAim { universal: act_u, target: point(&shank_name, lever_pt), length_joint: None, rest_length: rest },
        StepDoc::LegAim { universal: su, target: point(&shank_name, strut_pt), length_joint: Some(sp), rest_length: strut_rest },
    ];
    let joints = p.joints[first..].iter().filter(|j| j.cut.is_none()).map(|j| j.name.clone()).collect();
    let cuts = p.joints[first..].iter().filter(|j| j.cut.is_some()).map(|j| j.name.clone()).collect();
    SubmechanismDoc {
        name: format!("knee_{s}"),
        kind: SubmechanismType::KneeSlidercrank,
        joints,
        cuts,
        resolver: ResolverDoc::Analytical { steps },
        reference: Default::default(),
    }
}

fn sole_frames() -> Vec<FrameDoc> {
    SIDES
        .iter()
        .map(|s| FrameDoc {
            name: format!("foot_{}_sole", s.tag),
            body: format!("foot_{}", s.tag),
            origin: at(Vector3::new(FOOT_FORWARD, 0.0, -SOLE)),
        })
        .collect()
}

fn abstraction() -> AbstractionDoc {
    let lumped_legs: f64 = leg_bodies(&SIDES[0]).iter().map(|b| b.mass).sum::<f64>() * 2.0;
    let (pelvis, torso) = trunk_bodies(TOTAL_MASS - 6.0 - lumped_legs);
    let mut p = Part::default();
    p.push(pelvis, joint("pelvis_free", JointKindDoc::Floating, WORLD, "pelvis", Origin::default(), Vector3::z()));
    spine_chain(&mut p, torso, Some([1000.0, 150.0]));
    for side in &SIDES {
        let s = side.tag;
        let [thigh, shank, foot] = leg_bodies(side);
        euler_chain(&mut p, "hip", side, "pelvis", Vector3::new(0.0, HIP_Y * side.y, 0.0), thigh, Some(250.0));
        // the stroke coordinate acts as a telescoping shank: positive shortens the leg
        let mut knee = independent(
            joint(
                &format!("knee_{s}"),
                JointKindDoc::Prismatic,
                &format!("thigh_{s}"),
                &format!("shank_{s}"),
                at(Vector3::new(0.0, 0.0, -THIGH)),
                Vector3::z(),
            ),
            KNEE_ROM,
        );
        knee.effort_limit = Some(KNEE_ACT.2);
        p.push(shank, knee);
        euler_chain(&mut p, "ankle", side, &format!("shank_{s}"), Vector3::new(0.0, 0.0, -SHANK), foot, Some(60.0));
    }
    AbstractionDoc { bodies: p.bodies, joints: p.joints, frames: sole_frames() }
}

/// The bundled synthetic model document.
pub fn synthetic_recupera_document() -> ModelDocument {
    let mut p = Part::default();
    let (_, torso) = trunk_bodies(0.0);
    let mut blocks = vec![spine_block(&mut p, torso)];
    for side in &SIDES {
        let s = side.tag;
        let [thigh, shank, foot] = leg_bodies(side);
        blocks.push(rus_block(&mut p, "hip", side, "pelvis", Vector3::new(0.0, HIP_Y * side.y, 0.0), thigh, &HIP_RUS, HIP_ACT));
        blocks.push(knee_block(&mut p, side, shank));
        blocks.push(rus_block(&mut p, "ankle", side, &format!("shank_{s}"), Vector3::new(0.0, 0.0, -SHANK), foot, &ANKLE_RUS, ANKLE_ACT));
    }
    let others: f64 = p.bodies.iter().map(|b| b.mass).sum();
    let (pelvis, _) = trunk_bodies(TOTAL_MASS - others);
    let mut bodies = vec![pelvis];
    bodies.extend(p.bodies);
    ModelDocument {
        schema_version: SCHEMA_VERSION.into(),
        name: SYNTHETIC_MODEL_NAME.into(),
        gravity: [0.0, 0.0, -9.81],
        bodies,
        joints: p.joints,
        frames: sole_frames(),
        submechanisms: blocks,
        feet: SIDES.iter().map(|s| FootDoc { frame: format!("foot_{}_sole", s.tag), half_extents: FOOT_HALF }).collect(),
        abstraction: Some(abstraction()),
    }
}

/// Full spanning tree, closure map, actuation map and tree abstraction of the synthetic model.
pub fn build_synthetic_recupera() -> Result<super::BuiltModel> {
    super::build_model(&synthetic_recupera_document())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelio::{parse_model, to_json};
    use nalgebra::DVector;

    #[test]
    fn bookkeeping_matches_published_counts() {
        let m = build_synthetic_recupera().unwrap();
        assert_eq!((m.n(), m.m(), m.p(), m.n_c()), (148, 20, 20, 102));
        let rows: Vec<(String, usize, usize, usize, usize)> =
            m.blocks.iter().map(|b| (b.name.clone(), b.tree_coordinates, b.independent, b.constraints, b.idle)).collect();
        assert_eq!(rows.len(), 7);
        for (name, n, y, c, idle) in rows {
            let expected = match name.split('_').next().unwrap() {
                "spine" => (24, 6, 18, 0),
                "knee" => (8, 1, 6, 1),
                _ => (27, 3, 18, 6),
            };
            assert_eq!((n, y, c, idle), expected, "{name}");
        }
        assert!((m.tree.total_mass() - TOTAL_MASS).abs() < 1e-9);
        let a = m.abstraction.as_ref().unwrap();
        assert_eq!((a.nq(), a.nv()), (27, 26));
        assert!((a.total_mass() - TOTAL_MASS).abs() < 1e-9);
    }

    #[test]
    fn bundled_model_passes_its_own_checks() {
        let m = build_synthetic_recupera().unwrap();
        let report = m.check();
        assert!(!report.has_violations(), "{:?}", report.violations().collect::<Vec<_>>());
    }

    #[test]
    fn document_round_trips() {
        let doc = synthetic_recupera_document();
        let text = to_json(&doc);
        let parsed = parse_model(&text).unwrap();
        assert_eq!(parsed, doc);
        assert_eq!(to_json(&parsed), text);
    }

    #[test]
    fn g_has_block_structure() {
        let m = build_synthetic_recupera().unwrap();
        let g = m.closure.g_matrix(&DVector::zeros(20)).unwrap();
        assert_eq!((g.nrows(), g.ncols()), (148, 20));
        let mut owner = vec![usize::MAX; 148];
        let mut yown = [usize::MAX; 20];
        for (b, r) in m.closure.resolvers().iter().enumerate() {
            r.tree_joints().iter().for_each(|&i| owner[i] = b);
            r.independent_joints().iter().for_each(|&i| yown[i] = b);
        }
        for i in 0..148 {
            for j in 0..20 {
                if owner[i] != yown[j] {
                    assert_eq!(g[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn closure_identities_hold_across_rom() {
        use rand::{Rng, SeedableRng};
        let m = build_synthetic_recupera().unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for _ in 0..1000 {
            let y = DVector::from_iterator(20, m.independent.iter().map(|c| rng.gen_range(c.limits.lower..=c.limits.upper)));
            let yd = DVector::from_iterator(20, (0..20).map(|_| rng.gen_range(-1.0..1.0)));
            let q = m.closure.gamma(&y).unwrap();
            for c in m.closure.check_identities(&q, &yd).unwrap() {
                assert!(c.residual <= 1e-8 && c.kg <= 1e-6 && c.kg_drift <= 1e-6, "{c:?} at {y}");
            }
        }
    }
}
