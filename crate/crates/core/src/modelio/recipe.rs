//! Motion recipe files: which motion to build, its timing, cost weights and
//! optional solver overrides. Unspecified fields fall back to the documented defaults.

use serde::{Deserialize, Serialize};

use super::{ModelError, SCHEMA_VERSION};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Sit,
    Stand,
    Walk,
}

/// Cost weights: CoM tracking, torque regularisation, posture regularisation, foot tracking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecipeWeights {
    pub com: f64,
    pub torque: f64,
    pub posture: f64,
    pub foot: f64,
}

impl Default for RecipeWeights {
    fn default() -> Self {
        Self { com: 1e3, torque: 1e-2, posture: 1e1, foot: 1e4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeDocument {
    pub schema_version: String,
    pub motion: MotionKind,
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(default)]
    pub weights: RecipeWeights,
    /// Sit/stand phase length, seconds.
    #[serde(default = "defaults::sit_duration")]
    pub duration: f64,
    /// CoM height change for sit/stand, metres (positive magnitude).
    #[serde(default = "defaults::delta_z")]
    pub delta_z: f64,
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    #[serde(default = "defaults::stride")]
    pub stride_length: f64,
    #[serde(default = "defaults::support")]
    pub support_duration: f64,
    #[serde(default = "defaults::swing")]
    pub swing_duration: f64,
    /// Peak swing-foot lift, metres.
    #[serde(default = "defaults::clearance")]
    pub clearance: f64,
    /// Required distance of the CoM ground projection from the stance-foot edges.
    #[serde(default = "defaults::margin")]
    pub margin: f64,
    /// Quasi-static CoM speed bound, m/s.
    #[serde(default = "defaults::vmax")]
    pub vmax: f64,
    #[serde(default)]
    pub solver: SolverOverrides,
}

mod defaults {
    pub fn dt() -> f64 {
        0.02
    }
    pub fn sit_duration() -> f64 {
        4.0
    }
    pub fn delta_z() -> f64 {
        0.05
    }
    pub fn steps() -> usize {
        4
    }
    pub fn stride() -> f64 {
        0.05
    }
    pub fn support() -> f64 {
        1.0
    }
    pub fn swing() -> f64 {
        1.5
    }
    pub fn clearance() -> f64 {
        0.03
    }
    pub fn margin() -> f64 {
        0.01
    }
    pub fn vmax() -> f64 {
        0.15
    }
}

impl RecipeDocument {
    pub fn new(motion: MotionKind) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            motion,
            dt: defaults::dt(),
            weights: RecipeWeights::default(),
            duration: defaults::sit_duration(),
            delta_z: defaults::delta_z(),
            steps: defaults::steps(),
            stride_length: defaults::stride(),
            support_duration: defaults::support(),
            swing_duration: defaults::swing(),
            clearance: defaults::clearance(),
            margin: defaults::margin(),
            vmax: defaults::vmax(),
            solver: SolverOverrides::default(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("recipe serializes");
        s.push('\n');
        s
    }
}

pub fn parse_recipe(text: &str) -> Result<RecipeDocument> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: RecipeDocument = serde_path_to_error::deserialize(de).map_err(super::path_error)?;
    let bad = |path: &str, message: &str| Err(ModelError::schema(format!("$.{path}"), message).into());
    if doc.schema_version != SCHEMA_VERSION {
        return bad("schema_version", &format!("unsupported version `{}`", doc.schema_version));
    }
    let positive = [
        ("dt", doc.dt),
        ("duration", doc.duration),
        ("support_duration", doc.support_duration),
        ("swing_duration", doc.swing_duration),
        ("vmax", doc.vmax),
    ];
    for (name, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            return bad(name, "must be a positive number");
        }
    }
    let nonneg = [
        ("delta_z", doc.delta_z),
        ("stride_length", doc.stride_length),
        ("clearance", doc.clearance),
        ("margin", doc.margin),
        ("weights.com", doc.weights.com),
        ("weights.torque", doc.weights.torque),
        ("weights.posture", doc.weights.posture),
        ("weights.foot", doc.weights.foot),
    ];
    for (name, v) in nonneg {
        if !(v.is_finite() && v >= 0.0) {
            return bad(name, "must be a non-negative number");
        }
    }
    if doc.motion == MotionKind::Walk && (doc.steps < 2 || !doc.steps.is_multiple_of(2)) {
        return bad("steps", "walking needs an even step count of at least 2");
    }
    Ok(doc)
}
