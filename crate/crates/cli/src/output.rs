//! File formats written by `solve` and read back by `plotdata`.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use hyexo::actuation::{ActuatorTrajectory, Trajectory};
use hyexo::boxfddp::{IterationLog, SolveResult};
use hyexo::modelio::ValidationEntry;
use serde::Serialize;

/// Nine significant digits, scientific notation.
pub fn num(x: f64) -> String {
    format!("{x:.8e}")
}

fn row(out: &mut String, fields: impl IntoIterator<Item = String>) {
    let fields: Vec<String> = fields.into_iter().collect();
    out.push_str(&fields.join(","));
    out.push('\n');
}

/// Columns `t`, `y_<joint>…`, `ydot_<joint>…`, `tau_<joint>…`.
pub fn trajectory_csv(joints: &[String], traj: &Trajectory) -> String {
    let mut out = String::new();
    let header =
        std::iter::once("t".to_string()).chain(["y", "ydot", "tau"].iter().flat_map(|p| joints.iter().map(move |j| format!("{p}_{j}"))));
    row(&mut out, header);
    for k in &traj.knots {
        let values = std::iter::once(k.t).chain(k.y.iter().copied()).chain(k.ydot.iter().copied()).chain(k.tau_y.iter().copied());
        row(&mut out, values.map(num));
    }
    out
}

/// Columns `t`, `pos_<actuator>…`, `vel_<actuator>…`, `effort_<actuator>…`.
pub fn actuators_csv(act: &ActuatorTrajectory) -> String {
    let mut out = String::new();
    let header = std::iter::once("t".to_string())
        .chain(["pos", "vel", "effort"].iter().flat_map(|p| act.names.iter().map(move |a| format!("{p}_{a}"))));
    row(&mut out, header);
    for k in &act.knots {
        let values = std::iter::once(k.t).chain(k.pos.iter().copied()).chain(k.vel.iter().copied()).chain(k.effort.iter().copied());
        row(&mut out, values.map(num));
    }
    out
}

pub fn solve_log_csv(sol: &SolveResult) -> String {
    let mut out = format!("{},expected_improvement\n", IterationLog::HEADER);
    for l in &sol.log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            l.iter,
            num(l.cost),
            num(l.max_gap),
            num(l.step),
            num(l.regularization),
            num(l.expected_improvement)
        );
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Overrides {
    pub max_iters: Option<usize>,
    pub dt: Option<f64>,
}

/// Everything needed to rerun a solve.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub model_path: String,
    pub recipe_path: String,
    pub output_dir: String,
    pub seed: u64,
    pub overrides: Overrides,
}

#[derive(Debug, Serialize)]
pub struct ValidationFile<'a> {
    pub converged: bool,
    pub iterations: usize,
    pub cost: f64,
    pub max_gap: f64,
    pub violations: usize,
    pub entries: &'a [ValidationEntry],
}

pub fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

/// Reshapes a wide CSV with a leading `t` column into `time,series,value` rows.
pub fn long_format(text: &str, source: &str, out: &mut String) -> Result<()> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else { bail!("{source}: empty file") };
    let columns: Vec<&str> = header.split(',').collect();
    if columns.first() != Some(&"t") || columns.len() < 2 {
        bail!("{source}: expected a header starting with `t` and at least one series");
    }
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            bail!("{source}:{}: expected {} fields, found {}", i + 1, columns.len(), fields.len());
        }
        for f in &fields {
            f.parse::<f64>().with_context(|| format!("{source}:{}: `{f}` is not a number", i + 1))?;
        }
        for (name, value) in columns.iter().zip(&fields).skip(1) {
            let _ = writeln!(out, "{},{name},{value}", fields[0]);
        }
    }
    Ok(())
}
