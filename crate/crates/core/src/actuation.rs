//! Mapping solved independent-joint trajectories into actuator commands through the
//! full closed-loop model, and timing of that pipeline.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::modelio::{BuiltModel, CoordinateInfo};

/// One sample of an independent-joint trajectory.
///
/// `base_q`/`base_v` carry the floating-base state of the motion model (empty for a
/// fixed base); the actuation mapping ignores them.
#[derive(Debug, Clone, PartialEq)]
pub struct Knot {
    pub t: f64,
    pub y: DVector<f64>,
    pub ydot: DVector<f64>,
    pub tau_y: DVector<f64>,
    pub contact_forces: DVector<f64>,
    pub base_q: DVector<f64>,
    pub base_v: DVector<f64>,
}

impl Knot {
    pub fn at_rest(t: f64, y: DVector<f64>) -> Self {
        let m = y.len();
        Self {
            t,
            y,
            ydot: DVector::zeros(m),
            tau_y: DVector::zeros(m),
            contact_forces: DVector::zeros(0),
            base_q: DVector::zeros(0),
            base_v: DVector::zeros(0),
        }
    }
}

/// Uniformly sampled trajectory; knot `k` sits at `t₀ + k·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub knots: Vec<Knot>,
}

impl Trajectory {
    pub fn new(dt: f64, knots: Vec<Knot>) -> Result<Self> {
        let t = Self { dt, knots };
        t.validate()?;
        Ok(t)
    }

    pub fn m(&self) -> usize {
        self.knots.first().map_or(0, |k| k.y.len())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument("trajectory time step must be positive".into()));
        }
        let Some(first) = self.knots.first() else {
            return Ok(());
        };
        let m = first.y.len();
        for (k, knot) in self.knots.iter().enumerate() {
            if knot.y.len() != m || knot.ydot.len() != m || knot.tau_y.len() != m {
                return Err(Error::dim(format!("knot {k}"), m, knot.y.len().max(knot.ydot.len()).max(knot.tau_y.len())));
            }
            let expected = first.t + k as f64 * self.dt;
            if (knot.t - expected).abs() > 1e-9 * (1.0 + expected.abs()) {
                return Err(Error::InvalidArgument(format!("knot {k} at t={} breaks the uniform spacing", knot.t)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorKnot {
    pub t: f64,
    pub pos: DVector<f64>,
    pub vel: DVector<f64>,
    pub effort: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    Position,
    Velocity,
    Effort,
}

/// A sample outside its actuator's Table II bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitFlag {
    pub knot: usize,
    pub actuator: String,
    pub kind: LimitKind,
    pub value: f64,
    /// Distance outside the admissible range.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorTrajectory {
    pub dt: f64,
    pub names: Vec<String>,
    pub knots: Vec<ActuatorKnot>,
    pub flags: Vec<LimitFlag>,
}

fn flag(flags: &mut Vec<LimitFlag>, knot: usize, info: &CoordinateInfo, kind: LimitKind, value: f64) {
    let excess = match kind {
        LimitKind::Position => info.limits.violation(value),
        LimitKind::Velocity => (value.abs() - info.velocity_limit).max(0.0),
        LimitKind::Effort => (value.abs() - info.effort_limit).max(0.0),
    };
    if excess > 0.0 {
        flags.push(LimitFlag { knot, actuator: info.name.clone(), kind, value, excess });
    }
}

/// Actuator positions `S γ(y)`, velocities `S G ẏ` and efforts from `τ_y = (S G)ᵀ τ_act`,
/// resolved knot by knot with each closure warm started from the previous knot.
pub fn map_to_actuation(model: &BuiltModel, traj: &Trajectory) -> Result<ActuatorTrajectory> {
    traj.validate()?;
    let mut guess: Option<DVector<f64>> = None;
    let mut knots = Vec::with_capacity(traj.knots.len());
    let mut flags = Vec::new();
    for (k, knot) in traj.knots.iter().enumerate() {
        let at = |e: Error| Error::AtKnot { knot: k, source: Box::new(e) };
        let q = model.closure.resolve(&knot.y, guess.as_ref()).map_err(at)?.q;
        let g = model.closure.g_matrix_at(&q).map_err(at)?;
        let pos = model.actuation.select(&q);
        let vel = model.actuation.select(&(&g * &knot.ydot));
        let effort = model.actuation.forces(&g, &knot.tau_y).map_err(at)?;
        for (i, info) in model.actuators.iter().enumerate() {
            flag(&mut flags, k, info, LimitKind::Position, pos[i]);
            flag(&mut flags, k, info, LimitKind::Velocity, vel[i]);
            flag(&mut flags, k, info, LimitKind::Effort, effort[i]);
        }
        knots.push(ActuatorKnot { t: knot.t, pos, vel, effort });
        guess = Some(q);
    }
    Ok(ActuatorTrajectory { dt: traj.dt, names: model.actuators.iter().map(|a| a.name.clone()).collect(), knots, flags })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub knots: usize,
    pub mean_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
    /// Newton iterations per knot, counted per submechanism (analytical blocks report 0).
    pub iterations: BTreeMap<String, BTreeMap<usize, usize>>,
}

/// Per-knot wall-clock cost of closure resolution (positions, velocities, accelerations)
/// plus inverse dynamics of the full spanning tree mapped to actuator efforts.
///
/// Accelerations come from differences of consecutive `ẏ`; contact forces are not applied.
/// Without `warm_start` every knot starts from the reference posture.
pub fn benchmark_closure_rate(model: &BuiltModel, traj: &Trajectory, warm_start: bool) -> Result<BenchmarkReport> {
    traj.validate()?;
    let names: Vec<String> = model.closure.resolvers().iter().map(|r| r.name.clone()).collect();
    let mut iterations: BTreeMap<String, BTreeMap<usize, usize>> = names.iter().map(|n| (n.clone(), BTreeMap::new())).collect();
    let mut times = Vec::with_capacity(traj.knots.len());
    let mut guess: Option<DVector<f64>> = None;
    let n = traj.knots.len();
    for (k, knot) in traj.knots.iter().enumerate() {
        let yddot = if n < 2 {
            DVector::zeros(knot.y.len())
        } else {
            let (a, b) = if k + 1 < n { (k, k + 1) } else { (k - 1, k) };
            (&traj.knots[b].ydot - &traj.knots[a].ydot) / traj.dt
        };
        let start = Instant::now();
        let at = |e: Error| Error::AtKnot { knot: k, source: Box::new(e) };
        let state = model.closure.closure_state(&knot.y, &knot.ydot, &yddot, guess.as_ref()).map_err(at)?;
        let tau_q = model.tree.rnea(&state.q, &state.qd, &state.qdd, None).map_err(at)?;
        let tau_y = state.g_matrix.tr_mul(&tau_q);
        let effort = model.actuation.forces(&state.g_matrix, &tau_y).map_err(at)?;
        times.push(start.elapsed().as_secs_f64() * 1e6);
        std::hint::black_box(effort);
        for (name, it) in names.iter().zip(&state.iterations) {
            *iterations.get_mut(name).expect("resolver listed").entry(*it).or_default() += 1;
        }
        if warm_start {
            guess = Some(state.q);
        }
    }
    let mean_us = times.iter().sum::<f64>() / times.len().max(1) as f64;
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let pick = |p: f64| sorted.get(((p * sorted.len() as f64).ceil() as usize).saturating_sub(1)).copied().unwrap_or(0.0);
    Ok(BenchmarkReport { knots: n, mean_us, p99_us: pick(0.99), max_us: pick(1.0), iterations })
}

/// Smooth multi-sine motion through the middle of each coordinate's range, used by the
/// benchmark command. Amplitudes stay within 40% of the half range.
pub fn sample_trajectory(independent: &[CoordinateInfo], knots: usize, dt: f64) -> Result<Trajectory> {
    let m = independent.len();
    let mut out = Vec::with_capacity(knots);
    for k in 0..knots {
        let t = k as f64 * dt;
        let mut y = DVector::zeros(m);
        let mut ydot = DVector::zeros(m);
        for (i, c) in independent.iter().enumerate() {
            let (mid, half) = (c.limits.mid(), 0.5 * (c.limits.upper - c.limits.lower));
            let w = 2.0 * std::f64::consts::PI * (0.2 + 0.05 * i as f64);
            let phase = 0.7 * i as f64;
            y[i] = mid + 0.4 * half * (w * t + phase).sin();
            ydot[i] = 0.4 * half * w * (w * t + phase).cos();
        }
        let mut knot = Knot::at_rest(t, y);
        knot.ydot = ydot;
        out.push(knot);
    }
    Trajectory::new(dt, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelio::build_synthetic_recupera;

    fn knee_ramp(model: &BuiltModel, knots: usize, dt: f64) -> Trajectory {
        let knee = model.independent.iter().position(|c| c.name == "knee_l").unwrap();
        let rate = 0.05;
        let ks = (0..knots)
            .map(|k| {
                let t = k as f64 * dt;
                let mut y = DVector::zeros(model.m());
                y[knee] = rate * t;
                let mut kn = Knot::at_rest(t, y);
                kn.ydot[knee] = rate;
                kn.tau_y = DVector::from_fn(model.m(), |i, _| 1.0 + i as f64);
                kn
            })
            .collect();
        Trajectory::new(dt, ks).unwrap()
    }

    #[test]
    fn stationary_trajectory_maps_to_reference_actuators() {
        let model = build_synthetic_recupera().unwrap();
        let y = DVector::zeros(model.m());
        let traj = Trajectory::new(0.01, (0..5).map(|k| Knot::at_rest(0.01 * k as f64, y.clone())).collect()).unwrap();
        let out = map_to_actuation(&model, &traj).unwrap();
        let reference = model.actuation.select(&model.closure.reference());
        for k in &out.knots {
            assert!((&k.pos - &reference).amax() < 1e-9);
            assert!(k.vel.amax() == 0.0 && k.effort.amax() < 1e-12);
        }
        assert!(out.flags.is_empty());
    }

    #[test]
    fn knee_ramp_moves_only_the_knee_actuator() {
        let model = build_synthetic_recupera().unwrap();
        let traj = knee_ramp(&model, 20, 0.05);
        let out = map_to_actuation(&model, &traj).unwrap();
        let knee = out.names.iter().position(|n| n == "knee_l").unwrap();
        for k in &out.knots {
            for (i, v) in k.vel.iter().enumerate() {
                if i == knee {
                    assert!((v - 0.05).abs() < 1e-12);
                } else {
                    assert!(v.abs() <= 1e-10, "{} moves at {v}", out.names[i]);
                }
            }
        }
    }

    #[test]
    fn power_is_preserved_through_the_mapping() {
        let model = build_synthetic_recupera().unwrap();
        let traj = sample_trajectory(&model.independent, 40, 0.05).unwrap();
        let mut traj = traj;
        for (k, kn) in traj.knots.iter_mut().enumerate() {
            kn.tau_y = DVector::from_fn(model.m(), |i, _| ((i + k) as f64 * 0.37).sin() * 5.0);
        }
        let out = map_to_actuation(&model, &traj).unwrap();
        for (kn, ak) in traj.knots.iter().zip(&out.knots) {
            let p_y = kn.tau_y.dot(&kn.ydot);
            let p_a = ak.effort.dot(&ak.vel);
            assert!((p_y - p_a).abs() <= 1e-6 * p_y.abs().max(1.0), "{p_y} vs {p_a}");
        }
    }

    #[test]
    fn velocities_match_position_differences() {
        let model = build_synthetic_recupera().unwrap();
        let err = |dt: f64| {
            let traj = sample_trajectory(&model.independent, (0.4 / dt) as usize + 1, dt).unwrap();
            let out = map_to_actuation(&model, &traj).unwrap();
            out.knots.windows(2).map(|w| ((&w[1].pos - &w[0].pos) / dt - (&w[1].vel + &w[0].vel) * 0.5).amax()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.02), err(0.01));
        // trapezoidal comparison is second order, so halving dt must shrink the error
        assert!(e2 < 0.5 * e1, "{e1} {e2}");
    }

    #[test]
    fn warm_start_beats_cold_start() {
        let model = build_synthetic_recupera().unwrap();
        let traj = sample_trajectory(&model.independent, 200, 0.001).unwrap();
        let repeated = Trajectory::new(0.001, (0..200).map(|k| Knot { t: k as f64 * 0.001, ..traj.knots[100].clone() }).collect()).unwrap();
        let warm = benchmark_closure_rate(&model, &repeated, true).unwrap();
        let cold = benchmark_closure_rate(&model, &repeated, false).unwrap();
        let total = |r: &BenchmarkReport| -> usize { r.iterations.values().flat_map(|h| h.iter().map(|(it, c)| it * c)).sum() };
        // after the first knot the warm start is the exact solution
        assert!(total(&warm) * 50 < total(&cold), "{} vs {}", total(&warm), total(&cold));
        assert_eq!(warm.knots, 200);
        assert!(warm.max_us >= warm.p99_us && warm.p99_us > 0.0);
    }

    #[test]
    fn closure_failure_names_the_knot() {
        let model = build_synthetic_recupera().unwrap();
        let mut traj = knee_ramp(&model, 3, 0.1);
        let knee = model.independent.iter().position(|c| c.name == "knee_l").unwrap();
        traj.knots[2].y[knee] = 1.0;
        let e = map_to_actuation(&model, &traj).unwrap_err();
        assert!(matches!(e, Error::AtKnot { knot: 2, .. }), "{e}");
    }
}
