//! Feasibility-driven differential dynamic programming with box-constrained controls.
//!
//! Defects `f̄_{i+1} = f(x_i, u_i) ⊖ x_{i+1}` are carried through the backward pass and
//! contracted by `(1 − α)` in every rollout, so infeasible warm starts are allowed.
//! Controls are kept inside their bounds at every iterate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, Error, Result};
use crate::ocp::{integrate_action, problem_derivatives, NodeDerivatives, ShootingProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub max_iters: usize,
    /// Threshold on the expected improvement of a full step.
    pub convergence_tol: f64,
    pub gap_tolerance: f64,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    pub reg_factor: f64,
    pub line_search_steps: Vec<f64>,
    /// Fraction of the predicted merit decrease a step must realise.
    pub acceptance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iters: 200,
            convergence_tol: 1e-9,
            gap_tolerance: 1e-9,
            reg_init: 1e-9,
            reg_min: 1e-9,
            reg_max: 1e9,
            reg_factor: 10.0,
            line_search_steps: (0..=10).map(|k| 0.5f64.powi(k)).collect(),
            acceptance: 0.1,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.reg_min
            && self.reg_min <= self.reg_init
            && self.reg_init <= self.reg_max
            && self.reg_factor > 1.0
            && !self.line_search_steps.is_empty()
            && self.line_search_steps.iter().all(|&a| a > 0.0 && a <= 1.0);
        if !ok {
            return Err(Error::InvalidArgument("inconsistent solver settings".into()));
        }
        Ok(())
    }
}

/// One line of the per-iteration log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iter: usize,
    pub cost: f64,
    pub max_gap: f64,
    pub step: f64,
    pub regularization: f64,
    pub expected_improvement: f64,
    pub merit_before: f64,
    pub merit_after: f64,
}

impl IterationLog {
    pub const HEADER: &'static str = "iter,cost,max_gap,step,regularization";
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub xs: Vec<DVector<f64>>,
    pub us: Vec<DVector<f64>>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Infinity norm of every defect, node 0 first.
    pub gaps: Vec<f64>,
    pub cost_trace: Vec<f64>,
    pub log: Vec<IterationLog>,
}

impl SolveResult {
    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().fold(0.0, |a: f64, &b| a.max(b))
    }
}

/// Local feedback policy `δu = k + K δx`.
#[derive(Debug, Clone)]
pub struct Policy {
    pub k: Vec<DVector<f64>>,
    pub kfb: Vec<DMatrix<f64>>,
    /// Largest value-gradient component over the horizon.
    pub vx_max: f64,
}

/// Solution of `min ½xᵀHx + gᵀx` over a box.
#[derive(Debug, Clone)]
pub struct BoxQpSolution {
    pub x: DVector<f64>,
    pub free: Vec<bool>,
    /// Factor of the free block of `H`, absent when every variable is clamped.
    pub free_factor: Option<Cholesky<f64, Dyn>>,
}

const BOXQP_MAX_ITERS: usize = 20;
const BOXQP_GRAD_TOL: f64 = 1e-12;

/// Projected-Newton box QP; `None` when the free Hessian block is not positive definite.
pub fn box_qp(h: &DMatrix<f64>, g: &DVector<f64>, lb: &DVector<f64>, ub: &DVector<f64>, x0: &DVector<f64>) -> Option<BoxQpSolution> {
    let n = g.len();
    let clamp = |x: &DVector<f64>| DVector::from_iterator(n, (0..n).map(|i| x[i].clamp(lb[i], ub[i])));
    let value = |x: &DVector<f64>| 0.5 * x.dot(&(h * x)) + g.dot(x);
    let mut x = clamp(x0);
    if n == 0 {
        return Some(BoxQpSolution { x, free: Vec::new(), free_factor: None });
    }
    let mut factor: Option<Cholesky<f64, Dyn>> = None;
    let mut prev_free: Option<Vec<bool>> = None;
    for _ in 0..BOXQP_MAX_ITERS {
        let grad = g + h * &x;
        let free: Vec<bool> = (0..n).map(|i| !((x[i] <= lb[i] && grad[i] > 0.0) || (x[i] >= ub[i] && grad[i] < 0.0))).collect();
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        if idx.is_empty() {
            break;
        }
        let changed = prev_free.as_ref() != Some(&free);
        if changed || factor.is_none() {
            factor = Some(h.select_rows(&idx).select_columns(&idx).cholesky()?);
        }
        let gf = DVector::from_iterator(idx.len(), idx.iter().map(|&i| grad[i]));
        if !changed && gf.amax() < BOXQP_GRAD_TOL * (1.0 + g.amax()) {
            break;
        }
        prev_free = Some(free.clone());
        let step_f = -factor.as_ref().expect("factor set above").solve(&gf);
        let mut dir = DVector::zeros(n);
        for (k, &i) in idx.iter().enumerate() {
            dir[i] = step_f[k];
        }
        let v0 = value(&x);
        let slope = grad.dot(&dir);
        let mut alpha = 1.0;
        let mut moved = false;
        while alpha > 1e-12 {
            let trial = clamp(&(&x + &dir * alpha));
            if value(&trial) <= v0 + 0.1 * alpha * slope.min(0.0) {
                moved = (&trial - &x).amax() > 0.0;
                x = trial;
                break;
            }
            alpha *= 0.5;
        }
        if !moved && !changed {
            break;
        }
    }
    // final active set and factor consistent with the returned point
    let grad = g + h * &x;
    let free: Vec<bool> = (0..n).map(|i| !((x[i] <= lb[i] && grad[i] > 0.0) || (x[i] >= ub[i] && grad[i] < 0.0))).collect();
    let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
    let factor = if idx.is_empty() { None } else { Some(h.select_rows(&idx).select_columns(&idx).cholesky()?) };
    Some(BoxQpSolution { x, free, free_factor: factor })
}

/// Gaps `f̄_i` (node 0: `x0 ⊖ x_0`).
pub fn compute_gaps(problem: &ShootingProblem, xs: &[DVector<f64>], us: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let space = problem.space();
    let mut gaps = Vec::with_capacity(xs.len());
    gaps.push(-space.diff(&problem.x0, &xs[0])?);
    for (i, m) in problem.running.iter().enumerate() {
        let f = integrate_action(m, &xs[i], &us[i])?;
        gaps.push(-space.diff(&f, &xs[i + 1])?);
    }
    Ok(gaps)
}

/// Riccati sweep with defects; `None` asks for more regularisation.
pub fn backward_pass(
    problem: &ShootingProblem,
    derivs: &[NodeDerivatives],
    gaps: &[DVector<f64>],
    us: &[DVector<f64>],
    regularization: f64,
) -> Option<Policy> {
    let n = problem.horizon();
    let term = &derivs[n].cost;
    let mut vx = term.lx.clone();
    let mut vxx = term.lxx.clone();
    let mut vx_max = vx.amax();
    let mut k_all = vec![DVector::zeros(0); n];
    let mut kfb_all = vec![DMatrix::zeros(0, 0); n];
    for t in (0..n).rev() {
        let d = &derivs[t];
        let m = &problem.running[t];
        let vx_eff = &vx + &vxx * &gaps[t + 1];
        let qx = &d.cost.lx + d.fx.tr_mul(&vx_eff);
        let qu = &d.cost.lu + d.fu.tr_mul(&vx_eff);
        let vxx_fx = &vxx * &d.fx;
        let vxx_fu = &vxx * &d.fu;
        let qxx = &d.cost.lxx + d.fx.tr_mul(&vxx_fx);
        let mut quu = &d.cost.luu + d.fu.tr_mul(&vxx_fu);
        let qux = &d.cost.lux + d.fu.tr_mul(&vxx_fx);
        for i in 0..quu.nrows() {
            quu[(i, i)] += regularization;
        }
        let lb = &m.lower - &us[t];
        let ub = &m.upper - &us[t];
        let warm = DVector::zeros(m.nu());
        let qp = box_qp(&quu, &qu, &lb, &ub, &warm)?;
        let nu = m.nu();
        let mut kfb = DMatrix::zeros(nu, qux.ncols());
        if let Some(f) = &qp.free_factor {
            let idx: Vec<usize> = (0..nu).filter(|&i| qp.free[i]).collect();
            let sol = -f.solve(&qux.select_rows(&idx));
            for (r, &i) in idx.iter().enumerate() {
                kfb.row_mut(i).copy_from(&sol.row(r));
            }
        }
        let k = qp.x;
        let quu_k = &quu * &k;
        vx = &qx + kfb.tr_mul(&quu_k) + kfb.tr_mul(&qu) + qux.tr_mul(&k);
        let kt_qux = kfb.tr_mul(&qux);
        vxx = &qxx + kfb.tr_mul(&(&quu * &kfb)) + &kt_qux + kt_qux.transpose();
        vxx = (&vxx + vxx.transpose()) * 0.5;
        if vx.iter().chain(vxx.iter()).any(|z| !z.is_finite()) {
            return None;
        }
        vx_max = vx_max.max(vx.amax());
        k_all[t] = k;
        kfb_all[t] = kfb;
    }
    Some(Policy { k: k_all, kfb: kfb_all, vx_max })
}

/// Coefficients of the predicted cost change `α d1 + ½α² d2` along the linearised rollout.
pub fn model_change(derivs: &[NodeDerivatives], gaps: &[DVector<f64>], policy: &Policy) -> (f64, f64) {
    let n = policy.k.len();
    let mut xi = gaps[0].clone();
    let (mut d1, mut d2) = (0.0, 0.0);
    for t in 0..n {
        let d = &derivs[t];
        let eta = &policy.k[t] + &policy.kfb[t] * &xi;
        d1 += d.cost.lx.dot(&xi) + d.cost.lu.dot(&eta);
        d2 += xi.dot(&(&d.cost.lxx * &xi)) + 2.0 * eta.dot(&(&d.cost.lux * &xi)) + eta.dot(&(&d.cost.luu * &eta));
        xi = &d.fx * &xi + &d.fu * &eta + &gaps[t + 1];
    }
    let term = &derivs[n].cost;
    d1 += term.lx.dot(&xi);
    d2 += xi.dot(&(&term.lxx * &xi));
    (d1, d2)
}

/// Candidate iterate of a forward pass.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub xs: Vec<DVector<f64>>,
    pub us: Vec<DVector<f64>>,
    pub cost: f64,
    pub gaps: Vec<DVector<f64>>,
}

/// Nonlinear rollout of the policy with defects scaled by `1 − α`.
pub fn forward_pass(
    problem: &ShootingProblem,
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    gaps: &[DVector<f64>],
    policy: &Policy,
    alpha: f64,
) -> Result<Candidate> {
    let space = problem.space();
    let n = problem.horizon();
    let shift = |base: &DVector<f64>, gap: &DVector<f64>| -> Result<DVector<f64>> {
        if alpha == 1.0 || gap.iter().all(|&g| g == 0.0) {
            Ok(base.clone())
        } else {
            space.integrate(base, &(gap * (alpha - 1.0)))
        }
    };
    let mut new_xs = Vec::with_capacity(n + 1);
    let mut new_us = Vec::with_capacity(n);
    new_xs.push(shift(&problem.x0, &gaps[0])?);
    let mut cost = 0.0;
    for t in 0..n {
        let m = &problem.running[t];
        let dx = space.diff(&xs[t], &new_xs[t])?;
        let u = m.clamp(&(&us[t] + &policy.k[t] * alpha + &policy.kfb[t] * dx));
        cost += m.stage_cost(&new_xs[t], &u)?.value;
        let f = integrate_action(m, &new_xs[t], &u)?;
        new_xs.push(shift(&f, &gaps[t + 1])?);
        new_us.push(u);
    }
    cost += problem.terminal.stage_cost(&new_xs[n], &DVector::zeros(0))?.value;
    if !cost.is_finite() {
        return Err(Error::NumericalFailure("rollout cost".into()));
    }
    let new_gaps = if alpha == 1.0 { vec![DVector::zeros(space.ndx()); n + 1] } else { compute_gaps(problem, &new_xs, &new_us)? };
    Ok(Candidate { xs: new_xs, us: new_us, cost, gaps: new_gaps })
}

fn gap_l1(gaps: &[DVector<f64>]) -> f64 {
    gaps.iter().map(|g| g.lp_norm(1)).sum()
}

fn gap_inf(gaps: &[DVector<f64>]) -> f64 {
    gaps.iter().fold(0.0, |a: f64, g| a.max(g.amax()))
}

/// States and controls of a warm start.
pub type Guess = (Vec<DVector<f64>>, Vec<DVector<f64>>);

/// Solves the problem from `initial_guess` (default: every state at `x0`, zero controls).
pub fn solve(problem: &ShootingProblem, settings: &SolverSettings, initial_guess: Option<Guess>) -> Result<SolveResult> {
    settings.validate()?;
    let n = problem.horizon();
    let (mut xs, us0) = match initial_guess {
        Some((xs, us)) => (xs, us),
        None => (vec![problem.x0.clone(); n + 1], problem.running.iter().map(|m| DVector::zeros(m.nu())).collect()),
    };
    check_dim("initial state guess", n + 1, xs.len())?;
    check_dim("initial control guess", n, us0.len())?;
    let mut us: Vec<DVector<f64>> = us0.iter().zip(&problem.running).map(|(u, m)| m.clamp(u)).collect();
    for x in xs.iter_mut() {
        check_dim("state guess", problem.space().nx(), x.len())?;
    }
    let mut gaps = compute_gaps(problem, &xs, &us)?;
    let mut cost = problem.cost(&xs, &us)?;
    let mut reg = settings.reg_init;
    let mut mu: f64 = 0.0;
    let mut cost_trace = vec![cost];
    let mut log = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut derivs = problem_derivatives(problem, &xs, &us)?;

    while iterations < settings.max_iters {
        let policy = loop {
            match backward_pass(problem, &derivs, &gaps, &us, reg) {
                Some(p) => break p,
                None => {
                    reg *= settings.reg_factor;
                    if reg > settings.reg_max {
                        return Err(Error::NoProgress(format!(
                            "backward pass failed at iteration {iterations} with regularisation above {:.1e} (cost {cost:.6e}, max gap {:.3e})",
                            settings.reg_max,
                            gap_inf(&gaps)
                        )));
                    }
                }
            }
        };
        let (d1, d2) = model_change(&derivs, &gaps, &policy);
        let expected = -(d1 + 0.5 * d2);
        let max_gap = gap_inf(&gaps);
        if expected.abs() < settings.convergence_tol && max_gap < settings.gap_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        mu = mu.max(2.0 * policy.vx_max + 1.0);
        let l1 = gap_l1(&gaps);
        let merit = cost + mu * l1;
        let mut accepted = None;
        for &alpha in &settings.line_search_steps {
            let cand = match forward_pass(problem, &xs, &us, &gaps, &policy, alpha) {
                Ok(c) => c,
                Err(e) => {
                    log::debug!("rollout rejected at step {alpha}: {e}");
                    continue;
                }
            };
            let new_merit = cand.cost + mu * gap_l1(&cand.gaps);
            let actual = merit - new_merit;
            let predicted = -(alpha * d1 + 0.5 * alpha * alpha * d2) + alpha * mu * l1;
            if actual >= 0.0 && (predicted <= 0.0 || actual >= settings.acceptance * predicted) {
                accepted = Some((alpha, cand, new_merit));
                break;
            }
        }
        match accepted {
            Some((alpha, cand, new_merit)) => {
                xs = cand.xs;
                us = cand.us;
                gaps = cand.gaps;
                cost = cand.cost;
                cost_trace.push(cost);
                log.push(IterationLog {
                    iter: iterations,
                    cost,
                    max_gap: gap_inf(&gaps),
                    step: alpha,
                    regularization: reg,
                    expected_improvement: expected,
                    merit_before: merit,
                    merit_after: new_merit,
                });
                log::debug!("iter {iterations}: cost {cost:.6e} gap {:.3e} step {alpha} reg {reg:.1e}", gap_inf(&gaps));
                if alpha >= 0.5 {
                    reg = (reg / settings.reg_factor).max(settings.reg_min);
                } else if alpha <= 0.01 {
                    reg = (reg * settings.reg_factor).min(settings.reg_max);
                }
                derivs = problem_derivatives(problem, &xs, &us)?;
            }
            None => {
                reg *= settings.reg_factor;
                if reg > settings.reg_max {
                    return Err(Error::NoProgress(format!(
                        "no acceptable step at iteration {iterations} (cost {cost:.6e}, max gap {max_gap:.3e}, expected improvement {expected:.3e})"
                    )));
                }
            }
        }
    }
    let gap_norms = gaps.iter().map(|g| g.amax()).collect();
    Ok(SolveResult { xs, us, cost, iterations, converged, gaps: gap_norms, cost_trace, log })
}
