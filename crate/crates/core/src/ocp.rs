//! Discretised optimal-control problems: action models, cost models and their derivatives.
//!
//! States are `x = (q, v)`; increments live in the tangent space of dimension `2·nv`, so
//! floating-base orientation is never differentiated through its quaternion.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::constrained::{forward_dynamics_with, ConstrainedAccelResult, ContactSet};
use crate::error::{check_dim, Error, Result};
use crate::spatial::{log_so3, right_jacobian_inv_so3, FramePlacement};
use crate::treedyn::{FrameId, JointKind, RigidBodyTree};

/// Finite-difference step for dynamics derivatives.
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub enum StateSpace {
    Multibody(Arc<RigidBodyTree>),
    Euclidean(usize),
}

impl StateSpace {
    pub fn nx(&self) -> usize {
        match self {
            StateSpace::Multibody(t) => t.nq() + t.nv(),
            StateSpace::Euclidean(n) => *n,
        }
    }

    pub fn ndx(&self) -> usize {
        match self {
            StateSpace::Multibody(t) => 2 * t.nv(),
            StateSpace::Euclidean(n) => *n,
        }
    }

    pub fn tree(&self) -> Option<&Arc<RigidBodyTree>> {
        match self {
            StateSpace::Multibody(t) => Some(t),
            StateSpace::Euclidean(_) => None,
        }
    }

    pub fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        match self {
            StateSpace::Multibody(t) => (x.rows(0, t.nq()).into_owned(), x.rows(t.nq(), t.nv()).into_owned()),
            StateSpace::Euclidean(_) => (x.clone(), DVector::zeros(0)),
        }
    }

    pub fn join(q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(q.len() + v.len());
        x.rows_mut(0, q.len()).copy_from(q);
        x.rows_mut(q.len(), v.len()).copy_from(v);
        x
    }

    /// `x ⊕ dx`.
    pub fn integrate(&self, x: &DVector<f64>, dx: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.nx(), x.len())?;
        check_dim("state increment", self.ndx(), dx.len())?;
        match self {
            StateSpace::Multibody(t) => {
                let nv = t.nv();
                let (q, v) = self.split(x);
                let q1 = t.integrate(&q, &dx.rows(0, nv).into_owned())?;
                Ok(Self::join(&q1, &(v + dx.rows(nv, nv))))
            }
            StateSpace::Euclidean(_) => Ok(x + dx),
        }
    }

    /// `x1 ⊖ x0`.
    pub fn diff(&self, x0: &DVector<f64>, x1: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.nx(), x0.len())?;
        check_dim("state", self.nx(), x1.len())?;
        match self {
            StateSpace::Multibody(t) => {
                let (q0, v0) = self.split(x0);
                let (q1, v1) = self.split(x1);
                Ok(Self::join(&t.difference(&q0, &q1)?, &(v1 - v0)))
            }
            StateSpace::Euclidean(_) => Ok(x1 - x0),
        }
    }

    /// Jacobian of `diff(x0, x1 ⊕ δ)` with respect to `δ` at zero.
    pub fn diff_jacobian(&self, x0: &DVector<f64>, x1: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.ndx();
        let mut j = DMatrix::identity(n, n);
        if let StateSpace::Multibody(t) = self {
            let (q0, _) = self.split(x0);
            let (q1, _) = self.split(x1);
            let rot = |q: &DVector<f64>, o: usize| {
                crate::spatial::FramePlacement::from_quaternion([q[o], q[o + 1], q[o + 2], q[o + 3]], Vector3::zeros()).rotation
            };
            for b in t.bodies() {
                let (qo, vo) = (b.q_offset, b.v_offset);
                match b.joint.kind {
                    JointKind::Spherical => {
                        let e = log_so3(&(rot(&q0, qo).transpose() * rot(&q1, qo)));
                        j.view_mut((vo, vo), (3, 3)).copy_from(&right_jacobian_inv_so3(&e));
                    }
                    JointKind::FloatingBase => {
                        let r0 = rot(&q0, qo + 3);
                        let r1 = rot(&q1, qo + 3);
                        let rel = r0.transpose() * r1;
                        j.view_mut((vo, vo), (3, 3)).copy_from(&right_jacobian_inv_so3(&log_so3(&rel)));
                        j.view_mut((vo + 3, vo + 3), (3, 3)).copy_from(&rel);
                    }
                    _ => {}
                }
            }
        }
        Ok(j)
    }
}

#[derive(Debug, Clone)]
pub enum Dynamics {
    /// Contact-constrained multibody dynamics; controls drive the listed velocity coordinates.
    Multibody { contacts: ContactSet, actuated: Vec<usize> },
    /// `x⁺ = A x + B u + c` on a Euclidean state.
    Linear { a: DMatrix<f64>, b: DMatrix<f64>, c: DVector<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    /// CoM position, weighted per axis by the activation.
    ComTarget {
        reference: Vector3<f64>,
    },
    TorqueReg,
    /// Control deviation from a reference, typically the quasi-static holding torque.
    TorqueTracking {
        reference: DVector<f64>,
    },
    /// Tangent-space state deviation from `reference` (a full state; velocity part usually zero).
    PostureReg {
        reference: DVector<f64>,
    },
    /// Frame position and orientation error `[p − p_ref; log(R_refᵀ R)]`.
    FrameTracking {
        frame: FrameId,
        reference: FramePlacement,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostTerm {
    pub name: String,
    pub kind: CostKind,
    pub weight: f64,
    /// Per-residual activation weights; `None` activates every component with weight 1.
    pub activation: Option<DVector<f64>>,
}

impl CostTerm {
    pub fn new(name: impl Into<String>, kind: CostKind, weight: f64) -> Self {
        Self { name: name.into(), kind, weight, activation: None }
    }

    pub fn with_activation(mut self, activation: DVector<f64>) -> Self {
        self.activation = Some(activation);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CostModel {
    pub terms: Vec<CostTerm>,
    pub is_terminal: bool,
}

/// Cost value with Gauss–Newton derivatives in the tangent space.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEval {
    pub value: f64,
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub lux: DMatrix<f64>,
    pub luu: DMatrix<f64>,
}

impl CostEval {
    fn zeros(ndx: usize, nu: usize) -> Self {
        Self {
            value: 0.0,
            lx: DVector::zeros(ndx),
            lu: DVector::zeros(nu),
            lxx: DMatrix::zeros(ndx, ndx),
            lux: DMatrix::zeros(nu, ndx),
            luu: DMatrix::zeros(nu, nu),
        }
    }

    fn scale(&mut self, s: f64) {
        self.value *= s;
        self.lx *= s;
        self.lu *= s;
        self.lxx *= s;
        self.lux *= s;
        self.luu *= s;
    }
}

impl CostModel {
    pub fn new(terms: Vec<CostTerm>, is_terminal: bool) -> Result<Self> {
        let m = Self { terms, is_terminal };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.terms {
            if !(t.weight >= 0.0) {
                return Err(Error::InvalidArgument(format!("cost `{}` has a negative weight", t.name)));
            }
            if self.is_terminal && matches!(t.kind, CostKind::TorqueReg | CostKind::TorqueTracking { .. }) {
                return Err(Error::InvalidArgument("terminal cost models carry no torque regularisation".into()));
            }
        }
        Ok(())
    }
}

/// `Σ α‖r‖²_W` with Gauss–Newton derivatives.
pub fn evaluate_cost(space: &StateSpace, model: &CostModel, x: &DVector<f64>, u: &DVector<f64>) -> Result<CostEval> {
    check_dim("state", space.nx(), x.len())?;
    let ndx = space.ndx();
    let nu = u.len();
    let mut out = CostEval::zeros(ndx, nu);
    let kin = match space {
        StateSpace::Multibody(t)
            if model.terms.iter().any(|c| matches!(c.kind, CostKind::ComTarget { .. } | CostKind::FrameTracking { .. })) =>
        {
            Some(t.kinematics(&space.split(x).0, None)?)
        }
        _ => None,
    };
    for term in &model.terms {
        if term.weight == 0.0 {
            continue;
        }
        // residual r, state Jacobian rx (rows × ndx); control residuals handled separately
        let (r, rx): (DVector<f64>, DMatrix<f64>) = match &term.kind {
            CostKind::TorqueReg | CostKind::TorqueTracking { .. } => {
                let w = activation(term, nu)?;
                let a = term.weight;
                let du = match &term.kind {
                    CostKind::TorqueTracking { reference } => {
                        check_dim("torque reference", nu, reference.len())?;
                        u - reference
                    }
                    _ => u.clone(),
                };
                let wu = du.component_mul(&w);
                out.value += a * du.dot(&wu);
                out.lu += &wu * (2.0 * a);
                for i in 0..nu {
                    out.luu[(i, i)] += 2.0 * a * w[i];
                }
                continue;
            }
            CostKind::ComTarget { reference } => {
                let t = space.tree().ok_or_else(|| Error::InvalidArgument("CoM cost needs a multibody state".into()))?;
                let kin = kin.as_ref().expect("kinematics computed for CoM cost");
                let c = t.com_with(kin)?;
                let jc = t.com_jacobian_with(kin)?;
                let mut rx = DMatrix::zeros(3, ndx);
                rx.view_mut((0, 0), (3, t.nv())).copy_from(&jc);
                (DVector::from_column_slice((c - reference).as_slice()), rx)
            }
            CostKind::PostureReg { reference } => {
                check_dim("posture reference", space.nx(), reference.len())?;
                (space.diff(reference, x)?, space.diff_jacobian(reference, x)?)
            }
            CostKind::FrameTracking { frame, reference } => {
                let t = space.tree().ok_or_else(|| Error::InvalidArgument("frame cost needs a multibody state".into()))?;
                let kin = kin.as_ref().expect("kinematics computed for frame cost");
                let xf = kin.frame_placement(t, *frame)?;
                let jf = kin.frame_jacobian(t, *frame)?;
                let e = log_so3(&(reference.rotation.transpose() * xf.rotation));
                let mut r = DVector::zeros(6);
                r.rows_mut(0, 3).copy_from(&(xf.translation - reference.translation));
                r.rows_mut(3, 3).copy_from(&e);
                let nv = t.nv();
                let mut rx = DMatrix::zeros(6, ndx);
                rx.view_mut((0, 0), (3, nv)).copy_from(&jf.rows(3, 3));
                let rot = right_jacobian_inv_so3(&-e) * reference.rotation.transpose();
                rx.view_mut((3, 0), (3, nv)).copy_from(&(rot * jf.rows(0, 3)));
                (r, rx)
            }
        };
        let w = activation(term, r.len())?;
        let a = term.weight;
        let wr = r.component_mul(&w);
        out.value += a * r.dot(&wr);
        out.lx += rx.tr_mul(&wr) * (2.0 * a);
        let mut wrx = rx.clone();
        for (i, mut row) in wrx.row_iter_mut().enumerate() {
            row *= w[i];
        }
        out.lxx += rx.tr_mul(&wrx) * (2.0 * a);
    }
    Ok(out)
}

fn activation(term: &CostTerm, n: usize) -> Result<DVector<f64>> {
    match &term.activation {
        Some(w) => {
            check_dim(&format!("activation of `{}`", term.name), n, w.len())?;
            Ok(w.clone())
        }
        None => Ok(DVector::from_element(n, 1.0)),
    }
}

/// One shooting interval: dynamics, cost and control bounds.
#[derive(Debug, Clone)]
pub struct ActionModel {
    pub space: StateSpace,
    pub dynamics: Dynamics,
    pub cost: CostModel,
    pub dt: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// Stage derivatives; terminal nodes have empty control blocks.
#[derive(Debug, Clone)]
pub struct NodeDerivatives {
    pub fx: DMatrix<f64>,
    pub fu: DMatrix<f64>,
    pub cost: CostEval,
}

impl ActionModel {
    pub fn new(space: StateSpace, dynamics: Dynamics, cost: CostModel, dt: f64, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument("time step must be positive".into()));
        }
        check_dim("control bounds", lower.len(), upper.len())?;
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument("control lower bound exceeds upper bound".into()));
        }
        cost.validate()?;
        match &dynamics {
            Dynamics::Multibody { actuated, .. } => {
                let t = space.tree().ok_or_else(|| Error::InvalidArgument("multibody dynamics need a multibody state".into()))?;
                check_dim("actuated coordinates", lower.len(), actuated.len())?;
                if actuated.iter().any(|&i| i >= t.nv()) {
                    return Err(Error::InvalidArgument("actuated index out of range".into()));
                }
            }
            Dynamics::Linear { a, b, c } => {
                let n = space.ndx();
                if a.shape() != (n, n) || b.shape() != (n, lower.len()) || c.len() != n || space.tree().is_some() {
                    return Err(Error::InvalidArgument("linear dynamics dimensions do not match the state".into()));
                }
            }
        }
        Ok(Self { space, dynamics, cost, dt, lower, upper })
    }

    /// A cost-only model for the final node.
    pub fn terminal(space: StateSpace, cost: CostModel) -> Result<Self> {
        let mut cost = cost;
        cost.is_terminal = true;
        cost.validate()?;
        let n = space.ndx();
        let dynamics = match &space {
            StateSpace::Multibody(_) => Dynamics::Multibody { contacts: ContactSet::empty(), actuated: vec![] },
            StateSpace::Euclidean(_) => Dynamics::Linear { a: DMatrix::identity(n, n), b: DMatrix::zeros(n, 0), c: DVector::zeros(n) },
        };
        Ok(Self { space, dynamics, cost, dt: 1.0, lower: DVector::zeros(0), upper: DVector::zeros(0) })
    }

    pub fn nu(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(u.len(), u.iter().enumerate().map(|(i, &x)| x.clamp(self.lower[i], self.upper[i])))
    }

    /// Generalized forces `Sᵀu`.
    pub fn generalized_force(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        match (&self.dynamics, self.space.tree()) {
            (Dynamics::Multibody { actuated, .. }, Some(t)) => {
                check_dim("control", actuated.len(), u.len())?;
                let mut tau = DVector::zeros(t.nv());
                for (k, &i) in actuated.iter().enumerate() {
                    tau[i] = u[k];
                }
                Ok(tau)
            }
            _ => Err(Error::InvalidArgument("generalized force needs multibody dynamics".into())),
        }
    }

    /// Constrained accelerations and contact forces at `(x, u)`.
    pub fn acceleration(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<ConstrainedAccelResult> {
        let t = self.space.tree().ok_or_else(|| Error::InvalidArgument("acceleration needs multibody dynamics".into()))?;
        let Dynamics::Multibody { contacts, .. } = &self.dynamics else {
            return Err(Error::InvalidArgument("acceleration needs multibody dynamics".into()));
        };
        let (q, v) = self.space.split(x);
        let kin = t.kinematics(&q, Some(&v))?;
        forward_dynamics_with(t, &kin, &self.generalized_force(u)?, contacts)
    }

    /// Stage cost `l(x, u)·dt` for running models, `l_N(x)` for terminal ones.
    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<CostEval> {
        let mut c = evaluate_cost(&self.space, &self.cost, x, u)?;
        if !self.cost.is_terminal {
            c.scale(self.dt);
        }
        Ok(c)
    }

    pub fn derivatives(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<NodeDerivatives> {
        let cost = self.stage_cost(x, u)?;
        let ndx = self.space.ndx();
        if self.cost.is_terminal {
            return Ok(NodeDerivatives { fx: DMatrix::zeros(ndx, ndx), fu: DMatrix::zeros(ndx, 0), cost });
        }
        if let Dynamics::Linear { a, b, .. } = &self.dynamics {
            return Ok(NodeDerivatives { fx: a.clone(), fu: b.clone(), cost });
        }
        let f0 = integrate_action(self, x, u)?;
        let h = FD_STEP;
        let mut fx = DMatrix::zeros(ndx, ndx);
        let mut dx = DVector::zeros(ndx);
        for j in 0..ndx {
            dx[j] = h;
            let fp = integrate_action(self, &self.space.integrate(x, &dx)?, u)?;
            dx[j] = -h;
            let fm = integrate_action(self, &self.space.integrate(x, &dx)?, u)?;
            dx[j] = 0.0;
            let col = (self.space.diff(&f0, &fp)? - self.space.diff(&f0, &fm)?) / (2.0 * h);
            fx.set_column(j, &col);
        }
        let nu = self.nu();
        let mut fu = DMatrix::zeros(ndx, nu);
        let mut up = u.clone();
        for j in 0..nu {
            up[j] = u[j] + h;
            let fp = integrate_action(self, x, &up)?;
            up[j] = u[j] - h;
            let fm = integrate_action(self, x, &up)?;
            up[j] = u[j];
            fu.set_column(j, &((self.space.diff(&f0, &fp)? - self.space.diff(&f0, &fm)?) / (2.0 * h)));
        }
        Ok(NodeDerivatives { fx, fu, cost })
    }
}

/// Semi-implicit Euler step: `v⁺ = v + q̈ dt`, `q⁺ = q ⊕ v⁺ dt`.
pub fn integrate_action(model: &ActionModel, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("control", model.nu(), u.len())?;
    match &model.dynamics {
        Dynamics::Linear { a, b, c } => Ok(a * x + b * u + c),
        Dynamics::Multibody { .. } => {
            let t = model.space.tree().expect("validated multibody model");
            let acc = model.acceleration(x, u)?;
            let (q, v) = model.space.split(x);
            let v1 = v + acc.qdd * model.dt;
            let q1 = t.integrate(&q, &(&v1 * model.dt))?;
            let out = StateSpace::join(&q1, &v1);
            if out.iter().any(|z| !z.is_finite()) {
                return Err(Error::NumericalFailure("integrated state".into()));
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShootingProblem {
    pub x0: DVector<f64>,
    pub running: Vec<ActionModel>,
    pub terminal: ActionModel,
}

impl ShootingProblem {
    pub fn new(x0: DVector<f64>, running: Vec<ActionModel>, terminal: ActionModel) -> Result<Self> {
        if running.is_empty() {
            return Err(Error::InvalidArgument("a shooting problem needs at least one node".into()));
        }
        let nx = terminal.space.nx();
        let ndx = terminal.space.ndx();
        check_dim("initial state", nx, x0.len())?;
        for m in &running {
            check_dim("node state", nx, m.space.nx())?;
            check_dim("node tangent", ndx, m.space.ndx())?;
        }
        if !terminal.cost.is_terminal {
            return Err(Error::InvalidArgument("terminal model must carry a terminal cost".into()));
        }
        Ok(Self { x0, running, terminal })
    }

    pub fn horizon(&self) -> usize {
        self.running.len()
    }

    pub fn space(&self) -> &StateSpace {
        &self.terminal.space
    }

    /// Total cost `Σ l_i dt + l_N`.
    pub fn cost(&self, xs: &[DVector<f64>], us: &[DVector<f64>]) -> Result<f64> {
        check_dim("state trajectory", self.horizon() + 1, xs.len())?;
        check_dim("control trajectory", self.horizon(), us.len())?;
        let mut c = 0.0;
        for (i, m) in self.running.iter().enumerate() {
            c += evaluate_cost(&m.space, &m.cost, &xs[i], &us[i])?.value * m.dt;
        }
        Ok(c + evaluate_cost(&self.terminal.space, &self.terminal.cost, &xs[self.horizon()], &DVector::zeros(0))?.value)
    }

    /// Forward simulation from `x0` under `us`.
    pub fn rollout(&self, us: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        check_dim("control trajectory", self.horizon(), us.len())?;
        let mut xs = Vec::with_capacity(self.horizon() + 1);
        xs.push(self.x0.clone());
        for (i, m) in self.running.iter().enumerate() {
            let next = integrate_action(m, &xs[i], &us[i])?;
            xs.push(next);
        }
        Ok(xs)
    }
}

/// Derivatives at every node, the terminal node last.
pub fn problem_derivatives(problem: &ShootingProblem, xs: &[DVector<f64>], us: &[DVector<f64>]) -> Result<Vec<NodeDerivatives>> {
    check_dim("state trajectory", problem.horizon() + 1, xs.len())?;
    check_dim("control trajectory", problem.horizon(), us.len())?;
    let mut out = Vec::with_capacity(xs.len());
    for (i, m) in problem.running.iter().enumerate() {
        let d = m.derivatives(&xs[i], &us[i])?;
        if d.fx.iter().chain(d.fu.iter()).any(|z| !z.is_finite()) {
            return Err(Error::NumericalFailure(format!("dynamics derivatives at node {i}")));
        }
        out.push(d);
    }
    out.push(problem.terminal.derivatives(&xs[problem.horizon()], &DVector::zeros(0))?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constrained::{ContactKind, ContactSpec};
    use crate::treedyn::test_models::*;
    use approx::assert_relative_eq;
    use rand::{rngs::StdRng, SeedableRng};

    fn mixed_space() -> (Arc<RigidBodyTree>, StateSpace) {
        let t = Arc::new(mixed_tree());
        (t.clone(), StateSpace::Multibody(t))
    }

    fn random_state(t: &RigidBodyTree, rng: &mut StdRng) -> DVector<f64> {
        StateSpace::join(&random_configuration(t, rng), &random_vector(t.nv(), 1.0, rng))
    }

    fn all_terms(t: &RigidBodyTree, rng: &mut StdRng, nu: usize) -> CostModel {
        let xref = random_state(t, rng);
        let frame = t.frame_id("tool").unwrap();
        let reference = t.frame_placement(&random_configuration(t, rng), frame).unwrap();
        CostModel::new(
            vec![
                CostTerm::new("com", CostKind::ComTarget { reference: Vector3::new(0.1, -0.2, 0.5) }, 3.0)
                    .with_activation(DVector::from_vec(vec![1.0, 1.0, 0.0])),
                CostTerm::new("tau", CostKind::TorqueReg, 0.5).with_activation(DVector::from_fn(nu, |i, _| 1.0 + i as f64)),
                CostTerm::new("hold", CostKind::TorqueTracking { reference: DVector::from_fn(nu, |i, _| 0.3 - 0.2 * i as f64) }, 0.7),
                CostTerm::new("posture", CostKind::PostureReg { reference: xref }, 2.0),
                CostTerm::new("foot", CostKind::FrameTracking { frame, reference }, 7.0),
            ],
            false,
        )
        .unwrap()
    }

    #[test]
    fn state_diff_and_integrate_are_inverse() {
        let (t, space) = mixed_space();
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..20 {
            let x = random_state(&t, &mut rng);
            let dx = random_vector(space.ndx(), 0.5, &mut rng);
            let y = space.integrate(&x, &dx).unwrap();
            assert!((space.diff(&x, &y).unwrap() - &dx).amax() < 1e-10);
        }
    }

    #[test]
    fn diff_jacobian_matches_finite_differences() {
        let (t, space) = mixed_space();
        let mut rng = StdRng::seed_from_u64(22);
        let x0 = random_state(&t, &mut rng);
        let x1 = random_state(&t, &mut rng);
        let j = space.diff_jacobian(&x0, &x1).unwrap();
        let h = 1e-6;
        for k in 0..space.ndx() {
            let mut d = DVector::zeros(space.ndx());
            d[k] = h;
            let p = space.diff(&x0, &space.integrate(&x1, &d).unwrap()).unwrap();
            d[k] = -h;
            let m = space.diff(&x0, &space.integrate(&x1, &d).unwrap()).unwrap();
            assert!((j.column(k) - (p - m) / (2.0 * h)).amax() < 1e-6);
        }
    }

    #[test]
    fn cost_is_zero_at_reference() {
        let (t, space) = mixed_space();
        let mut rng = StdRng::seed_from_u64(23);
        let x = random_state(&t, &mut rng);
        let (q, _) = space.split(&x);
        let frame = t.frame_id("tool").unwrap();
        let model = CostModel::new(
            vec![
                CostTerm::new("com", CostKind::ComTarget { reference: t.com_position(&q).unwrap() }, 1.0),
                CostTerm::new("tau", CostKind::TorqueReg, 1.0),
                CostTerm::new("posture", CostKind::PostureReg { reference: x.clone() }, 1.0),
                CostTerm::new("foot", CostKind::FrameTracking { frame, reference: t.frame_placement(&q, frame).unwrap() }, 1.0),
            ],
            false,
        )
        .unwrap();
        let c = evaluate_cost(&space, &model, &x, &DVector::zeros(3)).unwrap();
        assert!(c.value < 1e-20);
        assert!(c.lx.amax() < 1e-10 && c.lu.amax() == 0.0);
    }

    #[test]
    fn posture_cost_ignores_quaternion_sign() {
        let (t, space) = mixed_space();
        let mut rng = StdRng::seed_from_u64(24);
        let x = random_state(&t, &mut rng);
        let mut flipped = x.clone();
        for i in 3..7 {
            flipped[i] = -flipped[i];
        }
        let model = CostModel::new(vec![CostTerm::new("posture", CostKind::PostureReg { reference: x.clone() }, 1.0)], false).unwrap();
        assert_eq!(evaluate_cost(&space, &model, &flipped, &DVector::zeros(0)).unwrap().value, 0.0);
    }

    #[test]
    fn torque_regulariser_is_squared_norm() {
        let space = StateSpace::Euclidean(2);
        let model = CostModel::new(vec![CostTerm::new("tau", CostKind::TorqueReg, 1.0)], false).unwrap();
        let u = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let c = evaluate_cost(&space, &model, &DVector::zeros(2), &u).unwrap();
        assert_relative_eq!(c.value, u.norm_squared(), epsilon = 1e-15);
    }

    #[test]
    fn zero_weight_terms_do_not_change_the_cost() {
        let (t, space) = mixed_space();
        let mut rng = StdRng::seed_from_u64(25);
        let mut model = all_terms(&t, &mut rng, 3);
        let x = random_state(&t, &mut rng);
        let u = random_vector(3, 1.0, &mut rng);
        let before = evaluate_cost(&space, &model, &x, &u).unwrap();
        model.terms.push(CostTerm::new("extra", CostKind::ComTarget { reference: Vector3::new(9.0, 9.0, 9.0) }, 0.0));
        assert_eq!(evaluate_cost(&space, &model, &x, &u).unwrap(), before);
    }

    #[test]
    fn cost_gradients_match_finite_differences() {
        let (t, space) = mixed_space();
        let mut rng = StdRng::seed_from_u64(26);
        let h = 1e-6;
        for _ in 0..5 {
            let model = all_terms(&t, &mut rng, 3);
            let x = random_state(&t, &mut rng);
            let u = random_vector(3, 1.0, &mut rng);
            let c = evaluate_cost(&space, &model, &x, &u).unwrap();
            let scale = 1.0 + c.lx.amax();
            for k in 0..space.ndx() {
                let mut d = DVector::zeros(space.ndx());
                d[k] = h;
                let p = evaluate_cost(&space, &model, &space.integrate(&x, &d).unwrap(), &u).unwrap().value;
                d[k] = -h;
                let m = evaluate_cost(&space, &model, &space.integrate(&x, &d).unwrap(), &u).unwrap().value;
                assert!(((p - m) / (2.0 * h) - c.lx[k]).abs() < 1e-5 * scale, "component {k}");
            }
            for k in 0..3 {
                let mut du = u.clone();
                du[k] += h;
                let p = evaluate_cost(&space, &model, &x, &du).unwrap().value;
                du[k] -= 2.0 * h;
                let m = evaluate_cost(&space, &model, &x, &du).unwrap().value;
                assert!(((p - m) / (2.0 * h) - c.lu[k]).abs() < 1e-5 * scale);
            }
            assert!((&c.lxx - c.lxx.transpose()).amax() < 1e-12);
            let eig = nalgebra::SymmetricEigen::new(c.lxx.clone()).eigenvalues;
            assert!(eig.min() >= -1e-10 * (1.0 + eig.amax()));
        }
    }

    #[test]
    fn terminal_models_reject_torque_terms() {
        assert!(CostModel::new(vec![CostTerm::new("tau", CostKind::TorqueReg, 1.0)], true).is_err());
        assert!(CostModel::new(vec![CostTerm::new("tau", CostKind::TorqueReg, -1.0)], false).is_err());
    }

    fn pendulum_model(dt: f64) -> ActionModel {
        let t = Arc::new(pendulum(1.0, 1.0));
        let space = StateSpace::Multibody(t);
        ActionModel::new(
            space,
            Dynamics::Multibody { contacts: ContactSet::empty(), actuated: vec![0] },
            CostModel::default(),
            dt,
            DVector::from_element(1, f64::NEG_INFINITY),
            DVector::from_element(1, f64::INFINITY),
        )
        .unwrap()
    }

    #[test]
    fn free_drift_advances_linearly() {
        let mut t = RigidBodyTree::new();
        t.gravity = Vector3::zeros();
        t.add_body(
            "ball",
            None,
            "root",
            crate::treedyn::JointModel::floating(FramePlacement::identity()),
            crate::spatial::RigidBodyInertia::sphere(1.0, 0.1, Vector3::zeros()),
        )
        .unwrap();
        let space = StateSpace::Multibody(Arc::new(t));
        let m = ActionModel::new(
            space.clone(),
            Dynamics::Multibody { contacts: ContactSet::empty(), actuated: vec![] },
            CostModel::default(),
            0.1,
            DVector::zeros(0),
            DVector::zeros(0),
        )
        .unwrap();
        let mut x = DVector::zeros(13);
        x[3] = 1.0;
        x[10] = 1.0;
        for _ in 0..10 {
            x = integrate_action(&m, &x, &DVector::zeros(0)).unwrap();
        }
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        let mut spin = DVector::zeros(13);
        spin[3] = 1.0;
        spin[7] = 0.3;
        spin[8] = -2.0;
        spin[9] = 1.1;
        for _ in 0..100 {
            spin = integrate_action(&m, &spin, &DVector::zeros(0)).unwrap();
        }
        let n = (spin[3].powi(2) + spin[4].powi(2) + spin[5].powi(2) + spin[6].powi(2)).sqrt();
        assert!((n - 1.0).abs() < 1e-10);
    }

    #[test]
    fn semi_implicit_euler_is_first_order() {
        let t = pendulum(1.0, 1.0);
        let x0 = DVector::from_vec(vec![0.8, 0.0]);
        let horizon = 0.5;
        let (mut q, mut v) = (DVector::from_vec(vec![0.8]), DVector::from_vec(vec![0.0]));
        for _ in 0..5000 {
            (q, v) = crate::constrained::rk4_step(&t, &q, &v, &DVector::zeros(1), &ContactSet::empty(), 1e-4).unwrap();
        }
        let err = |dt: f64| {
            let m = pendulum_model(dt);
            let mut x = x0.clone();
            for _ in 0..(horizon / dt).round() as usize {
                x = integrate_action(&m, &x, &DVector::zeros(1)).unwrap();
            }
            (x[0] - q[0]).abs()
        };
        let (e1, e2, e3) = (err(0.01), err(0.005), err(0.0025));
        let s1 = (e1 / e2).log2();
        let s2 = (e2 / e3).log2();
        assert!((0.8..1.3).contains(&s1) && (0.8..1.3).contains(&s2), "slopes {s1} {s2}");
    }

    #[test]
    fn linear_model_derivatives_are_its_matrices() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.005, 0.1]);
        let m = ActionModel::new(
            StateSpace::Euclidean(2),
            Dynamics::Linear { a: a.clone(), b: b.clone(), c: DVector::zeros(2) },
            CostModel::default(),
            0.1,
            DVector::from_element(1, -1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let d = m.derivatives(&DVector::from_vec(vec![0.3, -1.0]), &DVector::from_vec(vec![0.2])).unwrap();
        assert_eq!(d.fx, a);
        assert_eq!(d.fu, b);
    }

    #[test]
    fn multibody_derivatives_match_directional_differences() {
        let (t, space) = mixed_space();
        let frame = t.frame_id("tool").unwrap();
        let contacts = ContactSet::new(vec![ContactSpec::new(frame, ContactKind::Point3d)]).unwrap();
        let m = ActionModel::new(
            space.clone(),
            Dynamics::Multibody { contacts, actuated: vec![6, 7, 8] },
            CostModel::default(),
            0.01,
            DVector::from_element(3, -10.0),
            DVector::from_element(3, 10.0),
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(27);
        let x = random_state(&t, &mut rng);
        let u = random_vector(3, 1.0, &mut rng);
        let d = m.derivatives(&x, &u).unwrap();
        let dx = random_vector(space.ndx(), 1.0, &mut rng);
        let du = random_vector(3, 1.0, &mut rng);
        let h = 1e-5;
        let f0 = integrate_action(&m, &x, &u).unwrap();
        let fp = integrate_action(&m, &space.integrate(&x, &(&dx * h)).unwrap(), &(&u + &du * h)).unwrap();
        let fm = integrate_action(&m, &space.integrate(&x, &(&dx * -h)).unwrap(), &(&u - &du * h)).unwrap();
        let fd = (space.diff(&f0, &fp).unwrap() - space.diff(&f0, &fm).unwrap()) / (2.0 * h);
        let lin = &d.fx * &dx + &d.fu * &du;
        assert!((&fd - &lin).amax() <= 1e-4 * (1.0 + lin.amax()));
        let term = ActionModel::terminal(space, CostModel::default()).unwrap();
        assert_eq!(term.derivatives(&x, &DVector::zeros(0)).unwrap().fu.ncols(), 0);
    }
}
