use nalgebra::{DMatrix, DVector};

use super::analytical::AnalyticalPlan;
use super::implicit::ImplicitConstraint;
use crate::error::{check_dim, Error, Result};

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITERS: usize = 50;
const MIN_STEP: f64 = 1.0 / 64.0;
const PIVOT_TOL: f64 = 1e-12;
const ANALYTICAL_TOL: f64 = 1e-8;
const IDLE_TOL: f64 = 1e-9;
const CONTINUATION_STEPS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum ResolverKind {
    Analytical(AnalyticalPlan),
    Numerical,
}

/// Loop-closure resolver of one submechanism.
///
/// Local coordinates split into independent ones (pinned to `y`), determined ones (one
/// per constraint row, solved for) and idle ones. Idle coordinates have identically
/// zero constraint columns, such as a leg spinning about its own axis, and stay at the
/// reference value.
#[derive(Debug, Clone)]
pub struct SubmechanismResolver {
    pub name: String,
    pub kind: ResolverKind,
    implicit: ImplicitConstraint,
    /// Global spanning-tree index of each local coordinate.
    tree_joints: Vec<usize>,
    /// Local coordinate of each local independent coordinate.
    local_independent: Vec<usize>,
    /// Global independent index of each local independent coordinate.
    independent_joints: Vec<usize>,
    determined: Vec<usize>,
    idle: Vec<usize>,
    reference: DVector<f64>,
}

/// Solution of one submechanism with the Newton iteration count (0 for analytical).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub q: DVector<f64>,
    pub iterations: usize,
}

impl SubmechanismResolver {
    pub fn new(
        name: impl Into<String>,
        kind: ResolverKind,
        implicit: ImplicitConstraint,
        tree_joints: Vec<usize>,
        local_independent: Vec<usize>,
        independent_joints: Vec<usize>,
        reference: DVector<f64>,
    ) -> Result<Self> {
        let name = name.into();
        let n = implicit.dim();
        check_dim("submechanism tree joints", n, tree_joints.len())?;
        check_dim("submechanism independent joints", local_independent.len(), independent_joints.len())?;
        check_dim("submechanism reference", n, reference.len())?;
        let mut seen = vec![false; n];
        for &i in &local_independent {
            if i >= n || seen[i] {
                return Err(Error::InvalidArgument(format!("`{name}`: bad independent coordinate {i}")));
            }
            seen[i] = true;
        }
        let residual = implicit.residual(&reference)?.amax();
        if residual > ANALYTICAL_TOL {
            return Err(Error::InvalidArgument(format!("`{name}`: reference posture violates closure by {residual:.3e}")));
        }
        let k = implicit.jacobian(&reference)?;
        let (mut determined, mut idle) = (Vec::new(), Vec::new());
        for i in (0..n).filter(|&i| !seen[i]) {
            if k.column(i).amax() < IDLE_TOL {
                idle.push(i);
            } else {
                determined.push(i);
            }
        }
        if determined.len() != implicit.rows() {
            return Err(Error::InvalidArgument(format!(
                "`{name}`: {} determined coordinates for {} constraint rows",
                determined.len(),
                implicit.rows()
            )));
        }
        if let ResolverKind::Analytical(plan) = &kind {
            plan.validate(implicit.tree())?;
        }
        let r = Self { name, kind, implicit, tree_joints, local_independent, independent_joints, determined, idle, reference };
        if let ResolverKind::Analytical(_) = r.kind {
            let y = r.local_y(&r.reference);
            let back = r.resolve(&y, None)?;
            let err = (&back.q - &r.reference).amax();
            if err > 1e-8 {
                return Err(Error::InvalidArgument(format!("`{}`: plan misses the reference posture by {err:.3e}", r.name)));
            }
        }
        Ok(r)
    }

    pub fn implicit(&self) -> &ImplicitConstraint {
        &self.implicit
    }

    pub fn tree_joints(&self) -> &[usize] {
        &self.tree_joints
    }

    pub fn independent_joints(&self) -> &[usize] {
        &self.independent_joints
    }

    pub fn local_independent(&self) -> &[usize] {
        &self.local_independent
    }

    pub fn determined(&self) -> &[usize] {
        &self.determined
    }

    pub fn idle(&self) -> &[usize] {
        &self.idle
    }

    pub fn reference(&self) -> &DVector<f64> {
        &self.reference
    }

    pub fn constraint_rows(&self) -> usize {
        self.implicit.rows()
    }

    pub fn local_y(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.local_independent.len(), self.local_independent.iter().map(|&i| q[i]))
    }

    fn seed(&self, y: &DVector<f64>, guess: Option<&DVector<f64>>) -> DVector<f64> {
        let mut q = guess.cloned().unwrap_or_else(|| self.reference.clone());
        for (k, &i) in self.local_independent.iter().enumerate() {
            q[i] = y[k];
        }
        for &i in &self.idle {
            q[i] = self.reference[i];
        }
        q
    }

    /// Local closure `γ(y)`, warm started from `guess` when given.
    pub fn resolve(&self, y: &DVector<f64>, guess: Option<&DVector<f64>>) -> Result<LocalSolution> {
        check_dim("submechanism independent values", self.local_independent.len(), y.len())?;
        if let Some(g) = guess {
            check_dim("submechanism guess", self.implicit.dim(), g.len())?;
        }
        match &self.kind {
            ResolverKind::Analytical(plan) => {
                let mut q = self.seed(y, guess);
                let fail = |residual: f64| Error::ResolutionFailure { submechanism: self.name.clone(), residual, iterations: 0 };
                plan.execute(&self.implicit, &mut q).map_err(fail)?;
                let residual = self.implicit.residual(&q)?.amax();
                if !(residual <= ANALYTICAL_TOL) {
                    return Err(fail(residual));
                }
                Ok(LocalSolution { q, iterations: 0 })
            }
            ResolverKind::Numerical => self.resolve_numerical(y, guess),
        }
    }

    /// Damped Newton on the determined coordinates; falls back to continuation from the
    /// reference posture when the direct attempt fails.
    pub fn resolve_numerical(&self, y: &DVector<f64>, guess: Option<&DVector<f64>>) -> Result<LocalSolution> {
        let mut q = self.seed(y, guess);
        let first = match self.newton(&mut q) {
            Ok(iterations) => return Ok(LocalSolution { q, iterations }),
            Err(e) => e,
        };
        let y0 = self.local_y(&self.reference);
        let mut q = self.reference.clone();
        let mut total = 0;
        for s in 1..=CONTINUATION_STEPS {
            let t = s as f64 / CONTINUATION_STEPS as f64;
            let ys = &y0 + (y - &y0) * t;
            q = self.seed(&ys, Some(&q));
            match self.newton(&mut q) {
                Ok(it) => total += it,
                Err(_) => return Err(first),
            }
        }
        log::debug!("`{}` resolved by continuation", self.name);
        Ok(LocalSolution { q, iterations: total })
    }

    fn newton(&self, q: &mut DVector<f64>) -> Result<usize> {
        let mut phi = self.implicit.residual(q)?;
        let mut norm = phi.amax();
        for it in 0..NEWTON_MAX_ITERS {
            if norm <= NEWTON_TOL {
                return Ok(it);
            }
            if !norm.is_finite() {
                break;
            }
            let k = self.implicit.jacobian(q)?;
            let kd = k.select_columns(&self.determined);
            let lu = kd.lu();
            let pivot = lu.u().diagonal().amin();
            if pivot < PIVOT_TOL {
                return Err(Error::Singularity { submechanism: self.name.clone(), pivot });
            }
            let dq = lu.solve(&(-&phi)).ok_or(Error::Singularity { submechanism: self.name.clone(), pivot })?;
            let mut alpha = 1.0;
            loop {
                let mut trial = q.clone();
                for (k, &i) in self.determined.iter().enumerate() {
                    trial[i] += alpha * dq[k];
                }
                let trial_phi = self.implicit.residual(&trial)?;
                let trial_norm = trial_phi.amax();
                if trial_norm < norm || alpha <= MIN_STEP {
                    *q = trial;
                    phi = trial_phi;
                    norm = trial_norm;
                    break;
                }
                alpha *= 0.5;
            }
        }
        if norm <= NEWTON_TOL {
            return Ok(NEWTON_MAX_ITERS);
        }
        Err(Error::ResolutionFailure { submechanism: self.name.clone(), residual: norm, iterations: NEWTON_MAX_ITERS })
    }

    fn factor(&self, k: &DMatrix<f64>) -> Result<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
        let lu = k.select_columns(&self.determined).lu();
        let pivot = lu.u().diagonal().amin();
        if pivot < PIVOT_TOL {
            return Err(Error::Singularity { submechanism: self.name.clone(), pivot });
        }
        Ok(lu)
    }

    /// Local `G` (local n × local m) at a closed configuration.
    pub fn local_g(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.implicit.dim();
        let m = self.local_independent.len();
        let mut g = DMatrix::zeros(n, m);
        for (k, &i) in self.local_independent.iter().enumerate() {
            g[(i, k)] = 1.0;
        }
        if self.determined.is_empty() {
            return Ok(g);
        }
        let k = self.implicit.jacobian(q)?;
        let lu = self.factor(&k)?;
        let ky = k.select_columns(&self.local_independent);
        let gd = -lu.solve(&ky).ok_or(Error::Singularity { submechanism: self.name.clone(), pivot: 0.0 })?;
        for (r, &i) in self.determined.iter().enumerate() {
            g.row_mut(i).copy_from(&gd.row(r));
        }
        Ok(g)
    }

    /// Local `(G, q̇, g)` at a closed configuration; `g` solves `K_p g_p = k`.
    pub fn local_rates(&self, q: &DVector<f64>, ydot: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
        let g_mat = self.local_g(q)?;
        let qd = &g_mat * ydot;
        let mut g = DVector::zeros(self.implicit.dim());
        if !self.determined.is_empty() {
            let kin = self.implicit.kinematics(q, Some(&qd))?;
            let k = self.implicit.jacobian_with(&kin);
            let drift = self.implicit.drift_with(&kin);
            let lu = self.factor(&k)?;
            let gp = lu.solve(&drift).ok_or(Error::Singularity { submechanism: self.name.clone(), pivot: 0.0 })?;
            for (r, &i) in self.determined.iter().enumerate() {
                g[i] = gp[r];
            }
        }
        Ok((g_mat, qd, g))
    }
}
