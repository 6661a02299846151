//! Loop-closure constraints of series-parallel mechanisms.
//!
//! Each submechanism carries its implicit form `φ(q) = 0`, `K q̇ = 0`, `K q̈ = k` on a
//! small fixed-base tree and resolves the explicit form `q = γ(y)`, `q̇ = G ẏ`,
//! `q̈ = G ÿ + g`. Submechanisms own disjoint coordinate sets, so the whole-robot map
//! is their block-diagonal composition; coordinates outside every loop pass through.

mod analytical;
mod implicit;
mod resolver;

use nalgebra::{DMatrix, DVector};

pub use analytical::{AnalyticalPlan, AnalyticalStep};
pub use implicit::{BodyPoint, CutJoint, ImplicitConstraint};
pub use resolver::{LocalSolution, ResolverKind, SubmechanismResolver, NEWTON_MAX_ITERS, NEWTON_TOL};

use crate::error::{check_dim, Error, Result};

/// Serial composition of submechanism resolvers and pass-through coordinates.
#[derive(Debug, Clone)]
pub struct ExplicitClosureMap {
    resolvers: Vec<SubmechanismResolver>,
    /// `(spanning-tree index, independent index)` of coordinates outside any loop.
    identity: Vec<(usize, usize)>,
    n: usize,
    m: usize,
    n_c: usize,
}

/// Resolved spanning-tree configuration with per-submechanism Newton iteration counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosureSolution {
    pub q: DVector<f64>,
    pub iterations: Vec<usize>,
}

/// Full explicit state `q = γ(y)`, `q̇ = G ẏ`, `q̈ = G ÿ + g`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosureState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
    pub g_matrix: DMatrix<f64>,
    pub iterations: Vec<usize>,
}

/// Worst closure identities of one submechanism at a sampled state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosureCheck {
    pub submechanism: String,
    pub residual: f64,
    pub kg: f64,
    pub kg_drift: f64,
}

impl ExplicitClosureMap {
    pub fn new(resolvers: Vec<SubmechanismResolver>, identity: Vec<(usize, usize)>, n: usize, m: usize) -> Result<Self> {
        let mut q_seen = vec![false; n];
        let mut y_seen = vec![false; m];
        let claim = |seen: &mut [bool], i: usize, what: &str| -> Result<()> {
            if i >= seen.len() || seen[i] {
                return Err(Error::InvalidArgument(format!("{what} index {i} is out of range or claimed twice")));
            }
            seen[i] = true;
            Ok(())
        };
        for r in &resolvers {
            for &i in r.tree_joints() {
                claim(&mut q_seen, i, "spanning-tree")?;
            }
            for &i in r.independent_joints() {
                claim(&mut y_seen, i, "independent")?;
            }
        }
        for &(qi, yi) in &identity {
            claim(&mut q_seen, qi, "spanning-tree")?;
            claim(&mut y_seen, yi, "independent")?;
        }
        if let Some(i) = q_seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("spanning-tree coordinate {i} belongs to no block")));
        }
        if let Some(i) = y_seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("independent coordinate {i} belongs to no block")));
        }
        let n_c = resolvers.iter().map(SubmechanismResolver::constraint_rows).sum();
        Ok(Self { resolvers, identity, n, m, n_c })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn resolvers(&self) -> &[SubmechanismResolver] {
        &self.resolvers
    }

    pub fn identity(&self) -> &[(usize, usize)] {
        &self.identity
    }

    pub fn resolver(&self, name: &str) -> Option<&SubmechanismResolver> {
        self.resolvers.iter().find(|r| r.name == name)
    }

    /// Spanning-tree reference posture (pass-through coordinates at zero).
    pub fn reference(&self) -> DVector<f64> {
        let mut q = DVector::zeros(self.n);
        for r in &self.resolvers {
            for (k, &i) in r.tree_joints().iter().enumerate() {
                q[i] = r.reference()[k];
            }
        }
        q
    }

    /// Independent coordinates `y` read off a spanning-tree configuration.
    pub fn independent_of(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("spanning-tree configuration", self.n, q.len())?;
        let mut y = DVector::zeros(self.m);
        for r in &self.resolvers {
            for (&li, &yi) in r.local_independent().iter().zip(r.independent_joints()) {
                y[yi] = q[r.tree_joints()[li]];
            }
        }
        for &(qi, yi) in &self.identity {
            y[yi] = q[qi];
        }
        Ok(y)
    }

    fn gather(idx: &[usize], v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
    }

    /// `γ(y)` from the reference posture.
    pub fn gamma(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.resolve(y, None)?.q)
    }

    /// `γ(y)` warm started from a previous spanning-tree solution.
    pub fn resolve(&self, y: &DVector<f64>, guess: Option<&DVector<f64>>) -> Result<ClosureSolution> {
        check_dim("independent coordinates", self.m, y.len())?;
        if let Some(g) = guess {
            check_dim("closure guess", self.n, g.len())?;
        }
        let mut q = DVector::zeros(self.n);
        let mut iterations = Vec::with_capacity(self.resolvers.len());
        for r in &self.resolvers {
            let yl = Self::gather(r.independent_joints(), y);
            let gl = guess.map(|g| Self::gather(r.tree_joints(), g));
            let sol = r.resolve(&yl, gl.as_ref())?;
            for (k, &i) in r.tree_joints().iter().enumerate() {
                q[i] = sol.q[k];
            }
            iterations.push(sol.iterations);
        }
        for &(qi, yi) in &self.identity {
            q[qi] = y[yi];
        }
        Ok(ClosureSolution { q, iterations })
    }

    /// `G` at a closed spanning-tree configuration.
    pub fn g_matrix_at(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("spanning-tree configuration", self.n, q.len())?;
        let mut g = DMatrix::zeros(self.n, self.m);
        for r in &self.resolvers {
            let gl = r.local_g(&Self::gather(r.tree_joints(), q))?;
            for (li, &qi) in r.tree_joints().iter().enumerate() {
                for (lj, &yj) in r.independent_joints().iter().enumerate() {
                    g[(qi, yj)] = gl[(li, lj)];
                }
            }
        }
        for &(qi, yi) in &self.identity {
            g[(qi, yi)] = 1.0;
        }
        Ok(g)
    }

    pub fn g_matrix(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.g_matrix_at(&self.gamma(y)?)
    }

    /// `g = Ġ ẏ` at a closed spanning-tree configuration.
    pub fn g_drift_at(&self, q: &DVector<f64>, ydot: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.rates_at(q, ydot)?.2)
    }

    pub fn g_drift(&self, y: &DVector<f64>, ydot: &DVector<f64>) -> Result<DVector<f64>> {
        self.g_drift_at(&self.gamma(y)?, ydot)
    }

    fn rates_at(&self, q: &DVector<f64>, ydot: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
        check_dim("spanning-tree configuration", self.n, q.len())?;
        check_dim("independent velocity", self.m, ydot.len())?;
        let mut g_mat = DMatrix::zeros(self.n, self.m);
        let mut qd = DVector::zeros(self.n);
        let mut g = DVector::zeros(self.n);
        for r in &self.resolvers {
            let yd = Self::gather(r.independent_joints(), ydot);
            let (gl, qdl, gdl) = r.local_rates(&Self::gather(r.tree_joints(), q), &yd)?;
            for (li, &qi) in r.tree_joints().iter().enumerate() {
                qd[qi] = qdl[li];
                g[qi] = gdl[li];
                for (lj, &yj) in r.independent_joints().iter().enumerate() {
                    g_mat[(qi, yj)] = gl[(li, lj)];
                }
            }
        }
        for &(qi, yi) in &self.identity {
            g_mat[(qi, yi)] = 1.0;
            qd[qi] = ydot[yi];
        }
        Ok((g_mat, qd, g))
    }

    /// Resolves positions, velocities and accelerations in one pass.
    pub fn closure_state(
        &self,
        y: &DVector<f64>,
        ydot: &DVector<f64>,
        yddot: &DVector<f64>,
        guess: Option<&DVector<f64>>,
    ) -> Result<ClosureState> {
        check_dim("independent acceleration", self.m, yddot.len())?;
        let sol = self.resolve(y, guess)?;
        let (g_matrix, qd, g) = self.rates_at(&sol.q, ydot)?;
        let qdd = &g_matrix * yddot + g;
        Ok(ClosureState { q: sol.q, qd, qdd, g_matrix, iterations: sol.iterations })
    }

    /// Largest closure residual over all submechanisms.
    pub fn max_residual(&self, q: &DVector<f64>) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for r in &self.resolvers {
            worst = worst.max(r.implicit().residual(&Self::gather(r.tree_joints(), q))?.amax());
        }
        Ok(worst)
    }

    /// Per-block `‖φ‖∞`, `‖K G‖∞` and `‖K g − k‖∞` at a closed state.
    pub fn check_identities(&self, q: &DVector<f64>, ydot: &DVector<f64>) -> Result<Vec<ClosureCheck>> {
        let (g_mat, qd, g) = self.rates_at(q, ydot)?;
        let mut out = Vec::with_capacity(self.resolvers.len());
        for r in &self.resolvers {
            let tj = r.tree_joints();
            let ql = Self::gather(tj, q);
            let qdl = Self::gather(tj, &qd);
            let gl = Self::gather(tj, &g);
            let c = r.implicit();
            let kin = c.kinematics(&ql, Some(&qdl))?;
            let k = c.jacobian_with(&kin);
            let gm = g_mat.select_rows(tj);
            out.push(ClosureCheck {
                submechanism: r.name.clone(),
                residual: c.residual_with(&kin).amax(),
                kg: (&k * gm).amax(),
                kg_drift: (&k * gl - c.drift_with(&kin)).amax(),
            });
        }
        Ok(out)
    }
}

/// Selection of the actuated spanning-tree coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuationMap {
    selection: Vec<usize>,
    n: usize,
}

const ACTUATION_RCOND: f64 = 1e-9;

impl ActuationMap {
    pub fn new(selection: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in &selection {
            if i >= n || seen[i] {
                return Err(Error::InvalidArgument(format!("actuated index {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        Ok(Self { selection, n })
    }

    pub fn p(&self) -> usize {
        self.selection.len()
    }

    pub fn selection(&self) -> &[usize] {
        &self.selection
    }

    /// The p×n selection matrix `S`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.p(), self.n);
        for (r, &i) in self.selection.iter().enumerate() {
            s[(r, i)] = 1.0;
        }
        s
    }

    pub fn select(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.p(), self.selection.iter().map(|&i| q[i]))
    }

    /// Actuator efforts with `τ_y = (S G)ᵀ τ_act`, least squares when not square.
    pub fn forces(&self, g_matrix: &DMatrix<f64>, tau_y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("G rows", self.n, g_matrix.nrows())?;
        check_dim("independent forces", g_matrix.ncols(), tau_y.len())?;
        let sg = g_matrix.select_rows(&self.selection);
        let svd = sg.transpose().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > ACTUATION_RCOND * smax.max(1.0)) {
            return Err(Error::ActuationSingular { sigma: smin });
        }
        svd.solve(tau_y, 0.0).map_err(|e| Error::NumericalFailure(e.to_string()))
    }
}

pub fn actuator_positions(map: &ExplicitClosureMap, amap: &ActuationMap, y: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(amap.select(&map.gamma(y)?))
}

pub fn actuator_forces(map: &ExplicitClosureMap, amap: &ActuationMap, y: &DVector<f64>, tau_y: &DVector<f64>) -> Result<DVector<f64>> {
    amap.forces(&map.g_matrix(y)?, tau_y)
}

#[cfg(test)]
pub(crate) mod test_mechanisms {
    use super::*;
    use crate::spatial::{FramePlacement, RigidBodyInertia};
    use crate::treedyn::{JointModel, RigidBodyTree};
    use nalgebra::{Rotation3, Vector3};

    pub const FOURBAR: (f64, f64, f64, f64) = (0.1, 0.35, 0.25, 0.3);

    fn link(len: f64) -> RigidBodyInertia {
        RigidBodyInertia::point_mass(0.1, Vector3::new(len / 2.0, 0.0, 0.0))
    }

    /// Closed-form rocker position: returns (coupler angle relative to crank, rocker angle).
    pub fn fourbar_oracle(dims: (f64, f64, f64, f64), y: f64, elbow: f64) -> Option<(f64, f64)> {
        let (a, b, c, d) = dims;
        let p = nalgebra::Vector2::new(a * y.cos(), a * y.sin());
        let dp = nalgebra::Vector2::new(d, 0.0) - p;
        let dist = dp.norm();
        let along = (b * b - c * c + dist * dist) / (2.0 * dist);
        let h2 = b * b - along * along;
        if h2 < 0.0 {
            return None;
        }
        let e = dp / dist;
        let cpt = p + e * along + nalgebra::Vector2::new(-e.y, e.x) * (elbow * h2.sqrt());
        let coupler = (cpt.y - p.y).atan2(cpt.x - p.x);
        let rocker = cpt.y.atan2(cpt.x - d);
        Some((coupler - y, rocker))
    }

    /// Planar four-bar with the crank as independent coordinate 0.
    pub fn fourbar(dims: (f64, f64, f64, f64), y0: f64) -> SubmechanismResolver {
        let (a, b, c, d) = dims;
        let z = Vector3::z();
        let mut t = RigidBodyTree::new();
        t.add_body("crank", None, "crank", JointModel::revolute(z, FramePlacement::identity()), link(a)).unwrap();
        t.add_body(
            "coupler",
            Some(0),
            "elbow",
            JointModel::revolute(z, FramePlacement::from_translation(Vector3::new(a, 0.0, 0.0))),
            link(b),
        )
        .unwrap();
        t.add_body("rocker", None, "rocker", JointModel::revolute(z, FramePlacement::from_translation(Vector3::new(d, 0.0, 0.0))), link(c))
            .unwrap();
        let cut = CutJoint::planar("tip", BodyPoint::new(2, Vector3::new(c, 0.0, 0.0)), BodyPoint::new(1, Vector3::new(b, 0.0, 0.0)), z);
        let implicit = ImplicitConstraint::new(t, vec![cut]).unwrap();
        let (cp, rk) = fourbar_oracle(dims, y0, 1.0).unwrap();
        let reference = DVector::from_vec(vec![y0, cp, rk]);
        SubmechanismResolver::new("fourbar", ResolverKind::Numerical, implicit, vec![0, 1, 2], vec![0], vec![0], reference).unwrap()
    }

    pub const SLIDER: (f64, f64, f64) = (0.06, 0.05, 0.25);

    /// Knee-style slider-crank: shank revolute θ (0), leg universal (1, 2) and extension d (3).
    pub fn slider_crank_implicit() -> (ImplicitConstraint, f64) {
        let (r, bx, bz) = SLIDER;
        let base = Vector3::new(bx, 0.0, bz);
        let tip = Vector3::new(r, 0.0, 0.0);
        let dir = tip - base;
        let rest = dir.norm();
        let rot = Rotation3::rotation_between(&Vector3::z(), &dir).unwrap().into_inner();
        let mut t = RigidBodyTree::new();
        t.add_body("shank", None, "knee", JointModel::revolute(Vector3::y(), FramePlacement::identity()), link(0.4)).unwrap();
        t.add_body("leg", None, "leg_u", JointModel::universal(Vector3::x(), Vector3::y(), FramePlacement::new(rot, base)), link(0.1))
            .unwrap();
        t.add_body("rod", Some(1), "leg_d", JointModel::prismatic(Vector3::z(), FramePlacement::identity()), link(0.1)).unwrap();
        let cut = CutJoint::point("knee_pin", BodyPoint::new(0, tip), BodyPoint::new(2, Vector3::new(0.0, 0.0, rest)));
        (ImplicitConstraint::new(t, vec![cut]).unwrap(), rest)
    }

    /// Slider-crank driven by the extension `d`.
    pub fn slider_crank_by_length() -> SubmechanismResolver {
        let (c, rest) = slider_crank_implicit();
        let shank_pt = BodyPoint::new(0, Vector3::new(SLIDER.0, 0.0, 0.0));
        let mut plan = AnalyticalPlan::new(vec![
            AnalyticalStep::CrankDistance {
                joint_body: 0,
                moving: shank_pt,
                fixed: BodyPoint::new(1, Vector3::zeros()),
                base_distance: rest,
                plus_coord: Some(3),
                branch: 1.0,
            },
            AnalyticalStep::LegAim { u_body: 1, target: shank_pt, length_coord: None, rest_length: rest },
        ]);
        let reference = DVector::zeros(4);
        plan.calibrate(&c, &reference).unwrap();
        SubmechanismResolver::new("knee", ResolverKind::Analytical(plan), c, vec![0, 1, 2, 3], vec![3], vec![0], reference).unwrap()
    }

    /// Slider-crank driven by the knee angle.
    pub fn slider_crank_by_angle() -> SubmechanismResolver {
        let (c, rest) = slider_crank_implicit();
        let shank_pt = BodyPoint::new(0, Vector3::new(SLIDER.0, 0.0, 0.0));
        let plan =
            AnalyticalPlan::new(vec![AnalyticalStep::LegAim { u_body: 1, target: shank_pt, length_coord: Some(3), rest_length: rest }]);
        SubmechanismResolver::new("knee", ResolverKind::Analytical(plan), c, vec![0, 1, 2, 3], vec![0], vec![0], DVector::zeros(4)).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_mechanisms::*;
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn single(r: SubmechanismResolver) -> ExplicitClosureMap {
        let n = r.tree_joints().len();
        let m = r.independent_joints().len();
        ExplicitClosureMap::new(vec![r], vec![], n, m).unwrap()
    }

    fn angle_diff(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(2.0 * std::f64::consts::PI);
        d.min(2.0 * std::f64::consts::PI - d)
    }

    #[test]
    fn fourbar_matches_closed_form_from_cold_start() {
        let map = single(fourbar(FOURBAR, 0.0));
        let sol = map.resolve(&DVector::from_vec(vec![0.3]), None).unwrap();
        assert!(sol.iterations[0] <= 10, "{} iterations", sol.iterations[0]);
        let (cp, rk) = fourbar_oracle(FOURBAR, 0.3, 1.0).unwrap();
        assert_eq!(sol.q[0], 0.3);
        assert!(angle_diff(sol.q[1], cp) < 1e-8);
        assert!(angle_diff(sol.q[2], rk) < 1e-8);
        assert!(map.max_residual(&sol.q).unwrap() <= 1e-10);
    }

    #[test]
    fn warm_start_at_solution_is_a_fixed_point() {
        let map = single(fourbar(FOURBAR, 0.0));
        let y = DVector::from_vec(vec![0.7]);
        let q = map.gamma(&y).unwrap();
        let again = map.resolve(&y, Some(&q)).unwrap();
        assert!(again.iterations[0] <= 1);
        assert!((again.q - q).amax() < 1e-12);
    }

    #[test]
    fn warm_started_sweep_stays_on_branch_and_is_cheap() {
        let map = single(fourbar(FOURBAR, 0.0));
        let mut q = map.reference();
        for k in 0..=200 {
            let y = DVector::from_vec(vec![2.0 * std::f64::consts::PI * k as f64 / 200.0]);
            let sol = map.resolve(&y, Some(&q)).unwrap();
            assert!(sol.iterations[0] <= 5);
            let (cp, rk) = fourbar_oracle(FOURBAR, y[0], 1.0).unwrap();
            assert!(angle_diff(sol.q[1], cp) < 1e-8 && angle_diff(sol.q[2], rk) < 1e-8);
            q = sol.q;
        }
    }

    #[test]
    fn impossible_geometry_is_reported() {
        let dims = (0.2, 0.2, 0.2, 0.5);
        let map = single(fourbar(dims, 0.0));
        assert!(fourbar_oracle(dims, std::f64::consts::PI, 1.0).is_none());
        let err = map.gamma(&DVector::from_vec(vec![std::f64::consts::PI])).unwrap_err();
        match err {
            Error::ResolutionFailure { submechanism, residual, .. } => {
                assert_eq!(submechanism, "fourbar");
                assert!(residual > 1e-3);
            }
            Error::Singularity { submechanism, .. } => assert_eq!(submechanism, "fourbar"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn fourbar_g_and_drift_match_finite_differences() {
        let map = single(fourbar(FOURBAR, 0.0));
        let mut rng = StdRng::seed_from_u64(3);
        let h = 1e-6;
        for _ in 0..20 {
            let y = DVector::from_vec(vec![rng.gen_range(-3.0..3.0)]);
            let yd = DVector::from_vec(vec![rng.gen_range(-2.0..2.0)]);
            let q = map.gamma(&y).unwrap();
            let g = map.g_matrix_at(&q).unwrap();
            let at = |dy: f64| map.resolve(&DVector::from_vec(vec![y[0] + dy]), Some(&q)).unwrap().q;
            let fd = (at(h) - at(-h)) / (2.0 * h);
            assert!((g.column(0) - &fd).amax() < 1e-6);
            let g_at = |dy: f64| map.g_matrix_at(&at(dy)).unwrap();
            let gdot = (g_at(h * yd[0]) - g_at(-h * yd[0])) / (2.0 * h);
            let drift = map.g_drift_at(&q, &yd).unwrap();
            assert!((gdot * &yd - &drift).amax() < 1e-5);
            for c in map.check_identities(&q, &yd).unwrap() {
                assert!(c.residual <= 1e-8 && c.kg <= 1e-6 && c.kg_drift <= 1e-6);
            }
        }
        let q = map.reference();
        assert!(map.g_drift_at(&q, &DVector::zeros(1)).unwrap().amax() == 0.0);
    }

    #[test]
    fn implicit_jacobian_and_drift_match_finite_differences() {
        let (c, _) = slider_crank_implicit();
        let mut rng = StdRng::seed_from_u64(4);
        let h = 1e-6;
        for _ in 0..20 {
            let q = DVector::from_fn(4, |_, _| rng.gen_range(-0.5..0.5));
            let qd = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let k = c.jacobian(&q).unwrap();
            for j in 0..4 {
                let mut dq = DVector::zeros(4);
                dq[j] = h;
                let fd = (c.residual(&(&q + &dq)).unwrap() - c.residual(&(&q - &dq)).unwrap()) / (2.0 * h);
                assert!((k.column(j) - fd).amax() < 1e-6);
            }
            let kdot = (c.jacobian(&(&q + &qd * h)).unwrap() - c.jacobian(&(&q - &qd * h)).unwrap()) / (2.0 * h);
            assert!((-(kdot * &qd) - c.drift(&q, &qd).unwrap()).amax() < 1e-6);
        }
    }

    fn slider_oracle(d: f64, rest: f64) -> f64 {
        let (r, bx, bz) = SLIDER;
        let bn = bx.hypot(bz);
        let len = rest + d;
        -bz.atan2(bx) + ((r * r + bn * bn - len * len) / (2.0 * r * bn)).acos()
    }

    fn slider_length(theta: f64) -> f64 {
        let (r, bx, bz) = SLIDER;
        let p = Vector3::new(r * theta.cos(), 0.0, -r * theta.sin());
        (p - Vector3::new(bx, 0.0, bz)).norm()
    }

    #[test]
    fn slider_crank_analytical_matches_triangle_and_round_trips() {
        let (_, rest) = slider_crank_implicit();
        let map = single(slider_crank_by_length());
        assert!(map.gamma(&DVector::zeros(1)).unwrap().amax() < 1e-12);
        for d in [-0.03, -0.01, 0.0, 0.015, 0.02] {
            let q = map.gamma(&DVector::from_vec(vec![d])).unwrap();
            assert_relative_eq!(q[0], slider_oracle(d, rest), epsilon = 1e-10);
            assert_relative_eq!(slider_length(q[0]) - rest, d, epsilon = 1e-10);
            assert!(map.max_residual(&q).unwrap() < 1e-10);
        }
        let inverse = single(slider_crank_by_angle());
        let q = inverse.gamma(&DVector::from_vec(vec![0.2])).unwrap();
        let back = map.gamma(&DVector::from_vec(vec![q[3]])).unwrap();
        assert_relative_eq!(back[0], 0.2, epsilon = 1e-10);
    }

    #[test]
    fn slider_crank_force_follows_chain_rule() {
        let map = single(slider_crank_by_angle());
        let amap = ActuationMap::new(vec![3], 4).unwrap();
        for theta in [-0.3, 0.1, 0.4] {
            let y = DVector::from_vec(vec![theta]);
            let tau = 7.5;
            let f = actuator_forces(&map, &amap, &y, &DVector::from_vec(vec![tau])).unwrap();
            let h = 1e-7;
            let dd_dtheta = (slider_length(theta + h) - slider_length(theta - h)) / (2.0 * h);
            assert_relative_eq!(f[0], tau / dd_dtheta, max_relative = 1e-7);
            let pos = actuator_positions(&map, &amap, &y).unwrap();
            assert_relative_eq!(pos[0], slider_length(theta) - slider_crank_implicit().1, epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_blocks_pass_through() {
        let map = ExplicitClosureMap::new(vec![], vec![(0, 1), (1, 0), (2, 2)], 3, 3).unwrap();
        let y = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let q = map.gamma(&y).unwrap();
        assert_eq!(q.as_slice(), &[-0.2, 0.1, 0.3]);
        let g = map.g_matrix(&y).unwrap();
        assert_eq!(&g * &y, q);
        let amap = ActuationMap::new(vec![1, 0, 2], 3).unwrap();
        assert_eq!(actuator_positions(&map, &amap, &y).unwrap(), y);
        let tau = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!((actuator_forces(&map, &amap, &y, &tau).unwrap() - &tau).amax() < 1e-12);
    }

    #[test]
    fn mixed_composition_is_block_diagonal() {
        let fb = fourbar(FOURBAR, 0.0);
        let shift = |r: SubmechanismResolver, qo: usize, yo: usize| {
            let tj = r.tree_joints().iter().map(|i| i + qo).collect();
            let ij = r.independent_joints().iter().map(|i| i + yo).collect();
            SubmechanismResolver::new(
                r.name.clone(),
                r.kind.clone(),
                r.implicit().clone(),
                tj,
                r.local_independent().to_vec(),
                ij,
                r.reference().clone(),
            )
            .unwrap()
        };
        let knee = shift(slider_crank_by_length(), 3, 1);
        let map = ExplicitClosureMap::new(vec![fb, knee], vec![(7, 2)], 8, 3).unwrap();
        assert_eq!((map.n(), map.m(), map.n_c()), (8, 3, 5));
        let y = DVector::from_vec(vec![0.4, 0.01, -1.0]);
        let st = map.closure_state(&y, &DVector::from_vec(vec![0.5, 0.1, 2.0]), &DVector::from_vec(vec![1.0, -1.0, 0.5]), None).unwrap();
        for i in 0..8 {
            for j in 0..3 {
                let own = if i < 3 {
                    0
                } else if i < 7 {
                    1
                } else {
                    2
                };
                if j != own {
                    assert_eq!(st.g_matrix[(i, j)], 0.0);
                }
            }
        }
        assert_eq!(st.q[7], -1.0);
        assert_eq!(st.qd[7], 2.0);
        assert_eq!(st.qdd[7], 0.5);
        assert_eq!(map.independent_of(&st.q).unwrap(), y);
    }

    #[test]
    fn overlapping_blocks_are_rejected() {
        assert!(ExplicitClosureMap::new(vec![fourbar(FOURBAR, 0.0)], vec![(2, 0)], 3, 1).is_err());
        assert!(ExplicitClosureMap::new(vec![], vec![(0, 0)], 2, 1).is_err());
        assert!(ActuationMap::new(vec![0, 0], 2).is_err());
    }

    #[test]
    fn singular_actuation_is_reported() {
        let map = single(slider_crank_by_angle());
        // the knee angle itself has unit G, but a leg angle at θ = 0 does not move
        let amap = ActuationMap::new(vec![1], 4).unwrap();
        let err = actuator_forces(&map, &amap, &DVector::zeros(1), &DVector::from_vec(vec![1.0])).unwrap_err();
        assert!(matches!(err, Error::ActuationSingular { .. }));
    }
}
