//! Contact-constrained dynamics.
//!
//! Bilateral contacts are imposed at the acceleration level, `J q̈ + J̇ q̇ = 0`, and
//! combined with the equations of motion into one saddle-point system
//!
//! ```text
//! [ M   Jᵀ ] [  q̈ ]   [ Sᵀτ − b            ]
//! [ J   0  ] [ −λ ] = [ −J̇ q̇ − correction ]
//! ```
//!
//! Contact wrenches `λ` are world aligned at the contact frame origin; for 6-D
//! contacts the torque block comes first.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::spatial::{log_so3, FramePlacement, SpatialForce};
use crate::treedyn::{FrameId, Kinematics, RigidBodyTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactKind {
    Point3d,
    FlatFoot6d,
}

impl ContactKind {
    pub fn rows(self) -> usize {
        match self {
            ContactKind::Point3d => 3,
            ContactKind::FlatFoot6d => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactSpec {
    pub frame: FrameId,
    pub kind: ContactKind,
    /// Baumgarte gains `(kp [1/s²], kd [1/s])`.
    pub baumgarte: (f64, f64),
    /// Target placement for the position-level Baumgarte term.
    pub reference: Option<FramePlacement>,
}

impl ContactSpec {
    pub fn new(frame: FrameId, kind: ContactKind) -> Self {
        Self { frame, kind, baumgarte: (0.0, 0.0), reference: None }
    }

    pub fn with_baumgarte(mut self, kp: f64, kd: f64, reference: FramePlacement) -> Self {
        self.baumgarte = (kp, kd);
        self.reference = Some(reference);
        self
    }
}

/// Ordered set of active contacts; rows are stacked in declaration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContactSet {
    contacts: Vec<ContactSpec>,
    stacked_rows: usize,
}

impl ContactSet {
    pub fn new(contacts: Vec<ContactSpec>) -> Result<Self> {
        for c in &contacts {
            let (kp, kd) = c.baumgarte;
            if !(kp >= 0.0 && kd >= 0.0) {
                return Err(Error::InvalidArgument("Baumgarte gains must be non-negative".into()));
            }
            if kp > 0.0 && c.reference.is_none() {
                return Err(Error::InvalidArgument("position Baumgarte gain needs a reference placement".into()));
            }
        }
        let stacked_rows = contacts.iter().map(|c| c.kind.rows()).sum();
        Ok(Self { contacts, stacked_rows })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn contacts(&self) -> &[ContactSpec] {
        &self.contacts
    }

    pub fn stacked_rows(&self) -> usize {
        self.stacked_rows
    }

    pub fn is_empty(&self) -> bool {
        self.contacts.is_empty()
    }

    pub fn contains_frame(&self, frame: FrameId) -> bool {
        self.contacts.iter().any(|c| c.frame == frame)
    }

    /// Stacked contact Jacobian `J_c`.
    pub fn jacobian(&self, tree: &RigidBodyTree, kin: &Kinematics) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.stacked_rows, tree.nv());
        let mut row = 0;
        for c in &self.contacts {
            let jf = kin.frame_jacobian(tree, c.frame)?;
            match c.kind {
                ContactKind::Point3d => j.rows_mut(row, 3).copy_from(&jf.rows(3, 3)),
                ContactKind::FlatFoot6d => j.rows_mut(row, 6).copy_from(&jf),
            }
            row += c.kind.rows();
        }
        Ok(j)
    }

    /// Stacked `J̇_c q̇`; `kin` must carry velocity terms.
    pub fn drift(&self, tree: &RigidBodyTree, kin: &Kinematics) -> Result<DVector<f64>> {
        let mut d = DVector::zeros(self.stacked_rows);
        let mut row = 0;
        for c in &self.contacts {
            let a = kin.frame_drift(tree, c.frame)?.to_vector();
            match c.kind {
                ContactKind::Point3d => d.rows_mut(row, 3).copy_from(&a.fixed_rows::<3>(3)),
                ContactKind::FlatFoot6d => d.rows_mut(row, 6).copy_from(&a),
            }
            row += c.kind.rows();
        }
        Ok(d)
    }

    /// Stacked velocity `J_c q̇`.
    pub fn velocity(&self, tree: &RigidBodyTree, kin: &Kinematics) -> Result<DVector<f64>> {
        let mut d = DVector::zeros(self.stacked_rows);
        let mut row = 0;
        for c in &self.contacts {
            let v = kin.frame_velocity(tree, c.frame)?.to_vector();
            match c.kind {
                ContactKind::Point3d => d.rows_mut(row, 3).copy_from(&v.fixed_rows::<3>(3)),
                ContactKind::FlatFoot6d => d.rows_mut(row, 6).copy_from(&v),
            }
            row += c.kind.rows();
        }
        Ok(d)
    }

    /// Stacked position error against each contact's reference (zero rows without one).
    pub fn position_error(&self, tree: &RigidBodyTree, kin: &Kinematics) -> Result<DVector<f64>> {
        let mut e = DVector::zeros(self.stacked_rows);
        let mut row = 0;
        for c in &self.contacts {
            if let Some(r) = &c.reference {
                let x = kin.frame_placement(tree, c.frame)?;
                let dp = x.translation - r.translation;
                match c.kind {
                    ContactKind::Point3d => e.rows_mut(row, 3).copy_from(&dp),
                    ContactKind::FlatFoot6d => {
                        let dr = log_so3(&(x.rotation * r.rotation.transpose()));
                        e.rows_mut(row, 3).copy_from(&dr);
                        e.rows_mut(row + 3, 3).copy_from(&dp);
                    }
                }
            }
            row += c.kind.rows();
        }
        Ok(e)
    }

    fn correction(&self, tree: &RigidBodyTree, kin: &Kinematics) -> Result<Option<DVector<f64>>> {
        if self.contacts.iter().all(|c| c.baumgarte == (0.0, 0.0)) {
            return Ok(None);
        }
        let pos = self.position_error(tree, kin)?;
        let vel = self.velocity(tree, kin)?;
        let mut corr = DVector::zeros(self.stacked_rows);
        let mut row = 0;
        for c in &self.contacts {
            let (kp, kd) = c.baumgarte;
            for r in row..row + c.kind.rows() {
                corr[r] = kp * pos[r] + kd * vel[r];
            }
            row += c.kind.rows();
        }
        Ok(Some(corr))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedAccelResult {
    pub qdd: DVector<f64>,
    pub lambdas: DVector<f64>,
    /// Ratio of the largest to smallest pivot magnitude of the KKT factorisation.
    pub kkt_condition: f64,
}

const CONDITION_LIMIT: f64 = 1e12;

/// Solves the contact-constrained forward dynamics for generalized forces `tau_full = Sᵀτ`.
pub fn constrained_forward_dynamics(
    tree: &RigidBodyTree,
    q: &DVector<f64>,
    v: &DVector<f64>,
    tau_full: &DVector<f64>,
    contacts: &ContactSet,
) -> Result<ConstrainedAccelResult> {
    check_dim("generalized force", tree.nv(), tau_full.len())?;
    let kin = tree.kinematics(q, Some(v))?;
    forward_dynamics_with(tree, &kin, tau_full, contacts)
}

pub(crate) fn forward_dynamics_with(
    tree: &RigidBodyTree,
    kin: &Kinematics,
    tau_full: &DVector<f64>,
    contacts: &ContactSet,
) -> Result<ConstrainedAccelResult> {
    let nv = tree.nv();
    let nc = contacts.stacked_rows();
    let m = tree.crba_with(kin);
    let b = tree.rnea_with(kin, &DVector::zeros(nv), None, true);
    let rhs_top = tau_full - b;
    if nc == 0 {
        let chol = m.clone().cholesky().ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
        let qdd = chol.solve(&rhs_top);
        let diag = m.diagonal();
        let condition = diag.max() / diag.min().max(f64::MIN_POSITIVE);
        return Ok(ConstrainedAccelResult { qdd, lambdas: DVector::zeros(0), kkt_condition: condition });
    }
    let jc = contacts.jacobian(tree, kin)?;
    let mut rhs_bottom = -contacts.drift(tree, kin)?;
    if let Some(corr) = contacts.correction(tree, kin)? {
        rhs_bottom -= corr;
    }
    let n = nv + nc;
    let mut kkt = DMatrix::zeros(n, n);
    kkt.view_mut((0, 0), (nv, nv)).copy_from(&m);
    kkt.view_mut((0, nv), (nv, nc)).copy_from(&jc.transpose());
    kkt.view_mut((nv, 0), (nc, nv)).copy_from(&jc);
    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(0, nv).copy_from(&rhs_top);
    rhs.rows_mut(nv, nc).copy_from(&rhs_bottom);

    let lu = kkt.clone().lu();
    let u = lu.u();
    let pivots = u.diagonal().map(f64::abs);
    let condition = pivots.max() / pivots.min().max(f64::MIN_POSITIVE);
    if !(condition <= CONDITION_LIMIT) {
        // classify: consistent right-hand side means redundant but feasible contacts
        let svd = kkt.clone().svd(true, true);
        let sol = svd.solve(&rhs, 1e-10 * svd.singular_values.max()).map_err(|_| Error::IllConditioned { condition })?;
        let residual = (&kkt * &sol - &rhs).amax();
        if residual > 1e-8 * (1.0 + rhs.amax()) {
            return Err(Error::InfeasibleContact { residual });
        }
        return Err(Error::IllConditioned { condition });
    }
    let sol = lu.solve(&rhs).ok_or(Error::IllConditioned { condition })?;
    if sol.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure("KKT solution".into()));
    }
    Ok(ConstrainedAccelResult { qdd: sol.rows(0, nv).into_owned(), lambdas: -sol.rows(nv, nc).into_owned(), kkt_condition: condition })
}

/// `M q̈ + b − J_cᵀ λ` for given accelerations and contact wrenches.
pub fn constrained_inverse_dynamics(
    tree: &RigidBodyTree,
    q: &DVector<f64>,
    v: &DVector<f64>,
    qdd: &DVector<f64>,
    contacts: &ContactSet,
    lambdas: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("contact forces", contacts.stacked_rows(), lambdas.len())?;
    tree.check_velocity(qdd, "acceleration")?;
    let kin = tree.kinematics(q, Some(v))?;
    let tau = tree.rnea_with(&kin, qdd, None, true);
    if contacts.is_empty() {
        return Ok(tau);
    }
    let jc = contacts.jacobian(tree, &kin)?;
    Ok(tau - jc.transpose() * lambdas)
}

/// Stacked contact drift `J̇_c q̇`.
pub fn contact_drift(tree: &RigidBodyTree, q: &DVector<f64>, v: &DVector<f64>, contacts: &ContactSet) -> Result<DVector<f64>> {
    let kin = tree.kinematics(q, Some(v))?;
    contacts.drift(tree, &kin)
}

/// Contact wrenches as per-body world-origin spatial forces.
pub fn contact_wrenches(
    tree: &RigidBodyTree,
    kin: &Kinematics,
    contacts: &ContactSet,
    lambdas: &DVector<f64>,
) -> Result<Vec<SpatialForce>> {
    let mut out = vec![SpatialForce::zero(); tree.bodies().len()];
    let mut row = 0;
    for c in contacts.contacts() {
        let frame = tree.frame(c.frame)?;
        let p = kin.frame_placement(tree, c.frame)?.translation;
        let (torque, force) = match c.kind {
            ContactKind::Point3d => (nalgebra::Vector3::zeros(), lambdas.fixed_rows::<3>(row).into_owned()),
            ContactKind::FlatFoot6d => (lambdas.fixed_rows::<3>(row).into_owned(), lambdas.fixed_rows::<3>(row + 3).into_owned()),
        };
        out[frame.body] += SpatialForce::new(torque + p.cross(&force), force);
        row += c.kind.rows();
    }
    Ok(out)
}

/// One classical RK4 step of the constrained dynamics with constant generalized force.
pub fn rk4_step(
    tree: &RigidBodyTree,
    q: &DVector<f64>,
    v: &DVector<f64>,
    tau_full: &DVector<f64>,
    contacts: &ContactSet,
    dt: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let accel = |q: &DVector<f64>, v: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(constrained_forward_dynamics(tree, q, v, tau_full, contacts)?.qdd)
    };
    let a1 = accel(q, v)?;
    let q2 = tree.integrate(q, &(v * (0.5 * dt)))?;
    let v2 = v + &a1 * (0.5 * dt);
    let a2 = accel(&q2, &v2)?;
    let q3 = tree.integrate(q, &(&v2 * (0.5 * dt)))?;
    let v3 = v + &a2 * (0.5 * dt);
    let a3 = accel(&q3, &v3)?;
    let q4 = tree.integrate(q, &(&v3 * dt))?;
    let v4 = v + &a3 * dt;
    let a4 = accel(&q4, &v4)?;
    let dq = (v + &v2 * 2.0 + &v3 * 2.0 + &v4) * (dt / 6.0);
    let dv = (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0);
    Ok((tree.integrate(q, &dq)?, v + dv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::RigidBodyInertia;
    use crate::treedyn::test_models::*;
    use crate::treedyn::JointModel;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{rngs::StdRng, SeedableRng};

    fn ball(m: f64) -> RigidBodyTree {
        let mut t = RigidBodyTree::new();
        t.add_body(
            "mass",
            None,
            "root",
            JointModel::floating(FramePlacement::identity()),
            RigidBodyInertia::sphere(m, 0.05, Vector3::zeros()),
        )
        .unwrap();
        t
    }

    #[test]
    fn empty_contact_set_is_plain_dynamics() {
        let t = mixed_tree();
        let mut rng = StdRng::seed_from_u64(11);
        let q = random_configuration(&t, &mut rng);
        let v = random_vector(t.nv(), 1.0, &mut rng);
        let tau = random_vector(t.nv(), 5.0, &mut rng);
        let r = constrained_forward_dynamics(&t, &q, &v, &tau, &ContactSet::empty()).unwrap();
        let expected = t.crba(&q).unwrap().lu().solve(&(&tau - t.bias_forces(&q, &v).unwrap())).unwrap();
        assert!((r.qdd - expected).amax() < 1e-10);
        assert_eq!(r.lambdas.len(), 0);
    }

    #[test]
    fn resting_point_mass_carries_its_weight() {
        let t = ball(2.0);
        let contacts = ContactSet::new(vec![ContactSpec::new(FrameId(0), ContactKind::Point3d)]).unwrap();
        let q = t.neutral_configuration();
        let z = DVector::zeros(6);
        let r = constrained_forward_dynamics(&t, &q, &z, &z, &contacts).unwrap();
        assert!(r.qdd.amax() < 1e-12);
        assert_relative_eq!(r.lambdas[2], 2.0 * 9.81, epsilon = 1e-10);
        assert!(r.lambdas[2] >= 0.0);
        assert!(r.lambdas[0].abs() < 1e-12 && r.lambdas[1].abs() < 1e-12);
    }

    #[test]
    fn inverse_dynamics_round_trip_and_contact_residual() {
        let t = mixed_tree();
        let mut rng = StdRng::seed_from_u64(12);
        let contacts = ContactSet::new(vec![
            ContactSpec::new(t.frame_id("tool").unwrap(), ContactKind::FlatFoot6d),
            ContactSpec::new(t.frame_id("slider").unwrap(), ContactKind::Point3d),
        ])
        .unwrap();
        for _ in 0..20 {
            let q = random_configuration(&t, &mut rng);
            let v = random_vector(t.nv(), 1.0, &mut rng);
            let tau = random_vector(t.nv(), 5.0, &mut rng);
            let r = constrained_forward_dynamics(&t, &q, &v, &tau, &contacts).unwrap();
            let kin = t.kinematics(&q, Some(&v)).unwrap();
            let res = contacts.jacobian(&t, &kin).unwrap() * &r.qdd + contacts.drift(&t, &kin).unwrap();
            assert!(res.amax() < 1e-8);
            let back = constrained_inverse_dynamics(&t, &q, &v, &r.qdd, &contacts, &r.lambdas).unwrap();
            assert!((back - &tau).amax() < 1e-8);
        }
    }

    #[test]
    fn zero_lambda_inverse_dynamics_is_rnea() {
        let t = mixed_tree();
        let mut rng = StdRng::seed_from_u64(13);
        let q = random_configuration(&t, &mut rng);
        let v = random_vector(t.nv(), 1.0, &mut rng);
        let a = random_vector(t.nv(), 1.0, &mut rng);
        let contacts = ContactSet::new(vec![ContactSpec::new(t.frame_id("tool").unwrap(), ContactKind::Point3d)]).unwrap();
        let tau = constrained_inverse_dynamics(&t, &q, &v, &a, &contacts, &DVector::zeros(3)).unwrap();
        assert!((tau - t.rnea(&q, &v, &a, None).unwrap()).amax() < 1e-12);
    }

    #[test]
    fn static_pendulum_tip_contact_balances_gravity() {
        let t = pendulum(1.0, 1.0);
        let contacts = ContactSet::new(vec![ContactSpec::new(t.frame_id("tip").unwrap(), ContactKind::Point3d)]).unwrap();
        let q = DVector::from_vec(vec![std::f64::consts::FRAC_PI_2]);
        let z = DVector::zeros(1);
        // a tip force (0, 0, 9.81) holds the bob horizontal with zero joint torque
        let lambda = DVector::from_vec(vec![0.0, 0.0, 9.81]);
        let tau = constrained_inverse_dynamics(&t, &q, &z, &z, &contacts, &lambda).unwrap();
        assert!(tau[0].abs() < 1e-12);
    }

    #[test]
    fn contact_drift_matches_finite_differences() {
        let t = mixed_tree();
        let contacts = ContactSet::new(vec![
            ContactSpec::new(t.frame_id("tool").unwrap(), ContactKind::FlatFoot6d),
            ContactSpec::new(t.frame_id("arm").unwrap(), ContactKind::Point3d),
        ])
        .unwrap();
        let mut rng = StdRng::seed_from_u64(14);
        let h = 1e-6;
        let q = random_configuration(&t, &mut rng);
        let v = random_vector(t.nv(), 1.0, &mut rng);
        let d = contact_drift(&t, &q, &v, &contacts).unwrap();
        let jv = |q: &DVector<f64>| {
            let kin = t.kinematics(q, None).unwrap();
            contacts.jacobian(&t, &kin).unwrap() * &v
        };
        let fd = (jv(&t.integrate(&q, &(&v * h)).unwrap()) - jv(&t.integrate(&q, &(&v * -h)).unwrap())) / (2.0 * h);
        assert!((fd - d).amax() < 1e-5);
        assert!(contact_drift(&t, &q, &DVector::zeros(t.nv()), &contacts).unwrap().amax() < 1e-15);
    }

    #[test]
    fn redundant_inconsistent_contacts_are_rejected() {
        let t = ball(1.0);
        let c = ContactSpec::new(FrameId(0), ContactKind::Point3d);
        let contacts = ContactSet::new(vec![c.clone(), c]).unwrap();
        let q = t.neutral_configuration();
        let z = DVector::zeros(6);
        let err = constrained_forward_dynamics(&t, &q, &z, &z, &contacts).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. } | Error::InfeasibleContact { .. }));
    }

    #[test]
    fn pendulum_energy_is_conserved_under_rk4() {
        let t = pendulum(1.0, 1.0);
        let mut q = DVector::from_vec(vec![1.0]);
        let mut v = DVector::from_vec(vec![0.0]);
        let tau = DVector::zeros(1);
        let e0 = t.mechanical_energy(&q, &v).unwrap();
        let dt = 1e-4;
        for _ in 0..100_000 {
            (q, v) = rk4_step(&t, &q, &v, &tau, &ContactSet::empty(), dt).unwrap();
        }
        let e1 = t.mechanical_energy(&q, &v).unwrap();
        assert!(((e1 - e0) / e0).abs() < 1e-5);
    }

    #[test]
    fn baumgarte_removes_penetration_monotonically() {
        let t = ball(1.0);
        let reference = FramePlacement::identity();
        let contacts =
            ContactSet::new(vec![ContactSpec::new(FrameId(0), ContactKind::Point3d).with_baumgarte(100.0, 20.0, reference)]).unwrap();
        let mut q = t.neutral_configuration();
        q[2] = -1e-3;
        let mut v = DVector::zeros(6);
        let tau = DVector::zeros(6);
        let mut prev = q[2].abs();
        for _ in 0..1000 {
            (q, v) = rk4_step(&t, &q, &v, &tau, &contacts, 1e-3).unwrap();
            assert!(q[2].abs() <= prev + 1e-15);
            prev = q[2].abs();
        }
        assert!(prev < 1e-6);
    }
}
