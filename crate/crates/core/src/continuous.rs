//! Continuous-time dynamics: the canonical Hamiltonian field, the reduced
//! vakonomic equations, the nonholonomic equations with multipliers
//! eliminated pointwise, and an RK4 reference integrator.

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::hamiltonian::{canonical_field, HamiltonianSystem};
use crate::linsys::LinearConstraintSystem;
use crate::scalar::Scalar;
use crate::state::{PhaseState, Trajectory};

/// Largest constraint violation admitted for a [`NonholonomicState`].
pub const NONHOLONOMIC_ADMIT_TOL: f64 = 1e-8;

/// `(q, v)` on the constraint submanifold.
#[derive(Clone, Debug, PartialEq)]
pub struct NonholonomicState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl NonholonomicState {
    /// Rejects states whose constraint residual exceeds
    /// [`NONHOLONOMIC_ADMIT_TOL`]; no projection is attempted.
    pub fn new(sys: &LinearConstraintSystem, q: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = sys.n();
        for x in [&q, &v] {
            if x.len() != n {
                return Err(Error::Dimension { expected: n, got: x.len() });
            }
        }
        let residual = crate::dense::norm_inf(&sys.constraint(&q, &v)?);
        if !(residual <= NONHOLONOMIC_ADMIT_TOL) {
            return Err(Error::ConstraintViolation { residual, limit: NONHOLONOMIC_ADMIT_TOL });
        }
        Ok(NonholonomicState { q, v })
    }

    /// Completes free velocities with `v^α = Γ^α_a v^a`.
    pub fn from_free(sys: &LinearConstraintSystem, q: Vec<f64>, vfree: &[f64]) -> Result<Self> {
        let v = sys.full_velocity(&q, vfree)?;
        Ok(NonholonomicState { q, v })
    }
}

/// `(q, q̇^a, p_α)`: the reduced vakonomic state with `p_α = μ̃_α`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedVakState<T = f64> {
    pub q: Vec<T>,
    pub vfree: Vec<T>,
    pub pcon: Vec<T>,
}

impl<T: Scalar> ExtendedVakState<T> {
    pub fn to_vec(&self) -> Vec<T> {
        self.q.iter().chain(&self.vfree).chain(&self.pcon).copied().collect()
    }

    pub fn from_slice(sys: &LinearConstraintSystem, x: &[T]) -> Self {
        let (n, m) = (sys.n(), sys.split().m());
        ExtendedVakState { q: x[..n].to_vec(), vfree: x[n..n + m].to_vec(), pcon: x[n + m..].to_vec() }
    }
}

/// `(q̇, ṗ) = (∂H/∂p, −∂H/∂q)`.
pub fn hamiltonian_rhs<S: HamiltonianSystem, T: Scalar>(sys: &S, state: &PhaseState<T>) -> Result<(Vec<T>, Vec<T>)> {
    canonical_field(sys, &state.q, &state.p)
}

/// Time derivatives `(q̇, v̇free, ṗcon)` of the reduced vakonomic system.
pub fn vakonomic_rhs<T: Scalar>(sys: &LinearConstraintSystem, s: &ExtendedVakState<T>) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let split = sys.split();
    let (n, m, k) = (split.n, split.m(), split.k());
    let rm = sys.reduced_metric(&s.q)?;
    let b = sys.embedding(&s.q)?;
    let c = sys.coefficients(&s.q)?;
    let dc = sys.dcoefficients(&s.q)?;
    let dv = sys.grad_potential(&s.q)?;
    let v = &s.vfree;
    let mu = &s.pcon;
    let qdot = b.matvec(v);
    let half = T::from_f64(0.5);

    // ∂L/∂q^i − p_α ∂_iΓ^α_b v^b
    let force: Vec<T> = (0..n)
        .map(|i| {
            let dpsi = dc[i].matvec(v);
            let mut f = half * rm.dgamma[i].bilinear(v, v) - dv[i];
            for al in 0..k {
                f -= mu[al] * dpsi[al];
            }
            f
        })
        .collect();
    let (force_free, pdot) = split.split(&force);

    let mut gamma_dot = Mat::zeros(m, m);
    let mut c_dot = Mat::zeros(k, m);
    for i in 0..n {
        gamma_dot = gamma_dot.add(&rm.dgamma[i].scale(qdot[i]));
        c_dot = c_dot.add(&dc[i].scale(qdot[i]));
    }
    let gv = gamma_dot.matvec(v);
    let ct_pdot = c.transpose().matvec(&pdot);
    let cdt_mu = c_dot.transpose().matvec(mu);
    let rhs: Vec<T> = (0..m).map(|a| force_free[a] - gv[a] + ct_pdot[a] + cdt_mu[a]).collect();
    let vdot = rm
        .gamma
        .solve(&rhs)
        .ok_or_else(|| Error::Regularity { cond: f64::INFINITY })?;
    Ok((qdot, vdot, pdot))
}

/// Accelerations and multipliers `(q̈, λ)` of the nonholonomic equations.
pub fn nonholonomic_rhs(sys: &LinearConstraintSystem, s: &NonholonomicState) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sys.n();
    let q = &s.q;
    let v = &s.v;
    let g = sys.metric_spd(q)?;
    let dg = sys.dmetric(q)?;
    let dv = sys.grad_potential(q)?;
    let a = sys.constraint_matrix(q)?;
    let a_dot = sys.constraint_matrix_rate(q, v)?;

    let mut g_dot = Mat::zeros(n, n);
    for i in 0..n {
        g_dot = g_dot.add(&dg[i].scale(v[i]));
    }
    let gdv = g_dot.matvec(v);
    let f: Vec<f64> = (0..n).map(|i| -gdv[i] + 0.5 * dg[i].bilinear(v, v) - dv[i]).collect();

    let lu = g.lu().ok_or_else(|| Error::NotSpd { q: q.clone() })?;
    let ginv_f = lu.solve(&f);
    let at = a.transpose();
    let k = a.rows();
    let mut ginv_at = Mat::zeros(n, k);
    for al in 0..k {
        let col: Vec<f64> = (0..n).map(|i| at[(i, al)]).collect();
        let sol = lu.solve(&col);
        for i in 0..n {
            ginv_at[(i, al)] = sol[i];
        }
    }
    let mult = a.matmul(&ginv_at);
    let adv = a_dot.matvec(v);
    let agf = a.matvec(&ginv_f);
    let rhs: Vec<f64> = (0..k).map(|al| -adv[al] - agf[al]).collect();
    let lambda = mult.solve(&rhs).ok_or(Error::SingularMultiplier)?;
    let corr = ginv_at.matvec(&lambda);
    let qddot = (0..n).map(|i| ginv_f[i] + corr[i]).collect();
    Ok((qddot, lambda))
}

/// First-order autonomous field on a flat state vector split into named
/// blocks, which become the trajectory columns.
pub trait VectorField {
    fn blocks(&self) -> Vec<(&'static str, usize)>;

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn dim(&self) -> usize {
        self.blocks().iter().map(|b| b.1).sum()
    }
}

/// Canonical field of a Hamiltonian system on `[q; p]`.
pub struct HamiltonianField<S>(pub S);

impl<S: HamiltonianSystem> VectorField for HamiltonianField<S> {
    fn blocks(&self) -> Vec<(&'static str, usize)> {
        vec![("q", self.0.dim()), ("p", self.0.dim())]
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.0.dim();
        let (qd, pd) = canonical_field(&self.0, &x[..n], &x[n..])?;
        Ok(qd.into_iter().chain(pd).collect())
    }
}

/// Reduced vakonomic field on `[q; vfree; pcon]`.
pub struct VakonomicField<'a>(pub &'a LinearConstraintSystem);

impl VectorField for VakonomicField<'_> {
    fn blocks(&self) -> Vec<(&'static str, usize)> {
        let s = self.0.split();
        vec![("q", s.n), ("v", s.m()), ("mu", s.k())]
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (a, b, c) = vakonomic_rhs(self.0, &ExtendedVakState::from_slice(self.0, x))?;
        Ok(a.into_iter().chain(b).chain(c).collect())
    }
}

/// Nonholonomic field on `[q; v]`.
pub struct NonholonomicField<'a>(pub &'a LinearConstraintSystem);

impl VectorField for NonholonomicField<'_> {
    fn blocks(&self) -> Vec<(&'static str, usize)> {
        vec![("q", self.0.n()), ("v", self.0.n())]
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.0.n();
        // the admission check is for user input; RK4 stages drift off C by O(h^5)
        let s = NonholonomicState { q: x[..n].to_vec(), v: x[n..].to_vec() };
        let (acc, _) = nonholonomic_rhs(self.0, &s)?;
        Ok(s.v.into_iter().chain(acc).collect())
    }
}

/// One classical Runge–Kutta step.
pub fn rk4_step<F: VectorField + ?Sized>(field: &F, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + s * y).collect() };
    let k1 = field.eval(x)?;
    let k2 = field.eval(&axpy(x, h / 2.0, &k1))?;
    let k3 = field.eval(&axpy(x, h / 2.0, &k2))?;
    let k4 = field.eval(&axpy(x, h, &k3))?;
    Ok((0..x.len()).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

/// RK4 reference trajectory with `steps + 1` samples at `t = i h`.
pub fn oracle_integrate<F: VectorField + ?Sized>(field: &F, x0: &[f64], h: f64, steps: usize) -> Result<Trajectory> {
    if !(h > 0.0) {
        return Err(Error::InvalidStep(h));
    }
    let blocks = field.blocks();
    let dim: usize = blocks.iter().map(|b| b.1).sum();
    if x0.len() != dim {
        return Err(Error::Dimension { expected: dim, got: x0.len() });
    }
    let mut traj = Trajectory::new(&blocks);
    let mut x = x0.to_vec();
    push_blocks(&mut traj, &blocks, 0.0, &x)?;
    for step in 1..=steps {
        x = rk4_step(field, &x, h)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        push_blocks(&mut traj, &blocks, step as f64 * h, &x)?;
    }
    Ok(traj)
}

/// Final state only, without recording.
pub fn oracle_endpoint<F: VectorField + ?Sized>(field: &F, x0: &[f64], h: f64, steps: usize) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidStep(h));
    }
    let mut x = x0.to_vec();
    for step in 1..=steps {
        x = rk4_step(field, &x, h)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
    }
    Ok(x)
}

fn push_blocks(traj: &mut Trajectory, blocks: &[(&str, usize)], t: f64, x: &[f64]) -> Result<()> {
    let mut parts = Vec::with_capacity(blocks.len());
    let mut off = 0;
    for &(_, w) in blocks {
        parts.push(&x[off..off + w]);
        off += w;
    }
    traj.push(t, &parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprs::{parse_expr, Expr};
    use crate::state::IndexSplit;

    const XYZ: [&str; 3] = ["x", "y", "z"];

    fn dist(gamma_x: &str) -> LinearConstraintSystem {
        LinearConstraintSystem::new(
            IndexSplit::trailing(3, 1),
            LinearConstraintSystem::identity_metric(3),
            Expr::num(0.0),
            vec![vec![parse_expr(gamma_x, &XYZ).unwrap(), Expr::num(0.0)]],
        )
        .unwrap()
    }

    fn oscillator() -> LinearConstraintSystem {
        LinearConstraintSystem::new(
            IndexSplit::unconstrained(1),
            LinearConstraintSystem::identity_metric(1),
            parse_expr("q1^2/2", &["q1"]).unwrap(),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn hamiltonian_rhs_examples() {
        let free = LinearConstraintSystem::new(
            IndexSplit::unconstrained(2),
            LinearConstraintSystem::identity_metric(2),
            Expr::num(0.0),
            vec![],
        )
        .unwrap();
        let (qd, pd) = hamiltonian_rhs(&free, &PhaseState::new(vec![1.0, 2.0], vec![0.5, -1.0]).unwrap()).unwrap();
        assert_eq!(qd, vec![0.5, -1.0]);
        assert_eq!(pd, vec![0.0, 0.0]);
        let (qd, pd) = hamiltonian_rhs(&oscillator(), &PhaseState::new(vec![0.3], vec![0.7]).unwrap()).unwrap();
        assert_eq!((qd[0], pd[0]), (0.7, -0.3));
        let sys = dist("y^2/2");
        let (qd, _) = hamiltonian_rhs(&sys, &PhaseState::new(vec![0.0f64, 1.0, 0.0], vec![1.0, 0.0, 2.0]).unwrap()).unwrap();
        assert!((qd[0] - 1.6).abs() < 1e-15 && qd[1] == 0.0 && (qd[2] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn vakonomic_free_particle_has_zero_acceleration() {
        let free = LinearConstraintSystem::new(
            IndexSplit::unconstrained(2),
            LinearConstraintSystem::identity_metric(2),
            Expr::num(0.0),
            vec![],
        )
        .unwrap();
        let s = ExtendedVakState { q: vec![0.1, 0.2], vfree: vec![1.0, -2.0], pcon: vec![] };
        let (qd, vd, pd) = vakonomic_rhs(&free, &s).unwrap();
        assert_eq!(qd, vec![1.0, -2.0]);
        assert_eq!(vd, vec![0.0, 0.0]);
        assert!(pd.is_empty());
    }

    #[test]
    fn vakonomic_pushforward_matches_hamiltonian_field() {
        let sys = dist("y^2/2 + x*y");
        let s = ExtendedVakState { q: vec![0.3, -0.6, 0.2], vfree: vec![0.8, 0.4], pcon: vec![1.3] };
        let x = s.to_vec();
        // derivative of the constrained Legendre map along the vakonomic field
        let (qd, vd, pd) = vakonomic_rhs(&sys, &s).unwrap();
        let dx: Vec<f64> = qd.iter().chain(&vd).chain(&pd).copied().collect();
        let xd: Vec<_> = x.iter().zip(&dx).map(|(&a, &b)| crate::scalar::Dual::new(a, b)).collect();
        let sd = crate::state::VakonomicState::from_slice(sys.split(), &xd);
        let pushed = sys.constrained_legendre(&sd).unwrap();
        let ps = PhaseState { q: pushed.q.iter().map(|d| d.re).collect(), p: pushed.p.iter().map(|d| d.re).collect() };
        let (hq, hp) = hamiltonian_rhs(&sys, &ps).unwrap();
        for i in 0..3 {
            assert!((pushed.q[i].eps - hq[i]).abs() < 1e-12);
            assert!((pushed.p[i].eps - hp[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn holonomic_vakonomic_with_zero_multiplier_is_free_motion() {
        let sys = dist("x");
        let x0 = [0.1, 0.2, 0.005, 0.6, -0.4, 0.0];
        let end = oracle_endpoint(&VakonomicField(&sys), &x0, 1e-3, 1000).unwrap();
        // reduced metric is diag(1 + x^2, 1), so compare with that free Lagrangian in (x, y)
        let reference = LinearConstraintSystem::new(
            IndexSplit::unconstrained(2),
            vec![
                vec![parse_expr("1 + x^2", &["x", "y"]).unwrap(), Expr::num(0.0)],
                vec![Expr::num(0.0), Expr::num(1.0)],
            ],
            Expr::num(0.0),
            vec![],
        )
        .unwrap();
        let r0 = [0.1, 0.2, 0.6, -0.4];
        let rend = oracle_endpoint(&NonholonomicField(&reference), &r0, 1e-3, 1000).unwrap();
        assert!((end[0] - rend[0]).abs() < 1e-10);
        assert!((end[1] - rend[1]).abs() < 1e-10);
        assert!((end[2] - end[0] * end[0] / 2.0 - (x0[2] - x0[0] * x0[0] / 2.0)).abs() < 1e-10);
    }

    #[test]
    fn nonholonomic_examples() {
        let flat = LinearConstraintSystem::new(
            IndexSplit::trailing(2, 1),
            LinearConstraintSystem::identity_metric(2),
            Expr::num(0.0),
            vec![vec![Expr::num(0.0)]],
        )
        .unwrap();
        let s = NonholonomicState::new(&flat, vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(nonholonomic_rhs(&flat, &s).unwrap(), (vec![0.0, 0.0], vec![0.0]));

        let sys = dist("y^2/2");
        let s = NonholonomicState::new(&sys, vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.5]).unwrap();
        let (acc, lam) = nonholonomic_rhs(&sys, &s).unwrap();
        assert_eq!(lam, vec![0.0]);
        assert_eq!(acc, vec![0.0; 3]);

        let s = NonholonomicState::new(&sys, vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 0.5]).unwrap();
        let (acc, lam) = nonholonomic_rhs(&sys, &s).unwrap();
        assert!((lam[0] - 0.8).abs() < 1e-15);
        assert!((acc[0] + 0.4).abs() < 1e-15 && acc[1] == 0.0 && (acc[2] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn off_constraint_state_is_rejected() {
        let sys = dist("y^2/2");
        let r = NonholonomicState::new(&sys, vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.6]);
        assert!(matches!(r, Err(Error::ConstraintViolation { .. })));
    }

    #[test]
    fn rk4_oscillator_one_step() {
        let x = oracle_endpoint(&HamiltonianField(oscillator()), &[1.0, 0.0], 0.1, 1).unwrap();
        let h = 0.1f64;
        assert!((x[0] - h.cos()).abs() < 1e-8);
        // RK4 reproduces the Taylor series of sin h through h^4, so the
        // momentum error is h^5/120
        assert!((x[1] + (h - h.powi(3) / 6.0)).abs() < 1e-16);
        assert!((x[1] + h.sin()).abs() < 1e-7);
    }

    #[test]
    fn rk4_fourth_order_on_oscillator() {
        let f = HamiltonianField(oscillator());
        let err = |steps: usize| {
            let x = oracle_endpoint(&f, &[1.0, 0.0], 1.0 / steps as f64, steps).unwrap();
            ((x[0] - 1f64.cos()).powi(2) + (x[1] + 1f64.sin()).powi(2)).sqrt()
        };
        let ratio = err(10) / err(20);
        assert!((ratio - 16.0).abs() < 1.5, "{ratio}");
    }

    #[test]
    fn constant_momentum_field_is_exact() {
        let free = LinearConstraintSystem::new(
            IndexSplit::unconstrained(1),
            LinearConstraintSystem::identity_metric(1),
            Expr::num(0.0),
            vec![],
        )
        .unwrap();
        let t = oracle_integrate(&HamiltonianField(free), &[0.0, 0.3], 0.1, 20).unwrap();
        assert_eq!(t.len(), 21);
        assert!(t.column("p").unwrap().rows().all(|r| r[0] == 0.3));
    }

    #[test]
    fn nonholonomic_oracle_preserves_constraint() {
        let sys = dist("y^2/2");
        let s = NonholonomicState::from_free(&sys, vec![0.2, 0.5, 0.0], &[1.0, 0.7]).unwrap();
        let x0: Vec<f64> = s.q.iter().chain(&s.v).copied().collect();
        let t = oracle_integrate(&NonholonomicField(&sys), &x0, 1e-3, 1000).unwrap();
        let q = t.column("q").unwrap();
        let v = t.column("v").unwrap();
        for i in 0..t.len() {
            let phi = sys.constraint(q.row(i), v.row(i)).unwrap();
            assert!(phi[0].abs() < 1e-7);
        }
    }

    #[test]
    fn invalid_step_rejected() {
        assert!(matches!(oracle_integrate(&HamiltonianField(oscillator()), &[1.0, 0.0], 0.0, 1), Err(Error::InvalidStep(_))));
    }
}
