//! Mechanical systems `𝕃 = ½ g(q)(q̇, q̇) − V(q)` with velocity-linear
//! constraints `q̇^α = Γ^α_a(q) q̇^a`.
//!
//! The constrained velocities are eliminated through the embedding
//! `B(q): R^{n−k} → R^n` (identity rows on the free block, `Γ` rows on the
//! constrained block), so the reduced metric is `γ = Bᵀ g B` and the induced
//! Hamiltonian is `H = ½ Pᵀ γ⁻¹ P + V` with `P = Bᵀ p`.

use crate::dense::{dot, Mat};
use crate::error::{Error, Result};
use crate::exprs::Expr;
use crate::hamiltonian::HamiltonianSystem;
use crate::scalar::{seed, Scalar};
use crate::state::{IndexSplit, PhaseState, VakonomicState};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearConstraintSystem {
    split: IndexSplit,
    metric: Vec<Vec<Expr>>,
    potential: Expr,
    gamma_coeffs: Vec<Vec<Expr>>,
}

/// `γ_ab`, its inverse, and `∂γ/∂q^i` for every configuration coordinate.
#[derive(Clone, Debug)]
pub struct ReducedMetric<T> {
    pub gamma: Mat<T>,
    pub gamma_inv: Mat<T>,
    pub dgamma: Vec<Mat<T>>,
}

impl<T: Scalar> ReducedMetric<T> {
    /// `∂γ⁻¹/∂q^i = −γ⁻¹ (∂γ/∂q^i) γ⁻¹`
    pub fn dgamma_inv(&self, i: usize) -> Mat<T> {
        self.gamma_inv.matmul(&self.dgamma[i]).matmul(&self.gamma_inv).scale(-T::one())
    }
}

impl LinearConstraintSystem {
    /// `metric` is `n × n`, `gamma_coeffs` is `k × (n−k)` with rows following
    /// `split.constrained` and columns following `split.free`.
    pub fn new(split: IndexSplit, metric: Vec<Vec<Expr>>, potential: Expr, gamma_coeffs: Vec<Vec<Expr>>) -> Result<Self> {
        let split = IndexSplit::new(split.n, split.free, split.constrained)?;
        let n = split.n;
        if metric.len() != n || metric.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidSystem(format!("metric must be {n}x{n}")));
        }
        for i in 0..n {
            for j in 0..i {
                if metric[i][j] != metric[j][i] {
                    return Err(Error::InvalidSystem(format!("metric entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        if gamma_coeffs.len() != split.k() || gamma_coeffs.iter().any(|r| r.len() != split.m()) {
            return Err(Error::InvalidSystem(format!(
                "constraint coefficients must be {}x{}",
                split.k(),
                split.m()
            )));
        }
        let exprs = metric.iter().flatten().chain(gamma_coeffs.iter().flatten()).chain(std::iter::once(&potential));
        for e in exprs {
            if let Some(i) = e.max_var() {
                if i >= n {
                    return Err(Error::InvalidSystem(format!("expression `{e}` references q{} but n = {n}", i + 1)));
                }
            }
        }
        Ok(LinearConstraintSystem { split, metric, potential, gamma_coeffs })
    }

    pub fn identity_metric(n: usize) -> Vec<Vec<Expr>> {
        (0..n).map(|i| (0..n).map(|j| Expr::Num(if i == j { 1.0 } else { 0.0 })).collect()).collect()
    }

    pub fn split(&self) -> &IndexSplit {
        &self.split
    }

    pub fn n(&self) -> usize {
        self.split.n
    }

    pub fn potential_expr(&self) -> &Expr {
        &self.potential
    }

    pub fn gamma_exprs(&self) -> &[Vec<Expr>] {
        &self.gamma_coeffs
    }

    fn check_len<T>(&self, q: &[T]) -> Result<()> {
        if q.len() != self.n() {
            Err(Error::Dimension { expected: self.n(), got: q.len() })
        } else {
            Ok(())
        }
    }

    pub fn metric<T: Scalar>(&self, q: &[T]) -> Result<Mat<T>> {
        self.check_len(q)?;
        let n = self.n();
        let mut g = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] = self.metric[i][j].eval(q)?;
            }
        }
        Ok(g)
    }

    /// `g(q)`, failing unless it is symmetric positive definite.
    pub fn metric_spd<T: Scalar>(&self, q: &[T]) -> Result<Mat<T>> {
        let g = self.metric(q)?;
        if !g.map_re().is_spd() {
            return Err(Error::NotSpd { q: q.iter().map(|x| x.re()).collect() });
        }
        Ok(g)
    }

    /// `∂g/∂q^i` for `i = 0..n`.
    pub fn dmetric<T: Scalar>(&self, q: &[T]) -> Result<Vec<Mat<T>>> {
        let n = self.n();
        (0..n)
            .map(|i| {
                let qd = seed(q, i);
                let mut d = Mat::zeros(n, n);
                for a in 0..n {
                    for b in 0..n {
                        let e = &self.metric[a][b];
                        if !e.is_constant() {
                            d[(a, b)] = e.eval(&qd)?.eps;
                        }
                    }
                }
                Ok(d)
            })
            .collect()
    }

    /// `Γ^α_a(q)` as a `k × (n−k)` matrix.
    pub fn coefficients<T: Scalar>(&self, q: &[T]) -> Result<Mat<T>> {
        self.check_len(q)?;
        let (k, m) = (self.split.k(), self.split.m());
        let mut c = Mat::zeros(k, m);
        for al in 0..k {
            for a in 0..m {
                c[(al, a)] = self.gamma_coeffs[al][a].eval(q)?;
            }
        }
        Ok(c)
    }

    /// `∂Γ/∂q^i` for `i = 0..n`.
    pub fn dcoefficients<T: Scalar>(&self, q: &[T]) -> Result<Vec<Mat<T>>> {
        let (k, m) = (self.split.k(), self.split.m());
        (0..self.n())
            .map(|i| {
                let qd = seed(q, i);
                let mut d = Mat::zeros(k, m);
                for al in 0..k {
                    for a in 0..m {
                        let e = &self.gamma_coeffs[al][a];
                        if !e.is_constant() {
                            d[(al, a)] = e.eval(&qd)?.eps;
                        }
                    }
                }
                Ok(d)
            })
            .collect()
    }

    /// `B(q)`: free velocities to full velocities.
    pub fn embedding<T: Scalar>(&self, q: &[T]) -> Result<Mat<T>> {
        let c = self.coefficients(q)?;
        Ok(self.embedding_from(&c, true))
    }

    /// Rows of `B` assembled from a coefficient matrix; `identity` selects
    /// whether the free block carries the identity (false gives `∂B`).
    fn embedding_from<T: Scalar>(&self, c: &Mat<T>, identity: bool) -> Mat<T> {
        let (n, m) = (self.n(), self.split.m());
        let mut b = Mat::zeros(n, m);
        if identity {
            for (a, &i) in self.split.free.iter().enumerate() {
                b[(i, a)] = T::one();
            }
        }
        for (al, &i) in self.split.constrained.iter().enumerate() {
            for a in 0..m {
                b[(i, a)] = c[(al, a)];
            }
        }
        b
    }

    /// `∂B/∂q^i`.
    pub fn dembedding<T: Scalar>(&self, q: &[T]) -> Result<Vec<Mat<T>>> {
        Ok(self.dcoefficients(q)?.iter().map(|d| self.embedding_from(d, false)).collect())
    }

    /// Constraint one-forms `A^α_i = ∂φ^α/∂q̇^i` (`k × n`).
    pub fn constraint_matrix<T: Scalar>(&self, q: &[T]) -> Result<Mat<T>> {
        let c = self.coefficients(q)?;
        Ok(self.constraint_matrix_from(&c))
    }

    fn constraint_matrix_from<T: Scalar>(&self, c: &Mat<T>) -> Mat<T> {
        let (k, n) = (self.split.k(), self.n());
        let mut a = Mat::zeros(k, n);
        for (al, &i) in self.split.constrained.iter().enumerate() {
            a[(al, i)] = T::one();
            for (b, &j) in self.split.free.iter().enumerate() {
                a[(al, j)] = -c[(al, b)];
            }
        }
        a
    }

    /// `Ȧ = Σ_i v^i ∂A/∂q^i`.
    pub fn constraint_matrix_rate<T: Scalar>(&self, q: &[T], v: &[T]) -> Result<Mat<T>> {
        let (k, m) = (self.split.k(), self.split.m());
        let qd: Vec<_> = q.iter().zip(v).map(|(&a, &b)| crate::scalar::Dual::new(a, b)).collect();
        let mut c = Mat::zeros(k, m);
        for al in 0..k {
            for a in 0..m {
                c[(al, a)] = self.gamma_coeffs[al][a].eval(&qd)?.eps;
            }
        }
        let mut rate = self.constraint_matrix_from(&c);
        for (al, &i) in self.split.constrained.iter().enumerate() {
            rate[(al, i)] = T::zero();
        }
        Ok(rate)
    }

    /// `φ^α(q, v) = v^α − Γ^α_a(q) v^a`.
    pub fn constraint<T: Scalar>(&self, q: &[T], v: &[T]) -> Result<Vec<T>> {
        Ok(self.constraint_matrix(q)?.matvec(v))
    }

    pub fn potential<T: Scalar>(&self, q: &[T]) -> Result<T> {
        self.check_len(q)?;
        Ok(self.potential.eval(q)?)
    }

    pub fn grad_potential<T: Scalar>(&self, q: &[T]) -> Result<Vec<T>> {
        self.check_len(q)?;
        Ok(self.potential.eval_grad(q)?.1)
    }

    /// Unconstrained Lagrangian `𝕃(q, v) = ½ vᵀ g v − V`.
    pub fn lagrangian<T: Scalar>(&self, q: &[T], v: &[T]) -> Result<T> {
        let g = self.metric(q)?;
        Ok(T::from_f64(0.5) * g.bilinear(v, v) - self.potential(q)?)
    }

    /// Full velocity `B(q) q̇^a` for free velocities `vfree`.
    pub fn full_velocity<T: Scalar>(&self, q: &[T], vfree: &[T]) -> Result<Vec<T>> {
        Ok(self.embedding(q)?.matvec(vfree))
    }

    fn gamma_and_inverse<T: Scalar>(&self, q: &[T]) -> Result<(Mat<T>, Mat<T>, Mat<T>, Mat<T>)> {
        let g = self.metric_spd(q)?;
        let b = self.embedding(q)?;
        let gamma = b.transpose().matmul(&g).matmul(&b);
        if !gamma.map_re().is_spd() {
            return Err(Error::NotSpd { q: q.iter().map(|x| x.re()).collect() });
        }
        let inv = gamma.inverse().ok_or_else(|| Error::NotSpd { q: q.iter().map(|x| x.re()).collect() })?;
        Ok((g, b, gamma, inv))
    }

    pub fn reduced_metric<T: Scalar>(&self, q: &[T]) -> Result<ReducedMetric<T>> {
        let (g, b, gamma, gamma_inv) = self.gamma_and_inverse(q)?;
        let dg = self.dmetric(q)?;
        let db = self.dembedding(q)?;
        let bt = b.transpose();
        let gb = g.matmul(&b);
        let dgamma = (0..self.n())
            .map(|i| {
                let t1 = db[i].transpose().matmul(&gb);
                let t2 = bt.matmul(&dg[i]).matmul(&b);
                let t3 = gb.transpose().matmul(&db[i]);
                t1.add(&t2).add(&t3)
            })
            .collect();
        Ok(ReducedMetric { gamma, gamma_inv, dgamma })
    }

    /// Reduced Lagrangian `L(q, q̇^a) = ½ γ_ab q̇^a q̇^b − V`.
    pub fn reduced_lagrangian<T: Scalar>(&self, q: &[T], vfree: &[T]) -> Result<T> {
        let (_, _, gamma, _) = self.gamma_and_inverse(q)?;
        Ok(T::from_f64(0.5) * gamma.bilinear(vfree, vfree) - self.potential(q)?)
    }

    /// `p_a = γ_ab q̇^b − μ̃_α Γ^α_a`, `p_α = μ̃_α`.
    pub fn constrained_legendre<T: Scalar>(&self, s: &VakonomicState<T>) -> Result<PhaseState<T>> {
        let (_, _, gamma, _) = self.gamma_and_inverse(&s.q)?;
        let c = self.coefficients(&s.q)?;
        let gv = gamma.matvec(&s.vfree);
        let ct_mu = c.transpose().matvec(&s.mu);
        let pfree: Vec<T> = gv.iter().zip(&ct_mu).map(|(&a, &b)| a - b).collect();
        let p = self.join(&pfree, &s.mu);
        Ok(PhaseState { q: s.q.clone(), p })
    }

    /// Inverse of [`Self::constrained_legendre`]: `q̇^a = γ^ab P_b`, `μ̃ = p_α`.
    pub fn legendre_inverse<T: Scalar>(&self, state: &PhaseState<T>) -> Result<VakonomicState<T>> {
        let (_, b, gamma, _) = self.gamma_and_inverse(&state.q)?;
        let big_p = b.transpose().matvec(&state.p);
        let vfree = gamma.solve(&big_p).ok_or_else(|| Error::NotSpd { q: state.q.iter().map(|x| x.re()).collect() })?;
        let (_, mu) = self.split.split(&state.p);
        Ok(VakonomicState { q: state.q.clone(), vfree, mu })
    }

    /// `E_L = ½ γ_ab q̇^a q̇^b + V`; independent of `μ̃`.
    pub fn energy<T: Scalar>(&self, s: &VakonomicState<T>) -> Result<T> {
        let (_, _, gamma, _) = self.gamma_and_inverse(&s.q)?;
        Ok(T::from_f64(0.5) * gamma.bilinear(&s.vfree, &s.vfree) + self.potential(&s.q)?)
    }

    pub(crate) fn join<T: Scalar>(&self, free: &[T], con: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n()];
        for (&i, &v) in self.split.free.iter().zip(free) {
            out[i] = v;
        }
        for (&i, &v) in self.split.constrained.iter().zip(con) {
            out[i] = v;
        }
        out
    }
}

impl HamiltonianSystem for LinearConstraintSystem {
    fn dim(&self) -> usize {
        self.n()
    }

    /// `H = ½ γ^ab P_a P_b + V`, `P_a = p_a + p_α Γ^α_a`.
    fn hamiltonian<T: Scalar>(&self, q: &[T], p: &[T]) -> Result<T> {
        self.check_len(p)?;
        let (_, b, _, gamma_inv) = self.gamma_and_inverse(q)?;
        let big_p = b.transpose().matvec(p);
        Ok(T::from_f64(0.5) * gamma_inv.bilinear(&big_p, &big_p) + self.potential(q)?)
    }

    fn gradient<T: Scalar>(&self, q: &[T], p: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        self.check_len(p)?;
        let rm = self.reduced_metric(q)?;
        let b = self.embedding(q)?;
        let db = self.dembedding(q)?;
        let big_p = b.transpose().matvec(p);
        let w = rm.gamma_inv.matvec(&big_p);
        let dh_dp = b.matvec(&w);
        let dv = self.grad_potential(q)?;
        let half = T::from_f64(0.5);
        let dh_dq = (0..self.n())
            .map(|i| {
                let dp_i = db[i].transpose().matvec(p);
                -half * rm.dgamma[i].bilinear(&w, &w) + dot(&dp_i, &w) + dv[i]
            })
            .collect();
        Ok((dh_dq, dh_dp))
    }

    fn velocity_constraint(&self, q: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.constraint(q, v)
    }
}

/// Free-function form of [`LinearConstraintSystem::reduced_metric`].
pub fn reduced_metric<T: Scalar>(sys: &LinearConstraintSystem, q: &[T]) -> Result<ReducedMetric<T>> {
    sys.reduced_metric(q)
}

/// Free-function form of [`HamiltonianSystem::hamiltonian`] on a phase state.
pub fn hamiltonian<T: Scalar>(sys: &LinearConstraintSystem, state: &PhaseState<T>) -> Result<T> {
    sys.hamiltonian(&state.q, &state.p)
}

pub fn hamiltonian_gradient<T: Scalar>(sys: &LinearConstraintSystem, state: &PhaseState<T>) -> Result<(Vec<T>, Vec<T>)> {
    sys.gradient(&state.q, &state.p)
}

pub fn constrained_legendre<T: Scalar>(sys: &LinearConstraintSystem, s: &VakonomicState<T>) -> Result<PhaseState<T>> {
    sys.constrained_legendre(s)
}

pub fn legendre_inverse<T: Scalar>(sys: &LinearConstraintSystem, state: &PhaseState<T>) -> Result<VakonomicState<T>> {
    sys.legendre_inverse(state)
}

pub fn energy<T: Scalar>(sys: &LinearConstraintSystem, s: &VakonomicState<T>) -> Result<T> {
    sys.energy(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprs::parse_expr;

    const XYZ: [&str; 3] = ["x", "y", "z"];

    fn system(metric: &[&str], gamma_x: &str, potential: &str) -> LinearConstraintSystem {
        let g = if metric.is_empty() {
            LinearConstraintSystem::identity_metric(3)
        } else {
            (0..3)
                .map(|i| (0..3).map(|j| if i == j { parse_expr(metric[i], &XYZ).unwrap() } else { Expr::num(0.0) }).collect())
                .collect()
        };
        LinearConstraintSystem::new(
            IndexSplit::trailing(3, 1),
            g,
            parse_expr(potential, &XYZ).unwrap(),
            vec![vec![parse_expr(gamma_x, &XYZ).unwrap(), Expr::num(0.0)]],
        )
        .unwrap()
    }

    fn martinet_distribution() -> LinearConstraintSystem {
        system(&[], "y^2/2", "0")
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn reduced_metric_examples() {
        let sys = martinet_distribution();
        let rm = sys.reduced_metric(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(rm.gamma, Mat::from_rows(&[vec![1.25, 0.0], vec![0.0, 1.0]]));
        let rm = sys.reduced_metric(&[0.3, 0.0, -1.0]).unwrap();
        assert_eq!(rm.gamma, Mat::identity(2));
        let sys = system(&["2", "1", "1"], "y^2/2", "0");
        let rm = sys.reduced_metric(&[0.0, 1.0, 0.0]).unwrap();
        assert!(close(rm.gamma[(0, 0)], 2.25, 1e-15));
        assert_eq!(rm.gamma[(0, 1)], 0.0);
        assert_eq!(rm.gamma[(1, 1)], 1.0);
    }

    #[test]
    fn non_spd_metric_is_rejected() {
        let sys = system(&["x", "1", "1"], "0", "0");
        assert!(matches!(sys.reduced_metric(&[-1.0, 0.0, 0.0]), Err(Error::NotSpd { .. })));
    }

    #[test]
    fn hamiltonian_examples() {
        let sys = martinet_distribution();
        let q = [0.0, 1.0, 0.0];
        assert!(close(sys.hamiltonian(&q, &[1.0, 0.0, 2.0]).unwrap(), 1.6, 1e-15));
        assert_eq!(sys.hamiltonian(&[0.0, 0.0, 0.0], &[1.0, 1.0, 5.0]).unwrap(), 1.0);
        let sys = system(&[], "y^2/2", "x^2 + 3*z");
        assert_eq!(sys.hamiltonian(&[2.0, 1.0, 1.0], &[0.0; 3]).unwrap(), 7.0);
        let (dq, dp) = sys.gradient(&[2.0, 1.0, 1.0], &[0.0; 3]).unwrap();
        assert_eq!(dp, vec![0.0; 3]);
        assert_eq!(dq, vec![4.0, 0.0, 3.0]);
    }

    #[test]
    fn gradient_example_and_fd() {
        let sys = system(&["1 + y^2", "1", "2"], "y^2/2 + x*z", "x*y + z^2/3");
        let (_, dp) = martinet_distribution().gradient(&[0.0, 1.0, 0.0], &[1.0, 0.0, 2.0]).unwrap();
        assert!(close(dp[2], 0.8, 1e-15));
        assert!(close(dp[0], 1.6, 1e-15));
        let q = [0.3, -0.7, 0.4];
        let p = [1.1, 0.5, -0.8];
        let (dq, dp) = sys.gradient(&q, &p).unwrap();
        let e = 1e-6;
        for i in 0..3 {
            let mut qa = q;
            let mut qb = q;
            qa[i] += e;
            qb[i] -= e;
            let fd = (sys.hamiltonian(&qa, &p).unwrap() - sys.hamiltonian(&qb, &p).unwrap()) / (2.0 * e);
            assert!(close(fd, dq[i], 1e-6 * (1.0 + fd.abs())), "q{i}: {fd} vs {}", dq[i]);
            let mut pa = p;
            let mut pb = p;
            pa[i] += e;
            pb[i] -= e;
            let fd = (sys.hamiltonian(&q, &pa).unwrap() - sys.hamiltonian(&q, &pb).unwrap()) / (2.0 * e);
            assert!(close(fd, dp[i], 1e-6 * (1.0 + fd.abs())), "p{i}: {fd} vs {}", dp[i]);
        }
    }

    #[test]
    fn legendre_examples() {
        let sys = martinet_distribution();
        let split = sys.split().clone();
        let s = VakonomicState::new(&split, vec![0.0, 1.0, 0.0], vec![1.0, 0.0], vec![2.0]).unwrap();
        let ps = sys.constrained_legendre(&s).unwrap();
        assert!(close(ps.p[0], 0.25, 1e-15) && ps.p[1] == 0.0 && ps.p[2] == 2.0);
        let back = sys.legendre_inverse(&ps).unwrap();
        assert!(close(back.vfree[0], 1.0, 1e-15) && back.vfree[1].abs() < 1e-15 && back.mu == vec![2.0]);

        let zero = VakonomicState::new(&split, vec![0.4, 0.2, 0.1], vec![0.0, 0.0], vec![0.0]).unwrap();
        assert_eq!(sys.constrained_legendre(&zero).unwrap().p, vec![0.0; 3]);
        let inv = sys.legendre_inverse(&PhaseState::new(vec![0.4, 0.2, 0.1], vec![0.0; 3]).unwrap()).unwrap();
        assert_eq!(inv.vfree, vec![0.0, 0.0]);
        assert_eq!(inv.mu, vec![0.0]);
    }

    #[test]
    fn energy_examples() {
        let sys = martinet_distribution();
        let split = sys.split().clone();
        let s = VakonomicState::new(&split, vec![0.0, 1.0, 0.0], vec![1.0, 0.0], vec![2.0]).unwrap();
        let e = sys.energy(&s).unwrap();
        assert!(close(e, 0.625, 1e-15));
        let ps = sys.constrained_legendre(&s).unwrap();
        assert!(close(sys.hamiltonian(&ps.q, &ps.p).unwrap(), e, 1e-14));
        let mut s2 = s.clone();
        s2.mu = vec![-7.5];
        assert_eq!(sys.energy(&s2).unwrap(), e);
        let with_v = system(&[], "y^2/2", "x^2 + 1");
        let rest = VakonomicState::new(&split, vec![2.0, 1.0, 0.0], vec![0.0, 0.0], vec![3.0]).unwrap();
        assert_eq!(with_v.energy(&rest).unwrap(), 5.0);
    }

    #[test]
    fn dgamma_is_symmetric_and_matches_fd() {
        let sys = system(&["1 + y^2", "2", "1"], "y^2/2 + x*z", "0");
        let q = [0.2, 0.9, -0.5];
        let rm = sys.reduced_metric(&q).unwrap();
        for i in 0..3 {
            assert!(rm.dgamma[i].is_symmetric(1e-15));
            let e = 1e-6;
            let mut qa = q;
            let mut qb = q;
            qa[i] += e;
            qb[i] -= e;
            let ga = sys.reduced_metric(&qa).unwrap().gamma;
            let gb = sys.reduced_metric(&qb).unwrap().gamma;
            let fd = ga.sub(&gb).scale(0.5 / e);
            assert!(fd.sub(&rm.dgamma[i]).max_abs() < 1e-8);
        }
    }

    #[test]
    fn constraint_matrix_rate_matches_fd() {
        let sys = system(&[], "y^2/2 + x*z", "0");
        let q = [0.2, 0.9, -0.5];
        let v = [1.0, -0.3, 0.7];
        let rate = sys.constraint_matrix_rate(&q, &v).unwrap();
        let e = 1e-6;
        let qa: Vec<f64> = q.iter().zip(&v).map(|(a, b)| a + e * b).collect();
        let qb: Vec<f64> = q.iter().zip(&v).map(|(a, b)| a - e * b).collect();
        let fd = sys.constraint_matrix(&qa).unwrap().sub(&sys.constraint_matrix(&qb).unwrap()).scale(0.5 / e);
        assert!(fd.sub(&rate).max_abs() < 1e-8);
    }

    #[test]
    fn construction_validates_shapes() {
        let bad = LinearConstraintSystem::new(
            IndexSplit::trailing(3, 1),
            LinearConstraintSystem::identity_metric(3),
            Expr::num(0.0),
            vec![vec![Expr::num(0.0)]],
        );
        assert!(matches!(bad, Err(Error::InvalidSystem(_))));
        let mut g = LinearConstraintSystem::identity_metric(2);
        g[0][1] = Expr::var(0);
        let asym = LinearConstraintSystem::new(IndexSplit::unconstrained(2), g, Expr::num(0.0), vec![]);
        assert!(asym.is_err());
        let out_of_range = LinearConstraintSystem::new(
            IndexSplit::unconstrained(2),
            LinearConstraintSystem::identity_metric(2),
            Expr::var(4),
            vec![],
        );
        assert!(out_of_range.is_err());
    }
}
