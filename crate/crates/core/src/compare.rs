//! Curvature of the constraint connection and detection of trajectories
//! shared by the nonholonomic and the vakonomic dynamics.
//!
//! Along a nonholonomic solution with multipliers `λ`, the vakonomic
//! multiplier `μ = p_α − ∂𝕃/∂q̇^α` must satisfy the linear ODE
//! `μ̇_β = −μ_α ∂_βΓ^α_b q̇^b − λ_β` together with the algebraic condition
//! `q̇^a μ_α R^α_ab = 0`. The scan propagates `μ(t) = Φ(t) μ₀ + c(t)` and
//! fits `μ₀` by least squares.

use nalgebra::{DMatrix, DVector};

use crate::continuous::{nonholonomic_rhs, NonholonomicState};
use crate::dense::{norm_inf, Mat};
use crate::discrete::{discrete_constraint, discrete_constraint_jacobians, discrete_nonholonomic_step, Discretization, NewtonConfig};
use crate::error::{Error, Result};
use crate::linsys::LinearConstraintSystem;
use crate::state::Trajectory;

/// Verdict threshold for the continuous scan.
pub const CONTINUOUS_COMMON_TOL: f64 = 1e-6;
/// Verdict threshold for the discrete check.
pub const DISCRETE_COMMON_TOL: f64 = 1e-8;

/// `R^α_ab(q)`, stored as one antisymmetric `m × m` matrix per constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureTensor {
    pub r: Vec<Mat<f64>>,
}

impl CurvatureTensor {
    pub fn get(&self, alpha: usize, a: usize, b: usize) -> f64 {
        self.r[alpha][(a, b)]
    }

    pub fn max_abs(&self) -> f64 {
        self.r.iter().map(|m| m.max_abs()).fold(0.0, f64::max)
    }
}

/// `R^α_ab = ∂_aΓ^α_b − ∂_bΓ^α_a + Γ^β_a ∂_βΓ^α_b − Γ^β_b ∂_βΓ^α_a`.
pub fn curvature(sys: &LinearConstraintSystem, q: &[f64]) -> Result<CurvatureTensor> {
    let split = sys.split();
    let (m, k) = (split.m(), split.k());
    let c = sys.coefficients(q)?;
    let dc = sys.dcoefficients(q)?;
    let mut r = vec![Mat::zeros(m, m); k];
    for (al, ra) in r.iter_mut().enumerate() {
        for a in 0..m {
            for b in a + 1..m {
                let (ia, ib) = (split.free[a], split.free[b]);
                let mut v = dc[ia][(al, b)] - dc[ib][(al, a)];
                for (be, &ibe) in split.constrained.iter().enumerate() {
                    v += c[(be, a)] * dc[ibe][(al, b)] - c[(be, b)] * dc[ibe][(al, a)];
                }
                ra[(a, b)] = v;
                ra[(b, a)] = -v;
            }
        }
    }
    Ok(CurvatureTensor { r })
}

/// `r_b = Σ vfree^a μ_α R^α_ab(q)`.
pub fn comparison_residual(sys: &LinearConstraintSystem, q: &[f64], vfree: &[f64], mu: &[f64]) -> Result<Vec<f64>> {
    let split = sys.split();
    if vfree.len() != split.m() {
        return Err(Error::Dimension { expected: split.m(), got: vfree.len() });
    }
    if mu.len() != split.k() {
        return Err(Error::Dimension { expected: split.k(), got: mu.len() });
    }
    let curv = curvature(sys, q)?;
    Ok(contract(&curv, vfree, mu))
}

fn contract(curv: &CurvatureTensor, vfree: &[f64], mu: &[f64]) -> Vec<f64> {
    let m = vfree.len();
    (0..m)
        .map(|b| {
            let mut s = 0.0;
            for (al, &mu_al) in mu.iter().enumerate() {
                for (a, &va) in vfree.iter().enumerate() {
                    s += va * mu_al * curv.r[al][(a, b)];
                }
            }
            s
        })
        .collect()
}

/// How `μ(t)` is reconstructed along a nonholonomic trajectory.
#[derive(Clone, Debug, PartialEq)]
pub enum MuFit {
    /// Propagate the momentum equations and choose `μ(0)` by least squares.
    Propagated,
    /// Propagate from a prescribed `μ(0)`.
    Fixed(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanSample {
    pub t: f64,
    pub mu: Vec<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanReport {
    pub mu0: Vec<f64>,
    /// Root-mean-square of the stacked residual at the fitted `μ₀`.
    pub fit_residual: f64,
    /// `max_t ‖q̇^a μ_α R^α_ab‖∞`.
    pub curvature_residual: f64,
    pub max_curvature: f64,
    pub samples: Vec<ScanSample>,
    pub tolerance: f64,
    pub common: bool,
}

fn frame(sys: &LinearConstraintSystem, q: &[f64], v: &[f64]) -> Result<Mat<f64>> {
    // M_βα = −∂_βΓ^α_b q̇^b
    let split = sys.split();
    let k = split.k();
    let dc = sys.dcoefficients(q)?;
    let (vfree, _) = split.split(v);
    let mut mm = Mat::zeros(k, k);
    for (be, &ibe) in split.constrained.iter().enumerate() {
        let d = dc[ibe].matvec(&vfree);
        for al in 0..k {
            mm[(be, al)] = -d[al];
        }
    }
    Ok(mm)
}

/// Joint right-hand side of `(q, v, Φ, c)`.
fn propagate_rhs(sys: &LinearConstraintSystem, x: &[f64]) -> Result<Vec<f64>> {
    let n = sys.n();
    let k = sys.split().k();
    let (q, rest) = x.split_at(n);
    let (v, rest) = rest.split_at(n);
    let (phi, c) = rest.split_at(k * k);
    let s = NonholonomicState { q: q.to_vec(), v: v.to_vec() };
    let (acc, lambda) = nonholonomic_rhs(sys, &s)?;
    let mm = frame(sys, q, v)?;
    let phi = Mat::from_fn(k, k, |i, j| phi[i * k + j]);
    let dphi = mm.matmul(&phi);
    let mc = mm.matvec(c);
    let mut out: Vec<f64> = v.to_vec();
    out.extend(acc);
    for i in 0..k {
        for j in 0..k {
            out.push(dphi[(i, j)]);
        }
    }
    out.extend((0..k).map(|i| mc[i] - lambda[i]));
    Ok(out)
}

fn rk4(sys: &LinearConstraintSystem, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let add = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + s * y).collect() };
    let k1 = propagate_rhs(sys, x)?;
    let k2 = propagate_rhs(sys, &add(x, h / 2.0, &k1))?;
    let k3 = propagate_rhs(sys, &add(x, h / 2.0, &k2))?;
    let k4 = propagate_rhs(sys, &add(x, h, &k3))?;
    Ok((0..x.len()).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

/// Least-squares solution of `A x ≈ b` by SVD; returns `(x, residual)`.
pub fn least_squares(a: &Mat<f64>, b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = (a.rows(), a.cols());
    if cols == 0 {
        return (Vec::new(), b.to_vec());
    }
    let am = DMatrix::from_fn(rows, cols, |i, j| a[(i, j)]);
    let bv = DVector::from_column_slice(b);
    let svd = am.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let x = svd.solve(&bv, smax * 1e-13).map(|x| x.iter().copied().collect::<Vec<_>>()).unwrap_or_else(|_| vec![0.0; cols]);
    let r = &am * DVector::from_column_slice(&x) - bv;
    (x, r.iter().copied().collect())
}

/// Scans a nonholonomic trajectory (columns `q` and `v`) for membership in
/// the common set of both dynamics.
pub fn common_solution_scan(sys: &LinearConstraintSystem, traj: &Trajectory, fit: &MuFit) -> Result<ScanReport> {
    let split = sys.split();
    let (n, m, k) = (split.n, split.m(), split.k());
    if k == 0 {
        return Err(Error::InvalidSystem("comparison requires constraints".into()));
    }
    let qc = traj.column("q")?;
    let vc = traj.column("v")?;
    for c in [qc, vc] {
        if c.width != n {
            return Err(Error::Dimension { expected: n, got: c.width });
        }
    }
    let times = traj.times();
    let len = traj.len();

    // Φ_i, c_i at every sample
    let mut phis = Vec::with_capacity(len);
    let mut cs = Vec::with_capacity(len);
    let mut phi = Mat::identity(k);
    let mut c = vec![0.0; k];
    for i in 0..len {
        phis.push(phi.clone());
        cs.push(c.clone());
        if i + 1 == len {
            break;
        }
        let mut x: Vec<f64> = qc.row(i).iter().chain(vc.row(i)).copied().collect();
        for r in 0..k {
            for s in 0..k {
                x.push(phi[(r, s)]);
            }
        }
        x.extend_from_slice(&c);
        let y = rk4(sys, &x, times[i + 1] - times[i])?;
        let off = 2 * n;
        phi = Mat::from_fn(k, k, |r, s| y[off + r * k + s]);
        c = y[off + k * k..].to_vec();
    }

    // r_i(μ₀) = G_i μ₀ + d_i
    let mut g = Mat::zeros(len * m, k);
    let mut d = vec![0.0; len * m];
    let mut max_curvature: f64 = 0.0;
    let mut curvs = Vec::with_capacity(len);
    for i in 0..len {
        let q = qc.row(i);
        let (vfree, _) = split.split(vc.row(i));
        let curv = curvature(sys, q)?;
        max_curvature = max_curvature.max(curv.max_abs());
        for col in 0..k {
            let e: Vec<f64> = (0..k).map(|r| phis[i][(r, col)]).collect();
            let rc = contract(&curv, &vfree, &e);
            for b in 0..m {
                g[(i * m + b, col)] = rc[b];
            }
        }
        let rd = contract(&curv, &vfree, &cs[i]);
        for b in 0..m {
            d[i * m + b] = rd[b];
        }
        curvs.push((vfree, curv));
    }
    let mu0 = match fit {
        MuFit::Propagated => {
            let neg: Vec<f64> = d.iter().map(|v| -v).collect();
            least_squares(&g, &neg).0
        }
        MuFit::Fixed(mu0) => {
            if mu0.len() != k {
                return Err(Error::Dimension { expected: k, got: mu0.len() });
            }
            mu0.clone()
        }
    };
    let gm = g.matvec(&mu0);
    let stacked: Vec<f64> = gm.iter().zip(&d).map(|(a, b)| a + b).collect();
    let fit_residual = if stacked.is_empty() {
        0.0
    } else {
        (stacked.iter().map(|v| v * v).sum::<f64>() / stacked.len() as f64).sqrt()
    };
    let mut samples = Vec::with_capacity(len);
    let mut curvature_residual: f64 = 0.0;
    for i in 0..len {
        let pm = phis[i].matvec(&mu0);
        let mu: Vec<f64> = pm.iter().zip(&cs[i]).map(|(a, b)| a + b).collect();
        let (vfree, curv) = &curvs[i];
        let residual = norm_inf(&contract(curv, vfree, &mu));
        curvature_residual = curvature_residual.max(residual);
        samples.push(ScanSample { t: times[i], mu, residual });
    }
    let tolerance = CONTINUOUS_COMMON_TOL;
    let common = fit_residual <= tolerance && curvature_residual <= tolerance;
    Ok(ScanReport { mu0, fit_residual, curvature_residual, max_curvature, samples, tolerance, common })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteCheckReport {
    pub qnext: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Least-squares vakonomic multipliers on `(q_{k−1}, q_k)` and `(q_k, q_{k+1})`.
    pub mu_prev: Vec<f64>,
    pub mu_next: Vec<f64>,
    /// `‖λ ω(q_k) + μ̃_k D₂φ_d + μ̃_{k+1} D₁φ_d‖∞` at the least-squares optimum.
    pub residual: f64,
    /// `‖φ_d(q_{k−1}, q_k)‖∞`.
    pub seed_constraint: f64,
    pub tolerance: f64,
    pub common: bool,
}

/// Runs one discrete nonholonomic step from `(q_{k−1}, q_k)` and tests
/// whether the same configuration triple solves the discrete vakonomic
/// equations for some multipliers.
pub fn discrete_common_solution_check(
    sys: &LinearConstraintSystem,
    qprev: &[f64],
    qcur: &[f64],
    h: f64,
    cfg: &NewtonConfig,
) -> Result<DiscreteCheckReport> {
    let split = sys.split();
    let (n, k) = (split.n, split.k());
    if k == 0 {
        return Err(Error::InvalidSystem("comparison requires constraints".into()));
    }
    let (qnext, lambda) = discrete_nonholonomic_step(sys, qprev, qcur, h, None, cfg)?;
    let omega = sys.constraint_matrix(qcur)?;
    let (_, d2phi) = discrete_constraint_jacobians(sys, qprev, qcur, Discretization::Euler)?;
    let (d1phi, _) = discrete_constraint_jacobians(sys, qcur, &qnext, Discretization::Euler)?;
    let mut a = Mat::zeros(n, 2 * k);
    let mut b = vec![0.0; n];
    for i in 0..n {
        for al in 0..k {
            a[(i, al)] = d2phi[(al, i)];
            a[(i, k + al)] = d1phi[(al, i)];
            b[i] -= lambda[al] * omega[(al, i)];
        }
    }
    let (x, r) = least_squares(&a, &b);
    let residual = norm_inf(&r);
    let seed_constraint = norm_inf(&discrete_constraint(sys, qprev, qcur, Discretization::Euler)?);
    let tolerance = DISCRETE_COMMON_TOL;
    Ok(DiscreteCheckReport {
        qnext,
        lambda,
        mu_prev: x[..k].to_vec(),
        mu_next: x[k..].to_vec(),
        residual,
        seed_constraint,
        tolerance,
        common: residual <= tolerance && seed_constraint <= tolerance,
    })
}
