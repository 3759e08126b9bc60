//! One-step maps. Implicit symplectic integrators for a [`HamiltonianSystem`],
//! the discrete constrained variational (vakonomic) step, the discrete
//! nonholonomic step, and the discrete Legendre transforms.
//!
//! Stored momenta are physical: for a configuration pair `(q0, q1)`,
//! `p0 = −D₁(𝕃_d + λ·φ_d)` and `p1 = D₂(𝕃_d + λ·φ_d)`.

use std::env;

use crate::dense::{norm_inf, Mat};
use crate::error::{Error, NewtonError, Result};
use crate::hamiltonian::HamiltonianSystem;
use crate::linsys::LinearConstraintSystem;
use crate::scalar::{jacobian, lift, seed, Scalar};
use crate::state::PhaseState;

/// Condition number beyond which a step is declared irregular.
pub const REGULARITY_LIMIT: f64 = 1e12;

/// Smallest line-search factor tried before the step is accepted anyway.
const LINE_SEARCH_FLOOR: f64 = 1.0 / 1024.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JacobianMode {
    /// Forward-mode duals through the residual.
    Exact,
    /// Central differences with the given step.
    FiniteDifference(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub jacobian: JacobianMode,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { tol: 1e-12, max_iter: 50, jacobian: JacobianMode::Exact }
    }
}

impl NewtonConfig {
    pub const FD_STEP: f64 = 1e-7;
    pub const TOL_ENV: &'static str = "GEOMINT_NEWTON_TOL";

    pub fn new(tol: f64, max_iter: usize, jacobian: JacobianMode) -> Result<Self> {
        let cfg = NewtonConfig { tol, max_iter, jacobian };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn finite_difference() -> Self {
        NewtonConfig { jacobian: JacobianMode::FiniteDifference(Self::FD_STEP), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidSystem(format!(
                "Newton tolerance must be positive and max_iter at least 1 (got {}, {})",
                self.tol, self.max_iter
            )));
        }
        if let JacobianMode::FiniteDifference(s) = self.jacobian {
            if !(s > 0.0) {
                return Err(Error::InvalidSystem(format!("finite-difference step must be positive, got {s}")));
            }
        }
        Ok(())
    }

    /// Defaults with `tol` taken from `GEOMINT_NEWTON_TOL` when set.
    pub fn from_env() -> Result<Self> {
        let mut cfg = Self::default();
        if let Ok(s) = env::var(Self::TOL_ENV) {
            cfg.tol = s
                .trim()
                .parse()
                .map_err(|_| Error::InvalidSystem(format!("{}: cannot parse `{s}` as a number", Self::TOL_ENV)))?;
            cfg.validate()?;
        }
        Ok(cfg)
    }
}

/// A square nonlinear system `F(x) = 0`, evaluable on any scalar so that
/// exact Jacobians come from dual numbers.
pub trait Residual {
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>>;
}

/// Plain `f64` closure residual; only usable with finite-difference
/// Jacobians.
pub struct FnResidual<F>(pub F);

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonSolution {
    pub x: Vec<f64>,
    pub iters: usize,
    pub residual: f64,
}

fn jacobian_at<R: Residual>(r: &R, x: &[f64], fx: &[f64], mode: JacobianMode) -> Result<Mat<f64>> {
    match mode {
        JacobianMode::Exact => jacobian(x, |xd| r.eval(xd)),
        JacobianMode::FiniteDifference(step) => {
            let n = x.len();
            let mut jac = Mat::zeros(fx.len(), n);
            for j in 0..n {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[j] += step;
                xm[j] -= step;
                let fp = r.eval(&xp)?;
                let fm = r.eval(&xm)?;
                for i in 0..fx.len() {
                    jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
                }
            }
            Ok(jac)
        }
    }
}

/// Damped Newton iteration with a halving line search.
///
/// A singular Jacobian at a later iterate falls back on the last
/// factorization; only a singular Jacobian at `x0` is an error.
pub fn solve_implicit<R: Residual>(r: &R, x0: &[f64], cfg: &NewtonConfig) -> Result<NewtonSolution> {
    cfg.validate()?;
    let mut x = x0.to_vec();
    let mut fx = r.eval(&x)?;
    if fx.len() != x.len() {
        return Err(Error::Dimension { expected: x.len(), got: fx.len() });
    }
    let mut norm = norm_inf(&fx);
    if !norm.is_finite() {
        return Err(NewtonError::Residual(format!("non-finite residual at {x:?}")).into());
    }
    if norm <= cfg.tol {
        return Ok(NewtonSolution { x, iters: 0, residual: norm });
    }
    let mut last_lu = None;
    for iter in 1..=cfg.max_iter {
        let jac = jacobian_at(r, &x, &fx, cfg.jacobian)?;
        match jac.lu() {
            Some(lu) => last_lu = Some(lu),
            None if last_lu.is_none() => return Err(NewtonError::SingularJacobian { at: x }.into()),
            None => {}
        }
        let lu = last_lu.as_ref().expect("factorization available");
        let neg: Vec<f64> = fx.iter().map(|v| -v).collect();
        let dx = lu.solve(&neg);

        let mut t = 1.0;
        let (xn, fxn, nn) = loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + t * b).collect();
            if let Ok(ft) = r.eval(&trial) {
                let nt = norm_inf(&ft);
                if nt < norm || (t <= LINE_SEARCH_FLOOR && nt.is_finite()) {
                    break (trial, ft, nt);
                }
            }
            if t <= LINE_SEARCH_FLOOR {
                return Err(NewtonError::NoConvergence { iters: iter, final_residual: norm }.into());
            }
            t *= 0.5;
        };
        x = xn;
        fx = fxn;
        norm = nn;
        if norm <= cfg.tol {
            return Ok(NewtonSolution { x, iters: iter, residual: norm });
        }
    }
    Err(NewtonError::NoConvergence { iters: cfg.max_iter, final_residual: norm }.into())
}

/// Newton on an `f64` closure with central-difference Jacobians.
pub fn solve_implicit_fd<F>(f: F, x0: &[f64], cfg: &NewtonConfig) -> Result<NewtonSolution>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut cfg = *cfg;
    if cfg.jacobian == JacobianMode::Exact {
        cfg.jacobian = JacobianMode::FiniteDifference(NewtonConfig::FD_STEP);
    }
    solve_implicit(&FnResidual(f), x0, &cfg)
}

impl<F> Residual for FnResidual<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let re: Vec<f64> = x.iter().map(|v| v.re()).collect();
        if x.iter().zip(&re).any(|(v, &r)| *v != T::from_f64(r)) {
            return Err(NewtonError::Residual("closure residuals support finite-difference Jacobians only".into()).into());
        }
        Ok((self.0)(&re)?.into_iter().map(T::from_f64).collect())
    }
}

fn consts<T: Scalar>(x: &[f64]) -> Vec<T> {
    x.iter().map(|&v| T::from_f64(v)).collect()
}

fn axpy<T: Scalar>(a: &[T], s: T, b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + s * y).collect()
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidStep(h))
    }
}

fn check_signed_step(h: f64) -> Result<()> {
    if h != 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidStep(h))
    }
}

fn check_state<S: HamiltonianSystem>(sys: &S, state: &PhaseState) -> Result<()> {
    let n = sys.dim();
    for len in [state.q.len(), state.p.len()] {
        if len != n {
            return Err(Error::Dimension { expected: n, got: len });
        }
    }
    Ok(())
}

// p1 − p0 + h H_q(q0, p1)
struct EulerA<'a, S> {
    sys: &'a S,
    q0: &'a [f64],
    p0: &'a [f64],
    h: f64,
}

impl<S: HamiltonianSystem> Residual for EulerA<'_, S> {
    fn eval<T: Scalar>(&self, p1: &[T]) -> Result<Vec<T>> {
        let (hq, _) = self.sys.gradient(&consts::<T>(self.q0), p1)?;
        let h = T::from_f64(self.h);
        Ok((0..p1.len()).map(|i| p1[i] - T::from_f64(self.p0[i]) + h * hq[i]).collect())
    }
}

// q1 − q0 − h H_p(q1, p)
struct EulerBPosition<'a, S> {
    sys: &'a S,
    q0: &'a [f64],
    p: &'a [f64],
    h: f64,
}

impl<S: HamiltonianSystem> Residual for EulerBPosition<'_, S> {
    fn eval<T: Scalar>(&self, q1: &[T]) -> Result<Vec<T>> {
        let (_, hp) = self.sys.gradient(q1, &consts::<T>(self.p))?;
        let h = T::from_f64(self.h);
        Ok((0..q1.len()).map(|i| q1[i] - T::from_f64(self.q0[i]) - h * hp[i]).collect())
    }
}

struct MidpointResidual<'a, S> {
    sys: &'a S,
    q0: &'a [f64],
    p0: &'a [f64],
    h: f64,
}

impl<S: HamiltonianSystem> Residual for MidpointResidual<'_, S> {
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let n = self.q0.len();
        let half = T::from_f64(0.5);
        let h = T::from_f64(self.h);
        let qm: Vec<T> = (0..n).map(|i| half * (T::from_f64(self.q0[i]) + x[i])).collect();
        let pm: Vec<T> = (0..n).map(|i| half * (T::from_f64(self.p0[i]) + x[n + i])).collect();
        let (hq, hp) = self.sys.gradient(&qm, &pm)?;
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            out.push(x[i] - T::from_f64(self.q0[i]) - h * hp[i]);
        }
        for i in 0..n {
            out.push(x[n + i] - T::from_f64(self.p0[i]) + h * hq[i]);
        }
        Ok(out)
    }
}

// q1 − q0 − (h/2)(H_p(q0, p) + H_p(q1, p))
struct VerletPosition<'a, S> {
    sys: &'a S,
    q0: &'a [f64],
    p: &'a [f64],
    hp0: &'a [f64],
    h: f64,
}

impl<S: HamiltonianSystem> Residual for VerletPosition<'_, S> {
    fn eval<T: Scalar>(&self, q1: &[T]) -> Result<Vec<T>> {
        let (_, hp1) = self.sys.gradient(q1, &consts::<T>(self.p))?;
        let hh = T::from_f64(self.h / 2.0);
        Ok((0..q1.len())
            .map(|i| q1[i] - T::from_f64(self.q0[i]) - hh * (T::from_f64(self.hp0[i]) + hp1[i]))
            .collect())
    }
}

fn euler_a_signed<S: HamiltonianSystem>(sys: &S, state: &PhaseState, h: f64, cfg: &NewtonConfig) -> Result<PhaseState> {
    check_signed_step(h)?;
    check_state(sys, state)?;
    let (q0, p0) = (&state.q, &state.p);
    let (hq, _) = sys.gradient(q0, p0)?;
    let guess = axpy(p0, -h, &hq);
    let p1 = solve_implicit(&EulerA { sys, q0, p0, h }, &guess, cfg)?.x;
    let (_, hp) = sys.gradient(q0, &p1)?;
    Ok(PhaseState { q: axpy(q0, h, &hp), p: p1 })
}

fn euler_b_signed<S: HamiltonianSystem>(sys: &S, state: &PhaseState, h: f64, cfg: &NewtonConfig) -> Result<PhaseState> {
    check_signed_step(h)?;
    check_state(sys, state)?;
    let (q0, p) = (&state.q, &state.p);
    let (_, hp) = sys.gradient(q0, p)?;
    let guess = axpy(q0, h, &hp);
    let q1 = solve_implicit(&EulerBPosition { sys, q0, p, h }, &guess, cfg)?.x;
    let (hq, _) = sys.gradient(&q1, p)?;
    Ok(PhaseState { p: axpy(p, -h, &hq), q: q1 })
}

fn midpoint_signed<S: HamiltonianSystem>(sys: &S, state: &PhaseState, h: f64, cfg: &NewtonConfig) -> Result<PhaseState> {
    check_signed_step(h)?;
    check_state(sys, state)?;
    let (q0, p0) = (&state.q, &state.p);
    let n = q0.len();
    let (hq, hp) = sys.gradient(q0, p0)?;
    let guess: Vec<f64> = axpy(q0, h, &hp).into_iter().chain(axpy(p0, -h, &hq)).collect();
    let x = solve_implicit(&MidpointResidual { sys, q0, p0, h }, &guess, cfg)?.x;
    Ok(PhaseState { q: x[..n].to_vec(), p: x[n..].to_vec() })
}

fn verlet_signed<S: HamiltonianSystem>(sys: &S, state: &PhaseState, h: f64, cfg: &NewtonConfig) -> Result<PhaseState> {
    check_signed_step(h)?;
    check_state(sys, state)?;
    let q0 = &state.q;
    let half = euler_a_signed(sys, state, h / 2.0, cfg)?;
    let ph = &half.p;
    let (_, hp0) = sys.gradient(q0, ph)?;
    let guess = axpy(q0, h, &hp0);
    let q1 = solve_implicit(&VerletPosition { sys, q0, p: ph, hp0: &hp0, h }, &guess, cfg)?.x;
    let (hq1, _) = sys.gradient(&q1, ph)?;
    Ok(PhaseState { p: axpy(ph, -h / 2.0, &hq1), q: q1 })
}

/// `p₁ = p₀ − h H_q(q₀, p₁)`, `q₁ = q₀ + h H_p(q₀, p₁)`.
pub fn symplectic_euler_step<S: HamiltonianSystem>(sys: &S, state: &PhaseState, h: f64, cfg: &NewtonConfig) -> Result<PhaseState> {
    check_step(h)?;
    euler_a_signed(sys, state, h, cfg)
}

/// Implicit midpoint rule, Newton on `(q₁, p₁)` jointly.
pub fn midpoint_step<S: HamiltonianSystem>(sys: &S, state: &PhaseState, h: f64, cfg: &NewtonConfig) -> Result<PhaseState> {
    check_step(h)?;
    midpoint_signed(sys, state, h, cfg)
}

/// Störmer–Verlet in three stages: implicit `p_{1/2}`, implicit `q₁`,
/// explicit `p₁`.
pub fn stormer_verlet_step<S: HamiltonianSystem>(sys: &S, state: &PhaseState, h: f64, cfg: &NewtonConfig) -> Result<PhaseState> {
    check_step(h)?;
    verlet_signed(sys, state, h, cfg)
}

/// Symplectic Euler over a step `h`: implicit in the new momentum. With
/// `h/2` this is the first half of Störmer–Verlet.
pub fn half_euler_a<S: HamiltonianSystem>(sys: &S, state: &PhaseState, h: f64, cfg: &NewtonConfig) -> Result<PhaseState> {
    check_step(h)?;
    euler_a_signed(sys, state, h, cfg)
}

/// Adjoint symplectic Euler: `q₁ = q₀ + h H_p(q₁, p₀)`,
/// `p₁ = p₀ − h H_q(q₁, p₀)`.
pub fn half_euler_b<S: HamiltonianSystem>(sys: &S, state: &PhaseState, h: f64, cfg: &NewtonConfig) -> Result<PhaseState> {
    check_step(h)?;
    euler_b_signed(sys, state, h, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    SymplecticEuler,
    Midpoint,
    StormerVerlet,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::SymplecticEuler, Scheme::Midpoint, Scheme::StormerVerlet];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::SymplecticEuler => "symplectic_euler",
            Scheme::Midpoint => "midpoint",
            Scheme::StormerVerlet => "verlet",
        }
    }

    pub fn order(self) -> u32 {
        match self {
            Scheme::SymplecticEuler => 1,
            Scheme::Midpoint | Scheme::StormerVerlet => 2,
        }
    }

    pub fn step<S: HamiltonianSystem>(self, sys: &S, state: &PhaseState, h: f64, cfg: &NewtonConfig) -> Result<PhaseState> {
        check_step(h)?;
        self.step_signed(sys, state, h, cfg)
    }

    /// As [`Scheme::step`] but also accepts `h < 0`, for adjoint checks.
    pub fn step_signed<S: HamiltonianSystem>(self, sys: &S, state: &PhaseState, h: f64, cfg: &NewtonConfig) -> Result<PhaseState> {
        match self {
            Scheme::SymplecticEuler => euler_a_signed(sys, state, h, cfg),
            Scheme::Midpoint => midpoint_signed(sys, state, h, cfg),
            Scheme::StormerVerlet => verlet_signed(sys, state, h, cfg),
        }
    }
}

/// Where the discrete Lagrangian samples the configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Discretization {
    /// `𝕃_d = h 𝕃(q₀, (q₁ − q₀)/h)`
    Euler,
    /// `𝕃_d = h 𝕃((q₀ + q₁)/2, (q₁ − q₀)/h)`
    Midpoint,
}

impl Discretization {
    fn point<T: Scalar>(self, q0: &[T], q1: &[T]) -> Vec<T> {
        match self {
            Discretization::Euler => q0.to_vec(),
            Discretization::Midpoint => {
                let half = T::from_f64(0.5);
                q0.iter().zip(q1).map(|(&a, &b)| half * (a + b)).collect()
            }
        }
    }
}

/// `𝕃_d(q₀, q₁)`.
pub fn discrete_lagrangian<T: Scalar>(sys: &LinearConstraintSystem, q0: &[T], q1: &[T], h: f64, disc: Discretization) -> Result<T> {
    let ht = T::from_f64(h);
    let v: Vec<T> = q0.iter().zip(q1).map(|(&a, &b)| (b - a) / ht).collect();
    Ok(ht * sys.lagrangian(&disc.point(q0, q1), &v)?)
}

/// `φ_d^α = (q₁ − q₀)^α − Γ^α_a(point) (q₁ − q₀)^a`, not divided by `h`.
pub fn discrete_constraint<T: Scalar>(sys: &LinearConstraintSystem, q0: &[T], q1: &[T], disc: Discretization) -> Result<Vec<T>> {
    let d: Vec<T> = q0.iter().zip(q1).map(|(&a, &b)| b - a).collect();
    Ok(sys.constraint_matrix(&disc.point(q0, q1))?.matvec(&d))
}

fn augmented<T: Scalar>(sys: &LinearConstraintSystem, q0: &[T], q1: &[T], lam: &[T], h: f64, disc: Discretization) -> Result<T> {
    let mut s = discrete_lagrangian(sys, q0, q1, h, disc)?;
    for (&l, &c) in lam.iter().zip(&discrete_constraint(sys, q0, q1, disc)?) {
        s += l * c;
    }
    Ok(s)
}

/// `(D₁, D₂)` of `𝕃_d + λ·φ_d`.
fn augmented_slots<T: Scalar>(
    sys: &LinearConstraintSystem,
    q0: &[T],
    q1: &[T],
    lam: &[T],
    h: f64,
    disc: Discretization,
) -> Result<(Vec<T>, Vec<T>)> {
    let n = q0.len();
    let (q0c, q1c, lc) = (lift(q0), lift(q1), lift(lam));
    let mut d0 = Vec::with_capacity(n);
    let mut d1 = Vec::with_capacity(n);
    for i in 0..n {
        d0.push(augmented(sys, &seed(q0, i), &q1c, &lc, h, disc)?.eps);
        d1.push(augmented(sys, &q0c, &seed(q1, i), &lc, h, disc)?.eps);
    }
    Ok((d0, d1))
}

fn check_pos(sys: &LinearConstraintSystem, v: &[f64]) -> Result<()> {
    if v.len() != sys.n() {
        Err(Error::Dimension { expected: sys.n(), got: v.len() })
    } else {
        Ok(())
    }
}

/// Output of [`discrete_vakonomic_step`].
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteVakStep {
    pub q1: Vec<f64>,
    pub p1: Vec<f64>,
    pub lambda1: Vec<f64>,
    /// `‖φ_d(q₀, q₁)‖∞` at the solution.
    pub constraint_residual: f64,
    /// Condition number of the step's regularity matrix.
    pub condition: f64,
    pub iters: usize,
}

// unknowns [q1; λ]: p0 + D₁(𝕃_d + λ·φ_d) = 0, φ_d = 0
struct VakResidual<'a> {
    sys: &'a LinearConstraintSystem,
    q0: &'a [f64],
    p0: &'a [f64],
    h: f64,
    disc: Discretization,
}

impl Residual for VakResidual<'_> {
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let n = self.q0.len();
        let q0 = consts::<T>(self.q0);
        let (q1, lam) = x.split_at(n);
        let (d0, _) = augmented_slots(self.sys, &q0, q1, lam, self.h, self.disc)?;
        let mut out: Vec<T> = (0..n).map(|i| T::from_f64(self.p0[i]) + d0[i]).collect();
        out.extend(discrete_constraint(self.sys, &q0, q1, self.disc)?);
        Ok(out)
    }
}

/// Regularity matrix of the discrete constrained variational step at
/// `(q₀, q₁, λ)`: the Jacobian of `(D₁(𝕃_d + λ·φ_d), φ_d)` with respect to
/// `(q₁, λ)`. Its invertibility is the local invertibility of `𝔽L_d⁻`.
pub fn regularity_matrix(
    sys: &LinearConstraintSystem,
    q0: &[f64],
    q1: &[f64],
    lambda: &[f64],
    h: f64,
    disc: Discretization,
) -> Result<Mat<f64>> {
    let zeros = vec![0.0; q0.len()];
    let r = VakResidual { sys, q0, p0: &zeros, h, disc };
    let x: Vec<f64> = q1.iter().chain(lambda).copied().collect();
    jacobian(&x, |xd| r.eval(xd))
}

/// Solves the discrete constrained variational equations for one step from
/// `(q₀, p₀)`. `guess` seeds the multipliers (zero when absent).
pub fn discrete_vakonomic_step(
    sys: &LinearConstraintSystem,
    q0: &[f64],
    p0: &[f64],
    disc: Discretization,
    h: f64,
    guess: Option<&[f64]>,
    cfg: &NewtonConfig,
) -> Result<DiscreteVakStep> {
    check_step(h)?;
    check_pos(sys, q0)?;
    check_pos(sys, p0)?;
    let k = sys.split().k();
    let (_, hp) = sys.gradient(q0, p0)?;
    let mut x0 = axpy(q0, h, &hp);
    match guess {
        Some(g) if g.len() == k => x0.extend_from_slice(g),
        Some(g) => return Err(Error::Dimension { expected: k, got: g.len() }),
        None => x0.extend(std::iter::repeat(0.0).take(k)),
    }
    let r = VakResidual { sys, q0, p0, h, disc };
    let sol = solve_implicit(&r, &x0, cfg)?;
    let n = q0.len();
    let (q1, lambda1) = (sol.x[..n].to_vec(), sol.x[n..].to_vec());
    let jac = jacobian(&sol.x, |xd| r.eval(xd))?;
    let condition = jac.condition_inf();
    if !(condition <= REGULARITY_LIMIT) {
        return Err(Error::Regularity { cond: condition });
    }
    let (_, p1) = augmented_slots(sys, q0, &q1, &lambda1, h, disc)?;
    let constraint_residual = norm_inf(&discrete_constraint(sys, q0, &q1, disc)?);
    Ok(DiscreteVakStep { q1, p1, lambda1, constraint_residual, condition, iters: sol.iters })
}

/// Full `2n + k` residual of a computed step:
/// `[p₀ + D₁(𝕃_d + λ·φ_d); p₁ − D₂(𝕃_d + λ·φ_d); φ_d]`.
pub fn discrete_vakonomic_residual(
    sys: &LinearConstraintSystem,
    q0: &[f64],
    p0: &[f64],
    step: &DiscreteVakStep,
    h: f64,
    disc: Discretization,
) -> Result<Vec<f64>> {
    let (d0, d1) = augmented_slots(sys, q0, &step.q1, &step.lambda1, h, disc)?;
    let mut out: Vec<f64> = p0.iter().zip(&d0).map(|(a, b)| a + b).collect();
    out.extend(step.p1.iter().zip(&d1).map(|(a, b)| a - b));
    out.extend(discrete_constraint(sys, q0, &step.q1, disc)?);
    Ok(out)
}

struct NonholonomicResidual<'a> {
    sys: &'a LinearConstraintSystem,
    qcur: &'a [f64],
    d2_prev: &'a [f64],
    omega: &'a Mat<f64>,
    h: f64,
}

impl Residual for NonholonomicResidual<'_> {
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let n = self.qcur.len();
        let qcur = consts::<T>(self.qcur);
        let (qnext, lam) = x.split_at(n);
        let qn = lift(qnext);
        let mut out = Vec::with_capacity(n + lam.len());
        for i in 0..n {
            let d1 = discrete_lagrangian(self.sys, &seed(&qcur, i), &qn, self.h, Discretization::Euler)?.eps;
            let mut r = T::from_f64(self.d2_prev[i]) + d1;
            for (al, &l) in lam.iter().enumerate() {
                r -= l * T::from_f64(self.omega[(al, i)]);
            }
            out.push(r);
        }
        out.extend(discrete_constraint(self.sys, &qcur, qnext, Discretization::Euler)?);
        Ok(out)
    }
}

/// `D₂𝕃_d(q_{k−1}, q_k) + D₁𝕃_d(q_k, q_{k+1}) = λ_α ω^α(q_k)` with
/// `φ_d(q_k, q_{k+1}) = 0`, Euler discretization. Returns `(q_{k+1}, λ)`.
pub fn discrete_nonholonomic_step(
    sys: &LinearConstraintSystem,
    qprev: &[f64],
    qcur: &[f64],
    h: f64,
    guess: Option<&[f64]>,
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_step(h)?;
    check_pos(sys, qprev)?;
    check_pos(sys, qcur)?;
    let n = sys.n();
    let k = sys.split().k();
    let d2_prev = discrete_d2(sys, qprev, qcur, h)?;
    let omega = sys.constraint_matrix(qcur)?;
    let mut x0: Vec<f64> = (0..n).map(|i| 2.0 * qcur[i] - qprev[i]).collect();
    match guess {
        Some(g) if g.len() == k => x0.extend_from_slice(g),
        Some(g) => return Err(Error::Dimension { expected: k, got: g.len() }),
        None => x0.extend(std::iter::repeat(0.0).take(k)),
    }
    let sol = solve_implicit(&NonholonomicResidual { sys, qcur, d2_prev: &d2_prev, omega: &omega, h }, &x0, cfg)?;
    Ok((sol.x[..n].to_vec(), sol.x[n..].to_vec()))
}

/// `D₁𝕃_d(q₀, q₁)` for the Euler discretization.
pub fn discrete_d1(sys: &LinearConstraintSystem, q0: &[f64], q1: &[f64], h: f64) -> Result<Vec<f64>> {
    (0..q0.len())
        .map(|i| Ok(discrete_lagrangian(sys, &seed(q0, i), &lift(q1), h, Discretization::Euler)?.eps))
        .collect()
}

/// `D₂𝕃_d(q₀, q₁)` for the Euler discretization.
pub fn discrete_d2(sys: &LinearConstraintSystem, q0: &[f64], q1: &[f64], h: f64) -> Result<Vec<f64>> {
    (0..q0.len())
        .map(|i| Ok(discrete_lagrangian(sys, &lift(q0), &seed(q1, i), h, Discretization::Euler)?.eps))
        .collect()
}

/// Jacobians `(∂φ_d/∂q₀, ∂φ_d/∂q₁)`, each `k × n`.
pub fn discrete_constraint_jacobians(
    sys: &LinearConstraintSystem,
    q0: &[f64],
    q1: &[f64],
    disc: Discretization,
) -> Result<(Mat<f64>, Mat<f64>)> {
    let n = q0.len();
    let j0 = jacobian(q0, |x| discrete_constraint(sys, x, &lift(q1), disc))?;
    let j1 = jacobian(q1, |x| discrete_constraint(sys, &lift(q0), x, disc))?;
    debug_assert_eq!(j0.cols(), n);
    Ok((j0, j1))
}

// unknowns q1^α given q1^a: φ_d(q0, q1) = 0
struct CompleteResidual<'a> {
    sys: &'a LinearConstraintSystem,
    q0: &'a [f64],
    q1free: &'a [f64],
    disc: Discretization,
}

impl Residual for CompleteResidual<'_> {
    fn eval<T: Scalar>(&self, con: &[T]) -> Result<Vec<T>> {
        let q1 = self.sys.join(&consts::<T>(self.q1free), con);
        discrete_constraint(self.sys, &consts::<T>(self.q0), &q1, self.disc)
    }
}

/// Both discrete Legendre images of the step that starts at `q0`, reaches
/// free coordinates `q1free`, and carries `p1_α = mu1`: `((q₀, p₀), (q₁, p₁), λ)`.
pub fn discrete_legendre(
    sys: &LinearConstraintSystem,
    q0: &[f64],
    q1free: &[f64],
    mu1: &[f64],
    h: f64,
    disc: Discretization,
    cfg: &NewtonConfig,
) -> Result<(PhaseState, PhaseState, Vec<f64>)> {
    check_step(h)?;
    check_pos(sys, q0)?;
    let split = sys.split();
    let (m, k) = (split.m(), split.k());
    if q1free.len() != m {
        return Err(Error::Dimension { expected: m, got: q1free.len() });
    }
    if mu1.len() != k {
        return Err(Error::Dimension { expected: k, got: mu1.len() });
    }
    let (q0free, q0con) = split.split(q0);
    // Euler predictor: exact for the Euler discretization
    let c0 = sys.coefficients(q0)?;
    let dfree: Vec<f64> = q1free.iter().zip(&q0free).map(|(a, b)| a - b).collect();
    let guess: Vec<f64> = q0con.iter().zip(c0.matvec(&dfree)).map(|(a, b)| a + b).collect();
    let con = solve_implicit(&CompleteResidual { sys, q0, q1free, disc }, &guess, cfg)?.x;
    let q1 = split.join(q1free, &con);

    let lam0 = vec![0.0; k];
    let (d0, d1) = augmented_slots(sys, q0, &q1, &lam0, h, disc)?;
    let (_, j1) = discrete_constraint_jacobians(sys, q0, &q1, disc)?;
    let (_, d1con) = split.split(&d1);
    // p1_α = D₂𝕃_d_α + λ_β ∂φ_d^β/∂q1^α
    let mtx = Mat::from_fn(k, k, |a, b| j1[(b, split.constrained[a])]);
    let rhs: Vec<f64> = (0..k).map(|a| mu1[a] - d1con[a]).collect();
    let cond = mtx.condition_inf();
    if !(cond <= REGULARITY_LIMIT) {
        return Err(Error::Regularity { cond });
    }
    let lambda = mtx.solve(&rhs).ok_or(Error::Regularity { cond: f64::INFINITY })?;
    let (d0, d1) = if k == 0 { (d0, d1) } else { augmented_slots(sys, q0, &q1, &lambda, h, disc)? };
    let p0: Vec<f64> = d0.iter().map(|v| -v).collect();
    Ok((PhaseState { q: q0.to_vec(), p: p0 }, PhaseState { q: q1, p: d1 }, lambda))
}

/// `𝔽L_d⁻`: the momentum at the start of the step.
pub fn discrete_legendre_minus(
    sys: &LinearConstraintSystem,
    q0: &[f64],
    q1free: &[f64],
    mu1: &[f64],
    h: f64,
    disc: Discretization,
    cfg: &NewtonConfig,
) -> Result<PhaseState> {
    Ok(discrete_legendre(sys, q0, q1free, mu1, h, disc, cfg)?.0)
}

/// `𝔽L_d⁺`: the momentum at the end of the step.
pub fn discrete_legendre_plus(
    sys: &LinearConstraintSystem,
    q0: &[f64],
    q1free: &[f64],
    mu1: &[f64],
    h: f64,
    disc: Discretization,
    cfg: &NewtonConfig,
) -> Result<PhaseState> {
    Ok(discrete_legendre(sys, q0, q1free, mu1, h, disc, cfg)?.1)
}

/// Condition number of `∂p₀/∂(q1free, mu1)`, the derivative of `𝔽L_d⁻`
/// in its fiber variables, by central differences.
pub fn legendre_minus_condition(
    sys: &LinearConstraintSystem,
    q0: &[f64],
    q1free: &[f64],
    mu1: &[f64],
    h: f64,
    disc: Discretization,
    cfg: &NewtonConfig,
) -> Result<f64> {
    let m = q1free.len();
    let x: Vec<f64> = q1free.iter().chain(mu1).copied().collect();
    let n = x.len();
    let e = 1e-6;
    let mut jac = Mat::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += e;
        xm[j] -= e;
        let pp = discrete_legendre_minus(sys, q0, &xp[..m], &xp[m..], h, disc, cfg)?.p;
        let pm = discrete_legendre_minus(sys, q0, &xm[..m], &xm[m..], h, disc, cfg)?.p;
        for i in 0..n {
            jac[(i, j)] = (pp[i] - pm[i]) / (2.0 * e);
        }
    }
    Ok(jac.condition_inf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprs::{parse_expr, Expr};
    use crate::state::IndexSplit;

    struct Lin;
    impl Residual for Lin {
        fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
            Ok(vec![x[0] - T::one()])
        }
    }

    struct Quad(f64);
    impl Residual for Quad {
        fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
            Ok(vec![x[0] * x[0] + T::from_f64(self.0)])
        }
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

    fn flat2() -> LinearConstraintSystem {
        LinearConstraintSystem::new(
            IndexSplit::trailing(2, 1),
            LinearConstraintSystem::identity_metric(2),
            Expr::num(0.0),
            vec![vec![Expr::num(0.0)]],
        )
        .unwrap()
    }

    fn dist(gamma_x: &str) -> LinearConstraintSystem {
        LinearConstraintSystem::new(
            IndexSplit::trailing(3, 1),
            LinearConstraintSystem::identity_metric(3),
            Expr::num(0.0),
            vec![vec![parse_expr(gamma_x, &["x", "y", "z"]).unwrap(), Expr::num(0.0)]],
        )
        .unwrap()
    }

    fn ps(q: &[f64], p: &[f64]) -> PhaseState {
        PhaseState::new(q.to_vec(), p.to_vec()).unwrap()
    }

    #[test]
    fn newton_examples() {
        let cfg = NewtonConfig::default();
        let s = solve_implicit(&Lin, &[0.0], &cfg).unwrap();
        assert_eq!((s.x[0], s.iters), (1.0, 1));
        let s = solve_implicit(&Quad(-4.0), &[3.0], &cfg).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-12);
        let e = solve_implicit(&Quad(1.0), &[1.0], &cfg).unwrap_err();
        assert!(matches!(e, Error::Newton(NewtonError::NoConvergence { .. })), "{e:?}");
        let e = solve_implicit(&Quad(1.0), &[0.0], &cfg).unwrap_err();
        assert!(matches!(e, Error::Newton(NewtonError::SingularJacobian { .. })), "{e:?}");
    }

    #[test]
    fn newton_fd_mode() {
        let cfg = NewtonConfig::finite_difference();
        let s = solve_implicit(&Quad(-4.0), &[3.0], &cfg).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-12);
        let s = solve_implicit_fd(|x: &[f64]| Ok(vec![x[0].powi(3) - 8.0]), &[3.0], &cfg).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn newton_config_validation() {
        assert!(NewtonConfig::new(0.0, 10, JacobianMode::Exact).is_err());
        assert!(NewtonConfig::new(1e-10, 0, JacobianMode::Exact).is_err());
        assert!(NewtonConfig::new(1e-10, 5, JacobianMode::FiniteDifference(-1.0)).is_err());
    }

    #[test]
    fn symplectic_euler_examples() {
        let cfg = NewtonConfig::default();
        let s = symplectic_euler_step(&oscillator(), &ps(&[1.0], &[0.0]), 0.1, &cfg).unwrap();
        assert!((s.p[0] + 0.1).abs() < 1e-15 && (s.q[0] - 0.99).abs() < 1e-15);
        let free = LinearConstraintSystem::new(
            IndexSplit::unconstrained(2),
            LinearConstraintSystem::identity_metric(2),
            Expr::num(0.0),
            vec![],
        )
        .unwrap();
        let s = symplectic_euler_step(&free, &ps(&[1.0, 2.0], &[0.5, -1.0]), 0.1, &cfg).unwrap();
        assert_eq!(s.p, vec![0.5, -1.0]);
        assert!((s.q[0] - 1.05).abs() < 1e-15 && (s.q[1] - 1.9).abs() < 1e-15);

        let sys = dist("y^2/2");
        let (q0, p0) = (vec![0.2, 0.7, -0.1], vec![0.4, -0.9, 1.2]);
        let h = 0.05;
        let s = symplectic_euler_step(&sys, &ps(&q0, &p0), h, &cfg).unwrap();
        let (hq, hp) = sys.gradient(&q0, &s.p).unwrap();
        for i in 0..3 {
            assert!((s.p[i] - p0[i] + h * hq[i]).abs() <= 1e-12);
            assert!((s.q[i] - q0[i] - h * hp[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn midpoint_examples() {
        let cfg = NewtonConfig::default();
        let h: f64 = 0.1;
        let s = midpoint_step(&oscillator(), &ps(&[1.0], &[0.0]), h, &cfg).unwrap();
        let d = 1.0 + h * h / 4.0;
        assert!((s.q[0] - (1.0 - h * h / 4.0) / d).abs() < 1e-15);
        assert!((s.p[0] + h / d).abs() < 1e-15);
        let sys = dist("y^2/2");
        let start = ps(&[0.2, 0.7, -0.1], &[0.4, -0.9, 1.2]);
        let fwd = Scheme::Midpoint.step_signed(&sys, &start, 0.1, &cfg).unwrap();
        let back = Scheme::Midpoint.step_signed(&sys, &fwd, -0.1, &cfg).unwrap();
        assert!(crate::dense::max_abs_diff(&back.to_vec(), &start.to_vec()) < 1e-11);
    }

    #[test]
    fn verlet_examples() {
        let cfg = NewtonConfig::default();
        let s = stormer_verlet_step(&oscillator(), &ps(&[1.0], &[0.0]), 0.1, &cfg).unwrap();
        assert!((s.q[0] - 0.995).abs() < 1e-15 && (s.p[0] + 0.09975).abs() < 1e-15);
        let half = half_euler_a(&oscillator(), &ps(&[1.0], &[0.0]), 0.05, &cfg).unwrap();
        assert!((half.p[0] + 0.05).abs() < 1e-15);

        let sys = dist("y^2/2 + x*y");
        let start = ps(&[0.2, 0.7, -0.1], &[0.4, -0.9, 1.2]);
        let v = stormer_verlet_step(&sys, &start, 0.1, &cfg).unwrap();
        let c = half_euler_b(&sys, &half_euler_a(&sys, &start, 0.05, &cfg).unwrap(), 0.05, &cfg).unwrap();
        assert!(crate::dense::max_abs_diff(&v.to_vec(), &c.to_vec()) < 1e-12);
        let back = Scheme::StormerVerlet.step_signed(&sys, &v, -0.1, &cfg).unwrap();
        assert!(crate::dense::max_abs_diff(&back.to_vec(), &start.to_vec()) < 1e-11);
    }

    #[test]
    fn nonpositive_step_rejected() {
        let cfg = NewtonConfig::default();
        for h in [0.0, -0.1, f64::NAN] {
            assert!(matches!(symplectic_euler_step(&oscillator(), &ps(&[1.0], &[0.0]), h, &cfg), Err(Error::InvalidStep(_))));
        }
    }

    #[test]
    fn discrete_vakonomic_example() {
        let cfg = NewtonConfig::default();
        let s = discrete_vakonomic_step(&flat2(), &[0.0, 0.0], &[1.0, 3.0], Discretization::Euler, 0.1, None, &cfg).unwrap();
        assert!((s.q1[0] - 0.1).abs() < 1e-14 && s.q1[1].abs() < 1e-14);
        assert!((s.p1[0] - 1.0).abs() < 1e-12 && (s.p1[1] - 3.0).abs() < 1e-12);
        assert!((s.lambda1[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn discrete_vakonomic_matches_hamiltonian_schemes() {
        let cfg = NewtonConfig::default();
        let sys = dist("y^2/2");
        let h = 0.1;
        for (disc, scheme) in [(Discretization::Euler, Scheme::SymplecticEuler), (Discretization::Midpoint, Scheme::Midpoint)] {
            let mut state = ps(&[0.1, 0.5, 0.0], &[0.7, -0.3, 0.4]);
            let mut lam = None;
            for _ in 0..20 {
                let vak = discrete_vakonomic_step(&sys, &state.q, &state.p, disc, h, lam.as_deref(), &cfg).unwrap();
                let ham = scheme.step(&sys, &state, h, &cfg).unwrap();
                assert!(crate::dense::max_abs_diff(&vak.q1, &ham.q) < 1e-10, "{disc:?}");
                assert!(crate::dense::max_abs_diff(&vak.p1, &ham.p) < 1e-10, "{disc:?}");
                assert!(vak.constraint_residual <= 1e-12);
                let r = discrete_vakonomic_residual(&sys, &state.q, &state.p, &vak, h, disc).unwrap();
                assert!(norm_inf(&r) <= 1e-12);
                state = ps(&vak.q1, &vak.p1);
                lam = Some(vak.lambda1);
            }
        }
    }

    #[test]
    fn discrete_nonholonomic_examples() {
        let cfg = NewtonConfig::default();
        let (q, l) = discrete_nonholonomic_step(&flat2(), &[0.0, 0.0], &[0.1, 0.0], 0.1, None, &cfg).unwrap();
        assert!((q[0] - 0.2).abs() < 1e-14 && q[1].abs() < 1e-14 && l[0].abs() < 1e-12);
        let (q, l) = discrete_nonholonomic_step(&flat2(), &[0.0, -0.1], &[0.0, 0.0], 0.1, None, &cfg).unwrap();
        assert!(q[0].abs() < 1e-14 && q[1].abs() < 1e-14 && (l[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discrete_legendre_examples() {
        let cfg = NewtonConfig::default();
        let (h, q0) = (0.1, [0.3, -0.2]);
        let (m0, m1, lam) = discrete_legendre(&flat2(), &q0, &[0.35], &[2.0], h, Discretization::Euler, &cfg).unwrap();
        assert!((m0.p[0] - 0.5).abs() < 1e-12);
        assert!((m0.p[1] - lam[0]).abs() < 1e-12 && (lam[0] - 2.0).abs() < 1e-12);
        assert_eq!(m1.q, vec![0.35, -0.2]);

        let sys = dist("y^2/2 + x*y");
        let (m0, _, _) = discrete_legendre(&sys, &[0.1, 0.2, 0.3], &[0.1, 0.2], &[0.0], h, Discretization::Euler, &cfg).unwrap();
        let d1 = discrete_d1(&sys, &[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3], h).unwrap();
        for i in 0..3 {
            assert!((m0.p[i] + d1[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn discrete_legendre_consistent_with_step() {
        let cfg = NewtonConfig::default();
        let sys = dist("y^2/2 + x*y");
        let (q0, p0) = ([0.1, 0.5, 0.0], [0.7, -0.3, 0.4]);
        for disc in [Discretization::Euler, Discretization::Midpoint] {
            let step = discrete_vakonomic_step(&sys, &q0, &p0, disc, 0.1, None, &cfg).unwrap();
            let (q1free, _) = sys.split().split(&step.q1);
            let (_, mu1) = sys.split().split(&step.p1);
            let (m0, m1, lam) = discrete_legendre(&sys, &q0, &q1free, &mu1, 0.1, disc, &cfg).unwrap();
            assert!(crate::dense::max_abs_diff(&m0.p, &p0) < 1e-12, "{disc:?}");
            assert!(crate::dense::max_abs_diff(&m1.p, &step.p1) < 1e-12);
            assert!(crate::dense::max_abs_diff(&m1.q, &step.q1) < 1e-12);
            assert!(crate::dense::max_abs_diff(&lam, &step.lambda1) < 1e-10);
            let cond = legendre_minus_condition(&sys, &q0, &q1free, &mu1, 0.1, disc, &cfg).unwrap();
            assert!(cond.is_finite() && cond < REGULARITY_LIMIT);
        }
    }
}
