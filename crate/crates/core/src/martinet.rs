//! The Martinet sub-Riemannian system on `R³`:
//! `H = ½((p_x + p_z y²/2)² + p_y²/(1+βx)²)`, with distribution
//! `ż = (y²/2) ẋ` and metric `dx² + (1+βx)² dy²`.

use crate::discrete::{half_euler_a, half_euler_b, NewtonConfig};
use crate::dense::dot;
use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSystem;
use crate::scalar::Scalar;
use crate::state::{PhaseState, TangentState};

/// `|1 + βx|` below this is treated as the pole.
pub const POLE_TOL: f64 = 1e-12;

/// Largest `|(z₁−z₀) − (y₀²/2)(x₁−x₀)|` accepted by
/// [`MartinetSystem::discrete_lagrangian`].
pub const DISCRETE_CONSTRAINT_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MartinetSystem {
    pub beta: f64,
}

impl Default for MartinetSystem {
    fn default() -> Self {
        MartinetSystem { beta: 0.5 }
    }
}

fn check3<T>(v: &[T]) -> Result<()> {
    if v.len() == 3 {
        Ok(())
    } else {
        Err(Error::Dimension { expected: 3, got: v.len() })
    }
}

impl MartinetSystem {
    pub fn new(beta: f64) -> Result<Self> {
        if !beta.is_finite() {
            return Err(Error::InvalidSystem(format!("beta must be finite, got {beta}")));
        }
        Ok(MartinetSystem { beta })
    }

    /// `1 + βx`, failing at the pole.
    fn scale<T: Scalar>(&self, x: T) -> Result<T> {
        let s = T::one() + T::from_f64(self.beta) * x;
        if s.re().abs() < POLE_TOL {
            return Err(Error::Pole { x: x.re() });
        }
        Ok(s)
    }

    /// `P = p_x + p_z y²/2`.
    fn big_p<T: Scalar>(q: &[T], p: &[T]) -> T {
        p[0] + p[2] * q[1] * q[1] * T::from_f64(0.5)
    }

    /// `(q̇, ṗ)` from the closed-form Hamiltonian equations.
    pub fn rhs<T: Scalar>(&self, q: &[T], p: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        check3(q)?;
        check3(p)?;
        let s = self.scale(q[0])?;
        let bp = Self::big_p(q, p);
        let half = T::from_f64(0.5);
        let y2 = q[1] * q[1];
        let qdot = vec![bp, p[1] / (s * s), bp * y2 * half];
        let pdot = vec![T::from_f64(self.beta) * p[1] * p[1] / (s * s * s), -bp * p[2] * q[1], T::zero()];
        Ok((qdot, pdot))
    }

    /// Fiber derivative `𝔽H(q, p) = (q, ∂H/∂p)`.
    pub fn fiber_derivative(&self, state: &PhaseState) -> Result<TangentState> {
        let (v, _) = self.rhs(&state.q, &state.p)?;
        Ok(TangentState { q: state.q.clone(), v })
    }

    /// `Δ*H − H = p·∂H/∂p − H`.
    pub fn recovered_lagrangian<T: Scalar>(&self, q: &[T], p: &[T]) -> Result<T> {
        let (v, _) = self.rhs(q, p)?;
        Ok(dot(p, &v) - self.hamiltonian(q, p)?)
    }

    /// `L(q, v) = ½(ẋ² + (1+βx)² ẏ²)`, defined on the distribution.
    pub fn lagrangian<T: Scalar>(&self, q: &[T], v: &[T]) -> Result<T> {
        check3(q)?;
        check3(v)?;
        let s = self.scale(q[0])?;
        Ok(T::from_f64(0.5) * (v[0] * v[0] + s * s * v[1] * v[1]))
    }

    /// `(z₁ − z₀) − (y₀²/2)(x₁ − x₀)`.
    pub fn discrete_constraint(&self, q0: &[f64], q1: &[f64]) -> f64 {
        (q1[2] - q0[2]) - 0.5 * q0[1] * q0[1] * (q1[0] - q0[0])
    }

    /// Discrete Lagrangian obtained from the generating function
    /// `S(q₀, p₁) = h(p₁·H_p − H)` by solving `q₁ = q₀ + h H_p(q₀, p₁)` for
    /// `p₁`. Returns `(L_d, constraint residual)`.
    pub fn discrete_lagrangian(&self, q0: &[f64], q1: &[f64], h: f64) -> Result<(f64, f64)> {
        if !(h > 0.0) {
            return Err(Error::InvalidStep(h));
        }
        check3(q0)?;
        check3(q1)?;
        let residual = self.discrete_constraint(q0, q1);
        if !(residual.abs() <= DISCRETE_CONSTRAINT_TOL) {
            return Err(Error::ConstraintViolation { residual: residual.abs(), limit: DISCRETE_CONSTRAINT_TOL });
        }
        let s = self.scale(q0[0])?;
        // p_z is free along the fiber; any choice gives the same S
        let pz = 0.0;
        let big_p = (q1[0] - q0[0]) / h;
        let p1 = [big_p - pz * q0[1] * q0[1] / 2.0, s * s * (q1[1] - q0[1]) / h, pz];
        Ok((h * self.recovered_lagrangian(q0, &p1)?, residual))
    }
}

impl HamiltonianSystem for MartinetSystem {
    fn dim(&self) -> usize {
        3
    }

    fn hamiltonian<T: Scalar>(&self, q: &[T], p: &[T]) -> Result<T> {
        check3(q)?;
        check3(p)?;
        let s = self.scale(q[0])?;
        let bp = Self::big_p(q, p);
        Ok(T::from_f64(0.5) * (bp * bp + p[1] * p[1] / (s * s)))
    }

    fn gradient<T: Scalar>(&self, q: &[T], p: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let (qdot, pdot) = self.rhs(q, p)?;
        Ok((pdot.into_iter().map(|v| -v).collect(), qdot))
    }

    fn velocity_constraint(&self, q: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check3(q)?;
        check3(v)?;
        Ok(vec![v[2] - 0.5 * q[1] * q[1] * v[0]])
    }
}

pub fn martinet_hamiltonian(sys: &MartinetSystem, state: &PhaseState) -> Result<f64> {
    sys.hamiltonian(&state.q, &state.p)
}

pub fn martinet_rhs(sys: &MartinetSystem, state: &PhaseState) -> Result<(Vec<f64>, Vec<f64>)> {
    sys.rhs(&state.q, &state.p)
}

pub fn fiber_derivative(sys: &MartinetSystem, state: &PhaseState) -> Result<TangentState> {
    sys.fiber_derivative(state)
}

pub fn recovered_lagrangian(sys: &MartinetSystem, state: &PhaseState) -> Result<f64> {
    sys.recovered_lagrangian(&state.q, &state.p)
}

pub fn martinet_discrete_lagrangian(sys: &MartinetSystem, q0: &[f64], q1: &[f64], h: f64) -> Result<(f64, f64)> {
    sys.discrete_lagrangian(q0, q1, h)
}

/// The two half steps of Störmer–Verlet on Martinet and their discrete
/// Lagrangians.
#[derive(Clone, Debug, PartialEq)]
pub struct VerletSubsteps {
    pub half: PhaseState,
    pub full: PhaseState,
    /// `L_d⁺(q_k, q_{k+1/2}) = p·q_{k+1/2} − p·q_k − (h/2) H(q_k, p)`
    pub ld_plus: f64,
    /// `L_d⁻(q_{k+1/2}, q_{k+1}) = −p·q_{k+1/2} + p·q_{k+1} − (h/2) H(q_{k+1}, p)`
    pub ld_minus: f64,
    /// Residuals of `z_{k+1/2} − z_k = (y_k²/2)(x_{k+1/2} − x_k)` and
    /// `z_{k+1} − z_{k+1/2} = (y_{k+1}²/2)(x_{k+1} − x_{k+1/2})`.
    pub constraint_residuals: [f64; 2],
}

pub fn martinet_verlet_substeps(sys: &MartinetSystem, state: &PhaseState, h: f64, cfg: &NewtonConfig) -> Result<VerletSubsteps> {
    let half = half_euler_a(sys, state, h / 2.0, cfg)?;
    let full = half_euler_b(sys, &half, h / 2.0, cfg)?;
    let p = &half.p;
    let (qk, qh, q1) = (&state.q, &half.q, &full.q);
    let ld_plus = dot(p, qh) - dot(p, qk) - h / 2.0 * sys.hamiltonian(qk, p)?;
    let ld_minus = -dot(p, qh) + dot(p, q1) - h / 2.0 * sys.hamiltonian(q1, p)?;
    let r0 = (qh[2] - qk[2]) - 0.5 * qk[1] * qk[1] * (qh[0] - qk[0]);
    let r1 = (q1[2] - qh[2]) - 0.5 * q1[1] * q1[1] * (q1[0] - qh[0]);
    Ok(VerletSubsteps { half, full, ld_plus, ld_minus, constraint_residuals: [r0, r1] })
}
