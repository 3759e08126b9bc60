use crate::error::Result;
use crate::scalar::Scalar;

/// A Hamiltonian on `T*R^n` with an exact gradient.
///
/// Both methods are generic so integrators can differentiate through them
/// with dual numbers when assembling Newton Jacobians.
pub trait HamiltonianSystem {
    fn dim(&self) -> usize;

    fn hamiltonian<T: Scalar>(&self, q: &[T], p: &[T]) -> Result<T>;

    /// `(∂H/∂q, ∂H/∂p)`
    fn gradient<T: Scalar>(&self, q: &[T], p: &[T]) -> Result<(Vec<T>, Vec<T>)>;

    /// Velocity-constraint values `φ(q, v)`; empty when unconstrained.
    fn velocity_constraint(&self, _q: &[f64], _v: &[f64]) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }
}

impl<S: HamiltonianSystem + ?Sized> HamiltonianSystem for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn hamiltonian<T: Scalar>(&self, q: &[T], p: &[T]) -> Result<T> {
        (**self).hamiltonian(q, p)
    }
    fn gradient<T: Scalar>(&self, q: &[T], p: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        (**self).gradient(q, p)
    }
    fn velocity_constraint(&self, q: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        (**self).velocity_constraint(q, v)
    }
}

/// Canonical field `(q̇, ṗ) = (∂H/∂p, −∂H/∂q)`.
pub fn canonical_field<S: HamiltonianSystem, T: Scalar>(sys: &S, q: &[T], p: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let (hq, hp) = sys.gradient(q, p)?;
    Ok((hp, hq.into_iter().map(|x| -x).collect()))
}
