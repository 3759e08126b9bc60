//! Built-in benchmark systems.

use crate::error::{Error, Result};
use crate::exprs::{parse_expr, Expr};
use crate::hamiltonian::HamiltonianSystem;
use crate::linsys::LinearConstraintSystem;
use crate::martinet::MartinetSystem;
use crate::scalar::Scalar;
use crate::state::IndexSplit;

pub const CATALOG_NAMES: [&str; 6] = ["free", "oscillator", "heisenberg", "martinet_distribution", "martinet", "holonomic_demo"];

const XYZ: [&str; 3] = ["x", "y", "z"];

fn distribution(gamma_x: &str) -> LinearConstraintSystem {
    LinearConstraintSystem::new(
        IndexSplit::trailing(3, 1),
        LinearConstraintSystem::identity_metric(3),
        Expr::num(0.0),
        vec![vec![parse_expr(gamma_x, &XYZ).expect("catalog expression"), Expr::num(0.0)]],
    )
    .expect("catalog system")
}

/// Free particle in the plane.
pub fn free() -> LinearConstraintSystem {
    LinearConstraintSystem::new(IndexSplit::unconstrained(2), LinearConstraintSystem::identity_metric(2), Expr::num(0.0), vec![])
        .expect("catalog system")
}

/// `H = ½(p² + q²)`.
pub fn oscillator() -> LinearConstraintSystem {
    LinearConstraintSystem::new(
        IndexSplit::unconstrained(1),
        LinearConstraintSystem::identity_metric(1),
        parse_expr("q1^2/2", &["q1"]).expect("catalog expression"),
        vec![],
    )
    .expect("catalog system")
}

/// `ż = y ẋ` with the Euclidean metric.
pub fn heisenberg() -> LinearConstraintSystem {
    distribution("y")
}

/// `ż = (y²/2) ẋ` with the Euclidean metric.
pub fn martinet_distribution() -> LinearConstraintSystem {
    distribution("y^2/2")
}

/// `ż = x ẋ`, integrable (`z − x²/2` is conserved).
pub fn holonomic_demo() -> LinearConstraintSystem {
    distribution("x")
}

pub fn martinet(beta: f64) -> Result<MartinetSystem> {
    MartinetSystem::new(beta)
}

/// A catalog entry usable wherever a [`HamiltonianSystem`] is expected.
#[derive(Clone, Debug, PartialEq)]
pub enum CatalogSystem {
    Linear(LinearConstraintSystem),
    Martinet(MartinetSystem),
}

impl CatalogSystem {
    /// Looks up a catalog name; `martinet` uses the default `β`.
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "free" => CatalogSystem::Linear(free()),
            "oscillator" => CatalogSystem::Linear(oscillator()),
            "heisenberg" => CatalogSystem::Linear(heisenberg()),
            "martinet_distribution" => CatalogSystem::Linear(martinet_distribution()),
            "holonomic_demo" => CatalogSystem::Linear(holonomic_demo()),
            "martinet" => CatalogSystem::Martinet(MartinetSystem::default()),
            other => {
                return Err(Error::InvalidSystem(format!(
                    "unknown catalog system `{other}` (known: {})",
                    CATALOG_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn as_linear(&self) -> Option<&LinearConstraintSystem> {
        match self {
            CatalogSystem::Linear(s) => Some(s),
            CatalogSystem::Martinet(_) => None,
        }
    }

    pub fn as_martinet(&self) -> Option<&MartinetSystem> {
        match self {
            CatalogSystem::Martinet(m) => Some(m),
            CatalogSystem::Linear(_) => None,
        }
    }
}

impl HamiltonianSystem for CatalogSystem {
    fn dim(&self) -> usize {
        match self {
            CatalogSystem::Linear(s) => s.dim(),
            CatalogSystem::Martinet(m) => m.dim(),
        }
    }

    fn hamiltonian<T: Scalar>(&self, q: &[T], p: &[T]) -> Result<T> {
        match self {
            CatalogSystem::Linear(s) => s.hamiltonian(q, p),
            CatalogSystem::Martinet(m) => m.hamiltonian(q, p),
        }
    }

    fn gradient<T: Scalar>(&self, q: &[T], p: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        match self {
            CatalogSystem::Linear(s) => s.gradient(q, p),
            CatalogSystem::Martinet(m) => m.gradient(q, p),
        }
    }

    fn velocity_constraint(&self, q: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        match self {
            CatalogSystem::Linear(s) => s.velocity_constraint(q, v),
            CatalogSystem::Martinet(m) => m.velocity_constraint(q, v),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_resolves() {
        for name in CATALOG_NAMES {
            let s = CatalogSystem::by_name(name).unwrap();
            let n = s.dim();
            assert!(s.hamiltonian(&vec![0.1; n], &vec![0.2; n]).unwrap().is_finite());
        }
        assert!(CatalogSystem::by_name("pendulum").is_err());
    }

    #[test]
    fn shapes() {
        assert_eq!(free().n(), 2);
        assert_eq!(oscillator().n(), 1);
        assert_eq!(heisenberg().split().k(), 1);
        assert_eq!(CatalogSystem::by_name("martinet").unwrap().as_martinet().unwrap().beta, 0.5);
    }
}
