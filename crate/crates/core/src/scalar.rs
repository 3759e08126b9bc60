//! Scalar abstraction shared by every evaluator in the crate.
//!
//! All model code (expressions, metrics, Hamiltonians, discrete Lagrangians)
//! is written once against [`Scalar`]. Plain `f64`/`f32` give values, and
//! [`Dual`] gives exact forward-mode derivatives. Duals nest, so
//! `Dual<Dual<f64>>` yields second derivatives, which is how Newton
//! Jacobians of residuals that already contain first derivatives are formed.

use std::fmt::{self, Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_traits::{One, Zero};

/// Field-like number type used by the generic evaluators.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn from_f64(x: f64) -> Self;

    /// Real part, with all infinitesimal components dropped.
    fn re(&self) -> f64;

    fn powi(self, n: u32) -> Self {
        let mut acc = Self::one();
        let mut base = self;
        let mut k = n;
        while k > 0 {
            if k & 1 == 1 {
                acc *= base;
            }
            base *= base;
            k >>= 1;
        }
        acc
    }

    fn is_finite(&self) -> bool;
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn re(&self) -> f64 {
        *self
    }
    #[inline]
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn re(&self) -> f64 {
        *self as f64
    }
    #[inline]
    fn is_finite(&self) -> bool {
        f32::is_finite(*self)
    }
}

/// First-order dual number `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, PartialEq, Default)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Dual<T> {
    #[inline]
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    #[inline]
    pub fn constant(re: T) -> Self {
        Dual { re, eps: T::zero() }
    }

    /// Independent variable: derivative seed 1.
    #[inline]
    pub fn variable(re: T) -> Self {
        Dual { re, eps: T::one() }
    }
}

impl<T: Debug> Debug for Dual<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dual({:?} + {:?}ε)", self.re, self.eps)
    }
}

impl<T: Display> Display for Dual<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {}ε", self.re, self.eps)
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let re = self.re / o.re;
        Dual::new(re, (self.eps - re * o.eps) / o.re)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<T: Scalar> AddAssign for Dual<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Scalar> SubAssign for Dual<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Scalar> MulAssign for Dual<T> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<T: Scalar> Zero for Dual<T> {
    fn zero() -> Self {
        Dual::new(T::zero(), T::zero())
    }
    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.eps.is_zero()
    }
}

impl<T: Scalar> One for Dual<T> {
    fn one() -> Self {
        Dual::constant(T::one())
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    #[inline]
    fn from_f64(x: f64) -> Self {
        Dual::constant(T::from_f64(x))
    }
    #[inline]
    fn re(&self) -> f64 {
        self.re.re()
    }
    fn powi(self, n: u32) -> Self {
        if n == 0 {
            return Self::one();
        }
        let lower = self.re.powi(n - 1);
        Dual::new(lower * self.re, T::from_f64(n as f64) * lower * self.eps)
    }
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }
}

/// Lift a slice of scalars to constant duals.
pub fn lift<T: Scalar>(x: &[T]) -> Vec<Dual<T>> {
    x.iter().map(|&v| Dual::constant(v)).collect()
}

/// Lift a slice, seeding coordinate `i` as the independent variable.
pub fn seed<T: Scalar>(x: &[T], i: usize) -> Vec<Dual<T>> {
    x.iter()
        .enumerate()
        .map(|(j, &v)| if j == i { Dual::variable(v) } else { Dual::constant(v) })
        .collect()
}

/// Gradient of a scalar function by one forward pass per coordinate.
pub fn gradient<T, F, E>(x: &[T], mut f: F) -> Result<Vec<T>, E>
where
    T: Scalar,
    F: FnMut(&[Dual<T>]) -> Result<Dual<T>, E>,
{
    (0..x.len()).map(|i| f(&seed(x, i)).map(|d| d.eps)).collect()
}

/// Jacobian (row-major, `m × x.len()`) of a vector function.
pub fn jacobian<T, F, E>(x: &[T], mut f: F) -> Result<crate::dense::Mat<T>, E>
where
    T: Scalar,
    F: FnMut(&[Dual<T>]) -> Result<Vec<Dual<T>>, E>,
{
    let n = x.len();
    let mut cols: Vec<Vec<T>> = Vec::with_capacity(n);
    for i in 0..n {
        cols.push(f(&seed(x, i))?.into_iter().map(|d| d.eps).collect());
    }
    let m = cols.first().map_or(0, |c| c.len());
    let mut jac = crate::dense::Mat::zeros(m, n);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            jac[(i, j)] = v;
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_quotient_rules() {
        let x = Dual::variable(3.0f64);
        let y = Dual::constant(5.0);
        assert_eq!((x * y).eps, 5.0);
        let q = Dual::constant(1.0) / x;
        assert!((q.eps + 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn nested_gives_second_derivative() {
        // f(x) = x^3, f'' = 6x
        let x = Dual::new(Dual::variable(2.0), Dual::constant(1.0));
        let f = x * x * x;
        assert_eq!(f.re.re, 8.0);
        assert_eq!(f.eps.re, 12.0);
        assert_eq!(f.eps.eps, 12.0);
        let g = x.powi(3);
        assert_eq!(g, f);
    }

    #[test]
    fn powi_matches_repeated_product() {
        let x = Dual::variable(1.5f64);
        for n in 0..6u32 {
            let mut acc = Dual::constant(1.0);
            for _ in 0..n {
                acc *= x;
            }
            let p = x.powi(n);
            assert!((p.re - acc.re).abs() < 1e-14 && (p.eps - acc.eps).abs() < 1e-13);
        }
    }

    #[test]
    fn f32_is_a_scalar() {
        let g = gradient(&[2.0f32, 3.0], |v| Ok::<_, ()>(v[0] * v[1])).unwrap();
        assert_eq!(g, vec![3.0, 2.0]);
    }
}
