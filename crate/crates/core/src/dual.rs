//! Forward-mode dual numbers.
//!
//! Geometry code (feature maps, dihedral measurement, bond rotations) is
//! written once against [`Real`] and evaluated with `f64` for values, with
//! `Dual<f64>` for Jacobian columns and with `Dual<Dual<f64>>` when a
//! directional derivative of a Jacobian is needed.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn atan2(self, x: Self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn scale(self, k: f64) -> Self {
        self * Self::cst(k)
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        self * k
    }
}

/// `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Real> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    pub fn constant(re: T) -> Self {
        Dual { re, eps: T::zero() }
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Real> AddAssign for Dual<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.re += o.re;
        self.eps += o.eps;
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Dual::new(q, (self.eps - q * o.eps) / o.re)
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<T: Real> Real for Dual<T> {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual::constant(T::cst(v))
    }
    #[inline]
    fn value(self) -> f64 {
        self.re.value()
    }
    #[inline]
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        Dual::new(r, self.eps / (r + r))
    }
    #[inline]
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.eps * self.re.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -(self.eps * self.re.sin()))
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        let den = x.re * x.re + self.re * self.re;
        Dual::new(
            self.re.atan2(x.re),
            (x.re * self.eps - self.re * x.eps) / den,
        )
    }
}

/// Seeds a vector of duals at `x` with tangent `v`.
pub fn seed<T: Real>(x: &[T], v: &[T]) -> Vec<Dual<T>> {
    x.iter().zip(v).map(|(&a, &b)| Dual::new(a, b)).collect()
}

/// Seeds the `j`-th unit tangent.
pub fn seed_unit(x: &[f64], j: usize) -> Vec<Dual<f64>> {
    x.iter()
        .enumerate()
        .map(|(i, &a)| Dual::new(a, if i == j { 1.0 } else { 0.0 }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<T: Real>(x: T, y: T) -> T {
        (x * y).sin() + y.atan2(x) * (x * x + y * y).sqrt() / (T::cst(2.0) + x.cos())
    }

    #[test]
    fn first_derivative_matches_central_difference() {
        let (x, y) = (0.7, -1.3);
        let dx = f(Dual::new(x, 1.0), Dual::constant(y)).eps;
        let dy = f(Dual::constant(x), Dual::new(y, 1.0)).eps;
        let h = 1e-6;
        let fd_x = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
        let fd_y = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
        assert!((dx - fd_x).abs() < 1e-8, "{dx} vs {fd_x}");
        assert!((dy - fd_y).abs() < 1e-8, "{dy} vs {fd_y}");
    }

    #[test]
    fn nested_dual_gives_mixed_second_derivative() {
        let (x, y) = (0.4, 0.9);
        // d²f/dxdy from Dual<Dual<f64>>
        let xd = Dual::new(Dual::new(x, 1.0), Dual::new(0.0, 0.0));
        let yd = Dual::new(Dual::new(y, 0.0), Dual::new(1.0, 0.0));
        let mixed = f(xd, yd).eps.eps;
        let h = 1e-4;
        let fd = (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h))
            / (4.0 * h * h);
        assert!((mixed - fd).abs() < 1e-6, "{mixed} vs {fd}");
    }
}
