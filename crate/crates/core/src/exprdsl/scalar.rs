//! Numeric carriers for expression evaluation: plain `f64` and a forward-mode
//! dual number with a fixed number of tangent directions.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar type the evaluator and integrators are generic over.
///
/// Domain checks (log of non-positive values and so on) are the caller's job;
/// implementations only propagate values and tangents.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn re(&self) -> f64;
    fn scale(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn pow(self, exponent: Self) -> Self;

    fn zero() -> Self {
        Self::constant(0.0)
    }

    /// True when the value and every tangent are finite.
    fn is_finite(&self) -> bool;
}

impl Scalar for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }
    #[inline]
    fn re(&self) -> f64 {
        *self
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        self * c
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn pow(self, exponent: Self) -> Self {
        self.powf(exponent)
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

/// Dual number `re + Σ eps[i]·εᵢ` with `εᵢ εⱼ = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const W: usize> {
    pub re: f64,
    pub eps: [f64; W],
}

impl<const W: usize> Dual<W> {
    pub fn new(re: f64, eps: [f64; W]) -> Self {
        Dual { re, eps }
    }

    /// Independent variable seeded in direction `dir`.
    pub fn variable(re: f64, dir: usize) -> Self {
        let mut eps = [0.0; W];
        eps[dir] = 1.0;
        Dual { re, eps }
    }

    /// Chain rule for a unary function with value `v` and derivative `d`.
    #[inline]
    fn chain(self, v: f64, d: f64) -> Self {
        let mut eps = [0.0; W];
        for (o, e) in eps.iter_mut().zip(self.eps) {
            // 0·inf must stay 0 for directions that do not touch this value
            *o = if e == 0.0 { 0.0 } else { d * e };
        }
        Dual { re: v, eps }
    }
}

impl<const W: usize> Add for Dual<W> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.re += rhs.re;
        for (a, b) in self.eps.iter_mut().zip(rhs.eps) {
            *a += b;
        }
        self
    }
}

impl<const W: usize> Sub for Dual<W> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.re -= rhs.re;
        for (a, b) in self.eps.iter_mut().zip(rhs.eps) {
            *a -= b;
        }
        self
    }
}

impl<const W: usize> Mul for Dual<W> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [0.0; W];
        for i in 0..W {
            eps[i] = self.eps[i] * rhs.re + self.re * rhs.eps[i];
        }
        Dual { re: self.re * rhs.re, eps }
    }
}

impl<const W: usize> Div for Dual<W> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let re = self.re / rhs.re;
        let mut eps = [0.0; W];
        for i in 0..W {
            eps[i] = (self.eps[i] - re * rhs.eps[i]) / rhs.re;
        }
        Dual { re, eps }
    }
}

impl<const W: usize> Neg for Dual<W> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.re = -self.re;
        for e in &mut self.eps {
            *e = -*e;
        }
        self
    }
}

impl<const W: usize> Scalar for Dual<W> {
    #[inline]
    fn constant(v: f64) -> Self {
        Dual { re: v, eps: [0.0; W] }
    }
    #[inline]
    fn re(&self) -> f64 {
        self.re
    }
    #[inline]
    fn scale(mut self, c: f64) -> Self {
        self.re *= c;
        for e in &mut self.eps {
            *e *= c;
        }
        self
    }
    fn exp(self) -> Self {
        let v = self.re.exp();
        self.chain(v, v)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), 1.0 / self.re)
    }
    fn sqrt(self) -> Self {
        let v = self.re.sqrt();
        self.chain(v, 0.5 / v)
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn tanh(self) -> Self {
        let v = self.re.tanh();
        self.chain(v, 1.0 - v * v)
    }
    fn pow(self, exponent: Self) -> Self {
        let (a, b) = (self.re, exponent.re);
        let v = a.powf(b);
        let da = if b == 0.0 { 0.0 } else { b * a.powf(b - 1.0) };
        let db = if a > 0.0 { v * a.ln() } else { 0.0 };
        let mut eps = [0.0; W];
        for i in 0..W {
            let ea = self.eps[i];
            let eb = exponent.eps[i];
            let ta = if ea == 0.0 { 0.0 } else { da * ea };
            let tb = if eb == 0.0 { 0.0 } else { db * eb };
            eps[i] = ta + tb;
        }
        Dual { re: v, eps }
    }
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.eps.iter().all(|e| e.is_finite())
    }
}
