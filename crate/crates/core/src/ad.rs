//! Scalar abstraction shared by the closed-form and definition-based code paths.
//!
//! `HyperDual` carries a value, two first-order directional derivatives and the
//! mixed second derivative, which is all the divergence identity needs in the
//! reduced (u, v) chart.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(x: f64) -> Self;
    fn re(self) -> f64;
    fn ln(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn powf(self, e: f64) -> Self;
    fn powi(self, e: i32) -> Self;
    fn cos(self) -> Self;
    fn sin(self) -> Self;

    fn recip(self) -> Self {
        Self::cst(1.0) / self
    }
}

impl Real for f64 {
    fn cst(x: f64) -> Self {
        x
    }
    fn re(self) -> f64 {
        self
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powf(self, e: f64) -> Self {
        f64::powf(self, e)
    }
    fn powi(self, e: i32) -> Self {
        f64::powi(self, e)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
}

/// Hyper-dual number `re + d1 ε₁ + d2 ε₂ + d12 ε₁ε₂` with ε₁² = ε₂² = 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperDual {
    pub re: f64,
    pub d1: f64,
    pub d2: f64,
    pub d12: f64,
}

impl HyperDual {
    pub const fn new(re: f64, d1: f64, d2: f64, d12: f64) -> Self {
        Self { re, d1, d2, d12 }
    }

    /// Variable seeded along the first direction.
    pub const fn var1(x: f64) -> Self {
        Self::new(x, 1.0, 0.0, 0.0)
    }

    /// Variable seeded along the second direction.
    pub const fn var2(x: f64) -> Self {
        Self::new(x, 0.0, 1.0, 0.0)
    }

    /// Variable seeded along both directions, so `d12` is the pure second derivative.
    pub const fn var_both(x: f64) -> Self {
        Self::new(x, 1.0, 1.0, 0.0)
    }

    /// Applies a scalar function given its value and first two derivatives at `re`.
    pub fn chain(self, f: f64, df: f64, ddf: f64) -> Self {
        Self {
            re: f,
            d1: df * self.d1,
            d2: df * self.d2,
            d12: df * self.d12 + ddf * self.d1 * self.d2,
        }
    }
}

impl Add for HyperDual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.d1 + o.d1, self.d2 + o.d2, self.d12 + o.d12)
    }
}

impl Sub for HyperDual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.d1 - o.d1, self.d2 - o.d2, self.d12 - o.d12)
    }
}

impl Mul for HyperDual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.re * o.re,
            self.d1 * o.re + self.re * o.d1,
            self.d2 * o.re + self.re * o.d2,
            self.d12 * o.re + self.d1 * o.d2 + self.d2 * o.d1 + self.re * o.d12,
        )
    }
}

impl Div for HyperDual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.re;
        self * o.chain(inv, -inv * inv, 2.0 * inv * inv * inv)
    }
}

impl Neg for HyperDual {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.d1, -self.d2, -self.d12)
    }
}

impl Add<f64> for HyperDual {
    type Output = Self;
    fn add(self, o: f64) -> Self {
        Self { re: self.re + o, ..self }
    }
}

impl Sub<f64> for HyperDual {
    type Output = Self;
    fn sub(self, o: f64) -> Self {
        Self { re: self.re - o, ..self }
    }
}

impl Mul<f64> for HyperDual {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        Self::new(self.re * o, self.d1 * o, self.d2 * o, self.d12 * o)
    }
}

impl Div<f64> for HyperDual {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        self * (1.0 / o)
    }
}

impl Real for HyperDual {
    fn cst(x: f64) -> Self {
        Self::new(x, 0.0, 0.0, 0.0)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn ln(self) -> Self {
        let inv = 1.0 / self.re;
        self.chain(self.re.ln(), inv, -inv * inv)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e, e)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.re))
    }
    fn powf(self, e: f64) -> Self {
        let x = self.re;
        self.chain(x.powf(e), e * x.powf(e - 1.0), e * (e - 1.0) * x.powf(e - 2.0))
    }
    fn powi(self, e: i32) -> Self {
        let x = self.re;
        let ef = e as f64;
        self.chain(x.powi(e), ef * x.powi(e - 1), ef * (ef - 1.0) * x.powi(e - 2))
    }
    fn cos(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(c, -s, -c)
    }
    fn sin(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(s, c, -s)
    }
}

/// C^∞ transition from 0 (ξ ≤ 0) to 1 (ξ ≥ 1).
pub fn smooth_step<T: Real>(xi: T) -> T {
    let x = xi.re();
    if x <= 0.0 {
        return T::cst(0.0);
    }
    if x >= 1.0 {
        return T::cst(1.0);
    }
    let a = (-(xi.recip())).exp();
    let b = (-((T::cst(1.0) - xi).recip())).exp();
    a / (a + b)
}

/// Cubic smoothstep ξ²(3 − 2ξ) clamped to [0, 1].
pub fn cubic_step<T: Real>(xi: T) -> T {
    let x = xi.re();
    if x <= 0.0 {
        return T::cst(0.0);
    }
    if x >= 1.0 {
        return T::cst(1.0);
    }
    xi * xi * (T::cst(3.0) - xi * 2.0)
}
