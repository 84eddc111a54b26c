//! Scalar abstraction for the differentiation engine.
//!
//! Every tape computation is generic over [`Real`], instantiated with plain
//! `f64` for first-order gradients and with [`Dual`] numbers for exact
//! Hessian-vector products (the reverse sweep then carries a directional
//! tangent alongside every adjoint).

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// Value part (ignores any tangent).
    fn primal(self) -> f64;
    fn zero() -> Self;
    fn one() -> Self;
    fn is_zero(self) -> bool;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn primal(self) -> f64 {
        self
    }

    fn zero() -> Self {
        0.0
    }

    fn one() -> Self {
        1.0
    }

    fn is_zero(self) -> bool {
        self == 0.0
    }

    fn exp(self) -> Self {
        f64::exp(self)
    }

    fn ln(self) -> Self {
        f64::ln(self)
    }

    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

/// Forward-mode dual number: value plus directional derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub t: f64,
}

impl Dual {
    pub fn new(v: f64, t: f64) -> Self {
        Self { v, t }
    }

    pub fn constant(v: f64) -> Self {
        Self { v, t: 0.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.v + rhs.v, self.t + rhs.t)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.v - rhs.v, self.t - rhs.t)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(self.v * rhs.v, self.t * rhs.v + self.v * rhs.t)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        Dual::new(self.v / rhs.v, (self.t * rhs.v - self.v * rhs.t) / (rhs.v * rhs.v))
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.v, -self.t)
    }
}

impl Real for Dual {
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }

    fn primal(self) -> f64 {
        self.v
    }

    fn zero() -> Self {
        Dual::constant(0.0)
    }

    fn one() -> Self {
        Dual::constant(1.0)
    }

    fn is_zero(self) -> bool {
        self.v == 0.0 && self.t == 0.0
    }

    fn exp(self) -> Self {
        let e = self.v.exp();
        Dual::new(e, self.t * e)
    }

    fn ln(self) -> Self {
        Dual::new(self.v.ln(), self.t / self.v)
    }

    fn tanh(self) -> Self {
        let th = self.v.tanh();
        Dual::new(th, self.t * (1.0 - th * th))
    }
}
