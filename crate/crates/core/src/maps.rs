// SPDX-License-Identifier: Apache-2.0

//! Maps shared by the oracles, the transfer operators and the generators.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Elementary scalar transforms available to additive map families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    Identity,
    Square,
    Exp,
    Log,
}

impl Transform {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Square => v * v,
            Transform::Exp => v.exp(),
            Transform::Log => v.ln(),
        }
    }

    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Square => 2.0 * v,
            Transform::Exp => v.exp(),
            Transform::Log => 1.0 / v,
        }
    }

    /// Checks that the transform is finite and strictly monotone on `[lo, hi]`.
    pub fn check_monotone_on(self, lo: f64, hi: f64) -> Result<()> {
        match self {
            Transform::Log if lo <= 0.0 => Err(Error::Domain(format!(
                "log transform needs positive inputs, support starts at {lo}"
            ))),
            Transform::Square if lo < 0.0 && hi > 0.0 => Err(Error::Precondition(format!(
                "square transform is not monotone on [{lo}, {hi}]"
            ))),
            _ => Ok(()),
        }
    }

    /// Inverse on the monotone branch containing `[lo, hi]`.
    pub fn inverse_on(self, v: f64, lo: f64, hi: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Square => {
                let r = v.max(0.0).sqrt();
                if hi <= 0.0 && lo < 0.0 {
                    -r
                } else {
                    r
                }
            }
            Transform::Exp => v.ln(),
            Transform::Log => v.exp(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Square => "square",
            Transform::Exp => "exp",
            Transform::Log => "log",
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "id" => Ok(Transform::Identity),
            "square" | "sq" => Ok(Transform::Square),
            "exp" => Ok(Transform::Exp),
            "log" | "ln" => Ok(Transform::Log),
            other => Err(Error::Argument(format!("unknown transform `{other}`"))),
        }
    }
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite())
            || x1 <= x0
            || y1 <= y0
        {
            return Err(Error::Argument(format!(
                "invalid rectangle [{x0}, {x1}] x [{y0}, {y1}]"
            )));
        }
        Ok(Self { x0, x1, y0, y1 })
    }

    pub fn unit() -> Self {
        Self { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 }
    }

    pub fn square(lo: f64, hi: f64) -> Result<Self> {
        Self::new(lo, hi, lo, hi)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// A differentiable map `R -> R`.
pub trait LineMap: Sync {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
}

/// A differentiable map `R^2 -> R`, the `x`-component of a planar system.
pub trait PlaneMap: Sync {
    fn value(&self, x: f64, y: f64) -> f64;
    /// `(df/dx, df/dy)`
    fn partials(&self, x: f64, y: f64) -> (f64, f64);
}

/// `x -> scale * t(x) + shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledTransform {
    pub scale: f64,
    pub transform: Transform,
    pub shift: f64,
}

impl LineMap for ScaledTransform {
    fn value(&self, x: f64) -> f64 {
        self.scale * self.transform.apply(x) + self.shift
    }

    fn derivative(&self, x: f64) -> f64 {
        self.scale * self.transform.derivative(x)
    }
}

/// `f(x, y) = a g(x) + b m(y) + c`.
///
/// Covers the linear family (`g = m = identity`), the additive families
/// with square, exp and log terms, and the `x` update of the Henon map
/// (`a = -1.4`, `g = square`, `b = 1`, `c = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdditiveMap {
    pub a: f64,
    pub g: Transform,
    pub b: f64,
    pub m: Transform,
    pub c: f64,
}

impl AdditiveMap {
    /// `a x + b y + c`
    pub fn linear(a: f64, b: f64, c: f64) -> Self {
        Self { a, g: Transform::Identity, b, m: Transform::Identity, c }
    }

    /// `x + b m(y)`
    pub fn coupled(b: f64, m: Transform) -> Self {
        Self { a: 1.0, g: Transform::Identity, b, m, c: 0.0 }
    }

    /// `1 + a x^2 + b y`, default `a = -1.4`, `b = 1`.
    pub fn henon(a: f64, b: f64) -> Self {
        Self { a, g: Transform::Square, b, m: Transform::Identity, c: 1.0 }
    }

    /// The map in `y` alone once `x` is fixed.
    pub fn section_at(&self, x: f64) -> ScaledTransform {
        ScaledTransform {
            scale: self.b,
            transform: self.m,
            shift: self.a * self.g.apply(x) + self.c,
        }
    }
}

impl PlaneMap for AdditiveMap {
    #[inline]
    fn value(&self, x: f64, y: f64) -> f64 {
        self.a * self.g.apply(x) + self.b * self.m.apply(y) + self.c
    }

    #[inline]
    fn partials(&self, x: f64, y: f64) -> (f64, f64) {
        (self.a * self.g.derivative(x), self.b * self.m.derivative(y))
    }
}

impl fmt::Display for AdditiveMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}*{}(x) + {}*{}(y) + {}",
            self.a, self.g, self.b, self.m, self.c
        )
    }
}

/// A line map given by closures for the value and the derivative.
pub struct FnLineMap<F, D> {
    pub f: F,
    pub df: D,
}

impl<F, D> LineMap for FnLineMap<F, D>
where
    F: Fn(f64) -> f64 + Sync,
    D: Fn(f64) -> f64 + Sync,
{
    fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    fn derivative(&self, x: f64) -> f64 {
        (self.df)(x)
    }
}

/// A plane map given by closures for the value and the gradient.
pub struct FnPlaneMap<F, G> {
    pub f: F,
    pub grad: G,
}

impl<F, G> PlaneMap for FnPlaneMap<F, G>
where
    F: Fn(f64, f64) -> f64 + Sync,
    G: Fn(f64, f64) -> (f64, f64) + Sync,
{
    fn value(&self, x: f64, y: f64) -> f64 {
        (self.f)(x, y)
    }

    fn partials(&self, x: f64, y: f64) -> (f64, f64) {
        (self.grad)(x, y)
    }
}
