// SPDX-License-Identifier: Apache-2.0

//! Seeded synthetic systems.
//!
//! Random numbers come from ChaCha8 (`rand_chacha`), a counter-based
//! generator: seed `s` selects the key, and independent streams of the same
//! key feed the inputs (stream 0), the dynamical noise (stream 1) and
//! [`inject_noise`] (stream 2).
//!
//! The linear and additive families draw `(x_n, y_n)` afresh for every
//! sample, so a draw is a transition `(x, y, x')` rather than a stretch of
//! one orbit. Only [`Family::HenonAttractor`] iterates the map.

use std::fmt;
use std::str::FromStr;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::maps::{AdditiveMap, PlaneMap, Transform};
use crate::oracles::{NoiseKind, NoiseSpec};
use crate::series::{TimeSeries, Transitions};

const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `x' = a x + b y + c`
    LinearXy,
    /// `x' = a g1(x) + b g2(y) + c`
    Additive,
    /// One step of `x' = c + a x^2 + b y` from uniform `(x, y)`.
    HenonUniform,
    /// Orbit of `x' = c + a x^2 + b y`, `y' = y_coef x` from the origin.
    HenonAttractor,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::LinearXy => "linear_xy",
            Family::Additive => "g1_g2_additive",
            Family::HenonUniform => "henon_uniform",
            Family::HenonAttractor => "henon_attractor",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_xy" | "linear" => Ok(Family::LinearXy),
            "g1_g2_additive" | "additive" => Ok(Family::Additive),
            "henon_uniform" => Ok(Family::HenonUniform),
            "henon_attractor" | "henon" => Ok(Family::HenonAttractor),
            other => Err(Error::Argument(format!("unknown system family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub family: Family,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub g1: Transform,
    pub g2: Transform,
    pub noise: Option<NoiseSpec>,
    pub seed: u64,
    pub n: usize,
    /// Iterations discarded before recording, attractor mode only.
    pub burn_in: usize,
    /// Range of the i.i.d. inputs `x` and `y`.
    pub inputs: (f64, f64),
    /// Coefficient of the `y` update of the Henon orbit.
    pub y_coef: f64,
}

impl SystemSpec {
    /// `x' = x + b y` on `U([1, 2])` inputs.
    pub fn linear(b: f64, n: usize, seed: u64) -> Self {
        Self {
            family: Family::LinearXy,
            a: 1.0,
            b,
            c: 0.0,
            g1: Transform::Identity,
            g2: Transform::Identity,
            noise: None,
            seed,
            n,
            burn_in: 0,
            inputs: (1.0, 2.0),
            y_coef: 0.3,
        }
    }

    /// `x' = x + b g2(y)` on `U([1, 2])` inputs.
    pub fn additive(b: f64, g2: Transform, n: usize, seed: u64) -> Self {
        Self { family: Family::Additive, g2, ..Self::linear(b, n, seed) }
    }

    /// `x' = 1 - 1.4 x^2 + y` from `(x, y) ~ U([-1.5, 1.5]^2)`.
    pub fn henon_uniform(n: usize, seed: u64) -> Self {
        Self {
            family: Family::HenonUniform,
            a: -1.4,
            b: 1.0,
            c: 1.0,
            g1: Transform::Square,
            inputs: (-1.5, 1.5),
            ..Self::linear(1.0, n, seed)
        }
    }

    /// The Henon orbit from the origin after 1000 discarded iterations.
    pub fn henon_attractor(n: usize) -> Self {
        Self { family: Family::HenonAttractor, burn_in: 1000, ..Self::henon_uniform(n, 0) }
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = Some(noise);
        self
    }

    pub fn with_inputs(mut self, lo: f64, hi: f64) -> Self {
        self.inputs = (lo, hi);
        self
    }

    /// The `x` update as a map of the plane.
    pub fn map(&self) -> AdditiveMap {
        match self.family {
            Family::LinearXy => AdditiveMap::linear(self.a, self.b, self.c),
            Family::Additive => AdditiveMap { a: self.a, g: self.g1, b: self.b, m: self.g2, c: self.c },
            Family::HenonUniform | Family::HenonAttractor => AdditiveMap::henon(self.a, self.b).with_c(self.c),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Argument("sample count must be at least 1".into()));
        }
        let params = [self.a, self.b, self.c, self.y_coef, self.inputs.0, self.inputs.1];
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("system parameters must be finite".into()));
        }
        if self.family != Family::HenonAttractor {
            let (lo, hi) = self.inputs;
            if hi <= lo {
                return Err(Error::Argument(format!("empty input range [{lo}, {hi}]")));
            }
            let map = self.map();
            for t in [map.g, map.m] {
                if t == Transform::Log && lo <= 0.0 {
                    return Err(Error::Domain(format!(
                        "log selector needs positive inputs, range starts at {lo}"
                    )));
                }
            }
        } else if self.noise.is_some() {
            return Err(Error::Argument(
                "noise is not defined for the attractor orbit; use inject_noise on its output".into(),
            ));
        }
        Ok(())
    }
}

impl AdditiveMap {
    fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn noise_sampler(noise: &NoiseSpec) -> impl FnMut(&mut ChaCha8Rng) -> f64 {
    let eps = noise.eps();
    let kind = noise.kind();
    let normal = Normal::new(0.0, eps).expect("eps is positive");
    move |r: &mut ChaCha8Rng| match kind {
        NoiseKind::Uniform => eps * (r.random::<f64>() - 0.5),
        NoiseKind::Gaussian => normal.sample(r),
    }
}

/// Samples of the system as transitions `(x, y, x')`.
pub fn generate(spec: &SystemSpec) -> Result<Transitions> {
    spec.validate()?;
    let map = spec.map();
    let n = spec.n;
    let (mut xs, mut ys, mut xn) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    match spec.family {
        Family::HenonAttractor => {
            let (mut x, mut y) = (0.0_f64, 0.0_f64);
            for step in 0..spec.burn_in + n + 1 {
                if step >= spec.burn_in {
                    xs.push(x);
                    ys.push(y);
                }
                let next = map.value(x, y);
                y = spec.y_coef * x;
                x = next;
                if !(x.abs() <= DIVERGENCE_BOUND) {
                    return Err(Error::Divergence { step: step + 1, magnitude: x.abs() });
                }
            }
            xn.extend_from_slice(&xs[1..]);
            xs.pop();
            ys.pop();
        }
        _ => {
            let (lo, hi) = spec.inputs;
            let mut inputs = rng(spec.seed, 0);
            let mut noise_rng = rng(spec.seed, 1);
            let mut noise = spec.noise.as_ref().map(noise_sampler);
            for _ in 0..n {
                let x = inputs.random_range(lo..hi);
                let y = inputs.random_range(lo..hi);
                let z = noise.as_mut().map_or(0.0, |s| s(&mut noise_rng));
                xs.push(x);
                ys.push(y);
                xn.push(map.value(x, y) + z);
            }
        }
    }
    if n < 2 {
        return Err(Error::Argument("at least 2 samples are needed to form series".into()));
    }
    Transitions::from_samples(
        TimeSeries::new("x", xs)?,
        TimeSeries::new("y", ys)?,
        TimeSeries::new("x'", xn)?,
    )
}

/// `x` plus i.i.d. noise, reproducible from `seed`.
pub fn inject_noise(x: &TimeSeries, noise: &NoiseSpec, seed: u64) -> TimeSeries {
    let mut r = rng(seed, 2);
    let mut s = noise_sampler(noise);
    let values = x.values().iter().map(|v| v + s(&mut r)).collect();
    TimeSeries::new(x.name(), values).expect("finite input plus finite noise")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        let spec = SystemSpec::linear(0.5, 1000, 42).with_noise(NoiseSpec::gaussian(0.1).unwrap());
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SystemSpec { seed: 43, ..spec };
        assert_ne!(generate(&other).unwrap(), generate(&SystemSpec::linear(0.5, 1000, 42)).unwrap());
    }

    #[test]
    fn uncoupled_is_identity() {
        let t = generate(&SystemSpec::linear(0.0, 500, 1)).unwrap();
        assert_eq!(t.x().values(), t.x_next().values());
    }

    #[test]
    fn linear_range() {
        let eps = 0.1;
        let spec = SystemSpec { a: 0.7, c: 0.2, ..SystemSpec::linear(1.3, 20_000, 3) }
            .with_noise(NoiseSpec::uniform(eps).unwrap());
        let t = generate(&spec).unwrap();
        let (lo, hi) = (0.7 + 1.3 + 0.2 - eps / 2.0, 1.4 + 2.6 + 0.2 + eps / 2.0);
        for (i, v) in t.x_next().values().iter().enumerate() {
            assert!(*v >= lo && *v <= hi, "sample {i}: {v}");
        }
    }

    #[test]
    fn additive_log_needs_positive_inputs() {
        let spec = SystemSpec::additive(1.0, Transform::Log, 10, 0).with_inputs(0.0, 1.0);
        assert!(matches!(generate(&spec), Err(Error::Domain(_))));
        assert!(generate(&SystemSpec::additive(1.0, Transform::Log, 10, 0)).is_ok());
    }

    #[test]
    fn henon_orbit_is_a_true_orbit() {
        let spec = SystemSpec::henon_attractor(5000);
        let t = generate(&spec).unwrap();
        let map = spec.map();
        let (x, y, xn) = (t.x().values(), t.y().values(), t.x_next().values());
        for i in 0..x.len() - 1 {
            assert_eq!(xn[i], map.value(x[i], y[i]));
            assert!((xn[i] - (1.0 - 1.4 * x[i] * x[i] + y[i])).abs() < 1e-14);
            assert_eq!(x[i + 1], xn[i]);
            assert_eq!(y[i + 1], 0.3 * x[i]);
        }
        assert!(x.iter().all(|v| v.abs() < 1.5));
    }

    #[test]
    fn henon_divergence_is_reported() {
        let spec = SystemSpec { y_coef: 1.0, ..SystemSpec::henon_attractor(100_000) };
        assert!(matches!(generate(&spec), Err(Error::Divergence { .. })));
        let spec = SystemSpec::henon_attractor(10).with_noise(NoiseSpec::uniform(0.1).unwrap());
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn henon_uniform_inputs() {
        let t = generate(&SystemSpec::henon_uniform(10_000, 9)).unwrap();
        assert!(t.x().values().iter().chain(t.y().values()).all(|v| (-1.5..1.5).contains(v)));
    }

    #[test]
    fn noise_moments() {
        let flat = TimeSeries::new("c", vec![2.0; 1_000_000]).unwrap();
        let u = inject_noise(&flat, &NoiseSpec::uniform(1.0).unwrap(), 11);
        let mean = u.values().iter().sum::<f64>() / 1e6;
        let var = u.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1e6;
        assert!((var - 1.0 / 12.0).abs() < 0.01 / 12.0, "var {var}");
        assert!(u.values().iter().all(|v| (v - 2.0).abs() <= 0.5));

        let g = inject_noise(&flat, &NoiseSpec::gaussian(0.01).unwrap(), 12);
        let mean = g.values().iter().sum::<f64>() / 1e6;
        let sd = (g.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1e6).sqrt();
        assert!((sd - 0.01).abs() < 0.0002, "sd {sd}");
        assert_eq!(g, inject_noise(&flat, &NoiseSpec::gaussian(0.01).unwrap(), 12));
    }
}
