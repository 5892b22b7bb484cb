// SPDX-License-Identifier: Apache-2.0

//! Ground truth for the estimators: closed forms and grid quadrature.
//!
//! Densities are stored as cell averages on a uniform grid ([`Density1D`]).
//! That representation makes the pushforward under a monotone map and the
//! convolution with uniform or Gaussian noise exact per cell: both are
//! computed from differences of the cumulative distribution, so the only
//! quadrature error left is in the final `-sum p ln p` over cells.

use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::maps::{AdditiveMap, PlaneMap, Rect, ScaledTransform, Transform};

/// Rendering of an infinite transfer entropy in reports.
pub const DIVERGENT: &str = "divergent (noiseless limit)";

const MASS_TOLERANCE: f64 = 1e-8;
const MAX_CELLS: usize = 1 << 21;
const GAUSS_CUTOFF: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Uniform on `(-eps/2, eps/2)`.
    Uniform,
    /// Normal with standard deviation `eps`.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    kind: NoiseKind,
    eps: f64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Argument(format!("noise level must be positive, got {eps}")));
        }
        Ok(Self { kind, eps })
    }

    pub fn uniform(eps: f64) -> Result<Self> {
        Self::new(NoiseKind::Uniform, eps)
    }

    pub fn gaussian(eps: f64) -> Result<Self> {
        Self::new(NoiseKind::Gaussian, eps)
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }
}

/// Differential entropy of the noise, nats.
pub fn noise_entropy(noise: &NoiseSpec) -> f64 {
    match noise.kind {
        NoiseKind::Uniform => noise.eps.ln(),
        NoiseKind::Gaussian => {
            0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * noise.eps * noise.eps).ln()
        }
    }
}

/// Probability density on `[lo, hi]`, piecewise constant on `M` equal cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Density1D {
    lo: f64,
    hi: f64,
    values: Vec<f64>,
}

impl Density1D {
    /// Builds a density from cell masses; a total off by more than `tol`
    /// from 1 is a resolution error, smaller drift is normalized away.
    pub fn from_masses(lo: f64, hi: f64, masses: &[f64], tol: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::Argument(format!("invalid support [{lo}, {hi}]")));
        }
        if masses.is_empty() {
            return Err(Error::Argument("density needs at least one cell".into()));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Domain("cell masses must be finite and nonnegative".into()));
        }
        let total: f64 = masses.iter().sum();
        if !((total - 1.0).abs() <= tol) {
            return Err(Error::Resolution { drift: (total - 1.0).abs() });
        }
        let width = (hi - lo) / masses.len() as f64;
        let values = masses.iter().map(|m| m / total / width).collect();
        Ok(Self { lo, hi, values })
    }

    pub fn uniform(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        Self::from_masses(lo, hi, &vec![1.0 / cells as f64; cells.max(1)], MASS_TOLERANCE)
    }

    /// Exact cell averages of the law with distribution function `cdf`.
    pub fn from_cdf(lo: f64, hi: f64, cells: usize, cdf: impl Fn(f64) -> f64) -> Result<Self> {
        let edges = edges(lo, hi, cells);
        let c: Vec<f64> = edges.iter().map(|&e| cdf(e)).collect();
        let masses: Vec<f64> = c.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
        Self::from_masses(lo, hi, &masses, f64::INFINITY)
    }

    /// Midpoint samples of `pdf`, normalized; drift beyond 1e-3 is refused.
    pub fn from_pdf(lo: f64, hi: f64, cells: usize, pdf: impl Fn(f64) -> f64) -> Result<Self> {
        let w = (hi - lo) / cells as f64;
        let masses: Vec<f64> = (0..cells)
            .map(|i| pdf(lo + (i as f64 + 0.5) * w) * w)
            .collect();
        Self::from_masses(lo, hi, &masses, 1e-3)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn cell_width(&self) -> f64 {
        (self.hi - self.lo) / self.values.len() as f64
    }

    /// Cell-average density values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn midpoints(&self) -> impl Iterator<Item = f64> + '_ {
        let w = self.cell_width();
        (0..self.cells()).map(move |i| self.lo + (i as f64 + 0.5) * w)
    }

    pub fn masses(&self) -> impl Iterator<Item = f64> + '_ {
        let w = self.cell_width();
        self.values.iter().map(move |v| v * w)
    }

    pub fn mass(&self) -> f64 {
        self.masses().sum()
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let w = self.cell_width();
        let t = (x - self.lo) / w;
        let i = (t.floor() as usize).min(self.cells() - 1);
        (i, x - (self.lo + i as f64 * w))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(x >= self.lo && x <= self.hi) {
            return 0.0;
        }
        self.values[self.locate(x).0]
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let (i, off) = self.locate(x);
        let w = self.cell_width();
        let below: f64 = self.values[..i].iter().sum::<f64>() * w;
        (below + self.values[i] * off).min(1.0)
    }

    fn cumulative(&self) -> Vec<f64> {
        let w = self.cell_width();
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.cells() + 1);
        out.push(0.0);
        for v in &self.values {
            acc += v * w;
            out.push(acc);
        }
        out
    }

    /// `-sum p ln p dx`, with `0 ln 0 = 0`.
    pub fn entropy(&self) -> f64 {
        let w = self.cell_width();
        -self
            .values
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| v * v.ln())
            .sum::<f64>()
            * w
    }

    /// The same law averaged onto `cells` equal cells of the same support.
    pub fn resampled(&self, cells: usize) -> Result<Self> {
        let cum = Cumulative::new(self);
        Self::from_cdf(self.lo, self.hi, cells, |x| cum.cdf(x))
    }

    /// The law of `X + shift`.
    pub fn shifted(&self, shift: f64) -> Self {
        Self { lo: self.lo + shift, hi: self.hi + shift, values: self.values.clone() }
    }

    /// Exact `L1` distance between two piecewise-constant densities.
    pub fn l1_distance(&self, other: &Density1D) -> f64 {
        let mut breaks: Vec<f64> = edges(self.lo, self.hi, self.cells());
        breaks.extend(edges(other.lo, other.hi, other.cells()));
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mut total = 0.0;
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let m = 0.5 * (a + b);
            total += (self.pdf(m) - other.pdf(m)).abs() * (b - a);
        }
        total
    }
}

pub(crate) fn edges(lo: f64, hi: f64, cells: usize) -> Vec<f64> {
    let w = (hi - lo) / cells as f64;
    (0..=cells)
        .map(|i| if i == cells { hi } else { lo + i as f64 * w })
        .collect()
}

/// Distribution function and its integral for a [`Density1D`], O(1) lookups.
pub(crate) struct Cumulative<'a> {
    d: &'a Density1D,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl<'a> Cumulative<'a> {
    pub(crate) fn new(d: &'a Density1D) -> Self {
        let f = d.cumulative();
        let w = d.cell_width();
        let mut g = Vec::with_capacity(f.len());
        g.push(0.0);
        for i in 0..d.cells() {
            g.push(g[i] + f[i] * w + 0.5 * d.values[i] * w * w);
        }
        Self { d, f, g }
    }

    pub(crate) fn cdf(&self, x: f64) -> f64 {
        if x <= self.d.lo {
            return 0.0;
        }
        if x >= self.d.hi {
            return *self.f.last().unwrap();
        }
        let (i, off) = self.d.locate(x);
        self.f[i] + self.d.values[i] * off
    }

    /// `G(x) = int_{-inf}^x F(t) dt`
    fn integrated(&self, x: f64) -> f64 {
        if x <= self.d.lo {
            return 0.0;
        }
        if x >= self.d.hi {
            return self.g.last().unwrap() + self.f.last().unwrap() * (x - self.d.hi);
        }
        let (i, off) = self.d.locate(x);
        self.g[i] + self.f[i] * off + 0.5 * self.d.values[i] * off * off
    }
}

/// Density of `U = f(Y)` for `Y ~ p_y` and a map monotone on its support.
///
/// Each output cell receives the exact mass `|F_Y(f^-1(u1)) - F_Y(f^-1(u0))|`.
pub fn pushforward_density_1d(p_y: &Density1D, f: &ScaledTransform) -> Result<Density1D> {
    f.transform.check_monotone_on(p_y.lo, p_y.hi)?;
    if f.scale == 0.0 {
        return Err(Error::SingularMap(
            "derivative vanishes on the whole support (zero coupling)".into(),
        ));
    }
    let ends = [
        crate::maps::LineMap::value(f, p_y.lo),
        crate::maps::LineMap::value(f, p_y.hi),
    ];
    let (u_lo, u_hi) = (ends[0].min(ends[1]), ends[0].max(ends[1]));
    if !(u_hi > u_lo) {
        return Err(Error::SingularMap("image of the support is a single point".into()));
    }
    let cum = Cumulative::new(p_y);
    let inv = |u: f64| {
        let v = (u - f.shift) / f.scale;
        f.transform
            .inverse_on(v, p_y.lo, p_y.hi)
            .clamp(p_y.lo, p_y.hi)
    };
    let e = edges(u_lo, u_hi, p_y.cells());
    let c: Vec<f64> = e
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            if i == 0 {
                if ends[0] <= ends[1] { 0.0 } else { 1.0 }
            } else if i == e.len() - 1 {
                if ends[0] <= ends[1] { 1.0 } else { 0.0 }
            } else {
                cum.cdf(inv(u))
            }
        })
        .collect();
    let masses: Vec<f64> = c.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    Density1D::from_masses(u_lo, u_hi, &masses, 1e-6)
}

fn std_normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `int_{-inf}^t Phi(s) ds`
fn psi(t: f64) -> f64 {
    t * std_normal_cdf(t) + std_normal_pdf(t)
}

/// Density of `U + Z` for independent noise `Z`.
///
/// Uniform noise yields exact cell averages through the integrated
/// distribution function of `U`. Gaussian noise is truncated at eight
/// standard deviations, where the neglected tail mass is below `1e-15`.
pub fn convolve(p_u: &Density1D, noise: &NoiseSpec) -> Result<Density1D> {
    let eps = noise.eps;
    let half = match noise.kind {
        NoiseKind::Uniform => 0.5 * eps,
        NoiseKind::Gaussian => GAUSS_CUTOFF * eps,
    };
    let (lo, hi) = (p_u.lo - half, p_u.hi + half);
    let step = p_u.cell_width().min(eps / 16.0);
    let cells = (((hi - lo) / step).ceil() as usize).clamp(p_u.cells(), MAX_CELLS);
    let e = edges(lo, hi, cells);
    let cum = Cumulative::new(p_u);
    let f_out: Vec<f64> = match noise.kind {
        NoiseKind::Uniform => e
            .par_iter()
            .map(|&x| (cum.integrated(x + half) - cum.integrated(x - half)) / eps)
            .collect(),
        NoiseKind::Gaussian => {
            let w = p_u.cell_width();
            let ue = edges(p_u.lo, p_u.hi, p_u.cells());
            e.par_iter()
                .map(|&x| {
                    // cells entirely below x - 8 eps contribute their full mass
                    let first = (((x - half - p_u.lo) / w).floor().max(0.0) as usize)
                        .min(p_u.cells());
                    let last = ((((x + half - p_u.lo) / w).ceil().max(0.0)) as usize)
                        .min(p_u.cells());
                    let mut acc = cum.f[first];
                    for j in first..last {
                        let p = p_u.values[j];
                        if p > 0.0 {
                            acc += p * eps * (psi((x - ue[j]) / eps) - psi((x - ue[j + 1]) / eps));
                        }
                    }
                    acc
                })
                .collect()
        }
    };
    let masses: Vec<f64> = f_out.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    Density1D::from_masses(lo, hi, &masses, 1e-6)
}

/// Grid resolution for [`h_cond_semianalytic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quadrature {
    /// Cells of the inner densities.
    pub inner: usize,
    /// Nodes of the outer expectation over `x`.
    pub outer: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self { inner: 4096, outer: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiAnalytic {
    /// `h(X'|X)` in nats; `-inf` for a deterministic map without noise.
    pub value: f64,
    /// `|h_M - h_{M/2}| / 3`, the Richardson estimate of the grid error.
    pub error_estimate: f64,
    pub quadrature: Quadrature,
}

fn h_cond_at_resolution(
    f: &AdditiveMap,
    p_x: &Density1D,
    p_y: &Density1D,
    noise: Option<&NoiseSpec>,
    quad: Quadrature,
) -> Result<f64> {
    let p_y = p_y.resampled(quad.inner)?;
    let p_x = p_x.resampled(quad.outer)?;
    let nodes: Vec<(f64, f64)> = p_x.midpoints().zip(p_x.masses()).collect();
    let q: Vec<Result<f64>> = nodes
        .par_iter()
        .map(|&(x, _)| {
            let p_u = pushforward_density_1d(&p_y, &f.section_at(x))?;
            let i = match noise {
                Some(z) => convolve(&p_u, z)?,
                None => p_u,
            };
            Ok(i.entropy())
        })
        .collect();
    let mut h = 0.0;
    for ((_, w), qi) in nodes.iter().zip(q) {
        h += w * qi?;
    }
    Ok(h)
}

/// `h(X'|X)` for `X' = f(X, Y) + Z` with independent `X ~ p_x`, `Y ~ p_y`.
///
/// For every outer node `x` the density of `f(x, Y)` is pushed forward,
/// convolved with the noise and its entropy taken; the entropies are then
/// averaged over `p_x`.
pub fn h_cond_semianalytic(
    f: &AdditiveMap,
    p_x: &Density1D,
    p_y: &Density1D,
    noise: Option<&NoiseSpec>,
    quad: Quadrature,
) -> Result<SemiAnalytic> {
    if quad.inner < 2 || quad.outer < 1 {
        return Err(Error::Argument("quadrature needs at least 2 inner cells".into()));
    }
    if f.b == 0.0 {
        let value = noise.map_or(f64::NEG_INFINITY, noise_entropy);
        return Ok(SemiAnalytic { value, error_estimate: 0.0, quadrature: quad });
    }
    let fine = h_cond_at_resolution(f, p_x, p_y, noise, quad)?;
    let coarse_quad = Quadrature { inner: quad.inner / 2, ..quad };
    let coarse = h_cond_at_resolution(f, p_x, p_y, noise, coarse_quad)?;
    Ok(SemiAnalytic {
        value: fine,
        error_estimate: (fine - coarse).abs() / 3.0,
        quadrature: quad,
    })
}

/// Transfer entropy of `X' = f(X, Y) + Z`: `h(X'|X) - h(Z)`.
///
/// Without noise the second term is `-inf` and the result is `+inf`.
pub fn te_semianalytic(
    f: &AdditiveMap,
    p_x: &Density1D,
    p_y: &Density1D,
    noise: Option<&NoiseSpec>,
    quad: Quadrature,
) -> Result<f64> {
    let h = h_cond_semianalytic(f, p_x, p_y, noise, quad)?.value;
    Ok(match noise {
        Some(z) => h - noise_entropy(z),
        None if f.b == 0.0 => 0.0,
        None => f64::INFINITY,
    })
}

/// `T = ln(b/eps) + eps/(2b)` for `X' = X + bY + U(-eps/2, eps/2)` with
/// `Y ~ U` on a unit interval; zero without coupling.
pub fn te_noisy_linear(b: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("noise level must be positive, got {eps}")));
    }
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::Domain(format!("coupling must be nonnegative, got {b}")));
    }
    if b == 0.0 {
        return Ok(0.0);
    }
    Ok((b / eps).ln() + eps / (2.0 * b))
}

/// `ln(|(f(x1, y1) - f(x1, y0)) / eps + 1|)` for a map increasing in both
/// arguments on `domain`.
pub fn te_upper_bound(f: &dyn PlaneMap, domain: Rect, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("noise level must be positive, got {eps}")));
    }
    const S: usize = 33;
    let at = |i: usize, j: usize| {
        let x = domain.x0 + (domain.x1 - domain.x0) * i as f64 / (S - 1) as f64;
        let y = domain.y0 + (domain.y1 - domain.y0) * j as f64 / (S - 1) as f64;
        (x, y, f.value(x, y))
    };
    for i in 0..S {
        for j in 0..S {
            let (x, y, v) = at(i, j);
            if !v.is_finite() {
                return Err(Error::Precondition(format!("map is not finite at ({x}, {y})")));
            }
            let dec_x = i + 1 < S && at(i + 1, j).2 < v;
            let dec_y = j + 1 < S && at(i, j + 1).2 < v;
            if dec_x || dec_y {
                return Err(Error::Precondition(format!(
                    "map decreases in {} near ({x}, {y})",
                    if dec_x { "x" } else { "y" }
                )));
            }
        }
    }
    let span = f.value(domain.x1, domain.y1) - f.value(domain.x1, domain.y0);
    Ok((span / eps + 1.0).abs().ln())
}

/// The map family `x + b m(y)` with `Y ~ U([1, 2])` and no noise has
/// `h(X'|X) = h(b m(Y))`, available in closed form for every transform.
pub fn h_cond_closed_form(b: f64, m: Transform) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::Domain(format!("closed forms need b > 0, got {b}")));
    }
    let ln2 = std::f64::consts::LN_2;
    // h(b m(Y)) = ln b + E[ln |m'(Y)|] for Y ~ U([1, 2])
    let e_ln_y = 2.0 * ln2 - 1.0;
    Ok(b.ln()
        + match m {
            Transform::Identity => 0.0,
            Transform::Square => ln2 + e_ln_y,
            Transform::Exp => 1.5,
            Transform::Log => -e_ln_y,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_pair() -> (Density1D, Density1D) {
        (
            Density1D::uniform(1.0, 2.0, 64).unwrap(),
            Density1D::uniform(1.0, 2.0, 64).unwrap(),
        )
    }

    #[test]
    fn noise_entropies() {
        assert_eq!(noise_entropy(&NoiseSpec::uniform(1.0).unwrap()), 0.0);
        assert!((noise_entropy(&NoiseSpec::uniform(0.01).unwrap()) + 4.6052).abs() < 1e-4);
        assert!((noise_entropy(&NoiseSpec::gaussian(1.0).unwrap()) - 1.4189).abs() < 1e-4);
        assert!(NoiseSpec::uniform(0.0).is_err());
        assert!(NoiseSpec::gaussian(-1.0).is_err());
    }

    #[test]
    fn density_basics() {
        let d = Density1D::from_cdf(0.0, 1.0, 100, |x| x * x).unwrap();
        assert!((d.mass() - 1.0).abs() < 1e-12);
        assert!((d.cdf(0.5) - 0.25).abs() < 1e-12);
        assert_eq!(d.pdf(-0.1), 0.0);
        let u = Density1D::uniform(0.0, 2.0, 7).unwrap();
        assert!((u.entropy() - 2f64.ln()).abs() < 1e-12);
        assert!((u.l1_distance(&Density1D::uniform(0.0, 1.0, 3).unwrap()) - 1.0).abs() < 1e-12);
        assert!(Density1D::from_masses(0.0, 1.0, &[0.5, 0.4], 1e-8).is_err());
        assert!(Density1D::from_masses(0.0, 1.0, &[0.5, -0.1], 1.0).is_err());
    }

    #[test]
    fn pushforward_linear() {
        let y = Density1D::uniform(1.0, 2.0, 100).unwrap();
        let s = ScaledTransform { scale: 2.0, transform: Transform::Identity, shift: 0.0 };
        let u = pushforward_density_1d(&y, &s).unwrap();
        assert_eq!((u.lo(), u.hi()), (2.0, 4.0));
        assert!(u.values().iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn pushforward_square_and_log() {
        let y = Density1D::uniform(1.0, 2.0, 1000).unwrap();
        let sq = pushforward_density_1d(
            &y,
            &ScaledTransform { scale: 1.0, transform: Transform::Square, shift: 0.0 },
        )
        .unwrap();
        let exact = Density1D::from_cdf(1.0, 4.0, 1000, |u| u.sqrt() - 1.0).unwrap();
        assert!(sq.l1_distance(&exact) < 1e-12);
        // midpoint density against 1/(2 sqrt u)
        let mid = 2.5;
        assert!((sq.pdf(mid) - 1.0 / (2.0 * mid.sqrt())).abs() < 1e-3);

        let lg = pushforward_density_1d(
            &y,
            &ScaledTransform { scale: 1.0, transform: Transform::Log, shift: 0.0 },
        )
        .unwrap();
        assert!((lg.hi() - 2f64.ln()).abs() < 1e-15);
        assert!((lg.pdf(0.3) - 0.3f64.exp()).abs() < 2e-3);

        let dec = pushforward_density_1d(
            &y,
            &ScaledTransform { scale: -1.0, transform: Transform::Identity, shift: 0.0 },
        )
        .unwrap();
        assert_eq!((dec.lo(), dec.hi()), (-2.0, -1.0));
        assert!(matches!(
            pushforward_density_1d(
                &y,
                &ScaledTransform { scale: 0.0, transform: Transform::Identity, shift: 0.0 }
            ),
            Err(Error::SingularMap(_))
        ));
    }

    #[test]
    fn convolution_shapes() {
        let u = Density1D::uniform(0.0, 1.0, 512).unwrap();
        let tri = convolve(&u, &NoiseSpec::uniform(1.0).unwrap()).unwrap();
        // support [-0.5, 1.5], triangle peaking at 0.5 with height 1
        assert!((tri.lo() + 0.5).abs() < 1e-15 && (tri.hi() - 1.5).abs() < 1e-15);
        assert!((tri.pdf(0.5) - 1.0).abs() < 1e-2);
        assert!((tri.pdf(0.0) - 0.5).abs() < 1e-2);
        assert!((tri.mass() - 1.0).abs() < 1e-12);
        // triangle entropy is 1/2
        assert!((tri.entropy() - 0.5).abs() < 1e-5);

        // trapezoid: plateau 1/b, ramps of width eps
        let b = 2.0;
        let eps = 0.1;
        let ub = Density1D::uniform(0.0, b, 1024).unwrap();
        let tr = convolve(&ub, &NoiseSpec::uniform(eps).unwrap()).unwrap();
        assert!((tr.pdf(1.0) - 1.0 / b).abs() < 1e-9);
        let xp = tr.midpoints().min_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
        assert!((tr.pdf(xp) - (xp + eps / 2.0) / (b * eps)).abs() < 1e-3);

        // eps -> 0 recovers the input
        let tiny = convolve(&u, &NoiseSpec::uniform(1e-6).unwrap()).unwrap();
        assert!(tiny.l1_distance(&u) < 1e-4);
    }

    #[test]
    fn gaussian_convolution_matches_normal() {
        // narrow uniform convolved with N(0, 1) is close to N(0, 1)
        let u = Density1D::uniform(-1e-3, 1e-3, 16).unwrap();
        let g = convolve(&u, &NoiseSpec::gaussian(1.0).unwrap()).unwrap();
        assert!((g.mass() - 1.0).abs() < 1e-12);
        assert!((g.entropy() - 1.4189385).abs() < 1e-5);
        assert!((g.pdf(0.0) - std_normal_pdf(0.0)).abs() < 1e-5);
    }

    #[test]
    fn pipeline_noisy_linear() {
        let (px, py) = unit_pair();
        for (b, eps) in [(1.0, 0.01), (0.5, 0.05), (2.0, 0.1)] {
            let f = AdditiveMap::coupled(b, Transform::Identity);
            let z = NoiseSpec::uniform(eps).unwrap();
            let h = h_cond_semianalytic(&f, &px, &py, Some(&z), Quadrature::default()).unwrap();
            let exact = b.ln() + eps / (2.0 * b);
            assert!((h.value - exact).abs() < 1e-4, "b={b} eps={eps}: {} vs {exact}", h.value);
            assert!(h.error_estimate < 1e-4);
            let te = te_semianalytic(&f, &px, &py, Some(&z), Quadrature::default()).unwrap();
            assert!((te - te_noisy_linear(b, eps).unwrap()).abs() < 1e-4);
        }
    }

    #[test]
    fn pipeline_noiseless_closed_forms() {
        let (px, py) = unit_pair();
        for m in [Transform::Identity, Transform::Square, Transform::Exp, Transform::Log] {
            for b in [0.5, 1.0, 2.0] {
                let f = AdditiveMap::coupled(b, m);
                let h = h_cond_semianalytic(&f, &px, &py, None, Quadrature::default()).unwrap();
                let exact = h_cond_closed_form(b, m).unwrap();
                assert!((h.value - exact).abs() < 1e-6, "{m} b={b}: {} vs {exact}", h.value);
            }
        }
    }

    #[test]
    fn zero_coupling_sentinels() {
        let (px, py) = unit_pair();
        let f = AdditiveMap::coupled(0.0, Transform::Identity);
        let h = h_cond_semianalytic(&f, &px, &py, None, Quadrature::default()).unwrap();
        assert_eq!(h.value, f64::NEG_INFINITY);
        let one = AdditiveMap::coupled(1.0, Transform::Identity);
        assert_eq!(
            te_semianalytic(&one, &px, &py, None, Quadrature::default()).unwrap(),
            f64::INFINITY
        );
        let z = NoiseSpec::gaussian(0.1).unwrap();
        let h = h_cond_semianalytic(&f, &px, &py, Some(&z), Quadrature::default()).unwrap();
        assert_eq!(h.value, noise_entropy(&z));
    }

    #[test]
    fn noisy_linear_closed_form() {
        assert_eq!(te_noisy_linear(0.0, 0.3).unwrap(), 0.0);
        assert!((te_noisy_linear(1.0, 0.01).unwrap() - 4.6102).abs() < 1e-4);
        assert!((te_noisy_linear(0.2, 0.2).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(te_noisy_linear(-1.0, 0.1), Err(Error::Domain(_))));
        assert!(te_noisy_linear(1.0, 0.0).is_err());
    }

    #[test]
    fn noisy_linear_monotonicity() {
        let eps_grid: Vec<f64> = (1..=50).map(|i| i as f64 * 0.002).collect();
        let b_grid: Vec<f64> = (1..=40).map(|i| i as f64 * 0.05).collect();
        for &b in &b_grid {
            for w in eps_grid.windows(2) {
                assert!(te_noisy_linear(b, w[1]).unwrap() < te_noisy_linear(b, w[0]).unwrap());
            }
        }
        for &eps in &eps_grid {
            for w in b_grid.windows(2) {
                if w[0] > eps {
                    assert!(te_noisy_linear(w[1], eps).unwrap() > te_noisy_linear(w[0], eps).unwrap());
                }
            }
        }
    }

    #[test]
    fn upper_bound_examples() {
        let sq = Rect::square(1.0, 2.0).unwrap();
        let xy = AdditiveMap::linear(1.0, 1.0, 0.0);
        assert!((te_upper_bound(&xy, sq, 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        let ub = te_upper_bound(&xy, sq, 0.01).unwrap();
        assert!((ub - 101f64.ln()).abs() < 1e-12);
        assert!(ub >= te_noisy_linear(1.0, 0.01).unwrap());
        assert_eq!(te_upper_bound(&AdditiveMap::linear(1.0, 0.0, 0.0), sq, 0.3).unwrap(), 0.0);
        let dec = AdditiveMap::linear(1.0, -1.0, 0.0);
        assert!(matches!(te_upper_bound(&dec, sq, 0.1), Err(Error::Precondition(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn transform() -> impl Strategy<Value = Transform> {
            prop_oneof![Just(Transform::Identity), Just(Transform::Square), Just(Transform::Exp), Just(Transform::Log)]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn pushforward_and_noise_preserve_mass(
                scale in 0.05f64..4.0,
                t in transform(),
                shift in -3.0f64..3.0,
                eps in 0.01f64..1.0,
                gaussian in any::<bool>(),
            ) {
                let p = Density1D::uniform(1.0, 2.0, 256).unwrap();
                let push = pushforward_density_1d(&p, &ScaledTransform { scale, transform: t, shift }).unwrap();
                prop_assert!((push.mass() - 1.0).abs() < 1e-9);
                let z = if gaussian { NoiseSpec::gaussian(eps) } else { NoiseSpec::uniform(eps) }.unwrap();
                let blurred = convolve(&push, &z).unwrap();
                prop_assert!((blurred.mass() - 1.0).abs() < 1e-9);
                prop_assert!(blurred.values().iter().all(|v| *v >= 0.0));
            }

            #[test]
            fn entropy_shifts_by_log_scale(scale in 0.01f64..100.0, shift in -10.0f64..10.0) {
                let p = Density1D::from_pdf(0.0, 1.0, 512, |x| 2.0 * x).unwrap();
                let q = pushforward_density_1d(&p, &ScaledTransform { scale, transform: Transform::Identity, shift }).unwrap();
                prop_assert!((q.entropy() - p.entropy() - scale.ln()).abs() < 1e-9);
            }

            #[test]
            fn l1_is_a_metric(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
                let d = |s: f64| Density1D::uniform(s, s + 1.0, 17).unwrap();
                let (p, q, r) = (d(a), d(b), d(c));
                prop_assert!(p.l1_distance(&p).abs() < 1e-12);
                prop_assert!((p.l1_distance(&q) - q.l1_distance(&p)).abs() < 1e-12);
                prop_assert!(p.l1_distance(&r) <= p.l1_distance(&q) + q.l1_distance(&r) + 1e-12);
                // two unit boxes offset by s overlap on 1 - s
                prop_assert!((p.l1_distance(&q) - 2.0 * (a - b).abs().min(1.0)).abs() < 1e-9);
            }
        }
    }
}
