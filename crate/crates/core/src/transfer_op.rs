// SPDX-License-Identifier: Apache-2.0

//! Transfer operators on densities.
//!
//! * [`fp_pushforward_1d`]: the Frobenius-Perron operator of a piecewise
//!   monotone map of the line, summed over branches.
//! * [`asymmetric_pushforward`]: the operator taking a density on the
//!   `(x, y)` plane to the density of `x' = f(x, y)`, evaluated as a line
//!   integral of `rho / (|f_x| + |f_y|)` over the level sets of `f`.
//! * [`pinsker_lower_bound`] and [`small_b_approx`]: the total-variation
//!   lower bound on transfer entropy and its small-coupling expansion.
//! * Box densities and the sampled check of their `O(eps)` convergence.

use std::collections::HashMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::maps::{LineMap, PlaneMap, Rect};
use crate::oracles::{edges, Cumulative, Density1D};

const LEVEL_TOLERANCE: f64 = 1e-8;
const RANK_TOLERANCE: f64 = 1e-10;

/// Probability density on a rectangle, constant on each of `nx * ny` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    domain: Rect,
    nx: usize,
    ny: usize,
    // row-major in y: cell (i, j) at j * nx + i
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(domain: Rect, nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 || values.len() != nx * ny {
            return Err(Error::Length(format!(
                "{} cell values for a {nx} x {ny} grid",
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("density values must be finite and nonnegative".into()));
        }
        let cell = domain.area() / (nx * ny) as f64;
        let drift = (values.iter().sum::<f64>() * cell - 1.0).abs();
        if drift > 1e-8 {
            return Err(Error::Resolution { drift });
        }
        Ok(Self { domain, nx, ny, values })
    }

    pub fn uniform(domain: Rect, nx: usize, ny: usize) -> Result<Self> {
        Self::new(domain, nx, ny, vec![1.0 / domain.area(); nx * ny])
    }

    /// Midpoint samples of `pdf`, renormalized to unit mass.
    pub fn from_fn(domain: Rect, nx: usize, ny: usize, pdf: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let (dx, dy) = ((domain.x1 - domain.x0) / nx as f64, (domain.y1 - domain.y0) / ny as f64);
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                values.push(pdf(domain.x0 + (i as f64 + 0.5) * dx, domain.y0 + (j as f64 + 0.5) * dy));
            }
        }
        let total: f64 = values.iter().sum::<f64>() * dx * dy;
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Domain("density has no mass on the domain".into()));
        }
        values.iter_mut().for_each(|v| *v /= total);
        Self::new(domain, nx, ny, values)
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    fn spacing(&self) -> (f64, f64) {
        (
            (self.domain.x1 - self.domain.x0) / self.nx as f64,
            (self.domain.y1 - self.domain.y0) / self.ny as f64,
        )
    }

    pub fn density_at(&self, x: f64, y: f64) -> f64 {
        if !self.domain.contains(x, y) {
            return 0.0;
        }
        let (dx, dy) = self.spacing();
        let i = (((x - self.domain.x0) / dx) as usize).min(self.nx - 1);
        let j = (((y - self.domain.y0) / dy) as usize).min(self.ny - 1);
        self.values[j * self.nx + i]
    }

    pub fn mass(&self) -> f64 {
        let (dx, dy) = self.spacing();
        self.values.iter().sum::<f64>() * dx * dy
    }

    /// Density of `x` alone.
    pub fn x_marginal(&self) -> Result<Density1D> {
        let (dx, dy) = self.spacing();
        let masses: Vec<f64> = (0..self.nx)
            .map(|i| (0..self.ny).map(|j| self.values[j * self.nx + i]).sum::<f64>() * dx * dy)
            .collect();
        Density1D::from_masses(self.domain.x0, self.domain.x1, &masses, 1e-8)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpPushforward {
    pub density: Density1D,
    /// Interior points where `f'` vanishes.
    pub critical_points: Vec<f64>,
    pub warnings: Vec<String>,
}

fn bisect(g: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut ga = g(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a.min(b) || m >= a.max(b) {
            break;
        }
        let gm = g(m);
        if gm == 0.0 {
            return m;
        }
        if (gm < 0.0) == (ga < 0.0) {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Density of `f(X)` for `X ~ rho`, one branch of `f` at a time.
///
/// Branches are split at sign changes of `f'` located on a sampling grid
/// eight times finer than `rho` and refined by bisection. Every output cell
/// receives the exact `rho`-mass of its preimage, so mass is conserved even
/// where `rho / |f'|` is singular at a critical value.
pub fn fp_pushforward_1d(rho: &Density1D, f: &dyn LineMap) -> Result<FpPushforward> {
    let (lo, hi) = (rho.lo(), rho.hi());
    let samples = 8 * rho.cells();
    let xs: Vec<f64> = edges(lo, hi, samples);
    let ds: Vec<f64> = xs.iter().map(|&x| f.derivative(x)).collect();
    if let Some(i) = xs.iter().zip(&ds).position(|(x, d)| !d.is_finite() || !f.value(*x).is_finite()) {
        return Err(Error::Domain(format!("map is not finite at x = {}", xs[i])));
    }
    let flat = ds.iter().filter(|d| **d == 0.0).count();
    if flat as f64 > 0.01 * ds.len() as f64 {
        return Err(Error::SingularMap(format!(
            "derivative vanishes on {:.1}% of the support",
            100.0 * flat as f64 / ds.len() as f64
        )));
    }
    let mut critical = Vec::new();
    for i in 0..samples {
        let (d0, d1) = (ds[i], ds[i + 1]);
        if d0 == 0.0 && i > 0 {
            critical.push(xs[i]);
        } else if d0 * d1 < 0.0 {
            critical.push(bisect(|x| f.derivative(x), xs[i], xs[i + 1]));
        }
    }
    critical.retain(|&c| c > lo && c < hi);
    let mut breaks = vec![lo];
    breaks.extend(&critical);
    breaks.push(hi);

    let ends: Vec<f64> = breaks.iter().map(|&x| f.value(x)).collect();
    let u_lo = ends.iter().copied().fold(f64::INFINITY, f64::min);
    let u_hi = ends.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(u_hi > u_lo) {
        return Err(Error::SingularMap("image of the support is a single point".into()));
    }
    let cum = Cumulative::new(rho);
    let out_edges = edges(u_lo, u_hi, rho.cells());
    // mass of {x : f(x) < u}, summed over branches
    let below = |u: f64| -> f64 {
        let mut acc = 0.0;
        for (w, fw) in breaks.windows(2).zip(ends.windows(2)) {
            let (p, q, fp, fq) = (w[0], w[1], fw[0], fw[1]);
            let (m_lo, m_hi) = (fp.min(fq), fp.max(fq));
            let branch_mass = cum.cdf(q) - cum.cdf(p);
            if u <= m_lo {
                continue;
            }
            if u >= m_hi {
                acc += branch_mass;
                continue;
            }
            let x = bisect(|x| f.value(x) - u, p, q);
            acc += if fq > fp { cum.cdf(x) - cum.cdf(p) } else { cum.cdf(q) - cum.cdf(x) };
        }
        acc
    };
    let c: Vec<f64> = out_edges.par_iter().map(|&u| below(u)).collect();
    let masses: Vec<f64> = c.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    let density = Density1D::from_masses(u_lo, u_hi, &masses, 1e-6)?;
    let warnings = critical
        .iter()
        .map(|&x| {
            format!(
                "critical point at x = {x:.6}: density is singular near x' = {:.6}, cell masses stay exact",
                f.value(x)
            )
        })
        .collect();
    Ok(FpPushforward { density, critical_points: critical, warnings })
}

/// Polyline pieces of `{(x, y) : f(x, y) = value}` inside the grid domain.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    pub value: f64,
    pub chains: Vec<Vec<(f64, f64)>>,
}

/// Weight applied along a level set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    /// `1 / (|f_x| + |f_y|)`
    Manhattan,
    /// `1 / |grad f|`, the coarea factor.
    Coarea,
}

impl Kernel {
    #[inline]
    fn weight(self, fx: f64, fy: f64) -> f64 {
        match self {
            Kernel::Manhattan => 1.0 / (fx.abs() + fy.abs()),
            Kernel::Coarea => 1.0 / fx.hypot(fy),
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manhattan" | "l1" => Ok(Kernel::Manhattan),
            "coarea" => Ok(Kernel::Coarea),
            other => Err(Error::Argument(format!("unknown kernel `{other}`"))),
        }
    }
}

struct NodeField<'a> {
    f: &'a dyn PlaneMap,
    domain: Rect,
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    values: Vec<f64>,
}

impl<'a> NodeField<'a> {
    fn new(f: &'a dyn PlaneMap, domain: Rect, nx: usize, ny: usize) -> Result<Self> {
        let dx = (domain.x1 - domain.x0) / nx as f64;
        let dy = (domain.y1 - domain.y0) / ny as f64;
        let values: Vec<f64> = (0..(nx + 1) * (ny + 1))
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k % (nx + 1), k / (nx + 1));
                f.value(domain.x0 + i as f64 * dx, domain.y0 + j as f64 * dy)
            })
            .collect();
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            let (i, j) = (k % (nx + 1), k / (nx + 1));
            return Err(Error::Domain(format!(
                "map is not finite at ({}, {})",
                domain.x0 + i as f64 * dx,
                domain.y0 + j as f64 * dy
            )));
        }
        Ok(Self { f, domain, nx, ny, dx, dy, values })
    }

    fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (
            if i == self.nx { self.domain.x1 } else { self.domain.x0 + i as f64 * self.dx },
            if j == self.ny { self.domain.y1 } else { self.domain.y0 + j as f64 * self.dy },
        )
    }

    fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * (self.nx + 1) + i]
    }

    fn range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    }

    /// Point where the level crosses the edge between two nodes.
    fn crossing(&self, a: (usize, usize), b: (usize, usize), level: f64) -> (f64, f64) {
        let (pa, pb) = (self.node(a.0, a.1), self.node(b.0, b.1));
        let (va, vb) = (self.value(a.0, a.1) - level, self.value(b.0, b.1) - level);
        let at = |t: f64| (pa.0 + t * (pb.0 - pa.0), pa.1 + t * (pb.1 - pa.1));
        if va == 0.0 {
            return pa;
        }
        if vb == 0.0 {
            return pb;
        }
        let t0 = va / (va - vb);
        let p = at(t0);
        if (self.f.value(p.0, p.1) - level).abs() <= LEVEL_TOLERANCE {
            return p;
        }
        let t = bisect(
            |t| {
                let q = at(t);
                self.f.value(q.0, q.1) - level
            },
            0.0,
            1.0,
        );
        at(t)
    }

    /// Marching-squares segments of one level, each tagged with its cell
    /// and the ids of the two grid edges it joins.
    fn segments(&self, level: f64) -> Vec<Segment> {
        let mut out = Vec::new();
        let stride = self.nx + 1;
        let hid = |i: usize, j: usize| 2 * (j * stride + i);
        let vid = |i: usize, j: usize| 2 * (j * stride + i) + 1;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
                let above: Vec<bool> = corners.iter().map(|&(a, b)| self.value(a, b) >= level).collect();
                let mask = above.iter().enumerate().fold(0u8, |m, (k, &u)| m | ((u as u8) << k));
                if mask == 0 || mask == 15 {
                    continue;
                }
                // edges: 0 bottom, 1 right, 2 top, 3 left
                let edge = |e: usize| -> (usize, (f64, f64)) {
                    let (a, b, id) = match e {
                        0 => (corners[0], corners[1], hid(i, j)),
                        1 => (corners[1], corners[2], vid(i + 1, j)),
                        2 => (corners[3], corners[2], hid(i, j + 1)),
                        _ => (corners[0], corners[3], vid(i, j)),
                    };
                    (id, self.crossing(a, b, level))
                };
                let crossed: Vec<usize> = (0..4).filter(|&e| above[e] != above[(e + 1) % 4]).collect();
                let pairs: Vec<(usize, usize)> = if crossed.len() == 2 {
                    vec![(crossed[0], crossed[1])]
                } else {
                    // saddle: decide by the value at the cell center
                    let (cx, cy) = (
                        self.domain.x0 + (i as f64 + 0.5) * self.dx,
                        self.domain.y0 + (j as f64 + 0.5) * self.dy,
                    );
                    let center_above = self.f.value(cx, cy) >= level;
                    if center_above == above[0] {
                        vec![(0, 1), (2, 3)]
                    } else {
                        vec![(3, 0), (1, 2)]
                    }
                };
                for (e1, e2) in pairs {
                    let (a, b) = (edge(e1), edge(e2));
                    out.push(Segment { cell: (i, j), ids: (a.0, b.0), p: a.1, q: b.1 });
                }
            }
        }
        out
    }
}

struct Segment {
    cell: (usize, usize),
    ids: (usize, usize),
    p: (f64, f64),
    q: (f64, f64),
}

fn chain_segments(segs: &[Segment]) -> Vec<Vec<(f64, f64)>> {
    let mut by_id: HashMap<usize, Vec<usize>> = HashMap::new();
    for (k, s) in segs.iter().enumerate() {
        by_id.entry(s.ids.0).or_default().push(k);
        by_id.entry(s.ids.1).or_default().push(k);
    }
    let mut used = vec![false; segs.len()];
    let mut chains = Vec::new();
    let mut starts: Vec<usize> = by_id.iter().filter(|(_, v)| v.len() == 1).map(|(id, _)| *id).collect();
    starts.sort_unstable();
    let walk = |start_seg: usize, start_id: usize, used: &mut Vec<bool>| {
        let mut chain = Vec::new();
        let (mut k, mut from) = (start_seg, start_id);
        loop {
            used[k] = true;
            let s = &segs[k];
            let (here, there, next_id) = if s.ids.0 == from { (s.p, s.q, s.ids.1) } else { (s.q, s.p, s.ids.0) };
            if chain.is_empty() {
                chain.push(here);
            }
            chain.push(there);
            match by_id[&next_id].iter().find(|&&m| !used[m]) {
                Some(&m) => {
                    k = m;
                    from = next_id;
                }
                None => break,
            }
        }
        chain
    };
    for id in starts {
        let k = by_id[&id][0];
        if !used[k] {
            chains.push(walk(k, id, &mut used));
        }
    }
    for k in 0..segs.len() {
        if !used[k] {
            chains.push(walk(k, segs[k].ids.0, &mut used));
        }
    }
    chains
}

/// Level set of `f` at `value`, traced on an `nx x ny` grid over `domain`.
pub fn extract_level_set(
    f: &dyn PlaneMap,
    domain: Rect,
    nx: usize,
    ny: usize,
    value: f64,
) -> Result<LevelSet> {
    let field = NodeField::new(f, domain, nx, ny)?;
    Ok(LevelSet { value, chains: chain_segments(&field.segments(value)) })
}

/// Equally spaced `x'` levels: the midpoints of `count` cells on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelGrid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl LevelGrid {
    pub fn values(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.count as f64;
        (0..self.count).map(|i| self.lo + (i as f64 + 0.5) * w).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymmetricPushforward {
    /// Output density after renormalization to unit mass.
    pub density: Density1D,
    /// Level-set integral at each level before renormalization.
    pub raw: Vec<f64>,
    /// `sum(raw) * level spacing`; the renormalization divides by it.
    pub raw_mass: f64,
    pub kernel: Kernel,
}

fn level_integral(field: &NodeField, rho: &DensityGrid, level: f64, kernel: Kernel) -> Result<f64> {
    let mut total = 0.0;
    for s in field.segments(level) {
        for &(x, y) in [s.p, s.q].iter() {
            let (fx, fy) = field.f.partials(x, y);
            if fx.abs() < RANK_TOLERANCE && fy.abs() < RANK_TOLERANCE {
                return Err(Error::DegeneratePoint {
                    x,
                    y,
                    reason: format!("both partial derivatives vanish on the level set {level}"),
                });
            }
        }
        let len = (s.q.0 - s.p.0).hypot(s.q.1 - s.p.1);
        if len == 0.0 {
            continue;
        }
        let (mx, my) = (0.5 * (s.p.0 + s.q.0), 0.5 * (s.p.1 + s.q.1));
        let (fx, fy) = field.f.partials(mx, my);
        let r = rho.values[s.cell.1 * rho.nx + s.cell.0];
        total += r * len * kernel.weight(fx, fy);
    }
    Ok(total)
}

/// Density of `x' = f(x, y)` for `(x, y) ~ rho`.
///
/// With `levels = None` the levels span the range of `f` on the grid nodes
/// in as many cells as the grid has columns.
pub fn asymmetric_pushforward(
    rho: &DensityGrid,
    f: &dyn PlaneMap,
    levels: Option<LevelGrid>,
    kernel: Kernel,
) -> Result<AsymmetricPushforward> {
    let field = NodeField::new(f, rho.domain, rho.nx, rho.ny)?;
    let levels = levels.unwrap_or_else(|| {
        let (lo, hi) = field.range();
        LevelGrid { lo, hi, count: rho.nx }
    });
    if !(levels.hi > levels.lo) || levels.count == 0 {
        return Err(Error::SingularMap("map is constant on the domain".into()));
    }
    let raw: Vec<f64> = levels
        .values()
        .par_iter()
        .map(|&v| level_integral(&field, rho, v, kernel))
        .collect::<Result<_>>()?;
    let w = (levels.hi - levels.lo) / levels.count as f64;
    let raw_mass: f64 = raw.iter().sum::<f64>() * w;
    if !(raw_mass > 0.0) {
        return Err(Error::SingularMap("no level set meets the support of rho".into()));
    }
    let masses: Vec<f64> = raw.iter().map(|r| r * w / raw_mass).collect();
    let density = Density1D::from_masses(levels.lo, levels.hi, &masses, 1e-6)?;
    Ok(AsymmetricPushforward { density, raw, raw_mass, kernel })
}

/// Uniform density of height `1 / (2 eps |f'(x0)|)` around `f(x0)`.
pub fn conditional_density_box_1d(f: &dyn LineMap, x0: f64, eps: f64) -> Result<Density1D> {
    check_eps(eps)?;
    let d = f.derivative(x0).abs();
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::DegeneratePoint {
            x: x0,
            y: f64::NAN,
            reason: "f' vanishes at the base point".into(),
        });
    }
    let c = f.value(x0);
    Density1D::uniform(c - eps * d, c + eps * d, 1)
}

/// Uniform density of height `1 / (2 eps (|f_x| + |f_y|))` around `f(x0, y0)`.
pub fn conditional_density_box_2d(f: &dyn PlaneMap, x0: f64, y0: f64, eps: f64) -> Result<Density1D> {
    check_eps(eps)?;
    let (fx, fy) = f.partials(x0, y0);
    let s = fx.abs() + fy.abs();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::DegeneratePoint {
            x: x0,
            y: y0,
            reason: "both partial derivatives vanish at the base point".into(),
        });
    }
    let c = f.value(x0, y0);
    Density1D::uniform(c - eps * s, c + eps * s, 1)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("eps must be positive, got {eps}")))
    }
}

/// Settings for the sampled box-limit check.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxLimitParams {
    pub eps: Vec<f64>,
    pub samples: usize,
    pub bins: usize,
    pub seed: u64,
}

impl Default for BoxLimitParams {
    fn default() -> Self {
        Self { eps: vec![0.1, 0.05, 0.025], samples: 2_000_000, bins: 10, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxLimitCheck {
    pub eps: Vec<f64>,
    /// `L1` distance between the sampled conditional density and the box.
    pub l1: Vec<f64>,
    /// Least-squares slope of `ln l1` against `ln eps`.
    pub slope: f64,
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

// standard normal reference density, sampled inside [c - eps, c + eps]
fn sample_normal_in(rng: &mut ChaCha8Rng, c: f64, eps: f64) -> f64 {
    let peak = if c.abs() <= eps { 0.0 } else { (c.abs() - eps).powi(2) };
    loop {
        let x = c + eps * (2.0 * rng.random::<f64>() - 1.0);
        if rng.random::<f64>() <= (-(x * x - peak) / 2.0).exp() {
            return x;
        }
    }
}

fn l1_against_box(values: &[f64], target: &Density1D, bins: usize) -> f64 {
    let (lo, hi) = (target.lo(), target.hi());
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    let mut outside = 0usize;
    for &v in values {
        if v < lo || v >= hi {
            outside += 1;
        } else {
            counts[(((v - lo) / w) as usize).min(bins - 1)] += 1;
        }
    }
    let n = values.len() as f64;
    let h = target.values()[0];
    counts.iter().map(|&c| (c as f64 / (n * w) - h).abs() * w).sum::<f64>() + outside as f64 / n
}

/// Sampled `L1` error of the box density for `f(X)`, `X` drawn from a
/// standard normal restricted to `(x0 - eps, x0 + eps)`.
pub fn box_limit_1d(f: &dyn LineMap, x0: f64, params: &BoxLimitParams) -> Result<BoxLimitCheck> {
    let mut l1 = Vec::with_capacity(params.eps.len());
    for (k, &eps) in params.eps.iter().enumerate() {
        let target = conditional_density_box_1d(f, x0, eps)?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(k as u64);
        let v: Vec<f64> = (0..params.samples)
            .map(|_| f.value(sample_normal_in(&mut rng, x0, eps)))
            .collect();
        l1.push(l1_against_box(&v, &target, params.bins));
    }
    Ok(BoxLimitCheck { slope: loglog_slope(&params.eps, &l1), eps: params.eps.clone(), l1 })
}

/// Sampled `L1` error of the box density for `f(X, Y)`, with `X` and `Y`
/// independent standard normals restricted to the square of half-width
/// `eps` around `(x0, y0)`.
pub fn box_limit_2d(f: &dyn PlaneMap, x0: f64, y0: f64, params: &BoxLimitParams) -> Result<BoxLimitCheck> {
    let mut l1 = Vec::with_capacity(params.eps.len());
    for (k, &eps) in params.eps.iter().enumerate() {
        let target = conditional_density_box_2d(f, x0, y0, eps)?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(k as u64);
        let v: Vec<f64> = (0..params.samples)
            .map(|_| {
                let x = sample_normal_in(&mut rng, x0, eps);
                let y = sample_normal_in(&mut rng, y0, eps);
                f.value(x, y)
            })
            .collect();
        l1.push(l1_against_box(&v, &target, params.bins));
    }
    Ok(BoxLimitCheck { slope: loglog_slope(&params.eps, &l1), eps: params.eps.clone(), l1 })
}

struct GradientStats {
    integral: f64,
    mean_fx: f64,
    mean_fy: f64,
}

fn gradient_stats(f: &dyn PlaneMap, rho: &DensityGrid) -> Result<GradientStats> {
    let (nx, ny) = (rho.nx, rho.ny);
    let (dx, dy) = rho.spacing();
    let d = rho.domain;
    let rows: Vec<(f64, f64, f64, usize)> = (0..ny)
        .into_par_iter()
        .map(|j| {
            let y = d.y0 + (j as f64 + 0.5) * dy;
            let mut acc = (0.0, 0.0, 0.0, 0usize);
            for i in 0..nx {
                let x = d.x0 + (i as f64 + 0.5) * dx;
                let (fx, fy) = f.partials(x, y);
                let (ax, ay) = (fx.abs(), fy.abs());
                acc.1 += ax;
                acc.2 += ay;
                if ax < RANK_TOLERANCE {
                    acc.3 += 1;
                    continue;
                }
                let r = rho.values[j * nx + i];
                acc.0 += (1.0 / (ax + ay) - 1.0 / ax).abs() * r * dx * dy;
            }
            acc
        })
        .collect();
    let (mut integral, mut sx, mut sy, mut flat) = (0.0, 0.0, 0.0, 0usize);
    for r in rows {
        integral += r.0;
        sx += r.1;
        sy += r.2;
        flat += r.3;
    }
    if !(integral.is_finite() && sx.is_finite() && sy.is_finite()) {
        return Err(Error::Domain("map derivatives are not finite on the domain".into()));
    }
    let cells = (nx * ny) as f64;
    if flat as f64 > 0.01 * cells {
        return Err(Error::SingularMap(format!(
            "|df/dx| < 1e-10 on {:.1}% of the quadrature cells",
            100.0 * flat as f64 / cells
        )));
    }
    Ok(GradientStats { integral, mean_fx: sx / cells, mean_fy: sy / cells })
}

/// `1/2 (int |1/(|f_x| + |f_y|) - 1/|f_x|| rho)^2` with `rho` uniform on
/// `domain`, by the midpoint rule on `quad x quad` cells.
pub fn pinsker_lower_bound(f: &dyn PlaneMap, domain: Rect, quad: usize) -> Result<f64> {
    pinsker_lower_bound_weighted(f, &DensityGrid::uniform(domain, quad, quad)?)
}

/// [`pinsker_lower_bound`] against an arbitrary reference density.
pub fn pinsker_lower_bound_weighted(f: &dyn PlaneMap, rho: &DensityGrid) -> Result<f64> {
    let s = gradient_stats(f, rho)?;
    Ok(0.5 * s.integral * s.integral)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallB {
    pub value: f64,
    pub mean_abs_fx: f64,
    pub mean_abs_fy: f64,
    pub warning: Option<String>,
}

/// `Vol/2 * <|f_y|>^2 / <|f_x|>^4`, averages over `domain`.
pub fn small_b_approx(f: &dyn PlaneMap, domain: Rect, quad: usize) -> Result<SmallB> {
    let s = gradient_stats(f, &DensityGrid::uniform(domain, quad, quad)?)?;
    let warning = (s.mean_fy >= 0.1 * s.mean_fx).then(|| {
        format!(
            "<|f_y|> = {:.4} is not small against <|f_x|> = {:.4}; expansion unreliable",
            s.mean_fy, s.mean_fx
        )
    });
    Ok(SmallB {
        value: 0.5 * domain.area() * s.mean_fy * s.mean_fy / s.mean_fx.powi(4),
        mean_abs_fx: s.mean_fx,
        mean_abs_fy: s.mean_fy,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{AdditiveMap, FnLineMap, FnPlaneMap, ScaledTransform, Transform};
    use crate::oracles::{convolve, NoiseSpec};

    fn line(scale: f64, t: Transform) -> ScaledTransform {
        ScaledTransform { scale, transform: t, shift: 0.0 }
    }

    #[test]
    fn fp_linear_and_identity() {
        let u = Density1D::uniform(0.0, 1.0, 256).unwrap();
        let out = fp_pushforward_1d(&u, &line(2.0, Transform::Identity)).unwrap();
        assert_eq!((out.density.lo(), out.density.hi()), (0.0, 2.0));
        assert!(out.density.values().iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert!(out.warnings.is_empty());

        let rho = Density1D::from_cdf(0.0, 1.0, 300, |x| x * x * (3.0 - 2.0 * x)).unwrap();
        let id = fp_pushforward_1d(&rho, &line(1.0, Transform::Identity)).unwrap();
        for (a, b) in id.density.values().iter().zip(rho.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fp_square_on_unit_interval() {
        let u = Density1D::uniform(0.0, 1.0, 1024).unwrap();
        let out = fp_pushforward_1d(&u, &line(1.0, Transform::Square)).unwrap();
        let exact = Density1D::from_cdf(0.0, 1.0, 1024, f64::sqrt).unwrap();
        assert!(out.density.l1_distance(&exact) < 1e-10);
        assert!((out.density.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fp_two_branches_warns() {
        // x^2 on [-1, 1]: both branches land on [0, 1]
        let u = Density1D::uniform(-1.0, 1.0, 512).unwrap();
        let out = fp_pushforward_1d(&u, &line(1.0, Transform::Square)).unwrap();
        assert_eq!(out.critical_points.len(), 1);
        assert!(out.critical_points[0].abs() < 1e-12);
        assert_eq!(out.warnings.len(), 1);
        let exact = Density1D::from_cdf(0.0, 1.0, 512, f64::sqrt).unwrap();
        assert!(out.density.l1_distance(&exact) < 1e-10);

        // logistic map keeps mass with an interior fold
        let logistic = FnLineMap { f: |x: f64| 4.0 * x * (1.0 - x), df: |x: f64| 4.0 - 8.0 * x };
        let out = fp_pushforward_1d(&Density1D::uniform(0.0, 1.0, 400).unwrap(), &logistic).unwrap();
        assert!((out.density.mass() - 1.0).abs() < 1e-12);
        assert!((out.critical_points[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn fp_constant_map_is_singular() {
        let c = FnLineMap { f: |_: f64| 3.0, df: |_: f64| 0.0 };
        assert!(matches!(
            fp_pushforward_1d(&Density1D::uniform(0.0, 1.0, 10).unwrap(), &c),
            Err(Error::SingularMap(_))
        ));
    }

    #[test]
    fn level_sets_of_linear_maps() {
        let f = AdditiveMap::linear(1.0, 1.0, 0.0);
        let ls = extract_level_set(&f, Rect::unit(), 16, 16, 0.7).unwrap();
        assert_eq!(ls.chains.len(), 1);
        let chain = &ls.chains[0];
        for &(x, y) in chain {
            assert!((x + y - 0.7).abs() <= 1e-8);
            assert!(Rect::unit().contains(x, y));
        }
        let len: f64 = chain.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum();
        assert!((len - 0.7 * 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn level_set_of_circle_closes() {
        let f = FnPlaneMap {
            f: |x: f64, y: f64| x * x + y * y,
            grad: |x: f64, y: f64| (2.0 * x, 2.0 * y),
        };
        let d = Rect::square(-1.0, 1.0).unwrap();
        let ls = extract_level_set(&f, d, 64, 64, 0.25).unwrap();
        assert_eq!(ls.chains.len(), 1);
        let c = &ls.chains[0];
        assert_eq!(c.first(), c.last());
        for &(x, y) in c {
            assert!((x * x + y * y - 0.25).abs() <= 1e-8);
        }
        let len: f64 = c.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum();
        assert!((len - std::f64::consts::PI).abs() < 1e-3);
    }

    #[test]
    fn asymmetric_axis_maps() {
        let rho = DensityGrid::uniform(Rect::unit(), 64, 64).unwrap();
        for f in [AdditiveMap::linear(1.0, 0.0, 0.0), AdditiveMap::linear(0.0, 1.0, 0.0)] {
            let out = asymmetric_pushforward(&rho, &f, None, Kernel::Manhattan).unwrap();
            assert!(out.density.values().iter().all(|v| (v - 1.0).abs() < 1e-9));
            assert!((out.raw_mass - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn asymmetric_sum_is_triangle() {
        let rho = DensityGrid::uniform(Rect::unit(), 128, 128).unwrap();
        let f = AdditiveMap::linear(1.0, 1.0, 0.0);
        let levels = LevelGrid { lo: 0.0, hi: 2.0, count: 256 };
        let manhattan = asymmetric_pushforward(&rho, &f, Some(levels), Kernel::Manhattan).unwrap();
        let coarea = asymmetric_pushforward(&rho, &f, Some(levels), Kernel::Coarea).unwrap();
        let tri = convolve(&Density1D::uniform(0.0, 1.0, 512).unwrap(), &NoiseSpec::uniform(1.0).unwrap())
            .unwrap()
            .shifted(0.5);
        assert!(manhattan.density.l1_distance(&tri) < 0.01);
        assert!(coarea.density.l1_distance(&tri) < 0.01);
        assert!((coarea.raw_mass - 1.0).abs() < 1e-6);
        assert!((manhattan.raw_mass - 0.5f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn asymmetric_degenerate_matches_fp() {
        let d = Rect::unit();
        let rho = DensityGrid::from_fn(d, 200, 200, |x, y| (1.0 + x) * (2.0 - y)).unwrap();
        let g = |x: f64| x * x + 0.5 * x;
        let f2 = FnPlaneMap { f: move |x: f64, _y: f64| g(x), grad: |x: f64, _y: f64| (2.0 * x + 0.5, 0.0) };
        let f1 = FnLineMap { f: g, df: |x: f64| 2.0 * x + 0.5 };
        let fp = fp_pushforward_1d(&rho.x_marginal().unwrap(), &f1).unwrap();
        let levels = LevelGrid { lo: fp.density.lo(), hi: fp.density.hi(), count: fp.density.cells() };
        let asym = asymmetric_pushforward(&rho, &f2, Some(levels), Kernel::Manhattan).unwrap();
        assert!(asym.density.l1_distance(&fp.density) < 1e-3);
    }

    #[test]
    fn asymmetric_rank_deficiency() {
        let f = FnPlaneMap {
            f: |x: f64, _y: f64| (x - 0.5).powi(3),
            grad: |x: f64, _y: f64| (3.0 * (x - 0.5).powi(2), 0.0),
        };
        let rho = DensityGrid::uniform(Rect::unit(), 4, 4).unwrap();
        // the level x' = 0 runs along the grid column x = 0.5, where f_x = 0
        let levels = LevelGrid { lo: -1e-3, hi: 1e-3, count: 1 };
        assert!(matches!(
            asymmetric_pushforward(&rho, &f, Some(levels), Kernel::Manhattan),
            Err(Error::DegeneratePoint { .. })
        ));
    }

    #[test]
    fn box_densities() {
        let b = conditional_density_box_1d(&line(2.0, Transform::Identity), 1.0, 0.1).unwrap();
        assert!((b.lo() - 1.8).abs() < 1e-12 && (b.hi() - 2.2).abs() < 1e-12);
        assert!((b.values()[0] - 2.5).abs() < 1e-9);
        let b2 = conditional_density_box_2d(&AdditiveMap::linear(1.0, 1.0, 0.0), 0.0, 0.0, 0.1).unwrap();
        assert!((b2.lo() + 0.2).abs() < 1e-12 && (b2.values()[0] - 2.5).abs() < 1e-9);
        let bx = conditional_density_box_2d(&AdditiveMap::linear(2.0, 0.0, 0.0), 1.0, 5.0, 0.1).unwrap();
        assert_eq!(bx, b);
        assert!(matches!(
            conditional_density_box_1d(&line(1.0, Transform::Square), 0.0, 0.1),
            Err(Error::DegeneratePoint { .. })
        ));
    }

    #[test]
    fn box_limit_one_dimensional_rate() {
        let params = BoxLimitParams { samples: 400_000, ..Default::default() };
        let check = box_limit_1d(&line(2.0, Transform::Identity), 2.0, &params).unwrap();
        assert!((0.7..=1.3).contains(&check.slope), "{check:?}");
    }

    #[test]
    fn pinsker_examples() {
        let d = Rect::unit();
        assert_eq!(pinsker_lower_bound(&AdditiveMap::linear(1.0, 0.0, 0.0), d, 64).unwrap(), 0.0);
        let b: f64 = 0.01;
        let p = pinsker_lower_bound(&AdditiveMap::linear(1.0, b, 0.0), d, 256).unwrap();
        let exact = 0.5 * (b / (1.0 + b)).powi(2);
        assert!((p - exact).abs() < 1e-12);
        assert!((p - 0.5 * b * b).abs() < 0.1 * 0.5 * b * b);
        let s = small_b_approx(&AdditiveMap::linear(1.0, b, 0.0), d, 256).unwrap();
        assert!((s.value - 5e-5).abs() < 1e-15);
        assert!(s.warning.is_none());
        assert!((s.value - p).abs() < 0.02 * s.value);
        let s2 = small_b_approx(&AdditiveMap::linear(2.0, b, 0.0), d, 64).unwrap();
        assert!((s2.value - 3.125e-6).abs() < 1e-15);
        assert!(small_b_approx(&AdditiveMap::linear(1.0, 0.5, 0.0), d, 16).unwrap().warning.is_some());
        assert!(matches!(
            pinsker_lower_bound(&AdditiveMap::linear(0.0, 1.0, 0.0), d, 16),
            Err(Error::SingularMap(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn fp_pushforward_conserves_mass(r in 1.0f64..4.0, cells in 32usize..256) {
                // logistic family: one critical point at 1/2
                let f = FnLineMap { f: move |x: f64| r * x * (1.0 - x), df: move |x: f64| r * (1.0 - 2.0 * x) };
                let rho = Density1D::from_pdf(0.0, 1.0, cells, |x| 1.5 - x).unwrap();
                let out = fp_pushforward_1d(&rho, &f).unwrap();
                prop_assert!((out.density.mass() - 1.0).abs() < 1e-9);
                prop_assert_eq!(out.critical_points.len(), 1);
                prop_assert!((out.critical_points[0] - 0.5).abs() < 1e-9);
            }

            #[test]
            fn level_set_pushforward_is_normalized(a in 0.2f64..3.0, b in 0.2f64..3.0, coarea in any::<bool>()) {
                let map = AdditiveMap::linear(a, b, 0.0);
                let rho = DensityGrid::uniform(Rect::unit(), 24, 24).unwrap();
                let kernel = if coarea { Kernel::Coarea } else { Kernel::Manhattan };
                let push = asymmetric_pushforward(&rho, &map, None, kernel).unwrap();
                prop_assert!((push.density.mass() - 1.0).abs() < 1e-9);
                prop_assert!(push.raw_mass > 0.0);
            }
        }
    }
}
