// SPDX-License-Identifier: Apache-2.0

//! Time series and the point clouds built from them.
//!
//! A [`PointCloud`] is the common currency of the estimators: the delay/join
//! constructions `(x, x')` and `(x, y, x')` are produced by [`join`], where
//! `x'` is `x` shifted forward by one sample.

use std::fmt;

use crate::error::{Error, Result};

/// An ordered, finite, scalar sample sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    name: String,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if values.len() < 2 {
            return Err(Error::Length(format!(
                "series `{name}` has {} samples, need at least 2",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { name, index });
        }
        Ok(Self { name, values })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// `N` points in `R^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    data: Vec<f64>,
    provenance: String,
}

impl PointCloud {
    /// Builds a cloud from row-major coordinates.
    pub fn new(dim: usize, data: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("cloud dimension must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Length(format!(
                "{} coordinates do not split into rows of {dim}",
                data.len()
            )));
        }
        if data.is_empty() {
            return Err(Error::Length("empty point cloud".into()));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                name: "cloud".into(),
                index: index / dim,
            });
        }
        Ok(Self {
            dim,
            data,
            provenance: provenance.into(),
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], provenance: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Length(format!(
                    "row {i} has {} coordinates, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data, provenance)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.points().map(|p| p[c]).collect()
    }

    /// Per-coordinate (min, max).
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(f64::INFINITY, f64::NEG_INFINITY); self.dim];
        for p in self.points() {
            for (bc, &v) in b.iter_mut().zip(p) {
                bc.0 = bc.0.min(v);
                bc.1 = bc.1.max(v);
            }
        }
        b
    }

    /// The first `rows` points.
    pub fn truncated(&self, rows: usize) -> Result<Self> {
        if rows == 0 || rows > self.len() {
            return Err(Error::Length(format!(
                "cannot truncate {} rows to {rows}",
                self.len()
            )));
        }
        Self::new(
            self.dim,
            self.data[..rows * self.dim].to_vec(),
            format!("{} | first {rows}", self.provenance),
        )
    }

    /// Applies `v -> scale * v + shift` to every coordinate.
    pub fn affine(&self, scale: f64, shift: f64) -> Result<Self> {
        Self::new(
            self.dim,
            self.data.iter().map(|v| scale * v + shift).collect(),
            format!("{} | affine(scale={scale}, shift={shift})", self.provenance),
        )
    }
}

/// One coordinate of a joined cloud: a series label and a forward lag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Role {
    pub label: String,
    pub lag: usize,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lag == 0 {
            write!(f, "{}", self.label)
        } else {
            write!(f, "{}[+{}]", self.label, self.lag)
        }
    }
}

/// Ordered coordinate roles defining a joined cloud.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinSpec {
    roles: Vec<Role>,
}

impl JoinSpec {
    pub fn new<S: Into<String>>(roles: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let roles: Vec<Role> = roles
            .into_iter()
            .map(|(label, lag)| Role {
                label: label.into(),
                lag,
            })
            .collect();
        if roles.is_empty() {
            return Err(Error::Argument("join spec has no roles".into()));
        }
        Ok(Self { roles })
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn max_lag(&self) -> usize {
        self.roles.iter().map(|r| r.lag).max().unwrap_or(0)
    }

    /// `(x)`
    pub fn present(x: &str) -> Self {
        Self::new([(x, 0)]).expect("non-empty")
    }

    /// `(x, x')`
    pub fn with_future(x: &str) -> Self {
        Self::new([(x, 0), (x, 1)]).expect("non-empty")
    }

    /// `(x, y)`
    pub fn pair(x: &str, y: &str) -> Self {
        Self::new([(x, 0), (y, 0)]).expect("non-empty")
    }

    /// `(x, y, x')`
    pub fn pair_with_future(x: &str, y: &str) -> Self {
        Self::new([(x, 0), (y, 0), (x, 1)]).expect("non-empty")
    }
}

impl fmt::Display for JoinSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, r) in self.roles.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{r}")?;
        }
        write!(f, ")")
    }
}

/// Row `t` of the result is `(s_1[t + lag_1], ..., s_k[t + lag_k])`.
///
/// All referenced series must have the same length `L`; the cloud has
/// `L - max_lag` rows.
pub fn join(series: &[TimeSeries], spec: &JoinSpec) -> Result<PointCloud> {
    let mut columns = Vec::with_capacity(spec.roles.len());
    for role in &spec.roles {
        let s = series
            .iter()
            .find(|s| s.name == role.label)
            .ok_or_else(|| Error::UnknownLabel(role.label.clone()))?;
        columns.push((s.values(), role.lag));
    }
    let len = columns[0].0.len();
    if let Some((other, _)) = columns.iter().find(|(c, _)| c.len() != len) {
        return Err(Error::Length(format!(
            "joined series have different lengths ({len} vs {})",
            other.len()
        )));
    }
    let max_lag = spec.max_lag();
    if len <= max_lag {
        return Err(Error::Length(format!(
            "series of length {len} cannot supply lag {max_lag}"
        )));
    }
    let rows = len - max_lag;
    let dim = columns.len();
    let mut data = Vec::with_capacity(rows * dim);
    for t in 0..rows {
        data.extend(columns.iter().map(|(c, lag)| c[t + lag]));
    }
    PointCloud::new(dim, data, format!("join{spec}"))
}

/// Aligned `(x, y, x')` samples: the input of both causality measures.
///
/// From a pair of time series `x'` is `x` one step ahead; synthetic systems
/// that redraw `(x, y)` independently every step supply `x'` directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Transitions {
    x: TimeSeries,
    y: TimeSeries,
    x_next: TimeSeries,
}

impl Transitions {
    /// Lag-one construction from two equally long series.
    pub fn from_series(x: &TimeSeries, y: &TimeSeries) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Length(format!(
                "series lengths differ ({} vs {})",
                x.len(),
                y.len()
            )));
        }
        let n = x.len() - 1;
        Self::from_samples(
            TimeSeries::new(x.name(), x.values()[..n].to_vec())?,
            TimeSeries::new(y.name(), y.values()[..n].to_vec())?,
            TimeSeries::new(format!("{}'", x.name()), x.values()[1..].to_vec())?,
        )
    }

    pub fn from_samples(x: TimeSeries, y: TimeSeries, x_next: TimeSeries) -> Result<Self> {
        if x.len() != y.len() || x.len() != x_next.len() {
            return Err(Error::Length(format!(
                "sample columns differ in length ({}, {}, {})",
                x.len(),
                y.len(),
                x_next.len()
            )));
        }
        if x.name() == y.name() || x.name() == x_next.name() || y.name() == x_next.name() {
            return Err(Error::Argument("x, y and x' need distinct labels".into()));
        }
        Ok(Self { x, y, x_next })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &TimeSeries {
        &self.x
    }

    pub fn y(&self) -> &TimeSeries {
        &self.y
    }

    pub fn x_next(&self) -> &TimeSeries {
        &self.x_next
    }

    /// The clouds `(X)`, `(X,X')`, `(X,Y)`, `(X,Y,X')`.
    pub fn clouds(&self) -> Result<[PointCloud; 4]> {
        let series = [self.x.clone(), self.y.clone(), self.x_next.clone()];
        let (x, y, xp) = (self.x.name(), self.y.name(), self.x_next.name());
        Ok([
            join(&series, &JoinSpec::present(x))?,
            join(&series, &JoinSpec::new([(x, 0), (xp, 0)])?)?,
            join(&series, &JoinSpec::pair(x, y))?,
            join(&series, &JoinSpec::new([(x, 0), (y, 0), (xp, 0)])?)?,
        ])
    }
}

/// Rescales every coordinate to zero mean and unit (population) standard
/// deviation.
pub fn standardize(cloud: &PointCloud) -> Result<PointCloud> {
    let n = cloud.len() as f64;
    let dim = cloud.dim();
    let mut mean = vec![0.0; dim];
    for p in cloud.points() {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for p in cloud.points() {
        for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mut sd = Vec::with_capacity(dim);
    for (c, s) in var.iter().enumerate() {
        let s = (s / n).sqrt();
        if !(s > 0.0) || !s.is_finite() {
            // 1-based in the message, matching how users count columns
            return Err(Error::DegenerateCoordinate(c + 1));
        }
        sd.push(s);
    }
    let data = cloud
        .points()
        .flat_map(|p| {
            p.iter()
                .zip(mean.iter().zip(&sd))
                .map(|(v, (m, s))| (v - m) / s)
                .collect::<Vec<_>>()
        })
        .collect();
    let maps: Vec<String> = mean
        .iter()
        .zip(&sd)
        .map(|(m, s)| format!("(v-{m})/{s}"))
        .collect();
    PointCloud::new(
        dim,
        data,
        format!("{} | standardize[{}]", cloud.provenance(), maps.join(", ")),
    )
}
