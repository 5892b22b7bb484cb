// SPDX-License-Identifier: Apache-2.0

//! Kozachenko-Leonenko kNN entropy estimates and transfer entropy as an
//! explicit difference of conditional entropies.
//!
//! With the max-norm the unit ball has volume `2^d`, so
//! `h = psi(N) - psi(k) + d * <ln(2 eps_i)>` where `eps_i` is the distance
//! from point `i` to its `k`-th neighbor. All values are in nats.

use rayon::prelude::*;
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::neighbors::KdTree;
use crate::series::{PointCloud, TimeSeries, Transitions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KnnParams {
    pub k: usize,
    pub theiler: usize,
}

impl KnnParams {
    pub fn new(k: usize, theiler: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        Ok(Self { k, theiler })
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if n <= self.k + self.theiler + 1 {
            return Err(Error::InsufficientData {
                usable: n,
                required: self.k + self.theiler + 2,
            });
        }
        Ok(())
    }
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 4, theiler: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TEEstimate {
    /// `h_cond_x - h_cond_xy`, nats.
    pub value: f64,
    /// `h(X'|X)`
    pub h_cond_x: f64,
    /// `h(X'|X,Y)`
    pub h_cond_xy: f64,
    pub n_used: usize,
    pub params: KnnParams,
    pub warnings: Vec<String>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Coordinates with exact duplicate rows nudged apart.
///
/// Every repeat after the first occurrence moves by at most `1e-12` of the
/// coordinate range, in a direction fixed by its row index. Returns `None`
/// when there are no duplicates.
fn separate_duplicates(cloud: &PointCloud) -> Result<Option<Vec<f64>>> {
    let n = cloud.len();
    let dim = cloud.dim();
    let mut order: Vec<usize> = (0..n).collect();
    let key = |i: usize| -> Vec<u64> { cloud.point(i).iter().map(|v| v.to_bits()).collect() };
    order.sort_by_cached_key(|&i| (key(i), i));
    let dups: Vec<usize> = order
        .windows(2)
        .filter(|w| cloud.point(w[0]) == cloud.point(w[1]))
        .map(|w| w[1])
        .collect();
    if dups.is_empty() {
        return Ok(None);
    }
    let fraction = dups.len() as f64 / n as f64;
    if fraction > 0.1 {
        return Err(Error::TooManyDuplicates {
            fraction: 100.0 * fraction,
        });
    }
    let bounds = cloud.bounds();
    let mut data = cloud.as_flat().to_vec();
    for &i in &dups {
        for (c, &(lo, hi)) in bounds.iter().enumerate() {
            let range = if hi > lo { hi - lo } else { data[i * dim + c].abs().max(1.0) };
            let h = splitmix64((i as u64) << 8 | c as u64);
            let u = (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
            data[i * dim + c] += 1e-12 * range * u;
        }
    }
    Ok(Some(data))
}

/// Differential entropy of the distribution sampled by `cloud`, in nats.
pub fn knn_entropy(cloud: &PointCloud, params: &KnnParams) -> Result<f64> {
    let n = cloud.len();
    params.check(n)?;
    let dim = cloud.dim();
    let jittered = separate_duplicates(cloud)?;
    let data = jittered.as_deref().unwrap_or(cloud.as_flat());
    let tree = KdTree::from_flat(dim, data);
    let logs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            tree.kth_distance(i, params.k, params.theiler)
                .map(|eps| (2.0 * eps).ln())
                .unwrap_or(f64::NAN)
        })
        .collect();
    let mut sum = 0.0;
    for l in &logs {
        if l.is_nan() {
            return Err(Error::InsufficientData {
                usable: n,
                required: params.k + params.theiler + 2,
            });
        }
        sum += l;
    }
    Ok(digamma(n as f64) - digamma(params.k as f64) + dim as f64 * sum / n as f64)
}

/// `h(joint) - h(cond)` where `cond` is a coordinate prefix of `joint`.
pub fn conditional_entropy(
    joint: &PointCloud,
    cond: &PointCloud,
    params: &KnnParams,
) -> Result<f64> {
    if joint.len() != cond.len() {
        return Err(Error::Length(format!(
            "joint has {} points, condition has {}",
            joint.len(),
            cond.len()
        )));
    }
    if cond.dim() >= joint.dim()
        || joint
            .points()
            .zip(cond.points())
            .any(|(j, c)| j[..c.len()] != *c)
    {
        return Err(Error::Argument(
            "conditioning cloud must be a strict coordinate prefix of the joint cloud".into(),
        ));
    }
    Ok(knn_entropy(joint, params)? - knn_entropy(cond, params)?)
}

/// `T_{y->x} = h(X'|X) - h(X'|X,Y)` from the four joined clouds.
pub fn transfer_entropy(x: &TimeSeries, y: &TimeSeries, params: &KnnParams) -> Result<TEEstimate> {
    transfer_entropy_transitions(&Transitions::from_series(x, y)?, params)
}

/// Transfer entropy from `y` to `x` over explicit transitions.
pub fn transfer_entropy_transitions(t: &Transitions, params: &KnnParams) -> Result<TEEstimate> {
    if t.len() < 10 * params.k {
        return Err(Error::InsufficientData {
            usable: t.len(),
            required: 10 * params.k,
        });
    }
    let [cx, cxxp, cxy, cxyxp] = t.clouds()?;
    let h_cond_x = conditional_entropy(&cxxp, &cx, params)?;
    let h_cond_xy = conditional_entropy(&cxyxp, &cxy, params)?;
    let value = h_cond_x - h_cond_xy;
    let mut warnings = Vec::new();
    if value < 0.0 {
        warnings.push(format!(
            "negative transfer entropy estimate {value:.4} (estimator bias)"
        ));
    }
    Ok(TEEstimate {
        value,
        h_cond_x,
        h_cond_xy,
        n_used: cx.len(),
        params: *params,
        warnings,
    })
}
