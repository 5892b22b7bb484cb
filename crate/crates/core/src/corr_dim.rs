// SPDX-License-Identifier: Apache-2.0

//! Correlation dimension and the geometric causality score built on it.
//!
//! The correlation sum `C(r)` is the fraction of admissible ordered pairs
//! `(i, j)`, `|i - j| > theiler`, whose Chebyshev distance is strictly below
//! `r`. `D2` is the slope of `ln C` against `ln r` over an automatically
//! selected scaling region. `GeoC(X'|B) = D2(B, X') - D2(B)` and
//! `GeoC_{y->x} = GeoC(X'|X) - GeoC(X'|X,Y)`.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result, SlopeProfile};
use crate::neighbors::{chebyshev, KdTree};
use crate::series::{standardize, PointCloud, TimeSeries, Transitions};

/// Fixed seed for the pair subsample that picks the radius range.
const RADIUS_SAMPLE_SEED: u64 = 0x0067_656f_635f_7232;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSumCurve {
    pub radii: Vec<f64>,
    pub csum: Vec<f64>,
    /// Raw pair counts behind `csum`.
    pub counts: Vec<u64>,
    pub admissible_pairs: u64,
    pub n_points: usize,
    /// Number of points used as pair anchors (all of them unless subsampled).
    pub n_reference: usize,
    pub theiler_window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct D2Estimate {
    pub value: f64,
    pub fit_range: (f64, f64),
    pub slope_stderr: f64,
    pub curve: CorrelationSumCurve,
    /// Local slopes over the sliding window, one per window start.
    pub local_slopes: Vec<f64>,
    pub ambient_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoCResult {
    pub geoc_cond_x: f64,
    pub geoc_cond_xy: f64,
    pub geoc: f64,
    pub d2_x: D2Estimate,
    pub d2_xxp: D2Estimate,
    pub d2_xy: D2Estimate,
    pub d2_xyxp: D2Estimate,
    pub warnings: Vec<String>,
}

/// How the radius grid of a correlation sum is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum RadiusPolicy {
    /// `count` log-spaced radii between two percentiles of a pair-distance
    /// subsample.
    Percentile {
        count: usize,
        lo_pct: f64,
        hi_pct: f64,
        sample_pairs: usize,
    },
    Explicit(Vec<f64>),
}

impl Default for RadiusPolicy {
    fn default() -> Self {
        RadiusPolicy::Percentile {
            count: 40,
            lo_pct: 1.0,
            hi_pct: 50.0,
            sample_pairs: 10_000,
        }
    }
}

/// Scaling-region selection rule.
#[derive(Debug, Clone, PartialEq)]
pub struct FitPolicy {
    /// Radii per local-slope window.
    pub window: usize,
    /// Maximum deviation of a local slope from its run mean.
    pub tolerance: f64,
    /// Minimum number of local slopes in the accepted run.
    pub min_run: usize,
}

impl Default for FitPolicy {
    fn default() -> Self {
        Self {
            window: 5,
            tolerance: 0.1,
            min_run: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionParams {
    pub radii: RadiusPolicy,
    pub theiler: usize,
    pub fit: FitPolicy,
    /// Clouds larger than this use an evenly strided subset of anchors.
    pub max_reference_points: usize,
    pub standardize: bool,
    /// Minimum series length accepted by [`geoc`].
    pub min_points: usize,
}

impl Default for DimensionParams {
    fn default() -> Self {
        Self {
            radii: RadiusPolicy::default(),
            theiler: 0,
            fit: FitPolicy::default(),
            max_reference_points: 4000,
            standardize: false,
            min_points: 1000,
        }
    }
}

impl DimensionParams {
    /// Defaults for autocorrelated data (attractor orbits, recordings).
    pub fn for_time_series() -> Self {
        Self {
            theiler: 10,
            ..Self::default()
        }
    }
}

fn admissible_partners(i: usize, n: usize, theiler: usize) -> u64 {
    // j in [0, n) with |i - j| > theiler
    let below = i.saturating_sub(theiler);
    let above = n.saturating_sub(i + theiler + 1);
    (below + above) as u64
}

fn reference_indices(n: usize, max_refs: usize) -> Vec<usize> {
    if max_refs == 0 || n <= max_refs {
        return (0..n).collect();
    }
    (0..max_refs).map(|t| t * n / max_refs).collect()
}

fn check_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty() {
        return Err(Error::Argument("empty radius list".into()));
    }
    if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::Argument("radii must be positive and finite".into()));
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("radii must be strictly increasing".into()));
    }
    Ok(())
}

/// Correlation sum over all ordered pairs.
pub fn correlation_sum(
    cloud: &PointCloud,
    radii: &[f64],
    theiler: usize,
) -> Result<CorrelationSumCurve> {
    correlation_sum_sampled(cloud, radii, theiler, 0)
}

/// Correlation sum anchored on at most `max_refs` evenly strided points
/// (`0` means all), each paired with every other point of the cloud.
pub fn correlation_sum_sampled(
    cloud: &PointCloud,
    radii: &[f64],
    theiler: usize,
    max_refs: usize,
) -> Result<CorrelationSumCurve> {
    check_radii(radii)?;
    let n = cloud.len();
    if n < 2 {
        return Err(Error::Length("correlation sum needs at least 2 points".into()));
    }
    let refs = reference_indices(n, max_refs);
    let admissible: u64 = refs.iter().map(|&i| admissible_partners(i, n, theiler)).sum();
    if admissible == 0 {
        return Err(Error::DegeneratePairs { n, theiler });
    }
    let tree = KdTree::new(cloud);
    let k = radii.len();
    let diff = refs
        .par_iter()
        .fold(
            || vec![0i64; k + 1],
            |mut diff, &i| {
                let q = cloud.point(i);
                tree.accumulate_radius_counts(q, radii, &mut diff);
                // take back the excluded temporal neighbours, self included
                let lo = i.saturating_sub(theiler);
                let hi = (i + theiler).min(n - 1);
                for j in lo..=hi {
                    let d = chebyshev(q, cloud.point(j));
                    diff[radii.partition_point(|&r| r <= d)] -= 1;
                }
                diff
            },
        )
        .reduce(
            || vec![0i64; k + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let mut counts = Vec::with_capacity(k);
    let mut acc = 0i64;
    for d in &diff[..k] {
        acc += d;
        counts.push(acc as u64);
    }
    let csum = counts.iter().map(|&c| c as f64 / admissible as f64).collect();
    Ok(CorrelationSumCurve {
        radii: radii.to_vec(),
        csum,
        counts,
        admissible_pairs: admissible,
        n_points: n,
        n_reference: refs.len(),
        theiler_window: theiler,
    })
}

/// `count` log-spaced radii from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Radius grid for `cloud` under `policy`.
pub fn radius_grid(cloud: &PointCloud, policy: &RadiusPolicy, theiler: usize) -> Result<Vec<f64>> {
    match policy {
        RadiusPolicy::Explicit(r) => {
            check_radii(r)?;
            Ok(r.clone())
        }
        &RadiusPolicy::Percentile {
            count,
            lo_pct,
            hi_pct,
            sample_pairs,
        } => {
            if count < 2 || !(0.0..=100.0).contains(&lo_pct) || !(lo_pct < hi_pct && hi_pct <= 100.0) {
                return Err(Error::Argument("bad percentile radius policy".into()));
            }
            let n = cloud.len();
            if n <= theiler + 1 {
                return Err(Error::DegeneratePairs { n, theiler });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(RADIUS_SAMPLE_SEED);
            let mut dists = Vec::with_capacity(sample_pairs);
            while dists.len() < sample_pairs {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                if i.abs_diff(j) > theiler {
                    dists.push(chebyshev(cloud.point(i), cloud.point(j)));
                }
            }
            dists.sort_by(f64::total_cmp);
            let pct = |p: f64| {
                let idx = ((p / 100.0) * (dists.len() - 1) as f64).round() as usize;
                dists[idx]
            };
            let mut lo = pct(lo_pct);
            let hi = pct(hi_pct);
            if lo <= 0.0 {
                lo = dists.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0);
            }
            if !(lo > 0.0 && hi > lo) {
                return Err(Error::DegeneratePairs { n, theiler });
            }
            Ok(log_spaced(lo, hi, count))
        }
    }
}

struct LineFit {
    slope: f64,
    stderr: f64,
}

fn least_squares(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let stderr = if x.len() > 2 {
        let ssr: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let r = b - my - slope * (a - mx);
                r * r
            })
            .sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LineFit { slope, stderr }
}

/// Fits `D2` over the longest run of local slopes that stay within
/// `policy.tolerance` of the run mean.
pub fn fit_d2_with(curve: &CorrelationSumCurve, policy: &FitPolicy) -> Result<D2Estimate> {
    let interior = curve.csum.iter().filter(|&&c| c > 0.0 && c < 1.0).count();
    if interior < 8 {
        return Err(Error::Argument(format!(
            "correlation sum has {interior} radii with 0 < C(r) < 1, need 8"
        )));
    }
    if policy.window < 2 || policy.min_run == 0 {
        return Err(Error::Argument("fit window must be >= 2 and min run >= 1".into()));
    }
    // C(r) is nondecreasing, so the positive entries form a suffix
    let first = curve.csum.iter().position(|&c| c > 0.0).unwrap_or(0);
    let lr: Vec<f64> = curve.radii[first..].iter().map(|r| r.ln()).collect();
    let lc: Vec<f64> = curve.csum[first..].iter().map(|c| c.ln()).collect();
    let w = policy.window;
    let slopes: Vec<f64> = if lr.len() >= w {
        (0..=lr.len() - w)
            .map(|s| least_squares(&lr[s..s + w], &lc[s..s + w]).slope)
            .collect()
    } else {
        Vec::new()
    };

    let mut best: Option<(usize, usize)> = None;
    for a in 0..slopes.len() {
        for b in a..slopes.len() {
            let run = &slopes[a..=b];
            let mean = run.iter().sum::<f64>() / run.len() as f64;
            if run.iter().all(|s| (s - mean).abs() < policy.tolerance) {
                let len = b - a + 1;
                if best.is_none_or(|(ba, bb)| len > bb - ba + 1) {
                    best = Some((a, b));
                }
            }
        }
    }
    let (a, b) = match best {
        Some((a, b)) if b - a + 1 >= policy.min_run => (a, b),
        _ => {
            return Err(Error::NoScalingRegion {
                min_width: policy.min_run,
                profile: SlopeProfile {
                    log_radii: lr,
                    local_slopes: slopes,
                },
            })
        }
    };
    let (lo, hi) = (a, b + w - 1);
    let fit = least_squares(&lr[lo..=hi], &lc[lo..=hi]);
    Ok(D2Estimate {
        value: fit.slope,
        fit_range: (curve.radii[first + lo], curve.radii[first + hi]),
        slope_stderr: fit.stderr,
        curve: curve.clone(),
        local_slopes: slopes,
        ambient_dim: 0,
    })
}

pub fn fit_d2(curve: &CorrelationSumCurve) -> Result<D2Estimate> {
    fit_d2_with(curve, &FitPolicy::default())
}

/// Full pipeline for one cloud: optional standardization, radius grid,
/// correlation sum, scaling-region fit.
pub fn dimension(cloud: &PointCloud, params: &DimensionParams) -> Result<D2Estimate> {
    let std_cloud;
    let cloud = if params.standardize {
        std_cloud = standardize(cloud)?;
        &std_cloud
    } else {
        cloud
    };
    if cloud.len() < cloud.dim() + 1 {
        return Err(Error::Length(format!(
            "{} points cannot support a dimension fit in R^{}",
            cloud.len(),
            cloud.dim()
        )));
    }
    let radii = radius_grid(cloud, &params.radii, params.theiler)?;
    let curve = correlation_sum_sampled(cloud, &radii, params.theiler, params.max_reference_points)?;
    let mut est = fit_d2_with(&curve, &params.fit)?;
    est.ambient_dim = cloud.dim();
    Ok(est)
}

/// `D2(target) - D2(base)` under identical parameters.
pub fn geoc_conditional(
    target: &PointCloud,
    base: &PointCloud,
    params: &DimensionParams,
) -> Result<f64> {
    Ok(geoc_conditional_estimates(target, base, params)?.0)
}

fn geoc_conditional_estimates(
    target: &PointCloud,
    base: &PointCloud,
    params: &DimensionParams,
) -> Result<(f64, D2Estimate, D2Estimate)> {
    if target.len() != base.len() {
        return Err(Error::Length(format!(
            "target has {} points, base has {}",
            target.len(),
            base.len()
        )));
    }
    if target.dim() <= base.dim() {
        return Err(Error::Argument(
            "target cloud must extend the base cloud by the future coordinate".into(),
        ));
    }
    let d_target = dimension(target, params)?;
    let d_base = dimension(base, params)?;
    Ok((d_target.value - d_base.value, d_target, d_base))
}

/// Geometric information flow from `y` to `x` for two time series.
pub fn geoc(x: &TimeSeries, y: &TimeSeries, params: &DimensionParams) -> Result<GeoCResult> {
    if x.len() < params.min_points {
        return Err(Error::InsufficientData {
            usable: x.len(),
            required: params.min_points,
        });
    }
    geoc_transitions(&Transitions::from_series(x, y)?, params)
}

/// Geometric information flow from `y` to `x` over explicit transitions.
pub fn geoc_transitions(t: &Transitions, params: &DimensionParams) -> Result<GeoCResult> {
    if t.len() + 1 < params.min_points {
        return Err(Error::InsufficientData {
            usable: t.len(),
            required: params.min_points,
        });
    }
    let [cx, cxxp, cxy, cxyxp] = t.clouds()?;
    let (geoc_cond_x, d2_xxp, d2_x) = geoc_conditional_estimates(&cxxp, &cx, params)?;
    let (geoc_cond_xy, d2_xyxp, d2_xy) = geoc_conditional_estimates(&cxyxp, &cxy, params)?;
    let mut warnings = Vec::new();
    for (label, est) in [
        ("d2_x", &d2_x),
        ("d2_xxp", &d2_xxp),
        ("d2_xy", &d2_xy),
        ("d2_xyxp", &d2_xyxp),
    ] {
        if est.slope_stderr > 0.1 {
            warnings.push(format!(
                "{label}: slope stderr {:.3} exceeds 0.1",
                est.slope_stderr
            ));
        }
    }
    Ok(GeoCResult {
        geoc_cond_x,
        geoc_cond_xy,
        geoc: geoc_cond_x - geoc_cond_xy,
        d2_x,
        d2_xxp,
        d2_xy,
        d2_xyxp,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform_cloud(n: usize, dim: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * dim).map(|_| rng.random::<f64>()).collect();
        PointCloud::new(dim, data, "uniform").unwrap()
    }

    fn brute_counts(cloud: &PointCloud, radii: &[f64], w: usize) -> Vec<u64> {
        let n = cloud.len();
        radii
            .iter()
            .map(|&r| {
                let mut c = 0;
                for i in 0..n {
                    for j in 0..n {
                        if i.abs_diff(j) > w && chebyshev(cloud.point(i), cloud.point(j)) < r {
                            c += 1;
                        }
                    }
                }
                c
            })
            .collect()
    }

    #[test]
    fn two_points() {
        let c = PointCloud::from_rows(&[[0.0], [1.0]], "t").unwrap();
        let curve = correlation_sum(&c, &[0.5, 2.0], 0).unwrap();
        assert_eq!(curve.csum, vec![0.0, 1.0]);
        // distance exactly equal to r is not counted
        let curve = correlation_sum(&c, &[1.0], 0).unwrap();
        assert_eq!(curve.csum, vec![0.0]);
    }

    #[test]
    fn argument_errors() {
        let c = uniform_cloud(10, 1, 0);
        assert!(matches!(correlation_sum(&c, &[], 0), Err(Error::Argument(_))));
        assert!(matches!(
            correlation_sum(&c, &[0.2, 0.1], 0),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            correlation_sum(&c, &[0.1], 9),
            Err(Error::DegeneratePairs { .. })
        ));
    }

    #[test]
    fn matches_double_loop() {
        for (dim, w) in [(1, 0), (2, 0), (3, 2), (2, 10)] {
            let c = uniform_cloud(257, dim, dim as u64 + w as u64);
            let radii = log_spaced(0.01, 0.9, 15);
            let curve = correlation_sum(&c, &radii, w).unwrap();
            assert_eq!(curve.counts, brute_counts(&c, &radii, w));
        }
    }

    #[test]
    fn exact_power_law_fit() {
        let radii = log_spaced(1e-3, 1.0, 20);
        let csum: Vec<f64> = radii.iter().map(|r: &f64| r.powf(1.5)).collect();
        let curve = CorrelationSumCurve {
            counts: vec![0; radii.len()],
            radii,
            csum,
            admissible_pairs: 1,
            n_points: 1,
            n_reference: 1,
            theiler_window: 0,
        };
        let est = fit_d2(&curve).unwrap();
        assert!((est.value - 1.5).abs() < 1e-9, "{}", est.value);
    }

    #[test]
    fn no_scaling_region_carries_profile() {
        // ln C = -(ln r)^2 / 2: the local slope drifts by ~0.36 per radius
        let radii = log_spaced(1e-3, 1.0, 20);
        let csum: Vec<f64> = radii.iter().map(|r| (-0.5 * r.ln().powi(2)).exp()).collect();
        let curve = CorrelationSumCurve {
            counts: vec![0; 20],
            radii,
            csum,
            admissible_pairs: 1,
            n_points: 1,
            n_reference: 1,
            theiler_window: 0,
        };
        match fit_d2_with(
            &curve,
            &FitPolicy {
                window: 3,
                tolerance: 0.05,
                min_run: 4,
            },
        ) {
            Err(Error::NoScalingRegion { profile, .. }) => {
                assert_eq!(profile.local_slopes.len(), 18)
            }
            other => panic!("expected no-scaling-region, got {other:?}"),
        }
    }

    #[test]
    fn reference_subsample_is_even() {
        assert_eq!(reference_indices(10, 0), (0..10).collect::<Vec<_>>());
        assert_eq!(reference_indices(10, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(admissible_partners(0, 10, 0), 9);
        assert_eq!(admissible_partners(5, 10, 2), 5);
    }

    // Closed-form pair-count expectation for U[0,1]: C(r) = 2r - r^2, so the
    // local slope d ln C / d ln r = (2 - 2r) / (2 - r).
    fn unit_interval_local_slope(r: f64) -> f64 {
        (2.0 - 2.0 * r) / (2.0 - r)
    }

    #[test]
    fn uniform_interval_local_slope() {
        let c = uniform_cloud(10_000, 1, 11);
        let radii = log_spaced(1e-3, 2e-2, 8);
        let curve = correlation_sum(&c, &radii, 0).unwrap();
        let n = radii.len();
        let slope = (curve.csum[n - 1] / curve.csum[0]).ln() / (radii[n - 1] / radii[0]).ln();
        let r_mid = (radii[0] * radii[n - 1]).sqrt();
        let oracle = unit_interval_local_slope(r_mid);
        assert!((oracle - 1.0).abs() < 0.02);
        assert!((slope - 1.0).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn uniform_square_local_slope() {
        // in 2-D under the max norm C(r) = (2r - r^2)^2
        let c = uniform_cloud(10_000, 2, 12);
        let radii = log_spaced(5e-3, 5e-2, 8);
        let curve = correlation_sum(&c, &radii, 0).unwrap();
        let n = radii.len();
        let slope = (curve.csum[n - 1] / curve.csum[0]).ln() / (radii[n - 1] / radii[0]).ln();
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn geoc_on_function_graph_is_zero() {
        // x' = f(x) exactly: (x, x') is a curve
        let c = uniform_cloud(10_000, 1, 21);
        let base = c.clone();
        let target = PointCloud::new(
            2,
            c.as_flat().iter().flat_map(|&x| [x, (3.0 * x).sin()]).collect(),
            "graph",
        )
        .unwrap();
        let g = geoc_conditional(&target, &base, &DimensionParams::default()).unwrap();
        assert!(g.abs() <= 0.05, "GeoC(X'|X) = {g}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn csum_monotone_and_scale_invariant(seed in 0u64..1000, c in 0.1f64..10.0) {
            let cloud = uniform_cloud(120, 2, seed);
            let radii = log_spaced(0.02, 0.8, 12);
            let curve = correlation_sum(&cloud, &radii, 0).unwrap();
            prop_assert!(curve.csum.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(curve.csum.iter().all(|&v| (0.0..=1.0).contains(&v)));
            // scale by a power of two so products are exact
            let s = c.log2().round().exp2();
            let scaled = cloud.affine(s, 0.0).unwrap();
            let sr: Vec<f64> = radii.iter().map(|r| r * s).collect();
            let curve2 = correlation_sum(&scaled, &sr, 0).unwrap();
            prop_assert_eq!(curve.counts, curve2.counts);
        }
    }
}
