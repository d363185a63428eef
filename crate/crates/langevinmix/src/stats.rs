//! Estimators and limit-theorem diagnostics: time averages, autocovariances,
//! long-run variance, scaled partial-sum paths, histogram total-variation
//! distances, and a Kolmogorov–Smirnov normality test.
//!
//! Everything here is a pure function over immutable series; replica-level
//! aggregation composes these with order-independent reductions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::ChainRun;
use crate::error::{Error, Result};
use crate::model::GrowthProfile;
use crate::numeric::{compensated_sum, kolmogorov_survival, linear_fit, normal_cdf, RunningSum};

// ---------------------------------------------------------------------------
// Time averages
// ---------------------------------------------------------------------------

/// Mean of `profile` over the retained states `theta_t`, `t >= burn_in`,
/// with compensated summation (the result does not depend on how a long
/// trajectory would be chunked).
pub fn time_average(run: &ChainRun, profile: &GrowthProfile, burn_in: usize) -> Result<f64> {
    let n_states = run.horizon() + 1;
    if burn_in >= n_states {
        return Err(Error::InvalidParameter(format!(
            "burn-in {burn_in} leaves no samples out of {n_states}"
        )));
    }
    let mut acc = RunningSum::new();
    for t in burn_in..n_states {
        acc.add(profile.eval(run.theta(t)));
    }
    Ok(acc.value() / (n_states - burn_in) as f64)
}

/// Mean of a scalar series with compensated summation.
pub fn mean(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::InvalidParameter("mean of an empty series".into()));
    }
    Ok(compensated_sum(series.iter().copied()) / series.len() as f64)
}

// ---------------------------------------------------------------------------
// Autocovariance
// ---------------------------------------------------------------------------

/// Mean, variance, and biased autocovariances of a scalar series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesStats {
    pub n: usize,
    pub mean: f64,
    /// Lag-0 autocovariance (biased, 1/n-normalised).
    pub variance: f64,
    pub autocov: BTreeMap<usize, f64>,
}

/// Biased (1/n-normalised) empirical autocovariances after mean centering:
/// `c(l) = (1/n) sum_{k} (x_k - m)(x_{k+l} - m)`. The 1/n normalisation keeps
/// the sequence positive semidefinite at the cost of a small shrinkage bias.
pub fn autocovariance(series: &[f64], max_lag: usize) -> Result<SeriesStats> {
    let n = series.len();
    if n <= 10 * max_lag || n < 2 {
        return Err(Error::InvalidParameter(format!(
            "series of length {n} is too short for lags up to {max_lag}"
        )));
    }
    let m = compensated_sum(series.iter().copied()) / n as f64;
    let mut autocov = BTreeMap::new();
    for l in 0..=max_lag {
        let mut acc = RunningSum::new();
        for k in 0..n - l {
            acc.add((series[k] - m) * (series[k + l] - m));
        }
        autocov.insert(l, acc.value() / n as f64);
    }
    let variance = autocov[&0];
    Ok(SeriesStats { n, mean: m, variance, autocov })
}

// ---------------------------------------------------------------------------
// Long-run variance
// ---------------------------------------------------------------------------

/// Long-run variance estimator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrvMethod {
    /// Sample variance of non-overlapping batch means, times the batch size.
    /// `window` is the batch size.
    BatchMeans,
    /// `c(0) + 2 sum_{l=1}^{window} c(l)`; can go negative on short series,
    /// in which case it is floored at 0 (with a note on stderr).
    TruncatedSum,
}

/// Estimates the variance of `S_n / sqrt(n)` for the centred series.
pub fn long_run_variance(series: &[f64], method: LrvMethod, window: usize) -> Result<f64> {
    let n = series.len();
    if window == 0 {
        return Err(Error::InvalidParameter("window must be positive".into()));
    }
    match method {
        LrvMethod::BatchMeans => {
            let n_batches = n / window;
            if n_batches < 2 {
                return Err(Error::InvalidParameter(format!(
                    "{n} samples give {n_batches} batches of size {window}; need at least 2"
                )));
            }
            let means: Vec<f64> = (0..n_batches)
                .map(|b| {
                    compensated_sum(series[b * window..(b + 1) * window].iter().copied())
                        / window as f64
                })
                .collect();
            let grand = compensated_sum(means.iter().copied()) / n_batches as f64;
            let ss = compensated_sum(means.iter().map(|m| (m - grand) * (m - grand)));
            Ok(ss / (n_batches - 1) as f64 * window as f64)
        }
        LrvMethod::TruncatedSum => {
            let stats = autocovariance(series, window)?;
            let tail: f64 = (1..=window).map(|l| stats.autocov[&l]).sum();
            let sigma_sq = stats.variance + 2.0 * tail;
            if sigma_sq < 0.0 {
                eprintln!(
                    "warning: truncated-sum long-run variance {sigma_sq:.3e} is negative; \
                     flooring at 0 (window {window}, n {n})"
                );
                Ok(0.0)
            } else {
                Ok(sigma_sq)
            }
        }
    }
}

/// Default batch size for batch means: `floor(sqrt(n))`.
pub fn default_batch_size(n: usize) -> usize {
    ((n as f64).sqrt() as usize).max(1)
}

/// Default truncation window: `floor(n^(1/3))`.
pub fn default_truncation_window(n: usize) -> usize {
    ((n as f64).cbrt() as usize).max(1)
}

// ---------------------------------------------------------------------------
// Scaled partial-sum (Donsker) paths
// ---------------------------------------------------------------------------

/// The scaled partial-sum path `t -> S_{floor(nt)} / sqrt(n)` of a centred
/// series, sampled on a fixed time grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DonskerPath {
    pub n: usize,
    pub sigma_hat: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `values / sigma_hat` when `sigma_hat > 0`.
    pub studentized: Option<Vec<f64>>,
}

/// Canonical evaluation grid: multiples of 1/10 (so 1/2 and 1 are on it).
pub const DONSKER_GRID: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Builds the path on the canonical grid. The series must already be centred
/// by the caller's mean estimate; `sigma_hat` is carried for studentization.
pub fn donsker_path(series: &[f64], sigma_hat: f64) -> Result<DonskerPath> {
    donsker_path_on_grid(series, sigma_hat, &DONSKER_GRID)
}

pub fn donsker_path_on_grid(series: &[f64], sigma_hat: f64, grid: &[f64]) -> Result<DonskerPath> {
    let n = series.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty series".into()));
    }
    if !(sigma_hat >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma_hat must be >= 0, got {sigma_hat}")));
    }
    if grid.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
        return Err(Error::InvalidParameter("grid times must lie in [0, 1]".into()));
    }
    // Prefix sums once, then read off floor(nt).
    let mut prefix = Vec::with_capacity(n + 1);
    let mut acc = RunningSum::new();
    prefix.push(0.0);
    for &x in series {
        acc.add(x);
        prefix.push(acc.value());
    }
    let scale = (n as f64).sqrt();
    let values: Vec<f64> =
        grid.iter().map(|&t| prefix[((n as f64 * t) as usize).min(n)] / scale).collect();
    let studentized =
        (sigma_hat > 0.0).then(|| values.iter().map(|v| v / sigma_hat).collect());
    Ok(DonskerPath { n, sigma_hat, times: grid.to_vec(), values, studentized })
}

// ---------------------------------------------------------------------------
// Kolmogorov–Smirnov normality test
// ---------------------------------------------------------------------------

/// Two-sided KS statistic of the sample against the standard normal, with the
/// asymptotic Kolmogorov p-value.
pub fn ks_normality(samples: &[f64]) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 100 {
        return Err(Error::InvalidParameter(format!(
            "KS test needs at least 100 samples, got {n}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = normal_cdf(x);
        d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
    }
    let p = kolmogorov_survival(nf.sqrt() * d);
    Ok((d, p))
}

// ---------------------------------------------------------------------------
// Empirical laws and total variation
// ---------------------------------------------------------------------------

/// A one-dimensional histogram law on a fixed box, with mass spilling outside
/// the box tracked in explicit under/overflow cells so that distances see it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalLaw {
    pub lo: f64,
    pub hi: f64,
    pub masses: Vec<f64>,
    pub underflow: f64,
    pub overflow: f64,
    /// Sample count behind the law; 0 for exact laws built from masses.
    pub total: usize,
}

impl EmpiricalLaw {
    pub fn from_samples(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo < hi) || bins == 0 {
            return Err(Error::InvalidParameter(format!(
                "degenerate law box: [{lo}, {hi}] with {bins} bins"
            )));
        }
        if samples.is_empty() {
            return Err(Error::InvalidParameter("empty sample".into()));
        }
        let mut counts = vec![0u64; bins];
        let mut under = 0u64;
        let mut over = 0u64;
        let w = (hi - lo) / bins as f64;
        for &x in samples {
            if !x.is_finite() {
                return Err(Error::InvalidParameter("non-finite sample".into()));
            }
            if x < lo {
                under += 1;
            } else if x >= hi {
                over += 1;
            } else {
                let b = (((x - lo) / w) as usize).min(bins - 1);
                counts[b] += 1;
            }
        }
        let nf = samples.len() as f64;
        Ok(Self {
            lo,
            hi,
            masses: counts.into_iter().map(|c| c as f64 / nf).collect(),
            underflow: under as f64 / nf,
            overflow: over as f64 / nf,
            total: samples.len(),
        })
    }

    /// Wraps an exact law (e.g. oracle output) on the same binning. Masses
    /// must be non-negative and sum to 1 with the spills, within 1e-9.
    pub fn from_masses(masses: Vec<f64>, lo: f64, hi: f64, underflow: f64, overflow: f64) -> Result<Self> {
        if !(lo < hi) || masses.is_empty() {
            return Err(Error::InvalidParameter("degenerate law box".into()));
        }
        if masses.iter().chain([&underflow, &overflow]).any(|&m| !(m >= 0.0)) {
            return Err(Error::InvalidParameter("masses must be non-negative".into()));
        }
        let s = compensated_sum(masses.iter().copied()) + underflow + overflow;
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("masses sum to {s}, expected 1")));
        }
        Ok(Self { lo, hi, masses, underflow, overflow, total: 0 })
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    /// Fraction of mass inside the box.
    pub fn coverage(&self) -> f64 {
        1.0 - self.underflow - self.overflow
    }

    fn same_binning(&self, other: &Self) -> bool {
        self.lo == other.lo && self.hi == other.hi && self.bins() == other.bins()
    }
}

/// Half the L1 distance between two laws on the same binning, spill cells
/// included. Always in [0, 1].
pub fn tv_distance(p: &EmpiricalLaw, q: &EmpiricalLaw) -> Result<f64> {
    if !p.same_binning(q) {
        return Err(Error::InvalidParameter(format!(
            "binning mismatch: [{}, {}] x {} vs [{}, {}] x {}",
            p.lo,
            p.hi,
            p.bins(),
            q.lo,
            q.hi,
            q.bins()
        )));
    }
    let mut acc = RunningSum::new();
    for (a, b) in p.masses.iter().zip(&q.masses) {
        acc.add((a - b).abs());
    }
    acc.add((p.underflow - q.underflow).abs());
    acc.add((p.overflow - q.overflow).abs());
    Ok((0.5 * acc.value()).clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Exponential-decay fits and the partial-sum identity
// ---------------------------------------------------------------------------

/// Least-squares fit of `value ~ intercept_factor * exp(-rate * n)` on the
/// log scale. Non-positive values are dropped; at least 4 points must
/// survive. Returns `(rate, ln_intercept, r_squared)`.
pub fn exp_rate_fit(ns: &[f64], values: &[f64]) -> Result<(f64, f64, f64)> {
    if ns.len() != values.len() {
        return Err(Error::Dimension(format!(
            "curve has {} abscissae and {} values",
            ns.len(),
            values.len()
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&n, &v) in ns.iter().zip(values) {
        if v > 0.0 && v.is_finite() {
            xs.push(n);
            ys.push(v.ln());
        }
    }
    if xs.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "only {} positive points after filtering; the fit needs at least 4",
            xs.len()
        )));
    }
    let (slope, intercept, r2) = linear_fit(&xs, &ys);
    Ok((-slope, intercept, r2))
}

/// The decomposition of a scaled squared partial sum into its diagonal and
/// cross terms: returns `(S_n^2 / n, sum x_k^2 / n, 2 sum_{k<l} x_k x_l / n)`.
/// The first entry equals the sum of the other two as an algebraic identity;
/// the three are computed by independent routes so the identity is a real
/// check on the arithmetic, not a tautology.
pub fn partial_sum_decomposition(series: &[f64]) -> Result<(f64, f64, f64)> {
    let n = series.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty series".into()));
    }
    let nf = n as f64;
    let total = compensated_sum(series.iter().copied());
    let direct = total * total / nf;
    let diag = compensated_sum(series.iter().map(|x| x * x)) / nf;
    // Cross term via running prefix sums: 2 sum_l x_l * (x_0 + ... + x_{l-1}).
    let mut prefix = RunningSum::new();
    let mut cross_acc = RunningSum::new();
    for &x in series {
        cross_acc.add(2.0 * x * prefix.value());
        prefix.add(x);
    }
    let cross = cross_acc.value() / nf;
    Ok((direct, diag, cross))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_chain, ChainConfig, StepMode};
    use crate::env::{IidUniformParams, Stream};
    use crate::model::make_linear_model;
    use crate::rng::SubStream;

    fn normals(n: usize, key: u64) -> Vec<f64> {
        let mut sub = SubStream::new(key);
        (0..n).map(|_| sub.next_standard_normal()).collect()
    }

    fn ar1(n: usize, r: f64, key: u64) -> Vec<f64> {
        let mut sub = SubStream::new(key);
        let mut x = 0.0;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            x = r * x + sub.next_standard_normal();
            out.push(x);
        }
        out
    }

    fn constant_run(v: f64, horizon: usize) -> ChainRun {
        ChainRun {
            d: 1,
            thetas: vec![v; horizon + 1],
            env_trace: crate::env::FrozenTrajectory { m: 1, bound: 1.0, data: vec![0.0; horizon] },
            eps_seed_trace: vec![0; horizon],
            regeneration_flags: vec![false; horizon],
            out_of_theory: false,
        }
    }

    #[test]
    fn time_average_of_constant_trajectory_is_the_constant() {
        let run = constant_run(1.75, 100);
        let phi = GrowthProfile::coordinate(1, 0).unwrap();
        assert_eq!(time_average(&run, &phi, 0).unwrap(), 1.75);
        // burn_in = n - 1 retains a single sample.
        assert_eq!(time_average(&run, &phi, 100).unwrap(), 1.75);
        assert!(time_average(&run, &phi, 101).is_err());
    }

    #[test]
    fn time_average_of_sgld_chain_matches_stationary_mean() {
        let model = make_linear_model(1, 1.0).unwrap();
        let stream = Stream::iid_uniform(IidUniformParams { m: 1, bound: 1.0 }, 0).unwrap();
        let n = 100_000;
        let cfg = ChainConfig::new(0.5, 1.0, vec![0.0], n, 2024);
        let run = run_chain(&model, &stream, &cfg, &StepMode::Plain).unwrap();
        let phi = GrowthProfile::coordinate(1, 0).unwrap();
        let avg = time_average(&run, &phi, 1000).unwrap();
        // Long-run variance of the identity is about 13/3, so the standard
        // error of the time average is about sqrt(4.33 / 1e5) = 0.0066.
        let se = (13.0 / 3.0 / n as f64).sqrt();
        assert!(
            avg.abs() < 4.0 * se,
            "time average {avg} further than 4 SE ({se}) from the stationary mean 0"
        );
    }

    #[test]
    fn autocovariance_of_iid_signs_is_unit_at_lag_zero_only() {
        let mut sub = SubStream::new(9);
        let xs: Vec<f64> =
            (0..200_000).map(|_| if sub.next_uniform() < 0.5 { -1.0 } else { 1.0 }).collect();
        let stats = autocovariance(&xs, 5).unwrap();
        assert!((stats.variance - 1.0).abs() < 0.01, "lag 0 = {}", stats.variance);
        for l in 1..=5 {
            assert!(
                stats.autocov[&l].abs() < 0.01,
                "lag {l} = {} should vanish for an independent series",
                stats.autocov[&l]
            );
        }
    }

    #[test]
    fn autocovariance_of_ar1_decays_geometrically() {
        let r = 0.6;
        let xs = ar1(400_000, r, 77);
        let stats = autocovariance(&xs, 5).unwrap();
        for l in 1..=5usize {
            let ratio = stats.autocov[&l] / stats.variance;
            assert!(
                (ratio - r.powi(l as i32)).abs() < 0.02,
                "lag {l}: autocorrelation {ratio} vs {}",
                r.powi(l as i32)
            );
        }
    }

    #[test]
    fn autocovariance_of_constant_series_is_identically_zero() {
        let xs = vec![3.25; 1000];
        let stats = autocovariance(&xs, 4).unwrap();
        for (_, &c) in &stats.autocov {
            assert_eq!(c, 0.0);
        }
    }

    #[test]
    fn autocovariance_rejects_short_series() {
        assert!(autocovariance(&[1.0; 50], 5).is_err());
    }

    #[test]
    fn long_run_variance_of_iid_series_matches_marginal_variance() {
        let xs = normals(1_000_000, 13);
        let bm = long_run_variance(&xs, LrvMethod::BatchMeans, default_batch_size(xs.len()))
            .unwrap();
        let ts = long_run_variance(&xs, LrvMethod::TruncatedSum, 10).unwrap();
        assert!((bm - 1.0).abs() < 0.1, "batch means {bm}");
        assert!((ts - 1.0).abs() < 0.1, "truncated sum {ts}");
    }

    #[test]
    fn long_run_variance_of_ar1_matches_closed_form() {
        let r = 0.5;
        let xs = ar1(1_000_000, r, 301);
        // Innovation variance 1: long-run variance 1 / (1 - r)^2 = 4.
        let target = 1.0 / ((1.0 - r) * (1.0 - r));
        let bm =
            long_run_variance(&xs, LrvMethod::BatchMeans, default_batch_size(xs.len())).unwrap();
        let ts = long_run_variance(&xs, LrvMethod::TruncatedSum, 60).unwrap();
        assert!((bm - target).abs() / target < 0.1, "batch means {bm} vs {target}");
        assert!((ts - target).abs() / target < 0.1, "truncated sum {ts} vs {target}");
    }

    #[test]
    fn truncated_sum_floors_negative_estimates_at_zero() {
        // Perfectly alternating series: c(0) = 1, c(1) = -1 (up to edge terms),
        // so the window-1 truncated sum is about -1.
        let xs: Vec<f64> = (0..10_000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let v = long_run_variance(&xs, LrvMethod::TruncatedSum, 1).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn donsker_path_of_zero_series_is_zero() {
        let path = donsker_path(&vec![0.0; 1000], 1.0).unwrap();
        assert!(path.values.iter().all(|&v| v == 0.0));
        assert_eq!(path.values[0], 0.0, "path starts at 0 by construction");
    }

    #[test]
    fn donsker_endpoint_is_scaled_total_sum() {
        let xs = normals(10_000, 5);
        let path = donsker_path(&xs, 0.0).unwrap();
        let total = compensated_sum(xs.iter().copied());
        let endpoint = path.values[path.values.len() - 1];
        assert!(
            (endpoint - total / (xs.len() as f64).sqrt()).abs() < 1e-10,
            "endpoint {endpoint} vs {}",
            total / (xs.len() as f64).sqrt()
        );
        assert!(path.studentized.is_none(), "sigma 0 leaves no studentized path");
        let path = donsker_path(&xs, 2.0).unwrap();
        let stud = path.studentized.as_ref().unwrap();
        assert!((stud[10] - endpoint / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ks_accepts_true_normals_and_rejects_a_shifted_mean() {
        let xs = normals(10_000, 21);
        let (d, p) = ks_normality(&xs).unwrap();
        assert!(p > 0.01, "true normals rejected: D = {d}, p = {p}");
        let shifted: Vec<f64> = xs.iter().map(|x| x + 0.5).collect();
        let (_, p) = ks_normality(&shifted).unwrap();
        assert!(p < 0.01, "shifted mean accepted: p = {p}");
    }

    #[test]
    fn ks_statistic_of_degenerate_sample_is_one_half() {
        let (d, p) = ks_normality(&vec![0.0; 500]).unwrap();
        assert!((d - 0.5).abs() < 1e-12, "D = {d}");
        assert!(p < 1e-10, "p = {p}");
    }

    #[test]
    fn tv_distance_is_zero_on_equal_laws_and_one_on_disjoint_supports() {
        let a = EmpiricalLaw::from_samples(&normals(10_000, 3), -4.0, 4.0, 50).unwrap();
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        let left = EmpiricalLaw::from_samples(&vec![-2.0; 100], -4.0, 4.0, 50).unwrap();
        let right = EmpiricalLaw::from_samples(&vec![2.0; 100], -4.0, 4.0, 50).unwrap();
        assert_eq!(tv_distance(&left, &right).unwrap(), 1.0);
    }

    #[test]
    fn tv_distance_between_same_distribution_samples_is_binomial_noise() {
        let a = EmpiricalLaw::from_samples(&normals(100_000, 41), -6.0, 6.0, 100).unwrap();
        let b = EmpiricalLaw::from_samples(&normals(100_000, 42), -6.0, 6.0, 100).unwrap();
        let tv = tv_distance(&a, &b).unwrap();
        assert!(tv <= 0.03, "same-law histograms at distance {tv}");
    }

    #[test]
    fn tv_distance_is_a_metric_on_fixed_binnings() {
        let laws: Vec<EmpiricalLaw> = (0..3)
            .map(|k| {
                let xs: Vec<f64> =
                    normals(5_000, 100 + k).iter().map(|x| x + k as f64 * 0.3).collect();
                EmpiricalLaw::from_samples(&xs, -5.0, 5.0, 40).unwrap()
            })
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                let dij = tv_distance(&laws[i], &laws[j]).unwrap();
                let dji = tv_distance(&laws[j], &laws[i]).unwrap();
                assert_eq!(dij, dji, "symmetry at ({i}, {j})");
                for k in 0..3 {
                    let dik = tv_distance(&laws[i], &laws[k]).unwrap();
                    let dkj = tv_distance(&laws[k], &laws[j]).unwrap();
                    assert!(dij <= dik + dkj + 1e-15, "triangle at ({i}, {k}, {j})");
                }
            }
        }
    }

    #[test]
    fn tv_distance_rejects_mismatched_binnings() {
        let a = EmpiricalLaw::from_samples(&[0.0, 1.0], -2.0, 2.0, 10).unwrap();
        let b = EmpiricalLaw::from_samples(&[0.0, 1.0], -2.0, 2.0, 20).unwrap();
        assert!(tv_distance(&a, &b).is_err());
    }

    #[test]
    fn law_masses_account_for_every_sample_including_spills() {
        let xs = vec![-10.0, -0.5, 0.0, 0.5, 10.0];
        let law = EmpiricalLaw::from_samples(&xs, -1.0, 1.0, 4).unwrap();
        let total: f64 = law.masses.iter().sum::<f64>() + law.underflow + law.overflow;
        assert!((total - 1.0).abs() < 1e-15);
        assert_eq!(law.underflow, 0.2);
        assert_eq!(law.overflow, 0.2);
        assert!((law.coverage() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn from_masses_validates_normalisation() {
        assert!(EmpiricalLaw::from_masses(vec![0.5, 0.5], -1.0, 1.0, 0.0, 0.0).is_ok());
        assert!(EmpiricalLaw::from_masses(vec![0.5, 0.4], -1.0, 1.0, 0.0, 0.0).is_err());
        assert!(EmpiricalLaw::from_masses(vec![0.5, -0.1, 0.6], -1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn exp_rate_fit_recovers_exact_exponential_decay() {
        let ns: Vec<f64> = (1..=8).map(|n| n as f64 * 5.0).collect();
        let vs: Vec<f64> = ns.iter().map(|&n| 2.0 * (-0.3 * n).exp()).collect();
        let (rate, ln_c, r2) = exp_rate_fit(&ns, &vs).unwrap();
        assert!((rate - 0.3).abs() < 1e-12, "rate {rate}");
        assert!((ln_c - 2.0f64.ln()).abs() < 1e-12, "intercept {ln_c}");
        assert!((r2 - 1.0).abs() < 1e-12, "r2 {r2}");
    }

    #[test]
    fn exp_rate_fit_on_constant_curve_is_zero_rate() {
        let ns = [1.0, 2.0, 3.0, 4.0];
        let vs = [0.7; 4];
        let (rate, _, _) = exp_rate_fit(&ns, &vs).unwrap();
        assert!(rate.abs() < 1e-14);
    }

    #[test]
    fn exp_rate_fit_drops_nonpositive_values_and_errors_when_starved() {
        let ns = [1.0, 2.0, 3.0, 4.0, 5.0];
        let vs = [1.0, 0.0, 0.5, -0.1, 0.25];
        assert!(exp_rate_fit(&ns, &vs).is_err(), "only 3 positive points remain");
    }

    #[test]
    fn squared_partial_sum_decomposes_into_diagonal_plus_cross_terms() {
        let xs = normals(100_000, 55);
        let (direct, diag, cross) = partial_sum_decomposition(&xs).unwrap();
        assert!(
            (direct - (diag + cross)).abs() < 1e-10,
            "identity violated: {direct} vs {diag} + {cross} = {}",
            diag + cross
        );
    }

    #[test]
    fn autocovariance_windows_far_into_the_chain_agree() {
        // Stability of the autocovariance along a stationary-ish SGLD chain:
        // windows [T, T+W] and [2T, 2T+W] must agree within sampling noise.
        let model = make_linear_model(1, 1.0).unwrap();
        let stream = Stream::iid_uniform(IidUniformParams { m: 1, bound: 1.0 }, 10).unwrap();
        let t0 = 50_000;
        let w = 50_000;
        let cfg = ChainConfig::new(0.5, 1.0, vec![0.0], 2 * t0 + w, 314);
        let run = run_chain(&model, &stream, &cfg, &StepMode::Plain).unwrap();
        let series = run.coordinate_series(0);
        for lag in [0usize, 1, 2] {
            let s1 = autocovariance(&series[t0..t0 + w], 2).unwrap();
            let s2 = autocovariance(&series[2 * t0..2 * t0 + w], 2).unwrap();
            let (c1, c2) = (s1.autocov[&lag], s2.autocov[&lag]);
            // SE of an autocovariance estimate over W near-independent blocks
            // is about c(0) * sqrt(2 / W); the chain decorrelates in ~5 steps,
            // so inflate by that factor.
            let se = s1.variance * (2.0f64 / w as f64).sqrt() * 5.0f64.sqrt();
            assert!(
                (c1 - c2).abs() < 4.0 * se,
                "lag {lag}: window estimates {c1} and {c2} differ beyond 4 SE ({se})"
            );
        }
    }

    #[test]
    fn series_stats_variance_matches_lag_zero() {
        let xs = ar1(50_000, 0.3, 8);
        let stats = autocovariance(&xs, 3).unwrap();
        assert!((stats.variance - stats.autocov[&0]).abs() < 1e-12);
    }
}
