//! Small numerical toolbox shared across modules.
//!
//! Everything here is deterministic and allocation-light: compensated sums,
//! log-space arithmetic (several theory constants overflow/underflow f64 in
//! linear space), the standard-normal CDF, log-Γ, the Kolmogorov tail, a
//! least-squares line fit, and a Wilson score interval.

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma as statrs_ln_gamma;

/// Neumaier-compensated sum; immune to the cancellation that plain
/// accumulation suffers on long oscillating series.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Streaming counterpart of [`compensated_sum`] for accumulation across loop
/// iterations where building an iterator is awkward.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningSum {
    sum: f64,
    comp: f64,
}

impl RunningSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// ln(e^a + e^b) without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// ln(Σ e^{x_i}) without overflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY || !hi.is_finite() {
        return hi;
    }
    let s: f64 = xs.iter().map(|&x| (x - hi).exp()).sum();
    hi + s.ln()
}

/// ln(e^a − e^b) for a > b; NEG_INFINITY when the difference vanishes.
pub fn log_sub_exp(a: f64, b: f64) -> f64 {
    debug_assert!(a >= b, "log_sub_exp needs a >= b, got {a} < {b}");
    if b == f64::NEG_INFINITY {
        return a;
    }
    let d = -(b - a).exp();
    if d <= -1.0 {
        return f64::NEG_INFINITY;
    }
    a + d.ln_1p()
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// ln Γ(x) for x > 0 (Lanczos-class approximation, ~1e-13 relative).
pub fn ln_gamma(x: f64) -> f64 {
    statrs_ln_gamma(x)
}

/// ln of the volume of the Euclidean ball of radius `r` in `d` dimensions:
/// ln(π^{d/2} r^d / Γ(d/2 + 1)).
pub fn ln_ball_volume(d: usize, r: f64) -> f64 {
    let d_f = d as f64;
    0.5 * d_f * std::f64::consts::PI.ln() + d_f * r.ln() - ln_gamma(0.5 * d_f + 1.0)
}

/// Survival function of the Kolmogorov distribution,
/// Q(t) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2 k² t²}, clamped to [0, 1].
pub fn kolmogorov_survival(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t > 8.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * t * t).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Ordinary least squares for y = intercept + slope·x.
/// Returns (slope, intercept, r²). r² is 1 for a perfect fit and 0 when the
/// fit explains nothing; a constant y series yields r² = 1 by convention
/// (zero residuals).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len(), "linear_fit needs paired samples");
    let n = xs.len() as f64;
    assert!(xs.len() >= 2, "linear_fit needs at least two points");
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    assert!(sxx > 0.0, "linear_fit needs non-degenerate abscissae");
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    (slope, intercept, r2)
}

/// Upper confidence limit of a binomial proportion by the Wilson score
/// method. `z` is the standard-normal quantile of the one-sided level
/// (2.5758 for 99.5%, 2.3263 for 99%).
pub fn wilson_upper(successes: u64, trials: u64, z: f64) -> f64 {
    if trials == 0 {
        return 1.0;
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = p + z2 / (2.0 * n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center + half) / denom).min(1.0)
}

/// One-sided 99% standard-normal quantile.
pub const Z_99: f64 = 2.326347874040841;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive_on_cancelling_series() {
        // Σ (1e16 + 1 − 1e16) over pairs = n exactly.
        let mut xs = Vec::new();
        for _ in 0..1000 {
            xs.push(1e16);
            xs.push(1.0);
            xs.push(-1e16);
        }
        let s = compensated_sum(xs.iter().cloned());
        assert_eq!(s, 1000.0, "compensated sum lost the small terms: {s}");
    }

    #[test]
    fn log_space_arithmetic_round_trips() {
        let a: f64 = 3.0;
        let b: f64 = 1.0;
        assert!((log_add_exp(a.ln(), b.ln()).exp() - 4.0).abs() < 1e-12);
        assert!((log_sub_exp(a.ln(), b.ln()).exp() - 2.0).abs() < 1e-12);
        assert!((log_sum_exp(&[a.ln(), b.ln(), 0.0]).exp() - 5.0).abs() < 1e-12);
        // No overflow at magnitudes far beyond f64 linear range.
        let big = log_add_exp(800.0, 800.0);
        assert!((big - (800.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn normal_cdf_reference_values() {
        // The backing erfc is accurate to roughly 1.4e-11 in absolute terms,
        // far below anything the statistics here can resolve; test at 1e-10.
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.0) - 0.841344746068542949).abs() < 1e-10);
        assert!((normal_cdf(-1.0) - 0.158655253931457051).abs() < 1e-10);
        assert!((normal_cdf(2.0) - 0.977249868051820793).abs() < 1e-10);
    }

    #[test]
    fn ln_gamma_is_lanczos_accurate() {
        // Γ(1)=1, Γ(2)=1, Γ(5)=24, Γ(0.5)=√π, Γ(22)=21!; require 1e-12 relative.
        let cases = [
            (1.0, 0.0),
            (2.0, 0.0),
            (5.0, 24.0f64.ln()),
            (0.5, std::f64::consts::PI.sqrt().ln()),
            (22.0, 45.380138898476908),
        ];
        for (x, want) in cases {
            let got = ln_gamma(x);
            let rel = if want == 0.0 { got.abs() } else { ((got - want) / want).abs() };
            assert!(rel < 1e-12, "ln_gamma({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn ball_volume_matches_known_dimensions() {
        // d=1: 2r, d=2: πr², d=3: 4πr³/3.
        assert!((ln_ball_volume(1, 1.0).exp() - 2.0).abs() < 1e-12);
        assert!((ln_ball_volume(2, 1.0).exp() - std::f64::consts::PI).abs() < 1e-12);
        assert!((ln_ball_volume(3, 2.0).exp() - 4.0 / 3.0 * std::f64::consts::PI * 8.0).abs() < 1e-10);
    }

    #[test]
    fn kolmogorov_survival_reference_values() {
        // Alternating-series partial sums, checked by hand to 1e-12.
        assert!((kolmogorov_survival(0.5) - 0.9639452436648750).abs() < 1e-10);
        assert!((kolmogorov_survival(1.0) - 0.2699996716773545).abs() < 1e-10);
        assert!((kolmogorov_survival(2.0) - 6.709252558050237e-4).abs() < 1e-10);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        assert_eq!(kolmogorov_survival(9.0), 0.0);
    }

    #[test]
    fn linear_fit_recovers_exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 - 0.7 * x).collect();
        let (slope, intercept, r2) = linear_fit(&xs, &ys);
        assert!((slope + 0.7).abs() < 1e-12);
        assert!((intercept - 2.5).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wilson_upper_covers_point_estimate() {
        let u = wilson_upper(50, 100, Z_99);
        assert!(u > 0.5 && u < 0.65, "wilson upper {u}");
        assert_eq!(wilson_upper(0, 0, Z_99), 1.0);
        assert!(wilson_upper(100, 100, Z_99) <= 1.0);
    }
}
