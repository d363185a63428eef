//! Independent references the engine and estimators are validated against:
//! a deterministic fixed-point computation of the joint stationary law on a
//! grid, closed forms for the linear (AR(1)) model, and a deterministic
//! minimizer for population potentials over finite-state data laws.
//!
//! Nothing here draws a random number; agreement between these outputs and
//! the Monte Carlo side is evidence for both.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::FiniteMarkovParams;
use crate::error::{Error, Result};
use crate::model::{norm, ModelSpec, ParamVector};
use crate::numeric::normal_cdf;
use crate::stats::EmpiricalLaw;

// ---------------------------------------------------------------------------
// Grid fixed point of the joint (theta, state) kernel
// ---------------------------------------------------------------------------

/// Uniform one-dimensional grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n_cells: usize,
}

impl GridSpec {
    pub fn cell_width(&self) -> f64 {
        (self.hi - self.lo) / self.n_cells as f64
    }

    pub fn cell_centers(&self) -> Vec<f64> {
        let w = self.cell_width();
        (0..self.n_cells).map(|c| self.lo + (c as f64 + 0.5) * w).collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::InvalidParameter(format!(
                "degenerate grid box [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.n_cells < 10 {
            return Err(Error::InvalidParameter(format!(
                "{} cells is too coarse for a law oracle",
                self.n_cells
            )));
        }
        Ok(())
    }
}

/// 4-point Gauss–Legendre rule on [-1, 1].
const GL_NODES: [f64; 4] =
    [-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526];
const GL_WEIGHTS: [f64; 4] =
    [0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538];

/// One application of the joint kernel, discretised: the theta update is
/// integrated exactly in its Gaussian noise (normal CDF differences over the
/// target cells), the source cell by Gauss–Legendre quadrature, and the
/// environment moves by its transition matrix. Gaussian mass falling outside
/// the box is folded into the nearest edge cell, so every row is an exact
/// probability vector.
pub struct JointKernel {
    pub grid: GridSpec,
    pub n_states: usize,
    /// Per-state theta kernels, each `n_cells x n_cells` row-major.
    theta_kernels: Vec<Vec<f64>>,
    /// Environment transition matrix, rows summing to 1.
    p: Vec<Vec<f64>>,
}

impl JointKernel {
    /// Weights are indexed `cell * n_states + state`.
    pub fn apply(&self, weights: &[f64]) -> Vec<f64> {
        let n = self.grid.n_cells;
        let s_count = self.n_states;
        assert_eq!(weights.len(), n * s_count, "weight vector shape mismatch");
        let mut out = vec![0.0; n * s_count];
        let mut u = vec![0.0; n];
        for s in 0..s_count {
            u.fill(0.0);
            for c in 0..n {
                let w = weights[c * s_count + s];
                if w == 0.0 {
                    continue;
                }
                let row = &self.theta_kernels[s][c * n..(c + 1) * n];
                for (uc, &a) in u.iter_mut().zip(row) {
                    *uc += w * a;
                }
            }
            for (cp, &mass) in u.iter().enumerate() {
                for sp in 0..s_count {
                    out[cp * s_count + sp] += mass * self.p[s][sp];
                }
            }
        }
        out
    }
}

/// Builds the discretised joint kernel for a scalar model and a finite-state
/// scalar environment.
pub fn build_joint_kernel(
    model: &ModelSpec,
    env: &FiniteMarkovParams,
    lambda: f64,
    grid: &GridSpec,
) -> Result<JointKernel> {
    if model.d != 1 {
        return Err(Error::Unsupported(format!(
            "grid oracle handles dimension 1 only, model has {}",
            model.d
        )));
    }
    if env.dim() != model.m {
        return Err(Error::Dimension(format!(
            "environment emits dimension {}, model consumes {}",
            env.dim(),
            model.m
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {lambda}")));
    }
    env.validate()?;
    grid.validate()?;
    let n = grid.n_cells;
    let h_cell = grid.cell_width();
    let sigma = (2.0 * lambda / model.beta).sqrt();
    let edges: Vec<f64> = (0..=n).map(|c| grid.lo + c as f64 * h_cell).collect();
    let mut theta_kernels = Vec::with_capacity(env.n_states());
    let mut h_out = [0.0f64];
    for state in &env.states {
        let mut a = vec![0.0; n * n];
        for c in 0..n {
            let center = grid.lo + (c as f64 + 0.5) * h_cell;
            let row = &mut a[c * n..(c + 1) * n];
            for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS) {
                let theta = center + 0.5 * h_cell * node;
                model.h_raw(&[theta], state, &mut h_out);
                let mu = theta - lambda * h_out[0];
                // CDF at every interior edge; edge cells absorb the tails.
                let gw = weight / 2.0;
                let mut prev = 0.0; // Phi(-inf)
                for cp in 0..n {
                    let cur = if cp + 1 == n { 1.0 } else { normal_cdf((edges[cp + 1] - mu) / sigma) };
                    row[cp] += gw * (cur - prev);
                    prev = cur;
                }
            }
            // Rows are probability vectors up to roundoff; pin them exactly.
            let sum: f64 = row.iter().sum();
            if !((sum - 1.0).abs() < 1e-12) {
                return Err(Error::Numerical(format!(
                    "kernel row mass {sum} deviates from 1 beyond roundoff"
                )));
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        theta_kernels.push(a);
    }
    Ok(JointKernel { grid: *grid, n_states: env.n_states(), theta_kernels, p: env.p.clone() })
}

/// Deterministic stand-in for the limiting law of `(theta_n, Y_n)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridLaw {
    pub grid: GridSpec,
    pub n_states: usize,
    /// Joint masses, `cell * n_states + state`, summing to 1.
    pub weights: Vec<f64>,
    /// L1 distance between successive iterates, one entry per iteration.
    pub l1_log: Vec<f64>,
    pub iterations: usize,
}

impl GridLaw {
    pub fn theta_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_cells];
        for (i, &w) in self.weights.iter().enumerate() {
            out[i / self.n_states] += w;
        }
        out
    }

    /// Midpoint-mass mean and variance of the theta marginal. The variance
    /// carries the usual grouping bias of about `cell_width^2 / 12`.
    pub fn theta_moments(&self) -> (f64, f64) {
        let centers = self.grid.cell_centers();
        let marginal = self.theta_marginal();
        let mean: f64 = centers.iter().zip(&marginal).map(|(x, w)| x * w).sum();
        let var: f64 =
            centers.iter().zip(&marginal).map(|(x, w)| (x - mean) * (x - mean) * w).sum();
        (mean, var)
    }

    /// The theta marginal as a histogram law on the grid's own binning.
    pub fn to_empirical_law(&self) -> Result<EmpiricalLaw> {
        EmpiricalLaw::from_masses(self.theta_marginal(), self.grid.lo, self.grid.hi, 0.0, 0.0)
    }

    /// `cell_center, state, mass` rows.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "cell_center,state,mass")?;
        let centers = self.grid.cell_centers();
        for (c, &x) in centers.iter().enumerate() {
            for s in 0..self.n_states {
                writeln!(w, "{x:.17e},{s},{:.17e}", self.weights[c * self.n_states + s])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Iterates the joint kernel from a point mass at theta = 0 (environment at
/// its stationary law) until successive iterates are within 1e-10 in L1.
/// Errors if `iters` is exhausted first, or if the converged law presses
/// against the box edge (the box must cover the stationary law comfortably).
pub fn grid_stationary_law(
    model: &ModelSpec,
    env: &FiniteMarkovParams,
    lambda: f64,
    grid: &GridSpec,
    iters: usize,
) -> Result<GridLaw> {
    let kernel = build_joint_kernel(model, env, lambda, grid)?;
    let n = grid.n_cells;
    let s_count = kernel.n_states;
    let pi = env.stationary()?;
    let mut weights = vec![0.0; n * s_count];
    let zero_cell =
        (((0.0 - grid.lo) / grid.cell_width()) as usize).min(n - 1);
    for (s, &mass) in pi.iter().enumerate() {
        weights[zero_cell * s_count + s] = mass;
    }
    let mut l1_log = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..iters {
        let next = kernel.apply(&weights);
        let l1: f64 = weights.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        weights = next;
        l1_log.push(l1);
        iterations += 1;
        if l1 < 1e-10 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "grid fixed point not reached in {iters} iterations; last L1 move {:.3e}",
            l1_log.last().copied().unwrap_or(f64::NAN)
        )));
    }
    let law = GridLaw { grid: *grid, n_states: s_count, weights, l1_log, iterations };
    let marginal = law.theta_marginal();
    let edge_mass = marginal[0].max(marginal[n - 1]);
    if edge_mass > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "box [{}, {}] too small: edge cell carries mass {edge_mass:.3e}",
            grid.lo, grid.hi
        )));
    }
    Ok(law)
}

// ---------------------------------------------------------------------------
// Closed forms for the linear model
// ---------------------------------------------------------------------------

/// Stationary and long-run moments of the scalar linear recursion
/// `theta' = (1 - lambda) theta + lambda Y + sqrt(2 lambda) xi`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Ar1ClosedForm {
    pub stat_mean: f64,
    pub stat_var: f64,
    /// Long-run variance of the identity observable.
    pub long_run_var: f64,
}

/// Closed forms with a dependent drive. `env_autocorr` maps lag `l >= 1` to
/// the autocorrelation of `Y`; lags beyond the map are treated as zero, so
/// the caller supplies the curve down to a negligible tail (see
/// [`geometric_autocorr`]). With `r = 1 - lambda`:
///
/// ```text
/// stat_mean    = env_mean
/// stat_var     = (lambda^2 v S_r + 2 lambda) / (1 - r^2),  S_r = 1 + 2 sum r^l rho_l
/// long_run_var = (lambda^2 v S_0 + 2 lambda) / lambda^2,   S_0 = 1 + 2 sum rho_l
/// ```
///
/// `S_r` comes from summing the doubly geometric series
/// `sum_{j,k >= 0} r^{j+k} Cov(Y_{-j}, Y_{-k})`; `S_0` is the long-run
/// variance of the drive itself, divided by the squared AR gain `(1 - r)^2
/// = lambda^2` at frequency zero.
pub fn ar1_closed_form(
    lambda: f64,
    env_mean: f64,
    env_var: f64,
    env_autocorr: &BTreeMap<usize, f64>,
) -> Result<Ar1ClosedForm> {
    if !(lambda > 0.0 && lambda < 2.0) {
        return Err(Error::InvalidParameter(format!(
            "the linear recursion is stable for lambda in (0, 2), got {lambda}"
        )));
    }
    if !(env_var >= 0.0 && env_var.is_finite() && env_mean.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "environment moments must be finite with v >= 0, got mean {env_mean}, var {env_var}"
        )));
    }
    let r = 1.0 - lambda;
    let mut s_r = 1.0;
    let mut s_0 = 1.0;
    for (&l, &rho) in env_autocorr {
        if l == 0 {
            if (rho - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "lag-0 autocorrelation must be 1, got {rho}"
                )));
            }
            continue;
        }
        if !(rho.is_finite() && rho.abs() <= 1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "autocorrelation at lag {l} out of range: {rho}"
            )));
        }
        s_r += 2.0 * r.powi(l as i32) * rho;
        s_0 += 2.0 * rho;
    }
    let stat_var = (lambda * lambda * env_var * s_r + 2.0 * lambda) / (1.0 - r * r);
    let long_run_var = (lambda * lambda * env_var * s_0 + 2.0 * lambda) / (lambda * lambda);
    Ok(Ar1ClosedForm { stat_mean: env_mean, stat_var, long_run_var })
}

/// Fills `rho_l = rho^l` until the tail drops below 1e-12 (the truncation
/// level the closed forms are quoted at).
pub fn geometric_autocorr(rho: f64) -> Result<BTreeMap<usize, f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "geometric autocorrelation needs |rho| < 1, got {rho}"
        )));
    }
    let mut out = BTreeMap::new();
    if rho == 0.0 {
        return Ok(out);
    }
    let mut v = rho;
    let mut l = 1;
    while v.abs() >= 1e-12 && l <= 100_000 {
        out.insert(l, v);
        v *= rho;
        l += 1;
    }
    Ok(out)
}

/// Stationary mean and variance of one coordinate of a finite chain's state.
pub fn markov_scalar_moments(env: &FiniteMarkovParams, coord: usize) -> Result<(f64, f64)> {
    if coord >= env.dim() {
        return Err(Error::Dimension(format!(
            "coordinate {coord} out of range for environment dimension {}",
            env.dim()
        )));
    }
    let pi = env.stationary()?;
    let mean: f64 = env.states.iter().zip(&pi).map(|(s, &w)| w * s[coord]).sum();
    let var: f64 =
        env.states.iter().zip(&pi).map(|(s, &w)| w * (s[coord] - mean) * (s[coord] - mean)).sum();
    Ok((mean, var))
}

/// Exact stationary autocorrelation curve of one state coordinate of a
/// finite chain, via repeated application of the transition matrix:
/// `E[z(X_0) z(X_l)] = sum_i pi_i z_i (P^l z)_i`. Truncated like
/// [`geometric_autocorr`], so the output feeds [`ar1_closed_form`] directly.
pub fn markov_scalar_autocorr(
    env: &FiniteMarkovParams,
    coord: usize,
) -> Result<BTreeMap<usize, f64>> {
    let (mean, var) = markov_scalar_moments(env, coord)?;
    if !(var > 0.0) {
        return Err(Error::InvalidParameter(
            "autocorrelation of a constant coordinate is undefined".into(),
        ));
    }
    let pi = env.stationary()?;
    let z: Vec<f64> = env.states.iter().map(|s| s[coord]).collect();
    let mut v = z.clone();
    let mut out = BTreeMap::new();
    for l in 1..=100_000usize {
        let next: Vec<f64> = env
            .p
            .iter()
            .map(|row| row.iter().zip(&v).map(|(pij, vj)| pij * vj).sum())
            .collect();
        v = next;
        let second: f64 = pi.iter().zip(&z).zip(&v).map(|((&w, &zi), &vi)| w * zi * vi).sum();
        let rho = (second - mean * mean) / var;
        if rho.abs() < 1e-12 {
            break;
        }
        out.insert(l, rho);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Population mean field and deterministic minimizer
// ---------------------------------------------------------------------------

/// Exact stationary expectation of the drift: `sum_s pi_s H(theta, y_s)`.
pub fn exact_mean_field(
    model: &ModelSpec,
    env: &FiniteMarkovParams,
    theta: &[f64],
) -> Result<Vec<f64>> {
    if theta.len() != model.d {
        return Err(Error::Dimension(format!(
            "theta has {} coordinates, model has dimension {}",
            theta.len(),
            model.d
        )));
    }
    if env.dim() != model.m {
        return Err(Error::Dimension(format!(
            "environment emits dimension {}, model consumes {}",
            env.dim(),
            model.m
        )));
    }
    let pi = env.stationary()?;
    let mut out = vec![0.0; model.d];
    let mut h = vec![0.0; model.d];
    for (state, &w) in env.states.iter().zip(&pi) {
        model.h_raw(theta, state, &mut h);
        for i in 0..model.d {
            out[i] += w * h[i];
        }
    }
    Ok(out)
}

/// Deterministic minimiser of the population potential: drives the exact
/// mean field to norm below `tol` by gradient descent with Barzilai–Borwein
/// step sizes (safeguarded). For the ridge-regularised logistic model the
/// potential is strictly convex, so the zero of the mean field is the unique
/// minimiser; starting point does not matter beyond roundoff.
pub fn logistic_minimizer(
    model: &ModelSpec,
    env: &FiniteMarkovParams,
    tol: f64,
) -> Result<ParamVector> {
    minimize_mean_field(model, env, &vec![0.0; model.d], tol)
}

/// The minimiser with an explicit starting point (used to confirm that the
/// answer is start-independent).
pub fn minimize_mean_field(
    model: &ModelSpec,
    env: &FiniteMarkovParams,
    start: &[f64],
    tol: f64,
) -> Result<ParamVector> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    const MAX_ITERS: usize = 100_000;
    let mut theta = start.to_vec();
    let mut g = exact_mean_field(model, env, &theta)?;
    let mut step = 1.0 / (1.0 + norm(&g));
    for _ in 0..MAX_ITERS {
        let g_norm = norm(&g);
        if g_norm < tol {
            return ParamVector::new(theta);
        }
        let theta_next: Vec<f64> =
            theta.iter().zip(&g).map(|(t, gi)| t - step * gi).collect();
        let g_next = exact_mean_field(model, env, &theta_next)?;
        // Safeguard: a strongly convex mean field cannot blow up along a
        // descent path; shrink the step if it did.
        if norm(&g_next) > 10.0 * g_norm {
            step *= 0.5;
            continue;
        }
        // Barzilai–Borwein: step = <dtheta, dg> / <dg, dg>.
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..theta.len() {
            let dt = theta_next[i] - theta[i];
            let dg = g_next[i] - g[i];
            num += dt * dg;
            den += dg * dg;
        }
        step = if den > 0.0 && num > 0.0 { (num / den).clamp(1e-8, 1e8) } else { step };
        theta = theta_next;
        g = g_next;
    }
    Err(Error::Numerical(format!(
        "minimiser stalled: mean-field norm {} after {MAX_ITERS} iterations (tol {tol})",
        norm(&g)
    )))
}
