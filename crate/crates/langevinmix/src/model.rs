//! Model layer: drift fields H(θ, y) with certified structural constants.
//!
//! A model packages the gradient estimate H together with constants
//! (Δ, b, K) certifying, for every data point y with ‖y‖ ≤ M,
//!
//! ```text
//! ⟨H(θ, y), θ⟩ ≥ Δ‖θ‖² − b          (dissipativity)
//! ‖H(θ, y)‖  ≤ K(‖θ‖ + ‖y‖ + 1)     (linear growth),   K > Δ/√2
//! ```
//!
//! Those constants feed every downstream bound, so besides carrying them the
//! module can *audit* them: deterministic θ-grids paired with stream draws
//! sweep the claimed inequalities, and a Monte Carlo + finite-difference
//! check ties H to the population potential U when one is attached.
//! Audit failures come back as reports, not panics — a violated certificate
//! is a finding, not a crash.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::env::{DataStream, FiniteMarkovParams};
use crate::error::{Error, Result};

/// Parameter-space point (θ). Entries are finite by construction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamVector {
    pub coords: Vec<f64>,
}

impl ParamVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::dim("parameter vector cannot be empty"));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("parameter vector has non-finite entries"));
        }
        Ok(ParamVector { coords })
    }

    pub fn zeros(d: usize) -> Self {
        ParamVector { coords: vec![0.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords)
    }
}

/// One observation from the data stream, as a flat coordinate vector.
/// For supervised models the label is part of the vector (first entry).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DataPoint {
    pub values: Vec<f64>,
}

impl DataPoint {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::dim("data point cannot be empty"));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("data point has non-finite entries"));
        }
        Ok(DataPoint { values })
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

pub(crate) fn norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

type FieldFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type MeanFieldFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A drift field with its certified constants.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    /// Parameter dimension d.
    pub d: usize,
    /// Data dimension m.
    pub m: usize,
    /// Inverse temperature; the plain kernel noise is √(2λ/β)·ξ.
    pub beta: f64,
    /// Dissipativity constants: ⟨H(θ,y),θ⟩ ≥ delta‖θ‖² − b for ‖y‖ ≤ data_bound.
    pub delta: f64,
    pub b: f64,
    /// Growth constant: ‖H(θ,y)‖ ≤ k_growth(‖θ‖+‖y‖+1).
    pub k_growth: f64,
    /// Certified almost-sure bound on the data stream feeding this model.
    pub data_bound: f64,
    h: Arc<FieldFn>,
    /// Population potential U, when the data law is known in closed form.
    u: Option<Arc<ScalarFn>>,
    /// Population mean field h(θ) = E[H(θ, Y)], when known.
    mean_field: Option<Arc<MeanFieldFn>>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("m", &self.m)
            .field("beta", &self.beta)
            .field("delta", &self.delta)
            .field("b", &self.b)
            .field("k_growth", &self.k_growth)
            .field("data_bound", &self.data_bound)
            .field("has_potential", &self.u.is_some())
            .finish()
    }
}

impl ModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        d: usize,
        m: usize,
        delta: f64,
        b: f64,
        k_growth: f64,
        data_bound: f64,
        h: Arc<FieldFn>,
    ) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::dim("model dimensions must be positive"));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid("delta must be positive"));
        }
        if !(b >= 0.0 && b.is_finite()) {
            return Err(Error::invalid("b must be nonnegative"));
        }
        if !(k_growth > 0.0 && k_growth.is_finite()) {
            return Err(Error::invalid("k_growth must be positive"));
        }
        if k_growth <= delta / std::f64::consts::SQRT_2 {
            return Err(Error::invalid(format!(
                "growth constant K = {k_growth} must exceed delta/sqrt(2) = {}",
                delta / std::f64::consts::SQRT_2
            )));
        }
        if !(data_bound > 0.0 && data_bound.is_finite()) {
            return Err(Error::invalid("data_bound must be positive"));
        }
        Ok(ModelSpec {
            name: name.into(),
            d,
            m,
            beta: 1.0,
            delta,
            b,
            k_growth,
            data_bound,
            h,
            u: None,
            mean_field: None,
        })
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid("beta must be positive"));
        }
        self.beta = beta;
        Ok(self)
    }

    pub fn with_potential(mut self, u: Arc<ScalarFn>, mean_field: Arc<MeanFieldFn>) -> Self {
        self.u = Some(u);
        self.mean_field = Some(mean_field);
        self
    }

    pub fn has_potential(&self) -> bool {
        self.u.is_some()
    }

    pub fn potential(&self, theta: &[f64]) -> Result<f64> {
        match &self.u {
            Some(u) => Ok(u(theta)),
            None => Err(Error::Unsupported(format!(
                "model '{}' carries no population potential",
                self.name
            ))),
        }
    }

    pub fn mean_field(&self, theta: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.mean_field {
            Some(h) => {
                h(theta, out);
                Ok(())
            }
            None => Err(Error::Unsupported(format!(
                "model '{}' carries no population mean field",
                self.name
            ))),
        }
    }

    /// Largest step size the convergence theory admits: λ ≤ Δ/K².
    pub fn lambda_max(&self) -> f64 {
        self.delta / (self.k_growth * self.k_growth)
    }

    /// Writes H(θ, y) into `out` without allocating. Hot-loop entry point.
    #[inline]
    pub fn h_raw(&self, theta: &[f64], y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(theta.len(), self.d);
        debug_assert_eq!(y.len(), self.m);
        debug_assert_eq!(out.len(), self.d);
        (self.h)(theta, y, out);
    }
}

/// Evaluates the drift field at (θ, y), validating dimensions.
pub fn evaluate_h(model: &ModelSpec, theta: &ParamVector, y: &DataPoint) -> Result<ParamVector> {
    if theta.dim() != model.d {
        return Err(Error::dim(format!(
            "theta has dimension {}, model expects {}",
            theta.dim(),
            model.d
        )));
    }
    if y.values.len() != model.m {
        return Err(Error::dim(format!(
            "data point has dimension {}, model expects {}",
            y.values.len(),
            model.m
        )));
    }
    let mut out = vec![0.0; model.d];
    model.h_raw(&theta.coords, &y.values, &mut out);
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("drift field produced non-finite output".into()));
    }
    ParamVector::new(out)
}

/// Gaussian-target toy model: H(θ, y) = θ − y with m = d.
///
/// Certificates (for ‖y‖ ≤ data_bound = M, by Young's inequality):
/// Δ = 1/2, b = M²/2, K = 1. The attached potential U(θ) = ‖θ‖²/2 assumes a
/// centered stream (E[Y] = 0); with it, h(θ) = θ exactly.
pub fn make_linear_model(d: usize, data_bound: f64) -> Result<ModelSpec> {
    let u: Arc<ScalarFn> = Arc::new(|theta: &[f64]| 0.5 * theta.iter().map(|x| x * x).sum::<f64>());
    let hf: Arc<MeanFieldFn> = Arc::new(|theta: &[f64], out: &mut [f64]| {
        out.copy_from_slice(theta);
    });
    Ok(make_model_linear_inner(d, data_bound)?.with_potential(u, hf))
}

fn make_model_linear_inner(d: usize, data_bound: f64) -> Result<ModelSpec> {
    let h: Arc<FieldFn> = Arc::new(|theta: &[f64], y: &[f64], out: &mut [f64]| {
        for i in 0..theta.len() {
            out[i] = theta[i] - y[i];
        }
    });
    ModelSpec::new(
        "linear",
        d,
        d,
        0.5,
        0.5 * data_bound * data_bound,
        1.0,
        data_bound,
        h,
    )
}

/// Numerically stable logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Ridge-regularized logistic regression on labeled pairs y = (q, z) with
/// q ∈ {0,1}, z ∈ ℝ^d, ‖z‖ ≤ M_z:
///
/// ```text
/// H(θ, (q, z)) = −(q − σ(⟨θ, z⟩)) z + 2c θ
/// ```
///
/// Certificates: Δ = c, b = M_z²/(4c) (Young), K = max(1, 2c),
/// stream bound M = √(1 + M_z²). No potential is attached: U depends on the
/// data law; see [`logistic_potential`].
pub fn make_logistic_model(d: usize, c: f64, z_bound: f64) -> Result<ModelSpec> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid("ridge coefficient c must be positive"));
    }
    if !(z_bound > 0.0 && z_bound.is_finite()) {
        return Err(Error::invalid("z_bound must be positive"));
    }
    let h: Arc<FieldFn> = Arc::new(move |theta: &[f64], y: &[f64], out: &mut [f64]| {
        let q = y[0];
        let z = &y[1..];
        let s = sigmoid(dot(theta, z));
        let w = q - s;
        for i in 0..theta.len() {
            out[i] = -w * z[i] + 2.0 * c * theta[i];
        }
    });
    ModelSpec::new(
        "logistic",
        d,
        d + 1,
        c,
        z_bound * z_bound / (4.0 * c),
        (2.0 * c).max(1.0),
        (1.0 + z_bound * z_bound).sqrt(),
        h,
    )
}

/// Builds the population potential and mean field of the logistic model for a
/// finite-state data law (states weighted by the stationary distribution):
///
/// ```text
/// U(θ) = Σ_s π_s [softplus(⟨θ,z_s⟩) − q_s⟨θ,z_s⟩] + c‖θ‖²
/// h(θ) = Σ_s π_s H(θ, y_s)
/// ```
///
/// `env.states` rows are (q, z_1, .., z_d). Attach to a model via
/// [`ModelSpec::with_potential`].
pub fn logistic_potential(
    c: f64,
    env: &FiniteMarkovParams,
) -> Result<(Arc<ScalarFn>, Arc<MeanFieldFn>)> {
    let states = env.states.clone();
    let pi = env.stationary()?;
    for st in &states {
        let q = st[0];
        if q != 0.0 && q != 1.0 {
            return Err(Error::invalid("logistic states need binary labels in the first slot"));
        }
    }
    let states_u = states.clone();
    let pi_u = pi.clone();
    let u: Arc<ScalarFn> = Arc::new(move |theta: &[f64]| {
        let ridge: f64 = c * theta.iter().map(|x| x * x).sum::<f64>();
        let nll: f64 = states_u
            .iter()
            .zip(&pi_u)
            .map(|(st, &w)| {
                let q = st[0];
                let t = dot(theta, &st[1..]);
                w * (softplus(t) - q * t)
            })
            .sum();
        nll + ridge
    });
    let h: Arc<MeanFieldFn> = Arc::new(move |theta: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (st, &w) in states.iter().zip(&pi) {
            let q = st[0];
            let z = &st[1..];
            let s = sigmoid(dot(theta, z));
            let diff = q - s;
            for i in 0..out.len() {
                out[i] += w * (-diff * z[i] + 2.0 * c * theta[i]);
            }
        }
    });
    Ok((u, h))
}

/// Test profile φ with a certified growth envelope |φ(θ)| ≤ c_φ(1 + ‖θ‖^r).
#[derive(Clone)]
pub struct GrowthProfile {
    pub name: String,
    pub c_phi: f64,
    pub r: f64,
    f: Arc<ScalarFn>,
}

impl fmt::Debug for GrowthProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrowthProfile")
            .field("name", &self.name)
            .field("c_phi", &self.c_phi)
            .field("r", &self.r)
            .finish()
    }
}

impl GrowthProfile {
    /// Builds a profile, sweeping the growth envelope on a deterministic grid
    /// (radius 10, 512 points) before accepting it.
    pub fn validated(
        name: impl Into<String>,
        c_phi: f64,
        r: f64,
        d: usize,
        f: Arc<ScalarFn>,
    ) -> Result<Self> {
        if !(c_phi > 0.0 && r >= 0.0) {
            return Err(Error::invalid("growth envelope needs c_phi > 0, r >= 0"));
        }
        let profile = GrowthProfile { name: name.into(), c_phi, r, f };
        for theta in kronecker_ball_grid(d, 10.0, 512) {
            let v = profile.eval(&theta).abs();
            let envelope = c_phi * (1.0 + norm(&theta).powf(r));
            if v > envelope * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "profile '{}' violates its growth envelope at theta = {:?}: |phi| = {v}, envelope = {envelope}",
                    profile.name, theta
                )));
            }
        }
        Ok(profile)
    }

    #[inline]
    pub fn eval(&self, theta: &[f64]) -> f64 {
        (self.f)(theta)
    }

    /// φ(θ) = θ_i, with c_φ = 1, r = 1.
    pub fn coordinate(d: usize, i: usize) -> Result<Self> {
        if i >= d {
            return Err(Error::dim("coordinate index out of range"));
        }
        Self::validated(format!("coordinate_{i}"), 1.0, 1.0, d, Arc::new(move |t: &[f64]| t[i]))
    }

    /// φ(θ) = ‖θ‖², with c_φ = 1, r = 2.
    pub fn sq_norm(d: usize) -> Result<Self> {
        Self::validated(
            "sq_norm",
            1.0,
            2.0,
            d,
            Arc::new(|t: &[f64]| t.iter().map(|x| x * x).sum::<f64>()),
        )
    }

    /// φ(θ) = θ_i³, with c_φ = 1, r = 3.
    pub fn coord_cube(d: usize, i: usize) -> Result<Self> {
        if i >= d {
            return Err(Error::dim("coordinate index out of range"));
        }
        Self::validated(
            format!("coord_cube_{i}"),
            1.0,
            3.0,
            d,
            Arc::new(move |t: &[f64]| t[i] * t[i] * t[i]),
        )
    }
}

/// Outcome of a structural audit. `worst_margin` is signed so that
/// nonnegative means "inequality satisfied with that much slack".
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub check: String,
    pub passed: bool,
    pub n_checked: usize,
    pub worst_margin: f64,
    pub witness_theta: Option<Vec<f64>>,
    pub witness_y: Option<Vec<f64>>,
    pub detail: String,
}

/// Slack below which a sampled inequality margin counts as a violation;
/// absorbs accumulated rounding in the margin arithmetic itself.
pub const AUDIT_TOLERANCE: f64 = 1e-9;

/// Low-discrepancy points in the ball of radius `radius`.
///
/// Uses the d-dimensional Kronecker sequence with the generalized-golden-
/// ratio increments, mapped to the enclosing cube and filtered to the ball.
/// Deterministic: same (d, radius, n) always yields the same points.
pub(crate) fn kronecker_ball_grid(d: usize, radius: f64, n: usize) -> Vec<Vec<f64>> {
    // Root of x^{d+1} = x + 1 by fixed-point iteration.
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
    }
    let alphas: Vec<f64> = (1..=d).map(|i| (1.0 / phi.powi(i as i32)).fract()).collect();
    let mut out = Vec::with_capacity(n);
    let mut k = 1u64;
    while out.len() < n {
        let point: Vec<f64> = alphas
            .iter()
            .map(|a| (0.5 + a * k as f64).fract() * 2.0 - 1.0)
            .map(|u| u * radius)
            .collect();
        if norm(&point) <= radius {
            out.push(point);
        }
        k += 1;
        if k > 64 * n as u64 + 1024 {
            break; // Ball fraction of the cube got too small; return what we have.
        }
    }
    out
}

/// Sweeps ⟨H(θ,y), θ⟩ − Δ‖θ‖² + b over a deterministic θ-grid in the ball of
/// `grid_radius`, pairing each grid point with a fresh stream draw.
pub fn check_dissipativity(
    model: &ModelSpec,
    stream: &mut dyn DataStream,
    n_samples: usize,
    grid_radius: f64,
) -> Result<ValidationReport> {
    check_stream_shape(model, stream)?;
    let grid = kronecker_ball_grid(model.d, grid_radius, n_samples);
    let mut buf = vec![0.0; model.d];
    let mut worst = f64::INFINITY;
    let mut witness: Option<(Vec<f64>, Vec<f64>)> = None;
    for theta in &grid {
        let y = stream.next_point();
        model.h_raw(theta, &y, &mut buf);
        let margin = dot(&buf, theta) - model.delta * dot(theta, theta) + model.b;
        if margin < worst {
            worst = margin;
            witness = Some((theta.clone(), y.clone()));
        }
    }
    let passed = worst >= -AUDIT_TOLERANCE;
    let (wt, wy) = witness.map(|(t, y)| (Some(t), Some(y))).unwrap_or((None, None));
    Ok(ValidationReport {
        check: "dissipativity".into(),
        passed,
        n_checked: grid.len(),
        worst_margin: worst,
        witness_theta: if passed { None } else { wt },
        witness_y: if passed { None } else { wy },
        detail: format!(
            "min over samples of <H(theta,y),theta> - delta*|theta|^2 + b with delta = {}, b = {}",
            model.delta, model.b
        ),
    })
}

/// Sweeps K(‖θ‖+‖y‖+1) − ‖H(θ,y)‖ over the same kind of grid.
pub fn check_linear_growth(
    model: &ModelSpec,
    stream: &mut dyn DataStream,
    n_samples: usize,
    grid_radius: f64,
) -> Result<ValidationReport> {
    check_stream_shape(model, stream)?;
    let grid = kronecker_ball_grid(model.d, grid_radius, n_samples);
    let mut buf = vec![0.0; model.d];
    let mut worst = f64::INFINITY;
    let mut witness: Option<(Vec<f64>, Vec<f64>)> = None;
    for theta in &grid {
        let y = stream.next_point();
        model.h_raw(theta, &y, &mut buf);
        let margin = model.k_growth * (norm(theta) + norm(&y) + 1.0) - norm(&buf);
        if margin < worst {
            worst = margin;
            witness = Some((theta.clone(), y.clone()));
        }
    }
    let passed = worst >= -AUDIT_TOLERANCE;
    let (wt, wy) = witness.map(|(t, y)| (Some(t), Some(y))).unwrap_or((None, None));
    Ok(ValidationReport {
        check: "linear_growth".into(),
        passed,
        n_checked: grid.len(),
        worst_margin: worst,
        witness_theta: if passed { None } else { wt },
        witness_y: if passed { None } else { wy },
        detail: format!(
            "min over samples of K*(|theta|+|y|+1) - |H(theta,y)| with K = {}",
            model.k_growth
        ),
    })
}

/// Ties the drift field to the attached potential: at each grid point the
/// Monte Carlo average of H(θ, Y) over `n_mc` consecutive stream draws is
/// compared against the central finite-difference gradient of U.
///
/// The reported error is max over grid points of
/// ‖mc − fd‖ / max(1, ‖fd‖): near-critical points make a pointwise relative
/// error unattainable at any finite MC budget, so the denominator is floored
/// at 1 (the natural scale of H for these models).
#[allow(clippy::too_many_arguments)]
pub fn check_gradient_consistency(
    model: &ModelSpec,
    stream: &mut dyn DataStream,
    grid_radius: f64,
    n_points: usize,
    n_mc: usize,
    fd_step: f64,
    threshold: f64,
) -> Result<ValidationReport> {
    check_stream_shape(model, stream)?;
    if !model.has_potential() {
        return Err(Error::Unsupported(format!(
            "model '{}' has no potential to check against",
            model.name
        )));
    }
    if !(fd_step > 0.0 && fd_step.is_finite()) {
        return Err(Error::invalid("fd_step must be positive"));
    }
    if n_mc == 0 {
        return Err(Error::invalid("n_mc must be positive"));
    }
    let grid = kronecker_ball_grid(model.d, grid_radius, n_points);
    // One shared pool of draws keeps the check O(n_mc) rather than
    // O(n_points * n_mc); the MC average at each θ reuses the same sample.
    let draws: Vec<Vec<f64>> = (0..n_mc).map(|_| stream.next_point()).collect();
    let mut buf = vec![0.0; model.d];
    let mut worst = 0.0f64;
    let mut witness: Option<Vec<f64>> = None;
    for theta in &grid {
        let mut mc = vec![0.0; model.d];
        for y in &draws {
            model.h_raw(theta, y, &mut buf);
            for i in 0..model.d {
                mc[i] += buf[i];
            }
        }
        for v in mc.iter_mut() {
            *v /= n_mc as f64;
        }
        let mut fd = vec![0.0; model.d];
        let mut probe = theta.clone();
        for i in 0..model.d {
            probe[i] = theta[i] + fd_step;
            let up = model.potential(&probe)?;
            probe[i] = theta[i] - fd_step;
            let down = model.potential(&probe)?;
            probe[i] = theta[i];
            fd[i] = (up - down) / (2.0 * fd_step);
        }
        let diff: Vec<f64> = mc.iter().zip(&fd).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&fd).max(1.0);
        if rel > worst {
            worst = rel;
            witness = Some(theta.clone());
        }
    }
    let passed = worst < threshold;
    Ok(ValidationReport {
        check: "gradient_consistency".into(),
        passed,
        n_checked: grid.len(),
        worst_margin: threshold - worst,
        witness_theta: if passed { None } else { witness },
        witness_y: None,
        detail: format!(
            "max over {} grid points of |mc - fd| / max(1, |fd|) = {:.3e} (threshold {:.3e}, n_mc = {}, fd_step = {:.1e})",
            grid.len(),
            worst,
            threshold,
            n_mc,
            fd_step
        ),
    })
}

fn check_stream_shape(model: &ModelSpec, stream: &dyn DataStream) -> Result<()> {
    if stream.dim() != model.m {
        return Err(Error::dim(format!(
            "stream emits dimension {}, model expects {}",
            stream.dim(),
            model.m
        )));
    }
    if stream.bound() > model.data_bound * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "stream bound {} exceeds the model's certified data bound {}",
            stream.bound(),
            model.data_bound
        )));
    }
    Ok(())
}
