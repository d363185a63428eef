//! Chain drivers.
//!
//! Two step kernels produce the same marginal law. The plain kernel is the
//! Gaussian update `theta - lambda H(theta, y) + sqrt(2 lambda / beta) xi`.
//! The split kernel realises that law inside a ball of radius `R` as an
//! explicit mixture: with probability `alpha_tilde` it draws uniformly from
//! the ball (a regeneration, independent of the current state), otherwise it
//! draws from the residual kernel by rejection. Regenerations are what let a
//! coupled pair of chains land on exactly the same point and merge.
//!
//! All randomness is counter-based: step `t` of a run seeded with `s` consumes
//! only the key `derive_key(s, Domain::Step, t)`, so runs replay bitwise from
//! `(theta0, env trace, key trace)` and replica ensembles parallelise without
//! any shared mutable generator.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{DataStream, FrozenTrajectory, Stream};
use crate::error::{Error, Result};
use crate::model::{norm, ModelSpec, ValidationReport};
use crate::numeric::{wilson_upper, RunningSum, Z_99};
use crate::rng::{derive_key, Domain, SubStream};
use crate::theory::minorization_constants;

/// Proposal budget for the residual-kernel rejection loop. The per-proposal
/// acceptance probability is at least `1 - alpha_tilde >= 1e-3`, so hitting
/// this cap signals a broken invariant rather than bad luck.
const REJECTION_CAP: usize = 1_000_000;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Run parameters for a single chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainConfig {
    pub lambda: f64,
    pub beta: f64,
    pub theta0: Vec<f64>,
    pub horizon: usize,
    pub seed: u64,
    /// Permit step sizes beyond `delta / K^2`. Such runs are exploratory:
    /// every certificate in [`crate::theory`] assumes the guarded range, so
    /// the resulting [`ChainRun`] is marked `out_of_theory`.
    #[serde(default)]
    pub allow_out_of_theory: bool,
}

impl ChainConfig {
    pub fn new(lambda: f64, beta: f64, theta0: Vec<f64>, horizon: usize, seed: u64) -> Self {
        Self { lambda, beta, theta0, horizon, seed, allow_out_of_theory: false }
    }

    pub fn with_out_of_theory(mut self) -> Self {
        self.allow_out_of_theory = true;
        self
    }

    /// Checks the config against a model; returns whether the step size lies
    /// beyond the certified range (only reachable with the override flag).
    pub fn validate(&self, model: &ModelSpec) -> Result<bool> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {}", self.lambda)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.beta != model.beta {
            return Err(Error::Config(format!(
                "config beta {} disagrees with model beta {}",
                self.beta, model.beta
            )));
        }
        if self.theta0.len() != model.d {
            return Err(Error::Dimension(format!(
                "start point has {} coordinates, model has dimension {}",
                self.theta0.len(),
                model.d
            )));
        }
        if self.theta0.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("start point has non-finite coordinates".into()));
        }
        let out_of_theory = self.lambda > model.lambda_max();
        if out_of_theory && !self.allow_out_of_theory {
            return Err(Error::Config(format!(
                "step size {} exceeds delta/K^2 = {}; set allow_out_of_theory to run anyway",
                self.lambda,
                model.lambda_max()
            )));
        }
        Ok(out_of_theory)
    }
}

/// Parameters of the split kernel. Constructed through [`SplitKernelParams::
/// from_theory`] so that `alpha_tilde` is exactly the minorization mass
/// certified for `(model, lambda, radius)` — an ad-hoc mass would silently
/// change the marginal law.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitKernelParams {
    /// Ball radius: regeneration region and support of the regeneration draw.
    pub radius: f64,
    /// Regeneration mass.
    pub alpha_tilde: f64,
    pub ln_m_floor: f64,
    /// Radius in noise units bounding any in-ball-to-in-ball displacement;
    /// the rejection test below is a genuine probability because of it.
    pub r_star: f64,
}

impl SplitKernelParams {
    pub fn from_theory(model: &ModelSpec, lambda: f64, radius: f64) -> Result<Self> {
        let mc = minorization_constants(model, lambda, radius)?;
        let alpha_tilde = mc.alpha_tilde();
        if !(alpha_tilde > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "regeneration mass underflows at radius {radius} (ln mass = {:.3}); \
                 shrink the ball before running the split kernel",
                mc.ln_alpha_tilde
            )));
        }
        Ok(Self { radius, alpha_tilde, ln_m_floor: mc.ln_m_floor, r_star: mc.r_star })
    }
}

/// Which kernel drives the run.
#[derive(Debug, Clone)]
pub enum StepMode {
    Plain,
    Split(SplitKernelParams),
}

// ---------------------------------------------------------------------------
// Run record
// ---------------------------------------------------------------------------

/// Everything needed to reconstruct a run bitwise: states, the environment
/// samples consumed, the per-step keys, and which steps regenerated.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub d: usize,
    /// `(horizon + 1) x d`, row-major; row 0 is the start point.
    pub thetas: Vec<f64>,
    pub env_trace: FrozenTrajectory,
    /// Key consumed by step `t` (the step producing row `t + 1`).
    pub eps_seed_trace: Vec<u64>,
    /// `true` where the regeneration branch fired; all `false` in plain mode.
    pub regeneration_flags: Vec<bool>,
    /// Step size exceeded the certified range.
    pub out_of_theory: bool,
}

impl ChainRun {
    pub fn horizon(&self) -> usize {
        self.regeneration_flags.len()
    }

    pub fn theta(&self, t: usize) -> &[f64] {
        &self.thetas[t * self.d..(t + 1) * self.d]
    }

    pub fn last_theta(&self) -> &[f64] {
        self.theta(self.horizon())
    }

    /// One coordinate across all recorded times.
    pub fn coordinate_series(&self, j: usize) -> Vec<f64> {
        assert!(j < self.d, "coordinate {j} out of range for dimension {}", self.d);
        self.thetas.iter().skip(j).step_by(self.d).copied().collect()
    }

    /// Writes `t, theta_1..theta_d, regenerated` rows. Row 0 reports the
    /// start point with `regenerated = 0`; row `t > 0` reports the flag of
    /// the step that produced it.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(w, "t")?;
        for j in 1..=self.d {
            write!(w, ",theta_{j}")?;
        }
        writeln!(w, ",regenerated")?;
        for t in 0..=self.horizon() {
            write!(w, "{t}")?;
            for x in self.theta(t) {
                write!(w, ",{x:.17e}")?;
            }
            let flag = if t > 0 && self.regeneration_flags[t - 1] { 1 } else { 0 };
            writeln!(w, ",{flag}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the θ rows in the flat binary trajectory layout (header m,
    /// bound, length; then row-major f64), with the realised max norm as the
    /// recorded bound so the file round-trips through the trajectory reader.
    pub fn write_binary<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let bound = (0..=self.horizon())
            .map(|t| norm(self.theta(t)))
            .fold(f64::MIN, f64::max)
            .max(f64::MIN_POSITIVE);
        let traj =
            FrozenTrajectory { m: self.d, bound, data: self.thetas.clone() };
        traj.write_binary(path.as_ref())
    }
}

// ---------------------------------------------------------------------------
// Step kernels
// ---------------------------------------------------------------------------

fn plain_update(
    model: &ModelSpec,
    lambda: f64,
    noise_scale: f64,
    theta: &[f64],
    y: &[f64],
    xi: &[f64],
    h_buf: &mut [f64],
    out: &mut [f64],
) {
    model.h_raw(theta, y, h_buf);
    for i in 0..out.len() {
        out[i] = theta[i] - lambda * h_buf[i] + noise_scale * xi[i];
    }
}

/// Uniform draw from the centred ball of the given radius. Consumes exactly
/// `d` normals plus one uniform whatever the outcome, and depends on nothing
/// but the key behind `sub` — that independence is what makes two chains
/// sharing a step key land on the same point when both regenerate.
fn draw_uniform_ball(radius: f64, sub: &mut SubStream, out: &mut [f64]) {
    sub.fill_standard_normal(out);
    let d = out.len();
    let r = radius * sub.next_uniform().powf(1.0 / d as f64);
    let g = norm(out);
    if g == 0.0 {
        out.fill(0.0);
        out[0] = r;
    } else {
        let s = r / g;
        for x in out.iter_mut() {
            *x *= s;
        }
    }
}

/// One split-kernel update. Returns whether the regeneration branch fired.
///
/// The regeneration test consumes the substream's first uniform even when the
/// state is outside the ball, so paired chains sharing a key always agree on
/// the test outcome.
fn split_update(
    model: &ModelSpec,
    lambda: f64,
    split: &SplitKernelParams,
    theta: &[f64],
    y: &[f64],
    sub: &mut SubStream,
    h_buf: &mut [f64],
    xi_buf: &mut [f64],
    out: &mut [f64],
) -> Result<bool> {
    let u = sub.next_uniform();
    let in_ball = norm(theta) <= split.radius;
    if in_ball && u <= split.alpha_tilde {
        draw_uniform_ball(split.radius, sub, out);
        return Ok(true);
    }
    let scale = (2.0 * lambda).sqrt();
    model.h_raw(theta, y, h_buf);
    if !in_ball {
        sub.fill_standard_normal(xi_buf);
        for i in 0..out.len() {
            out[i] = theta[i] - lambda * h_buf[i] + scale * xi_buf[i];
        }
        return Ok(false);
    }
    // Residual kernel: propose from the Gaussian update and thin away the
    // regeneration component. A proposal at squared noise norm q landing
    // inside the ball is rejected with probability exp((q - r_star^2) / 2),
    // which is <= 1 because in-ball displacements never exceed r_star noise
    // units. Proposals outside the ball are accepted outright: the
    // regeneration component has no mass there.
    for _ in 0..REJECTION_CAP {
        sub.fill_standard_normal(xi_buf);
        let mut xi_sq = 0.0;
        for i in 0..out.len() {
            out[i] = theta[i] - lambda * h_buf[i] + scale * xi_buf[i];
            xi_sq += xi_buf[i] * xi_buf[i];
        }
        if norm(out) > split.radius {
            return Ok(false);
        }
        let ln_reject = 0.5 * (xi_sq - split.r_star * split.r_star);
        if sub.next_uniform() >= ln_reject.exp() {
            return Ok(false);
        }
    }
    Err(Error::Numerical(format!(
        "residual rejection exhausted {REJECTION_CAP} proposals; \
         regeneration mass {} is inconsistent with the kernel",
        split.alpha_tilde
    )))
}

/// One plain Gaussian update with caller-supplied noise, checked.
pub fn step_plain(
    model: &ModelSpec,
    lambda: f64,
    beta: f64,
    theta: &[f64],
    y: &[f64],
    xi: &[f64],
) -> Result<Vec<f64>> {
    if theta.len() != model.d || xi.len() != model.d {
        return Err(Error::Dimension(format!(
            "theta/xi must have {} coordinates, got {}/{}",
            model.d,
            theta.len(),
            xi.len()
        )));
    }
    if y.len() != model.m {
        return Err(Error::Dimension(format!(
            "data point must have {} coordinates, got {}",
            model.m,
            y.len()
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite() && beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lambda and beta must be positive and finite, got {lambda}, {beta}"
        )));
    }
    let mut h_buf = vec![0.0; model.d];
    let mut out = vec![0.0; model.d];
    plain_update(model, lambda, (2.0 * lambda / beta).sqrt(), theta, y, xi, &mut h_buf, &mut out);
    Ok(out)
}

/// One split-kernel update driven by the 64-bit step key, checked. All the
/// step's randomness — the regeneration test and every draw after it — comes
/// from the substream behind `eps_key`.
pub fn step_split(
    model: &ModelSpec,
    lambda: f64,
    split: &SplitKernelParams,
    theta: &[f64],
    y: &[f64],
    eps_key: u64,
) -> Result<(Vec<f64>, bool)> {
    if theta.len() != model.d {
        return Err(Error::Dimension(format!(
            "theta must have {} coordinates, got {}",
            model.d,
            theta.len()
        )));
    }
    if y.len() != model.m {
        return Err(Error::Dimension(format!(
            "data point must have {} coordinates, got {}",
            model.m,
            y.len()
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {lambda}")));
    }
    let mut sub = SubStream::new(eps_key);
    let mut h_buf = vec![0.0; model.d];
    let mut xi_buf = vec![0.0; model.d];
    let mut out = vec![0.0; model.d];
    let flag =
        split_update(model, lambda, split, theta, y, &mut sub, &mut h_buf, &mut xi_buf, &mut out)?;
    Ok((out, flag))
}

// ---------------------------------------------------------------------------
// Single-chain drivers
// ---------------------------------------------------------------------------

struct StepBuffers {
    y: Vec<f64>,
    h: Vec<f64>,
    xi: Vec<f64>,
    next: Vec<f64>,
}

impl StepBuffers {
    fn new(d: usize, m: usize) -> Self {
        Self { y: vec![0.0; m], h: vec![0.0; d], xi: vec![0.0; d], next: vec![0.0; d] }
    }
}

fn advance(
    model: &ModelSpec,
    lambda: f64,
    noise_scale: f64,
    mode: &StepMode,
    theta: &[f64],
    key: u64,
    buf: &mut StepBuffers,
) -> Result<bool> {
    let mut sub = SubStream::new(key);
    match mode {
        StepMode::Plain => {
            sub.fill_standard_normal(&mut buf.xi);
            plain_update(
                model,
                lambda,
                noise_scale,
                theta,
                &buf.y,
                &buf.xi,
                &mut buf.h,
                &mut buf.next,
            );
            Ok(false)
        }
        StepMode::Split(split) => split_update(
            model,
            lambda,
            split,
            theta,
            &buf.y,
            &mut sub,
            &mut buf.h,
            &mut buf.xi,
            &mut buf.next,
        ),
    }
}

fn check_mode(model: &ModelSpec, cfg: &ChainConfig, mode: &StepMode) -> Result<()> {
    if let StepMode::Split(split) = mode {
        if cfg.beta != 1.0 {
            return Err(Error::Unsupported(format!(
                "split kernel is certified at beta = 1 only, got {}",
                cfg.beta
            )));
        }
        // Re-derive the mass so a hand-edited params struct cannot sneak a
        // different mixture into the run.
        let mc = minorization_constants(model, cfg.lambda, split.radius)?;
        if (mc.alpha_tilde() - split.alpha_tilde).abs() > 1e-15 * split.alpha_tilde {
            return Err(Error::InvalidParameter(format!(
                "split params carry mass {} but (model, lambda, radius) certifies {}",
                split.alpha_tilde,
                mc.alpha_tilde()
            )));
        }
    }
    Ok(())
}

/// Runs one chain for `cfg.horizon` steps against a fresh copy of `stream`
/// reseeded from `cfg.seed`. Same config twice gives bitwise-identical output.
pub fn run_chain(
    model: &ModelSpec,
    stream: &Stream,
    cfg: &ChainConfig,
    mode: &StepMode,
) -> Result<ChainRun> {
    let out_of_theory = cfg.validate(model)?;
    check_mode(model, cfg, mode)?;
    let mut env = stream.reseeded(cfg.seed)?;
    if env.dim() != model.m {
        return Err(Error::Dimension(format!(
            "stream emits dimension {}, model consumes {}",
            env.dim(),
            model.m
        )));
    }
    let d = model.d;
    let mut thetas = Vec::with_capacity((cfg.horizon + 1) * d);
    thetas.extend_from_slice(&cfg.theta0);
    let mut env_data = Vec::with_capacity(cfg.horizon * model.m);
    let mut eps_keys = Vec::with_capacity(cfg.horizon);
    let mut flags = Vec::with_capacity(cfg.horizon);
    let mut theta = cfg.theta0.clone();
    let mut buf = StepBuffers::new(d, model.m);
    let noise_scale = (2.0 * cfg.lambda / cfg.beta).sqrt();
    for t in 0..cfg.horizon {
        env.next_into(&mut buf.y);
        env_data.extend_from_slice(&buf.y);
        let key = derive_key(cfg.seed, Domain::Step, t as u64);
        eps_keys.push(key);
        let regenerated = advance(model, cfg.lambda, noise_scale, mode, &theta, key, &mut buf)?;
        std::mem::swap(&mut theta, &mut buf.next);
        if !norm(&theta).is_finite() {
            return Err(Error::Numerical(format!("state diverged at step {t}")));
        }
        thetas.extend_from_slice(&theta);
        flags.push(regenerated);
    }
    Ok(ChainRun {
        d,
        thetas,
        env_trace: FrozenTrajectory { m: model.m, bound: env.bound(), data: env_data },
        eps_seed_trace: eps_keys,
        regeneration_flags: flags,
        out_of_theory,
    })
}

/// Like [`run_chain`] but records only the states at the given times
/// (sorted, each `<= cfg.horizon`; time 0 is the start point). Keeps replica
/// ensembles at long horizons memory-light.
pub fn run_theta_checkpoints(
    model: &ModelSpec,
    stream: &Stream,
    cfg: &ChainConfig,
    mode: &StepMode,
    checkpoints: &[usize],
) -> Result<Vec<Vec<f64>>> {
    cfg.validate(model)?;
    check_mode(model, cfg, mode)?;
    if checkpoints.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("checkpoints must be sorted ascending".into()));
    }
    if checkpoints.last().is_some_and(|&c| c > cfg.horizon) {
        return Err(Error::InvalidParameter(format!(
            "checkpoint beyond horizon {}",
            cfg.horizon
        )));
    }
    let mut env = stream.reseeded(cfg.seed)?;
    let mut theta = cfg.theta0.clone();
    let mut buf = StepBuffers::new(model.d, model.m);
    let noise_scale = (2.0 * cfg.lambda / cfg.beta).sqrt();
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut idx = 0;
    while idx < checkpoints.len() && checkpoints[idx] == 0 {
        out.push(theta.clone());
        idx += 1;
    }
    for t in 0..cfg.horizon {
        env.next_into(&mut buf.y);
        let key = derive_key(cfg.seed, Domain::Step, t as u64);
        advance(model, cfg.lambda, noise_scale, mode, &theta, key, &mut buf)?;
        std::mem::swap(&mut theta, &mut buf.next);
        if !norm(&theta).is_finite() {
            return Err(Error::Numerical(format!("state diverged at step {t}")));
        }
        while idx < checkpoints.len() && checkpoints[idx] == t + 1 {
            out.push(theta.clone());
            idx += 1;
        }
        if idx == checkpoints.len() {
            break;
        }
    }
    Ok(out)
}

/// Compensated partial sums `sum_{k=1}^{c} phi(theta_k)` at the given
/// checkpoints (sorted, each `>= 1`), without storing the trajectory.
pub fn run_observable_sums(
    model: &ModelSpec,
    stream: &Stream,
    cfg: &ChainConfig,
    mode: &StepMode,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    checkpoints: &[usize],
) -> Result<Vec<f64>> {
    cfg.validate(model)?;
    check_mode(model, cfg, mode)?;
    if checkpoints.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("checkpoints must be sorted ascending".into()));
    }
    if checkpoints.first().is_some_and(|&c| c == 0) {
        return Err(Error::InvalidParameter("partial sums start at time 1".into()));
    }
    if checkpoints.last().is_some_and(|&c| c > cfg.horizon) {
        return Err(Error::InvalidParameter(format!(
            "checkpoint beyond horizon {}",
            cfg.horizon
        )));
    }
    let mut env = stream.reseeded(cfg.seed)?;
    let mut theta = cfg.theta0.clone();
    let mut buf = StepBuffers::new(model.d, model.m);
    let noise_scale = (2.0 * cfg.lambda / cfg.beta).sqrt();
    let mut acc = RunningSum::new();
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut idx = 0;
    for t in 0..cfg.horizon {
        env.next_into(&mut buf.y);
        let key = derive_key(cfg.seed, Domain::Step, t as u64);
        advance(model, cfg.lambda, noise_scale, mode, &theta, key, &mut buf)?;
        std::mem::swap(&mut theta, &mut buf.next);
        if !norm(&theta).is_finite() {
            return Err(Error::Numerical(format!("state diverged at step {t}")));
        }
        acc.add(phi(&theta));
        while idx < checkpoints.len() && checkpoints[idx] == t + 1 {
            out.push(acc.value());
            idx += 1;
        }
        if idx == checkpoints.len() {
            break;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Quenched replay and coupled runs
// ---------------------------------------------------------------------------

/// Applies the flow map of a frozen run between two absolute times: starting
/// from `theta_start` at `start_time`, consumes rows `start_time..end_time`
/// of the environment and the matching entries of `eps_keys`. For
/// `end_time <= start_time` the map is the identity. Composing `[s, u]` after
/// `[t, s]` reproduces `[t, u]` bitwise because every step reads only
/// absolute-time inputs.
pub fn quenched_run(
    model: &ModelSpec,
    frozen: &FrozenTrajectory,
    start_time: usize,
    theta_start: &[f64],
    end_time: usize,
    eps_keys: &[u64],
    mode: &StepMode,
    lambda: f64,
    beta: f64,
) -> Result<ChainRun> {
    if theta_start.len() != model.d {
        return Err(Error::Dimension(format!(
            "start point has {} coordinates, model has dimension {}",
            theta_start.len(),
            model.d
        )));
    }
    if frozen.m != model.m {
        return Err(Error::Dimension(format!(
            "frozen trajectory has dimension {}, model consumes {}",
            frozen.m, model.m
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite() && beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lambda and beta must be positive and finite, got {lambda}, {beta}"
        )));
    }
    if matches!(mode, StepMode::Split(_)) && beta != 1.0 {
        return Err(Error::Unsupported(format!(
            "split kernel is certified at beta = 1 only, got {beta}"
        )));
    }
    let span = end_time.saturating_sub(start_time);
    if span > 0 {
        if frozen.len() < end_time {
            return Err(Error::InvalidParameter(format!(
                "frozen trajectory has {} rows, replay needs {}",
                frozen.len(),
                end_time
            )));
        }
        if eps_keys.len() < end_time {
            return Err(Error::InvalidParameter(format!(
                "key trace has {} entries, replay needs {}",
                eps_keys.len(),
                end_time
            )));
        }
    }
    let d = model.d;
    let mut thetas = Vec::with_capacity((span + 1) * d);
    thetas.extend_from_slice(theta_start);
    let mut env_data = Vec::with_capacity(span * model.m);
    let mut keys = Vec::with_capacity(span);
    let mut flags = Vec::with_capacity(span);
    let mut theta = theta_start.to_vec();
    let mut buf = StepBuffers::new(d, model.m);
    let noise_scale = (2.0 * lambda / beta).sqrt();
    for t in start_time..end_time {
        buf.y.copy_from_slice(frozen.row(t));
        env_data.extend_from_slice(&buf.y);
        keys.push(eps_keys[t]);
        let regenerated =
            advance(model, lambda, noise_scale, mode, &theta, eps_keys[t], &mut buf)?;
        std::mem::swap(&mut theta, &mut buf.next);
        if !norm(&theta).is_finite() {
            return Err(Error::Numerical(format!("state diverged at step {t}")));
        }
        thetas.extend_from_slice(&theta);
        flags.push(regenerated);
    }
    Ok(ChainRun {
        d,
        thetas,
        env_trace: FrozenTrajectory { m: model.m, bound: frozen.bound, data: env_data },
        eps_seed_trace: keys,
        regeneration_flags: flags,
        out_of_theory: lambda > model.lambda_max(),
    })
}

/// A coupled pair of split-kernel chains sharing environment and step keys.
#[derive(Debug, Clone)]
pub struct CoupledRun {
    /// First time the two state vectors agree exactly, if within the horizon.
    pub tau: Option<usize>,
    pub run1: ChainRun,
    pub run2: ChainRun,
    /// Number of step times at which both chains sat inside the ball.
    pub small_set_visits: usize,
}

/// Drives two chains through the same frozen environment with the same step
/// keys. Sharing a key means sharing the regeneration test and the
/// regeneration draw, so a step at which both chains sit inside the ball and
/// the test fires lands them on exactly the same point. Equality is absorbing:
/// once the states agree, each subsequent step maps them through the same
/// deterministic function of (state, row, key).
pub fn coupled_run(
    model: &ModelSpec,
    frozen: &FrozenTrajectory,
    lambda: f64,
    theta1: &[f64],
    theta2: &[f64],
    horizon: usize,
    eps_keys: &[u64],
    split: &SplitKernelParams,
) -> Result<CoupledRun> {
    let mode = StepMode::Split(split.clone());
    if theta1.len() != model.d || theta2.len() != model.d {
        return Err(Error::Dimension(format!(
            "start points must have {} coordinates, got {}/{}",
            model.d,
            theta1.len(),
            theta2.len()
        )));
    }
    if frozen.m != model.m || frozen.len() < horizon {
        return Err(Error::Dimension(format!(
            "frozen trajectory {} x {} cannot drive {} steps of a dimension-{} consumer",
            frozen.len(),
            frozen.m,
            horizon,
            model.m
        )));
    }
    if eps_keys.len() < horizon {
        return Err(Error::InvalidParameter(format!(
            "key trace has {} entries, coupling needs {}",
            eps_keys.len(),
            horizon
        )));
    }
    let d = model.d;
    let mut a = theta1.to_vec();
    let mut b = theta2.to_vec();
    let mut thetas1 = Vec::with_capacity((horizon + 1) * d);
    let mut thetas2 = Vec::with_capacity((horizon + 1) * d);
    thetas1.extend_from_slice(&a);
    thetas2.extend_from_slice(&b);
    let mut env_data = Vec::with_capacity(horizon * model.m);
    let mut keys = Vec::with_capacity(horizon);
    let mut flags1 = Vec::with_capacity(horizon);
    let mut flags2 = Vec::with_capacity(horizon);
    let mut tau = if a == b { Some(0) } else { None };
    let mut small_set_visits = 0;
    let mut buf = StepBuffers::new(d, model.m);
    let noise_scale = (2.0 * lambda).sqrt();
    for t in 0..horizon {
        if norm(&a) <= split.radius && norm(&b) <= split.radius {
            small_set_visits += 1;
        }
        buf.y.copy_from_slice(frozen.row(t));
        env_data.extend_from_slice(&buf.y);
        let key = eps_keys[t];
        keys.push(key);
        let f1 = advance(model, lambda, noise_scale, &mode, &a, key, &mut buf)?;
        std::mem::swap(&mut a, &mut buf.next);
        let f2 = if tau.is_some() {
            // Already merged: the second chain is the first one.
            b.copy_from_slice(&a);
            f1
        } else {
            let f2 = advance(model, lambda, noise_scale, &mode, &b, key, &mut buf)?;
            std::mem::swap(&mut b, &mut buf.next);
            f2
        };
        if !(norm(&a).is_finite() && norm(&b).is_finite()) {
            return Err(Error::Numerical(format!("state diverged at step {t}")));
        }
        thetas1.extend_from_slice(&a);
        thetas2.extend_from_slice(&b);
        flags1.push(f1);
        flags2.push(f2);
        if tau.is_none() && a == b {
            tau = Some(t + 1);
        }
    }
    let env_trace = FrozenTrajectory { m: model.m, bound: frozen.bound, data: env_data };
    let out_of_theory = lambda > model.lambda_max();
    Ok(CoupledRun {
        tau,
        run1: ChainRun {
            d,
            thetas: thetas1,
            env_trace: env_trace.clone(),
            eps_seed_trace: keys.clone(),
            regeneration_flags: flags1,
            out_of_theory,
        },
        run2: ChainRun {
            d,
            thetas: thetas2,
            env_trace,
            eps_seed_trace: keys,
            regeneration_flags: flags2,
            out_of_theory,
        },
        small_set_visits,
    })
}

// ---------------------------------------------------------------------------
// Annealed coupling ensemble
// ---------------------------------------------------------------------------

/// Start law for the second chain of a coupled pair.
#[derive(Debug, Clone)]
pub enum StartLaw {
    Point(Vec<f64>),
    /// Approximate stationary start: a burn-in chain of the given length is
    /// run from the origin (on an auxiliary environment and key domain) and
    /// its final state is taken.
    Stationary { burn_in: usize },
}

/// Empirical no-coupling probabilities over a replica ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingCurve {
    pub horizons: Vec<usize>,
    pub replicas: usize,
    /// Replicas still uncoupled strictly after each horizon.
    pub survivors: Vec<usize>,
    pub probability: Vec<f64>,
    /// One-sided 99% Wilson upper bound on each probability.
    pub upper99: Vec<f64>,
    /// Per-replica coupling times; `None` when beyond the largest horizon.
    pub taus: Vec<Option<usize>>,
}

/// Lean coupled pair: no trace storage, stops at the first *joint
/// regeneration* — the split-chain coupling time the certificates bound.
///
/// Shared noise also contracts the two states toward each other until they
/// agree to the last bit; that floating-point merge is a synchronous-coupling
/// artifact, not a regeneration, so it does not stop the clock. A merged
/// pair is advanced as one chain (equality is absorbing under shared keys)
/// until its regeneration fires, which is the same event a never-merged pair
/// at zero distance would wait for.
fn coupled_tau(
    model: &ModelSpec,
    env: &mut Stream,
    lambda: f64,
    theta1: &[f64],
    theta2: &[f64],
    horizon: usize,
    replica_key: u64,
    split: &SplitKernelParams,
) -> Result<Option<usize>> {
    let mode = StepMode::Split(split.clone());
    let mut a = theta1.to_vec();
    let mut b = theta2.to_vec();
    if a == b {
        return Ok(Some(0));
    }
    let mut merged = false;
    let mut buf = StepBuffers::new(model.d, model.m);
    let noise_scale = (2.0 * lambda).sqrt();
    for t in 0..horizon {
        env.next_into(&mut buf.y);
        let key = derive_key(replica_key, Domain::Step, t as u64);
        let f1 = advance(model, lambda, noise_scale, &mode, &a, key, &mut buf)?;
        std::mem::swap(&mut a, &mut buf.next);
        let f2 = if merged {
            b.copy_from_slice(&a);
            f1
        } else {
            let f2 = advance(model, lambda, noise_scale, &mode, &b, key, &mut buf)?;
            std::mem::swap(&mut b, &mut buf.next);
            f2
        };
        if !(norm(&a).is_finite() && norm(&b).is_finite()) {
            return Err(Error::Numerical(format!("state diverged at step {t}")));
        }
        if f1 && f2 {
            debug_assert_eq!(a, b, "a shared regeneration draw must land both chains together");
            return Ok(Some(t + 1));
        }
        merged = merged || a == b;
    }
    Ok(None)
}

/// Runs `replicas` independent coupled pairs to the largest horizon (fresh
/// environment per replica, annealed randomness) and reports, per horizon,
/// the fraction with no joint regeneration yet — the split-chain no-coupling
/// probability — with a one-sided 99% Wilson upper bound.
#[allow(clippy::too_many_arguments)]
pub fn annealed_coupling_curve(
    model: &ModelSpec,
    stream: &Stream,
    lambda: f64,
    theta1: &[f64],
    theta2_law: &StartLaw,
    horizons: &[usize],
    replicas: usize,
    seed: u64,
    split: &SplitKernelParams,
) -> Result<CouplingCurve> {
    if horizons.is_empty() || replicas == 0 {
        return Err(Error::InvalidParameter("need at least one horizon and one replica".into()));
    }
    if horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("horizons must be strictly increasing".into()));
    }
    if theta1.len() != model.d {
        return Err(Error::Dimension(format!(
            "start point has {} coordinates, model has dimension {}",
            theta1.len(),
            model.d
        )));
    }
    if let StartLaw::Point(p) = theta2_law {
        if p.len() != model.d {
            return Err(Error::Dimension(format!(
                "second start point has {} coordinates, model has dimension {}",
                p.len(),
                model.d
            )));
        }
    }
    let max_h = *horizons.last().expect("non-empty");
    let taus: Result<Vec<Option<usize>>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let replica_key = derive_key(seed, Domain::Replica, r);
            let mut buf = StepBuffers::new(model.d, model.m);
            let theta2 = match theta2_law {
                StartLaw::Point(p) => p.clone(),
                StartLaw::Stationary { burn_in } => {
                    let aux_key = derive_key(replica_key, Domain::Aux, 0);
                    let mut env = stream.reseeded(aux_key)?;
                    let mut theta = vec![0.0; model.d];
                    let mode = StepMode::Split(split.clone());
                    let noise_scale = (2.0 * lambda).sqrt();
                    for t in 0..*burn_in {
                        env.next_into(&mut buf.y);
                        let key = derive_key(replica_key, Domain::Burnin, t as u64);
                        advance(model, lambda, noise_scale, &mode, &theta, key, &mut buf)?;
                        std::mem::swap(&mut theta, &mut buf.next);
                    }
                    if !norm(&theta).is_finite() {
                        return Err(Error::Numerical("burn-in diverged".into()));
                    }
                    theta
                }
            };
            let mut env = stream.reseeded(replica_key)?;
            coupled_tau(model, &mut env, lambda, theta1, &theta2, max_h, replica_key, split)
        })
        .collect();
    let taus = taus?;
    let mut survivors = Vec::with_capacity(horizons.len());
    let mut probability = Vec::with_capacity(horizons.len());
    let mut upper99 = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let s = taus.iter().filter(|t| t.is_none_or(|tau| tau > h)).count();
        survivors.push(s);
        probability.push(s as f64 / replicas as f64);
        upper99.push(wilson_upper(s as u64, replicas as u64, Z_99));
    }
    Ok(CouplingCurve {
        horizons: horizons.to_vec(),
        replicas,
        survivors,
        probability,
        upper99,
        taus,
    })
}

// ---------------------------------------------------------------------------
// Kernel diagnostics
// ---------------------------------------------------------------------------

/// Two-sample comparison of the plain and split kernels at fixed `(theta, y)`
/// pairs: per-coordinate means and second moments must agree within `z_gate`
/// standard errors. The split kernel is a re-expression of the plain one, so
/// this is an equality test, not a bound.
pub fn split_kernel_moment_check(
    model: &ModelSpec,
    lambda: f64,
    split: &SplitKernelParams,
    pairs: &[(Vec<f64>, Vec<f64>)],
    n_draws: usize,
    z_gate: f64,
    seed: u64,
) -> Result<ValidationReport> {
    if pairs.is_empty() || n_draws < 1000 {
        return Err(Error::InvalidParameter(
            "need at least one pair and 1000 draws per kernel".into(),
        ));
    }
    let d = model.d;
    let mut worst = f64::NEG_INFINITY;
    let mut witness: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut n_checked = 0;
    for (pi, (theta, y)) in pairs.iter().enumerate() {
        if theta.len() != d || y.len() != model.m {
            return Err(Error::Dimension(format!("pair {pi} has mismatched dimensions")));
        }
        let pair_key = derive_key(seed, Domain::Replica, pi as u64);
        // Plain-kernel sample: direct Gaussian draws.
        let mut h = vec![0.0; d];
        model.h_raw(theta, y, &mut h);
        let scale = (2.0 * lambda).sqrt();
        let mut mean_p = vec![RunningSum::new(); d];
        let mut sq_p = vec![RunningSum::new(); d];
        let mut mean_s = vec![RunningSum::new(); d];
        let mut sq_s = vec![RunningSum::new(); d];
        let mut var_p = vec![RunningSum::new(); d];
        let mut var_s = vec![RunningSum::new(); d];
        let mut xi = vec![0.0; d];
        let mut sub = SubStream::new(derive_key(pair_key, Domain::Aux, 0));
        for _ in 0..n_draws {
            sub.fill_standard_normal(&mut xi);
            for i in 0..d {
                let x = theta[i] - lambda * h[i] + scale * xi[i];
                mean_p[i].add(x);
                sq_p[i].add(x * x);
                var_p[i].add(x * x * x * x);
            }
        }
        for k in 0..n_draws {
            let key = derive_key(pair_key, Domain::Step, k as u64);
            let (x, _) = step_split(model, lambda, split, theta, y, key)?;
            for i in 0..d {
                mean_s[i].add(x[i]);
                sq_s[i].add(x[i] * x[i]);
                var_s[i].add(x[i] * x[i] * x[i] * x[i]);
            }
        }
        let nf = n_draws as f64;
        for i in 0..d {
            let (m1p, m1s) = (mean_p[i].value() / nf, mean_s[i].value() / nf);
            let (m2p, m2s) = (sq_p[i].value() / nf, sq_s[i].value() / nf);
            let (m4p, m4s) = (var_p[i].value() / nf, var_s[i].value() / nf);
            // Mean comparison: variance of each sample mean is m2 - m1^2 over n.
            let v1 = ((m2p - m1p * m1p) + (m2s - m1s * m1s)).max(0.0) / nf;
            let z1 = (m1p - m1s).abs() / v1.sqrt().max(f64::MIN_POSITIVE);
            // Second-moment comparison: variance of squared draws is m4 - m2^2.
            let v2 = ((m4p - m2p * m2p) + (m4s - m2s * m2s)).max(0.0) / nf;
            let z2 = (m2p - m2s).abs() / v2.sqrt().max(f64::MIN_POSITIVE);
            for z in [z1, z2] {
                n_checked += 1;
                let margin = z - z_gate;
                if margin > worst {
                    worst = margin;
                    witness = Some((theta.clone(), y.clone()));
                }
            }
        }
    }
    let (witness_theta, witness_y) = witness.map(|(t, y)| (Some(t), Some(y))).unwrap_or_default();
    Ok(ValidationReport {
        check: "split_kernel_moment_equality".into(),
        passed: worst <= 0.0,
        n_checked,
        worst_margin: worst,
        witness_theta,
        witness_y,
        detail: format!(
            "per-coordinate moments of orders 1 and 2, {} draws per kernel, gate {z_gate} SE",
            n_draws
        ),
    })
}

/// Checks that regenerations occur at rate `alpha_tilde` among in-ball steps:
/// the count must sit within `z_gate` binomial standard deviations of
/// `alpha_tilde * (in-ball steps)`, and no regeneration may fire out of ball.
pub fn regeneration_frequency_check(
    run: &ChainRun,
    split: &SplitKernelParams,
    z_gate: f64,
) -> Result<ValidationReport> {
    let horizon = run.horizon();
    let mut in_ball = 0u64;
    let mut regen = 0u64;
    for t in 0..horizon {
        let inside = norm(run.theta(t)) <= split.radius;
        if inside {
            in_ball += 1;
        }
        if run.regeneration_flags[t] {
            regen += 1;
            if !inside {
                return Ok(ValidationReport {
                    check: "regeneration_frequency".into(),
                    passed: false,
                    n_checked: horizon,
                    worst_margin: f64::INFINITY,
                    witness_theta: Some(run.theta(t).to_vec()),
                    witness_y: None,
                    detail: format!("regeneration fired outside the ball at step {t}"),
                });
            }
        }
    }
    if in_ball < 100 {
        return Err(Error::InvalidParameter(format!(
            "only {in_ball} in-ball steps; the binomial comparison needs at least 100"
        )));
    }
    let n = in_ball as f64;
    let expected = n * split.alpha_tilde;
    let sd = (n * split.alpha_tilde * (1.0 - split.alpha_tilde)).sqrt();
    let z = (regen as f64 - expected).abs() / sd;
    Ok(ValidationReport {
        check: "regeneration_frequency".into(),
        passed: z <= z_gate,
        n_checked: in_ball as usize,
        worst_margin: z - z_gate,
        witness_theta: None,
        witness_y: None,
        detail: format!(
            "{regen} regenerations over {in_ball} in-ball steps; expected {expected:.1} +- {sd:.1}"
        ),
    })
}
