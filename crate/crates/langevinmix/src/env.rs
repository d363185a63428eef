//! Bounded stationary data streams and their mixing diagnostics.
//!
//! Streams model the data source driving the sampler: almost-surely bounded,
//! stationary from the very first emitted sample, and in general *dependent*.
//! Dependence strength is measured by the strong mixing coefficient between
//! time 0 and time n,
//!
//! ```text
//! α(n) = sup |P(G ∩ H) − P(G)P(H)|,   G ∈ σ(Y_0), H ∈ σ(Y_n),
//! ```
//!
//! which always lies in [0, 1/4]. For finite-state Markov streams α(n) is
//! computed exactly; for arbitrary traces a partition-based plug-in gives a
//! lower estimate (it restricts the sup to cells of a finite partition).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_key, Domain, SubStream};

/// Universal cap for strong mixing coefficients of a pair of events.
pub const ALPHA_CAP: f64 = 0.25;

/// A stationary, almost-surely bounded data source.
pub trait DataStream {
    /// Data dimension m.
    fn dim(&self) -> usize;
    /// Certified almost-sure bound on ‖Y_t‖.
    fn bound(&self) -> f64;
    /// Writes the next sample into `out`.
    fn next_into(&mut self, out: &mut [f64]);

    fn next_point(&mut self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.next_into(&mut out);
        out
    }
}

/// I.i.d. uniform draws on the centered cube scaled so that ‖Y‖ ≤ bound
/// (half-width bound/√m per coordinate).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct IidUniformParams {
    pub m: usize,
    pub bound: f64,
}

/// Finite-state Markov stream. `states` embeds each of the S states into ℝ^m;
/// `p` is the S×S row-stochastic transition matrix; `pi0` the start law.
/// Stationarity from the first sample requires `pi0` to be the stationary law,
/// which [`FiniteMarkovParams::validate`] enforces.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FiniteMarkovParams {
    pub states: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub pi0: Vec<f64>,
}

/// Moving-average stream: Y_t = (bound/√m) · (1/w) Σ_{i<w} η_{t−i} with i.i.d.
/// uniform(−1,1)^m innovations. Convexity keeps every coordinate in [−1, 1],
/// so ‖Y‖ ≤ bound holds surely; dependence vanishes exactly beyond lag w.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MovingAverageParams {
    pub m: usize,
    pub bound: f64,
    pub window: usize,
}

impl FiniteMarkovParams {
    /// Number of states.
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map(|s| s.len()).unwrap_or(0)
    }

    pub fn bound(&self) -> f64 {
        self.states.iter().map(|s| crate::model::norm(s)).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.n_states();
        if s == 0 {
            return Err(Error::invalid("finite Markov stream needs at least one state"));
        }
        let m = self.dim();
        if m == 0 || self.states.iter().any(|st| st.len() != m) {
            return Err(Error::dim("all state embeddings need the same positive dimension"));
        }
        if self.states.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("state embeddings must be finite"));
        }
        if self.p.len() != s || self.p.iter().any(|row| row.len() != s) {
            return Err(Error::dim("transition matrix must be S x S"));
        }
        for row in &self.p {
            if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::invalid("transition probabilities must lie in [0,1]"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("transition row sums to {sum}, not 1")));
            }
        }
        if self.pi0.len() != s {
            return Err(Error::dim("pi0 length must match the state count"));
        }
        if self.pi0.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::invalid("pi0 entries must lie in [0,1]"));
        }
        let sum: f64 = self.pi0.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("pi0 sums to {sum}, not 1")));
        }
        // Stationarity of the start law, so the stream is stationary from t=0.
        let mut residual = 0.0;
        for j in 0..s {
            let pj: f64 = (0..s).map(|i| self.pi0[i] * self.p[i][j]).sum();
            residual += (pj - self.pi0[j]).abs();
        }
        if residual > 1e-10 {
            return Err(Error::invalid(format!(
                "pi0 is not stationary for p (|pi0 P - pi0|_1 = {residual:.3e}); \
                 use with_stationary_start"
            )));
        }
        Ok(())
    }

    /// Stationary distribution by power iteration (deterministic; the chains
    /// used here are small and aperiodic-in-practice; iteration is averaged
    /// over two consecutive steps to tolerate periodicity).
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let s = self.n_states();
        let mut pi = vec![1.0 / s as f64; s];
        let mut next = vec![0.0; s];
        for _ in 0..200_000 {
            for j in 0..s {
                next[j] = (0..s).map(|i| pi[i] * self.p[i][j]).sum();
            }
            // Cesàro smoothing handles period-2 chains.
            for j in 0..s {
                next[j] = 0.5 * (next[j] + pi[j]);
            }
            let diff: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            std::mem::swap(&mut pi, &mut next);
            if diff < 1e-15 {
                break;
            }
        }
        let norm: f64 = pi.iter().sum();
        for x in pi.iter_mut() {
            *x /= norm;
        }
        Ok(pi)
    }

    /// Builds params with `pi0` set to the stationary law of `p`.
    pub fn with_stationary_start(states: Vec<Vec<f64>>, p: Vec<Vec<f64>>) -> Result<Self> {
        let mut params = FiniteMarkovParams { states, p, pi0: vec![] };
        params.pi0 = vec![1.0 / params.n_states().max(1) as f64; params.n_states()];
        params.pi0 = params.stationary()?;
        params.validate()?;
        Ok(params)
    }

    /// Two symmetric states embedded at ±1 with stay probability `stay`.
    pub fn two_state_symmetric(stay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&stay) {
            return Err(Error::invalid("stay probability must lie in [0,1]"));
        }
        Self::with_stationary_start(
            vec![vec![-1.0], vec![1.0]],
            vec![vec![stay, 1.0 - stay], vec![1.0 - stay, stay]],
        )
    }

    /// Degenerate single-state stream emitting `value` forever.
    pub fn single_state(value: Vec<f64>) -> Result<Self> {
        Self::with_stationary_start(vec![value], vec![vec![1.0]])
    }
}

/// Concrete stream implementation (tagged by construction parameters so runs
/// can be reseeded and serialized).
#[derive(Clone, Debug)]
pub enum Stream {
    IidUniform { params: IidUniformParams, rng: SubStream },
    FiniteMarkov { params: FiniteMarkovParams, state: usize, started: bool, rng: SubStream },
    MovingAverage { params: MovingAverageParams, ring: Vec<f64>, pos: usize, rng: SubStream },
}

impl Stream {
    pub fn iid_uniform(params: IidUniformParams, seed: u64) -> Result<Self> {
        if params.m == 0 {
            return Err(Error::dim("stream dimension must be positive"));
        }
        if !(params.bound > 0.0 && params.bound.is_finite()) {
            return Err(Error::invalid("stream bound must be positive"));
        }
        Ok(Stream::IidUniform { params, rng: SubStream::new(derive_key(seed, Domain::Env, 0)) })
    }

    pub fn finite_markov(params: FiniteMarkovParams, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(Stream::FiniteMarkov {
            params,
            state: 0,
            started: false,
            rng: SubStream::new(derive_key(seed, Domain::Env, 0)),
        })
    }

    pub fn moving_average(params: MovingAverageParams, seed: u64) -> Result<Self> {
        if params.m == 0 {
            return Err(Error::dim("stream dimension must be positive"));
        }
        if params.window == 0 {
            return Err(Error::invalid("window must be at least 1"));
        }
        if !(params.bound > 0.0 && params.bound.is_finite()) {
            return Err(Error::invalid("stream bound must be positive"));
        }
        let mut stream = Stream::MovingAverage {
            ring: vec![0.0; params.m * params.window],
            pos: 0,
            params,
            rng: SubStream::new(derive_key(seed, Domain::Env, 0)),
        };
        // Fill the ring and then some: exactly stationary once the window is
        // full; 10 windows of burn-in leave no doubt.
        let m = stream.dim();
        let mut scratch = vec![0.0; m];
        if let Stream::MovingAverage { params, .. } = &stream {
            for _ in 0..params.window * 10 {
                stream.next_into(&mut scratch);
            }
        }
        Ok(stream)
    }

    /// Same parameters, fresh randomness; replicas derive their streams here.
    pub fn reseeded(&self, seed: u64) -> Result<Self> {
        match self {
            Stream::IidUniform { params, .. } => Self::iid_uniform(params.clone(), seed),
            Stream::FiniteMarkov { params, .. } => Self::finite_markov(params.clone(), seed),
            Stream::MovingAverage { params, .. } => Self::moving_average(params.clone(), seed),
        }
    }

    /// Current state index for finite-state streams (diagnostics only).
    pub fn state_index(&self) -> Option<usize> {
        match self {
            Stream::FiniteMarkov { state, started: true, .. } => Some(*state),
            _ => None,
        }
    }
}

fn sample_categorical(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u <= acc {
            return i;
        }
    }
    weights.len() - 1
}

impl DataStream for Stream {
    fn dim(&self) -> usize {
        match self {
            Stream::IidUniform { params, .. } => params.m,
            Stream::FiniteMarkov { params, .. } => params.dim(),
            Stream::MovingAverage { params, .. } => params.m,
        }
    }

    fn bound(&self) -> f64 {
        match self {
            Stream::IidUniform { params, .. } => params.bound,
            Stream::FiniteMarkov { params, .. } => params.bound(),
            Stream::MovingAverage { params, .. } => params.bound,
        }
    }

    fn next_into(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        let bound = self.bound();
        match self {
            Stream::IidUniform { params, rng } => {
                let w = params.bound / (params.m as f64).sqrt();
                for x in out.iter_mut() {
                    *x = w * rng.next_symmetric();
                }
            }
            Stream::FiniteMarkov { params, state, started, rng } => {
                if !*started {
                    *state = sample_categorical(&params.pi0, rng.next_uniform());
                    *started = true;
                } else {
                    *state = sample_categorical(&params.p[*state], rng.next_uniform());
                }
                out.copy_from_slice(&params.states[*state]);
            }
            Stream::MovingAverage { params, ring, pos, rng } => {
                let m = params.m;
                let w = params.window;
                for j in 0..m {
                    ring[*pos * m + j] = rng.next_symmetric();
                }
                *pos = (*pos + 1) % w;
                let scale = params.bound / (m as f64).sqrt() / w as f64;
                for (j, x) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for i in 0..w {
                        acc += ring[i * m + j];
                    }
                    *x = scale * acc;
                }
            }
        }
        debug_assert!(
            crate::model::norm(out) <= bound * (1.0 + 1e-12),
            "stream emitted a sample outside its certified bound"
        );
    }
}

/// A strong-mixing curve: n ↦ α(n). `exact` records whether the values were
/// computed analytically (finite chains, finite-dependence streams) or
/// estimated from a trace.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MixingCurve {
    pub values: BTreeMap<u64, f64>,
    pub exact: bool,
}

impl MixingCurve {
    pub fn alpha(&self, n: u64) -> Option<f64> {
        self.values.get(&n).copied()
    }
}

/// Exact α(n) between σ(Y_0) and σ(Y_n) for a stationary finite-state chain.
///
/// With joint law J⁽ⁿ⁾ = diag(π)Pⁿ and D = J⁽ⁿ⁾ − ππᵀ, the sup over event
/// pairs is max over subsets B of Σ_i max(0, Σ_{j∈B} D_ij) (and the mirrored
/// negative part): for a fixed B the optimal A keeps exactly the rows with
/// positive contribution, so a 2^S scan over B with an O(S²) inner loop is
/// exhaustive. Requires S ≤ 16.
pub fn exact_alpha_finite(params: &FiniteMarkovParams, lags: &[u64]) -> Result<MixingCurve> {
    params.validate()?;
    let s = params.n_states();
    if s > 16 {
        return Err(Error::Unsupported(format!(
            "exact alpha enumeration is limited to 16 states, got {s}"
        )));
    }
    let pi = &params.pi0;
    let mut values = BTreeMap::new();
    for &n in lags {
        let pn = matrix_power(&params.p, n);
        // D_ij = P(Y_0 = i, Y_n = j) − pi_i pi_j.
        let mut d = vec![vec![0.0; s]; s];
        for i in 0..s {
            for j in 0..s {
                let joint = if n == 0 {
                    if i == j {
                        pi[i]
                    } else {
                        0.0
                    }
                } else {
                    pi[i] * pn[i][j]
                };
                d[i][j] = joint - pi[i] * pi[j];
            }
        }
        let mut best = 0.0f64;
        for bmask in 0u32..(1u32 << s) {
            let mut pos = 0.0;
            let mut neg = 0.0;
            for row in &d {
                let mut r = 0.0;
                for (j, &dij) in row.iter().enumerate() {
                    if bmask & (1 << j) != 0 {
                        r += dij;
                    }
                }
                if r > 0.0 {
                    pos += r;
                } else {
                    neg -= r;
                }
            }
            best = best.max(pos).max(neg);
        }
        values.insert(n, best);
    }
    Ok(MixingCurve { values, exact: true })
}

fn matrix_multiply(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let s = a.len();
    let mut out = vec![vec![0.0; s]; s];
    for i in 0..s {
        for k in 0..s {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..s {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

fn matrix_power(p: &[Vec<f64>], mut n: u64) -> Vec<Vec<f64>> {
    let s = p.len();
    let mut result = vec![vec![0.0; s]; s];
    for (i, row) in result.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut base = p.to_vec();
    while n > 0 {
        if n & 1 == 1 {
            result = matrix_multiply(&result, &base);
        }
        base = matrix_multiply(&base, &base);
        n >>= 1;
    }
    result
}

/// Mixing curve for the moving-average stream: exactly zero beyond the
/// window (finite dependence); inside the window the entry is the universal
/// cap 1/4, a valid (not tight) value.
pub fn moving_average_alpha(window: usize, lags: &[u64]) -> MixingCurve {
    let mut values = BTreeMap::new();
    for &n in lags {
        values.insert(n, if n > window as u64 { 0.0 } else { ALPHA_CAP });
    }
    MixingCurve { values, exact: true }
}

/// Partition over one coordinate of a trace: equiprobable cells by empirical
/// quantiles.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PartitionSpec {
    pub cells: usize,
    pub coordinate: usize,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec { cells: 8, coordinate: 0 }
    }
}

/// Plug-in strong-mixing estimate from a stationary trace.
///
/// The sup over σ-algebras is restricted to single partition cells (A, B), so
/// the estimate is a *lower* value of the true coefficient — the correct
/// direction when checking domination by theoretical upper bounds. Joint and
/// marginal frequencies are taken over the same (T − n) lagged pairs.
pub fn empirical_alpha_partition(
    trace: &[f64],
    dim: usize,
    partition: &PartitionSpec,
    lags: &[u64],
) -> Result<MixingCurve> {
    if dim == 0 || trace.len() % dim != 0 {
        return Err(Error::dim("trace length must be a multiple of the sample dimension"));
    }
    if partition.coordinate >= dim {
        return Err(Error::dim("partition coordinate out of range"));
    }
    let c = partition.cells;
    if c < 2 {
        return Err(Error::invalid("partition needs at least two cells"));
    }
    let t_len = trace.len() / dim;
    let series: Vec<f64> = (0..t_len).map(|t| trace[t * dim + partition.coordinate]).collect();
    // Mid-rank binning: each distinct value gets the center of its tie range,
    // and cells cut the rank axis at k/c. Equiprobable for continuous data,
    // and ties (e.g. two-valued streams) still split across cells instead of
    // collapsing into one.
    let mut sorted = series.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite trace"));
    let mut distinct = Vec::new();
    let mut midrank = Vec::new();
    let mut i = 0;
    while i < t_len {
        let mut j = i;
        while j < t_len && sorted[j] == sorted[i] {
            j += 1;
        }
        distinct.push(sorted[i]);
        midrank.push((i + j) as f64 / 2.0);
        i = j;
    }
    let cell_of = |x: f64| -> usize {
        let idx = distinct.partition_point(|&v| v < x).min(distinct.len() - 1);
        let r = midrank[idx];
        ((r * c as f64 / t_len as f64) as usize).min(c - 1)
    };
    let cells: Vec<usize> = series.iter().map(|&x| cell_of(x)).collect();

    let mut values = BTreeMap::new();
    for &nlag in lags {
        let n = nlag as usize;
        if n >= t_len {
            return Err(Error::invalid(format!("lag {n} exceeds trace length {t_len}")));
        }
        let pairs = t_len - n;
        let mut joint = vec![vec![0.0f64; c]; c];
        let mut left = vec![0.0f64; c];
        let mut right = vec![0.0f64; c];
        for t in 0..pairs {
            let a = cells[t];
            let b = cells[t + n];
            joint[a][b] += 1.0;
            left[a] += 1.0;
            right[b] += 1.0;
        }
        let norm = pairs as f64;
        let mut best = 0.0f64;
        for a in 0..c {
            for b in 0..c {
                let v = (joint[a][b] / norm - left[a] / norm * right[b] / norm).abs();
                best = best.max(v);
            }
        }
        values.insert(nlag, best);
    }
    Ok(MixingCurve { values, exact: false })
}

/// Summability probe for a mixing curve: partial sums of α(n)^{1−ε} with the
/// point at which tail increments drop below `tail_tol` (when they do within
/// the curve's support). Reported, never asserted — empirical curves flatten
/// at their noise floor and honestly fail to converge.
#[derive(Clone, Debug, Serialize)]
pub struct SummabilityReport {
    pub epsilon: f64,
    pub partial_sum: f64,
    pub last_increment: f64,
    pub converged_at: Option<u64>,
    pub converged: bool,
}

pub fn summability_report(curve: &MixingCurve, epsilon: f64, tail_tol: f64) -> Result<SummabilityReport> {
    if !(0.0 < epsilon && epsilon < 1.0) {
        return Err(Error::invalid("epsilon must lie in (0,1)"));
    }
    let mut sum = 0.0;
    let mut last = f64::INFINITY;
    let mut converged_at = None;
    for (&n, &a) in &curve.values {
        let inc = a.max(0.0).powf(1.0 - epsilon);
        sum += inc;
        last = inc;
        if inc < tail_tol && converged_at.is_none() && n > 0 {
            converged_at = Some(n);
        }
    }
    Ok(SummabilityReport {
        epsilon,
        partial_sum: sum,
        last_increment: last,
        converged_at,
        converged: converged_at.is_some(),
    })
}

/// A recorded environment trajectory, frozen for quenched replays.
/// Row-major storage: sample t occupies `data[t*m .. (t+1)*m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenTrajectory {
    pub m: usize,
    pub bound: f64,
    pub data: Vec<f64>,
}

impl FrozenTrajectory {
    pub fn record(stream: &mut dyn DataStream, len: usize) -> Self {
        let m = stream.dim();
        let mut data = vec![0.0; len * m];
        for t in 0..len {
            stream.next_into(&mut data[t * m..(t + 1) * m]);
        }
        FrozenTrajectory { m, bound: stream.bound(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.m..(t + 1) * self.m]
    }

    /// Drops the first `offset` samples (the shift map on trajectories).
    pub fn shift(&self, offset: usize) -> Result<Self> {
        if offset > self.len() {
            return Err(Error::invalid(format!(
                "shift offset {offset} exceeds trajectory length {}",
                self.len()
            )));
        }
        Ok(FrozenTrajectory {
            m: self.m,
            bound: self.bound,
            data: self.data[offset * self.m..].to_vec(),
        })
    }

    /// Binary format: three 8-byte little-endian header fields — m (u64),
    /// bound (f64 bit pattern), length (u64) — then length·m samples as f64
    /// little-endian, row-major.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&(self.m as u64).to_le_bytes())?;
        f.write_all(&self.bound.to_le_bytes())?;
        f.write_all(&(self.len() as u64).to_le_bytes())?;
        for x in &self.data {
            f.write_all(&x.to_le_bytes())?;
        }
        f.into_inner().map_err(|e| Error::Io(e.into_error()))?.sync_all()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut word = [0u8; 8];
        f.read_exact(&mut word)?;
        let m = u64::from_le_bytes(word) as usize;
        f.read_exact(&mut word)?;
        let bound = f64::from_le_bytes(word);
        f.read_exact(&mut word)?;
        let len = u64::from_le_bytes(word) as usize;
        if m == 0 {
            return Err(Error::invalid("trajectory header has zero dimension"));
        }
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::invalid("trajectory header has invalid bound"));
        }
        let mut data = vec![0.0f64; len * m];
        for x in data.iter_mut() {
            f.read_exact(&mut word)?;
            *x = f64::from_le_bytes(word);
            if !x.is_finite() {
                return Err(Error::invalid("trajectory payload has non-finite samples"));
            }
        }
        // Trailing garbage means the header lied about the length.
        if f.read(&mut word)? != 0 {
            return Err(Error::invalid("trajectory file longer than its header claims"));
        }
        let traj = FrozenTrajectory { m, bound, data };
        for t in 0..traj.len() {
            if crate::model::norm(traj.row(t)) > bound * (1.0 + 1e-9) {
                return Err(Error::invalid(format!("sample {t} violates the recorded bound")));
            }
        }
        Ok(traj)
    }
}

/// Stationarity probe: windowed moments at the head of a stream against a
/// window `gap` samples later; discrepancies are scored against 4 combined
/// batch-means standard errors per coordinate.
#[derive(Clone, Debug, Serialize)]
pub struct StationarityReport {
    pub passed: bool,
    pub window: usize,
    pub gap: usize,
    pub worst_mean_z: f64,
    pub worst_second_moment_z: f64,
}

pub fn stationarity_probe(stream: &mut dyn DataStream, window: usize, gap: usize) -> Result<StationarityReport> {
    if window < 16 {
        return Err(Error::invalid("window too small for a meaningful probe"));
    }
    if gap < window {
        return Err(Error::invalid("gap must be at least the window length"));
    }
    let m = stream.dim();
    let mut head = vec![0.0; window * m];
    for t in 0..window {
        stream.next_into(&mut head[t * m..(t + 1) * m]);
    }
    let mut scratch = vec![0.0; m];
    for _ in window..gap {
        stream.next_into(&mut scratch);
    }
    let mut tail = vec![0.0; window * m];
    for t in 0..window {
        stream.next_into(&mut tail[t * m..(t + 1) * m]);
    }
    let mut worst_mean_z = 0.0f64;
    let mut worst_m2_z = 0.0f64;
    for j in 0..m {
        let col = |buf: &[f64], t: usize| buf[t * m + j];
        let head_col: Vec<f64> = (0..window).map(|t| col(&head, t)).collect();
        let tail_col: Vec<f64> = (0..window).map(|t| col(&tail, t)).collect();
        // Means.
        let (mh, seh) = batch_mean_se(&head_col);
        let (mt, set) = batch_mean_se(&tail_col);
        let z = (mh - mt).abs() / (seh * seh + set * set).sqrt().max(1e-300);
        worst_mean_z = worst_mean_z.max(z);
        // Second moments.
        let h2: Vec<f64> = head_col.iter().map(|x| x * x).collect();
        let t2: Vec<f64> = tail_col.iter().map(|x| x * x).collect();
        let (mh2, seh2) = batch_mean_se(&h2);
        let (mt2, set2) = batch_mean_se(&t2);
        let z2 = (mh2 - mt2).abs() / (seh2 * seh2 + set2 * set2).sqrt().max(1e-300);
        worst_m2_z = worst_m2_z.max(z2);
    }
    Ok(StationarityReport {
        passed: worst_mean_z <= 4.0 && worst_m2_z <= 4.0,
        window,
        gap,
        worst_mean_z,
        worst_second_moment_z: worst_m2_z,
    })
}

/// Mean and a dependence-robust standard error via √n batch means.
fn batch_mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let b = (n as f64).sqrt().floor() as usize;
    let nb = n / b;
    let mut means = Vec::with_capacity(nb);
    for k in 0..nb {
        let chunk = &xs[k * b..(k + 1) * b];
        means.push(chunk.iter().sum::<f64>() / b as f64);
    }
    let mb = means.iter().sum::<f64>() / nb as f64;
    let var_b = means.iter().map(|x| (x - mb) * (x - mb)).sum::<f64>() / (nb as f64 - 1.0);
    (mean, (var_b / nb as f64).sqrt())
}
