//! Run configuration: one JSON document with five blocks — `model`,
//! `stream`, `chain`, `experiment`, `output` — parsed strictly (unknown
//! fields are rejected, so a typo'd knob fails loudly instead of silently
//! running with a default).
//!
//! The config is the single source of truth for a run; the CLI only layers
//! overrides (seed, threads, output directory) on top. Experiment-specific
//! knobs carry defaults matching the desk-scale studies in `configs/`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::ChainConfig;
use crate::env::{FiniteMarkovParams, IidUniformParams, MovingAverageParams, Stream};
use crate::error::{Error, Result};
use crate::model::{logistic_potential, make_linear_model, make_logistic_model, ModelSpec};

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelBlock {
    /// Quadratic potential, `H(θ, y) = θ − y`; the chain is AR(1) with the
    /// data stream as its drive.
    Linear { d: usize, data_bound: f64 },
    /// Ridge-regularised streaming logistic regression on labelled pairs
    /// `y = (q, z)` with `q ∈ {0, 1}` and `‖z‖ ≤ z_bound`.
    Logistic { d: usize, c: f64, z_bound: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StreamBlock {
    /// I.i.d. uniform on the centered cube with ℓ2 norm at most `bound`.
    IidUniform { m: usize, bound: f64 },
    /// Stationary finite-state chain; rows of `p` index `states`.
    FiniteMarkov { states: Vec<Vec<f64>>, p: Vec<Vec<f64>> },
    /// Width-`window` moving average of an i.i.d. uniform innovation,
    /// rescaled to keep `‖Y‖ ≤ bound`; mixes in exactly `window` steps.
    MovingAverage { m: usize, bound: f64, window: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainBlock {
    pub lambda: f64,
    #[serde(default = "one")]
    pub beta: f64,
    pub theta0: Vec<f64>,
    pub horizon: usize,
    #[serde(default = "one_usize")]
    pub replicas: usize,
    pub seed: u64,
    #[serde(default)]
    pub allow_out_of_theory: bool,
}

/// Start law of the second chain in a coupling study.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartnerStart {
    Point { theta: Vec<f64> },
    Stationary { burn_in: usize },
}

/// Optional grid-oracle cross-check box for the logistic study.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCheckBlock {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_bins")]
    pub cells: usize,
    #[serde(default = "default_grid_iters")]
    pub iters: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentBlock {
    /// Ergodic averages of θ and θ² against closed-form targets.
    Lln {
        #[serde(default)]
        burn_in: usize,
        #[serde(default = "three")]
        mean_z_gate: f64,
        #[serde(default = "two_percent")]
        second_moment_rel_gate: f64,
    },
    /// Replica histogram of θ_n against the grid-oracle stationary marginal.
    Tv {
        horizons: Vec<usize>,
        fit_horizons: Vec<usize>,
        #[serde(default = "default_bins")]
        bins: usize,
        #[serde(default = "six")]
        box_sds: f64,
        #[serde(default = "default_grid_iters")]
        grid_iters: usize,
        #[serde(default = "five_percent")]
        tv_gate: f64,
        #[serde(default = "nine_tenths")]
        fit_r2_gate: f64,
    },
    /// Exact-coalescence times of paired chains under the split kernel.
    Coupling {
        radius: f64,
        horizons: Vec<usize>,
        partner: PartnerStart,
        #[serde(default = "r2_coupling")]
        fit_r2_gate: f64,
    },
    /// Monte Carlo + exact-in-noise audit of the drift certificate.
    Drift {
        #[serde(default = "twenty_one")]
        grid_points: usize,
        /// Default: twice the certificate's threshold radius.
        #[serde(default)]
        grid_radius: Option<f64>,
        #[serde(default = "hundred_thousand")]
        n_mc: usize,
    },
    /// Dependence decay of the θ chain against the transfer certificate.
    Mixing {
        lags: Vec<u64>,
        #[serde(default = "eight")]
        partition_cells: usize,
        #[serde(default = "thousand")]
        burn_in: usize,
    },
    /// Rescaled partial-sum endpoints over replica ensembles.
    Clt {
        #[serde(default = "twenty")]
        master_seeds: usize,
        #[serde(default = "one_percent")]
        ks_level: f64,
        #[serde(default = "ninety_five_percent")]
        ks_pass_fraction: f64,
        #[serde(default = "ten_percent")]
        lrv_rel_gate: f64,
        #[serde(default = "five_percent")]
        half_time_tol: f64,
        /// Default: ⌊√horizon⌋.
        #[serde(default)]
        batch_size: Option<usize>,
    },
    /// Streaming logistic regression: gradient audit and distance of the
    /// ergodic average to the population minimiser.
    Logistic {
        #[serde(default = "million")]
        gradient_n_mc: usize,
        #[serde(default = "one_per_mille")]
        gradient_rel_gate: f64,
        #[serde(default = "seven")]
        gradient_grid_points: usize,
        #[serde(default = "one")]
        gradient_grid_radius: f64,
        #[serde(default = "fd_default")]
        fd_step: f64,
        /// Pass gate is `distance_base + √λ`.
        #[serde(default = "ten_percent")]
        distance_base: f64,
        #[serde(default)]
        grid_check: Option<GridCheckBlock>,
    },
    /// Certificate bundle for the configured step size, plus an optional
    /// sweep written as CSV.
    Constants {
        #[serde(default)]
        lambda_sweep: Vec<f64>,
    },
}

impl ExperimentBlock {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentBlock::Lln { .. } => "lln",
            ExperimentBlock::Tv { .. } => "tv",
            ExperimentBlock::Coupling { .. } => "coupling",
            ExperimentBlock::Drift { .. } => "drift",
            ExperimentBlock::Mixing { .. } => "mixing",
            ExperimentBlock::Clt { .. } => "clt",
            ExperimentBlock::Logistic { .. } => "logistic",
            ExperimentBlock::Constants { .. } => "constants",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "yes")]
    pub write_csv: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: default_out_dir(), write_csv: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub stream: StreamBlock,
    pub chain: ChainBlock,
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

// serde default helpers -----------------------------------------------------

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn three() -> f64 {
    3.0
}
fn six() -> f64 {
    6.0
}
fn seven() -> usize {
    7
}
fn eight() -> usize {
    8
}
fn twenty() -> usize {
    20
}
fn twenty_one() -> usize {
    21
}
fn thousand() -> usize {
    1000
}
fn hundred_thousand() -> usize {
    100_000
}
fn million() -> usize {
    1_000_000
}
fn one_per_mille() -> f64 {
    1e-3
}
fn one_percent() -> f64 {
    0.01
}
fn two_percent() -> f64 {
    0.02
}
fn five_percent() -> f64 {
    0.05
}
fn ten_percent() -> f64 {
    0.10
}
fn ninety_five_percent() -> f64 {
    0.95
}
fn nine_tenths() -> f64 {
    0.9
}
fn r2_coupling() -> f64 {
    0.95
}
fn fd_default() -> f64 {
    1e-4
}
fn default_bins() -> usize {
    200
}
fn default_grid_iters() -> usize {
    100_000
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn yes() -> bool {
    true
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

impl ExperimentConfig {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes)?;
        cfg.schema_check()?;
        Ok(cfg)
    }

    /// Field-level invariants a schema can state without running anything:
    /// positive counts and dimensions, finite parameters, matching lengths.
    /// Cross-block coherence (which model a pipeline needs) and the
    /// certified step-size range are checked later and report failures
    /// rather than refusing to parse.
    pub fn schema_check(&self) -> Result<()> {
        fn pos(name: &str, x: f64) -> Result<()> {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {x}")))
            }
        }
        fn unit(name: &str, x: f64) -> Result<()> {
            if x > 0.0 && x <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0, 1], got {x}")))
            }
        }
        fn count(name: &str, n: usize) -> Result<()> {
            if n >= 1 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be at least 1")))
            }
        }
        fn horizon_list(name: &str, hs: &[usize]) -> Result<()> {
            if hs.is_empty() {
                return Err(Error::Config(format!("{name} must be non-empty")));
            }
            for &h in hs {
                count(name, h)?;
            }
            Ok(())
        }

        let d = match &self.model {
            ModelBlock::Linear { d, data_bound } => {
                pos("model.data_bound", *data_bound)?;
                *d
            }
            ModelBlock::Logistic { d, c, z_bound } => {
                pos("model.c", *c)?;
                pos("model.z_bound", *z_bound)?;
                *d
            }
        };
        count("model.d", d)?;

        match &self.stream {
            StreamBlock::IidUniform { m, bound } => {
                count("stream.m", *m)?;
                pos("stream.bound", *bound)?;
            }
            StreamBlock::FiniteMarkov { states, p } => {
                if states.is_empty() {
                    return Err(Error::Config("stream.states must be non-empty".into()));
                }
                if p.len() != states.len() {
                    return Err(Error::Config(format!(
                        "stream.p has {} rows for {} states",
                        p.len(),
                        states.len()
                    )));
                }
            }
            StreamBlock::MovingAverage { m, bound, window } => {
                count("stream.m", *m)?;
                pos("stream.bound", *bound)?;
                count("stream.window", *window)?;
            }
        }

        pos("chain.lambda", self.chain.lambda)?;
        pos("chain.beta", self.chain.beta)?;
        count("chain.horizon", self.chain.horizon)?;
        count("chain.replicas", self.chain.replicas)?;
        if self.chain.theta0.len() != d {
            return Err(Error::Config(format!(
                "chain.theta0 has {} coordinates but model.d is {d}",
                self.chain.theta0.len()
            )));
        }
        if self.chain.theta0.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("chain.theta0 must be finite".into()));
        }

        match &self.experiment {
            ExperimentBlock::Lln { mean_z_gate, second_moment_rel_gate, .. } => {
                pos("experiment.mean_z_gate", *mean_z_gate)?;
                pos("experiment.second_moment_rel_gate", *second_moment_rel_gate)?;
            }
            ExperimentBlock::Tv {
                horizons,
                fit_horizons,
                bins,
                box_sds,
                grid_iters,
                tv_gate,
                fit_r2_gate,
            } => {
                horizon_list("experiment.horizons", horizons)?;
                horizon_list("experiment.fit_horizons", fit_horizons)?;
                for h in fit_horizons {
                    if !horizons.contains(h) {
                        return Err(Error::Config(format!(
                            "experiment.fit_horizons entry {h} is not among the measured horizons"
                        )));
                    }
                }
                if *bins < 2 {
                    return Err(Error::Config("experiment.bins must be at least 2".into()));
                }
                pos("experiment.box_sds", *box_sds)?;
                count("experiment.grid_iters", *grid_iters)?;
                pos("experiment.tv_gate", *tv_gate)?;
                unit("experiment.fit_r2_gate", *fit_r2_gate)?;
            }
            ExperimentBlock::Coupling { radius, horizons, partner, fit_r2_gate } => {
                pos("experiment.radius", *radius)?;
                horizon_list("experiment.horizons", horizons)?;
                unit("experiment.fit_r2_gate", *fit_r2_gate)?;
                if let PartnerStart::Point { theta } = partner {
                    if theta.len() != d || theta.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Config(format!(
                            "experiment.partner.theta must hold {d} finite coordinates"
                        )));
                    }
                }
            }
            ExperimentBlock::Drift { grid_points, grid_radius, n_mc } => {
                if *grid_points < 2 {
                    return Err(Error::Config("experiment.grid_points must be at least 2".into()));
                }
                if let Some(r) = grid_radius {
                    pos("experiment.grid_radius", *r)?;
                }
                count("experiment.n_mc", *n_mc)?;
            }
            ExperimentBlock::Mixing { lags, partition_cells, .. } => {
                if lags.is_empty() || lags.contains(&0) {
                    return Err(Error::Config(
                        "experiment.lags must be non-empty positive integers".into(),
                    ));
                }
                if *partition_cells < 2 {
                    return Err(Error::Config(
                        "experiment.partition_cells must be at least 2".into(),
                    ));
                }
            }
            ExperimentBlock::Clt {
                master_seeds,
                ks_level,
                ks_pass_fraction,
                lrv_rel_gate,
                half_time_tol,
                batch_size,
            } => {
                count("experiment.master_seeds", *master_seeds)?;
                unit("experiment.ks_level", *ks_level)?;
                unit("experiment.ks_pass_fraction", *ks_pass_fraction)?;
                pos("experiment.lrv_rel_gate", *lrv_rel_gate)?;
                pos("experiment.half_time_tol", *half_time_tol)?;
                if let Some(b) = batch_size {
                    count("experiment.batch_size", *b)?;
                }
            }
            ExperimentBlock::Logistic {
                gradient_n_mc,
                gradient_rel_gate,
                gradient_grid_points,
                gradient_grid_radius,
                fd_step,
                distance_base,
                grid_check,
            } => {
                count("experiment.gradient_n_mc", *gradient_n_mc)?;
                pos("experiment.gradient_rel_gate", *gradient_rel_gate)?;
                count("experiment.gradient_grid_points", *gradient_grid_points)?;
                pos("experiment.gradient_grid_radius", *gradient_grid_radius)?;
                pos("experiment.fd_step", *fd_step)?;
                pos("experiment.distance_base", *distance_base)?;
                if let Some(g) = grid_check {
                    if !(g.lo.is_finite() && g.hi.is_finite() && g.lo < g.hi) {
                        return Err(Error::Config(
                            "experiment.grid_check needs finite lo < hi".into(),
                        ));
                    }
                    if g.cells < 2 {
                        return Err(Error::Config(
                            "experiment.grid_check.cells must be at least 2".into(),
                        ));
                    }
                    count("experiment.grid_check.iters", g.iters)?;
                }
            }
            ExperimentBlock::Constants { lambda_sweep } => {
                for &l in lambda_sweep {
                    pos("experiment.lambda_sweep entry", l)?;
                }
            }
        }
        Ok(())
    }

    /// Reads and parses a config, returning the raw bytes alongside so the
    /// report can pin their digest.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(&path)?;
        let cfg = Self::parse(&bytes)?;
        Ok((cfg, bytes))
    }

    /// Instantiates the model; for a logistic model on a finite-state stream
    /// the exact population potential and mean field are attached, enabling
    /// the gradient-consistency audit.
    pub fn build_model(&self) -> Result<ModelSpec> {
        let model = match self.model {
            ModelBlock::Linear { d, data_bound } => make_linear_model(d, data_bound)?,
            ModelBlock::Logistic { d, c, z_bound } => {
                let mut m = make_logistic_model(d, c, z_bound)?;
                if let Some(env) = self.markov_params()? {
                    let (u, mean_field) = logistic_potential(c, &env)?;
                    m = m.with_potential(u, mean_field);
                }
                m
            }
        };
        let model = if self.chain.beta == 1.0 { model } else { model.with_beta(self.chain.beta)? };
        let stream_dim = self.stream_dim()?;
        if stream_dim != model.m {
            return Err(Error::Config(format!(
                "stream emits dimension {stream_dim}, model consumes {}",
                model.m
            )));
        }
        if self.chain.theta0.len() != model.d {
            return Err(Error::Config(format!(
                "theta0 has {} coordinates, model has dimension {}",
                self.chain.theta0.len(),
                model.d
            )));
        }
        Ok(model)
    }

    pub fn build_stream(&self) -> Result<Stream> {
        match &self.stream {
            StreamBlock::IidUniform { m, bound } => {
                Stream::iid_uniform(IidUniformParams { m: *m, bound: *bound }, self.chain.seed)
            }
            StreamBlock::FiniteMarkov { .. } => {
                let params = self.markov_params()?.expect("block is finite_markov");
                Stream::finite_markov(params, self.chain.seed)
            }
            StreamBlock::MovingAverage { m, bound, window } => Stream::moving_average(
                MovingAverageParams { m: *m, bound: *bound, window: *window },
                self.chain.seed,
            ),
        }
    }

    /// The finite-state parameters when the stream block is a finite chain
    /// (started at its stationary law), `None` otherwise.
    pub fn markov_params(&self) -> Result<Option<FiniteMarkovParams>> {
        match &self.stream {
            StreamBlock::FiniteMarkov { states, p } => Ok(Some(
                FiniteMarkovParams::with_stationary_start(states.clone(), p.clone())?,
            )),
            _ => Ok(None),
        }
    }

    /// Worst-case ℓ2 norm of a stream sample, from the block parameters.
    pub fn stream_bound(&self) -> Result<f64> {
        match &self.stream {
            StreamBlock::IidUniform { bound, .. } => Ok(*bound),
            StreamBlock::FiniteMarkov { .. } => {
                Ok(self.markov_params()?.expect("block is finite_markov").bound())
            }
            StreamBlock::MovingAverage { bound, .. } => Ok(*bound),
        }
    }

    fn stream_dim(&self) -> Result<usize> {
        match &self.stream {
            StreamBlock::IidUniform { m, .. } => Ok(*m),
            StreamBlock::FiniteMarkov { .. } => {
                Ok(self.markov_params()?.expect("block is finite_markov").dim())
            }
            StreamBlock::MovingAverage { m, .. } => Ok(*m),
        }
    }

    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            lambda: self.chain.lambda,
            beta: self.chain.beta,
            theta0: self.chain.theta0.clone(),
            horizon: self.chain.horizon,
            seed: self.chain.seed,
            allow_out_of_theory: self.chain.allow_out_of_theory,
        }
    }
}
