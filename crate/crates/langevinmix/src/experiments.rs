//! Experiment pipelines: each one wires engine runs to oracle targets and
//! certificate overlays, records estimates and pass/fail gates in an
//! [`ExperimentReport`], and optionally writes curve CSVs.
//!
//! Pipelines are deterministic in (config, seed): replica work is
//! parallelised with indexed collection, so thread count changes wall time
//! but never a single output byte.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use crate::config::{
    ExperimentBlock, ExperimentConfig, GridCheckBlock, ModelBlock, PartnerStart, StreamBlock,
};
use crate::engine::{
    annealed_coupling_curve, run_chain, run_observable_sums, run_theta_checkpoints, ChainConfig,
    SplitKernelParams, StartLaw, StepMode,
};
use crate::env::{exact_alpha_finite, empirical_alpha_partition, stationarity_probe, PartitionSpec};
use crate::error::{Error, Result};
use crate::model::{
    check_dissipativity, check_gradient_consistency, check_linear_growth, norm, ModelSpec,
    ValidationReport,
};
use crate::numeric::RunningSum;
use crate::oracle::{
    ar1_closed_form, grid_stationary_law, logistic_minimizer, markov_scalar_autocorr,
    markov_scalar_moments, Ar1ClosedForm, GridSpec,
};
use crate::report::{config_digest, ExperimentReport, RunMeta};
use crate::rng::{derive_key, Domain};
use crate::stats::{
    default_batch_size, exp_rate_fit, ks_normality, long_run_variance, mean, tv_distance,
    EmpiricalLaw, LrvMethod,
};
use crate::theory::{coupling_bound, coupling_rate, mixing_transfer_bound, radial_theta_grid,
    verify_drift};

/// CLI-level overrides layered on top of the config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

struct Ctx {
    model: ModelSpec,
    seed: u64,
    out_dir: PathBuf,
    write_csv: bool,
}

impl Ctx {
    /// Base chain config with the (possibly overridden) master seed.
    fn chain(&self, cfg: &ExperimentConfig) -> ChainConfig {
        ChainConfig { seed: self.seed, ..cfg.chain_config() }
    }

    fn csv_path(&self, name: &str) -> Option<PathBuf> {
        self.write_csv.then(|| self.out_dir.join(name))
    }
}

/// Runs the experiment the config declares.
pub fn execute(cfg: &ExperimentConfig, raw: &[u8], ov: &Overrides) -> Result<ExperimentReport> {
    match &cfg.experiment {
        ExperimentBlock::Lln { .. } => harness(cfg, raw, ov, cfg.experiment.name(), run_lln),
        ExperimentBlock::Tv { .. } => harness(cfg, raw, ov, cfg.experiment.name(), run_tv),
        ExperimentBlock::Coupling { .. } => {
            harness(cfg, raw, ov, cfg.experiment.name(), run_coupling)
        }
        ExperimentBlock::Drift { .. } => harness(cfg, raw, ov, cfg.experiment.name(), run_drift),
        ExperimentBlock::Mixing { .. } => harness(cfg, raw, ov, cfg.experiment.name(), run_mixing),
        ExperimentBlock::Clt { .. } => harness(cfg, raw, ov, cfg.experiment.name(), run_clt),
        ExperimentBlock::Logistic { .. } => {
            harness(cfg, raw, ov, cfg.experiment.name(), run_logistic)
        }
        ExperimentBlock::Constants { .. } => constants_report(cfg, raw, ov),
    }
}

/// Structural audits of the configured model and stream, available for any
/// config regardless of its experiment block.
pub fn validate_config(
    cfg: &ExperimentConfig,
    raw: &[u8],
    ov: &Overrides,
) -> Result<ExperimentReport> {
    harness(cfg, raw, ov, "validate", run_validate)
}

/// The certificate bundle for the configured step size, plus a sweep CSV.
pub fn constants_report(
    cfg: &ExperimentConfig,
    raw: &[u8],
    ov: &Overrides,
) -> Result<ExperimentReport> {
    harness(cfg, raw, ov, "constants", run_constants)
}

fn harness(
    cfg: &ExperimentConfig,
    raw: &[u8],
    ov: &Overrides,
    name: &str,
    body: fn(&ExperimentConfig, &Ctx, &mut ExperimentReport) -> Result<()>,
) -> Result<ExperimentReport> {
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ov.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let ctx = Ctx {
        model: cfg.build_model()?,
        seed: ov.seed.unwrap_or(cfg.chain.seed),
        out_dir: ov.out.clone().unwrap_or_else(|| cfg.output.dir.clone()),
        write_csv: cfg.output.write_csv,
    };
    if ctx.write_csv {
        std::fs::create_dir_all(&ctx.out_dir)?;
    }
    let mut report = ExperimentReport::new(name, config_digest(raw), ctx.seed);
    pool.install(|| body(cfg, &ctx, &mut report))?;
    report.meta = Some(RunMeta {
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        finished_at_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        threads: pool.current_num_threads(),
    });
    Ok(report)
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Closed-form stationary targets for the scalar linear chain, from the
/// stream block's exact moments.
fn drive_closed_form(cfg: &ExperimentConfig) -> Result<Ar1ClosedForm> {
    if !matches!(cfg.model, ModelBlock::Linear { d: 1, .. }) {
        return Err(Error::Unsupported(
            "closed-form chain moments exist for the scalar linear model only".into(),
        ));
    }
    let lambda = cfg.chain.lambda;
    match &cfg.stream {
        StreamBlock::IidUniform { m: 1, bound } => {
            ar1_closed_form(lambda, 0.0, bound * bound / 3.0, &BTreeMap::new())
        }
        StreamBlock::FiniteMarkov { .. } => {
            let params = cfg.markov_params()?.expect("block is finite_markov");
            let (mean, var) = markov_scalar_moments(&params, 0)?;
            let autocorr =
                if var > 0.0 { markov_scalar_autocorr(&params, 0)? } else { BTreeMap::new() };
            ar1_closed_form(lambda, mean, var, &autocorr)
        }
        _ => Err(Error::Unsupported(
            "closed-form drive moments are wired for scalar iid_uniform and finite_markov \
             streams only"
                .into(),
        )),
    }
}

/// Attaches the certificate bundle when the step size strictly admits one;
/// at the boundary step the bundle does not exist and the report goes
/// without it.
fn attach_constants(report: &mut ExperimentReport, model: &ModelSpec, lambda: f64) {
    if let Ok(tc) = coupling_rate(model, lambda) {
        report.constants = Some(tc);
    }
}

fn record_validation(report: &mut ExperimentReport, vr: &ValidationReport) {
    report.check(vr.check.clone(), vr.passed, vr.worst_margin, 0.0, vr.detail.clone());
}

fn write_csv_file(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Ergodic averages (lln)
// ---------------------------------------------------------------------------

fn run_lln(cfg: &ExperimentConfig, ctx: &Ctx, report: &mut ExperimentReport) -> Result<()> {
    let ExperimentBlock::Lln { burn_in, mean_z_gate, second_moment_rel_gate } = cfg.experiment
    else {
        unreachable!("dispatched on the block")
    };
    let closed = drive_closed_form(cfg)?;
    let stream = cfg.build_stream()?;
    let cc = ctx.chain(cfg);
    let run = run_chain(&ctx.model, &stream, &cc, &StepMode::Plain)?;
    let series_full = run.coordinate_series(0);
    if series_full.len() <= 1 + burn_in {
        return Err(Error::InvalidParameter("horizon too short for the burn-in".into()));
    }
    let series = &series_full[1 + burn_in..];
    let n = series.len();
    let avg = mean(series)?;
    let lrv = long_run_variance(series, LrvMethod::BatchMeans, default_batch_size(n))?;
    let se = (lrv / n as f64).sqrt();
    let mut sq = RunningSum::new();
    for &x in series {
        sq.add(x * x);
    }
    let second = sq.value() / n as f64;
    let second_target = closed.stat_var + closed.stat_mean * closed.stat_mean;

    let mean_dev = (avg - closed.stat_mean).abs();
    report.check(
        "lln_mean",
        mean_dev <= mean_z_gate * se,
        mean_dev,
        mean_z_gate * se,
        format!(
            "|{avg:.6} - {:.6}| = {mean_dev:.2e} vs {mean_z_gate} se = {:.2e} (n = {n})",
            closed.stat_mean,
            mean_z_gate * se
        ),
    );
    let rel = (second - second_target).abs() / second_target;
    report.check(
        "lln_second_moment",
        rel <= second_moment_rel_gate,
        rel,
        second_moment_rel_gate,
        format!("time average of theta^2 = {second:.6}, closed form {second_target:.6}, rel err {rel:.2e}"),
    );

    report.estimate("mean", avg);
    report.estimate("se", se);
    report.estimate("long_run_variance", lrv);
    report.estimate("second_moment", second);
    report.estimate("n_used", n);
    report.bound("stat_mean", closed.stat_mean);
    report.bound("stat_var", closed.stat_var);
    report.bound("second_moment", second_target);
    report.bound("long_run_variance", closed.long_run_var);
    attach_constants(report, &ctx.model, cc.lambda);

    if let Some(path) = ctx.csv_path("lln_running_average.csv") {
        let stride = (n / 2000).max(1);
        let mut acc = RunningSum::new();
        let mut rows = Vec::new();
        for (i, &x) in series.iter().enumerate() {
            acc.add(x);
            if (i + 1) % stride == 0 || i + 1 == n {
                rows.push(format!("{},{:.17e}", i + 1, acc.value() / (i + 1) as f64));
            }
        }
        write_csv_file(&path, "n,running_mean", &rows)?;
    }
    if ctx.write_csv {
        run.write_binary(ctx.out_dir.join("lln_theta.traj"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Law convergence in total variation (tv)
// ---------------------------------------------------------------------------

fn run_tv(cfg: &ExperimentConfig, ctx: &Ctx, report: &mut ExperimentReport) -> Result<()> {
    let ExperimentBlock::Tv {
        ref horizons,
        ref fit_horizons,
        bins,
        box_sds,
        grid_iters,
        tv_gate,
        fit_r2_gate,
    } = cfg.experiment
    else {
        unreachable!("dispatched on the block")
    };
    let params = cfg
        .markov_params()?
        .ok_or_else(|| Error::Unsupported("the tv oracle needs a finite-state stream".into()))?;
    let closed = drive_closed_form(cfg)?;
    let sd = closed.stat_var.sqrt();
    let grid =
        GridSpec { lo: closed.stat_mean - box_sds * sd, hi: closed.stat_mean + box_sds * sd, n_cells: bins };
    let lambda = cfg.chain.lambda;
    let law = grid_stationary_law(&ctx.model, &params, lambda, &grid, grid_iters)?;
    let oracle = law.to_empirical_law()?;

    let max_h = *horizons
        .last()
        .ok_or_else(|| Error::Config("tv needs at least one horizon".into()))?;
    let stream = cfg.build_stream()?;
    let base = ChainConfig { horizon: max_h, ..ctx.chain(cfg) };
    let replicas = cfg.chain.replicas;
    let per_replica: Vec<Vec<f64>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let cc = ChainConfig { seed: derive_key(ctx.seed, Domain::Replica, r), ..base.clone() };
            let rows = run_theta_checkpoints(&ctx.model, &stream, &cc, &StepMode::Plain, horizons)?;
            Ok(rows.into_iter().map(|v| v[0]).collect())
        })
        .collect::<Result<_>>()?;

    let mut tv_curve = Vec::with_capacity(horizons.len());
    for i in 0..horizons.len() {
        let samples: Vec<f64> = per_replica.iter().map(|row| row[i]).collect();
        let empirical = EmpiricalLaw::from_samples(&samples, grid.lo, grid.hi, bins)?;
        tv_curve.push(tv_distance(&empirical, &oracle)?);
    }

    let final_tv = *tv_curve.last().expect("nonempty");
    report.check(
        "tv_final",
        final_tv <= tv_gate,
        final_tv,
        tv_gate,
        format!("tv(law at n = {max_h}, oracle) = {final_tv:.4} over {replicas} replicas, {bins} bins"),
    );

    let fit_points: Vec<(f64, f64)> = fit_horizons
        .iter()
        .map(|h| {
            horizons
                .iter()
                .position(|x| x == h)
                .map(|i| (*h as f64, tv_curve[i]))
                .ok_or_else(|| Error::Config(format!("fit horizon {h} is not a measured horizon")))
        })
        .collect::<Result<_>>()?;
    let ns: Vec<f64> = fit_points.iter().map(|p| p.0).collect();
    let vals: Vec<f64> = fit_points.iter().map(|p| p.1).collect();
    let (rate, _, r2) = exp_rate_fit(&ns, &vals)?;
    report.check(
        "tv_decay_rate_positive",
        rate > 0.0,
        rate,
        0.0,
        format!("fitted tv decay rate {rate:.4} per step over horizons {fit_horizons:?}"),
    );
    report.check(
        "tv_decay_fit_r2",
        r2 >= fit_r2_gate,
        r2,
        fit_r2_gate,
        format!("log-linear fit r^2 = {r2:.4}"),
    );

    report.estimate("horizons", horizons);
    report.estimate("tv", &tv_curve);
    report.estimate("fit_rate", rate);
    report.estimate("fit_r2", r2);
    report.estimate("oracle_iterations", law.iterations);
    report.estimate("oracle_box", [grid.lo, grid.hi]);
    report.bound("stat_var", closed.stat_var);
    if let Ok(tc) = coupling_rate(&ctx.model, lambda) {
        // Annealed certificate between the point start and the stationary
        // law; the floored rate makes this near-vacuous, which is the honest
        // value of the bound at desk scale.
        let ln_v2 = tc.ln_c - (1.0 - tc.gamma).ln();
        if max_h as u64 >= tc.n_min {
            let cert = coupling_bound(&tc, tc.ln_v(&cfg.chain.theta0), ln_v2, max_h as u64)?;
            report.bound("tv_certificate_final", cert);
        }
        report.constants = Some(tc);
    }

    if let Some(path) = ctx.csv_path("tv_curve.csv") {
        let rows: Vec<String> = horizons
            .iter()
            .zip(&tv_curve)
            .map(|(h, tv)| format!("{h},{tv:.17e}"))
            .collect();
        write_csv_file(&path, "n,tv", &rows)?;
    }
    if let Some(path) = ctx.csv_path("tv_oracle_marginal.csv") {
        law.write_csv(path)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Exact coalescence of paired chains (coupling)
// ---------------------------------------------------------------------------

fn run_coupling(cfg: &ExperimentConfig, ctx: &Ctx, report: &mut ExperimentReport) -> Result<()> {
    let ExperimentBlock::Coupling { radius, ref horizons, ref partner, fit_r2_gate } =
        cfg.experiment
    else {
        unreachable!("dispatched on the block")
    };
    let lambda = cfg.chain.lambda;
    let tc = coupling_rate(&ctx.model, lambda)?;
    let split = SplitKernelParams::from_theory(&ctx.model, lambda, radius)?;
    let stream = cfg.build_stream()?;
    let law = match partner {
        PartnerStart::Point { theta } => StartLaw::Point(theta.clone()),
        PartnerStart::Stationary { burn_in } => StartLaw::Stationary { burn_in: *burn_in },
    };
    let curve = annealed_coupling_curve(
        &ctx.model,
        &stream,
        lambda,
        &cfg.chain.theta0,
        &law,
        horizons,
        cfg.chain.replicas,
        ctx.seed,
        &split,
    )?;

    let worst_increase = curve
        .survivors
        .windows(2)
        .map(|w| w[1] as i64 - w[0] as i64)
        .max()
        .unwrap_or(0)
        .max(0);
    report.check(
        "coupling_non_increasing",
        worst_increase == 0,
        worst_increase as f64,
        0.0,
        format!("survivors across horizons: {:?}", curve.survivors),
    );

    let ns: Vec<f64> = curve.horizons.iter().map(|&h| h as f64).collect();
    let (rate, _, r2) = exp_rate_fit(&ns, &curve.probability)?;
    report.check(
        "coupling_decay_rate_positive",
        rate > 0.0,
        rate,
        0.0,
        format!("fitted no-coupling decay rate {rate:.4} per step"),
    );
    report.check(
        "coupling_decay_fit_r2",
        r2 >= fit_r2_gate,
        r2,
        fit_r2_gate,
        format!("log-linear fit r^2 = {r2:.4}"),
    );

    let ln_v1 = tc.ln_v(&cfg.chain.theta0);
    let ln_v2 = match &law {
        StartLaw::Point(p) => tc.ln_v(p),
        StartLaw::Stationary { .. } => tc.ln_c - (1.0 - tc.gamma).ln(),
    };
    let mut certificates: Vec<Option<f64>> = Vec::with_capacity(curve.horizons.len());
    let mut worst_excess = f64::NEG_INFINITY;
    let mut covered = 0usize;
    for (i, &h) in curve.horizons.iter().enumerate() {
        if (h as u64) < tc.n_min {
            certificates.push(None);
            continue;
        }
        let bound = coupling_bound(&tc, ln_v1, ln_v2, h as u64)?;
        worst_excess = worst_excess.max(curve.upper99[i] - bound);
        certificates.push(Some(bound));
        covered += 1;
    }
    report.check(
        "coupling_horizons_reach_certificate",
        covered > 0,
        covered as f64,
        1.0,
        format!("{covered} of {} horizons at or beyond N = {}", curve.horizons.len(), tc.n_min),
    );
    if covered > 0 {
        report.check(
            "coupling_certificate_domination",
            worst_excess <= 0.0,
            worst_excess,
            0.0,
            format!(
                "max over horizons >= N of (upper99 - certificate) = {worst_excess:.3e}"
            ),
        );
    }

    let coupled: Vec<usize> = curve.taus.iter().filter_map(|t| *t).collect();
    report.estimate("horizons", &curve.horizons);
    report.estimate("survivors", &curve.survivors);
    report.estimate("probability", &curve.probability);
    report.estimate("upper99", &curve.upper99);
    report.estimate("fit_rate", rate);
    report.estimate("fit_r2", r2);
    report.estimate(
        "mean_tau",
        if coupled.is_empty() {
            f64::NAN
        } else {
            coupled.iter().sum::<usize>() as f64 / coupled.len() as f64
        },
    );
    report.estimate("coupled_fraction", coupled.len() as f64 / curve.replicas as f64);
    report.estimate("regeneration_mass", split.alpha_tilde);
    report.bound("certificate", &certificates);
    report.constants = Some(tc);

    if let Some(path) = ctx.csv_path("coupling_curve.csv") {
        let rows: Vec<String> = (0..curve.horizons.len())
            .map(|i| {
                format!(
                    "{},{},{:.17e},{:.17e},{}",
                    curve.horizons[i],
                    curve.survivors[i],
                    curve.probability[i],
                    curve.upper99[i],
                    certificates[i].map_or("".into(), |b| format!("{b:.17e}")),
                )
            })
            .collect();
        write_csv_file(&path, "n,survivors,p_no_couple,upper99,certificate", &rows)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Drift certificate audit (drift)
// ---------------------------------------------------------------------------

fn run_drift(cfg: &ExperimentConfig, ctx: &Ctx, report: &mut ExperimentReport) -> Result<()> {
    let ExperimentBlock::Drift { grid_points, grid_radius, n_mc } = cfg.experiment else {
        unreachable!("dispatched on the block")
    };
    let lambda = cfg.chain.lambda;
    let dc = crate::theory::drift_constants(&ctx.model, lambda)?;
    let radius = grid_radius.unwrap_or(2.0 * dc.r_drift);
    let grid = radial_theta_grid(ctx.model.d, radius, grid_points);
    let stream = cfg.build_stream()?;
    let vr = verify_drift(&ctx.model, &stream, &dc, &grid, n_mc, ctx.seed)?;
    record_validation(report, &vr);

    report.estimate("grid_points", grid.len());
    report.estimate("grid_radius", radius);
    report.estimate("n_mc", n_mc);
    report.bound("gamma", dc.gamma);
    report.bound("ln_C", dc.ln_big_c);
    report.bound("r_drift", dc.r_drift);
    report.bound("a", dc.a);
    report.bound("rho", dc.rho);
    attach_constants(report, &ctx.model, lambda);
    Ok(())
}

// ---------------------------------------------------------------------------
// Dependence decay of the chain (mixing)
// ---------------------------------------------------------------------------

fn run_mixing(cfg: &ExperimentConfig, ctx: &Ctx, report: &mut ExperimentReport) -> Result<()> {
    let ExperimentBlock::Mixing { ref lags, partition_cells, burn_in } = cfg.experiment else {
        unreachable!("dispatched on the block")
    };
    if lags.is_empty() || lags.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("lags must be nonempty and strictly increasing".into()));
    }
    let params = cfg.markov_params()?.ok_or_else(|| {
        Error::Unsupported("the exact environment mixing curve needs a finite-state stream".into())
    })?;
    let lambda = cfg.chain.lambda;
    let tc = coupling_rate(&ctx.model, lambda)?;

    let max_lag = *lags.last().expect("nonempty");
    let all_lags: Vec<u64> = (1..=max_lag).collect();
    let env_exact = exact_alpha_finite(&params, &all_lags)?;

    let stream = cfg.build_stream()?;
    let cc = ctx.chain(cfg);
    let run = run_chain(&ctx.model, &stream, &cc, &StepMode::Plain)?;
    let theta_series: Vec<f64> = run.coordinate_series(0)[1 + burn_in..].to_vec();
    let partition = PartitionSpec { cells: partition_cells, coordinate: 0 };
    let alpha_theta = empirical_alpha_partition(&theta_series, 1, &partition, lags)?;
    let env_series: Vec<f64> =
        run.env_trace.data.iter().step_by(run.env_trace.m).skip(burn_in).copied().collect();
    let alpha_env_hat = empirical_alpha_partition(&env_series, 1, &partition, lags)?;

    let ln_v0 = tc.ln_v(&cfg.chain.theta0);
    let mut bounds: Vec<Option<f64>> = Vec::with_capacity(lags.len());
    let mut worst_excess = f64::NEG_INFINITY;
    let mut covered = 0usize;
    for &l in lags {
        if l < 2 * tc.n_min {
            bounds.push(None);
            continue;
        }
        let b = mixing_transfer_bound(&tc, ln_v0, &env_exact, l)?;
        let a_hat = alpha_theta.alpha(l).expect("estimated at every configured lag");
        worst_excess = worst_excess.max(a_hat - b);
        bounds.push(Some(b));
        covered += 1;
    }
    report.check(
        "mixing_lags_reach_certificate",
        covered > 0,
        covered as f64,
        1.0,
        format!("{covered} of {} lags at or beyond 2N = {}", lags.len(), 2 * tc.n_min),
    );
    if covered > 0 {
        report.check(
            "mixing_transfer_domination",
            worst_excess <= 0.0,
            worst_excess,
            0.0,
            format!("max over lags >= 2N of (alpha_hat - transfer bound) = {worst_excess:.3e}"),
        );
    }

    let collect_curve = |curve: &crate::env::MixingCurve| -> Vec<f64> {
        lags.iter().map(|l| curve.alpha(*l).unwrap_or(f64::NAN)).collect()
    };
    report.estimate("lags", lags);
    report.estimate("alpha_theta", collect_curve(&alpha_theta));
    report.estimate("alpha_env_hat", collect_curve(&alpha_env_hat));
    report.estimate("alpha_env_exact", collect_curve(&env_exact));
    report.estimate("n_used", theta_series.len());
    report.bound("transfer", &bounds);
    report.constants = Some(tc);

    if let Some(path) = ctx.csv_path("mixing_curve.csv") {
        let rows: Vec<String> = lags
            .iter()
            .enumerate()
            .map(|(i, l)| {
                format!(
                    "{l},{:.17e},{:.17e},{:.17e},{}",
                    env_exact.alpha(*l).unwrap_or(f64::NAN),
                    alpha_env_hat.alpha(*l).unwrap_or(f64::NAN),
                    alpha_theta.alpha(*l).unwrap_or(f64::NAN),
                    bounds[i].map_or("".into(), |b| format!("{b:.17e}")),
                )
            })
            .collect();
        write_csv_file(&path, "lag,alpha_env_exact,alpha_env_hat,alpha_theta,transfer_bound", &rows)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Partial-sum fluctuations (clt)
// ---------------------------------------------------------------------------

fn run_clt(cfg: &ExperimentConfig, ctx: &Ctx, report: &mut ExperimentReport) -> Result<()> {
    let ExperimentBlock::Clt {
        master_seeds,
        ks_level,
        ks_pass_fraction,
        lrv_rel_gate,
        half_time_tol,
        batch_size,
    } = cfg.experiment
    else {
        unreachable!("dispatched on the block")
    };
    let closed = drive_closed_form(cfg)?;
    let n = cfg.chain.horizon;
    let half = n / 2;
    if half == 0 {
        return Err(Error::Config("horizon must be at least 2".into()));
    }
    if master_seeds == 0 || cfg.chain.replicas == 0 {
        return Err(Error::Config("need at least one master seed and one replica".into()));
    }
    let batch = batch_size.unwrap_or_else(|| default_batch_size(n));
    let stream = cfg.build_stream()?;
    let base = ctx.chain(cfg);
    let replicas = cfg.chain.replicas;
    let sqrt_n = (n as f64).sqrt();

    let mut sigma_sqs = Vec::with_capacity(master_seeds);
    let mut ks_ps = Vec::with_capacity(master_seeds);
    let mut ks_ds = Vec::with_capacity(master_seeds);
    let mut ratios = Vec::with_capacity(master_seeds);
    let phi = |theta: &[f64]| theta[0];
    for k in 0..master_seeds as u64 {
        let master = derive_key(ctx.seed, Domain::Replica, k);
        let sums: Vec<(f64, f64)> = (0..replicas as u64)
            .into_par_iter()
            .map(|r| {
                let cc =
                    ChainConfig { seed: derive_key(master, Domain::Replica, r), ..base.clone() };
                let s = run_observable_sums(
                    &ctx.model,
                    &stream,
                    &cc,
                    &StepMode::Plain,
                    &phi,
                    &[half, n],
                )?;
                Ok((s[0], s[1]))
            })
            .collect::<Result<_>>()?;
        // Long-run variance from one dedicated trajectory, independent of
        // the replica ensemble it studentizes.
        let aux_cc = ChainConfig { seed: derive_key(master, Domain::Aux, 0), ..base.clone() };
        let aux = run_chain(&ctx.model, &stream, &aux_cc, &StepMode::Plain)?;
        let sigma_sq =
            long_run_variance(&aux.coordinate_series(0)[1..], LrvMethod::BatchMeans, batch)?;

        let mut grand = RunningSum::new();
        for (_, s_full) in &sums {
            grand.add(*s_full);
        }
        let m_hat = grand.value() / (replicas as f64 * n as f64);
        let b_one: Vec<f64> =
            sums.iter().map(|(_, s)| (s - n as f64 * m_hat) / sqrt_n).collect();
        let b_half: Vec<f64> =
            sums.iter().map(|(s, _)| (s - half as f64 * m_hat) / sqrt_n).collect();
        let sigma = sigma_sq.sqrt();
        if !(sigma > 0.0) {
            return Err(Error::Numerical("long-run variance estimate collapsed to zero".into()));
        }
        let studentized: Vec<f64> = b_one.iter().map(|b| b / sigma).collect();
        let (d, p) = ks_normality(&studentized)?;
        let mh = mean(&b_half)?;
        let var_half =
            b_half.iter().map(|b| (b - mh) * (b - mh)).sum::<f64>() / (replicas - 1) as f64;
        sigma_sqs.push(sigma_sq);
        ks_ps.push(p);
        ks_ds.push(d);
        ratios.push(var_half / sigma_sq);
    }

    let pooled_sigma_sq = mean(&sigma_sqs)?;
    let rel = (pooled_sigma_sq - closed.long_run_var).abs() / closed.long_run_var;
    report.check(
        "clt_long_run_variance",
        rel <= lrv_rel_gate,
        rel,
        lrv_rel_gate,
        format!(
            "pooled batch-means estimate {pooled_sigma_sq:.4} vs closed form {:.4}, rel err {rel:.3}",
            closed.long_run_var
        ),
    );
    let passing = ks_ps.iter().filter(|&&p| p >= ks_level).count();
    let fraction = passing as f64 / master_seeds as f64;
    report.check(
        "clt_ks_normality",
        fraction >= ks_pass_fraction,
        fraction,
        ks_pass_fraction,
        format!(
            "{passing} of {master_seeds} master seeds pass the level-{ks_level} KS test of the \
             studentized endpoint"
        ),
    );
    let pooled_ratio = mean(&ratios)?;
    report.check(
        "clt_half_time_variance",
        (pooled_ratio - 0.5).abs() <= half_time_tol,
        pooled_ratio,
        0.5,
        format!("Var(B(1/2))/sigma^2 pooled over seeds = {pooled_ratio:.4}, expected 0.5"),
    );

    report.estimate("sigma_sq_per_seed", &sigma_sqs);
    report.estimate("ks_p_per_seed", &ks_ps);
    report.estimate("ks_d_per_seed", &ks_ds);
    report.estimate("var_ratio_per_seed", &ratios);
    report.estimate("pooled_sigma_sq", pooled_sigma_sq);
    report.estimate("pooled_var_ratio", pooled_ratio);
    report.estimate("batch_size", batch);
    report.estimate("replicas", replicas);
    report.estimate("horizon", n);
    report.bound("long_run_variance", closed.long_run_var);
    report.bound("stat_var", closed.stat_var);
    attach_constants(report, &ctx.model, cfg.chain.lambda);

    if let Some(path) = ctx.csv_path("clt_seeds.csv") {
        let rows: Vec<String> = (0..master_seeds)
            .map(|k| {
                format!(
                    "{k},{:.17e},{:.17e},{:.17e},{:.17e}",
                    sigma_sqs[k], ks_ds[k], ks_ps[k], ratios[k]
                )
            })
            .collect();
        write_csv_file(&path, "master_seed,sigma_sq,ks_d,ks_p,var_ratio_half", &rows)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Streaming logistic regression (logistic)
// ---------------------------------------------------------------------------

fn run_logistic(cfg: &ExperimentConfig, ctx: &Ctx, report: &mut ExperimentReport) -> Result<()> {
    let ExperimentBlock::Logistic {
        gradient_n_mc,
        gradient_rel_gate,
        gradient_grid_points,
        gradient_grid_radius,
        fd_step,
        distance_base,
        ref grid_check,
    } = cfg.experiment
    else {
        unreachable!("dispatched on the block")
    };
    if !matches!(cfg.model, ModelBlock::Logistic { .. }) {
        return Err(Error::Config("the logistic study needs a logistic model block".into()));
    }
    let params = cfg.markov_params()?.ok_or_else(|| {
        Error::Unsupported("the population minimiser needs a finite-state stream".into())
    })?;
    let lambda = cfg.chain.lambda;

    let theta_dagger = logistic_minimizer(&ctx.model, &params, 1e-12)?;

    let mut audit_stream =
        cfg.build_stream()?.reseeded(derive_key(ctx.seed, Domain::Aux, 0xad17))?;
    let grad = check_gradient_consistency(
        &ctx.model,
        &mut audit_stream,
        gradient_grid_radius,
        gradient_grid_points,
        gradient_n_mc,
        fd_step,
        gradient_rel_gate,
    )?;
    record_validation(report, &grad);

    let stream = cfg.build_stream()?;
    let cc = ctx.chain(cfg);
    let run = run_chain(&ctx.model, &stream, &cc, &StepMode::Plain)?;
    let d = ctx.model.d;
    let n = run.horizon();
    let mut avg = vec![RunningSum::new(); d];
    for t in 1..=n {
        for (acc, &x) in avg.iter_mut().zip(run.theta(t)) {
            acc.add(x);
        }
    }
    let time_avg: Vec<f64> = avg.iter().map(|a| a.value() / n as f64).collect();
    let diff: Vec<f64> =
        time_avg.iter().zip(&theta_dagger.coords).map(|(a, b)| a - b).collect();
    let distance = norm(&diff);
    let gate = distance_base + lambda.sqrt();
    report.check(
        "logistic_average_near_minimizer",
        distance <= gate,
        distance,
        gate,
        format!(
            "|time average - minimiser| = {distance:.4} vs {distance_base} + sqrt(lambda) = {gate:.4} \
             (n = {n})"
        ),
    );

    report.estimate("theta_dagger", &theta_dagger.coords);
    report.estimate("time_average", &time_avg);
    report.estimate("distance", distance);
    report.estimate("n_used", n);

    if let Some(GridCheckBlock { lo, hi, cells, iters }) = grid_check {
        if d != 1 {
            return Err(Error::Unsupported("the grid cross-check is one-dimensional".into()));
        }
        let grid = GridSpec { lo: *lo, hi: *hi, n_cells: *cells };
        let law = grid_stationary_law(&ctx.model, &params, lambda, &grid, *iters)?;
        let (gibbs_mean, gibbs_var) = law.theta_moments();
        // The time average estimates the same stationary mean the grid
        // computes; gate at sampling noise plus one grid cell of bias.
        let series = run.coordinate_series(0);
        let lrv = long_run_variance(
            &series[1..],
            LrvMethod::BatchMeans,
            default_batch_size(n),
        )?;
        let tol = 4.0 * (lrv / n as f64).sqrt() + grid.cell_width();
        let dev = (time_avg[0] - gibbs_mean).abs();
        report.check(
            "logistic_grid_agreement",
            dev <= tol,
            dev,
            tol,
            format!("|time average {:.5} - grid mean {gibbs_mean:.5}| = {dev:.2e} vs {tol:.2e}", time_avg[0]),
        );
        report.estimate("gibbs_mean", gibbs_mean);
        report.estimate("gibbs_var", gibbs_var);
        report.estimate("gibbs_shift", gibbs_mean - theta_dagger.coords[0]);
    }
    attach_constants(report, &ctx.model, lambda);

    if let Some(path) = ctx.csv_path("logistic_trace.csv") {
        let stride = (n / 2000).max(1);
        let rows: Vec<String> = (0..=n)
            .step_by(stride)
            .map(|t| {
                let coords: Vec<String> =
                    run.theta(t).iter().map(|x| format!("{x:.17e}")).collect();
                format!("{t},{}", coords.join(","))
            })
            .collect();
        let header = std::iter::once("t".to_string())
            .chain((0..d).map(|j| format!("theta{j}")))
            .collect::<Vec<_>>()
            .join(",");
        write_csv_file(&path, &header, &rows)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Structural audits (validate)
// ---------------------------------------------------------------------------

fn run_validate(cfg: &ExperimentConfig, ctx: &Ctx, report: &mut ExperimentReport) -> Result<()> {
    let model = &ctx.model;
    let lambda_max = model.delta / (model.k_growth * model.k_growth);
    match ctx.chain(cfg).validate(model) {
        Ok(out_of_theory) => {
            let detail = if out_of_theory {
                format!(
                    "lambda = {} exceeds delta/K^2 = {lambda_max}; explicitly overridden, no \
                     certificates apply",
                    cfg.chain.lambda
                )
            } else {
                format!("lambda = {} within the certified range (0, {lambda_max}]", cfg.chain.lambda)
            };
            report.check("chain_config", true, cfg.chain.lambda, lambda_max, detail);
        }
        Err(e) => {
            report.check("chain_config", false, cfg.chain.lambda, lambda_max, e.to_string());
        }
    }

    let stream_bound = cfg.stream_bound()?;
    report.check(
        "data_bound_dominates_stream",
        stream_bound <= model.data_bound + 1e-12,
        stream_bound,
        model.data_bound,
        format!(
            "stream norm bound {stream_bound} vs model data bound {} (certificates assume the \
             latter dominates)",
            model.data_bound
        ),
    );

    let radius = 2.0 * ((model.b / model.delta).sqrt() + 1.0);
    let mut s = cfg.build_stream()?.reseeded(derive_key(ctx.seed, Domain::Aux, 1))?;
    record_validation(report, &check_dissipativity(model, &mut s, 2000, radius)?);
    let mut s = cfg.build_stream()?.reseeded(derive_key(ctx.seed, Domain::Aux, 2))?;
    record_validation(report, &check_linear_growth(model, &mut s, 2000, radius)?);
    if model.has_potential() {
        let mut s = cfg.build_stream()?.reseeded(derive_key(ctx.seed, Domain::Aux, 3))?;
        record_validation(
            report,
            &check_gradient_consistency(model, &mut s, radius.min(2.0), 7, 200_000, 1e-4, 0.01)?,
        );
    }
    let mut s = cfg.build_stream()?.reseeded(derive_key(ctx.seed, Domain::Aux, 4))?;
    let probe = stationarity_probe(&mut s, 4096, 8192)?;
    report.check(
        "stream_stationarity",
        probe.passed,
        probe.worst_mean_z.max(probe.worst_second_moment_z),
        4.0,
        format!(
            "windows of {} samples {} apart: worst mean z = {:.2}, worst second-moment z = {:.2}",
            probe.window, probe.gap, probe.worst_mean_z, probe.worst_second_moment_z
        ),
    );

    report.estimate("delta", model.delta);
    report.estimate("b", model.b);
    report.estimate("k_growth", model.k_growth);
    report.estimate("data_bound", model.data_bound);
    report.estimate("lambda_max", lambda_max);
    attach_constants(report, model, cfg.chain.lambda);
    Ok(())
}

// ---------------------------------------------------------------------------
// Certificate bundle (constants)
// ---------------------------------------------------------------------------

fn run_constants(cfg: &ExperimentConfig, ctx: &Ctx, report: &mut ExperimentReport) -> Result<()> {
    let lambda = cfg.chain.lambda;
    let tc = coupling_rate(&ctx.model, lambda)?;
    report.estimate("kappa", tc.kappa);
    report.estimate("n_min", tc.n_min);
    report.estimate("gamma", tc.gamma);
    report.estimate("ln_C", tc.ln_c);
    report.estimate("r_small_set", tc.r_small_set);
    report.estimate("ln_alpha_tilde", tc.ln_alpha_tilde);
    report.estimate("regeneration_schedule_slope", tc.c_m);
    report.check(
        "certificate_construction",
        true,
        lambda,
        ctx.model.delta / (ctx.model.k_growth * ctx.model.k_growth),
        format!("drift + minorization + coupling rate assembled at lambda = {lambda}"),
    );
    report.constants = Some(tc);

    let sweep: Vec<f64> = match &cfg.experiment {
        ExperimentBlock::Constants { lambda_sweep } => {
            let mut all = vec![lambda];
            all.extend_from_slice(lambda_sweep);
            all
        }
        _ => vec![lambda],
    };
    if let Some(path) = ctx.csv_path("constants_sweep.csv") {
        let mut rows = Vec::new();
        for &l in &sweep {
            match coupling_rate(&ctx.model, l) {
                Ok(t) => rows.push(format!(
                    "{l},{},{},{},{},{},{},{},{},{}",
                    t.rho, t.a, t.gamma, t.ln_c, t.r_small_set, t.ln_alpha_tilde, t.kappa, t.n_min,
                    t.c_m
                )),
                Err(e) => {
                    eprintln!("constants sweep: skipping lambda = {l}: {e}");
                }
            }
        }
        write_csv_file(
            &path,
            "lambda,rho,a,gamma,ln_C,R,ln_alpha_tilde,kappa,N,c_m",
            &rows,
        )?;
        report.estimate("sweep_rows", rows.len());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(json: &str) -> ExperimentConfig {
        ExperimentConfig::parse(json.as_bytes()).expect("test config parses")
    }

    fn tmp_out(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("lmx_{tag}_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn lln_cfg(dir: &Path) -> ExperimentConfig {
        parse(&format!(
            r#"{{
            "model": {{"kind": "linear", "d": 1, "data_bound": 1.0}},
            "stream": {{"kind": "iid_uniform", "m": 1, "bound": 1.0}},
            "chain": {{"lambda": 0.5, "theta0": [0.0], "horizon": 30000, "seed": 41}},
            "experiment": {{"name": "lln"}},
            "output": {{"dir": "{}"}}
        }}"#,
            dir.display()
        ))
    }

    #[test]
    fn lln_pipeline_matches_closed_forms_at_reduced_scale() {
        let dir = tmp_out("lln");
        let cfg = lln_cfg(&dir);
        let report = execute(&cfg, b"{}", &Overrides::default()).unwrap();
        assert!(report.pass, "checks: {:#?}", report.checks);
        assert_eq!(report.experiment, "lln");
        assert!(dir.join("lln_running_average.csv").exists());
        let second = report.estimates["second_moment"].as_f64().unwrap();
        assert!(
            (second - 13.0 / 9.0).abs() / (13.0 / 9.0) < 0.02,
            "second moment {second} vs 13/9"
        );
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn reports_are_byte_identical_across_thread_counts() {
        let dir = tmp_out("det");
        let cfg = lln_cfg(&dir);
        let one = execute(&cfg, b"{}", &Overrides { threads: Some(1), ..Default::default() })
            .unwrap();
        let four = execute(&cfg, b"{}", &Overrides { threads: Some(4), ..Default::default() })
            .unwrap();
        assert_eq!(
            one.canonical_bytes(),
            four.canonical_bytes(),
            "thread count must never change results"
        );
        assert_ne!(
            one.meta.as_ref().unwrap().threads,
            four.meta.as_ref().unwrap().threads,
            "the volatile block still records the actual worker count"
        );
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn seed_override_changes_estimates_but_not_structure() {
        let dir = tmp_out("seed");
        let cfg = lln_cfg(&dir);
        let a = execute(&cfg, b"{}", &Overrides::default()).unwrap();
        let b =
            execute(&cfg, b"{}", &Overrides { seed: Some(999), ..Default::default() }).unwrap();
        assert_eq!(a.master_seed, 41);
        assert_eq!(b.master_seed, 999);
        assert_ne!(
            a.estimates["mean"].as_f64(),
            b.estimates["mean"].as_f64(),
            "different seeds must give different sample paths"
        );
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn tv_pipeline_contracts_toward_the_grid_oracle() {
        let dir = tmp_out("tv");
        let cfg = parse(&format!(
            r#"{{
            "model": {{"kind": "linear", "d": 1, "data_bound": 1.0}},
            "stream": {{"kind": "finite_markov",
                        "states": [[1.0], [-1.0]],
                        "p": [[0.9, 0.1], [0.1, 0.9]]}},
            "chain": {{"lambda": 0.1, "theta0": [5.0], "horizon": 40,
                       "replicas": 4000, "seed": 7}},
            "experiment": {{"name": "tv", "horizons": [5, 10, 20, 30, 40],
                            "fit_horizons": [5, 10, 20, 30], "bins": 80,
                            "tv_gate": 0.12, "fit_r2_gate": 0.85}},
            "output": {{"dir": "{}"}}
        }}"#,
            dir.display()
        ));
        let report = execute(&cfg, b"{}", &Overrides::default()).unwrap();
        assert!(report.pass, "checks: {:#?}", report.checks);
        let tv = report.estimates["tv"].as_array().unwrap();
        let first = tv.first().unwrap().as_f64().unwrap();
        let last = tv.last().unwrap().as_f64().unwrap();
        assert!(first > 2.0 * last, "tv must fall: first {first}, last {last}");
        assert!(dir.join("tv_curve.csv").exists());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn coupling_pipeline_reports_certified_decay() {
        let dir = tmp_out("coupling");
        let cfg = parse(&format!(
            r#"{{
            "model": {{"kind": "linear", "d": 1, "data_bound": 1.0}},
            "stream": {{"kind": "iid_uniform", "m": 1, "bound": 1.0}},
            "chain": {{"lambda": 0.25, "theta0": [1.0], "horizon": 1,
                       "replicas": 400, "seed": 13}},
            "experiment": {{"name": "coupling", "radius": 0.5,
                            "horizons": [20, 60, 120, 240, 480],
                            "partner": {{"law": "point", "theta": [-1.0]}},
                            "fit_r2_gate": 0.8}},
            "output": {{"dir": "{}"}}
        }}"#,
            dir.display()
        ));
        let report = execute(&cfg, b"{}", &Overrides::default()).unwrap();
        assert!(report.pass, "checks: {:#?}", report.checks);
        assert!(report.constants.is_some(), "coupling must attach its certificate bundle");
        let p = report.estimates["probability"].as_array().unwrap();
        let first = p.first().unwrap().as_f64().unwrap();
        let last = p.last().unwrap().as_f64().unwrap();
        assert!(first > last, "no-coupling probability must fall: {first} -> {last}");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn drift_pipeline_certifies_the_desk_model() {
        let dir = tmp_out("drift");
        let cfg = parse(&format!(
            r#"{{
            "model": {{"kind": "linear", "d": 1, "data_bound": 1.0}},
            "stream": {{"kind": "iid_uniform", "m": 1, "bound": 1.0}},
            "chain": {{"lambda": 0.25, "theta0": [0.0], "horizon": 1, "seed": 19}},
            "experiment": {{"name": "drift", "grid_points": 7, "n_mc": 2000}},
            "output": {{"dir": "{}", "write_csv": false}}
        }}"#,
            dir.display()
        ));
        let report = execute(&cfg, b"{}", &Overrides::default()).unwrap();
        assert!(report.pass, "checks: {:#?}", report.checks);
        assert!(report.bounds.contains_key("gamma"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn mixing_pipeline_stays_under_the_transfer_bound() {
        let dir = tmp_out("mixing");
        // Lags must reach 2N for the certificate comparison; N is small at
        // this step size, and 2N = 26 for the desk constants.
        let cfg = parse(&format!(
            r#"{{
            "model": {{"kind": "linear", "d": 1, "data_bound": 1.0}},
            "stream": {{"kind": "finite_markov",
                        "states": [[1.0], [-1.0]],
                        "p": [[0.9, 0.1], [0.1, 0.9]]}},
            "chain": {{"lambda": 0.25, "theta0": [0.0], "horizon": 60000, "seed": 23}},
            "experiment": {{"name": "mixing", "lags": [26, 40, 60], "burn_in": 500}},
            "output": {{"dir": "{}"}}
        }}"#,
            dir.display()
        ));
        let report = execute(&cfg, b"{}", &Overrides::default()).unwrap();
        assert!(report.pass, "checks: {:#?}", report.checks);
        let exact = report.estimates["alpha_env_exact"].as_array().unwrap();
        let a26 = exact[0].as_f64().unwrap();
        assert!(
            (a26 - 0.8f64.powi(26) / 4.0).abs() < 1e-12,
            "two-state symmetric chain has alpha(n) = 0.8^n/4, got {a26}"
        );
        assert!(dir.join("mixing_curve.csv").exists());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn clt_pipeline_recovers_the_long_run_variance_at_reduced_scale() {
        let dir = tmp_out("clt");
        let cfg = parse(&format!(
            r#"{{
            "model": {{"kind": "linear", "d": 1, "data_bound": 1.0}},
            "stream": {{"kind": "iid_uniform", "m": 1, "bound": 1.0}},
            "chain": {{"lambda": 0.5, "theta0": [0.0], "horizon": 4000,
                       "replicas": 150, "seed": 29}},
            "experiment": {{"name": "clt", "master_seeds": 4, "lrv_rel_gate": 0.2,
                            "ks_pass_fraction": 0.5, "half_time_tol": 0.15}},
            "output": {{"dir": "{}"}}
        }}"#,
            dir.display()
        ));
        let report = execute(&cfg, b"{}", &Overrides::default()).unwrap();
        assert!(report.pass, "checks: {:#?}", report.checks);
        let pooled = report.estimates["pooled_sigma_sq"].as_f64().unwrap();
        assert!(
            (pooled - 13.0 / 3.0).abs() / (13.0 / 3.0) < 0.2,
            "pooled long-run variance {pooled} vs 13/3"
        );
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn logistic_pipeline_finds_the_population_minimizer() {
        let dir = tmp_out("logistic");
        let cfg = parse(&format!(
            r#"{{
            "model": {{"kind": "logistic", "d": 1, "c": 0.1, "z_bound": 1.0}},
            "stream": {{"kind": "finite_markov",
                        "states": [[1.0, 1.0], [0.0, 1.0]],
                        "p": [[0.7, 0.3], [0.45, 0.55]]}},
            "chain": {{"lambda": 0.01, "theta0": [0.0], "horizon": 300000, "seed": 31}},
            "experiment": {{"name": "logistic", "gradient_n_mc": 200000,
                            "gradient_rel_gate": 0.005}},
            "output": {{"dir": "{}"}}
        }}"#,
            dir.display()
        ));
        let report = execute(&cfg, b"{}", &Overrides::default()).unwrap();
        assert!(report.pass, "checks: {:#?}", report.checks);
        let dagger = report.estimates["theta_dagger"].as_array().unwrap()[0].as_f64().unwrap();
        // sigma(t) + 0.2 t = 0.6 at the minimiser for this stationary law.
        let residual = 1.0 / (1.0 + (-dagger).exp()) + 0.2 * dagger - 0.6;
        assert!(residual.abs() < 1e-9, "minimiser equation residual {residual:.2e}");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn validate_and_constants_run_on_any_config() {
        let dir = tmp_out("val");
        let mut cfg = lln_cfg(&dir);
        cfg.chain.lambda = 0.25; // strictly inside the certified range
        let report = validate_config(&cfg, b"{}", &Overrides::default()).unwrap();
        assert!(report.pass, "checks: {:#?}", report.checks);
        assert_eq!(report.experiment, "validate");
        assert!(report.constants.is_some());

        let report = constants_report(&cfg, b"{}", &Overrides::default()).unwrap();
        assert!(report.pass);
        assert!(dir.join("constants_sweep.csv").exists());
        let kappa = report.estimates["kappa"].as_f64().unwrap();
        assert!(kappa > 0.0, "rate must be positive, got {kappa}");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn validate_fails_loudly_beyond_the_certified_step_range() {
        let dir = tmp_out("val_oot");
        let mut cfg = lln_cfg(&dir);
        cfg.chain.lambda = 1.7; // delta/K^2 = 1 for the linear model
        cfg.output.write_csv = false;
        let report = validate_config(&cfg, b"{}", &Overrides::default()).unwrap();
        assert!(!report.pass, "step size beyond the range must fail validation");
        let line = report.checks.iter().find(|c| c.name == "chain_config").unwrap();
        assert!(!line.passed);

        cfg.chain.allow_out_of_theory = true;
        let report = validate_config(&cfg, b"{}", &Overrides::default()).unwrap();
        let line = report.checks.iter().find(|c| c.name == "chain_config").unwrap();
        assert!(line.passed, "explicit override must be honoured: {}", line.detail);
        assert!(line.detail.contains("overridden"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
