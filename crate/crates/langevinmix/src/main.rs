//! Batch driver for the constant-step Langevin experiment pipelines.
//!
//! Every subcommand takes a JSON config (`-c`) plus optional `--seed`,
//! `--threads`, and `--out` overrides, prints one line per check, writes the
//! run report as JSON into the output directory, and exits 0 when every
//! check passed, 1 when a check failed or the run aborted, and 2 on usage or
//! config-schema errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use langevinmix::config::ExperimentConfig;
use langevinmix::experiments::{constants_report, execute, validate_config, Overrides};
use langevinmix::report::ExperimentReport;

const PASS: u8 = 0;
const FAIL: u8 = 1;
const USAGE: u8 = 2;

/// Config file plus reproducibility overrides; everything else lives in the
/// config so a report's digest pins the whole experiment definition.
#[derive(Args, Debug)]
struct CommonArgs {
    /// Experiment configuration file (JSON).
    #[arg(short = 'c', long, value_name = "FILE")]
    config: PathBuf,
    /// Replace the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Cap the worker pool (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Replace the output directory from the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Parser, Debug)]
#[command(
    name = "langevinmix",
    version,
    about = "Certified experiments for constant-step Langevin dynamics on dependent data",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run the model, stream, and step-size validators against the config.
    Validate(CommonArgs),
    /// Print the certificate bundle for the configured step size.
    Constants(CommonArgs),
    /// Run whichever experiment the config names.
    Run(CommonArgs),
    /// Ergodic averages against closed-form stationary moments.
    Lln(CommonArgs),
    /// Replica law of the state against the grid-oracle marginal.
    Tv(CommonArgs),
    /// Regeneration times of paired chains under the split kernel.
    Coupling(CommonArgs),
    /// Dependence decay of the chain against the transfer certificate.
    Mixing(CommonArgs),
    /// Rescaled partial sums: long-run variance and endpoint normality.
    Clt(CommonArgs),
    /// Monte Carlo audit of the drift certificate on a radial grid.
    Drift(CommonArgs),
    /// Streaming logistic regression against its population minimiser.
    Logistic(CommonArgs),
}

impl Cmd {
    /// The experiment the config must name, if the subcommand fixes one.
    fn expected(&self) -> Option<&'static str> {
        match self {
            Cmd::Validate(_) | Cmd::Constants(_) | Cmd::Run(_) => None,
            Cmd::Lln(_) => Some("lln"),
            Cmd::Tv(_) => Some("tv"),
            Cmd::Coupling(_) => Some("coupling"),
            Cmd::Mixing(_) => Some("mixing"),
            Cmd::Clt(_) => Some("clt"),
            Cmd::Drift(_) => Some("drift"),
            Cmd::Logistic(_) => Some("logistic"),
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Cmd::Validate(a)
            | Cmd::Constants(a)
            | Cmd::Run(a)
            | Cmd::Lln(a)
            | Cmd::Tv(a)
            | Cmd::Coupling(a)
            | Cmd::Mixing(a)
            | Cmd::Clt(a)
            | Cmd::Drift(a)
            | Cmd::Logistic(a) => a,
        }
    }
}

fn main() -> ExitCode {
    // clap itself exits with 2 on unknown flags or missing arguments.
    ExitCode::from(real_main(Cli::parse()))
}

fn real_main(cli: Cli) -> u8 {
    let args = cli.cmd.args();

    let (cfg, raw) = match ExperimentConfig::load(&args.config) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return USAGE;
        }
    };
    // Instantiation failures (bad parameter domains, block mismatches) are
    // still schema territory: nothing has run yet.
    if let Err(e) = cfg.build_model().and_then(|_| cfg.build_stream()) {
        eprintln!("error: {}: {e}", args.config.display());
        return USAGE;
    }
    if let Some(expected) = cli.cmd.expected() {
        let actual = cfg.experiment.name();
        if actual != expected {
            eprintln!(
                "error: the `{expected}` subcommand needs an experiment block named \
                 \"{expected}\", but {} defines \"{actual}\" (use `run` to dispatch by config)",
                args.config.display()
            );
            return USAGE;
        }
    }

    let ov =
        Overrides { seed: args.seed, threads: args.threads, out: args.out.clone() };
    let result = match cli.cmd {
        Cmd::Validate(_) => validate_config(&cfg, &raw, &ov),
        Cmd::Constants(_) => constants_report(&cfg, &raw, &ov),
        _ => execute(&cfg, &raw, &ov),
    };
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return FAIL;
        }
    };

    if matches!(cli.cmd, Cmd::Constants(_)) {
        match serde_json::to_string_pretty(&report.constants) {
            Ok(json) => println!("{json}"),
            Err(e) => {
                eprintln!("error: serializing constants: {e}");
                return FAIL;
            }
        }
    }
    for line in &report.checks {
        println!("{}", line.render());
    }
    let passed = report.checks.iter().filter(|c| c.passed).count();
    println!(
        "{}: {passed}/{} checks passed",
        if report.pass { "PASS" } else { "FAIL" },
        report.checks.len()
    );

    if let Err(e) = write_report(&report, &cfg, args) {
        eprintln!("error: writing report: {e}");
        return FAIL;
    }
    if report.pass {
        PASS
    } else {
        FAIL
    }
}

/// The report lands in the output directory whatever the verdict was.
fn write_report(
    report: &ExperimentReport,
    cfg: &ExperimentConfig,
    args: &CommonArgs,
) -> langevinmix::Result<()> {
    let dir = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}_report.json", report.experiment));
    report.write_json(&path)?;
    println!("report: {} (digest {})", path.display(), report.digest());
    Ok(())
}
