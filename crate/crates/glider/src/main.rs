//! Command-line entry point: train, eval, sweep, robustness, simulate,
//! gradcheck. Every run writes a provenance file next to its artifacts so
//! the outputs can be bit-reproduced from the directory alone.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use glider::analysis::{self, RobustnessMode};
use glider::config::{self, RunConfig};
use glider::environment;
use glider::racer;

#[derive(Parser)]
#[command(name = "glider", version, about = "Controlled gliding and perching of a falling ellipse")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's parameter-noise level.
    #[arg(long)]
    sigma_xi: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy and write checkpoints, logs, and provenance.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Roll out a trained policy and write traces and statistics.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (defaults to <out>/checkpoint_final.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Act with the policy mean instead of sampling.
        #[arg(long)]
        deterministic: bool,
    },
    /// Train/evaluate a grid of (beta, rho*) points from the [sweep] section.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Probe a trained policy under parameter noise or unseen starts.
    Robustness {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        /// Evaluate unseen initial x positions instead of parameter noise.
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
        start_range: Option<Vec<f64>>,
    },
    /// Play back an open-loop torque schedule (CSV `t,tau`).
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        schedule: PathBuf,
    },
    /// Finite-difference gradient checks; fails if any error exceeds 1e-4.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(sigma_xi) = common.sigma_xi {
        cfg.noise.sigma_xi = sigma_xi;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> anyhow::Result<&Path> {
    cfg.out_dir
        .as_deref()
        .context("no output directory: set out_dir in the config or pass --out")
}

fn checkpoint_path(explicit: &Option<PathBuf>, out: &Path) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| racer::final_checkpoint_path(out))
}

fn cmd_train(common: &Common) -> anyhow::Result<()> {
    let mut cfg = load_config(common)?;
    cfg.trainer.seed = cfg.seed;
    let out = out_dir(&cfg)?;
    config::write_provenance(out, &cfg, "train")?;
    let outcome = racer::train(&cfg.env, &cfg.noise, &cfg.net, &cfg.trainer, Some(out))?;
    println!(
        "trained {} episodes / {} env steps; final checkpoint at {}",
        outcome.episodes.len(),
        outcome.env_steps,
        racer::final_checkpoint_path(out).display()
    );
    Ok(())
}

fn cmd_eval(
    common: &Common,
    checkpoint: &Option<PathBuf>,
    episodes: usize,
    deterministic: bool,
) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let out = out_dir(&cfg)?;
    std::fs::create_dir_all(out)?;
    let net = racer::load_net(checkpoint_path(checkpoint, out))?;
    let traces = racer::evaluate(&net, &cfg.env, &cfg.noise, episodes, deterministic, cfg.seed)?;
    config::write_provenance(out, &cfg, "eval")?;
    for (i, trace) in traces.iter().enumerate() {
        trace.export(out.join(format!("trace_{i:03}.csv")), &cfg.env, cfg.seed)?;
    }
    let stats = racer::eval_stats(&cfg.env, &traces);
    std::fs::write(
        out.join("eval_stats.json"),
        serde_json::to_string_pretty(&stats)?,
    )?;
    let local: Vec<analysis::LocalResult> = traces
        .iter()
        .map(|t| analysis::LocalResult {
            objective: cfg.env.objective,
            time: t.summary.time,
            energy: t.summary.energy,
            theta_t: t.summary.theta_t,
        })
        .collect();
    let table = analysis::compare_to_oc(&local, cfg.env.theta_goal);
    analysis::write_comparison(&table, &out.join("comparison.csv"))?;
    println!(
        "evaluated {} episodes: mean T={:.2} E={:.3} x_T={:.2} landing MSE={:.3}",
        stats.episodes, stats.mean_time, stats.mean_energy, stats.mean_x_t, stats.landing_mse
    );
    Ok(())
}

fn cmd_sweep(common: &Common) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let sweep = cfg
        .sweep
        .as_ref()
        .context("sweep requires a [sweep] section (betas, rho_stars, seeds)")?;
    let out = out_dir(&cfg)?;
    config::write_provenance(out, &cfg, "sweep")?;
    let points = analysis::phase_sweep(
        &sweep.grid(),
        &cfg.env,
        &cfg.net,
        &cfg.trainer,
        &sweep.seeds,
        out,
    )?;
    let failed: usize = points.iter().map(|p| p.failed).sum();
    println!(
        "swept {} points ({} failed runs); table at {}",
        points.len(),
        failed,
        out.join("phase_points.csv").display()
    );
    Ok(())
}

fn cmd_robustness(
    common: &Common,
    checkpoint: &Option<PathBuf>,
    episodes: usize,
    start_range: &Option<Vec<f64>>,
) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let out = out_dir(&cfg)?;
    std::fs::create_dir_all(out)?;
    let net = racer::load_net(checkpoint_path(checkpoint, out))?;
    let mode = match start_range {
        Some(r) => RobustnessMode::Starts { min: r[0], max: r[1] },
        None => RobustnessMode::Noise {
            sigma_xi: cfg.noise.sigma_xi,
        },
    };
    let report = analysis::robustness_eval(&net, &cfg.env, &mode, episodes, cfg.seed)?;
    config::write_provenance(out, &cfg, "robustness")?;
    std::fs::write(
        out.join("robustness.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "{} episodes: median x_T={:.2}, {:.1}% within 5 of target",
        report.episodes,
        report.landing_quantiles[2].1,
        report.frac_within_5 * 100.0
    );
    Ok(())
}

fn read_schedule(path: &Path) -> anyhow::Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut schedule = Vec::new();
    for rec in rdr.deserialize() {
        let (t, tau): (f64, f64) = rec?;
        schedule.push((t, tau));
    }
    Ok(schedule)
}

fn cmd_simulate(common: &Common, schedule: &Path) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let out = out_dir(&cfg)?;
    let sched = read_schedule(schedule)?;
    let trace = environment::simulate_schedule(&cfg.env, &sched)?;
    config::write_provenance(out, &cfg, "simulate")?;
    let path = out.join("trace.csv");
    trace.export(&path, &cfg.env, cfg.seed)?;
    println!(
        "simulated {} steps: T={:.2} x_T={:.3} contact={}; trace at {}",
        trace.rows.len(),
        trace.summary.time,
        trace.summary.x_t,
        trace.summary.contact,
        path.display()
    );
    Ok(())
}

fn cmd_gradcheck(seed: u64, instances: usize, out: &Option<PathBuf>) -> anyhow::Result<()> {
    let report = racer::gradient_check(seed, instances)?;
    println!(
        "max relative errors over {instances} instances: log-pdf {:.2e}, Q heads {:.2e}, policy grad {:.2e}, critic grad {:.2e}",
        report.max_rel_log_pdf, report.max_rel_q, report.max_rel_policy, report.max_rel_critic
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("gradcheck.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
    }
    let worst = report
        .max_rel_log_pdf
        .max(report.max_rel_q)
        .max(report.max_rel_policy)
        .max(report.max_rel_critic);
    if worst > 1e-4 {
        bail!("gradient check failed: max relative error {worst:.3e} > 1e-4");
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    ctrlc::set_handler(racer::set_interrupted).ok();
    match &cli.cmd {
        Cmd::Train { common } => cmd_train(common),
        Cmd::Eval {
            common,
            checkpoint,
            episodes,
            deterministic,
        } => cmd_eval(common, checkpoint, *episodes, *deterministic),
        Cmd::Sweep { common } => cmd_sweep(common),
        Cmd::Robustness {
            common,
            checkpoint,
            episodes,
            start_range,
        } => cmd_robustness(common, checkpoint, *episodes, start_range),
        Cmd::Simulate { common, schedule } => cmd_simulate(common, &schedule.clone()),
        Cmd::Gradcheck {
            seed,
            instances,
            out,
        } => cmd_gradcheck(*seed, *instances, out),
    }
}
