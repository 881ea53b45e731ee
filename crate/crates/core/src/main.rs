use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use tandem::confidence::ConfidenceModel;
use tandem::demo_io::{load_demonstrations, save_demonstrations, synthesize_task, ChannelSchema, DemonstrationSet};
use tandem::experiment::{build_models, run_experiment, write_outputs, ExperimentConfig, ModelBundle};
use tandem::runtime::{simulate_execution, OperatorModel};
use tandem::scheduler::optimize_schedule;
use tandem::warp::WarpBounds;
use tandem::{Error, Result};

#[derive(Parser)]
#[command(name = "tandem", version, about = "Two-agent scheduling from demonstrations and corrections")]
struct Cli {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic demonstration set and its ground-truth need map.
    Synth,
    /// Build behavior and confidence models and dump them as JSON.
    Model {
        /// Demonstration CSV to model instead of a synthetic task.
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Optimize one schedule and dump it with its Gantt chart.
    Schedule {
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Optimize a schedule and simulate one paired execution.
    Simulate,
    /// Run the full iterative experiment.
    Experiment,
}

#[derive(Serialize)]
struct ModelDump<'a> {
    bounds: &'a WarpBounds,
    behavior: &'a tandem::behavior::BehaviorModel,
    confidence: &'a ConfidenceModel,
    conf: Vec<bool>,
    high_conf_fraction: f64,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn demos(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<DemonstrationSet> {
    match path {
        Some(p) => load_demonstrations(p, &ChannelSchema::default(), cfg.experiment.dt_s),
        None => Ok(synthesize_task(&cfg.synth_spec(), cfg.experiment.seed)?.set),
    }
}

fn dump_model(models: &ModelBundle) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelDump {
        bounds: &models.bounds,
        behavior: &models.behavior,
        confidence: &models.confidence,
        conf: models.confidence.conf_profile(),
        high_conf_fraction: models.confidence.high_conf_fraction(),
    })?)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
    }
    cfg.validate()?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let out = cli.out.as_path();
    fs::create_dir_all(out).map_err(|e| Error::Config(format!("cannot create {}: {e}", out.display())))?;

    match cli.command {
        Command::Synth => {
            let task = synthesize_task(&cfg.synth_spec(), cfg.experiment.seed)?;
            save_demonstrations(&task.set, out.join("demos.csv"))?;
            write(&out.join("need.json"), &serde_json::to_string_pretty(&task.need)?)?;
            println!("wrote {} demonstrations to {}", task.set.len(), out.display());
        }
        Command::Model { demos: path } => {
            let set = demos(&cfg, path.as_deref())?;
            let models = build_models(&set, &cfg)?;
            write(&out.join("model.json"), &dump_model(&models)?)?;
            println!(
                "model over {} steps, high-confidence fraction {:.4}",
                models.behavior.len(),
                models.confidence.high_conf_fraction()
            );
        }
        Command::Schedule { demos: path } => {
            let set = demos(&cfg, path.as_deref())?;
            let models = build_models(&set, &cfg)?;
            let problem = models.problem()?;
            let best = optimize_schedule(&problem, &cfg.optimizer, None)?;
            let report = problem.report(&best.schedule, best.cost);
            write(&out.join("schedule.json"), &serde_json::to_string_pretty(&report)?)?;
            write(&out.join("gantt.csv"), &problem.gantt_csv(&best.schedule))?;
            println!(
                "T_total {:.4} s, tau {:.4} s, {} feasible samples",
                report.total_time, report.tau, best.feasible_samples
            );
        }
        Command::Simulate => {
            let task = synthesize_task(&cfg.synth_spec(), cfg.experiment.seed)?;
            let models = build_models(&task.set, &cfg)?;
            let problem = models.problem()?;
            let best = optimize_schedule(&problem, &cfg.optimizer, None)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.experiment.seed);
            rng.set_stream(1);
            let mut operator = OperatorModel::new(
                task.need.clone(),
                cfg.experiment.error_rate,
                cfg.experiment.correction_magnitude,
                rng,
            )?;
            let sim = simulate_execution(&problem, &best.schedule, &models.behavior, &mut operator)?;
            write(&out.join("trace.csv"), &sim.trace_csv(best.schedule.warps[0].domain()))?;
            write(&out.join("summary.json"), &serde_json::to_string_pretty(&sim.summary())?)?;
            println!(
                "scheduled {:.4} s, realized {:.4} s, {} overlap violations",
                sim.scheduled_total_time, sim.realized_total_time, sim.overlap_violations
            );
        }
        Command::Experiment => {
            let result = run_experiment(&cfg)?;
            write_outputs(&result, out)?;
            let s = &result.summary;
            if let (Some(first), Some(last)) = (s.per_iteration.first(), s.per_iteration.last()) {
                println!(
                    "mean T_total {:.4} s -> {:.4} s, high-confidence {:.4} -> {:?} (ground truth {:.4})",
                    first.scheduled_total_time_mean,
                    last.scheduled_total_time_mean,
                    s.initial_high_conf_fraction,
                    s.final_high_conf_fraction,
                    s.ground_truth_high_conf_fraction
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
