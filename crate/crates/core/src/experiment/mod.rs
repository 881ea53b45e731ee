//! Closed loop: model, schedule, simulate, fold executions back, repeat.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::config::{ExperimentConfig, ExperimentParams, GRADIENT_CHANNEL};
use crate::behavior::BehaviorModel;
use crate::confidence::ConfidenceModel;
use crate::demo_io::{synthesize_task, DemonstrationSet, GroundTruthNeed, SynthOutput};
use crate::error::{Error, Result};
use crate::runtime::{simulate_execution, OperatorModel, Simulation};
use crate::scheduler::{fmt_sig, optimize_schedule, Optimized, Schedule, ScheduleReport, SchedulingProblem};
use crate::warp::{gradient_bounds, optimize_warp, TimeWarp, WarpBounds};

/// Models built from a demonstration set.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub warps: Vec<TimeWarp>,
    pub bounds: WarpBounds,
    pub behavior: BehaviorModel,
    pub confidence: ConfidenceModel,
}

impl ModelBundle {
    pub fn problem(&self) -> Result<SchedulingProblem> {
        SchedulingProblem::new(
            self.bounds.clone(),
            self.confidence.conf_profile(),
            self.behavior.sample_rate,
        )
    }
}

/// Aligns every demonstration to the set's reference.
pub fn align_set(set: &DemonstrationSet, cfg: &ExperimentConfig) -> Result<Vec<TimeWarp>> {
    let weights = cfg.alignment_weights(set.schema())?;
    set.demos()
        .par_iter()
        .map(|d| optimize_warp(set.reference(), d, &weights, &cfg.warp))
        .collect()
}

/// Warps, bounds, behavior and confidence prior from demonstrations.
pub fn build_models(set: &DemonstrationSet, cfg: &ExperimentConfig) -> Result<ModelBundle> {
    let warps = align_set(set, cfg)?;
    let bounds = gradient_bounds(&warps)?;
    let weights = cfg.weights(set.schema())?;
    let behavior = BehaviorModel::build(set, &warps, &bounds, &weights, &cfg.behavior)?;
    let confidence = ConfidenceModel::new(&behavior.variance, set.sample_rate(), &cfg.confidence)?;
    Ok(ModelBundle {
        warps,
        bounds,
        behavior,
        confidence,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub trial: usize,
    pub iteration: usize,
    pub scheduled_total_time: f64,
    pub realized_total_time: f64,
    /// Fraction of high-confidence reference steps the schedule was built on.
    pub high_conf_fraction: f64,
    pub corrections: [usize; 2],
    pub overlap_violations: usize,
}

/// Evolving state of one trial.
#[derive(Debug, Clone)]
pub struct TrialState {
    pub trial: usize,
    pub iteration: usize,
    /// All demonstrations including executions.
    pub set: DemonstrationSet,
    pub warps: Vec<TimeWarp>,
    pub models: ModelBundle,
    pub schedule: Option<Schedule>,
    operator: OperatorModel,
}

/// Output of one iteration besides its record.
#[derive(Debug, Clone)]
pub struct IterationArtifacts {
    pub optimized: Optimized,
    pub report: ScheduleReport,
    pub gantt: String,
    pub simulation: Simulation,
}

impl TrialState {
    pub fn new(task: &SynthOutput, models: ModelBundle, cfg: &ExperimentConfig, trial: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.experiment.seed);
        rng.set_stream(trial as u64 + 1);
        let operator = OperatorModel::new(
            task.need.clone(),
            cfg.experiment.error_rate,
            cfg.experiment.correction_magnitude,
            rng,
        )?;
        Ok(Self {
            trial,
            iteration: 0,
            set: task.set.clone(),
            warps: models.warps.clone(),
            models,
            schedule: None,
            operator,
        })
    }
}

fn optimizer_seed(base: u64, trial: usize, iteration: usize) -> u64 {
    base ^ ((trial as u64) << 40) ^ ((iteration as u64) << 8) ^ 0x9e37_79b9_7f4a_7c15
}

/// One pass of the loop: optimize, execute both agents, append the
/// executions, re-estimate the mean and the confidence.
pub fn run_iteration(state: &mut TrialState, cfg: &ExperimentConfig) -> Result<(IterationRecord, IterationArtifacts)> {
    let ctx = |source: Error, trial, iteration| Error::Iteration {
        trial,
        iteration,
        source: Box::new(source),
    };
    let (trial, iteration) = (state.trial, state.iteration);
    let mut step = || -> Result<(IterationRecord, IterationArtifacts)> {
        let problem = state.models.problem()?;
        let high_conf_fraction = state.models.confidence.high_conf_fraction();
        let mut opt = cfg.optimizer.clone();
        opt.rng_seed = optimizer_seed(opt.rng_seed ^ cfg.experiment.seed, trial, iteration);
        let optimized = optimize_schedule(&problem, &opt, state.schedule.as_ref())?;
        let schedule = optimized.schedule.clone();
        let simulation = simulate_execution(&problem, &schedule, &state.models.behavior, &mut state.operator)?;

        let executed: Vec<_> = simulation.traces.iter().map(|t| t.executed.clone()).collect();
        let weights = cfg.alignment_weights(state.set.schema())?;
        let new_warps = executed
            .iter()
            .map(|d| optimize_warp(state.set.reference(), d, &weights, &cfg.warp))
            .collect::<Result<Vec<_>>>()?;
        state.set.extend(executed)?;
        state.warps.extend(new_warps);
        state.models.behavior = state.models.behavior.with_updated_mean(&state.set, &state.warps)?;
        for t in &simulation.traces {
            state.models.confidence.record_execution(&t.observations)?;
        }

        let record = IterationRecord {
            trial,
            iteration,
            scheduled_total_time: schedule.total_time(),
            realized_total_time: simulation.realized_total_time,
            high_conf_fraction,
            corrections: [simulation.traces[0].corrections, simulation.traces[1].corrections],
            overlap_violations: simulation.overlap_violations,
        };
        let report = problem.report(&schedule, optimized.cost);
        let gantt = problem.gantt_csv(&schedule);
        state.schedule = Some(schedule);
        Ok((
            record,
            IterationArtifacts {
                optimized,
                report,
                gantt,
                simulation,
            },
        ))
    };
    let out = step().map_err(|e| ctx(e, trial, iteration))?;
    state.iteration += 1;
    Ok(out)
}

#[derive(Debug)]
pub struct TrialResult {
    pub trial: usize,
    pub records: Vec<IterationRecord>,
    pub reports: Vec<ScheduleReport>,
    pub gantts: Vec<String>,
    pub final_high_conf_fraction: f64,
    pub error: Option<Error>,
}

pub fn run_trial(task: &SynthOutput, models: &ModelBundle, cfg: &ExperimentConfig, trial: usize) -> TrialResult {
    let mut result = TrialResult {
        trial,
        records: Vec::new(),
        reports: Vec::new(),
        gantts: Vec::new(),
        final_high_conf_fraction: models.confidence.high_conf_fraction(),
        error: None,
    };
    let mut state = match TrialState::new(task, models.clone(), cfg, trial) {
        Ok(s) => s,
        Err(e) => {
            result.error = Some(e);
            return result;
        }
    };
    for _ in 0..cfg.experiment.iterations {
        match run_iteration(&mut state, cfg) {
            Ok((record, art)) => {
                result.records.push(record);
                result.reports.push(art.report);
                result.gantts.push(art.gantt);
            }
            Err(e) => {
                result.error = Some(e);
                break;
            }
        }
    }
    result.final_high_conf_fraction = state.models.confidence.high_conf_fraction();
    result
}

/// Aggregate over trials at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub scheduled_total_time_mean: f64,
    pub scheduled_total_time_std: f64,
    pub realized_total_time_mean: f64,
    pub realized_total_time_std: f64,
    pub high_conf_fraction_mean: f64,
    pub corrections_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub trials: usize,
    pub iterations: usize,
    /// Fraction of reference steps without a ground-truth need.
    pub ground_truth_high_conf_fraction: f64,
    pub initial_high_conf_fraction: f64,
    pub final_high_conf_fraction: Vec<f64>,
    pub overlap_violations: usize,
    pub per_iteration: Vec<IterationSummary>,
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub task: SynthOutput,
    pub trials: Vec<TrialResult>,
    pub summary: ExperimentSummary,
}

impl ExperimentResult {
    pub fn records(&self) -> impl Iterator<Item = &IterationRecord> {
        self.trials.iter().flat_map(|t| &t.records)
    }

    pub fn records_csv(&self) -> String {
        records_csv(self.records())
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Rounds to nine significant digits so JSON output is stable.
fn sig(v: f64) -> f64 {
    fmt_sig(v).parse().expect("formatted float parses")
}

fn summarize(task: &SynthOutput, initial: f64, trials: &[TrialResult], cfg: &ExperimentConfig) -> ExperimentSummary {
    let iterations = trials.iter().map(|t| t.records.len()).max().unwrap_or(0);
    let per_iteration = (0..iterations)
        .map(|i| {
            let recs: Vec<&IterationRecord> = trials.iter().filter_map(|t| t.records.get(i)).collect();
            let pick = |f: fn(&IterationRecord) -> f64| recs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (sm, ss) = mean_std(&pick(|r| r.scheduled_total_time));
            let (rm, rs) = mean_std(&pick(|r| r.realized_total_time));
            let (hm, _) = mean_std(&pick(|r| r.high_conf_fraction));
            let (cm, _) = mean_std(&pick(|r| (r.corrections[0] + r.corrections[1]) as f64));
            IterationSummary {
                iteration: i,
                scheduled_total_time_mean: sig(sm),
                scheduled_total_time_std: sig(ss),
                realized_total_time_mean: sig(rm),
                realized_total_time_std: sig(rs),
                high_conf_fraction_mean: sig(hm),
                corrections_mean: sig(cm),
            }
        })
        .collect();
    ExperimentSummary {
        trials: cfg.experiment.trials,
        iterations: cfg.experiment.iterations,
        ground_truth_high_conf_fraction: sig(ground_truth_fraction(&task.need)),
        initial_high_conf_fraction: sig(initial),
        final_high_conf_fraction: trials.iter().map(|t| sig(t.final_high_conf_fraction)).collect(),
        overlap_violations: trials.iter().flat_map(|t| &t.records).map(|r| r.overlap_violations).sum(),
        per_iteration,
    }
}

pub fn ground_truth_fraction(need: &GroundTruthNeed) -> f64 {
    need.no_need_fraction()
}

pub fn records_csv<'a>(records: impl IntoIterator<Item = &'a IterationRecord>) -> String {
    let mut out = String::from(
        "trial,iteration,scheduled_T,realized_T,highconf_frac,corrections_1,corrections_2,overlap_violations\n",
    );
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.trial,
            r.iteration,
            fmt_sig(r.scheduled_total_time),
            fmt_sig(r.realized_total_time),
            fmt_sig(r.high_conf_fraction),
            r.corrections[0],
            r.corrections[1],
            r.overlap_violations
        );
    }
    out
}

/// Runs every trial in parallel from one synthetic task.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let task = synthesize_task(&cfg.synth_spec(), cfg.experiment.seed)?;
    let models = build_models(&task.set, cfg)?;
    let initial = models.confidence.high_conf_fraction();
    let trials: Vec<TrialResult> = (0..cfg.experiment.trials)
        .into_par_iter()
        .map(|t| run_trial(&task, &models, cfg, t))
        .collect();
    let summary = summarize(&task, initial, &trials, cfg);
    Ok(ExperimentResult { task, trials, summary })
}

/// Writes `records.csv`, `summary.json` and per-trial schedules and Gantt
/// charts. Returns the first trial error after everything is written.
pub fn write_outputs(result: &ExperimentResult, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let write = |path: &Path, text: &str| fs::write(path, text).map_err(|e| Error::io(path, e));
    write(&out.join("records.csv"), &result.records_csv())?;
    let summary = serde_json::to_string_pretty(&result.summary)?;
    write(&out.join("summary.json"), &summary)?;
    for t in &result.trials {
        let dir = out.join(format!("trial_{}", t.trial));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, (report, gantt)) in t.reports.iter().zip(&t.gantts).enumerate() {
            write(&dir.join(format!("schedule_{i}.json")), &serde_json::to_string(report)?)?;
            write(&dir.join(format!("gantt_{i}.csv")), gantt)?;
        }
    }
    match result.trials.iter().find_map(|t| t.error.as_ref()) {
        Some(e) => Err(Error::Config(format!("trial failed after writing partial results: {e}"))),
        None => Ok(()),
    }
}
