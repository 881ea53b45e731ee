//! Discrete-event simulation of a paired execution.
//!
//! Global time advances by `Δt_s` per tick. Each agent keeps a position on its
//! scheduled global timeline; its reference time is the inverse of its
//! execution warp at that position. Agent 2 starts once agent 1's position
//! reaches `τ`, which shifts the start by agent 1's accumulated deviation.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::strategy::{coordinate, response_step, Speed};
use crate::behavior::{BehaviorModel, OperatorInput};
use crate::demo_io::{Demonstration, GroundTruthNeed};
use crate::error::{Error, Result};
use crate::scheduler::{fmt_sig, Schedule, SchedulingProblem};

/// Realized time may not exceed this multiple of the scheduled `T_total`.
pub const DIVERGENCE_FACTOR: f64 = 3.0;
const FINISH_TOL: f64 = 1e-9;

/// What a supervisor does at one low-confidence step of one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub corrected: bool,
    /// First-component input `u ∈ [−1, 1]`.
    pub u: f64,
    /// Overrides the arbitrated gradient; clamped to the demonstration bounds.
    pub gradient: Option<f64>,
}

impl Decision {
    pub const NONE: Decision = Decision {
        corrected: false,
        u: 0.0,
        gradient: None,
    };
}

/// Source of corrections at low-confidence steps.
pub trait Supervisor {
    fn decide(&mut self, agent: usize, step: usize, model: &BehaviorModel) -> Result<Decision>;
}

/// Supervisor that never intervenes.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoCorrection;

impl Supervisor for NoCorrection {
    fn decide(&mut self, _: usize, _: usize, _: &BehaviorModel) -> Result<Decision> {
        Ok(Decision::NONE)
    }
}

/// Corrects iff `need` XOR an error event of probability `error_rate`.
/// Returns the correction flag and, when correcting, `|u| ~ U[lo, hi]`.
pub fn scripted_operator(need: bool, error_rate: f64, magnitude: [f64; 2], rng: &mut impl Rng) -> (bool, f64) {
    let error = rng.gen::<f64>() < error_rate;
    if need != error {
        (true, rng.gen_range(magnitude[0]..=magnitude[1]))
    } else {
        (false, 0.0)
    }
}

/// Scripted operator driven by the ground-truth need map.
#[derive(Debug, Clone)]
pub struct OperatorModel {
    pub need: GroundTruthNeed,
    pub error_rate: f64,
    pub magnitude: [f64; 2],
    rng: ChaCha8Rng,
}

impl OperatorModel {
    pub const DEFAULT_MAGNITUDE: [f64; 2] = [0.3, 1.0];

    pub fn new(need: GroundTruthNeed, error_rate: f64, magnitude: [f64; 2], rng: ChaCha8Rng) -> Result<Self> {
        if !(0.0..=0.5).contains(&error_rate) {
            return Err(Error::Config(format!("error_rate must lie in [0, 0.5], got {error_rate}")));
        }
        if !(0.0 < magnitude[0] && magnitude[0] <= magnitude[1] && magnitude[1] <= 1.0) {
            return Err(Error::Config(format!(
                "correction magnitude must satisfy 0 < lo <= hi <= 1, got {magnitude:?}"
            )));
        }
        Ok(Self {
            need,
            error_rate,
            magnitude,
            rng,
        })
    }

    /// Sign of the first component that pushes towards the need direction.
    fn sign(&self, step: usize, model: &BehaviorModel) -> f64 {
        let Some(b) = model.correction.basis[step].first() else {
            return 1.0;
        };
        let w = model.weights.weights();
        let dot: f64 = b
            .iter()
            .zip(w)
            .zip(&self.need.direction)
            .map(|((b, w), d)| b * w * d)
            .sum();
        if dot < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

impl Supervisor for OperatorModel {
    fn decide(&mut self, _: usize, step: usize, model: &BehaviorModel) -> Result<Decision> {
        let need = self.need.at_step(step);
        let (corrected, mag) = scripted_operator(need, self.error_rate, self.magnitude, &mut self.rng);
        Ok(Decision {
            corrected,
            u: self.sign(step, model) * mag,
            gradient: None,
        })
    }
}

/// Timing adversaries for margin testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversaryMode {
    /// Uniform gradient in the bounds at every low-confidence step.
    Uniform,
    /// Fastest or slowest, redrawn on entering each low-confidence region.
    Extremes,
    /// The given agent always fastest, the other always slowest.
    WorstCase { fast_agent: usize },
}

#[derive(Debug, Clone)]
pub struct Adversary {
    pub mode: AdversaryMode,
    rng: ChaCha8Rng,
    /// Current region choice per agent, `true` for fastest.
    sticky: [Option<(usize, bool)>; 2],
}

impl Adversary {
    pub fn new(mode: AdversaryMode, rng: ChaCha8Rng) -> Self {
        Self {
            mode,
            rng,
            sticky: [None, None],
        }
    }
}

impl Supervisor for Adversary {
    fn decide(&mut self, agent: usize, step: usize, model: &BehaviorModel) -> Result<Decision> {
        let (lo, hi) = (model.bounds.min_gradient[step], model.bounds.max_gradient[step]);
        let g = match self.mode {
            AdversaryMode::Uniform => lo + self.rng.gen::<f64>() * (hi - lo),
            AdversaryMode::Extremes => {
                let fast = match self.sticky[agent] {
                    Some((last, fast)) if step <= last + 1 => fast,
                    _ => self.rng.gen(),
                };
                self.sticky[agent] = Some((step, fast));
                if fast {
                    lo
                } else {
                    hi
                }
            }
            AdversaryMode::WorstCase { fast_agent } => {
                if agent == fast_agent {
                    lo
                } else {
                    hi
                }
            }
        };
        Ok(Decision {
            corrected: true,
            u: 0.0,
            gradient: Some(g),
        })
    }
}

/// One tick of the simulation. Agent fields are `None` while the agent is
/// not running.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub global_t: f64,
    pub agents: [Option<AgentStep>; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    /// Position on the scheduled timeline before the increment.
    pub position: f64,
    pub reference_t: f64,
    pub conf: bool,
    pub u: f64,
    pub corrected: bool,
    /// Applied increment `δt`.
    pub dt: f64,
    pub speed_fast: f64,
    pub speed_slow: f64,
}

/// Executed stream of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub agent: usize,
    /// `(reference time, corrected)` per tick, for confidence updates.
    pub observations: Vec<(f64, bool)>,
    pub executed: Demonstration,
    pub corrections: usize,
    pub start_time: f64,
    pub finish_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub records: Vec<StepRecord>,
    pub traces: [ExecutionTrace; 2],
    pub scheduled_total_time: f64,
    pub realized_total_time: f64,
    /// Ticks where both running agents were low-confidence.
    pub overlap_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub realized_total_time: f64,
    pub scheduled_total_time: f64,
    pub corrections_count: [usize; 2],
    pub overlap_violations: usize,
}

impl Simulation {
    pub fn summary(&self) -> SimulationSummary {
        SimulationSummary {
            realized_total_time: self.realized_total_time,
            scheduled_total_time: self.scheduled_total_time,
            corrections_count: [self.traces[0].corrections, self.traces[1].corrections],
            overlap_violations: self.overlap_violations,
        }
    }

    /// `step,global_t,t1,t2,conf1,conf2,u1,u2,corrected1,corrected2` with
    /// reference times. Idle agents report their clamped reference time,
    /// confidence 1 and no correction.
    pub fn trace_csv(&self, reference_length: f64) -> String {
        let mut out = String::from("step,global_t,t1,t2,conf1,conf2,u1,u2,corrected1,corrected2\n");
        let mut last = [0.0, 0.0];
        for r in &self.records {
            let cols: Vec<(f64, bool, f64, bool)> = (0..2)
                .map(|i| match &r.agents[i] {
                    Some(a) => {
                        last[i] = a.reference_t;
                        (a.reference_t, a.conf, a.u, a.corrected)
                    }
                    None => {
                        let t = if last[i] > 0.0 { reference_length } else { 0.0 };
                        (t, true, 0.0, false)
                    }
                })
                .collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.step,
                fmt_sig(r.global_t),
                fmt_sig(cols[0].0),
                fmt_sig(cols[1].0),
                u8::from(cols[0].1),
                u8::from(cols[1].1),
                fmt_sig(cols[0].2),
                fmt_sig(cols[1].2),
                u8::from(cols[0].3),
                u8::from(cols[1].3),
            );
        }
        out
    }
}

struct AgentState {
    started: bool,
    finished: bool,
    position: f64,
    start_time: f64,
    finish_time: f64,
    observations: Vec<(f64, bool)>,
    rows: Vec<Vec<f64>>,
    corrections: usize,
}

impl AgentState {
    fn new() -> Self {
        Self {
            started: false,
            finished: false,
            position: 0.0,
            start_time: 0.0,
            finish_time: 0.0,
            observations: Vec::new(),
            rows: Vec::new(),
            corrections: 0,
        }
    }

    fn running(&self) -> bool {
        self.started && !self.finished
    }
}

struct Tick {
    reference_t: f64,
    conf: bool,
    speed: Speed,
    decision: Decision,
    /// `δt^u` for low-confidence agents.
    correction_dt: f64,
    state: Vec<f64>,
}

fn state_row(model: &BehaviorModel, reference_t: f64, step: usize, decision: &Decision) -> Result<Vec<f64>> {
    let mut x = model.mean_at(reference_t);
    if decision.corrected && decision.u != 0.0 {
        let delta = model.correction_delta(step, &OperatorInput::scalar(decision.u)?)?;
        for (x, d) in x.iter_mut().zip(&delta) {
            *x += d;
        }
        crate::demo_io::normalize_quat(model.quaternion, &mut x, 0.0);
    }
    x.truncate(model.gradient_channel());
    Ok(x)
}

/// Executes `schedule` tick by tick under `supervisor`.
pub fn simulate_execution(
    problem: &SchedulingProblem,
    schedule: &Schedule,
    model: &BehaviorModel,
    supervisor: &mut dyn Supervisor,
) -> Result<Simulation> {
    let dt = problem.step;
    if problem.len() != model.len() || schedule.warps[0].len() != model.len() {
        return Err(Error::Alignment(format!(
            "schedule of {} steps, confidence of {}, behavior of {}",
            schedule.warps[0].len(),
            problem.len(),
            model.len()
        )));
    }
    let scheduled = schedule.total_time();
    let limit = DIVERGENCE_FACTOR * scheduled;
    let gradient_channel = model.gradient_channel();
    let mut agents = [AgentState::new(), AgentState::new()];
    agents[0].started = true;
    let mut records = Vec::new();
    let mut overlap_violations = 0;

    for n in 0usize.. {
        let global = n as f64 * dt;
        if !agents[1].started && (agents[0].position >= schedule.tau || agents[0].finished) {
            agents[1].started = true;
            agents[1].position = schedule.tau;
            agents[1].start_time = global;
        }
        if agents.iter().all(|a| a.finished) {
            break;
        }
        if global > limit {
            return Err(Error::Divergence { elapsed: global, limit });
        }

        let mut ticks: [Option<Tick>; 2] = [None, None];
        for i in 0..2 {
            if !agents[i].running() {
                continue;
            }
            let t = agents[i].position;
            let reference_t = schedule.reference_time(i, t);
            let step = schedule.reference_step(i, t);
            let conf = problem.conf[step];
            let speed = schedule.speed(i, t, &problem.bounds);
            let (decision, correction_dt) = if conf {
                (Decision::NONE, 0.0)
            } else {
                let d = supervisor.decide(i, step, model)?;
                let g = match d.gradient {
                    Some(g) => g.clamp(problem.bounds.min_gradient[step], problem.bounds.max_gradient[step]),
                    None => model.apply_correction(step, &OperatorInput::scalar(d.u)?)?[gradient_channel],
                };
                (d, dt * schedule.warps[i].gradient()[step] / g)
            };
            let state = state_row(model, reference_t, step, &decision)?;
            ticks[i] = Some(Tick {
                reference_t,
                conf,
                speed,
                decision,
                correction_dt,
                state,
            });
        }

        let pos = [agents[0].position, agents[1].position];
        let increments = match (&ticks[0], &ticks[1]) {
            (Some(a), Some(b)) => match (a.conf, b.conf) {
                (false, false) => {
                    overlap_violations += 1;
                    [a.correction_dt, b.correction_dt]
                }
                (false, true) => {
                    let d0 = a.correction_dt;
                    [d0, response_step(pos[1] - (pos[0] + d0), b.speed, dt)]
                }
                (true, false) => {
                    let d1 = b.correction_dt;
                    [response_step(pos[0] - (pos[1] + d1), a.speed, dt), d1]
                }
                (true, true) => {
                    let (d0, d1) = coordinate(pos[0], pos[1], a.speed, b.speed, dt);
                    [d0, d1]
                }
            },
            (Some(a), None) => [if a.conf { dt } else { a.correction_dt }, 0.0],
            (None, Some(b)) => [0.0, if b.conf { dt } else { b.correction_dt }],
            (None, None) => [0.0, 0.0],
        };

        let mut record = StepRecord {
            step: n,
            global_t: global,
            agents: [None, None],
        };
        for i in 0..2 {
            let Some(tick) = ticks[i].take() else { continue };
            let a = &mut agents[i];
            let delta = increments[i];
            record.agents[i] = Some(AgentStep {
                position: a.position,
                reference_t: tick.reference_t,
                conf: tick.conf,
                u: tick.decision.u,
                corrected: tick.decision.corrected,
                dt: delta,
                speed_fast: tick.speed.fast,
                speed_slow: tick.speed.slow,
            });
            a.observations.push((tick.reference_t, tick.decision.corrected));
            a.rows.push(tick.state);
            if tick.decision.corrected {
                a.corrections += 1;
            }
            let end = schedule.end(i);
            if a.position + delta >= end - FINISH_TOL {
                a.finished = true;
                a.finish_time = global + dt * ((end - a.position) / delta).clamp(0.0, 1.0);
                let last = model.len() - 1;
                a.rows
                    .push(state_row(model, schedule.warps[i].domain(), last, &Decision::NONE)?);
            }
            a.position = (a.position + delta).min(end);
        }
        records.push(record);
    }

    let realized = agents.iter().map(|a| a.finish_time).fold(0.0, f64::max);
    let mut traces = Vec::with_capacity(2);
    for (i, a) in agents.into_iter().enumerate() {
        traces.push(ExecutionTrace {
            agent: i,
            observations: a.observations,
            executed: Demonstration::from_rows(a.rows, dt)?,
            corrections: a.corrections,
            start_time: a.start_time,
            finish_time: a.finish_time,
        });
    }
    let traces: [ExecutionTrace; 2] = traces.try_into().expect("two agents");
    Ok(Simulation {
        records,
        traces,
        scheduled_total_time: scheduled,
        realized_total_time: realized,
        overlap_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::CorrectionBasis;
    use crate::demo_io::weights_from_ranges;
    use crate::warp::{TimeWarp, WarpBounds};
    use rand::SeedableRng;

    const DT: f64 = 0.2;

    /// One state channel plus gradient; the first component moves only the gradient.
    fn model(n: usize) -> BehaviorModel {
        let bounds = WarpBounds {
            min_gradient: vec![0.5; n],
            max_gradient: vec![2.0; n],
            mean_gradient: vec![1.0; n],
        };
        BehaviorModel {
            sample_rate: DT,
            channel_names: vec!["x".into(), "warp_gradient".into()],
            quaternion: None,
            mean: (0..n).map(|k| vec![k as f64, 1.0]).collect(),
            variance: vec![0.0; n],
            correction: CorrectionBasis {
                basis: vec![vec![vec![0.0, 1.0]]; n],
                singular_values: vec![vec![1.0]; n],
                scale: vec![vec![1.0]; n],
            },
            bounds,
            weights: weights_from_ranges(&[1.0, 1.0]).unwrap(),
        }
    }

    fn conf_with(n: usize, lows: &[std::ops::Range<usize>]) -> Vec<bool> {
        let mut c = vec![true; n];
        for r in lows {
            c[r.clone()].iter_mut().for_each(|v| *v = false);
        }
        c
    }

    fn setup(conf: Vec<bool>) -> (SchedulingProblem, BehaviorModel) {
        let m = model(conf.len());
        (SchedulingProblem::new(m.bounds.clone(), conf, DT).unwrap(), m)
    }

    #[test]
    fn operator_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(scripted_operator(true, 0.0, [0.3, 1.0], &mut rng).0);
            assert!(!scripted_operator(false, 0.0, [0.3, 1.0], &mut rng).0);
        }
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| scripted_operator(false, 0.01, [0.3, 1.0], &mut rng).0)
            .count();
        let rate = hits as f64 / trials as f64;
        assert!((rate - 0.01).abs() <= 0.002, "{rate}");
    }

    #[test]
    fn serial_low_schedule_tracks_exactly() {
        let (p, m) = setup(vec![false; 50]);
        let w = p.mean_warp();
        let s = Schedule::new(w.clone(), w.clone(), w.length()).unwrap();
        let sim = simulate_execution(&p, &s, &m, &mut NoCorrection).unwrap();
        assert_eq!(sim.overlap_violations, 0);
        assert!((sim.realized_total_time - s.total_time()).abs() <= DT);
        for trace in &sim.traces {
            assert_eq!(trace.corrections, 0);
            assert!(trace.executed.len() >= 50);
        }
    }

    #[test]
    fn uncorrected_run_is_never_late() {
        let (p, m) = setup(conf_with(120, &[10..30, 70..80]));
        let w = TimeWarp::clamped(
            (0..120).map(|k| if (10..30).contains(&k) || (70..80).contains(&k) { 1.0 } else { 1.5 }).collect(),
            DT,
        );
        let s = Schedule::new(w.clone(), w, 14.0).unwrap();
        let sim = simulate_execution(&p, &s, &m, &mut NoCorrection).unwrap();
        assert!(sim.realized_total_time <= s.total_time() + DT);
    }

    #[test]
    fn increments_respect_speed_limits_and_sum_to_positions() {
        let (p, m) = setup(conf_with(100, &[10..25, 60..75]));
        let w = p.mean_warp();
        let s = Schedule::new(w.clone(), w.clone(), w.length()).unwrap();
        for mode in [AdversaryMode::Uniform, AdversaryMode::Extremes, AdversaryMode::WorstCase { fast_agent: 1 }] {
            let mut adv = Adversary::new(mode, ChaCha8Rng::seed_from_u64(4));
            let sim = simulate_execution(&p, &s, &m, &mut adv).unwrap();
            let mut pos = [0.0, s.tau];
            for r in &sim.records {
                for i in 0..2 {
                    if let Some(a) = &r.agents[i] {
                        assert!((a.position - pos[i]).abs() < 1e-9);
                        let (lo, hi) = (a.speed_slow * DT, a.speed_fast * DT);
                        let ends = (s.end(i) - a.position).abs() < hi;
                        assert!(a.dt >= lo - 1e-12 && (a.dt <= hi + 1e-12 || ends), "{a:?}");
                        let r_t = s.reference_time(i, a.position);
                        assert!((r_t - a.reference_t).abs() < 1e-9);
                        pos[i] += a.dt;
                    }
                }
            }
        }
    }

    #[test]
    fn operator_corrections_slow_the_agent() {
        let n = 60;
        let (p, m) = setup(vec![false; n]);
        let need = GroundTruthNeed {
            sample_rate: DT,
            need: vec![true; n],
            phase: vec![crate::demo_io::Phase::Lead; n],
            direction: vec![0.0, 1.0],
        };
        let mut op = OperatorModel::new(need, 0.0, [1.0, 1.0], ChaCha8Rng::seed_from_u64(2)).unwrap();
        let w = p.mean_warp();
        let s = Schedule::new(w.clone(), w.clone(), w.length()).unwrap();
        let sim = simulate_execution(&p, &s, &m, &mut op).unwrap();
        // Gradient 2 everywhere: each agent takes twice as long.
        assert!((sim.realized_total_time - 2.0 * s.total_time()).abs() <= 2.0 * DT);
        assert_eq!(sim.overlap_violations, 0);
        let csv = sim.trace_csv(w.domain());
        assert!(csv.starts_with("step,global_t,t1,t2,conf1,conf2,u1,u2,corrected1,corrected2\n"));
    }

    #[test]
    fn divergence_guard_fires() {
        let n = 20;
        let mut bounds = model(n).bounds;
        bounds.max_gradient = vec![10.0; n];
        let mut m = model(n);
        m.bounds = bounds.clone();
        let p = SchedulingProblem::new(bounds, vec![false; n], DT).unwrap();
        let w = p.mean_warp();
        let s = Schedule::new(w.clone(), w.clone(), w.length()).unwrap();
        let mut adv = Adversary::new(AdversaryMode::WorstCase { fast_agent: 2 }, ChaCha8Rng::seed_from_u64(0));
        let err = simulate_execution(&p, &s, &m, &mut adv).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn overlapping_low_regions_are_counted() {
        let (p, m) = setup(vec![false; 30]);
        let w = p.mean_warp();
        let s = Schedule::new(w.clone(), w, 0.0).unwrap();
        let sim = simulate_execution(&p, &s, &m, &mut NoCorrection).unwrap();
        assert_eq!(sim.overlap_violations, 30);
    }
}
