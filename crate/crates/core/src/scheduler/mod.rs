//! Global two-agent schedules: bookkeeping, feasibility and optimization.
//!
//! Agent 1 starts at global time 0, agent 2 at `τ`. Agent `i` runs on the
//! half-open interval `[τᵢ, τᵢ + |ψ_Eᵢ|)`.
//!
//! Low confidence on the global grid is evaluated per cell
//! `[n·Δt, (n+1)·Δt)`: a cell is low for an agent when any reference step it
//! visits during the cell is low-confidence. Constraint 3 and the margin
//! walk use these cell maps dilated by one cell on each side, restricted to
//! cells where the agent runs.

mod margins;
mod sampler;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runtime::{speed_factors, Speed};
use crate::warp::{TimeWarp, WarpBounds};

pub use self::sampler::{
    fastest_serial, optimize_schedule, sample_schedule, OffsetPolicy, Optimized, OptimizerConfig, ScheduleSource,
    SegmentResampling,
};

const GRADIENT_TOL: f64 = 1e-12;
const MEAN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub warps: [TimeWarp; 2],
    pub tau: f64,
}

impl Schedule {
    pub fn new(first: TimeWarp, second: TimeWarp, tau: f64) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::Domain(format!("offset must be nonnegative, got {tau}")));
        }
        if first.len() != second.len() || first.step() != second.step() {
            return Err(Error::Alignment("execution warps must share the reference grid".into()));
        }
        Ok(Self {
            warps: [first, second],
            tau,
        })
    }

    pub fn start(&self, agent: usize) -> f64 {
        if agent == 0 {
            0.0
        } else {
            self.tau
        }
    }

    pub fn length(&self, agent: usize) -> f64 {
        self.warps[agent].length()
    }

    pub fn end(&self, agent: usize) -> f64 {
        self.start(agent) + self.length(agent)
    }

    pub fn total_time(&self) -> f64 {
        total_time(self)
    }

    pub fn running(&self, agent: usize, t: f64) -> bool {
        t >= self.start(agent) && t < self.end(agent)
    }

    /// Reference time of an agent at global time `t`: 0 before its start,
    /// the end of the reference after it finishes.
    pub fn reference_time(&self, agent: usize, t: f64) -> f64 {
        self.warps[agent].eval_inverse(t - self.start(agent))
    }

    /// Reference step governing an agent at global time `t`.
    pub fn reference_step(&self, agent: usize, t: f64) -> usize {
        let w = &self.warps[agent];
        ((self.reference_time(agent, t) / w.step()).floor().max(0.0) as usize).min(w.len() - 1)
    }

    /// Speed factors of an agent at global time `t`; nominal once finished.
    pub fn speed(&self, agent: usize, t: f64, bounds: &WarpBounds) -> Speed {
        if t >= self.end(agent) {
            return Speed::NOMINAL;
        }
        let k = self.reference_step(agent, t);
        speed_factors(
            self.warps[agent].gradient()[k],
            bounds.min_gradient[k],
            bounds.max_gradient[k],
        )
    }
}

/// `T_total = max(|ψ_E1|, τ + |ψ_E2|)`.
pub fn total_time(schedule: &Schedule) -> f64 {
    schedule.length(0).max(schedule.end(1))
}

/// Which constraint of the scheduling problem failed, and where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// 1: gradient bounds, 2: offset range, 3: simultaneous low confidence,
    /// 4: low-confidence steps off the mean gradient, 5: insufficient margins.
    pub constraint: u8,
    pub agent: Option<usize>,
    /// Global seconds for constraint 3, reference seconds for 1 and 4.
    pub time: Option<f64>,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "constraint {}: {}", self.constraint, self.detail)
    }
}

/// Per-agent high-confidence flags over global grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMap {
    pub dt: f64,
    /// `[agent][cell]`, true when high-confidence or not running.
    pub high: [Vec<bool>; 2],
}

impl CellMap {
    pub fn cells(&self) -> usize {
        self.high[0].len()
    }

    pub fn is_high(&self, agent: usize, t: f64) -> bool {
        let n = (t / self.dt).floor();
        if n < 0.0 {
            return true;
        }
        self.high[agent].get(n as usize).copied().unwrap_or(true)
    }
}

/// Everything the scheduler knows about the task: reference step, warp
/// envelope and the current confidence profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingProblem {
    pub step: f64,
    pub bounds: WarpBounds,
    pub conf: Vec<bool>,
    low_prefix: Vec<usize>,
}

impl SchedulingProblem {
    pub fn new(bounds: WarpBounds, conf: Vec<bool>, step: f64) -> Result<Self> {
        if bounds.len() != conf.len() || bounds.is_empty() {
            return Err(Error::Alignment(format!(
                "bounds cover {} steps, confidence {}",
                bounds.len(),
                conf.len()
            )));
        }
        if !(step > 0.0) {
            return Err(Error::Domain(format!("step must be positive, got {step}")));
        }
        let mut low_prefix = Vec::with_capacity(conf.len() + 1);
        low_prefix.push(0);
        for c in &conf {
            low_prefix.push(low_prefix.last().unwrap() + usize::from(!c));
        }
        Ok(Self {
            step,
            bounds,
            conf,
            low_prefix,
        })
    }

    pub fn len(&self) -> usize {
        self.conf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conf.is_empty()
    }

    pub fn mean_warp(&self) -> TimeWarp {
        TimeWarp::clamped(self.bounds.mean_gradient.clone(), self.step)
    }

    fn any_low(&self, from: usize, to: usize) -> bool {
        self.low_prefix[to + 1] > self.low_prefix[from]
    }

    /// Confidence of one agent at global time `t`: high when not running.
    pub fn agent_conf(&self, schedule: &Schedule, agent: usize, t: f64) -> bool {
        !schedule.running(agent, t) || self.conf[schedule.reference_step(agent, t)]
    }

    pub fn biconfidence(&self, schedule: &Schedule, t: f64) -> [bool; 2] {
        [self.agent_conf(schedule, 0, t), self.agent_conf(schedule, 1, t)]
    }

    fn grid_cells(&self, schedule: &Schedule) -> usize {
        (schedule.total_time() / self.step - 1e-9).ceil().max(1.0) as usize
    }

    /// Cell occupancy map without dilation.
    pub fn cell_map(&self, schedule: &Schedule) -> CellMap {
        let n = self.grid_cells(schedule);
        let dt = self.step;
        let high = [0, 1].map(|agent| {
            let w = &schedule.warps[agent];
            let (start, end) = (schedule.start(agent), schedule.end(agent));
            (0..n)
                .map(|c| {
                    let a = (c as f64 * dt).max(start);
                    let b = ((c + 1) as f64 * dt).min(end);
                    if a >= b {
                        return true;
                    }
                    let ra = w.eval_inverse(a - start) / self.step;
                    let rb = w.eval_inverse(b - start) / self.step;
                    let last = self.len() - 1;
                    let ka = (ra.floor().max(0.0) as usize).min(last);
                    let kb = ((rb.ceil() as usize).saturating_sub(1)).clamp(ka, last);
                    !self.any_low(ka, kb)
                })
                .collect()
        });
        CellMap { dt, high }
    }

    /// Cell map with low-confidence cells dilated by one cell on each side,
    /// only into cells where the agent runs.
    pub fn dilated_map(&self, schedule: &Schedule) -> CellMap {
        let raw = self.cell_map(schedule);
        let dt = self.step;
        let high = [0, 1].map(|agent| {
            let (start, end) = (schedule.start(agent), schedule.end(agent));
            let src = &raw.high[agent];
            let n = src.len();
            (0..n)
                .map(|c| {
                    let runs = (c as f64 * dt).max(start) < ((c + 1) as f64 * dt).min(end);
                    if !runs {
                        return true;
                    }
                    src[c] && (c == 0 || src[c - 1]) && (c + 1 >= n || src[c + 1])
                })
                .collect()
        });
        CellMap { dt, high }
    }

    /// Checks the constraints in order and reports the first violation.
    pub fn check_constraints(&self, schedule: &Schedule) -> std::result::Result<(), Violation> {
        if schedule.warps[0].len() != self.len() {
            return Err(Violation {
                constraint: 1,
                agent: None,
                time: None,
                detail: format!("warps cover {} steps, task has {}", schedule.warps[0].len(), self.len()),
            });
        }
        for (agent, w) in schedule.warps.iter().enumerate() {
            for (k, g) in w.gradient().iter().enumerate() {
                if *g < self.bounds.min_gradient[k] - GRADIENT_TOL || *g > self.bounds.max_gradient[k] + GRADIENT_TOL {
                    return Err(Violation {
                        constraint: 1,
                        agent: Some(agent),
                        time: Some(k as f64 * self.step),
                        detail: format!(
                            "agent {} gradient {g} at step {k} outside [{}, {}]",
                            agent + 1,
                            self.bounds.min_gradient[k],
                            self.bounds.max_gradient[k]
                        ),
                    });
                }
            }
        }
        if !(schedule.tau >= 0.0 && schedule.tau <= schedule.length(0) + 1e-9) {
            return Err(Violation {
                constraint: 2,
                agent: None,
                time: Some(schedule.tau),
                detail: format!("offset {} outside [0, {}]", schedule.tau, schedule.length(0)),
            });
        }
        let map = self.dilated_map(schedule);
        let overlap_end = schedule.end(0).min(schedule.end(1));
        for c in 0..map.cells() {
            let a = (c as f64 * self.step).max(schedule.tau);
            let b = ((c + 1) as f64 * self.step).min(overlap_end);
            if a < b && !map.high[0][c] && !map.high[1][c] {
                return Err(Violation {
                    constraint: 3,
                    agent: None,
                    time: Some(c as f64 * self.step),
                    detail: format!("both agents low-confidence in cell starting at {}", c as f64 * self.step),
                });
            }
        }
        for (agent, w) in schedule.warps.iter().enumerate() {
            for (k, g) in w.gradient().iter().enumerate() {
                if !self.conf[k] && (g - self.bounds.mean_gradient[k]).abs() > MEAN_TOL {
                    return Err(Violation {
                        constraint: 4,
                        agent: Some(agent),
                        time: Some(k as f64 * self.step),
                        detail: format!(
                            "agent {} low-confidence step {k} scheduled at {g}, mean is {}",
                            agent + 1,
                            self.bounds.mean_gradient[k]
                        ),
                    });
                }
            }
        }
        if !margins::sufficient_margins_with(self, schedule, &map) {
            return Err(Violation {
                constraint: 5,
                agent: None,
                time: None,
                detail: "worst-case timing can overlap low-confidence regions".into(),
            });
        }
        Ok(())
    }

    pub fn is_feasible(&self, schedule: &Schedule) -> bool {
        self.check_constraints(schedule).is_ok()
    }

    pub fn sufficient_margins(&self, schedule: &Schedule) -> bool {
        margins::sufficient_margins_with(self, schedule, &self.dilated_map(schedule))
    }

    /// Gantt rows `t,conf_1,conf_2` at every grid point, high where an agent is not running.
    pub fn gantt_csv(&self, schedule: &Schedule) -> String {
        let mut out = String::from("t,conf_1,conf_2\n");
        let n = self.grid_cells(schedule);
        for c in 0..=n {
            let t = c as f64 * self.step;
            let [a, b] = self.biconfidence(schedule, t);
            let _ = writeln!(out, "{},{},{}", fmt_sig(t), u8::from(a), u8::from(b));
        }
        out
    }

    pub fn report(&self, schedule: &Schedule, cost: f64) -> ScheduleReport {
        ScheduleReport {
            tau: schedule.tau,
            gradients_1: schedule.warps[0].gradient().to_vec(),
            gradients_2: schedule.warps[1].gradient().to_vec(),
            total_time: schedule.total_time(),
            feasible: self.is_feasible(schedule),
            cost,
            step: self.step,
        }
    }
}

/// Serialized schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub tau: f64,
    pub gradients_1: Vec<f64>,
    pub gradients_2: Vec<f64>,
    pub total_time: f64,
    pub feasible: bool,
    pub cost: f64,
    pub step: f64,
}

impl ScheduleReport {
    pub fn to_schedule(&self) -> Result<Schedule> {
        Schedule::new(
            TimeWarp::new(self.gradients_1.clone(), self.step)?,
            TimeWarp::new(self.gradients_2.clone(), self.step)?,
            self.tau,
        )
    }
}

/// Nine significant digits in scientific notation.
pub fn fmt_sig(v: f64) -> String {
    format!("{v:.8e}")
}
