//! Anytime sampling optimizer over execution warps and offset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Schedule, SchedulingProblem};
use crate::error::{Error, Result};
use crate::warp::TimeWarp;

/// How high-confidence gradients are drawn between the envelope limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentResampling {
    /// One `λ` per contiguous high-confidence segment.
    PerSegment,
    /// One `λ` per reference step.
    PerStep,
}

/// How the offset of agent 2 is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetPolicy {
    /// `τ ~ U[0, |ψ_E1|]`.
    Uniform,
    /// Uniform draw, then the smallest feasible offset on the grid at or
    /// below it is searched for by bisection on the grid.
    Descend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub samples: usize,
    pub rng_seed: u64,
    /// Weights on the cost features `φ = [T_total]`.
    pub cost_weights: Vec<f64>,
    pub segment_resampling: SegmentResampling,
    /// Probability of forcing the fastest gradient on a segment.
    pub fastest_probability: f64,
    pub offset_policy: OffsetPolicy,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            samples: 500,
            rng_seed: 0,
            cost_weights: vec![1.0],
            segment_resampling: SegmentResampling::PerSegment,
            fastest_probability: 0.25,
            offset_policy: OffsetPolicy::Uniform,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("optimizer needs at least one sample".into()));
        }
        if self.cost_weights.len() != 1 || !(self.cost_weights[0] > 0.0) {
            return Err(Error::Config("cost_weights must hold one positive weight for T_total".into()));
        }
        if !(0.0..=1.0).contains(&self.fastest_probability) {
            return Err(Error::Config("fastest_probability must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn cost(&self, schedule: &Schedule) -> f64 {
        self.cost_weights[0] * schedule.total_time()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleSource {
    Sampled(usize),
    Fallback,
    Serial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub schedule: Schedule,
    pub cost: f64,
    pub source: ScheduleSource,
    /// Number of sampled candidates that passed every constraint.
    pub feasible_samples: usize,
}

fn sample_gradient(problem: &SchedulingProblem, cfg: &OptimizerConfig, rng: &mut impl Rng) -> Vec<f64> {
    let b = &problem.bounds;
    let mut g = Vec::with_capacity(problem.len());
    let mut lambda = None;
    for k in 0..problem.len() {
        if !problem.conf[k] {
            g.push(b.mean_gradient[k]);
            lambda = None;
            continue;
        }
        let l = match (cfg.segment_resampling, lambda) {
            (SegmentResampling::PerSegment, Some(l)) => l,
            _ if rng.gen::<f64>() < cfg.fastest_probability => 0.0,
            _ => rng.gen::<f64>(),
        };
        lambda = Some(l);
        g.push(b.min_gradient[k] + l * (b.max_gradient[k] - b.min_gradient[k]));
    }
    g
}

/// One random candidate: λ-interpolated gradients on high-confidence
/// segments, the mean gradient on low-confidence steps, uniform offset.
pub fn sample_schedule(problem: &SchedulingProblem, cfg: &OptimizerConfig, rng: &mut impl Rng) -> Schedule {
    let w1 = TimeWarp::clamped(sample_gradient(problem, cfg, rng), problem.step);
    let w2 = TimeWarp::clamped(sample_gradient(problem, cfg, rng), problem.step);
    let tau = rng.gen::<f64>() * w1.length();
    Schedule {
        warps: [w1, w2],
        tau,
    }
}

fn descend_offset(problem: &SchedulingProblem, schedule: Schedule) -> Option<Schedule> {
    let feasible_at = |tau: f64| {
        let s = Schedule {
            warps: schedule.warps.clone(),
            tau,
        };
        problem.is_feasible(&s).then_some(s)
    };
    let mut best = feasible_at(schedule.tau)?;
    let dt = problem.step;
    let mut tau = schedule.tau - dt;
    while tau >= 0.0 {
        match feasible_at(tau) {
            Some(s) => best = s,
            None => break,
        }
        tau -= dt;
    }
    Some(best)
}

/// Agent warps at their fastest on high-confidence steps, run back to back.
pub fn fastest_serial(problem: &SchedulingProblem) -> Schedule {
    let b = &problem.bounds;
    let g: Vec<f64> = (0..problem.len())
        .map(|k| {
            if problem.conf[k] {
                b.min_gradient[k]
            } else {
                b.mean_gradient[k]
            }
        })
        .collect();
    let w = TimeWarp::clamped(g, problem.step);
    let tau = w.length();
    Schedule {
        warps: [w.clone(), w],
        tau,
    }
}

fn candidate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Best feasible schedule among the sampled candidates, the fastest serial
/// schedule and the fallback (when still feasible). Deterministic for a
/// seed regardless of thread count; ties go to the fallback, then the
/// serial schedule, then the lowest sample index.
pub fn optimize_schedule(
    problem: &SchedulingProblem,
    cfg: &OptimizerConfig,
    fallback: Option<&Schedule>,
) -> Result<Optimized> {
    cfg.validate()?;
    let sampled: Vec<(f64, usize, Schedule)> = (0..cfg.samples)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = candidate_rng(cfg.rng_seed, i);
            let s = sample_schedule(problem, cfg, &mut rng);
            let s = match cfg.offset_policy {
                OffsetPolicy::Uniform => problem.is_feasible(&s).then_some(s)?,
                OffsetPolicy::Descend => descend_offset(problem, s)?,
            };
            Some((cfg.cost(&s), i, s))
        })
        .collect();
    let feasible_samples = sampled.len();
    let best_sample = sampled
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut best: Option<Optimized> = None;
    let mut offer = |schedule: Schedule, cost: f64, source: ScheduleSource| {
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            best = Some(Optimized {
                schedule,
                cost,
                source,
                feasible_samples,
            });
        }
    };
    if let Some(f) = fallback {
        if f.warps[0].len() == problem.len() && problem.is_feasible(f) {
            offer(f.clone(), cfg.cost(f), ScheduleSource::Fallback);
        }
    }
    let serial = fastest_serial(problem);
    if problem.is_feasible(&serial) {
        let c = cfg.cost(&serial);
        offer(serial, c, ScheduleSource::Serial);
    }
    if let Some((c, i, s)) = best_sample {
        offer(s, c, ScheduleSource::Sampled(i));
    }
    best.ok_or_else(|| Error::Config("no feasible schedule: serial fallback rejected".into()))
}
