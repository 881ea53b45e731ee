//! Synthetic multi-pass surface-finishing task with known correction needs.
//!
//! The task is a sequence of straight passes joined by lifted transitions.
//! Passes are split into equal sections; a seeded random subset of the
//! sections in the first `need_passes` passes needs operator correction.
//! Demonstrations differ in two ways only:
//!
//! * timing: every demonstration except the first is replayed with a smooth
//!   per-section rate drawn from the jitter ranges (need sections are also
//!   slowed down), while leads and the trailing passes run at rate 1;
//! * force: need sections carry a per-demonstration additive `fz` offset.
//!
//! The first demonstration follows the nominal timeline exactly, so the
//! ground-truth need is expressed directly on the reference grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ChannelSchema, Demonstration, DemonstrationSet, StateSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthTaskSpec {
    pub demos: usize,
    pub sample_rate: f64,
    pub passes: usize,
    /// Passes (from the first) whose sections may need correction.
    pub need_passes: usize,
    pub pass_duration: f64,
    pub transition_duration: f64,
    pub lead_duration: f64,
    pub sections_per_pass: usize,
    pub need_fraction: f64,
    pub pass_jitter: [f64; 2],
    pub transition_jitter: [f64; 2],
    pub need_slowdown: [f64; 2],
    pub need_force: [f64; 2],
    pub base_force: f64,
    pub pass_length: f64,
    pub pass_spacing: f64,
    pub lift: f64,
    pub tilt_deg: f64,
    pub smoothing: usize,
}

impl Default for SynthTaskSpec {
    fn default() -> Self {
        Self {
            demos: 6,
            sample_rate: 0.2,
            passes: 4,
            need_passes: 3,
            pass_duration: 8.0,
            transition_duration: 15.0,
            lead_duration: 2.0,
            sections_per_pass: 4,
            need_fraction: 0.5,
            pass_jitter: [0.75, 1.35],
            transition_jitter: [0.4, 1.6],
            need_slowdown: [1.0, 1.4],
            need_force: [0.0, 30.0],
            base_force: 5.0,
            pass_length: 1.0,
            pass_spacing: 0.25,
            lift: 0.1,
            tilt_deg: 4.0,
            smoothing: 5,
        }
    }
}

impl SynthTaskSpec {
    /// Envelope of every per-demonstration rate the generator can produce.
    pub fn jitter_bounds(&self) -> (f64, f64) {
        let mut lo = 1.0f64.min(self.transition_jitter[0]);
        let mut hi = 1.0f64.max(self.transition_jitter[1]);
        if self.need_passes > 0 {
            lo = lo
                .min(self.pass_jitter[0])
                .min(self.pass_jitter[0] * self.need_slowdown[0]);
            hi = hi
                .max(self.pass_jitter[1])
                .max(self.pass_jitter[1] * self.need_slowdown[1]);
        }
        (lo, hi)
    }

    fn section_steps(&self) -> usize {
        ((self.pass_duration / self.sample_rate) / self.sections_per_pass as f64).round() as usize
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.demos < 2 {
            return bad(format!("need at least 2 demonstrations, got {}", self.demos));
        }
        if !(self.sample_rate > 0.0) {
            return bad("sample rate must be positive".into());
        }
        if self.passes == 0 || self.need_passes > self.passes {
            return bad(format!(
                "need_passes {} must not exceed passes {} (>= 1)",
                self.need_passes, self.passes
            ));
        }
        if self.sections_per_pass == 0 || self.section_steps() == 0 {
            return bad("each pass section must span at least one sample".into());
        }
        if !(0.0..=1.0).contains(&self.need_fraction) {
            return bad(format!("need fraction {} outside [0, 1]", self.need_fraction));
        }
        for (name, d) in [
            ("transition_duration", self.transition_duration),
            ("lead_duration", self.lead_duration),
        ] {
            if !(d / self.sample_rate >= 1.0) {
                return bad(format!("{name} must span at least one sample"));
            }
        }
        for (name, r) in [
            ("pass_jitter", self.pass_jitter),
            ("transition_jitter", self.transition_jitter),
            ("need_slowdown", self.need_slowdown),
        ] {
            if !(r[0] > 0.0) {
                return bad(format!("{name} lower bound {} does not keep the warp increasing", r[0]));
            }
            if r[0] > r[1] {
                return bad(format!("{name} bounds [{}, {}] are inverted", r[0], r[1]));
            }
        }
        if self.need_force[0] > self.need_force[1] {
            return bad("need_force bounds are inverted".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Lead,
    Pass(usize),
    Transition(usize),
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    phase: Phase,
    start: usize,
    steps: usize,
    need: bool,
    /// Global section index for need bookkeeping.
    section: usize,
    jittered: bool,
}

/// Simulator-side oracle of which reference steps genuinely need correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthNeed {
    pub sample_rate: f64,
    pub need: Vec<bool>,
    pub phase: Vec<Phase>,
    /// Augmented-state direction an operator pushes towards when correcting.
    pub direction: Vec<f64>,
}

impl GroundTruthNeed {
    pub fn len(&self) -> usize {
        self.need.len()
    }

    pub fn is_empty(&self) -> bool {
        self.need.is_empty()
    }

    pub fn at_step(&self, k: usize) -> bool {
        self.need[k.min(self.need.len() - 1)]
    }

    /// Fraction of reference steps that do not need correction.
    pub fn no_need_fraction(&self) -> f64 {
        self.need.iter().filter(|n| !**n).count() as f64 / self.need.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub set: DemonstrationSet,
    pub need: GroundTruthNeed,
    /// Per-demonstration rate against the nominal (reference) grid.
    pub true_gradients: Vec<Vec<f64>>,
}

pub fn synthesize_task(spec: &SynthTaskSpec, rng_seed: u64) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let dt = spec.sample_rate;
    let segments = layout(spec, &mut rng);
    let n = segments.last().map(|s| s.start + s.steps).unwrap_or(0);
    let sections = segments.iter().map(|s| s.section + 1).max().unwrap_or(0);
    let (lo, hi) = spec.jitter_bounds();

    let schema = ChannelSchema::default();
    let fz = schema.index_of("fz").expect("default schema has fz");
    let mut direction = vec![0.0; schema.len() + 1];
    direction[fz] = 1.0;
    direction[schema.len()] = 1.0;

    let mut step_phase = vec![Phase::Lead; n];
    let mut need = vec![false; n];
    for s in &segments {
        for k in s.start..s.start + s.steps {
            step_phase[k] = s.phase;
            need[k] = s.need;
        }
    }

    let mut demos = Vec::with_capacity(spec.demos);
    let mut true_gradients = Vec::with_capacity(spec.demos);
    for i in 0..spec.demos {
        let rates = if i == 0 {
            vec![1.0; n]
        } else {
            demo_rates(spec, &segments, n, (lo, hi), &mut rng)?
        };
        let offsets: Vec<f64> = (0..sections)
            .map(|_| rng.gen_range(spec.need_force[0]..=spec.need_force[1]))
            .collect();
        let knots = cumulative_knots(&rates, &segments);
        let samples_total = knots[n].round() as usize;
        let mut samples = Vec::with_capacity(samples_total);
        for j in 0..samples_total {
            let phase_steps = nominal_position(&knots, &rates, j as f64);
            let mut values = nominal_state(spec, &segments, phase_steps);
            let k = (phase_steps.floor() as usize).min(n - 1);
            if let Some(seg) = segments.iter().find(|s| k >= s.start && k < s.start + s.steps) {
                if seg.need {
                    values[fz] += offsets[seg.section];
                }
            }
            samples.push(StateSample {
                t: j as f64 * dt,
                values,
            });
        }
        demos.push(Demonstration::new(samples, dt)?);
        true_gradients.push(rates);
    }

    Ok(SynthOutput {
        set: DemonstrationSet::new(demos, schema)?,
        need: GroundTruthNeed {
            sample_rate: dt,
            need,
            phase: step_phase,
            direction,
        },
        true_gradients,
    })
}

fn layout(spec: &SynthTaskSpec, rng: &mut ChaCha8Rng) -> Vec<Segment> {
    let dt = spec.sample_rate;
    let lead = (spec.lead_duration / dt).round() as usize;
    let trans = (spec.transition_duration / dt).round() as usize;
    let sec = spec.section_steps();
    let need_per_pass = (spec.need_fraction * spec.sections_per_pass as f64).round() as usize;

    let mut segs = Vec::new();
    let mut at = 0;
    let mut section = 0;
    let mut push = |segs: &mut Vec<Segment>, phase, steps, need, jittered, section| {
        segs.push(Segment {
            phase,
            start: at,
            steps,
            need,
            section,
            jittered,
        });
        at += steps;
    };
    push(&mut segs, Phase::Lead, lead, false, false, usize::MAX);
    for p in 0..spec.passes {
        let variable = p < spec.need_passes;
        let mut chosen = vec![false; spec.sections_per_pass];
        if variable {
            let mut idx: Vec<usize> = (0..spec.sections_per_pass).collect();
            for k in 0..need_per_pass {
                let j = rng.gen_range(k..idx.len());
                idx.swap(k, j);
                chosen[idx[k]] = true;
            }
        }
        for &need in &chosen {
            push(&mut segs, Phase::Pass(p), sec, need, variable, section);
            section += 1;
        }
        if p + 1 < spec.passes {
            push(&mut segs, Phase::Transition(p), trans, false, true, usize::MAX);
        }
    }
    push(&mut segs, Phase::Lead, lead, false, false, usize::MAX);
    for s in &mut segs {
        if s.section == usize::MAX {
            s.section = 0;
        }
    }
    segs
}

fn demo_rates(
    spec: &SynthTaskSpec,
    segments: &[Segment],
    n: usize,
    (lo, hi): (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let draw = |rng: &mut ChaCha8Rng, r: [f64; 2]| {
        if r[0] == r[1] {
            r[0]
        } else {
            rng.gen_range(r[0]..=r[1])
        }
    };
    let mut raw = vec![1.0; n];
    for s in segments {
        let rate = match (s.phase, s.jittered) {
            (_, false) => 1.0,
            (Phase::Transition(_), true) => draw(rng, spec.transition_jitter),
            (_, true) => {
                let base = draw(rng, spec.pass_jitter);
                if s.need {
                    base * draw(rng, spec.need_slowdown)
                } else {
                    base
                }
            }
        };
        raw[s.start..s.start + s.steps].fill(rate);
    }

    // Moving average keeps every entry inside the convex hull of its inputs.
    let w = spec.smoothing.max(1) / 2;
    let mut rates: Vec<f64> = (0..n)
        .map(|k| {
            let a = k.saturating_sub(w);
            let b = (k + w + 1).min(n);
            raw[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect();
    for s in segments.iter().filter(|s| !s.jittered) {
        rates[s.start..s.start + s.steps].fill(1.0);
    }

    // Every fixed segment must start on a whole sample so that identical
    // stretches are sampled identically across demonstrations.
    let mut run_start = None;
    for s in segments {
        if s.jittered {
            run_start.get_or_insert(s.start);
            continue;
        }
        if let Some(a) = run_start.take() {
            let b = s.start;
            let before: f64 = rates[..b].iter().sum();
            let delta = before.round() - before;
            let room: f64 = if delta > 0.0 {
                rates[a..b].iter().map(|r| hi - r).sum()
            } else {
                rates[a..b].iter().map(|r| r - lo).sum()
            };
            if room < delta.abs() {
                return Err(Error::Spec(
                    "jitter bounds leave no room to land fixed segments on the sample grid".into(),
                ));
            }
            for r in &mut rates[a..b] {
                let share = if delta > 0.0 { hi - *r } else { *r - lo };
                *r += delta * share / room;
            }
        }
    }
    Ok(rates)
}

/// Cumulative demo time (in samples) at each nominal step boundary, snapped
/// to whole samples at the start of every fixed segment.
fn cumulative_knots(rates: &[f64], segments: &[Segment]) -> Vec<f64> {
    let n = rates.len();
    let mut knots = vec![0.0f64; n + 1];
    let mut fixed_start = vec![false; n + 1];
    for s in segments.iter().filter(|s| !s.jittered) {
        fixed_start[s.start] = true;
    }
    for k in 0..n {
        if fixed_start[k] {
            knots[k] = knots[k].round();
        }
        knots[k + 1] = knots[k] + rates[k];
    }
    knots
}

/// Nominal position (in reference steps) reached at `u` demo samples.
fn nominal_position(knots: &[f64], rates: &[f64], u: f64) -> f64 {
    let n = rates.len();
    let k = match knots.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
        Ok(k) => k.min(n - 1),
        Err(k) => k.saturating_sub(1).min(n - 1),
    };
    k as f64 + (u - knots[k]) / rates[k]
}

fn nominal_state(spec: &SynthTaskSpec, segments: &[Segment], pos: f64) -> Vec<f64> {
    let n = segments.last().map(|s| s.start + s.steps).unwrap_or(1);
    let pos = pos.clamp(0.0, n as f64);
    // Sections of a pass form one straight stroke.
    let mut pass_span = None;
    let mut seg = segments[segments.len() - 1];
    for s in segments {
        if pos < (s.start + s.steps) as f64 {
            seg = *s;
            break;
        }
    }
    if let Phase::Pass(p) = seg.phase {
        let first = segments.iter().find(|s| s.phase == Phase::Pass(p)).unwrap();
        let count = segments.iter().filter(|s| s.phase == Phase::Pass(p)).count();
        pass_span = Some((first.start as f64, (first.steps * count) as f64));
    }
    let (x, y, z, valve, force) = match seg.phase {
        Phase::Pass(p) => {
            let (a, len) = pass_span.unwrap();
            let u = ((pos - a) / len).clamp(0.0, 1.0);
            (
                spec.pass_length * u,
                p as f64 * spec.pass_spacing,
                0.0,
                1.0,
                spec.base_force,
            )
        }
        Phase::Transition(p) => {
            let u = ((pos - seg.start as f64) / seg.steps as f64).clamp(0.0, 1.0);
            (
                spec.pass_length * (1.0 - u),
                (p as f64 + u) * spec.pass_spacing,
                spec.lift * (std::f64::consts::PI * u).sin(),
                0.0,
                0.0,
            )
        }
        Phase::Lead => {
            let u = ((pos - seg.start as f64) / seg.steps as f64).clamp(0.0, 1.0);
            if seg.start == 0 {
                (0.0, 0.0, spec.lift * (1.0 - u), 0.0, 0.0)
            } else {
                let last = spec.passes.saturating_sub(1) as f64;
                (spec.pass_length, last * spec.pass_spacing, spec.lift * u, 0.0, 0.0)
            }
        }
    };
    let t = pos * spec.sample_rate;
    let tilt = spec.tilt_deg.to_radians() * (2.0 * std::f64::consts::PI * t / 20.0).sin();
    let (s, c) = (0.5 * tilt).sin_cos();
    vec![x, y, z, s, 0.0, 0.0, c, 0.0, 0.0, force, valve]
}
