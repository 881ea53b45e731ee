//! Demonstration ingestion, validation, resampling and synthesis.
//!
//! A demonstration is a uniformly sampled multivariate time series. Sample
//! `k` is taken to occupy the interval `[k·dt, (k+1)·dt)`, so a demonstration
//! of `n` samples has duration `n·dt`; warps and timing downstream use the
//! same convention.

mod csv;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::csv::{load_demonstrations, parse_demonstrations, save_demonstrations, write_demonstrations};
pub use self::synth::{synthesize_task, GroundTruthNeed, Phase, SynthOutput, SynthTaskSpec};

/// Channel order of the canonical demonstration file, after the leading `t`.
pub const DEFAULT_CHANNELS: [&str; 11] = [
    "x", "y", "z", "qx", "qy", "qz", "qw", "fx", "fy", "fz", "valve",
];

/// Expected channel ranges for the canonical channels plus the warp-gradient
/// channel (last entry).
pub const DEFAULT_RANGES: [f64; 12] = [2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 1.0, 30.0, 30.0, 30.0, 1.0, 1.0];

const UNIFORM_TOL: f64 = 1e-9;
const QUAT_RENORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSchema {
    pub names: Vec<String>,
    /// Indices of (qx, qy, qz, qw) when the schema carries an orientation.
    pub quaternion: Option<[usize; 4]>,
    /// Channels interpolated with zero-order hold instead of linearly.
    #[serde(default)]
    pub hold: Vec<usize>,
}

impl Default for ChannelSchema {
    fn default() -> Self {
        Self {
            names: DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect(),
            quaternion: Some([3, 4, 5, 6]),
            hold: Vec::new(),
        }
    }
}

impl ChannelSchema {
    /// Schema from channel names. Quaternion channels are located by name.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Self {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        let find = |n: &str| names.iter().position(|c| c == n);
        let quaternion = match (find("qx"), find("qy"), find("qz"), find("qw")) {
            (Some(a), Some(b), Some(c), Some(d)) => Some([a, b, c, d]),
            _ => None,
        };
        Self {
            names,
            quaternion,
            hold: Vec::new(),
        }
    }

    /// Marks the named channel as zero-order hold.
    pub fn with_hold(mut self, name: &str) -> Self {
        if let Some(i) = self.names.iter().position(|c| c == name) {
            if !self.hold.contains(&i) {
                self.hold.push(i);
            }
        }
        self
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|c| c == name)
    }

    /// Renormalizes the quaternion sub-vector in place. Returns false when
    /// the quaternion has zero norm.
    pub fn normalize_quaternion(&self, values: &mut [f64]) -> bool {
        normalize_quat(self.quaternion, values, 0.0)
    }
}

pub(crate) fn normalize_quat(quat: Option<[usize; 4]>, values: &mut [f64], tol: f64) -> bool {
    let Some(q) = quat else { return true };
    let norm = q.iter().map(|&i| values[i] * values[i]).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    if (norm - 1.0).abs() > tol {
        for &i in &q {
            values[i] /= norm;
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSample {
    pub t: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    samples: Vec<StateSample>,
    sample_rate: f64,
}

impl Demonstration {
    /// Validates an already uniform demonstration.
    pub fn new(samples: Vec<StateSample>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::Domain(format!("sample rate must be positive, got {sample_rate}")));
        }
        if samples.len() < 2 {
            return Err(Error::Schema(format!(
                "demonstration needs at least 2 samples, found {}",
                samples.len()
            )));
        }
        let m = samples[0].values.len();
        let t0 = samples[0].t;
        for (k, s) in samples.iter().enumerate() {
            if s.values.len() != m {
                return Err(Error::Schema(format!(
                    "sample {k} has {} channels, expected {m}",
                    s.values.len()
                )));
            }
            if s.values.iter().any(|v| !v.is_finite()) || !s.t.is_finite() {
                return Err(Error::Domain(format!("sample {k} is not finite")));
            }
            if (s.t - (t0 + k as f64 * sample_rate)).abs() > UNIFORM_TOL {
                return Err(Error::Schema(format!(
                    "sample {k} at t={} is off the uniform {sample_rate}s grid",
                    s.t
                )));
            }
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Builds a demonstration from raw, possibly non-uniform rows: quaternions
    /// are renormalized and the series is resampled onto a uniform grid of
    /// `sample_rate` when needed.
    pub fn from_raw(
        mut samples: Vec<StateSample>,
        sample_rate: f64,
        schema: &ChannelSchema,
    ) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Schema(format!(
                "demonstration needs at least 2 samples, found {}",
                samples.len()
            )));
        }
        for (k, s) in samples.iter_mut().enumerate() {
            if s.values.len() != schema.len() {
                return Err(Error::Schema(format!(
                    "sample {k} has {} channels, schema declares {}",
                    s.values.len(),
                    schema.len()
                )));
            }
            if !normalize_quat(schema.quaternion, &mut s.values, QUAT_RENORM_TOL) {
                return Err(Error::Domain(format!("sample {k} has a zero quaternion")));
            }
        }
        for k in 1..samples.len() {
            if !(samples[k].t > samples[k - 1].t) {
                return Err(Error::Schema(format!(
                    "timestamps not strictly increasing at sample {k}"
                )));
            }
        }
        let t0 = samples[0].t;
        let uniform = samples
            .iter()
            .enumerate()
            .all(|(k, s)| (s.t - (t0 + k as f64 * sample_rate)).abs() <= UNIFORM_TOL);
        if uniform {
            return Self::new(samples, sample_rate);
        }
        let span = samples[samples.len() - 1].t - t0;
        let count = (span / sample_rate + UNIFORM_TOL).floor() as usize + 1;
        let times: Vec<f64> = samples.iter().map(|s| s.t).collect();
        let mut out = Vec::with_capacity(count);
        let mut cursor = 0usize;
        for j in 0..count {
            let t = t0 + j as f64 * sample_rate;
            while cursor + 2 < times.len() && times[cursor + 1] <= t {
                cursor += 1;
            }
            let (a, b) = (&samples[cursor], &samples[cursor + 1]);
            let w = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
            let mut values: Vec<f64> = a
                .values
                .iter()
                .zip(&b.values)
                .enumerate()
                .map(|(c, (&va, &vb))| {
                    if schema.hold.contains(&c) {
                        if w < 1.0 {
                            va
                        } else {
                            vb
                        }
                    } else {
                        va + w * (vb - va)
                    }
                })
                .collect();
            normalize_quat(schema.quaternion, &mut values, 0.0);
            out.push(StateSample { t, values });
        }
        Self::new(out, sample_rate)
    }

    /// Convenience constructor from bare rows starting at t = 0.
    pub fn from_rows(rows: Vec<Vec<f64>>, sample_rate: f64) -> Result<Self> {
        let samples = rows
            .into_iter()
            .enumerate()
            .map(|(k, values)| StateSample {
                t: k as f64 * sample_rate,
                values,
            })
            .collect();
        Self::new(samples, sample_rate)
    }

    pub fn samples(&self) -> &[StateSample] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.samples[0].values.len()
    }

    /// Duration under the interval-per-sample convention: `len · dt`.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.sample_rate
    }

    /// State at a time offset from the first sample, interpolated linearly
    /// (or held, per schema) and clamped to the recorded span.
    pub fn state_at(&self, time: f64, schema: &ChannelSchema) -> Vec<f64> {
        let pos = (time / self.sample_rate).max(0.0);
        let last = self.samples.len() - 1;
        let k = (pos.floor() as usize).min(last);
        if k == last {
            return self.samples[last].values.clone();
        }
        let w = pos - k as f64;
        let (a, b) = (&self.samples[k].values, &self.samples[k + 1].values);
        let mut out: Vec<f64> = a
            .iter()
            .zip(b)
            .enumerate()
            .map(|(c, (&va, &vb))| {
                if schema.hold.contains(&c) {
                    va
                } else {
                    va + w * (vb - va)
                }
            })
            .collect();
        normalize_quat(schema.quaternion, &mut out, 0.0);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    demos: Vec<Demonstration>,
    schema: ChannelSchema,
}

impl DemonstrationSet {
    pub fn new(demos: Vec<Demonstration>, schema: ChannelSchema) -> Result<Self> {
        if demos.len() < 2 {
            return Err(Error::InsufficientDemos { found: demos.len() });
        }
        let dt = demos[0].sample_rate();
        for (i, d) in demos.iter().enumerate() {
            if d.channels() != schema.len() {
                return Err(Error::Schema(format!(
                    "demonstration {i} has {} channels, schema declares {}",
                    d.channels(),
                    schema.len()
                )));
            }
            if (d.sample_rate() - dt).abs() > UNIFORM_TOL {
                return Err(Error::Schema(format!(
                    "demonstration {i} sampled at {}s, set uses {dt}s",
                    d.sample_rate()
                )));
            }
        }
        Ok(Self { demos, schema })
    }

    pub fn demos(&self) -> &[Demonstration] {
        &self.demos
    }

    pub fn schema(&self) -> &ChannelSchema {
        &self.schema
    }

    pub fn channel_names(&self) -> &[String] {
        &self.schema.names
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.schema.len()
    }

    pub fn sample_rate(&self) -> f64 {
        self.demos[0].sample_rate()
    }

    pub fn reference(&self) -> &Demonstration {
        &self.demos[0]
    }

    /// Appends demonstrations after checking they match the set's schema.
    pub fn extend(&mut self, extra: impl IntoIterator<Item = Demonstration>) -> Result<()> {
        for d in extra {
            if d.channels() != self.schema.len() {
                return Err(Error::Schema(format!(
                    "appended demonstration has {} channels, expected {}",
                    d.channels(),
                    self.schema.len()
                )));
            }
            if (d.sample_rate() - self.sample_rate()).abs() > UNIFORM_TOL {
                return Err(Error::Schema("appended demonstration sample rate differs".into()));
            }
            self.demos.push(d);
        }
        Ok(())
    }
}

/// Diagonal weights `w = 1/r²` from expected channel ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelWeights {
    ranges: Vec<f64>,
    weights: Vec<f64>,
}

impl ChannelWeights {
    pub fn ranges(&self) -> &[f64] {
        &self.ranges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weighted squared norm `eᵀ W e`.
    pub fn quadratic(&self, e: &[f64]) -> f64 {
        e.iter().zip(&self.weights).map(|(v, w)| w * v * v).sum()
    }
}

pub fn weights_from_ranges(ranges: &[f64]) -> Result<ChannelWeights> {
    if ranges.is_empty() {
        return Err(Error::Domain("no channel ranges given".into()));
    }
    if let Some((i, r)) = ranges.iter().enumerate().find(|(_, r)| !(**r > 0.0) || !r.is_finite()) {
        return Err(Error::Domain(format!("range for channel {i} must be positive, got {r}")));
    }
    Ok(ChannelWeights {
        ranges: ranges.to_vec(),
        weights: ranges.iter().map(|r| 1.0 / (r * r)).collect(),
    })
}
