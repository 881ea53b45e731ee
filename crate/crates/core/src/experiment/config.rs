//! Experiment configuration, loaded from TOML.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorConfig;
use crate::confidence::ConfidenceParams;
use crate::demo_io::{weights_from_ranges, ChannelSchema, ChannelWeights, SynthTaskSpec, DEFAULT_CHANNELS, DEFAULT_RANGES};
use crate::error::{Error, Result};
use crate::runtime::OperatorModel;
use crate::scheduler::OptimizerConfig;
use crate::warp::WarpConfig;

/// Name of the warp-gradient channel in `[ranges]`.
pub const GRADIENT_CHANNEL: &str = "warp_gradient";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentParams {
    pub trials: usize,
    pub iterations: usize,
    pub error_rate: f64,
    pub seed: u64,
    /// Sample rate `Δt_s`; overrides the synthetic task's rate.
    pub dt_s: f64,
    /// Bounds of `|u|` for scripted corrections.
    pub correction_magnitude: [f64; 2],
    /// Channels aligned with equal weight when estimating warps.
    pub alignment_channels: Vec<String>,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            trials: 5,
            iterations: 60,
            error_rate: 0.01,
            seed: 0,
            dt_s: 0.2,
            correction_magnitude: OperatorModel::DEFAULT_MAGNITUDE,
            alignment_channels: vec!["x".into(), "y".into(), "z".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentParams,
    pub confidence: ConfidenceParams,
    /// Expected channel ranges overriding the defaults, by channel name.
    pub ranges: BTreeMap<String, f64>,
    pub synth: SynthTaskSpec,
    pub warp: WarpConfig,
    pub behavior: BehaviorConfig,
    pub optimizer: OptimizerConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.trials == 0 || e.iterations == 0 {
            return Err(Error::Config("trials and iterations must be at least 1".into()));
        }
        if !(0.0..=0.5).contains(&e.error_rate) {
            return Err(Error::Config(format!("error_rate must lie in [0, 0.5], got {}", e.error_rate)));
        }
        if !(e.dt_s > 0.0) {
            return Err(Error::Config(format!("dt_s must be positive, got {}", e.dt_s)));
        }
        self.confidence.validate()?;
        self.optimizer.validate()?;
        Ok(())
    }

    /// Synthetic task with the experiment's sample rate.
    pub fn synth_spec(&self) -> SynthTaskSpec {
        SynthTaskSpec {
            sample_rate: self.experiment.dt_s,
            ..self.synth.clone()
        }
    }

    /// Range of a channel: the configured value or the default.
    pub fn range(&self, name: &str) -> Option<f64> {
        self.ranges.get(name).copied().or_else(|| {
            DEFAULT_CHANNELS
                .iter()
                .chain(std::iter::once(&GRADIENT_CHANNEL))
                .position(|c| *c == name)
                .map(|i| DEFAULT_RANGES[i])
        })
    }

    /// Augmented weights `w = 1/r²` for a schema plus the gradient channel.
    pub fn weights(&self, schema: &ChannelSchema) -> Result<ChannelWeights> {
        if let Some(unknown) = self
            .ranges
            .keys()
            .find(|k| k.as_str() != GRADIENT_CHANNEL && schema.index_of(k).is_none())
        {
            return Err(Error::Config(format!("range given for unknown channel {unknown:?}")));
        }
        let ranges = schema
            .names
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(GRADIENT_CHANNEL))
            .map(|n| {
                self.range(n)
                    .ok_or_else(|| Error::Config(format!("no range configured for channel {n:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        weights_from_ranges(&ranges)
    }

    /// Equal weights on the alignment channels, zero elsewhere.
    pub fn alignment_weights(&self, schema: &ChannelSchema) -> Result<Vec<f64>> {
        let mut w = vec![0.0; schema.len()];
        for name in &self.experiment.alignment_channels {
            let i = schema
                .index_of(name)
                .ok_or_else(|| Error::Config(format!("alignment channel {name:?} not in the data")))?;
            w[i] = 1.0;
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::Config("no alignment channels configured".into()));
        }
        Ok(w)
    }
}
