//! Per-step probability that a correction is needed.
//!
//! Each reference step carries a Beta prior shaped by the demonstration
//! variance and a list of Bernoulli observations, one per execution that
//! covered the step. A step is high-confidence when the posterior mass below
//! the acceptable correction probability exceeds the credible threshold.

use serde::{Deserialize, Serialize};
use statrs::function::beta::checked_beta_reg;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceParams {
    pub gamma_p: f64,
    pub sigma2_max: f64,
    pub mu_c: f64,
    pub gamma_c: f64,
    pub epsilon: f64,
}

impl Default for ConfidenceParams {
    fn default() -> Self {
        Self {
            gamma_p: 20.0,
            sigma2_max: 0.1,
            mu_c: 0.5,
            gamma_c: 0.9,
            epsilon: 1e-6,
        }
    }
}

impl ConfidenceParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma_p > 0.0
            && self.sigma2_max > 0.0
            && self.sigma2_max <= 0.25
            && self.mu_c > 0.0
            && self.mu_c < 1.0
            && self.gamma_c > 0.0
            && self.gamma_c < 1.0
            && self.epsilon > 0.0
            && [self.gamma_p, self.epsilon].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid confidence parameters {self:?}")))
        }
    }
}

/// Regularized incomplete beta function `I_x(α, β)`.
pub fn beta_cdf(x: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!("beta parameters must be positive, got ({alpha}, {beta})")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("beta CDF argument {x} outside [0, 1]")));
    }
    checked_beta_reg(alpha, beta, x)
        .map(|p| p.clamp(0.0, 1.0))
        .map_err(|e| Error::Domain(e.to_string()))
}

/// Prior mean and variance for one step: `μ = e/2`, `σ² = σ²_MAX·e` with
/// `e = 1 − exp(−γ_p(σ²_D + ε))`.
pub fn prior_moments(sigma2_d: f64, params: &ConfidenceParams) -> (f64, f64) {
    let e = -(-params.gamma_p * (sigma2_d + params.epsilon)).exp_m1();
    (0.5 * e, params.sigma2_max * e)
}

/// Beta parameters from the variance-shaped prior moments.
pub fn prior_from_variance(sigma2_d: &[f64], params: &ConfidenceParams) -> Result<Vec<(f64, f64)>> {
    params.validate()?;
    sigma2_d
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::Domain(format!("variance at step {k} is {s}")));
            }
            let e = -(-params.gamma_p * (s + params.epsilon)).exp_m1();
            let mu = 0.5 * e;
            // μ(1−μ)/σ² − 1 with the common factor e cancelled.
            let factor = (1.0 - 0.5 * e) / (2.0 * params.sigma2_max) - 1.0;
            let (a, b) = (mu * factor, (1.0 - mu) * factor);
            if !(a > 0.0 && b > 0.0) {
                return Err(Error::Config(format!(
                    "prior at step {k} has nonpositive parameters ({a}, {b})"
                )));
            }
            Ok((a, b))
        })
        .collect()
}

/// Beta posterior after Bernoulli observations `z`.
pub fn posterior(alpha0: f64, beta0: f64, z: &[bool]) -> (f64, f64) {
    let ones = z.iter().filter(|v| **v).count() as f64;
    (alpha0 + ones, beta0 + z.len() as f64 - ones)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceModel {
    pub params: ConfidenceParams,
    pub sample_rate: f64,
    pub alpha0: Vec<f64>,
    pub beta0: Vec<f64>,
    /// `[step]` → one flag per execution that covered the step.
    pub observations: Vec<Vec<bool>>,
    pub executions: usize,
}

impl ConfidenceModel {
    pub fn new(sigma2_d: &[f64], sample_rate: f64, params: &ConfidenceParams) -> Result<Self> {
        let prior = prior_from_variance(sigma2_d, params)?;
        Ok(Self {
            params: params.clone(),
            sample_rate,
            alpha0: prior.iter().map(|p| p.0).collect(),
            beta0: prior.iter().map(|p| p.1).collect(),
            observations: vec![Vec::new(); prior.len()],
            executions: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.alpha0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha0.is_empty()
    }

    pub fn posterior(&self, step: usize) -> (f64, f64) {
        posterior(self.alpha0[step], self.beta0[step], &self.observations[step])
    }

    /// `P(p_c < μ_c | z)` at a step.
    pub fn credibility(&self, step: usize) -> f64 {
        let (a, b) = self.posterior(step);
        beta_cdf(self.params.mu_c, a, b).expect("posterior parameters are positive")
    }

    pub fn conf(&self, step: usize) -> bool {
        self.credibility(step) > self.params.gamma_c
    }

    pub fn conf_profile(&self) -> Vec<bool> {
        (0..self.len()).map(|k| self.conf(k)).collect()
    }

    pub fn high_conf_fraction(&self) -> f64 {
        let n = self.len();
        (0..n).filter(|&k| self.conf(k)).count() as f64 / n as f64
    }

    /// Appends one observation per step covered by an execution trace of
    /// `(reference time, corrected)` samples. A sample at reference time `r`
    /// belongs to step `⌊r/h⌋`, the step whose confidence governed it. Steps
    /// between the first and last covered step without a sample record 0.
    pub fn record_execution(&mut self, trace: &[(f64, bool)]) -> Result<()> {
        let flags = self.attribute(trace)?;
        for (k, z) in flags {
            self.observations[k].push(z);
        }
        self.executions += 1;
        Ok(())
    }

    fn attribute(&self, trace: &[(f64, bool)]) -> Result<Vec<(usize, bool)>> {
        if trace.is_empty() || self.is_empty() {
            return Ok(Vec::new());
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, (r, _)) in trace.iter().enumerate() {
            if !r.is_finite() || *r < prev {
                return Err(Error::Trace(format!(
                    "reference time {r} at sample {i} is not monotone (previous {prev})"
                )));
            }
            prev = *r;
        }
        let last = self.len() - 1;
        let step_of = |r: f64| ((r / self.sample_rate).floor().max(0.0) as usize).min(last);
        let first = step_of(trace[0].0);
        let end = step_of(trace[trace.len() - 1].0);
        let mut flags: Vec<(usize, bool)> = (first..=end).map(|k| (k, false)).collect();
        for &(r, c) in trace {
            if c {
                flags[step_of(r) - first].1 = true;
            }
        }
        Ok(flags)
    }
}

/// Functional form of [`ConfidenceModel::record_execution`] over several executions.
pub fn update_observations(model: &ConfidenceModel, traces: &[Vec<(f64, bool)>]) -> Result<ConfidenceModel> {
    let mut next = model.clone();
    for t in traces {
        next.record_execution(t)?;
    }
    Ok(next)
}
