//! Mean behavior, demonstration variance and the correction model.
//!
//! All per-step quantities live on the reference grid and use the augmented
//! state `x⁺ = [x, ψ̇]`: the recorded channels followed by the warp gradient.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::demo_io::{normalize_quat, ChannelWeights, DemonstrationSet};
use crate::error::{Error, Result};
use crate::warp::{TimeWarp, WarpBounds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorConfig {
    /// Half-width, in steps, of the window pooled into each PCA.
    pub window: usize,
    /// Number of principal directions driven by the operator input.
    pub components: usize,
    /// State-correction cap in standard deviations of `σ²_D`.
    pub scale_sigmas: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            window: 10,
            components: 1,
            scale_sigmas: 3.0,
        }
    }
}

/// Operator input, one entry per correction component, each in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorInput {
    pub u: Vec<f64>,
}

impl OperatorInput {
    pub fn new(u: Vec<f64>) -> Result<Self> {
        if let Some(v) = u.iter().find(|v| !(v.abs() <= 1.0)) {
            return Err(Error::Input(*v));
        }
        Ok(Self { u })
    }

    pub fn scalar(u: f64) -> Result<Self> {
        Self::new(vec![u])
    }

    pub fn zero() -> Self {
        Self { u: vec![0.0] }
    }
}

/// Demonstrations resampled on the reference grid through their warps.
#[derive(Debug, Clone)]
pub struct AlignedStates {
    /// `[demo][step][channel]`, augmented.
    pub states: Vec<Vec<Vec<f64>>>,
    /// Arithmetic mean over demos, without quaternion renormalization.
    pub raw_mean: Vec<Vec<f64>>,
}

impl AlignedStates {
    pub fn new(set: &DemonstrationSet, warps: &[TimeWarp]) -> Result<Self> {
        if warps.len() != set.len() {
            return Err(Error::Alignment(format!(
                "{} warps for {} demonstrations",
                warps.len(),
                set.len()
            )));
        }
        let n = warps[0].len();
        if warps.iter().any(|w| w.len() != n) {
            return Err(Error::Alignment("warps cover different reference lengths".into()));
        }
        let h = set.sample_rate();
        let schema = set.schema();
        let states: Vec<Vec<Vec<f64>>> = set
            .demos()
            .iter()
            .zip(warps)
            .map(|(d, w)| {
                (0..n)
                    .map(|k| {
                        let mut x = d.state_at(w.eval(k as f64 * h), schema);
                        x.push(w.gradient()[k]);
                        x
                    })
                    .collect()
            })
            .collect();
        let raw_mean = (0..n).map(|k| exact_mean(states.iter().map(|s| &s[k][..]))).collect();
        Ok(Self { states, raw_mean })
    }

    pub fn demos(&self) -> usize {
        self.states.len()
    }

    pub fn steps(&self) -> usize {
        self.raw_mean.len()
    }

    fn residual(&self, i: usize, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.states[i][k].iter().zip(&self.raw_mean[k]).map(|(x, m)| x - m)
    }
}

/// Mean that is exact when all rows agree: `x₀ + Σ(xᵢ − x₀)/n`.
fn exact_mean<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let rows: Vec<&[f64]> = rows.collect();
    let first = rows[0];
    let n = rows.len() as f64;
    (0..first.len())
        .map(|c| first[c] + rows.iter().map(|r| r[c] - first[c]).sum::<f64>() / n)
        .collect()
}

/// Augmented mean behavior: state channels averaged with the quaternion
/// renormalized, last channel equal to the bounds' mean gradient.
pub fn build_mean(aligned: &AlignedStates, bounds: &WarpBounds, quaternion: Option<[usize; 4]>) -> Result<Vec<Vec<f64>>> {
    if bounds.len() != aligned.steps() {
        return Err(Error::Alignment(format!(
            "bounds cover {} steps, aligned data {}",
            bounds.len(),
            aligned.steps()
        )));
    }
    Ok(aligned
        .raw_mean
        .iter()
        .zip(&bounds.mean_gradient)
        .map(|(m, g)| {
            let mut x = m.clone();
            normalize_quat(quaternion, &mut x, 0.0);
            *x.last_mut().unwrap() = *g;
            x
        })
        .collect())
}

/// `σ²_D(t) = 1/(n_d−1) Σᵢ eᵢ⁺ᵀ W⁺ eᵢ⁺` with `eᵢ⁺` the mean-removed aligned state.
pub fn variance_profile(aligned: &AlignedStates, weights: &ChannelWeights) -> Result<Vec<f64>> {
    let width = aligned.raw_mean.first().map_or(0, Vec::len);
    if weights.len() != width {
        return Err(Error::Schema(format!(
            "{} augmented channels but {} weights",
            width,
            weights.len()
        )));
    }
    let dof = (aligned.demos() - 1).max(1) as f64;
    Ok((0..aligned.steps())
        .map(|k| {
            (0..aligned.demos())
                .map(|i| {
                    aligned
                        .residual(i, k)
                        .zip(weights.weights())
                        .map(|(e, w)| w * e * e)
                        .sum::<f64>()
                })
                .sum::<f64>()
                / dof
        })
        .collect())
}

/// Per-step principal correction directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionBasis {
    /// `[step][component][channel]`, unit norm in the `W⁺` metric or zero.
    pub basis: Vec<Vec<Vec<f64>>>,
    /// `[step][component]`, square roots of the pooled covariance eigenvalues.
    pub singular_values: Vec<Vec<f64>>,
    /// `[step][component]`, nonnegative.
    pub scale: Vec<Vec<f64>>,
}

pub fn correction_basis(
    aligned: &AlignedStates,
    weights: &ChannelWeights,
    variance: &[f64],
    bounds: &WarpBounds,
    cfg: &BehaviorConfig,
) -> Result<CorrectionBasis> {
    let n = aligned.steps();
    let m = weights.len();
    if variance.len() != n || bounds.len() != n {
        return Err(Error::Alignment("variance, bounds and aligned data lengths differ".into()));
    }
    if cfg.components == 0 || cfg.components > m {
        return Err(Error::Config(format!(
            "correction components must be in 1..={m}, got {}",
            cfg.components
        )));
    }
    let sqrt_w: Vec<f64> = weights.weights().iter().map(|w| w.sqrt()).collect();
    let g = m - 1;
    let k_comp = cfg.components;
    let mut out = CorrectionBasis {
        basis: Vec::with_capacity(n),
        singular_values: Vec::with_capacity(n),
        scale: Vec::with_capacity(n),
    };
    for k in 0..n {
        let lo = k.saturating_sub(cfg.window);
        let hi = (k + cfg.window + 1).min(n);
        let mut cov = DMatrix::<f64>::zeros(m, m);
        let mut count = 0usize;
        for j in lo..hi {
            for i in 0..aligned.demos() {
                let y: Vec<f64> = aligned.residual(i, j).zip(&sqrt_w).map(|(e, s)| e * s).collect();
                for a in 0..m {
                    if y[a] == 0.0 {
                        continue;
                    }
                    for b in 0..m {
                        cov[(a, b)] += y[a] * y[b];
                    }
                }
                count += 1;
            }
        }
        cov /= (count.max(2) - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]).then(a.cmp(b)));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let tol = 1e-12 * top.max(f64::MIN_POSITIVE);

        let mean_g = bounds.mean_gradient[k];
        let margin = (mean_g - bounds.min_gradient[k]).min(bounds.max_gradient[k] - mean_g).max(0.0);
        let state_cap = cfg.scale_sigmas * variance[k].max(0.0).sqrt();

        let mut basis = Vec::with_capacity(k_comp);
        let mut sv = Vec::with_capacity(k_comp);
        let mut scale = Vec::with_capacity(k_comp);
        for &c in order.iter().take(k_comp) {
            let lambda = eig.eigenvalues[c];
            if !(lambda > tol) {
                basis.push(vec![0.0; m]);
                sv.push(0.0);
                scale.push(0.0);
                continue;
            }
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let lead = v
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
            for x in &mut v {
                *x *= sign / norm;
            }
            let b: Vec<f64> = v.iter().zip(&sqrt_w).map(|(x, s)| x / s).collect();
            let timing_cap = if b[g].abs() > 0.0 {
                margin / (k_comp as f64 * b[g].abs())
            } else {
                f64::INFINITY
            };
            basis.push(b);
            sv.push(lambda.sqrt());
            scale.push(state_cap.min(timing_cap));
        }
        out.basis.push(basis);
        out.singular_values.push(sv);
        out.scale.push(scale);
    }
    Ok(out)
}

/// Quaternion norm deviation below which no renormalization happens.
const QUAT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorModel {
    pub sample_rate: f64,
    pub channel_names: Vec<String>,
    pub quaternion: Option<[usize; 4]>,
    /// `[step][channel]`, augmented.
    pub mean: Vec<Vec<f64>>,
    pub variance: Vec<f64>,
    pub correction: CorrectionBasis,
    pub bounds: WarpBounds,
    pub weights: ChannelWeights,
}

impl BehaviorModel {
    /// Builds every component from one set of aligned demonstrations.
    pub fn build(
        set: &DemonstrationSet,
        warps: &[TimeWarp],
        bounds: &WarpBounds,
        weights: &ChannelWeights,
        cfg: &BehaviorConfig,
    ) -> Result<Self> {
        let aligned = AlignedStates::new(set, warps)?;
        let quaternion = set.schema().quaternion;
        let mean = build_mean(&aligned, bounds, quaternion)?;
        let variance = variance_profile(&aligned, weights)?;
        let correction = correction_basis(&aligned, weights, &variance, bounds, cfg)?;
        let mut channel_names = set.channel_names().to_vec();
        channel_names.push("warp_gradient".into());
        Ok(Self {
            sample_rate: set.sample_rate(),
            channel_names,
            quaternion,
            mean,
            variance,
            correction,
            bounds: bounds.clone(),
            weights: weights.clone(),
        })
    }

    /// Re-estimates the state channels of the mean from a larger set,
    /// keeping variance, correction model, bounds and gradient channel.
    pub fn with_updated_mean(&self, set: &DemonstrationSet, warps: &[TimeWarp]) -> Result<Self> {
        let aligned = AlignedStates::new(set, warps)?;
        if aligned.steps() != self.len() {
            return Err(Error::Alignment(format!(
                "updated data covers {} steps, model {}",
                aligned.steps(),
                self.len()
            )));
        }
        let mut next = self.clone();
        next.mean = build_mean(&aligned, &self.bounds, self.quaternion)?;
        Ok(next)
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Index of the warp-gradient channel.
    pub fn gradient_channel(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn components(&self) -> usize {
        self.correction.scale.first().map_or(0, Vec::len)
    }

    /// Mean augmented state at a fractional reference time, linearly
    /// interpolated between steps with the quaternion renormalized.
    pub fn mean_at(&self, time: f64) -> Vec<f64> {
        let pos = (time / self.sample_rate).max(0.0);
        let last = self.len() - 1;
        let k = (pos.floor() as usize).min(last);
        if k == last {
            return self.mean[last].clone();
        }
        let w = pos - k as f64;
        let mut x: Vec<f64> = self.mean[k]
            .iter()
            .zip(&self.mean[k + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect();
        normalize_quat(self.quaternion, &mut x, 0.0);
        x
    }

    /// `δx⁺(u, t) = Σ_c scale_c(t)·u_c·basis_c(t)`.
    pub fn correction_delta(&self, step: usize, u: &OperatorInput) -> Result<Vec<f64>> {
        if step >= self.len() {
            return Err(Error::Domain(format!("step {step} outside behavior of {} steps", self.len())));
        }
        if let Some(v) = u.u.iter().find(|v| !(v.abs() <= 1.0)) {
            return Err(Error::Input(*v));
        }
        if u.u.len() > self.components() {
            return Err(Error::Domain(format!(
                "{} input components for a {}-component model",
                u.u.len(),
                self.components()
            )));
        }
        let mut delta = vec![0.0; self.weights.len()];
        for (c, uc) in u.u.iter().enumerate() {
            let s = self.correction.scale[step][c] * uc;
            for (d, b) in delta.iter_mut().zip(&self.correction.basis[step][c]) {
                *d += s * b;
            }
        }
        Ok(delta)
    }

    /// `x_f⁺ = μ̂⁺(t) + δx⁺(u, t)`, quaternion renormalized and gradient kept in bounds.
    pub fn apply_correction(&self, step: usize, u: &OperatorInput) -> Result<Vec<f64>> {
        let delta = self.correction_delta(step, u)?;
        let mut x: Vec<f64> = self.mean[step].iter().zip(&delta).map(|(m, d)| m + d).collect();
        // Tolerance keeps an unperturbed, already unit mean bit-exact.
        normalize_quat(self.quaternion, &mut x, QUAT_TOLERANCE);
        let g = self.gradient_channel();
        x[g] = x[g].clamp(self.bounds.min_gradient[step], self.bounds.max_gradient[step]);
        Ok(x)
    }
}
