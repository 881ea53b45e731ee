//! Warp estimation by dynamic programming on a banded alignment lattice.
//!
//! Lattice rows are reference samples, columns are target positions on a
//! grid of `1/subdivisions` samples. A path advances one row at a time by a
//! whole number of columns between `min_slope` and `max_slope`, so every
//! path is a strictly increasing warp. The optimal path is then smoothed
//! with a centered moving average and rescaled to keep both endpoints; the
//! window narrows while smoothing costs more than the configured fraction
//! of the raw path's loss.

use serde::{Deserialize, Serialize};

use super::{TimeWarp, GRADIENT_CEILING, GRADIENT_FLOOR};
use crate::demo_io::Demonstration;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarpConfig {
    pub subdivisions: usize,
    pub min_slope: f64,
    pub max_slope: f64,
    /// Half-width of the search band around the diagonal, as a fraction of
    /// the target length.
    pub band: f64,
    pub smoothing_window: usize,
    /// Largest relative loss increase over the raw lattice path a smoothing
    /// window may cause; narrower windows are tried until one complies.
    pub smoothing_tolerance: f64,
    pub gradient_floor: f64,
    pub gradient_ceiling: f64,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            subdivisions: 4,
            min_slope: 0.25,
            max_slope: 4.0,
            band: 0.5,
            smoothing_window: 5,
            smoothing_tolerance: 0.05,
            gradient_floor: GRADIENT_FLOOR,
            gradient_ceiling: GRADIENT_CEILING,
        }
    }
}

/// Weighted alignment loss `Σ_k h · eᵀ W e` of `target(ψ(t_k)) − reference(t_k)`.
pub fn warp_loss(reference: &Demonstration, target: &Demonstration, warp: &TimeWarp, weights: &[f64]) -> f64 {
    let h = reference.sample_rate();
    let n = reference.len().min(warp.len());
    (0..n)
        .map(|k| {
            let pos = warp.eval(k as f64 * h) / h;
            h * sample_error(reference, target, k, pos, weights)
        })
        .sum()
}

fn sample_error(reference: &Demonstration, target: &Demonstration, k: usize, pos: f64, weights: &[f64]) -> f64 {
    let r = &reference.samples()[k].values;
    let last = target.len() - 1;
    let pos = pos.clamp(0.0, last as f64);
    let j = (pos.floor() as usize).min(last);
    let w = pos - j as f64;
    let a = &target.samples()[j].values;
    let b = &target.samples()[(j + 1).min(last)].values;
    weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(c, wc)| {
            let e = a[c] + w * (b[c] - a[c]) - r[c];
            wc * e * e
        })
        .sum()
}

/// Warp from `reference` time to `target` time minimizing the weighted loss.
pub fn optimize_warp(
    reference: &Demonstration,
    target: &Demonstration,
    weights: &[f64],
    cfg: &WarpConfig,
) -> Result<TimeWarp> {
    if reference.channels() != target.channels() {
        return Err(Error::Schema(format!(
            "reference has {} channels, target has {}",
            reference.channels(),
            target.channels()
        )));
    }
    if (reference.sample_rate() - target.sample_rate()).abs() > 1e-9 {
        return Err(Error::Schema("reference and target sample rates differ".into()));
    }
    if weights.len() != reference.channels() || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Domain("alignment weights must be nonnegative, one per channel".into()));
    }
    let path = lattice_path(reference, target, weights, cfg)?;
    let q = cfg.subdivisions as f64;
    let h = reference.sample_rate();
    let raw: Vec<f64> = path.windows(2).map(|p| (p[1] - p[0]) as f64 / q).collect();
    let total: f64 = raw.iter().sum();
    let raw_warp = TimeWarp::clamped(raw.clone(), h);
    let budget = (1.0 + cfg.smoothing_tolerance) * warp_loss(reference, target, &raw_warp, weights) + 1e-15;
    let mut window = cfg.smoothing_window.max(1) | 1;
    while window > 1 {
        let smoothed = moving_average(&raw, window);
        let scale = total / smoothed.iter().sum::<f64>();
        let gradient = smoothed
            .into_iter()
            .map(|g| (g * scale).clamp(cfg.gradient_floor, cfg.gradient_ceiling))
            .collect();
        let warp = TimeWarp::clamped(gradient, h);
        if warp_loss(reference, target, &warp, weights) <= budget {
            return Ok(warp);
        }
        window -= 2;
    }
    Ok(raw_warp)
}

pub(crate) fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    let n = values.len();
    (0..n)
        .map(|k| {
            let a = k.saturating_sub(half);
            let b = (k + half + 1).min(n);
            values[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect()
}

/// Optimal lattice path: target column at every reference boundary `0..=n`.
fn lattice_path(
    reference: &Demonstration,
    target: &Demonstration,
    weights: &[f64],
    cfg: &WarpConfig,
) -> Result<Vec<usize>> {
    let q = cfg.subdivisions.max(1);
    let n = reference.len();
    let end = target.len() * q;
    let a_min = ((cfg.min_slope * q as f64).ceil() as usize).max(1);
    let a_max = (cfg.max_slope * q as f64).floor() as usize;
    let infeasible = || Error::Infeasible {
        min_slope: a_min as f64 / q as f64,
        max_slope: a_max as f64 / q as f64,
        reference_len: n,
        target_len: target.len(),
    };
    if a_max < a_min || a_max > u8::MAX as usize || n * a_min > end || n * a_max < end {
        return Err(infeasible());
    }

    let slope = end as f64 / n as f64;
    let band = ((cfg.band * end as f64).ceil() as usize).max(2 * a_max);
    let mut steps: Vec<usize> = (a_min..=a_max).collect();
    steps.sort_by(|a, b| {
        let da = (*a as f64 - slope).abs();
        let db = (*b as f64 - slope).abs();
        da.partial_cmp(&db).unwrap().then(a.cmp(b))
    });

    let range = |k: usize| -> (usize, usize) {
        let diag = (k as f64 * slope).round() as usize;
        let lo = (k * a_min)
            .max(end.saturating_sub((n - k) * a_max))
            .max(diag.saturating_sub(band));
        let hi = (k * a_max).min(end - (n - k) * a_min).min(diag + band);
        (lo, hi)
    };

    let inv_q = 1.0 / q as f64;
    let h = reference.sample_rate();
    let mut ranges = Vec::with_capacity(n + 1);
    let mut back: Vec<Vec<u8>> = Vec::with_capacity(n + 1);
    let (lo0, hi0) = range(0);
    if lo0 != 0 || hi0 < lo0 {
        return Err(infeasible());
    }
    ranges.push((0usize, 0usize));
    back.push(vec![0]);
    let mut prev = vec![h * sample_error(reference, target, 0, 0.0, weights)];

    for k in 1..=n {
        let (lo, hi) = if k == n { (end, end) } else { range(k) };
        if lo > hi {
            return Err(infeasible());
        }
        let (plo, phi) = ranges[k - 1];
        let mut cur = vec![f64::INFINITY; hi - lo + 1];
        let mut bp = vec![0u8; hi - lo + 1];
        for p in lo..=hi {
            let mut best = f64::INFINITY;
            let mut best_a = 0u8;
            for &a in &steps {
                if a > p || p - a < plo || p - a > phi {
                    continue;
                }
                let c = prev[p - a - plo];
                if c < best {
                    best = c;
                    best_a = a as u8;
                }
            }
            if best.is_finite() {
                let local = if k == n {
                    0.0
                } else {
                    h * sample_error(reference, target, k, p as f64 * inv_q, weights)
                };
                cur[p - lo] = best + local;
                bp[p - lo] = best_a;
            }
        }
        if cur.iter().all(|c| !c.is_finite()) {
            return Err(infeasible());
        }
        ranges.push((lo, hi));
        back.push(bp);
        prev = cur;
    }

    let mut path = vec![0usize; n + 1];
    path[n] = end;
    for k in (1..=n).rev() {
        let a = back[k][path[k] - ranges[k].0] as usize;
        path[k - 1] = path[k] - a;
    }
    debug_assert_eq!(path[0], 0);
    Ok(path)
}
