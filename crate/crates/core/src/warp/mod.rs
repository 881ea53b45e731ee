//! Monotone time warps represented by their gradient on a uniform grid.
//!
//! A warp with gradient entries `g[0..n]` on step `h` maps the domain
//! `[0, n·h]` to `[0, |ψ|]` with `ψ(k·h) = h·Σ_{j<k} g[j]` and linear
//! interpolation in between. Entry `k` governs the interval `[k·h, (k+1)·h)`.

mod align;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::align::{optimize_warp, warp_loss, WarpConfig};

pub const GRADIENT_FLOOR: f64 = 1e-3;
pub const GRADIENT_CEILING: f64 = 1e3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "WarpRepr", into = "WarpRepr")]
pub struct TimeWarp {
    gradient: Vec<f64>,
    step: f64,
    knots: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WarpRepr {
    step: f64,
    gradient: Vec<f64>,
}

impl From<WarpRepr> for TimeWarp {
    fn from(r: WarpRepr) -> Self {
        Self::clamped(r.gradient, r.step)
    }
}

impl From<TimeWarp> for WarpRepr {
    fn from(w: TimeWarp) -> Self {
        WarpRepr {
            step: w.step,
            gradient: w.gradient,
        }
    }
}

impl PartialEq for TimeWarp {
    fn eq(&self, other: &Self) -> bool {
        self.step == other.step && self.gradient == other.gradient
    }
}

impl TimeWarp {
    pub fn new(gradient: Vec<f64>, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::Domain(format!("warp step must be positive, got {step}")));
        }
        if gradient.is_empty() {
            return Err(Error::Domain("warp needs at least one gradient entry".into()));
        }
        if let Some((k, g)) = gradient
            .iter()
            .enumerate()
            .find(|(_, g)| !(**g >= GRADIENT_FLOOR) || !g.is_finite())
        {
            return Err(Error::Domain(format!(
                "warp gradient {g} at step {k} is below the floor {GRADIENT_FLOOR}"
            )));
        }
        Ok(Self::build(gradient, step))
    }

    /// Clamps every entry into `[GRADIENT_FLOOR, GRADIENT_CEILING]`.
    pub fn clamped(gradient: Vec<f64>, step: f64) -> Self {
        let gradient = gradient
            .into_iter()
            .map(|g| {
                if g.is_nan() {
                    GRADIENT_FLOOR
                } else {
                    g.clamp(GRADIENT_FLOOR, GRADIENT_CEILING)
                }
            })
            .collect();
        Self::build(gradient, step)
    }

    pub fn identity(n: usize, step: f64) -> Self {
        Self::build(vec![1.0; n.max(1)], step)
    }

    pub fn constant(n: usize, gradient: f64, step: f64) -> Result<Self> {
        Self::new(vec![gradient; n.max(1)], step)
    }

    fn build(gradient: Vec<f64>, step: f64) -> Self {
        let mut knots = Vec::with_capacity(gradient.len() + 1);
        let mut acc = 0.0;
        knots.push(0.0);
        for g in &gradient {
            acc += g * step;
            knots.push(acc);
        }
        Self {
            gradient,
            step,
            knots,
        }
    }

    pub fn gradient(&self) -> &[f64] {
        &self.gradient
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.gradient.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gradient.is_empty()
    }

    /// Extent of the domain, `n·h`.
    pub fn domain(&self) -> f64 {
        self.gradient.len() as f64 * self.step
    }

    /// `|ψ|`: the image length.
    pub fn length(&self) -> f64 {
        self.knots[self.gradient.len()]
    }

    /// `ψ` at grid boundaries `0..=n`.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn entry(&self, t: f64) -> usize {
        ((t / self.step).floor().max(0.0) as usize).min(self.gradient.len() - 1)
    }

    /// Gradient governing domain time `t` (clamped to the domain).
    pub fn gradient_at(&self, t: f64) -> f64 {
        self.gradient[self.entry(t)]
    }

    /// `ψ(t)`, clamped to `[0, |ψ|]` outside the domain.
    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t >= self.domain() {
            return self.length();
        }
        let k = self.entry(t);
        self.knots[k] + (t - k as f64 * self.step) * self.gradient[k]
    }

    /// `ψ⁻¹(s)`, clamped to `[0, n·h]` outside the image.
    pub fn eval_inverse(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= self.length() {
            return self.domain();
        }
        let k = match self.knots.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(k) => k,
            Err(k) => k - 1,
        }
        .min(self.gradient.len() - 1);
        k as f64 * self.step + (s - self.knots[k]) / self.gradient[k]
    }

    /// Inverse warp over `[0, |ψ|]` on the step nearest `h` that divides `|ψ|`.
    pub fn invert(&self) -> TimeWarp {
        let length = self.length();
        let n = ((length / self.step).round() as usize).max(1);
        let step = length / n as f64;
        let mut gradient = Vec::with_capacity(n);
        let mut prev = 0.0;
        for j in 1..=n {
            let next = if j == n {
                self.domain()
            } else {
                self.eval_inverse(j as f64 * step)
            };
            gradient.push((next - prev) / step);
            prev = next;
        }
        Self::clamped(gradient, step)
    }

    /// Debug dump as `step,gradient` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,gradient\n");
        for (k, g) in self.gradient.iter().enumerate() {
            out.push_str(&format!("{k},{g}\n"));
        }
        out
    }
}

/// Pointwise envelope of demonstration warp gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpBounds {
    pub min_gradient: Vec<f64>,
    pub max_gradient: Vec<f64>,
    pub mean_gradient: Vec<f64>,
}

impl WarpBounds {
    pub fn len(&self) -> usize {
        self.mean_gradient.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_gradient.is_empty()
    }

    /// Bounds that pin every step to a single gradient.
    pub fn rigid(gradient: &[f64]) -> Self {
        Self {
            min_gradient: gradient.to_vec(),
            max_gradient: gradient.to_vec(),
            mean_gradient: gradient.to_vec(),
        }
    }
}

pub fn gradient_bounds(warps: &[TimeWarp]) -> Result<WarpBounds> {
    if warps.len() < 2 {
        return Err(Error::Alignment(format!(
            "gradient bounds need at least 2 warps, got {}",
            warps.len()
        )));
    }
    let n = warps[0].len();
    if let Some((i, w)) = warps.iter().enumerate().find(|(_, w)| w.len() != n) {
        return Err(Error::Alignment(format!(
            "warp {i} covers {} reference steps, expected {n}",
            w.len()
        )));
    }
    let count = warps.len() as f64;
    let mut min_gradient = vec![f64::INFINITY; n];
    let mut max_gradient = vec![f64::NEG_INFINITY; n];
    let mut mean_gradient = vec![0.0; n];
    for w in warps {
        for (k, &g) in w.gradient().iter().enumerate() {
            min_gradient[k] = min_gradient[k].min(g);
            max_gradient[k] = max_gradient[k].max(g);
            mean_gradient[k] += g;
        }
    }
    for k in 0..n {
        mean_gradient[k] = (mean_gradient[k] / count).clamp(min_gradient[k], max_gradient[k]);
    }
    Ok(WarpBounds {
        min_gradient,
        max_gradient,
        mean_gradient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eval_basics() {
        let w = TimeWarp::constant(50, 2.0, 0.2).unwrap();
        assert_eq!(w.eval(0.0), 0.0);
        assert!((w.eval(3.0) - 6.0).abs() < 1e-12);
        assert!((w.eval(25.0) - w.length()).abs() < 1e-12);
        assert!((w.length() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn identity_inverts_to_identity() {
        let w = TimeWarp::identity(40, 0.2);
        let inv = w.invert();
        assert_eq!(inv.len(), 40);
        assert!(inv.gradient().iter().all(|g| (g - 1.0).abs() < 1e-9));
    }

    #[test]
    fn constant_slope_inverts_to_reciprocal() {
        let w = TimeWarp::constant(50, 2.0, 0.2).unwrap();
        let inv = w.invert();
        assert_eq!(inv.len(), 100);
        assert!((inv.domain() - 20.0).abs() < 1e-9);
        assert!(inv.gradient().iter().all(|g| (g - 0.5).abs() < 1e-9));
    }

    #[test]
    fn rejects_nonpositive_gradient() {
        assert!(TimeWarp::new(vec![1.0, 0.0], 0.2).is_err());
        assert!(TimeWarp::new(vec![1.0, 1e-4], 0.2).is_err());
    }

    #[test]
    fn bounds_pointwise() {
        let step = 0.2;
        let ws = vec![
            TimeWarp::new(vec![0.5, 1.0], step).unwrap(),
            TimeWarp::new(vec![1.0, 1.0], step).unwrap(),
            TimeWarp::new(vec![2.0, 1.0], step).unwrap(),
        ];
        let b = gradient_bounds(&ws).unwrap();
        assert_eq!(b.min_gradient[0], 0.5);
        assert_eq!(b.max_gradient[0], 2.0);
        assert!((b.mean_gradient[0] - 3.5 / 3.0).abs() < 1e-12);
        assert_eq!(b.mean_gradient[1], 1.0);
    }

    #[test]
    fn bounds_need_two_equal_warps() {
        let a = TimeWarp::identity(3, 0.2);
        assert!(matches!(gradient_bounds(std::slice::from_ref(&a)), Err(Error::Alignment(_))));
        let b = TimeWarp::identity(4, 0.2);
        assert!(matches!(gradient_bounds(&[a, b]), Err(Error::Alignment(_))));
    }

    fn warp_strategy() -> impl Strategy<Value = TimeWarp> {
        prop::collection::vec(1.0f64 / 3.0..3.0, 5..120).prop_map(|g| TimeWarp::new(g, 0.2).unwrap())
    }

    proptest! {
        #[test]
        fn inverse_composes_to_identity(w in warp_strategy()) {
            let inv = w.invert();
            for k in 0..=w.len() {
                let t = k as f64 * w.step();
                let back = inv.eval(w.eval(t));
                prop_assert!((back - t).abs() <= w.step() + 1e-9);
                prop_assert!((w.eval_inverse(w.eval(t)) - t).abs() <= 1e-9);
            }
        }

        #[test]
        fn eval_strictly_monotone(w in warp_strategy()) {
            for k in 1..=w.len() {
                prop_assert!(w.knots()[k] > w.knots()[k - 1]);
            }
        }
    }
}
