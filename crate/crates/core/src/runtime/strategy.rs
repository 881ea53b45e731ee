//! Per-step timing rules shared by the simulator and the margin check.
//!
//! Agent times are positions on the agent's scheduled global timeline: an
//! increment of `Δt_s` means the agent advanced exactly as scheduled, `F·Δt_s`
//! is the fastest and `S·Δt_s` the slowest step the demonstrations allow.

use crate::error::{Error, Result};

/// Speed factors of an agent at its current reference step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Speed {
    /// `F = ψ̇_E / ψ̇min`, at least 1 for admissible schedules.
    pub fast: f64,
    /// `S = ψ̇_E / ψ̇max`, at most 1 for admissible schedules.
    pub slow: f64,
}

impl Speed {
    pub const NOMINAL: Speed = Speed { fast: 1.0, slow: 1.0 };

    pub fn new(fast: f64, slow: f64) -> Self {
        Self { fast, slow }
    }
}

pub fn speed_factors(scheduled: f64, min_gradient: f64, max_gradient: f64) -> Speed {
    Speed {
        fast: scheduled / min_gradient,
        slow: scheduled / max_gradient,
    }
}

/// Response of a high-confidence agent with deviation `ΔT_i = t_i − t_other`:
/// slowest when ahead, closing the gap exactly when reachable, else fastest.
pub fn response_step(delta: f64, speed: Speed, dt: f64) -> f64 {
    let need = -delta;
    if need < speed.slow * dt {
        speed.slow * dt
    } else if need < speed.fast * dt {
        need
    } else {
        speed.fast * dt
    }
}

/// Both agents high-confidence: `a` is ahead (`t_a ≥ t_b`). Returns `(δt_a, δt_b)`.
pub fn high_conf_step(t_a: f64, t_b: f64, a: Speed, b: Speed, dt: f64) -> Result<(f64, f64)> {
    let delta = t_a - t_b;
    if !(delta >= 0.0) {
        return Err(Error::Contract(format!(
            "agent a must be ahead: t_a = {t_a}, t_b = {t_b}"
        )));
    }
    let reach = a.fast * dt + delta;
    if b.fast * dt >= reach {
        Ok((a.fast * dt, reach))
    } else {
        let db = b.fast * dt;
        Ok((response_step(delta - db, a, dt), db))
    }
}

/// [`high_conf_step`] with the roles picked from the current times.
/// Returns increments in the argument order.
pub fn coordinate(t_1: f64, t_2: f64, s_1: Speed, s_2: Speed, dt: f64) -> (f64, f64) {
    if t_1 - t_2 > 0.0 {
        high_conf_step(t_1, t_2, s_1, s_2, dt).expect("ordered by construction")
    } else {
        let (d2, d1) = high_conf_step(t_2, t_1, s_2, s_1, dt).expect("ordered by construction");
        (d1, d2)
    }
}
