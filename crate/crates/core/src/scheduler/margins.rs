//! Worst-case margin between consecutive low-confidence regions.
//!
//! Regions are maximal runs of cells where some agent is low-confidence on
//! the dilated cell map. A change of owner between adjacent cells ends one
//! region and starts the next. For every pair of consecutive regions owned
//! by different agents, a walk from `τ` advances the current-region agent as
//! fast and the previous-region agent as slow as their low-confidence spans
//! permit, with the other agent responding, and requires the previous region
//! to be passed before the current one is reached.
//!
//! The walk trajectory depends only on which agent plays which role, so one
//! walk per role assignment answers every pair.

use super::{CellMap, Schedule, SchedulingProblem};
use crate::runtime::{coordinate, response_step};

const MAX_WALK_STEPS: usize = 10_000_000;

struct Pair {
    prev: usize,
    prev_end: f64,
    cur: usize,
    cur_start: f64,
}

pub(super) fn sufficient_margins_with(problem: &SchedulingProblem, schedule: &Schedule, map: &CellMap) -> bool {
    let dt = problem.step;
    let mut pairs = Vec::new();
    let mut prev_owner: Option<usize> = None;
    let mut last_region: Option<(usize, f64)> = None;
    for c in 0..map.cells() {
        let owner = if !map.high[0][c] {
            Some(0)
        } else if !map.high[1][c] {
            Some(1)
        } else {
            None
        };
        let t = c as f64 * dt;
        if let Some(prev) = prev_owner.filter(|_| prev_owner != owner) {
            last_region = Some((prev, t - dt));
        }
        if let Some(cur) = owner {
            if prev_owner != owner {
                if let Some((prev, prev_end)) = last_region {
                    if prev != cur && prev_end > schedule.tau {
                        pairs.push(Pair {
                            prev,
                            prev_end,
                            cur,
                            cur_start: t,
                        });
                    }
                }
            }
        }
        prev_owner = owner;
    }

    for roles in [(0usize, 1usize), (1, 0)] {
        let relevant: Vec<&Pair> = pairs.iter().filter(|p| (p.prev, p.cur) == roles).collect();
        if relevant.is_empty() {
            continue;
        }
        let walk = worst_case_walk(problem, schedule, map, roles.0, roles.1, &relevant);
        for p in relevant {
            let reach_prev = walk.iter().position(|&(tp, _)| tp >= p.prev_end);
            let reach_cur = walk.iter().position(|&(_, tc)| tc >= p.cur_start);
            match (reach_prev, reach_cur) {
                (Some(a), Some(b)) if a < b => {}
                (Some(_), None) => {}
                _ => return false,
            }
        }
    }
    true
}

/// `(t_p, t_c)` after each step of the worst-case walk starting at `τ`.
fn worst_case_walk(
    problem: &SchedulingProblem,
    schedule: &Schedule,
    map: &CellMap,
    prev: usize,
    cur: usize,
    pairs: &[&Pair],
) -> Vec<(f64, f64)> {
    let dt = problem.step;
    let bounds = &problem.bounds;
    let stop_p = pairs.iter().map(|p| p.prev_end).fold(f64::NEG_INFINITY, f64::max);
    let end_p = schedule.end(prev);
    let end_c = schedule.end(cur);
    let is_high = |agent: usize, t: f64| t >= schedule.end(agent) || map.is_high(agent, t);

    let (mut tp, mut tc) = (schedule.tau, schedule.tau);
    let mut out = Vec::new();
    for _ in 0..MAX_WALK_STEPS {
        let (hc, hp) = (is_high(cur, tc), is_high(prev, tp));
        let sc = schedule.speed(cur, tc, bounds);
        let sp = schedule.speed(prev, tp, bounds);
        if !hc {
            tc += sc.fast * dt;
            tp += response_step(tp - tc, sp, dt);
        } else if !hp {
            tp += sp.slow * dt;
            tc += response_step(tc - tp, sc, dt);
        } else {
            let (dc, dp) = coordinate(tc, tp, sc, sp, dt);
            tp += dp;
            tc += dc;
        }
        out.push((tp, tc));
        if tp >= stop_p || tp >= end_p || tc >= end_c {
            break;
        }
    }
    out
}
