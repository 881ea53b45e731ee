//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use tandem::demo_io::Demonstration;
use tandem::warp::TimeWarp;

/// Target value at a fractional sample position, clamped to the ends.
fn target_at(target: &Demonstration, pos: f64, c: usize) -> f64 {
    let s = target.samples();
    let last = s.len() - 1;
    let pos = pos.clamp(0.0, last as f64);
    let j = (pos as usize).min(last);
    let j1 = (j + 1).min(last);
    let w = pos - j as f64;
    (1.0 - w) * s[j].values[c] + w * s[j1].values[c]
}

/// Exhaustive DP over every lattice column (no band, no tie preference).
/// Returns the optimal unsmoothed warp and its loss.
pub fn full_lattice_warp(
    reference: &Demonstration,
    target: &Demonstration,
    weights: &[f64],
    q: usize,
    min_slope: f64,
    max_slope: f64,
) -> Option<(TimeWarp, f64)> {
    let n = reference.len();
    let end = target.len() * q;
    let a_min = ((min_slope * q as f64).ceil() as usize).max(1);
    let a_max = (max_slope * q as f64).floor() as usize;
    let h = reference.sample_rate();
    let local = |k: usize, p: usize| -> f64 {
        if k == n {
            return 0.0;
        }
        let r = &reference.samples()[k].values;
        h * weights
            .iter()
            .enumerate()
            .map(|(c, w)| {
                let e = target_at(target, p as f64 / q as f64, c) - r[c];
                w * e * e
            })
            .sum::<f64>()
    };
    let mut cost = vec![vec![f64::INFINITY; end + 1]; n + 1];
    let mut from = vec![vec![usize::MAX; end + 1]; n + 1];
    cost[0][0] = local(0, 0);
    for k in 1..=n {
        for p in 0..=end {
            let mut best = f64::INFINITY;
            for a in a_min..=a_max.min(p) {
                let c = cost[k - 1][p - a];
                if c < best {
                    best = c;
                    from[k][p] = p - a;
                }
            }
            if best.is_finite() {
                cost[k][p] = best + local(k, p);
            }
        }
    }
    if !cost[n][end].is_finite() {
        return None;
    }
    let mut path = vec![end; n + 1];
    for k in (1..=n).rev() {
        path[k - 1] = from[k][path[k]];
    }
    let gradient: Vec<f64> = path.windows(2).map(|w| (w[1] - w[0]) as f64 / q as f64).collect();
    Some((TimeWarp::new(gradient, h).ok()?, cost[n][end]))
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let mut k = K15_WEIGHTS[7] * f(c);
    let mut g = G7_WEIGHTS[3] * f(c);
    for i in 0..7 {
        let x = r * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        k += K15_WEIGHTS[i] * s;
        if i % 2 == 1 {
            g += G7_WEIGHTS[i / 2] * s;
        }
    }
    (k * r, ((k - g) * r).abs())
}

/// Adaptive 7–15 Gauss–Kronrod quadrature; a panel is accepted once its
/// error estimate is below `density` times its width or at round-off level.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, density: f64, depth: u32) -> f64 {
    let (v, err) = gauss_kronrod(f, a, b);
    if err <= density * (b - a) || err <= 1e-15 * v.abs() || depth == 0 {
        return v;
    }
    let m = 0.5 * (a + b);
    integrate(f, a, m, density, depth - 1) + integrate(f, m, b, density, depth - 1)
}

/// Integral to a tolerance relative to a 64-panel first estimate.
pub fn integrate_rel(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    const PANELS: usize = 64;
    let w = (b - a) / PANELS as f64;
    let coarse: f64 = (0..PANELS)
        .map(|i| gauss_kronrod(f, a + i as f64 * w, a + (i + 1) as f64 * w).0.abs())
        .sum();
    let density = rel * coarse / (b - a);
    (0..PANELS)
        .map(|i| integrate(f, a + i as f64 * w, a + (i + 1) as f64 * w, density, 40))
        .sum()
}

/// `∫₀ˣ t^{a−1}(1−t)^{b−1} dt` for `x ≤ ½`. For `a < 1` the substitution
/// `t = s^{1/a}` removes the singularity at 0.
fn lower_beta_integral(x: f64, a: f64, b: f64) -> f64 {
    if a < 1.0 {
        let f = move |s: f64| (1.0 - s.powf(1.0 / a)).powf(b - 1.0) / a;
        integrate_rel(&f, 0.0, x.powf(a), 1e-12)
    } else {
        let f = move |t: f64| t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0);
        integrate_rel(&f, 0.0, x, 1e-12)
    }
}

/// Regularized incomplete beta by quadrature, normalized with its own
/// integrals rather than a gamma-function identity.
pub fn beta_cdf_quadrature(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let total = lower_beta_integral(0.5, a, b) + lower_beta_integral(0.5, b, a);
    if x <= 0.5 {
        lower_beta_integral(x, a, b) / total
    } else {
        1.0 - lower_beta_integral(1.0 - x, b, a) / total
    }
}

/// Deterministic smooth multichannel signal.
pub fn signal(n: usize, h: f64, phase: f64, warp: impl Fn(f64) -> f64) -> Demonstration {
    let rows = (0..n)
        .map(|k| {
            let t = warp(k as f64 * h);
            vec![(1.3 * t + phase).sin() + 0.2 * t, (0.7 * t).cos() * (0.4 * t + phase).sin()]
        })
        .collect();
    Demonstration::from_rows(rows, h).unwrap()
}

/// Feasible schedules on converged confidence maps of varied synthetic tasks.
pub mod schedules {
    use tandem::demo_io::{synthesize_task, SynthTaskSpec};
    use tandem::experiment::{build_models, ExperimentConfig, ModelBundle};
    use tandem::scheduler::{optimize_schedule, OptimizerConfig, Schedule, SchedulingProblem};

    pub struct Case {
        pub models: ModelBundle,
        pub problem: SchedulingProblem,
        pub schedule: Schedule,
    }

    fn spec(variant: u64) -> SynthTaskSpec {
        let base = SynthTaskSpec::default();
        match variant % 3 {
            0 => base,
            1 => SynthTaskSpec {
                passes: 3,
                need_passes: 2,
                transition_duration: 8.0,
                ..base
            },
            _ => SynthTaskSpec {
                sections_per_pass: 8,
                pass_duration: 10.0,
                transition_duration: 6.0,
                ..base
            },
        }
    }

    /// `tasks × per_task` accepted schedules. Confidence is high exactly
    /// where the ground truth needs no correction.
    pub fn accepted(tasks: u64, per_task: u64, samples: usize) -> Vec<Case> {
        let cfg = ExperimentConfig::default();
        let mut out = Vec::new();
        for t in 0..tasks {
            let task = synthesize_task(&spec(t), 100 + t).unwrap();
            let models = build_models(&task.set, &cfg).unwrap();
            let conf: Vec<bool> = task.need.need.iter().map(|n| !n).collect();
            let problem = SchedulingProblem::new(models.bounds.clone(), conf, task.set.sample_rate()).unwrap();
            for s in 0..per_task {
                let opt = OptimizerConfig {
                    samples,
                    rng_seed: 1000 * t + s,
                    ..OptimizerConfig::default()
                };
                let best = optimize_schedule(&problem, &opt, None).unwrap();
                assert!(problem.is_feasible(&best.schedule));
                out.push(Case {
                    models: models.clone(),
                    problem: problem.clone(),
                    schedule: best.schedule,
                });
            }
        }
        out
    }
}
