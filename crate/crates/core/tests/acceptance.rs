//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tandem::behavior::OperatorInput;
use tandem::confidence::{beta_cdf, ConfidenceModel, ConfidenceParams};
use tandem::demo_io::{synthesize_task, SynthTaskSpec};
use tandem::error::Error;
use tandem::experiment::{build_models, run_experiment, ExperimentConfig, ExperimentResult};
use tandem::runtime::{
    high_conf_step, response_step, simulate_execution, speed_factors, Adversary, AdversaryMode, Speed,
};
use tandem::warp::{optimize_warp, warp_loss, TimeWarp, WarpConfig};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn convergence(result: &ExperimentResult) -> Check {
    let means: Vec<f64> = result.summary.per_iteration.iter().map(|s| s.scheduled_total_time_mean).collect();
    let (first, last) = (means[0], *means.last().unwrap());
    for (i, w) in means.windows(2).enumerate() {
        ensure(w[1] <= w[0] * (1.0 + 1e-12), || format!("mean rose at iteration {}: {} -> {}", i + 1, w[0], w[1]))?;
    }
    for t in &result.trials {
        for w in t.records.windows(2) {
            ensure(w[1].scheduled_total_time <= w[0].scheduled_total_time * (1.0 + 1e-12), || {
                format!("trial {} rose at iteration {}", t.trial, w[1].iteration)
            })?;
        }
    }
    let ratio = last / first;
    ensure(ratio <= 0.65, || format!("final/initial = {ratio:.4}"))?;
    Ok(format!("mean T_total {first:.3} s -> {last:.3} s, ratio {ratio:.3}"))
}

fn confidence_convergence(result: &ExperimentResult) -> Check {
    let truth = result.summary.ground_truth_high_conf_fraction;
    let finals = &result.summary.final_high_conf_fraction;
    ensure(finals.len() == result.trials.len(), || "missing trial results".into())?;
    for (t, f) in finals.iter().enumerate() {
        ensure((f - truth).abs() <= 0.05, || format!("trial {t}: {f:.4} vs ground truth {truth:.4}"))?;
    }
    let worst = finals.iter().map(|f| (f - truth).abs()).fold(0.0, f64::max);
    Ok(format!("ground truth {truth:.4}, worst deviation {:.2} pp", 100.0 * worst))
}

fn schedule_shape(result: &ExperimentResult) -> Check {
    let mut iterations = 0;
    for t in &result.trials {
        ensure(t.error.is_none(), || format!("trial {} failed: {:?}", t.trial, t.error))?;
        ensure(t.reports.iter().all(|r| r.feasible), || format!("trial {} kept an infeasible schedule", t.trial))?;
        for r in &t.records {
            ensure(r.overlap_violations == 0, || {
                format!("trial {} iteration {}: {} violations", t.trial, r.iteration, r.overlap_violations)
            })?;
            iterations += 1;
        }
    }
    ensure(result.summary.overlap_violations == 0, || "summary reports violations".into())?;
    Ok(format!("0 violations over {iterations} iterations"))
}

fn margin_soundness() -> Check {
    let cases = common::schedules::accepted(10, 5, 500);
    ensure(cases.len() == 50, || format!("{} schedules", cases.len()))?;
    let overlapping = cases
        .iter()
        .filter(|c| c.schedule.tau < c.schedule.warps[0].length() - 1e-9)
        .count();
    let mut violations = 0;
    for (c, case) in cases.iter().enumerate() {
        for r in 0..1000u64 {
            let mode = match r {
                0 => AdversaryMode::WorstCase { fast_agent: 0 },
                1 => AdversaryMode::WorstCase { fast_agent: 1 },
                r if r % 2 == 0 => AdversaryMode::Uniform,
                _ => AdversaryMode::Extremes,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(c as u64);
            rng.set_stream(r);
            let sim = simulate_execution(&case.problem, &case.schedule, &case.models.behavior, &mut Adversary::new(mode, rng))
                .map_err(|e| format!("schedule {c} run {r}: {e}"))?;
            violations += sim.overlap_violations;
        }
    }
    ensure(violations == 0, || format!("{violations} simultaneous-low steps"))?;
    Ok(format!("50 schedules ({overlapping} overlapping) x 1000 runs, 0 violations"))
}

fn bayesian() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let x = if i % 4 == 0 { 0.5 } else { rng.gen_range(0.0..1.0) };
        let a = rng.gen_range(0.05f64.ln()..60f64.ln()).exp();
        let b = rng.gen_range(0.05f64.ln()..60f64.ln()).exp();
        let got = beta_cdf(x, a, b).map_err(|e| e.to_string())?;
        worst = worst.max((got - common::beta_cdf_quadrature(x, a, b)).abs());
    }
    ensure(worst <= 1e-8, || format!("beta_cdf error {worst:e}"))?;
    let params = ConfidenceParams::default();
    let model = ConfidenceModel::new(&[0.0], 0.2, &params).map_err(|e| e.to_string())?;
    let (alpha, beta) = (3.99991000126665e-5, 3.99991000139998);
    ensure((model.alpha0[0] - alpha).abs() <= 1e-3 * alpha && (model.beta0[0] - beta).abs() <= 1e-3 * beta, || {
        format!("prior ({}, {})", model.alpha0[0], model.beta0[0])
    })?;
    let mut sym = ConfidenceModel::new(&[10.0], 0.2, &params).map_err(|e| e.to_string())?;
    ensure(!sym.conf(0), || "symmetric prior is high".into())?;
    for _ in 0..20 {
        sym.record_execution(&[(0.0, false)]).map_err(|e| e.to_string())?;
    }
    ensure(sym.conf(0), || "20 zero observations stay low".into())?;
    Ok(format!("beta_cdf worst error {worst:.1e} over 10^4 draws, prior and conf cases hold"))
}

fn warping() -> Check {
    const H: f64 = 0.2;
    let cfg = WarpConfig::default();
    let weights = [1.0, 1.0];
    let reference = common::signal(100, H, 0.4, |t| t);
    for g in [0.5, 1.0, 2.0] {
        let target = common::signal((g * 100.0f64).round() as usize, H, 0.4, |s| s / g);
        let w = optimize_warp(&reference, &target, &weights, &cfg).map_err(|e| e.to_string())?;
        let mean = w.gradient().iter().sum::<f64>() / w.len() as f64;
        ensure((mean - g).abs() <= 0.05 * g, || format!("gradient {g} recovered as {mean}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_gap: f64 = 0.0;
    for _ in 0..25 {
        let n = rng.gen_range(20..=100);
        let pieces = rng.gen_range(1..=4);
        let levels: Vec<f64> = (0..pieces).map(|_| rng.gen_range(1.0 / 3.0..3.0)).collect();
        let truth = TimeWarp::new((0..n).map(|k| levels[k * pieces / n]).collect(), H).unwrap();
        let phase = rng.gen_range(0.0..3.0);
        let reference = common::signal(n, H, phase, |t| t);
        let target = common::signal((truth.length() / H).round() as usize, H, phase, |s| truth.eval_inverse(s));
        let ours = optimize_warp(&reference, &target, &weights, &cfg).map_err(|e| e.to_string())?;
        let (oracle, _) =
            common::full_lattice_warp(&reference, &target, &weights, cfg.subdivisions, cfg.min_slope, cfg.max_slope)
                .ok_or("oracle found no path")?;
        let o = warp_loss(&reference, &target, &oracle, &weights);
        worst_gap = worst_gap.max((warp_loss(&reference, &target, &ours, &weights) - o) / o.max(1e-12));
    }
    ensure(worst_gap <= 0.10, || format!("DP gap {worst_gap:.3}"))?;
    let mut worst_inv: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(5..200);
        let w = TimeWarp::new((0..n).map(|_| rng.gen_range(0.25..4.0)).collect(), H).unwrap();
        let inv = w.invert();
        for k in 0..=4 * n {
            let t = k as f64 * H / 4.0;
            worst_inv = worst_inv.max((inv.eval(w.eval(t)) - t).abs());
        }
    }
    ensure(worst_inv <= H, || format!("inverse composition error {worst_inv}"))?;
    Ok(format!("DP gap {:.1}%, inverse error {worst_inv:.3} s", 100.0 * worst_gap))
}

fn corrections_safety() -> Check {
    const LEVELS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let cfg = ExperimentConfig::default();
    let mut evaluated = 0usize;
    for seed in 0..3 {
        let task = synthesize_task(&SynthTaskSpec::default(), seed).map_err(|e| e.to_string())?;
        let model = build_models(&task.set, &cfg).map_err(|e| e.to_string())?.behavior;
        let g = model.gradient_channel();
        let m = model.components();
        for k in 0..model.len() {
            let (lo, hi) = (model.bounds.min_gradient[k], model.bounds.max_gradient[k]);
            for code in 0..LEVELS.len().pow(m as u32) {
                let u: Vec<f64> = (0..m).map(|c| LEVELS[code / LEVELS.len().pow(c as u32) % LEVELS.len()]).collect();
                let zero = u.iter().all(|v| *v == 0.0);
                let x = model.apply_correction(k, &OperatorInput { u }).map_err(|e| e.to_string())?;
                ensure(lo <= x[g] && x[g] <= hi, || format!("step {k}: gradient {} outside [{lo}, {hi}]", x[g]))?;
                if zero {
                    ensure(x == model.mean[k], || format!("step {k}: u = 0 changed the mean"))?;
                }
                evaluated += 1;
            }
        }
    }
    Ok(format!("{evaluated} corrected states in bounds, u = 0 exact"))
}

fn runtime_rules() -> Check {
    const DT: f64 = 0.2;
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let mut examples = 0;
    let mut check = |ok: bool, name: &str| -> Result<(), String> {
        examples += 1;
        ensure(ok, || format!("example failed: {name}"))
    };
    check(speed_factors(3.0, 0.5, 4.0).fast == 6.0, "F = 6")?;
    check(speed_factors(1.3, 1.3, 1.3) == Speed::new(1.0, 1.0), "no flexibility")?;
    let sp = Speed::new(2.0, 0.5);
    check(close(response_step(0.2, sp, DT), 0.1), "ahead runs slowest")?;
    check(close(response_step(-0.15, sp, DT), 0.15), "exact close")?;
    check(close(response_step(-1.0, sp, DT), 0.4), "fastest")?;
    check(matches!(high_conf_step(0.0, 0.0, sp, sp, DT), Ok((a, b)) if a == 0.4 && b == 0.4), "symmetric")?;
    let (a, b) = high_conf_step(1.1, 1.0, Speed::new(1.0, 0.5), sp, DT).map_err(|e| e.to_string())?;
    check(close(a, 0.2) && close(b, 0.3) && close(1.1 + a, 1.0 + b), "catch-up")?;
    let (a, b) = high_conf_step(1.0, 0.0, sp, sp, DT).map_err(|e| e.to_string())?;
    check(b == 0.4 && a == 0.5 * DT, "ahead response")?;
    check(matches!(high_conf_step(0.0, 1.0, sp, sp, DT), Err(Error::Contract(_))), "contract")?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let speed = |rng: &mut ChaCha8Rng| Speed::new(rng.gen_range(1.0..6.0), rng.gen_range(0.1..=1.0));
    for i in 0..100_000 {
        let t_b = rng.gen_range(0.0..50.0);
        let delta = match i % 3 {
            0 => 0.0,
            1 => rng.gen_range(0.0..0.05),
            _ => rng.gen_range(0.0..2.0),
        };
        let (sa, sb, dt) = (speed(&mut rng), speed(&mut rng), rng.gen_range(0.01..0.5));
        let (da, db) = high_conf_step(t_b + delta, t_b, sa, sb, dt).map_err(|e| e.to_string())?;
        let inside = |d: f64, s: Speed| d >= s.slow * dt - 1e-12 && d <= s.fast * dt + 1e-12;
        ensure(inside(da, sa) && inside(db, sb), || format!("state {i}: increments ({da}, {db}) out of limits"))?;
        ensure(t_b + db <= t_b + delta + da + 1e-12 * (1.0 + t_b), || format!("state {i}: behind agent overtook"))?;
    }
    Ok(format!("{examples} examples exact, 10^5 random states within limits"))
}

fn determinism(cfg: &ExperimentConfig, first: &ExperimentResult) -> Check {
    let again = run_experiment(cfg).map_err(|e| e.to_string())?;
    let (a, b) = (first.records_csv(), again.records_csv());
    ensure(a.as_bytes() == b.as_bytes(), || "records.csv differs between runs".into())?;
    Ok(format!("{} bytes identical", a.len()))
}

fn report(n: usize, name: &str, check: Check, failures: &mut usize) {
    match check {
        Ok(detail) => println!("criterion {n} PASS {name}: {detail}"),
        Err(detail) => {
            *failures += 1;
            println!("criterion {n} FAIL {name}: {detail}");
        }
    }
}

fn main() -> ExitCode {
    let cfg = ExperimentConfig::default();
    let start = Instant::now();
    let result = run_experiment(&cfg);
    let elapsed = start.elapsed().as_secs_f64();
    let mut failures = 0;
    match &result {
        Ok(r) => {
            report(1, "convergence", convergence(r).map(|d| format!("{d}, {elapsed:.0} s")), &mut failures);
            report(2, "confidence convergence", confidence_convergence(r), &mut failures);
            report(3, "schedule shape", schedule_shape(r), &mut failures);
        }
        Err(e) => {
            for (n, name) in [(1, "convergence"), (2, "confidence convergence"), (3, "schedule shape")] {
                report(n, name, Err(format!("experiment failed: {e}")), &mut failures);
            }
        }
    }
    report(4, "margin soundness", margin_soundness(), &mut failures);
    report(5, "bayesian machinery", bayesian(), &mut failures);
    report(6, "warping", warping(), &mut failures);
    report(7, "corrections safety", corrections_safety(), &mut failures);
    report(8, "runtime rules", runtime_rules(), &mut failures);
    let det = match &result {
        Ok(r) => determinism(&cfg, r),
        Err(e) => Err(format!("experiment failed: {e}")),
    };
    report(9, "determinism", det, &mut failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
