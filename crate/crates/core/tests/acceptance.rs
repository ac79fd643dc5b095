//! Acceptance suite. Every criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use densbranch::experiments::{
    recover_z0, verify_early_phase, verify_fixed_time, verify_main, verify_shifted_limit,
    verify_sublog, EarlyPhaseParams, ExperimentReport, FixedTimeParams, IntervalParams,
    LimitParams, RecoveryMode, SublogParams, Z0Estimate,
};
use densbranch::schroeder::{
    compute_h, h_eval, min_slope_near_origin, origin_bound, schroeder_residual, IteratedMap,
    SchroederH, DEFAULT_KNOTS,
};
use densbranch::simulator::{
    replicate, simulate_coupled_replicate, GenerationIndex, LambdaSpec, Observable, SimConfig,
    SimMode,
};
use densbranch::wlimit::{sample_w, values};
use densbranch::{stats, OffspringLaw};

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

fn bh(a: f64, b: f64) -> OffspringLaw {
    OffspringLaw::beverton_holt_poisson(a, b).unwrap()
}

fn bs(p0: f64, beta: f64) -> OffspringLaw {
    OffspringLaw::binary_split(p0, beta).unwrap()
}

/// Built-in law instances with the `h` domain used for each.
fn law_matrix() -> Vec<(&'static str, OffspringLaw, f64)> {
    vec![
        ("beverton_holt(2,1)", bh(2.0, 1.0), 2.0),
        ("beverton_holt(3,0.5)", bh(3.0, 0.5), 12.0),
        ("beverton_holt(1.5,2)", bh(1.5, 2.0), 0.5),
        ("binary_split(0.5,1)", bs(0.5, 1.0), 5.0),
        ("binary_split(1,1)", bs(1.0, 1.0), 8.0),
        ("binary_split(0.8,2)", bs(0.8, 2.0), 5.0),
    ]
}

fn verdict_ok(report: &ExperimentReport, name: &str) -> bool {
    report.verdict(name).is_some_and(|v| v.passed())
}

fn verdict_line(report: &ExperimentReport, names: &[&str]) -> String {
    names
        .iter()
        .map(|n| match report.verdict(n) {
            Some(v) => format!("{n}={:?} ({})", v.status, v.detail),
            None => format!("{n}=missing"),
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Closed-form Beverton-Holt Schröder limit `x / (1 + b x / (a - 1))`.
fn bh_h(a: f64, b: f64, x: f64) -> f64 {
    x / (1.0 + b * x / (a - 1.0))
}

fn criterion_1() -> Outcome {
    let law = bh(2.0, 1.0);
    let start = Instant::now();
    let h = compute_h(&IteratedMap::limit(&law), 2.0, DEFAULT_KNOTS, 1e-8).unwrap();
    let elapsed = start.elapsed();
    let err = (0..=20_000)
        .map(|i| {
            let x = 2.0 * i as f64 / 20_000.0;
            (h_eval(&h, x).unwrap() - bh_h(2.0, 1.0, x)).abs()
        })
        .fold(0.0, f64::max);
    outcome(
        err < 1e-6 && elapsed < Duration::from_secs(1),
        format!("sup error {err:.3e}, runtime {elapsed:?}"),
    )
}

fn tables() -> Vec<(&'static str, OffspringLaw, SchroederH)> {
    law_matrix()
        .into_iter()
        .map(|(name, law, x_max)| {
            let h = compute_h(&IteratedMap::limit(&law), x_max, DEFAULT_KNOTS, 1e-9)
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, law, h)
        })
        .collect()
}

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (name, law, h) in tables() {
        let r = schroeder_residual(&h, &IteratedMap::limit(&law)).unwrap();
        worst = worst.max(r);
        detail.push(format!("{name} {r:.1e}"));
    }
    outcome(worst < 1e-6, detail.join(", "))
}

/// Independent check: `f_n(x / a^n)` from the mean function alone.
fn criterion_3() -> Outcome {
    let mut violations = 0usize;
    let mut detail = Vec::new();
    for (name, law, x_max) in law_matrix() {
        let a = law.offspring_mean(0.0, f64::INFINITY);
        let f = |x: f64| x * law.offspring_mean(x, f64::INFINITY);
        let built = compute_h(&IteratedMap::limit(&law), x_max, DEFAULT_KNOTS, 1e-9).is_ok();
        let mut v = usize::from(!built);
        for i in 0..DEFAULT_KNOTS {
            let x = x_max * i as f64 / (DEFAULT_KNOTS - 1) as f64;
            let mut prev = x;
            for n in 1..=60 {
                let cur = (0..n).fold(x / a.powi(n), |y, _| f(y));
                if cur > prev * (1.0 + 1e-12) + 1e-300 {
                    v += 1;
                }
                prev = cur;
            }
        }
        violations += v;
        detail.push(format!("{name} {v}"));
    }
    outcome(
        violations == 0,
        format!("violations: {}", detail.join(", ")),
    )
}

fn criterion_4() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, law, h) in tables() {
        let bound = origin_bound(&law, 1.0);
        let floor = (-law.malthusian()).exp() - 1e-3;
        match min_slope_near_origin(&h, bound.window) {
            Some(s) => {
                ok &= s > floor;
                detail.push(format!(
                    "{name} {s:.3} > {floor:.3} on (0,{:.3})",
                    bound.window
                ));
            }
            None => {
                ok = false;
                detail.push(format!("{name}: no knots in (0,{})", bound.window));
            }
        }
    }
    outcome(ok, detail.join(", "))
}

fn criterion_5() -> Outcome {
    // (law, sigma^2(0), a) from the raw parameters.
    let cases = [
        ("binary_split(0.5,1)", bs(0.5, 1.0), 0.5 * 0.5, 1.5),
        ("beverton_holt(2,1)", bh(2.0, 1.0), 2.0, 2.0),
    ];
    let start = Instant::now();
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, law, s2, a) in cases {
        for z0 in [1u64, 3, 10] {
            let w = values(&sample_w(&law, z0, 30, 42 + z0, 10_000).unwrap());
            let (mean, var) = (stats::mean(&w), stats::variance(&w));
            let want_var = z0 as f64 * s2 / (a * a - a);
            let mean_ok = (mean - z0 as f64).abs() < 4.0 * stats::std_error(&w);
            let var_ok = (var - want_var).abs() < 4.0 * stats::variance_std_error(&w);
            ok &= mean_ok && var_ok;
            detail.push(format!(
                "{name} z0={z0}: mean {mean:.3}, var {var:.3}/{want_var:.3}"
            ));
        }
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(10);
    detail.push(format!("runtime {elapsed:?}"));
    outcome(ok, detail.join("; "))
}

fn criterion_6() -> Outcome {
    let mut total = 0usize;
    let mut runs = 0usize;
    let mut detail = Vec::new();
    for (name, law) in [
        ("binary_split(0.5,1)", bs(0.5, 1.0)),
        ("beverton_holt(2,1)", bh(2.0, 1.0)),
    ] {
        let cfg = SimConfig::new(&law, 1e4, 1)
            .with_exponents(0.6, 0.8)
            .with_mode(SimMode::Exact)
            .with_seed(6);
        let a = law.malthusian();
        let horizon = densbranch::simulator::detection_generation(a, 1e4);
        let cfg = cfg.with_n_max(horizon);
        let bad: usize = (0..10_000u64)
            .map(|r| {
                simulate_coupled_replicate(&law, &cfg, r, horizon)
                    .unwrap()
                    .sandwich_violations()
            })
            .sum();
        runs += 10_000;
        total += bad;
        detail.push(format!("{name}: {bad} violations to n = {horizon}"));
    }
    outcome(
        total == 0,
        format!("{runs} coupled runs; {}", detail.join("; ")),
    )
}

fn criterion_7() -> Outcome {
    let law = bs(0.5, 1.0);
    let p = EarlyPhaseParams {
        capacities: vec![1e3, 1e4, 1e5],
        replicates: 2000,
        seed: 7,
        ..EarlyPhaseParams::default()
    };
    let start = Instant::now();
    let report = verify_early_phase(&law, &p).unwrap();
    let elapsed = start.elapsed();
    let gaps = report.column("gap_mean");
    let ok = stats::strictly_decreasing(&gaps) && elapsed < Duration::from_secs(120);
    outcome(ok, format!("gap {gaps:?}, runtime {elapsed:?}"))
}

fn criterion_8() -> Outcome {
    let law = bh(2.0, 1.0);
    let p = FixedTimeParams {
        x0: 0.1,
        generations: 3,
        seed: 8,
        ..FixedTimeParams::default()
    };
    let report = verify_fixed_time(&law, &p).unwrap();
    // f_3(0.1) from f_n(x) = a^n x / (1 + b x (a^n - 1) / (a - 1))
    let oracle = 8.0 * 0.1 / (1.0 + 0.1 * 7.0);
    let mean = *report.column("mean").last().unwrap();
    let exceed = report.column("exceed_0.05");
    let ok = (mean - oracle).abs() < 0.005 && stats::decreasing_to_floor(&exceed, 0.0);
    outcome(
        ok,
        format!("E X_3 = {mean:.6} vs {oracle:.6}; P(dev > 0.05) = {exceed:?}"),
    )
}

fn criterion_9() -> Outcome {
    let law = bs(1.0, 1.0);
    let k = 2f64.powi(20);
    let h = compute_h(&IteratedMap::limit(&law), 8.0, DEFAULT_KNOTS, 1e-10).unwrap();
    let target = h_eval(&h, 7.0).unwrap();
    let cfg = SimConfig::new(&law, k, 7).with_seed(9);
    let xs = replicate(
        &law,
        &cfg,
        100,
        Observable::Density,
        GenerationIndex::Detection,
    )
    .unwrap();
    let dev = xs.iter().map(|x| (x - target).abs()).fold(0.0, f64::max);
    let hits = xs
        .iter()
        .filter(|&&x| {
            recover_z0(
                &[x],
                &h,
                &law,
                k,
                RecoveryMode::Deterministic,
                &IntervalParams::default(),
            )
            .unwrap()
                == Z0Estimate::Point { z0: 7 }
        })
        .count();
    let p = LimitParams {
        z0: 7,
        capacities: vec![k],
        replicates: 100,
        seed: 9,
        ..LimitParams::default()
    };
    let report = verify_main(&law, &p, Some(&h)).unwrap();
    let ok = dev < 0.01 && hits == 100 && verdict_ok(&report, "point_mass_threshold");
    outcome(
        ok,
        format!(
            "h(7) = {target:.6}, max |X - h(7)| = {dev:.2e}, recovered 7 in {hits}/100; {}",
            verdict_line(&report, &["point_mass_threshold"])
        ),
    )
}

fn limit_params(seed: u64) -> LimitParams {
    LimitParams {
        z0: 1,
        capacities: vec![1e4, 1e5, 1e6],
        replicates: 2000,
        seed,
        ..LimitParams::default()
    }
}

fn criterion_10() -> Outcome {
    let law = bh(2.0, 1.0);
    let report = verify_main(&law, &limit_params(10), None).unwrap();
    // Extinction oracle: smallest root of q = exp(a (q - 1)).
    let mut q = 0.0f64;
    for _ in 0..10_000 {
        q = (2.0 * (q - 1.0)).exp();
    }
    let atom_freq = report.column("atom_frequency");
    let atom_ok = atom_freq
        .iter()
        .all(|f| (f - q).abs() <= 4.0 * (q * (1.0 - q) / 2000.0).sqrt());
    let ok = verdict_ok(&report, "ks_trend") && verdict_ok(&report, "ks_baseline") && atom_ok;
    outcome(
        ok,
        format!(
            "KS {:?}, self {:?}, atom {atom_freq:?} vs q = {q:.5}",
            report.column("ks"),
            report.column("self_distance")
        ),
    )
}

fn criterion_11() -> Outcome {
    let law = bh(2.0, 1.0);
    let mut ok = true;
    let mut detail = Vec::new();
    for shift in [1, 3, 5] {
        let report = verify_shifted_limit(&law, &limit_params(11), shift, None).unwrap();
        ok &= verdict_ok(&report, "ks_trend") && verdict_ok(&report, "ks_baseline");
        detail.push(format!(
            "n={shift}: KS {:?}, self {:?}",
            report.column("ks"),
            report.column("self_distance")
        ));
    }
    outcome(ok, detail.join("; "))
}

fn criterion_12() -> Outcome {
    let law = bs(0.5, 1.0);
    let a: f64 = 1.5;
    let p = SublogParams {
        z0: 1,
        lambda: LambdaSpec::SqrtLog,
        seed: 12,
        ..SublogParams::default()
    };
    let report = verify_sublog(&law, &p).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for row in &report.rows {
        let log_k = row.capacity.ln() / a.ln();
        let bound = a.powf(log_k.sqrt() - log_k);
        let mean = row.get("mean_x").unwrap();
        ok &= mean <= bound;
        detail.push(format!("K={:e}: {mean:.3e} <= {bound:.3e}", row.capacity));
    }
    outcome(ok, detail.join(", "))
}

fn csv_bytes(report: &ExperimentReport) -> Vec<u8> {
    let mut out = Vec::new();
    report.write_csv(&mut out).unwrap();
    out
}

fn criterion_13() -> Outcome {
    let law = bh(2.0, 1.0);
    let t1 = EarlyPhaseParams {
        capacities: vec![1e3, 1e4],
        replicates: 300,
        seed: 13,
        ..EarlyPhaseParams::default()
    };
    let lp = LimitParams {
        capacities: vec![1e4, 1e5],
        replicates: 300,
        seed: 13,
        ..LimitParams::default()
    };
    let runs: [Replay; 3] = [
        (
            "early_phase",
            Box::new(|| verify_early_phase(&law, &t1).unwrap()),
        ),
        ("main", Box::new(|| verify_main(&law, &lp, None).unwrap())),
        (
            "shift",
            Box::new(|| verify_shifted_limit(&law, &lp, -1, None).unwrap()),
        ),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, f) in runs.iter() {
        let (first, second) = (csv_bytes(&f()), csv_bytes(&f()));
        let same = first == second && !first.is_empty();
        ok &= same;
        detail.push(format!("{name}: {} bytes, identical = {same}", first.len()));
    }
    outcome(ok, detail.join("; "))
}

type Replay<'a> = (&'a str, Box<dyn Fn() -> ExperimentReport + 'a>);
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 13] = [
        ("closed-form h oracle", criterion_1),
        ("Schroeder residual", criterion_2),
        ("monotone h_n", criterion_3),
        ("slope floor near origin", criterion_4),
        ("W moments", criterion_5),
        ("coupling sandwich", criterion_6),
        ("early-phase gap trend", criterion_7),
        ("fixed-time concentration", criterion_8),
        ("deterministic limit and recovery", criterion_9),
        ("stochastic limit law", criterion_10),
        ("shifted limit laws", criterion_11),
        ("sub-logarithmic decay", criterion_12),
        ("reproducibility", criterion_13),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let tag = if result.ok { "PASS" } else { "FAIL" };
        failed += usize::from(!result.ok);
        println!(
            "criterion {:>2} {tag} {name} [{:.1?}]: {}",
            i + 1,
            start.elapsed(),
            result.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
