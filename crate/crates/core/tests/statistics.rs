use densbranch::experiments::{
    ks_two_sample, recover_z0, IntervalParams, IntervalRecovery, RecoveryMode, Z0Estimate,
};
use densbranch::rng::StreamKey;
use densbranch::schroeder::{compute_h, IteratedMap};
use densbranch::simulator::{
    decompose_martingale, detection_generation, replicate, replicate_paths,
    simulate_coupled_replicate, GenerationIndex, Observable,
};
use densbranch::stats;
use densbranch::wlimit::{sample_w, values};
use densbranch::{OffspringLaw, SimConfig, SimMode};

fn bh2() -> OffspringLaw {
    OffspringLaw::beverton_holt_poisson(2.0, 1.0).unwrap()
}

#[test]
fn first_generation_extinction_is_poisson() {
    let law = bh2();
    let k = 1e6;
    let cfg = SimConfig::new(&law, k, 1)
        .with_seed(21)
        .with_mode(SimMode::Exact);
    let r = 40_000;
    let z1 = replicate(
        &law,
        &cfg,
        r,
        Observable::Count,
        GenerationIndex::Absolute(1),
    )
    .unwrap();
    let freq = z1.iter().filter(|&&z| z == 0.0).count() as f64 / r as f64;
    let target = (-2.0 / (1.0 + 1.0 / k)).exp();
    let se = (target * (1.0 - target) / r as f64).sqrt();
    assert!((freq - target).abs() < 4.0 * se, "{freq} vs {target}");
}

#[test]
fn exact_and_fast_modes_agree_in_law() {
    let law = bh2();
    let base = SimConfig::new(&law, 1e3, 3).with_seed(22);
    let exact = replicate(
        &law,
        &base.clone().with_mode(SimMode::Exact),
        2000,
        Observable::Density,
        GenerationIndex::Detection,
    )
    .unwrap();
    let fast = replicate(
        &law,
        &base.with_mode(SimMode::Fast),
        2000,
        Observable::Density,
        GenerationIndex::Detection,
    )
    .unwrap();
    let ks = ks_two_sample(&exact, &fast).unwrap();
    assert!(
        ks.p_value > 1e-3,
        "D = {}, p = {}",
        ks.statistic,
        ks.p_value
    );
}

#[test]
fn early_threshold_crossings_are_rare() {
    let law = bh2();
    let k = 1e4;
    let cfg = SimConfig::new(&law, k, 1)
        .with_seed(23)
        .with_mode(SimMode::Exact);
    let n_k = cfg.early_phase(law.malthusian());
    let r = 2000;
    let hits = (0..r)
        .filter(|&rep| {
            let run = simulate_coupled_replicate(&law, &cfg, rep, n_k).unwrap();
            run.tau.is_some_and(|t| t <= n_k as usize)
        })
        .count();
    let bound = 2.0 * k.powf(cfg.c - cfg.gamma);
    assert!(
        (hits as f64 / r as f64) <= bound,
        "{hits} of {r} vs bound {bound}"
    );
}

#[test]
fn innovations_have_the_stated_conditional_variance() {
    let law = bh2();
    let k = 1e4;
    let cfg = SimConfig::new(&law, k, 1)
        .with_seed(24)
        .with_mode(SimMode::Fast);
    let l = detection_generation(2.0, k);
    let paths = replicate_paths(&law, &cfg, 3000, l + 3).unwrap();
    for n in [l as usize, l as usize + 2] {
        let standardized: Vec<f64> = paths
            .iter()
            .filter(|p| p.counts[n - 1] > 0)
            .map(|p| {
                let t = decompose_martingale(p, &law, k);
                t.increments[n - 1] / t.conditional_variance[n - 1].sqrt()
            })
            .collect();
        let se = 1.0 / (standardized.len() as f64).sqrt();
        assert!(
            stats::mean(&standardized).abs() < 4.0 * se,
            "generation {n}"
        );
        assert!(
            (stats::variance(&standardized) - 1.0).abs() < 0.1,
            "generation {n}"
        );
    }
}

#[test]
fn ks_is_calibrated_under_the_null() {
    let law = OffspringLaw::binary_split(0.5, 1.0).unwrap();
    let meta = 200;
    let rejections = (0..meta as u64)
        .filter(|&m| {
            let a = values(&sample_w(&law, 1, 25, 2 * m + 1000, 200).unwrap());
            let b = values(&sample_w(&law, 1, 25, 2 * m + 1001, 200).unwrap());
            ks_two_sample(&a, &b).unwrap().p_value < 0.05
        })
        .count();
    let rate = rejections as f64 / meta as f64;
    assert!((0.01..=0.10).contains(&rate), "rejection rate {rate}");
}

#[test]
fn larger_start_dominates_in_law() {
    let law = bh2();
    let cfg = |z0| SimConfig::new(&law, 1e4, z0).with_seed(25);
    let one = stats::sorted(
        &replicate(
            &law,
            &cfg(1),
            1000,
            Observable::Density,
            GenerationIndex::Detection,
        )
        .unwrap(),
    );
    let ten = stats::sorted(
        &replicate(
            &law,
            &cfg(10),
            1000,
            Observable::Density,
            GenerationIndex::Detection,
        )
        .unwrap(),
    );
    for p in [0.1, 0.25, 0.5, 0.75, 0.9] {
        assert!(
            stats::quantile_sorted(&ten, p) >= stats::quantile_sorted(&one, p),
            "quantile {p}"
        );
    }
    assert!(stats::mean(&ten) > stats::mean(&one));
}

#[test]
fn interval_recovery_covers_the_true_start() {
    let law = OffspringLaw::binary_split(0.5, 1.0).unwrap();
    let (k, z0, n_obs, datasets) = (1e5, 3, 20, 60);
    let h = compute_h(&IteratedMap::limit(&law), 30.0, 1025, 1e-10).unwrap();
    let params = IntervalParams {
        z_max: 10,
        reference_size: 2000,
        bootstrap: 500,
        seed: 26,
        ..IntervalParams::default()
    };
    let envelopes = IntervalRecovery::build(&law, &h, k, n_obs, &params).unwrap();
    let cfg = SimConfig::new(&law, k, z0).with_seed(27);
    let all = replicate(
        &law,
        &cfg,
        n_obs * datasets,
        Observable::Density,
        GenerationIndex::Detection,
    )
    .unwrap();
    let covered = all
        .chunks(n_obs)
        .filter(|obs| envelopes.estimate(obs, &h).unwrap().contains(z0))
        .count();
    assert!(
        covered as f64 >= 0.9 * datasets as f64,
        "{covered} of {datasets}"
    );
}

#[test]
fn deterministic_recovery_is_exact_for_doubling() {
    let law = OffspringLaw::binary_split(1.0, 1.0).unwrap();
    let h = compute_h(&IteratedMap::limit(&law), 8.0, 1025, 1e-10).unwrap();
    let k = 2f64.powi(20);
    for z0 in [1, 4, 7] {
        let cfg = SimConfig::new(&law, k, z0).with_seed(28);
        let obs = replicate(
            &law,
            &cfg,
            5,
            Observable::Density,
            GenerationIndex::Detection,
        )
        .unwrap();
        let est = recover_z0(
            &obs,
            &h,
            &law,
            k,
            RecoveryMode::Deterministic,
            &IntervalParams::default(),
        )
        .unwrap();
        assert_eq!(est, Z0Estimate::Point { z0 });
    }
    let extinct = recover_z0(
        &[0.0],
        &h,
        &law,
        k,
        RecoveryMode::Deterministic,
        &IntervalParams::default(),
    )
    .unwrap();
    assert!(matches!(extinct, Z0Estimate::Undefined { .. }));
}

#[test]
fn stream_keys_reproduce_draws() {
    let key = StreamKey::new(5, 1, 2, 3);
    assert_eq!(key.uniform(17), StreamKey::new(5, 1, 2, 3).uniform(17));
    assert_ne!(key.uniform(17), StreamKey::new(5, 1, 2, 4).uniform(17));
}
