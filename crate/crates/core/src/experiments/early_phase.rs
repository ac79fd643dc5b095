use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    check_grid, check_replicates, default_capacities, default_coupled_capacities, exceed_fraction,
    trend_verdict, ExperimentReport, ReportRow, Verdict, DEFAULT_REPLICATES,
};
use crate::error::{Error, Result};
use crate::repro_laws::OffspringLaw;
use crate::schroeder::IteratedMap;
use crate::simulator::{
    replicate, simulate_coupled_replicate, GenerationIndex, Observable, SimConfig, SimMode,
    DEFAULT_C, DEFAULT_GAMMA,
};
use crate::stats;

/// Upper bound on individual draws for one coupled experiment.
pub const DEFAULT_DRAW_BUDGET: f64 = 2e10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyPhaseParams {
    pub z0: u64,
    pub c: f64,
    pub gamma: f64,
    pub capacities: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    /// The gap at the largest `K` must be below this fraction of the gap
    /// at the smallest `K`.
    pub final_fraction: f64,
    pub draw_budget: f64,
}

impl Default for EarlyPhaseParams {
    fn default() -> Self {
        EarlyPhaseParams {
            z0: 1,
            c: DEFAULT_C,
            gamma: DEFAULT_GAMMA,
            capacities: default_coupled_capacities(),
            replicates: DEFAULT_REPLICATES,
            seed: 0,
            final_fraction: 0.5,
            draw_budget: DEFAULT_DRAW_BUDGET,
        }
    }
}

/// Expected individual draws for `replicates` coupled runs to `n`.
pub(crate) fn coupled_cost(law: &OffspringLaw, z0: u64, n: u32, replicates: usize) -> f64 {
    let a = law.malthusian();
    let per_path = z0 as f64 * (a.powi(n as i32 + 1) - 1.0) / (a - 1.0);
    3.0 * per_path * replicates as f64
}

/// Coupled runs to `n_K`: the scaled gap `E|Z~ - Z| K^-c`, the frequency of
/// `tau <= n_K` against `2 K^(c - gamma)`, and sandwich violations.
pub fn verify_early_phase(law: &OffspringLaw, p: &EarlyPhaseParams) -> Result<ExperimentReport> {
    check_grid(&p.capacities)?;
    check_replicates(p.replicates)?;
    let a = law.malthusian();
    let mut report = ExperimentReport::new("early_phase", law, p, p.seed, p.replicates)?;
    let (mut gaps, mut tau_ok, mut violations) = (Vec::new(), true, 0usize);
    for &k in &p.capacities {
        let cfg = SimConfig::new(law, k, p.z0)
            .with_exponents(p.c, p.gamma)
            .with_seed(p.seed)
            .with_mode(SimMode::Exact);
        let n_k = cfg.early_phase(a);
        let cfg = cfg.with_n_max(n_k.max(1));
        cfg.validate(law)?;
        let cost = coupled_cost(law, p.z0, n_k, p.replicates);
        if cost > p.draw_budget {
            return Err(Error::Infeasible(format!(
                "K = {k}: about {cost:.3e} draws exceeds the budget {:.3e}",
                p.draw_budget
            )));
        }
        let cells: Vec<(f64, bool, usize)> = (0..p.replicates as u64)
            .into_par_iter()
            .map(|r| {
                let run = simulate_coupled_replicate(law, &cfg, r, n_k)?;
                let n = n_k as usize;
                let gap = run.comparison[n].abs_diff(run.population[n]) as f64 * k.powf(-p.c);
                let early_exit = run.tau.is_some_and(|t| t <= n);
                Ok((gap, early_exit, run.sandwich_violations()))
            })
            .collect::<Result<_>>()?;
        let gap: Vec<f64> = cells.iter().map(|c| c.0).collect();
        let tau_freq = cells.iter().filter(|c| c.1).count() as f64 / cells.len() as f64;
        let tau_bound = 2.0 * k.powf(p.c - p.gamma);
        let bad: usize = cells.iter().map(|c| c.2).sum();
        tau_ok &= tau_freq <= tau_bound;
        violations += bad;

        let mut row = ReportRow::new(k, Some(n_k));
        row.set("gap_mean", stats::mean(&gap));
        row.set("gap_se", stats::std_error(&gap));
        row.set("tau_frequency", tau_freq);
        row.set("tau_bound", tau_bound);
        row.set("sandwich_violations", bad as f64);
        row.set(
            "capacity_map_gap",
            capacity_map_gap(law, k, cfg.late_phase(a)),
        );
        gaps.push(stats::mean(&gap));
        report.rows.push(row);
    }
    report.verdicts.push(trend_verdict("gap_trend", &gaps));
    let (first, last) = (gaps[0], gaps[gaps.len() - 1]);
    report.verdicts.push(Verdict::new(
        "gap_threshold",
        last == 0.0 || last < p.final_fraction * first,
        format!("final {last} vs {} x initial {first}", p.final_fraction),
    ));
    report.verdicts.push(Verdict::new(
        "tau_bound",
        tau_ok,
        "P(tau <= n_K) <= 2 K^(c - gamma) at every K",
    ));
    report.verdicts.push(Verdict::new(
        "sandwich",
        violations == 0,
        format!("{violations} pointwise violations"),
    ));
    Ok(report.finish())
}

/// `sup_x |f^K_n(x) - f_n(x)| sqrt(K) / a^n` over a grid, the scaled
/// distance between the capacity-`K` and limiting iterated maps.
fn capacity_map_gap(law: &OffspringLaw, k: f64, n: u32) -> f64 {
    let limit = IteratedMap::limit(law);
    let finite = IteratedMap::at_capacity(law, k);
    let top = law.positive_fixed_point().map_or(1.0, |x| 2.0 * x);
    let a = law.malthusian();
    (0..=100)
        .map(|i| {
            let x = top * i as f64 / 100.0;
            (finite.iterate(x, n as usize) - limit.iterate(x, n as usize)).abs()
        })
        .fold(0.0, f64::max)
        * k.sqrt()
        / a.powi(n as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedTimeParams {
    pub x0: f64,
    pub generations: u32,
    pub capacities: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub deltas: Vec<f64>,
    /// Allowed `|E X_n - f_n(x0)|` at the largest `K`.
    pub mean_tolerance: f64,
}

impl Default for FixedTimeParams {
    fn default() -> Self {
        FixedTimeParams {
            x0: 0.1,
            generations: 3,
            capacities: default_capacities(),
            replicates: DEFAULT_REPLICATES,
            seed: 0,
            deltas: vec![0.05, 0.01],
            mean_tolerance: 0.005,
        }
    }
}

/// Concentration of `X_n` at the deterministic iterate `f_n(x0)` from
/// `X_0 = floor(x0 K) / K`.
pub fn verify_fixed_time(law: &OffspringLaw, p: &FixedTimeParams) -> Result<ExperimentReport> {
    check_grid(&p.capacities)?;
    check_replicates(p.replicates)?;
    if !(p.x0 > 0.0 && p.x0.is_finite()) {
        return Err(Error::invalid("x0", "must be finite and > 0"));
    }
    let a = law.malthusian();
    let target = IteratedMap::limit(law).iterate(p.x0, p.generations as usize);
    let mut report = ExperimentReport::new("fixed_time", law, p, p.seed, p.replicates)?;
    let mut exceed: Vec<Vec<f64>> = vec![Vec::new(); p.deltas.len()];
    let mut last_mean = f64::NAN;
    for &k in &p.capacities {
        let z0 = (p.x0 * k).floor() as u64;
        if z0 == 0 {
            return Err(Error::invalid("x0", format!("floor(x0 K) = 0 at K = {k}")));
        }
        let cfg = SimConfig::new(law, k, z0).with_seed(p.seed);
        let cfg = cfg
            .clone()
            .with_n_max(p.generations.max(cfg.early_phase(a)));
        let xs = replicate(
            law,
            &cfg,
            p.replicates,
            Observable::Density,
            GenerationIndex::Absolute(p.generations),
        )?;
        let mut row = ReportRow::new(k, Some(p.generations));
        row.set("initial_density", z0 as f64 / k);
        row.set("target", target);
        row.set("mean", stats::mean(&xs));
        row.set("mean_se", stats::std_error(&xs));
        row.set(
            "mean_abs_error",
            stats::mean(&xs.iter().map(|x| (x - target).abs()).collect::<Vec<_>>()),
        );
        for (i, &d) in p.deltas.iter().enumerate() {
            let f = exceed_fraction(&xs, target, d);
            row.set(&format!("exceed_{d}"), f);
            exceed[i].push(f);
        }
        last_mean = stats::mean(&xs);
        report.rows.push(row);
    }
    for (i, &d) in p.deltas.iter().enumerate() {
        let ok = stats::decreasing_to_floor(&exceed[i], 0.0);
        report.verdicts.push(Verdict::new(
            format!("exceed_{d}_trend"),
            ok,
            format!("P(|X_n - f_n(x0)| > {d}) = {:?}", exceed[i]),
        ));
    }
    report.verdicts.push(Verdict::new(
        "final_mean",
        (last_mean - target).abs() < p.mean_tolerance,
        format!("mean {last_mean} vs f_n(x0) = {target}"),
    ));
    Ok(report.finish())
}
