//! Trajectories of the density-dependent population `Z_n`.
//!
//! Three constructions share one contract: generation `n` is built from
//! `Z_{n-1}` conditionally i.i.d. offspring whose law depends on the density
//! `X_{n-1} = Z_{n-1}/K` and the capacity `K`.
//!
//! * exact: one keyed uniform per individual, pushed through the quantile
//!   function of the offspring law;
//! * fast: one aggregate draw per generation (`z + Binomial(z, p)` for
//!   binary splitting, `Poisson(z mu)` for Poisson offspring);
//! * coupled: the population, the comparison Galton-Watson process and the
//!   lower process frozen at density `K^(gamma-1)` all read the same
//!   uniform for individual `j` of generation `n`.

use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repro_laws::{Conditional, OffspringLaw};
use crate::rng::{tag, StreamKey};

/// Largest count kept exactly in an `f64`.
pub const MAX_COUNT: u64 = 1 << 53;
/// Per-generation individual budget for per-individual constructions.
pub const MAX_EXACT_INDIVIDUALS: u64 = 1 << 31;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Exact,
    #[default]
    Fast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub capacity: f64,
    pub z0: u64,
    /// Early-phase exponent: `n_K = floor(c log_a K)`.
    pub c: f64,
    /// Threshold exponent of the lower coupled process.
    pub gamma: f64,
    pub n_max: u32,
    pub seed: u64,
    pub mode: SimMode,
}

pub const DEFAULT_C: f64 = 0.6;
pub const DEFAULT_GAMMA: f64 = 0.8;

/// `log_a k`.
pub fn log_base(a: f64, k: f64) -> f64 {
    k.ln() / a.ln()
}

/// `floor(v)`, treating values within 1e-9 of an integer as that integer so
/// that `floor(log_2 2^20)` is 20 despite rounding in the logarithm.
pub fn robust_floor(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v.floor()
    }
}

/// `floor(log_a K)`, the generation at which the density becomes of order one.
pub fn detection_generation(a: f64, k: f64) -> u32 {
    robust_floor(log_base(a, k)).max(0.0) as u32
}

impl SimConfig {
    /// Defaults: `c = 0.6`, `gamma = 0.8`, `n_max = floor(log_a K) + 10`,
    /// seed 0, fast mode.
    pub fn new(law: &OffspringLaw, capacity: f64, z0: u64) -> Self {
        SimConfig {
            capacity,
            z0,
            c: DEFAULT_C,
            gamma: DEFAULT_GAMMA,
            n_max: detection_generation(law.malthusian(), capacity.max(1.0)) + 10,
            seed: 0,
            mode: SimMode::Fast,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_mode(mut self, mode: SimMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_n_max(mut self, n_max: u32) -> Self {
        self.n_max = n_max;
        self
    }

    pub fn with_exponents(mut self, c: f64, gamma: f64) -> Self {
        self.c = c;
        self.gamma = gamma;
        self
    }

    pub fn validate(&self, law: &OffspringLaw) -> Result<()> {
        if !(self.capacity.is_finite() && self.capacity >= 1.0) {
            return Err(Error::invalid("capacity", "K must be finite and >= 1"));
        }
        if self.z0 == 0 {
            return Err(Error::invalid("z0", "initial count must be >= 1"));
        }
        if self.z0 > MAX_COUNT {
            return Err(Error::invalid(
                "z0",
                "initial count exceeds the exact count range",
            ));
        }
        if !(self.c > 0.5) {
            return Err(Error::invalid("c", "c must exceed 1/2"));
        }
        if !(self.c < 1.0) {
            return Err(Error::invalid("c", "c must be below 1"));
        }
        if !(self.gamma > self.c) {
            return Err(Error::invalid("gamma", "gamma must exceed c"));
        }
        if !(self.gamma < 1.0) {
            return Err(Error::invalid("gamma", "gamma must be below 1"));
        }
        let n_k = self.early_phase(law.malthusian());
        if n_k > self.n_max {
            return Err(Error::invalid(
                "n_max",
                format!("n_max = {} is below n_K = {n_k}", self.n_max),
            ));
        }
        Ok(())
    }

    pub fn log_capacity(&self, a: f64) -> f64 {
        log_base(a, self.capacity)
    }

    /// `n_K = floor(c log_a K)`.
    pub fn early_phase(&self, a: f64) -> u32 {
        robust_floor(self.c * self.log_capacity(a)).max(0.0) as u32
    }

    /// `nu_K = floor(log_a K) - n_K`.
    pub fn late_phase(&self, a: f64) -> u32 {
        detection_generation(a, self.capacity) - self.early_phase(a)
    }
}

/// One realised trajectory `Z_0, ..., Z_n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PopulationPath {
    pub counts: Vec<u64>,
    pub capacity: f64,
    pub extinct_at: Option<usize>,
    /// Random draws consumed: one per individual in exact mode, one per
    /// generation in fast mode.
    pub draws: u64,
}

impl PopulationPath {
    pub fn density(&self, n: usize) -> f64 {
        self.counts[n] as f64 / self.capacity
    }

    pub fn densities(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&z| z as f64 / self.capacity)
            .collect()
    }

    pub fn generations(&self) -> usize {
        self.counts.len() - 1
    }
}

fn check_range(z: u64, generation: usize) -> Result<()> {
    if z > MAX_COUNT {
        return Err(Error::Overflow {
            generation,
            detail: format!("count {z} exceeds 2^53"),
        });
    }
    Ok(())
}

fn check_exact_budget(z: u64, generation: usize) -> Result<()> {
    if z > MAX_EXACT_INDIVIDUALS {
        return Err(Error::Infeasible(format!(
            "{z} individuals at generation {generation} exceed the per-individual budget"
        )));
    }
    Ok(())
}

/// Sum of `z` offspring drawn through the quantile function.
fn step_exact(cond: &Conditional<'_>, z: u64, key: &StreamKey, generation: usize) -> Result<u64> {
    check_exact_budget(z, generation)?;
    let thresholds = cond.thresholds();
    let mut total: u64 = 0;
    for j in 0..z {
        total += thresholds.quantile(key.uniform(j));
    }
    check_range(total, generation)?;
    Ok(total)
}

fn binomial(rng: &mut impl rand::RngCore, n: u64, p: f64) -> Result<u64> {
    if n == 0 || p <= 0.0 {
        return Ok(0);
    }
    if p >= 1.0 {
        return Ok(n);
    }
    Ok(Binomial::new(n, p)
        .map_err(|e| Error::invalid("binomial", e.to_string()))?
        .sample(rng))
}

fn poisson(rng: &mut impl rand::RngCore, lambda: f64, generation: usize) -> Result<u64> {
    if lambda <= 0.0 {
        return Ok(0);
    }
    let draw: f64 = Poisson::new(lambda)
        .map_err(|e| Error::Overflow {
            generation,
            detail: format!("Poisson mean {lambda}: {e}"),
        })?
        .sample(rng);
    if draw >= MAX_COUNT as f64 {
        return Err(Error::Overflow {
            generation,
            detail: format!("count {draw} exceeds 2^53"),
        });
    }
    Ok(draw as u64)
}

/// Sum of `z` offspring drawn in one aggregate step.
fn step_aggregate(
    cond: &Conditional<'_>,
    z: u64,
    key: &StreamKey,
    generation: usize,
) -> Result<u64> {
    let mut rng = key.rng();
    let total = match *cond {
        Conditional::Binary { p } => z + binomial(&mut rng, z, p)?,
        Conditional::Poisson { mean } => poisson(&mut rng, z as f64 * mean, generation)?,
        Conditional::Table { .. } => return step_exact(cond, z, key, generation),
    };
    check_range(total, generation)?;
    Ok(total)
}

/// One generation of the population (`z` at density-dependent law `cond`)
/// and the comparison process (`zt >= z` at the limit law `limit`), coupled
/// through their generation totals so that the new counts stay ordered.
/// Poisson totals split by additivity, binary totals by thinning. `None`
/// for tabulated laws, which have no aggregate coupling.
pub(crate) fn step_thinned_pair(
    cond: &Conditional<'_>,
    limit: &Conditional<'_>,
    z: u64,
    zt: u64,
    key: &StreamKey,
    generation: usize,
) -> Result<Option<(u64, u64)>> {
    let mut rng = key.rng();
    let (next, next_t) = match (*cond, *limit) {
        (Conditional::Binary { p }, Conditional::Binary { p: p0 }) => {
            let common = binomial(&mut rng, z, p0)?;
            let kept = binomial(&mut rng, common, if p0 > 0.0 { p / p0 } else { 0.0 })?;
            let extra = binomial(&mut rng, zt - z, p0)?;
            (z + kept, zt + common + extra)
        }
        (Conditional::Poisson { mean }, Conditional::Poisson { mean: a }) => {
            let next = poisson(&mut rng, z as f64 * mean, generation)?;
            let surplus = (zt as f64 * a - z as f64 * mean).max(0.0);
            (next, next + poisson(&mut rng, surplus, generation)?)
        }
        _ => return Ok(None),
    };
    check_range(next_t, generation)?;
    Ok(Some((next, next_t)))
}

/// Aggregate step that also covers tabulated laws, by splitting `z`
/// individuals over the support with sequential binomial draws.
pub(crate) fn step_multinomial(
    cond: &Conditional<'_>,
    z: u64,
    key: &StreamKey,
    generation: usize,
) -> Result<u64> {
    let Conditional::Table { pmf } = *cond else {
        return step_aggregate(cond, z, key, generation);
    };
    let mut rng = key.rng();
    let mut remaining = z;
    let mut rest = 1.0;
    let mut total: u64 = 0;
    let last = pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    for (k, &p) in pmf.iter().enumerate().take(last + 1) {
        if remaining == 0 {
            break;
        }
        let n_k = if k == last {
            remaining
        } else if p <= 0.0 {
            0
        } else {
            let share = if rest > 0.0 {
                (p / rest).clamp(0.0, 1.0)
            } else {
                1.0
            };
            Binomial::new(remaining, share)
                .map_err(|e| Error::invalid("binomial", e.to_string()))?
                .sample(&mut rng)
        };
        remaining -= n_k;
        rest -= p;
        total = (k as u64)
            .checked_mul(n_k)
            .and_then(|v| v.checked_add(total))
            .ok_or_else(|| Error::Overflow {
                generation,
                detail: "count exceeds 64 bits".into(),
            })?;
    }
    check_range(total, generation)?;
    Ok(total)
}

/// Advance `generations` steps from `z0` under `law` at capacity `capacity`.
/// `density_dependent = false` runs the comparison Galton-Watson process.
pub(crate) fn run_counts(
    law: &OffspringLaw,
    capacity: f64,
    z0: u64,
    generations: u32,
    key_for: impl Fn(u64) -> StreamKey,
    aggregate: bool,
    density_dependent: bool,
) -> Result<PopulationPath> {
    let mut counts = Vec::with_capacity(generations as usize + 1);
    counts.push(z0);
    let mut z = z0;
    let mut extinct_at = None;
    let mut draws = 0u64;
    let aggregate = aggregate && !law.is_tabulated();
    for n in 1..=generations as usize {
        if z == 0 {
            counts.push(0);
            continue;
        }
        let cond = if density_dependent {
            law.conditional(z as f64 / capacity, capacity)
        } else {
            law.limit_conditional()
        };
        let key = key_for(n as u64);
        let next = if aggregate {
            draws += 1;
            step_aggregate(&cond, z, &key, n)?
        } else {
            draws += z;
            step_exact(&cond, z, &key, n)?
        };
        if next == 0 && extinct_at.is_none() {
            extinct_at = Some(n);
        }
        z = next;
        counts.push(z);
    }
    Ok(PopulationPath {
        counts,
        capacity,
        extinct_at,
        draws,
    })
}

fn warn_fallback(law: &OffspringLaw) {
    if law.is_tabulated() {
        log::warn!("tabulated laws have no aggregate sampler; using the exact construction");
    }
}

/// Replicate `replicate` of the configured process, run for `generations`.
pub fn simulate_replicate(
    law: &OffspringLaw,
    cfg: &SimConfig,
    replicate: u64,
    generations: u32,
) -> Result<PopulationPath> {
    cfg.validate(law)?;
    let (stream, aggregate) = match cfg.mode {
        SimMode::Exact => (tag::PATH_EXACT, false),
        SimMode::Fast => (tag::PATH_FAST, true),
    };
    run_counts(
        law,
        cfg.capacity,
        cfg.z0,
        generations,
        |n| StreamKey::new(cfg.seed, stream, replicate, n),
        aggregate,
        true,
    )
}

/// One trajectory of `n_max` generations in the configured mode.
pub fn simulate_path(law: &OffspringLaw, cfg: &SimConfig) -> Result<PopulationPath> {
    if cfg.mode == SimMode::Fast {
        warn_fallback(law);
    }
    simulate_replicate(law, cfg, 0, cfg.n_max)
}

/// Fast mode regardless of `cfg.mode`.
pub fn simulate_fast(law: &OffspringLaw, cfg: &SimConfig) -> Result<PopulationPath> {
    warn_fallback(law);
    let cfg = cfg.clone().with_mode(SimMode::Fast);
    simulate_replicate(law, &cfg, 0, cfg.n_max)
}

/// Population, comparison and lower processes built from shared uniforms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoupledPaths {
    pub capacity: f64,
    pub gamma: f64,
    /// The density-dependent population `Z`.
    pub population: Vec<u64>,
    /// Galton-Watson comparison process with the limiting law at density 0.
    pub comparison: Vec<u64>,
    /// Process reproducing as if the density were frozen at `K^(gamma-1)`.
    pub lower: Vec<u64>,
    /// First generation with density above `K^(gamma-1)`.
    pub tau: Option<usize>,
    /// First generation with comparison count above `K^gamma`.
    pub nu: Option<usize>,
}

impl CoupledPaths {
    /// Pointwise violations of `lower <= population` (before `tau`),
    /// `population <= comparison` and `lower <= comparison`.
    pub fn sandwich_violations(&self) -> usize {
        let tau = self.tau.unwrap_or(usize::MAX);
        (0..self.population.len())
            .map(|n| {
                let (z, zt, zg) = (self.population[n], self.comparison[n], self.lower[n]);
                usize::from(n < tau && zg > z) + usize::from(z > zt) + usize::from(zg > zt)
            })
            .sum()
    }
}

pub fn simulate_coupled(law: &OffspringLaw, cfg: &SimConfig) -> Result<CoupledPaths> {
    simulate_coupled_replicate(law, cfg, 0, cfg.n_max)
}

pub fn simulate_coupled_replicate(
    law: &OffspringLaw,
    cfg: &SimConfig,
    replicate: u64,
    generations: u32,
) -> Result<CoupledPaths> {
    cfg.validate(law)?;
    if cfg.mode != SimMode::Exact {
        return Err(Error::invalid(
            "mode",
            "coupled runs share per-individual uniforms and need exact mode",
        ));
    }
    let k = cfg.capacity;
    let frozen_density = k.powf(cfg.gamma - 1.0);
    let comparison_threshold = k.powf(cfg.gamma);
    let comparison_steps = law.limit_conditional().thresholds();
    let lower_steps = law.conditional(frozen_density, k).thresholds();

    let len = generations as usize + 1;
    let mut population = Vec::with_capacity(len);
    let mut comparison = Vec::with_capacity(len);
    let mut lower = Vec::with_capacity(len);
    population.push(cfg.z0);
    comparison.push(cfg.z0);
    lower.push(cfg.z0);
    let above = |z: u64| z as f64 / k > frozen_density;
    let mut tau = above(cfg.z0).then_some(0);
    let mut nu = (cfg.z0 as f64 > comparison_threshold).then_some(0);

    for n in 1..len {
        let (z, zt, zg) = (population[n - 1], comparison[n - 1], lower[n - 1]);
        let widest = z.max(zt).max(zg);
        check_exact_budget(widest, n)?;
        let key = StreamKey::new(cfg.seed, tag::COUPLED, replicate, n as u64);
        let pop_steps = law.conditional(z as f64 / k, k).thresholds();
        let (mut next, mut next_t, mut next_g) = (0u64, 0u64, 0u64);
        for j in 0..widest {
            let u = key.uniform(j);
            if j < zt {
                next_t += comparison_steps.quantile(u);
            }
            if j < z {
                next += pop_steps.quantile(u);
            }
            if j < zg {
                next_g += lower_steps.quantile(u);
            }
        }
        check_range(next_t.max(next).max(next_g), n)?;
        if tau.is_none() && above(next) {
            tau = Some(n);
        }
        if nu.is_none() && next_t as f64 > comparison_threshold {
            nu = Some(n);
        }
        population.push(next);
        comparison.push(next_t);
        lower.push(next_g);
    }
    Ok(CoupledPaths {
        capacity: k,
        gamma: cfg.gamma,
        population,
        comparison,
        lower,
        tau,
        nu,
    })
}

/// Scaled one-step innovations `eps_n = sqrt(K) (X_n - f^K(X_{n-1}))`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MartingaleTrace {
    pub increments: Vec<f64>,
    /// `sigma_K^2(X_{n-1})`, the per-individual offspring variance.
    pub offspring_variance: Vec<f64>,
    /// `X_{n-1} sigma_K^2(X_{n-1})`, the conditional variance of `eps_n`.
    pub conditional_variance: Vec<f64>,
}

pub fn decompose_martingale(
    path: &PopulationPath,
    law: &OffspringLaw,
    capacity: f64,
) -> MartingaleTrace {
    let xs: Vec<f64> = path.counts.iter().map(|&z| z as f64 / capacity).collect();
    let scale = capacity.sqrt();
    let mut trace = MartingaleTrace {
        increments: Vec::with_capacity(xs.len().saturating_sub(1)),
        offspring_variance: Vec::with_capacity(xs.len().saturating_sub(1)),
        conditional_variance: Vec::with_capacity(xs.len().saturating_sub(1)),
    };
    for w in xs.windows(2) {
        let (prev, next) = (w[0], w[1]);
        let var = law.offspring_variance(prev, capacity);
        trace
            .increments
            .push(scale * (next - law.density_map(prev, capacity)));
        trace.offspring_variance.push(var);
        trace.conditional_variance.push(prev * var);
    }
    trace
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// `Z_n`
    Count,
    /// `X_n = Z_n / K`
    Density,
    /// `Z_n / a^n`
    Normalized,
}

/// Slowly growing generation sequences `lambda(K)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum LambdaSpec {
    SqrtLog,
    LogLog,
    Constant(f64),
    /// `log_a K` itself; not sub-logarithmic.
    FullLog,
}

impl LambdaSpec {
    pub fn value(&self, a: f64, k: f64) -> f64 {
        let l = log_base(a, k);
        match *self {
            LambdaSpec::SqrtLog => l.max(0.0).sqrt(),
            LambdaSpec::LogLog => {
                if l > 1.0 {
                    log_base(a, l)
                } else {
                    0.0
                }
            }
            LambdaSpec::Constant(c) => c,
            LambdaSpec::FullLog => l,
        }
    }

    pub fn is_sublogarithmic(&self) -> bool {
        !matches!(self, LambdaSpec::FullLog)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum GenerationIndex {
    Absolute(u32),
    /// `n_K`
    EarlyPhase,
    /// `floor(log_a K)`
    Detection,
    /// `floor(log_a K) + shift`
    DetectionShift(i32),
    /// `floor(lambda(K))`
    Lambda(LambdaSpec),
}

pub fn resolve_index(index: GenerationIndex, cfg: &SimConfig, a: f64) -> Result<u32> {
    let k = cfg.capacity;
    let n: i64 = match index {
        GenerationIndex::Absolute(n) => n as i64,
        GenerationIndex::EarlyPhase => cfg.early_phase(a) as i64,
        GenerationIndex::Detection => detection_generation(a, k) as i64,
        GenerationIndex::DetectionShift(s) => detection_generation(a, k) as i64 + s as i64,
        GenerationIndex::Lambda(spec) => robust_floor(spec.value(a, k)) as i64,
    };
    if n < 0 || n > cfg.n_max as i64 {
        return Err(Error::IndexBeyondHorizon {
            index: n,
            n_max: cfg.n_max,
        });
    }
    Ok(n as u32)
}

fn observe(path: &PopulationPath, observable: Observable, n: u32, a: f64) -> f64 {
    let z = path.counts[n as usize] as f64;
    match observable {
        Observable::Count => z,
        Observable::Density => z / path.capacity,
        Observable::Normalized => z / a.powi(n as i32),
    }
}

/// `replicates` independent paths, each keyed by its replicate index, run to
/// `generations`. Order of the output is the replicate order.
pub fn replicate_paths(
    law: &OffspringLaw,
    cfg: &SimConfig,
    replicates: usize,
    generations: u32,
) -> Result<Vec<PopulationPath>> {
    cfg.validate(law)?;
    if cfg.mode == SimMode::Fast {
        warn_fallback(law);
    }
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| simulate_replicate(law, cfg, r, generations))
        .collect()
}

/// Ensemble of one observable at one generation index.
pub fn replicate(
    law: &OffspringLaw,
    cfg: &SimConfig,
    replicates: usize,
    observable: Observable,
    index: GenerationIndex,
) -> Result<Vec<f64>> {
    let a = law.malthusian();
    let n = resolve_index(index, cfg, a)?;
    let paths = replicate_paths(law, cfg, replicates, n)?;
    Ok(paths.iter().map(|p| observe(p, observable, n, a)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repro_laws::UNBOUNDED;
    use crate::stats;

    fn bh() -> OffspringLaw {
        OffspringLaw::beverton_holt_poisson(2.0, 1.0).unwrap()
    }

    fn doubling(beta: f64) -> OffspringLaw {
        OffspringLaw::binary_split(1.0, beta).unwrap()
    }

    #[test]
    fn deterministic_doubling() {
        let law = doubling(0.0);
        let cfg = SimConfig::new(&law, 2f64.powi(20), 1).with_n_max(12);
        for mode in [SimMode::Exact, SimMode::Fast] {
            let path = simulate_path(&law, &cfg.clone().with_mode(mode)).unwrap();
            assert_eq!(path.counts[10], 1024);
            assert_eq!(path.extinct_at, None);
        }
    }

    #[test]
    fn config_validation_messages() {
        let law = bh();
        let cfg = SimConfig::new(&law, 1e4, 1);
        let err = cfg
            .clone()
            .with_exponents(0.4, 0.8)
            .validate(&law)
            .unwrap_err();
        assert!(err.to_string().contains("c must exceed 1/2"), "{err}");
        let err = cfg
            .clone()
            .with_exponents(0.7, 0.6)
            .validate(&law)
            .unwrap_err();
        assert!(err.to_string().contains("gamma must exceed c"), "{err}");
        assert!(cfg.clone().with_n_max(2).validate(&law).is_err());
        let mut zero = cfg.clone();
        zero.z0 = 0;
        assert!(zero.validate(&law).is_err());
    }

    #[test]
    fn index_convention() {
        let law = doubling(1.0);
        let cfg = SimConfig::new(&law, 2f64.powi(20), 1);
        assert_eq!(detection_generation(2.0, 2f64.powi(20)), 20);
        assert_eq!(cfg.early_phase(2.0), 12);
        assert_eq!(cfg.late_phase(2.0), 8);
        assert_eq!(
            resolve_index(GenerationIndex::Detection, &cfg, 2.0).unwrap(),
            20
        );
        assert_eq!(
            resolve_index(GenerationIndex::DetectionShift(-3), &cfg, 2.0).unwrap(),
            17
        );
        assert!(matches!(
            resolve_index(GenerationIndex::Absolute(31), &cfg, 2.0),
            Err(Error::IndexBeyondHorizon { .. })
        ));
        assert!(resolve_index(GenerationIndex::DetectionShift(-21), &cfg, 2.0).is_err());
    }

    #[test]
    fn extinction_is_absorbing() {
        let law = bh();
        let cfg = SimConfig::new(&law, 100.0, 1).with_mode(SimMode::Exact);
        let mut seen = 0;
        for r in 0..200 {
            let p = simulate_replicate(&law, &cfg, r, 15).unwrap();
            if let Some(n) = p.extinct_at {
                seen += 1;
                assert!(p.counts[n..].iter().all(|&z| z == 0));
                assert!(p.counts[..n].iter().all(|&z| z > 0));
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn draw_counts_reflect_construction_cost() {
        let law = OffspringLaw::binary_split(0.5, 1.0).unwrap();
        let cfg = SimConfig::new(&law, 1e4, 5).with_n_max(20);
        let exact = simulate_path(&law, &cfg.clone().with_mode(SimMode::Exact)).unwrap();
        let expected: u64 = exact.counts[..20].iter().sum();
        assert_eq!(exact.draws, expected);
        let fast = simulate_path(&law, &cfg).unwrap();
        assert_eq!(fast.draws, 20);
    }

    #[test]
    fn coupled_sandwich_and_no_density_dependence() {
        let law = OffspringLaw::binary_split(0.5, 1.0).unwrap();
        let cfg = SimConfig::new(&law, 1e4, 2).with_mode(SimMode::Exact);
        for r in 0..50 {
            let c = simulate_coupled_replicate(&law, &cfg, r, 18).unwrap();
            assert_eq!(c.sandwich_violations(), 0);
        }
        let flat = doubling(0.0);
        let cfg = SimConfig::new(&flat, 1e4, 1).with_mode(SimMode::Exact);
        let c = simulate_coupled(&flat, &cfg).unwrap();
        assert_eq!(c.population, c.comparison);
        assert_eq!(c.population, c.lower);
    }

    #[test]
    fn coupled_rejects_fast_mode() {
        let law = bh();
        let cfg = SimConfig::new(&law, 1e4, 1);
        assert!(simulate_coupled(&law, &cfg).is_err());
    }

    #[test]
    fn martingale_trace_is_exact_by_construction() {
        let law = OffspringLaw::binary_split(0.5, 1.0).unwrap();
        let cfg = SimConfig::new(&law, 1e3, 10).with_n_max(15);
        let path = simulate_path(&law, &cfg).unwrap();
        let trace = decompose_martingale(&path, &law, 1e3);
        for n in 1..=15 {
            let x_prev = path.density(n - 1);
            let rebuilt = law.density_map(x_prev, 1e3) + trace.increments[n - 1] / 1e3f64.sqrt();
            assert!((rebuilt - path.density(n)).abs() < 1e-12);
        }
        let det = doubling(0.0);
        let path = simulate_path(&det, &SimConfig::new(&det, 1e3, 3).with_n_max(8)).unwrap();
        assert!(decompose_martingale(&path, &det, 1e3)
            .increments
            .iter()
            .all(|&e| e == 0.0));
    }

    #[test]
    fn replicate_is_reproducible_and_matches_single_paths() {
        let law = bh();
        let cfg = SimConfig::new(&law, 1e4, 1).with_seed(99);
        let a = replicate(
            &law,
            &cfg,
            64,
            Observable::Density,
            GenerationIndex::Detection,
        )
        .unwrap();
        let b = replicate(
            &law,
            &cfg,
            64,
            Observable::Density,
            GenerationIndex::Detection,
        )
        .unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let one = replicate(
            &law,
            &cfg,
            1,
            Observable::Count,
            GenerationIndex::Absolute(7),
        )
        .unwrap();
        let path = simulate_path(&law, &cfg).unwrap();
        assert_eq!(one[0], path.counts[7] as f64);
    }

    #[test]
    fn one_step_mean_matches_offspring_mean() {
        let law = bh();
        let k = 1e3;
        let z = 400;
        let cfg = SimConfig::new(&law, k, z).with_seed(5);
        let draws = replicate(
            &law,
            &cfg,
            100_000,
            Observable::Count,
            GenerationIndex::Absolute(1),
        )
        .unwrap();
        let expect = z as f64 * law.offspring_mean(z as f64 / k, k);
        let se = stats::std_error(&draws);
        assert!((stats::mean(&draws) - expect).abs() < 4.0 * se);
    }

    #[test]
    fn tabulated_fast_mode_falls_back_to_exact() {
        use crate::repro_laws::OffspringTable;
        let table = OffspringTable::new(vec![0.0], vec![vec![0.2, 0.3, 0.5]]).unwrap();
        let law = OffspringLaw::tabulated(table).unwrap();
        let cfg = SimConfig::new(&law, 1e3, 3).with_n_max(16);
        let fast = simulate_fast(&law, &cfg).unwrap();
        assert_eq!(fast.draws, fast.counts[..16].iter().sum::<u64>());
        assert!(law.offspring_mean(0.0, UNBOUNDED) > 1.0);
    }

    #[test]
    fn overflow_is_detected() {
        let law = OffspringLaw::beverton_holt_poisson(50.0, 1e-30).unwrap();
        let cfg = SimConfig::new(&law, 1e30, 1)
            .with_n_max(20)
            .with_exponents(0.6, 0.8);
        let err = simulate_replicate(&law, &cfg, 0, 20).unwrap_err();
        assert!(matches!(err, Error::Overflow { .. }), "{err}");
    }
}
