use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repro_laws::OffspringLaw;
use crate::rng::{derive_seed, tag, CounterRng};
use crate::schroeder::{h_eval, h_inverse, SchroederH};
use crate::simulator::detection_generation;
use crate::stats;
use crate::wlimit::{self, sample_w};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMode {
    /// Invert `h` at the median observation; needs deterministic `W`.
    #[default]
    Deterministic,
    /// Every `z` whose simulated median envelope contains the observed median.
    Interval,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Z0Estimate {
    Point { z0: u64 },
    Set { candidates: Vec<u64> },
    Undefined { reason: String },
}

impl Z0Estimate {
    fn extinct() -> Self {
        Z0Estimate::Undefined {
            reason: "extinct or pre-detection".into(),
        }
    }

    pub fn contains(&self, z: u64) -> bool {
        match self {
            Z0Estimate::Point { z0 } => *z0 == z,
            Z0Estimate::Set { candidates } => candidates.contains(&z),
            Z0Estimate::Undefined { .. } => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntervalParams {
    /// Largest candidate initial count.
    pub z_max: u64,
    pub reference_size: usize,
    pub bootstrap: usize,
    /// Envelopes span the `alpha/2` and `1 - alpha/2` quantiles.
    pub alpha: f64,
    pub seed: u64,
    pub n_trunc: u32,
}

impl Default for IntervalParams {
    fn default() -> Self {
        IntervalParams {
            z_max: 30,
            reference_size: 2000,
            bootstrap: 1000,
            alpha: 0.05,
            seed: 0,
            n_trunc: wlimit::DEFAULT_TRUNCATION,
        }
    }
}

/// `a^floor(log_a K) / K`: `X_{floor(log_a K)}` is close to `h(W s)`.
fn detection_scale(law: &OffspringLaw, capacity: f64) -> f64 {
    let a = law.malthusian();
    a.powi(detection_generation(a, capacity) as i32) / capacity
}

fn observed_median(observations: &[f64], h: &SchroederH) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::EmptySample);
    }
    let top = h.sup();
    if let Some(&bad) = observations.iter().find(|&&x| !(0.0..=top).contains(&x)) {
        return Err(Error::OutOfRange {
            value: bad,
            lo: 0.0,
            hi: top,
        });
    }
    Ok(stats::median(observations))
}

/// Median envelopes of `h(W(z) s)` for `z = 1..=z_max`, for a fixed number
/// of observations. Reusable across observation sets of that size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalRecovery {
    pub capacity: f64,
    pub scale: f64,
    pub observations: usize,
    /// `(z, lower, upper)`
    pub envelopes: Vec<(u64, f64, f64)>,
}

impl IntervalRecovery {
    pub fn build(
        law: &OffspringLaw,
        h: &SchroederH,
        capacity: f64,
        observations: usize,
        p: &IntervalParams,
    ) -> Result<Self> {
        if observations == 0 {
            return Err(Error::EmptySample);
        }
        if p.z_max == 0 || p.reference_size == 0 || p.bootstrap == 0 {
            return Err(Error::invalid(
                "interval",
                "z_max, reference_size and bootstrap must be >= 1",
            ));
        }
        if !(p.alpha > 0.0 && p.alpha < 1.0) {
            return Err(Error::invalid("alpha", "must lie in (0, 1)"));
        }
        let s = detection_scale(law, capacity);
        let mut envelopes = Vec::with_capacity(p.z_max as usize);
        for z in 1..=p.z_max {
            let w = sample_w(
                law,
                z,
                p.n_trunc,
                derive_seed(p.seed, tag::W_REFERENCE, z),
                p.reference_size,
            )?;
            let reference: Vec<f64> = wlimit::values(&w)
                .iter()
                .map(|&w| h_eval(h, w * s))
                .collect::<Result<_>>()?;
            let mut rng = CounterRng::from_seed(derive_seed(p.seed, tag::BOOTSTRAP, z));
            let mut draw = vec![0.0; observations];
            let mut medians: Vec<f64> = (0..p.bootstrap)
                .map(|_| {
                    for d in draw.iter_mut() {
                        *d = reference[rng.random_range(0..reference.len())];
                    }
                    stats::median(&draw)
                })
                .collect();
            medians.sort_by(f64::total_cmp);
            envelopes.push((
                z,
                stats::quantile_sorted(&medians, p.alpha / 2.0),
                stats::quantile_sorted(&medians, 1.0 - p.alpha / 2.0),
            ));
        }
        Ok(IntervalRecovery {
            capacity,
            scale: s,
            observations,
            envelopes,
        })
    }

    pub fn estimate(&self, observations: &[f64], h: &SchroederH) -> Result<Z0Estimate> {
        if observations.len() != self.observations {
            return Err(Error::invalid(
                "observations",
                format!(
                    "envelopes were built for {} observations, got {}",
                    self.observations,
                    observations.len()
                ),
            ));
        }
        let med = observed_median(observations, h)?;
        if med == 0.0 {
            return Ok(Z0Estimate::extinct());
        }
        let candidates = self
            .envelopes
            .iter()
            .filter(|(_, lo, hi)| (*lo..=*hi).contains(&med))
            .map(|(z, _, _)| *z)
            .collect();
        Ok(Z0Estimate::Set { candidates })
    }
}

/// Estimate the initial count from densities observed at `floor(log_a K)`.
pub fn recover_z0(
    observations: &[f64],
    h: &SchroederH,
    law: &OffspringLaw,
    capacity: f64,
    mode: RecoveryMode,
    params: &IntervalParams,
) -> Result<Z0Estimate> {
    match mode {
        RecoveryMode::Deterministic => {
            if law.limit_conditional().variance() > 0.0 {
                return Err(Error::invalid(
                    "mode",
                    "deterministic recovery needs zero offspring variance at density 0; use interval mode",
                ));
            }
            let med = observed_median(observations, h)?;
            if med == 0.0 {
                return Ok(Z0Estimate::extinct());
            }
            let z = (h_inverse(h, med)? / detection_scale(law, capacity)).round();
            if z < 1.0 {
                return Ok(Z0Estimate::extinct());
            }
            Ok(Z0Estimate::Point { z0: z as u64 })
        }
        RecoveryMode::Interval => {
            IntervalRecovery::build(law, h, capacity, observations.len(), params)?
                .estimate(observations, h)
        }
    }
}
