//! The martingale limit `W(z0) = lim Z~_n / a^n` of the comparison
//! Galton-Watson process, which reproduces with the zero-density,
//! infinite-capacity offspring law throughout.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repro_laws::OffspringLaw;
use crate::rng::{tag, StreamKey};
use crate::simulator::step_multinomial;

pub const DEFAULT_TRUNCATION: u32 = 30;
const EXTINCTION_TOL: f64 = 1e-12;
const EXTINCTION_MAX_ITER: usize = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WSample {
    pub replicate: u64,
    /// `Z~_{n_trunc} / a^{n_trunc}`
    pub value: f64,
    pub n_trunc: u32,
    pub z0: u64,
}

fn check_args(law: &OffspringLaw, z0: u64) -> Result<f64> {
    let a = law.malthusian();
    if !(a > 1.0) {
        return Err(Error::invalid(
            "law",
            format!("a = {a} is not supercritical"),
        ));
    }
    if z0 == 0 {
        return Err(Error::invalid("z0", "must be >= 1"));
    }
    Ok(a)
}

/// `Z~_n / a^n` for `n = 0..=n_trunc` along one comparison path.
/// Paths with the same `(seed, replicate)` share their prefix, so a longer
/// truncation extends rather than redraws the path.
pub fn normalized_path(
    law: &OffspringLaw,
    z0: u64,
    n_trunc: u32,
    seed: u64,
    replicate: u64,
) -> Result<Vec<f64>> {
    let a = check_args(law, z0)?;
    let cond = law.limit_conditional();
    let mut out = Vec::with_capacity(n_trunc as usize + 1);
    out.push(z0 as f64);
    let mut z = z0;
    for n in 1..=n_trunc {
        if z > 0 {
            let key = StreamKey::new(seed, tag::COMPARISON, replicate, n as u64);
            z = step_multinomial(&cond, z, &key, n as usize)?;
        }
        out.push(z as f64 / a.powi(n as i32));
    }
    Ok(out)
}

/// Advance a comparison count from generation `from` to `to`.
pub(crate) fn advance_comparison(
    law: &OffspringLaw,
    mut z: u64,
    from: u32,
    to: u32,
    key_for: impl Fn(u64) -> StreamKey,
) -> Result<u64> {
    let cond = law.limit_conditional();
    for n in from + 1..=to {
        if z == 0 {
            break;
        }
        z = step_multinomial(&cond, z, &key_for(n as u64), n as usize)?;
    }
    Ok(z)
}

/// `replicates` independent approximants of `W(z0)`; extinct paths give 0.
pub fn sample_w(
    law: &OffspringLaw,
    z0: u64,
    n_trunc: u32,
    seed: u64,
    replicates: usize,
) -> Result<Vec<WSample>> {
    check_args(law, z0)?;
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let path = normalized_path(law, z0, n_trunc, seed, r)?;
            Ok(WSample {
                replicate: r,
                value: path[n_trunc as usize],
                n_trunc,
                z0,
            })
        })
        .collect()
}

pub fn values(samples: &[WSample]) -> Vec<f64> {
    samples.iter().map(|s| s.value).collect()
}

/// `(z0, z0 sigma^2(0) / (a^2 - a))`.
pub fn w_moments(law: &OffspringLaw, z0: u64) -> (f64, f64) {
    let a = law.malthusian();
    let s2 = law.limit_conditional().variance();
    let z = z0 as f64;
    (z, z * s2 / (a * a - a))
}

/// Smallest fixed point of the limit offspring generating function.
pub fn extinction_probability(law: &OffspringLaw) -> Result<f64> {
    let cond = law.limit_conditional();
    let mut s = 0.0;
    let mut gap = f64::INFINITY;
    for _ in 0..EXTINCTION_MAX_ITER {
        let next = cond.pgf(s);
        gap = (next - s).abs();
        s = next;
        if gap < EXTINCTION_TOL {
            return Ok(s);
        }
    }
    Err(Error::NoConvergence {
        iterations: EXTINCTION_MAX_ITER,
        gap,
    })
}

/// Mass of the atom of `W(z0)` at zero.
pub fn extinction_atom(law: &OffspringLaw, z0: u64) -> Result<f64> {
    Ok(extinction_probability(law)?.powi(z0 as i32))
}
