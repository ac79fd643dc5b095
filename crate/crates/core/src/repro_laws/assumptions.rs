//! Grid-based validation of the regularity conditions the limit theorems
//! need from an offspring law.
//!
//! Each check reports `verified-on-grid`, `violated` with a witness point, or
//! `not-checkable`. Checks never abort; only malformed grids are rejected.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{OffspringLaw, UNBOUNDED};
use crate::error::{Error, Result};
use crate::stats::linear_fit;

const CDF_SLACK: f64 = 1e-12;
const PROPER_TOL: f64 = 1e-9;
/// Largest log-log slope accepted as an `O(1/sqrt K)` rate.
const RATE_SLOPE_MAX: f64 = -0.45;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub x: f64,
    /// `None` means the limiting law.
    pub capacity: Option<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum CheckStatus {
    VerifiedOnGrid,
    Violated { witness: Witness },
    NotCheckable { reason: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub description: &'static str,
    pub status: CheckStatus,
    pub measured: BTreeMap<&'static str, f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub law: OffspringLaw,
    pub x_grid: Vec<f64>,
    pub k_grid: Vec<f64>,
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// True when no check is violated.
    pub fn passed(&self) -> bool {
        !self
            .checks
            .iter()
            .any(|c| matches!(c.status, CheckStatus::Violated { .. }))
    }

    pub fn violations(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks
            .iter()
            .filter(|c| matches!(c.status, CheckStatus::Violated { .. }))
    }
}

/// `[0, 2 x*]` with 201 points, or `[0, 10]` when the mean never reaches one.
pub fn default_x_grid(law: &OffspringLaw) -> Vec<f64> {
    let upper = law.positive_fixed_point().map_or(10.0, |x| 2.0 * x);
    (0..201).map(|i| upper * i as f64 / 200.0).collect()
}

/// Six decades, `10^1 ..= 10^6`.
pub fn default_k_grid() -> Vec<f64> {
    (1..=6).map(|e| 10f64.powi(e)).collect()
}

pub fn validate_assumptions(
    law: &OffspringLaw,
    x_grid: &[f64],
    k_grid: &[f64],
) -> Result<AssumptionReport> {
    check_grid("x_grid", x_grid, 0.0)?;
    check_grid("k_grid", k_grid, 1.0)?;
    if x_grid.len() < 2 {
        return Err(Error::invalid("x_grid", "needs at least two points"));
    }
    let caps: Vec<f64> = k_grid.iter().copied().chain([UNBOUNDED]).collect();
    let checks = vec![
        stochastic_ordering(law, x_grid, &caps),
        mean_smoothness(law, x_grid),
        capacity_convergence(law, x_grid, k_grid),
        increasing_density_map(law, x_grid),
        AssumptionCheck {
            name: "initial_density",
            description: "initial density converges as K grows",
            status: CheckStatus::NotCheckable {
                reason: "a property of the initial condition, not of the offspring law".into(),
            },
            measured: BTreeMap::new(),
        },
        bounded_variance(law, x_grid, k_grid),
        capacity_rate(law, x_grid, k_grid),
    ];
    Ok(AssumptionReport {
        law: law.clone(),
        x_grid: x_grid.to_vec(),
        k_grid: k_grid.to_vec(),
        checks,
    })
}

fn check_grid(name: &str, grid: &[f64], min: f64) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid(name, "must be non-empty"));
    }
    if grid.iter().any(|v| !v.is_finite() || *v < min) {
        return Err(Error::invalid(
            name,
            format!("values must be finite and >= {min}"),
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(name, "must be strictly increasing"));
    }
    Ok(())
}

fn cap_label(k: f64) -> Option<f64> {
    k.is_finite().then_some(k)
}

fn violated(x: f64, k: f64, detail: String) -> CheckStatus {
    CheckStatus::Violated {
        witness: Witness {
            x,
            capacity: cap_label(k),
            detail,
        },
    }
}

/// Offspring counts beyond which every grid law has negligible mass.
fn top_count(law: &OffspringLaw) -> u64 {
    law.support_max().unwrap_or_else(|| {
        let c = law.limit_conditional();
        (c.mean() + 12.0 * c.variance().sqrt() + 20.0).ceil() as u64
    })
}

fn cdf_vector(law: &OffspringLaw, x: f64, k: f64, top: u64) -> Vec<f64> {
    let c = law.conditional(x, k);
    (0..=top).map(|j| c.cdf(j)).collect()
}

/// First-order stochastic dominance: CDFs rise with `x` and fall with `K`.
fn stochastic_ordering(law: &OffspringLaw, xs: &[f64], caps: &[f64]) -> AssumptionCheck {
    let top = top_count(law);
    let mut status = CheckStatus::VerifiedOnGrid;
    let mut worst_gap = 0.0f64;
    let table: Vec<Vec<Vec<f64>>> = caps
        .iter()
        .map(|&k| xs.iter().map(|&x| cdf_vector(law, x, k, top)).collect())
        .collect();

    'scan: for (ci, &k) in caps.iter().enumerate() {
        for (xi, &x) in xs.iter().enumerate() {
            let cdf = &table[ci][xi];
            let mass = *cdf.last().unwrap_or(&0.0);
            if (mass - 1.0).abs() > PROPER_TOL {
                status = violated(x, k, format!("improper law: total mass {mass}"));
                break 'scan;
            }
            if xi + 1 < xs.len() {
                let next = &table[ci][xi + 1];
                for (j, (a, b)) in cdf.iter().zip(next).enumerate() {
                    worst_gap = worst_gap.max(a - b);
                    if *b < a - CDF_SLACK {
                        status = violated(
                            xs[xi + 1],
                            k,
                            format!("P(xi <= {j}) drops from {a} to {b} as density rises"),
                        );
                        break 'scan;
                    }
                }
            }
            if ci + 1 < caps.len() {
                let bigger = &table[ci + 1][xi];
                for (j, (a, b)) in cdf.iter().zip(bigger).enumerate() {
                    worst_gap = worst_gap.max(b - a);
                    if *b > a + CDF_SLACK {
                        status = violated(
                            x,
                            caps[ci + 1],
                            format!("P(xi <= {j}) rises from {a} to {b} as capacity grows"),
                        );
                        break 'scan;
                    }
                }
            }
        }
    }
    AssumptionCheck {
        name: "stochastic_ordering",
        description: "offspring law decreases in distribution with density and increases with capacity; limits are proper",
        status,
        measured: BTreeMap::from([("max_order_gap", worst_gap), ("top_count", top as f64)]),
    }
}

/// Modulus of continuity of the finite-difference derivative of `m` on
/// `[0, upper]` at spacing `step`, with the location of the largest jump.
fn derivative_modulus(law: &OffspringLaw, upper: f64, step: f64) -> (f64, f64) {
    let m = |x: f64| law.offspring_mean(x, UNBOUNDED);
    let n = (upper / step).round() as usize;
    let deriv = |x: f64| {
        if x < step {
            (m(x + step) - m(x)) / step
        } else {
            (m(x + step) - m(x - step)) / (2.0 * step)
        }
    };
    let mut prev = deriv(0.0);
    let mut worst = (0.0, 0.0);
    for i in 1..=n {
        let x = i as f64 * step;
        let d = deriv(x);
        let jump = (d - prev).abs();
        if jump > worst.0 {
            worst = (jump, x);
        }
        prev = d;
    }
    worst
}

/// Reading one of the smoothness condition: `a > 1` and `m'` uniformly
/// continuous to the right of the origin. Uniform continuity shows up as a
/// modulus that shrinks when the spacing is halved.
fn mean_smoothness(law: &OffspringLaw, xs: &[f64]) -> AssumptionCheck {
    let a = law.malthusian();
    let upper = xs[(xs.len() / 5).max(1)];
    let step = upper / 64.0;
    let (coarse, _) = derivative_modulus(law, upper, step);
    let (fine, at) = derivative_modulus(law, upper, step / 2.0);
    let status = if a <= 1.0 {
        violated(0.0, UNBOUNDED, format!("a = {a} does not exceed 1"))
    } else if fine > 0.75 * coarse + 1e-9 {
        violated(
            at,
            UNBOUNDED,
            format!("derivative modulus does not shrink under refinement ({coarse:e} -> {fine:e})"),
        )
    } else {
        CheckStatus::VerifiedOnGrid
    };
    AssumptionCheck {
        name: "mean_smoothness",
        description: "a = m(0) > 1 and m' is uniformly continuous near the origin",
        status,
        measured: BTreeMap::from([
            ("a", a),
            ("neighbourhood", upper),
            ("modulus_coarse", coarse),
            ("modulus_fine", fine),
        ]),
    }
}

/// Reading two of the smoothness condition: `0 <= m(x) - m^K(x) <= Cx + o(x)`
/// uniformly in `K`, and `m^K -> m` uniformly.
fn capacity_convergence(law: &OffspringLaw, xs: &[f64], ks: &[f64]) -> AssumptionCheck {
    let mut status = CheckStatus::VerifiedOnGrid;
    let mut c_fit = 0.0f64;
    let mut sups = Vec::with_capacity(ks.len());
    let near = xs[(xs.len() / 5).max(1)];
    'scan: for &k in ks {
        let mut sup = 0.0f64;
        for &x in xs {
            let diff = law.offspring_mean(x, UNBOUNDED) - law.offspring_mean(x, k);
            sup = sup.max(diff.abs());
            if diff < -CDF_SLACK {
                status = violated(x, k, format!("m^K exceeds m by {}", -diff));
                break 'scan;
            }
            if x == 0.0 && diff > CDF_SLACK {
                status = violated(x, k, format!("m(0) - m^K(0) = {diff} is not o(1) at x = 0"));
                break 'scan;
            }
            if x > 0.0 && x <= near {
                c_fit = c_fit.max(diff / x);
            }
        }
        sups.push(sup);
    }
    if status == CheckStatus::VerifiedOnGrid {
        if let Some(i) = sups.windows(2).position(|w| w[1] > w[0] + CDF_SLACK) {
            status = violated(
                f64::NAN,
                ks[i + 1],
                format!("sup |m - m^K| grows from {} to {}", sups[i], sups[i + 1]),
            );
        }
    }
    AssumptionCheck {
        name: "capacity_convergence",
        description: "0 <= m - m^K <= Cx + o(x) uniformly in K, and m^K -> m uniformly",
        status,
        measured: BTreeMap::from([
            ("fitted_c", c_fit),
            ("sup_gap_first", sups.first().copied().unwrap_or(0.0)),
            ("sup_gap_last", sups.last().copied().unwrap_or(0.0)),
        ]),
    }
}

fn increasing_density_map(law: &OffspringLaw, xs: &[f64]) -> AssumptionCheck {
    let f: Vec<f64> = xs.iter().map(|&x| law.density_map(x, UNBOUNDED)).collect();
    let mut status = CheckStatus::VerifiedOnGrid;
    let mut min_rise = f64::INFINITY;
    for (i, w) in f.windows(2).enumerate() {
        let rise = w[1] - w[0];
        min_rise = min_rise.min(rise);
        if rise <= 0.0 && status == CheckStatus::VerifiedOnGrid {
            status = violated(
                xs[i + 1],
                UNBOUNDED,
                format!("f({}) = {} <= f({}) = {}", xs[i + 1], w[1], xs[i], w[0]),
            );
        }
    }
    AssumptionCheck {
        name: "increasing_density_map",
        description: "f(x) = x m(x) is strictly increasing",
        status,
        measured: BTreeMap::from([("min_increment", min_rise)]),
    }
}

fn bounded_variance(law: &OffspringLaw, xs: &[f64], ks: &[f64]) -> AssumptionCheck {
    let mut bound = 0.0f64;
    let mut sups = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut sup = 0.0f64;
        for &x in xs {
            let v = law.offspring_variance(x, k);
            bound = bound.max(v);
            sup = sup.max((v - law.offspring_variance(x, UNBOUNDED)).abs());
        }
        sups.push(sup);
    }
    for &x in xs {
        bound = bound.max(law.offspring_variance(x, UNBOUNDED));
    }
    let status = if !bound.is_finite() {
        violated(
            f64::NAN,
            f64::NAN,
            "variance is not finite on the grid".into(),
        )
    } else if let Some(i) = sups.windows(2).position(|w| w[1] > w[0] + CDF_SLACK) {
        violated(
            f64::NAN,
            ks[i + 1],
            format!(
                "sup |var_K - var| grows from {} to {}",
                sups[i],
                sups[i + 1]
            ),
        )
    } else {
        CheckStatus::VerifiedOnGrid
    };
    AssumptionCheck {
        name: "bounded_variance",
        description: "offspring variance is uniformly bounded and converges uniformly in K",
        status,
        measured: BTreeMap::from([
            ("variance_bound", bound),
            ("sup_gap_last", sups.last().copied().unwrap_or(0.0)),
        ]),
    }
}

/// Log-log slope of `gaps` against `ks`, or `None` when every gap is zero.
fn rate_slope(ks: &[f64], gaps: &[f64]) -> Option<f64> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = ks
        .iter()
        .zip(gaps)
        .filter(|(_, g)| **g > 0.0)
        .map(|(k, g)| (k.ln(), g.ln()))
        .unzip();
    match lx.len() {
        0 => None,
        1 => Some(f64::NAN),
        _ => Some(linear_fit(&lx, &ly).0),
    }
}

/// `a >= m^K(x) = m^K(0) - Cx + o(x)` with `C > 0` uniformly in `K`, and
/// both `a - m^K(0)` and `sup |f^K - f|` of order `1/sqrt K`.
fn capacity_rate(law: &OffspringLaw, xs: &[f64], ks: &[f64]) -> AssumptionCheck {
    let a = law.malthusian();
    let mut status = CheckStatus::VerifiedOnGrid;
    let mut set = |s: CheckStatus| {
        if status == CheckStatus::VerifiedOnGrid {
            status = s;
        }
    };
    let caps: Vec<f64> = ks.iter().copied().chain([UNBOUNDED]).collect();

    for &k in &caps {
        for &x in xs {
            let m = law.offspring_mean(x, k);
            if m > a + CDF_SLACK {
                set(violated(x, k, format!("m^K = {m} exceeds a = {a}")));
            }
        }
    }

    let delta = 1e-6 * xs.last().copied().unwrap_or(1.0).max(1.0);
    let slopes: Vec<f64> = caps
        .iter()
        .map(|&k| (law.offspring_mean(0.0, k) - law.offspring_mean(delta, k)) / delta)
        .collect();
    let c_min = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let c_max = slopes.iter().copied().fold(0.0, f64::max);
    if let Some(i) = slopes.iter().position(|&c| c <= 0.0) {
        set(violated(
            0.0,
            caps[i],
            format!("initial decay rate C = {} is not positive", slopes[i]),
        ));
    }

    let gaps: Vec<f64> = ks.iter().map(|&k| a - law.offspring_mean(0.0, k)).collect();
    if let Some(i) = gaps.iter().position(|&g| g < -CDF_SLACK) {
        set(violated(
            0.0,
            ks[i],
            format!("a - m^K(0) = {} is negative", gaps[i]),
        ));
    }
    let map_gaps: Vec<f64> = ks
        .iter()
        .map(|&k| {
            xs.iter()
                .map(|&x| (law.density_map(x, k) - law.density_map(x, UNBOUNDED)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let gap_slope = rate_slope(ks, &gaps);
    let map_slope = rate_slope(ks, &map_gaps);
    for (label, slope, series) in [
        ("a - m^K(0)", gap_slope, &gaps),
        ("sup |f^K - f|", map_slope, &map_gaps),
    ] {
        if let Some(s) = slope {
            if !(s <= RATE_SLOPE_MAX) {
                let last = *ks.last().unwrap_or(&f64::NAN);
                set(violated(
                    f64::NAN,
                    last,
                    format!(
                        "{label} decays with log-log slope {s}, slower than K^-1/2 (last {:e})",
                        series.last().unwrap_or(&0.0)
                    ),
                ));
            }
        }
    }
    let constant = |series: &[f64]| {
        ks.iter()
            .zip(series)
            .map(|(k, g)| k.sqrt() * g)
            .fold(0.0, f64::max)
    };
    AssumptionCheck {
        name: "capacity_rate",
        description: "a >= m^K(x) = m^K(0) - Cx + o(x) with C > 0; a - m^K(0) and sup|f^K - f| are O(1/sqrt K)",
        status,
        measured: BTreeMap::from([
            ("c_min", c_min),
            ("c_max", c_max),
            ("mean_gap_slope", gap_slope.unwrap_or(0.0)),
            ("mean_gap_constant", constant(&gaps)),
            ("map_gap_slope", map_slope.unwrap_or(0.0)),
            ("map_gap_constant", constant(&map_gaps)),
        ]),
    }
}
