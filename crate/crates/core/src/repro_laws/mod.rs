//! Offspring laws: the conditional reproduction of one individual given the
//! current density `x = Z / K` and the capacity `K`.
//!
//! Every family here is stochastically decreasing in `x` and increasing in
//! `K`. Capacity is an `f64`; `f64::INFINITY` selects the limiting law.

mod assumptions;
mod table;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use assumptions::{
    default_k_grid, default_x_grid, validate_assumptions, AssumptionCheck, AssumptionReport,
    CheckStatus, Witness,
};
pub use table::OffspringTable;

/// Limiting capacity.
pub const UNBOUNDED: f64 = f64::INFINITY;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Each individual leaves one or two copies; two with probability
    /// `p0 / (1 + beta x)`. No extinction.
    BinarySplit { p0: f64, beta: f64 },
    /// Poisson offspring with mean `a / (1 + b x)`.
    BevertonHoltPoisson { a: f64, b: f64 },
    /// Explicit pmf per density knot.
    UserTabulated { table: OffspringTable },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LawRepr")]
pub struct OffspringLaw {
    #[serde(flatten)]
    family: Family,
    /// Finite-capacity depression of the mean: the mean-defining parameter
    /// is multiplied by `1 - kappa / sqrt(K)`.
    kappa: f64,
}

#[derive(Deserialize)]
struct LawRepr {
    #[serde(flatten)]
    family: Family,
    #[serde(default)]
    kappa: f64,
}

impl TryFrom<LawRepr> for OffspringLaw {
    type Error = Error;

    fn try_from(repr: LawRepr) -> Result<Self> {
        OffspringLaw::new(repr.family, repr.kappa)
    }
}

impl OffspringLaw {
    pub fn new(family: Family, kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::invalid("kappa", "must be finite and >= 0"));
        }
        match &family {
            Family::BinarySplit { p0, beta } => {
                if !(*p0 > 0.0 && *p0 <= 1.0) {
                    return Err(Error::invalid("p0", "must lie in (0, 1]"));
                }
                if !(beta.is_finite() && *beta >= 0.0) {
                    return Err(Error::invalid("beta", "must be finite and >= 0"));
                }
            }
            Family::BevertonHoltPoisson { a, b } => {
                if !(a.is_finite() && *a > 1.0) {
                    return Err(Error::invalid("a", "a must exceed 1"));
                }
                if !(b.is_finite() && *b > 0.0) {
                    return Err(Error::invalid("b", "must be finite and > 0"));
                }
            }
            Family::UserTabulated { table } => {
                if kappa != 0.0 {
                    return Err(Error::invalid(
                        "kappa",
                        "tabulated laws have no mean-defining parameter; kappa must be 0",
                    ));
                }
                if table.mean_at_knot(0) <= 1.0 {
                    return Err(Error::invalid("a", "a must exceed 1 (mean at x = 0)"));
                }
            }
        }
        Ok(OffspringLaw { family, kappa })
    }

    pub fn binary_split(p0: f64, beta: f64) -> Result<Self> {
        Self::new(Family::BinarySplit { p0, beta }, 0.0)
    }

    pub fn beverton_holt_poisson(a: f64, b: f64) -> Result<Self> {
        Self::new(Family::BevertonHoltPoisson { a, b }, 0.0)
    }

    pub fn tabulated(table: OffspringTable) -> Result<Self> {
        Self::new(Family::UserTabulated { table }, 0.0)
    }

    pub fn with_kappa(self, kappa: f64) -> Result<Self> {
        Self::new(self.family, kappa)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::BinarySplit { .. } => "binary_split",
            Family::BevertonHoltPoisson { .. } => "beverton_holt_poisson",
            Family::UserTabulated { .. } => "user_tabulated",
        }
    }

    pub fn is_tabulated(&self) -> bool {
        matches!(self.family, Family::UserTabulated { .. })
    }

    /// Largest possible offspring count, `None` when unbounded.
    pub fn support_max(&self) -> Option<u64> {
        match &self.family {
            Family::BinarySplit { .. } => Some(2),
            Family::BevertonHoltPoisson { .. } => None,
            Family::UserTabulated { table } => Some(table.support_max()),
        }
    }

    /// Multiplier applied to the mean-defining parameter at capacity `k`.
    pub fn depression(&self, k: f64) -> f64 {
        if self.kappa == 0.0 || k.is_infinite() {
            1.0
        } else {
            (1.0 - self.kappa / k.sqrt()).max(0.0)
        }
    }

    /// Mean offspring at zero density in the limit law; the growth base.
    pub fn malthusian(&self) -> f64 {
        self.offspring_mean(0.0, UNBOUNDED)
    }

    pub fn conditional(&self, x: f64, k: f64) -> Conditional<'_> {
        debug_assert!(x >= 0.0, "density must be non-negative");
        let d = self.depression(k);
        match &self.family {
            Family::BinarySplit { p0, beta } => Conditional::Binary {
                p: p0 * d / (1.0 + beta * x),
            },
            Family::BevertonHoltPoisson { a, b } => Conditional::Poisson {
                mean: a * d / (1.0 + b * x),
            },
            Family::UserTabulated { table } => Conditional::Table {
                pmf: table.pmf_at(x),
            },
        }
    }

    /// The asymptotic reproduction law (`x = 0`, `K = ∞`) driving the
    /// comparison Galton-Watson process.
    pub fn limit_conditional(&self) -> Conditional<'_> {
        self.conditional(0.0, UNBOUNDED)
    }

    pub fn offspring_mean(&self, x: f64, k: f64) -> f64 {
        self.conditional(x, k).mean()
    }

    pub fn offspring_variance(&self, x: f64, k: f64) -> f64 {
        self.conditional(x, k).variance()
    }

    /// Generalised inverse CDF of the conditional offspring law at `u`.
    pub fn sample_offspring(&self, x: f64, k: f64, u: f64) -> u64 {
        self.conditional(x, k).quantile(u)
    }

    /// Derivative of the mean in `x`. Tabulated laws are piecewise constant,
    /// so this is zero there.
    pub fn mean_derivative(&self, x: f64, k: f64) -> f64 {
        let d = self.depression(k);
        match &self.family {
            Family::BinarySplit { p0, beta } => -p0 * d * beta / (1.0 + beta * x).powi(2),
            Family::BevertonHoltPoisson { a, b } => -a * d * b / (1.0 + b * x).powi(2),
            Family::UserTabulated { .. } => 0.0,
        }
    }

    /// Expected next density given density `x`: `x m^K(x)`.
    pub fn density_map(&self, x: f64, k: f64) -> f64 {
        x * self.offspring_mean(x, k)
    }

    pub fn density_map_derivative(&self, x: f64, k: f64) -> f64 {
        self.offspring_mean(x, k) + x * self.mean_derivative(x, k)
    }

    /// Positive root of `m(x) = 1` for the limit law, if the mean ever drops
    /// to one.
    pub fn positive_fixed_point(&self) -> Option<f64> {
        if let Family::BevertonHoltPoisson { a, b } = self.family {
            return Some((a - 1.0) / b);
        }
        let excess = |x: f64| self.offspring_mean(x, UNBOUNDED) - 1.0;
        let mut hi = 1.0;
        while excess(hi) > 0.0 {
            hi *= 2.0;
            if hi > 1e12 {
                return None;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

/// The offspring distribution of one individual at a given state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Conditional<'a> {
    /// Values 1 or 2; `p = P(2)`.
    Binary {
        p: f64,
    },
    Poisson {
        mean: f64,
    },
    Table {
        pmf: &'a [f64],
    },
}

impl Conditional<'_> {
    pub fn mean(&self) -> f64 {
        match *self {
            Conditional::Binary { p } => 1.0 + p,
            Conditional::Poisson { mean } => mean,
            Conditional::Table { pmf } => pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Conditional::Binary { p } => p * (1.0 - p),
            Conditional::Poisson { mean } => mean,
            Conditional::Table { pmf } => {
                let m = self.mean();
                pmf.iter()
                    .enumerate()
                    .map(|(k, p)| p * (k as f64 - m).powi(2))
                    .sum()
            }
        }
    }

    /// `P(ξ <= k)`.
    pub fn cdf(&self, k: u64) -> f64 {
        match *self {
            Conditional::Binary { p } => match k {
                0 => 0.0,
                1 => 1.0 - p,
                _ => 1.0,
            },
            Conditional::Poisson { mean } => {
                let mut term = (-mean).exp();
                let mut cum = term;
                for j in 1..=k {
                    term *= mean / j as f64;
                    cum += term;
                    if term == 0.0 && j as f64 > mean {
                        break;
                    }
                }
                cum.min(1.0)
            }
            Conditional::Table { pmf } => {
                let upto = (k as usize).min(pmf.len().saturating_sub(1));
                pmf[..=upto].iter().sum::<f64>().min(1.0)
            }
        }
    }

    /// Probability generating function `E[s^ξ]`.
    pub fn pgf(&self, s: f64) -> f64 {
        match *self {
            Conditional::Binary { p } => (1.0 - p) * s + p * s * s,
            Conditional::Poisson { mean } => (mean * (s - 1.0)).exp(),
            Conditional::Table { pmf } => pmf.iter().rev().fold(0.0, |acc, p| acc * s + p),
        }
    }

    /// `min { k : P(ξ <= k) >= u, P(ξ = k) > 0 }`.
    pub fn quantile(&self, u: f64) -> u64 {
        match *self {
            Conditional::Binary { p } => {
                if p < 1.0 && u <= 1.0 - p {
                    1
                } else {
                    2
                }
            }
            Conditional::Poisson { mean } => {
                if mean <= 0.0 {
                    return 0;
                }
                let mut k = 0u64;
                let mut term = (-mean).exp();
                let mut cum = term;
                while cum < u {
                    k += 1;
                    term *= mean / k as f64;
                    cum += term;
                    if term == 0.0 && k as f64 > mean {
                        break;
                    }
                }
                k
            }
            Conditional::Table { pmf } => {
                let mut cum = 0.0;
                let mut last = 0;
                for (k, &p) in pmf.iter().enumerate() {
                    if p <= 0.0 {
                        continue;
                    }
                    cum += p;
                    last = k;
                    if cum >= u {
                        return k as u64;
                    }
                }
                last as u64
            }
        }
    }

    /// Cumulative thresholds over the positive-mass support, for repeated
    /// quantile lookups within one generation.
    pub fn thresholds(&self) -> Thresholds {
        let mut steps = Vec::new();
        match *self {
            Conditional::Binary { p } => {
                if p < 1.0 {
                    steps.push((1, 1.0 - p));
                }
                if p > 0.0 {
                    steps.push((2, 1.0));
                }
            }
            Conditional::Poisson { mean } => {
                if mean <= 0.0 {
                    steps.push((0, 1.0));
                } else {
                    let mut term = (-mean).exp();
                    let mut cum = term;
                    let mut k = 0u64;
                    if term > 0.0 {
                        steps.push((0, cum));
                    }
                    while cum < 1.0 - 1e-15 {
                        k += 1;
                        term *= mean / k as f64;
                        if term == 0.0 && k as f64 > mean {
                            break;
                        }
                        cum += term;
                        if term > 0.0 {
                            steps.push((k, cum));
                        }
                    }
                }
            }
            Conditional::Table { pmf } => {
                let mut cum = 0.0;
                for (k, &p) in pmf.iter().enumerate() {
                    if p > 0.0 {
                        cum += p;
                        steps.push((k as u64, cum));
                    }
                }
            }
        }
        if let Some(last) = steps.last_mut() {
            last.1 = 1.0;
        }
        Thresholds { steps }
    }
}

/// `(k, P(ξ <= k))` for every `k` of positive mass; the final entry is
/// pinned to one.
#[derive(Clone, Debug)]
pub struct Thresholds {
    steps: Vec<(u64, f64)>,
}

impl Thresholds {
    #[inline]
    pub fn quantile(&self, u: f64) -> u64 {
        for &(k, t) in &self.steps {
            if u <= t {
                return k;
            }
        }
        self.steps.last().map_or(0, |s| s.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bh(a: f64, b: f64) -> OffspringLaw {
        OffspringLaw::beverton_holt_poisson(a, b).unwrap()
    }

    fn bs(p0: f64, beta: f64) -> OffspringLaw {
        OffspringLaw::binary_split(p0, beta).unwrap()
    }

    #[test]
    fn means_match_closed_forms() {
        assert_eq!(bh(2.0, 1.0).offspring_mean(0.0, UNBOUNDED), 2.0);
        assert_eq!(
            bh(2.0, 1.0).offspring_mean(1.0, UNBOUNDED),
            2.0 / (1.0 + 1.0)
        );
        for x in [0.0, 0.3, 5.0] {
            assert_eq!(bs(0.5, 0.0).offspring_mean(x, UNBOUNDED), 1.0 + 0.5);
        }
    }

    #[test]
    fn variances_match_closed_forms() {
        assert_eq!(bs(1.0, 0.0).offspring_variance(0.0, UNBOUNDED), 0.0);
        assert_eq!(bs(0.5, 0.0).offspring_variance(0.0, UNBOUNDED), 0.5 * 0.5);
        assert_eq!(bh(2.0, 1.0).offspring_variance(1.0, UNBOUNDED), 1.0);
    }

    #[test]
    fn quantiles_follow_thresholds() {
        for u in [0.0, 0.1, 0.5, 0.99, 1.0] {
            assert_eq!(bs(1.0, 0.0).sample_offspring(0.7, 100.0, u), 2);
        }
        let law = bs(0.5, 0.0);
        assert_eq!(law.sample_offspring(0.0, UNBOUNDED, 0.9), 2);
        assert_eq!(law.sample_offspring(0.0, UNBOUNDED, 0.3), 1);
        assert_eq!(law.sample_offspring(0.0, UNBOUNDED, 0.5), 1);
        // zero lies in the support of the Poisson law
        assert_eq!(bh(2.0, 1.0).sample_offspring(0.0, UNBOUNDED, 0.0), 0);
        assert_eq!(
            bh(2.0, 1.0).sample_offspring(0.0, UNBOUNDED, (-2.0f64).exp()),
            0
        );
        assert_eq!(
            bh(2.0, 1.0).sample_offspring(0.0, UNBOUNDED, (-2.0f64).exp() + 1e-9),
            1
        );
    }

    #[test]
    fn thresholds_agree_with_direct_quantile() {
        let law = bh(3.0, 0.5);
        let cond = law.conditional(0.4, 1e4);
        let t = cond.thresholds();
        for i in 1..=1000 {
            let u = i as f64 / 1000.0 - 1e-7;
            assert_eq!(t.quantile(u), cond.quantile(u), "u = {u}");
        }
    }

    #[test]
    fn construction_rejects_bad_parameters() {
        assert!(OffspringLaw::binary_split(0.0, 1.0).is_err());
        assert!(OffspringLaw::binary_split(1.2, 1.0).is_err());
        assert!(OffspringLaw::binary_split(0.5, -1.0).is_err());
        assert!(OffspringLaw::beverton_holt_poisson(1.0, 1.0).is_err());
        assert!(OffspringLaw::beverton_holt_poisson(2.0, 0.0).is_err());
        assert!(bh(2.0, 1.0).with_kappa(-0.1).is_err());
    }

    #[test]
    fn kappa_depresses_the_mean_at_finite_capacity() {
        let law = bh(2.0, 1.0).with_kappa(3.0).unwrap();
        assert_eq!(law.offspring_mean(0.0, UNBOUNDED), 2.0);
        let k: f64 = 1e4;
        assert!((law.offspring_mean(0.0, k) - 2.0 * (1.0 - 3.0 / 100.0)).abs() < 1e-15);
        assert_eq!(law.depression(1.0), 0.0);
    }

    #[test]
    fn generating_functions_are_consistent_with_means() {
        for law in [bh(2.0, 1.0), bs(0.5, 1.0)] {
            let c = law.limit_conditional();
            assert!((c.pgf(1.0) - 1.0).abs() < 1e-15);
            let h = 1e-6;
            let slope = (c.pgf(1.0) - c.pgf(1.0 - h)) / h;
            assert!((slope - c.mean()).abs() < 1e-4);
        }
    }

    #[test]
    fn fixed_points() {
        assert_eq!(bh(2.0, 1.0).positive_fixed_point(), Some(1.0));
        assert_eq!(bs(0.5, 1.0).positive_fixed_point(), None);
    }

    #[test]
    fn law_serde_round_trip_validates() {
        let law = bh(2.0, 1.0).with_kappa(0.5).unwrap();
        let json = serde_json::to_string(&law).unwrap();
        let back: OffspringLaw = serde_json::from_str(&json).unwrap();
        assert_eq!(law, back);
        let bad = r#"{"family":"beverton_holt_poisson","a":0.5,"b":1.0}"#;
        assert!(serde_json::from_str::<OffspringLaw>(bad).is_err());
    }
}
