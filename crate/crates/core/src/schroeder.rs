//! The deterministic density map and its Schröder limit.
//!
//! `f(x) = x m(x)` (or `f^K(x) = x m^K(x)`), its iterates `f_n`, and
//! `h(x) = lim f_n(x / a^n)`, tabulated on a uniform grid and interpolated
//! with shape-preserving cubic Hermite segments. `h` solves
//! `h(x) = f(h(x/a))`, is strictly increasing, and maps the martingale limit
//! `W` to the density reached at generation `log_a K`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repro_laws::{OffspringLaw, UNBOUNDED};

/// Iteration cap for `h_n`.
pub const MAX_TRUNCATION: usize = 200;
pub const DEFAULT_KNOTS: usize = 1025;
/// Relative slack allowed in the monotone-decrease check of `h_n`.
const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub struct IteratedMap<'a> {
    law: &'a OffspringLaw,
    capacity: f64,
}

impl<'a> IteratedMap<'a> {
    /// `f(x) = x m(x)`.
    pub fn limit(law: &'a OffspringLaw) -> Self {
        IteratedMap {
            law,
            capacity: UNBOUNDED,
        }
    }

    /// `f^K(x) = x m^K(x)`.
    pub fn at_capacity(law: &'a OffspringLaw, capacity: f64) -> Self {
        IteratedMap { law, capacity }
    }

    pub fn law(&self) -> &'a OffspringLaw {
        self.law
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.law.density_map(x, self.capacity)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.law.density_map_derivative(x, self.capacity)
    }

    /// `f_n(x0)`; `n = 0` is the identity.
    pub fn iterate(&self, x0: f64, n: usize) -> f64 {
        (0..n).fold(x0, |x, _| self.apply(x))
    }

    /// `(f_n(x0), f_n'(x0))` by the chain rule.
    fn iterate_with_slope(&self, x0: f64, n: usize) -> (f64, f64) {
        let mut x = x0;
        let mut d = 1.0;
        for _ in 0..n {
            d *= self.derivative(x);
            x = self.apply(x);
        }
        (x, d)
    }

    /// `f^{-1}(y)` by bisection, `None` when `y` is not attained.
    pub fn inverse(&self, y: f64) -> Option<f64> {
        if y <= 0.0 {
            return (y == 0.0).then_some(0.0);
        }
        let mut hi = y.max(1.0);
        while self.apply(hi) < y {
            hi *= 2.0;
            if hi > 1e15 {
                return None;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.apply(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

/// `f_n(x0)` for the map's variant.
pub fn iterate_f(map: &IteratedMap<'_>, x0: f64, n: usize) -> f64 {
    map.iterate(x0, n)
}

/// Tabulated Schröder limit `h` on `[0, x_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchroederH {
    pub x_max: f64,
    pub values: Vec<f64>,
    /// Hermite slopes after monotonicity limiting.
    pub slopes: Vec<f64>,
    pub n_trunc: usize,
    /// `sup |h_{n_trunc+1} - h_{n_trunc}|` over the knots.
    pub sup_gap: f64,
    pub tol: f64,
    pub a: f64,
}

pub fn compute_h(map: &IteratedMap<'_>, x_max: f64, knots: usize, tol: f64) -> Result<SchroederH> {
    if !(x_max.is_finite() && x_max > 0.0) {
        return Err(Error::invalid("x_max", "must be finite and > 0"));
    }
    if knots < 2 {
        return Err(Error::invalid("knots", "need at least 2"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be > 0"));
    }
    let a = map.law().malthusian();
    let step = x_max / (knots - 1) as f64;
    let grid: Vec<f64> = (0..knots).map(|i| i as f64 * step).collect();
    let mut prev: Vec<f64> = grid.clone();
    let mut gap = f64::INFINITY;

    for n in 1..=MAX_TRUNCATION {
        let scale = a.powi(-(n as i32));
        let current: Vec<(f64, f64)> = grid
            .par_iter()
            .map(|&x| {
                let (v, d) = map.iterate_with_slope(x * scale, n);
                (v, d * scale)
            })
            .collect();
        gap = 0.0;
        for (i, ((v, _), p)) in current.iter().zip(&prev).enumerate() {
            if *v > p + MONOTONE_SLACK * p.abs().max(1.0) {
                return Err(Error::NonMonotone {
                    x: grid[i],
                    n,
                    detail: format!("h_n rose from {p} to {v}"),
                });
            }
            gap = gap.max((v - p).abs());
        }
        let (values, slopes): (Vec<f64>, Vec<f64>) = current.into_iter().unzip();
        if gap < tol {
            if let Some(i) = values.windows(2).position(|w| !(w[1] > w[0])) {
                return Err(Error::invalid(
                    "map",
                    format!("h is not strictly increasing near x = {}", grid[i + 1]),
                ));
            }
            let slopes = limit_slopes(step, &values, slopes);
            return Ok(SchroederH {
                x_max,
                values,
                slopes,
                n_trunc: n - 1,
                sup_gap: gap,
                tol,
                a,
            });
        }
        prev = values;
    }
    Err(Error::NoConvergence {
        iterations: MAX_TRUNCATION,
        gap,
    })
}

/// Fritsch-Carlson limiting so every Hermite segment stays monotone.
fn limit_slopes(step: f64, values: &[f64], mut slopes: Vec<f64>) -> Vec<f64> {
    for i in 0..values.len() - 1 {
        let secant = (values[i + 1] - values[i]) / step;
        if secant <= 0.0 {
            slopes[i] = 0.0;
            slopes[i + 1] = 0.0;
            continue;
        }
        slopes[i] = slopes[i].max(0.0);
        slopes[i + 1] = slopes[i + 1].max(0.0);
        let (alpha, beta) = (slopes[i] / secant, slopes[i + 1] / secant);
        let r = alpha.hypot(beta);
        if r > 3.0 {
            slopes[i] = 3.0 / r * alpha * secant;
            slopes[i + 1] = 3.0 / r * beta * secant;
        }
    }
    slopes
}

/// Finite-difference slopes for tables imported without a slope column.
fn pchip_slopes(step: f64, values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let secants: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]) / step).collect();
    let mut slopes = vec![0.0; n];
    slopes[0] = secants[0];
    slopes[n - 1] = secants[n - 2];
    for i in 1..n - 1 {
        slopes[i] = 0.5 * (secants[i - 1] + secants[i]);
    }
    limit_slopes(step, values, slopes)
}

impl SchroederH {
    pub fn knots(&self) -> usize {
        self.values.len()
    }

    pub fn step(&self) -> f64 {
        self.x_max / (self.values.len() - 1) as f64
    }

    pub fn knot(&self, i: usize) -> f64 {
        i as f64 * self.step()
    }

    pub fn sup(&self) -> f64 {
        *self.values.last().expect("at least two knots")
    }

    /// Build a table from knot values, deriving slopes by finite differences.
    pub fn from_values(
        x_max: f64,
        values: Vec<f64>,
        slopes: Option<Vec<f64>>,
        n_trunc: usize,
        tol: f64,
        a: f64,
    ) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("table", "need at least 2 knots"));
        }
        if values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "table",
                "values must be strictly increasing",
            ));
        }
        let step = x_max / (values.len() - 1) as f64;
        let slopes = match slopes {
            Some(s) if s.len() == values.len() => limit_slopes(step, &values, s),
            Some(_) => return Err(Error::invalid("table", "slope column length mismatch")),
            None => pchip_slopes(step, &values),
        };
        Ok(SchroederH {
            x_max,
            values,
            slopes,
            n_trunc,
            sup_gap: f64::NAN,
            tol,
            a,
        })
    }
}

/// Monotone cubic interpolation of `h`; exact at knots.
pub fn h_eval(h: &SchroederH, x: f64) -> Result<f64> {
    let slack = 1e-12 * h.x_max;
    if !(x >= -slack && x <= h.x_max + slack) {
        return Err(Error::OutOfRange {
            value: x,
            lo: 0.0,
            hi: h.x_max,
        });
    }
    let x = x.clamp(0.0, h.x_max);
    let step = h.step();
    let i = ((x / step).floor() as usize).min(h.values.len() - 2);
    let t = (x - i as f64 * step) / step;
    let (t2, t3) = (t * t, t * t * t);
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    Ok(h00 * h.values[i]
        + h10 * step * h.slopes[i]
        + h01 * h.values[i + 1]
        + h11 * step * h.slopes[i + 1])
}

/// The unique `x` with `h_eval(x) = y`, by bisection to `tol`.
pub fn h_inverse(h: &SchroederH, y: f64) -> Result<f64> {
    let (lo_v, hi_v) = (h.values[0], h.sup());
    if !(y >= lo_v && y <= hi_v) {
        return Err(Error::OutOfRange {
            value: y,
            lo: lo_v,
            hi: hi_v,
        });
    }
    let i = h.values.partition_point(|&v| v < y);
    if i < h.values.len() && h.values[i] == y {
        return Ok(h.knot(i));
    }
    let (mut lo, mut hi) = (h.knot(i - 1), h.knot(i));
    let width = 1e-3 * h.tol;
    for _ in 0..200 {
        if hi - lo <= width {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if h_eval(h, mid)? < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `max |h(x) - f(h(x/a))|` over the knots.
pub fn schroeder_residual(h: &SchroederH, map: &IteratedMap<'_>) -> Result<f64> {
    let mut worst = 0.0f64;
    for (i, v) in h.values.iter().enumerate() {
        let inner = h_eval(h, h.knot(i) / h.a)?;
        worst = worst.max((v - map.apply(inner)).abs());
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Attracting,
    Repelling,
    Neutral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FixedPoint {
    pub x: f64,
    pub slope: f64,
    pub stability: Stability,
}

/// Positive roots of `f(x) = x` on `[lo, hi]`, located by a sign scan and
/// refined by bisection. The trivial root at 0 is excluded.
pub fn fixed_points(map: &IteratedMap<'_>, lo: f64, hi: f64) -> Vec<FixedPoint> {
    const SCAN: usize = 2000;
    let start = lo.max(hi * 1e-9);
    if !(hi > start) {
        return Vec::new();
    }
    let g = |x: f64| map.apply(x) - x;
    let width = (hi - start) / SCAN as f64;
    let mut roots = Vec::new();
    let mut left = start;
    let mut g_left = g(left);
    for i in 1..=SCAN {
        let right = start + i as f64 * width;
        let g_right = g(right);
        if g_right == 0.0 {
            roots.push(right);
        } else if g_left != 0.0 && g_left.signum() != g_right.signum() {
            let (mut a, mut b) = (left, right);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if g(mid).signum() == g_left.signum() {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            roots.push(0.5 * (a + b));
        }
        left = right;
        g_left = g_right;
    }
    roots
        .into_iter()
        .map(|x| {
            let step = 1e-6 * x.max(1.0);
            let slope = (map.apply(x + step) - map.apply(x - step)) / (2.0 * step);
            let stability = if slope.abs() < 1.0 - 1e-6 {
                Stability::Attracting
            } else if slope.abs() > 1.0 + 1e-6 {
                Stability::Repelling
            } else {
                Stability::Neutral
            };
            FixedPoint {
                x,
                slope,
                stability,
            }
        })
        .collect()
}

/// Constants of the slope bound near the origin: `f'(x) > a - Cx > 0` on
/// `(0, eps)` with `C = 2 sup_{[0, probe]} |m'|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OriginBound {
    pub c: f64,
    pub eps: f64,
    /// `min(eps, 1/C)`, where `h' >= e^{-a}`.
    pub window: f64,
}

pub fn origin_bound(law: &OffspringLaw, probe: f64) -> OriginBound {
    const SAMPLES: usize = 1000;
    let m = |x: f64| law.offspring_mean(x, UNBOUNDED);
    let spacing = probe / SAMPLES as f64;
    let d = 1e-3 * spacing;
    let sup = (0..=SAMPLES)
        .map(|i| {
            let x = i as f64 * spacing;
            if x < d {
                ((m(x + d) - m(x)) / d).abs()
            } else {
                ((m(x + d) - m(x - d)) / (2.0 * d)).abs()
            }
        })
        .fold(0.0, f64::max);
    let c = 2.0 * sup;
    let a = law.malthusian();
    let eps = if c > 0.0 { probe.min(a / c) } else { probe };
    let window = if c > 0.0 { eps.min(1.0 / c) } else { eps };
    OriginBound { c, eps, window }
}

/// Smallest forward-difference slope of the table on `(0, window)`.
pub fn min_slope_near_origin(h: &SchroederH, window: f64) -> Option<f64> {
    let step = h.step();
    (0..h.values.len() - 1)
        .filter(|&i| (i + 1) as f64 * step < window)
        .map(|i| (h.values[i + 1] - h.values[i]) / step)
        .reduce(f64::min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub law: OffspringLaw,
    pub a: f64,
    pub n_trunc: usize,
    pub tol: f64,
    pub x_max: f64,
    pub knots: usize,
}

fn sidecar(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Write `x,h,dh` rows to `csv_path` and the metadata sidecar next to it.
pub fn export_table(h: &SchroederH, law: &OffspringLaw, csv_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["x", "h", "dh"])?;
    for i in 0..h.knots() {
        w.write_record([
            h.knot(i).to_string(),
            h.values[i].to_string(),
            h.slopes[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;
    let meta = TableMeta {
        law: law.clone(),
        a: h.a,
        n_trunc: h.n_trunc,
        tol: h.tol,
        x_max: h.x_max,
        knots: h.knots(),
    };
    let path = sidecar(csv_path);
    let text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Read a table written by [`export_table`]. A two-column `x,h` file is
/// accepted; its slopes are then rebuilt from the values.
pub fn import_table(csv_path: &Path) -> Result<(SchroederH, TableMeta)> {
    let path = sidecar(csv_path);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: TableMeta = serde_json::from_str(&text)?;
    let mut reader = csv::Reader::from_path(csv_path)?;
    let has_slopes = reader.headers()?.len() >= 3;
    let (mut values, mut slopes) = (Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |j: usize| -> Result<f64> {
            record
                .get(j)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::invalid("table", format!("bad number in row {}", i + 1)))
        };
        let expect = meta.x_max * i as f64 / (meta.knots.max(2) - 1) as f64;
        if (parse(0)? - expect).abs() > 1e-9 * meta.x_max.max(1.0) {
            return Err(Error::invalid(
                "table",
                format!("row {} is off the uniform grid", i + 1),
            ));
        }
        values.push(parse(1)?);
        if has_slopes {
            slopes.push(parse(2)?);
        }
    }
    if values.len() != meta.knots {
        return Err(Error::invalid(
            "table",
            "row count does not match the sidecar",
        ));
    }
    let h = SchroederH::from_values(
        meta.x_max,
        values,
        has_slopes.then_some(slopes),
        meta.n_trunc,
        meta.tol,
        meta.a,
    )?;
    Ok((h, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bh() -> OffspringLaw {
        OffspringLaw::beverton_holt_poisson(2.0, 1.0).unwrap()
    }

    /// `f_n(x) = a^n x / (1 + b x (a^n - 1)/(a - 1))`, proved by induction.
    fn bh_iterate_closed(a: f64, b: f64, x: f64, n: i32) -> f64 {
        let an = a.powi(n);
        an * x / (1.0 + b * x * (an - 1.0) / (a - 1.0))
    }

    #[test]
    fn iterates_match_closed_form() {
        let law = bh();
        let map = IteratedMap::limit(&law);
        assert!((iterate_f(&map, 0.1, 3) - 0.8 / 1.7).abs() < 1e-15);
        for n in 0..12 {
            for x in [0.0, 0.01, 0.5, 3.0] {
                let closed = bh_iterate_closed(2.0, 1.0, x, n);
                assert!((map.iterate(x, n as usize) - closed).abs() < 1e-12 * closed.max(1.0));
            }
        }
        assert_eq!(map.iterate(0.37, 0), 0.37);
        assert!((map.iterate(1.0, 25) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn h_closed_form_for_beverton_holt() {
        let law = bh();
        let h = compute_h(&IteratedMap::limit(&law), 2.0, DEFAULT_KNOTS, 1e-8).unwrap();
        assert_eq!(h_eval(&h, 0.0).unwrap(), 0.0);
        assert!((h_eval(&h, 1.0).unwrap() - 0.5).abs() < 1e-6);
        for i in 0..=400 {
            let x = 2.0 * i as f64 / 400.0 + 1e-4 * (i % 3) as f64;
            let x = x.min(2.0);
            assert!(
                (h_eval(&h, x).unwrap() - x / (1.0 + x)).abs() < 1e-6,
                "x = {x}"
            );
        }
        let x = h_inverse(&h, 0.5).unwrap();
        assert!((h_eval(&h, x).unwrap() - 0.5).abs() < 1e-12);
        assert!((x - 1.0).abs() < 1e-6);
        assert_eq!(h_inverse(&h, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn binary_split_h_satisfies_schroeder_equation() {
        let law = OffspringLaw::binary_split(0.5, 1.0).unwrap();
        let map = IteratedMap::limit(&law);
        let tol = 1e-9;
        let h = compute_h(&map, 5.0, DEFAULT_KNOTS, tol).unwrap();
        assert!(schroeder_residual(&h, &map).unwrap() < 10.0 * tol);
    }

    #[test]
    fn out_of_range_is_an_error() {
        let law = bh();
        let h = compute_h(&IteratedMap::limit(&law), 2.0, 65, 1e-6).unwrap();
        assert!(matches!(h_eval(&h, 2.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(h_eval(&h, -0.1), Err(Error::OutOfRange { .. })));
        assert!(matches!(h_inverse(&h, 0.9), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let law = bh();
        let map = IteratedMap::limit(&law);
        assert!(compute_h(&map, 0.0, 10, 1e-6).is_err());
        assert!(compute_h(&map, 1.0, 1, 1e-6).is_err());
        assert!(compute_h(&map, 1.0, 10, 0.0).is_err());
    }

    #[test]
    fn non_conforming_map_is_reported() {
        use crate::repro_laws::OffspringTable;
        // mean rises with density: h_n increases in n
        let table = OffspringTable::new(
            vec![0.0, 0.5],
            vec![vec![0.0, 0.5, 0.5], vec![0.0, 0.0, 0.0, 1.0]],
        )
        .unwrap();
        let law = OffspringLaw::tabulated(table).unwrap();
        let err = compute_h(&IteratedMap::limit(&law), 2.0, 33, 1e-8).unwrap_err();
        assert!(matches!(err, Error::NonMonotone { .. }), "{err}");
    }

    #[test]
    fn fixed_point_classification() {
        let law = bh();
        let fps = fixed_points(&IteratedMap::limit(&law), 0.0, 4.0);
        assert_eq!(fps.len(), 1);
        assert!((fps[0].x - 1.0).abs() < 1e-12);
        assert!((fps[0].slope - 0.5).abs() < 1e-6);
        assert_eq!(fps[0].stability, Stability::Attracting);
        let law = OffspringLaw::binary_split(0.5, 1.0).unwrap();
        assert!(fixed_points(&IteratedMap::limit(&law), 0.0, 100.0).is_empty());
    }

    #[test]
    fn inverse_of_the_map() {
        let law = bh();
        let map = IteratedMap::limit(&law);
        let y = map.apply(0.7);
        assert!((map.inverse(y).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(map.inverse(2.5), None);
    }

    #[test]
    fn origin_bound_for_beverton_holt() {
        let b = origin_bound(&bh(), 1.0);
        assert!((b.c - 4.0).abs() < 1e-3);
        assert!((b.window - 0.25).abs() < 1e-3);
    }

    #[test]
    fn export_import_round_trip() {
        let law = bh();
        let h = compute_h(&IteratedMap::limit(&law), 2.0, 129, 1e-8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        export_table(&h, &law, &path).unwrap();
        let (back, meta) = import_table(&path).unwrap();
        assert_eq!(meta.law, law);
        assert_eq!(back.values, h.values);
        assert_eq!(back.slopes, h.slopes);
        for x in [0.0, 0.123, 1.0, 1.999] {
            assert_eq!(h_eval(&back, x).unwrap(), h_eval(&h, x).unwrap());
        }
    }
}
