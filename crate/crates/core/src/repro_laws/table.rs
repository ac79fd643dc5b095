use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PMF_SUM_TOL: f64 = 1e-12;

/// Offspring pmf tabulated at density knots. Between knots the law of the
/// nearest knot at or above `x` applies, which keeps the family
/// stochastically decreasing in `x`; beyond the last knot the last pmf holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableRepr")]
pub struct OffspringTable {
    knots: Vec<f64>,
    pmfs: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct TableRepr {
    knots: Vec<f64>,
    pmfs: Vec<Vec<f64>>,
}

impl TryFrom<TableRepr> for OffspringTable {
    type Error = Error;

    fn try_from(r: TableRepr) -> Result<Self> {
        OffspringTable::new(r.knots, r.pmfs)
    }
}

#[derive(Deserialize)]
struct Row {
    x_knot: f64,
    k: u64,
    probability: f64,
}

impl OffspringTable {
    pub fn new(knots: Vec<f64>, pmfs: Vec<Vec<f64>>) -> Result<Self> {
        if knots.is_empty() || knots.len() != pmfs.len() {
            return Err(Error::invalid(
                "table",
                "need one pmf per knot and at least one knot",
            ));
        }
        if knots[0] != 0.0 {
            return Err(Error::invalid("table", "first knot must be x = 0"));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || knots.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(
                "table",
                "knots must be finite and strictly increasing",
            ));
        }
        for (x, pmf) in knots.iter().zip(&pmfs) {
            if pmf.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::invalid(
                    "table",
                    format!("negative probability at knot {x}"),
                ));
            }
            let total: f64 = pmf.iter().sum();
            if (total - 1.0).abs() > PMF_SUM_TOL {
                return Err(Error::invalid(
                    "table",
                    format!("probabilities at knot {x} sum to {total}, not 1"),
                ));
            }
        }
        Ok(OffspringTable { knots, pmfs })
    }

    /// Build from `(x_knot, k, probability)` rows. Missing `k` get mass 0.
    pub fn from_rows(rows: impl IntoIterator<Item = (f64, u64, f64)>) -> Result<Self> {
        let mut knots: Vec<f64> = Vec::new();
        let mut pmfs: Vec<Vec<f64>> = Vec::new();
        let mut entries: Vec<(f64, u64, f64)> = rows.into_iter().collect();
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (x, k, p) in entries {
            if knots.last() != Some(&x) {
                knots.push(x);
                pmfs.push(Vec::new());
            }
            let pmf = pmfs.last_mut().expect("pushed above");
            let k = k as usize;
            if pmf.len() <= k {
                pmf.resize(k + 1, 0.0);
            }
            if pmf[k] != 0.0 {
                return Err(Error::invalid(
                    "table",
                    format!("duplicate row x = {x}, k = {k}"),
                ));
            }
            pmf[k] = p;
        }
        Self::new(knots, pmfs)
    }

    /// Read a headed CSV with columns `x_knot,k,probability`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for row in reader.deserialize() {
            let row: Row = row?;
            rows.push((row.x_knot, row.k, row.probability));
        }
        Self::from_rows(rows)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn pmf_at(&self, x: f64) -> &[f64] {
        let i = self.knots.partition_point(|&knot| knot < x);
        &self.pmfs[i.min(self.pmfs.len() - 1)]
    }

    pub fn mean_at_knot(&self, i: usize) -> f64 {
        self.pmfs[i]
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }

    pub fn support_max(&self) -> u64 {
        self.pmfs
            .iter()
            .filter_map(|pmf| pmf.iter().rposition(|&p| p > 0.0))
            .max()
            .unwrap_or(0) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_knot_at_or_above() {
        let t = OffspringTable::new(
            vec![0.0, 1.0, 2.0],
            vec![vec![0.0, 0.0, 1.0], vec![0.0, 1.0], vec![1.0]],
        )
        .unwrap();
        assert_eq!(t.pmf_at(0.0), &[0.0, 0.0, 1.0]);
        assert_eq!(t.pmf_at(0.5), &[0.0, 1.0]);
        assert_eq!(t.pmf_at(1.0), &[0.0, 1.0]);
        assert_eq!(t.pmf_at(7.0), &[1.0]);
        assert_eq!(t.support_max(), 2);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(OffspringTable::new(vec![0.0], vec![vec![0.5, 0.4]]).is_err());
        assert!(OffspringTable::new(vec![0.1], vec![vec![0.0, 1.0]]).is_err());
        assert!(OffspringTable::new(vec![0.0, 0.0], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(OffspringTable::new(vec![0.0], vec![vec![1.5, -0.5]]).is_err());
        // 1 ± 1e-12 is accepted
        assert!(OffspringTable::new(vec![0.0], vec![vec![0.5, 0.5 + 5e-13]]).is_ok());
    }

    #[test]
    fn reads_rows_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("law.csv");
        std::fs::write(
            &path,
            "x_knot,k,probability\n0,1,0.25\n0,2,0.75\n1.5,1,1.0\n",
        )
        .unwrap();
        let t = OffspringTable::read_csv(&path).unwrap();
        assert_eq!(t.knots(), &[0.0, 1.5]);
        assert_eq!(t.pmf_at(0.0), &[0.0, 0.25, 0.75]);
        assert!((t.mean_at_knot(0) - 1.75).abs() < 1e-15);
    }
}
