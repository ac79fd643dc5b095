//! Finite-capacity experiments for the limit statements, each reduced to
//! per-`K` statistics and trend-plus-threshold verdicts, and recovery of the
//! initial count from observed densities.

mod early_phase;
mod limit;
mod recovery;
mod sublog;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repro_laws::OffspringLaw;
use crate::stats;

pub use crate::stats::{ks_two_sample, KsResult};
pub use early_phase::{verify_early_phase, verify_fixed_time, EarlyPhaseParams, FixedTimeParams};
pub use limit::{verify_main, verify_shifted_limit, LimitParams, ReferenceMode};
pub use recovery::{recover_z0, IntervalParams, IntervalRecovery, RecoveryMode, Z0Estimate};
pub use sublog::{verify_sublog, SublogParams};

pub const SCHEMA_VERSION: u32 = 1;

pub fn default_capacities() -> Vec<f64> {
    vec![1e3, 1e4, 1e5, 1e6]
}

pub fn default_coupled_capacities() -> Vec<f64> {
    vec![1e3, 1e4, 1e5]
}

pub const DEFAULT_REPLICATES: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NoVerdict,
}

impl Status {
    fn of(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        Verdict {
            name: name.into(),
            status: Status::of(ok),
            detail: detail.into(),
        }
    }

    pub fn none(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Verdict {
            name: name.into(),
            status: Status::NoVerdict,
            detail: detail.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

/// Statistics measured at one capacity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub capacity: f64,
    pub generation: Option<u32>,
    /// `generation / K`, the generation on the intrinsic time scale.
    pub intrinsic_time: Option<f64>,
    pub stats: BTreeMap<String, f64>,
}

impl ReportRow {
    fn new(capacity: f64, generation: Option<u32>) -> Self {
        ReportRow {
            capacity,
            generation,
            intrinsic_time: generation.map(|n| n as f64 / capacity),
            stats: BTreeMap::new(),
        }
    }

    fn set(&mut self, key: &str, value: f64) {
        self.stats.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.stats.get(key).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub id: String,
    pub law: OffspringLaw,
    /// Every parameter the run used, defaults included.
    pub params: serde_json::Value,
    pub seed: u64,
    pub replicates: usize,
    pub rows: Vec<ReportRow>,
    pub verdicts: Vec<Verdict>,
    pub status: Status,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    fn new(
        id: &str,
        law: &OffspringLaw,
        params: &impl Serialize,
        seed: u64,
        replicates: usize,
    ) -> Result<Self> {
        Ok(ExperimentReport {
            schema_version: SCHEMA_VERSION,
            id: id.to_string(),
            law: law.clone(),
            params: serde_json::to_value(params)?,
            seed,
            replicates,
            rows: Vec::new(),
            verdicts: Vec::new(),
            status: Status::NoVerdict,
            notes: Vec::new(),
        })
    }

    fn finish(mut self) -> Self {
        let any = |s: Status| self.verdicts.iter().any(|v| v.status == s);
        self.status = if any(Status::Fail) {
            Status::Fail
        } else if any(Status::Pass) {
            Status::Pass
        } else {
            Status::NoVerdict
        };
        self
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    /// One statistic across the capacity grid.
    pub fn column(&self, key: &str) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.get(key).unwrap_or(f64::NAN))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    /// Capacity-by-statistic matrix, one row per capacity.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let keys: Vec<&String> = {
            let mut all: Vec<&String> = self.rows.iter().flat_map(|r| r.stats.keys()).collect();
            all.sort();
            all.dedup();
            all
        };
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["capacity", "generation", "intrinsic_time"];
        header.extend(keys.iter().map(|k| k.as_str()));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.capacity.to_string(),
                row.generation.map(|g| g.to_string()).unwrap_or_default(),
                row.intrinsic_time
                    .map(|t| t.to_string())
                    .unwrap_or_default(),
            ];
            rec.extend(
                keys.iter()
                    .map(|k| row.stats.get(*k).map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }
}

fn check_grid(capacities: &[f64]) -> Result<()> {
    if capacities.is_empty() {
        return Err(Error::invalid("capacities", "grid is empty"));
    }
    if capacities.iter().any(|k| !(k.is_finite() && *k >= 1.0)) {
        return Err(Error::invalid(
            "capacities",
            "every K must be finite and >= 1",
        ));
    }
    if capacities.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "capacities",
            "grid must be strictly increasing",
        ));
    }
    Ok(())
}

fn check_replicates(replicates: usize) -> Result<()> {
    if replicates < 2 {
        return Err(Error::invalid("replicates", "need at least 2"));
    }
    Ok(())
}

/// Strictly decreasing across the grid, or identically zero.
fn trend_verdict(name: &str, values: &[f64]) -> Verdict {
    let zero = values.iter().all(|&v| v == 0.0);
    let ok = zero || stats::strictly_decreasing(values);
    let detail = if zero {
        "identically zero".to_string()
    } else {
        format!("values {values:?}")
    };
    Verdict::new(name, ok, detail)
}

/// Fraction of `xs` with `|x - target| > delta`.
fn exceed_fraction(xs: &[f64], target: f64, delta: f64) -> f64 {
    xs.iter().filter(|&&x| (x - target).abs() > delta).count() as f64 / xs.len() as f64
}
