use serde::{Deserialize, Serialize};

use super::{
    check_grid, check_replicates, default_capacities, ExperimentReport, ReportRow, Verdict,
    DEFAULT_REPLICATES,
};
use crate::error::Result;
use crate::repro_laws::OffspringLaw;
use crate::simulator::{
    log_base, replicate, resolve_index, GenerationIndex, LambdaSpec, Observable, SimConfig,
};
use crate::stats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SublogParams {
    pub z0: u64,
    pub lambda: LambdaSpec,
    pub capacities: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for SublogParams {
    fn default() -> Self {
        SublogParams {
            z0: 1,
            lambda: LambdaSpec::SqrtLog,
            capacities: default_capacities(),
            replicates: DEFAULT_REPLICATES,
            seed: 0,
        }
    }
}

/// `E[X_{floor(lambda(K))}]` against `z0 a^(lambda(K) - log_a K)`.
pub fn verify_sublog(law: &OffspringLaw, p: &SublogParams) -> Result<ExperimentReport> {
    check_grid(&p.capacities)?;
    check_replicates(p.replicates)?;
    let a = law.malthusian();
    let mut report = ExperimentReport::new("sublog", law, p, p.seed, p.replicates)?;
    let mut means = Vec::new();
    let mut below = true;
    for &k in &p.capacities {
        let lambda = p.lambda.value(a, k);
        let base = SimConfig::new(law, k, p.z0).with_seed(p.seed);
        let n = crate::simulator::robust_floor(lambda).max(0.0) as u32;
        let cfg = base.clone().with_n_max(n.max(base.early_phase(a)));
        let index = GenerationIndex::Lambda(p.lambda);
        let generation = resolve_index(index, &cfg, a)?;
        let xs = replicate(law, &cfg, p.replicates, Observable::Density, index)?;
        let mean = stats::mean(&xs);
        let bound = p.z0 as f64 * a.powf(lambda - log_base(a, k));
        below &= mean <= bound;
        let mut row = ReportRow::new(k, Some(generation));
        row.set("lambda", lambda);
        row.set("mean_x", mean);
        row.set("mean_se", stats::std_error(&xs));
        row.set("bound", bound);
        means.push(mean);
        report.rows.push(row);
    }
    if p.lambda.is_sublogarithmic() {
        report.verdicts.push(Verdict::new(
            "below_bound",
            below,
            "E[X] <= z0 a^(lambda(K) - log_a K) at every K",
        ));
        let constant = matches!(p.lambda, LambdaSpec::Constant(_));
        report.verdicts.push(Verdict::new(
            "decay",
            stats::strictly_decreasing(&means),
            if constant {
                format!("means {means:?}; constant lambda gives z0 a^n / K")
            } else {
                format!("means {means:?}")
            },
        ));
    } else {
        report.verdicts.push(Verdict::none(
            "below_bound",
            "lambda(K) = log_a K is not sub-logarithmic; out of scope",
        ));
    }
    Ok(report.finish())
}
