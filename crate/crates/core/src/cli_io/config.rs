//! TOML run configuration. Unknown keys are errors, every default is
//! materialised on parse, and `emit` writes a document that parses back to
//! an equal configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{
    default_capacities, default_coupled_capacities, EarlyPhaseParams, FixedTimeParams,
    IntervalParams, LimitParams, RecoveryMode, ReferenceMode, SublogParams,
};
use crate::repro_laws::{Family, OffspringLaw, OffspringTable};
use crate::schroeder::DEFAULT_KNOTS;
use crate::simulator::{
    detection_generation, LambdaSpec, SimConfig, SimMode, DEFAULT_C, DEFAULT_GAMMA,
};
use crate::wlimit::DEFAULT_TRUNCATION;

pub const DEFAULT_OUT: &str = "densbranch-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    BinarySplit,
    BevertonHoltPoisson,
    UserTabulated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawSpec {
    pub family: FamilyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    /// CSV with columns `x_knot, k, probability`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    #[serde(default)]
    pub kappa: f64,
}

impl LawSpec {
    pub fn build(&self) -> Result<OffspringLaw> {
        let field = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| {
                Error::invalid(
                    format!("law.{name}"),
                    format!("required for {:?}", self.family),
                )
            })
        };
        let reject = |names: &[(&str, bool)]| -> Result<()> {
            match names.iter().find(|(_, set)| *set) {
                Some((name, _)) => Err(Error::invalid(
                    format!("law.{name}"),
                    format!("does not apply to {:?}", self.family),
                )),
                None => Ok(()),
            }
        };
        let family = match self.family {
            FamilyName::BinarySplit => {
                reject(&[
                    ("a", self.a.is_some()),
                    ("b", self.b.is_some()),
                    ("table", self.table.is_some()),
                ])?;
                Family::BinarySplit {
                    p0: field("p0", self.p0)?,
                    beta: field("beta", self.beta)?,
                }
            }
            FamilyName::BevertonHoltPoisson => {
                reject(&[
                    ("p0", self.p0.is_some()),
                    ("beta", self.beta.is_some()),
                    ("table", self.table.is_some()),
                ])?;
                Family::BevertonHoltPoisson {
                    a: field("a", self.a)?,
                    b: field("b", self.b)?,
                }
            }
            FamilyName::UserTabulated => {
                reject(&[
                    ("p0", self.p0.is_some()),
                    ("beta", self.beta.is_some()),
                    ("a", self.a.is_some()),
                    ("b", self.b.is_some()),
                ])?;
                let path = self
                    .table
                    .as_ref()
                    .ok_or_else(|| Error::invalid("law.table", "required for UserTabulated"))?;
                Family::UserTabulated {
                    table: OffspringTable::read_csv(path)?,
                }
            }
        };
        OffspringLaw::new(family, self.kappa).map_err(|e| prefix("law", e))
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Invalid { field, message } if !field.contains('.') => Error::Invalid {
            field: format!("{section}.{field}"),
            message,
        },
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub capacity: f64,
    pub z0: u64,
    pub c: f64,
    pub gamma: f64,
    /// Defaults to `floor(log_a K) + 10`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u32>,
    pub mode: SimMode,
    pub replicates: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            capacity: 1e4,
            z0: 1,
            c: DEFAULT_C,
            gamma: DEFAULT_GAMMA,
            n_max: None,
            mode: SimMode::Fast,
            replicates: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    EarlyPhase,
    FixedTime,
    Main,
    Shift,
    Sublog,
}

impl std::str::FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "early_phase" => ExperimentId::EarlyPhase,
            "fixed_time" => ExperimentId::FixedTime,
            "main" => ExperimentId::Main,
            "shift" => ExperimentId::Shift,
            "sublog" => ExperimentId::Sublog,
            _ => {
                return Err(Error::invalid(
                    "experiment.id",
                    format!("unknown experiment {s:?}; expected early_phase, fixed_time, main, shift or sublog"),
                ))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<ExperimentId>,
    /// Empty selects the grid of the chosen experiment.
    pub capacities: Vec<f64>,
    pub replicates: usize,
    pub shift: i32,
    pub x0: f64,
    pub generations: u32,
    pub deltas: Vec<f64>,
    pub mean_tolerance: f64,
    pub final_fraction: f64,
    pub baseline_factor: f64,
    pub reference: ReferenceMode,
    pub point_mass_tolerance: f64,
    pub lambda: LambdaSpec,
    pub draw_budget: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let ft = FixedTimeParams::default();
        let lp = LimitParams::default();
        let t1 = EarlyPhaseParams::default();
        ExperimentSection {
            id: None,
            capacities: Vec::new(),
            replicates: crate::experiments::DEFAULT_REPLICATES,
            shift: 1,
            x0: ft.x0,
            generations: ft.generations,
            deltas: ft.deltas,
            mean_tolerance: ft.mean_tolerance,
            final_fraction: t1.final_fraction,
            baseline_factor: lp.baseline_factor,
            reference: lp.reference,
            point_mass_tolerance: lp.point_mass_tolerance,
            lambda: LambdaSpec::SqrtLog,
            draw_budget: t1.draw_budget,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HSection {
    /// Defaults to `a x*` when the map has a positive fixed point.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    pub knots: usize,
    pub tol: f64,
}

impl Default for HSection {
    fn default() -> Self {
        HSection {
            x_max: None,
            knots: DEFAULT_KNOTS,
            tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WSection {
    pub n_trunc: u32,
    pub replicates: usize,
}

impl Default for WSection {
    fn default() -> Self {
        WSection {
            n_trunc: DEFAULT_TRUNCATION,
            replicates: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverSection {
    pub mode: RecoveryMode,
    /// CSV of densities at `floor(log_a K)`; the last column is read.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observations: Option<PathBuf>,
    /// `h` table written by `compute-h`; computed on the fly when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    pub z_max: u64,
    pub reference_size: usize,
    pub bootstrap: usize,
    pub alpha: f64,
}

impl Default for RecoverSection {
    fn default() -> Self {
        let p = IntervalParams::default();
        RecoverSection {
            mode: RecoveryMode::Deterministic,
            observations: None,
            table: None,
            z_max: p.z_max,
            reference_size: p.reference_size,
            bootstrap: p.bootstrap,
            alpha: p.alpha,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub law: LawSpec,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub h: HSection,
    #[serde(default)]
    pub w: WSection,
    #[serde(default)]
    pub recover: RecoverSection,
}

fn default_out() -> PathBuf {
    PathBuf::from(DEFAULT_OUT)
}

/// Parse, validate and materialise defaults. Relative paths resolve against
/// `base` when given.
pub fn parse_config(text: &str, base: Option<&Path>) -> Result<RunConfig> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(base) = base {
        let absolute = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        absolute(&mut cfg.law.table);
        absolute(&mut cfg.recover.observations);
        absolute(&mut cfg.recover.table);
    }
    cfg.materialize()?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path.parent())
}

pub fn emit_config(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}

impl RunConfig {
    pub fn law(&self) -> Result<OffspringLaw> {
        self.law.build()
    }

    /// Fill derived defaults and check every constraint.
    pub fn materialize(&mut self) -> Result<()> {
        let law = self.law()?;
        let a = law.malthusian();
        if !(self.sim.capacity.is_finite() && self.sim.capacity >= 1.0) {
            return Err(Error::invalid("sim.capacity", "K must be finite and >= 1"));
        }
        if self.sim.z0 == 0 {
            return Err(Error::invalid("sim.z0", "must be >= 1"));
        }
        if self.sim.replicates == 0 {
            return Err(Error::invalid("sim.replicates", "must be >= 1"));
        }
        self.sim
            .n_max
            .get_or_insert(detection_generation(a, self.sim.capacity) + 10);
        self.sim_config(&law)?
            .validate(&law)
            .map_err(|e| prefix("sim", e))?;
        if self.experiment.capacities.is_empty() {
            self.experiment.capacities = match self.experiment.id {
                Some(ExperimentId::EarlyPhase) => default_coupled_capacities(),
                Some(ExperimentId::Main | ExperimentId::Shift) => LimitParams::default().capacities,
                _ => default_capacities(),
            };
        }
        if self.h.x_max.is_none() {
            self.h.x_max = law.positive_fixed_point().map(|x| a * x);
        }
        if self.h.knots < 2 {
            return Err(Error::invalid("h.knots", "need at least 2"));
        }
        if !(self.h.tol > 0.0) {
            return Err(Error::invalid("h.tol", "must be > 0"));
        }
        if !(self.recover.alpha > 0.0 && self.recover.alpha < 1.0) {
            return Err(Error::invalid("recover.alpha", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn sim_config(&self, law: &OffspringLaw) -> Result<SimConfig> {
        let s = &self.sim;
        let cfg = SimConfig::new(law, s.capacity, s.z0)
            .with_exponents(s.c, s.gamma)
            .with_seed(self.seed)
            .with_mode(s.mode);
        Ok(match s.n_max {
            Some(n) => cfg.with_n_max(n),
            None => cfg,
        })
    }

    pub fn early_phase(&self) -> EarlyPhaseParams {
        let e = &self.experiment;
        EarlyPhaseParams {
            z0: self.sim.z0,
            c: self.sim.c,
            gamma: self.sim.gamma,
            capacities: e.capacities.clone(),
            replicates: e.replicates,
            seed: self.seed,
            final_fraction: e.final_fraction,
            draw_budget: e.draw_budget,
        }
    }

    pub fn fixed_time(&self) -> FixedTimeParams {
        let e = &self.experiment;
        FixedTimeParams {
            x0: e.x0,
            generations: e.generations,
            capacities: e.capacities.clone(),
            replicates: e.replicates,
            seed: self.seed,
            deltas: e.deltas.clone(),
            mean_tolerance: e.mean_tolerance,
        }
    }

    pub fn limit(&self) -> LimitParams {
        let e = &self.experiment;
        LimitParams {
            z0: self.sim.z0,
            c: self.sim.c,
            gamma: self.sim.gamma,
            capacities: e.capacities.clone(),
            replicates: e.replicates,
            seed: self.seed,
            baseline_factor: e.baseline_factor,
            reference: e.reference,
            n_trunc: self.w.n_trunc,
            point_mass_tolerance: e.point_mass_tolerance,
            draw_budget: e.draw_budget,
            knots: self.h.knots,
            h_tol: self.h.tol,
        }
    }

    pub fn sublog(&self) -> SublogParams {
        let e = &self.experiment;
        SublogParams {
            z0: self.sim.z0,
            lambda: e.lambda,
            capacities: e.capacities.clone(),
            replicates: e.replicates,
            seed: self.seed,
        }
    }

    pub fn interval(&self) -> IntervalParams {
        let r = &self.recover;
        IntervalParams {
            z_max: r.z_max,
            reference_size: r.reference_size,
            bootstrap: r.bootstrap,
            alpha: r.alpha,
            seed: self.seed,
            n_trunc: self.w.n_trunc,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[law]
family = "binary_split"
p0 = 1.0
beta = 1.0

[sim]
capacity = 1048576
z0 = 1

[experiment]
id = "main"
"#;

    #[test]
    fn minimal_config_materialises_defaults() {
        let cfg = parse_config(MINIMAL, None).unwrap();
        assert_eq!(cfg.sim.n_max, Some(30));
        assert_eq!(cfg.sim.c, 0.6);
        assert_eq!(cfg.experiment.capacities, vec![1e4, 1e5, 1e6]);
        assert_eq!(cfg.h.x_max, None);
        let echoed = emit_config(&cfg).unwrap();
        for key in [
            "gamma",
            "n_max",
            "replicates",
            "baseline_factor",
            "n_trunc",
            "knots",
        ] {
            assert!(echoed.contains(key), "{key} missing from\n{echoed}");
        }
    }

    #[test]
    fn round_trip() {
        let cfg = parse_config(MINIMAL, None).unwrap();
        let again = parse_config(&emit_config(&cfg).unwrap(), None).unwrap();
        assert_eq!(cfg, again);
        let bh = "seed = 5\n[law]\nfamily = \"beverton_holt_poisson\"\na = 2.0\nb = 1.0\nkappa = 0.5\n[experiment]\nlambda = { kind = \"constant\", value = 2.0 }\n";
        let cfg = parse_config(bh, None).unwrap();
        assert_eq!(cfg.h.x_max, Some(2.0));
        assert_eq!(
            cfg,
            parse_config(&emit_config(&cfg).unwrap(), None).unwrap()
        );
    }

    #[test]
    fn constraint_messages_name_the_field() {
        let err = parse_config(&MINIMAL.replace("z0 = 1", "z0 = 1\nc = 0.4"), None).unwrap_err();
        assert!(err.to_string().contains("c must exceed 1/2"), "{err}");
        assert!(err.to_string().contains("sim."), "{err}");
        let err = parse_config(
            &MINIMAL.replace("z0 = 1", "z0 = 1\nc = 0.7\ngamma = 0.65"),
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
        let err = parse_config(
            "[law]\nfamily = \"beverton_holt_poisson\"\na = 0.9\nb = 1.0\n",
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("law.a"), "{err}");
        assert!(err.to_string().contains("a must exceed 1"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err =
            parse_config(&MINIMAL.replace("z0 = 1", "z0 = 1\ncapacty = 3"), None).unwrap_err();
        assert!(err.to_string().contains("capacty"), "{err}");
        let err = parse_config(&format!("colour = 1\n{MINIMAL}"), None).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        let err =
            parse_config(&MINIMAL.replace("beta = 1.0", "beta = 1.0\na = 2.0"), None).unwrap_err();
        assert!(err.to_string().contains("law.a"), "{err}");
    }
}
