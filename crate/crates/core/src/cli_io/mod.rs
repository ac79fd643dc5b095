//! Command-line driver: configuration, dispatch and file output.

pub mod config;
mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::{
    recover_z0, verify_early_phase, verify_fixed_time, verify_main, verify_shifted_limit,
    verify_sublog, ExperimentReport, Status, Z0Estimate,
};
use crate::repro_laws::{default_k_grid, default_x_grid, validate_assumptions};
use crate::schroeder::{compute_h, export_table, import_table, IteratedMap, SchroederH};
use crate::simulator::{replicate_paths, simulate_coupled_replicate, SimMode};
use crate::wlimit::{sample_w, w_moments};

pub use config::{emit_config, parse_config, read_config, ExperimentId, RunConfig};
pub use output::OutputDir;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// A verdict failed or the law violates an assumption.
    pub const FAILED: i32 = 1;
    /// Usage errors are reported by the argument parser with this code.
    pub const USAGE: i32 = 2;
    /// Every verdict was out of scope.
    pub const NO_VERDICT: i32 = 3;
    /// Configuration, I/O or numerical error.
    pub const ERROR: i32 = 4;
}

#[derive(Debug, Parser)]
#[command(
    name = "densbranch",
    version,
    about = "Density-dependent branching populations and their limit laws"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Only log errors and print nothing on success.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate population paths.
    Simulate,
    /// Simulate coupled population, comparison and lower paths.
    Coupled,
    /// Tabulate the Schröder limit h.
    ComputeH,
    /// Sample the martingale limit W(z0).
    SampleW,
    /// Run a verification experiment.
    Verify {
        /// early_phase, fixed_time, main, shift or sublog; defaults to experiment.id.
        id: Option<String>,
    },
    /// Estimate the initial count from observed densities.
    RecoverZ0,
    /// Check a law against the model assumptions on a grid.
    ValidateLaw,
    /// Print the configuration with every default filled in.
    ShowConfig,
}

/// Run the command and return the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            eprintln!("densbranch: {e}");
            exit::ERROR
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let mut cfg = read_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = load(cli)?;
    if let Command::Verify { id: Some(id) } = &cli.command {
        let id: ExperimentId = id.parse()?;
        if cfg.experiment.id != Some(id) {
            cfg.experiment.id = Some(id);
            cfg.experiment.capacities.clear();
            cfg.materialize()?;
        }
    }
    if let Command::ShowConfig = cli.command {
        print!("{}", emit_config(&cfg)?);
        return Ok(exit::OK);
    }
    let out = OutputDir::create(&cfg.out)?;
    out.write_text("config.toml", &emit_config(&cfg)?)?;
    let law = cfg.law()?;
    let say = |msg: String| {
        if !cli.quiet {
            println!("{msg}");
        }
    };

    match &cli.command {
        Command::Simulate => {
            let sim = cfg.sim_config(&law)?;
            let paths = replicate_paths(&law, &sim, cfg.sim.replicates, sim.n_max)?;
            let rows = paths.iter().enumerate().flat_map(|(r, p)| {
                p.counts.iter().enumerate().map(move |(n, &z)| {
                    vec![
                        r.to_string(),
                        n.to_string(),
                        z.to_string(),
                        (z as f64 / p.capacity).to_string(),
                    ]
                })
            });
            let header = Header::new(&cfg, &law, "simulate", serde_json::json!({ "sim": sim }));
            out.write_csv("paths.csv", &["replicate", "n", "Z", "X"], rows, &header)?;
            say(format!(
                "{} paths of {} generations -> {}",
                paths.len(),
                sim.n_max,
                out.path("paths.csv").display()
            ));
            Ok(exit::OK)
        }
        Command::Coupled => {
            let sim = cfg.sim_config(&law)?.with_mode(SimMode::Exact);
            let runs: Vec<_> = (0..cfg.sim.replicates as u64)
                .map(|r| simulate_coupled_replicate(&law, &sim, r, sim.n_max))
                .collect::<Result<_>>()?;
            let rows = runs.iter().enumerate().flat_map(|(r, c)| {
                (0..c.population.len()).map(move |n| {
                    vec![
                        r.to_string(),
                        n.to_string(),
                        c.population[n].to_string(),
                        c.comparison[n].to_string(),
                        c.lower[n].to_string(),
                    ]
                })
            });
            let header = Header::new(&cfg, &law, "coupled", serde_json::json!({ "sim": sim }));
            out.write_csv(
                "coupled.csv",
                &["replicate", "n", "Z", "Z_comparison", "Z_lower"],
                rows,
                &header,
            )?;
            let fmt = |v: Option<usize>| v.map(|t| t.to_string()).unwrap_or_default();
            let stops = runs.iter().enumerate().map(|(r, c)| {
                vec![
                    r.to_string(),
                    fmt(c.tau),
                    fmt(c.nu),
                    c.sandwich_violations().to_string(),
                ]
            });
            out.write_csv(
                "stopping.csv",
                &["replicate", "tau", "nu", "violations"],
                stops,
                &header,
            )?;
            let bad: usize = runs.iter().map(|c| c.sandwich_violations()).sum();
            say(format!(
                "{} coupled runs, {bad} sandwich violations",
                runs.len()
            ));
            Ok(if bad == 0 { exit::OK } else { exit::FAILED })
        }
        Command::ComputeH => {
            let h = table_for(&cfg, &law)?;
            export_table(&h, &law, &out.path("h.csv"))?;
            say(format!(
                "h on [0, {}] with {} knots, n_trunc = {}, gap {:e}",
                h.x_max,
                h.knots(),
                h.n_trunc,
                h.sup_gap
            ));
            Ok(exit::OK)
        }
        Command::SampleW => {
            let samples = sample_w(&law, cfg.sim.z0, cfg.w.n_trunc, cfg.seed, cfg.w.replicates)?;
            let (mean, var) = w_moments(&law, cfg.sim.z0);
            let header = Header::new(
                &cfg,
                &law,
                "sample_w",
                serde_json::json!({ "z0": cfg.sim.z0, "n_trunc": cfg.w.n_trunc, "replicates": cfg.w.replicates,
                    "mean": mean, "variance": var }),
            );
            let rows = samples
                .iter()
                .map(|s| vec![s.replicate.to_string(), s.value.to_string()]);
            out.write_csv("w.csv", &["replicate", "value"], rows, &header)?;
            say(format!(
                "{} samples of W({}); mean {mean}, variance {var}",
                samples.len(),
                cfg.sim.z0
            ));
            Ok(exit::OK)
        }
        Command::Verify { .. } => {
            let id = cfg
                .experiment
                .id
                .ok_or_else(|| Error::invalid("experiment.id", "no experiment selected"))?;
            let report = run_experiment(&cfg, &law, id)?;
            out.write_json("report.json", &report)?;
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            out.write_bytes("report.csv", &buf)?;
            for v in &report.verdicts {
                say(format!("{:<24} {:?}: {}", v.name, v.status, v.detail));
            }
            say(format!("{}: {:?}", report.id, report.status));
            Ok(match report.status {
                Status::Pass => exit::OK,
                Status::Fail => exit::FAILED,
                Status::NoVerdict => exit::NO_VERDICT,
            })
        }
        Command::RecoverZ0 => {
            let obs_path =
                cfg.recover.observations.as_ref().ok_or_else(|| {
                    Error::invalid("recover.observations", "required for recover-z0")
                })?;
            let observations = output::read_last_column(obs_path)?;
            let h = match &cfg.recover.table {
                Some(path) => import_table(path)?.0,
                None => table_for(&cfg, &law)?,
            };
            let estimate = recover_z0(
                &observations,
                &h,
                &law,
                cfg.sim.capacity,
                cfg.recover.mode,
                &cfg.interval(),
            )?;
            #[derive(Serialize)]
            struct Recovery<'a> {
                schema_version: u32,
                law: &'a crate::OffspringLaw,
                capacity: f64,
                observations: usize,
                estimate: &'a Z0Estimate,
            }
            out.write_json(
                "recover.json",
                &Recovery {
                    schema_version: crate::experiments::SCHEMA_VERSION,
                    law: &law,
                    capacity: cfg.sim.capacity,
                    observations: observations.len(),
                    estimate: &estimate,
                },
            )?;
            say(serde_json::to_string(&estimate)?);
            Ok(exit::OK)
        }
        Command::ValidateLaw => {
            let report = validate_assumptions(&law, &default_x_grid(&law), &default_k_grid())?;
            out.write_json("assumptions.json", &report)?;
            for check in &report.checks {
                say(format!(
                    "{:<24} {}",
                    check.name,
                    serde_json::to_string(&check.status)?
                ));
            }
            Ok(if report.passed() {
                exit::OK
            } else {
                exit::FAILED
            })
        }
        Command::ShowConfig => unreachable!("handled above"),
    }
}

fn table_for(cfg: &RunConfig, law: &crate::OffspringLaw) -> Result<SchroederH> {
    let x_max = cfg.h.x_max.ok_or_else(|| {
        Error::invalid(
            "h.x_max",
            "required: the density map has no positive fixed point",
        )
    })?;
    compute_h(&IteratedMap::limit(law), x_max, cfg.h.knots, cfg.h.tol)
}

fn run_experiment(
    cfg: &RunConfig,
    law: &crate::OffspringLaw,
    id: ExperimentId,
) -> Result<ExperimentReport> {
    match id {
        ExperimentId::EarlyPhase => verify_early_phase(law, &cfg.early_phase()),
        ExperimentId::FixedTime => verify_fixed_time(law, &cfg.fixed_time()),
        ExperimentId::Main => verify_main(law, &cfg.limit(), None),
        ExperimentId::Shift => verify_shifted_limit(law, &cfg.limit(), cfg.experiment.shift, None),
        ExperimentId::Sublog => verify_sublog(law, &cfg.sublog()),
    }
}

/// Sidecar metadata for CSV outputs: enough to replay the run.
#[derive(Serialize)]
struct Header<'a> {
    schema_version: u32,
    command: &'a str,
    seed: u64,
    law: &'a crate::OffspringLaw,
    params: serde_json::Value,
}

impl<'a> Header<'a> {
    fn new(
        cfg: &RunConfig,
        law: &'a crate::OffspringLaw,
        command: &'a str,
        params: serde_json::Value,
    ) -> Self {
        Header {
            schema_version: crate::experiments::SCHEMA_VERSION,
            command,
            seed: cfg.seed,
            law,
            params,
        }
    }
}
