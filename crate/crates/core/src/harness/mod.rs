//! Experiment orchestration: every (sweep value × seed × policy) run on
//! common random numbers, written as CSV tables plus a JSON manifest.

pub mod analysis;
pub mod config;
pub mod output;

pub use analysis::{ordering, pair_consistency, policy_means, reoptimization_gain, PairConsistency};
pub use config::{ExperimentConfig, GridConfig, Sweep, SweepAxis};
pub use output::{
    aggregate, convergence_of, emit_convergence, mean_std, output_paths, read_csv, write_csv, AggregateRow,
    ConvergenceRow, Manifest, Phase, RunKey, RunRow,
};

use rayon::prelude::*;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use crate::algorithms::{run_policy, Instance, Policy, PolicyResult};
use crate::error::Result;

/// Everything one experiment produces.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub runs: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
    pub convergence: Vec<ConvergenceRow>,
}

impl ExperimentResult {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            name: self.config.name.clone(),
            config_hash: self.config_hash.clone(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            runs: self.runs.len(),
            failed_runs: self.runs.iter().filter(|r| !r.ok).count(),
            files: [output::RUNS_CSV, output::AGGREGATES_CSV, output::CONVERGENCE_CSV].map(String::from).to_vec(),
            config: self.config.clone(),
        }
    }

    /// Writes the four output files into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<[PathBuf; 4]> {
        std::fs::create_dir_all(dir)?;
        let paths = output_paths(dir);
        write_csv(&paths[0], &self.runs)?;
        write_csv(&paths[1], &self.aggregates)?;
        write_csv(&paths[2], &self.convergence)?;
        std::fs::write(&paths[3], serde_json::to_string_pretty(&self.manifest())? + "\n")?;
        Ok(paths)
    }
}

/// One policy run and the key it is filed under.
struct RunOutcome {
    key: RunKey,
    result: std::result::Result<PolicyResult, String>,
}

fn panic_message(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| e.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Generates the instance a (sweep value, seed) pair runs on.
pub fn build_instance(cfg: &ExperimentConfig, seed: u64) -> Result<Instance> {
    let grid = cfg.grid.build()?;
    Instance::generate(&grid, &cfg.scenario, &cfg.channel, &cfg.system, seed)
}

/// Runs the whole grid of experiments. Runs are independent and may execute
/// in parallel; results are collected in (sweep value, seed, policy) order,
/// so the tables do not depend on scheduling. A failing run becomes a row
/// with its error message and the remaining runs go ahead.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let hash = cfg.hash();
    let axis = cfg.sweep.as_ref().map_or(String::new(), |s| s.axis.name().to_string());
    let groups: Vec<(Option<f64>, u64)> =
        cfg.points().into_iter().flat_map(|v| cfg.seeds.iter().map(move |&s| (v, s))).collect();
    let outcomes: Vec<Vec<RunOutcome>> = groups
        .par_iter()
        .map(|&(value, seed)| {
            let local = cfg.at(value);
            let key = |policy: Policy| RunKey {
                config_hash: hash.clone(),
                sweep_axis: axis.clone(),
                sweep_value: cfg.sweep.as_ref().map(|_| cfg.reported(value)),
                seed,
                policy,
            };
            let inst = match catch_unwind(AssertUnwindSafe(|| build_instance(&local, seed))) {
                Ok(Ok(i)) => i,
                Ok(Err(e)) => {
                    let msg = format!("instance: {e}");
                    return local.policies.iter().map(|&p| RunOutcome { key: key(p), result: Err(msg.clone()) }).collect();
                }
                Err(e) => {
                    let msg = format!("instance: {}", panic_message(e));
                    return local.policies.iter().map(|&p| RunOutcome { key: key(p), result: Err(msg.clone()) }).collect();
                }
            };
            local
                .policies
                .par_iter()
                .map(|&p| {
                    let result = match catch_unwind(AssertUnwindSafe(|| run_policy(p, &inst, &local.algorithm))) {
                        Ok(r) => r.map_err(|e| e.to_string()),
                        Err(e) => Err(panic_message(e)),
                    };
                    if let Err(e) = &result {
                        log::warn!("seed {seed} {p} value {value:?} failed: {e}");
                    } else {
                        log::info!("seed {seed} {p} value {value:?} done");
                    }
                    RunOutcome { key: key(p), result }
                })
                .collect()
        })
        .collect();

    let mut runs = Vec::new();
    let mut convergence = Vec::new();
    for o in outcomes.into_iter().flatten() {
        match &o.result {
            Ok(r) => {
                runs.push(RunRow::from_result(&o.key, r));
                convergence.extend(convergence_of(&o.key, r));
            }
            Err(e) => runs.push(RunRow::failed(&o.key, e.clone())),
        }
    }
    Ok(ExperimentResult { config: cfg.clone(), config_hash: hash, aggregates: aggregate(&runs), runs, convergence })
}
