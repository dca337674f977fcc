//! Result tables. Every row carries the config hash, seed, policy and
//! sweep value it came from; nothing depends on wall-clock time.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use crate::algorithms::{Policy, PolicyResult};
use crate::error::{Error, Result};
use crate::sca::{IterRecord, StepStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub config_hash: String,
    pub sweep_axis: String,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    pub policy: Policy,
    pub ok: bool,
    pub error: String,
    pub mean_queue_bits: Option<f64>,
    pub queue_tn_bits: Option<f64>,
    pub queue_sat_m_bits: Option<f64>,
    pub queue_sat_s_bits: Option<f64>,
    pub ds_misses: Option<usize>,
    pub ds_demands: Option<usize>,
    pub sinr_floor_misses: Option<usize>,
    pub phase1_iterations: Option<usize>,
    /// Largest per-TF Phase 2 iteration count over the run.
    pub phase2_iterations_max: Option<usize>,
    pub phase2_iterations_total: Option<usize>,
    pub flagged_tfs: Option<usize>,
    pub dropped_ds: Option<usize>,
    pub solver_failures: Option<usize>,
    pub audit_ok: Option<bool>,
    pub audit_failures: String,
}

/// Identifies one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunKey {
    pub config_hash: String,
    pub sweep_axis: String,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    pub policy: Policy,
}

impl RunRow {
    pub fn from_result(key: &RunKey, r: &PolicyResult) -> Self {
        let p2 = || r.cycles.iter().flat_map(|c| c.phase2_iterations.iter().copied());
        let mut failures: Vec<String> = r.cycles.iter().flat_map(|c| c.audit_failures.iter().cloned()).collect();
        failures.sort();
        failures.dedup();
        Self {
            mean_queue_bits: Some(r.mean_queue_bits),
            queue_tn_bits: Some(r.mean_queue_split[0]),
            queue_sat_m_bits: Some(r.mean_queue_split[1]),
            queue_sat_s_bits: Some(r.mean_queue_split[2]),
            ds_misses: Some(r.ds_misses),
            ds_demands: Some(r.ds_demands),
            sinr_floor_misses: Some(r.cycles.iter().map(|c| c.sinr_floor_misses).sum()),
            phase1_iterations: Some(r.cycles.iter().map(|c| c.phase1_iterations).sum()),
            phase2_iterations_max: Some(p2().max().unwrap_or(0)),
            phase2_iterations_total: Some(p2().sum()),
            flagged_tfs: Some(r.cycles.iter().map(|c| c.flagged_tfs).sum()),
            dropped_ds: Some(r.cycles.iter().map(|c| c.dropped_ds).sum()),
            solver_failures: Some(r.cycles.iter().filter(|c| c.solver_failure.is_some()).count()),
            audit_ok: Some(r.audit_ok()),
            audit_failures: failures.join(";"),
            ..Self::failed(key, String::new())
        }
        .with_ok(true)
    }

    pub fn failed(key: &RunKey, error: String) -> Self {
        Self {
            config_hash: key.config_hash.clone(),
            sweep_axis: key.sweep_axis.clone(),
            sweep_value: key.sweep_value,
            seed: key.seed,
            policy: key.policy,
            ok: false,
            error,
            mean_queue_bits: None,
            queue_tn_bits: None,
            queue_sat_m_bits: None,
            queue_sat_s_bits: None,
            ds_misses: None,
            ds_demands: None,
            sinr_floor_misses: None,
            phase1_iterations: None,
            phase2_iterations_max: None,
            phase2_iterations_total: None,
            flagged_tfs: None,
            dropped_ds: None,
            solver_failures: None,
            audit_ok: None,
            audit_failures: String::new(),
        }
    }

    fn with_ok(mut self, ok: bool) -> Self {
        self.ok = ok;
        self
    }

    /// Fraction of DS demands that missed their deadline.
    pub fn ds_miss_rate(&self) -> Option<f64> {
        match (self.ds_misses, self.ds_demands) {
            (Some(m), Some(d)) if d > 0 => Some(m as f64 / d as f64),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub config_hash: String,
    pub sweep_axis: String,
    pub sweep_value: Option<f64>,
    pub policy: Policy,
    pub runs: usize,
    pub failed: usize,
    pub mean_queue_bits_mean: Option<f64>,
    pub mean_queue_bits_std: Option<f64>,
    pub ds_miss_rate_mean: Option<f64>,
    pub ds_miss_rate_std: Option<f64>,
    pub audit_passed: usize,
}

/// Sample mean and standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

fn same_value(a: Option<f64>, b: Option<f64>) -> bool {
    a.map(f64::to_bits) == b.map(f64::to_bits)
}

/// Per (sweep value, policy) summaries, in order of first appearance.
pub fn aggregate(rows: &[RunRow]) -> Vec<AggregateRow> {
    let mut groups: Vec<(Option<f64>, Policy, Vec<&RunRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|g| same_value(g.0, r.sweep_value) && g.1 == r.policy) {
            Some(g) => g.2.push(r),
            None => groups.push((r.sweep_value, r.policy, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(value, policy, members)| {
            let ok: Vec<&RunRow> = members.iter().copied().filter(|r| r.ok).collect();
            let queues: Vec<f64> = ok.iter().filter_map(|r| r.mean_queue_bits).collect();
            let misses: Vec<f64> = ok.iter().filter_map(|r| r.ds_miss_rate()).collect();
            let q = mean_std(&queues);
            let m = mean_std(&misses);
            AggregateRow {
                config_hash: members[0].config_hash.clone(),
                sweep_axis: members[0].sweep_axis.clone(),
                sweep_value: value,
                policy,
                runs: members.len(),
                failed: members.len() - ok.len(),
                mean_queue_bits_mean: q.map(|v| v.0),
                mean_queue_bits_std: q.map(|v| v.1),
                ds_miss_rate_mean: m.map(|v| v.0),
                ds_miss_rate_std: m.map(|v| v.1),
                audit_passed: ok.iter().filter(|r| r.audit_ok == Some(true)).count(),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Joint planning over the cycle.
    Phase1,
    /// Per-TF power refinement of the rounded plan on the planning data.
    Polish,
    /// Per-TF recalibration on actual channels.
    Phase2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub config_hash: String,
    pub sweep_axis: String,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    pub policy: Policy,
    pub cycle: usize,
    pub phase: Phase,
    pub tf: Option<usize>,
    pub iteration: usize,
    pub objective: f64,
    pub surrogate: Option<f64>,
    pub status: StepStatus,
}

/// One row per iteration of `history`, in iteration order.
pub fn emit_convergence(
    key: &RunKey,
    cycle: usize,
    phase: Phase,
    tf: Option<usize>,
    history: &[IterRecord],
) -> Result<Vec<ConvergenceRow>> {
    if history.is_empty() {
        return Err(Error::InvalidParameter("empty iteration history".into()));
    }
    let mut rows: Vec<ConvergenceRow> = history
        .iter()
        .map(|h| ConvergenceRow {
            config_hash: key.config_hash.clone(),
            sweep_axis: key.sweep_axis.clone(),
            sweep_value: key.sweep_value,
            seed: key.seed,
            policy: key.policy,
            cycle,
            phase,
            tf,
            iteration: h.iter,
            objective: h.objective,
            surrogate: h.surrogate.is_finite().then_some(h.surrogate),
            status: h.status,
        })
        .collect();
    rows.sort_by_key(|r| r.iteration);
    Ok(rows)
}

/// Convergence rows of every SCA phase in a policy result.
pub fn convergence_of(key: &RunKey, r: &PolicyResult) -> Vec<ConvergenceRow> {
    let mut out = Vec::new();
    for c in &r.cycles {
        let mut push = |phase, tf, h: &[IterRecord]| {
            if let Ok(rows) = emit_convergence(key, c.cycle, phase, tf, h) {
                out.extend(rows);
            }
        };
        push(Phase::Phase1, None, &c.phase1_history);
        for (t, h) in c.polish_history.iter().enumerate() {
            push(Phase::Polish, Some(t), h);
        }
        for (t, h) in c.phase2_history.iter().enumerate() {
            push(Phase::Phase2, Some(t), h);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    pub crate_version: String,
    pub runs: usize,
    pub failed_runs: usize,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

pub const RUNS_CSV: &str = "runs.csv";
pub const AGGREGATES_CSV: &str = "aggregates.csv";
pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Written files, in the order runs, aggregates, convergence, manifest.
pub fn output_paths(dir: &Path) -> [PathBuf; 4] {
    [RUNS_CSV, AGGREGATES_CSV, CONVERGENCE_CSV, MANIFEST_JSON].map(|f| dir.join(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(policy: Policy, seed: u64, value: Option<f64>) -> RunKey {
        RunKey { config_hash: "h".into(), sweep_axis: "xi".into(), sweep_value: value, seed, policy }
    }

    fn row(policy: Policy, seed: u64, value: Option<f64>, q: f64) -> RunRow {
        let mut r = RunRow::failed(&key(policy, seed, value), String::new());
        r.ok = true;
        r.mean_queue_bits = Some(q);
        r.ds_misses = Some(1);
        r.ds_demands = Some(4);
        r.audit_ok = Some(true);
        r
    }

    #[test]
    fn aggregates_group_in_order() {
        let rows = vec![
            row(Policy::Fia, 1, Some(0.5), 1.0),
            row(Policy::Pia, 1, Some(0.5), 5.0),
            row(Policy::Fia, 2, Some(0.5), 3.0),
            row(Policy::Fia, 1, Some(1.0), 7.0),
            RunRow::failed(&key(Policy::Pia, 2, Some(0.5)), "boom".into()),
        ];
        let a = aggregate(&rows);
        assert_eq!(a.len(), 3);
        assert_eq!((a[0].policy, a[0].sweep_value, a[0].runs, a[0].failed), (Policy::Fia, Some(0.5), 2, 0));
        assert_eq!(a[0].mean_queue_bits_mean, Some(2.0));
        assert_eq!(a[0].mean_queue_bits_std, Some(2f64.sqrt()));
        assert_eq!((a[1].runs, a[1].failed, a[1].mean_queue_bits_std), (2, 1, Some(0.0)));
        assert_eq!(a[1].ds_miss_rate_mean, Some(0.25));
        assert_eq!(a[2].sweep_value, Some(1.0));
    }

    #[test]
    fn convergence_series() {
        let h = |i, o| IterRecord { iter: i, objective: o, surrogate: f64::NAN, max_violation: 0.0, status: StepStatus::Start };
        let k = key(Policy::Piawro, 1, None);
        let one = emit_convergence(&k, 0, Phase::Phase1, None, &[h(0, 2.0)]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].surrogate, None);
        let rows = emit_convergence(&k, 0, Phase::Phase2, Some(3), &[h(2, 1.0), h(0, 3.0), h(1, 2.0)]).unwrap();
        assert!(rows.windows(2).all(|w| w[0].iteration < w[1].iteration));
        assert!(emit_convergence(&k, 0, Phase::Phase1, None, &[]).is_err());
    }

    #[test]
    fn rows_survive_a_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.csv");
        let rows = vec![row(Policy::Greedy, 9, None, 0.1 + 0.2), RunRow::failed(&key(Policy::Fia, 9, None), "x, \"y\"".into())];
        write_csv(&path, &rows).unwrap();
        let back: Vec<RunRow> = read_csv(&path).unwrap();
        assert_eq!(back, rows);
    }
}
