//! Paired-seed comparisons over run rows.

use serde::{Deserialize, Serialize};

use super::output::RunRow;
use crate::algorithms::Policy;

/// How often `better` had a mean queue no larger than `worse` on the same
/// (sweep value, seed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairConsistency {
    pub better: Policy,
    pub worse: Policy,
    pub agree: usize,
    pub pairs: usize,
}

impl PairConsistency {
    pub fn fraction(&self) -> f64 {
        if self.pairs == 0 {
            0.0
        } else {
            self.agree as f64 / self.pairs as f64
        }
    }
}

fn queue_of(rows: &[RunRow], value: Option<f64>, seed: u64, policy: Policy) -> Option<f64> {
    rows.iter()
        .find(|r| r.ok && r.policy == policy && r.seed == seed && r.sweep_value.map(f64::to_bits) == value.map(f64::to_bits))
        .and_then(|r| r.mean_queue_bits)
}

/// Ties within `rel_tol` of the larger queue count as agreement.
pub fn pair_consistency(rows: &[RunRow], better: Policy, worse: Policy, rel_tol: f64) -> PairConsistency {
    let mut seen: Vec<(Option<u64>, u64)> = Vec::new();
    let (mut agree, mut pairs) = (0, 0);
    for r in rows.iter().filter(|r| r.policy == better) {
        let id = (r.sweep_value.map(f64::to_bits), r.seed);
        if seen.contains(&id) {
            continue;
        }
        seen.push(id);
        if let (Some(a), Some(b)) =
            (queue_of(rows, r.sweep_value, r.seed, better), queue_of(rows, r.sweep_value, r.seed, worse))
        {
            pairs += 1;
            if a <= b + rel_tol * a.abs().max(b.abs()) {
                agree += 1;
            }
        }
    }
    PairConsistency { better, worse, agree, pairs }
}

/// Consistency of each adjacent pair in `order` (best first).
pub fn ordering(rows: &[RunRow], order: &[Policy], rel_tol: f64) -> Vec<PairConsistency> {
    order.windows(2).map(|w| pair_consistency(rows, w[0], w[1], rel_tol)).collect()
}

/// Mean over ok runs of `policy` at each sweep value, in order of first
/// appearance.
pub fn policy_means(rows: &[RunRow], policy: Policy) -> Vec<(Option<f64>, f64)> {
    let mut out: Vec<(Option<f64>, Vec<f64>)> = Vec::new();
    for r in rows.iter().filter(|r| r.ok && r.policy == policy) {
        let Some(q) = r.mean_queue_bits else { continue };
        match out.iter_mut().find(|g| g.0.map(f64::to_bits) == r.sweep_value.map(f64::to_bits)) {
            Some(g) => g.1.push(q),
            None => out.push((r.sweep_value, vec![q])),
        }
    }
    out.into_iter().map(|(v, qs)| (v, qs.iter().sum::<f64>() / qs.len() as f64)).collect()
}

/// Seed-averaged re-optimisation gain, mean queue of PIA minus PIAwRO, at
/// each sweep value. Only seeds where both runs succeeded count.
pub fn reoptimization_gain(rows: &[RunRow]) -> Vec<(Option<f64>, f64)> {
    let mut out: Vec<(Option<f64>, Vec<f64>)> = Vec::new();
    for r in rows.iter().filter(|r| r.ok && r.policy == Policy::Pia) {
        let (Some(pia), Some(ro)) =
            (r.mean_queue_bits, queue_of(rows, r.sweep_value, r.seed, Policy::Piawro))
        else {
            continue;
        };
        match out.iter_mut().find(|g| g.0.map(f64::to_bits) == r.sweep_value.map(f64::to_bits)) {
            Some(g) => g.1.push(pia - ro),
            None => out.push((r.sweep_value, vec![pia - ro])),
        }
    }
    out.into_iter().map(|(v, g)| (v, g.iter().sum::<f64>() / g.len() as f64)).collect()
}
