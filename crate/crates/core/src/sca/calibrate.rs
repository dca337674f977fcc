//! Per-TF recalibration of AP powers on actual channels with the
//! association, bandwidth, satellite powers and splits held fixed.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::formulation::{evaluate_point, Coeffs, Iterate, Mode, ProblemData};
use super::recover::{write_into, Recovered};
use super::support::{LinkKind, Support};
use super::{run_sca, IterRecord, ScaParams};
use crate::channel::Gains;
use crate::error::Result;
use crate::model::{FiniteBlocklength, FramePlan, QueueState, SystemParams};
use crate::rb_grid::{RbGrid, Service};
use crate::scenario::Realization;

/// What happened in one TF.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TfCalibration {
    pub tf: usize,
    pub iterations: usize,
    /// The warm start was already within tolerance and was kept as is.
    pub kept_warm_start: bool,
    /// DS links switched off because the SINR floor stayed out of reach.
    pub dropped_ds: usize,
    pub objective: f64,
    pub history: Vec<IterRecord>,
    pub failure: Option<String>,
}

impl TfCalibration {
    pub fn flagged(&self) -> bool {
        self.dropped_ds > 0 || self.failure.is_some()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Calibration {
    pub plan: FramePlan,
    /// Calibrated normalised powers over the whole cycle, `[link][t]`.
    pub iterate: Iterate,
    /// `[link][t]`
    pub active: Array2<bool>,
    pub tfs: Vec<TfCalibration>,
}

impl Calibration {
    /// The calibrated plan in the shape of a rounded Phase 1 result, so it
    /// can seed a further calibration.
    pub fn into_recovered(self, dropped_ds: usize) -> Recovered {
        let dropped = dropped_ds + self.tfs.iter().map(|t| t.dropped_ds).sum::<usize>();
        Recovered { plan: self.plan, active: self.active, iterate: self.iterate, dropped_ds: dropped }
    }
}

pub struct CalibrationInputs<'a> {
    pub grid: &'a RbGrid,
    pub support: &'a Support,
    pub gains: &'a Gains,
    pub realization: &'a Realization,
    pub cycle: usize,
    pub q0: &'a QueueState,
    pub fb: &'a FiniteBlocklength,
    pub system: &'a SystemParams,
    pub params: &'a ScaParams,
}

/// Runs the calibration TF by TF. Each TF starts from the queues the
/// previous calibrated TF leaves behind. With `cold` the AP powers restart
/// from an even split of each AP's budget instead of the planned values.
pub fn calibrate(inp: &CalibrationInputs, rec: &Recovered, cold: bool) -> Result<Calibration> {
    let s = inp.support;
    let eps = inp.params.eps_rel;
    let mut plan = rec.plan.clone();
    let mut q = inp.q0.clone();
    let mut out = Vec::with_capacity(inp.grid.n_tf);
    let mut iterate = rec.iterate.clone();
    let mut activity = rec.active.clone();
    for t in 0..inp.grid.n_tf {
        let mut active: Vec<bool> = rec.active.column(t).to_vec();
        let mut warm = Iterate { p: rec.iterate.p.slice(s![.., t..t + 1]).to_owned(), omega: rec.iterate.omega.clone() };
        fit_budgets(s, &mut warm, &active, eps);
        if cold {
            for n in 0..s.n_ap {
                let links: Vec<usize> = (0..s.len()).filter(|&l| s.links[l].node == Some(n) && active[l]).collect();
                for &l in &links {
                    warm.p[[l, 0]] = (0.5 / links.len() as f64).max(eps);
                }
            }
        }
        let start = warm.clone();
        let owned = TfProblem { active: active.clone(), q0: q.clone(), t };
        let res = run_sca(&owned.view(inp), warm, inp.params.max_iter_calibration)?;
        let mut x = res.iterate.clone();

        // the floor may still be out of reach on actual channels
        let dropped = drop_ds_below_floor(&owned.view(inp), inp.gains, &mut x, &mut active);
        fit_budgets(s, &mut x, &active, eps);
        iterate.p.column_mut(t).assign(&x.p.column(0));
        activity.column_mut(t).assign(&ndarray::ArrayView1::from(&active));
        let owned = TfProblem { active, q0: q, t };
        let pd = owned.view(inp);
        let ev = evaluate_point(&pd, &Coeffs::new(&pd), &x);
        write_into(&mut plan, &pd, &x);
        q = ev.end_queue;
        out.push(TfCalibration {
            tf: t,
            iterations: res.iterations(),
            kept_warm_start: !cold && res.iterate == start,
            dropped_ds: dropped,
            objective: ev.objective,
            history: res.history,
            failure: res.failure,
        });
    }
    plan.sync_indicators();
    plan.sync_bandwidth(inp.grid);
    Ok(Calibration { plan, iterate, active: activity, tfs: out })
}

struct TfProblem {
    active: Vec<bool>,
    q0: QueueState,
    t: usize,
}

impl TfProblem {
    fn view<'a>(&'a self, inp: &'a CalibrationInputs) -> ProblemData<'a> {
        ProblemData {
            grid: inp.grid,
            support: inp.support,
            gains: inp.gains,
            realization: inp.realization,
            cycle: inp.cycle,
            tfs: self.t..self.t + 1,
            q0: &self.q0,
            fb: inp.fb,
            system: inp.system,
            params: inp.params,
            mode: Mode::Calibrate { active: self.active.clone() },
        }
    }
}

/// Switches off the weakest DS link until every remaining one meets the
/// floor on `gains`. Returns how many were dropped.
fn drop_ds_below_floor(pd: &ProblemData, gains: &Gains, x: &mut Iterate, active: &mut [bool]) -> usize {
    let s = pd.support;
    let pmax = pd.system.p_max_ap();
    let noise = gains.noise(Service::Ds);
    let abs = pd.tfs.start;
    let floor = pd.fb.gamma0 * (1.0 - 1e-9);
    let mut dropped = 0;
    loop {
        let worst = s
            .of_kind(LinkKind::Ds)
            .filter(|&l| active[l])
            .map(|l| {
                let interf: f64 = s.interferers[l]
                    .iter()
                    .filter(|&&j| active[j])
                    .map(|&j| pmax * x.p[[j, 0]] * s.links[j].gain_to(gains, s.links[l].ue, abs))
                    .sum();
                (l, pmax * x.p[[l, 0]] * s.links[l].gain(gains, abs) / (interf + noise))
            })
            .filter(|&(_, sinr)| sinr < floor)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            Some((l, _)) => {
                active[l] = false;
                x.p[[l, 0]] = 0.0;
                dropped += 1;
            }
            None => return dropped,
        }
    }
}

/// Projects powers into the calibration box: inactive links off, active AP
/// links at least `eps`, and every transmitter within its budget (AP excess
/// over `eps` is shrunk proportionally). Leaves a point already in the box
/// untouched, so a calibrated plan restarts exactly where it stopped.
fn fit_budgets(s: &Support, x: &mut Iterate, active: &[bool], eps: f64) {
    for (l, link) in s.links.iter().enumerate() {
        if !active[l] {
            x.p[[l, 0]] = 0.0;
        } else if link.kind.is_ap() {
            x.p[[l, 0]] = x.p[[l, 0]].max(eps);
        }
    }
    for node in (0..s.n_ap).map(Some).chain([None]) {
        let links: Vec<usize> = (0..s.len()).filter(|&l| s.links[l].node == node && active[l]).collect();
        let total: f64 = links.iter().map(|&l| x.p[[l, 0]]).sum();
        if total <= 1.0 {
            continue;
        }
        let floor = if node.is_some() { eps } else { 0.0 };
        let excess = total - floor * links.len() as f64;
        let room = 1.0 - floor * links.len() as f64;
        for &l in &links {
            x.p[[l, 0]] = floor + (x.p[[l, 0]] - floor) * room / excess;
        }
    }
}
