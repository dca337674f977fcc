//! The four evaluated policies behind one interface, each scored on the
//! actual channels and arrivals.

mod greedy;

pub use greedy::{greedy_plan, water_fill, GreedyPlan};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::channel::{ChannelParams, ChannelSet, Gains, Side};
use crate::error::{Error, Result};
use crate::model::{audit, evaluate_cycle, AuditInputs, FiniteBlocklength, FramePlan, QueueState, SystemParams};
use crate::rb_grid::RbGrid;
use crate::sca::{
    calibrate, init_iterate, recover_plan, run_sca, BandSplit, CalibrationInputs, IterRecord, Mode, MsPriority, ProblemData,
    Recovered, ScaParams, Support,
};
use crate::scenario::{RealizationKind, Scenario, ScenarioParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Plan on predictions, then recalibrate AP powers per TF on actual
    /// channels.
    Piawro,
    /// Plan on predictions only.
    Pia,
    /// Plan on actual information (an oracle bound).
    Fia,
    Greedy,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Fia, Policy::Piawro, Policy::Pia, Policy::Greedy];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Piawro => "piawro",
            Policy::Pia => "pia",
            Policy::Fia => "fia",
            Policy::Greedy => "greedy",
        }
    }

    /// Side whose channels the policy's decisions are made on.
    pub fn decision_side(self) -> Side {
        match self {
            Policy::Piawro | Policy::Fia => Side::Actual,
            Policy::Pia | Policy::Greedy => Side::Predicted,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

/// One generated world: geometry, traffic and channels for every cycle.
pub struct Instance {
    pub grid: RbGrid,
    pub scenario: Scenario,
    pub channels: Vec<ChannelSet>,
    pub system: SystemParams,
    pub fb: FiniteBlocklength,
}

impl Instance {
    pub fn generate(
        grid: &RbGrid,
        scenario: &ScenarioParams,
        channel: &ChannelParams,
        system: &SystemParams,
        seed: u64,
    ) -> Result<Self> {
        system.validate()?;
        let sc = Scenario::generate(scenario, grid, seed)?;
        let channels = (0..grid.n_cy).map(|c| ChannelSet::generate(channel, &sc, grid, c)).collect::<Result<_>>()?;
        Ok(Self { grid: grid.clone(), scenario: sc, channels, system: system.clone(), fb: FiniteBlocklength::new(grid, system) })
    }

    fn empty_queue(&self) -> QueueState {
        let p = &self.scenario.params;
        QueueState::zeros(p.n_ap, p.k_ms, p.k_ss)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyOptions {
    pub sca: ScaParams,
    /// Restart the per-TF calibration from an even power split instead of
    /// the planned powers.
    pub cold_calibration: bool,
    /// Bandwidth-part sizing shared by every policy.
    pub band_split: BandSplit,
    /// Link supports the SCA policies plan on; the plan with the lower
    /// merit on the decision-side data is kept.
    pub ms_priorities: Vec<MsPriority>,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        Self {
            sca: ScaParams::default(),
            cold_calibration: false,
            band_split: BandSplit::default(),
            ms_priorities: vec![MsPriority::Satellite, MsPriority::Terrestrial],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub mean_queue_bits: f64,
    /// Terrestrial, satellite-m and satellite-s parts of the mean queue.
    pub mean_queue_split: [f64; 3],
    pub objective: f64,
    pub ds_misses: usize,
    pub ds_demands: usize,
    pub sinr_floor_misses: usize,
    pub phase1_iterations: usize,
    pub phase2_iterations: Vec<usize>,
    pub phase1_history: Vec<IterRecord>,
    /// Per-TF power refinement of the rounded plan on the planning data.
    pub polish_history: Vec<Vec<IterRecord>>,
    pub phase2_history: Vec<Vec<IterRecord>>,
    /// TFs where calibration had to drop DS links or hit a solver failure.
    pub flagged_tfs: usize,
    pub dropped_ds: usize,
    pub solve_seconds: f64,
    /// Hard constraints the realised plan violates (empty when clean).
    pub audit_failures: Vec<String>,
    pub solver_failure: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: Policy,
    pub cycles: Vec<CycleRecord>,
    pub plans: Vec<FramePlan>,
    /// Time-averaged total backlog over the horizon, bits.
    pub mean_queue_bits: f64,
    pub mean_queue_split: [f64; 3],
    pub ds_misses: usize,
    pub ds_demands: usize,
    pub final_queue: QueueState,
}

impl PolicyResult {
    pub fn audit_ok(&self) -> bool {
        self.cycles.iter().all(|c| c.audit_failures.is_empty())
    }

    pub fn solve_seconds(&self) -> f64 {
        self.cycles.iter().map(|c| c.solve_seconds).sum()
    }
}

struct Decision {
    plan: FramePlan,
    phase1: Vec<IterRecord>,
    polish: Vec<Vec<IterRecord>>,
    phase2: Vec<Vec<IterRecord>>,
    flagged: usize,
    dropped_ds: usize,
    failure: Option<String>,
}

fn side_data<'a>(
    inst: &'a Instance,
    support: &'a Support,
    gains: &'a Gains,
    kind: RealizationKind,
    cycle: usize,
    q0: &'a QueueState,
    params: &'a ScaParams,
) -> ProblemData<'a> {
    ProblemData {
        grid: &inst.grid,
        support,
        gains,
        realization: inst.scenario.realization(kind),
        cycle,
        tfs: 0..inst.grid.n_tf,
        q0,
        fb: &inst.fb,
        system: &inst.system,
        params,
        mode: Mode::Joint,
    }
}

fn decide(policy: Policy, inst: &Instance, cycle: usize, q0: &QueueState, opt: &PolicyOptions) -> Result<Decision> {
    let ch = &inst.channels[cycle];
    let (gains, kind) = match policy {
        Policy::Fia => (&ch.actual, RealizationKind::Actual),
        _ => (&ch.predicted, RealizationKind::Predicted),
    };
    if policy == Policy::Greedy {
        let placeholder = Support::from_links(crate::rb_grid::BwpAllocation::empty(&inst.grid), vec![], 0, [0; 3], vec![]);
        let data = side_data(inst, &placeholder, gains, kind, cycle, q0, &opt.sca);
        let g = greedy_plan(&data, opt.band_split)?;
        return Ok(Decision { plan: g.plan, phase1: vec![], polish: vec![], phase2: vec![], flagged: 0, dropped_ds: g.dropped_ds, failure: None });
    }
    if opt.ms_priorities.is_empty() {
        return Err(Error::Config("at least one MS priority is required".into()));
    }
    let mut supports: Vec<Support> = Vec::new();
    for &pr in &opt.ms_priorities {
        let s = Support::build(&inst.grid, gains, inst.system.p_max_ap(), opt.band_split, pr)?;
        if !supports.iter().any(|o| o.links == s.links) {
            supports.push(s);
        }
    }
    let mut best: Option<(f64, Support, Decision, Recovered)> = None;
    for support in supports {
        let (d, rec) = plan_on(inst, &support, gains, kind, cycle, q0, opt)?;
        let merit = plan_merit(inst, &d.plan, gains, kind, cycle, q0, &opt.sca)?;
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, support, d, rec));
        }
    }
    let (_, support, mut d, rec) = best.expect("at least one support");
    if policy == Policy::Piawro {
        let cal = calibrate(&calibration_inputs(inst, &support, &ch.actual, RealizationKind::Actual, cycle, q0, opt), &rec, opt.cold_calibration)?;
        d.flagged = cal.tfs.iter().filter(|t| t.flagged()).count();
        d.dropped_ds += cal.tfs.iter().map(|t| t.dropped_ds).sum::<usize>();
        if d.failure.is_none() {
            d.failure = cal.tfs.iter().find_map(|t| t.failure.clone());
        }
        d.phase2 = cal.tfs.into_iter().map(|t| t.history).collect();
        d.plan = cal.plan;
    }
    Ok(d)
}

fn calibration_inputs<'a>(
    inst: &'a Instance,
    support: &'a Support,
    gains: &'a Gains,
    kind: RealizationKind,
    cycle: usize,
    q0: &'a QueueState,
    opt: &'a PolicyOptions,
) -> CalibrationInputs<'a> {
    CalibrationInputs {
        grid: &inst.grid,
        support,
        gains,
        realization: inst.scenario.realization(kind),
        cycle,
        q0,
        fb: &inst.fb,
        system: &inst.system,
        params: &opt.sca,
    }
}

/// Phase 1 on one support, rounded and then polished on the same data.
fn plan_on(
    inst: &Instance,
    support: &Support,
    gains: &Gains,
    kind: RealizationKind,
    cycle: usize,
    q0: &QueueState,
    opt: &PolicyOptions,
) -> Result<(Decision, Recovered)> {
    let data = side_data(inst, support, gains, kind, cycle, q0, &opt.sca);
    let out = run_sca(&data, init_iterate(&data), opt.sca.max_iter)?;
    let rec = recover_plan(&data, &out.iterate);
    // settle the powers of the rounded plan on the data it was planned on
    let polish = calibrate(&calibration_inputs(inst, support, gains, kind, cycle, q0, opt), &rec, false)?;
    let mut d = Decision {
        plan: polish.plan.clone(),
        phase1: out.history,
        polish: polish.tfs.iter().map(|t| t.history.clone()).collect(),
        phase2: vec![],
        flagged: 0,
        dropped_ds: 0,
        failure: out.failure.or_else(|| polish.tfs.iter().find_map(|t| t.failure.clone())),
    };
    let rec = polish.into_recovered(rec.dropped_ds);
    d.dropped_ds = rec.dropped_ds;
    Ok((d, rec))
}

/// Queue objective plus weighted DS deadline shortfall of `plan`, in the
/// optimiser's units (Mbit), on the given side's channels and arrivals.
fn plan_merit(
    inst: &Instance,
    plan: &FramePlan,
    gains: &Gains,
    kind: RealizationKind,
    cycle: usize,
    q0: &QueueState,
    params: &ScaParams,
) -> Result<f64> {
    let state = plan.expand(&inst.grid)?;
    let ev = evaluate_cycle(&state, gains, inst.scenario.realization(kind), q0, &inst.grid, &inst.fb, cycle)?;
    Ok((ev.objective + params.penalty_deadline * ev.ds_shortfall_bits(&inst.grid)) / 1e6)
}

/// Runs `policy` over every cycle, carrying realised queues forward.
pub fn run_policy(policy: Policy, inst: &Instance, opt: &PolicyOptions) -> Result<PolicyResult> {
    let mut q = inst.empty_queue();
    let mut cycles = Vec::with_capacity(inst.grid.n_cy);
    let mut plans = Vec::with_capacity(inst.grid.n_cy);
    for c in 0..inst.grid.n_cy {
        let start = Instant::now();
        let d = decide(policy, inst, c, &q, opt)?;
        let solve_seconds = start.elapsed().as_secs_f64();
        let state = d.plan.expand(&inst.grid)?;
        let ch = &inst.channels[c];
        let ev = evaluate_cycle(&state, &ch.actual, inst.scenario.realization(RealizationKind::Actual), &q, &inst.grid, &inst.fb, c)?;
        let report = audit(&AuditInputs {
            grid: &inst.grid,
            state: &state,
            gains: ch.side(policy.decision_side()),
            fb: &inst.fb,
            system: &inst.system,
            evaluation: Some(&ev),
        });
        q = ev.trace.final_state();
        cycles.push(CycleRecord {
            cycle: c,
            mean_queue_bits: ev.mean_queue_bits,
            mean_queue_split: ev.trace.mean_queue_by_system(&inst.grid),
            objective: ev.objective,
            ds_misses: ev.ds_misses,
            ds_demands: ev.ds_demands,
            sinr_floor_misses: ev.sinr_floor_misses,
            phase1_iterations: d.phase1.len().saturating_sub(1),
            phase2_iterations: d.phase2.iter().map(|h| h.len().saturating_sub(1)).collect(),
            phase1_history: d.phase1,
            polish_history: d.polish,
            phase2_history: d.phase2,
            flagged_tfs: d.flagged,
            dropped_ds: d.dropped_ds,
            solve_seconds,
            audit_failures: report.failed_hard().into_iter().map(String::from).collect(),
            solver_failure: d.failure,
        });
        plans.push(d.plan);
    }
    let n = cycles.len().max(1) as f64;
    Ok(PolicyResult {
        policy,
        mean_queue_bits: cycles.iter().map(|c| c.mean_queue_bits).sum::<f64>() / n,
        mean_queue_split: std::array::from_fn(|i| cycles.iter().map(|c| c.mean_queue_split[i]).sum::<f64>() / n),
        ds_misses: cycles.iter().map(|c| c.ds_misses).sum(),
        ds_demands: cycles.iter().map(|c| c.ds_demands).sum(),
        cycles,
        plans,
        final_queue: q,
    })
}
