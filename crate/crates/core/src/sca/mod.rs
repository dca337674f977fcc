//! Successive convex approximation for the joint allocation problem.

pub mod calibrate;
pub mod formulation;
pub mod problem;
pub mod recover;
pub mod support;
pub mod surrogate;

use serde::{Deserialize, Serialize};

pub use calibrate::{calibrate, Calibration, CalibrationInputs, TfCalibration};
pub use formulation::{build_subproblem, evaluate_point, Coeffs, Iterate, Mode, PointEval, ProblemData, VarMap};
pub use problem::{solve_convex, ConvexSubproblem, Family, SolveStatus, Solution, Tolerances};
pub use recover::{init_iterate, recover_plan, to_plan, write_into, Recovered};
pub use support::{proportional_split, service_split, BandSplit, Link, LinkKind, MsPriority, Support};
pub use surrogate::{f_ap, f_ap_lin, f_exp_lin, f_sqrt_lin, Surrogates};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaParams {
    /// ℓ0 smoothing scale, as a fraction of each transmitter's budget.
    pub eps_rel: f64,
    /// Relative objective change that ends the outer loop.
    pub delta_obj: f64,
    pub max_iter: usize,
    pub max_iter_calibration: usize,
    pub tol: Tolerances,
    /// Objective weight per nat of SINR-floor violation.
    pub penalty_sinr: f64,
    /// Objective weight per Mbit of deadline shortfall.
    pub penalty_deadline: f64,
    /// Objective weight per Mbit over a buffer cap.
    pub penalty_cap: f64,
}

impl Default for ScaParams {
    fn default() -> Self {
        Self {
            eps_rel: 1e-3,
            delta_obj: 1e-3,
            max_iter: 100,
            max_iter_calibration: 100,
            tol: Tolerances::default(),
            penalty_sinr: 1e3,
            penalty_deadline: 1e5,
            penalty_cap: 1e2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepStatus {
    Start,
    Accepted,
    /// Inner solve was inaccurate or did not lower the merit.
    Stalled,
    /// Convex combination of the previous and proposed points.
    HalfStep,
    Failed,
}

/// One outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    /// Exact penalised objective at the accepted point.
    pub objective: f64,
    /// Value of the convex subproblem that produced it.
    pub surrogate: f64,
    pub max_violation: f64,
    pub status: StepStatus,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaOutcome {
    pub iterate: Iterate,
    pub eval: PointEval,
    pub history: Vec<IterRecord>,
    pub converged: bool,
    /// Inner-solver failure that stopped the loop early, if any.
    pub failure: Option<String>,
}

impl ScaOutcome {
    pub fn iterations(&self) -> usize {
        self.history.len().saturating_sub(1)
    }
}

/// Outer SCA loop from `init`.
///
/// Every subproblem is an inner approximation that is tight at its
/// expansion point, so the exact objective never increases along accepted
/// steps. A step that fails to decrease it (or an inaccurate solve) counts
/// as a stall: the first stall re-solves with a larger iteration budget, a
/// second consecutive one backs off to the midpoint of the old and new
/// points and stops if that also fails. The loop ends at the first step
/// gaining no more than `delta_obj` (relative), and that step is not taken:
/// the returned point is one the next subproblem cannot improve on, so
/// restarting from it on the same data returns it unchanged.
pub fn run_sca(data: &ProblemData, init: Iterate, max_iter: usize) -> crate::Result<ScaOutcome> {
    data.check(&init)?;
    let co = Coeffs::new(data);
    let params = data.params;
    let mut x = init;
    let mut ev = evaluate_point(data, &co, &x);
    let mut history =
        vec![IterRecord { iter: 0, objective: ev.objective, surrogate: ev.objective, max_violation: 0.0, status: StepStatus::Start }];
    let mut stalls = 0;
    let mut converged = false;
    let mut failure = None;
    let mut tol = params.tol;
    let mut i = 0;
    while i < max_iter {
        i += 1;
        let (pb, map) = build_subproblem(data, &co, &x, &ev)?;
        let sol = match solve_convex(&pb, &tol) {
            Ok(s) => s,
            Err(e) => {
                history.push(IterRecord { iter: i, objective: ev.objective, surrogate: f64::NAN, max_violation: f64::NAN, status: StepStatus::Failed });
                failure = Some(e.to_string());
                break;
            }
        };
        let cand = map.extract(&sol.x, &x);
        let ev_c = evaluate_point(data, &co, &cand);
        let scale = ev.objective.abs().max(1e-9);
        let gain = ev.objective - ev_c.objective;
        let ok = gain >= -params.delta_obj * scale * 1e-3;
        if ok {
            stalls = 0;
            tol = params.tol;
            let done = gain.abs() <= params.delta_obj * scale;
            if !done {
                x = cand;
                ev = ev_c;
            }
            history.push(IterRecord { iter: i, objective: ev.objective, surrogate: sol.objective, max_violation: sol.max_violation, status: StepStatus::Accepted });
            if done {
                converged = true;
                break;
            }
            continue;
        }
        stalls += 1;
        if stalls < 2 {
            tol.max_iter = tol.max_iter.saturating_mul(2);
            history.push(IterRecord { iter: i, objective: ev.objective, surrogate: sol.objective, max_violation: sol.max_violation, status: StepStatus::Stalled });
            continue;
        }
        let half = x.blend(&cand, 0.5);
        let ev_h = evaluate_point(data, &co, &half);
        let improved = ev_h.objective < ev.objective;
        if improved {
            x = half;
            ev = ev_h;
            stalls = 0;
        }
        history.push(IterRecord { iter: i, objective: ev.objective, surrogate: sol.objective, max_violation: sol.max_violation, status: StepStatus::HalfStep });
        if !improved {
            converged = true;
            break;
        }
    }
    Ok(ScaOutcome { iterate: x, eval: ev, history, converged, failure })
}
