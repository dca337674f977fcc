use serde::{Deserialize, Serialize};
use std::fmt;

use super::eval::{sinr_d, CycleEvaluation};
use super::state::AllocationState;
use super::{FiniteBlocklength, SystemParams};
use crate::channel::Gains;
use crate::rb_grid::{RbGrid, Service};

/// Constraints every emitted allocation must satisfy exactly. C14–C16 are
/// metered on realized draws instead.
pub const HARD_CONSTRAINTS: [&str; 15] =
    ["C0", "C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "C9", "C10", "C11", "C12", "C13", "TDD"];

const REL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub violations: usize,
    /// Largest positive residual (constraint units), 0 when satisfied.
    pub worst: f64,
    pub hard: bool,
}

impl ConstraintCheck {
    fn new(name: &str) -> Self {
        Self { name: name.into(), violations: 0, worst: 0.0, hard: HARD_CONSTRAINTS.contains(&name) }
    }

    /// Records `lhs ≤ rhs` with a relative tolerance.
    fn le(&mut self, lhs: f64, rhs: f64) {
        let excess = lhs - rhs;
        if !(excess <= REL_TOL * rhs.abs().max(1e-12)) {
            self.violations += 1;
            let e = if excess.is_nan() { f64::INFINITY } else { excess };
            self.worst = self.worst.max(e);
        }
    }

    fn flag(&mut self, ok: bool, residual: f64) {
        if !ok {
            self.violations += 1;
            self.worst = self.worst.max(residual);
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: Vec<ConstraintCheck>,
}

impl AuditReport {
    pub fn get(&self, name: &str) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn hard_ok(&self) -> bool {
        self.checks.iter().filter(|c| c.hard).all(ConstraintCheck::passed)
    }

    pub fn failed_hard(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| c.hard && !c.passed()).map(|c| c.name.as_str()).collect()
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = if c.passed() { "ok" } else { "VIOLATED" };
            let kind = if c.hard { "hard" } else { "soft" };
            writeln!(f, "{:<4} {kind} {status:<8} count={} worst={:.3e}", c.name, c.violations, c.worst)?;
        }
        Ok(())
    }
}

pub struct AuditInputs<'a> {
    pub grid: &'a RbGrid,
    pub state: &'a AllocationState,
    /// Channels the decision was taken on; C10 is checked against these.
    pub gains: &'a Gains,
    pub fb: &'a FiniteBlocklength,
    pub system: &'a SystemParams,
    /// Realized evaluation, used for C14–C16 when present.
    pub evaluation: Option<&'a CycleEvaluation>,
}

/// Checks an allocation against the full constraint list.
pub fn audit(inp: &AuditInputs) -> AuditReport {
    let AuditInputs { grid, state: st, gains, fb, system, evaluation } = *inp;
    let (n_ap, kd, fd, tsd) = st.p_d.dim();
    let (_, km, fm, tsm) = st.p_m.dim();
    let (ks, fs, tss) = st.sp_s.dim();
    let mut checks = Vec::new();

    let mut c0 = ConstraintCheck::new("C0");
    let power_ok = |p: f64, on: bool| p.is_finite() && p >= 0.0 && (on || p == 0.0);
    for (p, &on) in st.p_d.iter().zip(st.alpha_d.iter()).chain(st.p_m.iter().zip(st.alpha_m.iter())) {
        c0.flag(power_ok(*p, on), p.abs());
    }
    for (p, &on) in st.sp_m.iter().zip(st.beta_m.iter()).chain(st.sp_s.iter().zip(st.beta_s.iter())) {
        c0.flag(power_ok(*p, on), p.abs());
    }
    let sp = &st.splits;
    for &w in sp.omega_cn.iter().chain(sp.omega_tn_d.iter()).chain(sp.omega_tn_m.iter()) {
        c0.flag(w.is_finite() && (-REL_TOL..=1.0 + REL_TOL).contains(&w), (w - w.clamp(0.0, 1.0)).abs());
    }
    checks.push(c0);

    let bwp = grid.validate_bwp(&st.b);
    let mut c1 = ConstraintCheck::new("C1");
    c1.flag(bwp.c1.is_empty(), bwp.c1.len() as f64);
    c1.violations = bwp.c1.len();
    let mut c2 = ConstraintCheck::new("C2");
    c2.flag(bwp.c2.is_empty(), bwp.c2.len() as f64);
    c2.violations = bwp.c2.len();
    let mut c3 = ConstraintCheck::new("C3");
    c3.le(bwp.c3_used_khz, grid.total_bw_khz);
    checks.extend([c1, c2, c3]);

    // association only on SBs of the active BWP
    let mut c4 = ConstraintCheck::new("C4");
    for ((_, _, f, _), &a) in st.alpha_d.indexed_iter() {
        c4.flag(!a || st.b.get(Service::Ds, f), 1.0);
    }
    for ((_, _, f, _), &a) in st.alpha_m.indexed_iter() {
        c4.flag(!a || st.b.get(Service::Ms, f), 1.0);
    }
    let mut c7 = ConstraintCheck::new("C7");
    for ((_, f, _), &a) in st.beta_m.indexed_iter() {
        c7.flag(!a || st.b.get(Service::Ms, f), 1.0);
    }
    for ((_, f, _), &a) in st.beta_s.indexed_iter() {
        c7.flag(!a || st.b.get(Service::Ss, f), 1.0);
    }

    // per-RB orthogonality
    let mut c5 = ConstraintCheck::new("C5");
    let mut c6 = ConstraintCheck::new("C6");
    let mut c8 = ConstraintCheck::new("C8");
    let mut c9 = ConstraintCheck::new("C9");
    let mut tdd = ConstraintCheck::new("TDD");
    for ts in 0..tsd {
        let dl = grid.is_tn_dl(Service::Ds, ts % grid.ts_per_tf(Service::Ds));
        for f in 0..fd {
            for n in 0..n_ap {
                let c = (0..kd).filter(|&k| st.alpha_d[[n, k, f, ts]]).count();
                c5.le(c as f64, 1.0);
                if !dl {
                    tdd.flag(c == 0, c as f64);
                }
            }
            for k in 0..kd {
                let c = (0..n_ap).filter(|&n| st.alpha_d[[n, k, f, ts]]).count();
                c6.le(c as f64, 1.0);
            }
        }
    }
    for ts in 0..tsm {
        let dl = grid.is_tn_dl(Service::Ms, ts % grid.ts_per_tf(Service::Ms));
        for f in 0..fm {
            for n in 0..n_ap {
                let c = (0..km).filter(|&k| st.alpha_m[[n, k, f, ts]]).count();
                c5.le(c as f64, 1.0);
                if !dl {
                    tdd.flag(c == 0, c as f64);
                }
            }
            let c = (0..km).filter(|&k| st.beta_m[[k, f, ts]]).count();
            c8.le(c as f64, 1.0);
            for k in 0..km {
                let c = (0..n_ap).filter(|&n| st.alpha_m[[n, k, f, ts]]).count() + st.beta_m[[k, f, ts]] as usize;
                c9.le(c as f64, 1.0);
            }
        }
    }
    for ts in 0..tss {
        for f in 0..fs {
            let c = (0..ks).filter(|&k| st.beta_s[[k, f, ts]]).count();
            c8.le(c as f64, 1.0);
        }
    }

    let mut c10 = ConstraintCheck::new("C10");
    for ((n, k, f, ts), &a) in st.alpha_d.indexed_iter() {
        if a {
            let g = sinr_d(st, gains, n, k, f, ts);
            c10.le(fb.gamma0 * (1.0 - 1e-6), g);
            if c10.violations > 0 && c10.worst > 0.0 {
                c10.worst = c10.worst.max(fb.gamma0 - g);
            }
        }
    }

    // instantaneous power budgets; the finer TS grid defines the instants
    let mut c11 = ConstraintCheck::new("C11");
    let ratio_dm = grid.ts_per_tf(Service::Ds) / grid.ts_per_tf(Service::Ms);
    for n in 0..n_ap {
        for ts in 0..tsd {
            let tm = ts / ratio_dm;
            let pd: f64 = (0..kd).flat_map(|k| (0..fd).map(move |f| (k, f))).map(|(k, f)| st.p_d[[n, k, f, ts]]).sum();
            let pm: f64 = (0..km).flat_map(|k| (0..fm).map(move |f| (k, f))).map(|(k, f)| st.p_m[[n, k, f, tm]]).sum();
            c11.le(pd + pm, system.p_max_ap());
        }
    }
    let mut c12 = ConstraintCheck::new("C12");
    let ratio_ms = grid.ts_per_tf(Service::Ms) / grid.ts_per_tf(Service::Ss);
    for ts in 0..tsm {
        let s = ts / ratio_ms;
        let pm: f64 = st.sp_m.index_axis(ndarray::Axis(2), ts).sum();
        let ps: f64 = st.sp_s.index_axis(ndarray::Axis(2), s).sum();
        c12.le(pm + ps, system.p_max_sat());
    }

    let mut c13 = ConstraintCheck::new("C13");
    let res = sp.simplex_residual();
    c13.flag(res <= 1e-9, res);

    checks.extend([c4, c5, c6, c7, c8, c9, c10, c11, c12, c13, tdd]);

    let mut c14 = ConstraintCheck::new("C14");
    let mut c15 = ConstraintCheck::new("C15");
    let mut c16 = ConstraintCheck::new("C16");
    if let Some(ev) = evaluation {
        let td = grid.ts_duration_s(Service::Ds);
        for ((n, k, sf), &lambda) in ev.arrivals.ds.indexed_iter() {
            if lambda > 0.0 {
                c14.le(lambda, crate::units::nats_to_bits(td * ev.rates.ds[[n, k, sf]]));
            }
        }
        let cap = system.queue_cap_bits();
        for &q in ev.trace.tn.iter() {
            c15.le(q, cap);
        }
        for &q in ev.trace.sat_m.iter().chain(ev.trace.sat_s.iter()) {
            c16.le(q, cap);
        }
    }
    checks.extend([c14, c15, c16]);
    AuditReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{evaluate_cycle, QueueState};
    use crate::rb_grid::{BwpAllocation, NumerologyParams};
    use crate::scenario::{Realization, RealizationKind};
    use ndarray::{Array2, Array3, Array4};

    fn setup() -> (RbGrid, Gains, FiniteBlocklength, SystemParams) {
        let grid = RbGrid::build(5000.0, NumerologyParams::default(), 1, 1, 6).unwrap();
        let f = |x| grid.sb_count(x);
        let gains = Gains {
            ap_d: Array4::from_elem((2, 2, f(Service::Ds), 1), 1.0),
            ap_m: Array4::from_elem((2, 2, f(Service::Ms), 1), 1.0),
            sat_m: Array3::from_elem((2, f(Service::Ms), 1), 1.0),
            sat_s: Array3::from_elem((1, f(Service::Ss), 1), 1.0),
            noise: [1e-3; 3],
        };
        let sys = SystemParams::default();
        (grid.clone(), gains, FiniteBlocklength::new(&grid, &sys), sys)
    }

    fn run(st: &AllocationState, g: &Gains, grid: &RbGrid, fb: &FiniteBlocklength, sys: &SystemParams) -> AuditReport {
        audit(&AuditInputs { grid, state: st, gains: g, fb, system: sys, evaluation: None })
    }

    #[test]
    fn zero_state_passes_everything() {
        let (grid, g, fb, sys) = setup();
        let st = AllocationState::empty(&grid, 2, [2, 2, 1]);
        let r = Realization {
            kind: RealizationKind::Actual,
            ds: Array2::zeros((2, 10)),
            ms: Array2::zeros((2, 1)),
            ss: Array2::zeros((1, 1)),
        };
        let ev = evaluate_cycle(&st, &g, &r, &QueueState::zeros(2, 2, 1), &grid, &fb, 0).unwrap();
        let rep = audit(&AuditInputs { grid: &grid, state: &st, gains: &g, fb: &fb, system: &sys, evaluation: Some(&ev) });
        assert!(rep.checks.iter().all(ConstraintCheck::passed), "{rep}");
        assert_eq!(rep.checks.len(), 18);
    }

    #[test]
    fn ap_budget_overshoot_by_one_milliwatt() {
        let (grid, g, fb, sys) = setup();
        let mut st = AllocationState::empty(&grid, 2, [2, 2, 1]);
        st.b = BwpAllocation::contiguous(&grid, [2, 2, 0]).unwrap();
        let fm = st.b.active(Service::Ms).next().unwrap();
        st.alpha_d[[0, 0, 0, 0]] = true;
        st.alpha_m[[0, 1, fm, 0]] = true;
        st.p_d[[0, 0, 0, 0]] = sys.p_max_ap() / 2.0;
        st.p_m[[0, 1, fm, 0]] = sys.p_max_ap() / 2.0 + 1e-3;
        let rep = run(&st, &g, &grid, &fb, &sys);
        let c11 = rep.get("C11").unwrap();
        // the m-TS spans two d-TS instants
        assert_eq!(c11.violations, 1);
        assert!((c11.worst - 1e-3).abs() < 1e-9);
        st.p_m[[0, 1, fm, 0]] -= 1e-3;
        assert!(run(&st, &g, &grid, &fb, &sys).get("C11").unwrap().passed());
    }

    #[test]
    fn sinr_floor_and_orthogonality() {
        let (grid, g, fb, sys) = setup();
        let mut st = AllocationState::empty(&grid, 2, [2, 2, 1]);
        st.b = BwpAllocation::contiguous(&grid, [2, 2, 2]).unwrap();
        st.alpha_d[[0, 0, 0, 0]] = true;
        st.p_d[[0, 0, 0, 0]] = 1e-3 * fb.gamma0 * 0.5;
        let rep = run(&st, &g, &grid, &fb, &sys);
        assert!(!rep.get("C10").unwrap().passed());
        st.p_d[[0, 0, 0, 0]] = 1e-3 * fb.gamma0 * 2.0;
        assert!(run(&st, &g, &grid, &fb, &sys).hard_ok());

        // one AP serving two DS UEs on one RB
        st.alpha_d[[0, 1, 0, 0]] = true;
        st.p_d[[0, 1, 0, 0]] = 1.0;
        let rep = run(&st, &g, &grid, &fb, &sys);
        assert_eq!(rep.get("C5").unwrap().violations, 1);
        st.alpha_d[[0, 1, 0, 0]] = false;
        st.p_d[[0, 1, 0, 0]] = 0.0;

        // AP and satellite serving the same MS UE on one RB
        let fm = st.b.active(Service::Ms).next().unwrap();
        st.alpha_m[[1, 0, fm, 0]] = true;
        st.p_m[[1, 0, fm, 0]] = 1.0;
        st.beta_m[[0, fm, 0]] = true;
        st.sp_m[[0, fm, 0]] = 1.0;
        let rep = run(&st, &g, &grid, &fb, &sys);
        assert_eq!(rep.failed_hard(), vec!["C9"]);
    }

    #[test]
    fn association_outside_bwp_and_uplink() {
        let (grid, g, fb, sys) = setup();
        let mut st = AllocationState::empty(&grid, 2, [2, 2, 1]);
        st.b = BwpAllocation::contiguous(&grid, [1, 1, 1]).unwrap();
        let off = (0..grid.sb_count(Service::Ss)).find(|&f| !st.b.get(Service::Ss, f)).unwrap();
        st.beta_s[[0, off, 0]] = true;
        st.sp_s[[0, off, 0]] = 1.0;
        assert_eq!(run(&st, &g, &grid, &fb, &sys).failed_hard(), vec!["C7"]);
        st.beta_s[[0, off, 0]] = false;
        st.sp_s[[0, off, 0]] = 0.0;
        let ul = grid.tn_dl_ts_per_tf(Service::Ms);
        let fm = st.b.active(Service::Ms).next().unwrap();
        st.alpha_m[[0, 0, fm, ul]] = true;
        st.p_m[[0, 0, fm, ul]] = 1.0;
        assert_eq!(run(&st, &g, &grid, &fb, &sys).failed_hard(), vec!["TDD"]);
        st.p_m[[0, 0, fm, ul]] = -1.0;
        assert!(run(&st, &g, &grid, &fb, &sys).failed_hard().contains(&"C0"));
    }
}
