//! The convexified subproblem over one cycle (joint mode) or one TF with
//! fixed binaries (calibration mode), plus an exact evaluation of any point
//! that doubles as the SCA merit function.
//!
//! Units: powers are normalised by the transmitter's budget, gains and
//! interference by the receiver noise, queues are in Mbit and per-RB rates
//! in nats per symbol.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ops::Range;

use super::problem::{Affine, ConvexSubproblem, Family, VarKind};
use super::support::{LinkKind, Support};
use super::surrogate::{f_ap, f_ap_lin_coeffs};
use super::ScaParams;
use crate::channel::Gains;
use crate::error::{Error, Result};
use crate::model::{FiniteBlocklength, QueueState, SystemParams};
use crate::rb_grid::{RbGrid, Service, SF_PER_TF};
use crate::scenario::Realization;

const MBIT: f64 = 1e-6;
const RATE_FLOOR: f64 = -50.0;

/// Which subproblem to build.
#[derive(Clone, Debug)]
pub enum Mode {
    /// All binaries relaxed, every link and split free.
    Joint,
    /// Binaries, satellite powers and splits fixed; AP powers on active
    /// links calibrated.
    Calibrate { active: Vec<bool> },
}

/// Everything a subproblem depends on besides the expansion point.
pub struct ProblemData<'a> {
    pub grid: &'a RbGrid,
    pub support: &'a Support,
    pub gains: &'a Gains,
    pub realization: &'a Realization,
    pub cycle: usize,
    /// TFs of the cycle covered by this problem.
    pub tfs: Range<usize>,
    /// Queues (bits) at the start of `tfs.start`.
    pub q0: &'a QueueState,
    pub fb: &'a FiniteBlocklength,
    pub system: &'a SystemParams,
    pub params: &'a ScaParams,
    pub mode: Mode,
}

/// Primal point: normalised link powers `[link][tf]` and MS splits
/// ω̄_m `[n][k]`. Every other variable is implied by these at expansion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub p: Array2<f64>,
    pub omega: Array2<f64>,
}

impl Iterate {
    pub fn blend(&self, other: &Iterate, step: f64) -> Iterate {
        Iterate { p: &self.p + &((&other.p - &self.p) * step), omega: &self.omega + &((&other.omega - &self.omega) * step) }
    }
}

/// Normalised gains per TF: own link gain and interferer couplings.
pub struct Coeffs {
    /// `[link][t]`: p_max·g/σ².
    pub own: Array2<f64>,
    /// `[link][t][j]` aligned with `support.interferers[link]`.
    pub cross: Vec<Vec<Vec<f64>>>,
}

impl Coeffs {
    pub fn new(data: &ProblemData) -> Self {
        let s = data.support;
        let nt = data.tfs.len();
        let pmax = |kind: LinkKind| if kind.is_ap() { data.system.p_max_ap() } else { data.system.p_max_sat() };
        let mut own = Array2::zeros((s.len(), nt));
        let mut cross = Vec::with_capacity(s.len());
        for (i, l) in s.links.iter().enumerate() {
            let noise = data.gains.noise(l.kind.service());
            let mut per_t = Vec::with_capacity(nt);
            for (t, abs) in data.tfs.clone().enumerate() {
                own[[i, t]] = pmax(l.kind) * l.gain(data.gains, abs) / noise;
                per_t.push(
                    s.interferers[i]
                        .iter()
                        .map(|&j| {
                            let lj = &s.links[j];
                            pmax(lj.kind) * lj.gain_to(data.gains, l.ue, abs) / noise
                        })
                        .collect(),
                );
            }
            cross.push(per_t);
        }
        Self { own, cross }
    }
}

/// Exact quantities at a point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointEval {
    /// Penalised objective (Mbit·slots plus weighted slacks).
    pub objective: f64,
    /// Queue part of the objective.
    pub queue_objective: f64,
    /// ln(interference + noise) − ln(noise), `[link][t]`.
    pub eta: Array2<f64>,
    /// ln(signal + interference + noise) − ln(noise), `[link][t]`.
    pub ln_arg: Array2<f64>,
    /// RB count per SF of each DS UE, `[k][t]`.
    pub zeta: Array2<f64>,
    /// Σ slacks per soft family: C10a, C14, caps.
    pub slacks: [f64; 3],
    /// Queues (bits) after the last TF covered.
    pub end_queue: QueueState,
    /// AP chains `[n][k][t]` at the end of each TF (bits), for reporting.
    pub tf_end_tn: Array3<f64>,
}

impl PointEval {
    pub fn rate(&self, l: usize, t: usize) -> f64 {
        self.ln_arg[[l, t]] - self.eta[[l, t]]
    }
}

struct Consts {
    n_dl_m: usize,
    n_m: usize,
    n_s: usize,
    n_sf_d: usize,
    c_d: f64,
    c_chi: f64,
    c_m: f64,
    c_s: f64,
    ln_g0: f64,
    cap: f64,
}

impl Consts {
    fn new(data: &ProblemData) -> Self {
        let g = data.grid;
        let ln2 = std::f64::consts::LN_2;
        let td = g.ts_duration_s(Service::Ds);
        Self {
            n_dl_m: g.tn_dl_ts_per_tf(Service::Ms),
            n_m: g.ts_per_tf(Service::Ms),
            n_s: g.ts_per_tf(Service::Ss),
            n_sf_d: g.ts_per_sf(Service::Ds),
            c_d: td * g.sb_width_hz(Service::Ds) * g.ts_per_sf(Service::Ds) as f64 / ln2 * MBIT,
            c_chi: td * data.fb.chi / ln2 * MBIT,
            c_m: g.ts_duration_s(Service::Ms) * g.sb_width_hz(Service::Ms) / ln2 * MBIT,
            c_s: g.ts_duration_s(Service::Ss) * g.sb_width_hz(Service::Ss) / ln2 * MBIT,
            ln_g0: data.fb.gamma0.ln_1p(),
            cap: data.system.queue_cap_bits() * MBIT,
        }
    }
}

/// Index sets shared by the builder and the evaluator.
struct Layout {
    /// AP queues tracked: (n, k, has links).
    ap_pairs: Vec<(usize, usize, bool)>,
    ds_links: Vec<Vec<usize>>,
    pair_links: Vec<Vec<usize>>,
    sat_m_links: Vec<Vec<usize>>,
    sat_s_links: Vec<Vec<usize>>,
    ap_links: Vec<Vec<usize>>,
    sat_links: Vec<usize>,
}

impl Layout {
    fn new(data: &ProblemData) -> Self {
        let s = data.support;
        let [kd, km, ks] = s.counts;
        let links_pairs = s.ms_pairs();
        let mut ap_pairs: Vec<(usize, usize, bool)> = Vec::new();
        for n in 0..s.n_ap {
            for k in 0..km {
                let has = links_pairs.contains(&(n, k));
                if has || data.q0.tn[[n, k]] > 0.0 {
                    ap_pairs.push((n, k, has));
                }
            }
        }
        let filt = |kind: LinkKind, pred: &dyn Fn(&super::support::Link) -> bool| -> Vec<usize> {
            s.of_kind(kind).filter(|&i| pred(&s.links[i])).collect()
        };
        Self {
            pair_links: ap_pairs
                .iter()
                .map(|&(n, k, _)| filt(LinkKind::ApM, &|l| l.node == Some(n) && l.ue == k))
                .collect(),
            ap_pairs,
            ds_links: (0..kd).map(|k| filt(LinkKind::Ds, &|l| l.ue == k)).collect(),
            sat_m_links: (0..km).map(|k| filt(LinkKind::SatM, &|l| l.ue == k)).collect(),
            sat_s_links: (0..ks).map(|k| filt(LinkKind::SatS, &|l| l.ue == k)).collect(),
            ap_links: (0..s.n_ap)
                .map(|n| (0..s.len()).filter(|&i| s.links[i].node == Some(n)).collect())
                .collect(),
            sat_links: (0..s.len()).filter(|&i| s.links[i].node.is_none()).collect(),
        }
    }
}

fn arrivals_mbit(data: &ProblemData, t_abs: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let r = data.realization;
    let tf = data.cycle * data.grid.n_tf + t_abs;
    let ds = (0..r.ds.nrows())
        .map(|k| {
            (0..data.grid.n_sf_tn_dl.min(SF_PER_TF))
                .map(|v| r.ds[[k, tf * SF_PER_TF + v]])
                .fold(0.0, f64::max)
                * MBIT
        })
        .collect();
    let ms = (0..r.ms.nrows()).map(|k| r.ms[[k, tf]] * MBIT).collect();
    let ss = (0..r.ss.nrows()).map(|k| r.ss[[k, tf]] * MBIT).collect();
    (ds, ms, ss)
}

impl<'a> ProblemData<'a> {
    fn is_active(&self, l: usize) -> bool {
        match &self.mode {
            Mode::Joint => true,
            Mode::Calibrate { active } => active[l],
        }
    }

    fn is_joint(&self) -> bool {
        matches!(self.mode, Mode::Joint)
    }

    fn eps(&self) -> f64 {
        self.params.eps_rel
    }

    pub fn check(&self, x: &Iterate) -> Result<()> {
        let (nl, nt) = x.p.dim();
        if nl != self.support.len() || nt != self.tfs.len() {
            return Err(Error::Shape(format!("iterate is {nl}×{nt}, expected {}×{}", self.support.len(), self.tfs.len())));
        }
        if x.p.iter().any(|v| !v.is_finite() || *v < -1e-9) || x.omega.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("malformed expansion point".into()));
        }
        if let Mode::Calibrate { active } = &self.mode {
            if active.len() != nl || nt != 1 {
                return Err(Error::Shape("calibration covers exactly one TF".into()));
            }
        }
        Ok(())
    }
}

/// Exact evaluation of a point: rates, RB counts, queue chains and slacks.
pub fn evaluate_point(data: &ProblemData, co: &Coeffs, x: &Iterate) -> PointEval {
    let s = data.support;
    let c = Consts::new(data);
    let lay = Layout::new(data);
    let nt = data.tfs.len();
    let eps = data.eps();
    let [kd, km, ks] = s.counts;
    let p = |l: usize, t: usize| if data.is_active(l) { x.p[[l, t]].max(0.0) } else { 0.0 };
    let mut eta = Array2::zeros((s.len(), nt));
    let mut ln_arg = Array2::zeros((s.len(), nt));
    for l in 0..s.len() {
        for t in 0..nt {
            let d = 1.0 + s.interferers[l].iter().zip(&co.cross[l][t]).map(|(&j, &cj)| cj * p(j, t)).sum::<f64>();
            eta[[l, t]] = d.ln();
            ln_arg[[l, t]] = (co.own[[l, t]] * p(l, t) + d).ln();
        }
    }
    let rate = |l: usize, t: usize| ln_arg[[l, t]] - eta[[l, t]];
    let mut zeta = Array2::zeros((kd, nt));
    let mut slacks = [0.0; 3];
    let mut queue = 0.0;
    let mut q_ap: Vec<f64> = lay.ap_pairs.iter().map(|&(n, k, _)| data.q0.tn[[n, k]] * MBIT).collect();
    let mut q_m: Vec<f64> = (0..km).map(|k| data.q0.sat_m[k] * MBIT).collect();
    let mut q_s: Vec<f64> = (0..ks).map(|k| data.q0.sat_s[k] * MBIT).collect();
    let mut tf_end_tn = Array3::zeros((s.n_ap, km, nt));
    let omega = |n: usize, k: usize| x.omega[[n, k]];
    for t in 0..nt {
        let (lam_d, lam_m, lam_s) = arrivals_mbit(data, data.tfs.start + t);
        for l in s.of_kind(LinkKind::Ds) {
            if !data.is_active(l) {
                continue;
            }
            let on = if data.is_joint() { f_ap(p(l, t), eps) } else { 1.0 };
            slacks[0] += (c.ln_g0 * on - rate(l, t)).max(0.0);
        }
        for k in 0..kd {
            let active: Vec<usize> = lay.ds_links[k].iter().copied().filter(|&l| data.is_active(l)).collect();
            let count = if data.is_joint() {
                c.n_sf_d as f64 * active.iter().map(|&l| f_ap(p(l, t), eps)).sum::<f64>()
            } else {
                (c.n_sf_d * active.len()) as f64
            };
            zeta[[k, t]] = count;
            let served = c.c_d * active.iter().map(|&l| rate(l, t)).sum::<f64>() - c.c_chi * count.sqrt();
            slacks[1] += (lam_d[k] - served).max(0.0);
        }
        // AP chains: DL TSs serve, UL TSs hold the last value
        let mut sum_ap = vec![vec![0.0; c.n_dl_m]; s.n_ap];
        for (i, &(n, k, _)) in lay.ap_pairs.iter().enumerate() {
            let served = c.c_m * lay.pair_links[i].iter().filter(|&&l| data.is_active(l)).map(|&l| rate(l, t)).sum::<f64>();
            let mut q = q_ap[i];
            for (e, sum) in sum_ap[n].iter_mut().enumerate() {
                let a = if e == 0 { omega(n, k) * lam_m[k] } else { 0.0 };
                q = (q + a - served).max(0.0);
                *sum += q;
                let w = if e + 1 == c.n_dl_m { (c.n_m - c.n_dl_m + 1) as f64 } else { 1.0 };
                queue += w * q;
            }
            q_ap[i] = q;
            tf_end_tn[[n, k, t]] = q / MBIT;
        }
        for sums in &sum_ap {
            slacks[2] += sums.iter().map(|v| (v - c.cap).max(0.0)).sum::<f64>();
        }
        let mut sum_m = vec![0.0; c.n_m];
        for k in 0..km {
            let served = c.c_m * lay.sat_m_links[k].iter().filter(|&&l| data.is_active(l)).map(|&l| rate(l, t)).sum::<f64>();
            let to_ap: f64 = (0..s.n_ap).map(|n| omega(n, k)).sum();
            let mut q = q_m[k];
            for (e, sum) in sum_m.iter_mut().enumerate() {
                let a = if e == 0 { (1.0 - to_ap) * lam_m[k] } else { 0.0 };
                q = (q + a - served).max(0.0);
                *sum += q;
                queue += q;
            }
            q_m[k] = q;
        }
        slacks[2] += sum_m.iter().map(|v| (v - c.cap).max(0.0)).sum::<f64>();
        let mut sum_s = vec![0.0; c.n_s];
        let mut queue_s = 0.0;
        for k in 0..ks {
            let served = c.c_s * lay.sat_s_links[k].iter().map(|&l| rate(l, t)).sum::<f64>();
            let mut q = q_s[k];
            for (e, sum) in sum_s.iter_mut().enumerate() {
                let a = if e == 0 { lam_s[k] } else { 0.0 };
                q = (q + a - served).max(0.0);
                *sum += q;
                queue_s += q;
            }
            q_s[k] = q;
        }
        if data.is_joint() {
            queue += queue_s;
            slacks[2] += sum_s.iter().map(|v| (v - c.cap).max(0.0)).sum::<f64>();
        }
    }
    let mut end = data.q0.clone();
    for (i, &(n, k, _)) in lay.ap_pairs.iter().enumerate() {
        end.tn[[n, k]] = q_ap[i] / MBIT;
    }
    for k in 0..km {
        end.sat_m[k] = q_m[k] / MBIT;
    }
    for k in 0..ks {
        end.sat_s[k] = q_s[k] / MBIT;
    }
    let pen = &data.params;
    let objective = queue + pen.penalty_sinr * slacks[0] + pen.penalty_deadline * slacks[1] + pen.penalty_cap * slacks[2];
    PointEval { objective, queue_objective: queue, eta, ln_arg, zeta, slacks, end_queue: end, tf_end_tn }
}

/// Variable indices of one built subproblem.
pub struct VarMap {
    p: Array2<Option<usize>>,
    omega: Array2<Option<usize>>,
}

impl VarMap {
    /// Reads a solver point back into an iterate; fixed entries keep `base`.
    pub fn extract(&self, x: &[f64], base: &Iterate) -> Iterate {
        let mut out = base.clone();
        for ((idx, v), o) in self.p.indexed_iter().zip(out.p.iter_mut()) {
            let _ = idx;
            if let Some(i) = v {
                *o = x[*i].clamp(0.0, 1.0);
            }
        }
        for (v, o) in self.omega.iter().zip(out.omega.iter_mut()) {
            if let Some(i) = v {
                *o = x[*i].clamp(0.0, 1.0);
            }
        }
        out
    }
}

/// Builds the convex inner approximation around `x` (with `ev` its exact
/// evaluation).
pub fn build_subproblem(data: &ProblemData, co: &Coeffs, x: &Iterate, ev: &PointEval) -> Result<(ConvexSubproblem, VarMap)> {
    data.check(x)?;
    let s = data.support;
    let c = Consts::new(data);
    let lay = Layout::new(data);
    let nt = data.tfs.len();
    let eps = data.eps();
    let joint = data.is_joint();
    let [kd, km, ks] = s.counts;
    let pen = data.params;
    let mut pb = ConvexSubproblem::default();

    // power variables; inactive links are fixed at their iterate value (zero for AP links)
    let mut pv: Array2<Option<usize>> = Array2::from_elem((s.len(), nt), None);
    for l in 0..s.len() {
        let ap = s.links[l].kind.is_ap();
        for t in 0..nt {
            if joint {
                let kind = if ap { VarKind::Power } else { VarKind::SatPower };
                pv[[l, t]] = Some(pb.add_var(kind, Some(0.0), Some(1.0)));
            } else if ap && data.is_active(l) {
                pv[[l, t]] = Some(pb.add_var(VarKind::Power, Some(eps), Some(1.0)));
            }
        }
    }
    let fixed_p = |l: usize, t: usize| if data.is_active(l) { x.p[[l, t]].max(0.0) } else { 0.0 };
    let add_p = |a: &mut Affine, l: usize, t: usize, coef: f64| match pv[[l, t]] {
        Some(i) => {
            a.add(i, coef);
        }
        None => a.constant += coef * fixed_p(l, t),
    };

    let mut ov: Array2<Option<usize>> = Array2::from_elem(x.omega.dim(), None);
    if joint {
        for &(n, k, has) in &lay.ap_pairs {
            if has {
                ov[[n, k]] = Some(pb.add_var(VarKind::Omega, Some(0.0), Some(1.0)));
            }
        }
        for k in 0..km {
            let mut row = Affine::constant(-1.0);
            for n in 0..s.n_ap {
                if let Some(i) = ov[[n, k]] {
                    row.add(i, 1.0);
                }
            }
            if !row.terms.is_empty() {
                pb.le(Family::C13, row);
            }
        }
    }
    let omega_term = |a: &mut Affine, n: usize, k: usize, coef: f64| match ov[[n, k]] {
        Some(i) => {
            a.add(i, coef);
        }
        None => a.constant += coef * x.omega[[n, k]],
    };

    let mut rv: Array2<Option<usize>> = Array2::from_elem((s.len(), nt), None);
    let (mut last_ap, mut last_m, mut last_s) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
    for t in 0..nt {
        let (lam_d, lam_m, lam_s) = arrivals_mbit(data, data.tfs.start + t);

        // rate and interference-bound rows per link
        for l in 0..s.len() {
            let kind = s.links[l].kind;
            if !data.is_active(l) || (!joint && kind == LinkKind::SatS) {
                continue;
            }
            let a0 = ev.ln_arg[[l, t]].exp();
            let r = pb.add_var(VarKind::Rate, Some(RATE_FLOOR), None);
            rv[[l, t]] = Some(r);
            let mut arg = Affine::constant(1.0);
            add_p(&mut arg, l, t, co.own[[l, t]]);
            for (&j, &cj) in s.interferers[l].iter().zip(&co.cross[l][t]) {
                add_p(&mut arg, j, t, cj);
            }
            let arg = arg.scaled(1.0 / a0);
            if kind == LinkKind::SatS {
                pb.log_ge(Family::C18c, arg, Affine::var(r).plus(-a0.ln()));
                continue;
            }
            let eta = pb.add_var(VarKind::Eta, None, None);
            let e0 = ev.eta[[l, t]];
            // (1 + Ψ) e^{−η0} ≤ 1 + η − η0
            let mut bound = Affine::constant((-e0).exp() - 1.0 + e0).with(eta, -1.0);
            for (&j, &cj) in s.interferers[l].iter().zip(&co.cross[l][t]) {
                add_p(&mut bound, j, t, cj * (-e0).exp());
            }
            let (fam_b, fam_a) = match kind {
                LinkKind::Ds => (Family::C10b, Family::C17c),
                LinkKind::ApM => (Family::C17b, Family::C17a),
                _ => (Family::C18b, Family::C18a),
            };
            pb.le(fam_b, bound);
            pb.log_ge(fam_a, arg.clone(), Affine::var(eta).with(r, 1.0).plus(-a0.ln()));
            if kind == LinkKind::Ds {
                let slack = pb.add_var(VarKind::Slack, Some(0.0), None);
                pb.objective.add(slack, pen.penalty_sinr);
                let mut rhs = Affine::var(eta).with(slack, -1.0).plus(-a0.ln());
                if joint {
                    let (sl, k0) = f_ap_lin_coeffs(x.p[[l, t]].max(0.0), eps);
                    add_p(&mut rhs, l, t, c.ln_g0 * sl);
                    rhs.constant += c.ln_g0 * k0;
                } else {
                    rhs.constant += c.ln_g0;
                }
                pb.log_ge(Family::C10a, arg, rhs);
            }
        }

        // DS deadline: c_d Σ r − c_χ √ζ ≥ λ
        for k in 0..kd {
            let links: Vec<usize> = lay.ds_links[k].iter().copied().filter(|&l| data.is_active(l)).collect();
            let slack = pb.add_var(VarKind::Slack, Some(0.0), None);
            pb.objective.add(slack, pen.penalty_deadline);
            let mut row = Affine::constant(lam_d[k]).with(slack, -1.0);
            for &l in &links {
                row.add(rv[[l, t]].expect("active DS rate"), -c.c_d);
            }
            if joint && !links.is_empty() {
                // expanding √ζ around at least one RB keeps switched-off
                // links from looking prohibitively expensive to re-enable
                let z0 = ev.zeta[[k, t]].max(c.n_sf_d as f64);
                let zeta = pb.add_var(VarKind::Zeta, Some(0.0), None);
                // ζ ≥ n Σ f_ap_lin(p)
                let mut zr = Affine::var(zeta).scaled(-1.0);
                for &l in &links {
                    let (sl, k0) = f_ap_lin_coeffs(x.p[[l, t]].max(0.0), eps);
                    add_p(&mut zr, l, t, c.n_sf_d as f64 * sl);
                    zr.constant += c.n_sf_d as f64 * k0;
                }
                pb.le(Family::C17d, zr);
                // χ f_sqrt_lin(ζ; ζ0)
                row.add(zeta, c.c_chi * 0.5 / z0.sqrt());
                row.constant += c.c_chi * 0.5 * z0.sqrt();
            } else {
                row.constant += c.c_chi * ((c.n_sf_d * links.len()) as f64).sqrt();
            }
            pb.le(Family::C14, row);
        }

        // instantaneous power budgets
        for n in 0..s.n_ap {
            let mut row = Affine::constant(-1.0);
            for &l in &lay.ap_links[n] {
                add_p(&mut row, l, t, 1.0);
            }
            if !row.terms.is_empty() {
                pb.le(Family::C11, row);
            }
        }
        if joint {
            let mut row = Affine::constant(-1.0);
            for &l in &lay.sat_links {
                add_p(&mut row, l, t, 1.0);
            }
            if !row.terms.is_empty() {
                pb.le(Family::C12, row);
            }
            orthogonality_rows(&mut pb, data, x, t, &add_p);
        }

        // queue chains
        let served = |links: &[usize], coef: f64| -> Affine {
            let mut a = Affine::default();
            for &l in links {
                if let Some(r) = rv[[l, t]] {
                    a.add(r, -coef);
                }
            }
            a
        };
        let mut ap_entries: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); c.n_dl_m]; s.n_ap];
        for (i, &(n, k, _)) in lay.ap_pairs.iter().enumerate() {
            let start = Affine::constant(data.q0.tn[[n, k]] * MBIT);
            let mut arrival = Affine::default();
            omega_term(&mut arrival, n, k, lam_m[k]);
            let weights = (0..c.n_dl_m).map(|e| if e + 1 == c.n_dl_m { (c.n_m - c.n_dl_m + 1) as f64 } else { 1.0 });
            let ids = chain(&mut pb, last_ap.get(&i), start, arrival, &served(&lay.pair_links[i], c.c_m), weights, Family::C15a);
            for (e, &q) in ids.iter().enumerate() {
                ap_entries[n][e].push(q);
            }
            last_ap.insert(i, *ids.last().expect("at least one DL TS"));
        }
        for entries in ap_entries {
            cap_rows(&mut pb, entries, c.cap, pen.penalty_cap, Family::C15b);
        }
        let mut m_entries: Vec<Vec<usize>> = vec![Vec::new(); c.n_m];
        for k in 0..km {
            let start = Affine::constant(data.q0.sat_m[k] * MBIT);
            let mut arrival = Affine::constant(lam_m[k]);
            for n in 0..s.n_ap {
                omega_term(&mut arrival, n, k, -lam_m[k]);
            }
            let ids = chain(&mut pb, last_m.get(&k), start, arrival, &served(&lay.sat_m_links[k], c.c_m), std::iter::repeat_n(1.0, c.n_m), Family::C16a);
            for (e, &q) in ids.iter().enumerate() {
                m_entries[e].push(q);
            }
            last_m.insert(k, ids[c.n_m - 1]);
        }
        cap_rows(&mut pb, m_entries, c.cap, pen.penalty_cap, Family::C16b);
        if joint {
            let mut s_entries: Vec<Vec<usize>> = vec![Vec::new(); c.n_s];
            for k in 0..ks {
                let start = Affine::constant(data.q0.sat_s[k] * MBIT);
                let arrival = Affine::constant(lam_s[k]);
                let ids = chain(&mut pb, last_s.get(&k), start, arrival, &served(&lay.sat_s_links[k], c.c_s), std::iter::repeat_n(1.0, c.n_s), Family::C16a);
                for (e, &q) in ids.iter().enumerate() {
                    s_entries[e].push(q);
                }
                last_s.insert(k, ids[c.n_s - 1]);
            }
            cap_rows(&mut pb, s_entries, c.cap, pen.penalty_cap, Family::C16b);
        }
    }
    if joint {
        bandwidth_rows(&mut pb, data, x, &pv);
    }
    Ok((pb, VarMap { p: pv, omega: ov }))
}

/// Σ f_ap_lin ≤ 1 over every transmitter, DS receiver, satellite and MS
/// receiver sharing one RB.
fn orthogonality_rows(
    pb: &mut ConvexSubproblem,
    data: &ProblemData,
    x: &Iterate,
    t: usize,
    add_p: &dyn Fn(&mut Affine, usize, usize, f64),
) {
    let s = data.support;
    let eps = data.eps();
    let mut groups: std::collections::BTreeMap<(Family, u8, usize, usize), Vec<usize>> = Default::default();
    for (l, link) in s.links.iter().enumerate() {
        let svc = link.kind.service().index() as u8;
        match link.node {
            Some(n) => {
                groups.entry((Family::C5, svc, n, link.f)).or_default().push(l);
                let fam = if link.kind == LinkKind::Ds { Family::C6 } else { Family::C9 };
                groups.entry((fam, svc, link.ue, link.f)).or_default().push(l);
            }
            None => {
                groups.entry((Family::C8, svc, 0, link.f)).or_default().push(l);
                if link.kind == LinkKind::SatM {
                    groups.entry((Family::C9, svc, link.ue, link.f)).or_default().push(l);
                }
            }
        }
    }
    for ((fam, ..), ls) in groups {
        let mut row = Affine::constant(-1.0);
        for l in ls {
            let (sl, k0) = f_ap_lin_coeffs(x.p[[l, t]].max(0.0), eps);
            add_p(&mut row, l, t, sl);
            row.constant += k0;
        }
        pb.le(fam, row);
    }
}

/// Bandwidth rows on per-SB aggregate power over the cycle: non-overlap
/// between BWPs (only emitted for conflicting support SBs) and the total
/// bandwidth budget.
fn bandwidth_rows(pb: &mut ConvexSubproblem, data: &ProblemData, x: &Iterate, pv: &Array2<Option<usize>>) {
    let s = data.support;
    let g = data.grid;
    let eps = data.eps();
    let nt = data.tfs.len();
    let ts_count = |kind: LinkKind| {
        if kind.is_ap() {
            g.tn_dl_ts_per_tf(kind.service())
        } else {
            g.ts_per_tf(kind.service())
        }
    } as f64;
    // aggregate power per (service, SB)
    let mut agg: std::collections::BTreeMap<(usize, usize), (Affine, f64)> = Default::default();
    for (l, link) in s.links.iter().enumerate() {
        let e = agg.entry((link.kind.service().index(), link.f)).or_default();
        for t in 0..nt {
            let w = ts_count(link.kind);
            if let Some(i) = pv[[l, t]] {
                e.0.add(i, w);
            }
            e.1 += w * x.p[[l, t]].max(0.0);
        }
    }
    let lin = |key: &(usize, usize)| -> Affine {
        let (a, a0) = &agg[key];
        let (sl, k0) = f_ap_lin_coeffs(*a0, eps);
        a.clone().scaled(sl).plus(k0)
    };
    for (&(xi, f), _) in agg.iter() {
        let x_svc = Service::ALL[xi];
        let others: &[Service] = match x_svc {
            Service::Ds => &[Service::Ms, Service::Ss],
            Service::Ms => &[Service::Ss],
            Service::Ss => &[],
        };
        for &o in others {
            let range = g.overlap_range(x_svc, f, o).expect("support SB in range");
            for f2 in range {
                if agg.contains_key(&(o.index(), f2)) {
                    let fam = if x_svc == Service::Ds { Family::C1 } else { Family::C2 };
                    let mut row = lin(&(xi, f));
                    let other = lin(&(o.index(), f2));
                    row.terms.extend(other.terms);
                    row.constant += other.constant - 1.0;
                    pb.le(fam, row);
                }
            }
        }
    }
    let guards = g.guard_sm_khz() + g.guard_md_khz();
    let mut row = Affine::constant((guards - g.total_bw_khz) / g.total_bw_khz);
    for (key, _) in agg.iter() {
        let w = g.sb_width_khz(Service::ALL[key.0]) / g.total_bw_khz;
        let a = lin(key).scaled(w);
        row.terms.extend(a.terms);
        row.constant += a.constant;
    }
    pb.le(Family::C3, row);
}

fn cap_rows(pb: &mut ConvexSubproblem, entries: Vec<Vec<usize>>, cap: f64, penalty: f64, fam: Family) {
    for group in entries {
        if group.is_empty() {
            continue;
        }
        let slack = pb.add_var(VarKind::Slack, Some(0.0), None);
        pb.objective.add(slack, penalty);
        let mut row = Affine::constant(-cap).with(slack, -1.0);
        for q in group {
            row.add(q, 1.0);
        }
        pb.le(fam, row);
    }
}

/// One TF of a queue chain: entry e is fed by entry e−1 (or the previous
/// TF's last entry), the first entry also receives `arrival`.
fn chain(
    pb: &mut ConvexSubproblem,
    prev_last: Option<&usize>,
    start: Affine,
    arrival: Affine,
    served: &Affine,
    weights: impl Iterator<Item = f64>,
    fam: Family,
) -> Vec<usize> {
    let mut prev = prev_last.map_or(start, |&i| Affine::var(i));
    let mut ids = Vec::new();
    for (e, w) in weights.enumerate() {
        let q = pb.add_var(VarKind::Queue, Some(0.0), None);
        let mut row = prev.clone();
        row.terms.extend(served.terms.iter().copied());
        row.add(q, -1.0);
        if e == 0 {
            row.terms.extend(arrival.terms.iter().copied());
            row.constant += arrival.constant;
        }
        pb.le(fam, row);
        pb.objective.add(q, w);
        prev = Affine::var(q);
        ids.push(q);
    }
    ids
}
