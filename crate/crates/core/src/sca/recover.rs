//! Starting points and the rounding of a relaxed SCA point to a plan with
//! binary association, bandwidth and split decisions.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use super::formulation::{Iterate, ProblemData};
use super::support::{LinkKind, Support};
use crate::channel::Gains;
use crate::model::FramePlan;
use crate::rb_grid::{RbGrid, Service};

/// Uniform start: each transmitter spreads half its budget evenly over its
/// support links, MS flows are split evenly between the satellite and every
/// AP serving them. DS links that miss the SINR floor at this point are
/// switched off, worst first.
pub fn init_iterate(data: &ProblemData) -> Iterate {
    let s = data.support;
    let nt = data.tfs.len();
    let mut per_node = vec![0usize; s.n_ap + 1];
    for l in &s.links {
        per_node[l.node.unwrap_or(s.n_ap)] += 1;
    }
    let mut p = Array2::zeros((s.len(), nt));
    for (i, l) in s.links.iter().enumerate() {
        p.row_mut(i).fill(0.5 / per_node[l.node.unwrap_or(s.n_ap)] as f64);
    }
    let km = s.counts[1];
    let mut omega = Array2::zeros((s.n_ap, km));
    let pairs = s.ms_pairs();
    for k in 0..km {
        let ns: Vec<usize> = pairs.iter().filter(|pk| pk.1 == k).map(|pk| pk.0).collect();
        for &n in &ns {
            omega[[n, k]] = 1.0 / (ns.len() + 1) as f64;
        }
    }
    let mut x = Iterate { p, omega };
    for t in 0..nt {
        let ds: Vec<usize> = s.of_kind(LinkKind::Ds).collect();
        let powers = |x: &Iterate, l: usize| x.p[[l, t]];
        let mut on: Vec<bool> = ds.iter().map(|&l| powers(&x, l) > 0.0).collect();
        while let Some((i, _)) = worst_ds_miss(data, data.gains, t, &ds, &on, &|l| powers(&x, l)) {
            on[i] = false;
            x.p[[ds[i], t]] = 0.0;
        }
    }
    x
}

/// Among active DS links, the one with the lowest SINR if it is below the
/// floor, as (position in `ds`, SINR).
pub(crate) fn worst_ds_miss(
    data: &ProblemData,
    gains: &Gains,
    t: usize,
    ds: &[usize],
    on: &[bool],
    power: &dyn Fn(usize) -> f64,
) -> Option<(usize, f64)> {
    let s = data.support;
    let pmax = data.system.p_max_ap();
    let noise = gains.noise(Service::Ds);
    let abs = data.tfs.start + t;
    let is_on = |l: usize| ds.iter().position(|&d| d == l).is_none_or(|i| on[i]);
    let floor = data.fb.gamma0 * (1.0 - 1e-9);
    ds.iter()
        .enumerate()
        .filter(|(i, _)| on[*i])
        .map(|(i, &l)| {
            let interf: f64 = s.interferers[l]
                .iter()
                .filter(|&&j| is_on(j))
                .map(|&j| pmax * power(j) * s.links[j].gain_to(gains, s.links[l].ue, abs))
                .sum();
            (i, pmax * power(l) * s.links[l].gain(gains, abs) / (interf + noise))
        })
        .filter(|&(_, sinr)| sinr < floor)
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Zeroing threshold of the rounding, as a fraction of the smoothing scale.
const DUST: f64 = 1e-2;

/// A rounded plan plus the link activity it was built from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Recovered {
    pub plan: FramePlan,
    /// `[link][t]`
    pub active: Array2<bool>,
    /// Normalised powers after rounding, `[link][t]`.
    pub iterate: Iterate,
    /// DS links switched off to restore the SINR floor.
    pub dropped_ds: usize,
}

/// Rounds a relaxed point:
///
/// 1. powers below 1% of the smoothing scale are zeroed, except on DS links,
///    which a strong gain can let meet the floor on far less; those are left
///    to step 4;
/// 2. per RB, each transmitter keeps its strongest link and each UE its
///    strongest transmitter;
/// 3. per-transmitter powers are scaled into the instantaneous budgets;
/// 4. the weakest DS link is dropped until every DS link meets the SINR
///    floor on the gains in `data`;
/// 5. SBs carrying a link are enabled, dropping the least used SB while
///    the bandwidth layout is infeasible;
/// 6. DS flows go to their serving AP; MS shares on APs left without links
///    fall back to the satellite (or, if it has none either, to the
///    remaining APs).
pub fn recover_plan(data: &ProblemData, x: &Iterate) -> Recovered {
    let s = data.support;
    let grid = data.grid;
    let nt = data.tfs.len();
    let dust = DUST * data.params.eps_rel;
    let mut p = x.p.mapv(|v| v.clamp(0.0, 1.0));
    let mut faint = Array2::from_elem(p.dim(), false);
    for (l, link) in s.links.iter().enumerate() {
        for t in 0..nt {
            if p[[l, t]] < dust {
                if link.kind == LinkKind::Ds && p[[l, t]] > 0.0 {
                    faint[[l, t]] = true;
                } else {
                    p[[l, t]] = 0.0;
                }
            }
        }
    }

    for t in 0..nt {
        let mut order: Vec<usize> = (0..s.len()).filter(|&l| p[[l, t]] > 0.0).collect();
        order.sort_by(|&a, &b| p[[b, t]].total_cmp(&p[[a, t]]));
        let mut used: BTreeSet<(u8, usize, Option<usize>, usize)> = BTreeSet::new();
        for l in order {
            let link = &s.links[l];
            let svc = link.kind.service().index();
            let tx = (0u8, svc, link.node, link.f);
            let rx = (1u8, svc, Some(link.ue), link.f);
            if used.contains(&tx) || used.contains(&rx) {
                p[[l, t]] = 0.0;
            } else {
                used.insert(tx);
                used.insert(rx);
            }
        }
        for node in (0..s.n_ap).map(Some).chain([None]) {
            let links: Vec<usize> = (0..s.len()).filter(|&l| s.links[l].node == node).collect();
            let total: f64 = links.iter().map(|&l| p[[l, t]]).sum();
            if total > 1.0 {
                for &l in &links {
                    p[[l, t]] /= total;
                }
            }
        }
    }

    let mut dropped_ds = 0;
    let ds: Vec<usize> = s.of_kind(LinkKind::Ds).collect();
    for t in 0..nt {
        let mut on: Vec<bool> = ds.iter().map(|&l| p[[l, t]] > 0.0).collect();
        let snapshot = p.clone();
        while let Some((i, _)) = worst_ds_miss(data, data.gains, t, &ds, &on, &|l| snapshot[[l, t]]) {
            on[i] = false;
            p[[ds[i], t]] = 0.0;
            if !faint[[ds[i], t]] {
                dropped_ds += 1;
            }
        }
    }

    drop_until_layout_fits(grid, s, &mut p);

    let mut omega = x.omega.mapv(|v| v.clamp(0.0, 1.0));
    let serves = |p: &Array2<f64>, kind: LinkKind, node: Option<usize>, k: usize| {
        (0..s.len()).any(|l| {
            let link = &s.links[l];
            link.kind == kind && link.node == node && link.ue == k && p.row(l).iter().any(|&v| v > 0.0)
        })
    };
    for k in 0..s.counts[1] {
        for n in 0..s.n_ap {
            if !serves(&p, LinkKind::ApM, Some(n), k) {
                omega[[n, k]] = 0.0;
            }
        }
        let sum: f64 = omega.column(k).sum();
        if sum > 1.0 || (sum > 0.0 && !serves(&p, LinkKind::SatM, None, k)) {
            omega.column_mut(k).mapv_inplace(|v| v / sum);
        }
    }

    let active = p.mapv(|v| v > 0.0);
    let iterate = Iterate { p, omega };
    let plan = to_plan(data, &iterate, s.ds_ap.as_slice());
    Recovered { plan, active, iterate, dropped_ds }
}

fn drop_until_layout_fits(grid: &RbGrid, s: &Support, p: &mut Array2<f64>) {
    loop {
        let mut b = crate::rb_grid::BwpAllocation::empty(grid);
        let mut load: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
        for (l, link) in s.links.iter().enumerate() {
            let a: f64 = p.row(l).sum();
            if a > 0.0 {
                b.set(link.kind.service(), link.f, true);
                *load.entry((link.kind.service().index(), link.f)).or_default() += a;
            }
        }
        if grid.validate_bwp(&b).is_feasible() {
            return;
        }
        let Some((&(xi, f), _)) = load.iter().min_by(|a, b| a.1.total_cmp(b.1)) else { return };
        for (l, link) in s.links.iter().enumerate() {
            if link.kind.service().index() == xi && link.f == f {
                p.row_mut(l).fill(0.0);
            }
        }
    }
}

/// Writes a (rounded) iterate over the TFs of `data` into a cycle plan.
pub fn to_plan(data: &ProblemData, x: &Iterate, ds_ap: &[usize]) -> FramePlan {
    let s = data.support;
    let grid = data.grid;
    let mut plan = FramePlan::zeros(grid, s.n_ap, s.counts);
    write_into(&mut plan, data, x);
    plan.wbar_d.fill(0.0);
    for (k, &n) in ds_ap.iter().enumerate() {
        plan.wbar_d[[n, k]] = 1.0;
    }
    plan.wbar_m.assign(&x.omega);
    plan.sync_indicators();
    plan.sync_bandwidth(grid);
    plan
}

/// Overwrites the TFs covered by `data` with the powers in `x`.
pub fn write_into(plan: &mut FramePlan, data: &ProblemData, x: &Iterate) {
    let s = data.support;
    let (pa, ps) = (data.system.p_max_ap(), data.system.p_max_sat());
    for (t, abs) in data.tfs.clone().enumerate() {
        for (l, link) in s.links.iter().enumerate() {
            let v = x.p[[l, t]].max(0.0);
            match (link.kind, link.node) {
                (LinkKind::Ds, Some(n)) => plan.p_d[[n, link.ue, link.f, abs]] = v * pa,
                (LinkKind::ApM, Some(n)) => plan.p_m[[n, link.ue, link.f, abs]] = v * pa,
                (LinkKind::SatM, _) => plan.sp_m[[link.ue, link.f, abs]] = v * ps,
                (LinkKind::SatS, _) => plan.sp_s[[link.ue, link.f, abs]] = v * ps,
                _ => unreachable!("AP link without a node"),
            }
        }
    }
    plan.sync_indicators();
}
