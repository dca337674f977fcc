//! Baseline: fixed bandwidth split, max-gain association, per-node
//! water-filling and rate-proportional traffic steering.

use ndarray::{Array2, Axis};

use crate::error::Result;
use crate::model::FramePlan;
use crate::rb_grid::{BwpAllocation, Service};
use crate::sca::recover::worst_ds_miss;
use crate::sca::{evaluate_point, to_plan, BandSplit, Coeffs, Iterate, Link, LinkKind, Mode, ProblemData, Support};

/// Maximises Σ wᵢ ln(1 + pᵢ/cᵢ) subject to Σ pᵢ ≤ budget, where cᵢ is the
/// noise-to-gain ratio of channel i. The optimum is pᵢ = max(0, wᵢμ − cᵢ)
/// for the water level μ that spends the budget.
pub fn water_fill(weights: &[f64], inv_gain: &[f64], budget: f64) -> Vec<f64> {
    assert_eq!(weights.len(), inv_gain.len());
    let n = weights.len();
    let usable: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0 && inv_gain[i].is_finite()).collect();
    if usable.is_empty() || budget <= 0.0 {
        return vec![0.0; n];
    }
    // channels enter in order of their breakpoint cᵢ/wᵢ
    let mut order = usable;
    order.sort_by(|&a, &b| (inv_gain[a] / weights[a]).total_cmp(&(inv_gain[b] / weights[b])));
    let (mut sw, mut sc) = (0.0, 0.0);
    let mut mu = 0.0;
    for (j, &i) in order.iter().enumerate() {
        sw += weights[i];
        sc += inv_gain[i];
        mu = (budget + sc) / sw;
        let next = order.get(j + 1).map(|&k| inv_gain[k] / weights[k]);
        if next.is_none_or(|b| mu <= b) {
            break;
        }
    }
    (0..n).map(|i| if weights[i] > 0.0 && inv_gain[i].is_finite() { (weights[i] * mu - inv_gain[i]).max(0.0) } else { 0.0 }).collect()
}

pub struct GreedyPlan {
    pub support: Support,
    pub iterate: Iterate,
    pub plan: FramePlan,
    pub dropped_ds: usize,
}

/// Builds the greedy plan for the TFs of `data` (whose support and mode are
/// ignored) on the gains it carries.
pub fn greedy_plan(data: &ProblemData, split: BandSplit) -> Result<GreedyPlan> {
    let grid = data.grid;
    let g = data.gains;
    let n_ap = g.ap_d.dim().0;
    let counts = [g.ap_d.dim().1, g.sat_m.dim().0, g.sat_s.dim().0];
    let layout = BwpAllocation::contiguous(grid, split.counts(grid, counts)?)?;
    let nt = data.tfs.len();
    let ds_mean = g.ap_d.mean_axis(Axis(3)).and_then(|a| a.mean_axis(Axis(2)));
    let ds_ap: Vec<usize> = (0..counts[0])
        .map(|k| {
            let m = ds_mean.as_ref().expect("DS gains present");
            (0..n_ap).max_by(|&a, &b| m[[a, k]].total_cmp(&m[[b, k]])).unwrap_or(0)
        })
        .collect();

    // association per TF, collected into one link list
    let mut links: Vec<Link> = Vec::new();
    let mut on: Vec<Vec<usize>> = vec![Vec::new(); nt];
    let mut intern = |l: Link, t: usize, links: &mut Vec<Link>| {
        let i = links.iter().position(|x| *x == l).unwrap_or_else(|| {
            links.push(l);
            links.len() - 1
        });
        on[t].push(i);
    };
    for (t, abs) in data.tfs.clone().enumerate() {
        for f in layout.active(Service::Ds) {
            for n in 0..n_ap {
                let best = (0..counts[0])
                    .filter(|&k| ds_ap[k] == n)
                    .max_by(|&a, &b| g.ap_d[[n, a, f, abs]].total_cmp(&g.ap_d[[n, b, f, abs]]));
                if let Some(k) = best {
                    intern(Link { kind: LinkKind::Ds, node: Some(n), ue: k, f }, t, &mut links);
                }
            }
        }
        for f in layout.active(Service::Ms) {
            let Some(ks) = (0..counts[1]).max_by(|&a, &b| g.sat_m[[a, f, abs]].total_cmp(&g.sat_m[[b, f, abs]])) else {
                continue;
            };
            intern(Link { kind: LinkKind::SatM, node: None, ue: ks, f }, t, &mut links);
            let mut pairs: Vec<(usize, usize)> =
                (0..n_ap).flat_map(|n| (0..counts[1]).map(move |k| (n, k))).filter(|&(_, k)| k != ks).collect();
            pairs.sort_by(|a, b| g.ap_m[[b.0, b.1, f, abs]].total_cmp(&g.ap_m[[a.0, a.1, f, abs]]));
            let (mut ap_used, mut ue_used) = (vec![false; n_ap], vec![false; counts[1]]);
            for (n, k) in pairs {
                if !ap_used[n] && !ue_used[k] {
                    ap_used[n] = true;
                    ue_used[k] = true;
                    intern(Link { kind: LinkKind::ApM, node: Some(n), ue: k, f }, t, &mut links);
                }
            }
        }
        for f in layout.active(Service::Ss) {
            if let Some(k) = (0..counts[2]).max_by(|&a, &b| g.sat_s[[a, f, abs]].total_cmp(&g.sat_s[[b, f, abs]])) {
                intern(Link { kind: LinkKind::SatS, node: None, ue: k, f }, t, &mut links);
            }
        }
    }
    let support = Support::from_links(layout, links, n_ap, counts, ds_ap.clone());
    let view = ProblemData { support: &support, mode: Mode::Joint, tfs: data.tfs.clone(), ..*data };
    let km = counts[1];
    let mut x = Iterate { p: Array2::zeros((support.len(), nt)), omega: Array2::zeros((n_ap, km)) };

    let width = |kind: LinkKind| grid.sb_width_khz(kind.service());
    let pmax = |kind: LinkKind| if kind.is_ap() { data.system.p_max_ap() } else { data.system.p_max_sat() };
    let fill = |x: &mut Iterate, t: usize, node: Option<usize>, active: &[usize]| {
        let abs = data.tfs.start + t;
        let ls: Vec<usize> = active.iter().copied().filter(|&l| support.links[l].node == node).collect();
        let w: Vec<f64> = ls.iter().map(|&l| width(support.links[l].kind)).collect();
        let c: Vec<f64> = ls
            .iter()
            .map(|&l| {
                let link = &support.links[l];
                let a = pmax(link.kind) * link.gain(g, abs) / g.noise(link.kind.service());
                if a > 0.0 { 1.0 / a } else { f64::INFINITY }
            })
            .collect();
        for (&l, p) in ls.iter().zip(water_fill(&w, &c, 1.0)) {
            x.p[[l, t]] = p;
        }
    };
    let mut dropped_ds = 0;
    for t in 0..nt {
        let mut active = on[t].clone();
        for node in (0..n_ap).map(Some).chain([None]) {
            fill(&mut x, t, node, &active);
        }
        // DS admission: drop the weakest link until the SINR floor holds
        let ds: Vec<usize> = support.of_kind(LinkKind::Ds).collect();
        loop {
            let flags: Vec<bool> = ds.iter().map(|l| active.contains(l) && x.p[[*l, t]] > 0.0).collect();
            let snapshot = x.p.clone();
            let Some((i, _)) = worst_ds_miss(&view, g, t, &ds, &flags, &|l| snapshot[[l, t]]) else { break };
            let l = ds[i];
            active.retain(|&a| a != l);
            x.p[[l, t]] = 0.0;
            dropped_ds += 1;
            fill(&mut x, t, support.links[l].node, &active);
        }
    }

    // MS steering proportional to each system's predicted throughput
    let ev = evaluate_point(&view, &Coeffs::new(&view), &x);
    let (n_dl, n_m) = (grid.tn_dl_ts_per_tf(Service::Ms) as f64, grid.ts_per_tf(Service::Ms) as f64);
    let mut thr = Array2::<f64>::zeros((n_ap + 1, km));
    for (l, link) in support.links.iter().enumerate() {
        if link.kind.service() != Service::Ms {
            continue;
        }
        let row = link.node.unwrap_or(n_ap);
        let slots = if link.kind.is_ap() { n_dl } else { n_m };
        for t in 0..nt {
            if x.p[[l, t]] > 0.0 {
                thr[[row, link.ue]] += slots * ev.rate(l, t).max(0.0);
            }
        }
    }
    for k in 0..km {
        let total = thr.column(k).sum();
        if total > 0.0 {
            for n in 0..n_ap {
                x.omega[[n, k]] = thr[[n, k]] / total;
            }
        }
    }
    let plan = to_plan(&view, &x, &ds_ap);
    Ok(GreedyPlan { support, iterate: x, plan, dropped_ds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn closed_form_levels() {
        let p = water_fill(&[1.0, 1.0], &[1.0, 4.0], 5.0);
        assert_relative_eq!(p[0], 4.0, epsilon = 1e-12);
        assert_relative_eq!(p[1], 1.0, epsilon = 1e-12);
        let p = water_fill(&[1.0, 1.0], &[2.0, 2.0], 3.0);
        assert_eq!(p[0], p[1]);
        // a weak channel stays dry when the budget is small
        let p = water_fill(&[1.0, 1.0], &[1.0, 10.0], 2.0);
        assert_eq!(p, vec![2.0, 0.0]);
        assert_eq!(water_fill(&[1.0], &[f64::INFINITY], 1.0), vec![0.0]);
    }

    proptest! {
        // KKT: every wet channel sits at the same weighted level, dry ones above it
        #[test]
        fn levels_satisfy_kkt(
            ch in proptest::collection::vec((0.1f64..4.0, 0.01f64..10.0), 1..8), budget in 0.01f64..20.0,
        ) {
            let (w, c): (Vec<f64>, Vec<f64>) = ch.into_iter().unzip();
            let p = water_fill(&w, &c, budget);
            prop_assert!((p.iter().sum::<f64>() - budget).abs() <= 1e-9 * budget.max(1.0));
            let wet: Vec<f64> = (0..p.len()).filter(|&i| p[i] > 0.0).map(|i| (p[i] + c[i]) / w[i]).collect();
            let mu = wet[0];
            for v in &wet {
                prop_assert!((v - mu).abs() <= 1e-9 * mu);
            }
            for i in 0..p.len() {
                if p[i] == 0.0 {
                    prop_assert!(c[i] / w[i] >= mu * (1.0 - 1e-9));
                }
            }
        }
    }
}
