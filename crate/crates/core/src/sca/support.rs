//! Candidate links for the continuous relaxation. Only links on this
//! support carry power variables; every other association is fixed at zero.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::channel::Gains;
use crate::error::{Error, Result};
use crate::rb_grid::{BwpAllocation, RbGrid, Service};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkKind {
    /// AP → DS UE on BWP d.
    Ds,
    /// AP → MS UE on BWP m.
    ApM,
    /// Satellite → MS UE on BWP m.
    SatM,
    /// Satellite → SS UE on BWP s.
    SatS,
}

impl LinkKind {
    pub fn service(self) -> Service {
        match self {
            LinkKind::Ds => Service::Ds,
            LinkKind::ApM | LinkKind::SatM => Service::Ms,
            LinkKind::SatS => Service::Ss,
        }
    }

    pub fn is_ap(self) -> bool {
        matches!(self, LinkKind::Ds | LinkKind::ApM)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Link {
    pub kind: LinkKind,
    /// Serving AP, `None` for the satellite.
    pub node: Option<usize>,
    /// UE index within its service class.
    pub ue: usize,
    pub f: usize,
}

impl Link {
    /// Power gain from `self`'s transmitter to UE `ue` (same service) on
    /// `self`'s RB during TF `t`.
    pub fn gain_to(&self, gains: &Gains, ue: usize, t: usize) -> f64 {
        match (self.kind, self.node) {
            (LinkKind::Ds, Some(n)) => gains.ap_d[[n, ue, self.f, t]],
            (LinkKind::ApM, Some(n)) => gains.ap_m[[n, ue, self.f, t]],
            (LinkKind::SatM, None) => gains.sat_m[[ue, self.f, t]],
            (LinkKind::SatS, None) => gains.sat_s[[ue, self.f, t]],
            _ => unreachable!("link node does not match its kind"),
        }
    }

    pub fn gain(&self, gains: &Gains, t: usize) -> f64 {
        self.gain_to(gains, self.ue, t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub layout: BwpAllocation,
    pub links: Vec<Link>,
    /// Links whose transmissions reach each link's receiver on the same RB.
    pub interferers: Vec<Vec<usize>>,
    pub n_ap: usize,
    pub counts: [usize; 3],
    /// Serving AP of each DS UE (best average gain), also used for UEs
    /// without any DS link.
    pub ds_ap: Vec<usize>,
}

/// Rule fixing the number of SBs in each BWP.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandSplit {
    /// SBs in proportion to each service's UE count.
    #[default]
    Proportional,
    /// One d-SB per DS UE where the band allows, see [`service_split`].
    Service,
}

/// Which transmitter class gets first claim on the MS UEs of each m-SB.
/// Each UE takes at most one transmitter per RB, and the relaxation can
/// only switch links off, so the choice is made here.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsPriority {
    /// The satellite takes one UE per SB and APs are matched to the rest.
    Satellite,
    /// APs are matched first; the satellite takes a UE left unmatched, if any.
    Terrestrial,
}

impl BandSplit {
    pub fn counts(self, grid: &RbGrid, ues: [usize; 3]) -> Result<[usize; 3]> {
        match self {
            BandSplit::Proportional => proportional_split(grid, ues),
            BandSplit::Service => service_split(grid, ues),
        }
    }
}

/// Sub-band counts proportional to the per-service UE counts, with both
/// guards reserved and each BWP rounded down to its SB grid.
pub fn proportional_split(grid: &RbGrid, counts: [usize; 3]) -> Result<[usize; 3]> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidScenario("no UEs to serve".into()));
    }
    let usable = grid.total_bw_khz - grid.guard_sm_khz() - grid.guard_md_khz();
    let mut n = [0usize; 3];
    for x in Service::ALL {
        let share = usable * counts[x.index()] as f64 / total as f64;
        n[x.index()] = ((share / grid.sb_width_khz(x)).floor() as usize).min(grid.sb_count(x));
        if counts[x.index()] > 0 && n[x.index()] == 0 {
            n[x.index()] = 1;
        }
    }
    // SB alignment can cost a little; shave the largest BWP until it fits
    loop {
        if BwpAllocation::contiguous(grid, n).is_ok() {
            return Ok(n);
        }
        let widest = Service::ALL
            .into_iter()
            .filter(|x| n[x.index()] > 1)
            .max_by(|a, b| {
                let wa = n[a.index()] as f64 * grid.sb_width_khz(*a);
                let wb = n[b.index()] as f64 * grid.sb_width_khz(*b);
                wa.total_cmp(&wb)
            })
            .ok_or_else(|| Error::InvalidGrid("bandwidth too narrow for one SB per service".into()))?;
        n[widest.index()] -= 1;
    }
}

/// [`proportional_split`], then widened so each DS UE can own a d-SB when
/// the other BWPs can give up the room. Allocations are tied across the TSs
/// of a TF, so DS UEs sharing an SB cannot be time-multiplexed and only
/// coexist through inter-AP interference.
pub fn service_split(grid: &RbGrid, counts: [usize; 3]) -> Result<[usize; 3]> {
    let base = proportional_split(grid, counts)?;
    let mut n = base;
    let want = counts[0].min(grid.sb_count(Service::Ds));
    while n[0] < want {
        n[0] += 1;
        while BwpAllocation::contiguous(grid, n).is_err() {
            let donor = [Service::Ms, Service::Ss]
                .into_iter()
                .filter(|x| n[x.index()] > 1)
                .max_by(|a, b| {
                    let wa = n[a.index()] as f64 * grid.sb_width_khz(*a);
                    let wb = n[b.index()] as f64 * grid.sb_width_khz(*b);
                    wa.total_cmp(&wb)
                });
            match donor {
                Some(x) => n[x.index()] -= 1,
                None => return Ok(base),
            }
        }
    }
    Ok(n)
}

impl Support {
    /// Builds the support from gains averaged over the cycle.
    ///
    /// * BWP d: SBs are dealt round-robin to DS UEs; a UE is served by its
    ///   best AP, or the best AP still free on that SB when UEs share it.
    /// * BWP m: APs are matched greedily by gain, skipping pairs below 0 dB
    ///   at the reference power, and the satellite serves one UE per SB
    ///   (fewest satellite SBs so far, ties by gain). `priority` decides
    ///   whether the satellite picks before the matching or only among the
    ///   UEs it leaves over.
    /// * BWP s: SBs are dealt round-robin to SS UEs.
    pub fn build(grid: &RbGrid, gains: &Gains, ap_ref_power: f64, split: BandSplit, priority: MsPriority) -> Result<Self> {
        let n_ap = gains.ap_d.dim().0;
        let counts = [gains.ap_d.dim().1, gains.sat_m.dim().0, gains.sat_s.dim().0];
        let split = split.counts(grid, counts)?;
        let layout = BwpAllocation::contiguous(grid, split)?;
        let avg4 = |a: &ndarray::Array4<f64>| a.mean_axis(Axis(3)).expect("at least one TF");
        let avg3 = |a: &ndarray::Array3<f64>| a.mean_axis(Axis(2)).expect("at least one TF");
        let (ap_d, ap_m, sat_m) = (avg4(&gains.ap_d), avg4(&gains.ap_m), avg3(&gains.sat_m));
        let mut links = Vec::new();

        let ds_mean: Array2<f64> = ap_d.mean_axis(Axis(2)).unwrap_or_else(|| Array2::zeros((n_ap, counts[0])));
        let mut ds_ap: Vec<usize> = (0..counts[0])
            .map(|k| (0..n_ap).max_by(|&a, &b| ds_mean[[a, k]].total_cmp(&ds_mean[[b, k]])).unwrap_or(0))
            .collect();
        let d_sbs: Vec<usize> = layout.active(Service::Ds).collect();
        // each DS UE keeps a single serving AP; its first SB fixes it
        let mut served = vec![false; counts[0]];
        if counts[0] > 0 && !d_sbs.is_empty() {
            for j in 0..counts[0].max(d_sbs.len()) {
                let k = j % counts[0];
                let free = |links: &[Link], n: usize, f: usize| {
                    !links.iter().any(|l| l.f == f && (l.node == Some(n) || l.ue == k))
                };
                let start = j % d_sbs.len();
                let order = (0..d_sbs.len()).map(|i| d_sbs[(start + i) % d_sbs.len()]);
                let pick = match order.clone().find(|&f| free(&links, ds_ap[k], f)) {
                    Some(f) => Some((ds_ap[k], f)),
                    None if !served[k] => order.clone().find_map(|f| {
                        (0..n_ap)
                            .filter(|&n| free(&links, n, f))
                            .max_by(|&a, &b| ap_d[[a, k, f]].total_cmp(&ap_d[[b, k, f]]))
                            .map(|n| (n, f))
                    }),
                    None => None,
                };
                if let Some((n, f)) = pick {
                    ds_ap[k] = n;
                    served[k] = true;
                    links.push(Link { kind: LinkKind::Ds, node: Some(n), ue: k, f });
                }
            }
        }

        if counts[1] > 0 {
            let noise = gains.noise(Service::Ms);
            let mut sat_count = vec![0usize; counts[1]];
            for f in layout.active(Service::Ms) {
                let mut taken = vec![false; counts[1]];
                let mut sat_pick = |taken: &mut [bool], links: &mut Vec<Link>| {
                    let ks = (0..counts[1]).filter(|&k| !taken[k]).min_by(|&a, &b| {
                        sat_count[a].cmp(&sat_count[b]).then(sat_m[[b, f]].total_cmp(&sat_m[[a, f]]))
                    });
                    if let Some(ks) = ks {
                        sat_count[ks] += 1;
                        taken[ks] = true;
                        links.push(Link { kind: LinkKind::SatM, node: None, ue: ks, f });
                    }
                };
                if priority == MsPriority::Satellite {
                    sat_pick(&mut taken, &mut links);
                }
                let mut pairs: Vec<(usize, usize)> = (0..n_ap)
                    .flat_map(|n| (0..counts[1]).map(move |k| (n, k)))
                    .filter(|&(n, k)| !taken[k] && ap_m[[n, k, f]] * ap_ref_power >= noise)
                    .collect();
                pairs.sort_by(|a, b| ap_m[[b.0, b.1, f]].total_cmp(&ap_m[[a.0, a.1, f]]));
                let mut ap_used = vec![false; n_ap];
                for (n, k) in pairs {
                    if !ap_used[n] && !taken[k] {
                        ap_used[n] = true;
                        taken[k] = true;
                        links.push(Link { kind: LinkKind::ApM, node: Some(n), ue: k, f });
                    }
                }
                if priority == MsPriority::Terrestrial {
                    sat_pick(&mut taken, &mut links);
                }
            }
        }

        if counts[2] > 0 {
            for (j, f) in layout.active(Service::Ss).enumerate() {
                links.push(Link { kind: LinkKind::SatS, node: None, ue: j % counts[2], f });
            }
        }
        Ok(Self::from_links(layout, links, n_ap, counts, ds_ap))
    }

    /// Assembles a support from an explicit link list.
    pub fn from_links(layout: BwpAllocation, links: Vec<Link>, n_ap: usize, counts: [usize; 3], ds_ap: Vec<usize>) -> Self {
        let interferers = links
            .iter()
            .map(|v| {
                links
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| {
                        l.f == v.f
                            && l.kind.service() == v.kind.service()
                            && match v.kind {
                                LinkKind::Ds => l.node != v.node,
                                LinkKind::ApM => l.kind == LinkKind::SatM || l.node != v.node,
                                LinkKind::SatM => l.kind == LinkKind::ApM,
                                LinkKind::SatS => false,
                            }
                    })
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        Self { layout, links, interferers, n_ap, counts, ds_ap }
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn of_kind(&self, kind: LinkKind) -> impl Iterator<Item = usize> + '_ {
        (0..self.links.len()).filter(move |&i| self.links[i].kind == kind)
    }

    /// AP → MS UE pairs carrying at least one link.
    pub fn ms_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = self
            .links
            .iter()
            .filter(|l| l.kind == LinkKind::ApM)
            .map(|l| (l.node.expect("AP link"), l.ue))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }
}
