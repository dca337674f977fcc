//! Multi-numerology resource grid and bandwidth-part (BWP) layout.
//!
//! Sub-band indices of every service share one origin at the band edge
//! occupied by the DS part, so the spectral order is DS, guard, MS, guard, SS
//! when walking away from that edge. The C1/C2 index bounds below encode
//! exactly this order.

use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};

pub const BASE_SB_KHZ: f64 = 180.0;
pub const SF_PER_TF: usize = 10;
pub const TF_MS: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Service {
    Ds,
    Ms,
    Ss,
}

impl Service {
    pub const ALL: [Service; 3] = [Service::Ds, Service::Ms, Service::Ss];

    pub fn index(self) -> usize {
        match self {
            Service::Ds => 0,
            Service::Ms => 1,
            Service::Ss => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Service::Ds => "d",
            Service::Ms => "m",
            Service::Ss => "s",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumerologyParams {
    pub mu_s: u32,
    pub mu_m: u32,
    pub mu_d: u32,
}

impl Default for NumerologyParams {
    fn default() -> Self {
        Self { mu_s: 0, mu_m: 1, mu_d: 2 }
    }
}

impl NumerologyParams {
    pub fn mu(&self, x: Service) -> u32 {
        match x {
            Service::Ds => self.mu_d,
            Service::Ms => self.mu_m,
            Service::Ss => self.mu_s,
        }
    }

    /// Sub-band width in kHz.
    pub fn sb_width_khz(&self, x: Service) -> f64 {
        BASE_SB_KHZ * f64::from(1u32 << self.mu(x))
    }

    /// Time-slot duration in ms.
    pub fn ts_duration_ms(&self, x: Service) -> f64 {
        1.0 / f64::from(1u32 << self.mu(x))
    }

    /// Q̄^x_{x'} = 2^(μ_x − μ_x').
    pub fn qbar(&self, x: Service, other: Service) -> f64 {
        2f64.powi(self.mu(x) as i32 - self.mu(other) as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbGrid {
    pub total_bw_khz: f64,
    pub numerology: NumerologyParams,
    pub n_tf: usize,
    pub n_cy: usize,
    pub n_sf_tn_dl: usize,
    sb_count: [usize; 3],
}

impl RbGrid {
    pub fn build(
        total_bw_khz: f64,
        numerology: NumerologyParams,
        n_tf: usize,
        n_cy: usize,
        n_sf_tn_dl: usize,
    ) -> Result<Self> {
        let nm = numerology;
        if !(nm.mu_s <= nm.mu_m && nm.mu_m <= nm.mu_d) || nm.mu_d > 6 {
            return Err(Error::InvalidGrid(format!(
                "numerologies must satisfy mu_s <= mu_m <= mu_d <= 6, got ({}, {}, {})",
                nm.mu_s, nm.mu_m, nm.mu_d
            )));
        }
        let guards = nm.sb_width_khz(Service::Ss) + nm.sb_width_khz(Service::Ms);
        let minimum: f64 = Service::ALL.iter().map(|&x| nm.sb_width_khz(x)).sum::<f64>() + guards;
        if !total_bw_khz.is_finite() || total_bw_khz < minimum {
            return Err(Error::InvalidGrid(format!(
                "bandwidth {total_bw_khz} kHz cannot host one sub-band per service plus guards ({minimum} kHz)"
            )));
        }
        if n_tf == 0 || n_cy == 0 {
            return Err(Error::InvalidGrid("n_tf and n_cy must be positive".into()));
        }
        if !(1..=SF_PER_TF).contains(&n_sf_tn_dl) {
            return Err(Error::InvalidGrid(format!(
                "n_sf_tn_dl must lie in 1..=10, got {n_sf_tn_dl}"
            )));
        }
        let sb_count = Service::ALL.map(|x| (total_bw_khz / nm.sb_width_khz(x)).floor() as usize);
        Ok(Self { total_bw_khz, numerology: nm, n_tf, n_cy, n_sf_tn_dl, sb_count })
    }

    pub fn sb_count(&self, x: Service) -> usize {
        self.sb_count[x.index()]
    }

    pub fn sb_width_khz(&self, x: Service) -> f64 {
        self.numerology.sb_width_khz(x)
    }

    pub fn sb_width_hz(&self, x: Service) -> f64 {
        self.sb_width_khz(x) * 1e3
    }

    pub fn ts_duration_s(&self, x: Service) -> f64 {
        self.numerology.ts_duration_ms(x) * 1e-3
    }

    pub fn tf_duration_s(&self) -> f64 {
        TF_MS * 1e-3
    }

    pub fn guard_sm_khz(&self) -> f64 {
        self.sb_width_khz(Service::Ss)
    }

    pub fn guard_md_khz(&self) -> f64 {
        self.sb_width_khz(Service::Ms)
    }

    pub fn ts_per_sf(&self, x: Service) -> usize {
        1 << self.numerology.mu(x)
    }

    /// N_ts^x = 10 · 2^μ_x.
    pub fn ts_per_tf(&self, x: Service) -> usize {
        SF_PER_TF * self.ts_per_sf(x)
    }

    pub fn ts_per_cycle(&self, x: Service) -> usize {
        self.n_tf * self.ts_per_tf(x)
    }

    pub fn sf_per_cycle(&self) -> usize {
        self.n_tf * SF_PER_TF
    }

    /// Number of leading TSs in each TF that fall in the terrestrial DL window.
    pub fn tn_dl_ts_per_tf(&self, x: Service) -> usize {
        self.n_sf_tn_dl * self.ts_per_sf(x)
    }

    /// Whether TS `ts` (index within a TF) belongs to the terrestrial DL window.
    pub fn is_tn_dl(&self, x: Service, ts: usize) -> bool {
        ts < self.tn_dl_ts_per_tf(x)
    }

    /// Sub-frame (within the TF) that contains TS `ts` (within the TF).
    pub fn sf_of_ts(&self, x: Service, ts: usize) -> usize {
        ts / self.ts_per_sf(x)
    }

    /// Zero-based range of `other`-service sub-bands that may not be occupied
    /// while sub-band `f` (zero-based) of service `x` is in use.
    ///
    /// For the one-based index f' = f + 1 the conflicting range is
    /// 1..=⌊Q̄^x_{other}(f' + 0.5)⌋, clipped to the grid.
    pub fn overlap_range(&self, x: Service, f: usize, other: Service) -> Result<Range<usize>> {
        if f >= self.sb_count(x) {
            return Err(Error::IndexOutOfRange { what: "sub-band", index: f, len: self.sb_count(x) });
        }
        if self.numerology.mu(other) > self.numerology.mu(x) || x == other {
            return Err(Error::InvalidGrid(format!(
                "no overlap rule for {} against {}",
                x.label(),
                other.label()
            )));
        }
        let end = (self.numerology.qbar(x, other) * (f as f64 + 1.5)).floor() as usize;
        Ok(0..end.min(self.sb_count(other)))
    }

    /// Overlap ranges of a sub-band against every lower-numerology service.
    pub fn overlap_index_sets(&self, x: Service, f: usize) -> Result<Vec<(Service, Range<usize>)>> {
        let others: &[Service] = match x {
            Service::Ds => &[Service::Ms, Service::Ss],
            Service::Ms => &[Service::Ss],
            Service::Ss => &[],
        };
        if f >= self.sb_count(x) {
            return Err(Error::IndexOutOfRange { what: "sub-band", index: f, len: self.sb_count(x) });
        }
        others.iter().map(|&o| Ok((o, self.overlap_range(x, f, o)?))).collect()
    }

    pub fn validate_bwp(&self, b: &BwpAllocation) -> BwpReport {
        let mut report = BwpReport::default();
        for f in b.active(Service::Ds) {
            let m = self.overlap_range(Service::Ds, f, Service::Ms).expect("valid index");
            let s = self.overlap_range(Service::Ds, f, Service::Ss).expect("valid index");
            if m.into_iter().any(|i| b.get(Service::Ms, i)) || s.into_iter().any(|j| b.get(Service::Ss, j)) {
                report.c1.push(f);
            }
        }
        for f in b.active(Service::Ms) {
            let s = self.overlap_range(Service::Ms, f, Service::Ss).expect("valid index");
            if s.into_iter().any(|j| b.get(Service::Ss, j)) {
                report.c2.push(f);
            }
        }
        report.c3_used_khz = b.used_bw_khz(self) + self.guard_sm_khz() + self.guard_md_khz();
        report.c3_ok = report.c3_used_khz <= self.total_bw_khz + 1e-9;
        report
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BwpAllocation {
    b: [Vec<bool>; 3],
}

impl BwpAllocation {
    pub fn empty(grid: &RbGrid) -> Self {
        Self { b: Service::ALL.map(|x| vec![false; grid.sb_count(x)]) }
    }

    /// Packs `n_d`, `n_m`, `n_s` sub-bands contiguously: DS from the origin,
    /// then a guard, MS, a guard, SS.
    pub fn contiguous(grid: &RbGrid, counts: [usize; 3]) -> Result<Self> {
        let mut b = Self::empty(grid);
        let mut edge = 0.0;
        let mut prev_used = false;
        for x in Service::ALL {
            let n = counts[x.index()];
            if n == 0 {
                continue;
            }
            let w = grid.sb_width_khz(x);
            if prev_used {
                edge += if x == Service::Ms { grid.guard_md_khz() } else { grid.guard_sm_khz() };
                // a DS-to-SS transition still needs the wider DS/MS guard
                if x == Service::Ss && counts[Service::Ms.index()] == 0 {
                    edge += grid.guard_md_khz() - grid.guard_sm_khz();
                }
            }
            let start = (edge / w).ceil() as usize;
            if start + n > grid.sb_count(x) {
                return Err(Error::InvalidGrid(format!(
                    "contiguous layout {counts:?} does not fit in {} kHz",
                    grid.total_bw_khz
                )));
            }
            for f in start..start + n {
                b.b[x.index()][f] = true;
            }
            edge = (start + n) as f64 * w;
            prev_used = true;
        }
        Ok(b)
    }

    pub fn get(&self, x: Service, f: usize) -> bool {
        self.b[x.index()][f]
    }

    pub fn set(&mut self, x: Service, f: usize, on: bool) {
        self.b[x.index()][f] = on;
    }

    pub fn len(&self, x: Service) -> usize {
        self.b[x.index()].len()
    }

    pub fn count(&self, x: Service) -> usize {
        self.b[x.index()].iter().filter(|&&v| v).count()
    }

    pub fn active(&self, x: Service) -> impl Iterator<Item = usize> + '_ {
        self.b[x.index()].iter().enumerate().filter(|(_, &v)| v).map(|(f, _)| f)
    }

    pub fn used_bw_khz(&self, grid: &RbGrid) -> f64 {
        Service::ALL.iter().map(|&x| grid.sb_width_khz(x) * self.count(x) as f64).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BwpReport {
    /// DS sub-bands whose C1 range holds an occupied MS or SS sub-band.
    pub c1: Vec<usize>,
    /// MS sub-bands whose C2 range holds an occupied SS sub-band.
    pub c2: Vec<usize>,
    pub c3_used_khz: f64,
    pub c3_ok: bool,
}

impl BwpReport {
    pub fn is_feasible(&self) -> bool {
        self.c1.is_empty() && self.c2.is_empty() && self.c3_ok
    }
}
