use ndarray::{Array1, Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rb_grid::{BwpAllocation, RbGrid, Service};

/// Traffic splits of one cycle: core-network MS split ω_cn and CU→AP
/// splits ω_tn for DS and MS flows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    /// Fraction of each MS flow sent to the terrestrial network, `[k]`.
    pub omega_cn: Array1<f64>,
    /// `[n][k]`, columns sum to one.
    pub omega_tn_d: Array2<f64>,
    /// `[n][k]`, columns sum to one.
    pub omega_tn_m: Array2<f64>,
}

impl Splits {
    /// Everything terrestrial, spread evenly over APs.
    pub fn uniform(n_ap: usize, k_ds: usize, k_ms: usize) -> Self {
        let u = 1.0 / n_ap as f64;
        Self {
            omega_cn: Array1::ones(k_ms),
            omega_tn_d: Array2::from_elem((n_ap, k_ds), u),
            omega_tn_m: Array2::from_elem((n_ap, k_ms), u),
        }
    }

    /// Builds (ω_cn, ω_tn) from the intermediate splits ω̄ (ω̄_d = ω_tn_d,
    /// ω̄_m = ω_cn · ω_tn_m).
    pub fn from_intermediate(wbar_d: &Array2<f64>, wbar_m: &Array2<f64>) -> Self {
        let n_ap = wbar_d.nrows().max(wbar_m.nrows());
        let normalize = |col: ndarray::ArrayView1<f64>| -> (f64, Vec<f64>) {
            let clipped: Vec<f64> = col.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            let s: f64 = clipped.iter().sum();
            if s > 0.0 {
                (s, clipped.iter().map(|v| v / s).collect())
            } else {
                (0.0, vec![1.0 / n_ap as f64; col.len()])
            }
        };
        let mut omega_tn_d = Array2::zeros(wbar_d.dim());
        for (k, col) in wbar_d.axis_iter(Axis(1)).enumerate() {
            let (_, v) = normalize(col);
            omega_tn_d.column_mut(k).assign(&Array1::from(v));
        }
        let mut omega_tn_m = Array2::zeros(wbar_m.dim());
        let mut omega_cn = Array1::zeros(wbar_m.ncols());
        for (k, col) in wbar_m.axis_iter(Axis(1)).enumerate() {
            let (s, v) = normalize(col);
            omega_cn[k] = s.min(1.0);
            omega_tn_m.column_mut(k).assign(&Array1::from(v));
        }
        Self { omega_cn, omega_tn_d, omega_tn_m }
    }

    pub fn wbar_d(&self) -> Array2<f64> {
        self.omega_tn_d.clone()
    }

    pub fn wbar_m(&self) -> Array2<f64> {
        let mut w = self.omega_tn_m.clone();
        for (k, mut col) in w.axis_iter_mut(Axis(1)).enumerate() {
            col *= self.omega_cn[k];
        }
        w
    }

    /// Checks (C13) and range constraints; returns the worst residual.
    pub fn simplex_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for tn in [&self.omega_tn_d, &self.omega_tn_m] {
            for col in tn.axis_iter(Axis(1)) {
                worst = worst.max((col.sum() - 1.0).abs());
                for &v in col {
                    worst = worst.max(-v).max(v - 1.0);
                }
            }
        }
        for &v in &self.omega_cn {
            worst = worst.max(-v).max(v - 1.0);
        }
        worst
    }
}

/// Decision variables of one cycle at TS granularity. Time indices are TS
/// indices within the cycle for the BWP in question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationState {
    pub b: BwpAllocation,
    /// `[n][k][f][ts]` on BWP d.
    pub alpha_d: Array4<bool>,
    pub p_d: Array4<f64>,
    /// `[n][k][f][ts]` on BWP m.
    pub alpha_m: Array4<bool>,
    pub p_m: Array4<f64>,
    /// `[k][f][ts]`, satellite on BWP m.
    pub beta_m: Array3<bool>,
    pub sp_m: Array3<f64>,
    /// `[k][f][ts]`, satellite on BWP s.
    pub beta_s: Array3<bool>,
    pub sp_s: Array3<f64>,
    pub splits: Splits,
}

impl AllocationState {
    pub fn empty(grid: &RbGrid, n_ap: usize, counts: [usize; 3]) -> Self {
        let f = |x| grid.sb_count(x);
        let t = |x| grid.ts_per_cycle(x);
        let [kd, km, ks] = counts;
        let d4 = (n_ap, kd, f(Service::Ds), t(Service::Ds));
        let m4 = (n_ap, km, f(Service::Ms), t(Service::Ms));
        Self {
            b: BwpAllocation::empty(grid),
            alpha_d: Array4::from_elem(d4, false),
            p_d: Array4::zeros(d4),
            alpha_m: Array4::from_elem(m4, false),
            p_m: Array4::zeros(m4),
            beta_m: Array3::from_elem((km, f(Service::Ms), t(Service::Ms)), false),
            sp_m: Array3::zeros((km, f(Service::Ms), t(Service::Ms))),
            beta_s: Array3::from_elem((ks, f(Service::Ss), t(Service::Ss)), false),
            sp_s: Array3::zeros((ks, f(Service::Ss), t(Service::Ss))),
            splits: Splits::uniform(n_ap, kd, km),
        }
    }

    pub fn n_ap(&self) -> usize {
        self.p_d.dim().0
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.p_d.dim().1, self.p_m.dim().1, self.sp_s.dim().0]
    }
}

/// Allocation with every variable held constant across the TSs of a TF
/// (channels are constant per TF). `t` indexes TFs within the cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePlan {
    pub b: BwpAllocation,
    /// `[n][k][f][t]`
    pub p_d: Array4<f64>,
    pub on_d: Array4<bool>,
    /// `[n][k][f][t]`
    pub p_m: Array4<f64>,
    pub on_m: Array4<bool>,
    /// `[k][f][t]`
    pub sp_m: Array3<f64>,
    pub son_m: Array3<bool>,
    /// `[k][f][t]`
    pub sp_s: Array3<f64>,
    pub son_s: Array3<bool>,
    /// ω̄_d, `[n][k]`
    pub wbar_d: Array2<f64>,
    /// ω̄_m, `[n][k]`
    pub wbar_m: Array2<f64>,
}

impl FramePlan {
    pub fn zeros(grid: &RbGrid, n_ap: usize, counts: [usize; 3]) -> Self {
        let f = |x| grid.sb_count(x);
        let t = grid.n_tf;
        let [kd, km, ks] = counts;
        let d4 = (n_ap, kd, f(Service::Ds), t);
        let m4 = (n_ap, km, f(Service::Ms), t);
        Self {
            b: BwpAllocation::empty(grid),
            p_d: Array4::zeros(d4),
            on_d: Array4::from_elem(d4, false),
            p_m: Array4::zeros(m4),
            on_m: Array4::from_elem(m4, false),
            sp_m: Array3::zeros((km, f(Service::Ms), t)),
            son_m: Array3::from_elem((km, f(Service::Ms), t), false),
            sp_s: Array3::zeros((ks, f(Service::Ss), t)),
            son_s: Array3::from_elem((ks, f(Service::Ss), t), false),
            wbar_d: Array2::from_elem((n_ap, kd), 1.0 / n_ap as f64),
            wbar_m: Array2::from_elem((n_ap, km), 1.0 / n_ap as f64),
        }
    }

    pub fn n_ap(&self) -> usize {
        self.p_d.dim().0
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.p_d.dim().1, self.p_m.dim().1, self.sp_s.dim().0]
    }

    pub fn n_tf(&self) -> usize {
        self.p_d.dim().3
    }

    /// Sets every indicator to "power is positive" (the ℓ0 identity).
    pub fn sync_indicators(&mut self) {
        self.on_d = self.p_d.mapv(|v| v > 0.0);
        self.on_m = self.p_m.mapv(|v| v > 0.0);
        self.son_m = self.sp_m.mapv(|v| v > 0.0);
        self.son_s = self.sp_s.mapv(|v| v > 0.0);
    }

    /// Sets b to the sub-bands carrying any indicator.
    pub fn sync_bandwidth(&mut self, grid: &RbGrid) {
        let mut b = BwpAllocation::empty(grid);
        for ((_, _, f, _), &on) in self.on_d.indexed_iter() {
            if on {
                b.set(Service::Ds, f, true);
            }
        }
        for ((_, _, f, _), &on) in self.on_m.indexed_iter() {
            if on {
                b.set(Service::Ms, f, true);
            }
        }
        for ((_, f, _), &on) in self.son_m.indexed_iter() {
            if on {
                b.set(Service::Ms, f, true);
            }
        }
        for ((_, f, _), &on) in self.son_s.indexed_iter() {
            if on {
                b.set(Service::Ss, f, true);
            }
        }
        self.b = b;
    }

    pub fn splits(&self) -> Splits {
        Splits::from_intermediate(&self.wbar_d, &self.wbar_m)
    }

    /// Expands to TS granularity. AP variables are active only in the
    /// terrestrial DL window; satellite variables in every TS.
    pub fn expand(&self, grid: &RbGrid) -> Result<AllocationState> {
        if self.n_tf() != grid.n_tf {
            return Err(Error::Shape(format!("plan has {} TFs, grid {}", self.n_tf(), grid.n_tf)));
        }
        let mut s = AllocationState::empty(grid, self.n_ap(), self.counts());
        s.b = self.b.clone();
        let nd = grid.ts_per_tf(Service::Ds);
        let nm = grid.ts_per_tf(Service::Ms);
        let ns = grid.ts_per_tf(Service::Ss);
        for ((n, k, f, ts), v) in s.p_d.indexed_iter_mut() {
            let (t, local) = (ts / nd, ts % nd);
            if grid.is_tn_dl(Service::Ds, local) && self.on_d[[n, k, f, t]] {
                *v = self.p_d[[n, k, f, t]];
                s.alpha_d[[n, k, f, ts]] = true;
            }
        }
        for ((n, k, f, ts), v) in s.p_m.indexed_iter_mut() {
            let (t, local) = (ts / nm, ts % nm);
            if grid.is_tn_dl(Service::Ms, local) && self.on_m[[n, k, f, t]] {
                *v = self.p_m[[n, k, f, t]];
                s.alpha_m[[n, k, f, ts]] = true;
            }
        }
        for ((k, f, ts), v) in s.sp_m.indexed_iter_mut() {
            let t = ts / nm;
            if self.son_m[[k, f, t]] {
                *v = self.sp_m[[k, f, t]];
                s.beta_m[[k, f, ts]] = true;
            }
        }
        for ((k, f, ts), v) in s.sp_s.indexed_iter_mut() {
            let t = ts / ns;
            if self.son_s[[k, f, t]] {
                *v = self.sp_s[[k, f, t]];
                s.beta_s[[k, f, ts]] = true;
            }
        }
        s.splits = self.splits();
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rb_grid::NumerologyParams;
    use approx::assert_relative_eq;

    #[test]
    fn intermediate_round_trip() {
        let wd = ndarray::array![[1.0, 0.25], [0.0, 0.75]];
        let wm = ndarray::array![[0.2, 0.0], [0.2, 0.0]];
        let s = Splits::from_intermediate(&wd, &wm);
        assert_relative_eq!(s.omega_cn[0], 0.4);
        assert_relative_eq!(s.omega_tn_m[[0, 0]], 0.5);
        assert_eq!(s.omega_cn[1], 0.0);
        assert!(s.simplex_residual() < 1e-12);
        assert_relative_eq!(s.wbar_m()[[1, 0]], 0.2);
        assert_eq!(s.wbar_d(), wd);
    }

    #[test]
    fn expansion_respects_tdd() {
        let grid = RbGrid::build(3000.0, NumerologyParams::default(), 2, 1, 6).unwrap();
        let mut plan = FramePlan::zeros(&grid, 1, [1, 1, 1]);
        plan.p_d[[0, 0, 0, 1]] = 0.5;
        plan.p_m[[0, 0, 1, 0]] = 0.25;
        plan.sp_s[[0, 2, 1]] = 2.0;
        plan.sync_indicators();
        plan.sync_bandwidth(&grid);
        let s = plan.expand(&grid).unwrap();
        let dl_d: Vec<usize> = (0..80).filter(|&ts| s.alpha_d[[0, 0, 0, ts]]).collect();
        assert_eq!(dl_d, (40..64).collect::<Vec<_>>());
        assert_eq!((0..40).filter(|&ts| s.alpha_m[[0, 0, 1, ts]]).count(), 12);
        assert_eq!((0..20).filter(|&ts| s.beta_s[[0, 2, ts]]).count(), 10);
        assert!(s.b.get(Service::Ms, 1) && s.b.get(Service::Ss, 2) && s.b.get(Service::Ds, 0));
    }
}
