use ndarray::{s, Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use super::state::{AllocationState, Splits};
use super::FiniteBlocklength;
use crate::channel::Gains;
use crate::error::{Error, Result};
use crate::rb_grid::{RbGrid, Service, SF_PER_TF};
use crate::scenario::Realization;
use crate::units::nats_to_bits;

fn tf_of(ts: usize, ts_per_cycle: usize, n_tf: usize) -> usize {
    ts / (ts_per_cycle / n_tf)
}

/// SINR of AP `n` → DS UE `k` on RB (f, ts), with inter-cell interference
/// from every other AP's active links on the same RB.
pub fn sinr_d(state: &AllocationState, gains: &Gains, n: usize, k: usize, f: usize, ts: usize) -> f64 {
    if !state.alpha_d[[n, k, f, ts]] {
        return 0.0;
    }
    let (n_ap, kd, _, tsc) = state.p_d.dim();
    let t = tf_of(ts, tsc, gains.ap_d.dim().3);
    let mut psi = 0.0;
    for i in (0..n_ap).filter(|&i| i != n) {
        for j in 0..kd {
            if state.alpha_d[[i, j, f, ts]] {
                psi += state.p_d[[i, j, f, ts]] * gains.ap_d[[i, k, f, t]];
            }
        }
    }
    state.p_d[[n, k, f, ts]] * gains.ap_d[[n, k, f, t]] / (psi + gains.noise(Service::Ds))
}

/// Inter-cell interference Ψ and terrestrial ISI Θ^s seen by MS UE `k` on
/// an m-RB, excluding AP `skip`.
fn ap_interference_m(state: &AllocationState, gains: &Gains, skip: Option<usize>, k: usize, f: usize, ts: usize, t: usize) -> f64 {
    let (n_ap, km, _, _) = state.p_m.dim();
    let mut sum = 0.0;
    for i in (0..n_ap).filter(|&i| Some(i) != skip) {
        for j in 0..km {
            if state.alpha_m[[i, j, f, ts]] {
                sum += state.p_m[[i, j, f, ts]] * gains.ap_m[[i, k, f, t]];
            }
        }
    }
    sum
}

/// SINR of AP `n` → MS UE `k`: denominator Ψ + Θ^a + σ²_m.
pub fn sinr_m_ap(state: &AllocationState, gains: &Gains, n: usize, k: usize, f: usize, ts: usize) -> f64 {
    if !state.alpha_m[[n, k, f, ts]] {
        return 0.0;
    }
    let t = tf_of(ts, state.p_m.dim().3, gains.ap_m.dim().3);
    let psi = ap_interference_m(state, gains, Some(n), k, f, ts, t);
    let theta_a: f64 = (0..state.sp_m.dim().0)
        .filter(|&j| state.beta_m[[j, f, ts]])
        .map(|j| state.sp_m[[j, f, ts]])
        .sum::<f64>()
        * gains.sat_m[[k, f, t]];
    state.p_m[[n, k, f, ts]] * gains.ap_m[[n, k, f, t]] / (psi + theta_a + gains.noise(Service::Ms))
}

/// SINR of satellite → MS UE `k`: denominator Θ^s + σ²_m.
pub fn sinr_m_sat(state: &AllocationState, gains: &Gains, k: usize, f: usize, ts: usize) -> f64 {
    if !state.beta_m[[k, f, ts]] {
        return 0.0;
    }
    let t = tf_of(ts, state.sp_m.dim().2, gains.sat_m.dim().2);
    let theta_s = ap_interference_m(state, gains, None, k, f, ts, t);
    state.sp_m[[k, f, ts]] * gains.sat_m[[k, f, t]] / (theta_s + gains.noise(Service::Ms))
}

/// SNR of satellite → SS UE `k` (BWP s carries no interference).
pub fn snr_s(state: &AllocationState, gains: &Gains, k: usize, f: usize, ts: usize) -> f64 {
    if !state.beta_s[[k, f, ts]] {
        return 0.0;
    }
    let t = tf_of(ts, state.sp_s.dim().2, gains.sat_s.dim().2);
    state.sp_s[[k, f, ts]] * gains.sat_s[[k, f, t]] / gains.noise(Service::Ss)
}

/// Finite-blocklength DS rate over sub-frame `sf` (within the cycle), nats/s:
/// w_d Σ ln(1+γ) − χ_d √(Σ α), zero when no RB is assigned.
pub fn rate_ds(
    state: &AllocationState,
    gains: &Gains,
    grid: &RbGrid,
    fb: &FiniteBlocklength,
    n: usize,
    k: usize,
    sf: usize,
) -> f64 {
    let per_sf = grid.ts_per_sf(Service::Ds);
    let mut sum = 0.0;
    let mut count = 0usize;
    for ts in sf * per_sf..(sf + 1) * per_sf {
        for f in 0..state.p_d.dim().2 {
            if state.alpha_d[[n, k, f, ts]] {
                count += 1;
                sum += sinr_d(state, gains, n, k, f, ts).ln_1p();
            }
        }
    }
    if count == 0 {
        return 0.0;
    }
    fb.w_d * sum - fb.chi * (count as f64).sqrt()
}

/// AP `n` → MS UE `k` rate in TS `ts`, nats/s.
pub fn rate_m_ap(state: &AllocationState, gains: &Gains, grid: &RbGrid, n: usize, k: usize, ts: usize) -> f64 {
    let sum: f64 = (0..state.p_m.dim().2).map(|f| sinr_m_ap(state, gains, n, k, f, ts).ln_1p()).sum();
    grid.sb_width_hz(Service::Ms) * sum
}

/// Satellite → MS UE `k` rate in TS `ts`, nats/s.
pub fn rate_m_sat(state: &AllocationState, gains: &Gains, grid: &RbGrid, k: usize, ts: usize) -> f64 {
    let sum: f64 = (0..state.sp_m.dim().1).map(|f| sinr_m_sat(state, gains, k, f, ts).ln_1p()).sum();
    grid.sb_width_hz(Service::Ms) * sum
}

/// Satellite → SS UE `k` rate in TS `ts`, nats/s.
pub fn rate_s(state: &AllocationState, gains: &Gains, grid: &RbGrid, k: usize, ts: usize) -> f64 {
    let sum: f64 = (0..state.sp_s.dim().1).map(|f| snr_s(state, gains, k, f, ts).ln_1p()).sum();
    grid.sb_width_hz(Service::Ss) * sum
}

/// Rates of one cycle, nats/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTrace {
    /// `[n][k][sf]`
    pub ds: Array3<f64>,
    /// `[n][k][ts]`
    pub ms_ap: Array3<f64>,
    /// `[k][ts]`
    pub ms_sat: Array2<f64>,
    /// `[k][ts]`
    pub ss: Array2<f64>,
    /// DS links (per TS) whose SINR falls below γ₀.
    pub sinr_floor_misses: usize,
}

impl RateTrace {
    pub fn compute(state: &AllocationState, gains: &Gains, grid: &RbGrid, fb: &FiniteBlocklength) -> Self {
        let (n_ap, kd, fd, tsd) = state.p_d.dim();
        let (_, km, _, tsm) = state.p_m.dim();
        let (ks, _, tss) = state.sp_s.dim();
        let mut ds = Array3::zeros((n_ap, kd, grid.sf_per_cycle()));
        for ((n, k, sf), v) in ds.indexed_iter_mut() {
            *v = rate_ds(state, gains, grid, fb, n, k, sf);
        }
        let mut misses = 0;
        for n in 0..n_ap {
            for k in 0..kd {
                for f in 0..fd {
                    for ts in 0..tsd {
                        if state.alpha_d[[n, k, f, ts]]
                            && sinr_d(state, gains, n, k, f, ts) < fb.gamma0 * (1.0 - 1e-9)
                        {
                            misses += 1;
                        }
                    }
                }
            }
        }
        Self {
            ds,
            ms_ap: Array3::from_shape_fn((n_ap, km, tsm), |(n, k, ts)| rate_m_ap(state, gains, grid, n, k, ts)),
            ms_sat: Array2::from_shape_fn((km, tsm), |(k, ts)| rate_m_sat(state, gains, grid, k, ts)),
            ss: Array2::from_shape_fn((ks, tss), |(k, ts)| rate_s(state, gains, grid, k, ts)),
            sinr_floor_misses: misses,
        }
    }

    /// Per-TF SS rate: the sum of that TF's per-TS rates.
    pub fn ss_per_tf(&self, grid: &RbGrid, k: usize, t: usize) -> f64 {
        let n = grid.ts_per_tf(Service::Ss);
        self.ss.slice(s![k, t * n..(t + 1) * n]).sum()
    }
}

/// Node-level arrivals of one cycle, bits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutedArrivals {
    /// `[n][k][sf]`
    pub ds: Array3<f64>,
    /// `[n][k][t]`
    pub ms_ap: Array3<f64>,
    /// `[k][t]`
    pub ms_sat: Array2<f64>,
    /// `[k][t]`
    pub ss: Array2<f64>,
}

/// Splits the UE-level arrivals of cycle `c` over nodes.
pub fn route_arrivals(splits: &Splits, realization: &Realization, grid: &RbGrid, c: usize) -> Result<RoutedArrivals> {
    let res = splits.simplex_residual();
    if res > 1e-9 {
        return Err(Error::InvalidParameter(format!("traffic splits violate the simplex constraints by {res}")));
    }
    let (n_ap, kd) = splits.omega_tn_d.dim();
    let km = splits.omega_cn.len();
    let ks = realization.ss.nrows();
    let (n_tf, n_sf) = (grid.n_tf, grid.sf_per_cycle());
    let (t0, sf0) = (c * n_tf, c * n_sf);
    if realization.ds.nrows() != kd || realization.ms.nrows() != km || realization.ms.ncols() < t0 + n_tf {
        return Err(Error::Shape("realization does not match splits or horizon".into()));
    }
    let wbar_m = splits.wbar_m();
    Ok(RoutedArrivals {
        ds: Array3::from_shape_fn((n_ap, kd, n_sf), |(n, k, v)| {
            splits.omega_tn_d[[n, k]] * realization.ds[[k, sf0 + v]]
        }),
        ms_ap: Array3::from_shape_fn((n_ap, km, n_tf), |(n, k, t)| wbar_m[[n, k]] * realization.ms[[k, t0 + t]]),
        ms_sat: Array2::from_shape_fn((km, n_tf), |(k, t)| {
            (1.0 - splits.omega_cn[k]).max(0.0) * realization.ms[[k, t0 + t]]
        }),
        ss: Array2::from_shape_fn((ks, n_tf), |(k, t)| realization.ss[[k, t0 + t]]),
    })
}

/// One step of q ← [q + λ − T·R]⁺ with R in bits/s.
pub fn queue_step(q: f64, lambda: f64, ts_duration: f64, rate_bits: f64) -> f64 {
    (q + lambda - ts_duration * rate_bits).max(0.0)
}

/// Queue lengths in bits at the start of a cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    /// MS queues at APs, `[n][k]`.
    pub tn: Array2<f64>,
    /// MS queues at the satellite, `[k]`.
    pub sat_m: Array1<f64>,
    /// SS queues at the satellite, `[k]`.
    pub sat_s: Array1<f64>,
}

impl QueueState {
    pub fn zeros(n_ap: usize, k_ms: usize, k_ss: usize) -> Self {
        Self { tn: Array2::zeros((n_ap, k_ms)), sat_m: Array1::zeros(k_ms), sat_s: Array1::zeros(k_ss) }
    }

    pub fn total(&self) -> f64 {
        self.tn.sum() + self.sat_m.sum() + self.sat_s.sum()
    }
}

/// Queue lengths after every TS of one cycle, bits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueTrace {
    /// `[n][k][ts_m]`
    pub tn: Array3<f64>,
    /// `[k][ts_m]`
    pub sat_m: Array2<f64>,
    /// `[k][ts_s]`
    pub sat_s: Array2<f64>,
}

impl QueueTrace {
    pub fn final_state(&self) -> QueueState {
        let last = |a: &Array2<f64>| a.column(a.ncols() - 1).to_owned();
        QueueState {
            tn: self.tn.index_axis(ndarray::Axis(2), self.tn.dim().2 - 1).to_owned(),
            sat_m: last(&self.sat_m),
            sat_s: last(&self.sat_s),
        }
    }

    /// Time-averaged total queued bits (each entry weighted by its TS length).
    pub fn mean_queue_bits(&self, grid: &RbGrid) -> f64 {
        self.mean_queue_by_system(grid).iter().sum()
    }

    /// The time average split into terrestrial, satellite-m and satellite-s
    /// backlogs.
    pub fn mean_queue_by_system(&self, grid: &RbGrid) -> [f64; 3] {
        let tm = grid.ts_duration_s(Service::Ms);
        let ts = grid.ts_duration_s(Service::Ss);
        let span = grid.n_tf as f64 * grid.tf_duration_s();
        [tm * self.tn.sum() / span, tm * self.sat_m.sum() / span, ts * self.sat_s.sum() / span]
    }
}

/// Runs the queue recursions of one cycle. MS/SS arrivals enter at the
/// first TS of each TF; rates are in nats/s.
pub fn simulate_queues(init: &QueueState, arrivals: &RoutedArrivals, rates: &RateTrace, grid: &RbGrid) -> QueueTrace {
    let (n_ap, km, tsm) = rates.ms_ap.dim();
    let (ks, tss) = rates.ss.dim();
    let (nm, ns) = (grid.ts_per_tf(Service::Ms), grid.ts_per_tf(Service::Ss));
    let (tm, tsd) = (grid.ts_duration_s(Service::Ms), grid.ts_duration_s(Service::Ss));
    let run = |q0: f64, arr: &dyn Fn(usize) -> f64, rate: &dyn Fn(usize) -> f64, len: usize, per_tf: usize, dur: f64| {
        let mut q = q0;
        (0..len)
            .map(|ts| {
                let a = if ts % per_tf == 0 { arr(ts / per_tf) } else { 0.0 };
                q = queue_step(q, a, dur, nats_to_bits(rate(ts)));
                q
            })
            .collect::<Vec<f64>>()
    };
    let mut tn = Array3::zeros((n_ap, km, tsm));
    for n in 0..n_ap {
        for k in 0..km {
            let v = run(init.tn[[n, k]], &|t| arrivals.ms_ap[[n, k, t]], &|ts| rates.ms_ap[[n, k, ts]], tsm, nm, tm);
            tn.slice_mut(s![n, k, ..]).assign(&Array1::from(v));
        }
    }
    let mut sat_m = Array2::zeros((km, tsm));
    for k in 0..km {
        let v = run(init.sat_m[k], &|t| arrivals.ms_sat[[k, t]], &|ts| rates.ms_sat[[k, ts]], tsm, nm, tm);
        sat_m.row_mut(k).assign(&Array1::from(v));
    }
    let mut sat_s = Array2::zeros((ks, tss));
    for k in 0..ks {
        let v = run(init.sat_s[k], &|t| arrivals.ss[[k, t]], &|ts| rates.ss[[k, ts]], tss, ns, tsd);
        sat_s.row_mut(k).assign(&Array1::from(v));
    }
    QueueTrace { tn, sat_m, sat_s }
}

/// Congestion objective: sum of MS queues at APs plus MS and SS queues at
/// the satellite over every TS of the cycle, bits·slots.
pub fn objective(trace: &QueueTrace) -> f64 {
    trace.tn.sum() + trace.sat_m.sum() + trace.sat_s.sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleEvaluation {
    pub rates: RateTrace,
    pub arrivals: RoutedArrivals,
    pub trace: QueueTrace,
    pub objective: f64,
    pub mean_queue_bits: f64,
    /// (n, k, sf) triples with T_d R < λ.
    pub ds_misses: usize,
    /// (n, k, sf) triples with λ > 0.
    pub ds_demands: usize,
    pub sinr_floor_misses: usize,
}

impl CycleEvaluation {
    /// DS bits that missed their sub-frame deadline, summed over links.
    pub fn ds_shortfall_bits(&self, grid: &RbGrid) -> f64 {
        let td = grid.ts_duration_s(Service::Ds);
        self.arrivals.ds.indexed_iter().map(|((n, k, sf), &lambda)| (lambda - nats_to_bits(td * self.rates.ds[[n, k, sf]])).max(0.0)).sum()
    }
}

/// Rates, routing, queues and metrics of one cycle on the given channels
/// and arrivals.
pub fn evaluate_cycle(
    state: &AllocationState,
    gains: &Gains,
    realization: &Realization,
    init: &QueueState,
    grid: &RbGrid,
    fb: &FiniteBlocklength,
    cycle: usize,
) -> Result<CycleEvaluation> {
    let arrivals = route_arrivals(&state.splits, realization, grid, cycle)?;
    let rates = RateTrace::compute(state, gains, grid, fb);
    let trace = simulate_queues(init, &arrivals, &rates, grid);
    let td = grid.ts_duration_s(Service::Ds);
    let (mut misses, mut demands) = (0, 0);
    for ((n, k, sf), &lambda) in arrivals.ds.indexed_iter() {
        if lambda > 0.0 {
            demands += 1;
            if nats_to_bits(td * rates.ds[[n, k, sf]]) < lambda * (1.0 - 1e-12) {
                misses += 1;
            }
        }
    }
    debug_assert_eq!(arrivals.ds.dim().2, grid.n_tf * SF_PER_TF);
    Ok(CycleEvaluation {
        objective: objective(&trace),
        mean_queue_bits: trace.mean_queue_bits(grid),
        ds_misses: misses,
        ds_demands: demands,
        sinr_floor_misses: rates.sinr_floor_misses,
        rates,
        arrivals,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SystemParams;
    use crate::rb_grid::NumerologyParams;
    use crate::scenario::RealizationKind;
    use ndarray::{Array3, Array4};
    use proptest::prelude::*;

    fn grid() -> RbGrid {
        RbGrid::build(3000.0, NumerologyParams::default(), 1, 1, 6).unwrap()
    }

    fn gains(grid: &RbGrid, n_ap: usize, counts: [usize; 3], v: f64) -> Gains {
        let f = |x| grid.sb_count(x);
        Gains {
            ap_d: Array4::from_elem((n_ap, counts[0], f(Service::Ds), grid.n_tf), v),
            ap_m: Array4::from_elem((n_ap, counts[1], f(Service::Ms), grid.n_tf), v),
            sat_m: Array3::from_elem((counts[1], f(Service::Ms), grid.n_tf), v),
            sat_s: Array3::from_elem((counts[2], f(Service::Ss), grid.n_tf), v),
            noise: [1.0, 1.0, 1.0],
        }
    }

    fn fb(grid: &RbGrid) -> FiniteBlocklength {
        FiniteBlocklength::new(grid, &SystemParams::default())
    }

    #[test]
    fn sinr_single_and_symmetric() {
        let g = grid();
        let mut st = AllocationState::empty(&g, 2, [2, 1, 1]);
        let mut ch = gains(&g, 2, [2, 1, 1], 1.0);
        st.alpha_d[[0, 0, 0, 0]] = true;
        st.p_d[[0, 0, 0, 0]] = 1.0;
        assert_eq!(sinr_d(&st, &ch, 0, 0, 0, 0), 1.0);
        assert_eq!(sinr_d(&st, &ch, 1, 1, 0, 0), 0.0);
        // two APs, two UEs: direct gain 3, cross gain 0.5, power 2, noise 1
        for n in 0..2 {
            for k in 0..2 {
                ch.ap_d[[n, k, 0, 0]] = if n == k { 3.0 } else { 0.5 };
            }
        }
        st.alpha_d[[1, 1, 0, 0]] = true;
        st.p_d[[0, 0, 0, 0]] = 2.0;
        st.p_d[[1, 1, 0, 0]] = 2.0;
        let expect = 3.0 * 2.0 / (0.5 * 2.0 + 1.0);
        assert_eq!(sinr_d(&st, &ch, 0, 0, 0, 0), expect);
        assert_eq!(sinr_d(&st, &ch, 1, 1, 0, 0), expect);
    }

    #[test]
    fn sinr_m_hand_sum() {
        let g = grid();
        let mut st = AllocationState::empty(&g, 2, [0, 2, 0]);
        let mut ch = gains(&g, 2, [0, 2, 0], 1.0);
        ch.noise = [1.0, 0.5, 1.0];
        st.alpha_m[[0, 0, 3, 5]] = true;
        st.p_m[[0, 0, 3, 5]] = 2.0;
        ch.ap_m[[0, 0, 3, 0]] = 4.0;
        // no satellite: plain SINR
        assert_eq!(sinr_m_ap(&st, &ch, 0, 0, 3, 5), 8.0 / 0.5);
        st.alpha_m[[1, 1, 3, 5]] = true;
        st.p_m[[1, 1, 3, 5]] = 1.0;
        ch.ap_m[[1, 0, 3, 0]] = 0.25;
        st.beta_m[[1, 3, 5]] = true;
        st.sp_m[[1, 3, 5]] = 3.0;
        ch.sat_m[[0, 3, 0]] = 0.1;
        // Ψ = 1·0.25, Θ^a = 3·0.1, σ² = 0.5
        let den = 0.25 + 0.3 + 0.5;
        assert!((sinr_m_ap(&st, &ch, 0, 0, 3, 5) - 8.0 / den).abs() < 1e-12);
        // satellite link to UE 1 sees both APs through h_{n,1}
        ch.sat_m[[1, 3, 0]] = 2.0;
        let theta_s = 2.0 * ch.ap_m[[0, 1, 3, 0]] + 1.0 * ch.ap_m[[1, 1, 3, 0]];
        assert!((sinr_m_sat(&st, &ch, 1, 3, 5) - 6.0 / (theta_s + 0.5)).abs() < 1e-12);
        let mut quiet = st.clone();
        quiet.alpha_m.fill(false);
        assert_eq!(sinr_m_sat(&quiet, &ch, 1, 3, 5), 6.0 / 0.5);
    }

    #[test]
    fn snr_and_rates() {
        let g = grid();
        let mut st = AllocationState::empty(&g, 1, [1, 1, 1]);
        let ch = gains(&g, 1, [1, 1, 1], 1.0);
        assert_eq!(snr_s(&st, &ch, 0, 0, 0), 0.0);
        st.beta_s[[0, 0, 0]] = true;
        st.sp_s[[0, 0, 0]] = 1.0;
        assert_eq!(snr_s(&st, &ch, 0, 0, 0), 1.0);
        st.sp_s[[0, 0, 0]] = 2.0;
        assert_eq!(snr_s(&st, &ch, 0, 0, 0), 2.0);

        let w_m = g.sb_width_hz(Service::Ms);
        assert_eq!(rate_m_ap(&st, &ch, &g, 0, 0, 0), 0.0);
        for f in 0..2 {
            st.alpha_m[[0, 0, f, 0]] = true;
            st.p_m[[0, 0, f, 0]] = 1.0;
        }
        assert!((rate_m_ap(&st, &ch, &g, 0, 0, 0) - 2.0 * w_m * 2f64.ln()).abs() < 1e-6);

        let f = fb(&g);
        assert_eq!(rate_ds(&st, &ch, &g, &f, 0, 0, 0), 0.0);
        let mut ch_e = ch.clone();
        ch_e.ap_d.fill(std::f64::consts::E - 1.0);
        st.alpha_d[[0, 0, 0, 0]] = true;
        st.p_d[[0, 0, 0, 0]] = 1.0;
        let one = rate_ds(&st, &ch_e, &g, &f, 0, 0, 0);
        assert!((one - (f.w_d - f.chi)).abs() < 1e-6);
        for ts in 0..4 {
            st.alpha_d[[0, 0, 0, ts]] = true;
            st.p_d[[0, 0, 0, ts]] = 1.0;
        }
        let four = rate_ds(&st, &ch_e, &g, &f, 0, 0, 0);
        assert!((four - (4.0 * f.w_d - 2.0 * f.chi)).abs() < 1e-6);
    }

    #[test]
    fn per_tf_ss_rate_is_sum_of_ts_rates() {
        let g = grid();
        let mut st = AllocationState::empty(&g, 1, [0, 0, 1]);
        let ch = gains(&g, 1, [0, 0, 1], 3.0);
        for ts in 0..10 {
            st.beta_s[[0, ts % 3, ts]] = true;
            st.sp_s[[0, ts % 3, ts]] = ts as f64;
        }
        let rt = RateTrace::compute(&st, &ch, &g, &fb(&g));
        let direct: f64 = (0..10).map(|ts| rate_s(&st, &ch, &g, 0, ts)).sum();
        assert!((rt.ss_per_tf(&g, 0, 0) - direct).abs() < 1e-9);
    }

    fn realization(km: usize, kd: usize, ks: usize, n_tf: usize, v: f64) -> Realization {
        Realization {
            kind: RealizationKind::Actual,
            ds: Array2::from_elem((kd, n_tf * 10), v),
            ms: Array2::from_elem((km, n_tf), v),
            ss: Array2::from_elem((ks, n_tf), v),
        }
    }

    #[test]
    fn routing_examples() {
        let g = grid();
        let r = realization(1, 1, 1, 1, 10.0);
        let mut sp = Splits::uniform(2, 1, 1);
        sp.omega_cn[0] = 0.4;
        let ra = route_arrivals(&sp, &r, &g, 0).unwrap();
        assert!((ra.ms_ap[[0, 0, 0]] - 2.0).abs() < 1e-12);
        assert!((ra.ms_ap[[1, 0, 0]] - 2.0).abs() < 1e-12);
        assert!((ra.ms_sat[[0, 0]] - 6.0).abs() < 1e-12);
        sp.omega_cn[0] = 1.0;
        let ra = route_arrivals(&sp, &r, &g, 0).unwrap();
        assert_eq!(ra.ms_sat[[0, 0]], 0.0);
        assert_eq!(ra.ms_ap[[0, 0, 0]], 5.0);
        sp.omega_tn_m[[0, 0]] = 0.7;
        assert!(route_arrivals(&sp, &r, &g, 0).is_err());
    }

    #[test]
    fn queue_examples() {
        assert_eq!(queue_step(2.0, 1.0, 1.0, 4.0), 0.0);
        assert_eq!(queue_step(2.0, 1.5, 1.0, 0.0), 3.5);
        let tr = QueueTrace {
            tn: Array3::from_shape_vec((2, 1, 2), vec![1.0, 2.0, 0.0, 4.0]).unwrap(),
            sat_m: Array2::from_shape_vec((1, 2), vec![0.5, 0.0]).unwrap(),
            sat_s: Array2::zeros((1, 1)),
        };
        assert_eq!(objective(&tr), 7.5);
    }

    #[test]
    fn zero_rates_accumulate_arrivals() {
        let g = grid();
        let st = AllocationState::empty(&g, 1, [0, 1, 1]);
        let ch = gains(&g, 1, [0, 1, 1], 1.0);
        let r = realization(1, 0, 1, 1, 8.0);
        let ev = evaluate_cycle(&st, &ch, &r, &QueueState::zeros(1, 1, 1), &g, &fb(&g), 0).unwrap();
        // all MS traffic goes to the single AP and sits there for the whole TF,
        // SS traffic sits at the satellite
        assert!(ev.trace.tn.iter().all(|&q| q == 8.0));
        assert!(ev.trace.sat_s.iter().all(|&q| q == 8.0));
        assert!((ev.mean_queue_bits - 16.0).abs() < 1e-12);
        assert_eq!(ev.objective, 8.0 * 20.0 + 8.0 * 10.0);
    }

    proptest! {
        #[test]
        fn recursion_matches_scalar_oracle(
            q0 in 0.0f64..1e6,
            arrivals in proptest::collection::vec(0.0f64..1e6, 3),
            rates in proptest::collection::vec(0.0f64..1e9, 3),
        ) {
            let mut q = q0;
            let mut expect = Vec::new();
            for i in 0..3 {
                let next = q + arrivals[i] - 1e-3 * rates[i];
                q = if next > 0.0 { next } else { 0.0 };
                expect.push(q);
            }
            let mut q = q0;
            for i in 0..3 {
                q = queue_step(q, arrivals[i], 1e-3, rates[i]);
                prop_assert_eq!(q, expect[i]);
            }
        }

        #[test]
        fn routing_conserves_traffic(
            cn in 0.0f64..=1.0,
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
            lambda in 0.0f64..1e7,
        ) {
            let g = grid();
            let s = a + b + 1e-9;
            let mut sp = Splits::uniform(2, 1, 1);
            sp.omega_cn[0] = cn;
            sp.omega_tn_m[[0, 0]] = a / s;
            sp.omega_tn_m[[1, 0]] = 1.0 - a / s;
            let r = realization(1, 1, 1, 1, lambda);
            let ra = route_arrivals(&sp, &r, &g, 0).unwrap();
            let total = ra.ms_ap[[0, 0, 0]] + ra.ms_ap[[1, 0, 0]] + ra.ms_sat[[0, 0]];
            prop_assert!((total - lambda).abs() <= 1e-12 * lambda.max(1.0));
        }

        #[test]
        fn queues_monotone_in_arrivals_and_rates(
            arr in 0.0f64..1e5, extra in 0.0f64..1e5, rate in 0.0f64..1e8, more in 0.0f64..1e8, q0 in 0.0f64..1e5,
        ) {
            prop_assert!(queue_step(q0, arr + extra, 1e-3, rate) >= queue_step(q0, arr, 1e-3, rate));
            prop_assert!(queue_step(q0, arr, 1e-3, rate + more) <= queue_step(q0, arr, 1e-3, rate));
        }

        #[test]
        fn rates_monotone_in_power(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = grid();
            let mut st = AllocationState::empty(&g, 2, [0, 2, 0]);
            let mut ch = gains(&g, 2, [0, 2, 0], 1.0);
            ch.ap_m.mapv_inplace(|_| rng.random_range(0.01..1.0));
            ch.sat_m.mapv_inplace(|_| rng.random_range(0.01..1.0));
            for n in 0..2 {
                st.alpha_m[[n, n, 0, 0]] = true;
                st.p_m[[n, n, 0, 0]] = rng.random_range(0.1..2.0);
            }
            st.beta_m[[1, 0, 0]] = true;
            st.sp_m[[1, 0, 0]] = rng.random_range(0.1..2.0);
            let base = rate_m_ap(&st, &ch, &g, 0, 0, 0);
            let base_other = sinr_m_ap(&st, &ch, 1, 1, 0, 0);
            st.p_m[[0, 0, 0, 0]] *= 1.01;
            prop_assert!(rate_m_ap(&st, &ch, &g, 0, 0, 0) >= base);
            // AP 0 is an interferer for the link AP 1 → UE 1
            prop_assert!(sinr_m_ap(&st, &ch, 1, 1, 0, 0) <= base_other);
        }
    }

    #[test]
    fn objective_matches_independent_accumulation() {
        let g = grid();
        let mut st = AllocationState::empty(&g, 2, [0, 2, 1]);
        let ch = gains(&g, 2, [0, 2, 1], 1e-3);
        st.alpha_m[[0, 1, 2, 0]] = true;
        st.p_m[[0, 1, 2, 0]] = 1.0;
        let r = realization(2, 0, 1, 1, 1e4);
        let ev = evaluate_cycle(&st, &ch, &r, &QueueState::zeros(2, 2, 1), &g, &fb(&g), 0).unwrap();
        let mut total = 0.0;
        for v in ev.trace.tn.iter().chain(ev.trace.sat_m.iter()).chain(ev.trace.sat_s.iter()) {
            total += v;
        }
        assert!((ev.objective - total).abs() <= 1e-12 * total);
    }
}
