//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. The full run takes several minutes on one core.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::process::ExitCode;
use std::time::Instant;

use istn_core::channel::fspl_db;
use istn_core::harness::{ordering, reoptimization_gain, policy_means, RunRow};
use istn_core::model::{
    audit, evaluate_cycle, route_arrivals, simulate_queues, AuditInputs, CycleEvaluation, RateTrace, RoutedArrivals,
};
use istn_core::rb_grid::Service;
use istn_core::sca::{f_ap, f_ap_lin, f_exp_lin, f_sqrt_lin};
use istn_core::scenario::{DtErrorParams, RealizationKind, TrafficParams};
use istn_core::{
    run_experiment, run_policy, BwpAllocation, ChannelParams, ExperimentConfig, FramePlan, Instance, NumerologyParams,
    Policy, QueueState, RbGrid, Realization, ScenarioParams, Splits, SystemParams,
};

type Verdict = Result<(bool, String), String>;

/// Relative slack for the surrogate bound inequalities (floating-point only).
const BOUND_SLACK: f64 = 1e-12;
const TANGENCY_TOL: f64 = 1e-9;
const SURROGATE_POINTS: usize = 100_000;
const SURROGATE_SECONDS: f64 = 5.0;
const MONOTONE_TOL: f64 = 1e-3;
const PHASE1_MAX_ITER: usize = 50;
const PHASE2_MAX_ITER: usize = 10;
const COLD_FRACTION: f64 = 0.7;
const ORACLE_RATIO: f64 = 1.1;
const ORACLE_INSTANCES: u64 = 10;
const ORACLE_SECONDS: f64 = 600.0;
const POWER_LEVELS: usize = 20;
const ORDER_FRACTION: f64 = 0.8;
/// Two mean queues closer than this (relative) count as a tie.
const TIE_TOL: f64 = 1e-6;
/// Gain differences below this fraction of the PIA mean queue are solver noise.
const GAIN_TOL: f64 = 1e-6;
const ROUTING_TOL: f64 = 1e-12;
const FSPL_TOL_DB: f64 = 0.01;
/// Deadline shortfall weight, per bit, matching the optimiser's per-Mbit
/// weight on a queue objective counted in bits.
const DEADLINE_WEIGHT: f64 = 1e5;

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

// 1 -------------------------------------------------------------------------

fn surrogate_bounds() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut bad, mut worst_tan) = (0usize, 0.0f64);
    for _ in 0..SURROGATE_POINTS {
        let eps = 10f64.powf(rng.random_range(-4.0..-1.0));
        let (x, x0) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let (f, lin) = (f_ap(x, eps), f_ap_lin(x, x0, eps));
        bad += usize::from(f > lin + BOUND_SLACK * lin.abs().max(1.0));
        worst_tan = worst_tan.max(rel_gap(f_ap_lin(x0, x0, eps), f_ap(x0, eps)));

        let (u, u0) = (rng.random_range(-20.0..5.0), rng.random_range(-20.0..5.0));
        let lin = f_exp_lin(u, u0);
        bad += usize::from(lin > u.exp() * (1.0 + BOUND_SLACK));
        worst_tan = worst_tan.max(rel_gap(f_exp_lin(u0, u0), u0.exp()));

        let (x, x0) = (rng.random_range(0.0..100.0), rng.random_range(1e-3..100.0));
        let lin = f_sqrt_lin(x, x0).map_err(|e| e.to_string())?;
        bad += usize::from(lin < x.sqrt() * (1.0 - BOUND_SLACK));
        worst_tan = worst_tan.max(rel_gap(f_sqrt_lin(x0, x0).map_err(|e| e.to_string())?, x0.sqrt()));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        bad == 0 && worst_tan <= TANGENCY_TOL && secs < SURROGATE_SECONDS,
        format!("{bad} bound violations in 3x{SURROGATE_POINTS} points, worst tangency gap {worst_tan:.1e}, {secs:.2} s"),
    ))
}

// 2 -------------------------------------------------------------------------

fn phase1_monotone() -> Verdict {
    let mut cfg = ExperimentConfig::full();
    cfg.grid.n_cy = 1;
    let grid = cfg.grid.build().map_err(|e| e.to_string())?;
    let (mut ok, mut lines) = (true, Vec::new());
    for policy in [Policy::Pia, Policy::Fia] {
        let inst = Instance::generate(&grid, &cfg.scenario, &cfg.channel, &cfg.system, 1).map_err(|e| e.to_string())?;
        let r = run_policy(policy, &inst, &cfg.algorithm).map_err(|e| e.to_string())?;
        let c = &r.cycles[0];
        let h = &c.phase1_history;
        let worst_rise = h
            .windows(2)
            .map(|w| (w[1].objective - w[0].objective) / w[0].objective.abs().max(1e-12))
            .fold(f64::NEG_INFINITY, f64::max);
        let good = worst_rise <= MONOTONE_TOL
            && c.phase1_iterations <= PHASE1_MAX_ITER
            && c.phase1_iterations < cfg.algorithm.sca.max_iter
            && c.solver_failure.is_none();
        ok &= good;
        lines.push(format!(
            "{policy}: {} iterations, objective {:.4} -> {:.4}, worst relative rise {worst_rise:.1e}, {:.0} s",
            c.phase1_iterations,
            h[0].objective,
            h[h.len() - 1].objective,
            c.solve_seconds
        ));
    }
    Ok((ok, lines.join("; ")))
}

// 3 -------------------------------------------------------------------------

fn warm_start(ordering_rows: &[RunRow]) -> Verdict {
    let warm: Vec<&RunRow> =
        ordering_rows.iter().filter(|r| r.policy == Policy::Piawro && r.sweep_value == Some(34.0)).collect();
    let mut cfg = ExperimentConfig::desk();
    cfg.policies = vec![Policy::Piawro];
    cfg.algorithm.cold_calibration = true;
    let cold = run_experiment(&cfg).map_err(|e| e.to_string())?.runs;
    let warm_max = warm.iter().filter_map(|r| r.phase2_iterations_max).max().unwrap_or(usize::MAX);
    let (mut more, mut pairs) = (0, 0);
    for w in &warm {
        let Some(c) = cold.iter().find(|c| c.seed == w.seed && c.ok) else { continue };
        if let (Some(a), Some(b)) = (w.phase2_iterations_total, c.phase2_iterations_total) {
            pairs += 1;
            more += usize::from(b > a);
        }
    }
    let frac = more as f64 / pairs.max(1) as f64;
    let all_ok = warm.len() == 20 && warm.iter().all(|r| r.ok) && pairs == 20;
    Ok((
        all_ok && warm_max <= PHASE2_MAX_ITER && frac >= COLD_FRACTION,
        format!("warm max {warm_max} iterations per TF; cold needs more on {more}/{pairs} seeds ({:.0}%)", 100.0 * frac),
    ))
}

// 4 -------------------------------------------------------------------------

fn audit_all(rows: &[RunRow]) -> Verdict {
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !(r.ok && r.audit_ok == Some(true)))
        .map(|r| format!("{}@{:?}/seed {}: {}{}", r.policy, r.sweep_value, r.seed, r.error, r.audit_failures))
        .collect();
    Ok((
        failed.is_empty() && !rows.is_empty(),
        if failed.is_empty() {
            format!("{} runs, all clean", rows.len())
        } else {
            format!("{} of {} runs failed: {}", failed.len(), rows.len(), failed.join(", "))
        },
    ))
}

// 5 -------------------------------------------------------------------------

/// Queue objective plus weighted DS deadline shortfall, from the raw
/// evaluation traces.
fn oracle_score(ev: &CycleEvaluation, grid: &RbGrid) -> f64 {
    let td = grid.ts_duration_s(Service::Ds);
    let mut shortfall = 0.0;
    for ((n, k, sf), &lambda) in ev.arrivals.ds.indexed_iter() {
        let served = td * ev.rates.ds[[n, k, sf]] / std::f64::consts::LN_2;
        shortfall += (lambda - served).max(0.0);
    }
    let queues = ev.trace.tn.sum() + ev.trace.sat_m.sum() + ev.trace.sat_s.sum();
    queues + DEADLINE_WEIGHT * shortfall
}

fn tiny_instance(seed: u64) -> Result<Instance, String> {
    let grid = RbGrid::build(1800.0, NumerologyParams::default(), 1, 1, 6).map_err(|e| e.to_string())?;
    let sp = ScenarioParams {
        n_ap: 2,
        k_ds: 1,
        k_ms: 1,
        k_ss: 1,
        traffic: TrafficParams {
            ms_packets_per_tf: 2.0,
            ss_packets_per_tf: 2.0,
            ms_packet_bytes: 2_000.0,
            ss_packet_bytes: 2_000.0,
            ..TrafficParams::default()
        },
        dt_error: DtErrorParams::exact(),
        ..ScenarioParams::default()
    };
    let ch = ChannelParams { xi: 1.0, ..ChannelParams::default() };
    Instance::generate(&grid, &sp, &ch, &SystemParams::default(), seed).map_err(|e| e.to_string())
}

/// Evaluates `plan` on actual data; `None` when it breaks a hard constraint.
fn score_plan(inst: &Instance, plan: &FramePlan) -> Option<f64> {
    let state = plan.expand(&inst.grid).ok()?;
    let q0 = QueueState::zeros(2, 1, 1);
    let actual = inst.scenario.realization(RealizationKind::Actual);
    let ev = evaluate_cycle(&state, &inst.channels[0].actual, actual, &q0, &inst.grid, &inst.fb, 0).ok()?;
    let score = oracle_score(&ev, &inst.grid);
    let report = audit(&AuditInputs {
        grid: &inst.grid,
        state: &state,
        gains: &inst.channels[0].actual,
        fb: &inst.fb,
        system: &inst.system,
        evaluation: Some(&ev),
    });
    report.failed_hard().is_empty().then_some(score)
}

/// Exhaustive search over single-server associations (DS from either AP or
/// off; MS from either AP, the satellite or nobody; SS from the satellite
/// or off) with every transmit power on a grid of `POWER_LEVELS` levels.
fn brute_force(inst: &Instance) -> Option<f64> {
    let grid = &inst.grid;
    let b = BwpAllocation::contiguous(grid, [1, 1, 1]).ok()?;
    let sb = |x: Service| (0..b.len(x)).find(|&f| b.get(x, f)).unwrap();
    let (fd, fm, fs) = (sb(Service::Ds), sb(Service::Ms), sb(Service::Ss));
    let (pa, ps) = (inst.system.p_max_ap(), inst.system.p_max_sat());
    let lv = POWER_LEVELS;
    // (server, level); server 0/1 = AP, 2 = satellite
    let mut ds_opts = vec![None];
    let mut ms_opts = vec![None];
    for l in 1..=lv {
        for n in 0..2 {
            ds_opts.push(Some((n, l)));
            ms_opts.push(Some((n, l)));
        }
        ms_opts.push(Some((2, l)));
    }
    let mut best: Option<f64> = None;
    let mut pending: Vec<(f64, FramePlan)> = Vec::new();
    for &ds in &ds_opts {
        for &ms in &ms_opts {
            for ls in 0..=lv {
                let mut ap = [0.0; 2];
                let mut sat = ls as f64 / lv as f64;
                if let Some((n, l)) = ds {
                    ap[n] += l as f64 / lv as f64;
                }
                match ms {
                    Some((n, l)) if n < 2 => ap[n] += l as f64 / lv as f64,
                    Some((_, l)) => sat += l as f64 / lv as f64,
                    None => {}
                }
                if ap.iter().any(|&p| p > 1.0 + 1e-12) || sat > 1.0 + 1e-12 {
                    continue;
                }
                let mut plan = FramePlan::zeros(grid, 2, [1, 1, 1]);
                plan.b = b.clone();
                plan.wbar_m.fill(0.0);
                if let Some((n, l)) = ds {
                    plan.p_d[[n, 0, fd, 0]] = pa * l as f64 / lv as f64;
                    plan.wbar_d.fill(0.0);
                    plan.wbar_d[[n, 0]] = 1.0;
                }
                match ms {
                    Some((n, l)) if n < 2 => {
                        plan.p_m[[n, 0, fm, 0]] = pa * l as f64 / lv as f64;
                        plan.wbar_m[[n, 0]] = 1.0;
                    }
                    Some((_, l)) => plan.sp_m[[0, fm, 0]] = ps * l as f64 / lv as f64,
                    None => {}
                }
                plan.sp_s[[0, fs, 0]] = ps * ls as f64 / lv as f64;
                plan.sync_indicators();
                let state = plan.expand(grid).ok()?;
                let q0 = QueueState::zeros(2, 1, 1);
                let actual = inst.scenario.realization(RealizationKind::Actual);
                let ev = evaluate_cycle(&state, &inst.channels[0].actual, actual, &q0, grid, &inst.fb, 0).ok()?;
                pending.push((oracle_score(&ev, grid), plan));
            }
        }
    }
    // audit in order of score; the first clean plan is the optimum
    pending.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (s, plan) in &pending {
        if score_plan(inst, plan).is_some() {
            best = Some(*s);
            break;
        }
    }
    best
}

fn small_oracle() -> Verdict {
    let start = Instant::now();
    let (mut ok, mut worst, mut lines) = (true, 0.0f64, Vec::new());
    for seed in 1..=ORACLE_INSTANCES {
        let inst = tiny_instance(seed)?;
        let r = run_policy(Policy::Piawro, &inst, &Default::default()).map_err(|e| e.to_string())?;
        let Some(ours) = score_plan(&inst, &r.plans[0]) else {
            ok = false;
            lines.push(format!("seed {seed}: PIAwRO plan fails the audit"));
            continue;
        };
        let Some(bf) = brute_force(&inst) else {
            ok = false;
            lines.push(format!("seed {seed}: no feasible enumerated plan"));
            continue;
        };
        let ratio = if bf > 0.0 { ours / bf } else if ours <= 0.0 { 1.0 } else { f64::INFINITY };
        worst = worst.max(ratio);
        if ours > ORACLE_RATIO * bf + 1e-9 {
            ok = false;
            lines.push(format!("seed {seed}: {ours:.4e} vs {bf:.4e}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("worst PIAwRO/enumeration ratio {worst:.4} over {ORACLE_INSTANCES} instances, {secs:.0} s");
    Ok((ok && secs < ORACLE_SECONDS, if lines.is_empty() { detail } else { format!("{detail}; {}", lines.join("; ")) }))
}

// 6 -------------------------------------------------------------------------

fn ordering_sweep() -> Result<Vec<RunRow>, String> {
    let mut cfg = ExperimentConfig::desk();
    cfg.sweep = Some("ap_max_dbm:30,34,38".parse().map_err(|e: istn_core::Error| e.to_string())?);
    Ok(run_experiment(&cfg).map_err(|e| e.to_string())?.runs)
}

fn policy_ordering(rows: &[RunRow]) -> Verdict {
    let mut ok = true;
    let mut lines = Vec::new();
    for c in ordering(rows, &Policy::ALL, TIE_TOL) {
        ok &= c.pairs == 60 && c.fraction() >= ORDER_FRACTION;
        lines.push(format!("{}<={} {}/{}", c.better, c.worse, c.agree, c.pairs));
    }
    for (v, g) in reoptimization_gain(rows) {
        ok &= g > 0.0;
        lines.push(format!("gain@{}dBm {:.0} bit", v.unwrap_or(f64::NAN), g));
    }
    Ok((ok, lines.join(", ")))
}

// 7 -------------------------------------------------------------------------

fn xi_trend() -> Verdict {
    let mut cfg = ExperimentConfig::desk();
    cfg.scenario.dt_error = DtErrorParams::exact();
    cfg.policies = vec![Policy::Pia, Policy::Piawro];
    cfg.sweep = Some("xi:0.2,0.5,0.8,1.0".parse().map_err(|e: istn_core::Error| e.to_string())?);
    let rows = run_experiment(&cfg).map_err(|e| e.to_string())?.runs;
    let gains = reoptimization_gain(&rows);
    let means = policy_means(&rows, Policy::Pia);
    let scale = means.iter().map(|m| m.1).fold(0.0, f64::max);
    let mut ok = gains.len() == 4 && rows.iter().all(|r| r.ok);
    for w in gains.windows(2) {
        ok &= w[1].1 <= w[0].1 + GAIN_TOL * scale;
    }
    let last = gains.last().map_or(f64::NAN, |g| g.1);
    ok &= last.abs() <= GAIN_TOL * scale;
    let shown: Vec<String> = gains.iter().map(|(v, g)| format!("xi {}: {:.0}", v.unwrap_or(f64::NAN), g)).collect();
    Ok((ok, format!("gain [bit] {}", shown.join(", "))))
}

// 8 -------------------------------------------------------------------------

fn scalar_queue(q0: f64, arrivals: &[f64], rates: &[f64], per_tf: usize, dur: f64) -> Vec<f64> {
    let mut q = q0;
    let mut out = Vec::with_capacity(rates.len());
    for (ts, r) in rates.iter().enumerate() {
        let a = if ts % per_tf == 0 { arrivals[ts / per_tf] } else { 0.0 };
        q = (q + a - dur * (r / std::f64::consts::LN_2)).max(0.0);
        out.push(q);
    }
    out
}

// idle slots are common, so a third of the rates are zero
fn draw_rate(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.3) {
        0.0
    } else {
        rng.random_range(0.0..2e7)
    }
}

fn model_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid = RbGrid::build(3000.0, NumerologyParams::default(), 3, 2, 6).map_err(|e| e.to_string())?;
    let (n_ap, kd, km, ks) = (3, 2, 3, 2);
    let (tsm, tss) = (grid.ts_per_cycle(Service::Ms), grid.ts_per_cycle(Service::Ss));
    let (nm, ns) = (grid.ts_per_tf(Service::Ms), grid.ts_per_tf(Service::Ss));
    let (dm, dss) = (grid.ts_duration_s(Service::Ms), grid.ts_duration_s(Service::Ss));
    let n_tf = grid.n_tf;

    let mut queue_mismatch = 0usize;
    for _ in 0..50 {
        let init = QueueState {
            tn: Array2::from_shape_fn((n_ap, km), |_| rng.random_range(0.0..5e4)),
            sat_m: Array1::from_shape_fn(km, |_| rng.random_range(0.0..5e4)),
            sat_s: Array1::from_shape_fn(ks, |_| rng.random_range(0.0..5e4)),
        };
        let arrivals = RoutedArrivals {
            ds: Array3::zeros((n_ap, kd, grid.sf_per_cycle())),
            ms_ap: Array3::from_shape_fn((n_ap, km, n_tf), |_| rng.random_range(0.0..1e5)),
            ms_sat: Array2::from_shape_fn((km, n_tf), |_| rng.random_range(0.0..1e5)),
            ss: Array2::from_shape_fn((ks, n_tf), |_| rng.random_range(0.0..1e5)),
        };
        let rates = RateTrace {
            ds: Array3::zeros((n_ap, kd, grid.sf_per_cycle())),
            ms_ap: Array3::from_shape_fn((n_ap, km, tsm), |_| draw_rate(&mut rng)),
            ms_sat: Array2::from_shape_fn((km, tsm), |_| draw_rate(&mut rng)),
            ss: Array2::from_shape_fn((ks, tss), |_| draw_rate(&mut rng)),
            sinr_floor_misses: 0,
        };
        let trace = simulate_queues(&init, &arrivals, &rates, &grid);
        for n in 0..n_ap {
            for k in 0..km {
                let a: Vec<f64> = arrivals.ms_ap.slice(ndarray::s![n, k, ..]).to_vec();
                let r: Vec<f64> = rates.ms_ap.slice(ndarray::s![n, k, ..]).to_vec();
                let want = scalar_queue(init.tn[[n, k]], &a, &r, nm, dm);
                queue_mismatch += want.iter().zip(trace.tn.slice(ndarray::s![n, k, ..])).filter(|(a, b)| a != b).count();
            }
        }
        for k in 0..km {
            let want = scalar_queue(init.sat_m[k], &arrivals.ms_sat.row(k).to_vec(), &rates.ms_sat.row(k).to_vec(), nm, dm);
            queue_mismatch += want.iter().zip(trace.sat_m.row(k)).filter(|(a, b)| a != b).count();
        }
        for k in 0..ks {
            let want = scalar_queue(init.sat_s[k], &arrivals.ss.row(k).to_vec(), &rates.ss.row(k).to_vec(), ns, dss);
            queue_mismatch += want.iter().zip(trace.sat_s.row(k)).filter(|(a, b)| a != b).count();
        }
    }

    let mut worst_routing = 0.0f64;
    let horizon_tf = grid.n_tf * grid.n_cy;
    let horizon_sf = grid.sf_per_cycle() * grid.n_cy;
    for _ in 0..200 {
        let simplex = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
            let mut a = Array2::from_shape_fn((rows, cols), |_| -rng.random_range(1e-9f64..1.0).ln());
            for mut col in a.columns_mut() {
                let s = col.sum();
                col /= s;
            }
            a
        };
        let splits = Splits {
            omega_cn: Array1::from_shape_fn(km, |_| rng.random_range(0.0..=1.0)),
            omega_tn_d: simplex(&mut rng, n_ap, kd),
            omega_tn_m: simplex(&mut rng, n_ap, km),
        };
        let real = Realization {
            kind: RealizationKind::Actual,
            ds: Array2::from_shape_fn((kd, horizon_sf), |_| rng.random_range(0.0..4096.0)),
            ms: Array2::from_shape_fn((km, horizon_tf), |_| rng.random_range(0.0..4e5)),
            ss: Array2::from_shape_fn((ks, horizon_tf), |_| rng.random_range(0.0..4e5)),
        };
        for c in 0..grid.n_cy {
            let r = route_arrivals(&splits, &real, &grid, c).map_err(|e| e.to_string())?;
            for k in 0..kd {
                for sf in 0..grid.sf_per_cycle() {
                    let total: f64 = (0..n_ap).map(|n| r.ds[[n, k, sf]]).sum();
                    worst_routing = worst_routing.max(rel_gap(total, real.ds[[k, c * grid.sf_per_cycle() + sf]]));
                }
            }
            for k in 0..km {
                for t in 0..n_tf {
                    let total: f64 = (0..n_ap).map(|n| r.ms_ap[[n, k, t]]).sum::<f64>() + r.ms_sat[[k, t]];
                    worst_routing = worst_routing.max(rel_gap(total, real.ms[[k, c * n_tf + t]]));
                }
            }
            for k in 0..ks {
                for t in 0..n_tf {
                    worst_routing = worst_routing.max(rel_gap(r.ss[[k, t]], real.ss[[k, c * n_tf + t]]));
                }
            }
        }
    }

    // 20·log10(d/km) + 20·log10(f/GHz) + 92.4478 (= 20·log10(4π·10¹²/c))
    let hand = [(1_000.0, 3.4, 103.0774), (500e3, 3.4, 157.0568), (100.0, 2.0, 78.4684), (35_786e3, 12.0, 205.1057)];
    let worst_fspl = hand.iter().map(|&(d, f, want)| (fspl_db(d, f) - want).abs()).fold(0.0, f64::max);

    Ok((
        queue_mismatch == 0 && worst_routing <= ROUTING_TOL && worst_fspl <= FSPL_TOL_DB,
        format!(
            "{queue_mismatch} queue mismatches, worst routing gap {worst_routing:.1e}, worst FSPL error {worst_fspl:.4} dB"
        ),
    ))
}

// 9 -------------------------------------------------------------------------

fn determinism() -> Verdict {
    let mut cfg = ExperimentConfig::desk();
    cfg.grid.n_cy = 1;
    cfg.seeds = vec![4, 9];
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    let mut bytes = Vec::new();
    for d in &dirs {
        let res = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let paths = res.write(d.path()).map_err(|e| e.to_string())?;
        bytes.push(std::fs::read(&paths[0]).map_err(|e| e.to_string())?);
    }
    Ok((bytes[0] == bytes[1] && !bytes[0].is_empty(), format!("runs.csv {} / {} bytes", bytes[0].len(), bytes[1].len())))
}

// ---------------------------------------------------------------------------

fn report(id: u8, name: &str, v: Verdict, start: Instant) -> bool {
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = v.unwrap_or_else(|e| (false, format!("error: {e}")));
    println!("[{}] {id}. {name}: {detail} ({secs:.1} s)", if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() -> ExitCode {
    let only: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |id: u8| only.is_empty() || only.contains(&id);
    let mut all = true;

    let t = Instant::now();
    if want(1) {
        all &= report(1, "surrogate bounds", surrogate_bounds(), t);
    }
    let t = Instant::now();
    if want(2) {
        all &= report(2, "phase-1 monotone convergence", phase1_monotone(), t);
    }
    let t = Instant::now();
    let sweep = if want(3) || want(4) || want(6) { Some(ordering_sweep()) } else { None };
    let sweep_secs = t.elapsed();
    let rows = |s: &Option<Result<Vec<RunRow>, String>>| s.as_ref().unwrap().clone();
    if want(3) {
        let t = Instant::now();
        all &= report(3, "warm-started calibration", rows(&sweep).and_then(|r| warm_start(&r)), t);
    }
    if want(4) {
        let t = Instant::now() - sweep_secs;
        all &= report(4, "feasibility audit", rows(&sweep).and_then(|r| audit_all(&r)), t);
    }
    if want(5) {
        let t = Instant::now();
        all &= report(5, "small-instance oracle", small_oracle(), t);
    }
    if want(6) {
        let t = Instant::now() - sweep_secs;
        all &= report(6, "policy ordering", rows(&sweep).and_then(|r| policy_ordering(&r)), t);
    }
    if want(7) {
        let t = Instant::now();
        all &= report(7, "re-optimisation gain vs xi", xi_trend(), t);
    }
    if want(8) {
        let t = Instant::now();
        all &= report(8, "model evaluator oracles", model_oracles(), t);
    }
    if want(9) {
        let t = Instant::now();
        all &= report(9, "determinism", determinism(), t);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
