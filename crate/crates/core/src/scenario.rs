//! Digital-twin world model: geometry, blockage map, traffic, and the
//! predicted-versus-actual realizations.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rb_grid::{RbGrid, Service, SF_PER_TF, TF_MS};
use crate::rng::substream;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const EARTH_GM: f64 = 3.986_004_418e14;

pub type Point = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitParams {
    pub altitude_m: f64,
    /// Tilt of the orbital plane in the local frame, measured from east.
    pub inclination_deg: f64,
    /// Orbital phase at TF 0; zero puts the satellite at the scene nadir.
    pub phase_deg: f64,
}

impl Default for OrbitParams {
    fn default() -> Self {
        Self { altitude_m: 500e3, inclination_deg: 53.0, phase_deg: 3.0 }
    }
}

impl OrbitParams {
    pub fn radius_m(&self) -> f64 {
        EARTH_RADIUS_M + self.altitude_m
    }

    pub fn speed_mps(&self) -> f64 {
        (EARTH_GM / self.radius_m()).sqrt()
    }

    pub fn angular_rate(&self) -> f64 {
        self.speed_mps() / self.radius_m()
    }
}

/// Satellite position at the start of TF `t` in the local scene frame
/// (origin on the ground, z up, Earth centre at (0, 0, -R_E)).
pub fn propagate_orbit(orbit: &OrbitParams, t: usize) -> Point {
    let r = orbit.radius_m();
    let theta = orbit.phase_deg.to_radians() + orbit.angular_rate() * t as f64 * TF_MS * 1e-3;
    let inc = orbit.inclination_deg.to_radians();
    let (s, c) = theta.sin_cos();
    [r * s * inc.cos(), r * s * inc.sin(), r * c - EARTH_RADIUS_M]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    pub fn distance_to(&self, p: &Point) -> f64 {
        (0..3)
            .map(|i| {
                let d = (self.min[i] - p[i]).max(p[i] - self.max[i]).max(0.0);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Whether the closed segment a–b passes through the open interior.
    pub fn blocks(&self, a: &Point, b: &Point) -> bool {
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for i in 0..3 {
            let d = b[i] - a[i];
            if d == 0.0 {
                if a[i] <= self.min[i] || a[i] >= self.max[i] {
                    return false;
                }
            } else {
                let (ta, tb) = ((self.min[i] - a[i]) / d, (self.max[i] - a[i]) / d);
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        t0 < t1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Blockage {
    pub los: bool,
    pub reflectors: usize,
}

pub fn blockage_query(map: &[Aabb], tx: &Point, rx: &Point, radius_m: f64) -> Blockage {
    let mid = [(tx[0] + rx[0]) / 2.0, (tx[1] + rx[1]) / 2.0, (tx[2] + rx[2]) / 2.0];
    Blockage {
        los: !map.iter().any(|b| b.blocks(tx, rx)),
        reflectors: map.iter().filter(|b| b.distance_to(&mid) <= radius_m).count(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalPrediction {
    /// The DT reports the configured Poisson mean for every epoch.
    Mean,
    /// The DT reports the realized draw.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtErrorParams {
    pub position_sigma_m: f64,
    pub arrivals: ArrivalPrediction,
}

impl Default for DtErrorParams {
    fn default() -> Self {
        Self { position_sigma_m: 1.0, arrivals: ArrivalPrediction::Mean }
    }
}

impl DtErrorParams {
    pub fn exact() -> Self {
        Self { position_sigma_m: 0.0, arrivals: ArrivalPrediction::Exact }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficParams {
    pub ds_packets_per_sf: f64,
    pub ms_packets_per_tf: f64,
    pub ss_packets_per_tf: f64,
    pub ds_packet_bytes: f64,
    pub ms_packet_bytes: f64,
    pub ss_packet_bytes: f64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        Self {
            ds_packets_per_sf: 0.5,
            ms_packets_per_tf: 0.05,
            ss_packets_per_tf: 0.05,
            ds_packet_bytes: 256.0,
            ms_packet_bytes: 50_000.0,
            ss_packet_bytes: 50_000.0,
        }
    }
}

impl TrafficParams {
    pub fn zero() -> Self {
        Self { ds_packets_per_sf: 0.0, ms_packets_per_tf: 0.0, ss_packets_per_tf: 0.0, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficModel {
    /// Mean packets per arrival epoch, per service.
    pub mean_packets: [f64; 3],
    pub packet_bits: [f64; 3],
}

impl TrafficModel {
    pub fn from_params(p: &TrafficParams) -> Result<Self> {
        let mean_packets = [p.ds_packets_per_sf, p.ms_packets_per_tf, p.ss_packets_per_tf];
        let packet_bits = [p.ds_packet_bytes * 8.0, p.ms_packet_bytes * 8.0, p.ss_packet_bytes * 8.0];
        if mean_packets.iter().chain(&packet_bits).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidScenario("traffic means and packet sizes must be non-negative".into()));
        }
        Ok(Self { mean_packets, packet_bits })
    }

    /// λ̄_x in bits per epoch.
    pub fn mean_bits(&self, x: Service) -> f64 {
        self.mean_packets[x.index()] * self.packet_bits[x.index()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealizationKind {
    Actual,
    Predicted,
}

/// Arrival traces in bits: DS per sub-frame, MS/SS per TF, over the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub kind: RealizationKind,
    pub ds: Array2<f64>,
    pub ms: Array2<f64>,
    pub ss: Array2<f64>,
}

impl Realization {
    pub fn get(&self, x: Service) -> &Array2<f64> {
        match x {
            Service::Ds => &self.ds,
            Service::Ms => &self.ms,
            Service::Ss => &self.ss,
        }
    }

    /// Same traces, different tag; used by the full-information policy.
    pub fn relabel(&self, kind: RealizationKind) -> Self {
        Self { kind, ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Horizon {
    pub n_tf: usize,
    pub n_sf_tn_dl: usize,
}

impl Horizon {
    pub fn of(grid: &RbGrid) -> Self {
        Self { n_tf: grid.n_tf * grid.n_cy, n_sf_tn_dl: grid.n_sf_tn_dl }
    }
}

/// Poisson packet counts times packet size. DS packets arrive only in
/// terrestrial DL sub-frames, the only ones in which they can be served.
pub fn sample_arrivals(traffic: &TrafficModel, counts: [usize; 3], seed: u64, horizon: Horizon) -> Realization {
    let epochs = [horizon.n_tf * SF_PER_TF, horizon.n_tf, horizon.n_tf];
    let draw = |x: Service| -> Array2<f64> {
        let i = x.index();
        let mut out = Array2::zeros((counts[i], epochs[i]));
        let mean = traffic.mean_packets[i];
        if mean <= 0.0 {
            return out;
        }
        let pois = Poisson::new(mean).expect("positive mean");
        for k in 0..counts[i] {
            let mut rng = substream(seed, "arrivals", &[i as u64, k as u64]);
            for e in 0..epochs[i] {
                let allowed = x != Service::Ds || e % SF_PER_TF < horizon.n_sf_tn_dl;
                let n: f64 = pois.sample(&mut rng);
                if allowed {
                    out[[k, e]] = n * traffic.packet_bits[i];
                }
            }
        }
        out
    };
    Realization {
        kind: RealizationKind::Actual,
        ds: draw(Service::Ds),
        ms: draw(Service::Ms),
        ss: draw(Service::Ss),
    }
}

/// DT view of one realization: arrivals per the configured prediction mode
/// and UE positions perturbed by isotropic Gaussian noise.
pub fn predict_realization(
    traffic: &TrafficModel,
    dt: &DtErrorParams,
    actual: &Realization,
    actual_tracks: &[Vec<Point>],
    seed: u64,
    n_sf_tn_dl: usize,
) -> Result<(Realization, Vec<Vec<Point>>)> {
    if !(dt.position_sigma_m >= 0.0) {
        return Err(Error::InvalidScenario("position sigma must be non-negative".into()));
    }
    let realization = match dt.arrivals {
        ArrivalPrediction::Exact => actual.relabel(RealizationKind::Predicted),
        ArrivalPrediction::Mean => {
            let fill = |x: Service, a: &Array2<f64>| {
                let mean = traffic.mean_bits(x);
                Array2::from_shape_fn(a.dim(), |(_, e)| {
                    if x == Service::Ds && e % SF_PER_TF >= n_sf_tn_dl {
                        0.0
                    } else {
                        mean
                    }
                })
            };
            Realization {
                kind: RealizationKind::Predicted,
                ds: fill(Service::Ds, &actual.ds),
                ms: fill(Service::Ms, &actual.ms),
                ss: fill(Service::Ss, &actual.ss),
            }
        }
    };
    let tracks = if dt.position_sigma_m == 0.0 {
        actual_tracks.to_vec()
    } else {
        let noise = Normal::new(0.0, dt.position_sigma_m).expect("finite sigma");
        actual_tracks
            .iter()
            .enumerate()
            .map(|(k, track)| {
                let mut rng = substream(seed, "dt-position", &[k as u64]);
                track
                    .iter()
                    .map(|p| [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng), p[2] + noise.sample(&mut rng)])
                    .collect()
            })
            .collect()
    };
    Ok((realization, tracks))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub n_ap: usize,
    pub k_ds: usize,
    pub k_ms: usize,
    pub k_ss: usize,
    pub area_x_m: f64,
    pub area_y_m: f64,
    pub ap_height_m: f64,
    pub ue_height_m: f64,
    pub ue_speed_mps: f64,
    pub n_buildings: usize,
    pub building_side_m: [f64; 2],
    pub building_height_m: [f64; 2],
    pub reflector_radius_m: f64,
    pub orbit: OrbitParams,
    pub traffic: TrafficParams,
    pub dt_error: DtErrorParams,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            n_ap: 6,
            k_ds: 4,
            k_ms: 5,
            k_ss: 3,
            area_x_m: 300.0,
            area_y_m: 200.0,
            ap_height_m: 10.0,
            ue_height_m: 1.5,
            ue_speed_mps: 1.4,
            n_buildings: 8,
            building_side_m: [15.0, 40.0],
            building_height_m: [8.0, 30.0],
            reflector_radius_m: 150.0,
            orbit: OrbitParams::default(),
            traffic: TrafficParams::default(),
            dt_error: DtErrorParams::default(),
        }
    }
}

impl ScenarioParams {
    pub fn counts(&self) -> [usize; 3] {
        [self.k_ds, self.k_ms, self.k_ss]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidScenario(m.into()));
        if self.n_ap == 0 {
            return bad("at least one AP is required");
        }
        if !(self.area_x_m > 0.0 && self.area_y_m > 0.0) {
            return bad("area must be positive");
        }
        if !(self.orbit.altitude_m > 0.0) {
            return bad("satellite altitude must be positive");
        }
        if !(self.ue_speed_mps >= 0.0 && self.reflector_radius_m >= 0.0) {
            return bad("speeds and radii must be non-negative");
        }
        if self.building_side_m[0] > self.building_side_m[1] || self.building_height_m[0] > self.building_height_m[1] {
            return bad("building size ranges must be ordered");
        }
        TrafficModel::from_params(&self.traffic)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldGeometry {
    pub ap_positions: Vec<Point>,
    /// Service class per UE; UEs are ordered DS, then MS, then SS.
    pub ue_classes: Vec<Service>,
    /// Actual UE position at the start of each TF, `[ue][tf]`.
    pub ue_actual: Vec<Vec<Point>>,
    /// DT-predicted UE position, `[ue][tf]`.
    pub ue_predicted: Vec<Vec<Point>>,
    pub orbit: OrbitParams,
    pub buildings: Vec<Aabb>,
}

impl WorldGeometry {
    /// Global UE index of the `local`-th UE of class `x`.
    pub fn ue_index(&self, x: Service, local: usize) -> usize {
        let offset = self.ue_classes.iter().take_while(|&&c| c < x).count();
        offset + local
    }

    pub fn class_count(&self, x: Service) -> usize {
        self.ue_classes.iter().filter(|&&c| c == x).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub params: ScenarioParams,
    pub geometry: WorldGeometry,
    pub traffic: TrafficModel,
    pub actual: Realization,
    pub predicted: Realization,
}

impl Scenario {
    pub fn generate(params: &ScenarioParams, grid: &RbGrid, seed: u64) -> Result<Self> {
        params.validate()?;
        let horizon = Horizon::of(grid);
        let traffic = TrafficModel::from_params(&params.traffic)?;
        let ap_positions = place_aps(params);
        let buildings = place_buildings(params, &ap_positions, seed);
        let ue_classes: Vec<Service> = Service::ALL
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, params.counts()[x.index()]))
            .collect();
        let ue_actual = (0..ue_classes.len())
            .map(|k| ue_track(params, &buildings, seed, k, horizon.n_tf))
            .collect::<Vec<_>>();
        let actual = sample_arrivals(&traffic, params.counts(), seed, horizon);
        let (predicted, ue_predicted) =
            predict_realization(&traffic, &params.dt_error, &actual, &ue_actual, seed, grid.n_sf_tn_dl)?;
        Ok(Self {
            seed,
            params: params.clone(),
            geometry: WorldGeometry {
                ap_positions,
                ue_classes,
                ue_actual,
                ue_predicted,
                orbit: params.orbit.clone(),
                buildings,
            },
            traffic,
            actual,
            predicted,
        })
    }

    pub fn n_ap(&self) -> usize {
        self.geometry.ap_positions.len()
    }

    pub fn count(&self, x: Service) -> usize {
        self.params.counts()[x.index()]
    }

    pub fn realization(&self, kind: RealizationKind) -> &Realization {
        match kind {
            RealizationKind::Actual => &self.actual,
            RealizationKind::Predicted => &self.predicted,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn place_aps(p: &ScenarioParams) -> Vec<Point> {
    let n = p.n_ap;
    let rows = ((n as f64 * p.area_y_m / p.area_x_m).sqrt().round() as usize).clamp(1, n);
    let cols = n.div_ceil(rows);
    (0..n)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            let in_row = if r == rows - 1 { n - cols * (rows - 1) } else { cols };
            [
                (c as f64 + 0.5) / in_row as f64 * p.area_x_m - p.area_x_m / 2.0,
                (r as f64 + 0.5) / rows as f64 * p.area_y_m - p.area_y_m / 2.0,
                p.ap_height_m,
            ]
        })
        .collect()
}

fn uniform_point<R: Rng>(rng: &mut R, p: &ScenarioParams, z: f64) -> Point {
    [
        rng.random_range(-p.area_x_m / 2.0..=p.area_x_m / 2.0),
        rng.random_range(-p.area_y_m / 2.0..=p.area_y_m / 2.0),
        z,
    ]
}

fn inside_footprint(b: &Aabb, q: &Point, margin: f64) -> bool {
    q[0] > b.min[0] - margin && q[0] < b.max[0] + margin && q[1] > b.min[1] - margin && q[1] < b.max[1] + margin
}

fn place_buildings(p: &ScenarioParams, aps: &[Point], seed: u64) -> Vec<Aabb> {
    let mut rng = substream(seed, "geometry", &[]);
    let mut out = Vec::with_capacity(p.n_buildings);
    let mut attempts = 0;
    while out.len() < p.n_buildings && attempts < 100 * (p.n_buildings + 1) {
        attempts += 1;
        let c = uniform_point(&mut rng, p, 0.0);
        let sx = rng.random_range(p.building_side_m[0]..=p.building_side_m[1]);
        let sy = rng.random_range(p.building_side_m[0]..=p.building_side_m[1]);
        let h = rng.random_range(p.building_height_m[0]..=p.building_height_m[1]);
        let b = Aabb { min: [c[0] - sx / 2.0, c[1] - sy / 2.0, 0.0], max: [c[0] + sx / 2.0, c[1] + sy / 2.0, h] };
        if aps.iter().all(|a| !inside_footprint(&b, a, 5.0)) {
            out.push(b);
        }
    }
    out
}

/// Random-waypoint track sampled at the start of each TF.
fn ue_track(p: &ScenarioParams, buildings: &[Aabb], seed: u64, k: usize, n_tf: usize) -> Vec<Point> {
    let mut rng = substream(seed, "mobility", &[k as u64]);
    let mut pos = uniform_point(&mut rng, p, p.ue_height_m);
    for _ in 0..100 {
        if buildings.iter().all(|b| !inside_footprint(b, &pos, 1.0)) {
            break;
        }
        pos = uniform_point(&mut rng, p, p.ue_height_m);
    }
    let mut target = uniform_point(&mut rng, p, p.ue_height_m);
    let step = p.ue_speed_mps * TF_MS * 1e-3;
    let mut track = Vec::with_capacity(n_tf);
    for _ in 0..n_tf {
        track.push(pos);
        let (dx, dy) = (target[0] - pos[0], target[1] - pos[1]);
        let dist = dx.hypot(dy);
        if dist <= step {
            pos = target;
            target = uniform_point(&mut rng, p, p.ue_height_m);
        } else {
            pos = [pos[0] + dx / dist * step, pos[1] + dy / dist * step, pos[2]];
        }
    }
    track
}
