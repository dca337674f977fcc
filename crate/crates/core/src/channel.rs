//! Paired predicted/actual channel synthesis with a hybrid Rician model.
//!
//! The NLoS part mixes a deterministic, map-derived term h̄ (known to the
//! digital twin) with an unmodeled CN(0,1) term δ:
//! h_nlos = √ξ h̄ + √(1−ξ) δ. Predicted and actual channels draw δ
//! independently and share everything else.

use ndarray::{Array3, Array4};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rb_grid::{RbGrid, Service};
use crate::rng::{stream_key, substream, unit_from_key};
use crate::scenario::{blockage_query, propagate_orbit, Point, Scenario};
use crate::units::{db_to_lin, dbm_to_watt, SPEED_OF_LIGHT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub carrier_ghz: f64,
    /// Rician K-factor of terrestrial LoS links.
    pub k_factor_db: f64,
    /// Rician K-factor of satellite LoS links.
    pub sat_k_factor_db: f64,
    pub xi: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub ap_gain_dbi: f64,
    pub sat_gain_dbi: f64,
    pub ue_gain_dbi: f64,
    pub tn_nlos_excess_db: f64,
    pub sat_nlos_excess_db: f64,
    /// Length of the near-ground part of a satellite path used for the
    /// reflector census.
    pub sat_local_path_m: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_ghz: 3.4,
            k_factor_db: 9.0,
            sat_k_factor_db: 10.0,
            xi: 0.5,
            noise_psd_dbm_hz: -174.0,
            noise_figure_db: 7.0,
            ap_gain_dbi: 8.0,
            sat_gain_dbi: 30.0,
            ue_gain_dbi: 0.0,
            tn_nlos_excess_db: 20.0,
            sat_nlos_excess_db: 10.0,
            sat_local_path_m: 200.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(Error::InvalidParameter(format!("xi must lie in [0, 1], got {}", self.xi)));
        }
        if !(self.carrier_ghz > 0.0) {
            return Err(Error::InvalidParameter("carrier frequency must be positive".into()));
        }
        if !(self.tn_nlos_excess_db >= 0.0 && self.sat_nlos_excess_db >= 0.0) {
            return Err(Error::InvalidParameter("NLoS excess losses must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkType {
    Terrestrial,
    Satellite,
}

pub fn fspl_db(distance_m: f64, carrier_ghz: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * distance_m * carrier_ghz * 1e9 / SPEED_OF_LIGHT).log10()
}

/// Path loss as a linear power ratio (≥ 1 for distances beyond a wavelength):
/// FSPL times a flat excess loss for blocked links.
pub fn path_loss(link: LinkType, distance_m: f64, params: &ChannelParams, los: bool) -> Result<f64> {
    if !(distance_m > 0.0) || !distance_m.is_finite() {
        return Err(Error::InvalidParameter(format!("distance must be positive, got {distance_m}")));
    }
    let excess = match (los, link) {
        (true, _) => 0.0,
        (false, LinkType::Terrestrial) => params.tn_nlos_excess_db,
        (false, LinkType::Satellite) => params.sat_nlos_excess_db,
    };
    Ok(db_to_lin(fspl_db(distance_m, params.carrier_ghz) + excess))
}

/// Per-SB noise power σ²_x in watts.
pub fn noise_power(params: &ChannelParams, bandwidth_hz: f64) -> f64 {
    dbm_to_watt(params.noise_psd_dbm_hz + params.noise_figure_db + 10.0 * bandwidth_hz.log10())
}

/// Deterministic large-scale description of one link at one TF.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkGeometry {
    pub distance_m: f64,
    /// Antenna gains over path loss, linear.
    pub power_gain: f64,
    pub k_factor: f64,
    pub reflectors: usize,
}

impl LinkGeometry {
    pub fn evaluate(
        link: LinkType,
        tx: &Point,
        rx: &Point,
        scenario: &Scenario,
        params: &ChannelParams,
    ) -> Result<Self> {
        let map = &scenario.geometry.buildings;
        let radius = scenario.params.reflector_radius_m;
        let d = dist(tx, rx);
        let (los, reflectors, gains_db, k_db) = match link {
            LinkType::Terrestrial => {
                let q = blockage_query(map, tx, rx, radius);
                (q.los, q.reflectors, params.ap_gain_dbi + params.ue_gain_dbi, params.k_factor_db)
            }
            LinkType::Satellite => {
                let los = blockage_query(map, tx, rx, 0.0).los;
                let s = params.sat_local_path_m / d;
                let near = [rx[0] + (tx[0] - rx[0]) * s, rx[1] + (tx[1] - rx[1]) * s, rx[2] + (tx[2] - rx[2]) * s];
                let reflectors = blockage_query(map, &near, rx, radius).reflectors;
                (los, reflectors, params.sat_gain_dbi + params.ue_gain_dbi, params.sat_k_factor_db)
            }
        };
        let pl = path_loss(link, d, params, los)?;
        Ok(Self {
            distance_m: d,
            power_gain: db_to_lin(gains_db) / pl,
            k_factor: if los { db_to_lin(k_db) } else { 0.0 },
            reflectors,
        })
    }
}

fn dist(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Identifies one (link, sub-band, TF) draw. `node` is the AP index, or
/// `None` for the satellite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkKey {
    pub seed: u64,
    pub node: Option<usize>,
    pub ue: usize,
    pub bwp: Service,
    pub f: usize,
    pub tf: usize,
}

impl LinkKey {
    fn indices(&self) -> [u64; 5] {
        [
            self.node.map_or(u64::MAX, |n| n as u64),
            self.ue as u64,
            self.bwp.index() as u64,
            self.f as u64,
            self.tf as u64,
        ]
    }
}

fn cn01<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Deterministic map-derived NLoS term: unit modulus with a hashed phase,
/// or zero when no reflector is near the link.
pub fn deterministic_nlos(key: &LinkKey, reflectors: usize) -> Complex64 {
    if reflectors == 0 {
        return Complex64::new(0.0, 0.0);
    }
    let idx = key.indices();
    let h = stream_key(key.seed, "rt-phase", &[idx[0], idx[1], idx[2], idx[3], reflectors as u64]);
    Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * unit_from_key(h))
}

/// Complex gains (predicted, actual) of one link on one SB.
///
/// `pred` and `act` carry each side's own large-scale geometry; with equal
/// geometries the two results differ only through the δ draws.
pub fn synth_link(
    params: &ChannelParams,
    pred: &LinkGeometry,
    act: &LinkGeometry,
    key: &LinkKey,
    sb_offset_hz: f64,
) -> (Complex64, Complex64) {
    let xi = params.xi;
    let idx = key.indices();
    let side = |g: &LinkGeometry, label: &str| -> Complex64 {
        let phase = -2.0 * std::f64::consts::PI * g.distance_m * (params.carrier_ghz * 1e9 + sb_offset_hz)
            / SPEED_OF_LIGHT;
        let h_los = Complex64::from_polar(1.0, phase.rem_euclid(2.0 * std::f64::consts::PI));
        let h_bar = deterministic_nlos(key, g.reflectors);
        let delta = if xi < 1.0 { cn01(&mut substream(key.seed, label, &idx)) } else { Complex64::new(0.0, 0.0) };
        let h_nlos = h_bar * xi.sqrt() + delta * (1.0 - xi).sqrt();
        let k = g.k_factor;
        let mix = if k.is_infinite() { h_los } else { h_los * (k / (k + 1.0)).sqrt() + h_nlos * (1.0 / (k + 1.0)).sqrt() };
        mix * g.power_gain.sqrt()
    };
    (side(pred, "channel-pred"), side(act, "channel-act"))
}

/// Power gains of one side (predicted or actual) over one cycle; the last
/// index is the TF within the cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    /// AP → DS UE on BWP d, `[n][k][f][t]`.
    pub ap_d: Array4<f64>,
    /// AP → MS UE on BWP m, `[n][k][f][t]`.
    pub ap_m: Array4<f64>,
    /// Satellite → MS UE on BWP m, `[k][f][t]`.
    pub sat_m: Array3<f64>,
    /// Satellite → SS UE on BWP s, `[k][f][t]`.
    pub sat_s: Array3<f64>,
    /// Per-SB noise power by service, watts.
    pub noise: [f64; 3],
}

impl Gains {
    pub fn noise(&self, x: Service) -> f64 {
        self.noise[x.index()]
    }

    pub fn ap(&self, x: Service) -> &Array4<f64> {
        match x {
            Service::Ds => &self.ap_d,
            Service::Ms => &self.ap_m,
            Service::Ss => panic!("APs do not transmit on BWP s"),
        }
    }

    pub fn sat(&self, x: Service) -> &Array3<f64> {
        match x {
            Service::Ms => &self.sat_m,
            Service::Ss => &self.sat_s,
            Service::Ds => panic!("the satellite does not transmit on BWP d"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Predicted,
    Actual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    pub cycle: usize,
    pub predicted: Gains,
    pub actual: Gains,
}

impl ChannelSet {
    pub fn side(&self, side: Side) -> &Gains {
        match side {
            Side::Predicted => &self.predicted,
            Side::Actual => &self.actual,
        }
    }

    /// Synthesizes both sides for every link, SB and TF of cycle `cycle`.
    pub fn generate(params: &ChannelParams, scenario: &Scenario, grid: &RbGrid, cycle: usize) -> Result<Self> {
        params.validate()?;
        let geo = &scenario.geometry;
        let (n_ap, n_tf) = (scenario.n_ap(), grid.n_tf);
        let counts = scenario.params.counts();
        let f = |x: Service| grid.sb_count(x);
        let noise = Service::ALL.map(|x| noise_power(params, grid.sb_width_hz(x)));
        let mk = || Gains {
            ap_d: Array4::zeros((n_ap, counts[0], f(Service::Ds), n_tf)),
            ap_m: Array4::zeros((n_ap, counts[1], f(Service::Ms), n_tf)),
            sat_m: Array3::zeros((counts[1], f(Service::Ms), n_tf)),
            sat_s: Array3::zeros((counts[2], f(Service::Ss), n_tf)),
            noise,
        };
        let (mut pred, mut act) = (mk(), mk());
        for t in 0..n_tf {
            let tf = cycle * n_tf + t;
            let sat = propagate_orbit(&geo.orbit, tf);
            for (x, bwps) in [
                (Service::Ds, &[Service::Ds][..]),
                (Service::Ms, &[Service::Ms][..]),
                (Service::Ss, &[][..]),
            ] {
                for k in 0..counts[x.index()] {
                    let ue = geo.ue_index(x, k);
                    let (up, ua) = (geo.ue_predicted[ue][tf], geo.ue_actual[ue][tf]);
                    for n in 0..n_ap {
                        let ap = geo.ap_positions[n];
                        let gp = LinkGeometry::evaluate(LinkType::Terrestrial, &ap, &up, scenario, params)?;
                        let ga = LinkGeometry::evaluate(LinkType::Terrestrial, &ap, &ua, scenario, params)?;
                        for &bwp in bwps {
                            let w = grid.sb_width_hz(bwp);
                            for fi in 0..f(bwp) {
                                let key = LinkKey { seed: scenario.seed, node: Some(n), ue, bwp, f: fi, tf };
                                let (hp, ha) = synth_link(params, &gp, &ga, &key, (fi as f64 + 0.5) * w);
                                let (dp, da) = match bwp {
                                    Service::Ds => (&mut pred.ap_d, &mut act.ap_d),
                                    _ => (&mut pred.ap_m, &mut act.ap_m),
                                };
                                dp[[n, k, fi, t]] = hp.norm_sqr();
                                da[[n, k, fi, t]] = ha.norm_sqr();
                            }
                        }
                    }
                    if x == Service::Ds {
                        continue;
                    }
                    let gp = LinkGeometry::evaluate(LinkType::Satellite, &sat, &up, scenario, params)?;
                    let ga = LinkGeometry::evaluate(LinkType::Satellite, &sat, &ua, scenario, params)?;
                    let w = grid.sb_width_hz(x);
                    for fi in 0..f(x) {
                        let key = LinkKey { seed: scenario.seed, node: None, ue, bwp: x, f: fi, tf };
                        let (hp, ha) = synth_link(params, &gp, &ga, &key, (fi as f64 + 0.5) * w);
                        let (dp, da) = match x {
                            Service::Ms => (&mut pred.sat_m, &mut act.sat_m),
                            _ => (&mut pred.sat_s, &mut act.sat_s),
                        };
                        dp[[k, fi, t]] = hp.norm_sqr();
                        da[[k, fi, t]] = ha.norm_sqr();
                    }
                }
            }
        }
        Ok(Self { cycle, predicted: pred, actual: act })
    }
}
