//! Experiment configuration: one JSON document with unit-suffixed fields.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::algorithms::{Policy, PolicyOptions};
use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::model::SystemParams;
use crate::rb_grid::{NumerologyParams, RbGrid};
use crate::scenario::ScenarioParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub total_bw_khz: f64,
    pub numerology: NumerologyParams,
    pub n_tf: usize,
    pub n_cy: usize,
    /// Downlink sub-frames per TF on the terrestrial TDD carrier.
    pub n_sf_tn_dl: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { total_bw_khz: 15_000.0, numerology: NumerologyParams::default(), n_tf: 5, n_cy: 20, n_sf_tn_dl: 6 }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<RbGrid> {
        RbGrid::build(self.total_bw_khz, self.numerology, self.n_tf, self.n_cy, self.n_sf_tn_dl)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Correlation between predicted and actual small-scale fading.
    Xi,
    ApMaxDbm,
    SatMaxDbm,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 3] = [SweepAxis::Xi, SweepAxis::ApMaxDbm, SweepAxis::SatMaxDbm];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Xi => "xi",
            SweepAxis::ApMaxDbm => "ap_max_dbm",
            SweepAxis::SatMaxDbm => "sat_max_dbm",
        }
    }

    /// Current value of the axis in `cfg`.
    pub fn read(self, cfg: &ExperimentConfig) -> f64 {
        match self {
            SweepAxis::Xi => cfg.channel.xi,
            SweepAxis::ApMaxDbm => cfg.system.ap_max_dbm,
            SweepAxis::SatMaxDbm => cfg.system.sat_max_dbm,
        }
    }

    fn write(self, cfg: &mut ExperimentConfig, v: f64) {
        match self {
            SweepAxis::Xi => cfg.channel.xi = v,
            SweepAxis::ApMaxDbm => cfg.system.ap_max_dbm = v,
            SweepAxis::SatMaxDbm => cfg.system.sat_max_dbm = v,
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl FromStr for Sweep {
    type Err = Error;

    /// Parses `axis:v1,v2,...`, e.g. `xi:0.2,0.5,1`.
    fn from_str(s: &str) -> Result<Self> {
        let (axis, values) =
            s.split_once(':').ok_or_else(|| Error::Config(format!("sweep {s:?} is not of the form axis:v1,v2")))?;
        let axis = SweepAxis::ALL
            .into_iter()
            .find(|a| a.name() == axis.trim())
            .ok_or_else(|| Error::Config(format!("unknown sweep axis {axis:?}")))?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Config(format!("sweep value {v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Sweep { axis, values })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub grid: GridConfig,
    pub scenario: ScenarioParams,
    pub channel: ChannelParams,
    pub system: SystemParams,
    pub algorithm: PolicyOptions,
    /// Master seeds; each one fixes geometry, channels and traffic, shared
    /// by every policy and sweep value.
    pub seeds: Vec<u64>,
    pub policies: Vec<Policy>,
    pub sweep: Option<Sweep>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ExperimentConfig {
    /// Full-scale setup: 3.4 GHz, 15 MHz, 34/36 dBm, (4, 5, 3) UEs and
    /// six APs under a 500 km orbit, 20 cycles of five TFs.
    pub fn full() -> Self {
        Self {
            name: "full".into(),
            grid: GridConfig::default(),
            scenario: ScenarioParams::default(),
            channel: ChannelParams::default(),
            system: SystemParams::default(),
            algorithm: PolicyOptions::default(),
            seeds: vec![1],
            policies: Policy::ALL.to_vec(),
            sweep: None,
        }
    }

    /// A 5 MHz, two-cycle variant that runs a 20-seed comparison in
    /// minutes on one core.
    pub fn desk() -> Self {
        let mut c = Self::full();
        c.name = "desk".into();
        c.grid.total_bw_khz = 5_000.0;
        c.grid.n_cy = 2;
        c.seeds = (1..=20).collect();
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::Config(format!("unknown preset {name:?} (expected full or desk)"))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::Config("policy list is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        let mut p = self.policies.clone();
        p.sort();
        p.dedup();
        if p.len() != self.policies.len() {
            return Err(Error::Config("policy list has duplicates".into()));
        }
        let mut s = self.seeds.clone();
        s.sort();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(Error::Config("seed list has duplicates".into()));
        }
        self.grid.build()?;
        let a = &self.algorithm.sca;
        let positive = [a.eps_rel, a.delta_obj, a.penalty_sinr, a.penalty_deadline, a.penalty_cap];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("algorithm tolerances and penalties must be positive".into()));
        }
        if a.max_iter == 0 || a.max_iter_calibration == 0 {
            return Err(Error::Config("iteration caps must be at least 1".into()));
        }
        for v in self.points() {
            let cfg = self.at(v);
            cfg.system.validate()?;
            if !(0.0..=1.0).contains(&cfg.channel.xi) {
                return Err(Error::Config(format!("xi must lie in [0, 1], got {}", cfg.channel.xi)));
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(Error::Config("sweep has no values".into()));
            }
            if sw.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("sweep values must be finite".into()));
            }
        }
        Ok(())
    }

    /// Sweep values in order, or a single `None` without a sweep.
    pub fn points(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(s) => s.values.iter().copied().map(Some).collect(),
            None => vec![None],
        }
    }

    /// This config with the sweep axis set to `value`.
    pub fn at(&self, value: Option<f64>) -> ExperimentConfig {
        let mut c = self.clone();
        if let (Some(s), Some(v)) = (&self.sweep, value) {
            s.axis.write(&mut c, v);
        }
        c
    }

    /// Value reported for a run: the sweep value, or the axis' base value.
    pub fn reported(&self, value: Option<f64>) -> f64 {
        match (&self.sweep, value) {
            (Some(_), Some(v)) => v,
            (Some(s), None) => s.axis.read(self),
            (None, _) => f64::NAN,
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serialises"));
        hex::encode(&digest[..8])
    }
}
