//! Transmission and queueing model: SINRs, rates, traffic routing, queue
//! recursions, the congestion objective and the constraint audit.

mod audit;
mod eval;
mod state;

pub use audit::{audit, AuditInputs, AuditReport, ConstraintCheck, HARD_CONSTRAINTS};
pub use eval::{
    evaluate_cycle, objective, queue_step, rate_ds, rate_m_ap, rate_m_sat, rate_s, route_arrivals, simulate_queues,
    sinr_d, sinr_m_ap, sinr_m_sat, snr_s, CycleEvaluation, QueueState, QueueTrace, RateTrace, RoutedArrivals,
};
pub use state::{AllocationState, FramePlan, Splits};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::rb_grid::{RbGrid, Service};
use crate::units::{db_to_lin, dbm_to_watt};

/// Budgets, thresholds and caps shared by the model and the solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    pub ap_max_dbm: f64,
    pub sat_max_dbm: f64,
    pub gamma0_db: f64,
    pub p_error: f64,
    pub queue_cap_bytes: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self { ap_max_dbm: 34.0, sat_max_dbm: 36.0, gamma0_db: 5.0, p_error: 1e-5, queue_cap_bytes: 20e6 }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ap_max_dbm.is_finite() && self.sat_max_dbm.is_finite()) {
            return Err(Error::InvalidParameter("power budgets must be finite".into()));
        }
        if self.gamma0_db < 5.0 {
            return Err(Error::InvalidParameter(format!("gamma0 must be at least 5 dB, got {}", self.gamma0_db)));
        }
        if !(self.p_error > 0.0 && self.p_error < 0.5) {
            return Err(Error::InvalidParameter("p_error must lie in (0, 0.5)".into()));
        }
        if !(self.queue_cap_bytes > 0.0) {
            return Err(Error::InvalidParameter("queue cap must be positive".into()));
        }
        Ok(())
    }

    pub fn p_max_ap(&self) -> f64 {
        dbm_to_watt(self.ap_max_dbm)
    }

    pub fn p_max_sat(&self) -> f64 {
        dbm_to_watt(self.sat_max_dbm)
    }

    pub fn gamma0(&self) -> f64 {
        db_to_lin(self.gamma0_db)
    }

    pub fn queue_cap_bits(&self) -> f64 {
        self.queue_cap_bytes * 8.0
    }
}

/// Short-packet (finite-blocklength) rate constants for BWP d, with the
/// channel dispersion V taken as 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiniteBlocklength {
    pub p_error: f64,
    pub gamma0: f64,
    pub tau_d: f64,
    pub w_d: f64,
    pub chi: f64,
}

/// Q⁻¹(p) = √2 erfc⁻¹(2p).
pub fn q_inv(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

impl FiniteBlocklength {
    pub fn new(grid: &RbGrid, params: &SystemParams) -> Self {
        let w_d = grid.sb_width_hz(Service::Ds);
        let tau_d = grid.ts_duration_s(Service::Ds);
        let chi = w_d.sqrt() * q_inv(params.p_error) / tau_d.sqrt();
        Self { p_error: params.p_error, gamma0: params.gamma0(), tau_d, w_d, chi }
    }
}
