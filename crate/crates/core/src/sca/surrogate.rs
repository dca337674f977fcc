//! Smooth ℓ0 proxy and the first-order bounds used to convexify the
//! rate, SINR and RB-count constraints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smoothed ℓ0 indicator, 1 − e^{−x/ε}.
pub fn f_ap(x: f64, eps: f64) -> f64 {
    -(-x / eps).exp_m1()
}

/// Tangent of [`f_ap`] at `x0`, a global upper bound since f_ap is concave.
pub fn f_ap_lin(x: f64, x0: f64, eps: f64) -> f64 {
    let (slope, constant) = f_ap_lin_coeffs(x0, eps);
    slope * x + constant
}

/// `(slope, constant)` of [`f_ap_lin`] written as `slope·x + constant`.
pub fn f_ap_lin_coeffs(x0: f64, eps: f64) -> (f64, f64) {
    let slope = (-x0 / eps).exp() / eps;
    (slope, 1.0 - slope * (x0 + eps))
}

/// Tangent of e^u at `u0`; a global lower bound.
pub fn f_exp_lin(u: f64, u0: f64) -> f64 {
    u0.exp() * (u - u0 + 1.0)
}

/// Tangent of √x at `x0 > 0`; a global upper bound on x ≥ 0.
pub fn f_sqrt_lin(x: f64, x0: f64) -> Result<f64> {
    if !(x0 > 0.0) {
        return Err(Error::InvalidParameter(format!("sqrt expansion point must be positive, got {x0}")));
    }
    let s = x0.sqrt();
    Ok(0.5 * x / s + 0.5 * s)
}

/// Smoothing scale shared by every ℓ0 proxy in one solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surrogates {
    pub eps: f64,
}

impl Surrogates {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("smoothing scale must be positive, got {eps}")));
        }
        Ok(Self { eps })
    }

    pub fn ap(&self, x: f64) -> Result<f64> {
        if x < 0.0 {
            return Err(Error::InvalidParameter(format!("f_ap needs x ≥ 0, got {x}")));
        }
        Ok(f_ap(x, self.eps))
    }

    pub fn ap_lin(&self, x: f64, x0: f64) -> Result<f64> {
        if x < 0.0 || x0 < 0.0 {
            return Err(Error::InvalidParameter(format!("f_ap_lin needs x, x0 ≥ 0, got {x}, {x0}")));
        }
        Ok(f_ap_lin(x, x0, self.eps))
    }
}
