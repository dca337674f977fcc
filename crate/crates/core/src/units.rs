//! Decibel and unit conversions.

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

pub fn dbm_to_watt(dbm: f64) -> f64 {
    db_to_lin(dbm - 30.0)
}

pub fn watt_to_dbm(w: f64) -> f64 {
    lin_to_db(w) + 30.0
}

/// Nats to bits.
pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn round_trips() {
        assert_relative_eq!(dbm_to_watt(30.0), 1.0);
        assert_relative_eq!(watt_to_dbm(dbm_to_watt(34.0)), 34.0, epsilon = 1e-12);
        assert_relative_eq!(lin_to_db(2.0), 3.0103, epsilon = 1e-4);
        assert_relative_eq!(nats_to_bits(std::f64::consts::LN_2), 1.0);
    }
}
