use crate::{Error, Result};

/// Space-mean speed (km/h) for a regional accumulation of `n` vehicles.
///
/// The exponential branch decays as `exp(-29 (n/1000) / 600)` so that it
/// meets the linear branch at 36 000 vehicles; the linear branch is clamped
/// at zero before its nominal end at 60 000.
pub fn mfd_speed(n: f64) -> Result<f64> {
    if !(n >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "accumulation must be nonnegative, got {n}"
        )));
    }
    let k = n / 1000.0;
    Ok(if k <= 36.0 {
        36.0 * (-29.0 * k / 600.0).exp()
    } else if k <= 60.0 {
        (6.31 - 0.28 * (k - 36.0)).max(0.0)
    } else {
        0.0
    })
}
