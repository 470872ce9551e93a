use super::PidGains;
use crate::error::{Error, Result};

/// Discrete PID signal on a uniformly sampled history whose last entry is
/// the current value.
///
/// The derivative is a backward difference (zero for a single sample). The
/// integral is the trapezoid rule over the trailing `tau_i` window, with the
/// window edge linearly interpolated and truncated at the start of the
/// history.
pub fn pid_signal(values: &[f64], dt: f64, gains: &PidGains) -> Result<f64> {
    let n = values.len();
    let Some(&now) = values.last() else {
        return Err(Error::InvalidParameter("empty history".into()));
    };
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("sample spacing {dt} must be > 0")));
    }

    let derivative = if n >= 2 { (now - values[n - 2]) / dt } else { 0.0 };

    let integral = if gains.k_i == 0.0 {
        0.0
    } else {
        let window = gains.tau_i.min((n - 1) as f64 * dt);
        let full = ((window / dt) + 1e-9).floor() as usize;
        let full = full.min(n - 1);
        let mut sum = 0.0;
        for i in (n - 1 - full)..(n - 1) {
            sum += 0.5 * (values[i] + values[i + 1]) * dt;
        }
        let frac = (window - full as f64 * dt) / dt;
        if frac > 1e-9 && full + 1 < n {
            let right = values[n - 1 - full];
            let left = values[n - 2 - full];
            let edge = right + frac * (left - right);
            sum += 0.5 * (edge + right) * frac * dt;
        }
        sum
    };

    Ok(gains.k_p * now + gains.k_d * derivative + gains.k_i * integral)
}
