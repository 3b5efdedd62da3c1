use crate::error::{Error, Result};

/// Largest supported `|z|`.
pub const Z_LIMIT: f64 = 200.0;

/// Confluent hypergeometric function `1F1(a; b; z)`.
///
/// Negative arguments go through `1F1(a; b; z) = e^z 1F1(b - a; b; -z)` so
/// the summed series never alternates in `z`.
pub fn hyp1f1(a: f64, b: f64, z: f64) -> Result<f64> {
    if b <= 0.0 && b == b.floor() {
        return Err(Error::PoleInB(b));
    }
    if !z.is_finite() || z.abs() > Z_LIMIT {
        return Err(Error::RangeExceeded(z));
    }
    if z < 0.0 {
        Ok(z.exp() * kummer_series(b - a, b, -z))
    } else {
        Ok(kummer_series(a, b, z))
    }
}

/// `sum_k (a)_k / (b)_k z^k / k!` for `z >= 0`, with compensated summation.
pub(crate) fn kummer_series(a: f64, b: f64, z: f64) -> f64 {
    let mut term = 1.0;
    let (mut sum, mut comp) = (1.0f64, 0.0f64);
    for k in 1..20_000 {
        let kf = (k - 1) as f64;
        term *= (a + kf) / (b + kf) * z / k as f64;
        let t = sum + term;
        comp += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
        sum = t;
        if term == 0.0 {
            break;
        }
        // past the peak and below rounding
        if (k as f64) > z + a.abs() && term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum + comp
}
