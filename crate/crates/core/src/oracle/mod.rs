//! Reference values: the fractional Laplacian of a Gaussian in closed form,
//! direct quadrature of the singular integral, and manufactured right-hand sides.

mod hypergeom;
mod integral;
mod manufactured;
pub mod quadrature;

pub use hypergeom::{hyp1f1, Z_LIMIT};
pub use integral::{integral_frac_lap, normalization_constant, IntegralOptions};
pub use manufactured::{bump, manufactured_rhs_case1, reference_rhs_case1, restrict, ManufacturedRhs};

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// `(-Delta)^(alpha/2) e^{-|x|^2}` at `x`, dimension `x.len()`:
/// `2^alpha Gamma((d+alpha)/2) / Gamma(d/2) 1F1((d+alpha)/2; d/2; -|x|^2)`.
pub fn gaussian_frac_lap(x: &[f64], alpha: f64) -> Result<f64> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha > 2.0 {
        return Err(Error::OrderOutOfRange { value: alpha, at: Some(x.to_vec()) });
    }
    let d = x.len() as f64;
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let a = 0.5 * (d + alpha);
    let b = 0.5 * d;
    Ok(2f64.powf(alpha) * gamma(a) / gamma(b) * hyp1f1(a, b, -r2)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_origin() {
        assert!((gaussian_frac_lap(&[0.0], 2.0).unwrap() - 2.0).abs() < 1e-14);
        // d = 2, alpha = 1: 2 Gamma(3/2) / Gamma(1) = sqrt(pi)
        let v = gaussian_frac_lap(&[0.0, 0.0], 1.0).unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn classical_laplacian_limit() {
        let v = gaussian_frac_lap(&[1.0], 2.0).unwrap();
        assert!((v + 2.0 / 1f64.exp()).abs() < 1e-12);
        // -Delta e^{-|x|^2} = (2d - 4|x|^2) e^{-|x|^2}
        let x = [0.3, -0.7];
        let r2: f64 = 0.58;
        let exact = (4.0 - 4.0 * r2) * (-r2).exp();
        let mut prev = f64::INFINITY;
        for k in 2..=6 {
            let diff = (gaussian_frac_lap(&x, 2.0 - 10f64.powi(-k)).unwrap() - exact).abs();
            assert!(diff < prev);
            prev = diff;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn far_point_decays() {
        let v = gaussian_frac_lap(&[4.0, 4.0], 1.0).unwrap();
        assert!(v.is_finite() && v < 0.0 && v.abs() < 1e-2);
    }
}
