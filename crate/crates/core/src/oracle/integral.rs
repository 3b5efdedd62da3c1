//! Direct quadrature of the singular-integral definition
//! `(-Delta)^(alpha/2) u(x) = c/2 int (2u(x) - u(x+y) - u(x-y)) / |y|^(d+alpha) dy`.

use std::f64::consts::PI;
use std::sync::Arc;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::oracle::quadrature::integrate;

/// `c_{d,alpha} = 2^(alpha-1) alpha Gamma((alpha+d)/2) / (pi^(d/2) Gamma(1-alpha/2))`.
pub fn normalization_constant(d: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::OrderOutOfRange { value: alpha, at: None });
    }
    if alpha >= 2.0 {
        return Err(Error::SingularConstant(alpha));
    }
    let df = d as f64;
    let log = (alpha - 1.0) * 2f64.ln() + alpha.ln() + ln_gamma(0.5 * (alpha + df))
        - 0.5 * df * PI.ln()
        - ln_gamma(1.0 - 0.5 * alpha);
    Ok(log.exp())
}

/// Surface measure of the unit sphere in `R^d`.
fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    }
}

#[derive(Clone)]
pub struct IntegralOptions {
    /// Radius beyond which the integrand is handled by the far-field estimate.
    pub cutoff: f64,
    pub tol: f64,
    /// Limit of `u` at infinity.
    pub limit: f64,
    /// Bound on `|u(y) - limit|` over `|y| >= r`.
    pub sup_beyond: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl IntegralOptions {
    /// Options for `u(x) = e^{-|x|^2}`.
    pub fn gaussian() -> Self {
        Self { cutoff: 8.0, tol: 1e-8, limit: 0.0, sup_beyond: Arc::new(|r: f64| (-r * r).exp()) }
    }
}

const INNER: f64 = 1e-2;

/// Singular-integral value at `x` (dimension `x.len()` in 1..=3).
pub fn integral_frac_lap(u: &dyn Fn(&[f64]) -> f64, x: &[f64], alpha: f64, opts: &IntegralOptions) -> Result<f64> {
    let d = x.len();
    if !(1..=3).contains(&d) {
        return Err(Error::InvalidDim(format!("dimension {d} not in 1..=3")));
    }
    let c = normalization_constant(d, alpha)?;
    let ux = u(x);
    let area = sphere_area(d);
    let r = opts.cutoff;
    let norm_x = x.iter().map(|v| v * v).sum::<f64>().sqrt();

    // unknown part of the far field: |int_{|y|>R} (u(x+y) + u(x-y) - 2 limit)| / |y|^(d+alpha)
    let tail_bound = 0.5 * c * 2.0 * area * (opts.sup_beyond)((r - norm_x).max(0.0)) * r.powf(-alpha) / alpha;
    if tail_bound > 0.1 * opts.tol {
        return Err(Error::TailTooLarge { bound: tail_bound, tol: opts.tol });
    }
    let tail_known = 2.0 * (ux - opts.limit) * area * r.powf(-alpha) / alpha;

    let inner_tol = 1e-3 * opts.tol / c.max(1e-300);
    let theta = |rho: f64| -> Result<f64> { spherical_mean(u, x, ux, rho, inner_tol) };

    // Theta(rho) = C2 rho^2 + C4 rho^4 + O(rho^6) near the origin
    let t1 = theta(INNER)?;
    let t2 = theta(0.5 * INNER)?;
    let c4 = (t1 - 4.0 * t2) / (INNER.powi(4) * (1.0 - 0.25));
    let c2 = (t1 - c4 * INNER.powi(4)) / (INNER * INNER);
    let near = c2 * INNER.powf(2.0 - alpha) / (2.0 - alpha) + c4 * INNER.powf(4.0 - alpha) / (4.0 - alpha);

    let mut failure = None;
    let mid = integrate(
        |s| {
            let rho = s.exp();
            match theta(rho) {
                Ok(v) => v * rho.powf(-alpha),
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        INNER.ln(),
        r.ln(),
        0.1 * opts.tol / c,
        4000,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(0.5 * c * (near + mid + tail_known))
}

/// `int_{S^{d-1}} (2u(x) - u(x + rho w) - u(x - rho w)) dw`.
fn spherical_mean(u: &dyn Fn(&[f64]) -> f64, x: &[f64], ux: f64, rho: f64, tol: f64) -> Result<f64> {
    let d = x.len();
    let mut p = vec![0.0; d];
    let mut q = vec![0.0; d];
    let mut g = |dir: &[f64]| {
        for i in 0..d {
            p[i] = x[i] + rho * dir[i];
            q[i] = x[i] - rho * dir[i];
        }
        2.0 * ux - u(&p) - u(&q)
    };
    match d {
        1 => Ok(2.0 * g(&[1.0])),
        2 => Ok(2.0 * integrate(|t| g(&[t.cos(), t.sin()]), 0.0, PI, tol, 2000)?),
        _ => {
            let mut failure = None;
            let v = integrate(
                |phi| {
                    let (sp, cp) = phi.sin_cos();
                    match integrate(|psi| g(&[sp * psi.cos(), sp * psi.sin(), cp]), 0.0, 2.0 * PI, tol, 2000) {
                        Ok(v) => v * sp,
                        Err(e) => {
                            failure.get_or_insert(e);
                            0.0
                        }
                    }
                },
                0.0,
                0.5 * PI,
                tol,
                2000,
            )?;
            match failure {
                Some(e) => Err(e),
                None => Ok(2.0 * v),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::gaussian_frac_lap;

    fn gauss(x: &[f64]) -> f64 {
        (-x.iter().map(|v| v * v).sum::<f64>()).exp()
    }

    #[test]
    fn constant_function() {
        let opts = IntegralOptions { limit: 3.0, sup_beyond: Arc::new(|_| 0.0), ..IntegralOptions::gaussian() };
        for &alpha in &[0.4, 1.0, 1.7] {
            let v = integral_frac_lap(&|_| 3.0, &[0.2, -0.1], alpha, &opts).unwrap();
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_at_origin_order_one() {
        let v = integral_frac_lap(&gauss, &[0.0], 1.0, &IntegralOptions::gaussian()).unwrap();
        assert!((v - 2.0 / PI.sqrt()).abs() <= 1e-6, "{v}");
    }

    #[test]
    fn gaussian_off_center() {
        let v = integral_frac_lap(&gauss, &[1.5], 0.5, &IntegralOptions::gaussian()).unwrap();
        let exact = gaussian_frac_lap(&[1.5], 0.5).unwrap();
        assert!((v - exact).abs() <= 1e-6, "{v} vs {exact}");
        let x = [0.5, -0.25];
        let v = integral_frac_lap(&gauss, &x, 1.3, &IntegralOptions::gaussian()).unwrap();
        let exact = gaussian_frac_lap(&x, 1.3).unwrap();
        assert!((v - exact).abs() <= 1e-6, "{v} vs {exact}");
    }

    #[test]
    fn tail_check() {
        let opts = IntegralOptions { cutoff: 1.0, ..IntegralOptions::gaussian() };
        assert!(matches!(integral_frac_lap(&gauss, &[0.0], 1.0, &opts), Err(Error::TailTooLarge { .. })));
    }

    #[test]
    fn constant_values() {
        // c_{1,1} = 1/pi
        assert!((normalization_constant(1, 1.0).unwrap() - 1.0 / PI).abs() < 1e-15);
        assert!(matches!(normalization_constant(2, 2.0), Err(Error::SingularConstant(_))));
    }
}
