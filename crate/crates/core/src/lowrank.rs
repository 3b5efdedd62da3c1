//! Chebyshev interpolation in the order variable.
//!
//! For every frequency the map `t -> M(xi)^(t/2)` is smooth in `t`, so
//! interpolating it at `r` Chebyshev nodes splits a variable-order operator
//! into `r` constant-order operators weighted by Lagrange polynomials of the
//! local order.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Largest rank `estimate_rank` will try.
pub const RANK_CAP: usize = 32;

/// Default rank when none is requested.
pub const DEFAULT_RANK: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevPlan {
    alpha_min: f64,
    alpha_max: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ChebyshevPlan {
    pub fn rank(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn barycentric_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn alpha_min(&self) -> f64 {
        self.alpha_min
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    /// Lagrange values `L_q(t)` written into `out`.
    pub fn lagrange_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        assert_eq!(out.len(), self.rank());
        let slack = 1e-12 * (1.0 + self.alpha_max.abs());
        if !(t >= self.alpha_min - slack && t <= self.alpha_max + slack) {
            return Err(Error::OutOfRange { t, min: self.alpha_min, max: self.alpha_max });
        }
        if let Some(hit) = self.nodes.iter().position(|&x| x == t) {
            out.fill(0.0);
            out[hit] = 1.0;
            return Ok(());
        }
        let mut total = 0.0;
        for ((o, &x), &w) in out.iter_mut().zip(&self.nodes).zip(&self.weights) {
            *o = w / (t - x);
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
        Ok(())
    }
}

/// Chebyshev points of the first kind on `[alpha_min, alpha_max]`, ascending.
pub fn build_plan(alpha_min: f64, alpha_max: f64, r: usize) -> Result<ChebyshevPlan> {
    if !(alpha_min.is_finite() && alpha_max.is_finite())
        || alpha_min <= 0.0
        || alpha_max > 2.0
        || alpha_min > alpha_max
        || r == 0
    {
        return Err(Error::InvalidRange { min: alpha_min, max: alpha_max });
    }
    if alpha_min == alpha_max {
        return Ok(ChebyshevPlan { alpha_min, alpha_max, nodes: vec![alpha_min], weights: vec![1.0] });
    }
    let mid = 0.5 * (alpha_min + alpha_max);
    let rad = 0.5 * (alpha_max - alpha_min);
    let rf = r as f64;
    // k = r-1 first so that nodes ascend
    let mut nodes = Vec::with_capacity(r);
    let mut weights = Vec::with_capacity(r);
    for k in (0..r).rev() {
        let theta = (2 * k + 1) as f64 * PI / (2.0 * rf);
        nodes.push(mid + rad * theta.cos());
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        weights.push(sign * theta.sin());
    }
    Ok(ChebyshevPlan { alpha_min, alpha_max, nodes, weights })
}

pub fn eval_lagrange(plan: &ChebyshevPlan, t: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; plan.rank()];
    plan.lagrange_into(t, &mut out)?;
    Ok(out)
}

/// Per-node Lagrange values, node-major (`r` entries per node).
#[derive(Debug, Clone)]
pub struct RankCoefficients {
    rank: usize,
    values: Vec<f64>,
}

impl RankCoefficients {
    pub fn new(plan: &ChebyshevPlan, alphas: &[f64]) -> Result<Self> {
        let r = plan.rank();
        let mut values = vec![0.0; r * alphas.len()];
        for (chunk, &a) in values.chunks_mut(r).zip(alphas) {
            plan.lagrange_into(a, chunk)?;
        }
        Ok(Self { rank: r, values })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.values[j * self.rank..(j + 1) * self.rank]
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.rank
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Measured interpolation error of `a^(t/2)` relative to its largest sampled value.
pub fn interpolation_error(plan: &ChebyshevPlan, dim: usize, h: f64) -> f64 {
    let amax = 4.0 * dim as f64 / (h * h);
    let samples: Vec<f64> = (1..=1000)
        .map(|k| {
            let s = (k as f64 * PI / 2000.0).sin();
            amax * s * s
        })
        .collect();
    let (lo, hi) = (plan.alpha_min, plan.alpha_max);
    let ts: Vec<f64> = (0..=100).map(|i| lo + (hi - lo) * i as f64 / 100.0).collect();
    let scale = samples
        .iter()
        .map(|&a| a.powf(0.5 * lo).max(a.powf(0.5 * hi)))
        .fold(0.0, f64::max);
    let r = plan.rank();
    let mut coef = vec![0.0; r];
    let mut worst: f64 = 0.0;
    let mut powers = vec![0.0; r];
    for &a in &samples {
        for (p, &x) in powers.iter_mut().zip(plan.nodes()) {
            *p = a.powf(0.5 * x);
        }
        for &t in &ts {
            plan.lagrange_into(t, &mut coef).expect("sample inside range");
            let approx: f64 = coef.iter().zip(&powers).map(|(c, p)| c * p).sum();
            worst = worst.max((approx - a.powf(0.5 * t)).abs());
        }
    }
    worst / scale
}

/// Smallest rank whose measured relative error is at most `epsilon`, with that error.
pub fn estimate_rank(alpha_min: f64, alpha_max: f64, dim: usize, h: f64, epsilon: f64) -> Result<(usize, f64)> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidRange { min: alpha_min, max: alpha_max });
    }
    let mut best = f64::INFINITY;
    for r in 1..=RANK_CAP {
        let plan = build_plan(alpha_min, alpha_max, r)?;
        if plan.rank() == 1 && alpha_min == alpha_max {
            return Ok((1, 0.0));
        }
        let err = interpolation_error(&plan, dim, h);
        best = best.min(err);
        if err <= epsilon {
            return Ok((r, err));
        }
    }
    Err(Error::RankCapExceeded { cap: RANK_CAP, best_error: best, epsilon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn degenerate_interval() {
        let p = build_plan(1.5, 1.5, 7).unwrap();
        assert_eq!(p.nodes(), &[1.5]);
        assert_eq!(eval_lagrange(&p, 1.5).unwrap(), vec![1.0]);
        assert_eq!(estimate_rank(1.5, 1.5, 2, 0.01, 1e-14).unwrap().0, 1);
    }

    #[test]
    fn nodes_symmetric_and_interior() {
        let p = build_plan(0.1, 1.9, 7).unwrap();
        assert_eq!(p.rank(), 7);
        for q in 0..7 {
            assert!((p.nodes()[q] + p.nodes()[6 - q] - 2.0).abs() < 1e-14);
            assert!(p.nodes()[q] > 0.1 && p.nodes()[q] < 1.9);
        }
        assert!((p.nodes()[3] - 1.0).abs() < 1e-14);
        assert!(p.nodes().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn cardinality() {
        let p = build_plan(0.5, 1.5, 3).unwrap();
        for (i, &x) in p.nodes().iter().enumerate() {
            let l = eval_lagrange(&p, x).unwrap();
            for (q, &v) in l.iter().enumerate() {
                let e = if q == i { 1.0 } else { 0.0 };
                assert!((v - e).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_rejected() {
        let p = build_plan(0.5, 1.5, 3).unwrap();
        assert!(matches!(eval_lagrange(&p, 1.6), Err(Error::OutOfRange { .. })));
        assert!(matches!(build_plan(1.5, 0.5, 3), Err(Error::InvalidRange { .. })));
        assert!(matches!(build_plan(0.0, 0.5, 3), Err(Error::InvalidRange { .. })));
    }

    fn sweep_error(plan: &ChebyshevPlan, t: f64, h: f64) -> f64 {
        let l = eval_lagrange(plan, t).unwrap();
        let amax = 4.0 / (h * h);
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for k in 1..=1000 {
            let s = (k as f64 * PI / 2000.0).sin();
            let a = amax * s * s;
            let approx: f64 = l.iter().zip(plan.nodes()).map(|(c, x)| c * a.powf(0.5 * x)).sum();
            worst = worst.max((approx - a.powf(0.5 * t)).abs());
            scale = scale.max(a.powf(0.5 * t));
        }
        worst / scale
    }

    #[test]
    fn midpoint_interpolation_sweep() {
        let p = build_plan(0.1, 1.9, 7).unwrap();
        // the midpoint is the middle node for odd rank
        assert!(sweep_error(&p, 1.0, 1.0 / 16.0) <= 1e-4);
        // between nodes r = 7 leaves an error of a few 1e-4 to 1e-2 of the largest power
        let t = 0.5 * (p.nodes()[3] + p.nodes()[4]);
        for h in [1.0, 0.5, 1.0 / 16.0] {
            let e = sweep_error(&p, t, h);
            assert!(e > 1e-5 && e < 1e-2, "h {h}: {e}");
        }
    }

    #[test]
    fn rank_estimates() {
        let (r, e) = estimate_rank(1.4, 1.6, 1, 1.0 / 64.0, 1e-1).unwrap();
        assert!(r <= 3 && e <= 1e-1);
        let (r, e) = estimate_rank(0.1, 1.9, 1, 1.0 / 64.0, 1e-12).unwrap();
        assert!(r <= RANK_CAP && e <= 1e-12);
    }

    #[test]
    fn error_decreases_with_rank() {
        let errs: Vec<f64> = [2, 4, 8, 16]
            .iter()
            .map(|&r| interpolation_error(&build_plan(0.2, 1.8, r).unwrap(), 2, 1.0 / 32.0))
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] < w[0], "{errs:?}");
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(lo in 0.05f64..1.9, width in 0.0f64..1.0, r in 1usize..20, s in 0.0f64..1.0) {
            let hi = (lo + width).min(2.0);
            let p = build_plan(lo, hi, r).unwrap();
            let t = lo + s * (hi - lo);
            let sum: f64 = eval_lagrange(&p, t).unwrap().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-10);
        }
    }
}
