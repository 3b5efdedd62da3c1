//! BiCGSTAB for nonsymmetric systems, matrix-free.

use thiserror::Error;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct KrylovConfig {
    /// Target for `||b - A x|| / ||b||`.
    pub tol: f64,
    pub max_iter: usize,
    /// Stop when the best residual has not improved for this many iterations,
    /// once it is below [`STAGNATION_FLOOR`].
    pub stagnation_window: usize,
    pub record_history: bool,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self { tol: 1e-14, max_iter: 10_000, stagnation_window: 10, record_history: false }
    }
}

impl KrylovConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// Stagnation only counts in the round-off regime; above this the erratic early
/// residuals of BiCGSTAB are not a reason to stop.
pub const STAGNATION_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KrylovOutcome {
    Converged,
    /// Residual stopped improving above the target; the best iterate is returned.
    Stagnated,
}

#[derive(Debug, Clone)]
pub struct KrylovResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// True relative residual of `x`.
    pub residual: f64,
    pub outcome: KrylovOutcome,
    /// Recursive relative residual after each iteration, when recorded.
    pub history: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KrylovError {
    #[error("BiCGSTAB breakdown at iteration {iteration}: {what} vanished")]
    Breakdown { iteration: usize, what: &'static str },
    #[error("BiCGSTAB hit {iterations} iterations with residual {residual:e}")]
    MaxIterExceeded { iterations: usize, residual: f64, best: Vec<f64> },
    #[error("non-finite value in BiCGSTAB at iteration {iteration}")]
    NanDetected { iteration: usize },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` from `x0` (zero when `None`).
pub fn bicgstab<F>(mut apply: F, b: &[f64], x0: Option<&[f64]>, config: &KrylovConfig) -> Result<KrylovResult>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = b.len();
    let bnorm = norm(b);
    if !bnorm.is_finite() {
        return Err(KrylovError::NanDetected { iteration: 0 }.into());
    }
    if bnorm == 0.0 {
        return Ok(KrylovResult {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
            outcome: KrylovOutcome::Converged,
            history: Vec::new(),
        });
    }
    let mut x = x0.map_or_else(|| vec![0.0; n], |v| v.to_vec());
    let mut r = vec![0.0; n];
    apply(&x, &mut r)?;
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let rhat = r.clone();
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let (mut rho, mut alpha, mut omega) = (1.0f64, 1.0f64, 1.0f64);

    let mut history = Vec::new();
    let mut best = x.clone();
    let mut best_res = norm(&r) / bnorm;
    let mut since_best = 0;
    let mut outcome = None;
    let mut iterations = 0;

    if best_res <= config.tol {
        outcome = Some(KrylovOutcome::Converged);
    }
    while outcome.is_none() {
        if iterations >= config.max_iter {
            let residual = true_residual(&mut apply, &best, b, bnorm)?;
            return Err(KrylovError::MaxIterExceeded { iterations, residual, best }.into());
        }
        iterations += 1;
        let rho_new = dot(&rhat, &r);
        if !rho_new.is_finite() {
            return Err(KrylovError::NanDetected { iteration: iterations }.into());
        }
        if rho_new == 0.0 {
            return Err(KrylovError::Breakdown { iteration: iterations, what: "rho" }.into());
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        apply(&p, &mut v)?;
        let denom = dot(&rhat, &v);
        if denom == 0.0 {
            return Err(KrylovError::Breakdown { iteration: iterations, what: "(rhat, v)" }.into());
        }
        alpha = rho / denom;
        if !alpha.is_finite() {
            return Err(KrylovError::NanDetected { iteration: iterations }.into());
        }
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let snorm = norm(&s) / bnorm;
        if snorm <= config.tol {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            if config.record_history {
                history.push(snorm);
            }
            best.copy_from_slice(&x);
            outcome = Some(KrylovOutcome::Converged);
            break;
        }
        apply(&s, &mut t)?;
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(KrylovError::Breakdown { iteration: iterations, what: "(t, t)" }.into());
        }
        omega = dot(&t, &s) / tt;
        if !omega.is_finite() {
            return Err(KrylovError::NanDetected { iteration: iterations }.into());
        }
        if omega == 0.0 {
            return Err(KrylovError::Breakdown { iteration: iterations, what: "omega" }.into());
        }
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        let res = norm(&r) / bnorm;
        if !res.is_finite() {
            return Err(KrylovError::NanDetected { iteration: iterations }.into());
        }
        if config.record_history {
            history.push(res);
        }
        if res < best_res {
            best_res = res;
            best.copy_from_slice(&x);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if res <= config.tol {
            best.copy_from_slice(&x);
            outcome = Some(KrylovOutcome::Converged);
        } else if since_best >= config.stagnation_window && best_res <= STAGNATION_FLOOR {
            outcome = Some(KrylovOutcome::Stagnated);
        }
    }
    let residual = true_residual(&mut apply, &best, b, bnorm)?;
    Ok(KrylovResult { x: best, iterations, residual, outcome: outcome.unwrap(), history })
}

fn true_residual<F>(apply: &mut F, x: &[f64], b: &[f64], bnorm: f64) -> Result<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let mut ax = vec![0.0; x.len()];
    apply(x, &mut ax)?;
    let r: f64 = ax.iter().zip(b).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
    Ok(r / bnorm)
}

/// Dense solve by Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c] == 0.0 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for i in c + 1..n {
            let f = a[i][c] / a[c][c];
            if f != 0.0 {
                for k in c..n {
                    a[i][k] -= f * a[c][k];
                }
                b[i] -= f * b[c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}
