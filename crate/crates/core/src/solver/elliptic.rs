use crate::error::{Error, Result};
use crate::solver::{bicgstab, shifted_apply, KrylovConfig, KrylovResult, LinearMap};

/// `A u + b u = f` with `b >= 0`.
pub struct EllipticProblem<'a> {
    pub operator: &'a dyn LinearMap,
    pub reaction: Option<Vec<f64>>,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EllipticSolution {
    pub u: Vec<f64>,
    pub krylov: KrylovResult,
}

pub fn solve_elliptic(problem: &EllipticProblem<'_>, config: &KrylovConfig) -> Result<EllipticSolution> {
    let len = problem.operator.grid().len();
    if problem.rhs.len() != len {
        return Err(Error::SizeMismatch { expected: len, got: problem.rhs.len() });
    }
    let reaction = match &problem.reaction {
        Some(b) => {
            if b.len() != len {
                return Err(Error::SizeMismatch { expected: len, got: b.len() });
            }
            if let Some(bad) = b.iter().find(|&&v| !(v >= 0.0)) {
                return Err(Error::Config(format!("reaction coefficient {bad} is negative")));
            }
            Some(b.as_slice())
        }
        None => None,
    };
    let mut rhs = problem.rhs.clone();
    if let Some(m) = problem.operator.mask() {
        m.apply(&mut rhs);
    }
    let op = problem.operator;
    let krylov = bicgstab(|u, out| shifted_apply(op, reaction, 0.0, 1.0, u, out), &rhs, None, config)?;
    let mut u = krylov.x.clone();
    if let Some(m) = op.mask() {
        m.apply(&mut u);
    }
    Ok(EllipticSolution { u, krylov })
}
