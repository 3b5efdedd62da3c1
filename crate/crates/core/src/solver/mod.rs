//! Krylov solver, the elliptic scheme and time steppers built on the discrete operator.

mod elliptic;
mod krylov;
mod timestep;

use std::sync::Arc;

pub use elliptic::{solve_elliptic, EllipticProblem, EllipticSolution};
pub use krylov::{bicgstab, dense_solve, KrylovConfig, KrylovError, KrylovOutcome, KrylovResult};
pub use timestep::{
    evolve, step_allen_cahn_three_level, step_crank_nicolson, write_observations_csv, Observation, Scheme,
    SourceFn, StepResult, TimeStepper, Trajectory,
};

use crate::error::Result;
use crate::grid::{DomainMask, UniformGrid};
use crate::operator::VariableOrderOperator;

/// Linear map on grid functions, as the solvers see it.
pub trait LinearMap: Sync {
    fn grid(&self) -> &Arc<UniformGrid>;
    fn apply_into(&self, u: &[f64], out: &mut [f64]) -> Result<()>;
    /// Nodes held at zero, if any.
    fn mask(&self) -> Option<&DomainMask> {
        None
    }
}

impl LinearMap for VariableOrderOperator {
    fn grid(&self) -> &Arc<UniformGrid> {
        VariableOrderOperator::grid(self)
    }

    fn apply_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        VariableOrderOperator::apply_into(self, u, out)
    }

    fn mask(&self) -> Option<&DomainMask> {
        VariableOrderOperator::mask(self)
    }
}

/// The zero operator on a grid.
#[derive(Debug, Clone)]
pub struct ZeroMap(pub Arc<UniformGrid>);

impl LinearMap for ZeroMap {
    fn grid(&self) -> &Arc<UniformGrid> {
        &self.0
    }

    fn apply_into(&self, _u: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
}

/// `out = c0 u + c1 (A u + b u)` on unknowns, `out = u` on masked nodes.
pub(crate) fn shifted_apply(
    op: &dyn LinearMap,
    reaction: Option<&[f64]>,
    c0: f64,
    c1: f64,
    u: &[f64],
    out: &mut [f64],
) -> Result<()> {
    op.apply_into(u, out)?;
    for (j, o) in out.iter_mut().enumerate() {
        let b = reaction.map_or(0.0, |r| r[j]);
        *o = c0 * u[j] + c1 * (*o + b * u[j]);
    }
    if let Some(m) = op.mask() {
        for (j, &inside) in m.inside().iter().enumerate() {
            if !inside {
                out[j] = u[j];
            }
        }
    }
    Ok(())
}
