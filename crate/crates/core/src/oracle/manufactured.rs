//! Right-hand side for the bump `u = prod_p (1 - x_p^2)^beta`, generated by
//! applying the discrete operator on a fine reference grid.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{build_grid, GridFunction, OrderField, UniformGrid};
use crate::operator::{OperatorSettings, VariableOrderOperator};
use crate::weights::WeightCache;

pub fn bump(x: &[f64], beta: f64) -> f64 {
    x.iter().map(|&v| (1.0 - v * v).max(0.0).powf(beta)).product()
}

/// `A u + u` on the reference grid, kept for restriction to nested coarse grids.
#[derive(Debug, Clone)]
pub struct ManufacturedRhs {
    pub reference: GridFunction,
}

impl ManufacturedRhs {
    pub fn restrict(&self, coarse: &Arc<UniformGrid>) -> Result<GridFunction> {
        restrict(&self.reference, coarse)
    }
}

pub fn reference_rhs_case1(
    template: &UniformGrid,
    field: &OrderField,
    beta: f64,
    h_ref: f64,
    settings: &OperatorSettings,
    cache: &WeightCache,
) -> Result<ManufacturedRhs> {
    if beta < 2.0 {
        return Err(Error::Config(format!("bump exponent {beta} below 2")));
    }
    let d = template.dim();
    let mut n = Vec::with_capacity(d);
    for p in 0..d {
        let cells = (template.upper()[p] - template.lower()[p]) / h_ref;
        let rounded = cells.round();
        if (cells - rounded).abs() > 1e-9 || rounded < 2.0 {
            return Err(Error::NotNested(format!("h_ref {h_ref} does not divide axis {p}")));
        }
        n.push(rounded as usize - 1);
    }
    let fine = Arc::new(build_grid(d, template.lower(), template.upper(), &n)?);
    let op = VariableOrderOperator::with_cache(fine.clone(), field, settings, cache)?;
    let u = fine.sample(|x| bump(x, beta));
    let mut f = op.apply_slice(&u)?;
    for (fi, ui) in f.iter_mut().zip(&u) {
        *fi += ui;
    }
    Ok(ManufacturedRhs { reference: GridFunction::new(fine, f)? })
}

/// Samples a fine-grid function at the nodes of a nested coarse grid.
pub fn restrict(fine: &GridFunction, coarse: &Arc<UniformGrid>) -> Result<GridFunction> {
    let fg = fine.grid();
    let s = coarse.nesting_factor(fg).ok_or_else(|| {
        Error::NotNested(format!("{:?} nodes inside {:?} nodes", coarse.n_per_dim(), fg.n_per_dim()))
    })?;
    let d = coarse.dim();
    let values = (0..coarse.len())
        .map(|k| {
            let idx = coarse.multi_index(k);
            let mut fine_idx = [0usize; 3];
            for p in 0..d {
                fine_idx[p] = (idx[p] + 1) * s - 1;
            }
            fine.values()[fg.flat_index(&fine_idx[..d])]
        })
        .collect();
    GridFunction::new(coarse.clone(), values)
}

/// `f_j = [(-Delta_{h_ref})^{alpha/2} u + u](x_j)` on the nodes of `grid`.
pub fn manufactured_rhs_case1(
    grid: &Arc<UniformGrid>,
    field: &OrderField,
    beta: f64,
    h_ref: f64,
    settings: &OperatorSettings,
) -> Result<GridFunction> {
    reference_rhs_case1(grid, field, beta, h_ref, settings, &WeightCache::new())?.restrict(grid)
}
