//! Uniform tensor grids, sampled order fields, grid functions and domain masks.
//!
//! Unknowns live on the interior nodes of a box: with `N` interior nodes per
//! axis the step is `h = (upper - lower) / (N + 1)` and node `j` (1-based) sits
//! at `lower + j * h`. Flat storage is lexicographic with the last axis fastest.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Tensor-product grid of interior nodes on a box in 1, 2 or 3 dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    dim: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    n: Vec<usize>,
    h: Vec<f64>,
}

/// Builds a grid with `n_per_dim[p]` interior nodes along axis `p`.
pub fn build_grid(dim: usize, lower: &[f64], upper: &[f64], n_per_dim: &[usize]) -> Result<UniformGrid> {
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidDim(format!("dimension {dim} not in 1..=3")));
    }
    if lower.len() != dim || upper.len() != dim || n_per_dim.len() != dim {
        return Err(Error::InvalidDim(format!(
            "expected {dim} bounds and sizes, got {}/{}/{}",
            lower.len(),
            upper.len(),
            n_per_dim.len()
        )));
    }
    for axis in 0..dim {
        let (a, b) = (lower[axis], upper[axis]);
        if !a.is_finite() || !b.is_finite() || a >= b {
            return Err(Error::InvalidBox { axis, lower: a, upper: b });
        }
        if n_per_dim[axis] == 0 {
            return Err(Error::InvalidDim(format!("axis {axis} has no interior nodes")));
        }
    }
    let h = (0..dim)
        .map(|p| (upper[p] - lower[p]) / (n_per_dim[p] + 1) as f64)
        .collect();
    Ok(UniformGrid {
        dim,
        lower: lower.to_vec(),
        upper: upper.to_vec(),
        n: n_per_dim.to_vec(),
        h,
    })
}

impl UniformGrid {
    /// Cube `[lower, upper]^dim` with `n` interior nodes per axis.
    pub fn cube(dim: usize, lower: f64, upper: f64, n: usize) -> Result<Self> {
        build_grid(dim, &vec![lower; dim], &vec![upper; dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn n_per_dim(&self) -> &[usize] {
        &self.n
    }

    pub fn steps(&self) -> &[f64] {
        &self.h
    }

    /// Common step of an isotropic grid.
    pub fn isotropic_step(&self) -> Result<f64> {
        let h0 = self.h[0];
        if self.h.iter().all(|&h| (h - h0).abs() <= 1e-12 * h0) {
            Ok(h0)
        } else {
            Err(Error::AnisotropicGrid(self.h.clone()))
        }
    }

    /// Total number of interior nodes.
    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinate of 0-based node `j` along `axis`.
    #[inline]
    pub fn coord(&self, axis: usize, j: usize) -> f64 {
        self.lower[axis] + (j + 1) as f64 * self.h[axis]
    }

    /// Coordinates along one axis.
    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.n[axis]).map(|j| self.coord(axis, j)).collect()
    }

    /// Multi-index of flat node `flat` (unused trailing slots are zero).
    #[inline]
    pub fn multi_index(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for axis in (0..self.dim).rev() {
            idx[axis] = flat % self.n[axis];
            flat /= self.n[axis];
        }
        idx
    }

    #[inline]
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.n)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Writes the coordinates of flat node `flat` into `out[..dim]`.
    #[inline]
    pub fn point_into(&self, flat: usize, out: &mut [f64]) {
        let idx = self.multi_index(flat);
        for axis in 0..self.dim {
            out[axis] = self.coord(axis, idx[axis]);
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        self.point_into(flat, &mut p);
        p
    }

    /// Samples `f` at every interior node.
    pub fn sample<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        (0..self.len())
            .map(|k| {
                self.point_into(k, &mut p);
                f(&p)
            })
            .collect()
    }

    /// Integer refinement factor `s` with `other.h = self.h / s`, when `other`
    /// covers the same box and every node of `self` is a node of `other`.
    pub fn nesting_factor(&self, other: &UniformGrid) -> Option<usize> {
        if self.dim != other.dim {
            return None;
        }
        let mut factor = None;
        for p in 0..self.dim {
            let span = (self.upper[p] - self.lower[p]).abs().max(1.0);
            if (self.lower[p] - other.lower[p]).abs() > 1e-12 * span
                || (self.upper[p] - other.upper[p]).abs() > 1e-12 * span
            {
                return None;
            }
            let ratio = (self.n[p] + 1) as f64 / (other.n[p] + 1) as f64;
            let s = (other.n[p] + 1) / (self.n[p] + 1);
            if s == 0 || !(other.n[p] + 1).is_multiple_of(self.n[p] + 1) || (ratio * s as f64 - 1.0).abs() > 1e-12 {
                return None;
            }
            match factor {
                None => factor = Some(s),
                Some(f) if f == s => {}
                Some(_) => return None,
            }
        }
        factor
    }
}

/// Rule evaluating the order at a point.
pub type OrderRule = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Variable order `alpha(x)` together with its bounds and, once sampled, its nodal values.
#[derive(Clone)]
pub struct OrderField {
    evaluator: OrderRule,
    alpha_min: f64,
    alpha_max: f64,
    sampled: Option<Vec<f64>>,
}

impl fmt::Debug for OrderField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OrderField")
            .field("alpha_min", &self.alpha_min)
            .field("alpha_max", &self.alpha_max)
            .field("sampled", &self.sampled.as_ref().map(|s| s.len()))
            .finish()
    }
}

impl OrderField {
    pub fn new(evaluator: OrderRule, alpha_min: f64, alpha_max: f64) -> Self {
        Self { evaluator, alpha_min, alpha_max, sampled: None }
    }

    pub fn from_fn<F>(f: F, alpha_min: f64, alpha_max: f64) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(Arc::new(f), alpha_min, alpha_max)
    }

    pub fn constant(alpha: f64) -> Self {
        Self::from_fn(move |_| alpha, alpha, alpha)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.evaluator)(x)
    }

    pub fn evaluator(&self) -> &OrderRule {
        &self.evaluator
    }

    pub fn alpha_min(&self) -> f64 {
        self.alpha_min
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    pub fn sampled(&self) -> Option<&[f64]> {
        self.sampled.as_deref()
    }
}

/// Samples `field` at every interior node of `grid`; the bounds become the sampled range.
pub fn sample_order(field: &OrderField, grid: &UniformGrid) -> Result<OrderField> {
    let mut p = vec![0.0; grid.dim()];
    let mut values = Vec::with_capacity(grid.len());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..grid.len() {
        grid.point_into(k, &mut p);
        let a = field.eval(&p);
        if !a.is_finite() || a <= 0.0 || a > 2.0 {
            return Err(Error::OrderOutOfRange { value: a, at: Some(p.clone()) });
        }
        lo = lo.min(a);
        hi = hi.max(a);
        values.push(a);
    }
    Ok(OrderField {
        evaluator: field.evaluator.clone(),
        alpha_min: lo,
        alpha_max: hi,
        sampled: Some(values),
    })
}

/// Real values on the interior nodes; the exterior is implicitly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Arc<UniformGrid>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<UniformGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::SizeMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<UniformGrid>) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: Arc<UniformGrid>, f: F) -> Self {
        let values = grid.sample(f);
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<UniformGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_norm(&self) -> f64 {
        max_norm(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Which interior nodes of an embedding box are unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainMask {
    inside: Vec<bool>,
    count: usize,
}

pub fn make_mask<P: Fn(&[f64]) -> bool>(grid: &UniformGrid, predicate: P) -> Result<DomainMask> {
    let mut p = vec![0.0; grid.dim()];
    let inside: Vec<bool> = (0..grid.len())
        .map(|k| {
            grid.point_into(k, &mut p);
            predicate(&p)
        })
        .collect();
    DomainMask::from_flags(inside)
}

impl DomainMask {
    pub fn from_flags(inside: Vec<bool>) -> Result<Self> {
        let count = inside.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::EmptyDomain);
        }
        Ok(Self { inside, count })
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn len(&self) -> usize {
        self.inside.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inside.is_empty()
    }

    pub fn count_inside(&self) -> usize {
        self.count
    }

    /// Zeroes every exterior entry of `v`.
    pub fn apply(&self, v: &mut [f64]) {
        for (x, &keep) in v.iter_mut().zip(&self.inside) {
            if !keep {
                *x = 0.0;
            }
        }
    }
}

/// Number of face-connected components of the nodes where `flags` is true.
pub fn count_components(grid: &UniformGrid, flags: &[bool]) -> usize {
    let n = grid.n_per_dim();
    let dim = grid.dim();
    let mut seen = vec![false; flags.len()];
    let mut stack = Vec::new();
    let mut components = 0;
    for start in 0..flags.len() {
        if !flags[start] || seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(k) = stack.pop() {
            let idx = grid.multi_index(k);
            for axis in 0..dim {
                for delta in [-1isize, 1] {
                    let j = idx[axis] as isize + delta;
                    if j < 0 || j >= n[axis] as isize {
                        continue;
                    }
                    let mut nb = idx;
                    nb[axis] = j as usize;
                    let flat = grid.flat_index(&nb[..dim]);
                    if flags[flat] && !seen[flat] {
                        seen[flat] = true;
                        stack.push(flat);
                    }
                }
            }
        }
    }
    components
}
