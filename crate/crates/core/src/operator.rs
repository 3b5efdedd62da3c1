//! The discrete variable-order fractional Laplacian
//! `v_j = h^(-alpha_j) sum_k a_(k-j)^(alpha_j) u_k`.
//!
//! `Direct` evaluates the double sum with one weight table per distinct order.
//! `Fast` interpolates in the order variable and applies `r` constant-order
//! Toeplitz operators through a circulant embedding.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::Convolver;
use crate::grid::{sample_order, DomainMask, GridFunction, OrderField, UniformGrid};
use crate::lowrank::{build_plan, estimate_rank, ChebyshevPlan, RankCoefficients, DEFAULT_RANK};
use crate::weights::{WeightCache, WeightSource, WeightTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApplyMode {
    Direct,
    Fast,
}

impl std::str::FromStr for ApplyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(ApplyMode::Direct),
            "fast" => Ok(ApplyMode::Fast),
            other => Err(Error::Config(format!("unknown mode '{other}' (expected fast|direct)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankChoice {
    Fixed(usize),
    /// Smallest rank whose measured interpolation error is below the tolerance.
    Estimate(f64),
}

#[derive(Debug, Clone)]
pub struct OperatorSettings {
    pub mode: ApplyMode,
    pub rank: RankChoice,
    /// `None` picks [`WeightSource::default_for`].
    pub source: Option<WeightSource>,
    /// Reuse a plan, e.g. one built on the finest grid of a sweep.
    pub plan: Option<ChebyshevPlan>,
}

impl Default for OperatorSettings {
    fn default() -> Self {
        Self { mode: ApplyMode::Fast, rank: RankChoice::Fixed(DEFAULT_RANK), source: None, plan: None }
    }
}

impl OperatorSettings {
    pub fn direct() -> Self {
        Self { mode: ApplyMode::Direct, ..Self::default() }
    }

    pub fn fast(rank: usize) -> Self {
        Self { rank: RankChoice::Fixed(rank), ..Self::default() }
    }

    pub fn with_source(mut self, source: WeightSource) -> Self {
        self.source = Some(source);
        self
    }
}

/// One constant-order Toeplitz block embedded in a circulant of size `L_p = 2N_p`
/// rounded up to a power of two, with its spectrum cached.
pub struct ConstantOrderKernel {
    alpha: f64,
    n: Vec<usize>,
    fft: Arc<Convolver>,
    /// Real spectrum of the embedded kernel times `h^-alpha / prod L_p`, in the engine's layout.
    spectrum: Vec<f64>,
}

impl ConstantOrderKernel {
    pub fn new(table: &WeightTable, grid: &UniformGrid) -> Result<Self> {
        let fft = Arc::new(Convolver::new(&embedding_shape(grid)));
        Self::with_fft(table, grid, fft)
    }

    fn with_fft(table: &WeightTable, grid: &UniformGrid, fft: Arc<Convolver>) -> Result<Self> {
        let h = grid.isotropic_step()?;
        let n = grid.n_per_dim().to_vec();
        let need = n.iter().max().copied().unwrap_or(1) - 1;
        if table.dim() != grid.dim() || table.extent() < need {
            return Err(Error::SizeMismatch { expected: need, got: table.extent() });
        }
        let shape = fft.shape().to_vec();
        let total: usize = shape.iter().product();
        let mut data = vec![0.0; total];
        let d = shape.len();
        let mut off = [0usize; 3];
        'outer: for (flat, slot) in data.iter_mut().enumerate() {
            let mut rest = flat;
            for p in (0..d).rev() {
                let k = rest % shape[p];
                rest /= shape[p];
                let len = shape[p];
                off[p] = if k < n[p] {
                    k
                } else if k > len - n[p] {
                    len - k
                } else {
                    continue 'outer;
                };
            }
            *slot = table.at(&off[..d]);
        }
        let scale = h.powf(-table.alpha()) / total as f64;
        let spectrum = fft.kernel_spectrum(&data, scale);
        Ok(Self { alpha: table.alpha(), n, fft, spectrum })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `h^-alpha T u` with `T` the Toeplitz matrix of the weights.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        let count: usize = self.n.iter().product();
        if u.len() != count {
            return Err(Error::SizeMismatch { expected: count, got: u.len() });
        }
        let hat = self.fft.forward_real(u, &self.n);
        let mut out = vec![0.0; count];
        self.fft.inverse_product(&hat, &self.spectrum, None, &self.n, |j, v| out[j] = v.re);
        self.fft.give_back(hat);
        Ok(out)
    }
}

pub fn apply_constant_order(kernel: &ConstantOrderKernel, u: &[f64]) -> Result<Vec<f64>> {
    kernel.apply(u)
}

fn embedding_shape(grid: &UniformGrid) -> Vec<usize> {
    grid.n_per_dim().iter().map(|&n| (2 * n).next_power_of_two()).collect()
}

struct FastParts {
    plan: ChebyshevPlan,
    /// Lagrange weights rank-major: `lagrange[q][j]`.
    lagrange: Vec<Vec<f64>>,
    fft: Arc<Convolver>,
    /// Spectra per rank, already scaled.
    kernels: Vec<ConstantOrderKernel>,
}

struct DirectParts {
    tables: Vec<Arc<WeightTable>>,
    /// Per node: table index.
    which: Vec<u32>,
}

pub struct VariableOrderOperator {
    grid: Arc<UniformGrid>,
    alphas: Vec<f64>,
    alpha_min: f64,
    alpha_max: f64,
    h: f64,
    mode: ApplyMode,
    mask: Option<DomainMask>,
    fast: Option<FastParts>,
    direct: Option<DirectParts>,
}

impl std::fmt::Debug for VariableOrderOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VariableOrderOperator")
            .field("n", &self.grid.n_per_dim())
            .field("mode", &self.mode)
            .field("rank", &self.rank())
            .field("alpha", &(self.alpha_min, self.alpha_max))
            .finish()
    }
}

impl VariableOrderOperator {
    pub fn new(grid: Arc<UniformGrid>, order: &OrderField, settings: &OperatorSettings) -> Result<Self> {
        Self::with_cache(grid, order, settings, &WeightCache::new())
    }

    pub fn with_cache(
        grid: Arc<UniformGrid>,
        order: &OrderField,
        settings: &OperatorSettings,
        cache: &WeightCache,
    ) -> Result<Self> {
        let h = grid.isotropic_step()?;
        let sampled = match order.sampled() {
            Some(s) if s.len() == grid.len() => order.clone(),
            _ => sample_order(order, &grid)?,
        };
        let alphas = sampled.sampled().expect("just sampled").to_vec();
        let dim = grid.dim();
        let nodes = grid.n_per_dim().iter().copied().max().unwrap_or(1);
        let source = settings.source.unwrap_or_else(|| WeightSource::default_for(dim, nodes));
        let mut op = Self {
            alpha_min: sampled.alpha_min(),
            alpha_max: sampled.alpha_max(),
            grid,
            alphas,
            h,
            mode: settings.mode,
            mask: None,
            fast: None,
            direct: None,
        };
        match settings.mode {
            ApplyMode::Fast => op.fast = Some(op.build_fast(settings, source, cache)?),
            ApplyMode::Direct => op.direct = Some(op.build_direct(source, cache)?),
        }
        Ok(op)
    }

    fn build_fast(&self, settings: &OperatorSettings, source: WeightSource, cache: &WeightCache) -> Result<FastParts> {
        let plan = match &settings.plan {
            Some(p) => {
                if p.alpha_min() > self.alpha_min || p.alpha_max() < self.alpha_max {
                    return Err(Error::InvalidRange { min: p.alpha_min(), max: p.alpha_max() });
                }
                p.clone()
            }
            None => {
                let r = match settings.rank {
                    RankChoice::Fixed(r) => r,
                    RankChoice::Estimate(eps) => {
                        estimate_rank(self.alpha_min, self.alpha_max, self.grid.dim(), self.h, eps)?.0
                    }
                };
                build_plan(self.alpha_min, self.alpha_max, r)?
            }
        };
        let coeffs = RankCoefficients::new(&plan, &self.alphas)?;
        let fft = Arc::new(Convolver::new(&embedding_shape(&self.grid)));
        let nodes = self.grid.n_per_dim().iter().copied().max().unwrap_or(1);
        let kernels = plan
            .nodes()
            .iter()
            .map(|&a| {
                let table = cache.get_or_build(a, self.grid.dim(), source, nodes)?;
                ConstantOrderKernel::with_fft(&table, &self.grid, fft.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let lagrange = (0..plan.rank())
            .map(|q| (0..coeffs.len()).map(|j| coeffs.node(j)[q]).collect())
            .collect();
        Ok(FastParts { plan, lagrange, fft, kernels })
    }

    fn build_direct(&self, source: WeightSource, cache: &WeightCache) -> Result<DirectParts> {
        let nodes = self.grid.n_per_dim().iter().copied().max().unwrap_or(1);
        let mut slot: HashMap<u64, u32> = HashMap::new();
        let mut distinct = Vec::new();
        let which = self
            .alphas
            .iter()
            .map(|&a| {
                *slot.entry(a.to_bits()).or_insert_with(|| {
                    distinct.push(a);
                    distinct.len() as u32 - 1
                })
            })
            .collect();
        let tables = distinct
            .par_iter()
            .map(|&a| cache.get_or_build(a, self.grid.dim(), source, nodes))
            .collect::<Result<Vec<_>>>()?;
        Ok(DirectParts { tables, which })
    }

    /// Restrict unknowns to `mask`; other nodes are held at zero.
    pub fn with_mask(mut self, mask: DomainMask) -> Result<Self> {
        if mask.len() != self.grid.len() {
            return Err(Error::SizeMismatch { expected: self.grid.len(), got: mask.len() });
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn grid(&self) -> &Arc<UniformGrid> {
        &self.grid
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_range(&self) -> (f64, f64) {
        (self.alpha_min, self.alpha_max)
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn mode(&self) -> ApplyMode {
        self.mode
    }

    pub fn mask(&self) -> Option<&DomainMask> {
        self.mask.as_ref()
    }

    pub fn plan(&self) -> Option<&ChebyshevPlan> {
        self.fast.as_ref().map(|f| &f.plan)
    }

    pub fn rank(&self) -> Option<usize> {
        self.plan().map(|p| p.rank())
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Apply in the configured mode.
    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        self.check_grid(u)?;
        let v = self.apply_slice(u.values())?;
        GridFunction::new(self.grid.clone(), v)
    }

    pub fn apply_slice(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; u.len()];
        self.apply_into(u, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        match self.mode {
            ApplyMode::Fast => self.fast_into(u, out),
            ApplyMode::Direct => self.direct_into(u, out),
        }
    }

    fn check_grid(&self, u: &GridFunction) -> Result<()> {
        if u.grid().as_ref() != self.grid.as_ref() {
            return Err(Error::GridMismatch(format!(
                "function on {:?} nodes, operator on {:?}",
                u.grid().n_per_dim(),
                self.grid.n_per_dim()
            )));
        }
        Ok(())
    }

    fn masked_input<'a>(&self, u: &'a [f64]) -> std::borrow::Cow<'a, [f64]> {
        match &self.mask {
            Some(m) => {
                let mut w = u.to_vec();
                m.apply(&mut w);
                std::borrow::Cow::Owned(w)
            }
            None => std::borrow::Cow::Borrowed(u),
        }
    }

    fn check_len(&self, u: &[f64], out: &[f64]) -> Result<()> {
        if u.len() != self.grid.len() || out.len() != self.grid.len() {
            return Err(Error::SizeMismatch { expected: self.grid.len(), got: u.len().min(out.len()) });
        }
        Ok(())
    }

    pub fn apply_direct(&self, u: &GridFunction) -> Result<GridFunction> {
        self.check_grid(u)?;
        let mut out = vec![0.0; u.values().len()];
        self.direct_into(u.values(), &mut out)?;
        GridFunction::new(self.grid.clone(), out)
    }

    pub fn apply_fast(&self, u: &GridFunction) -> Result<GridFunction> {
        self.check_grid(u)?;
        let mut out = vec![0.0; u.values().len()];
        self.fast_into(u.values(), &mut out)?;
        GridFunction::new(self.grid.clone(), out)
    }

    fn direct_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(u, out)?;
        let parts = self
            .direct
            .as_ref()
            .ok_or(Error::MissingWeights { alpha: self.alpha_min })?;
        let u = self.masked_input(u);
        let grid = &self.grid;
        let d = grid.dim();
        let n = grid.n_per_dim();
        let nz: Vec<(usize, [usize; 3], f64)> = u
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(k, &v)| (k, grid.multi_index(k), v))
            .collect();
        let h = self.h;
        out.par_iter_mut().enumerate().for_each(|(j, o)| {
            let table = &parts.tables[parts.which[j] as usize];
            let side = table.extent() + 1;
            let vals = table.values();
            let jj = grid.multi_index(j);
            let mut acc = 0.0;
            for &(_, kk, v) in &nz {
                let mut t = 0;
                for p in 0..d {
                    t = t * side + jj[p].abs_diff(kk[p]);
                }
                acc += vals[t] * v;
            }
            *o = h.powf(-table.alpha()) * acc;
        });
        let _ = n;
        if let Some(m) = &self.mask {
            m.apply(out);
        }
        Ok(())
    }

    fn fast_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(u, out)?;
        let parts = self.fast.as_ref().ok_or(Error::PlanMissing)?;
        let u = self.masked_input(u);
        let n = self.grid.n_per_dim();
        let hat = parts.fft.forward_real(&u, n);
        out.fill(0.0);
        let r = parts.kernels.len();
        let lagrange = &parts.lagrange;
        for q in (0..r).step_by(2) {
            // two real results share one inverse transform
            let ka = &parts.kernels[q].spectrum;
            match parts.kernels.get(q + 1) {
                Some(kb) => {
                    let (ca, cb) = (&lagrange[q], &lagrange[q + 1]);
                    parts.fft.inverse_product(&hat, ka, Some(&kb.spectrum), n, |j, v| {
                        out[j] += ca[j] * v.re + cb[j] * v.im
                    })
                }
                None => parts.fft.inverse_product(&hat, ka, None, n, |j, v| out[j] += lagrange[q][j] * v.re),
            }
        }
        parts.fft.give_back(hat);
        if let Some(m) = &self.mask {
            m.apply(out);
        }
        Ok(())
    }

    /// Dense matrix by applying to unit vectors (small grids only).
    pub fn dense_matrix(&self) -> Result<Vec<Vec<f64>>> {
        let len = self.grid.len();
        let mut cols = Vec::with_capacity(len);
        let mut e = vec![0.0; len];
        for k in 0..len {
            e[k] = 1.0;
            cols.push(self.apply_slice(&e)?);
            e[k] = 0.0;
        }
        Ok((0..len).map(|j| (0..len).map(|k| cols[k][j]).collect()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub n: usize,
    pub dim: usize,
    pub rank: usize,
    pub seconds_per_apply: f64,
}

/// Best wall time over `n_reps` applies to a fixed smooth input, after one warm-up apply.
pub fn operator_timing(op: &VariableOrderOperator, n_reps: usize) -> Result<TimingReport> {
    let grid = op.grid();
    let u: Vec<f64> = grid.sample(|x| (-x.iter().map(|v| v * v).sum::<f64>()).exp());
    let mut out = vec![0.0; u.len()];
    op.apply_into(&u, &mut out)?;
    let mut best = f64::INFINITY;
    for _ in 0..n_reps.max(1) {
        let start = Instant::now();
        op.apply_into(&u, &mut out)?;
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(TimingReport {
        n: grid.n_per_dim()[0],
        dim: grid.dim(),
        rank: op.rank().unwrap_or(0),
        seconds_per_apply: best,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
