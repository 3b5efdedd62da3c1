//! Finite-difference weights of the discrete fractional Laplacian.
//!
//! The weight `a_n` for a constant order `alpha` is the `n`-th Fourier
//! coefficient of `phi(eta) = (sum_p 4 sin^2(eta_p / 2))^(alpha/2)` on
//! `[-pi, pi]^d`, so that `(-Delta_h)^(alpha/2) u_j = h^-alpha sum_k a_(k-j) u_k`.
//! In 1D the coefficients have a Gamma-function closed form, evaluated here
//! through a pole-free ratio recurrence. In any dimension they are approximated
//! by the `M`-point trapezoidal rule, which is one inverse DFT of the sampled
//! symbol.
//!
//! `phi` is even in every coordinate, so a table only stores the nonnegative
//! orthant `0 <= n_p <= extent`; `a_n` is read at `|n_p|`.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Largest tolerated imaginary part of the inverse DFT before it is dropped.
pub const IMAG_RESIDUE_LIMIT: f64 = 1e-12;

/// Default trapezoidal quadrature size for 1D and 2D tables.
pub const DEFAULT_QUADRATURE: usize = 1 << 14;

/// Discrete symbol `M_h(xi) = sum_p (4/h^2) sin^2(xi_p h / 2)`.
pub fn symbol(xi: &[f64], h: f64) -> f64 {
    xi.iter()
        .map(|&x| {
            let s = (0.5 * x * h).sin();
            4.0 * s * s / (h * h)
        })
        .sum()
}

/// Weights for one constant order, stored on the nonnegative orthant.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    alpha: f64,
    dim: usize,
    quadrature: Option<usize>,
    extent: usize,
    values: Vec<f64>,
}

impl WeightTable {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Trapezoidal size `M`, or `None` for the exact 1D closed form.
    pub fn quadrature(&self) -> Option<usize> {
        self.quadrature
    }

    /// Largest stored offset per axis.
    pub fn extent(&self) -> usize {
        self.extent
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Weight at absolute offsets `n[p] <= extent`.
    #[inline]
    pub fn at(&self, n: &[usize]) -> f64 {
        let side = self.extent + 1;
        self.values[n.iter().fold(0, |acc, &k| acc * side + k)]
    }

    /// Weight at a signed offset. Offsets beyond a full periodic table wrap modulo `M`.
    pub fn get(&self, n: &[isize]) -> f64 {
        let mut idx = [0usize; 3];
        for (p, &k) in n.iter().enumerate() {
            let mut a = k.unsigned_abs();
            if let Some(m) = self.quadrature.filter(|_| self.is_full_period()) {
                a %= m;
                a = a.min(m - a);
            }
            assert!(a <= self.extent, "offset {k} beyond table extent {}", self.extent);
            idx[p] = a;
        }
        self.at(&idx[..self.dim])
    }

    /// True when the table holds every one of the `M^d` periodic coefficients.
    pub fn is_full_period(&self) -> bool {
        matches!(self.quadrature, Some(m) if self.extent == m / 2)
    }

    /// Sum of all `M^d` periodic coefficients (full FFT tables only).
    pub fn periodic_sum(&self) -> Option<f64> {
        let m = self.quadrature?;
        if !self.is_full_period() {
            return None;
        }
        let half = m / 2;
        let side = half + 1;
        let mult = |k: usize| if k == 0 || k == half { 1.0 } else { 2.0 };
        let mut total = 0.0;
        for (flat, &v) in self.values.iter().enumerate() {
            let mut rest = flat;
            let mut w = 1.0;
            for _ in 0..self.dim {
                w *= mult(rest % side);
                rest /= side;
            }
            total += w * v;
        }
        Some(total)
    }

    /// Partial sum over the signed box `|n_p| <= extent`.
    pub fn windowed_sum(&self) -> f64 {
        let side = self.extent + 1;
        self.values
            .iter()
            .enumerate()
            .map(|(flat, &v)| {
                let mut rest = flat;
                let mut w = 1.0;
                for _ in 0..self.dim {
                    if rest % side != 0 {
                        w *= 2.0;
                    }
                    rest /= side;
                }
                w * v
            })
            .sum()
    }

    /// Copy restricted to offsets `<= extent`.
    pub fn truncated(&self, extent: usize) -> WeightTable {
        if extent >= self.extent {
            return self.clone();
        }
        let old = self.extent + 1;
        let side = extent + 1;
        let count = side.pow(self.dim as u32);
        let values = (0..count)
            .map(|flat| {
                let mut rest = flat;
                let mut src = 0;
                let mut scale = 1;
                for _ in 0..self.dim {
                    src += (rest % side) * scale;
                    scale *= old;
                    rest /= side;
                }
                // src was assembled with the last axis at scale 1
                self.values[src]
            })
            .collect();
        WeightTable { extent, values, ..self.clone() }
    }

    /// CSV dump with columns `n_1..n_d,value`, rows lexicographic over `[-extent, extent]^d`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|p| format!("n_{p}")).collect();
        writeln!(out, "{},value", header.join(","))?;
        let e = self.extent as isize;
        let side = 2 * self.extent + 1;
        let mut idx = vec![0isize; self.dim];
        for flat in 0..side.pow(self.dim as u32) {
            let mut rest = flat;
            for p in (0..self.dim).rev() {
                idx[p] = (rest % side) as isize - e;
                rest /= side;
            }
            let cols: Vec<String> = idx.iter().map(|k| k.to_string()).collect();
            writeln!(out, "{},{:.15e}", cols.join(","), self.get(&idx))?;
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha > 2.0 {
        return Err(Error::OrderOutOfRange { value: alpha, at: None });
    }
    Ok(())
}

/// Exact 1D weights `a_n = (-1)^n Gamma(alpha+1) / (Gamma(alpha/2+n+1) Gamma(alpha/2-n+1))`
/// for `|n| <= n_max`.
pub fn weights_1d_closed_form(alpha: f64, n_max: usize) -> Result<WeightTable> {
    check_alpha(alpha)?;
    if n_max < 1 {
        return Err(Error::InvalidDim("n_max must be at least 1".into()));
    }
    let half = 0.5 * alpha;
    let mut values = Vec::with_capacity(n_max + 1);
    let mut a = (ln_gamma(alpha + 1.0) - 2.0 * ln_gamma(half + 1.0)).exp();
    if alpha == 2.0 {
        a = 2.0;
    }
    values.push(a);
    for n in 0..n_max {
        let nf = n as f64;
        a *= (nf - half) / (nf + 1.0 + half);
        values.push(a);
    }
    Ok(WeightTable { alpha, dim: 1, quadrature: None, extent: n_max, values })
}

/// Full periodic trapezoidal table: every coefficient `0 <= n_p < M`.
pub fn weights_nd_fft(alpha: f64, dim: usize, m: usize) -> Result<WeightTable> {
    fft_table(alpha, dim, m, m / 2)
}

/// Trapezoidal table holding the offsets `|n_p| <= nodes - 1` a grid with
/// `nodes` points per axis needs. Requires `m >= 2 * nodes`.
pub fn weights_nd_fft_for_grid(alpha: f64, dim: usize, m: usize, nodes: usize) -> Result<WeightTable> {
    if m < 2 * nodes {
        return Err(Error::QuadratureTooCoarse { m, nodes, required: 2 * nodes });
    }
    fft_table(alpha, dim, m, nodes.saturating_sub(1).max(1).min(m / 2))
}

fn fft_table(alpha: f64, dim: usize, m: usize, extent: usize) -> Result<WeightTable> {
    check_alpha(alpha)?;
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidDim(format!("dimension {dim} not in 1..=3")));
    }
    if m < 2 || !m.is_power_of_two() {
        return Err(Error::InvalidQuadrature(m));
    }
    let half = m / 2;
    let side = half + 1;
    let out_side = extent + 1;
    let sin2: Vec<f64> = (0..side)
        .map(|k| {
            let s = (std::f64::consts::PI * k as f64 / m as f64).sin();
            4.0 * s * s
        })
        .collect();
    let power = 0.5 * alpha;
    let transform = EvenTransform::new(m);

    // last axis: evaluate the symbol row by row and transform immediately
    let rows = side.pow(dim as u32 - 1);
    let mut data = vec![0.0; rows * out_side];
    let residue = data
        .par_chunks_mut(2 * out_side)
        .enumerate()
        .map_init(
            || (vec![0.0; side], vec![0.0; side], transform.buffers()),
            |(ra, rb, bufs), (pair, out)| {
                let first = 2 * pair;
                let fill = |row: usize, dst: &mut [f64]| {
                    let mut base = 0.0;
                    let mut rest = row;
                    for _ in 0..dim - 1 {
                        base += sin2[rest % side];
                        rest /= side;
                    }
                    for (d, &s) in dst.iter_mut().zip(&sin2) {
                        let total = base + s;
                        *d = if total > 0.0 { total.powf(power) } else { 0.0 };
                    }
                };
                fill(first, ra);
                let (oa, ob) = out.split_at_mut(out_side);
                if first + 1 < rows {
                    fill(first + 1, rb);
                    transform.pair(ra, Some(rb), oa, ob, bufs)
                } else {
                    transform.pair(ra, None, oa, ob, bufs)
                }
            },
        )
        .reduce(|| 0.0, f64::max);
    let mut worst = residue;

    // remaining axes, innermost first
    let mut shape: Vec<usize> = vec![side; dim];
    shape[dim - 1] = out_side;
    for axis in (0..dim - 1).rev() {
        let (next, r) = transform_axis(&data, &shape, axis, out_side, &transform);
        worst = worst.max(r);
        data = next;
        shape[axis] = out_side;
    }
    if worst > IMAG_RESIDUE_LIMIT {
        return Err(Error::ImaginaryResidue { residue: worst, limit: IMAG_RESIDUE_LIMIT });
    }
    Ok(WeightTable { alpha, dim, quadrature: Some(m), extent, values: data })
}

fn transform_axis(
    data: &[f64],
    shape: &[usize],
    axis: usize,
    out_len: usize,
    transform: &EvenTransform,
) -> (Vec<f64>, f64) {
    let len = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![0.0; outer * out_len * stride];
    let mut bufs = transform.buffers();
    let (mut la, mut lb) = (vec![0.0; len], vec![0.0; len]);
    let (mut oa, mut ob) = (vec![0.0; out_len], vec![0.0; out_len]);
    let mut worst: f64 = 0.0;
    for o in 0..outer {
        let src = o * len * stride;
        let dst = o * out_len * stride;
        let mut i = 0;
        while i < stride {
            let two = i + 1 < stride;
            for k in 0..len {
                la[k] = data[src + k * stride + i];
                if two {
                    lb[k] = data[src + k * stride + i + 1];
                }
            }
            let r = transform.pair(&la, two.then_some(&lb[..]), &mut oa, &mut ob, &mut bufs);
            worst = worst.max(r);
            for k in 0..out_len {
                out[dst + k * stride + i] = oa[k];
                if two {
                    out[dst + k * stride + i + 1] = ob[k];
                }
            }
            i += 2;
        }
    }
    (out, worst)
}

/// DFT of a real sequence of length `M` that is even about 0, given on `0..=M/2`.
/// Two sequences share one complex FFT.
struct EvenTransform {
    m: usize,
    plan: Arc<dyn Fft<f64>>,
}

struct EvenBuffers {
    data: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl EvenTransform {
    fn new(m: usize) -> Self {
        let plan = FftPlanner::new().plan_fft_forward(m);
        Self { m, plan }
    }

    fn buffers(&self) -> EvenBuffers {
        EvenBuffers {
            data: vec![Complex64::default(); self.m],
            scratch: vec![Complex64::default(); self.plan.get_inplace_scratch_len()],
        }
    }

    /// Writes `(1/M) sum_m f(|m|) e^{-2 pi i m n / M}` for `n < out.len()`;
    /// returns the largest discarded imaginary part.
    fn pair(&self, fa: &[f64], fb: Option<&[f64]>, out_a: &mut [f64], out_b: &mut [f64], bufs: &mut EvenBuffers) -> f64 {
        let m = self.m;
        let half = m / 2;
        for k in 0..m {
            let src = if k <= half { k } else { m - k };
            let im = fb.map_or(0.0, |b| b[src]);
            bufs.data[k] = Complex64::new(fa[src], im);
        }
        self.plan.process_with_scratch(&mut bufs.data, &mut bufs.scratch);
        let scale = 1.0 / m as f64;
        let mut worst: f64 = 0.0;
        for n in 0..out_a.len() {
            let x = bufs.data[n];
            let y = bufs.data[(m - n) % m].conj();
            let a = (x + y) * 0.5 * scale;
            out_a[n] = a.re;
            worst = worst.max(a.im.abs());
            if fb.is_some() {
                let b = (x - y) * Complex64::new(0.0, -0.5) * scale;
                out_b[n] = b.re;
                worst = worst.max(b.im.abs());
            }
        }
        worst
    }
}

/// Bounds of `|a_n| n^(alpha+d)` along the first axis over `4 <= n <= extent/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayReport {
    Bounded { min: f64, max: f64 },
    /// Some tail weight vanishes (integer order), so the scaled decay is not informative.
    Degenerate,
}

impl DecayReport {
    pub fn ratio(&self) -> Option<f64> {
        match *self {
            DecayReport::Bounded { min, max } => Some(max / min),
            DecayReport::Degenerate => None,
        }
    }
}

pub fn check_decay(table: &WeightTable) -> Result<DecayReport> {
    if table.extent() < 16 {
        return Err(Error::InvalidDim(format!(
            "decay check needs extent >= 16, table has {}",
            table.extent()
        )));
    }
    let exponent = table.alpha() + table.dim() as f64;
    let mut idx = [0usize; 3];
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for n in 4..=table.extent() / 2 {
        idx[0] = n;
        let a = table.at(&idx[..table.dim()]).abs();
        if a == 0.0 || a < 1e-300 {
            return Ok(DecayReport::Degenerate);
        }
        let scaled = a * (n as f64).powf(exponent);
        lo = lo.min(scaled);
        hi = hi.max(scaled);
    }
    Ok(DecayReport::Bounded { min: lo, max: hi })
}

/// How weight tables are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightSource {
    /// Exact 1D closed form.
    ClosedForm,
    /// Trapezoidal rule with `m` points per axis.
    Fft { m: usize },
}

impl WeightSource {
    /// Closed form in 1D; `m = 2^14` in 2D; `4N` rounded up to a power of two in 3D.
    pub fn default_for(dim: usize, nodes: usize) -> Self {
        match dim {
            1 => WeightSource::ClosedForm,
            2 => WeightSource::Fft { m: DEFAULT_QUADRATURE.max((2 * nodes).next_power_of_two()) },
            _ => WeightSource::Fft { m: (4 * nodes).next_power_of_two() },
        }
    }

    /// Table covering offsets up to `nodes - 1` on each axis.
    pub fn build(&self, alpha: f64, dim: usize, nodes: usize) -> Result<WeightTable> {
        match *self {
            WeightSource::ClosedForm => {
                if dim != 1 {
                    return Err(Error::InvalidDim("closed-form weights exist only in 1D".into()));
                }
                weights_1d_closed_form(alpha, nodes.saturating_sub(1).max(1))
            }
            WeightSource::Fft { m } => weights_nd_fft_for_grid(alpha, dim, m, nodes),
        }
    }
}

type CacheKey = (u64, usize, WeightSource);

/// Tables keyed by the bit pattern of the order; a cached table is reused
/// whenever it reaches far enough.
#[derive(Debug, Default)]
pub struct WeightCache {
    tables: Mutex<HashMap<CacheKey, Arc<WeightTable>>>,
    reach: usize,
}

impl WeightCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds every table for at least `nodes` per axis, so a sweep over
    /// growing grids computes each order once.
    pub fn with_reach(nodes: usize) -> Self {
        Self { reach: nodes, ..Self::default() }
    }

    pub fn get_or_build(&self, alpha: f64, dim: usize, source: WeightSource, nodes: usize) -> Result<Arc<WeightTable>> {
        let key = (alpha.to_bits(), dim, source);
        let need = nodes.saturating_sub(1).max(1);
        if let Some(t) = self.tables.lock().unwrap().get(&key) {
            if t.extent() >= need {
                return Ok(t.clone());
            }
        }
        let reach = match source {
            WeightSource::Fft { m } => self.reach.min(m / 2),
            WeightSource::ClosedForm => self.reach,
        };
        let table = Arc::new(source.build(alpha, dim, nodes.max(reach))?);
        self.tables.lock().unwrap().insert(key, table.clone());
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.tables.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
