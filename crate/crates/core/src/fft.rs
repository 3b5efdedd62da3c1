//! Multi-dimensional complex FFT over row-major buffers, built from rustfft line transforms.

use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct FftNd {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl FftNd {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self { shape: shape.to_vec(), forward, inverse }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward, &self.shape, Prune::Input);
    }

    /// Unnormalized inverse transform in place.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse, &self.shape, Prune::Input);
    }

    /// Forward transform of data that vanishes outside `[0, support_p)` on every axis.
    pub fn forward_pruned(&self, data: &mut [Complex64], support: &[usize]) {
        self.run(data, &self.forward, support, Prune::Input);
    }

    /// Inverse transform that is exact only on `[0, needed_p)`; other entries are left partial.
    pub fn inverse_pruned(&self, data: &mut [Complex64], needed: &[usize]) {
        self.run(data, &self.inverse, needed, Prune::Output);
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>], limits: &[usize], prune: Prune) {
        assert_eq!(data.len(), self.len());
        assert_eq!(limits.len(), self.shape.len());
        let dim = self.shape.len();
        let mut scratch = Vec::new();
        let mut block = Vec::new();
        // axes are transformed last to first
        for axis in (0..dim).rev() {
            let n = self.shape[axis];
            if n == 1 {
                continue;
            }
            let plan = &plans[axis];
            let need = plan.get_inplace_scratch_len();
            if scratch.len() < need {
                scratch.resize(need, Complex64::default());
            }
            // zero input lines are skipped along axes not yet transformed,
            // unread output lines along axes already transformed
            let (lead, trail) = match prune {
                Prune::Input => (&limits[..axis], &self.shape[axis + 1..]),
                Prune::Output => (&self.shape[..axis], &limits[axis + 1..]),
            };
            let slabs = offsets(&self.shape[..axis], lead);
            let stride: usize = self.shape[axis + 1..].iter().product();
            if stride == 1 {
                for o in slabs {
                    plan.process_with_scratch(&mut data[o * n..(o + 1) * n], &mut scratch[..need]);
                }
                continue;
            }
            let runs = column_runs(&self.shape[axis + 1..], trail);
            block.resize((n + PAD) * BATCH, Complex64::default());
            for o in slabs {
                let slab = &mut data[o * n * stride..(o + 1) * n * stride];
                for &(start, len) in &runs {
                    for c0 in (start..start + len).step_by(BATCH) {
                        let w = BATCH.min(start + len - c0);
                        gather_transform_scatter(slab, &mut block, &mut scratch[..need], plan.as_ref(), n, stride, c0, w);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Prune {
    Input,
    Output,
}

#[allow(clippy::too_many_arguments)]
fn gather_transform_scatter(
    slab: &mut [Complex64],
    block: &mut [Complex64],
    scratch: &mut [Complex64],
    plan: &dyn Fft<f64>,
    n: usize,
    stride: usize,
    c0: usize,
    w: usize,
) {
    // padded pitch keeps power-of-two lines from landing in the same cache sets
    let pitch = n + PAD;
    for k in 0..n {
        for (b, &v) in slab[k * stride + c0..k * stride + c0 + w].iter().enumerate() {
            block[b * pitch + k] = v;
        }
    }
    for b in 0..w {
        plan.process_with_scratch(&mut block[b * pitch..b * pitch + n], scratch);
    }
    for k in 0..n {
        for (b, v) in slab[k * stride + c0..k * stride + c0 + w].iter_mut().enumerate() {
            *v = block[b * pitch + k];
        }
    }
}

/// Flat offsets of the multi-indices below `limits` in a row-major box of `shape`.
fn offsets(shape: &[usize], limits: &[usize]) -> Vec<usize> {
    let mut out = vec![0usize];
    for (&s, &l) in shape.iter().zip(limits) {
        out = out.iter().flat_map(|&o| (0..l.min(s)).map(move |i| o * s + i)).collect();
    }
    out
}

/// Contiguous `(start, len)` runs of those offsets, merged along the last axis.
fn column_runs(shape: &[usize], limits: &[usize]) -> Vec<(usize, usize)> {
    let d = shape.len();
    let last = limits[d - 1].min(shape[d - 1]);
    offsets(&shape[..d - 1], &limits[..d - 1])
        .into_iter()
        .map(|o| (o * shape[d - 1], last))
        .collect()
}

/// Lines per gathered batch along non-contiguous axes.
const BATCH: usize = 64;

const PAD: usize = 4;

/// Circulant convolution over an embedding box. Spectra live in a layout private to the
/// engine, so they are only meaningful when fed back to the engine that made them.
pub struct Convolver {
    engine: Engine,
    pool: Mutex<Vec<Vec<Complex64>>>,
}

enum Engine {
    Nd(FftNd),
    Planar(Planar),
}

impl Convolver {
    pub fn new(shape: &[usize]) -> Self {
        let engine = if shape.len() == 2 { Engine::Planar(Planar::new(shape[0], shape[1])) } else { Engine::Nd(FftNd::new(shape)) };
        Self { engine, pool: Mutex::new(Vec::new()) }
    }

    pub fn shape(&self) -> &[usize] {
        match &self.engine {
            Engine::Nd(f) => f.shape(),
            Engine::Planar(p) => &p.shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Buffer of `len` entries from the pool, contents unspecified; hand it back with `give_back`.
    pub fn take(&self, len: usize) -> Vec<Complex64> {
        let mut v = self.take_any();
        v.resize(len, Complex64::default());
        v.truncate(len);
        v
    }

    fn take_any(&self) -> Vec<Complex64> {
        self.pool.lock().map(|mut p| p.pop()).ok().flatten().unwrap_or_default()
    }

    pub fn give_back(&self, v: Vec<Complex64>) {
        if let Ok(mut p) = self.pool.lock() {
            if p.len() < 4 {
                p.push(v);
            }
        }
    }

    /// Length of the spectra this engine produces.
    pub fn spectrum_len(&self) -> usize {
        match &self.engine {
            Engine::Nd(f) => f.len(),
            Engine::Planar(p) => p.half() * p.shape[0],
        }
    }

    /// Spectrum of a full real array in row-major order over the embedding box.
    pub fn spectrum_of(&self, data: &[f64]) -> Vec<Complex64> {
        assert_eq!(data.len(), self.len());
        let shape = self.shape().to_vec();
        self.forward_real(data, &shape)
    }

    /// Real spectrum of a kernel that is even along every axis, times `scale`, in the
    /// layout `inverse_product` expects.
    pub fn kernel_spectrum(&self, data: &[f64], scale: f64) -> Vec<f64> {
        let hat = self.spectrum_of(data);
        let out = match &self.engine {
            Engine::Nd(_) => hat.iter().map(|c| c.re * scale).collect(),
            Engine::Planar(p) => {
                // only the quarter `k_p <= L_p / 2` is kept
                let [l0, l1] = p.shape;
                let (q0, q1) = (l0 / 2 + 1, l1 / 2 + 1);
                (0..q1).flat_map(|c| (0..q0).map(move |k| c * l0 + k)).map(|i| hat[i].re * scale).collect()
            }
        };
        self.give_back(hat);
        out
    }

    /// Spectrum of `u`, a row-major array over `[0, n_p)` padded with zeros.
    pub fn forward_real(&self, u: &[f64], n: &[usize]) -> Vec<Complex64> {
        let mut spec = self.take(self.spectrum_len());
        match &self.engine {
            Engine::Nd(f) => {
                spec.fill(Complex64::default());
                for_each_interior(n, f.shape(), |j, e| spec[e] = Complex64::new(u[j], 0.0));
                f.forward_pruned(&mut spec, n);
            }
            Engine::Planar(p) => {
                let mut work = self.take_any();
                p.forward(u, [n[0], n[1]], &mut spec, &mut work);
                self.give_back(work);
            }
        }
        spec
    }

    /// Inverse transform of `spec * (ka + i kb)` (or `spec * ka`), read back on `[0, n_p)`.
    /// `ka` and `kb` come from `kernel_spectrum`;
    /// `sink(j, value)` receives the value at row-major interior index `j`.
    pub fn inverse_product<F: FnMut(usize, Complex64)>(
        &self,
        spec: &[Complex64],
        ka: &[f64],
        kb: Option<&[f64]>,
        n: &[usize],
        mut sink: F,
    ) {
        let mut work = self.take_any();
        match &self.engine {
            Engine::Nd(f) => {
                work.resize(spec.len(), Complex64::default());
                match kb {
                    Some(kb) => {
                        for (((w, &s), &a), &b) in work.iter_mut().zip(spec).zip(ka).zip(kb) {
                            *w = s * Complex64::new(a, b);
                        }
                    }
                    None => {
                        for ((w, &s), &a) in work.iter_mut().zip(spec).zip(ka) {
                            *w = s * a;
                        }
                    }
                }
                f.inverse_pruned(&mut work, n);
                for_each_interior(n, f.shape(), |j, e| sink(j, work[e]));
            }
            Engine::Planar(p) => p.inverse_product(spec, ka, kb, [n[0], n[1]], &mut work, sink),
        }
        self.give_back(work);
    }
}

/// Calls `f(interior_flat, embedded_flat)` for every node of `[0, n_p)` inside a box of `shape`.
pub(crate) fn for_each_interior<F: FnMut(usize, usize)>(n: &[usize], shape: &[usize], mut f: F) {
    let d = n.len();
    let count: usize = n.iter().product();
    let mut idx = [0usize; 3];
    for j in 0..count {
        let mut e = 0;
        for p in 0..d {
            e = e * shape[p] + idx[p];
        }
        f(j, e);
        for p in (0..d).rev() {
            idx[p] += 1;
            if idx[p] < n[p] {
                break;
            }
            idx[p] = 0;
        }
    }
}

/// 2D engine storing spectra column-major (`spec[c * L0 + k]`), so each transform
/// needs one strided pass and the kernel product rides along with it. Inputs are
/// real, so only columns `c <= L1 / 2` are kept; the rest are conjugate mirrors.
struct Planar {
    shape: [usize; 2],
    f0: Arc<dyn Fft<f64>>,
    f1: Arc<dyn Fft<f64>>,
    i0: Arc<dyn Fft<f64>>,
    i1: Arc<dyn Fft<f64>>,
    scratch: usize,
}

impl Planar {
    fn new(l0: usize, l1: usize) -> Self {
        let mut planner = FftPlanner::new();
        let (f0, f1) = (planner.plan_fft_forward(l0), planner.plan_fft_forward(l1));
        let (i0, i1) = (planner.plan_fft_inverse(l0), planner.plan_fft_inverse(l1));
        let scratch = [&f0, &f1, &i0, &i1].iter().map(|p| p.get_inplace_scratch_len()).max().unwrap_or(0);
        Self { shape: [l0, l1], f0, f1, i0, i1, scratch }
    }

    fn half(&self) -> usize {
        self.shape[1] / 2 + 1
    }

    /// Work layout: `rows` (pitch `L1 + PAD`), then the column block, then scratch.
    fn split<'a>(&self, rows: usize, work: &'a mut Vec<Complex64>) -> (&'a mut [Complex64], &'a mut [Complex64], &'a mut [Complex64]) {
        let [l0, l1] = self.shape;
        let a = rows * (l1 + PAD);
        let b = (l0 + PAD) * BATCH;
        work.resize(a + b + self.scratch, Complex64::default());
        let (r, rest) = work.split_at_mut(a);
        let (blk, s) = rest.split_at_mut(b);
        (r, blk, s)
    }

    fn forward(&self, u: &[f64], n: [usize; 2], spec: &mut [Complex64], work: &mut Vec<Complex64>) {
        let [l0, l1] = self.shape;
        let rp = l1 + PAD;
        let cp = l0 + PAD;
        let (rows, block, scratch) = self.split(n[0] + 1, work);
        let half = self.half();
        // two real rows per complex transform, split by conjugate symmetry
        for i in (0..n[0]).step_by(2) {
            let (head, tail) = rows.split_at_mut((i + 1) * rp);
            let line = &mut head[i * rp..i * rp + l1];
            let x = &u[i * n[1]..(i + 1) * n[1]];
            let y = if i + 1 < n[0] { &u[(i + 1) * n[1]..(i + 2) * n[1]] } else { &u[..0] };
            for (j, v) in line[..n[1]].iter_mut().enumerate() {
                *v = Complex64::new(x[j], y.get(j).copied().unwrap_or(0.0));
            }
            line[n[1]..].fill(Complex64::default());
            self.f1.process_with_scratch(line, scratch);
            let next = &mut tail[..half];
            for k in (0..half).rev() {
                let z = line[k];
                let m = line[(l1 - k) % l1].conj();
                line[k] = 0.5 * (z + m);
                next[k] = Complex64::new(0.0, -0.5) * (z - m);
            }
        }
        for c0 in (0..half).step_by(BATCH) {
            let w = BATCH.min(half - c0);
            for k in 0..n[0] {
                for (b, &v) in rows[k * rp + c0..k * rp + c0 + w].iter().enumerate() {
                    block[b * cp + k] = v;
                }
            }
            for b in 0..w {
                let line = &mut block[b * cp..b * cp + l0];
                line[n[0]..].fill(Complex64::default());
                self.f0.process_with_scratch(line, scratch);
                spec[(c0 + b) * l0..(c0 + b + 1) * l0].copy_from_slice(line);
            }
        }
    }

    fn inverse_product<F: FnMut(usize, Complex64)>(
        &self,
        spec: &[Complex64],
        ka: &[f64],
        kb: Option<&[f64]>,
        n: [usize; 2],
        work: &mut Vec<Complex64>,
        mut sink: F,
    ) {
        let [l0, l1] = self.shape;
        let rp = l1 + PAD;
        let cp = l0 + PAD;
        let q0 = l0 / 2 + 1;
        let (rows, block, scratch) = self.split(n[0], work);
        for c0 in (0..l1).step_by(BATCH) {
            let w = BATCH.min(l1 - c0);
            for b in 0..w {
                let c = c0 + b;
                let cm = c.min(l1 - c);
                let fold = cm * q0;
                let s = &spec[cm * l0..(cm + 1) * l0];
                let line = &mut block[b * cp..b * cp + l0];
                if cm == c {
                    line.copy_from_slice(s);
                } else {
                    line[0] = s[0].conj();
                    for k in 1..l0 {
                        line[k] = s[l0 - k].conj();
                    }
                }
                let a = &ka[fold..fold + q0];
                // rows above L0 / 2 mirror back onto the stored quarter
                match kb.map(|kb| &kb[fold..fold + q0]) {
                    Some(bq) => {
                        for k in 0..q0 {
                            line[k] *= Complex64::new(a[k], bq[k]);
                        }
                        for k in q0..l0 {
                            line[k] *= Complex64::new(a[l0 - k], bq[l0 - k]);
                        }
                    }
                    None => {
                        for k in 0..q0 {
                            line[k] *= a[k];
                        }
                        for k in q0..l0 {
                            line[k] *= a[l0 - k];
                        }
                    }
                }
                self.i0.process_with_scratch(line, scratch);
            }
            for k in 0..n[0] {
                for (b, v) in rows[k * rp + c0..k * rp + c0 + w].iter_mut().enumerate() {
                    *v = block[b * cp + k];
                }
            }
        }
        for k in 0..n[0] {
            let line = &mut rows[k * rp..k * rp + l1];
            self.i1.process_with_scratch(line, scratch);
            for (j, &v) in line[..n[1]].iter().enumerate() {
                sink(k * n[1] + j, v);
            }
        }
    }
}
