//! Config-driven experiments: weight dumps, apply convergence against the
//! Gaussian oracle, elliptic and time-dependent convergence tables, and
//! single-step benchmarks.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::expr::{order_field, Expr};
use crate::grid::{make_mask, max_norm, sample_order, GridFunction, OrderField, UniformGrid};
use crate::lowrank::{build_plan, estimate_rank, DEFAULT_RANK};
use crate::operator::{operator_timing, ApplyMode, OperatorSettings, RankChoice, VariableOrderOperator};
use crate::oracle::{bump, gaussian_frac_lap, reference_rhs_case1, restrict};
use crate::solver::{
    evolve, solve_elliptic, write_observations_csv, EllipticProblem, KrylovConfig, TimeStepper, Trajectory,
};
use crate::weights::{WeightCache, WeightSource, WeightTable, DEFAULT_QUADRATURE};

/// Named initial data for `evolve` and `bench`.
pub const INITIAL_PRESETS: &[(&str, &str)] = &[
    ("gaussian", "exp(-|x|^2)"),
    ("one", "1"),
    ("zero", "0"),
    (
        "bubbles",
        "1 - tanh((sqrt((x1 - 0.42)^2 + (x2 - 0.42)^2) - 0.1)/0.02) - tanh((sqrt((x1 - 0.58)^2 + (x2 - 0.58)^2) - 0.1)/0.02)",
    ),
];

/// Frequencies of the `cosine` initial data, one per axis.
const COSINE_FREQ: [u32; 3] = [3, 11, 2];

/// Expression for named or literal initial data in `dim` dimensions.
fn initial_expr(spec: &str, dim: usize) -> Result<Expr> {
    if spec == "cosine" {
        let src = (0..dim.min(3))
            .map(|p| format!("(0.25*(1 + cos({}*pi*x{} - pi))^2)", 2 * COSINE_FREQ[p], p + 1))
            .collect::<Vec<_>>()
            .join("*");
        return Expr::parse(&src, dim);
    }
    Expr::parse(resolve(INITIAL_PRESETS, spec), dim)
}

/// Named domain predicates for masked runs.
pub const MASK_PRESETS: &[(&str, &str)] = &[("lshape", "max(abs(x1), abs(x2)) < 0.75 && !(x1 > 0 && x2 > 0)")];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Weights,
    #[serde(alias = "apply-conv")]
    ApplyConvergence,
    Elliptic,
    Evolve,
    Bench,
}

impl ExperimentKind {
    fn stem(self) -> &'static str {
        match self {
            ExperimentKind::Weights => "weights",
            ExperimentKind::ApplyConvergence => "apply_convergence",
            ExperimentKind::Elliptic => "elliptic",
            ExperimentKind::Evolve => "evolve",
            ExperimentKind::Bench => "bench",
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    pub mode: Option<ApplyMode>,
    pub rank: Option<usize>,
    /// Pick the rank by `estimate_rank` with this tolerance instead.
    pub rank_tol: Option<f64>,
    /// Trapezoidal points per axis for the weights; closed form in 1D when absent.
    pub quadrature: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub stagnation_window: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let k = KrylovConfig::default();
        Self { tol: k.tol, max_iter: k.max_iter, stagnation_window: k.stagnation_window }
    }
}

impl SolverConfig {
    pub fn krylov(&self) -> KrylovConfig {
        KrylovConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            stagnation_window: self.stagnation_window,
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EllipticCase {
    /// Bump solution, right-hand side from a fine reference grid.
    Manufactured,
    /// Constant right-hand side, error against the half-step solution.
    Richardson,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EllipticConfig {
    pub case: EllipticCase,
    pub beta: f64,
    pub reference_step: f64,
    /// Reaction coefficient `b`; 1 for the manufactured case, 0 otherwise.
    pub reaction: Option<f64>,
    pub rhs: f64,
}

impl Default for EllipticConfig {
    fn default() -> Self {
        Self { case: EllipticCase::Manufactured, beta: 4.0, reference_step: 1.0 / 512.0, reaction: None, rhs: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    CrankNicolson,
    AllenCahn,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    pub scheme: SchemeKind,
    /// Step on the first grid; finer grids scale it with `h`.
    pub dt: f64,
    pub t_final: f64,
    pub kappa: f64,
    pub stabilization: f64,
    pub diffusivity: f64,
    /// Preset name or expression.
    pub initial: String,
    /// Preset name or predicate expression selecting the unknowns.
    pub mask: Option<String>,
    /// Dump every k-th state; none when absent.
    pub frame_every: Option<usize>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            scheme: SchemeKind::CrankNicolson,
            dt: 0.125,
            t_final: 0.5,
            kappa: 0.01,
            stabilization: 2.0,
            diffusivity: 1.0,
            initial: "gaussian".into(),
            mask: None,
            frame_every: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Time step; `1/(N+1)` when absent.
    pub dt: Option<f64>,
    pub initial: String,
    pub apply_reps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { dt: None, initial: "cosine".into(), apply_reps: 3 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    pub alphas: Vec<f64>,
    pub extent: usize,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self { alphas: vec![1.0], extent: 16 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub dim: usize,
    /// Cube `[lower, upper]^dim`.
    #[serde(default = "default_domain")]
    pub domain: [f64; 2],
    /// Interior nodes per axis, strictly increasing.
    #[serde(default)]
    pub sizes: Vec<usize>,
    /// Preset name or expression in `x1..x3`, `|x|`.
    #[serde(default = "default_order")]
    pub order: String,
    #[serde(default)]
    pub operator: OperatorConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub elliptic: EllipticConfig,
    #[serde(default)]
    pub evolve: EvolveConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    /// File stem for the outputs; defaults to the kind.
    pub output: Option<String>,
}

fn default_domain() -> [f64; 2] {
    [-1.0, 1.0]
}

fn default_order() -> String {
    "1".into()
}

fn resolve<'a>(presets: &[(&str, &'a str)], spec: &'a str) -> &'a str {
    presets.iter().find(|(n, _)| *n == spec).map_or(spec, |(_, e)| e)
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            domain: default_domain(),
            sizes: Vec::new(),
            order: default_order(),
            operator: OperatorConfig::default(),
            solver: SolverConfig::default(),
            elliptic: EllipticConfig::default(),
            evolve: EvolveConfig::default(),
            bench: BenchConfig::default(),
            weights: WeightsConfig::default(),
            output: None,
        }
    }

    pub fn stem(&self) -> String {
        self.output.clone().unwrap_or_else(|| self.kind.stem().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(cfg_err(format!("dimension {} not in 1..=3", self.dim)));
        }
        let [lo, hi] = self.domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(cfg_err(format!("domain [{lo}, {hi}] is empty")));
        }
        if self.operator.rank.is_some() && self.operator.rank_tol.is_some() {
            return Err(cfg_err("give either rank or rank_tol, not both"));
        }
        if self.operator.rank == Some(0) {
            return Err(cfg_err("rank must be at least 1"));
        }
        if let Some(m) = self.operator.quadrature {
            if m < 2 || !m.is_power_of_two() {
                return Err(cfg_err(format!("quadrature {m} is not a power of two >= 2")));
            }
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return Err(cfg_err("solver needs tol > 0 and max_iter >= 1"));
        }
        if self.kind == ExperimentKind::Weights {
            if self.weights.alphas.is_empty() || self.weights.extent == 0 {
                return Err(cfg_err("weights need at least one alpha and extent >= 1"));
            }
            if let Some(&a) = self.weights.alphas.iter().find(|&&a| !(a > 0.0 && a <= 2.0)) {
                return Err(Error::OrderOutOfRange { value: a, at: None });
            }
            return Ok(());
        }
        if self.sizes.is_empty() || self.sizes[0] == 0 {
            return Err(cfg_err("sizes must be a nonempty list of positive node counts"));
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(cfg_err(format!("sizes {:?} are not strictly increasing", self.sizes)));
        }
        order_field(&self.order, self.dim)?;
        match self.kind {
            ExperimentKind::Elliptic => {
                let e = &self.elliptic;
                if e.case == EllipticCase::Manufactured && !(e.beta >= 2.0 && e.reference_step > 0.0) {
                    return Err(cfg_err("manufactured case needs beta >= 2 and reference_step > 0"));
                }
                if e.reaction.is_some_and(|b| !(b >= 0.0)) {
                    return Err(cfg_err("reaction must be nonnegative"));
                }
            }
            ExperimentKind::Evolve => {
                let v = &self.evolve;
                if !(v.dt > 0.0 && v.t_final >= v.dt) {
                    return Err(cfg_err(format!("need dt > 0 and t_final >= dt (dt {}, t_final {})", v.dt, v.t_final)));
                }
                if v.scheme == SchemeKind::AllenCahn && !(v.kappa > 0.0 && v.stabilization >= 0.0) {
                    return Err(cfg_err("Allen-Cahn needs kappa > 0 and stabilization >= 0"));
                }
                if v.frame_every == Some(0) {
                    return Err(cfg_err("frame_every must be at least 1"));
                }
                initial_expr(&v.initial, self.dim)?;
                if let Some(m) = &v.mask {
                    Expr::parse(resolve(MASK_PRESETS, m), self.dim)?;
                }
            }
            ExperimentKind::Bench => {
                if self.bench.dt.is_some_and(|dt| !(dt > 0.0)) {
                    return Err(cfg_err("bench dt must be positive"));
                }
                initial_expr(&self.bench.initial, self.dim)?;
            }
            _ => {}
        }
        Ok(())
    }

    fn max_nodes(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(1)
    }

    pub fn grid(&self, n: usize) -> Result<Arc<UniformGrid>> {
        Ok(Arc::new(UniformGrid::cube(self.dim, self.domain[0], self.domain[1], n)?))
    }

    pub fn order_field(&self) -> Result<OrderField> {
        order_field(&self.order, self.dim)
    }

    fn source(&self) -> Option<WeightSource> {
        self.operator.quadrature.map(|m| WeightSource::Fft { m })
    }

    /// Settings whose low-rank plan covers the order sampled on every grid in `grids`.
    pub fn settings_for(&self, field: &OrderField, grids: &[&UniformGrid]) -> Result<OperatorSettings> {
        let mode = self.operator.mode.unwrap_or(ApplyMode::Fast);
        let rank = match (self.operator.rank, self.operator.rank_tol) {
            (_, Some(eps)) => RankChoice::Estimate(eps),
            (Some(r), None) => RankChoice::Fixed(r),
            (None, None) => RankChoice::Fixed(DEFAULT_RANK),
        };
        let mut settings = OperatorSettings { mode, rank, source: self.source(), plan: None };
        if mode == ApplyMode::Fast && !grids.is_empty() {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            let mut h_min = f64::INFINITY;
            for g in grids {
                let s = sample_order(field, g)?;
                lo = lo.min(s.alpha_min());
                hi = hi.max(s.alpha_max());
                h_min = h_min.min(g.isotropic_step()?);
            }
            let r = match rank {
                RankChoice::Fixed(r) => r,
                RankChoice::Estimate(eps) => estimate_rank(lo, hi, self.dim, h_min, eps)?.0,
            };
            settings.plan = Some(build_plan(lo, hi, r)?);
        }
        Ok(settings)
    }
}

/// One line of a convergence table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub e_inf: f64,
    /// `log2(E(2h) / E(h))`; absent on the first row.
    pub order: Option<f64>,
}

pub fn convergence_rows(steps: &[f64], errors: &[f64]) -> Vec<ConvergenceRow> {
    steps
        .iter()
        .zip(errors)
        .enumerate()
        .map(|(i, (&h, &e))| ConvergenceRow {
            h,
            e_inf: e,
            order: (i > 0).then(|| (errors[i - 1] / e).ln() / (steps[i - 1] / h).ln()),
        })
        .collect()
}

pub fn write_convergence_csv<W: Write>(mut out: W, rows: &[ConvergenceRow]) -> std::io::Result<()> {
    writeln!(out, "h,E_inf,order")?;
    for r in rows {
        match r.order {
            Some(o) => writeln!(out, "{:.6e},{:.6e},{:.6e}", r.h, r.e_inf, o)?,
            None => writeln!(out, "{:.6e},{:.6e},", r.h, r.e_inf)?,
        }
    }
    Ok(())
}

/// `E_inf = max_j |(A_h u)_j - (-Delta)^(alpha_j/2) u(x_j)|` for `u = exp(-|x|^2)`.
pub fn run_apply_convergence(cfg: &ExperimentConfig) -> Result<Vec<ConvergenceRow>> {
    cfg.validate()?;
    let field = cfg.order_field()?;
    let grids = cfg.sizes.iter().map(|&n| cfg.grid(n)).collect::<Result<Vec<_>>>()?;
    let settings = cfg.settings_for(&field, &grids.iter().map(|g| g.as_ref()).collect::<Vec<_>>())?;
    let cache = WeightCache::with_reach(cfg.max_nodes());
    let mut steps = Vec::new();
    let mut errors = Vec::new();
    for g in &grids {
        let op = VariableOrderOperator::with_cache(g.clone(), &field, &settings, &cache)?;
        let u = g.sample(|x| (-x.iter().map(|v| v * v).sum::<f64>()).exp());
        let v = op.apply_slice(&u)?;
        let mut p = vec![0.0; g.dim()];
        let mut worst: f64 = 0.0;
        for (j, (&vj, &a)) in v.iter().zip(op.alphas()).enumerate() {
            g.point_into(j, &mut p);
            worst = worst.max((vj - gaussian_frac_lap(&p, a)?).abs());
        }
        steps.push(g.isotropic_step()?);
        errors.push(worst);
    }
    Ok(convergence_rows(&steps, &errors))
}

fn elliptic_solve(
    cfg: &ExperimentConfig,
    grid: &Arc<UniformGrid>,
    field: &OrderField,
    settings: &OperatorSettings,
    cache: &WeightCache,
    rhs: Vec<f64>,
    reaction: f64,
) -> Result<Vec<f64>> {
    let op = VariableOrderOperator::with_cache(grid.clone(), field, settings, cache)?;
    let problem = EllipticProblem {
        operator: &op,
        reaction: (reaction != 0.0).then(|| vec![reaction; grid.len()]),
        rhs,
    };
    Ok(solve_elliptic(&problem, &cfg.solver.krylov())?.u)
}

/// Convergence table for `A u + b u = f`.
///
/// `Manufactured` compares with the bump solution; `Richardson` compares each
/// solution with the one on the grid with `2N + 1` nodes per axis.
pub fn run_elliptic(cfg: &ExperimentConfig) -> Result<Vec<ConvergenceRow>> {
    cfg.validate()?;
    let e = &cfg.elliptic;
    let field = cfg.order_field()?;
    // Richardson solves on 2N + 1 as well
    let reach = match e.case {
        EllipticCase::Manufactured => cfg.max_nodes(),
        EllipticCase::Richardson => 2 * cfg.max_nodes() + 1,
    };
    let cache = WeightCache::with_reach(reach);
    let grids = cfg.sizes.iter().map(|&n| cfg.grid(n)).collect::<Result<Vec<_>>>()?;
    let mut steps = Vec::new();
    let mut errors = Vec::new();
    match e.case {
        EllipticCase::Manufactured => {
            let reaction = e.reaction.unwrap_or(1.0);
            let reference_template = &grids[0];
            let cells = (cfg.domain[1] - cfg.domain[0]) / e.reference_step;
            let n_ref = cells.round() as usize - 1;
            let fine = cfg.grid(n_ref)?;
            let mut all: Vec<&UniformGrid> = grids.iter().map(|g| g.as_ref()).collect();
            all.push(&fine);
            let settings = cfg.settings_for(&field, &all)?;
            let mut reference = reference_rhs_case1(reference_template, &field, e.beta, e.reference_step, &settings, &cache)?;
            if reaction != 1.0 {
                // the reference holds A u + u
                let u = reference.reference.grid().sample(|x| bump(x, e.beta));
                for (f, ui) in reference.reference.values_mut().iter_mut().zip(&u) {
                    *f += (reaction - 1.0) * ui;
                }
            }
            for g in &grids {
                let f = reference.restrict(g)?;
                let u = elliptic_solve(cfg, g, &field, &settings, &cache, f.into_values(), reaction)?;
                let exact = g.sample(|x| bump(x, e.beta));
                let err = u.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                steps.push(g.isotropic_step()?);
                errors.push(err);
            }
        }
        EllipticCase::Richardson => {
            let reaction = e.reaction.unwrap_or(0.0);
            let refined: Vec<Arc<UniformGrid>> = grids
                .iter()
                .map(|g| cfg.grid(2 * g.n_per_dim()[0] + 1))
                .collect::<Result<_>>()?;
            let all: Vec<&UniformGrid> = grids.iter().chain(&refined).map(|g| g.as_ref()).collect();
            let settings = cfg.settings_for(&field, &all)?;
            let mut solved: BTreeMap<usize, GridFunction> = BTreeMap::new();
            for g in grids.iter().chain(&refined) {
                let n = g.n_per_dim()[0];
                if solved.contains_key(&n) {
                    continue;
                }
                let u = elliptic_solve(cfg, g, &field, &settings, &cache, vec![e.rhs; g.len()], reaction)?;
                solved.insert(n, GridFunction::new(g.clone(), u)?);
            }
            for g in &grids {
                let n = g.n_per_dim()[0];
                let coarse = &solved[&n];
                let fine = restrict(&solved[&(2 * n + 1)], g)?;
                let err = max_norm(
                    &coarse.values().iter().zip(fine.values()).map(|(a, b)| a - b).collect::<Vec<_>>(),
                );
                steps.push(g.isotropic_step()?);
                errors.push(err);
            }
        }
    }
    Ok(convergence_rows(&steps, &errors))
}

/// Result of one `evolve` experiment.
#[derive(Debug, Clone)]
pub struct EvolveReport {
    /// `(N, trajectory)` for every configured size.
    pub runs: Vec<(usize, Trajectory)>,
    /// Differences to the run with `2N + 1` nodes and half the step, when more than one size is given.
    pub rows: Vec<ConvergenceRow>,
}

fn write_frame(path: &Path, grid: &UniformGrid, u: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let last = *grid.n_per_dim().last().expect("dim >= 1");
    for line in u.chunks(last) {
        let row: Vec<String> = line.iter().map(|v| format!("{v:.6e}")).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

fn evolve_one(
    cfg: &ExperimentConfig,
    grid: &Arc<UniformGrid>,
    dt: f64,
    field: &OrderField,
    settings: &OperatorSettings,
    cache: &WeightCache,
    frames: Option<&Path>,
) -> Result<Trajectory> {
    let v = &cfg.evolve;
    let mut op = VariableOrderOperator::with_cache(grid.clone(), field, settings, cache)?;
    if let Some(m) = &v.mask {
        let pred = Expr::parse(resolve(MASK_PRESETS, m), cfg.dim)?;
        op = op.with_mask(make_mask(grid, |x| pred.eval(x) != 0.0)?)?;
    }
    let mut stepper = match v.scheme {
        SchemeKind::CrankNicolson => TimeStepper::crank_nicolson(dt, v.t_final),
        SchemeKind::AllenCahn => TimeStepper::allen_cahn(dt, v.t_final, v.kappa, v.stabilization),
    };
    stepper.diffusivity = v.diffusivity;
    stepper.krylov = cfg.solver.krylov();
    let init = initial_expr(&v.initial, cfg.dim)?;
    let u0 = grid.sample(|x| init.eval(x));
    match (frames, v.frame_every) {
        (Some(dir), Some(every)) => {
            fs::create_dir_all(dir)?;
            let mut dump = |step: usize, _t: f64, u: &[f64]| -> Result<()> {
                if step.is_multiple_of(every) {
                    write_frame(&dir.join(format!("step_{step:06}.txt")), grid, u)?;
                }
                Ok(())
            };
            evolve(&stepper, &op, &u0, Some(&mut dump))
        }
        _ => evolve(&stepper, &op, &u0, None),
    }
}

/// Runs the configured time stepper on every size. With two or more sizes the
/// Richardson error `|u(h, dt) - u(h/2, dt/2)|_inf` at the final time is tabulated.
pub fn run_evolve(cfg: &ExperimentConfig, frames: Option<&Path>) -> Result<EvolveReport> {
    cfg.validate()?;
    let v = &cfg.evolve;
    let field = cfg.order_field()?;
    let grids = cfg.sizes.iter().map(|&n| cfg.grid(n)).collect::<Result<Vec<_>>>()?;
    let reach = if grids.len() > 1 { 2 * cfg.max_nodes() + 1 } else { cfg.max_nodes() };
    let cache = WeightCache::with_reach(reach);
    let h0 = grids[0].isotropic_step()?;
    let refine = grids.len() > 1;
    let refined: Vec<Arc<UniformGrid>> = if refine {
        grids.iter().map(|g| cfg.grid(2 * g.n_per_dim()[0] + 1)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let all: Vec<&UniformGrid> = grids.iter().chain(&refined).map(|g| g.as_ref()).collect();
    let settings = cfg.settings_for(&field, &all)?;
    let mut done: BTreeMap<usize, Trajectory> = BTreeMap::new();
    for g in grids.iter().chain(&refined) {
        let n = g.n_per_dim()[0];
        if done.contains_key(&n) {
            continue;
        }
        let dt = v.dt * g.isotropic_step()? / h0;
        let dir = frames.map(|d| d.join(format!("n{n}")));
        done.insert(n, evolve_one(cfg, g, dt, &field, &settings, &cache, dir.as_deref())?);
    }
    let mut rows = Vec::new();
    if refine {
        let mut steps = Vec::new();
        let mut errors = Vec::new();
        for g in &grids {
            let n = g.n_per_dim()[0];
            let fine_grid = cfg.grid(2 * n + 1)?;
            let fine = GridFunction::new(fine_grid, done[&(2 * n + 1)].final_state.clone())?;
            let fine = restrict(&fine, g)?;
            let diff: Vec<f64> = done[&n].final_state.iter().zip(fine.values()).map(|(a, b)| a - b).collect();
            steps.push(g.isotropic_step()?);
            errors.push(max_norm(&diff));
        }
        rows = convergence_rows(&steps, &errors);
    }
    let runs = cfg.sizes.iter().map(|n| (*n, done[n].clone())).collect();
    Ok(EvolveReport { runs, rows })
}

/// One benchmark line: a single Crank-Nicolson step and the mean apply time.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub unknowns: usize,
    pub dt: f64,
    pub rank: usize,
    pub step_seconds: f64,
    pub iterations: usize,
    pub apply_seconds: f64,
}

pub fn run_bench(cfg: &ExperimentConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let field = cfg.order_field()?;
    let init = initial_expr(&cfg.bench.initial, cfg.dim)?;
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let g = cfg.grid(n)?;
        let settings = cfg.settings_for(&field, &[g.as_ref()])?;
        let op = VariableOrderOperator::new(g.clone(), &field, &settings)?;
        let dt = cfg.bench.dt.unwrap_or(1.0 / (n + 1) as f64);
        let mut stepper = TimeStepper::crank_nicolson(dt, dt);
        stepper.krylov = cfg.solver.krylov();
        let u0 = g.sample(|x| init.eval(x));
        let start = Instant::now();
        let tr = evolve(&stepper, &op, &u0, None)?;
        let step_seconds = start.elapsed().as_secs_f64();
        let timing = operator_timing(&op, cfg.bench.apply_reps)?;
        rows.push(BenchRow {
            n,
            unknowns: g.len(),
            dt,
            rank: op.rank().unwrap_or(0),
            step_seconds,
            iterations: tr.observations.last().map_or(0, |o| o.iterations),
            apply_seconds: timing.seconds_per_apply,
        });
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(mut out: W, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(out, "n,unknowns,dt,rank,step_seconds,iterations,apply_seconds")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6e},{},{:.6e},{},{:.6e}",
            r.n, r.unknowns, r.dt, r.rank, r.step_seconds, r.iterations, r.apply_seconds
        )?;
    }
    Ok(())
}

/// Weight tables for every configured order, truncated to the configured extent.
pub fn run_weights(cfg: &ExperimentConfig) -> Result<Vec<WeightTable>> {
    cfg.validate()?;
    let w = &cfg.weights;
    let source = match (cfg.dim, cfg.source()) {
        (_, Some(s)) => s,
        (1, None) => WeightSource::ClosedForm,
        (2, None) => WeightSource::Fft { m: DEFAULT_QUADRATURE },
        (_, None) => WeightSource::Fft { m: (4 * w.extent).next_power_of_two().max(64) },
    };
    w.alphas
        .iter()
        .map(|&a| Ok(source.build(a, cfg.dim, w.extent + 1)?.truncated(w.extent)))
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Runs the experiment and writes its CSV files into `out_dir`; returns the written paths.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let stem = cfg.stem();
    let mut written = Vec::new();
    match cfg.kind {
        ExperimentKind::Weights => {
            for t in run_weights(cfg)? {
                let path = out_dir.join(format!("{stem}_alpha{}.csv", t.alpha()));
                let mut f = create(&path)?;
                t.write_csv(&mut f)?;
                f.flush()?;
                written.push(path);
            }
        }
        ExperimentKind::ApplyConvergence | ExperimentKind::Elliptic => {
            let rows = if cfg.kind == ExperimentKind::Elliptic { run_elliptic(cfg)? } else { run_apply_convergence(cfg)? };
            let path = out_dir.join(format!("{stem}.csv"));
            let mut f = create(&path)?;
            write_convergence_csv(&mut f, &rows)?;
            f.flush()?;
            written.push(path);
        }
        ExperimentKind::Evolve => {
            let frames = cfg.evolve.frame_every.map(|_| out_dir.join(format!("{stem}_frames")));
            let report = run_evolve(cfg, frames.as_deref())?;
            for (n, tr) in &report.runs {
                let path = out_dir.join(format!("{stem}_n{n}.csv"));
                let mut f = create(&path)?;
                write_observations_csv(&mut f, &tr.observations)?;
                f.flush()?;
                written.push(path);
            }
            if !report.rows.is_empty() {
                let path = out_dir.join(format!("{stem}.csv"));
                let mut f = create(&path)?;
                write_convergence_csv(&mut f, &report.rows)?;
                f.flush()?;
                written.push(path);
            }
            written.extend(frames);
        }
        ExperimentKind::Bench => {
            let rows = run_bench(cfg)?;
            let path = out_dir.join(format!("{stem}.csv"));
            let mut f = create(&path)?;
            write_bench_csv(&mut f, &rows)?;
            f.flush()?;
            written.push(path);
        }
    }
    Ok(written)
}
