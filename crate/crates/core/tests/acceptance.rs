//! Acceptance run: one PASS/FAIL line per criterion. Set `ACCEPTANCE_STRICT` for a
//! nonzero exit when any fails, and `ACCEPTANCE_ONLY=3,6` to pick criteria.
//! Tolerances are fixed here; nothing is tuned to the measured values.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varfrac::experiment::{
    run_apply_convergence, run_bench, run_elliptic, run_evolve, ConvergenceRow, EllipticCase, ExperimentConfig,
    ExperimentKind,
};
use varfrac::expr::order_field;
use varfrac::grid::UniformGrid;
use varfrac::operator::{loglog_slope, operator_timing, OperatorSettings, RankChoice, VariableOrderOperator};
use varfrac::oracle::quadrature::integrate;
use varfrac::oracle::{gaussian_frac_lap, integral_frac_lap, IntegralOptions};
use varfrac::solver::{dense_solve, solve_elliptic, EllipticProblem, KrylovConfig};
use varfrac::weights::{check_decay, weights_1d_closed_form, weights_nd_fft, DecayReport, WeightSource};
use varfrac::Result;

struct Check {
    ok: bool,
    detail: String,
}

impl Check {
    fn new() -> Self {
        Self { ok: true, detail: String::new() }
    }

    /// Records one sub-check.
    fn expect(&mut self, ok: bool, what: impl AsRef<str>) {
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail.push_str(what.as_ref());
        if !ok {
            self.ok = false;
            self.detail.push_str(" [x]");
        }
    }

    fn note(&mut self, what: impl AsRef<str>) {
        self.expect(true, what);
    }
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target.abs()
}

fn orders(rows: &[ConvergenceRow]) -> Vec<f64> {
    rows.iter().filter_map(|r| r.order).collect()
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("({})", parts.join(", "))
}

fn convergence(dim: usize, domain: [f64; 2], sizes: &[usize], order: &str) -> Result<Vec<ConvergenceRow>> {
    let mut cfg = ExperimentConfig::new(ExperimentKind::ApplyConvergence, dim);
    cfg.domain = domain;
    cfg.sizes = sizes.to_vec();
    cfg.order = order.into();
    run_apply_convergence(&cfg)
}

fn richardson(order: &str, sizes: &[usize]) -> Result<Vec<ConvergenceRow>> {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Elliptic, 2);
    cfg.sizes = sizes.to_vec();
    cfg.order = order.into();
    cfg.elliptic.case = EllipticCase::Richardson;
    run_elliptic(&cfg)
}

fn c1_weights() -> Result<Check> {
    let mut c = Check::new();
    let mut worst: f64 = 0.0;
    for alpha in [0.5, 1.0, 1.5] {
        let t = weights_1d_closed_form(alpha, 64)?;
        for n in 0..=64usize {
            // a_n = (1/pi) int_0^pi (2 sin(x/2))^alpha cos(n x) dx, split at the zeros of cos(n x)
            let cuts = 2 * n.max(1);
            let mut q = 0.0;
            for k in 0..cuts {
                let (a, b) = (PI * k as f64 / cuts as f64, PI * (k + 1) as f64 / cuts as f64);
                q += integrate(|x| (2.0 * (0.5 * x).sin()).powf(alpha) * (n as f64 * x).cos(), a, b, 1e-15, 4000)?;
            }
            worst = worst.max((t.at(&[n]) - q / PI).abs());
        }
    }
    c.expect(worst <= 1e-10, format!("closed form vs quadrature max {worst:.2e} (<= 1e-10)"));
    let t = weights_1d_closed_form(2.0, 64)?;
    let dev = (0..=64usize)
        .map(|n| {
            let e = match n {
                0 => 2.0,
                1 => -1.0,
                _ => 0.0,
            };
            (t.at(&[n]) - e).abs()
        })
        .fold(0.0, f64::max);
    c.expect(dev <= 1e-14, format!("alpha 2 stencil deviation {dev:.1e} (<= 1e-14)"));
    Ok(c)
}

fn c2_properties() -> Result<Check> {
    let mut c = Check::new();
    let mut count = 0;
    for (dim, m) in [(1usize, 1024usize), (2, 256), (3, 64)] {
        for alpha in [0.3, 0.9, 1.5, 2.0] {
            let t = weights_nd_fft(alpha, dim, m)?;
            let e = t.extent() as isize;
            let side = 2 * e + 1;
            let (mut sym, mut sign_ok) = (0.0f64, t.at(&vec![0; dim]) > 0.0);
            for flat in 0..side.pow(dim as u32) {
                let mut rest = flat;
                let mut idx = Vec::with_capacity(dim);
                for _ in 0..dim {
                    idx.push(rest % side - e);
                    rest /= side;
                }
                if idx.iter().all(|&i| i == 0) {
                    continue;
                }
                let v = t.get(&idx);
                let neg: Vec<isize> = idx.iter().map(|i| -i).collect();
                sym = sym.max((v - t.get(&neg)).abs());
                sign_ok &= v <= 1e-12;
            }
            let sum = t.periodic_sum().unwrap_or(f64::NAN).abs();
            let decay = match check_decay(&t)? {
                DecayReport::Bounded { min, max } => min > 0.0 && max / min <= 10.0,
                DecayReport::Degenerate => alpha == 2.0,
            };
            let ok = sign_ok && sym <= 1e-12 && sum <= 1e-12 && decay;
            if !ok {
                c.expect(false, format!("d={dim} alpha={alpha}: sign {sign_ok} sym {sym:.1e} sum {sum:.1e} decay {decay}"));
            }
            count += 1;
        }
    }
    c.expect(count == 12, format!("{count} (alpha, d) tables: sign, symmetry, zero sum, decay"));
    Ok(c)
}

fn c3_rates() -> Result<Check> {
    let mut c = Check::new();
    let box4 = [-4.0, 4.0];
    let rows = convergence(1, box4, &[31, 63, 127, 255, 511], "alpha1")?;
    let r = &rows[2];
    let o = r.order.unwrap_or(f64::NAN);
    c.expect(within(r.e_inf, 7.35e-4, 0.10), format!("1D alpha1 h=1/16 E={:.3e} (7.35e-4 +-10%)", r.e_inf));
    c.expect((o - 2.0).abs() <= 0.05, format!("order {o:.3} (2.00 +-0.05)"));
    let rows = convergence(2, box4, &[31, 63, 127], "alpha2")?;
    let e = rows[2].e_inf;
    c.expect(within(e, 1.31e-3, 0.10), format!("2D alpha2 h=1/16 E={e:.3e} (1.31e-3 +-10%)"));
    let rows = convergence(2, box4, &[31, 63, 127], "alpha1")?;
    c.note(format!("[info] 2D alpha1 h=1/16 E={:.3e}", rows[2].e_inf));
    let rows = convergence(3, box4, &[7, 15, 31], "alpha1")?;
    let o = orders(&rows);
    c.expect((o[1] - 1.96).abs() <= 0.1, format!("3D alpha1 orders {} (1.96 +-0.1 at h=1/4)", fmt(&o)));
    for (dim, sizes, name) in [
        (1usize, vec![31usize, 63, 127, 255, 511], "alpha3_1d"),
        (2, vec![31, 63, 127], "alpha3_2d"),
        (3, vec![7, 15, 31], "alpha3_3d"),
    ] {
        let o = orders(&convergence(dim, box4, &sizes, name)?);
        let last = *o.last().unwrap();
        c.expect(last >= 1.9, format!("{name} orders {} (>= 1.9)", fmt(&o)));
    }
    Ok(c)
}

fn c4_equivalence() -> Result<Check> {
    let mut c = Check::new();
    let g = Arc::new(UniformGrid::cube(2, -4.0, 4.0, 63)?);
    let u = g.sample(|x| (-x.iter().map(|v| v * v).sum::<f64>()).exp());
    // both modes read the same tables; direct needs one per distinct order
    let source = WeightSource::Fft { m: 256 };
    for name in ["alpha1", "alpha2", "alpha3_2d"] {
        let field = order_field(name, 2)?;
        let direct = VariableOrderOperator::new(g.clone(), &field, &OperatorSettings::direct().with_source(source))?
            .apply_slice(&u)?;
        let scale = direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gap = |settings: OperatorSettings| -> Result<(f64, usize)> {
            let op = VariableOrderOperator::new(g.clone(), &field, &settings)?;
            let fast = op.apply_slice(&u)?;
            let d = fast.iter().zip(&direct).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            Ok((d / scale, op.rank().unwrap_or(0)))
        };
        let (g7, _) = gap(OperatorSettings::fast(7).with_source(source))?;
        let mut est = OperatorSettings::fast(7).with_source(source);
        est.rank = RankChoice::Estimate(1e-10);
        let (ge, r) = gap(est)?;
        c.expect(g7 <= 1e-6, format!("{name} r=7 {g7:.1e}"));
        c.expect(ge <= 1e-8, format!("r={r} {ge:.1e}"));
    }
    Ok(c)
}

/// Best time per apply, repeating until about `budget` seconds are spent.
fn apply_seconds(op: &VariableOrderOperator, budget: f64) -> Result<f64> {
    let first = operator_timing(op, 3)?.seconds_per_apply;
    let reps = ((budget / first) as usize).clamp(3, 200);
    Ok(operator_timing(op, reps)?.seconds_per_apply.min(first))
}

fn c5_slopes() -> Result<Check> {
    let mut c = Check::new();
    let field = order_field("alpha2", 2)?;
    for (dim, sizes, limit) in [(1usize, vec![1024usize, 2048, 4096, 8192, 16384], 1.3), (2, vec![64, 128, 256, 512], 2.4)] {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let f = if dim == 1 { order_field("alpha2", 1)? } else { field.clone() };
        for &n in &sizes {
            let g = Arc::new(UniformGrid::cube(dim, -1.0, 1.0, n)?);
            let op = VariableOrderOperator::new(g, &f, &OperatorSettings::fast(7))?;
            xs.push(n as f64);
            ys.push(apply_seconds(&op, 2.0)?);
        }
        let s = loglog_slope(&xs, &ys);
        let times: Vec<String> = ys.iter().map(|t| format!("{t:.2e}")).collect();
        c.expect(s <= limit, format!("{dim}D slope {s:.3} (<= {limit}) times [{}]", times.join(" ")));
    }
    Ok(c)
}

fn c6_elliptic() -> Result<Check> {
    let mut c = Check::new();
    let mut cfg = ExperimentConfig::new(ExperimentKind::Elliptic, 2);
    cfg.sizes = vec![15, 31, 63];
    cfg.order = "case1_linear".into();
    cfg.elliptic.reference_step = 1.0 / 512.0;
    let o = orders(&run_elliptic(&cfg)?);
    c.expect(o.iter().all(|v| (v - 2.0).abs() <= 0.1), format!("case 1 orders {} (2.0 +-0.1)", fmt(&o)));
    let sizes = [15, 31, 63, 127];
    for name in ["case2_linear", "tanh_half", "case2_box"] {
        let o = orders(&richardson(name, &sizes)?);
        c.expect(o.iter().all(|&v| v < 1.0), format!("{name} {} (< 1)", fmt(&o)));
    }
    let o = orders(&richardson("boundary2_c", &sizes)?);
    c.expect(*o.last().unwrap() >= 1.9, format!("boundary2_c {} (finest >= 1.9)", fmt(&o)));
    for (name, listed) in [("boundary2_a", [1.43, 1.55, 1.65]), ("boundary2_b", [1.59, 1.73, 1.81]), ("const2", [1.97, 1.99, 2.00])] {
        let o = orders(&richardson(name, &sizes)?);
        let ok = o.iter().zip(listed).all(|(v, p)| (v - p).abs() <= 0.15);
        c.expect(ok, format!("{name} {} vs {} +-0.15", fmt(&o), fmt(&listed)));
    }
    Ok(c)
}

fn c7_positivity() -> Result<Check> {
    let mut c = Check::new();
    let tol = 1e-12;
    let kc = KrylovConfig::with_tol(tol);
    let mut worst = f64::INFINITY;
    for (dim, n) in [(1usize, 127usize), (2, 31), (2, 127)] {
        let g = Arc::new(UniformGrid::cube(dim, -1.0, 1.0, n)?);
        for name in ["alpha1", "tanh_half", "boundary2_a"] {
            if name == "boundary2_a" && dim == 1 {
                continue;
            }
            // sign structure holds for any quadrature size, so 2D uses a cheap one
            let mut settings = OperatorSettings::default();
            if dim == 2 {
                settings = settings.with_source(WeightSource::Fft { m: 2048 });
            }
            let op = VariableOrderOperator::new(g.clone(), &order_field(name, dim)?, &settings)?;
            for (rhs, reaction) in [(g.sample(|_| 1.0), 0.0), (g.sample(|x| (-8.0 * x[0] * x[0]).exp()), 1.0)] {
                let norm = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let problem = EllipticProblem {
                    operator: &op,
                    reaction: (reaction > 0.0).then(|| vec![reaction; g.len()]),
                    rhs,
                };
                let s = solve_elliptic(&problem, &kc)?;
                let min = s.u.iter().copied().fold(f64::INFINITY, f64::min);
                worst = worst.min(min / norm);
            }
        }
    }
    c.expect(worst >= -10.0 * tol, format!("min u / |f| = {worst:.2e} (>= {:.0e})", -10.0 * tol));
    let mut gap: f64 = 0.0;
    for n in [16usize, 33, 64] {
        let g = Arc::new(UniformGrid::cube(1, -1.0, 1.0, n)?);
        let op = VariableOrderOperator::new(g.clone(), &order_field("alpha1", 1)?, &OperatorSettings::direct())?;
        let rhs = g.sample(|x| 1.0 + x[0]);
        let s = solve_elliptic(&EllipticProblem { operator: &op, reaction: None, rhs: rhs.clone() }, &kc)?;
        let dense = dense_solve(op.dense_matrix()?, rhs).expect("nonsingular");
        gap = gap.max(s.u.iter().zip(&dense).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())));
    }
    c.expect(gap <= 1e-8, format!("dense vs iterative {gap:.1e} (<= 1e-8)"));
    Ok(c)
}

fn c8_parabolic() -> Result<Check> {
    let mut c = Check::new();
    let mut cfg = ExperimentConfig::new(ExperimentKind::Evolve, 2);
    cfg.domain = [-4.0, 4.0];
    cfg.sizes = vec![15, 31, 63, 127];
    cfg.order = "parabolic_linear".into();
    cfg.evolve.dt = 0.5;
    cfg.evolve.t_final = 0.5;
    let rows = run_evolve(&cfg, None)?.rows;
    let e: Vec<f64> = rows.iter().map(|r| r.e_inf).collect();
    let o = orders(&rows);
    let n = o.len();
    c.expect((o[n - 2] - 1.97).abs() <= 0.15, format!("errors {:?} orders {}", e.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>(), fmt(&o)));
    c.expect((o[n - 1] - 1.99).abs() <= 0.15, "finest pairs vs (1.97, 1.99) +-0.15");
    Ok(c)
}

fn c9_oracles() -> Result<Check> {
    let mut c = Check::new();
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    let opts = IntegralOptions::gaussian();
    let gauss = |x: &[f64]| (-x.iter().map(|v| v * v).sum::<f64>()).exp();
    let mut worst: f64 = 0.0;
    for k in 0..40 {
        let d = 1 + k % 2;
        let alpha = rng.gen_range(0.1..1.95);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.5..2.5)).collect();
        let a = integral_frac_lap(&gauss, &x, alpha, &opts)?;
        let b = gaussian_frac_lap(&x, alpha)?;
        worst = worst.max((a - b).abs());
    }
    c.expect(worst <= 1e-5, format!("40 samples, max |quadrature - 1F1| = {worst:.1e} (<= 1e-5)"));
    Ok(c)
}

fn c10_iterations() -> Result<Check> {
    let mut c = Check::new();
    for (name, target, slack) in [("tanh_half", 13.0, 4.0), ("const16", 61.0, 20.0), ("bench_linear", 38.0, f64::NAN), ("bench_shifted", 94.0, f64::NAN)] {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Bench, 3);
        cfg.sizes = vec![31];
        cfg.order = name.into();
        cfg.bench.dt = Some(1.0 / 32.0);
        cfg.bench.apply_reps = 1;
        cfg.solver.tol = 1e-12;
        let it = run_bench(&cfg)?[0].iterations as f64;
        if slack.is_nan() {
            c.note(format!("[info] {name} {it} (target {target})"));
        } else {
            c.expect((it - target).abs() <= slack, format!("{name} {it} ({target} +-{slack})"));
        }
        // each iteration applies the operator twice
        c.note(format!("[info] {name} applies {}", 2.0 * it));
    }
    Ok(c)
}

fn main() {
    // (name, check, time budget in seconds)
    let criteria: [(&str, fn() -> Result<Check>, f64); 10] = [
        ("weight correctness", c1_weights, 1.0),
        ("weight properties", c2_properties, 30.0),
        ("approximation rates", c3_rates, 600.0),
        ("fast/direct equivalence", c4_equivalence, 120.0),
        ("quasi-linear apply", c5_slopes, 300.0),
        ("elliptic convergence", c6_elliptic, 900.0),
        ("stability and positivity", c7_positivity, 120.0),
        ("parabolic rates", c8_parabolic, 600.0),
        ("oracle equivalence", c9_oracles, 300.0),
        ("iteration counts", c10_iterations, 600.0),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let k = i + 1;
        if !only.is_empty() && !only.contains(&k) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match run() {
            Ok(c) => (c.ok, c.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        let in_time = secs < *budget;
        let ok = ok && in_time;
        failed += usize::from(!ok);
        println!(
            "{} {k:>2} {name}: {detail} ({secs:.1} s, limit {budget} s{})",
            if ok { "PASS" } else { "FAIL" },
            if in_time { "" } else { " [x]" }
        );
    }
    println!("{failed} criteria failed");
    // failures are reported, not fatal, unless asked for
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
