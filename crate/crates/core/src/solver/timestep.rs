//! Crank-Nicolson for linear problems and a three-level linearized scheme for
//! Allen-Cahn, driven by `evolve` with per-step observers.
//!
//! The Allen-Cahn state is carried as `w = u - g` where `g` is the constant
//! exterior value, so the unknown vanishes outside the domain. Since the
//! weights sum to zero, `A` applied to `u` equals `A` applied to `w`.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::count_components;
use crate::solver::{bicgstab, shifted_apply, KrylovConfig, LinearMap};

/// Source term `f(x, t)`.
pub type SourceFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    CrankNicolson,
    /// `u_t + A u = -(u^3 - u) / kappa^2` with `u = exterior` outside the domain.
    ThreeLevel {
        kappa: f64,
        /// Weight `S` of the term `S (w^{n+1} - 2 w^n + w^{n-1}) / kappa^2`; zero gives the plain scheme.
        stabilization: f64,
        exterior: f64,
    },
}

#[derive(Clone)]
pub struct TimeStepper {
    pub scheme: Scheme,
    pub dt: f64,
    pub t_final: f64,
    /// Coefficient in front of the operator.
    pub diffusivity: f64,
    pub reaction: Option<Vec<f64>>,
    pub source: Option<SourceFn>,
    pub krylov: KrylovConfig,
}

impl TimeStepper {
    pub fn crank_nicolson(dt: f64, t_final: f64) -> Self {
        Self {
            scheme: Scheme::CrankNicolson,
            dt,
            t_final,
            diffusivity: 1.0,
            reaction: None,
            source: None,
            krylov: KrylovConfig::default(),
        }
    }

    pub fn allen_cahn(dt: f64, t_final: f64, kappa: f64, stabilization: f64) -> Self {
        Self {
            scheme: Scheme::ThreeLevel { kappa, stabilization, exterior: -1.0 },
            ..Self::crank_nicolson(dt, t_final)
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_final >= self.dt * (1.0 - 1e-12)) {
            return Err(Error::Config(format!("need dt > 0 and T >= dt (dt = {}, T = {})", self.dt, self.t_final)));
        }
        if let Scheme::ThreeLevel { kappa, stabilization, .. } = self.scheme {
            if !(kappa > 0.0) || !(stabilization >= 0.0) {
                return Err(Error::Config(format!("need kappa > 0 and S >= 0, got {kappa}, {stabilization}")));
            }
        }
        Ok(())
    }

    fn exterior(&self) -> f64 {
        match self.scheme {
            Scheme::CrankNicolson => 0.0,
            Scheme::ThreeLevel { exterior, .. } => exterior,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub u: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn masked(op: &dyn LinearMap, mut v: Vec<f64>) -> Vec<f64> {
    if let Some(m) = op.mask() {
        m.apply(&mut v);
    }
    v
}

/// `(I + dt/2 D (A + b)) u^{n+1} = (I - dt/2 D (A + b)) u^n + dt f(t + dt/2)`.
pub fn step_crank_nicolson(u_prev: &[f64], t: f64, stepper: &TimeStepper, op: &dyn LinearMap) -> Result<StepResult> {
    let grid = op.grid();
    if u_prev.len() != grid.len() {
        return Err(Error::SizeMismatch { expected: grid.len(), got: u_prev.len() });
    }
    let c = 0.5 * stepper.dt * stepper.diffusivity;
    let reaction = stepper.reaction.as_deref();
    let mut rhs = vec![0.0; u_prev.len()];
    shifted_apply(op, reaction, 1.0, -c, u_prev, &mut rhs)?;
    if let Some(f) = &stepper.source {
        let tm = t + 0.5 * stepper.dt;
        let mut p = vec![0.0; grid.dim()];
        for (j, r) in rhs.iter_mut().enumerate() {
            grid.point_into(j, &mut p);
            *r += stepper.dt * f(&p, tm);
        }
    }
    let rhs = masked(op, rhs);
    let res = bicgstab(|u, out| shifted_apply(op, reaction, 1.0, c, u, out), &rhs, None, &stepper.krylov)?;
    Ok(StepResult { u: masked(op, res.x), iterations: res.iterations, residual: res.residual })
}

fn cahn_params(stepper: &TimeStepper) -> Result<(f64, f64, f64)> {
    match stepper.scheme {
        Scheme::ThreeLevel { kappa, stabilization, exterior } => Ok((kappa, stabilization, exterior)),
        Scheme::CrankNicolson => Err(Error::Config("Allen-Cahn step needs the three-level scheme".into())),
    }
}

fn reaction_term(w: &[f64], exterior: f64) -> Vec<f64> {
    w.iter()
        .map(|&v| {
            let u = v + exterior;
            u * u * u - u
        })
        .collect()
}

/// First Allen-Cahn level: Crank-Nicolson for `A` with the nonlinearity explicit.
fn bootstrap_allen_cahn(w0: &[f64], stepper: &TimeStepper, op: &dyn LinearMap) -> Result<StepResult> {
    let (kappa, s, exterior) = cahn_params(stepper)?;
    let dt = stepper.dt;
    let mu = dt / (kappa * kappa);
    let c = 0.5 * dt * stepper.diffusivity;
    let nl = reaction_term(w0, exterior);
    let mut rhs = vec![0.0; w0.len()];
    shifted_apply(op, None, 1.0, -c, w0, &mut rhs)?;
    for j in 0..rhs.len() {
        rhs[j] += mu * s * w0[j] - mu * nl[j];
    }
    let rhs = masked(op, rhs);
    let res = bicgstab(|u, out| shifted_apply(op, None, 1.0 + mu * s, c, u, out), &rhs, None, &stepper.krylov)?;
    Ok(StepResult { u: masked(op, res.x), iterations: res.iterations, residual: res.residual })
}

/// `(I + dt A + mu S) w^{n+1} = (I - dt A - mu S) w^{n-1} + 2 mu S w^n - 2 mu f(u^n)`,
/// `mu = dt / kappa^2`, on the shifted state `w = u - exterior`.
pub fn step_allen_cahn_three_level(
    w_nm1: &[f64],
    w_n: &[f64],
    stepper: &TimeStepper,
    op: &dyn LinearMap,
) -> Result<StepResult> {
    let (kappa, s, exterior) = cahn_params(stepper)?;
    let len = op.grid().len();
    if w_nm1.len() != len || w_n.len() != len {
        return Err(Error::SizeMismatch { expected: len, got: w_n.len().min(w_nm1.len()) });
    }
    let dt = stepper.dt;
    let mu = dt / (kappa * kappa);
    let c = dt * stepper.diffusivity;
    let nl = reaction_term(w_n, exterior);
    let mut rhs = vec![0.0; len];
    shifted_apply(op, None, 1.0 - mu * s, -c, w_nm1, &mut rhs)?;
    for j in 0..len {
        rhs[j] += 2.0 * mu * (s * w_n[j] - nl[j]);
    }
    let rhs = masked(op, rhs);
    let res = bicgstab(|u, out| shifted_apply(op, None, 1.0 + mu * s, c, u, out), &rhs, None, &stepper.krylov)?;
    Ok(StepResult { u: masked(op, res.x), iterations: res.iterations, residual: res.residual })
}

/// Observer values after a step, in the physical variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub step: usize,
    pub time: f64,
    pub max_norm: f64,
    pub l2_norm: f64,
    pub mass: f64,
    /// Face-connected components of `{u > 0}` among the unknowns.
    pub components: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub observations: Vec<Observation>,
    /// Final physical state on the interior nodes.
    pub final_state: Vec<f64>,
}

fn observe(op: &dyn LinearMap, u: &[f64], step: usize, time: f64, iterations: usize) -> Observation {
    let grid = op.grid();
    let cell: f64 = grid.steps().iter().product();
    let inside = |j: usize| op.mask().is_none_or(|m| m.inside()[j]);
    let mut max_norm: f64 = 0.0;
    let (mut l2, mut mass) = (0.0, 0.0);
    let mut flags = vec![false; u.len()];
    for (j, &v) in u.iter().enumerate() {
        if !inside(j) {
            continue;
        }
        max_norm = max_norm.max(v.abs());
        l2 += v * v * cell;
        mass += v * cell;
        flags[j] = v > 0.0;
    }
    Observation {
        step,
        time,
        max_norm,
        l2_norm: l2.sqrt(),
        mass,
        components: count_components(grid, &flags),
        iterations,
    }
}

/// Runs `stepper` from the physical state `u0` to its final time. `frame` is
/// called with `(step, time, u)` after every step, including step 0.
pub fn evolve(
    stepper: &TimeStepper,
    op: &dyn LinearMap,
    u0: &[f64],
    mut frame: Option<&mut dyn FnMut(usize, f64, &[f64]) -> Result<()>>,
) -> Result<Trajectory> {
    stepper.validate()?;
    let len = op.grid().len();
    if u0.len() != len {
        return Err(Error::SizeMismatch { expected: len, got: u0.len() });
    }
    let g = stepper.exterior();
    let to_phys = |w: &[f64]| -> Vec<f64> { w.iter().map(|v| v + g).collect() };
    let w0 = masked(op, u0.iter().map(|v| v - g).collect());
    let mut observations = vec![observe(op, &to_phys(&w0), 0, 0.0, 0)];
    if let Some(f) = frame.as_mut() {
        f(0, 0.0, &to_phys(&w0))?;
    }
    let steps = stepper.steps();
    let mut prev = w0.clone();
    let mut cur = w0;
    for n in 1..=steps {
        let t_prev = (n - 1) as f64 * stepper.dt;
        let r = match stepper.scheme {
            Scheme::CrankNicolson => step_crank_nicolson(&cur, t_prev, stepper, op)?,
            Scheme::ThreeLevel { .. } if n == 1 => bootstrap_allen_cahn(&cur, stepper, op)?,
            Scheme::ThreeLevel { .. } => step_allen_cahn_three_level(&prev, &cur, stepper, op)?,
        };
        prev = std::mem::replace(&mut cur, r.u);
        let t = n as f64 * stepper.dt;
        let phys = to_phys(&cur);
        observations.push(observe(op, &phys, n, t, r.iterations));
        if let Some(f) = frame.as_mut() {
            f(n, t, &phys)?;
        }
    }
    Ok(Trajectory { observations, final_state: to_phys(&cur) })
}

pub fn write_observations_csv<W: Write>(mut out: W, obs: &[Observation]) -> std::io::Result<()> {
    writeln!(out, "step,time,max_norm,l2_norm,mass,components,iterations")?;
    for o in obs {
        writeln!(
            out,
            "{},{:.10e},{:.10e},{:.10e},{:.10e},{},{}",
            o.step, o.time, o.max_norm, o.l2_norm, o.mass, o.components, o.iterations
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{OrderField, UniformGrid};
    use crate::operator::{OperatorSettings, VariableOrderOperator};
    use crate::solver::{solve_elliptic, EllipticProblem, ZeroMap};

    fn op1(n: usize) -> VariableOrderOperator {
        let g = Arc::new(UniformGrid::cube(1, -1.0, 1.0, n).unwrap());
        VariableOrderOperator::new(g, &OrderField::from_fn(|x| 1.2 + 0.5 * x[0].abs(), 1.2, 1.7), &OperatorSettings::direct())
            .unwrap()
    }

    #[test]
    fn zero_operator_keeps_state() {
        let g = Arc::new(UniformGrid::cube(1, 0.0, 1.0, 9).unwrap());
        let z = ZeroMap(g.clone());
        let u: Vec<f64> = (0..9).map(|j| j as f64).collect();
        let s = TimeStepper::crank_nicolson(0.1, 0.1);
        let r = step_crank_nicolson(&u, 0.0, &s, &z).unwrap();
        for (a, b) in r.u.iter().zip(&u) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn steady_state_is_fixed_point() {
        let op = op1(31);
        let f = vec![1.0; 31];
        let e = solve_elliptic(&EllipticProblem { operator: &op, reaction: None, rhs: f }, &KrylovConfig::default()).unwrap();
        let mut s = TimeStepper::crank_nicolson(0.05, 0.05);
        s.source = Some(Arc::new(|_, _| 1.0));
        let r = step_crank_nicolson(&e.u, 0.0, &s, &op).unwrap();
        let scale = e.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in r.u.iter().zip(&e.u) {
            assert!((a - b).abs() <= 1e-11 * scale);
        }
    }

    #[test]
    fn energy_decays_without_forcing() {
        let op = op1(47);
        let u0 = op.grid().sample(|x| (1.0 - x[0] * x[0]).max(0.0).sqrt());
        let s = TimeStepper::crank_nicolson(0.02, 0.2);
        let tr = evolve(&s, &op, &u0, None).unwrap();
        for w in tr.observations.windows(2) {
            assert!(w[1].l2_norm <= w[0].l2_norm + 1e-12);
        }
    }

    #[test]
    fn three_level_pure_states() {
        let g = Arc::new(UniformGrid::cube(2, 0.0, 1.0, 7).unwrap());
        let z = ZeroMap(g.clone());
        let s = TimeStepper::allen_cahn(1e-3, 1e-3, 0.1, 0.0);
        // u = 1 everywhere: w = 2, nonlinearity vanishes
        let w = vec![2.0; g.len()];
        let prev: Vec<f64> = (0..g.len()).map(|j| 2.0 + 1e-3 * j as f64).collect();
        let r = step_allen_cahn_three_level(&prev, &w, &s, &z).unwrap();
        for (a, b) in r.u.iter().zip(&prev) {
            assert!((a - b).abs() < 1e-13);
        }
        // u = 0 stays 0
        let w = vec![1.0; g.len()];
        let r = step_allen_cahn_three_level(&w, &w, &s, &z).unwrap();
        assert!(r.u.iter().all(|v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn plain_three_level_blows_up_at_unit_ratio() {
        // dt / kappa^2 = 1: the explicit nonlinearity makes a leapfrog-type parasitic mode grow
        let g = Arc::new(UniformGrid::cube(1, 0.0, 1.0, 5).unwrap());
        let z = ZeroMap(g.clone());
        let mut s = TimeStepper::allen_cahn(1e-4, 1e-4, 1e-2, 0.0);
        let mut prev = vec![2.0; 5];
        let mut cur: Vec<f64> = vec![2.0 + 1e-6; 5];
        let mut grew = false;
        for _ in 0..40 {
            let r = step_allen_cahn_three_level(&prev, &cur, &s, &z).unwrap();
            prev = std::mem::replace(&mut cur, r.u);
            if (cur[0] - 2.0).abs() > 1.0 {
                grew = true;
                break;
            }
        }
        assert!(grew);
        // with S = 2 the same perturbation decays
        s.scheme = Scheme::ThreeLevel { kappa: 1e-2, stabilization: 2.0, exterior: -1.0 };
        let mut prev = vec![2.0; 5];
        let mut cur: Vec<f64> = vec![2.0 + 1e-6; 5];
        for _ in 0..40 {
            let r = step_allen_cahn_three_level(&prev, &cur, &s, &z).unwrap();
            prev = std::mem::replace(&mut cur, r.u);
        }
        assert!((cur[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_data_constant_observers() {
        let op = op1(15);
        let s = TimeStepper::crank_nicolson(0.1, 0.3);
        let tr = evolve(&s, &op, &[0.0; 15], None).unwrap();
        assert_eq!(tr.observations.len(), 4);
        for o in &tr.observations {
            assert_eq!((o.max_norm, o.mass, o.components), (0.0, 0.0, 0));
        }
        let mut buf = Vec::new();
        write_observations_csv(&mut buf, &tr.observations).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("step,time,max_norm"));
    }

    #[test]
    fn bad_stepper_rejected() {
        let op = op1(7);
        let s = TimeStepper::crank_nicolson(0.0, 1.0);
        assert!(matches!(evolve(&s, &op, &[0.0; 7], None), Err(Error::Config(_))));
    }
}
