//! Euler–Maruyama time stepping of the chain SDE, with and without a tilting
//! control, exit detection and Girsanov log-weight accumulation.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{mat_vec, ChainSystem, DomainSpec, Problem};
use crate::rng::NoiseStream;

/// A feedback control `v(t, x) ∈ R^d` acting on block 1.
pub trait Control: Sync {
    fn dim(&self) -> usize;

    /// Writes `v(t, x)` into `out`; returns `true` if a clamp shaped the value.
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool;
}

#[derive(Debug, Clone)]
pub struct ZeroControl {
    pub d: usize,
}

impl Control for ZeroControl {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        false
    }
}

#[derive(Debug, Clone)]
pub struct ConstantControl {
    pub value: Vec<f64>,
}

impl Control for ConstantControl {
    fn dim(&self) -> usize {
        self.value.len()
    }

    fn eval(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        out.copy_from_slice(&self.value);
        false
    }
}

/// Any closure `(t, x, out)` can serve as a control.
pub struct FnControl<F> {
    pub d: usize,
    pub f: F,
}

impl<F> Control for FnControl<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        (self.f)(t, x, out);
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub dt: f64,
    /// Step-count guard; `None` allows the nominal `⌈(T−s)/dt⌉`.
    pub max_steps: Option<usize>,
    /// Brownian-bridge test for exits between grid times (off by default).
    pub bridge_exit: bool,
    pub record_path: bool,
}

impl SimOptions {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            max_steps: None,
            bridge_exit: false,
            record_path: false,
        }
    }

    pub fn with_bridge_exit(mut self, on: bool) -> Self {
        self.bridge_exit = on;
        self
    }

    pub fn recording(mut self) -> Self {
        self.record_path = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Row-major, one row of length `n·d` per time.
    pub states: Vec<f64>,
    /// Running `log z` at each time.
    pub log_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub exited: bool,
    /// `θ = τ ∧ T`.
    pub theta: f64,
    pub exit_state: Vec<f64>,
    /// `log z^ε`; zero for uncontrolled paths.
    pub girsanov_log_weight: f64,
    pub steps: usize,
    pub clamped_steps: usize,
    pub trajectory: Option<Trajectory>,
}

impl PathSample {
    pub fn weight(&self) -> f64 {
        self.girsanov_log_weight.exp()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let traj = self.trajectory.as_ref().ok_or_else(|| {
            Error::InvalidArgument("path was simulated without recording".into())
        })?;
        let dim = self.exit_state.len();
        let cols: Vec<String> = (1..=dim).map(|i| format!("x_{i}")).collect();
        writeln!(out, "t,{},log_weight", cols.join(","))?;
        for (k, t) in traj.times.iter().enumerate() {
            let row: Vec<String> = traj.states[k * dim..(k + 1) * dim]
                .iter()
                .map(|v| format!("{v:e}"))
                .collect();
            writeln!(out, "{t:e},{},{:e}", row.join(","), traj.log_weights[k])?;
        }
        Ok(())
    }
}

struct Workspace {
    drift: Vec<f64>,
    sigma: Vec<f64>,
    noise: Vec<f64>,
    v: Vec<f64>,
    sv: Vec<f64>,
}

impl Workspace {
    fn new(system: &ChainSystem) -> Self {
        let d = system.d;
        Self {
            drift: vec![0.0; system.dim()],
            sigma: vec![0.0; d * d],
            noise: vec![0.0; d],
            v: vec![0.0; d],
            sv: vec![0.0; d],
        }
    }
}

/// One Euler step into `next`. With a control, `ws.v` must already hold
/// `v(t, x)`; its contribution enters the block-1 drift at order one.
fn advance(
    system: &ChainSystem,
    t: f64,
    x: &[f64],
    dt: f64,
    sqrt_eps: f64,
    xi: &[f64],
    controlled: bool,
    ws: &mut Workspace,
    next: &mut [f64],
) -> Result<()> {
    let d = system.d;
    system.full_drift_into(t, x, &mut ws.drift)?;
    system.sigma_into(t, x, &mut ws.sigma)?;
    if controlled {
        mat_vec(&ws.sigma, &ws.v, &mut ws.sv);
        for i in 0..d {
            ws.drift[i] += ws.sv[i];
        }
    }
    mat_vec(&ws.sigma, xi, &mut ws.noise);
    for i in 0..x.len() {
        next[i] = x[i] + ws.drift[i] * dt;
    }
    for i in 0..d {
        next[i] += sqrt_eps * ws.noise[i];
    }
    Ok(())
}

/// `x′ = x + f(t,x)·dt + √ε·b·σ(t,x)·ξ`, where `ξ` is the Brownian increment.
pub fn euler_step(
    system: &ChainSystem,
    t: f64,
    x: &[f64],
    dt: f64,
    eps: f64,
    xi: &[f64],
) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "euler_step needs dt > 0 and eps ≥ 0 (dt={dt}, eps={eps})"
        )));
    }
    if x.len() != system.dim() || xi.len() != system.d {
        return Err(Error::InvalidArgument("state or increment has wrong length".into()));
    }
    let mut ws = Workspace::new(system);
    let mut next = vec![0.0; x.len()];
    advance(system, t, x, dt, eps.sqrt(), xi, false, &mut ws, &mut next)?;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Simulation {
            step: 0,
            t,
            message: format!("non-finite state {next:?}"),
        });
    }
    Ok(next)
}

/// Refines an exit between `previous` (inside) and `current` (on or outside
/// `∂Ω`) by bisection on the segment. Returns the step fraction and the
/// boundary point, with `|signed_distance| ≤ δ_b`.
pub fn locate_exit(previous: &[f64], current: &[f64], domain: &DomainSpec) -> Result<(f64, Vec<f64>)> {
    let tol = domain.boundary_tolerance();
    let sd_cur = domain.signed_distance(current);
    if sd_cur.abs() <= tol {
        return Ok((1.0, current.to_vec()));
    }
    if sd_cur < 0.0 || domain.signed_distance(previous) >= 0.0 {
        return Err(Error::InvalidArgument(
            "locate_exit needs previous inside and current outside the domain".into(),
        ));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut y = vec![0.0; current.len()];
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        for (k, yk) in y.iter_mut().enumerate() {
            *yk = previous[k] + mid * (current[k] - previous[k]);
        }
        let sd = domain.signed_distance(&y);
        if sd.abs() <= tol {
            return Ok((mid, y));
        }
        if sd < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Simulation {
        step: 0,
        t: f64::NAN,
        message: "exit bisection did not converge in 64 iterations".into(),
    })
}

/// Pulls `y` onto `∂Ω` along the signed-distance gradient.
fn project_to_boundary(domain: &DomainSpec, y: &mut [f64]) {
    let tol = domain.boundary_tolerance();
    for _ in 0..20 {
        let sd = domain.signed_distance(y);
        if sd.abs() <= tol {
            return;
        }
        let n = domain.outward_normal(y);
        for (yk, nk) in y.iter_mut().zip(&n) {
            *yk -= sd * nk;
        }
    }
}

/// Bridge crossings less likely than `e^{-50}` are not tested.
const BRIDGE_SKIP_EXPONENT: f64 = 50.0;

fn run_path(
    problem: &Problem,
    eps: f64,
    opts: &SimOptions,
    stream: &mut NoiseStream,
    control: Option<&dyn Control>,
) -> Result<PathSample> {
    let system = &problem.system;
    let domain = &problem.domain;
    let (s, t_end) = domain.time_window;
    if !(opts.dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {}", opts.dt)));
    }
    if !(eps >= 0.0) || (control.is_some() && !(eps > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive for controlled paths and nonnegative otherwise, got {eps}"
        )));
    }
    if let Some(c) = control {
        if c.dim() != system.d {
            return Err(Error::InvalidArgument(format!(
                "control dimension {} does not match block dimension {}",
                c.dim(),
                system.d
            )));
        }
    }
    if !domain.contains(&problem.start) {
        return Err(Error::InvalidArgument("start state is not inside the domain".into()));
    }
    let d = system.d;
    let dim = system.dim();
    let n_steps = (((t_end - s) / opts.dt) - 1e-9).ceil().max(1.0) as usize;
    if let Some(max) = opts.max_steps {
        if n_steps > max {
            return Err(Error::Simulation {
                step: max,
                t: s,
                message: format!("{n_steps} steps needed, guard allows {max}"),
            });
        }
    }
    let sqrt_eps = eps.sqrt();
    let mut ws = Workspace::new(system);
    let mut dw = vec![0.0; d];
    let mut x = problem.start.clone();
    let mut next = vec![0.0; dim];
    let mut log_w = 0.0f64;
    let mut sd_x = domain.signed_distance(&x);
    let mut clamped_steps = 0;
    let mut traj = opts.record_path.then(|| Trajectory {
        times: vec![s],
        states: x.clone(),
        log_weights: vec![0.0],
    });

    for k in 0..n_steps {
        let t = s + k as f64 * opts.dt;
        let h = if k + 1 == n_steps { t_end - t } else { opts.dt };
        stream.increment(h, &mut dw);
        if let Some(c) = control {
            if c.eval(t, &x, &mut ws.v) {
                clamped_steps += 1;
            }
            let (mut vdw, mut vv) = (0.0, 0.0);
            for i in 0..d {
                vdw += ws.v[i] * dw[i];
                vv += ws.v[i] * ws.v[i];
            }
            log_w += -vdw / sqrt_eps - vv * h / (2.0 * eps);
            if !log_w.is_finite() {
                return Err(Error::Simulation {
                    step: k,
                    t,
                    message: format!("non-finite Girsanov log-weight (v = {:?})", ws.v),
                });
            }
        }
        advance(system, t, &x, h, sqrt_eps, &dw, control.is_some(), &mut ws, &mut next)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Simulation {
                step: k,
                t,
                message: format!("non-finite state {next:?}"),
            });
        }
        let sd = domain.signed_distance(&next);
        let sd_prev = std::mem::replace(&mut sd_x, sd);
        let mut exit = None;
        if sd >= 0.0 {
            let (frac, y) = locate_exit(&x, &next, domain).map_err(|e| match e {
                Error::Simulation { message, .. } => Error::Simulation { step: k, t, message },
                other => other,
            })?;
            exit = Some((t + frac * h, y));
        } else if opts.bridge_exit && eps > 0.0 && {
            // |σᵀn|² ≤ ‖σ‖²_F bounds the crossing probability from above
            let frob: f64 = ws.sigma.iter().map(|v| v * v).sum();
            2.0 * sd_prev * sd / (eps * frob * h) < BRIDGE_SKIP_EXPONENT
        } {
            let normal = domain.outward_normal(&next);
            // variance rate of the normal component: ε·|σᵀ n₁|²
            let mut rate = 0.0;
            for c in 0..d {
                let mut acc = 0.0;
                for r in 0..d {
                    acc += ws.sigma[r * d + c] * normal[r];
                }
                rate += acc * acc;
            }
            let u = stream.uniform();
            if rate > 0.0 {
                let p = (-2.0 * sd_prev * sd / (eps * rate * h)).exp();
                if u < p {
                    let mut y: Vec<f64> = x.iter().zip(&next).map(|(a, b)| 0.5 * (a + b)).collect();
                    project_to_boundary(domain, &mut y);
                    exit = Some((t + 0.5 * h, y));
                }
            }
        }
        if let Some((theta, y)) = exit {
            if let Some(tr) = traj.as_mut() {
                tr.times.push(theta);
                tr.states.extend_from_slice(&y);
                tr.log_weights.push(log_w);
            }
            return Ok(PathSample {
                exited: true,
                theta,
                exit_state: y,
                girsanov_log_weight: log_w,
                steps: k + 1,
                clamped_steps,
                trajectory: traj,
            });
        }
        std::mem::swap(&mut x, &mut next);
        if let Some(tr) = traj.as_mut() {
            tr.times.push(t + h);
            tr.states.extend_from_slice(&x);
            tr.log_weights.push(log_w);
        }
    }
    Ok(PathSample {
        exited: false,
        theta: t_end,
        exit_state: x,
        girsanov_log_weight: log_w,
        steps: n_steps,
        clamped_steps,
        trajectory: traj,
    })
}

/// Simulates the uncontrolled SDE from `problem.start` until exit or `T`.
pub fn simulate(
    problem: &Problem,
    eps: f64,
    opts: &SimOptions,
    stream: &mut NoiseStream,
) -> Result<PathSample> {
    run_path(problem, eps, opts, stream, None)
}

/// Simulates the tilted SDE `dx = (f + bσv)dt + √ε bσ dW` and accumulates
/// `log z = −(1/√ε)Σ⟨v, ΔW⟩ − (1/2ε)Σ|v|²Δt` with `v` at the left endpoint.
pub fn simulate_controlled(
    problem: &Problem,
    eps: f64,
    opts: &SimOptions,
    stream: &mut NoiseStream,
    control: &dyn Control,
) -> Result<PathSample> {
    run_path(problem, eps, opts, stream, Some(control))
}
