//! Discrete large-deviations action of block-1 paths and its minimization
//! over exit paths with a free exit time.
//!
//! Only the block-1 path `φ` is free; blocks `2..n` are slaved to it through
//! their ODEs, integrated by RK4 with `φ` linearly interpolated between knots.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimateReport;
use crate::hjb::running_cost;
use crate::model::{ChainSystem, DomainSpec};

/// Knot path `φ_0..φ_K` on `s = t_0 < … < t_K = θ` with slaved blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    pub s: f64,
    pub theta: f64,
    pub d: usize,
    /// `(K+1)·d` block-1 knot values.
    pub phi: Vec<f64>,
    /// `(K+1)·(n−1)·d` slaved-block values.
    pub slaved: Vec<f64>,
}

impl DiscretePath {
    /// Integrates the slaved blocks from `start` along the knots.
    pub fn assemble(system: &ChainSystem, start: &[f64], s: f64, theta: f64, phi: Vec<f64>) -> Result<Self> {
        let d = system.d;
        if start.len() != system.dim() || phi.len() % d != 0 || phi.len() < 2 * d {
            return Err(Error::InvalidArgument("path needs at least two knots of block dimension".into()));
        }
        if !(theta > s) {
            return Err(Error::InvalidArgument(format!("exit time {theta} must exceed s = {s}")));
        }
        let k = phi.len() / d - 1;
        let rest = system.dim() - d;
        let mut path = Self {
            s,
            theta,
            d,
            phi,
            slaved: vec![0.0; (k + 1) * rest],
        };
        path.slaved[..rest].copy_from_slice(&start[d..]);
        let mut ws = Rk4::new(system);
        for i in 0..k {
            path.integrate_interval(system, i, &mut ws)?;
        }
        Ok(path)
    }

    pub fn knots(&self) -> usize {
        self.phi.len() / self.d - 1
    }

    pub fn dt(&self) -> f64 {
        (self.theta - self.s) / self.knots() as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.knots() {
            self.theta
        } else {
            self.s + k as f64 * self.dt()
        }
    }

    pub fn phi_at(&self, k: usize) -> &[f64] {
        &self.phi[k * self.d..(k + 1) * self.d]
    }

    fn rest(&self) -> usize {
        self.slaved.len() / (self.knots() + 1)
    }

    /// Full state `(φ_k, x²_k, …, xⁿ_k)`.
    pub fn state(&self, k: usize) -> Vec<f64> {
        let r = self.rest();
        let mut x = self.phi_at(k).to_vec();
        x.extend_from_slice(&self.slaved[k * r..(k + 1) * r]);
        x
    }

    /// RK4 step of the slaved blocks across interval `i`, writing knot `i+1`.
    fn integrate_interval(&mut self, system: &ChainSystem, i: usize, ws: &mut Rk4) -> Result<()> {
        let r = self.rest();
        if r == 0 {
            return Ok(());
        }
        let d = self.d;
        let h = self.dt();
        let t0 = self.time(i);
        let (p0, p1) = (self.phi_at(i).to_vec(), self.phi_at(i + 1).to_vec());
        let y0 = self.slaved[i * r..(i + 1) * r].to_vec();
        let phi_mid: Vec<f64> = p0.iter().zip(&p1).map(|(a, b)| 0.5 * (a + b)).collect();
        ws.eval(system, t0, &p0, &y0, d, 0)?;
        let y1: Vec<f64> = (0..r).map(|j| y0[j] + 0.5 * h * ws.k[0][j]).collect();
        ws.eval(system, t0 + 0.5 * h, &phi_mid, &y1, d, 1)?;
        let y2: Vec<f64> = (0..r).map(|j| y0[j] + 0.5 * h * ws.k[1][j]).collect();
        ws.eval(system, t0 + 0.5 * h, &phi_mid, &y2, d, 2)?;
        let y3: Vec<f64> = (0..r).map(|j| y0[j] + h * ws.k[2][j]).collect();
        ws.eval(system, t0 + h, &p1, &y3, d, 3)?;
        for j in 0..r {
            self.slaved[(i + 1) * r + j] =
                y0[j] + h / 6.0 * (ws.k[0][j] + 2.0 * ws.k[1][j] + 2.0 * ws.k[2][j] + ws.k[3][j]);
        }
        Ok(())
    }

    /// CSV with columns `t, phi_1..phi_d, x_{d+1}..x_{nd}`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let r = self.rest();
        let mut cols: Vec<String> = (1..=self.d).map(|c| format!("phi_{c}")).collect();
        cols.extend((1..=r).map(|c| format!("x_{}", self.d + c)));
        writeln!(out, "t,{}", cols.join(","))?;
        for k in 0..=self.knots() {
            let row: Vec<String> = self.state(k).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{:e},{}", self.time(k), row.join(","))?;
        }
        Ok(())
    }
}

struct Rk4 {
    x: Vec<f64>,
    f: Vec<f64>,
    k: [Vec<f64>; 4],
}

impl Rk4 {
    fn new(system: &ChainSystem) -> Self {
        let r = system.dim() - system.d;
        Self {
            x: vec![0.0; system.dim()],
            f: vec![0.0; system.dim()],
            k: [vec![0.0; r], vec![0.0; r], vec![0.0; r], vec![0.0; r]],
        }
    }

    fn eval(&mut self, system: &ChainSystem, t: f64, phi: &[f64], y: &[f64], d: usize, stage: usize) -> Result<()> {
        self.x[..d].copy_from_slice(phi);
        self.x[d..].copy_from_slice(y);
        system.full_drift_into(t, &self.x, &mut self.f)?;
        self.k[stage].copy_from_slice(&self.f[d..]);
        Ok(())
    }
}

/// Trapezoidal action `Σ Δt/2·(L(t_k, x_k, u_k) + L(t_{k+1}, x_{k+1}, u_k))`
/// with the piecewise-constant velocity `u_k = (φ_{k+1} − φ_k)/Δt`.
pub fn action(path: &DiscretePath, system: &ChainSystem) -> Result<f64> {
    let h = path.dt();
    let d = path.d;
    let mut total = 0.0;
    let mut u = vec![0.0; d];
    for k in 0..path.knots() {
        for c in 0..d {
            u[c] = (path.phi_at(k + 1)[c] - path.phi_at(k)[c]) / h;
        }
        let l0 = running_cost(system, path.time(k), &path.state(k), &u)?;
        let l1 = running_cost(system, path.time(k + 1), &path.state(k + 1), &u)?;
        total += 0.5 * h * (l0 + l1);
    }
    Ok(total)
}

/// Value returned by the minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActionValue {
    pub value: f64,
    /// Euclidean norm of the projected finite-difference gradient.
    pub grad_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActionOptions {
    /// Number of path intervals `K`.
    pub knots: usize,
    pub restarts: usize,
    pub max_iter: usize,
    /// Convergence when `|∇| < tol·(1 + value)`.
    pub tol: f64,
    /// Relative central-difference step.
    pub fd_step: f64,
}

impl Default for ActionOptions {
    fn default() -> Self {
        Self {
            knots: 32,
            restarts: 2,
            max_iter: 1000,
            tol: 1e-6,
            fd_step: 1e-6,
        }
    }
}

struct Problem<'a> {
    system: &'a ChainSystem,
    domain: &'a DomainSpec,
    start: &'a [f64],
    s: f64,
    t_end: f64,
    k: usize,
    d: usize,
}

impl Problem<'_> {
    fn n_vars(&self) -> usize {
        self.k * self.d + 1
    }

    /// Assembles the exit path encoded by `vars = (φ_1, …, φ_{K−1}, φ̃_K, θ)`;
    /// the raw endpoint `φ̃_K` is pushed along the ray from `φ_{K−1}` onto `∂Ω`.
    /// `None` marks an infeasible path.
    fn assemble(&self, vars: &[f64]) -> Result<Option<DiscretePath>> {
        let (k, d) = (self.k, self.d);
        let theta = vars[k * d];
        if !(theta > self.s && theta <= self.t_end) {
            return Ok(None);
        }
        let mut phi = Vec::with_capacity((k + 1) * d);
        phi.extend_from_slice(&self.start[..d]);
        phi.extend_from_slice(&vars[..k * d]);
        let mut path = DiscretePath::assemble(self.system, self.start, self.s, theta, phi)?;
        for i in 1..k {
            if !self.domain.contains(&path.state(i)) {
                return Ok(None);
            }
        }
        let base = path.phi_at(k - 1).to_vec();
        let dir: Vec<f64> = (0..d).map(|c| vars[(k - 1) * d + c] - base[c]).collect();
        if dir.iter().all(|&v| v == 0.0) {
            return Ok(None);
        }
        let mut ws = Rk4::new(self.system);
        let mut sd_at = |lam: f64, path: &mut DiscretePath| -> Result<f64> {
            for c in 0..d {
                path.phi[k * d + c] = base[c] + lam * dir[c];
            }
            path.integrate_interval(self.system, k - 1, &mut ws)?;
            Ok(self.domain.signed_distance(&path.state(k)))
        };
        if sd_at(0.0, &mut path)? >= 0.0 {
            return Ok(None);
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut expansions = 0;
        while sd_at(hi, &mut path)? < 0.0 {
            lo = hi;
            hi *= 2.0;
            expansions += 1;
            if expansions > 60 {
                return Ok(None);
            }
        }
        // bisect to machine precision so the endpoint is a smooth function of the knots
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if sd_at(mid, &mut path)? < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let sd = sd_at(hi, &mut path)?;
        if sd.abs() > self.domain.boundary_tolerance() {
            return Ok(None);
        }
        Ok(Some(path))
    }

    fn value(&self, vars: &[f64]) -> Result<f64> {
        match self.assemble(vars)? {
            Some(p) => action(&p, self.system),
            None => Ok(f64::INFINITY),
        }
    }

    fn step_size(&self, vars: &[f64], i: usize, rel: f64) -> f64 {
        if i == self.k * self.d {
            rel * (self.t_end - self.s)
        } else {
            rel * vars[i].abs().max(1.0)
        }
    }

    fn gradient(&self, vars: &[f64], f0: f64, rel: f64) -> Result<Vec<f64>> {
        let n = self.n_vars();
        let mut g = vec![0.0; n];
        let mut v = vars.to_vec();
        for i in 0..n {
            let h = self.step_size(vars, i, rel);
            v[i] = vars[i] + h;
            let fp = self.value(&v)?;
            v[i] = vars[i] - h;
            let fm = self.value(&v)?;
            v[i] = vars[i];
            g[i] = match (fp.is_finite(), fm.is_finite()) {
                (true, true) => (fp - fm) / (2.0 * h),
                (true, false) => (fp - f0) / h,
                (false, true) => (f0 - fm) / h,
                (false, false) => 0.0,
            };
        }
        Ok(g)
    }

    /// Zeroes gradient components that point out of the feasible θ range.
    fn project(&self, vars: &[f64], g: &mut [f64]) {
        let i = self.k * self.d;
        if vars[i] >= self.t_end && g[i] < 0.0 {
            g[i] = 0.0;
        }
    }

    /// Discrete H¹ preconditioner on the knot values, curvature scaling on θ.
    fn direction(&self, vars: &[f64], g: &[f64], f0: f64) -> Result<Vec<f64>> {
        let (k, d) = (self.k, self.d);
        let theta = vars[k * d];
        let dt = (theta - self.s) / k as f64;
        let a = self.system.diffusion_matrix(self.s, self.start)?;
        let mut p = vec![0.0; g.len()];
        for c in 0..d {
            let scale = 1.0 / (a[(c, c)] * dt);
            let rhs: Vec<f64> = (0..k - 1).map(|i| g[i * d + c]).collect();
            let sol = thomas(k - 1, scale, &rhs);
            for i in 0..k - 1 {
                p[i * d + c] = -sol[i];
            }
            // the endpoint only slides along the boundary: one-neighbour scaling
            p[(k - 1) * d + c] = -g[(k - 1) * d + c] / scale;
        }
        let i = k * d;
        let span = self.t_end - self.s;
        let h = 1e-4 * span;
        let mut v = vars.to_vec();
        v[i] = theta + h;
        let fp = self.value(&v)?;
        v[i] = theta - h;
        let fm = self.value(&v)?;
        let curv = (fp - 2.0 * f0 + fm) / (h * h);
        let step = if g[i] == 0.0 {
            0.0
        } else if curv.is_finite() && curv > 0.0 {
            -g[i] / curv
        } else {
            -g[i].signum() * 0.1 * span
        };
        p[i] = step.clamp(-0.25 * span, 0.25 * span);
        if vars[i] >= self.t_end && p[i] > 0.0 {
            p[i] = 0.0;
        }
        Ok(p)
    }

    fn clip_theta(&self, vars: &mut [f64]) {
        let i = self.k * self.d;
        let lo = self.s + 1e-6 * (self.t_end - self.s);
        vars[i] = vars[i].clamp(lo, self.t_end);
    }

    fn descend(&self, mut vars: Vec<f64>, opts: &ActionOptions) -> Result<(Vec<f64>, ActionValue)> {
        let mut f = self.value(&vars)?;
        if !f.is_finite() {
            return Ok((
                vars,
                ActionValue {
                    value: f,
                    grad_norm: f64::INFINITY,
                    converged: false,
                    iterations: 0,
                },
            ));
        }
        let mut grad_norm = f64::INFINITY;
        for it in 0..opts.max_iter {
            let mut g = self.gradient(&vars, f, opts.fd_step)?;
            self.project(&vars, &mut g);
            grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if grad_norm < opts.tol * (1.0 + f) {
                return Ok((
                    vars,
                    ActionValue {
                        value: f,
                        grad_norm,
                        converged: true,
                        iterations: it,
                    },
                ));
            }
            let p = self.direction(&vars, &g, f)?;
            let slope: f64 = g.iter().zip(&p).map(|(a, b)| a * b).sum();
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..50 {
                let mut trial: Vec<f64> = vars.iter().zip(&p).map(|(v, d)| v + alpha * d).collect();
                self.clip_theta(&mut trial);
                let ft = self.value(&trial)?;
                if ft.is_finite() && ft <= f + 1e-4 * alpha * slope.min(0.0) && (ft < f || slope == 0.0) {
                    accepted = Some((trial, ft));
                    break;
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((mut v, ft)) => {
                    // keep the stored endpoint on the boundary
                    if let Some(path) = self.assemble(&v)? {
                        let i = (self.k - 1) * self.d;
                        v[i..i + self.d].copy_from_slice(path.phi_at(self.k));
                    }
                    vars = v;
                    f = ft;
                }
                None => {
                    return Ok((
                        vars,
                        ActionValue {
                            value: f,
                            grad_norm,
                            converged: false,
                            iterations: it,
                        },
                    ))
                }
            }
        }
        Ok((
            vars,
            ActionValue {
                value: f,
                grad_norm,
                converged: false,
                iterations: opts.max_iter,
            },
        ))
    }

    /// Straight line at `θ = T` toward the boundary point hit along `±e_c`.
    fn initial_guess(&self, restart: usize) -> Vec<f64> {
        let (k, d) = (self.k, self.d);
        let axis = (restart / 2) % d;
        let sign = if restart % 2 == 0 { 1.0 } else { -1.0 };
        let mut x = self.start.to_vec();
        let scale = self.domain.diameter();
        let mut lam = 0.0;
        let mut step = 1e-3 * scale;
        while lam < 10.0 * scale {
            x[axis] = self.start[axis] + sign * (lam + step);
            if self.domain.signed_distance(&x) >= 0.0 {
                break;
            }
            lam += step;
            step *= 1.5;
        }
        let (mut lo, mut hi) = (lam, lam + step);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            x[axis] = self.start[axis] + sign * mid;
            if self.domain.signed_distance(&x) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let target = self.start[axis] + sign * hi;
        let mut vars = vec![0.0; self.n_vars()];
        for i in 1..=k {
            for c in 0..d {
                vars[(i - 1) * d + c] = self.start[c];
            }
            let frac = i as f64 / k as f64;
            vars[(i - 1) * d + axis] = self.start[axis] + frac * (target - self.start[axis]);
        }
        vars[k * d] = self.t_end;
        vars
    }
}

/// Solves `P y = g` for `P = scale·tridiag(−1, 2, −1)` by the Thomas algorithm.
fn thomas(n: usize, scale: f64, g: &[f64]) -> Vec<f64> {
    let diag = |_: usize| 2.0 * scale;
    let off = -scale;
    let mut c = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut b = diag(0);
    c[0] = off / b;
    y[0] = g[0] / b;
    for i in 1..n {
        b = diag(i) - off * c[i - 1];
        c[i] = off / b;
        y[i] = (g[i] - off * y[i - 1]) / b;
    }
    for i in (0..n - 1).rev() {
        y[i] -= c[i] * y[i + 1];
    }
    y
}

/// Result of [`minimize_action`] for one restart.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerRun {
    pub restart: usize,
    pub path: Option<DiscretePath>,
    pub value: ActionValue,
}

/// Minimizes the discrete action over block-1 paths from `start` to `∂Ω`
/// with free exit time `θ ∈ (s, T]`. Restarts run in parallel from straight
/// lines toward boundary probe points; the lowest value wins, ties going to
/// the lower restart index.
pub fn minimize_action(
    system: &ChainSystem,
    domain: &DomainSpec,
    start: &[f64],
    opts: &ActionOptions,
) -> Result<(DiscretePath, ActionValue, Vec<MinimizerRun>)> {
    if opts.knots < 8 || opts.restarts == 0 {
        return Err(Error::InvalidArgument(format!(
            "need K ≥ 8 knots and at least one restart (K = {}, R = {})",
            opts.knots, opts.restarts
        )));
    }
    if start.len() != system.dim() || !domain.contains(start) {
        return Err(Error::InvalidArgument("start must lie strictly inside the domain".into()));
    }
    let (s, t_end) = domain.time_window;
    let prob = Problem {
        system,
        domain,
        start,
        s,
        t_end,
        k: opts.knots,
        d: system.d,
    };
    let runs: Vec<MinimizerRun> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| {
            let (vars, value) = prob.descend(prob.initial_guess(r), opts)?;
            Ok(MinimizerRun {
                restart: r,
                path: prob.assemble(&vars)?,
                value,
            })
        })
        .collect::<Result<_>>()?;
    let best = runs
        .iter()
        .filter(|r| r.path.is_some())
        .min_by(|a, b| a.value.value.total_cmp(&b.value.value).then(a.restart.cmp(&b.restart)))
        .ok_or_else(|| Error::Solver {
            slice: 0,
            node: 0,
            message: "no restart produced a feasible exit path".into(),
        })?;
    Ok((best.path.clone().expect("filtered"), best.value, runs))
}

/// Action of the block-1 path `phi(t)` (sampled at `knots_per_unit` knots per
/// unit time) over each horizon `[s, T_i]`. The path must stay inside `Ω`.
pub fn blowup_probe(
    system: &ChainSystem,
    domain: &DomainSpec,
    start: &[f64],
    phi: &dyn Fn(f64) -> Vec<f64>,
    horizons: &[f64],
    knots_per_unit: usize,
) -> Result<Vec<f64>> {
    let s = domain.time_window.0;
    horizons
        .iter()
        .map(|&t_end| {
            let k = ((t_end - s) * knots_per_unit as f64).ceil().max(1.0) as usize;
            let knots: Vec<f64> = (0..=k)
                .flat_map(|i| phi(s + (t_end - s) * i as f64 / k as f64))
                .collect();
            let path = DiscretePath::assemble(system, start, s, t_end, knots)?;
            if let Some(i) = (0..=k).find(|&i| !domain.contains(&path.state(i))) {
                return Err(Error::InvalidArgument(format!(
                    "probe path leaves the domain at knot {i} of horizon {t_end}"
                )));
            }
            action(&path, system)
        })
        .collect()
}

/// One row of the small-noise comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub eps: f64,
    /// `−ε log q̂`; `None` when `q̂ = 0`.
    pub log_estimate: Option<f64>,
    pub action: f64,
    pub gap: Option<f64>,
    /// Three standard errors carried through the log: `3ε·SE/q̂`.
    pub slack: Option<f64>,
    pub flagged: bool,
}

impl ComparisonRow {
    pub const CSV_HEADER: &'static str = "eps,log_estimate,action,gap,slack";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        format!(
            "{:e},{},{:e},{},{}",
            self.eps,
            opt(self.log_estimate),
            self.action,
            opt(self.gap),
            opt(self.slack)
        )
    }
}

/// `gap(ε) = |−ε log q̂^ε − action|` per report; zero estimates are flagged.
pub fn asymptotic_comparison(reports: &[EstimateReport], action_value: f64) -> Vec<ComparisonRow> {
    reports
        .iter()
        .map(|r| {
            if r.mean > 0.0 {
                let le = -r.eps * r.mean.ln();
                ComparisonRow {
                    eps: r.eps,
                    log_estimate: Some(le),
                    action: action_value,
                    gap: Some((le - action_value).abs()),
                    slack: Some(3.0 * r.eps * r.standard_error() / r.mean),
                    flagged: false,
                }
            } else {
                ComparisonRow {
                    eps: r.eps,
                    log_estimate: None,
                    action: action_value,
                    gap: None,
                    slack: None,
                    flagged: true,
                }
            }
        })
        .collect()
}

/// Whether the gap shrinks from the largest to the smallest ε once both
/// ends are widened by their slack.
pub fn gap_decreases(rows: &[ComparisonRow]) -> Option<bool> {
    let big = rows.iter().max_by(|a, b| a.eps.total_cmp(&b.eps))?;
    let small = rows.iter().min_by(|a, b| a.eps.total_cmp(&b.eps))?;
    match (big.gap, small.gap) {
        (Some(gb), Some(gs)) => Some(gs - small.slack.unwrap_or(0.0) < gb + big.slack.unwrap_or(0.0)),
        _ => None,
    }
}
