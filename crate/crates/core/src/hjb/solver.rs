//! Explicit monotone finite-difference solvers for the value equation
//! `J_t + ε/2·tr(a J_{x¹x¹}) + Σ_{j≥2}⟨f_j, J_{x^j}⟩ + H(t, x, J_{x¹}) = 0`
//! and the linear exit-probability equation `q_t + L^ε q = 0`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hjb::fields::{ControlField, FieldKind, ValueField};
use crate::hjb::grid::{GridSpec, Substeps};
use crate::model::{mat_vec, ChainSystem, DomainSpec, TerminalFunctional, TerminalKind};

/// Terminal value of `J` where `Φ = +∞`, in units of ε (`exp(−69) ≈ 10⁻³⁰`).
pub const INFINITE_PHI_CAP: f64 = 69.0;

/// Largest `n·d` the dense grid solvers accept.
pub const MAX_GRID_DIM: usize = 3;

const PARALLEL_MIN_NODES: usize = 2048;
const MAX_SUBSTEPS: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Nonlinear,
    Linear,
}

/// Largest linear monotonicity coefficient `Σ ε a_kk/h_k² + Σ |f_j|/h_j`
/// seen over the grid, and the time step it permits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    pub max_coefficient: f64,
    pub max_drift: f64,
    pub max_diffusion: f64,
    /// Largest stable inner step for the linear part.
    pub dt_limit: f64,
}

struct Ctx<'a> {
    system: &'a ChainSystem,
    grid: &'a GridSpec,
    eps: f64,
    strides: Vec<usize>,
    h: Vec<f64>,
    dirichlet: Vec<bool>,
}

impl<'a> Ctx<'a> {
    fn new(system: &'a ChainSystem, domain: &DomainSpec, grid: &'a GridSpec, eps: f64) -> Result<(Self, usize)> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
        let dim = system.dim();
        if dim > MAX_GRID_DIM {
            return Err(Error::InvalidArgument(format!(
                "grid solvers support n·d ≤ {MAX_GRID_DIM}, model has {dim}"
            )));
        }
        if grid.dim() != dim || domain.dim() != dim {
            return Err(Error::InvalidArgument(format!(
                "grid has {} axes, model state has {dim}",
                grid.dim()
            )));
        }
        if grid.time_window != domain.time_window {
            return Err(Error::InvalidArgument(format!(
                "grid time window {:?} differs from the domain's {:?}",
                grid.time_window, domain.time_window
            )));
        }
        let h: Vec<f64> = grid.axes.iter().map(|a| a.spacing()).collect();
        let h_min = h.iter().cloned().fold(f64::INFINITY, f64::min);
        let n = grid.n_nodes();
        let mut dirichlet = vec![false; n];
        let mut characteristic = 0;
        let mut f = vec![0.0; dim];
        let s = grid.time_window.0;
        for node in 0..n {
            let x = grid.node_coords(node);
            let sd = domain.signed_distance(&x);
            let edge = grid.is_edge(node);
            if edge && sd < -1e-9 * h_min {
                return Err(Error::InvalidArgument(format!(
                    "grid box does not cover the domain: edge node {x:?} is inside"
                )));
            }
            if edge || sd >= -1e-9 * h_min {
                dirichlet[node] = true;
                if sd <= 0.5 * h_min {
                    system.full_drift_into(s, &x, &mut f)?;
                    let nrm = domain.outward_normal(&x);
                    let fn_: f64 = f.iter().zip(&nrm).map(|(a, b)| a * b).sum();
                    let scale = 1.0 + f.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if fn_.abs() <= 1e-12 * scale {
                        characteristic += 1;
                    }
                }
            }
        }
        Ok((
            Self {
                system,
                grid,
                eps,
                strides: grid.strides(),
                h,
                dirichlet,
            },
            characteristic,
        ))
    }

    /// Update direction and monotonicity coefficient at one interior node.
    fn node_rhs(&self, mode: Mode, t: f64, node: usize, u: &[f64]) -> Result<(f64, f64)> {
        let sys = self.system;
        let d = sys.d;
        let dim = sys.dim();
        let mut x = [0.0; MAX_GRID_DIM];
        let mut f = [0.0; MAX_GRID_DIM];
        let mut sigma = [0.0; MAX_GRID_DIM * MAX_GRID_DIM];
        let mut a = [0.0; MAX_GRID_DIM * MAX_GRID_DIM];
        self.grid.node_coords_into(node, &mut x[..dim]);
        sys.full_drift_into(t, &x[..dim], &mut f[..dim])?;
        sys.sigma_into(t, &x[..dim], &mut sigma[..d * d])?;
        for r in 0..d {
            for c in 0..d {
                a[r * d + c] = (0..d).map(|m| sigma[r * d + m] * sigma[c * d + m]).sum();
            }
        }
        let ui = u[node];
        let s = &self.strides;
        let h = &self.h;

        // viscosity on block-1 axes
        let mut rhs = 0.0;
        let mut coef = 0.0;
        for k in 0..d {
            let d2 = (u[node + s[k]] - 2.0 * ui + u[node - s[k]]) / (h[k] * h[k]);
            rhs += 0.5 * self.eps * a[k * d + k] * d2;
            coef += self.eps * a[k * d + k] / (h[k] * h[k]);
            for l in k + 1..d {
                let cross = (u[node + s[k] + s[l]] - u[node + s[k] - s[l]] - u[node - s[k] + s[l]]
                    + u[node - s[k] - s[l]])
                    / (4.0 * h[k] * h[l]);
                rhs += self.eps * a[k * d + l] * cross;
            }
        }

        // upwind transport; block 1 is transported here only in the linear solve
        let first = if mode == Mode::Linear { 0 } else { d };
        for j in first..dim {
            let g = if f[j] > 0.0 {
                (u[node + s[j]] - ui) / h[j]
            } else {
                (ui - u[node - s[j]]) / h[j]
            };
            rhs += f[j] * g;
            coef += f[j].abs() / h[j];
        }

        if mode == Mode::Nonlinear {
            let mut pm = [0.0; MAX_GRID_DIM];
            let mut pp = [0.0; MAX_GRID_DIM];
            for k in 0..d {
                pm[k] = (ui - u[node - s[k]]) / h[k];
                pp[k] = (u[node + s[k]] - ui) / h[k];
            }
            let (hnum, hcoef) = if d == 1 {
                godunov(a[0], f[0], pm[0], pp[0], h[0])
            } else {
                lax_friedrichs(&a[..d * d], &f[..d], &pm[..d], &pp[..d], &h[..d])
            };
            rhs -= hnum;
            coef += hcoef;
        }
        Ok((rhs, coef))
    }
}

/// `Ĥ(p) = ½ a p² − f p`, the negated Hamiltonian (convex in `p`).
fn neg_hamiltonian_1d(a: f64, f: f64, p: f64) -> f64 {
    0.5 * a * p * p - f * p
}

/// Godunov flux of the convex `Ĥ` from one-sided slopes.
fn godunov(a: f64, f: f64, pm: f64, pp: f64, h: f64) -> (f64, f64) {
    let pstar = f / a;
    let left = neg_hamiltonian_1d(a, f, pm.max(pstar));
    let right = neg_hamiltonian_1d(a, f, pp.min(pstar));
    let speed = (a * pm - f).abs().max((a * pp - f).abs());
    (left.max(right), speed / h)
}

/// Local Lax–Friedrichs flux for `d > 1`.
fn lax_friedrichs(a: &[f64], f: &[f64], pm: &[f64], pp: &[f64], h: &[f64]) -> (f64, f64) {
    let d = f.len();
    let mut pbar = [0.0; MAX_GRID_DIM];
    for k in 0..d {
        pbar[k] = 0.5 * (pm[k] + pp[k]);
    }
    let mut ap = [0.0; MAX_GRID_DIM];
    mat_vec(a, &pbar[..d], &mut ap[..d]);
    let mut value = 0.0;
    for k in 0..d {
        value += 0.5 * pbar[k] * ap[k] - f[k] * pbar[k];
    }
    let mut coef = 0.0;
    for k in 0..d {
        let spread: f64 = (0..d).map(|l| a[k * d + l].abs() * (pp[l] - pm[l]).abs() * 0.5).sum();
        let alpha = (ap[k] - f[k]).abs() + spread;
        value -= alpha * 0.5 * (pp[k] - pm[k]);
        coef += alpha / h[k];
    }
    (value, coef)
}

/// Checks the linear part of the explicit scheme against the inner step the
/// grid prescribes. Adaptive grids always pass; fixed substeps that violate
/// the bound give a stability error naming it.
pub fn stability_check(system: &ChainSystem, eps: f64, grid: &GridSpec) -> Result<StabilityReport> {
    let dim = system.dim();
    let d = system.d;
    if grid.dim() != dim {
        return Err(Error::InvalidArgument("grid and model dimensions differ".into()));
    }
    let h: Vec<f64> = grid.axes.iter().map(|a| a.spacing()).collect();
    let mut f = vec![0.0; dim];
    let mut worst: f64 = 0.0;
    let (mut max_drift, mut max_diff): (f64, f64) = (0.0, 0.0);
    let mut x = vec![0.0; dim];
    for k in 0..grid.n_slices() {
        let t = grid.time(k);
        for node in 0..grid.n_nodes() {
            grid.node_coords_into(node, &mut x);
            system.full_drift_into(t, &x, &mut f)?;
            let a = system.diffusion_matrix(t, &x)?;
            let mut c = 0.0;
            for kk in 0..d {
                c += eps * a[(kk, kk)] / (h[kk] * h[kk]);
                max_diff = max_diff.max(a[(kk, kk)]);
            }
            for j in 0..dim {
                c += f[j].abs() / h[j];
                max_drift = max_drift.max(f[j].abs());
            }
            worst = worst.max(c);
        }
    }
    let report = StabilityReport {
        max_coefficient: worst,
        max_drift,
        max_diffusion: max_diff,
        dt_limit: if worst > 0.0 { 1.0 / worst } else { f64::INFINITY },
    };
    if let Substeps::Fixed(m) = grid.substeps {
        let inner = grid.dt() / m as f64;
        if inner * worst > 1.0 {
            return Err(Error::Stability {
                constraint: "linear CFL Δt·(Σ ε·a_kk/Δx_k² + Σ |f_j|/Δx_j) ≤ 1".into(),
                value: inner * worst,
                limit: 1.0,
            });
        }
    }
    Ok(report)
}

/// Boundary data on the lateral boundary (`lateral`) and the terminal slice (`terminal`).
struct BoundaryData<'a> {
    lateral: Box<dyn Fn(f64, &[f64]) -> f64 + Sync + 'a>,
    terminal: Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>,
}

fn sweep(
    ctx: &Ctx,
    mode: Mode,
    data: &BoundaryData,
) -> Result<Vec<f64>> {
    let grid = ctx.grid;
    let n = grid.n_nodes();
    let m = grid.time_steps;
    let mut values = vec![0.0; (m + 1) * n];
    let t_end = grid.time_window.1;
    let coords: Vec<Vec<f64>> = (0..n).map(|i| grid.node_coords(i)).collect();
    let mut cur: Vec<f64> = (0..n)
        .map(|i| {
            if ctx.dirichlet[i] {
                (data.lateral)(t_end, &coords[i])
            } else {
                (data.terminal)(&coords[i])
            }
        })
        .collect();
    values[m * n..].copy_from_slice(&cur);
    let interior: Vec<usize> = (0..n).filter(|&i| !ctx.dirichlet[i]).collect();
    let mut next = cur.clone();
    let mut substeps_total = 0usize;

    for k in (0..m).rev() {
        let t_lo = grid.time(k);
        let mut t = grid.time(k + 1);
        let mut remaining = t - t_lo;
        let mut inner = 0usize;
        loop {
            let eval = |&i: &usize| ctx.node_rhs(mode, t, i, &cur);
            let rhs: Vec<(f64, f64)> = if interior.len() >= PARALLEL_MIN_NODES {
                interior.par_iter().map(eval).collect::<Result<_>>()?
            } else {
                interior.iter().map(eval).collect::<Result<_>>()?
            };
            let max_coef = rhs.iter().map(|r| r.1).fold(0.0, f64::max);
            let (dtau, last) = match grid.substeps {
                Substeps::Auto => {
                    let lim = if max_coef > 0.0 { 0.9 / max_coef } else { f64::INFINITY };
                    if lim >= remaining * (1.0 - 1e-12) {
                        (remaining, true)
                    } else {
                        (lim, false)
                    }
                }
                Substeps::Fixed(steps) => {
                    let dtau = (grid.time(k + 1) - t_lo) / steps as f64;
                    if dtau * max_coef > 1.0 {
                        return Err(Error::Stability {
                            constraint: "Hamiltonian CFL Δt·(viscosity + transport + |∂H/∂p|/Δx) ≤ 1".into(),
                            value: dtau * max_coef,
                            limit: 1.0,
                        });
                    }
                    (dtau, inner + 1 == steps)
                }
            };
            for (&i, &(r, _)) in interior.iter().zip(&rhs) {
                let v = cur[i] + dtau * r;
                if !v.is_finite() {
                    return Err(Error::Solver {
                        slice: k,
                        node: i,
                        message: format!("non-finite value at t={t}"),
                    });
                }
                next[i] = v;
            }
            t = if last { t_lo } else { t - dtau };
            remaining = t - t_lo;
            for i in 0..n {
                if ctx.dirichlet[i] {
                    next[i] = (data.lateral)(t, &coords[i]);
                }
            }
            std::mem::swap(&mut cur, &mut next);
            inner += 1;
            substeps_total += 1;
            if substeps_total > MAX_SUBSTEPS {
                return Err(Error::Solver {
                    slice: k,
                    node: 0,
                    message: format!("more than {MAX_SUBSTEPS} inner steps; refine the time grid or coarsen space"),
                });
            }
            if last {
                break;
            }
        }
        values[k * n..(k + 1) * n].copy_from_slice(&cur);
    }
    Ok(values)
}

fn scheme_name(system: &ChainSystem, mode: Mode) -> String {
    match mode {
        Mode::Linear => "explicit upwind, linear".into(),
        Mode::Nonlinear if system.d == 1 => "explicit upwind, Godunov Hamiltonian".into(),
        Mode::Nonlinear => "explicit upwind, local Lax-Friedrichs Hamiltonian".into(),
    }
}

fn characteristic_note(count: usize) -> Vec<String> {
    if count == 0 {
        Vec::new()
    } else {
        vec![format!(
            "{count} boundary nodes with tangential drift (⟨f, n⟩ = 0) kept in the Dirichlet set"
        )]
    }
}

/// Solves the value equation backward from `T` with `J = Φ` on the lateral
/// boundary and the terminal slice. For the exit indicator, `J = 0` on the
/// lateral boundary and `J = 69·ε` stands in for `+∞` at `T`; the exit
/// penalty uses its finite value there.
pub fn solve_hjb(
    system: &ChainSystem,
    domain: &DomainSpec,
    terminal: &TerminalFunctional,
    eps: f64,
    grid: &GridSpec,
) -> Result<ValueField> {
    let (ctx, characteristic) = Ctx::new(system, domain, grid, eps)?;
    stability_check(system, eps, grid)?;
    let t_end = grid.time_window.1;
    let data = match &terminal.kind {
        TerminalKind::ExitIndicator => BoundaryData {
            lateral: Box::new(|_, _| 0.0),
            terminal: Box::new(move |_| INFINITE_PHI_CAP * eps),
        },
        &TerminalKind::ExitPenalty { penalty } => BoundaryData {
            lateral: Box::new(|_, _| 0.0),
            terminal: Box::new(move |_| penalty),
        },
        TerminalKind::BoundedLipschitz { phi, .. } => {
            let phi_t = phi.clone();
            BoundaryData {
                lateral: Box::new(move |t, x| phi(t, x)),
                terminal: Box::new(move |x| phi_t(t_end, x)),
            }
        }
    };
    let values = sweep(&ctx, Mode::Nonlinear, &data)?;
    let floor = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = values.iter().map(|v| v.abs()).fold(1.0, f64::max);
    let phi_nonneg = match &terminal.kind {
        TerminalKind::ExitIndicator | TerminalKind::ExitPenalty { .. } => true,
        TerminalKind::BoundedLipschitz { .. } => (0..grid.n_nodes()).all(|i| {
            let x = grid.node_coords(i);
            (data.terminal)(&x) >= 0.0 && (data.lateral)(grid.time(0), &x) >= 0.0
        }),
    };
    if phi_nonneg && floor < -1e-12 * scale {
        let idx = values.iter().position(|&v| v == floor).unwrap_or(0);
        return Err(Error::Solver {
            slice: idx / grid.n_nodes(),
            node: idx % grid.n_nodes(),
            message: format!("maximum principle violated: J = {floor:e} < 0"),
        });
    }
    Ok(ValueField {
        kind: FieldKind::Value,
        model: system.name.clone(),
        eps,
        scheme: scheme_name(system, Mode::Nonlinear),
        grid: grid.clone(),
        values,
        dirichlet: ctx.dirichlet.clone(),
        characteristic_nodes: characteristic,
        notes: characteristic_note(characteristic),
    })
}

/// Solves `∂_s q + L^ε q = 0` with `q = 1` on the lateral boundary and `q = 0`
/// on the terminal slice inside `Ω`, giving `q(s, x) = P{τ ≤ T}`.
pub fn solve_exit_bvp(system: &ChainSystem, domain: &DomainSpec, eps: f64, grid: &GridSpec) -> Result<ValueField> {
    let (ctx, characteristic) = Ctx::new(system, domain, grid, eps)?;
    stability_check(system, eps, grid)?;
    let data = BoundaryData {
        lateral: Box::new(|_, _| 1.0),
        terminal: Box::new(|_| 0.0),
    };
    let values = sweep(&ctx, Mode::Linear, &data)?;
    if let Some(idx) = values.iter().position(|&q| !(-1e-12..=1.0 + 1e-12).contains(&q)) {
        return Err(Error::Solver {
            slice: idx / grid.n_nodes(),
            node: idx % grid.n_nodes(),
            message: format!("comparison bound violated: q = {:e}", values[idx]),
        });
    }
    Ok(ValueField {
        kind: FieldKind::ExitProbability,
        model: system.name.clone(),
        eps,
        scheme: scheme_name(system, Mode::Linear),
        grid: grid.clone(),
        values,
        dirichlet: ctx.dirichlet.clone(),
        characteristic_nodes: characteristic,
        notes: characteristic_note(characteristic),
    })
}

/// Default clamp cap: ten times the largest `|f_1|` over the grid nodes and
/// slices, or 10 when the block-1 drift vanishes identically.
pub fn default_clamp_cap(system: &ChainSystem, grid: &GridSpec) -> Result<f64> {
    let d = system.d;
    let mut f1 = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for k in 0..grid.n_slices() {
        let t = grid.time(k);
        for node in 0..grid.n_nodes() {
            let x = grid.node_coords(node);
            system.drift_block_into(0, t, &x, &mut f1)?;
            worst = worst.max(f1.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
    }
    Ok(if worst > 0.0 { 10.0 * worst } else { 10.0 })
}

/// `v = −σᵀ ∇_{x¹} J` at every node and slice, clamped to `|v| ≤ cap`
/// (`None` selects [`default_clamp_cap`]).
pub fn extract_control(field: &ValueField, system: &ChainSystem, cap: Option<f64>) -> Result<ControlField> {
    let grid = &field.grid;
    if grid.dim() != system.dim() {
        return Err(Error::InvalidArgument("field grid and model dimensions differ".into()));
    }
    let cap = match cap {
        Some(c) if c > 0.0 => c,
        Some(c) => return Err(Error::InvalidArgument(format!("clamp cap must be positive, got {c}"))),
        None => default_clamp_cap(system, grid)?,
    };
    let d = system.d;
    let n = grid.n_nodes();
    let strides = grid.strides();
    let slices = grid.n_slices();
    let mut values = vec![0.0; slices * n * d];
    let mut clamped = vec![false; slices * n];
    let mut sigma = vec![0.0; d * d];
    let mut g = vec![0.0; d];
    let mut v = vec![0.0; d];
    for k in 0..slices {
        let t = grid.time(k);
        let u = field.slice(k);
        for node in 0..n {
            let multi = grid.multi_index(node);
            for c in 0..d {
                let h = grid.axes[c].spacing();
                let last = grid.axes[c].points - 1;
                let s = strides[c];
                let lo_ok = multi[c] > 0;
                let hi_ok = multi[c] < last;
                g[c] = if !field.dirichlet[node] {
                    (u[node + s] - u[node - s]) / (2.0 * h)
                } else {
                    let lo_in = lo_ok && !field.dirichlet[node - s];
                    let hi_in = hi_ok && !field.dirichlet[node + s];
                    match (lo_in, hi_in) {
                        (true, true) => (u[node + s] - u[node - s]) / (2.0 * h),
                        (false, true) => (u[node + s] - u[node]) / h,
                        (true, false) => (u[node] - u[node - s]) / h,
                        (false, false) => 0.0,
                    }
                };
            }
            let x = grid.node_coords(node);
            system.sigma_into(t, &x, &mut sigma)?;
            for r in 0..d {
                // σᵀ g
                v[r] = -(0..d).map(|m| sigma[m * d + r] * g[m]).sum::<f64>();
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::Solver {
                    slice: k,
                    node,
                    message: "non-finite control".into(),
                });
            }
            if norm > cap {
                v.iter_mut().for_each(|a| *a *= cap / norm);
                clamped[k * n + node] = true;
            }
            values[(k * n + node) * d..(k * n + node + 1) * d].copy_from_slice(&v);
        }
    }
    Ok(ControlField {
        model: field.model.clone(),
        eps: field.eps,
        d,
        cap,
        grid: grid.clone(),
        values,
        clamped,
    })
}
