//! Dynamic-programming side: the Hamiltonian and its Legendre dual, grid
//! solvers for the value function and the exit probability, and the tilting
//! control extracted from the value function.

mod fields;
mod grid;
mod solver;

pub use fields::{cache_control, ControlField, FieldKind, ValueField};
pub use grid::{Axis, GridSpec, Substeps};
pub use solver::{
    default_clamp_cap, extract_control, solve_exit_bvp, solve_hjb, stability_check, StabilityReport,
    INFINITE_PHI_CAP, MAX_GRID_DIM,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{min_eigenvalue, ChainSystem};

fn block1(system: &ChainSystem, t: f64, x: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mut f1 = vec![0.0; system.d];
    system.drift_block_into(0, t, x, &mut f1)?;
    Ok((DVector::from_vec(f1), system.diffusion_matrix(t, x)?))
}

/// `H(t, x, p) = ⟨f_1(t,x), p⟩ − ½ pᵀ a(t,x) p` for a block-1 gradient `p`.
pub fn hamiltonian(system: &ChainSystem, t: f64, x: &[f64], p: &[f64]) -> Result<f64> {
    if p.len() != system.d {
        return Err(Error::InvalidArgument(format!(
            "gradient has length {}, expected {}",
            p.len(),
            system.d
        )));
    }
    let (f1, a) = block1(system, t, x)?;
    let p = DVector::from_column_slice(p);
    Ok(f1.dot(&p) - 0.5 * p.dot(&(&a * &p)))
}

/// `L(t, x, u) = ½ (f_1 − u)ᵀ a⁻¹ (f_1 − u)`.
pub fn running_cost(system: &ChainSystem, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
    if u.len() != system.d {
        return Err(Error::InvalidArgument(format!(
            "velocity has length {}, expected {}",
            u.len(),
            system.d
        )));
    }
    let (f1, a) = block1(system, t, x)?;
    let r = f1 - DVector::from_column_slice(u);
    let lam = min_eigenvalue(&a);
    let singular = Error::Ellipticity {
        min_eigenvalue: lam,
        floor: system.lambda_floor,
        t,
    };
    if !(lam > 1e-14 * a.amax()) {
        return Err(singular);
    }
    let chol = a.cholesky().ok_or(singular)?;
    Ok(0.5 * r.dot(&chol.solve(&r)))
}

/// Relative gap `|min_u {L(u) + ⟨p, u⟩} − H(p)| / max(1, |H|)` over the
/// supplied candidates. The minimizer is `u* = f_1 − a p`.
pub fn duality_check(system: &ChainSystem, t: f64, x: &[f64], p: &[f64], candidates: &[Vec<f64>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("duality check needs at least one candidate".into()));
    }
    let h = hamiltonian(system, t, x, p)?;
    let mut best = f64::INFINITY;
    for u in candidates {
        let inner: f64 = u.iter().zip(p).map(|(a, b)| a * b).sum();
        best = best.min(running_cost(system, t, x, u)? + inner);
    }
    Ok((best - h).abs() / h.abs().max(1.0))
}

/// The analytic minimizer `u* = f_1(t,x) − a(t,x) p` of `L(u) + ⟨p, u⟩`.
pub fn optimal_velocity(system: &ChainSystem, t: f64, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    let (f1, a) = block1(system, t, x)?;
    Ok((f1 - a * DVector::from_column_slice(p)).as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BlockFn;
    use std::sync::Arc;

    fn model(f1: Vec<f64>, sigma: Vec<f64>) -> ChainSystem {
        let d = f1.len();
        ChainSystem::new(
            "test",
            d,
            vec![Arc::new(move |_: f64, _: &[f64], o: &mut [f64]| o.copy_from_slice(&f1)) as BlockFn],
            Arc::new(move |_: f64, _: &[f64], o: &mut [f64]| o.copy_from_slice(&sigma)),
            1e-6,
        )
        .unwrap()
    }

    #[test]
    fn hamiltonian_examples() {
        let m = model(vec![1.0], vec![1.0]);
        assert_eq!(hamiltonian(&m, 0.0, &[0.0], &[2.0]).unwrap(), 0.0);
        assert_eq!(hamiltonian(&m, 0.0, &[0.0], &[0.0]).unwrap(), 0.0);
        let m2 = model(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(hamiltonian(&m2, 0.0, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), -12.5);
    }

    #[test]
    fn running_cost_examples() {
        let m = model(vec![0.7], vec![1.0]);
        assert_eq!(running_cost(&m, 0.0, &[0.0], &[0.7]).unwrap(), 0.0);
        let m0 = model(vec![0.0], vec![1.0]);
        assert_eq!(running_cost(&m0, 0.0, &[0.0], &[2.0]).unwrap(), 2.0);
        // a = diag(2, ½) from σ = diag(√2, √½)
        let m2 = model(vec![1.0, 0.0], vec![2f64.sqrt(), 0.0, 0.0, 0.5f64.sqrt()]);
        let v = running_cost(&m2, 0.0, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn singular_diffusion_is_an_ellipticity_error() {
        let m = model(vec![0.0, 0.0], vec![1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            running_cost(&m, 0.0, &[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Ellipticity { .. })
        ));
    }

    #[test]
    fn duality_complete_the_square() {
        let m = model(vec![0.0], vec![1.0]);
        for p in [-3.0, 0.0, 0.4, 2.5] {
            let cands = vec![vec![-p], vec![1.0], vec![-p + 0.1]];
            assert!(duality_check(&m, 0.0, &[0.0], &[p], &cands).unwrap() < 1e-15);
        }
    }

    #[test]
    fn duality_grid_search_converges_to_minimizer() {
        // a dense 2-D grid of velocities approaches the gap of the exact minimizer
        let m = model(vec![0.3, -0.8], vec![1.2, 0.0, 0.4, 0.9]);
        let p = [0.7, -1.1];
        let ustar = optimal_velocity(&m, 0.0, &[0.0, 0.0], &p).unwrap();
        let mut prev = f64::INFINITY;
        for width in [1.0, 0.1, 0.01] {
            let cands: Vec<Vec<f64>> = (0..21 * 21)
                .map(|i| {
                    let (a, b) = ((i / 21) as f64 - 10.0, (i % 21) as f64 - 10.0);
                    vec![ustar[0] + width * a / 10.0 + 0.37 * width / 10.0, ustar[1] + width * b / 10.0]
                })
                .collect();
            let gap = duality_check(&m, 0.0, &[0.0, 0.0], &p, &cands).unwrap();
            assert!(gap < prev);
            prev = gap;
        }
        let exact = duality_check(&m, 0.0, &[0.0, 0.0], &p, &[ustar]).unwrap();
        assert!(exact < 1e-12, "{exact}");
    }
}
