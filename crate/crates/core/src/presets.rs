//! Named model catalog referenced by experiment configs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockFn, ChainSystem, DomainSpec, Problem, TerminalFunctional};

/// Scalar overrides accepted by every preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PresetParams {
    /// Half-width `L` of the cube `(−L, L)^{nd}`.
    pub half_width: f64,
    /// Horizon `T`; the window starts at `s = 0`.
    pub horizon: f64,
    /// Constant noise amplitude (σ ≡ sigma·I).
    pub sigma: f64,
    /// Relaxation rate `k` in `f_1 = −k·x¹` for the OU chains.
    pub rate: f64,
    /// Start state; defaults to the origin.
    pub start: Option<Vec<f64>>,
}

impl Default for PresetParams {
    fn default() -> Self {
        Self {
            half_width: 1.0,
            horizon: 1.0,
            sigma: 1.0,
            rate: 1.0,
            start: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PresetInfo {
    pub name: &'static str,
    pub n: usize,
    pub d: usize,
    pub description: &'static str,
}

pub const FREE_BM_1: &str = "free-bm-1";
pub const OU_CHAIN_2X1: &str = "ou-chain-2x1";
pub const OU_CHAIN_3X1: &str = "ou-chain-3x1";

pub fn builtin_models() -> Vec<PresetInfo> {
    vec![
        PresetInfo {
            name: FREE_BM_1,
            n: 1,
            d: 1,
            description: "scalar Brownian motion, f ≡ 0, σ ≡ 1 (non-degenerate reference)",
        },
        PresetInfo {
            name: OU_CHAIN_2X1,
            n: 2,
            d: 1,
            description: "f_1 = −x¹, f_2 = x¹ − x², noise in x¹ only",
        },
        PresetInfo {
            name: OU_CHAIN_3X1,
            n: 3,
            d: 1,
            description: "ou-chain-2x1 extended with f_3 = x² − x³",
        },
    ]
}

fn ou_chain(name: &str, n: usize, rate: f64, sigma: f64) -> Result<ChainSystem> {
    let mut blocks: Vec<BlockFn> = vec![Arc::new(move |_, x, o| o[0] = -rate * x[0])];
    for i in 1..n {
        blocks.push(Arc::new(move |_, x, o| o[0] = x[i - 1] - x[i]));
    }
    ChainSystem::new(
        name,
        1,
        blocks,
        Arc::new(move |_, _, o| o[0] = sigma),
        sigma * sigma,
    )
}

/// Builds the named preset with `params` applied.
pub fn preset(name: &str, params: &PresetParams) -> Result<Problem> {
    let (system, n) = match name {
        FREE_BM_1 => {
            let sigma = params.sigma;
            let sys = ChainSystem::new(
                name,
                1,
                vec![Arc::new(|_: f64, _: &[f64], o: &mut [f64]| o[0] = 0.0) as BlockFn],
                Arc::new(move |_, _, o| o[0] = sigma),
                sigma * sigma,
            )?;
            (sys, 1)
        }
        OU_CHAIN_2X1 => (ou_chain(name, 2, params.rate, params.sigma)?, 2),
        OU_CHAIN_3X1 => (ou_chain(name, 3, params.rate, params.sigma)?, 3),
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    if !(params.half_width > 0.0 && params.horizon > 0.0 && params.sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "preset parameters must be positive: {params:?}"
        )));
    }
    let l = params.half_width;
    let domain = DomainSpec::rectangle(&vec![(-l, l); n], (0.0, params.horizon), 0.05)?;
    let start = params.start.clone().unwrap_or_else(|| vec![0.0; n]);
    Problem::new(system, domain, TerminalFunctional::exit_indicator(), start)
}
