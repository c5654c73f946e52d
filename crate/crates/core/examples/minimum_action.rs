//! Minimum-action exit paths with a free exit time, plus the blow-up probe
//! for a path held at a point.
//!
//! Run with `cargo run --release --example minimum_action`.

use raresim::action::{blowup_probe, minimize_action, ActionOptions};
use raresim::presets::{preset, PresetParams, FREE_BM_1, OU_CHAIN_2X1, OU_CHAIN_3X1};

fn main() -> raresim::Result<()> {
    for name in [FREE_BM_1, OU_CHAIN_2X1, OU_CHAIN_3X1] {
        let p = preset(name, &PresetParams::default())?;
        let (path, value, _) = minimize_action(&p.system, &p.domain, &p.start, &ActionOptions::default())?;
        println!(
            "{name:<14} action {:.6}  θ {:.3}  converged {}  exit state {:?}",
            value.value,
            path.theta,
            value.converged,
            path.state(path.knots())
        );
    }
    println!("closed form for the OU chains: {:.6}", 1.0 / (1.0 - (-2.0f64).exp()));

    // holding x¹ at 0.5 costs ½·0.25 per unit time against f₁ = −x¹
    let p = preset(OU_CHAIN_2X1, &PresetParams { horizon: 50.0, ..Default::default() })?;
    let horizons = [1.0, 5.0, 25.0, 50.0];
    let vals = blowup_probe(&p.system, &p.domain, &[0.5, 0.5], &|_| vec![0.5], &horizons, 16)?;
    for (t, v) in horizons.iter().zip(vals) {
        println!("hold at 0.5 until T = {t:>4}: action {v:.4}");
    }
    Ok(())
}
