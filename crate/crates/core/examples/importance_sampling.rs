//! Importance sampling with the grid-solved tilt on the two-block OU chain,
//! next to plain Monte Carlo with the same budget.
//!
//! Run with `cargo run --release --example importance_sampling`.

use raresim::hjb::{extract_control, solve_hjb, GridSpec};
use raresim::presets::{preset, PresetParams, OU_CHAIN_2X1};
use raresim::{importance_sampled, plain_mc, SimOptions};

fn main() -> raresim::Result<()> {
    let problem = preset(OU_CHAIN_2X1, &PresetParams::default())?;
    let grid = GridSpec::fitted(&problem.domain, &[81, 81], 100)?;
    let opts = SimOptions::new(1e-3);
    let n = 20_000;
    for eps in [0.5, 0.25] {
        let j = solve_hjb(&problem.system, &problem.domain, &problem.terminal, eps, &grid)?;
        let v = extract_control(&j, &problem.system, None)?;
        let plain = plain_mc(&problem, eps, n, &opts, 1)?;
        let is = importance_sampled(&problem, eps, n, &opts, 2, &v)?;
        println!("eps = {eps}");
        for est in [&plain, &is] {
            let r = &est.report;
            println!(
                "  {:<10} mean {:.5e}  rel_err {:.3e}  delta {:.4}  clamp {:.1e}",
                r.kind.as_str(),
                r.mean,
                r.rel_err.unwrap_or(f64::NAN),
                r.delta.unwrap_or(f64::NAN),
                est.diagnostics.clamp_fraction()
            );
        }
    }
    Ok(())
}
