//! Grid solves for the value function and the exit probability, the
//! log-transform cross-check between them, and a control-field round trip
//! through CSV.
//!
//! Run with `cargo run --release --example hjb_control`.

use raresim::hjb::{cache_control, extract_control, solve_exit_bvp, solve_hjb, GridSpec};
use raresim::presets::{preset, PresetParams, FREE_BM_1};

fn main() -> raresim::Result<()> {
    let problem = preset(FREE_BM_1, &PresetParams::default())?;
    let eps = 0.5;
    let grid = GridSpec::fitted(&problem.domain, &[161], 200)?;
    let j = solve_hjb(&problem.system, &problem.domain, &problem.terminal, eps, &grid)?;
    let q = solve_exit_bvp(&problem.system, &problem.domain, eps, &grid)?;
    println!("{:>6} {:>10} {:>10} {:>10}", "x", "q", "exp(-J/e)", "rel");
    for node in (0..grid.n_nodes()).step_by(20) {
        let (a, b) = (q.at(0, node), (-j.at(0, node) / eps).exp());
        println!("{:>6.2} {a:>10.5} {b:>10.5} {:>10.2e}", grid.node_coords(node)[0], (a - b).abs() / a);
    }

    let v = extract_control(&j, &problem.system, None)?;
    println!("control at (0, 0.5): {:?}; clamped nodes: {}", v.node_value(0, 120), v.clamped_nodes());
    let path = std::env::temp_dir().join("raresim_example_field_v.csv");
    v.write_csv(&mut std::fs::File::create(&path)?)?;
    let back = cache_control(&path, &problem.system.name, eps, &grid)?;
    assert_eq!(back.values, v.values);
    println!("round trip through {} is exact", path.display());
    match cache_control(&path, &problem.system.name, 0.25, &grid) {
        Err(e) => println!("reload at another eps: {e}"),
        Ok(_) => unreachable!("eps guard"),
    }
    Ok(())
}
