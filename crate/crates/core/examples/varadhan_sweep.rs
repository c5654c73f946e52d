//! Small-noise sweep: `−ε log q̂^ε` from plain estimates against the minimum
//! action, and the exponential rates of the first two moments.
//!
//! Run with `cargo run --release --example varadhan_sweep`.

use raresim::action::{asymptotic_comparison, minimize_action, ActionOptions};
use raresim::presets::{preset, PresetParams, FREE_BM_1};
use raresim::{plain_mc, varadhan_check, SimOptions};

fn main() -> raresim::Result<()> {
    let p = preset(FREE_BM_1, &PresetParams::default())?;
    let (_, value, _) = minimize_action(&p.system, &p.domain, &p.start, &ActionOptions::default())?;
    let opts = SimOptions::new(1e-3).with_bridge_exit(true);
    let reports = [1.0, 0.5, 0.25, 0.125]
        .iter()
        .map(|&eps| plain_mc(&p, eps, 100_000, &opts, 5).map(|e| e.report))
        .collect::<raresim::Result<Vec<_>>>()?;
    println!("minimum action {:.5}", value.value);
    println!("{:>6} {:>10} {:>10} {:>10} {:>12}", "eps", "-e log q", "gap", "slack", "-e log m2");
    for (row, v) in asymptotic_comparison(&reports, value.value).iter().zip(varadhan_check(&reports)) {
        println!(
            "{:>6} {:>10.5} {:>10.5} {:>10.5} {:>12.5}",
            row.eps,
            row.log_estimate.unwrap_or(f64::NAN),
            row.gap.unwrap_or(f64::NAN),
            row.slack.unwrap_or(f64::NAN),
            v.log_second_moment.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
