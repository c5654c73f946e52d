//! Plain Monte Carlo exit probabilities for scalar Brownian motion, checked
//! against the reflection-series value.
//!
//! Run with `cargo run --release --example plain_mc`.

use raresim::presets::{preset, PresetParams, FREE_BM_1};
use raresim::{plain_mc, SimOptions};

/// `P{sup_{t≤1} |√ε W_t| ≥ 1}` from the alternating image series
/// `P{sup |W| < a} = Σ_k (−1)^k [Φ((2k+1)a) − Φ((2k−1)a)]`, `a = 1/√ε`.
fn exit_probability(eps: f64) -> f64 {
    let a = 1.0 / eps.sqrt();
    let cdf = |x: f64| 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
    let stay: f64 = (-20i32..=20)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * (cdf((2 * k + 1) as f64 * a) - cdf((2 * k - 1) as f64 * a))
        })
        .sum();
    1.0 - stay
}

/// Composite Simpson rule on the error-function integrand.
fn erf(x: f64) -> f64 {
    let n = 4000;
    let h = x / n as f64;
    let f = |t: f64| (-t * t).exp();
    let mut s = f(0.0) + f(x);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0 * 2.0 / std::f64::consts::PI.sqrt()
}

fn main() -> raresim::Result<()> {
    let problem = preset(FREE_BM_1, &PresetParams::default())?;
    let opts = SimOptions::new(1e-3).with_bridge_exit(true);
    println!("{:>6} {:>10} {:>10} {:>10} {:>8}", "eps", "estimate", "ci_half", "series", "delta");
    for eps in [1.0, 0.5, 0.25] {
        let est = plain_mc(&problem, eps, 20_000, &opts, 11)?;
        let r = &est.report;
        println!(
            "{eps:>6} {:>10.5} {:>10.5} {:>10.5} {:>8.3}",
            r.mean,
            r.ci95.1 - r.mean,
            exit_probability(eps),
            r.delta.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
