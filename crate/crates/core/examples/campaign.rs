//! A paired plain/IS campaign driven by a TOML config, as the `raresim`
//! binary would run it, with the manifest summary printed at the end.
//!
//! Run with `cargo run --release --example campaign`.

use raresim::{run, ExperimentConfig, ExperimentKind};

const CONFIG: &str = r#"
preset = "ou-chain-2x1"
eps = [0.5, 0.25]
n = 20000
dt = 1e-3
seed = 42

[grid]
points = [81, 81]
time_steps = 100
"#;

fn main() -> raresim::Result<()> {
    let config = ExperimentConfig::from_toml_str(CONFIG)?;
    let out = std::env::temp_dir().join("raresim_campaign");
    let manifest = run(ExperimentKind::Compare, &config, &out, None)?;
    print!("{}", std::fs::read_to_string(out.join("compare.csv"))?);
    for f in &manifest.files {
        println!("{:<14} {:>9} bytes  sha256 {}", f.name, f.bytes, &f.sha256[..16]);
    }
    for s in &manifest.stages {
        println!("{:<32} {:>7.2} s", s.stage, s.seconds);
    }
    for w in &manifest.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
