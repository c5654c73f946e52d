//! Rare-event simulation for diffusions on chains of subsystems where noise
//! enters only the first subsystem.
//!
//! The crate simulates the degenerate SDE, estimates exit probabilities and
//! exponential functionals by plain Monte Carlo, solves the dynamic
//! programming equation on a grid to build an exponentially tilted importance
//! sampling control, and minimizes the large-deviations action over exit
//! paths to check the small-noise asymptotics.

pub mod action;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod hjb;
pub mod model;
pub mod presets;
pub mod rng;
pub mod sde;

pub use action::{
    action, asymptotic_comparison, blowup_probe, minimize_action, ActionOptions, ActionValue, ComparisonRow, DiscretePath,
};
pub use error::{Error, Result};
pub use estimators::{
    delta_ratio, importance_sampled, log_efficiency_metric, plain_mc, varadhan_check, Estimate,
    EstimateReport, EstimatorKind,
};
pub use experiment::{run, ExperimentConfig, ExperimentKind, RunManifest};
pub use model::{ChainSystem, DomainSpec, PhiValue, Problem, TerminalFunctional};
pub use presets::{builtin_models, preset, PresetParams};
pub use rng::NoiseStream;
pub use sde::{euler_step, locate_exit, simulate, simulate_controlled, Control, PathSample, SimOptions};
