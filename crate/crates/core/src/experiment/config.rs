use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::action::ActionOptions;
use crate::error::{Error, Result};
use crate::presets::{preset, PresetParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// Plain Monte Carlo per eps.
    Mc,
    /// Importance sampling with a solved or cached control.
    Is,
    /// Plain estimates per eps plus the `−ε log` table.
    Sweep,
    /// Grid solves and field dumps only.
    Hjb,
    /// Minimum action plus the small-noise comparison.
    Action,
    /// Paired plain/IS campaign.
    Compare,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Mc,
        ExperimentKind::Is,
        ExperimentKind::Sweep,
        ExperimentKind::Hjb,
        ExperimentKind::Action,
        ExperimentKind::Compare,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Mc => "mc",
            ExperimentKind::Is => "is",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Hjb => "hjb",
            ExperimentKind::Action => "action",
            ExperimentKind::Compare => "compare",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config {
                line: None,
                message: format!("unknown experiment kind `{s}` (expected mc, is, sweep, hjb, action or compare)"),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Points per axis; defaults to 81 on every axis.
    pub points: Option<Vec<usize>>,
    pub time_steps: usize,
    /// Fixed inner steps per output step; adaptive when absent.
    pub substeps: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            points: None,
            time_steps: 100,
            substeps: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    /// Clamp cap on `|v|`; defaults to ten times the largest block-1 drift.
    pub cap: Option<f64>,
    /// Solve the control problem for the bounded exit penalty instead of the
    /// exit indicator.
    pub penalty: Option<f64>,
    /// Previously dumped `field_v.csv` to reuse (single eps only).
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DebugConfig {
    pub dump_paths: bool,
    /// Paths dumped per estimator and eps (at most 64).
    pub dump_count: usize,
    pub bridge_exit: bool,
}

impl Default for DebugConfig {
    fn default() -> Self {
        Self {
            dump_paths: false,
            dump_count: 8,
            bridge_exit: false,
        }
    }
}

pub const MAX_DUMPED_PATHS: usize = 64;

fn default_n() -> usize {
    10_000
}

fn default_dt() -> f64 {
    1e-3
}

/// One experiment run, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    pub preset: String,
    #[serde(default)]
    pub params: PresetParams,
    pub eps: Vec<f64>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub action: ActionOptions,
    #[serde(default)]
    pub debug: DebugConfig,
}

/// Line of `key = …` inside `[section]` (top level when `None`).
fn line_of(src: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = Some(line.trim_matches(|c| c == '[' || c == ']').trim().to_string());
            continue;
        }
        let Some((k, _)) = line.split_once('=') else {
            continue;
        };
        if k.trim() == key && current.as_deref() == section {
            return Some(i + 1);
        }
    }
    None
}

impl ExperimentConfig {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(src).map_err(|e| Error::Config {
            line: e.span().map(|s| src[..s.start].matches('\n').count() + 1),
            message: e.message().trim().to_string(),
        })?;
        cfg.validate_with_source(Some(src))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::Config {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_toml_str(&src)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_source(None)
    }

    fn validate_with_source(&self, src: Option<&str>) -> Result<()> {
        let fail = |section: Option<&str>, key: &str, message: String| Error::Config {
            line: src.and_then(|s| line_of(s, section, key)),
            message: match section {
                Some(sec) => format!("`{sec}.{key}`: {message}"),
                None => format!("`{key}`: {message}"),
            },
        };
        if self.eps.is_empty() {
            return Err(fail(None, "eps", "needs at least one value".into()));
        }
        if let Some(e) = self.eps.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(fail(None, "eps", format!("entries must be positive, got {e}")));
        }
        if self.n < 2 {
            return Err(fail(None, "n", format!("must be at least 2, got {}", self.n)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(fail(None, "dt", format!("must be positive, got {}", self.dt)));
        }
        let problem = preset(&self.preset, &self.params).map_err(|e| match e {
            Error::UnknownPreset(name) => fail(None, "preset", format!("unknown preset `{name}`")),
            other => fail(Some("params"), "half_width", other.to_string()),
        })?;
        let dim = problem.system.dim();
        if let Some(points) = &self.grid.points {
            if points.len() != dim {
                return Err(fail(
                    Some("grid"),
                    "points",
                    format!("needs {dim} entries for {}, got {}", self.preset, points.len()),
                ));
            }
            if let Some(p) = points.iter().find(|&&p| p < 3) {
                return Err(fail(Some("grid"), "points", format!("need at least 3 per axis, got {p}")));
            }
        }
        if self.grid.time_steps == 0 {
            return Err(fail(Some("grid"), "time_steps", "must be positive".into()));
        }
        if self.grid.substeps == Some(0) {
            return Err(fail(Some("grid"), "substeps", "must be positive".into()));
        }
        if let Some(cap) = self.control.cap {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(fail(Some("control"), "cap", format!("must be positive, got {cap}")));
            }
        }
        if let Some(m) = self.control.penalty {
            if !(m.is_finite() && m >= 0.0) {
                return Err(fail(Some("control"), "penalty", format!("must be nonnegative, got {m}")));
            }
        }
        if self.control.cache.is_some() && self.eps.len() != 1 {
            return Err(fail(Some("control"), "cache", "a cached control serves exactly one eps".into()));
        }
        if self.action.knots < 8 {
            return Err(fail(Some("action"), "knots", format!("must be at least 8, got {}", self.action.knots)));
        }
        if self.action.restarts == 0 {
            return Err(fail(Some("action"), "restarts", "must be positive".into()));
        }
        if !(self.action.tol > 0.0 && self.action.fd_step > 0.0) {
            return Err(fail(Some("action"), "tol", "tolerances must be positive".into()));
        }
        if self.debug.dump_count > MAX_DUMPED_PATHS {
            return Err(fail(
                Some("debug"),
                "dump_count",
                format!("at most {MAX_DUMPED_PATHS}, got {}", self.debug.dump_count),
            ));
        }
        Ok(())
    }

    /// Grid point counts, defaulting to 81 per axis.
    pub fn grid_points(&self, dim: usize) -> Vec<usize> {
        self.grid.points.clone().unwrap_or_else(|| vec![81; dim])
    }
}
