//! Batch front door: experiment configs, orchestration of solves and
//! sampling campaigns, CSV outputs and the run manifest.

mod config;
mod manifest;

pub use config::{
    ControlConfig, DebugConfig, ExperimentConfig, ExperimentKind, GridConfig, MAX_DUMPED_PATHS,
};
pub use manifest::{FileEntry, RunManifest, StageTiming};

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::action::{asymptotic_comparison, minimize_action, ComparisonRow};
use crate::error::{Error, Result};
use crate::estimators::{
    importance_sampled, log_efficiency_metric, plain_mc, varadhan_check, write_reports_csv, Estimate, EstimateReport,
};
use crate::hjb::{
    cache_control, extract_control, solve_exit_bvp, solve_hjb, ControlField, GridSpec, Substeps, ValueField,
};
use crate::model::{Problem, TerminalFunctional};
use crate::presets::preset;
use crate::rng::NoiseStream;
use crate::sde::{simulate, simulate_controlled, Control, SimOptions};

/// Executes `kind` with `config`, writing every artifact and `manifest.json`
/// into `out_dir`. `workers` sizes the thread pool (machine parallelism when
/// `None`).
pub fn run(kind: ExperimentKind, config: &ExperimentConfig, out_dir: &Path, workers: Option<usize>) -> Result<RunManifest> {
    config.validate()?;
    if let Some(k) = config.kind {
        if k != kind {
            return Err(Error::Config {
                line: None,
                message: format!("config declares kind `{k}` but `{kind}` was requested"),
            });
        }
    }
    if workers == Some(0) {
        return Err(Error::Config {
            line: None,
            message: "worker count must be positive".into(),
        });
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config {
            line: None,
            message: format!("cannot build worker pool: {e}"),
        })?;
    std::fs::create_dir_all(out_dir)?;
    let mut runner = Runner {
        problem: preset(&config.preset, &config.params)?,
        config,
        out_dir,
        opts: SimOptions::new(config.dt).with_bridge_exit(config.debug.bridge_exit),
        manifest: RunManifest::new(kind, config.clone(), pool.current_num_threads()),
    };
    pool.install(|| runner.execute(kind))?;
    runner.manifest.write(out_dir)?;
    Ok(runner.manifest)
}

struct Runner<'a> {
    problem: Problem,
    config: &'a ExperimentConfig,
    out_dir: &'a Path,
    opts: SimOptions,
    manifest: RunManifest,
}

fn field_name(stem: &str, index: usize, count: usize) -> String {
    if count == 1 {
        format!("{stem}.csv")
    } else {
        format!("{stem}_{index}.csv")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl Runner<'_> {
    fn stage<T>(&mut self, name: String, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self).map_err(|e| e.in_stage(name.clone()))?;
        self.manifest.stages.push(StageTiming {
            stage: name,
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    fn emit(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.manifest.emit(self.out_dir, name, bytes)
    }

    fn execute(&mut self, kind: ExperimentKind) -> Result<()> {
        match kind {
            ExperimentKind::Mc => {
                let reports = self.plain_reports()?;
                self.emit_reports(&reports)
            }
            ExperimentKind::Sweep => {
                let reports = self.plain_reports()?;
                self.emit_reports(&reports)?;
                self.emit_sweep(&reports)
            }
            ExperimentKind::Hjb => {
                let count = self.config.eps.len();
                for (i, &eps) in self.config.eps.clone().iter().enumerate() {
                    let q = self.stage(format!("solve_exit_bvp eps={eps}"), |r| {
                        solve_exit_bvp(&r.problem.system, &r.problem.domain, eps, &r.grid()?)
                    })?;
                    self.note_field(&q);
                    let mut buf = Vec::new();
                    q.write_csv(&mut buf)?;
                    self.emit(&field_name("field_q", i, count), &buf)?;
                    self.control(i, eps)?;
                }
                Ok(())
            }
            ExperimentKind::Is => {
                let mut reports = Vec::new();
                for (i, &eps) in self.config.eps.clone().iter().enumerate() {
                    let control = self.control(i, eps)?;
                    reports.push(self.importance(eps, &control)?);
                }
                self.emit_reports(&reports)
            }
            ExperimentKind::Compare => {
                let mut reports = Vec::new();
                let mut table = String::from(
                    "eps,delta_plain,delta_is,rel_err_plain,rel_err_is,log_eff_plain,log_eff_is\n",
                );
                for (i, &eps) in self.config.eps.clone().iter().enumerate() {
                    let plain = self.plain(eps)?;
                    let control = self.control(i, eps)?;
                    let is = self.importance(eps, &control)?;
                    let eff = log_efficiency_metric(&[
                        (eps, plain.delta.unwrap_or(f64::NAN)),
                        (eps, is.delta.unwrap_or(f64::NAN)),
                    ]);
                    writeln!(
                        table,
                        "{eps:e},{},{},{},{},{},{}",
                        opt(plain.delta),
                        opt(is.delta),
                        opt(plain.rel_err),
                        opt(is.rel_err),
                        opt(eff[0].metric),
                        opt(eff[1].metric)
                    )
                    .expect("write to string");
                    reports.push(plain);
                    reports.push(is);
                }
                self.emit_reports(&reports)?;
                self.emit("compare.csv", table.as_bytes())
            }
            ExperimentKind::Action => {
                let (path, value, runs) = self.stage("minimize_action".into(), |r| {
                    minimize_action(&r.problem.system, &r.problem.domain, &r.problem.start, &r.config.action)
                })?;
                for run in &runs {
                    if !run.value.converged {
                        self.manifest.warn(format!(
                            "action restart {} not converged: value {:e}, |grad| {:e} after {} iterations",
                            run.restart, run.value.value, run.value.grad_norm, run.value.iterations
                        ));
                    }
                }
                let mut buf = Vec::new();
                path.write_csv(&mut buf)?;
                self.emit("action_path.csv", &buf)?;
                let reports = self.plain_reports()?;
                self.emit_reports(&reports)?;
                let rows = asymptotic_comparison(&reports, value.value);
                for row in rows.iter().filter(|r| r.flagged) {
                    self.manifest
                        .warn(format!("eps={}: zero estimate, no log comparison", row.eps));
                }
                let mut table = String::from(ComparisonRow::CSV_HEADER);
                table.push('\n');
                for row in &rows {
                    table.push_str(&row.csv_row());
                    table.push('\n');
                }
                self.emit("action.csv", table.as_bytes())
            }
        }
    }

    fn grid(&self) -> Result<GridSpec> {
        let points = self.config.grid_points(self.problem.system.dim());
        let grid = GridSpec::fitted(&self.problem.domain, &points, self.config.grid.time_steps)?;
        match self.config.grid.substeps {
            Some(k) => grid.with_substeps(Substeps::Fixed(k)),
            None => Ok(grid),
        }
    }

    fn note_field(&mut self, field: &ValueField) {
        for note in &field.notes {
            self.manifest.warn(format!("eps={}: {note}", field.eps));
        }
    }

    /// Cached control when configured, otherwise a fresh solve whose `J` and
    /// `v` fields are dumped.
    fn control(&mut self, index: usize, eps: f64) -> Result<ControlField> {
        let grid = self.grid()?;
        if let Some(path) = self.config.control.cache.clone() {
            return self.stage(format!("cache_control eps={eps}"), |r| {
                cache_control(&path, &r.problem.system.name, eps, &grid)
            });
        }
        let terminal = match self.config.control.penalty {
            Some(m) => TerminalFunctional::exit_penalty(m)?,
            None => self.problem.terminal.clone(),
        };
        let j = self.stage(format!("solve_hjb eps={eps}"), |r| {
            solve_hjb(&r.problem.system, &r.problem.domain, &terminal, eps, &grid)
        })?;
        self.note_field(&j);
        let v = self.stage(format!("extract_control eps={eps}"), |r| {
            extract_control(&j, &r.problem.system, r.config.control.cap)
        })?;
        let clamped = v.clamped_nodes();
        if clamped > 0 {
            self.manifest.warn(format!(
                "eps={eps}: {clamped} control nodes clamped at |v| = {:e}",
                v.cap
            ));
        }
        let count = self.config.eps.len();
        let mut buf = Vec::new();
        j.write_csv(&mut buf)?;
        self.emit(&field_name("field_J", index, count), &buf)?;
        buf.clear();
        v.write_csv(&mut buf)?;
        self.emit(&field_name("field_v", index, count), &buf)?;
        Ok(v)
    }

    fn plain_reports(&mut self) -> Result<Vec<EstimateReport>> {
        self.config.eps.clone().into_iter().map(|eps| self.plain(eps)).collect()
    }

    fn plain(&mut self, eps: f64) -> Result<EstimateReport> {
        let est = self.stage(format!("plain_mc eps={eps}"), |r| {
            plain_mc(&r.problem, eps, r.config.n, &r.opts, r.config.seed)
        })?;
        self.check(&est);
        self.dump_paths("plain", eps, None)?;
        Ok(est.report)
    }

    fn importance(&mut self, eps: f64, control: &ControlField) -> Result<EstimateReport> {
        let est = self.stage(format!("importance_sampled eps={eps}"), |r| {
            importance_sampled(&r.problem, eps, r.config.n, &r.opts, r.config.seed, control)
        })?;
        self.check(&est);
        self.dump_paths("importance", eps, Some(control))?;
        Ok(est.report)
    }

    fn check(&mut self, est: &Estimate) {
        let r = &est.report;
        let label = format!("{} eps={}", r.kind.as_str(), r.eps);
        if r.is_degenerate() {
            self.manifest
                .warn(format!("{label}: degenerate estimate (mean {:e})", r.mean));
        }
        let d = &est.diagnostics;
        if d.clamped_steps > 0 {
            self.manifest.warn(format!(
                "{label}: control clamp active on {} of {} steps ({:.3e})",
                d.clamped_steps,
                d.total_steps,
                d.clamp_fraction()
            ));
        }
        if let Some(lam) = d.ellipticity_warning {
            self.manifest
                .warn(format!("{label}: diffusion eigenvalue {lam:e} below the ellipticity floor"));
        }
    }

    fn dump_paths(&mut self, tag: &str, eps: f64, control: Option<&dyn Control>) -> Result<()> {
        if !self.config.debug.dump_paths {
            return Ok(());
        }
        let opts = self.opts.clone().recording();
        let count = self.config.debug.dump_count.min(MAX_DUMPED_PATHS).min(self.config.n);
        let index = self.config.eps.iter().position(|&e| e == eps).unwrap_or(0);
        for j in 0..count {
            let mut stream = NoiseStream::new(self.config.seed, j as u64);
            let path = match control {
                None => simulate(&self.problem, eps, &opts, &mut stream)?,
                Some(c) => simulate_controlled(&self.problem, eps, &opts, &mut stream, c)?,
            };
            let mut buf = Vec::new();
            path.write_csv(&mut buf)?;
            self.emit(&format!("paths/{tag}_e{index}_{j}.csv"), &buf)?;
        }
        Ok(())
    }

    fn emit_reports(&mut self, reports: &[EstimateReport]) -> Result<()> {
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, reports)?;
        self.emit("reports.csv", &buf)
    }

    fn emit_sweep(&mut self, reports: &[EstimateReport]) -> Result<()> {
        let rows = varadhan_check(reports);
        let eff = log_efficiency_metric(
            &reports
                .iter()
                .map(|r| (r.eps, r.delta.unwrap_or(f64::NAN)))
                .collect::<Vec<_>>(),
        );
        let mut table = String::from("eps,log_mean,log_second_moment,log_efficiency,flagged\n");
        for (row, e) in rows.iter().zip(&eff) {
            if row.flagged {
                self.manifest
                    .warn(format!("eps={}: zero estimate, log table entry empty", row.eps));
            }
            writeln!(
                table,
                "{:e},{},{},{},{}",
                row.eps,
                opt(row.log_mean),
                opt(row.log_second_moment),
                opt(e.metric),
                row.flagged
            )
            .expect("write to string");
        }
        self.emit("sweep.csv", table.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(src: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(src).unwrap()
    }

    #[test]
    fn mc_smoke_writes_one_row_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let c = config("preset = \"free-bm-1\"\neps = [1.0]\nn = 10000\ndt = 1e-3\nseed = 3\n");
        let m = run(ExperimentKind::Mc, &c, dir.path(), Some(2)).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("reports.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(dir.path().join("manifest.json").exists());
        assert_eq!(m.files.len(), 1);
        assert_eq!(m.files[0].name, "reports.csv");
    }

    #[test]
    fn kind_mismatch_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let c = config("kind = \"mc\"\npreset = \"free-bm-1\"\neps = [1.0]\n");
        let err = run(ExperimentKind::Hjb, &c, dir.path(), None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn hjb_dumps_fields_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let c = config("preset = \"free-bm-1\"\neps = [0.5]\n[grid]\npoints = [41]\ntime_steps = 20\n");
        let m = run(ExperimentKind::Hjb, &c, dir.path(), Some(1)).unwrap();
        let names: Vec<&str> = m.files.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, vec!["field_q.csv", "field_J.csv", "field_v.csv"]);
        let grid = GridSpec::fitted(&preset("free-bm-1", &Default::default()).unwrap().domain, &[41], 20).unwrap();
        cache_control(&dir.path().join("field_v.csv"), "free-bm-1", 0.5, &grid).unwrap();
        assert!(cache_control(&dir.path().join("field_v.csv"), "free-bm-1", 0.25, &grid).is_err());
    }

    #[test]
    fn dump_paths_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config("preset = \"free-bm-1\"\neps = [1.0]\nn = 100\n");
        c.debug.dump_paths = true;
        c.debug.dump_count = 3;
        let m = run(ExperimentKind::Mc, &c, dir.path(), Some(1)).unwrap();
        assert_eq!(m.files.iter().filter(|f| f.name.starts_with("paths/")).count(), 3);
        assert!(dir.path().join("paths/plain_e0_2.csv").exists());
    }
}
