//! Plain and importance-sampled estimators of `E[exp(−Φ/ε)]` and their
//! diagnostics (variance, relative error, Δ ratio, log-efficiency).

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Problem;
use crate::rng::NoiseStream;
use crate::sde::{simulate, simulate_controlled, Control, PathSample, SimOptions};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Plain,
    Importance,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Plain => "plain",
            EstimatorKind::Importance => "importance",
        }
    }
}

pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub kind: EstimatorKind,
    pub eps: f64,
    pub n_samples: usize,
    pub mean: f64,
    pub second_moment: f64,
    /// Variance of the sample mean, `(m₂ − m²)/N`.
    pub variance: f64,
    /// `√variance / mean`; `None` when the mean is zero.
    pub rel_err: Option<f64>,
    /// `m₂ / m²`; `None` when the mean is zero.
    pub delta: Option<f64>,
    pub ci95: (f64, f64),
    pub seed: u64,
}

impl EstimateReport {
    /// Builds a report from per-sample summands, reduced in index order.
    pub fn from_summands(kind: EstimatorKind, eps: f64, seed: u64, summands: &[f64]) -> Result<Self> {
        let n = summands.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
        }
        let mut s1 = CompensatedSum::default();
        let mut s2 = CompensatedSum::default();
        for &w in summands {
            s1.add(w);
            s2.add(w * w);
        }
        let nf = n as f64;
        let mean = s1.value() / nf;
        let second_moment = s2.value() / nf;
        let (variance, rel_err, delta) = if mean > 0.0 {
            // relative excess Δ − 1, shared by every derived column
            let excess = ((second_moment - mean * mean) / (mean * mean)).max(0.0);
            (
                mean * mean * excess / nf,
                Some((excess / nf).sqrt()),
                Some(1.0 + excess),
            )
        } else {
            ((second_moment - mean * mean).max(0.0) / nf, None, None)
        };
        let half = Z_95 * variance.sqrt();
        Ok(Self {
            kind,
            eps,
            n_samples: n,
            mean,
            second_moment,
            variance,
            rel_err,
            delta,
            ci95: (mean - half, mean + half),
            seed,
        })
    }

    pub fn standard_error(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn is_degenerate(&self) -> bool {
        self.delta.is_none()
    }

    pub const CSV_HEADER: &'static str =
        "kind,eps,N,mean,second_moment,variance,rel_err,delta,ci_lo,ci_hi,seed";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        format!(
            "{},{:e},{},{:e},{:e},{:e},{},{},{:e},{:e},{}",
            self.kind.as_str(),
            self.eps,
            self.n_samples,
            self.mean,
            self.second_moment,
            self.variance,
            opt(self.rel_err),
            opt(self.delta),
            self.ci95.0,
            self.ci95.1,
            self.seed
        )
    }
}

pub fn write_reports_csv<W: Write>(out: &mut W, reports: &[EstimateReport]) -> Result<()> {
    writeln!(out, "{}", EstimateReport::CSV_HEADER)?;
    for r in reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SamplingDiagnostics {
    pub paths: usize,
    pub exits: usize,
    pub total_steps: usize,
    pub clamped_steps: usize,
    /// Minimum eigenvalue of `σσᵀ` seen at path endpoints, when below the floor.
    pub ellipticity_warning: Option<f64>,
}

impl SamplingDiagnostics {
    pub fn clamp_fraction(&self) -> f64 {
        if self.total_steps == 0 {
            0.0
        } else {
            self.clamped_steps as f64 / self.total_steps as f64
        }
    }
}

/// A finished estimation run.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub report: EstimateReport,
    /// `exp(−Φ_j/ε)·z_j` in sample order.
    pub summands: Vec<f64>,
    /// `z_j` in sample order (all ones for plain runs).
    pub weights: Vec<f64>,
    pub diagnostics: SamplingDiagnostics,
}

/// Simulates `n` independent paths, sample `j` driven by stream `(seed, j)`.
/// Output order is the sample order regardless of scheduling.
pub fn sample_paths(
    problem: &Problem,
    eps: f64,
    n: usize,
    opts: &SimOptions,
    seed: u64,
    control: Option<&dyn Control>,
) -> Vec<Result<PathSample>> {
    (0..n)
        .into_par_iter()
        .map(|j| {
            let mut stream = NoiseStream::new(seed, j as u64);
            match control {
                None => simulate(problem, eps, opts, &mut stream),
                Some(c) => simulate_controlled(problem, eps, opts, &mut stream, c),
            }
        })
        .collect()
}

fn estimate(
    problem: &Problem,
    eps: f64,
    n: usize,
    opts: &SimOptions,
    seed: u64,
    control: Option<&dyn Control>,
) -> Result<Estimate> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("N must be at least 2, got {n}")));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let kind = if control.is_some() {
        EstimatorKind::Importance
    } else {
        EstimatorKind::Plain
    };
    let results = sample_paths(problem, eps, n, opts, seed, control);
    let mut bad = Vec::new();
    let mut paths = Vec::with_capacity(n);
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) if p.girsanov_log_weight.is_finite() => paths.push(p),
            Ok(_) => bad.push(j),
            Err(Error::Simulation { message, .. }) if message.contains("log-weight") => bad.push(j),
            Err(e) => return Err(e),
        }
    }
    if !bad.is_empty() {
        return Err(Error::NonFiniteWeights { indices: bad });
    }

    let mut diagnostics = SamplingDiagnostics {
        paths: n,
        ..Default::default()
    };
    let mut summands = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let (s, _) = problem.domain.time_window;
    let mut min_eig = problem
        .system
        .check_ellipticity(&[(s, problem.start.clone())])?
        .min_eigenvalue;
    for (j, p) in paths.iter().enumerate() {
        diagnostics.total_steps += p.steps;
        diagnostics.clamped_steps += p.clamped_steps;
        diagnostics.exits += p.exited as usize;
        if j < 256 {
            let r = problem
                .system
                .check_ellipticity(&[(p.theta, p.exit_state.clone())])?;
            min_eig = min_eig.min(r.min_eigenvalue);
        }
        let phi = problem.terminal.evaluate(p.theta, &p.exit_state, p.exited)?;
        let z = p.weight();
        let w = phi.weight(eps);
        // Φ = +∞ contributes an exact zero whatever the weight
        summands.push(if w == 0.0 { 0.0 } else { w * z });
        weights.push(z);
    }
    if min_eig < problem.system.lambda_floor {
        diagnostics.ellipticity_warning = Some(min_eig);
    }
    let report = EstimateReport::from_summands(kind, eps, seed, &summands)?;
    Ok(Estimate {
        report,
        summands,
        weights,
        diagnostics,
    })
}

/// `ρ(ε) = (1/N) Σ exp(−Φ(x^{(j)})/ε)` over uncontrolled paths. With the exit
/// indicator this estimates the exit probability `q^ε`; zero hits give a
/// degenerate report rather than an error.
pub fn plain_mc(problem: &Problem, eps: f64, n: usize, opts: &SimOptions, seed: u64) -> Result<Estimate> {
    estimate(problem, eps, n, opts, seed, None)
}

/// `ρ̂(ε) = (1/N) Σ exp(−Φ(x̂^{(j)})/ε)·z^{(j)}` over tilted paths.
pub fn importance_sampled(
    problem: &Problem,
    eps: f64,
    n: usize,
    opts: &SimOptions,
    seed: u64,
    control: &dyn Control,
) -> Result<Estimate> {
    estimate(problem, eps, n, opts, seed, Some(control))
}

/// `Δ = second_moment / mean²`.
pub fn delta_ratio(report: &EstimateReport) -> Result<f64> {
    if !(report.mean > 0.0) {
        return Err(Error::DegenerateEstimator(format!(
            "mean is {} at eps={}",
            report.mean, report.eps
        )));
    }
    Ok(report.second_moment / (report.mean * report.mean))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEfficiencyRow {
    pub eps: f64,
    pub delta: f64,
    /// `−ε·log Δ`; tends to 0 for a log-efficient estimator.
    pub metric: Option<f64>,
    /// `½·ε·log(Δ − 1) = ε·log(√N·Rerr)`, the exponent in `Rerr = N^{-1/2} e^{o(1)/ε}`.
    pub rerr_exponent: Option<f64>,
    pub flagged: bool,
}

pub fn log_efficiency_metric(sweep: &[(f64, f64)]) -> Vec<LogEfficiencyRow> {
    sweep
        .iter()
        .map(|&(eps, delta)| {
            let ok = delta.is_finite() && delta >= 1.0 - 1e-12 && eps > 0.0;
            LogEfficiencyRow {
                eps,
                delta,
                metric: ok.then(|| -eps * delta.max(1.0).ln()),
                rerr_exponent: (ok && delta > 1.0).then(|| 0.5 * eps * (delta - 1.0).ln()),
                flagged: !ok,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VaradhanRow {
    pub eps: f64,
    /// `−ε·log mean`.
    pub log_mean: Option<f64>,
    /// `−ε·log second_moment`.
    pub log_second_moment: Option<f64>,
    pub flagged: bool,
}

pub fn varadhan_check(reports: &[EstimateReport]) -> Vec<VaradhanRow> {
    reports
        .iter()
        .map(|r| {
            let ok = r.mean > 0.0;
            VaradhanRow {
                eps: r.eps,
                log_mean: ok.then(|| -r.eps * r.mean.ln()),
                log_second_moment: ok.then(|| -r.eps * r.second_moment.ln()),
                flagged: !ok,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TerminalFunctional;
    use crate::presets::{preset, PresetParams, FREE_BM_1, OU_CHAIN_2X1};
    use crate::sde::{ConstantControl, ZeroControl};

    #[test]
    fn compensated_sum_beats_naive() {
        let mut c = CompensatedSum::default();
        c.add(1.0);
        for _ in 0..10 {
            c.add(1e-16);
        }
        assert_eq!(c.value(), 1.0 + 1e-15);
    }

    #[test]
    fn constant_summands() {
        let r = EstimateReport::from_summands(EstimatorKind::Plain, 1.0, 0, &[1.0; 10]).unwrap();
        assert_eq!((r.mean, r.variance, r.delta), (1.0, 0.0, Some(1.0)));
        assert_eq!(delta_ratio(&r).unwrap(), 1.0);
    }

    #[test]
    fn two_point_delta() {
        let c = 0.3;
        let r = EstimateReport::from_summands(EstimatorKind::Plain, 1.0, 0, &[0.0, 2.0 * c]).unwrap();
        assert!((r.mean - c).abs() < 1e-15);
        assert!((r.second_moment - 2.0 * c * c).abs() < 1e-15);
        assert!((delta_ratio(&r).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn zero_mean_is_degenerate() {
        let r = EstimateReport::from_summands(EstimatorKind::Plain, 1.0, 0, &[0.0; 5]).unwrap();
        assert!(r.is_degenerate());
        assert!(matches!(delta_ratio(&r), Err(Error::DegenerateEstimator(_))));
        assert!(r.csv_row().contains(",,"));
    }

    #[test]
    fn phi_zero_and_infinite() {
        let p = preset(FREE_BM_1, &PresetParams::default()).unwrap();
        let opts = SimOptions::new(0.05);
        let zero = p.with_terminal(TerminalFunctional::constant(0.0));
        let e = plain_mc(&zero, 1.0, 50, &opts, 1).unwrap();
        assert_eq!((e.report.mean, e.report.variance, e.report.delta), (1.0, 0.0, Some(1.0)));

        // Φ = +∞ on every path: tiny eps, no exits possible in such a short window
        let short = preset(
            FREE_BM_1,
            &PresetParams {
                horizon: 1e-3,
                ..Default::default()
            },
        )
        .unwrap();
        let e = plain_mc(&short, 1e-3, 50, &SimOptions::new(1e-4), 1).unwrap();
        assert_eq!(e.report.mean, 0.0);
        assert!(e.report.is_degenerate());
    }

    #[test]
    fn zero_control_matches_plain_sample_by_sample() {
        let p = preset(OU_CHAIN_2X1, &PresetParams::default()).unwrap();
        let opts = SimOptions::new(0.01);
        let a = plain_mc(&p, 0.5, 500, &opts, 17).unwrap();
        let b = importance_sampled(&p, 0.5, 500, &opts, 17, &ZeroControl { d: 1 }).unwrap();
        assert_eq!(a.summands, b.summands);
        assert!(b.weights.iter().all(|&z| z == 1.0));
        assert_eq!(a.report.mean, b.report.mean);
    }

    #[test]
    fn weights_average_to_one_under_bounded_control() {
        let p = preset(OU_CHAIN_2X1, &PresetParams::default())
            .unwrap()
            .with_terminal(TerminalFunctional::constant(0.0));
        let opts = SimOptions::new(0.01);
        let e = importance_sampled(&p, 0.5, 20_000, &opts, 5, &ConstantControl { value: vec![0.4] }).unwrap();
        let r = &e.report;
        assert!((r.mean - 1.0).abs() < 3.0 * r.standard_error(), "{} ± {}", r.mean, r.standard_error());
    }

    #[test]
    fn identity_and_jensen() {
        let p = preset(OU_CHAIN_2X1, &PresetParams::default()).unwrap();
        let e = plain_mc(&p, 0.5, 4000, &SimOptions::new(0.01), 3).unwrap();
        let r = &e.report;
        let d = r.delta.unwrap();
        assert!(d >= 1.0 - 1e-12);
        let lhs = r.rel_err.unwrap() * (r.n_samples as f64).sqrt();
        assert!((lhs - (d - 1.0).sqrt()).abs() <= 1e-10 * lhs.max(1e-300));
        assert!((0.0..=1.0).contains(&r.mean));
    }

    #[test]
    fn log_efficiency_examples() {
        let rows = log_efficiency_metric(&[(0.5, 1.0), (0.25, 1.0)]);
        assert!(rows.iter().all(|r| r.metric == Some(0.0)));
        let rows = log_efficiency_metric(&[(0.5, std::f64::consts::E)]);
        assert!((rows[0].metric.unwrap() + 0.5).abs() < 1e-15);
        let rows = log_efficiency_metric(&[(0.5, f64::NAN)]);
        assert!(rows[0].flagged && rows[0].metric.is_none());
    }

    #[test]
    fn varadhan_trivial_and_flagged() {
        let one = EstimateReport::from_summands(EstimatorKind::Plain, 0.5, 0, &[1.0; 4]).unwrap();
        let zero = EstimateReport::from_summands(EstimatorKind::Plain, 0.25, 0, &[0.0; 4]).unwrap();
        let rows = varadhan_check(&[one, zero]);
        assert_eq!(rows[0].log_mean, Some(-0.0));
        assert_eq!(rows[0].log_second_moment, Some(-0.0));
        assert!(rows[1].flagged);
    }

    #[test]
    fn csv_row_round_trips_numbers() {
        let r = EstimateReport::from_summands(EstimatorKind::Importance, 0.25, 9, &[0.1, 0.3, 0.2]).unwrap();
        let row = r.csv_row();
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 11);
        assert_eq!(cols[0], "importance");
        assert_eq!(cols[3].parse::<f64>().unwrap(), r.mean);
        assert_eq!(cols[10], "9");
    }
}
