use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::DomainSpec;

/// One uniformly spaced coordinate axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Axis {
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }
}

/// How the explicit solver splits each output time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Substeps {
    /// Adaptive: each inner step uses 90% of the local monotonicity limit.
    Auto,
    /// Exactly `k` equal inner steps; the stability bound is checked up front.
    Fixed(usize),
}

/// Tensor grid over the state box times `M` uniform steps over `[s, T]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
    pub time_window: (f64, f64),
    pub time_steps: usize,
    pub substeps: Substeps,
}

impl GridSpec {
    pub fn new(bounds: &[(f64, f64)], points: &[usize], time_window: (f64, f64), time_steps: usize) -> Result<Self> {
        if bounds.is_empty() || bounds.len() != points.len() {
            return Err(Error::InvalidArgument(format!(
                "grid needs one point count per axis ({} bounds, {} counts)",
                bounds.len(),
                points.len()
            )));
        }
        if let Some(p) = points.iter().find(|&&p| p < 3) {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 3 points per axis, got {p}"
            )));
        }
        if bounds.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidArgument("grid axes need lo < hi".into()));
        }
        let (s, t) = time_window;
        if !(s < t) || time_steps == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid needs s < T and at least one time step (window ({s}, {t}), M = {time_steps})"
            )));
        }
        Ok(Self {
            axes: bounds
                .iter()
                .zip(points)
                .map(|(&(lo, hi), &points)| Axis { lo, hi, points })
                .collect(),
            time_window,
            time_steps,
            substeps: Substeps::Auto,
        })
    }

    /// Grid over the domain's bounding box and time window.
    pub fn over_domain(domain: &DomainSpec, points: &[usize], time_steps: usize) -> Result<Self> {
        Self::new(&domain.bounding_box, points, domain.time_window, time_steps)
    }

    /// Grid whose outer faces coincide with a rectangular domain's boundary,
    /// falling back to the bounding box for other shapes.
    pub fn fitted(domain: &DomainSpec, points: &[usize], time_steps: usize) -> Result<Self> {
        let bounds = domain.rectangle_bounds().unwrap_or(&domain.bounding_box);
        Self::new(bounds, points, domain.time_window, time_steps)
    }

    pub fn with_substeps(mut self, substeps: Substeps) -> Result<Self> {
        if substeps == Substeps::Fixed(0) {
            return Err(Error::InvalidArgument("fixed substep count must be positive".into()));
        }
        self.substeps = substeps;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn n_slices(&self) -> usize {
        self.time_steps + 1
    }

    pub fn dt(&self) -> f64 {
        (self.time_window.1 - self.time_window.0) / self.time_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.time_steps {
            self.time_window.1
        } else {
            self.time_window.0 + k as f64 * self.dt()
        }
    }

    /// Linear-index strides; axis 0 varies slowest.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dim()];
        for k in (0..self.dim().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.axes[k + 1].points;
        }
        strides
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            let p = self.axes[k].points;
            out[k] = idx % p;
            idx /= p;
        }
        out
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.axes).fold(0, |acc, (&i, a)| acc * a.points + i)
    }

    pub fn node_coords_into(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        for k in (0..self.dim()).rev() {
            let p = self.axes[k].points;
            out[k] = self.axes[k].coord(rem % p);
            rem /= p;
        }
    }

    pub fn node_coords(&self, idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.node_coords_into(idx, &mut out);
        out
    }

    /// Whether the node sits on the outer face of the grid box.
    pub fn is_edge(&self, idx: usize) -> bool {
        self.multi_index(idx)
            .iter()
            .zip(&self.axes)
            .any(|(&i, a)| i == 0 || i + 1 == a.points)
    }

    /// Index of the slice nearest to time `t`, clamped to the window.
    pub fn nearest_slice(&self, t: f64) -> usize {
        let k = ((t - self.time_window.0) / self.dt()).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.time_steps)
        }
    }

    /// Cell index and local weight per axis for multilinear interpolation;
    /// coordinates outside the box are clamped onto it.
    pub fn locate(&self, x: &[f64], cells: &mut [usize], weights: &mut [f64]) {
        for (k, a) in self.axes.iter().enumerate() {
            let u = ((x[k] - a.lo) / a.spacing()).clamp(0.0, (a.points - 1) as f64);
            let i = (u.floor() as usize).min(a.points - 2);
            cells[k] = i;
            weights[k] = (u - i as f64).clamp(0.0, 1.0);
        }
    }

    pub(crate) fn same_shape(&self, other: &GridSpec) -> bool {
        self.axes == other.axes && self.time_window == other.time_window && self.time_steps == other.time_steps
    }
}
