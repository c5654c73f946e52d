//! Chain-of-subsystems diffusion model, spatial domain and terminal functional.
//!
//! The state lives in `R^{n·d}` and is split into `n` blocks of dimension `d`.
//! Noise enters block 1 only; block `i ≥ 3` may read blocks `i−1..n` only.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};

/// Drift of one block: `(t, x, out)` writes `f_i(t, x)` (length `d`) into `out`.
pub type BlockFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// Diffusion coefficient: writes `σ(t, x)` row-major (`d×d`) into `out`.
pub type SigmaFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type SignedDistanceFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type PhiFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct ChainSystem {
    pub name: String,
    pub n: usize,
    pub d: usize,
    drift_blocks: Vec<BlockFn>,
    sigma: SigmaFn,
    pub lambda_floor: f64,
}

impl fmt::Debug for ChainSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChainSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("d", &self.d)
            .field("lambda_floor", &self.lambda_floor)
            .finish_non_exhaustive()
    }
}

/// Result of sampling `σσᵀ` over a set of points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticityReport {
    pub min_eigenvalue: f64,
    pub violated: bool,
}

impl ChainSystem {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        drift_blocks: Vec<BlockFn>,
        sigma: SigmaFn,
        lambda_floor: f64,
    ) -> Result<Self> {
        if d == 0 || drift_blocks.is_empty() {
            return Err(Error::InvalidArgument(
                "a chain system needs d ≥ 1 and at least one block".into(),
            ));
        }
        if !(lambda_floor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda_floor must be positive, got {lambda_floor}"
            )));
        }
        Ok(Self {
            name: name.into(),
            n: drift_blocks.len(),
            d,
            drift_blocks,
            sigma,
            lambda_floor,
        })
    }

    /// Total state dimension `n·d`.
    pub fn dim(&self) -> usize {
        self.n * self.d
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "state has length {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Evaluates block `i` (0-based) into `out`.
    pub fn drift_block_into(&self, i: usize, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.drift_blocks[i])(t, x, out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelEvaluation {
                component: format!("drift block {}", i + 1),
                t,
                message: format!("non-finite value {out:?}"),
            });
        }
        Ok(())
    }

    pub fn full_drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.d;
        for i in 0..self.n {
            self.drift_block_into(i, t, x, &mut out[i * d..(i + 1) * d])?;
        }
        Ok(())
    }

    /// Concatenation `(f_1, …, f_n)(t, x)`.
    pub fn full_drift(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let mut out = vec![0.0; self.dim()];
        self.full_drift_into(t, x, &mut out)?;
        Ok(out)
    }

    pub fn sigma_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.sigma)(t, x, out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelEvaluation {
                component: "sigma".into(),
                t,
                message: format!("non-finite value {out:?}"),
            });
        }
        Ok(())
    }

    pub fn sigma(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        let mut buf = vec![0.0; self.d * self.d];
        self.sigma_into(t, x, &mut buf)?;
        Ok(DMatrix::from_row_slice(self.d, self.d, &buf))
    }

    /// `a = σσᵀ` at `(t, x)`.
    pub fn diffusion_matrix(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        let s = self.sigma(t, x)?;
        Ok(&s * s.transpose())
    }

    /// `b·σ(t,x)·ξ`: the product lands in block 1, every other entry is exactly zero.
    pub fn noise_injection(&self, t: f64, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        if xi.len() != self.d {
            return Err(Error::InvalidArgument(format!(
                "noise vector has length {}, expected {}",
                xi.len(),
                self.d
            )));
        }
        let mut sigma = vec![0.0; self.d * self.d];
        self.sigma_into(t, x, &mut sigma)?;
        let mut out = vec![0.0; self.dim()];
        mat_vec(&sigma, xi, &mut out[..self.d]);
        Ok(out)
    }

    /// Minimum eigenvalue of `σσᵀ` over `samples`, flagged against `lambda_floor`.
    pub fn check_ellipticity(&self, samples: &[(f64, Vec<f64>)]) -> Result<EllipticityReport> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument(
                "ellipticity check needs at least one sample".into(),
            ));
        }
        let mut min_eig = f64::INFINITY;
        for (t, x) in samples {
            self.check_state(x)?;
            let a = self.diffusion_matrix(*t, x)?;
            min_eig = min_eig.min(min_eigenvalue(&a));
        }
        Ok(EllipticityReport {
            min_eigenvalue: min_eig,
            violated: min_eig < self.lambda_floor,
        })
    }

    /// Randomized check of the chain dependency pattern: for every block `i ≥ 3`
    /// (1-based), perturbing blocks `1..i−2` must leave `f_i` bit-identical.
    /// Returns the offending block (1-based) on failure.
    pub fn verify_dependency_pattern<R: Rng>(
        &self,
        rng: &mut R,
        points: &[(f64, Vec<f64>)],
        trials: usize,
        scale: f64,
    ) -> Result<Option<usize>> {
        let d = self.d;
        let mut base = vec![0.0; d];
        let mut pert = vec![0.0; d];
        for (t, x) in points {
            self.check_state(x)?;
            for i in 2..self.n {
                self.drift_block_into(i, *t, x, &mut base)?;
                for _ in 0..trials {
                    let mut y = x.clone();
                    for v in y.iter_mut().take((i - 1) * d) {
                        *v += scale * (2.0 * rng.random::<f64>() - 1.0);
                    }
                    self.drift_block_into(i, *t, &y, &mut pert)?;
                    if base
                        .iter()
                        .zip(&pert)
                        .any(|(a, b)| a.to_bits() != b.to_bits())
                    {
                        return Ok(Some(i + 1));
                    }
                }
            }
        }
        Ok(None)
    }
}

/// `out = M·v` with `M` row-major square of size `v.len()`.
pub(crate) fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for r in 0..d {
        let mut acc = 0.0;
        for c in 0..d {
            acc += m[r * d + c] * v[c];
        }
        out[r] = acc;
    }
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)];
    }
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Bounded open domain `Ω` given by a signed distance (negative inside) plus
/// an enclosing box, and the time window `(s, T)`.
#[derive(Clone)]
pub struct DomainSpec {
    signed_distance: SignedDistanceFn,
    pub time_window: (f64, f64),
    pub bounding_box: Vec<(f64, f64)>,
    rectangle: Option<Vec<(f64, f64)>>,
}

impl fmt::Debug for DomainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DomainSpec")
            .field("time_window", &self.time_window)
            .field("bounding_box", &self.bounding_box)
            .finish_non_exhaustive()
    }
}

impl DomainSpec {
    pub fn new(
        signed_distance: SignedDistanceFn,
        time_window: (f64, f64),
        bounding_box: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let (s, t_end) = time_window;
        if !(s >= 0.0 && s < t_end) {
            return Err(Error::InvalidArgument(format!(
                "time window needs 0 ≤ s < T, got ({s}, {t_end})"
            )));
        }
        if bounding_box.is_empty() || bounding_box.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidArgument(
                "bounding box needs lo < hi on every axis".into(),
            ));
        }
        let dom = Self {
            signed_distance,
            time_window,
            bounding_box,
            rectangle: None,
        };
        let dim = dom.dim();
        for mask in 0..(1usize << dim) {
            let corner: Vec<f64> = (0..dim)
                .map(|k| {
                    let (lo, hi) = dom.bounding_box[k];
                    if mask >> k & 1 == 1 {
                        hi
                    } else {
                        lo
                    }
                })
                .collect();
            if !(dom.signed_distance(&corner) > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "bounding box corner {corner:?} is not strictly outside the domain"
                )));
            }
        }
        Ok(dom)
    }

    /// Axis-aligned box `∏ (lo_k, hi_k)`; the bounding box adds `margin` times the width.
    pub fn rectangle(bounds: &[(f64, f64)], time_window: (f64, f64), margin: f64) -> Result<Self> {
        let b: Vec<(f64, f64)> = bounds.to_vec();
        let sd = {
            let b = b.clone();
            Arc::new(move |x: &[f64]| {
                b.iter()
                    .zip(x)
                    .map(|(&(lo, hi), &v)| (lo - v).max(v - hi))
                    .fold(f64::NEG_INFINITY, f64::max)
            }) as SignedDistanceFn
        };
        let bbox = b
            .iter()
            .map(|&(lo, hi)| {
                let w = (hi - lo) * margin;
                (lo - w, hi + w)
            })
            .collect();
        let mut dom = Self::new(sd, time_window, bbox)?;
        dom.rectangle = Some(b);
        Ok(dom)
    }

    /// The box itself when the domain was built by [`DomainSpec::rectangle`].
    pub fn rectangle_bounds(&self) -> Option<&[(f64, f64)]> {
        self.rectangle.as_deref()
    }

    /// Euclidean ball.
    pub fn ball(center: &[f64], radius: f64, time_window: (f64, f64)) -> Result<Self> {
        let c = center.to_vec();
        let sd = {
            let c = c.clone();
            Arc::new(move |x: &[f64]| {
                c.iter()
                    .zip(x)
                    .map(|(a, b)| (b - a) * (b - a))
                    .sum::<f64>()
                    .sqrt()
                    - radius
            }) as SignedDistanceFn
        };
        let bbox = c
            .iter()
            .map(|&ck| (ck - 1.1 * radius, ck + 1.1 * radius))
            .collect();
        Self::new(sd, time_window, bbox)
    }

    pub fn dim(&self) -> usize {
        self.bounding_box.len()
    }

    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        (self.signed_distance)(x)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.signed_distance(x) < 0.0
    }

    /// Diagonal length of the bounding box.
    pub fn diameter(&self) -> f64 {
        self.bounding_box
            .iter()
            .map(|(lo, hi)| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt()
    }

    /// Boundary localization tolerance `δ_b`.
    pub fn boundary_tolerance(&self) -> f64 {
        1e-10 * self.diameter()
    }

    /// Unit outward normal estimated from central differences of the signed distance.
    pub fn outward_normal(&self, x: &[f64]) -> Vec<f64> {
        let h = 1e-7 * self.diameter();
        let mut y = x.to_vec();
        let mut g: Vec<f64> = (0..x.len())
            .map(|k| {
                y[k] = x[k] + h;
                let up = self.signed_distance(&y);
                y[k] = x[k] - h;
                let dn = self.signed_distance(&y);
                y[k] = x[k];
                (up - dn) / (2.0 * h)
            })
            .collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            g.iter_mut().for_each(|v| *v /= norm);
        }
        g
    }
}

/// Value of `Φ` at a stopping datum; `Infinite` makes `exp(−Φ/ε)` exactly zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiValue {
    Finite(f64),
    Infinite,
}

impl PhiValue {
    /// `exp(−Φ/ε)`.
    pub fn weight(self, eps: f64) -> f64 {
        match self {
            PhiValue::Finite(v) => (-v / eps).exp(),
            PhiValue::Infinite => 0.0,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, PhiValue::Infinite)
    }
}

#[derive(Clone)]
pub enum TerminalKind {
    /// `Φ(θ, x_θ)` finite, nonnegative and bounded by `bound`.
    BoundedLipschitz { phi: PhiFn, bound: f64 },
    /// `Φ = 0` on lateral exit before `T`, `+∞` otherwise: estimates `q^ε`.
    ExitIndicator,
    /// `Φ = 0` on lateral exit before `T`, `penalty` otherwise; a bounded
    /// stand-in for the exit indicator.
    ExitPenalty { penalty: f64 },
}

#[derive(Clone)]
pub struct TerminalFunctional {
    pub kind: TerminalKind,
}

impl fmt::Debug for TerminalFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            TerminalKind::BoundedLipschitz { bound, .. } => {
                write!(f, "TerminalFunctional::BoundedLipschitz(bound={bound})")
            }
            TerminalKind::ExitIndicator => write!(f, "TerminalFunctional::ExitIndicator"),
            TerminalKind::ExitPenalty { penalty } => {
                write!(f, "TerminalFunctional::ExitPenalty({penalty})")
            }
        }
    }
}

impl TerminalFunctional {
    pub fn exit_indicator() -> Self {
        Self {
            kind: TerminalKind::ExitIndicator,
        }
    }

    pub fn bounded(phi: PhiFn, bound: f64) -> Self {
        Self {
            kind: TerminalKind::BoundedLipschitz { phi, bound },
        }
    }

    pub fn exit_penalty(penalty: f64) -> Result<Self> {
        if !(penalty >= 0.0 && penalty.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "exit penalty must be finite and nonnegative, got {penalty}"
            )));
        }
        Ok(Self {
            kind: TerminalKind::ExitPenalty { penalty },
        })
    }

    /// `Φ ≡ c`.
    pub fn constant(c: f64) -> Self {
        Self::bounded(Arc::new(move |_, _| c), c.abs())
    }

    pub fn is_exit_indicator(&self) -> bool {
        matches!(self.kind, TerminalKind::ExitIndicator)
    }

    /// Evaluates `Φ` at `(θ, x_θ)`; `exited` marks a lateral exit before `T`.
    pub fn evaluate(&self, theta: f64, x: &[f64], exited: bool) -> Result<PhiValue> {
        match &self.kind {
            TerminalKind::ExitIndicator => Ok(if exited {
                PhiValue::Finite(0.0)
            } else {
                PhiValue::Infinite
            }),
            TerminalKind::ExitPenalty { penalty } => Ok(PhiValue::Finite(if exited { 0.0 } else { *penalty })),
            TerminalKind::BoundedLipschitz { phi, bound } => {
                let v = phi(theta, x);
                if !v.is_finite() || v < 0.0 || v > *bound {
                    return Err(Error::ModelEvaluation {
                        component: "terminal functional".into(),
                        t: theta,
                        message: format!("Φ = {v} outside [0, {bound}]"),
                    });
                }
                Ok(PhiValue::Finite(v))
            }
        }
    }
}

/// A complete rare-event problem: dynamics, domain, functional and start state.
#[derive(Clone, Debug)]
pub struct Problem {
    pub system: ChainSystem,
    pub domain: DomainSpec,
    pub terminal: TerminalFunctional,
    pub start: Vec<f64>,
}

impl Problem {
    pub fn new(
        system: ChainSystem,
        domain: DomainSpec,
        terminal: TerminalFunctional,
        start: Vec<f64>,
    ) -> Result<Self> {
        if domain.dim() != system.dim() || start.len() != system.dim() {
            return Err(Error::InvalidArgument(format!(
                "dimension mismatch: system {}, domain {}, start {}",
                system.dim(),
                domain.dim(),
                start.len()
            )));
        }
        if !domain.contains(&start) {
            return Err(Error::InvalidArgument(format!(
                "start state {start:?} is not strictly inside the domain"
            )));
        }
        Ok(Self {
            system,
            domain,
            terminal,
            start,
        })
    }

    pub fn with_start(&self, start: Vec<f64>) -> Result<Self> {
        Self::new(
            self.system.clone(),
            self.domain.clone(),
            self.terminal.clone(),
            start,
        )
    }

    pub fn with_terminal(&self, terminal: TerminalFunctional) -> Self {
        Self {
            terminal,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn linear_chain(n: usize) -> ChainSystem {
        let mut blocks: Vec<BlockFn> = vec![Arc::new(|_, x, o| o[0] = -x[0])];
        for i in 1..n {
            blocks.push(Arc::new(move |_, x, o| o[0] = x[i - 1] - x[i]));
        }
        ChainSystem::new("chain", 1, blocks, Arc::new(|_, _, o| o[0] = 1.0), 1.0).unwrap()
    }

    fn const_sigma(d: usize, m: Vec<f64>) -> ChainSystem {
        let blocks: Vec<BlockFn> = vec![Arc::new(|_: f64, _: &[f64], o: &mut [f64]| o.fill(0.0))];
        ChainSystem::new(
            "s",
            d,
            blocks,
            Arc::new(move |_, _, o| o.copy_from_slice(&m)),
            1e-3,
        )
        .unwrap()
    }

    #[test]
    fn full_drift_linear_chain() {
        let sys = linear_chain(2);
        assert_eq!(sys.full_drift(0.0, &[1.0, 2.0]).unwrap(), vec![-1.0, -1.0]);
    }

    #[test]
    fn full_drift_zero_blocks() {
        let blocks: Vec<BlockFn> = (0..3)
            .map(|_| Arc::new(|_: f64, _: &[f64], o: &mut [f64]| o.fill(0.0)) as BlockFn)
            .collect();
        let sys =
            ChainSystem::new("z", 2, blocks, Arc::new(|_, _, o| o.copy_from_slice(&[1.0, 0.0, 0.0, 1.0])), 1.0)
                .unwrap();
        assert_eq!(sys.full_drift(0.3, &[1.0; 6]).unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn third_block_ignores_first() {
        let sys = linear_chain(3);
        let a = sys.full_drift(0.0, &[5.0, 1.0, 4.0]).unwrap();
        let b = sys.full_drift(0.0, &[-7.0, 1.0, 4.0]).unwrap();
        assert_eq!(a[2], -3.0);
        assert_eq!(a[2].to_bits(), b[2].to_bits());
    }

    #[test]
    fn non_finite_drift_names_block() {
        let blocks: Vec<BlockFn> = vec![
            Arc::new(|_, _, o| o[0] = 0.0),
            Arc::new(|_, _, o| o[0] = f64::NAN),
        ];
        let sys = ChainSystem::new("bad", 1, blocks, Arc::new(|_, _, o| o[0] = 1.0), 1.0).unwrap();
        let err = sys.full_drift(0.0, &[0.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("drift block 2"), "{err}");
    }

    #[test]
    fn noise_injection_examples() {
        let sys = linear_chain(2);
        assert_eq!(sys.noise_injection(0.0, &[0.3, 0.1], &[0.7]).unwrap(), vec![0.7, 0.0]);

        let blocks: Vec<BlockFn> = (0..2)
            .map(|_| Arc::new(|_: f64, _: &[f64], o: &mut [f64]| o.fill(0.0)) as BlockFn)
            .collect();
        let sys2 = ChainSystem::new(
            "2I",
            2,
            blocks,
            Arc::new(|_, _, o| o.copy_from_slice(&[2.0, 0.0, 0.0, 2.0])),
            1.0,
        )
        .unwrap();
        assert_eq!(
            sys2.noise_injection(0.0, &[0.0; 4], &[1.0, -1.0]).unwrap(),
            vec![2.0, -2.0, 0.0, 0.0]
        );
        assert_eq!(sys2.noise_injection(0.0, &[1.0; 4], &[0.0, 0.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn ellipticity_identity_and_diagonal() {
        let id = const_sigma(2, vec![1.0, 0.0, 0.0, 1.0]);
        let samples = vec![(0.0, vec![0.0, 0.0]), (0.5, vec![0.3, -0.2])];
        let r = id.check_ellipticity(&samples).unwrap();
        assert!((r.min_eigenvalue - 1.0).abs() < 1e-14);
        assert!(!r.violated);

        let diag = const_sigma(2, vec![2.0, 0.0, 0.0, 0.5]);
        let r = diag.check_ellipticity(&samples).unwrap();
        assert!((r.min_eigenvalue - 0.25).abs() < 1e-14);
    }

    #[test]
    fn ellipticity_dense_2x2() {
        // σσᵀ = [[1.81, 1.8], [1.8, 1.81]] has eigenvalues 1.81 ± 1.8.
        let sys = const_sigma(2, vec![1.0, 0.9, 0.9, 1.0]);
        let r = sys.check_ellipticity(&[(0.0, vec![0.0, 0.0])]).unwrap();
        assert!((r.min_eigenvalue - 0.01).abs() < 1e-12, "{}", r.min_eigenvalue);
        assert!(r.violated == (0.01 < sys.lambda_floor));
    }

    #[test]
    fn ellipticity_empty_samples_rejected() {
        let sys = linear_chain(2);
        assert!(matches!(
            sys.check_ellipticity(&[]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn dependency_pattern_detects_violation() {
        let blocks: Vec<BlockFn> = vec![
            Arc::new(|_, x, o| o[0] = -x[0]),
            Arc::new(|_, x, o| o[0] = x[0] - x[1]),
            Arc::new(|_, x, o| o[0] = x[0] - x[2]),
        ];
        let sys = ChainSystem::new("leaky", 1, blocks, Arc::new(|_, _, o| o[0] = 1.0), 1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let pts = vec![(0.0, vec![0.1, 0.2, 0.3])];
        assert_eq!(
            sys.verify_dependency_pattern(&mut rng, &pts, 10, 1.0).unwrap(),
            Some(3)
        );
        assert_eq!(
            linear_chain(3)
                .verify_dependency_pattern(&mut rng, &pts, 10, 1.0)
                .unwrap(),
            None
        );
    }

    #[test]
    fn domain_rejects_bad_window_and_box() {
        assert!(DomainSpec::rectangle(&[(-1.0, 1.0)], (1.0, 1.0), 0.1).is_err());
        let sd: SignedDistanceFn = Arc::new(|x: &[f64]| x[0].abs() - 1.0);
        assert!(DomainSpec::new(sd, (0.0, 1.0), vec![(-0.5, 2.0)]).is_err());
    }

    #[test]
    fn phi_infinite_weight_is_exact_zero() {
        assert_eq!(PhiValue::Infinite.weight(1e-300), 0.0);
        assert_eq!(PhiValue::Finite(0.0).weight(0.01), 1.0);
    }

    #[test]
    fn exit_penalty_values() {
        let t = TerminalFunctional::exit_penalty(1.5).unwrap();
        assert_eq!(t.evaluate(0.3, &[1.0], true).unwrap(), PhiValue::Finite(0.0));
        assert_eq!(t.evaluate(1.0, &[0.2], false).unwrap(), PhiValue::Finite(1.5));
        assert!(TerminalFunctional::exit_penalty(f64::INFINITY).is_err());
    }

    #[test]
    fn exit_indicator_values() {
        let t = TerminalFunctional::exit_indicator();
        assert_eq!(t.evaluate(0.5, &[1.0], true).unwrap(), PhiValue::Finite(0.0));
        assert!(t.evaluate(1.0, &[0.0], false).unwrap().is_infinite());
    }

    #[test]
    fn start_must_be_inside() {
        let sys = linear_chain(1);
        let dom = DomainSpec::rectangle(&[(-1.0, 1.0)], (0.0, 1.0), 0.1).unwrap();
        assert!(Problem::new(sys.clone(), dom.clone(), TerminalFunctional::exit_indicator(), vec![1.0]).is_err());
        assert!(Problem::new(sys, dom, TerminalFunctional::exit_indicator(), vec![0.0]).is_ok());
    }
}
