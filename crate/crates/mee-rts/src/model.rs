//! Core model types shared by every other module: state-space models,
//! Gaussian beliefs, the prediction step, the Gaussian kernel, Cholesky
//! whitening, and the mean-square-deviation metric.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Floor applied to squared errors before taking logs, guarding msd(x, x).
pub const MSD_FLOOR: f64 = 1e-300;

/// Linear time-invariant state-space model
/// `x_t = F x_{t-1} + q_t`, `y_t = H x_t + r_t`.
#[derive(Debug, Clone)]
pub struct LinearStateSpace {
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl LinearStateSpace {
    pub fn new(
        f: DMatrix<f64>,
        h: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let n = f.nrows();
        let m = h.nrows();
        if f.ncols() != n {
            return Err(Error::Config(format!("F must be square, got {}x{}", n, f.ncols())));
        }
        if h.ncols() != n {
            return Err(Error::Config(format!(
                "H must have {n} columns to match F, got {}",
                h.ncols()
            )));
        }
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::Config(format!("Q must be {n}x{n}")));
        }
        if r.nrows() != m || r.ncols() != m {
            return Err(Error::Config(format!("R must be {m}x{m}")));
        }
        for (name, mat) in [("Q", &q), ("R", &r)] {
            let scale = mat.amax().max(1e-30);
            if (mat - mat.transpose()).amax() > 1e-9 * scale {
                return Err(Error::Config(format!("{name} must be symmetric")));
            }
        }
        Ok(Self { f, h, q, r })
    }

    /// State dimension n.
    pub fn n(&self) -> usize {
        self.f.nrows()
    }

    /// Measurement dimension m.
    pub fn m(&self) -> usize {
        self.h.nrows()
    }
}

type StateFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Nonlinear state-space model `x_t = f(x_{t-1}) + q_t`, `y_t = h(x_t) + r_t`
/// with caller-supplied Jacobians.
pub struct NonlinearStateSpace {
    pub f: Box<StateFn>,
    pub h: Box<StateFn>,
    pub jac_f: Box<JacFn>,
    pub jac_h: Box<JacFn>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl NonlinearStateSpace {
    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn m(&self) -> usize {
        self.r.nrows()
    }

    /// Checks `jac_f`/`jac_h` against central finite differences at `x`.
    /// Debug-mode contract; not called on release hot paths.
    pub fn check_jacobians(&self, x: &DVector<f64>, rel_tol: f64) -> Result<()> {
        let check = |func: &StateFn, jac: &JacFn, name: &str| -> Result<()> {
            let j = jac(x);
            let (rows, cols) = j.shape();
            let mut fd = DMatrix::zeros(rows, cols);
            for c in 0..cols {
                let h = 1e-6 * (1.0 + x[c].abs());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                fd.set_column(c, &((func(&xp) - func(&xm)) / (2.0 * h)));
            }
            let scale = j.amax().max(1.0);
            if (&j - &fd).amax() > rel_tol * scale {
                return Err(Error::Config(format!(
                    "{name} Jacobian disagrees with finite differences"
                )));
            }
            Ok(())
        };
        check(&*self.f, &*self.jac_f, "f")?;
        check(&*self.h, &*self.jac_h, "h")
    }
}

/// A Gaussian state belief: mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Tuning parameters for the MEE fixed-point updates.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MeeConfig {
    /// Kernel bandwidth σ (in whitened-residual units).
    pub sigma: f64,
    /// Relative-change threshold τ stopping the fixed-point iteration.
    pub tau: f64,
    /// Iteration cap for the FPI; 1 reproduces the approximate replacement
    /// method (ARM) exactly.
    pub max_iter: usize,
    /// Regularization added to near-singular normal matrices.
    pub jitter: f64,
    /// Forgetting factor ι for gain-expectation tracking.
    pub forgetting: f64,
}

impl Default for MeeConfig {
    fn default() -> Self {
        Self { sigma: 0.9, tau: 1e-4, max_iter: 100, jitter: 1e-10, forgetting: 0.95 }
    }
}

impl MeeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::Domain(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Domain(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.max_iter < 1 {
            return Err(Error::Domain("max_iter must be >= 1".into()));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::Domain("jitter must be >= 0".into()));
        }
        if !(self.forgetting > 0.0 && self.forgetting <= 1.0) {
            return Err(Error::Domain(format!(
                "forgetting must be in (0, 1], got {}",
                self.forgetting
            )));
        }
        Ok(())
    }
}

/// A simulated state/measurement trajectory of equal length T >= 1.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub states: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
}

/// Symmetrizes a covariance in place: C <- (C + C^T)/2.
pub fn symmetrize(c: &mut DMatrix<f64>) {
    let t = c.transpose();
    *c += t;
    *c *= 0.5;
}

/// Time-update: mean' = F mean, cov' = F cov F^T + Q (symmetrized).
pub fn predict(belief: &GaussianBelief, model: &LinearStateSpace) -> Result<GaussianBelief> {
    if belief.dim() != model.n() {
        return Err(Error::Config(format!(
            "belief dimension {} does not match model state dimension {}",
            belief.dim(),
            model.n()
        )));
    }
    let mean = &model.f * &belief.mean;
    let mut cov = &model.f * &belief.cov * model.f.transpose() + &model.q;
    symmetrize(&mut cov);
    Ok(GaussianBelief::new(mean, cov))
}

/// Gaussian kernel G_σ(e) = exp(-e²/2σ²) / (√(2π) σ).
///
/// Panics if `sigma <= 0` (domain violation).
pub fn gaussian_kernel(e: f64, sigma: f64) -> f64 {
    assert!(sigma > 0.0, "gaussian_kernel requires sigma > 0, got {sigma}");
    (-e * e / (2.0 * sigma * sigma)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
}

/// Mean-square deviation in dB: 10·log10(max(‖x − x̂‖², floor)).
pub fn msd(true_state: &DVector<f64>, estimate: &DVector<f64>) -> f64 {
    assert_eq!(true_state.len(), estimate.len(), "msd: dimension mismatch");
    let err = true_state - estimate;
    10.0 * err.norm_squared().max(MSD_FLOOR).log10()
}

/// Per-component squared-error MSD in dB, for per-state curves.
pub fn msd_components(true_state: &DVector<f64>, estimate: &DVector<f64>) -> Vec<f64> {
    assert_eq!(true_state.len(), estimate.len(), "msd_components: dimension mismatch");
    true_state
        .iter()
        .zip(estimate.iter())
        .map(|(t, e)| {
            let d = t - e;
            10.0 * (d * d).max(MSD_FLOOR).log10()
        })
        .collect()
}

/// Returns L⁻¹ where P = L·Lᵀ is the lower Cholesky factorization, so that
/// (L⁻¹)·P·(L⁻¹)ᵀ = I. If P is not strictly PD, escalating jitter is added to
/// the diagonal (doubling, at most 10 attempts) before giving up.
pub fn whitening_factor(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::Config(format!("whitening_factor needs a square matrix, got {}x{}", n, p.ncols())));
    }
    let scale = p.diagonal().amax().max(1e-30);
    let mut jitter = 0.0;
    for attempt in 0..=10 {
        let mut candidate = p.clone();
        if jitter > 0.0 {
            for i in 0..n {
                candidate[(i, i)] += jitter;
            }
        }
        if let Some(chol) = candidate.cholesky() {
            let l = chol.l();
            let inv = l
                .solve_lower_triangular(&DMatrix::identity(n, n))
                .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
            return Ok(inv);
        }
        jitter = if attempt == 0 { 1e-12 * scale } else { jitter * 2.0 };
    }
    Err(Error::Numerical(format!(
        "matrix is not positive definite after jitter escalation (diag scale {scale:.3e})"
    )))
}
