//! Forward-pass measurement updates: the classic Kalman update, the
//! maximum-correntropy (MCC) update, and the minimum-error-entropy (MEE)
//! fixed-point update driving the robust smoother's forward filter.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    gaussian_kernel, symmetrize, whitening_factor, GaussianBelief, LinearStateSpace, MeeConfig,
};

/// The whitened augmented regression d = Z·x + e used by the MEE update,
/// together with its kernel weight matrices.
#[derive(Debug, Clone)]
pub struct ForwardRegression {
    /// (m+n)-vector: stacked whitened measurement and predicted state.
    pub d: DVector<f64>,
    /// (m+n)×n whitened stacked design.
    pub z: DMatrix<f64>,
    /// Augmented residual e = d − Z·x_candidate.
    pub e: DVector<f64>,
    /// Diagonal weight: Psi_ii = Σ_j G(e_i − e_j).
    pub psi: DMatrix<f64>,
    /// Full kernel Gram weight: Phi_ij = G(e_i − e_j).
    pub phi: DMatrix<f64>,
    /// Composite weight Ω = ΨᵀΨ + ΦᵀΦ, block-partitioned as
    /// [[Ω_y, Ω_xy], [Ω_yx, Ω_x]] with an m×m leading block.
    pub omega: DMatrix<f64>,
}

/// Result of one forward measurement update.
#[derive(Debug, Clone)]
pub struct FilterStepResult {
    pub posterior: GaussianBelief,
    /// Gain K̂ mapping innovations to state corrections (n×m).
    pub gain: DMatrix<f64>,
    /// Fixed-point iterations consumed (1 for the non-iterative updates).
    pub iterations: usize,
    pub converged: bool,
}

/// Joseph-form covariance (I−KH)·P·(I−KH)ᵀ + K·R·Kᵀ, symmetric PSD for any
/// gain.
fn joseph_cov(
    p: &DMatrix<f64>,
    k: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = p.nrows();
    let ikh = DMatrix::identity(n, n) - k * h;
    let mut cov = &ikh * p * ikh.transpose() + k * r * k.transpose();
    symmetrize(&mut cov);
    cov
}

fn pd_inverse(mat: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    mat.clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| mat.clone().lu().try_inverse())
        .ok_or_else(|| Error::Numerical(format!("{what} is singular")))
}

/// Classic Kalman measurement update with Joseph-form covariance.
pub fn kf_update(
    pred: &GaussianBelief,
    y: &DVector<f64>,
    model: &LinearStateSpace,
) -> Result<FilterStepResult> {
    check_update_dims(pred, y, model)?;
    let h = &model.h;
    let innovation_cov = h * &pred.cov * h.transpose() + &model.r;
    let s_inv = pd_inverse(&innovation_cov, "innovation covariance")?;
    let gain = &pred.cov * h.transpose() * s_inv;
    let mean = &pred.mean + &gain * (y - h * &pred.mean);
    let cov = joseph_cov(&pred.cov, &gain, h, &model.r);
    Ok(FilterStepResult { posterior: GaussianBelief::new(mean, cov), gain, iterations: 1, converged: true })
}

/// Maximum-correntropy measurement update. The innovation is weighted by the
/// correntropy factor φ_R = exp(−‖ν‖²_R / 2σ²) with the R⁻¹-weighted
/// Mahalanobis norm, normalized so that φ_R(0) = 1; the gain is the
/// information-form expression K = (P⁻¹ + φ HᵀR⁻¹H)⁻¹ φ HᵀR⁻¹, which reduces
/// exactly to the Kalman gain as σ → ∞.
pub fn mcc_update(
    pred: &GaussianBelief,
    y: &DVector<f64>,
    model: &LinearStateSpace,
    sigma: f64,
) -> Result<FilterStepResult> {
    check_update_dims(pred, y, model)?;
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("mcc_update requires sigma > 0, got {sigma}")));
    }
    let h = &model.h;
    let r_inv = pd_inverse(&model.r, "R")?;
    let p_inv = pd_inverse(&pred.cov, "predicted covariance")?;
    let nu = y - h * &pred.mean;
    let maha_sq = (r_inv.clone() * &nu).dot(&nu);
    let phi = (-maha_sq / (2.0 * sigma * sigma)).exp();
    let normal = &p_inv + phi * h.transpose() * &r_inv * h;
    let normal_inv = pd_inverse(&normal, "MCC normal matrix")?;
    let gain = normal_inv * (phi * h.transpose() * &r_inv);
    let mean = &pred.mean + &gain * nu;
    let cov = joseph_cov(&pred.cov, &gain, h, &model.r);
    Ok(FilterStepResult { posterior: GaussianBelief::new(mean, cov), gain, iterations: 1, converged: true })
}

/// Kernel weight matrices (Ψ diagonal of row-sums, Φ full Gram) for a
/// residual vector, and their composite Ω = ΨᵀΨ + ΦᵀΦ.
pub(crate) fn kernel_weights(
    e: &DVector<f64>,
    sigma: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let l = e.len();
    let mut phi = DMatrix::zeros(l, l);
    for i in 0..l {
        for j in 0..=i {
            let g = gaussian_kernel(e[i] - e[j], sigma);
            phi[(i, j)] = g;
            phi[(j, i)] = g;
        }
    }
    let mut psi = DMatrix::zeros(l, l);
    for i in 0..l {
        psi[(i, i)] = phi.row(i).sum();
    }
    let omega = &psi * &psi + phi.transpose() * &phi;
    (psi, phi, omega)
}

/// Builds the whitened forward regression at a candidate state:
/// d = [R^{−1/2} y; P^{−1/2} x̂], Z = [R^{−1/2} H; P^{−1/2}],
/// e = d − Z·x_candidate, with Ψ/Φ/Ω from the kernel of bandwidth `sigma`.
pub fn build_forward_regression(
    pred: &GaussianBelief,
    y: &DVector<f64>,
    model: &LinearStateSpace,
    x_candidate: &DVector<f64>,
    sigma: f64,
) -> Result<ForwardRegression> {
    check_update_dims(pred, y, model)?;
    let r_white = whitening_factor(&model.r)?;
    let p_white = whitening_factor(&pred.cov)?;
    build_forward_regression_whitened(pred, y, model, x_candidate, sigma, &r_white, &p_white)
}

/// Same as [`build_forward_regression`] with precomputed whitening factors,
/// so the fixed-point loop factors R and P only once per step.
fn build_forward_regression_whitened(
    pred: &GaussianBelief,
    y: &DVector<f64>,
    model: &LinearStateSpace,
    x_candidate: &DVector<f64>,
    sigma: f64,
    r_white: &DMatrix<f64>,
    p_white: &DMatrix<f64>,
) -> Result<ForwardRegression> {
    let (n, m) = (model.n(), model.m());
    let mut d = DVector::zeros(m + n);
    d.rows_mut(0, m).copy_from(&(r_white * y));
    d.rows_mut(m, n).copy_from(&(p_white * &pred.mean));
    let mut z = DMatrix::zeros(m + n, n);
    z.view_mut((0, 0), (m, n)).copy_from(&(r_white * &model.h));
    z.view_mut((m, 0), (n, n)).copy_from(p_white);
    let e = &d - &z * x_candidate;
    let (psi, phi, omega) = kernel_weights(&e, sigma);
    Ok(ForwardRegression { d, z, e, psi, phi, omega })
}

/// MEE fixed-point measurement update. Starting from the predicted mean, the
/// gain is recomputed from the block-partitioned weighted normal equations
/// each iteration and the iterate is x_{k+1} = x̂ + K_k(y − H x̂); the loop
/// stops when the relative change drops to τ or `max_iter` is hit.
pub fn mee_update(
    pred: &GaussianBelief,
    y: &DVector<f64>,
    model: &LinearStateSpace,
    cfg: &MeeConfig,
) -> Result<FilterStepResult> {
    check_update_dims(pred, y, model)?;
    cfg.validate()?;
    let (n, m) = (model.n(), model.m());
    let h = &model.h;
    let r_white = whitening_factor(&model.r)?;
    let p_white = whitening_factor(&pred.cov)?;
    let innovation = y - h * &pred.mean;

    let mut x = pred.mean.clone();
    let mut gain = DMatrix::zeros(n, m);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        let reg =
            build_forward_regression_whitened(pred, y, model, &x, cfg.sigma, &r_white, &p_white)?;
        // Ω blocks → the P̂ modified-covariance blocks of the gain equations.
        let omega_y = reg.omega.view((0, 0), (m, m));
        let omega_xy = reg.omega.view((0, m), (m, n));
        let omega_yx = reg.omega.view((m, 0), (n, m));
        let omega_x = reg.omega.view((m, m), (n, n));
        let p_hat_x = p_white.transpose() * omega_x * &p_white;
        let p_hat_xy = r_white.transpose() * omega_xy * &p_white; // m×n
        let p_hat_yx = p_white.transpose() * omega_yx * &r_white; // n×m
        let p_hat_y = r_white.transpose() * omega_y * &r_white;
        let mut normal = h.transpose() * &p_hat_y * h
            + &p_hat_yx * h
            + h.transpose() * &p_hat_xy
            + p_hat_x;
        for i in 0..n {
            normal[(i, i)] += cfg.jitter;
        }
        let rhs = &p_hat_yx + h.transpose() * &p_hat_y;
        gain = normal
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("MEE forward normal matrix is singular".into()))?;
        let x_next = &pred.mean + &gain * &innovation;
        let rel = (&x_next - &x).norm() / x.norm().max(1e-12);
        x = x_next;
        if rel <= cfg.tau {
            converged = true;
            break;
        }
    }
    let cov = joseph_cov(&pred.cov, &gain, h, &model.r);
    Ok(FilterStepResult { posterior: GaussianBelief::new(x, cov), gain, iterations, converged })
}

fn check_update_dims(
    pred: &GaussianBelief,
    y: &DVector<f64>,
    model: &LinearStateSpace,
) -> Result<()> {
    if pred.dim() != model.n() {
        return Err(Error::Config(format!(
            "predicted belief has dimension {}, model expects {}",
            pred.dim(),
            model.n()
        )));
    }
    if y.len() != model.m() {
        return Err(Error::Config(format!(
            "measurement has dimension {}, model expects {}",
            y.len(),
            model.m()
        )));
    }
    Ok(())
}
