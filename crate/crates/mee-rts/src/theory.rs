//! Theoretical analysis toolkit: the mean-error recursion of the smoother,
//! the mean-square-error recursion and its Kronecker/vec closed form, the
//! gain-expectation tracker, and the flop-count polynomials used by the
//! complexity comparison.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::symmetrize;
use crate::smoothers::BackwardRegression;

/// Running state of the error analysis along a trajectory.
#[derive(Debug, Clone)]
pub struct ErrorAnalysisState {
    /// E[ξ_f]: mean filtering error.
    pub mean_err_filter: DVector<f64>,
    /// E[ξ_s]: mean smoothing error.
    pub mean_err_smooth: DVector<f64>,
    /// N_t = E[ξ_s ξ_sᵀ].
    pub n_t: DMatrix<f64>,
    /// E[K̂ᵇ] tracked with the forgetting factor ι.
    pub gain_expectation: DMatrix<f64>,
    /// Y_t: driving term of the MSE recursion.
    pub y_t: DMatrix<f64>,
}

/// E[ξ_s] = (I − K̂ᵇF)·E[ξ_f] + K̂ᵇ·E[ξ_{s,t+1}].
pub fn mean_error_step(
    mean_err_filter: &DVector<f64>,
    mean_err_smooth_next: &DVector<f64>,
    gain: &DMatrix<f64>,
    f: &DMatrix<f64>,
) -> DVector<f64> {
    let n = mean_err_filter.len();
    (DMatrix::identity(n, n) - gain * f) * mean_err_filter + gain * mean_err_smooth_next
}

/// Exponential moving average E[Kᵇ_t] = (1−ι)·E[Kᵇ_{t−1}] + ι·Kᵇ_t.
pub fn gain_expectation_update(
    prev: &DMatrix<f64>,
    current_gain: &DMatrix<f64>,
    iota: f64,
) -> Result<DMatrix<f64>> {
    if !(iota > 0.0 && iota <= 1.0) {
        return Err(Error::Domain(format!("forgetting factor must be in (0, 1], got {iota}")));
    }
    Ok(prev * (1.0 - iota) + current_gain * iota)
}

/// Driving term Y_t = (I − E[K̂ᵇ]F)·E[ξ_fξ_fᵀ]·(I − E[K̂ᵇ]F)ᵀ + E[K̂ᵇ]·Q·E[K̂ᵇ]ᵀ.
pub fn mse_driving_term(
    gain_exp: &DMatrix<f64>,
    f: &DMatrix<f64>,
    q: &DMatrix<f64>,
    filter_err_cov: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = f.nrows();
    let ikf = DMatrix::identity(n, n) - gain_exp * f;
    let mut y = &ikf * filter_err_cov * ikf.transpose() + gain_exp * q * gain_exp.transpose();
    symmetrize(&mut y);
    y
}

/// One MSE recursion step N_t = E[K̂ᵇ]·N_{t−1}·E[K̂ᵇ]ᵀ + Y_t, symmetrized.
pub fn mse_recursion_step(
    n_prev: &DMatrix<f64>,
    gain_exp: &DMatrix<f64>,
    f: &DMatrix<f64>,
    q: &DMatrix<f64>,
    filter_err_cov: &DMatrix<f64>,
) -> DMatrix<f64> {
    let y = mse_driving_term(gain_exp, f, q, filter_err_cov);
    let mut n_t = gain_exp * n_prev * gain_exp.transpose() + y;
    symmetrize(&mut n_t);
    n_t
}

/// Closed-form steady state of the MSE recursion:
/// vec(N∞) = (I − K⊗K)⁻¹ vec(Y). Errors if the spectral radius of K⊗K is
/// not below 1 (no steady state).
pub fn mse_steady_state(gain_exp: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = gain_exp.nrows();
    if gain_exp.ncols() != n || y.nrows() != n || y.ncols() != n {
        return Err(Error::Config("mse_steady_state expects square n×n inputs".into()));
    }
    let rho = gain_exp
        .complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0_f64, f64::max);
    if rho * rho >= 1.0 {
        return Err(Error::Numerical(format!(
            "MSE recursion diverges: spectral radius of K⊗K is {:.6} >= 1",
            rho * rho
        )));
    }
    let kron = gain_exp.kronecker(gain_exp);
    let system = DMatrix::identity(n * n, n * n) - kron;
    let vec_y = DVector::from_column_slice(y.as_slice());
    let vec_n = system
        .lu()
        .solve(&vec_y)
        .ok_or_else(|| Error::Numerical("steady-state system is singular".into()))?;
    let mut n_inf = DMatrix::from_column_slice(n, n, vec_n.as_slice());
    symmetrize(&mut n_inf);
    Ok(n_inf)
}

/// Diagnostic for the diagonal-dominance approximation
/// K̂ᵇF ≈ (FᵀP̂ᵇ;ˣ¹F + P̂ᵇ;ˣ²)⁻¹(FᵀP̂ᵇ;ˣ¹F): relative gap against the exact
/// K̂ᵇ·F computed from the same regression.
pub fn kbf_approximation_gap(
    reg: &BackwardRegression,
    f: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<f64> {
    let n = f.nrows();
    let q_white = crate::model::whitening_factor(q)?;
    let p_white = reg.w.view((n, 0), (n, n)).clone_owned();
    let xi_x1 = reg.xi.view((0, 0), (n, n));
    let xi_x2 = reg.xi.view((n, n), (n, n));
    let p_b_x1 = q_white.transpose() * xi_x1 * &q_white;
    let p_b_x2 = p_white.transpose() * xi_x2 * &p_white;
    let lhs = f.transpose() * &p_b_x1 * f + &p_b_x2;
    let rhs = f.transpose() * &p_b_x1 * f;
    let approx = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("approximation normal matrix is singular".into()))?;
    let exact = crate::smoothers::mee_smoothing_gain_f(reg, f, q, 1e-10)? * f;
    let denom = exact.norm().max(1e-12);
    Ok((approx - exact).norm() / denom)
}

/// Flop count of the MC-RTSL smoother per time step:
/// 20n³ + 10n²m + 6nm² + 2m² + 6n² + 4nm + m + 20, plus the order terms
/// 5·O(n³) + 3·O(m³) counted with unit coefficient.
pub fn flops_mc_rtsl(n: u64, m: u64) -> u64 {
    assert!(n >= 1 && m >= 1, "flops_mc_rtsl requires n, m >= 1");
    20 * n.pow(3)
        + 10 * n.pow(2) * m
        + 6 * n * m.pow(2)
        + 2 * m.pow(2)
        + 6 * n.pow(2)
        + 4 * n * m
        + m
        + 20
        + 5 * n.pow(3)
        + 3 * m.pow(3)
}

/// Flop count of the MEE-RTS smoother per time step with Mf forward and Mb
/// backward fixed-point iterations:
/// (7Mf+48Mb+16)n³ + 7Mf·m³ + (19Mf+6)n²m − 6Mb·n² + (15Mf+2)nm²
/// + Mf·m + (5Mf−9Mb)n + (7Mf−1)nm + 24Mb, plus the order terms
/// (Mf+3Mb)·O(n³) + 3Mf·O(m³) counted with unit coefficient.
pub fn flops_mee_rts(n: u64, m: u64, mf: u64, mb: u64) -> i64 {
    assert!(n >= 1 && m >= 1 && mf >= 1 && mb >= 1, "flops_mee_rts requires n, m, Mf, Mb >= 1");
    let (n, m, mf, mb) = (n as i64, m as i64, mf as i64, mb as i64);
    (7 * mf + 48 * mb + 16) * n.pow(3)
        + 7 * mf * m.pow(3)
        + (19 * mf + 6) * n.pow(2) * m
        - 6 * mb * n.pow(2)
        + (15 * mf + 2) * n * m.pow(2)
        + mf * m
        + (5 * mf - 9 * mb) * n
        + (7 * mf - 1) * n * m
        + 24 * mb
        + (mf + 3 * mb) * n.pow(3)
        + 3 * mf * m.pow(3)
}

/// Table I rows: per-equation flop counts of the backward MEE pass as
/// (additions, multiplications, divisions/others) triples, with O(·) terms
/// counted at unit coefficient.
pub fn mee_backward_equation_counts(n: u64) -> Vec<(&'static str, u64, u64, u64)> {
    let n3 = n.pow(3);
    let n2 = n.pow(2);
    vec![
        ("predicted mean", n2, n2 - n, 0),
        ("predicted covariance", 2 * n3, 2 * n3 - n2, 0),
        ("smoothed mean", n2, n2 + n, 0),
        ("smoothing gain", 8 * n3, 8 * n3 - 4 * n2, 3 * n3),
        ("normal-equation blocks", 16 * n3, 16 * n3 - 4 * n2, 0),
        ("Gamma weights", 2 * n + 7, 2 * n + 1, 4),
        ("Lambda weights", 2 * n + 7, 2 * n + 1, 4),
        ("smoothed covariance", 2 * n3, 2 * n3, 0),
    ]
}
