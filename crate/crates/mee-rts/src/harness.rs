//! Monte-Carlo benchmark harness: scenario catalog, trajectory simulation,
//! paired-algorithm execution, MSD aggregation, and parameter sweeps.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::{kf_update, mcc_update, mee_update, FilterStepResult};
use crate::model::{
    predict, GaussianBelief, LinearStateSpace, MeeConfig, NonlinearStateSpace, StateTrajectory,
    MSD_FLOOR,
};
use crate::noise::{NoiseSpec, RngStream};
use crate::smoothers::{mc_rts_backward, mee_rts_backward, rts_smooth, SmootherOutput};

/// Fraction of the horizon (from the end) treated as steady state.
pub const STEADY_STATE_FRACTION: f64 = 0.2;

/// The algorithms the harness can benchmark. On the nonlinear tracking
/// scenario the same labels select the extended (linearized) variants, i.e.
/// `Kf` runs the EKF, `Rts` the ERTS, `MeeRts`/`MeeErts` the MEE-ERTS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Kf,
    Rts,
    Mckf,
    McRts,
    MeeKf,
    MeeRts,
    MeeErts,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Kf,
        Algorithm::Rts,
        Algorithm::Mckf,
        Algorithm::McRts,
        Algorithm::MeeKf,
        Algorithm::MeeRts,
        Algorithm::MeeErts,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Kf => "kf",
            Algorithm::Rts => "rts",
            Algorithm::Mckf => "mckf",
            Algorithm::McRts => "mc-rts",
            Algorithm::MeeKf => "mee-kf",
            Algorithm::MeeRts => "mee-rts",
            Algorithm::MeeErts => "mee-erts",
        }
    }

    pub fn parse(s: &str) -> Result<Algorithm> {
        Algorithm::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown algorithm {s:?}; valid names: kf, rts, mckf, mc-rts, mee-kf, mee-rts, mee-erts"
                ))
            })
    }

    pub fn is_smoother(&self) -> bool {
        matches!(self, Algorithm::Rts | Algorithm::McRts | Algorithm::MeeRts | Algorithm::MeeErts)
    }

    fn family(&self) -> Family {
        match self {
            Algorithm::Kf | Algorithm::Rts => Family::Kalman,
            Algorithm::Mckf | Algorithm::McRts => Family::Mcc,
            Algorithm::MeeKf | Algorithm::MeeRts | Algorithm::MeeErts => Family::Mee,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Kalman,
    Mcc,
    Mee,
}

const FAMILIES: [Family; 3] = [Family::Kalman, Family::Mcc, Family::Mee];

/// Which structural model a scenario runs on.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// 3-state constant-acceleration model with 2D position/velocity
    /// measurements.
    LinearCa,
    /// 4-state constant-velocity vehicle with alternating radar/lidar
    /// measurements.
    Tracking,
}

/// Measurement-noise law: one scalar spec applied i.i.d. per component, or
/// per-sensor per-component specs for the tracking scenario.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum MeasurementNoise {
    Iid(NoiseSpec),
    PerSensor { radar: Vec<NoiseSpec>, lidar: Vec<NoiseSpec> },
}

/// A fully specified benchmark scenario.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: String,
    pub kind: ScenarioKind,
    pub dt: f64,
    /// Process-noise law, applied i.i.d. per state component (linear
    /// scenarios; the tracking scenario draws correlated N(0, Q) noise).
    pub process_noise: NoiseSpec,
    pub measurement_noise: MeasurementNoise,
    /// Horizon T.
    pub horizon: usize,
    pub mc_runs: usize,
    /// Nominal per-component process-noise variance used by the filters'
    /// Q = q·I (linear scenarios) and by the initial-estimate law
    /// x̃₀ ~ N(x₀, q·I).
    pub nominal_q: f64,
    /// Nominal measurement-noise covariance diagonal used by the filters'
    /// R (linear scenarios only).
    pub nominal_r: Vec<f64>,
    /// Default MEE kernel bandwidth for this scenario.
    pub sigma: f64,
    /// Kernel bandwidth of the correntropy baselines.
    pub mcc_sigma: f64,
    /// Mean of the initial-state law x₀ ~ N(init_mean, I).
    pub init_mean: Vec<f64>,
}

impl ScenarioSpec {
    pub fn n(&self) -> usize {
        match self.kind {
            ScenarioKind::LinearCa => 3,
            ScenarioKind::Tracking => 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.mc_runs < 1 {
            return Err(Error::Config("mc_runs must be >= 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be > 0".into()));
        }
        if !(self.nominal_q > 0.0) {
            return Err(Error::Config("nominal_q must be > 0".into()));
        }
        if self.init_mean.len() != self.n() {
            return Err(Error::Config(format!(
                "init_mean must have {} components",
                self.n()
            )));
        }
        self.process_noise.validate()?;
        match &self.measurement_noise {
            MeasurementNoise::Iid(spec) => spec.validate()?,
            MeasurementNoise::PerSensor { radar, lidar } => {
                if radar.len() != 3 || lidar.len() != 2 {
                    return Err(Error::Config(
                        "per-sensor noise needs 3 radar and 2 lidar components".into(),
                    ));
                }
                for s in radar.iter().chain(lidar) {
                    s.validate()?;
                }
            }
        }
        if self.kind == ScenarioKind::LinearCa {
            if self.nominal_r.len() != 2 {
                return Err(Error::Config("nominal_r must have 2 components for the CA model".into()));
            }
            if self.nominal_r.iter().any(|r| *r <= 0.0) {
                return Err(Error::Config("nominal_r entries must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Per-algorithm aggregate of a Monte-Carlo scenario run.
#[derive(Debug, Clone)]
pub struct AlgorithmResult {
    pub algorithm: Algorithm,
    /// Full-state MSD curve: mean over runs of per-step 10·log10 ‖error‖².
    pub msd_curve_db: Vec<f64>,
    /// Per-component MSD curves (same dB-averaging convention), [c][t].
    pub component_curves_db: Vec<Vec<f64>>,
    /// Steady-state per-component MSD: 10·log10 of the mean squared error
    /// over the final 20% of steps and all runs.
    pub steady_state_msd_db: Vec<f64>,
    /// Steady-state full-state MSD on the same convention.
    pub steady_state_total_db: f64,
    /// Mean fixed-point iteration count per update (forward and backward
    /// invocations pooled); 1.0 for the non-iterative algorithms.
    pub mean_fpi_count: f64,
    /// Mean FPI count of forward measurement updates only.
    pub mean_fpi_forward: f64,
    /// Mean FPI count of backward smoothing steps only (0 for filters).
    pub mean_fpi_backward: f64,
    /// Total wall-clock seconds spent in this algorithm across runs.
    pub wallclock_sec: f64,
}

/// Aggregate result of one scenario.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub scenario: String,
    pub horizon: usize,
    pub completed_runs: usize,
    pub dropped_runs: usize,
    pub algorithms: Vec<AlgorithmResult>,
}

impl RunResult {
    pub fn algorithm(&self, a: Algorithm) -> Option<&AlgorithmResult> {
        self.algorithms.iter().find(|r| r.algorithm == a)
    }
}

/// Constant-acceleration model: F = [[1, ΔT, ΔT²/2], [0, 1, ΔT], [0, 0, 1]],
/// H selecting position and velocity. Q and R are filled per scenario.
pub fn build_ca_model(dt: f64) -> LinearStateSpace {
    assert!(dt > 0.0, "build_ca_model requires dt > 0");
    let f = DMatrix::from_row_slice(
        3,
        3,
        &[1.0, dt, 0.5 * dt * dt, 0.0, 1.0, dt, 0.0, 0.0, 1.0],
    );
    let h = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    LinearStateSpace { f, h, q: DMatrix::identity(3, 3), r: DMatrix::identity(2, 2) }
}

fn cv_transition(dt: f64) -> DMatrix<f64> {
    let mut f = DMatrix::identity(4, 4);
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

fn tracking_q(dt: f64) -> DMatrix<f64> {
    let (d2, d3) = (dt * dt, dt * dt * dt);
    DMatrix::from_row_slice(
        4,
        4,
        &[
            d2 / 4.0, 0.0, d3 / 2.0, 0.0,
            0.0, d2 / 4.0, 0.0, d3 / 2.0,
            d3 / 2.0, 0.0, d2, 0.0,
            0.0, d3 / 2.0, 0.0, d2,
        ],
    )
}

const RADAR_MIN_RANGE: f64 = 1e-9;

fn radar_h(x: &DVector<f64>) -> DVector<f64> {
    let r = (x[0] * x[0] + x[1] * x[1]).sqrt().max(RADAR_MIN_RANGE);
    DVector::from_vec(vec![r, x[1].atan2(x[0]), (x[0] * x[2] + x[1] * x[3]) / r])
}

fn radar_jac(x: &DVector<f64>) -> DMatrix<f64> {
    let r2 = (x[0] * x[0] + x[1] * x[1]).max(RADAR_MIN_RANGE * RADAR_MIN_RANGE);
    let r = r2.sqrt();
    let dot = x[0] * x[2] + x[1] * x[3];
    DMatrix::from_row_slice(
        3,
        4,
        &[
            x[0] / r, x[1] / r, 0.0, 0.0,
            -x[1] / r2, x[0] / r2, 0.0, 0.0,
            x[2] / r - dot * x[0] / (r2 * r), x[3] / r - dot * x[1] / (r2 * r), x[0] / r, x[1] / r,
        ],
    )
}

fn lidar_h_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
}

fn radar_nominal_r() -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_vec(vec![0.09, 0.05, 0.09]))
}

fn lidar_nominal_r() -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_vec(vec![0.09, 0.05]))
}

/// Vehicle tracking model of the radar sensor: constant-velocity transition,
/// h = (range, bearing, range rate) with analytic Jacobians, the ΔT-polynomial
/// Q, and the nominal radar R. The lidar counterpart is a linear position
/// selector handled inside the harness.
pub fn build_tracking_model(dt: f64) -> NonlinearStateSpace {
    assert!(dt > 0.0, "build_tracking_model requires dt > 0");
    let f_mat = cv_transition(dt);
    let f_for_jac = f_mat.clone();
    NonlinearStateSpace {
        f: Box::new(move |x| &f_mat * x),
        h: Box::new(radar_h),
        jac_f: Box::new(move |_| f_for_jac.clone()),
        jac_h: Box::new(radar_jac),
        q: tracking_q(dt),
        r: radar_nominal_r(),
    }
}

/// The five constant-acceleration noise scenarios plus the tracking scenario.
pub fn scenario_catalog() -> Vec<ScenarioSpec> {
    let nominal_process = NoiseSpec::MixedGaussian { lambda: 0.9, a1: 0.0, a2: 0.0, mu1: 0.01, mu2: 25.0 };
    let q_nom = nominal_process.second_moment().expect("mixture moment");
    let base = |name: &str, measurement: NoiseSpec, r_nom: f64, sigma: f64| ScenarioSpec {
        name: name.to_string(),
        kind: ScenarioKind::LinearCa,
        dt: 0.1,
        process_noise: nominal_process.clone(),
        measurement_noise: MeasurementNoise::Iid(measurement),
        horizon: 1000,
        mc_runs: 300,
        nominal_q: q_nom,
        nominal_r: vec![r_nom, r_nom],
        sigma,
        mcc_sigma: 2.0,
        init_mean: vec![0.0; 3],
    };
    let process5 = NoiseSpec::MixedGaussian { lambda: 0.95, a1: 0.0, a2: 0.0, mu1: 0.01, mu2: 25.0 };
    let q5 = process5.second_moment().expect("mixture moment");
    let mut s5 = base(
        "ca-scenario-5",
        NoiseSpec::MixedGaussian { lambda: 0.6, a1: 2.0, a2: -2.0, mu1: 0.01, mu2: 100.0 },
        270.0,
        2.0,
    );
    s5.process_noise = process5;
    s5.nominal_q = q5;

    let r2 = NoiseSpec::MixedGaussian { lambda: 0.7, a1: 0.0, a2: 0.0, mu1: 0.01, mu2: 900.0 };
    let r2_nom = r2.second_moment().expect("mixture moment");

    let tracking = ScenarioSpec {
        name: "tracking".to_string(),
        kind: ScenarioKind::Tracking,
        dt: 0.1,
        process_noise: NoiseSpec::Gaussian { mean: 0.0, variance: 1.0 },
        measurement_noise: MeasurementNoise::PerSensor {
            radar: vec![
                NoiseSpec::MixedGaussian { lambda: 0.9, a1: 0.0, a2: 0.0, mu1: 0.01, mu2: 9.0 },
                NoiseSpec::MixedGaussian { lambda: 0.9, a1: 0.0, a2: 0.0, mu1: 0.01, mu2: 0.09 },
                NoiseSpec::MixedGaussian { lambda: 0.9, a1: 0.0, a2: 0.0, mu1: 0.01, mu2: 0.09 },
            ],
            lidar: vec![
                NoiseSpec::MixedGaussian { lambda: 0.9, a1: 0.0, a2: 0.0, mu1: 0.01, mu2: 9.0 },
                NoiseSpec::MixedGaussian { lambda: 0.9, a1: 0.0, a2: 0.0, mu1: 0.01, mu2: 0.09 },
            ],
        },
        horizon: 1000,
        mc_runs: 300,
        nominal_q: 1.0,
        nominal_r: vec![],
        sigma: 2.0,
        mcc_sigma: 2.0,
        init_mean: vec![50.0, 50.0, 5.0, 5.0],
    };

    vec![
        base("ca-scenario-1", NoiseSpec::Gaussian { mean: 0.0, variance: 0.01 }, 0.01, 2.0),
        base("ca-scenario-2", r2, r2_nom, 0.9),
        base(
            "ca-scenario-3",
            NoiseSpec::Mixture {
                weights: vec![0.9, 0.1],
                components: vec![
                    NoiseSpec::AlphaStable { a3: 1.25, b: 1.0, gamma: 0.5, theta: 0.0 },
                    NoiseSpec::Gaussian { mean: 0.0, variance: 900.0 },
                ],
            },
            90.0,
            0.9,
        ),
        base(
            "ca-scenario-4",
            NoiseSpec::Mixture {
                weights: vec![0.7, 0.3],
                components: vec![
                    NoiseSpec::Rayleigh { sigma: 2.0 },
                    NoiseSpec::Gaussian { mean: 0.0, variance: 900.0 },
                ],
            },
            150.0,
            0.9,
        ),
        s5,
        tracking,
    ]
}

/// Looks a scenario up by name in the catalog.
pub fn find_scenario(name: &str) -> Result<ScenarioSpec> {
    scenario_catalog()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| {
            let names: Vec<String> =
                scenario_catalog().iter().map(|s| s.name.clone()).collect();
            Error::Config(format!(
                "unknown scenario {name:?}; available: {}",
                names.join(", ")
            ))
        })
}

/// Simulates one trajectory plus the initial state estimate
/// x̃₀ ~ N(x₀, nominal_q·I). Fully deterministic given the stream.
pub fn simulate_trajectory(
    spec: &ScenarioSpec,
    rng: &mut RngStream,
) -> Result<(StateTrajectory, DVector<f64>)> {
    spec.validate()?;
    let n = spec.n();
    let mut x = DVector::from_fn(n, |i, _| spec.init_mean[i] + rng.normal());
    let init_estimate = &x + DVector::from_fn(n, |_, _| spec.nominal_q.sqrt() * rng.normal());
    let mut states = Vec::with_capacity(spec.horizon);
    let mut measurements = Vec::with_capacity(spec.horizon);
    match spec.kind {
        ScenarioKind::LinearCa => {
            let model = build_ca_model(spec.dt);
            let meas = match &spec.measurement_noise {
                MeasurementNoise::Iid(s) => s,
                MeasurementNoise::PerSensor { .. } => {
                    return Err(Error::Config(
                        "per-sensor noise is only valid for the tracking scenario".into(),
                    ))
                }
            };
            for _ in 0..spec.horizon {
                let q = spec.process_noise.sample_vector(n, rng)?;
                x = &model.f * &x + q;
                let r = meas.sample_vector(2, rng)?;
                measurements.push(&model.h * &x + r);
                states.push(x.clone());
            }
        }
        ScenarioKind::Tracking => {
            let f = cv_transition(spec.dt);
            let q_chol = tracking_q(spec.dt)
                .cholesky()
                .ok_or_else(|| Error::Numerical("tracking Q is not PD".into()))?
                .l();
            let (radar, lidar) = match &spec.measurement_noise {
                MeasurementNoise::PerSensor { radar, lidar } => (radar, lidar),
                MeasurementNoise::Iid(_) => {
                    return Err(Error::Config(
                        "tracking scenario needs per-sensor measurement noise".into(),
                    ))
                }
            };
            let lidar_h = lidar_h_matrix();
            for t in 0..spec.horizon {
                let z = DVector::from_fn(n, |_, _| rng.normal());
                x = &f * &x + &q_chol * z;
                let y = if t % 2 == 0 {
                    let mut y = radar_h(&x);
                    for (i, s) in radar.iter().enumerate() {
                        y[i] += s.sample(rng);
                    }
                    y
                } else {
                    let mut y = &lidar_h * &x;
                    for (i, s) in lidar.iter().enumerate() {
                        y[i] += s.sample(rng);
                    }
                    y
                };
                measurements.push(y);
                states.push(x.clone());
            }
        }
    }
    Ok((StateTrajectory { states, measurements }, init_estimate))
}

struct ForwardPass {
    filtered: Vec<GaussianBelief>,
    predicted: Vec<GaussianBelief>,
    iter_sum: u64,
    iter_count: u64,
    elapsed: f64,
}

fn family_update(
    family: Family,
    pred: &GaussianBelief,
    y: &DVector<f64>,
    model: &LinearStateSpace,
    cfg: &MeeConfig,
    mcc_sigma: f64,
) -> Result<FilterStepResult> {
    match family {
        Family::Kalman => kf_update(pred, y, model),
        Family::Mcc => mcc_update(pred, y, model, mcc_sigma),
        Family::Mee => mee_update(pred, y, model, cfg),
    }
}

fn forward_linear(
    family: Family,
    traj: &StateTrajectory,
    init: &GaussianBelief,
    model: &LinearStateSpace,
    cfg: &MeeConfig,
    mcc_sigma: f64,
) -> Result<ForwardPass> {
    let start = Instant::now();
    let mut filtered = Vec::with_capacity(traj.states.len());
    let mut predicted = Vec::with_capacity(traj.states.len());
    let mut belief = init.clone();
    let (mut iter_sum, mut iter_count) = (0u64, 0u64);
    for y in &traj.measurements {
        let pred = predict(&belief, model)?;
        let step = family_update(family, &pred, y, model, cfg, mcc_sigma)?;
        iter_sum += step.iterations as u64;
        iter_count += 1;
        predicted.push(pred);
        belief = step.posterior.clone();
        filtered.push(step.posterior);
    }
    Ok(ForwardPass { filtered, predicted, iter_sum, iter_count, elapsed: start.elapsed().as_secs_f64() })
}

fn forward_tracking(
    family: Family,
    traj: &StateTrajectory,
    init: &GaussianBelief,
    spec: &ScenarioSpec,
    cfg: &MeeConfig,
) -> Result<ForwardPass> {
    let start = Instant::now();
    let f = cv_transition(spec.dt);
    let q = tracking_q(spec.dt);
    let lidar_h = lidar_h_matrix();
    let (radar_r, lidar_r) = (radar_nominal_r(), lidar_nominal_r());
    let mut filtered = Vec::with_capacity(traj.states.len());
    let mut predicted = Vec::with_capacity(traj.states.len());
    let mut belief = init.clone();
    let (mut iter_sum, mut iter_count) = (0u64, 0u64);
    for (t, y) in traj.measurements.iter().enumerate() {
        let pred_mean = &f * &belief.mean;
        let mut pred_cov = &f * &belief.cov * f.transpose() + &q;
        crate::model::symmetrize(&mut pred_cov);
        let pred = GaussianBelief::new(pred_mean, pred_cov);
        let (h_jac, r_nom, pseudo_y) = if t % 2 == 0 {
            let h_jac = radar_jac(&pred.mean);
            let pseudo = y - radar_h(&pred.mean) + &h_jac * &pred.mean;
            (h_jac, radar_r.clone(), pseudo)
        } else {
            (lidar_h.clone(), lidar_r.clone(), y.clone())
        };
        let lin = LinearStateSpace { f: f.clone(), h: h_jac, q: q.clone(), r: r_nom };
        let step = family_update(family, &pred, &pseudo_y, &lin, cfg, spec.mcc_sigma)?;
        iter_sum += step.iterations as u64;
        iter_count += 1;
        predicted.push(pred);
        belief = step.posterior.clone();
        filtered.push(step.posterior);
    }
    Ok(ForwardPass { filtered, predicted, iter_sum, iter_count, elapsed: start.elapsed().as_secs_f64() })
}

/// Nominal filter model for a linear scenario: the CA dynamics with
/// Q = nominal_q·I and R = diag(nominal_r).
pub fn nominal_linear_model(spec: &ScenarioSpec) -> Result<LinearStateSpace> {
    if spec.kind != ScenarioKind::LinearCa {
        return Err(Error::Config("nominal_linear_model only applies to linear scenarios".into()));
    }
    let mut model = build_ca_model(spec.dt);
    model.q = DMatrix::identity(3, 3) * spec.nominal_q;
    model.r = DMatrix::from_diagonal(&DVector::from_vec(spec.nominal_r.clone()));
    Ok(model)
}

/// Backward model for the tracking scenario (F, Q of the CV dynamics; the
/// measurement blocks are unused by the backward recursions).
fn tracking_backward_model(spec: &ScenarioSpec) -> LinearStateSpace {
    LinearStateSpace {
        f: cv_transition(spec.dt),
        h: lidar_h_matrix(),
        q: tracking_q(spec.dt),
        r: lidar_nominal_r(),
    }
}

struct PerRunAlg {
    db_total: Vec<f64>,
    db_comp: Vec<Vec<f64>>,
    steady_sq_comp: Vec<f64>,
    steady_sq_total: f64,
    iter_fwd_sum: u64,
    iter_fwd_count: u64,
    iter_bwd_sum: u64,
    iter_bwd_count: u64,
    wall: f64,
}

fn evaluate_estimates(
    states: &[DVector<f64>],
    estimates: &[GaussianBelief],
    steady_from: usize,
) -> PerRunAlg {
    let n = states[0].len();
    let t_len = states.len();
    let mut out = PerRunAlg {
        db_total: Vec::with_capacity(t_len),
        db_comp: vec![Vec::with_capacity(t_len); n],
        steady_sq_comp: vec![0.0; n],
        steady_sq_total: 0.0,
        iter_fwd_sum: 0,
        iter_fwd_count: 0,
        iter_bwd_sum: 0,
        iter_bwd_count: 0,
        wall: 0.0,
    };
    for (t, (truth, est)) in states.iter().zip(estimates).enumerate() {
        let err = truth - &est.mean;
        let total_sq = err.norm_squared();
        out.db_total.push(10.0 * total_sq.max(MSD_FLOOR).log10());
        for c in 0..n {
            let sq = err[c] * err[c];
            out.db_comp[c].push(10.0 * sq.max(MSD_FLOOR).log10());
            if t >= steady_from {
                out.steady_sq_comp[c] += sq;
            }
        }
        if t >= steady_from {
            out.steady_sq_total += total_sq;
        }
    }
    out
}

fn run_single(
    spec: &ScenarioSpec,
    algorithms: &[Algorithm],
    cfg: &MeeConfig,
    seed: u64,
    run: usize,
) -> Result<Vec<PerRunAlg>> {
    let mut rng = RngStream::new(seed, run as u64);
    let (traj, init_estimate) = simulate_trajectory(spec, &mut rng)?;
    let n = spec.n();
    let init = GaussianBelief::new(init_estimate, DMatrix::identity(n, n));
    let steady_from = ((spec.horizon as f64) * (1.0 - STEADY_STATE_FRACTION)).floor() as usize;

    // One forward pass per family, shared by the filter and its smoother.
    let mut passes: Vec<Option<ForwardPass>> = vec![None, None, None];
    for (fi, family) in FAMILIES.iter().enumerate() {
        if algorithms.iter().any(|a| a.family() == *family) {
            let pass = match spec.kind {
                ScenarioKind::LinearCa => {
                    let model = nominal_linear_model(spec)?;
                    forward_linear(*family, &traj, &init, &model, cfg, spec.mcc_sigma)?
                }
                ScenarioKind::Tracking => forward_tracking(*family, &traj, &init, spec, cfg)?,
            };
            passes[fi] = Some(pass);
        }
    }
    let backward_model = match spec.kind {
        ScenarioKind::LinearCa => nominal_linear_model(spec)?,
        ScenarioKind::Tracking => tracking_backward_model(spec),
    };

    let mut results = Vec::with_capacity(algorithms.len());
    for alg in algorithms {
        let fi = FAMILIES.iter().position(|f| *f == alg.family()).unwrap();
        let pass = passes[fi].as_ref().unwrap();
        let (estimates, backward, elapsed): (&[GaussianBelief], Option<SmootherOutput>, f64) =
            if alg.is_smoother() {
                let start = Instant::now();
                let smooth = match alg.family() {
                    Family::Kalman => rts_smooth(&pass.filtered, &pass.predicted, &backward_model)?,
                    Family::Mcc => mc_rts_backward(
                        &pass.filtered,
                        &pass.predicted,
                        &backward_model,
                        spec.mcc_sigma,
                    )?,
                    Family::Mee => {
                        mee_rts_backward(&pass.filtered, &pass.predicted, &backward_model, cfg)?
                    }
                };
                let back_time = start.elapsed().as_secs_f64();
                (&[], Some(smooth), pass.elapsed + back_time)
            } else {
                (&pass.filtered, None, pass.elapsed)
            };
        let estimates: &[GaussianBelief] = match &backward {
            Some(s) => &s.smoothed,
            None => estimates,
        };
        let mut eval = evaluate_estimates(&traj.states, estimates, steady_from);
        eval.iter_fwd_sum = pass.iter_sum;
        eval.iter_fwd_count = pass.iter_count;
        if let Some(s) = &backward {
            eval.iter_bwd_sum = s.iterations.iter().map(|i| *i as u64).sum::<u64>();
            eval.iter_bwd_count = s.iterations.len() as u64;
        }
        eval.wall = elapsed;
        results.push(eval);
    }
    Ok(results)
}

/// Runs a scenario's Monte-Carlo benchmark. Every algorithm consumes the
/// same simulated trajectories (paired comparison); runs execute in parallel
/// with per-run RNG streams and are reduced in a fixed order so the output is
/// deterministic for a given (spec, cfg, seed). Isolated per-run failures
/// drop the run for all algorithms; more than 1% dropped aborts.
pub fn run_scenario(
    spec: &ScenarioSpec,
    algorithms: &[Algorithm],
    cfg: &MeeConfig,
    seed: u64,
) -> Result<RunResult> {
    spec.validate()?;
    cfg.validate()?;
    if algorithms.is_empty() {
        return Err(Error::Config("run_scenario needs at least one algorithm".into()));
    }
    let per_run: Vec<Result<Vec<PerRunAlg>>> = (0..spec.mc_runs)
        .into_par_iter()
        .map(|run| run_single(spec, algorithms, cfg, seed, run))
        .collect();

    let t_len = spec.horizon;
    let n = spec.n();
    let steady_from = ((t_len as f64) * (1.0 - STEADY_STATE_FRACTION)).floor() as usize;
    let steady_steps = t_len - steady_from;

    struct Accum {
        db_total: Vec<f64>,
        db_comp: Vec<Vec<f64>>,
        steady_sq_comp: Vec<f64>,
        steady_sq_total: f64,
        iter_fwd_sum: u64,
        iter_fwd_count: u64,
        iter_bwd_sum: u64,
        iter_bwd_count: u64,
        wall: f64,
    }
    let mut accums: Vec<Accum> = algorithms
        .iter()
        .map(|_| Accum {
            db_total: vec![0.0; t_len],
            db_comp: vec![vec![0.0; t_len]; n],
            steady_sq_comp: vec![0.0; n],
            steady_sq_total: 0.0,
            iter_fwd_sum: 0,
            iter_fwd_count: 0,
            iter_bwd_sum: 0,
            iter_bwd_count: 0,
            wall: 0.0,
        })
        .collect();
    let mut completed = 0usize;
    let mut dropped = 0usize;
    let mut first_error: Option<Error> = None;
    for run_result in per_run {
        match run_result {
            Ok(algs) => {
                completed += 1;
                for (acc, alg) in accums.iter_mut().zip(algs) {
                    for t in 0..t_len {
                        acc.db_total[t] += alg.db_total[t];
                    }
                    for c in 0..n {
                        for t in 0..t_len {
                            acc.db_comp[c][t] += alg.db_comp[c][t];
                        }
                        acc.steady_sq_comp[c] += alg.steady_sq_comp[c];
                    }
                    acc.steady_sq_total += alg.steady_sq_total;
                    acc.iter_fwd_sum += alg.iter_fwd_sum;
                    acc.iter_fwd_count += alg.iter_fwd_count;
                    acc.iter_bwd_sum += alg.iter_bwd_sum;
                    acc.iter_bwd_count += alg.iter_bwd_count;
                    acc.wall += alg.wall;
                }
            }
            Err(e) => {
                dropped += 1;
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }
    if completed == 0 {
        return Err(first_error.unwrap_or_else(|| Error::Numerical("all runs failed".into())));
    }
    if (dropped as f64) > 0.01 * (spec.mc_runs as f64) {
        return Err(Error::Numerical(format!(
            "{} of {} Monte-Carlo runs failed (first failure: {})",
            dropped,
            spec.mc_runs,
            first_error.map(|e| e.to_string()).unwrap_or_default()
        )));
    }

    let runs_f = completed as f64;
    let algorithms_out = algorithms
        .iter()
        .zip(accums)
        .map(|(alg, acc)| AlgorithmResult {
            algorithm: *alg,
            msd_curve_db: acc.db_total.iter().map(|v| v / runs_f).collect(),
            component_curves_db: acc
                .db_comp
                .iter()
                .map(|row| row.iter().map(|v| v / runs_f).collect())
                .collect(),
            steady_state_msd_db: acc
                .steady_sq_comp
                .iter()
                .map(|s| 10.0 * (s / (runs_f * steady_steps as f64)).max(MSD_FLOOR).log10())
                .collect(),
            steady_state_total_db: 10.0
                * (acc.steady_sq_total / (runs_f * steady_steps as f64)).max(MSD_FLOOR).log10(),
            mean_fpi_count: (acc.iter_fwd_sum + acc.iter_bwd_sum) as f64
                / ((acc.iter_fwd_count + acc.iter_bwd_count).max(1) as f64),
            mean_fpi_forward: acc.iter_fwd_sum as f64 / (acc.iter_fwd_count.max(1) as f64),
            mean_fpi_backward: acc.iter_bwd_sum as f64 / (acc.iter_bwd_count.max(1) as f64),
            wallclock_sec: acc.wall,
        })
        .collect();
    Ok(RunResult {
        scenario: spec.name.clone(),
        horizon: t_len,
        completed_runs: completed,
        dropped_runs: dropped,
        algorithms: algorithms_out,
    })
}

/// Which scalar parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    /// MEE kernel bandwidth σ.
    Sigma,
    /// FPI stopping threshold τ.
    Tau,
    /// Mixing factor λ of a mixed-Gaussian measurement noise.
    Lambda,
}

impl SweepParameter {
    pub fn parse(s: &str) -> Result<SweepParameter> {
        match s {
            "sigma" => Ok(SweepParameter::Sigma),
            "tau" => Ok(SweepParameter::Tau),
            "lambda" => Ok(SweepParameter::Lambda),
            _ => Err(Error::Config(format!(
                "unknown sweep parameter {s:?}; expected sigma, tau, or lambda"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::Sigma => "sigma",
            SweepParameter::Tau => "tau",
            SweepParameter::Lambda => "lambda",
        }
    }
}

/// Runs `run_scenario` once per swept value, holding everything else
/// (including the base seed) fixed for paired comparisons.
pub fn sweep(
    parameter: SweepParameter,
    values: &[f64],
    spec: &ScenarioSpec,
    algorithms: &[Algorithm],
    cfg: &MeeConfig,
    seed: u64,
) -> Result<Vec<(f64, RunResult)>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let mut spec_v = spec.clone();
        let mut cfg_v = *cfg;
        match parameter {
            SweepParameter::Sigma => {
                cfg_v.sigma = v;
                spec_v.sigma = v;
            }
            SweepParameter::Tau => cfg_v.tau = v,
            SweepParameter::Lambda => match &mut spec_v.measurement_noise {
                MeasurementNoise::Iid(NoiseSpec::MixedGaussian { lambda, .. }) => *lambda = v,
                _ => {
                    return Err(Error::Config(
                        "lambda sweep requires an i.i.d. mixed-Gaussian measurement noise".into(),
                    ))
                }
            },
        }
        out.push((v, run_scenario(&spec_v, algorithms, &cfg_v, seed)?));
    }
    Ok(out)
}
