//! Acceptance gate: one test per criterion, each printing a single
//! `criterion N: PASS/FAIL` line before asserting. Criteria that the
//! implementation cannot attain are exercised faithfully and left failing
//! rather than weakened.

use std::time::Instant;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};

use mee_rts::filters::{kf_update, mcc_update, mee_update};
use mee_rts::harness::{find_scenario, run_scenario, sweep, Algorithm, SweepParameter};
use mee_rts::model::{
    predict, GaussianBelief, LinearStateSpace, MeeConfig, NonlinearStateSpace,
};
use mee_rts::noise::RngStream;
use mee_rts::smoothers::{
    build_backward_regression, mc_rts_backward, mee_erts_smooth, mee_rts_backward, mee_rts_step,
    rts_smooth,
};
use mee_rts::theory::{flops_mc_rtsl, mse_driving_term, mse_recursion_step, mse_steady_state};

const SEED: u64 = 20260823;

fn report(criterion: u32, failures: Vec<String>) {
    if failures.is_empty() {
        println!("criterion {criterion}: PASS");
    } else {
        println!("criterion {criterion}: FAIL ({})", failures.join("; "));
    }
    assert!(failures.is_empty(), "criterion {criterion} failed: {}", failures.join("; "));
}

fn check(failures: &mut Vec<String>, ok: bool, msg: String) {
    if !ok {
        failures.push(msg);
    }
}

fn baseline_algorithms() -> [Algorithm; 6] {
    [
        Algorithm::Kf,
        Algorithm::Rts,
        Algorithm::Mckf,
        Algorithm::McRts,
        Algorithm::MeeKf,
        Algorithm::MeeRts,
    ]
}

// ---------------------------------------------------------------------------
// Criterion 1: Gaussian sanity (scenario 1).
// RTS lowest steady-state MSD; MEE-RTS within 1.5 dB of RTS; absolute values
// within ±1 dB of the published per-component entries.
// ---------------------------------------------------------------------------
#[test]
fn criterion_01_gaussian_sanity() {
    let start = Instant::now();
    let spec = find_scenario("ca-scenario-1").unwrap();
    let cfg = MeeConfig { sigma: spec.sigma, ..MeeConfig::default() };
    let out = run_scenario(&spec, &baseline_algorithms(), &cfg, SEED).unwrap();

    let mut failures = Vec::new();
    let rts = out.algorithm(Algorithm::Rts).unwrap();
    for res in &out.algorithms {
        if res.algorithm != Algorithm::Rts {
            check(
                &mut failures,
                rts.steady_state_total_db <= res.steady_state_total_db + 1e-9,
                format!(
                    "RTS ({:.2} dB) not lowest vs {} ({:.2} dB)",
                    rts.steady_state_total_db,
                    res.algorithm.name(),
                    res.steady_state_total_db
                ),
            );
        }
    }
    let mee = out.algorithm(Algorithm::MeeRts).unwrap();
    for c in 0..3 {
        let gap = mee.steady_state_msd_db[c] - rts.steady_state_msd_db[c];
        check(
            &mut failures,
            gap <= 1.5,
            format!("MEE-RTS x{} is {gap:.2} dB above RTS (> 1.5)", c + 1),
        );
    }
    let published: [(Algorithm, [f64; 3]); 6] = [
        (Algorithm::Kf, [-20.1, -20.1, -20.1]),
        (Algorithm::Rts, [-20.1, -20.2, -20.2]),
        (Algorithm::Mckf, [-19.2, -19.2, -19.2]),
        (Algorithm::McRts, [-19.3, -19.3, -19.3]),
        (Algorithm::MeeKf, [-19.0, -19.0, -19.0]),
        (Algorithm::MeeRts, [-19.2, -19.1, -19.0]),
    ];
    for (alg, expect) in published {
        let res = out.algorithm(alg).unwrap();
        for c in 0..3 {
            let got = res.steady_state_msd_db[c];
            check(
                &mut failures,
                (got - expect[c]).abs() <= 1.0,
                format!("{} x{}: {got:.2} dB vs published {:.1} (±1)", alg.name(), c + 1, expect[c]),
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(&mut failures, secs < 120.0, format!("runtime {secs:.0}s >= 2 min"));
    report(1, failures);
}

// ---------------------------------------------------------------------------
// Criterion 2: robustness ordering (scenarios 2-5).
// MEE-RTS lowest per component (≤ 0.3 dB Monte-Carlo slack) and within ±2 dB
// of the published bold-row entries.
// ---------------------------------------------------------------------------
#[test]
fn criterion_02_robustness_ordering() {
    let start = Instant::now();
    let published: [(&str, [f64; 3]); 4] = [
        ("ca-scenario-2", [9.5, 9.3, 9.7]),
        ("ca-scenario-3", [8.4, 8.5, 7.9]),
        ("ca-scenario-4", [10.8, 11.0, 11.5]),
        ("ca-scenario-5", [7.9, 7.7, 7.1]),
    ];
    let mut failures = Vec::new();
    for (name, expect) in published {
        let spec = find_scenario(name).unwrap();
        let cfg = MeeConfig { sigma: spec.sigma, ..MeeConfig::default() };
        let out = run_scenario(&spec, &baseline_algorithms(), &cfg, SEED).unwrap();
        let mee = out.algorithm(Algorithm::MeeRts).unwrap();
        for c in 0..3 {
            for res in &out.algorithms {
                if res.algorithm == Algorithm::MeeRts {
                    continue;
                }
                check(
                    &mut failures,
                    mee.steady_state_msd_db[c] <= res.steady_state_msd_db[c] + 0.3,
                    format!(
                        "{name} x{}: MEE-RTS {:.2} dB loses to {} {:.2} dB",
                        c + 1,
                        mee.steady_state_msd_db[c],
                        res.algorithm.name(),
                        res.steady_state_msd_db[c]
                    ),
                );
            }
            let got = mee.steady_state_msd_db[c];
            check(
                &mut failures,
                (got - expect[c]).abs() <= 2.0,
                format!("{name} x{}: MEE-RTS {got:.2} dB vs published {:.1} (±2)", c + 1, expect[c]),
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(&mut failures, secs < 600.0, format!("runtime {secs:.0}s >= 10 min"));
    report(2, failures);
}

// ---------------------------------------------------------------------------
// Criterion 3: τ study (scenario 2). The mean forward FPI count is
// non-decreasing as τ decreases and lands within ±0.5 of the published M
// column; the MEE-RTS MSD varies by < 0.2 dB across the sweep.
// ---------------------------------------------------------------------------
#[test]
fn criterion_03_tau_study() {
    let taus = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];
    let published_m = [1.0249, 1.2128, 1.6599, 1.9380, 2.3892, 2.9323, 3.4424, 3.9648];
    let spec = find_scenario("ca-scenario-2").unwrap();
    let cfg = MeeConfig { sigma: spec.sigma, ..MeeConfig::default() };
    let out = sweep(SweepParameter::Tau, &taus, &spec, &[Algorithm::MeeRts], &cfg, SEED).unwrap();

    let mut failures = Vec::new();
    let m: Vec<f64> = out.iter().map(|(_, r)| r.algorithms[0].mean_fpi_forward).collect();
    let msd: Vec<f64> = out.iter().map(|(_, r)| r.algorithms[0].steady_state_msd_db[0]).collect();
    for i in 1..m.len() {
        check(
            &mut failures,
            m[i] >= m[i - 1] - 1e-9,
            format!("M not monotone: {:.3} at tau={:.0e} < {:.3}", m[i], taus[i], m[i - 1]),
        );
    }
    for i in 0..m.len() {
        check(
            &mut failures,
            (m[i] - published_m[i]).abs() <= 0.5,
            format!("tau={:.0e}: M {:.3} vs published {:.4} (±0.5)", taus[i], m[i], published_m[i]),
        );
    }
    let spread = msd.iter().cloned().fold(f64::MIN, f64::max)
        - msd.iter().cloned().fold(f64::MAX, f64::min);
    check(
        &mut failures,
        spread < 0.2,
        format!("MSD spread over tau sweep is {spread:.2} dB (>= 0.2); values {msd:.2?}"),
    );
    report(3, failures);
}

// ---------------------------------------------------------------------------
// Criterion 4: σ study (scenario 2). Non-monotone MSD-vs-σ with an interior
// optimum; σ = 0.1 more than 3 dB worse than σ = 0.9.
// ---------------------------------------------------------------------------
#[test]
fn criterion_04_sigma_study() {
    let sigmas = [0.1, 0.9, 100.0];
    let spec = find_scenario("ca-scenario-2").unwrap();
    let cfg = MeeConfig { sigma: spec.sigma, ..MeeConfig::default() };
    let out =
        sweep(SweepParameter::Sigma, &sigmas, &spec, &[Algorithm::MeeRts], &cfg, SEED).unwrap();
    let msd: Vec<f64> = out.iter().map(|(_, r)| r.algorithms[0].steady_state_msd_db[0]).collect();

    let mut failures = Vec::new();
    check(
        &mut failures,
        msd[1] < msd[0] && msd[1] < msd[2],
        format!("no interior optimum: MSD(0.1)={:.2}, MSD(0.9)={:.2}, MSD(100)={:.2}", msd[0], msd[1], msd[2]),
    );
    check(
        &mut failures,
        msd[0] - msd[1] > 3.0,
        format!("sigma=0.1 only {:.2} dB worse than 0.9 (need > 3)", msd[0] - msd[1]),
    );
    report(4, failures);
}

// ---------------------------------------------------------------------------
// Criterion 5: flat-kernel limit. At σ = 1e8 on Gaussian data the MC pipeline
// matches the Kalman/RTS pipeline within 1e-6 relative and the MEE pipeline
// within 1e-5 relative, per trajectory, on 2- and 3-state systems.
// ---------------------------------------------------------------------------
#[test]
fn criterion_05_flat_kernel_limit() {
    struct System {
        label: &'static str,
        model: LinearStateSpace,
    }
    let systems = [
        System {
            label: "2-state",
            model: LinearStateSpace::new(
                dmatrix![1.0, 0.1; 0.0, 1.0],
                dmatrix![1.0, 0.0],
                dmatrix![0.05, 0.0; 0.0, 0.05],
                dmatrix![0.4],
            )
            .unwrap(),
        },
        System {
            label: "3-state",
            model: LinearStateSpace::new(
                dmatrix![1.0, 0.1, 0.005; 0.0, 1.0, 0.1; 0.0, 0.0, 1.0],
                dmatrix![1.0, 0.0, 0.0; 0.0, 1.0, 0.0],
                DMatrix::identity(3, 3) * 0.05,
                DMatrix::identity(2, 2) * 0.4,
            )
            .unwrap(),
        },
    ];
    let sigma = 1e8;
    let mut failures = Vec::new();
    let mut rng = RngStream::new(SEED, 0);
    for sys in &systems {
        let n = sys.model.f.nrows();
        let m = sys.model.h.nrows();
        for trajectory in 0..5 {
            // Gaussian ground truth and measurements.
            let mut x = DVector::from_fn(n, |_, _| rng.normal());
            let mut states = Vec::new();
            let mut ys = Vec::new();
            let q_l = sys.model.q.clone().cholesky().unwrap().l();
            let r_l = sys.model.r.clone().cholesky().unwrap().l();
            for _ in 0..100 {
                x = &sys.model.f * &x + &q_l * DVector::from_fn(n, |_, _| rng.normal());
                ys.push(&sys.model.h * &x + &r_l * DVector::from_fn(m, |_, _| rng.normal()));
                states.push(x.clone());
            }
            let init = GaussianBelief::new(DVector::zeros(n), DMatrix::identity(n, n));

            let forward = |update: &mut dyn FnMut(
                &GaussianBelief,
                &DVector<f64>,
            )
                -> GaussianBelief| {
                let mut belief = init.clone();
                let mut filtered = Vec::new();
                let mut predicted = Vec::new();
                for y in &ys {
                    let pred = predict(&belief, &sys.model).unwrap();
                    belief = update(&pred, y);
                    predicted.push(pred);
                    filtered.push(belief.clone());
                }
                (filtered, predicted)
            };

            let (kf_f, kf_p) =
                forward(&mut |p, y| kf_update(p, y, &sys.model).unwrap().posterior);
            let rts = rts_smooth(&kf_f, &kf_p, &sys.model).unwrap();

            let (mc_f, mc_p) =
                forward(&mut |p, y| mcc_update(p, y, &sys.model, sigma).unwrap().posterior);
            let mc = mc_rts_backward(&mc_f, &mc_p, &sys.model, sigma).unwrap();

            let cfg = MeeConfig { sigma, ..MeeConfig::default() };
            let (mee_f, mee_p) =
                forward(&mut |p, y| mee_update(p, y, &sys.model, &cfg).unwrap().posterior);
            let mee = mee_rts_backward(&mee_f, &mee_p, &sys.model, &cfg).unwrap();

            let rel = |other: &[GaussianBelief]| {
                rts.smoothed
                    .iter()
                    .zip(other)
                    .map(|(a, b)| (&a.mean - &b.mean).norm() / a.mean.norm().max(1e-12))
                    .fold(0.0_f64, f64::max)
            };
            let mc_rel = rel(&mc.smoothed);
            let mee_rel = rel(&mee.smoothed);
            check(
                &mut failures,
                mc_rel <= 1e-6,
                format!("{} traj {trajectory}: MC-RTS deviates {mc_rel:.2e} (> 1e-6)", sys.label),
            );
            check(
                &mut failures,
                mee_rel <= 1e-5,
                format!("{} traj {trajectory}: MEE-RTS deviates {mee_rel:.2e} (> 1e-5)", sys.label),
            );
        }
    }
    report(5, failures);
}

// ---------------------------------------------------------------------------
// Criterion 6: brute-force oracle equivalence on 1D problems. The forward MEE
// update and one backward MEE step are compared against dense grid
// maximization of the respective MEE double-sum objectives.
// ---------------------------------------------------------------------------
#[test]
fn criterion_06_grid_oracle_equivalence() {
    let sigma = 0.9;
    let kernel = |d: f64| (-d * d / (2.0 * sigma * sigma)).exp();
    // Double-sum information potential of a residual vector (constants that
    // do not depend on x are kept; they do not move the argmax).
    let objective = |e: &[f64]| {
        let mut v = 0.0;
        for a in e {
            for b in e {
                v += kernel(a - b);
            }
        }
        v
    };
    let grid_argmax = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64| {
        let steps = ((hi - lo) / 1e-4).ceil() as usize;
        let mut best = (lo, f(lo));
        for i in 1..=steps {
            let x = lo + (hi - lo) * (i as f64) / (steps as f64);
            let v = f(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        best.0
    };

    let mut rng = RngStream::new(SEED, 1);
    let cfg = MeeConfig { sigma, tau: 1e-12, max_iter: 500, ..MeeConfig::default() };
    let mut worst_forward = 0.0_f64;
    let mut worst_backward = 0.0_f64;
    for _ in 0..100 {
        let p = 0.5 + rng.uniform() * 1.5;
        let r = 0.3 + rng.uniform() * 1.2;
        let h = 0.5 + rng.uniform() * 1.5;
        let q = 0.3 + rng.uniform() * 1.2;
        let f = 0.5 + rng.uniform() * 0.9;
        let model =
            LinearStateSpace::new(dmatrix![f], dmatrix![h], dmatrix![q], dmatrix![r]).unwrap();

        // Forward: whitened residuals e = d − Z x.
        let pred_mean = rng.normal();
        let y = h * pred_mean + rng.normal();
        let pred = GaussianBelief::new(dvector![pred_mean], dmatrix![p]);
        let step = mee_update(&pred, &dvector![y], &model, &cfg).unwrap();
        let fpi = step.posterior.mean[0];
        let (z1, z2) = (h / r.sqrt(), 1.0 / p.sqrt());
        let (d1, d2) = (y / r.sqrt(), pred_mean / p.sqrt());
        let fwd_obj = |x: f64| objective(&[d1 - z1 * x, d2 - z2 * x]);
        let lo = fpi.min(pred_mean) - 4.0;
        let hi = fpi.max(pred_mean) + 4.0;
        let oracle = grid_argmax(&fwd_obj, lo, hi);
        worst_forward = worst_forward.max((fpi - oracle).abs());

        // Backward: one MEE smoothing step against the backward objective.
        let filt = GaussianBelief::new(dvector![pred_mean], dmatrix![p]);
        let next_smooth_mean = rng.normal();
        let pred_next = GaussianBelief::new(dvector![f * pred_mean], dmatrix![f * f * p + q]);
        let smooth_next = GaussianBelief::new(dvector![next_smooth_mean], dmatrix![p]);
        let (belief, _, _) = mee_rts_step(
            &filt,
            &pred_next,
            &smooth_next,
            &smooth_next.mean.clone(),
            &model.f,
            &model.q,
            &cfg,
        )
        .unwrap();
        let fpi_b = belief.mean[0];
        let (w1, w2) = (f / q.sqrt(), 1.0 / p.sqrt());
        let (t1, t2) = (next_smooth_mean / q.sqrt(), pred_mean / p.sqrt());
        let bwd_obj = |x: f64| objective(&[t1 - w1 * x, t2 - w2 * x]);
        let lo = fpi_b.min(pred_mean) - 4.0;
        let hi = fpi_b.max(pred_mean) + 4.0;
        let oracle_b = grid_argmax(&bwd_obj, lo, hi);
        worst_backward = worst_backward.max((fpi_b - oracle_b).abs());
    }

    let mut failures = Vec::new();
    check(
        &mut failures,
        worst_forward <= 2e-4,
        format!("forward FPI vs grid argmax deviates up to {worst_forward:.4} (> 2e-4)"),
    );
    check(
        &mut failures,
        worst_backward <= 2e-4,
        format!("backward FPI vs grid argmax deviates up to {worst_backward:.4} (> 2e-4)"),
    );
    report(6, failures);
}

// ---------------------------------------------------------------------------
// Criterion 7: gain path-equivalence. The direct normal-equation smoothing
// gain equals the matrix-inversion-lemma gain within 1e-8 relative on 500
// random PD instances, n ≤ 6.
// ---------------------------------------------------------------------------
#[test]
fn criterion_07_gain_path_equivalence() {
    let mut rng = RngStream::new(SEED, 2);
    let mut failures = Vec::new();
    let mut worst = 0.0_f64;
    for instance in 0..500 {
        let n = 1 + (rng.uniform() * 6.0).floor().min(5.0) as usize;
        let rand_pd = |rng: &mut RngStream| {
            let a = DMatrix::from_fn(n, n, |_, _, | rng.normal());
            &a * a.transpose() + DMatrix::identity(n, n) * 0.1
        };
        let q = rand_pd(&mut rng);
        let p = rand_pd(&mut rng);
        let f = DMatrix::from_fn(n, n, |_, _| rng.normal() * 0.5);
        let model = LinearStateSpace {
            f: f.clone(),
            h: DMatrix::identity(1, n),
            q: q.clone(),
            r: DMatrix::identity(1, 1),
        };
        let filt =
            GaussianBelief::new(DVector::from_fn(n, |_, _| rng.normal()), p.clone());
        let next_mean = DVector::from_fn(n, |_, _| rng.normal());
        let cand = DVector::from_fn(n, |_, _| rng.normal());
        let reg = build_backward_regression(&filt, &next_mean, &model, &cand, 0.9).unwrap();

        // Both routes, from the same Ξ block partition.
        let q_white = mee_rts::model::whitening_factor(&q).unwrap();
        let p_white = reg.w.view((n, 0), (n, n)).clone_owned();
        let p_b_x1 = q_white.transpose() * reg.xi.view((0, 0), (n, n)) * &q_white;
        let p_b_x2 = p_white.transpose() * reg.xi.view((n, n), (n, n)) * &p_white;
        let p_b_x1x2 = q_white.transpose() * reg.xi.view((0, n), (n, n)) * &p_white;
        let p_b_x2x1 = p_white.transpose() * reg.xi.view((n, 0), (n, n)) * &q_white;
        let a = &p_b_x2 + f.transpose() * &p_b_x1x2;
        let b = f.transpose() * &p_b_x1 + &p_b_x2x1;
        let direct = (&a + &b * &f).lu().solve(&b).expect("direct normal matrix solvable");
        let a_inv_b = a.lu().solve(&b).expect("A solvable");
        let mil = &a_inv_b
            * (DMatrix::identity(n, n) + &f * &a_inv_b)
                .lu()
                .try_inverse()
                .expect("MIL inner inverse");
        let rel = (&direct - mil).norm() / direct.norm().max(1e-12);
        worst = worst.max(rel);
        if rel > 1e-8 {
            failures.push(format!("instance {instance} (n={n}): routes differ by {rel:.2e}"));
            break;
        }
    }
    check(
        &mut failures,
        worst <= 1e-8,
        format!("worst relative route difference {worst:.2e} (> 1e-8)"),
    );
    report(7, failures);
}

// ---------------------------------------------------------------------------
// Criterion 8: covariance consistency. Empirical smoothing-error covariance
// over 20,000 Monte-Carlo runs of a 1D linear-Gaussian system matches the
// mean-square-error recursion within 5% relative.
// ---------------------------------------------------------------------------
#[test]
fn criterion_08_covariance_consistency() {
    let f = 0.9;
    let q = 0.25;
    let h = 1.0;
    let r = 0.5;
    let model =
        LinearStateSpace::new(dmatrix![f], dmatrix![h], dmatrix![q], dmatrix![r]).unwrap();
    let cfg = MeeConfig { sigma: 2.0, ..MeeConfig::default() };
    let t_len = 25;
    let runs = 20_000;

    let mut filter_sq = vec![0.0_f64; t_len];
    let mut smooth_sq = vec![0.0_f64; t_len];
    let mut gain_sum = vec![0.0_f64; t_len - 1];
    for run in 0..runs {
        let mut rng = RngStream::new(SEED ^ 0x5eed, run as u64);
        let mut x = rng.normal();
        let init = GaussianBelief::new(dvector![x + rng.normal()], dmatrix![1.0]);
        let mut states = Vec::with_capacity(t_len);
        let mut ys = Vec::with_capacity(t_len);
        for _ in 0..t_len {
            x = f * x + q.sqrt() * rng.normal();
            states.push(x);
            ys.push(h * x + r.sqrt() * rng.normal());
        }
        let mut belief = init;
        let mut filtered = Vec::with_capacity(t_len);
        let mut predicted = Vec::with_capacity(t_len);
        for y in &ys {
            let pred = predict(&belief, &model).unwrap();
            let step = mee_update(&pred, &dvector![*y], &model, &cfg).unwrap();
            belief = step.posterior.clone();
            predicted.push(pred);
            filtered.push(step.posterior);
        }
        let smooth = mee_rts_backward(&filtered, &predicted, &model, &cfg).unwrap();
        for t in 0..t_len {
            let ef = filtered[t].mean[0] - states[t];
            let es = smooth.smoothed[t].mean[0] - states[t];
            filter_sq[t] += ef * ef;
            smooth_sq[t] += es * es;
        }
        for t in 0..t_len - 1 {
            gain_sum[t] += smooth.gains[t][(0, 0)];
        }
    }
    let runs_f = runs as f64;
    let c: Vec<f64> = filter_sq.iter().map(|s| s / runs_f).collect();
    let n_emp: Vec<f64> = smooth_sq.iter().map(|s| s / runs_f).collect();
    let k_mean: Vec<f64> = gain_sum.iter().map(|s| s / runs_f).collect();

    // Backward recursion seeded at the boundary (last smoothed = last
    // filtered belief).
    let mut n_theory = vec![0.0_f64; t_len];
    n_theory[t_len - 1] = n_emp[t_len - 1];
    for t in (0..t_len - 1).rev() {
        let next = dmatrix![n_theory[t + 1]];
        let step = mse_recursion_step(
            &next,
            &dmatrix![k_mean[t]],
            &dmatrix![f],
            &dmatrix![q],
            &dmatrix![c[t]],
        );
        n_theory[t] = step[(0, 0)];
    }

    let mut failures = Vec::new();
    let mut worst = 0.0_f64;
    for t in 3..t_len - 1 {
        let rel = (n_theory[t] - n_emp[t]).abs() / n_emp[t];
        worst = worst.max(rel);
        check(
            &mut failures,
            rel <= 0.05,
            format!("t={t}: recursion {:.4} vs empirical {:.4} ({:.1}% off)", n_theory[t], n_emp[t], 100.0 * rel),
        );
    }
    println!("criterion 8 detail: worst relative gap {:.2}%", 100.0 * worst);
    report(8, failures);
}

// ---------------------------------------------------------------------------
// Criterion 9: theory module. mse_steady_state is a fixed point of the
// recursion; the iterated recursion converges to it on random stable
// instances; flops_mc_rtsl(3, 2) = 1059.
// ---------------------------------------------------------------------------
#[test]
fn criterion_09_theory_module() {
    let mut failures = Vec::new();
    check(&mut failures, flops_mc_rtsl(3, 2) == 1059, format!("flops_mc_rtsl(3,2) = {}", flops_mc_rtsl(3, 2)));

    let mut rng = RngStream::new(SEED, 3);
    for instance in 0..20 {
        let n = 1 + (rng.uniform() * 4.0).floor() as usize;
        // Random gain scaled to spectral radius ~0.8 (stable).
        let mut k = DMatrix::from_fn(n, n, |_, _| rng.normal());
        let rho = k.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0_f64, f64::max);
        k *= 0.8 / rho.max(1e-9);
        let f = DMatrix::from_fn(n, n, |_, _| rng.normal() * 0.5);
        let a = DMatrix::from_fn(n, n, |_, _| rng.normal());
        let q = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
        let b = DMatrix::from_fn(n, n, |_, _| rng.normal());
        let c = &b * b.transpose() + DMatrix::identity(n, n) * 0.1;

        let y = mse_driving_term(&k, &f, &q, &c);
        let n_inf = mse_steady_state(&k, &y).unwrap();
        let fixed = mse_recursion_step(&n_inf, &k, &f, &q, &c);
        let resid = (&fixed - &n_inf).norm();
        check(
            &mut failures,
            resid < 1e-8,
            format!("instance {instance}: fixed-point residual {resid:.2e}"),
        );
        let mut n_t = DMatrix::zeros(n, n);
        for _ in 0..2000 {
            n_t = mse_recursion_step(&n_t, &k, &f, &q, &c);
        }
        let gap = (&n_t - &n_inf).norm() / n_inf.norm().max(1e-12);
        check(
            &mut failures,
            gap < 1e-8,
            format!("instance {instance}: iterated recursion off by {gap:.2e}"),
        );
    }
    report(9, failures);
}

// ---------------------------------------------------------------------------
// Criterion 10: linearization exactness and the tracking example. MEE-ERTS on
// a linear model reproduces MEE-RTS to 1e-10; on the tracking scenario
// MEE-ERTS achieves a lower steady-state MSD than the EKF-style baselines.
// ---------------------------------------------------------------------------
#[test]
fn criterion_10_linearization_and_tracking() {
    let mut failures = Vec::new();

    // Linear exactness.
    let lin = LinearStateSpace::new(
        dmatrix![1.0, 0.5; 0.0, 1.0],
        dmatrix![1.0, 0.0],
        dmatrix![0.3, 0.1; 0.1, 0.4],
        dmatrix![0.8],
    )
    .unwrap();
    let cfg = MeeConfig::default();
    let init = GaussianBelief::new(dvector![0.0, 1.0], DMatrix::identity(2, 2));
    let ys: Vec<DVector<f64>> =
        [0.9, 2.1, 2.8, 4.2, 4.9, 6.3].iter().map(|y| dvector![*y]).collect();
    let mut belief = init.clone();
    let mut filtered = Vec::new();
    let mut predicted = Vec::new();
    for y in &ys {
        let pred = predict(&belief, &lin).unwrap();
        let step = mee_update(&pred, y, &lin, &cfg).unwrap();
        belief = step.posterior.clone();
        predicted.push(pred);
        filtered.push(step.posterior);
    }
    let linear_out = mee_rts_backward(&filtered, &predicted, &lin, &cfg).unwrap();
    let (f_mat, h_mat) = (lin.f.clone(), lin.h.clone());
    let (f_mat2, h_mat2) = (f_mat.clone(), h_mat.clone());
    let nonlin = NonlinearStateSpace {
        f: Box::new(move |x: &DVector<f64>| &f_mat * x),
        h: Box::new(move |x: &DVector<f64>| &h_mat * x),
        jac_f: Box::new(move |_| f_mat2.clone()),
        jac_h: Box::new(move |_| h_mat2.clone()),
        q: lin.q.clone(),
        r: lin.r.clone(),
    };
    let ext_out = mee_erts_smooth(&ys, &nonlin, &init, &cfg).unwrap();
    let worst = linear_out
        .smoothed
        .iter()
        .zip(&ext_out.smoothed)
        .map(|(a, b)| (&a.mean - &b.mean).norm())
        .fold(0.0_f64, f64::max);
    check(
        &mut failures,
        worst <= 1e-10,
        format!("MEE-ERTS deviates {worst:.2e} from MEE-RTS on a linear model (> 1e-10)"),
    );

    // Tracking example: MEE-ERTS beats the baselines in steady-state MSD.
    let spec = find_scenario("tracking").unwrap();
    let cfg = MeeConfig { sigma: spec.sigma, ..MeeConfig::default() };
    let algorithms = [
        Algorithm::Kf,
        Algorithm::Rts,
        Algorithm::Mckf,
        Algorithm::McRts,
        Algorithm::MeeKf,
        Algorithm::MeeErts,
    ];
    let out = run_scenario(&spec, &algorithms, &cfg, SEED).unwrap();
    let mee = out.algorithm(Algorithm::MeeErts).unwrap().steady_state_total_db;
    for res in &out.algorithms {
        if res.algorithm == Algorithm::MeeErts {
            continue;
        }
        check(
            &mut failures,
            mee < res.steady_state_total_db,
            format!(
                "tracking: MEE-ERTS {mee:.2} dB does not beat {} {:.2} dB",
                res.algorithm.name(),
                res.steady_state_total_db
            ),
        );
    }
    report(10, failures);
}

// ---------------------------------------------------------------------------
// Criterion 11: determinism. Re-running an experiment from its emitted
// manifest reproduces the results byte for byte (the wall-clock column of the
// summary excepted, as documented).
// ---------------------------------------------------------------------------
#[test]
fn criterion_11_manifest_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let config_path = tmp.path().join("experiment.toml");
    std::fs::write(
        &config_path,
        r#"
scenario = "ca-scenario-2"
algorithms = ["kf", "rts", "mee-kf", "mee-rts"]
seed = 99

[overrides]
horizon = 300
mc_runs = 30
"#,
    )
    .unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let bin = env!("CARGO_BIN_EXE_mee-rts");
    let run = |config: &std::path::Path, out: &std::path::Path| {
        let status = std::process::Command::new(bin)
            .arg("run")
            .arg("--config")
            .arg(config)
            .arg("--out-dir")
            .arg(out)
            .status()
            .expect("spawn mee-rts");
        assert!(status.success());
    };
    run(&config_path, &out_a);
    run(&out_a.join("manifest.json"), &out_b);

    let mut failures = Vec::new();
    let curves_a = std::fs::read(out_a.join("msd_curves.csv")).unwrap();
    let curves_b = std::fs::read(out_b.join("msd_curves.csv")).unwrap();
    check(&mut failures, curves_a == curves_b, "msd_curves.csv differs across re-run".into());
    let strip_wall = |text: &str| {
        text.lines()
            .map(|l| l.rsplit_once(',').map(|(rest, _)| rest.to_string()).unwrap_or_default())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let sum_a = strip_wall(&std::fs::read_to_string(out_a.join("summary.csv")).unwrap());
    let sum_b = strip_wall(&std::fs::read_to_string(out_b.join("summary.csv")).unwrap());
    check(
        &mut failures,
        sum_a == sum_b,
        "summary.csv differs across re-run (wallclock column excluded)".into(),
    );
    report(11, failures);
}
