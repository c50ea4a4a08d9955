//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Set `SSNNO_ACCEPTANCE_FAST=1` to shrink the Monte
//! Carlo grid to 2×2.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ssnno_core::benchmark::monte_carlo_noise_levels;
use ssnno_core::control::*;
use ssnno_core::data::Dataset;
use ssnno_core::experiment::*;
use ssnno_core::model::{is_variance_ordered, variance_stats, Architecture, SsnnModel};
use ssnno_core::permutation::{permute_model, sort_index, variance_sort_index, PermutationIndex};
use ssnno_core::reduction::{classify_states, reduce, significant_count, SignificanceReport};
use ssnno_core::training::*;

/// Data seed of the identification record; fixed before any run.
const DATA_SEED: u64 = 0;
const INIT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const SLACK: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_data(rng: &mut ChaCha8Rng, m: usize, p: usize, n: usize) -> Dataset<f64> {
    let u = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
    Dataset::unsplit(u, y).unwrap()
}

fn random_model(rng: &mut ChaCha8Rng, d: usize, m: usize, p: usize) -> SsnnModel<f64> {
    let arch = Architecture::two_layer(d, m, p, rng.random_range(2..5), rng.random_range(2..5)).unwrap();
    let mut model = SsnnModel::random(&arch, 0.9, rng).unwrap();
    model.x0 = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    model
}

fn random_weights(rng: &mut ChaCha8Rng, d: usize) -> LossWeights<f64> {
    let mut acc = rng.random_range(0.0..1.0);
    let w = DVector::from_fn(d, |_, _| {
        acc += rng.random_range(0.1..1.0);
        acc
    });
    LossWeights::new(rng.random_range(0.01..1.0), rng.random_range(0.01..1.0), w).unwrap()
}

fn c1_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.random_range(1..=3);
        let (m, p) = (rng.random_range(1..=2), rng.random_range(1..=2));
        let n = rng.random_range(5..=20);
        let model = random_model(&mut rng, d, m, p);
        let data = random_data(&mut rng, m, p, n);
        let w = random_weights(&mut rng, d);
        let g = loss_gradient(&model, &data, &w).unwrap();
        let theta = model.flatten();
        let scale = g.amax().max(1e-3);
        for i in 0..theta.len() {
            let h = 1e-5;
            let eval = |delta: f64| {
                let mut t = theta.clone();
                t[i] += delta;
                loss(&SsnnModel::unflatten(&model.arch, &t).unwrap(), &data, &w).unwrap().total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (g[i] - fd).abs() / fd.abs().max(g[i].abs()).max(1e-6 * scale);
            worst = worst.max(rel);
        }
    }
    outcome(worst < 1e-5, format!("max relative error {worst:.2e} over 50 instances"))
}

fn random_permutation(rng: &mut ChaCha8Rng, d: usize) -> PermutationIndex {
    let mut z: Vec<usize> = (0..d).collect();
    for i in (1..d).rev() {
        z.swap(i, rng.random_range(0..=i));
    }
    PermutationIndex::new(z).unwrap()
}

fn c2_permutation_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut out_err, mut jy_err, mut jg_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..100 {
        let d = rng.random_range(1..=5);
        let (m, p) = (rng.random_range(1..=2), rng.random_range(1..=2));
        let model = random_model(&mut rng, d, m, p);
        let z = random_permutation(&mut rng, d);
        let permuted = permute_model(&model, &z).unwrap();
        let data = random_data(&mut rng, m, p, 100);
        let a = model.simulate(&data.inputs).unwrap();
        let b = permuted.simulate(&data.inputs).unwrap();
        out_err = out_err.max((&a.outputs - &b.outputs).amax());
        let w = random_weights(&mut rng, d);
        let (la, lb) = (loss(&model, &data, &w).unwrap(), loss(&permuted, &data, &w).unwrap());
        jy_err = jy_err.max((la.spe - lb.spe).abs());
        jg_err = jg_err.max((la.param - lb.param).abs());
    }
    outcome(
        out_err < 1e-10 && jy_err < 1e-10 && jg_err < 1e-10,
        format!("output {out_err:.1e}, J_y {jy_err:.1e}, J_g {jg_err:.1e}"),
    )
}

fn c3_sort_lowers_variance_term() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut checked, mut violations, mut strict_misses) = (0, 0, 0);
    let mut min_gain = f64::INFINITY;
    while checked < 100 {
        let d = rng.random_range(2..=4);
        let model = random_model(&mut rng, d, 1, 1);
        let data = random_data(&mut rng, 1, 1, 60);
        let stats = variance_stats(&model.simulate(&data.inputs).unwrap().states).unwrap();
        let v = stats.variances.as_slice();
        if is_variance_ordered(v, 0.0) {
            continue;
        }
        checked += 1;
        let w = random_weights(&mut rng, d);
        let z = variance_sort_index(&stats);
        let before = loss(&model, &data, &w).unwrap().variance;
        let after = loss(&permute_model(&model, &z).unwrap(), &data, &w).unwrap().variance;
        if after > before + SLACK {
            violations += 1;
        }
        // Every draw here has some V_i < V_j with i < j.
        if after >= before {
            strict_misses += 1;
        }
        min_gain = min_gain.min((before - after) / before);
    }
    outcome(
        violations == 0 && strict_misses == 0,
        format!("100 unordered models: {violations} increases, {strict_misses} non-strict, min relative decrease {min_gain:.2e}"),
    )
}

struct Trained {
    data: Dataset<f64>,
    report: TrainReport<f64>,
    metrics: Metrics,
}

/// Criterion 5's model, shared with 6, 8, 10 and 11.
fn reference_model() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let g = cstr_dataset(DATA_SEED, 0.05).unwrap();
        let report = IdentificationSetup::default().train(&g.dataset, &INIT_SEEDS, true).unwrap();
        let metrics = evaluate_metrics(&report.model, &g.dataset).unwrap();
        Trained {
            data: g.dataset,
            report,
            metrics,
        }
    })
}

fn c4_algorithm1() -> Outcome {
    let g = cstr_dataset(DATA_SEED, 0.05).unwrap();
    let setup = IdentificationSetup::default();
    let arch = setup.architecture(1, 1).unwrap();
    let w = setup.loss_weights().unwrap();
    let results: Vec<(u64, bool, bool, usize)> = (100..120u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = TrainConfig {
                seed,
                ..setup.train.clone()
            };
            let r = train_with_repair(&g.dataset, &arch, &w, &cfg, None).unwrap();
            // Recompute the statistics from the returned model.
            let states = r.model.simulate(&g.dataset.training().inputs).unwrap().states;
            let ordered = is_variance_ordered(variance_stats(&states).unwrap().variances.as_slice(), SLACK);
            let losses = r.accepted_losses();
            let monotone = losses.windows(2).all(|p| p[1] <= p[0] + SLACK * p[0].abs().max(1.0));
            (seed, ordered, monotone, r.repair.len())
        })
        .collect();
    let bad: Vec<u64> = results.iter().filter(|r| !(r.1 && r.2)).map(|r| r.0).collect();
    let rounds: Vec<usize> = results.iter().map(|r| r.3).collect();
    outcome(bad.is_empty(), format!("20 seeds, failures {bad:?}, repair rounds {rounds:?}"))
}

fn c5_identification() -> Outcome {
    let t = reference_model();
    let v = &t.metrics.variances;
    let ordered = is_variance_ordered(v, SLACK);
    let pass = ordered
        && v[2] <= 0.001
        && v[0] >= 50.0 * v[1]
        && t.metrics.mse_train <= 0.006
        && t.metrics.mse_test <= 0.006;
    outcome(
        pass,
        format!(
            "V = [{:.4}, {:.2e}, {:.2e}], ordered {ordered}, MSE_tr {:.5}, MSE_ts {:.5}",
            v[0], v[1], v[2], t.metrics.mse_train, t.metrics.mse_test
        ),
    )
}

fn reduced_mse(model: &SsnnModel<f64>, data: &Dataset<f64>, delta: f64) -> (usize, f64) {
    let report = classify_states(model, data, delta).unwrap();
    let s = report.significant_count;
    let mse = reduce(model, &report)
        .map(|rm| evaluate_metrics(&rm.model, data).unwrap().mse_train)
        .unwrap_or(f64::NAN);
    (s, mse)
}

fn c6_reduction_orders() -> Outcome {
    let t = reference_model();
    let (s1, mse1) = reduced_mse(&t.report.model, &t.data, 0.0005);
    let (s2, mse2) = reduced_mse(&t.report.model, &t.data, 0.001);
    let full = t.metrics.mse_train;
    let close = (mse1 - full).abs() <= 0.3 * full;
    outcome(
        s1 == 2 && s2 == 1 && close,
        format!(
            "δ=0.0005 → s={s1} (MSE_tr {mse1:.5}), δ=0.001 → s={s2} (MSE_tr {mse2:.5}), full MSE_tr {full:.5}, V_x2 {:.2e}",
            t.metrics.variances[1]
        ),
    )
}

fn c7_exact_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let arch = Architecture::two_layer(3, 1, 1, 4, 3).unwrap();
    let mut model = SsnnModel::<f64>::random(&arch, 0.8, &mut rng).unwrap();
    let c = 0.37;
    model.state_layers[1].weights.row_mut(2).fill(0.0);
    model.state_layers[1].bias[2] = c;
    model.x0 = DVector::from_vec(vec![0.2, -0.1, c]);
    let probe = random_data(&mut rng, 1, 1, 200);
    let z = sort_index(variance_stats(&model.simulate(&probe.inputs).unwrap().states).unwrap().variances.as_slice());
    let model = permute_model(&model, &z).unwrap();
    let report = classify_states(&model, &probe, 1e-20).unwrap();
    let rm = reduce(&model, &report).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let u = DMatrix::from_fn(1, 200, |_, _| rng.random_range(-1.0..1.0));
        let a = model.simulate(&u).unwrap().outputs;
        let b = rm.simulate(&u).unwrap().outputs;
        worst = worst.max((a - b).amax());
    }
    outcome(
        rm.order() == 2 && worst < 1e-12,
        format!("order {} → {}, max output discrepancy {worst:.1e} over 200 sequences", 3, rm.order()),
    )
}

fn c8_unordered_repair() -> Outcome {
    let t = reference_model();
    let setup = IdentificationSetup::default();
    let arch = setup.architecture(1, 1).unwrap();
    let w = setup.loss_weights().unwrap();
    let mut found = None;
    for seed in 0..200u64 {
        let cfg = TrainConfig {
            seed,
            ..setup.train.clone()
        };
        let r = train(&t.data, &arch, &w, &cfg).unwrap();
        if !is_variance_ordered(r.stats.variances.as_slice(), SLACK) {
            found = Some((seed, r, cfg));
            break;
        }
    }
    let Some((seed, local, cfg)) = found else {
        return outcome(false, "no unordered local optimum in 200 seeds");
    };
    let before = evaluate_metrics(&local.model, &t.data).unwrap();
    let repaired = train_with_repair(&t.data, &arch, &w, &cfg, Some(local.model.clone())).unwrap();
    let after = evaluate_metrics(&repaired.model, &t.data).unwrap();
    let ordered = is_variance_ordered(&after.variances, SLACK);
    let pass = ordered && after.mse_train <= 2.5 * t.metrics.mse_train;
    outcome(
        pass,
        format!(
            "seed {seed}: V {:?} MSE_tr {:.5} → V {:?} MSE_tr {:.5} (reference {:.5})",
            short(&before.variances),
            before.mse_train,
            short(&after.variances),
            after.mse_train,
            t.metrics.mse_train
        ),
    )
}

fn short(v: &[f64]) -> Vec<String> {
    v.iter().map(|x| format!("{x:.2e}")).collect()
}

fn c9_monte_carlo(fast: bool) -> Outcome {
    let levels = monte_carlo_noise_levels();
    let (levels, seeds): (Vec<f64>, Vec<u64>) = if fast {
        (vec![levels[0], levels[5]], vec![0, 1])
    } else {
        (levels, INIT_SEEDS.to_vec())
    };
    let setup = IdentificationSetup::default();
    let jobs: Vec<(usize, BaselineMode)> = (0..levels.len())
        .flat_map(|i| [(i, BaselineMode::Ssnno), (i, BaselineMode::SsnnSpeOnly)])
        .collect();
    let cells: Vec<CellOutcome> = jobs
        .par_iter()
        .map(|&(i, mode)| monte_carlo_cell(&setup, levels[i], 1000 + i as u64, &seeds, mode).unwrap())
        .collect();
    let pick = |mode| {
        let m: Vec<Metrics> = cells.iter().filter(|c| c.mode == mode).map(|c| c.metrics.clone()).collect();
        aggregate(&m).unwrap()
    };
    let (ssnno, ssnn) = (pick(BaselineMode::Ssnno), pick(BaselineMode::SsnnSpeOnly));
    let ratio = ssnno.mean.variances[0] / ssnno.mean.variances[2];
    let mse_ratio = ssnno.mean.mse_train / ssnn.mean.mse_train;
    outcome(
        ratio >= 100.0 && (1.0 / 3.0..=3.0).contains(&mse_ratio),
        format!(
            "{}×{} grid: SSNNO mean V {:?}, V_x1/V_x3 {ratio:.0}; mean MSE_tr SSNNO {:.5} vs SSNN {:.5}",
            levels.len(),
            seeds.len(),
            short(&ssnno.mean.variances),
            ssnno.mean.mse_train,
            ssnn.mean.mse_train
        ),
    )
}

/// The order-2 reduction of criterion 5's model. When `δ = 0.0005` does not
/// give two states, the threshold is set to `V_x3` so exactly the last state
/// is frozen.
fn order_two() -> &'static (SsnnModel<f64>, f64) {
    static CELL: OnceLock<(SsnnModel<f64>, f64)> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = reference_model();
        let v = &t.metrics.variances;
        let delta = if significant_count(v, 0.0005) == 2 { 0.0005 } else { v[2] };
        let report: SignificanceReport<f64> = classify_states(&t.report.model, &t.data, delta).unwrap();
        (reduce(&t.report.model, &report).unwrap().model, delta)
    })
}

fn c10_steady_state() -> Outcome {
    let (model, delta) = order_two();
    let cfg = SteadyStateConfig::with_bounds(DVector::from_element(1, -1.0), DVector::from_element(1, 0.0));
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for target in [0.7, 0.6, 0.5, 0.4] {
        match solve_steady_state(model, &DVector::from_element(1, target), &cfg) {
            Ok(p) => {
                // Independent residual evaluation.
                let r1 = target - model.output_map(&p.x_ref).unwrap()[0];
                let r2 = &p.x_ref - model.state_step(&p.x_ref, &p.u_ref).unwrap();
                let res = (r1 * r1 + r2.norm_squared()).sqrt();
                worst = worst.max(res);
                detail.push(format!("{target}: u_ref {:.4} res {res:.1e}", p.u_ref[0]));
            }
            Err(e) => {
                worst = f64::INFINITY;
                detail.push(format!("{target}: {e}"));
            }
        }
    }
    outcome(
        worst <= 1e-8,
        format!("order {} (δ = {delta:.2e}); {}", model.state_dim(), detail.join(", ")),
    )
}

fn c11_closed_loop() -> Outcome {
    let (model, _) = order_two();
    let t = reference_model();
    let log = closed_loop_run(
        &ClosedLoopConfig::default(),
        model,
        Some(&t.report.model),
        &EkfConfig::for_order(2, 1),
        &MpcConfig::for_order(2, 1),
    )
    .unwrap();
    let tails = log.segment_tail_errors(10);
    let in_bounds = log.records.iter().all(|r| (-1.0..=0.0).contains(&r.u));
    let tracking = tails.len() == 4 && tails.iter().all(|&(_, e)| e <= 0.05);
    outcome(
        log.failure.is_none() && log.records.len() == 100 && in_bounds && tracking,
        format!(
            "tail |y - y_t|: {}; inputs in [-1, 0]: {in_bounds}",
            tails
                .iter()
                .map(|(y, e)| format!("{y:.1} → {e:.4}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn c12_ekf() -> Outcome {
    // Scalar oracle: x+ = a x + b u + c, y = h x + e.
    let (a, b, c, h, e, q, r) = (0.95, 0.3, -0.05, 1.5, 0.2, 0.02, 0.3);
    let arch = Architecture::new(1, 1, 1, vec![1], vec![1]).unwrap();
    let mut m = SsnnModel::<f64>::zeros(&arch).unwrap();
    m.state_layers[0].weights = DMatrix::from_row_slice(1, 2, &[a, b]);
    m.state_layers[0].bias[0] = c;
    m.output_layers[0].weights[(0, 0)] = h;
    m.output_layers[0].bias[0] = e;
    let cfg = EkfConfig {
        process_cov: DMatrix::from_element(1, 1, q),
        measurement_cov: DMatrix::from_element(1, 1, r),
        initial_cov: DMatrix::from_element(1, 1, 2.0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(112);
    let mut st = EkfState::new(DVector::from_element(1, -0.4), cfg.initial_cov.clone());
    let (mut xh, mut p) = (-0.4, 2.0);
    let mut kf_err: f64 = 0.0;
    for _ in 0..10 {
        let (u, y) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        st = ekf_step(&m, &st, &cfg, &DVector::from_element(1, u), &DVector::from_element(1, y)).unwrap();
        let xp = a * xh + b * u + c;
        let pp = a * a * p + q;
        let k = pp * h / (h * h * pp + r);
        xh = xp + k * (y - h * xp - e);
        p = (1.0 - k * h) * pp;
        kf_err = kf_err.max((st.x[0] - xh).abs()).max((st.p[(0, 0)] - p).abs());
    }

    // Covariance health over a long noisy CSTR loop.
    let (model, _) = order_two();
    let loop_cfg = ClosedLoopConfig {
        targets: quarterly_targets(1000, 0.7, 0.1),
        measurement_noise: 0.05,
        noise_seed: 12,
        ..Default::default()
    };
    let log = closed_loop_run(&loop_cfg, model, None, &EkfConfig::for_order(2, 1), &MpcConfig::for_order(2, 1)).unwrap();
    let asym = log.covariance.iter().map(|c| c.0).fold(0.0, f64::max);
    let min_eig = log.covariance.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    outcome(
        kf_err < 1e-10 && log.failure.is_none() && log.covariance.len() == 1000 && asym == 0.0 && min_eig >= -1e-10,
        format!(
            "scalar KF max error {kf_err:.1e}; {} loop steps, asymmetry {asym:.1e}, min eigenvalue {min_eig:.2e}",
            log.covariance.len()
        ),
    )
}

fn main() {
    let fast = std::env::var("SSNNO_ACCEPTANCE_FAST").is_ok_and(|v| !v.is_empty() && v != "0");
    type Criterion = Box<dyn Fn() -> Outcome>;
    let criteria: Vec<(&str, Criterion)> = vec![
        ("BPTT gradient vs central differences", Box::new(c1_gradient)),
        ("permutation equivalence", Box::new(c2_permutation_equivalence)),
        ("variance sort lowers J_v", Box::new(c3_sort_lowers_variance_term)),
        ("ordering repair guarantee", Box::new(c4_algorithm1)),
        ("CSTR identification accuracy", Box::new(c5_identification)),
        ("reduced orders at two thresholds", Box::new(c6_reduction_orders)),
        ("exact reduction of a constant state", Box::new(c7_exact_reduction)),
        ("repair of an unordered optimum", Box::new(c8_unordered_repair)),
        ("Monte Carlo variance gap", Box::new(move || c9_monte_carlo(fast))),
        ("steady-state references", Box::new(c10_steady_state)),
        ("closed-loop MPC tracking", Box::new(c11_closed_loop)),
        ("EKF validation", Box::new(c12_ekf)),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let status = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {:>2} {status} {name} ({:.1}s): {}",
            i + 1,
            start.elapsed().as_secs_f64(),
            result.detail
        );
        if !result.pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", criteria.len());
    } else {
        println!("acceptance: {} of {} criteria fail: {failed:?}", failed.len(), criteria.len());
        std::process::exit(1);
    }
}
