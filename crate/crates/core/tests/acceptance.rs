//! Acceptance suite. Each test exercises one release criterion at its full
//! stated size and tolerance and prints a `PASS` line with the observed
//! numbers (visible with `--nocapture`).

mod common;

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Instant;

use blockprior::{
    analytic_mean, analytic_total_variance, analytic_total_variance_for, assemble_with_cross,
    block_whiten, conservative_prior, eigen_extrema, extrinsic_variance, max_bias,
    quadratic_extrinsic_bound, sample_completion, sample_whitened_completion, simulate,
    whitening_factor, worst_case, BlockSpec, Scenario, SymMatrix, DEFAULT_REL_TOL,
};
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

/// The two timed sweeps hold this lock so their runtime budgets are measured
/// without contending with each other on small machines.
static TIMED: Mutex<()> = Mutex::new(());

fn unit_block(name: &str, label: &str) -> BlockSpec {
    BlockSpec::new(name, &[label], SymMatrix::identity(1)).unwrap()
}

#[test]
fn acceptance_1_worked_two_parameter_example() {
    let start = Instant::now();
    let blocks = vec![unit_block("first", "p1"), unit_block("second", "p2")];
    let gradient = DVector::from_vec(vec![1.0, 1.0]);

    for rho in [-1.0, 0.0, 0.5, 1.0] {
        let mut cross = BTreeMap::new();
        cross.insert((0, 1), DMatrix::from_element(1, 1, rho));
        let completion = assemble_with_cross(&blocks, &cross).unwrap();
        let extrinsic = extrinsic_variance(&gradient, completion.joint()).unwrap();
        assert!(
            (extrinsic - (2.0 + 2.0 * rho)).abs() <= 1e-12,
            "extrinsic at rho={rho}: {extrinsic}"
        );
    }

    let wc = worst_case(&gradient, &blocks).unwrap();
    assert!((wc.value - 4.0).abs() <= 1e-12);
    assert!((wc.alpha - 2.0).abs() <= 1e-12);

    let prior = conservative_prior(&blocks).unwrap();
    assert_eq!(prior.to_rows(), vec![vec![2.0, 0.0], vec![0.0, 2.0]]);

    let scenario = Scenario::builder(blocks, vec![1.0, 1.0])
        .intrinsic_variance(1.0)
        .build()
        .unwrap();
    let inflated_total = analytic_total_variance_for(&scenario, &prior).unwrap();
    assert!((inflated_total - 5.0).abs() <= 1e-12);
    assert!(inflated_total >= wc.value);

    println!(
        "acceptance 1 (worked two-parameter example): PASS — alpha 2, worst case 4, inflated total {inflated_total}, {:.1} ms",
        start.elapsed().as_secs_f64() * 1e3
    );
}

#[test]
fn acceptance_2_and_3_limit_sweep_and_worst_case_attainment() {
    let _guard = TIMED.lock().unwrap();
    let start = Instant::now();
    const SCENARIOS: usize = 10_000;
    const COMPLETIONS: u64 = 100;

    let worst_ratio = (0..SCENARIOS)
        .into_par_iter()
        .map(|k| {
            let mut r = rng(0xACC2_0000 + k as u64);
            let blocks = random_blocks(&mut r, 4, 4);
            let n: usize = blocks.iter().map(|b| b.dim()).sum();
            let n_blocks = blocks.len() as f64;
            let gradient = DVector::from_vec(random_gradient(&mut r, n));
            let scenario = Scenario::builder(blocks.clone(), gradient.iter().copied().collect())
                .build()
                .unwrap();
            let view = block_whiten(&scenario).unwrap();

            let baseline =
                extrinsic_variance(&gradient, &scenario.uncorrelated_covariance()).unwrap();
            let cap = n_blocks * baseline;

            // criterion 3: the rank-structured worst case is PSD and attains
            // the closed-form value
            let wc = worst_case(&gradient, &blocks).unwrap();
            assert!(wc.alpha <= n_blocks + 1e-9, "alpha {} blocks {n_blocks}", wc.alpha);
            let (lambda_min, _) = eigen_extrema(wc.achieving_sigma_w()).unwrap();
            assert!(lambda_min >= -1e-10, "worst-case lambda_min {lambda_min}");
            let attained = wc
                .achieving_sigma_w()
                .quadratic_form(view.gradient())
                .unwrap();
            assert!(
                close_rel(attained, wc.value, 1e-9, 1e-12),
                "attained {attained} vs value {}",
                wc.value
            );

            let mut max_ratio = 0.0f64;
            for c in 0..COMPLETIONS {
                let completion = sample_completion(&blocks, 0xACC3_0000 + k as u64, c).unwrap();
                let extrinsic = extrinsic_variance(&gradient, completion.joint()).unwrap();
                // criterion 2: the inflation limit
                assert!(
                    leq_rel(extrinsic, cap, 1e-9),
                    "scenario {k} completion {c}: {extrinsic} > {cap}"
                );
                // criterion 3: no sampled completion beats the worst case
                assert!(
                    leq_rel(extrinsic, wc.value, 1e-9),
                    "scenario {k} completion {c}: {extrinsic} > worst case {}",
                    wc.value
                );
                if baseline > 0.0 {
                    max_ratio = max_ratio.max(extrinsic / baseline);
                }
            }
            max_ratio
        })
        .reduce(|| 0.0f64, f64::max);

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "sweep took {elapsed:.1} s");
    println!(
        "acceptance 2 (eigenvalue limit sweep): PASS — {SCENARIOS} scenarios x {COMPLETIONS} completions, zero violations, max ratio {worst_ratio:.6}, {elapsed:.1} s"
    );
    println!(
        "acceptance 3 (worst-case attainment): PASS — rank-structured completions PSD and attained, never exceeded"
    );
}

#[test]
fn acceptance_4_trace_inequality_and_sandwich() {
    let start = Instant::now();
    const SETS: u64 = 25;
    const PER_SET: u64 = 400;
    let mut r = rng(0xACC4);
    for set in 0..SETS {
        let blocks = random_blocks(&mut r, 4, 4);
        let dims: Vec<usize> = blocks.iter().map(|b| b.dim()).collect();
        let n: usize = dims.iter().sum();
        let n_blocks = blocks.len() as f64;
        let scenario = Scenario::builder(blocks.clone(), vec![0.0; n])
            .build()
            .unwrap();
        let view = block_whiten(&scenario).unwrap();

        let psd_c = random_psd(&mut r, n, 1.0);
        let psd_d = view.whiten_quad(&psd_c).unwrap();
        let psd_cap = n_blocks * psd_d.trace();

        let indef_c = random_sym(&mut r, n, 1.0);
        let indef_d = view.whiten_quad(&indef_c).unwrap();
        let (lambda_min, lambda_max) = eigen_extrema(&indef_d).unwrap();
        let (lower, upper) = (n as f64 * lambda_min, n as f64 * lambda_max);

        for c in 0..PER_SET {
            let sigma_w = sample_whitened_completion(&dims, n, 0xACC4_0000 + set, c).unwrap();
            let tr_psd = psd_d.trace_product(&sigma_w).unwrap();
            assert!(leq_rel(tr_psd, psd_cap, 1e-9), "{tr_psd} > {psd_cap}");
            let tr_ind = indef_d.trace_product(&sigma_w).unwrap();
            assert!(leq_rel(lower, tr_ind, 1e-9), "{lower} > {tr_ind}");
            assert!(leq_rel(tr_ind, upper, 1e-9), "{tr_ind} > {upper}");
        }
    }
    println!(
        "acceptance 4 (trace inequality and sandwich): PASS — {} completions, {:.1} s",
        SETS * PER_SET,
        start.elapsed().as_secs_f64()
    );
}

#[test]
fn acceptance_5_quadratic_extrinsic_bound() {
    let start = Instant::now();
    const SETS: u64 = 25;
    const PER_SET: u64 = 400;
    let mut r = rng(0xACC5);
    for set in 0..SETS {
        let blocks = random_blocks(&mut r, 4, 4);
        let dims: Vec<usize> = blocks.iter().map(|b| b.dim()).collect();
        let n: usize = dims.iter().sum();
        let quad_mean = random_sym(&mut r, n, 0.8);
        let bound = quadratic_extrinsic_bound(&quad_mean, &blocks).unwrap();
        let scenario = Scenario::builder(blocks.clone(), vec![0.0; n])
            .build()
            .unwrap();
        let whitened = block_whiten(&scenario)
            .unwrap()
            .whiten_quad(&quad_mean)
            .unwrap();
        for c in 0..PER_SET {
            let sigma_w = sample_whitened_completion(&dims, n, 0xACC5_0000 + set, c).unwrap();
            let prod = whitened.as_matrix() * sigma_w.as_matrix();
            let mut tr = 0.0;
            for i in 0..n {
                for j in 0..n {
                    tr += prod[(i, j)] * prod[(j, i)];
                }
            }
            assert!(leq_rel(2.0 * tr, bound, 1e-9), "{} > {bound}", 2.0 * tr);
        }
    }
    println!(
        "acceptance 5 (quadratic extrinsic bound): PASS — {} completions, {:.1} s",
        SETS * PER_SET,
        start.elapsed().as_secs_f64()
    );
}

#[test]
fn acceptance_6_bias_bound() {
    let start = Instant::now();
    const SETS: u64 = 25;
    const PER_SET: u64 = 400;
    let mut r = rng(0xACC6);
    for set in 0..SETS {
        let blocks = random_blocks(&mut r, 4, 4);
        let dims: Vec<usize> = blocks.iter().map(|b| b.dim()).collect();
        let n: usize = dims.iter().sum();
        let quad_mean = random_sym(&mut r, n, 0.8);
        let bias = max_bias(&quad_mean, &blocks, None).unwrap();
        let scenario = Scenario::builder(blocks.clone(), vec![0.0; n])
            .build()
            .unwrap();
        let whitened = block_whiten(&scenario)
            .unwrap()
            .whiten_quad(&quad_mean)
            .unwrap();
        let inflated = blocks.len() as f64 * whitened.trace();
        for c in 0..PER_SET {
            let sigma_w = sample_whitened_completion(&dims, n, 0xACC6_0000 + set, c).unwrap();
            let shift = whitened.trace_product(&sigma_w).unwrap();
            assert!(
                leq_rel((inflated - shift).abs(), bias.bound, 1e-9),
                "|{inflated} - {shift}| > {}",
                bias.bound
            );
        }
    }
    println!(
        "acceptance 6 (posterior-mean bias bound): PASS — {} completions, {:.1} s",
        SETS * PER_SET,
        start.elapsed().as_secs_f64()
    );
}

#[test]
fn acceptance_7_monte_carlo_agreement() {
    let _guard = TIMED.lock().unwrap();
    let start = Instant::now();
    const N_SAMPLES: u64 = 1_000_000;

    let cases: Vec<(usize, bool)> = (0..20).map(|i| (i, i % 2 == 1)).collect();
    cases.par_iter().for_each(|&(i, quadratic)| {
        let mut r = rng(0xACC7_0000 + i as u64);
        let scenario = random_scenario(&mut r, 3, 2, quadratic);
        let completion = sample_completion(scenario.blocks(), 0xACC7_1000 + i as u64, 0).unwrap();
        let sim = simulate(&scenario, &completion, N_SAMPLES, 0xACC7_2000 + i as u64).unwrap();
        assert_eq!(sim.n_samples, N_SAMPLES);
        let var = analytic_total_variance(&scenario, &completion).unwrap();
        let mean = analytic_mean(&scenario, &completion).unwrap();
        assert!(
            (sim.variance - var).abs() <= 4.0 * sim.se_variance,
            "case {i}: variance {} vs analytic {var} (se {})",
            sim.variance,
            sim.se_variance
        );
        assert!(
            (sim.mean - mean).abs() <= 4.0 * sim.se_mean,
            "case {i}: mean {} vs analytic {mean} (se {})",
            sim.mean,
            sim.se_mean
        );
    });

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "simulation took {elapsed:.1} s");
    println!(
        "acceptance 7 (Monte Carlo agreement): PASS — 20 scenarios x 1e6 samples within 4 SE, {elapsed:.1} s"
    );
}

#[test]
fn acceptance_8_whitening_round_trip_and_traces() {
    let start = Instant::now();
    const ROUND_TRIPS: usize = 10_000;
    const TRACE_CHECKS: u64 = 10_000;

    (0..ROUND_TRIPS).into_par_iter().for_each(|k| {
        let mut r = rng(0xACC8_0000 + k as u64);
        let dim = 1 + r.random_range(0..6);
        let sigma = random_pd(&mut r, dim);
        let w = whitening_factor(&sigma, DEFAULT_REL_TOL).unwrap();
        let prod = &w * sigma.as_matrix() * w.transpose();
        for i in 0..dim {
            for j in 0..dim {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (prod[(i, j)] - expected).abs() < 1e-10,
                    "round trip deviates at ({i}, {j})"
                );
            }
        }
    });

    (0..TRACE_CHECKS).into_par_iter().for_each(|c| {
        let mut r = rng(0xACC8_8000 + c);
        let dims: Vec<usize> = (0..(1 + r.random_range(0..4)))
            .map(|_| 1 + r.random_range(0..4))
            .collect();
        let n: usize = dims.iter().sum();
        let sigma_w = sample_whitened_completion(&dims, n, 0xACC8_9000, c).unwrap();
        assert!(
            (sigma_w.trace() - n as f64).abs() <= 1e-9 * n as f64,
            "trace {} vs {n}",
            sigma_w.trace()
        );
        assert!(blockprior::is_psd(&sigma_w, DEFAULT_REL_TOL).unwrap());
        let mut start = 0;
        for &d in &dims {
            for i in 0..d {
                for j in 0..d {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((sigma_w[(start + i, start + j)] - expected).abs() <= 1e-10);
                }
            }
            start += d;
        }
    });

    println!(
        "acceptance 8 (whitening and completion traces): PASS — {ROUND_TRIPS} round trips, {TRACE_CHECKS} trace checks, {:.1} s",
        start.elapsed().as_secs_f64()
    );
}
