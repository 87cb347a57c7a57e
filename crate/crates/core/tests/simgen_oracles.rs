use lfda::model::{FunctionalDataset, SubjectRecord};
use lfda::random::stream;
use lfda::simgen::{
    empirical_estimates, generate_with_smoothing, ground_truth, run_experiment, true_kernel, Case, ScenarioSpec,
};
use lfda::splines::BasisConfig;
use nalgebra::{DMatrix, DVector};

fn linear() -> (BasisConfig, BasisConfig) {
    let b = BasisConfig::new(1, vec![], (0.0, 1.0)).unwrap();
    (b.clone(), b)
}

fn tiny_spec(case: Case, n: usize) -> ScenarioSpec {
    let mut spec = ScenarioSpec::new(case, n);
    spec.n_s = 2;
    spec.n_t = 2;
    spec
}

#[test]
fn generated_covariance_matches_kernel_plus_noise() {
    let spec = tiny_spec(Case::Three, 100_000);
    let (bs, bt) = linear();
    let (data, truth) = generate_with_smoothing(&spec, (&bs, &bt), &mut stream(41, 0)).unwrap();
    let (s, t) = (spec.s_grid(), spec.t_grid());
    let kernel = DMatrix::from_fn(4, 4, |a, b| true_kernel(&spec, s[a % 2], t[a / 2], s[b % 2], t[b / 2]).unwrap());
    assert!((&truth.kernel.gram - &kernel).amax() <= 1e-12);
    let expected = kernel + DMatrix::identity(4, 4) * spec.noise_var;
    let (mean, cov) = empirical_estimates(&data).unwrap();
    let n = data.n_subjects() as f64;
    for a in 0..4 {
        let se_mean = (expected[(a, a)] / n).sqrt();
        let z = (mean[(a % 2, a / 2)] - truth.mean[(a % 2, a / 2)]) / se_mean;
        assert!(z.abs() < 3.0, "mean cell {a}: z = {z}");
        for b in 0..=a {
            let se = ((expected[(a, a)] * expected[(b, b)] + expected[(a, b)].powi(2)) / n).sqrt();
            let z = (cov[(a, b)] - expected[(a, b)]) / se;
            assert!(z.abs() < 3.0, "covariance ({a},{b}): z = {z}");
        }
    }
}

#[test]
fn generated_gram_is_symmetric_psd() {
    for case in [Case::One, Case::Two, Case::Three] {
        let (bs, bt) = linear();
        let truth = ground_truth(&ScenarioSpec::new(case, 2), (&bs, &bt)).unwrap();
        let g = &truth.kernel.gram;
        assert_eq!(g, &g.transpose());
        assert!(lfda::posterior::relative_min_eigenvalue(g) >= -1e-8, "case {case:?}");
    }
}

#[test]
fn noise_fields_are_independent() {
    let (bs, bt) = linear();
    let noisy = tiny_spec(Case::One, 20_000);
    let mut clean = noisy.clone();
    clean.noise_var = 0.0;
    let (a, _) = generate_with_smoothing(&noisy, (&bs, &bt), &mut stream(42, 0)).unwrap();
    let (b, _) = generate_with_smoothing(&clean, (&bs, &bt), &mut stream(42, 0)).unwrap();
    let noise: Vec<DVector<f64>> = a
        .subjects
        .iter()
        .zip(&b.subjects)
        .map(|(x, y)| DVector::from_column_slice((&x.y - &y.y).as_slice()))
        .collect();
    let n = noise.len() as f64;
    let bound = 4.0 / n.sqrt();
    let corr = |u: &dyn Fn(usize) -> f64, v: &dyn Fn(usize) -> f64, m: usize| {
        let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
        for i in 0..m {
            uv += u(i) * v(i);
            uu += u(i) * u(i);
            vv += v(i) * v(i);
        }
        uv / (uu * vv).sqrt()
    };
    for c in 0..4 {
        let var = noise.iter().map(|e| e[c] * e[c]).sum::<f64>() / n;
        let se = noisy.noise_var * (2.0 / n).sqrt();
        assert!((var - noisy.noise_var).abs() < 4.0 * se, "cell {c}: variance {var}");
        for c2 in 0..c {
            let r = corr(&|i| noise[i][c], &|i| noise[i][c2], noise.len());
            assert!(r.abs() < bound, "cells {c},{c2}: r = {r}");
        }
        let r = corr(&|i| noise[i][c], &|i| noise[i + 1][c], noise.len() - 1);
        assert!(r.abs() < bound, "consecutive subjects, cell {c}: r = {r}");
    }
}

#[test]
fn empirical_mean_is_unbiased() {
    let spec = tiny_spec(Case::Three, 3);
    let (bs, bt) = linear();
    let mut rng = stream(43, 0);
    let reps = 10_000;
    let mut sum = DMatrix::<f64>::zeros(2, 2);
    let mut sum_sq = DMatrix::<f64>::zeros(2, 2);
    let mut truth_mean = DMatrix::zeros(2, 2);
    for _ in 0..reps {
        let (data, truth) = generate_with_smoothing(&spec, (&bs, &bt), &mut rng).unwrap();
        let (mean, _) = empirical_estimates(&data).unwrap();
        sum += &mean;
        sum_sq += mean.component_mul(&mean);
        truth_mean = truth.mean;
    }
    let r = reps as f64;
    for c in 0..4 {
        let avg = sum[c] / r;
        let se = ((sum_sq[c] / r - avg * avg) / (r - 1.0)).sqrt();
        assert!((avg - truth_mean[c]).abs() < 4.0 * se, "cell {c}: {avg} vs {}", truth_mean[c]);
    }
}

#[test]
fn empirical_covariance_of_three_subjects() {
    let ys = [[1.0, 2.0, 0.0, -1.0], [3.0, 0.0, 1.0, 1.0], [2.0, 1.0, 2.0, 3.0]];
    let subjects = ys
        .iter()
        .enumerate()
        .map(|(i, y)| SubjectRecord::complete(format!("{i}"), DMatrix::from_column_slice(2, 2, y), DVector::from_element(1, 1.0)))
        .collect();
    let data = FunctionalDataset::new(subjects, vec![0.0, 1.0], vec![0.0, 1.0], 1).unwrap();
    let (mean, cov) = empirical_estimates(&data).unwrap();
    let mu = [2.0, 1.0, 1.0, 1.0];
    for c in 0..4 {
        assert!((mean[c] - mu[c]).abs() < 1e-15);
    }
    for a in 0..4 {
        for b in 0..4 {
            let expected = ys.iter().map(|y| (y[a] - mu[a]) * (y[b] - mu[b])).sum::<f64>() / 2.0;
            assert!((cov[(a, b)] - expected).abs() < 1e-14, "({a},{b})");
        }
    }
    let same: Vec<_> = (0..4)
        .map(|i| SubjectRecord::complete(format!("{i}"), DMatrix::from_column_slice(2, 2, &ys[0]), DVector::from_element(1, 1.0)))
        .collect();
    let data = FunctionalDataset::new(same, vec![0.0, 1.0], vec![0.0, 1.0], 1).unwrap();
    assert_eq!(empirical_estimates(&data).unwrap().1, DMatrix::zeros(4, 4));
}

#[test]
fn separable_marginal_is_scaled_longitudinal_kernel() {
    for case in [Case::One, Case::Two] {
        let spec = ScenarioSpec::new(case, 2);
        let (bs, bt) = linear();
        let truth = ground_truth(&spec, (&bs, &bt)).unwrap();
        let (s, t) = (spec.s_grid(), spec.t_grid());
        let k = |j: usize, kk: usize, j2: usize, k2: usize| true_kernel(&spec, s[j], t[kk], s[j2], t[k2]).unwrap();
        // K_S(s, s') * mean_k K_T(t_k, t_k), written through a reference s point.
        let a = s.len() / 2;
        let ref_diag = (0..t.len()).map(|kk| k(a, kk, a, kk)).sum::<f64>() / t.len() as f64;
        for j in 0..s.len() {
            for j2 in 0..s.len() {
                let expected = k(j, 0, j2, 0) * ref_diag / k(a, 0, a, 0);
                let got = truth.marginal_s[(j, j2)];
                assert!((got - expected).abs() <= 1e-10 * expected.abs().max(1e-3), "case {case:?} ({j},{j2})");
            }
        }
    }
}

#[test]
fn single_replication_quantiles_collapse() {
    let report = run_experiment(&ScenarioSpec::new(Case::Two, 10), None, 1, 7).unwrap();
    assert!(!report.rows.is_empty());
    for row in &report.rows {
        assert_eq!(row.median, row.q10);
        assert_eq!(row.median, row.q90);
    }
}

#[test]
fn empirical_covariance_error_on_case_three() {
    let report = run_experiment(&ScenarioSpec::new(Case::Three, 30), None, 50, 2024).unwrap();
    let k = report.row("K", "empirical").unwrap();
    assert!(k.median > 0.0335 && k.median < 0.134, "median {}", k.median);
}
