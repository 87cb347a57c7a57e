use lfda::model::{
    log_likelihood, log_prior, omega, AxisShrinkage, FunctionalDataset, Hyperparameters, LogPrior, ModelState,
    SubjectRecord,
};
use lfda::random::{std_normal, stream, ChainRng};
use lfda::splines::{build_basis, BasisConfig, BasisMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{Continuous, Gamma, Normal};
use statrs::function::gamma::gamma_ur;

struct Tiny {
    data: FunctionalDataset,
    b1: BasisMatrix,
    b2: BasisMatrix,
    hyper: Hyperparameters,
    state: ModelState,
}

fn tiny(rng: &mut ChainRng) -> Tiny {
    let s_grid = vec![0.0, 0.4, 1.0];
    let t_grid = vec![0.0, 0.25, 0.6, 1.0];
    let b1 = build_basis(&BasisConfig::new(1, vec![0.5], (0.0, 1.0)).unwrap(), &s_grid).unwrap();
    let b2 = build_basis(&BasisConfig::new(2, vec![], (0.0, 1.0)).unwrap(), &t_grid).unwrap();
    let subjects: Vec<SubjectRecord> = (0..3)
        .map(|i| {
            let y = DMatrix::from_fn(3, 4, |_, _| std_normal(rng));
            let mut s = SubjectRecord::complete(format!("{i}"), y, DVector::from_vec(vec![1.0, std_normal(rng)]));
            if i == 1 {
                s.mask[(2, 1)] = false;
            }
            s
        })
        .collect();
    let covariates: Vec<_> = subjects.iter().map(|s| s.x.clone()).collect();
    let data = FunctionalDataset::new(subjects, s_grid, t_grid, 2).unwrap();
    let hyper = Hyperparameters {
        a_noise: 2.0,
        b_noise: 1.0,
        ..Hyperparameters::with_ranks(2, 2)
    };
    let mut state = ModelState::sample_prior(&hyper, b1.dim(), b2.dim(), &covariates, rng).unwrap();
    // Moderate loadings keep `Θ − ΛηΓᵀ` free of cancellation in the oracle.
    state.load_s = state.load_s.map(|_| std_normal(rng));
    state.load_t = state.load_t.map(|_| std_normal(rng));
    for i in 0..state.coefs.len() {
        let mut theta = state.factor_part(i);
        for (j, v) in theta.iter_mut().enumerate() {
            *v += state.coef_var[j].sqrt() * std_normal(rng);
        }
        state.coefs[i] = theta;
    }
    Tiny {
        data,
        b1,
        b2,
        hyper,
        state,
    }
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    Normal::new(mean, var.sqrt()).unwrap().ln_pdf(x)
}

fn ln_gamma(x: f64, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, rate).unwrap().ln_pdf(x)
}

fn fitted_by_summation(theta: &DMatrix<f64>, b1: &BasisMatrix, b2: &BasisMatrix, j: usize, k: usize) -> f64 {
    let mut f = 0.0;
    for m in 0..b1.dim() {
        for l in 0..b2.dim() {
            f += theta[(m, l)] * b1.values[(j, m)] * b2.values[(k, l)];
        }
    }
    f
}

#[test]
fn likelihood_matches_scalar_summation() {
    let mut rng = stream(11, 0);
    for _ in 0..20 {
        let t = tiny(&mut rng);
        let mut expected = 0.0;
        for (i, subj) in t.data.subjects.iter().enumerate() {
            for j in 0..3 {
                for k in 0..4 {
                    if subj.mask[(j, k)] {
                        let f = fitted_by_summation(&t.state.coefs[i], &t.b1, &t.b2, j, k);
                        expected += ln_normal(subj.y[(j, k)], f, t.state.noise_var);
                    }
                }
            }
        }
        let got = log_likelihood(&t.state, &t.data, &t.b1, &t.b2).unwrap();
        assert!((got - expected).abs() <= 1e-10 * expected.abs().max(1.0), "{got} vs {expected}");
    }
}

#[test]
fn masking_a_cell_removes_exactly_its_density() {
    let mut rng = stream(12, 0);
    let t = tiny(&mut rng);
    let full = log_likelihood(&t.state, &t.data, &t.b1, &t.b2).unwrap();
    let mut data = t.data.clone();
    data.subjects[2].mask[(1, 3)] = false;
    let reduced = log_likelihood(&t.state, &data, &t.b1, &t.b2).unwrap();
    let f = fitted_by_summation(&t.state.coefs[2], &t.b1, &t.b2, 1, 3);
    let cell = ln_normal(t.data.subjects[2].y[(1, 3)], f, t.state.noise_var);
    assert!((full - reduced - cell).abs() <= 1e-12 * full.abs().max(1.0));
}

#[test]
fn likelihood_edge_cases() {
    let mut rng = stream(13, 0);
    let mut t = tiny(&mut rng);
    for s in &mut t.data.subjects {
        s.mask.fill(false);
    }
    assert_eq!(log_likelihood(&t.state, &t.data, &t.b1, &t.b2).unwrap(), 0.0);

    let f = fitted_by_summation(&t.state.coefs[0], &t.b1, &t.b2, 1, 2);
    t.data.subjects[0].y[(1, 2)] = f;
    t.data.subjects[0].mask[(1, 2)] = true;
    t.state.noise_var = 0.37;
    let got = log_likelihood(&t.state, &t.data, &t.b1, &t.b2).unwrap();
    let expected = -0.5 * (2.0 * std::f64::consts::PI * 0.37).ln();
    assert!((got - expected).abs() <= 1e-12, "{got} vs {expected}");
}

fn axis_oracle(sh: &AxisShrinkage, load: &DMatrix<f64>, nu: f64, hyper: &Hyperparameters, terms: &mut Vec<f64>) {
    terms.push(ln_gamma(sh.a_first, hyper.r_first, 1.0));
    terms.push(ln_gamma(sh.a_rest, hyper.r_rest, 1.0));
    terms.push(ln_gamma(sh.delta[0], sh.a_first, 1.0));
    for k in 1..sh.delta.len() {
        terms.push(ln_gamma(sh.delta[k], sh.a_rest, 1.0));
        terms.push(-gamma_ur(sh.a_rest, 1.0).ln());
    }
    let mut tau = 1.0;
    for k in 0..load.ncols() {
        tau *= sh.delta[k];
        for m in 0..load.nrows() {
            let rho = sh.local[(m, k)];
            terms.push(ln_gamma(rho, nu / 2.0, nu / 2.0));
            terms.push(ln_normal(load[(m, k)], 0.0, 1.0 / (rho * tau)));
        }
    }
}

/// Every factor of the joint prior, evaluated separately.
fn prior_terms(t: &Tiny) -> Vec<f64> {
    let (st, h) = (&t.state, &t.hyper);
    let mut terms = Vec::new();
    axis_oracle(&st.shrink_s, &st.load_s, h.nu_s, h, &mut terms);
    axis_oracle(&st.shrink_t, &st.load_t, h.nu_t, h, &mut terms);
    terms.extend(st.coef_var.iter().map(|v| ln_gamma(1.0 / v, h.a_coef, h.b_coef)));
    terms.extend(st.score_var.iter().map(|v| ln_gamma(1.0 / v, h.a_score, h.b_score)));
    terms.push(ln_gamma(1.0 / st.noise_var, h.a_noise, h.b_noise));
    for j in 0..st.reg.nrows() {
        for l in 0..st.reg.ncols() {
            terms.push(ln_gamma(1.0 / st.reg_var[(j, l)], 0.5, 0.5));
            terms.push(ln_normal(st.reg[(j, l)], 0.0, st.reg_var[(j, l)]));
        }
    }
    let (q1, q2) = (st.load_s.ncols(), st.load_t.ncols());
    let (p1, p2) = (st.load_s.nrows(), st.load_t.nrows());
    for (i, subj) in t.data.subjects.iter().enumerate() {
        for b in 0..q2 {
            for a in 0..q1 {
                let c = a + q1 * b;
                let mean: f64 = (0..subj.x.len()).map(|j| subj.x[j] * st.reg[(j, c)]).sum();
                terms.push(ln_normal(st.scores[i][(a, b)], mean, st.score_var[c]));
            }
        }
        for l in 0..p2 {
            for m in 0..p1 {
                let mut f = 0.0;
                for b in 0..q2 {
                    for a in 0..q1 {
                        f += st.load_s[(m, a)] * st.scores[i][(a, b)] * st.load_t[(l, b)];
                    }
                }
                terms.push(ln_normal(st.coefs[i][(m, l)], f, st.coef_var[m + p1 * l]));
            }
        }
    }
    terms
}

#[test]
fn prior_matches_per_factor_oracle() {
    let mut rng = stream(14, 0);
    for _ in 0..20 {
        let t = tiny(&mut rng);
        let got = log_prior(&t.state, &t.hyper, &t.data).unwrap().value();
        let terms = prior_terms(&t);
        let expected: f64 = terms.iter().sum();
        let magnitude: f64 = terms.iter().map(|v| v.abs()).sum();
        assert!((got - expected).abs() <= 1e-10 * magnitude.max(1.0), "{got} vs {expected}");
    }
}

#[test]
fn prior_in_noise_variance_alone_is_a_gamma_density() {
    let mut rng = stream(15, 0);
    let mut t = tiny(&mut rng);
    let (a, b) = (t.hyper.a_noise, t.hyper.b_noise);
    let textbook = |x: f64| a * b.ln() - statrs::function::gamma::ln_gamma(a) + (a - 1.0) * x.ln() - b * x;
    t.state.noise_var = 0.5;
    let base = log_prior(&t.state, &t.hyper, &t.data).unwrap().value();
    for v in [0.1, 0.8, 3.0] {
        t.state.noise_var = v;
        let lp = log_prior(&t.state, &t.hyper, &t.data).unwrap().value();
        let expected = textbook(1.0 / v) - textbook(2.0);
        assert!((lp - base - expected).abs() <= 1e-12 * base.abs().max(1.0));
    }
}

#[test]
fn truncated_factor_below_one_leaves_support() {
    let mut rng = stream(16, 0);
    let mut t = tiny(&mut rng);
    t.state.shrink_t.delta[1] = 0.5;
    t.state.shrink_t.recompute_tau();
    assert_eq!(log_prior(&t.state, &t.hyper, &t.data).unwrap(), LogPrior::OutsideSupport);
    assert_eq!(LogPrior::OutsideSupport.value(), f64::NEG_INFINITY);
}

#[test]
fn omega_matches_monte_carlo_covariance() {
    let mut rng = stream(17, 0);
    let hyper = Hyperparameters::with_ranks(2, 2);
    let mut state = ModelState::sample_prior(&hyper, 3, 3, &[], &mut rng).unwrap();
    state.load_s = DMatrix::from_fn(3, 2, |_, _| std_normal(&mut rng));
    state.load_t = DMatrix::from_fn(3, 2, |_, _| std_normal(&mut rng));
    state.score_var = DVector::from_fn(4, |_, _| rng.random_range(0.5..2.0));
    state.coef_var = DVector::from_fn(9, |_, _| rng.random_range(0.1..0.5));
    let om = omega(&state);

    let n = 1_000_000;
    let mut acc = DMatrix::<f64>::zeros(9, 9);
    for _ in 0..n {
        let eta = DMatrix::from_fn(2, 2, |a, b| state.score_var[a + 2 * b].sqrt() * std_normal(&mut rng));
        let mut theta = &state.load_s * eta * state.load_t.transpose();
        for (j, v) in theta.iter_mut().enumerate() {
            *v += state.coef_var[j].sqrt() * std_normal(&mut rng);
        }
        let v = DVector::from_column_slice(theta.as_slice());
        acc.syger(1.0, &v, &v, 1.0);
    }
    let sample = acc / n as f64;
    for i in 0..9 {
        for j in 0..=i {
            let se = ((om[(i, i)] * om[(j, j)] + om[(i, j)].powi(2)) / n as f64).sqrt();
            let z = (sample[(i, j)] - om[(i, j)]) / se;
            assert!(z.abs() < 3.0, "entry ({i},{j}): z = {z}");
        }
    }
}

#[test]
fn prior_tau_is_ordered_and_stochastically_increasing() {
    let mut rng = stream(18, 0);
    let q = 6;
    let n = 10_000;
    let mut means = vec![0.0; q];
    let mut violations = 0;
    for _ in 0..n {
        let sh = AxisShrinkage::sample_prior(4, q, 5.0, 1.0, 2.0, &mut rng);
        if sh.tau.as_slice().windows(2).any(|w| !(w[0] < w[1])) {
            violations += 1;
        }
        for k in 0..q {
            means[k] += sh.tau[k] / n as f64;
        }
    }
    assert_eq!(violations, 0);
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
}
