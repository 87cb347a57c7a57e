//! Every Gibbs block's full conditional must agree with the joint density:
//! moving one block between two values changes `log prior + log likelihood`
//! by exactly the change in the conditional's log density.

use lfda::model::{log_likelihood, log_prior, FunctionalDataset, Hyperparameters, ModelState, SubjectRecord};
use lfda::random::{std_normal, stream, ChainRng};
use lfda::sampler::{
    apply_rescale, coef_conditional, coef_var_conditional, delta_conditional, ln_target_first, ln_target_rest,
    loading_row_conditional, local_conditional, noise_conditional, reg_column_conditional, reg_var_conditional,
    ridge_target, score_conditional, score_var_conditional, GammaConditional, GaussianConditional, SamplerContext,
};
use lfda::splines::{build_basis, BasisConfig, BasisMatrix};
use lfda::Axis;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Fixture {
    data: FunctionalDataset,
    b1: BasisMatrix,
    b2: BasisMatrix,
    hyper: Hyperparameters,
}

fn fixture(rng: &mut ChainRng) -> Fixture {
    let s_grid = vec![0.0, 0.3, 0.6, 1.0];
    let t_grid = vec![0.0, 0.2, 0.5, 0.7, 1.0];
    let b1 = build_basis(&BasisConfig::new(2, vec![], (0.0, 1.0)).unwrap(), &s_grid).unwrap();
    let b2 = build_basis(&BasisConfig::new(2, vec![0.5], (0.0, 1.0)).unwrap(), &t_grid).unwrap();
    let subjects = (0..4)
        .map(|i| {
            let y = DMatrix::from_fn(4, 5, |_, _| std_normal(rng));
            let x = DVector::from_vec(vec![1.0, std_normal(rng)]);
            let mut s = SubjectRecord::complete(format!("s{i}"), y, x);
            if i == 2 {
                s.mask[(1, 3)] = false;
                s.mask[(3, 0)] = false;
            }
            s
        })
        .collect();
    let data = FunctionalDataset::new(subjects, s_grid, t_grid, 2).unwrap();
    let hyper = Hyperparameters {
        q_s: 2,
        q_t: 2,
        nu_s: 4.0,
        nu_t: 6.0,
        r_first: 2.0,
        r_rest: 3.0,
        a_coef: 2.0,
        b_coef: 1.5,
        a_score: 2.5,
        b_score: 0.7,
        a_noise: 1.5,
        b_noise: 0.5,
        ..Default::default()
    };
    Fixture { data, b1, b2, hyper }
}

fn joint(f: &Fixture, st: &ModelState) -> f64 {
    log_prior(st, &f.hyper, &f.data).unwrap().value() + log_likelihood(st, &f.data, &f.b1, &f.b2).unwrap()
}

fn random_state(f: &Fixture, rng: &mut ChainRng) -> ModelState {
    let cov: Vec<_> = f.data.subjects.iter().map(|s| s.x.clone()).collect();
    ModelState::sample_prior(&f.hyper, f.b1.dim(), f.b2.dim(), &cov, rng).unwrap()
}

fn gaussian_ln(c: &GaussianConditional, x: &DVector<f64>) -> f64 {
    -0.5 * (x.transpose() * &c.precision * x)[(0, 0)] + c.linear.dot(x)
}

fn gamma_ln(c: &GammaConditional, g: f64) -> f64 {
    (c.shape - 1.0) * g.ln() - c.rate * g
}

fn assert_close(joint_diff: f64, cond_diff: f64, what: &str) {
    let tol = 1e-8 * (1.0 + joint_diff.abs().max(cond_diff.abs()));
    assert!(
        (joint_diff - cond_diff).abs() < tol,
        "{what}: joint change {joint_diff} vs conditional change {cond_diff}"
    );
}

/// Compare the conditional at two perturbed values of a vector block.
fn check_gaussian(
    f: &Fixture,
    st: &ModelState,
    cond: &GaussianConditional,
    get: impl Fn(&ModelState) -> DVector<f64>,
    set: impl Fn(&mut ModelState, &DVector<f64>),
    what: &str,
    rng: &mut ChainRng,
) {
    let base = get(st);
    let x1 = DVector::from_fn(base.len(), |j, _| base[j] + 0.3 * std_normal(rng));
    let x2 = DVector::from_fn(base.len(), |j, _| base[j] + 0.3 * std_normal(rng));
    let (mut s1, mut s2) = (st.clone(), st.clone());
    set(&mut s1, &x1);
    set(&mut s2, &x2);
    assert_close(joint(f, &s1) - joint(f, &s2), gaussian_ln(cond, &x1) - gaussian_ln(cond, &x2), what);
}

/// Compare the conditional of a precision-type scalar at two values.
fn check_gamma(
    f: &Fixture,
    st: &ModelState,
    cond: &GammaConditional,
    set: impl Fn(&mut ModelState, f64),
    what: &str,
    rng: &mut ChainRng,
) {
    let lo = cond.lower.unwrap_or(0.0);
    let g1 = lo + rng.random_range(0.05..3.0);
    let g2 = lo + rng.random_range(0.05..3.0);
    let (mut s1, mut s2) = (st.clone(), st.clone());
    set(&mut s1, g1);
    set(&mut s2, g2);
    assert_close(joint(f, &s1) - joint(f, &s2), gamma_ln(cond, g1) - gamma_ln(cond, g2), what);
}

#[test]
fn gibbs_blocks_match_joint_density() {
    let mut rng = stream(2024, 0);
    let f = fixture(&mut rng);
    let ctx = SamplerContext::new(&f.data, &f.b1, &f.b2).unwrap();
    for _ in 0..5 {
        let st = random_state(&f, &mut rng);
        let d = st.dims();

        for i in 0..d.n {
            let c = coef_conditional(&st, &ctx, i);
            check_gaussian(
                &f,
                &st,
                &c,
                |s| DVector::from_column_slice(s.coefs[i].as_slice()),
                |s, x| s.coefs[i] = DMatrix::from_column_slice(d.p1, d.p2, x.as_slice()),
                "coefficients",
                &mut rng,
            );
            let c = score_conditional(&st, &ctx, i);
            check_gaussian(
                &f,
                &st,
                &c,
                |s| DVector::from_column_slice(s.scores[i].as_slice()),
                |s, x| s.scores[i] = DMatrix::from_column_slice(d.q1, d.q2, x.as_slice()),
                "scores",
                &mut rng,
            );
        }

        for m in 0..d.p1 {
            let c = loading_row_conditional(&st, Axis::S, m);
            check_gaussian(
                &f,
                &st,
                &c,
                |s| s.load_s.row(m).transpose(),
                |s, x| s.load_s.set_row(m, &x.transpose()),
                "row loadings",
                &mut rng,
            );
        }
        for l in 0..d.p2 {
            let c = loading_row_conditional(&st, Axis::T, l);
            check_gaussian(
                &f,
                &st,
                &c,
                |s| s.load_t.row(l).transpose(),
                |s, x| s.load_t.set_row(l, &x.transpose()),
                "column loadings",
                &mut rng,
            );
        }

        for k in 0..d.q1 {
            for m in 0..d.p1 {
                let c = local_conditional(&st.shrink_s, &st.load_s, f.hyper.nu_s, m, k);
                check_gamma(&f, &st, &c, |s, g| s.shrink_s.local[(m, k)] = g, "row local precision", &mut rng);
            }
        }
        for k in 0..d.q2 {
            for m in 0..d.p2 {
                let c = local_conditional(&st.shrink_t, &st.load_t, f.hyper.nu_t, m, k);
                check_gamma(&f, &st, &c, |s, g| s.shrink_t.local[(m, k)] = g, "column local precision", &mut rng);
            }
        }
        for h in 0..d.q1 {
            let c = delta_conditional(&st.shrink_s, &st.load_s, h);
            let set = |s: &mut ModelState, g: f64| {
                s.shrink_s.delta[h] = g;
                s.shrink_s.recompute_tau();
            };
            check_gamma(&f, &st, &c, set, "row multiplicative factor", &mut rng);
        }
        for h in 0..d.q2 {
            let c = delta_conditional(&st.shrink_t, &st.load_t, h);
            let set = |s: &mut ModelState, g: f64| {
                s.shrink_t.delta[h] = g;
                s.shrink_t.recompute_tau();
            };
            check_gamma(&f, &st, &c, set, "column multiplicative factor", &mut rng);
        }

        for j in 0..d.coef_len() {
            let c = coef_var_conditional(&st, &f.hyper, j);
            check_gamma(&f, &st, &c, |s, g| s.coef_var[j] = 1.0 / g, "coefficient variance", &mut rng);
        }
        for j in 0..d.score_len() {
            let c = score_var_conditional(&st, &ctx, &f.hyper, j);
            check_gamma(&f, &st, &c, |s, g| s.score_var[j] = 1.0 / g, "score variance", &mut rng);
        }
        let c = noise_conditional(&st, &ctx, &f.hyper).unwrap();
        check_gamma(&f, &st, &c, |s, g| s.noise_var = 1.0 / g, "noise variance", &mut rng);
        for l in 0..d.score_len() {
            for j in 0..d.d {
                let c = reg_var_conditional(&st, j, l);
                check_gamma(&f, &st, &c, |s, g| s.reg_var[(j, l)] = 1.0 / g, "regression variance", &mut rng);
            }
            let c = reg_column_conditional(&st, &ctx, l);
            check_gaussian(
                &f,
                &st,
                &c,
                |s| s.reg.column(l).into_owned(),
                |s, x| s.reg.set_column(l, x),
                "regression column",
                &mut rng,
            );
        }
    }
}

#[test]
fn shape_targets_match_joint_density() {
    let mut rng = stream(2025, 0);
    let f = fixture(&mut rng);
    for _ in 0..5 {
        let st = random_state(&f, &mut rng);
        let (a1, a2) = (rng.random_range(0.1..5.0), rng.random_range(0.1..5.0));
        let (mut s1, mut s2) = (st.clone(), st.clone());
        s1.shrink_s.a_first = a1;
        s2.shrink_s.a_first = a2;
        let cond = ln_target_first(a1, f.hyper.r_first, st.shrink_s.delta[0])
            - ln_target_first(a2, f.hyper.r_first, st.shrink_s.delta[0]);
        assert_close(joint(&f, &s1) - joint(&f, &s2), cond, "first shape");

        let (mut s1, mut s2) = (st.clone(), st.clone());
        s1.shrink_t.a_rest = a1;
        s2.shrink_t.a_rest = a2;
        let rest: Vec<f64> = st.shrink_t.delta.iter().skip(1).copied().collect();
        let cond = ln_target_rest(a1, f.hyper.r_rest, &rest) - ln_target_rest(a2, f.hyper.r_rest, &rest);
        assert_close(joint(&f, &s1) - joint(&f, &s2), cond, "remaining shape");
    }
}

#[test]
fn rescaling_target_matches_joint_density() {
    let mut rng = stream(2026, 0);
    let f = fixture(&mut rng);
    let ctx = SamplerContext::new(&f.data, &f.b1, &f.b2).unwrap();
    for _ in 0..5 {
        let st = random_state(&f, &mut rng);
        for (axis, q) in [(Axis::S, 2), (Axis::T, 2)] {
            for col in 0..q {
                let target = ridge_target(&st, &ctx, axis, col);
                let u = rng.random_range(-1.0..1.0);
                let mut moved = st.clone();
                apply_rescale(&mut moved, axis, col, u);
                for (a, b) in moved.coefs.iter().zip(&st.coefs) {
                    assert_eq!(a, b);
                }
                let cond = target.ln_density(u) - target.ln_density(0.0) - target.jacobian * u;
                assert_close(joint(&f, &moved) - joint(&f, &st), cond, "column rescaling");
            }
        }
    }
}
