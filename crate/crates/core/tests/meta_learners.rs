use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use uplift_core::dataset::{generate_synthetic, naive_ate, Dgp};
use uplift_core::eval::{pehe, pehe_values};
use uplift_core::learners::{fit_weighted_ridge, ForestParams};
use uplift_core::meta::{
    ate_from_cate, fit_r_effect, fit_s, fit_t, fit_x, fit_x_arm, ipw_ate, predict_cate, recommend,
    top_k_targeting, CateComponents, CateConfig, CateModel, Method, PropensityModel,
};
use uplift_core::{ExperimentFrame, LearnerModel, LearnerSpec, Matrix, OutcomeKind};

fn frame(x: Vec<[f64; 2]>, w: Vec<usize>, y: Vec<f64>) -> ExperimentFrame {
    ExperimentFrame::from_parts(
        Matrix::from_rows(&x).unwrap(),
        w,
        y,
        OutcomeKind::Continuous,
    )
    .unwrap()
}

/// `y = x·β + ε` with assignment independent of everything.
fn null_frame(n: usize, seed: u64) -> ExperimentFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            [
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ]
        })
        .collect();
    let w: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let y = x
        .iter()
        .map(|r| {
            let e: f64 = StandardNormal.sample(&mut rng);
            0.7 * r[0] - 0.3 * r[1] + 0.5 * e
        })
        .collect();
    frame(x, w, y)
}

#[test]
fn s_ridge_effect_is_constant() {
    let (f, _) = generate_synthetic(Dgp::HeterogeneousLinear, 300, 3, 1).unwrap();
    let m = fit_s(&f, &LearnerSpec::ridge(1e-3), 0).unwrap();
    let tau = predict_cate(&m, f.features()).unwrap().column(0);
    for v in &tau {
        assert!((v - tau[0]).abs() < 1e-12);
    }
}

#[test]
fn constant_features_recover_mean_difference() {
    let x = vec![[1.0, 2.0]; 6];
    let w = vec![1, 1, 1, 0, 0, 0];
    let y = vec![5.0, 5.0, 5.0, 2.0, 2.0, 2.0];
    let f = frame(x, w, y);
    for m in [
        fit_s(&f, &LearnerSpec::ridge(0.0), 0),
        fit_t(&f, &LearnerSpec::ridge(0.0), 0),
    ] {
        let tau = predict_cate(&m.unwrap(), f.features()).unwrap();
        for v in tau.as_slice() {
            assert!((v - 3.0).abs() < 1e-10, "{v}");
        }
    }
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn null_effect_is_near_zero() {
    // Monte Carlo over 40 independent datasets: the mean estimate stays
    // within three standard errors of zero
    for method in [Method::S, Method::T] {
        let est: Vec<f64> = (0..40)
            .map(|r| {
                let f = null_frame(400, 100 + r);
                let m = uplift_core::fit_cate(
                    &f,
                    &CateConfig::new(method, LearnerSpec::ridge(1e-3)),
                    r,
                )
                .unwrap();
                let tau = predict_cate(&m, f.features()).unwrap().column(0);
                tau.iter().sum::<f64>() / tau.len() as f64
            })
            .collect();
        let (mean, se) = mean_and_se(&est);
        assert!(mean.abs() < 3.0 * se, "{method}: mean {mean}, se {se}");
    }
}

#[test]
fn every_learner_beats_constant_baseline() {
    let (f, truth) = generate_synthetic(Dgp::HeterogeneousLinear, 2000, 4, 7).unwrap();
    let ate = naive_ate(&f, 1).unwrap();
    let baseline = pehe(&vec![ate; f.n()], &truth, 1).unwrap();
    for method in [Method::S, Method::T, Method::X, Method::R] {
        let m = uplift_core::fit_cate(&f, &CateConfig::new(method, LearnerSpec::ridge(1e-3)), 7)
            .unwrap();
        let p = pehe(
            &predict_cate(&m, f.features()).unwrap().column(0),
            &truth,
            1,
        )
        .unwrap();
        // S with a linear base cannot express heterogeneity and sits at the baseline
        if method == Method::S {
            assert!(p <= baseline + 1e-2, "{method}: {p} vs {baseline}");
        } else {
            assert!(p < 0.5 * baseline, "{method}: {p} vs {baseline}");
        }
    }
}

#[test]
fn zero_prediction_pehe_is_root_mean_square_of_truth() {
    let (f, truth) = generate_synthetic(Dgp::HeterogeneousLinear, 500, 3, 2).unwrap();
    let tau = truth.arm_tau(1);
    let direct = (tau.iter().map(|t| t * t).sum::<f64>() / tau.len() as f64).sqrt();
    assert_eq!(pehe(&vec![0.0; f.n()], &truth, 1).unwrap(), direct);
}

fn x_pair() -> (ExperimentFrame, LearnerModel, LearnerModel) {
    let (f, _) = generate_synthetic(Dgp::HeterogeneousLinear, 200, 2, 3).unwrap();
    let spec = LearnerSpec::ridge(1e-3);
    let t = fit_t(&f, &spec, 0).unwrap();
    let CateComponents::T { control, arms } = t.components else {
        unreachable!()
    };
    (f, control, arms[0].clone())
}

#[test]
fn x_learner_endpoints_and_midpoint() {
    let (f, mu0, mu1) = x_pair();
    let spec = LearnerSpec::ridge(1e-3);
    let at = |g: f64| {
        fit_x_arm(
            &f,
            &mu0,
            &mu1,
            &spec,
            PropensityModel::Constant { value: g },
            5,
        )
        .unwrap()
    };
    let (zero, one, half) = (at(0.0), at(1.0), at(0.5));
    for row in f.features().rows_iter() {
        let t0 = zero.tau0.predict_row(row);
        let t1 = zero.tau1.predict_row(row);
        assert_eq!(zero.predict_row(row), t1);
        assert_eq!(one.predict_row(row), t0);
        assert_eq!(half.predict_row(row), 0.5 * t0 + 0.5 * t1);
    }
}

#[test]
fn x_learner_is_pointwise_convex_combination() {
    let (f, _) = generate_synthetic(Dgp::Confounded, 400, 3, 9).unwrap();
    let m = fit_x(&f, &LearnerSpec::ridge(1e-3), 9).unwrap();
    let CateComponents::X { arms } = &m.components else {
        unreachable!()
    };
    let tau = predict_cate(&m, f.features()).unwrap().column(0);
    for (row, t) in f.features().rows_iter().zip(tau) {
        let a = arms[0].tau0.predict_row(row);
        let b = arms[0].tau1.predict_row(row);
        assert!(a.min(b) - 1e-12 <= t && t <= a.max(b) + 1e-12);
    }
}

#[test]
fn x_learner_with_exact_stage_one_recovers_constant_effect() {
    // y = 1 + 2·x1 − x2 + 3·w without noise
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<[f64; 2]> = (0..50)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let w: Vec<usize> = (0..50).map(|i| i % 2).collect();
    let y = x
        .iter()
        .zip(&w)
        .map(|(r, &wi)| 1.0 + 2.0 * r[0] - r[1] + 3.0 * wi as f64)
        .collect();
    let f = frame(x, w, y);
    let mu0 = LearnerModel::linear(vec![2.0, -1.0], 1.0);
    let mu1 = LearnerModel::linear(vec![2.0, -1.0], 4.0);
    let arm = fit_x_arm(
        &f,
        &mu0,
        &mu1,
        &LearnerSpec::ridge(1e-3),
        PropensityModel::Constant { value: 0.3 },
        0,
    )
    .unwrap();
    for row in f.features().rows_iter() {
        assert!((arm.predict_row(row) - 3.0).abs() < 1e-10);
    }
}

#[test]
fn r_effect_literal_instance() {
    let x = Matrix::column_vector(&[1.0, 1.0]);
    let spec = LearnerSpec::ridge(0.0);
    // ψ = (1 − 0)/0.5 = 2 and (0 − 0)/(−0.5) = 0, equal weights 0.25
    let m = fit_r_effect(
        &x,
        &[1.0, 0.0],
        &[1.0, 0.0],
        &[0.0, 0.0],
        &[0.5, 0.5],
        &spec,
        0,
    )
    .unwrap();
    assert!((m.predict_row(&[1.0]) - 1.0).abs() < 1e-12);
    // control outcome −1 gives ψ = {2, 2}
    let m = fit_r_effect(
        &x,
        &[1.0, -1.0],
        &[1.0, 0.0],
        &[0.0, 0.0],
        &[0.5, 0.5],
        &spec,
        0,
    )
    .unwrap();
    assert!((m.predict_row(&[1.0]) - 2.0).abs() < 1e-12);
}

#[test]
fn r_effect_zero_residuals() {
    let x = Matrix::column_vector(&[0.1, 0.5, 0.9, 0.3]);
    let y = [1.0, 2.0, 3.0, 4.0];
    let m = fit_r_effect(
        &x,
        &y,
        &[1.0, 0.0, 1.0, 0.0],
        &y,
        &[0.3, 0.6, 0.2, 0.9],
        &LearnerSpec::ridge(0.1),
        0,
    )
    .unwrap();
    for v in [0.0, 0.5, 1.0] {
        assert!(m.predict_row(&[v]).abs() < 1e-12);
    }
}

/// Grid search of `Σω(ψ − wx − b)² + λw²`, refined around the best cell.
fn grid_minimize(x: &[f64], psi: &[f64], omega: &[f64], lambda: f64) -> (f64, f64) {
    let obj = |w: f64, b: f64| {
        x.iter()
            .zip(psi)
            .zip(omega)
            .map(|((xi, p), o)| o * (p - w * xi - b).powi(2))
            .sum::<f64>()
            + lambda * w * w
    };
    let (mut cw, mut cb, mut half) = (0.0, 0.0, 50.0);
    for _ in 0..12 {
        let step = half / 20.0;
        let mut best = (f64::INFINITY, cw, cb);
        for i in -20..=20 {
            for j in -20..=20 {
                let (w, b) = (cw + i as f64 * step, cb + j as f64 * step);
                let v = obj(w, b);
                if v < best.0 {
                    best = (v, w, b);
                }
            }
        }
        (cw, cb) = (best.1, best.2);
        half = step * 2.0;
    }
    (cw, cb)
}

#[test]
fn weighted_ridge_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..3).map(|i| f64::from(u8::from(i != 1))).collect();
        let e: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..0.95)).collect();
        let y: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m_hat: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lambda = rng.random_range(0.01..1.0);
        let psi: Vec<f64> = (0..3).map(|i| (y[i] - m_hat[i]) / (w[i] - e[i])).collect();
        let omega: Vec<f64> = (0..3).map(|i| (w[i] - e[i]).powi(2)).collect();
        let (gw, gb) = grid_minimize(&x, &psi, &omega, lambda);
        let xm = Matrix::column_vector(&x);
        let fitted = fit_r_effect(&xm, &y, &w, &m_hat, &e, &LearnerSpec::ridge(lambda), 0).unwrap();
        let direct = fit_weighted_ridge(&xm, &psi, Some(&omega), lambda).unwrap();
        for v in [-1.0, 0.0, 1.0] {
            let grid = gw * v + gb;
            assert!(
                (fitted.predict_row(&[v]) - grid).abs() < 1e-3,
                "{} vs {grid}",
                fitted.predict_row(&[v])
            );
            assert_eq!(fitted.predict_row(&[v]), direct.predict_row(&[v]));
        }
    }
}

#[test]
fn r_weights_positive_and_finite_under_extreme_assignment() {
    // assignment almost determined by x1, so fitted propensities hit the clip
    let (f, _) = generate_synthetic(Dgp::Confounded, 300, 2, 5).unwrap();
    let mut x = f.features().clone();
    x.map_column(0, |v| 40.0 * v);
    let f = ExperimentFrame::new(
        x,
        f.treatment().to_vec(),
        f.outcome().to_vec(),
        None,
        OutcomeKind::Continuous,
        f.feature_names().to_vec(),
        f.arm_labels().to_vec(),
    )
    .unwrap();
    let m = uplift_core::meta::fit_r(&f, &LearnerSpec::ridge(1e-3), 1).unwrap();
    let tau = predict_cate(&m, f.features()).unwrap();
    assert!(tau.all_finite());
}

#[test]
fn multi_arm_shapes_and_dimension_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 300;
    let x: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let w: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let y = x
        .iter()
        .zip(&w)
        .map(|(r, &wi)| r[0] + [0.0, 1.0, -1.0][wi] + 0.1 * rng.random_range(-1.0..1.0))
        .collect();
    let f = ExperimentFrame::new(
        Matrix::from_rows(&x).unwrap(),
        w,
        y,
        None,
        OutcomeKind::Continuous,
        vec!["a".into(), "b".into()],
        vec!["ctl".into(), "A".into(), "B".into()],
    )
    .unwrap();
    for method in [Method::S, Method::T, Method::X, Method::R] {
        let m = uplift_core::fit_cate(&f, &CateConfig::new(method, LearnerSpec::ridge(1e-3)), 0)
            .unwrap();
        let tau = predict_cate(&m, f.features()).unwrap();
        assert_eq!((tau.nrows(), tau.ncols()), (n, 2));
        let mean = |k: usize| tau.column(k).iter().sum::<f64>() / n as f64;
        assert!(
            (mean(0) - 1.0).abs() < 0.05 && (mean(1) + 1.0).abs() < 0.05,
            "{method}"
        );
        assert!(recommend(&m, f.features(), 0.0)
            .unwrap()
            .iter()
            .all(|&a| a == 1));
        assert!(predict_cate(&m, &Matrix::zeros(1, 3)).is_err());
    }
}

fn hand_model(effects: &[f64]) -> CateModel {
    let mut labels = vec!["0".to_owned()];
    labels.extend((1..=effects.len()).map(|k| k.to_string()));
    CateModel {
        config: CateConfig::new(Method::R, LearnerSpec::ridge(0.0)),
        seed: 0,
        n_features: 1,
        arm_labels: labels,
        components: CateComponents::R {
            effects: effects
                .iter()
                .map(|&c| LearnerModel::linear(vec![0.0], c))
                .collect(),
        },
    }
}

#[test]
fn recommendation_rules_on_hand_built_models() {
    let x = Matrix::column_vector(&[0.0, 1.0]);
    assert_eq!(
        recommend(&hand_model(&[-0.2]), &x, 0.0).unwrap(),
        vec![0, 0]
    );
    assert_eq!(
        recommend(&hand_model(&[0.3, 0.3]), &x, 0.0).unwrap(),
        vec![1, 1]
    );
    assert_eq!(
        recommend(&hand_model(&[0.1, 0.4]), &x, 0.0).unwrap(),
        vec![2, 2]
    );
    assert_eq!(
        recommend(&hand_model(&[0.1, 0.4]), &x, 0.5).unwrap(),
        vec![0, 0]
    );
}

#[test]
fn targeting_ranks_by_best_arm() {
    let (f, _) = generate_synthetic(Dgp::HeterogeneousLinear, 100, 2, 3).unwrap();
    let m = fit_t(&f, &LearnerSpec::ridge(1e-3), 0).unwrap();
    let all = top_k_targeting(&m, &f, 1.0).unwrap();
    assert_eq!(all.len(), 100);
    let tau = predict_cate(&m, f.features()).unwrap().column(0);
    for pair in all.windows(2) {
        assert!(tau[pair[0]] >= tau[pair[1]]);
    }
    assert_eq!(top_k_targeting(&m, &f, 0.3).unwrap(), all[..30].to_vec());
}

#[test]
fn fitters_are_deterministic() {
    let (f, _) = generate_synthetic(Dgp::HeterogeneousLinear, 300, 3, 8).unwrap();
    let forest = LearnerSpec::forest(ForestParams {
        n_trees: 8,
        ..ForestParams::default()
    });
    for base in [LearnerSpec::ridge(1e-3), forest] {
        for method in [Method::S, Method::T, Method::X, Method::R] {
            let config = CateConfig::new(method, base.clone());
            let run = |threads| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .unwrap()
                    .install(|| {
                        serde_json::to_string(&uplift_core::fit_cate(&f, &config, 3).unwrap())
                            .unwrap()
                    })
            };
            assert_eq!(run(1), run(4), "{method}");
        }
    }
}

#[test]
fn model_json_round_trip() {
    let (f, _) = generate_synthetic(Dgp::BinaryLogistic, 400, 2, 1).unwrap();
    for method in [
        Method::S,
        Method::T,
        Method::X,
        Method::R,
        Method::UpliftForest,
    ] {
        let mut config = CateConfig::new(method, LearnerSpec::ridge(1e-3));
        config.forest.n_trees = 5;
        let m = uplift_core::fit_cate(&f, &config, 2).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: CateModel = serde_json::from_str(&s).unwrap();
        assert_eq!(
            predict_cate(&back, f.features()).unwrap(),
            predict_cate(&m, f.features()).unwrap()
        );
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
    }
}

#[test]
fn binary_outcomes_give_risk_differences() {
    let (f, _) = generate_synthetic(Dgp::BinaryLogistic, 800, 2, 4).unwrap();
    for method in [Method::S, Method::T] {
        let m = uplift_core::fit_cate(&f, &CateConfig::new(method, LearnerSpec::ridge(1e-3)), 0)
            .unwrap();
        let tau = predict_cate(&m, f.features()).unwrap();
        assert!(tau.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    let (c, _) = generate_synthetic(Dgp::Linear, 100, 2, 4).unwrap();
    assert!(
        uplift_core::fit_cate(&c, &CateConfig::new(Method::T, LearnerSpec::logistic()), 0).is_err()
    );
}

#[test]
fn cate_mean_report_is_reproducible_and_contains_estimate() {
    let (f, _) = generate_synthetic(Dgp::Linear, 400, 2, 10).unwrap();
    let m = fit_t(&f, &LearnerSpec::ridge(1e-3), 0).unwrap();
    let a = ate_from_cate(&m, &f, 50, 99).unwrap();
    assert_eq!(a, ate_from_cate(&m, &f, 50, 99).unwrap());
    let r = &a[0];
    assert!(r.ci_low <= r.estimate && r.estimate <= r.ci_high);
    assert!((r.estimate - 0.5).abs() < 0.2);
    assert!(ate_from_cate(&m, &f, 5, 0).is_err());
}

#[test]
fn constant_effect_collapses_interval() {
    // noiseless y = x1 − x2 + 2·w: every refit recovers the effect exactly
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x: Vec<[f64; 2]> = (0..200)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let w: Vec<usize> = (0..200).map(|i| i % 2).collect();
    let y = x
        .iter()
        .zip(&w)
        .map(|(r, &wi)| r[0] - r[1] + 2.0 * wi as f64)
        .collect();
    let f = frame(x, w, y);
    let m = fit_s(&f, &LearnerSpec::ridge(0.0), 0).unwrap();
    let r = &ate_from_cate(&m, &f, 20, 0).unwrap()[0];
    assert!((r.estimate - 2.0).abs() < 1e-9);
    assert!(r.ci_high - r.ci_low < 1e-9);
}

#[test]
fn ipw_reduces_confounding_bias() {
    let (f, truth) = generate_synthetic(Dgp::Confounded, 3000, 3, 31).unwrap();
    let tau = truth.arm_tau(1)[0];
    let naive = naive_ate(&f, 1).unwrap();
    let ipw = ipw_ate(&f, 1, 0.01, 20, 0).unwrap();
    assert!(
        (ipw.estimate - tau).abs() < (naive - tau).abs(),
        "ipw {} naive {naive}",
        ipw.estimate
    );
    assert!(pehe_values(&[ipw.estimate], &[tau]).unwrap() < 0.15);
}
