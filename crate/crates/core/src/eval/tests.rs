use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::autodiff::Tensor;
use crate::jacobian::JacobianPair;
use crate::model::{ArchConfig, DimensionPlan, ModelBundle};
use crate::objective::ProbeKind;
use crate::train::ExperimentConfig;
use crate::world::{forge_world, NonlinearityConfig, WorldSpec};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// `x·w + b + noise·ε`, row-major.
fn affine(x: &Tensor, w: &[f64], out: usize, b: f64, noise: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let p = x.cols();
    let mut data = Vec::with_capacity(x.rows() * out);
    for i in 0..x.rows() {
        for j in 0..out {
            let dot: f64 = (0..p).map(|k| x.get(i, k) * w[k * out + j]).sum();
            let e: f64 = rng.sample(StandardNormal);
            data.push(dot + b + noise * e);
        }
    }
    Tensor::matrix(x.rows(), out, data).unwrap()
}

fn small_world() -> WorldSpec {
    let plan = DimensionPlan::from_blocks(8, 1, 1, 1, 2).unwrap();
    forge_world(plan, 0.0, NonlinearityConfig::default(), 5).unwrap()
}

#[test]
fn identical_data_scores_one() {
    let x = gaussian(400, 3, &mut ChaCha8Rng::seed_from_u64(0));
    let fit = fit_linear_r2(&x, &x, LINEAR_RIDGE, 0).unwrap();
    assert!((fit.r2 - 1.0).abs() < 1e-6, "{}", fit.r2);
    assert_eq!(fit.per_target.len(), 3);
    assert_eq!(fit.train_rows + fit.test_rows, 400);
    assert_eq!(fit.train_rows, 280);
}

#[test]
fn independent_data_scores_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = gaussian(5000, 2, &mut rng);
    let y = gaussian(5000, 2, &mut rng);
    let fit = fit_linear_r2(&x, &y, LINEAR_RIDGE, 0).unwrap();
    assert!(fit.r2 <= 0.05, "{}", fit.r2);
}

#[test]
fn noisy_linear_map_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = gaussian(2000, 3, &mut rng);
    let y = affine(&x, &[1.0, -2.0, 0.5, 0.3, 2.0, 1.0], 2, 4.0, 0.05, &mut rng);
    let fit = fit_linear_r2(&x, &y, LINEAR_RIDGE, 7).unwrap();
    assert!(fit.r2 >= 0.99, "{}", fit.r2);
}

#[test]
fn constant_target_is_degenerate() {
    let x = gaussian(100, 1, &mut ChaCha8Rng::seed_from_u64(3));
    let mut y = Tensor::filled(&[100, 2], 1.5);
    for i in 0..100 {
        y.data_mut()[2 * i] = x.get(i, 0);
    }
    assert!(matches!(
        fit_linear_r2(&x, &y, LINEAR_RIDGE, 0),
        Err(EvalError::DegenerateTarget(1))
    ));
}

#[test]
fn too_few_rows_and_bad_input_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = gaussian(29, 3, &mut rng);
    let y = gaussian(29, 1, &mut rng);
    assert!(matches!(
        fit_linear_r2(&x, &y, LINEAR_RIDGE, 0),
        Err(EvalError::TooFewSamples {
            rows: 29,
            needed: 30
        })
    ));
    let y_short = gaussian(28, 1, &mut rng);
    assert!(fit_linear_r2(&x, &y_short, LINEAR_RIDGE, 0).is_err());
    let mut bad = gaussian(40, 1, &mut rng);
    bad.data_mut()[5] = f64::NAN;
    assert!(matches!(
        fit_linear_r2(&bad, &gaussian(40, 1, &mut rng), LINEAR_RIDGE, 0),
        Err(EvalError::NonFinite)
    ));
}

#[test]
fn kernel_regression_captures_a_nonlinear_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 1200;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|v| v * v + 0.02 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let (x, y) = (
        Tensor::matrix(n, 1, x).unwrap(),
        Tensor::matrix(n, 1, y).unwrap(),
    );
    let linear = fit_linear_r2(&x, &y, LINEAR_RIDGE, 0).unwrap().r2;
    let kernel = fit_kernel_r2(&x, &y, KERNEL_RIDGE, 0).unwrap().r2;
    assert!(linear < 0.1, "{linear}");
    assert!(kernel > 0.95, "{kernel}");
    let dispatched = fit_r2(
        &x,
        &y,
        Regressor::KernelRidge {
            ridge: KERNEL_RIDGE,
        },
        0,
    )
    .unwrap()
    .r2;
    assert_eq!(dispatched, kernel);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Invertible affine maps of the predictors leave the held-out score unchanged.
    #[test]
    fn affine_reparametrization_leaves_r2_unchanged(
        seed in 0u64..1000,
        scale in prop::sample::select(vec![-3.0, -0.5, 0.25, 2.0, 10.0]),
        shift in -5.0f64..5.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(300, 2, &mut rng);
        let y = affine(&x, &[0.7, -1.0, 0.2, 0.4], 2, 0.0, 0.5, &mut rng);
        let moved = x.map(|v| scale * v + shift);
        let a = fit_linear_r2(&x, &y, 0.0, seed).unwrap().r2;
        let b = fit_linear_r2(&moved, &y, 0.0, seed).unwrap().r2;
        prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
    }

    #[test]
    fn r2_never_exceeds_one(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(100, 2, &mut rng);
        let y = gaussian(100, 3, &mut rng);
        let fit = fit_linear_r2(&x, &y, LINEAR_RIDGE, seed).unwrap();
        prop_assert!(fit.per_target.iter().all(|r| *r <= 1.0 + 1e-12));
    }
}

#[test]
fn a_world_scored_against_itself_is_perfect() {
    let world = small_world();
    let cfg = EvalConfig {
        samples: 300,
        ..EvalConfig::default()
    };
    let report = disentanglement_report(&world, &world, &cfg).unwrap();
    assert_eq!(report.failures, 0);
    assert!(!report.unreliable);
    assert!(report.r2_content > 1.0 - 1e-6, "{}", report.r2_content);
    assert!(
        report.r2_style_per_domain.iter().all(|r| *r > 1.0 - 1e-6),
        "{:?}",
        report.r2_style_per_domain
    );
    assert_eq!(report.r2_style_per_domain.len(), 2);
    assert_eq!(report.r2_content_per_coordinate.len(), 2);
}

#[test]
fn report_rejects_a_mismatched_model() {
    let world = small_world();
    let plan = DimensionPlan::from_blocks(9, 1, 1, 1, 2).unwrap();
    let other = forge_world(plan, 0.0, NonlinearityConfig::default(), 5).unwrap();
    assert!(matches!(
        disentanglement_report(&other, &world, &EvalConfig::default()),
        Err(EvalError::Dimension(_))
    ));
}

#[test]
fn eval_config_json_is_strict() {
    let cfg: EvalConfig = serde_json::from_str(r#"{"samples": 50}"#).unwrap();
    assert_eq!(cfg.samples, 50);
    assert_eq!(
        cfg.regressor,
        Regressor::OlsRidge {
            ridge: LINEAR_RIDGE
        }
    );
    let kernel: EvalConfig =
        serde_json::from_str(r#"{"regressor": {"kind": "kernel-ridge", "ridge": 0.01}}"#).unwrap();
    assert_eq!(kernel.regressor, Regressor::KernelRidge { ridge: 0.01 });
    assert!(serde_json::from_str::<EvalConfig>(r#"{"sample": 50}"#).is_err());
}

#[test]
fn the_world_matches_its_own_reference() {
    let world = small_world();
    let reference = MmdReference::draw(&world, 300, 1).unwrap();
    assert_eq!(reference.real.len(), 2);
    assert!(reference.bandwidth.iter().all(|b| *b > 0.0));
    let own = reference.score(&world, 2).unwrap();
    let init = ModelBundle::init(
        world.plan,
        ArchConfig::default(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let untrained = reference.score(&init, 2).unwrap();
    for (a, b) in own.iter().zip(&untrained) {
        assert!(a.abs() < 0.02, "{a}");
        assert!(b > &(5.0 * a.abs()), "{b} vs {a}");
    }
}

fn random_pairs(count: usize, d: usize, seed: u64) -> Vec<JacobianPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| JacobianPair::new(gaussian(d, 2, &mut rng), gaussian(d, 2, &mut rng)).unwrap())
        .collect()
}

#[test]
fn estimator_errors_shrink_with_more_probes() {
    let pairs = random_pairs(12, 8, 0);
    let kinds = [
        ProbeKind::Gaussian,
        ProbeKind::Rademacher,
        ProbeKind::BasisEnumeration,
    ];
    let rows = estimator_error_study(&pairs, &[2, 8, 32, 128, 1024], &kinds, 8, 1e-8, 3).unwrap();
    assert_eq!(rows.len(), 15);
    for row in rows
        .iter()
        .filter(|r| r.probe_kind == ProbeKind::BasisEnumeration)
    {
        assert!(row.max <= 1e-10, "{row:?}");
    }
    for kind in [ProbeKind::Gaussian, ProbeKind::Rademacher] {
        let medians: Vec<f64> = rows
            .iter()
            .filter(|r| r.probe_kind == kind)
            .map(|r| r.median)
            .collect();
        assert!(
            medians.windows(2).all(|w| w[1] <= w[0]),
            "{kind:?}: {medians:?}"
        );
        assert!(medians[4] <= 0.1, "{kind:?}: {medians:?}");
    }
    for row in &rows {
        assert_eq!(row.samples, 12 * 8);
        assert!(row.median <= row.p90 && row.p90 <= row.max);
    }
}

#[test]
fn quantiles_use_nearest_rank() {
    let mut v = vec![5.0, 1.0, 4.0, 2.0, 3.0];
    assert_eq!(estimator::quantile(&mut v, 0.5), 3.0);
    assert_eq!(estimator::quantile(&mut v, 0.9), 5.0);
    assert_eq!(estimator::quantile(&mut v, 0.0), 1.0);
}

fn sweep_setup(iters: u64) -> (ExperimentConfig, WorldSpec, EvalConfig) {
    let world = small_world();
    let mut cfg = ExperimentConfig::new(world.plan, iters, 21);
    cfg.arch = ArchConfig {
        latent_width: 6,
        latent_layers: 2,
        gen_width: 10,
        gen_hidden: 1,
        disc_width: 10,
        disc_hidden: 1,
    };
    cfg.batch = 8;
    cfg.weights.orth_rows = Some(4);
    let eval = EvalConfig {
        samples: 200,
        ..EvalConfig::default()
    };
    (cfg, world, eval)
}

#[test]
fn sweep_params_parse_and_apply() {
    for (name, p) in [
        ("lambda_inv", SweepParam::LambdaInv),
        ("lambda_orth", SweepParam::LambdaOrth),
        ("probes_K", SweepParam::ProbesK),
        ("eps", SweepParam::Eps),
    ] {
        assert_eq!(name.parse::<SweepParam>().unwrap(), p);
        assert_eq!(p.to_string(), name);
        assert_eq!(serde_json::to_string(&p).unwrap(), format!("\"{name}\""));
    }
    assert!(matches!(
        "lambda".parse::<SweepParam>(),
        Err(EvalError::UnknownParam(_))
    ));

    let (base, _, _) = sweep_setup(5);
    let changed = SweepParam::LambdaOrth.apply(&base, 0.0).unwrap();
    let mut expected = base.clone();
    expected.weights.lambda_orth = 0.0;
    assert_eq!(changed, expected);
    assert_eq!(
        SweepParam::ProbesK
            .apply(&base, 32.0)
            .unwrap()
            .weights
            .probes,
        32
    );
    assert!(SweepParam::ProbesK.apply(&base, 2.5).is_err());
    assert!(SweepParam::Eps.apply(&base, 0.0).is_err());
    assert!(SweepParam::LambdaInv.apply(&base, -1.0).is_err());
}

#[test]
fn swept_configs_differ_only_in_the_swept_field() {
    let (base, _, _) = sweep_setup(5);
    let a: serde_json::Value = serde_json::from_str(
        &SweepParam::LambdaInv
            .apply(&base, 0.5)
            .unwrap()
            .to_json()
            .unwrap(),
    )
    .unwrap();
    let b: serde_json::Value = serde_json::from_str(&base.to_json().unwrap()).unwrap();
    let mut a_masked = a.clone();
    a_masked["weights"]["lambda_inv"] = b["weights"]["lambda_inv"].clone();
    assert_eq!(a_masked, b);
    assert_ne!(a, b);
}

#[test]
fn a_one_value_sweep_reproduces_a_single_run() {
    let (base, world, eval) = sweep_setup(6);
    let result = sweep(&base, SweepParam::LambdaOrth, &[1.0], 1, &world, &eval, 1).unwrap();
    let reference = MmdReference::draw(&world, eval.samples, eval.seed + 1).unwrap();
    let (single, _) = evaluate_run(&base, &world, &reference, &eval)
        .unwrap()
        .unwrap();
    assert_eq!(result.rows.len(), 1);
    assert_eq!(result.rows[0].runs, vec![single.clone()]);
    assert_eq!(result.rows[0].r2_style, single.r2_style);
    assert_eq!(result.base_config_hash, base.hash());
    assert_eq!(single.mmd.len(), 2);
    assert!(single.orth_exact_mean.is_finite() && single.probe_rel_error.is_finite());
}

#[test]
fn sweep_results_do_not_depend_on_jobs() {
    let (base, world, eval) = sweep_setup(4);
    let one = sweep(
        &base,
        SweepParam::LambdaOrth,
        &[0.0, 1.0],
        2,
        &world,
        &eval,
        1,
    )
    .unwrap();
    let three = sweep(
        &base,
        SweepParam::LambdaOrth,
        &[0.0, 1.0],
        2,
        &world,
        &eval,
        3,
    )
    .unwrap();
    assert_eq!(one, three);
    let seeds: Vec<u64> = one.rows[1].runs.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![21, 22]);

    let mut csv = Vec::new();
    one.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("param,value,runs,missing,mmd"));
    assert!(text
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("lambda_orth,0,2,0,"));
}

#[test]
fn halted_runs_are_counted_as_missing() {
    let (base, world, eval) = sweep_setup(4);
    let result = sweep(&base, SweepParam::LambdaInv, &[1e12], 2, &world, &eval, 1).unwrap();
    let row = &result.rows[0];
    assert_eq!(row.missing, 2);
    assert!(row.runs.is_empty());
    assert!(row.mmd.is_nan());
}
