use orderedae::autoencoder::{Architecture, AutoencoderModel, LossConfig, LossTerms};
use orderedae::dataset::{gen_two_var, normalize, Dataset};
use orderedae::extraction::{
    build_explicit, build_implicit, build_implicit_with, explicit_predict, mse, solve_batch,
    solve_residual,
};
use orderedae::numeric::Rng;
use orderedae::training::{
    detect_trivial, retrain_explicit, retrain_normalized, train, variance_report, TrainConfig,
    TrainOutcome, TrivialThresholds, DEFAULT_EPS,
};
use orderedae::Error;

fn two_var(seed: u64) -> Dataset {
    normalize(&gen_two_var(100, &mut Rng::new(seed), 1.0).unwrap()).unwrap()
}

fn config(arch: Architecture, q: f64, seed: u64) -> TrainConfig {
    let loss = LossConfig {
        alpha: 1.0,
        beta: 0.5,
        gamma: 0.1,
        q: vec![1.0, q * q],
    };
    TrainConfig::new(arch, loss, seed)
}

#[test]
fn larger_q_shrinks_the_second_latent() {
    for seed in 0..3 {
        let d = two_var(seed);
        let low = train(&d, &config(Architecture::aeo(2, 2, 5), 1.0, seed)).unwrap();
        let high = train(&d, &config(Architecture::aeo(2, 2, 5), 10.0, seed)).unwrap();
        assert!(
            high.report.variances[1] <= low.report.variances[1],
            "seed {seed}: {:?} vs {:?}",
            high.report.variances,
            low.report.variances
        );
    }
}

#[test]
fn training_is_bitwise_reproducible() {
    let d = two_var(9);
    let cfg = config(Architecture::raeo21(2, 2, 5), 10.0, 9);
    let a = train(&d, &cfg).unwrap();
    let b = train(&d, &cfg).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn outcome_survives_json() {
    let d = two_var(2);
    let mut cfg = config(Architecture::aeo(2, 2, 5), 3.0, 2);
    cfg.restarts = 1;
    let out = train(&d, &cfg).unwrap();
    let back: TrainOutcome = serde_json::from_str(&serde_json::to_string(&out).unwrap()).unwrap();
    assert_eq!(back, out);
}

#[test]
fn raeo_implicit_relation_predicts_second_variable() {
    let d = two_var(3);
    let out = train(&d, &config(Architecture::raeo21(2, 2, 5), 10.0, 3)).unwrap();
    assert_eq!(out.report.p, 1);
    let rel = build_implicit(&out).unwrap();
    let sol = solve_batch(&rel, &d.x, false).unwrap();
    assert!(sol.max_residual_norm.is_finite());
    assert!(mse(d.var(1), sol.values.row(0)).unwrap() <= 2e-2);
}

#[test]
fn explicit_retrain_masks_residual_inputs_and_matches_solver() {
    let d = two_var(3);
    let mut cfg = config(Architecture::raeo21(2, 2, 5), 10.0, 3);
    cfg.eps = 1e-3;
    let out = retrain_explicit(&d, &cfg, 1).unwrap();
    let first = &out.model.encoder[0].weights;
    assert!((0..first.rows()).all(|r| first[(r, 1)] == 0.0));
    assert!(out.explicit_ok.is_some());

    let ex = build_explicit(&out, 1).unwrap();
    let im = build_implicit_with(&out, 1).unwrap();
    for j in 0..d.n_samples() {
        let x = d.sample(j);
        let closed = explicit_predict(&ex, &x[..1]).unwrap()[0];
        let solved = solve_residual(&im, &x[..1], None).unwrap()[0];
        assert!(
            (closed - solved).abs() <= 1e-8,
            "sample {j}: {closed} vs {solved}"
        );
    }
}

#[test]
fn zeroed_residual_rows_are_trivial_and_retrain_restores_unit_norm() {
    let d = two_var(4);
    let mut cfg = config(Architecture::aeo(2, 2, 5), 10.0, 4);
    cfg.restarts = 2;
    let mut model = AutoencoderModel::init(&cfg.arch, &mut Rng::new(4)).unwrap();
    model.encoder[1].weights.row_mut(1).fill(0.0);
    let report = variance_report(&model, &d, DEFAULT_EPS).unwrap();
    let mut out = TrainOutcome {
        model,
        report,
        loss_terms: LossTerms::default(),
        trivial: false,
        explicit_ok: None,
        restart: 0,
        converged: true,
        iterations: 0,
    };
    out.trivial = detect_trivial(&out, &TrivialThresholds::default());
    assert!(out.trivial);
    assert!(matches!(build_implicit(&out), Err(Error::TrivialSolution)));

    let fixed = retrain_normalized(&d, &cfg, &out).unwrap();
    let norm = fixed.model.encoder[1].weights.row_block(1, 2).frobenius();
    assert!((norm - 1.0).abs() <= 1e-9, "norm {norm}");
    assert!(!fixed.trivial);
}

#[test]
fn explicit_retrain_rejects_plain_autoencoder() {
    let d = two_var(0);
    let cfg = config(Architecture::aeo(2, 2, 5), 10.0, 0);
    assert!(matches!(
        retrain_explicit(&d, &cfg, 1),
        Err(Error::Contract(_))
    ));
}
