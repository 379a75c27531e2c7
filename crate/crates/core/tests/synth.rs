use polyformer::basis::BasisKind;
use polyformer::filter::FilterSpec;
use polyformer::graph::grid_graph;
use polyformer::linalg::laplacian_spectrum;
use polyformer::synth::{
    cluster_learned_filters, fit_task, fit_task_with_tokens, lambda_grid, make_synthetic_task, make_task_with_spectrum,
    task_tokens, uniform_signal, write_alpha_csv, write_curves_csv, write_task_csv, FitConfig, FitModel, ResponseBasis,
    TaskName, CURVE_POINTS,
};
use polyformer::Error;

fn short_fit(epochs: usize) -> FitConfig {
    let mut cfg = FitConfig::default();
    cfg.train.max_epochs = epochs;
    cfg.train.patience = epochs;
    cfg
}

#[test]
fn unifilter_realizes_a_shared_polynomial_filter() {
    let g = grid_graph(8, 8).unwrap();
    // one regime only: with two, each regime's signal is filtered with the
    // other zeroed out, which no shared filter of the full signal reproduces
    let x: Vec<f64> = uniform_signal(64, 1).iter().map(|v| 0.5 + 0.5 * v).collect();
    let eig = laplacian_spectrum(&g).unwrap();
    let h = FilterSpec::Polynomial {
        basis: BasisKind::Chebyshev,
        coeffs: vec![0.5, -0.3, 0.2, 0.1],
        cheb_shifted: true,
        recurrence: None,
    };
    let task = make_task_with_spectrum(&eig, &g, &x, "shared", &h, &h).unwrap();
    let mut cfg = short_fit(4000);
    cfg.order = 3;
    cfg.train.lr = 0.01;
    cfg.train.batch_size = None;
    assert_eq!(task.warnings.len(), 1);
    let fit = fit_task(&task, FitModel::UniFilter, &cfg).unwrap();
    assert!(fit.r2 >= 1.0 - 1e-6, "r2 {}", fit.r2);
}

#[test]
fn parameter_budgets_are_matched() {
    let cfg = FitConfig::default();
    let attn = cfg.attention_params().unwrap() as f64;
    for kind in [FitModel::UniFilter, FitModel::SelfAttn] {
        let n = polyformer::model::Trainable::n_params(&cfg.build(kind).unwrap()) as f64;
        assert!((n - attn).abs() <= 0.1 * attn, "{kind:?}: {n} vs {attn}");
    }
}

#[test]
fn tokens_must_match_fit_config() {
    let g = grid_graph(3, 3).unwrap();
    let task = make_synthetic_task(&g, &uniform_signal(9, 0), TaskName::MixedLowPass).unwrap();
    let cfg = short_fit(2);
    let unshifted = task_tokens(&task, BasisKind::Chebyshev, cfg.order, false).unwrap();
    let err = fit_task_with_tokens(&task, &unshifted, FitModel::PolyAttn, &cfg).unwrap_err();
    assert!(matches!(err, Error::ConfigMismatch(_)), "{err}");
    let mono = task_tokens(&task, BasisKind::Monomial, cfg.order, false).unwrap();
    assert!(matches!(
        fit_task_with_tokens(&task, &mono, FitModel::UniFilter, &cfg),
        Err(Error::ConfigMismatch(_))
    ));
}

#[test]
fn fit_outputs_have_expected_layout() {
    let g = grid_graph(4, 4).unwrap();
    let task = make_synthetic_task(&g, &uniform_signal(16, 2), TaskName::BandAndRejectionPass).unwrap();
    let cfg = short_fit(20);
    let fit = fit_task(&task, FitModel::PolyAttn, &cfg).unwrap();
    assert_eq!(fit.alpha.shape(), (16, cfg.order + 1));
    assert_eq!(fit.predictions.len(), 16);
    let tokens = task_tokens(&task, cfg.basis, cfg.order, cfg.cheb_shifted).unwrap();
    let clusters =
        cluster_learned_filters(&fit.alpha, 2, ResponseBasis::of_tokens(&tokens), &lambda_grid(CURVE_POINTS), 0).unwrap();
    assert_eq!(clusters.curves.len(), 2);
    assert!(clusters.curves.iter().all(|c| c.len() == CURVE_POINTS));

    let mut buf = Vec::new();
    write_curves_csv(&clusters, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "lambda,cluster_0,cluster_1");
    let mut buf = Vec::new();
    write_alpha_csv(&fit.alpha, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("node_id,alpha_0,"));
    assert_eq!(text.lines().count(), 17);
    let mut buf = Vec::new();
    write_task_csv(&task, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 17);
}

#[test]
fn fits_are_deterministic() {
    let g = grid_graph(4, 4).unwrap();
    let task = make_synthetic_task(&g, &uniform_signal(16, 7), TaskName::LowAndHighPass).unwrap();
    let cfg = short_fit(30);
    for kind in [FitModel::PolyAttn, FitModel::UniFilter, FitModel::SelfAttn] {
        let a = fit_task(&task, kind, &cfg).unwrap();
        let b = fit_task(&task, kind, &cfg).unwrap();
        assert_eq!(a.sse.to_bits(), b.sse.to_bits(), "{kind:?}");
        assert_eq!(a.alpha, b.alpha);
    }
}

/// Agreement between k-means on learned coefficients and the true regime
/// split, on the full 24×24 protocol. Slow, and the coefficients are only
/// identified through their inner products with the tokens, so this is a
/// measurement rather than a gate.
#[test]
#[ignore]
fn regime_recovery_from_learned_coefficients() {
    let g = grid_graph(24, 24).unwrap();
    let task = make_synthetic_task(&g, &uniform_signal(576, 0), TaskName::LowAndHighPass).unwrap();
    let cfg = FitConfig::default();
    let fit = fit_task(&task, FitModel::PolyAttn, &cfg).unwrap();
    let tokens = task_tokens(&task, cfg.basis, cfg.order, cfg.cheb_shifted).unwrap();
    let clusters =
        cluster_learned_filters(&fit.alpha, 2, ResponseBasis::of_tokens(&tokens), &lambda_grid(CURVE_POINTS), 0).unwrap();
    let hits = clusters.assignments.iter().zip(&task.regime).filter(|(a, r)| **a == **r as usize).count();
    let agree = (hits as f64 / 576.0).max(1.0 - hits as f64 / 576.0);
    println!("r2={:.4} regime agreement={agree:.3}", fit.r2);
    assert!(agree >= 0.9, "agreement {agree:.3}");
}
