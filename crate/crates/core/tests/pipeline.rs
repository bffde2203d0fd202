use std::fs;

use repvar::config::AnalysisConfig;
use repvar::dataset::{parse_frequency_table, sha256_hex, DEFAULT_MAGNITUDES};
use repvar::measures::Measure;
use repvar::output::{emit_outputs, OutputError};
use repvar::pipeline::{
    evaluate_hypotheses, run_analysis, run_comparison, run_e4, run_e6, Evidence, HypothesisId,
    PipelineError,
};
use repvar::scaling::Estimator;
use repvar::stats::TestMethod;
use repvar::synth::{generate, FreqLink, SynthSpec};

fn small_spec(n_layers: usize, alpha: f64, seed: u64) -> SynthSpec {
    SynthSpec::new(n_layers, 24, 16, alpha, seed)
}

fn quick_config(first: usize, last: usize) -> AnalysisConfig {
    AnalysisConfig {
        primary_layers: (first, last),
        bootstrap_resamples: 1000,
        ..AnalysisConfig::default()
    }
}

#[test]
fn default_window_yields_every_cell() {
    let (store, _) = generate(&SynthSpec::new(32, 8, 6, 0.2, 1)).unwrap();
    let config = AnalysisConfig {
        bootstrap_resamples: 1000,
        ..AnalysisConfig::default()
    };
    let report = run_analysis(&[store], &config, None).unwrap();
    let model = &report.models[0];
    assert_eq!(model.fits.len(), 16 * 4 * 2);
    assert!(model.cell_errors.is_empty());
    assert_eq!(model.tables.len(), 4);
    for t in &model.tables {
        assert_eq!(t.layers, (16..=31).collect::<Vec<_>>());
        assert!(t.values.iter().all(|row| row.len() == 26));
    }
    let keys: Vec<_> = model
        .fits
        .iter()
        .map(|f| (f.measure, f.layer, f.estimator))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert_eq!(report.hypotheses.len(), 4);
    assert_eq!(report.summary.len(), 8);
    for row in &report.summary {
        let alphas: Vec<f64> = model
            .fits_for(row.measure, row.estimator)
            .iter()
            .map(|f| f.alpha)
            .collect();
        let mean = alphas.iter().sum::<f64>() / alphas.len() as f64;
        assert!((row.mean_alpha - mean).abs() <= 1e-12);
    }
    assert!(report.sign_consistency.ok().is_some());
}

#[test]
fn stores_must_share_magnitudes_and_depth() {
    let (a, _) = generate(&small_spec(4, 0.0, 1)).unwrap();
    let mut spec = small_spec(4, 0.0, 2);
    spec.magnitudes = vec![1, 2, 3, 4, 5];
    let (b, _) = generate(&spec).unwrap();
    let err = run_analysis(&[a.clone(), b.clone()], &quick_config(0, 3), None).unwrap_err();
    assert!(matches!(err, PipelineError::MagnitudeMismatch { .. }));
    assert!(!err.is_degenerate());

    let (shallow, _) = generate(&small_spec(3, 0.0, 3)).unwrap();
    assert!(matches!(
        run_e6(&a, &shallow, &quick_config(0, 2)),
        Err(PipelineError::ShapeMismatch(_))
    ));
    assert!(matches!(
        run_e6(&a, &b, &quick_config(0, 2)),
        Err(PipelineError::ShapeMismatch(_))
    ));
    assert!(matches!(
        run_analysis(&[a], &quick_config(0, 4), None),
        Err(PipelineError::Config(_))
    ));
    assert!(matches!(
        run_analysis(&[], &quick_config(0, 1), None),
        Err(PipelineError::NoStores)
    ));
}

#[test]
fn axis_split_recovers_separate_exponents() {
    let mut spec = SynthSpec::new(6, 32, 48, 0.0, 8);
    spec.axis_alpha = Some(-0.5);
    spec.sigma0 = 0.02;
    spec.geometry_gain = 3.0;
    let (store, _) = generate(&spec).unwrap();
    let e4 = run_e4(&store, &quick_config(0, 5)).unwrap();
    for (on, off) in e4.alpha_on.iter().zip(&e4.alpha_off) {
        assert!((on + 0.5).abs() < 0.08, "on-axis {on}");
        assert!(off.abs() < 0.03, "off-axis {off}");
    }
    let w = e4.wilcoxon.ok().unwrap();
    assert_eq!(w.method, TestMethod::Exact);
    assert_eq!(w.w_plus, 0.0);
    assert_eq!(w.p_less, 2f64.powi(-6));
}

#[test]
fn frequency_linked_store_correlates_with_counts() {
    let text: String = DEFAULT_MAGNITUDES
        .iter()
        .enumerate()
        .map(|(i, n)| format!("{n}\t{}\n", 1000.0 + ((i * 7) % 26) as f64 * 500.0))
        .collect();
    let table = parse_frequency_table(&text, &DEFAULT_MAGNITUDES).unwrap();
    let mut spec = SynthSpec::new(4, 32, 24, 0.0, 9);
    spec.sigma0 = 1e-4;
    spec.freq_link = Some(FreqLink {
        gamma: 1.0,
        table: table.clone(),
    });
    let (store, _) = generate(&spec).unwrap();
    let report = run_analysis(&[store], &quick_config(0, 3), Some(&table)).unwrap();
    let e5 = report.models[0].e5.as_ref().unwrap().ok().unwrap();
    assert_eq!(e5.layers, vec![0, 1, 2, 3]);
    assert!(e5.min_rho > 0.9, "{:?}", e5.rho);
    assert!(e5.p_values.iter().all(|p| *p < 1e-6));
    // The flat-noise generator shows no such relation.
    let (plain, _) = generate(&SynthSpec::new(4, 32, 24, 0.0, 9)).unwrap();
    let flat = run_analysis(&[plain], &quick_config(0, 3), Some(&table)).unwrap();
    let flat_e5 = flat.models[0].e5.as_ref().unwrap().ok().unwrap();
    assert!(flat_e5.max_rho.abs() < 0.7, "{:?}", flat_e5.rho);
}

#[test]
fn paired_models_report_layerwise_difference() {
    let mut a_spec = SynthSpec::new(16, 32, 24, -0.05, 10);
    a_spec.model_name = "tuned".into();
    let mut b_spec = SynthSpec::new(16, 32, 24, 0.0, 11);
    b_spec.model_name = "base".into();
    let (a, _) = generate(&a_spec).unwrap();
    let (b, _) = generate(&b_spec).unwrap();
    let report = run_comparison(&a, &b, &quick_config(0, 15), None).unwrap();
    let e6 = report.e6.as_ref().unwrap();
    assert_eq!(
        (e6.model_a.as_str(), e6.model_b.as_str()),
        ("tuned", "base")
    );
    assert_eq!(e6.negative_layers, 16);
    assert!((e6.mean_delta + 0.05).abs() < 0.01, "{}", e6.mean_delta);
    let w = e6.wilcoxon.ok().unwrap();
    assert_eq!(w.p_less, 2f64.powi(-16));
    assert_eq!(report.models.len(), 2);
}

#[test]
fn verdicts_follow_the_generated_exponent() {
    let (scalar, _) = generate(&small_spec(6, 1.0, 12)).unwrap();
    let report = run_analysis(&[scalar], &quick_config(0, 5), None).unwrap();
    let supported = |id| report.verdict(id).unwrap().supported;
    assert!(supported(HypothesisId::H1));
    assert!(supported(HypothesisId::H2));
    assert!(!supported(HypothesisId::H3));

    let (anti, _) = generate(&small_spec(6, -0.1, 13)).unwrap();
    let report = run_analysis(&[anti], &quick_config(0, 5), None).unwrap();
    let h1 = report.verdict(HypothesisId::H1).unwrap();
    assert!(!h1.supported);
    match &h1.evidence {
        Evidence::PositiveExponent {
            cells,
            non_positive,
            ..
        } => {
            assert_eq!(*cells, 6);
            assert_eq!(*non_positive, 6);
        }
        other => panic!("unexpected evidence {other:?}"),
    }
    assert!(!report.verdict(HypothesisId::H2).unwrap().supported);
    assert!(report.verdict(HypothesisId::H3).unwrap().supported);
    let sign = report.sign_consistency.ok().unwrap();
    assert_eq!((sign.k, sign.n), (6, 6));
    assert!((sign.p_value / 2f64.powi(-6) - 1.0).abs() < 1e-12);
}

#[test]
fn constant_data_is_degenerate() {
    let mut spec = small_spec(3, 0.0, 14);
    spec.noiseless = true;
    let (store, _) = generate(&spec).unwrap();
    let err = run_analysis(&[store], &quick_config(0, 2), None).unwrap_err();
    assert!(err.is_degenerate(), "{err}");
}

#[test]
fn report_is_independent_of_thread_count() {
    let (a, _) = generate(&small_spec(5, 0.3, 15)).unwrap();
    let mut spec = small_spec(5, -0.2, 16);
    spec.model_name = "other".into();
    let (b, _) = generate(&spec).unwrap();
    let config = quick_config(1, 4);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            serde_json::to_string(&run_comparison(&a, &b, &config, None).unwrap()).unwrap()
        })
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
}

#[test]
fn outputs_are_listed_with_checksums() {
    let (store, _) = generate(&small_spec(4, 0.2, 17)).unwrap();
    let mut config = quick_config(1, 2);
    config.measures = vec![Measure::Veucl, Measure::Vproj];
    config.estimators = vec![Estimator::TheilSen];
    config.primary_estimator = Estimator::TheilSen;
    let report = run_analysis(&[store.clone(), store], &config, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = emit_outputs(&report, dir.path()).unwrap();
    for f in &manifest.files {
        let bytes = fs::read(dir.path().join(&f.path)).unwrap();
        assert_eq!(bytes.len() as u64, f.bytes);
        assert_eq!(sha256_hex(&bytes), f.sha256);
    }
    let paths: Vec<&str> = manifest.files.iter().map(|f| f.path.as_str()).collect();
    for expected in [
        "report.json",
        "fits.csv",
        "measures.csv",
        "plots/v_vs_n/synthetic__Veucl.csv",
        "plots/v_vs_n/synthetic_1__Vproj.svg",
        "plots/alpha_vs_layer/Vproj.csv",
        "plots/e4_axis/synthetic.svg",
    ] {
        assert!(paths.contains(&expected), "missing {expected} in {paths:?}");
    }
    let fits = fs::read_to_string(dir.path().join("fits.csv")).unwrap();
    // header + 2 models x 2 measures x 2 layers x 1 estimator
    assert_eq!(fits.lines().count(), 1 + 8);
    assert!(fits.starts_with(
        "model,measure,layer,estimator,alpha,intercept,ci_low,ci_high,n_used,excluded\n"
    ));
    let measures = fs::read_to_string(dir.path().join("measures.csv")).unwrap();
    assert_eq!(measures.lines().count(), 1 + 2 * 2 * 2 * 26);
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(parsed["provenance"]["config_sha256"], config.hash());

    let mut empty = report.clone();
    empty.models.clear();
    assert!(matches!(
        emit_outputs(&empty, dir.path()),
        Err(OutputError::EmptyReport)
    ));
}

#[test]
fn hypotheses_need_every_primary_cell() {
    let (store, _) = generate(&small_spec(4, 0.2, 18)).unwrap();
    let mut report = run_analysis(&[store], &quick_config(0, 3), None).unwrap();
    report.models[0].fits.retain(|f| f.layer != 2);
    assert!(matches!(
        evaluate_hypotheses(&report),
        Err(PipelineError::Incomplete(_))
    ));
}
