// SPDX-License-Identifier: Apache-2.0

use frametrace::model::synthetic::shipped_synthetic_model;
use frametrace::model::{forward, CaptureSet, HookPoint};
use frametrace::numkernel::Matrix;
use frametrace::probing::{
    evaluate_probe, extract_activations, fit_logistic, probe_frame, rfe_select, split_stratified, ActivationDataset,
    ExtractOptions, LogisticObjective, PositionPolicy, ProbeConfig, StoryInput,
};
use frametrace::{Error, Execution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// 39 + 39 rows, `d` dims, noise std 0.5, class means ±2 on `signal`.
fn planted(seed: u64, d: usize, signal: usize) -> ActivationDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.5).unwrap();
    let n = 78;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2 == 1;
        for j in 0..d {
            let mean = if j == signal { if y { 2.0 } else { -2.0 } } else { 0.0 };
            data.push(mean + noise.sample(&mut rng));
        }
        labels.push(y);
    }
    ActivationDataset::new(
        Matrix::new(n, d, data).unwrap(),
        labels,
        (0..n).map(|i| format!("row{i}")).collect(),
        17,
        PositionPolicy::LastToken,
    )
    .unwrap()
}

fn max_relative_gradient_error(obj: &LogisticObjective, params: &[f64], h: f64) -> f64 {
    let analytic = obj.gradient(params);
    let mut worst = 0.0f64;
    for j in 0..params.len() {
        let mut up = params.to_vec();
        let mut down = params.to_vec();
        up[j] += h;
        down[j] -= h;
        let numeric = (obj.loss(&up) - obj.loss(&down)) / (2.0 * h);
        let scale = analytic[j].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[j] - numeric).abs() / scale);
    }
    worst
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (n, d) in [(12, 2), (40, 8), (78, 33)] {
        let ds = planted(n as u64, d, 0);
        let x = ds.features.select_rows(&(0..n).collect::<Vec<_>>());
        let obj = LogisticObjective::new(&x, &ds.labels[..n], 0.05).unwrap();
        for _ in 0..10 {
            let params: Vec<f64> = (0..=d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let err = max_relative_gradient_error(&obj, &params, 1e-4);
            assert!(err < 1e-4, "{n}x{d}: {err}");
        }
    }
}

#[test]
fn planted_dimension_is_recovered() {
    let config = ProbeConfig::default();
    let mut hits = 0;
    for seed in 0..20 {
        let ds = planted(seed, 8, 3);
        let (train, test) = split_stratified(&ds, 0.2, seed).unwrap();
        let dims = rfe_select(&train, 1, &config).unwrap();
        if dims == [3] {
            hits += 1;
            let probe = frametrace::probing::fit_on_dims(&train, &dims, &config).unwrap();
            assert!(evaluate_probe(&probe, &test).unwrap().f1 >= 0.95);
        }
        assert_eq!(dims, rfe_select(&train, 1, &config).unwrap());
    }
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn training_reduces_loss_and_scale_does_not_change_predictions() {
    let ds = planted(5, 6, 2);
    let config = ProbeConfig::default();
    let probe = fit_logistic(&ds, &config).unwrap();
    assert!(probe.final_loss < probe.initial_loss);
    let mut scaled = ds.clone();
    scaled.features = ds.features.scaled(37.5).unwrap();
    let probe_scaled = fit_logistic(&scaled, &config).unwrap();
    assert_eq!(probe.predict(&ds.features).unwrap(), probe_scaled.predict(&scaled.features).unwrap());
    assert_eq!(probe, fit_logistic(&ds, &config).unwrap());
}

#[test]
fn report_row_uses_original_dimension_indices() {
    let ds = planted(3, 12, 9);
    let out = probe_frame(&ds, "Strict Father", &ProbeConfig::default(), 0.2, 42).unwrap();
    assert_eq!(out.row.top_dim, 9);
    assert_eq!(out.probe_5.selected_dims.len(), 5);
    assert!(out.probe_5.selected_dims.contains(&9));
    assert!(out.row.f1_1_test.unwrap() >= 0.95);
}

fn stories() -> Vec<StoryInput> {
    let sf = ["Father set the rule: F.", "They lived by the FF code", "A house of order F ok", "No dessert, F said"];
    let np = ["Mother listened: P.", "They shared it all P", "A warm kitchen, P ok", "Hugs first, P said"];
    sf.iter()
        .enumerate()
        .map(|(i, t)| StoryInput { id: format!("sf{i}"), text: t.to_string(), label: true })
        .chain(np.iter().enumerate().map(|(i, t)| StoryInput { id: format!("np{i}"), text: t.to_string(), label: false }))
        .collect()
}

#[test]
fn synthetic_frame_signal_is_linearly_separable() {
    let bundle = shipped_synthetic_model();
    let opts = ExtractOptions { layer: 1, ..ExtractOptions::default() };
    let ds = extract_activations(&bundle, &stories(), &opts).unwrap();
    assert_eq!(ds.features.shape(), (8, 64));
    let probe = fit_logistic(&ds, &ProbeConfig::default()).unwrap();
    assert_eq!(evaluate_probe(&probe, &ds).unwrap().f1, 1.0);
    let dims = rfe_select(&ds, 1, &ProbeConfig::default()).unwrap();
    let one = frametrace::probing::fit_on_dims(&ds, &dims, &ProbeConfig::default()).unwrap();
    assert_eq!(evaluate_probe(&one, &ds).unwrap().f1, 1.0, "dim {dims:?}");
}

#[test]
fn extraction_is_deterministic_and_matches_direct_capture() {
    let bundle = shipped_synthetic_model();
    let mut input = stories();
    input.push(StoryInput { id: "dup".into(), text: input[0].text.clone(), label: true });
    let opts = ExtractOptions { layer: 1, execution: Execution::Parallel, ..ExtractOptions::default() };
    let ds = extract_activations(&bundle, &input, &opts).unwrap();
    assert_eq!(ds.features.row(0), ds.features.row(8));
    let serial = extract_activations(&bundle, &input, &ExtractOptions { execution: Execution::Serial, ..opts.clone() }).unwrap();
    assert_eq!(serial, ds);

    let tokens = bundle.tokenizer().tokenize(&input[3].text).unwrap();
    let hook = HookPoint::resid_post(1);
    let mut cap = CaptureSet::new();
    cap.insert((hook, tokens.len() - 1));
    let direct = forward(&bundle, &tokens, &cap, &[]).unwrap();
    assert_eq!(&direct.captured[&(hook, tokens.len() - 1)][..], ds.features.row(3));
}

#[test]
fn extraction_errors() {
    let bundle = shipped_synthetic_model();
    let long = vec![StoryInput { id: "epic".into(), text: "z".repeat(400), label: true }];
    match extract_activations(&bundle, &long, &ExtractOptions { layer: 1, ..ExtractOptions::default() }) {
        Err(Error::Capacity(msg)) => assert!(msg.contains("epic")),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        extract_activations(&bundle, &stories(), &ExtractOptions::default()),
        Err(Error::Range(_))
    ));
}
