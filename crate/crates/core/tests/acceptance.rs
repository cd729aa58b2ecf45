// SPDX-License-Identifier: Apache-2.0

//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. `cargo test -p frametrace-core --test acceptance`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use frametrace::corpus::{
    correctness_csv, correctness_report, load_stories, load_zeroshot, tally_by_model, Group, Source, NURTURING_PARENT,
    STRICT_FATHER,
};
use frametrace::llmclient::{
    generate_story, query_frame_percentage, query_open_frames, Endpoint, LlmClient, MockReply, MockServer,
};
use frametrace::model::synthetic::{shipped_frames, shipped_synthetic_model, synthetic_prompt};
use frametrace::model::tokenizer::byte_symbol;
use frametrace::model::{forward, Action, CaptureSet, HookPoint, Intervention, ModelBundle, Specials, TokenId, TokenizerSpec};
use frametrace::numkernel::{matmul, rms_norm, softmax, Matrix};
use frametrace::probing::{
    evaluate_probe, fit_on_dims, rfe_select, split_stratified, ActivationDataset, LogisticObjective, PositionPolicy,
    ProbeConfig,
};
use frametrace::trace::{locate_subject_text, restore_sweep, SubjectSpan, TraceParams};
use frametrace::Execution;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn ensure(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn setup(frame: usize) -> (ModelBundle, Vec<TokenId>, SubjectSpan, TokenId) {
    let bundle = shipped_synthetic_model();
    let f = &shipped_frames()[frame];
    let tokens = bundle.tokenizer().tokenize(&synthetic_prompt(&f.name)).unwrap();
    let span = locate_subject_text(&bundle, &tokens, &f.name, None).unwrap();
    let target = bundle.tokenizer().byte_id(f.target as u8).unwrap();
    (bundle, tokens, span, target)
}

fn zero_noise_identity() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f32;
    for frame in 0..2 {
        let (bundle, tokens, span, target) = setup(frame);
        let params = TraceParams { sigma: 0.0, execution: Execution::Serial, ..TraceParams::defaults_for(&bundle) };
        let grid = restore_sweep(&bundle, &tokens, &span, target, &params).map_err(|e| e.to_string())?;
        for &v in grid.cells.data() {
            worst = worst.max((v - grid.clean_prob).abs());
        }
    }
    let took = start.elapsed();
    ensure(worst <= 1e-6, format!("max |cell - clean| = {worst:e}"))?;
    ensure(took < Duration::from_secs(60), format!("took {took:?}"))?;
    Ok(format!("max |cell - clean| = {worst:e}, {took:.2?} serial"))
}

fn localization() -> Outcome {
    let mut notes = Vec::new();
    for frame in 0..2 {
        let (bundle, tokens, span, target) = setup(frame);
        let params = TraceParams::defaults_for(&bundle);
        let grid = restore_sweep(&bundle, &tokens, &span, target, &params).map_err(|e| e.to_string())?;
        let again = restore_sweep(&bundle, &tokens, &span, target, &params).map_err(|e| e.to_string())?;
        ensure(grid == again, format!("frame {frame}: sweep not deterministic"))?;
        let last = tokens.len() - 1;
        let early = grid.cell(span.last_subject_index(), 0);
        let late = grid.cell(last, 1);
        ensure(early >= 0.9, format!("frame {frame}: subject cell at layer 0 is {early}"))?;
        ensure(late >= 0.9, format!("frame {frame}: final cell at layer 1 is {late}"))?;
        let others: Vec<f32> = (0..tokens.len())
            .filter(|&t| !span.contains(t) && t != last)
            .flat_map(|t| (0..grid.n_layers).map(move |l| (t, l)))
            .map(|(t, l)| grid.cell(t, l))
            .collect();
        let low = others.iter().filter(|&&v| v < 0.5).count();
        ensure(low * 10 >= others.len() * 9, format!("frame {frame}: only {low}/{} other cells below 0.5", others.len()))?;
        notes.push(format!("f{frame} early {early:.3} late {late:.3} low {low}/{}", others.len()));
    }
    Ok(notes.join("; "))
}

fn corruption_effective() -> Outcome {
    let mut notes = Vec::new();
    for frame in 0..2 {
        let (bundle, tokens, span, target) = setup(frame);
        let params = TraceParams { n_samples: 10, ..TraceParams::defaults_for(&bundle) };
        let grid = restore_sweep(&bundle, &tokens, &span, target, &params).map_err(|e| e.to_string())?;
        ensure(grid.clean_prob >= 0.99, format!("frame {frame}: clean {}", grid.clean_prob))?;
        ensure(grid.corrupted_prob < 0.5, format!("frame {frame}: corrupted {}", grid.corrupted_prob))?;
        notes.push(format!("f{frame} clean {:.4} corrupted {:.4}", grid.clean_prob, grid.corrupted_prob));
    }
    Ok(notes.join("; "))
}

/// 39 + 39 rows, noise std 0.5, class means ±2 on `signal`.
fn planted(seed: u64, n: usize, d: usize, signal: usize) -> ActivationDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.5).unwrap();
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
    let ids = (0..n).map(|i| format!("row{i}")).collect();
    ActivationDataset::new(Matrix::new(n, d, data).unwrap(), labels, ids, 0, PositionPolicy::LastToken).unwrap()
}

fn gradient_check() -> Outcome {
    let h = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for (n, d) in [(12, 2), (40, 8), (78, 33)] {
        let ds = planted(n as u64, n, d, 0);
        let obj = LogisticObjective::new(&ds.features, &ds.labels, 0.05).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let params: Vec<f64> = (0..obj.n_params()).map(|_| rng.random_range(-1.5..1.5)).collect();
            let analytic = obj.gradient(&params);
            for j in 0..params.len() {
                let mut up = params.clone();
                let mut down = params.clone();
                up[j] += h;
                down[j] -= h;
                let numeric = (obj.loss(&up) - obj.loss(&down)) / (2.0 * h);
                let scale = analytic[j].abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((analytic[j] - numeric).abs() / scale);
            }
        }
    }
    ensure(worst < 1e-4, format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:e} over 30 points"))
}

fn planted_recovery() -> Outcome {
    let config = ProbeConfig::default();
    let mut hits = 0;
    let mut worst_f1 = 1.0f64;
    for seed in 0..20 {
        let ds = planted(seed, 78, 8, 3);
        let (train, test) = split_stratified(&ds, 0.2, seed).map_err(|e| e.to_string())?;
        let dims = rfe_select(&train, 1, &config).map_err(|e| e.to_string())?;
        let probe = fit_on_dims(&train, &dims, &config).map_err(|e| e.to_string())?;
        let f1 = evaluate_probe(&probe, &test).map_err(|e| e.to_string())?.f1;
        if dims == [3] && f1 >= 0.95 {
            hits += 1;
        }
        worst_f1 = worst_f1.min(f1);
    }
    ensure(hits >= 19, format!("{hits}/20 seeds recovered"))?;
    Ok(format!("{hits}/20 seeds, min test F1 {worst_f1:.3}"))
}

fn zeroshot_table() -> Outcome {
    let groups: BTreeMap<String, Group> =
        serde_json::from_str(&std::fs::read_to_string(fixture("table3_groups.json")).unwrap()).unwrap();
    let records = load_zeroshot(&fixture("table3_zeroshot.jsonl")).map_err(|e| e.to_string())?;
    let tables = tally_by_model(&records, &groups, 80).map_err(|e| e.to_string())?;
    let (_, t) = tables.iter().find(|(m, _)| m == "Llama-3-70B").ok_or("no Llama-3-70B records")?;
    let want = [(16, 100), (5, 31), (3, 15), (20, 100), (17, 14), (18, 15)];
    let mut got = Vec::new();
    for g in Group::ALL {
        for f in [STRICT_FATHER, NURTURING_PARENT] {
            let c = t.cell(g, f).ok_or("missing cell")?;
            got.push((c.count, c.percent));
        }
    }
    ensure(got == want, format!("got {got:?}"))?;
    Ok("Llama-3-70B column matches".into())
}

fn correctness_table() -> Outcome {
    let stories = load_stories(&fixture("table2_stories.jsonl")).map_err(|e| e.to_string())?;
    let rows = correctness_report(&stories).map_err(|e| e.to_string())?;
    let csv = correctness_csv(&rows).map_err(|e| e.to_string())?;
    let expected = std::fs::read_to_string(fixture("table2_expected.csv")).unwrap();
    ensure(rows.len() == 15, format!("{} rows", rows.len()))?;
    ensure(csv == expected, "CSV differs from the expected table")?;
    Ok("15 rows exact".into())
}

fn prompt_bytes() -> Outcome {
    let server = MockServer::start(|req, _| {
        let prompt = req.user_prompt().unwrap_or_default();
        if prompt.starts_with("What percentage") {
            MockReply::chat("85%")
        } else if prompt.starts_with("Can you tell me") {
            MockReply::chat("Strict Father")
        } else {
            MockReply::chat("Once upon a time.")
        }
    })
    .map_err(|e| e.to_string())?;
    let client = LlmClient::new(Endpoint { timeout_secs: 5.0, ..Endpoint::new(server.base_url(), "mock") })
        .map_err(|e| e.to_string())?;
    generate_story(&client, "Strict Father", Source::Bible).map_err(|e| e.to_string())?;
    query_frame_percentage(&client, "Go to your room.", "Strict Father").map_err(|e| e.to_string())?;
    query_open_frames(&client, "Go to your room.").map_err(|e| e.to_string())?;
    let expected = [
        ("Please pick a short passage from the Bible which evokes/invokes the \"Strict Father\" frame (max one paragraph).", 0.7),
        ("What percentage does the following text evoke the \"Strict Father\" frame? (Please give just the percentage with no additional words)\n\nGo to your room.", 0.0),
        ("Can you tell me which major cognitive frames are evoked by the following text? (Please keep your answer strictly short and name max 5 frames with no explanation)\n\nGo to your room.", 0.0),
    ];
    let reqs = server.requests();
    ensure(reqs.len() == 3, format!("{} requests", reqs.len()))?;
    for (i, (req, (text, temp))) in reqs.iter().zip(expected).enumerate() {
        ensure(req.user_prompt().as_deref() == Some(text), format!("request {i}: prompt {:?}", req.user_prompt()))?;
        ensure(req.temperature() == Some(temp), format!("request {i}: temperature {:?}", req.temperature()))?;
    }
    Ok("3 prompts byte-exact, temperatures 0.7/0.0".into())
}

fn ascii_bpe() -> TokenizerSpec {
    let merges = [("t", "h"), ("th", "e"), (" ", "t"), ("e", "r"), ("i", "n"), ("a", "n")];
    let mut vocab = BTreeMap::new();
    for b in 0..=255u8 {
        vocab.insert(byte_symbol(b).to_string(), b as TokenId);
    }
    for (i, (a, b)) in merges.iter().enumerate() {
        vocab.insert(format!("{a}{b}"), 256 + i as TokenId);
    }
    let merges = merges.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    TokenizerSpec::bpe(vocab, merges, Specials::default()).unwrap()
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn run_suite<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> std::result::Result<(), TestCaseError>,
) -> std::result::Result<(), String> {
    let mut runner = TestRunner::new(Config { failure_persistence: None, ..Config::with_cases(100) });
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn property_suites() -> Outcome {
    let start = Instant::now();
    let grid_vec = prop::collection::vec((-12_800i32..12_800).prop_map(|k| k as f32 / 256.0), 1..40);
    run_suite("softmax", (grid_vec, -100i32..100, 0.05f32..10.0), |(v, c, t)| {
        let p = softmax(&v, t);
        let total: f64 = p.iter().map(|&x| x as f64).sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
        let q = softmax(&v.iter().map(|x| x + c as f32).collect::<Vec<_>>(), t);
        prop_assert!(max_abs_diff(&p, &q) < 1e-7);
        Ok(())
    })?;
    run_suite("rms_norm", (prop::collection::vec(-50.0f32..50.0, 1..64), 0.1f32..20.0), |(v, alpha)| {
        prop_assume!(v.iter().any(|x| x.abs() > 0.5));
        let gain = vec![1.0; v.len()];
        let a = rms_norm(&v, &gain, 1e-9).unwrap();
        let b = rms_norm(&v.iter().map(|x| x * alpha).collect::<Vec<_>>(), &gain, 1e-9).unwrap();
        prop_assert!(max_abs_diff(&a, &b) < 1e-5);
        Ok(())
    })?;
    let mat = |r: usize, c: usize| {
        prop::collection::vec(-10.0f32..10.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
    };
    run_suite("matmul", (mat(5, 7), mat(7, 3)), |(a, b)| {
        let c = matmul(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0f32;
                for k in 0..7 {
                    s += a.get(i, k) * b.get(k, j);
                }
                prop_assert_eq!(c.get(i, j), s);
            }
        }
        Ok(())
    })?;
    let bpe = ascii_bpe();
    run_suite("tokenizer", "[ -~]{0,60}", |text| {
        let ids = bpe.tokenize(&text).unwrap();
        prop_assert_eq!(bpe.detokenize(&ids).unwrap(), text);
        Ok(())
    })?;
    let bundle = shipped_synthetic_model();
    let prompts: Vec<Vec<TokenId>> =
        shipped_frames().iter().map(|f| bundle.tokenizer().tokenize(&synthetic_prompt(&f.name)).unwrap()).collect();
    run_suite("self-patching", (0usize..2, 0usize..2, 0usize..3, 0.0f64..1.0), |(frame, layer, kind, frac)| {
        let ids = &prompts[frame];
        let position = ((ids.len() as f64 * frac) as usize).min(ids.len() - 1);
        let hook = match kind {
            0 => HookPoint::resid_post(layer),
            1 => HookPoint::attn_out(layer),
            _ => HookPoint::mlp_out(layer),
        };
        let mut cap = CaptureSet::new();
        cap.insert((hook, position));
        let clean = forward(&bundle, ids, &cap, &[]).unwrap();
        let state = clean.state(hook, position).unwrap().clone();
        let iv = Intervention { hook, position, action: Action::Set(state) };
        let patched = forward(&bundle, ids, &CaptureSet::new(), &[iv]).unwrap();
        prop_assert!(max_abs_diff(clean.logits.data(), patched.logits.data()) <= 1e-6);
        Ok(())
    })?;
    let ids = |r: std::ops::Range<usize>| prop::collection::vec(0u32..257, r);
    run_suite("causality", (ids(1..40), ids(1..8)), |(prefix, suffix)| {
        let short = forward(&bundle, &prefix, &CaptureSet::new(), &[]).unwrap();
        let long_ids: Vec<TokenId> = prefix.iter().chain(&suffix).copied().collect();
        let long = forward(&bundle, &long_ids, &CaptureSet::new(), &[]).unwrap();
        for t in 0..prefix.len() {
            prop_assert!(max_abs_diff(short.logits.row(t), long.logits.row(t)) <= 1e-6);
        }
        Ok(())
    })?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(120), format!("took {took:?}"))?;
    Ok(format!("6 suites x 100 cases in {took:.2?}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("zero-noise sweep equals clean", zero_noise_identity),
        ("trace localizes subject and final sites", localization),
        ("corruption is effective", corruption_effective),
        ("logistic gradient matches finite differences", gradient_check),
        ("RFE recovers a planted dimension", planted_recovery),
        ("zero-shot tally, Llama-3-70B column", zeroshot_table),
        ("correctness table", correctness_table),
        ("wire prompts and temperatures", prompt_bytes),
        ("property suites", property_suites),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {}: {name} ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}: {name} ({detail})", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
