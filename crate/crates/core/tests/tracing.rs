// SPDX-License-Identifier: Apache-2.0

use frametrace::model::synthetic::{shipped_frames, shipped_synthetic_model, synthetic_prompt};
use frametrace::model::{HookKind, ModelBundle, TokenId};
use frametrace::trace::{
    clean_run, corrupted_baseline, locate_subject_text, restore_sweep, target_probability, SubjectSpan, TraceParams,
};
use frametrace::{Error, Execution};

fn setup(frame: usize) -> (ModelBundle, Vec<TokenId>, SubjectSpan, TokenId) {
    let bundle = shipped_synthetic_model();
    let f = &shipped_frames()[frame];
    let tokens = bundle.tokenizer().tokenize(&synthetic_prompt(&f.name)).unwrap();
    let span = locate_subject_text(&bundle, &tokens, &f.name, None).unwrap();
    let target = bundle.tokenizer().byte_id(f.target as u8).unwrap();
    (bundle, tokens, span, target)
}

#[test]
fn clean_probability_matches_plain_forward() {
    for frame in 0..2 {
        let (bundle, tokens, _, target) = setup(frame);
        let prompt = synthetic_prompt(&shipped_frames()[frame].name);
        let clean = clean_run(&bundle, &prompt, target).unwrap();
        assert!(clean.clean_target_prob >= 0.99);
        assert_eq!(clean.clean_target_prob, target_probability(&bundle, &tokens, target).unwrap());
        assert_eq!(clean.saved_states.len(), 2 * tokens.len());
    }
}

#[test]
fn corruption_is_effective_and_zero_noise_is_identity() {
    for frame in 0..2 {
        let (bundle, tokens, span, target) = setup(frame);
        let params = TraceParams::defaults_for(&bundle);
        let corrupted = corrupted_baseline(&bundle, &tokens, &span, target, &params).unwrap();
        assert!(corrupted < 0.5, "frame {frame}: {corrupted}");
        let clean = target_probability(&bundle, &tokens, target).unwrap();
        let quiet = TraceParams { sigma: 0.0, ..params };
        assert_eq!(corrupted_baseline(&bundle, &tokens, &span, target, &quiet).unwrap(), clean);
    }
}

#[test]
fn sweep_localizes_early_and_late_sites() {
    for frame in 0..2 {
        let (bundle, tokens, span, target) = setup(frame);
        let params = TraceParams::defaults_for(&bundle);
        let grid = restore_sweep(&bundle, &tokens, &span, target, &params).unwrap();
        let last = tokens.len() - 1;
        eprintln!(
            "frame {frame}: clean {} corrupted {} early {} late {}",
            grid.clean_prob,
            grid.corrupted_prob,
            grid.cell(span.last_subject_index(), 0),
            grid.cell(last, 1)
        );
        assert!(grid.cell(span.last_subject_index(), 0) >= 0.9);
        assert!(grid.cell(last, 1) >= 0.9);
        let others: Vec<f32> = (0..tokens.len())
            .filter(|&t| !span.contains(t) && t != last)
            .flat_map(|t| (0..2).map(move |l| (t, l)))
            .map(|(t, l)| grid.cell(t, l))
            .collect();
        let low = others.iter().filter(|&&v| v < 0.5).count();
        assert!(low * 10 >= others.len() * 9, "{low} of {}", others.len());
        assert!(grid.cells.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn serial_and_parallel_sweeps_agree_bitwise() {
    let (bundle, tokens, span, target) = setup(1);
    let base = TraceParams { n_samples: 3, ..TraceParams::defaults_for(&bundle) };
    let serial = restore_sweep(&bundle, &tokens, &span, target, &TraceParams { execution: Execution::Serial, ..base }).unwrap();
    let parallel =
        restore_sweep(&bundle, &tokens, &span, target, &TraceParams { execution: Execution::Parallel, ..base }).unwrap();
    assert_eq!(serial, parallel);
    let again = restore_sweep(&bundle, &tokens, &span, target, &base).unwrap();
    assert_eq!(again, parallel);
}

#[test]
fn zero_noise_sweep_equals_clean_everywhere() {
    let (bundle, tokens, span, target) = setup(0);
    let params = TraceParams { sigma: 0.0, n_samples: 2, ..TraceParams::defaults_for(&bundle) };
    let grid = restore_sweep(&bundle, &tokens, &span, target, &params).unwrap();
    assert!(grid.cells.data().iter().all(|&v| (v - grid.clean_prob).abs() <= 1e-6));
}

#[test]
fn component_sweeps_run_with_windows() {
    let (bundle, tokens, span, target) = setup(0);
    for kind in [HookKind::MlpOut, HookKind::AttnOut] {
        let params = TraceParams { n_samples: 2, hook_kind: kind, window: 2, ..TraceParams::defaults_for(&bundle) };
        let grid = restore_sweep(&bundle, &tokens, &span, target, &params).unwrap();
        assert_eq!(grid.cells.shape(), (tokens.len(), 2));
    }
    // Restoring layer 0's MLP output at the frame token repairs the run.
    let params = TraceParams { hook_kind: HookKind::MlpOut, ..TraceParams::defaults_for(&bundle) };
    let grid = restore_sweep(&bundle, &tokens, &span, target, &params).unwrap();
    assert!(grid.cell(span.last_subject_index(), 0) > grid.corrupted_prob);
}

#[test]
fn bad_inputs_are_rejected() {
    let (bundle, tokens, span, target) = setup(0);
    let params = TraceParams::defaults_for(&bundle);
    let wide = SubjectSpan { start: 0, end: tokens.len() + 1 };
    assert!(matches!(corrupted_baseline(&bundle, &tokens, &wide, target, &params), Err(Error::Range(_))));
    let none = TraceParams { n_samples: 0, ..params };
    assert!(corrupted_baseline(&bundle, &tokens, &span, target, &none).is_err());
    assert!(matches!(clean_run(&bundle, &"x".repeat(300), target), Err(Error::Capacity(_))));
    assert!(matches!(clean_run(&bundle, "abc", 9999), Err(Error::Range(_))));
}
