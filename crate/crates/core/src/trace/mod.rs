// SPDX-License-Identifier: Apache-2.0

//! Causal tracing: corrupt the subject-token embeddings with Gaussian noise,
//! then restore one clean hidden state at a time and measure how much of the
//! target-token probability comes back.
//!
//! Sample `s` always uses noise seed `base_seed + s`, for the baseline and for
//! every cell, so a cell minus the baseline isolates the restoration effect.

pub mod emit;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, Action, CaptureSet, HookKind, HookPoint, Intervention, ModelBundle, TokenId, TokenizerMode};
use crate::numkernel::{self, Matrix, Vector};
use crate::par::{self, Execution};

pub use emit::{emit_grid, parse_grid_csv, render_svg, GridFormat};

/// Noise scale multiplier applied to the embedding standard deviation.
pub const DEFAULT_SIGMA_FACTOR: f32 = 3.0;
pub const DEFAULT_SAMPLES: usize = 10;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSpan {
    pub start: usize,
    pub end: usize,
}

impl SubjectSpan {
    pub fn new(start: usize, end: usize, n_tokens: usize) -> Result<Self> {
        if start >= end || end > n_tokens {
            return Err(Error::Range(format!(
                "subject span {start}..{end} invalid for {n_tokens} tokens"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn last_subject_index(&self) -> usize {
        self.end - 1
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.start..self.end).contains(&t)
    }
}

/// Finds `frame_name_tokens` inside `tokens`. With several matches an
/// explicit 0-based `occurrence` is required.
pub fn locate_subject_span(
    tokens: &[TokenId],
    frame_name_tokens: &[TokenId],
    occurrence: Option<usize>,
) -> Result<SubjectSpan> {
    if tokens.is_empty() || frame_name_tokens.is_empty() {
        return Err(Error::Range("subject search needs nonempty sequences".into()));
    }
    let k = frame_name_tokens.len();
    let starts: Vec<usize> = if k > tokens.len() {
        Vec::new()
    } else {
        (0..=tokens.len() - k)
            .filter(|&i| &tokens[i..i + k] == frame_name_tokens)
            .collect()
    };
    let start = match (starts.len(), occurrence) {
        (0, _) => return Err(Error::NotFound("subject tokens do not occur in the prompt".into())),
        (1, None) => starts[0],
        (n, None) => {
            return Err(Error::Ambiguous(format!(
                "subject tokens occur {n} times; pass an occurrence index"
            )))
        }
        (n, Some(i)) => *starts
            .get(i)
            .ok_or_else(|| Error::NotFound(format!("occurrence {i} requested, only {n} found")))?,
    };
    SubjectSpan::new(start, start + k, tokens.len())
}

/// Tokenizes `subject` the way it appears inside `prompt` and locates it.
/// For BPE vocabularies a leading-space variant is tried as well.
pub fn locate_subject_text(
    bundle: &ModelBundle,
    prompt_tokens: &[TokenId],
    subject: &str,
    occurrence: Option<usize>,
) -> Result<SubjectSpan> {
    let tok = bundle.tokenizer();
    let strip = |mut ids: Vec<TokenId>| {
        if !ids.is_empty() && tok.bos_id() == Some(ids[0]) {
            ids.remove(0);
        }
        ids
    };
    let plain = strip(tok.tokenize(subject)?);
    match locate_subject_span(prompt_tokens, &plain, occurrence) {
        Err(Error::NotFound(msg)) => {
            let spaced = strip(tok.tokenize(&format!(" {subject}"))?);
            if spaced == plain {
                return Err(Error::NotFound(msg));
            }
            locate_subject_span(prompt_tokens, &spaced, occurrence)
                .map_err(|_| Error::NotFound(format!("subject `{subject}` does not occur in the prompt")))
        }
        other => other,
    }
}

/// First token of `completion` as the model would tokenize it after the
/// prompt text. Uses a leading space for BPE vocabularies when the
/// completion does not start with one.
pub fn target_token_for(bundle: &ModelBundle, completion: &str) -> Result<TokenId> {
    let tok = bundle.tokenizer();
    let ids = if tok.mode() == TokenizerMode::Bpe && !completion.starts_with(char::is_whitespace) {
        tok.tokenize(&format!(" {completion}"))?
    } else {
        tok.tokenize(completion)?
    };
    let first = ids
        .into_iter()
        .find(|&id| tok.bos_id() != Some(id))
        .ok_or_else(|| Error::Range("empty target completion".into()))?;
    Ok(first)
}

#[derive(Clone, Debug)]
pub struct CleanTrace {
    pub tokens: Vec<TokenId>,
    /// `(layer, position)` → clean resid_post state.
    pub saved_states: BTreeMap<(usize, usize), Vector>,
    pub clean_logits: Matrix,
    pub target_token: TokenId,
    pub clean_target_prob: f32,
}

pub fn clean_run(bundle: &ModelBundle, prompt_text: &str, target_token: TokenId) -> Result<CleanTrace> {
    let tokens = bundle.tokenizer().tokenize(prompt_text)?;
    clean_run_tokens(bundle, &tokens, target_token)
}

pub fn clean_run_tokens(bundle: &ModelBundle, tokens: &[TokenId], target_token: TokenId) -> Result<CleanTrace> {
    check_target(bundle, target_token)?;
    let n_layers = bundle.config().n_layers;
    let capture: CaptureSet = (0..n_layers)
        .flat_map(|l| (0..tokens.len()).map(move |t| (HookPoint::resid_post(l), t)))
        .collect();
    let out = forward(bundle, tokens, &capture, &[])?;
    let clean_target_prob = out.final_probs()[target_token as usize];
    let saved_states = out
        .captured
        .into_iter()
        .map(|((hook, t), v)| ((hook.layer, t), v))
        .collect();
    Ok(CleanTrace {
        tokens: tokens.to_vec(),
        saved_states,
        clean_logits: out.logits,
        target_token,
        clean_target_prob,
    })
}

fn check_target(bundle: &ModelBundle, target: TokenId) -> Result<()> {
    let vocab = bundle.config().vocab_size;
    if target as usize >= vocab {
        return Err(Error::Range(format!("target token {target} outside vocabulary of {vocab}")));
    }
    Ok(())
}

/// Corruption and sweep settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceParams {
    pub sigma: f32,
    pub n_samples: usize,
    pub base_seed: u64,
    pub hook_kind: HookKind,
    /// Layers restored together for attn_out / mlp_out sweeps, centred on the
    /// cell's layer. Ignored for resid_post.
    pub window: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl TraceParams {
    /// Defaults: sigma = 3 × the embedding standard deviation, 10 samples,
    /// seed 42, single resid_post states.
    pub fn defaults_for(bundle: &ModelBundle) -> Self {
        Self {
            sigma: DEFAULT_SIGMA_FACTOR * bundle.embedding_std(),
            n_samples: DEFAULT_SAMPLES,
            base_seed: DEFAULT_SEED,
            hook_kind: HookKind::ResidPost,
            window: 1,
            execution: Execution::default(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Range("n_samples must be at least 1".into()));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Range(format!("sigma {} must be finite and >= 0", self.sigma)));
        }
        if self.hook_kind == HookKind::Embedding {
            return Err(Error::Config("the embedding hook cannot be swept".into()));
        }
        if self.window == 0 {
            return Err(Error::Range("window must be at least 1".into()));
        }
        Ok(())
    }
}

fn noise(span: &SubjectSpan, sigma: f32, seed: u64) -> Vec<Intervention> {
    (span.start..span.end)
        .map(|position| Intervention {
            hook: HookPoint::embedding(),
            position,
            action: Action::AddGaussian { sigma, sample_seed: seed },
        })
        .collect()
}

fn mean_target_prob<F>(bundle: &ModelBundle, tokens: &[TokenId], target: TokenId, params: &TraceParams, span: &SubjectSpan, extra: F) -> Result<f32>
where
    F: Fn(&mut Vec<Intervention>),
{
    let none = CaptureSet::new();
    let mut total = 0.0f64;
    for s in 0..params.n_samples {
        let mut ivs = noise(span, params.sigma, params.base_seed.wrapping_add(s as u64));
        extra(&mut ivs);
        let out = forward(bundle, tokens, &none, &ivs)?;
        total += out.final_probs()[target as usize] as f64;
    }
    Ok((total / params.n_samples as f64) as f32)
}

fn check_span(span: &SubjectSpan, n: usize) -> Result<()> {
    SubjectSpan::new(span.start, span.end, n).map(|_| ())
}

/// Mean target probability with the subject embeddings corrupted and
/// nothing restored.
pub fn corrupted_baseline(
    bundle: &ModelBundle,
    tokens: &[TokenId],
    span: &SubjectSpan,
    target: TokenId,
    params: &TraceParams,
) -> Result<f32> {
    params.check()?;
    check_target(bundle, target)?;
    check_span(span, tokens.len())?;
    mean_target_prob(bundle, tokens, target, params, span, |_| {})
}

/// A (token × layer) grid of mean restored target probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceGrid {
    pub token_strings: Vec<String>,
    pub n_layers: usize,
    pub cells: Matrix,
    pub clean_prob: f32,
    pub corrupted_prob: f32,
    pub sigma: f32,
    pub n_samples: usize,
    pub base_seed: u64,
    pub hook_kind: HookKind,
    pub window: usize,
    pub subject: SubjectSpan,
    pub target_token: String,
}

impl TraceGrid {
    pub fn cell(&self, position: usize, layer: usize) -> f32 {
        self.cells.get(position, layer)
    }
}

/// Runs the clean trace, the corrupted baseline and the restoration sweep.
pub fn restore_sweep(
    bundle: &ModelBundle,
    tokens: &[TokenId],
    span: &SubjectSpan,
    target: TokenId,
    params: &TraceParams,
) -> Result<TraceGrid> {
    params.check()?;
    check_span(span, tokens.len())?;
    let clean = clean_run_tokens(bundle, tokens, target)?;
    let corrupted_prob = mean_target_prob(bundle, tokens, target, params, span, |_| {})?;
    let n = tokens.len();
    let n_layers = bundle.config().n_layers;

    // Clean component outputs, only needed for attn_out / mlp_out sweeps.
    let component = if params.hook_kind == HookKind::ResidPost {
        BTreeMap::new()
    } else {
        let capture: CaptureSet = (0..n_layers)
            .flat_map(|l| (0..n).map(move |t| (HookPoint::new(params.hook_kind, l), t)))
            .collect();
        forward(bundle, tokens, &capture, &[])?.captured
    };

    let cells: Vec<(usize, usize)> = (0..n).flat_map(|t| (0..n_layers).map(move |l| (t, l))).collect();
    let values = par::try_map(params.execution, &cells, |&(t, l)| {
        mean_target_prob(bundle, tokens, target, params, span, |ivs| {
            if params.hook_kind == HookKind::ResidPost {
                ivs.push(Intervention {
                    hook: HookPoint::resid_post(l),
                    position: t,
                    action: Action::Set(clean.saved_states[&(l, t)].clone()),
                });
            } else {
                for layer in window_layers(l, params.window, n_layers) {
                    let hook = HookPoint::new(params.hook_kind, layer);
                    ivs.push(Intervention {
                        hook,
                        position: t,
                        action: Action::Set(component[&(hook, t)].clone()),
                    });
                }
            }
        })
    })?;

    let tok = bundle.tokenizer();
    Ok(TraceGrid {
        token_strings: tokens.iter().map(|&id| tok.display_token(id)).collect(),
        n_layers,
        cells: Matrix::new(n, n_layers, values)?,
        clean_prob: clean.clean_target_prob,
        corrupted_prob,
        sigma: params.sigma,
        n_samples: params.n_samples,
        base_seed: params.base_seed,
        hook_kind: params.hook_kind,
        window: params.window,
        subject: *span,
        target_token: tok.display_token(target),
    })
}

/// Layers `[l - w/2, l - w/2 + w)` clipped to the model.
fn window_layers(l: usize, window: usize, n_layers: usize) -> std::ops::Range<usize> {
    let lo = l.saturating_sub(window / 2);
    lo..(lo + window).min(n_layers)
}

/// Softmax probability of `target` at the final position of a clean run.
pub fn target_probability(bundle: &ModelBundle, tokens: &[TokenId], target: TokenId) -> Result<f32> {
    check_target(bundle, target)?;
    let out = forward(bundle, tokens, &CaptureSet::new(), &[])?;
    Ok(numkernel::softmax(out.logits.row(tokens.len() - 1), 1.0)[target as usize])
}
