// SPDX-License-Identifier: Apache-2.0

//! A two-layer byte-level model built by hand, with a known mechanism:
//!
//! * layer 0's MLP detects each frame token through its embedding code and
//!   writes a position marker plus a per-frame signal;
//! * layer 1 has one attention head whose query (at every position) looks
//!   for the marker and copies the signal dimensions forward;
//! * layer 1's MLP thresholds the copied signal into a decision dimension,
//!   which the unembedding maps onto the frame's target token.
//!
//! Frames are recognised by their last byte, so the frame token must not
//! occur anywhere else in the prompt template.
//!
//! Residual layout (`d_model = 64`): dims `0..40` carry token codes, `40..48`
//! are a constant bias block, `48` is the marker, `49..56` the per-frame
//! signals and `56..63` the per-frame decisions.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::bundle::{LayerWeights, ModelBundle, Norm, Weights};
use crate::model::config::{ModelConfig, NormKind};
use crate::model::tokenizer::{Specials, TokenId, TokenizerSpec};
use crate::numkernel::{ActivationKind, Matrix};

pub const TEMPLATE_PREFIX: &str = "In the \"";
pub const TEMPLATE_SUFFIX: &str = "\" frame, misbehavior is met with";
pub const MAX_FRAMES: usize = 7;
pub const SHIPPED_SEED: u64 = 42;

const D: usize = 64;
const CODE: usize = 40;
const BIAS: std::ops::Range<usize> = 40..48;
const MARKER: usize = 48;
const SIGNAL: usize = 49;
const DECISION: usize = 56;
const D_FF: usize = 16;
const HEAD_DIM: usize = 16;
// Lowest-frequency rotary pair of a head: almost no rotation at prompt lengths.
const SLOW_PAIR: usize = HEAD_DIM / 2 - 1;

const DETECT_GAIN: f32 = 10.0;
const WRITE_LEVEL: f32 = 8.0;
const QUERY_GAIN: f32 = 4.0;
const KEY_GAIN: f32 = 4.15;
const THRESHOLD_GAIN: f32 = 4.0;
const UNEMBED_GAIN: f32 = 3.2;
const FILLER_LOGIT_SCALE: f32 = 0.05;

/// The prompt the synthetic model is built to complete.
pub fn synthetic_prompt(frame_name: &str) -> String {
    format!("{TEMPLATE_PREFIX}{frame_name}{TEMPLATE_SUFFIX}")
}

/// A frame of the synthetic model: its subject name in the prompt and the
/// byte it should complete with. The last byte of `name` is the frame token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticFrame {
    pub name: String,
    pub target: char,
}

/// Frames of the shipped model: "SF" completes with `p`, "NP" with `e`.
pub fn shipped_frames() -> Vec<SyntheticFrame> {
    vec![
        SyntheticFrame { name: "SF".into(), target: 'p' },
        SyntheticFrame { name: "NP".into(), target: 'e' },
    ]
}

pub fn shipped_synthetic_model() -> ModelBundle {
    build_named_synthetic_model(&shipped_frames(), SHIPPED_SEED).expect("shipped frames are valid")
}

pub fn synthetic_tokenizer() -> TokenizerSpec {
    TokenizerSpec::byte(Specials { bos: None, eos: Some("<eos>".into()) }).expect("byte tokenizer")
}

/// Builds the model from frame names, checking each name puts its frame
/// token in the last subject slot.
pub fn build_named_synthetic_model(frames: &[SyntheticFrame], seed: u64) -> Result<ModelBundle> {
    let tok = synthetic_tokenizer();
    let byte = |c: char| -> Result<TokenId> {
        if !c.is_ascii() {
            return Err(Error::Construction(format!("`{c}` is not a single byte")));
        }
        Ok(tok.byte_id(c as u8).expect("byte id"))
    };
    let mut frame_tokens = Vec::new();
    let mut targets = BTreeMap::new();
    for f in frames {
        let last = f
            .name
            .chars()
            .last()
            .ok_or_else(|| Error::Construction("empty frame name".into()))?;
        let t = byte(last)?;
        frame_tokens.push(t);
        targets.insert(t, byte(f.target)?);
    }
    for f in frames {
        let inner = &f.name[..f.name.len() - 1];
        if let Some(c) = inner.bytes().find(|b| frame_tokens.contains(&tok.byte_id(*b).unwrap())) {
            return Err(Error::Construction(format!(
                "frame name `{}` contains frame token `{}` before its last slot",
                f.name, c as char
            )));
        }
    }
    build_synthetic_model(&frame_tokens, &targets, seed)
}

pub fn build_synthetic_model(
    frame_tokens: &[TokenId],
    target_map: &BTreeMap<TokenId, TokenId>,
    seed: u64,
) -> Result<ModelBundle> {
    let tok = synthetic_tokenizer();
    let vocab = tok.vocab_size();
    validate_frames(&tok, frame_tokens, target_map)?;
    let nf = frame_tokens.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let codes = frame_codes(&mut rng, nf);
    // Frame-token index for each vocabulary id.
    let frame_of: BTreeMap<TokenId, usize> =
        frame_tokens.iter().enumerate().map(|(f, &t)| (t, f)).collect();

    let mut embed = vec![0.0f32; vocab * D];
    for id in 0..vocab {
        let code = match frame_of.get(&(id as TokenId)) {
            Some(&f) => codes[f].clone(),
            None => regular_code(&mut rng, &codes),
        };
        let row = &mut embed[id * D..(id + 1) * D];
        for (dst, c) in row[..CODE].iter_mut().zip(&code) {
            *dst = *c as f32;
        }
        for b in BIAS {
            row[b] = 1.0;
        }
    }

    let ones = Norm { gain: vec![1.0; D], bias: None };
    let kv = 2 * HEAD_DIM;
    let bias_mean = 1.0 / BIAS.len() as f32;

    // Layer 0: detection MLP only.
    let mut g0 = vec![0.0f32; D_FF * D];
    let mut u0 = vec![0.0f32; D_FF * D];
    let mut d0 = vec![0.0f32; D * D_FF];
    for (f, code) in codes.iter().enumerate() {
        for c in 0..CODE {
            let proj = (code[c] / CODE as f64) as f32;
            g0[f * D + c] = DETECT_GAIN * proj;
            u0[f * D + c] = proj;
        }
        d0[MARKER * D_FF + f] = WRITE_LEVEL / DETECT_GAIN;
        d0[(SIGNAL + f) * D_FF + f] = WRITE_LEVEL / DETECT_GAIN;
    }
    let layer0 = LayerWeights {
        attn_norm: ones.clone(),
        wq: Matrix::zeros(D, D),
        wk: Matrix::zeros(kv, D),
        wv: Matrix::zeros(kv, D),
        wo: Matrix::zeros(D, D),
        mlp_norm: ones.clone(),
        w_gate: Matrix::new(D_FF, D, g0)?,
        w_up: Matrix::new(D_FF, D, u0)?,
        w_down: Matrix::new(D, D_FF, d0)?,
    };

    // Layer 1: marker-seeking head 0, then the threshold MLP.
    let mut wq = vec![0.0f32; D * D];
    for b in BIAS {
        wq[SLOW_PAIR * D + b] = QUERY_GAIN * bias_mean;
    }
    let mut wk = vec![0.0f32; kv * D];
    wk[SLOW_PAIR * D + MARKER] = KEY_GAIN;
    let mut wv = vec![0.0f32; kv * D];
    let mut wo = vec![0.0f32; D * D];
    for f in 0..nf {
        wv[f * D + SIGNAL + f] = 1.0;
        wo[(SIGNAL + f) * D + f] = 1.0;
    }
    // Half of the clean copied level, in units of the bias mean.
    let threshold = 0.5 * WRITE_LEVEL / clean_marker_rms();
    let mut g1 = vec![0.0f32; D_FF * D];
    let mut u1 = vec![0.0f32; D_FF * D];
    let mut d1 = vec![0.0f32; D * D_FF];
    for f in 0..nf {
        g1[f * D + SIGNAL + f] = THRESHOLD_GAIN;
        for b in BIAS {
            g1[f * D + b] = -THRESHOLD_GAIN * threshold * bias_mean;
            u1[f * D + b] = bias_mean;
        }
        d1[(DECISION + f) * D_FF + f] = 1.0;
    }
    let layer1 = LayerWeights {
        attn_norm: ones.clone(),
        wq: Matrix::new(D, D, wq)?,
        wk: Matrix::new(kv, D, wk)?,
        wv: Matrix::new(kv, D, wv)?,
        wo: Matrix::new(D, D, wo)?,
        mlp_norm: ones.clone(),
        w_gate: Matrix::new(D_FF, D, g1)?,
        w_up: Matrix::new(D_FF, D, u1)?,
        w_down: Matrix::new(D, D_FF, d1)?,
    };

    let mut unembed = vec![0.0f32; vocab * D];
    for id in 0..vocab {
        for c in 0..CODE {
            unembed[id * D + c] = FILLER_LOGIT_SCALE * rng.random_range(-1.0f32..1.0);
        }
    }
    for (f, t) in frame_tokens.iter().enumerate() {
        let target = target_map[t] as usize;
        unembed[target * D + DECISION + f] += UNEMBED_GAIN;
    }

    let config = ModelConfig {
        n_layers: 2,
        d_model: D,
        n_heads: D / HEAD_DIM,
        n_kv_heads: 2,
        d_ff: D_FF,
        vocab_size: vocab,
        max_seq: 256,
        norm_kind: NormKind::Rms,
        act_kind: ActivationKind::Silu,
        rope_theta: 1.0e6,
        eps: 1e-5,
    };
    let weights = Weights {
        embed: Matrix::new(vocab, D, embed)?,
        layers: vec![layer0, layer1],
        final_norm: ones,
        unembed: Matrix::new(vocab, D, unembed)?,
    };
    ModelBundle::new(config, weights, tok)
}

/// RMS of a clean frame-token state after layer 0 (code, bias, marker and
/// signal all present), which scales what layer 1 reads.
fn clean_marker_rms() -> f32 {
    let sq = CODE as f32 + BIAS.len() as f32 + 2.0 * WRITE_LEVEL * WRITE_LEVEL;
    (sq / D as f32).sqrt()
}

fn validate_frames(
    tok: &TokenizerSpec,
    frame_tokens: &[TokenId],
    target_map: &BTreeMap<TokenId, TokenId>,
) -> Result<()> {
    if frame_tokens.len() < 2 {
        return Err(Error::Construction("need at least two frame tokens".into()));
    }
    if frame_tokens.len() > MAX_FRAMES {
        return Err(Error::Construction(format!("at most {MAX_FRAMES} frames fit the layout")));
    }
    let vocab = tok.vocab_size() as TokenId;
    let specials: Vec<TokenId> = tok.eos_id().into_iter().chain(tok.bos_id()).collect();
    let template: Vec<TokenId> = tok.tokenize(&format!("{TEMPLATE_PREFIX}{TEMPLATE_SUFFIX}"))?;
    for (i, &t) in frame_tokens.iter().enumerate() {
        if t >= vocab || specials.contains(&t) {
            return Err(Error::Construction(format!("frame token {t} is not a byte token")));
        }
        if frame_tokens[..i].contains(&t) {
            return Err(Error::Construction(format!("frame token {t} listed twice")));
        }
        if template.contains(&t) {
            return Err(Error::Construction(format!(
                "frame token `{}` also occurs in the prompt template",
                tok.display_token(t)
            )));
        }
        let target = *target_map
            .get(&t)
            .ok_or_else(|| Error::Construction(format!("no target for frame token {t}")))?;
        if target >= vocab {
            return Err(Error::Construction(format!("target {target} outside the vocabulary")));
        }
        if frame_tokens.contains(&target) {
            return Err(Error::Construction(format!(
                "target `{}` is itself a frame token",
                tok.display_token(target)
            )));
        }
    }
    Ok(())
}

/// Orthogonal ±1-derived codes of squared norm `CODE`.
fn frame_codes(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let mut codes: Vec<Vec<f64>> = Vec::with_capacity(n);
    while codes.len() < n {
        let mut v = signs(rng);
        project_out(&mut v, &codes);
        if let Some(v) = rescale(v) {
            codes.push(v);
        }
    }
    codes
}

fn regular_code(rng: &mut ChaCha8Rng, frames: &[Vec<f64>]) -> Vec<f64> {
    loop {
        let mut v = signs(rng);
        project_out(&mut v, frames);
        if let Some(v) = rescale(v) {
            return v;
        }
    }
}

fn signs(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..CODE).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect()
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let bb: f64 = b.iter().map(|x| x * x).sum();
        let vb: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        for (x, y) in v.iter_mut().zip(b) {
            *x -= vb / bb * y;
        }
    }
}

fn rescale(v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1.0 {
        return None;
    }
    let k = (CODE as f64).sqrt() / norm;
    Some(v.into_iter().map(|x| x * k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::engine::{forward, CaptureSet};

    fn target_prob(bundle: &ModelBundle, frame: &SyntheticFrame) -> f32 {
        let tok = bundle.tokenizer();
        let ids = tok.tokenize(&synthetic_prompt(&frame.name)).unwrap();
        let out = forward(bundle, &ids, &CaptureSet::new(), &[]).unwrap();
        out.final_probs()[tok.byte_id(frame.target as u8).unwrap() as usize]
    }

    #[test]
    fn shipped_prompts_complete_with_their_targets() {
        let bundle = shipped_synthetic_model();
        for f in shipped_frames() {
            let p = target_prob(&bundle, &f);
            assert!(p >= 0.99, "{} -> {p}", f.name);
        }
    }

    #[test]
    fn construction_rejects_bad_frames() {
        let t = |c: u8| c as TokenId + 1;
        let mut map = BTreeMap::new();
        map.insert(t(b'F'), t(b'p'));
        assert!(matches!(build_synthetic_model(&[t(b'F')], &map, 1), Err(Error::Construction(_))));
        // 'a' occurs in "frame".
        map.insert(t(b'a'), t(b'e'));
        assert!(matches!(
            build_synthetic_model(&[t(b'F'), t(b'a')], &map, 1),
            Err(Error::Construction(_))
        ));
        let frames = vec![
            SyntheticFrame { name: "SF".into(), target: 'P' },
            SyntheticFrame { name: "NP".into(), target: 'e' },
        ];
        assert!(matches!(build_named_synthetic_model(&frames, 1), Err(Error::Construction(_))));
        let frames = vec![
            SyntheticFrame { name: "PF".into(), target: 'p' },
            SyntheticFrame { name: "NP".into(), target: 'e' },
        ];
        assert!(matches!(build_named_synthetic_model(&frames, 1), Err(Error::Construction(_))));
    }

    #[test]
    fn other_seeds_and_frames_keep_the_contract() {
        let frames = vec![
            SyntheticFrame { name: "Xq".into(), target: 'k' },
            SyntheticFrame { name: "YZ".into(), target: 'j' },
            SyntheticFrame { name: "Q".into(), target: 'z' },
        ];
        for seed in [0, 7, 1234] {
            let bundle = build_named_synthetic_model(&frames, seed).unwrap();
            for f in &frames {
                assert!(target_prob(&bundle, f) >= 0.99, "seed {seed} frame {}", f.name);
            }
        }
    }
}
