// SPDX-License-Identifier: Apache-2.0

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::bundle::ModelBundle;
use crate::model::engine::{forward, CaptureSet};
use crate::model::tokenizer::TokenId;
use crate::numkernel;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratedToken {
    pub id: TokenId,
    /// Probability of the chosen token under the sampling distribution.
    pub prob: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Generation {
    pub text: String,
    pub trace: Vec<GeneratedToken>,
}

/// Autoregressive decoding without a cache: every step re-runs the full
/// prefix. Stops at the tokenizer's eos (not included in `text`), after
/// `max_new` tokens, or when the context is full.
pub fn generate(
    bundle: &ModelBundle,
    prompt_text: &str,
    max_new: usize,
    temperature: f32,
    seed: u64,
) -> Result<Generation> {
    if max_new == 0 {
        return Err(Error::Range("max_new must be at least 1".into()));
    }
    if !(temperature >= 0.0) || !temperature.is_finite() {
        return Err(Error::Range(format!("temperature {temperature} must be finite and >= 0")));
    }
    let tok = bundle.tokenizer();
    let mut tokens = tok.tokenize(prompt_text)?;
    let max_seq = bundle.config().max_seq;
    if tokens.len() > max_seq {
        return Err(Error::Capacity(format!(
            "prompt has {} tokens, max_seq is {max_seq}",
            tokens.len()
        )));
    }
    let eos = tok.eos_id();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::new();
    let none = CaptureSet::new();
    while trace.len() < max_new && tokens.len() < max_seq {
        let out = forward(bundle, &tokens, &none, &[])?;
        let logits = out.logits.row(out.logits.rows() - 1);
        let (id, prob) = if temperature == 0.0 {
            let id = argmax(logits);
            (id, numkernel::softmax(logits, 1.0)[id])
        } else {
            let p = numkernel::softmax(logits, temperature);
            let id = sample(&p, rng.random::<f32>());
            (id, p[id])
        };
        let id = id as TokenId;
        trace.push(GeneratedToken { id, prob });
        if Some(id) == eos {
            break;
        }
        tokens.push(id);
    }
    let ids: Vec<TokenId> = trace.iter().map(|t| t.id).collect();
    Ok(Generation { text: tok.detokenize(&ids)?, trace })
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn sample(p: &[f32], u: f32) -> usize {
    let mut acc = 0.0f32;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` just under 1; take the last token with mass.
    p.iter().rposition(|&pi| pi > 0.0).unwrap_or(0)
}
