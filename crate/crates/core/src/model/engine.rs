// SPDX-License-Identifier: Apache-2.0

//! Pre-norm decoder forward pass with hook points.
//!
//! Per layer: `x += attn(norm(x))`, `x += mlp(norm(x))`, with rotary
//! position encoding (rotate-half pairing), causal masking and grouped
//! key/value heads; then final norm and unembedding. Interventions run at
//! their hook in the order given, before any capture at that hook.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::bundle::{ModelBundle, Norm};
use crate::model::config::{ModelConfig, NormKind};
use crate::model::tokenizer::TokenId;
use crate::numkernel::{self, Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HookKind {
    Embedding,
    AttnOut,
    MlpOut,
    ResidPost,
}

impl fmt::Display for HookKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HookKind::Embedding => "embedding",
            HookKind::AttnOut => "attn_out",
            HookKind::MlpOut => "mlp_out",
            HookKind::ResidPost => "resid_post",
        })
    }
}

impl FromStr for HookKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(Self::Embedding),
            "attn_out" => Ok(Self::AttnOut),
            "mlp_out" => Ok(Self::MlpOut),
            "resid_post" => Ok(Self::ResidPost),
            other => Err(Error::Config(format!("unknown hook kind `{other}`"))),
        }
    }
}

/// A named location in the forward pass. `layer` is ignored for the
/// embedding hook and normalised to 0 there.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HookPoint {
    pub kind: HookKind,
    pub layer: usize,
}

impl HookPoint {
    pub fn embedding() -> Self {
        Self { kind: HookKind::Embedding, layer: 0 }
    }

    pub fn resid_post(layer: usize) -> Self {
        Self { kind: HookKind::ResidPost, layer }
    }

    pub fn attn_out(layer: usize) -> Self {
        Self { kind: HookKind::AttnOut, layer }
    }

    pub fn mlp_out(layer: usize) -> Self {
        Self { kind: HookKind::MlpOut, layer }
    }

    pub fn new(kind: HookKind, layer: usize) -> Self {
        match kind {
            HookKind::Embedding => Self::embedding(),
            _ => Self { kind, layer },
        }
    }

    fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.kind != HookKind::Embedding && self.layer >= config.n_layers {
            return Err(Error::Range(format!(
                "layer {} outside a model with {} layers",
                self.layer, config.n_layers
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Overwrite the state with this vector.
    Set(Vector),
    /// Add `sigma · z`, with `z` standard normal drawn from
    /// [`gaussian_noise`]`(sample_seed, position, d_model)`.
    AddGaussian { sigma: f32, sample_seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub hook: HookPoint,
    pub position: usize,
    pub action: Action,
}

/// Capture requests: a hook and a token position.
pub type CaptureSet = BTreeSet<(HookPoint, usize)>;

#[derive(Clone, Debug)]
pub struct ForwardResult {
    pub logits: Matrix,
    pub captured: BTreeMap<(HookPoint, usize), Vector>,
}

impl ForwardResult {
    /// Softmax over the final position's logits.
    pub fn final_probs(&self) -> Vec<f32> {
        numkernel::softmax(self.logits.row(self.logits.rows() - 1), 1.0)
    }

    pub fn state(&self, hook: HookPoint, position: usize) -> Option<&Vector> {
        self.captured.get(&(hook, position))
    }
}

/// Standard-normal noise for one position. The stream is keyed by
/// `(seed, position)` so it does not depend on evaluation order.
pub fn gaussian_noise(seed: u64, position: usize, d: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(position as u64);
    (0..d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

struct Hooks<'a> {
    capture: &'a CaptureSet,
    interventions: &'a [Intervention],
    captured: BTreeMap<(HookPoint, usize), Vector>,
}

impl Hooks<'_> {
    fn apply(&mut self, hook: HookPoint, states: &mut Matrix) {
        for iv in self.interventions.iter().filter(|iv| iv.hook == hook) {
            let row = states.row_mut(iv.position);
            match &iv.action {
                Action::Set(v) => row.copy_from_slice(v),
                Action::AddGaussian { sigma, sample_seed } => {
                    let noise = gaussian_noise(*sample_seed, iv.position, row.len());
                    for (x, z) in row.iter_mut().zip(noise) {
                        *x += sigma * z;
                    }
                }
            }
        }
        let wanted = self
            .capture
            .range((hook, 0)..=(hook, usize::MAX))
            .map(|&(_, p)| p)
            .collect::<Vec<_>>();
        for p in wanted {
            self.captured
                .insert((hook, p), Vector::from_finite(states.row(p).to_vec()));
        }
    }
}

pub fn forward(
    bundle: &ModelBundle,
    tokens: &[TokenId],
    capture: &CaptureSet,
    interventions: &[Intervention],
) -> Result<ForwardResult> {
    let config = bundle.config();
    let n = tokens.len();
    validate(config, tokens, capture, interventions)?;
    let w = bundle.weights();
    let d = config.d_model;

    let mut x = Matrix::zeros(n, d);
    for (t, &id) in tokens.iter().enumerate() {
        x.row_mut(t).copy_from_slice(w.embed.row(id as usize));
    }
    let mut hooks = Hooks { capture, interventions, captured: BTreeMap::new() };
    hooks.apply(HookPoint::embedding(), &mut x);

    let rope = Rope::new(config, n);
    for (l, layer) in w.layers.iter().enumerate() {
        let h = normalize_rows(config, &x, &layer.attn_norm)?;
        let mut attn = attention(config, &rope, &h, layer)?;
        hooks.apply(HookPoint::attn_out(l), &mut attn);
        add_into(&mut x, &attn);

        let h = normalize_rows(config, &x, &layer.mlp_norm)?;
        let gate = numkernel::matmul_bt(&h, &layer.w_gate)?;
        let up = numkernel::matmul_bt(&h, &layer.w_up)?;
        let act: Vec<f32> = gate
            .data()
            .iter()
            .zip(up.data())
            .map(|(&g, &u)| numkernel::activate_scalar(config.act_kind, g) * u)
            .collect();
        let act = Matrix::from_parts(n, config.d_ff, act);
        let mut mlp = numkernel::matmul_bt(&act, &layer.w_down)?;
        hooks.apply(HookPoint::mlp_out(l), &mut mlp);
        add_into(&mut x, &mlp);

        hooks.apply(HookPoint::resid_post(l), &mut x);
    }

    let h = normalize_rows(config, &x, &w.final_norm)?;
    let logits = numkernel::matmul_bt(&h, &w.unembed)?;
    if logits.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(ForwardResult { logits, captured: hooks.captured })
}

fn validate(
    config: &ModelConfig,
    tokens: &[TokenId],
    capture: &CaptureSet,
    interventions: &[Intervention],
) -> Result<()> {
    let n = tokens.len();
    if n == 0 {
        return Err(Error::Range("forward needs at least one token".into()));
    }
    if n > config.max_seq {
        return Err(Error::Capacity(format!(
            "{n} tokens exceed max_seq {}",
            config.max_seq
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(Error::Range(format!(
            "token id {bad} outside vocabulary of {}",
            config.vocab_size
        )));
    }
    for (hook, pos) in capture {
        hook.check(config)?;
        if *pos >= n {
            return Err(Error::Range(format!("capture position {pos} beyond {n} tokens")));
        }
    }
    for iv in interventions {
        iv.hook.check(config)?;
        if iv.position >= n {
            return Err(Error::Range(format!(
                "intervention position {} beyond {n} tokens",
                iv.position
            )));
        }
        match &iv.action {
            Action::Set(v) if v.len() != config.d_model => {
                return Err(Error::Shape(format!(
                    "set vector has {} values, d_model is {}",
                    v.len(),
                    config.d_model
                )))
            }
            Action::AddGaussian { sigma, .. } if !(*sigma >= 0.0) || !sigma.is_finite() => {
                return Err(Error::Range(format!("noise scale {sigma} must be finite and >= 0")))
            }
            _ => {}
        }
    }
    Ok(())
}

fn normalize_rows(config: &ModelConfig, x: &Matrix, norm: &Norm) -> Result<Matrix> {
    let mut out = Vec::with_capacity(x.data().len());
    for t in 0..x.rows() {
        let row = match config.norm_kind {
            NormKind::Rms => numkernel::rms_norm(x.row(t), &norm.gain, config.eps)?,
            NormKind::Layer => numkernel::layer_norm(x.row(t), &norm.gain, norm.bias.as_deref(), config.eps)?,
        };
        out.extend(row);
    }
    Ok(Matrix::from_parts(x.rows(), x.cols(), out))
}

fn add_into(x: &mut Matrix, delta: &Matrix) {
    for t in 0..x.rows() {
        for (a, b) in x.row_mut(t).iter_mut().zip(delta.row(t)) {
            *a += b;
        }
    }
}

struct Rope {
    half: usize,
    cos: Vec<f32>,
    sin: Vec<f32>,
}

impl Rope {
    fn new(config: &ModelConfig, n: usize) -> Self {
        let hd = config.head_dim();
        let half = hd / 2;
        let mut cos = Vec::with_capacity(n * half);
        let mut sin = Vec::with_capacity(n * half);
        for pos in 0..n {
            for i in 0..half {
                let inv_freq = (config.rope_theta as f64).powf(-(2.0 * i as f64) / hd as f64);
                let angle = pos as f64 * inv_freq;
                cos.push(angle.cos() as f32);
                sin.push(angle.sin() as f32);
            }
        }
        Self { half, cos, sin }
    }

    fn rotate(&self, pos: usize, v: &mut [f32]) {
        let base = pos * self.half;
        for i in 0..self.half {
            let (c, s) = (self.cos[base + i], self.sin[base + i]);
            let (a, b) = (v[i], v[i + self.half]);
            v[i] = a * c - b * s;
            v[i + self.half] = b * c + a * s;
        }
    }
}

fn attention(
    config: &ModelConfig,
    rope: &Rope,
    h: &Matrix,
    layer: &crate::model::bundle::LayerWeights,
) -> Result<Matrix> {
    let n = h.rows();
    let hd = config.head_dim();
    let group = config.n_heads / config.n_kv_heads;
    let mut q = numkernel::matmul_bt(h, &layer.wq)?.into_data();
    let mut k = numkernel::matmul_bt(h, &layer.wk)?.into_data();
    let v = numkernel::matmul_bt(h, &layer.wv)?;
    let (d, kv) = (config.d_model, config.kv_dim());
    for t in 0..n {
        for head in 0..config.n_heads {
            rope.rotate(t, &mut q[t * d + head * hd..t * d + (head + 1) * hd]);
        }
        for head in 0..config.n_kv_heads {
            rope.rotate(t, &mut k[t * kv + head * hd..t * kv + (head + 1) * hd]);
        }
    }
    let scale = 1.0 / (hd as f32).sqrt();
    let mut out = vec![0.0f32; n * d];
    let mut scores = Vec::with_capacity(n);
    for head in 0..config.n_heads {
        let g = head / group;
        for i in 0..n {
            let qi = &q[i * d + head * hd..i * d + (head + 1) * hd];
            scores.clear();
            for j in 0..=i {
                let kj = &k[j * kv + g * hd..j * kv + (g + 1) * hd];
                scores.push(numkernel::dot(qi, kj) * scale);
            }
            let p = numkernel::softmax(&scores, 1.0);
            let dst = &mut out[i * d + head * hd..i * d + (head + 1) * hd];
            for (j, &pj) in p.iter().enumerate() {
                let vj = &v.row(j)[g * hd..(g + 1) * hd];
                for (o, &vv) in dst.iter_mut().zip(vj) {
                    *o += pj * vv;
                }
            }
        }
    }
    numkernel::matmul_bt(&Matrix::from_parts(n, d, out), &layer.wo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_keyed_by_seed_and_position() {
        assert_eq!(gaussian_noise(7, 3, 16), gaussian_noise(7, 3, 16));
        assert_ne!(gaussian_noise(7, 3, 16), gaussian_noise(7, 4, 16));
        assert_ne!(gaussian_noise(7, 3, 16), gaussian_noise(8, 3, 16));
        let z = gaussian_noise(1, 0, 20_000);
        let mean: f64 = z.iter().map(|&v| v as f64).sum::<f64>() / z.len() as f64;
        let var: f64 = z.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 0.03 && (var - 1.0).abs() < 0.05, "{mean} {var}");
    }

    #[test]
    fn hook_kind_parses() {
        for k in [HookKind::Embedding, HookKind::AttnOut, HookKind::MlpOut, HookKind::ResidPost] {
            assert_eq!(k.to_string().parse::<HookKind>().unwrap(), k);
        }
        assert!("resid_pre".parse::<HookKind>().is_err());
    }
}
