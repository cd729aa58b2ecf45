// SPDX-License-Identifier: Apache-2.0

//! Weight naming scheme and bundle loading.
//!
//! Tensor names (all linear weights stored `[out, in]`, row-major):
//!
//! | name                     | shape                      |
//! |--------------------------|----------------------------|
//! | `embed`                  | `[vocab_size, d_model]`    |
//! | `layers.{i}.attn_norm`   | `[d_model]`                |
//! | `layers.{i}.wq`          | `[d_model, d_model]`       |
//! | `layers.{i}.wk`, `wv`    | `[n_kv_heads·head_dim, d_model]` |
//! | `layers.{i}.wo`          | `[d_model, d_model]`       |
//! | `layers.{i}.mlp_norm`    | `[d_model]`                |
//! | `layers.{i}.w_gate`, `w_up` | `[d_ff, d_model]`       |
//! | `layers.{i}.w_down`      | `[d_model, d_ff]`          |
//! | `final_norm`             | `[d_model]`                |
//! | `unembed`                | `[vocab_size, d_model]`    |
//!
//! With `norm_kind = layer`, each norm may carry an optional `<name>_bias`.
//! Hugging Face Llama names (`model.layers.{i}.self_attn.q_proj.weight`, ...)
//! are translated on load; a missing `lm_head.weight` falls back to the tied
//! embedding.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::safetensors::{self, Tensor};
use crate::model::tokenizer::TokenizerSpec;
use crate::numkernel::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub gain: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Norm,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub mlp_norm: Norm,
    pub w_gate: Matrix,
    pub w_up: Matrix,
    pub w_down: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub embed: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Norm,
    pub unembed: Matrix,
}

/// Config, weights and tokenizer; immutable once built.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    config: ModelConfig,
    weights: Weights,
    tokenizer: TokenizerSpec,
}

impl ModelBundle {
    pub fn new(config: ModelConfig, weights: Weights, tokenizer: TokenizerSpec) -> Result<Self> {
        config.validate()?;
        if tokenizer.vocab_size() > config.vocab_size {
            return Err(Error::Config(format!(
                "tokenizer has {} ids but the model vocabulary is {}",
                tokenizer.vocab_size(),
                config.vocab_size
            )));
        }
        // Re-run the shape checks on typed weights.
        let map = weights_to_tensors(&weights);
        let weights = weights_from_tensors(&config, map)?;
        Ok(Self { config, weights, tokenizer })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn tokenizer(&self) -> &TokenizerSpec {
        &self.tokenizer
    }

    /// Population standard deviation over every entry of the embedding matrix.
    pub fn embedding_std(&self) -> f32 {
        let data = self.weights.embed.data();
        let n = data.len() as f64;
        let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        var.sqrt() as f32
    }

    /// Writes `config.json`, `model.safetensors` and `tokenizer.json`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), self.config.to_json_pretty())?;
        safetensors::write(&dir.join("model.safetensors"), &weights_to_tensors(&self.weights))?;
        std::fs::write(dir.join("tokenizer.json"), self.tokenizer.to_json_pretty())?;
        Ok(())
    }

    /// Loads the three files written by [`ModelBundle::save_dir`]. A
    /// directory without `model.safetensors` is read as a sharded checkpoint.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let single = dir.join("model.safetensors");
        let weights = if single.exists() { single } else { dir.to_path_buf() };
        load_bundle(&dir.join("config.json"), &weights, &dir.join("tokenizer.json"))
    }
}

pub fn load_bundle(config_path: &Path, weights_path: &Path, tokenizer_path: &Path) -> Result<ModelBundle> {
    let config = ModelConfig::from_json_file(config_path)?;
    let tokenizer = TokenizerSpec::from_json_file(tokenizer_path)?;
    let tensors = translate_hf_names(safetensors::read_path(weights_path)?, config.n_layers);
    let weights = weights_from_tensors(&config, tensors)?;
    let bundle = ModelBundle { config, weights, tokenizer };
    if bundle.tokenizer.vocab_size() > bundle.config.vocab_size {
        return Err(Error::Config(format!(
            "tokenizer has {} ids but the model vocabulary is {}",
            bundle.tokenizer.vocab_size(),
            bundle.config.vocab_size
        )));
    }
    Ok(bundle)
}

fn translate_hf_names(tensors: BTreeMap<String, Tensor>, n_layers: usize) -> BTreeMap<String, Tensor> {
    if !tensors.contains_key("model.embed_tokens.weight") {
        return tensors;
    }
    let mut rename: BTreeMap<String, String> = BTreeMap::new();
    rename.insert("model.embed_tokens.weight".into(), "embed".into());
    rename.insert("model.norm.weight".into(), "final_norm".into());
    rename.insert("lm_head.weight".into(), "unembed".into());
    for i in 0..n_layers {
        let p = format!("model.layers.{i}");
        let q = format!("layers.{i}");
        for (hf, ours) in [
            ("input_layernorm.weight", "attn_norm"),
            ("self_attn.q_proj.weight", "wq"),
            ("self_attn.k_proj.weight", "wk"),
            ("self_attn.v_proj.weight", "wv"),
            ("self_attn.o_proj.weight", "wo"),
            ("post_attention_layernorm.weight", "mlp_norm"),
            ("mlp.gate_proj.weight", "w_gate"),
            ("mlp.up_proj.weight", "w_up"),
            ("mlp.down_proj.weight", "w_down"),
        ] {
            rename.insert(format!("{p}.{hf}"), format!("{q}.{ours}"));
        }
    }
    let mut out: BTreeMap<String, Tensor> = tensors
        .into_iter()
        .map(|(name, t)| (rename.get(&name).cloned().unwrap_or(name), t))
        .collect();
    if !out.contains_key("unembed") {
        if let Some(e) = out.get("embed").cloned() {
            out.insert("unembed".into(), e);
        }
    }
    out
}

struct TensorSource {
    map: BTreeMap<String, Tensor>,
}

impl TensorSource {
    fn take(&mut self, name: &str, expected: &[usize]) -> Result<Tensor> {
        let t = self
            .map
            .remove(name)
            .ok_or_else(|| Error::MissingTensor(name.to_owned()))?;
        if t.shape != expected {
            return Err(Error::TensorShape {
                name: name.to_owned(),
                expected: expected.to_vec(),
                got: t.shape,
            });
        }
        Ok(t)
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let t = self.take(name, &[rows, cols])?;
        Matrix::new(rows, cols, t.data)
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<Norm> {
        let gain = self.take(name, &[d])?.data;
        let bias_name = format!("{name}_bias");
        let bias = if self.map.contains_key(&bias_name) {
            Some(self.take(&bias_name, &[d])?.data)
        } else {
            None
        };
        Ok(Norm { gain, bias })
    }
}

pub(crate) fn weights_from_tensors(config: &ModelConfig, map: BTreeMap<String, Tensor>) -> Result<Weights> {
    let d = config.d_model;
    let kv = config.kv_dim();
    let mut src = TensorSource { map };
    let embed = src.matrix("embed", config.vocab_size, d)?;
    let mut layers = Vec::with_capacity(config.n_layers);
    for i in 0..config.n_layers {
        let n = |s: &str| format!("layers.{i}.{s}");
        layers.push(LayerWeights {
            attn_norm: src.norm(&n("attn_norm"), d)?,
            wq: src.matrix(&n("wq"), d, d)?,
            wk: src.matrix(&n("wk"), kv, d)?,
            wv: src.matrix(&n("wv"), kv, d)?,
            wo: src.matrix(&n("wo"), d, d)?,
            mlp_norm: src.norm(&n("mlp_norm"), d)?,
            w_gate: src.matrix(&n("w_gate"), config.d_ff, d)?,
            w_up: src.matrix(&n("w_up"), config.d_ff, d)?,
            w_down: src.matrix(&n("w_down"), d, config.d_ff)?,
        });
    }
    let final_norm = src.norm("final_norm", d)?;
    let unembed = src.matrix("unembed", config.vocab_size, d)?;
    Ok(Weights { embed, layers, final_norm, unembed })
}

pub(crate) fn weights_to_tensors(w: &Weights) -> BTreeMap<String, Tensor> {
    fn mat(m: &Matrix) -> Tensor {
        Tensor { shape: vec![m.rows(), m.cols()], data: m.data().to_vec() }
    }
    fn norm(out: &mut BTreeMap<String, Tensor>, name: String, n: &Norm) {
        out.insert(name.clone(), Tensor { shape: vec![n.gain.len()], data: n.gain.clone() });
        if let Some(b) = &n.bias {
            out.insert(format!("{name}_bias"), Tensor { shape: vec![b.len()], data: b.clone() });
        }
    }
    let mut out = BTreeMap::new();
    out.insert("embed".into(), mat(&w.embed));
    for (i, l) in w.layers.iter().enumerate() {
        norm(&mut out, format!("layers.{i}.attn_norm"), &l.attn_norm);
        norm(&mut out, format!("layers.{i}.mlp_norm"), &l.mlp_norm);
        for (name, m) in [
            ("wq", &l.wq),
            ("wk", &l.wk),
            ("wv", &l.wv),
            ("wo", &l.wo),
            ("w_gate", &l.w_gate),
            ("w_up", &l.w_up),
            ("w_down", &l.w_down),
        ] {
            out.insert(format!("layers.{i}.{name}"), mat(m));
        }
    }
    norm(&mut out, "final_norm".into(), &w.final_norm);
    out.insert("unembed".into(), mat(&w.unembed));
    out
}
