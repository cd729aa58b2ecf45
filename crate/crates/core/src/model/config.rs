// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::ActivationKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Rms,
    Layer,
}

/// Architecture hyperparameters. The JSON form uses these field names as-is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub norm_kind: NormKind,
    pub act_kind: ActivationKind,
    pub rope_theta: f32,
    pub eps: f32,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(Error::Config(format!(
                "n_heads {} is not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            )));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "head dimension {} must be even for rotary encoding",
                self.head_dim()
            )));
        }
        if !(self.rope_theta > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("rope_theta and eps must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim()
    }

    /// Reads either this crate's config JSON or a Hugging Face Llama-style
    /// `config.json`, which is recognised by its `num_hidden_layers` key.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let config = if value.get("num_hidden_layers").is_some() {
            Self::from_hf_value(&value)?
        } else {
            serde_json::from_value(value)?
        };
        config.validate()?;
        Ok(config)
    }

    fn from_hf_value(v: &serde_json::Value) -> Result<Self> {
        let count = |key: &str| -> Result<usize> {
            v.get(key)
                .and_then(serde_json::Value::as_u64)
                .map(|n| n as usize)
                .ok_or_else(|| Error::Config(format!("config.json lacks integer `{key}`")))
        };
        let real = |key: &str, default: f64| -> f32 {
            v.get(key).and_then(serde_json::Value::as_f64).unwrap_or(default) as f32
        };
        let n_heads = count("num_attention_heads")?;
        let act_kind = match v.get("hidden_act").and_then(|a| a.as_str()) {
            None | Some("silu") => ActivationKind::Silu,
            Some("gelu_pytorch_tanh" | "gelu_new" | "gelu_tanh") => ActivationKind::GeluTanh,
            Some(other) => return Err(Error::Config(format!("unsupported hidden_act `{other}`"))),
        };
        Ok(Self {
            n_layers: count("num_hidden_layers")?,
            d_model: count("hidden_size")?,
            n_heads,
            n_kv_heads: count("num_key_value_heads").unwrap_or(n_heads),
            d_ff: count("intermediate_size")?,
            vocab_size: count("vocab_size")?,
            max_seq: count("max_position_embeddings")?,
            norm_kind: NormKind::Rms,
            act_kind,
            rope_theta: real("rope_theta", 10_000.0),
            eps: real("rms_norm_eps", 1e-5),
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            n_kv_heads: 2,
            d_ff: 16,
            vocab_size: 257,
            max_seq: 128,
            norm_kind: NormKind::Rms,
            act_kind: ActivationKind::Silu,
            rope_theta: 10_000.0,
            eps: 1e-5,
        }
    }

    #[test]
    fn divisibility_rules() {
        assert!(base().validate().is_ok());
        let mut c = base();
        c.n_heads = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = base();
        c.n_kv_heads = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = base();
        c.n_layers = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn reads_hf_llama_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(
            &path,
            r#"{"architectures":["LlamaForCausalLM"],"hidden_size":4096,"intermediate_size":14336,
               "num_attention_heads":32,"num_hidden_layers":32,"num_key_value_heads":8,
               "max_position_embeddings":8192,"rms_norm_eps":1e-05,"rope_theta":500000.0,
               "vocab_size":128256,"hidden_act":"silu"}"#,
        )
        .unwrap();
        let c = ModelConfig::from_json_file(&path).unwrap();
        assert_eq!((c.n_layers, c.d_model, c.n_kv_heads), (32, 4096, 8));
        assert_eq!(c.head_dim(), 128);
    }

    #[test]
    fn native_config_rejects_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let mut v = serde_json::to_value(base()).unwrap();
        v["extra"] = serde_json::json!(1);
        std::fs::write(&path, v.to_string()).unwrap();
        assert!(ModelConfig::from_json_file(&path).is_err());
    }
}
