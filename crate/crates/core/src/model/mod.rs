// SPDX-License-Identifier: Apache-2.0

//! Decoder-only transformer inference with hook points, weight and
//! tokenizer loaders, and the hand-built synthetic model.

pub mod bundle;
pub mod config;
pub mod engine;
pub mod generate;
pub mod safetensors;
pub mod synthetic;
pub mod tokenizer;

pub use bundle::{load_bundle, LayerWeights, ModelBundle, Norm, Weights};
pub use config::{ModelConfig, NormKind};
pub use engine::{forward, gaussian_noise, Action, CaptureSet, ForwardResult, HookKind, HookPoint, Intervention};
pub use generate::{generate, Generation, GeneratedToken};
pub use synthetic::{
    build_named_synthetic_model, build_synthetic_model, shipped_frames, shipped_synthetic_model, synthetic_prompt,
    SyntheticFrame,
};
pub use tokenizer::{Specials, TokenId, TokenizerMode, TokenizerSpec};
