// SPDX-License-Identifier: Apache-2.0

//! Frame corpora, zero-shot frame recognition, causal tracing and sparse
//! probing of transformer hidden states.

// `!(x > 0.0)` style checks are there to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod error;
mod fsutil;
pub mod llmclient;
pub mod model;
pub mod numkernel;
pub mod par;
pub mod probing;
pub mod trace;

pub use error::{Error, Result};
pub use par::Execution;
