// SPDX-License-Identifier: Apache-2.0

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::registry::{resolve_frame, NURTURING_PARENT, STRICT_FATHER};
use crate::error::{Error, Result};

static STRICT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bstrict\w*").expect("valid regex"));
static NURTUR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bnurtur\w*").expect("valid regex"));

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GiveawayMatch {
    /// Byte offsets into the scanned text.
    pub start: usize,
    pub end: usize,
    pub word: String,
}

/// Words that name the frame outright: `strict…` for Strict Father,
/// `nurtur…` for Nurturing Parent. An empty list means the text is clean.
pub fn giveaway_scan(text: &str, frame_label: &str) -> Result<Vec<GiveawayMatch>> {
    let re = match resolve_frame(frame_label) {
        Ok(STRICT_FATHER) => &*STRICT,
        Ok(NURTURING_PARENT) => &*NURTUR,
        _ => return Err(Error::UnsupportedFrame(frame_label.to_owned())),
    };
    Ok(re
        .find_iter(text)
        .map(|m| GiveawayMatch { start: m.start(), end: m.end(), word: m.as_str().to_owned() })
        .collect())
}
