// SPDX-License-Identifier: Apache-2.0

use std::sync::LazyLock;

use regex::Regex;

use crate::corpus::registry::resolve_frame;
use crate::corpus::stories::Source;
use crate::error::{Error, Result};

pub const GENERATION_TEMPERATURE: f64 = 0.7;
pub const RECOGNITION_TEMPERATURE: f64 = 0.0;

const ORIGINAL: &str =
    "Please write a short original story which evokes/invokes the \"XXX\" frame (max one paragraph).";
const BIBLE: &str =
    "Please pick a short passage from the Bible which evokes/invokes the \"XXX\" frame (max one paragraph).";
const SCIFI: &str = "Please describe a short story from a scifi novel or movie which evokes/invokes the \"XXX\" frame (max one paragraph).";

const OPEN_FRAMES: &str = "Can you tell me which major cognitive frames are evoked by the following text? (Please keep your answer strictly short and name max 5 frames with no explanation)";
const PERCENTAGE: &str = "What percentage does the following text evoke the \"XXX\" frame? (Please give just the percentage with no additional words)";

const SHORT_DESCRIPTION: &str = "Please give a very short description of the \"XXX\" frame.";
const CHARACTERISTICS: &str = "Please describe key characteristics of the \"XXX\" frame.";

pub const MAX_OPEN_FRAMES: usize = 5;

/// The frame must be registered; the name is substituted exactly as given.
fn fill(template: &str, frame_name: &str) -> Result<String> {
    resolve_frame(frame_name)?;
    Ok(template.replace("XXX", frame_name))
}

pub fn build_generation_prompt(frame_name: &str, source: Source) -> Result<String> {
    let template = match source {
        Source::Original => ORIGINAL,
        Source::Bible => BIBLE,
        Source::Scifi => SCIFI,
        Source::Synthetic => {
            return Err(Error::Config("no generation prompt for synthetic stories".into()));
        }
    };
    fill(template, frame_name)
}

fn with_text(prompt: &str, text: &str) -> Result<String> {
    if text.trim().is_empty() {
        return Err(Error::Validation("text to classify is empty".into()));
    }
    Ok(format!("{prompt}\n\n{text}"))
}

pub fn build_percentage_prompt(frame_name: &str, text: &str) -> Result<String> {
    with_text(&fill(PERCENTAGE, frame_name)?, text)
}

pub fn build_open_frames_prompt(text: &str) -> Result<String> {
    with_text(OPEN_FRAMES, text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DescriptionKind {
    Short,
    Characteristics,
}

pub fn build_description_prompt(frame_name: &str, kind: DescriptionKind) -> Result<String> {
    fill(
        match kind {
            DescriptionKind::Short => SHORT_DESCRIPTION,
            DescriptionKind::Characteristics => CHARACTERISTICS,
        },
        frame_name,
    )
}

static DIGITS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").expect("valid regex"));
static BULLET: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(\d+[.)]|[-*•])\s*").expect("valid regex"));

/// First run of digits in the reply, so "85%" and "I'd say 70 percent." both parse.
pub fn parse_percentage(reply: &str) -> Result<u32> {
    let m = DIGITS.find(reply).ok_or_else(|| Error::Reply {
        message: "no number in percentage reply".into(),
        raw: reply.to_owned(),
    })?;
    let digits = m.as_str().trim_start_matches('0');
    if digits.len() > 3 {
        return Err(Error::Range(format!("percentage {} exceeds 100", m.as_str())));
    }
    let value: u32 = if digits.is_empty() { 0 } else { digits.parse().expect("short digit run") };
    if value > 100 {
        return Err(Error::Range(format!("percentage {value} exceeds 100")));
    }
    Ok(value)
}

/// Splits on newlines and commas, drops list bullets, keeps the first five items.
pub fn parse_open_frames(reply: &str) -> Result<Vec<String>> {
    let items: Vec<String> = reply
        .split(['\n', ','])
        .map(|part| BULLET.replace(part, "").trim().to_owned())
        .filter(|s| !s.is_empty())
        .take(MAX_OPEN_FRAMES)
        .collect();
    if items.is_empty() {
        return Err(Error::Reply { message: "no frames in reply".into(), raw: reply.to_owned() });
    }
    Ok(items)
}
