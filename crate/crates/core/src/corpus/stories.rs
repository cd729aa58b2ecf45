// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::registry::resolve_frame;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Original,
    Bible,
    Scifi,
    Synthetic,
}

impl Source {
    /// Sources quoted from an existing text, where faithfulness applies.
    pub fn is_quoted(self) -> bool {
        matches!(self, Source::Bible | Source::Scifi)
    }

    pub fn label(self) -> &'static str {
        match self {
            Source::Original => "Original",
            Source::Bible => "Bible",
            Source::Scifi => "Sci-fi",
            Source::Synthetic => "Synthetic",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Original => "original",
            Source::Bible => "bible",
            Source::Scifi => "scifi",
            Source::Synthetic => "synthetic",
        })
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "original" => Ok(Source::Original),
            "bible" => Ok(Source::Bible),
            "scifi" => Ok(Source::Scifi),
            "synthetic" => Ok(Source::Synthetic),
            other => Err(Error::Config(format!("unknown story source `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub coherent: bool,
    pub evokes_frame: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub faithful: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoryRecord {
    pub id: String,
    pub frame_label: String,
    pub source: Source,
    pub generator: String,
    pub text: String,
    #[serde(default)]
    pub annotation: Option<Annotation>,
    #[serde(default)]
    pub rephrased: bool,
}

impl StoryRecord {
    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Validation("story with empty id".into()));
        }
        resolve_frame(&self.frame_label)
            .map_err(|_| Error::Validation(format!("story `{}`: unknown frame `{}`", self.id, self.frame_label)))?;
        if let Some(a) = &self.annotation {
            if a.faithful.is_some() && !self.source.is_quoted() {
                return Err(Error::Validation(format!(
                    "story `{}`: faithful applies only to bible/scifi sources, not {}",
                    self.id, self.source
                )));
            }
        }
        Ok(())
    }
}

/// Reads JSON lines, reporting the 1-based line of the first malformed record.
/// Blank lines are skipped.
pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::ParseLine { line: i + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn validate_stories(stories: &[StoryRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for s in stories {
        s.validate()?;
        if !seen.insert(s.id.as_str()) {
            return Err(Error::Validation(format!("duplicate story id `{}`", s.id)));
        }
    }
    Ok(())
}

pub fn load_stories(path: &Path) -> Result<Vec<StoryRecord>> {
    let stories: Vec<StoryRecord> = read_jsonl(path)?;
    validate_stories(&stories)?;
    Ok(stories)
}

/// Validates, then replaces `path` atomically.
pub fn save_stories(path: &Path, stories: &[StoryRecord]) -> Result<()> {
    validate_stories(stories)?;
    write_jsonl(path, stories)
}

/// One annotator's judgments on one story.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub story_id: String,
    pub coherent: bool,
    pub evokes_frame: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub faithful: Option<bool>,
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let records: Vec<AnnotationRecord> = read_jsonl(path)?;
    let mut seen = BTreeSet::new();
    for r in &records {
        if !seen.insert(r.story_id.as_str()) {
            return Err(Error::Validation(format!("story `{}` annotated twice", r.story_id)));
        }
    }
    Ok(records)
}

pub fn save_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Intercoder agreement: the percentage of (story, field) judgments on which
/// both annotators agree, rounded half away from zero. Every story must be
/// judged by both, on the same fields.
pub fn agreement(a: &[AnnotationRecord], b: &[AnnotationRecord]) -> Result<u32> {
    let index = |recs: &[AnnotationRecord]| -> Result<BTreeMap<String, AnnotationRecord>> {
        let mut m = BTreeMap::new();
        for r in recs {
            if m.insert(r.story_id.clone(), r.clone()).is_some() {
                return Err(Error::Validation(format!("story `{}` annotated twice", r.story_id)));
            }
        }
        Ok(m)
    };
    let (ma, mb) = (index(a)?, index(b)?);
    if let Some(id) = ma.keys().find(|k| !mb.contains_key(*k)).or_else(|| mb.keys().find(|k| !ma.contains_key(*k))) {
        return Err(Error::Alignment(format!("story `{id}` is annotated in only one file")));
    }
    let (mut total, mut same) = (0u32, 0u32);
    for (id, ra) in &ma {
        let rb = &mb[id];
        let mut judge = |x: bool, y: bool| {
            total += 1;
            same += (x == y) as u32;
        };
        judge(ra.coherent, rb.coherent);
        judge(ra.evokes_frame, rb.evokes_frame);
        match (ra.faithful, rb.faithful) {
            (Some(x), Some(y)) => judge(x, y),
            (None, None) => {}
            _ => {
                return Err(Error::Alignment(format!("story `{id}`: faithful judged by only one annotator")));
            }
        }
    }
    if total == 0 {
        return Err(Error::InsufficientData("no judgments to compare".into()));
    }
    Ok(percent(same as usize, total as usize))
}

/// `round(100 · part / whole)`, halves away from zero.
pub fn percent(part: usize, whole: usize) -> u32 {
    if whole == 0 {
        return 0;
    }
    (100.0 * part as f64 / whole as f64).round() as u32
}
