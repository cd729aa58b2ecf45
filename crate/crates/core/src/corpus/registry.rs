// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub name: String,
    /// Short code where one is in common use (SF, NP).
    pub abbreviation: Option<String>,
    pub description: String,
    pub counter_frame: Option<String>,
}

pub const STRICT_FATHER: &str = "Strict Father";
pub const NURTURING_PARENT: &str = "Nurturing Parent";

const FRAMES: [(&str, Option<&str>, &str, &str); 10] = [
    (
        NURTURING_PARENT,
        Some("NP"),
        "Views authorities as caring, protective, and guiding, with the goal of nurturing and empowering individuals",
        STRICT_FATHER,
    ),
    (
        STRICT_FATHER,
        Some("SF"),
        "Views authorities as strong, disciplinary, and responsible for maintaining order and discipline, often with a sense of moral authority",
        NURTURING_PARENT,
    ),
    (
        "We Are All in This Together",
        None,
        "Emphasizes collective responsibility, shared goals, and mutual support among individuals in a community",
        "Us vs. Them",
    ),
    (
        "Us vs. Them",
        None,
        "Divides the world into opposing groups, often with a sense of competition, conflict, or mistrust between them",
        "We Are All in This Together",
    ),
    (
        "Illusions to Enlightenment",
        None,
        "Sees knowledge and understanding as a process of revealing hidden truths and dispelling misconceptions",
        "Society of the Spectacle",
    ),
    (
        "Society of the Spectacle",
        None,
        "Views modern society as a system of manipulation, where images and appearances shape people's perceptions and desires",
        "Illusions to Enlightenment",
    ),
    (
        "Nature Cannot Be Controlled",
        None,
        "Sees nature as unpredictable, uncontrollable, and potentially threatening, requiring humility and adaptation",
        "Mastery Over Nature",
    ),
    (
        "Mastery Over Nature",
        None,
        "Sees humans as capable of controlling and dominating nature through science, technology, and human ingenuity",
        "Nature Cannot Be Controlled",
    ),
    (
        "Information Spreads Like a Virus",
        None,
        "Views information as contagious, spreading rapidly and unpredictably through social networks",
        "Information Follows Individual Dispositions",
    ),
    (
        "Information Follows Individual Dispositions",
        None,
        "Sees people as filtering and interpreting information based on their existing beliefs, values, and personality traits",
        "Information Spreads Like a Virus",
    ),
];

/// Shortened spellings accepted by [`resolve_frame`].
const ALIASES: [(&str, &str); 2] = [
    ("Info. Spreads Like a Virus", "Information Spreads Like a Virus"),
    ("Info. Follows Indiv. Disposi.", "Information Follows Individual Dispositions"),
];

/// The ten frames, each paired with its counter-frame.
pub fn frame_registry() -> Vec<FrameSpec> {
    FRAMES
        .iter()
        .map(|&(name, abbr, description, counter)| FrameSpec {
            name: name.to_owned(),
            abbreviation: abbr.map(str::to_owned),
            description: description.to_owned(),
            counter_frame: Some(counter.to_owned()),
        })
        .collect()
}

/// Canonical frame name for a case-insensitive name, abbreviation or alias.
pub fn resolve_frame(name: &str) -> Result<&'static str> {
    let wanted = name.trim();
    for &(canonical, abbr, _, _) in &FRAMES {
        if canonical.eq_ignore_ascii_case(wanted) || abbr.is_some_and(|a| a.eq_ignore_ascii_case(wanted)) {
            return Ok(canonical);
        }
    }
    for (alias, canonical) in ALIASES {
        if alias.eq_ignore_ascii_case(wanted) {
            return Ok(canonical);
        }
    }
    Err(Error::Validation(format!("unknown frame `{name}`")))
}

pub fn frame_spec(name: &str) -> Result<FrameSpec> {
    let canonical = resolve_frame(name)?;
    Ok(frame_registry().into_iter().find(|f| f.name == canonical).expect("registered"))
}

/// Registry as CSV: `name,abbreviation,counter_frame,description`.
pub fn registry_csv() -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "abbreviation", "counter_frame", "description"]).expect("in-memory csv");
    for f in frame_registry() {
        w.write_record([
            f.name.as_str(),
            f.abbreviation.as_deref().unwrap_or(""),
            f.counter_frame.as_deref().unwrap_or(""),
            f.description.as_str(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}
