// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::corpus::stories::{Source, StoryRecord};
use crate::error::{Error, Result};

/// A `k/n` cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub count: usize,
    pub total: usize,
}

impl std::fmt::Display for Fraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.count, self.total)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectnessRow {
    pub generator: String,
    pub source: Source,
    pub correct: Fraction,
    /// Only for quoted sources (bible, scifi).
    pub faithful: Option<Fraction>,
}

/// Rows per (generator, source). Generators keep their first-seen order,
/// sources within a generator follow original, bible, scifi, synthetic.
pub fn correctness_report(stories: &[StoryRecord]) -> Result<Vec<CorrectnessRow>> {
    let mut generators: Vec<&str> = Vec::new();
    for s in stories {
        if !generators.contains(&s.generator.as_str()) {
            generators.push(&s.generator);
        }
    }
    let mut rows = Vec::new();
    for g in generators {
        for source in [Source::Original, Source::Bible, Source::Scifi, Source::Synthetic] {
            let group: Vec<&StoryRecord> = stories.iter().filter(|s| s.generator == g && s.source == source).collect();
            if group.is_empty() {
                continue;
            }
            let (mut correct, mut faithful) = (0, 0);
            for s in &group {
                let a = s
                    .annotation
                    .as_ref()
                    .ok_or_else(|| Error::Completeness(format!("story `{}` has no annotation", s.id)))?;
                if !a.evokes_frame {
                    continue;
                }
                correct += 1;
                if source.is_quoted() {
                    match a.faithful {
                        Some(f) => faithful += f as usize,
                        None => {
                            return Err(Error::Completeness(format!(
                                "story `{}` evokes its frame but has no faithful judgment",
                                s.id
                            )))
                        }
                    }
                }
            }
            rows.push(CorrectnessRow {
                generator: g.to_owned(),
                source,
                correct: Fraction { count: correct, total: group.len() },
                faithful: source.is_quoted().then_some(Fraction { count: faithful, total: correct }),
            });
        }
    }
    Ok(rows)
}

/// `model,source,correct,faithful` with `-` where faithfulness does not apply.
pub fn correctness_csv(rows: &[CorrectnessRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(["model", "source", "correct", "faithful"]).map_err(io)?;
    for r in rows {
        let faithful = r.faithful.map(|f| f.to_string()).unwrap_or_else(|| "-".into());
        w.write_record([r.generator.as_str(), r.source.label(), &r.correct.to_string(), &faithful]).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8 csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::stories::Annotation;

    fn rec(id: &str, source: Source, ann: Option<Annotation>) -> StoryRecord {
        StoryRecord {
            id: id.into(),
            frame_label: "NP".into(),
            source,
            generator: "m".into(),
            text: "t".into(),
            annotation: ann,
            rephrased: false,
        }
    }

    #[test]
    fn single_row() {
        let a = Annotation { coherent: true, evokes_frame: true, faithful: None };
        let rows = correctness_report(&[rec("a", Source::Original, Some(a))]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].correct, Fraction { count: 1, total: 1 });
        assert_eq!(rows[0].faithful, None);
        assert_eq!(correctness_csv(&rows).unwrap(), "model,source,correct,faithful\nm,Original,1/1,-\n");
    }

    #[test]
    fn completeness() {
        match correctness_report(&[rec("lost", Source::Original, None)]) {
            Err(Error::Completeness(m)) => assert!(m.contains("lost")),
            other => panic!("{other:?}"),
        }
        let a = Annotation { coherent: true, evokes_frame: true, faithful: None };
        assert!(matches!(correctness_report(&[rec("b", Source::Bible, Some(a))]), Err(Error::Completeness(_))));
        // An incorrect quoted story needs no faithful judgment.
        let wrong = Annotation { coherent: true, evokes_frame: false, faithful: None };
        let rows = correctness_report(&[rec("b", Source::Bible, Some(wrong))]).unwrap();
        assert_eq!(rows[0].faithful, Some(Fraction { count: 0, total: 0 }));
    }
}
