// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::registry::{resolve_frame, NURTURING_PARENT, STRICT_FATHER};
use crate::corpus::stories::{percent, read_jsonl, write_jsonl};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: u32 = 80;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroShotRecord {
    pub story_id: String,
    pub frame_asked: String,
    pub percent: u32,
    pub model: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "SF")]
    StrictFather,
    #[serde(rename = "NP")]
    NurturingParent,
    #[serde(rename = "control")]
    Control,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::StrictFather, Group::NurturingParent, Group::Control];

    pub fn label(self) -> &'static str {
        match self {
            Group::StrictFather => STRICT_FATHER,
            Group::NurturingParent => NURTURING_PARENT,
            Group::Control => "Others/Control",
        }
    }

    /// SF and NP stories land in their own group, every other frame in control.
    pub fn for_frame(frame_label: &str) -> Result<Group> {
        Ok(match resolve_frame(frame_label)? {
            STRICT_FATHER => Group::StrictFather,
            NURTURING_PARENT => Group::NurturingParent,
            _ => Group::Control,
        })
    }
}

fn check_records(records: &[ZeroShotRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in records {
        if r.percent > 100 {
            return Err(Error::Validation(format!("story `{}`: percent {} exceeds 100", r.story_id, r.percent)));
        }
        let frame = resolve_frame(&r.frame_asked)?;
        if !seen.insert((r.model.as_str(), r.story_id.as_str(), frame)) {
            return Err(Error::Validation(format!(
                "story `{}` asked about `{frame}` twice for model `{}`",
                r.story_id, r.model
            )));
        }
    }
    Ok(())
}

pub fn load_zeroshot(path: &Path) -> Result<Vec<ZeroShotRecord>> {
    let records: Vec<ZeroShotRecord> = read_jsonl(path)?;
    check_records(&records)?;
    Ok(records)
}

pub fn save_zeroshot(path: &Path, records: &[ZeroShotRecord]) -> Result<()> {
    check_records(records)?;
    write_jsonl(path, records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyCell {
    pub count: usize,
    pub group_size: usize,
    pub percent: u32,
}

impl std::fmt::Display for TallyCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({}%)", self.count, self.percent)
    }
}

/// Counts of answers at or above the threshold, per (label group, frame asked).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyTable {
    pub threshold: u32,
    /// Canonical names of the frames asked about, SF and NP first.
    pub frames_asked: Vec<String>,
    pub group_sizes: BTreeMap<Group, usize>,
    pub cells: BTreeMap<Group, BTreeMap<String, TallyCell>>,
}

impl TallyTable {
    pub fn cell(&self, group: Group, frame: &str) -> Option<TallyCell> {
        let frame = resolve_frame(frame).ok()?;
        self.cells.get(&group)?.get(frame).copied()
    }
}

/// Tallies one model's answers. Group sizes come from `group_of`, so a story
/// with no answer still counts toward its group.
pub fn tally_zeroshot(
    records: &[ZeroShotRecord],
    group_of: &BTreeMap<String, Group>,
    threshold: u32,
) -> Result<TallyTable> {
    check_records(records)?;
    let mut group_sizes: BTreeMap<Group, usize> = Group::ALL.iter().map(|&g| (g, 0)).collect();
    for g in group_of.values() {
        *group_sizes.entry(*g).or_default() += 1;
    }
    let mut frames_asked: Vec<String> = vec![STRICT_FATHER.into(), NURTURING_PARENT.into()];
    for r in records {
        let f = resolve_frame(&r.frame_asked)?;
        if !frames_asked.iter().any(|x| x == f) {
            frames_asked.push(f.into());
        }
    }
    let mut counts: BTreeMap<(Group, &str), usize> = BTreeMap::new();
    for r in records {
        let group = *group_of
            .get(&r.story_id)
            .ok_or_else(|| Error::Alignment(format!("story `{}` has no label group", r.story_id)))?;
        if r.percent >= threshold {
            *counts.entry((group, resolve_frame(&r.frame_asked)?)).or_default() += 1;
        }
    }
    let mut cells = BTreeMap::new();
    for g in Group::ALL {
        let size = group_sizes[&g];
        let row: BTreeMap<String, TallyCell> = frames_asked
            .iter()
            .map(|f| {
                let count = counts.get(&(g, f.as_str())).copied().unwrap_or(0);
                (f.clone(), TallyCell { count, group_size: size, percent: percent(count, size) })
            })
            .collect();
        cells.insert(g, row);
    }
    Ok(TallyTable { threshold, frames_asked, group_sizes, cells })
}

/// One table per model, in first-seen model order.
pub fn tally_by_model(
    records: &[ZeroShotRecord],
    group_of: &BTreeMap<String, Group>,
    threshold: u32,
) -> Result<Vec<(String, TallyTable)>> {
    let mut models: Vec<&str> = Vec::new();
    for r in records {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    models
        .into_iter()
        .map(|m| {
            let own: Vec<ZeroShotRecord> = records.iter().filter(|r| r.model == m).cloned().collect();
            Ok((m.to_owned(), tally_zeroshot(&own, group_of, threshold)?))
        })
        .collect()
}

fn column_name(frame: &str) -> String {
    match frame {
        STRICT_FATHER => "Z.SF".into(),
        NURTURING_PARENT => "Z.NP".into(),
        other => format!("Z.{other}"),
    }
}

/// `label,<model> Z.SF,<model> Z.NP,...` with cells like `16 (100%)`.
pub fn tally_csv(tables: &[(String, TallyTable)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Format(format!("csv: {e}"));
    let mut header = vec!["label".to_owned()];
    for (model, t) in tables {
        header.extend(t.frames_asked.iter().map(|f| format!("{model} {}", column_name(f))));
    }
    w.write_record(&header).map_err(io)?;
    for g in Group::ALL {
        let mut row = vec![g.label().to_owned()];
        for (_, t) in tables {
            row.extend(t.frames_asked.iter().map(|f| t.cells[&g][f].to_string()));
        }
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8 csv"))
}

/// True when `model` rated the story below `threshold` for both SF and NP,
/// the condition for a control story that evokes neither frame.
pub fn evokes_neither(records: &[ZeroShotRecord], story_id: &str, model: &str, threshold: u32) -> Result<bool> {
    let mut worst = BTreeMap::new();
    for r in records.iter().filter(|r| r.story_id == story_id && r.model == model) {
        worst.insert(resolve_frame(&r.frame_asked)?, r.percent);
    }
    let get = |f: &str| {
        worst
            .get(f)
            .copied()
            .ok_or_else(|| Error::Alignment(format!("story `{story_id}` has no `{f}` answer from `{model}`")))
    };
    Ok(get(STRICT_FATHER)? < threshold && get(NURTURING_PARENT)? < threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(id: &str, frame: &str, p: u32) -> ZeroShotRecord {
        ZeroShotRecord { story_id: id.into(), frame_asked: frame.into(), percent: p, model: "m".into() }
    }

    fn groups() -> BTreeMap<String, Group> {
        [("a", Group::StrictFather), ("b", Group::NurturingParent), ("c", Group::Control)]
            .into_iter()
            .map(|(k, g)| (k.to_owned(), g))
            .collect()
    }

    #[test]
    fn boundary_is_inclusive() {
        let recs: Vec<_> = ["a", "b", "c"].iter().flat_map(|id| [z(id, "SF", 80), z(id, "NP", 80)]).collect();
        let t = tally_zeroshot(&recs, &groups(), 80).unwrap();
        for g in Group::ALL {
            assert_eq!(t.cells[&g][STRICT_FATHER].count, 1);
            assert_eq!(t.cells[&g][NURTURING_PARENT].percent, 100);
        }
        let t = tally_zeroshot(&recs, &groups(), 101).unwrap();
        assert!(t.cells.values().flat_map(|r| r.values()).all(|c| c.count == 0));
    }

    #[test]
    fn errors() {
        assert!(matches!(tally_zeroshot(&[z("q", "SF", 90)], &groups(), 80), Err(Error::Alignment(_))));
        assert!(matches!(tally_zeroshot(&[z("a", "SF", 101)], &groups(), 80), Err(Error::Validation(_))));
        assert!(matches!(
            tally_zeroshot(&[z("a", "SF", 1), z("a", "Strict Father", 2)], &groups(), 80),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn control_predicate() {
        let recs = vec![z("c", "SF", 79), z("c", "NP", 10), z("d", "SF", 80), z("d", "NP", 0)];
        assert!(evokes_neither(&recs, "c", "m", 80).unwrap());
        assert!(!evokes_neither(&recs, "d", "m", 80).unwrap());
        assert!(matches!(evokes_neither(&recs, "e", "m", 80), Err(Error::Alignment(_))));
    }

    #[test]
    fn csv_layout() {
        let recs = vec![z("a", "SF", 90)];
        let t = tally_zeroshot(&recs, &groups(), 80).unwrap();
        let csv = tally_csv(&[("m".into(), t)]).unwrap();
        assert_eq!(
            csv,
            "label,m Z.SF,m Z.NP\nStrict Father,1 (100%),0 (0%)\nNurturing Parent,0 (0%),0 (0%)\nOthers/Control,0 (0%),0 (0%)\n"
        );
    }
}
