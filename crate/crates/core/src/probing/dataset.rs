// SPDX-License-Identifier: Apache-2.0

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::model::{forward, CaptureSet, HookPoint, ModelBundle};
use crate::numkernel::Matrix;
use crate::par::{self, Execution};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionPolicy {
    #[default]
    LastToken,
}

/// Hidden states with binary labels, one row per story.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationDataset {
    pub features: Matrix,
    pub labels: Vec<bool>,
    pub story_ids: Vec<String>,
    pub layer: usize,
    pub position_policy: PositionPolicy,
}

#[derive(Serialize, Deserialize)]
struct Row {
    story_id: String,
    label: u8,
    features: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    layer: usize,
    position_policy: PositionPolicy,
    n_rows: usize,
    n_dims: usize,
}

impl ActivationDataset {
    pub fn new(
        features: Matrix,
        labels: Vec<bool>,
        story_ids: Vec<String>,
        layer: usize,
        position_policy: PositionPolicy,
    ) -> Result<Self> {
        if features.rows() != labels.len() || labels.len() != story_ids.len() {
            return Err(Error::Shape(format!(
                "{} feature rows, {} labels, {} story ids",
                features.rows(),
                labels.len(),
                story_ids.len()
            )));
        }
        Ok(Self { features, labels, story_ids, layer, position_policy })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l).count();
        (self.labels.len() - pos, pos)
    }

    /// Rows in the order given.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            story_ids: rows.iter().map(|&r| self.story_ids[r].clone()).collect(),
            layer: self.layer,
            position_policy: self.position_policy,
        }
    }

    /// Sidecar metadata path: `<path>.meta.json`.
    pub fn meta_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    }

    /// JSON lines of `{story_id, label, features}` plus the sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for i in 0..self.len() {
            let row = Row {
                story_id: self.story_ids[i].clone(),
                label: self.labels[i] as u8,
                features: self.features.row(i).to_vec(),
            };
            out.push_str(&serde_json::to_string(&row)?);
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())?;
        let meta = Meta {
            layer: self.layer,
            position_policy: self.position_policy,
            n_rows: self.len(),
            n_dims: self.dims(),
        };
        write_atomic(&Self::meta_path(path), serde_json::to_string_pretty(&meta)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: Meta = serde_json::from_str(&std::fs::read_to_string(Self::meta_path(path))?)?;
        let reader = BufReader::new(std::fs::File::open(path)?);
        let (mut data, mut labels, mut ids) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line)
                .map_err(|e| Error::ParseLine { line: i + 1, message: e.to_string() })?;
            if row.features.len() != meta.n_dims {
                return Err(Error::ParseLine {
                    line: i + 1,
                    message: format!("{} features, expected {}", row.features.len(), meta.n_dims),
                });
            }
            if row.label > 1 {
                return Err(Error::ParseLine { line: i + 1, message: format!("label {} is not 0 or 1", row.label) });
            }
            data.extend(row.features);
            labels.push(row.label == 1);
            ids.push(row.story_id);
        }
        if labels.len() != meta.n_rows {
            return Err(Error::Format(format!("{} rows, sidecar says {}", labels.len(), meta.n_rows)));
        }
        let features = Matrix::new(labels.len(), meta.n_dims, data)?;
        Self::new(features, labels, ids, meta.layer, meta.position_policy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoryInput {
    pub id: String,
    pub text: String,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractOptions {
    pub layer: usize,
    pub position_policy: PositionPolicy,
    /// Wraps each text before tokenizing; `{text}` marks where it goes.
    pub template: Option<String>,
    pub execution: Execution,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self { layer: 17, position_policy: PositionPolicy::LastToken, template: None, execution: Execution::default() }
    }
}

/// Captures resid_post at `layer` on each story's final token.
pub fn extract_activations(
    bundle: &ModelBundle,
    stories: &[StoryInput],
    options: &ExtractOptions,
) -> Result<ActivationDataset> {
    if stories.is_empty() {
        return Err(Error::InsufficientData("no stories to extract".into()));
    }
    let config = bundle.config();
    if options.layer >= config.n_layers {
        return Err(Error::Range(format!(
            "layer {} outside a model with {} layers",
            options.layer, config.n_layers
        )));
    }
    if let Some(t) = &options.template {
        if !t.contains("{text}") {
            return Err(Error::Config("template must contain `{text}`".into()));
        }
    }
    let hook = HookPoint::resid_post(options.layer);
    let rows = par::try_map(options.execution, stories, |story| {
        let text = match &options.template {
            Some(t) => t.replace("{text}", &story.text),
            None => story.text.clone(),
        };
        let tokens = bundle.tokenizer().tokenize(&text)?;
        if tokens.is_empty() {
            return Err(Error::Range(format!("story `{}` has no tokens", story.id)));
        }
        if tokens.len() > config.max_seq {
            return Err(Error::Capacity(format!(
                "story `{}` has {} tokens, max_seq is {}",
                story.id,
                tokens.len(),
                config.max_seq
            )));
        }
        let last = tokens.len() - 1;
        let mut capture = CaptureSet::new();
        capture.insert((hook, last));
        let mut out = forward(bundle, &tokens, &capture, &[])?;
        Ok(out.captured.remove(&(hook, last)).expect("requested capture").into_inner())
    })?;
    let data: Vec<f32> = rows.into_iter().flatten().collect();
    ActivationDataset::new(
        Matrix::new(stories.len(), config.d_model, data)?,
        stories.iter().map(|s| s.label).collect(),
        stories.iter().map(|s| s.id.clone()).collect(),
        options.layer,
        options.position_policy,
    )
}

/// Per-class seeded shuffle; `round(n_class × holdout_fraction)` rows of
/// each class go to the test side. Both sides keep the original row order.
pub fn split_stratified(
    ds: &ActivationDataset,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(ActivationDataset, ActivationDataset)> {
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::Range(format!("holdout fraction {holdout_fraction} must be in [0, 1)")));
    }
    let mut test_rows = Vec::new();
    for (class, label) in [false, true].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == label).collect();
        if idx.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "class {} has {} row(s); need at least 2",
                label as u8,
                idx.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * holdout_fraction).round() as usize;
        test_rows.extend_from_slice(&idx[..n_test]);
    }
    test_rows.sort_unstable();
    let train_rows: Vec<usize> = (0..ds.len()).filter(|i| test_rows.binary_search(i).is_err()).collect();
    Ok((ds.subset(&train_rows), ds.subset(&test_rows)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n_neg: usize, n_pos: usize) -> ActivationDataset {
        let n = n_neg + n_pos;
        let data = (0..n * 3).map(|i| i as f32 * 0.5).collect();
        ActivationDataset::new(
            Matrix::new(n, 3, data).unwrap(),
            (0..n).map(|i| i >= n_neg).collect(),
            (0..n).map(|i| format!("s{i}")).collect(),
            1,
            PositionPolicy::LastToken,
        )
        .unwrap()
    }

    #[test]
    fn split_sizes_follow_rounding() {
        let ds = toy(39, 39);
        let (train, test) = split_stratified(&ds, 0.2, 42).unwrap();
        assert_eq!(test.class_counts(), (8, 8));
        assert_eq!(train.class_counts(), (31, 31));
        let mut all: Vec<_> = train.story_ids.iter().chain(&test.story_ids).cloned().collect();
        all.sort();
        let mut expect = ds.story_ids.clone();
        expect.sort();
        assert_eq!(all, expect);
        let (train2, test2) = split_stratified(&ds, 0.2, 42).unwrap();
        assert_eq!((train2, test2), (train.clone(), test.clone()));
        let (_, other) = split_stratified(&ds, 0.2, 43).unwrap();
        assert_ne!(other.story_ids, test.story_ids);
    }

    #[test]
    fn zero_holdout_keeps_everything() {
        let ds = toy(3, 4);
        let (train, test) = split_stratified(&ds, 0.0, 1).unwrap();
        assert_eq!(train, ds);
        assert!(test.is_empty());
    }

    #[test]
    fn tiny_class_is_rejected() {
        assert!(matches!(split_stratified(&toy(1, 5), 0.2, 1), Err(Error::InsufficientData(_))));
        assert!(split_stratified(&toy(3, 3), 1.0, 1).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("acts.jsonl");
        let mut ds = toy(2, 2);
        ds.features = Matrix::new(4, 3, vec![0.1, -1e-7, 3.4028e38, 1.0 / 3.0, 2.5, -0.0, 7.0, 8.0, 9.0, 1e-30, 0.7, 0.2]).unwrap();
        ds.save(&path).unwrap();
        assert!(ActivationDataset::meta_path(&path).exists());
        assert_eq!(ActivationDataset::load(&path).unwrap(), ds);
        std::fs::write(&path, "{\"story_id\":\"a\",\"label\":1,\"features\":[1]}\nnot json\n").unwrap();
        assert!(matches!(ActivationDataset::load(&path), Err(Error::ParseLine { line: 1, .. })));
    }
}
