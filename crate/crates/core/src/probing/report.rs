// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::probing::dataset::{split_stratified, ActivationDataset, PositionPolicy};
use crate::probing::logistic::{evaluate_probe, fit_on_dims, rfe_select, Metrics, ProbeConfig, ProbeModel};

/// One row of the per-frame probe table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReportRow {
    pub frame: String,
    pub f1_5_train: f64,
    /// `None` when the holdout is empty.
    pub f1_5_test: Option<f64>,
    pub f1_1_train: f64,
    pub f1_1_test: Option<f64>,
    pub top_dim: usize,
}

/// Settings a probe table was produced with; written next to the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub layer: usize,
    pub position_policy: PositionPolicy,
    pub holdout: f64,
    pub seed: u64,
    pub standardization: String,
    pub elimination_schedule: String,
    pub decision_threshold: f64,
    pub probe: ProbeConfig,
}

impl ReportMetadata {
    pub fn new(layer: usize, holdout: f64, seed: u64, probe: ProbeConfig) -> Self {
        Self {
            layer,
            position_policy: PositionPolicy::LastToken,
            holdout,
            seed,
            standardization: "train_statistics".into(),
            elimination_schedule: "halve_then_single".into(),
            decision_threshold: 0.5,
            probe,
        }
    }
}

/// Everything a single frame's probing run produces.
#[derive(Clone, Debug)]
pub struct FrameProbes {
    pub row: ProbeReportRow,
    pub probe_5: ProbeModel,
    pub probe_1: ProbeModel,
    pub metrics_5: (Metrics, Option<Metrics>),
    pub metrics_1: (Metrics, Option<Metrics>),
}

/// Splits `ds` (label 1 = the frame, 0 = control), then selects 5 and 1
/// dimensions by elimination on the training side and scores both probes.
pub fn probe_frame(
    ds: &ActivationDataset,
    frame: &str,
    config: &ProbeConfig,
    holdout: f64,
    seed: u64,
) -> Result<FrameProbes> {
    if ds.dims() <= 5 {
        return Err(Error::Range(format!("need more than 5 dimensions, have {}", ds.dims())));
    }
    let (train, test) = split_stratified(ds, holdout, seed)?;
    let run = |k: usize| -> Result<(ProbeModel, Metrics, Option<Metrics>)> {
        let dims = rfe_select(&train, k, config)?;
        let probe = fit_on_dims(&train, &dims, config)?;
        let on_train = evaluate_probe(&probe, &train)?;
        let on_test = if test.is_empty() { None } else { Some(evaluate_probe(&probe, &test)?) };
        Ok((probe, on_train, on_test))
    };
    let (probe_5, tr5, te5) = run(5)?;
    let (probe_1, tr1, te1) = run(1)?;
    let row = ProbeReportRow {
        frame: frame.to_owned(),
        f1_5_train: tr5.f1,
        f1_5_test: te5.map(|m| m.f1),
        f1_1_train: tr1.f1,
        f1_1_test: te1.map(|m| m.f1),
        top_dim: probe_1.selected_dims[0],
    };
    Ok(FrameProbes { row, probe_5, probe_1, metrics_5: (tr5, te5), metrics_1: (tr1, te1) })
}

pub fn report_csv(rows: &[ProbeReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(["frame", "f1_5_train", "f1_5_test", "f1_1_train", "f1_1_test", "top_dim"]).map_err(io)?;
    let f = |v: f64| format!("{v:.4}");
    let opt = |v: Option<f64>| v.map(f).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.frame.clone(),
            f(r.f1_5_train),
            opt(r.f1_5_test),
            f(r.f1_1_train),
            opt(r.f1_1_test),
            r.top_dim.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8 csv"))
}

/// Writes the table to `path` and its metadata to `<path>.meta.json`.
pub fn write_report(rows: &[ProbeReportRow], meta: &ReportMetadata, path: &Path) -> Result<()> {
    write_atomic(path, report_csv(rows)?.as_bytes())?;
    write_atomic(&ActivationDataset::meta_path(path), serde_json::to_string_pretty(meta)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_shape() {
        let rows = vec![ProbeReportRow {
            frame: "Strict Father".into(),
            f1_5_train: 0.93,
            f1_5_test: Some(0.94),
            f1_1_train: 0.78,
            f1_1_test: None,
            top_dim: 133,
        }];
        assert_eq!(
            report_csv(&rows).unwrap(),
            "frame,f1_5_train,f1_5_test,f1_1_train,f1_1_test,top_dim\nStrict Father,0.9300,0.9400,0.7800,,133\n"
        );
    }
}
