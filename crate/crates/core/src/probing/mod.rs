// SPDX-License-Identifier: Apache-2.0

//! Sparse linear probes on hidden states: activation extraction, stratified
//! splits, L2-regularised logistic regression, recursive feature elimination
//! and the per-frame F1 report.

pub mod dataset;
pub mod logistic;
pub mod report;

pub use dataset::{extract_activations, split_stratified, ActivationDataset, ExtractOptions, PositionPolicy, StoryInput};
pub use logistic::{
    evaluate_probe, fit_logistic, fit_on_dims, rfe_select, LogisticObjective, Metrics, ProbeConfig, ProbeModel,
};
pub use report::{probe_frame, report_csv, write_report, FrameProbes, ProbeReportRow, ReportMetadata};
