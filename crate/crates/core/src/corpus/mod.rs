// SPDX-License-Identifier: Apache-2.0

//! Frame registry, story files, annotation agreement and the corpus reports.

pub mod giveaway;
pub mod registry;
pub mod report;
pub mod stories;
pub mod zeroshot;

pub use giveaway::{giveaway_scan, GiveawayMatch};
pub use registry::{frame_registry, frame_spec, registry_csv, resolve_frame, FrameSpec, NURTURING_PARENT, STRICT_FATHER};
pub use report::{correctness_csv, correctness_report, CorrectnessRow, Fraction};
pub use stories::{
    agreement, load_annotations, load_stories, percent, save_annotations, save_stories, validate_stories, Annotation,
    AnnotationRecord, Source, StoryRecord,
};
pub use zeroshot::{
    evokes_neither, load_zeroshot, save_zeroshot, tally_by_model, tally_csv, tally_zeroshot, Group, TallyCell,
    TallyTable, ZeroShotRecord, DEFAULT_THRESHOLD,
};
