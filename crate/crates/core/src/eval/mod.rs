//! Error metrics, the dataset harness and qualitative segmentation output.

pub mod harness;
pub mod metrics;
pub mod segment;

pub use harness::{aggregate, evaluate_dataset, object_dirs, GroundTruth, DatasetReport, FailureRecord, ObjectRow, PublishedReference, PUBLISHED_REFERENCES};
pub use metrics::{metrics, Metrics};
pub use segment::{colorize, material_segmentation_export, palette_color, PaletteEntry, SegmentationSummary};
