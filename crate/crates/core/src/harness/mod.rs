//! End-to-end runs: sampled or replayed camera poses through detection,
//! per-part pose recovery and fusion, with error reports.

mod config;
pub mod io;
mod pipeline;
mod report;

pub use config::{ConfigError, PipelineConfig};
pub use pipeline::{
    detect_frame, estimate_parts, fuse_frame, process_frame, run_pipeline, thread_count, FrameDetections, FrameInput,
    FrameRecord, PartAttempt, PartError, THREADS_ENV,
};
pub use report::{ablate_single_object, build_report, coverage_3sigma, Coverage, PartRow, Report};
