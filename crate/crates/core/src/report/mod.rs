//! Attributions in a common shape, their rendering, a deletion metric, and
//! the on-disk report.

mod attribution;
mod deletion;
mod document;
mod render;

pub use attribution::{Attribution, Method, Normalization, Payload};
pub use deletion::{deletion_auc, deletion_curve, random_attribution, trapezoid};
pub use document::{
    digest_hex, fnv1a64, map_pgm16, write_report, AttributionRecord, MethodEntry, ReportBundle,
    ReportDocument, REPORT_FILE,
};
pub use render::{colormap, render_grid, render_overlay, round_half_up, GridImage, GUTTER};
