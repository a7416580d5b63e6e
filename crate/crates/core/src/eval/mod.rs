//! Dataset synthesis, edit modes, benchmarks, fidelity reports and plots.

pub mod benchmark;
pub mod dataset;
pub mod diagnose;
pub mod edits;
pub mod fidelity;
pub mod plot;
pub mod table;

pub use benchmark::{avg_delta_mae, benchmark, ClipResult, Method, MetricsRow, Scenario};
pub use dataset::{load_split, synth_dataset, DatasetConfig, Manifest, ManifestEntry, Split};
pub use edits::{pcp_edit, single_edit, styled_edit, EditMode, EditOutcome, EditParams, EditStyle};
pub use fidelity::{fidelity, FidelityRow};
