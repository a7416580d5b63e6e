//! Chrominance editor: pyramid split, luminance suppression, support map,
//! analytic and learned perturbation, fidelity metrics.

pub mod analytic;
pub mod chroma;
pub mod generator;
pub mod metrics;
pub mod psm;
pub mod pyramid;

pub use analytic::{analytic_edit, AnalyticEditor, ClipEditor};
pub use generator::{learned_edit, EditorGenerator, LearnedEditor};
pub use chroma::{luminance_suppress, ChromCarrier};
pub use metrics::{psnr, ssim, PSNR_SENTINEL};
pub use psm::{cell_region_mask, compute_psm, top_cells, CellSeries, PerturbationSupportMap, GRID};
pub use pyramid::{laplacian_decompose, laplacian_reconstruct, Image, Pyramid, PyramidDecomposition, DEFAULT_LEVELS};
