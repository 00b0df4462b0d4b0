//! Attention-guided region extraction and layout-preserving compaction.
//!
//! The pipeline takes per-token attention planes exported from a
//! vision-language model (an [`AttentionBundle`]) and turns them into a
//! compact image that keeps only the regions the key tokens point at:
//!
//! 1. [`attention`]: smooth each plane, rescale it to `[0, 1]` and subtract
//!    a noise prior averaged over search-prompt tokens.
//! 2. [`regions`]: threshold the purified planes, label connected
//!    components and scale their extents to pixel boxes.
//! 3. [`layout`]: cut the image along every box edge, drop the rows and
//!    columns that hold no box and stitch the rest back together.
//!
//! [`metrics`] and [`synth`] make the whole chain testable without a model.

pub mod attention;
pub mod boxes;
pub mod bundle;
pub mod error;
pub mod layout;
pub mod map;
pub mod metrics;
pub mod overlay;
pub mod regions;
pub mod rng;
pub mod synth;

pub use attention::{aggregate_overlay, gaussian_smooth, minmax_normalize, noise_prior, purify, SmoothingConfig};
pub use boxes::{read_boxes, write_boxes, BoundingBox, BoxSet};
pub use bundle::{read_bundle, write_bundle, AttentionBundle, Geometry, TokenRef};
pub use error::{Error, Result};
pub use layout::{build_grid, compact_image, recompose, transform_point, CompactImage, GridDecomposition, RecomposeMode};
pub use map::AttentionMap;
pub use regions::{binarize, component_to_box, components, extract_boxes, BinaryMask, Connectivity, ThresholdConfig};
