//! Compiles the code listings in `book/src` as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/bundles.md")]
pub mod bundles {}
#[doc = include_str!("../../../book/src/purification.md")]
pub mod purification {}
#[doc = include_str!("../../../book/src/regions.md")]
pub mod regions {}
#[doc = include_str!("../../../book/src/compaction.md")]
pub mod compaction {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/synthetic.md")]
pub mod synthetic {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
