//! Complementary topic-model / transformer fine-tuning for document
//! classification.
//!
//! A neural variational document model (NVDM) summarizes the whole document
//! as a topic vector while a compact transformer encoder reads only a
//! partition of it. The two representations are fused, classified and
//! trained under a joint objective. Partitioning cuts self-attention work
//! by a factor of `p²` per batch; the [`costing`] module predicts that work
//! exactly and turns wall time into CO₂ estimates.
//!
//! The guide in `book/` walks through each piece; its code samples are
//! compiled and run as doctests of this crate.

pub mod cli;
pub mod corpus;
pub mod costing;
pub mod encoder;
pub mod fusion;
pub mod numkernel;
pub mod trainer;
pub mod nvdm;

// The guide's code blocks run as doctests, one module per chapter so a
// failure points at its file.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/topics.md")]
    mod topics {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/costing.md")]
    mod costing {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
