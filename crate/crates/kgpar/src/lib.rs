//! Knowledge-graph-guided hierarchical cross-modal hypergraph learning for
//! multi-label attribute recognition.
//!
//! The pipeline builds an attribute knowledge graph and local/global
//! hypergraphs from label matrices and precomputed embeddings, encodes them
//! with UniGNN-family message passing, fuses everything with a small
//! attention transformer, and trains/evaluates end to end on synthetic or
//! exported data. All learnable parts run on the crate's own reverse-mode
//! tensor engine.
//!
//! Runnable walkthroughs live under `examples/`; the `kgpar` binary exposes
//! the same pipeline as subcommands.

pub mod dataio;
pub mod encoders;
pub mod hypergraph;
pub mod kgraph;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod tensor;

/// True when the `KGPAR_CHECKED` environment variable enables NaN-checked mode.
pub fn checked_mode() -> bool {
    std::env::var("KGPAR_CHECKED").map(|v| v == "1").unwrap_or(false)
}
