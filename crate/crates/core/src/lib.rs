//! Reuse-aware scheduling compiler for CNN inference accelerators.
//!
//! The pipeline parses a network description, fuses layers into node groups,
//! detects residual blocks, and picks a per-block weight-reuse scheme
//! (row-based or frame-based) by searching cut-points between the two. Each
//! candidate is statically allocated onto three on-chip buffers, sized, costed
//! for DRAM traffic and simulated for latency. The chosen schedule is lowered
//! to an 11-word-per-group instruction stream packed into a deployable image.

pub mod alloc;
pub mod codegen;
pub mod cost;
pub mod error;
pub mod funcref;
pub mod graph;
pub mod hw;
pub mod policy;
pub mod report;
pub mod search;
pub mod sim;
pub mod zoo;

mod schedule;

pub use error::{Error, Result};
pub use graph::{Block, BlockKind, LayerKind, LayerNode, NetworkGraph, NodeGroup, SegmentPlan};
pub use hw::HwConfig;
pub use policy::{ReusePolicy, Scheme};
pub use schedule::Schedule;
