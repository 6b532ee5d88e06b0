//! Temporal 3D detection refinement with a point-trajectory transformer.
//!
//! The pipeline keeps one frame of region-of-interest points per object plus a
//! bounded history of proposal boxes, encodes both into per-frame features,
//! and refines the current proposal with long-term, short-term and
//! future-aware attention memories.

pub mod diagnostics;
pub mod encoders;
pub mod eval;
pub mod geom;
pub mod membank;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;
