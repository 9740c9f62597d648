//! Shape-level dataflow of the pair half of one folding block.
//!
//! The graph is built symbolically for a sequence length `Ns`: nodes carry
//! shapes and operation counts, edges carry a static activation group. Turning
//! a graph into per-node byte and work counts is [`emit_trace`]'s job.

mod classify;
mod graph;
mod trace;

pub use classify::{classify_activation, PositionDescriptor, Producer};
pub use graph::{
    build_folding_block, DataflowGraph, Edge, EdgeId, NodeId, OpKind, OpNode, Residency, WorkloadConfig, TEMPLATE_NODES,
};
pub use trace::{
    edge_bytes, emit_trace, Operand, RmpuDemand, Stage, Trace, TraceEntry, VvpuDemand, VvpuOp, CHUNK_FACTOR,
    TOKEN_TILE_POSITIONS,
};
