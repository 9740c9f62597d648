//! Cycle model of the accelerator.
//!
//! Every node of a [`Trace`](crate::workload::Trace) gets three stage
//! latencies (memory, RMPU, VVPU); with double-buffered scratchpads a node
//! takes as long as its slowest stage, and each pipeline chain pays one fill.

mod config;
mod engine;
mod memory;
mod rmpu;
mod sweep;
mod vvpu;

pub use config::{GroupAMode, SimConfig};
pub use engine::{simulate_trace, SimReport, StageLatency};
pub use memory::mem_cycles;
pub use rmpu::{
    job_lanes, lanes_required, pack_stream, rmpu_cycles, units_required, AccumulationMode, LaneAllocation, PackResult,
    RmpuLoad, CLUSTERS_PER_ENGINE, LANES_PER_CLUSTER, LANES_PER_ENGINE, UNITS_PER_ENGINE, UNITS_PER_LANE, UNITS_PER_PE,
};
pub use sweep::{sweep, SweepRow};
pub use vvpu::{vvpu_cycles, vvpu_vector_cycles, TOPK_BOOKKEEPING_CYCLES};
