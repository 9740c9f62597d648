use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How 8-bit tokens occupy the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupAMode {
    /// A 5-lane job (low plane and outliers) and a 4-lane job (high plane) in the same pass.
    TwoJob,
    /// One 5-lane allocation used for two consecutive passes.
    Serialized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_rmpus: u64,
    pub vvpus_per_rmpu: u64,
    pub clock_ghz: f64,
    /// Main-memory bandwidth in GB/s with GB = 2^30 bytes.
    pub mem_bandwidth_gbps: f64,
    pub mem_txn_bytes: u64,
    /// Charged once per node that touches main memory.
    pub mem_fixed_overhead_cycles: u64,
    pub token_scratchpad_bytes: u64,
    pub weight_scratchpad_bytes: u64,
    pub output_scratchpad_bytes: u64,
    pub simd_lanes_per_vvpu: u64,
    pub crossbar_hop_cycles: u64,
    pub group_a_mode: GroupAMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_rmpus: 32,
            vvpus_per_rmpu: 4,
            clock_ghz: 1.0,
            mem_bandwidth_gbps: 2000.0,
            mem_txn_bytes: 64,
            mem_fixed_overhead_cycles: 100,
            token_scratchpad_bytes: 1536 * 1024,
            weight_scratchpad_bytes: 256 * 1024,
            output_scratchpad_bytes: 512 * 1024,
            simd_lanes_per_vvpu: 32,
            crossbar_hop_cycles: 1,
            group_a_mode: GroupAMode::TwoJob,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_rmpus", self.num_rmpus),
            ("vvpus_per_rmpu", self.vvpus_per_rmpu),
            ("mem_txn_bytes", self.mem_txn_bytes),
            ("token_scratchpad_bytes", self.token_scratchpad_bytes),
            ("weight_scratchpad_bytes", self.weight_scratchpad_bytes),
            ("output_scratchpad_bytes", self.output_scratchpad_bytes),
            ("simd_lanes_per_vvpu", self.simd_lanes_per_vvpu),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("sim.{name} must be positive")));
            }
        }
        for (name, v) in [
            ("clock_ghz", self.clock_ghz),
            ("mem_bandwidth_gbps", self.mem_bandwidth_gbps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("sim.{name} must be a positive number, got {v}")));
            }
        }
        Ok(())
    }

    pub fn num_vvpus(&self) -> u64 {
        self.num_rmpus * self.vvpus_per_rmpu
    }
}
