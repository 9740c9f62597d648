use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::memory::mem_cycles;
use super::rmpu::{rmpu_cycles, RmpuLoad, UNITS_PER_ENGINE};
use super::vvpu::vvpu_cycles;
use crate::error::{Error, Result};
use crate::workload::{Trace, TraceEntry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLatency {
    pub node: usize,
    pub name: String,
    pub mem_cycles: u64,
    pub rmpu_cycles: u64,
    pub vvpu_cycles: u64,
    /// Slowest stage plus the crossbar hop.
    pub latency: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub ns: u64,
    pub num_blocks: u64,
    pub total_cycles: u64,
    pub block_cycles: u64,
    /// Pipeline fill inside `block_cycles`.
    pub fill_cycles: u64,
    pub latency_ms: f64,
    pub stages: Vec<StageLatency>,
    /// Useful 4-bit units over available unit-cycles, percent.
    pub rmpu_utilization: f64,
    /// Allocated lanes over available lane-cycles, percent.
    pub rmpu_lane_occupancy: f64,
    pub vvpu_utilization: f64,
    /// Main-memory traffic over the run time, GB/s with GB = 2^30.
    pub achieved_bandwidth_gbps: f64,
    pub total_bytes: u64,
    /// Largest double-buffered scratchpad footprint of any node.
    pub peak_onchip_bytes: u64,
    pub peak_main_memory_bytes: u64,
    pub rmpu_units: u64,
    pub vvpu_busy_cycles: u64,
}

fn check_scratchpads(e: &TraceEntry, cfg: &SimConfig) -> Result<()> {
    let checks = [
        ("token", 2 * e.tile_in_bytes, cfg.token_scratchpad_bytes),
        ("weight", e.weight_bytes, cfg.weight_scratchpad_bytes),
        ("output", 2 * e.tile_out_bytes, cfg.output_scratchpad_bytes),
    ];
    for (kind, need, have) in checks {
        if need > have {
            return Err(Error::Config(format!(
                "scratchpad overflow at node '{}': {kind} scratchpad needs {need} bytes, has {have}",
                e.name
            )));
        }
    }
    Ok(())
}

struct NodeCost {
    stage: StageLatency,
    rmpu: RmpuLoad,
    vvpu_busy: u64,
    onchip: u64,
}

fn node_cost(e: &TraceEntry, cfg: &SimConfig) -> Result<NodeCost> {
    check_scratchpads(e, cfg)?;
    let mem = mem_cycles(e.total_bytes(), cfg);
    let rmpu = match &e.rmpu {
        Some(d) => rmpu_cycles(d, cfg)?,
        None => RmpuLoad::default(),
    };
    let (vvpu_busy, vvpu) = vvpu_cycles(&e.vvpu, cfg);
    let computes = e.rmpu.is_some() || !e.vvpu.is_empty();
    let hop = if computes { cfg.crossbar_hop_cycles } else { 0 };
    let latency = mem.max(rmpu.cycles).max(vvpu) + hop;
    Ok(NodeCost {
        stage: StageLatency {
            node: e.node,
            name: e.name.clone(),
            mem_cycles: mem,
            rmpu_cycles: rmpu.cycles,
            vvpu_cycles: vvpu,
            latency,
        },
        rmpu,
        vvpu_busy,
        onchip: 2 * (e.tile_in_bytes + e.tile_out_bytes) + e.weight_bytes,
    })
}

/// Runs every node of one block and scales to `num_blocks`.
///
/// A node takes as long as its slowest stage. The first node of each chain
/// also pays a fill: the non-slowest stages of its first tile.
pub fn simulate_trace(trace: &Trace, cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let mut stages = Vec::with_capacity(trace.entries.len());
    let (mut block, mut fill, mut units, mut lane_cycles, mut busy, mut onchip) = (0u64, 0u64, 0u64, 0u64, 0u64, 0u64);
    let mut chain = None;
    for e in &trace.entries {
        let c = node_cost(e, cfg)?;
        if chain != Some(e.chain) {
            chain = Some(e.chain);
            let s = &c.stage;
            let sum = s.mem_cycles + s.rmpu_cycles + s.vvpu_cycles;
            let max = s.mem_cycles.max(s.rmpu_cycles).max(s.vvpu_cycles);
            fill += (sum - max).div_ceil(e.tiles.max(1));
        }
        block += c.stage.latency;
        units += c.rmpu.units;
        lane_cycles += c.rmpu.lane_cycles;
        busy += c.vvpu_busy;
        onchip = onchip.max(c.onchip);
        stages.push(c.stage);
    }
    block += fill;
    let total = block * trace.num_blocks;
    let pct = |used: u128, cap: u128| {
        if cap == 0 {
            0.0
        } else {
            100.0 * used as f64 / cap as f64
        }
    };
    let block_u = block as u128;
    let total_bytes = trace.total_bytes();
    let seconds = total as f64 / (cfg.clock_ghz * 1e9);
    Ok(SimReport {
        ns: trace.ns,
        num_blocks: trace.num_blocks,
        total_cycles: total,
        block_cycles: block,
        fill_cycles: fill,
        latency_ms: seconds * 1e3,
        stages,
        rmpu_utilization: pct(units as u128, block_u * (cfg.num_rmpus * UNITS_PER_ENGINE) as u128),
        rmpu_lane_occupancy: pct(
            lane_cycles as u128,
            block_u * (cfg.num_rmpus * super::LANES_PER_ENGINE) as u128,
        ),
        vvpu_utilization: pct(busy as u128, block_u * cfg.num_vvpus() as u128),
        achieved_bandwidth_gbps: if total == 0 {
            0.0
        } else {
            total_bytes as f64 / seconds / (1u64 << 30) as f64
        },
        total_bytes,
        peak_onchip_bytes: onchip,
        peak_main_memory_bytes: trace.peak_live_bytes(),
        rmpu_units: units * trace.num_blocks,
        vvpu_busy_cycles: busy * trace.num_blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::SchemeTable;
    use crate::workload::{build_folding_block, emit_trace, OpKind, Stage, WorkloadConfig};

    fn trace(ns: u64) -> Trace {
        emit_trace(
            &build_folding_block(ns, &WorkloadConfig::default()).unwrap(),
            Some(&SchemeTable::default()),
        )
    }

    fn mem_node(bytes: u64) -> TraceEntry {
        TraceEntry {
            node: 0,
            name: "copy".into(),
            kind: OpKind::SeqIo,
            stage: Stage::Mem,
            chain: 0,
            group: crate::quant::ActivationGroup::Unquantized,
            bytes_read: bytes,
            bytes_written: 0,
            weight_bytes: 0,
            rmpu: None,
            vvpu: Vec::new(),
            tiles: 1,
            tile_in_bytes: 0,
            tile_out_bytes: 0,
            writes_cube: false,
            live_bytes: bytes,
        }
    }

    #[test]
    fn empty_and_memory_only() {
        let cfg = SimConfig::default();
        let r = simulate_trace(&Trace::empty(), &cfg).unwrap();
        assert_eq!(r.total_cycles, 0);
        assert_eq!(r.rmpu_utilization, 0.0);
        let mut t = Trace::empty();
        t.entries.push(mem_node(1 << 20));
        let r = simulate_trace(&t, &cfg).unwrap();
        assert_eq!(r.total_cycles, mem_cycles(1 << 20, &cfg));
    }

    #[test]
    fn deterministic_and_bounded() {
        let cfg = SimConfig::default();
        let t = trace(32);
        let a = simulate_trace(&t, &cfg).unwrap();
        let b = simulate_trace(&t, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for u in [a.rmpu_utilization, a.vvpu_utilization, a.rmpu_lane_occupancy] {
            assert!((0.0..=100.0).contains(&u));
        }
        let sum = |f: fn(&StageLatency) -> u64| a.stages.iter().map(f).sum::<u64>();
        let longest = sum(|s| s.mem_cycles)
            .max(sum(|s| s.rmpu_cycles))
            .max(sum(|s| s.vvpu_cycles));
        assert!(a.block_cycles >= longest);
        assert_eq!(a.total_cycles, a.block_cycles * 48);
    }

    #[test]
    fn overflow_names_node() {
        let cfg = SimConfig {
            token_scratchpad_bytes: 1024,
            ..SimConfig::default()
        };
        let err = simulate_trace(&trace(64), &cfg).unwrap_err().to_string();
        assert!(err.contains("scratchpad overflow at node"), "{err}");
        let cfg = SimConfig {
            weight_scratchpad_bytes: 1024,
            ..SimConfig::default()
        };
        let err = simulate_trace(&trace(8), &cfg).unwrap_err().to_string();
        assert!(err.contains("trimul_out.a_proj"), "{err}");
    }

    #[test]
    fn defaults_hold_largest_tile_at_1024() {
        let cfg = SimConfig::default();
        let g = build_folding_block(1024, &WorkloadConfig::default()).unwrap();
        let plain = emit_trace(&g, None);
        let quant = emit_trace(&g, Some(&SchemeTable::default()));
        for t in [&plain, &quant] {
            for e in &t.entries {
                check_scratchpads(e, &cfg).unwrap();
            }
        }
        let largest = plain.entries.iter().map(|e| e.tile_in_bytes).max().unwrap();
        assert!(2 * largest <= cfg.token_scratchpad_bytes && 4 * largest > cfg.token_scratchpad_bytes);
    }

    #[test]
    fn work_is_conserved() {
        let cfg = SimConfig::default();
        let t = trace(16);
        let r = simulate_trace(&t, &cfg).unwrap();
        let mut expect = 0u64;
        for e in &t.entries {
            if let Some(d) = &e.rmpu {
                expect += rmpu_cycles(d, &cfg).unwrap().units;
            }
        }
        assert_eq!(r.rmpu_units, expect * t.num_blocks);
        let capacity = r.total_cycles as u128 * (cfg.num_rmpus * UNITS_PER_ENGINE) as u128;
        assert!((r.rmpu_units as u128) <= capacity);
    }

    #[test]
    fn monotone_in_bandwidth_and_rmpus() {
        let t = trace(32);
        let base = simulate_trace(&t, &SimConfig::default()).unwrap().total_cycles;
        let more_bw = SimConfig {
            mem_bandwidth_gbps: 4000.0,
            ..SimConfig::default()
        };
        assert!(simulate_trace(&t, &more_bw).unwrap().total_cycles <= base);
        let more = SimConfig {
            num_rmpus: 64,
            ..SimConfig::default()
        };
        assert!(simulate_trace(&t, &more).unwrap().total_cycles <= base);
    }
}
