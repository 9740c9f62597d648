use std::str::FromStr;

use super::config::SimConfig;
use crate::error::{Error, Result};
use crate::workload::{VvpuDemand, VvpuOp};

/// Cycles to emit the k selected values and their indices after the sort network.
pub const TOPK_BOOKKEEPING_CYCLES: u64 = 4;

impl FromStr for VvpuOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "topk" => VvpuOp::TopK,
            "quantize" => VvpuOp::Quantize,
            "softmax" => VvpuOp::Softmax,
            "layernorm" => VvpuOp::LayerNorm,
            "residual" => VvpuOp::Residual,
            "dequant-accumulate" | "dequant_accumulate" => VvpuOp::DequantAccumulate,
            "gate" => VvpuOp::Gate,
            other => return Err(Error::contract(format!("unknown VVPU op '{other}'"))),
        })
    }
}

fn pass(n: u64, s: u64) -> u64 {
    n.div_ceil(s)
}

/// Tree reduction: stage `i` combines `ceil(n / 2^i)` pairs.
fn reduce(n: u64, s: u64) -> u64 {
    let mut width = n;
    let mut cycles = 0;
    while width > 1 {
        width = width.div_ceil(2);
        cycles += pass(width, s);
    }
    cycles
}

/// Bitonic sort network on `n` padded to a power of two:
/// `L(L+1)/2` compare stages of `N/2` comparators each.
fn bitonic(n: u64, s: u64) -> u64 {
    let size = n.max(1).next_power_of_two();
    let l = size.trailing_zeros() as u64;
    l * (l + 1) / 2 * pass(size / 2, s)
}

/// Cycles for one vector of length `n` on one VVPU with `S` SIMD lanes.
pub fn vvpu_vector_cycles(op: VvpuOp, n: u64, cfg: &SimConfig) -> u64 {
    let s = cfg.simd_lanes_per_vvpu;
    match op {
        VvpuOp::TopK => bitonic(n, s) + TOPK_BOOKKEEPING_CYCLES,
        // abs-max, then scale-and-round, then pack.
        VvpuOp::Quantize => reduce(n, s) + 2 * pass(n, s),
        // max, exp lookup, sum, divide.
        VvpuOp::Softmax => 2 * reduce(n, s) + 2 * pass(n, s),
        // mean, center, variance, normalize, affine.
        VvpuOp::LayerNorm => 2 * reduce(n, s) + 3 * pass(n, s),
        VvpuOp::Residual | VvpuOp::DequantAccumulate => pass(n, s),
        // sigmoid lookup, multiply.
        VvpuOp::Gate => 2 * pass(n, s),
    }
}

/// VVPU busy cycles of a node's demands summed over vectors, and the
/// wall-clock cycles with vectors spread over every VVPU.
pub fn vvpu_cycles(demands: &[VvpuDemand], cfg: &SimConfig) -> (u64, u64) {
    let busy: u64 = demands
        .iter()
        .map(|d| d.count * vvpu_vector_cycles(d.op, d.n, cfg))
        .sum();
    (busy, busy.div_ceil(cfg.num_vvpus()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let cfg = SimConfig::default();
        assert_eq!(bitonic(128, 32), 56);
        assert_eq!(
            vvpu_vector_cycles(VvpuOp::TopK, 128, &cfg),
            56 + TOPK_BOOKKEEPING_CYCLES
        );
        assert_eq!(vvpu_vector_cycles(VvpuOp::Residual, 128, &cfg), 4);
        assert_eq!(vvpu_vector_cycles(VvpuOp::Softmax, 1, &cfg), 2);
        assert_eq!(reduce(128, 32), 2 + 1 + 1 + 1 + 1 + 1 + 1);
        assert_eq!(vvpu_vector_cycles(VvpuOp::Quantize, 128, &cfg), 8 + 8);
        assert_eq!(vvpu_vector_cycles(VvpuOp::LayerNorm, 128, &cfg), 16 + 12);
    }

    #[test]
    fn parses_kinds() {
        assert_eq!("topk".parse::<VvpuOp>().unwrap(), VvpuOp::TopK);
        assert_eq!(
            "dequant-accumulate".parse::<VvpuOp>().unwrap(),
            VvpuOp::DequantAccumulate
        );
        assert!("fft".parse::<VvpuOp>().is_err());
    }

    #[test]
    fn spread_over_units() {
        let cfg = SimConfig {
            num_rmpus: 1,
            vvpus_per_rmpu: 4,
            ..SimConfig::default()
        };
        let d = [VvpuDemand {
            op: VvpuOp::Residual,
            count: 10,
            n: 128,
        }];
        assert_eq!(vvpu_cycles(&d, &cfg), (40, 10));
    }
}
