use super::config::SimConfig;

const GIB: f64 = (1u64 << 30) as f64;

/// Cycles to move `bytes` over the memory interface: whole transactions at
/// the configured bandwidth plus a fixed overhead. Zero bytes cost nothing.
pub fn mem_cycles(bytes: u64, cfg: &SimConfig) -> u64 {
    if bytes == 0 {
        return 0;
    }
    let aligned = bytes.div_ceil(cfg.mem_txn_bytes) * cfg.mem_txn_bytes;
    let seconds = aligned as f64 / (cfg.mem_bandwidth_gbps * GIB);
    (seconds * cfg.clock_ghz * 1e9).ceil() as u64 + cfg.mem_fixed_overhead_cycles
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let cfg = SimConfig::default();
        assert_eq!(mem_cycles(0, &cfg), 0);
        assert_eq!(mem_cycles(64, &cfg), 1 + cfg.mem_fixed_overhead_cycles);
        assert_eq!(mem_cycles(65, &cfg), mem_cycles(128, &cfg));
        // 2000 GiB/s at 1 GHz moves 2147.48 bytes per cycle.
        assert_eq!(
            mem_cycles(2_147_483_648, &cfg),
            1_000_000 + cfg.mem_fixed_overhead_cycles
        );
    }

    #[test]
    fn more_bandwidth_never_slower() {
        let slow = SimConfig::default();
        let fast = SimConfig {
            mem_bandwidth_gbps: 3000.0,
            ..SimConfig::default()
        };
        for b in [1u64, 100, 10_000, 1 << 30] {
            assert!(mem_cycles(b, &fast) <= mem_cycles(b, &slow));
        }
    }
}
