use serde::{Deserialize, Serialize};

use super::config::{GroupAMode, SimConfig};
use crate::error::{Error, Result};
use crate::workload::{Operand, RmpuDemand};

/// A PE multiplies one 16-bit pair, i.e. sixteen 4-bit units.
pub const UNITS_PER_PE: u64 = 16;
pub const PES_PER_LANE: u64 = 8;
pub const UNITS_PER_LANE: u64 = UNITS_PER_PE * PES_PER_LANE;
pub const LANES_PER_CLUSTER: u64 = 20;
pub const CLUSTERS_PER_ENGINE: u64 = 4;
pub const LANES_PER_ENGINE: u64 = LANES_PER_CLUSTER * CLUSTERS_PER_ENGINE;
pub const UNITS_PER_ENGINE: u64 = UNITS_PER_LANE * LANES_PER_ENGINE;

/// How the engine adder tree combines lane results for one job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccumulationMode {
    Two,
    Four,
    /// Inliers accumulated and scaled, then combined with the outlier lane.
    FivePlusScale,
    Eight,
    Sixteen,
    /// Spans whole clusters, and engines beyond 80 lanes.
    Eighty,
}

impl AccumulationMode {
    /// Lane capacity of the mode.
    pub fn lanes(self) -> u64 {
        match self {
            AccumulationMode::Two => 2,
            AccumulationMode::Four => 4,
            AccumulationMode::FivePlusScale => 5,
            AccumulationMode::Eight => 8,
            AccumulationMode::Sixteen => 16,
            AccumulationMode::Eighty => 80,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneAllocation {
    pub job: u64,
    pub lanes: u64,
    pub mode: AccumulationMode,
}

/// 4-bit units for one dot product of a `len`-long token against weights.
pub fn units_required(token: &Operand, weight_bits: u32, len: u64) -> u64 {
    let w = weight_bits as u64 / 4;
    match *token {
        Operand::Plain { bits } => (bits as u64).div_ceil(4) * w * len,
        Operand::Quantized(s) => {
            let k = (s.outlier_count as u64).min(len);
            (s.inlier_bits as u64 / 4) * w * (len - k) + 4 * w * k
        }
    }
}

/// Lanes and accumulation mode for a job of `units` 4-bit units.
pub fn lanes_required(units: u64) -> Result<LaneAllocation> {
    if units == 0 {
        return Err(Error::contract("a job needs at least one unit"));
    }
    let lanes = units.div_ceil(UNITS_PER_LANE);
    let mode = match lanes {
        1..=2 => AccumulationMode::Two,
        3..=4 => AccumulationMode::Four,
        5 => AccumulationMode::FivePlusScale,
        6..=8 => AccumulationMode::Eight,
        9..=16 => AccumulationMode::Sixteen,
        _ => AccumulationMode::Eighty,
    };
    Ok(LaneAllocation { job: 0, lanes, mode })
}

/// Lane footprint of the engine jobs one dot product decomposes into.
///
/// 8-bit tokens split into a low 4-bit plane carrying the outliers and a high
/// plane; the two planes run as separate jobs.
pub fn job_lanes(token: &Operand, weight_bits: u32, len: u64, mode: GroupAMode) -> Result<Vec<u64>> {
    match *token {
        Operand::Quantized(s) if s.inlier_bits == 8 => {
            let w = weight_bits as u64 / 4;
            let k = (s.outlier_count as u64).min(len);
            let low = lanes_required(w * (len - k) + 4 * w * k)?.lanes;
            let high = lanes_required((w * (len - k)).max(1))?.lanes;
            Ok(match mode {
                GroupAMode::TwoJob => vec![low, high],
                GroupAMode::Serialized => vec![low, low],
            })
        }
        _ => Ok(vec![lanes_required(units_required(token, weight_bits, len))?.lanes]),
    }
}

/// Outcome of packing a job stream onto one engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackResult {
    pub cycles: u64,
    pub jobs: u64,
    pub lanes_used: u64,
}

impl PackResult {
    pub fn jobs_per_cycle(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.jobs as f64 / self.cycles as f64
        }
    }

    /// Allocated share of the engine's lane-cycles, in percent.
    pub fn lane_occupancy(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            100.0 * self.lanes_used as f64 / (self.cycles * LANES_PER_ENGINE) as f64
        }
    }
}

/// Greedy first-fit for one engine-cycle starting at `phase` of the pattern.
/// Returns (jobs placed, lanes placed). Stops at the first job that fits in
/// no cluster; jobs wider than a cluster take whole free clusters.
fn pack_one_cycle(pattern: &[u64], phase: usize, limit: u64) -> (u64, u64) {
    let mut free = [LANES_PER_CLUSTER; CLUSTERS_PER_ENGINE as usize];
    let mut placed = 0;
    let mut lanes = 0;
    while placed < limit {
        let need = pattern[(phase + placed as usize) % pattern.len()];
        let ok = if need <= LANES_PER_CLUSTER {
            match free.iter_mut().find(|f| **f >= need) {
                Some(f) => {
                    *f -= need;
                    true
                }
                None => false,
            }
        } else {
            let clusters = need.div_ceil(LANES_PER_CLUSTER) as usize;
            let empty: Vec<usize> = (0..free.len()).filter(|&c| free[c] == LANES_PER_CLUSTER).collect();
            if empty.len() >= clusters {
                for &c in &empty[..clusters] {
                    free[c] = 0;
                }
                true
            } else {
                false
            }
        };
        if !ok {
            break;
        }
        placed += 1;
        lanes += need;
    }
    (placed, lanes)
}

/// Packs `count` repetitions of `pattern` (lane needs of consecutive jobs)
/// onto one engine, cycle by cycle.
pub fn pack_stream(pattern: &[u64], count: u64) -> Result<PackResult> {
    if pattern.is_empty() || pattern.contains(&0) {
        return Err(Error::contract(
            "job pattern must be nonempty with positive lane counts",
        ));
    }
    let total = count * pattern.len() as u64;
    let wide = pattern.iter().any(|&l| l > LANES_PER_ENGINE);
    if wide {
        // Multi-engine jobs serialize: each takes ceil(lanes / 80) full cycles.
        let per_rep: u64 = pattern.iter().map(|&l| l.div_ceil(LANES_PER_ENGINE)).sum();
        let lanes: u64 = pattern.iter().sum();
        return Ok(PackResult {
            cycles: per_rep * count,
            jobs: total,
            lanes_used: lanes * count,
        });
    }
    // The packing of a cycle depends only on the pattern phase, so the
    // schedule is periodic in at most `pattern.len()` cycles.
    let n = pattern.len();
    let mut seen = vec![None; n];
    let (mut phase, mut done, mut cycles, mut lanes) = (0usize, 0u64, 0u64, 0u64);
    while done < total {
        if let Some((c0, d0, l0)) = seen[phase] {
            let (pc, pd, pl) = (cycles - c0, done - d0, lanes - l0);
            let reps = (total - done) / pd;
            if reps > 0 {
                cycles += reps * pc;
                done += reps * pd;
                lanes += reps * pl;
                seen.iter_mut().for_each(|s| *s = None);
                continue;
            }
        } else {
            seen[phase] = Some((cycles, done, lanes));
        }
        let (placed, l) = pack_one_cycle(pattern, phase, total - done);
        cycles += 1;
        done += placed;
        lanes += l;
        phase = (phase + placed as usize) % n;
        debug_assert!(placed > 0);
    }
    Ok(PackResult {
        cycles,
        jobs: total,
        lanes_used: lanes,
    })
}

/// RMPU time and work of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RmpuLoad {
    pub cycles: u64,
    /// 4-bit units doing useful multiplications.
    pub units: u64,
    /// Lanes allocated per cycle summed over cycles and engines.
    pub lane_cycles: u64,
}

/// Cycles for an RMPU node with its dot products spread evenly over the engines.
pub fn rmpu_cycles(demand: &RmpuDemand, cfg: &SimConfig) -> Result<RmpuLoad> {
    let engines = cfg.num_rmpus;
    match *demand {
        RmpuDemand::TokenDots {
            jobs,
            len,
            token,
            weight_bits,
        } => {
            if jobs == 0 {
                return Ok(RmpuLoad::default());
            }
            let pattern = job_lanes(&token, weight_bits, len, cfg.group_a_mode)?;
            let per_engine = jobs.div_ceil(engines);
            let busiest = pack_stream(&pattern, per_engine)?;
            let lanes_per_dot: u64 = pattern.iter().sum();
            Ok(RmpuLoad {
                cycles: busiest.cycles,
                units: jobs * units_required(&token, weight_bits, len),
                lane_cycles: jobs * lanes_per_dot,
            })
        }
        RmpuDemand::Streamed { macs, a, b, width, .. } => {
            let num = macs as u128 * a.token_bits(width) as u128 * b.token_bits(width) as u128;
            let den = 16 * width as u128 * width as u128;
            let units = num.div_ceil(den) as u64;
            let cycles = units.div_ceil(engines * UNITS_PER_ENGINE);
            Ok(RmpuLoad {
                cycles,
                units,
                lane_cycles: units.div_ceil(UNITS_PER_LANE),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{QuantScheme, SchemeTable};
    use proptest::prelude::*;

    fn scheme(bits: u32, k: usize) -> Operand {
        Operand::Quantized(QuantScheme::new(bits, k).unwrap())
    }

    #[test]
    fn unit_counts() {
        assert_eq!(units_required(&scheme(4, 4), 16, 128), 560);
        assert_eq!(units_required(&scheme(4, 0), 16, 128), 512);
        assert_eq!(units_required(&Operand::F16, 16, 128), 2048);
        assert_eq!(units_required(&scheme(8, 4), 16, 128), 1056);
        assert_eq!(UNITS_PER_ENGINE, 10_240);
    }

    #[test]
    fn lane_modes() {
        let m = |u| lanes_required(u).unwrap();
        assert_eq!((m(512).lanes, m(512).mode), (4, AccumulationMode::Four));
        assert_eq!((m(560).lanes, m(560).mode), (5, AccumulationMode::FivePlusScale));
        assert_eq!((m(2048).lanes, m(2048).mode), (16, AccumulationMode::Sixteen));
        assert_eq!(m(32).mode, AccumulationMode::Two);
        assert_eq!(m(2561).mode, AccumulationMode::Eighty);
        assert!(lanes_required(0).is_err());
        for u in 1..3000 {
            let a = m(u);
            assert!(a.lanes <= a.mode.lanes() || a.mode == AccumulationMode::Eighty);
        }
    }

    #[test]
    fn group_a_split() {
        let t = SchemeTable::default();
        let a = Operand::Quantized(t.a);
        assert_eq!(job_lanes(&a, 16, 128, GroupAMode::TwoJob).unwrap(), vec![5, 4]);
        assert_eq!(job_lanes(&a, 16, 128, GroupAMode::Serialized).unwrap(), vec![5, 5]);
        // 560 + 496 covers the whole token.
        assert_eq!(560 + 4 * 124, units_required(&a, 16, 128));
    }

    #[test]
    fn packing_examples() {
        let c = |p: &[u64], n| pack_stream(p, n).unwrap().cycles;
        assert_eq!(c(&[4], 20), 1);
        assert_eq!(c(&[4], 21), 2);
        assert_eq!(c(&[5], 16), 1);
        assert_eq!(c(&[5], 17), 2);
        assert_eq!(c(&[16], 4), 1);
        assert_eq!(c(&[16], 5), 2);
        assert_eq!(c(&[5, 4], 8), 1);
        assert_eq!(c(&[5, 4], 9), 2);
        assert_eq!(c(&[4], 0), 0);
        let r = pack_stream(&[4], 20_000).unwrap();
        assert_eq!(r.jobs_per_cycle(), 20.0);
        assert_eq!(r.lane_occupancy(), 100.0);
    }

    #[test]
    fn wide_jobs() {
        assert_eq!(pack_stream(&[40], 2).unwrap().cycles, 1);
        assert_eq!(pack_stream(&[40], 3).unwrap().cycles, 2);
        assert_eq!(pack_stream(&[160], 3).unwrap().cycles, 6);
    }

    #[test]
    fn engines_split_jobs() {
        let cfg = SimConfig {
            num_rmpus: 2,
            ..SimConfig::default()
        };
        let d = RmpuDemand::TokenDots {
            jobs: 40,
            len: 128,
            token: scheme(4, 0),
            weight_bits: 16,
        };
        let load = rmpu_cycles(&d, &cfg).unwrap();
        assert_eq!(load.cycles, 1);
        assert_eq!(load.units, 40 * 512);
        let d = RmpuDemand::Streamed {
            macs: 10_240 * 2,
            a: scheme(4, 0),
            b: scheme(4, 0),
            width: 128,
            dots: 1,
        };
        assert_eq!(rmpu_cycles(&d, &cfg).unwrap().cycles, 1);
        let d = RmpuDemand::Streamed {
            macs: 10_240 * 2,
            a: Operand::F16,
            b: Operand::F16,
            width: 128,
            dots: 1,
        };
        assert_eq!(rmpu_cycles(&d, &cfg).unwrap().cycles, 16);
    }

    /// Fewest cycles for a job multiset: optimal bin packing into 20-lane
    /// clusters, four clusters per cycle.
    fn optimal_cycles(jobs: &[u64]) -> u64 {
        fn place(jobs: &[u64], bins: &mut Vec<u64>, best: &mut usize) {
            if bins.len() >= *best {
                return;
            }
            let Some((&j, rest)) = jobs.split_first() else {
                *best = bins.len();
                return;
            };
            for b in 0..bins.len() {
                if bins[b] + j <= LANES_PER_CLUSTER {
                    bins[b] += j;
                    place(rest, bins, best);
                    bins[b] -= j;
                }
            }
            bins.push(j);
            place(rest, bins, best);
            bins.pop();
        }
        let mut best = usize::MAX;
        place(jobs, &mut Vec::new(), &mut best);
        (best as u64).div_ceil(CLUSTERS_PER_ENGINE)
    }

    #[test]
    fn greedy_matches_exhaustive_oracle_on_uniform_streams() {
        for lanes in [2u64, 4, 5, 8, 16] {
            for n in 1..=18u64 {
                let jobs = vec![lanes; n as usize];
                assert_eq!(
                    pack_stream(&[lanes], n).unwrap().cycles,
                    optimal_cycles(&jobs),
                    "lanes {lanes} n {n}"
                );
            }
        }
        for n in 1..=9u64 {
            let jobs: Vec<u64> = (0..n).flat_map(|_| [5, 4]).collect();
            assert_eq!(
                pack_stream(&[5, 4], n).unwrap().cycles,
                optimal_cycles(&jobs),
                "pairs {n}"
            );
        }
    }

    proptest! {
        #[test]
        fn greedy_never_beats_optimal(pattern in proptest::collection::vec(1u64..=20, 1..3), reps in 1u64..5) {
            let jobs: Vec<u64> = (0..reps).flat_map(|_| pattern.clone()).collect();
            let greedy = pack_stream(&pattern, reps).unwrap();
            prop_assert!(greedy.cycles >= optimal_cycles(&jobs));
            prop_assert!(greedy.lanes_used <= greedy.cycles * LANES_PER_ENGINE);
        }

        #[test]
        fn periodic_shortcut_matches_direct(pattern in proptest::collection::vec(1u64..=20, 1..4), reps in 1u64..200) {
            let fast = pack_stream(&pattern, reps).unwrap();
            let total = reps * pattern.len() as u64;
            let (mut done, mut cycles, mut phase) = (0u64, 0u64, 0usize);
            while done < total {
                let (p, _) = pack_one_cycle(&pattern, phase, total - done);
                done += p;
                cycles += 1;
                phase = (phase + p as usize) % pattern.len();
            }
            prop_assert_eq!(fast.cycles, cycles);
        }
    }
}
