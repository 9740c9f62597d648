use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::engine::{simulate_trace, SimReport};
use crate::error::Result;
use crate::workload::Trace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ns: u64,
    pub num_rmpus: u64,
    pub vvpus_per_rmpu: u64,
    pub total_cycles: u64,
    pub latency_ms: f64,
    pub rmpu_utilization: f64,
    pub vvpu_utilization: f64,
    pub achieved_bandwidth_gbps: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str =
        "ns,num_rmpus,vvpus_per_rmpu,total_cycles,latency_ms,rmpu_utilization,vvpu_utilization,achieved_bandwidth_gbps";

    fn new(r: &SimReport, cfg: &SimConfig) -> SweepRow {
        SweepRow {
            ns: r.ns,
            num_rmpus: cfg.num_rmpus,
            vvpus_per_rmpu: cfg.vvpus_per_rmpu,
            total_cycles: r.total_cycles,
            latency_ms: r.latency_ms,
            rmpu_utilization: r.rmpu_utilization,
            vvpu_utilization: r.vvpu_utilization,
            achieved_bandwidth_gbps: r.achieved_bandwidth_gbps,
        }
    }

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.4},{:.4},{:.4}",
            self.ns,
            self.num_rmpus,
            self.vvpus_per_rmpu,
            self.total_cycles,
            self.latency_ms,
            self.rmpu_utilization,
            self.vvpu_utilization,
            self.achieved_bandwidth_gbps
        )
    }
}

/// Simulates every (trace, config) pair on up to `jobs` threads. Rows come
/// back in grid order whatever the thread count.
pub fn sweep(traces: &[Trace], grid: &[SimConfig], jobs: usize) -> Result<Vec<SweepRow>> {
    let points: Vec<(usize, usize)> = (0..traces.len())
        .flat_map(|t| (0..grid.len()).map(move |c| (t, c)))
        .collect();
    let results: Mutex<Vec<Option<Result<SweepRow>>>> = Mutex::new((0..points.len()).map(|_| None).collect());
    let next = Mutex::new(0usize);
    let workers = jobs.clamp(1, points.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&(t, c)) = points.get(i) else { break };
                let row = simulate_trace(&traces[t], &grid[c]).map(|r| SweepRow::new(&r, &grid[c]));
                results.lock().unwrap()[i] = Some(row);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every point ran"))
        .collect()
}
