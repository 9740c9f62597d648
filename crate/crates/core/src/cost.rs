//! Byte and operation accounting over traces, for baseline, Chunk4 and AAQ
//! dataflows.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::SchemeTable;
use crate::workload::{
    build_folding_block, edge_bytes, emit_trace, DataflowGraph, Operand, RmpuDemand, Trace, VvpuOp, WorkloadConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// 16-bit activations, materialized attention scores.
    Vanilla,
    /// Vanilla with chunked attention and transition intermediates.
    Chunk4,
    /// Quantized activations with streaming attention.
    Aaq,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Vanilla, Variant::Chunk4, Variant::Aaq];

    /// Workload flags of the variant on top of `base`.
    pub fn workload(self, base: &WorkloadConfig) -> WorkloadConfig {
        let mut cfg = base.clone();
        cfg.streaming_mha = self == Variant::Aaq;
        cfg.chunk4 = self == Variant::Chunk4;
        cfg
    }

    pub fn schemes(self, table: &SchemeTable) -> Option<SchemeTable> {
        (self == Variant::Aaq).then_some(*table)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Vanilla => "vanilla",
            Variant::Chunk4 => "chunk4",
            Variant::Aaq => "aaq",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" => Ok(Variant::Vanilla),
            "chunk4" => Ok(Variant::Chunk4),
            "aaq" => Ok(Variant::Aaq),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (vanilla, chunk4, aaq)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub ns: u64,
    pub variant: Variant,
    pub weight_bytes: u64,
    pub peak_activation_bytes: u64,
    /// Cumulative main-memory read and write traffic of the whole trunk.
    pub total_footprint_bytes: u64,
    pub int8_equivalent_ops: f64,
}

impl CostReport {
    pub const CSV_HEADER: &'static str = "ns,variant,weight_bytes,peak_bytes,footprint_bytes,int8_ops";

    /// Weights plus the activation live set.
    pub fn peak_bytes(&self) -> u64 {
        self.weight_bytes + self.peak_activation_bytes
    }

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.0}",
            self.ns,
            self.variant,
            self.weight_bytes,
            self.peak_bytes(),
            self.total_footprint_bytes,
            self.int8_equivalent_ops
        )
    }
}

/// Graph and trace of one variant.
pub fn variant_trace(
    ns: u64,
    variant: Variant,
    cfg: &WorkloadConfig,
    table: &SchemeTable,
) -> Result<(DataflowGraph, Trace)> {
    let g = build_folding_block(ns, &variant.workload(cfg))?;
    let schemes = variant.schemes(table);
    let t = emit_trace(&g, schemes.as_ref());
    Ok((g, t))
}

pub fn cost_report(ns: u64, variant: Variant, cfg: &WorkloadConfig, table: &SchemeTable) -> Result<CostReport> {
    let (g, t) = variant_trace(ns, variant, cfg, table)?;
    Ok(CostReport {
        ns,
        variant,
        weight_bytes: g.model_weight_bytes(),
        peak_activation_bytes: t.peak_live_bytes(),
        total_footprint_bytes: footprint(&t),
        int8_equivalent_ops: int8_equivalent_ops(&t),
    })
}

/// Weights plus the largest activation live set of the variant.
pub fn peak_memory(ns: u64, variant: Variant, cfg: &WorkloadConfig, table: &SchemeTable) -> Result<u64> {
    Ok(cost_report(ns, variant, cfg, table)?.peak_bytes())
}

/// Cumulative main-memory traffic of the trunk; the same sum the simulator uses.
pub fn footprint(trace: &Trace) -> u64 {
    trace.total_bytes()
}

/// Average multiplier input width of one operand element.
fn mean_bits(op: &Operand, width: u64) -> f64 {
    op.token_bits(width) as f64 / width as f64
}

/// INT8-equivalent weight of one `a`-bit by `b`-bit multiply.
pub fn multiply_weight(a_bits: f64, b_bits: f64) -> f64 {
    (a_bits / 8.0) * (b_bits / 8.0)
}

/// INT8-equivalent weight of one add of `a`-bit and `b`-bit operands.
pub fn add_weight(a_bits: f64, b_bits: f64) -> f64 {
    a_bits.max(b_bits) / 8.0
}

const ADD16: f64 = 2.0;
const MUL16: f64 = 4.0;

/// INT8-equivalent cost of one vector op element by element, in 16-bit
/// arithmetic: (adds, multiplies) per element.
fn vector_ops(op: VvpuOp) -> (f64, f64) {
    match op {
        VvpuOp::LayerNorm => (4.0, 3.0),
        VvpuOp::Softmax => (3.0, 2.0),
        VvpuOp::Residual => (1.0, 0.0),
        VvpuOp::DequantAccumulate => (1.0, 1.0),
        VvpuOp::Gate => (0.0, 2.0),
        VvpuOp::Quantize => (2.0, 1.0),
        VvpuOp::TopK => (0.0, 0.0),
    }
}

/// Compare-exchanges of a bitonic network on `n` values.
fn bitonic_compares(n: u64) -> u64 {
    let size = n.max(1).next_power_of_two();
    let l = size.trailing_zeros() as u64;
    l * (l + 1) / 2 * (size / 2)
}

/// Operation count of one block's trace scaled to the trunk, with every
/// operation converted to INT8 equivalents: a multiply weighs
/// `(bitsA/8)(bitsB/8)`, an add `max(bits)/8`, and a quantized dot product
/// pays one 16x16 rescale. Vector work runs at 16 bits.
pub fn int8_equivalent_ops(trace: &Trace) -> f64 {
    let mut total = 0.0;
    for e in &trace.entries {
        match e.rmpu {
            Some(RmpuDemand::TokenDots {
                jobs,
                len,
                token,
                weight_bits,
            }) => {
                let w = weight_bits as f64;
                let (mults, adds) = match token {
                    Operand::Plain { bits } => {
                        let b = bits as f64;
                        (len as f64 * multiply_weight(b, w), len as f64 * add_weight(b, w))
                    }
                    Operand::Quantized(s) => {
                        let k = (s.outlier_count as u64).min(len) as f64;
                        let inl = len as f64 - k;
                        let m = s.inlier_bits as f64;
                        let mults = inl * multiply_weight(m, w) + k * multiply_weight(16.0, w);
                        let adds = inl * add_weight(m, w) + k * add_weight(16.0, w);
                        (mults + MUL16, adds)
                    }
                };
                total += jobs as f64 * (mults + adds);
            }
            Some(RmpuDemand::Streamed {
                macs,
                a,
                b,
                width,
                dots,
            }) => {
                let (ba, bb) = (mean_bits(&a, width), mean_bits(&b, width));
                total += macs as f64 * (multiply_weight(ba, bb) + add_weight(ba, bb));
                if a.is_quantized() || b.is_quantized() {
                    total += dots as f64 * MUL16;
                }
            }
            None => {}
        }
        for d in &e.vvpu {
            let elems = (d.count * d.n) as f64;
            let (adds, mults) = vector_ops(d.op);
            total += elems * (adds * ADD16 + mults * MUL16);
            if d.op == VvpuOp::TopK {
                total += (d.count * bitonic_compares(d.n)) as f64 * ADD16;
            }
        }
    }
    total * trace.num_blocks as f64
}

/// Least-squares slope of `log(value)` against `log(ns)`.
pub fn fit_scaling_exponent(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 4 {
        return Err(Error::Degenerate(format!(
            "need at least 4 points, got {}",
            points.len()
        )));
    }
    if points
        .iter()
        .any(|&(x, y)| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()))
    {
        return Err(Error::Degenerate("points must be positive and finite".into()));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx < 1e-12 {
        return Err(Error::Degenerate("all Ns values are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Stored bytes of every pair-tensor edge of one block.
pub fn pair_edge_bytes(g: &DataflowGraph, schemes: Option<&SchemeTable>) -> u64 {
    g.edges
        .iter()
        .filter(|e| e.pair)
        .map(|e| edge_bytes(e, g, schemes))
        .sum()
}

/// Stored bytes of the score and probability tensors of one block.
pub fn score_tensor_bytes(g: &DataflowGraph, schemes: Option<&SchemeTable>) -> u64 {
    g.edges
        .iter()
        .filter(|e| e.is_cube(g.ns))
        .map(|e| edge_bytes(e, g, schemes))
        .sum()
}

/// Footprint reduction of AAQ against a 16-bit run of the same dataflow
/// (streaming attention on both sides), so only quantization differs.
pub fn footprint_reduction(ns: u64, cfg: &WorkloadConfig, table: &SchemeTable) -> Result<f64> {
    let g = build_folding_block(ns, &Variant::Aaq.workload(cfg))?;
    let base = footprint(&emit_trace(&g, None));
    let aaq = footprint(&emit_trace(&g, Some(table)));
    Ok(1.0 - aaq as f64 / base as f64)
}

/// Compute reduction of AAQ against the 16-bit baseline.
pub fn compute_reduction(ns: u64, cfg: &WorkloadConfig, table: &SchemeTable) -> Result<f64> {
    let (_, base) = variant_trace(ns, Variant::Vanilla, cfg, table)?;
    let (_, aaq) = variant_trace(ns, Variant::Aaq, cfg, table)?;
    Ok(1.0 - int8_equivalent_ops(&aaq) / int8_equivalent_ops(&base))
}
