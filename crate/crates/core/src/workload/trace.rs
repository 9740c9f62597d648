use serde::{Deserialize, Serialize};

use super::graph::{DataflowGraph, Edge, NodeId, OpKind, OpNode, Residency};
use crate::quant::{block_bytes, ActivationGroup, QuantScheme, SchemeTable, OUTLIER_BITS};

/// Positions processed per tile by token-local nodes.
pub const TOKEN_TILE_POSITIONS: u64 = 256;

/// Chunk factor of the Chunk4 transformation.
pub const CHUNK_FACTOR: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Rmpu,
    Vvpu,
    Mem,
}

/// Storage form of an RMPU operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operand {
    Quantized(QuantScheme),
    Plain { bits: u32 },
}

impl Operand {
    pub const F16: Operand = Operand::Plain { bits: 16 };

    /// Total bits of the multiplier inputs of one `width`-long token.
    pub fn token_bits(&self, width: u64) -> u64 {
        match *self {
            Operand::Plain { bits } => bits as u64 * width,
            Operand::Quantized(s) => {
                let k = (s.outlier_count as u64).min(width);
                s.inlier_bits as u64 * (width - k) + OUTLIER_BITS as u64 * k
            }
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, Operand::Quantized(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RmpuDemand {
    /// `jobs` dot products of one `len`-long token against a weight column.
    TokenDots {
        jobs: u64,
        len: u64,
        token: Operand,
        weight_bits: u32,
    },
    /// Products between two activations streamed through the engine at full
    /// occupancy; `width` is the token length that sets the operand bit mix.
    Streamed {
        macs: u64,
        a: Operand,
        b: Operand,
        width: u64,
        dots: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VvpuOp {
    TopK,
    Quantize,
    Softmax,
    LayerNorm,
    Residual,
    DequantAccumulate,
    /// Sigmoid lookup followed by a multiply.
    Gate,
}

/// `count` vectors of length `n` for one VVPU operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VvpuDemand {
    pub op: VvpuOp,
    pub count: u64,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub node: NodeId,
    pub name: String,
    pub kind: OpKind,
    pub stage: Stage,
    pub chain: u32,
    pub group: ActivationGroup,
    /// Activation bytes read from main memory.
    pub bytes_read: u64,
    /// Activation bytes written to main memory.
    pub bytes_written: u64,
    /// Weight bytes loaded into the weight scratchpad.
    pub weight_bytes: u64,
    pub rmpu: Option<RmpuDemand>,
    pub vvpu: Vec<VvpuDemand>,
    pub tiles: u64,
    /// Token-scratchpad bytes of one tile, single-buffered.
    pub tile_in_bytes: u64,
    /// Output-scratchpad bytes of one tile, single-buffered.
    pub tile_out_bytes: u64,
    /// Writes a tensor with three sequence axes to main memory.
    pub writes_cube: bool,
    /// Main-memory activation bytes live while the node runs.
    pub live_bytes: u64,
}

impl TraceEntry {
    /// All main-memory traffic of the node.
    pub fn total_bytes(&self) -> u64 {
        self.bytes_read + self.bytes_written + self.weight_bytes
    }
}

/// Trace of one block plus the context needed to scale it to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub ns: u64,
    pub hz: u64,
    pub num_blocks: u64,
    pub schemes: Option<SchemeTable>,
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn empty() -> Trace {
        Trace {
            ns: 0,
            hz: 0,
            num_blocks: 1,
            schemes: None,
            entries: Vec::new(),
        }
    }

    /// Main-memory bytes of one block.
    pub fn block_bytes(&self) -> u64 {
        self.entries.iter().map(TraceEntry::total_bytes).sum()
    }

    /// Main-memory bytes of the whole trunk.
    pub fn total_bytes(&self) -> u64 {
        self.block_bytes() * self.num_blocks
    }

    /// Largest main-memory activation live set; blocks run one after another.
    pub fn peak_live_bytes(&self) -> u64 {
        self.entries.iter().map(|e| e.live_bytes).max().unwrap_or(0)
    }
}

/// Scheme actually applied to a token of `width` elements.
fn effective_scheme(s: QuantScheme, width: u64) -> QuantScheme {
    let k = (s.outlier_count as u64).min(width.saturating_sub(1)) as usize;
    QuantScheme::new_unchecked(s.inlier_bits, k)
}

pub(crate) fn edge_operand(e: &Edge, hz: u64, schemes: Option<&SchemeTable>) -> Operand {
    match (schemes, e.group) {
        (Some(t), g) if g != ActivationGroup::Unquantized => {
            let s = t.get(g).expect("quantized group has a scheme");
            Operand::Quantized(effective_scheme(s, e.token_width(hz)))
        }
        _ => Operand::F16,
    }
}

/// Stored size of an edge: encoded blocks for quantized edges, 16-bit otherwise.
pub fn edge_bytes(e: &Edge, g: &DataflowGraph, schemes: Option<&SchemeTable>) -> u64 {
    let hz = g.hz();
    match edge_operand(e, hz, schemes) {
        Operand::Plain { bits } => e.elements() * bits as u64 / 8,
        Operand::Quantized(s) => {
            let width = e.token_width(hz) as usize;
            let tokens = e.tokens(hz);
            let per = g.config.tokens_per_block;
            let txn = g.config.txn_bytes as usize;
            let full = tokens / per;
            let rest = tokens % per;
            let mut bytes = full * block_bytes(per as usize, &s, width, txn) as u64;
            if rest > 0 {
                bytes += block_bytes(rest as usize, &s, width, txn) as u64;
            }
            bytes
        }
    }
}

fn positions(e: &Edge, ns: u64) -> u64 {
    match e.dims.len() {
        4 => ns * ns,
        3 => ns * ns,
        _ => ns,
    }
}

fn cross_token(kind: OpKind) -> bool {
    matches!(kind, OpKind::Einsum | OpKind::MhaQk | OpKind::Softmax | OpKind::MhaAv)
}

struct Emitter<'a> {
    g: &'a DataflowGraph,
    schemes: Option<&'a SchemeTable>,
    bytes: Vec<u64>,
}

impl Emitter<'_> {
    fn edge(&self, id: usize) -> &Edge {
        &self.g.edges[id]
    }

    fn operand(&self, id: usize) -> Operand {
        edge_operand(self.edge(id), self.g.hz(), self.schemes)
    }

    /// Bytes an edge occupies in a scratchpad; dequantized copies are held in
    /// their quantized form and expanded on the fly.
    fn stored_bytes(&self, id: usize) -> u64 {
        let e = self.edge(id);
        match e.producer.map(|p| &self.g.nodes[p]) {
            Some(p) if p.kind == OpKind::DequantizeEdge => self.bytes[p.inputs[0]],
            _ => self.bytes[id],
        }
    }

    /// Bytes of one tile of an edge as seen by `node`.
    fn tile_bytes(&self, node: &OpNode, id: usize) -> u64 {
        let e = self.edge(id);
        let ns = self.g.ns;
        let b = self.stored_bytes(id);
        if cross_token(node.kind) {
            let per = if e.dims.len() == 4 { ns * ns } else { ns };
            b.div_ceil(per)
        } else {
            let p = positions(e, ns);
            (b * TOKEN_TILE_POSITIONS.min(p)).div_ceil(p)
        }
    }

    fn chunk_factor(&self, node: &OpNode, input: usize) -> u64 {
        match node.chunk_region {
            Some(r) => {
                let inside = self.edge(input).producer.and_then(|p| self.g.nodes[p].chunk_region) == Some(r);
                if inside {
                    1
                } else {
                    CHUNK_FACTOR
                }
            }
            None => 1,
        }
    }

    fn entry(&self, node: &OpNode) -> TraceEntry {
        let g = self.g;
        let (ns, hz) = (g.ns, g.hz());
        let cfg = &g.config;
        let out = self.edge(node.output);
        let bytes_read = node
            .inputs
            .iter()
            .filter(|&&e| self.edge(e).residency == Residency::Dram)
            .map(|&e| self.bytes[e] * self.chunk_factor(node, e))
            .sum();
        let dram_out = out.residency == Residency::Dram;
        let bytes_written = if dram_out { self.bytes[node.output] } else { 0 };

        let mut vvpu = Vec::new();
        let mut rmpu = None;
        let out_width = out.token_width(hz);
        let out_tokens = out.tokens(hz);
        let first = self.edge(node.inputs[0]);
        match node.kind {
            OpKind::Linear | OpKind::Bias => {
                let in_dim = *first.dims.last().unwrap();
                let len = first.token_width(hz);
                let sub = in_dim / len;
                let out_dim = *out.dims.last().unwrap();
                let pos = positions(out, ns);
                rmpu = Some(RmpuDemand::TokenDots {
                    jobs: pos * out_dim * sub,
                    len,
                    token: self.operand(node.inputs[0]),
                    weight_bits: 16,
                });
                if sub > 1 {
                    vvpu.push(VvpuDemand {
                        op: VvpuOp::DequantAccumulate,
                        count: pos * (sub - 1),
                        n: out_dim,
                    });
                }
            }
            OpKind::Einsum => {
                let c = *out.dims.last().unwrap();
                rmpu = Some(RmpuDemand::Streamed {
                    macs: ns * ns * ns * c,
                    a: self.operand(node.inputs[0]),
                    b: self.operand(node.inputs[1]),
                    width: c,
                    dots: ns * ns * c,
                });
            }
            OpKind::MhaQk => {
                let h = cfg.num_heads;
                rmpu = Some(RmpuDemand::Streamed {
                    macs: h * ns * ns * ns * cfg.head_dim,
                    a: self.operand(node.inputs[0]),
                    b: self.operand(node.inputs[1]),
                    width: hz,
                    dots: h * ns * ns * ns,
                });
                vvpu.push(VvpuDemand {
                    op: VvpuOp::Residual,
                    count: h * ns * ns,
                    n: ns,
                });
            }
            OpKind::Softmax => {
                vvpu.push(VvpuDemand {
                    op: VvpuOp::Softmax,
                    count: cfg.num_heads * ns * ns,
                    n: ns,
                });
            }
            OpKind::MhaAv => {
                rmpu = Some(RmpuDemand::Streamed {
                    macs: cfg.num_heads * ns * ns * ns * cfg.head_dim,
                    a: self.operand(node.inputs[0]),
                    b: self.operand(node.inputs[1]),
                    width: hz,
                    dots: ns * ns * hz,
                });
            }
            OpKind::LayerNorm => {
                vvpu.push(VvpuDemand {
                    op: VvpuOp::LayerNorm,
                    count: out_tokens,
                    n: out_width,
                });
            }
            OpKind::Gate => {
                vvpu.push(VvpuDemand {
                    op: VvpuOp::Gate,
                    count: out_tokens,
                    n: out_width,
                });
            }
            OpKind::ResidualAdd => {
                vvpu.push(VvpuDemand {
                    op: VvpuOp::Residual,
                    count: out_tokens,
                    n: out_width,
                });
            }
            OpKind::DequantizeEdge | OpKind::QuantizeEdge => {
                if self.operand(node.inputs[0]).is_quantized() {
                    vvpu.push(VvpuDemand {
                        op: VvpuOp::DequantAccumulate,
                        count: out_tokens,
                        n: out_width,
                    });
                }
            }
            OpKind::SeqIo => {}
        }
        if let Operand::Quantized(s) = self.operand(node.output) {
            if s.outlier_count > 0 {
                vvpu.push(VvpuDemand {
                    op: VvpuOp::TopK,
                    count: out_tokens,
                    n: out_width,
                });
            }
            vvpu.push(VvpuDemand {
                op: VvpuOp::Quantize,
                count: out_tokens,
                n: out_width,
            });
        }
        vvpu.retain(|d| d.count > 0 && d.n > 0);

        let stage = if rmpu.is_some() {
            Stage::Rmpu
        } else if !vvpu.is_empty() {
            Stage::Vvpu
        } else {
            Stage::Mem
        };
        // Sequence traffic bypasses the pair scratchpads.
        let opaque = node.kind == OpKind::SeqIo;
        let tiles = if cross_token(node.kind) {
            ns
        } else {
            positions(out, ns).div_ceil(TOKEN_TILE_POSITIONS)
        };
        TraceEntry {
            node: node.id,
            name: node.name.clone(),
            kind: node.kind,
            stage,
            chain: node.chain,
            group: node.group_tag,
            bytes_read,
            bytes_written,
            weight_bytes: node.weight_bytes(),
            rmpu,
            vvpu,
            tiles,
            tile_in_bytes: if opaque {
                0
            } else {
                node.inputs.iter().map(|&e| self.tile_bytes(node, e)).sum()
            },
            tile_out_bytes: if dram_out && !opaque {
                self.tile_bytes(node, node.output)
            } else {
                0
            },
            writes_cube: dram_out && out.is_cube(ns),
            live_bytes: 0,
        }
    }
}

/// Main-memory bytes live at each node. An edge lives from its producer
/// (block start for inputs) to its last consumer (block end for outputs);
/// on-chip edges never occupy main memory. Under Chunk4, edges produced and
/// consumed inside one chunked region hold a quarter of their size.
fn live_set(g: &DataflowGraph, bytes: &[u64]) -> Vec<u64> {
    let last = g.nodes.len().saturating_sub(1);
    let mut live = vec![0u64; g.nodes.len()];
    for e in &g.edges {
        if e.residency == Residency::OnChip {
            continue;
        }
        let start = e.producer.unwrap_or(0);
        let mut end = e.consumers.iter().copied().max().unwrap_or(start);
        if e.block_output {
            end = last;
        }
        let region = e.producer.and_then(|p| g.nodes[p].chunk_region);
        let chunked = region.is_some() && e.consumers.iter().all(|&c| g.nodes[c].chunk_region == region);
        let size = if chunked {
            bytes[e.id].div_ceil(CHUNK_FACTOR)
        } else {
            bytes[e.id]
        };
        for slot in &mut live[start..=end.min(last)] {
            *slot += size;
        }
    }
    live
}

/// Per-node byte and work counts. `schemes = None` stores every edge at 16 bits.
pub fn emit_trace(g: &DataflowGraph, schemes: Option<&SchemeTable>) -> Trace {
    let mut em = Emitter {
        g,
        schemes,
        bytes: Vec::new(),
    };
    em.bytes = g.edges.iter().map(|e| edge_bytes(e, g, schemes)).collect();
    let mut entries: Vec<TraceEntry> = g.nodes.iter().map(|n| em.entry(n)).collect();
    for (node, live) in live_set(g, &em.bytes).into_iter().enumerate() {
        entries[node].live_bytes = live;
    }
    Trace {
        ns: g.ns,
        hz: g.hz(),
        num_blocks: g.num_blocks(),
        schemes: schemes.copied(),
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{build_folding_block, WorkloadConfig};

    fn graph(ns: u64) -> DataflowGraph {
        build_folding_block(ns, &WorkloadConfig::default()).unwrap()
    }

    #[test]
    fn edge_sizes() {
        let g = graph(16);
        let t = SchemeTable::default();
        let c = g.edges.iter().find(|e| e.name == "attn_start.gate").unwrap();
        assert_eq!(c.tokens(128), 256);
        // 8 full blocks of 32 tokens: 8 + 32 * 66 = 2120 -> 2176 bytes each.
        assert_eq!(edge_bytes(c, &g, Some(&t)), 8 * 2176);
        assert!(edge_bytes(c, &g, Some(&t)) >= 256 * 66);
        assert_eq!(edge_bytes(c, &g, None), 65_536);
    }

    #[test]
    fn streaming_removes_cube_writes() {
        let mut cfg = WorkloadConfig::default();
        let t = emit_trace(&build_folding_block(8, &cfg).unwrap(), Some(&SchemeTable::default()));
        assert!(t.entries.iter().all(|e| !e.writes_cube));
        cfg.streaming_mha = false;
        let t = emit_trace(&build_folding_block(8, &cfg).unwrap(), Some(&SchemeTable::default()));
        let cubes: Vec<OpKind> = t.entries.iter().filter(|e| e.writes_cube).map(|e| e.kind).collect();
        assert_eq!(
            cubes,
            vec![OpKind::MhaQk, OpKind::Softmax, OpKind::MhaQk, OpKind::Softmax]
        );
    }

    #[test]
    fn deterministic_and_stage_classified() {
        let g = graph(12);
        let a = emit_trace(&g, Some(&SchemeTable::default()));
        let b = emit_trace(&g, Some(&SchemeTable::default()));
        assert_eq!(a, b);
        for e in &a.entries {
            match e.kind {
                OpKind::Linear | OpKind::Bias | OpKind::Einsum | OpKind::MhaQk | OpKind::MhaAv => {
                    assert_eq!(e.stage, Stage::Rmpu)
                }
                OpKind::SeqIo => assert_eq!(e.stage, Stage::Mem),
                _ => assert_eq!(e.stage, Stage::Vvpu, "{}", e.name),
            }
        }
    }

    #[test]
    fn unquantized_trace_is_sixteen_bit() {
        let g = graph(5);
        let t = emit_trace(&g, None);
        for (e, n) in t.entries.iter().zip(&g.nodes) {
            let out = &g.edges[n.output];
            if out.residency == Residency::Dram {
                assert_eq!(e.bytes_written, out.elements() * 2);
            }
        }
    }

    #[test]
    fn live_set_counts_scores_only_when_materialized() {
        let mut cfg = WorkloadConfig::default();
        let ns = 128;
        let streamed = emit_trace(&build_folding_block(ns, &cfg).unwrap(), None);
        cfg.streaming_mha = false;
        let g = build_folding_block(ns, &cfg).unwrap();
        let full = emit_trace(&g, None);
        let cube = 4 * ns * ns * ns * 2;
        // Scores and probabilities are both live during the softmax.
        assert!(full.peak_live_bytes() >= 2 * cube);
        assert!(streamed.peak_live_bytes() + cube < full.peak_live_bytes());
        let sm = g.nodes.iter().position(|n| n.name == "attn_start.softmax").unwrap();
        let expect: u64 = g
            .edges
            .iter()
            .filter(|e| e.residency == Residency::Dram)
            .filter(|e| {
                let start = e.producer.unwrap_or(0);
                let end = if e.block_output {
                    usize::MAX
                } else {
                    e.consumers.iter().copied().max().unwrap_or(start)
                };
                start <= sm && sm <= end
            })
            .map(|e| edge_bytes(e, &g, None))
            .sum();
        assert_eq!(full.entries[sm].live_bytes, expect);
    }

    #[test]
    fn chunk4_rereads_region_inputs() {
        let mut cfg = WorkloadConfig::default();
        let plain = emit_trace(&build_folding_block(8, &cfg).unwrap(), None);
        cfg.chunk4 = true;
        let chunked = emit_trace(&build_folding_block(8, &cfg).unwrap(), None);
        assert!(chunked.block_bytes() > plain.block_bytes());
        let qk = |t: &Trace| {
            t.entries
                .iter()
                .find(|e| e.name == "attn_start.scores")
                .unwrap()
                .bytes_read
        };
        assert_eq!(qk(&chunked), 4 * qk(&plain));
    }
}
