use std::fmt;

use serde::{Deserialize, Serialize};

use super::classify::{classify_activation, PositionDescriptor, Producer};
use crate::error::{Error, Result};
use crate::quant::ActivationGroup;

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Linear,
    LayerNorm,
    Softmax,
    Einsum,
    /// `sigmoid(gate) * x`.
    Gate,
    ResidualAdd,
    QuantizeEdge,
    DequantizeEdge,
    #[serde(rename = "MHA-QK")]
    MhaQk,
    #[serde(rename = "MHA-AV")]
    MhaAv,
    /// Projection of the pair tensor to one attention bias per head.
    Bias,
    /// Opaque sequence-track traffic; carries bytes but no modeled compute.
    SeqIo,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OpKind::MhaQk => "MHA-QK",
            OpKind::MhaAv => "MHA-AV",
            other => return write!(f, "{other:?}"),
        };
        f.write_str(s)
    }
}

/// Where an edge lives between producer and consumers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Residency {
    Dram,
    OnChip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub name: String,
    pub dims: Vec<u64>,
    pub group: ActivationGroup,
    pub residency: Residency,
    pub producer: Option<NodeId>,
    pub consumers: Vec<NodeId>,
    pub block_output: bool,
    /// Pair-tensor edge (as opposed to score or sequence tensors).
    pub pair: bool,
}

impl Edge {
    pub fn elements(&self) -> u64 {
        self.dims.iter().product()
    }

    /// Length of one token: the innermost dimension, split into Hz-wide
    /// tokens when it is a multiple of Hz.
    pub fn token_width(&self, hz: u64) -> u64 {
        let last = *self.dims.last().unwrap_or(&1);
        if last > hz && last.is_multiple_of(hz) {
            hz
        } else {
            last
        }
    }

    pub fn tokens(&self, hz: u64) -> u64 {
        self.elements() / self.token_width(hz).max(1)
    }

    /// True for tensors with three sequence axes.
    pub fn is_cube(&self, ns: u64) -> bool {
        self.dims.len() == 4 && self.dims[1..].iter().all(|&d| d == ns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpNode {
    pub id: NodeId,
    pub name: String,
    pub kind: OpKind,
    pub inputs: Vec<EdgeId>,
    pub output: EdgeId,
    pub in_shapes: Vec<Vec<u64>>,
    pub out_shape: Vec<u64>,
    pub group_tag: ActivationGroup,
    pub weight_elems: u64,
    /// Pipeline chain; consecutive nodes of one sub-block overlap their stages.
    pub chain: u32,
    /// Region whose intermediates are split into channel chunks under Chunk4.
    pub chunk_region: Option<u32>,
}

impl OpNode {
    /// Weight storage at 16 bits.
    pub fn weight_bytes(&self) -> u64 {
        self.weight_elems * 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub hz: u64,
    pub num_blocks: u64,
    pub num_heads: u64,
    pub head_dim: u64,
    pub trimul_hidden: u64,
    pub transition_factor: u64,
    /// Width of the sequence representation (traffic only).
    pub seq_hidden: u64,
    /// Sequence-track parameters per block; `None` means `12 * seq_hidden^2`.
    pub seq_params_per_block: Option<u64>,
    /// Parameters of the language model feeding the folding trunk.
    pub lm_params: u64,
    pub streaming_mha: bool,
    pub chunk4: bool,
    /// Tokens per encoded block for quantized edges.
    pub tokens_per_block: u64,
    pub txn_bytes: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            hz: 128,
            num_blocks: 48,
            num_heads: 4,
            head_dim: 32,
            trimul_hidden: 128,
            transition_factor: 4,
            seq_hidden: 1024,
            seq_params_per_block: None,
            lm_params: 2_838_000_000,
            streaming_mha: true,
            chunk4: false,
            tokens_per_block: 32,
            txn_bytes: 64,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hz", self.hz),
            ("num_blocks", self.num_blocks),
            ("num_heads", self.num_heads),
            ("head_dim", self.head_dim),
            ("trimul_hidden", self.trimul_hidden),
            ("transition_factor", self.transition_factor),
            ("tokens_per_block", self.tokens_per_block),
            ("txn_bytes", self.txn_bytes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("workload.{name} must be positive")));
            }
        }
        if self.num_heads * self.head_dim != self.hz {
            return Err(Error::Config(format!(
                "num_heads * head_dim = {} must equal hz = {}",
                self.num_heads * self.head_dim,
                self.hz
            )));
        }
        if self.hz > u16::MAX as u64 || self.tokens_per_block > u16::MAX as u64 || self.txn_bytes > 256 {
            return Err(Error::Config(
                "hz, tokens_per_block or txn_bytes exceed the block header".into(),
            ));
        }
        Ok(())
    }

    pub fn seq_params(&self) -> u64 {
        self.seq_params_per_block
            .unwrap_or(12 * self.seq_hidden * self.seq_hidden)
    }
}

/// Topologically ordered dataflow of one folding block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataflowGraph {
    pub ns: u64,
    pub config: WorkloadConfig,
    pub nodes: Vec<OpNode>,
    pub edges: Vec<Edge>,
}

impl DataflowGraph {
    pub fn hz(&self) -> u64 {
        self.config.hz
    }

    pub fn num_blocks(&self) -> u64 {
        self.config.num_blocks
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id]
    }

    /// Weight parameters of the pair path of one block.
    pub fn block_weight_elems(&self) -> u64 {
        self.nodes.iter().map(|n| n.weight_elems).sum()
    }

    /// All weights of the model at 16 bits: language model plus every block.
    pub fn model_weight_bytes(&self) -> u64 {
        let c = &self.config;
        2 * (c.lm_params + c.num_blocks * (self.block_weight_elems() + c.seq_params()))
    }

    /// Retags one edge, for what-if accounting.
    pub fn set_group(&mut self, edge: EdgeId, group: ActivationGroup) -> Result<()> {
        let e = self
            .edges
            .get_mut(edge)
            .ok_or_else(|| Error::contract(format!("no edge {edge}")))?;
        e.group = group;
        if let Some(p) = e.producer {
            self.nodes[p].group_tag = group;
        }
        Ok(())
    }

    /// Checks ordering, shape and tagging invariants.
    pub fn check(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::contract(format!("node {} stored at {i}", n.name)));
            }
            for &e in &n.inputs {
                match self.edges[e].producer {
                    Some(p) if p >= i => {
                        return Err(Error::contract(format!(
                            "{} consumes {} before it is produced",
                            n.name, self.edges[e].name
                        )))
                    }
                    _ => {}
                }
            }
            let out = &self.edges[n.output];
            if out.producer != Some(i) || out.dims != n.out_shape || out.group != n.group_tag {
                return Err(Error::contract(format!(
                    "node {} disagrees with its output edge",
                    n.name
                )));
            }
            if out.residency == Residency::OnChip && out.group != ActivationGroup::Unquantized {
                return Err(Error::contract(format!("on-chip edge {} carries a scheme", out.name)));
            }
        }
        Ok(())
    }
}

struct Builder {
    ns: u64,
    cfg: WorkloadConfig,
    nodes: Vec<OpNode>,
    edges: Vec<Edge>,
    on_chip: Vec<bool>,
    chain: u32,
    region: Option<u32>,
    next_region: u32,
}

impl Builder {
    fn input(&mut self, name: &str, dims: Vec<u64>, pair: bool) -> EdgeId {
        let id = self.edges.len();
        self.edges.push(Edge {
            id,
            name: name.to_string(),
            dims,
            group: ActivationGroup::Unquantized,
            residency: Residency::Dram,
            producer: None,
            consumers: Vec::new(),
            block_output: false,
            pair,
        });
        self.on_chip.push(false);
        id
    }

    fn op(&mut self, name: &str, kind: OpKind, inputs: &[EdgeId], dims: Vec<u64>, weight_elems: u64) -> EdgeId {
        let node = self.nodes.len();
        let pair = dims.len() == 3;
        let out = self.input(name, dims.clone(), pair);
        self.edges[out].producer = Some(node);
        for &e in inputs {
            self.edges[e].consumers.push(node);
        }
        self.nodes.push(OpNode {
            id: node,
            name: name.to_string(),
            kind,
            inputs: inputs.to_vec(),
            output: out,
            in_shapes: inputs.iter().map(|&e| self.edges[e].dims.clone()).collect(),
            out_shape: dims,
            group_tag: ActivationGroup::Unquantized,
            weight_elems,
            chain: self.chain,
            chunk_region: self.region,
        });
        out
    }

    fn pair_dims(&self, c: u64) -> Vec<u64> {
        vec![self.ns, self.ns, c]
    }

    fn linear(&mut self, name: &str, x: EdgeId, out: u64) -> EdgeId {
        let inp = *self.edges[x].dims.last().unwrap();
        let dims = self.pair_dims(out);
        self.op(name, OpKind::Linear, &[x], dims, inp * out + out)
    }

    fn layernorm(&mut self, name: &str, x: EdgeId) -> EdgeId {
        let c = *self.edges[x].dims.last().unwrap();
        let dims = self.edges[x].dims.clone();
        self.op(name, OpKind::LayerNorm, &[x], dims, 2 * c)
    }

    fn elementwise(&mut self, name: &str, kind: OpKind, a: EdgeId, b: EdgeId) -> EdgeId {
        let dims = self.edges[a].dims.clone();
        self.op(name, kind, &[a, b], dims, 0)
    }

    fn dequantize(&mut self, name: &str, x: EdgeId) -> EdgeId {
        let dims = self.edges[x].dims.clone();
        let e = self.op(name, OpKind::DequantizeEdge, &[x], dims, 0);
        self.on_chip[e] = true;
        e
    }

    fn begin_region(&mut self) {
        if self.cfg.chunk4 {
            self.region = Some(self.next_region);
            self.next_region += 1;
        }
    }

    fn end_region(&mut self) {
        self.region = None;
    }

    fn trimul(&mut self, prefix: &str, z: EdgeId) -> EdgeId {
        let hz = self.cfg.hz;
        let c = self.cfg.trimul_hidden;
        let n = |s: &str| format!("{prefix}.{s}");
        let zn = self.layernorm(&n("ln_in"), z);
        let ap = self.linear(&n("a_proj"), zn, c);
        let ag = self.linear(&n("a_gate"), zn, c);
        let a = self.elementwise(&n("a"), OpKind::Gate, ap, ag);
        let bp = self.linear(&n("b_proj"), zn, c);
        let bg = self.linear(&n("b_gate"), zn, c);
        let b = self.elementwise(&n("b"), OpKind::Gate, bp, bg);
        let a16 = self.dequantize(&n("a_dq"), a);
        let b16 = self.dequantize(&n("b_dq"), b);
        let dims = self.pair_dims(c);
        let x = self.op(&n("einsum"), OpKind::Einsum, &[a16, b16], dims, 0);
        let xn = self.layernorm(&n("ln_out"), x);
        let o = self.linear(&n("out_proj"), xn, hz);
        let og = self.linear(&n("out_gate"), zn, hz);
        let u = self.elementwise(&n("gated"), OpKind::Gate, o, og);
        self.elementwise(&n("residual"), OpKind::ResidualAdd, z, u)
    }

    fn attention(&mut self, prefix: &str, z: EdgeId) -> EdgeId {
        let (hz, h, ns) = (self.cfg.hz, self.cfg.num_heads, self.ns);
        let n = |s: &str| format!("{prefix}.{s}");
        let zn = self.layernorm(&n("ln"), z);
        let q = self.op(&n("q"), OpKind::Linear, &[zn], vec![ns, ns, hz], hz * hz);
        let k = self.op(&n("k"), OpKind::Linear, &[zn], vec![ns, ns, hz], hz * hz);
        let v = self.op(&n("v"), OpKind::Linear, &[zn], vec![ns, ns, hz], hz * hz);
        let bias = self.op(&n("bias"), OpKind::Bias, &[zn], vec![ns, ns, h], hz * h);
        let g = self.linear(&n("gate"), zn, hz);
        self.begin_region();
        let s = self.op(&n("scores"), OpKind::MhaQk, &[q, k, bias], vec![h, ns, ns, ns], 0);
        let p = self.op(&n("softmax"), OpKind::Softmax, &[s], vec![h, ns, ns, ns], 0);
        if self.cfg.streaming_mha {
            self.on_chip[s] = true;
            self.on_chip[p] = true;
        }
        let v16 = self.dequantize(&n("v_dq"), v);
        let o = self.op(&n("av"), OpKind::MhaAv, &[p, v16], vec![ns, ns, hz], 0);
        self.end_region();
        let og = self.elementwise(&n("gated"), OpKind::Gate, o, g);
        let u = self.linear(&n("out"), og, hz);
        self.elementwise(&n("residual"), OpKind::ResidualAdd, z, u)
    }

    fn transition(&mut self, prefix: &str, z: EdgeId) -> EdgeId {
        let hz = self.cfg.hz;
        let n = |s: &str| format!("{prefix}.{s}");
        let zn = self.layernorm(&n("ln"), z);
        self.begin_region();
        let h = self.linear(&n("up"), zn, hz * self.cfg.transition_factor);
        let u = self.linear(&n("down"), h, hz);
        self.end_region();
        self.elementwise(&n("residual"), OpKind::ResidualAdd, z, u)
    }

    fn finish(mut self, out: EdgeId) -> Result<DataflowGraph> {
        self.edges[out].block_output = true;
        let kinds: Vec<OpKind> = self.nodes.iter().map(|n| n.kind).collect();
        for e in 0..self.edges.len() {
            let edge = &self.edges[e];
            let producer = match edge.producer {
                None => Producer::BlockInput,
                Some(p) => Producer::Op(kinds[p]),
            };
            // Sequence tensors are opaque traffic and never quantized.
            let group = if edge.dims.len() == 2 {
                ActivationGroup::Unquantized
            } else {
                classify_activation(&PositionDescriptor {
                    producer,
                    consumers: edge.consumers.iter().map(|&c| kinds[c]).collect(),
                    block_output: edge.block_output,
                    on_chip: self.on_chip[e],
                })?
            };
            let edge = &mut self.edges[e];
            edge.group = group;
            if self.on_chip[e] {
                edge.residency = Residency::OnChip;
            }
            if let Some(p) = edge.producer {
                self.nodes[p].group_tag = group;
            }
        }
        let g = DataflowGraph {
            ns: self.ns,
            config: self.cfg,
            nodes: self.nodes,
            edges: self.edges,
        };
        g.check()?;
        Ok(g)
    }
}

/// Builds the pair dataflow of one folding block: triangular multiplication
/// (outgoing, incoming), triangular attention (starting, ending) and the
/// transition MLP, preceded by an opaque sequence-track I/O node.
pub fn build_folding_block(ns: u64, cfg: &WorkloadConfig) -> Result<DataflowGraph> {
    if ns == 0 {
        return Err(Error::contract("Ns must be at least 1"));
    }
    cfg.validate()?;
    let mut b = Builder {
        ns,
        cfg: cfg.clone(),
        nodes: Vec::new(),
        edges: Vec::new(),
        on_chip: Vec::new(),
        chain: 0,
        region: None,
        next_region: 0,
    };
    let z0 = b.input("pair_in", vec![ns, ns, cfg.hz], true);
    let seq = b.input("seq_in", vec![ns, cfg.seq_hidden], false);
    b.op("seq.io", OpKind::SeqIo, &[seq], vec![ns, cfg.seq_hidden], 0);
    b.chain = 1;
    let z1 = b.trimul("trimul_out", z0);
    b.chain = 2;
    let z2 = b.trimul("trimul_in", z1);
    b.chain = 3;
    let z3 = b.attention("attn_start", z2);
    b.chain = 4;
    let z4 = b.attention("attn_end", z3);
    b.chain = 5;
    let z5 = b.transition("transition", z4);
    b.finish(z5)
}

/// Node count of the block template; independent of Ns.
pub const TEMPLATE_NODES: usize = 1 + 2 * 15 + 2 * 13 + 4;

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(ns: u64) -> DataflowGraph {
        build_folding_block(ns, &WorkloadConfig::default()).unwrap()
    }

    #[test]
    fn template_is_fixed() {
        assert_eq!(graph(1).nodes.len(), TEMPLATE_NODES);
        assert_eq!(graph(37).nodes.len(), TEMPLATE_NODES);
        for e in &graph(1).edges {
            if e.dims.len() == 4 {
                assert_eq!(&e.dims[1..], &[1, 1, 1]);
            }
        }
    }

    #[test]
    fn score_and_pair_sizes() {
        let g = graph(16);
        let s = g.edges.iter().find(|e| e.name == "attn_start.scores").unwrap();
        assert_eq!(s.elements() / g.config.num_heads, 4096);
        let g = graph(256);
        assert_eq!(g.edges[0].elements(), 8_388_608);
    }

    #[test]
    fn groups_follow_structure() {
        let g = graph(8);
        let group = |name: &str| g.edges.iter().find(|e| e.name == name).unwrap().group;
        assert_eq!(group("pair_in"), ActivationGroup::A);
        assert_eq!(group("trimul_out.residual"), ActivationGroup::A);
        assert_eq!(group("transition.residual"), ActivationGroup::A);
        assert_eq!(group("attn_start.ln"), ActivationGroup::B);
        assert_eq!(group("trimul_in.ln_out"), ActivationGroup::B);
        assert_eq!(group("attn_end.gate"), ActivationGroup::C);
        assert_eq!(group("trimul_out.einsum"), ActivationGroup::C);
        assert_eq!(group("transition.up"), ActivationGroup::C);
        assert_eq!(group("attn_start.scores"), ActivationGroup::Unquantized);
        assert_eq!(group("attn_start.v_dq"), ActivationGroup::Unquantized);
        assert_eq!(group("seq.io"), ActivationGroup::Unquantized);
    }

    #[test]
    fn streaming_controls_score_residency() {
        let mut cfg = WorkloadConfig::default();
        let on = build_folding_block(4, &cfg).unwrap();
        cfg.streaming_mha = false;
        let off = build_folding_block(4, &cfg).unwrap();
        for (a, b) in on.edges.iter().zip(&off.edges) {
            if a.is_cube(4) {
                assert_eq!(a.residency, Residency::OnChip);
                assert_eq!(b.residency, Residency::Dram);
            } else {
                assert_eq!(a.residency, b.residency);
            }
        }
    }

    #[test]
    fn order_and_invariants() {
        let g = graph(3);
        g.check().unwrap();
        assert!(g.nodes.windows(2).all(|w| w[0].chain <= w[1].chain));
        assert!(g.nodes.iter().all(|n| n.chunk_region.is_none()));
        let cfg = WorkloadConfig {
            chunk4: true,
            ..WorkloadConfig::default()
        };
        let c = build_folding_block(3, &cfg).unwrap();
        assert_eq!(c.nodes.iter().filter_map(|n| n.chunk_region).max(), Some(2));
    }

    #[test]
    fn bad_config() {
        assert!(build_folding_block(0, &WorkloadConfig::default()).is_err());
        let cfg = WorkloadConfig {
            num_heads: 3,
            ..WorkloadConfig::default()
        };
        assert!(build_folding_block(4, &cfg).is_err());
    }
}
