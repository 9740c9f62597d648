use super::graph::OpKind;
use crate::error::{Error, Result};
use crate::quant::ActivationGroup;

/// What produces an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Producer {
    /// The pair tensor entering the block (the residual stream).
    BlockInput,
    Op(OpKind),
}

/// Structural facts about one activation edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionDescriptor {
    pub producer: Producer,
    pub consumers: Vec<OpKind>,
    /// Edge leaves the block (the updated residual stream).
    pub block_output: bool,
    /// Edge is consumed inside a fused pipeline and never stored.
    pub on_chip: bool,
}

/// Static group assignment.
///
/// * residual stream edges that feed a LayerNorm (or leave the block): A
/// * LayerNorm outputs that only feed linear projections: B
/// * attention scores/probabilities, dequantized copies and on-chip edges: unquantized
/// * everything else: C
pub fn classify_activation(d: &PositionDescriptor) -> Result<ActivationGroup> {
    if d.consumers.is_empty() && !d.block_output {
        return Err(Error::Classification(format!(
            "edge from {:?} has no consumers",
            d.producer
        )));
    }
    if d.on_chip {
        return Ok(ActivationGroup::Unquantized);
    }
    let residual = matches!(d.producer, Producer::BlockInput | Producer::Op(OpKind::ResidualAdd));
    match d.producer {
        Producer::Op(OpKind::MhaQk | OpKind::Softmax | OpKind::DequantizeEdge) => {
            return Ok(ActivationGroup::Unquantized)
        }
        Producer::Op(OpKind::QuantizeEdge) => {
            return Err(Error::Classification(
                "a QuantizeEdge output takes the group of the edge it requantizes".into(),
            ))
        }
        _ => {}
    }
    if residual && (d.block_output || d.consumers.contains(&OpKind::LayerNorm)) {
        return Ok(ActivationGroup::A);
    }
    if residual {
        return Err(Error::Classification(
            "residual stream edge that neither feeds a LayerNorm nor leaves the block".into(),
        ));
    }
    if d.producer == Producer::Op(OpKind::LayerNorm)
        && d.consumers.iter().all(|c| matches!(c, OpKind::Linear | OpKind::Bias))
    {
        return Ok(ActivationGroup::B);
    }
    Ok(ActivationGroup::C)
}
