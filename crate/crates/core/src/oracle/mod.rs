//! Double-precision reference execution of the pair-representation operators.
//!
//! Everything here runs in `f64` and is meant to dominate quantization error,
//! so that the quantized paths and the simulator's functional assumptions can
//! be checked against it.

mod attention;
mod block;
mod linalg;
mod trimul;

pub use attention::{
    tokenwise_mha_ref, triangular_attention_instrumented, triangular_attention_ref, AttentionParams, AttentionWeights,
    BufferStats, TriangleSide,
};
pub use block::{folding_block_ref, BlockWeights, EdgeQuantizer};
pub use linalg::{
    layernorm_ref, matmul_ref, quantized_dot, sigmoid, softmax_ref, LayerNormParams, Linear, Matrix, LAYERNORM_EPS,
};
pub use trimul::{triangular_multiplication_ref, TriMulDirection, TriMulWeights};
