//! Token-wise adaptive activation quantization.
//!
//! Each token is quantized on its own: the `k` largest-magnitude channels are
//! pulled out as 16-bit outliers, and the remaining inliers share one
//! symmetric scale `sigma = M / (2^(m-1) - 1)` where `M` is the largest inlier
//! magnitude and `m` the inlier bit width. Precision and `k` depend on which
//! activation group the token belongs to.

mod layout;
mod scheme;
mod token;

pub use layout::{
    block_bytes, decode_block, encode_block, encode_token, token_bits, token_bytes, TokenBlock, BLOCK_HEADER_BYTES,
    BLOCK_MAGIC, DEFAULT_TXN_BYTES,
};
pub use scheme::{scheme_for_group, ActivationGroup, QuantScheme, SchemeTable, OUTLIER_BITS};
pub use token::{
    dequantize_token, quantize_token, select_outliers, stats_3sigma, OutlierSplit, QuantizedToken, SigmaStats,
};
