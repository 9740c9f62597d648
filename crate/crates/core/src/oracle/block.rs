use super::attention::{attention_with_hook, AttentionParams, AttentionWeights, TriangleSide};
use super::linalg::{LayerNormParams, Linear};
use super::trimul::{no_hook, trimul_with_hook, TriMulDirection, TriMulWeights};
use crate::error::Result;
use crate::quant::{dequantize_token, quantize_token, ActivationGroup, SchemeTable};
use crate::synth::SynthRng;
use crate::tensor::ActivationTensor;

/// Weights of the pair half of one folding block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub params: AttentionParams,
    pub mul_outgoing: TriMulWeights,
    pub mul_incoming: TriMulWeights,
    pub attn_starting: AttentionWeights,
    pub attn_ending: AttentionWeights,
    pub transition_ln: LayerNormParams,
    pub transition_up: Linear,
    pub transition_down: Linear,
}

impl BlockWeights {
    /// `trimul_hidden` is the projection width of the multiplicative updates;
    /// the transition widens to `transition_factor * hz`.
    pub fn random(rng: &mut SynthRng, params: AttentionParams, trimul_hidden: usize, transition_factor: usize) -> Self {
        let hz = params.hz;
        Self {
            params,
            mul_outgoing: TriMulWeights::random(rng, hz, trimul_hidden),
            mul_incoming: TriMulWeights::random(rng, hz, trimul_hidden),
            attn_starting: AttentionWeights::random(rng, &params),
            attn_ending: AttentionWeights::random(rng, &params),
            transition_ln: LayerNormParams::random(rng, hz),
            transition_up: Linear::random(rng, hz, transition_factor * hz, true),
            transition_down: Linear::random(rng, transition_factor * hz, hz, true),
        }
    }
}

/// Fake-quantizes intermediate tokens according to their group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeQuantizer {
    pub schemes: SchemeTable,
}

impl EdgeQuantizer {
    /// Group of an edge label emitted by the reference operators.
    pub fn group_of(label: &str) -> ActivationGroup {
        match label {
            "residual_in" => ActivationGroup::A,
            "ln_in" | "ln_out" => ActivationGroup::B,
            _ => ActivationGroup::C,
        }
    }

    fn apply(&self, label: &str, token: &mut Vec<f64>) -> Result<()> {
        let scheme = self.schemes.get(Self::group_of(label))?;
        let k = scheme.outlier_count.min(token.len());
        let s = crate::quant::QuantScheme::new(scheme.inlier_bits, k)?;
        let q = quantize_token(token, &s)?;
        *token = dequantize_token(&q, &s)?;
        Ok(())
    }
}

/// Pair update of one folding block: outgoing and incoming multiplicative
/// updates, starting and ending attention, then the transition MLP. With a
/// quantizer every quantized edge is rounded through its group's scheme.
pub fn folding_block_ref(
    pair: &ActivationTensor,
    w: &BlockWeights,
    quantizer: Option<&EdgeQuantizer>,
    streaming_mha: bool,
) -> Result<ActivationTensor> {
    let hook_q;
    let hook: &dyn Fn(&str, &mut Vec<f64>) -> Result<()> = match quantizer {
        Some(q) => {
            hook_q = move |l: &str, t: &mut Vec<f64>| q.apply(l, t);
            &hook_q
        }
        None => &no_hook,
    };
    let z = trimul_with_hook(pair, &w.mul_outgoing, TriMulDirection::Outgoing, hook)?;
    let z = trimul_with_hook(&z, &w.mul_incoming, TriMulDirection::Incoming, hook)?;
    let (z, _) = attention_with_hook(
        &z,
        &w.params,
        &w.attn_starting,
        TriangleSide::Starting,
        streaming_mha,
        hook,
    )?;
    let (z, _) = attention_with_hook(&z, &w.params, &w.attn_ending, TriangleSide::Ending, streaming_mha, hook)?;

    let mut out = z.clone();
    for (n, tok) in z.token_iter().enumerate() {
        let mut t = tok.to_vec();
        hook("residual_in", &mut t)?;
        let mut x = w.transition_ln.apply(&t);
        hook("ln_in", &mut x)?;
        let mut h: Vec<f64> = w.transition_up.apply(&x).into_iter().map(|v| v.max(0.0)).collect();
        hook("proj", &mut h)?;
        let mut y = w.transition_down.apply(&h);
        hook("proj", &mut y)?;
        let (i, j) = (n / z.ns(), n % z.ns());
        for (dst, u) in out.token_mut(i, j).iter_mut().zip(&y) {
            *dst += u;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::rmse;
    use crate::quant::QuantScheme;
    use crate::synth;

    #[test]
    fn more_inlier_bits_means_less_error() {
        let p = AttentionParams::new(2, 8, 16).unwrap();
        let w = BlockWeights::random(&mut synth::rng(8), p, 16, 4);
        let pair = synth::normal_tensor(9, 4, 16, 2.0);
        let exact = folding_block_ref(&pair, &w, None, false).unwrap();
        let err = |bits| {
            let s = QuantScheme::new(bits, 2).unwrap();
            let q = EdgeQuantizer {
                schemes: SchemeTable { a: s, b: s, c: s },
            };
            let out = folding_block_ref(&pair, &w, Some(&q), true).unwrap();
            rmse(out.data(), exact.data()).unwrap()
        };
        let e4 = err(4);
        let e8 = err(8);
        assert!(e8 < e4, "8-bit {e8} vs 4-bit {e4}");
        assert!(e8 > 0.0);
    }

    #[test]
    fn streaming_flag_does_not_change_result() {
        let p = AttentionParams::new(2, 4, 8).unwrap();
        let w = BlockWeights::random(&mut synth::rng(2), p, 8, 4);
        let pair = synth::normal_tensor(3, 3, 8, 1.0);
        let a = folding_block_ref(&pair, &w, None, false).unwrap();
        let b = folding_block_ref(&pair, &w, None, true).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
