use super::linalg::{sigmoid, LayerNormParams, Linear};
use crate::error::{Error, Result};
use crate::synth::SynthRng;
use crate::tensor::ActivationTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriMulDirection {
    /// `x[i, j] = sum_k a[i, k] * b[j, k]`
    Outgoing,
    /// `x[i, j] = sum_k a[k, i] * b[k, j]`
    Incoming,
}

/// Parameters of one triangular multiplicative update. `hidden` is the width
/// of the projected `a`/`b` edges.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMulWeights {
    pub ln_in: LayerNormParams,
    pub a_proj: Linear,
    pub a_gate: Linear,
    pub b_proj: Linear,
    pub b_gate: Linear,
    pub ln_out: LayerNormParams,
    pub out_proj: Linear,
    pub out_gate: Linear,
}

impl TriMulWeights {
    pub fn random(rng: &mut SynthRng, hz: usize, hidden: usize) -> Self {
        Self {
            ln_in: LayerNormParams::random(rng, hz),
            a_proj: Linear::random(rng, hz, hidden, true),
            a_gate: Linear::random(rng, hz, hidden, true),
            b_proj: Linear::random(rng, hz, hidden, true),
            b_gate: Linear::random(rng, hz, hidden, true),
            ln_out: LayerNormParams::random(rng, hidden),
            out_proj: Linear::random(rng, hidden, hz, true),
            out_gate: Linear::random(rng, hz, hz, true),
        }
    }

    pub fn zeroed(hz: usize, hidden: usize) -> Self {
        Self {
            ln_in: LayerNormParams::identity(hz),
            a_proj: Linear::zeroed(hz, hidden),
            a_gate: Linear::zeroed(hz, hidden),
            b_proj: Linear::zeroed(hz, hidden),
            b_gate: Linear::zeroed(hz, hidden),
            ln_out: LayerNormParams::identity(hidden),
            out_proj: Linear::zeroed(hidden, hz),
            out_gate: Linear::zeroed(hz, hz),
        }
    }

    pub fn hz(&self) -> usize {
        self.a_proj.fan_in()
    }

    pub fn hidden(&self) -> usize {
        self.a_proj.fan_out()
    }
}

/// Hook applied to every intermediate token, used to inject fake
/// quantization. Receives an edge label and the token in place.
pub(crate) type TokenHook<'a> = &'a dyn Fn(&str, &mut Vec<f64>) -> Result<()>;

pub(crate) fn no_hook(_: &str, _: &mut Vec<f64>) -> Result<()> {
    Ok(())
}

/// Triangular multiplicative update including the residual add.
pub fn triangular_multiplication_ref(
    pair: &ActivationTensor,
    w: &TriMulWeights,
    dir: TriMulDirection,
) -> Result<ActivationTensor> {
    trimul_with_hook(pair, w, dir, &no_hook)
}

pub(crate) fn trimul_with_hook(
    pair: &ActivationTensor,
    w: &TriMulWeights,
    dir: TriMulDirection,
    hook: TokenHook<'_>,
) -> Result<ActivationTensor> {
    let ns = pair.ns();
    let hz = pair.hz();
    if w.hz() != hz {
        return Err(Error::contract(format!("weights expect Hz {}, pair has {hz}", w.hz())));
    }
    let c = w.hidden();
    let n_tok = ns * ns;

    let mut zn = Vec::with_capacity(n_tok);
    let mut a = Vec::with_capacity(n_tok);
    let mut b = Vec::with_capacity(n_tok);
    let mut g = Vec::with_capacity(n_tok);
    for tok in pair.token_iter() {
        let mut z = tok.to_vec();
        hook("residual_in", &mut z)?;
        let mut x = w.ln_in.apply(&z);
        hook("ln_in", &mut x)?;
        let gate = |lin: &Linear, proj: &Linear| -> Result<Vec<f64>> {
            let mut p = proj.apply(&x);
            hook("proj", &mut p)?;
            let mut s: Vec<f64> = lin.apply(&x).into_iter().map(sigmoid).collect();
            hook("gate", &mut s)?;
            let mut out: Vec<f64> = p.iter().zip(&s).map(|(p, s)| p * s).collect();
            hook("gated", &mut out)?;
            Ok(out)
        };
        a.push(gate(&w.a_gate, &w.a_proj)?);
        b.push(gate(&w.b_gate, &w.b_proj)?);
        let mut og: Vec<f64> = w.out_gate.apply(&x).into_iter().map(sigmoid).collect();
        hook("gate", &mut og)?;
        g.push(og);
        zn.push(x);
    }

    let at = |i: usize, j: usize| i * ns + j;
    let mut out = pair.clone();
    for i in 0..ns {
        for j in 0..ns {
            let mut x = vec![0.0; c];
            for k in 0..ns {
                let (ta, tb) = match dir {
                    TriMulDirection::Outgoing => (&a[at(i, k)], &b[at(j, k)]),
                    TriMulDirection::Incoming => (&a[at(k, i)], &b[at(k, j)]),
                };
                for ch in 0..c {
                    x[ch] += ta[ch] * tb[ch];
                }
            }
            hook("einsum", &mut x)?;
            let mut xn = w.ln_out.apply(&x);
            hook("ln_out", &mut xn)?;
            let mut o = w.out_proj.apply(&xn);
            hook("proj", &mut o)?;
            let mut upd: Vec<f64> = o.iter().zip(&g[at(i, j)]).map(|(o, g)| o * g).collect();
            hook("gated", &mut upd)?;
            for (dst, u) in out.token_mut(i, j).iter_mut().zip(&upd) {
                *dst += u;
            }
        }
    }
    Ok(out)
}
