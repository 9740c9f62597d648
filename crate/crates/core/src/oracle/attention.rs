use super::linalg::{sigmoid, softmax_ref, LayerNormParams, Linear};
use super::trimul::{no_hook, TokenHook};
use crate::error::{Error, Result};
use crate::synth::SynthRng;
use crate::tensor::ActivationTensor;

/// Head layout of the triangular attention. `num_heads * head_dim` must equal `hz`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    pub num_heads: usize,
    pub head_dim: usize,
    pub hz: usize,
}

impl Default for AttentionParams {
    fn default() -> Self {
        Self {
            num_heads: 4,
            head_dim: 32,
            hz: 128,
        }
    }
}

impl AttentionParams {
    pub fn new(num_heads: usize, head_dim: usize, hz: usize) -> Result<Self> {
        let p = Self {
            num_heads,
            head_dim,
            hz,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.head_dim == 0 || self.num_heads * self.head_dim != self.hz {
            return Err(Error::contract(format!(
                "{} heads x {} != Hz {}",
                self.num_heads, self.head_dim, self.hz
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriangleSide {
    /// Attend along rows: query `(i, j)` looks at keys `(i, k)`.
    Starting,
    /// Attend along columns, computed on the transposed pair.
    Ending,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub ln: LayerNormParams,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    /// Pair-derived bias, `hz -> num_heads`.
    pub bias: Linear,
    pub gate: Linear,
    pub out: Linear,
}

impl AttentionWeights {
    pub fn random(rng: &mut SynthRng, p: &AttentionParams) -> Self {
        let inner = p.num_heads * p.head_dim;
        Self {
            ln: LayerNormParams::random(rng, p.hz),
            q: Linear::random(rng, p.hz, inner, false),
            k: Linear::random(rng, p.hz, inner, false),
            v: Linear::random(rng, p.hz, inner, false),
            bias: Linear::random(rng, p.hz, p.num_heads, false),
            gate: Linear::random(rng, p.hz, inner, true),
            out: Linear::random(rng, inner, p.hz, true),
        }
    }
}

/// Peak scratch usage of one attention row, in `f64` elements.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BufferStats {
    pub peak_elements: usize,
}

struct Projected {
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    /// `(j, k) -> per-head bias`, row-major over the pair.
    bias: Vec<Vec<f64>>,
}

fn project(
    pair: &ActivationTensor,
    p: &AttentionParams,
    w: &AttentionWeights,
    hook: TokenHook<'_>,
) -> Result<Projected> {
    p.validate()?;
    if pair.hz() != p.hz || w.q.fan_in() != p.hz {
        return Err(Error::contract(format!(
            "pair Hz {} / weights Hz {} / params Hz {}",
            pair.hz(),
            w.q.fan_in(),
            p.hz
        )));
    }
    let n = pair.ns() * pair.ns();
    let mut out = Projected {
        q: Vec::with_capacity(n),
        k: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
        g: Vec::with_capacity(n),
        bias: Vec::with_capacity(n),
    };
    for tok in pair.token_iter() {
        let mut z = tok.to_vec();
        hook("residual_in", &mut z)?;
        let mut x = w.ln.apply(&z);
        hook("ln_in", &mut x)?;
        let lin = |l: &Linear| -> Result<Vec<f64>> {
            let mut y = l.apply(&x);
            hook("proj", &mut y)?;
            Ok(y)
        };
        out.q.push(lin(&w.q)?);
        out.k.push(lin(&w.k)?);
        out.v.push(lin(&w.v)?);
        out.bias.push(lin(&w.bias)?);
        let mut g: Vec<f64> = w.gate.apply(&x).into_iter().map(sigmoid).collect();
        hook("gate", &mut g)?;
        out.g.push(g);
    }
    Ok(out)
}

/// Runs one attention row per `i`. `row_kernel(i, head, proj) -> (outputs for every j, peak)`.
fn run_rows<F>(
    pair: &ActivationTensor,
    p: &AttentionParams,
    w: &AttentionWeights,
    hook: TokenHook<'_>,
    mut row_kernel: F,
) -> Result<(ActivationTensor, BufferStats)>
where
    F: FnMut(usize, usize, &Projected) -> (Vec<Vec<f64>>, usize),
{
    let ns = pair.ns();
    let proj = project(pair, p, w, hook)?;
    let mut out = pair.clone();
    let mut stats = BufferStats::default();
    let inner = p.num_heads * p.head_dim;
    for i in 0..ns {
        let mut attended = vec![vec![0.0; inner]; ns];
        for h in 0..p.num_heads {
            let (rows, peak) = row_kernel(i, h, &proj);
            stats.peak_elements = stats.peak_elements.max(peak);
            for (j, o) in rows.into_iter().enumerate() {
                attended[j][h * p.head_dim..(h + 1) * p.head_dim].copy_from_slice(&o);
            }
        }
        for (j, mut o) in attended.into_iter().enumerate() {
            let g = &proj.g[i * ns + j];
            o.iter_mut().zip(g).for_each(|(o, g)| *o *= g);
            hook("gated", &mut o)?;
            let mut y = w.out.apply(&o);
            hook("proj", &mut y)?;
            for (dst, u) in out.token_mut(i, j).iter_mut().zip(&y) {
                *dst += u;
            }
        }
    }
    Ok((out, stats))
}

fn head_slice(v: &[f64], h: usize, d: usize) -> &[f64] {
    &v[h * d..(h + 1) * d]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row kernel that builds the full `(Ns, Ns)` score matrix of one head.
fn materialized_kernel(ns: usize, p: &AttentionParams) -> impl Fn(usize, usize, &Projected) -> (Vec<Vec<f64>>, usize) {
    let d = p.head_dim;
    let scale = 1.0 / (d as f64).sqrt();
    move |i, h, pr| {
        let mut scores = vec![vec![0.0; ns]; ns];
        for (j, row) in scores.iter_mut().enumerate() {
            let q = head_slice(&pr.q[i * ns + j], h, d);
            for (k, s) in row.iter_mut().enumerate() {
                *s = dot(q, head_slice(&pr.k[i * ns + k], h, d)) * scale + pr.bias[j * ns + k][h];
            }
        }
        let outputs = scores
            .iter()
            .map(|row| {
                let probs = softmax_ref(row);
                let mut o = vec![0.0; d];
                for (k, pk) in probs.iter().enumerate() {
                    let v = head_slice(&pr.v[i * ns + k], h, d);
                    o.iter_mut().zip(v).for_each(|(o, v)| *o += pk * v);
                }
                o
            })
            .collect();
        // K and V rows of this head plus the score matrix.
        (outputs, 2 * ns * d + ns * ns)
    }
}

/// Key tile width of the streaming kernel.
const KEY_TILE: usize = 16;

/// Row kernel that never holds more than one tile of scores: running max,
/// running normalizer and an unnormalized accumulator per query.
fn streaming_kernel(ns: usize, p: &AttentionParams) -> impl Fn(usize, usize, &Projected) -> (Vec<Vec<f64>>, usize) {
    let d = p.head_dim;
    let scale = 1.0 / (d as f64).sqrt();
    move |i, h, pr| {
        let outputs = (0..ns)
            .map(|j| {
                let q = head_slice(&pr.q[i * ns + j], h, d);
                let mut m = f64::NEG_INFINITY;
                let mut l = 0.0;
                let mut acc = vec![0.0; d];
                let mut tile = [0.0f64; KEY_TILE];
                for start in (0..ns).step_by(KEY_TILE) {
                    let end = (start + KEY_TILE).min(ns);
                    let mut tile_max = f64::NEG_INFINITY;
                    for k in start..end {
                        let s = dot(q, head_slice(&pr.k[i * ns + k], h, d)) * scale + pr.bias[j * ns + k][h];
                        tile[k - start] = s;
                        tile_max = tile_max.max(s);
                    }
                    let new_m = m.max(tile_max);
                    let correction = (m - new_m).exp();
                    l *= correction;
                    acc.iter_mut().for_each(|a| *a *= correction);
                    for k in start..end {
                        let e = (tile[k - start] - new_m).exp();
                        l += e;
                        let v = head_slice(&pr.v[i * ns + k], h, d);
                        acc.iter_mut().zip(v).for_each(|(a, v)| *a += e * v);
                    }
                    m = new_m;
                }
                acc.into_iter().map(|a| a / l).collect()
            })
            .collect();
        // K and V rows, one score tile, one accumulator, max and normalizer.
        (outputs, 2 * ns * d + KEY_TILE + d + 2)
    }
}

fn oriented(pair: &ActivationTensor, side: TriangleSide) -> std::borrow::Cow<'_, ActivationTensor> {
    match side {
        TriangleSide::Starting => std::borrow::Cow::Borrowed(pair),
        TriangleSide::Ending => std::borrow::Cow::Owned(pair.transposed()),
    }
}

fn restore(out: ActivationTensor, side: TriangleSide) -> ActivationTensor {
    match side {
        TriangleSide::Starting => out,
        TriangleSide::Ending => out.transposed(),
    }
}

/// Triangular self-attention with materialized score matrices, residual included.
pub fn triangular_attention_ref(
    pair: &ActivationTensor,
    p: &AttentionParams,
    w: &AttentionWeights,
    side: TriangleSide,
) -> Result<ActivationTensor> {
    Ok(triangular_attention_instrumented(pair, p, w, side)?.0)
}

pub fn triangular_attention_instrumented(
    pair: &ActivationTensor,
    p: &AttentionParams,
    w: &AttentionWeights,
    side: TriangleSide,
) -> Result<(ActivationTensor, BufferStats)> {
    attention_with_hook(pair, p, w, side, false, &no_hook)
}

/// Token-wise streaming variant of [`triangular_attention_ref`]. Same result,
/// but per-row scratch stays `O(Ns * head_dim)`.
pub fn tokenwise_mha_ref(
    pair: &ActivationTensor,
    p: &AttentionParams,
    w: &AttentionWeights,
    side: TriangleSide,
) -> Result<(ActivationTensor, BufferStats)> {
    attention_with_hook(pair, p, w, side, true, &no_hook)
}

pub(crate) fn attention_with_hook(
    pair: &ActivationTensor,
    p: &AttentionParams,
    w: &AttentionWeights,
    side: TriangleSide,
    streaming: bool,
    hook: TokenHook<'_>,
) -> Result<(ActivationTensor, BufferStats)> {
    let src = oriented(pair, side);
    let ns = src.ns();
    let (out, stats) = if streaming {
        run_rows(&src, p, w, hook, streaming_kernel(ns, p))?
    } else {
        run_rows(&src, p, w, hook, materialized_kernel(ns, p))?
    };
    Ok((restore(out, side), stats))
}
