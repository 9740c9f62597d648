use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fixed::{from_fixed, to_fixed, FixedPointFormat, DEFAULT_FRAC_BITS};
use crate::quant::{QuantScheme, QuantizedToken};
use crate::synth::SynthRng;

pub const LAYERNORM_EPS: f64 = 1e-5;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "{} elements for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Gaussian entries with the given standard deviation, rounded onto the
    /// Q8.8 grid so that the 16-bit weight path sees the same values.
    pub fn random_q8_8(rng: &mut SynthRng, rows: usize, cols: usize, stddev: f64) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                from_fixed(
                    to_fixed(v * stddev, FixedPointFormat::INT16, DEFAULT_FRAC_BITS),
                    DEFAULT_FRAC_BITS,
                )
            })
            .collect();
        Self { rows, cols, data }
    }
}

pub fn matmul_ref(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::contract(format!(
            "matmul shape mismatch: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let av = a.get(i, k);
            for j in 0..b.cols {
                out.data[i * b.cols + j] += av * b.get(k, j);
            }
        }
    }
    Ok(out)
}

/// `y = x W + b` with `W` stored `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn random(rng: &mut SynthRng, fan_in: usize, fan_out: usize, with_bias: bool) -> Self {
        let weight = Matrix::random_q8_8(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt());
        let bias = if with_bias {
            Matrix::random_q8_8(rng, 1, fan_out, 0.1).data
        } else {
            vec![0.0; fan_out]
        };
        Self { weight, bias }
    }

    pub fn zeroed(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.fan_in());
        let mut y = self.bias.clone();
        for (k, &xv) in x.iter().enumerate() {
            let row = self.weight.row(k);
            for (yo, w) in y.iter_mut().zip(row) {
                *yo += xv * w;
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNormParams {
    pub fn identity(n: usize) -> Self {
        Self {
            gamma: vec![1.0; n],
            beta: vec![0.0; n],
        }
    }

    pub fn random(rng: &mut SynthRng, n: usize) -> Self {
        let g = Matrix::random_q8_8(rng, 1, n, 0.1).data;
        Self {
            gamma: g.iter().map(|v| 1.0 + v).collect(),
            beta: Matrix::random_q8_8(rng, 1, n, 0.1).data,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        layernorm_ref(x, &self.gamma, &self.beta)
    }
}

/// Layer normalization over the whole slice with `eps = 1e-5`.
pub fn layernorm_ref(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
    x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (g, b))| (v - mean) * inv * g + b)
        .collect()
}

/// Max-subtracted softmax.
pub fn softmax_ref(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dot product of a quantized token with a 16-bit weight column without
/// dequantizing the inliers first: the integer inlier sum is scaled once, then
/// the outlier products are added.
pub fn quantized_dot(
    q: &QuantizedToken,
    weight_raw: &[i16],
    weight_frac_bits: u32,
    scheme: &QuantScheme,
) -> Result<f64> {
    let hz = q.hidden_dim();
    q.check(scheme, hz)?;
    if weight_raw.len() != hz {
        return Err(Error::contract(format!(
            "weight column has {} entries, token has {hz}",
            weight_raw.len()
        )));
    }
    let mut is_outlier = vec![false; hz];
    for &i in &q.outlier_indices {
        let i = i as usize;
        if i >= hz {
            return Err(Error::corrupt(0, format!("outlier index {i} out of range")));
        }
        is_outlier[i] = true;
    }
    let mut inlier_acc: i64 = 0;
    let mut codes = q.inliers.iter();
    for (c, &w) in weight_raw.iter().enumerate() {
        if !is_outlier[c] {
            inlier_acc += *codes.next().expect("count checked") as i64 * w as i64;
        }
    }
    let mut outlier_acc: i64 = 0;
    for (&idx, &o) in q.outlier_indices.iter().zip(&q.outliers) {
        outlier_acc += o as i64 * weight_raw[idx as usize] as i64;
    }
    let wscale = f64::powi(2.0, -(weight_frac_bits as i32));
    let oscale = f64::powi(2.0, -((weight_frac_bits + DEFAULT_FRAC_BITS) as i32));
    Ok(q.scale_f64() * inlier_acc as f64 * wscale + outlier_acc as f64 * oscale)
}
