use half::f16;

use super::scheme::QuantScheme;
use crate::error::{Error, Result};
use crate::fixed::{from_fixed, round_half_away, to_fixed, FixedPointFormat, DEFAULT_FRAC_BITS};

/// Result of the top-k split of a token.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierSplit {
    /// Ascending channel positions of the outliers.
    pub indices: Vec<usize>,
    /// Outlier values, in `indices` order.
    pub outliers: Vec<f64>,
    /// Remaining channels in their original order.
    pub inliers: Vec<f64>,
}

/// Picks the `k` channels with the largest magnitude. Equal magnitudes go to
/// the lower channel index first.
pub fn select_outliers(token: &[f64], k: usize) -> Result<OutlierSplit> {
    if k > token.len() {
        return Err(Error::contract(format!("k = {k} exceeds token length {}", token.len())));
    }
    let mut order: Vec<usize> = (0..token.len()).collect();
    if k > 0 {
        // total_cmp on magnitudes, then index, gives a strict total order.
        order.sort_by(|&a, &b| token[b].abs().total_cmp(&token[a].abs()).then(a.cmp(&b)));
    }
    let mut indices = order[..k].to_vec();
    indices.sort_unstable();

    let mut outliers = Vec::with_capacity(k);
    let mut inliers = Vec::with_capacity(token.len() - k);
    let mut next = indices.iter().peekable();
    for (i, &v) in token.iter().enumerate() {
        if next.peek() == Some(&&i) {
            next.next();
            outliers.push(v);
        } else {
            inliers.push(v);
        }
    }
    Ok(OutlierSplit {
        indices,
        outliers,
        inliers,
    })
}

/// A token in its stored form. Equality is bit-exact, including the scale.
#[derive(Debug, Clone)]
pub struct QuantizedToken {
    /// Inlier codes, each within the scheme's inlier range.
    pub inliers: Vec<i8>,
    /// Q8.8 outlier values.
    pub outliers: Vec<i16>,
    pub scale: f16,
    pub outlier_indices: Vec<u8>,
}

impl PartialEq for QuantizedToken {
    fn eq(&self, other: &Self) -> bool {
        self.inliers == other.inliers
            && self.outliers == other.outliers
            && self.scale.to_bits() == other.scale.to_bits()
            && self.outlier_indices == other.outlier_indices
    }
}

impl Eq for QuantizedToken {}

impl QuantizedToken {
    pub fn hidden_dim(&self) -> usize {
        self.inliers.len() + self.outliers.len()
    }

    pub fn scale_f64(&self) -> f64 {
        self.scale.to_f64()
    }

    /// Structural checks against a scheme and hidden dimension.
    pub fn check(&self, scheme: &QuantScheme, hz: usize) -> Result<()> {
        let k = scheme.outlier_count;
        if self.outliers.len() != k || self.outlier_indices.len() != k {
            return Err(Error::contract(format!(
                "token carries {} outliers / {} indices, scheme expects {k}",
                self.outliers.len(),
                self.outlier_indices.len()
            )));
        }
        if self.inliers.len() + k != hz {
            return Err(Error::contract(format!(
                "token has {} inliers, expected {}",
                self.inliers.len(),
                hz - k
            )));
        }
        let q = scheme.qmax();
        if let Some(bad) = self.inliers.iter().find(|&&c| (c as i32) < -q - 1 || c as i32 > q) {
            return Err(Error::contract(format!("inlier code {bad} out of range")));
        }
        Ok(())
    }
}

/// Quantizes one token under `scheme`.
///
/// Inlier codes are `round(x * qmax / M)` with `M` taken over inliers only, so
/// removing outliers shrinks the scale. The stored scale is the binary16
/// rounding of `M / qmax`.
pub fn quantize_token(token: &[f64], scheme: &QuantScheme) -> Result<QuantizedToken> {
    scheme.validate(token.len())?;
    if let Some(index) = token.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    if token.len() > 256 && scheme.outlier_count > 0 {
        return Err(Error::contract("outlier indices are 8-bit; Hz must be <= 256"));
    }
    let split = select_outliers(token, scheme.outlier_count)?;
    let m = split.inliers.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let qmax = scheme.qmax();
    let inliers = if m == 0.0 {
        vec![0i8; split.inliers.len()]
    } else {
        let fmt = FixedPointFormat::new(scheme.inlier_bits)?;
        split
            .inliers
            .iter()
            .map(|&x| fmt.clamp(round_half_away(x * qmax as f64 / m) as i64) as i8)
            .collect()
    };
    let outliers = split
        .outliers
        .iter()
        .map(|&x| to_fixed(x, FixedPointFormat::INT16, DEFAULT_FRAC_BITS) as i16)
        .collect();
    Ok(QuantizedToken {
        inliers,
        outliers,
        scale: f16::from_f64(m / qmax as f64),
        outlier_indices: split.indices.iter().map(|&i| i as u8).collect(),
    })
}

/// Rebuilds a real token: inliers as `sigma * code`, outliers from Q8.8.
pub fn dequantize_token(q: &QuantizedToken, scheme: &QuantScheme) -> Result<Vec<f64>> {
    let hz = q.hidden_dim();
    q.check(scheme, hz)?;
    let mut out = vec![0.0; hz];
    let mut is_outlier = vec![false; hz];
    let mut prev: Option<usize> = None;
    for (n, &idx) in q.outlier_indices.iter().enumerate() {
        let idx = idx as usize;
        if idx >= hz || prev.is_some_and(|p| idx <= p) {
            return Err(Error::corrupt(
                n,
                format!("outlier index {idx} out of range or not increasing"),
            ));
        }
        prev = Some(idx);
        is_outlier[idx] = true;
        out[idx] = from_fixed(q.outliers[n] as i32, DEFAULT_FRAC_BITS);
    }
    let sigma = q.scale_f64();
    let mut codes = q.inliers.iter();
    for (slot, _) in out.iter_mut().zip(&is_outlier).filter(|(_, &o)| !o) {
        *slot = sigma * *codes.next().expect("inlier count checked") as f64;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaStats {
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
    /// Entries farther than three standard deviations from the mean.
    pub outliers: usize,
}

pub fn stats_3sigma(token: &[f64]) -> SigmaStats {
    let n = token.len() as f64;
    let mean = token.iter().sum::<f64>() / n;
    let var = token.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let stddev = var.sqrt();
    let outliers = if stddev == 0.0 {
        0
    } else {
        token.iter().filter(|v| (*v - mean).abs() > 3.0 * stddev).count()
    };
    SigmaStats { mean, stddev, outliers }
}
