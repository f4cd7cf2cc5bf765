use super::FeatureMatrix;
use crate::error::{Error, Result};

const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CmvnMode {
    #[default]
    MeanVariance,
    MeanOnly,
}

/// Per-utterance mean and variance normalization.
pub fn cmvn(feat: &FeatureMatrix) -> Result<FeatureMatrix> {
    cmvn_with(feat, CmvnMode::MeanVariance)
}

/// Normalizes each dimension over the utterance. Dimensions whose variance
/// is below 1e-12 are only mean-subtracted.
pub fn cmvn_with(feat: &FeatureMatrix, mode: CmvnMode) -> Result<FeatureMatrix> {
    let n = feat.n_frames();
    if n < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: n,
            unit: "frames",
        });
    }
    let dim = feat.dim();
    let mean = feat.column_means();
    let mut var = vec![0.0; dim];
    for row in feat.rows() {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let v = v / n as f64;
            if mode == CmvnMode::MeanVariance && v >= MIN_VARIANCE {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut values = Vec::with_capacity(n * dim);
    for row in feat.rows() {
        for d in 0..dim {
            values.push((row[d] - mean[d]) * scale[d]);
        }
    }
    Ok(feat.with_values(dim, values))
}
