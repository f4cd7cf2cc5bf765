use super::FeatureMatrix;
use crate::error::{Error, Result};

/// Appends regression deltas and accelerations: `[c | Δc | ΔΔc]`.
///
/// `Δc_t = Σ_θ θ (c_{t+θ} − c_{t−θ}) / (2 Σ_θ θ²)` for `θ = 1..=window`,
/// replicating the first and last frames at the edges.
pub fn append_deltas(feat: &FeatureMatrix, delta_window: usize) -> Result<FeatureMatrix> {
    if delta_window == 0 {
        return Err(Error::Config("delta window must be at least 1".into()));
    }
    let needed = 2 * delta_window + 1;
    if feat.n_frames() < needed {
        return Err(Error::TooShort {
            needed,
            got: feat.n_frames(),
            unit: "frames",
        });
    }
    let dim = feat.dim();
    let delta = regression(feat.values(), feat.n_frames(), dim, delta_window);
    let accel = regression(&delta, feat.n_frames(), dim, delta_window);

    let mut values = Vec::with_capacity(feat.n_frames() * dim * 3);
    for t in 0..feat.n_frames() {
        let span = t * dim..(t + 1) * dim;
        values.extend_from_slice(&feat.values()[span.clone()]);
        values.extend_from_slice(&delta[span.clone()]);
        values.extend_from_slice(&accel[span]);
    }
    Ok(feat.with_values(dim * 3, values))
}

fn regression(values: &[f64], n: usize, dim: usize, window: usize) -> Vec<f64> {
    let denom = 2.0 * (1..=window).map(|t| (t * t) as f64).sum::<f64>();
    let at = |t: isize, d: usize| values[(t.clamp(0, n as isize - 1) as usize) * dim + d];
    let mut out = vec![0.0; n * dim];
    for t in 0..n {
        for d in 0..dim {
            let mut acc = 0.0;
            for th in 1..=window {
                let th_i = th as isize;
                acc += th as f64 * (at(t as isize + th_i, d) - at(t as isize - th_i, d));
            }
            out[t * dim + d] = acc / denom;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sequence_has_zero_derivatives() {
        let rows: Vec<Vec<f64>> = (0..10).map(|_| vec![1.5, -2.0, 3.0]).collect();
        let out = append_deltas(&FeatureMatrix::from_rows(&rows, 0.01).unwrap(), 2).unwrap();
        assert_eq!(out.dim(), 9);
        for r in out.rows() {
            assert_eq!(&r[..3], &[1.5, -2.0, 3.0]);
            assert!(r[3..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ramp_has_unit_delta_in_interior() {
        let rows: Vec<Vec<f64>> = (0..12).map(|t| vec![t as f64, 0.0]).collect();
        let out = append_deltas(&FeatureMatrix::from_rows(&rows, 0.01).unwrap(), 2).unwrap();
        for t in 2..10 {
            assert!((out.row(t)[2] - 1.0).abs() < 1e-12);
            assert_eq!(out.row(t)[3], 0.0);
        }
        // acceleration of a ramp vanishes where the delta is flat on both sides
        for t in 4..8 {
            assert!(out.row(t)[4].abs() < 1e-12);
        }
    }

    #[test]
    fn thirteen_to_thirty_nine() {
        let rows: Vec<Vec<f64>> = (0..5).map(|t| vec![t as f64; 13]).collect();
        let out = append_deltas(&FeatureMatrix::from_rows(&rows, 0.01).unwrap(), 2).unwrap();
        assert_eq!(out.dim(), 39);
        assert_eq!(out.frame_times(), FeatureMatrix::from_rows(&rows, 0.01).unwrap().frame_times());
    }

    #[test]
    fn too_few_frames() {
        let rows: Vec<Vec<f64>> = (0..4).map(|t| vec![t as f64]).collect();
        let m = FeatureMatrix::from_rows(&rows, 0.01).unwrap();
        assert!(matches!(append_deltas(&m, 2), Err(Error::TooShort { needed: 5, got: 4, .. })));
    }
}
