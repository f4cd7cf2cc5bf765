//! Linear discriminant projection followed by centering and length normalization.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ivector::{IVector, Stage};
use crate::linalg::{canonical_signs, cholesky, sorted_eigen};
use crate::persist::{read_file, BinReader, BinWriter};

pub const LDA_MAGIC: &[u8; 4] = b"VQLD";

/// Within-class scatter is loaded by this fraction of its mean eigenvalue.
pub const WITHIN_REGULARIZATION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LdaTransform {
    /// `M x d`; columns ordered by decreasing discriminant eigenvalue.
    projection: DMatrix<f64>,
    mean: DVector<f64>,
    eigenvalues: Vec<f64>,
    classes: usize,
}

/// Within- and between-class scatter (normalized by the sample count).
pub(crate) fn scatter_matrices(vectors: &[&[f64]], labels: &[&str]) -> Result<(DMatrix<f64>, DMatrix<f64>, usize)> {
    if vectors.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: vectors.len(),
            got: labels.len(),
        });
    }
    let dim = vectors
        .first()
        .map(|v| v.len())
        .ok_or_else(|| Error::InsufficientData("no vectors to fit".into()))?;
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (v, l)) in vectors.iter().zip(labels).enumerate() {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("discriminant training vectors"));
        }
        groups.entry(l).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::InsufficientData(format!("{} class(es); need at least 2", groups.len())));
    }
    let n = vectors.len() as f64;
    let global = vectors
        .iter()
        .fold(DVector::zeros(dim), |acc, v| acc + DVector::from_column_slice(v))
        / n;
    let mut sw = DMatrix::zeros(dim, dim);
    let mut sb = DMatrix::zeros(dim, dim);
    for (label, idx) in &groups {
        if idx.len() < 2 {
            return Err(Error::InsufficientData(format!("class {label} has a single sample")));
        }
        let mu = idx
            .iter()
            .fold(DVector::zeros(dim), |acc, &i| acc + DVector::from_column_slice(vectors[i]))
            / idx.len() as f64;
        for &i in idx {
            let d = DVector::from_column_slice(vectors[i]) - &mu;
            sw.ger(1.0 / n, &d, &d, 1.0);
        }
        let d = &mu - &global;
        sb.ger(idx.len() as f64 / n, &d, &d, 1.0);
    }
    Ok((sw, sb, groups.len()))
}

impl LdaTransform {
    /// Solves `S_b v = λ S_w v` and keeps the top `d` directions.
    pub fn fit(vectors: &[&[f64]], labels: &[&str], d: usize) -> Result<Self> {
        let (mut sw, sb, classes) = scatter_matrices(vectors, labels)?;
        let m = sw.nrows();
        if d == 0 || d > classes - 1 || d > m {
            return Err(Error::Config(format!(
                "LDA dimension {d} must be in 1..={} for {classes} classes of dimension {m}",
                (classes - 1).min(m)
            )));
        }
        let tr_w = sw.trace();
        let tr_b = sb.trace();
        if tr_b <= 1e-14 * tr_w.max(f64::MIN_POSITIVE) || tr_b == 0.0 {
            return Err(Error::Degenerate("between-class scatter is zero: class means coincide".into()));
        }
        let reg = WITHIN_REGULARIZATION * tr_w / m as f64;
        for i in 0..m {
            sw[(i, i)] += reg;
        }
        let chol = cholesky(sw, "within-class scatter")?;
        let l = chol.l();
        let l_inv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numeric("within-class scatter factor is singular".into()))?;
        let whitened = &l_inv * sb * l_inv.transpose();
        let (values, vectors_u) = sorted_eigen(whitened);
        if values[0] <= 1e-12 * values.iter().map(|v| v.abs()).sum::<f64>().max(f64::MIN_POSITIVE) {
            return Err(Error::Degenerate("no discriminant direction has positive separation".into()));
        }
        let mut projection = l_inv.transpose() * vectors_u.columns(0, d);
        canonical_signs(&mut projection);

        let n = vectors.len() as f64;
        let mean = vectors
            .iter()
            .fold(DVector::zeros(d), |acc, v| acc + projection.tr_mul(&DVector::from_column_slice(v)))
            / n;
        Ok(LdaTransform {
            projection,
            mean,
            eigenvalues: values.iter().take(d).copied().collect(),
            classes,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn project(&self, w: &IVector) -> Result<IVector> {
        if w.stage() != Stage::Raw {
            return Err(Error::Config(format!("i-vector {} is at stage {}, expected raw", w.id(), w.stage())));
        }
        if w.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: w.dim(),
            });
        }
        let v = self.projection.tr_mul(&DVector::from_column_slice(w.values()));
        w.advance(Stage::Lda, v.as_slice().to_vec())
    }

    pub fn center(&self, v: &IVector) -> Result<IVector> {
        if v.stage() != Stage::Lda || v.dim() != self.output_dim() {
            return Err(Error::Config(format!("i-vector {} is not an LDA output of this transform", v.id())));
        }
        let c: Vec<f64> = v.values().iter().zip(self.mean.iter()).map(|(a, b)| a - b).collect();
        v.advance(Stage::Centered, c)
    }

    /// Projection, centering and length normalization in one step.
    pub fn project_center_lnorm(&self, w: &IVector) -> Result<IVector> {
        let projected = self.project(w)?;
        let scale = norm(projected.values()).max(norm(self.mean.as_slice()));
        let centered = self.center(&projected)?;
        length_normalize(&centered, scale)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (m, d) = (self.input_dim(), self.output_dim());
        let mut w = BinWriter::new(LDA_MAGIC);
        w.u64(m as u64).u64(d as u64);
        for r in 0..m {
            for c in 0..d {
                w.f64(self.projection[(r, c)]);
            }
        }
        w.f64s(self.mean.as_slice()).f64s(&self.eigenvalues).u64(self.classes as u64);
        w.write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut r = BinReader::new(&bytes, LDA_MAGIC, "LDA file")?;
        let m = r.usize()?;
        let d = r.usize()?;
        let projection = DMatrix::from_row_slice(m, d, &r.f64s(m * d)?);
        let mean = DVector::from_vec(r.f64s(d)?);
        let eigenvalues = r.f64s(d)?;
        let classes = r.usize()?;
        r.finish()?;
        if projection.iter().chain(mean.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LDA transform"));
        }
        Ok(LdaTransform {
            projection,
            mean,
            eigenvalues,
            classes,
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Divides by the Euclidean norm. `reference` sets the scale below which the
/// vector counts as zero.
pub fn length_normalize(v: &IVector, reference: f64) -> Result<IVector> {
    let n = norm(v.values());
    if n == 0.0 || n <= 1e-12 * reference {
        return Err(Error::Degenerate(format!("i-vector {} has zero norm after centering", v.id())));
    }
    v.advance(Stage::LengthNormalized, v.values().iter().map(|x| x / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    /// `classes` Gaussian blobs in `dim` dimensions with random means.
    fn blobs(classes: usize, per: usize, dim: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ls = Vec::new();
        for k in 0..classes {
            let mu: Vec<f64> = (0..dim).map(|_| spread * gaussian(&mut rng)).collect();
            for _ in 0..per {
                xs.push(mu.iter().map(|m| m + gaussian(&mut rng)).collect());
                ls.push(format!("c{k:03}"));
            }
        }
        (xs, ls)
    }

    fn refs<'a>(xs: &'a [Vec<f64>], ls: &'a [String]) -> (Vec<&'a [f64]>, Vec<&'a str>) {
        (xs.iter().map(|v| v.as_slice()).collect(), ls.iter().map(|s| s.as_str()).collect())
    }

    #[test]
    fn direction_follows_separating_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut xs = Vec::new();
        let mut ls = Vec::new();
        for i in 0..200 {
            let shift = if i % 2 == 0 { 4.0 } else { -4.0 };
            xs.push(vec![shift + gaussian(&mut rng), 3.0 * gaussian(&mut rng)]);
            ls.push(if i % 2 == 0 { "a" } else { "b" }.to_string());
        }
        let (v, l) = refs(&xs, &ls);
        let lda = LdaTransform::fit(&v, &l, 1).unwrap();
        let p = lda.projection().column(0);
        assert!((p[0] / p.norm()).abs() > 0.99);

        // dense oracle: leading eigenvector of S_w⁻¹ S_b on the 2x2 scatters
        let (sw, sb, _) = scatter_matrices(&v, &l).unwrap();
        let m = sw.try_inverse().unwrap() * sb;
        let eig = m.clone().complex_eigenvalues();
        let lead = eig.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
        let a = m - DMatrix::identity(2, 2) * lead;
        let oracle = DVector::from_vec(vec![-a[(0, 1)], a[(0, 0)]]).normalize();
        let cos = oracle.dot(&p.normalize()).abs();
        assert!(cos > 1.0 - 1e-6, "{cos}");
    }

    #[test]
    fn coincident_means_are_degenerate() {
        let xs = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]];
        let ls = vec!["a".to_string(), "a".into(), "b".into(), "b".into()];
        let (v, l) = refs(&xs, &ls);
        assert!(matches!(LdaTransform::fit(&v, &l, 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rank_bound_with_65_classes() {
        let (xs, ls) = blobs(65, 4, 80, 3.0, 2);
        let (v, l) = refs(&xs, &ls);
        let lda = LdaTransform::fit(&v, &l, 64).unwrap();
        assert_eq!(lda.output_dim(), 64);
        assert_eq!(lda.classes(), 65);
        assert!(matches!(LdaTransform::fit(&v, &l, 65), Err(Error::Config(_))));
    }

    #[test]
    fn single_sample_class_rejected() {
        let xs = vec![vec![1.0], vec![2.0], vec![5.0]];
        let ls = vec!["a".to_string(), "a".into(), "b".into()];
        let (v, l) = refs(&xs, &ls);
        assert!(matches!(LdaTransform::fit(&v, &l, 1), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn three_four_five() {
        let iv = IVector::new("x", Stage::Centered, vec![3.0, 4.0]).unwrap();
        let out = length_normalize(&iv, 5.0).unwrap();
        assert_eq!(out.values(), &[0.6, 0.8]);
        assert_eq!(out.stage(), Stage::LengthNormalized);
    }

    #[test]
    fn vector_at_training_mean_is_rejected() {
        let (xs, ls) = blobs(3, 10, 2, 5.0, 3);
        let (v, l) = refs(&xs, &ls);
        let lda = LdaTransform::fit(&v, &l, 2).unwrap();
        // solve projectionᵀ x = mean for x
        let x = lda.projection().transpose().try_inverse().unwrap() * DVector::from_column_slice(lda.mean());
        let iv = IVector::new("m", Stage::Raw, x.as_slice().to_vec()).unwrap();
        assert!(matches!(lda.project_center_lnorm(&iv), Err(Error::Degenerate(_))));
    }

    #[test]
    fn trace_ratio_beats_random_projections() {
        let (xs, ls) = blobs(6, 15, 8, 1.5, 4);
        let (v, l) = refs(&xs, &ls);
        let d = 3;
        let lda = LdaTransform::fit(&v, &l, d).unwrap();
        let (sw, sb, _) = scatter_matrices(&v, &l).unwrap();
        let ratio = |p: &DMatrix<f64>| {
            let w = p.transpose() * &sw * p;
            let b = p.transpose() * &sb * p;
            (w.try_inverse().unwrap() * b).trace()
        };
        let best = ratio(lda.projection());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let p = DMatrix::from_fn(8, d, |_, _| rng.gen_range(-1.0..1.0));
            assert!(ratio(&p) <= best * (1.0 + 1e-9));
        }
    }

    #[test]
    fn label_permutation_gives_same_subspace() {
        let (xs, ls) = blobs(5, 12, 6, 2.0, 5);
        let (v, l) = refs(&xs, &ls);
        let a = LdaTransform::fit(&v, &l, 4).unwrap();
        let renamed: Vec<String> = ls.iter().map(|s| format!("z{}", 9 - s[1..].parse::<usize>().unwrap())).collect();
        let (v2, l2) = refs(&xs, &renamed);
        let b = LdaTransform::fit(&v2, &l2, 4).unwrap();
        let qa = a.projection().clone().qr().q();
        let qb = b.projection().clone().qr().q();
        let s = (qa.transpose() * qb).singular_values();
        assert!(s.min().clamp(-1.0, 1.0).acos() < 1e-6);
    }

    #[test]
    fn repeated_fits_are_identical_with_positive_leading_entries() {
        let (xs, ls) = blobs(4, 10, 5, 2.0, 6);
        let (v, l) = refs(&xs, &ls);
        let a = LdaTransform::fit(&v, &l, 3).unwrap();
        let b = LdaTransform::fit(&v, &l, 3).unwrap();
        assert_eq!(a, b);
        for col in a.projection().column_iter() {
            assert!(col.iter().find(|x| x.abs() > 1e-12).unwrap() > &0.0);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.vqld");
        a.save(&path).unwrap();
        assert_eq!(LdaTransform::load(&path).unwrap(), a);
    }

    proptest::proptest! {
        #[test]
        fn normalized_output_is_unit_and_idempotent(values in proptest::collection::vec(-50.0f64..50.0, 3..12)) {
            proptest::prop_assume!(norm(&values) > 1e-6);
            let iv = IVector::new("p", Stage::Centered, values.clone()).unwrap();
            let once = length_normalize(&iv, norm(&values)).unwrap();
            proptest::prop_assert!((norm(once.values()) - 1.0).abs() < 1e-12);
            let again: Vec<f64> = once.values().iter().map(|x| x / norm(once.values())).collect();
            for (a, b) in again.iter().zip(once.values()) {
                proptest::prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
