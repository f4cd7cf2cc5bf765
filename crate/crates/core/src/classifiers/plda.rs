//! Two-covariance PLDA: class variable `y ~ N(μ, Φ_b)`, observation `x ~ N(y, Φ_w)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::argmax_label;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, floor_eigenvalues, log_det_chol};
use crate::persist::{read_file, BinReader, BinWriter};

pub const PLDA_MAGIC: &[u8; 4] = b"VQPL";

/// Eigenvalue floor for the within-class covariance, relative to its mean eigenvalue.
pub const WITHIN_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    mean: DVector<f64>,
    between: DMatrix<f64>,
    within: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PldaTrainingLog {
    /// Mean per-sample log marginal likelihood of the training data under the
    /// model entering each iteration, followed by that of the returned model.
    pub log_likelihood: Vec<f64>,
}

/// Enrollment vectors of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEnrollment {
    pub label: String,
    pub vectors: Vec<Vec<f64>>,
}

impl ClassEnrollment {
    pub fn new(label: impl Into<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let label = label.into();
        if vectors.is_empty() {
            return Err(Error::InsufficientData(format!("class {label} has no enrollment vectors")));
        }
        Ok(ClassEnrollment { label, vectors })
    }

    pub fn count(&self) -> usize {
        self.vectors.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnrollmentMode {
    /// One class posterior from all enrollment vectors.
    #[default]
    Pooled,
    /// Each enrollment vector scored alone; the class score is the maximum.
    SegmentMax,
}

struct Grouped {
    dim: usize,
    n: usize,
    /// (count, sum) per class
    classes: Vec<(usize, DVector<f64>)>,
    scatter: DMatrix<f64>,
}

fn group(vectors: &[&[f64]], labels: &[&str]) -> Result<Grouped> {
    if vectors.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: vectors.len(),
            got: labels.len(),
        });
    }
    let dim = vectors
        .first()
        .map(|v| v.len())
        .ok_or_else(|| Error::InsufficientData("no PLDA training vectors".into()))?;
    let mut by_label: BTreeMap<&str, (usize, DVector<f64>)> = BTreeMap::new();
    let mut scatter = DMatrix::zeros(dim, dim);
    for (v, l) in vectors.iter().zip(labels) {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("PLDA training vectors"));
        }
        let x = DVector::from_column_slice(v);
        scatter.ger(1.0, &x, &x, 1.0);
        let e = by_label.entry(l).or_insert_with(|| (0, DVector::zeros(dim)));
        e.0 += 1;
        e.1 += x;
    }
    Ok(Grouped {
        dim,
        n: vectors.len(),
        classes: by_label.into_values().collect(),
        scatter,
    })
}

fn floored(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows() as f64;
    floor_eigenvalues(m, WITHIN_FLOOR * m.trace().max(0.0) / d)
}

impl PldaModel {
    pub fn new(mean: Vec<f64>, between: DMatrix<f64>, within: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if between.shape() != (d, d) || within.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: between.nrows(),
            });
        }
        if mean.iter().chain(between.iter()).chain(within.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("PLDA parameters"));
        }
        cholesky(within.clone(), "PLDA within-class covariance")?;
        Ok(PldaModel {
            mean: DVector::from_vec(mean),
            between,
            within,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn between(&self) -> &DMatrix<f64> {
        &self.between
    }

    pub fn within(&self) -> &DMatrix<f64> {
        &self.within
    }

    /// EM for `(μ, Φ_b, Φ_w)`.
    pub fn train(vectors: &[&[f64]], labels: &[&str], em_iters: usize) -> Result<(Self, PldaTrainingLog)> {
        let g = group(vectors, labels)?;
        if g.classes.len() < 2 {
            return Err(Error::InsufficientData("PLDA needs at least two classes".into()));
        }
        if g.classes.iter().all(|(n, _)| *n < 2) {
            return Err(Error::InsufficientData(
                "every class has a single sample; within-class covariance is unidentifiable".into(),
            ));
        }
        let d = g.dim;
        let n = g.n as f64;
        let k = g.classes.len() as f64;

        let global = g.classes.iter().fold(DVector::zeros(d), |acc, (_, s)| acc + s) / n;
        let mut within = g.scatter.clone();
        let mut between = DMatrix::zeros(d, d);
        for (cnt, sum) in &g.classes {
            let mu = sum / *cnt as f64;
            within.ger(-(*cnt as f64), &mu, &mu, 1.0);
            let dm = &mu - &global;
            between.ger(1.0 / k, &dm, &dm, 1.0);
        }
        within /= n;
        if within.trace() <= 1e-14 * (g.scatter.trace() / n).max(f64::MIN_POSITIVE) || within.trace() <= 0.0 {
            return Err(Error::Degenerate("PLDA training vectors have no within-class spread".into()));
        }
        within = floored(&within);
        between = floored(&(between + &within * 1e-6));
        let mut model = PldaModel {
            mean: global,
            between,
            within,
        };

        let mut log = PldaTrainingLog::default();
        for iter in 0..em_iters {
            let (ll, next) = model.em_step(&g)?;
            log.log_likelihood.push(ll);
            log::debug!("plda iter {iter}: log-likelihood {ll:.6}");
            model = next;
        }
        let (ll, _) = model.em_step(&g)?;
        log.log_likelihood.push(ll);
        Ok((model, log))
    }

    /// One EM update; also returns the mean log marginal likelihood under `self`.
    fn em_step(&self, g: &Grouped) -> Result<(f64, PldaModel)> {
        let d = g.dim;
        let b_chol = cholesky(self.between.clone(), "PLDA between-class covariance")?;
        let w_chol = cholesky(self.within.clone(), "PLDA within-class covariance")?;
        let b_prec = b_chol.inverse();
        let w_prec = w_chol.inverse();
        let b_mu = &b_prec * &self.mean;
        let logdet_b_prec = -log_det_chol(&b_chol);
        let logdet_w_prec = -log_det_chol(&w_chol);

        let mut ll = -0.5 * g.n as f64 * d as f64 * (2.0 * PI).ln() - 0.5 * (&w_prec * &g.scatter).trace();
        let mut sum_y = DVector::zeros(d);
        let mut sum_yy = DMatrix::zeros(d, d);
        let mut cross = DMatrix::zeros(d, d);
        let mut weighted_yy = DMatrix::zeros(d, d);
        for (cnt, sum) in &g.classes {
            let nk = *cnt as f64;
            let prec = &b_prec + &w_prec * nk;
            let chol = cholesky(prec, "PLDA class posterior precision")?;
            let rhs = &b_mu + &w_prec * sum;
            let y = chol.solve(&rhs);
            let cov = chol.inverse();
            ll += 0.5 * nk * logdet_w_prec + 0.5 * logdet_b_prec - 0.5 * log_det_chol(&chol) - 0.5 * self.mean.dot(&b_mu)
                + 0.5 * rhs.dot(&y);
            let mut second = cov;
            second.ger(1.0, &y, &y, 1.0);
            sum_y += &y;
            sum_yy += &second;
            weighted_yy += &second * nk;
            cross.ger(1.0, sum, &y, 1.0);
        }
        let k = g.classes.len() as f64;
        let mean = sum_y / k;
        let mut between = sum_yy / k;
        between.ger(-1.0, &mean, &mean, 1.0);
        let within = (&g.scatter - &cross - cross.transpose() + weighted_yy) / g.n as f64;
        let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
        let next = PldaModel {
            mean,
            between: floored(&sym(between)),
            within: floored(&sym(within)),
        };
        Ok((ll / g.n as f64, next))
    }

    /// Precomputes per-class predictive distributions.
    pub fn enroll(&self, enrollments: &[ClassEnrollment], mode: EnrollmentMode) -> Result<EnrolledClasses> {
        if enrollments.is_empty() {
            return Err(Error::InsufficientData("empty enrollment set".into()));
        }
        let d = self.dim();
        let b_prec = cholesky(self.between.clone(), "PLDA between-class covariance")?.inverse();
        let w_prec = cholesky(self.within.clone(), "PLDA within-class covariance")?.inverse();
        let b_mu = &b_prec * &self.mean;
        let null = Predictive::new(self.mean.clone(), &self.between + &self.within)?;

        let posterior = |n: usize, sum: &DVector<f64>| -> Result<Predictive> {
            let chol = cholesky(&b_prec + &w_prec * n as f64, "PLDA enrollment precision")?;
            let y = chol.solve(&(&b_mu + &w_prec * sum));
            Predictive::new(y, &self.within + chol.inverse())
        };

        let mut sorted: Vec<&ClassEnrollment> = enrollments.iter().collect();
        sorted.sort_by(|a, b| a.label.cmp(&b.label));
        let mut classes = Vec::with_capacity(sorted.len());
        for (i, e) in sorted.iter().enumerate() {
            if i > 0 && sorted[i - 1].label == e.label {
                return Err(Error::Config(format!("duplicate enrollment label {}", e.label)));
            }
            let mut vs = Vec::with_capacity(e.vectors.len());
            for v in &e.vectors {
                if v.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: v.len() });
                }
                vs.push(DVector::from_column_slice(v));
            }
            let predictives = match mode {
                EnrollmentMode::Pooled => {
                    let sum = vs.iter().fold(DVector::zeros(d), |acc, v| acc + v);
                    vec![posterior(vs.len(), &sum)?]
                }
                EnrollmentMode::SegmentMax => vs.iter().map(|v| posterior(1, v)).collect::<Result<_>>()?,
            };
            classes.push((e.label.clone(), predictives));
        }
        Ok(EnrolledClasses { null, classes })
    }
}

/// A Gaussian with cached Cholesky factor.
#[derive(Debug, Clone)]
struct Predictive {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl Predictive {
    fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len() as f64;
        let chol = cholesky((&cov + cov.transpose()) * 0.5, "PLDA predictive covariance")?;
        let log_norm = -0.5 * (d * (2.0 * PI).ln() + log_det_chol(&chol));
        Ok(Predictive { mean, chol, log_norm })
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let z = self.chol.l_dirty().solve_lower_triangular(&diff).expect("non-singular factor");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

#[derive(Debug, Clone)]
pub struct EnrolledClasses {
    null: Predictive,
    classes: Vec<(String, Vec<Predictive>)>,
}

impl EnrolledClasses {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|(l, _)| l.as_str())
    }

    /// Log-likelihood ratio of every class (same-class vs independent), in label order.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<(String, f64)>> {
        self.scores_among(x, |_| true)
    }

    pub fn scores_among(&self, x: &[f64], keep: impl Fn(&str) -> bool) -> Result<Vec<(String, f64)>> {
        if x.len() != self.null.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.null.mean.len(),
                got: x.len(),
            });
        }
        let x = DVector::from_column_slice(x);
        let null = self.null.log_density(&x);
        Ok(self
            .classes
            .iter()
            .filter(|(l, _)| keep(l))
            .map(|(l, preds)| {
                let best = preds.iter().map(|p| p.log_density(&x)).fold(f64::NEG_INFINITY, f64::max);
                (l.clone(), best - null)
            })
            .collect())
    }

    /// Highest-scoring label among classes accepted by `keep`.
    pub fn classify_among(&self, x: &[f64], keep: impl Fn(&str) -> bool) -> Result<(String, Vec<(String, f64)>)> {
        let scores = self.scores_among(x, keep)?;
        let label = argmax_label(&scores)
            .ok_or_else(|| Error::InsufficientData("no enrolled class is eligible".into()))?
            .to_string();
        Ok((label, scores))
    }

    pub fn classify(&self, x: &[f64]) -> Result<(String, Vec<(String, f64)>)> {
        self.classify_among(x, |_| true)
    }
}

/// Scores `test` against every enrollment and returns the winning label with all scores.
pub fn plda_classify(
    model: &PldaModel,
    enrollments: &[ClassEnrollment],
    test: &[f64],
    mode: EnrollmentMode,
) -> Result<(String, Vec<(String, f64)>)> {
    model.enroll(enrollments, mode)?.classify(test)
}

impl PldaModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let d = self.dim();
        let mut w = BinWriter::new(PLDA_MAGIC);
        w.u64(d as u64).f64s(self.mean.as_slice());
        for m in [&self.between, &self.within] {
            for r in 0..d {
                for c in 0..d {
                    w.f64(m[(r, c)]);
                }
            }
        }
        w.write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut r = BinReader::new(&bytes, PLDA_MAGIC, "PLDA file")?;
        let d = r.usize()?;
        let mean = r.f64s(d)?;
        let between = DMatrix::from_row_slice(d, d, &r.f64s(d * d)?);
        let within = DMatrix::from_row_slice(d, d, &r.f64s(d * d)?);
        r.finish()?;
        PldaModel::new(mean, between, within)
    }
}
