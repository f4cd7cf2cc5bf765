//! Total-variability model `M = m + T·w` and posterior-mean i-vector extraction.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gmm::{DiagonalGmm, SufficientStats};
use crate::linalg::{cholesky, log_det_chol};
use crate::persist::{read_file, BinReader, BinWriter};

pub const TV_MAGIC: &[u8; 4] = b"VQTV";

/// Utterances per E-step batch; bounds the memory held for posterior moments.
const BATCH: usize = 256;

/// Processing stage of an embedding. Stages only move forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Raw,
    Lda,
    Centered,
    LengthNormalized,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Lda => "lda",
            Stage::Centered => "centered",
            Stage::LengthNormalized => "length-normalized",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "raw" => Stage::Raw,
            "lda" => Stage::Lda,
            "centered" => Stage::Centered,
            "length-normalized" => Stage::LengthNormalized,
            other => return Err(Error::format("stage", format!("unknown stage {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IVector {
    id: String,
    stage: Stage,
    values: Vec<f64>,
}

impl IVector {
    pub fn new(id: impl Into<String>, stage: Stage, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("i-vector"));
        }
        Ok(IVector {
            id: id.into(),
            stage,
            values,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Replaces the values and moves to a later stage.
    pub fn advance(&self, stage: Stage, values: Vec<f64>) -> Result<IVector> {
        if stage <= self.stage {
            return Err(Error::Config(format!(
                "cannot move i-vector {} from stage {} to {}",
                self.id, self.stage, stage
            )));
        }
        IVector::new(self.id.clone(), stage, values)
    }
}

/// Writes `id,stage,v1..vM` rows.
pub fn write_ivectors_csv<W: Write>(mut out: W, ivectors: &[IVector]) -> std::io::Result<()> {
    for iv in ivectors {
        write!(out, "{},{}", iv.id, iv.stage)?;
        for v in &iv.values {
            write!(out, ",{v:e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_ivectors_csv(text: &str) -> Result<Vec<IVector>> {
    let mut out = Vec::new();
    let mut dim = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |d: String| Error::format("i-vector CSV", format!("line {}: {d}", lineno + 1));
        let mut fields = line.split(',');
        let id = fields.next().filter(|s| !s.is_empty()).ok_or_else(|| bad("missing id".into()))?;
        let stage: Stage = fields.next().ok_or_else(|| bad("missing stage".into()))?.parse()?;
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if *dim.get_or_insert(values.len()) != values.len() {
            return Err(bad("inconsistent dimension".into()));
        }
        out.push(IVector::new(id, stage, values)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvTrainConfig {
    pub rank: usize,
    pub em_iters: usize,
    pub seed: u64,
    /// Initial entries are `N(0, 1)` scaled by this times the mean UBM standard deviation.
    pub init_scale: f64,
    /// Re-estimation of the residual covariance is not implemented; must stay false.
    pub update_covariance: bool,
}

impl Default for TvTrainConfig {
    fn default() -> Self {
        TvTrainConfig {
            rank: 100,
            em_iters: 5,
            seed: 0,
            init_scale: 1e-3,
            update_covariance: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TvTrainingLog {
    /// Mean per-utterance `-½ log|L| + ½ bᵀL⁻¹b` (marginal log-likelihood up to
    /// a model-independent constant) for the model entering each iteration and the returned one.
    pub objective: Vec<f64>,
    /// Occupancy-weighted, variance-normalized squared error between each
    /// utterance's mean offset and `T·w`, tracked the same way.
    pub reconstruction_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalVariabilityModel {
    c: usize,
    f: usize,
    /// `CF x M`.
    t: DMatrix<f64>,
    ubm_means: Vec<f64>,
    inv_var: Vec<f64>,
    /// `T_cᵀ Σ_c⁻¹ T_c` per component.
    gram: Vec<DMatrix<f64>>,
}

impl TotalVariabilityModel {
    pub fn new(ubm: &DiagonalGmm, t: DMatrix<f64>) -> Result<Self> {
        let (c, f) = (ubm.n_components(), ubm.dim());
        if t.nrows() != c * f {
            return Err(Error::DimensionMismatch {
                expected: c * f,
                got: t.nrows(),
            });
        }
        if t.ncols() == 0 {
            return Err(Error::Config("i-vector dimension must be positive".into()));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("total variability matrix"));
        }
        let inv_var: Vec<f64> = ubm.variances().iter().map(|v| 1.0 / v).collect();
        let gram = component_grams(&t, &inv_var, c, f);
        Ok(TotalVariabilityModel {
            c,
            f,
            t,
            ubm_means: ubm.supervector().to_vec(),
            inv_var,
            gram,
        })
    }

    pub fn rank(&self) -> usize {
        self.t.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn n_components(&self) -> usize {
        self.c
    }

    pub fn feature_dim(&self) -> usize {
        self.f
    }

    fn check_stats(&self, stats: &SufficientStats) -> Result<()> {
        if stats.n.len() != self.c || stats.f.len() != self.c * self.f {
            return Err(Error::DimensionMismatch {
                expected: self.c * self.f,
                got: stats.f.len(),
            });
        }
        if !stats.is_finite() {
            return Err(Error::NonFinite("sufficient statistics"));
        }
        Ok(())
    }

    /// Posterior precision `L = I + Σ_c N_c T_cᵀΣ_c⁻¹T_c`.
    pub fn precision(&self, stats: &SufficientStats) -> Result<DMatrix<f64>> {
        self.check_stats(stats)?;
        let m = self.rank();
        let mut l = DMatrix::identity(m, m);
        for (nc, g) in stats.n.iter().zip(&self.gram) {
            if *nc > 0.0 {
                l.zip_apply(g, |a, b| *a += nc * b);
            }
        }
        Ok(l)
    }

    /// `Tᵀ Σ⁻¹ F̃`.
    fn projected_stats(&self, stats: &SufficientStats) -> DVector<f64> {
        let weighted = DVector::from_iterator(
            self.c * self.f,
            stats.f.iter().zip(&self.inv_var).map(|(a, b)| a * b),
        );
        self.t.tr_mul(&weighted)
    }

    fn posterior(&self, stats: &SufficientStats) -> Result<Posterior> {
        let l = self.precision(stats)?;
        let b = self.projected_stats(stats);
        let chol = cholesky(l, "i-vector posterior precision")?;
        let w = chol.solve(&b);
        let objective = -0.5 * log_det_chol(&chol) + 0.5 * b.dot(&w);
        Ok(Posterior { chol, w, objective })
    }

    pub fn reconstruct_supervector(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.rank() {
            return Err(Error::DimensionMismatch {
                expected: self.rank(),
                got: w.len(),
            });
        }
        let tw = &self.t * DVector::from_column_slice(w);
        Ok(self.ubm_means.iter().zip(tw.iter()).map(|(m, d)| m + d).collect())
    }

    fn reconstruction_error(&self, stats: &SufficientStats, w: &DVector<f64>) -> f64 {
        let tw = &self.t * w;
        let mut err = 0.0;
        for k in 0..self.c {
            let nk = stats.n[k];
            if nk <= 0.0 {
                continue;
            }
            for i in 0..self.f {
                let j = k * self.f + i;
                err += nk * (stats.f[j] / nk - tw[j]).powi(2) * self.inv_var[j];
            }
        }
        err
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(TV_MAGIC);
        w.u64(self.c as u64).u64(self.f as u64).u64(self.rank() as u64);
        for r in 0..self.t.nrows() {
            for col in 0..self.t.ncols() {
                w.f64(self.t[(r, col)]);
            }
        }
        w.write_to(path)
    }

    /// Loads `T` and binds it to `ubm`, which must match the stored `C` and `F`.
    pub fn load(path: &Path, ubm: &DiagonalGmm) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut r = BinReader::new(&bytes, TV_MAGIC, "total variability file")?;
        let c = r.usize()?;
        let f = r.usize()?;
        let m = r.usize()?;
        if c != ubm.n_components() || f != ubm.dim() {
            return Err(Error::format(
                "total variability file",
                format!(
                    "model is for a {c}x{f} UBM but the UBM has {} components of dimension {}",
                    ubm.n_components(),
                    ubm.dim()
                ),
            ));
        }
        let values = r.f64s(c * f * m)?;
        r.finish()?;
        TotalVariabilityModel::new(ubm, DMatrix::from_row_slice(c * f, m, &values))
    }
}

struct Posterior {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    w: DVector<f64>,
    objective: f64,
}

fn component_grams(t: &DMatrix<f64>, inv_var: &[f64], c: usize, f: usize) -> Vec<DMatrix<f64>> {
    (0..c)
        .into_par_iter()
        .map(|k| {
            let tc = t.rows(k * f, f);
            let mut scaled = tc.clone_owned();
            for i in 0..f {
                scaled.row_mut(i).scale_mut(inv_var[k * f + i]);
            }
            tc.tr_mul(&scaled)
        })
        .collect()
}

/// Posterior mean of the latent factor, `w = L⁻¹ Tᵀ Σ⁻¹ F̃`.
pub fn extract_ivector(id: &str, stats: &SufficientStats, tv: &TotalVariabilityModel) -> Result<IVector> {
    tv.check_stats(stats)?;
    if stats.n.iter().all(|n| *n <= 0.0) {
        log::warn!("utterance {id} has no occupancy; i-vector set to the prior mean");
        return IVector::new(id, Stage::Raw, vec![0.0; tv.rank()]);
    }
    let post = tv.posterior(stats)?;
    IVector::new(id, Stage::Raw, post.w.iter().copied().collect())
}

/// EM estimation of `T` from per-utterance statistics against `ubm`.
pub fn train_total_variability(
    stats: &[SufficientStats],
    ubm: &DiagonalGmm,
    cfg: &TvTrainConfig,
) -> Result<(TotalVariabilityModel, TvTrainingLog)> {
    let (c, f) = (ubm.n_components(), ubm.dim());
    let m = cfg.rank;
    if cfg.update_covariance {
        return Err(Error::Config("covariance re-estimation is not supported".into()));
    }
    if m == 0 || m > c * f {
        return Err(Error::Config(format!("i-vector dimension {m} must be in 1..={}", c * f)));
    }
    if stats.is_empty() {
        return Err(Error::InsufficientData("no utterance statistics".into()));
    }
    if stats.len() < m {
        log::warn!("{} utterances for an i-vector dimension of {m}", stats.len());
    }

    let mean_sd = ubm.variances().iter().map(|v| v.sqrt()).sum::<f64>() / (c * f) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init: Vec<f64> = (0..c * f * m)
        .map(|_| cfg.init_scale * mean_sd * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    let mut tv = TotalVariabilityModel::new(ubm, DMatrix::from_row_slice(c * f, m, &init))?;
    for s in stats {
        tv.check_stats(s)?;
    }

    let mut log = TvTrainingLog::default();
    for iter in 0..cfg.em_iters {
        let mut acc_a = vec![DMatrix::<f64>::zeros(m, m); c];
        let mut acc_c = DMatrix::<f64>::zeros(c * f, m);
        let mut objective = 0.0;
        let mut recon = 0.0;
        for batch in stats.chunks(BATCH) {
            let posts = batch
                .par_iter()
                .map(|s| {
                    let p = tv.posterior(s)?;
                    let mut second = p.chol.inverse();
                    second.ger(1.0, &p.w, &p.w, 1.0);
                    let err = tv.reconstruction_error(s, &p.w);
                    Ok((p.w, second, p.objective, err))
                })
                .collect::<Result<Vec<_>>>()?;
            for (_, _, obj, err) in &posts {
                objective += obj;
                recon += err;
            }
            acc_a.par_iter_mut().enumerate().for_each(|(k, a)| {
                for (s, (_, second, _, _)) in batch.iter().zip(&posts) {
                    if s.n[k] > 0.0 {
                        let nk = s.n[k];
                        a.zip_apply(second, |x, y| *x += nk * y);
                    }
                }
            });
            for (s, (w, _, _, _)) in batch.iter().zip(&posts) {
                let fvec = DVector::from_column_slice(&s.f);
                acc_c.ger(1.0, &fvec, w, 1.0);
            }
        }
        let n_utt = stats.len() as f64;
        let total_occ: f64 = stats.iter().map(|s| s.n.iter().sum::<f64>()).sum::<f64>().max(f64::MIN_POSITIVE);
        log.objective.push(objective / n_utt);
        log.reconstruction_error.push(recon / total_occ);
        log::debug!("tv iter {iter}: objective {:.6}", objective / n_utt);

        let blocks = (0..c)
            .into_par_iter()
            .map(|k| {
                let ak = acc_a[k].clone() + DMatrix::identity(m, m) * 1e-10;
                let chol = cholesky(ak, "total variability accumulator")?;
                let ck = acc_c.rows(k * f, f).transpose();
                Ok(chol.solve(&ck).transpose())
            })
            .collect::<Result<Vec<DMatrix<f64>>>>()?;
        let mut t = DMatrix::zeros(c * f, m);
        for (k, b) in blocks.into_iter().enumerate() {
            t.rows_mut(k * f, f).copy_from(&b);
        }
        tv = TotalVariabilityModel::new(ubm, t)?;
    }

    let mut objective = 0.0;
    let mut recon = 0.0;
    for s in stats {
        let p = tv.posterior(s)?;
        objective += p.objective;
        recon += tv.reconstruction_error(s, &p.w);
    }
    let total_occ: f64 = stats.iter().map(|s| s.n.iter().sum::<f64>()).sum::<f64>().max(f64::MIN_POSITIVE);
    log.objective.push(objective / stats.len() as f64);
    log.reconstruction_error.push(recon / total_occ);
    Ok((tv, log))
}
