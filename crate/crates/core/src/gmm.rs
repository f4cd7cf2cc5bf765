//! Diagonal-covariance Gaussian mixture universal background model.
//!
//! Training is seeded k-means++ followed by EM with per-dimension variance
//! flooring. Baum-Welch statistics are centered on the component means.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dsp::FeatureMatrix;
use crate::error::{Error, Result};
use crate::persist::{read_file, BinReader, BinWriter};

pub const GMM_MAGIC: &[u8; 4] = b"VQGM";

/// Frames per accumulation block. Blocks are reduced in a fixed order so
/// results do not depend on the thread count.
const BLOCK: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGmm {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    log_weights: Vec<f64>,
    inv_var: Vec<f64>,
    log_norm: Vec<f64>,
}

impl DiagonalGmm {
    /// `means` and `variances` are row-major `C x F`.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>, dim: usize) -> Result<Self> {
        let c = weights.len();
        if c == 0 || dim == 0 {
            return Err(Error::Config("a GMM needs at least one component and dimension".into()));
        }
        for (name, v) in [("means", &means), ("variances", &variances)] {
            if v.len() != c * dim {
                return Err(Error::DimensionMismatch {
                    expected: c * dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(if name == "means" { "GMM means" } else { "GMM variances" }));
            }
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("GMM weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Config(format!("GMM weights sum to {total}, not 1")));
        }
        if variances.iter().any(|v| *v <= 0.0) {
            return Err(Error::Config("GMM variances must be positive".into()));
        }
        let inv_var: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
        let log_norm = variances
            .chunks_exact(dim)
            .map(|var| -0.5 * (dim as f64 * (2.0 * PI).ln() + var.iter().map(|v| v.ln()).sum::<f64>()))
            .collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(DiagonalGmm {
            dim,
            weights,
            means,
            variances,
            log_weights,
            inv_var,
            log_norm,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.dim..(c + 1) * self.dim]
    }

    pub fn variance(&self, c: usize) -> &[f64] {
        &self.variances[c * self.dim..(c + 1) * self.dim]
    }

    /// Concatenated component means (`C·F`).
    pub fn supervector(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: n,
            });
        }
        Ok(())
    }

    /// `log π_c + log N(x; m_c, Σ_c)` for every component; returns their log-sum-exp.
    fn joint_log_densities(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for (c, o) in out.iter_mut().enumerate() {
            let m = &self.means[c * self.dim..(c + 1) * self.dim];
            let iv = &self.inv_var[c * self.dim..(c + 1) * self.dim];
            let mut q = 0.0;
            for i in 0..self.dim {
                let d = x[i] - m[i];
                q += d * d * iv[i];
            }
            *o = self.log_weights[c] + self.log_norm[c] - 0.5 * q;
            max = max.max(*o);
        }
        let sum: f64 = out.iter().map(|v| (v - max).exp()).sum();
        max + sum.ln()
    }

    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let mut buf = vec![0.0; self.n_components()];
        Ok(self.joint_log_densities(x, &mut buf))
    }

    /// Component responsibilities for one frame, computed in the log domain.
    pub fn frame_posteriors(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let mut post = vec![0.0; self.n_components()];
        let total = self.joint_log_densities(x, &mut post);
        post.iter_mut().for_each(|p| *p = (*p - total).exp());
        Ok(post)
    }

    /// Zeroth- and centered first-order Baum-Welch statistics of an utterance.
    pub fn accumulate_stats(&self, feat: &FeatureMatrix) -> Result<SufficientStats> {
        self.check_dim(feat.dim())?;
        let (c, f) = (self.n_components(), self.dim);
        let mut stats = SufficientStats::zeros(c, f);
        let mut post = vec![0.0; c];
        for x in feat.rows() {
            let total = self.joint_log_densities(x, &mut post);
            for k in 0..c {
                let g = (post[k] - total).exp();
                if g == 0.0 {
                    continue;
                }
                stats.n[k] += g;
                let m = self.mean(k);
                let acc = &mut stats.f[k * f..(k + 1) * f];
                for i in 0..f {
                    acc[i] += g * (x[i] - m[i]);
                }
            }
        }
        stats.frames = feat.n_frames();
        Ok(stats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(GMM_MAGIC);
        w.u64(self.n_components() as u64)
            .u64(self.dim as u64)
            .f64s(&self.weights)
            .f64s(&self.means)
            .f64s(&self.variances);
        w.write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut r = BinReader::new(&bytes, GMM_MAGIC, "GMM file")?;
        let c = r.usize()?;
        let f = r.usize()?;
        let weights = r.f64s(c)?;
        let means = r.f64s(c * f)?;
        let variances = r.f64s(c * f)?;
        r.finish()?;
        DiagonalGmm::new(weights, means, variances, f)
    }
}

/// Per-component soft counts `N_c` and first-order statistics centered on
/// the UBM means, `F̃_c = Σ_t γ_t(c) (x_t − m_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub n: Vec<f64>,
    /// Row-major `C x F`.
    pub f: Vec<f64>,
    pub frames: usize,
}

impl SufficientStats {
    pub fn zeros(components: usize, dim: usize) -> Self {
        SufficientStats {
            n: vec![0.0; components],
            f: vec![0.0; components * dim],
            frames: 0,
        }
    }

    pub fn n_components(&self) -> usize {
        self.n.len()
    }

    pub fn dim(&self) -> usize {
        self.f.len() / self.n.len().max(1)
    }

    pub fn merge(&mut self, other: &SufficientStats) -> Result<()> {
        if other.n.len() != self.n.len() || other.f.len() != self.f.len() {
            return Err(Error::DimensionMismatch {
                expected: self.f.len(),
                got: other.f.len(),
            });
        }
        self.n.iter_mut().zip(&other.n).for_each(|(a, b)| *a += b);
        self.f.iter_mut().zip(&other.f).for_each(|(a, b)| *a += b);
        self.frames += other.frames;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.n.iter().chain(&self.f).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UbmTrainConfig {
    pub components: usize,
    pub em_iters: usize,
    pub seed: u64,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub var_floor_ratio: f64,
    /// Stop when the relative gain in average log-likelihood falls below this.
    pub rel_tol: f64,
    pub kmeans_iters: usize,
    /// k-means++ runs on at most this many evenly spaced frames.
    pub kmeans_max_points: usize,
    /// Use every `frame_stride`-th frame for training.
    pub frame_stride: usize,
}

impl Default for UbmTrainConfig {
    fn default() -> Self {
        UbmTrainConfig {
            components: 256,
            em_iters: 20,
            seed: 0,
            var_floor_ratio: 1e-4,
            rel_tol: 1e-6,
            kmeans_iters: 10,
            kmeans_max_points: 20_000,
            frame_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UbmTrainingLog {
    /// Average per-frame log-likelihood of the model entering each EM iteration,
    /// followed by that of the returned model.
    pub avg_log_likelihood: Vec<f64>,
    pub frames: usize,
    pub stopped_early: bool,
}

struct Accum {
    n: Vec<f64>,
    sx: Vec<f64>,
    sxx: Vec<f64>,
    loglik: f64,
}

fn e_step(gmm: &DiagonalGmm, frames: &[&[f64]]) -> Accum {
    let (c, f) = (gmm.n_components(), gmm.dim());
    let partials: Vec<Accum> = frames
        .par_chunks(BLOCK)
        .map(|block| {
            let mut acc = Accum {
                n: vec![0.0; c],
                sx: vec![0.0; c * f],
                sxx: vec![0.0; c * f],
                loglik: 0.0,
            };
            let mut post = vec![0.0; c];
            for x in block {
                let total = gmm.joint_log_densities(x, &mut post);
                acc.loglik += total;
                for k in 0..c {
                    let g = (post[k] - total).exp();
                    if g == 0.0 {
                        continue;
                    }
                    acc.n[k] += g;
                    let sx = &mut acc.sx[k * f..(k + 1) * f];
                    let sxx = &mut acc.sxx[k * f..(k + 1) * f];
                    for i in 0..f {
                        let gx = g * x[i];
                        sx[i] += gx;
                        sxx[i] += gx * x[i];
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = Accum {
        n: vec![0.0; c],
        sx: vec![0.0; c * f],
        sxx: vec![0.0; c * f],
        loglik: 0.0,
    };
    for p in partials {
        total.loglik += p.loglik;
        total.n.iter_mut().zip(&p.n).for_each(|(a, b)| *a += b);
        total.sx.iter_mut().zip(&p.sx).for_each(|(a, b)| *a += b);
        total.sxx.iter_mut().zip(&p.sxx).for_each(|(a, b)| *a += b);
    }
    total
}

fn m_step(prev: &DiagonalGmm, acc: &Accum, n_frames: usize, floor: &[f64]) -> Result<DiagonalGmm> {
    let (c, f) = (prev.n_components(), prev.dim());
    let mut weights = Vec::with_capacity(c);
    let mut means = Vec::with_capacity(c * f);
    let mut variances = Vec::with_capacity(c * f);
    for k in 0..c {
        let nk = acc.n[k];
        weights.push(nk / n_frames as f64);
        if nk < 1e-10 {
            // starved component keeps its parameters; its weight is ~0
            means.extend_from_slice(prev.mean(k));
            variances.extend_from_slice(prev.variance(k));
            continue;
        }
        for i in 0..f {
            let m = acc.sx[k * f + i] / nk;
            let v = acc.sxx[k * f + i] / nk - m * m;
            means.push(m);
            variances.push(v.max(floor[i]));
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    DiagonalGmm::new(weights, means, variances, f)
}

fn global_moments(frames: &[&[f64]], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = frames.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in frames {
        mean.iter_mut().zip(x.iter()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for x in frames {
        for i in 0..dim {
            var[i] += (x[i] - mean[i]).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means++ followed by Lloyd iterations; returns an initial GMM.
fn kmeans_init(frames: &[&[f64]], cfg: &UbmTrainConfig, floor: &[f64], global_var: &[f64]) -> Result<DiagonalGmm> {
    let dim = global_var.len();
    let k = cfg.components;
    let step = frames.len().div_ceil(cfg.kmeans_max_points.max(k)).max(1);
    let points: Vec<&[f64]> = frames.iter().step_by(step).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())].to_vec());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[next].to_vec();
        for (d, p) in d2.iter_mut().zip(&points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }

    let mut assign = vec![0usize; points.len()];
    for _ in 0..cfg.kmeans_iters.max(1) {
        for (a, p) in assign.iter_mut().zip(&points) {
            let mut best = (f64::INFINITY, 0);
            for (j, c) in centers.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.0 {
                    best = (d, j);
                }
            }
            *a = best.1;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (a, p) in assign.iter().zip(&points) {
            counts[*a] += 1;
            sums[*a].iter_mut().zip(p.iter()).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }

    let mut counts = vec![0usize; k];
    let mut sq = vec![vec![0.0; dim]; k];
    for (a, p) in assign.iter().zip(&points) {
        counts[*a] += 1;
        for i in 0..dim {
            sq[*a][i] += (p[i] - centers[*a][i]).powi(2);
        }
    }
    let total = (points.len() + k) as f64;
    let weights = counts.iter().map(|&n| (n + 1) as f64 / total).collect();
    let mut variances = Vec::with_capacity(k * dim);
    for j in 0..k {
        for i in 0..dim {
            let v = if counts[j] >= 2 { sq[j][i] / counts[j] as f64 } else { global_var[i] };
            variances.push(v.max(floor[i]));
        }
    }
    DiagonalGmm::new(weights, centers.concat(), variances, dim)
}

/// Trains a UBM on the pooled frames of `features`.
pub fn train_ubm(features: &[&FeatureMatrix], cfg: &UbmTrainConfig) -> Result<(DiagonalGmm, UbmTrainingLog)> {
    if cfg.components == 0 || cfg.em_iters == 0 || cfg.frame_stride == 0 {
        return Err(Error::Config("components, em_iters and frame_stride must be positive".into()));
    }
    let dim = features
        .first()
        .map(|f| f.dim())
        .ok_or_else(|| Error::InsufficientData("no training features".into()))?;
    let mut frames: Vec<&[f64]> = Vec::new();
    for feat in features {
        if feat.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: feat.dim(),
            });
        }
        frames.extend(feat.rows());
    }
    let frames: Vec<&[f64]> = frames.into_iter().step_by(cfg.frame_stride).collect();
    if frames.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("UBM training features"));
    }
    if frames.len() < 10 * cfg.components {
        return Err(Error::InsufficientData(format!(
            "{} frames for {} components (need at least {})",
            frames.len(),
            cfg.components,
            10 * cfg.components
        )));
    }

    let (_, global_var) = global_moments(&frames, dim);
    let floor: Vec<f64> = global_var
        .iter()
        .map(|v| (v * cfg.var_floor_ratio).max(f64::MIN_POSITIVE))
        .collect();
    let mut gmm = kmeans_init(&frames, cfg, &floor, &global_var)?;
    let mut log = UbmTrainingLog {
        frames: frames.len(),
        ..Default::default()
    };
    let n = frames.len() as f64;
    for iter in 0..cfg.em_iters {
        let acc = e_step(&gmm, &frames);
        let avg = acc.loglik / n;
        log::debug!("ubm iter {iter}: avg log-likelihood {avg:.6}");
        if let Some(&prev) = log.avg_log_likelihood.last() {
            if (avg - prev) / prev.abs().max(1e-300) < cfg.rel_tol {
                log.avg_log_likelihood.push(avg);
                log.stopped_early = true;
                gmm = m_step(&gmm, &acc, frames.len(), &floor)?;
                break;
            }
        }
        log.avg_log_likelihood.push(avg);
        gmm = m_step(&gmm, &acc, frames.len(), &floor)?;
    }
    let final_ll = e_step(&gmm, &frames).loglik / n;
    log.avg_log_likelihood.push(final_ll);
    Ok((gmm, log))
}
