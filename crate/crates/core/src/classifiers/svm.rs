//! Soft-margin linear SVM trained by SMO, combined one-vs-one or one-vs-rest.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;

use super::argmax_label;
use crate::error::{Error, Result};
use crate::persist::{read_file, BinReader, BinWriter};

pub const SVM_MAGIC: &[u8; 4] = b"VQSV";

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Multiclass {
    #[default]
    OneVsOne,
    OneVsRest,
}

impl Multiclass {
    pub fn as_str(self) -> &'static str {
        match self {
            Multiclass::OneVsOne => "ovo",
            Multiclass::OneVsRest => "ovr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ovo" => Ok(Multiclass::OneVsOne),
            "ovr" => Ok(Multiclass::OneVsRest),
            other => Err(Error::Config(format!("unknown multiclass strategy {other:?} (expected ovo or ovr)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmConfig {
    pub complexity: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub multiclass: Multiclass,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            complexity: 1.0,
            tolerance: 1e-6,
            max_iter: 10_000,
            multiclass: Multiclass::OneVsOne,
        }
    }
}

/// One separating hyperplane `w·x + b`; positive side is `positive`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    pub positive: usize,
    /// `None` for a one-vs-rest machine.
    pub negative: Option<usize>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Hyperplane {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvmModel {
    labels: Vec<String>,
    dim: usize,
    complexity: f64,
    multiclass: Multiclass,
    machines: Vec<Hyperplane>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BinarySolution {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alphas: Vec<f64>,
    /// Dual objective `½αᵀQα − Σα` after each SMO step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// SMO with second-order working-set selection on the linear-kernel dual.
/// `y` holds ±1.
pub fn train_binary(x: &[&[f64]], y: &[f64], cfg: &SvmConfig) -> Result<BinarySolution> {
    let n = x.len();
    let c = cfg.complexity;
    if n == 0 || y.len() != n {
        return Err(Error::InsufficientData("binary SVM needs labelled samples".into()));
    }
    if !(c > 0.0) {
        return Err(Error::Config("SVM complexity must be positive".into()));
    }
    let dim = x[0].len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| y[i] * y[j] * dot(x[i], x[j])).collect())
        .collect();

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut objective = Vec::new();
    let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            gmin = gmin.min(-y[t] * grad[t]);
            if i == usize::MAX {
                continue;
            }
            let b = gmax + y[t] * grad[t];
            if b > 0.0 {
                let a = (q[i][i] + q[t][t] - 2.0 * y[i] * y[t] * q[i][t]).max(TAU);
                let gain = -(b * b) / a;
                if gain < best {
                    best = gain;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < cfg.tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let quad = (q[i][i] + q[j][j] - 2.0 * y[i] * y[j] * q[i][j]).max(TAU);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 && alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = diff;
            } else if diff <= 0.0 && alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 && alpha[i] > c {
                alpha[i] = c;
                alpha[j] = c - diff;
            } else if diff <= 0.0 && alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c && alpha[i] > c {
                alpha[i] = c;
                alpha[j] = sum - c;
            } else if sum <= c && alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c && alpha[j] > c {
                alpha[j] = c;
                alpha[i] = sum - c;
            } else if sum <= c && alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q[t][i] * di + q[t][j] * dj;
        }
        objective.push(0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>());
    }
    if !converged {
        log::warn!("SMO stopped after {} iterations without reaching tolerance", cfg.max_iter);
    }

    // bias from free vectors, else midpoint of the feasible interval
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += yg;
            free_n += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if free_n > 0 { free_sum / free_n as f64 } else { 0.5 * (ub + lb) };
    let mut weights = vec![0.0; dim];
    for t in 0..n {
        if alpha[t] != 0.0 {
            for (w, v) in weights.iter_mut().zip(x[t]) {
                *w += alpha[t] * y[t] * v;
            }
        }
    }
    Ok(BinarySolution {
        weights,
        bias: -rho,
        alphas: alpha,
        objective,
        iterations,
        converged,
    })
}

impl LinearSvmModel {
    pub fn train(features: &[&[f64]], labels: &[&str], cfg: &SvmConfig) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                got: labels.len(),
            });
        }
        let dim = features
            .first()
            .map(|f| f.len())
            .ok_or_else(|| Error::InsufficientData("no SVM training samples".into()))?;
        for f in features {
            if f.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: f.len() });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("SVM features"));
            }
        }
        let label_set: Vec<String> = labels.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>().into_iter().collect();
        if label_set.len() < 2 {
            return Err(Error::InsufficientData("SVM needs at least two classes".into()));
        }
        let class_of: Vec<usize> = labels.iter().map(|l| label_set.binary_search_by(|s| s.as_str().cmp(l)).unwrap()).collect();
        let k = label_set.len();
        let jobs: Vec<(usize, Option<usize>)> = match cfg.multiclass {
            Multiclass::OneVsOne => (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, Some(b)))).collect(),
            Multiclass::OneVsRest => (0..k).map(|a| (a, None)).collect(),
        };
        let machines = jobs
            .par_iter()
            .map(|&(pos, neg)| {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for (f, &c) in features.iter().zip(&class_of) {
                    if c == pos {
                        xs.push(*f);
                        ys.push(1.0);
                    } else if neg.map_or(true, |n| n == c) {
                        xs.push(*f);
                        ys.push(-1.0);
                    }
                }
                let sol = train_binary(&xs, &ys, cfg)?;
                Ok(Hyperplane {
                    positive: pos,
                    negative: neg,
                    weights: sol.weights,
                    bias: sol.bias,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LinearSvmModel {
            labels: label_set,
            dim,
            complexity: cfg.complexity,
            multiclass: cfg.multiclass,
            machines,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn machines(&self) -> &[Hyperplane] {
        &self.machines
    }

    pub fn multiclass(&self) -> Multiclass {
        self.multiclass
    }

    /// Per-class votes (one-vs-one) and summed margins; for one-vs-rest the
    /// vote column is zero and the margin is the machine's decision value.
    pub fn class_scores(&self, x: &[f64]) -> Result<Vec<(String, usize, f64)>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut votes = vec![0usize; self.labels.len()];
        let mut margins = vec![0.0; self.labels.len()];
        for m in &self.machines {
            let d = m.decision(x);
            margins[m.positive] += d;
            if let Some(neg) = m.negative {
                margins[neg] -= d;
                votes[if d > 0.0 { m.positive } else { neg }] += 1;
            }
        }
        Ok(self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), votes[i], margins[i]))
            .collect())
    }

    /// Most votes, then largest summed margin, then first label.
    pub fn predict(&self, x: &[f64]) -> Result<String> {
        let scores = self.class_scores(x)?;
        let best_votes = scores.iter().map(|s| s.1).max().unwrap_or(0);
        let tied: Vec<(String, f64)> = scores
            .into_iter()
            .filter(|s| s.1 == best_votes)
            .map(|(l, _, m)| (l, m))
            .collect();
        Ok(argmax_label(&tied).expect("at least two classes").to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(SVM_MAGIC);
        w.u64(self.dim as u64)
            .u64(self.labels.len() as u64)
            .f64(self.complexity)
            .str(self.multiclass.as_str());
        for l in &self.labels {
            w.str(l);
        }
        w.u64(self.machines.len() as u64);
        for m in &self.machines {
            w.u64(m.positive as u64)
                .u64(m.negative.map_or(u64::MAX, |n| n as u64))
                .f64s(&m.weights)
                .f64(m.bias);
        }
        w.write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut r = BinReader::new(&bytes, SVM_MAGIC, "SVM file")?;
        let dim = r.usize()?;
        let k = r.usize()?;
        let complexity = r.f64()?;
        let multiclass = Multiclass::parse(&r.str()?).map_err(|e| Error::format("SVM file", e.to_string()))?;
        let labels = (0..k).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let n = r.usize()?;
        let mut machines = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let positive = r.usize()?;
            let neg = r.u64()?;
            let weights = r.f64s(dim)?;
            let bias = r.f64()?;
            let negative = (neg != u64::MAX).then_some(neg as usize);
            if positive >= k || negative.is_some_and(|v| v >= k) {
                return Err(Error::format("SVM file", "class index out of range"));
            }
            machines.push(Hyperplane {
                positive,
                negative,
                weights,
                bias,
            });
        }
        r.finish()?;
        Ok(LinearSvmModel {
            labels,
            dim,
            complexity,
            multiclass,
            machines,
        })
    }
}
