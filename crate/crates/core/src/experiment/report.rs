//! Accuracy reports: per-actor cells, unweighted averages, confusion matrices.

use std::fmt::Write as _;

use crate::corpus::Quality;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Evaluation {
    Intra,
    Inter,
}

impl Evaluation {
    pub fn as_str(self) -> &'static str {
        match self {
            Evaluation::Intra => "intra-speaker",
            Evaluation::Inter => "inter-speaker",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum System {
    IVector,
    Baseline,
}

impl System {
    pub fn as_str(self) -> &'static str {
        match self {
            System::IVector => "ivector",
            System::Baseline => "baseline",
        }
    }
}

/// One scored test segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub actor: String,
    pub classifier: String,
    pub length_s: f64,
    pub segment: String,
    pub truth: String,
    pub predicted: String,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.truth == self.predicted
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub evaluation: Evaluation,
    pub system: System,
    pub classifiers: Vec<String>,
    /// Test lengths in seconds, longest first.
    pub lengths_s: Vec<f64>,
    pub actors: Vec<String>,
    /// Labels indexing the confusion matrices: qualities for intra-speaker
    /// reports, `speaker:quality` classes for inter-speaker reports.
    pub labels: Vec<String>,
    pub predictions: Vec<Prediction>,
    pub config_hash: String,
    pub seed: u64,
}

fn fmt_len(l: f64) -> String {
    format!("{l}s")
}

fn quality_of(label: &str) -> &str {
    label.rsplit(':').next().unwrap_or(label)
}

impl EvaluationReport {
    /// Assembles a report, sorting predictions by actor, length, classifier
    /// and segment so the result does not depend on scoring order.
    pub fn new(
        evaluation: Evaluation,
        system: System,
        classifiers: Vec<String>,
        mut lengths_s: Vec<f64>,
        mut predictions: Vec<Prediction>,
        config_hash: String,
        seed: u64,
    ) -> Result<Self> {
        lengths_s.sort_by(|a, b| b.total_cmp(a));
        let mut actors: Vec<String> = predictions.iter().map(|p| p.actor.clone()).collect();
        actors.sort();
        actors.dedup();
        predictions.sort_by(|a, b| {
            (&a.actor, b.length_s, &a.classifier, &a.segment)
                .partial_cmp(&(&b.actor, a.length_s, &b.classifier, &b.segment))
                .expect("finite lengths")
        });
        let labels = match evaluation {
            Evaluation::Intra => Quality::ALL.iter().map(|q| q.as_str().to_string()).collect(),
            Evaluation::Inter => {
                let mut l: Vec<String> = actors
                    .iter()
                    .flat_map(|a| Quality::ALL.iter().map(move |q| format!("{a}:{q}")))
                    .collect();
                l.sort();
                l
            }
        };
        for p in &predictions {
            if !classifiers.contains(&p.classifier) || !lengths_s.contains(&p.length_s) {
                return Err(Error::Config(format!(
                    "prediction for {} uses an undeclared classifier or length",
                    p.segment
                )));
            }
        }
        Ok(EvaluationReport {
            evaluation,
            system,
            classifiers,
            lengths_s,
            actors,
            labels,
            predictions,
            config_hash,
            seed,
        })
    }

    fn cell(&self, actor: Option<&str>, classifier: &str, length_s: f64) -> impl Iterator<Item = &Prediction> {
        let actor = actor.map(str::to_string);
        let classifier = classifier.to_string();
        self.predictions.iter().filter(move |p| {
            p.classifier == classifier && p.length_s == length_s && actor.as_ref().map_or(true, |a| &p.actor == a)
        })
    }

    /// `(correct, total)` for one actor.
    pub fn counts(&self, actor: &str, classifier: &str, length_s: f64) -> (usize, usize) {
        self.cell(Some(actor), classifier, length_s)
            .fold((0, 0), |(c, n), p| (c + p.correct() as usize, n + 1))
    }

    /// Percent correct for one actor, `None` for an empty cell.
    pub fn accuracy(&self, actor: &str, classifier: &str, length_s: f64) -> Option<f64> {
        let (c, n) = self.counts(actor, classifier, length_s);
        (n > 0).then(|| 100.0 * c as f64 / n as f64)
    }

    /// Unweighted mean of the actor accuracies.
    pub fn average(&self, classifier: &str, length_s: f64) -> Option<f64> {
        let accs: Vec<f64> = self
            .actors
            .iter()
            .filter_map(|a| self.accuracy(a, classifier, length_s))
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }

    /// Counts indexed `[truth][predicted]` over [`Self::labels`].
    pub fn confusion(&self, classifier: &str, length_s: f64) -> Vec<Vec<usize>> {
        let k = self.labels.len();
        let mut m = vec![vec![0usize; k]; k];
        let key = |l: &str| match self.evaluation {
            Evaluation::Intra => quality_of(l).to_string(),
            Evaluation::Inter => l.to_string(),
        };
        for p in self.cell(None, classifier, length_s) {
            let t = self.labels.iter().position(|l| *l == key(&p.truth));
            let q = self.labels.iter().position(|l| *l == key(&p.predicted));
            if let (Some(t), Some(q)) = (t, q) {
                m[t][q] += 1;
            }
        }
        m
    }

    /// Table with one row per actor plus the average row.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} accuracy (%), {} system",
            self.evaluation.as_str(),
            self.system.as_str()
        );
        let _ = writeln!(out, "config_hash {}  seed {}", self.config_hash, self.seed);
        let columns: Vec<(String, f64)> = self
            .classifiers
            .iter()
            .flat_map(|c| self.lengths_s.iter().map(move |l| (c.clone(), *l)))
            .collect();
        let _ = write!(out, "{:<12}", "actor");
        for (c, l) in &columns {
            let _ = write!(out, "{:>10}", format!("{c} {}", fmt_len(*l)));
        }
        out.push('\n');
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |a| format!("{a:.1}"));
        for a in &self.actors {
            let _ = write!(out, "{a:<12}");
            for (c, l) in &columns {
                let _ = write!(out, "{:>10}", cell(self.accuracy(a, c, *l)));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<12}", "Average");
        for (c, l) in &columns {
            let _ = write!(out, "{:>10}", cell(self.average(c, *l)));
        }
        out.push('\n');
        out
    }

    pub const TSV_HEADER: &'static str = "evaluation\tsystem\tactor\tclassifier\tlength_s\tcorrect\ttotal\taccuracy_pct";

    /// Machine-readable cells; the `Average` row carries no counts.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# config_hash={}\tseed={}\n{}\n", self.config_hash, self.seed, Self::TSV_HEADER);
        let prefix = format!("{}\t{}", self.evaluation.as_str(), self.system.as_str());
        for c in &self.classifiers {
            for l in &self.lengths_s {
                for a in &self.actors {
                    let (k, n) = self.counts(a, c, *l);
                    let acc = self.accuracy(a, c, *l).map_or("NA".into(), |v| format!("{v:.6}"));
                    let _ = writeln!(out, "{prefix}\t{a}\t{c}\t{l}\t{k}\t{n}\t{acc}");
                }
                let avg = self.average(c, *l).map_or("NA".into(), |v| format!("{v:.6}"));
                let _ = writeln!(out, "{prefix}\tAverage\t{c}\t{l}\t\t\t{avg}");
            }
        }
        out
    }

    pub fn confusion_tsv(&self, classifier: &str, length_s: f64) -> String {
        let m = self.confusion(classifier, length_s);
        let mut out = format!("# config_hash={}\ttruth \\ predicted\n", self.config_hash);
        out.push_str("truth");
        for l in &self.labels {
            let _ = write!(out, "\t{l}");
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&m) {
            out.push_str(l);
            for v in row {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    /// One line per prediction.
    pub fn predictions_tsv(&self) -> String {
        let mut out = String::from("actor\tclassifier\tlength_s\tsegment\ttruth\tpredicted\n");
        for p in &self.predictions {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                p.actor, p.classifier, p.length_s, p.segment, p.truth, p.predicted
            );
        }
        out
    }

    /// Base file name, e.g. `intra-speaker_ivector`.
    pub fn stem(&self) -> String {
        format!("{}_{}", self.evaluation.as_str(), self.system.as_str())
    }
}

/// Side-by-side averages of two systems on the same protocol.
pub fn comparison_text(
    ivector: &EvaluationReport,
    ivector_classifier: &str,
    baseline: &EvaluationReport,
    baseline_classifier: &str,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} average accuracy (%)", ivector.evaluation.as_str());
    let _ = writeln!(out, "config_hash {}  seed {}", ivector.config_hash, ivector.seed);
    let _ = writeln!(out, "{:<10}{:>22}{:>22}", "length", format!("ivector ({ivector_classifier})"), format!("baseline ({baseline_classifier})"));
    let cell = |v: Option<f64>| v.map_or("-".to_string(), |a| format!("{a:.1}"));
    for l in &ivector.lengths_s {
        let _ = writeln!(
            out,
            "{:<10}{:>22}{:>22}",
            fmt_len(*l),
            cell(ivector.average(ivector_classifier, *l)),
            cell(baseline.average(baseline_classifier, *l))
        );
    }
    out
}
