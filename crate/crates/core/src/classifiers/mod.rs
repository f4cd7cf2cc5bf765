//! Back-ends over processed embeddings: two-covariance PLDA and linear SVM.

use std::io::Write;

pub mod plda;
pub mod svm;

/// Writes `utterance_id,label,score` rows.
pub fn write_scores_csv<W: Write>(mut out: W, utterance: &str, scores: &[(String, f64)]) -> std::io::Result<()> {
    for (label, score) in scores {
        writeln!(out, "{utterance},{label},{score:e}")?;
    }
    Ok(())
}

/// Highest score wins; equal scores go to the lexicographically first label.
pub(crate) fn argmax_label(scores: &[(String, f64)]) -> Option<&str> {
    let mut best: Option<(&str, f64)> = None;
    for (label, s) in scores {
        best = match best {
            Some((bl, bs)) if bs > *s || (bs == *s && bl.as_bytes() <= label.as_bytes()) => Some((bl, bs)),
            _ => Some((label.as_str(), *s)),
        };
    }
    best.map(|(l, _)| l)
}
