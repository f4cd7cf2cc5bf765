//! Composite dysphonia index as a configurable linear form.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::parse_key_values;
use crate::error::{Error, Result};

/// Terms a coefficient file may weight.
pub const CSID_TERMS: &[&str] = &[
    "cpp",
    "cpp_sd",
    "lh_ratio",
    "lh_ratio_sd",
    "hnr",
    "pitch_strength",
    "f0_mean",
    "f0_sd",
];

const PLACEHOLDER: &str = include_str!("../../../../config/csid_placeholder.cfg");

#[derive(Debug, Clone, PartialEq)]
pub struct CsidCoefficients {
    pub intercept: f64,
    pub weights: BTreeMap<String, f64>,
}

impl CsidCoefficients {
    /// The shipped, explicitly non-canonical placeholder coefficients.
    pub fn placeholder() -> Self {
        Self::parse(PLACEHOLDER).expect("bundled coefficient file parses")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut intercept = None;
        let mut weights = BTreeMap::new();
        for (key, value) in parse_key_values(text, "csid coefficients")? {
            let v: f64 = value
                .parse()
                .map_err(|_| Error::Config(format!("csid coefficient {key}: not a number: {value}")))?;
            if !v.is_finite() {
                return Err(Error::Config(format!("csid coefficient {key} is not finite")));
            }
            if key == "intercept" {
                intercept = Some(v);
            } else if CSID_TERMS.contains(&key.as_str()) {
                weights.insert(key, v);
            } else {
                return Err(Error::Config(format!("unknown csid term {key}")));
            }
        }
        Ok(CsidCoefficients {
            intercept: intercept.unwrap_or(0.0),
            weights,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// `intercept + Σ weight · term`; every weighted term must be present.
pub fn csid(measures: &BTreeMap<String, f64>, coeffs: &CsidCoefficients) -> Result<f64> {
    let mut total = coeffs.intercept;
    for (term, w) in &coeffs.weights {
        let v = measures
            .get(term)
            .ok_or_else(|| Error::Config(format!("csid term {term} is not available")))?;
        total += w * v;
    }
    Ok(total)
}
