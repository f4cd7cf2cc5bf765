//! Within-speaker voice quality identification.
//!
//! Two systems share the DSP front-end:
//!
//! * the i-vector system: MFCC + deltas + CMVN, a diagonal GMM universal
//!   background model, a total-variability subspace, LDA with centering and
//!   length normalization, and PLDA / linear SVM back-ends;
//! * the acoustic-measure baseline: pitch strength, CPP, CSID, HNR and F0
//!   statistics assembled into a 22-dimensional vector scored by a linear SVM.
//!
//! The [`corpus`] and [`experiment`] modules implement the segmentation,
//! train/test protocol and the intra-/inter-speaker evaluations.

pub mod audio;
pub mod classifiers;
pub mod config;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod gmm;
pub mod ivector;
pub mod lda;
mod linalg;
pub mod measures;
pub mod persist;
pub mod signals;

pub use audio::AudioClip;
pub use classifiers::plda::{ClassEnrollment, PldaModel};
pub use classifiers::svm::LinearSvmModel;
pub use corpus::{Quality, RecordingManifest, SegmentSet};
pub use dsp::{FeatureMatrix, MfccConfig};
pub use error::{Error, Result};
pub use experiment::{EvaluationReport, PipelineConfig};
pub use gmm::{DiagonalGmm, SufficientStats};
pub use ivector::{IVector, Stage, TotalVariabilityModel};
pub use lda::LdaTransform;
pub use measures::BaselineFeatureVector;
