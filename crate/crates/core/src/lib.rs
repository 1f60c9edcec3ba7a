//! Accelerometer gesture recognition with per-gesture elliptical codebooks,
//! discrete HMMs, measured quantization error models and sampling-based
//! classification with a tunable precision/recall threshold.
//!
//! The pipeline, end to end:
//!
//! 1. [`trace`] ingests 3-axis traces (units of g) and [`synth`] produces
//!    parametric synthetic ones.
//! 2. [`codebook`] fits a spherical (shared) or elliptical (per-gesture)
//!    codebook and [`quantize`] maps samples to codeword symbols, either
//!    deterministically or by sampling from a per-sample distribution.
//! 3. [`hmm`] trains a discrete HMM per gesture with multi-sequence
//!    Baum-Welch.
//! 4. [`error_model`] measures quantization residuals and fits the Gaussian
//!    mixtures that drive statistical quantization.
//! 5. [`classify`] scores traces with Bayes' rule, deterministically or by
//!    running sequential hypothesis tests from [`uncertain`] over sampled
//!    observation sequences.
//! 6. [`eval`] reproduces the split / train / evaluate protocol and its
//!    sensitivity experiments.

pub mod classify;
pub mod codebook;
pub mod drift;
pub mod error;
pub mod error_model;
pub mod eval;
pub mod gmm;
pub mod hmm;
pub mod model;
pub mod quantize;
pub mod rng;
pub mod synth;
pub mod trace;
pub mod uncertain;

pub use classify::{
    classify_deterministic, classify_statistical, posterior, set_priors, ClassificationResult,
    ClassifierConfig, GestureEstimate,
};
pub use codebook::{build_elliptical_codebook, build_spherical_codebook, Codebook, CodebookShape};
pub use error::{Error, Result};
pub use error_model::{build_error_model, compute_residuals, GmmErrorModel, ResidualSet};
pub use gmm::{fit_gmm, GaussianComponent, Mixture};
pub use hmm::{baum_welch_train, make_topology, Hmm, Topology, TrainConfig};
pub use model::{load_models, save_models, GestureModel};
pub use quantize::{
    codeword_probabilities_gmm, codeword_probabilities_inverse_distance, quantize_deterministic,
    sample_observation_sequence, CodewordDistribution, QuantizerKind,
};
pub use trace::{load_traces, AccelSample, Dataset, Trace};
pub use uncertain::{pr, HypothesisConfig, Uncertain};

/// Standard gravity in m/s².
pub const STANDARD_GRAVITY: f64 = 9.80665;
