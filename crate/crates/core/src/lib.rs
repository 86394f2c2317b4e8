//! Null-space diagnostics for linear classifier heads.
//!
//! The crate splits a classifier head `W` into principal and null subspaces,
//! fits a linear translator from classifier features into a joint
//! vision-language embedding space, and measures how much meaning moves when a
//! feature is perturbed only inside the null space (which leaves the logits
//! untouched).
//!
//! * [`bundle`] reads and writes feature bundles, the on-disk interchange format.
//! * [`decomposition`] computes the SVD of the head and the two projectors.
//! * [`translator`] fits the closed-form ridge translator.
//! * [`metrics`] implements the angular Attribute Score and Image Score.
//! * [`perturbation`] builds equivalent features: null removal, text-gradient
//!   null steering with calibrated step size, and matched-norm baselines.
//! * [`analysis`] aggregates records into model, class and concept summaries.

pub mod analysis;
pub mod bundle;
pub mod decomposition;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod perturbation;
pub mod rng;
pub mod store;
pub mod translator;

pub use bundle::FeatureBundle;
pub use decomposition::{HeadDecomposition, RankTolerance, Subspace};
pub use error::{Error, Result};
pub use metrics::MetricRecord;
pub use perturbation::{SteeringMode, SteeringResult, SteeringSpec};
pub use translator::Translator;
