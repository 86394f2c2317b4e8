//! Linear translator from classifier feature space (R^m) into the joint
//! image-embedding space (R^n).
//!
//! The translator minimises the summed ridge objective
//!
//! ```text
//! sum_i ||Theta f_i - z_i||^2 + lambda ||Theta||_F^2
//! ```
//!
//! whose unique minimiser (for lambda > 0) is
//! `Theta = Z^T F (F^T F + lambda I)^-1`. There is no bias term, so the map is
//! exactly linear and `T(f + v) = T(f) + T(v)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::check_len;
use crate::store::{self, Tensor, TensorEntry, TensorReader, FORMAT_VERSION};

/// Per-sample weight decay. The default `lambda` for N samples is `0.1 * N`.
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.1;

pub fn default_lambda(n_samples: usize) -> f64 {
    DEFAULT_WEIGHT_DECAY * n_samples as f64
}

/// Number of equal-width cosine histogram bins over [-1, 1].
pub const COSINE_BINS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train_mse: f64,
    pub train_mean_cosine: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translator {
    /// n x m, applied as `theta * f`.
    pub theta: DMatrix<f64>,
    pub ridge_lambda: f64,
    pub fit_report: FitReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitOptions {
    /// At lambda = 0, solve with the SVD pseudoinverse instead of failing on a
    /// singular `F^T F`.
    pub pseudoinverse_at_zero: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            pseudoinverse_at_zero: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslatorEvaluation {
    /// Mean over samples and output coordinates of the squared residual.
    pub mse: f64,
    pub mean_cosine: f64,
    pub cosine_histogram: Vec<u64>,
    /// Samples left out of the cosine statistics because a vector had zero norm.
    pub zero_norm_excluded: usize,
}

impl Translator {
    /// Wraps a fixed map; the fit report is zeroed with `n_samples = 0`.
    pub fn from_theta(theta: DMatrix<f64>) -> Self {
        Self {
            theta,
            ridge_lambda: 0.0,
            fit_report: FitReport {
                train_mse: 0.0,
                train_mean_cosine: 0.0,
                n_samples: 0,
            },
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_theta(DMatrix::identity(dim, dim))
    }

    pub fn source_dim(&self) -> usize {
        self.theta.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn translate(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("translate", self.source_dim(), f)?;
        Ok(&self.theta * f)
    }

    /// Translates every row of `features` (N x m) into an N x n matrix.
    pub fn translate_rows(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if features.ncols() != self.source_dim() {
            return Err(Error::DimensionMismatch {
                context: "translate_rows",
                expected: self.source_dim(),
                actual: features.ncols(),
            });
        }
        Ok(features * self.theta.transpose())
    }
}

fn check_training_data(features: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<()> {
    if features.nrows() == 0 {
        return Err(Error::EmptyInput("translator training set"));
    }
    if targets.nrows() != features.nrows() {
        return Err(Error::DimensionMismatch {
            context: "translator targets rows",
            expected: features.nrows(),
            actual: targets.nrows(),
        });
    }
    for (name, mat) in [("features", features), ("targets", targets)] {
        if let Some(index) = mat.transpose().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                tensor: name.into(),
                index,
            });
        }
    }
    Ok(())
}

pub fn fit_translator(features: &DMatrix<f64>, targets: &DMatrix<f64>, lambda: f64) -> Result<Translator> {
    fit_translator_with(features, targets, lambda, FitOptions::default())
}

pub fn fit_translator_with(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
    options: FitOptions,
) -> Result<Translator> {
    check_training_data(features, targets)?;
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Singular(format!(
            "ridge lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let m = features.ncols();

    let theta_t = if lambda == 0.0 && options.pseudoinverse_at_zero {
        // Minimum-norm least squares: Theta^T = F^+ Z.
        let svd = features.clone().svd(true, true);
        let sigma_max = svd.singular_values.max();
        let eps = features.nrows().max(m) as f64 * sigma_max * f64::EPSILON;
        svd.solve(targets, eps).map_err(|e| Error::Singular(e.to_string()))?
    } else {
        let mut gram = features.transpose() * features;
        for i in 0..m {
            gram[(i, i)] += lambda;
        }
        let rhs = features.transpose() * targets;
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Singular(format!("F^T F + {lambda} I is not positive definite")))?;
        chol.solve(&rhs)
    };

    let mut t = Translator::from_theta(theta_t.transpose());
    t.ridge_lambda = lambda;
    let eval = evaluate_translator(&t, features, targets)?;
    t.fit_report = FitReport {
        train_mse: eval.mse,
        train_mean_cosine: eval.mean_cosine,
        n_samples: features.nrows(),
    };
    Ok(t)
}

pub fn evaluate_translator(
    t: &Translator,
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> Result<TranslatorEvaluation> {
    if targets.nrows() != features.nrows() {
        return Err(Error::DimensionMismatch {
            context: "evaluate_translator rows",
            expected: features.nrows(),
            actual: targets.nrows(),
        });
    }
    if targets.ncols() != t.target_dim() {
        return Err(Error::DimensionMismatch {
            context: "evaluate_translator target dim",
            expected: t.target_dim(),
            actual: targets.ncols(),
        });
    }
    let pred = t.translate_rows(features)?;
    let residual = &pred - targets;
    let mse = residual.norm_squared() / residual.len().max(1) as f64;

    let mut histogram = vec![0u64; COSINE_BINS];
    let mut sum = 0.0;
    let mut counted = 0usize;
    for i in 0..pred.nrows() {
        let (p, z) = (pred.row(i), targets.row(i));
        let denom = p.norm() * z.norm();
        if denom == 0.0 {
            continue;
        }
        let cos = (p.dot(&z) / denom).clamp(-1.0, 1.0);
        sum += cos;
        counted += 1;
        let bin = (((cos + 1.0) / 2.0) * COSINE_BINS as f64) as usize;
        histogram[bin.min(COSINE_BINS - 1)] += 1;
    }
    Ok(TranslatorEvaluation {
        mse,
        mean_cosine: if counted > 0 { sum / counted as f64 } else { f64::NAN },
        cosine_histogram: histogram,
        zero_norm_excluded: pred.nrows() - counted,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct TranslatorManifest {
    format_version: u32,
    kind: String,
    ridge_lambda: f64,
    source_dim: usize,
    target_dim: usize,
    fit_report: FitReport,
    tensors: Vec<TensorEntry>,
}

const KIND: &str = "translator";

pub fn save_translator(t: &Translator, dir: &Path) -> Result<()> {
    let tensors = store::write_tensors(dir, &[Tensor::matrix_f64("theta", &t.theta)])?;
    store::write_manifest(
        dir,
        &TranslatorManifest {
            format_version: FORMAT_VERSION,
            kind: KIND.into(),
            ridge_lambda: t.ridge_lambda,
            source_dim: t.source_dim(),
            target_dim: t.target_dim(),
            fit_report: t.fit_report,
            tensors,
        },
    )
}

pub fn load_translator(dir: &Path) -> Result<Translator> {
    let manifest: TranslatorManifest = store::read_manifest(dir)?;
    if manifest.kind != KIND {
        return Err(Error::schema(
            "kind",
            format!("expected {KIND}, found {}", manifest.kind),
        ));
    }
    let reader = TensorReader::new(dir, &manifest.tensors)?;
    let theta = reader.matrix_f64("theta")?;
    if theta.shape() != (manifest.target_dim, manifest.source_dim) {
        return Err(Error::schema("theta", "shape disagrees with source_dim/target_dim"));
    }
    Ok(Translator {
        theta,
        ridge_lambda: manifest.ridge_lambda,
        fit_report: manifest.fit_report,
    })
}
