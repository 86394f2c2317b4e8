//! Feature bundles: the interchange container between a feature extractor and
//! the analysis code.
//!
//! A bundle directory holds `manifest.json` plus one raw `.bin` per tensor.
//! Real tensors are `f32`, labels are `i64`, everything row-major and
//! little-endian. Analysis code upcasts to `f64` on use.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::upcast;
use crate::store::{self, Tensor, TensorEntry, TensorReader, FORMAT_VERSION};

/// Prompt template used when prompts are generated from class names.
pub const DEFAULT_PROMPT_TEMPLATE: &str = "an image of a {class}";

pub fn prompt_for_class(template: &str, class_name: &str) -> String {
    template.replace("{class}", class_name)
}

/// Names of every invariant [`FeatureBundle::validate`] checks, in check order.
pub const INVARIANTS: &[&str] = &[
    "nonempty",
    "row_count",
    "feature_dim",
    "embedding_dim",
    "class_names_count",
    "head_bias_len",
    "prompt_pairing",
    "label_range",
    "finite",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    /// N x m penultimate features.
    pub features: DMatrix<f32>,
    /// c x m classifier head.
    pub head_weight: DMatrix<f32>,
    pub head_bias: Option<DVector<f32>>,
    /// N x n joint-space image embeddings.
    pub clip_image: DMatrix<f32>,
    pub labels: Vec<i64>,
    pub class_names: Vec<String>,
    /// K x n text embeddings, one row per prompt.
    pub text_embeddings: Option<DMatrix<f32>>,
    pub prompts: Option<Vec<String>>,
    pub model_name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleManifest {
    format_version: u32,
    model_name: String,
    class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompts: Option<Vec<String>>,
    tensors: Vec<TensorEntry>,
}

impl FeatureBundle {
    pub fn num_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.head_weight.nrows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.clip_image.ncols()
    }

    pub fn features_f64(&self) -> DMatrix<f64> {
        upcast(&self.features)
    }

    pub fn head_weight_f64(&self) -> DMatrix<f64> {
        upcast(&self.head_weight)
    }

    pub fn head_bias_f64(&self) -> Option<DVector<f64>> {
        self.head_bias.as_ref().map(|b| b.map(f64::from))
    }

    pub fn clip_image_f64(&self) -> DMatrix<f64> {
        upcast(&self.clip_image)
    }

    pub fn text_embeddings_f64(&self) -> Option<DMatrix<f64>> {
        self.text_embeddings.as_ref().map(upcast)
    }

    pub fn feature(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose().map(f64::from)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Checks every bundle invariant, stopping at the first failure.
    pub fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        let m = self.features.ncols();
        let c = self.head_weight.nrows();
        if n == 0 || m == 0 || c == 0 || self.clip_image.ncols() == 0 {
            return Err(Error::invariant(
                "nonempty",
                format!("N={n}, m={m}, c={c}, n={}", self.clip_image.ncols()),
            ));
        }
        if self.clip_image.nrows() != n || self.labels.len() != n {
            return Err(Error::invariant(
                "row_count",
                format!(
                    "features has {n} rows, clip_image {}, labels {}",
                    self.clip_image.nrows(),
                    self.labels.len()
                ),
            ));
        }
        if self.head_weight.ncols() != m {
            return Err(Error::invariant(
                "feature_dim",
                format!("features have {m} columns, head_weight {}", self.head_weight.ncols()),
            ));
        }
        if let Some(t) = &self.text_embeddings {
            if t.ncols() != self.clip_image.ncols() {
                return Err(Error::invariant(
                    "embedding_dim",
                    format!(
                        "clip_image has {} columns, text_embeddings {}",
                        self.clip_image.ncols(),
                        t.ncols()
                    ),
                ));
            }
        }
        if self.class_names.len() != c {
            return Err(Error::invariant(
                "class_names_count",
                format!("{} class names for {c} classes", self.class_names.len()),
            ));
        }
        if let Some(b) = &self.head_bias {
            if b.len() != c {
                return Err(Error::invariant(
                    "head_bias_len",
                    format!("bias has length {}, expected {c}", b.len()),
                ));
            }
        }
        match (&self.text_embeddings, &self.prompts) {
            (None, None) => {}
            (Some(t), Some(p)) if t.nrows() == p.len() => {}
            (t, p) => {
                return Err(Error::invariant(
                    "prompt_pairing",
                    format!(
                        "{} text embedding rows vs {} prompts",
                        t.as_ref().map_or(0, |t| t.nrows()),
                        p.as_ref().map_or(0, |p| p.len())
                    ),
                ))
            }
        }
        if let Some((i, &l)) = self.labels.iter().enumerate().find(|(_, &l)| l < 0 || l as usize >= c) {
            return Err(Error::invariant(
                "label_range",
                format!("label out of range: labels[{i}] = {l}, classes = {c}"),
            ));
        }
        self.check_finite()
    }

    fn check_finite(&self) -> Result<()> {
        fn scan<'a>(name: &str, data: impl Iterator<Item = &'a f32>) -> Result<()> {
            match data.enumerate().find(|(_, x)| !x.is_finite()) {
                Some((index, _)) => Err(Error::NonFinite {
                    tensor: name.to_string(),
                    index,
                }),
                None => Ok(()),
            }
        }
        // Flat indices are row-major, matching the on-disk order.
        scan("features", self.features.transpose().iter())?;
        scan("head_weight", self.head_weight.transpose().iter())?;
        if let Some(b) = &self.head_bias {
            scan("head_bias", b.iter())?;
        }
        scan("clip_image", self.clip_image.transpose().iter())?;
        if let Some(t) = &self.text_embeddings {
            scan("text_embeddings", t.transpose().iter())?;
        }
        Ok(())
    }

    fn tensors(&self) -> Vec<Tensor> {
        let mut out = vec![
            Tensor::matrix_f32("features", &self.features),
            Tensor::matrix_f32("head_weight", &self.head_weight),
        ];
        if let Some(b) = &self.head_bias {
            out.push(Tensor::vector_f32("head_bias", b));
        }
        out.push(Tensor::matrix_f32("clip_image", &self.clip_image));
        out.push(Tensor::vector_i64("labels", &self.labels));
        if let Some(t) = &self.text_embeddings {
            out.push(Tensor::matrix_f32("text_embeddings", t));
        }
        out
    }
}

/// Validates `bundle` and writes it to `dir` (created if needed).
pub fn write_bundle(bundle: &FeatureBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    let tensors = store::write_tensors(dir, &bundle.tensors())?;
    let manifest = BundleManifest {
        format_version: FORMAT_VERSION,
        model_name: bundle.model_name.clone(),
        class_names: bundle.class_names.clone(),
        prompts: bundle.prompts.clone(),
        tensors,
    };
    store::write_manifest(dir, &manifest)
}

/// Reads a bundle directory. Byte counts and shapes are always checked; with
/// `validate` every bundle invariant and a NaN/Inf scan run as well.
pub fn read_bundle(dir: &Path, validate: bool) -> Result<FeatureBundle> {
    let manifest: BundleManifest = store::read_manifest(dir)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::schema(
            "format_version",
            format!("unsupported version {}", manifest.format_version),
        ));
    }
    if let Some(e) = manifest.tensors.iter().find(|e| e.shape.contains(&0)) {
        return Err(Error::schema(&e.name, "shape entries must be positive"));
    }
    let reader = TensorReader::new(dir, &manifest.tensors)?;
    let optional = |name: &str| reader.entry(name).is_some();
    let bundle = FeatureBundle {
        features: reader.matrix_f32("features")?,
        head_weight: reader.matrix_f32("head_weight")?,
        head_bias: if optional("head_bias") {
            Some(reader.vector_f32("head_bias")?)
        } else {
            None
        },
        clip_image: reader.matrix_f32("clip_image")?,
        labels: reader.vector_i64("labels")?,
        class_names: manifest.class_names,
        text_embeddings: if optional("text_embeddings") {
            Some(reader.matrix_f32("text_embeddings")?)
        } else {
            None
        },
        prompts: manifest.prompts,
        model_name: manifest.model_name,
    };
    if validate {
        bundle.validate()?;
    }
    Ok(bundle)
}
