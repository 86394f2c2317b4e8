//! Angular metrics in degrees.
//!
//! * `angle(u, v) = acos(<u, v> / (|u| |v|))`, evaluated as
//!   `2 atan2(|u^ - v^|, |u^ + v^|)` on the unit vectors. Same value, but exact
//!   at 0 and 180 degrees where `acos` loses half the digits.
//! * Attribute Score: `AS = angle(T f, z_text) - angle(T f_eq, z_text)`.
//!   Positive means the equivalent feature sits closer to the prompt.
//! * Image Score: `IS = angle(T f, T f_eq)`, the overall semantic change.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::FeatureBundle;
use crate::decomposition::HeadDecomposition;
use crate::error::{Error, Result};
use crate::linalg::row;
use crate::translator::Translator;

pub fn angle(u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "angle",
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm("angle operand".into()));
    }
    let (a, b) = (u / nu, v / nv);
    Ok(2.0 * (&a - &b).norm().atan2((&a + &b).norm()).to_degrees())
}

pub fn attribute_score(f: &DVector<f64>, f_eq: &DVector<f64>, z_text: &DVector<f64>, t: &Translator) -> Result<f64> {
    let orig = angle(&t.translate(f)?, z_text)?;
    let eq = angle(&t.translate(f_eq)?, z_text)?;
    Ok(orig - eq)
}

pub fn image_score(f: &DVector<f64>, f_eq: &DVector<f64>, t: &Translator) -> Result<f64> {
    angle(&t.translate(f)?, &t.translate(f_eq)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub sample_id: usize,
    pub class_id: usize,
    /// Index into the bundle prompts, or -1 for image-score-only records.
    pub prompt_id: i64,
    #[serde(rename = "AS_deg")]
    pub attribute_score: f64,
    #[serde(rename = "IS_deg")]
    pub image_score: f64,
    #[serde(rename = "angle_orig_deg")]
    pub angle_original: f64,
    #[serde(rename = "angle_eq_deg")]
    pub angle_equivalent: f64,
}

impl MetricRecord {
    /// Builds a record from the two prompt angles, so `AS` is their exact difference.
    pub fn from_angles(
        sample_id: usize,
        class_id: usize,
        prompt_id: i64,
        angle_original: f64,
        angle_equivalent: f64,
        image_score: f64,
    ) -> Self {
        Self {
            sample_id,
            class_id,
            prompt_id,
            attribute_score: angle_original - angle_equivalent,
            image_score,
            angle_original,
            angle_equivalent,
        }
    }
}

/// Which prompts each sample is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptSelector {
    /// Prompt `k` is the template for class `k`; each sample uses its label.
    TrueClass,
    Prompt(usize),
    All,
    /// No prompt: records carry IS only (`prompt_id = -1`, AS = 0).
    ImageOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchMetrics {
    pub records: Vec<MetricRecord>,
    /// Samples skipped because a translated vector had zero norm.
    pub skipped_samples: Vec<usize>,
}

/// Null-removed equivalents `f - P_n f` for every row of `features`.
pub fn null_removed_rows(features: &DMatrix<f64>, decomp: &HeadDecomposition) -> DMatrix<f64> {
    features - features * &decomp.proj_null
}

/// Prompt ids scored for a sample with label `label`.
fn prompts_for(selector: PromptSelector, label: usize, n_prompts: usize) -> Vec<usize> {
    match selector {
        PromptSelector::TrueClass => vec![label],
        PromptSelector::Prompt(k) => vec![k],
        PromptSelector::All => (0..n_prompts).collect(),
        PromptSelector::ImageOnly => vec![],
    }
}

pub(crate) fn check_selector(bundle: &FeatureBundle, selector: PromptSelector) -> Result<usize> {
    let n_prompts = bundle.text_embeddings.as_ref().map_or(0, |t| t.nrows());
    match selector {
        PromptSelector::ImageOnly => Ok(n_prompts),
        _ if n_prompts == 0 => Err(Error::schema(
            "text_embeddings",
            "bundle has no prompts; a prompt-based selector needs text embeddings",
        )),
        PromptSelector::TrueClass if n_prompts != bundle.num_classes() => Err(Error::schema(
            "prompts",
            format!(
                "true-class scoring needs one prompt per class ({}), bundle has {n_prompts}",
                bundle.num_classes()
            ),
        )),
        PromptSelector::Prompt(k) if k >= n_prompts => Err(Error::schema(
            "prompts",
            format!("prompt id {k} out of range ({n_prompts} prompts)"),
        )),
        _ => Ok(n_prompts),
    }
}

/// Scores every sample's null-removed pair `(f, f - P_n f)`.
///
/// Output is ordered by `(sample_id, prompt_id)` regardless of scheduling.
pub fn batch_metrics(
    bundle: &FeatureBundle,
    decomp: &HeadDecomposition,
    t: &Translator,
    selector: PromptSelector,
) -> Result<BatchMetrics> {
    let features = bundle.features_f64();
    let equivalents = null_removed_rows(&features, decomp);
    pair_metrics(bundle, &features, &equivalents, t, selector)
}

/// Scores arbitrary `(f_i, f_eq_i)` pairs given row-aligned matrices.
pub fn pair_metrics(
    bundle: &FeatureBundle,
    originals: &DMatrix<f64>,
    equivalents: &DMatrix<f64>,
    t: &Translator,
    selector: PromptSelector,
) -> Result<BatchMetrics> {
    let n_prompts = check_selector(bundle, selector)?;
    let text = bundle
        .text_embeddings_f64()
        .unwrap_or_else(|| DMatrix::zeros(0, t.target_dim()));
    if text.nrows() > 0 && text.ncols() != t.target_dim() {
        return Err(Error::DimensionMismatch {
            context: "text embeddings vs translator output",
            expected: t.target_dim(),
            actual: text.ncols(),
        });
    }
    let z = t.translate_rows(originals)?;
    let z_eq = t.translate_rows(equivalents)?;

    let per_sample: Vec<Option<Vec<MetricRecord>>> = (0..originals.nrows())
        .into_par_iter()
        .map(|i| {
            let (a, b) = (row(&z, i), row(&z_eq, i));
            let is = angle(&a, &b).ok()?;
            let label = bundle.label(i);
            let ids = prompts_for(selector, label, n_prompts);
            if ids.is_empty() {
                return Some(vec![MetricRecord::from_angles(i, label, -1, 0.0, 0.0, is)]);
            }
            ids.into_iter()
                .map(|k| {
                    let zt = row(&text, k);
                    let orig = angle(&a, &zt).ok()?;
                    let eq = angle(&b, &zt).ok()?;
                    Some(MetricRecord::from_angles(i, label, k as i64, orig, eq, is))
                })
                .collect()
        })
        .collect();

    let mut records = Vec::new();
    let mut skipped_samples = Vec::new();
    for (i, r) in per_sample.into_iter().enumerate() {
        match r {
            Some(rs) => records.extend(rs),
            None => skipped_samples.push(i),
        }
    }
    Ok(BatchMetrics {
        records,
        skipped_samples,
    })
}

pub fn write_records_csv<W: Write>(records: &[MetricRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn read_records_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_records_json<W: Write>(records: &[MetricRecord], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, records)?;
    Ok(())
}
