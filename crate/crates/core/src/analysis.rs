//! Aggregation of metric records into model, class and concept summaries,
//! the head-probe correlation check, and a planted-leakage generator used to
//! validate the whole pipeline on data with a known answer.
//!
//! Variances use the population (1/N) convention throughout. Quantiles use
//! linear interpolation between order statistics.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize, Serializer};

use crate::bundle::{prompt_for_class, FeatureBundle, DEFAULT_PROMPT_TEMPLATE};
use crate::decomposition::{decompose_head, HeadDecomposition, RankTolerance};
use crate::error::{Error, Result};
use crate::linalg::row;
use crate::metrics::{angle, null_removed_rows, MetricRecord};
use crate::rng::{gaussian_matrix, gaussian_vector, seeded};
use crate::translator::{fit_translator, Translator};

/// Default ellipse confidence level.
pub const DEFAULT_CONFIDENCE: f64 = 0.9;

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance.
fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
}

impl Stats {
    pub fn of(xs: &[f64]) -> Self {
        let s = sorted(xs);
        Self {
            mean: mean(xs),
            std: variance(xs).sqrt(),
            median: quantile_sorted(&s, 0.5),
            q05: quantile_sorted(&s, 0.05),
            q95: quantile_sorted(&s, 0.95),
        }
    }
}

/// Chi-square(2) quantile: the squared Mahalanobis radius of a 2-D Gaussian
/// confidence ellipse at `level`.
pub fn chi2_2dof_quantile(level: f64) -> f64 {
    -2.0 * (1.0 - level).ln()
}

/// Confidence ellipse parameters for external plotting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub cov_xx: f64,
    pub cov_xy: f64,
    pub cov_yy: f64,
    pub level: f64,
    /// Squared radius scaling the covariance to the ellipse boundary.
    pub chi2_scale: f64,
}

impl Ellipse {
    pub fn fit(xs: &[f64], ys: &[f64], level: f64) -> Self {
        let (mx, my) = (mean(xs), mean(ys));
        let n = xs.len() as f64;
        let cov_xy = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
        Self {
            cx: mx,
            cy: my,
            cov_xx: variance(xs),
            cov_xy,
            cov_yy: variance(ys),
            level,
            chi2_scale: chi2_2dof_quantile(level),
        }
    }
}

fn finite_or_null<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub model_name: String,
    /// Statistics of |AS| in degrees.
    pub as_stats: Stats,
    /// Statistics of signed AS in degrees.
    pub signed_as_stats: Stats,
    pub is_stats: Stats,
    /// mean IS / mean |AS|; `+inf` (serialised as null) when mean |AS| is 0.
    #[serde(serialize_with = "finite_or_null")]
    pub ratio_is_over_as: f64,
    pub ratio_defined: bool,
    /// Ellipse over (|AS|, IS).
    pub ellipse: Ellipse,
    /// Ellipse over (signed AS, IS).
    pub ellipse_signed: Ellipse,
    pub n_samples: usize,
}

pub fn summarize_model(records: &[MetricRecord], model_name: &str, confidence: f64) -> Result<ModelSummary> {
    if records.is_empty() {
        return Err(Error::EmptyInput("metric records"));
    }
    let signed: Vec<f64> = records.iter().map(|r| r.attribute_score).collect();
    let abs: Vec<f64> = signed.iter().map(|a| a.abs()).collect();
    let is: Vec<f64> = records.iter().map(|r| r.image_score).collect();
    let as_stats = Stats::of(&abs);
    let is_stats = Stats::of(&is);
    let ratio_defined = as_stats.mean > 0.0;
    Ok(ModelSummary {
        model_name: model_name.to_string(),
        as_stats,
        signed_as_stats: Stats::of(&signed),
        is_stats,
        ratio_is_over_as: if ratio_defined {
            is_stats.mean / as_stats.mean
        } else {
            f64::INFINITY
        },
        ratio_defined,
        ellipse: Ellipse::fit(&abs, &is, confidence),
        ellipse_signed: Ellipse::fit(&signed, &is, confidence),
        n_samples: records.len(),
    })
}

/// Difference of mean |AS| between two groups of samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapTest {
    pub mean_a: f64,
    pub mean_b: f64,
    pub gap: f64,
    /// `sqrt(var_a/n_a + var_b/n_b)`.
    pub pooled_se: f64,
    /// `gap / pooled_se`.
    pub z: f64,
}

impl GapTest {
    pub fn of(a: &[f64], b: &[f64]) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::EmptyInput("gap test group"));
        }
        let (mean_a, mean_b) = (mean(a), mean(b));
        let pooled_se = (variance(a) / a.len() as f64 + variance(b) / b.len() as f64).sqrt();
        let gap = mean_a - mean_b;
        Ok(Self {
            mean_a,
            mean_b,
            gap,
            pooled_se,
            z: gap / pooled_se,
        })
    }
}

/// z-score above which a class counts as leaking.
pub const LEAK_FLAG_Z: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub class_id: usize,
    pub class_name: String,
    /// Signed AS.
    pub mean: f64,
    pub std: f64,
    /// 5th, 25th, 50th, 75th, 95th percentiles of signed AS.
    pub quantiles: [f64; 5],
    pub mean_abs: f64,
    pub n_samples: usize,
    /// Mean |AS| exceeds that of all other classes by more than
    /// [`LEAK_FLAG_Z`] pooled standard errors.
    pub flagged: bool,
}

pub fn summarize_classes(records: &[MetricRecord], class_names: &[String]) -> Result<Vec<ClassProfile>> {
    let mut by_class: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        if r.class_id >= class_names.len() {
            return Err(Error::DimensionMismatch {
                context: "record class id",
                expected: class_names.len(),
                actual: r.class_id,
            });
        }
        by_class.entry(r.class_id).or_default().push(r.attribute_score);
    }
    let mut out = Vec::with_capacity(by_class.len());
    for (&class_id, values) in &by_class {
        let s = sorted(values);
        let abs: Vec<f64> = values.iter().map(|a| a.abs()).collect();
        let rest: Vec<f64> = by_class
            .iter()
            .filter(|(&k, _)| k != class_id)
            .flat_map(|(_, v)| v.iter().map(|a| a.abs()))
            .collect();
        let flagged = !rest.is_empty() && GapTest::of(&abs, &rest).map(|g| g.z > LEAK_FLAG_Z).unwrap_or(false);
        out.push(ClassProfile {
            class_id,
            class_name: class_names[class_id].clone(),
            mean: mean(values),
            std: variance(values).sqrt(),
            quantiles: [0.05, 0.25, 0.5, 0.75, 0.95].map(|p| quantile_sorted(&s, p)),
            mean_abs: mean(&abs),
            n_samples: values.len(),
            flagged,
        });
    }
    Ok(out)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "pearson",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::DegenerateCorrelation("need at least two points".into()));
    }
    if a == b && variance(a) > 0.0 {
        return Ok(1.0);
    }
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(Error::DegenerateCorrelation("zero variance".into()));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties receiving their average rank.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Spearman correlation of per-class mean |AS| between two models, over the
/// classes both profiles contain.
pub fn class_rank_correlation(a: &[ClassProfile], b: &[ClassProfile]) -> Result<f64> {
    let b_by: BTreeMap<usize, f64> = b.iter().map(|p| (p.class_id, p.mean_abs)).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .iter()
        .filter_map(|p| b_by.get(&p.class_id).map(|&y| (p.mean_abs, y)))
        .unzip();
    spearman(&xs, &ys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptProfile {
    pub prompt_id: usize,
    pub prompt: String,
    pub angle_original_mean: f64,
    pub angle_equivalent_mean: f64,
    /// Signed; equals `angle_original_mean - angle_equivalent_mean`.
    pub attribute_score_mean: f64,
    pub n_samples: usize,
}

/// Mean angle of a class's original and null-removed features to each prompt.
pub fn concept_profile(
    bundle: &FeatureBundle,
    decomp: &HeadDecomposition,
    t: &Translator,
    class_id: usize,
    prompt_ids: &[usize],
) -> Result<Vec<ConceptProfile>> {
    let text = bundle
        .text_embeddings_f64()
        .ok_or_else(|| Error::schema("text_embeddings", "concept profiles need prompts"))?;
    let prompts = bundle.prompts.clone().unwrap_or_default();
    if let Some(&bad) = prompt_ids.iter().find(|&&p| p >= text.nrows()) {
        return Err(Error::schema("prompts", format!("prompt id {bad} out of range")));
    }
    let rows: Vec<usize> = (0..bundle.num_samples())
        .filter(|&i| bundle.label(i) == class_id)
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyInput("class has no samples"));
    }
    let features = DMatrix::from_rows(&rows.iter().map(|&i| bundle.feature(i).transpose()).collect::<Vec<_>>());
    let z = t.translate_rows(&features)?;
    let z_eq = t.translate_rows(&null_removed_rows(&features, decomp))?;

    prompt_ids
        .iter()
        .map(|&p| {
            let zt = row(&text, p);
            let mut orig = 0.0;
            let mut eq = 0.0;
            for i in 0..rows.len() {
                orig += angle(&row(&z, i), &zt)?;
                eq += angle(&row(&z_eq, i), &zt)?;
            }
            let n = rows.len() as f64;
            let (orig, eq) = (orig / n, eq / n);
            Ok(ConceptProfile {
                prompt_id: p,
                prompt: prompts.get(p).cloned().unwrap_or_default(),
                angle_original_mean: orig,
                angle_equivalent_mean: eq,
                attribute_score_mean: orig - eq,
                n_samples: rows.len(),
            })
        })
        .collect()
}

/// Per-class stratified split; `train_fraction` of each class (rounded down)
/// goes to training.
pub fn stratified_split(labels: &[usize], train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = seeded(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 * train_fraction).floor() as usize;
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    m.select_rows(idx)
}

/// Fits a ridge one-hot probe on the training rows and returns test accuracy.
pub fn probe_accuracy(
    features: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
    train: &[usize],
    test: &[usize],
    lambda: f64,
) -> Result<f64> {
    let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    if let Some(&class) = test.iter().map(|&i| &labels[i]).find(|l| !train_labels.contains(l)) {
        return Err(Error::DegenerateSplit { class });
    }
    if test.is_empty() {
        return Err(Error::EmptyInput("probe test split"));
    }
    let x = select_rows(features, train);
    let y = DMatrix::from_fn(
        train.len(),
        n_classes,
        |i, k| if train_labels[i] == k { 1.0 } else { 0.0 },
    );
    let probe = fit_translator(&x, &y, lambda)?;
    let scores = probe.translate_rows(&select_rows(features, test))?;
    let correct = test
        .iter()
        .enumerate()
        .filter(|&(r, &i)| scores.row(r).transpose().argmax().0 == labels[i])
        .count();
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCorrelation {
    pub accuracies_raw: Vec<f64>,
    pub accuracies_translated: Vec<f64>,
    pub pearson: f64,
}

/// Train fraction of the probe split.
pub const PROBE_TRAIN_FRACTION: f64 = 0.8;

/// For each model, probes principal features `P_p f` and their translations
/// `T(P_p f)` on the same seeded 80/20 split and correlates the accuracies.
pub fn head_probe_correlation(
    bundles: &[FeatureBundle],
    decomps: &[HeadDecomposition],
    translators: &[Translator],
    probe_lambda: f64,
    seed: u64,
) -> Result<ProbeCorrelation> {
    if bundles.len() != decomps.len() || bundles.len() != translators.len() {
        return Err(Error::DimensionMismatch {
            context: "head_probe_correlation inputs",
            expected: bundles.len(),
            actual: decomps.len().min(translators.len()),
        });
    }
    if bundles.len() < 3 {
        return Err(Error::DegenerateCorrelation(format!(
            "need at least 3 models, got {}",
            bundles.len()
        )));
    }
    let mut raw = Vec::with_capacity(bundles.len());
    let mut translated = Vec::with_capacity(bundles.len());
    for ((bundle, decomp), t) in bundles.iter().zip(decomps).zip(translators) {
        let labels: Vec<usize> = (0..bundle.num_samples()).map(|i| bundle.label(i)).collect();
        let (train, test) = stratified_split(&labels, PROBE_TRAIN_FRACTION, seed);
        let principal = bundle.features_f64() * &decomp.proj_principal;
        let mapped = t.translate_rows(&principal)?;
        let c = bundle.num_classes();
        raw.push(probe_accuracy(&principal, &labels, c, &train, &test, probe_lambda)?);
        translated.push(probe_accuracy(&mapped, &labels, c, &train, &test, probe_lambda)?);
    }
    let pearson = pearson(&raw, &translated)?;
    Ok(ProbeCorrelation {
        accuracies_raw: raw,
        accuracies_translated: translated,
        pearson,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedConfig {
    /// Feature dimension (must exceed `classes`).
    pub feature_dim: usize,
    pub classes: usize,
    pub embedding_dim: usize,
    pub per_class: usize,
    /// Offset along the planted null direction for leaky classes.
    pub leak_strength: f64,
    pub seed: u64,
    /// Isotropic feature noise standard deviation.
    pub noise_std: f64,
    /// Standard deviation of class-mean coordinates in the head's row space.
    pub class_scale: f64,
    /// Noise added to the joint-space targets.
    pub target_noise_std: f64,
}

impl PlantedConfig {
    pub fn new(
        feature_dim: usize,
        classes: usize,
        embedding_dim: usize,
        per_class: usize,
        leak_strength: f64,
        seed: u64,
    ) -> Self {
        Self {
            feature_dim,
            classes,
            embedding_dim,
            per_class,
            leak_strength,
            seed,
            noise_std: 0.5,
            class_scale: 2.0,
            target_noise_std: 0.01,
        }
    }

    /// Leak strength used as the "strong leak" setting: twenty noise deviations.
    pub fn strong_leak(&self) -> f64 {
        20.0 * self.noise_std
    }
}

#[derive(Debug, Clone)]
pub struct PlantedBundle {
    pub bundle: FeatureBundle,
    /// m x 1 unit null direction carrying the planted leak.
    pub null_dirs: DMatrix<f64>,
    /// Classes whose samples (and prompts) carry the leak.
    pub leak_classes: Vec<usize>,
}

/// Synthetic bundle with a known null space and known leaking classes.
///
/// Even-numbered classes leak: their features and their class prompt
/// embedding carry `leak_strength` along a fixed null direction of `W`. Each odd
/// class is the sample-by-sample negation of the class before it.
/// Random draws do not depend on `leak_strength`, so two bundles with the same
/// seed differ only in that null component (and in what it maps to in the
/// joint space).
pub fn generate_planted_bundle(cfg: &PlantedConfig) -> Result<PlantedBundle> {
    let (m, c, n) = (cfg.feature_dim, cfg.classes, cfg.embedding_dim);
    if m <= c || c == 0 || n == 0 || cfg.per_class == 0 {
        return Err(Error::InvalidSpec(format!(
            "planted bundle needs m > c >= 1, n >= 1, per_class >= 1 (m={m}, c={c}, n={n})"
        )));
    }
    if cfg.leak_strength.is_nan() || cfg.leak_strength < 0.0 {
        return Err(Error::InvalidSpec("leak_strength must be >= 0".into()));
    }
    let mut rng = seeded(cfg.seed);
    let w = (gaussian_matrix(&mut rng, c, m) / (m as f64).sqrt()).map(|x| x as f32 as f64);
    let decomp = decompose_head(&w, RankTolerance::Machine)?;
    let leak_dir: DVector<f64> = decomp.null_basis.column(0).into_owned();
    let map = gaussian_matrix(&mut rng, n, m) / (m as f64).sqrt();
    let leak_classes: Vec<usize> = (0..c).step_by(2).collect();

    // Class 2j+1 mirrors class 2j sample by sample (mean and noise negated), so
    // without a leak the two halves have identical scores under any linear
    // translator.
    let mut means: Vec<DVector<f64>> = Vec::with_capacity(c);
    for k in 0..c {
        let mean = if k % 2 == 0 {
            &decomp.principal_basis * (gaussian_vector(&mut rng, decomp.rank) * cfg.class_scale)
        } else {
            -&means[k - 1]
        };
        means.push(mean);
    }
    let total = c * cfg.per_class;
    let mut features = DMatrix::zeros(total, m);
    let mut labels = Vec::with_capacity(total);
    let mut noise = vec![DVector::zeros(m); cfg.per_class];
    for (k, mean) in means.iter().enumerate() {
        for (j, shared) in noise.iter_mut().enumerate() {
            let eps = if k % 2 == 0 {
                *shared = gaussian_vector(&mut rng, m) * cfg.noise_std;
                shared.clone()
            } else {
                -&*shared
            };
            let mut f = mean + eps;
            if leak_classes.contains(&k) {
                f += &leak_dir * cfg.leak_strength;
            }
            features.set_row(k * cfg.per_class + j, &f.transpose());
            labels.push(k as i64);
        }
    }
    let features = features.map(|x| x as f32);
    let target_noise = gaussian_matrix(&mut rng, total, n) * cfg.target_noise_std;
    let clip = features.map(f64::from) * map.transpose() + target_noise;

    let text = DMatrix::from_rows(
        &(0..c)
            .map(|k| {
                let mut proto = means[k].clone();
                if leak_classes.contains(&k) {
                    proto += &leak_dir * cfg.leak_strength;
                }
                (&map * proto).transpose()
            })
            .collect::<Vec<_>>(),
    );
    let class_names: Vec<String> = (0..c).map(|k| format!("class_{k}")).collect();
    let prompts = class_names
        .iter()
        .map(|name| prompt_for_class(DEFAULT_PROMPT_TEMPLATE, name))
        .collect();

    let bundle = FeatureBundle {
        features,
        head_weight: w.map(|x| x as f32),
        head_bias: None,
        clip_image: clip.map(|x| x as f32),
        labels,
        class_names,
        text_embeddings: Some(text.map(|x| x as f32)),
        prompts: Some(prompts),
        model_name: format!("planted-leak{}-seed{}", cfg.leak_strength, cfg.seed),
    };
    bundle.validate()?;
    Ok(PlantedBundle {
        bundle,
        null_dirs: DMatrix::from_columns(&[leak_dir]),
        leak_classes,
    })
}

/// Mean-|AS| gap between leaky and clean samples of true-class records.
pub fn leak_gap(records: &[MetricRecord], leak_classes: &[usize]) -> Result<GapTest> {
    let (leaky, clean): (Vec<&MetricRecord>, Vec<&MetricRecord>) =
        records.iter().partition(|r| leak_classes.contains(&r.class_id));
    let abs = |rs: Vec<&MetricRecord>| rs.iter().map(|r| r.attribute_score.abs()).collect::<Vec<_>>();
    GapTest::of(&abs(leaky), &abs(clean))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(class_id: usize, a: f64, is: f64) -> MetricRecord {
        MetricRecord::from_angles(0, class_id, 0, a, 0.0, is)
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&s, 0.5), 3.0);
        assert_eq!(quantile_sorted(&s, 0.25), 2.0);
        assert_eq!(quantile_sorted(&s, 0.05), 1.2);
        assert_eq!(quantile_sorted(&[7.0], 0.95), 7.0);
    }

    #[test]
    fn degenerate_model_summary() {
        let r = vec![rec(0, 0.0, 0.0); 3];
        let s = summarize_model(&r, "m", DEFAULT_CONFIDENCE).unwrap();
        assert_eq!(s.as_stats.mean, 0.0);
        assert!(!s.ratio_defined);
        assert_eq!(s.ratio_is_over_as, f64::INFINITY);
        let json = serde_json::to_value(&s).unwrap();
        assert!(json["ratio_is_over_as"].is_null());
        assert!(summarize_model(&[], "m", 0.9).is_err());
    }

    #[test]
    fn two_record_model_summary() {
        // mean |AS| = 1, mean IS = 4, ratio = 4.
        let r = vec![rec(0, -1.0, 3.0), rec(0, 1.0, 5.0)];
        let s = summarize_model(&r, "m", 0.9).unwrap();
        assert_eq!(s.as_stats.mean, 1.0);
        assert_eq!(s.is_stats.mean, 4.0);
        assert_eq!(s.ratio_is_over_as, 4.0);
        assert_eq!(s.ellipse_signed.cov_xy, 1.0);
        assert!((s.ellipse.chi2_scale - (-2.0 * 0.1f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn class_profile_population_std() {
        let r = vec![rec(0, -2.0, 1.0), rec(0, 2.0, 1.0)];
        let p = summarize_classes(&r, &["a".into()]).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].mean, 0.0);
        assert_eq!(p[0].std, 2.0);
        assert_eq!(p[0].mean_abs, 2.0);
        assert!(p[0].quantiles.windows(2).all(|w| w[0] <= w[1]));
        assert!(summarize_classes(&[rec(3, 1.0, 1.0)], &["a".into()]).is_err());
    }

    #[test]
    fn correlations() {
        let a = [0.3, 0.1, 0.9, 0.5];
        assert_eq!(spearman(&a, &a).unwrap(), 1.0);
        assert_eq!(pearson(&a, &a).unwrap(), 1.0);
        let r = pearson(&[0.9, 0.5, 0.7], &[0.5, 0.9, 0.7]).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
        // Third point (0.7, 0.6) breaks the tie. By hand: deviations
        // dx = (0.2, -0.2, 0), dy = (-1/6, 7/30, -1/15), so
        // r = -0.08 / sqrt(0.08 * 0.0866...).
        let r = pearson(&[0.9, 0.5, 0.7], &[0.5, 0.9, 0.6]).unwrap();
        let oracle = -0.08 / (0.08f64 * (1.0 / 36.0 + 49.0 / 900.0 + 1.0 / 225.0)).sqrt();
        assert!(r < 0.0);
        assert!((r - oracle).abs() < 1e-12, "{r} vs {oracle}");
        assert!(pearson(&[1.0, 1.0], &[2.0, 3.0]).is_err());
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0]), vec![1.5, 3.0, 1.5]);
    }

    #[test]
    fn split_is_stratified_and_seeded() {
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let (tr, te) = stratified_split(&labels, 0.8, 1);
        assert_eq!(tr.len(), 40);
        assert_eq!(te.len(), 10);
        assert_eq!(stratified_split(&labels, 0.8, 1), (tr, te));
        let one = vec![0, 0, 0, 1];
        let (tr, te) = stratified_split(&one, 0.8, 0);
        let feats = DMatrix::from_fn(4, 2, |i, j| (i + j) as f64);
        assert!(matches!(
            probe_accuracy(&feats, &one, 2, &tr, &te, 1.0),
            Err(Error::DegenerateSplit { class: 1 })
        ));
    }

    #[test]
    fn planted_generator_is_deterministic_and_logit_neutral() {
        let cfg = PlantedConfig::new(12, 3, 6, 10, 0.0, 5);
        let a = generate_planted_bundle(&cfg).unwrap();
        let b = generate_planted_bundle(&cfg).unwrap();
        assert_eq!(a.bundle, b.bundle);
        assert_eq!(a.leak_classes, vec![0, 2]);

        let leaky = generate_planted_bundle(&PlantedConfig {
            leak_strength: 10.0,
            ..cfg
        })
        .unwrap();
        let w = a.bundle.head_weight_f64();
        let d = decompose_head(&w, RankTolerance::Machine).unwrap();
        for i in 0..a.bundle.num_samples() {
            let diff = leaky.bundle.feature(i) - a.bundle.feature(i);
            let principal = &d.proj_principal * &diff;
            // Differences live in the null space, up to f32 storage rounding.
            assert!(
                principal.norm() <= 1e-5 * (1.0 + a.bundle.feature(i).norm()),
                "sample {i}"
            );
            let label = a.bundle.label(i);
            if a.leak_classes.contains(&label) {
                assert!((diff.norm() - 10.0).abs() < 1e-4);
            } else {
                assert_eq!(diff.norm(), 0.0);
            }
            let drift = (&w * &diff).norm();
            assert!(drift <= 1e-4 * (1.0 + w.norm() * diff.norm()));
        }
        assert!(generate_planted_bundle(&PlantedConfig::new(3, 3, 2, 1, 0.0, 0)).is_err());
    }
}
