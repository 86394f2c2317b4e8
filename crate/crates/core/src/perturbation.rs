//! Equivalent features: perturbations of `f` that keep the logits fixed.
//!
//! * Null removal: `f_eq = f - P_n f`.
//! * Text-gradient steering: take the gradient of the cosine similarity
//!   `s(f) = cos(Theta f, z_text)` with respect to `f`, project it onto the null
//!   space, normalise, and step: `f_eps = f + eps * d^`. The step is either
//!   given or calibrated so that the Image Score hits a target angle.
//! * Matched-norm baselines (random Gaussian, principal direction) used to
//!   show that null perturbations are the only ones that leave logits alone.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{logits, HeadDecomposition, Subspace};
use crate::error::{Error, Result};
use crate::linalg::{check_len, rescale_to_norm};
use crate::metrics::{angle, image_score};
use crate::rng::{gaussian_vector, sample_stream, seeded};
use crate::translator::Translator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteeringMode {
    NullRemoval,
    TextGradient,
    Random,
    Principal,
}

impl SteeringMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SteeringMode::NullRemoval => "null_removal",
            SteeringMode::TextGradient => "text_gradient",
            SteeringMode::Random => "random",
            SteeringMode::Principal => "principal",
        }
    }

    /// Modes whose displacement is confined to the null space.
    pub fn is_null(self) -> bool {
        matches!(self, SteeringMode::NullRemoval | SteeringMode::TextGradient)
    }
}

/// Direction used by the principal baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrincipalDirection {
    /// Top right-singular vector of `W`, signed to raise the predicted logit.
    #[default]
    TopSingular,
    /// Row of `W` for the predicted class (the gradient of that logit).
    PredictedClassRow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Accepted |IS - target| in degrees.
    pub tolerance: f64,
    pub max_bisection_steps: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            tolerance: 0.1,
            max_bisection_steps: 60,
        }
    }
}

/// Upper limit on bracket doublings (the bracket may grow by 2^60).
pub const MAX_BRACKET_DOUBLINGS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringSpec {
    pub mode: SteeringMode,
    pub target_text: Option<DVector<f64>>,
    pub epsilon: Option<f64>,
    pub target_is_degrees: Option<f64>,
    pub seed: u64,
    pub principal: PrincipalDirection,
    pub calibration: CalibrationOptions,
}

impl SteeringSpec {
    pub fn null_removal() -> Self {
        Self {
            mode: SteeringMode::NullRemoval,
            target_text: None,
            epsilon: None,
            target_is_degrees: None,
            seed: 0,
            principal: PrincipalDirection::default(),
            calibration: CalibrationOptions::default(),
        }
    }

    pub fn text_gradient(target_text: DVector<f64>) -> Self {
        Self {
            mode: SteeringMode::TextGradient,
            target_text: Some(target_text),
            ..Self::null_removal()
        }
    }

    pub fn random(seed: u64) -> Self {
        Self {
            mode: SteeringMode::Random,
            seed,
            ..Self::null_removal()
        }
    }

    pub fn principal() -> Self {
        Self {
            mode: SteeringMode::Principal,
            ..Self::null_removal()
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = Some(epsilon);
        self
    }

    pub fn with_target_is(mut self, degrees: f64) -> Self {
        self.target_is_degrees = Some(degrees);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == SteeringMode::TextGradient && self.target_text.is_none() {
            return Err(Error::InvalidSpec(
                "text_gradient requires a target text embedding".into(),
            ));
        }
        match (self.mode, self.epsilon, self.target_is_degrees) {
            (SteeringMode::NullRemoval, None, None) => Ok(()),
            (SteeringMode::NullRemoval, _, _) => Err(Error::InvalidSpec(
                "null_removal takes neither epsilon nor a target IS".into(),
            )),
            (_, Some(_), Some(_)) | (_, None, None) => Err(Error::InvalidSpec(format!(
                "{} needs exactly one of epsilon / target IS",
                self.mode.as_str()
            ))),
            (_, Some(e), None) if !(e.is_finite() && e >= 0.0) => {
                Err(Error::InvalidSpec(format!("epsilon must be finite and >= 0, got {e}")))
            }
            (_, None, Some(t)) if !(0.0..180.0).contains(&t) => {
                Err(Error::InvalidSpec(format!("target IS must lie in [0, 180), got {t}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringResult {
    pub mode: SteeringMode,
    pub f_original: DVector<f64>,
    pub f_perturbed: DVector<f64>,
    pub epsilon_used: f64,
    /// Degrees.
    pub achieved_is: f64,
    /// `||l(f_perturbed) - l(f_original)||_2`.
    pub logit_drift: f64,
    /// `||P_n d||` of the raw direction before normalisation.
    pub direction_norm_in_null: f64,
}

impl SteeringResult {
    pub fn displacement(&self) -> DVector<f64> {
        &self.f_perturbed - &self.f_original
    }
}

pub fn null_removal(f: &DVector<f64>, decomp: &HeadDecomposition) -> Result<DVector<f64>> {
    Ok(f - decomp.project(f, Subspace::Null)?)
}

/// Cosine similarity between `Theta f` and `z_text`, in [-1, 1].
pub fn similarity_score(f: &DVector<f64>, z_text: &DVector<f64>, t: &Translator) -> Result<f64> {
    let z = t.translate(f)?;
    check_len("similarity_score: text", z.len(), z_text)?;
    let denom = z.norm() * z_text.norm();
    if denom == 0.0 {
        return Err(Error::ZeroNorm("similarity_score".into()));
    }
    Ok((z.dot(z_text) / denom).clamp(-1.0, 1.0))
}

/// Analytic gradient of [`similarity_score`] with respect to `f`:
/// `Theta^T (w - (u.w) u) / |z|` with `z = Theta f`, `u = z/|z|`, `w = z_text/|z_text|`.
pub fn semantic_gradient(f: &DVector<f64>, z_text: &DVector<f64>, t: &Translator) -> Result<DVector<f64>> {
    let z = t.translate(f)?;
    check_len("semantic_gradient: text", z.len(), z_text)?;
    let (nz, nt) = (z.norm(), z_text.norm());
    if nz == 0.0 {
        return Err(Error::ZeroNorm("translated feature in semantic_gradient".into()));
    }
    if nt == 0.0 {
        return Err(Error::ZeroNorm("text embedding in semantic_gradient".into()));
    }
    let u = z / nz;
    let w = z_text / nt;
    let tangent = &w - &u * u.dot(&w);
    Ok(t.theta.tr_mul(&tangent) / nz)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub epsilon: f64,
    pub achieved_is: f64,
    pub bisection_steps: usize,
}

/// Finds `eps >= 0` with `|IS(f, f + eps d) - target| <= tol`.
///
/// The bracket starts at the scale where `eps * Theta d` matches `|Theta f|`
/// and doubles until it straddles the target; bisection then converges on the
/// smallest crossing inside it.
pub fn calibrate_epsilon(
    f: &DVector<f64>,
    direction: &DVector<f64>,
    t: &Translator,
    target_is: f64,
    options: CalibrationOptions,
) -> Result<Calibration> {
    check_len("calibrate_epsilon: direction", f.len(), direction)?;
    if target_is == 0.0 {
        return Ok(Calibration {
            epsilon: 0.0,
            achieved_is: 0.0,
            bisection_steps: 0,
        });
    }
    if !(target_is > 0.0 && target_is < 180.0) {
        return Err(Error::InvalidSpec(format!(
            "target IS must lie in (0, 180), got {target_is}"
        )));
    }
    if direction.norm().is_nan() || (direction.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSpec("calibration direction must be unit norm".into()));
    }
    let z = t.translate(f)?;
    let y = t.translate(direction)?;
    if z.norm() == 0.0 {
        return Err(Error::ZeroNorm("translated feature in calibration".into()));
    }
    let is_at = |eps: f64| angle(&z, &(&z + &y * eps));

    let start = z.norm() / y.norm();
    if !start.is_finite() || start == 0.0 {
        return Err(Error::Calibration(
            "direction is annihilated by the translator; no bracket".into(),
        ));
    }
    let (mut lo, mut hi) = (0.0, start);
    let mut doublings = 0;
    loop {
        let is = is_at(hi)?;
        if (is - target_is).abs() <= options.tolerance {
            return Ok(Calibration {
                epsilon: hi,
                achieved_is: is,
                bisection_steps: 0,
            });
        }
        if is > target_is {
            break;
        }
        if doublings == MAX_BRACKET_DOUBLINGS {
            return Err(Error::Calibration(format!(
                "no bracket within 2^{MAX_BRACKET_DOUBLINGS} scale (IS saturates at {is:.4} deg)"
            )));
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
    }
    for step in 1..=options.max_bisection_steps {
        let mid = 0.5 * (lo + hi);
        let is = is_at(mid)?;
        if (is - target_is).abs() <= options.tolerance {
            return Ok(Calibration {
                epsilon: mid,
                achieved_is: is,
                bisection_steps: step,
            });
        }
        if is < target_is {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Calibration(format!(
        "no convergence to {target_is} deg within {} bisection steps",
        options.max_bisection_steps
    )))
}

/// Rescales `z_eq` to the norm of `z_ref`, keeping its direction.
pub fn rescale_to_reference(z_eq: &DVector<f64>, z_ref: &DVector<f64>) -> Result<DVector<f64>> {
    rescale_to_norm(z_eq, z_ref.norm(), "rescale_to_reference")
}

fn predicted_class(w: &DMatrix<f64>, bias: Option<&DVector<f64>>, f: &DVector<f64>) -> Result<usize> {
    let l = logits(w, bias, f)?;
    Ok(l.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0))
}

/// Unit principal-baseline direction for feature `f`.
pub fn principal_direction(
    f: &DVector<f64>,
    decomp: &HeadDecomposition,
    w: &DMatrix<f64>,
    bias: Option<&DVector<f64>>,
    choice: PrincipalDirection,
) -> Result<DVector<f64>> {
    let pred = predicted_class(w, bias, f)?;
    match choice {
        PrincipalDirection::TopSingular => {
            let v = decomp
                .top_direction()
                .ok_or_else(|| Error::ZeroNorm("head has no principal direction".into()))?;
            let along = w.row(pred).transpose().dot(&v);
            Ok(if along < 0.0 { -v } else { v })
        }
        PrincipalDirection::PredictedClassRow => {
            rescale_to_norm(&w.row(pred).transpose(), 1.0, "predicted-class head row")
        }
    }
}

/// Unit isotropic Gaussian direction from the seeded stream.
pub fn random_direction(seed: u64, dim: usize) -> Result<DVector<f64>> {
    let g = gaussian_vector(&mut seeded(seed), dim);
    rescale_to_norm(&g, 1.0, "random direction")
}

pub fn steer(
    f: &DVector<f64>,
    spec: &SteeringSpec,
    decomp: &HeadDecomposition,
    t: &Translator,
    w: &DMatrix<f64>,
    bias: Option<&DVector<f64>>,
) -> Result<SteeringResult> {
    spec.validate()?;
    check_len("steer: feature", decomp.feature_dim(), f)?;

    let (f_perturbed, epsilon_used, direction_norm_in_null) = match spec.mode {
        SteeringMode::NullRemoval => {
            let null_part = decomp.project(f, Subspace::Null)?;
            let norm = null_part.norm();
            (f - null_part, norm, norm)
        }
        mode => {
            let raw = match mode {
                SteeringMode::TextGradient => {
                    let z_text = spec.target_text.as_ref().expect("validated");
                    let grad = semantic_gradient(f, z_text, t)?;
                    let d = decomp.project(&grad, Subspace::Null)?;
                    let norm = d.norm();
                    if norm == 0.0 || norm <= 1e-12 * grad.norm() {
                        return Err(Error::VanishingNullGradient { norm });
                    }
                    d
                }
                SteeringMode::Random => gaussian_vector(&mut seeded(spec.seed), f.len()),
                SteeringMode::Principal => principal_direction(f, decomp, w, bias, spec.principal)?,
                SteeringMode::NullRemoval => unreachable!(),
            };
            let in_null = decomp.project(&raw, Subspace::Null)?.norm();
            let unit = rescale_to_norm(&raw, 1.0, "steering direction")?;
            let eps = match (spec.epsilon, spec.target_is_degrees) {
                (Some(e), _) => e,
                (None, Some(target)) => calibrate_epsilon(f, &unit, t, target, spec.calibration)?.epsilon,
                (None, None) => unreachable!("validated"),
            };
            (f + unit * eps, eps, in_null)
        }
    };

    let achieved_is = image_score(f, &f_perturbed, t)?;
    let logit_drift = (logits(w, bias, &f_perturbed)? - logits(w, bias, f)?).norm();
    Ok(SteeringResult {
        mode: spec.mode,
        f_original: f.clone(),
        f_perturbed,
        epsilon_used,
        achieved_is,
        logit_drift,
        direction_norm_in_null,
    })
}

/// How a batch of calibrated steers shares its step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CalibrationGranularity {
    /// Calibrate each sample to the target IS.
    #[default]
    PerSample,
    /// Calibrate each sample, then re-steer every sample with the median step.
    ModelMedian,
}

/// Steers every row of `features`. Random mode uses the per-sample seed
/// `seed ^ sample_id`, so results do not depend on scheduling.
pub fn steer_batch(
    features: &DMatrix<f64>,
    spec: &SteeringSpec,
    decomp: &HeadDecomposition,
    t: &Translator,
    w: &DMatrix<f64>,
    bias: Option<&DVector<f64>>,
    granularity: CalibrationGranularity,
) -> Vec<Result<SteeringResult>> {
    steer_batch_with(features, |_| spec.clone(), decomp, t, w, bias, granularity)
}

/// [`steer_batch`] with a spec per sample, e.g. a per-sample target prompt.
/// The seed of `spec_for(i)` is still combined with `i`.
pub fn steer_batch_with<F>(
    features: &DMatrix<f64>,
    spec_for: F,
    decomp: &HeadDecomposition,
    t: &Translator,
    w: &DMatrix<f64>,
    bias: Option<&DVector<f64>>,
    granularity: CalibrationGranularity,
) -> Vec<Result<SteeringResult>>
where
    F: Fn(usize) -> SteeringSpec + Sync,
{
    let run = |fixed_epsilon: Option<f64>| -> Vec<Result<SteeringResult>> {
        (0..features.nrows())
            .into_par_iter()
            .map(|i| {
                let mut s = spec_for(i);
                s.seed ^= i as u64;
                if let Some(eps) = fixed_epsilon {
                    s.target_is_degrees = None;
                    s.epsilon = Some(eps);
                }
                steer(&features.row(i).transpose(), &s, decomp, t, w, bias)
            })
            .collect()
    };
    let first = run(None);
    let calibrated = features.nrows() > 0 && spec_for(0).target_is_degrees.is_some();
    if granularity == CalibrationGranularity::PerSample || !calibrated {
        return first;
    }
    let mut eps: Vec<f64> = first
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .map(|r| r.epsilon_used)
        .collect();
    if eps.is_empty() {
        return first;
    }
    eps.sort_by(f64::total_cmp);
    run(Some(crate::analysis::quantile_sorted(&eps, 0.5)))
}

/// Null-space validation: logit drift of null removal versus
/// random and principal perturbations of the same norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationTrial {
    pub trial: usize,
    pub sample_id: usize,
    pub reference_norm: f64,
    pub null_drift: f64,
    pub random_drift: f64,
    pub principal_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub n_trials: usize,
    /// Trials skipped because the feature had no null component.
    pub skipped: usize,
    pub max_null_drift: f64,
    pub mean_null_drift: f64,
    pub mean_random_drift: f64,
    pub mean_principal_drift: f64,
    /// Fraction of trials with random drift strictly above null drift.
    pub random_exceeds_null: f64,
    /// Null trials within `1e-4 * (1 + ||W||_F ||delta||)`.
    pub null_within_bound: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub summary: ValidationSummary,
    pub trials: Vec<ValidationTrial>,
}

/// Bound on logit drift for a null-space displacement of norm `delta_norm`.
pub fn null_drift_bound(w: &DMatrix<f64>, delta_norm: f64) -> f64 {
    1e-4 * (1.0 + w.norm() * delta_norm)
}

/// Runs `n_trials` matched-norm comparisons, cycling through the rows of
/// `features`. Trial `k` draws its random direction from `seed ^ k`.
pub fn validate_null_space(
    features: &DMatrix<f64>,
    decomp: &HeadDecomposition,
    w: &DMatrix<f64>,
    bias: Option<&DVector<f64>>,
    n_trials: usize,
    seed: u64,
    principal: PrincipalDirection,
) -> Result<ValidationReport> {
    if features.nrows() == 0 || n_trials == 0 {
        return Err(Error::EmptyInput("validation trials"));
    }
    let drift = |delta: &DVector<f64>, f: &DVector<f64>| -> Result<f64> {
        Ok((logits(w, bias, &(f + delta))? - logits(w, bias, f)?).norm())
    };
    let trials: Vec<Option<ValidationTrial>> = (0..n_trials)
        .into_par_iter()
        .map(|k| -> Result<Option<ValidationTrial>> {
            let sample_id = k % features.nrows();
            let f = features.row(sample_id).transpose();
            let null_delta = -decomp.project(&f, Subspace::Null)?;
            let norm = null_delta.norm();
            if norm == 0.0 {
                return Ok(None);
            }
            let g = gaussian_vector(&mut sample_stream(seed, k as u64), f.len());
            let random_delta = rescale_to_norm(&g, norm, "random baseline")?;
            let principal_delta = principal_direction(&f, decomp, w, bias, principal)? * norm;
            Ok(Some(ValidationTrial {
                trial: k,
                sample_id,
                reference_norm: norm,
                null_drift: drift(&null_delta, &f)?,
                random_drift: drift(&random_delta, &f)?,
                principal_drift: drift(&principal_delta, &f)?,
            }))
        })
        .collect::<Result<_>>()?;

    let skipped = trials.iter().filter(|t| t.is_none()).count();
    let trials: Vec<ValidationTrial> = trials.into_iter().flatten().collect();
    let n = trials.len().max(1) as f64;
    let mean = |g: fn(&ValidationTrial) -> f64| trials.iter().map(g).sum::<f64>() / n;
    let summary = ValidationSummary {
        n_trials,
        skipped,
        max_null_drift: trials.iter().map(|t| t.null_drift).fold(0.0, f64::max),
        mean_null_drift: mean(|t| t.null_drift),
        mean_random_drift: mean(|t| t.random_drift),
        mean_principal_drift: mean(|t| t.principal_drift),
        random_exceeds_null: trials.iter().filter(|t| t.random_drift > t.null_drift).count() as f64 / n,
        null_within_bound: trials
            .iter()
            .filter(|t| t.null_drift <= null_drift_bound(w, t.reference_norm))
            .count(),
    };
    Ok(ValidationReport { summary, trials })
}

/// One row of a steering report.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringRow {
    pub sample_id: usize,
    pub mode: SteeringMode,
    pub epsilon_used: f64,
    pub achieved_is_deg: f64,
    pub logit_drift: f64,
    /// `(prompt_id, AS in degrees)` for each requested prompt.
    pub attribute_scores: Vec<(usize, f64)>,
}

/// CSV with columns `sample_id,mode,epsilon_used,achieved_is_deg,logit_drift`
/// followed by `AS_<prompt_id>_deg` per prompt (taken from the first row).
pub fn write_steering_csv<W: Write>(rows: &[SteeringRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["sample_id", "mode", "epsilon_used", "achieved_is_deg", "logit_drift"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if let Some(first) = rows.first() {
        header.extend(first.attribute_scores.iter().map(|(p, _)| format!("AS_{p}_deg")));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.sample_id.to_string(),
            r.mode.as_str().to_string(),
            r.epsilon_used.to_string(),
            r.achieved_is_deg.to_string(),
            r.logit_drift.to_string(),
        ];
        rec.extend(r.attribute_scores.iter().map(|(_, a)| a.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn write_steering_json<W: Write>(rows: &[SteeringRow], out: W) -> Result<()> {
    let value: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "sample_id": r.sample_id,
                "mode": r.mode.as_str(),
                "epsilon_used": r.epsilon_used,
                "achieved_is_deg": r.achieved_is_deg,
                "logit_drift": r.logit_drift,
                "attribute_scores": r.attribute_scores.iter()
                    .map(|(p, a)| serde_json::json!({"prompt_id": p, "AS_deg": a}))
                    .collect::<Vec<_>>(),
            })
        })
        .collect();
    serde_json::to_writer_pretty(out, &value)?;
    Ok(())
}
