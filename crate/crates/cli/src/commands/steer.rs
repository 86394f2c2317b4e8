use std::path::PathBuf;

use clap::{Args as ClapArgs, ValueEnum};
use sing_core::decomposition::load_decomposition;
use sing_core::linalg::row;
use sing_core::metrics::attribute_score;
use sing_core::perturbation::{
    steer_batch, write_steering_csv, write_steering_json, CalibrationGranularity, CalibrationOptions,
    PrincipalDirection, SteeringRow, SteeringSpec,
};
use sing_core::translator::load_translator;

use crate::error::CliError;
use crate::output::{self, require_dirs, Format};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    NullRemoval,
    TextGradient,
    Random,
    Principal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Granularity {
    PerSample,
    ModelMedian,
}

#[derive(ClapArgs)]
pub struct Args {
    pub bundle: PathBuf,
    pub decomposition: PathBuf,
    pub translator: PathBuf,

    #[arg(long, value_enum)]
    pub mode: Mode,

    /// Prompt index: the target of text-gradient steering, and the prompt
    /// the report's AS column is measured against
    #[arg(long)]
    pub prompt: Option<usize>,

    /// Calibrate the step so IS reaches this many degrees
    #[arg(long, conflicts_with = "epsilon")]
    pub target_is: Option<f64>,

    /// Fixed step length
    #[arg(long)]
    pub epsilon: Option<f64>,

    /// Accepted |IS - target| in degrees
    #[arg(long, default_value_t = 0.1)]
    pub tolerance: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, value_enum, default_value = "per-sample")]
    pub granularity: Granularity,

    /// Use the predicted-class row of W as the principal direction
    #[arg(long)]
    pub principal_row: bool,

    /// Report samples that fail numerically as warnings and exit 0
    #[arg(long)]
    pub skip_failures: bool,

    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

pub fn run(args: Args) -> Result<(), CliError> {
    require_dirs(&[&args.bundle, &args.decomposition, &args.translator])?;
    let bundle = super::load_bundle(&args.bundle)?;
    let decomp = load_decomposition(&args.decomposition)?;
    let t = load_translator(&args.translator)?;

    let text = bundle.text_embeddings_f64();
    let target = match (args.prompt, &text) {
        (Some(p), Some(text)) if p < text.nrows() => Some(row(text, p)),
        (Some(p), _) => {
            return Err(CliError::Usage(format!(
                "--prompt {p} out of range ({} prompts in bundle)",
                text.as_ref().map_or(0, |t| t.nrows())
            )))
        }
        (None, _) => None,
    };

    let mut spec = match args.mode {
        Mode::NullRemoval => SteeringSpec::null_removal(),
        Mode::TextGradient => SteeringSpec::text_gradient(
            target
                .clone()
                .ok_or_else(|| CliError::Usage("--mode text-gradient requires --prompt".into()))?,
        ),
        Mode::Random => SteeringSpec::random(args.seed),
        Mode::Principal => SteeringSpec::principal(),
    };
    spec.epsilon = args.epsilon;
    spec.target_is_degrees = args.target_is;
    spec.calibration = CalibrationOptions {
        tolerance: args.tolerance,
        ..CalibrationOptions::default()
    };
    if args.principal_row {
        spec.principal = PrincipalDirection::PredictedClassRow;
    }
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let granularity = match args.granularity {
        Granularity::PerSample => CalibrationGranularity::PerSample,
        Granularity::ModelMedian => CalibrationGranularity::ModelMedian,
    };

    let w = bundle.head_weight_f64();
    let bias = bundle.head_bias_f64();
    let features = bundle.features_f64();
    let results = steer_batch(&features, &spec, &decomp, &t, &w, bias.as_ref(), granularity);

    let mut rows = Vec::with_capacity(results.len());
    let mut failed = 0;
    for (i, r) in results.into_iter().enumerate() {
        let step = r.and_then(|r| {
            let scores = match (&target, args.prompt) {
                (Some(z), Some(p)) => vec![(p, attribute_score(&r.f_original, &r.f_perturbed, z, &t)?)],
                _ => Vec::new(),
            };
            Ok(SteeringRow {
                sample_id: i,
                mode: r.mode,
                epsilon_used: r.epsilon_used,
                achieved_is_deg: r.achieved_is,
                logit_drift: r.logit_drift,
                attribute_scores: scores,
            })
        });
        match step {
            Ok(row) => rows.push(row),
            Err(e) if e.is_numerical() => {
                eprintln!("warning: sample {i}: {e}");
                failed += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }

    let mut out = output::create(&args.out)?;
    match args.format {
        Format::Csv => write_steering_csv(&rows, &mut out)?,
        Format::Json => write_steering_json(&rows, &mut out)?,
    }
    output::finish(out, &args.out)?;

    println!("mode={} rows={} failed={}", spec.mode.as_str(), rows.len(), failed);
    if failed > 0 && !args.skip_failures {
        return Err(CliError::PartialFailure {
            failed,
            total: features.nrows(),
        });
    }
    Ok(())
}
