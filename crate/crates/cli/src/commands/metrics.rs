use std::path::PathBuf;

use clap::Args as ClapArgs;
use serde::Serialize;
use sing_core::analysis::{summarize_classes, summarize_model, ClassProfile, ModelSummary, DEFAULT_CONFIDENCE};
use sing_core::decomposition::load_decomposition;
use sing_core::metrics::{batch_metrics, write_records_csv, write_records_json, PromptSelector};
use sing_core::translator::load_translator;

use crate::error::CliError;
use crate::output::{self, require_dirs, Format};

#[derive(ClapArgs)]
pub struct Args {
    pub bundle: PathBuf,
    pub decomposition: PathBuf,
    pub translator: PathBuf,

    /// `true-class`, `all`, `none` (IS only) or a prompt index
    #[arg(long, default_value = "true-class", value_parser = parse_prompts)]
    pub prompts: PromptSelector,

    /// Per-sample report
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,

    /// Also write a JSON model and per-class summary here
    #[arg(long)]
    pub summary: Option<PathBuf>,

    /// Confidence level of the summary ellipses
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE)]
    pub confidence: f64,
}

fn parse_prompts(s: &str) -> Result<PromptSelector, String> {
    match s {
        "true-class" => Ok(PromptSelector::TrueClass),
        "all" => Ok(PromptSelector::All),
        "none" => Ok(PromptSelector::ImageOnly),
        id => id
            .parse()
            .map(PromptSelector::Prompt)
            .map_err(|_| format!("expected true-class, all, none or a prompt index, got `{id}`")),
    }
}

#[derive(Serialize)]
struct Summary {
    model: ModelSummary,
    classes: Vec<ClassProfile>,
    skipped_samples: Vec<usize>,
}

pub fn run(args: Args) -> Result<(), CliError> {
    if !(args.confidence > 0.0 && args.confidence < 1.0) {
        return Err(CliError::Usage(format!(
            "--confidence must lie in (0, 1), got {}",
            args.confidence
        )));
    }
    require_dirs(&[&args.bundle, &args.decomposition, &args.translator])?;
    let bundle = super::load_bundle(&args.bundle)?;
    let decomp = load_decomposition(&args.decomposition)?;
    let t = load_translator(&args.translator)?;

    let batch = batch_metrics(&bundle, &decomp, &t, args.prompts)?;
    if !batch.skipped_samples.is_empty() {
        eprintln!(
            "warning: {} samples skipped (zero-norm translation): {:?}",
            batch.skipped_samples.len(),
            batch.skipped_samples
        );
    }

    let mut w = output::create(&args.out)?;
    match args.format {
        Format::Csv => write_records_csv(&batch.records, &mut w)?,
        Format::Json => write_records_json(&batch.records, &mut w)?,
    }
    output::finish(w, &args.out)?;

    if let Some(path) = &args.summary {
        let summary = Summary {
            model: summarize_model(&batch.records, &bundle.model_name, args.confidence)?,
            classes: summarize_classes(&batch.records, &bundle.class_names)?,
            skipped_samples: batch.skipped_samples.clone(),
        };
        output::write_json(path, &summary)?;
        let flagged: Vec<&str> = summary
            .classes
            .iter()
            .filter(|c| c.flagged)
            .map(|c| c.class_name.as_str())
            .collect();
        println!(
            "records={} mean_abs_AS={:.4} mean_IS={:.4} flagged={:?}",
            batch.records.len(),
            summary.model.as_stats.mean,
            summary.model.is_stats.mean,
            flagged
        );
    } else {
        println!("records={}", batch.records.len());
    }
    Ok(())
}
