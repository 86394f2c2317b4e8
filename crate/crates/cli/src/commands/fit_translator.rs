use std::path::PathBuf;

use clap::Args as ClapArgs;
use sing_core::translator::{default_lambda, fit_translator, save_translator};

use crate::error::CliError;

#[derive(ClapArgs)]
pub struct Args {
    /// Feature bundle directory (features and joint-space image embeddings)
    pub bundle: PathBuf,

    /// Ridge strength on the summed objective [default: 0.1 * N]
    #[arg(long)]
    pub lambda: Option<f64>,

    /// Output directory for the translator
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: Args) -> Result<(), CliError> {
    let bundle = super::load_bundle(&args.bundle)?;
    let lambda = args.lambda.unwrap_or_else(|| default_lambda(bundle.num_samples()));
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(CliError::Usage(format!(
            "--lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let t = fit_translator(&bundle.features_f64(), &bundle.clip_image_f64(), lambda)?;
    save_translator(&t, &args.out)?;
    println!(
        "lambda={} train_mse={:e} train_mean_cosine={:.6} theta_norm={:.6} n_samples={}",
        lambda,
        t.fit_report.train_mse,
        t.fit_report.train_mean_cosine,
        t.theta.norm(),
        t.fit_report.n_samples
    );
    Ok(())
}
