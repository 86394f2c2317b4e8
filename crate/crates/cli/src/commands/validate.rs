use std::path::PathBuf;

use clap::{Args as ClapArgs, ValueEnum};
use sing_core::decomposition::load_decomposition;
use sing_core::perturbation::{validate_null_space, PrincipalDirection};

use crate::error::CliError;
use crate::output::{self, require_dirs};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Principal {
    TopSingular,
    PredictedRow,
}

#[derive(ClapArgs)]
pub struct Args {
    pub bundle: PathBuf,
    pub decomposition: PathBuf,

    #[arg(long, default_value_t = 1000)]
    pub n_trials: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Direction of the principal baseline
    #[arg(long, value_enum, default_value = "top-singular")]
    pub principal: Principal,

    /// JSON report with the summary and every trial
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: Args) -> Result<(), CliError> {
    require_dirs(&[&args.bundle, &args.decomposition])?;
    let bundle = super::load_bundle(&args.bundle)?;
    let decomp = load_decomposition(&args.decomposition)?;
    let principal = match args.principal {
        Principal::TopSingular => PrincipalDirection::TopSingular,
        Principal::PredictedRow => PrincipalDirection::PredictedClassRow,
    };
    let w = bundle.head_weight_f64();
    let bias = bundle.head_bias_f64();
    let report = validate_null_space(
        &bundle.features_f64(),
        &decomp,
        &w,
        bias.as_ref(),
        args.n_trials,
        args.seed,
        principal,
    )?;
    output::write_json(&args.out, &report)?;
    let s = &report.summary;
    println!(
        "trials={} skipped={} max_null_drift={:e} mean_random_drift={:.6} mean_principal_drift={:.6} random_exceeds_null={:.4} null_within_bound={}",
        s.n_trials,
        s.skipped,
        s.max_null_drift,
        s.mean_random_drift,
        s.mean_principal_drift,
        s.random_exceeds_null,
        s.null_within_bound
    );
    Ok(())
}
