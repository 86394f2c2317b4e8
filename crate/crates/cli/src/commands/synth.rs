use std::path::PathBuf;

use clap::Args as ClapArgs;
use sing_core::analysis::{generate_planted_bundle, PlantedConfig};
use sing_core::bundle::write_bundle;

use crate::error::CliError;
use crate::output;

#[derive(ClapArgs)]
pub struct Args {
    /// Feature dimension
    #[arg(long)]
    pub m: usize,

    /// Number of classes
    #[arg(long)]
    pub c: usize,

    /// Joint-space embedding dimension
    #[arg(long)]
    pub n: usize,

    #[arg(long)]
    pub per_class: usize,

    /// Offset along the planted null direction for leaky classes
    #[arg(long, default_value_t = 0.0)]
    pub leak: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output bundle directory; ground truth goes to `ground_truth.json` inside it
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: Args) -> Result<(), CliError> {
    let cfg = PlantedConfig::new(args.m, args.c, args.n, args.per_class, args.leak, args.seed);
    let planted = generate_planted_bundle(&cfg)?;
    write_bundle(&planted.bundle, &args.out)?;
    let null_dir: Vec<f64> = planted.null_dirs.column(0).iter().copied().collect();
    output::write_json(
        &args.out.join("ground_truth.json"),
        &serde_json::json!({
            "leak_classes": planted.leak_classes,
            "leak_strength": args.leak,
            "null_dirs": [null_dir],
        }),
    )?;
    println!(
        "samples={} leak_classes={:?}",
        planted.bundle.num_samples(),
        planted.leak_classes
    );
    Ok(())
}
