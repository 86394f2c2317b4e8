use std::path::PathBuf;

use clap::Args as ClapArgs;
use sing_core::decomposition::{decompose_head, null_residual, save_decomposition, RankTolerance};

use crate::error::CliError;

#[derive(ClapArgs)]
pub struct Args {
    /// Feature bundle directory
    pub bundle: PathBuf,

    /// Rank cutoff: `machine`, `relative:<rho>` or `absolute:<tau>`
    #[arg(long, default_value = "machine", value_parser = parse_rank_tolerance)]
    pub rank_tol_mode: RankTolerance,

    /// Output directory for the decomposition
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_rank_tolerance(s: &str) -> Result<RankTolerance, String> {
    let value = |v: &str| -> Result<f64, String> {
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite() && *x >= 0.0)
            .ok_or_else(|| format!("expected a non-negative number, got `{v}`"))
    };
    match s.split_once(':') {
        None if s == "machine" => Ok(RankTolerance::Machine),
        Some(("relative", v)) => Ok(RankTolerance::Relative(value(v)?)),
        Some(("absolute", v)) => Ok(RankTolerance::Absolute(value(v)?)),
        _ => Err(format!("expected machine, relative:<rho> or absolute:<tau>, got `{s}`")),
    }
}

pub fn run(args: Args) -> Result<(), CliError> {
    let bundle = super::load_bundle(&args.bundle)?;
    let w = bundle.head_weight_f64();
    let decomp = decompose_head(&w, args.rank_tol_mode)?;
    save_decomposition(&decomp, &args.out)?;
    println!(
        "rank={} null_dim={} null_residual={:e} tau={:e}",
        decomp.rank,
        decomp.null_dim(),
        null_residual(&w, &decomp),
        decomp.rank_tolerance
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_tolerance_flags() {
        assert_eq!(parse_rank_tolerance("machine"), Ok(RankTolerance::Machine));
        assert_eq!(parse_rank_tolerance("relative:1e-6"), Ok(RankTolerance::Relative(1e-6)));
        assert_eq!(parse_rank_tolerance("absolute:0.5"), Ok(RankTolerance::Absolute(0.5)));
        assert!(parse_rank_tolerance("relative").is_err());
        assert!(parse_rank_tolerance("absolute:-1").is_err());
        assert!(parse_rank_tolerance("loose").is_err());
    }
}
