pub mod decompose;
pub mod fit_translator;
pub mod metrics;
pub mod steer;
pub mod synth;
pub mod validate;

use std::path::Path;

use sing_core::bundle::read_bundle;
use sing_core::FeatureBundle;

use crate::error::CliError;
use crate::output::require_dirs;

pub fn load_bundle(dir: &Path) -> Result<FeatureBundle, CliError> {
    require_dirs(&[dir])?;
    Ok(read_bundle(dir, true)?)
}
