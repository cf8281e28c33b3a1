//! `nvsim mle-fit`: orientation-histogram → fitted λ with CI, optional
//! as-grown background subtraction and bootstrap systematic error.

use std::path::Path;

use serde::Serialize;

use nvsim_core::estimators::{
    fit_lambda, subtract_as_grown, systematic_uncertainty, BackgroundSubtracted,
    OrientationHistogram, MleResult,
};
use nvsim_core::rng::derive_seed;

use crate::config::{read_histogram_csv, resolve, RunConfig};
use crate::manifest::ManifestBuilder;
use crate::CliError;

#[derive(Debug, Serialize)]
struct MleOutput {
    scenario: String,
    counts: [u64; 5],
    n_sites: u64,
    fit: MleResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    control: Option<MleResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    background_subtracted: Option<BackgroundSubtracted>,
}

pub fn run(
    config: &RunConfig,
    config_bytes: &[u8],
    base_dir: &Path,
    out_dir: &Path,
) -> Result<(), CliError> {
    let section = config
        .mle
        .as_ref()
        .ok_or_else(|| CliError::config("missing [mle] section"))?;

    let counts = match (&section.histogram_csv, section.counts) {
        (Some(path), None) => read_histogram_csv(&resolve(base_dir, path))?,
        (None, Some(counts)) => counts,
        _ => {
            return Err(CliError::config(
                "[mle] needs exactly one of histogram_csv / counts",
            ))
        }
    };
    let hist = OrientationHistogram::new(counts).map_err(CliError::config_from)?;

    let mut manifest = ManifestBuilder::new(
        &config.scenario,
        "mle-fit",
        config_bytes,
        config.master_seed,
        out_dir,
    )?;

    let mut fit = fit_lambda(&hist).map_err(CliError::runtime_from)?;
    if section.with_systematic {
        let sys = systematic_uncertainty(
            fit.lambda_hat,
            section.systematic_sets,
            section.systematic_set_size,
            derive_seed(config.master_seed, "systematic", 0),
        )
        .map_err(CliError::runtime_from)?;
        fit.systematic_sigma = Some(sys.rms_error);
    }

    let (control, background_subtracted) = match &section.control_csv {
        Some(path) => {
            let control_counts = read_histogram_csv(&resolve(base_dir, path))?;
            let control_hist =
                OrientationHistogram::new(control_counts).map_err(CliError::config_from)?;
            let control_fit = fit_lambda(&control_hist).map_err(CliError::runtime_from)?;
            let net = subtract_as_grown(&fit, &control_fit);
            (Some(control_fit), Some(net))
        }
        None => (None, None),
    };

    manifest.write_json(
        "mle.json",
        &MleOutput {
            scenario: config.scenario.clone(),
            counts,
            n_sites: hist.n_sites(),
            fit,
            control,
            background_subtracted,
        },
    )?;
    manifest.finish()
}
