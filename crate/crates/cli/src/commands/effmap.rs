//! `nvsim effmap`: reduce a collection-efficiency map to the
//! (σ_loc^pillar, mean efficiency) curve over a σ0 sweep.

use std::path::Path;

use nvsim_core::photonics::{mean_efficiency, read_axis_sweeps_csv, read_grid_csv};

use crate::commands::fmt_f64;
use crate::config::{resolve, RunConfig};
use crate::manifest::ManifestBuilder;
use crate::CliError;

pub fn run(
    config: &RunConfig,
    config_bytes: &[u8],
    base_dir: &Path,
    out_dir: &Path,
) -> Result<(), CliError> {
    let section = config
        .effmap
        .as_ref()
        .ok_or_else(|| CliError::config("missing [effmap] section"))?;

    let map = match (&section.sweeps_csv, &section.grid_csv) {
        (Some(path), None) => read_axis_sweeps_csv(&resolve(base_dir, path), section.pillar_diameter_nm)
            .map_err(CliError::config_from)?,
        (None, Some(path)) => read_grid_csv(&resolve(base_dir, path), section.pillar_diameter_nm)
            .map_err(CliError::config_from)?,
        _ => {
            return Err(CliError::config(
                "[effmap] needs exactly one of sweeps_csv / grid_csv",
            ))
        }
    };
    if section.sigma0_grid_nm.is_empty() {
        return Err(CliError::config("[effmap] sigma0_grid_nm is empty"));
    }

    let mut manifest = ManifestBuilder::new(
        &config.scenario,
        "effmap",
        config_bytes,
        config.master_seed,
        out_dir,
    )?;

    let mut csv = String::from("sigma0_nm,sigma_loc_pillar_nm,mean_eta\n");
    for &sigma0 in &section.sigma0_grid_nm {
        let m = mean_efficiency(&map, sigma0).map_err(CliError::runtime_from)?;
        csv.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(sigma0),
            fmt_f64(m.sigma_loc_pillar_nm),
            fmt_f64(m.mean_eta)
        ));
    }
    manifest.write_file("efficiency_vs_sigma0.csv", csv.as_bytes())?;
    manifest.finish()
}
