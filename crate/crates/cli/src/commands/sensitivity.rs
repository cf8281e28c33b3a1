//! `nvsim sensitivity`: sample the AC-sensitivity distribution, emit
//! histogram/CDF CSVs and the yield fraction below threshold.

use std::path::Path;

use serde::Serialize;

use nvsim_core::sensitivity::{sample_yield, single_spin_averaging_time_s};

use crate::commands::fmt_f64;
use crate::config::RunConfig;
use crate::manifest::ManifestBuilder;
use crate::CliError;

#[derive(Debug, Serialize)]
struct YieldOutput {
    scenario: String,
    n_samples: usize,
    threshold_t_per_sqrt_hz: f64,
    yield_fraction: f64,
    median_eta_t_per_sqrt_hz: f64,
    /// Minimum averaging time for the median sensor to resolve a single
    /// electron spin at the configured depth.
    median_single_spin_time_s: f64,
    nv_depth_nm: f64,
    kappa: f64,
}

pub fn run(
    config: &RunConfig,
    config_bytes: &[u8],
    base_dir: &Path,
    out_dir: &Path,
) -> Result<(), CliError> {
    let (dists, section) = config.build_sensor_distributions(base_dir)?;
    let tau_policy = section.tau.build()?;
    let threshold = section.threshold_nt_per_sqrt_hz * 1e-9;

    let analysis = sample_yield(
        &dists,
        section.readout_window_ns,
        tau_policy,
        section.n_samples,
        threshold,
        config.master_seed,
    )
    .map_err(CliError::runtime_from)?;

    let mut manifest = ManifestBuilder::new(
        &config.scenario,
        "sensitivity",
        config_bytes,
        config.master_seed,
        out_dir,
    )?;

    // Histogram at the configured bin count.
    let dist = nvsim_core::sensitivity::SensitivityDistribution::from_samples(
        analysis.distribution.sorted_samples.clone(),
        section.histogram_bins,
    )
    .map_err(CliError::runtime_from)?;
    let mut hist_csv = String::from("eta_lo_T_per_sqrtHz,eta_hi_T_per_sqrtHz,count\n");
    for (i, count) in dist.histogram_counts.iter().enumerate() {
        hist_csv.push_str(&format!(
            "{},{},{count}\n",
            fmt_f64(dist.histogram_edges[i]),
            fmt_f64(dist.histogram_edges[i + 1])
        ));
    }
    manifest.write_file("eta_histogram.csv", hist_csv.as_bytes())?;

    // CDF on a decile-dense grid: every percentile of the sample.
    let mut cdf_csv = String::from("eta_T_per_sqrtHz,cdf\n");
    let n = dist.sorted_samples.len();
    let stride = (n / 1000).max(1);
    for i in (0..n).step_by(stride) {
        let eta = dist.sorted_samples[i];
        cdf_csv.push_str(&format!("{},{}\n", fmt_f64(eta), fmt_f64(dist.cdf(eta))));
    }
    let last = dist.sorted_samples[n - 1];
    cdf_csv.push_str(&format!("{},{}\n", fmt_f64(last), fmt_f64(1.0)));
    manifest.write_file("eta_cdf.csv", cdf_csv.as_bytes())?;

    let median = dist.median();
    manifest.write_json(
        "yield.json",
        &YieldOutput {
            scenario: config.scenario.clone(),
            n_samples: section.n_samples,
            threshold_t_per_sqrt_hz: threshold,
            yield_fraction: analysis.yield_fraction,
            median_eta_t_per_sqrt_hz: median,
            median_single_spin_time_s: single_spin_averaging_time_s(
                median,
                section.nv_depth_nm,
                section.kappa,
            )
            .map_err(CliError::runtime_from)?,
            nv_depth_nm: section.nv_depth_nm,
            kappa: section.kappa,
        },
    )?;
    manifest.finish()
}
