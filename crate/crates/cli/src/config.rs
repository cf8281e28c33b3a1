//! Run configuration schema.
//!
//! Every physical quantity carries its unit in the key name, unknown
//! keys are rejected, and alternative unit spellings (ppm·nm vs
//! atoms/cm², pC vs e⁻/cm²) are explicit fields of which exactly one
//! may be set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nvsim_core::diffusion::{LatticeConfig, Scenario};
use nvsim_core::geometry::{DeviceGeometry, DopedLayer};
use nvsim_core::sensitivity::{ParamDistribution, SensorDistributions, TauPolicy};
use nvsim_core::vacancy::BeamParams;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Human-readable scenario name, echoed into outputs.
    pub scenario: String,
    pub master_seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometrySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doped_layer: Option<LayerSection>,
    /// Optional second nitrogen layer (e.g. a substrate-interface peak).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interface_layer: Option<LayerSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beam: Option<BeamSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nitrogen_window: Option<WindowSection>,
    /// Extra doses for a multi-dose sweep with otherwise identical
    /// parameters.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dose_ladder: Option<DoseLadderSection>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub mle: Option<MleSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub localize: Option<LocalizeSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivitySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effmap: Option<EffmapSection>,
}

fn default_trials() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub kind: GeometryKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_diameter_nm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bottom_diameter_nm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height_nm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesa_side_nm: Option<f64>,
    pub slab_depth_cutoff_nm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    TaperedPillar,
    Mesa,
    Bulk,
}

impl GeometrySection {
    pub fn build(&self) -> Result<DeviceGeometry, CliError> {
        let need = |field: Option<f64>, name: &str| {
            field.ok_or_else(|| {
                CliError::config(format!("[geometry] {name} is required for {:?}", self.kind))
            })
        };
        let geom = match self.kind {
            GeometryKind::TaperedPillar => DeviceGeometry::tapered_pillar(
                need(self.top_diameter_nm, "top_diameter_nm")?,
                need(self.bottom_diameter_nm, "bottom_diameter_nm")?,
                need(self.height_nm, "height_nm")?,
                self.slab_depth_cutoff_nm,
            ),
            GeometryKind::Mesa => DeviceGeometry::mesa(
                need(self.mesa_side_nm, "mesa_side_nm")?,
                need(self.height_nm, "height_nm")?,
                self.slab_depth_cutoff_nm,
            ),
            GeometryKind::Bulk => DeviceGeometry::bulk(self.slab_depth_cutoff_nm),
        };
        geom.map_err(CliError::config_from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSection {
    pub depth_nm: f64,
    pub thickness_nm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub areal_density_per_cm2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub areal_density_ppm_nm: Option<f64>,
    /// Desk-scale statistics knob: multiplies the nitrogen density.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub density_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[allow(clippy::trivially_copy_pass_by_ref)]
fn is_one(v: &f64) -> bool {
    *v == 1.0
}

impl LayerSection {
    pub fn build(&self) -> Result<DopedLayer, CliError> {
        let layer = match (self.areal_density_per_cm2, self.areal_density_ppm_nm) {
            (Some(per_cm2), None) => {
                DopedLayer::from_atoms_per_cm2(self.depth_nm, self.thickness_nm, per_cm2)
            }
            (None, Some(ppm_nm)) => {
                DopedLayer::from_ppm_nm(self.depth_nm, self.thickness_nm, ppm_nm)
            }
            _ => {
                return Err(CliError::config(
                    "layer needs exactly one of areal_density_per_cm2 / areal_density_ppm_nm",
                ))
            }
        };
        let mut layer = layer.map_err(CliError::config_from)?;
        if !(self.density_scale.is_finite() && self.density_scale > 0.0) {
            return Err(CliError::config(format!(
                "density_scale must be positive, got {}",
                self.density_scale
            )));
        }
        layer.areal_density_per_cm2 *= self.density_scale;
        Ok(layer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamSection {
    pub spot_diameter_nm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dose_pc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dose_e_per_cm2: Option<f64>,
    pub vacancies_per_electron_per_um: f64,
    pub alpha: f64,
    pub depth_cutoff_nm: f64,
}

impl BeamSection {
    pub fn dose_pc(&self) -> Result<f64, CliError> {
        match (self.dose_pc, self.dose_e_per_cm2) {
            (Some(pc), None) => Ok(pc),
            (None, Some(e_cm2)) => Ok(BeamParams::dose_pc_from_e_per_cm2(e_cm2)),
            _ => Err(CliError::config(
                "[beam] needs exactly one of dose_pc / dose_e_per_cm2",
            )),
        }
    }

    pub fn build(&self) -> Result<BeamParams, CliError> {
        BeamParams::new(
            self.spot_diameter_nm,
            self.dose_pc()?,
            self.vacancies_per_electron_per_um,
            self.alpha,
            self.depth_cutoff_nm,
        )
        .map_err(CliError::config_from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub x_nm: f64,
    pub y_nm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub half_extent_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseLadderSection {
    pub doses_pc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram_csv: Option<PathBuf>,
    /// Inline counts for l = 0..4, alternative to the CSV.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<[u64; 5]>,
    /// As-grown control histogram for background subtraction.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub with_systematic: bool,
    #[serde(default = "default_systematic_sets")]
    pub systematic_sets: usize,
    #[serde(default = "default_systematic_set_size")]
    pub systematic_set_size: u64,
}

fn default_systematic_sets() -> usize {
    100
}

fn default_systematic_set_size() -> u64 {
    121
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default = "default_tile_size")]
    pub tile_size_nm: f64,
    pub sigma_psf_nm: f64,
    #[serde(default)]
    pub sigma_psf_err_nm: f64,
    pub sigma_sys_nm: f64,
    #[serde(default)]
    pub sigma_sys_err_nm: f64,
    #[serde(default = "default_radial_bin")]
    pub radial_bin_nm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_grid: Option<TargetGridSection>,
    /// Alternative input: NV positions and their common beam target.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions: Option<PositionsSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invert: Option<InvertSection>,
}

fn default_tile_size() -> f64 {
    2000.0
}

fn default_radial_bin() -> f64 {
    40.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetGridSection {
    pub origin_x_nm: f64,
    pub origin_y_nm: f64,
    pub spacing_nm: f64,
    pub n_cols: usize,
    pub n_rows: usize,
}

impl TargetGridSection {
    pub fn targets(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.n_cols * self.n_rows);
        for row in 0..self.n_rows {
            for col in 0..self.n_cols {
                out.push((
                    self.origin_x_nm + col as f64 * self.spacing_nm,
                    self.origin_y_nm + row as f64 * self.spacing_nm,
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionsSection {
    pub csv: PathBuf,
    pub target_x_nm: f64,
    pub target_y_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertSection {
    /// Target σ_loc; defaults to the value measured from the image or
    /// positions input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_loc_target_nm: Option<f64>,
    pub n_jumps_grid: Vec<u64>,
    pub trials_per_point: usize,
    #[serde(default = "default_fit_points")]
    pub fit_points: usize,
    #[serde(default = "default_min_events")]
    pub min_events: usize,
}

fn default_fit_points() -> usize {
    4
}

fn default_min_events() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySection {
    pub n_samples: usize,
    pub threshold_nt_per_sqrt_hz: f64,
    pub readout_window_ns: f64,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    /// Dipole orientation factor for the single-spin averaging-time axis.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_nv_depth")]
    pub nv_depth_nm: f64,
    pub tau: TauSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t2_us: Option<DistSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contrast: Option<DistSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pl_sat_cps: Option<DistSection>,
    /// Joint empirical samples: CSV with header t2_us,contrast,pl_sat_cps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint_samples_csv: Option<PathBuf>,
}

fn default_bins() -> usize {
    60
}

fn default_kappa() -> f64 {
    2.0
}

fn default_nv_depth() -> f64 {
    53.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauSection {
    pub policy: TauPolicyKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub two_tau_us: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauPolicyKind {
    TwoTauEqualsT2,
    Fixed,
}

impl TauSection {
    pub fn build(&self) -> Result<TauPolicy, CliError> {
        match self.policy {
            TauPolicyKind::TwoTauEqualsT2 => Ok(TauPolicy::TwoTauEqualsT2),
            TauPolicyKind::Fixed => {
                let two_tau_us = self.two_tau_us.ok_or_else(|| {
                    CliError::config("[sensitivity.tau] fixed policy needs two_tau_us")
                })?;
                Ok(TauPolicy::Fixed { two_tau_us })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistSection {
    pub dist: DistKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    Point,
    TruncatedNormal,
    Empirical,
}

impl DistSection {
    /// Build a marginal with physical default bounds `(lower, upper)`.
    pub fn build(
        &self,
        name: &str,
        default_lower: f64,
        default_upper: f64,
        base_dir: &Path,
    ) -> Result<ParamDistribution, CliError> {
        let dist = match self.dist {
            DistKind::Point => ParamDistribution::Point {
                value: self.value.ok_or_else(|| {
                    CliError::config(format!("[sensitivity.{name}] point needs value"))
                })?,
            },
            DistKind::TruncatedNormal => ParamDistribution::TruncatedNormal {
                mean: self.mean.ok_or_else(|| {
                    CliError::config(format!("[sensitivity.{name}] truncated_normal needs mean"))
                })?,
                sigma: self.sigma.ok_or_else(|| {
                    CliError::config(format!("[sensitivity.{name}] truncated_normal needs sigma"))
                })?,
                lower: self.lower.unwrap_or(default_lower),
                upper: self.upper.unwrap_or(default_upper),
            },
            DistKind::Empirical => {
                let path = self.csv.as_ref().ok_or_else(|| {
                    CliError::config(format!("[sensitivity.{name}] empirical needs csv"))
                })?;
                let samples = read_single_column_csv(&resolve(base_dir, path))?;
                ParamDistribution::Empirical { samples }
            }
        };
        dist.validate().map_err(CliError::config_from)?;
        Ok(dist)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffmapSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweeps_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_csv: Option<PathBuf>,
    pub pillar_diameter_nm: f64,
    pub sigma0_grid_nm: Vec<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("config parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = std::fs::read(path).map_err(|e| {
            CliError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| CliError::config(format!("{}: not UTF-8: {e}", path.display())))?;
        Ok((Self::parse(text)?, bytes))
    }

    /// Build the simulation scenario from the geometry/layer/beam/lattice
    /// sections, which must all be present.
    pub fn build_scenario(&self) -> Result<Scenario, CliError> {
        let geometry = self
            .geometry
            .as_ref()
            .ok_or_else(|| CliError::config("missing [geometry] section"))?
            .build()?;
        let mut layers = vec![self
            .doped_layer
            .as_ref()
            .ok_or_else(|| CliError::config("missing [doped_layer] section"))?
            .build()?];
        if let Some(interface) = &self.interface_layer {
            layers.push(interface.build()?);
        }
        let beam = self
            .beam
            .as_ref()
            .ok_or_else(|| CliError::config("missing [beam] section"))?
            .build()?;
        let lattice = *self
            .lattice
            .as_ref()
            .ok_or_else(|| CliError::config("missing [lattice] section"))?;
        lattice.validate().map_err(CliError::config_from)?;
        let target = self.target.unwrap_or(TargetSection { x_nm: 0.0, y_nm: 0.0 });

        let scenario = Scenario {
            geometry,
            layers,
            beam,
            lattice,
            target_x_nm: target.x_nm,
            target_y_nm: target.y_nm,
            nitrogen_window_half_nm: self.nitrogen_window.map(|w| w.half_extent_nm),
        };
        scenario.validate().map_err(CliError::config_from)?;
        Ok(scenario)
    }

    pub fn build_sensor_distributions(
        &self,
        base_dir: &Path,
    ) -> Result<(SensorDistributions, &SensitivitySection), CliError> {
        let section = self
            .sensitivity
            .as_ref()
            .ok_or_else(|| CliError::config("missing [sensitivity] section"))?;

        if let Some(joint_path) = &section.joint_samples_csv {
            if section.t2_us.is_some() || section.contrast.is_some() || section.pl_sat_cps.is_some()
            {
                return Err(CliError::config(
                    "joint_samples_csv excludes per-parameter distributions",
                ));
            }
            let rows = read_three_column_csv(&resolve(base_dir, joint_path))?;
            let dists = SensorDistributions {
                t2_us: ParamDistribution::Empirical {
                    samples: rows.iter().map(|r| r[0]).collect(),
                },
                contrast: ParamDistribution::Empirical {
                    samples: rows.iter().map(|r| r[1]).collect(),
                },
                pl_sat_cps: ParamDistribution::Empirical {
                    samples: rows.iter().map(|r| r[2]).collect(),
                },
                joint: true,
            };
            return Ok((dists, section));
        }

        let t2 = section
            .t2_us
            .as_ref()
            .ok_or_else(|| CliError::config("missing [sensitivity.t2_us]"))?
            .build("t2_us", 1e-3, f64::INFINITY, base_dir)?;
        let contrast = section
            .contrast
            .as_ref()
            .ok_or_else(|| CliError::config("missing [sensitivity.contrast]"))?
            .build("contrast", 1e-6, 1.0 - 1e-6, base_dir)?;
        let pl_sat = section
            .pl_sat_cps
            .as_ref()
            .ok_or_else(|| CliError::config("missing [sensitivity.pl_sat_cps]"))?
            .build("pl_sat_cps", 1e-3, f64::INFINITY, base_dir)?;
        Ok((
            SensorDistributions {
                t2_us: t2,
                contrast,
                pl_sat_cps: pl_sat,
                joint: false,
            },
            section,
        ))
    }
}

/// Paths in a config resolve relative to the config file's directory.
pub fn resolve(base_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_dir.join(path)
    }
}

pub fn read_single_column_csv(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match trimmed.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(e) if i == 0 => {
                let _ = e; // header row
            }
            Err(e) => {
                return Err(CliError::config(format!(
                    "{}:{}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::config(format!(
            "{}: no numeric rows",
            path.display()
        )));
    }
    Ok(out)
}

fn read_three_column_csv(path: &Path) -> Result<Vec<[f64; 3]>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if i == 0 && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if fields.len() != 3 {
            return Err(CliError::config(format!(
                "{}:{}: expected 3 columns",
                path.display(),
                i + 1
            )));
        }
        let mut row = [0.0; 3];
        for (slot, field) in row.iter_mut().zip(&fields) {
            *slot = field.parse::<f64>().map_err(|e| {
                CliError::config(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
        }
        out.push(row);
    }
    if out.is_empty() {
        return Err(CliError::config(format!(
            "{}: no numeric rows",
            path.display()
        )));
    }
    Ok(out)
}

/// Load an orientation histogram from CSV columns `(l, count)`.
pub fn read_histogram_csv(path: &Path) -> Result<[u64; 5], CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let mut counts = [0u64; 5];
    let mut seen = [false; 5];
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if i == 0 && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if fields.len() != 2 {
            return Err(CliError::config(format!(
                "{}:{}: expected columns (l, count)",
                path.display(),
                i + 1
            )));
        }
        let l: usize = fields[0].parse().map_err(|e| {
            CliError::config(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        if l > 4 {
            return Err(CliError::config(format!(
                "{}:{}: l must be 0..=4, got {l}",
                path.display(),
                i + 1
            )));
        }
        if seen[l] {
            return Err(CliError::config(format!(
                "{}:{}: duplicate row for l = {l}",
                path.display(),
                i + 1
            )));
        }
        seen[l] = true;
        counts[l] = fields[1].parse().map_err(|e| {
            CliError::config(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
    }
    Ok(counts)
}
