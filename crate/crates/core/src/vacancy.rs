//! Parametric vacancy source for focused electron-beam irradiation.
//!
//! A 200 keV beam creates a narrow depth-spanning column of vacancies.
//! Full electron-transport simulation is summarized by three facts:
//! vacancies appear at a fixed rate per electron per µm of depth, the
//! depth profile is uniform over the considered range, and the lateral
//! spread stays confined to the beam spot at all depths. A dimensionless
//! prefactor `alpha` absorbs recombination and clustering losses, so the
//! effective NV-forming vacancy count is `alpha × N_V^max`.
//!
//! Cascade displacements are omitted: the maximum energy transfer from a
//! 200 keV electron to carbon is below the threshold for a displaced atom
//! to displace further ones. The threshold displacement energy itself
//! (35 eV) never enters this parametric model.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::constants::{ELECTRONS_PER_PC, E_PER_CM2_PER_PC, FWHM_OVER_SIGMA, NM_PER_UM};
use crate::geometry::{DeviceGeometry, Point3};
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Electron-beam exposure parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    /// Beam spot FWHM in nm.
    pub spot_diameter_nm: f64,
    /// Delivered charge in pC.
    pub dose_pc: f64,
    /// Vacancy creation rate per electron per µm of depth.
    pub vacancies_per_electron_per_um: f64,
    /// Prefactor relating the idealized vacancy count to the effective
    /// count of NV-forming monovacancies.
    pub alpha: f64,
    /// Depth below which generated vacancies are discarded, in nm.
    pub depth_cutoff_nm: f64,
}

impl BeamParams {
    pub fn new(
        spot_diameter_nm: f64,
        dose_pc: f64,
        vacancies_per_electron_per_um: f64,
        alpha: f64,
        depth_cutoff_nm: f64,
    ) -> Result<Self> {
        if !(spot_diameter_nm.is_finite() && spot_diameter_nm > 0.0) {
            return Err(Error::Parameter(format!(
                "spot_diameter_nm must be positive, got {spot_diameter_nm}"
            )));
        }
        if !(dose_pc.is_finite() && dose_pc >= 0.0) {
            return Err(Error::Parameter(format!(
                "dose_pc must be ≥ 0, got {dose_pc}"
            )));
        }
        if !(vacancies_per_electron_per_um.is_finite() && vacancies_per_electron_per_um > 0.0) {
            return Err(Error::Parameter(format!(
                "vacancies_per_electron_per_um must be positive, got {vacancies_per_electron_per_um}"
            )));
        }
        if !(alpha.is_finite() && (0.0..=1.0).contains(&alpha)) {
            return Err(Error::Parameter(format!(
                "alpha must be in [0, 1], got {alpha}"
            )));
        }
        if !(depth_cutoff_nm.is_finite() && depth_cutoff_nm > 0.0) {
            return Err(Error::Parameter(format!(
                "depth_cutoff_nm must be positive, got {depth_cutoff_nm}"
            )));
        }
        Ok(Self {
            spot_diameter_nm,
            dose_pc,
            vacancies_per_electron_per_um,
            alpha,
            depth_cutoff_nm,
        })
    }

    /// Electrons of charge delivered by the dose.
    pub fn electron_count(&self) -> f64 {
        self.dose_pc * ELECTRONS_PER_PC
    }

    /// Convert an area-equivalent dose in e⁻/cm² to pC.
    pub fn dose_pc_from_e_per_cm2(e_per_cm2: f64) -> f64 {
        e_per_cm2 / E_PER_CM2_PER_PC
    }

    /// Area-equivalent dose in e⁻/cm².
    pub fn dose_e_per_cm2(&self) -> f64 {
        self.dose_pc * E_PER_CM2_PER_PC
    }
}

/// Diffusing monovacancy positions produced by one exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct VacancyEnsemble {
    pub positions: Vec<Point3>,
    /// Beam target center on the top surface.
    pub origin_spot: Point3,
}

/// Idealized maximum vacancy count for a dose:
/// `N_V^max = electrons × rate × depth_cutoff`.
pub fn max_vacancy_count(beam: &BeamParams) -> f64 {
    beam.electron_count() * beam.vacancies_per_electron_per_um * (beam.depth_cutoff_nm / NM_PER_UM)
}

/// Generate the vacancy pencil for a beam aimed at `target` (a point on
/// the top surface, `z = 0`).
///
/// The count is Poisson with mean `alpha × N_V^max`; depths are uniform
/// in `(0, depth_cutoff]`; lateral offsets are an isotropic 2-D Gaussian
/// whose FWHM equals the spot diameter. Positions falling outside the
/// device solid are discarded at generation.
pub fn generate_vacancies(
    beam: &BeamParams,
    geom: &DeviceGeometry,
    target: Point3,
    rng_seed: u64,
) -> Result<VacancyEnsemble> {
    if beam.depth_cutoff_nm <= 0.0 || !beam.depth_cutoff_nm.is_finite() {
        return Err(Error::Parameter(format!(
            "depth_cutoff_nm must be positive, got {}",
            beam.depth_cutoff_nm
        )));
    }
    if target.z != 0.0 {
        return Err(Error::Parameter(format!(
            "beam target must lie on the top surface (z = 0), got z = {}",
            target.z
        )));
    }

    let mean = beam.alpha * max_vacancy_count(beam);
    let mut rng = rng_from_seed(rng_seed);
    let n = if mean > 0.0 {
        let dist = Poisson::new(mean)
            .map_err(|e| Error::Parameter(format!("Poisson({mean}): {e}")))?;
        dist.sample(&mut rng) as u64
    } else {
        0
    };

    let sigma = beam.spot_diameter_nm / FWHM_OVER_SIGMA;
    let lateral = Normal::new(0.0, sigma)
        .map_err(|e| Error::Parameter(format!("lateral profile: {e}")))?;

    let mut positions = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let x = target.x + lateral.sample(&mut rng);
        let y = target.y + lateral.sample(&mut rng);
        // Uniform over (0, cutoff]: flip the half-open range of the sampler.
        let z = beam.depth_cutoff_nm - rng.random_range(0.0..beam.depth_cutoff_nm);
        let p = Point3::new(x, y, z);
        if geom.contains(p) {
            positions.push(p);
        }
    }
    Ok(VacancyEnsemble {
        positions,
        origin_spot: target,
    })
}
