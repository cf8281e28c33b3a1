//! Parametric device geometry and nitrogen placement.
//!
//! Coordinates are in nanometers. `z` is measured downward from the top
//! surface, so the top face sits at `z = 0` and depth increases with `z`.
//! The device axis is at `x = y = 0`.
//!
//! Etched structures (pillars, mesas) stand on the unetched substrate:
//! below the structure height the solid continues laterally unbounded
//! until `slab_depth_cutoff`, where the simulation domain ends.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::constants::PPM_NM_TO_ATOMS_PER_CM2;
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// A point in the device frame (nm, z downward from the top surface).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Parametric solid with absorbing boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DeviceGeometry {
    /// Pillar whose sidewall tapers outward going down, standing on substrate.
    TaperedPillar {
        top_diameter_nm: f64,
        bottom_diameter_nm: f64,
        height_nm: f64,
        slab_depth_cutoff_nm: f64,
    },
    /// Square mesa (unetched plateau) standing on substrate.
    Mesa {
        side_nm: f64,
        height_nm: f64,
        slab_depth_cutoff_nm: f64,
    },
    /// Laterally unbounded slab with only top and bottom faces.
    Bulk { slab_depth_cutoff_nm: f64 },
}

impl DeviceGeometry {
    pub fn tapered_pillar(
        top_diameter_nm: f64,
        bottom_diameter_nm: f64,
        height_nm: f64,
        slab_depth_cutoff_nm: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("top_diameter_nm", top_diameter_nm),
            ("bottom_diameter_nm", bottom_diameter_nm),
            ("height_nm", height_nm),
            ("slab_depth_cutoff_nm", slab_depth_cutoff_nm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Geometry(format!("{name} must be positive, got {v}")));
            }
        }
        if top_diameter_nm > bottom_diameter_nm {
            return Err(Error::Geometry(format!(
                "pillar must taper outward going down: top {top_diameter_nm} > bottom {bottom_diameter_nm}"
            )));
        }
        if slab_depth_cutoff_nm < height_nm {
            return Err(Error::Geometry(format!(
                "slab_depth_cutoff_nm {slab_depth_cutoff_nm} < height_nm {height_nm}"
            )));
        }
        Ok(Self::TaperedPillar {
            top_diameter_nm,
            bottom_diameter_nm,
            height_nm,
            slab_depth_cutoff_nm,
        })
    }

    pub fn mesa(side_nm: f64, height_nm: f64, slab_depth_cutoff_nm: f64) -> Result<Self> {
        for (name, v) in [
            ("side_nm", side_nm),
            ("height_nm", height_nm),
            ("slab_depth_cutoff_nm", slab_depth_cutoff_nm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Geometry(format!("{name} must be positive, got {v}")));
            }
        }
        if slab_depth_cutoff_nm < height_nm {
            return Err(Error::Geometry(format!(
                "slab_depth_cutoff_nm {slab_depth_cutoff_nm} < height_nm {height_nm}"
            )));
        }
        Ok(Self::Mesa {
            side_nm,
            height_nm,
            slab_depth_cutoff_nm,
        })
    }

    pub fn bulk(slab_depth_cutoff_nm: f64) -> Result<Self> {
        if !(slab_depth_cutoff_nm.is_finite() && slab_depth_cutoff_nm > 0.0) {
            return Err(Error::Geometry(format!(
                "slab_depth_cutoff_nm must be positive, got {slab_depth_cutoff_nm}"
            )));
        }
        Ok(Self::Bulk {
            slab_depth_cutoff_nm,
        })
    }

    /// Bottom of the simulation domain.
    pub fn slab_depth_cutoff_nm(&self) -> f64 {
        match *self {
            Self::TaperedPillar {
                slab_depth_cutoff_nm,
                ..
            }
            | Self::Mesa {
                slab_depth_cutoff_nm,
                ..
            }
            | Self::Bulk {
                slab_depth_cutoff_nm,
            } => slab_depth_cutoff_nm,
        }
    }

    /// Height of the etched structure; the full domain depth for bulk.
    pub fn structure_height_nm(&self) -> f64 {
        match *self {
            Self::TaperedPillar { height_nm, .. } | Self::Mesa { height_nm, .. } => height_nm,
            Self::Bulk {
                slab_depth_cutoff_nm,
            } => slab_depth_cutoff_nm,
        }
    }

    /// Pillar radius bound at depth `z`, interpolated linearly from
    /// `top_diameter/2` at the surface to `bottom_diameter/2` at the base.
    fn pillar_radius_at(top_d: f64, bottom_d: f64, height: f64, z: f64) -> f64 {
        let r_top = 0.5 * top_d;
        let r_bottom = 0.5 * bottom_d;
        r_top + (r_bottom - r_top) * (z / height)
    }

    /// Strict interior test. Points on a face, sidewall or edge are outside.
    pub fn contains(&self, p: Point3) -> bool {
        if !p.is_finite() {
            return false;
        }
        match *self {
            Self::TaperedPillar {
                top_diameter_nm,
                bottom_diameter_nm,
                height_nm,
                slab_depth_cutoff_nm,
            } => {
                if p.z <= 0.0 || p.z >= slab_depth_cutoff_nm {
                    return false;
                }
                if p.z >= height_nm {
                    return true; // substrate below the pillar base
                }
                let r = Self::pillar_radius_at(
                    top_diameter_nm,
                    bottom_diameter_nm,
                    height_nm,
                    p.z,
                );
                p.x * p.x + p.y * p.y < r * r
            }
            Self::Mesa {
                side_nm,
                height_nm,
                slab_depth_cutoff_nm,
            } => {
                if p.z <= 0.0 || p.z >= slab_depth_cutoff_nm {
                    return false;
                }
                if p.z >= height_nm {
                    return true;
                }
                let half = 0.5 * side_nm;
                p.x.abs() < half && p.y.abs() < half
            }
            Self::Bulk {
                slab_depth_cutoff_nm,
            } => p.z > 0.0 && p.z < slab_depth_cutoff_nm,
        }
    }

    /// Half-extents `(hx, hy)` of a lateral box bounding every cross
    /// section with `z` in `[z_lo, z_hi]`. `None` when the cross section
    /// is laterally unbounded there (bulk, or substrate below an etched
    /// structure).
    pub fn lateral_half_extents(&self, z_lo: f64, z_hi: f64) -> Option<(f64, f64)> {
        match *self {
            Self::TaperedPillar {
                top_diameter_nm,
                bottom_diameter_nm,
                height_nm,
                ..
            } => {
                if z_hi >= height_nm {
                    return None;
                }
                let r = Self::pillar_radius_at(
                    top_diameter_nm,
                    bottom_diameter_nm,
                    height_nm,
                    z_hi.max(z_lo),
                );
                Some((r, r))
            }
            Self::Mesa {
                side_nm, height_nm, ..
            } => {
                if z_hi >= height_nm {
                    return None;
                }
                Some((0.5 * side_nm, 0.5 * side_nm))
            }
            Self::Bulk { .. } => None,
        }
    }
}

/// The δ-doped nitrogen layer, modeled as a uniform slab.
///
/// The SIMS profile is a narrow Gaussian; a uniform slab of the stated
/// thickness is used instead because the thickness (a few nm) is far
/// below every lateral scale in the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DopedLayer {
    pub depth_nm: f64,
    pub thickness_nm: f64,
    /// Nitrogen areal density in atoms/cm².
    pub areal_density_per_cm2: f64,
}

impl DopedLayer {
    pub fn from_atoms_per_cm2(
        depth_nm: f64,
        thickness_nm: f64,
        areal_density_per_cm2: f64,
    ) -> Result<Self> {
        if !(depth_nm.is_finite() && depth_nm > 0.0) {
            return Err(Error::Parameter(format!(
                "layer depth_nm must be positive, got {depth_nm}"
            )));
        }
        if !(thickness_nm.is_finite() && thickness_nm > 0.0) {
            return Err(Error::Parameter(format!(
                "layer thickness_nm must be positive, got {thickness_nm}"
            )));
        }
        if !(areal_density_per_cm2.is_finite() && areal_density_per_cm2 >= 0.0) {
            return Err(Error::Parameter(format!(
                "areal density must be non-negative, got {areal_density_per_cm2}"
            )));
        }
        Ok(Self {
            depth_nm,
            thickness_nm,
            areal_density_per_cm2,
        })
    }

    pub fn from_ppm_nm(depth_nm: f64, thickness_nm: f64, ppm_nm: f64) -> Result<Self> {
        Self::from_atoms_per_cm2(depth_nm, thickness_nm, ppm_nm * PPM_NM_TO_ATOMS_PER_CM2)
    }

    pub fn ppm_nm(&self) -> f64 {
        self.areal_density_per_cm2 / PPM_NM_TO_ATOMS_PER_CM2
    }

    pub fn areal_density_per_nm2(&self) -> f64 {
        self.areal_density_per_cm2 / 1e14
    }

    /// Depth interval `[depth − thickness/2, depth + thickness/2]`.
    pub fn z_range(&self) -> (f64, f64) {
        (
            self.depth_nm - 0.5 * self.thickness_nm,
            self.depth_nm + 0.5 * self.thickness_nm,
        )
    }

    /// Layer must sit strictly inside the etched structure (or slab).
    pub fn validate_for(&self, geom: &DeviceGeometry) -> Result<()> {
        let (z_lo, z_hi) = self.z_range();
        if z_lo <= 0.0 {
            return Err(Error::Geometry(format!(
                "doped layer reaches the top surface (z_lo = {z_lo} nm)"
            )));
        }
        let limit = geom.structure_height_nm();
        if z_hi >= limit {
            return Err(Error::Geometry(format!(
                "doped layer bottom {z_hi} nm is not above the structure height {limit} nm"
            )));
        }
        Ok(())
    }
}

/// Fixed substitutional nitrogen positions with per-atom consumption flags.
#[derive(Debug, Clone, PartialEq)]
pub struct NitrogenEnsemble {
    pub positions: Vec<Point3>,
    pub consumed: Vec<bool>,
}

impl NitrogenEnsemble {
    pub fn from_positions(positions: Vec<Point3>) -> Self {
        let consumed = vec![false; positions.len()];
        Self {
            positions,
            consumed,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

fn poisson_count(mean: f64, rng: &mut impl Rng) -> Result<u64> {
    if mean < 0.0 || !mean.is_finite() {
        return Err(Error::Parameter(format!("Poisson mean must be finite and ≥ 0, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean)
        .map_err(|e| Error::Parameter(format!("Poisson({mean}): {e}")))?;
    Ok(dist.sample(rng) as u64)
}

/// Sample a nitrogen ensemble over a lateral box centered at
/// `(center_x, center_y)` with the given half-extent, intersected with
/// the solid. The count is Poisson with mean `density × box area`,
/// thinned by containment, so the kept points form a homogeneous Poisson
/// process on the intersection.
pub fn sample_nitrogen_windowed(
    geom: &DeviceGeometry,
    layer: &DopedLayer,
    center_x: f64,
    center_y: f64,
    half_extent_nm: f64,
    rng_seed: u64,
) -> Result<NitrogenEnsemble> {
    if !(half_extent_nm.is_finite() && half_extent_nm > 0.0) {
        return Err(Error::Parameter(format!(
            "window half extent must be positive, got {half_extent_nm}"
        )));
    }
    layer.validate_for(geom)?;
    let (z_lo, z_hi) = layer.z_range();
    let box_area_nm2 = (2.0 * half_extent_nm) * (2.0 * half_extent_nm);
    let mean = layer.areal_density_per_nm2() * box_area_nm2;

    let mut rng = rng_from_seed(rng_seed);
    let n = poisson_count(mean, &mut rng)?;
    let mut positions = Vec::new();
    for _ in 0..n {
        let x = center_x + rng.random_range(-half_extent_nm..half_extent_nm);
        let y = center_y + rng.random_range(-half_extent_nm..half_extent_nm);
        let z = rng.random_range(z_lo..z_hi);
        let p = Point3::new(x, y, z);
        if geom.contains(p) {
            positions.push(p);
        }
    }
    Ok(NitrogenEnsemble::from_positions(positions))
}

/// Sample nitrogen over the full lateral cross section of the device at
/// the layer depth. Count is Poisson with mean `areal density × cross
/// section`; positions are uniform within the layer slab intersected
/// with the solid; reproducible for a fixed seed.
///
/// Bulk devices have no finite cross section; use
/// [`sample_nitrogen_windowed`] for those.
pub fn sample_nitrogen(
    geom: &DeviceGeometry,
    layer: &DopedLayer,
    rng_seed: u64,
) -> Result<NitrogenEnsemble> {
    layer.validate_for(geom)?;
    let (z_lo, z_hi) = layer.z_range();
    let (hx, _hy) = geom.lateral_half_extents(z_lo, z_hi).ok_or_else(|| {
        Error::UnboundedDomain(
            "device has no finite lateral cross section at the layer depth; \
             use sample_nitrogen_windowed"
                .into(),
        )
    })?;
    sample_nitrogen_windowed(geom, layer, 0.0, 0.0, hx, rng_seed)
}
