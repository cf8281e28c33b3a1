//! Physical constants and fixed unit conversions.
//!
//! Every conversion used anywhere in the crate is pinned here so that a
//! unit slip cannot hide in a call site.

/// Electrons of charge per picocoulomb (1 pC / e).
pub const ELECTRONS_PER_PC: f64 = 6.2415e6;

/// Area-equivalent dose conversion: electrons per cm² per picocoulomb.
pub const E_PER_CM2_PER_PC: f64 = 2e18;

/// Diamond conventional-cell edge in nm.
pub const DIAMOND_CELL_EDGE_NM: f64 = 0.357;

/// Diamond conventional-cell volume in nm³ (edge³, 8 carbon atoms per cell).
pub const DIAMOND_UNIT_CELL_VOLUME_NM3: f64 =
    DIAMOND_CELL_EDGE_NM * DIAMOND_CELL_EDGE_NM * DIAMOND_CELL_EDGE_NM;

/// Carbon number density of diamond in nm⁻³.
pub const CARBON_DENSITY_PER_NM3: f64 = 8.0 / DIAMOND_UNIT_CELL_VOLUME_NM3;

/// Conversion factor: 1 ppm·nm of a substitutional species → atoms/cm².
///
/// ppm is relative to the carbon density; 1 nm of depth integrates the
/// volume density onto an areal one (1 nm = 1e-7 cm, 1 nm⁻³ = 1e21 cm⁻³).
pub const PPM_NM_TO_ATOMS_PER_CM2: f64 = CARBON_DENSITY_PER_NM3 * 1e-6 * 1e14;

/// FWHM of a Gaussian divided by its standard deviation: 2√(2 ln 2).
pub const FWHM_OVER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Reduced Planck constant in J·s.
pub const HBAR_J_S: f64 = 1.054_571_817e-34;

/// Bohr magneton in J/T.
pub const BOHR_MAGNETON_J_PER_T: f64 = 9.274_010_078_3e-24;

/// NV electronic g factor (fixed at 2 for sensitivity evaluation).
pub const G_ELECTRON: f64 = 2.0;

/// µ0 / 4π in T·m/A.
pub const MU0_OVER_4PI: f64 = 1e-7;

/// Nanometers per centimeter.
pub const NM_PER_CM: f64 = 1e7;

/// Nanometers per micrometer.
pub const NM_PER_UM: f64 = 1e3;
