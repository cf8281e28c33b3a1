//! Lateral positioning-precision analysis.
//!
//! The measured spread of averaged emission spots decomposes as
//! `σ_tot² = σ_loc² + σ_PSF² + σ_sys²`: the placement precision of the
//! formation technique, the optical point-spread function, and residual
//! registration error after affine correction. This module extracts
//! `σ_loc` from images or simulated NV positions and inverts the
//! simulated `σ_loc(N_jumps)` curve for a diffusion constant.

mod affine;
mod gaussian;
pub mod image;

pub use affine::{fit_affine, AffineTransform2D};
pub use gaussian::{fit_gaussian2d, GaussianFit2D};
pub use image::{
    radial_profile, read_image, synthesize_spot_array, tile_average, write_image_binary,
    write_image_text, PixelImage, RadialBin, SpotArraySpec, TileStats,
};

use serde::{Deserialize, Serialize};

use crate::diffusion::{simulate_ensemble, Scenario};
use crate::fit::linear_regression;
use crate::geometry::Point3;
use crate::rng::derive_seed;
use crate::{Error, Result};

/// A value with a 1σ uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub sigma: f64,
}

impl Measured {
    pub fn exact(value: f64) -> Self {
        Self { value, sigma: 0.0 }
    }
}

/// The quadrature budget σ_tot² = σ_loc² + σ_PSF² + σ_sys².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceBudget {
    pub sigma_tot_nm: f64,
    pub sigma_loc_nm: f64,
    pub sigma_psf_nm: f64,
    pub sigma_sys_nm: f64,
    /// 1σ uncertainty on σ_loc from first-order propagation, when the
    /// inputs carried uncertainties.
    pub sigma_loc_err_nm: Option<f64>,
}

impl VarianceBudget {
    /// Compose a budget from its components; the total is exact by
    /// construction.
    pub fn from_components(sigma_loc: f64, sigma_psf: f64, sigma_sys: f64) -> Result<Self> {
        for (name, v) in [
            ("sigma_loc", sigma_loc),
            ("sigma_psf", sigma_psf),
            ("sigma_sys", sigma_sys),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Parameter(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        Ok(Self {
            sigma_tot_nm: (sigma_loc * sigma_loc + sigma_psf * sigma_psf + sigma_sys * sigma_sys)
                .sqrt(),
            sigma_loc_nm: sigma_loc,
            sigma_psf_nm: sigma_psf,
            sigma_sys_nm: sigma_sys,
            sigma_loc_err_nm: None,
        })
    }
}

/// `σ_loc = √(σ_tot² − σ_PSF² − σ_sys²)`.
///
/// A negative radicand means the measured total sits below the
/// instrument floor; the error reports the deficit.
pub fn decompose_sigma(sigma_tot: f64, sigma_psf: f64, sigma_sys: f64) -> Result<f64> {
    for (name, v) in [
        ("sigma_tot", sigma_tot),
        ("sigma_psf", sigma_psf),
        ("sigma_sys", sigma_sys),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Parameter(format!("{name} must be ≥ 0, got {v}")));
        }
    }
    let radicand = sigma_tot * sigma_tot - sigma_psf * sigma_psf - sigma_sys * sigma_sys;
    // Roundoff guard: a total composed exactly at the boundary can land a
    // few ulps below zero.
    let roundoff = 32.0 * f64::EPSILON * sigma_tot * sigma_tot;
    if radicand < -roundoff {
        return Err(Error::OutOfRange(format!(
            "σ_loc unresolvable below the instrument floor: σ_tot² deficit of {:.3} nm",
            (-radicand).sqrt()
        )));
    }
    Ok(radicand.max(0.0).sqrt())
}

/// [`decompose_sigma`] with first-order error propagation.
pub fn decompose_sigma_measured(
    sigma_tot: Measured,
    sigma_psf: Measured,
    sigma_sys: Measured,
) -> Result<Measured> {
    let loc = decompose_sigma(sigma_tot.value, sigma_psf.value, sigma_sys.value)?;
    // ∂σ_loc/∂σ_i = ±σ_i/σ_loc; diverges at the σ_loc → 0 boundary.
    let num = (sigma_tot.value * sigma_tot.sigma).powi(2)
        + (sigma_psf.value * sigma_psf.sigma).powi(2)
        + (sigma_sys.value * sigma_sys.sigma).powi(2);
    let err = if num == 0.0 { 0.0 } else { num.sqrt() / loc };
    Ok(Measured {
        value: loc,
        sigma: err,
    })
}

/// Pooled per-axis RMS deviation of NV positions from the beam target:
/// `σ_loc = √(Σ[(x−x_t)² + (y−y_t)²] / (2N))`.
pub fn sigma_loc_from_positions(
    positions: &[Point3],
    target_x_nm: f64,
    target_y_nm: f64,
) -> Result<f64> {
    if positions.len() < 2 {
        return Err(Error::Degenerate(format!(
            "σ_loc needs ≥ 2 positions, got {}",
            positions.len()
        )));
    }
    let sum: f64 = positions
        .iter()
        .map(|p| (p.x - target_x_nm).powi(2) + (p.y - target_y_nm).powi(2))
        .sum();
    Ok((sum / (2.0 * positions.len() as f64)).sqrt())
}

/// Lower bound on the vacancy diffusion constant from the observation
/// that the diffusion length exceeds the smaller pillar radius:
/// `2√(2 D t) > φ/2` inverted to `D_min = (φ/4)² / (2 t)`.
pub fn diffusion_lower_bound(pillar_diameter_nm: f64, t_anneal_s: f64) -> f64 {
    let quarter = pillar_diameter_nm / 4.0;
    quarter * quarter / (2.0 * t_anneal_s)
}

/// Options for the `σ_loc(N_jumps)` sweep and power-law inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionOptions {
    /// Jump counts to simulate, ascending.
    pub n_jumps_grid: Vec<u64>,
    pub trials_per_point: usize,
    pub seed: u64,
    /// Number of largest-N grid points entering the power-law fit.
    pub fit_points: usize,
    /// Minimum NV events per grid point for a usable σ_loc.
    pub min_events: usize,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            n_jumps_grid: vec![1_000, 2_000, 4_000, 8_000, 16_000, 32_000, 64_000],
            trials_per_point: 24,
            seed: 0,
            fit_points: 5,
            min_events: 100,
        }
    }
}

/// Result of inverting a target σ_loc for a jump count and diffusion
/// constant via `D = a² N / (6 t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionInversion {
    pub n_jumps: f64,
    pub diffusion_constant_nm2_per_s: f64,
    /// Power law σ_loc = prefactor · N^exponent fitted on the large-N end.
    pub prefactor: f64,
    pub exponent: f64,
    pub r_squared: f64,
    /// Simulated (N_jumps, σ_loc_nm) curve.
    pub curve: Vec<(f64, f64)>,
}

/// Simulate σ_loc over a jump-count grid, fit the large-N power law, and
/// invert it at `sigma_loc_target_nm`. The scenario's lattice provides
/// `a` and `t_anneal`; its diffusion constant is overridden per grid
/// point so that the jump count matches exactly.
pub fn invert_diffusion_constant(
    sigma_loc_target_nm: f64,
    scenario: &Scenario,
    options: &InversionOptions,
) -> Result<DiffusionInversion> {
    if !(sigma_loc_target_nm.is_finite() && sigma_loc_target_nm > 0.0) {
        return Err(Error::Parameter(format!(
            "target σ_loc must be positive, got {sigma_loc_target_nm}"
        )));
    }
    if options.n_jumps_grid.len() < 2 || options.fit_points < 2 {
        return Err(Error::Parameter(
            "inversion needs ≥ 2 grid points and ≥ 2 fit points".into(),
        ));
    }
    let mut grid = options.n_jumps_grid.clone();
    grid.sort_unstable();

    let mut curve = Vec::with_capacity(grid.len());
    for &n_jumps in &grid {
        let mut point_scenario = scenario.clone();
        point_scenario.lattice.diffusion_constant_nm2_per_s = scenario
            .lattice
            .diffusion_constant_for_jumps(n_jumps as f64);
        let run = simulate_ensemble(
            &point_scenario,
            options.trials_per_point,
            derive_seed(options.seed, "njumps", n_jumps),
        )?;
        let positions: Vec<Point3> = run
            .outcomes
            .iter()
            .flat_map(|o| o.nv_records.iter().map(|r| r.position))
            .collect();
        if positions.len() < options.min_events {
            return Err(Error::Degenerate(format!(
                "only {} NV events at N = {n_jumps}; need ≥ {} for a σ_loc point",
                positions.len(),
                options.min_events
            )));
        }
        let sigma =
            sigma_loc_from_positions(&positions, scenario.target_x_nm, scenario.target_y_nm)?;
        curve.push((n_jumps as f64, sigma));
    }

    let fit_start = curve.len() - options.fit_points.min(curve.len());
    let tail = &curve[fit_start..];
    let ln_n: Vec<f64> = tail.iter().map(|(n, _)| n.ln()).collect();
    let ln_s: Vec<f64> = tail.iter().map(|(_, s)| s.ln()).collect();
    let (exponent, intercept, r_squared) = linear_regression(&ln_n, &ln_s)?;

    let (s_min, s_max) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, s)| {
            (lo.min(s), hi.max(s))
        });
    if sigma_loc_target_nm < s_min || sigma_loc_target_nm > s_max {
        return Err(Error::OutOfRange(format!(
            "target σ_loc {sigma_loc_target_nm} nm outside the simulated power-law range \
             [{s_min:.1}, {s_max:.1}] nm"
        )));
    }

    let n_jumps = ((sigma_loc_target_nm.ln() - intercept) / exponent).exp();
    let diffusion = scenario.lattice.diffusion_constant_for_jumps(n_jumps);
    Ok(DiffusionInversion {
        n_jumps,
        diffusion_constant_nm2_per_s: diffusion,
        prefactor: intercept.exp(),
        exponent,
        r_squared,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn decompose_reproduces_measured_budget() {
        // √(102² + 235² + 41²) decomposes back to exactly 102.
        let tot = (102.0f64 * 102.0 + 235.0 * 235.0 + 41.0 * 41.0).sqrt();
        let loc = decompose_sigma(tot, 235.0, 41.0).unwrap();
        assert!((loc - 102.0).abs() < 1e-9);
    }

    #[test]
    fn decompose_boundary_and_error_cases() {
        let tot = (235.0f64 * 235.0 + 41.0 * 41.0).sqrt();
        // Exact boundary up to f64 roundoff in composing the total.
        assert!(decompose_sigma(tot, 235.0, 41.0).unwrap() < 1e-5);
        let loc = decompose_sigma(300.0, 235.0, 41.0).unwrap();
        assert!((loc - (300.0f64 * 300.0 - 235.0 * 235.0 - 41.0 * 41.0).sqrt()).abs() < 1e-12);
        assert!((loc - 181.9).abs() < 0.1);
        // Below the floor: explicit error carrying the deficit.
        let err = decompose_sigma(200.0, 235.0, 41.0).unwrap_err();
        assert!(matches!(err, Error::OutOfRange(_)));
        assert!(err.to_string().contains("deficit"));
    }

    #[test]
    fn compose_then_decompose_is_identity() {
        let mut rng = rng_from_seed(2);
        for _ in 0..500 {
            let loc = rng.random_range(0.0..300.0);
            let psf = rng.random_range(0.0..300.0);
            let sys = rng.random_range(0.0..100.0);
            let budget = VarianceBudget::from_components(loc, psf, sys).unwrap();
            let back = decompose_sigma(budget.sigma_tot_nm, psf, sys).unwrap();
            assert!((back - loc).abs() < 1e-9 * loc.max(1.0));
        }
    }

    #[test]
    fn error_propagation_first_order() {
        let tot = Measured {
            value: 259.4,
            sigma: 2.0,
        };
        let psf = Measured {
            value: 235.0,
            sigma: 3.0,
        };
        let sys = Measured {
            value: 41.0,
            sigma: 1.0,
        };
        let loc = decompose_sigma_measured(tot, psf, sys).unwrap();
        let expected_err = ((259.4f64 * 2.0).powi(2)
            + (235.0f64 * 3.0).powi(2)
            + (41.0f64 * 1.0).powi(2))
        .sqrt()
            / loc.value;
        assert!((loc.sigma - expected_err).abs() < 1e-9);
        // Exact inputs propagate zero uncertainty.
        let exact = decompose_sigma_measured(
            Measured::exact(259.4),
            Measured::exact(235.0),
            Measured::exact(41.0),
        )
        .unwrap();
        assert_eq!(exact.sigma, 0.0);
    }

    #[test]
    fn sigma_loc_all_at_target_is_zero() {
        let pts = vec![Point3::new(10.0, -5.0, 53.0); 4];
        assert_eq!(sigma_loc_from_positions(&pts, 10.0, -5.0).unwrap(), 0.0);
        assert!(sigma_loc_from_positions(&pts[..1], 0.0, 0.0).is_err());
    }

    #[test]
    fn sigma_loc_recovers_generator_width() {
        let sigma = 50.0;
        let mut rng = rng_from_seed(7);
        let normal = Normal::new(0.0, sigma).unwrap();
        let pts: Vec<Point3> = (0..10_000)
            .map(|_| {
                Point3::new(
                    100.0 + normal.sample(&mut rng),
                    -40.0 + normal.sample(&mut rng),
                    53.0,
                )
            })
            .collect();
        let got = sigma_loc_from_positions(&pts, 100.0, -40.0).unwrap();
        assert!((got - sigma).abs() / sigma < 0.02, "σ_loc = {got}");
    }

    #[test]
    fn sigma_loc_is_rotation_invariant() {
        let mut rng = rng_from_seed(8);
        let pts: Vec<Point3> = (0..400)
            .map(|_| {
                Point3::new(
                    rng.random_range(-80.0..80.0),
                    rng.random_range(-80.0..80.0),
                    53.0,
                )
            })
            .collect();
        let base = sigma_loc_from_positions(&pts, 0.0, 0.0).unwrap();
        let theta: f64 = 0.7342;
        let rotated: Vec<Point3> = pts
            .iter()
            .map(|p| {
                Point3::new(
                    p.x * theta.cos() - p.y * theta.sin(),
                    p.x * theta.sin() + p.y * theta.cos(),
                    p.z,
                )
            })
            .collect();
        let rot = sigma_loc_from_positions(&rotated, 0.0, 0.0).unwrap();
        assert!((base - rot).abs() < 1e-9 * base);
    }

    #[test]
    fn lower_bound_matches_published_values() {
        let d280 = diffusion_lower_bound(280.0, 660.0);
        assert!((d280 - 3.7).abs() < 0.05, "D_min(280) = {d280}");
        let d480 = diffusion_lower_bound(480.0, 660.0);
        assert!((d480 - 10.9).abs() < 0.05, "D_min(480) = {d480}");
        // Scales as φ².
        assert!((d480 / d280 - (480.0f64 / 280.0).powi(2)).abs() < 1e-12);
        // Doubling t halves D.
        assert!((diffusion_lower_bound(280.0, 1320.0) - d280 / 2.0).abs() < 1e-12);
    }
}
