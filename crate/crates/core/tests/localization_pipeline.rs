//! End-to-end localization analysis: image pipeline round trip,
//! simulated σ_loc orderings against the measured anchors, and the
//! diffusion-constant inversion.

use nvsim_core::diffusion::{simulate_ensemble, LatticeConfig, Scenario};
use nvsim_core::geometry::{DeviceGeometry, DopedLayer, Point3};
use nvsim_core::localization::{
    decompose_sigma, fit_gaussian2d, invert_diffusion_constant, sigma_loc_from_positions,
    synthesize_spot_array, tile_average, InversionOptions, SpotArraySpec,
};
use nvsim_core::vacancy::BeamParams;

fn paper_scenario(geom: DeviceGeometry, window: Option<f64>, d: f64) -> Scenario {
    // Nitrogen density ×10 above the measured layer: σ_loc is set by the
    // walk statistics, so boosting capture statistics keeps desk-scale
    // runtimes without biasing the extracted spread (the per-event
    // capture hazard stays ≪ 1).
    Scenario {
        geometry: geom,
        layers: vec![DopedLayer::from_atoms_per_cm2(53.0, 3.66, 1.736e13).unwrap()],
        beam: BeamParams::new(20.0, 240.0, 8.5e-5, 0.024, 1000.0).unwrap(),
        lattice: LatticeConfig::new(2.0, 660.0, d).unwrap(),
        target_x_nm: 0.0,
        target_y_nm: 0.0,
        nitrogen_window_half_nm: window,
    }
}

fn simulated_sigma_loc(scenario: &Scenario, trials: usize, seed: u64) -> (f64, usize) {
    let run = simulate_ensemble(scenario, trials, seed).unwrap();
    let positions: Vec<Point3> = run
        .outcomes
        .iter()
        .flat_map(|o| o.nv_records.iter().map(|r| r.position))
        .collect();
    let sigma =
        sigma_loc_from_positions(&positions, scenario.target_x_nm, scenario.target_y_nm).unwrap();
    (sigma, positions.len())
}

#[test]
fn tile_average_pipeline_recovers_sigma_loc() {
    // 162 spots jittered by √(σ_loc² + σ_sys²) under a 235 nm PSF; the
    // pipeline recovers σ_loc = 102 nm after decomposition.
    let sigma_loc = 102.0f64;
    let sigma_psf = 235.0f64;
    let sigma_sys = 41.0f64;
    let spec = SpotArraySpec {
        pixel_pitch_nm: 40.0,
        spot_spacing_nm: 2200.0,
        n_cols: 9,
        n_rows: 18,
        margin_nm: 1400.0,
        amplitude: 400.0,
        psf_sigma_nm: sigma_psf,
        jitter_sigma_nm: (sigma_loc * sigma_loc + sigma_sys * sigma_sys).sqrt(),
        offset: 20.0,
        noise_sigma: 8.0,
        normalize_jitter: true,
    };
    let (image, targets) = synthesize_spot_array(&spec, 1234).unwrap();
    assert_eq!(targets.len(), 162);

    let (averaged, stats) = tile_average(&image, &targets, 2000.0).unwrap();
    assert_eq!(stats.n_used, 162);
    assert_eq!(stats.n_skipped, 0);

    let fit = fit_gaussian2d(&averaged).unwrap();
    let expected_tot =
        (sigma_loc * sigma_loc + sigma_psf * sigma_psf + sigma_sys * sigma_sys).sqrt();
    assert!(
        (fit.sigma_tot_nm - expected_tot).abs() / expected_tot < 0.03,
        "σ_tot = {} vs {expected_tot}",
        fit.sigma_tot_nm
    );

    let recovered = decompose_sigma(fit.sigma_tot_nm, sigma_psf, sigma_sys).unwrap();
    assert!(
        (recovered - sigma_loc).abs() / sigma_loc < 0.05,
        "σ_loc = {recovered} vs {sigma_loc}"
    );
}

#[test]
fn averaging_many_noise_only_tiles_beats_single_tile_noise() {
    let spec = SpotArraySpec {
        pixel_pitch_nm: 40.0,
        spot_spacing_nm: 2200.0,
        n_cols: 9,
        n_rows: 6,
        margin_nm: 1400.0,
        amplitude: 0.0,
        psf_sigma_nm: 235.0,
        jitter_sigma_nm: 0.0,
        offset: 100.0,
        noise_sigma: 12.0,
        normalize_jitter: false,
    };
    let (image, targets) = synthesize_spot_array(&spec, 9).unwrap();
    let (averaged, stats) = tile_average(&image, &targets, 2000.0).unwrap();
    let n = averaged.data.len() as f64;
    let mean = averaged.data.iter().sum::<f64>() / n;
    let std = (averaged
        .data
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n - 1.0))
        .sqrt();
    let expected = 12.0 / (stats.n_used as f64).sqrt();
    assert!(
        (std - expected).abs() / expected < 0.2,
        "averaged std {std} vs {expected}"
    );
}

#[test]
fn simulated_sigma_loc_ordering_matches_measured_anchors() {
    // At the paper's anneal (D from the N = 2.098e4 anchor, t = 660 s):
    // σ_loc(280 pillar) < σ_loc(480 pillar) < σ_loc(bulk), with the bulk
    // value near the measured 102 nm and the pillars within ±25% of the
    // measured 46 nm and 72 nm.
    let lattice = LatticeConfig::new(2.0, 660.0, 1.0).unwrap();
    let d = lattice.diffusion_constant_for_jumps(2.098e4);
    let trials = 25;

    let bulk = paper_scenario(DeviceGeometry::bulk(2000.0).unwrap(), Some(1200.0), d);
    let p480 = paper_scenario(
        DeviceGeometry::tapered_pillar(480.0, 850.0, 1414.0, 1414.0).unwrap(),
        None,
        d,
    );
    let p280 = paper_scenario(
        DeviceGeometry::tapered_pillar(280.0, 610.0, 1414.0, 1414.0).unwrap(),
        None,
        d,
    );

    let (sigma_bulk, n_bulk) = simulated_sigma_loc(&bulk, trials, 101);
    let (sigma_480, n_480) = simulated_sigma_loc(&p480, trials, 102);
    let (sigma_280, n_280) = simulated_sigma_loc(&p280, trials, 103);
    assert!(n_bulk > 800 && n_480 > 800 && n_280 > 800);

    assert!(
        sigma_280 < sigma_480 && sigma_480 < sigma_bulk,
        "ordering violated: {sigma_280}, {sigma_480}, {sigma_bulk}"
    );
    assert!(
        (75.0..=130.0).contains(&sigma_bulk),
        "bulk σ_loc = {sigma_bulk}"
    );
    assert!(
        (sigma_280 - 46.0).abs() / 46.0 < 0.25,
        "σ_loc(280) = {sigma_280}"
    );
    assert!(
        (sigma_480 - 72.0).abs() / 72.0 < 0.25,
        "σ_loc(480) = {sigma_480}"
    );
}

#[test]
fn sigma_loc_curve_is_monotone_power_law_and_inverts_diffusion() {
    // Round trip: simulate at a known D*, extract σ_loc, invert the
    // power-law curve and recover D* within the fit tolerance.
    let bulk = paper_scenario(DeviceGeometry::bulk(2000.0).unwrap(), Some(1200.0), 1.0);
    let n_star = 8000.0;
    let d_star = bulk.lattice.diffusion_constant_for_jumps(n_star);

    let mut truth_scenario = bulk.clone();
    truth_scenario.lattice.diffusion_constant_nm2_per_s = d_star;
    let (sigma_target, events) = simulated_sigma_loc(&truth_scenario, 16, 555);
    assert!(events > 400);

    let options = InversionOptions {
        n_jumps_grid: vec![2_000, 4_000, 8_000, 16_000, 32_000],
        trials_per_point: 16,
        seed: 777,
        fit_points: 4,
        min_events: 100,
    };
    let inv = invert_diffusion_constant(sigma_target, &bulk, &options).unwrap();

    // Monotone increasing σ_loc(N) with a clean large-N power law.
    for w in inv.curve.windows(2) {
        assert!(w[1].1 > w[0].1, "σ_loc(N) not increasing: {:?}", inv.curve);
    }
    assert!(inv.r_squared > 0.99, "R² = {}", inv.r_squared);
    assert!(
        (0.3..0.7).contains(&inv.exponent),
        "diffusive exponent = {}",
        inv.exponent
    );

    let rel = (inv.diffusion_constant_nm2_per_s - d_star).abs() / d_star;
    assert!(
        rel <= 0.15,
        "recovered D = {} vs {d_star} ({:.1}% off)",
        inv.diffusion_constant_nm2_per_s,
        100.0 * rel
    );

    // A target outside the simulated range is an explicit error.
    assert!(invert_diffusion_constant(1e4, &bulk, &options).is_err());
}
