//! Statistical properties of the diffusion-capture engine, checked
//! against independent oracles and the trends reported for the device
//! geometries.

use rayon::prelude::*;

use nvsim_core::diffusion::{run_anneal, simulate_ensemble, LatticeConfig, Scenario};
use nvsim_core::geometry::{DeviceGeometry, DopedLayer, NitrogenEnsemble, Point3};
use nvsim_core::rng::{derive_seed, rng_from_seed};
use nvsim_core::vacancy::{BeamParams, VacancyEnsemble};
use rand::Rng;

/// Plain cubic-lattice random walk, written independently of the engine:
/// returns the squared displacement after `n_jumps`.
fn reference_walk_sq_displacement(n_jumps: u64, rng: &mut impl Rng) -> f64 {
    let (mut x, mut y, mut z) = (0i64, 0i64, 0i64);
    for _ in 0..n_jumps {
        match rng.random_range(0..6u32) {
            0 => x += 1,
            1 => x -= 1,
            2 => y += 1,
            3 => y -= 1,
            4 => z += 1,
            _ => z -= 1,
        }
    }
    (x * x + y * y + z * z) as f64
}

fn paper_layer(scale: f64) -> DopedLayer {
    DopedLayer::from_atoms_per_cm2(53.0, 3.66, 1.736e12 * scale).unwrap()
}

fn pillar_scenario(top: f64, bottom: f64, dose_pc: f64, d: f64, scale: f64) -> Scenario {
    Scenario {
        geometry: DeviceGeometry::tapered_pillar(top, bottom, 1414.0, 1414.0).unwrap(),
        layers: vec![paper_layer(scale)],
        beam: BeamParams::new(20.0, dose_pc, 8.5e-5, 0.024, 1000.0).unwrap(),
        lattice: LatticeConfig::new(2.0, 660.0, d).unwrap(),
        target_x_nm: 0.0,
        target_y_nm: 0.0,
        nitrogen_window_half_nm: None,
    }
}

fn bulk_scenario(dose_pc: f64, d: f64, scale: f64) -> Scenario {
    Scenario {
        geometry: DeviceGeometry::bulk(2000.0).unwrap(),
        layers: vec![paper_layer(scale)],
        beam: BeamParams::new(20.0, dose_pc, 8.5e-5, 0.024, 1000.0).unwrap(),
        lattice: LatticeConfig::new(2.0, 660.0, d).unwrap(),
        target_x_nm: 0.0,
        target_y_nm: 0.0,
        nitrogen_window_half_nm: Some(1200.0),
    }
}

fn mean_nv(scenario: &Scenario, trials: usize, seed: u64) -> (f64, f64) {
    let run = simulate_ensemble(scenario, trials, seed).unwrap();
    (run.summary.mean_nv, run.summary.se_nv)
}

#[test]
fn unbounded_msd_matches_reference_walk() {
    // Engine walkers against an independently coded plain walk, both
    // against the lattice identity ⟨r²⟩ = a²·N_tot.
    let a = 2.0;
    let n_tot = 4000u64;
    let n_walkers = 30_000usize;

    let mut cfg = LatticeConfig::new(a, 660.0, 0.0).unwrap();
    cfg.diffusion_constant_nm2_per_s = cfg.diffusion_constant_for_jumps(n_tot as f64);
    assert_eq!(cfg.total_jumps(), n_tot);

    let geom = DeviceGeometry::bulk(4_000_000.0).unwrap();
    let start = Point3::new(1.0, 1.0, 2_000_000.0 + 1.0);
    let vac = VacancyEnsemble {
        positions: vec![start; n_walkers],
        origin_spot: Point3::new(0.0, 0.0, 0.0),
    };
    let out = run_anneal(
        &geom,
        &NitrogenEnsemble::from_positions(Vec::new()),
        &vac,
        &cfg,
        77,
    )
    .unwrap();
    assert_eq!(out.n_surviving, n_walkers);

    let start_cell = |v: f64| ((v / a).floor() + 0.5) * a;
    let (sx, sy, sz) = (start_cell(start.x), start_cell(start.y), start_cell(start.z));
    let mut msd = 0.0;
    let (mut mx, mut my, mut mz) = (0.0, 0.0, 0.0);
    for p in &out.surviving_positions {
        let (dx, dy, dz) = (p.x - sx, p.y - sy, p.z - sz);
        msd += dx * dx + dy * dy + dz * dz;
        mx += dx;
        my += dy;
        mz += dz;
    }
    msd /= n_walkers as f64;

    let expected = a * a * n_tot as f64;
    assert!(
        (msd - expected).abs() / expected < 0.02,
        "engine MSD {msd} vs a²N {expected}"
    );

    // Independent plain-walk oracle.
    let mut rng = rng_from_seed(78);
    let mut oracle_msd = 0.0;
    let oracle_walkers = 30_000;
    for _ in 0..oracle_walkers {
        oracle_msd += reference_walk_sq_displacement(n_tot, &mut rng);
    }
    oracle_msd = oracle_msd * a * a / oracle_walkers as f64;
    assert!(
        (msd - oracle_msd).abs() / expected < 0.03,
        "engine {msd} vs oracle {oracle_msd}"
    );

    // Isotropy: mean displacement compatible with zero. Per-axis sigma of
    // the mean is a·√(N/3/walkers).
    let axis_se = a * (n_tot as f64 / 3.0 / n_walkers as f64).sqrt();
    for (label, m) in [("x", mx), ("y", my), ("z", mz)] {
        let mean = m / n_walkers as f64;
        assert!(
            mean.abs() < 4.0 * axis_se,
            "{label} drift {mean} vs SE {axis_se}"
        );
    }

    // Each Cartesian component carries a²N/3.
    let mut comp_x = 0.0;
    for p in &out.surviving_positions {
        let dx = p.x - sx;
        comp_x += dx * dx;
    }
    comp_x /= n_walkers as f64;
    assert!(
        (comp_x - expected / 3.0).abs() / (expected / 3.0) < 0.04,
        "x component {comp_x} vs {}",
        expected / 3.0
    );
}

#[test]
fn vacancy_conservation_across_scenarios() {
    for (scenario, seed) in [
        (pillar_scenario(480.0, 850.0, 80.0, 17.0, 10.0), 1u64),
        (pillar_scenario(280.0, 610.0, 80.0, 17.0, 10.0), 2),
        (bulk_scenario(24.0, 17.0, 10.0), 3),
    ] {
        let run = simulate_ensemble(&scenario, 6, seed).unwrap();
        for out in &run.outcomes {
            assert!(out.is_conserved());
        }
    }
}

#[test]
fn mean_nv_monotone_in_nitrogen_density_and_alpha() {
    let trials = 30;
    let mut low = pillar_scenario(480.0, 850.0, 80.0, 17.0, 4.0);
    let mut high = pillar_scenario(480.0, 850.0, 80.0, 17.0, 12.0);
    let (nv_low, se_low) = mean_nv(&low, trials, 11);
    let (nv_high, se_high) = mean_nv(&high, trials, 12);
    assert!(
        nv_high - nv_low > 3.0 * se_low.hypot(se_high),
        "density: {nv_low}±{se_low} vs {nv_high}±{se_high}"
    );

    low.beam.alpha = 0.01;
    high.layers = low.layers.clone();
    high.beam.alpha = 0.04;
    let (nv_low, se_low) = mean_nv(&low, trials, 13);
    let (nv_high, se_high) = mean_nv(&high, trials, 14);
    assert!(
        nv_high - nv_low > 3.0 * se_low.hypot(se_high),
        "alpha: {nv_low}±{se_low} vs {nv_high}±{se_high}"
    );
}

#[test]
fn mean_nv_linear_in_dose_over_low_dose_decade() {
    // Low-vacancy regime: expected NV count proportional to dose.
    // Trials scale inversely with dose so every point carries similar
    // event statistics.
    let doses = [8.0, 16.0, 28.0, 48.0, 80.0];
    let trials = [150usize, 75, 43, 25, 15];
    let points: Vec<(f64, f64)> = doses
        .par_iter()
        .zip(trials.par_iter())
        .map(|(&dose, &n)| {
            let scenario = pillar_scenario(480.0, 850.0, dose, 8.0, 10.0);
            let run = simulate_ensemble(&scenario, n, derive_seed(21, "dose", dose as u64))
                .unwrap();
            (dose, run.summary.mean_nv)
        })
        .collect();

    let n = points.len() as f64;
    let x_mean = points.iter().map(|(d, _)| d).sum::<f64>() / n;
    let y_mean = points.iter().map(|(_, v)| v).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|(d, _)| (d - x_mean) * (d - x_mean)).sum();
    let sxy: f64 = points
        .iter()
        .map(|(d, v)| (d - x_mean) * (v - y_mean))
        .sum();
    let syy: f64 = points.iter().map(|(_, v)| (v - y_mean) * (v - y_mean)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    assert!(r2 > 0.99, "dose linearity R² = {r2}, points: {points:?}");
    // And the intercept is small against the top of the decade.
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let top = points.last().unwrap().1;
    assert!(
        intercept.abs() < 0.1 * top,
        "intercept {intercept} vs top-of-decade {top}"
    );
}

#[test]
fn absorbing_boundaries_suppress_nv_formation() {
    // Identical dose, layer and lattice: the pillar loses vacancies to
    // its sidewalls, bulk does not.
    let trials = 25;
    let pillar = pillar_scenario(480.0, 850.0, 240.0, 21.19, 10.0);
    let bulk = bulk_scenario(240.0, 21.19, 10.0);
    let (nv_pillar, se_p) = mean_nv(&pillar, trials, 31);
    let (nv_bulk, se_b) = mean_nv(&bulk, trials, 32);
    assert!(
        nv_bulk - nv_pillar > 3.0 * se_p.hypot(se_b),
        "bulk {nv_bulk}±{se_b} vs pillar {nv_pillar}±{se_p}"
    );
}

#[test]
fn pillar_ratio_increases_with_diffusion_constant() {
    // N_NV(480)/N_NV(280) grows with D_V: faster diffusion reaches the
    // larger pillar's extra nitrogen while the smaller pillar's walls
    // clip the walk.
    let ds = [4.0, 17.0, 40.0];
    let trials = 40;
    let ratios: Vec<f64> = ds
        .iter()
        .map(|&d| {
            let big = pillar_scenario(480.0, 850.0, 240.0, d, 10.0);
            let small = pillar_scenario(280.0, 610.0, 240.0, d, 10.0);
            let (nv_big, _) = mean_nv(&big, trials, 41);
            let (nv_small, _) = mean_nv(&small, trials, 42);
            nv_big / nv_small
        })
        .collect();
    assert!(
        ratios[0] < ratios[1] && ratios[1] < ratios[2],
        "ratio not increasing with D: {ratios:?}"
    );
}

#[test]
fn ensemble_results_independent_of_worker_count() {
    let scenario = pillar_scenario(480.0, 850.0, 24.0, 17.0, 4.0);
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| simulate_ensemble(&scenario, 10, 5).unwrap());
    let multi = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap()
        .install(|| simulate_ensemble(&scenario, 10, 5).unwrap());
    assert_eq!(single, multi);
}
