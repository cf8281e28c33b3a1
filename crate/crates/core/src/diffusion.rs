//! Coarse-grained lattice random walk of monovacancies during annealing.
//!
//! Atomic-scale diffusion on the diamond lattice would need tens of
//! millions of bond-length jumps per µm, so the walk runs on a cubic
//! lattice of cell size `a` (1-2 nm), still far below device dimensions.
//! The total number of jumps follows from `D = a² N_tot / (6 t)`.
//!
//! Each vacancy performs nearest-neighbor jumps (one of six directions,
//! uniform). After each block of `jumps_per_step` jumps, a vacancy
//! co-located with an unconsumed nitrogen atom undergoes a capture trial;
//! on success an NV center is recorded and both species are removed. A
//! jump whose destination cell center lies outside the solid absorbs the
//! vacancy at the boundary. A vacancy starting inside a nitrogen cell
//! undergoes exactly one trial before its first jump.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::DIAMOND_UNIT_CELL_VOLUME_NM3;
use crate::geometry::{DeviceGeometry, DopedLayer, NitrogenEnsemble, Point3};
use crate::rng::{derive_seed, rng_from_seed};
use crate::vacancy::{generate_vacancies, BeamParams, VacancyEnsemble};
use crate::{Error, Result};

fn default_jumps_per_step() -> u32 {
    1
}

fn default_unit_cell_volume() -> f64 {
    DIAMOND_UNIT_CELL_VOLUME_NM3
}

/// Lattice and schedule parameters for one anneal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// Coarse-grained cell size `a` in nm.
    pub cell_size_nm: f64,
    /// Anneal duration in seconds.
    pub anneal_time_s: f64,
    /// Monovacancy diffusion constant in nm²/s.
    pub diffusion_constant_nm2_per_s: f64,
    /// Jumps per capture-check block.
    #[serde(default = "default_jumps_per_step")]
    pub jumps_per_step: u32,
    /// Crystal unit-cell volume in nm³ (diamond conventional cell).
    #[serde(default = "default_unit_cell_volume")]
    pub unit_cell_volume_nm3: f64,
}

impl LatticeConfig {
    pub fn new(
        cell_size_nm: f64,
        anneal_time_s: f64,
        diffusion_constant_nm2_per_s: f64,
    ) -> Result<Self> {
        let cfg = Self {
            cell_size_nm,
            anneal_time_s,
            diffusion_constant_nm2_per_s,
            jumps_per_step: default_jumps_per_step(),
            unit_cell_volume_nm3: default_unit_cell_volume(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size_nm.is_finite() && self.cell_size_nm > 0.0) {
            return Err(Error::Parameter(format!(
                "cell_size_nm must be positive, got {}",
                self.cell_size_nm
            )));
        }
        if !(self.anneal_time_s.is_finite() && self.anneal_time_s > 0.0) {
            return Err(Error::Parameter(format!(
                "anneal_time_s must be positive, got {}",
                self.anneal_time_s
            )));
        }
        if !(self.diffusion_constant_nm2_per_s.is_finite()
            && self.diffusion_constant_nm2_per_s >= 0.0)
        {
            return Err(Error::Parameter(format!(
                "diffusion_constant_nm2_per_s must be ≥ 0, got {}",
                self.diffusion_constant_nm2_per_s
            )));
        }
        if self.jumps_per_step < 1 {
            return Err(Error::Parameter("jumps_per_step must be ≥ 1".into()));
        }
        if !(self.unit_cell_volume_nm3.is_finite() && self.unit_cell_volume_nm3 > 0.0) {
            return Err(Error::Parameter(format!(
                "unit_cell_volume_nm3 must be positive, got {}",
                self.unit_cell_volume_nm3
            )));
        }
        Ok(())
    }

    /// Total jumps per vacancy: `N_tot = round(6 D t / a²)`.
    pub fn total_jumps(&self) -> u64 {
        let a2 = self.cell_size_nm * self.cell_size_nm;
        (6.0 * self.diffusion_constant_nm2_per_s * self.anneal_time_s / a2).round() as u64
    }

    /// Diffusion constant implied by an explicit jump count, `a² N / (6 t)`.
    pub fn diffusion_constant_for_jumps(&self, n_jumps: f64) -> f64 {
        self.cell_size_nm * self.cell_size_nm * n_jumps / (6.0 * self.anneal_time_s)
    }
}

/// Per-co-location capture probability,
/// `(16 V_cc/V_uc) / ((8 V_cc/V_uc)² / 2)` with `V_cc = a³`.
///
/// The formula is only meaningful while it yields a probability; a cell
/// small enough to push it above 1 is an error, not a clamp.
pub fn capture_probability(cfg: &LatticeConfig) -> Result<f64> {
    cfg.validate()?;
    let ratio = cfg.cell_size_nm.powi(3) / cfg.unit_cell_volume_nm3;
    let p = (16.0 * ratio) / ((8.0 * ratio).powi(2) / 2.0);
    if !p.is_finite() || p <= 0.0 || p > 1.0 {
        return Err(Error::OutOfRange(format!(
            "capture probability {p} outside (0, 1]; cell size {} nm is too small \
             for the coarse-grained formula",
            cfg.cell_size_nm
        )));
    }
    Ok(p)
}

/// One formed NV center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NvRecord {
    /// Position of the captured nitrogen atom.
    pub position: Point3,
    /// Crystallographic orientation class, uniform over 0..4.
    pub orientation: u8,
    /// Number of jumps completed when the capture trial succeeded.
    pub capture_step: u64,
}

/// Result of annealing one vacancy ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealOutcome {
    pub nv_records: Vec<NvRecord>,
    pub n_absorbed_boundary: usize,
    pub n_surviving: usize,
    pub n_initial_vacancies: usize,
    /// Final cell-center positions of vacancies that survived the anneal.
    pub surviving_positions: Vec<Point3>,
}

impl AnnealOutcome {
    /// Vacancy conservation: captured + absorbed + surviving = initial.
    pub fn is_conserved(&self) -> bool {
        self.nv_records.len() + self.n_absorbed_boundary + self.n_surviving
            == self.n_initial_vacancies
    }
}

/// Multiply-shift hash for prepacked cell keys.
#[derive(Default)]
struct CellHasher(u64);

impl Hasher for CellHasher {
    #[inline]
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, _bytes: &[u8]) {
        unreachable!("cell keys hash as u64");
    }

    #[inline]
    fn write_u64(&mut self, key: u64) {
        let mut z = key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        self.0 = z ^ (z >> 31);
    }
}

type CellMap = HashMap<u64, Vec<u32>, BuildHasherDefault<CellHasher>>;

const CELL_OFFSET: i64 = 1 << 20;

#[inline]
fn pack_cell(ix: i64, iy: i64, iz: i64) -> u64 {
    debug_assert!(
        ix.abs() < CELL_OFFSET && iy.abs() < CELL_OFFSET && iz.abs() < CELL_OFFSET,
        "cell index out of packing range"
    );
    (((ix + CELL_OFFSET) as u64) << 42)
        | (((iy + CELL_OFFSET) as u64) << 21)
        | ((iz + CELL_OFFSET) as u64)
}

#[inline]
fn cell_of(v: f64, a: f64) -> i64 {
    (v / a).floor() as i64
}

/// Geometry specialized to cell-center tests for the hot loop.
enum CellBounds {
    Bulk {
        iz_max: i64,
    },
    Pillar {
        iz_max: i64,
        /// First cell layer belonging to the substrate below the pillar.
        iz_base: i64,
        radius_sq: Vec<f64>,
        cell: f64,
    },
    Mesa {
        iz_max: i64,
        iz_base: i64,
        half: f64,
        cell: f64,
    },
}

impl CellBounds {
    fn new(geom: &DeviceGeometry, a: f64) -> Self {
        let cutoff = geom.slab_depth_cutoff_nm();
        // Largest iz whose cell center is strictly above the cutoff.
        let iz_max = ((cutoff / a) - 0.5).ceil() as i64 - 1;
        match *geom {
            DeviceGeometry::Bulk { .. } => CellBounds::Bulk { iz_max },
            DeviceGeometry::TaperedPillar {
                top_diameter_nm,
                bottom_diameter_nm,
                height_nm,
                ..
            } => {
                let iz_base = ((height_nm / a) - 0.5).ceil() as i64;
                let n = iz_base.max(0) as usize;
                let r_top = 0.5 * top_diameter_nm;
                let r_bottom = 0.5 * bottom_diameter_nm;
                let radius_sq = (0..n)
                    .map(|iz| {
                        let z = (iz as f64 + 0.5) * a;
                        let r = r_top + (r_bottom - r_top) * (z / height_nm);
                        r * r
                    })
                    .collect();
                CellBounds::Pillar {
                    iz_max,
                    iz_base,
                    radius_sq,
                    cell: a,
                }
            }
            DeviceGeometry::Mesa {
                side_nm, height_nm, ..
            } => CellBounds::Mesa {
                iz_max,
                iz_base: ((height_nm / a) - 0.5).ceil() as i64,
                half: 0.5 * side_nm,
                cell: a,
            },
        }
    }

    #[inline]
    fn inside(&self, ix: i64, iy: i64, iz: i64) -> bool {
        match *self {
            CellBounds::Bulk { iz_max } => iz >= 0 && iz <= iz_max,
            CellBounds::Pillar {
                iz_max,
                iz_base,
                ref radius_sq,
                cell,
            } => {
                if iz < 0 || iz > iz_max {
                    return false;
                }
                if iz >= iz_base {
                    return true;
                }
                let cx = (ix as f64 + 0.5) * cell;
                let cy = (iy as f64 + 0.5) * cell;
                cx * cx + cy * cy < radius_sq[iz as usize]
            }
            CellBounds::Mesa {
                iz_max,
                iz_base,
                half,
                cell,
            } => {
                if iz < 0 || iz > iz_max {
                    return false;
                }
                if iz >= iz_base {
                    return true;
                }
                let cx = (ix as f64 + 0.5) * cell;
                let cy = (iy as f64 + 0.5) * cell;
                cx.abs() < half && cy.abs() < half
            }
        }
    }
}

struct Walker {
    ix: i64,
    iy: i64,
    iz: i64,
    dead: bool,
}

/// Anneal one vacancy ensemble against a nitrogen ensemble.
///
/// Deterministic for a fixed seed. Vacancies are rejected if their
/// initial (continuous) position lies outside the solid.
pub fn run_anneal(
    geom: &DeviceGeometry,
    nitrogen: &NitrogenEnsemble,
    vacancies: &VacancyEnsemble,
    cfg: &LatticeConfig,
    rng_seed: u64,
) -> Result<AnnealOutcome> {
    cfg.validate()?;
    let p_cap = capture_probability(cfg)?;
    let a = cfg.cell_size_nm;
    let bounds = CellBounds::new(geom, a);
    let n_total = cfg.total_jumps();
    let block_size = cfg.jumps_per_step as u64;

    // Nitrogen occupancy by cell; consumed atoms never enter the map.
    let mut nmap = CellMap::default();
    let mut consumed = nitrogen.consumed.clone();
    let mut nz_lo = i64::MAX;
    let mut nz_hi = i64::MIN;
    for (idx, p) in nitrogen.positions.iter().enumerate() {
        if consumed[idx] {
            continue;
        }
        let (ix, iy, iz) = (cell_of(p.x, a), cell_of(p.y, a), cell_of(p.z, a));
        nz_lo = nz_lo.min(iz);
        nz_hi = nz_hi.max(iz);
        nmap.entry(pack_cell(ix, iy, iz))
            .or_default()
            .push(idx as u32);
    }

    let mut rng = rng_from_seed(rng_seed);
    let mut walkers = Vec::with_capacity(vacancies.positions.len());
    let mut n_absorbed = 0usize;
    for p in &vacancies.positions {
        if !geom.contains(*p) {
            return Err(Error::Geometry(format!(
                "vacancy at ({}, {}, {}) lies outside the device",
                p.x, p.y, p.z
            )));
        }
        let w = Walker {
            ix: cell_of(p.x, a),
            iy: cell_of(p.y, a),
            iz: cell_of(p.z, a),
            dead: false,
        };
        // Near a wall the continuous position can sit in a cell whose
        // center is outside; the coarse-grained walk treats that as
        // immediate boundary absorption.
        if bounds.inside(w.ix, w.iy, w.iz) {
            walkers.push(w);
        } else {
            n_absorbed += 1;
        }
    }

    let n_initial = vacancies.positions.len();
    let mut nv_records = Vec::new();

    let try_capture = |w: &mut Walker,
                           step: u64,
                           nmap: &mut CellMap,
                           consumed: &mut Vec<bool>,
                           rng: &mut rand_chacha::ChaCha8Rng,
                           nv_records: &mut Vec<NvRecord>| {
        if w.iz < nz_lo || w.iz > nz_hi {
            return;
        }
        let key = pack_cell(w.ix, w.iy, w.iz);
        if let Some(atoms) = nmap.get_mut(&key) {
            if atoms.is_empty() {
                return;
            }
            if rng.random::<f64>() < p_cap {
                let atom = atoms.remove(0) as usize;
                consumed[atom] = true;
                nv_records.push(NvRecord {
                    position: nitrogen.positions[atom],
                    orientation: rng.random_range(0..4u32) as u8,
                    capture_step: step,
                });
                w.dead = true;
            }
        }
    };

    // Step-0 policy: one capture trial before the first jump.
    for w in walkers.iter_mut() {
        try_capture(w, 0, &mut nmap, &mut consumed, &mut rng, &mut nv_records);
    }
    walkers.retain(|w| !w.dead);

    let mut jumps_done = 0u64;
    let mut n_dead = 0usize;
    while jumps_done < n_total && !walkers.is_empty() {
        let block = block_size.min(n_total - jumps_done);
        let step_after = jumps_done + block;
        for w in walkers.iter_mut() {
            if w.dead {
                continue;
            }
            for _ in 0..block {
                match rng.random_range(0..6u32) {
                    0 => w.ix += 1,
                    1 => w.ix -= 1,
                    2 => w.iy += 1,
                    3 => w.iy -= 1,
                    4 => w.iz += 1,
                    _ => w.iz -= 1,
                }
                if !bounds.inside(w.ix, w.iy, w.iz) {
                    w.dead = true;
                    n_absorbed += 1;
                    n_dead += 1;
                    break;
                }
            }
            if !w.dead {
                try_capture(
                    w,
                    step_after,
                    &mut nmap,
                    &mut consumed,
                    &mut rng,
                    &mut nv_records,
                );
                if w.dead {
                    n_dead += 1;
                }
            }
        }
        jumps_done = step_after;
        // Compact occasionally so long runs do not iterate corpses.
        if n_dead * 4 > walkers.len() {
            walkers.retain(|w| !w.dead);
            n_dead = 0;
        }
    }

    let surviving_positions: Vec<Point3> = walkers
        .iter()
        .filter(|w| !w.dead)
        .map(|w| {
            Point3::new(
                (w.ix as f64 + 0.5) * a,
                (w.iy as f64 + 0.5) * a,
                (w.iz as f64 + 0.5) * a,
            )
        })
        .collect();

    let outcome = AnnealOutcome {
        n_surviving: surviving_positions.len(),
        surviving_positions,
        n_absorbed_boundary: n_absorbed,
        n_initial_vacancies: n_initial,
        nv_records,
    };
    debug_assert!(outcome.is_conserved());
    Ok(outcome)
}

/// A complete simulation scenario: device, doped layers, beam and anneal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub geometry: DeviceGeometry,
    pub layers: Vec<DopedLayer>,
    pub beam: BeamParams,
    pub lattice: LatticeConfig,
    /// Beam target on the top surface.
    pub target_x_nm: f64,
    pub target_y_nm: f64,
    /// Lateral half-extent for nitrogen sampling. Required for bulk
    /// devices; optional clipping window for etched ones.
    pub nitrogen_window_half_nm: Option<f64>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Parameter("scenario has no doped layer".into()));
        }
        for layer in &self.layers {
            layer.validate_for(&self.geometry)?;
        }
        self.lattice.validate()?;
        capture_probability(&self.lattice)?;
        if matches!(self.geometry, DeviceGeometry::Bulk { .. })
            && self.nitrogen_window_half_nm.is_none()
        {
            return Err(Error::Parameter(
                "bulk geometry requires nitrogen_window_half_nm".into(),
            ));
        }
        Ok(())
    }

    pub fn target(&self) -> Point3 {
        Point3::new(self.target_x_nm, self.target_y_nm, 0.0)
    }

    fn sample_nitrogen(&self, seed: u64) -> Result<NitrogenEnsemble> {
        let mut positions = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            let layer_seed = derive_seed(seed, "layer", idx as u64);
            let ens = match self.nitrogen_window_half_nm {
                Some(half) => crate::geometry::sample_nitrogen_windowed(
                    &self.geometry,
                    layer,
                    self.target_x_nm,
                    self.target_y_nm,
                    half,
                    layer_seed,
                )?,
                None => crate::geometry::sample_nitrogen(&self.geometry, layer, layer_seed)?,
            };
            positions.extend(ens.positions);
        }
        Ok(NitrogenEnsemble::from_positions(positions))
    }
}

/// Run one independent trial of a scenario.
pub fn run_trial(scenario: &Scenario, trial_seed: u64) -> Result<AnnealOutcome> {
    scenario.validate()?;
    let nitrogen = scenario.sample_nitrogen(derive_seed(trial_seed, "nitrogen", 0))?;
    let vacancies = generate_vacancies(
        &scenario.beam,
        &scenario.geometry,
        scenario.target(),
        derive_seed(trial_seed, "vacancy", 0),
    )?;
    run_anneal(
        &scenario.geometry,
        &nitrogen,
        &vacancies,
        &scenario.lattice,
        derive_seed(trial_seed, "anneal", 0),
    )
}

/// Mean and standard error of the NV count over an ensemble of trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub mean_nv: f64,
    pub se_nv: f64,
    pub n_trials: usize,
}

/// Outcomes plus summary for `n_trials` independent trials.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    pub outcomes: Vec<AnnealOutcome>,
    pub summary: EnsembleSummary,
}

/// Run independent trials with per-trial seeds derived from the master
/// seed. Trials execute in parallel; results are identical for any
/// worker count.
pub fn simulate_ensemble(
    scenario: &Scenario,
    n_trials: usize,
    master_seed: u64,
) -> Result<EnsembleRun> {
    if n_trials == 0 {
        return Err(Error::Parameter("n_trials must be ≥ 1".into()));
    }
    scenario.validate()?;
    let outcomes: Vec<AnnealOutcome> = (0..n_trials)
        .into_par_iter()
        .map(|i| run_trial(scenario, derive_seed(master_seed, "trial", i as u64)))
        .collect::<Result<_>>()?;

    let counts: Vec<f64> = outcomes.iter().map(|o| o.nv_records.len() as f64).collect();
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    let se = if counts.len() > 1 {
        let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>()
            / (counts.len() - 1) as f64;
        (var / counts.len() as f64).sqrt()
    } else {
        0.0
    };
    Ok(EnsembleRun {
        outcomes,
        summary: EnsembleSummary {
            mean_nv: mean,
            se_nv: se,
            n_trials,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_nitrogen_windowed;

    fn bulk_cfg(d: f64) -> LatticeConfig {
        LatticeConfig::new(2.0, 660.0, d).unwrap()
    }

    fn no_nitrogen() -> NitrogenEnsemble {
        NitrogenEnsemble::from_positions(Vec::new())
    }

    #[test]
    fn capture_probability_examples() {
        // a = 1 nm: r = a³/V_uc ≈ 21.98, p = 16r/((8r)²/2) ≈ 0.02275.
        let mut cfg = LatticeConfig::new(1.0, 660.0, 21.2).unwrap();
        cfg.unit_cell_volume_nm3 = 0.0455;
        let p = capture_probability(&cfg).unwrap();
        assert!((p - 0.02275).abs() < 1e-4, "p = {p}");

        // a = 2 nm: algebraic simplification p = 1/(2r).
        let mut cfg2 = cfg;
        cfg2.cell_size_nm = 2.0;
        let r = 8.0 / 0.0455;
        let p2 = capture_probability(&cfg2).unwrap();
        assert!((p2 - 1.0 / (2.0 * r)).abs() < 1e-12);
        assert!((p2 - 0.002844).abs() < 1e-5, "p2 = {p2}");

        // p scales as 1/a³.
        assert!((p / p2 - 8.0).abs() < 1e-9);
    }

    #[test]
    fn capture_probability_rejects_tiny_cells() {
        let mut cfg = LatticeConfig::new(0.2, 660.0, 21.2).unwrap();
        cfg.unit_cell_volume_nm3 = 0.0455;
        assert!(capture_probability(&cfg).is_err());
    }

    #[test]
    fn total_jumps_matches_diffusion_identity() {
        // D = 21.2 nm²/s, a = 2 nm, t = 660 s → N_tot ≈ 2.098e4.
        let cfg = bulk_cfg(21.2);
        let n = cfg.total_jumps();
        assert!((n as f64 - 2.098e4).abs() / 2.098e4 < 1e-3, "N_tot = {n}");
        // And the inverse direction is exact arithmetic.
        let d = cfg.diffusion_constant_for_jumps(2.098e4);
        assert!((d - 21.19).abs() < 0.01, "D = {d}");
    }

    #[test]
    fn zero_vacancies_empty_outcome() {
        let geom = DeviceGeometry::bulk(2000.0).unwrap();
        let vac = VacancyEnsemble {
            positions: Vec::new(),
            origin_spot: Point3::new(0.0, 0.0, 0.0),
        };
        let out = run_anneal(&geom, &no_nitrogen(), &vac, &bulk_cfg(21.2), 1).unwrap();
        assert!(out.nv_records.is_empty());
        assert_eq!(out.n_absorbed_boundary, 0);
        assert_eq!(out.n_surviving, 0);
        assert_eq!(out.n_initial_vacancies, 0);
        assert!(out.is_conserved());
    }

    #[test]
    fn rejects_vacancy_outside_geometry() {
        let geom = DeviceGeometry::bulk(2000.0).unwrap();
        let vac = VacancyEnsemble {
            positions: vec![Point3::new(0.0, 0.0, -5.0)],
            origin_spot: Point3::new(0.0, 0.0, 0.0),
        };
        assert!(run_anneal(&geom, &no_nitrogen(), &vac, &bulk_cfg(21.2), 1).is_err());
    }

    #[test]
    fn zero_diffusion_only_step_zero_captures() {
        // D = 0 → N_tot = 0; with p_cap = 1 (V_uc = 2a³) a vacancy starting
        // in a nitrogen cell is captured by the single step-0 trial.
        let geom = DeviceGeometry::bulk(2000.0).unwrap();
        let mut cfg = bulk_cfg(0.0);
        cfg.unit_cell_volume_nm3 = 2.0 * cfg.cell_size_nm.powi(3);
        assert_eq!(cfg.total_jumps(), 0);
        assert!((capture_probability(&cfg).unwrap() - 1.0).abs() < 1e-12);

        let nitrogen = NitrogenEnsemble::from_positions(vec![
            Point3::new(1.0, 1.0, 53.0),
            Point3::new(101.0, 1.0, 53.0),
        ]);
        let vac = VacancyEnsemble {
            // First one shares cell (0,0,26) with nitrogen[0]; second does not.
            positions: vec![Point3::new(0.5, 0.5, 53.5), Point3::new(51.0, 1.0, 53.0)],
            origin_spot: Point3::new(0.0, 0.0, 0.0),
        };
        let out = run_anneal(&geom, &nitrogen, &vac, &cfg, 5).unwrap();
        assert_eq!(out.nv_records.len(), 1);
        assert_eq!(out.nv_records[0].capture_step, 0);
        assert_eq!(out.nv_records[0].position, Point3::new(1.0, 1.0, 53.0));
        assert_eq!(out.n_surviving, 1);
        assert!(out.is_conserved());
    }

    #[test]
    fn consumed_nitrogen_cannot_capture_again() {
        let geom = DeviceGeometry::bulk(2000.0).unwrap();
        let mut cfg = bulk_cfg(0.0);
        cfg.unit_cell_volume_nm3 = 2.0 * cfg.cell_size_nm.powi(3);
        let nitrogen = NitrogenEnsemble::from_positions(vec![Point3::new(1.0, 1.0, 53.0)]);
        let vac = VacancyEnsemble {
            positions: vec![Point3::new(0.5, 0.5, 53.5), Point3::new(1.2, 0.7, 52.4)],
            origin_spot: Point3::new(0.0, 0.0, 0.0),
        };
        let out = run_anneal(&geom, &nitrogen, &vac, &cfg, 5).unwrap();
        // One atom, two co-located vacancies, p = 1: exactly one NV forms.
        assert_eq!(out.nv_records.len(), 1);
        assert_eq!(out.n_surviving, 1);
    }

    #[test]
    fn deterministic_per_seed() {
        let geom = DeviceGeometry::tapered_pillar(480.0, 850.0, 1414.0, 1414.0).unwrap();
        let layer = DopedLayer::from_atoms_per_cm2(53.0, 3.66, 1.736e13).unwrap();
        let nitrogen = crate::geometry::sample_nitrogen(&geom, &layer, 3).unwrap();
        let beam = BeamParams::new(20.0, 240.0, 8.5e-5, 0.024, 1000.0).unwrap();
        let vac = generate_vacancies(&beam, &geom, Point3::new(0.0, 0.0, 0.0), 4).unwrap();
        let cfg = bulk_cfg(17.0);
        let a = run_anneal(&geom, &nitrogen, &vac, &cfg, 7).unwrap();
        let b = run_anneal(&geom, &nitrogen, &vac, &cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = run_anneal(&geom, &nitrogen, &vac, &cfg, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn conservation_holds_with_captures_and_absorption() {
        let geom = DeviceGeometry::tapered_pillar(280.0, 610.0, 1414.0, 1414.0).unwrap();
        let layer = DopedLayer::from_atoms_per_cm2(53.0, 3.66, 1.736e13).unwrap();
        let nitrogen = crate::geometry::sample_nitrogen(&geom, &layer, 11).unwrap();
        let beam = BeamParams::new(20.0, 240.0, 8.5e-5, 0.024, 1000.0).unwrap();
        let vac = generate_vacancies(&beam, &geom, Point3::new(0.0, 0.0, 0.0), 12).unwrap();
        let cfg = bulk_cfg(17.0);
        let out = run_anneal(&geom, &nitrogen, &vac, &cfg, 13).unwrap();
        assert!(out.is_conserved());
        assert!(!out.nv_records.is_empty(), "expected captures at this dose");
        assert!(out.n_absorbed_boundary > 0, "expected sidewall absorption");
        // NV positions are nitrogen positions, thus inside the device and
        // within the layer slab.
        for nv in &out.nv_records {
            assert!(geom.contains(nv.position));
            assert!(nv.position.z > 51.0 && nv.position.z < 55.0);
            assert!(nv.orientation < 4);
        }
    }

    #[test]
    fn msd_of_unbounded_walk_matches_lattice_identity() {
        // Desk-scale check; the full 1e5-walker version runs in acceptance.
        let geom = DeviceGeometry::bulk(4_000_000.0).unwrap();
        let n_walkers = 20_000;
        let mut cfg = bulk_cfg(21.2);
        cfg.diffusion_constant_nm2_per_s = cfg.diffusion_constant_for_jumps(2000.0);
        let n_tot = cfg.total_jumps();
        assert_eq!(n_tot, 2000);
        let start = Point3::new(0.0, 0.0, 2_000_000.0);
        let vac = VacancyEnsemble {
            positions: vec![start; n_walkers],
            origin_spot: Point3::new(0.0, 0.0, 0.0),
        };
        let out = run_anneal(&geom, &no_nitrogen(), &vac, &cfg, 19).unwrap();
        assert_eq!(out.n_surviving, n_walkers);
        let a = cfg.cell_size_nm;
        let start_cell = Point3::new(
            (cell_of(start.x, a) as f64 + 0.5) * a,
            (cell_of(start.y, a) as f64 + 0.5) * a,
            (cell_of(start.z, a) as f64 + 0.5) * a,
        );
        let msd = out
            .surviving_positions
            .iter()
            .map(|p| {
                let dx = p.x - start_cell.x;
                let dy = p.y - start_cell.y;
                let dz = p.z - start_cell.z;
                dx * dx + dy * dy + dz * dz
            })
            .sum::<f64>()
            / n_walkers as f64;
        let expected = a * a * n_tot as f64;
        assert!(
            (msd - expected).abs() / expected < 0.05,
            "MSD {msd} vs {expected}"
        );
    }

    #[test]
    fn ensemble_summary_single_trial() {
        let scenario = Scenario {
            geometry: DeviceGeometry::tapered_pillar(480.0, 850.0, 1414.0, 1414.0).unwrap(),
            layers: vec![DopedLayer::from_atoms_per_cm2(53.0, 3.66, 1.736e12).unwrap()],
            beam: BeamParams::new(20.0, 80.0, 8.5e-5, 0.024, 1000.0).unwrap(),
            lattice: bulk_cfg(17.0),
            target_x_nm: 0.0,
            target_y_nm: 0.0,
            nitrogen_window_half_nm: None,
        };
        let run = simulate_ensemble(&scenario, 1, 21).unwrap();
        assert_eq!(run.outcomes.len(), 1);
        assert_eq!(
            run.summary.mean_nv,
            run.outcomes[0].nv_records.len() as f64
        );
        assert_eq!(run.summary.se_nv, 0.0);
    }

    #[test]
    fn ensemble_is_deterministic_and_order_stable() {
        let scenario = Scenario {
            geometry: DeviceGeometry::bulk(1200.0).unwrap(),
            layers: vec![DopedLayer::from_atoms_per_cm2(53.0, 3.66, 1.736e13).unwrap()],
            beam: BeamParams::new(20.0, 24.0, 8.5e-5, 0.024, 1000.0).unwrap(),
            lattice: LatticeConfig::new(2.0, 660.0, 4.0).unwrap(),
            target_x_nm: 0.0,
            target_y_nm: 0.0,
            nitrogen_window_half_nm: Some(400.0),
        };
        let one = simulate_ensemble(&scenario, 8, 5).unwrap();
        let two = simulate_ensemble(&scenario, 8, 5).unwrap();
        assert_eq!(one, two);
        // Per-trial outcomes equal the directly derived trials.
        for (i, out) in one.outcomes.iter().enumerate() {
            let direct = run_trial(&scenario, derive_seed(5, "trial", i as u64)).unwrap();
            assert_eq!(*out, direct);
        }
    }

    #[test]
    fn windowed_nitrogen_matches_full_when_window_covers_device() {
        let geom = DeviceGeometry::tapered_pillar(480.0, 850.0, 1414.0, 1414.0).unwrap();
        let layer = DopedLayer::from_atoms_per_cm2(53.0, 3.66, 1.736e12).unwrap();
        let (z_lo, z_hi) = layer.z_range();
        let (hx, _) = geom.lateral_half_extents(z_lo, z_hi).unwrap();
        let full = crate::geometry::sample_nitrogen(&geom, &layer, 31).unwrap();
        let windowed = sample_nitrogen_windowed(&geom, &layer, 0.0, 0.0, hx, 31).unwrap();
        assert_eq!(full, windowed);
    }
}
