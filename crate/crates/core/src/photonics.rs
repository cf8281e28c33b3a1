//! Saturation-curve fitting and collection-efficiency post-processing.
//!
//! Saturation curves follow `PL = PL_sat/(1 + PL_sat/(α_NV·P)) + α_bg·P`
//! with a linear background. Collection-efficiency maps come from
//! external full-wave simulations as sweeps along two orthogonal lateral
//! displacements (per wavelength and dipole orientation) or as a prebuilt
//! 2-D grid; this module reduces, extrapolates and averages them over
//! truncated Gaussian emitter distributions.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::fit::{levenberg_marquardt, LeastSquares, LmOptions};
use crate::{Error, Result};

/// Photon counts versus excitation power, sorted by power.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationCurve {
    /// (P_exc in mW, PL in counts/s), ascending in power.
    pub samples: Vec<(f64, f64)>,
}

impl SaturationCurve {
    pub fn new(mut samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 5 {
            return Err(Error::Degenerate(format!(
                "saturation curve needs ≥ 5 samples, got {}",
                samples.len()
            )));
        }
        for &(p, _) in &samples {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Parameter(format!(
                    "excitation powers must be positive, got {p}"
                )));
            }
        }
        samples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if samples.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Parameter("excitation powers must be distinct".into()));
        }
        Ok(Self { samples })
    }
}

/// Saturation model `PL_sat/(1 + PL_sat/(α_NV·P)) + α_bg·P`.
pub fn saturation_model(pl_sat: f64, alpha_nv: f64, alpha_bg: f64, power: f64) -> f64 {
    pl_sat * alpha_nv * power / (alpha_nv * power + pl_sat) + alpha_bg * power
}

/// Fitted saturation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationFit {
    pub pl_sat_cps: f64,
    /// NV linear coefficient (counts/s per mW).
    pub alpha_nv: f64,
    /// Background linear coefficient (counts/s per mW).
    pub alpha_bg: f64,
    /// 3×3 covariance, row-major, order (PL_sat, α_NV, α_bg).
    pub covariance: Vec<f64>,
    /// False when the data never reach the saturation knee
    /// `P = PL_sat/α_NV`, leaving PL_sat poorly constrained.
    pub knee_reached: bool,
}

impl SaturationFit {
    pub fn param_error(&self, i: usize) -> f64 {
        self.covariance[i * 3 + i].max(0.0).sqrt()
    }
}

struct SaturationModel<'a> {
    curve: &'a SaturationCurve,
}

impl LeastSquares for SaturationModel<'_> {
    fn residuals(&self, p: &[f64]) -> Option<DVector<f64>> {
        let [s, a, b] = p.try_into().ok()?;
        if !(s + a).is_finite() {
            return None;
        }
        Some(DVector::from_iterator(
            self.curve.samples.len(),
            self.curve
                .samples
                .iter()
                .map(|&(power, pl)| saturation_model(s, a, b, power) - pl),
        ))
    }

    fn jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        let [s, a, _b] = p.try_into().ok()?;
        let n = self.curve.samples.len();
        let mut jac = DMatrix::zeros(n, 3);
        for (i, &(power, _)) in self.curve.samples.iter().enumerate() {
            let denom = a * power + s;
            let denom2 = denom * denom;
            jac[(i, 0)] = (a * power) * (a * power) / denom2;
            jac[(i, 1)] = s * s * power / denom2;
            jac[(i, 2)] = power;
        }
        Some(jac)
    }
}

/// Three-parameter nonlinear least squares on a saturation curve.
pub fn fit_saturation(curve: &SaturationCurve) -> Result<SaturationFit> {
    let max_pl = curve
        .samples
        .iter()
        .map(|&(_, pl)| pl)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_pl <= 0.0 {
        return Err(Error::Degenerate("curve has no positive counts".into()));
    }
    let (p0, pl0) = curve.samples[0];
    let init = [1.5 * max_pl, (pl0 / p0).max(1e-3), 0.0];
    let model = SaturationModel { curve };
    let fit = levenberg_marquardt(&model, &init, &LmOptions::default())?;

    let pl_sat = fit.params[0];
    let alpha_nv = fit.params[1];
    let alpha_bg = fit.params[2];
    if pl_sat <= 0.0 || alpha_nv <= 0.0 {
        return Err(Error::FitDiverged(format!(
            "unphysical saturation fit: PL_sat = {pl_sat:.3e}, α_NV = {alpha_nv:.3e}"
        )));
    }
    let p_max = curve.samples.last().unwrap().0;
    Ok(SaturationFit {
        pl_sat_cps: pl_sat,
        alpha_nv,
        alpha_bg,
        covariance: fit.covariance.iter().copied().collect(),
        knee_reached: p_max >= pl_sat / alpha_nv,
    })
}

/// One externally computed sweep: efficiency versus displacement along
/// the two orthogonal axes, for one emission wavelength and one dipole
/// orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct DipoleSweep {
    pub dipole: usize,
    pub wavelength_nm: f64,
    /// Spectral weight; uniform weighting when all equal.
    pub weight: f64,
    pub eta_x: Vec<f64>,
    pub eta_y: Vec<f64>,
}

/// Collection efficiency versus lateral displacement inside a pillar.
#[derive(Debug, Clone, PartialEq)]
pub enum EfficiencyMap {
    /// Reduced sweeps along the two orthogonal axes.
    AxisSweeps {
        dr_nm: Vec<f64>,
        eta_x: Vec<f64>,
        eta_y: Vec<f64>,
        pillar_diameter_nm: f64,
    },
    /// Prebuilt 2-D map on a rectangular grid, row-major over (dy, dx).
    Grid {
        dx_nm: Vec<f64>,
        dy_nm: Vec<f64>,
        eta: Vec<f64>,
        pillar_diameter_nm: f64,
    },
}

fn validate_eta(values: &[f64]) -> Result<()> {
    for &e in values {
        if !(e.is_finite() && (0.0..=1.0).contains(&e)) {
            return Err(Error::Parameter(format!(
                "efficiencies must be in [0, 1], got {e}"
            )));
        }
    }
    Ok(())
}

fn validate_axis(dr: &[f64], radius: f64) -> Result<()> {
    if dr.len() < 2 {
        return Err(Error::Degenerate("sweep needs ≥ 2 displacement samples".into()));
    }
    if dr[0] != 0.0 {
        return Err(Error::Parameter(format!(
            "sweep must start on axis (dr = 0), got {}",
            dr[0]
        )));
    }
    if dr.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("displacements must be strictly ascending".into()));
    }
    let max = *dr.last().unwrap();
    if max > radius * (1.0 + 1e-9) {
        return Err(Error::Parameter(format!(
            "displacement domain {max} nm exceeds the pillar radius {radius} nm"
        )));
    }
    Ok(())
}

impl EfficiencyMap {
    pub fn axis_sweeps(
        dr_nm: Vec<f64>,
        eta_x: Vec<f64>,
        eta_y: Vec<f64>,
        pillar_diameter_nm: f64,
    ) -> Result<Self> {
        if !(pillar_diameter_nm.is_finite() && pillar_diameter_nm > 0.0) {
            return Err(Error::Parameter("pillar diameter must be positive".into()));
        }
        validate_axis(&dr_nm, 0.5 * pillar_diameter_nm)?;
        if eta_x.len() != dr_nm.len() || eta_y.len() != dr_nm.len() {
            return Err(Error::Degenerate(
                "eta_x/eta_y must match the displacement samples".into(),
            ));
        }
        validate_eta(&eta_x)?;
        validate_eta(&eta_y)?;
        Ok(Self::AxisSweeps {
            dr_nm,
            eta_x,
            eta_y,
            pillar_diameter_nm,
        })
    }

    pub fn grid(
        dx_nm: Vec<f64>,
        dy_nm: Vec<f64>,
        eta: Vec<f64>,
        pillar_diameter_nm: f64,
    ) -> Result<Self> {
        if !(pillar_diameter_nm.is_finite() && pillar_diameter_nm > 0.0) {
            return Err(Error::Parameter("pillar diameter must be positive".into()));
        }
        if dx_nm.len() < 2 || dy_nm.len() < 2 {
            return Err(Error::Degenerate("grid needs ≥ 2 samples per axis".into()));
        }
        if dx_nm.windows(2).any(|w| w[1] <= w[0]) || dy_nm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("grid axes must be strictly ascending".into()));
        }
        if eta.len() != dx_nm.len() * dy_nm.len() {
            return Err(Error::Degenerate(format!(
                "grid has {} values for {}×{} axes",
                eta.len(),
                dx_nm.len(),
                dy_nm.len()
            )));
        }
        validate_eta(&eta)?;
        Ok(Self::Grid {
            dx_nm,
            dy_nm,
            eta,
            pillar_diameter_nm,
        })
    }

    /// Reduce per-(wavelength, dipole) sweeps: weighted average over the
    /// wavelengths, then the mean of the dipole orientations.
    pub fn from_dipole_sweeps(
        dr_nm: Vec<f64>,
        sweeps: &[DipoleSweep],
        pillar_diameter_nm: f64,
    ) -> Result<Self> {
        if sweeps.is_empty() {
            return Err(Error::Degenerate("no sweeps to reduce".into()));
        }
        let n = dr_nm.len();
        let mut dipoles: Vec<usize> = sweeps.iter().map(|s| s.dipole).collect();
        dipoles.sort_unstable();
        dipoles.dedup();

        let mut eta_x = vec![0.0; n];
        let mut eta_y = vec![0.0; n];
        for &d in &dipoles {
            let mut wx = vec![0.0; n];
            let mut wy = vec![0.0; n];
            let mut w_total = 0.0;
            for s in sweeps.iter().filter(|s| s.dipole == d) {
                if s.eta_x.len() != n || s.eta_y.len() != n {
                    return Err(Error::Degenerate(
                        "sweep length does not match the displacement samples".into(),
                    ));
                }
                if !(s.weight.is_finite() && s.weight > 0.0) {
                    return Err(Error::Parameter(format!(
                        "sweep weight must be positive, got {}",
                        s.weight
                    )));
                }
                for i in 0..n {
                    wx[i] += s.weight * s.eta_x[i];
                    wy[i] += s.weight * s.eta_y[i];
                }
                w_total += s.weight;
            }
            for i in 0..n {
                eta_x[i] += wx[i] / w_total / dipoles.len() as f64;
                eta_y[i] += wy[i] / w_total / dipoles.len() as f64;
            }
        }
        Self::axis_sweeps(dr_nm, eta_x, eta_y, pillar_diameter_nm)
    }

    pub fn pillar_diameter_nm(&self) -> f64 {
        match *self {
            Self::AxisSweeps {
                pillar_diameter_nm, ..
            }
            | Self::Grid {
                pillar_diameter_nm, ..
            } => pillar_diameter_nm,
        }
    }
}

fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> Result<f64> {
    let last = *xs.last().unwrap();
    if x < xs[0] || x > last {
        return Err(Error::OutOfRange(format!(
            "displacement {x} nm outside the sweep domain [{}, {last}] nm",
            xs[0]
        )));
    }
    let idx = xs.partition_point(|&v| v <= x);
    if idx == 0 {
        return Ok(ys[0]);
    }
    if idx >= xs.len() {
        return Ok(*ys.last().unwrap());
    }
    let (x0, x1) = (xs[idx - 1], xs[idx]);
    let t = (x - x0) / (x1 - x0);
    Ok(ys[idx - 1] * (1.0 - t) + ys[idx] * t)
}

fn bilinear(dx: &[f64], dy: &[f64], eta: &[f64], x: f64, y: f64) -> Result<f64> {
    if x < dx[0] || x > *dx.last().unwrap() || y < dy[0] || y > *dy.last().unwrap() {
        return Err(Error::OutOfRange(format!(
            "displacement ({x}, {y}) nm outside the grid [{}, {}]×[{}, {}] nm",
            dx[0],
            dx.last().unwrap(),
            dy[0],
            dy.last().unwrap()
        )));
    }
    let ix = dx.partition_point(|&v| v <= x).clamp(1, dx.len() - 1);
    let iy = dy.partition_point(|&v| v <= y).clamp(1, dy.len() - 1);
    let tx = (x - dx[ix - 1]) / (dx[ix] - dx[ix - 1]);
    let ty = (y - dy[iy - 1]) / (dy[iy] - dy[iy - 1]);
    let nx = dx.len();
    let at = |col: usize, row: usize| eta[row * nx + col];
    Ok(at(ix - 1, iy - 1) * (1.0 - tx) * (1.0 - ty)
        + at(ix, iy - 1) * tx * (1.0 - ty)
        + at(ix - 1, iy) * (1.0 - tx) * ty
        + at(ix, iy) * tx * ty)
}

/// Efficiency at a radial displacement `dr` and azimuth `theta`.
///
/// Axis sweeps extrapolate as the dipole-superposition weighted average
/// `cos²θ·η_x(dr) + sin²θ·η_y(dr)`; grid maps interpolate bilinearly.
pub fn extrapolate_efficiency(map: &EfficiencyMap, dr_nm: f64, theta: f64) -> Result<f64> {
    if !(dr_nm.is_finite() && dr_nm >= 0.0) {
        return Err(Error::OutOfRange(format!(
            "radial displacement must be ≥ 0, got {dr_nm}"
        )));
    }
    match map {
        EfficiencyMap::AxisSweeps {
            dr_nm: dr,
            eta_x,
            eta_y,
            ..
        } => {
            let ex = interp_linear(dr, eta_x, dr_nm)?;
            let ey = interp_linear(dr, eta_y, dr_nm)?;
            let c = theta.cos();
            let s = theta.sin();
            Ok(c * c * ex + s * s * ey)
        }
        EfficiencyMap::Grid {
            dx_nm, dy_nm, eta, ..
        } => bilinear(dx_nm, dy_nm, eta, dr_nm * theta.cos(), dr_nm * theta.sin()),
    }
}

/// Mean efficiency and the localization spread of a truncated Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEfficiency {
    pub mean_eta: f64,
    /// Pooled per-axis RMS of the truncated distribution.
    pub sigma_loc_pillar_nm: f64,
}

/// Pooled per-axis RMS of an isotropic Gaussian of width `sigma0`
/// truncated at radius `r`: closed form of `√(E[r²]/2)`.
fn truncated_sigma_loc(sigma0: f64, radius: f64) -> f64 {
    if sigma0 == 0.0 {
        return 0.0;
    }
    if sigma0.is_infinite() {
        return 0.5 * radius;
    }
    let u = radius * radius / (2.0 * sigma0 * sigma0);
    let mean_r2 = if u < 1e-4 {
        // Series around the uniform-disk limit avoids 1 − e^(−u) cancellation.
        0.5 * radius * radius * (1.0 - u / 6.0)
    } else {
        2.0 * sigma0 * sigma0 * (1.0 - (-u).exp() * (1.0 + u)) / (1.0 - (-u).exp())
    };
    (0.5 * mean_r2).sqrt()
}

fn gaussian_weight(r: f64, sigma0: f64) -> f64 {
    if sigma0.is_infinite() {
        1.0
    } else {
        (-r * r / (2.0 * sigma0 * sigma0)).exp()
    }
}

/// Average the map over an isotropic Gaussian of width `sigma0`
/// truncated at the pillar wall and normalized on the disk. Also returns
/// the σ_loc of the truncated distribution. `sigma0` may be 0 (emitter
/// exactly on axis) or infinite (uniform over the disk).
pub fn mean_efficiency(map: &EfficiencyMap, sigma0_nm: f64) -> Result<MeanEfficiency> {
    mean_efficiency_with_grid(map, sigma0_nm, 2048, 256)
}

/// [`mean_efficiency`] with explicit quadrature resolution, for
/// convergence checks.
pub fn mean_efficiency_with_grid(
    map: &EfficiencyMap,
    sigma0_nm: f64,
    n_radial: usize,
    n_theta: usize,
) -> Result<MeanEfficiency> {
    if !(sigma0_nm >= 0.0) {
        return Err(Error::Parameter(format!(
            "sigma0 must be ≥ 0, got {sigma0_nm}"
        )));
    }
    let radius = 0.5 * map.pillar_diameter_nm();
    let covered = match map {
        EfficiencyMap::AxisSweeps { dr_nm, .. } => *dr_nm.last().unwrap() >= radius * (1.0 - 1e-6),
        EfficiencyMap::Grid { dx_nm, dy_nm, .. } => {
            dx_nm[0] <= -radius * (1.0 - 1e-6)
                && *dx_nm.last().unwrap() >= radius * (1.0 - 1e-6)
                && dy_nm[0] <= -radius * (1.0 - 1e-6)
                && *dy_nm.last().unwrap() >= radius * (1.0 - 1e-6)
        }
    };
    if !covered {
        return Err(Error::OutOfRange(
            "efficiency map does not cover the pillar radius".into(),
        ));
    }

    if sigma0_nm == 0.0 {
        // Delta limit: the angle-averaged on-axis value.
        let mean_eta = match map {
            EfficiencyMap::AxisSweeps { eta_x, eta_y, .. } => 0.5 * (eta_x[0] + eta_y[0]),
            EfficiencyMap::Grid {
                dx_nm, dy_nm, eta, ..
            } => bilinear(dx_nm, dy_nm, eta, 0.0, 0.0)?,
        };
        return Ok(MeanEfficiency {
            mean_eta,
            sigma_loc_pillar_nm: 0.0,
        });
    }

    // Narrow distributions need radial resolution ∝ R/σ0.
    let mut n_r = n_radial.max(((radius / sigma0_nm) * 16.0).min(20_000.0) as usize);
    if n_r % 2 == 1 {
        n_r += 1;
    }
    let max_r = radius * (1.0 - 1e-12);
    let h = max_r / n_r as f64;

    // Angle average of η at fixed r. Axis sweeps integrate analytically:
    // ∫ (cos²θ ηx + sin²θ ηy) dθ / 2π = (ηx + ηy)/2.
    let angle_mean = |r: f64| -> Result<f64> {
        match map {
            EfficiencyMap::AxisSweeps {
                dr_nm,
                eta_x,
                eta_y,
                ..
            } => {
                let r_clamped = r.min(*dr_nm.last().unwrap());
                Ok(0.5
                    * (interp_linear(dr_nm, eta_x, r_clamped)?
                        + interp_linear(dr_nm, eta_y, r_clamped)?))
            }
            EfficiencyMap::Grid {
                dx_nm, dy_nm, eta, ..
            } => {
                let mut sum = 0.0;
                for k in 0..n_theta {
                    let theta = 2.0 * std::f64::consts::PI * k as f64 / n_theta as f64;
                    let x = (r * theta.cos()).clamp(dx_nm[0], *dx_nm.last().unwrap());
                    let y = (r * theta.sin()).clamp(dy_nm[0], *dy_nm.last().unwrap());
                    sum += bilinear(dx_nm, dy_nm, eta, x, y)?;
                }
                Ok(sum / n_theta as f64)
            }
        }
    };

    // Composite Simpson over r of w(r)·r·⟨η⟩(r) and of w(r)·r.
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..=n_r {
        let r = i as f64 * h;
        let coeff = if i == 0 || i == n_r {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let w = gaussian_weight(r, sigma0_nm) * r;
        num += coeff * w * angle_mean(r)?;
        den += coeff * w;
    }
    if den == 0.0 {
        return Err(Error::Degenerate("integration weight vanished".into()));
    }
    Ok(MeanEfficiency {
        mean_eta: num / den,
        sigma_loc_pillar_nm: truncated_sigma_loc(sigma0_nm, radius),
    })
}

fn read_csv_rows(path: &Path, expected_cols: usize) -> Result<Vec<Vec<f64>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if line_no == 0 && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            continue; // header row
        }
        if fields.len() != expected_cols {
            return Err(Error::Parse(format!(
                "{}:{}: expected {expected_cols} columns, found {}",
                path.display(),
                line_no + 1,
                fields.len()
            )));
        }
        let row: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        rows.push(
            row.map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), line_no + 1)))?,
        );
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

/// Load axis sweeps from CSV columns `(dr_nm, eta_x, eta_y)`.
pub fn read_axis_sweeps_csv(path: &Path, pillar_diameter_nm: f64) -> Result<EfficiencyMap> {
    let rows = read_csv_rows(path, 3)?;
    let dr: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let ex: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let ey: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    EfficiencyMap::axis_sweeps(dr, ex, ey, pillar_diameter_nm)
}

/// Load a full grid from CSV columns `(dx_nm, dy_nm, eta)`; rows must
/// cover a complete rectangular grid.
pub fn read_grid_csv(path: &Path, pillar_diameter_nm: f64) -> Result<EfficiencyMap> {
    let rows = read_csv_rows(path, 3)?;
    let mut dx: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let mut dy: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    dx.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dx.dedup();
    dy.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dy.dedup();
    let nx = dx.len();
    let ny = dy.len();
    if rows.len() != nx * ny {
        return Err(Error::Parse(format!(
            "{}: {} rows do not fill a {nx}×{ny} grid",
            path.display(),
            rows.len()
        )));
    }
    let mut eta = vec![f64::NAN; nx * ny];
    for r in &rows {
        let ix = dx.partition_point(|&v| v < r[0]);
        let iy = dy.partition_point(|&v| v < r[1]);
        eta[iy * nx + ix] = r[2];
    }
    if eta.iter().any(|e| e.is_nan()) {
        return Err(Error::Parse(format!(
            "{}: grid has duplicate or missing nodes",
            path.display()
        )));
    }
    EfficiencyMap::grid(dx, dy, eta, pillar_diameter_nm)
}

/// Load a saturation curve from CSV columns `(P_mW, PL_cps)`.
pub fn read_saturation_csv(path: &Path) -> Result<SaturationCurve> {
    let rows = read_csv_rows(path, 2)?;
    SaturationCurve::new(rows.iter().map(|r| (r[0], r[1])).collect())
}
