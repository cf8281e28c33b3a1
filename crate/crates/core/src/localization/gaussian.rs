//! Isotropic 2-D Gaussian fit of averaged photoluminescence images,
//! `PL(x,y) = PL_max · e^{−((x−x0)² + (y−y0)²)/(2σ_tot²)} + offset`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::fit::{levenberg_marquardt, LeastSquares, LmOptions};
use crate::localization::image::PixelImage;
use crate::{Error, Result};

/// Fitted isotropic Gaussian peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit2D {
    /// Peak amplitude above the offset (counts/s).
    pub amplitude: f64,
    pub x0_nm: f64,
    pub y0_nm: f64,
    pub sigma_tot_nm: f64,
    pub offset: f64,
    /// 5×5 covariance, row-major, parameter order
    /// (amplitude, x0, y0, sigma, offset).
    pub covariance: Vec<f64>,
    pub chi2: f64,
    pub iterations: usize,
}

impl GaussianFit2D {
    pub fn sigma_tot_err_nm(&self) -> f64 {
        self.covariance[3 * 5 + 3].max(0.0).sqrt()
    }

    pub fn center_err_nm(&self) -> (f64, f64) {
        (
            self.covariance[6].max(0.0).sqrt(),
            self.covariance[12].max(0.0).sqrt(),
        )
    }

    pub fn value_at(&self, x_nm: f64, y_nm: f64) -> f64 {
        let r2 = (x_nm - self.x0_nm).powi(2) + (y_nm - self.y0_nm).powi(2);
        self.amplitude * (-r2 / (2.0 * self.sigma_tot_nm * self.sigma_tot_nm)).exp() + self.offset
    }
}

struct GaussianModel<'a> {
    image: &'a PixelImage,
}

impl LeastSquares for GaussianModel<'_> {
    fn residuals(&self, p: &[f64]) -> Option<DVector<f64>> {
        let [amp, x0, y0, sigma, offset] = p.try_into().ok()?;
        if sigma == 0.0 || !sigma.is_finite() {
            return None;
        }
        let inv_2s2 = 1.0 / (2.0 * sigma * sigma);
        let img = self.image;
        let mut r = DVector::zeros(img.data.len());
        let mut idx = 0;
        for row in 0..img.height {
            for col in 0..img.width {
                let (x, y) = img.pixel_center(col, row);
                let r2 = (x - x0) * (x - x0) + (y - y0) * (y - y0);
                r[idx] = amp * (-r2 * inv_2s2).exp() + offset - img.get(col, row);
                idx += 1;
            }
        }
        Some(r)
    }

    fn jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        let [amp, x0, y0, sigma, _offset] = p.try_into().ok()?;
        if sigma == 0.0 || !sigma.is_finite() {
            return None;
        }
        let s2 = sigma * sigma;
        let img = self.image;
        let mut jac = DMatrix::zeros(img.data.len(), 5);
        let mut idx = 0;
        for row in 0..img.height {
            for col in 0..img.width {
                let (x, y) = img.pixel_center(col, row);
                let dx = x - x0;
                let dy = y - y0;
                let r2 = dx * dx + dy * dy;
                let e = (-r2 / (2.0 * s2)).exp();
                jac[(idx, 0)] = e;
                jac[(idx, 1)] = amp * e * dx / s2;
                jac[(idx, 2)] = amp * e * dy / s2;
                jac[(idx, 3)] = amp * e * r2 / (s2 * sigma);
                jac[(idx, 4)] = 1.0;
                idx += 1;
            }
        }
        Some(jac)
    }
}

/// Nonlinear least squares for the five parameters of an isotropic
/// Gaussian peak. Non-convergence and peakless images are reported as
/// errors with diagnostics, never a silent fallback.
pub fn fit_gaussian2d(image: &PixelImage) -> Result<GaussianFit2D> {
    let (peak_col, peak_row, peak_val) = image.max_pixel();
    let offset0 = image.min_value();
    let amp0 = peak_val - offset0;
    if amp0 <= 0.0 {
        return Err(Error::Degenerate(
            "image has no peak (max equals min)".into(),
        ));
    }

    // Moment-based width seed from above-half-max pixels.
    let (px, py) = image.pixel_center(peak_col, peak_row);
    let mut w_sum = 0.0;
    let mut r2_sum = 0.0;
    for row in 0..image.height {
        for col in 0..image.width {
            let w = image.get(col, row) - offset0;
            if w > 0.5 * amp0 {
                let (x, y) = image.pixel_center(col, row);
                w_sum += w;
                r2_sum += w * ((x - px).powi(2) + (y - py).powi(2));
            }
        }
    }
    let sigma0 = if w_sum > 0.0 {
        (r2_sum / (2.0 * w_sum)).sqrt().max(image.pixel_pitch_nm)
    } else {
        image.pixel_pitch_nm
    };

    let model = GaussianModel { image };
    let fit = levenberg_marquardt(
        &model,
        &[amp0, px, py, sigma0, offset0],
        &LmOptions::default(),
    )?;

    let amplitude = fit.params[0];
    let sigma = fit.params[3].abs();
    let (x0, y0) = (fit.params[1], fit.params[2]);
    let width_nm = image.width as f64 * image.pixel_pitch_nm;
    let height_nm = image.height as f64 * image.pixel_pitch_nm;
    if amplitude <= 0.0 {
        return Err(Error::FitDiverged(format!(
            "fitted amplitude {amplitude:.3e} is not a peak"
        )));
    }
    if sigma < 0.05 * image.pixel_pitch_nm || sigma > 2.0 * width_nm.max(height_nm) {
        return Err(Error::FitDiverged(format!(
            "fitted width {sigma:.3} nm is outside the resolvable range"
        )));
    }
    if x0 < image.origin_x_nm - width_nm
        || x0 > image.origin_x_nm + 2.0 * width_nm
        || y0 < image.origin_y_nm - height_nm
        || y0 > image.origin_y_nm + 2.0 * height_nm
    {
        return Err(Error::FitDiverged(format!(
            "fitted center ({x0:.1}, {y0:.1}) nm left the image"
        )));
    }

    Ok(GaussianFit2D {
        amplitude,
        x0_nm: x0,
        y0_nm: y0,
        sigma_tot_nm: sigma,
        offset: fit.params[4],
        covariance: fit.covariance.iter().copied().collect(),
        chi2: fit.chi2,
        iterations: fit.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::numeric_jacobian;
    use crate::localization::image::radial_profile;

    fn gaussian_image(
        width: usize,
        height: usize,
        pitch: f64,
        cx: f64,
        cy: f64,
        amp: f64,
        sigma: f64,
        offset: f64,
    ) -> PixelImage {
        let half_w = (width as f64 - 1.0) / 2.0 * pitch;
        let half_h = (height as f64 - 1.0) / 2.0 * pitch;
        let mut img = PixelImage::zeros(width, height, pitch, -half_w, -half_h).unwrap();
        for row in 0..height {
            for col in 0..width {
                let (x, y) = img.pixel_center(col, row);
                let r2 = (x - cx).powi(2) + (y - cy).powi(2);
                img.set(col, row, amp * (-r2 / (2.0 * sigma * sigma)).exp() + offset);
            }
        }
        img
    }

    #[test]
    fn noiseless_roundtrip_recovers_parameters() {
        // σ = 259.4 nm ≈ √(102² + 235² + 41²), the full measured budget.
        let sigma = 259.4;
        let img = gaussian_image(51, 51, 40.0, 13.0, -27.0, 480.0, sigma, 25.0);
        let fit = fit_gaussian2d(&img).unwrap();
        assert!((fit.sigma_tot_nm - sigma).abs() / sigma < 1e-3);
        assert!((fit.amplitude - 480.0).abs() / 480.0 < 1e-3);
        assert!((fit.x0_nm - 13.0).abs() < 0.3);
        assert!((fit.y0_nm + 27.0).abs() < 0.3);
        assert!((fit.offset - 25.0).abs() < 0.5);
    }

    #[test]
    fn flat_image_is_an_error() {
        let mut img = PixelImage::zeros(31, 31, 40.0, 0.0, 0.0).unwrap();
        for v in img.data.iter_mut() {
            *v = 3.0;
        }
        assert!(fit_gaussian2d(&img).is_err());
    }

    #[test]
    fn translation_equivariance() {
        let img = gaussian_image(41, 41, 40.0, 0.0, 0.0, 100.0, 200.0, 5.0);
        let fit = fit_gaussian2d(&img).unwrap();
        // Shift the image content by 3 pixels in x, 2 in y.
        let mut shifted = img.clone();
        for row in 0..img.height {
            for col in 0..img.width {
                let src_col = col.wrapping_sub(3);
                let src_row = row.wrapping_sub(2);
                let v = if src_col < img.width && src_row < img.height {
                    img.get(src_col, src_row)
                } else {
                    5.0
                };
                shifted.set(col, row, v);
            }
        }
        let fit2 = fit_gaussian2d(&shifted).unwrap();
        assert!((fit2.x0_nm - (fit.x0_nm + 3.0 * 40.0)).abs() < 0.5);
        assert!((fit2.y0_nm - (fit.y0_nm + 2.0 * 40.0)).abs() < 0.5);
        assert!((fit2.sigma_tot_nm - fit.sigma_tot_nm).abs() < 0.5);
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let img = gaussian_image(15, 13, 40.0, 20.0, -10.0, 80.0, 150.0, 2.0);
        let model = GaussianModel { image: &img };
        let p = [70.0, 10.0, 5.0, 170.0, 3.0];
        let analytic = model.jacobian(&p).unwrap();
        let numeric = numeric_jacobian(&model, &p).unwrap();
        assert!((analytic - numeric).amax() < 1e-4);
    }

    #[test]
    fn radial_binning_of_fitted_model_matches_analytic_profile() {
        // Bin the fitted model image at 40 nm and compare each annulus
        // mean against the analytic radial Gaussian.
        let sigma = 259.4;
        let img = gaussian_image(51, 51, 40.0, 0.0, 0.0, 480.0, sigma, 25.0);
        let fit = fit_gaussian2d(&img).unwrap();
        let mut model_img = img.clone();
        for row in 0..img.height {
            for col in 0..img.width {
                let (x, y) = img.pixel_center(col, row);
                model_img.set(col, row, fit.value_at(x, y));
            }
        }
        // Compare each annulus mean against the analytic curve at the
        // pixel-weighted mean radius of that annulus (the bin midpoint is
        // biased: pixel count per annulus grows with r).
        let mut radius_img = img.clone();
        for row in 0..img.height {
            for col in 0..img.width {
                let (x, y) = img.pixel_center(col, row);
                let r = ((x - fit.x0_nm).powi(2) + (y - fit.y0_nm).powi(2)).sqrt();
                radius_img.set(col, row, r);
            }
        }
        let bins = radial_profile(&model_img, fit.x0_nm, fit.y0_nm, 40.0).unwrap();
        let radius_bins = radial_profile(&radius_img, fit.x0_nm, fit.y0_nm, 40.0).unwrap();
        for (b, rb) in bins.iter().zip(&radius_bins).take(12) {
            let r_bar = rb.mean;
            let analytic = fit.amplitude
                * (-r_bar * r_bar / (2.0 * fit.sigma_tot_nm * fit.sigma_tot_nm)).exp()
                + fit.offset;
            assert!(
                (b.mean - analytic).abs() / analytic < 0.01,
                "r̄ = {r_bar} nm: {} vs {analytic}",
                b.mean
            );
        }
    }
}
