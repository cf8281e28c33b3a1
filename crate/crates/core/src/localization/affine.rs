//! Least-squares affine registration of detected peak positions onto a
//! design pattern, used to remove imaging-system aberrations. The
//! post-fit residual RMSE is the systematic registration error σ_sys.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// 2-D affine map `p ↦ L·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform2D {
    pub linear: [[f64; 2]; 2],
    pub translation: [f64; 2],
}

impl AffineTransform2D {
    pub fn identity() -> Self {
        Self {
            linear: [[1.0, 0.0], [0.0, 1.0]],
            translation: [0.0, 0.0],
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.linear[0][0] * x + self.linear[0][1] * y + self.translation[0],
            self.linear[1][0] * x + self.linear[1][1] * y + self.translation[1],
        )
    }

    pub fn determinant(&self) -> f64 {
        self.linear[0][0] * self.linear[1][1] - self.linear[0][1] * self.linear[1][0]
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        if det.abs() < 1e-12 {
            return Err(Error::Degenerate(format!(
                "affine linear part is singular (det = {det:.3e})"
            )));
        }
        let inv = [
            [self.linear[1][1] / det, -self.linear[0][1] / det],
            [-self.linear[1][0] / det, self.linear[0][0] / det],
        ];
        let tx = -(inv[0][0] * self.translation[0] + inv[0][1] * self.translation[1]);
        let ty = -(inv[1][0] * self.translation[0] + inv[1][1] * self.translation[1]);
        Ok(Self {
            linear: inv,
            translation: [tx, ty],
        })
    }
}

/// Fit the least-squares affine map taking `detected` points onto
/// `design` points. Returns the transform and the post-fit RMSE of the
/// residual displacements, `√(Σ‖r_i‖²/n)`.
///
/// Needs at least 3 non-collinear correspondences.
pub fn fit_affine(
    detected: &[(f64, f64)],
    design: &[(f64, f64)],
) -> Result<(AffineTransform2D, f64)> {
    let n = detected.len();
    if n != design.len() {
        return Err(Error::Degenerate(format!(
            "point lists differ in length: {n} vs {}",
            design.len()
        )));
    }
    if n < 3 {
        return Err(Error::Degenerate(format!(
            "affine fit needs ≥ 3 correspondences, got {n}"
        )));
    }

    // Two decoupled systems [x y 1]·c = x' and [x y 1]·c = y'.
    let mut basis = DMatrix::zeros(n, 3);
    let mut bx = DVector::zeros(n);
    let mut by = DVector::zeros(n);
    for (i, ((dx, dy), (gx, gy))) in detected.iter().zip(design).enumerate() {
        basis[(i, 0)] = *dx;
        basis[(i, 1)] = *dy;
        basis[(i, 2)] = 1.0;
        bx[i] = *gx;
        by[i] = *gy;
    }

    let svd = basis.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if s_min <= 1e-10 * s_max {
        return Err(Error::Degenerate(
            "correspondences are collinear or coincident".into(),
        ));
    }
    let cx = svd
        .solve(&bx, 1e-12 * s_max)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let cy = svd
        .solve(&by, 1e-12 * s_max)
        .map_err(|e| Error::Degenerate(e.to_string()))?;

    let transform = AffineTransform2D {
        linear: [[cx[0], cx[1]], [cy[0], cy[1]]],
        translation: [cx[2], cy[2]],
    };

    let mut sq_sum = 0.0;
    for ((dx, dy), (gx, gy)) in detected.iter().zip(design) {
        let (mx, my) = transform.apply(*dx, *dy);
        sq_sum += (mx - gx) * (mx - gx) + (my - gy) * (my - gy);
    }
    Ok((transform, (sq_sum / n as f64).sqrt()))
}
