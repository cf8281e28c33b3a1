//! Shared numerical fitting machinery: damped least squares and 1-D
//! bounded optimization.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// A nonlinear least-squares problem with analytic Jacobian.
pub trait LeastSquares {
    /// Residual vector at `params`; `None` if the parameters are invalid.
    fn residuals(&self, params: &[f64]) -> Option<DVector<f64>>;
    /// Jacobian `∂r_i/∂p_j` at `params`.
    fn jacobian(&self, params: &[f64]) -> Option<DMatrix<f64>>;
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative cost-decrease convergence threshold.
    pub ftol: f64,
    /// Relative step-size convergence threshold.
    pub xtol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            ftol: 1e-12,
            xtol: 1e-12,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: Vec<f64>,
    /// Parameter covariance `(JᵀJ)⁻¹ · χ²/(m−n)`.
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub iterations: usize,
}

impl LmFit {
    /// 1σ uncertainty of parameter `i`.
    pub fn param_error(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }
}

/// Levenberg-Marquardt minimization of `‖r(p)‖²`.
///
/// Reports non-convergence as an error with diagnostics; there is no
/// silent fallback.
pub fn levenberg_marquardt<M: LeastSquares>(
    model: &M,
    initial: &[f64],
    opts: &LmOptions,
) -> Result<LmFit> {
    let n = initial.len();
    let mut params = initial.to_vec();
    let mut residuals = model
        .residuals(&params)
        .ok_or_else(|| Error::FitDiverged("invalid initial parameters".into()))?;
    let m = residuals.len();
    if m < n {
        return Err(Error::Degenerate(format!(
            "{m} residuals cannot constrain {n} parameters"
        )));
    }
    let mut chi2 = residuals.norm_squared();
    let mut damping = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let jacobian = model
            .jacobian(&params)
            .ok_or_else(|| Error::FitDiverged("Jacobian undefined at current point".into()))?;
        let jt = jacobian.transpose();
        let hessian = &jt * &jacobian;
        let gradient = &jt * &residuals;

        let mut step_accepted = false;
        for _ in 0..32 {
            let mut damped = hessian.clone();
            for i in 0..n {
                let d = hessian[(i, i)];
                damped[(i, i)] = d + damping * d.max(1e-12);
            }
            let delta = match damped.cholesky() {
                Some(chol) => chol.solve(&gradient),
                None => {
                    damping *= 4.0;
                    continue;
                }
            };
            let trial: Vec<f64> = params.iter().zip(delta.iter()).map(|(p, d)| p - d).collect();
            let trial_residuals = match model.residuals(&trial) {
                Some(r) => r,
                None => {
                    damping *= 4.0;
                    continue;
                }
            };
            let trial_chi2 = trial_residuals.norm_squared();
            if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                let step_small = delta
                    .iter()
                    .zip(&params)
                    .all(|(d, p)| d.abs() <= opts.xtol * (p.abs() + opts.xtol));
                let cost_small = (chi2 - trial_chi2) <= opts.ftol * chi2.max(1e-300);
                params = trial;
                residuals = trial_residuals;
                chi2 = trial_chi2;
                damping = (damping / 3.0).max(1e-14);
                step_accepted = true;
                if step_small || cost_small {
                    converged = true;
                }
                break;
            }
            damping *= 4.0;
            if damping > 1e14 {
                break;
            }
        }
        if converged {
            break;
        }
        if !step_accepted {
            // No downhill step found at any damping: stationary point.
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::FitDiverged(format!(
            "no convergence after {iterations} iterations (chi2 = {chi2:.6e})"
        )));
    }

    let jacobian = model
        .jacobian(&params)
        .ok_or_else(|| Error::FitDiverged("Jacobian undefined at solution".into()))?;
    let hessian = jacobian.transpose() * &jacobian;
    let dof = (m - n).max(1) as f64;
    let scale = chi2 / dof;
    let covariance = hessian
        .try_inverse()
        .map(|inv| inv * scale)
        .unwrap_or_else(|| DMatrix::zeros(n, n));

    Ok(LmFit {
        params,
        covariance,
        chi2,
        iterations,
    })
}

/// Finite-difference Jacobian, for validating analytic ones in tests.
pub fn numeric_jacobian<M: LeastSquares>(model: &M, params: &[f64]) -> Option<DMatrix<f64>> {
    let base = model.residuals(params)?;
    let m = base.len();
    let n = params.len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let h = 1e-6 * params[j].abs().max(1e-6);
        let mut plus = params.to_vec();
        plus[j] += h;
        let mut minus = params.to_vec();
        minus[j] -= h;
        let rp = model.residuals(&plus)?;
        let rm = model.residuals(&minus)?;
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    Some(jac)
}

const INV_GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
/// Returns `(x_min, f(x_min))`.
pub fn golden_section_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let mut a = lo;
    let mut b = hi;
    let mut x1 = b - INV_GOLDEN * (b - a);
    let mut x2 = a + INV_GOLDEN * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a) > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_GOLDEN * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_GOLDEN * (b - a);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Bisection root finding on `[lo, hi]`; requires a sign change.
pub fn bisect_root(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let mut a = lo;
    let mut b = hi;
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Degenerate(format!(
            "no sign change on [{a}, {b}]: f = ({fa:.3e}, {fb:.3e})"
        )));
    }
    while (b - a) > tol {
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Ordinary least squares for `y = slope·x + intercept`, returning
/// `(slope, intercept, r²)`.
pub fn linear_regression(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Degenerate(format!(
            "regression needs ≥ 2 paired points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let syy: f64 = ys.iter().map(|y| (y - y_mean) * (y - y_mean)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all x values identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, intercept, r2))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Exponential {
        xs: Vec<f64>,
        ys: Vec<f64>,
    }

    impl LeastSquares for Exponential {
        fn residuals(&self, p: &[f64]) -> Option<DVector<f64>> {
            let (a, k, c) = (p[0], p[1], p[2]);
            Some(DVector::from_iterator(
                self.xs.len(),
                self.xs
                    .iter()
                    .zip(&self.ys)
                    .map(|(x, y)| a * (-k * x).exp() + c - y),
            ))
        }

        fn jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
            let (a, k, _c) = (p[0], p[1], p[2]);
            let mut jac = DMatrix::zeros(self.xs.len(), 3);
            for (i, x) in self.xs.iter().enumerate() {
                let e = (-k * x).exp();
                jac[(i, 0)] = e;
                jac[(i, 1)] = -a * x * e;
                jac[(i, 2)] = 1.0;
            }
            Some(jac)
        }
    }

    #[test]
    fn lm_recovers_exponential_parameters() {
        let truth = [2.5, 0.7, 0.3];
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| truth[0] * (-truth[1] * x).exp() + truth[2])
            .collect();
        let model = Exponential { xs, ys };
        let fit = levenberg_marquardt(&model, &[1.0, 0.2, 0.0], &LmOptions::default()).unwrap();
        for (got, want) in fit.params.iter().zip(&truth) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        assert!(fit.chi2 < 1e-16);
    }

    #[test]
    fn lm_jacobian_matches_finite_differences() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let ys = vec![0.0; 20];
        let model = Exponential { xs, ys };
        let p = [1.7, 0.4, 0.2];
        let analytic = model.jacobian(&p).unwrap();
        let numeric = numeric_jacobian(&model, &p).unwrap();
        assert!((analytic - numeric).amax() < 1e-5);
    }

    #[test]
    fn lm_underdetermined_is_an_error() {
        let model = Exponential {
            xs: vec![1.0, 2.0],
            ys: vec![1.0, 2.0],
        };
        assert!(levenberg_marquardt(&model, &[1.0, 1.0, 0.0], &LmOptions::default()).is_err());
    }

    #[test]
    fn golden_section_finds_quadratic_minimum() {
        let (x, fx) = golden_section_min(|x| (x - 3.2) * (x - 3.2) + 1.0, 0.0, 10.0, 1e-10);
        // √ε comparison floor: f differences vanish below ~1.5e-8 here.
        assert!((x - 3.2).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-12);
    }

    #[test]
    fn golden_section_handles_boundary_minimum() {
        let (x, _) = golden_section_min(|x| x, 0.0, 5.0, 1e-10);
        assert!(x < 1e-8);
    }

    #[test]
    fn bisect_finds_root() {
        let r = bisect_root(|x| x * x - 2.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((r - std::f64::consts::SQRT_2).abs() < 1e-10);
        assert!(bisect_root(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_err());
    }

    #[test]
    fn regression_exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [2.5, 4.5, 6.5, 8.5];
        let (slope, intercept, r2) = linear_regression(&xs, &ys).unwrap();
        assert!((slope - 2.0).abs() < 1e-12);
        assert!((intercept - 0.5).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }
}
