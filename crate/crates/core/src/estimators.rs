//! Orientation-count maximum-likelihood estimation of the mean NV number.
//!
//! A site hosting `n` NV centers, each independently taking one of four
//! crystallographic orientations, shows `l` distinct orientations in
//! CW-ESR. With `n` Poisson-distributed with mean `λ`, the distinct count
//! follows
//!
//! `P_λ(l) = Σ_n λⁿ e^{−λ}/n! · (1/4)ⁿ · S(n,l) · ₄P_l`
//!
//! where `S(n,l)` is the Stirling number of the second kind and `₄P_l`
//! the number of orientation permutations. Fitting observed distinct
//! counts over many sites to this model recovers `λ`. The estimator loses
//! precision for `λ ≪ 1` and `λ ≫ 16`; above [`LAMBDA_CEILING`] a fit is
//! flagged rather than extrapolated.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::fit::{bisect_root, golden_section_min};
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

/// Permutations of l orientations out of 4: ₄P_l = 4!/(4−l)!.
const PERM4: [f64; 5] = [1.0, 4.0, 12.0, 24.0, 24.0];

/// Factorials 0!..4!.
const FACT: [f64; 5] = [1.0, 1.0, 2.0, 6.0, 24.0];

/// Binomial coefficients C(l, j) for l ≤ 4.
const CHOOSE: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

/// Upper search bound for λ; at or above it the distinct-count model is
/// no longer identifiable (essentially every site shows all four
/// orientations).
pub const LAMBDA_CEILING: f64 = 128.0;

/// Poisson tail mass tolerated beyond the adaptive truncation bound.
pub const TRUNCATION_TAIL: f64 = 1e-12;

/// Profile-likelihood drop for a 95% confidence interval (χ²₁(0.95)/2).
const PROFILE_DROP_95: f64 = 1.92;

/// Stirling number of the second kind via the standard recurrence
/// `S(n,l) = l·S(n−1,l) + S(n−1,l−1)`, in exact integer arithmetic.
/// Overflow is an error, never a wrap.
pub fn stirling2(n: u32, l: u32) -> Result<u128> {
    if l > n {
        return Err(Error::OutOfRange(format!("stirling2 requires l ≤ n, got S({n},{l})")));
    }
    if n == 0 {
        return Ok(1); // S(0,0)
    }
    if l == 0 {
        return Ok(0);
    }
    // One row at a time, columns 0..=l.
    let cols = l as usize + 1;
    let mut prev = vec![0u128; cols];
    prev[0] = 1; // S(0,0)
    for row in 1..=n {
        let mut curr = vec![0u128; cols];
        let limit = (row as usize).min(l as usize);
        for j in 1..=limit {
            let keep = prev[j]
                .checked_mul(j as u128)
                .ok_or_else(|| Error::Overflow(format!("S({n},{l}) exceeds u128")))?;
            curr[j] = prev[j - 1]
                .checked_add(keep)
                .ok_or_else(|| Error::Overflow(format!("S({n},{l}) exceeds u128")))?;
        }
        prev = curr;
    }
    Ok(prev[l as usize])
}

/// `(1/4)ⁿ S(n,l)` evaluated stably for any `n` via inclusion-exclusion:
/// `(1/l!) Σ_j (−1)ʲ C(l,j) ((l−j)/4)ⁿ`. Every term is bounded by 1, so
/// this never overflows where the exact Stirling number would.
fn quarter_scaled_stirling(n: u64, l: usize) -> f64 {
    let mut sum = 0.0;
    for j in 0..=l {
        let base = (l - j) as f64 / 4.0;
        let term = CHOOSE[l][j] * pow_u64(base, n);
        if j % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    sum / FACT[l]
}

fn pow_u64(base: f64, mut exp: u64) -> f64 {
    // 0^0 = 1 by the combinatorial convention used here.
    if exp == 0 {
        return 1.0;
    }
    let mut acc = 1.0;
    let mut b = base;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= b;
        }
        b *= b;
        exp >>= 1;
    }
    acc
}

fn check_pmf_args(lambda: f64, l: usize) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::OutOfRange(format!("lambda must be finite and ≥ 0, got {lambda}")));
    }
    if lambda > 700.0 {
        return Err(Error::OutOfRange(format!(
            "lambda = {lambda} underflows e^(−λ); far beyond the model's validity anyway"
        )));
    }
    if l > 4 {
        return Err(Error::OutOfRange(format!("l must be in 0..=4, got {l}")));
    }
    Ok(())
}

/// Truncated model pmf: the sum over `n = 0..=truncation`.
pub fn model_pmf_truncated(lambda: f64, l: usize, truncation: usize) -> Result<f64> {
    check_pmf_args(lambda, l)?;
    let mut pois = (-lambda).exp(); // Poisson(λ) pmf at n = 0
    let mut sum = 0.0;
    for n in 0..=truncation as u64 {
        if n > 0 {
            pois *= lambda / n as f64;
        }
        sum += pois * quarter_scaled_stirling(n, l) * PERM4[l];
    }
    Ok(sum)
}

/// Truncation bound leaving Poisson tail mass below [`TRUNCATION_TAIL`].
pub fn adaptive_truncation(lambda: f64) -> usize {
    if lambda == 0.0 {
        return 0;
    }
    let mut pois = (-lambda).exp();
    let mut cum = pois;
    let mut n = 0u64;
    while cum < 1.0 - TRUNCATION_TAIL {
        n += 1;
        pois *= lambda / n as f64;
        cum += pois;
    }
    n as usize
}

/// Model pmf with adaptive truncation.
pub fn model_pmf(lambda: f64, l: usize) -> Result<f64> {
    check_pmf_args(lambda, l)?;
    model_pmf_truncated(lambda, l, adaptive_truncation(lambda))
}

/// Expected distinct-orientation count `E[l] = Σ l·P_λ(l)`.
pub fn expected_distinct_count(lambda: f64) -> Result<f64> {
    let mut e = 0.0;
    for l in 1..=4 {
        e += l as f64 * model_pmf(lambda, l)?;
    }
    Ok(e)
}

/// Distinct-orientation counts over a set of sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrientationHistogram {
    /// counts[l] = number of sites showing exactly l distinct orientations.
    pub counts: [u64; 5],
}

impl OrientationHistogram {
    pub fn new(counts: [u64; 5]) -> Result<Self> {
        let hist = Self { counts };
        if hist.n_sites() == 0 {
            return Err(Error::Degenerate("histogram has zero sites".into()));
        }
        Ok(hist)
    }

    pub fn n_sites(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Fitted mean NV number with profile-likelihood confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub lambda_hat: f64,
    /// 95% profile-likelihood interval, lower bound clamped at 0 and both
    /// ends clamped at [`LAMBDA_CEILING`].
    pub ci95: (f64, f64),
    pub log_likelihood: f64,
    /// RMS systematic error from the bootstrap, when computed.
    pub systematic_sigma: Option<f64>,
    /// True when the data pin λ at or above the identifiability ceiling.
    pub at_ceiling: bool,
}

fn log_likelihood(hist: &OrientationHistogram, lambda: f64) -> f64 {
    if lambda == 0.0 {
        // P_0(0) = 1 and P_0(l>0) = 0.
        return if hist.counts[1..].iter().all(|&c| c == 0) {
            0.0
        } else {
            f64::NEG_INFINITY
        };
    }
    let mut ll = 0.0;
    for (l, &count) in hist.counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        match model_pmf(lambda, l) {
            Ok(p) if p > 0.0 => ll += count as f64 * p.ln(),
            _ => return f64::NEG_INFINITY,
        }
    }
    ll
}

/// Maximum-likelihood fit of λ to an orientation histogram.
///
/// Maximizes the multinomial log-likelihood by bounded 1-D optimization
/// on `[0, LAMBDA_CEILING]`; the 95% CI comes from the profile likelihood
/// (Δlogℓ = 1.92) with the lower bound clamped at 0.
pub fn fit_lambda(hist: &OrientationHistogram) -> Result<MleResult> {
    let n = hist.n_sites();
    if n == 0 {
        return Err(Error::Degenerate("histogram has zero sites".into()));
    }

    // All sites dark: likelihood is e^(−nλ), maximized at λ = 0.
    if hist.counts[1..].iter().all(|&c| c == 0) {
        let hi = PROFILE_DROP_95 / n as f64;
        return Ok(MleResult {
            lambda_hat: 0.0,
            ci95: (0.0, hi),
            log_likelihood: 0.0,
            systematic_sigma: None,
            at_ceiling: false,
        });
    }

    // All sites showing all four orientations: the likelihood increases
    // without bound; λ is only bounded below.
    let all_saturated = hist.counts[..4].iter().all(|&c| c == 0);

    let (lambda_hat, ll_max) = if all_saturated {
        (LAMBDA_CEILING, log_likelihood(hist, LAMBDA_CEILING))
    } else {
        let (x, neg_ll) = golden_section_min(
            |lambda| -log_likelihood(hist, lambda),
            0.0,
            LAMBDA_CEILING,
            1e-9 * LAMBDA_CEILING,
        );
        (x, -neg_ll)
    };
    let at_ceiling = all_saturated || lambda_hat > 0.999 * LAMBDA_CEILING;

    let target = ll_max - PROFILE_DROP_95;
    let lo = if log_likelihood(hist, 0.0) >= target {
        0.0
    } else {
        // log-likelihood is monotone increasing on [0, λ̂].
        bisect_root(
            |lambda| log_likelihood(hist, lambda) - target,
            0.0,
            lambda_hat,
            1e-10 * LAMBDA_CEILING,
        )?
    };
    let hi = if log_likelihood(hist, LAMBDA_CEILING) >= target {
        LAMBDA_CEILING
    } else {
        bisect_root(
            |lambda| log_likelihood(hist, lambda) - target,
            lambda_hat,
            LAMBDA_CEILING,
            1e-10 * LAMBDA_CEILING,
        )?
    };

    Ok(MleResult {
        lambda_hat,
        ci95: (lo, hi),
        log_likelihood: ll_max,
        systematic_sigma: None,
        at_ceiling,
    })
}

/// Sample one synthetic histogram: per site, an NV count `n ~ Poisson(λ)`
/// with orientations assigned uniformly, counting distinct orientations.
pub fn sample_orientation_histogram(
    lambda: f64,
    n_sites: u64,
    rng: &mut impl Rng,
) -> Result<OrientationHistogram> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::OutOfRange(format!("lambda must be ≥ 0, got {lambda}")));
    }
    let pois = if lambda > 0.0 {
        Some(Poisson::new(lambda).map_err(|e| Error::Parameter(format!("Poisson({lambda}): {e}")))?)
    } else {
        None
    };
    let mut counts = [0u64; 5];
    for _ in 0..n_sites {
        let n = match &pois {
            Some(d) => d.sample(rng) as u64,
            None => 0,
        };
        let mut seen = 0u8;
        for _ in 0..n {
            seen |= 1 << rng.random_range(0..4u32);
        }
        counts[seen.count_ones() as usize] += 1;
    }
    OrientationHistogram::new(counts)
}

/// Bootstrap characterization of the estimator's systematic error.
#[derive(Debug, Clone, PartialEq)]
pub struct SystematicUncertainty {
    /// `√(1/N Σ (λ_i − λ_true)²)` over the simulated sets.
    pub rms_error: f64,
    pub estimates: Vec<f64>,
}

/// Simulate `n_sets` histograms of `set_size` sites at `lambda_true`,
/// fit each, and return the RMS error of the fitted values.
pub fn systematic_uncertainty(
    lambda_true: f64,
    n_sets: usize,
    set_size: u64,
    seed: u64,
) -> Result<SystematicUncertainty> {
    if n_sets == 0 {
        return Err(Error::Parameter("n_sets must be ≥ 1".into()));
    }
    let mut estimates = Vec::with_capacity(n_sets);
    for i in 0..n_sets {
        let mut rng = rng_from_seed(derive_seed(seed, "set", i as u64));
        let hist = sample_orientation_histogram(lambda_true, set_size, &mut rng)?;
        estimates.push(fit_lambda(&hist)?.lambda_hat);
    }
    let rms_error = (estimates
        .iter()
        .map(|l| (l - lambda_true) * (l - lambda_true))
        .sum::<f64>()
        / n_sets as f64)
        .sqrt();
    Ok(SystematicUncertainty {
        rms_error,
        estimates,
    })
}

/// As-grown background subtraction: `λ_net = λ_irradiated − λ_control`
/// (clamped at 0) with CI half-widths combined in quadrature. This is the
/// artifact's convention; the interval ends are likewise clamped at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSubtracted {
    pub lambda_net: f64,
    pub ci95: (f64, f64),
}

pub fn subtract_as_grown(irradiated: &MleResult, control: &MleResult) -> BackgroundSubtracted {
    let net = (irradiated.lambda_hat - control.lambda_hat).max(0.0);
    let d_lo_irr = irradiated.lambda_hat - irradiated.ci95.0;
    let d_hi_irr = irradiated.ci95.1 - irradiated.lambda_hat;
    let d_lo_ctl = control.lambda_hat - control.ci95.0;
    let d_hi_ctl = control.ci95.1 - control.lambda_hat;
    let d_lo = (d_lo_irr * d_lo_irr + d_hi_ctl * d_hi_ctl).sqrt();
    let d_hi = (d_hi_irr * d_hi_irr + d_lo_ctl * d_lo_ctl).sqrt();
    BackgroundSubtracted {
        lambda_net: net,
        ci95: ((net - d_lo).max(0.0), net + d_hi),
    }
}
