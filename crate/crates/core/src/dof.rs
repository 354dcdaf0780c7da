//! Degrees-of-freedom planning: Kullback-Leibler divergences between the
//! standard Gaussian and Student-t, the equal-KLD-spacing grid used to fix the
//! tail components, and the penalised-complexity prior for a sampled nu.
//!
//! Both divergence directions are implemented because the published grids do
//! not state one. A comparison against the two reference grids (see the
//! repository README) selects `FlexibleVsBase` - KLD(t || N) - which
//! reproduces the reference interior points to within 0.2; the normal-vs-t
//! direction and the sqrt(2 KLD) distance scale land far outside.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{LN_2PI, LN_PI};
use crate::quad::integrate_real_line;

const KLD_ABS_TOL: f64 = 1e-9;

/// Which distribution plays f in KLD(f || h).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KldDirection {
    /// f = Student-t (flexible), h = standard Gaussian (base).
    FlexibleVsBase,
    /// f = standard Gaussian (base), h = Student-t (flexible).
    BaseVsFlexible,
}

fn log_t_std(y: f64, nu: f64, lg: f64) -> f64 {
    // lg caches lnGamma((nu+1)/2) - lnGamma(nu/2) - 0.5 ln(nu pi).
    lg - 0.5 * (nu + 1.0) * (y * y / nu).ln_1p()
}

fn log_phi(y: f64) -> f64 {
    -0.5 * LN_2PI - 0.5 * y * y
}

/// KLD between the standard Gaussian and the standard Student-t with `nu`
/// degrees of freedom, in the requested direction, to absolute tolerance 1e-9.
///
/// For `FlexibleVsBase` the cross term E_t[y^2] = nu/(nu-2) is attached
/// analytically and only the t entropy is integrated; integrating
/// t(y) log(t/phi) directly would push a non-negligible share of its mass
/// beyond the dynamic range of f64 for nu near 2. This direction therefore
/// requires nu > 2. `BaseVsFlexible` is integrated directly and only needs
/// nu > 0.
pub fn kld_normal_t(nu: f64, direction: KldDirection) -> Result<f64> {
    if !nu.is_finite() || nu <= 0.0 {
        return Err(Error::Domain(format!("nu must be positive, got {nu}")));
    }
    let lg = ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu.ln() + LN_PI);
    match direction {
        KldDirection::FlexibleVsBase => {
            if nu <= 2.0 {
                return Err(Error::Domain(format!(
                    "KLD(t || N) needs a finite t second moment, so nu > 2; got {nu}"
                )));
            }
            // -H(t) via quadrature, then + E_t[log phi] handled exactly.
            let neg_entropy = integrate_real_line(
                |y| {
                    let lt = log_t_std(y, nu, lg);
                    lt.exp() * lt
                },
                KLD_ABS_TOL,
            )?;
            // True value is positive; for enormous nu it sits below the
            // quadrature tolerance and cancellation can leave a negative
            // residual, which is floored away.
            Ok((neg_entropy + 0.5 * LN_2PI + 0.5 * nu / (nu - 2.0)).max(0.0))
        }
        KldDirection::BaseVsFlexible => Ok(integrate_real_line(
            |y| {
                let lp = log_phi(y);
                lp.exp() * (lp - log_t_std(y, nu, lg))
            },
            KLD_ABS_TOL,
        )?
        .max(0.0)),
    }
}

/// Distance from the Gaussian base model on the penalised-complexity scale,
/// d(nu) = sqrt(2 KLD).
pub fn distance_from_base(nu: f64, direction: KldDirection) -> Result<f64> {
    Ok((2.0 * kld_normal_t(nu, direction)?).sqrt())
}

/// Request for a fixed degrees-of-freedom grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuGridRequest {
    nu_min: f64,
    nu_max: f64,
    k: usize,
    rounding: u32,
}

impl NuGridRequest {
    /// `nu_min` must exceed 2 (finite-variance regime) and `nu_max` may not
    /// exceed 50, beyond which the divergence is numerically indistinguishable
    /// from zero at double precision.
    pub fn new(nu_min: f64, nu_max: f64, k: usize) -> Result<Self> {
        if !(nu_min.is_finite() && nu_min > 2.0) {
            return Err(Error::Config(format!(
                "nu_min must exceed 2, got {nu_min}"
            )));
        }
        if !(nu_max.is_finite() && nu_max > nu_min) {
            return Err(Error::Config(format!(
                "nu_max must exceed nu_min = {nu_min}, got {nu_max}"
            )));
        }
        if nu_max > 50.0 {
            return Err(Error::Config(format!("nu_max must be at most 50, got {nu_max}")));
        }
        if k < 2 {
            return Err(Error::Config("grid needs at least K = 2 points".into()));
        }
        Ok(NuGridRequest {
            nu_min,
            nu_max,
            k,
            rounding: 1,
        })
    }

    /// Decimal places for the reported (rounded) grid; the unrounded grid is
    /// always available.
    pub fn with_rounding(mut self, places: u32) -> Self {
        self.rounding = places.min(12);
        self
    }

    pub fn nu_min(&self) -> f64 {
        self.nu_min
    }

    pub fn nu_max(&self) -> f64 {
        self.nu_max
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rounding(&self) -> u32 {
        self.rounding
    }
}

/// A designed degrees-of-freedom grid with its KLD coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuGrid {
    /// Strictly increasing, unrounded grid; endpoints are the request bounds.
    pub nu: Vec<f64>,
    /// KLD of each grid point under `direction`; arithmetically equally spaced.
    pub kld: Vec<f64>,
    pub direction: KldDirection,
    /// Decimal places used by [`NuGrid::rounded`].
    pub rounding: u32,
}

impl NuGrid {
    /// The grid rounded to the requested number of decimals.
    pub fn rounded(&self) -> Vec<f64> {
        let f = 10f64.powi(self.rounding as i32);
        self.nu.iter().map(|v| (v * f).round() / f).collect()
    }
}

/// Degrees-of-freedom grid with endpoints at the request bounds and interior
/// points placed so the KLD values are arithmetically equally spaced; interior
/// points are found by bisection, valid because the divergence is strictly
/// decreasing in nu.
pub fn build_nu_grid(req: &NuGridRequest, direction: KldDirection) -> Result<NuGrid> {
    let k = req.k;
    let kld_min = kld_normal_t(req.nu_min, direction)?; // largest divergence
    let kld_max = kld_normal_t(req.nu_max, direction)?;
    if kld_min <= kld_max {
        return Err(Error::Numerical(format!(
            "divergence is not decreasing over [{}, {}]",
            req.nu_min, req.nu_max
        )));
    }
    let step = (kld_min - kld_max) / (k - 1) as f64;

    let mut nu = Vec::with_capacity(k);
    let mut kld = Vec::with_capacity(k);
    nu.push(req.nu_min);
    kld.push(kld_min);
    for idx in 1..k - 1 {
        let target = kld_min - idx as f64 * step;
        let root = bisect_kld(req.nu_min, req.nu_max, target, direction)?;
        nu.push(root);
        kld.push(kld_normal_t(root, direction)?);
    }
    nu.push(req.nu_max);
    kld.push(kld_max);

    for i in 1..nu.len() {
        if nu[i] <= nu[i - 1] {
            return Err(Error::Numerical("grid is not strictly increasing".into()));
        }
    }
    Ok(NuGrid {
        nu,
        kld,
        direction,
        rounding: req.rounding,
    })
}

/// Solves KLD(nu) = target on [lo, hi] by bisection; the bracket is
/// guaranteed by monotonicity whenever target lies between the endpoint
/// divergences.
fn bisect_kld(lo: f64, hi: f64, target: f64, direction: KldDirection) -> Result<f64> {
    let f_lo = kld_normal_t(lo, direction)? - target;
    let f_hi = kld_normal_t(hi, direction)? - target;
    if f_lo * f_hi > 0.0 {
        return Err(Error::Numerical(format!(
            "bisection bracket failure: f({lo}) = {f_lo:.3e}, f({hi}) = {f_hi:.3e}"
        )));
    }
    let (mut lo, mut hi) = (lo, hi);
    // KLD decreases in nu, so f(lo) >= 0 >= f(hi).
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-10 || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let fm = kld_normal_t(mid, direction)? - target;
        if fm >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Penalised-complexity prior on a sampled degrees-of-freedom parameter:
/// an exponential with rate `lambda` on the distance d(nu) from the Gaussian
/// base model, with support truncated to nu > 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcPriorSpec {
    pub lambda: f64,
}

impl PcPriorSpec {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be > 0, got {lambda}")));
        }
        Ok(PcPriorSpec { lambda })
    }

    /// Chooses lambda so the prior mass on nu < `nu_ref` equals `mass`
    /// (computed on the truncated support nu > 2). The library default is
    /// `with_tail_mass(10.0, 0.8, direction)`.
    pub fn with_tail_mass(nu_ref: f64, mass: f64, direction: KldDirection) -> Result<Self> {
        if !(nu_ref > 2.0) || !(mass > 0.0 && mass < 1.0) {
            return Err(Error::Config(
                "tail-mass calibration needs nu_ref > 2 and mass in (0, 1)".into(),
            ));
        }
        let d_ref = distance_from_base(nu_ref, direction)?;
        match direction {
            KldDirection::FlexibleVsBase => {
                // d(2+) = inf, so the truncated support carries full mass and
                // P(nu < nu_ref) = exp(-lambda d(nu_ref)) in closed form.
                Ok(PcPriorSpec {
                    lambda: -mass.ln() / d_ref,
                })
            }
            KldDirection::BaseVsFlexible => {
                // Finite d at the truncation point; solve the normalized mass
                // equation by bisection in lambda.
                let d2 = distance_from_base(2.0 + 1e-6, direction)?;
                let mass_at = |lambda: f64| {
                    let e_ref = (-lambda * d_ref).exp();
                    let e2 = (-lambda * d2).exp();
                    (e_ref - e2) / (1.0 - e2)
                };
                let (mut lo, mut hi) = (1e-8, 1e6);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mass_at(mid) > mass {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                    if hi - lo < 1e-10 * hi {
                        break;
                    }
                }
                PcPriorSpec::new(0.5 * (lo + hi))
            }
        }
    }
}

/// Log density of the PC prior at `nu`:
/// `log lambda - lambda d(nu) + log |d'(nu)|`, with the derivative taken by
/// central finite differences (step 1e-4 * max(1, nu), shrunk near the
/// support boundary).
pub fn pc_prior_logpdf(nu: f64, spec: &PcPriorSpec, direction: KldDirection) -> Result<f64> {
    if !(nu > 2.0) {
        return Err(Error::Domain(format!(
            "PC prior support is nu > 2, got {nu}"
        )));
    }
    let mut h = 1e-4 * nu.max(1.0);
    if nu - h <= 2.0 {
        h = 0.5 * (nu - 2.0);
    }
    let d = distance_from_base(nu, direction)?;
    let d_plus = distance_from_base(nu + h, direction)?;
    let d_minus = distance_from_base(nu - h, direction)?;
    let deriv = (d_plus - d_minus) / (2.0 * h);
    if !deriv.is_finite() || deriv == 0.0 {
        return Err(Error::Numerical(format!(
            "non-finite or vanishing d'(nu) at nu = {nu}"
        )));
    }
    Ok(spec.lambda.ln() - spec.lambda * d + deriv.abs().ln())
}
