//! Domain types and density computations for the two-level Student-t mixture
//! regression model.
//!
//! The error distribution is a J-component location/scale mixture whose j-th
//! component is itself a K-component mixture over fixed tail indices:
//!
//! ```text
//! f(eps) = sum_j w_j sum_k wdot_jk t(eps | mu_j, sigma2_j, nu_k)
//! ```
//!
//! with the identifiability constraint sum_j w_j mu_j = 0. Internally the
//! model is parametrised by the unrestricted component means `mu_star`; the
//! intercept beta0 = sum_j w_j mu_star_j and the centered means are recovered
//! by [`identify_transform`]. The design matrix therefore never stores an
//! intercept column.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub(crate) const LN_PI: f64 = 1.144_729_885_849_400_2;
pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Prior hyperparameters: normal-inverse-gamma on each (mu_star_j, sigma2_j),
/// Dirichlet on the weight vectors and a spherical Gaussian on the
/// coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Prior location of the component means.
    pub mu0: f64,
    /// Prior precision multiplier for the means (> 0).
    pub tau: f64,
    /// Inverse-gamma shape for the component dispersions (> 0).
    pub alpha_dot: f64,
    /// Inverse-gamma rate for the component dispersions (> 0).
    pub beta_dot: f64,
    /// Dirichlet weights for `w`, length J.
    pub alpha_w: Vec<f64>,
    /// Dirichlet weights for the rows of `wdot`, J rows of length K.
    pub alpha_wdot: Vec<Vec<f64>>,
    /// Prior mean of the regression coefficients, length p.
    pub phi: Vec<f64>,
    /// Prior variance of each regression coefficient (> 0).
    pub upsilon2: f64,
}

impl PriorSpec {
    /// Uniform-Dirichlet prior with the stated scalar hyperparameters.
    pub fn flat(mu0: f64, tau: f64, alpha_dot: f64, beta_dot: f64, j: usize, k: usize, p: usize, upsilon2: f64) -> Self {
        PriorSpec {
            mu0,
            tau,
            alpha_dot,
            beta_dot,
            alpha_w: vec![1.0; j],
            alpha_wdot: vec![vec![1.0; k]; j],
            phi: vec![0.0; p],
            upsilon2,
        }
    }

    fn validate(&self, j: usize, k: usize, p: usize) -> Result<()> {
        if !(self.mu0.is_finite() && self.tau > 0.0 && self.alpha_dot > 0.0 && self.beta_dot > 0.0)
        {
            return Err(Error::Config(
                "prior requires finite mu0 and tau, alpha_dot, beta_dot > 0".into(),
            ));
        }
        if self.upsilon2 <= 0.0 || !self.upsilon2.is_finite() {
            return Err(Error::Config("prior coefficient variance must be > 0".into()));
        }
        if self.alpha_w.len() != j || self.alpha_w.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::Config(format!(
                "alpha_w must hold {j} positive entries"
            )));
        }
        if self.alpha_wdot.len() != j
            || self
                .alpha_wdot
                .iter()
                .any(|row| row.len() != k || row.iter().any(|&a| !(a > 0.0)))
        {
            return Err(Error::Config(format!(
                "alpha_wdot must be a {j}x{k} matrix of positive entries"
            )));
        }
        if self.phi.len() != p || self.phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("phi must hold {p} finite entries")));
        }
        Ok(())
    }
}

/// Immutable problem definition: dimensions, the fixed degrees-of-freedom
/// vector and the prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    components: usize,
    tails: usize,
    covariates: usize,
    nu: Vec<f64>,
    priors: PriorSpec,
}

impl ModelSpec {
    /// Validates and assembles a model specification.
    ///
    /// `nu` must be strictly increasing with every entry > 2 so that all
    /// component variances are finite.
    pub fn new(
        components: usize,
        tails: usize,
        covariates: usize,
        nu: Vec<f64>,
        priors: PriorSpec,
    ) -> Result<Self> {
        if components < 1 || tails < 1 {
            return Err(Error::Config("J and K must be at least 1".into()));
        }
        if nu.len() != tails {
            return Err(Error::Dimension(format!(
                "nu has {} entries, expected K = {}",
                nu.len(),
                tails
            )));
        }
        for (i, &v) in nu.iter().enumerate() {
            if !v.is_finite() || v <= 2.0 {
                return Err(Error::Config(format!(
                    "degrees of freedom must exceed 2 for finite variance, got nu[{i}] = {v}"
                )));
            }
            if i > 0 && v <= nu[i - 1] {
                return Err(Error::Config("nu must be strictly increasing".into()));
            }
        }
        priors.validate(components, tails, covariates)?;
        Ok(ModelSpec {
            components,
            tails,
            covariates,
            nu,
            priors,
        })
    }

    /// Number of location/scale components (J).
    pub fn n_components(&self) -> usize {
        self.components
    }

    /// Number of tail components (K).
    pub fn n_tails(&self) -> usize {
        self.tails
    }

    /// Number of covariates (p), excluding the intercept.
    pub fn n_covariates(&self) -> usize {
        self.covariates
    }

    /// The fixed degrees-of-freedom vector.
    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn priors(&self) -> &PriorSpec {
        &self.priors
    }
}

/// One draw of the Gibbs-visible parameter block
/// (mu_star, sigma2, w, wdot, beta).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    /// Unrestricted component means, length J.
    pub mu_star: Vec<f64>,
    /// Component dispersions (> 0), length J.
    pub sigma2: Vec<f64>,
    /// Outer mixture weights (simplex), length J.
    pub w: Vec<f64>,
    /// Row-stochastic tail weights, J rows of length K.
    pub wdot: Vec<Vec<f64>>,
    /// Regression coefficients, length p.
    pub beta: Vec<f64>,
}

const SIMPLEX_TOL: f64 = 1e-12;

impl ParamState {
    /// Checks dimensions, the simplex constraints (to 1e-12) and positivity.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let j = spec.n_components();
        let k = spec.n_tails();
        if self.mu_star.len() != j || self.sigma2.len() != j || self.w.len() != j {
            return Err(Error::Dimension(format!(
                "mu_star/sigma2/w must have length J = {j}"
            )));
        }
        if self.wdot.len() != j || self.wdot.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension(format!("wdot must be {j}x{k}")));
        }
        if self.beta.len() != spec.n_covariates() {
            return Err(Error::Dimension(format!(
                "beta has {} entries, expected p = {}",
                self.beta.len(),
                spec.n_covariates()
            )));
        }
        if self.mu_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite component mean".into()));
        }
        if self.sigma2.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain("sigma2 entries must be positive".into()));
        }
        if self.beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite coefficient".into()));
        }
        check_simplex(&self.w, "w")?;
        for (jj, row) in self.wdot.iter().enumerate() {
            check_simplex(row, &format!("wdot[{jj}]"))?;
        }
        Ok(())
    }
}

fn check_simplex(v: &[f64], name: &str) -> Result<()> {
    if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::Domain(format!("{name} has a negative entry")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Domain(format!(
            "{name} sums to {s}, off the simplex by more than {SIMPLEX_TOL:e}"
        )));
    }
    Ok(())
}

/// Auxiliary-variable block: per-observation mixing scales and labels.
/// Labels are stored 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    /// Positive mixing scales, length n.
    pub u: Vec<f64>,
    /// Location/scale component labels in 0..J, length n.
    pub z: Vec<usize>,
    /// Tail component labels in 0..K, length n.
    pub zdot: Vec<usize>,
}

impl LatentState {
    pub fn validate(&self, n: usize, spec: &ModelSpec) -> Result<()> {
        if self.u.len() != n || self.z.len() != n || self.zdot.len() != n {
            return Err(Error::Dimension(format!("latent vectors must have length {n}")));
        }
        if self.u.iter().any(|&u| !(u > 0.0)) {
            return Err(Error::Domain("mixing scales must be positive".into()));
        }
        if self.z.iter().any(|&z| z >= spec.n_components())
            || self.zdot.iter().any(|&k| k >= spec.n_tails())
        {
            return Err(Error::Domain("component label out of range".into()));
        }
        Ok(())
    }
}

/// Response vector plus covariate matrix. The intercept is absorbed into the
/// component means and is never stored as a column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    /// Row-major n x p covariate matrix.
    x: Vec<f64>,
    p: usize,
    ids: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Vec<f64>, p: usize, ids: Option<Vec<String>>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Config("dataset must hold at least one row".into()));
        }
        if x.len() != n * p {
            return Err(Error::Dimension(format!(
                "covariate matrix has {} entries, expected {n} x {p}",
                x.len()
            )));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("dataset contains a non-finite entry".into()));
        }
        if let Some(ids) = &ids {
            if ids.len() != n {
                return Err(Error::Dimension("ids length must match n".into()));
            }
        }
        Ok(Dataset { y, x, p, ids })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Covariate row i as a slice of length p.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Linear predictor x_i' beta (without intercept).
    pub fn linear_predictor(&self, i: usize, beta: &[f64]) -> f64 {
        dot(self.row(i), beta)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable log(sum(exp(v))) over finite or -inf entries.
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Log density of the location-scale Student-t distribution with mean `mu`,
/// dispersion `sigma2` (squared scale) and `nu` degrees of freedom.
pub fn student_t_logpdf(y: f64, mu: f64, sigma2: f64, nu: f64) -> Result<f64> {
    if !(y.is_finite() && mu.is_finite() && sigma2.is_finite() && nu.is_finite()) {
        return Err(Error::Domain("student_t_logpdf requires finite inputs".into()));
    }
    if sigma2 <= 0.0 {
        return Err(Error::Domain(format!("sigma2 must be > 0, got {sigma2}")));
    }
    if nu <= 0.0 {
        return Err(Error::Domain(format!("nu must be > 0, got {nu}")));
    }
    let z2 = (y - mu) * (y - mu) / (nu * sigma2);
    Ok(ln_gamma((nu + 1.0) / 2.0)
        - ln_gamma(nu / 2.0)
        - 0.5 * (nu.ln() + LN_PI + sigma2.ln())
        - 0.5 * (nu + 1.0) * z2.ln_1p())
}

/// Log of the observed-data mixture density at (y, x) with an explicit
/// degrees-of-freedom vector. Used with per-draw nu when the ordinary-t
/// variant samples the degrees of freedom.
pub fn mixture_logpdf_with_nu(y: f64, x: &[f64], theta: &ParamState, nu: &[f64]) -> Result<f64> {
    if x.len() != theta.beta.len() {
        return Err(Error::Dimension(format!(
            "covariate row has {} entries, beta has {}",
            x.len(),
            theta.beta.len()
        )));
    }
    let j = theta.mu_star.len();
    let k = nu.len();
    let xb = dot(x, &theta.beta);
    let mut terms = Vec::with_capacity(j * k);
    for jj in 0..j {
        if theta.w[jj] == 0.0 {
            continue;
        }
        let mu_tilde = theta.mu_star[jj] + xb;
        let lw = theta.w[jj].ln();
        for kk in 0..k {
            let wdot = theta.wdot[jj][kk];
            if wdot == 0.0 {
                continue;
            }
            terms.push(lw + wdot.ln() + student_t_logpdf(y, mu_tilde, theta.sigma2[jj], nu[kk])?);
        }
    }
    Ok(log_sum_exp(&terms))
}

/// Log of the observed-data mixture density
/// `sum_j w_j sum_k wdot_jk t(y | mu_star_j + x'beta, sigma2_j, nu_k)`,
/// combined in the log domain.
pub fn mixture_logpdf(y: f64, x: &[f64], theta: &ParamState, spec: &ModelSpec) -> Result<f64> {
    theta.validate(spec)?;
    mixture_logpdf_with_nu(y, x, theta, spec.nu())
}

/// Recovers the identified parametrisation: the intercept
/// `beta0 = sum_j w_j mu_star_j` and the centered means
/// `mu_j = mu_star_j - beta0`, which satisfy `sum_j w_j mu_j = 0`.
pub fn identify_transform(theta: &ParamState) -> (f64, Vec<f64>) {
    let beta0 = dot(&theta.w, &theta.mu_star);
    let mu = theta.mu_star.iter().map(|m| m - beta0).collect();
    (beta0, mu)
}

/// Total error variance implied by the mixture with an explicit
/// degrees-of-freedom vector:
/// `V_eps = sum_j w_j [ (mu_j - mu_mix)^2 + sigma2_j * sum_k wdot_jk nu_k/(nu_k - 2) ]`.
pub fn error_variance_with_nu(theta: &ParamState, nu: &[f64]) -> Result<f64> {
    if let Some(&bad) = nu.iter().find(|&&v| v <= 2.0) {
        return Err(Error::InfiniteVariance(format!(
            "component variance requires nu > 2, got {bad}"
        )));
    }
    let (_, mu) = identify_transform(theta);
    let lambda_mix = dot(&theta.w, &mu);
    let mut v = 0.0;
    for jj in 0..theta.mu_star.len() {
        let t_var_factor: f64 = theta.wdot[jj]
            .iter()
            .zip(nu)
            .map(|(&wd, &nk)| wd * nk / (nk - 2.0))
            .sum();
        let spread = mu[jj] - lambda_mix;
        v += theta.w[jj] * (spread * spread + theta.sigma2[jj] * t_var_factor);
    }
    Ok(v)
}

/// Total error variance under the model specification's fixed nu vector.
pub fn error_variance(theta: &ParamState, spec: &ModelSpec) -> Result<f64> {
    theta.validate(spec)?;
    error_variance_with_nu(theta, spec.nu())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Study-1 generating truth in the unrestricted parametrisation.
    pub(crate) fn study1_theta() -> ParamState {
        ParamState {
            mu_star: vec![0.0, 2.5],
            sigma2: vec![1.0, 0.75],
            w: vec![0.6, 0.4],
            wdot: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            beta: vec![-2.0, 1.0],
        }
    }

    fn study1_spec() -> ModelSpec {
        ModelSpec::new(
            2,
            2,
            2,
            vec![2.8, 4.0],
            PriorSpec::flat(0.0, 0.005, 1.0, 1.5, 2, 2, 2, 100.0),
        )
        .unwrap()
    }

    #[test]
    fn t_density_at_origin_nu4() {
        // Gamma(2.5)/(Gamma(2) * 2 sqrt(pi)) = 3/8 by analytic simplification.
        let lp = student_t_logpdf(0.0, 0.0, 1.0, 4.0).unwrap();
        assert!((lp - 0.375f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn t_density_cauchy_at_origin() {
        let lp = student_t_logpdf(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!((lp + LN_PI).abs() < 1e-14);
    }

    #[test]
    fn t_density_rejects_bad_inputs() {
        assert!(student_t_logpdf(f64::NAN, 0.0, 1.0, 4.0).is_err());
        assert!(student_t_logpdf(0.0, 0.0, 0.0, 4.0).is_err());
        assert!(student_t_logpdf(0.0, 0.0, 1.0, 0.0).is_err());
        assert!(student_t_logpdf(0.0, f64::INFINITY, 1.0, 4.0).is_err());
    }

    proptest! {
        #[test]
        fn t_density_symmetry(d in 0.0..50.0f64, mu in -5.0..5.0f64, s2 in 0.01..10.0f64, nu in 0.5..40.0f64) {
            let a = student_t_logpdf(mu + d, mu, s2, nu).unwrap();
            let b = student_t_logpdf(mu - d, mu, s2, nu).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn t_density_integrates_to_one() {
        // Composite-Simpson oracle, independent of the library integrator.
        // The window is set so the analytic tail mass beyond it is < 1e-7.
        for &(s2, nu, half_window) in &[(1.0, 2.8, 4.0e3), (0.75, 4.0, 4.0e3), (3.0, 2.2, 2.0e5)] {
            let f = |y: f64| student_t_logpdf(y, 0.3, s2, nu).unwrap().exp();
            let v = simpson(&f, -half_window, half_window, 2_000_000);
            assert!((v - 1.0).abs() < 1e-6, "s2={s2} nu={nu}: {v}");
        }
    }

    #[test]
    fn single_component_collapses_to_t() {
        let spec = ModelSpec::new(
            1,
            1,
            1,
            vec![3.5],
            PriorSpec::flat(0.0, 1.0, 1.0, 1.0, 1, 1, 1, 1.0),
        )
        .unwrap();
        let theta = ParamState {
            mu_star: vec![0.7],
            sigma2: vec![1.3],
            w: vec![1.0],
            wdot: vec![vec![1.0]],
            beta: vec![0.4],
        };
        let x = [1.5];
        let got = mixture_logpdf(2.0, &x, &theta, &spec).unwrap();
        let want = student_t_logpdf(2.0, 0.7 + 0.4 * 1.5, 1.3, 3.5).unwrap();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn mixture_density_normalizes_for_study1() {
        // The nu = 2.8 tails hold ~1e-5 of mass beyond |y| = 60, so a window
        // wide enough for the 1e-6 normalization check is used instead.
        let spec = study1_spec();
        let theta = study1_theta();
        let x = [0.3, 0.8];
        let f = |y: f64| mixture_logpdf(y, &x, &theta, &spec).unwrap().exp();
        let v = simpson(&f, -2000.0, 2000.0, 400_000);
        assert!((v - 1.0).abs() < 1e-6, "integral {v}");
    }

    #[test]
    fn equal_tail_rows_match_flat_mixture() {
        // With identical wdot rows the two-level density equals a flat
        // (J*K)-component mixture, evaluated here in the linear domain.
        let spec = study1_spec();
        let theta = study1_theta();
        let x = [0.5, -0.2];
        let xb = dot(&x, &theta.beta);
        for &y in &[-4.0, -1.0, 0.0, 2.5, 7.0] {
            let mut flat = 0.0;
            for jj in 0..2 {
                for kk in 0..2 {
                    flat += theta.w[jj]
                        * theta.wdot[jj][kk]
                        * student_t_logpdf(y, theta.mu_star[jj] + xb, theta.sigma2[jj], spec.nu()[kk])
                            .unwrap()
                            .exp();
                }
            }
            let got = mixture_logpdf(y, &x, &theta, &spec).unwrap();
            assert!((got - flat.ln()).abs() < 1e-12, "y={y}");
        }
    }

    #[test]
    fn mixture_rejects_dimension_mismatch() {
        let spec = study1_spec();
        let theta = study1_theta();
        assert!(mixture_logpdf(0.0, &[1.0], &theta, &spec).is_err());
    }

    #[test]
    fn identify_transform_examples() {
        // Study-1 errors already satisfy sum w_j mu_j = 0; shifting by any
        // constant only moves beta0.
        for c in [-3.0, 0.0, 1.0, 10.5] {
            let theta = ParamState {
                mu_star: vec![-1.0 + c, 1.5 + c],
                w: vec![0.6, 0.4],
                ..study1_theta()
            };
            let (beta0, mu) = identify_transform(&theta);
            assert!((beta0 - c).abs() < 1e-12);
            assert!((mu[0] + 1.0).abs() < 1e-12 && (mu[1] - 1.5).abs() < 1e-12);
        }

        let single = ParamState {
            mu_star: vec![4.2],
            sigma2: vec![1.0],
            w: vec![1.0],
            wdot: vec![vec![1.0]],
            beta: vec![],
        };
        let (beta0, mu) = identify_transform(&single);
        assert_eq!(beta0, 4.2);
        assert_eq!(mu, vec![0.0]);

        let even = ParamState {
            mu_star: vec![2.0, 4.0],
            w: vec![0.5, 0.5],
            ..study1_theta()
        };
        let (beta0, mu) = identify_transform(&even);
        assert!((beta0 - 3.0).abs() < 1e-14);
        assert!((mu[0] + 1.0).abs() < 1e-14 && (mu[1] - 1.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn identify_transform_centers_and_is_shift_invariant(
            mu1 in -10.0..10.0f64, mu2 in -10.0..10.0f64, wraw in 0.05..0.95f64, c in -20.0..20.0f64,
        ) {
            let base = ParamState {
                mu_star: vec![mu1, mu2],
                w: vec![wraw, 1.0 - wraw],
                ..study1_theta()
            };
            let (b0, mu) = identify_transform(&base);
            prop_assert!(dot(&base.w, &mu).abs() < 1e-10);

            // Idempotent on the centered state.
            let centered = ParamState { mu_star: mu.clone(), ..base.clone() };
            let (b0c, muc) = identify_transform(&centered);
            prop_assert!(b0c.abs() < 1e-10);
            for (a, b) in muc.iter().zip(&mu) {
                prop_assert!((a - b).abs() < 1e-10);
            }

            // Adding a constant to every mu_star moves beta0 and nothing else.
            let shifted = ParamState {
                mu_star: base.mu_star.iter().map(|m| m + c).collect(),
                ..base
            };
            let (b0s, mus) = identify_transform(&shifted);
            prop_assert!((b0s - (b0 + c)).abs() < 1e-9);
            for (a, b) in mus.iter().zip(&mu) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn error_variance_study1_truth() {
        let v = error_variance(&study1_theta(), &study1_spec()).unwrap();
        assert!((v - 3.975).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn error_variance_single_t() {
        let spec = ModelSpec::new(
            1,
            1,
            0,
            vec![5.0],
            PriorSpec::flat(0.0, 1.0, 1.0, 1.0, 1, 1, 0, 1.0),
        )
        .unwrap();
        let theta = ParamState {
            mu_star: vec![0.0],
            sigma2: vec![2.0],
            w: vec![1.0],
            wdot: vec![vec![1.0]],
            beta: vec![],
        };
        let v = error_variance(&theta, &spec).unwrap();
        assert!((v - 2.0 * 5.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn error_variance_two_component_hand_case() {
        // lambda_mix = 0, spread contributes 1, within-component t variance 2.
        let spec = ModelSpec::new(
            2,
            1,
            0,
            vec![4.0],
            PriorSpec::flat(0.0, 1.0, 1.0, 1.0, 2, 1, 0, 1.0),
        )
        .unwrap();
        let theta = ParamState {
            mu_star: vec![-1.0, 1.0],
            sigma2: vec![1.0, 1.0],
            w: vec![0.5, 0.5],
            wdot: vec![vec![1.0], vec![1.0]],
            beta: vec![],
        };
        let v = error_variance(&theta, &spec).unwrap();
        assert!((v - 3.0).abs() < 1e-14, "got {v}");
    }

    #[test]
    fn error_variance_rejects_heavy_nu() {
        let theta = ParamState {
            mu_star: vec![0.0],
            sigma2: vec![1.0],
            w: vec![1.0],
            wdot: vec![vec![1.0]],
            beta: vec![],
        };
        assert!(matches!(
            error_variance_with_nu(&theta, &[2.0]),
            Err(Error::InfiniteVariance(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn randomized_mixture_normalizes(
            m1 in -10.0..10.0f64,
            m2 in -10.0..10.0f64,
            s1 in 0.1..10.0f64,
            s2 in 0.1..10.0f64,
            wraw in 0.05..0.95f64,
            wd in 0.05..0.95f64,
        ) {
            let spec = ModelSpec::new(
                2, 2, 0, vec![2.8, 7.0],
                PriorSpec::flat(0.0, 1.0, 1.0, 1.0, 2, 2, 0, 1.0),
            ).unwrap();
            let theta = ParamState {
                mu_star: vec![m1, m2],
                sigma2: vec![s1, s2],
                w: vec![wraw, 1.0 - wraw],
                wdot: vec![vec![wd, 1.0 - wd], vec![1.0 - wd, wd]],
                beta: vec![],
            };
            let f = |y: f64| mixture_logpdf(y, &[], &theta, &spec).unwrap().exp();
            let v = simpson(&f, -3000.0, 3000.0, 1_200_000);
            prop_assert!((v - 1.0).abs() < 1e-6, "integral {}", v);
        }
    }

    /// Composite-Simpson oracle used only by tests in this module.
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
        let n = if n % 2 == 0 { n } else { n + 1 };
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }
}
