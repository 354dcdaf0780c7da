//! Model-comparison and chain-quality diagnostics: DIC, error-density
//! distance, error-variance posterior summaries and effective sample size.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{relabel_ascending, Chain, Variant};
use crate::model::{
    error_variance_with_nu, identify_transform, mixture_logpdf_with_nu, student_t_logpdf, Dataset,
    ModelSpec, ParamState,
};

/// Deviance information criterion pieces:
/// dic = 2 dbar - d_theta_tilde, with dbar the mean deviance over the chain
/// and d_theta_tilde the deviance at the posterior-mean parameter.
///
/// `dic_v` is the companion estimate dbar + p_v with the variance-based
/// penalty p_v = 2 Var(log-likelihood). The point-estimate penalty
/// dbar - d_theta_tilde degrades when components trade labels mid-run (the
/// coordinate-wise posterior mean stops being a representative parameter,
/// and the penalty can even go negative); p_v is invariant to relabeling and
/// is the stable choice for mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dic {
    pub dic: f64,
    pub dbar: f64,
    pub d_theta_tilde: f64,
    pub dic_v: f64,
    pub p_v: f64,
}

/// Posterior summary of the mixture error variance; `bias` and `mse` are
/// present only when a true value was supplied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VEpsSummary {
    pub mean: f64,
    pub var: f64,
    pub bias: Option<f64>,
    pub mse: Option<f64>,
}

/// Fit report serialized next to each chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub dic: f64,
    pub dbar: f64,
    pub d_theta_tilde: f64,
    pub dic_v: f64,
    pub p_v: f64,
    pub v_eps_posterior: VEpsSummary,
    pub ess_loglik: f64,
}

impl FitReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }
}

// Label switching corrupts coordinate-wise means, so the posterior mean is
// taken over ascending-mu_star relabeled draws. Ordinary-t chains with fixed
// nu are not label-symmetric (each component owns a distinct fixed nu) and
// are averaged as stored.
fn posterior_mean_state(chain: &Chain, variant_hint: Variant) -> (ParamState, Option<Vec<f64>>) {
    let m = chain.len() as f64;
    let first = &chain.draws[0];
    let j = first.mu_star.len();
    let k = first.wdot[0].len();
    let p = first.beta.len();
    let relabel = match (variant_hint, &chain.nu_draws) {
        (Variant::TwoLevel, _) => true,
        (Variant::OrdinaryT, Some(_)) => true,
        (Variant::OrdinaryT, None) => false,
    };

    let mut mean = ParamState {
        mu_star: vec![0.0; j],
        sigma2: vec![0.0; j],
        w: vec![0.0; j],
        wdot: vec![vec![0.0; k]; j],
        beta: vec![0.0; p],
    };
    let mut mean_nu = chain.nu_draws.as_ref().map(|_| vec![0.0; j]);
    for (idx, stored) in chain.draws.iter().enumerate() {
        let mut draw = stored.clone();
        let mut nu_draw = chain.nu_draws.as_ref().map(|nus| nus[idx].clone());
        if relabel {
            relabel_ascending(&mut draw, nu_draw.as_mut(), variant_hint == Variant::TwoLevel);
        }
        for a in 0..j {
            mean.mu_star[a] += draw.mu_star[a];
            mean.sigma2[a] += draw.sigma2[a];
            mean.w[a] += draw.w[a];
            for b in 0..k {
                mean.wdot[a][b] += draw.wdot[a][b];
            }
        }
        for a in 0..p {
            mean.beta[a] += draw.beta[a];
        }
        if let (Some(acc), Some(nd)) = (&mut mean_nu, &nu_draw) {
            for a in 0..j {
                acc[a] += nd[a];
            }
        }
    }
    for a in 0..j {
        mean.mu_star[a] /= m;
        mean.sigma2[a] /= m;
        mean.w[a] /= m;
        for b in 0..k {
            mean.wdot[a][b] /= m;
        }
    }
    for a in 0..p {
        mean.beta[a] /= m;
    }
    if let Some(acc) = &mut mean_nu {
        for a in 0..j {
            acc[a] /= m;
        }
    }
    // Averages of simplex draws stay on the simplex up to rounding;
    // renormalize so downstream density evaluation sees exact weights.
    let ws: f64 = mean.w.iter().sum();
    for v in &mut mean.w {
        *v /= ws;
    }
    for row in &mut mean.wdot {
        let rs: f64 = row.iter().sum();
        for v in row {
            *v /= rs;
        }
    }
    (mean, mean_nu)
}

/// Posterior-mean parameter (after relabeling) and its sampled-nu mean when
/// the chain carries nu draws.
pub fn theta_tilde(chain: &Chain, variant_hint: Variant) -> Result<(ParamState, Option<Vec<f64>>)> {
    if chain.is_empty() {
        return Err(Error::Config("chain holds no draws".into()));
    }
    Ok(posterior_mean_state(chain, variant_hint))
}

/// DIC from the stored log-likelihood trace and the deviance at the
/// posterior-mean parameter.
pub fn dic(chain: &Chain, data: &Dataset, spec: &ModelSpec, variant_hint: Variant) -> Result<Dic> {
    if chain.is_empty() {
        return Err(Error::Config("chain holds no draws".into()));
    }
    let m = chain.len() as f64;
    let ll_mean = chain.loglik_trace.iter().sum::<f64>() / m;
    let ll_var = chain
        .loglik_trace
        .iter()
        .map(|l| (l - ll_mean) * (l - ll_mean))
        .sum::<f64>()
        / m;
    let dbar = -2.0 * ll_mean;
    let (tilde, mean_nu) = posterior_mean_state(chain, variant_hint);
    let nu: &[f64] = mean_nu.as_deref().unwrap_or(spec.nu());
    let mut ll = 0.0;
    for i in 0..data.n() {
        let term = mixture_logpdf_with_nu(data.y()[i], data.row(i), &tilde, nu)?;
        if !term.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite density at posterior mean for observation {i}"
            )));
        }
        ll += term;
    }
    let d_theta_tilde = -2.0 * ll;
    let p_v = 2.0 * ll_var;
    Ok(Dic {
        dic: 2.0 * dbar - d_theta_tilde,
        dbar,
        d_theta_tilde,
        dic_v: dbar + p_v,
        p_v,
    })
}

/// Evaluation grid for density comparison, in error space. The bounds should
/// span the 0.1-99.9 percentile range of the true density and the tail
/// cutoffs its 1st/99th percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub tail_lo: f64,
    pub tail_hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, tail_lo: f64, tail_hi: f64) -> Self {
        GridSpec {
            lo,
            hi,
            tail_lo,
            tail_hi,
            points: 512,
        }
    }

    fn xs(&self) -> Vec<f64> {
        let b = self.points;
        (0..b)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (b - 1) as f64)
            .collect()
    }
}

/// Mean absolute relative deviation between the true error density and the
/// posterior-mean (Rao-Blackwellized) error density, globally and restricted
/// to the tails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityDistance {
    pub dbar_global: f64,
    pub dbar_tail: f64,
}

// Error density of one draw at eps: the mixture with means centered by the
// identification transform.
fn error_density_at(draw: &ParamState, nu: &[f64], eps: f64) -> Result<f64> {
    let (_, mu) = identify_transform(draw);
    let mut dens = 0.0;
    for j in 0..mu.len() {
        if draw.w[j] == 0.0 {
            continue;
        }
        for (k, &nk) in nu.iter().enumerate() {
            if draw.wdot[j][k] == 0.0 {
                continue;
            }
            dens += draw.w[j]
                * draw.wdot[j][k]
                * student_t_logpdf(eps, mu[j], draw.sigma2[j], nk)?.exp();
        }
    }
    Ok(dens)
}

/// Posterior-mean error-density curve over the grid.
pub fn density_curve(chain: &Chain, spec: &ModelSpec, grid: &GridSpec) -> Result<Vec<(f64, f64)>> {
    if chain.is_empty() {
        return Err(Error::Config("chain holds no draws".into()));
    }
    let xs = grid.xs();
    let m = chain.len() as f64;
    let mut fhat = vec![0.0; xs.len()];
    for (idx, draw) in chain.draws.iter().enumerate() {
        let nu = chain.nu_for_draw(idx, spec);
        for (b, &x) in xs.iter().enumerate() {
            fhat[b] += error_density_at(draw, nu, x)?;
        }
    }
    Ok(xs
        .into_iter()
        .zip(fhat.into_iter().map(|v| v / m))
        .collect())
}

/// Writes a density curve as two-column CSV (x, fhat).
pub fn write_density_csv(curve: &[(f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "x,fhat")?;
    for (x, f) in curve {
        writeln!(out, "{x},{f}")?;
    }
    Ok(())
}

/// Compares the posterior-mean error density against the true density on the
/// grid: mean_b |(f_true(x_b) - fhat(x_b)) / f_true(x_b)|, globally and over
/// the tail region (below `tail_lo`, above `tail_hi`).
pub fn density_distance<F: Fn(f64) -> f64>(
    f_true: F,
    chain: &Chain,
    spec: &ModelSpec,
    grid: &GridSpec,
) -> Result<DensityDistance> {
    let curve = density_curve(chain, spec, grid)?;
    let mut global_sum = 0.0;
    let mut tail_sum = 0.0;
    let mut tail_count = 0usize;
    for &(x, fhat) in &curve {
        let ft = f_true(x);
        if !(ft > 0.0) || !ft.is_finite() {
            return Err(Error::Domain(format!(
                "true density must be positive on the grid; got {ft} at x = {x}"
            )));
        }
        let rel = ((ft - fhat) / ft).abs();
        global_sum += rel;
        if x < grid.tail_lo || x > grid.tail_hi {
            tail_sum += rel;
            tail_count += 1;
        }
    }
    if tail_count == 0 {
        return Err(Error::Config(
            "no grid points fall in the tail region; widen the grid".into(),
        ));
    }
    Ok(DensityDistance {
        dbar_global: global_sum / curve.len() as f64,
        dbar_tail: tail_sum / tail_count as f64,
    })
}

/// Per-draw error variance summarized over the chain. `truth` switches on the
/// bias and mse fields (mse = bias^2 + var).
pub fn v_eps_summary(chain: &Chain, spec: &ModelSpec, truth: Option<f64>) -> Result<VEpsSummary> {
    if chain.is_empty() {
        return Err(Error::Config("chain holds no draws".into()));
    }
    let vals: Vec<f64> = chain
        .draws
        .iter()
        .enumerate()
        .map(|(m, d)| error_variance_with_nu(d, chain.nu_for_draw(m, spec)))
        .collect::<Result<_>>()?;
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let bias = truth.map(|t| mean - t);
    let mse = bias.map(|b| b * b + var);
    Ok(VEpsSummary {
        mean,
        var,
        bias,
        mse,
    })
}

/// Effective sample size by the initial-positive-sequence estimator: sum the
/// lag-autocorrelation pairs (rho_2m + rho_2m+1) while they stay positive,
/// then ESS = n / (2 sum - 1), capped at n. A constant trace reports n.
pub fn ess(trace: &[f64]) -> Result<f64> {
    let n = trace.len();
    if n < 10 {
        return Err(Error::Config(format!(
            "need at least 10 points for an ESS estimate, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = trace.iter().sum::<f64>() / nf;
    let var = trace.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
    if var <= 0.0 || var < 1e-300 {
        return Ok(nf);
    }
    let rho = |lag: usize| -> f64 {
        let mut c = 0.0;
        for i in 0..n - lag {
            c += (trace[i] - mean) * (trace[i + lag] - mean);
        }
        c / (nf * var)
    };
    let mut pair_sum = 0.0;
    let mut m = 0;
    loop {
        let l1 = 2 * m;
        let l2 = 2 * m + 1;
        if l2 >= n {
            break;
        }
        let gamma = rho(l1) + rho(l2);
        if gamma <= 0.0 {
            break;
        }
        pair_sum += gamma;
        m += 1;
    }
    let tau = 2.0 * pair_sum - 1.0;
    if tau <= 1.0 {
        return Ok(nf);
    }
    Ok((nf / tau).min(nf))
}

/// Assembles the full fit report for a chain.
pub fn fit_report(
    chain: &Chain,
    data: &Dataset,
    spec: &ModelSpec,
    variant_hint: Variant,
    truth_v_eps: Option<f64>,
) -> Result<FitReport> {
    let d = dic(chain, data, spec, variant_hint)?;
    let v = v_eps_summary(chain, spec, truth_v_eps)?;
    let e = ess(&chain.loglik_trace).unwrap_or(chain.len() as f64);
    Ok(FitReport {
        dic: d.dic,
        dbar: d.dbar,
        d_theta_tilde: d.d_theta_tilde,
        dic_v: d.dic_v,
        p_v: d.p_v,
        v_eps_posterior: v,
        ess_loglik: e,
    })
}
