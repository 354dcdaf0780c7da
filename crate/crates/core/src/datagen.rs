//! Data generators for the two simulation studies and CSV ingestion for real
//! datasets.
//!
//! Study 1 draws errors from the two-level model itself; study 2 draws them
//! from a two-component skew-t mixture (hidden-truncation construction), so
//! the fitted model is deliberately misspecified there. Both emit the
//! generating truth next to the data and are deterministic given the seed.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{identify_transform, Dataset, ModelSpec, ParamState, PriorSpec};

/// One skew-t mixture component in the hidden-truncation parametrisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewTComponent {
    /// Location.
    pub mu: f64,
    /// Squared scale (> 0).
    pub sigma2: f64,
    /// Skewness; 0 recovers the symmetric Student-t.
    pub lambda: f64,
    /// Degrees of freedom (> 2 for finite variance).
    pub nu: f64,
    /// Mixture weight.
    pub weight: f64,
}

/// Closed-form mean and variance of a skew-t component, using
/// delta = lambda / sqrt(1 + lambda^2) and
/// b(nu) = sqrt(nu/pi) Gamma((nu-1)/2) / Gamma(nu/2):
/// mean = mu + sigma delta b(nu), variance = sigma2 (nu/(nu-2) - delta^2 b(nu)^2).
pub fn skew_t_moments(c: &SkewTComponent) -> Result<(f64, f64)> {
    if c.sigma2 <= 0.0 {
        return Err(Error::Domain(format!("sigma2 must be > 0, got {}", c.sigma2)));
    }
    if c.nu <= 2.0 {
        return Err(Error::InfiniteVariance(format!(
            "skew-t variance requires nu > 2, got {}",
            c.nu
        )));
    }
    let delta = c.lambda / (1.0 + c.lambda * c.lambda).sqrt();
    let b = (c.nu / std::f64::consts::PI).sqrt()
        * (ln_gamma((c.nu - 1.0) / 2.0) - ln_gamma(c.nu / 2.0)).exp();
    let mean = c.mu + c.sigma2.sqrt() * delta * b;
    let var = c.sigma2 * (c.nu / (c.nu - 2.0) - delta * delta * b * b);
    Ok((mean, var))
}

/// Mean and variance of a weighted skew-t mixture (the weights must sum to 1).
pub fn skew_t_mixture_moments(components: &[SkewTComponent]) -> Result<(f64, f64)> {
    let mut mean = 0.0;
    let mut moments = Vec::with_capacity(components.len());
    for c in components {
        let (m, v) = skew_t_moments(c)?;
        mean += c.weight * m;
        moments.push((m, v));
    }
    let mut var = 0.0;
    for (c, (m, v)) in components.iter().zip(&moments) {
        var += c.weight * ((m - mean) * (m - mean) + v);
    }
    Ok((mean, var))
}

/// Draws one error from the two-level mixture in its centered
/// parametrisation: j ~ w, k ~ wdot_j, u ~ Gamma(nu_k/2, nu_k/2),
/// eps ~ N(mu_j, sigma2_j / u).
pub fn draw_two_level_error<R: Rng>(
    theta: &ParamState,
    nu: &[f64],
    mu_centered: &[f64],
    rng: &mut R,
) -> f64 {
    let j = sample_categorical(&theta.w, rng);
    let k = sample_categorical(&theta.wdot[j], rng);
    let u = sample_gamma_rate(nu[k] / 2.0, nu[k] / 2.0, rng);
    let z: f64 = rng.sample(StandardNormal);
    mu_centered[j] + (theta.sigma2[j] / u).sqrt() * z
}

/// Draws one skew-t variate:
/// eps = mu + sigma (delta |z0| + sqrt(1 - delta^2) z1) / sqrt(u) with
/// u ~ Gamma(nu/2, nu/2).
pub fn draw_skew_t<R: Rng>(c: &SkewTComponent, rng: &mut R) -> f64 {
    let delta = c.lambda / (1.0 + c.lambda * c.lambda).sqrt();
    let z0: f64 = rng.sample(StandardNormal);
    let z1: f64 = rng.sample(StandardNormal);
    let v = delta * z0.abs() + (1.0 - delta * delta).sqrt() * z1;
    let u = sample_gamma_rate(c.nu / 2.0, c.nu / 2.0, rng);
    c.mu + c.sigma2.sqrt() * v / u.sqrt()
}

pub(crate) fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let t: f64 = rng.gen::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if t < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub(crate) fn sample_gamma_rate<R: Rng>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters are positive by construction")
        .sample(rng)
}

/// Generating truth of study 1 as a model specification
/// (J = K = 2, nu = (2.8, 4)) with the simulation-study hyperparameters.
pub fn study1_truth_spec() -> ModelSpec {
    ModelSpec::new(
        2,
        2,
        2,
        vec![2.8, 4.0],
        PriorSpec::flat(0.0, 0.005, 1.0, 1.5, 2, 2, 2, 1e4),
    )
    .expect("static spec is valid")
}

/// Generating truth of study 1 in the unrestricted parametrisation:
/// centered means (-1, 1.5) with beta0 = 1, so mu_star = (0, 2.5).
pub fn study1_truth() -> ParamState {
    ParamState {
        mu_star: vec![0.0, 2.5],
        sigma2: vec![1.0, 0.75],
        w: vec![0.6, 0.4],
        wdot: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        beta: vec![-2.0, 1.0],
    }
}

/// Simulates study 1: y = 1 - 2 x1 + x2 + eps with x1 ~ N(0,1), x2 ~ U(0,1)
/// and eps from the two-level truth. Returns the dataset and the generating
/// parameter state.
pub fn simulate_study1(n: usize, seed: u64) -> Result<(Dataset, ParamState)> {
    if n == 0 {
        return Err(Error::Config("need at least one observation".into()));
    }
    let truth = study1_truth();
    let spec = study1_truth_spec();
    let (_, mu_centered) = identify_transform(&truth);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);

    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let x1: f64 = rng.sample(StandardNormal);
        let x2: f64 = rng.gen();
        let eps = draw_two_level_error(&truth, spec.nu(), &mu_centered, &mut rng);
        y.push(1.0 - 2.0 * x1 + x2 + eps);
        x.push(x1);
        x.push(x2);
    }
    Ok((Dataset::new(y, x, 2, None)?, truth))
}

/// Generating truth of study 2: the two skew-t components and the regression
/// coefficients, plus the implied error moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study2Truth {
    pub components: Vec<SkewTComponent>,
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub error_mean: f64,
    pub error_variance: f64,
}

pub fn study2_truth() -> Study2Truth {
    let components = vec![
        SkewTComponent {
            mu: -0.8,
            sigma2: 1.0,
            lambda: -1.5,
            nu: 2.8,
            weight: 0.6,
        },
        SkewTComponent {
            mu: 1.2,
            sigma2: 0.75,
            lambda: 0.8,
            nu: 4.0,
            weight: 0.4,
        },
    ];
    let (error_mean, error_variance) =
        skew_t_mixture_moments(&components).expect("static truth has finite moments");
    Study2Truth {
        components,
        beta0: 1.0,
        beta: vec![-2.0, 1.0],
        error_mean,
        error_variance,
    }
}

/// Simulates study 2: y = 1 - 2 x1 + x2 + eps with x1 ~ N(0,1),
/// x2 ~ Bernoulli(0.5) and eps from the skew-t mixture truth.
pub fn simulate_study2(n: usize, seed: u64) -> Result<(Dataset, Study2Truth)> {
    if n == 0 {
        return Err(Error::Config("need at least one observation".into()));
    }
    let truth = study2_truth();
    let weights: Vec<f64> = truth.components.iter().map(|c| c.weight).collect();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);

    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let x1: f64 = rng.sample(StandardNormal);
        let x2: f64 = if rng.gen::<f64>() < 0.5 { 1.0 } else { 0.0 };
        let j = sample_categorical(&weights, &mut rng);
        let eps = draw_skew_t(&truth.components[j], &mut rng);
        y.push(truth.beta0 - 2.0 * x1 + x2 + eps);
        x.push(x1);
        x.push(x2);
    }
    Ok((Dataset::new(y, x, 2, None)?, truth))
}

/// Draws a fresh latent block from the hierarchical model:
/// z_i ~ w, zdot_i ~ wdot_{z_i}, u_i ~ Gamma(nu_k/2, nu_k/2).
pub fn sample_latents<R: Rng>(
    theta: &ParamState,
    nu: &[f64],
    n: usize,
    rng: &mut R,
) -> crate::model::LatentState {
    let mut z = Vec::with_capacity(n);
    let mut zdot = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    for _ in 0..n {
        let j = sample_categorical(&theta.w, rng);
        let k = sample_categorical(&theta.wdot[j], rng);
        z.push(j);
        zdot.push(k);
        u.push(sample_gamma_rate(nu[k] / 2.0, nu[k] / 2.0, rng));
    }
    crate::model::LatentState { u, z, zdot }
}

/// Draws responses conditional on the latent block:
/// y_i ~ N(mu_star_{z_i} + x_i' beta, sigma2_{z_i} / u_i).
pub fn sample_responses<R: Rng>(
    theta: &ParamState,
    latent: &crate::model::LatentState,
    x_rows: &[Vec<f64>],
    rng: &mut R,
) -> Vec<f64> {
    x_rows
        .iter()
        .enumerate()
        .map(|(i, xi)| {
            let j = latent.z[i];
            let mean = theta.mu_star[j] + xi.iter().zip(&theta.beta).map(|(a, b)| a * b).sum::<f64>();
            mean + (theta.sigma2[j] / latent.u[i]).sqrt() * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

/// Result of CSV ingestion: the parsed dataset plus the number of rows that
/// were dropped because of missing values.
#[derive(Debug)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

/// Loads a dataset from an RFC-4180 CSV file with a header row. Rows with
/// empty or NA cells in the selected columns are dropped and counted; any
/// other parse failure is an error naming the line.
pub fn load_csv(
    path: impl AsRef<Path>,
    response_column: &str,
    covariate_columns: &[&str],
) -> Result<LoadedCsv> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: display.clone(),
            line: 1,
            msg: e.to_string(),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: display.clone(),
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                path: display.clone(),
                line: 1,
                msg: format!("column '{name}' not found in header"),
            })
    };
    let y_idx = col_index(response_column)?;
    let x_idx: Vec<usize> = covariate_columns
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;
    let id_idx = headers.iter().position(|h| h == "id");

    let p = x_idx.len();
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut ids: Vec<String> = Vec::new();
    let mut dropped = 0usize;
    for (rec_no, record) in reader.records().enumerate() {
        let line = rec_no as u64 + 2; // header is line 1
        let record = record.map_err(|e| Error::Parse {
            path: display.clone(),
            line,
            msg: e.to_string(),
        })?;
        let cells: Vec<&str> = std::iter::once(y_idx)
            .chain(x_idx.iter().copied())
            .map(|i| record.get(i).unwrap_or(""))
            .collect();
        if cells.iter().any(|c| c.is_empty() || *c == "NA") {
            dropped += 1;
            continue;
        }
        let parse = |cell: &str, col: &str| -> Result<f64> {
            cell.parse::<f64>().map_err(|_| Error::Parse {
                path: display.clone(),
                line,
                msg: format!("cannot parse '{cell}' in column '{col}' as a number"),
            })
        };
        y.push(parse(cells[0], response_column)?);
        for (i, cell) in cells[1..].iter().enumerate() {
            x.push(parse(cell, covariate_columns[i])?);
        }
        if let Some(idi) = id_idx {
            ids.push(record.get(idi).unwrap_or("").to_string());
        }
    }
    let ids = if id_idx.is_some() { Some(ids) } else { None };
    let dataset = Dataset::new(y, x, p, ids)?;
    Ok(LoadedCsv {
        dataset,
        dropped_rows: dropped,
    })
}

/// Writes a dataset to CSV with columns `id?, y, x1..xp`.
pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = Vec::new();
    if data.ids().is_some() {
        header.push("id".to_string());
    }
    header.push("y".to_string());
    for i in 0..data.p() {
        header.push(format!("x{}", i + 1));
    }
    writeln!(out, "{}", header.join(","))?;
    for i in 0..data.n() {
        let mut row = Vec::new();
        if let Some(ids) = data.ids() {
            row.push(ids[i].clone());
        }
        row.push(format!("{}", data.y()[i]));
        for v in data.row(i) {
            row.push(format!("{v}"));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Empirical quantiles by linear interpolation on the sorted sample.
pub fn empirical_quantiles(samples: &[f64], qs: &[f64]) -> Vec<f64> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    qs.iter()
        .map(|&q| {
            let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] * (1.0 - frac) + sorted[hi] * frac
        })
        .collect()
}
