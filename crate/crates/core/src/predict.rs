//! Posterior predictive simulation, highest-posterior-density intervals and
//! held-out prediction metrics.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::datagen::{sample_categorical, sample_gamma_rate};
use crate::error::{Error, Result};
use crate::gibbs::{derive_stream_seed, Chain};
use crate::model::{dot, Dataset, ModelSpec};

/// Simulated responses for each new covariate row, one per stored chain draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    /// values[row][m] is the simulated response for draw m.
    pub values: Vec<Vec<f64>>,
}

impl PredictiveDraws {
    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn draws_per_row(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Predictive mean per row.
    pub fn means(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .collect()
    }
}

/// Simulates the posterior predictive distribution at each row of `xnew`.
/// Per draw m: a fresh component j ~ w^(m), tail k ~ wdot_j^(m), mixing scale
/// u ~ Gamma(nu_k/2, nu_k/2) and y ~ N(mu_star_j^(m) + x' beta^(m),
/// sigma2_j^(m) / u). Rows use independent RNG streams derived from `seed`,
/// so the output is deterministic and rows may be simulated concurrently.
pub fn posterior_predictive(
    xnew: &[Vec<f64>],
    chain: &Chain,
    spec: &ModelSpec,
    seed: u64,
) -> Result<PredictiveDraws> {
    if chain.is_empty() {
        return Err(Error::Config("chain holds no draws".into()));
    }
    let p = spec.n_covariates();
    for (r, row) in xnew.iter().enumerate() {
        if row.len() != p {
            return Err(Error::Dimension(format!(
                "xnew row {r} has {} entries, expected p = {p}",
                row.len()
            )));
        }
    }
    let values = xnew
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_stream_seed(seed, r as u64));
            chain
                .draws
                .iter()
                .enumerate()
                .map(|(m, draw)| {
                    let nu = chain.nu_for_draw(m, spec);
                    let j = sample_categorical(&draw.w, &mut rng);
                    let k = sample_categorical(&draw.wdot[j], &mut rng);
                    let u = sample_gamma_rate(nu[k] / 2.0, nu[k] / 2.0, &mut rng);
                    let mean = draw.mu_star[j] + dot(row, &draw.beta);
                    mean + (draw.sigma2[j] / u).sqrt() * rng.sample::<f64, _>(StandardNormal)
                })
                .collect()
        })
        .collect();
    Ok(PredictiveDraws { values })
}

/// Shortest contiguous interval containing ceil(level * n) of the sorted
/// samples; ties break toward the lowest start.
pub fn hpd_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if samples.len() < 20 {
        return Err(Error::Config(format!(
            "need at least 20 samples for an HPD interval, got {}",
            samples.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("level must lie in (0, 1), got {level}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let m = ((level * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (sorted[0], sorted[m - 1]);
    let mut best_width = best.1 - best.0;
    for start in 1..=(n - m) {
        let width = sorted[start + m - 1] - sorted[start];
        if width < best_width {
            best_width = width;
            best = (sorted[start], sorted[start + m - 1]);
        }
    }
    Ok(best)
}

/// Held-out prediction metrics. The point prediction is the predictive mean;
/// the relative error excludes rows with |y| < 1e-8 and is `None` when every
/// row is excluded. Interval ranges summarize 99% HPD widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub re: Option<f64>,
    pub interval_range_mean: f64,
    pub interval_range_median: f64,
}

pub fn prediction_metrics(y_true: &[f64], draws: &PredictiveDraws) -> Result<PredictionMetrics> {
    if y_true.len() != draws.n_rows() {
        return Err(Error::Dimension(format!(
            "{} true responses vs {} predictive rows",
            y_true.len(),
            draws.n_rows()
        )));
    }
    let y_hat = draws.means();
    let n = y_true.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut rel = 0.0;
    let mut rel_n = 0usize;
    for (yt, yh) in y_true.iter().zip(&y_hat) {
        let err = yt - yh;
        sq += err * err;
        abs += err.abs();
        if yt.abs() >= 1e-8 {
            rel += err.abs() / yt.abs();
            rel_n += 1;
        }
    }
    let mut widths: Vec<f64> = draws
        .values
        .iter()
        .map(|v| {
            let (lo, hi) = hpd_interval(v, 0.99)?;
            Ok(hi - lo)
        })
        .collect::<Result<_>>()?;
    widths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = widths.len() / 2;
    let median = if widths.len() % 2 == 0 {
        0.5 * (widths[mid - 1] + widths[mid])
    } else {
        widths[mid]
    };
    Ok(PredictionMetrics {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        re: (rel_n > 0).then(|| rel / rel_n as f64),
        interval_range_mean: widths.iter().sum::<f64>() / widths.len() as f64,
        interval_range_median: median,
    })
}

/// Writes predictions as CSV: `id, y_true?, y_hat, hpd99_lo, hpd99_hi`.
pub fn write_predictions_csv(
    draws: &PredictiveDraws,
    y_true: Option<&[f64]>,
    ids: Option<&[String]>,
    path: impl AsRef<Path>,
) -> Result<()> {
    if let Some(y) = y_true {
        if y.len() != draws.n_rows() {
            return Err(Error::Dimension("y_true length mismatch".into()));
        }
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["id".to_string()];
    if y_true.is_some() {
        header.push("y_true".into());
    }
    header.extend(["y_hat".into(), "hpd99_lo".into(), "hpd99_hi".into()]);
    writeln!(out, "{}", header.join(","))?;
    let means = draws.means();
    for r in 0..draws.n_rows() {
        let (lo, hi) = hpd_interval(&draws.values[r], 0.99)?;
        let id = ids.map(|v| v[r].clone()).unwrap_or_else(|| r.to_string());
        let mut row = vec![id];
        if let Some(y) = y_true {
            row.push(format!("{}", y[r]));
        }
        row.push(format!("{}", means[r]));
        row.push(format!("{lo}"));
        row.push(format!("{hi}"));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Predictive draws for the covariate rows of an existing dataset.
pub fn predictive_for_dataset(
    data: &Dataset,
    chain: &Chain,
    spec: &ModelSpec,
    seed: u64,
) -> Result<PredictiveDraws> {
    let rows: Vec<Vec<f64>> = (0..data.n()).map(|i| data.row(i).to_vec()).collect();
    posterior_predictive(&rows, chain, spec, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParamState, PriorSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn spec_11(p: usize) -> ModelSpec {
        ModelSpec::new(
            1,
            1,
            p,
            vec![4.0],
            PriorSpec::flat(0.0, 1.0, 1.0, 1.0, 1, 1, p, 1.0),
        )
        .unwrap()
    }

    fn degenerate_chain(p: usize, draws: usize) -> Chain {
        let theta = ParamState {
            mu_star: vec![2.0],
            sigma2: vec![1e-12],
            w: vec![1.0],
            wdot: vec![vec![1.0]],
            beta: vec![0.5; p],
        };
        Chain {
            draws: vec![theta; draws],
            loglik_trace: vec![-1.0; draws],
            occupancy: Vec::new(),
            nu_draws: None,
            wall_time_secs: 0.0,
            nu_accept_rate: None,
            rate_clamps: 0,
        }
    }

    #[test]
    fn degenerate_chain_predicts_linear_predictor() {
        let spec = spec_11(1);
        let chain = degenerate_chain(1, 50);
        let xnew = vec![vec![2.0], vec![-1.0]];
        let draws = posterior_predictive(&xnew, &chain, &spec, 7).unwrap();
        for (r, want) in [(0usize, 3.0), (1usize, 1.5)] {
            for v in &draws.values[r] {
                assert!((v - want).abs() < 1e-4, "row {r}: {v}");
            }
        }
    }

    #[test]
    fn predictive_is_deterministic_and_row_stable() {
        let spec = spec_11(1);
        let chain = degenerate_chain(1, 30);
        let a = posterior_predictive(&[vec![1.0], vec![2.0]], &chain, &spec, 9).unwrap();
        let b = posterior_predictive(&[vec![1.0], vec![2.0]], &chain, &spec, 9).unwrap();
        assert_eq!(a, b);
        // Row streams are independent: the second row's draws do not depend
        // on what the first row was.
        let d = posterior_predictive(&[vec![9.0], vec![2.0]], &chain, &spec, 9).unwrap();
        assert_eq!(d.values[1], a.values[1]);
    }

    #[test]
    fn hpd_consecutive_integers() {
        let samples: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let (lo, hi) = hpd_interval(&samples, 0.95).unwrap();
        assert_eq!((lo, hi), (1.0, 95.0));
    }

    #[test]
    fn hpd_standard_normal_draws() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(21);
        let samples: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let (lo, hi) = hpd_interval(&samples, 0.95).unwrap();
        assert!((lo + 1.96).abs() < 0.03, "lo {lo}");
        assert!((hi - 1.96).abs() < 0.03, "hi {hi}");
        // Roughly symmetric around the mode of a symmetric sample.
        assert!((lo + hi).abs() < 0.05);
    }

    #[test]
    fn hpd_rejects_short_input() {
        let samples: Vec<f64> = (0..19).map(|v| v as f64).collect();
        assert!(hpd_interval(&samples, 0.95).is_err());
    }

    proptest! {
        #[test]
        fn hpd_width_shrinks_with_level(seed in 0u64..50) {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let samples: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let mut last = f64::INFINITY;
            for level in [0.99, 0.95, 0.9, 0.5, 0.2] {
                let (lo, hi) = hpd_interval(&samples, level).unwrap();
                prop_assert!(hi - lo <= last + 1e-12);
                last = hi - lo;
            }
        }
    }

    #[test]
    fn metrics_perfect_prediction() {
        let draws = PredictiveDraws {
            values: (0..3).map(|r| vec![r as f64 + 1.0; 40]).collect(),
        };
        let m = prediction_metrics(&[1.0, 2.0, 3.0], &draws).unwrap();
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.re, Some(0.0));
        assert!(m.interval_range_mean.abs() < 1e-12);
    }

    #[test]
    fn metrics_hand_example() {
        // y = (2, 4), y_hat = (1, 6): rmse = sqrt(2.5), mae = 1.5, re = 0.5.
        let draws = PredictiveDraws {
            values: vec![vec![1.0; 30], vec![6.0; 30]],
        };
        let m = prediction_metrics(&[2.0, 4.0], &draws).unwrap();
        assert!((m.rmse - 2.5f64.sqrt()).abs() < 1e-12);
        assert!((m.mae - 1.5).abs() < 1e-12);
        assert!((m.re.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn metrics_re_undefined_when_all_rows_excluded() {
        let draws = PredictiveDraws {
            values: vec![vec![0.5; 25]],
        };
        let m = prediction_metrics(&[1e-12], &draws).unwrap();
        assert_eq!(m.re, None);
    }

    #[test]
    fn predictions_csv_shape() {
        let chain = degenerate_chain(0, 25);
        let spec = spec_11(0);
        let draws = posterior_predictive(&[vec![], vec![]], &chain, &spec, 3).unwrap();
        let dir = std::env::temp_dir().join(format!("tmixreg-predict-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pred.csv");
        write_predictions_csv(&draws, Some(&[2.0, 2.1]), None, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "id,y_true,y_hat,hpd99_lo,hpd99_hi");
        assert_eq!(lines.count(), 2);
    }
}
