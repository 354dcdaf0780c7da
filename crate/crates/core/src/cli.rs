//! Command-line entry points: dataset simulation, degrees-of-freedom grid
//! design, MCMC fitting, posterior prediction and DIC comparison. Every
//! command writes its resolved configuration next to its outputs and is
//! reproducible from its seed.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::datagen::{
    load_csv, save_csv, simulate_study1, simulate_study2, study1_truth_spec,
};
use crate::diagnostics::{
    density_curve, fit_report, write_density_csv, FitReport, GridSpec,
};
use crate::dof::{build_nu_grid, KldDirection, NuGridRequest};
use crate::error::{Error, Result};
use crate::gibbs::{
    dataset_fingerprint, derive_stream_seed, read_chain_csv, run_chain, write_chain_csv, Chain,
    RunMeta, SamplerConfig, Variant,
};
use crate::model::{identify_transform, Dataset, ModelSpec, PriorSpec};
use crate::predict::{
    prediction_metrics, write_predictions_csv,
};

#[derive(Debug, Parser)]
#[command(
    name = "tmixreg",
    version,
    about = "Bayesian linear regression with two-level Student-t mixture errors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Design a degrees-of-freedom grid equally spaced on the KLD scale.
    NuGrid(NuGridArgs),
    /// Generate a simulation-study dataset with its ground truth.
    Simulate(SimulateArgs),
    /// Fit the mixture regression model by MCMC.
    Fit(FitArgs),
    /// Simulate the posterior predictive at new covariate rows.
    Predict(PredictArgs),
    /// Compare fitted chains on one dataset by DIC.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    /// KLD(t || normal); the library default.
    FlexibleVsBase,
    /// KLD(normal || t).
    BaseVsFlexible,
}

impl From<DirectionArg> for KldDirection {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::FlexibleVsBase => KldDirection::FlexibleVsBase,
            DirectionArg::BaseVsFlexible => KldDirection::BaseVsFlexible,
        }
    }
}

#[derive(Debug, Args)]
pub struct NuGridArgs {
    /// Smallest degrees of freedom (> 2).
    #[arg(long)]
    pub min: f64,
    /// Largest degrees of freedom (<= 50).
    #[arg(long)]
    pub max: f64,
    /// Grid size.
    #[arg(long)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = DirectionArg::FlexibleVsBase)]
    pub direction: DirectionArg,
    /// Decimal places for the reported grid.
    #[arg(long, default_value_t = 1)]
    pub rounding: u32,
    /// Optional comma-separated reference grid to print deltas against.
    #[arg(long, value_delimiter = ',')]
    pub reference: Option<Vec<f64>>,
    /// Output directory for nu_grid.json.
    #[arg(long, env = "TMIXREG_OUT", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    Study1,
    Study2,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub study: Study,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, env = "TMIXREG_OUT", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    TwoLevel,
    OrdinaryT,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::TwoLevel => Variant::TwoLevel,
            VariantArg::OrdinaryT => Variant::OrdinaryT,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column name.
    #[arg(long, default_value = "y")]
    pub response: String,
    /// Comma-separated covariate column names (empty for density estimation).
    #[arg(long, value_delimiter = ',', num_args = 0.., default_value = "")]
    pub covariates: Vec<String>,
    /// Location/scale component count J.
    #[arg(long)]
    pub j: usize,
    /// Explicit degrees-of-freedom grid (overrides --k/--nu-min/--nu-max).
    #[arg(long, value_delimiter = ',')]
    pub nu: Option<Vec<f64>>,
    /// Tail component count K, used with --nu-min/--nu-max to design a grid.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 2.8)]
    pub nu_min: f64,
    #[arg(long, default_value_t = 14.4)]
    pub nu_max: f64,
    #[arg(long, value_enum, default_value_t = DirectionArg::FlexibleVsBase)]
    pub direction: DirectionArg,
    #[arg(long, value_enum, default_value_t = VariantArg::TwoLevel)]
    pub variant: VariantArg,
    /// Sample the degrees of freedom (ordinary-t only).
    #[arg(long)]
    pub sample_nu: bool,
    /// Store draws relabeled by ascending component mean.
    #[arg(long)]
    pub relabel: bool,
    #[arg(long, default_value_t = 50_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 10_000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Independent chains run concurrently with derived seeds.
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    /// Prior mean of the component means; defaults to the response mean.
    #[arg(long)]
    pub mu0: Option<f64>,
    #[arg(long, default_value_t = 0.005)]
    pub tau: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha_dot: f64,
    #[arg(long, default_value_t = 1.5)]
    pub beta_dot: f64,
    /// Prior variance of each regression coefficient.
    #[arg(long, default_value_t = 1e4)]
    pub upsilon2: f64,
    /// True error variance, when known, for bias/MSE reporting.
    #[arg(long)]
    pub truth_veps: Option<f64>,
    /// Optional error-density curve export (two-column CSV).
    #[arg(long)]
    pub density_out: Option<PathBuf>,
    /// Density grid as lo,hi (defaults to the residual range widened 20%).
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub density_range: Option<Vec<f64>>,
    #[arg(long, default_value_t = 512)]
    pub density_points: usize,
    #[arg(long, env = "TMIXREG_OUT", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Chain CSV produced by `fit` (its .meta.json sidecar must sit next to it).
    #[arg(long)]
    pub chain: PathBuf,
    /// CSV with the covariate rows to predict at.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column holding held-out truths, when present.
    #[arg(long)]
    pub response: Option<String>,
    #[arg(long, value_delimiter = ',', num_args = 0.., default_value = "")]
    pub covariates: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, env = "TMIXREG_OUT", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated chain CSV paths.
    #[arg(long, value_delimiter = ',')]
    pub chains: Vec<PathBuf>,
    /// The dataset all chains were fitted on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub response: String,
    #[arg(long, value_delimiter = ',', num_args = 0.., default_value = "")]
    pub covariates: Vec<String>,
    #[arg(long, env = "TMIXREG_OUT", default_value = ".")]
    pub out: PathBuf,
}

/// Runs a parsed command; errors bubble to the binary as exit code 1.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::NuGrid(args) => cmd_nu_grid(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Compare(args) => cmd_compare(args),
    }
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: PathBuf) -> Result<()> {
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), value)?;
    Ok(())
}

fn non_empty(names: &[String]) -> Vec<&str> {
    names
        .iter()
        .map(String::as_str)
        .filter(|s| !s.is_empty())
        .collect()
}

fn cmd_nu_grid(args: NuGridArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let req = NuGridRequest::new(args.min, args.max, args.k)?.with_rounding(args.rounding);
    let direction: KldDirection = args.direction.into();
    let grid = build_nu_grid(&req, direction)?;
    let rounded = grid.rounded();

    println!("degrees-of-freedom grid ({direction:?}, equal KLD spacing)");
    println!("{:>4} {:>12} {:>12} {:>14}", "idx", "nu", "nu_rounded", "kld");
    for i in 0..grid.nu.len() {
        println!(
            "{:>4} {:>12.6} {:>12.*} {:>14.9}",
            i + 1,
            grid.nu[i],
            args.rounding as usize,
            rounded[i],
            grid.kld[i]
        );
    }
    if let Some(reference) = &args.reference {
        if reference.len() != grid.nu.len() {
            return Err(Error::Config(format!(
                "reference grid has {} entries, expected {}",
                reference.len(),
                grid.nu.len()
            )));
        }
        println!("comparison against the reference grid:");
        let mut max_delta = 0.0f64;
        for (i, (&got, &want)) in grid.nu.iter().zip(reference).enumerate() {
            let delta = got - want;
            max_delta = max_delta.max(delta.abs());
            println!("{:>4} {:>12.6} vs {:>8.3} (delta {:+.3})", i + 1, got, want, delta);
        }
        println!("max |delta| = {max_delta:.3}");
    }

    #[derive(Serialize)]
    struct Report<'a> {
        request: &'a NuGridRequest,
        direction: KldDirection,
        nu: &'a [f64],
        nu_rounded: Vec<f64>,
        kld: &'a [f64],
        reference: Option<&'a [f64]>,
    }
    write_json(
        &Report {
            request: &req,
            direction,
            nu: &grid.nu,
            nu_rounded: rounded,
            kld: &grid.kld,
            reference: args.reference.as_deref(),
        },
        args.out.join("nu_grid.json"),
    )
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    ensure_out(&args.out)?;
    #[derive(Serialize)]
    struct SelfCheck {
        closed_form_error_mean: f64,
        closed_form_error_variance: f64,
        empirical_error_mean: f64,
        empirical_error_variance: f64,
    }

    let (data, truth_json, check) = match args.study {
        Study::Study1 => {
            let (data, truth) = simulate_study1(args.n, args.seed)?;
            let spec = study1_truth_spec();
            let closed = crate::model::error_variance(&truth, &spec)?;
            let (beta0, _) = identify_transform(&truth);
            let check = self_check(&data, beta0, &truth.beta, 0.0, closed);
            (data, serde_json::to_value(&truth)?, check)
        }
        Study::Study2 => {
            let (data, truth) = simulate_study2(args.n, args.seed)?;
            let check = self_check(
                &data,
                truth.beta0,
                &truth.beta,
                truth.error_mean,
                truth.error_variance,
            );
            (data, serde_json::to_value(&truth)?, check)
        }
    };

    fn self_check(
        data: &Dataset,
        beta0: f64,
        beta: &[f64],
        closed_mean: f64,
        closed_var: f64,
    ) -> SelfCheck {
        let n = data.n() as f64;
        let eps: Vec<f64> = (0..data.n())
            .map(|i| data.y()[i] - beta0 - data.linear_predictor(i, beta))
            .collect();
        let mean = eps.iter().sum::<f64>() / n;
        let var = eps.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
        SelfCheck {
            closed_form_error_mean: closed_mean,
            closed_form_error_variance: closed_var,
            empirical_error_mean: mean,
            empirical_error_variance: var,
        }
    }

    save_csv(&data, args.out.join("dataset.csv"))?;
    write_json(&truth_json, args.out.join("truth.json"))?;
    write_json(&check, args.out.join("self_check.json"))?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        study: &'a str,
        n: usize,
        seed: u64,
    }
    write_json(
        &Resolved {
            study: match args.study {
                Study::Study1 => "study1",
                Study::Study2 => "study2",
            },
            n: args.n,
            seed: args.seed,
        },
        args.out.join("simulate_config.json"),
    )?;
    println!(
        "wrote {} rows to {}; error variance: closed form {:.6}, empirical {:.6}",
        data.n(),
        args.out.join("dataset.csv").display(),
        check.closed_form_error_variance,
        check.empirical_error_variance
    );
    Ok(())
}

fn resolve_nu(args: &FitArgs) -> Result<Vec<f64>> {
    if let Some(nu) = &args.nu {
        return Ok(nu.clone());
    }
    let k = args.k.ok_or_else(|| {
        Error::Config("either --nu or --k (with --nu-min/--nu-max) is required".into())
    })?;
    if k == 1 {
        return Ok(vec![args.nu_min]);
    }
    let req = NuGridRequest::new(args.nu_min, args.nu_max, k)?;
    Ok(build_nu_grid(&req, args.direction.into())?.nu)
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let covariates = non_empty(&args.covariates);
    let loaded = load_csv(&args.data, &args.response, &covariates)?;
    if loaded.dropped_rows > 0 {
        println!("dropped {} rows with missing values", loaded.dropped_rows);
    }
    let data = loaded.dataset;

    let nu = resolve_nu(&args)?;
    let k = nu.len();
    let ybar = data.y().iter().sum::<f64>() / data.n() as f64;
    let mu0 = args.mu0.unwrap_or(ybar);
    let priors = PriorSpec::flat(
        mu0,
        args.tau,
        args.alpha_dot,
        args.beta_dot,
        args.j,
        k,
        data.p(),
        args.upsilon2,
    );
    let spec = ModelSpec::new(args.j, k, data.p(), nu, priors)?;
    let variant: Variant = args.variant.into();
    let base_cfg = SamplerConfig::new(args.iterations, args.burn_in, args.thin, args.seed, variant)
        .with_nu_sampling(args.sample_nu)
        .with_relabel(args.relabel);
    base_cfg.validate(&spec)?;
    if args.chains == 0 {
        return Err(Error::Config("need at least one chain".into()));
    }

    // Chains run concurrently with derived seeds; chain 0 keeps the base
    // seed so a single-chain run is unaffected by the fan-out.
    let configs: Vec<SamplerConfig> = (0..args.chains)
        .map(|c| {
            let mut cfg = base_cfg.clone();
            if c > 0 {
                cfg.seed = derive_stream_seed(args.seed, c as u64);
            }
            cfg
        })
        .collect();
    let chains: Vec<Chain> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| {
                let data = &data;
                let spec = &spec;
                scope.spawn(move || run_chain(data, spec, cfg, None))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;

    write_json(&base_cfg, args.out.join("fit_config.json"))?;
    for (c, (chain, cfg)) in chains.iter().zip(&configs).enumerate() {
        let chain_path = args.out.join(format!("chain_{c}.csv"));
        write_chain_csv(chain, &chain_path)?;
        RunMeta::new(chain, &data, &spec, cfg)
            .write_json(args.out.join(format!("chain_{c}.meta.json")))?;
        let report = fit_report(chain, &data, &spec, variant, args.truth_veps)?;
        report.write_json(args.out.join(format!("fit_report_{c}.json")))?;
        print_fit_summary(c, chain, &report);
    }

    if let Some(density_path) = &args.density_out {
        let chain = &chains[0];
        let (lo, hi) = match &args.density_range {
            Some(r) => (r[0], r[1]),
            None => {
                // Residuals around the posterior-mean fit, widened 20%.
                let (tilde, _) = crate::diagnostics::theta_tilde(chain, variant)?;
                let (beta0, _) = identify_transform(&tilde);
                let resid: Vec<f64> = (0..data.n())
                    .map(|i| data.y()[i] - beta0 - data.linear_predictor(i, &tilde.beta))
                    .collect();
                let lo = resid.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = resid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let pad = 0.1 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        let grid = GridSpec {
            lo,
            hi,
            tail_lo: lo,
            tail_hi: hi,
            points: args.density_points,
        };
        let curve = density_curve(chain, &spec, &grid)?;
        write_density_csv(&curve, density_path)?;
        println!("wrote error-density curve to {}", density_path.display());
    }
    Ok(())
}

fn print_fit_summary(c: usize, chain: &Chain, report: &FitReport) {
    let m = chain.len() as f64;
    let beta0_mean: f64 = chain
        .draws
        .iter()
        .map(|d| identify_transform(d).0)
        .sum::<f64>()
        / m;
    let p = chain.draws[0].beta.len();
    let beta_mean: Vec<f64> = (0..p)
        .map(|a| chain.draws.iter().map(|d| d.beta[a]).sum::<f64>() / m)
        .collect();
    println!(
        "chain {c}: {} draws in {:.1}s | beta0 {:.4} | beta {:?} | V_eps {:.4} | DIC(pV) {:.3} | DIC(mean) {:.3} | ESS(loglik) {:.0}{}",
        chain.len(),
        chain.wall_time_secs,
        beta0_mean,
        beta_mean.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
        report.v_eps_posterior.mean,
        report.dic_v,
        report.dic,
        report.ess_loglik,
        chain
            .nu_accept_rate
            .map(|r| format!(" | nu accept {:.2}", r))
            .unwrap_or_default()
    );
}

fn meta_path_for(chain: &Path) -> PathBuf {
    chain.with_extension("meta.json")
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let chain = read_chain_csv(&args.chain)?;
    let meta = RunMeta::read_json(meta_path_for(&args.chain))?;
    let spec = meta.spec.clone();

    let covariates = non_empty(&args.covariates);
    // With a response column named, held-out truths ride along for metrics.
    let (xnew, y_true, ids): (Vec<Vec<f64>>, Option<Vec<f64>>, Option<Vec<String>>) =
        match &args.response {
            Some(resp) => {
                let loaded = load_csv(&args.data, resp, &covariates)?;
                let d = loaded.dataset;
                (
                    (0..d.n()).map(|i| d.row(i).to_vec()).collect(),
                    Some(d.y().to_vec()),
                    d.ids().map(|v| v.to_vec()),
                )
            }
            None => {
                if covariates.is_empty() {
                    return Err(Error::Config(
                        "prediction needs --covariates or a --response column".into(),
                    ));
                }
                // No response column: parse covariates only, reusing the first
                // covariate as a stand-in response column for the loader.
                let loaded = load_csv(&args.data, covariates[0], &covariates)?;
                let d = loaded.dataset;
                ((0..d.n()).map(|i| d.row(i).to_vec()).collect(), None, d.ids().map(|v| v.to_vec()))
            }
        };
    if xnew.first().map_or(0, Vec::len) != spec.n_covariates() {
        return Err(Error::Dimension(format!(
            "chain was fitted with p = {}, prediction rows have {}",
            spec.n_covariates(),
            xnew.first().map_or(0, Vec::len)
        )));
    }

    let draws = crate::predict::posterior_predictive(&xnew, &chain, &spec, args.seed)?;
    write_predictions_csv(
        &draws,
        y_true.as_deref(),
        ids.as_deref(),
        args.out.join("predictions.csv"),
    )?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        chain: &'a Path,
        data: &'a Path,
        seed: u64,
        rows: usize,
        draws_per_row: usize,
    }
    write_json(
        &Resolved {
            chain: &args.chain,
            data: &args.data,
            seed: args.seed,
            rows: draws.n_rows(),
            draws_per_row: draws.draws_per_row(),
        },
        args.out.join("predict_config.json"),
    )?;
    println!(
        "wrote {} predictive rows ({} draws each) to {}",
        draws.n_rows(),
        draws.draws_per_row(),
        args.out.join("predictions.csv").display()
    );
    if let Some(y) = &y_true {
        let metrics = prediction_metrics(y, &draws)?;
        write_json(&metrics, args.out.join("prediction_metrics.json"))?;
        println!(
            "rmse {:.4} | mae {:.4} | re {} | 99% interval range mean {:.3} (median {:.3})",
            metrics.rmse,
            metrics.mae,
            metrics
                .re
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "undefined".into()),
            metrics.interval_range_mean,
            metrics.interval_range_median
        );
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    ensure_out(&args.out)?;
    if args.chains.len() < 2 {
        return Err(Error::Config("compare needs at least two chains".into()));
    }
    let covariates = non_empty(&args.covariates);
    let data = load_csv(&args.data, &args.response, &covariates)?.dataset;
    let fp = dataset_fingerprint(&data);

    #[derive(Serialize)]
    struct Row {
        chain: String,
        variant: Variant,
        j: usize,
        k: usize,
        dic_v: f64,
        dic: f64,
        dbar: f64,
        d_theta_tilde: f64,
        ess_loglik: f64,
    }
    let mut rows = Vec::new();
    for path in &args.chains {
        let meta = RunMeta::read_json(meta_path_for(path))?;
        if meta.dataset_fingerprint != fp {
            return Err(Error::Config(format!(
                "chain {} was fitted on a different dataset (fingerprint {:x} vs {:x})",
                path.display(),
                meta.dataset_fingerprint,
                fp
            )));
        }
        let chain = read_chain_csv(path)?;
        let report = fit_report(&chain, &data, &meta.spec, meta.config.variant, None)?;
        rows.push(Row {
            chain: path.display().to_string(),
            variant: meta.config.variant,
            j: meta.spec.n_components(),
            k: meta.spec.n_tails(),
            dic_v: report.dic_v,
            dic: report.dic,
            dbar: report.dbar,
            d_theta_tilde: report.d_theta_tilde,
            ess_loglik: report.ess_loglik,
        });
    }
    // Ranked on the variance-penalty estimate; the point-estimate DIC is
    // reported next to it but is unreliable when labels switch.
    rows.sort_by(|a, b| a.dic_v.partial_cmp(&b.dic_v).unwrap());

    println!(
        "{:<40} {:>10} {:>3} {:>3} {:>12} {:>12} {:>12} {:>12}",
        "chain", "variant", "J", "K", "DIC(pV)", "DIC(mean)", "Dbar", "D(mean)"
    );
    for r in &rows {
        println!(
            "{:<40} {:>10} {:>3} {:>3} {:>12.3} {:>12.3} {:>12.3} {:>12.3}",
            r.chain,
            format!("{:?}", r.variant),
            r.j,
            r.k,
            r.dic_v,
            r.dic,
            r.dbar,
            r.d_theta_tilde
        );
    }
    write_json(&rows, args.out.join("dic_table.json"))?;
    Ok(())
}
