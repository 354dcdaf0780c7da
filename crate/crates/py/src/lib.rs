//! Python bindings for the two-level Student-t mixture regression library:
//! model/sampler configuration, the Gibbs sampler, degrees-of-freedom grid
//! design, posterior prediction and the fit diagnostics.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tmixreg::diagnostics as diag;
use tmixreg::dof;
use tmixreg::gibbs;
use tmixreg::model;
use tmixreg::predict as pred;

fn err(e: tmixreg::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_direction(s: &str) -> PyResult<dof::KldDirection> {
    match s {
        "flexible-vs-base" => Ok(dof::KldDirection::FlexibleVsBase),
        "base-vs-flexible" => Ok(dof::KldDirection::BaseVsFlexible),
        other => Err(PyValueError::new_err(format!(
            "unknown direction '{other}' (expected 'flexible-vs-base' or 'base-vs-flexible')"
        ))),
    }
}

fn parse_variant(s: &str) -> PyResult<gibbs::Variant> {
    match s {
        "two-level" => Ok(gibbs::Variant::TwoLevel),
        "ordinary-t" => Ok(gibbs::Variant::OrdinaryT),
        other => Err(PyValueError::new_err(format!(
            "unknown variant '{other}' (expected 'two-level' or 'ordinary-t')"
        ))),
    }
}

/// Immutable model definition: dimensions, the fixed degrees-of-freedom grid
/// and prior hyperparameters (flat Dirichlet weights, zero coefficient mean).
#[pyclass(name = "ModelSpec")]
#[derive(Clone)]
struct PyModelSpec {
    inner: model::ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    #[new]
    #[pyo3(signature = (j, k, p, nu, mu0=0.0, tau=0.005, alpha_dot=1.0, beta_dot=1.5, upsilon2=1e4))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        j: usize,
        k: usize,
        p: usize,
        nu: Vec<f64>,
        mu0: f64,
        tau: f64,
        alpha_dot: f64,
        beta_dot: f64,
        upsilon2: f64,
    ) -> PyResult<Self> {
        let priors = model::PriorSpec::flat(mu0, tau, alpha_dot, beta_dot, j, k, p, upsilon2);
        Ok(PyModelSpec {
            inner: model::ModelSpec::new(j, k, p, nu, priors).map_err(err)?,
        })
    }

    #[getter]
    fn j(&self) -> usize {
        self.inner.n_components()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.n_tails()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.n_covariates()
    }

    #[getter]
    fn nu(&self) -> Vec<f64> {
        self.inner.nu().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelSpec(j={}, k={}, p={}, nu={:?})",
            self.inner.n_components(),
            self.inner.n_tails(),
            self.inner.n_covariates(),
            self.inner.nu()
        )
    }
}

/// One parameter state (mu_star, sigma2, w, wdot, beta).
#[pyclass(name = "ParamState")]
#[derive(Clone)]
struct PyParamState {
    inner: model::ParamState,
}

#[pymethods]
impl PyParamState {
    #[new]
    fn new(
        mu_star: Vec<f64>,
        sigma2: Vec<f64>,
        w: Vec<f64>,
        wdot: Vec<Vec<f64>>,
        beta: Vec<f64>,
    ) -> Self {
        PyParamState {
            inner: model::ParamState {
                mu_star,
                sigma2,
                w,
                wdot,
                beta,
            },
        }
    }

    #[getter]
    fn mu_star(&self) -> Vec<f64> {
        self.inner.mu_star.clone()
    }

    #[getter]
    fn sigma2(&self) -> Vec<f64> {
        self.inner.sigma2.clone()
    }

    #[getter]
    fn w(&self) -> Vec<f64> {
        self.inner.w.clone()
    }

    #[getter]
    fn wdot(&self) -> Vec<Vec<f64>> {
        self.inner.wdot.clone()
    }

    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.inner.beta.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "ParamState(mu_star={:?}, sigma2={:?}, w={:?}, beta={:?})",
            self.inner.mu_star, self.inner.sigma2, self.inner.w, self.inner.beta
        )
    }
}

/// Response vector plus covariate rows (no intercept column).
#[pyclass(name = "Dataset")]
#[derive(Clone)]
struct PyDataset {
    inner: model::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(y: Vec<f64>, x: Vec<Vec<f64>>) -> PyResult<Self> {
        let p = x.first().map_or(0, Vec::len);
        if !x.is_empty() && x.len() != y.len() {
            return Err(PyValueError::new_err(format!(
                "{} responses vs {} covariate rows",
                y.len(),
                x.len()
            )));
        }
        let n = y.len();
        let mut flat = Vec::with_capacity(n * p);
        for (i, row) in x.iter().enumerate() {
            if row.len() != p {
                return Err(PyValueError::new_err(format!(
                    "covariate row {i} has {} entries, expected {p}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        Ok(PyDataset {
            inner: model::Dataset::new(y, flat, p, None).map_err(err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y().to_vec()
    }

    fn x(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n())
            .map(|i| self.inner.row(i).to_vec())
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, p={})", self.inner.n(), self.inner.p())
    }
}

/// MCMC run configuration.
#[pyclass(name = "SamplerConfig")]
#[derive(Clone)]
struct PySamplerConfig {
    inner: gibbs::SamplerConfig,
}

#[pymethods]
impl PySamplerConfig {
    #[new]
    #[pyo3(signature = (iterations, burn_in, thin=1, seed=1, variant="two-level", nu_sampling=false, relabel=false))]
    fn new(
        iterations: usize,
        burn_in: usize,
        thin: usize,
        seed: u64,
        variant: &str,
        nu_sampling: bool,
        relabel: bool,
    ) -> PyResult<Self> {
        let cfg =
            gibbs::SamplerConfig::new(iterations, burn_in, thin, seed, parse_variant(variant)?)
                .with_nu_sampling(nu_sampling)
                .with_relabel(relabel);
        Ok(PySamplerConfig { inner: cfg })
    }

    fn __repr__(&self) -> String {
        format!(
            "SamplerConfig(iterations={}, burn_in={}, thin={}, seed={}, variant={:?})",
            self.inner.iterations,
            self.inner.burn_in,
            self.inner.thin,
            self.inner.seed,
            self.inner.variant
        )
    }
}

/// Stored MCMC draws plus the log-likelihood trace.
#[pyclass(name = "Chain")]
struct PyChain {
    inner: gibbs::Chain,
    variant: gibbs::Variant,
}

#[pymethods]
impl PyChain {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn loglik(&self) -> Vec<f64> {
        self.inner.loglik_trace.clone()
    }

    /// Draws-by-component matrix of the unrestricted means.
    #[getter]
    fn mu_star(&self) -> Vec<Vec<f64>> {
        self.inner.draws.iter().map(|d| d.mu_star.clone()).collect()
    }

    #[getter]
    fn sigma2(&self) -> Vec<Vec<f64>> {
        self.inner.draws.iter().map(|d| d.sigma2.clone()).collect()
    }

    #[getter]
    fn w(&self) -> Vec<Vec<f64>> {
        self.inner.draws.iter().map(|d| d.w.clone()).collect()
    }

    #[getter]
    fn beta(&self) -> Vec<Vec<f64>> {
        self.inner.draws.iter().map(|d| d.beta.clone()).collect()
    }

    /// Per-draw sampled degrees of freedom (ordinary-t with nu sampling).
    #[getter]
    fn nu(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.nu_draws.clone()
    }

    /// Per-draw intercept beta0 = sum_j w_j mu_star_j.
    #[getter]
    fn beta0(&self) -> Vec<f64> {
        self.inner
            .draws
            .iter()
            .map(|d| model::identify_transform(d).0)
            .collect()
    }

    #[getter]
    fn nu_accept_rate(&self) -> Option<f64> {
        self.inner.nu_accept_rate
    }

    #[getter]
    fn wall_time_secs(&self) -> f64 {
        self.inner.wall_time_secs
    }

    fn draw(&self, m: usize) -> PyResult<PyParamState> {
        self.inner
            .draws
            .get(m)
            .map(|d| PyParamState { inner: d.clone() })
            .ok_or_else(|| PyValueError::new_err(format!("draw index {m} out of range")))
    }

    fn __repr__(&self) -> String {
        format!(
            "Chain(draws={}, wall_time={:.2}s)",
            self.inner.len(),
            self.inner.wall_time_secs
        )
    }
}

#[pyfunction]
fn student_t_logpdf(y: f64, mu: f64, sigma2: f64, nu: f64) -> PyResult<f64> {
    model::student_t_logpdf(y, mu, sigma2, nu).map_err(err)
}

#[pyfunction]
fn mixture_logpdf(y: f64, x: Vec<f64>, theta: &PyParamState, spec: &PyModelSpec) -> PyResult<f64> {
    model::mixture_logpdf(y, &x, &theta.inner, &spec.inner).map_err(err)
}

#[pyfunction]
fn identify_transform(theta: &PyParamState) -> (f64, Vec<f64>) {
    model::identify_transform(&theta.inner)
}

#[pyfunction]
fn error_variance(theta: &PyParamState, spec: &PyModelSpec) -> PyResult<f64> {
    model::error_variance(&theta.inner, &spec.inner).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (nu, direction="flexible-vs-base"))]
fn kld_normal_t(nu: f64, direction: &str) -> PyResult<f64> {
    dof::kld_normal_t(nu, parse_direction(direction)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (nu_min, nu_max, k, direction="flexible-vs-base"))]
fn build_nu_grid(
    nu_min: f64,
    nu_max: f64,
    k: usize,
    direction: &str,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let req = dof::NuGridRequest::new(nu_min, nu_max, k).map_err(err)?;
    let grid = dof::build_nu_grid(&req, parse_direction(direction)?).map_err(err)?;
    Ok((grid.nu, grid.kld))
}

#[pyfunction]
#[pyo3(signature = (nu, lam, direction="flexible-vs-base"))]
fn pc_prior_logpdf(nu: f64, lam: f64, direction: &str) -> PyResult<f64> {
    let spec = dof::PcPriorSpec::new(lam).map_err(err)?;
    dof::pc_prior_logpdf(nu, &spec, parse_direction(direction)?).map_err(err)
}

#[pyfunction]
fn simulate_study1(n: usize, seed: u64) -> PyResult<(PyDataset, PyParamState)> {
    let (data, truth) = tmixreg::datagen::simulate_study1(n, seed).map_err(err)?;
    Ok((PyDataset { inner: data }, PyParamState { inner: truth }))
}

#[pyfunction]
fn simulate_study2(py: Python<'_>, n: usize, seed: u64) -> PyResult<(PyDataset, Py<PyDict>)> {
    let (data, truth) = tmixreg::datagen::simulate_study2(n, seed).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("beta0", truth.beta0)?;
    d.set_item("beta", truth.beta.clone())?;
    d.set_item("error_mean", truth.error_mean)?;
    d.set_item("error_variance", truth.error_variance)?;
    let comps: Vec<(f64, f64, f64, f64, f64)> = truth
        .components
        .iter()
        .map(|c| (c.mu, c.sigma2, c.lambda, c.nu, c.weight))
        .collect();
    d.set_item("components", comps)?;
    Ok((PyDataset { inner: data }, d.into()))
}

#[pyfunction]
fn run_chain(data: &PyDataset, spec: &PyModelSpec, cfg: &PySamplerConfig) -> PyResult<PyChain> {
    let chain = gibbs::run_chain(&data.inner, &spec.inner, &cfg.inner, None).map_err(err)?;
    Ok(PyChain {
        inner: chain,
        variant: cfg.inner.variant,
    })
}

#[pyfunction]
fn dic(
    py: Python<'_>,
    chain: &PyChain,
    data: &PyDataset,
    spec: &PyModelSpec,
) -> PyResult<Py<PyDict>> {
    let d = diag::dic(&chain.inner, &data.inner, &spec.inner, chain.variant).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("dic", d.dic)?;
    out.set_item("dbar", d.dbar)?;
    out.set_item("d_theta_tilde", d.d_theta_tilde)?;
    out.set_item("dic_v", d.dic_v)?;
    out.set_item("p_v", d.p_v)?;
    Ok(out.into())
}

#[pyfunction]
#[pyo3(signature = (chain, spec, truth=None))]
fn v_eps_summary(
    py: Python<'_>,
    chain: &PyChain,
    spec: &PyModelSpec,
    truth: Option<f64>,
) -> PyResult<Py<PyDict>> {
    let s = diag::v_eps_summary(&chain.inner, &spec.inner, truth).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("mean", s.mean)?;
    out.set_item("var", s.var)?;
    out.set_item("bias", s.bias)?;
    out.set_item("mse", s.mse)?;
    Ok(out.into())
}

#[pyfunction]
fn ess(trace: Vec<f64>) -> PyResult<f64> {
    diag::ess(&trace).map_err(err)
}

#[pyfunction]
fn posterior_predictive(
    xnew: Vec<Vec<f64>>,
    chain: &PyChain,
    spec: &PyModelSpec,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    Ok(
        pred::posterior_predictive(&xnew, &chain.inner, &spec.inner, seed)
            .map_err(err)?
            .values,
    )
}

#[pyfunction]
fn hpd_interval(samples: Vec<f64>, level: f64) -> PyResult<(f64, f64)> {
    pred::hpd_interval(&samples, level).map_err(err)
}

#[pyfunction]
fn prediction_metrics(
    py: Python<'_>,
    y_true: Vec<f64>,
    draws: Vec<Vec<f64>>,
) -> PyResult<Py<PyDict>> {
    let m =
        pred::prediction_metrics(&y_true, &pred::PredictiveDraws { values: draws }).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("rmse", m.rmse)?;
    out.set_item("mae", m.mae)?;
    out.set_item("re", m.re)?;
    out.set_item("interval_range_mean", m.interval_range_mean)?;
    out.set_item("interval_range_median", m.interval_range_median)?;
    Ok(out.into())
}

#[pyfunction]
fn load_csv(path: &str, response: &str, covariates: Vec<String>) -> PyResult<(PyDataset, usize)> {
    let cols: Vec<&str> = covariates.iter().map(String::as_str).collect();
    let loaded = tmixreg::datagen::load_csv(path, response, &cols).map_err(err)?;
    Ok((
        PyDataset {
            inner: loaded.dataset,
        },
        loaded.dropped_rows,
    ))
}

#[pymodule]
fn tmixreg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyParamState>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PySamplerConfig>()?;
    m.add_class::<PyChain>()?;
    m.add_function(wrap_pyfunction!(student_t_logpdf, m)?)?;
    m.add_function(wrap_pyfunction!(mixture_logpdf, m)?)?;
    m.add_function(wrap_pyfunction!(identify_transform, m)?)?;
    m.add_function(wrap_pyfunction!(error_variance, m)?)?;
    m.add_function(wrap_pyfunction!(kld_normal_t, m)?)?;
    m.add_function(wrap_pyfunction!(build_nu_grid, m)?)?;
    m.add_function(wrap_pyfunction!(pc_prior_logpdf, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_study1, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_study2, m)?)?;
    m.add_function(wrap_pyfunction!(run_chain, m)?)?;
    m.add_function(wrap_pyfunction!(dic, m)?)?;
    m.add_function(wrap_pyfunction!(v_eps_summary, m)?)?;
    m.add_function(wrap_pyfunction!(ess, m)?)?;
    m.add_function(wrap_pyfunction!(posterior_predictive, m)?)?;
    m.add_function(wrap_pyfunction!(hpd_interval, m)?)?;
    m.add_function(wrap_pyfunction!(prediction_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    Ok(())
}
