//! Python bindings: model types, the ODE integrator, the log-posterior and a
//! compact fit-and-summarize entry point.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use seirdfit_core::analysis;
use seirdfit_core::config::RunConfig;
use seirdfit_core::dynamics::{self, Integrator};
use seirdfit_core::fit;
use seirdfit_core::model::ModelContext;
use seirdfit_core::sampler;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

#[pyclass(name = "ParameterVector", from_py_object)]
#[derive(Clone)]
pub struct ParameterVector {
    inner: dynamics::ParameterVector,
}

#[pymethods]
impl ParameterVector {
    #[new]
    fn new(alpha: Vec<f64>, beta_a: f64, beta: f64, gamma: f64, eta: f64) -> PyResult<Self> {
        if alpha.is_empty() {
            return Err(value_err("alpha needs at least one value"));
        }
        Ok(Self {
            inner: dynamics::ParameterVector {
                alpha,
                beta_a,
                beta,
                gamma,
                eta,
            },
        })
    }

    /// Reference estimates for the Qatar schedule.
    #[staticmethod]
    fn reference() -> Self {
        Self {
            inner: dynamics::ParameterVector::qatar_reference(),
        }
    }

    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.inner.alpha.clone()
    }

    #[getter]
    fn beta_a(&self) -> f64 {
        self.inner.beta_a
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.inner.eta
    }

    fn names(&self) -> Vec<String> {
        dynamics::ParameterVector::names(self.inner.n_interventions())
    }

    fn to_list(&self) -> Vec<f64> {
        self.inner.to_vec()
    }

    fn partial_sums(&self) -> Vec<f64> {
        self.inner.partial_sums()
    }

    fn in_support(&self) -> bool {
        self.inner.in_support()
    }

    fn __repr__(&self) -> String {
        format!(
            "ParameterVector(alpha={:?}, beta_a={}, beta={}, gamma={}, eta={})",
            self.inner.alpha, self.inner.beta_a, self.inner.beta, self.inner.gamma, self.inner.eta
        )
    }
}

#[pyclass(name = "InterventionSchedule", from_py_object)]
#[derive(Clone)]
pub struct InterventionSchedule {
    inner: dynamics::InterventionSchedule,
}

#[pymethods]
impl InterventionSchedule {
    #[new]
    fn new(change_days: Vec<u32>, impulse_day: u32) -> PyResult<Self> {
        dynamics::InterventionSchedule::new(change_days, impulse_day)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[staticmethod]
    fn qatar() -> Self {
        Self {
            inner: dynamics::InterventionSchedule::qatar(),
        }
    }

    #[getter]
    fn change_days(&self) -> Vec<u32> {
        self.inner.change_days().to_vec()
    }

    #[getter]
    fn impulse_day(&self) -> u32 {
        self.inner.impulse_day()
    }

    fn __repr__(&self) -> String {
        format!(
            "InterventionSchedule(change_days={:?}, impulse_day={})",
            self.inner.change_days(),
            self.inner.impulse_day()
        )
    }
}

#[pyclass(name = "StateVector", from_py_object)]
#[derive(Clone)]
pub struct StateVector {
    inner: dynamics::StateVector,
}

#[pymethods]
impl StateVector {
    #[new]
    fn new(s: f64, e: f64, i: f64, r: f64, d: f64) -> Self {
        Self {
            inner: dynamics::StateVector::new(s, e, i, r, d),
        }
    }

    /// Qatar initial conditions.
    #[staticmethod]
    fn qatar() -> Self {
        Self {
            inner: dynamics::StateVector::qatar_initial(),
        }
    }

    fn to_list(&self) -> Vec<f64> {
        self.inner.as_array().to_vec()
    }

    fn total(&self) -> f64 {
        self.inner.total()
    }

    fn __repr__(&self) -> String {
        let x = &self.inner;
        format!("StateVector(s={}, e={}, i={}, r={}, d={})", x.s, x.e, x.i, x.r, x.d)
    }
}

/// Mean trajectory at integer days `0..=horizon` as rows `[S, E, I, R, D]`.
#[pyfunction]
#[pyo3(signature = (params, schedule, init, horizon, step = 0.05))]
fn integrate(
    params: &ParameterVector,
    schedule: &InterventionSchedule,
    init: &StateVector,
    horizon: usize,
    step: f64,
) -> PyResult<Vec<[f64; 5]>> {
    let traj = Integrator::with_step(step)
        .map_err(value_err)?
        .integrate(&params.inner, &schedule.inner, &init.inner, horizon)
        .map_err(runtime_err)?;
    Ok(traj.states.iter().map(|x| x.as_array()).collect())
}

/// The model fitted to a case series. Without arguments this is the Qatar
/// analysis on the bundled data.
#[pyclass(name = "Model")]
pub struct Model {
    config: RunConfig,
    ctx: ModelContext,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (data_path = None, schedule = None, initial_exposed = None))]
    fn new(
        data_path: Option<PathBuf>,
        schedule: Option<InterventionSchedule>,
        initial_exposed: Option<f64>,
    ) -> PyResult<Self> {
        let mut config = RunConfig {
            data_path,
            ..RunConfig::default()
        };
        if let Some(s) = schedule {
            config.schedule.change_days = s.inner.change_days().to_vec();
            config.schedule.impulse_day = s.inner.impulse_day();
        }
        if let Some(e0) = initial_exposed {
            config.init.e = e0;
        }
        config.validate().map_err(value_err)?;
        let obs = config.observed().map_err(value_err)?;
        let ctx = config.context(obs).map_err(value_err)?;
        Ok(Self { config, ctx })
    }

    #[getter]
    fn train_len(&self) -> usize {
        self.ctx.obs.train_len
    }

    fn parameter_names(&self) -> Vec<String> {
        self.ctx.parameter_names()
    }

    /// Unnormalized log-posterior; `-inf` outside the support.
    fn log_posterior(&self, params: &ParameterVector) -> PyResult<f64> {
        self.ctx
            .log_posterior(&params.inner)
            .map(|lp| lp.value())
            .map_err(runtime_err)
    }

    /// Mode search, tuning and sampling. Returns the draws.
    #[pyo3(signature = (n_samples = 5000, n_burnin = 2000, seed = 20200229, n_starts = 8))]
    fn fit(&self, n_samples: usize, n_burnin: usize, seed: u64, n_starts: usize) -> PyResult<Samples> {
        let config = sampler::SamplerConfig {
            n_samples,
            n_burnin,
            seed,
            ..self.config.sampler.clone()
        };
        let options = fit::FitOptions {
            n_starts,
            ..self.config.fit.clone()
        };
        let start = self.config.start_point().map_err(value_err)?;
        let outcome = fit::fit(&self.ctx, &start, &config, &options).map_err(runtime_err)?;
        Ok(Samples {
            inner: outcome.samples,
        })
    }
}

#[pyclass(name = "Samples")]
pub struct Samples {
    inner: sampler::PosteriorSamples,
}

#[pymethods]
impl Samples {
    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.column_names.clone()
    }

    #[getter]
    fn draws(&self) -> Vec<Vec<f64>> {
        self.inner.draws.clone()
    }

    #[getter]
    fn log_post(&self) -> Vec<f64> {
        self.inner.log_post.clone()
    }

    #[getter]
    fn accept_rate(&self) -> f64 {
        self.inner.accept_rate
    }

    fn __len__(&self) -> usize {
        self.inner.n_samples()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner
            .column_by_name(name)
            .ok_or_else(|| value_err(format!("no column named {name}")))
    }

    /// Per-parameter mean, sd and quantiles keyed by parameter name.
    fn summarize<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let table = analysis::summarize(&self.inner).map_err(value_err)?;
        let out = PyDict::new(py);
        for row in &table.rows {
            let d = PyDict::new(py);
            d.set_item("mean", row.mean)?;
            d.set_item("sd", row.sd)?;
            d.set_item("q025", row.q025)?;
            d.set_item("q500", row.q500)?;
            d.set_item("q975", row.q975)?;
            out.set_item(&row.name, d)?;
        }
        Ok(out)
    }
}

#[pymodule]
fn pyseirdfit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ParameterVector>()?;
    m.add_class::<InterventionSchedule>()?;
    m.add_class::<StateVector>()?;
    m.add_class::<Model>()?;
    m.add_class::<Samples>()?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    Ok(())
}
