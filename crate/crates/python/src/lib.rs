//! Python module `lens`. Models, schemas and causal models are passed as
//! JSON text or as the equivalent Python objects; results come back as
//! plain dicts and lists.

pub mod api;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyString;

use api::{BasisOptions, Data, Problem};
use lens_core::causation::ShapleyMode;

create_exception!(lens, LensError, PyException, "Raised for any failed explanation run; the message starts with the error kind.");

fn err(e: lens_core::Error) -> PyErr {
    LensError::new_err(format!("{}: {e}", e.kind()))
}

fn json_text(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.cast::<PyString>() {
        return Ok(s.to_str()?.to_owned());
    }
    obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()
}

fn from_json(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn data_arg(obj: &Bound<'_, PyAny>, label_column: Option<String>) -> PyResult<Data> {
    if let Ok(path) = obj.extract::<String>() {
        return Ok(Data::Csv { path, label_column });
    }
    Ok(Data::Rows(obj.extract()?))
}

#[allow(clippy::too_many_arguments)]
fn options(
    defaults: BasisOptions,
    context: Option<String>,
    max_target_cardinality: Option<usize>,
    include_empty_target_set: bool,
    space: Option<String>,
    space_max_cardinality: Option<usize>,
    containment: bool,
    order: Option<String>,
) -> BasisOptions {
    BasisOptions {
        context: context.unwrap_or(defaults.context),
        max_target_cardinality,
        include_empty_target_set,
        space: space.unwrap_or(defaults.space),
        space_max_cardinality,
        containment,
        order: order.unwrap_or(defaults.order),
    }
}

/// Predictions of a built-in model on rows of numbers.
#[pyfunction]
fn predict(py: Python<'_>, model: &Bound<'_, PyAny>, rows: Vec<Vec<f64>>) -> PyResult<Vec<u32>> {
    let model = json_text(model)?;
    let labels = py.detach(|| api::predict(&model, &rows)).map_err(err)?;
    Ok(labels.into_iter().map(u32::from).collect())
}

/// Minimal sufficient factors for the prediction on `input`, with their
/// cumulative probability of necessity.
#[pyfunction]
#[pyo3(signature = (
    model, data, input, tau, *, outcome=None, schema=None, label_column=None, context=None,
    max_target_cardinality=None, include_empty_target_set=true, space=None, space_max_cardinality=None,
    containment=false, order=None, estimation="exact", samples=10_000, seed=0, alpha=None
))]
#[allow(clippy::too_many_arguments)]
fn explain(
    py: Python<'_>,
    model: &Bound<'_, PyAny>,
    data: &Bound<'_, PyAny>,
    input: Vec<f64>,
    tau: f64,
    outcome: Option<u8>,
    schema: Option<&Bound<'_, PyAny>>,
    label_column: Option<String>,
    context: Option<String>,
    max_target_cardinality: Option<usize>,
    include_empty_target_set: bool,
    space: Option<String>,
    space_max_cardinality: Option<usize>,
    containment: bool,
    order: Option<String>,
    estimation: &str,
    samples: usize,
    seed: u64,
    alpha: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let model = json_text(model)?;
    let schema = schema.map(json_text).transpose()?;
    let data = data_arg(data, label_column)?;
    let opts = options(
        BasisOptions::explain_defaults(),
        context,
        max_target_cardinality,
        include_empty_target_set,
        space,
        space_max_cardinality,
        containment,
        order,
    );
    let cfg = api::estimation(estimation, samples, seed, alpha).map_err(err)?;
    let problem = Problem {
        model: &model,
        data: &data,
        schema: schema.as_deref(),
        input: &input,
    };
    let out = py.detach(|| api::explain(&problem, tau, outcome, &opts, cfg)).map_err(err)?;
    from_json(py, &out)
}

/// Factor count and cumulative necessity at each threshold of `taus`.
#[pyfunction]
#[pyo3(signature = (model, data, input, taus, *, outcome=None, schema=None, estimation="exact", samples=10_000, seed=0))]
#[allow(clippy::too_many_arguments)]
fn sweep_tau(
    py: Python<'_>,
    model: &Bound<'_, PyAny>,
    data: &Bound<'_, PyAny>,
    input: Vec<f64>,
    taus: Vec<f64>,
    outcome: Option<u8>,
    schema: Option<&Bound<'_, PyAny>>,
    estimation: &str,
    samples: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let model = json_text(model)?;
    let schema = schema.map(json_text).transpose()?;
    let data = data_arg(data, None)?;
    let cfg = api::estimation(estimation, samples, seed, None).map_err(err)?;
    let problem = Problem {
        model: &model,
        data: &data,
        schema: schema.as_deref(),
        input: &input,
    };
    let opts = BasisOptions::explain_defaults();
    let out = py.detach(|| api::sweep_tau(&problem, &taus, outcome, &opts, cfg)).map_err(err)?;
    from_json(py, &out)
}

/// Shapley values against the rows of `data`, exact or by sampled permutations.
#[pyfunction]
#[pyo3(signature = (model, data, input, *, permutations=None, seed=0, verbose=false, schema=None))]
#[allow(clippy::too_many_arguments)]
fn shapley(
    py: Python<'_>,
    model: &Bound<'_, PyAny>,
    data: &Bound<'_, PyAny>,
    input: Vec<f64>,
    permutations: Option<usize>,
    seed: u64,
    verbose: bool,
    schema: Option<&Bound<'_, PyAny>>,
) -> PyResult<Py<PyAny>> {
    let model = json_text(model)?;
    let schema = schema.map(json_text).transpose()?;
    let data = data_arg(data, None)?;
    let mode = match permutations {
        None => ShapleyMode::Exact,
        Some(permutations) => ShapleyMode::Permutation { permutations, seed },
    };
    let problem = Problem {
        model: &model,
        data: &data,
        schema: schema.as_deref(),
        input: &input,
    };
    let out = py.detach(|| api::shapley(&problem, mode, verbose)).map_err(err)?;
    from_json(py, &out)
}

/// Cheapest intervention that flips the prediction with sufficiency at least `tau`.
#[pyfunction]
#[pyo3(signature = (model, data, input, tau, *, schema=None, order=None, space_max_cardinality=None, estimation="exact", samples=10_000, seed=0))]
#[allow(clippy::too_many_arguments)]
fn recourse(
    py: Python<'_>,
    model: &Bound<'_, PyAny>,
    data: &Bound<'_, PyAny>,
    input: Vec<f64>,
    tau: f64,
    schema: Option<&Bound<'_, PyAny>>,
    order: Option<String>,
    space_max_cardinality: Option<usize>,
    estimation: &str,
    samples: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let model = json_text(model)?;
    let schema = schema.map(json_text).transpose()?;
    let data = data_arg(data, None)?;
    let opts = options(
        BasisOptions::recourse_defaults(),
        None,
        None,
        true,
        None,
        space_max_cardinality,
        false,
        order,
    );
    let cfg = api::estimation(estimation, samples, seed, None).map_err(err)?;
    let problem = Problem {
        model: &model,
        data: &data,
        schema: schema.as_deref(),
        input: &input,
    };
    let out = py.detach(|| api::recourse(&problem, tau, &opts, cfg)).map_err(err)?;
    from_json(py, &out)
}

/// Probabilities of sufficiency and necessity of `cause = cause_value`
/// for `effect = effect_value`.
#[pyfunction]
#[pyo3(signature = (scm, cause, effect, *, cause_value=1, effect_value=1, estimation="exact", samples=10_000, seed=0))]
#[allow(clippy::too_many_arguments)]
fn pearl(
    py: Python<'_>,
    scm: &Bound<'_, PyAny>,
    cause: &str,
    effect: &str,
    cause_value: u8,
    effect_value: u8,
    estimation: &str,
    samples: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let scm = json_text(scm)?;
    let cfg = api::estimation(estimation, samples, seed, None).map_err(err)?;
    let out = py
        .detach(|| api::pearl(&scm, cause, effect, cause_value, effect_value, cfg))
        .map_err(err)?;
    from_json(py, &out)
}

/// One-sided binomial test of `PS >= tau`: returns `(p_value, reject)`.
#[pyfunction]
fn binomial_tau_test(successes: u64, trials: u64, tau: f64, alpha: f64) -> PyResult<(f64, bool)> {
    api::binomial_test(successes, trials, tau, alpha).map_err(err)
}

#[pymodule]
fn lens(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LensError", m.py().get_type::<LensError>())?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(explain, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_tau, m)?)?;
    m.add_function(wrap_pyfunction!(shapley, m)?)?;
    m.add_function(wrap_pyfunction!(recourse, m)?)?;
    m.add_function(wrap_pyfunction!(pearl, m)?)?;
    m.add_function(wrap_pyfunction!(binomial_tau_test, m)?)?;
    Ok(())
}
