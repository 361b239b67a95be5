//! Python bindings for the grouped-sequential-training toolkit: task-family
//! generation, affinity probing, spectral grouping, heterogeneity checks,
//! and the scheduling regimes, exposed over plain Python types.

use gst_core::affinity::{
    gradient_distance as core_gradient_distance, probe_affinity_matrix, sum_identity_check,
    symmetrize as core_symmetrize, AffinityMatrix as CoreAffinity, ProbeConfig,
};
use gst_core::grouping::{
    partition_quality, spectral_cluster as core_spectral_cluster, GroupPartition, SpectralConfig,
};
use gst_core::harness::verify::{
    decomposition_suite, group_bounds_suite, sum_identity_suite, variance_bound_suite,
};
use gst_core::heterogeneity::{
    check_lemma2_bounds, check_variance_bound as core_check_variance_bound, decompose_variance,
    estimate_group_constants, HeterogeneityEstimate,
};
use gst_core::objective::{global_objective, group_objective};
use gst_core::scheduler::{
    compare_convergence, max_switch_loss_rise, run_protocol, stability_first_order, BatchMode,
    LrSchedule, OrderPolicy, RunTrace as CoreTrace, ScheduleKind, ScheduleProtocol, SgdConfig,
};
use gst_core::tasks::{
    default_probe_points, generate_nonlinear_family, generate_quadratic_family,
    HeterogeneityRecipe, NonlinearRecipe, Task, TaskFamily as CoreFamily,
};
use gst_core::vector::ParamVector;
use gst_core::SeededRng;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn err(e: gst_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<Py<PyAny>> {
    Ok(match value {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_pyobject(py)?.to_owned().unbind().into_any(),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.unbind().into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.unbind().into_any()
            }
        }
        serde_json::Value::String(s) => s.into_pyobject(py)?.unbind().into_any(),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.unbind().into_any()
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.unbind().into_any()
        }
    })
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let json = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &json)
}

fn vector(values: Vec<f64>) -> ParamVector {
    ParamVector::new(values)
}

/// A synthetic task family (quadratic or nonlinear).
#[pyclass(name = "TaskFamily")]
struct PyTaskFamily {
    family: CoreFamily,
    tasks: Vec<Task>,
}

impl PyTaskFamily {
    fn from_core(family: CoreFamily) -> PyResult<Self> {
        let tasks = family.tasks().map_err(err)?;
        Ok(Self { family, tasks })
    }
}

#[pymethods]
impl PyTaskFamily {
    #[getter]
    fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.family.param_dim()
    }

    /// Exact per-task losses at a parameter point.
    fn losses(&self, theta: Vec<f64>) -> Vec<f64> {
        use gst_core::Objective;
        let theta = vector(theta);
        self.tasks.iter().map(|t| t.eval(&theta)).collect()
    }

    /// Mean loss and exact mean gradient over all tasks.
    fn global_objective(&self, theta: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        let (loss, grad) = global_objective(&self.tasks, &vector(theta)).map_err(err)?;
        Ok((loss, grad.to_vec()))
    }

    /// Mean loss and gradient over one group of task indices.
    fn group_objective(&self, group: Vec<usize>, theta: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        let (loss, grad) = group_objective(&self.tasks, &group, &vector(theta)).map_err(err)?;
        Ok((loss, grad.to_vec()))
    }

    /// Default heterogeneity probe points (quadratic families only).
    fn probe_points(&self, count: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        match &self.family {
            CoreFamily::Quadratic(f) => Ok(default_probe_points(f, count, seed)
                .into_iter()
                .map(|p| p.to_vec())
                .collect()),
            CoreFamily::Nonlinear { .. } => Err(PyValueError::new_err(
                "probe_points is defined for quadratic families",
            )),
        }
    }

    fn mean_minimizer(&self) -> Vec<f64> {
        self.family.init_center().to_vec()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.family).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let family: CoreFamily =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Self::from_core(family)
    }

    fn __repr__(&self) -> String {
        format!("TaskFamily(num_tasks={}, dim={})", self.tasks.len(), self.family.param_dim())
    }
}

/// Pairwise task relationships (gradient distance or transferability).
#[pyclass(name = "AffinityMatrix", from_py_object)]
#[derive(Clone)]
struct PyAffinity {
    inner: CoreAffinity,
}

#[pymethods]
impl PyAffinity {
    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len())
            .map(|i| (0..self.inner.len()).map(|j| self.inner.values[[i, j]]).collect())
            .collect()
    }

    #[getter]
    fn symmetric(&self) -> bool {
        self.inner.symmetric
    }

    fn symmetrize(&self) -> Self {
        Self { inner: core_symmetrize(&self.inner) }
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn __repr__(&self) -> String {
        format!("AffinityMatrix(m={}, symmetric={})", self.inner.len(), self.inner.symmetric)
    }
}

/// Disjoint task groups with a scheduling order.
#[pyclass(name = "Partition", from_py_object)]
#[derive(Clone)]
struct PyPartition {
    inner: GroupPartition,
}

#[pymethods]
impl PyPartition {
    #[new]
    fn new(groups: Vec<Vec<usize>>) -> PyResult<Self> {
        let num_tasks = groups.iter().map(|g| g.len()).sum();
        Ok(Self { inner: GroupPartition::from_groups(&groups, num_tasks).map_err(err)? })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    fn groups(&self) -> Vec<Vec<usize>> {
        self.inner.groups()
    }

    #[getter]
    fn order(&self) -> Vec<usize> {
        self.inner.order().to_vec()
    }

    fn with_order(&self, order: Vec<usize>) -> PyResult<Self> {
        Ok(Self { inner: self.inner.with_order(order).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Partition(groups={:?}, order={:?})", self.inner.groups(), self.inner.order())
    }
}

/// Heterogeneity constants fitted on a probe set.
#[pyclass(name = "HeterogeneityEstimate", from_py_object)]
#[derive(Clone)]
struct PyEstimate {
    inner: HeterogeneityEstimate,
}

#[pymethods]
impl PyEstimate {
    #[getter]
    fn beta_sq(&self) -> f64 {
        self.inner.beta_sq()
    }
    #[getter]
    fn zeta_sq(&self) -> f64 {
        self.inner.zeta_sq()
    }
    #[getter]
    fn beta_g_sq(&self) -> f64 {
        self.inner.beta_g_sq()
    }
    #[getter]
    fn zeta_g_sq(&self) -> f64 {
        self.inner.zeta_g_sq()
    }
    #[getter]
    fn zeta_k_sq(&self) -> Vec<f64> {
        self.inner.zeta_k_sq()
    }
    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }
    #[getter]
    fn sigma_k(&self) -> Vec<f64> {
        self.inner.sigma_k.clone()
    }

    fn as_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }
}

/// One training run: instrumented rounds and the final parameter point.
#[pyclass(name = "RunTrace", from_py_object)]
#[derive(Clone)]
struct PyTrace {
    inner: CoreTrace,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn schedule(&self) -> String {
        self.inner.schedule.clone()
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[getter]
    fn diverged(&self) -> bool {
        self.inner.diverged
    }
    #[getter]
    fn budget(&self) -> u64 {
        self.inner.budget
    }

    fn grads_consumed(&self) -> Vec<u64> {
        self.inner.rounds.iter().map(|r| r.grads_consumed).collect()
    }

    fn c_of_r(&self) -> Vec<f64> {
        self.inner.rounds.iter().map(|r| r.c_of_r).collect()
    }

    fn per_task_losses(&self) -> Vec<Vec<f64>> {
        self.inner.rounds.iter().map(|r| r.per_task_loss.clone()).collect()
    }

    fn final_theta(&self) -> Vec<f64> {
        self.inner.final_theta.to_vec()
    }

    fn c_at_budget(&self, at_budget: u64) -> PyResult<f64> {
        self.inner.c_at_budget(at_budget).map_err(err)
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunTrace(schedule={}, seed={}, rounds={}, diverged={})",
            self.inner.schedule,
            self.inner.seed,
            self.inner.rounds.len(),
            self.inner.diverged
        )
    }
}

#[pyfunction]
#[pyo3(signature = (num_tasks, dim, num_latent_clusters, intra_cluster_spread,
    inter_cluster_spread, seed, curvature_jitter=0.0, noise_sigma=0.0,
    lambda_min=0.1, lambda_max=1.0))]
#[allow(clippy::too_many_arguments)]
fn quadratic_family(
    num_tasks: usize,
    dim: usize,
    num_latent_clusters: usize,
    intra_cluster_spread: f64,
    inter_cluster_spread: f64,
    seed: u64,
    curvature_jitter: f64,
    noise_sigma: f64,
    lambda_min: f64,
    lambda_max: f64,
) -> PyResult<PyTaskFamily> {
    let recipe = HeterogeneityRecipe {
        num_tasks,
        dim,
        num_latent_clusters,
        intra_cluster_spread,
        inter_cluster_spread,
        curvature_jitter,
        noise_sigma,
        lambda_min,
        lambda_max,
        seed,
    };
    let family = generate_quadratic_family(&recipe).map_err(err)?;
    PyTaskFamily::from_core(CoreFamily::Quadratic(family))
}

#[pyfunction]
#[pyo3(signature = (num_tasks, num_latent_clusters, input_dim, hidden_width,
    samples_per_task, minibatch, seed, intra_teacher_spread=0.05,
    inter_teacher_spread=1.0, intra_spread_overrides=None, label_noise=0.02))]
#[allow(clippy::too_many_arguments)]
fn nonlinear_family(
    num_tasks: usize,
    num_latent_clusters: usize,
    input_dim: usize,
    hidden_width: usize,
    samples_per_task: usize,
    minibatch: usize,
    seed: u64,
    intra_teacher_spread: f64,
    inter_teacher_spread: f64,
    intra_spread_overrides: Option<Vec<f64>>,
    label_noise: f64,
) -> PyResult<PyTaskFamily> {
    let recipe = NonlinearRecipe {
        num_tasks,
        num_latent_clusters,
        input_dim,
        hidden_width,
        samples_per_task,
        minibatch,
        intra_teacher_spread,
        inter_teacher_spread,
        intra_spread_overrides,
        label_noise,
        seed,
    };
    generate_nonlinear_family(&recipe).map_err(err)?;
    PyTaskFamily::from_core(CoreFamily::Nonlinear { recipe })
}

/// Squared distance between two tasks' exact gradients at a point.
#[pyfunction]
fn gradient_distance(
    family: &PyTaskFamily,
    task_m: usize,
    task_n: usize,
    theta: Vec<f64>,
) -> PyResult<f64> {
    let m = family.tasks.len();
    if task_m >= m || task_n >= m {
        return Err(PyValueError::new_err(format!("task index out of range for {m} tasks")));
    }
    core_gradient_distance(&family.tasks[task_m], &family.tasks[task_n], &vector(theta))
        .map_err(err)
}

/// Both sides of the pairwise-distance sum identity (ordered-pair double
/// sum versus M times the deviation sum), plus their ratio.
#[pyfunction]
fn sum_identity(
    py: Python<'_>,
    family: &PyTaskFamily,
    theta: Vec<f64>,
) -> PyResult<Py<PyAny>> {
    let report = sum_identity_check(&family.tasks, &vector(theta)).map_err(err)?;
    to_py(py, &report)
}

/// Gradient-distance affinity matrix from the probing procedure.
#[pyfunction]
#[pyo3(signature = (family, init, probe_steps, probe_lr, seed))]
fn probe_affinity(
    family: &PyTaskFamily,
    init: Vec<f64>,
    probe_steps: usize,
    probe_lr: f64,
    seed: u64,
) -> PyResult<PyAffinity> {
    let config = ProbeConfig::new(vector(init), probe_steps, probe_lr);
    let rng = SeededRng::new(seed, 0);
    let inner = probe_affinity_matrix(&family.tasks, &config, &rng).map_err(err)?;
    Ok(PyAffinity { inner })
}

/// Normalized spectral clustering of a symmetric distance matrix.
#[pyfunction]
#[pyo3(signature = (matrix, k, seed, kmeans_restarts=16))]
fn spectral_cluster(
    matrix: &PyAffinity,
    k: usize,
    seed: u64,
    kmeans_restarts: usize,
) -> PyResult<PyPartition> {
    let config = SpectralConfig { kmeans_restarts, ..SpectralConfig::new(k, seed) };
    let inner = core_spectral_cluster(&matrix.inner, &config).map_err(err)?;
    Ok(PyPartition { inner })
}

/// Mean affinity over same-group pairs versus cross-group pairs.
#[pyfunction]
fn partition_quality_report(
    py: Python<'_>,
    matrix: &PyAffinity,
    partition: &PyPartition,
) -> PyResult<Py<PyAny>> {
    let quality = partition_quality(&matrix.inner, &partition.inner).map_err(err)?;
    to_py(py, &quality)
}

/// Exact intra/inter decomposition of the global gradient variance.
#[pyfunction]
fn decompose(
    py: Python<'_>,
    family: &PyTaskFamily,
    partition: &PyPartition,
    theta: Vec<f64>,
) -> PyResult<Py<PyAny>> {
    let report =
        decompose_variance(&family.tasks, &partition.inner, &vector(theta)).map_err(err)?;
    to_py(py, &report)
}

/// Fits global, per-group, and inter-group heterogeneity constants.
#[pyfunction]
fn estimate_constants(
    family: &PyTaskFamily,
    partition: &PyPartition,
    probe_points: Vec<Vec<f64>>,
) -> PyResult<PyEstimate> {
    let points: Vec<ParamVector> = probe_points.into_iter().map(ParamVector::new).collect();
    let inner =
        estimate_group_constants(&family.tasks, &partition.inner, &points).map_err(err)?;
    Ok(PyEstimate { inner })
}

/// Inter-group bound check: constants within M/(K*M_min) of the global ones.
#[pyfunction]
fn check_group_bounds(
    py: Python<'_>,
    estimate: &PyEstimate,
    partition: &PyPartition,
) -> PyResult<Py<PyAny>> {
    let report = check_lemma2_bounds(&estimate.inner, &partition.inner).map_err(err)?;
    to_py(py, &report)
}

/// Monte-Carlo group variance versus its analytic bound.
#[pyfunction]
#[pyo3(signature = (family, group, theta, num_draws, seed))]
fn check_variance_bound(
    py: Python<'_>,
    family: &PyTaskFamily,
    group: Vec<usize>,
    theta: Vec<f64>,
    num_draws: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let mut rng = SeededRng::new(seed, 0);
    let report =
        core_check_variance_bound(&family.tasks, &group, &vector(theta), num_draws, &mut rng)
            .map_err(err)?;
    to_py(py, &report)
}

/// Groups ordered by ascending intra-group zeta.
#[pyfunction]
fn stability_order(partition: &PyPartition, estimate: &PyEstimate) -> PyResult<PyPartition> {
    let inner = stability_first_order(&partition.inner, &estimate.inner).map_err(err)?;
    Ok(PyPartition { inner })
}

/// Runs one scheduling regime. `kind` is one of `parallel`, `sequential`,
/// `strict-cycle-gst`, `progressive-gst`, `reverse-progressive-gst`,
/// `independent`. Returns one trace per run (several for `independent`).
#[pyfunction]
#[pyo3(signature = (family, kind, theta0, budget, lr, seed, partition=None,
    estimate=None, batch="single_draw", order_policy="given-order",
    num_cycles=5, instrument_points=200, warmup_cosine=None))]
#[allow(clippy::too_many_arguments)]
fn run_schedule(
    family: &PyTaskFamily,
    kind: &str,
    theta0: Vec<f64>,
    budget: u64,
    lr: f64,
    seed: u64,
    partition: Option<&PyPartition>,
    estimate: Option<&PyEstimate>,
    batch: &str,
    order_policy: &str,
    num_cycles: usize,
    instrument_points: usize,
    warmup_cosine: Option<(f64, f64)>,
) -> PyResult<Vec<PyTrace>> {
    let kind = match kind {
        "parallel" => ScheduleKind::Parallel,
        "sequential" => ScheduleKind::Sequential,
        "strict-cycle-gst" => ScheduleKind::StrictCycleGst,
        "progressive-gst" => ScheduleKind::ProgressiveGst,
        "reverse-progressive-gst" => ScheduleKind::ReverseProgressiveGst,
        "independent" => ScheduleKind::Independent,
        other => return Err(PyValueError::new_err(format!("unknown schedule kind `{other}`"))),
    };
    let order_policy = match order_policy {
        "given-order" => OrderPolicy::GivenOrder,
        "stability-first" => OrderPolicy::StabilityFirst,
        "reverse" => OrderPolicy::Reverse,
        other => return Err(PyValueError::new_err(format!("unknown order policy `{other}`"))),
    };
    let batch = match batch {
        "single_draw" => BatchMode::SingleDraw,
        "per_task_average" => BatchMode::PerTaskAverage,
        other => return Err(PyValueError::new_err(format!("unknown batch mode `{other}`"))),
    };
    let lr_schedule = match warmup_cosine {
        Some((min, warmup_frac)) => LrSchedule::WarmupCosine { peak: lr, min, warmup_frac },
        None => LrSchedule::Constant(lr),
    };
    let protocol = ScheduleProtocol {
        kind,
        label: None,
        order_policy,
        num_cycles,
        task_order: None,
    };
    let config = SgdConfig { lr: lr_schedule, batch, instrument_points };
    let rng = SeededRng::new(seed, 0);
    let traces = run_protocol(
        &family.tasks,
        &protocol,
        partition.map(|p| &p.inner),
        estimate.map(|e| &e.inner),
        &vector(theta0),
        &config,
        budget,
        &rng,
    )
    .map_err(err)?;
    Ok(traces.into_iter().map(|inner| PyTrace { inner }).collect())
}

/// Ranks traces by C(R) at a common budget; returns the ranking as a dict.
#[pyfunction]
fn compare(py: Python<'_>, traces: Vec<PyTrace>, at_budget: u64) -> PyResult<Py<PyAny>> {
    let inner: Vec<CoreTrace> = traces.into_iter().map(|t| t.inner).collect();
    let ranking = compare_convergence(&inner, at_budget).map_err(err)?;
    to_py(py, &ranking)
}

/// Largest post-switch rise of one group's mean loss in a trace.
#[pyfunction]
fn switch_loss_rise(trace: &PyTrace, partition: &PyPartition, group: usize) -> PyResult<f64> {
    max_switch_loss_rise(&trace.inner, &partition.inner, group).map_err(err)
}

/// Runs the four verification suites and returns their reports.
#[pyfunction]
#[pyo3(signature = (seed=7, decomposition_instances=50, sum_identity_instances=50,
    group_bound_instances=20, variance_bound_instances=8, variance_draws=4000))]
fn verify_suites(
    py: Python<'_>,
    seed: u64,
    decomposition_instances: usize,
    sum_identity_instances: usize,
    group_bound_instances: usize,
    variance_bound_instances: usize,
    variance_draws: usize,
) -> PyResult<Py<PyAny>> {
    let dict = PyDict::new(py);
    let d = decomposition_suite(decomposition_instances, seed).map_err(err)?;
    let s = sum_identity_suite(sum_identity_instances, seed).map_err(err)?;
    let g = group_bounds_suite(group_bound_instances, seed).map_err(err)?;
    let v = variance_bound_suite(variance_bound_instances, variance_draws, seed).map_err(err)?;
    let passed = d.passed && s.passed && g.passed && v.passed;
    dict.set_item("decomposition", to_py(py, &d)?)?;
    dict.set_item("sum_identity", to_py(py, &s)?)?;
    dict.set_item("group_bounds", to_py(py, &g)?)?;
    dict.set_item("variance_bound", to_py(py, &v)?)?;
    dict.set_item("passed", passed)?;
    Ok(dict.unbind().into_any())
}

#[pymodule]
fn gst_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTaskFamily>()?;
    m.add_class::<PyAffinity>()?;
    m.add_class::<PyPartition>()?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(quadratic_family, m)?)?;
    m.add_function(wrap_pyfunction!(nonlinear_family, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_distance, m)?)?;
    m.add_function(wrap_pyfunction!(sum_identity, m)?)?;
    m.add_function(wrap_pyfunction!(probe_affinity, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_cluster, m)?)?;
    m.add_function(wrap_pyfunction!(partition_quality_report, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_constants, m)?)?;
    m.add_function(wrap_pyfunction!(check_group_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(check_variance_bound, m)?)?;
    m.add_function(wrap_pyfunction!(stability_order, m)?)?;
    m.add_function(wrap_pyfunction!(run_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(switch_loss_rise, m)?)?;
    m.add_function(wrap_pyfunction!(verify_suites, m)?)?;
    Ok(())
}
