//! Python bindings: datasets, problems, partitions, training runs, rate
//! bounds and the property suite.

use std::str::FromStr;

use cocoa::engine::{self, tcp, RoundMetrics};
use cocoa::rates::{self, RateInputs};
use cocoa::subproblem::{self, TheoryParams};
use cocoa::verify::{self, InstanceGenerator, SuiteOptions};
use cocoa::{Dataset, Loss, Partition, PartitionStrategy, Problem, RunConfig, SigmaPrime, SolverConfig, SolverKind};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: cocoa::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: FromStr<Err = cocoa::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

#[pyclass(name = "Dataset", module = "cocoa_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Dense columns: `columns[i]` is example `i`.
    #[new]
    fn new(columns: Vec<Vec<f64>>, labels: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: Dataset::from_dense_columns(&columns, labels).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_libsvm(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: cocoa::data::read_libsvm_file(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn parse_libsvm(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: cocoa::data::parse_libsvm_str(text).map_err(err)?,
        })
    }

    fn to_libsvm(&self) -> String {
        self.inner.to_libsvm_string()
    }

    fn normalize(&self) -> Self {
        Self {
            inner: self.inner.normalize(),
        }
    }

    fn with_n_features(&self, d: usize) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.clone().with_n_features(d).map_err(err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    #[getter]
    fn labels(&self) -> Vec<f64> {
        self.inner.labels().to_vec()
    }

    /// `X alpha`
    fn mul_vec(&self, alpha: Vec<f64>) -> PyResult<Vec<f64>> {
        if alpha.len() != self.inner.n() {
            return Err(PyValueError::new_err("alpha must have length n"));
        }
        Ok(self.inner.mul_vec(&alpha))
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, d={}, nnz={})", self.inner.n(), self.inner.d(), self.inner.nnz())
    }
}

#[pyclass(name = "Partition", module = "cocoa_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyPartition {
    inner: Partition,
}

#[pymethods]
impl PyPartition {
    #[new]
    #[pyo3(signature = (n, machines, strategy = "random", seed = 0))]
    fn new(n: usize, machines: usize, strategy: &str, seed: u64) -> PyResult<Self> {
        let strategy: PartitionStrategy = parse(strategy)?;
        Ok(Self {
            inner: Partition::new(n, machines, strategy, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_blocks(n: usize, blocks: Vec<Vec<usize>>) -> PyResult<Self> {
        Ok(Self {
            inner: Partition::from_blocks(n, blocks).map_err(err)?,
        })
    }

    #[getter]
    fn blocks(&self) -> Vec<Vec<usize>> {
        self.inner.blocks().to_vec()
    }

    #[getter]
    fn machines(&self) -> usize {
        self.inner.num_blocks()
    }

    fn __len__(&self) -> usize {
        self.inner.num_blocks()
    }
}

#[pyclass(name = "Problem", module = "cocoa_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyProblem {
    inner: Problem,
}

impl PyProblem {
    fn check_len(&self, alpha: &[f64]) -> PyResult<()> {
        if alpha.len() != self.inner.n() {
            return Err(PyValueError::new_err(format!(
                "alpha has length {}, expected {}",
                alpha.len(),
                self.inner.n()
            )));
        }
        Ok(())
    }
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (data, loss, lam))]
    fn new(data: &PyDataset, loss: &str, lam: f64) -> PyResult<Self> {
        let loss: Loss = parse(loss)?;
        Ok(Self {
            inner: Problem::new(data.inner.clone(), loss, lam).map_err(err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda()
    }

    #[getter]
    fn loss(&self) -> &'static str {
        self.inner.loss().name()
    }

    #[getter]
    fn data(&self) -> PyDataset {
        PyDataset {
            inner: self.inner.data().clone(),
        }
    }

    /// `v = X alpha / (lambda n)`
    fn shared_vector(&self, alpha: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_len(&alpha)?;
        Ok(self.inner.shared_vector(&alpha))
    }

    fn primal_value(&self, w: Vec<f64>) -> PyResult<f64> {
        if w.len() != self.inner.d() {
            return Err(PyValueError::new_err("w must have length d"));
        }
        Ok(self.inner.primal_value(&w))
    }

    fn dual_value(&self, alpha: Vec<f64>) -> PyResult<f64> {
        self.check_len(&alpha)?;
        self.inner.dual_value_at(&alpha).map_err(err)
    }

    /// `(P(w(alpha)), D(alpha), gap)`
    fn objectives(&self, alpha: Vec<f64>) -> PyResult<(f64, f64, f64)> {
        self.check_len(&alpha)?;
        let state = self.inner.state(alpha).map_err(err)?;
        self.inner.objectives(&state).map_err(err)
    }

    fn duality_gap(&self, alpha: Vec<f64>) -> PyResult<f64> {
        Ok(self.objectives(alpha)?.2)
    }

    fn primal_from_dual(&self, alpha: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_len(&alpha)?;
        let state = self.inner.state(alpha).map_err(err)?;
        Ok(self.inner.primal_from_dual(&state))
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(loss={}, lambda={}, n={}, d={})",
            self.inner.loss(),
            self.inner.lambda(),
            self.inner.n(),
            self.inner.d()
        )
    }
}

fn metrics_dict<'py>(py: Python<'py>, m: &RoundMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("round", m.round)?;
    d.set_item("elapsed_ms", m.elapsed_ms)?;
    d.set_item("primal", m.primal)?;
    d.set_item("dual", m.dual)?;
    d.set_item("gap", m.gap)?;
    d.set_item("bytes_per_machine", m.bytes_per_machine)?;
    d.set_item("local_iters_total", m.local_iters_total)?;
    Ok(d)
}

#[pyclass(name = "RunResult", module = "cocoa_py", frozen)]
pub struct PyRunResult {
    #[pyo3(get)]
    alpha: Vec<f64>,
    #[pyo3(get)]
    v: Vec<f64>,
    #[pyo3(get)]
    termination: String,
    #[pyo3(get)]
    diverged: bool,
    #[pyo3(get)]
    sigma_prime: f64,
    #[pyo3(get)]
    rounds_run: usize,
    rows: Vec<RoundMetrics>,
}

#[pymethods]
impl PyRunResult {
    /// `w = v` for the squared-norm regularizer.
    #[getter]
    fn w(&self) -> Vec<f64> {
        self.v.clone()
    }

    #[getter]
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.rows.iter().map(|m| metrics_dict(py, m)).collect()
    }

    #[getter]
    fn final_gap(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |m| m.gap)
    }

    fn write_metrics(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path)?;
        engine::write_metrics_csv(std::io::BufWriter::new(file), &self.rows).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("RunResult({}, final_gap={:e})", self.termination, self.final_gap())
    }
}

/// `nu` is a number in (0, 1], `"add"` or `"avg"`; `sigma_prime=None` means
/// `nu K` (or the value implied by `"add"`/`"avg"`).
#[pyfunction]
#[pyo3(signature = (
    problem, partition, nu = None, sigma_prime = None, solver = "cd", local_iters = None,
    rounds = 100, gap_tol = 0.0, gap_every = 1, seed = 0, record_time = true, transport = "inproc"
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    problem: &PyProblem,
    partition: &PyPartition,
    nu: Option<&Bound<'_, PyAny>>,
    sigma_prime: Option<f64>,
    solver: &str,
    local_iters: Option<usize>,
    rounds: usize,
    gap_tol: f64,
    gap_every: usize,
    seed: u64,
    record_time: bool,
    transport: &str,
) -> PyResult<PyRunResult> {
    let k = partition.inner.num_blocks();
    let kf = k as f64;
    let (nu, default_sp) = match nu.map(|v| v.extract::<String>()) {
        None => (1.0, SigmaPrime::Manual(kf)),
        Some(Ok(s)) => match s.as_str() {
            "add" => (1.0, SigmaPrime::Manual(kf)),
            "avg" => (1.0 / kf, SigmaPrime::Manual(1.0)),
            other => return Err(PyValueError::new_err(format!("nu must be a number, 'add' or 'avg', got {other:?}"))),
        },
        Some(Err(_)) => {
            let v: f64 = nu.map(|v| v.extract()).transpose()?.unwrap_or(1.0);
            if !(v > 0.0 && v <= 1.0) {
                return Err(PyValueError::new_err(format!("nu must lie in (0, 1], got {v}")));
            }
            (v, SigmaPrime::Auto)
        }
    };
    let kind: SolverKind = parse(solver)?;
    let h = local_iters.unwrap_or_else(|| partition.inner.sizes().into_iter().max().unwrap_or(1));
    let mut cfg = RunConfig::new(k, SolverConfig::new(kind, h));
    cfg.nu = nu;
    cfg.sigma_prime = sigma_prime.map_or(default_sp, SigmaPrime::Manual);
    cfg.rounds = rounds;
    cfg.gap_tol = gap_tol;
    cfg.gap_every = gap_every;
    cfg.seed = seed;
    cfg.record_time = record_time;
    let (p, part) = (&problem.inner, &partition.inner);
    let report = match transport {
        "inproc" => py.detach(|| engine::run(p, part, &cfg)),
        "tcp" => py.detach(|| tcp::run_loopback(p, part, &cfg)),
        other => return Err(PyValueError::new_err(format!("unknown transport {other:?}"))),
    }
    .map_err(err)?;
    Ok(PyRunResult {
        diverged: report.diverged(),
        termination: report.termination.to_string(),
        sigma_prime: report.sigma_prime,
        rounds_run: report.rounds_run,
        alpha: report.state.alpha,
        v: report.state.v,
        rows: report.metrics,
    })
}

#[pyfunction]
fn sigma_prime_min(data: &PyDataset, partition: &PyPartition, nu: f64) -> PyResult<f64> {
    subproblem::sigma_prime_min(&data.inner, &partition.inner, nu).map_err(err)
}

#[pyfunction]
fn safe_sigma_prime(nu: f64, machines: usize) -> PyResult<f64> {
    subproblem::safe_sigma_prime(nu, machines).map_err(err)
}

/// `sigma_k` per block, `sigma_max` and `sigma = sum_k sigma_k |P_k|`.
#[pyfunction]
#[pyo3(signature = (data, partition, seed = 0))]
fn theory_params<'py>(py: Python<'py>, data: &PyDataset, partition: &PyPartition, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let t = TheoryParams::compute(&data.inner, &partition.inner, None, seed);
    let d = PyDict::new(py);
    d.set_item("sigma_k", t.sigma_k)?;
    d.set_item("sigma_max", t.sigma_max)?;
    d.set_item("sigma", t.sigma)?;
    Ok(d)
}

/// Every applicable bound for the given inputs, keyed like the `rates`
/// command.
#[pyfunction]
#[pyo3(signature = (
    lam, n, sigma_max, sigma_prime, nu = 1.0, gamma = 0.0, sigma = None, theta = 0.0,
    lipschitz = None, eps_dual = 1e-3, eps_gap = 1e-3, initial_dual_subopt = 1.0, machines = None
))]
#[allow(clippy::too_many_arguments)]
fn rate_bounds<'py>(
    py: Python<'py>,
    lam: f64,
    n: usize,
    sigma_max: f64,
    sigma_prime: f64,
    nu: f64,
    gamma: f64,
    sigma: Option<f64>,
    theta: f64,
    lipschitz: Option<f64>,
    eps_dual: f64,
    eps_gap: f64,
    initial_dual_subopt: f64,
    machines: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = RateInputs {
        lambda: lam,
        gamma,
        n,
        sigma_max,
        sigma: sigma.unwrap_or(n as f64 * sigma_max),
        sigma_prime,
        nu,
        theta,
        lipschitz: lipschitz.unwrap_or(0.0),
        epsilon_dual: eps_dual,
        epsilon_gap: eps_gap,
        initial_dual_suboptimality: initial_dual_subopt,
    };
    let d = PyDict::new(py);
    if gamma > 0.0 {
        d.set_item("smooth_factor", rates::smooth_factor(&r).map_err(err)?)?;
        d.set_item("geometric_decrease_factor", rates::geometric_decrease_factor(&r).map_err(err)?)?;
        d.set_item("smooth_rounds_dual", rates::smooth_rounds_dual(&r).map_err(err)?)?;
        d.set_item("smooth_rounds_gap", rates::smooth_rounds_gap(&r).map_err(err)?)?;
        if let Some(k) = machines {
            let (add, avg) = rates::adding_vs_averaging(&r, k).map_err(err)?;
            d.set_item("adding_rounds_gap", add)?;
            d.set_item("averaging_rounds_gap", avg)?;
        }
    }
    if lipschitz.is_some() {
        let t = rates::lipschitz_rounds(&r).map_err(err)?;
        d.set_item("lipschitz_t0", t.t0)?;
        d.set_item("lipschitz_warmup", t.warmup)?;
        d.set_item("lipschitz_total", t.total)?;
    }
    Ok(d)
}

/// Random instance with known structure: `(problem, partition)`.
#[pyfunction]
#[pyo3(signature = (n, d, machines, loss = "quadratic", lam = 1e-3, seed = 0, density = 0.6, correlation = 0.0))]
#[allow(clippy::too_many_arguments)]
fn generate_instance(
    n: usize,
    d: usize,
    machines: usize,
    loss: &str,
    lam: f64,
    seed: u64,
    density: f64,
    correlation: f64,
) -> PyResult<(PyProblem, PyPartition)> {
    let loss: Loss = parse(loss)?;
    let inst = InstanceGenerator::new(n, d, machines, loss, lam)
        .seed(seed)
        .density(density)
        .correlated(correlation)
        .try_generate()
        .map_err(err)?;
    Ok((
        PyProblem { inner: inst.problem },
        PyPartition {
            inner: inst.partition,
        },
    ))
}

/// `(passed, summary)` of the randomized property suite.
#[pyfunction]
#[pyo3(signature = (seed = 0, trials = 100))]
fn property_suite(py: Python<'_>, seed: u64, trials: usize) -> (bool, String) {
    let report = py.detach(|| verify::property_suite(&SuiteOptions::new(seed, trials)));
    (report.passed(), report.summary())
}

#[pymodule]
pub fn cocoa_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyPartition>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(sigma_prime_min, m)?)?;
    m.add_function(wrap_pyfunction!(safe_sigma_prime, m)?)?;
    m.add_function(wrap_pyfunction!(theory_params, m)?)?;
    m.add_function(wrap_pyfunction!(rate_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(generate_instance, m)?)?;
    m.add_function(wrap_pyfunction!(property_suite, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
