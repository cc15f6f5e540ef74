//! Python bindings: SPD kernels, trajectory distance, ranking and metrics, and
//! the simulate → decode → rank pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use trajpref::classify::{pairwise_from_statement, Source};
use trajpref::eval::{kendall_tau as tau_b, ndcg_at_k as ndcg, PreferenceTask};
use trajpref::pipeline::{decode_session, rank_session, Decoded, RankOutput, RunConfig};
use trajpref::rank::{borda, borda_conf, ComparisonSet, RankMethod, RankedComparison, Ranking};
use trajpref::signal::Slot;
use trajpref::spd::{self, SpdMatrix};
use trajpref::synth::{gen_session, read_bundle, write_bundle, Session};
use trajpref::trajectory::{distance, Trajectory, Waypoint};
use trajpref::{Error, TrajId};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        Error::Parameter(_) | Error::Input(_) | Error::DimensionMismatch { .. } | Error::Format(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let m = rows.first().map_or(0, Vec::len);
    if m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[pyclass(name = "SpdMatrix", module = "trajpref_py", frozen)]
struct PySpd {
    inner: SpdMatrix,
}

#[pymethods]
impl PySpd {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = SpdMatrix::new(rows_to_matrix(&rows)?).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Matrix exponential of a symmetric matrix.
    #[staticmethod]
    fn exp(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = spd::matrix_exp(&rows_to_matrix(&rows)?).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.as_matrix())
    }

    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().iter().copied().collect()
    }

    /// Principal matrix logarithm, as a symmetric matrix.
    fn log(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix_to_rows(&spd::matrix_log(&self.inner).map_err(py_err)?))
    }

    /// Upper-triangle tangent vector at `reference`.
    fn tangent(&self, reference: &PySpd) -> PyResult<Vec<f64>> {
        Ok(spd::tangent_project(&self.inner, &reference.inner).map_err(py_err)?.into_values())
    }

    fn __repr__(&self) -> String {
        format!("SpdMatrix(dim={})", self.inner.dim())
    }
}

/// Shrinkage covariance of a `channels × samples` block given as rows.
#[pyfunction]
fn ledoit_wolf(rows: Vec<Vec<f64>>) -> PyResult<PySpd> {
    let inner = spd::ledoit_wolf_cov(&rows_to_matrix(&rows)?).map_err(py_err)?;
    Ok(PySpd { inner })
}

#[pyfunction]
#[pyo3(signature = (matrices, tol = spd::DEFAULT_MEAN_TOL, max_iter = spd::DEFAULT_MEAN_MAX_ITER))]
fn frechet_mean(matrices: Vec<PyRef<'_, PySpd>>, tol: f64, max_iter: usize) -> PyResult<PySpd> {
    let mats: Vec<SpdMatrix> = matrices.iter().map(|m| m.inner.clone()).collect();
    let inner = spd::frechet_mean(&mats, tol, max_iter).map_err(py_err)?;
    Ok(PySpd { inner })
}

#[pyclass(name = "Trajectory", module = "trajpref_py", frozen)]
struct PyTrajectory {
    inner: Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[new]
    #[pyo3(signature = (id, times, positions, joints = None, env_id = "env"))]
    fn new(
        id: TrajId,
        times: Vec<f64>,
        positions: Vec<[f64; 3]>,
        joints: Option<Vec<Vec<f64>>>,
        env_id: &str,
    ) -> PyResult<Self> {
        if positions.len() != times.len() || joints.as_ref().is_some_and(|j| j.len() != times.len()) {
            return Err(PyValueError::new_err("times, positions and joints must have equal length"));
        }
        let wps = times
            .iter()
            .enumerate()
            .map(|(k, &t)| Waypoint::at(t, positions[k], joints.as_ref().map_or_else(Vec::new, |j| j[k].clone())))
            .collect();
        let inner = Trajectory::new(id, env_id, wps).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn id(&self) -> TrajId {
        self.inner.id()
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration()
    }

    /// Time-normalized integrated end-effector distance.
    fn distance(&self, other: &PyTrajectory) -> PyResult<f64> {
        distance(&self.inner, &other.inner).map_err(py_err)
    }
}

fn parse_source(name: &str) -> PyResult<Source> {
    Source::ALL
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown source {name:?}")))
}

fn slot_number(s: Slot) -> u8 {
    match s {
        Slot::First => 1,
        Slot::Second => 2,
    }
}

fn ranked_pairs(r: &Ranking) -> Vec<(TrajId, f64)> {
    r.order.iter().map(|id| (*id, r.scores[id])).collect()
}

/// Rank from raw verdicts `(comparison, first, second, preferred_slot, confidence)`,
/// where `confidence` is the probability that the preferred slot is better.
/// Returns `(id, score)` best first.
#[pyfunction]
#[pyo3(signature = (comparisons, method = "borda", universe = None))]
fn rank_comparisons(
    comparisons: Vec<(u32, TrajId, TrajId, u8, f64)>,
    method: &str,
    universe: Option<Vec<TrajId>>,
) -> PyResult<Vec<(TrajId, f64)>> {
    let method: RankMethod = method.parse().map_err(py_err)?;
    let mut ids: BTreeSet<TrajId> = universe.unwrap_or_default().into_iter().collect();
    let mut comps = Vec::with_capacity(comparisons.len());
    for (j, a, b, preferred, conf) in comparisons {
        let p = match preferred {
            1 => conf,
            2 => 1.0 - conf,
            _ => return Err(PyValueError::new_err("preferred slot must be 1 or 2")),
        };
        ids.extend([a, b]);
        comps.push(RankedComparison {
            comparison: j,
            pair: [a, b],
            statement_first: Slot::First,
            verdict: pairwise_from_statement(j, p, Slot::First, Source::Button).map_err(py_err)?,
        });
    }
    let cs = ComparisonSet::new(comps, ids).map_err(py_err)?;
    let r = match method {
        RankMethod::Borda => borda(&cs),
        RankMethod::BordaConf => borda_conf(&cs),
        other => {
            return Err(PyValueError::new_err(format!(
                "{} needs trajectory features; use the pipeline",
                other.name()
            )))
        }
    }
    .map_err(py_err)?;
    Ok(ranked_pairs(&r))
}

/// nDCG@k of a best-first order against per-candidate target distances.
#[pyfunction]
fn ndcg_at_k(order: Vec<TrajId>, d_target: BTreeMap<TrajId, f64>, k: usize) -> PyResult<f64> {
    let n = order.len() as f64;
    let scores = order.iter().enumerate().map(|(i, &id)| (id, n - i as f64)).collect();
    let r = Ranking::from_scores("given", scores).map_err(py_err)?;
    let universe = d_target.keys().copied().collect();
    let task = PreferenceTask::new(0, TrajId::MAX, universe, Vec::new(), d_target).map_err(py_err)?;
    ndcg(&r, &task, k).map_err(py_err)
}

#[pyfunction]
fn kendall_tau(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    tau_b(&a, &b).map_err(py_err)
}

fn run_config(config_json: Option<&str>) -> PyResult<RunConfig> {
    let cfg = match config_json {
        Some(s) => RunConfig::from_json(s.as_bytes()).map_err(py_err)?,
        None => RunConfig::default(),
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

#[pyclass(name = "Session", module = "trajpref_py", frozen)]
struct PySession {
    inner: Session,
}

#[pymethods]
impl PySession {
    /// Load a dataset bundle directory.
    #[staticmethod]
    fn read(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_bundle(&dir).map_err(py_err)?,
        })
    }

    /// Write the bundle into `dir`; returns the relative paths written.
    fn write(&self, dir: PathBuf) -> PyResult<Vec<String>> {
        let written = write_bundle(&self.inner, &dir).map_err(py_err)?;
        Ok(written.iter().map(|p| p.to_string_lossy().into_owned()).collect())
    }

    #[getter]
    fn participant(&self) -> String {
        self.inner.participant().to_string()
    }

    #[getter]
    fn n_tasks(&self) -> usize {
        self.inner.tasks.len()
    }

    #[getter]
    fn n_comparisons(&self) -> usize {
        self.inner.truth.comparisons.len()
    }

    /// Candidate distances to the target for one task.
    fn d_target(&self, task: usize) -> PyResult<BTreeMap<TrajId, f64>> {
        self.inner
            .tasks
            .get(task)
            .map(|t| t.task.d_target().clone())
            .ok_or_else(|| PyValueError::new_err(format!("no task {task}")))
    }
}

#[pyfunction]
#[pyo3(signature = (config_json = None, seed = None))]
fn simulate(config_json: Option<&str>, seed: Option<u64>) -> PyResult<PySession> {
    let mut cfg = run_config(config_json)?;
    if let Some(s) = seed {
        cfg.synth.seed = s;
    }
    Ok(PySession {
        inner: gen_session(&cfg.synth).map_err(py_err)?,
    })
}

#[pyclass(name = "Decoded", module = "trajpref_py", frozen)]
struct PyDecoded {
    inner: Decoded,
}

#[pymethods]
impl PyDecoded {
    /// Out-of-fold accuracy per source against the session's ground truth.
    fn accuracies(&self, session: &PySession) -> PyResult<BTreeMap<String, f64>> {
        let acc = self.inner.accuracies(&session.inner).map_err(py_err)?;
        Ok(acc.into_iter().map(|(s, a)| (s.name().to_string(), a)).collect())
    }

    /// `(comparison, preferred_slot, probability)` for one source.
    fn verdicts(&self, source: &str) -> PyResult<Vec<(u32, u8, f64)>> {
        let s = parse_source(source)?;
        Ok(self.inner.verdicts[&s]
            .iter()
            .map(|v| (v.comparison, slot_number(v.preferred), v.probability))
            .collect())
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

#[pyfunction]
#[pyo3(signature = (session, config_json = None))]
fn decode(session: &PySession, config_json: Option<&str>) -> PyResult<PyDecoded> {
    let cfg = run_config(config_json)?;
    Ok(PyDecoded {
        inner: decode_session(&session.inner, &cfg.decode).map_err(py_err)?,
    })
}

#[pyclass(name = "RankResult", module = "trajpref_py", frozen)]
struct PyRankResult {
    inner: RankOutput,
}

#[pymethods]
impl PyRankResult {
    /// Methods × (source, metric) table.
    fn table(&self) -> String {
        self.inner.report.to_table()
    }

    fn report_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.report).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Best-first candidate ids for one source, task and method.
    fn ranking(&self, source: &str, task: u32, method: &str) -> PyResult<Vec<TrajId>> {
        let s = parse_source(source)?;
        let m: RankMethod = method.parse().map_err(py_err)?;
        self.inner
            .rankings
            .get(&s)
            .and_then(|ts| ts.iter().find(|t| t.task == task))
            .and_then(|t| t.rankings.get(&m))
            .map(|r| r.order.clone())
            .ok_or_else(|| PyValueError::new_err(format!("no {method} ranking for task {task} from {source}")))
    }

    /// Mean nDCG@k for one source and method.
    fn mean_ndcg(&self, source: &str, method: &str, k: usize) -> PyResult<f64> {
        let s = parse_source(source)?;
        let m: RankMethod = method.parse().map_err(py_err)?;
        self.inner
            .report
            .sources
            .get(&s)
            .and_then(|r| r.methods.get(&m))
            .and_then(|r| r.ndcg_at.get(&k))
            .copied()
            .ok_or_else(|| PyValueError::new_err("no such entry in the report"))
    }
}

#[pyfunction]
#[pyo3(signature = (session, decoded, methods = None, config_json = None))]
fn rank(
    session: &PySession,
    decoded: &PyDecoded,
    methods: Option<Vec<String>>,
    config_json: Option<&str>,
) -> PyResult<PyRankResult> {
    let mut cfg = run_config(config_json)?;
    if let Some(names) = methods {
        cfg.rank.methods = names.iter().map(|n| n.parse()).collect::<Result<_, Error>>().map_err(py_err)?;
    }
    Ok(PyRankResult {
        inner: rank_session(&session.inner, &decoded.inner, &cfg.rank).map_err(py_err)?,
    })
}

#[pymodule]
fn trajpref_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpd>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PySession>()?;
    m.add_class::<PyDecoded>()?;
    m.add_class::<PyRankResult>()?;
    m.add_function(wrap_pyfunction!(ledoit_wolf, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_mean, m)?)?;
    m.add_function(wrap_pyfunction!(rank_comparisons, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(rank, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
