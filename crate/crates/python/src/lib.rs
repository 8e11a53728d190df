//! Python bindings. Tensors cross the boundary as nested lists indexed
//! `[i][j][k]`, matrices as lists of rows.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use tuckerwatch::anomaly::user_scores;
use tuckerwatch::clustering::{cut as cut_dendrogram, ward_linkage as ward, Dendrogram, Merge};
use tuckerwatch::decomposition::{self, ScreeOptions};
use tuckerwatch::hmm::{self, BaumWelchConfig, ObservationSeq};
use tuckerwatch::ingestion::{NotificationLog, Record};
use tuckerwatch::pipeline::{self, PipelineConfig};
use tuckerwatch::synth::{self, EventSpec, SynthConfig};
use tuckerwatch::{Matrix, Tensor3};

fn py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_tensor(x: Vec<Vec<Vec<f64>>>) -> PyResult<Tensor3> {
    let i = x.len();
    let j = x.first().map_or(0, Vec::len);
    let k = x.first().and_then(|s| s.first()).map_or(0, Vec::len);
    let mut values = Vec::with_capacity(i * j * k);
    for slab in &x {
        if slab.len() != j {
            return Err(py_err("ragged tensor"));
        }
        for fiber in slab {
            if fiber.len() != k {
                return Err(py_err("ragged tensor"));
            }
            values.extend_from_slice(fiber);
        }
    }
    Tensor3::new([i, j, k], values).map_err(py_err)
}

fn from_tensor(t: &Tensor3) -> Vec<Vec<Vec<f64>>> {
    let [i, j, k] = t.dims();
    (0..i)
        .map(|a| (0..j).map(|b| (0..k).map(|c| t.get(a, b, c)).collect()).collect())
        .collect()
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

#[pyclass(name = "TuckerModel", get_all, from_py_object)]
#[derive(Clone)]
struct PyTuckerModel {
    p: usize,
    q: usize,
    r: usize,
    fit_percent: f64,
    core: Vec<Vec<Vec<f64>>>,
    factor_a: Vec<Vec<f64>>,
    factor_b: Vec<Vec<f64>>,
    factor_c: Vec<Vec<f64>>,
    dims: [usize; 3],
}

impl From<&decomposition::TuckerModel> for PyTuckerModel {
    fn from(m: &decomposition::TuckerModel) -> Self {
        Self {
            p: m.p,
            q: m.q,
            r: m.r,
            fit_percent: m.fit_percent,
            core: from_tensor(&m.core),
            factor_a: rows(&m.factor_a),
            factor_b: rows(&m.factor_b),
            factor_c: rows(&m.factor_c),
            dims: m.data_dims(),
        }
    }
}

impl PyTuckerModel {
    fn to_model(&self) -> PyResult<decomposition::TuckerModel> {
        let mat = |m: &Vec<Vec<f64>>, cols: usize| {
            Matrix::new(m.len(), cols, m.iter().flatten().copied().collect()).map_err(py_err)
        };
        Ok(decomposition::TuckerModel {
            p: self.p,
            q: self.q,
            r: self.r,
            core: to_tensor(self.core.clone())?,
            factor_a: mat(&self.factor_a, self.p)?,
            factor_b: mat(&self.factor_b, self.q)?,
            factor_c: mat(&self.factor_c, self.r)?,
            fit_percent: self.fit_percent,
        })
    }
}

#[pymethods]
impl PyTuckerModel {
    fn reconstruct(&self) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let t = self.to_model()?.reconstruct().map_err(py_err)?;
        Ok(from_tensor(&t))
    }

    /// Distance of each user row of `A` from the origin, in input order.
    fn user_distances(&self) -> Vec<f64> {
        self.factor_a
            .iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "TuckerModel(p={}, q={}, r={}, fit_percent={:.4})",
            self.p, self.q, self.r, self.fit_percent
        )
    }
}

#[pyfunction]
#[pyo3(signature = (x, p, q, r, tol = decomposition::DEFAULT_TOL, max_iter = decomposition::DEFAULT_MAX_ITER))]
fn hooi(x: Vec<Vec<Vec<f64>>>, p: usize, q: usize, r: usize, tol: f64, max_iter: usize) -> PyResult<PyTuckerModel> {
    let t = to_tensor(x)?;
    let m = decomposition::hooi(&t, p, q, r, tol, max_iter).map_err(py_err)?;
    Ok((&m).into())
}

#[pyfunction]
fn hosvd(x: Vec<Vec<Vec<f64>>>, p: usize, q: usize, r: usize) -> PyResult<PyTuckerModel> {
    let m = decomposition::hosvd(&to_tensor(x)?, p, q, r).map_err(py_err)?;
    Ok((&m).into())
}

/// Returns `(grid, selected)` with grid entries `(p, q, r, fit_percent)`.
#[pyfunction]
#[pyo3(signature = (x, max_p, max_q, max_r, sweep_budget = 512))]
#[allow(clippy::type_complexity)]
fn scree_select(
    x: Vec<Vec<Vec<f64>>>,
    max_p: usize,
    max_q: usize,
    max_r: usize,
    sweep_budget: usize,
) -> PyResult<(Vec<(usize, usize, usize, f64)>, (usize, usize, usize))> {
    let opts = ScreeOptions {
        sweep_budget,
        ..Default::default()
    };
    let res = decomposition::scree_select(&to_tensor(x)?, max_p, max_q, max_r, &opts).map_err(py_err)?;
    let grid = res.grid.iter().map(|g| (g.p, g.q, g.r, g.fit_percent)).collect();
    Ok((grid, res.selected))
}

#[pyclass(name = "AnovaReport", get_all, from_py_object)]
#[derive(Clone)]
struct PyAnova {
    main_effect_pct: [f64; 3],
    two_way_pct: [f64; 3],
    three_way_pct: f64,
    max_two_way_pct: f64,
}

impl From<&decomposition::AnovaReport> for PyAnova {
    fn from(a: &decomposition::AnovaReport) -> Self {
        Self {
            main_effect_pct: a.main_effect_pct,
            two_way_pct: a.two_way_pct,
            three_way_pct: a.three_way_pct,
            max_two_way_pct: a.max_two_way_pct(),
        }
    }
}

#[pyfunction]
fn anova(x: Vec<Vec<Vec<f64>>>) -> PyResult<PyAnova> {
    let a = decomposition::anova_interaction(&to_tensor(x)?).map_err(py_err)?;
    Ok((&a).into())
}

#[pyclass(name = "HmmFit", get_all, from_py_object)]
#[derive(Clone)]
struct PyHmmFit {
    transition: Vec<Vec<f64>>,
    initial: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    log_likelihood: f64,
    iterations: usize,
    degenerate: bool,
    /// `[a00, a11, mu0, mu1, sigma0, sigma1]` with states ordered by mean.
    features: [f64; 6],
}

#[pyfunction]
#[pyo3(signature = (obs, seed = 0, n_states = 2))]
fn baum_welch(obs: Vec<f64>, seed: u64, n_states: usize) -> PyResult<PyHmmFit> {
    let seq = ObservationSeq::new(obs).map_err(py_err)?;
    let cfg = BaumWelchConfig {
        n_states,
        seed,
        ..Default::default()
    };
    let fit = hmm::baum_welch(&seq, &cfg).map_err(py_err)?;
    let m = &fit.model;
    let n = m.n_states();
    let features = if n == 2 {
        hmm::extract_features(m).map_err(py_err)?
    } else {
        [f64::NAN; 6]
    };
    Ok(PyHmmFit {
        transition: (0..n).map(|a| (0..n).map(|b| m.trans(a, b)).collect()).collect(),
        initial: m.init().to_vec(),
        means: m.emit_mean().to_vec(),
        variances: m.emit_var().to_vec(),
        log_likelihood: fit.log_likelihood,
        iterations: fit.iterations,
        degenerate: fit.degenerate,
        features,
    })
}

/// Merges as `(left, right, height, size)` with leaves `0..n` and merge `m`
/// creating node `n + m`.
#[pyfunction]
fn ward_linkage(points: Vec<Vec<f64>>) -> PyResult<Vec<(usize, usize, f64, usize)>> {
    let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    let d = ward(&refs).map_err(py_err)?;
    Ok(d.merges.iter().map(|m| (m.left, m.right, m.height, m.size)).collect())
}

#[pyfunction]
fn cut(merges: Vec<(usize, usize, f64, usize)>, cutoff: f64) -> PyResult<Vec<usize>> {
    let d = Dendrogram {
        n_leaves: merges.len() + 1,
        merges: merges
            .into_iter()
            .map(|(left, right, height, size)| Merge {
                left,
                right,
                height,
                size,
            })
            .collect(),
    };
    cut_dendrogram(&d, cutoff).map_err(py_err)
}

fn records_of(log: &NotificationLog) -> Vec<(String, i64)> {
    log.records.iter().map(|r| (r.user_id.clone(), r.timestamp)).collect()
}

/// Returns `(records, anomalous_user_ids, events)`, events as
/// `(start_hour, end_hour, affected_user_ids)`.
#[pyfunction]
#[pyo3(signature = (n_users = 100, window_hours = 720, base_rate = 2.0, burst_rate = 10.0, anomalous = Vec::new(), events = Vec::new(), seed = 0))]
#[allow(clippy::type_complexity)]
fn synth_generate(
    n_users: usize,
    window_hours: usize,
    base_rate: f64,
    burst_rate: f64,
    anomalous: Vec<usize>,
    events: Vec<(usize, usize, f64)>,
    seed: u64,
) -> PyResult<(Vec<(String, i64)>, Vec<String>, Vec<(usize, usize, Vec<String>)>)> {
    let cfg = SynthConfig {
        n_users,
        window_hours,
        base_rate,
        burst_rate,
        persistent_anomalous: anomalous,
        events: events
            .into_iter()
            .map(|(start_hour, end_hour, affected_fraction)| EventSpec {
                start_hour,
                end_hour,
                affected_fraction,
            })
            .collect(),
        seed,
        ..Default::default()
    };
    let (log, truth) = synth::generate(&cfg).map_err(py_err)?;
    let ev = truth
        .events
        .into_iter()
        .map(|e| (e.start_hour, e.end_hour, e.affected_user_ids))
        .collect();
    Ok((records_of(&log), truth.anomalous_user_ids, ev))
}

#[pyclass(name = "PipelineResult", get_all, from_py_object)]
#[derive(Clone)]
struct PyPipelineResult {
    user_ids: Vec<String>,
    anova: PyAnova,
    selected: (usize, usize, usize),
    model: PyTuckerModel,
    /// `(user_id, distance, score)` by decreasing distance.
    ranking: Vec<(String, f64, f64)>,
    labels: Vec<usize>,
    /// `(cluster, start_hour, end_hour, severity)`.
    events: Vec<(usize, usize, usize, f64)>,
}

#[pyfunction]
#[pyo3(signature = (records, window_start = None, window_hours = 720, seed = 0, cutoff = pipeline::DEFAULT_CUTOFF, max_rank = 5))]
fn run_pipeline(
    records: Vec<(String, i64)>,
    window_start: Option<i64>,
    window_hours: usize,
    seed: u64,
    cutoff: f64,
    max_rank: usize,
) -> PyResult<PyPipelineResult> {
    let start = match window_start {
        Some(s) => s,
        None => records
            .iter()
            .map(|r| r.1)
            .min()
            .map_or(0, |t| t.div_euclid(3600) * 3600),
    };
    let recs = records
        .into_iter()
        .map(|(user_id, timestamp)| Record { user_id, timestamp })
        .collect();
    let log = NotificationLog::new(recs, start, window_hours).map_err(py_err)?;
    let cfg = PipelineConfig {
        window_hours,
        seed,
        cutoff,
        max_p: max_rank,
        max_q: max_rank,
        max_r: max_rank,
        ..Default::default()
    };
    let run = pipeline::run(&log, &cfg).map_err(py_err)?;
    let d = &run.decomposition;
    Ok(PyPipelineResult {
        user_ids: run.features.user_ids.clone(),
        anova: (&d.anova).into(),
        selected: d.scree.selected,
        model: (&d.model).into(),
        ranking: run
            .ranking
            .entries
            .iter()
            .map(|e| (e.user_id.clone(), e.distance, e.score))
            .collect(),
        labels: run.clustering.labels.clone(),
        events: run
            .events
            .windows
            .iter()
            .map(|w| (w.cluster_id, w.start_hour, w.end_hour, w.severity))
            .collect(),
    })
}

/// Ranking `(user_id, distance, score)` from a model's user factor.
#[pyfunction]
fn rank_users(model: PyTuckerModel, user_ids: Vec<String>) -> PyResult<Vec<(String, f64, f64)>> {
    let r = user_scores(&model.to_model()?, &user_ids).map_err(py_err)?;
    Ok(r.entries
        .into_iter()
        .map(|e| (e.user_id, e.distance, e.score))
        .collect())
}

#[pymodule]
#[pyo3(name = "tuckerwatch")]
fn tuckerwatch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", tuckerwatch::VERSION)?;
    m.add_class::<PyTuckerModel>()?;
    m.add_class::<PyAnova>()?;
    m.add_class::<PyHmmFit>()?;
    m.add_class::<PyPipelineResult>()?;
    m.add_function(wrap_pyfunction!(hooi, m)?)?;
    m.add_function(wrap_pyfunction!(hosvd, m)?)?;
    m.add_function(wrap_pyfunction!(scree_select, m)?)?;
    m.add_function(wrap_pyfunction!(anova, m)?)?;
    m.add_function(wrap_pyfunction!(baum_welch, m)?)?;
    m.add_function(wrap_pyfunction!(ward_linkage, m)?)?;
    m.add_function(wrap_pyfunction!(cut, m)?)?;
    m.add_function(wrap_pyfunction!(synth_generate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(rank_users, m)?)?;
    Ok(())
}
