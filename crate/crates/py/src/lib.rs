//! Python bindings. Reports cross the boundary as plain dicts and lists
//! (via JSON), handles for projects, items and bandit state as classes.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use forge_core::analysis::{mine_sites, QueryConfig};
use forge_core::benchkit::{self, BenchmarkItem, CorpusConfig};
use forge_core::coevolve::{self, ArmChoice, CoevolveConfig, PolicyState};
use forge_core::digest::hex64;
use forge_core::harness::{self, ProjectSnapshot};
use forge_core::inject::catalog::PatternId;
use forge_core::inject::{inject_once, InjectionPolicy};
use forge_core::lang::{run, Limits};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

fn pattern(name: &str) -> PyResult<PatternId> {
    PatternId::ALL
        .iter()
        .copied()
        .find(|p| p.name() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown pattern `{name}`")))
}

/// A loaded MiniC project.
#[pyclass(module = "forge_py", frozen)]
struct Project {
    snapshot: ProjectSnapshot,
}

#[pymethods]
impl Project {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Project> {
        let snapshot = harness::load_project(&dir).map_err(value_err)?;
        Ok(Project { snapshot })
    }

    #[getter]
    fn name(&self) -> String {
        self.snapshot.manifest.name.clone()
    }

    #[getter]
    fn digest(&self) -> String {
        hex64(self.snapshot.content_digest)
    }

    #[getter]
    fn files(&self) -> Vec<String> {
        self.snapshot.files.iter().map(|f| f.path.clone()).collect()
    }

    /// Runs the program on `input` and returns the execution result.
    fn run<'py>(&self, py: Python<'py>, input: Vec<i64>) -> PyResult<Bound<'py, PyAny>> {
        let program = self.snapshot.program().map_err(value_err)?;
        to_py(py, &run(&program, &input, Limits::default()))
    }

    #[pyo3(signature = (cross_file = false))]
    fn mine<'py>(&self, py: Python<'py>, cross_file: bool) -> PyResult<Bound<'py, PyAny>> {
        let program = self.snapshot.program().map_err(value_err)?;
        let config = QueryConfig {
            require_cross_file: cross_file,
            ..QueryConfig::default()
        };
        to_py(py, &mine_sites(&program, &config))
    }

    /// One injection attempt. Returns the outcome report; nothing is written.
    #[pyo3(signature = (seed, patterns = None))]
    fn inject<'py>(
        &self,
        py: Python<'py>,
        seed: u64,
        patterns: Option<Vec<String>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut policy = InjectionPolicy::default();
        if let Some(names) = patterns {
            policy.allowed_patterns = names.iter().map(|n| pattern(n)).collect::<PyResult<_>>()?;
        }
        let project = benchkit::prepare_project(self.snapshot.clone(), seed).map_err(value_err)?;
        let outcome = py.detach(|| {
            inject_once(
                &project.snapshot,
                &project.baseline,
                &project.suite,
                &policy,
                seed,
            )
        });
        to_py(py, &outcome)
    }

    fn __repr__(&self) -> String {
        format!(
            "Project({:?}, digest={})",
            self.snapshot.manifest.name,
            self.digest()
        )
    }
}

/// A packaged benchmark item.
#[pyclass(module = "forge_py", frozen)]
struct Item {
    item: BenchmarkItem,
}

#[pymethods]
impl Item {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Item> {
        let item = benchkit::load_item(&dir).map_err(value_err)?;
        Ok(Item { item })
    }

    #[getter]
    fn item_id(&self) -> String {
        self.item.item_id.clone()
    }

    #[getter]
    fn cwe(&self) -> String {
        self.item.labels.cwe.clone()
    }

    #[getter]
    fn pattern(&self) -> String {
        self.item.labels.pattern_id.name().to_string()
    }

    #[getter]
    fn cross_file_depth(&self) -> u32 {
        self.item.labels.cross_file_depth
    }

    #[getter]
    fn pov(&self) -> Vec<i64> {
        self.item.pov.minimized_input.clone()
    }

    #[getter]
    fn diff(&self) -> String {
        self.item.patch.diff.clone()
    }

    /// Both stored inputs crash the patched program with the stored
    /// signature and leave the original alone.
    fn replay(&self) -> bool {
        benchkit::replay(&self.item)
    }

    fn labels<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.item.labels)
    }

    fn write(&self, dir: PathBuf) -> PyResult<()> {
        self.item
            .write(&dir)
            .map_err(|e| PyOSError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Item({}, {})", self.item.item_id, self.item.labels.cwe)
    }
}

/// EXP3 state over pattern arms.
#[pyclass(module = "forge_py")]
struct Policy {
    state: PolicyState,
}

#[pymethods]
impl Policy {
    #[new]
    #[pyo3(signature = (arms = None, gamma = 0.1))]
    fn new(arms: Option<Vec<String>>, gamma: f64) -> PyResult<Policy> {
        let arms = match arms {
            Some(names) => names.iter().map(|n| pattern(n)).collect::<PyResult<_>>()?,
            None => PatternId::ALL.to_vec(),
        };
        if arms.is_empty() || !(0.0..=1.0).contains(&gamma) {
            return Err(PyValueError::new_err(
                "need at least one arm and 0 <= gamma <= 1",
            ));
        }
        Ok(Policy {
            state: PolicyState::new(arms, gamma),
        })
    }

    #[getter]
    fn arms(&self) -> Vec<String> {
        self.state
            .arms
            .iter()
            .map(|a| a.name().to_string())
            .collect()
    }

    fn probabilities(&self) -> Vec<f64> {
        self.state.probabilities()
    }

    /// Returns `(arm, probability)` or None when nothing is eligible.
    #[pyo3(signature = (seed, eligible = None))]
    fn sample(&self, seed: u64, eligible: Option<Vec<String>>) -> PyResult<Option<(String, f64)>> {
        let eligible = match eligible {
            Some(names) => names
                .iter()
                .map(|n| pattern(n))
                .collect::<PyResult<Vec<_>>>()?,
            None => self.state.arms.clone(),
        };
        Ok(coevolve::policy_sample(&self.state, &eligible, seed)
            .map(|c| (c.arm.name().to_string(), c.probability)))
    }

    fn update(&mut self, arm: &str, probability: f64, reward: f64) -> PyResult<()> {
        if !(probability > 0.0 && probability <= 1.0) {
            return Err(PyValueError::new_err("probability must be in (0, 1]"));
        }
        let choice = ArmChoice {
            arm: pattern(arm)?,
            probability,
        };
        self.state = coevolve::policy_update(&self.state, choice, reward);
        Ok(())
    }
}

/// Runs a batch over every project under `projects` and writes the corpus
/// to `out`. Returns the metrics.
#[pyfunction]
#[pyo3(signature = (projects, out, n = 100, seed = 0, jobs = 1))]
fn generate_corpus<'py>(
    py: Python<'py>,
    projects: PathBuf,
    out: PathBuf,
    n: usize,
    seed: u64,
    jobs: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let dirs = benchkit::project_dirs(&projects).map_err(value_err)?;
    let config = CorpusConfig {
        n_attempts: n,
        seed,
        jobs: jobs.max(1),
        ..CorpusConfig::default()
    };
    let corpus = py
        .detach(|| benchkit::generate_corpus(&dirs, &config, &out))
        .map_err(value_err)?;
    to_py(py, &corpus.metrics)
}

/// Recomputes metrics for a corpus directory by replaying every item.
#[pyfunction]
fn corpus_metrics<'py>(py: Python<'py>, corpus: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let (items, attempts) = benchkit::load_corpus(&corpus).map_err(value_err)?;
    to_py(py, &benchkit::corpus_metrics(&items, &attempts))
}

#[pyfunction]
fn entropy_bits(counts: Vec<usize>) -> f64 {
    benchkit::entropy_bits(counts)
}

/// Runs the injector/detector loop and returns its report.
#[pyfunction]
#[pyo3(signature = (projects, rounds = 5, per_round = 20, k = 5, seed = 0, stationary = false))]
fn run_coevolve<'py>(
    py: Python<'py>,
    projects: PathBuf,
    rounds: usize,
    per_round: usize,
    k: usize,
    seed: u64,
    stationary: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let dirs = benchkit::project_dirs(&projects).map_err(value_err)?;
    let prepared = benchkit::prepare_projects(&dirs, seed).map_err(value_err)?;
    let config = CoevolveConfig {
        rounds,
        per_round,
        k,
        seed,
        update_policy: !stationary,
        ..CoevolveConfig::default()
    };
    let result = py
        .detach(|| coevolve::coevolve(&prepared, &config))
        .map_err(value_err)?;
    to_py(py, &result.report)
}

#[pymodule]
fn forge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", forge_core::TOOL_VERSION)?;
    m.add_class::<Project>()?;
    m.add_class::<Item>()?;
    m.add_class::<Policy>()?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_bits, m)?)?;
    m.add_function(wrap_pyfunction!(run_coevolve, m)?)?;
    Ok(())
}
