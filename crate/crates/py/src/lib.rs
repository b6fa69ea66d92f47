//! Python bindings: return estimation, the noise-scale estimator, the
//! trainer and the interference study.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dna_core::experiments::{run_interference, InterferenceSpec};
use dna_core::returns::{self, Trajectory};
use dna_core::trainer::{DnaConfig, MetricRecord, TrainerState};
use dna_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::Precondition(_) | Error::Dimension { .. } | Error::NonFinite(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn trajectory(rewards: Vec<f64>, values: Vec<f64>, terminals: Vec<bool>, bootstrap: f64) -> PyResult<Trajectory> {
    Trajectory::new(rewards, values, terminals, bootstrap).map_err(to_py)
}

/// TD(λ) returns for one trajectory.
#[pyfunction]
fn td_lambda_returns(
    rewards: Vec<f64>,
    values: Vec<f64>,
    terminals: Vec<bool>,
    bootstrap: f64,
    gamma: f64,
    lam: f64,
) -> PyResult<Vec<f64>> {
    let traj = trajectory(rewards, values, terminals, bootstrap)?;
    returns::compute_value_targets(&traj, lam, gamma).map_err(to_py)
}

/// TD(λ) returns minus the trajectory's values.
#[pyfunction]
fn advantages(
    rewards: Vec<f64>,
    values: Vec<f64>,
    terminals: Vec<bool>,
    bootstrap: f64,
    gamma: f64,
    lam: f64,
) -> PyResult<Vec<f64>> {
    let traj = trajectory(rewards, values, terminals, bootstrap)?;
    returns::compute_advantages(&traj, lam, gamma).map_err(to_py)
}

/// `(|G|², tr Σ)` estimates from one paired small/big batch gradient probe.
#[pyfunction]
fn estimate_g2_s(g_small: Vec<f64>, g_big: Vec<f64>, b_small: usize, b_big: usize) -> PyResult<(f64, f64)> {
    dna_core::noise::estimate_g2_s(&g_small, &g_big, b_small, b_big).map_err(to_py)
}

/// Per-σ₁ rows of the joint vs dual interference study.
#[pyfunction]
#[pyo3(signature = (sigma1, seeds=20, train_steps=None))]
fn interference<'py>(
    py: Python<'py>,
    sigma1: Vec<f64>,
    seeds: usize,
    train_steps: Option<usize>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut spec = InterferenceSpec {
        sigma1_grid: sigma1,
        seeds,
        ..InterferenceSpec::default()
    };
    if let Some(s) = train_steps {
        spec.train_steps = s;
    }
    let (rows, _) = py.detach(|| run_interference(&spec)).map_err(to_py)?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("sigma1", r.sigma1)?;
            d.set_item("joint_t1_mse", r.joint_t1_mse)?;
            d.set_item("joint_t2_mse", r.joint_t2_mse)?;
            d.set_item("joint_t2_se", r.joint_t2_se)?;
            d.set_item("dual_t1_mse", r.dual_t1_mse)?;
            d.set_item("dual_t2_mse", r.dual_t2_mse)?;
            d.set_item("dual_t2_se", r.dual_t2_se)?;
            d.set_item("separation", r.t2_separation())?;
            Ok(d)
        })
        .collect()
}

/// A training run. Build from a preset name, optionally overridden by TOML
/// text.
#[pyclass(name = "Trainer")]
pub struct PyTrainer {
    state: TrainerState,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (preset="dna", seed=None, total_interactions=None, config_toml=None))]
    fn new(
        preset: &str,
        seed: Option<u64>,
        total_interactions: Option<u64>,
        config_toml: Option<&str>,
    ) -> PyResult<Self> {
        let mut cfg = match config_toml {
            Some(text) => DnaConfig::from_toml_str(text).map_err(to_py)?,
            None => DnaConfig::preset(preset).map_err(to_py)?,
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(t) = total_interactions {
            cfg.total_interactions = t;
        }
        let state = TrainerState::new(cfg).map_err(to_py)?;
        Ok(Self { state })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let state = TrainerState::load_checkpoint(&path).map_err(to_py)?;
        Ok(Self { state })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.state.save_checkpoint(&path).map_err(to_py)
    }

    /// One outer iteration; returns `(iteration, interactions, metric, value)` tuples.
    fn step(&mut self, py: Python<'_>) -> PyResult<Vec<(usize, u64, String, f64)>> {
        let mut sink: Vec<MetricRecord> = Vec::new();
        let state = &mut self.state;
        py.detach(|| state.run_iteration(&mut sink)).map_err(to_py)?;
        Ok(sink
            .into_iter()
            .map(|r| (r.iteration, r.interactions, r.metric, r.value))
            .collect())
    }

    /// Train until the budget is spent; returns every metric record.
    fn train(&mut self, py: Python<'_>) -> PyResult<Vec<(usize, u64, String, f64)>> {
        let mut sink: Vec<MetricRecord> = Vec::new();
        let state = &mut self.state;
        py.detach(|| state.run(&mut sink, None)).map_err(to_py)?;
        Ok(sink
            .into_iter()
            .map(|r| (r.iteration, r.interactions, r.metric, r.value))
            .collect())
    }

    /// Greedy evaluation: `(mean_return, mean_discounted_return, returns)`.
    #[pyo3(signature = (episodes=10))]
    fn evaluate(&self, episodes: usize) -> PyResult<(f64, f64, Vec<f64>)> {
        let r = self.state.evaluate(episodes).map_err(to_py)?;
        Ok((r.mean_return, r.mean_discounted_return, r.returns))
    }

    #[getter]
    fn iteration(&self) -> usize {
        self.state.iteration()
    }

    #[getter]
    fn interactions(&self) -> u64 {
        self.state.interactions()
    }

    #[getter]
    fn done(&self) -> bool {
        self.state.is_done()
    }

    fn config_toml(&self) -> String {
        self.state.config().to_toml_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trainer(iteration={}, interactions={}/{})",
            self.state.iteration(),
            self.state.interactions(),
            self.state.config().total_interactions
        )
    }
}

#[pymodule]
fn dna(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(td_lambda_returns, m)?)?;
    m.add_function(wrap_pyfunction!(advantages, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_g2_s, m)?)?;
    m.add_function(wrap_pyfunction!(interference, m)?)?;
    m.add_class::<PyTrainer>()?;
    Ok(())
}
