//! Two-task interference study. Task 1 regresses `sin(5x) + N(0, σ₁²)`,
//! task 2 regresses `cos(5x) + N(0, σ₂²)` on `x ~ U[−π, π]`. A joint network
//! (shared trunk, two heads) and a pair of independent networks see the
//! same sample stream; both are scored by MSE against the noise-free
//! functions on an evaluation grid.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::stats::{mean, standard_error};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Activation, HeadSpec, InitScheme, Mlp, NetSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterferenceSpec {
    pub sigma1_grid: Vec<f64>,
    pub sigma2: f64,
    pub domain: (f64, f64),
    pub joint_hidden: Vec<usize>,
    /// Hidden widths of each of the two independent networks.
    pub dual_hidden: Vec<usize>,
    pub seeds: usize,
    pub first_seed: u64,
    pub train_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub init: InitScheme,
    /// Fixed training set size; fresh samples every step when absent.
    pub dataset_size: Option<usize>,
    pub eval_grid_size: usize,
}

impl Default for InterferenceSpec {
    fn default() -> Self {
        Self {
            sigma1_grid: vec![0.1, 1.0, 10.0, 100.0],
            sigma2: 1.0,
            domain: (-PI, PI),
            joint_hidden: vec![256, 512],
            dual_hidden: vec![256, 256],
            seeds: 20,
            first_seed: 0,
            train_steps: 3000,
            batch_size: 32,
            lr: 1e-3,
            init: InitScheme::Orthogonal,
            dataset_size: None,
            eval_grid_size: 256,
        }
    }
}

impl InterferenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigma1_grid.is_empty() {
            return Err(Error::config("sigma1_grid", "must not be empty"));
        }
        if self.sigma1_grid.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("sigma1_grid", "every sigma must be > 0"));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::config("sigma2", "must be > 0"));
        }
        if !(self.domain.0 < self.domain.1) {
            return Err(Error::config("domain", "lower bound must be below upper bound"));
        }
        for (name, widths) in [("joint_hidden", &self.joint_hidden), ("dual_hidden", &self.dual_hidden)] {
            if widths.is_empty() || widths.contains(&0) {
                return Err(Error::config(name, "need at least one positive width"));
            }
        }
        if self.seeds == 0 {
            return Err(Error::config("seeds", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be > 0"));
        }
        if self.dataset_size == Some(0) {
            return Err(Error::config("dataset_size", "must be positive"));
        }
        if self.eval_grid_size < 2 {
            return Err(Error::config("eval_grid_size", "need at least 2 points"));
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.first_seed + i).collect()
    }
}

/// Test MSEs of one seed at one noise level; NaN marks a diverged model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceRun {
    pub sigma1: f64,
    pub seed: u64,
    pub joint_t1: f64,
    pub joint_t2: f64,
    pub dual_t1: f64,
    pub dual_t2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceRow {
    pub sigma1: f64,
    pub joint_t1_mse: f64,
    pub joint_t1_se: f64,
    pub joint_t2_mse: f64,
    pub joint_t2_se: f64,
    pub dual_t1_mse: f64,
    pub dual_t1_se: f64,
    pub dual_t2_mse: f64,
    pub dual_t2_se: f64,
    pub seeds: usize,
    pub diverged: usize,
}

impl InterferenceRow {
    /// `dual_t2 - joint_t2` measured in combined standard errors.
    pub fn t2_separation(&self) -> f64 {
        let se = (self.joint_t2_se.powi(2) + self.dual_t2_se.powi(2)).sqrt();
        (self.joint_t2_mse - self.dual_t2_mse) / se
    }
}

fn target(task: usize, x: f64) -> f64 {
    if task == 0 {
        (5.0 * x).sin()
    } else {
        (5.0 * x).cos()
    }
}

fn regression_net(hidden: &[usize], heads: &[&str], init: InitScheme) -> Result<Mlp> {
    Mlp::new(NetSpec::new(
        1,
        hidden.to_vec(),
        heads.iter().map(|h| HeadSpec::new(*h, 1, 0.01)).collect(),
        Activation::Relu,
        init,
    )?)
}

struct Model {
    net: Mlp,
    params: Vec<f64>,
    grads: Vec<f64>,
    adam: AdamState,
    diverged: bool,
}

impl Model {
    fn new<R: Rng>(net: Mlp, rng: &mut R) -> Self {
        let params = net.init_params(rng);
        let n = params.len();
        Self {
            net,
            params,
            grads: vec![0.0; n],
            adam: AdamState::new(n),
            diverged: false,
        }
    }

    /// One Adam step on `Σ_heads MSE(head, targets[head])`.
    fn train_step(&mut self, x: ArrayView2<f64>, targets: &[&[f64]], adam: &AdamConfig) -> Result<()> {
        if self.diverged {
            return Ok(());
        }
        let (outs, cache) = self.net.forward(&self.params, x)?;
        let n = x.nrows() as f64;
        let mut loss = 0.0;
        let grads: Vec<Array2<f64>> = outs
            .iter()
            .zip(targets)
            .map(|(out, y)| {
                Array2::from_shape_fn((out.nrows(), 1), |(i, _)| {
                    let d = out[[i, 0]] - y[i];
                    loss += d * d / n;
                    2.0 * d / n
                })
            })
            .collect();
        if !loss.is_finite() {
            self.diverged = true;
            return Ok(());
        }
        let views: Vec<_> = grads.iter().map(|g| Some(g.view())).collect();
        self.net.backward(&self.params, &cache, &views, &mut self.grads)?;
        self.adam.step(&mut self.params, &self.grads, adam);
        Ok(())
    }

    /// MSE of each head against its noise-free target on the grid.
    fn eval(&self, grid: &Array2<f64>, tasks: &[usize]) -> Result<Vec<f64>> {
        if self.diverged {
            return Ok(vec![f64::NAN; tasks.len()]);
        }
        let outs = self.net.predict(&self.params, grid.view())?;
        Ok(outs
            .iter()
            .zip(tasks)
            .map(|(out, &task)| {
                let n = grid.nrows() as f64;
                let se: f64 = (0..grid.nrows())
                    .map(|i| (out[[i, 0]] - target(task, grid[[i, 0]])).powi(2))
                    .sum();
                let mse = se / n;
                if mse.is_finite() {
                    mse
                } else {
                    f64::NAN
                }
            })
            .collect())
    }
}

/// Train the joint model and the dual pair for one seed at one noise level.
pub fn run_single(spec: &InterferenceSpec, sigma1: f64, seed: u64) -> Result<InterferenceRun> {
    let (lo, hi) = spec.domain;
    let mut data_rng = ChaCha8Rng::seed_from_u64(seed);
    data_rng.set_stream(1);
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    init_rng.set_stream(2);
    let mut joint = Model::new(regression_net(&spec.joint_hidden, &["t1", "t2"], spec.init)?, &mut init_rng);
    let mut dual1 = Model::new(regression_net(&spec.dual_hidden, &["t1"], spec.init)?, &mut init_rng);
    let mut dual2 = Model::new(regression_net(&spec.dual_hidden, &["t2"], spec.init)?, &mut init_rng);
    let adam = AdamConfig::with_lr(spec.lr);
    let sigmas = [sigma1, spec.sigma2];
    let sample = |rng: &mut ChaCha8Rng| {
        let x: f64 = rng.random_range(lo..hi);
        let noise = |rng: &mut ChaCha8Rng, task: usize| sigmas[task] * rng.sample::<f64, _>(StandardNormal);
        let y1 = target(0, x) + noise(rng, 0);
        let y2 = target(1, x) + noise(rng, 1);
        (x, y1, y2)
    };
    let dataset: Option<Vec<(f64, f64, f64)>> = spec
        .dataset_size
        .map(|n| (0..n).map(|_| sample(&mut data_rng)).collect());

    let b = spec.batch_size;
    let mut x = Array2::zeros((b, 1));
    let mut y1 = vec![0.0; b];
    let mut y2 = vec![0.0; b];
    for _ in 0..spec.train_steps {
        for i in 0..b {
            let (xi, a, c) = match &dataset {
                Some(d) => d[data_rng.random_range(0..d.len())],
                None => sample(&mut data_rng),
            };
            x[[i, 0]] = xi;
            y1[i] = a;
            y2[i] = c;
        }
        joint.train_step(x.view(), &[&y1, &y2], &adam)?;
        dual1.train_step(x.view(), &[&y1], &adam)?;
        dual2.train_step(x.view(), &[&y2], &adam)?;
    }

    let g = spec.eval_grid_size;
    let grid = Array2::from_shape_fn((g, 1), |(i, _)| lo + (hi - lo) * i as f64 / (g - 1) as f64);
    let j = joint.eval(&grid, &[0, 1])?;
    let d1 = dual1.eval(&grid, &[0])?;
    let d2 = dual2.eval(&grid, &[1])?;
    Ok(InterferenceRun {
        sigma1,
        seed,
        joint_t1: j[0],
        joint_t2: j[1],
        dual_t1: d1[0],
        dual_t2: d2[0],
    })
}

/// Aggregate runs at one noise level. Diverged runs are counted and left
/// out of the means.
pub fn aggregate(sigma1: f64, runs: &[InterferenceRun]) -> InterferenceRow {
    let finite = |f: fn(&InterferenceRun) -> f64| -> Vec<f64> {
        runs.iter().map(f).filter(|v| v.is_finite()).collect()
    };
    let cols = [
        finite(|r| r.joint_t1),
        finite(|r| r.joint_t2),
        finite(|r| r.dual_t1),
        finite(|r| r.dual_t2),
    ];
    let diverged = runs
        .iter()
        .filter(|r| ![r.joint_t1, r.joint_t2, r.dual_t1, r.dual_t2].iter().all(|v| v.is_finite()))
        .count();
    InterferenceRow {
        sigma1,
        joint_t1_mse: mean(&cols[0]),
        joint_t1_se: standard_error(&cols[0]),
        joint_t2_mse: mean(&cols[1]),
        joint_t2_se: standard_error(&cols[1]),
        dual_t1_mse: mean(&cols[2]),
        dual_t1_se: standard_error(&cols[2]),
        dual_t2_mse: mean(&cols[3]),
        dual_t2_se: standard_error(&cols[3]),
        seeds: runs.len(),
        diverged,
    }
}

/// Every seed at every noise level; returns the per-σ₁ table and the raw runs.
pub fn run_interference(spec: &InterferenceSpec) -> Result<(Vec<InterferenceRow>, Vec<InterferenceRun>)> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.sigma1_grid.len());
    let mut all = Vec::new();
    for &sigma1 in &spec.sigma1_grid {
        let runs: Vec<InterferenceRun> = spec
            .seed_list()
            .into_iter()
            .map(|seed| run_single(spec, sigma1, seed))
            .collect::<Result<_>>()?;
        let row = aggregate(sigma1, &runs);
        log::info!(
            "sigma1={sigma1}: joint T2 {:.4}±{:.4}, dual T2 {:.4}±{:.4}",
            row.joint_t2_mse,
            row.joint_t2_se,
            row.dual_t2_mse,
            row.dual_t2_se
        );
        rows.push(row);
        all.extend(runs);
    }
    Ok((rows, all))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> InterferenceSpec {
        InterferenceSpec {
            sigma1_grid: vec![1.0],
            joint_hidden: vec![16, 16],
            dual_hidden: vec![16, 8],
            seeds: 2,
            train_steps: 20,
            batch_size: 8,
            eval_grid_size: 1001,
            ..Default::default()
        }
    }

    #[test]
    fn untrained_models_score_mean_square_of_targets() {
        let spec = InterferenceSpec {
            train_steps: 0,
            ..tiny()
        };
        let r = run_single(&spec, 1.0, 0).unwrap();
        for v in [r.joint_t1, r.joint_t2, r.dual_t1, r.dual_t2] {
            assert!((v - 0.5).abs() < 0.02, "{r:?}");
        }
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let spec = tiny();
        assert_eq!(run_single(&spec, 1.0, 3).unwrap(), run_single(&spec, 1.0, 3).unwrap());
        let fixed = InterferenceSpec {
            dataset_size: Some(64),
            ..tiny()
        };
        assert_eq!(run_single(&fixed, 1.0, 3).unwrap(), run_single(&fixed, 1.0, 3).unwrap());
    }

    #[test]
    fn divergence_is_recorded_not_fatal() {
        let runs = [
            InterferenceRun {
                sigma1: 1.0,
                seed: 0,
                joint_t1: 0.2,
                joint_t2: 0.3,
                dual_t1: 0.2,
                dual_t2: 0.1,
            },
            InterferenceRun {
                sigma1: 1.0,
                seed: 1,
                joint_t1: f64::NAN,
                joint_t2: f64::NAN,
                dual_t1: 0.4,
                dual_t2: 0.3,
            },
        ];
        let row = aggregate(1.0, &runs);
        assert_eq!(row.diverged, 1);
        assert_eq!(row.joint_t2_mse, 0.3);
        assert!((row.dual_t2_mse - 0.2).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = InterferenceSpec {
            sigma1_grid: vec![],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = InterferenceSpec {
            sigma2: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
