//! Grid sweeps over return-estimation λs and phase epoch counts on a toy
//! control environment. Every cell spends the same interaction budget.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{mean, spearman};
use crate::error::{Error, Result};
use crate::noise::NoiseScaleProbe;
use crate::trainer::{DnaConfig, MetricsSink, NullSink, TrainerState};

pub const LAMBDA_GRID: [f64; 5] = [0.6, 0.8, 0.9, 0.95, 0.975];

/// Outcome of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Mean raw return over the last 100 training episodes.
    pub score: f64,
    pub interactions: u64,
    pub sigma_pi: f64,
    pub sigma_v: f64,
    pub sigma_distil: f64,
}

fn sigma_of(probe: &NoiseScaleProbe) -> f64 {
    if probe.initialized && probe.ema_g2 > 0.0 {
        (probe.ema_s / probe.ema_g2).max(0.0).sqrt()
    } else {
        f64::NAN
    }
}

/// Train one configuration to completion and summarize it.
pub fn run_config(config: &DnaConfig, sink: &mut dyn MetricsSink) -> Result<RunSummary> {
    let mut state = TrainerState::new(config.clone())?;
    state.run(sink, None)?;
    let probes = state.probes();
    Ok(RunSummary {
        score: state.recent_mean_return().unwrap_or(f64::NAN),
        interactions: state.interactions(),
        sigma_pi: sigma_of(&probes.policy),
        sigma_v: sigma_of(&probes.value),
        sigma_distil: sigma_of(&probes.distil),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweepRow {
    /// `lambda_pi`, `lambda_v` or `homogeneous`.
    pub sweep: String,
    pub lambda_pi: f64,
    pub lambda_v: f64,
    pub seed: u64,
    pub score: f64,
    pub interactions: u64,
    pub sigma_pi: f64,
    pub sigma_v: f64,
    pub sigma_distil: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTrend {
    /// Seed-averaged σ_π per λ_π grid point.
    pub sigma_pi_by_lambda_pi: Vec<(f64, f64)>,
    pub sigma_v_by_lambda_v: Vec<(f64, f64)>,
    pub spearman_pi: f64,
    pub spearman_v: f64,
}

fn key(x: f64) -> u64 {
    x.to_bits()
}

/// One-dimensional sweeps over `grid_pi` (λ_V held at the base value) and
/// `grid_v` (λ_π held at the base value), plus the two homogeneous cells
/// `λ_π = λ_V = base λ_π` and `λ_π = λ_V = base λ_V`. Cells shared between
/// sweeps are trained once.
pub fn run_lambda_sweep(
    base: &DnaConfig,
    grid_pi: &[f64],
    grid_v: &[f64],
    seeds: &[u64],
) -> Result<Vec<LambdaSweepRow>> {
    if grid_pi.is_empty() || grid_v.is_empty() || seeds.is_empty() {
        return Err(Error::config("grid", "lambda grids and seed list must be non-empty"));
    }
    let mut cells: Vec<(&str, f64, f64)> = Vec::new();
    cells.extend(grid_pi.iter().map(|&l| ("lambda_pi", l, base.lambda_v)));
    cells.extend(grid_v.iter().map(|&l| ("lambda_v", base.lambda_pi, l)));
    cells.push(("homogeneous", base.lambda_pi, base.lambda_pi));
    cells.push(("homogeneous", base.lambda_v, base.lambda_v));
    cells.push(("homogeneous", base.lambda_pi, base.lambda_v));

    let mut cache: BTreeMap<(u64, u64, u64), RunSummary> = BTreeMap::new();
    let mut rows = Vec::new();
    for (sweep, lp, lv) in cells {
        for &seed in seeds {
            let k = (key(lp), key(lv), seed);
            let summary = match cache.get(&k) {
                Some(s) => *s,
                None => {
                    let cfg = DnaConfig {
                        lambda_pi: lp,
                        lambda_v: lv,
                        seed,
                        ..base.clone()
                    };
                    cfg.validate()?;
                    let s = run_config(&cfg, &mut NullSink)?;
                    log::info!("lambda_pi={lp} lambda_v={lv} seed={seed}: score {:.2}", s.score);
                    cache.insert(k, s);
                    s
                }
            };
            rows.push(LambdaSweepRow {
                sweep: sweep.to_string(),
                lambda_pi: lp,
                lambda_v: lv,
                seed,
                score: summary.score,
                interactions: summary.interactions,
                sigma_pi: summary.sigma_pi,
                sigma_v: summary.sigma_v,
                sigma_distil: summary.sigma_distil,
            });
        }
    }
    Ok(rows)
}

fn finite_mean(xs: impl Iterator<Item = f64>) -> f64 {
    mean(&xs.filter(|x| x.is_finite()).collect::<Vec<_>>())
}

/// Seed-averaged noise scales along each one-dimensional sweep and their
/// Spearman correlation with λ.
pub fn lambda_trend(rows: &[LambdaSweepRow]) -> LambdaTrend {
    let curve = |sweep: &str, lam: fn(&LambdaSweepRow) -> f64, sig: fn(&LambdaSweepRow) -> f64| {
        let mut grid: Vec<f64> = rows.iter().filter(|r| r.sweep == sweep).map(lam).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid.into_iter()
            .map(|l| {
                let m = finite_mean(rows.iter().filter(|r| r.sweep == sweep && lam(r) == l).map(sig));
                (l, m)
            })
            .collect::<Vec<_>>()
    };
    let pi = curve("lambda_pi", |r| r.lambda_pi, |r| r.sigma_pi);
    let v = curve("lambda_v", |r| r.lambda_v, |r| r.sigma_v);
    let rho = |c: &[(f64, f64)]| {
        let c: Vec<_> = c.iter().filter(|(_, s)| s.is_finite()).copied().collect();
        let (x, y): (Vec<f64>, Vec<f64>) = c.into_iter().unzip();
        if x.len() < 2 {
            f64::NAN
        } else {
            spearman(&x, &y)
        }
    };
    LambdaTrend {
        spearman_pi: rho(&pi),
        spearman_v: rho(&v),
        sigma_pi_by_lambda_pi: pi,
        sigma_v_by_lambda_v: v,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSweepRow {
    /// `e_pi`, `e_v` or `e_d`.
    pub param: String,
    pub value: usize,
    pub seed: u64,
    pub e_pi: usize,
    pub e_v: usize,
    pub e_d: usize,
    pub score: f64,
    pub interactions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochGrids {
    pub e_pi: Vec<usize>,
    pub e_v: Vec<usize>,
    pub e_d: Vec<usize>,
    /// Value held by the two parameters not being swept.
    pub hold: usize,
}

impl Default for EpochGrids {
    fn default() -> Self {
        Self {
            e_pi: vec![1, 2, 3, 4],
            e_v: vec![1, 2, 3, 4],
            e_d: vec![0, 1, 2, 3],
            hold: 2,
        }
    }
}

/// One-at-a-time sweep: each parameter walks its grid while the other two
/// stay at `grids.hold`.
pub fn run_epoch_sweep(base: &DnaConfig, grids: &EpochGrids, seeds: &[u64]) -> Result<Vec<EpochSweepRow>> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "seed list must be non-empty"));
    }
    let h = grids.hold;
    let mut cells: Vec<(&str, usize, [usize; 3])> = Vec::new();
    cells.extend(grids.e_pi.iter().map(|&e| ("e_pi", e, [e, h, h])));
    cells.extend(grids.e_v.iter().map(|&e| ("e_v", e, [h, e, h])));
    cells.extend(grids.e_d.iter().map(|&e| ("e_d", e, [h, h, e])));
    let mut cache: BTreeMap<([usize; 3], u64), RunSummary> = BTreeMap::new();
    let mut rows = Vec::new();
    for (param, value, epochs) in cells {
        for &seed in seeds {
            let summary = match cache.get(&(epochs, seed)) {
                Some(s) => *s,
                None => {
                    let cfg = DnaConfig {
                        e_pi: epochs[0],
                        e_v: epochs[1],
                        e_d: epochs[2],
                        seed,
                        ..base.clone()
                    };
                    cfg.validate()?;
                    let s = run_config(&cfg, &mut NullSink)?;
                    log::info!("epochs={epochs:?} seed={seed}: score {:.2}", s.score);
                    cache.insert((epochs, seed), s);
                    s
                }
            };
            rows.push(EpochSweepRow {
                param: param.to_string(),
                value,
                seed,
                e_pi: epochs[0],
                e_v: epochs[1],
                e_d: epochs[2],
                score: summary.score,
                interactions: summary.interactions,
            });
        }
    }
    Ok(rows)
}
