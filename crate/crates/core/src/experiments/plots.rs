//! Plot-ready CSV tables derived from metric streams and sweep results.
//! Images are left to downstream tools.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::interference::write_csv;
use super::stats::{ema_smooth, mean, standard_error};
use super::sweeps::{EpochSweepRow, LambdaSweepRow};
use crate::error::{Error, Result};
use crate::trainer::MetricRecord;

pub const TRAINING_CURVES: &str = "training_curves.csv";
pub const NOISE_CURVES: &str = "noise_curves.csv";
pub const SWEEP_BARS: &str = "sweep_bars.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub smoothed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBar {
    pub sweep: String,
    pub setting: String,
    pub mean_score: f64,
    pub se_score: f64,
    pub seeds: usize,
}

/// Group by metric (first-appearance order), smooth each series with an
/// EMA of the given decay, and stamp the seed.
pub fn curve_points(records: &[MetricRecord], seed: u64, decay: f64) -> Result<Vec<CurvePoint>> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::config("decay", "must lie in [0, 1)"));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut series: BTreeMap<&str, Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        let entry = series.entry(r.metric.as_str()).or_default();
        if entry.is_empty() {
            order.push(r.metric.as_str());
        }
        entry.push(r);
    }
    let mut out = Vec::with_capacity(records.len());
    for metric in order {
        let recs = &series[metric];
        let values: Vec<f64> = recs.iter().map(|r| r.value).collect();
        for (r, s) in recs.iter().zip(ema_smooth(&values, decay)) {
            out.push(CurvePoint {
                step: r.interactions,
                metric: metric.to_string(),
                value: r.value,
                seed,
                smoothed: s,
            });
        }
    }
    Ok(out)
}

/// Writes `training_curves.csv` and `noise_curves.csv` (metrics whose name
/// starts with `noise_`). Returns the written paths.
pub fn emit_plot_data(records: &[MetricRecord], seed: u64, decay: f64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let points = curve_points(records, seed, decay)?;
    let (noise, training): (Vec<CurvePoint>, Vec<CurvePoint>) =
        points.into_iter().partition(|p| p.metric.starts_with("noise_"));
    std::fs::create_dir_all(out_dir)?;
    let paths = vec![out_dir.join(TRAINING_CURVES), out_dir.join(NOISE_CURVES)];
    write_csv(&paths[0], &training)?;
    write_csv(&paths[1], &noise)?;
    Ok(paths)
}

fn bars(cells: impl Iterator<Item = (String, String, f64)>) -> Vec<SweepBar> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut scores: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for (sweep, setting, score) in cells {
        let k = (sweep, setting);
        if !scores.contains_key(&k) {
            order.push(k.clone());
        }
        scores.entry(k).or_default().push(score);
    }
    order
        .into_iter()
        .map(|k| {
            let s = &scores[&k];
            SweepBar {
                sweep: k.0,
                setting: k.1,
                mean_score: mean(s),
                se_score: standard_error(s),
                seeds: s.len(),
            }
        })
        .collect()
}

pub fn lambda_bars(rows: &[LambdaSweepRow]) -> Vec<SweepBar> {
    bars(rows.iter().map(|r| {
        (
            r.sweep.clone(),
            format!("lambda_pi={} lambda_v={}", r.lambda_pi, r.lambda_v),
            r.score,
        )
    }))
}

pub fn epoch_bars(rows: &[EpochSweepRow]) -> Vec<SweepBar> {
    bars(rows.iter().map(|r| (r.param.clone(), r.value.to_string(), r.score)))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs() -> Vec<MetricRecord> {
        let mut v = Vec::new();
        for i in 1..=4 {
            for (m, x) in [("episode_return", i as f64), ("noise_policy_sigma", 10.0 - i as f64)] {
                v.push(MetricRecord {
                    iteration: i,
                    interactions: 100 * i as u64,
                    metric: m.into(),
                    value: x,
                });
            }
        }
        v
    }

    #[test]
    fn zero_decay_keeps_values() {
        let pts = curve_points(&recs(), 7, 0.0).unwrap();
        assert!(pts.iter().all(|p| p.smoothed == p.value && p.seed == 7));
        assert_eq!(pts[0].metric, "episode_return");
        assert_eq!(pts[0].step, 100);
    }

    #[test]
    fn emission_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_plot_data(&recs(), 1, 0.9, dir.path()).unwrap();
        let first: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
        emit_plot_data(&recs(), 1, 0.9, dir.path()).unwrap();
        let second: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
        let header = String::from_utf8(first[0].clone()).unwrap();
        assert!(header.starts_with("step,metric,value,seed,smoothed\n"));
        assert!(String::from_utf8(first[1].clone()).unwrap().contains("noise_policy_sigma"));
    }
}
