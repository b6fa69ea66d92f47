//! Simple gradient noise scale `B = tr(Σ)/|G|²` from paired small/large batch
//! gradient estimates, smoothed with exponential moving averages.
//!
//! The per-probe statistics `|G|²` and `S` are individually unbiased; the
//! ratio of their moving averages is not, and is reported as-is.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Draw `g_big` over `b_big` samples out of `available`, and `g_small` over a
/// uniformly chosen `b_small` subset of those same samples.
///
/// `mean_grad` must return the mean per-sample gradient over the given
/// sample indices.
pub fn paired_gradient_probe<F, R>(
    mut mean_grad: F,
    available: usize,
    b_small: usize,
    b_big: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
    R: Rng + ?Sized,
{
    if b_small == 0 || b_small > b_big {
        return Err(Error::Precondition(format!(
            "probe sizes b_small={b_small}, b_big={b_big}"
        )));
    }
    if available < b_big {
        return Err(Error::Precondition(format!(
            "noise probe needs {b_big} samples, only {available} available"
        )));
    }
    let big: Vec<usize> = if available == b_big {
        (0..available).collect()
    } else {
        index::sample(rng, available, b_big).into_vec()
    };
    let small: Vec<usize> = index::sample(rng, b_big, b_small)
        .into_iter()
        .map(|i| big[i])
        .collect();
    let g_big = mean_grad(&big)?;
    let g_small = mean_grad(&small)?;
    Ok((g_small, g_big))
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Unbiased estimates of `|G|²` and `tr(Σ)` from one paired probe.
pub fn estimate_g2_s(g_small: &[f64], g_big: &[f64], b_small: usize, b_big: usize) -> Result<(f64, f64)> {
    if g_small.len() != g_big.len() {
        return Err(Error::Dimension {
            expected: g_big.len(),
            got: g_small.len(),
            context: "probe gradients",
        });
    }
    if b_small == b_big {
        return Err(Error::Precondition(
            "b_small == b_big makes the noise estimate undefined".into(),
        ));
    }
    let (bs, bb) = (b_small as f64, b_big as f64);
    let (ns, nb) = (sq_norm(g_small), sq_norm(g_big));
    let g2 = (bb * nb - bs * ns) / (bb - bs);
    let s = (ns - nb) / (1.0 / bs - 1.0 / bb);
    Ok((g2, s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseReading {
    pub g2_hat: f64,
    pub s_hat: f64,
    pub ema_g2: f64,
    pub ema_s: f64,
    /// `None` while the smoothed `|G|²` is not positive.
    pub b_simple: Option<f64>,
    pub sigma: Option<f64>,
}

/// Smoothed noise-scale tracker for one objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseScaleProbe {
    pub b_small: usize,
    pub b_big: usize,
    pub ema_decay: f64,
    pub ema_g2: f64,
    pub ema_s: f64,
    pub initialized: bool,
    pub last: Option<NoiseReading>,
}

impl NoiseScaleProbe {
    pub fn new(b_small: usize, b_big: usize, ema_decay: f64) -> Result<Self> {
        if b_small == 0 || b_small >= b_big {
            return Err(Error::config(
                "noise.b_small",
                format!("need 0 < b_small < b_big, got {b_small} and {b_big}"),
            ));
        }
        if !(ema_decay > 0.0 && ema_decay < 1.0) {
            return Err(Error::config("noise.ema_decay", "must lie in (0, 1)"));
        }
        if b_big < 10 * b_small {
            log::warn!("noise probe b_big={b_big} is less than 10x b_small={b_small}; estimates will be imprecise");
        }
        Ok(Self {
            b_small,
            b_big,
            ema_decay,
            ema_g2: 0.0,
            ema_s: 0.0,
            initialized: false,
            last: None,
        })
    }

    /// Fold one probe's statistics into the moving averages and read the
    /// current noise scale.
    pub fn update_and_read(&mut self, g2_hat: f64, s_hat: f64) -> NoiseReading {
        if !self.initialized {
            self.ema_g2 = g2_hat;
            self.ema_s = s_hat;
            self.initialized = true;
        } else {
            let d = self.ema_decay;
            self.ema_g2 = d * self.ema_g2 + (1.0 - d) * g2_hat;
            self.ema_s = d * self.ema_s + (1.0 - d) * s_hat;
        }
        let b_simple = if self.ema_g2 > 0.0 && self.ema_s.is_finite() {
            Some(self.ema_s / self.ema_g2)
        } else {
            None
        };
        let reading = NoiseReading {
            g2_hat,
            s_hat,
            ema_g2: self.ema_g2,
            ema_s: self.ema_s,
            b_simple,
            sigma: b_simple.map(|b| b.max(0.0).sqrt()),
        };
        self.last = Some(reading);
        reading
    }

    /// Probe a gradient function and update the averages in one go.
    pub fn probe<F, R>(&mut self, mean_grad: F, available: usize, rng: &mut R) -> Result<NoiseReading>
    where
        F: FnMut(&[usize]) -> Result<Vec<f64>>,
        R: Rng + ?Sized,
    {
        let b_big = self.b_big.min(available);
        if b_big <= self.b_small {
            return Err(Error::Precondition(format!(
                "noise probe needs more than {} samples, only {available} available",
                self.b_small
            )));
        }
        let (gs, gb) = paired_gradient_probe(mean_grad, available, self.b_small, b_big, rng)?;
        let (g2, s) = estimate_g2_s(&gs, &gb, self.b_small, b_big)?;
        Ok(self.update_and_read(g2, s))
    }
}
