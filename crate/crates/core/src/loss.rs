//! Training objectives evaluated as metrics: MSE, MAE, the gradient loss and
//! their weighted blend.
//!
//! The functions score states exactly as given; [`LossReport::compute`]
//! normalizes first when channel statistics are supplied.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ensure_same_shape, gradient, normalize, Axis, ChannelStats, FlowState};

pub const DEFAULT_LAMBDA: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    /// Spacing that scales the gradient term; `None` uses the prediction grid's `dx`.
    pub delta: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            delta: None,
        }
    }
}

impl LossConfig {
    pub fn new(lambda: f64, delta: Option<f64>) -> Result<Self> {
        let cfg = Self { lambda, delta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if let Some(d) = self.delta {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::InvalidArgument(format!("delta {d} must be positive")));
            }
        }
        Ok(())
    }
}

fn check_batch(pred: &[FlowState], truth: &[FlowState]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::EmptyInput("empty loss batch"));
    }
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    for (p, t) in pred.iter().zip(truth) {
        ensure_same_shape(p.grid(), t.grid())?;
    }
    Ok(())
}

/// Mean of `f(pred - truth)` over voxels, channels and samples.
fn pointwise_mean(pred: &[FlowState], truth: &[FlowState], f: fn(f64) -> f64) -> Result<f64> {
    check_batch(pred, truth)?;
    let (sum, count) = pred
        .par_iter()
        .zip(truth)
        .map(|(p, t)| {
            let mut s = 0.0;
            let mut n = 0usize;
            for (a, b) in p.channels().iter().zip(t.channels()) {
                s += a.values().iter().zip(b.values()).map(|(x, y)| f(x - y)).sum::<f64>();
                n += a.values().len();
            }
            (s, n)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0usize), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    Ok(sum / count as f64)
}

pub fn mse_loss(pred: &[FlowState], truth: &[FlowState]) -> Result<f64> {
    pointwise_mean(pred, truth, |e| e * e)
}

pub fn mae_loss(pred: &[FlowState], truth: &[FlowState]) -> Result<f64> {
    pointwise_mean(pred, truth, f64::abs)
}

/// `delta^2` times the mean squared difference of the three derivatives of
/// every channel, averaged over voxels, directions, channels and samples.
pub fn grad_loss(pred: &[FlowState], truth: &[FlowState], cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    check_batch(pred, truth)?;
    let delta = cfg.delta.unwrap_or(pred[0].grid().dx);
    let parts = pred
        .par_iter()
        .zip(truth)
        .map(|(p, t)| {
            let mut s = 0.0;
            let mut n = 0usize;
            for (a, b) in p.channels().iter().zip(t.channels()) {
                for axis in Axis::ALL {
                    let ga = gradient(a, axis)?;
                    let gb = gradient(b, axis)?;
                    s += ga
                        .values()
                        .iter()
                        .zip(gb.values())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>();
                    n += ga.values().len();
                }
            }
            Ok((s, n))
        })
        .collect::<Result<Vec<_>>>()?;
    let (sum, count) = parts
        .into_iter()
        .fold((0.0, 0usize), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    Ok(delta * delta * sum / count as f64)
}

/// `(1 - lambda) * mse + lambda * grad`.
pub fn phys_loss(pred: &[FlowState], truth: &[FlowState], cfg: &LossConfig) -> Result<f64> {
    let mse = mse_loss(pred, truth)?;
    let grad = grad_loss(pred, truth, cfg)?;
    Ok(blend(mse, grad, cfg.lambda))
}

pub fn blend(mse: f64, grad: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * mse + lambda * grad
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mse: f64,
    pub mae: f64,
    pub grad: f64,
    pub phys: f64,
    pub lambda: f64,
}

impl LossReport {
    /// All losses of a batch; with `stats` both sides are normalized first.
    pub fn compute(
        pred: &[FlowState],
        truth: &[FlowState],
        cfg: &LossConfig,
        stats: Option<&ChannelStats>,
    ) -> Result<Self> {
        let owned;
        let (p, t) = match stats {
            Some(s) => {
                let norm = |v: &[FlowState]| v.iter().map(|x| normalize(x, s)).collect::<Result<Vec<_>>>();
                owned = (norm(pred)?, norm(truth)?);
                (&owned.0[..], &owned.1[..])
            }
            None => (pred, truth),
        };
        let mse = mse_loss(p, t)?;
        let grad = grad_loss(p, t, cfg)?;
        Ok(Self {
            mse,
            mae: mae_loss(p, t)?,
            grad,
            phys: blend(mse, grad, cfg.lambda),
            lambda: cfg.lambda,
        })
    }
}
